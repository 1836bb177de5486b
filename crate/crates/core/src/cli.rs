//! Command-line front end. [`run`] parses arguments, executes one
//! subcommand inside a sized thread pool and maps errors to exit codes:
//! 0 success, 1 usage or input error, 2 integrity or decode error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::entropy::{init_output_bias, Checkpoint, Params, Trainer};
use crate::error::{invalid, Error, Result};
use crate::io::{load_geometry, read_ply_file, write_ply_file};
use crate::metrics::{density_curve_csv, nn_density, sampled_density_curve, DEFAULT_KERNEL_RADIUS};
use crate::pipeline::{self, rate_report, Backend, CodecConfig, DecodeInputs};

/// Environment variable read when `--threads` is absent.
pub const THREADS_ENV: &str = "PCAC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "pcac", version, about = "Lossless point cloud attribute codec")]
struct Cli {
    /// Print machine-readable JSON on standard output.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads for batch-level parallelism; 0 uses every core.
    #[arg(long, global = true, env = THREADS_ENV, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compress the attributes of a PLY cloud.
    Encode(EncodeArgs),
    /// Restore a PLY cloud from a bitstream.
    Decode(DecodeArgs),
    /// Train an entropy model on a directory of PLY clouds.
    Train(TrainArgs),
    /// Measure neighborhood density and its curve under subsampling.
    Analyze(AnalyzeArgs),
    /// Print the rate breakdown of a bitstream.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct EncodeArgs {
    /// PLY cloud to compress.
    #[arg(long)]
    input: PathBuf,
    /// Bitstream to write.
    #[arg(long)]
    output: PathBuf,
    /// Trained model file.
    #[arg(long, conflicts_with = "baseline")]
    model: Option<PathBuf>,
    /// Code inference layers with adaptive order-0 models instead.
    #[arg(long)]
    baseline: bool,
    /// TOML codec configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Carry geometry inside the bitstream (the configured default).
    #[arg(long, conflicts_with = "no_embed_geometry")]
    embed_geometry: bool,
    /// Leave geometry out; decode then needs `--geometry`.
    #[arg(long)]
    no_embed_geometry: bool,
    /// Partitioning seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    /// Bitstream to decode.
    #[arg(long)]
    input: PathBuf,
    /// PLY cloud to write.
    #[arg(long)]
    output: PathBuf,
    /// PLY holding the cloud's positions, for bitstreams without geometry.
    #[arg(long)]
    geometry: Option<PathBuf>,
    /// The model the bitstream was coded with.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Directory of `.ply` training clouds.
    #[arg(long)]
    corpus: PathBuf,
    /// Where to write the trained model.
    #[arg(long)]
    out: PathBuf,
    /// TOML configuration for descriptor, model and training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Epoch count, overriding the configuration. 0 writes the initialized model.
    #[arg(long)]
    epochs: Option<usize>,
    /// Initialization and shuffling seed, overriding the configuration.
    #[arg(long, conflicts_with = "resume")]
    seed: Option<u64>,
    /// Write a checkpoint here after every epoch.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// PLY cloud to analyze.
    #[arg(long)]
    input: PathBuf,
    /// Sampling ratios of the density curve.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125])]
    ratios: Vec<f64>,
    /// Chebyshev radius of the neighbor kernel.
    #[arg(long, default_value_t = DEFAULT_KERNEL_RADIUS)]
    radius: u32,
    /// Subsampling seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the curve CSV here instead of standard output.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Bitstream to inspect.
    #[arg(long)]
    input: PathBuf,
}

/// Runs the tool on `args` (program name first), writing reports to
/// `out`, and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .try_init();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return 1;
        }
    };
    log::debug!("{} worker threads", pool.current_num_threads());
    let mut buffer = Vec::new();
    let result = pool.install(|| execute(&cli, &mut buffer));
    if let Err(e) = out.write_all(&buffer).and_then(|()| out.flush()) {
        eprintln!("error: writing output: {e}");
        return 1;
    }
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Encode(a) => encode(a, cli.json, out),
        Command::Decode(a) => decode(a, cli.json, out),
        Command::Train(a) => train(a, cli.json, out),
        Command::Analyze(a) => analyze(a, cli.json, out),
        Command::Report(a) => report(a, cli.json, out),
    }
}

fn load_config(path: Option<&Path>) -> Result<CodecConfig> {
    path.map_or_else(|| Ok(CodecConfig::default()), CodecConfig::load)
}

fn emit_json(out: &mut dyn Write, value: &serde_json::Value) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string_pretty(value).expect("JSON values serialize"))?;
    Ok(())
}

fn encode(a: &EncodeArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    let mut config = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        config.partition.seed = seed;
    }
    if a.embed_geometry {
        config.embed_geometry = true;
    }
    if a.no_embed_geometry {
        config.embed_geometry = false;
    }
    let model = match (&a.model, a.baseline) {
        (Some(path), _) => Some(Params::<f32>::load(path)?),
        (None, true) => None,
        (None, false) => return Err(invalid("no model given: pass --model <file> or --baseline")),
    };
    let cloud = read_ply_file(&a.input, None)?;
    log::info!(
        "encoding {} points from {} (partition seed {}, {})",
        cloud.len(),
        a.input.display(),
        config.partition.seed,
        if model.is_some() { "learned model" } else { "baseline" }
    );
    let backend = model.as_ref().map_or(Backend::Baseline, Backend::Learned);
    let enc = pipeline::encode(&cloud, &config, backend)?;
    std::fs::write(&a.output, &enc.bytes)?;
    if json {
        emit_json(out, &json!({ "output": a.output, "bytes": enc.bytes.len(), "report": enc.report, "digests": enc.digests }))
    } else {
        writeln!(out, "{}", enc.report)?;
        Ok(())
    }
}

fn decode(a: &DecodeArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    let bytes = std::fs::read(&a.input)?;
    let geometry = a.geometry.as_ref().map(|p| load_geometry(&std::fs::read(p)?)).transpose()?;
    let model = a.model.as_ref().map(|p| Params::<f32>::load(p)).transpose()?;
    let dec = pipeline::decode(
        &bytes,
        DecodeInputs {
            geometry: geometry.as_deref(),
            model: model.as_ref(),
        },
    )?;
    write_ply_file(&a.output, &dec.cloud)?;
    log::info!("decoded {} points to {}", dec.cloud.len(), a.output.display());
    if json {
        emit_json(out, &json!({ "output": a.output, "points": dec.cloud.len(), "digests": dec.digests }))
    } else {
        writeln!(out, "points   {}", dec.cloud.len())?;
        let d = dec.digests;
        writeln!(out, "digests  geometry {:08x} lod {:08x} partition {:08x}", d.geometry, d.lod, d.partition)?;
        Ok(())
    }
}

fn corpus_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply")));
    files.sort();
    if files.is_empty() {
        return Err(invalid(format!("no .ply files in {}", dir.display())));
    }
    Ok(files)
}

fn train(a: &TrainArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    let mut config = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        config.train.seed = seed;
    }
    let files = corpus_files(&a.corpus)?;
    let mut mode = None;
    let mut data = Vec::new();
    for f in &files {
        let cloud = read_ply_file(f, None)?;
        if *mode.get_or_insert(cloud.mode()) != cloud.mode() {
            return Err(invalid(format!("{} mixes attribute modes with earlier corpus files", f.display())));
        }
        let model = config.model_config(cloud.mode());
        data.extend(pipeline::training_batches(&cloud, &config, &model)?);
    }
    let model_config = config.model_config(mode.expect("corpus is non-empty"));
    log::info!("{} training batches from {} clouds", data.len(), files.len());
    let mut trainer = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::from_bytes(&std::fs::read(path)?)?;
            if ck.params.config != model_config {
                return Err(Error::ModelMismatch("checkpoint architecture differs from the configuration".into()));
            }
            log::info!("resuming at epoch {} (seed {})", ck.epoch, ck.config.seed);
            Trainer::from_checkpoint(ck)?
        }
        None => {
            log::info!("initializing model (seed {})", config.train.seed);
            let mut params = Params::<f32>::init(&model_config, config.train.seed)?;
            init_output_bias(&mut params, &data);
            Trainer::new(params, config.train.clone())?
        }
    };
    if let Some(e) = a.epochs {
        trainer.config.epochs = e;
    }
    if data.is_empty() && trainer.epoch < trainer.config.epochs {
        return Err(invalid("corpus has no inference points to train on"));
    }
    while trainer.epoch < trainer.config.epochs {
        trainer.run_epoch(&data)?;
        if let Some(path) = &a.checkpoint {
            std::fs::write(path, trainer.checkpoint().to_bytes()?)?;
        }
    }
    trainer.params.save(&a.out)?;
    let hash = trainer.params.model_hash()?;
    if json {
        emit_json(
            out,
            &json!({
                "model": a.out,
                "model_hash": format!("{hash:016x}"),
                "parameters": trainer.params.parameter_count(),
                "epochs": trainer.epoch,
                "seed": trainer.config.seed,
                "loss_history": trainer.history,
            }),
        )
    } else {
        for (e, l) in trainer.history.iter().enumerate() {
            writeln!(out, "epoch {:>3}  loss {l:.4} bits/point", e + 1)?;
        }
        writeln!(out, "model {} ({} parameters, hash {hash:016x})", a.out.display(), trainer.params.parameter_count())?;
        Ok(())
    }
}

fn analyze(a: &AnalyzeArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    let cloud = read_ply_file(&a.input, None)?;
    log::info!("density analysis of {} points (radius {}, seed {})", cloud.len(), a.radius, a.seed);
    let nn = nn_density(&cloud.positions, a.radius)?;
    let curve = sampled_density_curve(&cloud.positions, &a.ratios, a.radius, a.seed)?;
    let csv = density_curve_csv(&curve);
    if let Some(path) = &a.csv {
        std::fs::write(path, &csv)?;
    }
    if json {
        emit_json(out, &json!({ "points": cloud.len(), "radius": a.radius, "nn": nn, "curve": curve }))
    } else {
        writeln!(out, "nn {nn:.6}")?;
        if a.csv.is_none() {
            write!(out, "{csv}")?;
        }
        Ok(())
    }
}

fn report(a: &ReportArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    let r = rate_report(&std::fs::read(&a.input)?)?;
    if json {
        emit_json(out, &serde_json::to_value(&r).expect("reports serialize"))
    } else {
        writeln!(out, "{r}")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String) {
        let mut out = Vec::new();
        let code = run(std::iter::once("pcac").chain(args.iter().copied()), &mut out);
        (code, String::from_utf8(out).unwrap())
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_capture(&[]).0, 1);
        assert_eq!(run_capture(&["frobnicate"]).0, 1);
        assert_eq!(run_capture(&["encode", "--input", "a.ply"]).0, 1);
        assert_eq!(run_capture(&["encode", "--input", "a", "--output", "b", "--model", "m", "--baseline"]).0, 1);
        assert_eq!(run_capture(&["--help"]).0, 0);
    }

    #[test]
    fn missing_files_are_input_errors() {
        let (code, _) = run_capture(&["report", "--input", "/nonexistent/x.bin"]);
        assert_eq!(code, 1);
    }
}
