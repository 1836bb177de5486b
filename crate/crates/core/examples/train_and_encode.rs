//! Trains a small entropy model on synthetic clouds, saves and reloads it,
//! and compares learned and baseline rates on a held-out cloud.

use pcac::entropy::{init_output_bias, Params, TrainConfig, Trainer};
use pcac::pipeline::{decode, encode, training_batches, Backend, CodecConfig, DecodeInputs, ModelSettings};
use pcac::synth::{Pattern, Shape, Synthetic};
use pcac::AttributeMode;

fn main() -> pcac::Result<()> {
    // A reduced network so the example finishes in seconds on one core.
    let config = CodecConfig {
        model: ModelSettings { layers: 1, heads: 3, ff_multiplier: 2, head_hidden: 32 },
        ..CodecConfig::default()
    };
    let model = config.model_config(AttributeMode::Rgb);

    let mut data = Vec::new();
    for (i, shape) in [Shape::Sphere, Shape::Terrain, Shape::Solid, Shape::Scatter].into_iter().enumerate() {
        let c = Synthetic::new(shape, Pattern::Textured, AttributeMode::Rgb, 4000, i as u64).generate()?;
        data.extend(training_batches(&c, &config, &model)?);
    }
    println!("{} training batches, model dimension {}", data.len(), model.dim());

    let mut params = Params::<f32>::init(&model, 0)?;
    init_output_bias(&mut params, &data);
    println!("{} parameters", params.parameter_count());
    let mut trainer = Trainer::new(params, TrainConfig { epochs: 4, ..config.train.clone() })?;
    for (epoch, loss) in trainer.train(&data)?.iter().enumerate() {
        println!("epoch {epoch}: loss {loss:.4}");
    }

    let dir = std::env::temp_dir().join("pcac-example-model");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.bin");
    trainer.params.save(&path)?;
    let params = Params::<f32>::load(&path)?;
    println!("model hash {:016x}", params.model_hash()?);

    let held = Synthetic::new(Shape::Sphere, Pattern::Textured, AttributeMode::Rgb, 4000, 99).generate()?;
    let learned = encode(&held, &config, Backend::Learned(&params))?;
    let baseline = encode(&held, &config, Backend::Baseline)?;
    let decoded = decode(&learned.bytes, DecodeInputs { geometry: None, model: Some(&params) })?;
    assert_eq!(decoded.cloud, held);
    println!("held-out bpp: learned {:.3}, baseline {:.3}", learned.report.bpp, baseline.report.bpp);
    Ok(())
}
