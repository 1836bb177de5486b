//! Baseline encode and decode of a cloud, through PLY files on disk, with
//! the rate breakdown of the bitstream. Pass a PLY path to code your own
//! cloud instead of the synthetic one.

use pcac::io::{read_ply_file, save_ply};
use pcac::pipeline::{decode, encode, rate_report, Backend, CodecConfig, DecodeInputs};
use pcac::synth::{Pattern, Shape, Synthetic};
use pcac::AttributeMode;

fn main() -> pcac::Result<()> {
    let cloud = match std::env::args_os().nth(1) {
        Some(path) => read_ply_file(path, None)?,
        None => {
            let c = Synthetic::new(Shape::Terrain, Pattern::Textured, AttributeMode::Rgb, 30_000, 3).generate()?;
            // Round-trip through the PLY writer and reader as a file would.
            pcac::io::load_ply(&save_ply(&c), None)?
        }
    };

    let config = CodecConfig::default();
    let encoded = encode(&cloud, &config, Backend::Baseline)?;
    println!("{} points -> {} bytes", cloud.len(), encoded.bytes.len());
    println!("{}", encoded.report);

    let decoded = decode(&encoded.bytes, DecodeInputs::default())?;
    assert_eq!(decoded.cloud, cloud);
    assert_eq!(decoded.digests, encoded.digests);
    assert_eq!(rate_report(&encoded.bytes)?, encoded.report);
    println!("decoded losslessly");

    let mut side = config.clone();
    side.embed_geometry = false;
    let bare = encode(&cloud, &side, Backend::Baseline)?;
    let decoded = decode(&bare.bytes, DecodeInputs { geometry: Some(&cloud.positions), model: None })?;
    assert_eq!(decoded.cloud, cloud);
    println!("without embedded geometry: {} bytes", bare.bytes.len());
    Ok(())
}
