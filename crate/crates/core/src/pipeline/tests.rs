use super::*;
use crate::dald::DaldConfig;
use crate::synth::{Pattern, Shape, Synthetic};

fn small_config() -> CodecConfig {
    let mut c = CodecConfig::preset(Preset::Desk);
    c.partition.batch_size = 64;
    c.partition.batches_per_block = 4;
    c.dald = DaldConfig { label_dim: 2, attr_dim: 1, rel_dim: 1, ..DaldConfig::desk() };
    c.model = ModelSettings { layers: 1, heads: 2, ff_multiplier: 2, head_hidden: 16 };
    c
}

fn cloud(shape: Shape, pattern: Pattern, mode: AttributeMode, n: usize, seed: u64) -> PointCloud {
    Synthetic::new(shape, pattern, mode, n, seed).generate().unwrap()
}

fn roundtrip(c: &PointCloud, config: &CodecConfig, backend: Backend) -> Encoded {
    let enc = encode(c, config, backend).unwrap();
    let model = match backend {
        Backend::Learned(p) => Some(p),
        Backend::Baseline => None,
    };
    let geometry = (!config.embed_geometry).then_some(c.positions.as_slice());
    let dec = decode(&enc.bytes, DecodeInputs { geometry, model }).unwrap();
    assert_eq!(&dec.cloud, c);
    assert_eq!(dec.digests, enc.digests);
    enc
}

#[test]
fn degenerate_clouds() {
    let config = small_config();
    let empty = PointCloud::empty(crate::io::AttributeConfig::rgb(), 10);
    roundtrip(&empty, &config, Backend::Baseline);
    let one = PointCloud::from_rgb(vec![[3, 4, 5]], &[[9, 200, 31]], Some(10)).unwrap();
    let enc = roundtrip(&one, &config, Backend::Baseline);
    assert_eq!(enc.report.base_bits, 48);
    assert_eq!(enc.report.inference_bits(), 0);
    let single = PointCloud::from_scalar(vec![[0, 0, 0]], "intensity", vec![77], None).unwrap();
    roundtrip(&single, &config, Backend::Baseline);
}

#[test]
fn baseline_roundtrips_and_rates() {
    let config = small_config();
    let constant = cloud(Shape::Solid, Pattern::Constant([10, 20, 30]), AttributeMode::Rgb, 10_000, 1);
    let enc = roundtrip(&constant, &config, Backend::Baseline);
    assert!(enc.report.bpp < 1.0, "{}", enc.report.bpp);
    assert_eq!(enc.report.overflow_bits, 0);

    let noise = cloud(Shape::Terrain, Pattern::Noise, AttributeMode::Single, 6000, 2);
    let enc = roundtrip(&noise, &config, Backend::Baseline);
    let residuals = prediction_residuals(&noise, &config.lod).unwrap();
    let h = crate::metrics::empirical_entropy(residuals[0].iter().copied()).unwrap();
    let n = noise.len() as f64;
    let coded = (enc.report.base_bits + enc.report.inference_bits()) as f64 / n;
    // Adaptive order-0 coding of i.i.d. symbols: at least the empirical
    // entropy, at most that plus the learning cost of 511 counts.
    assert!(enc.report.bpp > 7.9, "{}", enc.report.bpp);
    assert!(coded > h - 0.05 && coded < h + 0.5, "coded {coded}, entropy {h}");

    let noisy_rgb = cloud(Shape::Sphere, Pattern::Noise, AttributeMode::Rgb, 3000, 3);
    let enc = roundtrip(&noisy_rgb, &config, Backend::Baseline);
    assert!(enc.report.overflow_bits > 0);

    for (shape, pattern) in [(Shape::Sphere, Pattern::Gradient), (Shape::Scatter, Pattern::Quadrants([0.5, 0.5]))] {
        roundtrip(&cloud(shape, pattern, AttributeMode::Rgb, 2500, 4), &config, Backend::Baseline);
    }
}

#[test]
fn side_file_geometry() {
    let mut config = small_config();
    config.embed_geometry = false;
    let c = cloud(Shape::Terrain, Pattern::Gradient, AttributeMode::Rgb, 1500, 5);
    let enc = roundtrip(&c, &config, Backend::Baseline);
    assert_eq!(enc.report.geometry_bits, 0);
    assert!(matches!(decode(&enc.bytes, DecodeInputs::default()), Err(Error::InvalidInput(_))));
    let mut moved = c.positions.clone();
    moved[10][2] += 1;
    let err = decode(&enc.bytes, DecodeInputs { geometry: Some(&moved), model: None }).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn learned_roundtrip_and_guards() {
    let mut config = small_config();
    config.cdf_checksum = true;
    let c = cloud(Shape::Sphere, Pattern::Noise, AttributeMode::Rgb, 1200, 6);
    let params = Params::<f32>::init(&config.model_config(AttributeMode::Rgb), 3).unwrap();
    let enc = roundtrip(&c, &config, Backend::Learned(&params));
    assert!(enc.report.overflow_bits > 0);
    assert_eq!(encode(&c, &config, Backend::Learned(&params)).unwrap().bytes, enc.bytes);

    let other = Params::<f32>::init(&config.model_config(AttributeMode::Rgb), 4).unwrap();
    let wrong = decode(&enc.bytes, DecodeInputs { geometry: None, model: Some(&other) });
    assert!(matches!(wrong, Err(Error::ModelMismatch(_))));
    assert!(matches!(decode(&enc.bytes, DecodeInputs::default()), Err(Error::ModelMismatch(_))));

    let single = Params::<f32>::init(&config.model_config(AttributeMode::Single), 3).unwrap();
    assert!(matches!(encode(&c, &config, Backend::Learned(&single)), Err(Error::ModelMismatch(_))));

    let mut tampered = enc.bytes.clone();
    let at = tampered.len() - 10;
    tampered[at] ^= 0x40;
    let err = decode(&tampered, DecodeInputs { geometry: None, model: Some(&params) }).unwrap_err();
    assert!(matches!(err, Error::Checksum(_)), "{err}");
}

#[test]
fn learned_single_channel() {
    let config = small_config();
    let c = cloud(Shape::Scatter, Pattern::Textured, AttributeMode::Single, 1500, 7);
    let params = Params::<f32>::init(&config.model_config(AttributeMode::Single), 1).unwrap();
    roundtrip(&c, &config, Backend::Learned(&params));
}

#[test]
fn truncation_is_an_error() {
    let config = small_config();
    let c = cloud(Shape::Solid, Pattern::Gradient, AttributeMode::Rgb, 800, 8);
    let enc = encode(&c, &config, Backend::Baseline).unwrap();
    for cut in [3, 40, enc.bytes.len() / 2, enc.bytes.len() - 1] {
        assert!(decode(&enc.bytes[..cut], DecodeInputs::default()).is_err());
    }
}

#[test]
fn training_batches_mask_padding_and_overflow() {
    let config = small_config();
    let c = cloud(Shape::Sphere, Pattern::Noise, AttributeMode::Rgb, 1500, 9);
    let model = config.model_config(AttributeMode::Rgb);
    let batches = training_batches(&c, &config, &model).unwrap();
    let lod = lod::build(&c.positions, &config.lod).unwrap();
    let real: usize = batches.iter().map(|b| b.features.real).sum();
    assert_eq!(real, lod.inference_point_count());
    let mut masked_overflow = 0;
    for b in &batches {
        assert_eq!(b.features.rows, 64);
        for (c, m) in b.mask.iter().enumerate() {
            assert!(m[b.features.real..].iter().all(|&v| !v));
            assert!(b.targets[c].iter().all(|r| r.abs() <= 255));
            masked_overflow += m[..b.features.real].iter().filter(|&&v| !v).count();
        }
    }
    assert!(masked_overflow > 0);
}

#[test]
fn residual_entropy_helper() {
    let c = cloud(Shape::Terrain, Pattern::Constant([5, 5, 5]), AttributeMode::Rgb, 400, 1);
    let r = prediction_residuals(&c, &LodConfig::desk()).unwrap();
    assert_eq!(r.len(), 3);
    assert_eq!(r[0][0], i32::from(rgb_to_ycocgr(5, 5, 5).y));
    assert!(r.iter().all(|ch| ch[1..].iter().all(|&v| v == 0)));
}
