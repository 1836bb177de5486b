use pcac::entropy::Params;
use pcac::pipeline::{decode, encode, Backend, CodecConfig, DecodeInputs};
use pcac::{AttributeConfig, AttributeMode, PointCloud};
use proptest::prelude::*;

fn small() -> CodecConfig {
    CodecConfig::from_toml(
        "[partition]\nbatch_size = 32\nbatches_per_block = 2\n\
         [dald]\nlabel_dim = 2\nattr_dim = 1\nrel_dim = 1\n\
         [model]\nlayers = 1\nheads = 2\nff_multiplier = 2\nhead_hidden = 8\n",
    )
    .unwrap()
}

fn arb_cloud() -> impl Strategy<Value = PointCloud> {
    (1u8..9, any::<bool>(), 0usize..700).prop_flat_map(|(depth, rgb, n)| {
        let coord = 0u32..(1 << depth);
        let channels = if rgb { 3 } else { 1 };
        (
            prop::collection::vec([coord.clone(), coord.clone(), coord], n),
            prop::collection::vec(prop::collection::vec(any::<u8>(), n), channels),
            Just(depth),
        )
            .prop_map(|(pos, ch, depth)| {
                let attributes = if ch.len() == 3 { AttributeConfig::rgb() } else { AttributeConfig::single("reflectance") };
                PointCloud::new(pos.into_iter().map(|p| [p[0], p[1], p[2]]).collect(), attributes, ch, Some(depth)).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn every_cloud_roundtrips(cloud in arb_cloud(), embed in any::<bool>(), seed in 0u64..4) {
        let mut config = small();
        config.embed_geometry = embed;
        let params = Params::<f32>::init(&config.model_config(cloud.mode()), seed).unwrap();
        let geometry = (!embed).then_some(cloud.positions.as_slice());
        for (backend, model) in [(Backend::Baseline, None), (Backend::Learned(&params), Some(&params))] {
            let enc = encode(&cloud, &config, backend).unwrap();
            let dec = decode(&enc.bytes, DecodeInputs { geometry, model }).unwrap();
            prop_assert_eq!(&dec.cloud, &cloud);
            prop_assert_eq!(dec.digests, enc.digests);
            prop_assert_eq!(encode(&cloud, &config, backend).unwrap().bytes, enc.bytes);
        }
    }
}

#[test]
fn single_channel_name_survives() {
    let cloud = PointCloud::from_scalar(vec![[0, 0, 0], [1, 1, 1], [5, 2, 0]], "intensity", vec![1, 2, 250], None).unwrap();
    let enc = encode(&cloud, &small(), Backend::Baseline).unwrap();
    let dec = decode(&enc.bytes, DecodeInputs::default()).unwrap();
    assert_eq!(dec.cloud.attributes.names, vec!["intensity".to_string()]);
    assert_eq!(dec.cloud.mode(), AttributeMode::Single);
}
