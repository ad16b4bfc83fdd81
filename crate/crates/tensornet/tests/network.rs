use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectraforge_tensornet::network::{mirrored_skips, Activation, SkipLink};
use spectraforge_tensornet::*;

fn random_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

#[test]
fn tiny_config_output_shape_and_range() {
    let cfg = NetworkConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = build_network(&cfg, &mut rng).unwrap();
    let out = net.predict(random_input(&mut rng, &[2, 8, 64, 64])).unwrap();
    assert_eq!(out.shape(), &[2, 32, 16, 16]);
    assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn forward_is_deterministic() {
    let cfg = NetworkConfig::tiny();
    let a = build_network(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = build_network(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
    let x = random_input(&mut ChaCha8Rng::seed_from_u64(10), &[3, 8, 64, 64]);
    let ya = a.predict(x.clone()).unwrap();
    let yb = b.predict(x).unwrap();
    assert!(ya.data().iter().zip(yb.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn batch_items_are_independent() {
    let cfg = NetworkConfig::tiny();
    let net = build_network(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let x = random_input(&mut ChaCha8Rng::seed_from_u64(3), &[2, 8, 64, 64]);
    let both = net.predict(x.clone()).unwrap();
    let second = Tensor::new(vec![1, 8, 64, 64], x.data()[8 * 4096..].to_vec()).unwrap();
    let alone = net.predict(second).unwrap();
    assert_eq!(&both.data()[32 * 256..], alone.data());
}

#[test]
fn full_config_maps_1024_input_to_286_by_299() {
    let cfg = NetworkConfig::full();
    cfg.validate().unwrap();
    let net = build_network(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let x = Tensor::filled(&[1, 8, 1024, 1024], 0.5);
    let out = net.predict(x).unwrap();
    assert_eq!(out.shape(), &[1, 299, 286, 286]);
    assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn wrong_input_shape_is_rejected() {
    let net = build_network(&NetworkConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(matches!(net.predict(Tensor::zeros(&[1, 8, 32, 32])), Err(TensorError::Shape(_))));
}

#[test]
fn invalid_configs_are_rejected() {
    let base = NetworkConfig::tiny();
    let cases: Vec<Box<dyn Fn(&mut NetworkConfig)>> = vec![
        Box::new(|c| {
            c.decoder_levels = 4;
            c.decoder_channels = vec![128, 96, 64, 48, 32];
            c.skip_map = mirrored_skips(4);
        }),
        Box::new(|c| c.decoder_channels = vec![128, 64, 31]),
        Box::new(|c| c.decoder_channels = vec![128, 48, 32]),
        Box::new(|c| c.encoder_channels[0] = 3),
        Box::new(|c| c.skip_map.push(SkipLink { encoder: 0, decoder: 0 })),
        Box::new(|c| c.skip_map = vec![SkipLink { encoder: 9, decoder: 0 }]),
        Box::new(|c| c.input = [8, 8, 8]),
        Box::new(|c| c.output_activation = Activation::LeakyRelu),
    ];
    for (i, mutate) in cases.iter().enumerate() {
        let mut cfg = base.clone();
        mutate(&mut cfg);
        assert!(matches!(cfg.validate(), Err(TensorError::Config(_))), "case {i}");
        assert!(build_network(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}

#[test]
fn from_params_checks_shapes() {
    let cfg = NetworkConfig::tiny();
    let net = build_network(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut params = net.params().to_vec();
    assert_eq!(Network::from_params(&cfg, params.clone()).unwrap(), net);
    params[3] = Tensor::zeros(&[5]);
    assert!(Network::from_params(&cfg, params).is_err());
}

#[test]
fn he_uniform_bounds() {
    let cfg = NetworkConfig::tiny();
    let net = build_network(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for (p, (name, shape)) in net.params().iter().zip(cfg.param_shapes()) {
        if shape.len() == 1 {
            assert!(p.data().iter().all(|&v| v == 0.0), "{name}");
        } else {
            let bound = (6.0 / (shape[1] * shape[2] * shape[3]) as f32).sqrt();
            assert!(p.data().iter().all(|v| v.abs() <= bound), "{name}");
        }
    }
}

#[test]
fn config_round_trips_through_json() {
    let cfg = NetworkConfig::full();
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<NetworkConfig>(&text).unwrap(), cfg);
}

fn arb_config() -> impl Strategy<Value = NetworkConfig> {
    (2usize..=4, 1usize..=3, 1usize..=3, 1usize..=6, 1usize..=9, 1usize..=4).prop_flat_map(|(e, d, in_c, out_h, bands, width)| {
        let d = d.min(e - 1);
        (Just((e, d, in_c, out_h, bands, width)), prop::collection::vec(1usize..=5, e), prop::collection::vec(any::<bool>(), d))
    })
    .prop_map(|((e, d, in_c, out_h, bands, width), enc, keep)| {
        let mut encoder_channels = vec![in_c];
        encoder_channels.extend(enc);
        let bottleneck = encoder_channels[e];
        // Geometric path from the bottleneck to the band count.
        let decoder_channels: Vec<usize> = (0..=d)
            .map(|i| {
                let t = i as f64 / d as f64;
                ((bottleneck as f64).powf(1.0 - t) * (bands as f64).powf(t)).round() as usize
            })
            .collect();
        let skip_map = mirrored_skips(d).into_iter().zip(keep).filter(|(_, k)| *k).map(|(s, _)| s).collect();
        NetworkConfig {
            input: [(1 << e) * width, (1 << e) * width + 3, in_c],
            output: [out_h, out_h + 1, bands],
            encoder_levels: e,
            encoder_channels,
            decoder_levels: d,
            decoder_channels,
            skip_map,
            activation: Activation::LeakyRelu,
            output_activation: Activation::Sigmoid,
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn output_shape_follows_config(cfg in arb_config()) {
        prop_assume!(cfg.validate().is_ok());
        let net = build_network(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = Tensor::filled(&[2, cfg.input[2], cfg.input[0], cfg.input[1]], 0.3);
        let out = net.predict(x).unwrap();
        prop_assert_eq!(out.shape(), &[2, cfg.output[2], cfg.output[0], cfg.output[1]]);
    }
}
