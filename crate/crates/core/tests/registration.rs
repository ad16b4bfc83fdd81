use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectraforge_core::hypercube::wavelength_grid;
use spectraforge_core::registration::{ncc_match, pair_samples, MatchBands};
use spectraforge_core::simulate::{gen_scene, make_pair, CaptureSpec, PairSpec, ProjectionKind, SceneSpec};
use spectraforge_core::spectral::default_leds;
use spectraforge_core::{Plane, SpectralCube, ValidityMask};

fn scene(size: usize, seed: u64) -> SpectralCube {
    let spec = SceneSpec {
        wavelengths: wavelength_grid(400.0, 1000.0, 61).unwrap(),
        ..SceneSpec::new(size, size, seed)
    };
    gen_scene(&spec).unwrap().cube
}

#[test]
fn planted_template_with_noise_is_found() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let normal = rand_distr::Normal::new(0.0f32, 0.02).unwrap();
    let reference = scene(96, 4);
    let band = reference.band_slice(reference.nearest_band(660.0)).unwrap();
    let (tw, th) = (28, 24);
    let mut exact = 0;
    for _ in 0..50 {
        let row = rng.random_range(2..=band.height - th - 2);
        let col = rng.random_range(2..=band.width - tw - 2);
        let data = (0..tw * th)
            .map(|i| band.get(col + i % tw, row + i / tw) + rand_distr::Distribution::sample(&normal, &mut rng))
            .collect();
        let t = Plane::new(tw, th, data).unwrap();
        let m = ncc_match(&band, &t, &ValidityMask::all_valid(tw, th, 1)).unwrap();
        if m.offset == (row, col) {
            exact += 1;
        }
    }
    assert!(exact >= 49, "{exact}/50");
}

#[test]
fn simulated_pairs_recover_planted_offsets() {
    let hi = scene(128, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut exact = 0;
    let trials = 20;
    for t in 0..trials {
        let offset = (rng.random_range(2..=30), rng.random_range(2..=30));
        let cap = CaptureSpec {
            noise_sigma: 0.02,
            seed: t,
            ..CaptureSpec::clean(default_leds())
        };
        let pair = make_pair(
            &hi,
            &cap,
            PairSpec {
                offset,
                factor: 2,
                width: 64,
                height: 64,
            },
        )
        .unwrap();
        let p = pair_samples(&pair.ours, None, &pair.reference, 2.0, MatchBands::default()).unwrap();
        assert_eq!((p.gt.width(), p.gt.height()), (32, 32));
        assert_eq!(p.result.scale, 2.0);
        if p.result.offset == pair.truth.offset {
            exact += 1;
        }
    }
    assert!(exact >= trials - 1, "{exact}/{trials}");
}

#[test]
fn clean_pair_at_origin_scores_one() {
    let hi = scene(32, 10);
    let cap = CaptureSpec {
        projection: ProjectionKind::Nearest,
        ..CaptureSpec::clean(default_leds())
    };
    let pair = make_pair(
        &hi,
        &cap,
        PairSpec {
            offset: (0, 0),
            factor: 1,
            width: 32,
            height: 32,
        },
    )
    .unwrap();
    let p = pair_samples(&pair.ours, None, &pair.reference, 1.0, MatchBands::default()).unwrap();
    assert_eq!(p.result.offset, (0, 0));
    assert!((p.result.score - 1.0).abs() < 1e-9);
    assert!(p.mismatch.data.iter().all(|&v| v == 0.0));
}

#[test]
fn multi_band_matching_agrees() {
    let hi = scene(96, 12);
    let cap = CaptureSpec {
        noise_sigma: 0.01,
        seed: 3,
        ..CaptureSpec::clean(default_leds())
    };
    let spec = PairSpec {
        offset: (7, 11),
        factor: 2,
        width: 48,
        height: 48,
    };
    let pair = make_pair(&hi, &cap, spec).unwrap();
    let p = pair_samples(&pair.ours, None, &pair.reference, 2.0, MatchBands::All).unwrap();
    assert_eq!(p.result.offset, (7, 11));
}
