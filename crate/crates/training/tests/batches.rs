mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spectraforge_core::SpectralCube;
use spectraforge_training::*;

#[test]
fn constant_ground_truth_projects_to_a_constant_input() {
    let mut data = small_dataset(1).samples().to_vec();
    let grid = data[0].gt.wavelengths().to_vec();
    data[0].gt = SpectralCube::filled(8, 8, grid, 0.37).unwrap();
    let data = Dataset::new(data).unwrap();
    let mut cfg = small_config(Stage::Pretrain);
    cfg.augment.enabled = false;
    let builder = BatchBuilder::new(&data, &cfg).unwrap();
    let batch = builder.make_pretrain_batch(&[0], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let input = &batch.items[0].input;
    assert_eq!(input.dims(), (32, 32, 8));
    for &v in input.data() {
        assert!((v - 0.37).abs() < 1e-6, "{v}");
    }
}

#[test]
fn batches_hold_batch_size_items_and_repeat_per_seed() {
    let data = small_dataset(6);
    let cfg = small_config(Stage::Pretrain);
    let builder = BatchBuilder::new(&data, &cfg).unwrap();
    let make = || builder.make_pretrain_batch(&[0, 1, 2, 3, 4], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let (a, b) = (make(), make());
    assert_eq!(a.items.len(), 5);
    let (xa, ya, ma) = a.tensors().unwrap();
    let (xb, yb, mb) = b.tensors().unwrap();
    assert_eq!(xa.shape(), &[5, 8, 32, 32]);
    assert_eq!(ya.shape(), &[5, 12, 8, 8]);
    assert_eq!(ma.shape(), [5, 1, 8, 8]);
    assert!(xa.data().iter().zip(xb.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    assert_eq!(ya, yb);
    assert_eq!(ma, mb);
}

#[test]
fn default_main_batches_mix_three_projected_and_two_raw() {
    let data = small_dataset(7);
    let cfg = small_config(Stage::Main);
    let builder = BatchBuilder::new(&data, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut orders = std::collections::HashSet::new();
    for _ in 0..40 {
        let plan = epoch_batches(&[0, 1, 2, 3, 4, 5, 6], 5, &mut rng);
        for idx in plan {
            let b = builder.make_main_batch(&idx, &mut rng).unwrap();
            assert_eq!(b.count(Provenance::Projected), 3);
            assert_eq!(b.count(Provenance::Raw), 2);
            orders.insert(b.items.iter().map(|i| i.provenance == Provenance::Raw).collect::<Vec<_>>());
        }
    }
    assert!(orders.len() > 1, "item order never shuffled");
}

#[test]
fn all_projected_main_batch_matches_pretrain_composition() {
    let data = small_dataset(5);
    let mut cfg = small_config(Stage::Main);
    cfg.projected_per_batch = 5;
    cfg.raw_per_batch = 0;
    let builder = BatchBuilder::new(&data, &cfg).unwrap();
    let b = builder.make_main_batch(&[0, 1, 2, 3, 4], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(b.count(Provenance::Projected), 5);
}

#[test]
fn raw_items_keep_spots_unless_inpainting_is_enabled() {
    let data = small_dataset(1);
    let mut cfg = small_config(Stage::Main);
    cfg.augment.enabled = false;
    let builder = BatchBuilder::new(&data, &cfg).unwrap();
    let raw = builder.item(0, Provenance::Raw, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(raw.input, data.samples()[0].input);
    cfg.inpaint_raw = true;
    let builder = BatchBuilder::new(&data, &cfg).unwrap();
    let inpainted = builder.item(0, Provenance::Raw, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_ne!(inpainted.input, data.samples()[0].input);
}

#[test]
fn mismatched_sample_dimensions_are_rejected() {
    let data = small_dataset(2);
    let cfg = TrainConfig::tiny(Stage::Pretrain);
    assert!(matches!(BatchBuilder::new(&data, &cfg), Err(TrainError::Manifest(_))));
}

#[test]
fn invalid_mix_is_a_config_error() {
    let mut cfg = small_config(Stage::Main);
    cfg.raw_per_batch = 3;
    assert!(matches!(cfg.validate(), Err(TrainError::Config(_))));
    let mut cfg = small_config(Stage::Pretrain);
    cfg.projected_per_batch = 3;
    cfg.raw_per_batch = 2;
    assert!(cfg.validate().is_err());
}

#[test]
fn stage_defaults_carry_the_loss_schedule() {
    let p = TrainConfig::for_stage(Stage::Pretrain);
    let w = p.loss.weights;
    assert_eq!((w.w_mae, w.w_mse, w.w_dpix, w.w_dband, w.w_smoothl1), (1.0, 1.0, 4.0, 4.0, 0.0));
    assert_eq!((p.batch_size, p.projected_per_batch, p.raw_per_batch), (5, 5, 0));
    let m = TrainConfig::for_stage(Stage::Main);
    let w = m.loss.weights;
    assert_eq!((w.w_mae, w.w_mse, w.w_dpix, w.w_dband, w.w_smoothl1), (0.0, 0.0, 0.0, 0.0, 1.0));
    assert_eq!((m.batch_size, m.projected_per_batch, m.raw_per_batch), (5, 3, 2));
    let text = serde_json::to_string(&m).unwrap();
    assert_eq!(serde_json::from_str::<TrainConfig>(&text).unwrap(), m);
}

proptest! {
    #[test]
    fn epochs_cover_the_pool_with_full_batches(n in 1usize..40, b in 1usize..8, seed: u64) {
        let pool: Vec<usize> = (100..100 + n).collect();
        let plan = epoch_batches(&pool, b, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(plan.len(), n.div_ceil(b));
        prop_assert!(plan.iter().all(|batch| batch.len() == b));
        let mut seen: Vec<usize> = plan.concat();
        seen.sort();
        seen.dedup();
        prop_assert_eq!(seen, pool);
    }
}
