use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use spectraforge_core::augment::{augment_pair, AffineParams, AffineRanges};
use spectraforge_core::calibration::{
    dark_field_subtract, fit_distortion, flat_field_correct, undistort, CornerSet, DistortionModel, FlatFieldRef,
};
use spectraforge_core::hypercube::{
    export_plane_png, load_cube, load_mask_png, read_header, save_cube, save_mask_dir, save_mask_png,
};
use spectraforge_core::registration::{pair_samples, CropRect, MatchBands};
use spectraforge_core::simulate::{synth_sample, SynthConfig};
use spectraforge_core::spectral::{
    build_projection, build_projection_nearest, default_leds, load_led_table, project_cube, ClassStats,
};
use spectraforge_core::spotmask::{inpaint_spectral, spot_mask};
use spectraforge_training::{
    default_test_count, evaluate, evaluate_pair, load_checkpoint, save_final, train_stage, Dataset, DatasetManifest,
    EpochRecord, EvalReport, MetricMeans, RunOptions, SampleRecord, Stage, TrainConfig, TrainState,
};

use crate::error::{CliError, Result};
use crate::{
    AlignArgs, AugmentArgs, CalibrateArgs, EvalArgs, InfoArgs, MaskArgs, Preset, ProjectArgs, SynthArgs, TrainArgs,
};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

#[derive(Debug, Serialize)]
struct CalibrationReport {
    model: DistortionModel,
    rms: f64,
    identity_rms: f64,
    iterations: usize,
    valid_fraction: f64,
}

pub fn calibrate(a: CalibrateArgs) -> Result<()> {
    let mut raw = load_cube(&a.raw)?;
    let mut white = load_cube(&a.white)?;
    if let Some(d) = &a.dark {
        let dark = load_cube(d)?;
        raw = dark_field_subtract(&raw, &dark)?;
        white = dark_field_subtract(&white, &dark)?;
    }
    let mut corners = CornerSet::load(&a.corners)?;
    corners.pitch = a.pitch;
    let reference = FlatFieldRef {
        epsilon: a.epsilon,
        ..FlatFieldRef::new(white)
    };
    let (flat, flat_mask) = flat_field_correct(&raw, &reference)?;
    let fit = fit_distortion(&corners, flat.width(), flat.height())?;
    log::info!("distortion fit rms {:.4} px (distortion-free {:.4} px)", fit.rms, fit.identity_rms);
    let (out, mask) = undistort(&flat, &fit.model, &flat_mask)?;
    let spatial = mask.collapse();
    save_cube(&out, &a.out)?;
    save_mask_png(&spatial, 0, &a.mask_out)?;
    if let Some(r) = &a.report {
        write_json(
            r,
            &CalibrationReport {
                model: fit.model,
                rms: fit.rms,
                identity_rms: fit.identity_rms,
                iterations: fit.iterations,
                valid_fraction: spatial.valid_fraction(),
            },
        )?;
    }
    Ok(())
}

pub fn mask(a: MaskArgs) -> Result<()> {
    let cube = load_cube(&a.input)?;
    let m = spot_mask(&cube, a.spot_ratio)?;
    let inpainted = inpaint_spectral(&cube, &m)?;
    save_mask_dir(&m, &a.mask_out)?;
    save_cube(&inpainted, &a.inpaint_out)?;
    log::info!("{} of {} band pixels masked", m.bits().len() - m.count_valid(), m.bits().len());
    Ok(())
}

#[derive(Debug, Serialize)]
struct MismatchStats {
    mean: f64,
    max: f64,
    std: f64,
}

#[derive(Debug, Serialize)]
struct AlignReport {
    /// `[row, col]` of the downscaled input in reference pixels.
    offset: [usize; 2],
    score: f64,
    factor: f64,
    crop: CropRect,
    mismatch: MismatchStats,
}

pub fn align(a: AlignArgs) -> Result<()> {
    if !(a.factor.is_finite() && a.factor > 0.0) {
        return Err(CliError::Invalid(format!("--factor must be positive, got {}", a.factor)));
    }
    let ours = load_cube(&a.ours)?;
    let reference = load_cube(&a.reference)?;
    let bands = if a.multi_band {
        MatchBands::All
    } else {
        MatchBands::Nearest(a.match_nm)
    };
    let p = pair_samples(&ours, None, &reference, a.factor, bands)?;
    create_dir(&a.out_pair)?;
    save_cube(&p.input, a.out_pair.join("input.hsc"))?;
    save_cube(&p.gt, a.out_pair.join("gt.hsc"))?;
    export_plane_png(&p.mismatch, a.out_pair.join("mismatch.png"))?;
    let d = &p.mismatch.data;
    let n = d.len() as f64;
    let mean = d.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = d.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let report = AlignReport {
        offset: [p.result.offset.0, p.result.offset.1],
        score: p.result.score,
        factor: p.result.scale,
        crop: p.result.crop,
        mismatch: MismatchStats {
            mean,
            max: d.iter().fold(0.0f64, |m, &v| m.max(v as f64)),
            std: var.sqrt(),
        },
    };
    write_json(&a.report, &report)
}

pub fn project(a: ProjectArgs) -> Result<()> {
    let gt = load_cube(&a.gt)?;
    let leds = match &a.leds {
        Some(p) => load_led_table(p)?,
        None => default_leds(),
    };
    let p = if a.nearest {
        build_projection_nearest(&leds, gt.wavelengths())?
    } else {
        build_projection(&leds, gt.wavelengths())?
    };
    save_cube(&project_cube(&gt, &p)?, &a.out)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct AugmentEntry {
    index: usize,
    params: AffineParams,
    valid_fraction: f64,
}

#[derive(Debug, Serialize)]
struct AugmentIndex {
    seed: u64,
    warp_gt: bool,
    ranges: AffineRanges,
    items: Vec<AugmentEntry>,
}

pub fn augment(a: AugmentArgs) -> Result<()> {
    let input = load_cube(&a.input)?;
    let gt = load_cube(&a.gt)?;
    let ranges: AffineRanges = match &a.ranges {
        Some(p) => read_json(p)?,
        None => AffineRanges::default(),
    };
    create_dir(&a.out)?;
    let mut items = Vec::with_capacity(a.count);
    for k in 0..a.count {
        // one stream per item keeps items independent of `count`
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        rng.set_stream(k as u64);
        let pair = augment_pair(&input, None, &gt, None, &mut rng, &ranges, !a.no_warp_gt)?;
        save_cube(&pair.input, a.out.join(format!("aug_{k:04}_input.hsc")))?;
        save_cube(&pair.gt, a.out.join(format!("aug_{k:04}_gt.hsc")))?;
        save_mask_png(&pair.mask, 0, a.out.join(format!("aug_{k:04}_mask.png")))?;
        items.push(AugmentEntry {
            index: k,
            params: pair.params,
            valid_fraction: pair.mask.valid_fraction(),
        });
    }
    write_json(
        &a.out.join("augment.json"),
        &AugmentIndex {
            seed: a.seed,
            warp_gt: !a.no_warp_gt,
            ranges,
            items,
        },
    )
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let cfg: SynthConfig = match &a.spec {
        Some(p) => read_json(p)?,
        None => SynthConfig::tiny(),
    };
    cfg.validate()?;
    if a.count == 0 {
        return Err(CliError::Invalid("--count must be at least 1".into()));
    }
    let test_count = a.test_count.unwrap_or_else(|| default_test_count(a.count));
    create_dir(&a.out)?;
    let mut records = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let s = synth_sample(&cfg, a.seed.wrapping_add(i as u64))?;
        let id = format!("pair{i:04}");
        let (input, gt, seg) = (format!("{id}_input.hsc"), format!("{id}_gt.hsc"), format!("{id}_seg.png"));
        save_cube(&s.input, a.out.join(&input))?;
        save_cube(&s.gt, a.out.join(&gt))?;
        save_mask_png(&s.roots, 0, a.out.join(&seg))?;
        records.push(SampleRecord {
            id,
            input_path: input.into(),
            gt_path: gt.into(),
            seg_path: Some(seg.into()),
        });
    }
    let manifest = DatasetManifest::new(records, a.seed, test_count)?;
    manifest.save(a.out.join("manifest.json"))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainReport {
    stage: Stage,
    seed: u64,
    epochs: usize,
    train_samples: usize,
    checkpoint: PathBuf,
    history: Vec<EpochRecord>,
}

fn train_config(a: &TrainArgs, stage: Stage) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => read_json::<TrainConfig>(p)?,
        None => match a.preset {
            Preset::Full => TrainConfig::for_stage(stage),
            Preset::Tiny => TrainConfig::tiny(stage),
        },
    };
    if cfg.stage != stage {
        return Err(CliError::Invalid(format!(
            "config is for the {} stage but --stage is {}",
            cfg.stage.name(),
            stage.name()
        )));
    }
    cfg.seed = a.seed;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.optimizer.lr = lr;
    }
    if let Some(c) = a.checkpoint_every {
        cfg.checkpoint_every = c;
    }
    if let Some(v) = a.validation_count {
        cfg.validation_count = v;
    }
    cfg.loss.delta_vs_gt |= a.delta_vs_gt;
    cfg.inpaint_raw |= a.inpaint_raw;
    if a.no_augment {
        cfg.augment.enabled = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let stage: Stage = a.stage.parse()?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let (state, cfg) = match &a.resume {
        Some(ckpt) => {
            let (state, mut cfg) = load_checkpoint(ckpt)?;
            if state.stage != stage {
                return Err(CliError::Invalid(format!(
                    "checkpoint belongs to the {} stage, not {}",
                    state.stage.name(),
                    stage.name()
                )));
            }
            if cfg.seed != a.seed {
                return Err(CliError::Invalid(format!(
                    "--seed {} differs from the checkpoint seed {}",
                    a.seed, cfg.seed
                )));
            }
            if let Some(e) = a.epochs {
                cfg.epochs = e;
            }
            (state, cfg)
        }
        None => {
            let cfg = train_config(&a, stage)?;
            let state = match &a.init {
                Some(ckpt) => TrainState::from_network(load_checkpoint(ckpt)?.0.network, &cfg)?,
                None => TrainState::fresh(&cfg)?,
            };
            (state, cfg)
        }
    };
    let data = Dataset::load(&manifest)?;
    let opts = RunOptions {
        checkpoint_dir: Some(a.out.clone()),
    };
    let state = train_stage(state, &data, &manifest.split.train, &cfg, &opts)?;
    let path = save_final(&a.out, &state, &cfg)?;
    let report = TrainReport {
        stage,
        seed: cfg.seed,
        epochs: state.epoch,
        train_samples: manifest.split.train.len(),
        checkpoint: PathBuf::from(path.file_name().expect("checkpoint file name")),
        history: state.history,
    };
    write_json(&a.out.join(format!("{}-report.json", stage.name())), &report)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let report = match (&a.gt, &a.pred, &a.manifest, &a.checkpoint) {
        (Some(gt), Some(pred), None, None) => {
            let gt_cube = load_cube(gt)?;
            let pred_cube = load_cube(pred)?;
            let seg = a.seg.as_ref().map(load_mask_png).transpose()?;
            let id = gt.file_stem().map_or("sample".into(), |s| s.to_string_lossy().into_owned());
            let row = evaluate_pair(&id, &gt_cube, &pred_cube, seg.as_ref())?;
            EvalReport {
                mean: MetricMeans {
                    mae: row.mae,
                    mse: row.mse,
                    angle: row.angle,
                },
                classes: row.root.zip(row.soil).map(|(root, soil)| ClassStats { root, soil }),
                samples: vec![row],
            }
        }
        (None, None, Some(m), Some(ckpt)) => {
            let manifest = DatasetManifest::load(m)?;
            let (state, _) = load_checkpoint(ckpt)?;
            let data = Dataset::load(&manifest)?;
            evaluate(&state.network, &data, &manifest.split.test)?
        }
        _ => {
            return Err(CliError::Invalid(
                "eval needs either --gt and --pred, or --manifest and --checkpoint".into(),
            ))
        }
    };
    write_json(&a.report, &report)
}

pub fn info(a: InfoArgs) -> Result<()> {
    let h = read_header(&a.cube)?;
    let wl = &h.wavelengths_nm;
    println!("width: {}", h.width);
    println!("height: {}", h.height);
    println!("bands: {}", h.bands);
    if let (Some(first), Some(last)) = (wl.first(), wl.last()) {
        println!("wavelengths_nm: {first} .. {last}");
    }
    println!("raw: {}", h.raw);
    println!("byte_order: {}", h.byte_order);
    println!("value_type: {}", h.value_type);
    Ok(())
}
