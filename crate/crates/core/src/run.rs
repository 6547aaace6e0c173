//! The four run drivers behind the CLI: dataset synthesis, training,
//! evaluation, and single-cube inference. Everything is a pure function of
//! (config, seed): derived per-purpose streams keep outputs byte-identical
//! across repeat runs.

use crate::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::config::{RunConfig, SpectraModel};
use crate::data::{
    crop_patches, project_rgb, read_cube, write_cube, DatasetManifest, HsiCube, SpectralResponse,
    Split,
};
use crate::drpn;
use crate::error::{Error, Result};
use crate::network::Model;
use crate::objectives::{loss_overall, metric_report, psnr, rmse, MetricReport};
use crate::params::BoundParams;
use crate::rng::{derive_seed, Rng};
use crate::spectra::{
    gather_real_points, make_mask, sample_gamma, sample_gaussian_matched, ComposeMode,
    PointSpectraSet,
};
use crate::tensor::{OptimizerState, Tape, Tensor};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

// stream tags for derived seeds
const STREAM_SYNTH: u64 = 1;
const STREAM_SAMPLE: u64 = 2;
const STREAM_MASK: u64 = 3;
const STREAM_FIELD: u64 = 4;
const STREAM_EVAL: u64 = 5;
const STREAM_INFER: u64 = 6;

// ---- synth -----------------------------------------------------------------

#[derive(Debug)]
pub struct SynthOutcome {
    pub manifest_path: PathBuf,
    pub n_train: usize,
    pub n_val: usize,
}

/// Write a seeded synthetic dataset: cubes, response CSV, manifest.
pub fn synth_dataset(cfg: &RunConfig, force: bool) -> Result<SynthOutcome> {
    cfg.validate()?;
    if cfg.n_train == 0 {
        return Err(Error::EmptyDataset);
    }
    let dir = Path::new(&cfg.data_dir);
    if dir.exists() {
        let non_empty = fs::read_dir(dir)
            .map_err(|e| Error::io(dir.display().to_string(), e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Error::InvalidArg(format!(
                "output dir `{}` is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut entries = Vec::new();
    for (split, count, tag) in [
        (Split::Train, cfg.n_train, "train"),
        (Split::Val, cfg.n_val, "val"),
    ] {
        for i in 0..count {
            let seed = derive_seed(cfg.seed, &[STREAM_SYNTH, split as u64, i as u64]);
            let cube = crate::data::synth_cube(seed, cfg.cube_size, cfg.cube_size, cfg.bands)?;
            let path = dir.join(format!("{tag}_{i:03}.hsic"));
            write_cube(&path, &cube)?;
            entries.push((split, path));
        }
    }
    SpectralResponse::default_for_bands(cfg.bands).write_csv(&dir.join("response.csv"))?;
    let manifest = DatasetManifest { entries };
    let manifest_path = dir.join("manifest.txt");
    manifest.write(&manifest_path)?;
    Ok(SynthOutcome {
        manifest_path,
        n_train: cfg.n_train,
        n_val: cfg.n_val,
    })
}

// ---- train -----------------------------------------------------------------

/// One line of the training log.
#[derive(Clone, Copy, Debug)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub total: f64,
    pub phsi: f64,
    pub rep: f64,
    pub ssim: f64,
    pub p2i: f64,
}

impl StepLog {
    pub fn line(&self) -> String {
        format!(
            "step={} lr={:.2e} total={:.4} phsi={:.4} rep={:.4} ssim={:.4} p2i={:.4}",
            self.step, self.lr, self.total, self.phsi, self.rep, self.ssim, self.p2i
        )
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub log: Vec<StepLog>,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
}

fn sample_field(
    cfg: &RunConfig,
    shape: &[usize],
    seed: u64,
    model: SpectraModel,
) -> Result<Tensor> {
    let mut rng = Rng::from_seed(seed);
    let gc = cfg.gamma_config();
    match model {
        SpectraModel::Gamma => sample_gamma(shape, &gc, &mut rng),
        SpectraModel::Gaussian => sample_gaussian_matched(shape, &gc, &mut rng),
    }
}

fn load_split(cfg: &RunConfig, split: Split) -> Result<(Vec<(PathBuf, HsiCube)>, SpectralResponse)> {
    let dir = Path::new(&cfg.data_dir);
    let manifest = DatasetManifest::read(&dir.join("manifest.txt"))?;
    let response = SpectralResponse::read_csv(&dir.join("response.csv"))?;
    let mut cubes = Vec::new();
    for path in manifest.paths(split) {
        let cube = read_cube(path)?;
        if cube.bands() != cfg.bands {
            return Err(Error::BandMismatch {
                ckpt: cfg.bands,
                data: cube.bands(),
            });
        }
        cubes.push((path.clone(), cube));
    }
    if cubes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((cubes, response))
}

/// Full training loop: sample patch, synthesize the spectra field, compose
/// the train input, forward, loss, backward, Adam step. Checkpoints at
/// every eval interval and at the end; a non-finite loss aborts with the
/// last good checkpoint retained.
pub fn run_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (cubes, response) = load_split(cfg, Split::Train)?;
    let mut model = Model::new(cfg.model_config())?;
    let mut opt = OptimizerState::new(&model.params, cfg.lr0, cfg.decay_power, cfg.steps);
    let weights = cfg.loss_weights();

    let out_dir = Path::new(&cfg.out_dir);
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let checkpoint_path = out_dir.join("model.pssr");
    let log_path = out_dir.join("train.log");
    let mut log_file =
        fs::File::create(&log_path).map_err(|e| Error::io(log_path.display().to_string(), e))?;

    let mut log = Vec::with_capacity(cfg.steps as usize);
    let mut have_checkpoint = false;
    let ps = cfg.patch_size;

    for step in 0..cfg.steps {
        let mut tape = Tape::new();
        let bp = BoundParams::bind(&mut tape, &model.params, true);
        let diverged = |have_checkpoint: bool| Error::NonFiniteLoss {
            step: step + 1,
            checkpoint: if have_checkpoint {
                checkpoint_path.display().to_string()
            } else {
                "none written yet".to_string()
            },
        };
        let mut batch = || -> Result<(crate::tensor::VarId, f64, f64, f64, f64)> {
            let mut batch_loss = None;
            let (mut a_phsi, mut a_rep, mut a_ssim, mut a_p2i) = (0.0, 0.0, 0.0, 0.0);
            for item in 0..cfg.batch_size as u64 {
                let mut srng = Rng::from_seed(derive_seed(cfg.seed, &[STREAM_SAMPLE, step, item]));
                let ci = srng.below(cubes.len());
                let cube = &cubes[ci].1;
                let y0 = srng.below(cube.height() - ps + 1);
                let x0 = srng.below(cube.width() - ps + 1);
                let patch = cube.crop(y0, x0, ps);
                let rgb = project_rgb(&patch, &response)?;

                let mask_seed = derive_seed(cfg.seed, &[STREAM_MASK, step, item]);
                let mask = make_mask(ps, ps, cfg.omega, mask_seed)?;
                let field_seed = if cfg.resample_per_step {
                    derive_seed(cfg.seed, &[STREAM_FIELD, step, item])
                } else {
                    derive_seed(cfg.seed, &[STREAM_FIELD, ci as u64, y0 as u64, x0 as u64])
                };
                let field = sample_field(cfg, &[cfg.bands, ps, ps], field_seed, cfg.spectra_model)?;
                let real = gather_real_points(patch.values(), &mask);
                let set = PointSpectraSet {
                    field,
                    mask,
                    real_points: Some(real),
                };
                let input = set.compose_input(ComposeMode::Train)?;

                let xv = tape.constant(rgb);
                let gv = tape.constant(input);
                let (y_r, prompts) = model.forward_on_tape(&mut tape, &bp, xv, gv)?;
                let h2r_out = drpn::h2r(&mut tape, &bp, prompts.y3)?;
                let (loss, bd) =
                    loss_overall(&mut tape, y_r, &set, xv, h2r_out, &response, &weights)?;
                a_phsi += bd.phsi;
                a_rep += bd.rep;
                a_ssim += bd.ssim;
                a_p2i += bd.p2i;
                batch_loss = Some(match batch_loss {
                    None => loss,
                    Some(acc) => tape.add(acc, loss)?,
                });
            }
            Ok((
                batch_loss.expect("batch_size >= 1"),
                a_phsi,
                a_rep,
                a_ssim,
                a_p2i,
            ))
        };
        let (raw_loss, a_phsi, a_rep, a_ssim, a_p2i) = match batch() {
            Ok(v) => v,
            // parameters blew up mid-forward: same abort as a non-finite loss
            Err(Error::NonFiniteValue(_)) => return Err(diverged(have_checkpoint)),
            Err(e) => return Err(e),
        };
        let inv = 1.0 / cfg.batch_size as f64;
        let loss = tape.scale(raw_loss, inv);
        let total = tape.val(loss).item();
        if !total.is_finite() {
            return Err(diverged(have_checkpoint));
        }
        let lr = opt.lr_at(opt.t);
        let grads = tape.backward(loss)?;
        let gmap = bp.collect_grads(&grads);
        opt.step(&mut model.params, &gmap)?;

        let entry = StepLog {
            step: step + 1,
            lr,
            total,
            phsi: a_phsi * inv,
            rep: a_rep * inv,
            ssim: a_ssim * inv,
            p2i: a_p2i * inv,
        };
        writeln!(log_file, "{}", entry.line())
            .map_err(|e| Error::io(log_path.display().to_string(), e))?;
        log.push(entry);

        if (step + 1) % cfg.eval_interval == 0 || step + 1 == cfg.steps {
            let ck = Checkpoint::from_state(cfg.to_canonical_text(), &model.params, &opt, cfg.seed);
            write_checkpoint(&checkpoint_path, &ck)?;
            have_checkpoint = true;
        }
    }
    Ok(TrainOutcome {
        log,
        checkpoint_path,
        log_path,
    })
}

// ---- eval ------------------------------------------------------------------

#[derive(Debug)]
pub struct CubeReport {
    pub path: PathBuf,
    pub metrics: MetricReport,
}

#[derive(Debug)]
pub struct EvalReport {
    pub omega: f64,
    pub per_cube: Vec<CubeReport>,
    pub aggregate: MetricReport,
    /// PSNR of the channel-mean replication baseline on the same cubes.
    pub baseline_psnr_db: f64,
    pub report_path: PathBuf,
}

/// Rebuild a model from a checkpoint, verifying parameter names and shapes.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<(Model, RunConfig)> {
    let ck_cfg = RunConfig::parse(&ckpt.config_text)?;
    let mut model = Model::new(ck_cfg.model_config())?;
    if model.params.len() != ckpt.params.len() {
        return Err(Error::Config(format!(
            "checkpoint has {} parameters, model wants {}",
            ckpt.params.len(),
            model.params.len()
        )));
    }
    for (name, t) in &mut model.params {
        let loaded = ckpt
            .params
            .get(name)
            .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter `{name}`")))?;
        if loaded.shape() != t.shape() {
            return Err(Error::ShapeMismatch {
                op: "checkpoint load",
                lhs: loaded.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
        *t = loaded.clone();
    }
    Ok((model, ck_cfg))
}

/// Channel-mean replication: every band equals the RGB mean.
pub fn rgb_mean_baseline(rgb: &Tensor, bands: usize) -> Tensor {
    let (h, w) = (rgb.shape()[1], rgb.shape()[2]);
    let hw = h * w;
    Tensor::from_fn(&[bands, h, w], |i| {
        let p = i % hw;
        (rgb.data()[p] + rgb.data()[hw + p] + rgb.data()[2 * hw + p]) / 3.0
    })
}

/// Evaluate a checkpoint on a split: inference runs on the pure synthetic
/// field (no real spectra), one aggregate per requested ratio.
pub fn run_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    split: Split,
    omegas: &[f64],
    allow_mismatch: bool,
) -> Result<Vec<EvalReport>> {
    cfg.validate()?;
    let ckpt = read_checkpoint(checkpoint)?;
    let (model, ck_cfg) = model_from_checkpoint(&ckpt)?;
    if ck_cfg.model_hash() != cfg.model_hash() && !allow_mismatch {
        return Err(Error::ConfigMismatch {
            ckpt: ck_cfg.model_hash(),
            current: cfg.model_hash(),
        });
    }
    let (cubes, response) = load_split(cfg, split).map_err(|e| match e {
        Error::BandMismatch { data, .. } => Error::BandMismatch {
            ckpt: ck_cfg.bands,
            data,
        },
        e => e,
    })?;
    if ck_cfg.bands != cfg.bands {
        return Err(Error::BandMismatch {
            ckpt: ck_cfg.bands,
            data: cfg.bands,
        });
    }

    let out_dir = Path::new(&cfg.out_dir);
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let report_path = out_dir.join(format!("eval_{}.txt", split.tag()));
    let mut text = String::new();
    let mut reports = Vec::new();

    let omegas = if omegas.is_empty() {
        vec![cfg.omega]
    } else {
        omegas.to_vec()
    };
    for &omega in &omegas {
        let mut per_cube = Vec::new();
        let (mut s_rmse, mut s_psnr, mut s_ssim, mut s_sam, mut s_base) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (idx, (path, cube)) in cubes.iter().enumerate() {
            let rgb = project_rgb(cube, &response)?;
            let field_seed = derive_seed(
                cfg.seed,
                &[STREAM_EVAL, omega.to_bits(), idx as u64],
            );
            let field = sample_field(
                cfg,
                &[cfg.bands, cube.height(), cube.width()],
                field_seed,
                cfg.spectra_model,
            )?;
            // testing branch: the field passes through untouched
            let mask = make_mask(cube.height(), cube.width(), omega, field_seed)?;
            let set = PointSpectraSet {
                field,
                mask,
                real_points: None,
            };
            let input = set.compose_input(ComposeMode::Infer)?;
            let y_r = model.infer(&rgb, &input)?;
            let metrics = metric_report(cube.values(), &y_r)?;
            let baseline = rgb_mean_baseline(&rgb, cfg.bands);
            let base_psnr = psnr(cube.values(), &baseline)?;
            s_rmse += metrics.rmse;
            s_psnr += metrics.psnr_db;
            s_ssim += metrics.ssim;
            s_sam += metrics.sam_degrees;
            s_base += base_psnr;
            text.push_str(&format!(
                "cube={} omega={} {}\n",
                path.display(),
                omega,
                metrics.to_record()
            ));
            per_cube.push(CubeReport {
                path: path.clone(),
                metrics,
            });
        }
        let n = cubes.len() as f64;
        let aggregate = MetricReport {
            rmse: s_rmse / n,
            psnr_db: s_psnr / n,
            ssim: s_ssim / n,
            sam_degrees: s_sam / n,
        };
        let baseline_psnr_db = s_base / n;
        text.push_str(&format!("aggregate omega={omega}\n"));
        text.push_str(&aggregate.to_lines());
        text.push_str(&format!("baseline_psnr_db={baseline_psnr_db:.4}\n"));
        reports.push(EvalReport {
            omega,
            per_cube,
            aggregate,
            baseline_psnr_db,
            report_path: report_path.clone(),
        });
    }
    fs::write(&report_path, text).map_err(|e| Error::io(report_path.display().to_string(), e))?;
    Ok(reports)
}

// ---- infer -----------------------------------------------------------------

#[derive(Debug)]
pub struct InferOutcome {
    pub output_path: PathBuf,
    pub error_map_path: Option<PathBuf>,
    /// Global RMSE against the reference, when one was given.
    pub rmse: Option<f64>,
}

/// Reconstruct a cube from a 3-band RGB cube file.
#[allow(clippy::too_many_arguments)]
pub fn run_infer(
    cfg: &RunConfig,
    checkpoint: &Path,
    input: &Path,
    output: &Path,
    reference: Option<&Path>,
    error_map: Option<&Path>,
    dump_prompts: Option<&Path>,
) -> Result<InferOutcome> {
    let ckpt = read_checkpoint(checkpoint)?;
    let (model, ck_cfg) = model_from_checkpoint(&ckpt)?;
    let rgb_cube = read_cube(input)?;
    if rgb_cube.bands() != 3 {
        return Err(Error::InvalidArg(format!(
            "inference input must be a 3-band RGB cube, got {} bands",
            rgb_cube.bands()
        )));
    }
    let rgb = rgb_cube.values().clone();
    let (h, w) = (rgb_cube.height(), rgb_cube.width());
    let field_seed = derive_seed(cfg.seed, &[STREAM_INFER]);
    let field = sample_field(cfg, &[ck_cfg.bands, h, w], field_seed, cfg.spectra_model)?;
    let y_r = model.infer(&rgb, &field)?;
    write_cube(output, &HsiCube::new(y_r.clone())?)?;

    if let Some(dir) = dump_prompts {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let prompts = drpn::extract_prompts(&model.params, &rgb, &field, ck_cfg.frft_order)?;
        for (name, t) in [
            ("p_spa", &prompts.p_spa),
            ("p_hf", &prompts.p_hf),
            ("y3", &prompts.y3),
        ] {
            write_cube(&dir.join(format!("{name}.hsic")), &normalized_cube(t))?;
        }
        let c = prompts.p_spe.shape()[0];
        let spe = prompts.p_spe.reshaped(vec![1, c, c])?;
        write_cube(&dir.join("p_spe.hsic"), &normalized_cube(&spe))?;
    }

    let mut rmse_out = None;
    let mut error_map_path = None;
    if let Some(ref_path) = reference {
        let gt = read_cube(ref_path)?;
        if gt.bands() != ck_cfg.bands || gt.height() != h || gt.width() != w {
            return Err(Error::ShapeMismatch {
                op: "infer reference",
                lhs: gt.values().shape().to_vec(),
                rhs: y_r.shape().to_vec(),
            });
        }
        let global = rmse(gt.values(), &y_r)?;
        rmse_out = Some(global);
        if let Some(map_path) = error_map {
            // per-pixel RMSE over bands; its quadratic mean is the global RMSE
            let b = ck_cfg.bands;
            let hw = h * w;
            let map = Tensor::from_fn(&[1, h, w], |p| {
                let mut ss = 0.0;
                for bi in 0..b {
                    let d = gt.values().data()[bi * hw + p] - y_r.data()[bi * hw + p];
                    ss += d * d;
                }
                (ss / b as f64).sqrt()
            });
            write_cube(map_path, &HsiCube::new(map)?)?;
            error_map_path = Some(map_path.to_path_buf());
        }
    }
    Ok(InferOutcome {
        output_path: output.to_path_buf(),
        error_map_path,
        rmse: rmse_out,
    })
}

fn normalized_cube(t: &Tensor) -> HsiCube {
    let lo = t.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    let v = Tensor::from_fn(t.shape(), |i| ((t.data()[i] - lo) / span).clamp(0.0, 1.0));
    HsiCube::new(v).expect("normalized into range")
}

/// Patch inventory helper for tooling; training samples patches on the fly.
pub fn patch_inventory(cfg: &RunConfig) -> Result<usize> {
    let (cubes, _) = load_split(cfg, Split::Train)?;
    let mut total = 0;
    for (_, cube) in &cubes {
        total += crop_patches(cube, cfg.patch_size, cfg.patch_size)?.len();
    }
    Ok(total)
}
