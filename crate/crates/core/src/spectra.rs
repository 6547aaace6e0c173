//! Gamma-modeled point-spectra synthesis.
//!
//! Point spectra share three properties with real spectrometer output:
//! nonnegativity, a right-skewed distribution, and positive correlation.
//! A clipped Gamma field stands in for them wherever measurements are
//! missing, and during training the few real spectra are written over the
//! field at the sampled locations so the network sees one input family at
//! train and test time.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Shape/scale of the synthetic spectra distribution.
#[derive(Clone, Copy, Debug)]
pub struct GammaConfig {
    pub alpha: f64,
    pub beta: f64,
    pub clip_max: f64,
}

impl Default for GammaConfig {
    fn default() -> Self {
        // mode 0.25, right-skewed, nearly all mass inside [0,1]
        GammaConfig {
            alpha: 2.0,
            beta: 0.25,
            clip_max: 1.0,
        }
    }
}

impl GammaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha > 0.0 && self.beta > 0.0 && self.clip_max > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArg(format!(
                "gamma config needs alpha, beta, clip_max > 0, got ({}, {}, {})",
                self.alpha, self.beta, self.clip_max
            )))
        }
    }
}

/// One Gamma(alpha, scale 1) draw via the Marsaglia-Tsang squeeze/rejection
/// method, with the power boost for alpha < 1.
pub fn gamma_draw(rng: &mut Rng, alpha: f64) -> f64 {
    debug_assert!(alpha > 0.0);
    let boosted = if alpha < 1.0 { alpha + 1.0 } else { alpha };
    let d = boosted - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    let raw = loop {
        let mut x;
        let mut v;
        loop {
            x = rng.normal();
            v = 1.0 + c * x;
            if v > 0.0 {
                break;
            }
        }
        v = v * v * v;
        let u = rng.uniform();
        if u < 1.0 - 0.0331 * x * x * x * x {
            break d * v;
        }
        if u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
            break d * v;
        }
    };
    if alpha < 1.0 {
        raw * rng.uniform().powf(1.0 / alpha)
    } else {
        raw
    }
}

/// i.i.d. Gamma(alpha, scale beta) samples, unclipped.
pub fn sample_gamma_unclipped(shape: &[usize], cfg: &GammaConfig, rng: &mut Rng) -> Result<Tensor> {
    cfg.validate()?;
    Ok(Tensor::from_fn(shape, |_| gamma_draw(rng, cfg.alpha) * cfg.beta))
}

/// i.i.d. Gamma(alpha, scale beta) samples clipped to [0, clip_max].
pub fn sample_gamma(shape: &[usize], cfg: &GammaConfig, rng: &mut Rng) -> Result<Tensor> {
    let mut t = sample_gamma_unclipped(shape, cfg, rng)?;
    for v in t.data_mut() {
        *v = v.min(cfg.clip_max);
    }
    Ok(t)
}

/// Clipped Normal field matched in mean/variance to a Gamma config,
/// the comparison arm of the distribution ablation.
pub fn sample_gaussian_matched(shape: &[usize], cfg: &GammaConfig, rng: &mut Rng) -> Result<Tensor> {
    cfg.validate()?;
    let mean = cfg.alpha * cfg.beta;
    let sd = cfg.alpha.sqrt() * cfg.beta;
    let mut t = Tensor::from_fn(shape, |_| mean + sd * rng.normal());
    for v in t.data_mut() {
        *v = v.clamp(0.0, cfg.clip_max);
    }
    Ok(t)
}

/// Sampled point locations on an HxW grid.
#[derive(Clone, Debug)]
pub struct PointMask {
    h: usize,
    w: usize,
    grid: Vec<bool>,
    /// Sampled locations, sorted row-major.
    locs: Vec<(usize, usize)>,
    pub omega: f64,
    pub seed: u64,
}

impl PointMask {
    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn is_sampled(&self, r: usize, c: usize) -> bool {
        self.grid[r * self.w + c]
    }

    pub fn locations(&self) -> &[(usize, usize)] {
        &self.locs
    }

    pub fn count(&self) -> usize {
        self.locs.len()
    }
}

/// Draw exactly floor(omega*H*W) distinct locations uniformly.
pub fn make_mask(h: usize, w: usize, omega: f64, seed: u64) -> Result<PointMask> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::InvalidArg(format!("omega {omega} outside [0,1]")));
    }
    let total = h * w;
    let k = (omega * total as f64).floor() as usize;
    let mut rng = Rng::from_seed(seed);
    let picked = rng.sample_distinct(total, k);
    let mut grid = vec![false; total];
    let mut locs = Vec::with_capacity(k);
    for p in picked {
        grid[p] = true;
        locs.push((p / w, p % w));
    }
    Ok(PointMask {
        h,
        w,
        grid,
        locs,
        omega,
        seed,
    })
}

/// A synthetic spectra field plus its mask and, during training, the real
/// spectra measured at the sampled locations.
#[derive(Clone, Debug)]
pub struct PointSpectraSet {
    /// [B,H,W] synthetic field, nonnegative.
    pub field: Tensor,
    pub mask: PointMask,
    /// [B,K] ground-truth spectra at the mask locations (train only).
    pub real_points: Option<Tensor>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComposeMode {
    Train,
    Infer,
}

impl PointSpectraSet {
    pub fn bands(&self) -> usize {
        self.field.shape()[0]
    }

    /// Model input per the train/test protocol: inference passes the field
    /// through untouched; training writes the real spectra over the field at
    /// the sampled locations.
    pub fn compose_input(&self, mode: ComposeMode) -> Result<Tensor> {
        match mode {
            ComposeMode::Infer => Ok(self.field.clone()),
            ComposeMode::Train => {
                let real = self.real_points.as_ref().ok_or_else(|| {
                    Error::InvalidArg("compose_input(train) without real_points".into())
                })?;
                let (b, h, w) = {
                    let s = self.field.shape();
                    (s[0], s[1], s[2])
                };
                let kk = self.mask.count();
                if real.shape() != [b, kk] {
                    return Err(Error::ShapeMismatch {
                        op: "compose_input",
                        lhs: real.shape().to_vec(),
                        rhs: vec![b, kk],
                    });
                }
                let mut out = self.field.clone();
                for (j, &(r, c)) in self.mask.locations().iter().enumerate() {
                    for bi in 0..b {
                        out.data_mut()[(bi * h + r) * w + c] = real.data()[bi * kk + j];
                    }
                }
                Ok(out)
            }
        }
    }

    /// Ground-truth spectra and their locations, for the masked L1 loss.
    pub fn masked_l1_target(&self) -> Result<(&Tensor, &[(usize, usize)])> {
        match &self.real_points {
            Some(rp) => Ok((rp, self.mask.locations())),
            None => Err(Error::InvalidArg(
                "masked_l1_target without real_points".into(),
            )),
        }
    }
}

/// Gather [B,K] spectra out of a [B,H,W] cube at the mask locations.
pub fn gather_real_points(cube: &Tensor, mask: &PointMask) -> Tensor {
    let s = cube.shape();
    let (b, h, w) = (s[0], s[1], s[2]);
    debug_assert_eq!((h, w), (mask.h(), mask.w()));
    let kk = mask.count();
    let mut out = Tensor::zeros(&[b, kk]);
    for bi in 0..b {
        for (j, &(r, c)) in mask.locations().iter().enumerate() {
            out.data_mut()[bi * kk + j] = cube.data()[(bi * h + r) * w + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_samples_are_nonnegative() {
        let mut rng = Rng::from_seed(1);
        let cfg = GammaConfig::default();
        let t = sample_gamma_unclipped(&[1000], &cfg, &mut rng).unwrap();
        assert!(t.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn exponential_special_case_mean() {
        // alpha = 1 reduces to Exponential(scale beta): mean == beta
        let cfg = GammaConfig {
            alpha: 1.0,
            beta: 0.7,
            clip_max: 1.0,
        };
        let mut rng = Rng::from_seed(2);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += gamma_draw(&mut rng, cfg.alpha) * cfg.beta;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.7).abs() / 0.7 < 0.01, "mean {mean}");
    }

    #[test]
    fn moments_match_alpha_two() {
        let cfg = GammaConfig::default(); // alpha 2, beta 0.25
        let mut rng = Rng::from_seed(3);
        let n = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let v = gamma_draw(&mut rng, cfg.alpha) * cfg.beta;
            s1 += v;
            s2 += v * v;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((mean - 0.5).abs() / 0.5 < 0.01, "mean {mean}");
        assert!((var - 0.125).abs() / 0.125 < 0.03, "var {var}");
    }

    #[test]
    fn skewness_matches_two_over_sqrt_alpha() {
        let alpha = 2.0;
        let mut rng = Rng::from_seed(4);
        let n = 1_000_000;
        let mut xs = Vec::with_capacity(n);
        for _ in 0..n {
            xs.push(gamma_draw(&mut rng, alpha));
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let m2 = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let m3 = xs.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n as f64;
        let skew = m3 / m2.powf(1.5);
        let want = 2.0 / alpha.sqrt();
        assert!((skew - want).abs() / want < 0.10, "skew {skew} want {want}");
    }

    #[test]
    fn alpha_below_one_boost_transform() {
        let mut rng = Rng::from_seed(5);
        let alpha = 0.5;
        let n = 400_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let v = gamma_draw(&mut rng, alpha);
            assert!(v >= 0.0);
            sum += v;
        }
        let mean = sum / n as f64;
        assert!((mean - alpha).abs() / alpha < 0.02, "mean {mean}");
    }

    #[test]
    fn mask_counts_are_exact() {
        assert_eq!(make_mask(16, 16, 0.0, 1).unwrap().count(), 0);
        assert_eq!(make_mask(128, 128, 0.0001, 1).unwrap().count(), 1);
        assert_eq!(make_mask(128, 128, 0.1, 1).unwrap().count(), 1638);
    }

    #[test]
    fn mask_is_deterministic_per_seed() {
        let a = make_mask(32, 32, 0.05, 99).unwrap();
        let b = make_mask(32, 32, 0.05, 99).unwrap();
        assert_eq!(a.locations(), b.locations());
        let c = make_mask(32, 32, 0.05, 100).unwrap();
        assert_ne!(a.locations(), c.locations());
    }

    fn toy_set(with_real: bool) -> PointSpectraSet {
        let mut rng = Rng::from_seed(7);
        let field = sample_gamma(&[2, 4, 4], &GammaConfig::default(), &mut rng).unwrap();
        let mask = make_mask(4, 4, 0.2, 11).unwrap(); // 3 points
        let real_points = with_real.then(|| {
            Tensor::from_fn(&[2, mask.count()], |i| 0.9 - 0.1 * i as f64)
        });
        PointSpectraSet {
            field,
            mask,
            real_points,
        }
    }

    #[test]
    fn infer_mode_is_bitwise_field() {
        let set = toy_set(true);
        let out = set.compose_input(ComposeMode::Infer).unwrap();
        assert_eq!(out, set.field);
    }

    #[test]
    fn infer_mode_never_reads_real_points() {
        let mut set = toy_set(true);
        // poison the real spectra; no poison value may appear
        set.real_points = Some(Tensor::full(&[2, set.mask.count()], f64::NAN));
        let out = set.compose_input(ComposeMode::Infer).unwrap();
        assert!(out.is_finite());
        assert_eq!(out, set.field);
    }

    #[test]
    fn train_mode_writes_real_spectra_at_sampled_locations() {
        let set = toy_set(true);
        let out = set.compose_input(ComposeMode::Train).unwrap();
        let real = set.real_points.as_ref().unwrap();
        let kk = set.mask.count();
        let mut differing = 0;
        for r in 0..4 {
            for c in 0..4 {
                let col_out: Vec<f64> = (0..2).map(|b| out.data()[(b * 4 + r) * 4 + c]).collect();
                let col_field: Vec<f64> =
                    (0..2).map(|b| set.field.data()[(b * 4 + r) * 4 + c]).collect();
                if set.mask.is_sampled(r, c) {
                    let j = set
                        .mask
                        .locations()
                        .iter()
                        .position(|&l| l == (r, c))
                        .unwrap();
                    for b in 0..2 {
                        assert_eq!(col_out[b], real.data()[b * kk + j]);
                    }
                }
                if col_out != col_field {
                    differing += 1;
                }
            }
        }
        assert!(differing <= kk);
    }

    #[test]
    fn train_mode_requires_real_points() {
        let set = toy_set(false);
        assert!(set.compose_input(ComposeMode::Train).is_err());
        assert!(set.masked_l1_target().is_err());
    }

    #[test]
    fn masked_target_round_trips_through_scatter() {
        let set = toy_set(true);
        let (vals, locs) = set.masked_l1_target().unwrap();
        assert_eq!(locs, set.mask.locations());
        // scatter values into a cube, gather back, compare
        let mut cube = Tensor::zeros(&[2, 4, 4]);
        let kk = locs.len();
        for (j, &(r, c)) in locs.iter().enumerate() {
            for b in 0..2 {
                cube.data_mut()[(b * 4 + r) * 4 + c] = vals.data()[b * kk + j];
            }
        }
        let back = gather_real_points(&cube, &set.mask);
        assert_eq!(&back, vals);
    }

    #[test]
    fn single_point_mask_target() {
        let mut rng = Rng::from_seed(8);
        let field = sample_gamma(&[3, 8, 8], &GammaConfig::default(), &mut rng).unwrap();
        let mask = make_mask(8, 8, 1.0 / 64.0, 5).unwrap();
        assert_eq!(mask.count(), 1);
        let set = PointSpectraSet {
            field,
            mask,
            real_points: Some(Tensor::full(&[3, 1], 0.4)),
        };
        let (vals, locs) = set.masked_l1_target().unwrap();
        assert_eq!(vals.shape(), &[3, 1]);
        assert_eq!(locs.len(), 1);
    }

    #[test]
    fn gaussian_field_matches_gamma_moments_before_clipping() {
        let cfg = GammaConfig {
            alpha: 2.0,
            beta: 0.25,
            clip_max: 1e9, // effectively unclipped
        };
        let mut rng = Rng::from_seed(9);
        let t = sample_gaussian_matched(&[200_000], &cfg, &mut rng).unwrap();
        let n = t.numel() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        // clamped at 0, so the mean shifts slightly up; stay loose
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }
}
