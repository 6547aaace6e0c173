//! Training losses and evaluation metrics.
//!
//! Losses are recorded on the tape so gradients flow; metrics are plain f64
//! functions with fp64 accumulation throughout. Both share the same SSIM
//! windowing constants (11x11 Gaussian, sigma 1.5, C1 = 0.01^2, C2 = 0.03^2,
//! data range 1).

use crate::data::SpectralResponse;
use crate::error::{Error, Result};
use crate::spectra::PointSpectraSet;
use crate::tensor::{win, Tape, Tensor, VarId};
use std::sync::Once;

pub const SSIM_SIDE: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Per-band MSE below this reports the PSNR cap of 100 dB.
pub const PSNR_FLOOR: f64 = 1e-10;
/// Pixels whose spectral norm falls below this are skipped by SAM.
pub const SAM_NORM_FLOOR: f64 = 1e-12;

// ---- losses ----------------------------------------------------------------

/// Weights on the projected, structural, and cube-to-RGB terms.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta1: 1.0,
            beta2: 0.3,
            beta3: 0.3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.beta1 >= 0.0 && self.beta2 >= 0.0 && self.beta3 >= 0.0 {
            Ok(())
        } else {
            Err(Error::Config("loss weights must be nonnegative".into()))
        }
    }

    /// total = phsi + b1*rep + b2*ssim + b3*p2i
    pub fn combine(&self, phsi: f64, rep: f64, ssim: f64, p2i: f64) -> f64 {
        phsi + self.beta1 * rep + self.beta2 * ssim + self.beta3 * p2i
    }
}

/// Scalar values of the loss terms for logging.
#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown {
    pub total: f64,
    pub phsi: f64,
    pub rep: f64,
    pub ssim: f64,
    pub p2i: f64,
}

/// Overall training loss on the tape.
///
/// `h2r_out` is the cube-to-RGB head applied to the preliminary cube; the
/// caller builds it so this function stays agnostic of the neck's
/// parameters. Returns the scalar loss handle plus the term values.
pub fn loss_overall(
    tape: &mut Tape,
    y_r: VarId,
    set: &PointSpectraSet,
    x: VarId,
    h2r_out: VarId,
    s: &SpectralResponse,
    w: &LossWeights,
) -> Result<(VarId, LossBreakdown)> {
    w.validate()?;
    let (b, h, wd) = {
        let sh = tape.val(y_r).shape();
        (sh[0], sh[1], sh[2])
    };

    // point-spectra term: mean L1 at the sampled locations only,
    // normalized over K*B entries so the scale is ratio-independent
    let phsi = if set.mask.count() == 0 {
        static WARN_ONCE: Once = Once::new();
        WARN_ONCE.call_once(|| {
            eprintln!("warning: empty point mask, point-spectra loss defined as 0");
        });
        tape.constant(Tensor::scalar(0.0))
    } else {
        let (targets, locs) = set.masked_l1_target()?;
        let pred = tape.gather_pixels(y_r, locs)?;
        let tv = tape.constant(targets.clone());
        let diff = tape.sub(pred, tv)?;
        tape.mean_abs(diff)
    };

    // projected term: RGB re-synthesized through the response matrix
    let flat = tape.reshape(y_r, vec![b, h * wd])?;
    let sv = tape.constant(s.matrix().clone());
    let synth = tape.matmul(sv, flat)?;
    let synth = tape.reshape(synth, vec![3, h, wd])?;
    let rdiff = tape.sub(x, synth)?;
    let rep = tape.mean_abs(rdiff);

    // structural term: mean over adjacent band pairs of 1 - SSIM
    let mut ssim_acc: Option<VarId> = None;
    for bi in 0..b - 1 {
        let a = tape.slice0(y_r, bi, bi + 1)?;
        let bb = tape.slice0(y_r, bi + 1, bi + 2)?;
        let s_pair = ssim_on_tape(tape, a, bb)?;
        let neg = tape.scale(s_pair, -1.0);
        let term = tape.add_scalar(neg, 1.0);
        ssim_acc = Some(match ssim_acc {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    let ssim_l = tape.scale(ssim_acc.expect("B >= 2"), 1.0 / (b - 1) as f64);

    // cube-to-RGB term
    let pdiff = tape.sub(x, h2r_out)?;
    let p2i = tape.mean_abs(pdiff);

    let rep_w = tape.scale(rep, w.beta1);
    let ssim_w = tape.scale(ssim_l, w.beta2);
    let p2i_w = tape.scale(p2i, w.beta3);
    let t1 = tape.add(phsi, rep_w)?;
    let t2 = tape.add(t1, ssim_w)?;
    let total = tape.add(t2, p2i_w)?;

    Ok((
        total,
        LossBreakdown {
            total: tape.val(total).item(),
            phsi: tape.val(phsi).item(),
            rep: tape.val(rep).item(),
            ssim: tape.val(ssim_l).item(),
            p2i: tape.val(p2i).item(),
        },
    ))
}

/// Windowed SSIM between two single-channel maps, differentiable. The window
/// side adapts to small maps (side = min(11, H, W) forced odd, sigma scaled
/// with it) so the structural loss stays defined on toy patches.
pub fn ssim_on_tape(tape: &mut Tape, a: VarId, b: VarId) -> Result<VarId> {
    let sh = tape.val(a).shape().to_vec();
    if sh != tape.val(b).shape() {
        return Err(Error::ShapeMismatch {
            op: "ssim",
            lhs: sh,
            rhs: tape.val(b).shape().to_vec(),
        });
    }
    let (h, w) = (sh[1], sh[2]);
    let mut side = SSIM_SIDE.min(h).min(w);
    if side % 2 == 0 {
        side -= 1;
    }
    if side == 0 {
        return Err(Error::InvalidArg(format!("ssim on degenerate map {h}x{w}")));
    }
    let sigma = SSIM_SIGMA * side as f64 / SSIM_SIDE as f64;
    let mu_a = tape.gauss_valid(a, side, sigma)?;
    let mu_b = tape.gauss_valid(b, side, sigma)?;
    let aa = tape.mul(a, a)?;
    let bb = tape.mul(b, b)?;
    let ab = tape.mul(a, b)?;
    let m_aa = tape.gauss_valid(aa, side, sigma)?;
    let m_bb = tape.gauss_valid(bb, side, sigma)?;
    let m_ab = tape.gauss_valid(ab, side, sigma)?;
    let mu_a2 = tape.mul(mu_a, mu_a)?;
    let mu_b2 = tape.mul(mu_b, mu_b)?;
    let mu_ab = tape.mul(mu_a, mu_b)?;
    let var_a = tape.sub(m_aa, mu_a2)?;
    let var_b = tape.sub(m_bb, mu_b2)?;
    let cov = tape.sub(m_ab, mu_ab)?;
    let n1 = tape.scale(mu_ab, 2.0);
    let n1 = tape.add_scalar(n1, SSIM_C1);
    let n2 = tape.scale(cov, 2.0);
    let n2 = tape.add_scalar(n2, SSIM_C2);
    let num = tape.mul(n1, n2)?;
    let d1 = tape.add(mu_a2, mu_b2)?;
    let d1 = tape.add_scalar(d1, SSIM_C1);
    let d2 = tape.add(var_a, var_b)?;
    let d2 = tape.add_scalar(d2, SSIM_C2);
    let den = tape.mul(d1, d2)?;
    let map = tape.div(num, den)?;
    Ok(tape.mean_all(map))
}

// ---- metrics ---------------------------------------------------------------

/// Scalar quality measures of one reconstruction.
#[derive(Clone, Copy, Debug)]
pub struct MetricReport {
    pub rmse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub sam_degrees: f64,
}

impl MetricReport {
    /// UTF-8 "metric=value" lines.
    pub fn to_lines(&self) -> String {
        format!(
            "rmse={:.6}\npsnr_db={:.4}\nssim={:.6}\nsam_degrees={:.4}\n",
            self.rmse, self.psnr_db, self.ssim, self.sam_degrees
        )
    }

    /// Single-line "key=value" record.
    pub fn to_record(&self) -> String {
        format!(
            "rmse={:.6} psnr_db={:.4} ssim={:.6} sam_degrees={:.4}",
            self.rmse, self.psnr_db, self.ssim, self.sam_degrees
        )
    }
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Root mean squared error over every entry.
pub fn rmse(reference: &Tensor, estimate: &Tensor) -> Result<f64> {
    check_same_shape("rmse", reference, estimate)?;
    let n = reference.numel() as f64;
    let ss: f64 = reference
        .data()
        .iter()
        .zip(estimate.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((ss / n).sqrt())
}

/// Per-band PSNR in dB against data range 1, averaged over bands and capped
/// at 100 dB for vanishing error.
pub fn psnr(reference: &Tensor, estimate: &Tensor) -> Result<f64> {
    check_same_shape("psnr", reference, estimate)?;
    let sh = reference.shape();
    let (b, hw) = (sh[0], sh[1..].iter().product::<usize>());
    let mut acc = 0.0;
    for bi in 0..b {
        let ra = &reference.data()[bi * hw..(bi + 1) * hw];
        let ea = &estimate.data()[bi * hw..(bi + 1) * hw];
        let mse: f64 = ra
            .iter()
            .zip(ea)
            .map(|(a, v)| (a - v) * (a - v))
            .sum::<f64>()
            / hw as f64;
        acc += if mse < PSNR_FLOOR {
            100.0
        } else {
            10.0 * (1.0 / mse).log10()
        };
    }
    Ok(acc / b as f64)
}

/// Structural similarity of two 2D maps with the standard 11x11 window;
/// errors out when the image is smaller than the window.
pub fn ssim_band(reference: &Tensor, estimate: &Tensor) -> Result<f64> {
    check_same_shape("ssim", reference, estimate)?;
    let sh = reference.shape();
    if sh.len() != 2 {
        return Err(Error::InvalidArg(format!("ssim_band wants 2D, got {sh:?}")));
    }
    let (h, w) = (sh[0], sh[1]);
    if h < SSIM_SIDE || w < SSIM_SIDE {
        return Err(Error::InvalidArg(format!(
            "image {h}x{w} smaller than the {SSIM_SIDE}x{SSIM_SIDE} ssim window"
        )));
    }
    let taps = win::gauss_taps(SSIM_SIDE, SSIM_SIGMA);
    let filt = |x: &[f64]| win::gauss_valid_fwd(x, 1, h, w, &taps).0;
    let a = reference.data();
    let b = estimate.data();
    let mu_a = filt(a);
    let mu_b = filt(b);
    let sq = |x: &[f64]| -> Vec<f64> { x.iter().map(|v| v * v).collect() };
    let m_aa = filt(&sq(a));
    let m_bb = filt(&sq(b));
    let prod: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let m_ab = filt(&prod);
    let mut acc = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = m_aa[i] - ma * ma;
        let vb = m_bb[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        acc += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok(acc / mu_a.len() as f64)
}

/// SSIM averaged over the bands of a cube.
pub fn ssim_cube(reference: &Tensor, estimate: &Tensor) -> Result<f64> {
    check_same_shape("ssim", reference, estimate)?;
    let sh = reference.shape();
    let (b, h, w) = (sh[0], sh[1], sh[2]);
    let mut acc = 0.0;
    for bi in 0..b {
        let band = |t: &Tensor| {
            Tensor::new(
                vec![h, w],
                t.data()[bi * h * w..(bi + 1) * h * w].to_vec(),
            )
            .unwrap()
        };
        acc += ssim_band(&band(reference), &band(estimate))?;
    }
    Ok(acc / b as f64)
}

/// Mean per-pixel spectral angle in degrees; near-zero spectra are skipped,
/// and an error is raised only when every pixel is degenerate.
pub fn sam(reference: &Tensor, estimate: &Tensor) -> Result<f64> {
    check_same_shape("sam", reference, estimate)?;
    let sh = reference.shape();
    let (b, hw) = (sh[0], sh[1..].iter().product::<usize>());
    let mut acc = 0.0;
    let mut valid = 0usize;
    for p in 0..hw {
        let (mut dot, mut na2, mut nb2) = (0.0, 0.0, 0.0);
        for bi in 0..b {
            let x = reference.data()[bi * hw + p];
            let y = estimate.data()[bi * hw + p];
            dot += x * y;
            na2 += x * x;
            nb2 += y * y;
        }
        if na2.sqrt() <= SAM_NORM_FLOOR || nb2.sqrt() <= SAM_NORM_FLOOR {
            continue;
        }
        // atan2 form: exact 0 for parallel spectra, well conditioned near 0
        let sin_sq = (na2 * nb2 - dot * dot).max(0.0);
        acc += sin_sq.sqrt().atan2(dot);
        valid += 1;
    }
    if valid == 0 {
        return Err(Error::AllPixelsDegenerate);
    }
    Ok(acc / valid as f64 * 180.0 / std::f64::consts::PI)
}

/// All four metrics of one reconstruction against its reference.
pub fn metric_report(reference: &Tensor, estimate: &Tensor) -> Result<MetricReport> {
    Ok(MetricReport {
        rmse: rmse(reference, estimate)?,
        psnr_db: psnr(reference, estimate)?,
        ssim: ssim_cube(reference, estimate)?,
        sam_degrees: sam(reference, estimate)?,
    })
}
