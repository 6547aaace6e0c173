//! Dynamic receptive prompt neck: three branches turn the RGB image and the
//! synthetic point-spectra field into a spatial prompt (scanned in both the
//! pixel and fractional-Fourier domains), a high-frequency prompt, and a
//! channel-attention spectral prompt, plus a preliminary cube that seeds the
//! downstream network.

use crate::error::{Error, Result};
use crate::params::{conv_specs, ssm_specs, BoundParams, Init, ParamSpec};
use crate::ssm::multi_direction_scan_tape;
use crate::tensor::{Tape, Tensor, VarId};
use std::collections::BTreeMap;

/// Tape handles of the extracted prompts.
pub struct PromptVars {
    pub p_spa: VarId,
    pub p_hf: VarId,
    /// [C_feat, C_feat] row-stochastic attention map.
    pub p_spe: VarId,
    /// Preliminary cube [B,H,W].
    pub y3: VarId,
    pub f1: VarId,
}

/// Extracted prompt values (for debug dumps and tests).
pub struct PromptSet {
    pub p_spa: Tensor,
    pub p_hf: Tensor,
    pub p_spe: Tensor,
    pub y3: Tensor,
}

/// Parameter layout of the neck for feature width `c` over `b` bands.
pub fn drpn_specs(b: usize, c: usize, n_state: usize) -> Vec<ParamSpec> {
    let mut s = Vec::new();
    s.extend(conv_specs("drpn.f1", c, 3));
    s.extend(ssm_specs("drpn.spa_ssm", c, n_state));
    s.extend(ssm_specs("drpn.frft_ssm", 2 * c, n_state));
    s.extend(conv_specs("drpn.spa_fuse", c, 2 * c));
    s.extend(conv_specs("drpn.hf1", c, c));
    s.extend(conv_specs("drpn.hf2", c, c));
    s.extend(conv_specs("drpn.y1a", c, b + 1));
    s.extend(conv_specs("drpn.y1b", b, c));
    s.extend(conv_specs("drpn.y2", b, b + c));
    s.extend(conv_specs("drpn.y3", b, b + c));
    s.push(ParamSpec::new(
        "drpn.ssa.wq",
        vec![b, c],
        Init::He { fan_in: b },
    ));
    s.push(ParamSpec::new(
        "drpn.ssa.wk",
        vec![b, c],
        Init::He { fan_in: b },
    ));
    s.push(ParamSpec::new("drpn.ssa.tau", vec![1], Init::Const(1.0)));
    s.extend(conv_specs("drpn.h2r1", c, b));
    s.extend(conv_specs("drpn.h2r2", 3, c));
    s
}

fn conv(tape: &mut Tape, bp: &BoundParams, prefix: &str, x: VarId, stride: usize) -> Result<VarId> {
    tape.conv3x3(
        x,
        bp.get(&format!("{prefix}.w")),
        bp.get(&format!("{prefix}.b")),
        stride,
    )
}

/// Spatial prompt: shallow feature scanned in the pixel domain and in the
/// fractional-Fourier domain, fused, then gated by silu of the feature.
pub fn spa_frft_prompt(
    tape: &mut Tape,
    bp: &BoundParams,
    x: VarId,
    frft_order: f64,
) -> Result<(VarId, VarId)> {
    let f1 = conv(tape, bp, "drpn.f1", x, 1)?;
    let (c, h, w) = {
        let s = tape.val(f1).shape();
        (s[0], s[1], s[2])
    };
    let spa_vars = bp.ssm_vars("drpn.spa_ssm");
    let f_spa = multi_direction_scan_tape(tape, f1, &spa_vars)?;

    // lift to a stacked complex map, transform, scan re/im as channels,
    // transform back, keep the real plane
    let f1r = tape.reshape(f1, vec![1, c, h, w])?;
    let zeros = tape.constant(Tensor::zeros(&[1, c, h, w]));
    let lifted = tape.concat0(&[f1r, zeros])?;
    let spectral = tape.frft2(lifted, frft_order)?;
    let as_channels = tape.reshape(spectral, vec![2 * c, h, w])?;
    let frft_vars = bp.ssm_vars("drpn.frft_ssm");
    let scanned = multi_direction_scan_tape(tape, as_channels, &frft_vars)?;
    let restacked = tape.reshape(scanned, vec![2, c, h, w])?;
    let back = tape.frft2(restacked, -frft_order)?;
    let real = tape.slice0(back, 0, 1)?;
    let f_frft = tape.reshape(real, vec![c, h, w])?;

    let cat = tape.concat0(&[f_spa, f_frft])?;
    let fused = conv(tape, bp, "drpn.spa_fuse", cat, 1)?;
    let gate = tape.silu(f1);
    let p_spa = tape.mul(fused, gate)?;
    Ok((p_spa, f1))
}

/// High-frequency prompt: what average pooling plus upsampling loses.
pub fn spa_hf_prompt(tape: &mut Tape, bp: &BoundParams, f1: VarId) -> Result<VarId> {
    let (h, w) = {
        let s = tape.val(f1).shape();
        (s[1], s[2])
    };
    let pooled = tape.avgpool2(f1)?;
    let up = tape.upsample2(pooled)?;
    let us = tape.val(up).shape();
    let f2 = if us[1] != h || us[2] != w {
        tape.edge_pad_to(up, h, w)?
    } else {
        up
    };
    let diff = tape.sub(f1, f2)?;
    let inner = conv(tape, bp, "drpn.hf1", diff, 1)?;
    let act = tape.gelu(inner);
    conv(tape, bp, "drpn.hf2", act, 1)
}

/// Shallow cube from the spectra field and the RGB channel mean.
pub fn shallow_spectral(tape: &mut Tape, bp: &BoundParams, y_gp: VarId, x: VarId) -> Result<VarId> {
    let xr = tape.slice0(x, 0, 1)?;
    let xg = tape.slice0(x, 1, 2)?;
    let xb = tape.slice0(x, 2, 3)?;
    let rg = tape.add(xr, xg)?;
    let rgb = tape.add(rg, xb)?;
    let x_m = tape.scale(rgb, 1.0 / 3.0);
    let cat = tape.concat0(&[y_gp, x_m])?;
    let inner = conv(tape, bp, "drpn.y1a", cat, 1)?;
    let act = tape.gelu(inner);
    conv(tape, bp, "drpn.y1b", act, 1)
}

/// Spatial refinement then high-frequency compensation.
pub fn prompt_fuse(
    tape: &mut Tape,
    bp: &BoundParams,
    y1: VarId,
    p_spa: VarId,
    p_hf: VarId,
) -> Result<(VarId, VarId)> {
    let c1 = tape.concat0(&[y1, p_spa])?;
    let y2 = conv(tape, bp, "drpn.y2", c1, 1)?;
    let c2 = tape.concat0(&[y2, p_hf])?;
    let y3 = conv(tape, bp, "drpn.y3", c2, 1)?;
    Ok((y2, y3))
}

/// Channel self-attention map over the preliminary cube: bias-free token
/// projections, L2-normalized along the token axis, temperature-scaled row
/// softmax. Scale-invariant in y3 by construction.
pub fn spectral_prompt(tape: &mut Tape, bp: &BoundParams, y3: VarId) -> Result<VarId> {
    let (b, h, w) = {
        let s = tape.val(y3).shape();
        (s[0], s[1], s[2])
    };
    let flat = tape.reshape(y3, vec![b, h * w])?;
    let tokens = tape.transpose2(flat)?; // [HW, B]
    let q = tape.matmul(tokens, bp.get("drpn.ssa.wq"))?;
    let k = tape.matmul(tokens, bp.get("drpn.ssa.wk"))?;
    let qn = l2_normalize_tokens(tape, q)?;
    let kn = l2_normalize_tokens(tape, k)?;
    let kt = tape.transpose2(kn)?;
    let scores = tape.matmul(kt, qn)?; // [C_feat, C_feat]
    let scaled = tape.mul(scores, bp.get("drpn.ssa.tau"))?;
    tape.softmax_axis(scaled, 1)
}

fn l2_normalize_tokens(tape: &mut Tape, x: VarId) -> Result<VarId> {
    let sq = tape.mul(x, x)?;
    let ss = tape.sum_axis(sq, 0)?;
    let norm = tape.sqrt(ss);
    let safe = tape.add_scalar(norm, 1e-12);
    tape.div(x, safe)
}

/// Cube-to-RGB head used by the projection loss.
pub fn h2r(tape: &mut Tape, bp: &BoundParams, y3: VarId) -> Result<VarId> {
    let inner = conv(tape, bp, "drpn.h2r1", y3, 1)?;
    let act = tape.gelu(inner);
    conv(tape, bp, "drpn.h2r2", act, 1)
}

/// Full neck forward.
pub fn drpn_forward(
    tape: &mut Tape,
    bp: &BoundParams,
    x: VarId,
    y_gp: VarId,
    frft_order: f64,
) -> Result<PromptVars> {
    let xs = tape.val(x).shape();
    if xs.len() != 3 || xs[0] != 3 {
        return Err(Error::InvalidArg(format!("drpn wants RGB [3,H,W], got {xs:?}")));
    }
    let (p_spa, f1) = spa_frft_prompt(tape, bp, x, frft_order)?;
    let p_hf = spa_hf_prompt(tape, bp, f1)?;
    let y1 = shallow_spectral(tape, bp, y_gp, x)?;
    let (_y2, y3) = prompt_fuse(tape, bp, y1, p_spa, p_hf)?;
    let p_spe = spectral_prompt(tape, bp, y3)?;
    Ok(PromptVars {
        p_spa,
        p_hf,
        p_spe,
        y3,
        f1,
    })
}

/// Run the neck without gradients and return plain tensors.
pub fn extract_prompts(
    params: &BTreeMap<String, Tensor>,
    x: &Tensor,
    y_gp: &Tensor,
    frft_order: f64,
) -> Result<PromptSet> {
    let mut tape = Tape::new();
    let bp = BoundParams::bind(&mut tape, params, false);
    let xv = tape.constant(x.clone());
    let gv = tape.constant(y_gp.clone());
    let pv = drpn_forward(&mut tape, &bp, xv, gv, frft_order)?;
    Ok(PromptSet {
        p_spa: tape.val(pv.p_spa).clone(),
        p_hf: tape.val(pv.p_hf).clone(),
        p_spe: tape.val(pv.p_spe).clone(),
        y3: tape.val(pv.y3).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::init_params;
    use crate::rng::Rng;

    const B: usize = 5;
    const C: usize = 4;

    fn toy_params(seed: u64) -> BTreeMap<String, Tensor> {
        init_params(&drpn_specs(B, C, 8), seed)
    }

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = Rng::from_seed(seed);
        Tensor::from_fn(shape, |_| rng.uniform())
    }

    fn forward(
        params: &BTreeMap<String, Tensor>,
        x: &Tensor,
        ygp: &Tensor,
    ) -> (Tape, BoundParams, PromptVars) {
        let mut tape = Tape::new();
        let bp = BoundParams::bind(&mut tape, params, false);
        let xv = tape.constant(x.clone());
        let gv = tape.constant(ygp.clone());
        let pv = drpn_forward(&mut tape, &bp, xv, gv, 0.5).unwrap();
        (tape, bp, pv)
    }

    #[test]
    fn shapes_match_contracts() {
        let params = toy_params(1);
        let x = rand_tensor(&[3, 8, 8], 2);
        let ygp = rand_tensor(&[B, 8, 8], 3);
        let (tape, _, pv) = forward(&params, &x, &ygp);
        assert_eq!(tape.val(pv.p_spa).shape(), &[C, 8, 8]);
        assert_eq!(tape.val(pv.p_hf).shape(), &[C, 8, 8]);
        assert_eq!(tape.val(pv.p_spe).shape(), &[C, C]);
        assert_eq!(tape.val(pv.y3).shape(), &[B, 8, 8]);
        assert_eq!(tape.val(pv.f1).shape(), &[C, 8, 8]);
    }

    #[test]
    fn zeroed_fusion_conv_kills_spatial_prompt() {
        let mut params = toy_params(4);
        params.insert("drpn.spa_fuse.w".into(), Tensor::zeros(&[C, 2 * C, 3, 3]));
        params.insert("drpn.spa_fuse.b".into(), Tensor::zeros(&[C]));
        let x = rand_tensor(&[3, 8, 8], 5);
        let ygp = rand_tensor(&[B, 8, 8], 6);
        let (tape, _, pv) = forward(&params, &x, &ygp);
        assert!(tape.val(pv.p_spa).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frft_round_trip_with_identity_scan() {
        // force the frft-domain scan to pass its input through: b_w = 0, d = 1
        let mut params = toy_params(7);
        params.insert("drpn.frft_ssm.b_w".into(), Tensor::zeros(&[2 * C, 8]));
        params.insert("drpn.frft_ssm.d".into(), Tensor::full(&[2 * C], 1.0));
        let x = rand_tensor(&[3, 8, 8], 8);
        let mut tape = Tape::new();
        let bp = BoundParams::bind(&mut tape, &params, false);
        let xv = tape.constant(x);
        let (_, f1) = spa_frft_prompt(&mut tape, &bp, xv, 0.5).unwrap();
        // rebuild the FRFT sub-path exactly as the branch does
        let f1t = tape.val(f1).clone();
        let (c, h, w) = (C, 8, 8);
        let f1r = tape.reshape(f1, vec![1, c, h, w]).unwrap();
        let z = tape.constant(Tensor::zeros(&[1, c, h, w]));
        let lifted = tape.concat0(&[f1r, z]).unwrap();
        let fwd = tape.frft2(lifted, 0.5).unwrap();
        let chans = tape.reshape(fwd, vec![2 * c, h, w]).unwrap();
        let vars = bp.ssm_vars("drpn.frft_ssm");
        let scanned = multi_direction_scan_tape(&mut tape, chans, &vars).unwrap();
        let restacked = tape.reshape(scanned, vec![2, c, h, w]).unwrap();
        let back = tape.frft2(restacked, -0.5).unwrap();
        let real = tape.slice0(back, 0, 1).unwrap();
        let f_frft = tape.reshape(real, vec![c, h, w]).unwrap();
        assert!(tape.val(f_frft).max_abs_diff(&f1t) < 1e-8);
    }

    #[test]
    fn constant_feature_yields_zero_hf_prompt() {
        let mut params = toy_params(9);
        params.insert("drpn.hf1.b".into(), Tensor::zeros(&[C]));
        params.insert("drpn.hf2.b".into(), Tensor::zeros(&[C]));
        let mut tape = Tape::new();
        let bp = BoundParams::bind(&mut tape, &params, false);
        let f1 = tape.constant(Tensor::full(&[C, 8, 8], 0.3));
        let p_hf = spa_hf_prompt(&mut tape, &bp, f1).unwrap();
        assert!(tape.val(p_hf).data().iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn hf_residual_removes_block_means() {
        // f1 - f2 on a 2x2-periodic pattern equals the pattern minus its block mean
        let pattern = Tensor::from_fn(&[1, 4, 4], |i| {
            let (r, c) = ((i / 4) % 2, (i % 4) % 2);
            [0.1, 0.5, 0.7, 0.3][r * 2 + c]
        });
        let mean = (0.1 + 0.5 + 0.7 + 0.3) / 4.0;
        let mut tape = Tape::new();
        let f1 = tape.constant(pattern.clone());
        let pooled = tape.avgpool2(f1).unwrap();
        let f2 = tape.upsample2(pooled).unwrap();
        let diff = tape.sub(f1, f2).unwrap();
        for (i, &v) in tape.val(diff).data().iter().enumerate() {
            assert!((v - (pattern.data()[i] - mean)).abs() < 1e-15);
        }
    }

    #[test]
    fn rgb_mean_is_exact() {
        // x with equal channels: x_m == that channel
        let base = rand_tensor(&[1, 8, 8], 11);
        let x = Tensor::from_fn(&[3, 8, 8], |i| base.data()[i % 64]);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let xr = tape.slice0(xv, 0, 1).unwrap();
        let xg = tape.slice0(xv, 1, 2).unwrap();
        let xb = tape.slice0(xv, 2, 3).unwrap();
        let s = tape.add(xr, xg).unwrap();
        let s = tape.add(s, xb).unwrap();
        let x_m = tape.scale(s, 1.0 / 3.0);
        assert!(tape.val(x_m).max_abs_diff(&base) < 1e-15);
        // and the constant case: (0.3, 0.6, 0.9) -> 0.6
        let xc = Tensor::from_fn(&[3, 4, 4], |i| [0.3, 0.6, 0.9][i / 16]);
        let xv = tape.constant(xc);
        let xr = tape.slice0(xv, 0, 1).unwrap();
        let xg = tape.slice0(xv, 1, 2).unwrap();
        let xb = tape.slice0(xv, 2, 3).unwrap();
        let s = tape.add(xr, xg).unwrap();
        let s = tape.add(s, xb).unwrap();
        let x_m = tape.scale(s, 1.0 / 3.0);
        assert!(tape
            .val(x_m)
            .data()
            .iter()
            .all(|&v| (v - 0.6).abs() < 1e-15));
    }

    #[test]
    fn fuse_is_linear_in_hf_prompt() {
        let params = toy_params(12);
        let y1 = rand_tensor(&[B, 8, 8], 13);
        let p_spa = rand_tensor(&[C, 8, 8], 14);
        let pa = rand_tensor(&[C, 8, 8], 15);
        let pb = rand_tensor(&[C, 8, 8], 16);
        let pab = Tensor::from_fn(&[C, 8, 8], |i| pa.data()[i] + pb.data()[i]);
        let zero = Tensor::zeros(&[C, 8, 8]);
        let run = |hf: &Tensor| -> Tensor {
            let mut tape = Tape::new();
            let bp = BoundParams::bind(&mut tape, &params, false);
            let y1v = tape.constant(y1.clone());
            let spav = tape.constant(p_spa.clone());
            let hfv = tape.constant(hf.clone());
            let (_, y3) = prompt_fuse(&mut tape, &bp, y1v, spav, hfv).unwrap();
            tape.val(y3).clone()
        };
        let (ya, yb, yab, y0) = (run(&pa), run(&pb), run(&pab), run(&zero));
        for i in 0..ya.numel() {
            let lhs = yab.data()[i] - ya.data()[i];
            let rhs = yb.data()[i] - y0.data()[i];
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn spectral_prompt_rows_are_stochastic() {
        let params = toy_params(17);
        let x = rand_tensor(&[3, 8, 8], 18);
        let ygp = rand_tensor(&[B, 8, 8], 19);
        let (tape, _, pv) = forward(&params, &x, &ygp);
        let p = tape.val(pv.p_spe);
        for r in 0..C {
            let sum: f64 = (0..C).map(|c| p.data()[r * C + c]).sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_temperature_gives_uniform_prompt() {
        let mut params = toy_params(20);
        params.insert("drpn.ssa.tau".into(), Tensor::zeros(&[1]));
        let x = rand_tensor(&[3, 8, 8], 21);
        let ygp = rand_tensor(&[B, 8, 8], 22);
        let (tape, _, pv) = forward(&params, &x, &ygp);
        for &v in tape.val(pv.p_spe).data() {
            assert!((v - 1.0 / C as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_prompt_is_scale_invariant() {
        let params = toy_params(23);
        let y3 = rand_tensor(&[B, 8, 8], 24);
        let scaled = Tensor::from_fn(&[B, 8, 8], |i| 3.7 * y3.data()[i]);
        let run = |t: &Tensor| -> Tensor {
            let mut tape = Tape::new();
            let bp = BoundParams::bind(&mut tape, &params, false);
            let v = tape.constant(t.clone());
            let p = spectral_prompt(&mut tape, &bp, v).unwrap();
            tape.val(p).clone()
        };
        let (a, b) = (run(&y3), run(&scaled));
        assert!(a.max_abs_diff(&b) < 1e-6);
    }

    #[test]
    fn identical_channels_give_identical_attention_rows() {
        // square identity projections expose the permutation symmetry
        let mut params = toy_params(25);
        let eye = Tensor::from_fn(&[B, B], |i| if i % (B + 1) == 0 { 1.0 } else { 0.0 });
        params.insert("drpn.ssa.wq".into(), eye.clone());
        params.insert("drpn.ssa.wk".into(), eye);
        // y3 with channels 1 and 3 identical
        let base = rand_tensor(&[B, 6, 6], 26);
        let y3 = Tensor::from_fn(&[B, 6, 6], |i| {
            let (ch, px) = (i / 36, i % 36);
            if ch == 3 {
                base.data()[36 + px]
            } else {
                base.data()[i]
            }
        });
        let mut tape = Tape::new();
        let bp = BoundParams::bind(&mut tape, &params, false);
        let v = tape.constant(y3);
        let p = spectral_prompt(&mut tape, &bp, v).unwrap();
        let pm = tape.val(p);
        for c in 0..B {
            assert!((pm.data()[B + c] - pm.data()[3 * B + c]).abs() < 1e-12);
        }
    }

    #[test]
    fn h2r_maps_to_rgb_and_constant_bias_case() {
        let mut params = toy_params(27);
        let y3 = rand_tensor(&[B, 8, 8], 28);
        let mut tape = Tape::new();
        let bp = BoundParams::bind(&mut tape, &params, false);
        let v = tape.constant(y3.clone());
        let out = h2r(&mut tape, &bp, v).unwrap();
        assert_eq!(tape.val(out).shape(), &[3, 8, 8]);

        params.insert("drpn.h2r1.w".into(), Tensor::zeros(&[C, B, 3, 3]));
        params.insert("drpn.h2r1.b".into(), Tensor::zeros(&[C]));
        params.insert("drpn.h2r2.w".into(), Tensor::zeros(&[3, C, 3, 3]));
        params.insert("drpn.h2r2.b".into(), Tensor::full(&[3], 0.42));
        let mut tape = Tape::new();
        let bp = BoundParams::bind(&mut tape, &params, false);
        let v = tape.constant(y3);
        let out = h2r(&mut tape, &bp, v).unwrap();
        assert!(tape.val(out).data().iter().all(|&v| v == 0.42));
    }

    #[test]
    fn gradient_reaches_y3_through_h2r() {
        let params = toy_params(29);
        let y3 = rand_tensor(&[B, 8, 8], 30);
        let x = rand_tensor(&[3, 8, 8], 31);
        let mut tape = Tape::new();
        let bp = BoundParams::bind(&mut tape, &params, false);
        let y3v = tape.leaf(y3, true);
        let xv = tape.constant(x);
        let mapped = h2r(&mut tape, &bp, y3v).unwrap();
        let diff = tape.sub(xv, mapped).unwrap();
        let loss = tape.mean_abs(diff);
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(y3v).unwrap();
        assert!(g.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn frequency_separation_between_prompts() {
        // energy centroid radius of the 2D Fourier magnitude: hf above spa,
        // averaged over seeds
        let mut spa_acc = 0.0;
        let mut hf_acc = 0.0;
        for seed in 0..20 {
            let params = toy_params(100 + seed);
            let x = rand_tensor(&[3, 8, 8], 200 + seed);
            let ygp = rand_tensor(&[B, 8, 8], 300 + seed);
            let (tape, _, pv) = forward(&params, &x, &ygp);
            spa_acc += centroid_radius(tape.val(pv.p_spa));
            hf_acc += centroid_radius(tape.val(pv.p_hf));
        }
        assert!(
            hf_acc / 20.0 > spa_acc / 20.0,
            "hf {hf_acc} vs spa {spa_acc}"
        );
    }

    /// Mean spectral radius of the 2D DFT magnitude over channels, with
    /// frequencies wrapped to [-pi, pi).
    fn centroid_radius(t: &Tensor) -> f64 {
        let s = t.shape();
        let (c, h, w) = (s[0], s[1], s[2]);
        let mut num = 0.0;
        let mut den = 0.0;
        for ci in 0..c {
            for fy in 0..h {
                for fx in 0..w {
                    let (mut re, mut im) = (0.0, 0.0);
                    for y in 0..h {
                        for x in 0..w {
                            let ph = -2.0 * std::f64::consts::PI
                                * (fy as f64 * y as f64 / h as f64
                                    + fx as f64 * x as f64 / w as f64);
                            let v = t.data()[(ci * h + y) * w + x];
                            re += v * ph.cos();
                            im += v * ph.sin();
                        }
                    }
                    let mag2 = re * re + im * im;
                    let wy = if fy > h / 2 { fy as f64 - h as f64 } else { fy as f64 } / h as f64;
                    let wx = if fx > w / 2 { fx as f64 - w as f64 } else { fx as f64 } / w as f64;
                    let r = (wy * wy + wx * wx).sqrt();
                    num += r * mag2;
                    den += mag2;
                }
            }
        }
        num / den
    }
}
