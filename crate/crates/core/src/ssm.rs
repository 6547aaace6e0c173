//! Selective state-space scans with four-direction 2D flattening.
//!
//! The sequential recurrence in [`selective_scan`] is the normative
//! semantics; [`selective_scan_fast`] is a blocked associative-scan
//! evaluation of the same recurrence and must agree to 1e-10 relative.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{scan_recurrence_with_state, Tape, Tensor, VarId};

/// The four 2D scanning paths: row-major, column-major, and their reverses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanDirection {
    LeftRight,
    TopDown,
    RightLeft,
    DownTop,
}

impl ScanDirection {
    pub const ALL: [ScanDirection; 4] = [
        ScanDirection::LeftRight,
        ScanDirection::TopDown,
        ScanDirection::RightLeft,
        ScanDirection::DownTop,
    ];

    /// Token order: `order(h,w)[t]` is the row-major pixel index visited at
    /// sequence position `t`. Each order is a bijection on H*W.
    pub fn order(self, h: usize, w: usize) -> Vec<usize> {
        let l = h * w;
        match self {
            ScanDirection::LeftRight => (0..l).collect(),
            ScanDirection::RightLeft => (0..l).rev().collect(),
            ScanDirection::TopDown => (0..l).map(|t| (t % h) * w + t / h).collect(),
            ScanDirection::DownTop => (0..l).map(|t| {
                let s = l - 1 - t;
                (s % h) * w + s / h
            }).collect(),
        }
    }
}

/// Learnable parameters of one selective scan.
///
/// Projections act on row vectors: `delta_raw = x . delta_w + delta_b`,
/// `B_t = x . b_w`, `C_t = x . c_w`. `A = -exp(a_log)` is strictly negative.
#[derive(Clone, Debug)]
pub struct SsmParams {
    pub a_log: Tensor,   // [C, N]
    pub delta_w: Tensor, // [C, C]
    pub delta_b: Tensor, // [C]
    pub b_w: Tensor,     // [C, N]
    pub c_w: Tensor,     // [C, N]
    pub d: Tensor,       // [C]
}

impl SsmParams {
    pub fn channels(&self) -> usize {
        self.a_log.shape()[0]
    }

    pub fn state_size(&self) -> usize {
        self.a_log.shape()[1]
    }

    /// Small random init: A = -(n+1), per-channel dt in [1e-3, 1e-1].
    pub fn init(c: usize, n: usize, rng: &mut Rng) -> SsmParams {
        let a_log = Tensor::from_fn(&[c, n], |i| ((i % n + 1) as f64).ln());
        let scale = (1.0 / c as f64).sqrt();
        let delta_w = Tensor::from_fn(&[c, c], |_| rng.normal() * scale * 0.1);
        let delta_b = Tensor::from_fn(&[c], |_| {
            let dt = 1e-3 * (100.0f64).powf(rng.uniform());
            // inverse softplus
            (dt.exp() - 1.0).ln()
        });
        let b_w = Tensor::from_fn(&[c, n], |_| rng.normal() * scale);
        let c_w = Tensor::from_fn(&[c, n], |_| rng.normal() * scale);
        let d = Tensor::full(&[c], 1.0);
        SsmParams {
            a_log,
            delta_w,
            delta_b,
            b_w,
            c_w,
            d,
        }
    }
}

/// Zero-order-hold discretization of (delta, a, b) into per-step factors:
/// `a_bar[t,c,n] = exp(delta[t,c] * a[c,n])`,
/// `b_bar[t,c,n] = (a_bar - 1)/a * b[t,n]`, with the `delta*b` limit for
/// tiny |a|.
pub fn discretize(delta: &Tensor, a: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
    let (sd, sa, sb) = (delta.shape(), a.shape(), b.shape());
    if sd.len() != 2 || sa.len() != 2 || sb.len() != 2 || sd[1] != sa[0] || sb[0] != sd[0] {
        return Err(Error::ShapeMismatch {
            op: "discretize",
            lhs: sd.to_vec(),
            rhs: sa.to_vec(),
        });
    }
    let (l, c) = (sd[0], sd[1]);
    let n = sa[1];
    let mut abar = Tensor::zeros(&[l, c, n]);
    let mut bbar = Tensor::zeros(&[l, c, n]);
    for t in 0..l {
        for ci in 0..c {
            let dv = delta.data()[t * c + ci];
            for ni in 0..n {
                let (ab, coef) = crate::tensor::zoh::factors(dv, a.data()[ci * n + ni]);
                abar.data_mut()[(t * c + ci) * n + ni] = ab;
                bbar.data_mut()[(t * c + ci) * n + ni] = coef * b.data()[t * n + ni];
            }
        }
    }
    Ok((abar, bbar))
}

/// The raw recurrence, given already-discretized factors. Exposed so the
/// hand-unrolled oracles can hit the reference semantics directly.
pub fn recurrence(
    abar: &Tensor, // [L,C,N]
    bbar: &Tensor, // [L,C,N]
    c_seq: &Tensor, // [L,N]
    d: &Tensor,    // [C]
    x: &Tensor,    // [L,C]
) -> Tensor {
    let s = abar.shape();
    let (l, c, n) = (s[0], s[1], s[2]);
    let mut h = vec![0.0; c * n];
    let mut y = Tensor::zeros(&[l, c]);
    for t in 0..l {
        for ci in 0..c {
            let xv = x.data()[t * c + ci];
            let mut acc = 0.0;
            for ni in 0..n {
                let idx = (t * c + ci) * n + ni;
                let hv = abar.data()[idx] * h[ci * n + ni] + bbar.data()[idx] * xv;
                h[ci * n + ni] = hv;
                acc += c_seq.data()[t * n + ni] * hv;
            }
            y.data_mut()[t * c + ci] = acc + d.data()[ci] * xv;
        }
    }
    y
}

fn project(x: &Tensor, p: &SsmParams) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    let s = x.shape();
    if s.len() != 2 || s[1] != p.channels() {
        return Err(Error::ShapeMismatch {
            op: "selective_scan",
            lhs: s.to_vec(),
            rhs: vec![p.channels()],
        });
    }
    if !x.is_finite() {
        return Err(Error::NonFiniteValue("selective_scan input"));
    }
    let (l, c) = (s[0], s[1]);
    let n = p.state_size();
    let xm = x.data();
    let mut delta = Tensor::zeros(&[l, c]);
    let mut b_seq = Tensor::zeros(&[l, n]);
    let mut c_seq = Tensor::zeros(&[l, n]);
    for t in 0..l {
        for j in 0..c {
            let mut acc = p.delta_b.data()[j];
            for i in 0..c {
                acc += xm[t * c + i] * p.delta_w.data()[i * c + j];
            }
            delta.data_mut()[t * c + j] = crate::tensor::zoh::softplus(acc);
        }
        for j in 0..n {
            let (mut accb, mut accc) = (0.0, 0.0);
            for i in 0..c {
                accb += xm[t * c + i] * p.b_w.data()[i * n + j];
                accc += xm[t * c + i] * p.c_w.data()[i * n + j];
            }
            b_seq.data_mut()[t * n + j] = accb;
            c_seq.data_mut()[t * n + j] = accc;
        }
    }
    let a = Tensor::from_fn(&[c, n], |i| -p.a_log.data()[i].exp());
    Ok((delta, b_seq, c_seq, a))
}

/// Sequential selective scan over a [L,C] sequence — the reference path.
pub fn selective_scan(x: &Tensor, p: &SsmParams) -> Result<Tensor> {
    let (delta, b_seq, c_seq, a) = project(x, p)?;
    let (l, c) = (x.shape()[0], x.shape()[1]);
    let n = p.state_size();
    let (y, _) = scan_recurrence_with_state(
        x.data(),
        delta.data(),
        b_seq.data(),
        c_seq.data(),
        a.data(),
        p.d.data(),
        l,
        c,
        n,
    );
    Tensor::new(vec![l, c], y)
}

const BLOCK: usize = 64;

/// Blocked associative-scan evaluation of the same recurrence: per-lane
/// block aggregates (prod a_bar, folded input) chained first, then each
/// block re-expanded from its carried prefix state.
pub fn selective_scan_fast(x: &Tensor, p: &SsmParams) -> Result<Tensor> {
    let (delta, b_seq, c_seq, a) = project(x, p)?;
    let (l, c) = (x.shape()[0], x.shape()[1]);
    let n = p.state_size();
    let mut y = Tensor::zeros(&[l, c]);
    // residual path once per element
    for t in 0..l {
        for ci in 0..c {
            y.data_mut()[t * c + ci] = p.d.data()[ci] * x.data()[t * c + ci];
        }
    }
    let nblocks = l.div_ceil(BLOCK);
    let mut local_h = vec![0.0; BLOCK];
    let mut prefix_a = vec![0.0; BLOCK];
    for ci in 0..c {
        for ni in 0..n {
            let av = a.data()[ci * n + ni];
            // pass 1: per-block aggregate (A, U) as a first-order monoid,
            // chained across blocks to produce each block's entry state
            let mut carry = vec![0.0; nblocks + 1];
            for blk in 0..nblocks {
                let t0 = blk * BLOCK;
                let t1 = (t0 + BLOCK).min(l);
                let mut aa = 1.0;
                let mut uu = 0.0;
                for t in t0..t1 {
                    let (ab, coef) = crate::tensor::zoh::factors(delta.data()[t * c + ci], av);
                    let bb = coef * b_seq.data()[t * n + ni];
                    aa *= ab;
                    uu = ab * uu + bb * x.data()[t * c + ci];
                }
                carry[blk + 1] = aa * carry[blk] + uu;
            }
            // pass 2: expand inside each block from the carried state
            for blk in 0..nblocks {
                let t0 = blk * BLOCK;
                let t1 = (t0 + BLOCK).min(l);
                let mut hloc = 0.0;
                let mut pa = 1.0;
                for t in t0..t1 {
                    let (ab, coef) = crate::tensor::zoh::factors(delta.data()[t * c + ci], av);
                    let bb = coef * b_seq.data()[t * n + ni];
                    hloc = ab * hloc + bb * x.data()[t * c + ci];
                    pa *= ab;
                    local_h[t - t0] = hloc;
                    prefix_a[t - t0] = pa;
                }
                for t in t0..t1 {
                    let h = prefix_a[t - t0] * carry[blk] + local_h[t - t0];
                    y.data_mut()[t * c + ci] += c_seq.data()[t * n + ni] * h;
                }
            }
        }
    }
    Ok(y)
}

/// Flatten [C,H,W] to a [H*W, C] sequence along `dir` (pure helper).
pub fn flatten_2d(f: &Tensor, dir: ScanDirection) -> Tensor {
    let s = f.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let order = dir.order(h, w);
    let l = h * w;
    Tensor::from_fn(&[l, c], |i| {
        let (t, ci) = (i / c, i % c);
        f.data()[ci * l + order[t]]
    })
}

/// Inverse of [`flatten_2d`].
pub fn unflatten_2d(seq: &Tensor, dir: ScanDirection, h: usize, w: usize) -> Tensor {
    let c = seq.shape()[1];
    let order = dir.order(h, w);
    let l = h * w;
    let mut out = Tensor::zeros(&[c, h, w]);
    for (t, &p) in order.iter().enumerate() {
        for ci in 0..c {
            out.data_mut()[ci * l + p] = seq.data()[t * c + ci];
        }
    }
    out
}

/// Scan a [C,H,W] map along all four directions and average the outputs.
pub fn multi_direction_scan(f: &Tensor, p: &SsmParams) -> Result<Tensor> {
    let s = f.shape();
    if s.len() != 3 {
        return Err(Error::InvalidArg(format!(
            "multi_direction_scan on shape {s:?}"
        )));
    }
    let (h, w) = (s[1], s[2]);
    let mut acc: Option<Tensor> = None;
    for dir in ScanDirection::ALL {
        let seq = flatten_2d(f, dir);
        let y = selective_scan(&seq, p)?;
        let back = unflatten_2d(&y, dir, h, w);
        acc = Some(match acc {
            None => back,
            Some(mut a) => {
                for (av, bv) in a.data_mut().iter_mut().zip(back.data()) {
                    *av += bv;
                }
                a
            }
        });
    }
    let mut out = acc.unwrap();
    for v in out.data_mut() {
        *v *= 0.25;
    }
    Ok(out)
}

/// Tape-side handles for one scan's parameters.
#[derive(Clone, Copy)]
pub struct SsmVars {
    pub a_log: VarId,
    pub delta_w: VarId,
    pub delta_b: VarId,
    pub b_w: VarId,
    pub c_w: VarId,
    pub d: VarId,
}

/// One directional scan recorded on the tape.
pub fn scan_dir_tape(tape: &mut Tape, f: VarId, v: &SsmVars, dir: ScanDirection) -> Result<VarId> {
    let (h, w) = {
        let s = tape.val(f).shape();
        (s[1], s[2])
    };
    let xd = tape.flatten_dir(f, dir)?;
    let raw = tape.matmul(xd, v.delta_w)?;
    let raw = tape.add(raw, v.delta_b)?;
    let delta = tape.softplus(raw);
    let b_seq = tape.matmul(xd, v.b_w)?;
    let c_seq = tape.matmul(xd, v.c_w)?;
    let ea = tape.exp(v.a_log);
    let a = tape.neg(ea);
    let y = tape.selective_scan(xd, delta, b_seq, c_seq, a, v.d)?;
    tape.unflatten_dir(y, dir, h, w)
}

/// Four-direction scan on the tape; outputs averaged.
pub fn multi_direction_scan_tape(tape: &mut Tape, f: VarId, v: &SsmVars) -> Result<VarId> {
    let mut acc: Option<VarId> = None;
    for dir in ScanDirection::ALL {
        let y = scan_dir_tape(tape, f, v, dir)?;
        acc = Some(match acc {
            None => y,
            Some(a) => tape.add(a, y)?,
        });
    }
    Ok(tape.scale(acc.unwrap(), 0.25))
}
