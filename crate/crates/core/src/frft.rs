//! Discrete fractional Fourier transform of arbitrary real order.
//!
//! Built on the eigenbasis of the DFT-commuting tridiagonal (Harper) matrix:
//! eigenvectors are split into circularly even/odd classes, each class is
//! diagonalized separately, and descending eigenvalue order inside a class
//! gives the Hermite ordering. The transform of order `a` is then
//! `V diag(exp(-i pi a k/2)) V^T`, which makes unitarity and order
//! additivity exact by construction. Apply cost is O(N^2) per vector, fine
//! for the map sizes this crate works at.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use nalgebra::{DMatrix, SymmetricEigen};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock, RwLock};

/// Eigenbasis plan for one signal length.
///
/// `basis` holds the N orthonormal eigenvectors column by column
/// (`basis[k*n + j]` is component j of vector k); `branch` holds the
/// eigenvalue-branch index per vector: {0..N-2, N} for even N and
/// {0..N-1} for odd N.
pub struct FrftPlan {
    n: usize,
    basis: Vec<f64>,
    branch: Vec<u32>,
}

impl FrftPlan {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn branch_indices(&self) -> &[u32] {
        &self.branch
    }

    pub fn basis_vector(&self, k: usize) -> &[f64] {
        &self.basis[k * self.n..(k + 1) * self.n]
    }

    /// Order-`a` transform of a complex vector given as (re, im) slices.
    pub fn apply(&self, a: f64, re: &[f64], im: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n;
        if re.len() != n || im.len() != n {
            return Err(Error::ShapeMismatch {
                op: "frft_1d",
                lhs: vec![re.len()],
                rhs: vec![n],
            });
        }
        let mut out_re = vec![0.0; n];
        let mut out_im = vec![0.0; n];
        self.apply_into(a, re, im, &mut out_re, &mut out_im);
        Ok((out_re, out_im))
    }

    fn apply_into(&self, a: f64, re: &[f64], im: &[f64], out_re: &mut [f64], out_im: &mut [f64]) {
        let n = self.n;
        out_re.fill(0.0);
        out_im.fill(0.0);
        for k in 0..n {
            let col = self.basis_vector(k);
            let mut cr = 0.0;
            let mut ci = 0.0;
            for j in 0..n {
                cr += col[j] * re[j];
                ci += col[j] * im[j];
            }
            let theta = -PI * a * self.branch[k] as f64 / 2.0;
            let (s, c) = theta.sin_cos();
            let pr = cr * c - ci * s;
            let pi_ = cr * s + ci * c;
            for j in 0..n {
                out_re[j] += col[j] * pr;
                out_im[j] += col[j] * pi_;
            }
        }
    }
}

/// Build the plan for length `n` (uncached).
pub fn build_plan(n: usize) -> Result<FrftPlan> {
    if n < 2 {
        return Err(Error::InvalidArg(format!("frft plan needs N >= 2, got {n}")));
    }
    // DFT-commuting circulant tridiagonal matrix.
    let mut s = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        s[(i, i)] = 2.0 * (2.0 * PI * i as f64 / n as f64).cos();
        s[(i, (i + 1) % n)] += 1.0;
        s[(i, (i + n - 1) % n)] += 1.0;
    }

    // Orthonormal bases of the circularly even / odd subspaces.
    // Even: delta_0, (delta_m + delta_{N-m})/sqrt2, and delta_{N/2} for even N.
    let half = 1.0 / 2f64.sqrt();
    let mut even_cols: Vec<Vec<f64>> = Vec::new();
    let mut odd_cols: Vec<Vec<f64>> = Vec::new();
    let mut e0 = vec![0.0; n];
    e0[0] = 1.0;
    even_cols.push(e0);
    for m in 1..n {
        if m >= n - m {
            break;
        }
        let mut u = vec![0.0; n];
        u[m] = half;
        u[n - m] = half;
        even_cols.push(u);
        let mut w = vec![0.0; n];
        w[m] = half;
        w[n - m] = -half;
        odd_cols.push(w);
    }
    if n % 2 == 0 {
        let mut mid = vec![0.0; n];
        mid[n / 2] = 1.0;
        even_cols.push(mid);
    }

    let project = |cols: &[Vec<f64>]| -> DMatrix<f64> {
        let k = cols.len();
        let mut sub = DMatrix::<f64>::zeros(k, k);
        for (i, ci) in cols.iter().enumerate() {
            // S * c_j projected on c_i
            for (j, cj) in cols.iter().enumerate() {
                let mut acc = 0.0;
                for r in 0..n {
                    let mut sv = 0.0;
                    for t in 0..n {
                        sv += s[(r, t)] * cj[t];
                    }
                    acc += ci[r] * sv;
                }
                sub[(i, j)] = acc;
            }
        }
        sub
    };

    // Diagonalize each parity class and sort by descending eigenvalue;
    // rank r becomes Hermite order 2r (even class) or 2r+1 (odd class).
    let mut basis = vec![0.0; n * n];
    let mut branch = vec![0u32; n];
    let mut slot = 0usize;
    for (cols, odd) in [(&even_cols, false), (&odd_cols, true)] {
        if cols.is_empty() {
            continue;
        }
        let eig = SymmetricEigen::new(project(cols));
        let k = cols.len();
        let mut idx: Vec<usize> = (0..k).collect();
        idx.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
        for (rank, &ei) in idx.iter().enumerate() {
            let dst = &mut basis[slot * n..(slot + 1) * n];
            for (ci, col) in cols.iter().enumerate() {
                let w = eig.eigenvectors[(ci, ei)];
                if w == 0.0 {
                    continue;
                }
                for j in 0..n {
                    dst[j] += w * col[j];
                }
            }
            branch[slot] = if odd { 2 * rank as u32 + 1 } else { 2 * rank as u32 };
            slot += 1;
        }
    }
    debug_assert_eq!(slot, n);
    Ok(FrftPlan { n, basis, branch })
}

fn plan_cache() -> &'static RwLock<HashMap<usize, Arc<FrftPlan>>> {
    static CACHE: OnceLock<RwLock<HashMap<usize, Arc<FrftPlan>>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Cached plan lookup; plans are immutable once built.
pub fn plan(n: usize) -> Result<Arc<FrftPlan>> {
    if let Some(p) = plan_cache().read().unwrap().get(&n) {
        return Ok(p.clone());
    }
    let built = Arc::new(build_plan(n)?);
    let mut guard = plan_cache().write().unwrap();
    Ok(guard.entry(n).or_insert(built).clone())
}

/// Separable 2D transform of a stacked complex map [2,C,H,W]
/// (index 0 = real plane, 1 = imaginary plane): order-`a` along rows,
/// then along columns, per channel. The inverse is the same call with `-a`.
pub fn apply_stacked_2d(t: &Tensor, a: f64) -> Result<Tensor> {
    let s = t.shape();
    if s.len() != 4 || s[0] != 2 {
        return Err(Error::InvalidArg(format!(
            "apply_stacked_2d wants [2,C,H,W], got {s:?}"
        )));
    }
    let (c, h, w) = (s[1], s[2], s[3]);
    let pw = plan(w)?;
    let ph = plan(h)?;
    let plane = c * h * w;
    let mut re = t.data()[..plane].to_vec();
    let mut im = t.data()[plane..].to_vec();
    let mut buf_re = vec![0.0; w.max(h)];
    let mut buf_im = vec![0.0; w.max(h)];
    let mut col_re = vec![0.0; h];
    let mut col_im = vec![0.0; h];
    for ci in 0..c {
        let base = ci * h * w;
        for y in 0..h {
            let row = base + y * w;
            pw.apply_into(a, &re[row..row + w], &im[row..row + w], &mut buf_re[..w], &mut buf_im[..w]);
            re[row..row + w].copy_from_slice(&buf_re[..w]);
            im[row..row + w].copy_from_slice(&buf_im[..w]);
        }
        for x in 0..w {
            for y in 0..h {
                col_re[y] = re[base + y * w + x];
                col_im[y] = im[base + y * w + x];
            }
            ph.apply_into(a, &col_re, &col_im, &mut buf_re[..h], &mut buf_im[..h]);
            for y in 0..h {
                re[base + y * w + x] = buf_re[y];
                im[base + y * w + x] = buf_im[y];
            }
        }
    }
    let mut data = re;
    data.extend_from_slice(&im);
    Tensor::new(vec![2, c, h, w], data)
}
