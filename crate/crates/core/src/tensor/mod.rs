//! Dense tensors and reverse-mode differentiation.
//!
//! Values are stored contiguously in row-major order as `f64`; a tensor
//! tagged [`Dtype::F32`] is rounded to f32 precision after every operation
//! while reductions still accumulate in f64. Complex data never gets its own
//! dtype: it travels as a leading length-2 axis of paired real tensors.

mod adam;
mod kernels;
mod tape;

pub use adam::OptimizerState;
pub use tape::{Gradients, Tape, VarId};
pub(crate) use tape::scan_recurrence_with_state;

/// Zero-order-hold pieces shared with the scan module.
pub(crate) mod zoh {
    pub(crate) use super::kernels::softplus;
    pub(crate) use super::tape::zoh_factors as factors;
}

/// Windowing kernels shared with the metric implementations.
pub(crate) mod win {
    pub(crate) use super::kernels::{gauss_taps, gauss_valid_fwd};
}

use crate::error::{Error, Result};

/// Element precision tag. Storage is always f64; `F32` rounds results to
/// f32 after each op so fp32 pipelines stay honest about their precision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn promote(self, other: Dtype) -> Dtype {
        if self == Dtype::F64 || other == Dtype::F64 {
            Dtype::F64
        } else {
            Dtype::F32
        }
    }
}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    dtype: Dtype,
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        if numel_of(&shape) != data.len() {
            return Err(Error::InvalidArg(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                numel_of(&shape),
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            dtype: Dtype::F64,
        })
    }

    pub fn with_dtype(shape: Vec<usize>, data: Vec<f64>, dtype: Dtype) -> Result<Tensor> {
        let mut t = Tensor::new(shape, data)?;
        t.dtype = dtype;
        t.round_to_dtype();
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            data: vec![0.0; numel_of(shape)],
            shape: shape.to_vec(),
            dtype: Dtype::F64,
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        Tensor {
            data: vec![v; numel_of(shape)],
            shape: shape.to_vec(),
            dtype: Dtype::F64,
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![],
            data: vec![v],
            dtype: Dtype::F64,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Tensor {
        let n = numel_of(shape);
        Tensor {
            data: (0..n).map(&mut f).collect(),
            shape: shape.to_vec(),
            dtype: Dtype::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar");
        self.data[0]
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor> {
        if numel_of(&shape) != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        let mut t = self.clone();
        t.shape = shape;
        Ok(t)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn set_dtype(&mut self, dtype: Dtype) {
        self.dtype = dtype;
        self.round_to_dtype();
    }

    pub(crate) fn round_to_dtype(&mut self) {
        if self.dtype == Dtype::F32 {
            for v in &mut self.data {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Max-norm of the difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Row-major strides.
pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![0; shape.len()];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        s[i] = acc;
        acc *= shape[i];
    }
    s
}

/// Broadcast two shapes (right-aligned; dims must match or be 1).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i < nd - a.len() { 1 } else { a[i - (nd - a.len())] };
        let db = if i < nd - b.len() { 1 } else { b[i - (nd - b.len())] };
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return Err(Error::ShapeMismatch {
                op: "broadcast",
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
    }
    Ok(out)
}

/// Strides for reading `shape` as if broadcast to `out_shape` (0 where a dim
/// is expanded).
pub(crate) fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let nd = out_shape.len();
    let base = strides_of(shape);
    let mut s = vec![0; nd];
    let offset = nd - shape.len();
    for i in 0..shape.len() {
        s[offset + i] = if shape[i] == 1 { 0 } else { base[i] };
    }
    s
}

/// Apply `f` elementwise over the broadcast of `a` and `b`.
pub(crate) fn broadcast_binary(
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape == b.shape {
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::new(a.shape.clone(), data);
    }
    let out_shape = broadcast_shape(&a.shape, &b.shape)?;
    let sa = broadcast_strides(&a.shape, &out_shape);
    let sb = broadcast_strides(&b.shape, &out_shape);
    let n = numel_of(&out_shape);
    let nd = out_shape.len();
    let mut idx = vec![0usize; nd];
    let mut oa = 0usize;
    let mut ob = 0usize;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(f(a.data[oa], b.data[ob]));
        for d in (0..nd).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
        }
    }
    Tensor::new(out_shape, data)
}

/// Sum `grad` down to `target` shape (the adjoint of broadcasting).
pub(crate) fn reduce_to_shape(grad: &Tensor, target: &[usize]) -> Tensor {
    if grad.shape() == target {
        return grad.clone();
    }
    let nd = grad.shape.len();
    let offset = nd - target.len();
    let mut out = Tensor::zeros(target);
    let st = strides_of(target);
    let gshape = grad.shape.clone();
    let mut idx = vec![0usize; nd];
    for (lin, &g) in grad.data.iter().enumerate() {
        let _ = lin;
        let mut to = 0usize;
        for (d, &i) in idx.iter().enumerate().skip(offset) {
            let td = target[d - offset];
            if td != 1 {
                to += i * st[d - offset];
            }
        }
        out.data[to] += g;
        for d in (0..nd).rev() {
            idx[d] += 1;
            if idx[d] < gshape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_length_enforced() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3], &[2, 3]).unwrap(), vec![2, 3]);
        assert_eq!(broadcast_shape(&[2, 1], &[1, 3]).unwrap(), vec![2, 3]);
        assert_eq!(broadcast_shape(&[3], &[2, 3]).unwrap(), vec![2, 3]);
        assert!(broadcast_shape(&[2, 3], &[2, 4]).is_err());
    }

    #[test]
    fn broadcast_binary_against_manual() {
        let a = Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![1, 3], vec![10.0, 20.0, 30.0]).unwrap();
        let c = broadcast_binary(&a, &b, |x, y| x + y).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[11.0, 21.0, 31.0, 12.0, 22.0, 32.0]);
    }

    #[test]
    fn reduce_to_shape_sums_expanded_axes() {
        let g = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = reduce_to_shape(&g, &[1, 3]);
        assert_eq!(r.data(), &[5.0, 7.0, 9.0]);
        let r2 = reduce_to_shape(&g, &[2, 1]);
        assert_eq!(r2.data(), &[6.0, 15.0]);
        let r3 = reduce_to_shape(&g, &[3]);
        assert_eq!(r3.data(), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn f32_rounding() {
        let t = Tensor::with_dtype(vec![1], vec![0.1], Dtype::F32).unwrap();
        assert_eq!(t.data()[0], 0.1f32 as f64);
    }
}
