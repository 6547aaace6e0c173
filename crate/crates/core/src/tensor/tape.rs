//! Wengert tape: operations recorded during the forward pass, replayed in
//! reverse for gradients. Every value lives in the tape arena and is
//! addressed by [`VarId`]; nodes always precede their consumers, so a single
//! reverse sweep settles every gradient.

use super::kernels as k;
use super::{broadcast_binary, numel_of, reduce_to_shape, Dtype, Tensor};
use crate::error::{Error, Result};
use crate::ssm::ScanDirection;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarId(pub(crate) usize);

#[derive(Clone, Copy, Debug)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug)]
enum UnKind {
    Silu,
    Gelu,
    Softplus,
    Exp,
    Sqrt,
    Neg,
    Abs,
}

enum Op {
    Leaf { requires_grad: bool },
    Binary { kind: BinKind, a: VarId, b: VarId },
    Unary { kind: UnKind, x: VarId },
    Scale { x: VarId, f: f64 },
    AddScalar { x: VarId },
    SoftmaxAxis { x: VarId, axis: usize },
    SumAll { x: VarId },
    MeanAll { x: VarId },
    L1Sum { x: VarId },
    SumAxis { x: VarId, axis: usize },
    Matmul { a: VarId, b: VarId },
    Transpose2 { x: VarId },
    Conv3x3 { x: VarId, w: VarId, b: VarId, stride: usize },
    AvgPool2 { x: VarId },
    Upsample2 { x: VarId },
    EdgePad { x: VarId },
    GaussValid { x: VarId, taps: Vec<f64> },
    Concat0 { parts: Vec<VarId> },
    Slice0 { x: VarId, from: usize, to: usize },
    Reshape { x: VarId },
    GatherPixels { x: VarId, locs: Vec<(usize, usize)> },
    BilinearResize { x: VarId },
    FlattenDir { x: VarId, dir: ScanDirection },
    UnflattenDir { x: VarId, dir: ScanDirection, h: usize, w: usize },
    SelectiveScan {
        x: VarId,
        delta: VarId,
        b_seq: VarId,
        c_seq: VarId,
        a: VarId,
        d: VarId,
        hidden: Vec<f64>,
    },
    Frft2 { x: VarId, order: f64 },
}

struct Entry {
    op: Op,
    val: Tensor,
    needs_grad: bool,
}

/// Gradients keyed by [`VarId`], produced by [`Tape::backward`].
pub struct Gradients {
    g: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: VarId) -> Option<&Tensor> {
        self.g.get(v.0).and_then(|o| o.as_ref())
    }
}

/// Recording tape for one forward/backward pass. Single-threaded by design;
/// construct a fresh tape per training step.
#[derive(Default)]
pub struct Tape {
    entries: Vec<Entry>,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Register a leaf. Gradients are produced only for `requires_grad` leaves.
    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> VarId {
        self.push(Op::Leaf { requires_grad }, t, requires_grad)
    }

    /// Leaf without gradient tracking.
    pub fn constant(&mut self, t: Tensor) -> VarId {
        self.leaf(t, false)
    }

    pub fn val(&self, v: VarId) -> &Tensor {
        &self.entries[v.0].val
    }

    fn push(&mut self, op: Op, mut val: Tensor, needs_grad: bool) -> VarId {
        val.round_to_dtype();
        self.entries.push(Entry {
            op,
            val,
            needs_grad,
        });
        VarId(self.entries.len() - 1)
    }

    fn needs(&self, ids: &[VarId]) -> bool {
        ids.iter().any(|v| self.entries[v.0].needs_grad)
    }

    fn out_dtype(&self, ids: &[VarId]) -> Dtype {
        ids.iter()
            .fold(Dtype::F32, |d, v| d.promote(self.entries[v.0].val.dtype()))
    }

    // ---- elementwise -----------------------------------------------------

    fn binary(&mut self, kind: BinKind, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = (&self.entries[a.0].val, &self.entries[b.0].val);
        let f: fn(f64, f64) -> f64 = match kind {
            BinKind::Add => |x, y| x + y,
            BinKind::Sub => |x, y| x - y,
            BinKind::Mul => |x, y| x * y,
            BinKind::Div => |x, y| x / y,
        };
        let mut out = broadcast_binary(ta, tb, f).map_err(|e| match e {
            Error::ShapeMismatch { lhs, rhs, .. } => Error::ShapeMismatch {
                op: match kind {
                    BinKind::Add => "add",
                    BinKind::Sub => "sub",
                    BinKind::Mul => "mul",
                    BinKind::Div => "div",
                },
                lhs,
                rhs,
            },
            e => e,
        })?;
        out.set_dtype(self.out_dtype(&[a, b]));
        let ng = self.needs(&[a, b]);
        Ok(self.push(Op::Binary { kind, a, b }, out, ng))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary(BinKind::Add, a, b)
    }
    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary(BinKind::Sub, a, b)
    }
    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary(BinKind::Mul, a, b)
    }
    pub fn div(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary(BinKind::Div, a, b)
    }

    fn unary(&mut self, kind: UnKind, x: VarId) -> VarId {
        let tx = &self.entries[x.0].val;
        let f: fn(f64) -> f64 = match kind {
            UnKind::Silu => |v| v * k::sigmoid(v),
            UnKind::Gelu => k::gelu,
            UnKind::Softplus => k::softplus,
            UnKind::Exp => f64::exp,
            UnKind::Sqrt => f64::sqrt,
            UnKind::Neg => |v| -v,
            UnKind::Abs => f64::abs,
        };
        let data = tx.data().iter().map(|&v| f(v)).collect();
        let mut out = Tensor::new(tx.shape().to_vec(), data).expect("unary keeps shape");
        out.set_dtype(self.out_dtype(&[x]));
        let ng = self.needs(&[x]);
        self.push(Op::Unary { kind, x }, out, ng)
    }

    pub fn silu(&mut self, x: VarId) -> VarId {
        self.unary(UnKind::Silu, x)
    }
    pub fn gelu(&mut self, x: VarId) -> VarId {
        self.unary(UnKind::Gelu, x)
    }
    pub fn softplus(&mut self, x: VarId) -> VarId {
        self.unary(UnKind::Softplus, x)
    }
    pub fn exp(&mut self, x: VarId) -> VarId {
        self.unary(UnKind::Exp, x)
    }
    pub fn sqrt(&mut self, x: VarId) -> VarId {
        self.unary(UnKind::Sqrt, x)
    }
    pub fn neg(&mut self, x: VarId) -> VarId {
        self.unary(UnKind::Neg, x)
    }
    pub fn abs(&mut self, x: VarId) -> VarId {
        self.unary(UnKind::Abs, x)
    }

    pub fn scale(&mut self, x: VarId, f: f64) -> VarId {
        let tx = &self.entries[x.0].val;
        let data = tx.data().iter().map(|&v| v * f).collect();
        let mut out = Tensor::new(tx.shape().to_vec(), data).unwrap();
        out.set_dtype(self.out_dtype(&[x]));
        let ng = self.needs(&[x]);
        self.push(Op::Scale { x, f }, out, ng)
    }

    pub fn add_scalar(&mut self, x: VarId, c: f64) -> VarId {
        let tx = &self.entries[x.0].val;
        let data = tx.data().iter().map(|&v| v + c).collect();
        let mut out = Tensor::new(tx.shape().to_vec(), data).unwrap();
        out.set_dtype(self.out_dtype(&[x]));
        let ng = self.needs(&[x]);
        self.push(Op::AddScalar { x }, out, ng)
    }

    pub fn softmax_axis(&mut self, x: VarId, axis: usize) -> Result<VarId> {
        let tx = &self.entries[x.0].val;
        if axis >= tx.shape().len() {
            return Err(Error::InvalidArg(format!(
                "softmax axis {axis} out of range for shape {:?}",
                tx.shape()
            )));
        }
        let (outer, n, inner) = lane_split(tx.shape(), axis);
        let mut data = tx.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut m = f64::NEG_INFINITY;
                for j in 0..n {
                    m = m.max(data[base + j * inner]);
                }
                let mut s = 0.0;
                for j in 0..n {
                    let e = (data[base + j * inner] - m).exp();
                    data[base + j * inner] = e;
                    s += e;
                }
                for j in 0..n {
                    data[base + j * inner] /= s;
                }
            }
        }
        let mut out = Tensor::new(tx.shape().to_vec(), data).unwrap();
        out.set_dtype(self.out_dtype(&[x]));
        let ng = self.needs(&[x]);
        Ok(self.push(Op::SoftmaxAxis { x, axis }, out, ng))
    }

    // ---- reductions ------------------------------------------------------

    pub fn sum_all(&mut self, x: VarId) -> VarId {
        let s: f64 = self.entries[x.0].val.data().iter().sum();
        let ng = self.needs(&[x]);
        let mut out = Tensor::scalar(s);
        out.set_dtype(self.out_dtype(&[x]));
        self.push(Op::SumAll { x }, out, ng)
    }

    pub fn mean_all(&mut self, x: VarId) -> VarId {
        let t = &self.entries[x.0].val;
        let s: f64 = t.data().iter().sum::<f64>() / t.numel() as f64;
        let ng = self.needs(&[x]);
        let mut out = Tensor::scalar(s);
        out.set_dtype(self.out_dtype(&[x]));
        self.push(Op::MeanAll { x }, out, ng)
    }

    /// Sum of absolute values.
    pub fn l1_sum(&mut self, x: VarId) -> VarId {
        let s: f64 = self.entries[x.0].val.data().iter().map(|v| v.abs()).sum();
        let ng = self.needs(&[x]);
        let mut out = Tensor::scalar(s);
        out.set_dtype(self.out_dtype(&[x]));
        self.push(Op::L1Sum { x }, out, ng)
    }

    /// Mean absolute value; the workhorse of the L1 losses.
    pub fn mean_abs(&mut self, x: VarId) -> VarId {
        let n = self.entries[x.0].val.numel();
        let s = self.l1_sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Sum over one axis, keeping it as size 1.
    pub fn sum_axis(&mut self, x: VarId, axis: usize) -> Result<VarId> {
        let tx = &self.entries[x.0].val;
        if axis >= tx.shape().len() {
            return Err(Error::InvalidArg(format!(
                "sum axis {axis} out of range for shape {:?}",
                tx.shape()
            )));
        }
        let (outer, n, inner) = lane_split(tx.shape(), axis);
        let mut shape = tx.shape().to_vec();
        shape[axis] = 1;
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    data[o * inner + i] += tx.data()[o * n * inner + j * inner + i];
                }
            }
        }
        let mut out = Tensor::new(shape, data).unwrap();
        out.set_dtype(self.out_dtype(&[x]));
        let ng = self.needs(&[x]);
        Ok(self.push(Op::SumAxis { x, axis }, out, ng))
    }

    // ---- linear algebra --------------------------------------------------

    /// Matrix product; equal leading batch dims when rank > 2.
    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = (&self.entries[a.0].val, &self.entries[b.0].val);
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() < 2 || sb.len() < 2 || sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2]
        {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, ka) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, p) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if ka != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let mut data = Vec::with_capacity(batch * m * p);
        for bi in 0..batch {
            let pa = &ta.data()[bi * m * ka..(bi + 1) * m * ka];
            let pb = &tb.data()[bi * ka * p..(bi + 1) * ka * p];
            data.extend_from_slice(&k::matmul2(pa, pb, m, ka, p));
        }
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.push(m);
        shape.push(p);
        let mut out = Tensor::new(shape, data).unwrap();
        out.set_dtype(self.out_dtype(&[a, b]));
        let ng = self.needs(&[a, b]);
        Ok(self.push(Op::Matmul { a, b }, out, ng))
    }

    pub fn transpose2(&mut self, x: VarId) -> Result<VarId> {
        let tx = &self.entries[x.0].val;
        if tx.shape().len() != 2 {
            return Err(Error::InvalidArg(format!(
                "transpose2 wants rank 2, got {:?}",
                tx.shape()
            )));
        }
        let (r, c) = (tx.shape()[0], tx.shape()[1]);
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data_mut()[j * r + i] = tx.data()[i * c + j];
            }
        }
        out.set_dtype(self.out_dtype(&[x]));
        let ng = self.needs(&[x]);
        Ok(self.push(Op::Transpose2 { x }, out, ng))
    }

    // ---- convolution & resampling ----------------------------------------

    /// 3x3 cross-correlation, zero padding 1, stride 1 or 2.
    pub fn conv3x3(&mut self, x: VarId, w: VarId, b: VarId, stride: usize) -> Result<VarId> {
        let (tx, tw, tb) = (
            &self.entries[x.0].val,
            &self.entries[w.0].val,
            &self.entries[b.0].val,
        );
        let xs = tx.shape();
        let ws = tw.shape();
        if xs.len() != 3 || ws.len() != 4 || ws[2] != 3 || ws[3] != 3 || xs[0] != ws[1] {
            return Err(Error::ShapeMismatch {
                op: "conv3x3",
                lhs: xs.to_vec(),
                rhs: ws.to_vec(),
            });
        }
        if tb.shape() != [ws[0]] {
            return Err(Error::ShapeMismatch {
                op: "conv3x3 bias",
                lhs: tb.shape().to_vec(),
                rhs: vec![ws[0]],
            });
        }
        if stride != 1 && stride != 2 {
            return Err(Error::InvalidArg(format!("conv3x3 stride {stride}")));
        }
        let (cin, h, wd) = (xs[0], xs[1], xs[2]);
        let cout = ws[0];
        let (data, oh, ow) = k::conv3x3_fwd(tx.data(), tw.data(), tb.data(), cin, h, wd, cout, stride);
        let mut out = Tensor::new(vec![cout, oh, ow], data).unwrap();
        out.set_dtype(self.out_dtype(&[x, w, b]));
        let ng = self.needs(&[x, w, b]);
        Ok(self.push(Op::Conv3x3 { x, w, b, stride }, out, ng))
    }

    pub fn avgpool2(&mut self, x: VarId) -> Result<VarId> {
        let tx = &self.entries[x.0].val;
        let xs = tx.shape();
        if xs.len() != 3 || xs[1] < 2 || xs[2] < 2 {
            return Err(Error::InvalidArg(format!("avgpool2 on shape {xs:?}")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (data, oh, ow) = k::avgpool2_fwd(tx.data(), c, h, w);
        let mut out = Tensor::new(vec![c, oh, ow], data).unwrap();
        out.set_dtype(self.out_dtype(&[x]));
        let ng = self.needs(&[x]);
        Ok(self.push(Op::AvgPool2 { x }, out, ng))
    }

    pub fn upsample2(&mut self, x: VarId) -> Result<VarId> {
        let tx = &self.entries[x.0].val;
        let xs = tx.shape();
        if xs.len() != 3 {
            return Err(Error::InvalidArg(format!("upsample2 on shape {xs:?}")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let data = k::upsample2_fwd(tx.data(), c, h, w);
        let mut out = Tensor::new(vec![c, 2 * h, 2 * w], data).unwrap();
        out.set_dtype(self.out_dtype(&[x]));
        let ng = self.needs(&[x]);
        Ok(self.push(Op::Upsample2 { x }, out, ng))
    }

    /// Replicate the last row/column out to (th, tw).
    pub fn edge_pad_to(&mut self, x: VarId, th: usize, tw: usize) -> Result<VarId> {
        let tx = &self.entries[x.0].val;
        let xs = tx.shape();
        if xs.len() != 3 || th < xs[1] || tw < xs[2] {
            return Err(Error::InvalidArg(format!(
                "edge_pad_to {th}x{tw} from shape {xs:?}"
            )));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let data = k::edge_pad_fwd(tx.data(), c, h, w, th, tw);
        let mut out = Tensor::new(vec![c, th, tw], data).unwrap();
        out.set_dtype(self.out_dtype(&[x]));
        let ng = self.needs(&[x]);
        Ok(self.push(Op::EdgePad { x }, out, ng))
    }

    /// Valid-mode Gaussian windowing per channel (the SSIM window).
    pub fn gauss_valid(&mut self, x: VarId, side: usize, sigma: f64) -> Result<VarId> {
        let tx = &self.entries[x.0].val;
        let xs = tx.shape();
        if xs.len() != 3 || xs[1] < side || xs[2] < side {
            return Err(Error::InvalidArg(format!(
                "gauss_valid: window {side} does not fit shape {xs:?}"
            )));
        }
        let taps = k::gauss_taps(side, sigma);
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (data, oh, ow) = k::gauss_valid_fwd(tx.data(), c, h, w, &taps);
        let mut out = Tensor::new(vec![c, oh, ow], data).unwrap();
        out.set_dtype(self.out_dtype(&[x]));
        let ng = self.needs(&[x]);
        Ok(self.push(Op::GaussValid { x, taps }, out, ng))
    }

    // ---- structure -------------------------------------------------------

    /// Concatenate along dim 0; trailing dims must agree.
    pub fn concat0(&mut self, parts: &[VarId]) -> Result<VarId> {
        if parts.is_empty() {
            return Err(Error::InvalidArg("concat0 of nothing".into()));
        }
        let rest = self.entries[parts[0].0].val.shape()[1..].to_vec();
        let mut d0 = 0;
        for &p in parts {
            let s = self.entries[p.0].val.shape();
            if s.is_empty() || s[1..] != rest[..] {
                return Err(Error::ShapeMismatch {
                    op: "concat0",
                    lhs: self.entries[parts[0].0].val.shape().to_vec(),
                    rhs: s.to_vec(),
                });
            }
            d0 += s[0];
        }
        let mut shape = vec![d0];
        shape.extend_from_slice(&rest);
        let mut data = Vec::with_capacity(numel_of(&shape));
        for &p in parts {
            data.extend_from_slice(self.entries[p.0].val.data());
        }
        let mut out = Tensor::new(shape, data).unwrap();
        out.set_dtype(self.out_dtype(parts));
        let ng = self.needs(parts);
        Ok(self.push(
            Op::Concat0 {
                parts: parts.to_vec(),
            },
            out,
            ng,
        ))
    }

    /// Slice rows [from, to) along dim 0.
    pub fn slice0(&mut self, x: VarId, from: usize, to: usize) -> Result<VarId> {
        let tx = &self.entries[x.0].val;
        let xs = tx.shape();
        if xs.is_empty() || from >= to || to > xs[0] {
            return Err(Error::InvalidArg(format!(
                "slice0 [{from},{to}) on shape {xs:?}"
            )));
        }
        let inner: usize = xs[1..].iter().product();
        let mut shape = xs.to_vec();
        shape[0] = to - from;
        let data = tx.data()[from * inner..to * inner].to_vec();
        let mut out = Tensor::new(shape, data).unwrap();
        out.set_dtype(self.out_dtype(&[x]));
        let ng = self.needs(&[x]);
        Ok(self.push(Op::Slice0 { x, from, to }, out, ng))
    }

    pub fn reshape(&mut self, x: VarId, shape: Vec<usize>) -> Result<VarId> {
        let out = self.entries[x.0].val.reshaped(shape)?;
        let ng = self.needs(&[x]);
        Ok(self.push(Op::Reshape { x }, out, ng))
    }

    /// Gather spectra at pixel locations: [B,H,W] -> [B,K].
    pub fn gather_pixels(&mut self, x: VarId, locs: &[(usize, usize)]) -> Result<VarId> {
        let tx = &self.entries[x.0].val;
        let xs = tx.shape();
        if xs.len() != 3 {
            return Err(Error::InvalidArg(format!("gather_pixels on shape {xs:?}")));
        }
        let (b, h, w) = (xs[0], xs[1], xs[2]);
        for &(r, c) in locs {
            if r >= h || c >= w {
                return Err(Error::InvalidArg(format!(
                    "gather_pixels location ({r},{c}) outside {h}x{w}"
                )));
            }
        }
        let kk = locs.len();
        let mut data = Vec::with_capacity(b * kk);
        for bi in 0..b {
            for &(r, c) in locs {
                data.push(tx.data()[(bi * h + r) * w + c]);
            }
        }
        let mut out = Tensor::new(vec![b, kk], data).unwrap();
        out.set_dtype(self.out_dtype(&[x]));
        let ng = self.needs(&[x]);
        Ok(self.push(
            Op::GatherPixels {
                x,
                locs: locs.to_vec(),
            },
            out,
            ng,
        ))
    }

    /// Bilinear resize of a 2D map (align-corners).
    pub fn bilinear_resize(&mut self, x: VarId, oh: usize, ow: usize) -> Result<VarId> {
        let tx = &self.entries[x.0].val;
        let xs = tx.shape();
        if xs.len() != 2 || oh == 0 || ow == 0 {
            return Err(Error::InvalidArg(format!(
                "bilinear_resize to {oh}x{ow} from shape {xs:?}"
            )));
        }
        let data = k::bilinear_fwd(tx.data(), xs[0], xs[1], oh, ow);
        let mut out = Tensor::new(vec![oh, ow], data).unwrap();
        out.set_dtype(self.out_dtype(&[x]));
        let ng = self.needs(&[x]);
        Ok(self.push(Op::BilinearResize { x }, out, ng))
    }

    /// [C,H,W] -> [H*W, C] along a scan direction.
    pub fn flatten_dir(&mut self, x: VarId, dir: ScanDirection) -> Result<VarId> {
        let tx = &self.entries[x.0].val;
        let xs = tx.shape();
        if xs.len() != 3 {
            return Err(Error::InvalidArg(format!("flatten_dir on shape {xs:?}")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let order = dir.order(h, w);
        let l = h * w;
        let mut data = vec![0.0; l * c];
        for (t, &p) in order.iter().enumerate() {
            for ci in 0..c {
                data[t * c + ci] = tx.data()[ci * l + p];
            }
        }
        let mut out = Tensor::new(vec![l, c], data).unwrap();
        out.set_dtype(self.out_dtype(&[x]));
        let ng = self.needs(&[x]);
        Ok(self.push(Op::FlattenDir { x, dir }, out, ng))
    }

    /// Inverse of [`Tape::flatten_dir`].
    pub fn unflatten_dir(&mut self, x: VarId, dir: ScanDirection, h: usize, w: usize) -> Result<VarId> {
        let tx = &self.entries[x.0].val;
        let xs = tx.shape();
        if xs.len() != 2 || xs[0] != h * w {
            return Err(Error::InvalidArg(format!(
                "unflatten_dir to {h}x{w} from shape {xs:?}"
            )));
        }
        let (l, c) = (xs[0], xs[1]);
        let order = dir.order(h, w);
        let mut data = vec![0.0; c * l];
        for (t, &p) in order.iter().enumerate() {
            for ci in 0..c {
                data[ci * l + p] = tx.data()[t * c + ci];
            }
        }
        let mut out = Tensor::new(vec![c, h, w], data).unwrap();
        out.set_dtype(self.out_dtype(&[x]));
        let ng = self.needs(&[x]);
        Ok(self.push(Op::UnflattenDir { x, dir, h, w }, out, ng))
    }

    /// Selective state-space scan over a [L,C] sequence.
    ///
    /// `delta` [L,C] must already be positive (softplus upstream), `b_seq`
    /// and `c_seq` are [L,N], `a` is [C,N] (strictly negative), `d` is [C].
    pub fn selective_scan(
        &mut self,
        x: VarId,
        delta: VarId,
        b_seq: VarId,
        c_seq: VarId,
        a: VarId,
        d: VarId,
    ) -> Result<VarId> {
        let sx = self.entries[x.0].val.shape().to_vec();
        if sx.len() != 2 {
            return Err(Error::InvalidArg(format!("selective_scan on shape {sx:?}")));
        }
        let (l, c) = (sx[0], sx[1]);
        let n = self.entries[a.0].val.shape()[1];
        let checks: [(&str, VarId, Vec<usize>); 5] = [
            ("delta", delta, vec![l, c]),
            ("b_seq", b_seq, vec![l, n]),
            ("c_seq", c_seq, vec![l, n]),
            ("a", a, vec![c, n]),
            ("d", d, vec![c]),
        ];
        for (_, v, want) in &checks {
            if self.entries[v.0].val.shape() != &want[..] {
                return Err(Error::ShapeMismatch {
                    op: "selective_scan",
                    lhs: self.entries[v.0].val.shape().to_vec(),
                    rhs: want.clone(),
                });
            }
        }
        if !self.entries[x.0].val.is_finite() {
            return Err(Error::NonFiniteValue("selective_scan input"));
        }
        let (y, hidden) = scan_recurrence_with_state(
            self.entries[x.0].val.data(),
            self.entries[delta.0].val.data(),
            self.entries[b_seq.0].val.data(),
            self.entries[c_seq.0].val.data(),
            self.entries[a.0].val.data(),
            self.entries[d.0].val.data(),
            l,
            c,
            n,
        );
        let mut out = Tensor::new(vec![l, c], y).unwrap();
        out.set_dtype(self.out_dtype(&[x, delta, b_seq, c_seq, a, d]));
        let ng = self.needs(&[x, delta, b_seq, c_seq, a, d]);
        Ok(self.push(
            Op::SelectiveScan {
                x,
                delta,
                b_seq,
                c_seq,
                a,
                d,
                hidden,
            },
            out,
            ng,
        ))
    }

    /// Separable fractional Fourier transform of a stacked complex map
    /// [2,C,H,W] (index 0 real, 1 imaginary).
    pub fn frft2(&mut self, x: VarId, order: f64) -> Result<VarId> {
        let tx = &self.entries[x.0].val;
        let out = crate::frft::apply_stacked_2d(tx, order)?;
        let mut out = out;
        out.set_dtype(self.out_dtype(&[x]));
        let ng = self.needs(&[x]);
        Ok(self.push(Op::Frft2 { x, order }, out, ng))
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a scalar loss. Gradients come back for every leaf
    /// registered with `requires_grad`; may run once per tape.
    pub fn backward(&mut self, loss: VarId) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        self.backward_done = true;
        let lt = &self.entries[loss.0].val;
        if lt.numel() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.entries.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));

        for i in (0..self.entries.len()).rev() {
            if !self.entries[i].needs_grad {
                grads[i] = None;
                continue;
            }
            let g = match &grads[i] {
                Some(_) => {
                    if matches!(self.entries[i].op, Op::Leaf { .. }) {
                        continue;
                    }
                    grads[i].take().unwrap()
                }
                None => continue,
            };
            self.backprop_node(i, &g, &mut grads);
        }
        // keep gradients only for requires_grad leaves, rounded to their dtype
        for (i, e) in self.entries.iter().enumerate() {
            match e.op {
                Op::Leaf { requires_grad: true } => {
                    if let Some(gt) = grads[i].as_mut() {
                        gt.set_dtype(e.val.dtype());
                    } else {
                        grads[i] = Some(Tensor::zeros(e.val.shape()));
                    }
                }
                _ => grads[i] = None,
            }
        }
        Ok(Gradients { g: grads })
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let accum = |grads: &mut [Option<Tensor>], id: VarId, add: Tensor| {
            match &mut grads[id.0] {
                Some(t) => {
                    for (a, b) in t.data_mut().iter_mut().zip(add.data()) {
                        *a += b;
                    }
                }
                slot => *slot = Some(add),
            }
        };
        let want = |s: &Self, id: VarId| s.entries[id.0].needs_grad;
        match &self.entries[i].op {
            Op::Leaf { .. } => {}
            Op::Binary { kind, a, b } => {
                let (ta, tb) = (&self.entries[a.0].val, &self.entries[b.0].val);
                match kind {
                    BinKind::Add => {
                        if want(self, *a) {
                            accum(grads, *a, reduce_to_shape(g, ta.shape()));
                        }
                        if want(self, *b) {
                            accum(grads, *b, reduce_to_shape(g, tb.shape()));
                        }
                    }
                    BinKind::Sub => {
                        if want(self, *a) {
                            accum(grads, *a, reduce_to_shape(g, ta.shape()));
                        }
                        if want(self, *b) {
                            let mut ng = reduce_to_shape(g, tb.shape());
                            for v in ng.data_mut() {
                                *v = -*v;
                            }
                            accum(grads, *b, ng);
                        }
                    }
                    BinKind::Mul => {
                        if want(self, *a) {
                            let full = broadcast_binary(g, tb, |gv, bv| gv * bv).unwrap();
                            accum(grads, *a, reduce_to_shape(&full, ta.shape()));
                        }
                        if want(self, *b) {
                            let full = broadcast_binary(g, ta, |gv, av| gv * av).unwrap();
                            accum(grads, *b, reduce_to_shape(&full, tb.shape()));
                        }
                    }
                    BinKind::Div => {
                        if want(self, *a) {
                            let full = broadcast_binary(g, tb, |gv, bv| gv / bv).unwrap();
                            accum(grads, *a, reduce_to_shape(&full, ta.shape()));
                        }
                        if want(self, *b) {
                            let y = &self.entries[i].val;
                            let gy = Tensor::new(
                                y.shape().to_vec(),
                                g.data()
                                    .iter()
                                    .zip(y.data())
                                    .map(|(gv, yv)| gv * yv)
                                    .collect(),
                            )
                            .unwrap();
                            let full = broadcast_binary(&gy, tb, |v, bv| -v / bv).unwrap();
                            accum(grads, *b, reduce_to_shape(&full, tb.shape()));
                        }
                    }
                }
            }
            Op::Unary { kind, x } => {
                if !want(self, *x) {
                    return;
                }
                let tx = &self.entries[x.0].val;
                let y = &self.entries[i].val;
                let data: Vec<f64> = match kind {
                    UnKind::Silu => tx
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| {
                            let s = k::sigmoid(v);
                            gv * (s + v * s * (1.0 - s))
                        })
                        .collect(),
                    UnKind::Gelu => tx
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| gv * k::gelu_grad(v))
                        .collect(),
                    UnKind::Softplus => tx
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| gv * k::sigmoid(v))
                        .collect(),
                    UnKind::Exp => y
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&yv, &gv)| gv * yv)
                        .collect(),
                    UnKind::Sqrt => y
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&yv, &gv)| gv * 0.5 / yv)
                        .collect(),
                    UnKind::Neg => g.data().iter().map(|&gv| -gv).collect(),
                    UnKind::Abs => tx
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| gv * sign(v))
                        .collect(),
                };
                accum(grads, *x, Tensor::new(tx.shape().to_vec(), data).unwrap());
            }
            Op::Scale { x, f } => {
                if want(self, *x) {
                    let data = g.data().iter().map(|&gv| gv * f).collect();
                    accum(
                        grads,
                        *x,
                        Tensor::new(self.entries[x.0].val.shape().to_vec(), data).unwrap(),
                    );
                }
            }
            Op::AddScalar { x, .. } => {
                if want(self, *x) {
                    accum(grads, *x, g.clone());
                }
            }
            Op::SoftmaxAxis { x, axis } => {
                if !want(self, *x) {
                    return;
                }
                let y = &self.entries[i].val;
                let (outer, n, inner) = lane_split(y.shape(), *axis);
                let mut dx = vec![0.0; y.numel()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let base = o * n * inner + ii;
                        let mut dot = 0.0;
                        for j in 0..n {
                            let at = base + j * inner;
                            dot += g.data()[at] * y.data()[at];
                        }
                        for j in 0..n {
                            let at = base + j * inner;
                            dx[at] = y.data()[at] * (g.data()[at] - dot);
                        }
                    }
                }
                accum(grads, *x, Tensor::new(y.shape().to_vec(), dx).unwrap());
            }
            Op::SumAll { x } => {
                if want(self, *x) {
                    let shape = self.entries[x.0].val.shape();
                    accum(grads, *x, Tensor::full(shape, g.item()));
                }
            }
            Op::MeanAll { x } => {
                if want(self, *x) {
                    let shape = self.entries[x.0].val.shape();
                    let n = numel_of(shape) as f64;
                    accum(grads, *x, Tensor::full(shape, g.item() / n));
                }
            }
            Op::L1Sum { x } => {
                if want(self, *x) {
                    let tx = &self.entries[x.0].val;
                    let gv = g.item();
                    let data = tx.data().iter().map(|&v| gv * sign(v)).collect();
                    accum(grads, *x, Tensor::new(tx.shape().to_vec(), data).unwrap());
                }
            }
            Op::SumAxis { x, axis } => {
                if !want(self, *x) {
                    return;
                }
                let tx = &self.entries[x.0].val;
                let (outer, n, inner) = lane_split(tx.shape(), *axis);
                let mut dx = vec![0.0; tx.numel()];
                for o in 0..outer {
                    for j in 0..n {
                        for ii in 0..inner {
                            dx[o * n * inner + j * inner + ii] = g.data()[o * inner + ii];
                        }
                    }
                }
                accum(grads, *x, Tensor::new(tx.shape().to_vec(), dx).unwrap());
            }
            Op::Matmul { a, b } => {
                let (ta, tb) = (&self.entries[a.0].val, &self.entries[b.0].val);
                let sa = ta.shape();
                let (m, kk) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let p = tb.shape()[tb.shape().len() - 1];
                let batch: usize = sa[..sa.len() - 2].iter().product();
                if want(self, *a) {
                    let mut da = Vec::with_capacity(ta.numel());
                    for bi in 0..batch {
                        let gg = &g.data()[bi * m * p..(bi + 1) * m * p];
                        let pb = &tb.data()[bi * kk * p..(bi + 1) * kk * p];
                        let bt = transpose(pb, kk, p);
                        da.extend_from_slice(&k::matmul2(gg, &bt, m, p, kk));
                    }
                    accum(grads, *a, Tensor::new(sa.to_vec(), da).unwrap());
                }
                if want(self, *b) {
                    let mut db = Vec::with_capacity(tb.numel());
                    for bi in 0..batch {
                        let gg = &g.data()[bi * m * p..(bi + 1) * m * p];
                        let pa = &ta.data()[bi * m * kk..(bi + 1) * m * kk];
                        let at = transpose(pa, m, kk);
                        db.extend_from_slice(&k::matmul2(&at, gg, kk, m, p));
                    }
                    accum(grads, *b, Tensor::new(tb.shape().to_vec(), db).unwrap());
                }
            }
            Op::Transpose2 { x } => {
                if want(self, *x) {
                    let s = self.entries[i].val.shape();
                    let data = transpose(g.data(), s[0], s[1]);
                    accum(
                        grads,
                        *x,
                        Tensor::new(vec![s[1], s[0]], data).unwrap(),
                    );
                }
            }
            Op::Conv3x3 { x, w, b, stride } => {
                let (tx, tw) = (&self.entries[x.0].val, &self.entries[w.0].val);
                let xs = tx.shape();
                let (cin, h, wd) = (xs[0], xs[1], xs[2]);
                let cout = tw.shape()[0];
                let (dx, dw, db) =
                    k::conv3x3_bwd(g.data(), tx.data(), tw.data(), cin, h, wd, cout, *stride);
                if want(self, *x) {
                    accum(grads, *x, Tensor::new(xs.to_vec(), dx).unwrap());
                }
                if want(self, *w) {
                    accum(grads, *w, Tensor::new(tw.shape().to_vec(), dw).unwrap());
                }
                if want(self, *b) {
                    accum(grads, *b, Tensor::new(vec![cout], db).unwrap());
                }
            }
            Op::AvgPool2 { x } => {
                if want(self, *x) {
                    let xs = self.entries[x.0].val.shape();
                    let data = k::avgpool2_bwd(g.data(), xs[0], xs[1], xs[2]);
                    accum(grads, *x, Tensor::new(xs.to_vec(), data).unwrap());
                }
            }
            Op::Upsample2 { x } => {
                if want(self, *x) {
                    let xs = self.entries[x.0].val.shape();
                    let data = k::upsample2_bwd(g.data(), xs[0], xs[1], xs[2]);
                    accum(grads, *x, Tensor::new(xs.to_vec(), data).unwrap());
                }
            }
            Op::EdgePad { x } => {
                if want(self, *x) {
                    let xs = self.entries[x.0].val.shape();
                    let os = self.entries[i].val.shape();
                    let data = k::edge_pad_bwd(g.data(), xs[0], xs[1], xs[2], os[1], os[2]);
                    accum(grads, *x, Tensor::new(xs.to_vec(), data).unwrap());
                }
            }
            Op::GaussValid { x, taps } => {
                if want(self, *x) {
                    let xs = self.entries[x.0].val.shape();
                    let data = k::gauss_valid_bwd(g.data(), xs[0], xs[1], xs[2], taps);
                    accum(grads, *x, Tensor::new(xs.to_vec(), data).unwrap());
                }
            }
            Op::Concat0 { parts } => {
                let inner: usize = self.entries[i].val.shape()[1..].iter().product();
                let mut at = 0usize;
                for &p in parts {
                    let sp = self.entries[p.0].val.shape().to_vec();
                    let rows = sp[0];
                    if want(self, p) {
                        let data = g.data()[at * inner..(at + rows) * inner].to_vec();
                        accum(grads, p, Tensor::new(sp, data).unwrap());
                    }
                    at += rows;
                }
            }
            Op::Slice0 { x, from, to } => {
                if want(self, *x) {
                    let xs = self.entries[x.0].val.shape();
                    let inner: usize = xs[1..].iter().product();
                    let mut dx = Tensor::zeros(xs);
                    dx.data_mut()[from * inner..to * inner].copy_from_slice(g.data());
                    accum(grads, *x, dx);
                }
            }
            Op::Reshape { x } => {
                if want(self, *x) {
                    let xs = self.entries[x.0].val.shape().to_vec();
                    accum(grads, *x, g.reshaped(xs).unwrap());
                }
            }
            Op::GatherPixels { x, locs } => {
                if want(self, *x) {
                    let xs = self.entries[x.0].val.shape();
                    let (b, h, w) = (xs[0], xs[1], xs[2]);
                    let mut dx = Tensor::zeros(xs);
                    for bi in 0..b {
                        for (j, &(r, c)) in locs.iter().enumerate() {
                            dx.data_mut()[(bi * h + r) * w + c] += g.data()[bi * locs.len() + j];
                        }
                    }
                    accum(grads, *x, dx);
                }
            }
            Op::BilinearResize { x } => {
                if want(self, *x) {
                    let xs = self.entries[x.0].val.shape();
                    let os = self.entries[i].val.shape();
                    let data = k::bilinear_bwd(g.data(), xs[0], xs[1], os[0], os[1]);
                    accum(grads, *x, Tensor::new(xs.to_vec(), data).unwrap());
                }
            }
            Op::FlattenDir { x, dir } => {
                if want(self, *x) {
                    let xs = self.entries[x.0].val.shape();
                    let (c, h, w) = (xs[0], xs[1], xs[2]);
                    let order = dir.order(h, w);
                    let l = h * w;
                    let mut dx = vec![0.0; c * l];
                    for (t, &p) in order.iter().enumerate() {
                        for ci in 0..c {
                            dx[ci * l + p] = g.data()[t * c + ci];
                        }
                    }
                    accum(grads, *x, Tensor::new(xs.to_vec(), dx).unwrap());
                }
            }
            Op::UnflattenDir { x, dir, h, w } => {
                if want(self, *x) {
                    let xs = self.entries[x.0].val.shape();
                    let (l, c) = (xs[0], xs[1]);
                    let order = dir.order(*h, *w);
                    let mut dx = vec![0.0; l * c];
                    for (t, &p) in order.iter().enumerate() {
                        for ci in 0..c {
                            dx[t * c + ci] = g.data()[ci * l + p];
                        }
                    }
                    accum(grads, *x, Tensor::new(xs.to_vec(), dx).unwrap());
                }
            }
            Op::SelectiveScan {
                x,
                delta,
                b_seq,
                c_seq,
                a,
                d,
                hidden,
            } => {
                let sx = self.entries[x.0].val.shape();
                let (l, c) = (sx[0], sx[1]);
                let n = self.entries[a.0].val.shape()[1];
                let out = scan_backward(
                    g.data(),
                    self.entries[x.0].val.data(),
                    self.entries[delta.0].val.data(),
                    self.entries[b_seq.0].val.data(),
                    self.entries[c_seq.0].val.data(),
                    self.entries[a.0].val.data(),
                    self.entries[d.0].val.data(),
                    hidden,
                    l,
                    c,
                    n,
                );
                let pairs: [(VarId, Vec<f64>, Vec<usize>); 6] = [
                    (*x, out.dx, vec![l, c]),
                    (*delta, out.ddelta, vec![l, c]),
                    (*b_seq, out.db, vec![l, n]),
                    (*c_seq, out.dc, vec![l, n]),
                    (*a, out.da, vec![c, n]),
                    (*d, out.dd, vec![c]),
                ];
                for (id, data, shape) in pairs {
                    if want(self, id) {
                        accum(grads, id, Tensor::new(shape, data).unwrap());
                    }
                }
            }
            Op::Frft2 { x, order } => {
                if want(self, *x) {
                    // adjoint of a unitary transform is its inverse
                    let dx = crate::frft::apply_stacked_2d(g, -order).expect("frft adjoint");
                    accum(grads, *x, dx);
                }
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

/// (outer, axis_len, inner) split of a shape around `axis`.
fn lane_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

const A_LIMIT: f64 = 1e-8;

/// Zero-order-hold discretization factors for one (delta, a) pair:
/// `a_bar = exp(delta*a)` and the input coefficient `(exp(delta*a)-1)/a`,
/// with the `delta` limit taken for tiny `|a|`.
#[inline]
pub(crate) fn zoh_factors(delta: f64, a: f64) -> (f64, f64) {
    let abar = (delta * a).exp();
    let coef = if a.abs() < A_LIMIT {
        delta
    } else {
        (abar - 1.0) / a
    };
    (abar, coef)
}

/// Sequential reference recurrence; also returns the hidden-state history
/// for backpropagation through time.
#[allow(clippy::too_many_arguments)]
pub(crate) fn scan_recurrence_with_state(
    x: &[f64],
    delta: &[f64],
    b_seq: &[f64],
    c_seq: &[f64],
    a: &[f64],
    d: &[f64],
    l: usize,
    c: usize,
    n: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; l * c];
    let mut hidden = vec![0.0; l * c * n];
    for t in 0..l {
        for ci in 0..c {
            let xv = x[t * c + ci];
            let dv = delta[t * c + ci];
            let mut acc = 0.0;
            for ni in 0..n {
                let (abar, coef) = zoh_factors(dv, a[ci * n + ni]);
                let bbar = coef * b_seq[t * n + ni];
                let hprev = if t == 0 {
                    0.0
                } else {
                    hidden[((t - 1) * c + ci) * n + ni]
                };
                let h = abar * hprev + bbar * xv;
                hidden[(t * c + ci) * n + ni] = h;
                acc += c_seq[t * n + ni] * h;
            }
            y[t * c + ci] = acc + d[ci] * xv;
        }
    }
    (y, hidden)
}

struct ScanGrads {
    dx: Vec<f64>,
    ddelta: Vec<f64>,
    db: Vec<f64>,
    dc: Vec<f64>,
    da: Vec<f64>,
    dd: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn scan_backward(
    g: &[f64],
    x: &[f64],
    delta: &[f64],
    b_seq: &[f64],
    c_seq: &[f64],
    a: &[f64],
    d: &[f64],
    hidden: &[f64],
    l: usize,
    c: usize,
    n: usize,
) -> ScanGrads {
    let mut out = ScanGrads {
        dx: vec![0.0; l * c],
        ddelta: vec![0.0; l * c],
        db: vec![0.0; l * n],
        dc: vec![0.0; l * n],
        da: vec![0.0; c * n],
        dd: vec![0.0; c],
    };
    let mut dh_carry = vec![0.0; c * n];
    for t in (0..l).rev() {
        for ci in 0..c {
            let gy = g[t * c + ci];
            let xv = x[t * c + ci];
            let dv = delta[t * c + ci];
            out.dd[ci] += gy * xv;
            out.dx[t * c + ci] += gy * d[ci];
            for ni in 0..n {
                let av = a[ci * n + ni];
                let bv = b_seq[t * n + ni];
                let (abar, coef) = zoh_factors(dv, av);
                let bbar = coef * bv;
                let h = hidden[(t * c + ci) * n + ni];
                let hprev = if t == 0 {
                    0.0
                } else {
                    hidden[((t - 1) * c + ci) * n + ni]
                };
                let dh = gy * c_seq[t * n + ni] + dh_carry[ci * n + ni];
                out.dc[t * n + ni] += gy * h;
                // h = abar*hprev + coef*b*x
                let dabar = dh * hprev;
                let dbbar = dh * xv;
                out.dx[t * c + ci] += dh * bbar;
                out.db[t * n + ni] += dbbar * coef;
                let dcoef = dbbar * bv;
                // abar = exp(delta*a)
                out.ddelta[t * c + ci] += dabar * av * abar;
                out.da[ci * n + ni] += dabar * dv * abar;
                // coef = (exp(delta*a)-1)/a, or delta in the small-|a| limit
                if av.abs() < A_LIMIT {
                    out.ddelta[t * c + ci] += dcoef;
                    out.da[ci * n + ni] += dcoef * dv * dv * 0.5;
                } else {
                    out.ddelta[t * c + ci] += dcoef * abar;
                    out.da[ci * n + ni] += dcoef * (dv * abar * av - (abar - 1.0)) / (av * av);
                }
                dh_carry[ci * n + ni] = dh * abar;
            }
        }
    }
    out
}
