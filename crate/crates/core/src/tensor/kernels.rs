//! Plain f64 compute kernels shared by the tape's forward and backward
//! passes. All loops are straight scalar code; at the patch sizes this crate
//! targets that is plenty, and it keeps results bit-reproducible.

/// `[m,k] x [k,p] -> [m,p]`, ikj loop order.
pub fn matmul2(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * p..(l + 1) * p];
            let orow = &mut out[i * p..(i + 1) * p];
            for j in 0..p {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// 3x3 cross-correlation with zero padding 1.
/// x: [cin,h,w], w: [cout,cin,3,3], bias: [cout], stride in {1,2}.
pub fn conv3x3_fwd(
    x: &[f64],
    wt: &[f64],
    bias: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    stride: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h - 1) / stride + 1;
    let ow = (w - 1) / stride + 1;
    let mut out = vec![0.0; cout * oh * ow];
    for co in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[co];
                let iy0 = (oy * stride) as isize - 1;
                let ix0 = (ox * stride) as isize - 1;
                for ci in 0..cin {
                    let xc = &x[ci * h * w..(ci + 1) * h * w];
                    let wc = &wt[(co * cin + ci) * 9..(co * cin + ci) * 9 + 9];
                    for ky in 0..3 {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += wc[ky * 3 + kx] * xc[iy as usize * w + ix as usize];
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }
    (out, oh, ow)
}

/// Gradients of conv3x3_fwd w.r.t. input, weight and bias.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_bwd(
    g: &[f64],
    x: &[f64],
    wt: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    stride: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let oh = (h - 1) / stride + 1;
    let ow = (w - 1) / stride + 1;
    let mut dx = vec![0.0; cin * h * w];
    let mut dw = vec![0.0; cout * cin * 9];
    let mut db = vec![0.0; cout];
    for co in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = g[(co * oh + oy) * ow + ox];
                if gv == 0.0 {
                    continue;
                }
                db[co] += gv;
                let iy0 = (oy * stride) as isize - 1;
                let ix0 = (ox * stride) as isize - 1;
                for ci in 0..cin {
                    let base = ci * h * w;
                    let wbase = (co * cin + ci) * 9;
                    for ky in 0..3 {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let xi = base + iy as usize * w + ix as usize;
                            dx[xi] += gv * wt[wbase + ky * 3 + kx];
                            dw[wbase + ky * 3 + kx] += gv * x[xi];
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Non-overlapping 2x2 average pooling; trailing odd row/column dropped.
pub fn avgpool2_fwd(x: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let oh = h / 2;
    let ow = w / 2;
    let mut out = vec![0.0; c * oh * ow];
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let y = 2 * oy;
                let xx = 2 * ox;
                let b = ci * h * w;
                out[(ci * oh + oy) * ow + ox] = 0.25
                    * (x[b + y * w + xx]
                        + x[b + y * w + xx + 1]
                        + x[b + (y + 1) * w + xx]
                        + x[b + (y + 1) * w + xx + 1]);
            }
        }
    }
    (out, oh, ow)
}

pub fn avgpool2_bwd(g: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let oh = h / 2;
    let ow = w / 2;
    let mut dx = vec![0.0; c * h * w];
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = 0.25 * g[(ci * oh + oy) * ow + ox];
                let y = 2 * oy;
                let xx = 2 * ox;
                let b = ci * h * w;
                dx[b + y * w + xx] += gv;
                dx[b + y * w + xx + 1] += gv;
                dx[b + (y + 1) * w + xx] += gv;
                dx[b + (y + 1) * w + xx + 1] += gv;
            }
        }
    }
    dx
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2_fwd(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * oh * ow];
    for ci in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let v = x[(ci * h + y) * w + xx];
                let b = ci * oh * ow;
                out[b + (2 * y) * ow + 2 * xx] = v;
                out[b + (2 * y) * ow + 2 * xx + 1] = v;
                out[b + (2 * y + 1) * ow + 2 * xx] = v;
                out[b + (2 * y + 1) * ow + 2 * xx + 1] = v;
            }
        }
    }
    out
}

pub fn upsample2_bwd(g: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![0.0; c * h * w];
    for ci in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let b = ci * oh * ow;
                dx[(ci * h + y) * w + xx] = g[b + (2 * y) * ow + 2 * xx]
                    + g[b + (2 * y) * ow + 2 * xx + 1]
                    + g[b + (2 * y + 1) * ow + 2 * xx]
                    + g[b + (2 * y + 1) * ow + 2 * xx + 1];
            }
        }
    }
    dx
}

/// Pad [c,h,w] to [c,th,tw] by replicating the last row/column.
pub fn edge_pad_fwd(x: &[f64], c: usize, h: usize, w: usize, th: usize, tw: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * th * tw];
    for ci in 0..c {
        for y in 0..th {
            let sy = y.min(h - 1);
            for xx in 0..tw {
                let sx = xx.min(w - 1);
                out[(ci * th + y) * tw + xx] = x[(ci * h + sy) * w + sx];
            }
        }
    }
    out
}

pub fn edge_pad_bwd(g: &[f64], c: usize, h: usize, w: usize, th: usize, tw: usize) -> Vec<f64> {
    let mut dx = vec![0.0; c * h * w];
    for ci in 0..c {
        for y in 0..th {
            let sy = y.min(h - 1);
            for xx in 0..tw {
                let sx = xx.min(w - 1);
                dx[(ci * h + sy) * w + sx] += g[(ci * th + y) * tw + xx];
            }
        }
    }
    dx
}

/// Normalized 1D Gaussian taps of odd length `side`.
pub fn gauss_taps(side: usize, sigma: f64) -> Vec<f64> {
    let c = (side / 2) as f64;
    let mut k: Vec<f64> = (0..side)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Separable valid-mode windowed smoothing, per channel.
/// Output spatial size (h-side+1, w-side+1).
pub fn gauss_valid_fwd(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    taps: &[f64],
) -> (Vec<f64>, usize, usize) {
    let s = taps.len();
    let ow = w - s + 1;
    let oh = h - s + 1;
    // rows first
    let mut rows = vec![0.0; c * h * ow];
    for ci in 0..c {
        for y in 0..h {
            for ox in 0..ow {
                let mut acc = 0.0;
                for (t, &kv) in taps.iter().enumerate() {
                    acc += kv * x[(ci * h + y) * w + ox + t];
                }
                rows[(ci * h + y) * ow + ox] = acc;
            }
        }
    }
    let mut out = vec![0.0; c * oh * ow];
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for (t, &kv) in taps.iter().enumerate() {
                    acc += kv * rows[(ci * h + oy + t) * ow + ox];
                }
                out[(ci * oh + oy) * ow + ox] = acc;
            }
        }
    }
    (out, oh, ow)
}

pub fn gauss_valid_bwd(g: &[f64], c: usize, h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let s = taps.len();
    let ow = w - s + 1;
    let oh = h - s + 1;
    // adjoint of columns pass
    let mut rows = vec![0.0; c * h * ow];
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = g[(ci * oh + oy) * ow + ox];
                if gv == 0.0 {
                    continue;
                }
                for (t, &kv) in taps.iter().enumerate() {
                    rows[(ci * h + oy + t) * ow + ox] += kv * gv;
                }
            }
        }
    }
    // adjoint of rows pass
    let mut dx = vec![0.0; c * h * w];
    for ci in 0..c {
        for y in 0..h {
            for ox in 0..ow {
                let gv = rows[(ci * h + y) * ow + ox];
                if gv == 0.0 {
                    continue;
                }
                for (t, &kv) in taps.iter().enumerate() {
                    dx[(ci * h + y) * w + ox + t] += kv * gv;
                }
            }
        }
    }
    dx
}

/// Bilinear resize of a 2D map, align-corners convention.
pub fn bilinear_fwd(x: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        let fy = if oh > 1 {
            oy as f64 * (h - 1) as f64 / (oh - 1) as f64
        } else {
            0.0
        };
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for ox in 0..ow {
            let fx = if ow > 1 {
                ox as f64 * (w - 1) as f64 / (ow - 1) as f64
            } else {
                0.0
            };
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            out[oy * ow + ox] = (1.0 - wy) * ((1.0 - wx) * x[y0 * w + x0] + wx * x[y0 * w + x1])
                + wy * ((1.0 - wx) * x[y1 * w + x0] + wx * x[y1 * w + x1]);
        }
    }
    out
}

pub fn bilinear_bwd(g: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut dx = vec![0.0; h * w];
    for oy in 0..oh {
        let fy = if oh > 1 {
            oy as f64 * (h - 1) as f64 / (oh - 1) as f64
        } else {
            0.0
        };
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for ox in 0..ow {
            let fx = if ow > 1 {
                ox as f64 * (w - 1) as f64 / (ow - 1) as f64
            } else {
                0.0
            };
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            let gv = g[oy * ow + ox];
            dx[y0 * w + x0] += gv * (1.0 - wy) * (1.0 - wx);
            dx[y0 * w + x1] += gv * (1.0 - wy) * wx;
            dx[y1 * w + x0] += gv * wy * (1.0 - wx);
            dx[y1 * w + x1] += gv * wy * wx;
        }
    }
    dx
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// tanh-form GeLU.
pub fn gelu(x: f64) -> f64 {
    const K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (K * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    const K: f64 = 0.797_884_560_802_865_4;
    let u = K * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = K * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
