//! Synthetic hyperspectral data and the on-disk cube format.
//!
//! Cubes are band-major `[B,H,W]` with values in [0,1]. The file format is
//! fixed little-endian: magic "HSIC", u32 version 1, u32 B, u32 H, u32 W,
//! then B*H*W f32 values. Values are quantized to f32 at generation time so
//! write/read round-trips are bitwise.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::spectra::PointMask;
use crate::tensor::Tensor;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

const CUBE_MAGIC: &[u8; 4] = b"HSIC";
const CUBE_VERSION: u32 = 1;
/// Payload cap: keeps u32 dims from overflowing allocation sizes.
const MAX_ELEMS: u64 = 1 << 31;

/// B-band cube with values in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    values: Tensor,
}

impl HsiCube {
    pub fn new(values: Tensor) -> Result<HsiCube> {
        let s = values.shape();
        if s.len() != 3 || s[0] == 0 {
            return Err(Error::InvalidArg(format!("cube wants [B,H,W], got {s:?}")));
        }
        if !values.data().iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidArg("cube values outside [0,1]".into()));
        }
        Ok(HsiCube { values })
    }

    pub fn bands(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }

    /// Rectangular crop, bitwise copy of the source region.
    pub fn crop(&self, y0: usize, x0: usize, size: usize) -> HsiCube {
        let (b, h, w) = (self.bands(), self.height(), self.width());
        debug_assert!(y0 + size <= h && x0 + size <= w);
        let v = Tensor::from_fn(&[b, size, size], |i| {
            let bi = i / (size * size);
            let r = (i / size) % size;
            let c = i % size;
            self.values.data()[(bi * h + y0 + r) * w + x0 + c]
        });
        HsiCube { values: v }
    }
}

/// Camera response: rows are R/G/B weightings over bands, each summing to 1.
#[derive(Clone, Debug)]
pub struct SpectralResponse {
    s: Tensor, // [3, B]
}

impl SpectralResponse {
    pub fn new(s: Tensor) -> Result<SpectralResponse> {
        let shape = s.shape();
        if shape.len() != 2 || shape[0] != 3 {
            return Err(Error::InvalidArg(format!(
                "spectral response wants [3,B], got {shape:?}"
            )));
        }
        let b = shape[1];
        for r in 0..3 {
            let row = &s.data()[r * b..(r + 1) * b];
            if row.iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidArg("spectral response must be nonnegative".into()));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArg(format!(
                    "spectral response row {r} sums to {sum}, want 1"
                )));
            }
        }
        Ok(SpectralResponse { s })
    }

    /// Gaussian rows centered at band fractions 0.2/0.5/0.8, width 0.15*B,
    /// row-normalized.
    pub fn default_for_bands(b: usize) -> SpectralResponse {
        debug_assert!(b >= 1);
        let sigma = 0.15 * b as f64;
        let mut data = vec![0.0; 3 * b];
        for (r, frac) in [0.2f64, 0.5, 0.8].iter().enumerate() {
            let center = frac * (b - 1) as f64;
            let mut sum = 0.0;
            for bi in 0..b {
                let v = (-(bi as f64 - center).powi(2) / (2.0 * sigma * sigma)).exp();
                data[r * b + bi] = v;
                sum += v;
            }
            for bi in 0..b {
                data[r * b + bi] /= sum;
            }
        }
        SpectralResponse {
            s: Tensor::new(vec![3, b], data).unwrap(),
        }
    }

    pub fn bands(&self) -> usize {
        self.s.shape()[1]
    }

    pub fn matrix(&self) -> &Tensor {
        &self.s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let b = self.bands();
        let mut text = String::new();
        for r in 0..3 {
            let row: Vec<String> = (0..b)
                .map(|bi| format!("{:.17e}", self.s.data()[r * b + bi]))
                .collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_csv(path: &Path) -> Result<SpectralResponse> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if rows.len() != 3 {
            return Err(Error::InvalidArg(format!(
                "response CSV wants 3 rows, got {}",
                rows.len()
            )));
        }
        let mut data = Vec::new();
        let mut b = None;
        for row in rows {
            let vals: Vec<f64> = row
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidArg(format!("response CSV: {e}")))
                })
                .collect::<Result<_>>()?;
            match b {
                None => b = Some(vals.len()),
                Some(n) if n != vals.len() => {
                    return Err(Error::InvalidArg("response CSV rows differ in length".into()))
                }
                _ => {}
            }
            data.extend(vals);
        }
        SpectralResponse::new(Tensor::new(vec![3, b.unwrap()], data)?)
    }
}

/// Per-pixel projection RGB = S . spectrum.
pub fn project_rgb(cube: &HsiCube, s: &SpectralResponse) -> Result<Tensor> {
    let b = cube.bands();
    if s.bands() != b {
        return Err(Error::ShapeMismatch {
            op: "project_rgb",
            lhs: s.matrix().shape().to_vec(),
            rhs: vec![3, b],
        });
    }
    let (h, w) = (cube.height(), cube.width());
    let hw = h * w;
    let mut out = Tensor::zeros(&[3, h, w]);
    for r in 0..3 {
        for bi in 0..b {
            let weight = s.matrix().data()[r * b + bi];
            if weight == 0.0 {
                continue;
            }
            let band = &cube.values().data()[bi * hw..(bi + 1) * hw];
            let orow = &mut out.data_mut()[r * hw..(r + 1) * hw];
            for p in 0..hw {
                orow[p] += weight * band[p];
            }
        }
    }
    Ok(out)
}

/// Smooth synthetic scene: K Gaussian spatial bumps, each weighted by a
/// squared-Gaussian-mixture spectral signature, normalized into [0,1] and
/// quantized to f32.
pub fn synth_cube(seed: u64, h: usize, w: usize, b: usize) -> Result<HsiCube> {
    if h < 8 || w < 8 || b < 3 {
        return Err(Error::InvalidArg(format!(
            "synth_cube wants H,W >= 8 and B >= 3, got ({h},{w},{b})"
        )));
    }
    const BUMPS: usize = 6;
    const MIXTURE: usize = 2;
    let mut rng = Rng::from_seed(seed);
    let mut values = vec![0.0f64; b * h * w];
    let side = h.min(w) as f64;
    for _ in 0..BUMPS {
        let cy = rng.uniform() * (h - 1) as f64;
        let cx = rng.uniform() * (w - 1) as f64;
        // narrow enough that most pixels stay dim, which is what skews
        // real radiance histograms to the right
        let sig = (0.08 + 0.16 * rng.uniform()) * side;
        // spectral signature over band fraction: squared mixture + floor
        let mut mus = [0.0; MIXTURE];
        let mut nus = [0.0; MIXTURE];
        let mut ws = [0.0; MIXTURE];
        for m in 0..MIXTURE {
            mus[m] = rng.uniform();
            nus[m] = 0.15 + 0.35 * rng.uniform();
            ws[m] = 0.3 + 0.7 * rng.uniform();
        }
        let signature: Vec<f64> = (0..b)
            .map(|bi| {
                let fb = bi as f64 / (b - 1) as f64;
                let mix: f64 = (0..MIXTURE)
                    .map(|m| ws[m] * (-(fb - mus[m]).powi(2) / (2.0 * nus[m] * nus[m])).exp())
                    .sum();
                mix * mix + 0.02
            })
            .collect();
        for y in 0..h {
            for x in 0..w {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                let g = (-d2 / (2.0 * sig * sig)).exp();
                for (bi, sv) in signature.iter().enumerate() {
                    values[(bi * h + y) * w + x] += sv * g;
                }
            }
        }
    }
    // affine remap into [0.02, 1]: keeps every spectrum non-degenerate
    // without changing the histogram shape
    let max = values.iter().cloned().fold(0.0f64, f64::max);
    for v in &mut values {
        *v = (0.02 + 0.98 * *v / max) as f32 as f64;
    }
    HsiCube::new(Tensor::new(vec![b, h, w], values)?)
}

pub fn write_cube(path: &Path, cube: &HsiCube) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + cube.values().numel() * 4);
    buf.extend_from_slice(CUBE_MAGIC);
    buf.extend_from_slice(&CUBE_VERSION.to_le_bytes());
    for d in [cube.bands(), cube.height(), cube.width()] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in cube.values().data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_cube(path: &Path) -> Result<HsiCube> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let p = path.display().to_string();
    let mut header = [0u8; 20];
    file.read_exact(&mut header).map_err(|_| Error::Truncated {
        path: p.clone(),
        what: "header",
    })?;
    if &header[0..4] != CUBE_MAGIC {
        return Err(Error::BadMagic {
            path: p,
            expected: "HSIC",
        });
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != CUBE_VERSION {
        return Err(Error::InvalidArg(format!(
            "unsupported cube version {version} in `{p}`"
        )));
    }
    let (b, h, w) = (word(8) as u64, word(12) as u64, word(16) as u64);
    let n = b
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .filter(|&v| v > 0 && v <= MAX_ELEMS)
        .ok_or(Error::DimensionOverflow(vec![b, h, w]))?;
    let mut payload = vec![0u8; n as usize * 4];
    file.read_exact(&mut payload).map_err(|_| Error::Truncated {
        path: p.clone(),
        what: "payload",
    })?;
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    HsiCube::new(Tensor::new(vec![b as usize, h as usize, w as usize], data)?)
}

/// Binary point mask as a 1-band cube (1.0 at sampled locations).
pub fn mask_to_cube(mask: &PointMask) -> HsiCube {
    let (h, w) = (mask.h(), mask.w());
    let v = Tensor::from_fn(&[1, h, w], |i| {
        if mask.is_sampled(i / w, i % w) {
            1.0
        } else {
            0.0
        }
    });
    HsiCube::new(v).unwrap()
}

/// One cropped patch and where it came from.
#[derive(Clone, Debug)]
pub struct Patch {
    pub y0: usize,
    pub x0: usize,
    pub cube: HsiCube,
}

/// Regular grid of size x size crops; the final row/column is shifted back
/// to touch the border so no pixel goes unused.
pub fn crop_patches(cube: &HsiCube, size: usize, stride: usize) -> Result<Vec<Patch>> {
    let (h, w) = (cube.height(), cube.width());
    if size == 0 || stride == 0 || size > h.min(w) {
        return Err(Error::InvalidArg(format!(
            "crop_patches size {size} stride {stride} on {h}x{w}"
        )));
    }
    let origins = |dim: usize| -> Vec<usize> {
        let mut o = Vec::new();
        let mut at = 0;
        loop {
            if at + size >= dim {
                let last = dim - size;
                if o.last() != Some(&last) {
                    o.push(last);
                }
                break;
            }
            o.push(at);
            at += stride;
        }
        o
    };
    let mut out = Vec::new();
    for &y0 in &origins(h) {
        for &x0 in &origins(w) {
            out.push(Patch {
                y0,
                x0,
                cube: cube.crop(y0, x0, size),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// Dataset listing: one "split<TAB>path" line per cube.
#[derive(Clone, Debug, Default)]
pub struct DatasetManifest {
    pub entries: Vec<(Split, PathBuf)>,
}

impl DatasetManifest {
    pub fn paths(&self, split: Split) -> Vec<&PathBuf> {
        self.entries
            .iter()
            .filter(|(s, _)| *s == split)
            .map(|(_, p)| p)
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f =
            fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        for (split, p) in &self.entries {
            writeln!(f, "{}\t{}", split.tag(), p.display())
                .map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        Ok(())
    }

    /// Load and validate: every path must exist, splits stay disjoint.
    pub fn read(path: &Path) -> Result<DatasetManifest> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut entries = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (tag, p) = line.split_once('\t').ok_or_else(|| {
                Error::InvalidArg(format!("manifest line {} lacks a tab: {line}", ln + 1))
            })?;
            let split = match tag {
                "train" => Split::Train,
                "val" => Split::Val,
                other => {
                    return Err(Error::InvalidArg(format!("unknown split tag `{other}`")))
                }
            };
            let pb = PathBuf::from(p);
            if !pb.exists() {
                return Err(Error::InvalidArg(format!(
                    "manifest references missing cube `{p}`"
                )));
            }
            if entries.iter().any(|(s, q): &(Split, PathBuf)| q == &pb && *s != split) {
                return Err(Error::InvalidArg(format!("cube `{p}` appears in both splits")));
            }
            entries.push((split, pb));
        }
        Ok(DatasetManifest { entries })
    }
}
