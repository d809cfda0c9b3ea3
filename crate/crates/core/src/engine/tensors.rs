//! Layer operands, the dense convolution reference and per-layer sparsity statistics.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor_file::RawTensor;
use crate::workload::LayerShape;

use super::EngineError;

/// Iacts `[g][n][c][h][w]` and weights `[g][m][c][r][s]`, 8b each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerTensors {
    pub iacts: Vec<i8>,
    pub weights: Vec<i8>,
}

pub fn iact_index(shape: &LayerShape, g: u64, n: u64, c: u64, h: u64, w: u64) -> usize {
    ((((g * shape.n + n) * shape.c + c) * shape.h + h) * shape.w + w) as usize
}

pub fn output_index(shape: &LayerShape, g: u64, n: u64, m: u64, e: u64, f: u64) -> usize {
    ((((g * shape.n + n) * shape.m + m) * shape.e + e) * shape.f + f) as usize
}

fn fill(len: u64, density: f64, rng: &mut ChaCha8Rng, mut value: impl FnMut(&mut ChaCha8Rng) -> i8) -> Vec<i8> {
    (0..len)
        .map(|_| if rng.gen_bool(density.clamp(0.0, 1.0)) { value(rng) } else { 0 })
        .collect()
}

impl LayerTensors {
    /// Non-zero iacts are in `1..=127`, non-zero weights anywhere in the signed 8b range.
    pub fn synthetic(shape: &LayerShape, iact_density: f64, weight_density: f64, rng: &mut ChaCha8Rng) -> Self {
        let (ni, nw, _) = shape.data_counts();
        let iacts = fill(ni, iact_density, rng, |r| r.gen_range(1..=127));
        let weights = fill(nw, weight_density, rng, |r| loop {
            let v: i8 = r.gen();
            if v != 0 {
                break v;
            }
        });
        LayerTensors { iacts, weights }
    }

    pub fn check(&self, label: &str, shape: &LayerShape) -> Result<(), EngineError> {
        let (ni, nw, _) = shape.data_counts();
        if self.iacts.len() as u64 != ni || self.weights.len() as u64 != nw {
            return Err(EngineError::TensorShape {
                label: label.to_string(),
                detail: format!(
                    "got {} iacts and {} weights, shape needs {ni} and {nw}",
                    self.iacts.len(),
                    self.weights.len()
                ),
            });
        }
        Ok(())
    }

    /// Iact dims must be `[g, n, c, h, w]` and weight dims `[g, m, c, r, s]`.
    pub fn from_raw(label: &str, shape: &LayerShape, iacts: RawTensor, weights: RawTensor) -> Result<Self, EngineError> {
        let s = shape;
        let want_i = [s.g, s.n, s.c, s.h, s.w].map(|d| d as usize);
        let want_w = [s.g, s.m, s.c, s.r, s.s].map(|d| d as usize);
        for (name, got, want) in [("iact", &iacts.dims, want_i), ("weight", &weights.dims, want_w)] {
            if got.as_slice() != want {
                return Err(EngineError::TensorShape {
                    label: label.to_string(),
                    detail: format!("{name} dims {got:?}, expected {want:?}"),
                });
            }
        }
        let cast = |v: Vec<i32>| v.into_iter().map(|x| x as i8).collect();
        Ok(LayerTensors {
            iacts: cast(iacts.values),
            weights: cast(weights.values),
        })
    }
}

/// Direct convolution; output layout `[g][n][m][e][f]`.
pub fn conv_reference(shape: &LayerShape, t: &LayerTensors) -> Vec<i64> {
    let s = shape;
    let mut out = vec![0i64; (s.g * s.n * s.m * s.e * s.f) as usize];
    for g in 0..s.g {
        for n in 0..s.n {
            for m in 0..s.m {
                for e in 0..s.e {
                    for f in 0..s.f {
                        let mut acc = 0i64;
                        for c in 0..s.c {
                            for r in 0..s.r {
                                for q in 0..s.s {
                                    let x = t.iacts[iact_index(s, g, n, c, e * s.u + r, f * s.u + q)];
                                    let w = t.weights[crate::mapper::weight_index(s, g, m, c, r, q)];
                                    acc += x as i64 * w as i64;
                                }
                            }
                        }
                        out[output_index(s, g, n, m, e, f)] = acc;
                    }
                }
            }
        }
    }
    out
}

/// Uncompressed mode is chosen when CSC entries (12b each) would not beat 8b raw values.
pub fn prefers_csc(nonzeros: u64, total: u64) -> bool {
    nonzeros * 12 < total * 8
}

/// Count lookups the timing model needs, built once per layer and `m0`.
#[derive(Debug, Clone)]
pub struct LayerStats {
    shape: LayerShape,
    m0: u64,
    m_blocks: u64,
    /// Stride-`u` running non-zero counts per iact row; `None` means all non-zero.
    stride_prefix: Option<Vec<u32>>,
    /// Per `(g, n, c)` running non-zero counts over rows, `h + 1` entries each.
    row_prefix: Option<Vec<u64>>,
    /// Per weight column `(g, m block, c, r, s)`: non-zeros and CSC entries including padding.
    columns: Option<Vec<(u16, u16)>>,
    pub iact_nonzeros: u64,
    pub weight_nonzeros: u64,
}

impl LayerStats {
    pub fn dense(shape: &LayerShape, m0: u64) -> Self {
        let (ni, nw, _) = shape.data_counts();
        LayerStats {
            shape: *shape,
            m0,
            m_blocks: shape.m.div_ceil(m0),
            stride_prefix: None,
            row_prefix: None,
            columns: None,
            iact_nonzeros: ni,
            weight_nonzeros: nw,
        }
    }

    pub fn from_tensors(shape: &LayerShape, m0: u64, t: &LayerTensors) -> Self {
        let s = shape;
        let (h, w, u) = (s.h as usize, s.w as usize, s.u as usize);
        let mut stride = vec![0u32; t.iacts.len()];
        let rows = (s.g * s.n * s.c) as usize;
        let mut row_prefix = vec![0u64; rows * (h + 1)];
        for row in 0..rows * h {
            let base = row * w;
            let mut nz = 0u64;
            for x in 0..w {
                let here = (t.iacts[base + x] != 0) as u32;
                nz += here as u64;
                stride[base + x] = here + if x >= u { stride[base + x - u] } else { 0 };
            }
            let (plane, hh) = (row / h, row % h);
            row_prefix[plane * (h + 1) + hh + 1] = row_prefix[plane * (h + 1) + hh] + nz;
        }
        let m_blocks = s.m.div_ceil(m0);
        let mut columns = vec![(0u16, 0u16); (s.g * m_blocks * s.c * s.r * s.s) as usize];
        for g in 0..s.g {
            for mb in 0..m_blocks {
                let (lo, hi) = (mb * m0, ((mb + 1) * m0).min(s.m));
                for c in 0..s.c {
                    for r in 0..s.r {
                        for q in 0..s.s {
                            let mut nz = 0u16;
                            let mut entries = 0u16;
                            let mut run = 0u16;
                            for m in lo..hi {
                                if t.weights[crate::mapper::weight_index(s, g, m, c, r, q)] != 0 {
                                    entries += run / 16 + 1;
                                    nz += 1;
                                    run = 0;
                                } else {
                                    run += 1;
                                }
                            }
                            let i = ((((g * m_blocks + mb) * s.c + c) * s.r + r) * s.s + q) as usize;
                            columns[i] = (nz, entries);
                        }
                    }
                }
            }
        }
        LayerStats {
            shape: *shape,
            m0,
            m_blocks,
            stride_prefix: Some(stride),
            row_prefix: Some(row_prefix),
            columns: Some(columns),
            iact_nonzeros: t.iacts.iter().filter(|&&v| v != 0).count() as u64,
            weight_nonzeros: t.weights.iter().filter(|&&v| v != 0).count() as u64,
        }
    }

    /// Non-zero iacts at `w = f * u + q` for `f` in `[f_lo, f_hi)` of one row.
    pub fn window_nonzeros(&self, g: u64, n: u64, c: u64, h: u64, q: u64, f_lo: u64, f_hi: u64) -> u64 {
        let Some(p) = &self.stride_prefix else {
            return f_hi - f_lo;
        };
        let s = &self.shape;
        let at = |w: u64| p[iact_index(s, g, n, c, h, w)] as u64;
        let first = f_lo * s.u + q;
        at((f_hi - 1) * s.u + q) - if first >= s.u { at(first - s.u) } else { 0 }
    }

    /// Non-zero iacts over rows `[h_lo, h_hi)` of one channel plane.
    pub fn rows_nonzeros(&self, g: u64, n: u64, c: u64, h_lo: u64, h_hi: u64) -> u64 {
        let s = &self.shape;
        match &self.row_prefix {
            None => (h_hi - h_lo) * s.w,
            Some(p) => {
                let base = (((g * s.n + n) * s.c + c) * (s.h + 1)) as usize;
                p[base + h_hi as usize] - p[base + h_lo as usize]
            }
        }
    }

    /// `(non-zeros, CSC entries)` of one weight column in m block `mb`.
    pub fn column(&self, g: u64, mb: u64, c: u64, r: u64, q: u64) -> (u64, u64) {
        let s = &self.shape;
        match &self.columns {
            None => {
                let len = (((mb + 1) * self.m0).min(s.m) - mb * self.m0) as u64;
                (len, len)
            }
            Some(cols) => {
                let (nz, e) = cols[((((g * self.m_blocks + mb) * s.c + c) * s.r + r) * s.s + q) as usize];
                (nz as u64, e as u64)
            }
        }
    }

    pub fn m0(&self) -> u64 {
        self.m0
    }
}
