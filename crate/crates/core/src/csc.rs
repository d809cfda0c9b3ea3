//! Compressed sparse column codec: non-zero values with leading-zero counts,
//! grouped into fixed-length segments indexed by an address vector.

use serde::{Deserialize, Serialize};

pub const DEFAULT_COUNT_BITS: u32 = 4;
pub const VALUE_BITS: u64 = 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CscError {
    #[error("value {value} at index {index} does not fit {signedness} 8b")]
    ValueRange {
        index: usize,
        value: i32,
        signedness: &'static str,
    },
    #[error("segment length must be >= 1")]
    ZeroSegment,
    #[error("matrix must have at least one row and one column")]
    EmptyMatrix,
    #[error("count width {0} outside 1..=7")]
    CountWidth(u32),
    #[error("malformed address vector: {0}")]
    Addresses(String),
    #[error("data and counts lengths differ ({data} vs {counts})")]
    LengthMismatch { data: usize, counts: usize },
    #[error("count {count} at entry {entry} exceeds the {bits}b field")]
    CountOverflow { entry: usize, count: u8, bits: u32 },
    #[error("entry {entry} decodes past the end of segment {segment}")]
    Overrun { entry: usize, segment: usize },
    #[error("column {col} out of range ({num} segments)")]
    Column { col: usize, num: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Signedness {
    Signed,
    Unsigned,
}

impl Signedness {
    fn check(self, index: usize, value: i32) -> Result<(), CscError> {
        let ok = match self {
            Signedness::Signed => (-128..=127).contains(&value),
            Signedness::Unsigned => (0..=255).contains(&value),
        };
        if ok {
            Ok(())
        } else {
            Err(CscError::ValueRange {
                index,
                value,
                signedness: match self {
                    Signedness::Signed => "signed",
                    Signedness::Unsigned => "unsigned",
                },
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CscTensor {
    pub data: Vec<i32>,
    pub counts: Vec<u8>,
    pub addresses: Vec<usize>,
    pub segment_len: usize,
    pub num_segments: usize,
    /// Zeros appended to reach a whole number of segments.
    #[serde(default)]
    pub padding: usize,
    #[serde(default = "default_bits")]
    pub count_bits: u32,
}

fn default_bits() -> u32 {
    DEFAULT_COUNT_BITS
}

/// Encodes consecutive segments of `values` with `count_bits`-wide zero-run counts.
fn encode_segments(
    values: &[i32],
    segment_len: usize,
    count_bits: u32,
) -> (Vec<i32>, Vec<u8>, Vec<usize>) {
    let max = (1u32 << count_bits) - 1;
    let mut data = Vec::new();
    let mut counts = Vec::new();
    let mut addresses = vec![0];
    for seg in values.chunks(segment_len) {
        let mut run = 0u32;
        for &v in seg {
            if v == 0 {
                run += 1;
                continue;
            }
            while run > max {
                data.push(0);
                counts.push(max as u8);
                run -= max + 1;
            }
            data.push(v);
            counts.push(run as u8);
            run = 0;
        }
        addresses.push(data.len());
    }
    (data, counts, addresses)
}

pub fn encode_stream(
    values: &[i32],
    segment_len: usize,
    count_bits: u32,
    sign: Signedness,
) -> Result<CscTensor, CscError> {
    if segment_len == 0 {
        return Err(CscError::ZeroSegment);
    }
    if !(1..=7).contains(&count_bits) {
        return Err(CscError::CountWidth(count_bits));
    }
    for (i, &v) in values.iter().enumerate() {
        sign.check(i, v)?;
    }
    let num_segments = values.len().div_ceil(segment_len).max(1);
    let padding = num_segments * segment_len - values.len();
    let (data, counts, mut addresses) = encode_segments(values, segment_len, count_bits);
    while addresses.len() < num_segments + 1 {
        addresses.push(data.len());
    }
    Ok(CscTensor {
        data,
        counts,
        addresses,
        segment_len,
        num_segments,
        padding,
        count_bits,
    })
}

/// Encodes an iact stream as segments of `segment_len = c0 * u` values.
pub fn encode_iact_stream(
    stream: &[i32],
    segment_len: usize,
    sign: Signedness,
) -> Result<CscTensor, CscError> {
    encode_stream(stream, segment_len, DEFAULT_COUNT_BITS, sign)
}

/// Encodes a row-major `rows x cols` matrix column by column; each column is one segment.
pub fn encode_weight_matrix(matrix: &[i32], rows: usize, cols: usize) -> Result<CscTensor, CscError> {
    if rows == 0 || cols == 0 || matrix.len() != rows * cols {
        return Err(CscError::EmptyMatrix);
    }
    for (i, &v) in matrix.iter().enumerate() {
        Signedness::Signed.check(i, v)?;
    }
    let mut col_major = Vec::with_capacity(matrix.len());
    for c in 0..cols {
        col_major.extend((0..rows).map(|r| matrix[r * cols + c]));
    }
    encode_stream(&col_major, rows, DEFAULT_COUNT_BITS, Signedness::Signed)
}

impl CscTensor {
    pub fn validate(&self) -> Result<(), CscError> {
        if self.data.len() != self.counts.len() {
            return Err(CscError::LengthMismatch {
                data: self.data.len(),
                counts: self.counts.len(),
            });
        }
        if self.segment_len == 0 {
            return Err(CscError::ZeroSegment);
        }
        if self.addresses.len() != self.num_segments + 1 {
            return Err(CscError::Addresses(format!(
                "{} entries for {} segments",
                self.addresses.len(),
                self.num_segments
            )));
        }
        if self.addresses[0] != 0 {
            return Err(CscError::Addresses("first entry is not 0".into()));
        }
        if let Some(i) = self.addresses.windows(2).position(|w| w[1] < w[0]) {
            return Err(CscError::Addresses(format!("decreasing at entry {}", i + 1)));
        }
        if self.addresses[self.num_segments] != self.data.len() {
            return Err(CscError::Addresses(format!(
                "last entry {} != data length {}",
                self.addresses[self.num_segments],
                self.data.len()
            )));
        }
        let max = (1u32 << self.count_bits) - 1;
        if let Some(entry) = self.counts.iter().position(|&c| c as u32 > max) {
            return Err(CscError::CountOverflow {
                entry,
                count: self.counts[entry],
                bits: self.count_bits,
            });
        }
        Ok(())
    }

    pub fn entries(&self) -> usize {
        self.data.len()
    }

    /// Entries that carry a non-zero value.
    pub fn nonzeros(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn column_slice(&self, col: usize) -> Result<ColumnIter<'_>, CscError> {
        if col >= self.num_segments {
            return Err(CscError::Column {
                col,
                num: self.num_segments,
            });
        }
        let (a, b) = (self.addresses[col], self.addresses[col + 1]);
        Ok(ColumnIter {
            data: &self.data[a..b],
            counts: &self.counts[a..b],
            pos: 0,
        })
    }

    /// `(offset within segment, value)` for every entry of a segment, padding included.
    pub fn segment_entries(&self, seg: usize) -> Result<Vec<(usize, i32)>, CscError> {
        let mut out = Vec::new();
        let mut pos = 0usize;
        for (i, (v, c)) in self.column_slice(seg)?.enumerate() {
            pos += c as usize;
            if pos >= self.segment_len {
                return Err(CscError::Overrun {
                    entry: self.addresses[seg] + i,
                    segment: seg,
                });
            }
            out.push((pos, v));
            pos += 1;
        }
        Ok(out)
    }

    pub fn decode(&self) -> Result<Vec<i32>, CscError> {
        self.validate()?;
        let total = self.num_segments * self.segment_len;
        let mut out = vec![0; total];
        for seg in 0..self.num_segments {
            let base = seg * self.segment_len;
            for (off, v) in self.segment_entries(seg)? {
                out[base + off] = v;
            }
        }
        out.truncate(total - self.padding.min(total));
        Ok(out)
    }

    pub fn address_bits(&self) -> u64 {
        let entries = self.entries() as u64;
        let width = (64 - entries.leading_zeros()).max(1) as u64;
        width * (self.num_segments as u64 + 1)
    }

    pub fn compressed_size_bits(&self) -> u64 {
        (VALUE_BITS + self.count_bits as u64) * self.entries() as u64 + self.address_bits()
    }

    pub fn word_stream(&self) -> CscWordStream {
        CscWordStream {
            words: self
                .data
                .iter()
                .zip(&self.counts)
                .map(|(&v, &c)| ((c as u16) << 8) | (v as u8 as u16))
                .collect(),
            addresses: self.addresses.clone(),
        }
    }
}

pub fn decode(t: &CscTensor) -> Result<Vec<i32>, CscError> {
    t.decode()
}

pub fn compressed_size_bits(t: &CscTensor) -> u64 {
    t.compressed_size_bits()
}

pub fn column_slice(t: &CscTensor, col: usize) -> Result<ColumnIter<'_>, CscError> {
    t.column_slice(col)
}

pub struct ColumnIter<'a> {
    data: &'a [i32],
    counts: &'a [u8],
    pos: usize,
}

impl Iterator for ColumnIter<'_> {
    type Item = (i32, u8);

    fn next(&mut self) -> Option<Self::Item> {
        let i = self.pos;
        if i >= self.data.len() {
            return None;
        }
        self.pos += 1;
        Some((self.data[i], self.counts[i]))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.data.len() - self.pos;
        (n, Some(n))
    }
}

impl ExactSizeIterator for ColumnIter<'_> {}

/// Packed 12b count-data words plus the address vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CscWordStream {
    pub words: Vec<u16>,
    pub addresses: Vec<usize>,
}

impl CscWordStream {
    pub fn unpack(&self) -> Vec<(i32, u8)> {
        self.words
            .iter()
            .map(|&w| ((w & 0xff) as u8 as i8 as i32, (w >> 8) as u8))
            .collect()
    }
}

/// Compressed size in bits for one count width, without building the tensor.
pub fn size_with_width(values: &[i32], segment_len: usize, count_bits: u32) -> u64 {
    let (data, _, _) = encode_segments(values, segment_len, count_bits);
    let entries = data.len() as u64;
    let width = (64 - entries.leading_zeros()).max(1) as u64;
    let segments = values.len().div_ceil(segment_len).max(1) as u64;
    (VALUE_BITS + count_bits as u64) * entries + width * (segments + 1)
}

#[derive(Debug, Clone, Serialize)]
pub struct WidthSweepRow {
    pub sparsity: f64,
    /// `(count width, mean compressed bits)`.
    pub mean_bits: Vec<(u32, f64)>,
    pub best_width: u32,
}

/// Mean compressed size per count width over random 8b tensors at each sparsity level.
pub fn count_width_sweep(
    sparsities: &[f64],
    widths: &[u32],
    len: usize,
    segment_len: usize,
    trials: usize,
    seed: u64,
) -> Vec<WidthSweepRow> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    sparsities
        .iter()
        .map(|&sp| {
            let mut sums = vec![0u64; widths.len()];
            for _ in 0..trials {
                let v: Vec<i32> = (0..len)
                    .map(|_| {
                        if rng.gen_bool(sp) {
                            0
                        } else {
                            let x: i32 = rng.gen_range(-128..=126);
                            if x >= 0 {
                                x + 1
                            } else {
                                x
                            }
                        }
                    })
                    .collect();
                for (s, &b) in sums.iter_mut().zip(widths) {
                    *s += size_with_width(&v, segment_len, b);
                }
            }
            let mean_bits: Vec<(u32, f64)> = widths
                .iter()
                .zip(&sums)
                .map(|(&b, &s)| (b, s as f64 / trials as f64))
                .collect();
            let best_width = mean_bits
                .iter()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|x| x.0)
                .unwrap_or(DEFAULT_COUNT_BITS);
            WidthSweepRow {
                sparsity: sp,
                mean_bits,
                best_width,
            }
        })
        .collect()
}
