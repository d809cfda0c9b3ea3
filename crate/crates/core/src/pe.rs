//! One processing element: a 1D multi-channel convolution over a sliding iact
//! window, with zero skipping driven by CSC operands and 2-wide SIMD issue.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::csc::{CscError, CscTensor};

pub const PSUM_BITS: u32 = 20;
pub const PIPELINE_FILL: u64 = 7;
pub const SIMD_WIDTH: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpadConfig {
    pub iact_addr_entries: u32,
    pub iact_addr_bits: u32,
    pub iact_data_entries: u32,
    pub iact_data_bits: u32,
    pub weight_addr_entries: u32,
    pub weight_addr_bits: u32,
    pub weight_data_entries: u32,
    pub weight_data_bits: u32,
    pub psum_entries: u32,
    pub psum_bits: u32,
}

impl Default for SpadConfig {
    fn default() -> Self {
        SpadConfig {
            iact_addr_entries: 9,
            iact_addr_bits: 4,
            iact_data_entries: 16,
            iact_data_bits: 12,
            weight_addr_entries: 16,
            weight_addr_bits: 7,
            weight_data_entries: 96,
            weight_data_bits: 24,
            psum_entries: 32,
            psum_bits: PSUM_BITS,
        }
    }
}

impl SpadConfig {
    /// Sizes in bytes: iact addr, iact data, weight addr, weight data, psum.
    pub fn bytes(&self) -> [f64; 5] {
        let b = |e: u32, w: u32| (e * w) as f64 / 8.0;
        [
            b(self.iact_addr_entries, self.iact_addr_bits),
            b(self.iact_data_entries, self.iact_data_bits),
            b(self.weight_addr_entries, self.weight_addr_bits),
            b(self.weight_data_entries, self.weight_data_bits),
            b(self.psum_entries, self.psum_bits),
        ]
    }

    /// 12b pairs that fit the weight data SPad.
    pub fn weight_pairs(&self) -> u32 {
        self.weight_data_entries * self.weight_data_bits / 12
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PeMode {
    SparseSkip,
    DenseGate,
    DenseGateIactOnly,
}

impl PeMode {
    pub fn fill_cycles(self) -> u64 {
        PIPELINE_FILL
    }

    pub fn macs_per_cycle(self) -> u64 {
        match self {
            PeMode::SparseSkip => SIMD_WIDTH,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PeMapping {
    pub m0: usize,
    pub c0: usize,
    pub s0: usize,
    pub u: usize,
    pub num_windows: usize,
}

impl PeMapping {
    pub fn cols(&self) -> usize {
        self.c0 * self.s0
    }

    pub fn segment_len(&self) -> usize {
        self.c0 * self.u
    }

    /// Segments a window spans.
    pub fn segments_per_window(&self) -> usize {
        self.s0.div_ceil(self.u)
    }

    /// Uncompressed iact stream length the windows consume.
    pub fn stream_len(&self) -> usize {
        self.c0 * ((self.num_windows - 1) * self.u + self.s0)
    }

    pub fn nominal_pairs(&self) -> u64 {
        (self.m0 * self.cols() * self.num_windows) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Spad {
    IactAddr,
    IactData,
    WeightAddr,
    WeightData,
    Psum,
}

impl fmt::Display for Spad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Spad::IactAddr => "iact address",
            Spad::IactData => "iact data",
            Spad::WeightAddr => "weight address",
            Spad::WeightData => "weight data",
            Spad::Psum => "psum",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PeError {
    #[error("{spad} spad overflow: need {need} entries, have {have}")]
    Capacity { spad: Spad, need: usize, have: usize },
    #[error("m0 = {0} exceeds the psum spad")]
    M0TooLarge(usize),
    #[error("window step c0*u = {0} exceeds 16")]
    WindowLen(usize),
    #[error("operand shape: {0}")]
    OperandShape(String),
    #[error("segment length {got}, expected {want}")]
    SegmentLen { got: usize, want: usize },
    #[error("psum ({row}, {window}) = {value} overflows 20b")]
    PsumOverflow { row: usize, window: usize, value: i64 },
    #[error("SparseSkip needs a compressed operand or explicit dense bypass")]
    ModeOperand,
    #[error(transparent)]
    Csc(#[from] CscError),
}

#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Csc(&'a CscTensor),
    Dense(&'a [i32]),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyEvents {
    pub mac: u64,
    pub gated: u64,
    pub spad_read: u64,
    pub spad_write: u64,
    pub idle_cycle: u64,
    pub glb_read: u64,
    pub glb_write: u64,
    pub noc_hop: u64,
    pub dram_read: u64,
    pub dram_write: u64,
}

impl std::ops::AddAssign for EnergyEvents {
    fn add_assign(&mut self, o: Self) {
        self.mac += o.mac;
        self.gated += o.gated;
        self.spad_read += o.spad_read;
        self.spad_write += o.spad_write;
        self.idle_cycle += o.idle_cycle;
        self.glb_read += o.glb_read;
        self.glb_write += o.glb_write;
        self.noc_hop += o.noc_hop;
        self.dram_read += o.dram_read;
        self.dram_write += o.dram_write;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PeRunResult {
    /// Row-major `m0 x num_windows`.
    pub psums: Vec<i32>,
    pub cycles: u64,
    pub work_cycles: u64,
    pub fill_cycles: u64,
    pub events: EnergyEvents,
    pub iact_data_reads: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraceRow {
    pub cycle: u64,
    pub iact_idx: usize,
    pub weight_idx0: usize,
    pub weight_idx1: Option<usize>,
    pub gated: bool,
}

pub fn write_trace_csv(rows: &[TraceRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "cycle,iact_idx,weight_idx0,weight_idx1,gated")?;
    for r in rows {
        let w1 = r.weight_idx1.map(|w| w.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{}",
            r.cycle, r.iact_idx, r.weight_idx0, w1, r.gated as u8
        )?;
    }
    Ok(())
}

/// One issue slot: one or two weights of a column; a one-wide slot gates the second lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IssueSlot {
    pub first: usize,
    pub second: Option<usize>,
}

impl IssueSlot {
    pub fn gated(&self) -> bool {
        self.second.is_none()
    }
}

/// Pairs up a column's entries, two per cycle.
pub fn simd_pair_schedule<T>(col: &[T]) -> Vec<IssueSlot> {
    (0..col.len())
        .step_by(2)
        .map(|i| IssueSlot {
            first: i,
            second: (i + 1 < col.len()).then_some(i + 1),
        })
        .collect()
}

pub fn slot_cost(column_entries: u64) -> u64 {
    column_entries.div_ceil(SIMD_WIDTH)
}

/// The iact window: the last `ceil(s0/u)` segments, each held as `(offset, value)` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowState {
    seg_len: usize,
    span: usize,
    segments: VecDeque<Vec<(usize, i32)>>,
    pushed: usize,
}

impl WindowState {
    pub fn new(map: &PeMapping) -> Self {
        WindowState {
            seg_len: map.segment_len(),
            span: map.segments_per_window(),
            segments: VecDeque::new(),
            pushed: 0,
        }
    }

    pub fn push_entries(&mut self, entries: Vec<(usize, i32)>) {
        if self.segments.len() == self.span {
            self.segments.pop_front();
        }
        self.segments.push_back(entries);
        self.pushed += 1;
    }

    pub fn is_full(&self) -> bool {
        self.segments.len() == self.span
    }

    /// Psum column the current window accumulates into.
    pub fn target(&self) -> Option<usize> {
        self.is_full().then(|| self.pushed - self.span)
    }

    /// `(position in window, value)` for every held entry.
    pub fn entries(&self) -> impl Iterator<Item = (usize, i32)> + '_ {
        let seg_len = self.seg_len;
        self.segments
            .iter()
            .enumerate()
            .flat_map(move |(k, seg)| seg.iter().map(move |&(o, v)| (k * seg_len + o, v)))
    }

    pub fn stored_entries(&self) -> usize {
        self.segments.iter().map(Vec::len).sum()
    }

    /// Dense view of the window, `span * seg_len` values.
    pub fn values(&self) -> Vec<i32> {
        let mut out = vec![0; self.span * self.seg_len];
        for (p, v) in self.entries() {
            out[p] = v;
        }
        out
    }
}

/// Slides the window by one uncompressed segment of `c0 * u` values.
pub fn sliding_window_step(mut state: WindowState, new_segment: &[i32]) -> Result<WindowState, PeError> {
    if new_segment.len() != state.seg_len {
        return Err(PeError::SegmentLen {
            got: new_segment.len(),
            want: state.seg_len,
        });
    }
    let entries = new_segment
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0)
        .map(|(i, &v)| (i, v))
        .collect();
    state.push_entries(entries);
    Ok(state)
}

fn check_psums(acc: &[i64], windows: usize) -> Result<Vec<i32>, PeError> {
    let lim = 1i64 << (PSUM_BITS - 1);
    acc.iter()
        .enumerate()
        .map(|(i, &v)| {
            if v < -lim || v >= lim {
                Err(PeError::PsumOverflow {
                    row: i / windows,
                    window: i % windows,
                    value: v,
                })
            } else {
                Ok(v as i32)
            }
        })
        .collect()
}

/// Textbook 1D multi-channel convolution over the interleaved stream.
pub fn dense_oracle(iacts: &[i32], weights: &[i32], map: &PeMapping) -> Result<Vec<i32>, PeError> {
    check_operand_shapes(iacts.len(), weights.len(), map)?;
    let cols = map.cols();
    let mut acc = vec![0i64; map.m0 * map.num_windows];
    for m in 0..map.m0 {
        for f in 0..map.num_windows {
            let mut sum = 0i64;
            for s in 0..map.s0 {
                for c in 0..map.c0 {
                    let x = iacts[(f * map.u + s) * map.c0 + c] as i64;
                    let w = weights[m * cols + s * map.c0 + c] as i64;
                    sum += x * w;
                }
            }
            acc[m * map.num_windows + f] = sum;
        }
    }
    check_psums(&acc, map.num_windows)
}

fn check_operand_shapes(iact_len: usize, weight_len: usize, map: &PeMapping) -> Result<(), PeError> {
    if map.m0 == 0 || map.c0 == 0 || map.s0 == 0 || map.u == 0 || map.num_windows == 0 {
        return Err(PeError::OperandShape("mapping factors must be >= 1".into()));
    }
    if iact_len < map.stream_len() {
        return Err(PeError::OperandShape(format!(
            "iact stream has {iact_len} values, windows need {}",
            map.stream_len()
        )));
    }
    if weight_len != map.m0 * map.cols() {
        return Err(PeError::OperandShape(format!(
            "weight matrix has {weight_len} values, expected {}x{}",
            map.m0,
            map.cols()
        )));
    }
    Ok(())
}

pub fn check_mapping(map: &PeMapping, spad: &SpadConfig) -> Result<(), PeError> {
    if map.m0 > spad.psum_entries as usize {
        return Err(PeError::M0TooLarge(map.m0));
    }
    if map.segment_len() > 16 {
        return Err(PeError::WindowLen(map.segment_len()));
    }
    let need = |spad_kind, need: usize, have: u32| {
        if need > have as usize {
            Err(PeError::Capacity {
                spad: spad_kind,
                need,
                have: have as usize,
            })
        } else {
            Ok(())
        }
    };
    need(Spad::IactData, map.cols(), spad.iact_data_entries)?;
    need(Spad::WeightAddr, map.cols(), spad.weight_addr_entries)?;
    need(Spad::IactAddr, map.segments_per_window(), spad.iact_addr_entries)
}

/// 24b words a compressed weight matrix occupies; odd columns pad their last word.
pub fn weight_words(w: &CscTensor) -> usize {
    w.addresses
        .windows(2)
        .map(|a| (a[1] - a[0]).div_ceil(2))
        .sum()
}

struct Column {
    /// Non-padding entries as `(row, value)`.
    entries: Vec<(usize, i32)>,
}

fn weight_columns(w: Operand<'_>, map: &PeMapping) -> Result<Vec<Column>, PeError> {
    let cols = map.cols();
    match w {
        Operand::Dense(d) => Ok((0..cols)
            .map(|j| Column {
                entries: (0..map.m0).map(|m| (m, d[m * cols + j])).collect(),
            })
            .collect()),
        Operand::Csc(t) => {
            if t.segment_len != map.m0 || t.num_segments != cols {
                return Err(PeError::OperandShape(format!(
                    "compressed weights are {}x{}, expected {}x{}",
                    t.segment_len, t.num_segments, map.m0, cols
                )));
            }
            (0..cols)
                .map(|j| {
                    Ok(Column {
                        entries: t
                            .segment_entries(j)?
                            .into_iter()
                            .filter(|&(_, v)| v != 0)
                            .collect(),
                    })
                })
                .collect()
        }
    }
}

fn dense_weights(w: Operand<'_>, map: &PeMapping) -> Result<Vec<i32>, PeError> {
    match w {
        Operand::Dense(d) => Ok(d.to_vec()),
        Operand::Csc(t) => {
            let col_major = t.decode()?;
            let cols = map.cols();
            if col_major.len() != map.m0 * cols {
                return Err(PeError::OperandShape("compressed weight size".into()));
            }
            let mut out = vec![0; col_major.len()];
            for j in 0..cols {
                for m in 0..map.m0 {
                    out[m * cols + j] = col_major[j * map.m0 + m];
                }
            }
            Ok(out)
        }
    }
}

fn iact_segments(x: Operand<'_>, map: &PeMapping) -> Result<Vec<Vec<(usize, i32)>>, PeError> {
    let seg_len = map.segment_len();
    let needed = map.num_windows - 1 + map.segments_per_window();
    match x {
        Operand::Dense(d) => Ok((0..needed)
            .map(|k| {
                (0..seg_len)
                    .map(|o| (o, d.get(k * seg_len + o).copied().unwrap_or(0)))
                    .collect()
            })
            .collect()),
        Operand::Csc(t) => {
            if t.segment_len != seg_len {
                return Err(PeError::SegmentLen {
                    got: t.segment_len,
                    want: seg_len,
                });
            }
            (0..needed)
                .map(|k| {
                    if k < t.num_segments {
                        Ok(t.segment_entries(k)?)
                    } else {
                        Ok(Vec::new())
                    }
                })
                .collect()
        }
    }
}

fn dense_iacts(x: Operand<'_>) -> Result<Vec<i32>, PeError> {
    match x {
        Operand::Dense(d) => Ok(d.to_vec()),
        Operand::Csc(t) => Ok(t.decode()?),
    }
}

pub fn run_pe(
    iacts: Operand<'_>,
    weights: Operand<'_>,
    map: &PeMapping,
    mode: PeMode,
    spad: &SpadConfig,
) -> Result<PeRunResult, PeError> {
    run_pe_traced(iacts, weights, map, mode, spad, None)
}

pub fn run_pe_traced(
    iacts: Operand<'_>,
    weights: Operand<'_>,
    map: &PeMapping,
    mode: PeMode,
    spad: &SpadConfig,
    trace: Option<&mut Vec<TraceRow>>,
) -> Result<PeRunResult, PeError> {
    check_mapping(map, spad)?;
    match mode {
        PeMode::SparseSkip => run_sparse(iacts, weights, map, spad, trace),
        PeMode::DenseGate | PeMode::DenseGateIactOnly => {
            let x = dense_iacts(iacts)?;
            let w = dense_weights(weights, map)?;
            check_operand_shapes(x.len(), w.len(), map)?;
            if w.len() > spad.weight_pairs() as usize {
                return Err(PeError::Capacity {
                    spad: Spad::WeightData,
                    need: w.len(),
                    have: spad.weight_pairs() as usize,
                });
            }
            run_dense(&x, &w, map, mode, trace)
        }
    }
}

fn run_sparse(
    iacts: Operand<'_>,
    weights: Operand<'_>,
    map: &PeMapping,
    spad: &SpadConfig,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<PeRunResult, PeError> {
    let (words, stored) = match weights {
        Operand::Csc(t) => (weight_words(t), t.entries()),
        Operand::Dense(d) => {
            check_operand_shapes(map.stream_len(), d.len(), map)?;
            (map.cols() * map.m0.div_ceil(2), d.len())
        }
    };
    if words > spad.weight_data_entries as usize {
        return Err(PeError::Capacity {
            spad: Spad::WeightData,
            need: words,
            have: spad.weight_data_entries as usize,
        });
    }
    if let Operand::Dense(d) = iacts {
        if d.len() < map.stream_len() {
            return Err(PeError::OperandShape(format!(
                "iact stream has {} values, windows need {}",
                d.len(),
                map.stream_len()
            )));
        }
    }
    let columns = weight_columns(weights, map)?;
    let segments = iact_segments(iacts, map)?;
    let iact_dense = matches!(iacts, Operand::Dense(_));
    let cols = map.cols();
    let mut ev = EnergyEvents {
        spad_write: (stored + cols) as u64,
        ..Default::default()
    };
    let mut acc = vec![0i64; map.m0 * map.num_windows];
    let mut work = 0u64;
    let mut iact_reads = 0u64;
    let mut window = WindowState::new(map);
    for seg in segments {
        ev.spad_write += seg.len() as u64 + 1;
        window.push_entries(seg);
        let Some(f) = window.target() else { continue };
        if window.stored_entries() > spad.iact_data_entries as usize {
            return Err(PeError::Capacity {
                spad: Spad::IactData,
                need: window.stored_entries(),
                have: spad.iact_data_entries as usize,
            });
        }
        ev.spad_read += 1;
        for (j, x) in window.entries() {
            if j >= cols || (x == 0 && !iact_dense) {
                continue;
            }
            iact_reads += 1;
            ev.spad_read += 2;
            let col = &columns[j].entries;
            for slot in simd_pair_schedule(col) {
                let lanes = [Some(slot.first), slot.second];
                let mut issued = 0;
                for k in lanes.into_iter().flatten() {
                    let (m, w) = col[k];
                    if x != 0 && w != 0 {
                        acc[m * map.num_windows + f] += x as i64 * w as i64;
                        ev.mac += 1;
                        ev.spad_read += 1;
                        ev.spad_write += 1;
                        issued += 1;
                    }
                }
                ev.gated += SIMD_WIDTH - issued;
                ev.spad_read += 1;
                if let Some(t) = trace.as_deref_mut() {
                    t.push(TraceRow {
                        cycle: work,
                        iact_idx: f * map.segment_len() + j,
                        weight_idx0: col[slot.first].0,
                        weight_idx1: slot.second.map(|k| col[k].0),
                        gated: issued < SIMD_WIDTH,
                    });
                }
                work += 1;
            }
        }
    }
    ev.spad_read += iact_reads;
    let fill = PeMode::SparseSkip.fill_cycles();
    ev.idle_cycle += fill;
    Ok(PeRunResult {
        psums: check_psums(&acc, map.num_windows)?,
        cycles: work + fill,
        work_cycles: work,
        fill_cycles: fill,
        events: ev,
        iact_data_reads: iact_reads,
    })
}

fn run_dense(
    x: &[i32],
    w: &[i32],
    map: &PeMapping,
    mode: PeMode,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<PeRunResult, PeError> {
    let cols = map.cols();
    let mut ev = EnergyEvents {
        spad_write: (w.len() + map.stream_len()) as u64,
        ..Default::default()
    };
    let mut acc = vec![0i64; map.m0 * map.num_windows];
    let mut cycle = 0u64;
    let mut iact_reads = 0u64;
    for f in 0..map.num_windows {
        for j in 0..cols {
            let (s, c) = (j / map.c0, j % map.c0);
            let xi = (f * map.u + s) * map.c0 + c;
            let xv = x[xi];
            iact_reads += 1;
            for m in 0..map.m0 {
                let wv = w[m * cols + j];
                let gated = match mode {
                    PeMode::DenseGateIactOnly => xv == 0,
                    _ => xv == 0 || wv == 0,
                };
                if !gated || mode == PeMode::DenseGate {
                    ev.spad_read += 1;
                }
                if gated {
                    ev.gated += 1;
                } else {
                    acc[m * map.num_windows + f] += xv as i64 * wv as i64;
                    ev.mac += 1;
                    ev.spad_read += 1;
                    ev.spad_write += 1;
                }
                if let Some(t) = trace.as_deref_mut() {
                    t.push(TraceRow {
                        cycle,
                        iact_idx: xi,
                        weight_idx0: m,
                        weight_idx1: None,
                        gated,
                    });
                }
                cycle += 1;
            }
        }
    }
    ev.spad_read += iact_reads;
    let fill = mode.fill_cycles();
    ev.idle_cycle += fill;
    Ok(PeRunResult {
        psums: check_psums(&acc, map.num_windows)?,
        cycles: cycle + fill,
        work_cycles: cycle,
        fill_cycles: fill,
        events: ev,
        iact_data_reads: iact_reads,
    })
}
