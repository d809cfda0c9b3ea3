//! Layer and model simulation. Each pass lasts as long as its slowest PE or its
//! slowest operand delivery; DRAM traffic can stretch a whole layer.

pub mod energy;
pub mod tensors;

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::arch::{ArchConfig, ArchVariant, DramBandwidth};
use crate::csc::{encode_iact_stream, encode_weight_matrix, Signedness};
use crate::eyexam;
use crate::mapper::{self, Mapping, PeTile};
use crate::pe::{self, EnergyEvents, Operand, PeError, PeMode};
use crate::workload::{DnnModel, LayerKind, LayerShape};

pub use energy::{energy_report, EnergyBreakdown, EnergyCostTable};
pub use tensors::{conv_reference, prefers_csc, LayerStats, LayerTensors};

pub const RESULT_SCHEMA: &str = "eyesim.result.v1";

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("layer {label}: {detail}")]
    TensorShape { label: String, detail: String },
    #[error("layer {0}: no legal mapping")]
    NoMapping(String),
    #[error("layer {0}: no tensors supplied")]
    MissingTensors(String),
    #[error("layer {label}: {source}")]
    Pe { label: String, source: PeError },
    #[error("layer {label}: output {index} is {got}, reference {want}")]
    Mismatch { label: String, index: usize, got: i64, want: i64 },
    #[error("layer {label}: simulated {sim} cycles beat the bound of {bound}")]
    BoundViolation { label: String, sim: u64, bound: u64 },
    #[error("layer {label}: PE model disagrees: {detail}")]
    Internal { label: String, detail: String },
}

/// What the layer operands look like.
#[derive(Debug, Clone, Copy)]
pub enum LayerData<'a> {
    /// Every value non-zero; timing only.
    Dense,
    Tensors(&'a LayerTensors),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    /// Run every PE tile through the PE model and compare outputs with the direct convolution.
    pub functional: bool,
    /// Candidates kept when packing compressed weights past the dense limit.
    pub sparse_keep: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            functional: false,
            sparse_keep: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundBy {
    Compute,
    Iact,
    Weight,
    Psum,
    Dram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct DramTraffic {
    pub iact_read: u64,
    pub weight_read: u64,
    pub output_write: u64,
}

impl DramTraffic {
    pub fn total(&self) -> u64 {
        self.iact_read + self.weight_read + self.output_write
    }
}

/// Values delivered over the array network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct NocTraffic {
    pub iact: u64,
    pub weight: u64,
    pub psum: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerResult {
    pub label: String,
    pub kind: LayerKind,
    pub macs: u64,
    pub cycles: u64,
    /// Sum over passes of the slowest PE, fill included.
    pub compute_cycles: u64,
    pub passes: u64,
    pub active_pes: u64,
    /// Issued MACs per active MAC slot.
    pub active_util: f64,
    pub iact_compressed: bool,
    pub weight_compressed: bool,
    pub noc: NocTraffic,
    pub dram: DramTraffic,
    pub events: EnergyEvents,
    pub bound_by: BoundBy,
    /// Lower bound on cycles from the rooflines of this mapping.
    pub bound_cycles: u64,
    pub psums_checked: bool,
    pub mapping: Mapping,
}

fn dram_cycles(bytes: u64, arch: &ArchConfig) -> u64 {
    match arch.dram.bytes_per_cycle(arch.clock_hz) {
        Some(b) => (bytes as f64 / b).ceil() as u64,
        None => 0,
    }
}

fn csc_bytes(entries: u64) -> u64 {
    (entries * 12).div_ceil(8)
}

struct TileCost {
    work: u64,
    mac: u64,
    lanes: u64,
}

fn tile_cost(shape: &LayerShape, st: &LayerStats, mode: PeMode, iact_csc: bool, weight_csc: bool, t: &PeTile) -> TileCost {
    let f_len = t.f.1 - t.f.0;
    let m_len = t.m.1 - t.m.0;
    let h = t.e * shape.u + t.r;
    let mut tc = TileCost {
        work: 0,
        mac: 0,
        lanes: 0,
    };
    for c in t.c.0..t.c.1 {
        for q in 0..shape.s {
            let nzx = st.window_nonzeros(t.g, t.n, c, h, q, t.f.0, t.f.1);
            let (nzw, _) = st.column(t.g, t.m_block, c, t.r, q);
            match mode {
                PeMode::SparseSkip => {
                    let xs = if iact_csc { nzx } else { f_len };
                    let slots = pe::slot_cost(if weight_csc { nzw } else { m_len });
                    tc.work += xs * slots;
                    tc.lanes += xs * slots * pe::SIMD_WIDTH;
                    tc.mac += nzx * nzw;
                }
                PeMode::DenseGate => {
                    tc.work += f_len * m_len;
                    tc.lanes += f_len * m_len;
                    tc.mac += nzx * nzw;
                }
                PeMode::DenseGateIactOnly => {
                    tc.work += f_len * m_len;
                    tc.lanes += f_len * m_len;
                    tc.mac += nzx * m_len;
                }
            }
        }
    }
    tc
}

struct Functional<'a> {
    t: &'a LayerTensors,
    out: Vec<i64>,
}

#[allow(clippy::too_many_arguments)]
fn run_tile(
    label: &str,
    shape: &LayerShape,
    arch: &ArchConfig,
    iact_csc: bool,
    weight_csc: bool,
    tile: &PeTile,
    expect_work: u64,
    fx: &mut Functional<'_>,
) -> Result<EnergyEvents, EngineError> {
    let map = tile.pe_mapping(shape);
    let h = tile.e * shape.u + tile.r;
    let mut stream = vec![0i32; map.stream_len()];
    for (i, v) in stream.iter_mut().enumerate() {
        let (x, ci) = ((i / map.c0) as u64, (i % map.c0) as u64);
        let w = tile.f.0 * shape.u + x;
        if w < shape.w {
            *v = fx.t.iacts[tensors::iact_index(shape, tile.g, tile.n, tile.c.0 + ci, h, w)] as i32;
        }
    }
    let cols = map.cols();
    let mut wm = vec![0i32; map.m0 * cols];
    for mi in 0..map.m0 {
        for j in 0..cols {
            let (q, ci) = ((j / map.c0) as u64, (j % map.c0) as u64);
            let idx = mapper::weight_index(shape, tile.g, tile.m.0 + mi as u64, tile.c.0 + ci, tile.r, q);
            wm[mi * cols + j] = fx.t.weights[idx] as i32;
        }
    }
    let pe_err = |source| EngineError::Pe {
        label: label.to_string(),
        source,
    };
    let sparse = arch.pe_mode == PeMode::SparseSkip;
    let xc = if sparse && iact_csc {
        Some(encode_iact_stream(&stream, map.segment_len(), Signedness::Signed).map_err(|e| pe_err(e.into()))?)
    } else {
        None
    };
    let wc = if sparse && weight_csc {
        Some(encode_weight_matrix(&wm, map.m0, cols).map_err(|e| pe_err(e.into()))?)
    } else {
        None
    };
    let x_op = xc.as_ref().map_or(Operand::Dense(&stream), Operand::Csc);
    let w_op = wc.as_ref().map_or(Operand::Dense(&wm), Operand::Csc);
    let res = pe::run_pe(x_op, w_op, &map, arch.pe_mode, &arch.spad).map_err(pe_err)?;
    if res.work_cycles != expect_work {
        return Err(EngineError::Internal {
            label: label.to_string(),
            detail: format!("PE ran {} work cycles, timing model {}", res.work_cycles, expect_work),
        });
    }
    for mi in 0..map.m0 {
        for fi in 0..map.num_windows {
            let o = tensors::output_index(shape, tile.g, tile.n, tile.m.0 + mi as u64, tile.e, tile.f.0 + fi as u64);
            fx.out[o] += res.psums[mi * map.num_windows + fi] as i64;
        }
    }
    Ok(res.events)
}

fn range(block: u64, size: u64, d: u64) -> (u64, u64) {
    ((block * size).min(d), ((block + 1) * size).min(d))
}

pub fn run_layer(
    label: &str,
    shape: &LayerShape,
    data: LayerData<'_>,
    map: &Mapping,
    arch: &ArchConfig,
    opts: SimOptions,
) -> Result<LayerResult, EngineError> {
    let m0 = map.pe.m0 as u64;
    let stats = match data {
        LayerData::Dense => LayerStats::dense(shape, m0),
        LayerData::Tensors(t) => {
            t.check(label, shape)?;
            LayerStats::from_tensors(shape, m0, t)
        }
    };
    let (n_iacts, n_weights, n_outputs) = shape.data_counts();
    let sparse_pe = arch.pe_mode == PeMode::SparseSkip;
    let iact_csc = sparse_pe && prefers_csc(stats.iact_nonzeros, n_iacts);
    let weight_csc = sparse_pe && prefers_csc(stats.weight_nonzeros, n_weights);
    let bw = map.bandwidths_with(arch, [iact_csc, weight_csc, false]);
    let mut fx = match (opts.functional, data) {
        (true, LayerData::Tensors(t)) => Some(Functional {
            t,
            out: vec![0; n_outputs as usize],
        }),
        _ => None,
    };

    let p = map.spatial;
    let fill = arch.fill_cycles;
    let iact_glb = (arch.clusters.num_clusters() * arch.clusters.iact_glb_bytes_per_cluster()) as u64;
    let iact_stored = if iact_csc { csc_bytes(stats.iact_nonzeros) } else { n_iacts };
    let iacts_resident = iact_stored <= iact_glb;

    let mut noc = NocTraffic::default();
    let mut dram = DramTraffic::default();
    let mut ev = EnergyEvents::default();
    let mut cycles_total = 0u64;
    let mut compute_total = 0u64;
    let mut work_total = 0u64;
    let mut passes = 0u64;
    let mut by = BTreeMap::<u8, u64>::new();
    let mut err = None;

    map.for_each_pass(shape, |[tg, tn, tm, tc, te, tr], tiles| {
        if err.is_some() {
            return;
        }
        passes += 1;
        let mut pe_max = 0u64;
        let mut busy = 0u64;
        for t in tiles {
            let cost = tile_cost(shape, &stats, arch.pe_mode, iact_csc, weight_csc, t);
            if let Some(f) = fx.as_mut() {
                match run_tile(label, shape, arch, iact_csc, weight_csc, t, cost.work, f) {
                    Ok(e) => ev += e,
                    Err(e) => {
                        err = Some(e);
                        return;
                    }
                }
            } else {
                ev.mac += cost.mac;
                ev.gated += cost.lanes - cost.mac;
                ev.spad_read += 2 * cost.mac + cost.work;
                ev.spad_write += cost.mac;
            }
            pe_max = pe_max.max(cost.work + fill);
            busy += cost.work + fill;
            work_total += cost.work;
        }
        let (g_lo, g_hi) = range(tg, p.g, shape.g);
        let (n_lo, n_hi) = range(tn, p.n, shape.n);
        let (e_lo, e_hi) = range(te, p.e, shape.e);
        let (r_lo, r_hi) = range(tr, p.r, shape.r);
        let (c_lo, c_hi) = range(tc, p.c * map.pe.c0 as u64, shape.c);
        let (m_lo, m_hi) = range(tm, p.m * m0, shape.m);
        let (h_lo, h_hi) = (e_lo * shape.u + r_lo, (e_hi - 1) * shape.u + r_hi);

        let mut iv = 0u64;
        for g in g_lo..g_hi {
            for n in n_lo..n_hi {
                for c in c_lo..c_hi {
                    iv += if iact_csc {
                        stats.rows_nonzeros(g, n, c, h_lo, h_hi)
                    } else {
                        (h_hi - h_lo) * shape.w
                    };
                }
            }
        }
        let loads_weights = match map.order {
            mapper::LoopOrder::WeightsResident => tn == 0 && te == 0,
            mapper::LoopOrder::OutputsResident => true,
        };
        let mut wv = 0u64;
        if loads_weights {
            if weight_csc {
                for g in g_lo..g_hi {
                    for mb in m_lo / m0..m_hi.div_ceil(m0) {
                        for c in c_lo..c_hi {
                            for r in r_lo..r_hi {
                                for q in 0..shape.s {
                                    wv += stats.column(g, mb, c, r, q).1;
                                }
                            }
                        }
                    }
                }
            } else {
                wv = (g_hi - g_lo) * (m_hi - m_lo) * (c_hi - c_lo) * (r_hi - r_lo) * shape.s;
            }
        }
        let outs = (g_hi - g_lo) * (n_hi - n_lo) * (m_hi - m_lo) * (e_hi - e_lo) * shape.f;
        let first_acc = tc == 0 && tr == 0;
        let pv = if first_acc { outs } else { 2 * outs };

        let terms = [
            (0u8, pe_max),
            (1, mapper::transfer_cycles(iv, bw.iact)),
            (2, mapper::transfer_cycles(wv, bw.weight)),
            (3, mapper::transfer_cycles(pv, bw.psum)),
        ];
        let (who, pass_cycles) = terms.iter().copied().max_by_key(|&(k, c)| (c, std::cmp::Reverse(k))).unwrap();
        *by.entry(who).or_default() += pass_cycles;
        cycles_total += pass_cycles;
        compute_total += pe_max;

        noc.iact += iv;
        noc.weight += wv;
        noc.psum += pv;
        dram.weight_read += if weight_csc { csc_bytes(wv) } else { wv };
        if !iacts_resident {
            dram.iact_read += if iact_csc { csc_bytes(iv) } else { iv };
        }
        ev.idle_cycle += arch.num_pes() as u64 * pass_cycles - busy.min(arch.num_pes() as u64 * pass_cycles);
        ev.glb_read += iv + (pv - outs);
        ev.glb_write += outs;
    });
    if let Some(e) = err {
        return Err(e);
    }

    if iacts_resident {
        dram.iact_read = iact_stored;
    }
    dram.output_write = n_outputs;
    ev.glb_write += dram.iact_read;
    ev.noc_hop += noc.iact + noc.weight + noc.psum;
    ev.dram_read += dram.iact_read + dram.weight_read;
    ev.dram_write += dram.output_write;

    let dc = dram_cycles(dram.total(), arch);
    let mut bound_by = match by.iter().max_by_key(|(k, v)| (**v, std::cmp::Reverse(**k))).map(|(k, _)| *k) {
        Some(1) => BoundBy::Iact,
        Some(2) => BoundBy::Weight,
        Some(3) => BoundBy::Psum,
        _ => BoundBy::Compute,
    };
    if dc > cycles_total {
        bound_by = BoundBy::Dram;
    }
    let cycles = cycles_total.max(dc).max(1);

    let mut psums_checked = false;
    if let Some(f) = fx {
        let want = conv_reference(shape, f.t);
        if let Some(i) = (0..want.len()).find(|&i| want[i] != f.out[i]) {
            return Err(EngineError::Mismatch {
                label: label.to_string(),
                index: i,
                got: f.out[i],
                want: want[i],
            });
        }
        psums_checked = true;
    }

    let active = map.active_pes();
    let bound_cycles = if iact_csc || weight_csc || data_is_sparse(&stats, shape, arch.pe_mode) {
        sparse_bound(arch, map, work_total, passes, &noc, &bw)
    } else {
        eyexam::mapping_bound(shape, arch, map).cycles
    };
    if cycles < bound_cycles {
        return Err(EngineError::BoundViolation {
            label: label.to_string(),
            sim: cycles,
            bound: bound_cycles,
        });
    }
    Ok(LayerResult {
        label: label.to_string(),
        kind: shape.kind,
        macs: shape.mac_count(),
        cycles,
        compute_cycles: compute_total,
        passes,
        active_pes: active,
        active_util: ev.mac as f64 / (cycles as f64 * active as f64 * arch.macs_per_pe as f64),
        iact_compressed: iact_csc,
        weight_compressed: weight_csc,
        noc,
        dram,
        events: ev,
        bound_by,
        bound_cycles,
        psums_checked,
        mapping: *map,
    })
}

/// Whether the PE timing depends on operand values (zero skipping on a sparse PE).
fn data_is_sparse(st: &LayerStats, shape: &LayerShape, mode: PeMode) -> bool {
    let (ni, nw, _) = shape.data_counts();
    mode == PeMode::SparseSkip && (st.iact_nonzeros < ni || st.weight_nonzeros < nw)
}

/// Roofline bound from the volumes actually moved and the lanes actually issued.
fn sparse_bound(
    arch: &ArchConfig,
    map: &Mapping,
    work: u64,
    passes: u64,
    noc: &NocTraffic,
    bw: &mapper::Bandwidths,
) -> u64 {
    let compute = work.div_ceil(map.active_pes()) + passes * arch.fill_cycles;
    [(noc.iact, bw.iact), (noc.weight, bw.weight), (noc.psum, bw.psum)]
        .into_iter()
        .map(|(vol, b)| mapper::transfer_cycles(vol, b))
        .fold(compute, u64::max)
}

/// How a whole model gets its operands.
#[derive(Debug, Clone)]
pub enum TensorSource<'a> {
    Dense,
    Synthetic(SyntheticSpec),
    Provided(&'a BTreeMap<String, LayerTensors>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub iact_density: f64,
    /// Per-layer weight density; the last entry repeats.
    pub weight_density: Vec<f64>,
    pub first_layer_dense: bool,
}

impl SyntheticSpec {
    pub fn uniform(seed: u64, density: f64) -> Self {
        SyntheticSpec {
            seed,
            iact_density: density,
            weight_density: vec![density],
            first_layer_dense: false,
        }
    }

    pub fn layer(&self, index: usize, shape: &LayerShape) -> LayerTensors {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let wd = self
            .weight_density
            .get(index)
            .or(self.weight_density.last())
            .copied()
            .unwrap_or(1.0);
        let id = if index == 0 && self.first_layer_dense { 1.0 } else { self.iact_density };
        LayerTensors::synthetic(shape, id, wd, &mut rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelReport {
    pub schema: &'static str,
    pub model: String,
    pub arch: String,
    pub layers: Vec<LayerResult>,
    pub total_cycles: u64,
    pub total_macs: u64,
    pub inferences_per_sec: f64,
    pub dram_bytes: u64,
    pub events: EnergyEvents,
}

/// Picks the mapping: compressed weights on a sparse PE may pack past the dense limit.
pub fn choose_mapping(label: &str, shape: &LayerShape, arch: &ArchConfig, data: LayerData<'_>, keep: usize) -> Result<Mapping, EngineError> {
    let found = match data {
        LayerData::Tensors(t) if arch.pe_mode == PeMode::SparseSkip => {
            let nz = t.weights.iter().filter(|&&v| v != 0).count() as u64;
            if prefers_csc(nz, t.weights.len() as u64) {
                mapper::search_sparse(shape, arch, &t.weights, keep).map(|(m, _, _)| m)
            } else {
                mapper::search(shape, arch).map(|(m, _)| m)
            }
        }
        _ => mapper::search(shape, arch).map(|(m, _)| m),
    };
    found.ok_or_else(|| EngineError::NoMapping(label.to_string()))
}

pub fn run_model(model: &DnnModel, source: &TensorSource<'_>, arch: &ArchConfig, opts: SimOptions) -> Result<ModelReport, EngineError> {
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut cache: HashMap<LayerShape, Mapping> = HashMap::new();
    for (i, layer) in model.layers.iter().enumerate() {
        let shape = &layer.shape;
        let owned;
        let data = match source {
            TensorSource::Dense => LayerData::Dense,
            TensorSource::Synthetic(spec) => {
                owned = spec.layer(i, shape);
                LayerData::Tensors(&owned)
            }
            TensorSource::Provided(map) => {
                LayerData::Tensors(map.get(&layer.label).ok_or_else(|| EngineError::MissingTensors(layer.label.clone()))?)
            }
        };
        let mapping = match data {
            LayerData::Dense => match cache.get(shape) {
                Some(m) => *m,
                None => {
                    let m = choose_mapping(&layer.label, shape, arch, data, opts.sparse_keep)?;
                    cache.insert(*shape, m);
                    m
                }
            },
            _ => choose_mapping(&layer.label, shape, arch, data, opts.sparse_keep)?,
        };
        layers.push(run_layer(&layer.label, shape, data, &mapping, arch, opts)?);
    }
    Ok(summarize(model, arch, layers))
}

pub fn summarize(model: &DnnModel, arch: &ArchConfig, layers: Vec<LayerResult>) -> ModelReport {
    let total_cycles: u64 = layers.iter().map(|l| l.cycles).sum();
    let mut events = EnergyEvents::default();
    for l in &layers {
        events += l.events;
    }
    ModelReport {
        schema: RESULT_SCHEMA,
        model: model.name.clone(),
        arch: arch.name.clone(),
        total_macs: layers.iter().map(|l| l.macs).sum(),
        dram_bytes: layers.iter().map(|l| l.dram.total()).sum(),
        inferences_per_sec: arch.clock_hz / total_cycles.max(1) as f64,
        total_cycles,
        layers,
        events,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalePoint {
    pub pes: usize,
    pub total_cycles: u64,
    /// Throughput relative to the first scale.
    pub normalized: f64,
    pub linear: f64,
    pub layer_cycles: Vec<(String, LayerKind, u64)>,
}

/// Dense timing at each PE count on 4x4-PE clusters with unlimited off-chip bandwidth.
pub fn scalability_sweep(model: &DnnModel, scales: &[usize], variant: ArchVariant) -> Result<Vec<ScalePoint>, EngineError> {
    let mut out: Vec<ScalePoint> = Vec::with_capacity(scales.len());
    for &pes in scales {
        let mut arch = ArchConfig::scaled(variant, pes);
        arch.dram = DramBandwidth::UNLIMITED;
        let rep = run_model(model, &TensorSource::Dense, &arch, SimOptions::default())?;
        let (base_cycles, base_pes) = out.first().map_or((rep.total_cycles, pes), |b| (b.total_cycles, b.pes));
        out.push(ScalePoint {
            pes,
            total_cycles: rep.total_cycles,
            normalized: base_cycles as f64 / rep.total_cycles as f64,
            linear: pes as f64 / base_pes as f64,
            layer_cycles: rep.layers.iter().map(|l| (l.label.clone(), l.kind, l.cycles)).collect(),
        });
    }
    Ok(out)
}
