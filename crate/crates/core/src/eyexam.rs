//! Seven-step performance bounds (MACs per cycle) for WS, OS, IS and RS dataflows.

use serde::{Deserialize, Serialize};

use crate::arch::{ArchConfig, NocKind};
use crate::mapper::{self, Mapping};
use crate::noc::{Datatype, RouterSpec};
use crate::workload::LayerShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dataflow {
    #[serde(rename = "ws")]
    WeightStationary,
    #[serde(rename = "os")]
    OutputStationary,
    #[serde(rename = "is")]
    InputStationary,
    #[serde(rename = "rs")]
    RowStationary,
}

impl Dataflow {
    pub const ALL: [Dataflow; 4] = [
        Dataflow::WeightStationary,
        Dataflow::OutputStationary,
        Dataflow::InputStationary,
        Dataflow::RowStationary,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ws" => Some(Dataflow::WeightStationary),
            "os" => Some(Dataflow::OutputStationary),
            "is" => Some(Dataflow::InputStationary),
            "rs" => Some(Dataflow::RowStationary),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dataflow::WeightStationary => "ws",
            Dataflow::OutputStationary => "os",
            Dataflow::InputStationary => "is",
            Dataflow::RowStationary => "rs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossReason {
    None,
    WorkloadSize,
    DataflowParallelism,
    PeCountFragmentation,
    ArrayShapeFragmentation,
    StorageCapacity,
    DeliveryBandwidth,
    RampUp,
}

impl LossReason {
    pub fn label(self) -> &'static str {
        match self {
            LossReason::None => "none",
            LossReason::WorkloadSize => "finite workload",
            LossReason::DataflowParallelism => "dataflow parallel dims",
            LossReason::PeCountFragmentation => "finite PE count",
            LossReason::ArrayShapeFragmentation => "array dimensions",
            LossReason::StorageCapacity => "storage capacity",
            LossReason::DeliveryBandwidth => "data bandwidth",
            LossReason::RampUp => "access pattern ramp-up",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepBound {
    pub step: u8,
    pub bound: f64,
    pub loss_reason: LossReason,
}

fn tighten(step: u8, prev: f64, cand: f64, reason: LossReason) -> StepBound {
    if cand < prev {
        StepBound {
            step,
            bound: cand,
            loss_reason: reason,
        }
    } else {
        StepBound {
            step,
            bound: prev,
            loss_reason: LossReason::None,
        }
    }
}

/// Loop nest of a 1D convolution: outer temporal `e2, r2`, spatial `e1, r1`, inner `e0, r0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopNest1D {
    pub e0: u64,
    pub e1: u64,
    pub e2: u64,
    pub r0: u64,
    pub r1: u64,
    pub r2: u64,
}

impl LoopNest1D {
    /// Weight stationary: all of `E` in the PE, filter taps spread over at most `pes` PEs.
    pub fn weight_stationary(e: u64, r: u64, pes: u64) -> Self {
        let r1 = r.min(pes).max(1);
        LoopNest1D {
            e0: e,
            e1: 1,
            e2: 1,
            r0: 1,
            r1,
            r2: r.div_ceil(r1),
        }
    }

    /// Output stationary: all taps in the PE, outputs spread.
    pub fn output_stationary(e: u64, r: u64, pes: u64) -> Self {
        let e1 = e.min(pes).max(1);
        LoopNest1D {
            e0: 1,
            e1,
            e2: e.div_ceil(e1),
            r0: r,
            r1: 1,
            r2: 1,
        }
    }

    pub fn spatial(&self) -> u64 {
        self.e1 * self.r1
    }

    pub fn slack(&self, e: u64, r: u64) -> (u64, u64) {
        (self.e0 * self.e1 * self.e2 - e, self.r0 * self.r1 * self.r2 - r)
    }

    /// Average active PEs across the temporal passes.
    pub fn average_active(&self, e: u64, r: u64) -> f64 {
        let mut busy = 0u64;
        let mut passes = 0u64;
        for i2 in 0..self.e2 {
            for j2 in 0..self.r2 {
                passes += 1;
                for i1 in 0..self.e1 {
                    for j1 in 0..self.r1 {
                        let ei = (i2 * self.e1 + i1) * self.e0;
                        let rj = (j2 * self.r1 + j1) * self.r0;
                        busy += (ei < e && rj < r) as u64;
                    }
                }
            }
        }
        busy as f64 / passes as f64
    }
}

/// Dims a dataflow spreads over array rows (`vertical`) and columns (`horizontal`).
/// With `fold`, rows left over by the vertical set carry further horizontal replicas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bindings {
    pub vertical: u64,
    pub horizontal: u64,
    pub fold: bool,
}

pub fn bindings(shape: &LayerShape, df: Dataflow, g_tiling: bool) -> Bindings {
    let s = shape;
    let (vertical, horizontal) = match df {
        Dataflow::WeightStationary => (s.c * s.r * s.s, s.m),
        Dataflow::OutputStationary => (s.e * s.f, s.m),
        Dataflow::InputStationary => (s.c, s.h * s.w),
        Dataflow::RowStationary => (s.c * s.r, s.m * s.e * s.f * s.n * if g_tiling { s.g } else { 1 }),
    };
    Bindings {
        vertical,
        horizontal,
        fold: df == Dataflow::RowStationary,
    }
}

pub fn step1_workload(shape: &LayerShape) -> StepBound {
    StepBound {
        step: 1,
        bound: shape.mac_count() as f64,
        loss_reason: LossReason::WorkloadSize,
    }
}

pub fn step2_dataflow(prev: &StepBound, shape: &LayerShape, df: Dataflow, g_tiling: bool) -> StepBound {
    let b = bindings(shape, df, g_tiling);
    tighten(2, prev.bound, (b.vertical * b.horizontal) as f64, LossReason::DataflowParallelism)
}

/// Average parallelism when `work` parallel units share `num_pes`.
pub fn step3_num_pes(prev: &StepBound, work: u64, num_pes: u64) -> StepBound {
    let passes = work.div_ceil(num_pes.max(1)).max(1);
    tighten(3, prev.bound, work as f64 / passes as f64, LossReason::PeCountFragmentation)
}

pub fn step4_physical_dims(prev: &StepBound, b: Bindings, rows: u64, cols: u64) -> StepBound {
    let frag = |d: u64, n: u64| d as f64 / d.div_ceil(n.max(1)).max(1) as f64;
    let best = if b.fold {
        (1..=b.vertical.min(rows).max(1))
            .map(|pv| frag(b.vertical, pv) * frag(b.horizontal, cols * (rows / pv)))
            .fold(0.0, f64::max)
    } else {
        frag(b.vertical, rows) * frag(b.horizontal, cols)
    };
    tighten(4, prev.bound, best, LossReason::ArrayShapeFragmentation)
}

/// What the storage levels must hold at the current parallelism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageDemand {
    pub live_psums: u64,
    /// `None` is unbounded.
    pub psum_capacity: Option<u64>,
    pub m0_requested: Option<u64>,
    pub m0_cap: u64,
}

pub fn step5_storage(prev: &StepBound, d: &StorageDemand) -> StepBound {
    let mut scale = 1.0;
    if let Some(cap) = d.psum_capacity {
        if d.live_psums > cap {
            scale *= cap as f64 / d.live_psums as f64;
        }
    }
    if let Some(m0) = d.m0_requested {
        if m0 > d.m0_cap {
            scale *= d.m0_cap as f64 / m0 as f64;
        }
    }
    tighten(5, prev.bound, prev.bound * scale, LossReason::StorageCapacity)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roofline {
    pub datatype: Datatype,
    pub peak: f64,
    /// Values per cycle to the active PEs; `None` is unlimited.
    pub bw: Option<f64>,
    /// MACs per delivered value.
    pub intensity: f64,
}

impl Roofline {
    pub fn bound(&self) -> f64 {
        match self.bw {
            Some(bw) => self.peak.min(bw * self.intensity),
            None => self.peak,
        }
    }

    pub fn inflection(&self) -> Option<f64> {
        self.bw.map(|bw| self.peak / bw)
    }
}

pub fn step6_bandwidth(prev: &StepBound, rooflines: &[Roofline]) -> StepBound {
    let b = rooflines
        .iter()
        .map(|r| Roofline { peak: prev.bound, ..*r }.bound())
        .fold(prev.bound, f64::min);
    tighten(6, prev.bound, b, LossReason::DeliveryBandwidth)
}

/// Two-phase model: for `rampup_fraction` of steady time the bound runs short by `deficit`.
pub fn step7_access_pattern(prev: &StepBound, rampup_fraction: f64, deficit: f64) -> StepBound {
    let penalty = (rampup_fraction * deficit).max(0.0);
    tighten(7, prev.bound, prev.bound / (1.0 + penalty), LossReason::RampUp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeOptions {
    pub g_tiling: bool,
    /// Overrides the default ramp-up model as `(fraction, deficit)`.
    pub rampup: Option<(f64, f64)>,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            g_tiling: true,
            rampup: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EyexamReport {
    pub dataflow: Dataflow,
    pub steps: Vec<StepBound>,
    pub rooflines: Vec<Roofline>,
    pub num_pes: u64,
    /// Average active PEs after storage limits.
    pub active_pes: f64,
    /// Achieved MACs per active PE per peak MAC slot.
    pub active_util: f64,
    pub utilization: f64,
    pub mapping: Option<Mapping>,
}

impl EyexamReport {
    pub fn bound(&self, step: u8) -> f64 {
        self.steps[step as usize - 1].bound
    }

    pub fn final_bound(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.bound)
    }
}

/// Values per cycle a non-RS dataflow gets on `arch`; hierarchical assumes every source active.
fn generic_bw(arch: &ArchConfig, dt: Datatype, active_pes: u64) -> Option<f64> {
    let rate = RouterSpec::default_for(dt).values_per_cycle(false) as f64;
    match arch.noc {
        NocKind::Ideal => None,
        NocKind::Flat => Some(rate),
        NocKind::Hierarchical => {
            let cl = arch.clusters.active_clusters(active_pes as usize).max(1);
            Some(rate * (arch.clusters.routers(dt) * cl) as f64)
        }
    }
}

pub fn analyze(shape: &LayerShape, arch: &ArchConfig, df: Dataflow, opts: AnalyzeOptions) -> EyexamReport {
    let simd = arch.macs_per_pe;
    let num_pes = arch.num_pes() as u64;
    let rows = arch.clusters.array_rows() as u64;
    let cols = arch.clusters.array_cols() as u64;
    let macs = shape.mac_count();
    let (iacts, weights, outputs) = shape.data_counts();
    let b = bindings(shape, df, opts.g_tiling);

    let s1 = step1_workload(shape);
    let s2 = step2_dataflow(&s1, shape, df, opts.g_tiling);
    let work = s2.bound as u64;
    let s3 = step3_num_pes(&s2, work, num_pes * simd);
    let s4 = step4_physical_dims(&s3, b, rows, cols * simd);

    let v_eff = b.vertical.min(rows);
    let h_eff = (s4.bound / v_eff.max(1) as f64).ceil() as u64;
    let live_psums = match df {
        Dataflow::WeightStationary => h_eff.min(shape.m) * shape.e * shape.f,
        Dataflow::OutputStationary => 0,
        Dataflow::InputStationary => shape.m * shape.e * shape.f,
        Dataflow::RowStationary => h_eff,
    };
    let demand = StorageDemand {
        live_psums,
        psum_capacity: Some((arch.clusters.num_clusters() * arch.clusters.psum_capacity_per_cluster()) as u64),
        m0_requested: None,
        m0_cap: arch.spad.psum_entries as u64,
    };
    let s5 = step5_storage(&s4, &demand);

    let active = (s5.bound / simd as f64).ceil().max(1.0) as u64;
    let mut mapping = None;
    let (traffic, bw): ([u64; 3], [Option<f64>; 3]) = match df {
        Dataflow::RowStationary => match mapper::search(shape, arch) {
            Some((m, sc)) => {
                mapping = Some(m);
                let bws = m.bandwidths(arch);
                let c = sc.cost;
                (
                    [c.iact_values, c.weight_values, c.psum_values],
                    [Datatype::Iact, Datatype::Weight, Datatype::Psum].map(|d| bws.get(d).map(|x| x as f64)),
                )
            }
            None => ([iacts, weights, outputs], [None; 3]),
        },
        _ => {
            let vs = b.vertical.min(rows).max(1);
            let hs = b.horizontal.min(cols).max(1);
            let t = match df {
                Dataflow::WeightStationary => [macs / hs, weights, (macs / vs).max(outputs)],
                Dataflow::OutputStationary => [macs / hs, macs / vs, outputs],
                _ => [iacts, macs / hs, (macs / vs).max(outputs)],
            };
            (t, [Datatype::Iact, Datatype::Weight, Datatype::Psum].map(|d| generic_bw(arch, d, active)))
        }
    };
    let rooflines: Vec<Roofline> = [Datatype::Iact, Datatype::Weight, Datatype::Psum]
        .iter()
        .enumerate()
        .map(|(i, &dt)| Roofline {
            datatype: dt,
            peak: s5.bound,
            bw: bw[i],
            intensity: macs as f64 / traffic[i].max(1) as f64,
        })
        .collect();
    let s6 = step6_bandwidth(&s5, &rooflines);

    let (frac, deficit) = opts.rampup.unwrap_or_else(|| match bw[1] {
        Some(wbw) => (traffic[1] as f64 / wbw * s6.bound / macs as f64, 1.0),
        None => (0.0, 0.0),
    });
    let s7 = step7_access_pattern(&s6, frac, deficit);

    let active_pes = s5.bound / simd as f64;
    let active_util = s7.bound / (active_pes * simd as f64);
    EyexamReport {
        dataflow: df,
        steps: vec![s1, s2, s3, s4, s5, s6, s7],
        rooflines,
        num_pes,
        active_pes,
        active_util,
        utilization: active_pes / num_pes as f64 * active_util,
        mapping,
    }
}

/// Step-6 style bound of one concrete RS mapping: compute and per-datatype delivery rooflines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MappingBound {
    pub compute_cycles: u64,
    pub iact_cycles: u64,
    pub weight_cycles: u64,
    pub psum_cycles: u64,
    pub cycles: u64,
    /// MACs per cycle.
    pub bound: f64,
}

pub fn mapping_bound(shape: &LayerShape, arch: &ArchConfig, map: &Mapping) -> MappingBound {
    let cost = map.cost(shape, arch);
    let bw = map.bandwidths(arch);
    let ic = mapper::transfer_cycles(cost.iact_values, bw.iact);
    let wc = mapper::transfer_cycles(cost.weight_values, bw.weight);
    let pc = mapper::transfer_cycles(cost.psum_values, bw.psum);
    let cycles = cost.compute_cycles.max(ic).max(wc).max(pc).max(1);
    MappingBound {
        compute_cycles: cost.compute_cycles,
        iact_cycles: ic,
        weight_cycles: wc,
        psum_cycles: pc,
        cycles,
        bound: shape.mac_count() as f64 / cycles as f64,
    }
}
