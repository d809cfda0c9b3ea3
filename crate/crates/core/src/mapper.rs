//! Row-stationary mapping search: per-PE tiles (m0, c0, whole filter rows,
//! f0 windows), spatial replication over the array and temporal passes.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::arch::{ArchConfig, NocKind};
use crate::csc::encode_weight_matrix;
use crate::noc::{
    self, ClusterArrayConfig, Datatype, DatatypeRoute, DeliveryRequirement, NocMode, RouterSpec, RoutingConfig,
};
use crate::pe::{self, PeMapping, PeMode, SpadConfig};
use crate::workload::LayerShape;

/// Loop dimensions a mapping can split across PEs or passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Factors {
    pub g: u64,
    pub n: u64,
    pub m: u64,
    pub c: u64,
    pub e: u64,
    pub f: u64,
    pub r: u64,
}

impl Factors {
    pub fn ones() -> Self {
        Factors {
            g: 1,
            n: 1,
            m: 1,
            c: 1,
            e: 1,
            f: 1,
            r: 1,
        }
    }

    pub fn product(&self) -> u64 {
        self.g * self.n * self.m * self.c * self.e * self.f * self.r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LoopOrder {
    /// Temporal order g, m, c, r, n, e: each weight tile is loaded once.
    WeightsResident,
    /// Temporal order g, m, n, e, c, r: psums of one pass stay live until reduced.
    OutputsResident,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mapping {
    pub pe: PeMapping,
    pub spatial: Factors,
    pub temporal: Factors,
    pub order: LoopOrder,
}

/// How many weights a PE may hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightLimit {
    /// Uncompressed 12b pairs: `m0 * c0 * s <= pairs`.
    Pairs,
    /// Uncompressed pairs packed two per word, column aligned.
    Words,
    /// Only the psum and address spads bound the tile; compressed size is checked separately.
    Compressed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapperOptions {
    pub weight_limit: WeightLimit,
}

impl MapperOptions {
    pub fn for_arch(arch: &ArchConfig) -> Self {
        MapperOptions {
            weight_limit: match arch.pe_mode {
                PeMode::SparseSkip => WeightLimit::Words,
                _ => WeightLimit::Pairs,
            },
        }
    }
}

/// Distinct values `ceil(d / k)` for `k = 1..=d`, ascending.
pub fn ceil_candidates(d: u64) -> Vec<u64> {
    let mut v = Vec::new();
    let mut k = 1;
    while k <= d {
        let q = d.div_ceil(k);
        v.push(q);
        // next k with a smaller quotient
        k = if q == 1 { d + 1 } else { (d - 1) / (q - 1) + 1 };
    }
    v.sort_unstable();
    v.dedup();
    v
}

fn tile_sum(d: u64, q: u64, p: u64, t: u64, cost: impl Fn(u64) -> u64) -> u64 {
    let step = p * q;
    let full = if d >= q { ((d - q) / step + 1).min(t) } else { 0 };
    let mut s = full * cost(q);
    if full < t {
        s += cost(d - (t - 1) * step);
    }
    s
}

/// Closed-form cost of a mapping, summed over all passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CostModel {
    pub passes: u64,
    pub compute_cycles: u64,
    pub iact_values: u64,
    pub weight_values: u64,
    pub psum_values: u64,
    pub dram_bytes: u64,
}

fn dt_index(dt: Datatype) -> usize {
    match dt {
        Datatype::Iact => 0,
        Datatype::Weight => 1,
        Datatype::Psum => 2,
    }
}

/// Values per cycle delivered to the active PEs; `None` is unlimited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bandwidths {
    pub iact: Option<u64>,
    pub weight: Option<u64>,
    pub psum: Option<u64>,
}

impl Bandwidths {
    pub fn get(&self, dt: Datatype) -> Option<u64> {
        match dt {
            Datatype::Iact => self.iact,
            Datatype::Weight => self.weight,
            Datatype::Psum => self.psum,
        }
    }
}

impl Mapping {
    pub fn active_pes(&self) -> u64 {
        self.spatial.product()
    }

    pub fn passes(&self) -> u64 {
        self.temporal.product()
    }

    pub fn vertical(&self) -> u64 {
        self.spatial.c * self.spatial.r
    }

    pub fn horizontal(&self) -> u64 {
        self.spatial.g * self.spatial.n * self.spatial.m * self.spatial.e * self.spatial.f
    }

    pub fn f0(&self) -> u64 {
        self.pe.num_windows as u64
    }

    /// The trivial one-PE mapping.
    pub fn single_pe(shape: &LayerShape) -> Option<Self> {
        let mut found = None;
        let probe = ArchConfig {
            clusters: ClusterArrayConfig::scaled(1),
            ..ArchConfig::v2()
        };
        for_each_mapping(shape, &probe, MapperOptions::for_arch(&probe), |m| {
            if found.is_none() {
                found = Some(*m)
            }
        });
        found
    }

    /// Tie-break key: factors in a fixed order.
    fn factor_key(&self) -> [u64; 16] {
        let s = self.spatial;
        let t = self.temporal;
        [
            self.pe.m0 as u64,
            self.pe.c0 as u64,
            self.pe.num_windows as u64,
            s.g,
            s.n,
            s.m,
            s.c,
            s.e,
            s.f,
            s.r,
            t.g,
            t.n,
            t.m,
            t.c,
            t.e,
            (self.order == LoopOrder::OutputsResident) as u64 * 1000 + t.r,
        ]
    }

    pub fn cost(&self, shape: &LayerShape, arch: &ArchConfig) -> CostModel {
        let (p, t, m0, c0, f0) = (self.spatial, self.temporal, self.pe.m0 as u64, self.pe.c0 as u64, self.f0());
        let simd = arch.macs_per_pe;
        let m_sum = tile_sum(shape.m, m0, p.m, t.m, |x| x.div_ceil(simd));
        let c_sum = tile_sum(shape.c, c0, p.c, t.c, |x| x);
        let passes = self.passes();
        let compute = m_sum * c_sum * shape.s * f0 * t.g * t.n * t.e * t.r + passes * arch.fill_cycles;
        let w_ext = (shape.f - 1) * shape.u + shape.s;
        let h_sum = t.r * shape.u * (shape.e - t.e) + t.e * shape.r;
        let iact_values = t.m * shape.g * shape.n * shape.c * h_sum * w_ext;
        let (iacts, weights, outputs) = shape.data_counts();
        let reloads = match self.order {
            LoopOrder::WeightsResident => 1,
            LoopOrder::OutputsResident => t.n * t.e,
        };
        let weight_values = weights * reloads;
        let acc = t.c * t.r;
        let psum_values = (2 * acc - 1) * outputs;
        let iact_glb = (arch.clusters.num_clusters() * arch.clusters.iact_glb_bytes_per_cluster()) as u64;
        let iact_dram = if iacts <= iact_glb { iacts } else { iact_values };
        CostModel {
            passes,
            compute_cycles: compute,
            iact_values,
            weight_values,
            psum_values,
            dram_bytes: weight_values + iact_dram + outputs,
        }
    }

    /// Multicast patterns for the operands; more groups than sources fall back to unicast.
    pub fn routing(&self, cl: &ClusterArrayConfig) -> RoutingConfig {
        let active = self.active_pes();
        let p = self.spatial;
        let max_groups = |dt| (cl.routers(dt) * cl.num_clusters()) as u64;
        let iact = if p.m == 1 || active / p.m > max_groups(Datatype::Iact) {
            DatatypeRoute::new(NocMode::Unicast)
        } else if active / p.m == 1 {
            DatatypeRoute::new(NocMode::Broadcast)
        } else {
            DatatypeRoute::grouped(NocMode::InterleavedMulticast, (active / p.m) as usize)
        };
        let kw = p.m * p.g * p.c * p.r;
        let weight = if kw == active || kw > max_groups(Datatype::Weight) {
            DatatypeRoute::new(NocMode::Unicast)
        } else if kw == 1 {
            DatatypeRoute::new(NocMode::Broadcast)
        } else {
            DatatypeRoute::grouped(NocMode::GroupedMulticast, kw as usize)
        };
        RoutingConfig {
            iact,
            weight,
            psum: DatatypeRoute::new(NocMode::Unicast),
        }
    }

    pub fn bandwidths(&self, arch: &ArchConfig) -> Bandwidths {
        self.bandwidths_with(arch, [false; 3])
    }

    /// Delivery bandwidth with per-datatype compression flags `[iact, weight, psum]`.
    pub fn bandwidths_with(&self, arch: &ArchConfig, compressed: [bool; 3]) -> Bandwidths {
        let active = self.active_pes() as usize;
        let routing = self.routing(&arch.clusters);
        let bw = |dt| {
            let z = compressed[dt_index(dt)];
            match arch.noc {
                NocKind::Ideal => None,
                NocKind::Flat => Some(RouterSpec::default_for(dt).values_per_cycle(z)),
                NocKind::Hierarchical => Some(noc::delivered_bandwidth(&routing, &arch.clusters, dt, active, z)),
            }
        };
        Bandwidths {
            iact: bw(Datatype::Iact),
            weight: bw(Datatype::Weight),
            psum: bw(Datatype::Psum),
        }
    }

    /// Spatial coordinates of the `i`-th active PE, `m` outermost and `f` innermost.
    pub fn spatial_coords(&self, i: u64) -> Factors {
        let p = self.spatial;
        let mut rest = i;
        let mut take = |n: u64| {
            let v = rest % n;
            rest /= n;
            v
        };
        let f = take(p.f);
        let e = take(p.e);
        let n = take(p.n);
        let r = take(p.r);
        let c = take(p.c);
        let g = take(p.g);
        let m = take(p.m);
        Factors { g, n, m, c, e, f, r }
    }

    /// Operand streams each active PE needs, derived from its coordinates.
    pub fn delivery_requirement(&self) -> DeliveryRequirement {
        let p = self.spatial;
        let active = self.active_pes();
        let mut req = DeliveryRequirement {
            active_pes: (0..active as usize).collect(),
            iact_streams: Vec::with_capacity(active as usize),
            weight_streams: Vec::with_capacity(active as usize),
        };
        for i in 0..active {
            let x = self.spatial_coords(i);
            let iact = ((((x.g * p.c + x.c) * p.r + x.r) * p.n + x.n) * p.e + x.e) * p.f + x.f;
            let weight = ((x.m * p.g + x.g) * p.c + x.c) * p.r + x.r;
            req.iact_streams.push(iact as usize);
            req.weight_streams.push(weight as usize);
        }
        req
    }

    /// Every `(pass, pe)` tile with its clipped index ranges, in execution order.
    pub fn pe_tiles(&self, shape: &LayerShape) -> Vec<PassTiles> {
        let mut v = Vec::new();
        self.for_each_pass(shape, |index, tiles| {
            v.push(PassTiles {
                index,
                tiles: tiles.to_vec(),
            })
        });
        v
    }

    /// Calls `visit` with the temporal indices `[g, n, m, c, e, r]` and tiles of each pass.
    pub fn for_each_pass(&self, shape: &LayerShape, mut visit: impl FnMut([u64; 6], &[PeTile])) {
        let t = self.temporal;
        let mut buf = Vec::with_capacity(self.active_pes() as usize);
        let mut run = |tg, tm, tc, tr, tn, te| {
            buf.clear();
            buf.extend((0..self.active_pes()).filter_map(|i| self.tile_at(shape, tg, tn, tm, tc, te, tr, i)));
            visit([tg, tn, tm, tc, te, tr], &buf);
        };
        for tg in 0..t.g {
            for tm in 0..t.m {
                match self.order {
                    LoopOrder::WeightsResident => {
                        for tc in 0..t.c {
                            for tr in 0..t.r {
                                for tn in 0..t.n {
                                    for te in 0..t.e {
                                        run(tg, tm, tc, tr, tn, te);
                                    }
                                }
                            }
                        }
                    }
                    LoopOrder::OutputsResident => {
                        for tn in 0..t.n {
                            for te in 0..t.e {
                                for tc in 0..t.c {
                                    for tr in 0..t.r {
                                        run(tg, tm, tc, tr, tn, te);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn tile_at(&self, shape: &LayerShape, tg: u64, tn: u64, tm: u64, tc: u64, te: u64, tr: u64, i: u64) -> Option<PeTile> {
        let p = self.spatial;
        let x = self.spatial_coords(i);
        let g = tg * p.g + x.g;
        let n = tn * p.n + x.n;
        let e = te * p.e + x.e;
        let r = tr * p.r + x.r;
        let range = |blk: u64, q: u64, d: u64| {
            let lo = blk * q;
            (lo < d).then(|| (lo, (lo + q).min(d)))
        };
        if g >= shape.g || n >= shape.n || e >= shape.e || r >= shape.r {
            return None;
        }
        let m = range(tm * p.m + x.m, self.pe.m0 as u64, shape.m)?;
        let c = range(tc * p.c + x.c, self.pe.c0 as u64, shape.c)?;
        let f = range(x.f, self.f0(), shape.f)?;
        Some(PeTile {
            pe: i,
            g,
            n,
            e,
            r,
            m,
            c,
            f,
            m_block: tm * p.m + x.m,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassTiles {
    /// Temporal indices `[g, n, m, c, e, r]`.
    pub index: [u64; 6],
    pub tiles: Vec<PeTile>,
}

/// The work one PE does in one pass; ranges are half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeTile {
    pub pe: u64,
    pub g: u64,
    pub n: u64,
    pub e: u64,
    pub r: u64,
    pub m: (u64, u64),
    pub c: (u64, u64),
    pub f: (u64, u64),
    pub m_block: u64,
}

impl PeTile {
    pub fn macs(&self, shape: &LayerShape) -> u64 {
        (self.m.1 - self.m.0) * (self.c.1 - self.c.0) * (self.f.1 - self.f.0) * shape.s
    }

    pub fn pe_mapping(&self, shape: &LayerShape) -> PeMapping {
        PeMapping {
            m0: (self.m.1 - self.m.0) as usize,
            c0: (self.c.1 - self.c.0) as usize,
            s0: shape.s as usize,
            u: shape.u as usize,
            num_windows: (self.f.1 - self.f.0) as usize,
        }
    }
}

fn per_pe_fits(m0: u64, c0: u64, shape: &LayerShape, spad: &SpadConfig, limit: WeightLimit) -> bool {
    let cols = c0 * shape.s;
    let span = shape.s.div_ceil(shape.u);
    if m0 > spad.psum_entries as u64
        || c0 * shape.u > 16
        || cols > spad.iact_data_entries as u64
        || c0 * span * shape.u > spad.iact_data_entries as u64
        || cols > spad.weight_addr_entries as u64
        || span > spad.iact_addr_entries as u64
    {
        return false;
    }
    match limit {
        WeightLimit::Pairs => m0 * cols <= spad.weight_pairs() as u64,
        WeightLimit::Words => cols * m0.div_ceil(2) <= spad.weight_data_entries as u64,
        WeightLimit::Compressed => true,
    }
}

/// Visits every legal mapping of `shape` on `arch`.
pub fn for_each_mapping(shape: &LayerShape, arch: &ArchConfig, opts: MapperOptions, mut visit: impl FnMut(&Mapping)) {
    let cl = &arch.clusters;
    let rows = cl.array_rows() as u64;
    let cols = cl.array_cols() as u64;
    let psum_cap = (cl.num_clusters() * cl.psum_capacity_per_cluster()) as u64;
    let iact_cap = (cl.num_clusters() * cl.iact_glb_bytes_per_cluster()) as u64;
    let w_ext = (shape.f - 1) * shape.u + shape.s;
    let pf_cands = ceil_candidates(shape.f);
    let pr_cands = ceil_candidates(shape.r);
    let pg_cands = ceil_candidates(shape.g);
    let pn_cands = ceil_candidates(shape.n);
    let pe_cands = ceil_candidates(shape.e);
    for &m0 in ceil_candidates(shape.m).iter().filter(|&&m| m <= arch.spad.psum_entries as u64) {
        let pm_cands = ceil_candidates(shape.m.div_ceil(m0));
        for &c0 in &ceil_candidates(shape.c) {
            if !per_pe_fits(m0, c0, shape, &arch.spad, opts.weight_limit) {
                continue;
            }
            let pc_cands = ceil_candidates(shape.c.div_ceil(c0));
            for &pc in &pc_cands {
                for &pr in &pr_cands {
                    let v = pc * pr;
                    if v > rows {
                        break;
                    }
                    let hmax = cols * (rows / v);
                    for &pf in &pf_cands {
                        if pf > hmax {
                            break;
                        }
                        let f0 = shape.f.div_ceil(pf);
                        for &pm in &pm_cands {
                            let h1 = pf * pm;
                            if h1 > hmax {
                                break;
                            }
                            for &pg in &pg_cands {
                                let h2 = h1 * pg;
                                if h2 > hmax {
                                    break;
                                }
                                for &pn in &pn_cands {
                                    let h3 = h2 * pn;
                                    if h3 > hmax {
                                        break;
                                    }
                                    for &pe_ in &pe_cands {
                                        if h3 * pe_ > hmax {
                                            break;
                                        }
                                        let spatial = Factors {
                                            g: pg,
                                            n: pn,
                                            m: pm,
                                            c: pc,
                                            e: pe_,
                                            f: pf,
                                            r: pr,
                                        };
                                        let temporal = Factors {
                                            g: shape.g.div_ceil(pg),
                                            n: shape.n.div_ceil(pn),
                                            m: shape.m.div_ceil(m0 * pm),
                                            c: shape.c.div_ceil(c0 * pc),
                                            e: shape.e.div_ceil(pe_),
                                            f: 1,
                                            r: shape.r.div_ceil(pr),
                                        };
                                        let h_ext = (pe_.min(shape.e) - 1) * shape.u + pr.min(shape.r);
                                        let iact_tile = pg * pn * (pc * c0).min(shape.c) * h_ext * w_ext;
                                        if iact_tile > iact_cap {
                                            continue;
                                        }
                                        let acc = temporal.c * temporal.r > 1;
                                        let m_tile = (pm * m0).min(shape.m);
                                        let pe_map = PeMapping {
                                            m0: m0 as usize,
                                            c0: c0 as usize,
                                            s0: shape.s as usize,
                                            u: shape.u as usize,
                                            num_windows: f0 as usize,
                                        };
                                        let wr_live = pg * m_tile * shape.n * shape.e * shape.f;
                                        if !acc || wr_live <= psum_cap {
                                            visit(&Mapping {
                                                pe: pe_map,
                                                spatial,
                                                temporal,
                                                order: LoopOrder::WeightsResident,
                                            });
                                        }
                                        let or_live = pg * pn * m_tile * pe_ * shape.f;
                                        if acc && temporal.n * temporal.e > 1 && or_live <= psum_cap {
                                            visit(&Mapping {
                                                pe: pe_map,
                                                spatial,
                                                temporal,
                                                order: LoopOrder::OutputsResident,
                                            });
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn enumerate(shape: &LayerShape, arch: &ArchConfig, opts: MapperOptions) -> Vec<Mapping> {
    let mut v = Vec::new();
    for_each_mapping(shape, arch, opts, |m| v.push(*m));
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MappingScore {
    pub predicted_cycles: u64,
    pub active_pes: u64,
    pub active_util: f64,
    pub utilization: f64,
    pub dram_bytes: u64,
    /// Which datatype rooflines bind (traffic cycles >= compute cycles).
    pub noc_bound: NocBound,
    pub cost: CostModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NocBound {
    pub iact: bool,
    pub weight: bool,
    pub psum: bool,
}

/// Cycles needed to move `values` at `bw` values per cycle.
pub fn transfer_cycles(values: u64, bw: Option<u64>) -> u64 {
    match bw {
        Some(b) => values.div_ceil(b.max(1)),
        None => 0,
    }
}

pub fn score(shape: &LayerShape, arch: &ArchConfig, map: &Mapping) -> MappingScore {
    let cost = map.cost(shape, arch);
    let bw = map.bandwidths(arch);
    let ti = transfer_cycles(cost.iact_values, bw.iact);
    let tw = transfer_cycles(cost.weight_values, bw.weight);
    let tp = transfer_cycles(cost.psum_values, bw.psum);
    let cycles = cost.compute_cycles.max(ti).max(tw).max(tp).max(1);
    let active = map.active_pes();
    let active_util = shape.mac_count() as f64 / (cycles as f64 * active as f64 * arch.macs_per_pe as f64);
    MappingScore {
        predicted_cycles: cycles,
        active_pes: active,
        active_util,
        utilization: active as f64 / arch.num_pes() as f64 * active_util,
        dram_bytes: cost.dram_bytes,
        noc_bound: NocBound {
            iact: ti >= cost.compute_cycles,
            weight: tw >= cost.compute_cycles,
            psum: tp >= cost.compute_cycles,
        },
        cost,
    }
}

struct Ranked {
    map: Mapping,
    score: MappingScore,
}

fn rank_cmp(a: &Ranked, b: &Ranked) -> Ordering {
    a.score
        .predicted_cycles
        .cmp(&b.score.predicted_cycles)
        .then(b.score.active_pes.cmp(&a.score.active_pes))
        .then(a.score.dram_bytes.cmp(&b.score.dram_bytes))
        .then(a.map.factor_key().cmp(&b.map.factor_key()))
}

impl PartialEq for Ranked {
    fn eq(&self, o: &Self) -> bool {
        rank_cmp(self, o) == Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Ranked {
    fn cmp(&self, o: &Self) -> Ordering {
        rank_cmp(self, o)
    }
}

/// Best candidate by predicted cycles, then more active PEs, less DRAM traffic, factor order.
pub fn select_best(
    shape: &LayerShape,
    arch: &ArchConfig,
    candidates: impl IntoIterator<Item = Mapping>,
) -> Option<(Mapping, MappingScore)> {
    candidates
        .into_iter()
        .map(|map| Ranked {
            score: score(shape, arch, &map),
            map,
        })
        .min()
        .map(|r| (r.map, r.score))
}

/// Streaming search over all legal mappings.
pub fn search(shape: &LayerShape, arch: &ArchConfig) -> Option<(Mapping, MappingScore)> {
    let mut best: Option<Ranked> = None;
    for_each_mapping(shape, arch, MapperOptions::for_arch(arch), |m| {
        let r = Ranked {
            score: score(shape, arch, m),
            map: *m,
        };
        if best.as_ref().is_none_or(|b| r < *b) {
            best = Some(r);
        }
    });
    best.map(|r| (r.map, r.score))
}

/// Weight tensor layout `[g][m][c][r][s]`.
pub fn weight_index(shape: &LayerShape, g: u64, m: u64, c: u64, r: u64, s: u64) -> usize {
    ((((g * shape.m + m) * shape.c + c) * shape.r + r) * shape.s + s) as usize
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitReport {
    pub nominal_pairs: u64,
    pub max_words: u64,
    pub max_pairs: u64,
    /// `(g, m block, c block, r, words)` of tiles over capacity.
    pub offending: Vec<(u64, u64, u64, u64, u64)>,
    pub capacity_words: u64,
}

impl FitReport {
    pub fn fits(&self) -> bool {
        self.offending.is_empty()
    }
}

/// Compressed size of every distinct PE weight tile under `map`.
pub fn sparse_fit(shape: &LayerShape, map: &Mapping, weights: &[i8], spad: &SpadConfig, stop_early: bool) -> FitReport {
    let m0 = map.pe.m0 as u64;
    let c0 = map.pe.c0 as u64;
    let cap = spad.weight_data_entries as u64;
    let mut rep = FitReport {
        nominal_pairs: m0 * c0 * shape.s,
        max_words: 0,
        max_pairs: 0,
        offending: Vec::new(),
        capacity_words: cap,
    };
    for g in 0..shape.g {
        for mb in 0..shape.m.div_ceil(m0) {
            let (ml, mh) = (mb * m0, ((mb + 1) * m0).min(shape.m));
            for cb in 0..shape.c.div_ceil(c0) {
                let (cl, ch) = (cb * c0, ((cb + 1) * c0).min(shape.c));
                let cols = ((ch - cl) * shape.s) as usize;
                for r in 0..shape.r {
                    let rows = (mh - ml) as usize;
                    let mut mat = vec![0; rows * cols];
                    for (mi, m) in (ml..mh).enumerate() {
                        for s in 0..shape.s {
                            for (ci, c) in (cl..ch).enumerate() {
                                let j = s as usize * (ch - cl) as usize + ci;
                                mat[mi * cols + j] = weights[weight_index(shape, g, m, c, r, s)] as i32;
                            }
                        }
                    }
                    let t = encode_weight_matrix(&mat, rows, cols).expect("weights are 8b");
                    let words = pe::weight_words(&t) as u64;
                    rep.max_words = rep.max_words.max(words);
                    rep.max_pairs = rep.max_pairs.max(t.entries() as u64);
                    if words > cap {
                        rep.offending.push((g, mb, cb, r, words));
                        if stop_early {
                            return rep;
                        }
                    }
                }
            }
        }
    }
    rep
}

/// Search that packs compressed weights beyond the dense limit when they fit.
pub fn search_sparse(
    shape: &LayerShape,
    arch: &ArchConfig,
    weights: &[i8],
    keep: usize,
) -> Option<(Mapping, MappingScore, FitReport)> {
    let mut heap: BinaryHeap<Ranked> = BinaryHeap::new();
    let opts = MapperOptions {
        weight_limit: WeightLimit::Compressed,
    };
    for_each_mapping(shape, arch, opts, |m| {
        let r = Ranked {
            score: score(shape, arch, m),
            map: *m,
        };
        if heap.len() < keep {
            heap.push(r);
        } else if heap.peek().is_some_and(|w| r < *w) {
            heap.pop();
            heap.push(r);
        }
    });
    for r in heap.into_sorted_vec() {
        let fit = sparse_fit(shape, &r.map, weights, &arch.spad, true);
        if fit.fits() {
            return Some((r.map, r.score, fit));
        }
    }
    let (map, score) = search(shape, arch)?;
    let fit = sparse_fit(shape, &map, weights, &arch.spad, false);
    Some((map, score, fit))
}
