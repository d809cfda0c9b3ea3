//! Hierarchical mesh NoC: per-datatype routers in every cluster, four router
//! modes, enable/ready handshakes and the bandwidth they deliver.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Datatype {
    Iact,
    Weight,
    Psum,
}

impl Datatype {
    pub const ALL: [Datatype; 3] = [Datatype::Iact, Datatype::Weight, Datatype::Psum];
}

impl fmt::Display for Datatype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Datatype::Iact => "iact",
            Datatype::Weight => "weight",
            Datatype::Psum => "psum",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NocMode {
    Unicast,
    HorizontalMulticast,
    VerticalMulticast,
    Broadcast,
    GroupedMulticast,
    InterleavedMulticast,
}

impl NocMode {
    pub const ROUTER_MODES: [NocMode; 4] = [
        NocMode::Unicast,
        NocMode::HorizontalMulticast,
        NocMode::VerticalMulticast,
        NocMode::Broadcast,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouterSpec {
    pub datatype: Datatype,
    pub src_ports: usize,
    pub dst_ports: usize,
    pub port_bits: u32,
}

impl RouterSpec {
    pub fn default_for(datatype: Datatype) -> Self {
        let (ports, port_bits) = match datatype {
            Datatype::Iact => (4, 24),
            Datatype::Weight => (2, 24),
            Datatype::Psum => (3, 40),
        };
        RouterSpec {
            datatype,
            src_ports: ports,
            dst_ports: ports,
            port_bits,
        }
    }

    /// Values per cycle per port: 8b raw or 12b count-data pairs for operands, 20b psums.
    pub fn values_per_cycle(&self, compressed: bool) -> u64 {
        let bits = match (self.datatype, compressed) {
            (Datatype::Psum, _) => 20,
            (_, true) => 12,
            (_, false) => 8,
        };
        (self.port_bits / bits) as u64
    }

    /// Port roles, index 0 is the local port (GLB or off-chip in, PEs out).
    fn ports(&self) -> Vec<Port> {
        let all: &[Port] = match self.datatype {
            Datatype::Iact => &[Port::Local, Port::North, Port::South, Port::Horizontal],
            Datatype::Weight => &[Port::Local, Port::Horizontal],
            Datatype::Psum => &[Port::Local, Port::North, Port::South],
        };
        all.iter().copied().take(self.src_ports.max(self.dst_ports)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Port {
    Local,
    North,
    South,
    Horizontal,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NocError {
    #[error("psums only accumulate vertically; {0:?} rejected")]
    PsumHorizontal(NocMode),
    #[error("weight routers have no vertical links; {0:?} rejected")]
    WeightVertical(NocMode),
    #[error("{0} routing does not support {1:?}")]
    Unsupported(Datatype, NocMode),
    #[error("weights come only from off-chip")]
    WeightFromGlb,
    #[error("sources {a} and {b} both enabled toward destination {dst}")]
    Conflict { dst: usize, a: usize, b: usize },
    #[error("source cluster {cluster} port {port} out of range")]
    BadSource { cluster: usize, port: usize },
    #[error("expected {want} signals, got {got}")]
    Width { want: usize, got: usize },
}

fn check_mode(dt: Datatype, mode: NocMode) -> Result<(), NocError> {
    match (dt, mode) {
        (Datatype::Psum, NocMode::HorizontalMulticast | NocMode::Broadcast) => {
            Err(NocError::PsumHorizontal(mode))
        }
        (Datatype::Psum, NocMode::GroupedMulticast | NocMode::InterleavedMulticast) => {
            Err(NocError::Unsupported(dt, mode))
        }
        (Datatype::Weight, NocMode::VerticalMulticast) => Err(NocError::WeightVertical(mode)),
        _ => Ok(()),
    }
}

/// Destination ports per source port for one router mode.
pub fn route_table(spec: &RouterSpec, mode: NocMode) -> Result<Vec<Vec<usize>>, NocError> {
    check_mode(spec.datatype, mode)?;
    let ports = spec.ports();
    let dirs: &[Port] = match mode {
        NocMode::Unicast => &[],
        NocMode::HorizontalMulticast => &[Port::Horizontal],
        NocMode::VerticalMulticast => &[Port::North, Port::South],
        NocMode::Broadcast => &[Port::North, Port::South, Port::Horizontal],
        _ => return Err(NocError::Unsupported(spec.datatype, mode)),
    };
    let open = |p: Port| p == Port::Local || dirs.contains(&p);
    Ok((0..spec.src_ports)
        .map(|s| {
            let from = ports[s];
            if !open(from) {
                return Vec::new();
            }
            (0..spec.dst_ports)
                .filter(|&d| open(ports[d]) && (from == Port::Local || ports[d] != from))
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Handshake {
    pub dst_enables: Vec<bool>,
    pub src_readies: Vec<bool>,
    /// Source feeding each destination this cycle.
    pub data_select: Vec<Option<usize>>,
}

pub fn handshake(
    spec: &RouterSpec,
    mode: NocMode,
    enables: &[bool],
    readies: &[bool],
) -> Result<Handshake, NocError> {
    if enables.len() != spec.src_ports {
        return Err(NocError::Width {
            want: spec.src_ports,
            got: enables.len(),
        });
    }
    if readies.len() != spec.dst_ports {
        return Err(NocError::Width {
            want: spec.dst_ports,
            got: readies.len(),
        });
    }
    let table = route_table(spec, mode)?;
    let mut data_select: Vec<Option<usize>> = vec![None; spec.dst_ports];
    for (s, dsts) in table.iter().enumerate() {
        if !enables[s] {
            continue;
        }
        for &d in dsts {
            if let Some(a) = data_select[d] {
                return Err(NocError::Conflict { dst: d, a, b: s });
            }
            data_select[d] = Some(s);
        }
    }
    Ok(Handshake {
        dst_enables: data_select.iter().map(Option::is_some).collect(),
        src_readies: table
            .iter()
            .map(|dsts| dsts.iter().all(|&d| readies[d]))
            .collect(),
        data_select,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterArrayConfig {
    pub cluster_rows: usize,
    pub cluster_cols: usize,
    pub pe_rows: usize,
    pub pe_cols: usize,
    pub iact_banks: usize,
    pub iact_bank_bytes: usize,
    pub psum_banks: usize,
    pub psum_bank_bytes: usize,
    pub iact_routers: usize,
    pub weight_routers: usize,
    pub psum_routers: usize,
}

impl Default for ClusterArrayConfig {
    fn default() -> Self {
        ClusterArrayConfig {
            cluster_rows: 8,
            cluster_cols: 2,
            pe_rows: 3,
            pe_cols: 4,
            iact_banks: 3,
            iact_bank_bytes: 1536,
            psum_banks: 4,
            psum_bank_bytes: 1920,
            iact_routers: 3,
            weight_routers: 3,
            psum_routers: 4,
        }
    }
}

fn near_square(n: usize) -> (usize, usize) {
    let mut r = (n as f64).sqrt() as usize;
    while r > 1 && n % r != 0 {
        r -= 1;
    }
    let r = r.max(1);
    (r, n / r)
}

impl ClusterArrayConfig {
    /// A grid of `pe_rows x pe_cols` clusters keeping the default GLB cluster.
    pub fn grid(cluster_rows: usize, cluster_cols: usize, pe_rows: usize, pe_cols: usize) -> Self {
        ClusterArrayConfig {
            cluster_rows,
            cluster_cols,
            pe_rows,
            pe_cols,
            weight_routers: pe_rows,
            psum_routers: pe_cols,
            ..Default::default()
        }
    }

    /// `total` PEs in 4x4-PE clusters on a near-square cluster grid.
    pub fn scaled(total: usize) -> Self {
        if total >= 16 && total % 16 == 0 {
            let (r, c) = near_square(total / 16);
            Self::grid(r, c, 4, 4)
        } else {
            let (r, c) = near_square(total.max(1));
            Self::grid(1, 1, r, c)
        }
    }

    pub fn num_clusters(&self) -> usize {
        self.cluster_rows * self.cluster_cols
    }

    pub fn pes_per_cluster(&self) -> usize {
        self.pe_rows * self.pe_cols
    }

    pub fn num_pes(&self) -> usize {
        self.num_clusters() * self.pes_per_cluster()
    }

    pub fn array_rows(&self) -> usize {
        self.cluster_rows * self.pe_rows
    }

    pub fn array_cols(&self) -> usize {
        self.cluster_cols * self.pe_cols
    }

    pub fn glb_cluster_bytes(&self) -> usize {
        self.iact_banks * self.iact_bank_bytes + self.psum_banks * self.psum_bank_bytes
    }

    pub fn glb_bytes(&self) -> usize {
        self.num_clusters() * self.glb_cluster_bytes()
    }

    pub fn iact_glb_bytes_per_cluster(&self) -> usize {
        self.iact_banks * self.iact_bank_bytes
    }

    /// Live 20b psums one GLB cluster can hold.
    pub fn psum_capacity_per_cluster(&self) -> usize {
        self.psum_banks * self.psum_bank_bytes * 8 / 20
    }

    pub fn routers(&self, dt: Datatype) -> usize {
        match dt {
            Datatype::Iact => self.iact_routers,
            Datatype::Weight => self.weight_routers,
            Datatype::Psum => self.psum_routers,
        }
    }

    pub fn pe_id(&self, cluster: usize, local_row: usize, local_col: usize) -> usize {
        cluster * self.pes_per_cluster() + local_row * self.pe_cols + local_col
    }

    /// `(cluster, local_row, local_col)`.
    pub fn locate(&self, pe: usize) -> (usize, usize, usize) {
        let per = self.pes_per_cluster();
        let local = pe % per;
        (pe / per, local / self.pe_cols, local % self.pe_cols)
    }

    pub fn active_clusters(&self, active_pes: usize) -> usize {
        active_pes
            .div_ceil(self.pes_per_cluster())
            .clamp(1, self.num_clusters())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatatypeRoute {
    pub mode: NocMode,
    /// Group count for grouped and interleaved multicast.
    pub groups: usize,
}

impl DatatypeRoute {
    pub fn new(mode: NocMode) -> Self {
        DatatypeRoute { mode, groups: 1 }
    }

    pub fn grouped(mode: NocMode, groups: usize) -> Self {
        DatatypeRoute {
            mode,
            groups: groups.max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingConfig {
    pub iact: DatatypeRoute,
    pub weight: DatatypeRoute,
    pub psum: DatatypeRoute,
}

impl RoutingConfig {
    pub fn broadcast_all() -> Self {
        RoutingConfig {
            iact: DatatypeRoute::new(NocMode::Broadcast),
            weight: DatatypeRoute::new(NocMode::Broadcast),
            psum: DatatypeRoute::new(NocMode::Unicast),
        }
    }

    pub fn route(&self, dt: Datatype) -> DatatypeRoute {
        match dt {
            Datatype::Iact => self.iact,
            Datatype::Weight => self.weight,
            Datatype::Psum => self.psum,
        }
    }

    pub fn check(&self) -> Result<(), NocError> {
        for dt in Datatype::ALL {
            check_mode(dt, self.route(dt).mode)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SourceKind {
    GlbBank,
    OffChip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Source {
    pub cluster: usize,
    pub port: usize,
    pub kind: SourceKind,
}

/// PE ids reached by `source`; grouped and interleaved patterns are laid over `active`.
pub fn destinations(
    cfg: &RoutingConfig,
    arch: &ClusterArrayConfig,
    dt: Datatype,
    source: Source,
    active: &[usize],
) -> Result<Vec<usize>, NocError> {
    let route = cfg.route(dt);
    check_mode(dt, route.mode)?;
    if dt == Datatype::Weight && source.kind != SourceKind::OffChip {
        return Err(NocError::WeightFromGlb);
    }
    let routers = arch.routers(dt);
    if source.cluster >= arch.num_clusters() || source.port >= routers.max(1) && !matches!(route.mode, NocMode::GroupedMulticast | NocMode::InterleavedMulticast) {
        return Err(NocError::BadSource {
            cluster: source.cluster,
            port: source.port,
        });
    }
    let local_hit = |row: usize, col: usize| match dt {
        Datatype::Iact => row % routers == source.port,
        Datatype::Weight => row % routers == source.port,
        Datatype::Psum => row == 0 && col % routers == source.port,
    };
    let (src_r, src_c) = (source.cluster / arch.cluster_cols, source.cluster % arch.cluster_cols);
    let cluster_hit = |cl: usize| {
        let (r, c) = (cl / arch.cluster_cols, cl % arch.cluster_cols);
        match route.mode {
            NocMode::Unicast => cl == source.cluster,
            NocMode::HorizontalMulticast => r == src_r,
            NocMode::VerticalMulticast => c == src_c,
            _ => true,
        }
    };
    let stream = source.cluster * routers + source.port;
    let k = route.groups.max(1);
    let n = active.len();
    Ok(match route.mode {
        NocMode::Broadcast => active.to_vec(),
        NocMode::GroupedMulticast => {
            (stream * n / k..((stream + 1) * n / k).min(n)).map(|i| active[i]).collect()
        }
        NocMode::InterleavedMulticast => (0..n).filter(|i| i % k == stream).map(|i| active[i]).collect(),
        _ => active
            .iter()
            .copied()
            .filter(|&pe| {
                let (cl, row, col) = arch.locate(pe);
                cluster_hit(cl) && local_hit(row, col)
            })
            .collect(),
    })
}

/// The sources a configuration drives for the given active PEs.
pub fn sources(cfg: &RoutingConfig, arch: &ClusterArrayConfig, dt: Datatype, active: &[usize]) -> Vec<Source> {
    let kind = if dt == Datatype::Weight {
        SourceKind::OffChip
    } else {
        SourceKind::GlbBank
    };
    let routers = arch.routers(dt).max(1);
    let route = cfg.route(dt);
    let src = |cluster, port| Source { cluster, port, kind };
    let clusters: Vec<usize> = {
        let mut v: Vec<usize> = active.iter().map(|&p| arch.locate(p).0).collect();
        v.dedup();
        v
    };
    match route.mode {
        NocMode::Broadcast => vec![src(0, 0)],
        NocMode::GroupedMulticast | NocMode::InterleavedMulticast => (0..route.groups.max(1))
            .map(|k| src(k / routers, k % routers))
            .collect(),
        NocMode::Unicast => clusters
            .iter()
            .flat_map(|&cl| (0..routers).map(move |p| src(cl, p)))
            .collect(),
        NocMode::HorizontalMulticast => {
            let mut rows: Vec<usize> = clusters.iter().map(|&c| c / arch.cluster_cols).collect();
            rows.dedup();
            rows.iter()
                .flat_map(|&r| (0..routers).map(move |p| src(r * arch.cluster_cols, p)))
                .collect()
        }
        NocMode::VerticalMulticast => {
            let mut cols: Vec<usize> = clusters.iter().map(|&c| c % arch.cluster_cols).collect();
            cols.sort_unstable();
            cols.dedup();
            cols.iter().flat_map(|&c| (0..routers).map(move |p| src(c, p))).collect()
        }
    }
}

/// Independently sourced streams reaching the active PEs.
pub fn stream_count(cfg: &RoutingConfig, arch: &ClusterArrayConfig, dt: Datatype, active_pes: usize) -> u64 {
    let routers = arch.routers(dt) as u64;
    let clusters = arch.active_clusters(active_pes);
    let rows = clusters.div_ceil(arch.cluster_cols) as u64;
    let cols = clusters.min(arch.cluster_cols) as u64;
    let route = cfg.route(dt);
    match route.mode {
        NocMode::Unicast => routers * clusters as u64,
        NocMode::HorizontalMulticast => routers * rows,
        NocMode::VerticalMulticast => routers * cols,
        NocMode::Broadcast => 1,
        NocMode::GroupedMulticast | NocMode::InterleavedMulticast => {
            (route.groups as u64).clamp(1, routers * clusters as u64)
        }
    }
}

pub fn delivered_bandwidth(
    cfg: &RoutingConfig,
    arch: &ClusterArrayConfig,
    dt: Datatype,
    active_pes: usize,
    compressed: bool,
) -> u64 {
    stream_count(cfg, arch, dt, active_pes) * RouterSpec::default_for(dt).values_per_cycle(compressed)
}

/// Stream id each active PE needs, per operand datatype.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryRequirement {
    pub active_pes: Vec<usize>,
    pub iact_streams: Vec<usize>,
    pub weight_streams: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatatypeDelivery {
    pub uncovered: Vec<usize>,
    pub overlapping: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryReport {
    pub per_datatype: BTreeMap<Datatype, DatatypeDelivery>,
    pub errors: Vec<String>,
}

impl DeliveryReport {
    pub fn ok(&self) -> bool {
        self.errors.is_empty()
            && self.per_datatype.values().all(|d| {
                d.uncovered.is_empty() && d.overlapping.is_empty()
            })
    }
}

pub fn validate_delivery(cfg: &RoutingConfig, arch: &ClusterArrayConfig, req: &DeliveryRequirement) -> DeliveryReport {
    let mut report = DeliveryReport::default();
    for (dt, streams) in [(Datatype::Iact, &req.iact_streams), (Datatype::Weight, &req.weight_streams)] {
        let mut hits: BTreeMap<usize, usize> = req.active_pes.iter().map(|&p| (p, 0)).collect();
        let need: BTreeMap<usize, usize> = req.active_pes.iter().copied().zip(streams.iter().copied()).collect();
        let mut d = DatatypeDelivery::default();
        let multicast = cfg.route(dt).mode != NocMode::Unicast;
        let mut wrong = Vec::new();
        for s in sources(cfg, arch, dt, &req.active_pes) {
            let dsts = match destinations(cfg, arch, dt, s, &req.active_pes) {
                Ok(v) => v,
                Err(e) => {
                    report.errors.push(format!("{dt}: {e}"));
                    continue;
                }
            };
            let carried = dsts.first().and_then(|p| need.get(p)).copied();
            for p in dsts {
                if let Some(h) = hits.get_mut(&p) {
                    *h += 1;
                }
                if multicast && need.get(&p).copied() != carried {
                    wrong.push(p);
                }
            }
        }
        for (p, h) in hits {
            match h {
                0 => d.uncovered.push(p),
                1 => {}
                _ => d.overlapping.push(p),
            }
        }
        // a multicast carrying another PE's data leaves this one unserved
        d.uncovered.extend(wrong);
        d.uncovered.sort_unstable();
        d.uncovered.dedup();
        report.per_datatype.insert(dt, d);
    }
    report
}
