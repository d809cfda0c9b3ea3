//! Architecture presets for the three accelerator variants and the scaled arrays.

use serde::{Deserialize, Serialize};

use crate::noc::ClusterArrayConfig;
use crate::pe::{PeMode, SpadConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArchVariant {
    V1,
    V15,
    V2,
}

impl ArchVariant {
    pub const ALL: [ArchVariant; 3] = [ArchVariant::V1, ArchVariant::V15, ArchVariant::V2];

    pub fn name(self) -> &'static str {
        match self {
            ArchVariant::V1 => "v1",
            ArchVariant::V15 => "v15",
            ArchVariant::V2 => "v2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "v1" => Some(ArchVariant::V1),
            "v15" | "v1.5" => Some(ArchVariant::V15),
            "v2" => Some(ArchVariant::V2),
            _ => None,
        }
    }

    pub fn pe_mode(self) -> PeMode {
        match self {
            ArchVariant::V1 => PeMode::DenseGateIactOnly,
            ArchVariant::V15 => PeMode::DenseGate,
            ArchVariant::V2 => PeMode::SparseSkip,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NocKind {
    /// Per-cluster router groups on a mesh.
    Hierarchical,
    /// One multicast network, a single source stream per datatype.
    Flat,
    /// No delivery limit.
    Ideal,
}

/// Off-chip bandwidth in bytes per second; `None` is unlimited.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DramBandwidth(pub Option<f64>);

impl DramBandwidth {
    pub const UNLIMITED: DramBandwidth = DramBandwidth(None);
    pub const DDR4_3200: DramBandwidth = DramBandwidth(Some(25_600e6));

    pub fn bytes_per_cycle(&self, clock_hz: f64) -> Option<f64> {
        self.0.map(|b| b / clock_hz)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub name: String,
    pub clusters: ClusterArrayConfig,
    pub spad: SpadConfig,
    pub noc: NocKind,
    pub pe_mode: PeMode,
    pub macs_per_pe: u64,
    /// Pipeline fill charged once per pass.
    pub fill_cycles: u64,
    pub clock_hz: f64,
    pub dram: DramBandwidth,
    pub act_bits: u32,
    pub psum_bits: u32,
}

impl ArchConfig {
    pub fn variant(v: ArchVariant) -> Self {
        ArchConfig {
            name: v.name().to_string(),
            clusters: ClusterArrayConfig::default(),
            spad: SpadConfig::default(),
            noc: match v {
                ArchVariant::V1 => NocKind::Flat,
                _ => NocKind::Hierarchical,
            },
            pe_mode: v.pe_mode(),
            macs_per_pe: v.pe_mode().macs_per_cycle(),
            fill_cycles: v.pe_mode().fill_cycles(),
            clock_hz: 200e6,
            dram: DramBandwidth::UNLIMITED,
            act_bits: 8,
            psum_bits: 20,
        }
    }

    pub fn v2() -> Self {
        Self::variant(ArchVariant::V2)
    }

    /// Scaled array for the scalability study: 4x4-PE clusters of dense single-MAC PEs,
    /// so variants differ only in their network.
    pub fn scaled(v: ArchVariant, pes: usize) -> Self {
        let mut a = Self::variant(v);
        a.name = format!("{}-{}", v.name(), pes);
        a.clusters = ClusterArrayConfig::scaled(pes);
        if a.pe_mode == PeMode::SparseSkip {
            a.pe_mode = PeMode::DenseGate;
        }
        a.macs_per_pe = 1;
        a.fill_cycles = 0;
        a
    }

    pub fn num_pes(&self) -> usize {
        self.clusters.num_pes()
    }

    pub fn peak_macs_per_cycle(&self) -> u64 {
        self.num_pes() as u64 * self.macs_per_pe
    }

    pub fn peak_gops(&self) -> f64 {
        self.peak_macs_per_cycle() as f64 * self.clock_hz * 2.0 / 1e9
    }

    pub fn report(&self) -> ArchReport {
        let [iact_addr, iact_data, weight_addr, weight_data, psum] = self.spad.bytes();
        ArchReport {
            name: self.name.clone(),
            pes: self.num_pes(),
            macs: self.peak_macs_per_cycle(),
            clock_mhz: self.clock_hz / 1e6,
            peak_gops: self.peak_gops(),
            glb_kib: self.clusters.glb_bytes() as f64 / 1024.0,
            glb_cluster_kib: self.clusters.glb_cluster_bytes() as f64 / 1024.0,
            spad_bytes: SpadBytes {
                iact_addr,
                iact_data,
                weight_addr,
                weight_data,
                psum,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpadBytes {
    pub iact_addr: f64,
    pub iact_data: f64,
    pub weight_addr: f64,
    pub weight_data: f64,
    pub psum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArchReport {
    pub name: String,
    pub pes: usize,
    pub macs: u64,
    pub clock_mhz: f64,
    pub peak_gops: f64,
    pub glb_kib: f64,
    pub glb_cluster_kib: f64,
    pub spad_bytes: SpadBytes,
}
