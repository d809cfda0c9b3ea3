//! Event-count energy accounting with a configurable unit-cost table.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::pe::EnergyEvents;

use super::LayerResult;

pub const COSTS_ENV: &str = "EYESIM_COSTS";

/// Abstract energy units per event. Defaults are illustrative, not measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyCostTable {
    pub mac: f64,
    pub gated: f64,
    pub spad_read: f64,
    pub spad_write: f64,
    pub idle: f64,
    pub glb_read: f64,
    pub glb_write: f64,
    pub noc_hop: f64,
    pub dram_read: f64,
    pub dram_write: f64,
}

impl Default for EnergyCostTable {
    fn default() -> Self {
        EnergyCostTable {
            mac: 1.0,
            gated: 0.1,
            spad_read: 1.0,
            spad_write: 1.0,
            idle: 0.05,
            glb_read: 6.0,
            glb_write: 6.0,
            noc_hop: 2.0,
            dram_read: 200.0,
            dram_write: 200.0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CostTableError {
    #[error("cost table: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cost table {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cost `{0}` is negative")]
    Negative(&'static str),
}

impl EnergyCostTable {
    fn entries(&self) -> [(&'static str, f64); 10] {
        [
            ("mac", self.mac),
            ("gated", self.gated),
            ("spad_read", self.spad_read),
            ("spad_write", self.spad_write),
            ("idle", self.idle),
            ("glb_read", self.glb_read),
            ("glb_write", self.glb_write),
            ("noc_hop", self.noc_hop),
            ("dram_read", self.dram_read),
            ("dram_write", self.dram_write),
        ]
    }

    pub fn zero() -> Self {
        EnergyCostTable {
            mac: 0.0,
            gated: 0.0,
            spad_read: 0.0,
            spad_write: 0.0,
            idle: 0.0,
            glb_read: 0.0,
            glb_write: 0.0,
            noc_hop: 0.0,
            dram_read: 0.0,
            dram_write: 0.0,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CostTableError> {
        let t: EnergyCostTable = toml::from_str(text)?;
        if let Some((name, _)) = t.entries().into_iter().find(|(_, v)| *v < 0.0 || v.is_nan()) {
            return Err(CostTableError::Negative(name));
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, CostTableError> {
        let text = std::fs::read_to_string(path).map_err(|source| CostTableError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// The table named by `EYESIM_COSTS`, or the defaults.
    pub fn from_env() -> Result<Self, CostTableError> {
        match std::env::var_os(COSTS_ENV) {
            Some(p) => Self::load(Path::new(&p)),
            None => Ok(Self::default()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat table serializes")
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub total: f64,
    pub by_class: BTreeMap<String, f64>,
    /// Fraction of `total` per class; empty when the total is zero.
    pub shares: BTreeMap<String, f64>,
    pub table_hash: String,
}

pub fn event_energy(ev: &EnergyEvents, table: &EnergyCostTable) -> BTreeMap<String, f64> {
    let counts = [
        ev.mac,
        ev.gated,
        ev.spad_read,
        ev.spad_write,
        ev.idle_cycle,
        ev.glb_read,
        ev.glb_write,
        ev.noc_hop,
        ev.dram_read,
        ev.dram_write,
    ];
    table
        .entries()
        .iter()
        .zip(counts)
        .map(|((name, cost), n)| (name.to_string(), cost * n as f64))
        .collect()
}

pub fn energy_report(results: &[LayerResult], table: &EnergyCostTable) -> EnergyBreakdown {
    let mut ev = EnergyEvents::default();
    for r in results {
        ev += r.events;
    }
    let by_class = event_energy(&ev, table);
    let total: f64 = by_class.values().sum();
    let shares = if total > 0.0 {
        by_class.iter().map(|(k, v)| (k.clone(), v / total)).collect()
    } else {
        BTreeMap::new()
    };
    EnergyBreakdown {
        total,
        by_class,
        shares,
        table_hash: table.hash(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_hash() {
        let t = EnergyCostTable::default();
        let back = EnergyCostTable::from_toml(&t.to_toml()).unwrap();
        assert_eq!(back, t);
        assert_eq!(t.hash().len(), 64);
        assert_ne!(t.hash(), EnergyCostTable::zero().hash());
        assert!(matches!(
            EnergyCostTable::from_toml(&t.to_toml().replace("mac = 1.0", "mac = -1.0")),
            Err(CostTableError::Negative("mac"))
        ));
    }

    #[test]
    fn uniform_costs_follow_counts() {
        let mut u = EnergyCostTable::zero();
        u.mac = 1.0;
        u.gated = 1.0;
        let ev = EnergyEvents {
            mac: 3,
            gated: 1,
            ..Default::default()
        };
        let e = event_energy(&ev, &u);
        assert_eq!(e["mac"], 3.0);
        assert_eq!(e["gated"], 1.0);
    }
}
