//! Hardware architecture configuration: parsing, defaults, validation.
//!
//! The configuration file is JSON with top-level sections `mesh`, `core`,
//! `timing`, `energy` and `system`. Every field has a default; unknown fields
//! are rejected so typos in sweep scripts surface immediately. The full
//! schema lives in `docs/config_schema.md`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config syntax error: {0}")]
    Syntax(String),
    #[error("config schema error at `{path}`: {msg}")]
    Schema { path: String, msg: String },
    #[error("invalid config: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(vs: &[Violation]) -> String {
    vs.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// A single failed configuration invariant, with the offending field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshParams {
    pub width: usize,
    pub height: usize,
    /// Mesh coordinate (x, y) the global memory port attaches to.
    pub global_mem_node: [usize; 2],
}

impl Default for MeshParams {
    fn default() -> Self {
        Self {
            width: 6,
            height: 6,
            global_mem_node: [0, 0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoreParams {
    pub xbars_per_core: usize,
    pub xbar_rows: usize,
    pub xbar_cols: usize,
    /// ADCs shared per crossbar; output columns are converted in
    /// `ceil(out_len / adcs_per_xbar)` rounds.
    pub adcs_per_xbar: usize,
    pub local_mem_bytes: usize,
    pub rob_size: usize,
    pub dispatch_width: usize,
    pub num_scalar_regs: usize,
}

impl Default for CoreParams {
    fn default() -> Self {
        Self {
            xbars_per_core: 16,
            xbar_rows: 32,
            xbar_cols: 32,
            adcs_per_xbar: 1,
            local_mem_bytes: 65536,
            rob_size: 8,
            dispatch_width: 4,
            num_scalar_regs: 16,
        }
    }
}

/// Cycle costs of the execution units. Placeholder defaults; the reference
/// paper-scale numbers are not public.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingParams {
    pub mvm_setup_cycles: u64,
    pub adc_cycles_per_sample: u64,
    pub vec_setup_cycles: u64,
    pub vec_elems_per_cycle: u64,
    pub transfer_base_cycles: u64,
    pub noc_cycles_per_hop: u64,
    pub link_bytes_per_cycle: u64,
    pub gmem_base_cycles: u64,
    pub gmem_bytes_per_cycle: u64,
    pub scalar_cycles: u64,
}

impl Default for TimingParams {
    fn default() -> Self {
        Self {
            mvm_setup_cycles: 2,
            adc_cycles_per_sample: 1,
            vec_setup_cycles: 1,
            vec_elems_per_cycle: 16,
            transfer_base_cycles: 2,
            noc_cycles_per_hop: 1,
            link_bytes_per_cycle: 16,
            gmem_base_cycles: 8,
            gmem_bytes_per_cycle: 16,
            scalar_cycles: 1,
        }
    }
}

/// Per-event energies in integer picojoules, so tallies are exact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyParams {
    pub mvm_energy_per_xbar_pj: u64,
    pub adc_energy_per_sample_pj: u64,
    pub vec_energy_per_elem_pj: u64,
    pub noc_energy_per_byte_hop_pj: u64,
    pub mem_energy_per_byte_pj: u64,
    pub scalar_energy_per_inst_pj: u64,
    pub static_power_mw_per_core: u64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            mvm_energy_per_xbar_pj: 20,
            adc_energy_per_sample_pj: 2,
            vec_energy_per_elem_pj: 1,
            noc_energy_per_byte_hop_pj: 1,
            mem_energy_per_byte_pj: 1,
            scalar_energy_per_inst_pj: 1,
            static_power_mw_per_core: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    pub frequency_hz: u64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            frequency_hz: 1_000_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub mesh: MeshParams,
    pub core: CoreParams,
    pub timing: TimingParams,
    pub energy: EnergyParams,
    pub system: SystemParams,
}

impl ArchConfig {
    pub fn cores(&self) -> usize {
        self.mesh.width * self.mesh.height
    }

    /// Mesh coordinate (x, y) of a flat core id (row-major, x fastest).
    pub fn core_coord(&self, core: usize) -> (usize, usize) {
        (core % self.mesh.width, core / self.mesh.width)
    }

    pub fn coord_core(&self, x: usize, y: usize) -> usize {
        y * self.mesh.width + x
    }

    pub fn gmem_coord(&self) -> (usize, usize) {
        (self.mesh.global_mem_node[0], self.mesh.global_mem_node[1])
    }
}

pub fn parse_config(text: &str) -> Result<ArchConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ArchConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_syntax() || inner.is_eof() {
            ConfigError::Syntax(inner.to_string())
        } else {
            ConfigError::Schema {
                path,
                msg: inner.to_string(),
            }
        }
    })?;
    let violations = validate_config(&cfg);
    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(violations))
    }
}

/// Canonical textual form; `parse_config(emit_config(cfg)) == cfg`.
pub fn emit_config(cfg: &ArchConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serialization cannot fail")
}

/// One entry per violated invariant; empty iff the config is valid.
pub fn validate_config(cfg: &ArchConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut check = |ok: bool, field: &str, message: String| {
        if !ok {
            out.push(Violation {
                field: field.to_string(),
                message,
            });
        }
    };

    check(cfg.mesh.width >= 1, "mesh.width", "must be >= 1".into());
    check(cfg.mesh.height >= 1, "mesh.height", "must be >= 1".into());
    check(
        cfg.mesh.global_mem_node[0] < cfg.mesh.width.max(1)
            && cfg.mesh.global_mem_node[1] < cfg.mesh.height.max(1),
        "mesh.global_mem_node",
        format!(
            "({}, {}) outside the {}x{} mesh",
            cfg.mesh.global_mem_node[0], cfg.mesh.global_mem_node[1], cfg.mesh.width, cfg.mesh.height
        ),
    );
    check(cfg.core.xbars_per_core >= 1, "core.xbars_per_core", "must be >= 1".into());
    check(cfg.core.xbar_rows >= 1, "core.xbar_rows", "must be >= 1".into());
    check(cfg.core.xbar_cols >= 1, "core.xbar_cols", "must be >= 1".into());
    check(cfg.core.adcs_per_xbar >= 1, "core.adcs_per_xbar", "must be >= 1".into());
    check(
        cfg.core.adcs_per_xbar <= cfg.core.xbar_cols,
        "core.adcs_per_xbar",
        format!(
            "{} exceeds xbar_cols = {}",
            cfg.core.adcs_per_xbar, cfg.core.xbar_cols
        ),
    );
    check(cfg.core.local_mem_bytes >= 1, "core.local_mem_bytes", "must be >= 1".into());
    check(cfg.core.rob_size >= 1, "core.rob_size", "must be >= 1".into());
    check(cfg.core.dispatch_width >= 1, "core.dispatch_width", "must be >= 1".into());
    check(
        (1..=64).contains(&cfg.core.num_scalar_regs),
        "core.num_scalar_regs",
        "must be in [1, 64]".into(),
    );
    check(
        cfg.timing.adc_cycles_per_sample >= 1,
        "timing.adc_cycles_per_sample",
        "must be >= 1".into(),
    );
    check(
        cfg.timing.vec_elems_per_cycle >= 1,
        "timing.vec_elems_per_cycle",
        "must be >= 1".into(),
    );
    check(
        cfg.timing.noc_cycles_per_hop >= 1,
        "timing.noc_cycles_per_hop",
        "must be >= 1".into(),
    );
    check(
        cfg.timing.link_bytes_per_cycle >= 1,
        "timing.link_bytes_per_cycle",
        "must be >= 1".into(),
    );
    check(
        cfg.timing.gmem_bytes_per_cycle >= 1,
        "timing.gmem_bytes_per_cycle",
        "must be >= 1".into(),
    );
    check(cfg.timing.scalar_cycles >= 1, "timing.scalar_cycles", "must be >= 1".into());
    check(cfg.system.frequency_hz >= 1, "system.frequency_hz", "must be >= 1".into());

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_scale_config_parses() {
        let doc = r#"{
            "mesh": {"width": 8, "height": 8},
            "core": {"xbars_per_core": 512, "xbar_rows": 128, "xbar_cols": 128, "adcs_per_xbar": 1}
        }"#;
        let cfg = parse_config(doc).unwrap();
        assert_eq!(cfg.cores(), 64);
        assert_eq!(cfg.core.xbars_per_core, 512);
        assert_eq!(cfg.core.xbar_rows, 128);
    }

    #[test]
    fn omitted_dispatch_width_defaults_to_4() {
        let cfg = parse_config(r#"{"core": {"rob_size": 2}}"#).unwrap();
        assert_eq!(cfg.core.dispatch_width, 4);
        assert_eq!(cfg.core.rob_size, 2);
    }

    #[test]
    fn zero_rob_size_names_the_field() {
        let err = parse_config(r#"{"core": {"rob_size": 0}}"#).unwrap_err();
        match err {
            ConfigError::Invalid(vs) => {
                assert_eq!(vs.len(), 1);
                assert_eq!(vs[0].field, "core.rob_size");
            }
            other => panic!("expected invalid, got {other}"),
        }
    }

    #[test]
    fn adc_share_bound() {
        let mut cfg = ArchConfig::default();
        cfg.core.adcs_per_xbar = 200;
        cfg.core.xbar_cols = 128;
        let vs = validate_config(&cfg);
        assert_eq!(vs.len(), 1);
        assert_eq!(vs[0].field, "core.adcs_per_xbar");
    }

    #[test]
    fn gmem_node_outside_mesh() {
        let mut cfg = ArchConfig::default();
        cfg.mesh.width = 8;
        cfg.mesh.height = 8;
        cfg.mesh.global_mem_node = [9, 0];
        let vs = validate_config(&cfg);
        assert_eq!(vs.len(), 1);
        assert_eq!(vs[0].field, "mesh.global_mem_node");
    }

    #[test]
    fn unknown_field_is_an_error() {
        let err = parse_config(r#"{"core": {"xbar_rowz": 64}}"#).unwrap_err();
        match err {
            ConfigError::Schema { path, .. } => assert_eq!(path, "core.xbar_rowz"),
            other => panic!("expected schema error, got {other}"),
        }
    }

    #[test]
    fn round_trip() {
        let mut cfg = ArchConfig::default();
        cfg.mesh.width = 3;
        cfg.core.rob_size = 12;
        cfg.timing.link_bytes_per_cycle = 7;
        cfg.energy.mvm_energy_per_xbar_pj = 123;
        let back = parse_config(&emit_config(&cfg)).unwrap();
        assert_eq!(back, cfg);
        assert!(validate_config(&back).is_empty());
    }
}
