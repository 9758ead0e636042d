//! Turning raw simulation results into the report: latency, energy by
//! category, average power, per-layer compute/communication splits, and
//! per-core unit utilization.
//!
//! Dynamic energy is exact: the engine tallies integer event counts and this
//! module multiplies them by integer picojoule costs. Per-layer cycles are
//! unions of busy intervals per category, so overlapping instructions of one
//! layer are not double counted; rendezvous waiting counts as communication.

use crate::config::ArchConfig;
use crate::engine::{SimResult, TraceRecord};
use crate::isa::InstrClass;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub mvm_pj: u64,
    pub adc_pj: u64,
    pub vector_pj: u64,
    pub noc_pj: u64,
    pub memory_pj: u64,
    pub scalar_pj: u64,
    #[serde(rename = "static_pj")]
    pub static_pj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: u32,
    pub compute_cycles: u64,
    pub comm_cycles: u64,
    pub comm_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreReport {
    pub core: usize,
    pub busy_cycles: [u64; 4],
    /// Busy fraction per unit class: matrix, vector, transfer, scalar.
    pub utilization: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub total_cycles: u64,
    pub latency_s: f64,
    pub energy: EnergyBreakdown,
    pub total_energy_pj: f64,
    pub avg_power_mw: f64,
    /// Instruction commit counts: matrix, vector, transfer, scalar.
    pub inst_counts: [u64; 4],
    pub per_layer: Vec<LayerReport>,
    pub per_core: Vec<CoreReport>,
}

/// Total length covered by a set of (start, end) intervals, overlaps once.
fn union_len(intervals: &mut Vec<(u64, u64)>) -> u64 {
    intervals.sort_unstable();
    let mut total = 0;
    let mut cur: Option<(u64, u64)> = None;
    for &(s, e) in intervals.iter() {
        cur = match cur {
            Some((cs, ce)) if s <= ce => Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                Some((s, e))
            }
            None => Some((s, e)),
        };
    }
    if let Some((cs, ce)) = cur {
        total += ce - cs;
    }
    total
}

fn per_layer_breakdown(trace: &[TraceRecord]) -> Vec<LayerReport> {
    let mut comm: BTreeMap<u32, Vec<(u64, u64)>> = BTreeMap::new();
    let mut compute: BTreeMap<u32, Vec<(u64, u64)>> = BTreeMap::new();
    for r in trace {
        let Some(layer) = r.layer else { continue };
        let bucket = if r.class == InstrClass::Transfer {
            comm.entry(layer).or_default()
        } else {
            compute.entry(layer).or_default()
        };
        bucket.push((r.issue, r.complete));
    }
    let layers: std::collections::BTreeSet<u32> =
        comm.keys().chain(compute.keys()).copied().collect();
    layers
        .into_iter()
        .map(|layer| {
            let comm_cycles = union_len(comm.entry(layer).or_default());
            let compute_cycles = union_len(compute.entry(layer).or_default());
            let denom = comm_cycles + compute_cycles;
            LayerReport {
                layer,
                compute_cycles,
                comm_cycles,
                comm_ratio: if denom == 0 {
                    0.0
                } else {
                    comm_cycles as f64 / denom as f64
                },
            }
        })
        .collect()
}

pub fn finalize_report(sim: &SimResult, cfg: &ArchConfig) -> Report {
    let e = &cfg.energy;
    let energy = EnergyBreakdown {
        mvm_pj: sim.counts.mvm_xbar_activations * e.mvm_energy_per_xbar_pj,
        adc_pj: sim.counts.adc_samples * e.adc_energy_per_sample_pj,
        vector_pj: sim.counts.vector_elems * e.vec_energy_per_elem_pj,
        noc_pj: sim.counts.noc_byte_hops * e.noc_energy_per_byte_hop_pj,
        memory_pj: sim.counts.mem_bytes * e.mem_energy_per_byte_pj,
        scalar_pj: sim.counts.scalar_insts * e.scalar_energy_per_inst_pj,
        // 1 mW for 1 s is 1e9 pJ
        static_pj: (e.static_power_mw_per_core * cfg.cores() as u64 * sim.total_cycles) as f64
            * 1e9
            / cfg.system.frequency_hz as f64,
    };
    let dynamic: u64 = energy.mvm_pj
        + energy.adc_pj
        + energy.vector_pj
        + energy.noc_pj
        + energy.memory_pj
        + energy.scalar_pj;
    let total_energy_pj = dynamic as f64 + energy.static_pj;
    let latency_s = sim.total_cycles as f64 / cfg.system.frequency_hz as f64;
    let avg_power_mw = if latency_s > 0.0 {
        total_energy_pj * 1e-9 / latency_s
    } else {
        0.0
    };

    let per_core = sim
        .unit_busy
        .iter()
        .map(|(&core, &busy)| CoreReport {
            core,
            busy_cycles: busy,
            utilization: busy.map(|b| {
                if sim.total_cycles == 0 {
                    0.0
                } else {
                    b as f64 / sim.total_cycles as f64
                }
            }),
        })
        .collect();

    Report {
        total_cycles: sim.total_cycles,
        latency_s,
        energy,
        total_energy_pj,
        avg_power_mw,
        inst_counts: sim.inst_counts,
        per_layer: per_layer_breakdown(&sim.trace),
        per_core,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Serialize a report. The CSV form is one `scope,metric,value` row per
/// figure so sweep outputs concatenate cleanly.
pub fn emit_report(r: &Report, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(r).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Csv => emit_csv(r, &mut String::new()),
    }
}

/// CSV rows without the header, for concatenating sweep points.
pub fn emit_csv_rows(r: &Report, prefix: &str) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    let mut row = |scope: &str, metric: &str, value: String| {
        writeln!(s, "{prefix}{scope},{metric},{value}").unwrap();
    };
    row("total", "total_cycles", r.total_cycles.to_string());
    row("total", "latency_s", format!("{:e}", r.latency_s));
    row("energy", "mvm_pj", r.energy.mvm_pj.to_string());
    row("energy", "adc_pj", r.energy.adc_pj.to_string());
    row("energy", "vector_pj", r.energy.vector_pj.to_string());
    row("energy", "noc_pj", r.energy.noc_pj.to_string());
    row("energy", "memory_pj", r.energy.memory_pj.to_string());
    row("energy", "scalar_pj", r.energy.scalar_pj.to_string());
    row("energy", "static_pj", format!("{:e}", r.energy.static_pj));
    row("total", "total_energy_pj", format!("{:e}", r.total_energy_pj));
    row("total", "avg_power_mw", format!("{:e}", r.avg_power_mw));
    for (name, v) in ["matrix", "vector", "transfer", "scalar"]
        .iter()
        .zip(r.inst_counts)
    {
        row("counts", &format!("{name}_insts"), v.to_string());
    }
    for l in &r.per_layer {
        let scope = format!("layer:{}", l.layer);
        row(&scope, "compute_cycles", l.compute_cycles.to_string());
        row(&scope, "comm_cycles", l.comm_cycles.to_string());
        row(&scope, "comm_ratio", format!("{:e}", l.comm_ratio));
    }
    for c in &r.per_core {
        let scope = format!("core:{}", c.core);
        for (i, name) in ["matrix", "vector", "transfer", "scalar"].iter().enumerate() {
            row(&scope, &format!("{name}_busy_cycles"), c.busy_cycles[i].to_string());
            row(&scope, &format!("{name}_utilization"), format!("{:e}", c.utilization[i]));
        }
    }
    s
}

pub const CSV_HEADER: &str = "scope,metric,value\n";
pub const SWEEP_CSV_HEADER: &str = "point,scope,metric,value\n";

fn emit_csv(r: &Report, out: &mut String) -> String {
    out.push_str(CSV_HEADER);
    out.push_str(&emit_csv_rows(r, ""));
    out.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{simulate, SimOptions};
    use crate::isa::{Instruction, Program};

    fn halt_only_sim(cfg: &ArchConfig) -> SimResult {
        let mut p = Program::default();
        for core in 0..cfg.cores() {
            p.core_mut(core).push(Instruction::Halt, None);
        }
        simulate(&p, cfg, &[], &SimOptions::default()).unwrap()
    }

    #[test]
    fn empty_chip_is_static_only() {
        let mut cfg = ArchConfig::default();
        cfg.mesh.width = 2;
        cfg.mesh.height = 2;
        let sim = halt_only_sim(&cfg);
        let r = finalize_report(&sim, &cfg);
        assert_eq!(r.energy.mvm_pj, 0);
        assert_eq!(r.energy.adc_pj, 0);
        assert_eq!(r.energy.vector_pj, 0);
        assert_eq!(r.energy.noc_pj, 0);
        assert_eq!(r.energy.memory_pj, 0);
        // HALT is a committed scalar instruction and is priced as one
        assert_eq!(r.energy.scalar_pj, 4 * cfg.energy.scalar_energy_per_inst_pj);
        assert!(r.energy.static_pj > 0.0);
        // power identity
        assert!((r.avg_power_mw - r.total_energy_pj * 1e-9 / r.latency_s).abs() <= f64::EPSILON);
    }

    #[test]
    fn additivity_is_exact() {
        let mut cfg = ArchConfig::default();
        cfg.mesh.width = 2;
        cfg.mesh.height = 1;
        let sim = halt_only_sim(&cfg);
        let r = finalize_report(&sim, &cfg);
        let sum = (r.energy.mvm_pj
            + r.energy.adc_pj
            + r.energy.vector_pj
            + r.energy.noc_pj
            + r.energy.memory_pj
            + r.energy.scalar_pj) as f64
            + r.energy.static_pj;
        assert_eq!(sum, r.total_energy_pj);
    }

    #[test]
    fn json_round_trips() {
        let mut cfg = ArchConfig::default();
        cfg.mesh.width = 2;
        cfg.mesh.height = 1;
        let sim = halt_only_sim(&cfg);
        let r = finalize_report(&sim, &cfg);
        let text = emit_report(&r, ReportFormat::Json);
        let back: Report = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn comm_ratio_uses_union_of_intervals() {
        let mut a = vec![(0u64, 10u64), (5, 15), (20, 25)];
        assert_eq!(union_len(&mut a), 20);
    }
}
