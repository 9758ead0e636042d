//! The two weight-mapping strategies.
//!
//! Utilization-first packs tiles tightly: each tile goes to the lowest core
//! with a free crossbar, so one core may hold several layers' weights and a
//! layer may split across cores. Performance-first gives every layer fresh
//! cores, so a core holds at most one layer's weights; layers without
//! weights still claim a core of their own to run their vector work on.

use super::tiling::Tiling;
use super::CompileError;
use crate::config::ArchConfig;
use crate::isa::CoreId;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    UtilizationFirst,
    PerformanceFirst,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::UtilizationFirst => "utilization",
            Strategy::PerformanceFirst => "performance",
        }
    }
}

/// Where every tile landed, plus the per-layer execution site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub strategy: Strategy,
    /// (layer id, tile index) -> (core, crossbar)
    pub tiles: BTreeMap<(usize, usize), (CoreId, usize)>,
    /// Core that runs a layer's vector work and accumulates its output.
    /// Weight layers: the lowest core hosting a col-block-0 tile. Filled for
    /// non-weight layers by `assign_sites`.
    pub sites: BTreeMap<usize, CoreId>,
    /// First core never claimed (performance-first claim cursor).
    pub next_free_core: CoreId,
}

impl Placement {
    pub fn cores_used(&self) -> Vec<CoreId> {
        let mut cores: Vec<CoreId> = self
            .tiles
            .values()
            .map(|&(c, _)| c)
            .chain(self.sites.values().copied())
            .collect();
        cores.sort_unstable();
        cores.dedup();
        cores
    }

    pub fn hosting_cores(&self, layer: usize) -> Vec<CoreId> {
        let mut cores: Vec<CoreId> = self
            .tiles
            .iter()
            .filter(|((l, _), _)| *l == layer)
            .map(|(_, &(c, _))| c)
            .collect();
        cores.sort_unstable();
        cores.dedup();
        cores
    }

    fn derive_weight_sites(&mut self, tilings: &[Tiling]) {
        for t in tilings {
            if !t.has_tiles() {
                continue;
            }
            let site = (0..t.row_blocks)
                .map(|rb| self.tiles[&(t.layer_id, rb * t.col_blocks)].0)
                .min()
                .expect("weight layer has tiles");
            self.sites.insert(t.layer_id, site);
        }
    }
}

pub fn map_utilization_first(
    tilings: &[Tiling],
    cfg: &ArchConfig,
) -> Result<Placement, CompileError> {
    let total_tiles: usize = tilings.iter().map(|t| t.tiles.len()).sum();
    let capacity = cfg.cores() * cfg.core.xbars_per_core;
    if total_tiles > capacity {
        return Err(CompileError::CapacityExceeded {
            what: "crossbars".into(),
            needed: total_tiles,
            available: capacity,
        });
    }

    let mut placement = Placement {
        strategy: Strategy::UtilizationFirst,
        tiles: BTreeMap::new(),
        sites: BTreeMap::new(),
        next_free_core: 0,
    };
    let mut core = 0usize;
    let mut used_in_core = 0usize;
    for t in tilings {
        for (idx, _) in t.tiles.iter().enumerate() {
            if used_in_core == cfg.core.xbars_per_core {
                core += 1;
                used_in_core = 0;
            }
            placement.tiles.insert((t.layer_id, idx), (core, used_in_core));
            used_in_core += 1;
        }
    }
    placement.next_free_core = if used_in_core == 0 { core } else { core + 1 };
    placement.derive_weight_sites(tilings);
    Ok(placement)
}

pub fn map_performance_first(
    tilings: &[Tiling],
    cfg: &ArchConfig,
) -> Result<Placement, CompileError> {
    let mut placement = Placement {
        strategy: Strategy::PerformanceFirst,
        tiles: BTreeMap::new(),
        sites: BTreeMap::new(),
        next_free_core: 0,
    };
    let mut next_core = 0usize;
    let claim = |next_core: &mut usize| -> Result<CoreId, CompileError> {
        if *next_core >= cfg.cores() {
            return Err(CompileError::CapacityExceeded {
                what: "unmapped cores".into(),
                needed: *next_core + 1,
                available: cfg.cores(),
            });
        }
        let c = *next_core;
        *next_core += 1;
        Ok(c)
    };

    for t in tilings {
        if !t.has_tiles() {
            // layers without weights still run somewhere of their own
            let core = claim(&mut next_core)?;
            placement.sites.insert(t.layer_id, core);
            continue;
        }
        let mut core = claim(&mut next_core)?;
        let mut used = 0usize;
        for (idx, _) in t.tiles.iter().enumerate() {
            if used == cfg.core.xbars_per_core {
                core = claim(&mut next_core)?;
                used = 0;
            }
            placement.tiles.insert((t.layer_id, idx), (core, used));
            used += 1;
        }
    }
    placement.next_free_core = next_core;
    placement.derive_weight_sites(tilings);
    Ok(placement)
}

/// Check the mapping invariants; returns one message per violation.
pub fn verify_placement(
    placement: &Placement,
    tilings: &[Tiling],
    cfg: &ArchConfig,
) -> Vec<String> {
    let mut out = Vec::new();
    let mut per_xbar: BTreeMap<(CoreId, usize), (usize, usize)> = BTreeMap::new();
    let mut per_core_layers: BTreeMap<CoreId, Vec<usize>> = BTreeMap::new();
    let mut per_core_tiles: BTreeMap<CoreId, usize> = BTreeMap::new();

    for (&(layer, tile), &(core, xbar)) in &placement.tiles {
        if xbar >= cfg.core.xbars_per_core {
            out.push(format!("tile ({layer},{tile}) on xbar {xbar} out of range"));
        }
        if core >= cfg.cores() {
            out.push(format!("tile ({layer},{tile}) on core {core} out of range"));
        }
        if let Some(prev) = per_xbar.insert((core, xbar), (layer, tile)) {
            out.push(format!(
                "core {core} xbar {xbar} hosts two tiles: {prev:?} and ({layer},{tile})"
            ));
        }
        let layers = per_core_layers.entry(core).or_default();
        if !layers.contains(&layer) {
            layers.push(layer);
        }
        *per_core_tiles.entry(core).or_default() += 1;
    }

    match placement.strategy {
        Strategy::PerformanceFirst => {
            for (core, layers) in &per_core_layers {
                if layers.len() > 1 {
                    out.push(format!("core {core} hosts {} layers' weights", layers.len()));
                }
            }
        }
        Strategy::UtilizationFirst => {
            // tight fill: used cores form a prefix and all but the last are full
            let used: Vec<CoreId> = per_core_tiles.keys().copied().collect();
            for (i, &c) in used.iter().enumerate() {
                if c != i {
                    out.push(format!("tile cores are not a prefix: {used:?}"));
                    break;
                }
            }
            for (i, &c) in used.iter().enumerate() {
                if i + 1 < used.len() && per_core_tiles[&c] != cfg.core.xbars_per_core {
                    out.push(format!("core {c} is not full but a later core is used"));
                }
            }
        }
    }

    // completeness: every tile assigned exactly once
    for t in tilings {
        for idx in 0..t.tiles.len() {
            if !placement.tiles.contains_key(&(t.layer_id, idx)) {
                out.push(format!("tile ({}, {idx}) unassigned", t.layer_id));
            }
        }
    }

    out
}
