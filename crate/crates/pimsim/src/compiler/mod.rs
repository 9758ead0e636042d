//! Lowering a network onto an architecture: tiling, core mapping, local
//! memory allocation, and fully unrolled code generation with all transfers
//! and synchronization.

mod alloc;
mod codegen;
mod mapping;
mod tiling;

pub use alloc::Region;
pub use mapping::{
    map_performance_first, map_utilization_first, verify_placement, Placement, Strategy,
};
pub use tiling::{tile_matrix, Tile, Tiling};

use crate::config::ArchConfig;
use crate::isa::{validate_program, CoreId, Program};
use crate::nn::{LayerKind, NetError, Network};
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

/// Accumulation depth cap: at most 2^15 int8 x int8 products per output
/// element, so int32 partial sums cannot overflow.
pub const MAX_MATRIX_ROWS: usize = 1 << 15;

#[derive(Debug, Error)]
pub enum CompileError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("capacity exceeded: {what}: need {needed}, have {available}")]
    CapacityExceeded {
        what: String,
        needed: usize,
        available: usize,
    },
    #[error("core {core}: local memory overflow: need {required} bytes, have {available}")]
    LocalMemOverflow {
        core: CoreId,
        required: u64,
        available: u64,
    },
    #[error("layer {layer}: unsupported: {reason}")]
    Unsupported { layer: usize, reason: String },
    #[error("compiler bug: generated program failed validation:\n{0}")]
    Internal(String),
}

/// Everything `compile` produces: the program plus inspection data.
#[derive(Debug, Clone)]
pub struct CompileOutput {
    pub program: Program,
    pub placement: Placement,
    /// Where the terminal layer's output lands in global memory.
    pub out_gaddr: u64,
    pub out_len: usize,
    pub report: PlacementReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlacementReport {
    pub strategy: String,
    pub cores_used: usize,
    pub out_gaddr: u64,
    pub out_len: usize,
    pub layers: Vec<LayerPlacement>,
    pub memory: BTreeMap<CoreId, Vec<Region>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerPlacement {
    pub id: usize,
    pub op: String,
    pub site: CoreId,
    pub tiles: Vec<TilePlacement>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TilePlacement {
    pub row_block: usize,
    pub col_block: usize,
    pub core: CoreId,
    pub xbar: usize,
}

/// Tilings for every layer, in network order; layers without weights get an
/// empty placeholder so the mapping algorithms see the full layer sequence.
pub fn layer_tilings(net: &Network, cfg: &ArchConfig) -> Result<Vec<Tiling>, CompileError> {
    net.layers
        .iter()
        .map(|layer| match layer.weight_matrix_dims(net) {
            Some((rows, cols)) => {
                if rows > MAX_MATRIX_ROWS {
                    return Err(CompileError::Unsupported {
                        layer: layer.id,
                        reason: format!(
                            "weight matrix has {rows} rows; accumulation depth is capped at {MAX_MATRIX_ROWS}"
                        ),
                    });
                }
                Ok(tile_matrix(layer.id, rows, cols, cfg))
            }
            None => Ok(Tiling::empty(layer.id)),
        })
        .collect()
}

/// Fill in execution sites for layers without weights.
///
/// Performance-first already claimed a fresh core per such layer. Under
/// utilization-first they run where their first producer's output lives
/// (the tight choice), falling back to core 0 for layers fed directly by
/// the network input.
fn assign_sites(net: &Network, placement: &mut Placement) {
    for layer in &net.layers {
        if placement.sites.contains_key(&layer.id) {
            continue;
        }
        let site = match layer.producers.first() {
            Some(&p) if p >= 0 => placement.sites[&(p as usize)],
            _ => 0,
        };
        placement.sites.insert(layer.id, site);
    }
}

pub fn compile(
    net: &Network,
    cfg: &ArchConfig,
    strategy: Strategy,
) -> Result<CompileOutput, CompileError> {
    let tilings = layer_tilings(net, cfg)?;
    let mut placement = match strategy {
        Strategy::UtilizationFirst => map_utilization_first(&tilings, cfg)?,
        Strategy::PerformanceFirst => map_performance_first(&tilings, cfg)?,
    };
    let placement_problems = verify_placement(&placement, &tilings, cfg);
    if !placement_problems.is_empty() {
        return Err(CompileError::Internal(placement_problems.join("\n")));
    }
    assign_sites(net, &mut placement);

    let (program, regions, out_gaddr, out_len) =
        codegen::generate(net, cfg, &tilings, &placement)?;

    let violations = validate_program(&program, cfg);
    if !violations.is_empty() {
        return Err(CompileError::Internal(
            violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("\n"),
        ));
    }

    let report = PlacementReport {
        strategy: strategy.name().to_string(),
        cores_used: placement.cores_used().len(),
        out_gaddr,
        out_len,
        layers: net
            .layers
            .iter()
            .map(|layer| LayerPlacement {
                id: layer.id,
                op: layer.kind.op_name().to_string(),
                site: placement.sites[&layer.id],
                tiles: tilings[layer.id]
                    .tiles
                    .iter()
                    .enumerate()
                    .map(|(idx, t)| {
                        let (core, xbar) = placement.tiles[&(layer.id, idx)];
                        TilePlacement {
                            row_block: t.row_block,
                            col_block: t.col_block,
                            core,
                            xbar,
                        }
                    })
                    .collect(),
            })
            .collect(),
        memory: regions,
    };

    Ok(CompileOutput {
        program,
        placement,
        out_gaddr,
        out_len,
        report,
    })
}

/// True when a layer's output is provably non-negative (ReLU, or max-pool /
/// concat over non-negative inputs); avg-pool lowering relies on it.
fn layer_nonneg(net: &Network, layer_id: i64) -> bool {
    if layer_id < 0 {
        return false;
    }
    let layer = &net.layers[layer_id as usize];
    match &layer.kind {
        LayerKind::Relu => true,
        LayerKind::Pool { .. } | LayerKind::Concat => {
            layer.producers.iter().all(|&p| layer_nonneg(net, p))
        }
        _ => false,
    }
}
