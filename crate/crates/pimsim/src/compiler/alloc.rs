//! Per-core local-memory allocation. One bump allocator per core, word
//! aligned, no reuse: a single inference is fully unrolled, so every buffer
//! lives for the whole program.

use super::CompileError;
use crate::isa::{Addr, CoreId};
use serde::Serialize;
use std::collections::BTreeMap;

/// Named buffers a compiled program uses on one core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RegionKey {
    /// One byte that is never written; reads supply zero fills.
    ZeroCell,
    /// The raw network input, loaded from global memory (CHW).
    InputReplica,
    /// A layer's materialized output on its site core.
    OutBuf(usize),
    /// Copy of layer `.0`'s output on a consuming core.
    Replica(usize),
    /// Layout-converted copy of a producer's data (`layer`).
    Converted(usize),
    /// Staged input slice for (layer, row_block).
    Stage(usize, usize),
    /// MVM partial sums for (layer, row_block).
    Psum(usize, usize),
    /// Accumulated int32 output vector for a layer at its site.
    Acc(usize),
    /// Landing buffer for the remote partial of (layer, tile index).
    Land(usize, usize),
    /// Pool window scratch (one pixel vector).
    PoolTmp(usize),
    /// Widened int32 accumulator for avg-pool (layer).
    WideAcc(usize),
    /// Widening scratch for avg-pool (layer).
    WideTmp(usize),
    /// CHW staging for the terminal store.
    StoreStage(usize),
}

impl RegionKey {
    fn name(&self) -> String {
        match self {
            RegionKey::ZeroCell => "zero_cell".into(),
            RegionKey::InputReplica => "input_replica".into(),
            RegionKey::OutBuf(l) => format!("out_buf@{l}"),
            RegionKey::Replica(l) => format!("replica@{l}"),
            RegionKey::Converted(l) => format!("converted@{l}"),
            RegionKey::Stage(l, rb) => format!("stage@{l}.rb{rb}"),
            RegionKey::Psum(l, rb) => format!("psum@{l}.rb{rb}"),
            RegionKey::Acc(l) => format!("acc@{l}"),
            RegionKey::Land(l, t) => format!("land@{l}.t{t}"),
            RegionKey::PoolTmp(l) => format!("pool_tmp@{l}"),
            RegionKey::WideAcc(l) => format!("wide_acc@{l}"),
            RegionKey::WideTmp(l) => format!("wide_tmp@{l}"),
            RegionKey::StoreStage(l) => format!("store_stage@{l}"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Region {
    pub name: String,
    pub start: Addr,
    pub len: u32,
}

#[derive(Debug, Default)]
pub struct Allocator {
    limit: u32,
    cursors: BTreeMap<CoreId, u32>,
    cache: BTreeMap<(CoreId, RegionKey), Addr>,
    regions: BTreeMap<CoreId, Vec<Region>>,
}

impl Allocator {
    pub fn new(local_mem_bytes: usize) -> Self {
        Self {
            limit: local_mem_bytes as u32,
            ..Default::default()
        }
    }

    /// Address of the named buffer on `core`, allocating on first use.
    pub fn get(&mut self, core: CoreId, key: RegionKey, len: u32) -> Result<Addr, CompileError> {
        if let Some(&addr) = self.cache.get(&(core, key)) {
            return Ok(addr);
        }
        let cursor = self.cursors.entry(core).or_insert(0);
        let start = *cursor;
        let end = start
            .checked_add(len.max(1))
            .and_then(|e| e.checked_add(3))
            .map(|e| e & !3)
            .ok_or(CompileError::LocalMemOverflow {
                core,
                required: u64::MAX,
                available: self.limit as u64,
            })?;
        if end > self.limit {
            return Err(CompileError::LocalMemOverflow {
                core,
                required: end as u64,
                available: self.limit as u64,
            });
        }
        *cursor = end;
        self.cache.insert((core, key), start);
        self.regions.entry(core).or_default().push(Region {
            name: key.name(),
            start,
            len,
        });
        Ok(start)
    }

    pub fn regions(self) -> BTreeMap<CoreId, Vec<Region>> {
        self.regions
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regions_are_disjoint_and_aligned() {
        let mut a = Allocator::new(1024);
        let x = a.get(0, RegionKey::InputReplica, 10).unwrap();
        let y = a.get(0, RegionKey::OutBuf(0), 7).unwrap();
        let z = a.get(0, RegionKey::Psum(0, 0), 64).unwrap();
        assert_eq!(x, 0);
        assert_eq!(y, 12); // 10 rounded up
        assert_eq!(z, 20);
        // same key returns the same address
        assert_eq!(a.get(0, RegionKey::OutBuf(0), 7).unwrap(), y);
        // other cores are independent
        assert_eq!(a.get(3, RegionKey::OutBuf(0), 7).unwrap(), 0);
    }

    #[test]
    fn overflow_reports_core_and_sizes() {
        let mut a = Allocator::new(16);
        a.get(2, RegionKey::InputReplica, 12).unwrap();
        let err = a.get(2, RegionKey::OutBuf(0), 8).unwrap_err();
        match err {
            CompileError::LocalMemOverflow { core, required, available } => {
                assert_eq!(core, 2);
                assert_eq!(available, 16);
                assert!(required > 16);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
