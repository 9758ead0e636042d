//! Weight-matrix tiling: a logical `rows x cols` matrix is cut into a
//! complete grid of crossbar-sized tiles; edge tiles carry the remainders.

use crate::config::ArchConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tile {
    pub row_block: usize,
    pub col_block: usize,
    pub rows_used: usize,
    pub cols_used: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tiling {
    pub layer_id: usize,
    pub matrix_rows: usize,
    pub matrix_cols: usize,
    pub row_blocks: usize,
    pub col_blocks: usize,
    /// In (row_block, col_block) lexicographic order.
    pub tiles: Vec<Tile>,
}

impl Tiling {
    /// Placeholder for layers without a weight matrix.
    pub fn empty(layer_id: usize) -> Self {
        Self {
            layer_id,
            matrix_rows: 0,
            matrix_cols: 0,
            row_blocks: 0,
            col_blocks: 0,
            tiles: Vec::new(),
        }
    }

    pub fn has_tiles(&self) -> bool {
        !self.tiles.is_empty()
    }

    pub fn tile(&self, rb: usize, cb: usize) -> &Tile {
        &self.tiles[rb * self.col_blocks + cb]
    }

    pub fn rows_used(&self, rb: usize) -> usize {
        self.tile(rb, 0).rows_used
    }
}

pub fn tile_matrix(layer_id: usize, rows: usize, cols: usize, cfg: &ArchConfig) -> Tiling {
    assert!(rows >= 1 && cols >= 1);
    let (xr, xc) = (cfg.core.xbar_rows, cfg.core.xbar_cols);
    let row_blocks = rows.div_ceil(xr);
    let col_blocks = cols.div_ceil(xc);
    let mut tiles = Vec::with_capacity(row_blocks * col_blocks);
    for rb in 0..row_blocks {
        let rows_used = if rb + 1 == row_blocks { rows - rb * xr } else { xr };
        for cb in 0..col_blocks {
            let cols_used = if cb + 1 == col_blocks { cols - cb * xc } else { xc };
            tiles.push(Tile {
                row_block: rb,
                col_block: cb,
                rows_used,
                cols_used,
            });
        }
    }
    Tiling {
        layer_id,
        matrix_rows: rows,
        matrix_cols: cols,
        row_blocks,
        col_blocks,
        tiles,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_128() -> ArchConfig {
        let mut c = ArchConfig::default();
        c.core.xbar_rows = 128;
        c.core.xbar_cols = 128;
        c
    }

    #[test]
    fn remainders_on_edge_tiles() {
        let t = tile_matrix(0, 300, 200, &cfg_128());
        assert_eq!((t.row_blocks, t.col_blocks), (3, 2));
        assert_eq!(t.tiles.len(), 6);
        assert_eq!(t.tile(2, 0).rows_used, 44);
        assert_eq!(t.tile(0, 1).cols_used, 72);
        assert_eq!(t.tile(2, 1).rows_used, 44);
        assert_eq!(t.tile(2, 1).cols_used, 72);
        // coverage: per column of tiles, rows sum to matrix_rows
        let row_sum: usize = (0..3).map(|rb| t.tile(rb, 0).rows_used).sum();
        assert_eq!(row_sum, 300);
        let col_sum: usize = (0..2).map(|cb| t.tile(0, cb).cols_used).sum();
        assert_eq!(col_sum, 200);
    }

    #[test]
    fn exact_fit_is_one_tile() {
        let t = tile_matrix(0, 128, 128, &cfg_128());
        assert_eq!(t.tiles.len(), 1);
        assert_eq!(t.tile(0, 0).rows_used, 128);
        assert_eq!(t.tile(0, 0).cols_used, 128);
    }

    #[test]
    fn degenerate_one_by_one() {
        let t = tile_matrix(0, 1, 1, &cfg_128());
        assert_eq!(t.tiles.len(), 1);
        assert_eq!(t.tile(0, 0).rows_used, 1);
        assert_eq!(t.tile(0, 0).cols_used, 1);
    }
}
