//! Fully unrolled instruction emission.
//!
//! Data layout on cores: the raw network input is staged CHW exactly as it
//! sits in global memory; conv/pool/concat outputs are pixel-major (HWC) so
//! a conv writes each output pixel's channel vector contiguously; FC outputs
//! are flat. Elementwise layers preserve their producer's layout. Gathers are
//! strided VCOPYs, zero fills broadcast from a never-written zero byte.
//!
//! Every matrix instruction follows the same per-output-position schedule:
//! stage the im2col slice per row block, one MVM per (row block, core)
//! group, route partial sums to the layer's site, VADD.w them, VSCALE into
//! the output buffer. Tags count up per ordered core pair in emission order,
//! and matching SEND/RECV pairs are emitted together while walking layers in
//! topological order, so transfer order per pair is consistent by
//! construction.

use super::alloc::{Allocator, Region, RegionKey};
use super::mapping::Placement;
use super::tiling::Tiling;
use super::{layer_nonneg, CompileError};
use crate::config::ArchConfig;
use crate::isa::{
    Addr, CoreId, ElemWidth, GroupEntry, GroupMember, Instruction, Program, WeightImage,
};
use crate::nn::{
    div_round_half_away, requantize, Layer, LayerKind, Network, PoolKind, QuantParams,
    NETWORK_INPUT,
};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    /// Channel-major, as tensors live in global memory.
    Chw,
    /// Pixel-major: channel vectors contiguous per pixel.
    Hwc,
    /// One-dimensional.
    Flat,
}

#[derive(Debug, Clone, Copy)]
enum PieceSrc {
    Zero,
    Mem { addr: Addr, stride: u32 },
}

/// One gather run of an im2col column: `len` elements starting at column
/// position `col`.
#[derive(Debug, Clone, Copy)]
struct Piece {
    col: usize,
    len: usize,
    src: PieceSrc,
}

pub(super) fn generate(
    net: &Network,
    cfg: &ArchConfig,
    tilings: &[Tiling],
    placement: &Placement,
) -> Result<(Program, BTreeMap<CoreId, Vec<Region>>, u64, usize), CompileError> {
    let mut cg = Codegen {
        net,
        cfg,
        tilings,
        placement,
        alloc: Allocator::new(cfg.core.local_mem_bytes),
        program: Program::default(),
        group_ids: BTreeMap::new(),
        next_group: BTreeMap::new(),
        tags: BTreeMap::new(),
        layouts: BTreeMap::new(),
        input_loaded: BTreeSet::new(),
        replicated: BTreeSet::new(),
    };
    cg.prepare_groups_and_weights()?;
    for layer in &net.layers {
        cg.emit_layer(layer)?;
    }
    let (out_gaddr, out_len) = cg.emit_terminal_store()?;
    for (_, cp) in cg.program.cores.iter_mut() {
        cp.push(Instruction::Halt, None);
    }
    Ok((cg.program, cg.alloc.regions(), out_gaddr, out_len))
}

struct Codegen<'a> {
    net: &'a Network,
    cfg: &'a ArchConfig,
    tilings: &'a [Tiling],
    placement: &'a Placement,
    alloc: Allocator,
    program: Program,
    /// (layer, row_block, core) -> group id in that core's table.
    group_ids: BTreeMap<(usize, usize, CoreId), u32>,
    next_group: BTreeMap<CoreId, u32>,
    /// Next tag per ordered (src, dst) core pair.
    tags: BTreeMap<(CoreId, CoreId), u32>,
    /// Layout of each layer's materialized output (keyed by layer id).
    layouts: BTreeMap<usize, Layout>,
    input_loaded: BTreeSet<CoreId>,
    replicated: BTreeSet<(usize, CoreId)>,
}

impl<'a> Codegen<'a> {
    fn emit(&mut self, core: CoreId, inst: Instruction, layer: usize) {
        self.program.core_mut(core).push(inst, Some(layer as u32));
    }

    fn next_tag(&mut self, src: CoreId, dst: CoreId) -> u32 {
        let t = self.tags.entry((src, dst)).or_insert(0);
        let tag = *t;
        *t += 1;
        tag
    }

    fn zero_cell(&mut self, core: CoreId) -> Result<Addr, CompileError> {
        self.alloc.get(core, RegionKey::ZeroCell, 1)
    }

    /// Build group tables and write tile sub-blocks into crossbar images.
    fn prepare_groups_and_weights(&mut self) -> Result<(), CompileError> {
        let (xr, xc) = (self.cfg.core.xbar_rows, self.cfg.core.xbar_cols);
        for layer in &self.net.layers {
            let t = &self.tilings[layer.id];
            if !t.has_tiles() {
                continue;
            }
            let weights = self.net.layer_weights(layer)?;
            // groups: tiles of one (layer, row_block) co-resident on a core
            for rb in 0..t.row_blocks {
                let mut by_core: BTreeMap<CoreId, Vec<usize>> = BTreeMap::new();
                for cb in 0..t.col_blocks {
                    let idx = rb * t.col_blocks + cb;
                    let (core, _) = self.placement.tiles[&(layer.id, idx)];
                    by_core.entry(core).or_default().push(idx);
                }
                for (core, tile_idxs) in by_core {
                    let gid = {
                        let n = self.next_group.entry(core).or_insert(0);
                        let g = *n;
                        *n += 1;
                        g
                    };
                    self.group_ids.insert((layer.id, rb, core), gid);
                    let members = tile_idxs
                        .iter()
                        .map(|&idx| {
                            let tile = &t.tiles[idx];
                            let (_, xbar) = self.placement.tiles[&(layer.id, idx)];
                            GroupMember {
                                xbar,
                                out_offset: (4 * tile.col_block * xc) as u32,
                                out_len: tile.cols_used as u32,
                            }
                        })
                        .collect();
                    self.program.core_mut(core).groups.push(GroupEntry {
                        group_id: gid,
                        input_len: t.rows_used(rb) as u32,
                        members,
                    });
                }
            }
            // weight images: tile (rb, cb) lands at rows [0, rows_used),
            // cols [0, cols_used); the remainder stays zero
            for (idx, tile) in t.tiles.iter().enumerate() {
                let (core, xbar) = self.placement.tiles[&(layer.id, idx)];
                let mut img = WeightImage::zeroed(xr, xc);
                for r in 0..tile.rows_used {
                    for c in 0..tile.cols_used {
                        let gr = tile.row_block * xr + r;
                        let gc = tile.col_block * xc + c;
                        img.data[r * xc + c] = weights[gr * t.matrix_cols + gc];
                    }
                }
                self.program.core_mut(core).weights.insert(xbar, img);
            }
        }
        Ok(())
    }

    // ---- producer data availability ----

    fn producer_len(&self, p: i64) -> usize {
        if p == NETWORK_INPUT {
            self.net.input_elems()
        } else {
            self.net.layers[p as usize].out_elems()
        }
    }

    fn producer_layout(&self, p: i64) -> Layout {
        if p == NETWORK_INPUT {
            Layout::Chw
        } else {
            self.layouts[&(p as usize)]
        }
    }

    /// Make producer `p`'s data available on `core`; returns its local
    /// address. Emits the global-memory load or the SEND/RECV pair the first
    /// time a producer is needed on a given core.
    fn ensure_available(
        &mut self,
        p: i64,
        core: CoreId,
        for_layer: usize,
    ) -> Result<Addr, CompileError> {
        let len = self.producer_len(p) as u32;
        if p == NETWORK_INPUT {
            let dst = self.alloc.get(core, RegionKey::InputReplica, len)?;
            if self.input_loaded.insert(core) {
                self.emit(core, Instruction::Load { dst, gaddr: 0, len }, for_layer);
            }
            return Ok(dst);
        }
        let p = p as usize;
        let home = self.placement.sites[&p];
        let out_buf = self.alloc.get(home, RegionKey::OutBuf(p), len)?;
        if home == core {
            return Ok(out_buf);
        }
        let dst = self.alloc.get(core, RegionKey::Replica(p), len)?;
        if self.replicated.insert((p, core)) {
            let tag = self.next_tag(home, core);
            self.emit(
                home,
                Instruction::Send { dst_core: core, src: out_buf, len, tag },
                for_layer,
            );
            self.emit(
                core,
                Instruction::Recv { src_core: home, dst, len, tag },
                for_layer,
            );
        }
        Ok(dst)
    }

    // ---- column gathers ----

    /// Element address within a 3-D tensor buffer.
    fn elem_addr(base: Addr, layout: Layout, shape: &[usize], c: usize, y: usize, x: usize) -> Addr {
        let (ch, h, w) = (shape[0], shape[1], shape[2]);
        debug_assert!(c < ch && y < h && x < w);
        match layout {
            Layout::Chw => base + (c * h * w + y * w + x) as u32,
            Layout::Hwc => base + ((y * w + x) * ch + c) as u32,
            Layout::Flat => unreachable!("3-D data is never flat"),
        }
    }

    /// Gather pieces of the full im2col column of one conv output pixel.
    fn conv_column_pieces(
        &self,
        layer: &Layer,
        base: Addr,
        layout: Layout,
        oy: usize,
        ox: usize,
    ) -> Vec<Piece> {
        let LayerKind::Conv2d { kernel_h, kernel_w, stride, padding, .. } = &layer.kind else {
            unreachable!()
        };
        let in_shape = self.net.producer_shape(layer, 0);
        let (c_in, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
        let elem_stride = match layout {
            Layout::Chw => 1u32,
            Layout::Hwc => c_in as u32,
            Layout::Flat => unreachable!(),
        };
        let mut pieces = Vec::new();
        for c in 0..c_in {
            for dh in 0..*kernel_h {
                let col = (c * kernel_h + dh) * kernel_w;
                let iy = (oy * stride + dh) as isize - *padding as isize;
                if iy < 0 || iy >= h as isize {
                    pieces.push(Piece { col, len: *kernel_w, src: PieceSrc::Zero });
                    continue;
                }
                let ix0 = (ox * stride) as isize - *padding as isize;
                let lo = (-ix0).clamp(0, *kernel_w as isize) as usize;
                let hi = (w as isize - ix0).clamp(0, *kernel_w as isize) as usize;
                if lo > 0 {
                    pieces.push(Piece { col, len: lo, src: PieceSrc::Zero });
                }
                if hi > lo {
                    let addr = Self::elem_addr(
                        base,
                        layout,
                        &in_shape,
                        c,
                        iy as usize,
                        (ix0 + lo as isize) as usize,
                    );
                    pieces.push(Piece {
                        col: col + lo,
                        len: hi - lo,
                        src: PieceSrc::Mem { addr, stride: elem_stride },
                    });
                }
                if hi < *kernel_w {
                    pieces.push(Piece { col: col + hi, len: kernel_w - hi, src: PieceSrc::Zero });
                }
            }
        }
        pieces
    }

    /// Gather pieces for an FC input: the producer tensor flattened in
    /// canonical CHW element order.
    fn flat_column_pieces(&self, layer: &Layer, base: Addr, layout: Layout) -> Vec<Piece> {
        let in_shape = self.net.producer_shape(layer, 0);
        let total: usize = in_shape.iter().product();
        match layout {
            // already in canonical order
            Layout::Chw | Layout::Flat => {
                vec![Piece { col: 0, len: total, src: PieceSrc::Mem { addr: base, stride: 1 } }]
            }
            Layout::Hwc => {
                let (c_in, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                let mut pieces = Vec::with_capacity(c_in * h);
                for c in 0..c_in {
                    for y in 0..h {
                        pieces.push(Piece {
                            col: (c * h + y) * w,
                            len: w,
                            src: PieceSrc::Mem {
                                addr: Self::elem_addr(base, layout, &in_shape, c, y, 0),
                                stride: c_in as u32,
                            },
                        });
                    }
                }
                pieces
            }
        }
    }

    /// Restrict pieces to column range [lo, hi), rebasing to 0.
    fn slice_pieces(pieces: &[Piece], lo: usize, hi: usize) -> Vec<Piece> {
        let mut out = Vec::new();
        for p in pieces {
            let start = p.col.max(lo);
            let end = (p.col + p.len).min(hi);
            if start >= end {
                continue;
            }
            let skip = start - p.col;
            let src = match p.src {
                PieceSrc::Zero => PieceSrc::Zero,
                PieceSrc::Mem { addr, stride } => PieceSrc::Mem {
                    addr: addr + (skip as u32) * stride,
                    stride,
                },
            };
            out.push(Piece { col: start - lo, len: end - start, src });
        }
        out
    }

    /// Stage a slice into `stage`, or return the direct source address when
    /// the slice is already one contiguous run.
    fn stage_slice(
        &mut self,
        core: CoreId,
        stage: Addr,
        pieces: &[Piece],
        layer: usize,
    ) -> Result<Addr, CompileError> {
        if let [Piece { col: 0, len, src: PieceSrc::Mem { addr, stride } }] = pieces {
            if *stride == 1 || *len == 1 {
                return Ok(*addr);
            }
        }
        for p in pieces {
            let dst = stage + p.col as u32;
            let inst = match p.src {
                PieceSrc::Zero => {
                    let zero = self.zero_cell(core)?;
                    Instruction::Vcopy { dst, src: zero, len: p.len as u32, src_stride: 0 }
                }
                PieceSrc::Mem { addr, stride } => {
                    Instruction::Vcopy { dst, src: addr, len: p.len as u32, src_stride: stride }
                }
            };
            self.emit(core, inst, layer);
        }
        Ok(stage)
    }

    // ---- layer emission ----

    fn emit_layer(&mut self, layer: &Layer) -> Result<(), CompileError> {
        match &layer.kind {
            LayerKind::Conv2d { .. } | LayerKind::Fc { .. } => self.emit_matrix_layer(layer),
            LayerKind::Relu => self.emit_relu(layer),
            LayerKind::Add => self.emit_add(layer),
            LayerKind::Pool { .. } => self.emit_pool(layer),
            LayerKind::Concat => self.emit_concat(layer),
        }
    }

    fn emit_matrix_layer(&mut self, layer: &Layer) -> Result<(), CompileError> {
        let t = &self.tilings[layer.id];
        let site = self.placement.sites[&layer.id];
        let xc = self.cfg.core.xbar_cols;
        let k = t.matrix_cols;
        let quant = match &layer.kind {
            LayerKind::Conv2d { quant, .. } | LayerKind::Fc { quant, .. } => *quant,
            _ => unreachable!(),
        };
        let is_conv = matches!(layer.kind, LayerKind::Conv2d { .. });
        let producer = layer.producers[0];
        let src_layout = self.producer_layout(producer);

        let out_len = layer.out_elems() as u32;
        let out_buf = self.alloc.get(site, RegionKey::OutBuf(layer.id), out_len)?;

        // producer data on every core that stages input slices
        let hosting = self.placement.hosting_cores(layer.id);
        let mut bases: BTreeMap<CoreId, Addr> = BTreeMap::new();
        for &c in &hosting {
            bases.insert(c, self.ensure_available(producer, c, layer.id)?);
        }

        // cores feeding each row block, in placement order
        let mut rb_cores: Vec<Vec<CoreId>> = Vec::with_capacity(t.row_blocks);
        for rb in 0..t.row_blocks {
            let mut cores: Vec<CoreId> = (0..t.col_blocks)
                .map(|cb| self.placement.tiles[&(layer.id, rb * t.col_blocks + cb)].0)
                .collect();
            cores.sort_unstable();
            cores.dedup();
            rb_cores.push(cores);
        }

        let positions: usize = if is_conv {
            layer.out_shape[1] * layer.out_shape[2]
        } else {
            1
        };

        for pix in 0..positions {
            // full-column gather plan per hosting core
            let mut plans: BTreeMap<CoreId, Vec<Piece>> = BTreeMap::new();
            for &c in &hosting {
                let base = bases[&c];
                let pieces = if is_conv {
                    let ow = layer.out_shape[2];
                    self.conv_column_pieces(layer, base, src_layout, pix / ow, pix % ow)
                } else {
                    self.flat_column_pieces(layer, base, src_layout)
                };
                plans.insert(c, pieces);
            }

            // stage and fire one MVM per (row block, core) group
            for rb in 0..t.row_blocks {
                let xr = self.cfg.core.xbar_rows;
                let lo = rb * xr;
                let hi = lo + t.rows_used(rb);
                for &c in &rb_cores[rb] {
                    let slice = Self::slice_pieces(&plans[&c], lo, hi);
                    let stage =
                        self.alloc
                            .get(c, RegionKey::Stage(layer.id, rb), (hi - lo) as u32)?;
                    let src = self.stage_slice(c, stage, &slice, layer.id)?;
                    let psum = self.alloc.get(c, RegionKey::Psum(layer.id, rb), (4 * k) as u32)?;
                    let group = self.group_ids[&(layer.id, rb, c)];
                    self.emit(c, Instruction::Mvm { group, src, dst: psum }, layer.id);
                }
            }

            // route partials to the site, accumulate, requantize
            for cb in 0..t.col_blocks {
                let col_off = (cb * xc) as u32;
                let width = t.tile(0, cb).cols_used as u32;
                let mut contribs: Vec<Addr> = Vec::with_capacity(t.row_blocks);
                for rb in 0..t.row_blocks {
                    let idx = rb * t.col_blocks + cb;
                    let (c, _) = self.placement.tiles[&(layer.id, idx)];
                    let psum = self.alloc.get(c, RegionKey::Psum(layer.id, rb), (4 * k) as u32)?;
                    let src = psum + 4 * col_off;
                    if c == site {
                        contribs.push(src);
                    } else {
                        let land =
                            self.alloc
                                .get(site, RegionKey::Land(layer.id, idx), 4 * width)?;
                        let tag = self.next_tag(c, site);
                        self.emit(
                            c,
                            Instruction::Send { dst_core: site, src, len: 4 * width, tag },
                            layer.id,
                        );
                        self.emit(
                            site,
                            Instruction::Recv { src_core: c, dst: land, len: 4 * width, tag },
                            layer.id,
                        );
                        contribs.push(land);
                    }
                }
                let vscale_src = if contribs.len() == 1 {
                    contribs[0]
                } else {
                    let acc = self.alloc.get(site, RegionKey::Acc(layer.id), (4 * k) as u32)?;
                    let dst = acc + 4 * col_off;
                    self.emit(
                        site,
                        Instruction::Vadd {
                            width: ElemWidth::Word,
                            dst,
                            src1: contribs[0],
                            src2: contribs[1],
                            len: width,
                        },
                        layer.id,
                    );
                    for &extra in &contribs[2..] {
                        self.emit(
                            site,
                            Instruction::Vadd {
                                width: ElemWidth::Word,
                                dst,
                                src1: dst,
                                src2: extra,
                                len: width,
                            },
                            layer.id,
                        );
                    }
                    dst
                };
                let out_dst = out_buf + (pix * k) as u32 + col_off;
                self.emit(
                    site,
                    Instruction::Vscale {
                        dst: out_dst,
                        src: vscale_src,
                        len: width,
                        multiplier: quant.multiplier,
                        shift: quant.shift,
                    },
                    layer.id,
                );
            }
        }

        self.layouts
            .insert(layer.id, if is_conv { Layout::Hwc } else { Layout::Flat });
        Ok(())
    }

    fn emit_relu(&mut self, layer: &Layer) -> Result<(), CompileError> {
        let site = self.placement.sites[&layer.id];
        let src = self.ensure_available(layer.producers[0], site, layer.id)?;
        let len = layer.out_elems() as u32;
        let dst = self.alloc.get(site, RegionKey::OutBuf(layer.id), len)?;
        self.emit(site, Instruction::Vrelu { dst, src, len }, layer.id);
        self.layouts
            .insert(layer.id, self.producer_layout(layer.producers[0]));
        Ok(())
    }

    fn emit_add(&mut self, layer: &Layer) -> Result<(), CompileError> {
        let site = self.placement.sites[&layer.id];
        let a = self.ensure_available(layer.producers[0], site, layer.id)?;
        let b = self.ensure_available(layer.producers[1], site, layer.id)?;
        let la = self.producer_layout(layer.producers[0]);
        let lb = self.producer_layout(layer.producers[1]);
        let b = if la == lb {
            b
        } else {
            // rare: producers materialized in different layouts
            self.convert_layout(site, layer, layer.producers[1], b, lb, la)?
        };
        let len = layer.out_elems() as u32;
        let dst = self.alloc.get(site, RegionKey::OutBuf(layer.id), len)?;
        self.emit(
            site,
            Instruction::Vadd { width: ElemWidth::Byte, dst, src1: a, src2: b, len },
            layer.id,
        );
        self.layouts.insert(layer.id, la);
        Ok(())
    }

    fn convert_layout(
        &mut self,
        core: CoreId,
        layer: &Layer,
        producer: i64,
        base: Addr,
        from: Layout,
        to: Layout,
    ) -> Result<Addr, CompileError> {
        let shape = self.net.producer_shape(layer, 1);
        debug_assert_eq!(shape.len(), 3, "layout conversion is a 3-D affair");
        let (c_n, h, w) = (shape[0], shape[1], shape[2]);
        let len = (c_n * h * w) as u32;
        let key = RegionKey::Converted(if producer < 0 { usize::MAX } else { producer as usize });
        let buf = self.alloc.get(core, key, len)?;
        match (from, to) {
            (Layout::Chw, Layout::Hwc) => {
                for p in 0..h * w {
                    self.emit(
                        core,
                        Instruction::Vcopy {
                            dst: buf + (p * c_n) as u32,
                            src: base + p as u32,
                            len: c_n as u32,
                            src_stride: (h * w) as u32,
                        },
                        layer.id,
                    );
                }
            }
            (Layout::Hwc, Layout::Chw) => {
                for c in 0..c_n {
                    self.emit(
                        core,
                        Instruction::Vcopy {
                            dst: buf + (c * h * w) as u32,
                            src: base + c as u32,
                            len: (h * w) as u32,
                            src_stride: c_n as u32,
                        },
                        layer.id,
                    );
                }
            }
            _ => unreachable!("identical layouts never convert"),
        }
        Ok(buf)
    }

    fn emit_pool(&mut self, layer: &Layer) -> Result<(), CompileError> {
        let LayerKind::Pool { kind, kernel, stride } = &layer.kind else {
            unreachable!()
        };
        let (kind, kernel, stride) = (*kind, *kernel, *stride);
        let site = self.placement.sites[&layer.id];
        let producer = layer.producers[0];
        let base = self.ensure_available(producer, site, layer.id)?;
        let layout = self.producer_layout(producer);
        let in_shape = self.net.producer_shape(layer, 0);
        let (c_n, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
        let (oh, ow) = (layer.out_shape[1], layer.out_shape[2]);
        let out_buf = self
            .alloc
            .get(site, RegionKey::OutBuf(layer.id), layer.out_elems() as u32)?;

        if kind == PoolKind::Avg {
            if !layer_nonneg(self.net, producer) {
                return Err(CompileError::Unsupported {
                    layer: layer.id,
                    reason: "avg-pool lowering needs a provably non-negative input \
                             (feed it through relu or max-pool of relu)"
                        .into(),
                });
            }
            return self.emit_avg_pool(layer, site, base, layout, (c_n, h, w), (oh, ow), kernel, stride);
        }

        // max pool: fold VMAX.b over the window's pixel vectors
        let slot_addr = |c0: usize, iy: usize, ix: usize| -> Addr {
            Self::elem_addr(base, layout, &in_shape, c0, iy, ix)
        };
        for oy in 0..oh {
            for ox in 0..ow {
                let out_pos = out_buf + ((oy * ow + ox) * c_n) as u32;
                for dh in 0..kernel {
                    for dw in 0..kernel {
                        let (iy, ix) = (oy * stride + dh, ox * stride + dw);
                        let first = dh == 0 && dw == 0;
                        match layout {
                            Layout::Hwc => {
                                let src = slot_addr(0, iy, ix);
                                let inst = if first {
                                    Instruction::Vcopy { dst: out_pos, src, len: c_n as u32, src_stride: 1 }
                                } else {
                                    Instruction::Vmax {
                                        width: ElemWidth::Byte,
                                        dst: out_pos,
                                        src1: out_pos,
                                        src2: src,
                                        len: c_n as u32,
                                    }
                                };
                                self.emit(site, inst, layer.id);
                            }
                            Layout::Chw => {
                                let src = slot_addr(0, iy, ix);
                                let gather = Instruction::Vcopy {
                                    dst: if first {
                                        out_pos
                                    } else {
                                        self.alloc.get(site, RegionKey::PoolTmp(layer.id), c_n as u32)?
                                    },
                                    src,
                                    len: c_n as u32,
                                    src_stride: (h * w) as u32,
                                };
                                self.emit(site, gather, layer.id);
                                if !first {
                                    let tmp =
                                        self.alloc.get(site, RegionKey::PoolTmp(layer.id), c_n as u32)?;
                                    self.emit(
                                        site,
                                        Instruction::Vmax {
                                            width: ElemWidth::Byte,
                                            dst: out_pos,
                                            src1: out_pos,
                                            src2: tmp,
                                            len: c_n as u32,
                                        },
                                        layer.id,
                                    );
                                }
                            }
                            Layout::Flat => unreachable!("pool input is 3-D"),
                        }
                    }
                }
            }
        }
        self.layouts.insert(layer.id, Layout::Hwc);
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn emit_avg_pool(
        &mut self,
        layer: &Layer,
        site: CoreId,
        base: Addr,
        layout: Layout,
        (c_n, h, w): (usize, usize, usize),
        (oh, ow): (usize, usize),
        kernel: usize,
        stride: usize,
    ) -> Result<(), CompileError> {
        let n = kernel * kernel;
        let (multiplier, shift) = exact_div_scale(n, n as i64 * 127).ok_or_else(|| {
            CompileError::Unsupported {
                layer: layer.id,
                reason: format!("no exact 1/{n} requantization exists in 31 bits"),
            }
        })?;
        let in_shape = [c_n, h, w];
        let out_buf = self
            .alloc
            .get(site, RegionKey::OutBuf(layer.id), layer.out_elems() as u32)?;
        let wide = self.alloc.get(site, RegionKey::WideAcc(layer.id), (4 * c_n) as u32)?;
        let tmpw = self.alloc.get(site, RegionKey::WideTmp(layer.id), (4 * c_n) as u32)?;
        let zero = self.zero_cell(site)?;

        for oy in 0..oh {
            for ox in 0..ow {
                let out_pos = out_buf + ((oy * ow + ox) * c_n) as u32;
                self.emit(
                    site,
                    Instruction::Vcopy { dst: wide, src: zero, len: (4 * c_n) as u32, src_stride: 0 },
                    layer.id,
                );
                for dh in 0..kernel {
                    for dw in 0..kernel {
                        let (iy, ix) = (oy * stride + dh, ox * stride + dw);
                        // widen the non-negative pixel vector: zero the
                        // scratch words, then drop each byte into the low
                        // byte of its word
                        self.emit(
                            site,
                            Instruction::Vcopy {
                                dst: tmpw,
                                src: zero,
                                len: (4 * c_n) as u32,
                                src_stride: 0,
                            },
                            layer.id,
                        );
                        for c in 0..c_n {
                            self.emit(
                                site,
                                Instruction::Vcopy {
                                    dst: tmpw + (4 * c) as u32,
                                    src: Self::elem_addr(base, layout, &in_shape, c, iy, ix),
                                    len: 1,
                                    src_stride: 1,
                                },
                                layer.id,
                            );
                        }
                        self.emit(
                            site,
                            Instruction::Vadd {
                                width: ElemWidth::Word,
                                dst: wide,
                                src1: wide,
                                src2: tmpw,
                                len: c_n as u32,
                            },
                            layer.id,
                        );
                    }
                }
                self.emit(
                    site,
                    Instruction::Vscale {
                        dst: out_pos,
                        src: wide,
                        len: c_n as u32,
                        multiplier,
                        shift,
                    },
                    layer.id,
                );
            }
        }
        self.layouts.insert(layer.id, Layout::Hwc);
        Ok(())
    }

    fn emit_concat(&mut self, layer: &Layer) -> Result<(), CompileError> {
        let site = self.placement.sites[&layer.id];
        let out_buf = self
            .alloc
            .get(site, RegionKey::OutBuf(layer.id), layer.out_elems() as u32)?;

        if layer.out_shape.len() == 1 {
            let mut off = 0u32;
            for slot in 0..layer.producers.len() {
                let p = layer.producers[slot];
                let src = self.ensure_available(p, site, layer.id)?;
                let len = self.producer_len(p) as u32;
                self.emit(
                    site,
                    Instruction::Vcopy { dst: out_buf + off, src, len, src_stride: 1 },
                    layer.id,
                );
                off += len;
            }
            self.layouts.insert(layer.id, Layout::Flat);
            return Ok(());
        }

        let (c_out, h, w) = (layer.out_shape[0], layer.out_shape[1], layer.out_shape[2]);
        let mut c_off = 0usize;
        for slot in 0..layer.producers.len() {
            let p = layer.producers[slot];
            let src = self.ensure_available(p, site, layer.id)?;
            let layout = self.producer_layout(p);
            let shape = self.net.producer_shape(layer, slot);
            let c_p = shape[0];
            for pix in 0..h * w {
                let dst = out_buf + (pix * c_out + c_off) as u32;
                let inst = match layout {
                    Layout::Hwc => Instruction::Vcopy {
                        dst,
                        src: src + (pix * c_p) as u32,
                        len: c_p as u32,
                        src_stride: 1,
                    },
                    Layout::Chw => Instruction::Vcopy {
                        dst,
                        src: src + pix as u32,
                        len: c_p as u32,
                        src_stride: (h * w) as u32,
                    },
                    Layout::Flat => unreachable!("3-D concat producers"),
                };
                self.emit(site, inst, layer.id);
            }
            c_off += c_p;
        }
        self.layouts.insert(layer.id, Layout::Hwc);
        Ok(())
    }

    /// Store the terminal layer's output (canonical CHW) right after the
    /// network input in global memory.
    fn emit_terminal_store(&mut self) -> Result<(u64, usize), CompileError> {
        let terminal = self.net.terminal_layer().clone();
        let site = self.placement.sites[&terminal.id];
        let len = terminal.out_elems() as u32;
        let out_buf = self.alloc.get(site, RegionKey::OutBuf(terminal.id), len)?;
        let layout = self.layouts[&terminal.id];
        let src = if layout == Layout::Hwc && terminal.out_shape.len() == 3 {
            let (c_n, h, w) = (
                terminal.out_shape[0],
                terminal.out_shape[1],
                terminal.out_shape[2],
            );
            let stage = self.alloc.get(site, RegionKey::StoreStage(terminal.id), len)?;
            for c in 0..c_n {
                self.emit(
                    site,
                    Instruction::Vcopy {
                        dst: stage + (c * h * w) as u32,
                        src: out_buf + c as u32,
                        len: (h * w) as u32,
                        src_stride: c_n as u32,
                    },
                    terminal.id,
                );
            }
            stage
        } else {
            out_buf
        };
        let out_gaddr = self.net.input_elems() as u64;
        self.emit(
            site,
            Instruction::Store { gaddr: out_gaddr, src, len },
            terminal.id,
        );
        Ok((out_gaddr, len as usize))
    }
}

/// Find (multiplier, shift) such that VSCALE's requantization computes
/// `round_half_away(x / n)` exactly for all `x` in `[0, max]`, by brute
/// verification over the whole input range.
fn exact_div_scale(n: usize, max: i64) -> Option<(i32, u32)> {
    for shift in 0..=31u32 {
        let m = ((1i64 << shift) + n as i64 / 2) / n as i64;
        if m <= 0 || m > i32::MAX as i64 {
            continue;
        }
        for cand in [m, m + 1] {
            let q = QuantParams { multiplier: cand as i32, shift };
            let ok = (0..=max).all(|x| {
                requantize(x as i32, q) as i64 == div_round_half_away(x, n as i64)
            });
            if ok {
                return Some((cand as i32, shift));
            }
        }
    }
    None
}
