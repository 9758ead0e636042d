//! The four-class instruction set, the program container with per-core group
//! tables and crossbar weight images, and the textual assembly form.

mod asm;
mod validate;

pub use asm::{emit_asm, parse_asm, AsmError, AsmModule, DirSource, MapSource, WeightSource};
pub use validate::{validate_program, ProgramViolation};

use std::collections::BTreeMap;

pub type CoreId = usize;
/// Byte address into a core's local memory.
pub type Addr = u32;
/// Byte address into global memory.
pub type GAddr = u64;

/// Element width suffix for VADD/VMAX: `.b` = int8, `.w` = int32.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemWidth {
    Byte,
    Word,
}

impl ElemWidth {
    pub fn bytes(self) -> u32 {
        match self {
            ElemWidth::Byte => 1,
            ElemWidth::Word => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum InstrClass {
    Matrix,
    Vector,
    Transfer,
    Scalar,
}

impl InstrClass {
    pub fn name(self) -> &'static str {
        match self {
            InstrClass::Matrix => "matrix",
            InstrClass::Vector => "vector",
            InstrClass::Transfer => "transfer",
            InstrClass::Scalar => "scalar",
        }
    }
}

/// One instruction. Addresses and lengths are byte-granular immediates;
/// registers appear only in scalar instructions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instruction {
    // matrix
    Mvm { group: u32, src: Addr, dst: Addr },
    // vector
    Vadd { width: ElemWidth, dst: Addr, src1: Addr, src2: Addr, len: u32 },
    Vmax { width: ElemWidth, dst: Addr, src1: Addr, src2: Addr, len: u32 },
    Vrelu { dst: Addr, src: Addr, len: u32 },
    /// `mem[dst + i] = mem[src + i * src_stride]` for i in 0..len.
    /// A stride of 0 broadcasts one byte (used for zero fills).
    Vcopy { dst: Addr, src: Addr, len: u32, src_stride: u32 },
    /// Requantize `len` int32 accumulators at `src` into int8 at `dst`.
    Vscale { dst: Addr, src: Addr, len: u32, multiplier: i32, shift: u32 },
    // transfer
    Send { dst_core: CoreId, src: Addr, len: u32, tag: u32 },
    Recv { src_core: CoreId, dst: Addr, len: u32, tag: u32 },
    Load { dst: Addr, gaddr: GAddr, len: u32 },
    Store { gaddr: GAddr, src: Addr, len: u32 },
    // scalar
    Li { reg: u8, imm: i64 },
    Sadd { rd: u8, ra: u8, rb: u8 },
    Ssub { rd: u8, ra: u8, rb: u8 },
    Smul { rd: u8, ra: u8, rb: u8 },
    Bne { ra: u8, rb: u8, target: usize },
    Jmp { target: usize },
    Nop,
    Halt,
}

impl Instruction {
    /// Every instruction belongs to exactly one class.
    pub fn class(&self) -> InstrClass {
        match self {
            Instruction::Mvm { .. } => InstrClass::Matrix,
            Instruction::Vadd { .. }
            | Instruction::Vmax { .. }
            | Instruction::Vrelu { .. }
            | Instruction::Vcopy { .. }
            | Instruction::Vscale { .. } => InstrClass::Vector,
            Instruction::Send { .. }
            | Instruction::Recv { .. }
            | Instruction::Load { .. }
            | Instruction::Store { .. } => InstrClass::Transfer,
            Instruction::Li { .. }
            | Instruction::Sadd { .. }
            | Instruction::Ssub { .. }
            | Instruction::Smul { .. }
            | Instruction::Bne { .. }
            | Instruction::Jmp { .. }
            | Instruction::Nop
            | Instruction::Halt => InstrClass::Scalar,
        }
    }

    pub fn mnemonic(&self) -> &'static str {
        match self {
            Instruction::Mvm { .. } => "MVM",
            Instruction::Vadd { width: ElemWidth::Byte, .. } => "VADD.b",
            Instruction::Vadd { width: ElemWidth::Word, .. } => "VADD.w",
            Instruction::Vmax { width: ElemWidth::Byte, .. } => "VMAX.b",
            Instruction::Vmax { width: ElemWidth::Word, .. } => "VMAX.w",
            Instruction::Vrelu { .. } => "VRELU",
            Instruction::Vcopy { .. } => "VCOPY",
            Instruction::Vscale { .. } => "VSCALE",
            Instruction::Send { .. } => "SEND",
            Instruction::Recv { .. } => "RECV",
            Instruction::Load { .. } => "LOAD",
            Instruction::Store { .. } => "STORE",
            Instruction::Li { .. } => "LI",
            Instruction::Sadd { .. } => "SADD",
            Instruction::Ssub { .. } => "SSUB",
            Instruction::Smul { .. } => "SMUL",
            Instruction::Bne { .. } => "BNE",
            Instruction::Jmp { .. } => "JMP",
            Instruction::Nop => "NOP",
            Instruction::Halt => "HALT",
        }
    }
}

/// One member crossbar of a group: which crossbar, where its output columns
/// land relative to the MVM destination, and how many columns it produces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupMember {
    pub xbar: usize,
    /// Byte offset added to the MVM dst address (partial sums are 4 B each).
    pub out_offset: u32,
    /// Output columns produced by this member (elements).
    pub out_len: u32,
}

/// Crossbars of one matrix sharing the same input slice; activated in
/// parallel by a single MVM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupEntry {
    pub group_id: u32,
    /// Length of the shared input slice (elements).
    pub input_len: u32,
    pub members: Vec<GroupMember>,
}

/// An int8 weight image covering one crossbar, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightImage {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i8>,
}

impl WeightImage {
    pub fn zeroed(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn at(&self, r: usize, c: usize) -> i8 {
        self.data[r * self.cols + c]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoreProgram {
    pub instructions: Vec<Instruction>,
    /// Per-instruction layer annotation, parallel to `instructions`.
    pub layers: Vec<Option<u32>>,
    pub groups: Vec<GroupEntry>,
    pub weights: BTreeMap<usize, WeightImage>,
}

impl CoreProgram {
    pub fn group(&self, id: u32) -> Option<&GroupEntry> {
        self.groups.iter().find(|g| g.group_id == id)
    }

    pub fn push(&mut self, inst: Instruction, layer: Option<u32>) {
        self.instructions.push(inst);
        self.layers.push(layer);
    }
}

/// Per-core instruction streams plus group tables and weight images.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Program {
    pub cores: BTreeMap<CoreId, CoreProgram>,
}

impl Program {
    pub fn core_mut(&mut self, id: CoreId) -> &mut CoreProgram {
        self.cores.entry(id).or_default()
    }

    pub fn instruction_count(&self) -> usize {
        self.cores.values().map(|c| c.instructions.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_partition_is_exhaustive() {
        let samples = [
            Instruction::Mvm { group: 0, src: 0, dst: 0 },
            Instruction::Vadd { width: ElemWidth::Word, dst: 0, src1: 0, src2: 0, len: 1 },
            Instruction::Vmax { width: ElemWidth::Byte, dst: 0, src1: 0, src2: 0, len: 1 },
            Instruction::Vrelu { dst: 0, src: 0, len: 1 },
            Instruction::Vcopy { dst: 0, src: 0, len: 1, src_stride: 1 },
            Instruction::Vscale { dst: 0, src: 0, len: 1, multiplier: 1, shift: 0 },
            Instruction::Send { dst_core: 1, src: 0, len: 1, tag: 0 },
            Instruction::Recv { src_core: 1, dst: 0, len: 1, tag: 0 },
            Instruction::Load { dst: 0, gaddr: 0, len: 1 },
            Instruction::Store { gaddr: 0, src: 0, len: 1 },
            Instruction::Li { reg: 0, imm: 0 },
            Instruction::Sadd { rd: 0, ra: 0, rb: 0 },
            Instruction::Ssub { rd: 0, ra: 0, rb: 0 },
            Instruction::Smul { rd: 0, ra: 0, rb: 0 },
            Instruction::Bne { ra: 0, rb: 0, target: 0 },
            Instruction::Jmp { target: 0 },
            Instruction::Nop,
            Instruction::Halt,
        ];
        use InstrClass::*;
        let expect = [
            Matrix, Vector, Vector, Vector, Vector, Vector, Transfer, Transfer, Transfer,
            Transfer, Scalar, Scalar, Scalar, Scalar, Scalar, Scalar, Scalar, Scalar,
        ];
        for (inst, cls) in samples.iter().zip(expect) {
            assert_eq!(inst.class(), cls, "{}", inst.mnemonic());
        }
    }
}
