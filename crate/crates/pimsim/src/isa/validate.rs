//! Static program validation: address-space legality, group well-formedness,
//! register bounds, and pairwise SEND/RECV tag matching.

use super::{CoreId, Instruction, Program};
use crate::config::ArchConfig;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramViolation {
    pub core: Option<CoreId>,
    pub inst: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ProgramViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.core, self.inst) {
            (Some(c), Some(i)) => write!(f, "core {c} inst {i}: {}", self.message),
            (Some(c), None) => write!(f, "core {c}: {}", self.message),
            _ => write!(f, "{}", self.message),
        }
    }
}

/// Returns one entry per violated invariant; empty iff the program is legal
/// for `cfg`. Accepted programs execute without address faults and without
/// protocol-level transfer mismatches.
pub fn validate_program(program: &Program, cfg: &ArchConfig) -> Vec<ProgramViolation> {
    let mut out = Vec::new();
    let cores = cfg.cores();
    let mem = cfg.core.local_mem_bytes as u64;

    // (src, dst) -> ordered (tag, len) per direction, in emission order
    let mut sends: BTreeMap<(CoreId, CoreId), Vec<(u32, u32)>> = BTreeMap::new();
    let mut recvs: BTreeMap<(CoreId, CoreId), Vec<(u32, u32)>> = BTreeMap::new();

    for (&core, cp) in &program.cores {
        let mut push = |inst: Option<usize>, message: String| {
            out.push(ProgramViolation {
                core: Some(core),
                inst,
                message,
            });
        };

        if core >= cores {
            push(None, format!("core id {core} outside the {cores}-core mesh"));
        }

        // group table
        for g in &cp.groups {
            if g.members.is_empty() {
                push(None, format!("group {} has no members", g.group_id));
                continue;
            }
            if g.input_len == 0 || g.input_len as usize > cfg.core.xbar_rows {
                push(
                    None,
                    format!(
                        "group {}: input_len {} outside [1, xbar_rows={}]",
                        g.group_id, g.input_len, cfg.core.xbar_rows
                    ),
                );
            }
            let mut seen_xbar = std::collections::BTreeSet::new();
            let mut ranges: Vec<(u64, u64)> = Vec::new();
            for m in &g.members {
                if m.xbar >= cfg.core.xbars_per_core {
                    push(
                        None,
                        format!("group {}: xbar {} >= xbars_per_core", g.group_id, m.xbar),
                    );
                }
                if !seen_xbar.insert(m.xbar) {
                    push(None, format!("group {}: duplicate member xbar {}", g.group_id, m.xbar));
                }
                if m.out_len == 0 || m.out_len as usize > cfg.core.xbar_cols {
                    push(
                        None,
                        format!(
                            "group {}: out_len {} outside [1, xbar_cols={}]",
                            g.group_id, m.out_len, cfg.core.xbar_cols
                        ),
                    );
                }
                match cp.weights.get(&m.xbar) {
                    None => push(
                        None,
                        format!("group {}: xbar {} has no weight image", g.group_id, m.xbar),
                    ),
                    Some(img) => {
                        if img.rows != cfg.core.xbar_rows || img.cols != cfg.core.xbar_cols {
                            push(
                                None,
                                format!(
                                    "xbar {}: weight image is {}x{}, config says {}x{}",
                                    m.xbar, img.rows, img.cols, cfg.core.xbar_rows, cfg.core.xbar_cols
                                ),
                            );
                        }
                    }
                }
                ranges.push((m.out_offset as u64, m.out_offset as u64 + 4 * m.out_len as u64));
            }
            ranges.sort();
            for pair in ranges.windows(2) {
                if pair[0].1 > pair[1].0 {
                    push(
                        None,
                        format!("group {}: member output ranges overlap", g.group_id),
                    );
                }
            }
        }

        for (&xbar, _) in &cp.weights {
            if xbar >= cfg.core.xbars_per_core {
                push(None, format!("weight image for xbar {xbar} >= xbars_per_core"));
            }
        }

        if cp.instructions.last() != Some(&Instruction::Halt) {
            push(None, "instruction list does not end with HALT".into());
        }

        let nregs = cfg.core.num_scalar_regs as u8;
        let code_len = cp.instructions.len();
        for (idx, inst) in cp.instructions.iter().enumerate() {
            let mut msgs: Vec<String> = Vec::new();
            let range = |msgs: &mut Vec<String>, what: &str, addr: u64, bytes: u64| {
                if addr + bytes > mem {
                    msgs.push(format!(
                        "{what} [{addr:#x}, {:#x}) outside local memory of {mem} bytes",
                        addr + bytes
                    ));
                }
            };
            let len_ge_1 = |msgs: &mut Vec<String>, len: u32| {
                if len == 0 {
                    msgs.push("len must be >= 1".into());
                }
            };
            let reg = |msgs: &mut Vec<String>, r: u8| {
                if r >= nregs {
                    msgs.push(format!("register r{r} >= num_scalar_regs ({nregs})"));
                }
            };

            match inst {
                Instruction::Mvm { group, src, dst } => match cp.group(*group) {
                    None => msgs.push(format!("MVM names unknown group {group}")),
                    Some(g) => {
                        range(&mut msgs, "MVM input", *src as u64, g.input_len as u64);
                        for m in &g.members {
                            range(
                                &mut msgs,
                                "MVM output",
                                *dst as u64 + m.out_offset as u64,
                                4 * m.out_len as u64,
                            );
                        }
                    }
                },
                Instruction::Vadd { width, dst, src1, src2, len }
                | Instruction::Vmax { width, dst, src1, src2, len } => {
                    len_ge_1(&mut msgs, *len);
                    let b = width.bytes() as u64 * *len as u64;
                    range(&mut msgs, "dst", *dst as u64, b);
                    range(&mut msgs, "src1", *src1 as u64, b);
                    range(&mut msgs, "src2", *src2 as u64, b);
                }
                Instruction::Vrelu { dst, src, len } => {
                    len_ge_1(&mut msgs, *len);
                    range(&mut msgs, "dst", *dst as u64, *len as u64);
                    range(&mut msgs, "src", *src as u64, *len as u64);
                }
                Instruction::Vcopy { dst, src, len, src_stride } => {
                    len_ge_1(&mut msgs, *len);
                    range(&mut msgs, "dst", *dst as u64, *len as u64);
                    if *len > 0 {
                        let span = (*len as u64 - 1) * *src_stride as u64 + 1;
                        range(&mut msgs, "src", *src as u64, span);
                    }
                }
                Instruction::Vscale { dst, src, len, multiplier, shift } => {
                    len_ge_1(&mut msgs, *len);
                    range(&mut msgs, "dst", *dst as u64, *len as u64);
                    range(&mut msgs, "src", *src as u64, 4 * *len as u64);
                    if *multiplier < 0 {
                        msgs.push("VSCALE multiplier must be >= 0".into());
                    }
                    if *shift > 31 {
                        msgs.push(format!("VSCALE shift {shift} outside [0, 31]"));
                    }
                }
                Instruction::Send { dst_core, src, len, tag } => {
                    len_ge_1(&mut msgs, *len);
                    range(&mut msgs, "src", *src as u64, *len as u64);
                    if *dst_core >= cores {
                        msgs.push(format!("dst core {dst_core} outside mesh"));
                    } else if *dst_core == core {
                        msgs.push("SEND to self".into());
                    } else {
                        sends.entry((core, *dst_core)).or_default().push((*tag, *len));
                    }
                }
                Instruction::Recv { src_core, dst, len, tag } => {
                    len_ge_1(&mut msgs, *len);
                    range(&mut msgs, "dst", *dst as u64, *len as u64);
                    if *src_core >= cores {
                        msgs.push(format!("src core {src_core} outside mesh"));
                    } else if *src_core == core {
                        msgs.push("RECV from self".into());
                    } else {
                        recvs.entry((*src_core, core)).or_default().push((*tag, *len));
                    }
                }
                Instruction::Load { dst, len, .. } => {
                    len_ge_1(&mut msgs, *len);
                    range(&mut msgs, "dst", *dst as u64, *len as u64);
                }
                Instruction::Store { src, len, .. } => {
                    len_ge_1(&mut msgs, *len);
                    range(&mut msgs, "src", *src as u64, *len as u64);
                }
                Instruction::Li { reg: r, .. } => reg(&mut msgs, *r),
                Instruction::Sadd { rd, ra, rb }
                | Instruction::Ssub { rd, ra, rb }
                | Instruction::Smul { rd, ra, rb } => {
                    reg(&mut msgs, *rd);
                    reg(&mut msgs, *ra);
                    reg(&mut msgs, *rb);
                }
                Instruction::Bne { ra, rb, target } => {
                    reg(&mut msgs, *ra);
                    reg(&mut msgs, *rb);
                    if *target >= code_len {
                        msgs.push(format!("branch target {target} outside program"));
                    }
                }
                Instruction::Jmp { target } => {
                    if *target >= code_len {
                        msgs.push(format!("jump target {target} outside program"));
                    }
                }
                Instruction::Nop | Instruction::Halt => {}
            }

            for message in msgs {
                out.push(ProgramViolation {
                    core: Some(core),
                    inst: Some(idx),
                    message,
                });
            }
        }
    }

    // Transfer matching: per ordered pair, the SEND sequence must equal the
    // RECV sequence tag-for-tag (this also pins emission order), tags must be
    // unique, and lengths must agree.
    let pairs: std::collections::BTreeSet<(CoreId, CoreId)> =
        sends.keys().chain(recvs.keys()).copied().collect();
    for pair in pairs {
        let (src, dst) = pair;
        let s = sends.get(&pair).cloned().unwrap_or_default();
        let r = recvs.get(&pair).cloned().unwrap_or_default();
        let mut seen = std::collections::BTreeSet::new();
        for &(tag, _) in &s {
            if !seen.insert(tag) {
                out.push(ProgramViolation {
                    core: Some(src),
                    inst: None,
                    message: format!("duplicate SEND tag {tag} on pair {src}->{dst}"),
                });
            }
        }
        if s != r {
            let s_tags: Vec<u32> = s.iter().map(|x| x.0).collect();
            let r_tags: Vec<u32> = r.iter().map(|x| x.0).collect();
            out.push(ProgramViolation {
                core: None,
                inst: None,
                message: format!(
                    "unmatched transfers on pair {src}->{dst}: SEND tags {s_tags:?} vs RECV tags {r_tags:?}"
                ),
            });
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{ElemWidth, WeightImage};

    fn cfg() -> ArchConfig {
        let mut c = ArchConfig::default();
        c.core.local_mem_bytes = 256;
        c.core.xbar_rows = 4;
        c.core.xbar_cols = 4;
        c
    }

    fn halted(insts: Vec<Instruction>) -> Program {
        let mut p = Program::default();
        let cp = p.core_mut(0);
        for i in insts {
            cp.push(i, None);
        }
        cp.push(Instruction::Halt, None);
        p
    }

    #[test]
    fn out_of_range_vadd() {
        let p = halted(vec![Instruction::Vadd {
            width: ElemWidth::Byte,
            dst: 256,
            src1: 0,
            src2: 0,
            len: 1,
        }]);
        let v = validate_program(&p, &cfg());
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("outside local memory"), "{}", v[0]);
    }

    #[test]
    fn unmatched_send() {
        let mut p = Program::default();
        p.core_mut(0).push(
            Instruction::Send { dst_core: 1, src: 0, len: 4, tag: 7 },
            None,
        );
        p.core_mut(0).push(Instruction::Halt, None);
        p.core_mut(1).push(Instruction::Halt, None);
        let v = validate_program(&p, &cfg());
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("unmatched transfers"), "{}", v[0]);
    }

    #[test]
    fn transfer_order_must_match() {
        let mut p = Program::default();
        {
            let c0 = p.core_mut(0);
            c0.push(Instruction::Send { dst_core: 1, src: 0, len: 4, tag: 0 }, None);
            c0.push(Instruction::Send { dst_core: 1, src: 4, len: 4, tag: 1 }, None);
            c0.push(Instruction::Halt, None);
        }
        {
            let c1 = p.core_mut(1);
            c1.push(Instruction::Recv { src_core: 0, dst: 0, len: 4, tag: 1 }, None);
            c1.push(Instruction::Recv { src_core: 0, dst: 4, len: 4, tag: 0 }, None);
            c1.push(Instruction::Halt, None);
        }
        let v = validate_program(&p, &cfg());
        assert_eq!(v.len(), 1, "{v:?}");
    }

    #[test]
    fn mvm_needs_group_and_weights() {
        let p = halted(vec![Instruction::Mvm { group: 0, src: 0, dst: 16 }]);
        let v = validate_program(&p, &cfg());
        assert!(v.iter().any(|x| x.message.contains("unknown group")), "{v:?}");

        let mut p2 = halted(vec![Instruction::Mvm { group: 0, src: 0, dst: 16 }]);
        let cp = p2.core_mut(0);
        cp.groups.push(crate::isa::GroupEntry {
            group_id: 0,
            input_len: 4,
            members: vec![crate::isa::GroupMember { xbar: 0, out_offset: 0, out_len: 4 }],
        });
        let v2 = validate_program(&p2, &cfg());
        assert!(v2.iter().any(|x| x.message.contains("no weight image")), "{v2:?}");

        p2.core_mut(0).weights.insert(0, WeightImage::zeroed(4, 4));
        assert!(validate_program(&p2, &cfg()).is_empty());
    }

    #[test]
    fn halt_required() {
        let mut p = Program::default();
        p.core_mut(0).push(Instruction::Nop, None);
        let v = validate_program(&p, &cfg());
        assert!(v.iter().any(|x| x.message.contains("HALT")));
    }
}
