//! Textual assembly: line-oriented, `#` comments, one instruction or
//! directive per line.
//!
//! ```text
//! .core 0
//! .group 0 in=32 xbar=0 off=0 out=32 xbar=1 off=128 out=16
//! .weights xbar=0 file=w_c0_x0.bin
//! .weights xbar=1 seed=7
//! .layer 0
//! LOAD 0x0, 0x0, 96
//! MVM g0, 0x0, 0x100
//! loop: SADD r1, r1, r2
//! BNE r1, r3, loop
//! HALT
//! ```
//!
//! Weight files are raw little-endian int8, row-major, exactly
//! `xbar_rows * xbar_cols` bytes. `.layer N` tags the following instructions
//! with the producing network layer (`.layer none` clears the tag).

use super::{
    CoreId, CoreProgram, ElemWidth, GroupEntry, GroupMember, Instruction, Program, WeightImage,
};
use crate::config::ArchConfig;
use crate::nn::generate_weights;
use std::collections::BTreeMap;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("asm line {line}: {msg}")]
pub struct AsmError {
    pub line: usize,
    pub msg: String,
}

fn err(line: usize, msg: impl Into<String>) -> AsmError {
    AsmError {
        line,
        msg: msg.into(),
    }
}

/// Resolves `file=` references in `.weights` directives.
pub trait WeightSource {
    fn load(&self, name: &str) -> Result<Vec<u8>, String>;
}

/// In-memory source, used for round trips and tests.
#[derive(Debug, Default, Clone)]
pub struct MapSource(pub BTreeMap<String, Vec<u8>>);

impl WeightSource for MapSource {
    fn load(&self, name: &str) -> Result<Vec<u8>, String> {
        self.0
            .get(name)
            .cloned()
            .ok_or_else(|| format!("unknown weight blob `{name}`"))
    }
}

/// Loads weight files relative to a directory (usually the .asm location).
#[derive(Debug, Clone)]
pub struct DirSource(pub PathBuf);

impl WeightSource for DirSource {
    fn load(&self, name: &str) -> Result<Vec<u8>, String> {
        std::fs::read(self.0.join(name)).map_err(|e| format!("{name}: {e}"))
    }
}

/// Emission result: the assembly text plus the weight blobs it references.
#[derive(Debug, Clone, Default)]
pub struct AsmModule {
    pub text: String,
    pub weight_files: BTreeMap<String, Vec<u8>>,
}

impl AsmModule {
    pub fn source(&self) -> MapSource {
        MapSource(self.weight_files.clone())
    }
}

pub fn parse_asm(
    text: &str,
    cfg: &ArchConfig,
    source: &dyn WeightSource,
) -> Result<Program, AsmError> {
    Parser {
        cfg,
        source,
        program: Program::default(),
        core: None,
        labels: BTreeMap::new(),
        fixups: Vec::new(),
        layer: None,
    }
    .run(text)
}

struct Parser<'a> {
    cfg: &'a ArchConfig,
    source: &'a dyn WeightSource,
    program: Program,
    core: Option<CoreId>,
    labels: BTreeMap<String, usize>,
    fixups: Vec<(usize, String, usize)>, // (instruction index, label, line)
    layer: Option<u32>,
}

impl<'a> Parser<'a> {
    fn run(mut self, text: &str) -> Result<Program, AsmError> {
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('.') {
                self.directive(rest, line_no)?;
            } else {
                self.instruction(line, line_no)?;
            }
        }
        self.finish_core(0)?;
        Ok(self.program)
    }

    fn finish_core(&mut self, line: usize) -> Result<(), AsmError> {
        if let Some(core) = self.core {
            let labels = std::mem::take(&mut self.labels);
            let fixups = std::mem::take(&mut self.fixups);
            let cp = self.program.core_mut(core);
            for (idx, label, at_line) in fixups {
                let target = *labels
                    .get(&label)
                    .ok_or_else(|| err(at_line, format!("undefined label `{label}`")))?;
                match &mut cp.instructions[idx] {
                    Instruction::Bne { target: t, .. } | Instruction::Jmp { target: t } => {
                        *t = target;
                    }
                    _ => unreachable!(),
                }
            }
        }
        let _ = line;
        self.layer = None;
        Ok(())
    }

    fn cur_core(&mut self, line: usize) -> Result<&mut CoreProgram, AsmError> {
        let core = self
            .core
            .ok_or_else(|| err(line, "expected `.core <id>` before this line"))?;
        Ok(self.program.core_mut(core))
    }

    fn directive(&mut self, rest: &str, line: usize) -> Result<(), AsmError> {
        let mut toks = rest.split_whitespace();
        let head = toks.next().unwrap_or("");
        let args: Vec<&str> = toks.collect();
        match head {
            "core" => {
                let id = parse_uint(args.first().copied().unwrap_or(""), line, "core id")? as CoreId;
                self.finish_core(line)?;
                if self.program.cores.contains_key(&id) {
                    return Err(err(line, format!("duplicate .core {id} block")));
                }
                self.core = Some(id);
                self.program.core_mut(id);
            }
            "group" => {
                if args.len() < 2 {
                    return Err(err(line, "usage: .group <id> in=<len> (xbar=<x> off=<o> out=<n>)+"));
                }
                let group_id = parse_uint(args[0], line, "group id")? as u32;
                let input_len = parse_kv(args[1], "in", line)? as u32;
                if (args.len() - 2) % 3 != 0 || args.len() == 2 {
                    return Err(err(line, "group members must be xbar=/off=/out= triples"));
                }
                let mut members = Vec::new();
                for chunk in args[2..].chunks(3) {
                    members.push(GroupMember {
                        xbar: parse_kv(chunk[0], "xbar", line)? as usize,
                        out_offset: parse_kv(chunk[1], "off", line)? as u32,
                        out_len: parse_kv(chunk[2], "out", line)? as u32,
                    });
                }
                let cp = self.cur_core(line)?;
                if cp.groups.iter().any(|g| g.group_id == group_id) {
                    return Err(err(line, format!("duplicate group id {group_id}")));
                }
                cp.groups.push(GroupEntry {
                    group_id,
                    input_len,
                    members,
                });
            }
            "weights" => {
                if args.len() != 2 {
                    return Err(err(line, "usage: .weights xbar=<x> file=<name>|seed=<n>"));
                }
                let xbar = parse_kv(args[0], "xbar", line)? as usize;
                let (rows, cols) = (self.cfg.core.xbar_rows, self.cfg.core.xbar_cols);
                let data: Vec<i8> = if let Some(name) = args[1].strip_prefix("file=") {
                    let name = name.trim_matches('"');
                    let bytes = self
                        .source
                        .load(name)
                        .map_err(|e| err(line, format!("weight file: {e}")))?;
                    if bytes.len() != rows * cols {
                        return Err(err(
                            line,
                            format!(
                                "weight file `{name}` holds {} bytes, expected {rows}x{cols} = {}",
                                bytes.len(),
                                rows * cols
                            ),
                        ));
                    }
                    bytes.iter().map(|&b| b as i8).collect()
                } else if let Some(seed) = args[1].strip_prefix("seed=") {
                    let seed = parse_uint(seed, line, "seed")?;
                    generate_weights(seed, rows, cols)
                } else {
                    return Err(err(line, "expected file= or seed="));
                };
                let cp = self.cur_core(line)?;
                if cp.weights.contains_key(&xbar) {
                    return Err(err(line, format!("duplicate weight image for xbar {xbar}")));
                }
                cp.weights.insert(xbar, WeightImage { rows, cols, data });
            }
            "layer" => {
                let arg = args.first().copied().unwrap_or("");
                self.layer = if arg == "none" {
                    None
                } else {
                    Some(parse_uint(arg, line, "layer id")? as u32)
                };
            }
            other => return Err(err(line, format!("unknown directive `.{other}`"))),
        }
        Ok(())
    }

    fn instruction(&mut self, line_text: &str, line: usize) -> Result<(), AsmError> {
        let mut text = line_text;
        // Optional `label:` prefix.
        if let Some(colon) = text.find(':') {
            let (label, rest) = text.split_at(colon);
            let label = label.trim();
            if is_ident(label) {
                let idx = self.cur_core(line)?.instructions.len();
                if self.labels.insert(label.to_string(), idx).is_some() {
                    return Err(err(line, format!("duplicate label `{label}`")));
                }
                text = rest[1..].trim();
                if text.is_empty() {
                    return Err(err(line, "label must precede an instruction"));
                }
            }
        }

        let (mnemonic, ops_text) = match text.find(char::is_whitespace) {
            Some(pos) => (&text[..pos], text[pos..].trim()),
            None => (text, ""),
        };
        let ops: Vec<&str> = if ops_text.is_empty() {
            Vec::new()
        } else {
            ops_text.split(',').map(str::trim).collect()
        };

        let layer = self.layer;
        let next_idx = self.cur_core(line)?.instructions.len();
        let mut fixup: Option<String> = None;
        let inst = decode(
            &mnemonic.to_ascii_uppercase(),
            &ops,
            line,
            &self.labels,
            &mut fixup,
        )?;
        if let Some(label) = fixup {
            self.fixups.push((next_idx, label, line));
        }
        self.cur_core(line)?.push(inst, layer);
        Ok(())
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars().next().unwrap().is_ascii_alphabetic()
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_int(tok: &str, line: usize, what: &str) -> Result<i64, AsmError> {
    let (neg, body) = match tok.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, tok),
    };
    let parsed = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16)
    } else {
        body.parse::<i64>()
    };
    match parsed {
        Ok(v) => Ok(if neg { -v } else { v }),
        Err(_) => Err(err(line, format!("bad {what} `{tok}`"))),
    }
}

fn parse_uint(tok: &str, line: usize, what: &str) -> Result<u64, AsmError> {
    let v = parse_int(tok, line, what)?;
    if v < 0 {
        return Err(err(line, format!("{what} must be non-negative, got {v}")));
    }
    Ok(v as u64)
}

fn parse_kv(tok: &str, key: &str, line: usize) -> Result<u64, AsmError> {
    tok.strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| err(line, format!("expected {key}=<int>, got `{tok}`")))
        .and_then(|v| parse_uint(v, line, key))
}

struct Ops<'a> {
    ops: &'a [&'a str],
    at: usize,
    line: usize,
    mnemonic: &'a str,
}

impl<'a> Ops<'a> {
    fn next(&mut self) -> Result<&'a str, AsmError> {
        let tok = self.ops.get(self.at).copied().ok_or_else(|| {
            err(
                self.line,
                format!("{}: missing operand {}", self.mnemonic, self.at + 1),
            )
        })?;
        self.at += 1;
        Ok(tok)
    }

    fn addr(&mut self) -> Result<u32, AsmError> {
        Ok(parse_uint(self.next()?, self.line, "address")? as u32)
    }

    fn uint(&mut self, what: &str) -> Result<u32, AsmError> {
        Ok(parse_uint(self.next()?, self.line, what)? as u32)
    }

    fn imm(&mut self) -> Result<i64, AsmError> {
        parse_int(self.next()?, self.line, "immediate")
    }

    fn reg(&mut self) -> Result<u8, AsmError> {
        let tok = self.next()?;
        let n = tok
            .strip_prefix('r')
            .or_else(|| tok.strip_prefix('R'))
            .and_then(|s| s.parse::<u8>().ok())
            .ok_or_else(|| err(self.line, format!("expected register r<N>, got `{tok}`")))?;
        Ok(n)
    }

    fn group(&mut self) -> Result<u32, AsmError> {
        let tok = self.next()?;
        tok.strip_prefix('g')
            .or_else(|| tok.strip_prefix('G'))
            .and_then(|s| s.parse::<u32>().ok())
            .ok_or_else(|| err(self.line, format!("expected group g<N>, got `{tok}`")))
    }

    fn done(self) -> Result<(), AsmError> {
        if self.at != self.ops.len() {
            return Err(err(
                self.line,
                format!(
                    "{}: expected {} operands, got {}",
                    self.mnemonic,
                    self.at,
                    self.ops.len()
                ),
            ));
        }
        Ok(())
    }
}

fn decode(
    mnemonic: &str,
    ops: &[&str],
    line: usize,
    labels: &BTreeMap<String, usize>,
    fixup: &mut Option<String>,
) -> Result<Instruction, AsmError> {
    let mut o = Ops {
        ops,
        at: 0,
        line,
        mnemonic,
    };
    // Branch targets: a known label, a raw instruction index, or a forward
    // reference recorded for fixup.
    let mut target = |o: &mut Ops| -> Result<usize, AsmError> {
        let tok = o.next()?;
        if let Some(&idx) = labels.get(tok) {
            Ok(idx)
        } else if is_ident(tok) {
            *fixup = Some(tok.to_string());
            Ok(usize::MAX)
        } else {
            Ok(parse_uint(tok, line, "branch target")? as usize)
        }
    };

    let inst = match mnemonic {
        "MVM" => Instruction::Mvm {
            group: o.group()?,
            src: o.addr()?,
            dst: o.addr()?,
        },
        "VADD" | "VADD.W" | "VADD.B" => Instruction::Vadd {
            width: if mnemonic == "VADD.B" { ElemWidth::Byte } else { ElemWidth::Word },
            dst: o.addr()?,
            src1: o.addr()?,
            src2: o.addr()?,
            len: o.uint("len")?,
        },
        "VMAX" | "VMAX.W" | "VMAX.B" => Instruction::Vmax {
            width: if mnemonic == "VMAX.W" { ElemWidth::Word } else { ElemWidth::Byte },
            dst: o.addr()?,
            src1: o.addr()?,
            src2: o.addr()?,
            len: o.uint("len")?,
        },
        "VRELU" => Instruction::Vrelu {
            dst: o.addr()?,
            src: o.addr()?,
            len: o.uint("len")?,
        },
        "VCOPY" => Instruction::Vcopy {
            dst: o.addr()?,
            src: o.addr()?,
            len: o.uint("len")?,
            src_stride: o.uint("stride")?,
        },
        "VSCALE" => Instruction::Vscale {
            dst: o.addr()?,
            src: o.addr()?,
            len: o.uint("len")?,
            multiplier: o.imm()?.try_into().map_err(|_| err(line, "multiplier out of i32 range"))?,
            shift: o.uint("shift")?,
        },
        "SEND" => Instruction::Send {
            dst_core: o.uint("core id")? as CoreId,
            src: o.addr()?,
            len: o.uint("len")?,
            tag: o.uint("tag")?,
        },
        "RECV" => Instruction::Recv {
            src_core: o.uint("core id")? as CoreId,
            dst: o.addr()?,
            len: o.uint("len")?,
            tag: o.uint("tag")?,
        },
        "LOAD" => Instruction::Load {
            dst: o.addr()?,
            gaddr: parse_uint(o.next()?, line, "global address")?,
            len: o.uint("len")?,
        },
        "STORE" => Instruction::Store {
            gaddr: parse_uint(o.next()?, line, "global address")?,
            src: o.addr()?,
            len: o.uint("len")?,
        },
        "LI" => Instruction::Li {
            reg: o.reg()?,
            imm: o.imm()?,
        },
        "SADD" => Instruction::Sadd { rd: o.reg()?, ra: o.reg()?, rb: o.reg()? },
        "SSUB" => Instruction::Ssub { rd: o.reg()?, ra: o.reg()?, rb: o.reg()? },
        "SMUL" => Instruction::Smul { rd: o.reg()?, ra: o.reg()?, rb: o.reg()? },
        "BNE" => Instruction::Bne {
            ra: o.reg()?,
            rb: o.reg()?,
            target: target(&mut o)?,
        },
        "JMP" => Instruction::Jmp {
            target: target(&mut o)?,
        },
        "NOP" => Instruction::Nop,
        "HALT" => Instruction::Halt,
        other => return Err(err(line, format!("unknown mnemonic `{other}`"))),
    };
    o.done()?;
    Ok(inst)
}

/// Canonical textual form plus weight blobs; `parse_asm` on the result
/// reproduces the program exactly.
pub fn emit_asm(program: &Program) -> AsmModule {
    use std::fmt::Write;
    let mut text = String::new();
    let mut files = BTreeMap::new();

    for (&core, cp) in &program.cores {
        writeln!(text, ".core {core}").unwrap();
        for g in &cp.groups {
            write!(text, ".group {} in={}", g.group_id, g.input_len).unwrap();
            for m in &g.members {
                write!(text, " xbar={} off={} out={}", m.xbar, m.out_offset, m.out_len).unwrap();
            }
            text.push('\n');
        }
        for (&xbar, img) in &cp.weights {
            let name = format!("w_c{core}_x{xbar}.bin");
            files.insert(name.clone(), img.data.iter().map(|&v| v as u8).collect());
            writeln!(text, ".weights xbar={xbar} file={name}").unwrap();
        }

        let targets: std::collections::BTreeSet<usize> = cp
            .instructions
            .iter()
            .filter_map(|i| match i {
                Instruction::Bne { target, .. } | Instruction::Jmp { target } => Some(*target),
                _ => None,
            })
            .collect();

        let mut layer: Option<u32> = None;
        for (idx, inst) in cp.instructions.iter().enumerate() {
            if cp.layers[idx] != layer {
                layer = cp.layers[idx];
                match layer {
                    Some(l) => writeln!(text, ".layer {l}").unwrap(),
                    None => writeln!(text, ".layer none").unwrap(),
                }
            }
            if targets.contains(&idx) {
                write!(text, "L{idx}: ").unwrap();
            }
            writeln!(text, "{}", format_inst(inst, cp.instructions.len())).unwrap();
        }
    }

    AsmModule {
        text,
        weight_files: files,
    }
}

fn format_inst(inst: &Instruction, code_len: usize) -> String {
    let label = |target: &usize| {
        if *target < code_len {
            format!("L{target}")
        } else {
            format!("{target}")
        }
    };
    match inst {
        Instruction::Mvm { group, src, dst } => format!("MVM g{group}, {src:#x}, {dst:#x}"),
        Instruction::Vadd { dst, src1, src2, len, .. } => {
            format!("{} {dst:#x}, {src1:#x}, {src2:#x}, {len}", inst.mnemonic())
        }
        Instruction::Vmax { dst, src1, src2, len, .. } => {
            format!("{} {dst:#x}, {src1:#x}, {src2:#x}, {len}", inst.mnemonic())
        }
        Instruction::Vrelu { dst, src, len } => format!("VRELU {dst:#x}, {src:#x}, {len}"),
        Instruction::Vcopy { dst, src, len, src_stride } => {
            format!("VCOPY {dst:#x}, {src:#x}, {len}, {src_stride}")
        }
        Instruction::Vscale { dst, src, len, multiplier, shift } => {
            format!("VSCALE {dst:#x}, {src:#x}, {len}, {multiplier}, {shift}")
        }
        Instruction::Send { dst_core, src, len, tag } => {
            format!("SEND {dst_core}, {src:#x}, {len}, {tag}")
        }
        Instruction::Recv { src_core, dst, len, tag } => {
            format!("RECV {src_core}, {dst:#x}, {len}, {tag}")
        }
        Instruction::Load { dst, gaddr, len } => format!("LOAD {dst:#x}, {gaddr:#x}, {len}"),
        Instruction::Store { gaddr, src, len } => format!("STORE {gaddr:#x}, {src:#x}, {len}"),
        Instruction::Li { reg, imm } => format!("LI r{reg}, {imm}"),
        Instruction::Sadd { rd, ra, rb } => format!("SADD r{rd}, r{ra}, r{rb}"),
        Instruction::Ssub { rd, ra, rb } => format!("SSUB r{rd}, r{ra}, r{rb}"),
        Instruction::Smul { rd, ra, rb } => format!("SMUL r{rd}, r{ra}, r{rb}"),
        Instruction::Bne { ra, rb, target } => format!("BNE r{ra}, r{rb}, {}", label(target)),
        Instruction::Jmp { target } => format!("JMP {}", label(target)),
        Instruction::Nop => "NOP".to_string(),
        Instruction::Halt => "HALT".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ArchConfig;

    fn cfg() -> ArchConfig {
        let mut c = ArchConfig::default();
        c.core.xbar_rows = 4;
        c.core.xbar_cols = 4;
        c
    }

    #[test]
    fn parses_mvm() {
        let p = parse_asm(".core 0\nMVM g3, 0x100, 0x200\nHALT\n", &cfg(), &MapSource::default())
            .unwrap();
        assert_eq!(
            p.cores[&0].instructions[0],
            Instruction::Mvm { group: 3, src: 0x100, dst: 0x200 }
        );
    }

    #[test]
    fn missing_operand_is_syntax_error() {
        let e = parse_asm(".core 0\nVADD 0x0, 0x40, 0x80\n", &cfg(), &MapSource::default())
            .unwrap_err();
        assert_eq!(e.line, 2);
    }

    #[test]
    fn undefined_label() {
        let e = parse_asm(".core 0\nJMP nowhere\nHALT\n", &cfg(), &MapSource::default())
            .unwrap_err();
        assert!(e.msg.contains("undefined label"), "{e}");
    }

    #[test]
    fn duplicate_group_rejected() {
        let text = ".core 0\n.group 1 in=4 xbar=0 off=0 out=4\n.group 1 in=4 xbar=1 off=0 out=4\n";
        let e = parse_asm(text, &cfg(), &MapSource::default()).unwrap_err();
        assert!(e.msg.contains("duplicate group"), "{e}");
    }

    #[test]
    fn labels_resolve_both_directions() {
        let text = "\
.core 0
start: LI r1, 3
LI r2, 0
loop: SADD r2, r2, r1
BNE r2, r1, loop
JMP start
HALT
";
        let p = parse_asm(text, &cfg(), &MapSource::default()).unwrap();
        assert_eq!(p.cores[&0].instructions[3], Instruction::Bne { ra: 2, rb: 1, target: 2 });
        assert_eq!(p.cores[&0].instructions[4], Instruction::Jmp { target: 0 });
    }

    #[test]
    fn round_trip_with_groups_weights_layers() {
        let cfg = cfg();
        let text = "\
.core 1
.group 0 in=4 xbar=0 off=0 out=4 xbar=2 off=16 out=2
.weights xbar=0 seed=9
.weights xbar=2 seed=10
.layer 0
LOAD 0x0, 0x0, 4
MVM g0, 0x0, 0x40
.layer 1
VSCALE 0x80, 0x40, 4, 3, 5
.layer none
STORE 0x10, 0x80, 4
HALT
.core 2
SEND 1, 0x0, 4, 0
HALT
";
        let p = parse_asm(text, &cfg, &MapSource::default()).unwrap();
        assert_eq!(p.cores[&1].layers[1], Some(0));
        assert_eq!(p.cores[&1].layers[2], Some(1));
        assert_eq!(p.cores[&1].layers[3], None);

        let emitted = emit_asm(&p);
        let back = parse_asm(&emitted.text, &cfg, &emitted.source()).unwrap();
        assert_eq!(back, p);

        // emitting again is byte-stable
        let emitted2 = emit_asm(&back);
        assert_eq!(emitted2.text, emitted.text);
        assert_eq!(emitted2.weight_files, emitted.weight_files);
    }

    #[test]
    fn halt_only_core_emits_single_halt_line() {
        let mut p = Program::default();
        p.core_mut(0).push(Instruction::Halt, None);
        let m = emit_asm(&p);
        assert_eq!(m.text, ".core 0\nHALT\n");
    }
}
