//! Assembly text format (`.mrv`) and two-pass assembler.
//!
//! One instruction per line, `;` starts a comment, `NAME:` defines a label,
//! and `.data <addr> <value>` seeds data memory. Operand shapes:
//!
//! ```text
//! ADD  r1, r2, r3        ; R-format
//! ADDI r1, r0, 5         ; I-format with immediate
//! LW   r2, 4(r1)         ; load, base+offset
//! SW   r2, 4(r1)         ; store, base+offset
//! BEQ  r1, r2, loop      ; branch to label (signed pc-relative offset)
//! JAL  r7, end           ; jump-and-link
//! HALT
//! ```

use crate::isa::{encode, decode, EncodedInstruction, Instruction, Opcode, Program, Word};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AsmError {
    #[error("line {line}: unknown mnemonic `{0}`", .mnemonic, line = .line)]
    UnknownMnemonic { line: usize, mnemonic: String },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: undefined label `{label}`")]
    UndefinedLabel { line: usize, label: String },
    #[error("line {line}: duplicate label `{label}`")]
    DuplicateLabel { line: usize, label: String },
    #[error("line {line}: {source}")]
    Encode {
        line: usize,
        source: crate::isa::IsaError,
    },
    #[error("program too long: {0} instructions (limit {1})")]
    TooLong(usize, usize),
}

fn syntax(line: usize, msg: impl Into<String>) -> AsmError {
    AsmError::Syntax { line, msg: msg.into() }
}

fn parse_reg(line: usize, tok: &str) -> Result<u8, AsmError> {
    let t = tok.trim();
    let rest = t
        .strip_prefix('r')
        .or_else(|| t.strip_prefix('R'))
        .ok_or_else(|| syntax(line, format!("expected register, got `{t}`")))?;
    let n: u8 = rest
        .parse()
        .map_err(|_| syntax(line, format!("bad register `{t}`")))?;
    if n >= 8 {
        return Err(syntax(line, format!("register `{t}` out of range (r0..r7)")));
    }
    Ok(n)
}

fn parse_int(line: usize, tok: &str) -> Result<i32, AsmError> {
    let t = tok.trim();
    let (neg, t) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t),
    };
    let v = if let Some(hex) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16)
    } else {
        t.parse::<i64>()
    }
    .map_err(|_| syntax(line, format!("bad integer `{tok}`")))?;
    let v = if neg { -v } else { v };
    i32::try_from(v).map_err(|_| syntax(line, format!("integer `{tok}` out of range")))
}

enum Operand {
    Reg(u8),
    Imm(i32),
    Label(String),
    /// `imm(rN)` base+offset form.
    Mem { offset: i32, base: u8 },
}

fn parse_operand(line: usize, tok: &str) -> Result<Operand, AsmError> {
    let t = tok.trim();
    if let Some(open) = t.find('(') {
        let close = t
            .rfind(')')
            .ok_or_else(|| syntax(line, format!("unclosed `(` in `{t}`")))?;
        let offset = if t[..open].trim().is_empty() { 0 } else { parse_int(line, &t[..open])? };
        let base = parse_reg(line, &t[open + 1..close])?;
        return Ok(Operand::Mem { offset, base });
    }
    if t.starts_with('r') || t.starts_with('R') {
        if let Ok(r) = parse_reg(line, t) {
            return Ok(Operand::Reg(r));
        }
    }
    if t.starts_with('-') || t.starts_with(|c: char| c.is_ascii_digit()) {
        return Ok(Operand::Imm(parse_int(line, t)?));
    }
    Ok(Operand::Label(t.to_string()))
}

struct PendingInst {
    line: usize,
    mnemonic: String,
    operands: Vec<Operand>,
}

/// Assemble `.mrv` text into a [`Program`].
pub fn assemble(text: &str) -> Result<Program, AsmError> {
    let mut labels: BTreeMap<String, u16> = BTreeMap::new();
    let mut pending: Vec<PendingInst> = Vec::new();
    let mut data_init: Vec<(Word, Word)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let mut line = raw;
        if let Some(pos) = line.find(';') {
            line = &line[..pos];
        }
        let mut line = line.trim();
        // Labels, possibly followed by an instruction on the same line.
        while let Some(pos) = line.find(':') {
            let (name, rest) = line.split_at(pos);
            let name = name.trim();
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(syntax(line_no, format!("bad label `{name}`")));
            }
            if labels.insert(name.to_string(), pending.len() as u16).is_some() {
                return Err(AsmError::DuplicateLabel { line: line_no, label: name.to_string() });
            }
            line = rest[1..].trim();
        }
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix(".data") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(syntax(line_no, ".data expects `<addr> <value>`"));
            }
            let addr = parse_int(line_no, parts[0])?;
            let value = parse_int(line_no, parts[1])?;
            if !(0..256).contains(&addr) {
                return Err(syntax(line_no, format!(".data address {addr} out of range")));
            }
            data_init.push((addr as Word, value as Word));
            continue;
        }
        let (mnemonic, rest) = match line.find(char::is_whitespace) {
            Some(pos) => line.split_at(pos),
            None => (line, ""),
        };
        let operands = rest
            .trim()
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| parse_operand(line_no, s))
            .collect::<Result<Vec<_>, _>>()?;
        pending.push(PendingInst { line: line_no, mnemonic: mnemonic.to_uppercase(), operands });
    }

    if pending.len() > crate::isa::IMEM_WORDS {
        return Err(AsmError::TooLong(pending.len(), crate::isa::IMEM_WORDS));
    }

    let mut instructions = Vec::with_capacity(pending.len());
    for (pc, p) in pending.iter().enumerate() {
        let inst = lower(p, pc as u16, &labels)?;
        instructions.push(encode(&inst).map_err(|source| AsmError::Encode { line: p.line, source })?);
    }
    Ok(Program { instructions, data_init, entry_pc: 0 })
}

fn resolve_target(
    p: &PendingInst,
    pc: u16,
    labels: &BTreeMap<String, u16>,
    op: &Operand,
) -> Result<i16, AsmError> {
    match op {
        Operand::Imm(v) => Ok(*v as i16),
        Operand::Label(name) => {
            let target = labels
                .get(name)
                .ok_or_else(|| AsmError::UndefinedLabel { line: p.line, label: name.clone() })?;
            Ok(*target as i16 - pc as i16)
        }
        _ => Err(syntax(p.line, "expected label or immediate offset")),
    }
}

fn lower(p: &PendingInst, pc: u16, labels: &BTreeMap<String, u16>) -> Result<Instruction, AsmError> {
    let line = p.line;
    let want = |n: usize| -> Result<(), AsmError> {
        if p.operands.len() != n {
            Err(syntax(line, format!("`{}` expects {n} operands, got {}", p.mnemonic, p.operands.len())))
        } else {
            Ok(())
        }
    };
    let reg = |op: &Operand| -> Result<u8, AsmError> {
        match op {
            Operand::Reg(r) => Ok(*r),
            _ => Err(syntax(line, "expected register operand")),
        }
    };
    let r_format = |opcode: Opcode, p: &PendingInst| -> Result<Instruction, AsmError> {
        want(3)?;
        Ok(Instruction::r(opcode, reg(&p.operands[0])?, reg(&p.operands[1])?, reg(&p.operands[2])?))
    };
    match p.mnemonic.as_str() {
        "ADD" => r_format(Opcode::Add, p),
        "SUB" => r_format(Opcode::Sub, p),
        "AND" => r_format(Opcode::And, p),
        "OR" => r_format(Opcode::Or, p),
        "XOR" => r_format(Opcode::Xor, p),
        "SLT" => r_format(Opcode::Slt, p),
        "MUL" => r_format(Opcode::Mul, p),
        "ADDI" => {
            want(3)?;
            let imm = match &p.operands[2] {
                Operand::Imm(v) => *v as i16,
                _ => return Err(syntax(line, "ADDI expects an immediate third operand")),
            };
            Ok(Instruction::addi(reg(&p.operands[0])?, reg(&p.operands[1])?, imm))
        }
        "LW" | "SW" => {
            want(2)?;
            let (offset, base) = match &p.operands[1] {
                Operand::Mem { offset, base } => (*offset as i16, *base),
                _ => return Err(syntax(line, format!("`{}` expects `imm(rN)` second operand", p.mnemonic))),
            };
            let r = reg(&p.operands[0])?;
            Ok(if p.mnemonic == "LW" {
                Instruction::lw(r, base, offset)
            } else {
                Instruction::sw(r, base, offset)
            })
        }
        "BEQ" | "BNE" => {
            want(3)?;
            let opcode = if p.mnemonic == "BEQ" { Opcode::Beq } else { Opcode::Bne };
            let offset = resolve_target(p, pc, labels, &p.operands[2])?;
            Ok(Instruction::branch(opcode, reg(&p.operands[0])?, reg(&p.operands[1])?, offset))
        }
        "JAL" => {
            want(2)?;
            let offset = resolve_target(p, pc, labels, &p.operands[1])?;
            Ok(Instruction::jal(reg(&p.operands[0])?, offset))
        }
        "HALT" => {
            want(0)?;
            Ok(Instruction::halt())
        }
        other => Err(AsmError::UnknownMnemonic { line, mnemonic: other.to_string() }),
    }
}

/// Render one instruction as assembly text (numeric offsets, no labels).
pub fn disassemble(e: EncodedInstruction) -> String {
    let Ok(i) = decode(e) else {
        return format!("; invalid {:#06x}", e.bits());
    };
    let m = i.opcode.mnemonic();
    use Opcode::*;
    match i.opcode {
        Add | Sub | And | Or | Xor | Slt | Mul => {
            format!("{m} r{}, r{}, r{}", i.rd, i.rs1, i.rs2)
        }
        Addi => format!("{m} r{}, r{}, {}", i.rd, i.rs1, i.imm),
        Lw => format!("{m} r{}, {}(r{})", i.rd, i.imm, i.rs1),
        Sw => format!("{m} r{}, {}(r{})", i.rs2, i.imm, i.rs1),
        Beq | Bne => format!("{m} r{}, r{}, {}", i.rs1, i.rs2, i.imm),
        Jal => format!("{m} r{}, {}", i.rd, i.imm),
        Halt => m.to_string(),
    }
}

/// Render a whole program as `.mrv` text that `assemble` accepts.
pub fn format_program(p: &Program) -> String {
    let mut out = String::new();
    for &(addr, value) in &p.data_init {
        out.push_str(&format!(".data {addr} {value}\n"));
    }
    for &e in &p.instructions {
        out.push_str(&disassemble(e));
        out.push('\n');
    }
    out
}
