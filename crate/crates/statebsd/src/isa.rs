//! MiniRV-16: a 16-bit word-addressed RISC with 8 registers, 256-word
//! instruction and data memories, and a single-cycle reference model.
//!
//! The instruction set is deliberately small so that predictor domains stay
//! exhaustively enumerable: 14 opcodes in the top nibble, three register
//! fields, and 6/9-bit signed immediates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Machine word. All arithmetic wraps modulo 2^16.
pub type Word = u16;

/// Number of general-purpose registers. `r0` is hardwired to zero.
pub const NUM_REGS: usize = 8;
/// Data memory size in words.
pub const MEM_WORDS: usize = 256;
/// Instruction memory limit in words.
pub const IMEM_WORDS: usize = 256;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum IsaError {
    #[error("invalid opcode {0} (reserved)")]
    InvalidOpcode(u8),
    #[error("invalid encoding {0:#06x}: nonzero padding bits for its format")]
    InvalidEncoding(u16),
    #[error("field out of range: {0}")]
    FieldOutOfRange(String),
    #[error("memory access out of range: address {0:#06x}")]
    MemOutOfRange(Word),
    #[error("pc out of range: {0:#06x} with instruction memory of {1} words")]
    PcOutOfRange(Word, usize),
}

/// The 14 defined opcodes. Values 14 and 15 are reserved and invalid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Opcode {
    Add = 0,
    Sub = 1,
    And = 2,
    Or = 3,
    Xor = 4,
    Slt = 5,
    Addi = 6,
    Lw = 7,
    Sw = 8,
    Beq = 9,
    Bne = 10,
    Jal = 11,
    Mul = 12,
    Halt = 13,
}

impl Opcode {
    pub fn from_nibble(n: u8) -> Result<Self, IsaError> {
        use Opcode::*;
        Ok(match n {
            0 => Add,
            1 => Sub,
            2 => And,
            3 => Or,
            4 => Xor,
            5 => Slt,
            6 => Addi,
            7 => Lw,
            8 => Sw,
            9 => Beq,
            10 => Bne,
            11 => Jal,
            12 => Mul,
            13 => Halt,
            _ => return Err(IsaError::InvalidOpcode(n)),
        })
    }

    /// Register-register ALU format (three register fields).
    pub fn is_r_format(self) -> bool {
        use Opcode::*;
        matches!(self, Add | Sub | And | Or | Xor | Slt | Mul)
    }

    pub fn is_control(self) -> bool {
        matches!(self, Opcode::Beq | Opcode::Bne | Opcode::Jal)
    }

    pub fn is_memory(self) -> bool {
        matches!(self, Opcode::Lw | Opcode::Sw)
    }

    pub fn mnemonic(self) -> &'static str {
        use Opcode::*;
        match self {
            Add => "ADD",
            Sub => "SUB",
            And => "AND",
            Or => "OR",
            Xor => "XOR",
            Slt => "SLT",
            Addi => "ADDI",
            Lw => "LW",
            Sw => "SW",
            Beq => "BEQ",
            Bne => "BNE",
            Jal => "JAL",
            Mul => "MUL",
            Halt => "HALT",
        }
    }
}

/// A raw 16-bit instruction word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EncodedInstruction(pub u16);

impl EncodedInstruction {
    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn opcode_nibble(self) -> u8 {
        (self.0 >> 12) as u8
    }
}

/// A decoded instruction with canonical fields: fields not used by the
/// opcode's format are zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub opcode: Opcode,
    pub rd: u8,
    pub rs1: u8,
    pub rs2: u8,
    /// Signed immediate: 6 bits for I/S/B formats, 9 bits for JAL.
    pub imm: i16,
}

impl Instruction {
    pub fn r(opcode: Opcode, rd: u8, rs1: u8, rs2: u8) -> Self {
        debug_assert!(opcode.is_r_format());
        Instruction { opcode, rd, rs1, rs2, imm: 0 }
    }

    pub fn addi(rd: u8, rs1: u8, imm: i16) -> Self {
        Instruction { opcode: Opcode::Addi, rd, rs1, rs2: 0, imm }
    }

    pub fn lw(rd: u8, rs1: u8, imm: i16) -> Self {
        Instruction { opcode: Opcode::Lw, rd, rs1, rs2: 0, imm }
    }

    pub fn sw(rs2: u8, rs1: u8, imm: i16) -> Self {
        Instruction { opcode: Opcode::Sw, rd: 0, rs1, rs2, imm }
    }

    pub fn branch(opcode: Opcode, rs1: u8, rs2: u8, imm: i16) -> Self {
        debug_assert!(matches!(opcode, Opcode::Beq | Opcode::Bne));
        Instruction { opcode, rd: 0, rs1, rs2, imm }
    }

    pub fn jal(rd: u8, imm: i16) -> Self {
        Instruction { opcode: Opcode::Jal, rd, rs1: 0, rs2: 0, imm }
    }

    pub fn halt() -> Self {
        Instruction { opcode: Opcode::Halt, rd: 0, rs1: 0, rs2: 0, imm: 0 }
    }

    /// Registers this instruction reads. `r0` reads are omitted: the zero
    /// register is constant and never carries a dependency.
    pub fn reads(&self) -> Vec<u8> {
        use Opcode::*;
        let regs: &[u8] = match self.opcode {
            Add | Sub | And | Or | Xor | Slt | Mul => &[self.rs1, self.rs2],
            Addi | Lw => &[self.rs1],
            Sw => &[self.rs1, self.rs2],
            Beq | Bne => &[self.rs1, self.rs2],
            Jal | Halt => &[],
        };
        let mut out = Vec::with_capacity(2);
        for &r in regs {
            if r != 0 && !out.contains(&r) {
                out.push(r);
            }
        }
        out
    }

    /// Destination register, if this instruction writes one (`r0` writes are
    /// discarded and reported as `None`).
    pub fn dest(&self) -> Option<u8> {
        use Opcode::*;
        match self.opcode {
            Add | Sub | And | Or | Xor | Slt | Mul | Addi | Lw | Jal if self.rd != 0 => {
                Some(self.rd)
            }
            _ => None,
        }
    }
}

fn sext6(v: u16) -> i16 {
    (((v & 0x3f) as i16) << 10) >> 10
}

fn sext9(v: u16) -> i16 {
    (((v & 0x1ff) as i16) << 7) >> 7
}

/// Decode a 16-bit word.
///
/// Strict: encodings whose format requires zero padding (R-format `[2:0]`,
/// HALT `[11:0]`) are rejected, so every decodable word round-trips through
/// [`encode`] bit-exactly.
pub fn decode(e: EncodedInstruction) -> Result<Instruction, IsaError> {
    let bits = e.0;
    let opcode = Opcode::from_nibble(e.opcode_nibble())?;
    let f11_9 = ((bits >> 9) & 0x7) as u8;
    let f8_6 = ((bits >> 6) & 0x7) as u8;
    let f5_3 = ((bits >> 3) & 0x7) as u8;
    use Opcode::*;
    let inst = match opcode {
        Add | Sub | And | Or | Xor | Slt | Mul => {
            if bits & 0x7 != 0 {
                return Err(IsaError::InvalidEncoding(bits));
            }
            Instruction::r(opcode, f11_9, f8_6, f5_3)
        }
        Addi | Lw => Instruction { opcode, rd: f11_9, rs1: f8_6, rs2: 0, imm: sext6(bits) },
        Sw => Instruction { opcode, rd: 0, rs1: f8_6, rs2: f11_9, imm: sext6(bits) },
        Beq | Bne => Instruction { opcode, rd: 0, rs1: f11_9, rs2: f8_6, imm: sext6(bits) },
        Jal => Instruction { opcode, rd: f11_9, rs1: 0, rs2: 0, imm: sext9(bits) },
        Halt => {
            if bits & 0x0fff != 0 {
                return Err(IsaError::InvalidEncoding(bits));
            }
            Instruction::halt()
        }
    };
    Ok(inst)
}

fn check_reg(name: &str, r: u8) -> Result<(), IsaError> {
    if r >= NUM_REGS as u8 {
        return Err(IsaError::FieldOutOfRange(format!("{name}={r} (registers are r0..r7)")));
    }
    Ok(())
}

fn check_imm(imm: i16, bits: u32) -> Result<u16, IsaError> {
    let lo = -(1 << (bits - 1));
    let hi = (1 << (bits - 1)) - 1;
    if (imm as i32) < lo || (imm as i32) > hi {
        return Err(IsaError::FieldOutOfRange(format!(
            "imm={imm} outside signed {bits}-bit range [{lo}, {hi}]"
        )));
    }
    Ok((imm as u16) & ((1 << bits) - 1))
}

/// Encode an instruction into its canonical 16-bit word.
pub fn encode(i: &Instruction) -> Result<EncodedInstruction, IsaError> {
    use Opcode::*;
    let op = (i.opcode as u16) << 12;
    let bits = match i.opcode {
        Add | Sub | And | Or | Xor | Slt | Mul => {
            check_reg("rd", i.rd)?;
            check_reg("rs1", i.rs1)?;
            check_reg("rs2", i.rs2)?;
            op | (i.rd as u16) << 9 | (i.rs1 as u16) << 6 | (i.rs2 as u16) << 3
        }
        Addi | Lw => {
            check_reg("rd", i.rd)?;
            check_reg("rs1", i.rs1)?;
            op | (i.rd as u16) << 9 | (i.rs1 as u16) << 6 | check_imm(i.imm, 6)?
        }
        Sw => {
            check_reg("rs2", i.rs2)?;
            check_reg("rs1", i.rs1)?;
            op | (i.rs2 as u16) << 9 | (i.rs1 as u16) << 6 | check_imm(i.imm, 6)?
        }
        Beq | Bne => {
            check_reg("rs1", i.rs1)?;
            check_reg("rs2", i.rs2)?;
            op | (i.rs1 as u16) << 9 | (i.rs2 as u16) << 6 | check_imm(i.imm, 6)?
        }
        Jal => {
            check_reg("rd", i.rd)?;
            op | (i.rd as u16) << 9 | check_imm(i.imm, 9)?
        }
        Halt => op,
    };
    Ok(EncodedInstruction(bits))
}

/// Architectural state: pc, register file, data memory, halt flag.
#[derive(Clone, PartialEq, Eq)]
pub struct ProcessorState {
    pub pc: Word,
    pub regs: [Word; NUM_REGS],
    pub mem: [Word; MEM_WORDS],
    pub halted: bool,
}

impl std::fmt::Debug for ProcessorState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProcessorState")
            .field("pc", &self.pc)
            .field("regs", &self.regs)
            .field("halted", &self.halted)
            .finish_non_exhaustive()
    }
}

impl ProcessorState {
    pub fn new() -> Self {
        ProcessorState { pc: 0, regs: [0; NUM_REGS], mem: [0; MEM_WORDS], halted: false }
    }

    fn write_reg(&mut self, rd: u8, value: Word) -> Option<(u8, Word)> {
        if rd == 0 {
            // r0 is hardwired to zero; writes vanish.
            None
        } else {
            self.regs[rd as usize] = value;
            Some((rd, value))
        }
    }
}

impl Default for ProcessorState {
    fn default() -> Self {
        Self::new()
    }
}

/// Side effects of one step, recorded for traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepEffects {
    pub reg_write: Option<(u8, Word)>,
    pub mem_write: Option<(Word, Word)>,
    pub next_pc: Word,
}

/// One transition of the single-cycle model: `Processor: Ψ × Φ → Ψ`.
///
/// The caller must not step a halted state.
pub fn step(s: &ProcessorState, e: EncodedInstruction) -> Result<(ProcessorState, StepEffects), IsaError> {
    assert!(!s.halted, "step() on a halted state");
    let i = decode(e)?;
    let mut next = s.clone();
    let mut fx = StepEffects { reg_write: None, mem_write: None, next_pc: s.pc.wrapping_add(1) };
    let r = |idx: u8| s.regs[idx as usize];
    use Opcode::*;
    match i.opcode {
        Add => fx.reg_write = next.write_reg(i.rd, r(i.rs1).wrapping_add(r(i.rs2))),
        Sub => fx.reg_write = next.write_reg(i.rd, r(i.rs1).wrapping_sub(r(i.rs2))),
        And => fx.reg_write = next.write_reg(i.rd, r(i.rs1) & r(i.rs2)),
        Or => fx.reg_write = next.write_reg(i.rd, r(i.rs1) | r(i.rs2)),
        Xor => fx.reg_write = next.write_reg(i.rd, r(i.rs1) ^ r(i.rs2)),
        Slt => {
            let v = ((r(i.rs1) as i16) < (r(i.rs2) as i16)) as Word;
            fx.reg_write = next.write_reg(i.rd, v);
        }
        Mul => fx.reg_write = next.write_reg(i.rd, r(i.rs1).wrapping_mul(r(i.rs2))),
        Addi => fx.reg_write = next.write_reg(i.rd, r(i.rs1).wrapping_add(i.imm as Word)),
        Lw => {
            let addr = effective_address(r(i.rs1), i.imm)?;
            fx.reg_write = next.write_reg(i.rd, s.mem[addr as usize]);
        }
        Sw => {
            let addr = effective_address(r(i.rs1), i.imm)?;
            next.mem[addr as usize] = r(i.rs2);
            fx.mem_write = Some((addr, r(i.rs2)));
        }
        Beq => {
            if r(i.rs1) == r(i.rs2) {
                fx.next_pc = s.pc.wrapping_add(i.imm as Word);
            }
        }
        Bne => {
            if r(i.rs1) != r(i.rs2) {
                fx.next_pc = s.pc.wrapping_add(i.imm as Word);
            }
        }
        Jal => {
            fx.reg_write = next.write_reg(i.rd, s.pc.wrapping_add(1));
            fx.next_pc = s.pc.wrapping_add(i.imm as Word);
        }
        Halt => {
            next.halted = true;
            fx.next_pc = s.pc;
        }
    }
    next.pc = fx.next_pc;
    Ok((next, fx))
}

/// Effective data-memory address; out-of-range is a hard fault rather than
/// wraparound so generator bugs surface early.
pub fn effective_address(base: Word, imm: i16) -> Result<Word, IsaError> {
    let addr = base.wrapping_add(imm as Word);
    if (addr as usize) >= MEM_WORDS {
        return Err(IsaError::MemOutOfRange(addr));
    }
    Ok(addr)
}

/// Per-opcode latency in cycles: ALU/branch/JAL/HALT take 1, loads and
/// stores 2, MUL 3. Independent of state in this model.
pub fn latency(e: EncodedInstruction) -> Result<u32, IsaError> {
    let i = decode(e)?;
    Ok(latency_of(i.opcode))
}

pub fn latency_of(op: Opcode) -> u32 {
    use Opcode::*;
    match op {
        Lw | Sw => 2,
        Mul => 3,
        _ => 1,
    }
}

/// A program: instruction memory image, initial data values, entry point.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program {
    pub instructions: Vec<EncodedInstruction>,
    pub data_init: Vec<(Word, Word)>,
    pub entry_pc: Word,
}

impl Program {
    pub fn initial_state(&self) -> ProcessorState {
        let mut s = ProcessorState::new();
        s.pc = self.entry_pc;
        for &(addr, value) in &self.data_init {
            s.mem[addr as usize] = value;
        }
        s
    }

    pub fn fetch(&self, pc: Word) -> Result<EncodedInstruction, IsaError> {
        self.instructions
            .get(pc as usize)
            .copied()
            .ok_or(IsaError::PcOutOfRange(pc, self.instructions.len()))
    }
}

/// One retired instruction in a trace. Replaying the records from the
/// initial state reproduces every field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub step: u32,
    pub pc_before: Word,
    pub inst: EncodedInstruction,
    pub reg_write: Option<(u8, Word)>,
    pub mem_write: Option<(Word, Word)>,
    pub next_pc: Word,
    pub latency: u32,
}

/// Result of a completed single-cycle run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub final_state: ProcessorState,
    pub trace: Vec<TraceRecord>,
    pub cycles: u64,
    pub instructions: u64,
}

impl RunOutput {
    /// Cycles per instruction as an exact rational.
    pub fn cpi(&self) -> num_rational::Ratio<u64> {
        num_rational::Ratio::new(self.cycles, self.instructions.max(1))
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("step limit exceeded after {} instructions", .0.instructions)]
    StepLimitExceeded(Box<RunOutput>),
    #[error(transparent)]
    Isa(#[from] IsaError),
}

/// Execute `p` on the single-cycle model until HALT or `max_steps`.
pub fn run_single(p: &Program, max_steps: u64) -> Result<RunOutput, RunError> {
    assert!(max_steps > 0, "max_steps must be positive");
    let mut state = p.initial_state();
    let mut trace = Vec::new();
    let mut cycles: u64 = 0;
    while !state.halted {
        if trace.len() as u64 >= max_steps {
            return Err(RunError::StepLimitExceeded(Box::new(RunOutput {
                instructions: trace.len() as u64,
                final_state: state,
                trace,
                cycles,
            })));
        }
        let pc = state.pc;
        let e = p.fetch(pc)?;
        let lat = latency(e)?;
        let (next, fx) = step(&state, e)?;
        trace.push(TraceRecord {
            step: trace.len() as u32,
            pc_before: pc,
            inst: e,
            reg_write: fx.reg_write,
            mem_write: fx.mem_write,
            next_pc: fx.next_pc,
            latency: lat,
        });
        cycles += lat as u64;
        state = next;
    }
    Ok(RunOutput { instructions: trace.len() as u64, final_state: state, trace, cycles })
}
