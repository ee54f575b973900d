//! Workload generation. Every generator emits assembly text, assembles it,
//! and proves termination by running the single-cycle model once.

use crate::asm::assemble;
use crate::isa::{run_single, Program};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    Random,
    ArithChain,
    Memcopy,
    Fib,
    BubbleSort,
    BranchHeavy,
}

impl WorkloadKind {
    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::Random => "random",
            WorkloadKind::ArithChain => "arith_chain",
            WorkloadKind::Memcopy => "memcopy",
            WorkloadKind::Fib => "fib",
            WorkloadKind::BubbleSort => "bubble_sort",
            WorkloadKind::BranchHeavy => "branch_heavy",
        }
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("generation failed for {kind:?} len {len}: {reason}")]
    GenerationFailed { kind: WorkloadKind, len: usize, reason: String },
}

/// A workload request: kind, size parameter, seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub len: usize,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn label(&self) -> String {
        format!("{}_{}_{}", self.kind.name(), self.len, self.seed)
    }
}

/// Upper bound on single-cycle steps used to validate generated programs.
pub const GEN_MAX_STEPS: u64 = 400_000;

/// Generate a program deterministically from its spec.
pub fn gen_program(spec: &WorkloadSpec) -> Result<Program, GenError> {
    let fail = |reason: &str| GenError::GenerationFailed {
        kind: spec.kind,
        len: spec.len,
        reason: reason.to_string(),
    };
    let text = match spec.kind {
        WorkloadKind::Random => gen_random_text(spec)?,
        WorkloadKind::ArithChain => {
            if spec.len < 1 || spec.len > 250 {
                return Err(fail("chain length must be in 1..=250"));
            }
            gen_arith_chain_text(spec)
        }
        WorkloadKind::Memcopy => {
            if spec.len < 1 || spec.len > 30 {
                return Err(fail("memcopy elements must be in 1..=30"));
            }
            gen_memcopy_text(spec)
        }
        WorkloadKind::Fib => {
            if spec.len < 1 || spec.len > 31 {
                return Err(fail("fib index must be in 1..=31"));
            }
            gen_fib_text(spec)
        }
        WorkloadKind::BubbleSort => {
            if spec.len < 2 || spec.len > 24 {
                return Err(fail("array length must be in 2..=24"));
            }
            gen_bubble_sort_text(spec)
        }
        WorkloadKind::BranchHeavy => {
            if spec.len < 1 || spec.len > 900 {
                return Err(fail("iteration count must be in 1..=900"));
            }
            gen_branch_heavy_text(spec)
        }
    };
    let program = assemble(&text)
        .map_err(|e| fail(&format!("assembly of generated text failed: {e}")))?;
    run_single(&program, GEN_MAX_STEPS)
        .map_err(|e| fail(&format!("generated program does not run clean: {e}")))?;
    Ok(program)
}

/// Chain where every instruction RAW-depends on its predecessor. Links are
/// mostly value-preserving idioms (the forwarding patterns a predictor can
/// actually cover) with a sprinkling of arithmetic that is not.
fn gen_arith_chain_text(spec: &WorkloadSpec) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut text = String::new();
    let mut prev: u8 = 1;
    text.push_str(&format!("ADDI r1, r0, {}\n", rng.gen_range(1..=31)));
    for i in 1..spec.len {
        let rd = 1 + ((prev + rng.gen_range(0..6)) % 7);
        let pick = rng.gen_range(0..100);
        let line = if pick < 40 {
            format!("ADD r{rd}, r{prev}, r0")
        } else if pick < 50 {
            format!("OR r{rd}, r{prev}, r{prev}")
        } else if pick < 60 {
            format!("AND r{rd}, r{prev}, r{prev}")
        } else if pick < 70 {
            format!("ADDI r{rd}, r{prev}, 0")
        } else if pick < 75 {
            format!("SUB r{rd}, r{prev}, r0")
        } else if pick < 80 {
            format!("XOR r{rd}, r{prev}, r{prev}")
        } else {
            format!("ADDI r{rd}, r{prev}, {}", rng.gen_range(1..=7) * if i % 2 == 0 { 1 } else { -1 })
        };
        text.push_str(&line);
        text.push('\n');
        prev = rd;
    }
    text.push_str("HALT\n");
    text
}

/// Interleaved double copy A -> B -> C over `len` elements, repeated for
/// several rounds. The B reload immediately after the B store is the
/// store-to-load pattern the MEM predictor covers.
fn gen_memcopy_text(spec: &WorkloadSpec) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.len;
    let rounds = (1200 / n.max(1)).clamp(1, 31);
    let mut text = String::new();
    for i in 0..n {
        text.push_str(&format!(".data {} {}\n", i, rng.gen_range(0..=u16::MAX as u32) as u16));
    }
    text.push_str(&format!("ADDI r3, r0, {n}\n"));
    text.push_str(&format!("ADDI r7, r0, {rounds}\n"));
    // r6 = 62: base of region C (A at 0.., B at 31..).
    text.push_str("ADDI r6, r0, 31\nADDI r1, r0, 31\nADD r6, r6, r1\n");
    text.push_str("round: ADDI r5, r0, 0\n");
    text.push_str("loop: BEQ r5, r3, next_round\n");
    text.push_str("LW r1, 0(r5)\n");
    text.push_str("ADD r2, r1, r0\n");
    text.push_str("SW r2, 31(r5)\n");
    text.push_str("ADD r4, r5, r6\n");
    text.push_str("LW r1, 31(r5)\n");
    text.push_str("ADD r2, r1, r0\n");
    text.push_str("SW r2, 0(r4)\n");
    text.push_str("ADDI r5, r5, 1\n");
    text.push_str("JAL r0, loop\n");
    text.push_str("next_round: ADDI r7, r7, -1\n");
    text.push_str("BNE r7, r0, round\n");
    text.push_str("HALT\n");
    text
}

/// Iterative Fibonacci; after the loop, r1 = fib(len) mod 2^16.
fn gen_fib_text(spec: &WorkloadSpec) -> String {
    format!(
        "\
ADDI r1, r0, 0
ADDI r2, r0, 1
ADDI r3, r0, {n}
loop: BEQ r3, r0, done
ADD r4, r1, r2
ADD r1, r2, r0
ADD r2, r4, r0
ADDI r3, r3, -1
JAL r0, loop
done: HALT
",
        n = spec.len
    )
}

/// In-place bubble sort of a seeded array at data address 0.
fn gen_bubble_sort_text(spec: &WorkloadSpec) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.len;
    let mut text = String::new();
    for i in 0..n {
        // SLT compares signed; keep the data in the non-negative half.
        text.push_str(&format!(".data {} {}\n", i, rng.gen_range(0..0x8000u32) as u16));
    }
    text.push_str(&format!("ADDI r7, r0, {}\n", n - 1));
    text.push_str(
        "\
outer: BEQ r7, r0, done
ADDI r2, r0, 0
inner: SLT r6, r2, r7
BEQ r6, r0, outer_end
ADD r5, r2, r0
LW r3, 0(r5)
LW r4, 1(r5)
SLT r6, r4, r3
BEQ r6, r0, noswap
SW r4, 0(r5)
SW r3, 1(r5)
noswap: ADDI r2, r2, 1
JAL r0, inner
outer_end: ADDI r7, r7, -1
JAL r0, outer
done: HALT
",
    );
    text
}

/// A loop dominated by control flow: a data-dependent branch, a never-taken
/// guard, and a JAL backedge.
fn gen_branch_heavy_text(spec: &WorkloadSpec) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let iters = spec.len;
    let (a, b) = factor_near(iters);
    let odd_step = rng.gen_range(1..=7);
    format!(
        "\
ADDI r1, r0, {a}
ADDI r2, r0, {b}
MUL r1, r1, r2
ADDI r2, r0, 1
ADDI r3, r0, 0
loop: AND r4, r1, r2
BEQ r4, r0, even
ADDI r3, r3, {odd_step}
even: BNE r2, r2, done
ADD r5, r3, r0
ADDI r1, r1, -1
BEQ r1, r0, done
JAL r0, loop
done: HALT
"
    )
}

/// Split `n` into a*b with both factors representable in a 5-bit immediate.
fn factor_near(n: usize) -> (usize, usize) {
    if n <= 31 {
        return (n, 1);
    }
    for a in (2..=31).rev() {
        if n % a == 0 && n / a <= 31 {
            return (a, n / a);
        }
    }
    (31, (n / 31).min(31))
}

/// Rejection-sampled straight-line-with-forward-branches program.
fn gen_random_text(spec: &WorkloadSpec) -> Result<String, GenError> {
    if spec.len < 1 || spec.len > 250 {
        return Err(GenError::GenerationFailed {
            kind: spec.kind,
            len: spec.len,
            reason: "length must be in 1..=250".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _attempt in 0..200 {
        let text = random_candidate(spec.len, &mut rng);
        if let Ok(p) = assemble(&text) {
            if run_single(&p, GEN_MAX_STEPS).is_ok() {
                return Ok(text);
            }
        }
    }
    Err(GenError::GenerationFailed {
        kind: spec.kind,
        len: spec.len,
        reason: "no clean candidate after 200 attempts".into(),
    })
}

fn random_candidate(len: usize, rng: &mut ChaCha8Rng) -> String {
    let mut text = String::new();
    let mut recent_rd: u8 = 1;
    let pick_src = |rng: &mut ChaCha8Rng, recent: u8| -> u8 {
        if rng.gen_bool(0.5) {
            recent
        } else {
            rng.gen_range(0..8)
        }
    };
    for i in 0..len {
        let rd = rng.gen_range(1..8);
        let remaining = len - i; // HALT sits at index `len`
        let roll = rng.gen_range(0..100);
        let line = match roll {
            0..=17 => format!("ADDI r{rd}, r{}, {}", pick_src(rng, recent_rd), rng.gen_range(-8..=8)),
            18..=33 => {
                let rs2 = if rng.gen_bool(0.45) { 0 } else { pick_src(rng, recent_rd) };
                format!("ADD r{rd}, r{}, r{rs2}", pick_src(rng, recent_rd))
            }
            34..=39 => format!("SUB r{rd}, r{}, r0", pick_src(rng, recent_rd)),
            40..=45 => {
                let s = pick_src(rng, recent_rd);
                format!("AND r{rd}, r{s}, r{s}")
            }
            46..=51 => {
                let s = pick_src(rng, recent_rd);
                format!("OR r{rd}, r{s}, r{s}")
            }
            52..=56 => format!("XOR r{rd}, r{}, r{}", pick_src(rng, recent_rd), pick_src(rng, recent_rd)),
            57..=60 => format!("SLT r{rd}, r{}, r{}", pick_src(rng, recent_rd), pick_src(rng, recent_rd)),
            61..=66 => format!("MUL r{rd}, r{}, r{}", pick_src(rng, recent_rd), rng.gen_range(0..8)),
            67..=76 => format!("LW r{rd}, {}(r0)", rng.gen_range(0..32)),
            77..=86 => format!("SW r{}, {}(r0)", pick_src(rng, recent_rd), rng.gen_range(0..32)),
            87..=91 if remaining > 2 => {
                let off = rng.gen_range(2..=5.min(remaining as i64)) as i16;
                format!("BEQ r{}, r{}, {off}", pick_src(rng, recent_rd), rng.gen_range(0..8))
            }
            92..=96 if remaining > 2 => {
                let off = rng.gen_range(2..=5.min(remaining as i64)) as i16;
                format!("BNE r{}, r{}, {off}", pick_src(rng, recent_rd), rng.gen_range(0..8))
            }
            _ if remaining > 2 => {
                let off = rng.gen_range(2..=4.min(remaining as i64)) as i16;
                format!("JAL r{}, {off}", rng.gen_range(0..8))
            }
            _ => format!("ADDI r{rd}, r0, {}", rng.gen_range(0..=15)),
        };
        text.push_str(&line);
        text.push('\n');
        if !line.starts_with('B') && !line.starts_with('J') && !line.starts_with("SW") {
            recent_rd = rd;
        }
    }
    text.push_str("HALT\n");
    text
}
