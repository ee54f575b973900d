//! p-way in-order superscalar model gated by the predictor bundle.
//!
//! Groups are maximal prefixes of the dynamic instruction stream. The first
//! slot always issues; every further slot must clear, in order:
//!
//! 1. structural rules: multi-cycle instructions (loads, stores, MUL) only
//!    lead a group, and a group holds at most `mem_ports` memory ops;
//! 2. the fetch path: each transition into a later slot must be predicted
//!    by the PC speculator, sequential transitions included, and fetch
//!    follows the predicted target;
//! 3. data rules: every in-group RAW operand must be covered by the GPR
//!    speculator (or the MEM speculator when the producer is a load), and
//!    the buffer slot a prediction reads must not have been dirtied by an
//!    earlier in-group instruction.
//!
//! A group costs the maximum member latency. Execution is sequential
//! underneath; every consumed prediction is compared against the value the
//! architectural state actually produces, so a wrong prediction aborts the
//! run as `PredictorUnsound` instead of corrupting state. A verified bundle
//! never trips it, which the acceptance suite exercises across workloads.

use crate::isa::{
    decode, latency_of, step, EncodedInstruction, Instruction, IsaError, Opcode, ProcessorState,
    Program, Word,
};
use crate::isa::TraceRecord;
use crate::selector::{CandidateStateId, DepKind, MirrorState};
use crate::speculator::{input_bits, LogicalPrediction, Speculator, VerificationReport};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unsound prediction: {0}")]
    PredictorUnsound(String),
    #[error("cycle limit of {0} exceeded")]
    CycleLimitExceeded(u64),
    #[error(transparent)]
    Isa(#[from] IsaError),
    #[error(transparent)]
    Speculator(#[from] crate::speculator::SpeculatorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuperscalarConfig {
    /// Issue width: maximum instructions per cycle.
    pub p: usize,
    /// Memory ports available to one group.
    pub mem_ports: usize,
    /// Prediction latency floor for prediction-enabled groups, in cycles.
    pub l_p: u32,
}

impl Default for SuperscalarConfig {
    fn default() -> Self {
        SuperscalarConfig { p: 2, mem_ports: 1, l_p: 1 }
    }
}

/// One dependency kind's trained state: the speculator (which carries its
/// selected set) plus its verification evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct SubPredictor {
    pub speculator: Speculator,
    pub verification: Option<VerificationReport>,
}

impl SubPredictor {
    pub fn abstain_everywhere(target: DepKind) -> Self {
        SubPredictor {
            speculator: Speculator::abstain_everywhere(
                target,
                crate::selector::SelectedStateSet::full_pool(),
            ),
            verification: None,
        }
    }

    pub fn is_verified(&self) -> bool {
        self.verification.as_ref().map_or(false, |v| v.status == "verified")
    }
}

/// The three sub-predictors integrated into the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorBundle {
    pub pc: SubPredictor,
    pub gpr: SubPredictor,
    pub mem: SubPredictor,
}

impl PredictorBundle {
    pub fn abstain_everywhere() -> Self {
        PredictorBundle {
            pc: SubPredictor::abstain_everywhere(DepKind::Pc),
            gpr: SubPredictor::abstain_everywhere(DepKind::Gpr),
            mem: SubPredictor::abstain_everywhere(DepKind::Mem),
        }
    }

    pub fn sub(&self, kind: DepKind) -> &SubPredictor {
        match kind {
            DepKind::Pc => &self.pc,
            DepKind::Gpr => &self.gpr,
            DepKind::Mem => &self.mem,
        }
    }

    /// Replace one sub-predictor with abstain-everywhere (ablation).
    pub fn without(&self, kind: DepKind) -> Self {
        let mut b = self.clone();
        match kind {
            DepKind::Pc => b.pc = SubPredictor::abstain_everywhere(kind),
            DepKind::Gpr => b.gpr = SubPredictor::abstain_everywhere(kind),
            DepKind::Mem => b.mem = SubPredictor::abstain_everywhere(kind),
        }
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StallReason {
    GprRaw,
    MemRaw,
    Control,
    Structural,
}

/// A prediction consumed while planning one group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UsedPrediction {
    pub kind: DepKind,
    /// pc of the instruction whose output is predicted.
    pub producer_pc: Word,
    pub value: Word,
}

#[derive(Debug, Clone, Copy)]
struct Member {
    pc: Word,
    enc: EncodedInstruction,
    inst: Instruction,
    /// Fetch target the PC speculator promised after this member, when the
    /// group continues past it.
    predicted_next: Option<Word>,
}

/// A planned issue group; `members.len()` is the issue count `m`.
#[derive(Debug, Clone)]
pub struct IssuePlan {
    members: Vec<Member>,
    pub predictions: Vec<UsedPrediction>,
    /// Why the group closed early, if a stall did it.
    pub stall: Option<StallReason>,
}

impl IssuePlan {
    pub fn m(&self) -> usize {
        self.members.len()
    }

    pub fn pcs(&self) -> Vec<Word> {
        self.members.iter().map(|m| m.pc).collect()
    }
}

fn is_memory_op(op: Opcode) -> bool {
    op.is_memory()
}

/// Would committing `inst` disturb the mirror value of `elem`?
fn dirties(inst: &Instruction, predicted_next: Option<Word>, pc: Word, elem: CandidateStateId) -> bool {
    match elem {
        CandidateStateId::Pc => false, // a wire off the fetch pc, never stale
        CandidateStateId::Gpr(k) => inst.dest() == Some(k),
        CandidateStateId::LastLoad(_) => inst.opcode == Opcode::Lw,
        CandidateStateId::LastStoreAddr(_) => inst.opcode == Opcode::Sw,
        CandidateStateId::LastBranch => {
            inst.opcode.is_control()
                && predicted_next.map_or(true, |n| n != pc.wrapping_add(1))
        }
    }
}

struct Planner<'a> {
    program: &'a Program,
    state: &'a ProcessorState,
    mirror: &'a MirrorState,
    bundle: &'a PredictorBundle,
    config: &'a SuperscalarConfig,
    members: Vec<Member>,
    predictions: Vec<UsedPrediction>,
}

impl<'a> Planner<'a> {
    /// A prediction for `producer` (at group position `pos`) reads one
    /// buffer slot; the read is usable only if no earlier member dirtied it.
    fn slot_value(&self, rank: u8, producer_pc: Word, pos: usize) -> Option<Word> {
        let elem = CandidateStateId::from_rank(rank as usize).unwrap();
        for m in &self.members[..pos] {
            if dirties(&m.inst, m.predicted_next, m.pc, elem) {
                return None;
            }
        }
        self.mirror.value(elem, producer_pc)
    }

    /// Last redirecting transfer visible to position `pos`: the latest
    /// in-group redirect, else the committed one.
    fn last_redirect_source(&self, pos: usize) -> Option<Word> {
        for m in self.members[..pos].iter().rev() {
            if m.inst.opcode.is_control() {
                if let Some(n) = m.predicted_next {
                    if n != m.pc.wrapping_add(1) {
                        return Some(m.pc);
                    }
                }
            }
        }
        self.mirror.last_redirect_source()
    }

    /// Predict the fetch target after the member at `pos`.
    fn predict_next_pc(&mut self, pos: usize) -> Result<Option<Word>, SimError> {
        let m = self.members[pos];
        let tag = if !m.inst.opcode.is_control() {
            crate::selector::ProducerTag { valid: true, id: crate::selector::PC_TAG_SEQUENTIAL }
        } else if self.last_redirect_source(pos) == Some(m.pc) {
            crate::selector::ProducerTag { valid: true, id: crate::selector::PC_TAG_REPEAT_BRANCH }
        } else {
            crate::selector::ProducerTag { valid: true, id: crate::selector::PC_TAG_FRESH_BRANCH }
        };
        let input = input_bits(m.enc.bits(), tag);
        match self.bundle.pc.speculator.logical_predict(input)? {
            LogicalPrediction::Abstain => Ok(None),
            LogicalPrediction::Value(v) => Ok(Some(v)),
            LogicalPrediction::Slot(rank) => Ok(self.slot_value(rank, m.pc, pos)),
        }
    }

    /// Predict the value `consumer_reads` will see from the in-group
    /// producer at `prod_pos`. `None` means stall.
    fn predict_operand(&mut self, prod_pos: usize) -> Result<Option<(DepKind, Word)>, SimError> {
        let p = self.members[prod_pos];
        if p.inst.opcode == Opcode::Lw {
            // Loads only lead groups, so the address uses committed state.
            debug_assert_eq!(prod_pos, 0);
            let base = self.mirror.reg(p.inst.rs1);
            let addr = base.wrapping_add(p.inst.imm as Word);
            let tag = if (addr as usize) < crate::isa::MEM_WORDS {
                self.mirror.mem_tag(addr)
            } else {
                crate::selector::ProducerTag::INVALID
            };
            let input = input_bits(p.enc.bits(), tag);
            match self.bundle.mem.speculator.logical_predict(input)? {
                LogicalPrediction::Abstain => Ok(None),
                LogicalPrediction::Value(v) => Ok(Some((DepKind::Mem, v))),
                LogicalPrediction::Slot(rank) => {
                    Ok(self.slot_value(rank, p.pc, prod_pos).map(|v| (DepKind::Mem, v)))
                }
            }
        } else {
            let tag = self.mirror.gpr_tag(p.inst.rd);
            let input = input_bits(p.enc.bits(), tag);
            match self.bundle.gpr.speculator.logical_predict(input)? {
                LogicalPrediction::Abstain => Ok(None),
                LogicalPrediction::Value(v) => Ok(Some((DepKind::Gpr, v))),
                LogicalPrediction::Slot(rank) => {
                    Ok(self.slot_value(rank, p.pc, prod_pos).map(|v| (DepKind::Gpr, v)))
                }
            }
        }
    }

    fn most_recent_writer(&self, reg: u8, before: usize) -> Option<usize> {
        (0..before).rev().find(|&i| self.members[i].inst.dest() == Some(reg))
    }

    fn plan(mut self) -> Result<IssuePlan, SimError> {
        let first_pc = self.state.pc;
        let first_enc = self.program.fetch(first_pc)?;
        let first = decode(first_enc)?;
        self.members.push(Member { pc: first_pc, enc: first_enc, inst: first, predicted_next: None });
        if first.opcode == Opcode::Halt {
            return Ok(IssuePlan { members: self.members, predictions: self.predictions, stall: None });
        }
        let mut stall = None;
        while self.members.len() < self.config.p {
            let pos = self.members.len() - 1;
            // Fetch gate: predict the transition out of the current tail.
            let Some(next_pc) = self.predict_next_pc(pos)? else {
                stall = Some(StallReason::Control);
                break;
            };
            let Ok(enc) = self.program.fetch(next_pc) else {
                stall = Some(StallReason::Control);
                break;
            };
            let Ok(inst) = decode(enc) else {
                stall = Some(StallReason::Control);
                break;
            };
            // Structural: multi-cycle instructions only lead.
            if latency_of(inst.opcode) > 1 {
                stall = Some(StallReason::Structural);
                break;
            }
            let mem_ops = self.members.iter().filter(|m| is_memory_op(m.inst.opcode)).count()
                + is_memory_op(inst.opcode) as usize;
            if mem_ops > self.config.mem_ports {
                stall = Some(StallReason::Structural);
                break;
            }
            // Data gate: every in-group RAW must be predicted.
            let mut joined_predictions = Vec::new();
            let mut blocked = None;
            for r in inst.reads() {
                if let Some(prod_pos) = self.most_recent_writer(r, self.members.len()) {
                    match self.predict_operand(prod_pos)? {
                        Some((kind, value)) => joined_predictions.push(UsedPrediction {
                            kind,
                            producer_pc: self.members[prod_pos].pc,
                            value,
                        }),
                        None => {
                            let p = &self.members[prod_pos];
                            blocked = Some(if p.inst.opcode == Opcode::Lw {
                                StallReason::MemRaw
                            } else {
                                StallReason::GprRaw
                            });
                            break;
                        }
                    }
                }
            }
            if let Some(reason) = blocked {
                stall = Some(reason);
                break;
            }
            // Joined: record the fetch prediction and any data predictions.
            self.members[pos].predicted_next = Some(next_pc);
            self.predictions.push(UsedPrediction {
                kind: DepKind::Pc,
                producer_pc: self.members[pos].pc,
                value: next_pc,
            });
            self.predictions.extend(joined_predictions);
            let halt = inst.opcode == Opcode::Halt;
            self.members.push(Member { pc: next_pc, enc, inst, predicted_next: None });
            if halt {
                break;
            }
        }
        Ok(IssuePlan { members: self.members, predictions: self.predictions, stall })
    }
}

/// Plan the next issue group from the committed architectural state.
pub fn plan_issue(
    program: &Program,
    state: &ProcessorState,
    mirror: &MirrorState,
    bundle: &PredictorBundle,
    config: &SuperscalarConfig,
) -> Result<IssuePlan, SimError> {
    assert!(config.p >= 1, "issue width must be at least 1");
    Planner {
        program,
        state,
        mirror,
        bundle,
        config,
        members: Vec::with_capacity(config.p),
        predictions: Vec::new(),
    }
    .plan()
}

/// Per-cycle record for reports and debugging.
#[derive(Debug, Clone)]
pub struct CycleRecord {
    pub cycle: u64,
    pub issued_m: usize,
    pub pcs: Vec<Word>,
    pub predictions_used: usize,
    pub stall_reason: Option<StallReason>,
    pub cost: u32,
}

/// Execute one planned group against the architectural state, checking
/// every consumed prediction against what execution actually produces.
pub fn step_group(
    state: &ProcessorState,
    mirror: &mut MirrorState,
    plan: &IssuePlan,
    config: &SuperscalarConfig,
) -> Result<(ProcessorState, u32, Vec<TraceRecord>), SimError> {
    let mut s = state.clone();
    let mut commits = Vec::with_capacity(plan.members.len());
    let mut cost = 0u32;
    for (pos, m) in plan.members.iter().enumerate() {
        if s.pc != m.pc {
            return Err(SimError::PredictorUnsound(format!(
                "fetch path diverged: planned pc {:#06x} at position {pos}, actual {:#06x}",
                m.pc, s.pc
            )));
        }
        let (next, fx) = step(&s, m.enc)?;
        if let Some(promised) = m.predicted_next {
            if fx.next_pc != promised {
                return Err(SimError::PredictorUnsound(format!(
                    "next-pc prediction for {:#06x} promised {:#06x}, actual {:#06x}",
                    m.pc, promised, fx.next_pc
                )));
            }
        }
        cost = cost.max(latency_of(m.inst.opcode));
        commits.push(TraceRecord {
            step: 0,
            pc_before: m.pc,
            inst: m.enc,
            reg_write: fx.reg_write,
            mem_write: fx.mem_write,
            next_pc: fx.next_pc,
            latency: latency_of(m.inst.opcode),
        });
        s = next;
        if s.halted {
            break;
        }
    }
    // Value predictions: each promised the producer's committed output.
    for pred in plan.predictions.iter().filter(|p| p.kind != DepKind::Pc) {
        let actual = commits
            .iter()
            .find(|c| c.pc_before == pred.producer_pc)
            .and_then(|c| c.reg_write.map(|(_, v)| v));
        match actual {
            Some(v) if v == pred.value => {}
            other => {
                return Err(SimError::PredictorUnsound(format!(
                    "{:?} prediction for producer at {:#06x} promised {:#06x}, actual {:?}",
                    pred.kind, pred.producer_pc, pred.value, other
                )))
            }
        }
    }
    if !plan.predictions.is_empty() {
        cost = cost.max(config.l_p);
    }
    for c in &commits {
        mirror.commit(c);
    }
    Ok((s, cost, commits))
}

/// Result of a superscalar run.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub final_state: ProcessorState,
    pub instructions: u64,
    pub cycles: u64,
    pub cycle_log: Vec<CycleRecord>,
    pub stalls: BTreeMap<StallReason, u64>,
    pub predictions_by_kind: BTreeMap<DepKind, u64>,
    /// Instructions that issued at a non-leading position (prediction-enabled).
    pub joins: u64,
    /// Instructions that failed to join and closed their group.
    pub stall_victims: u64,
}

impl SimResult {
    pub fn cpi(&self) -> Ratio<u64> {
        Ratio::new(self.cycles, self.instructions.max(1))
    }

    /// Measured per-run coverage over dependent instructions: the fraction
    /// of issue-gated instructions whose predictions all arrived.
    pub fn coverage_c(&self) -> Ratio<u64> {
        let dependent = self.joins + self.stall_victims;
        if dependent == 0 {
            Ratio::new(0, 1)
        } else {
            Ratio::new(self.joins, dependent)
        }
    }
}

/// Run `program` on the superscalar model until HALT or `max_cycles`.
pub fn run_superscalar(
    program: &Program,
    bundle: &PredictorBundle,
    config: &SuperscalarConfig,
    max_cycles: u64,
) -> Result<SimResult, SimError> {
    assert!(max_cycles > 0);
    let mut state = program.initial_state();
    let mut mirror = MirrorState::new(program.entry_pc);
    let mut cycles = 0u64;
    let mut instructions = 0u64;
    let mut cycle_log = Vec::new();
    let mut stalls: BTreeMap<StallReason, u64> = BTreeMap::new();
    let mut predictions_by_kind: BTreeMap<DepKind, u64> = BTreeMap::new();
    let mut joins = 0u64;
    let mut stall_victims = 0u64;
    while !state.halted {
        if cycles >= max_cycles {
            return Err(SimError::CycleLimitExceeded(max_cycles));
        }
        let plan = plan_issue(program, &state, &mirror, bundle, config)?;
        let (next, cost, commits) = step_group(&state, &mut mirror, &plan, config)?;
        let retired = commits.len();
        instructions += retired as u64;
        cycles += cost as u64;
        joins += retired.saturating_sub(1) as u64;
        if let Some(reason) = plan.stall {
            *stalls.entry(reason).or_default() += 1;
            stall_victims += 1;
        }
        for p in &plan.predictions {
            *predictions_by_kind.entry(p.kind).or_default() += 1;
        }
        cycle_log.push(CycleRecord {
            cycle: cycles,
            issued_m: retired,
            pcs: plan.pcs(),
            predictions_used: plan.predictions.len(),
            stall_reason: plan.stall,
            cost,
        });
        state = next;
    }
    Ok(SimResult {
        final_state: state,
        instructions,
        cycles,
        cycle_log,
        stalls,
        predictions_by_kind,
        joins,
        stall_victims,
    })
}

/// One architectural difference between the two models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Diff {
    Pc { single: Word, superscalar: Word },
    Halted { single: bool, superscalar: bool },
    Reg { index: u8, single: Word, superscalar: Word },
    Mem { addr: Word, single: Word, superscalar: Word },
    Retired { single: u64, superscalar: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub diffs: Vec<Diff>,
}

impl EquivalenceReport {
    pub fn ok(&self) -> bool {
        self.diffs.is_empty()
    }
}

/// Bit-compare the superscalar result against the single-cycle reference.
pub fn compare_reference(
    reference: &crate::isa::RunOutput,
    result: &SimResult,
) -> EquivalenceReport {
    let mut diffs = Vec::new();
    let a = &reference.final_state;
    let b = &result.final_state;
    if a.pc != b.pc {
        diffs.push(Diff::Pc { single: a.pc, superscalar: b.pc });
    }
    if a.halted != b.halted {
        diffs.push(Diff::Halted { single: a.halted, superscalar: b.halted });
    }
    for i in 0..crate::isa::NUM_REGS {
        if a.regs[i] != b.regs[i] {
            diffs.push(Diff::Reg { index: i as u8, single: a.regs[i], superscalar: b.regs[i] });
        }
    }
    for addr in 0..crate::isa::MEM_WORDS {
        if a.mem[addr] != b.mem[addr] {
            diffs.push(Diff::Mem {
                addr: addr as Word,
                single: a.mem[addr],
                superscalar: b.mem[addr],
            });
        }
    }
    if reference.instructions != result.instructions {
        diffs.push(Diff::Retired { single: reference.instructions, superscalar: result.instructions });
    }
    EquivalenceReport { diffs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;
    use crate::isa::run_single;
    use crate::selector::{replay_events, SelectedStateSet};
    use crate::speculator::{
        build_examples_from_events, train_speculator, verify_and_refine, DomainSpec,
        SpeculatorConfig,
    };

    /// Train a verified bundle on the program's own trace, pipeline-style.
    fn trained_bundle(program: &Program) -> PredictorBundle {
        let out = run_single(program, 200_000).unwrap();
        let events = replay_events(&out.trace).unwrap();
        let selected = SelectedStateSet::full_pool();
        let mut subs = Vec::new();
        for kind in [DepKind::Pc, DepKind::Gpr, DepKind::Mem] {
            let table = build_examples_from_events(&events, kind);
            let sub = if table.is_empty() {
                let mut sp = Speculator::abstain_everywhere(kind, selected.clone());
                let report =
                    verify_and_refine(&mut sp, &table, DomainSpec::Exhaustive).unwrap();
                SubPredictor { speculator: sp, verification: Some(report) }
            } else {
                let mut sp =
                    train_speculator(&table, &selected, &SpeculatorConfig::default()).unwrap();
                let report =
                    verify_and_refine(&mut sp, &table, DomainSpec::Exhaustive).unwrap();
                SubPredictor { speculator: sp, verification: Some(report) }
            };
            subs.push(sub);
        }
        let mem = subs.pop().unwrap();
        let gpr = subs.pop().unwrap();
        let pc = subs.pop().unwrap();
        PredictorBundle { pc, gpr, mem }
    }

    fn check_equivalence(program: &Program, bundle: &PredictorBundle, config: &SuperscalarConfig) -> (Ratio<u64>, Ratio<u64>) {
        let reference = run_single(program, 500_000).unwrap();
        let result = run_superscalar(program, bundle, config, 2_000_000).unwrap();
        let eq = compare_reference(&reference, &result);
        assert!(eq.ok(), "architectural divergence: {:?}", eq.diffs);
        (reference.cpi(), result.cpi())
    }

    #[test]
    fn raw_pair_stalls_without_gpr_prediction() {
        let p = assemble("ADD r1, r2, r3\nADD r4, r1, r1\nHALT\n").unwrap();
        // PC coverage but no GPR coverage: train PC only.
        let full = trained_bundle(&p);
        let bundle = full.without(DepKind::Gpr);
        let state = p.initial_state();
        let mirror = MirrorState::new(0);
        let plan =
            plan_issue(&p, &state, &mirror, &bundle, &SuperscalarConfig::default()).unwrap();
        assert_eq!(plan.m(), 1);
        assert_eq!(plan.stall, Some(StallReason::GprRaw));
    }

    #[test]
    fn raw_pair_issues_with_gpr_prediction() {
        let p = assemble("ADD r1, r2, r3\nADD r4, r1, r1\nHALT\n").unwrap();
        let bundle = trained_bundle(&p);
        let state = p.initial_state();
        let mirror = MirrorState::new(0);
        let plan =
            plan_issue(&p, &state, &mirror, &bundle, &SuperscalarConfig::default()).unwrap();
        assert_eq!(plan.m(), 2);
        assert!(plan.predictions.iter().any(|pr| pr.kind == DepKind::Gpr));
    }

    #[test]
    fn two_loads_stall_structurally() {
        let p = assemble("LW r1, 0(r0)\nLW r2, 1(r0)\nHALT\n").unwrap();
        let bundle = trained_bundle(&p);
        let state = p.initial_state();
        let mirror = MirrorState::new(0);
        let plan =
            plan_issue(&p, &state, &mirror, &bundle, &SuperscalarConfig::default()).unwrap();
        assert_eq!(plan.m(), 1);
        assert_eq!(plan.stall, Some(StallReason::Structural));
    }

    #[test]
    fn abstain_everywhere_bundle_matches_single_cycle_cpi() {
        let p = assemble(
            "ADDI r1, r0, 5\nADDI r2, r0, 6\nADD r3, r1, r2\nSW r3, 9(r0)\nLW r4, 9(r0)\nHALT\n",
        )
        .unwrap();
        let bundle = PredictorBundle::abstain_everywhere();
        let (cpi_single, cpi_super) =
            check_equivalence(&p, &bundle, &SuperscalarConfig { p: 4, ..Default::default() });
        assert_eq!(cpi_single, cpi_super, "no predictions means no parallelism");
    }

    #[test]
    fn dependency_free_alu_reaches_full_width() {
        // 16 independent ADDIs + HALT would leave a remainder; use 15 + HALT
        // so every group fills completely at p in {1, 2, 4}.
        let mut text = String::new();
        for i in 0..15 {
            text.push_str(&format!("ADDI r{}, r0, {}\n", 1 + (i % 7), i % 30));
        }
        text.push_str("HALT\n");
        let p = assemble(&text).unwrap();
        let bundle = trained_bundle(&p);
        for width in [1usize, 2, 4] {
            let config = SuperscalarConfig { p: width, ..Default::default() };
            let (cpi_single, cpi_super) = check_equivalence(&p, &bundle, &config);
            assert_eq!(cpi_single, Ratio::new(1, 1));
            assert_eq!(
                cpi_super,
                cpi_single / Ratio::new(width as u64, 1),
                "full-width issue at p={width}"
            );
        }
    }

    #[test]
    fn move_chain_speeds_up_with_trained_bundle() {
        let mut text = String::from("ADDI r1, r0, 9\n");
        for i in 0..20 {
            let rd = 1 + ((i + 1) % 7);
            let rs = 1 + (i % 7);
            text.push_str(&format!("ADD r{rd}, r{rs}, r0\n"));
        }
        text.push_str("HALT\n");
        let p = assemble(&text).unwrap();
        let bundle = trained_bundle(&p);
        let config = SuperscalarConfig { p: 2, ..Default::default() };
        let (cpi_single, cpi_super) = check_equivalence(&p, &bundle, &config);
        assert!(
            cpi_super < cpi_single,
            "move chain must speed up: single {cpi_single}, super {cpi_super}"
        );
        let result = run_superscalar(&p, &bundle, &config, 100_000).unwrap();
        assert!(result.joins > 0);
        assert!(result.predictions_by_kind[&DepKind::Gpr] > 0);
    }

    #[test]
    fn store_to_load_consumer_covered_by_mem_predictor() {
        // Each load reads a freshly stored value and its dependent move can
        // only pair with the load: the follower is a store, which cannot
        // join a group at a non-leading position.
        let text = "\
ADDI r1, r0, 21
SW r1, 5(r0)
LW r2, 5(r0)
ADD r3, r2, r0
SW r3, 6(r0)
LW r4, 6(r0)
ADD r5, r4, r0
HALT
";
        let p = assemble(text).unwrap();
        let bundle = trained_bundle(&p);
        let config = SuperscalarConfig { p: 2, ..Default::default() };
        let (cpi_single, cpi_super) = check_equivalence(&p, &bundle, &config);
        assert!(cpi_super < cpi_single);
        let result = run_superscalar(&p, &bundle, &config, 100_000).unwrap();
        assert!(result.predictions_by_kind.get(&DepKind::Mem).copied().unwrap_or(0) > 0);
        // Ablating the MEM predictor forfeits exactly that pairing.
        let ablated = run_superscalar(&p, &bundle.without(DepKind::Mem), &config, 100_000).unwrap();
        assert!(ablated.cpi() > cpi_super);
    }

    #[test]
    fn loop_with_jal_backedge_covered_by_pc_predictor() {
        let text = "\
ADDI r1, r0, 20
ADDI r2, r0, 0
loop: ADDI r2, r2, 1
ADDI r1, r1, -1
BEQ r1, r0, done
JAL r0, loop
done: HALT
";
        let p = assemble(text).unwrap();
        let bundle = trained_bundle(&p);
        let config = SuperscalarConfig { p: 2, ..Default::default() };
        let (cpi_single, cpi_super) = check_equivalence(&p, &bundle, &config);
        assert!(cpi_super < cpi_single, "JAL backedges should pair across iterations");
        let no_pc = run_superscalar(&p, &bundle.without(DepKind::Pc), &config, 100_000).unwrap();
        assert_eq!(no_pc.cpi(), cpi_single, "without PC predictions nothing pairs");
    }

    #[test]
    fn wrong_constant_slot_prediction_is_caught() {
        let p = assemble("ADDI r1, r0, 5\nADD r2, r1, r1\nHALT\n").unwrap();
        let full = trained_bundle(&p);
        // Replace the GPR speculator with one that always proposes GPR3,
        // whose buffered value (0) differs from the produced 5.
        let mut bundle = full.clone();
        bundle.gpr = SubPredictor {
            speculator: Speculator::constant_slot(
                DepKind::Gpr,
                SelectedStateSet::full_pool(),
                CandidateStateId::Gpr(3),
            ),
            verification: None,
        };
        match run_superscalar(&p, &bundle, &SuperscalarConfig::default(), 1_000) {
            Err(SimError::PredictorUnsound(_)) => {}
            other => panic!("expected PredictorUnsound, got {other:?}"),
        }
    }

    #[test]
    fn verified_bundles_never_trip_the_soundness_check() {
        let programs = [
            "ADDI r1, r0, 3\nloop: ADDI r1, r1, -1\nBNE r1, r0, loop\nHALT\n",
            "ADDI r1, r0, 9\nADD r2, r1, r0\nMUL r3, r2, r1\nSW r3, 4(r0)\nLW r4, 4(r0)\nADD r5, r4, r0\nHALT\n",
        ];
        for text in programs {
            let p = assemble(text).unwrap();
            let bundle = trained_bundle(&p);
            for width in [1usize, 2, 4] {
                let config = SuperscalarConfig { p: width, ..Default::default() };
                check_equivalence(&p, &bundle, &config);
            }
        }
    }

    #[test]
    fn cpi_sandwich_holds() {
        let text = "\
ADDI r1, r0, 12
ADDI r2, r0, 8
MUL r3, r1, r2
ADD r4, r3, r0
SW r4, 7(r0)
LW r5, 7(r0)
ADD r6, r5, r0
SUB r7, r6, r1
HALT
";
        let p = assemble(text).unwrap();
        let bundle = trained_bundle(&p);
        for width in [1usize, 2, 4] {
            let config = SuperscalarConfig { p: width, ..Default::default() };
            let (cpi_single, cpi_super) = check_equivalence(&p, &bundle, &config);
            assert!(cpi_super <= cpi_single);
            assert!(cpi_super >= cpi_single / Ratio::new(width as u64, 1));
        }
    }

    #[test]
    fn group_cost_is_max_latency() {
        // MUL leads, a dependent move joins: cost must be MUL's 3.
        let p = assemble("ADDI r1, r0, 4\nMUL r2, r1, r1\nADDI r3, r0, 2\nHALT\n").unwrap();
        let bundle = trained_bundle(&p);
        let result =
            run_superscalar(&p, &bundle, &SuperscalarConfig { p: 2, ..Default::default() }, 1_000)
                .unwrap();
        let mul_group = result
            .cycle_log
            .iter()
            .find(|c| c.pcs.contains(&1))
            .expect("MUL issues somewhere");
        assert_eq!(mul_group.cost, 3);
    }

    #[test]
    fn compare_reference_reports_differences() {
        let p = assemble("ADDI r1, r0, 5\nHALT\n").unwrap();
        let reference = run_single(&p, 100).unwrap();
        let mut result =
            run_superscalar(&p, &PredictorBundle::abstain_everywhere(), &SuperscalarConfig::default(), 100)
                .unwrap();
        assert!(compare_reference(&reference, &result).ok());
        result.final_state.regs[1] = 99;
        let report = compare_reference(&reference, &result);
        assert_eq!(report.diffs, vec![Diff::Reg { index: 1, single: 5, superscalar: 99 }]);
    }

    #[test]
    fn m_bounded_by_p() {
        let mut text = String::new();
        for i in 0..12 {
            text.push_str(&format!("ADDI r{}, r0, {}\n", 1 + (i % 7), i));
        }
        text.push_str("HALT\n");
        let p = assemble(&text).unwrap();
        let bundle = trained_bundle(&p);
        for width in [1usize, 2, 3, 4] {
            let result = run_superscalar(
                &p,
                &bundle,
                &SuperscalarConfig { p: width, ..Default::default() },
                10_000,
            )
            .unwrap();
            assert!(result.cycle_log.iter().all(|c| c.issued_m >= 1 && c.issued_m <= width));
        }
    }
}
