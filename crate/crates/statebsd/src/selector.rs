//! State selection: mine dependency events out of traces, measure how often
//! a candidate set of processor-state elements would have supplied the
//! dependent value (reusability), and search for the most reusable set by
//! simulated annealing.
//!
//! The candidate pool is fixed: the fetch-pc incrementer, the eight
//! general-purpose registers, the four most recent loaded values, the four
//! most recent stored values, and the last resolved control-transfer target.

use crate::isa::{decode, EncodedInstruction, Opcode, TraceRecord, Word, MEM_WORDS, NUM_REGS};
use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectorError {
    #[error("corrupt trace: {0}")]
    CorruptTrace(String),
    #[error("no dependency events in the workload")]
    NoDependencies,
    #[error("candidate pool exhausted: no non-member to swap in")]
    PoolExhausted,
}

/// How many recent loads/stores the recent-value slots remember.
pub const RECENT_SLOTS: usize = 4;

/// One element of the candidate pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CandidateStateId {
    Pc,
    Gpr(u8),
    LastLoad(u8),
    LastStoreAddr(u8),
    LastBranch,
}

/// Pool size: PC + 8 GPRs + 4 recent loads + 4 recent stores + last branch.
pub const POOL_SIZE: usize = 18;

impl CandidateStateId {
    /// Fixed pool ordering; ranks are stable across configurations so that
    /// growing a selected set never renumbers existing slots.
    pub fn rank(self) -> usize {
        match self {
            CandidateStateId::Pc => 0,
            CandidateStateId::Gpr(k) => 1 + k as usize,
            CandidateStateId::LastLoad(k) => 9 + k as usize,
            CandidateStateId::LastStoreAddr(k) => 13 + k as usize,
            CandidateStateId::LastBranch => 17,
        }
    }

    pub fn from_rank(rank: usize) -> Option<Self> {
        Some(match rank {
            0 => CandidateStateId::Pc,
            1..=8 => CandidateStateId::Gpr(rank as u8 - 1),
            9..=12 => CandidateStateId::LastLoad(rank as u8 - 9),
            13..=16 => CandidateStateId::LastStoreAddr(rank as u8 - 13),
            17 => CandidateStateId::LastBranch,
            _ => return None,
        })
    }

    pub fn pool() -> impl Iterator<Item = CandidateStateId> {
        (0..POOL_SIZE).map(|r| CandidateStateId::from_rank(r).unwrap())
    }

    pub fn name(self) -> String {
        match self {
            CandidateStateId::Pc => "PC".into(),
            CandidateStateId::Gpr(k) => format!("GPR{k}"),
            CandidateStateId::LastLoad(k) => format!("LASTLOAD{k}"),
            CandidateStateId::LastStoreAddr(k) => format!("LASTSTOREADDR{k}"),
            CandidateStateId::LastBranch => "LASTBRANCH".into(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        CandidateStateId::pool().find(|c| c.name() == s)
    }
}

/// A dependency kind: next-pc, register RAW, or load value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DepKind {
    Pc,
    Gpr,
    Mem,
}

/// One dynamic dependency mined from a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DependencyEvent {
    pub consumer_step: u32,
    pub kind: DepKind,
    /// The pool element that held the needed value at consume time, if any.
    pub producing_element: Option<CandidateStateId>,
    pub needed_value: Word,
}

/// Producer tag fed to the speculator alongside the instruction bits. The
/// id space is kind-local (at most 16 values) and always computable before
/// the producer executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProducerTag {
    pub valid: bool,
    pub id: u8,
}

impl ProducerTag {
    pub const INVALID: ProducerTag = ProducerTag { valid: false, id: 0 };
}

/// PC-kind tag ids.
pub const PC_TAG_SEQUENTIAL: u8 = 0;
pub const PC_TAG_REPEAT_BRANCH: u8 = 1;
pub const PC_TAG_FRESH_BRANCH: u8 = 2;

/// Snapshot of all pool-element values at one instant; `None` is invalid
/// (not yet defined).
pub type MirrorSnapshot = [Option<Word>; POOL_SIZE];

/// A dependency event enriched with everything the speculator needs: the
/// producer's instruction word, the producer tag, and the mirror snapshot
/// taken just before the producer executed.
#[derive(Debug, Clone)]
pub struct EventAt {
    pub kind: DepKind,
    pub producer_step: u32,
    pub consumer_step: u32,
    pub inst: EncodedInstruction,
    pub tag: ProducerTag,
    pub needed: Word,
    pub producing_element: Option<CandidateStateId>,
    pub mirror: MirrorSnapshot,
}

impl EventAt {
    pub fn dependency_event(&self) -> DependencyEvent {
        DependencyEvent {
            consumer_step: self.consumer_step,
            kind: self.kind,
            producing_element: self.producing_element,
            needed_value: self.needed,
        }
    }
}

/// Live mirror of the candidate pool, reconstructed by replaying commits.
///
/// Both trace replay (training) and the superscalar simulator (runtime)
/// drive this type, so slot values are identical across the two by
/// construction.
#[derive(Debug, Clone)]
pub struct MirrorState {
    regs: [Word; NUM_REGS],
    /// Latched fetch-incrementer value: (pc of the pending instruction) + 1.
    pc_plus_one: Word,
    last_loads: Vec<Word>,
    last_stores: Vec<Word>,
    /// Most recent redirecting control transfer (taken branch or jump):
    /// (source pc, resolved target). Not-taken branches fall through and do
    /// not disturb it, so loop backedges survive interleaved guard branches.
    last_branch: Option<(Word, Word)>,
    /// Sequence bookkeeping for producer-tag computation.
    access_seq: u64,
    store_count: u64,
    load_count: u64,
    last_store: [Option<(u64, u64)>; MEM_WORDS], // addr -> (store index, access seq)
    last_load: [Option<(u64, u64)>; MEM_WORDS],  // addr -> (load index, access seq)
    /// Data memory as learned from the trace (stores and observed loads).
    mem_known: [Option<Word>; MEM_WORDS],
}

impl MirrorState {
    pub fn new(entry_pc: Word) -> Self {
        MirrorState {
            regs: [0; NUM_REGS],
            pc_plus_one: entry_pc.wrapping_add(1),
            last_loads: Vec::new(),
            last_stores: Vec::new(),
            last_branch: None,
            access_seq: 0,
            store_count: 0,
            load_count: 0,
            last_store: [None; MEM_WORDS],
            last_load: [None; MEM_WORDS],
            mem_known: [None; MEM_WORDS],
        }
    }

    /// Value of one pool element, `None` while undefined. `producer_pc` is
    /// the pc of the instruction whose output is being predicted: the PC
    /// element is the fetch incrementer, a wire, not a latch.
    pub fn value(&self, elem: CandidateStateId, producer_pc: Word) -> Option<Word> {
        match elem {
            CandidateStateId::Pc => Some(producer_pc.wrapping_add(1)),
            CandidateStateId::Gpr(k) => Some(self.regs[k as usize]),
            CandidateStateId::LastLoad(k) => self.last_loads.get(k as usize).copied(),
            CandidateStateId::LastStoreAddr(k) => self.last_stores.get(k as usize).copied(),
            CandidateStateId::LastBranch => self.last_branch.map(|(_, t)| t),
        }
    }

    pub fn snapshot(&self, producer_pc: Word) -> MirrorSnapshot {
        let mut snap = [None; POOL_SIZE];
        for elem in CandidateStateId::pool() {
            snap[elem.rank()] = self.value(elem, producer_pc);
        }
        snap
    }

    pub fn reg(&self, k: u8) -> Word {
        self.regs[k as usize]
    }

    pub fn known_mem(&self, addr: Word) -> Option<Word> {
        self.mem_known[addr as usize]
    }

    /// Source pc of the most recent redirecting transfer, if any.
    pub fn last_redirect_source(&self) -> Option<Word> {
        self.last_branch.map(|(src, _)| src)
    }

    /// Tag for a PC-kind prediction of `inst`'s next pc.
    pub fn pc_tag(&self, inst: EncodedInstruction, producer_pc: Word) -> ProducerTag {
        let control = decode(inst).map(|i| i.opcode.is_control()).unwrap_or(false);
        let id = if !control {
            PC_TAG_SEQUENTIAL
        } else if self.last_branch.map(|(src, _)| src) == Some(producer_pc) {
            PC_TAG_REPEAT_BRANCH
        } else {
            PC_TAG_FRESH_BRANCH
        };
        ProducerTag { valid: true, id }
    }

    /// Tag for a GPR-kind prediction: the produced register's index.
    pub fn gpr_tag(&self, producer_rd: u8) -> ProducerTag {
        ProducerTag { valid: true, id: producer_rd }
    }

    /// Tag for a MEM-kind prediction of a load from `addr`: the recency rank
    /// of the most recent access to that address. Ids 0..=3 are store ranks,
    /// 4..=7 load ranks.
    pub fn mem_tag(&self, addr: Word) -> ProducerTag {
        let store = self.last_store[addr as usize];
        let load = self.last_load[addr as usize];
        let newest = match (store, load) {
            (Some((_, s)), Some((_, l))) => {
                if s > l {
                    store.map(|x| (x, true))
                } else {
                    load.map(|x| (x, false))
                }
            }
            (Some(_), None) => store.map(|x| (x, true)),
            (None, Some(_)) => load.map(|x| (x, false)),
            (None, None) => None,
        };
        match newest {
            Some(((idx, _), is_store)) => {
                let rank = if is_store {
                    self.store_count - 1 - idx
                } else {
                    self.load_count - 1 - idx
                };
                if (rank as usize) < RECENT_SLOTS {
                    let id = if is_store { rank as u8 } else { RECENT_SLOTS as u8 + rank as u8 };
                    ProducerTag { valid: true, id }
                } else {
                    ProducerTag::INVALID
                }
            }
            None => ProducerTag::INVALID,
        }
    }

    /// The pool element a valid MEM tag refers to.
    pub fn mem_tag_element(tag: ProducerTag) -> Option<CandidateStateId> {
        if !tag.valid {
            return None;
        }
        if (tag.id as usize) < RECENT_SLOTS {
            Some(CandidateStateId::LastStoreAddr(tag.id))
        } else if (tag.id as usize) < 2 * RECENT_SLOTS {
            Some(CandidateStateId::LastLoad(tag.id - RECENT_SLOTS as u8))
        } else {
            None
        }
    }

    /// Commit one retired instruction into the mirror.
    pub fn commit(&mut self, rec: &TraceRecord) {
        if let Some((rd, value)) = rec.reg_write {
            if rd != 0 {
                self.regs[rd as usize] = value;
            }
        }
        let op = decode(rec.inst).map(|i| i.opcode);
        if let Ok(op) = op {
            match op {
                Opcode::Lw => {
                    // Loaded value: from the register write, or from memory
                    // knowledge when the destination was r0.
                    let addr = self.load_addr(rec);
                    let value = rec
                        .reg_write
                        .map(|(_, v)| v)
                        .or_else(|| addr.and_then(|a| self.mem_known[a as usize]));
                    if let Some(v) = value {
                        self.last_loads.insert(0, v);
                        self.last_loads.truncate(RECENT_SLOTS);
                        if let Some(a) = addr {
                            self.mem_known[a as usize] = Some(v);
                        }
                    }
                    if let Some(a) = addr {
                        self.last_load[a as usize] = Some((self.load_count, self.access_seq));
                    }
                    self.load_count += 1;
                    self.access_seq += 1;
                }
                Opcode::Sw => {
                    if let Some((addr, value)) = rec.mem_write {
                        self.last_stores.insert(0, value);
                        self.last_stores.truncate(RECENT_SLOTS);
                        self.mem_known[addr as usize] = Some(value);
                        self.last_store[addr as usize] = Some((self.store_count, self.access_seq));
                    }
                    self.store_count += 1;
                    self.access_seq += 1;
                }
                op if op.is_control() => {
                    if rec.next_pc != rec.pc_before.wrapping_add(1) {
                        self.last_branch = Some((rec.pc_before, rec.next_pc));
                    }
                }
                _ => {}
            }
        }
        self.pc_plus_one = rec.next_pc.wrapping_add(1);
    }

    fn load_addr(&self, rec: &TraceRecord) -> Option<Word> {
        let i = decode(rec.inst).ok()?;
        if i.opcode != Opcode::Lw {
            return None;
        }
        let addr = self.regs[i.rs1 as usize].wrapping_add(i.imm as Word);
        ((addr as usize) < MEM_WORDS).then_some(addr)
    }
}

/// Replay a trace and enumerate every dependency event, enriched with the
/// speculator-facing inputs and a pre-producer mirror snapshot.
pub fn replay_events(trace: &[TraceRecord]) -> Result<Vec<EventAt>, SelectorError> {
    crate::trace::validate(trace).map_err(|e| SelectorError::CorruptTrace(e.to_string()))?;
    let entry = trace.first().map(|r| r.pc_before).unwrap_or(0);
    let mut mirror = MirrorState::new(entry);
    let mut events = Vec::new();
    // Pre-step snapshots and tags, indexed by step.
    let mut snapshots: Vec<MirrorSnapshot> = Vec::with_capacity(trace.len());
    let mut pc_tags: Vec<ProducerTag> = Vec::with_capacity(trace.len());
    let mut last_writer: [Option<u32>; NUM_REGS] = [None; NUM_REGS];
    let mut last_branch_before: Vec<Option<(Word, Word)>> = Vec::with_capacity(trace.len());

    for rec in trace {
        let step = rec.step;
        let inst = decode(rec.inst).map_err(|e| SelectorError::CorruptTrace(e.to_string()))?;
        snapshots.push(mirror.snapshot(rec.pc_before));
        pc_tags.push(mirror.pc_tag(rec.inst, rec.pc_before));
        last_branch_before.push(mirror.last_branch);

        // GPR events: discovered at the consumer, snapshotted at the producer.
        for r in inst.reads() {
            if let Some(p) = last_writer[r as usize] {
                let prec = &trace[p as usize];
                let pinst = decode(prec.inst).unwrap();
                if pinst.opcode == Opcode::Lw {
                    continue; // load-value dependencies are the MEM kind's
                }
                let needed = prec.reg_write.expect("producer wrote a register").1;
                events.push(EventAt {
                    kind: DepKind::Gpr,
                    producer_step: p,
                    consumer_step: step,
                    inst: prec.inst,
                    tag: mirror.gpr_tag(pinst.rd),
                    needed,
                    producing_element: Some(CandidateStateId::Gpr(r)),
                    mirror: snapshots[p as usize],
                });
            }
        }

        // MEM events: one per load whose value we can reconstruct.
        if inst.opcode == Opcode::Lw {
            let addr = mirror.load_addr(rec);
            let tag = addr.map(|a| mirror.mem_tag(a)).unwrap_or(ProducerTag::INVALID);
            let needed = rec
                .reg_write
                .map(|(_, v)| v)
                .or_else(|| addr.and_then(|a| mirror.known_mem(a)));
            if let Some(needed) = needed {
                events.push(EventAt {
                    kind: DepKind::Mem,
                    producer_step: step,
                    consumer_step: step,
                    inst: rec.inst,
                    tag,
                    needed,
                    producing_element: MirrorState::mem_tag_element(tag),
                    mirror: snapshots[step as usize],
                });
            }
        }

        if let Some((rd, _)) = rec.reg_write {
            last_writer[rd as usize] = Some(step);
        }
        mirror.commit(rec);
    }

    // PC events: every committed transition with a following instruction.
    for (j, rec) in trace.iter().enumerate() {
        if j + 1 >= trace.len() {
            break;
        }
        let needed = rec.next_pc;
        let producing_element = if needed == rec.pc_before.wrapping_add(1) {
            Some(CandidateStateId::Pc)
        } else if last_branch_before[j] == Some((rec.pc_before, needed)) {
            Some(CandidateStateId::LastBranch)
        } else {
            None
        };
        events.push(EventAt {
            kind: DepKind::Pc,
            producer_step: rec.step,
            consumer_step: rec.step + 1,
            inst: rec.inst,
            tag: pc_tags[j],
            needed,
            producing_element,
            mirror: snapshots[j],
        });
    }

    events.sort_by_key(|e| (e.consumer_step, e.kind, e.producer_step));
    Ok(events)
}

/// Project a trace's dependency events into the selector's view.
pub fn extract_dependencies(trace: &[TraceRecord]) -> Result<Vec<DependencyEvent>, SelectorError> {
    Ok(replay_events(trace)?.iter().map(EventAt::dependency_event).collect())
}

/// A chosen subset of the candidate pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectedStateSet {
    pub members: BTreeSet<CandidateStateId>,
    pub capacity: usize,
}

impl SelectedStateSet {
    pub fn new(members: BTreeSet<CandidateStateId>, capacity: usize) -> Self {
        assert!(members.len() <= capacity, "selected set exceeds capacity");
        SelectedStateSet { members, capacity }
    }

    pub fn full_pool() -> Self {
        SelectedStateSet { members: CandidateStateId::pool().collect(), capacity: POOL_SIZE }
    }

    pub fn contains(&self, elem: CandidateStateId) -> bool {
        self.members.contains(&elem)
    }

    pub fn member_names(&self) -> Vec<String> {
        self.members.iter().map(|m| m.name()).collect()
    }
}

/// Fraction of events whose producing element lies in the selected set.
pub fn reusability(
    s: &SelectedStateSet,
    events: &[DependencyEvent],
) -> Result<Ratio<u64>, SelectorError> {
    if events.is_empty() {
        return Err(SelectorError::NoDependencies);
    }
    let matched = events
        .iter()
        .filter(|e| e.producing_element.map_or(false, |p| s.contains(p)))
        .count() as u64;
    Ok(Ratio::new(matched, events.len() as u64))
}

/// Energy the annealer minimizes: 1 - reusability.
pub fn energy(s: &SelectedStateSet, events: &[DependencyEvent]) -> Result<Ratio<u64>, SelectorError> {
    Ok(Ratio::new(1, 1) - reusability(s, events)?)
}

/// Swap exactly one member for one non-member, both chosen uniformly.
pub fn neighbor(
    s: &SelectedStateSet,
    rng: &mut impl Rng,
) -> Result<SelectedStateSet, SelectorError> {
    let members: Vec<_> = s.members.iter().copied().collect();
    let non_members: Vec<_> =
        CandidateStateId::pool().filter(|c| !s.members.contains(c)).collect();
    if non_members.is_empty() {
        return Err(SelectorError::PoolExhausted);
    }
    let out = members[rng.gen_range(0..members.len())];
    let inn = non_members[rng.gen_range(0..non_members.len())];
    let mut next = s.members.clone();
    next.remove(&out);
    next.insert(inn);
    Ok(SelectedStateSet::new(next, s.capacity))
}

/// Annealing schedule and seed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AnnealSchedule {
    pub t0: f64,
    pub alpha: f64,
    pub resample_threshold: u32,
    pub max_iters: u32,
    pub seed: u64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule { t0: 0.25, alpha: 0.95, resample_threshold: 64, max_iters: 2000, seed: 0 }
    }
}

/// Metropolis acceptance probability for an energy increase `delta_e` at
/// temperature `t`. May exceed 1 for negative deltas (always accepted).
pub fn acceptance_probability(delta_e: f64, t: f64) -> f64 {
    (-delta_e / t).exp()
}

/// One accepted-step record of an annealing run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyPoint {
    pub iter: u32,
    pub energy: Ratio<u64>,
    pub best: Ratio<u64>,
}

/// Simulated annealing over selected sets of the given capacity.
///
/// Starts from a seeded random set, proposes single-swap neighbors, accepts
/// improvements outright and regressions with probability
/// `exp(-dE/T)`, cools `T` geometrically on acceptance, and stops after
/// `resample_threshold` consecutive rejections or `max_iters` accepted
/// steps. Returns the best set seen and the accepted-step energy log.
pub fn anneal(
    events: &[DependencyEvent],
    capacity: usize,
    sched: &AnnealSchedule,
) -> Result<(SelectedStateSet, Vec<EnergyPoint>), SelectorError> {
    assert!(capacity >= 1, "capacity must be at least 1");
    if events.is_empty() {
        return Err(SelectorError::NoDependencies);
    }
    if capacity >= POOL_SIZE {
        let s = SelectedStateSet::full_pool();
        let e = energy(&s, events)?;
        return Ok((s, vec![EnergyPoint { iter: 0, energy: e, best: e }]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);
    let mut ranks: Vec<usize> = (0..POOL_SIZE).collect();
    ranks.shuffle(&mut rng);
    let members: BTreeSet<_> = ranks[..capacity]
        .iter()
        .map(|&r| CandidateStateId::from_rank(r).unwrap())
        .collect();
    let mut current = SelectedStateSet::new(members, capacity);
    let mut current_e = energy(&current, events)?;
    let mut best = current.clone();
    let mut best_e = current_e;
    let mut t = sched.t0;
    let mut history = vec![EnergyPoint { iter: 0, energy: current_e, best: best_e }];

    for iter in 1..=sched.max_iters {
        let mut rejections = 0;
        let accepted = loop {
            let cand = neighbor(&current, &mut rng)?;
            let cand_e = energy(&cand, events)?;
            let accept = if cand_e < current_e {
                true
            } else {
                let delta = ratio_to_f64(cand_e) - ratio_to_f64(current_e);
                rng.gen::<f64>() < acceptance_probability(delta, t)
            };
            if accept {
                break Some((cand, cand_e));
            }
            rejections += 1;
            if rejections >= sched.resample_threshold {
                break None;
            }
        };
        match accepted {
            Some((cand, cand_e)) => {
                current = cand;
                current_e = cand_e;
                if cand_e < best_e {
                    best = current.clone();
                    best_e = cand_e;
                }
                t *= sched.alpha;
                history.push(EnergyPoint { iter, energy: current_e, best: best_e });
                if best_e == Ratio::new(0, 1) {
                    break; // global optimum reached
                }
            }
            None => break, // resample threshold hit
        }
    }
    Ok((best, history))
}

pub fn ratio_to_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Grow `base` by greedily adding the elements that raise reusability the
/// most (ties toward lower rank), giving nested sets for capacity sweeps.
pub fn grow_selection(
    base: &SelectedStateSet,
    capacity: usize,
    events: &[DependencyEvent],
) -> SelectedStateSet {
    assert!(capacity >= base.members.len());
    let mut members = base.members.clone();
    while members.len() < capacity.min(POOL_SIZE) {
        let mut best: Option<(u64, usize)> = None;
        for cand in CandidateStateId::pool().filter(|c| !members.contains(c)) {
            let gain = events
                .iter()
                .filter(|e| e.producing_element == Some(cand))
                .count() as u64;
            let better = match best {
                None => true,
                Some((bg, br)) => gain > bg || (gain == bg && cand.rank() < br),
            };
            if better {
                best = Some((gain, cand.rank()));
            }
        }
        let (_, rank) = best.expect("pool not exhausted");
        members.insert(CandidateStateId::from_rank(rank).unwrap());
    }
    SelectedStateSet::new(members, capacity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;
    use crate::isa::run_single;

    fn events_of(text: &str) -> Vec<DependencyEvent> {
        let p = assemble(text).unwrap();
        let out = run_single(&p, 10_000).unwrap();
        extract_dependencies(&out.trace).unwrap()
    }

    fn gpr_events(events: &[DependencyEvent]) -> Vec<&DependencyEvent> {
        events.iter().filter(|e| e.kind == DepKind::Gpr).collect()
    }

    #[test]
    fn pool_is_exactly_18_and_ranks_roundtrip() {
        let pool: Vec<_> = CandidateStateId::pool().collect();
        assert_eq!(pool.len(), POOL_SIZE);
        for (i, c) in pool.iter().enumerate() {
            assert_eq!(c.rank(), i);
            assert_eq!(CandidateStateId::from_rank(i), Some(*c));
            assert_eq!(CandidateStateId::parse(&c.name()), Some(*c));
        }
    }

    #[test]
    fn raw_chain_yields_one_gpr_event() {
        let events = events_of("ADDI r1, r0, 5\nADD r2, r1, r1\nHALT\n");
        let gpr = gpr_events(&events);
        assert_eq!(gpr.len(), 1);
        assert_eq!(gpr[0].producing_element, Some(CandidateStateId::Gpr(1)));
        assert_eq!(gpr[0].needed_value, 5);
    }

    #[test]
    fn disjoint_alu_ops_yield_zero_gpr_events() {
        let events = events_of("ADDI r1, r0, 1\nADDI r2, r0, 2\nADDI r3, r0, 3\nHALT\n");
        assert!(gpr_events(&events).is_empty());
    }

    #[test]
    fn store_load_yields_mem_event_with_recent_store_slot() {
        let events = events_of("ADDI r1, r0, 21\nSW r1, 0(r0)\nLW r2, 0(r0)\nHALT\n");
        let mem: Vec<_> = events.iter().filter(|e| e.kind == DepKind::Mem).collect();
        assert_eq!(mem.len(), 1);
        assert_eq!(mem[0].producing_element, Some(CandidateStateId::LastStoreAddr(0)));
        assert_eq!(mem[0].needed_value, 21);
    }

    #[test]
    fn load_after_load_uses_recent_load_slot() {
        let events = events_of(".data 7 9\nLW r1, 7(r0)\nLW r2, 7(r0)\nHALT\n");
        let mem: Vec<_> = events.iter().filter(|e| e.kind == DepKind::Mem).collect();
        assert_eq!(mem.len(), 2);
        assert_eq!(mem[0].producing_element, None); // first touch of the address
        assert_eq!(mem[1].producing_element, Some(CandidateStateId::LastLoad(0)));
    }

    #[test]
    fn pc_events_cover_every_transition() {
        let out = run_single(&assemble("ADDI r1, r0, 1\nADDI r2, r0, 2\nHALT\n").unwrap(), 100).unwrap();
        let events = extract_dependencies(&out.trace).unwrap();
        let pc: Vec<_> = events.iter().filter(|e| e.kind == DepKind::Pc).collect();
        assert_eq!(pc.len(), 2); // two transitions into steps 1 and 2
        assert!(pc.iter().all(|e| e.producing_element == Some(CandidateStateId::Pc)));
    }

    #[test]
    fn repeated_taken_branch_attributed_to_lastbranch() {
        let text = "\
ADDI r1, r0, 3
loop: ADDI r1, r1, -1
BNE r1, r0, loop
HALT
";
        let events = events_of(text);
        let repeats = events
            .iter()
            .filter(|e| e.kind == DepKind::Pc && e.producing_element == Some(CandidateStateId::LastBranch))
            .count();
        assert_eq!(repeats, 1, "second taken BNE repeats the first one's redirect");
    }

    #[test]
    fn jal_backedge_survives_not_taken_guard() {
        // The guard BEQ falls through and must not disturb the redirect
        // memory, so the second JAL sees its own previous target.
        let text = "\
ADDI r1, r0, 3
loop: ADDI r1, r1, -1
BEQ r1, r0, done
JAL r0, loop
done: HALT
";
        let events = events_of(text);
        let jal_repeats = events
            .iter()
            .filter(|e| {
                e.kind == DepKind::Pc
                    && e.producing_element == Some(CandidateStateId::LastBranch)
            })
            .count();
        assert_eq!(jal_repeats, 1, "second JAL execution repeats the first's redirect");
    }

    #[test]
    fn reusability_counts_membership() {
        let mk = |r| DependencyEvent {
            consumer_step: 0,
            kind: DepKind::Gpr,
            producing_element: r,
            needed_value: 0,
        };
        let events = vec![
            mk(Some(CandidateStateId::Gpr(1))),
            mk(Some(CandidateStateId::Gpr(1))),
            mk(Some(CandidateStateId::Gpr(2))),
        ];
        let s1 = SelectedStateSet::new([CandidateStateId::Gpr(1)].into(), 1);
        assert_eq!(reusability(&s1, &events).unwrap(), Ratio::new(2, 3));
        let empty = SelectedStateSet::new(BTreeSet::new(), 1);
        assert_eq!(reusability(&empty, &events).unwrap(), Ratio::new(0, 3));
        let full = SelectedStateSet::full_pool();
        assert_eq!(reusability(&full, &events).unwrap(), Ratio::new(1, 1));
        assert_eq!(reusability(&full, &[]).unwrap_err(), SelectorError::NoDependencies);
    }

    #[test]
    fn reusability_none_producers_cap_full_pool() {
        let events = vec![DependencyEvent {
            consumer_step: 0,
            kind: DepKind::Mem,
            producing_element: None,
            needed_value: 0,
        }];
        let full = SelectedStateSet::full_pool();
        assert_eq!(reusability(&full, &events).unwrap(), Ratio::new(0, 1));
    }

    #[test]
    fn neighbor_swaps_exactly_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = SelectedStateSet::new(
            [CandidateStateId::Pc, CandidateStateId::Gpr(1), CandidateStateId::Gpr(2), CandidateStateId::LastBranch].into(),
            4,
        );
        for _ in 0..50 {
            let n = neighbor(&s, &mut rng).unwrap();
            assert_eq!(n.members.len(), 4);
            assert_eq!(s.members.intersection(&n.members).count(), 3);
        }
    }

    #[test]
    fn neighbor_full_pool_exhausted() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = SelectedStateSet::full_pool();
        assert_eq!(neighbor(&s, &mut rng).unwrap_err(), SelectorError::PoolExhausted);
    }

    #[test]
    fn neighbor_deterministic_under_seed() {
        let s = SelectedStateSet::new([CandidateStateId::Pc, CandidateStateId::Gpr(5)].into(), 2);
        let a = neighbor(&s, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = neighbor(&s, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn acceptance_probability_closed_forms() {
        assert!(acceptance_probability(-0.1, 0.1) > 1.0);
        let p = acceptance_probability(0.1, 0.1);
        assert!((p - (-1.0f64).exp()).abs() < 1e-12);
        assert!((p - 0.367879441).abs() < 1e-6);
    }

    #[test]
    fn anneal_finds_unique_singleton_optimum() {
        let events: Vec<_> = (0..20)
            .map(|i| DependencyEvent {
                consumer_step: i,
                kind: DepKind::Gpr,
                producing_element: Some(CandidateStateId::Gpr(3)),
                needed_value: 0,
            })
            .collect();
        // Exhaustive oracle over all 18 singletons.
        let best_by_search = CandidateStateId::pool()
            .map(|c| {
                let s = SelectedStateSet::new([c].into(), 1);
                (energy(&s, &events).unwrap(), c)
            })
            .min()
            .unwrap();
        assert_eq!(best_by_search.1, CandidateStateId::Gpr(3));
        let (set, history) = anneal(&events, 1, &AnnealSchedule::default()).unwrap();
        assert_eq!(set.members, [CandidateStateId::Gpr(3)].into());
        assert_eq!(history.last().unwrap().best, Ratio::new(0, 1));
    }

    #[test]
    fn anneal_best_energy_is_monotone_and_beats_start() {
        let text = "\
ADDI r1, r0, 1
ADD r2, r1, r1
ADD r3, r2, r1
ADD r4, r3, r2
SW r4, 0(r0)
LW r5, 0(r0)
HALT
";
        let events = events_of(text);
        for seed in 0..5 {
            let sched = AnnealSchedule { seed, ..Default::default() };
            let (best, history) = anneal(&events, 3, &sched).unwrap();
            for w in history.windows(2) {
                assert!(w[1].best <= w[0].best, "best energy must be non-increasing");
            }
            let final_r = reusability(&best, &events).unwrap();
            let start_e = history[0].energy;
            assert!(Ratio::new(1, 1) - final_r <= start_e);
        }
    }

    #[test]
    fn anneal_capacity_at_pool_size_hits_upper_bound() {
        let events = events_of("ADDI r1, r0, 5\nADD r2, r1, r1\nHALT\n");
        let (set, _) = anneal(&events, POOL_SIZE, &AnnealSchedule::default()).unwrap();
        let full = reusability(&SelectedStateSet::full_pool(), &events).unwrap();
        assert_eq!(reusability(&set, &events).unwrap(), full);
    }

    #[test]
    fn anneal_deterministic_under_seed() {
        let events = events_of("ADDI r1, r0, 1\nADD r2, r1, r1\nADD r3, r2, r2\nHALT\n");
        let sched = AnnealSchedule { seed: 77, ..Default::default() };
        let a = anneal(&events, 2, &sched).unwrap();
        let b = anneal(&events, 2, &sched).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn reusability_monotone_in_set_inclusion() {
        let events = events_of(
            "ADDI r1, r0, 1\nADD r2, r1, r1\nSW r2, 3(r0)\nLW r3, 3(r0)\nADD r4, r3, r3\nHALT\n",
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let mut ranks: Vec<usize> = (0..POOL_SIZE).collect();
            ranks.shuffle(&mut rng);
            let small_n = rng.gen_range(0..POOL_SIZE);
            let big_n = rng.gen_range(small_n..=POOL_SIZE);
            let small: BTreeSet<_> =
                ranks[..small_n].iter().map(|&r| CandidateStateId::from_rank(r).unwrap()).collect();
            let big: BTreeSet<_> =
                ranks[..big_n].iter().map(|&r| CandidateStateId::from_rank(r).unwrap()).collect();
            let rs = reusability(&SelectedStateSet::new(small, POOL_SIZE), &events).unwrap();
            let rb = reusability(&SelectedStateSet::new(big, POOL_SIZE), &events).unwrap();
            assert!(rs <= rb);
        }
    }

    #[test]
    fn grow_selection_is_nested() {
        let events = events_of(
            "ADDI r1, r0, 1\nADD r2, r1, r1\nADD r3, r2, r2\nADD r4, r3, r3\nHALT\n",
        );
        let (base, _) = anneal(&events, 2, &AnnealSchedule::default()).unwrap();
        let grown4 = grow_selection(&base, 4, &events);
        let grown8 = grow_selection(&grown4, 8, &events);
        assert!(base.members.is_subset(&grown4.members));
        assert!(grown4.members.is_subset(&grown8.members));
        assert_eq!(grown8.members.len(), 8);
    }
}
