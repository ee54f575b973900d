//! The state-speculator: an abstaining predictor trained from a
//! simulation-derived oracle.
//!
//! The learned logic sees 21 control bits — the producer instruction's 16
//! bits plus a 5-bit producer tag — and, in the default FACTORED mode,
//! outputs a buffer-slot rank; the wide data path is just a read of that
//! slot. Slot ranks are fixed pool positions (0..17), rank 31 encodes a
//! learned "no prediction", and any reached leaf may also abstain outright.
//! Keeping data out of the learned domain bounds it at 2^21 inputs, which
//! brute-force verification enumerates completely.
//!
//! Verification checks the defining disjunction on every input against the
//! oracle table: wherever the predictor does not abstain, the slot it names
//! must have held the needed value at every recorded occurrence of that
//! input. Violations are refined away by forcing leaves to abstain, which
//! trades coverage, never precision.

use crate::bsd::{Bsd, BsdError, BsdNode, BitVector, ExampleSet};
use crate::isa::{TraceRecord, Word};
use crate::selector::{
    CandidateStateId, DepKind, EventAt, MirrorSnapshot, MirrorState, ProducerTag,
    SelectedStateSet, SelectorError, POOL_SIZE,
};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Control-bit layout: instruction word, tag valid bit, tag id.
pub const INPUT_WIDTH: u8 = 21;
pub const INST_OFFSET: u8 = 0;
pub const INST_BITS: u8 = 16;
pub const TAG_VALID_OFFSET: u8 = 16;
pub const TAG_ID_OFFSET: u8 = 17;
pub const TAG_ID_BITS: u8 = 4;

/// Number of output bits of the slot-select logic; rank 31 means abstain.
pub const SLOT_BITS: usize = 5;
pub const ABSTAIN_RANK: u32 = 31;

#[derive(Debug, Error)]
pub enum SpeculatorError {
    #[error("oracle table is empty")]
    EmptyTable,
    #[error("input layout mismatch: width {0}, expected {1}")]
    LayoutMismatch(u8, u8),
    #[error("exhaustive verification refused beyond width 24 (got {0})")]
    DomainTooLarge(u8),
    #[error("no oracle entry for input {0:#08x}")]
    MissingOracleEntry(u32),
    #[error("corrupt trace: {0}")]
    CorruptTrace(String),
    #[error(transparent)]
    Bsd(#[from] BsdError),
}

/// Pack instruction bits and producer tag into the learned input space.
pub fn input_bits(inst: u16, tag: ProducerTag) -> BitVector {
    let mut bits = inst as u32;
    if tag.valid {
        bits |= 1 << TAG_VALID_OFFSET;
    }
    bits |= ((tag.id & 0xf) as u32) << TAG_ID_OFFSET;
    BitVector::new(bits, INPUT_WIDTH)
}

pub fn event_input(e: &EventAt) -> BitVector {
    input_bits(e.inst.bits(), e.tag)
}

/// Aggregated observations for one control-bit input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleRow {
    /// Distinct needed values seen for this input.
    pub values: BTreeSet<Word>,
    pub occurrences: u64,
    /// Bit `r` set: pool element of rank `r` held the needed value at every
    /// occurrence so far.
    pub consistent_mask: u32,
}

impl OracleRow {
    /// Oracle-predictable under a selected set: some selected element was
    /// consistent across every occurrence.
    pub fn predictable(&self, selected: &SelectedStateSet) -> bool {
        self.target_rank(selected).is_some()
    }

    /// Lowest-rank consistent element within the selected set.
    pub fn target_rank(&self, selected: &SelectedStateSet) -> Option<u32> {
        (0..POOL_SIZE as u32).find(|&r| {
            self.consistent_mask & (1 << r) != 0
                && selected.contains(CandidateStateId::from_rank(r as usize).unwrap())
        })
    }
}

/// The perfect-predicting oracle, tabulated: every observed input mapped to
/// its value set and per-element consistency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleTable {
    pub target: DepKind,
    pub rows: BTreeMap<u32, OracleRow>,
}

impl OracleTable {
    pub fn empty(target: DepKind) -> Self {
        OracleTable { target, rows: BTreeMap::new() }
    }

    pub fn add_event(&mut self, e: &EventAt) {
        debug_assert_eq!(e.kind, self.target);
        let key = event_input(e).bits();
        let row = self.rows.entry(key).or_insert(OracleRow {
            values: BTreeSet::new(),
            occurrences: 0,
            consistent_mask: (1 << POOL_SIZE) - 1,
        });
        row.values.insert(e.needed);
        row.occurrences += 1;
        for rank in 0..POOL_SIZE {
            if e.mirror[rank] != Some(e.needed) {
                row.consistent_mask &= !(1 << rank);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Build the oracle for `target` by replaying traces with the full mirror.
pub fn build_examples(
    traces: &[Vec<TraceRecord>],
    target: DepKind,
) -> Result<OracleTable, SpeculatorError> {
    let mut table = OracleTable::empty(target);
    for trace in traces {
        let events = crate::selector::replay_events(trace)
            .map_err(|e| SpeculatorError::CorruptTrace(e.to_string()))?;
        for e in events.iter().filter(|e| e.kind == target) {
            table.add_event(e);
        }
    }
    Ok(table)
}

pub fn build_examples_from_events(events: &[EventAt], target: DepKind) -> OracleTable {
    let mut table = OracleTable::empty(target);
    for e in events.iter().filter(|e| e.kind == target) {
        table.add_event(e);
    }
    table
}

/// Runtime view of the selected states: the small buffer the speculator's
/// slot selection reads. Entries exist only for selected elements whose
/// mirror value is currently defined.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateBuffer {
    pub entries: BTreeMap<CandidateStateId, Word>,
    pub capacity: usize,
}

impl StateBuffer {
    pub fn from_mirror(mirror: &MirrorState, selected: &SelectedStateSet, producer_pc: Word) -> Self {
        let mut entries = BTreeMap::new();
        for &elem in &selected.members {
            if let Some(v) = mirror.value(elem, producer_pc) {
                entries.insert(elem, v);
            }
        }
        StateBuffer { entries, capacity: selected.capacity }
    }

    pub fn from_snapshot(snap: &MirrorSnapshot, selected: &SelectedStateSet) -> Self {
        let mut entries = BTreeMap::new();
        for &elem in &selected.members {
            if let Some(v) = snap[elem.rank()] {
                entries.insert(elem, v);
            }
        }
        StateBuffer { entries, capacity: selected.capacity }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpeculatorMode {
    Factored,
    Direct,
}

/// Prediction output: the value and the abstain signal. When `abstain` is
/// set the data field is meaningless and must be ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpeculatorOutput {
    pub data: Word,
    pub abstain: bool,
}

impl SpeculatorOutput {
    pub const ABSTAIN: SpeculatorOutput = SpeculatorOutput { data: 0, abstain: true };
}

/// Logic-level prediction before the buffer read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogicalPrediction {
    Abstain,
    /// FACTORED: read the pool element with this rank.
    Slot(u8),
    /// DIRECT: the value itself.
    Value(Word),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Speculator {
    pub target: DepKind,
    pub mode: SpeculatorMode,
    /// FACTORED: SLOT_BITS diagrams; DIRECT: 16 value-bit diagrams.
    pub bsds: Vec<Bsd>,
    pub selected: SelectedStateSet,
}

/// Training knobs: node budget per diagram and the accuracy target
/// (1 - epsilon) that training drives toward on its example table.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SpeculatorConfig {
    pub max_nodes_per_bsd: usize,
    /// Target accuracy as an exact fraction (numerator, denominator).
    pub target_accuracy: (u64, u64),
}

impl Default for SpeculatorConfig {
    fn default() -> Self {
        SpeculatorConfig { max_nodes_per_bsd: 1 << 17, target_accuracy: (1, 1) }
    }
}

impl SpeculatorConfig {
    pub fn target_ratio(&self) -> Ratio<u64> {
        Ratio::new(self.target_accuracy.0, self.target_accuracy.1)
    }
}

impl Speculator {
    /// A speculator that abstains on every input: always sound, zero
    /// coverage. Used when a dependency kind has no trainable data.
    pub fn abstain_everywhere(target: DepKind, selected: SelectedStateSet) -> Self {
        let bsds = (0..SLOT_BITS).map(|_| Bsd::abstain_everywhere(INPUT_WIDTH)).collect();
        Speculator { target, mode: SpeculatorMode::Factored, bsds, selected }
    }

    /// A hand-built speculator that always proposes one pool element.
    pub fn constant_slot(target: DepKind, selected: SelectedStateSet, elem: CandidateStateId) -> Self {
        let rank = elem.rank() as u32;
        let bsds = (0..SLOT_BITS)
            .map(|bit| Bsd::constant(INPUT_WIDTH, rank >> bit & 1 == 1))
            .collect();
        Speculator { target, mode: SpeculatorMode::Factored, bsds, selected }
    }

    /// Evaluate the learned logic only.
    pub fn logical_predict(&self, input: BitVector) -> Result<LogicalPrediction, SpeculatorError> {
        if input.width() != INPUT_WIDTH {
            return Err(SpeculatorError::LayoutMismatch(input.width(), INPUT_WIDTH));
        }
        let mut bits: u32 = 0;
        for (i, bsd) in self.bsds.iter().enumerate() {
            let (guess, abstain) = bsd.evaluate_with_abstain(input)?;
            if abstain {
                return Ok(LogicalPrediction::Abstain);
            }
            if guess {
                bits |= 1 << i;
            }
        }
        match self.mode {
            SpeculatorMode::Factored => {
                if bits as usize >= POOL_SIZE {
                    return Ok(LogicalPrediction::Abstain); // includes the learned ABSTAIN_RANK
                }
                let elem = CandidateStateId::from_rank(bits as usize).unwrap();
                if !self.selected.contains(elem) {
                    return Ok(LogicalPrediction::Abstain);
                }
                Ok(LogicalPrediction::Slot(bits as u8))
            }
            SpeculatorMode::Direct => Ok(LogicalPrediction::Value(bits as Word)),
        }
    }

    /// Full prediction: logic plus the buffer read.
    pub fn predict(&self, input: BitVector, buffer: &StateBuffer) -> Result<SpeculatorOutput, SpeculatorError> {
        Ok(match self.logical_predict(input)? {
            LogicalPrediction::Abstain => SpeculatorOutput::ABSTAIN,
            LogicalPrediction::Value(v) => SpeculatorOutput { data: v, abstain: false },
            LogicalPrediction::Slot(rank) => {
                let elem = CandidateStateId::from_rank(rank as usize).unwrap();
                match buffer.entries.get(&elem) {
                    Some(&v) => SpeculatorOutput { data: v, abstain: false },
                    None => SpeculatorOutput::ABSTAIN, // slot not live yet
                }
            }
        })
    }
}

/// Default slot assignment: each row targets the lowest-rank consistent
/// selected element, or the abstain rank when none exists.
pub fn assign_slots(table: &OracleTable, selected: &SelectedStateSet) -> BTreeMap<u32, u32> {
    table
        .rows
        .iter()
        .map(|(&input, row)| (input, row.target_rank(selected).unwrap_or(ABSTAIN_RANK)))
        .collect()
}

/// Train the FACTORED slot selection for `table` under `selected`.
///
/// Every row's training target is the lowest-rank consistent selected
/// element, or the abstain rank when none exists, so the table the diagrams
/// learn is a total function and training can reach it exactly. Leaves left
/// impure or empty by the node budget are marked abstaining: a starved
/// budget shrinks coverage, never precision.
pub fn train_speculator(
    table: &OracleTable,
    selected: &SelectedStateSet,
    config: &SpeculatorConfig,
) -> Result<Speculator, SpeculatorError> {
    train_speculator_with_assignments(table, &assign_slots(table, selected), selected, config)
}

/// Train with an explicit per-row slot assignment. Capacity sweeps use this
/// to keep already-assigned rows on their original slots as the selected
/// set grows, so every pairing available at a smaller capacity survives
/// verbatim at a larger one.
pub fn train_speculator_with_assignments(
    table: &OracleTable,
    assignments: &BTreeMap<u32, u32>,
    selected: &SelectedStateSet,
    config: &SpeculatorConfig,
) -> Result<Speculator, SpeculatorError> {
    if table.is_empty() {
        return Err(SpeculatorError::EmptyTable);
    }
    let targets: Vec<(u32, u32)> = table
        .rows
        .keys()
        .map(|&input| (input, assignments.get(&input).copied().unwrap_or(ABSTAIN_RANK)))
        .collect();
    let bsds = (0..SLOT_BITS)
        .map(|bit| {
            let rows = targets
                .iter()
                .map(|&(input, rank)| (BitVector::new(input, INPUT_WIDTH), rank >> bit & 1 == 1))
                .collect();
            let examples = ExampleSet::new(INPUT_WIDTH, rows);
            let mut bsd = match Bsd::train(&examples, config.target_ratio(), config.max_nodes_per_bsd) {
                Ok(b) => b,
                Err(BsdError::BudgetExhausted { best, .. }) => *best,
                Err(e) => return Err(SpeculatorError::Bsd(e)),
            };
            mark_unsupported_leaves_abstaining(&mut bsd);
            Ok(bsd)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Speculator {
        target: table.target,
        mode: SpeculatorMode::Factored,
        bsds,
        selected: selected.clone(),
    })
}

/// Train a DIRECT (value-bit) speculator. Only rows with a singleton value
/// set are trainable; the rest must end up abstaining, which the
/// verify/refine loop enforces.
pub fn train_direct(
    table: &OracleTable,
    selected: &SelectedStateSet,
    config: &SpeculatorConfig,
) -> Result<Speculator, SpeculatorError> {
    let rows: Vec<(u32, Word)> = table
        .rows
        .iter()
        .filter(|(_, row)| row.values.len() == 1)
        .map(|(&input, row)| (input, *row.values.iter().next().unwrap()))
        .collect();
    if rows.is_empty() {
        return Ok(Speculator {
            target: table.target,
            mode: SpeculatorMode::Direct,
            bsds: (0..16).map(|_| Bsd::abstain_everywhere(INPUT_WIDTH)).collect(),
            selected: selected.clone(),
        });
    }
    let bsds = (0..16)
        .map(|bit| {
            let examples = ExampleSet::new(
                INPUT_WIDTH,
                rows.iter()
                    .map(|&(input, v)| (BitVector::new(input, INPUT_WIDTH), v >> bit & 1 == 1))
                    .collect(),
            );
            let mut bsd = match Bsd::train(&examples, config.target_ratio(), config.max_nodes_per_bsd) {
                Ok(b) => b,
                Err(BsdError::BudgetExhausted { best, .. }) => *best,
                Err(e) => return Err(SpeculatorError::Bsd(e)),
            };
            mark_unsupported_leaves_abstaining(&mut bsd);
            Ok(bsd)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Speculator { target: table.target, mode: SpeculatorMode::Direct, bsds, selected: selected.clone() })
}

/// Leaves whose training subset was impure or empty cannot vouch for their
/// guess; they abstain.
fn mark_unsupported_leaves_abstaining(bsd: &mut Bsd) {
    for leaf in bsd.leaf_ids() {
        let supported = match *bsd.node(leaf) {
            BsdNode::Speculation { support: (seen, matched), .. } => seen > 0 && matched == seen,
            _ => unreachable!(),
        };
        if !supported {
            bsd.set_abstain(leaf, true);
        }
    }
}

/// Verification domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainSpec {
    /// Enumerate every control-bit input (width must be at most 24).
    Exhaustive,
    /// Seeded uniform sample of the domain plus every oracle row.
    Sampled { samples: u64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Counterexample {
    pub input: u32,
    /// Rank the logic proposed (FACTORED) or value (DIRECT).
    pub predicted: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerificationOutcome {
    Verified { checked: u64 },
    Counterexamples(Vec<Counterexample>),
}

const COUNTEREXAMPLE_CAP: usize = 4096;

/// Check the defining disjunction against the oracle over the domain: on
/// every input the speculator either abstains or its prediction agrees with
/// every recorded occurrence. Inputs the oracle never defines cannot
/// witness a violation.
pub fn verify_speculator(
    spec: &Speculator,
    oracle: &OracleTable,
    domain: DomainSpec,
) -> Result<VerificationOutcome, SpeculatorError> {
    use rand::{Rng, SeedableRng};
    match domain {
        DomainSpec::Exhaustive => {
            if INPUT_WIDTH > 24 {
                return Err(SpeculatorError::DomainTooLarge(INPUT_WIDTH));
            }
            let mut bad = Vec::new();
            let total = 1u64 << INPUT_WIDTH;
            for input in 0..total as u32 {
                if let Some(cx) = check_one(spec, oracle, input)? {
                    bad.push(cx);
                    if bad.len() >= COUNTEREXAMPLE_CAP {
                        break;
                    }
                }
            }
            if bad.is_empty() {
                Ok(VerificationOutcome::Verified { checked: total })
            } else {
                Ok(VerificationOutcome::Counterexamples(bad))
            }
        }
        DomainSpec::Sampled { samples, seed } => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut bad = Vec::new();
            let mut checked = 0u64;
            for &input in oracle.rows.keys() {
                checked += 1;
                if let Some(cx) = check_one(spec, oracle, input)? {
                    bad.push(cx);
                }
            }
            for _ in 0..samples {
                let input = rng.gen_range(0..1u32 << INPUT_WIDTH);
                checked += 1;
                if let Some(cx) = check_one(spec, oracle, input)? {
                    bad.push(cx);
                    if bad.len() >= COUNTEREXAMPLE_CAP {
                        break;
                    }
                }
            }
            bad.sort_by_key(|c| c.input);
            bad.dedup();
            if bad.is_empty() {
                Ok(VerificationOutcome::Verified { checked })
            } else {
                Ok(VerificationOutcome::Counterexamples(bad))
            }
        }
    }
}

fn check_one(
    spec: &Speculator,
    oracle: &OracleTable,
    input: u32,
) -> Result<Option<Counterexample>, SpeculatorError> {
    let x = BitVector::new(input, INPUT_WIDTH);
    match spec.logical_predict(x)? {
        LogicalPrediction::Abstain => Ok(None),
        LogicalPrediction::Slot(rank) => {
            let Some(row) = oracle.rows.get(&input) else {
                return Ok(None);
            };
            let ok = row.consistent_mask & (1 << rank) != 0;
            Ok((!ok).then_some(Counterexample { input, predicted: rank as u32 }))
        }
        LogicalPrediction::Value(v) => {
            let Some(row) = oracle.rows.get(&input) else {
                return Ok(None);
            };
            let ok = row.values.len() == 1 && row.values.contains(&v);
            Ok((!ok).then_some(Counterexample { input, predicted: v as u32 }))
        }
    }
}

/// One refinement round: force the leaf each counterexample reaches (in the
/// first diagram) to abstain. Abstention only grows, so the
/// verify-refine loop terminates in at most one round per distinct leaf.
pub fn refine(spec: &mut Speculator, counterexamples: &[Counterexample]) {
    assert!(!counterexamples.is_empty(), "refine needs counterexamples");
    for cx in counterexamples {
        let x = BitVector::new(cx.input, INPUT_WIDTH);
        let (_, leaf) = spec.bsds[0].evaluate(x).expect("input width fixed");
        spec.bsds[0].set_abstain(leaf, true);
    }
}

/// Verification metadata carried in artifacts and reports.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct VerificationReport {
    pub mode: String,
    pub checked: u64,
    pub counterexample_rounds: u32,
    pub status: String,
    pub seed: Option<u64>,
}

/// Run verify and refine to a fixed point.
pub fn verify_and_refine(
    spec: &mut Speculator,
    oracle: &OracleTable,
    domain: DomainSpec,
) -> Result<VerificationReport, SpeculatorError> {
    let mut rounds = 0u32;
    loop {
        match verify_speculator(spec, oracle, domain)? {
            VerificationOutcome::Verified { checked } => {
                return Ok(VerificationReport {
                    mode: match domain {
                        DomainSpec::Exhaustive => "exhaustive".into(),
                        DomainSpec::Sampled { .. } => "sampled".into(),
                    },
                    checked,
                    counterexample_rounds: rounds,
                    status: "verified".into(),
                    seed: match domain {
                        DomainSpec::Sampled { seed, .. } => Some(seed),
                        DomainSpec::Exhaustive => None,
                    },
                });
            }
            VerificationOutcome::Counterexamples(bad) => {
                rounds += 1;
                refine(spec, &bad);
            }
        }
    }
}

/// Classification counts and the derived ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PredictionMetrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl PredictionMetrics {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// TP/(TP+FP); vacuously 1 when nothing was predicted.
    pub fn precision(&self) -> Ratio<u64> {
        if self.tp + self.fp == 0 {
            Ratio::new(1, 1)
        } else {
            Ratio::new(self.tp, self.tp + self.fp)
        }
    }

    pub fn recall(&self) -> Ratio<u64> {
        if self.tp + self.fn_ == 0 {
            Ratio::new(1, 1)
        } else {
            Ratio::new(self.tp, self.tp + self.fn_)
        }
    }

    /// (TP+FP)/total: how much dependent data got a prediction at all.
    pub fn coverage(&self) -> Ratio<u64> {
        if self.total() == 0 {
            Ratio::new(0, 1)
        } else {
            Ratio::new(self.tp + self.fp, self.total())
        }
    }
}

/// Score the speculator over recorded events, using the oracle to decide
/// which abstentions were avoidable.
pub fn measure(
    spec: &Speculator,
    events: &[EventAt],
    oracle: &OracleTable,
) -> Result<PredictionMetrics, SpeculatorError> {
    let mut m = PredictionMetrics::default();
    for e in events.iter().filter(|e| e.kind == spec.target) {
        let input = event_input(e);
        let row = oracle
            .rows
            .get(&input.bits())
            .ok_or(SpeculatorError::MissingOracleEntry(input.bits()))?;
        let buffer = StateBuffer::from_snapshot(&e.mirror, &spec.selected);
        let out = spec.predict(input, &buffer)?;
        if out.abstain {
            let predictable = match spec.mode {
                SpeculatorMode::Factored => row.predictable(&spec.selected),
                SpeculatorMode::Direct => row.values.len() == 1,
            };
            if predictable {
                m.fn_ += 1;
            } else {
                m.tn += 1;
            }
        } else if out.data == e.needed {
            m.tp += 1;
        } else {
            m.fp += 1;
        }
    }
    Ok(m)
}

// --- artifact form -------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SpeculatorArtifact {
    target: DepKind,
    mode: SpeculatorMode,
    layout: BTreeMap<String, (u8, u8)>,
    slot_bsds: Vec<serde_json::Value>,
    abstain_policy: String,
    selected: Vec<String>,
    capacity: usize,
    verification: Option<VerificationReport>,
}

pub fn layout_descriptor() -> BTreeMap<String, (u8, u8)> {
    BTreeMap::from([
        ("inst".to_string(), (INST_OFFSET, INST_BITS)),
        ("tag_valid".to_string(), (TAG_VALID_OFFSET, 1)),
        ("tag_id".to_string(), (TAG_ID_OFFSET, TAG_ID_BITS)),
    ])
}

pub fn speculator_to_value(spec: &Speculator, verification: Option<&VerificationReport>) -> serde_json::Value {
    serde_json::to_value(SpeculatorArtifact {
        target: spec.target,
        mode: spec.mode,
        layout: layout_descriptor(),
        slot_bsds: spec.bsds.iter().map(|b| b.to_artifact_value()).collect(),
        abstain_policy: "leaf".into(),
        selected: spec.selected.member_names(),
        capacity: spec.selected.capacity,
        verification: verification.cloned(),
    })
    .expect("speculator artifact serializes")
}

pub fn speculator_from_value(
    value: &serde_json::Value,
) -> Result<(Speculator, Option<VerificationReport>), SpeculatorError> {
    let art: SpeculatorArtifact = serde_json::from_value(value.clone())
        .map_err(|e| SpeculatorError::Bsd(BsdError::MalformedArtifact(e.to_string())))?;
    let expected = match art.mode {
        SpeculatorMode::Factored => SLOT_BITS,
        SpeculatorMode::Direct => 16,
    };
    if art.slot_bsds.len() != expected {
        return Err(SpeculatorError::Bsd(BsdError::MalformedArtifact(format!(
            "expected {expected} diagrams, got {}",
            art.slot_bsds.len()
        ))));
    }
    let bsds = art
        .slot_bsds
        .iter()
        .map(Bsd::from_artifact_value)
        .collect::<Result<Vec<_>, _>>()?;
    for b in &bsds {
        if b.input_width() != INPUT_WIDTH {
            return Err(SpeculatorError::Bsd(BsdError::MalformedArtifact(format!(
                "diagram width {} does not match layout width {INPUT_WIDTH}",
                b.input_width()
            ))));
        }
    }
    let members = art
        .selected
        .iter()
        .map(|n| {
            CandidateStateId::parse(n).ok_or_else(|| {
                SpeculatorError::Bsd(BsdError::MalformedArtifact(format!("unknown state `{n}`")))
            })
        })
        .collect::<Result<BTreeSet<_>, _>>()?;
    if members.len() > art.capacity {
        return Err(SpeculatorError::Bsd(BsdError::MalformedArtifact(format!(
            "{} members exceed capacity {}",
            members.len(),
            art.capacity
        ))));
    }
    Ok((
        Speculator {
            target: art.target,
            mode: art.mode,
            bsds,
            selected: SelectedStateSet::new(members, art.capacity),
        },
        art.verification,
    ))
}

impl From<SelectorError> for SpeculatorError {
    fn from(e: SelectorError) -> Self {
        SpeculatorError::CorruptTrace(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;
    use crate::isa::run_single;
    use crate::selector::{replay_events, AnnealSchedule};

    fn events_of(text: &str) -> Vec<EventAt> {
        let p = assemble(text).unwrap();
        let out = run_single(&p, 50_000).unwrap();
        replay_events(&out.trace).unwrap()
    }

    fn full_selected() -> SelectedStateSet {
        SelectedStateSet::full_pool()
    }

    #[test]
    fn straight_line_pc_table_is_all_consistent_on_pc_slot() {
        let events = events_of("ADDI r1, r0, 1\nADDI r2, r0, 2\nADDI r3, r0, 3\nHALT\n");
        let table = build_examples_from_events(&events, DepKind::Pc);
        assert!(!table.is_empty());
        for row in table.rows.values() {
            assert_eq!(row.values.len(), 1, "sequential next-pc per input");
            assert_eq!(row.consistent_mask & 1, 1, "PC element rank 0 consistent");
        }
    }

    #[test]
    fn conflicting_needed_values_mark_input_unpredictable_for_direct() {
        // Three loop iterations: the backedge BNE repeats with the same tag
        // but both outcomes, so one input maps to two needed pcs.
        let events = events_of(
            "ADDI r1, r0, 3\nloop: ADDI r1, r1, -1\nBNE r1, r0, loop\nHALT\n",
        );
        let table = build_examples_from_events(&events, DepKind::Pc);
        let multi = table.rows.values().filter(|r| r.values.len() > 1).count();
        assert!(multi >= 1, "the BNE input must show conflicting outcomes");
    }

    #[test]
    fn empty_traces_give_empty_table() {
        let table = build_examples(&[], DepKind::Gpr).unwrap();
        assert!(table.is_empty());
        assert!(matches!(
            train_speculator(&table, &full_selected(), &SpeculatorConfig::default()),
            Err(SpeculatorError::EmptyTable)
        ));
    }

    #[test]
    fn abstain_everywhere_is_sound_and_covers_nothing() {
        let spec = Speculator::abstain_everywhere(DepKind::Gpr, full_selected());
        let events = events_of("ADDI r1, r0, 5\nADD r2, r1, r1\nADD r3, r2, r2\nHALT\n");
        let table = build_examples_from_events(&events, DepKind::Gpr);
        assert!(matches!(
            verify_speculator(&spec, &table, DomainSpec::Exhaustive).unwrap(),
            VerificationOutcome::Verified { .. }
        ));
        let m = measure(&spec, &events, &table).unwrap();
        assert_eq!(m.tp + m.fp, 0);
        assert_eq!(m.precision(), Ratio::new(1, 1));
        assert_eq!(m.coverage(), Ratio::new(0, 1));
    }

    #[test]
    fn constant_slot_reads_buffer() {
        let spec = Speculator::constant_slot(DepKind::Gpr, full_selected(), CandidateStateId::Gpr(1));
        let mut entries = BTreeMap::new();
        entries.insert(CandidateStateId::Gpr(1), 0x002a);
        let buffer = StateBuffer { entries, capacity: POOL_SIZE };
        let out = spec.predict(input_bits(0, ProducerTag::INVALID), &buffer).unwrap();
        assert_eq!(out, SpeculatorOutput { data: 0x002a, abstain: false });
        // Same logic, slot not live: abstain.
        let empty = StateBuffer { entries: BTreeMap::new(), capacity: POOL_SIZE };
        let out = spec.predict(input_bits(0, ProducerTag::INVALID), &empty).unwrap();
        assert!(out.abstain);
    }

    #[test]
    fn layout_mismatch_rejected() {
        let spec = Speculator::abstain_everywhere(DepKind::Gpr, full_selected());
        assert!(matches!(
            spec.logical_predict(BitVector::new(0, 7)),
            Err(SpeculatorError::LayoutMismatch(7, INPUT_WIDTH))
        ));
    }

    /// Move-idiom chain: every link except the constant-producing first one
    /// reads a value already buffered in a register, so coverage is 3/4
    /// with precision 1.
    #[test]
    fn gpr_move_chain_trains_to_move_coverage() {
        let text = "\
ADDI r1, r0, 9
ADD r2, r1, r0
ADD r3, r2, r0
ADD r4, r3, r0
ADD r5, r4, r0
HALT
";
        let events = events_of(text);
        let table = build_examples_from_events(&events, DepKind::Gpr);
        let spec = train_speculator(&table, &full_selected(), &SpeculatorConfig::default()).unwrap();
        assert!(matches!(
            verify_speculator(&spec, &table, DomainSpec::Exhaustive).unwrap(),
            VerificationOutcome::Verified { .. }
        ));
        let m = measure(&spec, &events, &table).unwrap();
        assert_eq!(m.fp, 0);
        // ADDI r1, r0, 9 makes a fresh constant no buffered state holds.
        assert_eq!(m.tn, 1);
        assert_eq!(m.tp, 3);
        assert_eq!(m.coverage(), Ratio::new(3, 4));
        assert_eq!(m.precision(), Ratio::new(1, 1));
        assert_eq!(m.recall(), Ratio::new(1, 1));
        let gpr_events = events.iter().filter(|e| e.kind == DepKind::Gpr).count() as u64;
        assert_eq!(m.total(), gpr_events, "tp+fp+tn+fn accounts for every event");
    }

    /// Full-opcode-space behavior: transitions out of the ten executable
    /// non-control opcodes are all predicted as pc+1 through the PC element;
    /// the three control opcodes abstain when their outcomes are not
    /// sequential. (HALT ends the run, so it has no outgoing transition to
    /// test.)
    #[test]
    fn pc_speculator_covers_noncontrol_and_abstains_on_control() {
        // Register values stay far above any pc so no mirror slot can be
        // coincidentally consistent with a branch target; every control
        // transfer executes once, taken, with a target that is not pc+1.
        let text = "\
ADDI r1, r0, 25
ADDI r2, r0, 27
ADD r3, r1, r2
SUB r4, r2, r1
AND r5, r1, r2
OR r6, r1, r2
XOR r7, r1, r2
SLT r3, r2, r1
MUL r4, r1, r2
SW r1, 30(r0)
LW r5, 30(r0)
BEQ r1, r1, skip1
ADDI r6, r0, 30
skip1: BNE r1, r2, skip2
ADDI r6, r0, 29
skip2: JAL r6, fin
ADDI r7, r0, 28
fin: ADDI r7, r0, 26
HALT
";
        let events = events_of(text);
        let table = build_examples_from_events(&events, DepKind::Pc);
        let spec = train_speculator(&table, &full_selected(), &SpeculatorConfig::default()).unwrap();
        assert!(matches!(
            verify_speculator(&spec, &table, DomainSpec::Exhaustive).unwrap(),
            VerificationOutcome::Verified { .. }
        ));
        let mut covered = BTreeSet::new();
        let mut abstained = BTreeSet::new();
        for e in events.iter().filter(|e| e.kind == DepKind::Pc) {
            let op = crate::isa::decode(e.inst).unwrap().opcode;
            let buffer = StateBuffer::from_snapshot(&e.mirror, &spec.selected);
            let out = spec.predict(event_input(e), &buffer).unwrap();
            if out.abstain {
                abstained.insert(op);
            } else {
                assert_eq!(out.data, e.needed, "non-abstaining prediction must be right");
                covered.insert(op);
            }
        }
        use crate::isa::Opcode::*;
        let noncontrol = [Add, Sub, And, Or, Xor, Slt, Addi, Lw, Sw, Mul];
        for op in noncontrol {
            assert!(covered.contains(&op), "{op:?} transitions should be covered");
            assert!(!abstained.contains(&op));
        }
        for op in [Beq, Bne, Jal] {
            assert!(!covered.contains(&op), "{op:?} must not be covered");
            assert!(abstained.contains(&op));
        }
    }

    #[test]
    fn bad_leaf_guess_caught_and_refined_in_one_round() {
        let events = events_of("ADDI r1, r0, 9\nADD r2, r1, r0\nADD r3, r2, r0\nHALT\n");
        let table = build_examples_from_events(&events, DepKind::Gpr);
        // Wrong by construction: always propose LASTBRANCH (never consistent
        // for these events).
        let mut spec =
            Speculator::constant_slot(DepKind::Gpr, full_selected(), CandidateStateId::LastBranch);
        let outcome = verify_speculator(&spec, &table, DomainSpec::Exhaustive).unwrap();
        let bad = match outcome {
            VerificationOutcome::Counterexamples(bad) => bad,
            other => panic!("expected counterexamples, got {other:?}"),
        };
        assert_eq!(bad.len(), table.len(), "every oracle row violates");
        refine(&mut spec, &bad);
        assert!(matches!(
            verify_speculator(&spec, &table, DomainSpec::Exhaustive).unwrap(),
            VerificationOutcome::Verified { .. }
        ));
        // Post-refine precision is vacuous or perfect, never below 1.
        let m = measure(&spec, &events, &table).unwrap();
        assert_eq!(m.fp, 0);
        assert_eq!(m.precision(), Ratio::new(1, 1));
    }

    #[test]
    fn verify_and_refine_reports_rounds() {
        let events = events_of("ADDI r1, r0, 9\nADD r2, r1, r0\nHALT\n");
        let table = build_examples_from_events(&events, DepKind::Gpr);
        let mut spec =
            Speculator::constant_slot(DepKind::Gpr, full_selected(), CandidateStateId::LastBranch);
        let report = verify_and_refine(&mut spec, &table, DomainSpec::Exhaustive).unwrap();
        assert_eq!(report.status, "verified");
        assert_eq!(report.counterexample_rounds, 1);
        assert_eq!(report.checked, 1 << INPUT_WIDTH);
    }

    #[test]
    fn sampled_verification_checks_table_rows() {
        let events = events_of("ADDI r1, r0, 9\nADD r2, r1, r0\nHALT\n");
        let table = build_examples_from_events(&events, DepKind::Gpr);
        let spec =
            Speculator::constant_slot(DepKind::Gpr, full_selected(), CandidateStateId::LastBranch);
        match verify_speculator(&spec, &table, DomainSpec::Sampled { samples: 10, seed: 1 }).unwrap()
        {
            VerificationOutcome::Counterexamples(bad) => assert!(!bad.is_empty()),
            other => panic!("sampled mode must still catch table violations, got {other:?}"),
        }
    }

    #[test]
    fn metrics_formulas() {
        let m = PredictionMetrics { tp: 3, fp: 1, tn: 0, fn_: 0 };
        assert_eq!(m.precision(), Ratio::new(3, 4));
        let m = PredictionMetrics { tp: 0, fp: 0, tn: 0, fn_: 10 };
        assert_eq!(m.precision(), Ratio::new(1, 1));
        assert_eq!(m.recall(), Ratio::new(0, 1));
        assert_eq!(m.coverage(), Ratio::new(0, 1));
        assert_eq!(m.total(), 10);
    }

    #[test]
    fn measure_missing_oracle_entry_errors() {
        let events = events_of("ADDI r1, r0, 9\nADD r2, r1, r0\nHALT\n");
        let table = OracleTable::empty(DepKind::Gpr);
        let spec = Speculator::abstain_everywhere(DepKind::Gpr, full_selected());
        assert!(matches!(
            measure(&spec, &events, &table),
            Err(SpeculatorError::MissingOracleEntry(_))
        ));
    }

    #[test]
    fn speculator_artifact_roundtrip() {
        let events = events_of("ADDI r1, r0, 9\nADD r2, r1, r0\nADD r3, r2, r0\nHALT\n");
        let table = build_examples_from_events(&events, DepKind::Gpr);
        let (selected, _) = crate::selector::anneal(
            &events.iter().map(EventAt::dependency_event).collect::<Vec<_>>(),
            4,
            &AnnealSchedule::default(),
        )
        .unwrap();
        let spec = train_speculator(&table, &selected, &SpeculatorConfig::default()).unwrap();
        let value = speculator_to_value(&spec, None);
        let (back, verification) = speculator_from_value(&value).unwrap();
        assert!(verification.is_none());
        assert_eq!(back.target, spec.target);
        assert_eq!(back.mode, spec.mode);
        assert_eq!(back.selected, spec.selected);
        // Artifacts drop training bookkeeping; behavior must be identical.
        for &input in table.rows.keys() {
            let x = BitVector::new(input, INPUT_WIDTH);
            assert_eq!(back.logical_predict(x).unwrap(), spec.logical_predict(x).unwrap());
        }
        assert_eq!(speculator_to_value(&back, None), value);
    }

    #[test]
    fn direct_mode_predicts_singleton_values() {
        // PC oracle over straight-line code: every input has a singleton
        // next-pc, so the DIRECT speculator can emit the value itself.
        let events = events_of("ADDI r1, r0, 1\nADDI r2, r0, 2\nADDI r3, r0, 3\nHALT\n");
        let table = build_examples_from_events(&events, DepKind::Pc);
        let spec = train_direct(&table, &full_selected(), &SpeculatorConfig::default()).unwrap();
        assert_eq!(spec.mode, SpeculatorMode::Direct);
        assert!(matches!(
            verify_speculator(&spec, &table, DomainSpec::Exhaustive).unwrap(),
            VerificationOutcome::Verified { .. }
        ));
        let m = measure(&spec, &events, &table).unwrap();
        assert_eq!(m.fp, 0);
        assert_eq!(m.coverage(), Ratio::new(1, 1));
        for e in events.iter().filter(|e| e.kind == DepKind::Pc) {
            let buffer = StateBuffer { entries: BTreeMap::new(), capacity: 0 };
            let out = spec.predict(event_input(e), &buffer).unwrap();
            assert_eq!(out, SpeculatorOutput { data: e.needed, abstain: false });
        }
    }

    #[test]
    #[should_panic(expected = "refine needs counterexamples")]
    fn refine_with_empty_list_is_a_contract_violation() {
        let mut spec = Speculator::abstain_everywhere(DepKind::Gpr, full_selected());
        refine(&mut spec, &[]);
    }

    #[test]
    fn nested_selection_coverage_is_monotone() {
        // Chain with two distinct move sources so different capacities
        // genuinely change what is predictable.
        let text = "\
ADDI r1, r0, 3
ADDI r2, r0, 7
ADD r3, r1, r0
ADD r4, r2, r0
ADD r5, r3, r0
ADD r6, r4, r0
ADD r7, r5, r0
HALT
";
        let events = events_of(text);
        let table = build_examples_from_events(&events, DepKind::Gpr);
        let deps: Vec<_> = events.iter().map(EventAt::dependency_event).collect();
        let (base, _) = crate::selector::anneal(
            &deps.iter().copied().filter(|e| e.kind == DepKind::Gpr).collect::<Vec<_>>(),
            2,
            &AnnealSchedule::default(),
        )
        .unwrap();
        let mut last = Ratio::new(0, 1);
        let mut current = base;
        for cap in [2usize, 4, 8, 16] {
            current = crate::selector::grow_selection(&current, cap, &deps);
            let spec = train_speculator(&table, &current, &SpeculatorConfig::default()).unwrap();
            let cov = measure(&spec, &events, &table).unwrap().coverage();
            assert!(cov >= last, "coverage dropped at capacity {cap}");
            last = cov;
        }
    }
}
