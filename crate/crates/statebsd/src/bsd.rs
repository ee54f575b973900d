//! Binary speculation diagrams: rooted DAGs of decision nodes over input
//! bits and speculation leaves that guess a constant 0/1 for the residual
//! sub-function.
//!
//! A diagram starts as a single guessing leaf and is refined by expansion:
//! a leaf is replaced by a decision on one input variable with two child
//! leaves whose guesses are the majority output of the example subset
//! reaching them. Accuracy against a fixed example set never decreases
//! under such an expansion, so training is a sequence of monotone
//! improvements that terminates at accuracy 1.0 on any consistent set once
//! all variables are decided along every path.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BsdError {
    #[error("example set is empty")]
    EmptyExamples,
    #[error("node {0} is not a speculation leaf")]
    NotALeaf(usize),
    #[error("variable {0} already decided on the path to node {1}")]
    VarAlreadyUsed(u8, usize),
    #[error("input width {0} does not match diagram width {1}")]
    WidthMismatch(u8, u8),
    #[error("node budget of {max_nodes} exhausted at accuracy {accuracy}")]
    BudgetExhausted { max_nodes: usize, accuracy: Ratio<u64>, best: Box<Bsd> },
    #[error("malformed artifact: {0}")]
    MalformedArtifact(String),
}

/// A fixed-width bit string, at most 32 bits wide. Bit 0 is variable `x0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BitVector {
    bits: u32,
    width: u8,
}

impl BitVector {
    pub fn new(bits: u32, width: u8) -> Self {
        assert!(width <= 32, "BitVector width capped at 32");
        BitVector { bits: bits & Self::mask(width), width }
    }

    fn mask(width: u8) -> u32 {
        if width == 32 {
            u32::MAX
        } else {
            (1u32 << width) - 1
        }
    }

    pub fn bit(&self, var: u8) -> bool {
        debug_assert!(var < self.width);
        (self.bits >> var) & 1 == 1
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn width(&self) -> u8 {
        self.width
    }
}

/// A multiset of labelled inputs: `(x, f(x))` observations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExampleSet {
    pub rows: Vec<(BitVector, bool)>,
    pub width: u8,
}

impl ExampleSet {
    pub fn new(width: u8, rows: Vec<(BitVector, bool)>) -> Self {
        debug_assert!(rows.iter().all(|(x, _)| x.width() == width));
        ExampleSet { rows, width }
    }

    /// Exhaustive example set for an oracle over `width` inputs.
    pub fn exhaustive(width: u8, mut oracle: impl FnMut(BitVector) -> bool) -> Self {
        assert!(width <= 24, "exhaustive sets capped at 24 bits");
        let rows = (0..1u32 << width)
            .map(|bits| {
                let x = BitVector::new(bits, width);
                (x, oracle(x))
            })
            .collect();
        ExampleSet { rows, width }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BsdNode {
    Decision {
        var: u8,
        lo: NodeId,
        hi: NodeId,
    },
    Speculation {
        guess: bool,
        abstain: bool,
        /// (examples seen at this leaf, examples matching the guess).
        support: (u64, u64),
    },
}

impl BsdNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self, BsdNode::Speculation { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bsd {
    nodes: Vec<BsdNode>,
    root: NodeId,
    input_width: u8,
    expansion_log: Vec<(NodeId, u8)>,
}

fn majority(zeros: u64, ones: u64) -> bool {
    // Ties break toward 0.
    ones > zeros
}

impl Bsd {
    /// A diagram that is a single speculation leaf guessing the majority
    /// output over `examples` (ties toward 0).
    pub fn new_root(examples: &ExampleSet) -> Result<Self, BsdError> {
        if examples.is_empty() {
            return Err(BsdError::EmptyExamples);
        }
        let ones = examples.rows.iter().filter(|(_, y)| *y).count() as u64;
        let zeros = examples.rows.len() as u64 - ones;
        let guess = majority(zeros, ones);
        let matched = if guess { ones } else { zeros };
        Ok(Bsd {
            nodes: vec![BsdNode::Speculation {
                guess,
                abstain: false,
                support: (examples.rows.len() as u64, matched),
            }],
            root: 0,
            input_width: examples.width,
            expansion_log: Vec::new(),
        })
    }

    /// An always-abstaining diagram (used for predictors that never fire).
    pub fn abstain_everywhere(input_width: u8) -> Self {
        Bsd {
            nodes: vec![BsdNode::Speculation { guess: false, abstain: true, support: (0, 0) }],
            root: 0,
            input_width,
            expansion_log: Vec::new(),
        }
    }

    /// A single constant leaf, mainly for hand-built test predictors.
    pub fn constant(input_width: u8, guess: bool) -> Self {
        Bsd {
            nodes: vec![BsdNode::Speculation { guess, abstain: false, support: (0, 0) }],
            root: 0,
            input_width,
            expansion_log: Vec::new(),
        }
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn input_width(&self) -> u8 {
        self.input_width
    }

    pub fn nodes(&self) -> &[BsdNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &BsdNode {
        &self.nodes[id]
    }

    pub fn expansion_log(&self) -> &[(NodeId, u8)] {
        &self.expansion_log
    }

    pub fn decision_count(&self) -> usize {
        self.nodes.iter().filter(|n| !n.is_leaf()).count()
    }

    pub fn leaf_ids(&self) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_leaf()).collect()
    }

    pub fn set_abstain(&mut self, leaf: NodeId, abstain: bool) {
        match &mut self.nodes[leaf] {
            BsdNode::Speculation { abstain: a, .. } => *a = abstain,
            BsdNode::Decision { .. } => panic!("set_abstain on a decision node"),
        }
    }

    /// Variables decided on the path from the root to `target`.
    ///
    /// Nodes are only ever created by expansion, so each node has exactly
    /// one parent and the path is unique.
    pub fn path_vars(&self, target: NodeId) -> Vec<u8> {
        let mut vars = Vec::new();
        let mut found = false;
        self.walk_path(self.root, target, &mut vars, &mut found);
        vars
    }

    fn walk_path(&self, cur: NodeId, target: NodeId, vars: &mut Vec<u8>, found: &mut bool) {
        if *found {
            return;
        }
        if cur == target {
            *found = true;
            return;
        }
        if let BsdNode::Decision { var, lo, hi } = self.nodes[cur] {
            vars.push(var);
            self.walk_path(lo, target, vars, found);
            if !*found {
                self.walk_path(hi, target, vars, found);
            }
            if !*found {
                vars.pop();
            }
        }
    }

    /// Rows of `examples` that reach `node`.
    fn subset_at<'a>(&self, examples: &'a ExampleSet, node: NodeId) -> Vec<&'a (BitVector, bool)> {
        examples
            .rows
            .iter()
            .filter(|(x, _)| self.evaluate_to(*x) == node)
            .collect()
    }

    fn evaluate_to(&self, x: BitVector) -> NodeId {
        let mut cur = self.root;
        loop {
            match self.nodes[cur] {
                BsdNode::Decision { var, lo, hi } => {
                    cur = if x.bit(var) { hi } else { lo };
                }
                BsdNode::Speculation { .. } => return cur,
            }
        }
    }

    /// Walk decisions by `x`'s bits; returns the leaf's guess and identity.
    pub fn evaluate(&self, x: BitVector) -> Result<(bool, NodeId), BsdError> {
        if x.width() != self.input_width {
            return Err(BsdError::WidthMismatch(x.width(), self.input_width));
        }
        let leaf = self.evaluate_to(x);
        match self.nodes[leaf] {
            BsdNode::Speculation { guess, .. } => Ok((guess, leaf)),
            BsdNode::Decision { .. } => unreachable!("evaluate_to returns leaves"),
        }
    }

    /// Guess plus abstain flag at the reached leaf.
    pub fn evaluate_with_abstain(&self, x: BitVector) -> Result<(bool, bool), BsdError> {
        let (guess, leaf) = self.evaluate(x)?;
        match self.nodes[leaf] {
            BsdNode::Speculation { abstain, .. } => Ok((guess, abstain)),
            _ => unreachable!(),
        }
    }

    /// Exact fraction of `eval_set` rows the diagram reproduces.
    pub fn accuracy(&self, eval_set: &ExampleSet) -> Result<Ratio<u64>, BsdError> {
        if eval_set.is_empty() {
            return Err(BsdError::EmptyExamples);
        }
        if eval_set.width != self.input_width {
            return Err(BsdError::WidthMismatch(eval_set.width, self.input_width));
        }
        let mut matched: u64 = 0;
        for &(x, y) in &eval_set.rows {
            let (guess, _) = self.evaluate(x)?;
            if guess == y {
                matched += 1;
            }
        }
        Ok(Ratio::new(matched, eval_set.rows.len() as u64))
    }

    /// Shannon-expand `leaf` on `var`: the leaf becomes a decision whose two
    /// fresh children guess the majority output of the example subset that
    /// reaches them with `var` fixed. An empty subset inherits the parent's
    /// guess, which keeps accuracy monotone vacuously.
    pub fn expand(&mut self, leaf: NodeId, var: u8, examples: &ExampleSet) -> Result<(), BsdError> {
        if examples.width != self.input_width {
            return Err(BsdError::WidthMismatch(examples.width, self.input_width));
        }
        if var >= self.input_width {
            return Err(BsdError::WidthMismatch(var, self.input_width));
        }
        let parent_guess = match self.nodes.get(leaf) {
            Some(BsdNode::Speculation { guess, .. }) => *guess,
            _ => return Err(BsdError::NotALeaf(leaf)),
        };
        if self.path_vars(leaf).contains(&var) {
            return Err(BsdError::VarAlreadyUsed(var, leaf));
        }
        let subset = self.subset_at(examples, leaf);
        self.expand_core(leaf, var, parent_guess, subset.iter().map(|(x, y)| (*x, *y)));
        Ok(())
    }

    /// Shared expansion core: the caller supplies the example subset that
    /// reaches `leaf`.
    fn expand_core(
        &mut self,
        leaf: NodeId,
        var: u8,
        parent_guess: bool,
        subset: impl Iterator<Item = (BitVector, bool)> + Clone,
    ) -> (NodeId, NodeId) {
        let child = |want_hi: bool| -> BsdNode {
            let mut zeros = 0u64;
            let mut ones = 0u64;
            for (_, y) in subset.clone().filter(|(x, _)| x.bit(var) == want_hi) {
                if y {
                    ones += 1;
                } else {
                    zeros += 1;
                }
            }
            let total = zeros + ones;
            let guess = if total == 0 { parent_guess } else { majority(zeros, ones) };
            let matched = if guess { ones } else { zeros };
            BsdNode::Speculation { guess, abstain: false, support: (total, matched) }
        };
        let lo_node = child(false);
        let hi_node = child(true);
        let lo = self.nodes.len();
        self.nodes.push(lo_node);
        let hi = self.nodes.len();
        self.nodes.push(hi_node);
        self.nodes[leaf] = BsdNode::Decision { var, lo, hi };
        self.expansion_log.push((leaf, var));
        (lo, hi)
    }

    /// Greedy policy: among all (impure leaf, unused var) pairs pick the one
    /// maximizing accuracy gain on `examples`; ties break toward the lowest
    /// leaf id, then the lowest var. `None` once every leaf is pure or out
    /// of variables.
    pub fn choose_expansion(&self, examples: &ExampleSet) -> Option<(NodeId, u8)> {
        let mut best: Option<(i64, NodeId, u8)> = None;
        for leaf in self.leaf_ids() {
            let subset = self.subset_at(examples, leaf);
            if let Some(cand) = best_var_for_subset(&subset, &self.path_vars(leaf), self.input_width) {
                let (gain, var) = cand;
                let better = match best {
                    None => true,
                    Some((bg, bl, bv)) => {
                        gain > bg || (gain == bg && (leaf < bl || (leaf == bl && var < bv)))
                    }
                };
                if better {
                    best = Some((gain, leaf, var));
                }
            }
        }
        best.map(|(_, leaf, var)| (leaf, var))
    }

    /// Repeatedly expand (greedy policy) until accuracy reaches
    /// `target_accuracy`, no candidate remains, or the node budget would be
    /// exceeded. Accuracy is monotone, so the current diagram is always the
    /// best seen.
    ///
    /// Selection is exactly [`Bsd::choose_expansion`]'s rule; the loop just
    /// keeps per-leaf row partitions and candidate gains incrementally so
    /// training large tables stays near-linear instead of rescanning the
    /// whole example set per step.
    pub fn train(
        examples: &ExampleSet,
        target_accuracy: Ratio<u64>,
        max_nodes: usize,
    ) -> Result<Bsd, BsdError> {
        assert!(
            target_accuracy > Ratio::new(0, 1) && target_accuracy <= Ratio::new(1, 1),
            "target accuracy must be in (0, 1]"
        );
        assert!(max_nodes >= 1, "need room for at least the root");
        let mut b = Bsd::new_root(examples)?;
        let total_rows = examples.rows.len() as u64;

        struct LeafInfo {
            rows: Vec<u32>,
            /// Best (gain, var) over unused vars, `None` if pure/empty.
            cand: Option<(i64, u8)>,
            used_vars: Vec<u8>,
        }
        let width = examples.width;
        let leaf_info = |rows: Vec<u32>, used_vars: Vec<u8>| -> LeafInfo {
            let subset: Vec<&(BitVector, bool)> =
                rows.iter().map(|&i| &examples.rows[i as usize]).collect();
            let cand = best_var_for_subset(&subset, &used_vars, width);
            LeafInfo { rows, cand, used_vars }
        };

        let mut matched: u64 = match b.nodes[b.root] {
            BsdNode::Speculation { support: (_, m), .. } => m,
            _ => unreachable!(),
        };
        let mut leaves: std::collections::BTreeMap<NodeId, LeafInfo> = std::collections::BTreeMap::new();
        leaves.insert(b.root, leaf_info((0..examples.rows.len() as u32).collect(), Vec::new()));

        let reached = |matched: u64| {
            // matched / total >= target, compared exactly.
            (matched as u128) * (*target_accuracy.denom() as u128)
                >= (*target_accuracy.numer() as u128) * (total_rows as u128)
        };

        loop {
            if reached(matched) {
                return Ok(b);
            }
            // Global argmax with ties toward lowest leaf id then lowest var;
            // BTreeMap iteration is id-ascending, so strict > keeps the rule.
            let mut best: Option<(i64, NodeId, u8)> = None;
            for (&leaf, info) in &leaves {
                if let Some((gain, var)) = info.cand {
                    if best.map_or(true, |(bg, _, _)| gain > bg) {
                        best = Some((gain, leaf, var));
                    }
                }
            }
            let Some((gain, leaf, var)) = best else {
                return Ok(b);
            };
            if b.nodes.len() + 2 > max_nodes {
                let accuracy = Ratio::new(matched, total_rows);
                return Err(BsdError::BudgetExhausted { max_nodes, accuracy, best: Box::new(b) });
            }
            let info = leaves.remove(&leaf).expect("candidate leaf is live");
            let parent_guess = match b.nodes[leaf] {
                BsdNode::Speculation { guess, .. } => guess,
                _ => unreachable!(),
            };
            let (lo, hi) = b.expand_core(
                leaf,
                var,
                parent_guess,
                info.rows.iter().map(|&i| examples.rows[i as usize]),
            );
            matched = (matched as i64 + gain) as u64;
            let (lo_rows, hi_rows): (Vec<u32>, Vec<u32>) = info
                .rows
                .iter()
                .partition(|&&i| !examples.rows[i as usize].0.bit(var));
            let mut used = info.used_vars;
            used.push(var);
            leaves.insert(lo, leaf_info(lo_rows, used.clone()));
            leaves.insert(hi, leaf_info(hi_rows, used));
        }
    }

    /// Expand every leaf on every unused variable, lowest-first: the full
    /// Shannon tree. On a consistent example set this reaches accuracy 1.0.
    pub fn fully_expand(&mut self, examples: &ExampleSet) {
        loop {
            let mut expanded = false;
            for leaf in self.leaf_ids() {
                let used = self.path_vars(leaf);
                if let Some(var) = (0..self.input_width).find(|v| !used.contains(v)) {
                    self.expand(leaf, var, examples).expect("legal by construction");
                    expanded = true;
                }
            }
            if !expanded {
                return;
            }
        }
    }
}

/// Best (gain, var) for one leaf's subset, or `None` if the subset is pure,
/// empty, or out of variables. Gain is in matched-row counts.
fn best_var_for_subset(
    subset: &[&(BitVector, bool)],
    used_vars: &[u8],
    width: u8,
) -> Option<(i64, u8)> {
    let ones = subset.iter().filter(|(_, y)| *y).count() as u64;
    let zeros = subset.len() as u64 - ones;
    if zeros == 0 || ones == 0 {
        return None; // pure (or empty): nothing to gain
    }
    let guess = majority(zeros, ones);
    let matched_now = if guess { ones } else { zeros } as i64;
    let mut best: Option<(i64, u8)> = None;
    for var in 0..width {
        if used_vars.contains(&var) {
            continue;
        }
        let mut counts = [[0u64; 2]; 2]; // [bit][output]
        for (x, y) in subset {
            counts[x.bit(var) as usize][*y as usize] += 1;
        }
        let matched_after = (0..2)
            .map(|side| {
                let (z, o) = (counts[side][0], counts[side][1]);
                if z + o == 0 {
                    // Empty child inherits the parent guess and matches nothing.
                    0
                } else if majority(z, o) {
                    o
                } else {
                    z
                }
            })
            .sum::<u64>() as i64;
        let gain = matched_after - matched_now;
        if best.map_or(true, |(bg, _)| gain > bg) {
            best = Some((gain, var));
        }
    }
    best
}

// --- artifact form -------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(tag = "t")]
enum ArtifactNode {
    #[serde(rename = "d")]
    Decision { v: u8, lo: usize, hi: usize },
    #[serde(rename = "s")]
    Speculation { g: u8, a: bool },
}

#[derive(Serialize, Deserialize)]
struct Artifact {
    width: u8,
    root: usize,
    nodes: Vec<ArtifactNode>,
}

impl Bsd {
    pub fn to_artifact_value(&self) -> serde_json::Value {
        let nodes = self
            .nodes
            .iter()
            .map(|n| match *n {
                BsdNode::Decision { var, lo, hi } => ArtifactNode::Decision { v: var, lo, hi },
                BsdNode::Speculation { guess, abstain, .. } => {
                    ArtifactNode::Speculation { g: guess as u8, a: abstain }
                }
            })
            .collect();
        serde_json::to_value(Artifact { width: self.input_width, root: self.root, nodes })
            .expect("artifact serializes")
    }

    pub fn serialize(&self) -> String {
        serde_json::to_string(&self.to_artifact_value()).expect("artifact serializes")
    }

    pub fn deserialize(text: &str) -> Result<Bsd, BsdError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| BsdError::MalformedArtifact(e.to_string()))?;
        Self::from_artifact_value(&value)
    }

    pub fn from_artifact_value(value: &serde_json::Value) -> Result<Bsd, BsdError> {
        let art: Artifact = serde_json::from_value(value.clone())
            .map_err(|e| BsdError::MalformedArtifact(e.to_string()))?;
        if art.root != 0 {
            return Err(BsdError::MalformedArtifact(format!("root must be 0, got {}", art.root)));
        }
        if art.nodes.is_empty() {
            return Err(BsdError::MalformedArtifact("no nodes".into()));
        }
        let nodes: Vec<BsdNode> = art
            .nodes
            .iter()
            .map(|n| match *n {
                ArtifactNode::Decision { v, lo, hi } => BsdNode::Decision { var: v, lo, hi },
                ArtifactNode::Speculation { g, a } => {
                    BsdNode::Speculation { guess: g != 0, abstain: a, support: (0, 0) }
                }
            })
            .collect();
        // Refs in range, acyclic, and every node reachable from the root.
        let mut state = vec![0u8; nodes.len()]; // 0 unvisited, 1 on stack, 2 done
        fn dfs(nodes: &[BsdNode], state: &mut [u8], id: usize) -> Result<(), BsdError> {
            if id >= nodes.len() {
                return Err(BsdError::MalformedArtifact(format!("node ref {id} out of range")));
            }
            match state[id] {
                1 => return Err(BsdError::MalformedArtifact(format!("cycle through node {id}"))),
                2 => return Ok(()),
                _ => {}
            }
            state[id] = 1;
            if let BsdNode::Decision { var, lo, hi } = nodes[id] {
                if var >= 32 {
                    return Err(BsdError::MalformedArtifact(format!("var {var} out of range")));
                }
                dfs(nodes, state, lo)?;
                dfs(nodes, state, hi)?;
            }
            state[id] = 2;
            Ok(())
        }
        dfs(&nodes, &mut state, art.root)?;
        if let Some(unreached) = state.iter().position(|&s| s != 2) {
            return Err(BsdError::MalformedArtifact(format!(
                "node {unreached} unreachable from root"
            )));
        }
        for (id, n) in nodes.iter().enumerate() {
            if let BsdNode::Decision { var, .. } = n {
                if *var >= art.width {
                    return Err(BsdError::MalformedArtifact(format!(
                        "node {id} decides var {var} beyond width {}",
                        art.width
                    )));
                }
            }
        }
        Ok(Bsd { nodes, root: art.root, input_width: art.width, expansion_log: Vec::new() })
    }
}

// --- netlist export ------------------------------------------------------

/// A combinational netlist: constant drivers and 2:1 muxes selected by
/// input variables. Gate `output` drives the primary output.
#[derive(Debug, Clone)]
pub struct Netlist {
    pub gates: Vec<NetGate>,
    pub output: usize,
    pub input_width: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetGate {
    Const(bool),
    /// out = sel_var ? hi : lo
    Mux { sel_var: u8, lo: usize, hi: usize },
}

impl Netlist {
    pub fn eval(&self, x: BitVector) -> bool {
        fn eval_gate(gates: &[NetGate], id: usize, x: BitVector) -> bool {
            match gates[id] {
                NetGate::Const(v) => v,
                NetGate::Mux { sel_var, lo, hi } => {
                    if x.bit(sel_var) {
                        eval_gate(gates, hi, x)
                    } else {
                        eval_gate(gates, lo, x)
                    }
                }
            }
        }
        eval_gate(&self.gates, self.output, x)
    }
}

/// Lower a diagram to gates: decisions become muxes, leaves become
/// constant drivers. The netlist computes exactly `evaluate(..).0`.
pub fn to_netlist(b: &Bsd) -> Netlist {
    let gates = b
        .nodes()
        .iter()
        .map(|n| match *n {
            BsdNode::Decision { var, lo, hi } => NetGate::Mux { sel_var: var, lo, hi },
            BsdNode::Speculation { guess, .. } => NetGate::Const(guess),
        })
        .collect();
    Netlist { gates, output: b.root(), input_width: b.input_width() }
}
