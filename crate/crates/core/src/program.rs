//! Program genomes and their exact evaluation.
//!
//! Three interchangeable structures represent an evolvable quantum program:
//!
//! * [`LinearProgram`]: a flat gate sequence.
//! * [`TreeProgram`]: a gate-building expression tree, executed post-order.
//!   A gate node's children supply its operand indices and the node returns
//!   the index of its first operand (the control for multi-qubit gates).
//! * [`LinearTreeProgram`]: straight-line segments joined by measurement
//!   branch points; the left child runs on outcome 0, the right on 1.
//!
//! Evaluation never samples. A `MEASURE` gate forks every live branch into
//! its possible outcomes, so the result is the exact distribution over
//! final states together with the probability-weighted oracle query count.
//! The number of live branches is capped (default [`DEFAULT_MAX_BRANCHES`])
//! and exceeding the cap is an evaluation failure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{self, GateApplication, GateKind};
use crate::problems::Oracle;
use crate::qstate::StateVector;

/// Default cap on simultaneously live measurement branches.
pub const DEFAULT_MAX_BRANCHES: usize = 1 << 10;

/// Evaluation knobs shared by all program structures.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub max_branches: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            max_branches: DEFAULT_MAX_BRANCHES,
        }
    }
}

/// A flat sequence of gate applications on a fixed-width register.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearProgram {
    pub num_qubits: usize,
    pub gates: Vec<GateApplication>,
}

/// Expression-tree program. Leaves are qubit indices; interior nodes build
/// gates whose operands come from their children's return values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeProgram {
    pub num_qubits: usize,
    pub root: TreeNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Gate {
        kind: GateKind,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        params: Vec<f64>,
        children: Vec<TreeNode>,
    },
    Leaf {
        qubit: usize,
    },
}

/// Linear segments joined by measurement branch points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearTreeProgram {
    pub num_qubits: usize,
    pub root: LinearTreeNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearTreeNode {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segment: Vec<GateApplication>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<MeasureBranchPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureBranchPoint {
    pub qubit: usize,
    pub zero: Box<LinearTreeNode>,
    pub one: Box<LinearTreeNode>,
}

/// Any of the three program structures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "kebab-case")]
pub enum QuantumProgram {
    Linear(LinearProgram),
    Tree(TreeProgram),
    LinearTree(LinearTreeProgram),
}

/// One surviving branch of an evaluation: its probability, final state, the
/// classical bits observed along it (in measurement order) and how many
/// oracle calls it made.
#[derive(Debug, Clone)]
pub struct EvalBranch {
    pub probability: f64,
    pub state: StateVector,
    pub observed: Vec<u8>,
    pub oracle_calls: u32,
}

/// Exact result of running a program: every branch, the probability-weighted
/// oracle query count, and the program's static gate count.
#[derive(Debug, Clone)]
pub struct EvaluationResult {
    pub branches: Vec<EvalBranch>,
    pub expected_oracle_calls: f64,
    pub gate_count: usize,
}

impl LinearProgram {
    pub fn new(num_qubits: usize, gates: Vec<GateApplication>) -> Self {
        LinearProgram { num_qubits, gates }
    }

    /// Gate applications excluding `WIRE`; `MEASURE` counts.
    pub fn gate_count(&self) -> usize {
        self.gates.iter().filter(|g| g.kind != GateKind::Wire).count()
    }

    pub fn validate(&self, oracle_input_bits: Option<usize>, adjacent_only: bool) -> Result<()> {
        for app in &self.gates {
            app.validate(self.num_qubits, oracle_input_bits, adjacent_only)?;
        }
        Ok(())
    }
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf { .. })
    }

    /// Total node count (leaves included).
    pub fn node_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Gate { children, .. } => {
                1 + children.iter().map(TreeNode::node_count).sum::<usize>()
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Gate { children, .. } => {
                1 + children.iter().map(TreeNode::depth).max().unwrap_or(0)
            }
        }
    }

    /// Pre-order node access; index 0 is the node itself.
    pub fn get_node(&self, index: usize) -> Option<&TreeNode> {
        fn walk<'a>(node: &'a TreeNode, index: &mut usize) -> Option<&'a TreeNode> {
            if *index == 0 {
                return Some(node);
            }
            *index -= 1;
            if let TreeNode::Gate { children, .. } = node {
                for ch in children {
                    if let Some(found) = walk(ch, index) {
                        return Some(found);
                    }
                }
            }
            None
        }
        let mut index = index;
        walk(self, &mut index)
    }

    /// Replaces the node at pre-order `index` with `new`, returning false if
    /// the index is out of range.
    pub fn replace_node(&mut self, index: usize, new: TreeNode) -> bool {
        fn walk(node: &mut TreeNode, index: &mut usize, new: &mut Option<TreeNode>) -> bool {
            if *index == 0 {
                *node = new.take().expect("replacement consumed once");
                return true;
            }
            *index -= 1;
            if let TreeNode::Gate { children, .. } = node {
                for ch in children {
                    if walk(ch, index, new) {
                        return true;
                    }
                }
            }
            false
        }
        let mut index = index;
        walk(self, &mut index, &mut Some(new))
    }

    /// Gate nodes in this subtree, excluding `WIRE`.
    pub fn gate_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Gate { kind, children, .. } => {
                let own = usize::from(*kind != GateKind::Wire);
                own + children.iter().map(TreeNode::gate_count).sum::<usize>()
            }
        }
    }

    fn validate(&self, num_qubits: usize, oracle_input_bits: Option<usize>) -> Result<()> {
        match self {
            TreeNode::Leaf { qubit } => {
                if *qubit >= num_qubits {
                    return Err(Error::QubitOutOfRange {
                        index: *qubit,
                        qubits: num_qubits,
                    });
                }
            }
            TreeNode::Gate {
                kind,
                params,
                children,
            } => {
                let expected = match kind.arity() {
                    Some(a) => Some(a),
                    None => oracle_input_bits.map(|m| m + 1),
                };
                if let Some(expected) = expected {
                    if children.len() != expected {
                        return Err(Error::ArityMismatch {
                            gate: kind.name().to_string(),
                            expected,
                            actual: children.len(),
                        });
                    }
                } else if children.len() < 2 {
                    return Err(Error::ArityMismatch {
                        gate: kind.name().to_string(),
                        expected: 2,
                        actual: children.len(),
                    });
                }
                if children.len() > num_qubits {
                    // Operand collision repair needs at least as many wires
                    // as operands.
                    return Err(Error::ArityMismatch {
                        gate: kind.name().to_string(),
                        expected: num_qubits,
                        actual: children.len(),
                    });
                }
                if params.len() != kind.param_count() {
                    return Err(Error::ParamMismatch {
                        gate: kind.name().to_string(),
                        expected: kind.param_count(),
                        actual: params.len(),
                    });
                }
                for ch in children {
                    ch.validate(num_qubits, oracle_input_bits)?;
                }
            }
        }
        Ok(())
    }
}

impl TreeProgram {
    pub fn gate_count(&self) -> usize {
        self.root.gate_count()
    }

    pub fn validate(&self, oracle_input_bits: Option<usize>, _adjacent_only: bool) -> Result<()> {
        self.root.validate(self.num_qubits, oracle_input_bits)
    }
}

impl LinearTreeNode {
    pub fn leaf(segment: Vec<GateApplication>) -> Self {
        LinearTreeNode {
            segment,
            branch: None,
        }
    }

    /// Count of nodes in the branch tree (this node included).
    pub fn node_count(&self) -> usize {
        match &self.branch {
            None => 1,
            Some(b) => 1 + b.zero.node_count() + b.one.node_count(),
        }
    }

    pub fn get_node(&self, index: usize) -> Option<&LinearTreeNode> {
        fn walk<'a>(node: &'a LinearTreeNode, index: &mut usize) -> Option<&'a LinearTreeNode> {
            if *index == 0 {
                return Some(node);
            }
            *index -= 1;
            if let Some(b) = &node.branch {
                for ch in [&b.zero, &b.one] {
                    if let Some(found) = walk(ch, index) {
                        return Some(found);
                    }
                }
            }
            None
        }
        let mut index = index;
        walk(self, &mut index)
    }

    pub fn get_node_mut(&mut self, index: usize) -> Option<&mut LinearTreeNode> {
        fn walk<'a>(
            node: &'a mut LinearTreeNode,
            index: &mut usize,
        ) -> Option<&'a mut LinearTreeNode> {
            if *index == 0 {
                return Some(node);
            }
            *index -= 1;
            if let Some(b) = &mut node.branch {
                if let Some(found) = walk(&mut b.zero, index) {
                    return Some(found);
                }
                return walk(&mut b.one, index);
            }
            None
        }
        let mut index = index;
        walk(self, &mut index)
    }

    /// Gates in this node and its descendants, excluding `WIRE`.
    pub fn gate_count(&self) -> usize {
        let own = self
            .segment
            .iter()
            .filter(|g| g.kind != GateKind::Wire)
            .count();
        match &self.branch {
            None => own,
            Some(b) => own + b.zero.gate_count() + b.one.gate_count(),
        }
    }

    fn validate(
        &self,
        num_qubits: usize,
        oracle_input_bits: Option<usize>,
        adjacent_only: bool,
    ) -> Result<()> {
        for app in &self.segment {
            app.validate(num_qubits, oracle_input_bits, adjacent_only)?;
        }
        if let Some(b) = &self.branch {
            if b.qubit >= num_qubits {
                return Err(Error::QubitOutOfRange {
                    index: b.qubit,
                    qubits: num_qubits,
                });
            }
            b.zero.validate(num_qubits, oracle_input_bits, adjacent_only)?;
            b.one.validate(num_qubits, oracle_input_bits, adjacent_only)?;
        }
        Ok(())
    }
}

impl LinearTreeProgram {
    /// Total over every segment in the branch tree, not just one path.
    pub fn gate_count(&self) -> usize {
        self.root.gate_count()
    }

    pub fn validate(&self, oracle_input_bits: Option<usize>, adjacent_only: bool) -> Result<()> {
        self.root
            .validate(self.num_qubits, oracle_input_bits, adjacent_only)
    }
}

impl QuantumProgram {
    pub fn num_qubits(&self) -> usize {
        match self {
            QuantumProgram::Linear(p) => p.num_qubits,
            QuantumProgram::Tree(p) => p.num_qubits,
            QuantumProgram::LinearTree(p) => p.num_qubits,
        }
    }

    pub fn gate_count(&self) -> usize {
        match self {
            QuantumProgram::Linear(p) => p.gate_count(),
            QuantumProgram::Tree(p) => p.gate_count(),
            QuantumProgram::LinearTree(p) => p.gate_count(),
        }
    }

    pub fn structure_name(&self) -> &'static str {
        match self {
            QuantumProgram::Linear(_) => "linear",
            QuantumProgram::Tree(_) => "tree",
            QuantumProgram::LinearTree(_) => "linear-tree",
        }
    }

    pub fn validate(&self, oracle_input_bits: Option<usize>, adjacent_only: bool) -> Result<()> {
        match self {
            QuantumProgram::Linear(p) => p.validate(oracle_input_bits, adjacent_only),
            QuantumProgram::Tree(p) => p.validate(oracle_input_bits, adjacent_only),
            QuantumProgram::LinearTree(p) => p.validate(oracle_input_bits, adjacent_only),
        }
    }

    pub fn eval(
        &self,
        init: &StateVector,
        oracle: Option<&Oracle>,
        opts: &EvalOptions,
    ) -> Result<EvaluationResult> {
        match self {
            QuantumProgram::Linear(p) => eval_linear(p, init, oracle, opts),
            QuantumProgram::Tree(p) => eval_tree(p, init, oracle, opts),
            QuantumProgram::LinearTree(p) => eval_linear_tree(p, init, oracle, opts),
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

fn root_branch(init: &StateVector) -> Vec<EvalBranch> {
    vec![EvalBranch {
        probability: 1.0,
        state: init.clone(),
        observed: Vec::new(),
        oracle_calls: 0,
    }]
}

/// Applies one gate to every live branch. `MEASURE` forks branches, `ORACLE`
/// permutes amplitudes and bumps the branch query counter, `WIRE` is a no-op
/// and everything else is a unitary.
fn apply_to_branches(
    branches: &mut Vec<EvalBranch>,
    app: &GateApplication,
    oracle: Option<&Oracle>,
    max_branches: usize,
) -> Result<()> {
    match app.kind {
        GateKind::Wire => {}
        GateKind::Measure => {
            let qubit = app.qubits[0];
            let mut forked = Vec::with_capacity(branches.len() * 2);
            for b in branches.drain(..) {
                for m in b.state.branch_measure(qubit)? {
                    let mut observed = b.observed.clone();
                    observed.push(m.bit);
                    forked.push(EvalBranch {
                        probability: b.probability * m.probability,
                        state: m.post_state,
                        observed,
                        oracle_calls: b.oracle_calls,
                    });
                }
            }
            if forked.len() > max_branches {
                return Err(Error::BranchExplosion(max_branches));
            }
            *branches = forked;
        }
        GateKind::Oracle => {
            let oracle = oracle.ok_or(Error::MissingOracle)?;
            for b in branches.iter_mut() {
                b.state = oracle.apply(&b.state, &app.qubits)?;
                b.oracle_calls += 1;
            }
        }
        _ => {
            let m = gates::standard_matrix(app.kind, &app.params)?;
            for b in branches.iter_mut() {
                b.state = gates::apply_matrix(&b.state, &m, &app.qubits)?;
            }
        }
    }
    Ok(())
}

fn finish(branches: Vec<EvalBranch>, gate_count: usize) -> EvaluationResult {
    let expected_oracle_calls = branches
        .iter()
        .map(|b| b.probability * f64::from(b.oracle_calls))
        .sum();
    EvaluationResult {
        branches,
        expected_oracle_calls,
        gate_count,
    }
}

fn check_register(program_qubits: usize, init: &StateVector) -> Result<()> {
    if init.num_qubits() != program_qubits {
        return Err(Error::WrongQubitCount {
            expected: program_qubits,
            actual: init.num_qubits(),
        });
    }
    Ok(())
}

/// Runs a linear program, enumerating every measurement outcome exactly.
pub fn eval_linear(
    p: &LinearProgram,
    init: &StateVector,
    oracle: Option<&Oracle>,
    opts: &EvalOptions,
) -> Result<EvaluationResult> {
    check_register(p.num_qubits, init)?;
    p.validate(oracle.map(Oracle::input_bits), false)?;
    let mut branches = root_branch(init);
    for app in &p.gates {
        apply_to_branches(&mut branches, app, oracle, opts.max_branches)?;
    }
    Ok(finish(branches, p.gate_count()))
}

/// Chooses the next free operand index: raw return values are clamped modulo
/// the register size and collisions with already-claimed operands advance to
/// the next free wire.
fn resolve_operand(raw: usize, taken: &[usize], num_qubits: usize) -> usize {
    let mut q = raw % num_qubits;
    while taken.contains(&q) {
        q = (q + 1) % num_qubits;
    }
    q
}

/// Runs a tree program by direct post-order interpretation: children are
/// evaluated left to right (applying their gates as they go), then the node
/// applies its own gate to the operands the children returned. Returns the
/// node's qubit index: the leaf value, or a gate node's first operand.
pub fn eval_tree(
    p: &TreeProgram,
    init: &StateVector,
    oracle: Option<&Oracle>,
    opts: &EvalOptions,
) -> Result<EvaluationResult> {
    check_register(p.num_qubits, init)?;
    p.validate(oracle.map(Oracle::input_bits), false)?;
    let mut branches = root_branch(init);

    fn eval_node(
        node: &TreeNode,
        num_qubits: usize,
        oracle: Option<&Oracle>,
        max_branches: usize,
        branches: &mut Vec<EvalBranch>,
    ) -> Result<usize> {
        match node {
            TreeNode::Leaf { qubit } => Ok(qubit % num_qubits),
            TreeNode::Gate {
                kind,
                params,
                children,
            } => {
                let mut operands: Vec<usize> = Vec::with_capacity(children.len());
                for ch in children {
                    let raw = eval_node(ch, num_qubits, oracle, max_branches, branches)?;
                    let q = resolve_operand(raw, &operands, num_qubits);
                    operands.push(q);
                }
                let app = GateApplication::with_params(*kind, params.clone(), operands.clone());
                apply_to_branches(branches, &app, oracle, max_branches)?;
                Ok(operands[0])
            }
        }
    }

    eval_node(
        &p.root,
        p.num_qubits,
        oracle,
        opts.max_branches,
        &mut branches,
    )?;
    Ok(finish(branches, p.gate_count()))
}

/// Flattens a tree program into the linear program its post-order traversal
/// performs. Kept independent of [`eval_tree`] so the two can cross-check
/// each other.
pub fn linearize(p: &TreeProgram) -> LinearProgram {
    fn walk(node: &TreeNode, num_qubits: usize, out: &mut Vec<GateApplication>) -> usize {
        match node {
            TreeNode::Leaf { qubit } => qubit % num_qubits,
            TreeNode::Gate {
                kind,
                params,
                children,
            } => {
                let mut operands: Vec<usize> = Vec::with_capacity(children.len());
                for ch in children {
                    let raw = walk(ch, num_qubits, out);
                    let mut q = raw % num_qubits;
                    while operands.contains(&q) {
                        q = (q + 1) % num_qubits;
                    }
                    operands.push(q);
                }
                out.push(GateApplication::with_params(
                    *kind,
                    params.clone(),
                    operands.clone(),
                ));
                operands[0]
            }
        }
    }

    let mut gates = Vec::new();
    walk(&p.root, p.num_qubits, &mut gates);
    LinearProgram {
        num_qubits: p.num_qubits,
        gates,
    }
}

/// Runs a linear-tree program: each node's segment executes on every live
/// branch, then the branch point measures its qubit and routes outcome 0
/// into the `zero` child and outcome 1 into the `one` child.
pub fn eval_linear_tree(
    p: &LinearTreeProgram,
    init: &StateVector,
    oracle: Option<&Oracle>,
    opts: &EvalOptions,
) -> Result<EvaluationResult> {
    check_register(p.num_qubits, init)?;
    p.validate(oracle.map(Oracle::input_bits), false)?;

    fn eval_node(
        node: &LinearTreeNode,
        mut branches: Vec<EvalBranch>,
        oracle: Option<&Oracle>,
        max_branches: usize,
        out: &mut Vec<EvalBranch>,
    ) -> Result<()> {
        for app in &node.segment {
            apply_to_branches(&mut branches, app, oracle, max_branches)?;
        }
        match &node.branch {
            None => {
                out.extend(branches);
                if out.len() > max_branches {
                    return Err(Error::BranchExplosion(max_branches));
                }
            }
            Some(point) => {
                for b in branches {
                    for m in b.state.branch_measure(point.qubit)? {
                        let child = if m.bit == 0 { &point.zero } else { &point.one };
                        let mut observed = b.observed.clone();
                        observed.push(m.bit);
                        let next = EvalBranch {
                            probability: b.probability * m.probability,
                            state: m.post_state,
                            observed,
                            oracle_calls: b.oracle_calls,
                        };
                        eval_node(child, vec![next], oracle, max_branches, out)?;
                    }
                }
            }
        }
        Ok(())
    }

    let mut out = Vec::new();
    eval_node(
        &p.root,
        root_branch(init),
        oracle,
        opts.max_branches,
        &mut out,
    )?;
    Ok(finish(out, p.gate_count()))
}

// ---------------------------------------------------------------------------
// Array-of-strings encoding
// ---------------------------------------------------------------------------

/// Encodes a linear program as time-step rows of gate names, one gate per
/// step, padded with `WIRE`. Multi-qubit gates must sit on ascending
/// consecutive wires (the row form cannot express anything else); `ORACLE`
/// has no fixed row span and is not encodable.
pub fn lukac_encode(p: &LinearProgram) -> Result<Vec<Vec<String>>> {
    let n = p.num_qubits;
    let mut steps = Vec::with_capacity(p.gates.len());
    for app in &p.gates {
        let arity = app
            .kind
            .arity()
            .ok_or_else(|| Error::NotEncodable(app.kind.name().to_string()))?;
        let consecutive = app
            .qubits
            .windows(2)
            .all(|w| w[1] == w[0] + 1);
        if app.qubits.len() != arity || !consecutive {
            return Err(Error::NotTileable {
                context: format!("{} on {:?}", app.kind.name(), app.qubits),
            });
        }
        let start = app.qubits[0];
        if start + arity > n {
            return Err(Error::NotTileable {
                context: format!("{} on {:?}", app.kind.name(), app.qubits),
            });
        }
        let mut step = Vec::new();
        let mut q = 0;
        while q < n {
            if q == start {
                step.push(encode_gate_string(app));
                q += arity;
            } else {
                step.push("WIRE".to_string());
                q += 1;
            }
        }
        steps.push(step);
    }
    Ok(steps)
}

fn encode_gate_string(app: &GateApplication) -> String {
    let name = match app.kind {
        GateKind::H => "H",
        other => other.name(),
    };
    if app.params.is_empty() {
        name.to_string()
    } else {
        let params: Vec<String> = app.params.iter().map(|p| format!("{p}")).collect();
        format!("{name}({})", params.join(","))
    }
}

/// Decodes an array-of-strings encoding back into a linear program. `WIRE`
/// rows are padding and produce no gate, so `decode(encode(p))` equals `p`
/// up to explicit `WIRE` applications.
pub fn lukac_decode(steps: &[Vec<String>], num_qubits: usize) -> Result<LinearProgram> {
    let mut gates = Vec::new();
    for (row, step) in steps.iter().enumerate() {
        let mut cells = step.iter();
        let mut q = 0;
        while q < num_qubits {
            let cell = cells.next().ok_or_else(|| Error::Parse {
                line: row + 1,
                message: format!("step covers {q} of {num_qubits} qubits"),
            })?;
            let (kind, params) = decode_gate_string(cell, row + 1)?;
            let arity = kind.arity().ok_or_else(|| Error::NotEncodable(cell.clone()))?;
            if q + arity > num_qubits {
                return Err(Error::Parse {
                    line: row + 1,
                    message: format!("{cell} overflows the register at row {q}"),
                });
            }
            if kind != GateKind::Wire {
                gates.push(GateApplication::with_params(
                    kind,
                    params,
                    (q..q + arity).collect(),
                ));
            }
            q += arity;
        }
        if cells.next().is_some() {
            return Err(Error::Parse {
                line: row + 1,
                message: "extra cells after the register is covered".to_string(),
            });
        }
    }
    Ok(LinearProgram { num_qubits, gates })
}

fn decode_gate_string(cell: &str, line: usize) -> Result<(GateKind, Vec<f64>)> {
    let (name, params) = match cell.find('(') {
        None => (cell, Vec::new()),
        Some(open) => {
            let inner = cell[open + 1..].strip_suffix(')').ok_or_else(|| Error::Parse {
                line,
                message: format!("unterminated parameter list in {cell:?}"),
            })?;
            let params = inner
                .split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        message: format!("bad parameter {s:?} in {cell:?}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            (&cell[..open], params)
        }
    };
    let kind = GateKind::from_name(name).map_err(|_| Error::Parse {
        line,
        message: format!("unknown gate {name:?}"),
    })?;
    Ok((kind, params))
}

// ---------------------------------------------------------------------------
// Textual program format
// ---------------------------------------------------------------------------

/// Renders a program in prefix notation, one `(KIND qubits.. params..)` form
/// per gate. Trees are wrapped in a `(TREE ..)` form and rendered with
/// indentation; linear-trees use `(NODE ..)` with `(BRANCH q ..)` markers.
pub fn render_text(p: &QuantumProgram) -> String {
    match p {
        QuantumProgram::Linear(p) => {
            let lines: Vec<String> = p.gates.iter().map(render_app).collect();
            lines.join("\n")
        }
        QuantumProgram::Tree(p) => {
            let mut out = String::from("(TREE");
            render_tree_node(&p.root, 2, &mut out);
            out.push(')');
            out
        }
        QuantumProgram::LinearTree(p) => {
            let mut out = String::new();
            render_lt_node(&p.root, 0, &mut out);
            out
        }
    }
}

fn render_app(app: &GateApplication) -> String {
    let mut parts = vec![app.kind.name().to_string()];
    parts.extend(app.qubits.iter().map(|q| q.to_string()));
    parts.extend(app.params.iter().map(|p| format!("{p}")));
    format!("({})", parts.join(" "))
}

fn render_tree_node(node: &TreeNode, indent: usize, out: &mut String) {
    out.push('\n');
    out.push_str(&" ".repeat(indent));
    match node {
        TreeNode::Leaf { qubit } => out.push_str(&qubit.to_string()),
        TreeNode::Gate {
            kind,
            params,
            children,
        } => {
            if children.iter().all(TreeNode::is_leaf) {
                let mut parts = vec![kind.name().to_string()];
                for ch in children {
                    if let TreeNode::Leaf { qubit } = ch {
                        parts.push(qubit.to_string());
                    }
                }
                parts.extend(params.iter().map(|p| format!("{p}")));
                out.push_str(&format!("({})", parts.join(" ")));
            } else {
                out.push('(');
                out.push_str(kind.name());
                for ch in children {
                    render_tree_node(ch, indent + 2, out);
                }
                for p in params {
                    out.push('\n');
                    out.push_str(&" ".repeat(indent + 2));
                    out.push_str(&format!("{p}"));
                }
                out.push(')');
            }
        }
    }
}

fn render_lt_node(node: &LinearTreeNode, indent: usize, out: &mut String) {
    out.push_str(&" ".repeat(indent));
    out.push_str("(NODE");
    for app in &node.segment {
        out.push('\n');
        out.push_str(&" ".repeat(indent + 2));
        out.push_str(&render_app(app));
    }
    if let Some(b) = &node.branch {
        out.push('\n');
        out.push_str(&" ".repeat(indent + 2));
        out.push_str(&format!("(BRANCH {}", b.qubit));
        for child in [&b.zero, &b.one] {
            out.push('\n');
            render_lt_node(child, indent + 4, out);
        }
        out.push(')');
    }
    out.push(')');
}

#[derive(Debug, Clone)]
enum SExpr {
    Atom(usize, String),
    List(usize, Vec<SExpr>),
}

fn tokenize(src: &str) -> Result<Vec<(usize, String)>> {
    let mut tokens = Vec::new();
    let mut line = 1;
    let mut atom = String::new();
    let mut atom_line = 1;
    for ch in src.chars() {
        match ch {
            '(' | ')' => {
                if !atom.is_empty() {
                    tokens.push((atom_line, std::mem::take(&mut atom)));
                }
                tokens.push((line, ch.to_string()));
            }
            c if c.is_whitespace() => {
                if !atom.is_empty() {
                    tokens.push((atom_line, std::mem::take(&mut atom)));
                }
                if c == '\n' {
                    line += 1;
                }
            }
            c => {
                if atom.is_empty() {
                    atom_line = line;
                }
                atom.push(c);
            }
        }
    }
    if !atom.is_empty() {
        tokens.push((atom_line, atom));
    }
    Ok(tokens)
}

fn parse_sexprs(tokens: &[(usize, String)]) -> Result<Vec<SExpr>> {
    let mut stack: Vec<(usize, Vec<SExpr>)> = Vec::new();
    let mut top = Vec::new();
    for (line, tok) in tokens {
        match tok.as_str() {
            "(" => stack.push((*line, Vec::new())),
            ")" => {
                let (open_line, items) = stack.pop().ok_or(Error::Parse {
                    line: *line,
                    message: "unmatched closing parenthesis".to_string(),
                })?;
                let expr = SExpr::List(open_line, items);
                match stack.last_mut() {
                    Some((_, parent)) => parent.push(expr),
                    None => top.push(expr),
                }
            }
            _ => {
                let expr = SExpr::Atom(*line, tok.clone());
                match stack.last_mut() {
                    Some((_, parent)) => parent.push(expr),
                    None => top.push(expr),
                }
            }
        }
    }
    if let Some((line, _)) = stack.last() {
        return Err(Error::Parse {
            line: *line,
            message: "unclosed parenthesis".to_string(),
        });
    }
    Ok(top)
}

fn atom_usize(expr: &SExpr) -> Result<usize> {
    match expr {
        SExpr::Atom(line, s) => s.parse::<usize>().map_err(|_| Error::Parse {
            line: *line,
            message: format!("expected a qubit index, found {s:?}"),
        }),
        SExpr::List(line, _) => Err(Error::Parse {
            line: *line,
            message: "expected a qubit index, found a list".to_string(),
        }),
    }
}

fn atom_f64(expr: &SExpr) -> Result<f64> {
    match expr {
        SExpr::Atom(line, s) => s.parse::<f64>().map_err(|_| Error::Parse {
            line: *line,
            message: format!("expected a parameter, found {s:?}"),
        }),
        SExpr::List(line, _) => Err(Error::Parse {
            line: *line,
            message: "expected a parameter, found a list".to_string(),
        }),
    }
}

fn expr_head(expr: &SExpr) -> Result<(&str, &[SExpr], usize)> {
    match expr {
        SExpr::List(line, items) => match items.first() {
            Some(SExpr::Atom(_, head)) => Ok((head.as_str(), &items[1..], *line)),
            _ => Err(Error::Parse {
                line: *line,
                message: "expected a gate form".to_string(),
            }),
        },
        SExpr::Atom(line, s) => Err(Error::Parse {
            line: *line,
            message: format!("expected a form, found {s:?}"),
        }),
    }
}

fn parse_gate_form(expr: &SExpr) -> Result<GateApplication> {
    let (head, rest, line) = expr_head(expr)?;
    let kind = GateKind::from_name(head).map_err(|_| Error::Parse {
        line,
        message: format!("unknown gate {head:?}"),
    })?;
    let param_count = kind.param_count();
    if rest.len() < param_count {
        return Err(Error::Parse {
            line,
            message: format!("{head} is missing parameters"),
        });
    }
    let split = rest.len() - param_count;
    let qubits = rest[..split]
        .iter()
        .map(atom_usize)
        .collect::<Result<Vec<usize>>>()?;
    let params = rest[split..]
        .iter()
        .map(atom_f64)
        .collect::<Result<Vec<f64>>>()?;
    if qubits.is_empty() {
        return Err(Error::Parse {
            line,
            message: format!("{head} needs at least one qubit operand"),
        });
    }
    Ok(GateApplication::with_params(kind, params, qubits))
}

fn parse_tree_node(expr: &SExpr) -> Result<TreeNode> {
    match expr {
        SExpr::Atom(..) => Ok(TreeNode::Leaf {
            qubit: atom_usize(expr)?,
        }),
        SExpr::List(..) => {
            let (head, rest, line) = expr_head(expr)?;
            let kind = GateKind::from_name(head).map_err(|_| Error::Parse {
                line,
                message: format!("unknown gate {head:?}"),
            })?;
            let param_count = kind.param_count();
            if rest.len() < param_count {
                return Err(Error::Parse {
                    line,
                    message: format!("{head} is missing parameters"),
                });
            }
            let split = rest.len() - param_count;
            let children = rest[..split]
                .iter()
                .map(parse_tree_node)
                .collect::<Result<Vec<TreeNode>>>()?;
            let params = rest[split..]
                .iter()
                .map(atom_f64)
                .collect::<Result<Vec<f64>>>()?;
            if children.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: format!("{head} needs at least one child"),
                });
            }
            Ok(TreeNode::Gate {
                kind,
                params,
                children,
            })
        }
    }
}

fn parse_lt_node(expr: &SExpr) -> Result<LinearTreeNode> {
    let (head, rest, line) = expr_head(expr)?;
    if head != "NODE" {
        return Err(Error::Parse {
            line,
            message: format!("expected (NODE ..), found {head:?}"),
        });
    }
    let mut segment = Vec::new();
    let mut branch = None;
    for (i, item) in rest.iter().enumerate() {
        let (item_head, item_rest, item_line) = expr_head(item)?;
        if item_head == "BRANCH" {
            if i + 1 != rest.len() {
                return Err(Error::Parse {
                    line: item_line,
                    message: "BRANCH must be the last element of a NODE".to_string(),
                });
            }
            if item_rest.len() != 3 {
                return Err(Error::Parse {
                    line: item_line,
                    message: "BRANCH takes a qubit and two child nodes".to_string(),
                });
            }
            branch = Some(MeasureBranchPoint {
                qubit: atom_usize(&item_rest[0])?,
                zero: Box::new(parse_lt_node(&item_rest[1])?),
                one: Box::new(parse_lt_node(&item_rest[2])?),
            });
        } else {
            segment.push(parse_gate_form(item)?);
        }
    }
    Ok(LinearTreeNode { segment, branch })
}

fn infer_qubits(p: &QuantumProgram) -> usize {
    fn max_tree(node: &TreeNode) -> usize {
        match node {
            TreeNode::Leaf { qubit } => *qubit + 1,
            TreeNode::Gate { children, .. } => {
                children.iter().map(max_tree).max().unwrap_or(0)
            }
        }
    }
    fn max_lt(node: &LinearTreeNode) -> usize {
        let seg = node
            .segment
            .iter()
            .flat_map(|g| g.qubits.iter().map(|q| q + 1))
            .max()
            .unwrap_or(0);
        match &node.branch {
            None => seg,
            Some(b) => seg
                .max(b.qubit + 1)
                .max(max_lt(&b.zero))
                .max(max_lt(&b.one)),
        }
    }
    let raw = match p {
        QuantumProgram::Linear(p) => p
            .gates
            .iter()
            .flat_map(|g| g.qubits.iter().map(|q| q + 1))
            .max()
            .unwrap_or(0),
        QuantumProgram::Tree(p) => max_tree(&p.root),
        QuantumProgram::LinearTree(p) => max_lt(&p.root),
    };
    raw.max(1)
}

/// Parses the textual program format. The register width is taken from
/// `num_qubits` when given, otherwise inferred as one past the highest qubit
/// index the program touches.
pub fn parse_text(src: &str, num_qubits: Option<usize>) -> Result<QuantumProgram> {
    let tokens = tokenize(src)?;
    let exprs = parse_sexprs(&tokens)?;

    let program = if exprs.len() == 1 {
        let (head, rest, line) = expr_head(&exprs[0])?;
        match head {
            "TREE" => {
                if rest.len() != 1 {
                    return Err(Error::Parse {
                        line,
                        message: "TREE takes exactly one root node".to_string(),
                    });
                }
                QuantumProgram::Tree(TreeProgram {
                    num_qubits: 0,
                    root: parse_tree_node(&rest[0])?,
                })
            }
            "NODE" => QuantumProgram::LinearTree(LinearTreeProgram {
                num_qubits: 0,
                root: parse_lt_node(&exprs[0])?,
            }),
            _ => QuantumProgram::Linear(LinearProgram {
                num_qubits: 0,
                gates: vec![parse_gate_form(&exprs[0])?],
            }),
        }
    } else {
        let gates = exprs
            .iter()
            .map(parse_gate_form)
            .collect::<Result<Vec<GateApplication>>>()?;
        QuantumProgram::Linear(LinearProgram {
            num_qubits: 0,
            gates,
        })
    };

    let inferred = infer_qubits(&program);
    let n = num_qubits.unwrap_or(inferred);
    let program = match program {
        QuantumProgram::Linear(p) => QuantumProgram::Linear(LinearProgram {
            num_qubits: n,
            ..p
        }),
        QuantumProgram::Tree(p) => QuantumProgram::Tree(TreeProgram { num_qubits: n, ..p }),
        QuantumProgram::LinearTree(p) => {
            QuantumProgram::LinearTree(LinearTreeProgram { num_qubits: n, ..p })
        }
    };
    Ok(program)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn app(kind: GateKind, qubits: &[usize]) -> GateApplication {
        GateApplication::new(kind, qubits.to_vec())
    }

    fn zero(n: usize) -> StateVector {
        StateVector::zero_state(n).unwrap()
    }

    #[test]
    fn empty_program_is_one_branch_identity() {
        let p = LinearProgram::new(2, vec![]);
        let r = eval_linear(&p, &zero(2), None, &EvalOptions::default()).unwrap();
        assert_eq!(r.branches.len(), 1);
        assert_eq!(r.branches[0].probability, 1.0);
        assert_eq!(r.branches[0].state.probability(0), 1.0);
        assert_eq!(r.gate_count, 0);
        assert_eq!(r.expected_oracle_calls, 0.0);
    }

    #[test]
    fn hadamard_program_single_branch() {
        let p = LinearProgram::new(1, vec![app(GateKind::H, &[0])]);
        let r = eval_linear(&p, &zero(1), None, &EvalOptions::default()).unwrap();
        assert_eq!(r.branches.len(), 1);
        let amps = r.branches[0].state.amplitudes();
        assert!((amps[0].re - FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((amps[1].re - FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(r.gate_count, 1);
    }

    #[test]
    fn measure_forks_branches() {
        let p = LinearProgram::new(
            1,
            vec![app(GateKind::H, &[0]), app(GateKind::Measure, &[0])],
        );
        let r = eval_linear(&p, &zero(1), None, &EvalOptions::default()).unwrap();
        assert_eq!(r.branches.len(), 2);
        assert!((r.branches[0].probability - 0.5).abs() < 1e-12);
        assert_eq!(r.branches[0].observed, vec![0]);
        assert!((r.branches[1].probability - 0.5).abs() < 1e-12);
        assert_eq!(r.branches[1].observed, vec![1]);
        let total: f64 = r.branches.iter().map(|b| b.probability).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn oracle_xors_workspace() {
        // f = NOT: |00> -> |0, f(0)> = |01>.
        let not = Oracle::new(1, vec![true, false]).unwrap();
        let p = LinearProgram::new(2, vec![app(GateKind::Oracle, &[0, 1])]);
        let r = eval_linear(&p, &zero(2), Some(&not), &EvalOptions::default()).unwrap();
        assert_eq!(r.branches.len(), 1);
        assert!((r.branches[0].state.probability(0b01) - 1.0).abs() < 1e-12);
        assert_eq!(r.expected_oracle_calls, 1.0);
        assert_eq!(r.branches[0].oracle_calls, 1);
    }

    #[test]
    fn oracle_without_oracle_fails() {
        let p = LinearProgram::new(2, vec![app(GateKind::Oracle, &[0, 1])]);
        let r = eval_linear(&p, &zero(2), None, &EvalOptions::default());
        assert!(matches!(r, Err(Error::MissingOracle)));
    }

    #[test]
    fn gate_count_skips_wires_counts_measures() {
        let p = LinearProgram::new(
            2,
            vec![
                app(GateKind::H, &[0]),
                app(GateKind::Wire, &[1]),
                app(GateKind::Measure, &[0]),
            ],
        );
        assert_eq!(p.gate_count(), 2);
    }

    #[test]
    fn branch_cap_is_enforced() {
        let mut gates = Vec::new();
        for _ in 0..3 {
            gates.push(app(GateKind::H, &[0]));
            gates.push(app(GateKind::Measure, &[0]));
        }
        let p = LinearProgram::new(1, gates);
        let opts = EvalOptions { max_branches: 4 };
        assert!(matches!(
            eval_linear(&p, &zero(1), None, &opts),
            Err(Error::BranchExplosion(4))
        ));
        assert!(eval_linear(&p, &zero(1), None, &EvalOptions::default()).is_ok());
    }

    #[test]
    fn expected_queries_weight_by_branch_probability() {
        // Measure then call the oracle only on one continuation is not
        // expressible linearly, so check the weighting with a plain fork:
        // both branches call once, expectation stays 1.
        let id = Oracle::new(1, vec![false, true]).unwrap();
        let p = LinearProgram::new(
            2,
            vec![
                app(GateKind::H, &[0]),
                app(GateKind::Measure, &[0]),
                app(GateKind::Oracle, &[0, 1]),
            ],
        );
        let r = eval_linear(&p, &zero(2), Some(&id), &EvalOptions::default()).unwrap();
        assert_eq!(r.branches.len(), 2);
        assert!((r.expected_oracle_calls - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tree_builds_bell_state() {
        // (CNOT (HADAMARD 0) 1): post-order applies H(0), then CNOT(0,1).
        let tree = TreeProgram {
            num_qubits: 2,
            root: TreeNode::Gate {
                kind: GateKind::Cnot,
                params: vec![],
                children: vec![
                    TreeNode::Gate {
                        kind: GateKind::H,
                        params: vec![],
                        children: vec![TreeNode::Leaf { qubit: 0 }],
                    },
                    TreeNode::Leaf { qubit: 1 },
                ],
            },
        };
        let r = eval_tree(&tree, &zero(2), None, &EvalOptions::default()).unwrap();
        let amps = r.branches[0].state.amplitudes();
        assert!((amps[0].re - FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((amps[3].re - FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(r.gate_count, 2);
    }

    #[test]
    fn tree_operand_collision_moves_to_next_wire() {
        // (CNOT (HADAMARD 0) 0): both children return qubit 0; the second
        // operand advances to the next free wire.
        let tree = TreeProgram {
            num_qubits: 2,
            root: TreeNode::Gate {
                kind: GateKind::Cnot,
                params: vec![],
                children: vec![
                    TreeNode::Gate {
                        kind: GateKind::H,
                        params: vec![],
                        children: vec![TreeNode::Leaf { qubit: 0 }],
                    },
                    TreeNode::Leaf { qubit: 0 },
                ],
            },
        };
        let linear = linearize(&tree);
        assert_eq!(linear.gates[1], app(GateKind::Cnot, &[0, 1]));
        let r = eval_tree(&tree, &zero(2), None, &EvalOptions::default()).unwrap();
        let amps = r.branches[0].state.amplitudes();
        assert!((amps[0].re - FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((amps[3].re - FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn tree_validation_rejects_bad_shapes() {
        let bad_leaf = TreeProgram {
            num_qubits: 2,
            root: TreeNode::Leaf { qubit: 5 },
        };
        assert!(bad_leaf.validate(None, false).is_err());
        let bad_arity = TreeProgram {
            num_qubits: 2,
            root: TreeNode::Gate {
                kind: GateKind::Cnot,
                params: vec![],
                children: vec![TreeNode::Leaf { qubit: 0 }],
            },
        };
        assert!(bad_arity.validate(None, false).is_err());
        let too_wide = TreeProgram {
            num_qubits: 1,
            root: TreeNode::Gate {
                kind: GateKind::Cnot,
                params: vec![],
                children: vec![TreeNode::Leaf { qubit: 0 }, TreeNode::Leaf { qubit: 0 }],
            },
        };
        assert!(too_wide.validate(None, false).is_err());
    }

    #[test]
    fn linear_tree_splits_on_measurement() {
        // Root [H(0)] branching on qubit 0 with empty children.
        let p = LinearTreeProgram {
            num_qubits: 1,
            root: LinearTreeNode {
                segment: vec![app(GateKind::H, &[0])],
                branch: Some(MeasureBranchPoint {
                    qubit: 0,
                    zero: Box::new(LinearTreeNode::leaf(vec![])),
                    one: Box::new(LinearTreeNode::leaf(vec![])),
                }),
            },
        };
        let r = eval_linear_tree(&p, &zero(1), None, &EvalOptions::default()).unwrap();
        assert_eq!(r.branches.len(), 2);
        assert!((r.branches[0].probability - 0.5).abs() < 1e-12);
        assert_eq!(r.branches[0].observed, vec![0]);
        assert_eq!(r.branches[0].state.probability(0), 1.0);
        assert_eq!(r.branches[1].observed, vec![1]);
        assert_eq!(r.branches[1].state.probability(1), 1.0);
    }

    #[test]
    fn linear_tree_children_run_on_their_outcome() {
        // On outcome 0 flip the qubit, on outcome 1 leave it: both leaves
        // end in |1>.
        let p = LinearTreeProgram {
            num_qubits: 1,
            root: LinearTreeNode {
                segment: vec![app(GateKind::H, &[0])],
                branch: Some(MeasureBranchPoint {
                    qubit: 0,
                    zero: Box::new(LinearTreeNode::leaf(vec![app(GateKind::X, &[0])])),
                    one: Box::new(LinearTreeNode::leaf(vec![])),
                }),
            },
        };
        let r = eval_linear_tree(&p, &zero(1), None, &EvalOptions::default()).unwrap();
        for b in &r.branches {
            assert!((b.state.probability(1) - 1.0).abs() < 1e-12);
        }
        assert_eq!(r.gate_count, 2);
    }

    // Dual-route check: direct tree interpretation against evaluating the
    // post-order linearization.

    fn random_tree<R: Rng>(
        rng: &mut R,
        num_qubits: usize,
        depth_left: usize,
        oracle_bits: usize,
    ) -> TreeNode {
        if depth_left == 0 || rng.gen_bool(0.3) {
            return TreeNode::Leaf {
                qubit: rng.gen_range(0..num_qubits),
            };
        }
        let kinds = [
            GateKind::I,
            GateKind::X,
            GateKind::H,
            GateKind::Cnot,
            GateKind::Phase,
            GateKind::Pi8,
            GateKind::Rot,
            GateKind::Z,
            GateKind::Zx,
            GateKind::Measure,
            GateKind::Oracle,
            GateKind::Wire,
        ];
        let kind = kinds[rng.gen_range(0..kinds.len())];
        let arity = kind.arity().unwrap_or(oracle_bits + 1).min(num_qubits);
        let children = (0..arity)
            .map(|_| random_tree(rng, num_qubits, depth_left - 1, oracle_bits))
            .collect();
        let params = if kind.param_count() == 1 {
            vec![rng.gen_range(0..16) as f64 * std::f64::consts::PI / 8.0]
        } else {
            vec![]
        };
        TreeNode::Gate {
            kind,
            params,
            children,
        }
    }

    #[test]
    fn tree_eval_matches_linearized_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let oracle = Oracle::new(1, vec![true, false]).unwrap();
        let opts = EvalOptions::default();
        for _ in 0..300 {
            let num_qubits = rng.gen_range(2..=3);
            let tree = TreeProgram {
                num_qubits,
                root: random_tree(&mut rng, num_qubits, 4, 1),
            };
            let direct = eval_tree(&tree, &zero(num_qubits), Some(&oracle), &opts).unwrap();
            let flat = linearize(&tree);
            let via_linear = eval_linear(&flat, &zero(num_qubits), Some(&oracle), &opts).unwrap();
            assert_eq!(direct.branches.len(), via_linear.branches.len());
            assert_eq!(direct.gate_count, via_linear.gate_count);
            assert!(
                (direct.expected_oracle_calls - via_linear.expected_oracle_calls).abs() < 1e-12
            );
            for (a, b) in direct.branches.iter().zip(&via_linear.branches) {
                assert!((a.probability - b.probability).abs() < 1e-12);
                assert_eq!(a.observed, b.observed);
                assert_eq!(a.oracle_calls, b.oracle_calls);
                for (x, y) in a.state.amplitudes().iter().zip(b.state.amplitudes()) {
                    assert!((x - y).norm() < 1e-12);
                }
            }
        }
    }

    // Array-of-strings encoding.

    #[test]
    fn encode_pads_with_wires() {
        let p = LinearProgram::new(2, vec![app(GateKind::H, &[0])]);
        assert_eq!(lukac_encode(&p).unwrap(), vec![vec!["H", "WIRE"]]);
        let p = LinearProgram::new(
            2,
            vec![app(GateKind::H, &[0]), app(GateKind::Cnot, &[0, 1])],
        );
        assert_eq!(
            lukac_encode(&p).unwrap(),
            vec![vec!["H".to_string(), "WIRE".to_string()], vec!["CNOT".to_string()]]
        );
    }

    #[test]
    fn encode_rejects_non_adjacent_and_descending_operands() {
        let p = LinearProgram::new(3, vec![app(GateKind::Cnot, &[0, 2])]);
        assert!(matches!(lukac_encode(&p), Err(Error::NotTileable { .. })));
        let p = LinearProgram::new(2, vec![app(GateKind::Cnot, &[1, 0])]);
        assert!(matches!(lukac_encode(&p), Err(Error::NotTileable { .. })));
        let p = LinearProgram::new(3, vec![app(GateKind::Oracle, &[0, 1])]);
        assert!(matches!(lukac_encode(&p), Err(Error::NotEncodable(_))));
    }

    #[test]
    fn encode_decode_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5150);
        for _ in 0..100 {
            let n = rng.gen_range(2..=4);
            let kinds = [
                GateKind::I,
                GateKind::X,
                GateKind::H,
                GateKind::Cnot,
                GateKind::Toffoli,
                GateKind::Rot,
                GateKind::Measure,
                GateKind::Wire,
            ];
            let gates: Vec<GateApplication> = (0..rng.gen_range(0..8))
                .map(|_| {
                    let kind = loop {
                        let k = kinds[rng.gen_range(0..kinds.len())];
                        if k.arity().unwrap() <= n {
                            break k;
                        }
                    };
                    let arity = kind.arity().unwrap();
                    let start = rng.gen_range(0..=n - arity);
                    let params = if kind.param_count() == 1 {
                        vec![rng.gen_range(0..16) as f64 * std::f64::consts::PI / 8.0]
                    } else {
                        vec![]
                    };
                    GateApplication::with_params(kind, params, (start..start + arity).collect())
                })
                .collect();
            let p = LinearProgram::new(n, gates);
            let decoded = lukac_decode(&lukac_encode(&p).unwrap(), n).unwrap();
            let without_wires: Vec<&GateApplication> = p
                .gates
                .iter()
                .filter(|g| g.kind != GateKind::Wire)
                .collect();
            assert_eq!(decoded.gates.len(), without_wires.len());
            for (d, o) in decoded.gates.iter().zip(without_wires) {
                assert_eq!(d, o);
            }
        }
    }

    #[test]
    fn decode_rejects_bad_rows() {
        assert!(lukac_decode(&[vec!["H".into()]], 2).is_err());
        assert!(lukac_decode(&[vec!["H".into(), "H".into(), "H".into()]], 2).is_err());
        assert!(lukac_decode(&[vec!["BLURP".into(), "WIRE".into()]], 2).is_err());
        assert!(lukac_decode(&[vec!["WIRE".into(), "CNOT".into()]], 2).is_err());
    }

    // Textual format.

    #[test]
    fn renders_match_prefix_notation() {
        let p = QuantumProgram::Linear(LinearProgram::new(1, vec![app(GateKind::H, &[0])]));
        assert_eq!(render_text(&p), "(HADAMARD 0)");
        let p = QuantumProgram::Linear(LinearProgram::new(3, vec![app(GateKind::Cnot, &[1, 2])]));
        assert_eq!(render_text(&p), "(CNOT 1 2)");
        let p = QuantumProgram::Linear(LinearProgram::new(1, vec![]));
        assert_eq!(render_text(&p), "");
    }

    #[test]
    fn parse_reports_line_numbers() {
        let err = parse_text("(HADAMARD 0)\n(BLURP 1)", None).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let err = parse_text("(HADAMARD 0", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_text("(HADAMARD x)", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn parse_infers_register_width() {
        let p = parse_text("(HADAMARD 0)\n(CNOT 1 2)", None).unwrap();
        assert_eq!(p.num_qubits(), 3);
        let p = parse_text("(HADAMARD 0)", Some(4)).unwrap();
        assert_eq!(p.num_qubits(), 4);
    }

    fn sample_tree_program() -> QuantumProgram {
        QuantumProgram::Tree(TreeProgram {
            num_qubits: 2,
            root: TreeNode::Gate {
                kind: GateKind::Cnot,
                params: vec![],
                children: vec![
                    TreeNode::Gate {
                        kind: GateKind::Rot,
                        params: vec![std::f64::consts::PI / 8.0],
                        children: vec![TreeNode::Leaf { qubit: 0 }],
                    },
                    TreeNode::Leaf { qubit: 1 },
                ],
            },
        })
    }

    fn sample_lt_program() -> QuantumProgram {
        QuantumProgram::LinearTree(LinearTreeProgram {
            num_qubits: 2,
            root: LinearTreeNode {
                segment: vec![app(GateKind::H, &[0])],
                branch: Some(MeasureBranchPoint {
                    qubit: 0,
                    zero: Box::new(LinearTreeNode::leaf(vec![app(GateKind::X, &[1])])),
                    one: Box::new(LinearTreeNode::leaf(vec![])),
                }),
            },
        })
    }

    #[test]
    fn text_round_trips_all_structures() {
        let samples = vec![
            QuantumProgram::Linear(LinearProgram::new(
                3,
                vec![
                    app(GateKind::H, &[2]),
                    GateApplication::with_params(GateKind::Rot, vec![0.5], vec![1]),
                    app(GateKind::Oracle, &[0, 1, 2]),
                    app(GateKind::Measure, &[0]),
                ],
            )),
            sample_tree_program(),
            sample_lt_program(),
        ];
        for p in samples {
            let text = render_text(&p);
            let parsed = parse_text(&text, Some(p.num_qubits())).unwrap();
            assert_eq!(parsed, p, "round trip failed for:\n{text}");
        }
    }

    #[test]
    fn json_round_trips_all_structures() {
        let samples = vec![
            QuantumProgram::Linear(LinearProgram::new(
                2,
                vec![
                    app(GateKind::H, &[0]),
                    GateApplication::with_params(GateKind::Rot, vec![0.25], vec![1]),
                ],
            )),
            sample_tree_program(),
            sample_lt_program(),
        ];
        for p in samples {
            let json = serde_json::to_string_pretty(&p).unwrap();
            let back: QuantumProgram = serde_json::from_str(&json).unwrap();
            assert_eq!(back, p);
        }
    }

    #[test]
    fn json_and_text_agree_through_both_routes() {
        let p = sample_tree_program();
        let json = serde_json::to_value(&p).unwrap();
        let text = render_text(&p);
        let reparsed = parse_text(&text, Some(2)).unwrap();
        assert_eq!(serde_json::to_value(&reparsed).unwrap(), json);
    }

    #[test]
    fn json_format_tag_is_stable() {
        let p = QuantumProgram::Linear(LinearProgram::new(1, vec![app(GateKind::X, &[0])]));
        let v = serde_json::to_value(&p).unwrap();
        assert_eq!(v["format"], "linear");
        assert_eq!(v["num_qubits"], 1);
        assert_eq!(v["gates"][0]["kind"], "X");
        let p = sample_tree_program();
        assert_eq!(serde_json::to_value(&p).unwrap()["format"], "tree");
        let p = sample_lt_program();
        assert_eq!(serde_json::to_value(&p).unwrap()["format"], "linear-tree");
    }
}
