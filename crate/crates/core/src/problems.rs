//! Benchmark problems: oracle definitions, fitness-case generators, and
//! reference circuits with closed-form expectations.
//!
//! A decision problem is a set of [`FitnessCase`]s, one per oracle, each
//! labelling the bit the program must leave on the answer qubit. A state
//! preparation problem has a single case whose expectation is a target
//! state. [`case_error`] maps a program's evaluation result to the error
//! in `[0, 1]` that the fitness schemes consume.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{self, GateApplication, GateKind};
use crate::program::{eval_linear, EvalOptions, EvaluationResult, LinearProgram};
use crate::qstate::StateVector;

/// A black-box boolean function `f: {0,1}^m -> {0,1}` queried through the
/// `ORACLE` gate, which XORs `f(inputs)` into a workspace qubit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawOracle")]
pub struct Oracle {
    input_bits: usize,
    truth_table: Vec<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOracle {
    input_bits: usize,
    truth_table: Vec<bool>,
}

impl TryFrom<RawOracle> for Oracle {
    type Error = Error;

    fn try_from(raw: RawOracle) -> Result<Self> {
        Oracle::new(raw.input_bits, raw.truth_table)
    }
}

impl Oracle {
    pub fn new(input_bits: usize, truth_table: Vec<bool>) -> Result<Self> {
        if input_bits == 0 || input_bits > 16 {
            return Err(Error::BadTruthTable {
                expected: 2,
                actual: truth_table.len(),
            });
        }
        let expected = 1usize << input_bits;
        if truth_table.len() != expected {
            return Err(Error::BadTruthTable {
                expected,
                actual: truth_table.len(),
            });
        }
        Ok(Oracle {
            input_bits,
            truth_table,
        })
    }

    /// Builds the oracle whose truth table is the binary expansion of
    /// `function_index`: bit `x` of the index is `f(x)`.
    pub fn from_index(input_bits: usize, function_index: usize) -> Result<Self> {
        let size = 1usize << input_bits;
        if function_index >= (1usize << size) {
            return Err(Error::BadTruthTable {
                expected: size,
                actual: function_index,
            });
        }
        let truth_table = (0..size).map(|x| (function_index >> x) & 1 == 1).collect();
        Oracle::new(input_bits, truth_table)
    }

    pub fn input_bits(&self) -> usize {
        self.input_bits
    }

    /// Operand count of an `ORACLE` application: the inputs plus the
    /// workspace qubit.
    pub fn arity(&self) -> usize {
        self.input_bits + 1
    }

    pub fn eval(&self, x: usize) -> bool {
        self.truth_table[x]
    }

    pub fn truth_table(&self) -> &[bool] {
        &self.truth_table
    }

    /// Count of inputs mapped to 1.
    pub fn ones(&self) -> usize {
        self.truth_table.iter().filter(|b| **b).count()
    }

    /// Applies the oracle as the reversible permutation
    /// `|x, w> -> |x, w XOR f(x)>`. The last operand is the workspace; the
    /// rest are the inputs in order.
    pub fn apply(&self, state: &StateVector, qubits: &[usize]) -> Result<StateVector> {
        let n = state.num_qubits();
        if qubits.len() != self.arity() {
            return Err(Error::ArityMismatch {
                gate: GateKind::Oracle.name().to_string(),
                expected: self.arity(),
                actual: qubits.len(),
            });
        }
        for (i, &q) in qubits.iter().enumerate() {
            if q >= n {
                return Err(Error::QubitOutOfRange { index: q, qubits: n });
            }
            if qubits[..i].contains(&q) {
                return Err(Error::DuplicateQubit(q));
            }
        }
        let workspace = qubits[self.input_bits];
        let wmask = 1usize << (n - 1 - workspace);
        let mut amps = state.amplitudes().to_vec();
        for k in 0..amps.len() {
            if k & wmask != 0 {
                continue;
            }
            let mut x = 0usize;
            for (i, &q) in qubits[..self.input_bits].iter().enumerate() {
                let bit = (k >> (n - 1 - q)) & 1;
                x |= bit << (self.input_bits - 1 - i);
            }
            if self.truth_table[x] {
                amps.swap(k, k | wmask);
            }
        }
        Ok(StateVector::from_raw(n, amps))
    }
}

/// What a fitness case expects of the final state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    /// The answer qubit must read this bit.
    AnswerBit(u8),
    /// The final state must match this state up to global phase.
    TargetState(StateVector),
}

/// One evaluation scenario: the oracle wired into `ORACLE` gates (if any),
/// the initial register state, and the expected outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitnessCase {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<Oracle>,
    pub initial_state: StateVector,
    pub expected: Expected,
}

/// A benchmark problem: its cases plus the register width, answer qubit and
/// default gate set that evolution runs against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub name: String,
    pub num_qubits: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_qubit: Option<usize>,
    pub gate_set: Vec<GateKind>,
    pub cases: Vec<FitnessCase>,
    /// Whether the problem family takes a size parameter.
    pub scalable: bool,
}

impl ProblemSpec {
    /// Oracle input width shared by the cases, if the problem uses oracles.
    pub fn oracle_input_bits(&self) -> Option<usize> {
        self.cases
            .first()
            .and_then(|c| c.oracle.as_ref())
            .map(Oracle::input_bits)
    }
}

/// Probability that measuring `answer_qubit` yields `label`, weighted over
/// every branch of the evaluation.
pub fn decision_correct_probability(
    result: &EvaluationResult,
    answer_qubit: usize,
    label: u8,
) -> Result<f64> {
    let mut total = 0.0;
    for branch in &result.branches {
        let state = &branch.state;
        let n = state.num_qubits();
        if answer_qubit >= n {
            return Err(Error::QubitOutOfRange {
                index: answer_qubit,
                qubits: n,
            });
        }
        let shift = n - 1 - answer_qubit;
        let mass: f64 = state
            .amplitudes()
            .iter()
            .enumerate()
            .filter(|(i, _)| ((i >> shift) & 1) as u8 == label)
            .map(|(_, a)| a.norm_sqr())
            .sum();
        total += branch.probability * mass;
    }
    Ok(total)
}

/// Error in `[0, 1]` of an evaluation result against a case's expectation:
/// one minus the correct-answer probability for decisions, one minus the
/// branch-weighted fidelity for target states.
pub fn case_error(
    case: &FitnessCase,
    result: &EvaluationResult,
    answer_qubit: Option<usize>,
) -> Result<f64> {
    let achieved = match &case.expected {
        Expected::AnswerBit(label) => {
            let qubit = answer_qubit.ok_or_else(|| {
                Error::Config("decision problems need an answer qubit".to_string())
            })?;
            decision_correct_probability(result, qubit, *label)?
        }
        Expected::TargetState(target) => {
            let mut total = 0.0;
            for branch in &result.branches {
                total += branch.probability * branch.state.fidelity(target)?;
            }
            total
        }
    };
    Ok((1.0 - achieved).clamp(0.0, 1.0))
}

// ---------------------------------------------------------------------------
// Problem generators
// ---------------------------------------------------------------------------

fn zero_init(num_qubits: usize) -> StateVector {
    StateVector::zero_state(num_qubits).expect("register cap covers problem sizes")
}

fn decision_case(oracle: Oracle, num_qubits: usize, label: u8) -> FitnessCase {
    FitnessCase {
        oracle: Some(oracle),
        initial_state: zero_init(num_qubits),
        expected: Expected::AnswerBit(label),
    }
}

/// Decide whether a one-bit function is constant (label 0) or balanced
/// (label 1). Four oracles over a two-qubit register: input and oracle
/// workspace; the answer is read on qubit 0.
pub fn deutsch() -> ProblemSpec {
    let n = 2;
    let cases = (0..4usize)
        .map(|idx| {
            let oracle = Oracle::from_index(1, idx).expect("index in range");
            let ones = oracle.ones();
            let label = u8::from(ones == 1);
            decision_case(oracle, n, label)
        })
        .collect();
    ProblemSpec {
        name: "deutsch".to_string(),
        num_qubits: n,
        answer_qubit: Some(0),
        gate_set: vec![GateKind::H, GateKind::X, GateKind::Oracle],
        cases,
        scalable: false,
    }
}

/// Decide whether an `m`-bit function promised constant-or-balanced is
/// constant (0) or balanced (1). Cases are the two constants plus every
/// balanced truth table.
pub fn deutsch_jozsa(m: usize) -> Result<ProblemSpec> {
    if !(1..=4).contains(&m) {
        return Err(Error::Config(format!(
            "deutsch-jozsa size must be 1..=4, got {m}"
        )));
    }
    let n = m + 1;
    let size = 1usize << m;
    let half = size / 2;
    let mut cases = Vec::new();
    cases.push(decision_case(Oracle::from_index(m, 0)?, n, 0));
    cases.push(decision_case(
        Oracle::from_index(m, (1usize << size) - 1)?,
        n,
        0,
    ));
    for idx in 0..(1usize << size) {
        if idx.count_ones() as usize == half {
            cases.push(decision_case(Oracle::from_index(m, idx)?, n, 1));
        }
    }
    Ok(ProblemSpec {
        name: "deutsch-jozsa".to_string(),
        num_qubits: n,
        answer_qubit: Some(0),
        gate_set: vec![GateKind::H, GateKind::X, GateKind::Cnot, GateKind::Oracle],
        cases,
        scalable: true,
    })
}

/// Decide whether an `m`-bit function maps more than half of its inputs to
/// one. Every truth table is a case; an exact half-half split labels 0
/// unless `tie_counts_as_on`.
pub fn majority_on(m: usize, tie_counts_as_on: bool) -> Result<ProblemSpec> {
    if !(1..=3).contains(&m) {
        return Err(Error::Config(format!(
            "majority-on size must be 1..=3, got {m}"
        )));
    }
    let n = m + 1;
    let size = 1usize << m;
    let half = size / 2;
    let cases = (0..(1usize << size))
        .map(|idx| {
            let oracle = Oracle::from_index(m, idx).expect("index in range");
            let ones = oracle.ones();
            let on = ones > half || (tie_counts_as_on && ones == half);
            decision_case(oracle, n, u8::from(on))
        })
        .collect();
    Ok(ProblemSpec {
        name: "majority-on".to_string(),
        num_qubits: n,
        answer_qubit: Some(m),
        gate_set: vec![
            GateKind::H,
            GateKind::X,
            GateKind::Cnot,
            GateKind::Toffoli,
            GateKind::Oracle,
            GateKind::Measure,
        ],
        cases,
        scalable: true,
    })
}

/// Decide `(f(0) OR f(1)) AND (f(2) OR f(3))` for a two-bit function. All
/// sixteen truth tables are cases on a three-qubit register with the answer
/// on the workspace qubit.
pub fn and_or() -> ProblemSpec {
    let n = 3;
    let cases = (0..16usize)
        .map(|idx| {
            let oracle = Oracle::from_index(2, idx).expect("index in range");
            let f = |x: usize| oracle.eval(x);
            let label = (f(0) || f(1)) && (f(2) || f(3));
            decision_case(oracle, n, u8::from(label))
        })
        .collect();
    ProblemSpec {
        name: "and-or".to_string(),
        num_qubits: n,
        answer_qubit: Some(2),
        gate_set: vec![
            GateKind::H,
            GateKind::X,
            GateKind::Cnot,
            GateKind::Oracle,
            GateKind::Measure,
        ],
        cases,
        scalable: false,
    }
}

/// The maximally entangled target `(|0..0> + |1..1>)/sqrt(2)` on `n` qubits.
pub fn entanglement_target(n: usize) -> Result<StateVector> {
    if !(2..=5).contains(&n) {
        return Err(Error::Config(format!(
            "entanglement size must be 2..=5, got {n}"
        )));
    }
    let dim = 1usize << n;
    let mut amps = vec![num_complex::Complex64::new(0.0, 0.0); dim];
    amps[0] = num_complex::Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    amps[dim - 1] = num_complex::Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    StateVector::from_amplitudes(amps)
}

/// Prepare the `n`-qubit maximally entangled state from `|0..0>`.
pub fn entanglement(n: usize) -> Result<ProblemSpec> {
    let target = entanglement_target(n)?;
    Ok(ProblemSpec {
        name: "entanglement".to_string(),
        num_qubits: n,
        answer_qubit: None,
        gate_set: vec![GateKind::H, GateKind::Cnot, GateKind::X, GateKind::Wire],
        cases: vec![FitnessCase {
            oracle: None,
            initial_state: zero_init(n),
            expected: Expected::TargetState(target),
        }],
        scalable: true,
    })
}

/// Looks up a problem family by name. `size` is the family's scale parameter
/// and must be omitted for fixed-size problems.
pub fn problem_by_name(name: &str, size: Option<usize>) -> Result<ProblemSpec> {
    match name {
        "deutsch" | "and-or" => {
            if size.is_some() {
                return Err(Error::Config(format!("problem {name} takes no size")));
            }
            Ok(if name == "deutsch" { deutsch() } else { and_or() })
        }
        "deutsch-jozsa" => deutsch_jozsa(size.unwrap_or(2)),
        "majority-on" => majority_on(size.unwrap_or(2), false),
        "entanglement" => entanglement(size.unwrap_or(2)),
        other => Err(Error::Config(format!("unknown problem {other:?}"))),
    }
}

// ---------------------------------------------------------------------------
// Reference circuits
// ---------------------------------------------------------------------------

/// The teleportation reference: qubit 0 carries the message, qubits 1 and 2
/// are the shared pair. The program entangles 1-2, Bell-measures 0-1, and
/// the correction indexed by the observed bits `m0 m1` repairs Bob's qubit.
#[derive(Debug, Clone)]
pub struct TeleportReference {
    pub program: LinearProgram,
    /// Corrections for observed bits 00, 01, 10, 11 in that order.
    pub corrections: [GateKind; 4],
}

pub fn teleport_reference() -> TeleportReference {
    let program = LinearProgram::new(
        3,
        vec![
            GateApplication::new(GateKind::H, vec![1]),
            GateApplication::new(GateKind::Cnot, vec![1, 2]),
            GateApplication::new(GateKind::Cnot, vec![0, 1]),
            GateApplication::new(GateKind::H, vec![0]),
            GateApplication::new(GateKind::Measure, vec![0]),
            GateApplication::new(GateKind::Measure, vec![1]),
        ],
    );
    TeleportReference {
        program,
        corrections: [GateKind::I, GateKind::X, GateKind::Z, GateKind::Zx],
    }
}

/// One measurement branch of a teleportation run: the observed Bell bits,
/// the branch probability, and Bob's fidelity with the message after the
/// correction.
#[derive(Debug, Clone)]
pub struct TeleportBranch {
    pub observed: Vec<u8>,
    pub probability: f64,
    pub fidelity: f64,
}

/// Teleports a single-qubit message through the reference circuit and
/// reports every branch's post-correction fidelity.
pub fn verify_teleportation(message: &StateVector) -> Result<Vec<TeleportBranch>> {
    if message.num_qubits() != 1 {
        return Err(Error::WrongQubitCount {
            expected: 1,
            actual: message.num_qubits(),
        });
    }
    let reference = teleport_reference();
    let init = message.tensor(&StateVector::zero_state(2)?)?;
    let result = eval_linear(&reference.program, &init, None, &EvalOptions::default())?;
    let mut branches = Vec::with_capacity(result.branches.len());
    for b in &result.branches {
        let [m0, m1] = [b.observed[0], b.observed[1]];
        let correction = reference.corrections[usize::from(m0) * 2 + usize::from(m1)];
        let corrected = gates::apply(
            &b.state,
            &GateApplication::new(correction, vec![2]),
        )?;
        // The measured qubits are classical here, so Bob's state is the
        // amplitude pair at their observed values.
        let base = usize::from(m0) * 4 + usize::from(m1) * 2;
        let amps = corrected.amplitudes();
        let bob = StateVector::from_amplitudes(vec![amps[base], amps[base + 1]])?;
        branches.push(TeleportBranch {
            observed: b.observed.clone(),
            probability: b.probability,
            fidelity: bob.fidelity(message)?,
        });
    }
    Ok(branches)
}

/// Ancilla wires needed by the multi-controlled phase flip over `m` inputs.
fn grover_ancillas(m: usize) -> usize {
    match m {
        0..=3 => 0,
        4 => 1,
        _ => 2,
    }
}

/// Multi-controlled Z over input wires `0..m`, built from the standard gate
/// set. For four or five inputs, Toffoli pairs compute AND chains into
/// ancilla wires and uncompute them afterwards.
fn push_mcz(gates: &mut Vec<GateApplication>, m: usize) {
    let app = |kind: GateKind, qubits: Vec<usize>| GateApplication::new(kind, qubits);
    match m {
        1 => gates.push(app(GateKind::Z, vec![0])),
        2 => {
            gates.push(app(GateKind::H, vec![1]));
            gates.push(app(GateKind::Cnot, vec![0, 1]));
            gates.push(app(GateKind::H, vec![1]));
        }
        3 => {
            gates.push(app(GateKind::H, vec![2]));
            gates.push(app(GateKind::Toffoli, vec![0, 1, 2]));
            gates.push(app(GateKind::H, vec![2]));
        }
        4 => {
            gates.push(app(GateKind::Toffoli, vec![0, 1, 4]));
            gates.push(app(GateKind::H, vec![3]));
            gates.push(app(GateKind::Toffoli, vec![4, 2, 3]));
            gates.push(app(GateKind::H, vec![3]));
            gates.push(app(GateKind::Toffoli, vec![0, 1, 4]));
        }
        5 => {
            gates.push(app(GateKind::Toffoli, vec![0, 1, 5]));
            gates.push(app(GateKind::Toffoli, vec![5, 2, 6]));
            gates.push(app(GateKind::H, vec![4]));
            gates.push(app(GateKind::Toffoli, vec![6, 3, 4]));
            gates.push(app(GateKind::H, vec![4]));
            gates.push(app(GateKind::Toffoli, vec![5, 2, 6]));
            gates.push(app(GateKind::Toffoli, vec![0, 1, 5]));
        }
        _ => unreachable!("input width validated by caller"),
    }
}

/// Phase-flips the basis state `|value>` of the input wires by conjugating
/// the multi-controlled Z with X on the zero bits of `value`.
fn push_phase_flip(gates: &mut Vec<GateApplication>, m: usize, value: usize) {
    let zero_bits: Vec<usize> = (0..m).filter(|i| (value >> (m - 1 - i)) & 1 == 0).collect();
    for &q in &zero_bits {
        gates.push(GateApplication::new(GateKind::X, vec![q]));
    }
    push_mcz(gates, m);
    for &q in &zero_bits {
        gates.push(GateApplication::new(GateKind::X, vec![q]));
    }
}

/// The unstructured-search reference circuit over `m` input wires marking
/// basis state `marked`, with `iterations` amplify rounds. Inputs occupy
/// wires `0..m`; wider searches append ancilla wires for the
/// multi-controlled phase flips. The diffusion reflection differs from the
/// textbook operator only by a global phase.
pub fn grover_reference(m: usize, marked: usize, iterations: usize) -> Result<LinearProgram> {
    if !(1..=5).contains(&m) {
        return Err(Error::Config(format!(
            "search input width must be 1..=5, got {m}"
        )));
    }
    if marked >= (1usize << m) {
        return Err(Error::Config(format!(
            "marked state {marked} outside {m}-bit range"
        )));
    }
    let n = m + grover_ancillas(m);
    let mut gate_list = Vec::new();
    for q in 0..m {
        gate_list.push(GateApplication::new(GateKind::H, vec![q]));
    }
    for _ in 0..iterations {
        push_phase_flip(&mut gate_list, m, marked);
        for q in 0..m {
            gate_list.push(GateApplication::new(GateKind::H, vec![q]));
        }
        push_phase_flip(&mut gate_list, m, 0);
        for q in 0..m {
            gate_list.push(GateApplication::new(GateKind::H, vec![q]));
        }
    }
    Ok(LinearProgram::new(n, gate_list))
}

/// Closed-form success probability of the search reference:
/// `sin^2((2k+1) asin(2^(-m/2)))`.
pub fn grover_success_probability(m: usize, iterations: usize) -> f64 {
    let theta = (1.0 / (1usize << m) as f64).sqrt().asin();
    let angle = (2 * iterations + 1) as f64 * theta;
    angle.sin().powi(2)
}

/// Probability mass the circuit leaves on the marked input value, summed
/// over ancilla configurations.
pub fn grover_marked_probability(
    program: &LinearProgram,
    m: usize,
    marked: usize,
) -> Result<f64> {
    let init = StateVector::zero_state(program.num_qubits)?;
    let result = eval_linear(program, &init, None, &EvalOptions::default())?;
    let anc = program.num_qubits - m;
    let mut mass = 0.0;
    for branch in &result.branches {
        for a in 0..(1usize << anc) {
            mass += branch.probability * branch.state.probability((marked << anc) | a);
        }
    }
    Ok(mass)
}
