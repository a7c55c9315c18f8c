//! Crate-wide error type.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("register size {0} is out of range (1..={1})")]
    RegisterSize(usize, usize),

    #[error("basis index {index} out of range for {qubits} qubits")]
    BasisIndexOutOfRange { index: usize, qubits: usize },

    #[error("amplitude vector of length {0} is not a power-of-two register")]
    BadAmplitudeCount(usize),

    #[error("state norm {0} differs from 1 beyond tolerance")]
    NotNormalized(f64),

    #[error("qubit index {index} out of range for {qubits}-qubit register")]
    QubitOutOfRange { index: usize, qubits: usize },

    #[error("duplicate qubit operand {0}")]
    DuplicateQubit(usize),

    #[error("operation requires a {expected}-qubit state, got {actual}")]
    WrongQubitCount { expected: usize, actual: usize },

    #[error("gate {gate} expects {expected} operands, got {actual}")]
    ArityMismatch {
        gate: String,
        expected: usize,
        actual: usize,
    },

    #[error("gate {gate} expects {expected} parameters, got {actual}")]
    ParamMismatch {
        gate: String,
        expected: usize,
        actual: usize,
    },

    #[error("gate {0} has no fixed matrix")]
    NoMatrix(String),

    #[error("matrix dimension {0} is not a power of two in 2..=8")]
    BadMatrixDim(usize),

    #[error("{context}: operands must occupy adjacent ascending rows")]
    NotTileable { context: String },

    #[error("gate {0} cannot appear in an array-of-strings encoding")]
    NotEncodable(String),

    #[error("unknown gate name {0:?}")]
    UnknownGate(String),

    #[error("branch count exceeded the cap of {0} during evaluation")]
    BranchExplosion(usize),

    #[error("program uses an oracle but none was supplied")]
    MissingOracle,

    #[error("oracle truth table has {actual} entries, expected {expected}")]
    BadTruthTable { expected: usize, actual: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("fitness values from different schemes cannot be compared")]
    SchemeMismatch,

    #[error("fitness component out of range: {0}")]
    ComponentOutOfRange(String),

    #[error("selection requires evaluated fitness for every individual")]
    UnevaluatedIndividual,

    #[error("fitness-proportional selection needs scalar fitness in [0,1], got {0}")]
    NotSelectionScalar(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("structure mismatch: cannot recombine {0} with {1}")]
    StructureMismatch(String, String),

    #[error("seed file {path}: {message}")]
    SeedFile { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
