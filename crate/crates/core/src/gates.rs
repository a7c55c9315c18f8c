//! The gate library and its embedding into registers.
//!
//! Every unitary gate kind maps to a fixed row-major matrix of arity 1 to 3;
//! `MEASURE` and `ORACLE` are program-level operations with no matrix. A
//! [`GateApplication`] names a kind, optional real parameters and an operand
//! list (controls first, target last). Operands may sit anywhere in the
//! register, in any order; an optional adjacency restriction confines
//! multi-qubit gates to consecutive wires.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::qstate::StateVector;

/// Unitarity tolerance: `max |(M M+ - I)_ij|` for freshly built or user
/// supplied matrices. The standard library gates satisfy 1e-12.
pub const UNITARITY_TOL: f64 = 1e-10;

/// Gate vocabulary. `Rot` carries one angle parameter in the enclosing
/// [`GateApplication`]; all other kinds are parameter free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateKind {
    I,
    X,
    H,
    Cnot,
    Toffoli,
    Phase,
    Pi8,
    Rot,
    /// Phase flip `diag(1, -1)`; restores teleported states after a `10`
    /// measurement.
    Z,
    /// `Z` then `X` composed, `[[0,1],[-1,0]]`; restores teleported states
    /// after a `11` measurement.
    Zx,
    Measure,
    Oracle,
    Wire,
}

pub const ALL_KINDS: [GateKind; 13] = [
    GateKind::I,
    GateKind::X,
    GateKind::H,
    GateKind::Cnot,
    GateKind::Toffoli,
    GateKind::Phase,
    GateKind::Pi8,
    GateKind::Rot,
    GateKind::Z,
    GateKind::Zx,
    GateKind::Measure,
    GateKind::Oracle,
    GateKind::Wire,
];

impl GateKind {
    /// Canonical name used by the textual program format.
    pub fn name(&self) -> &'static str {
        match self {
            GateKind::I => "I",
            GateKind::X => "X",
            GateKind::H => "HADAMARD",
            GateKind::Cnot => "CNOT",
            GateKind::Toffoli => "TOFFOLI",
            GateKind::Phase => "PHASE",
            GateKind::Pi8 => "PI8",
            GateKind::Rot => "ROT",
            GateKind::Z => "Z",
            GateKind::Zx => "ZX",
            GateKind::Measure => "MEASURE",
            GateKind::Oracle => "ORACLE",
            GateKind::Wire => "WIRE",
        }
    }

    /// Parses a gate name; `H` is accepted as an alias for `HADAMARD`.
    pub fn from_name(name: &str) -> Result<Self> {
        let upper = name.to_ascii_uppercase();
        Ok(match upper.as_str() {
            "I" => GateKind::I,
            "X" => GateKind::X,
            "H" | "HADAMARD" => GateKind::H,
            "CNOT" => GateKind::Cnot,
            "TOFFOLI" => GateKind::Toffoli,
            "PHASE" => GateKind::Phase,
            "PI8" => GateKind::Pi8,
            "ROT" => GateKind::Rot,
            "Z" => GateKind::Z,
            "ZX" => GateKind::Zx,
            "MEASURE" => GateKind::Measure,
            "ORACLE" => GateKind::Oracle,
            "WIRE" => GateKind::Wire,
            _ => return Err(Error::UnknownGate(name.to_string())),
        })
    }

    /// Operand count, or `None` for `ORACLE` whose arity is set by the
    /// oracle it is evaluated against (input bits plus one workspace qubit).
    pub fn arity(&self) -> Option<usize> {
        match self {
            GateKind::Cnot => Some(2),
            GateKind::Toffoli => Some(3),
            GateKind::Oracle => None,
            _ => Some(1),
        }
    }

    /// Number of real parameters carried by applications of this kind.
    pub fn param_count(&self) -> usize {
        match self {
            GateKind::Rot => 1,
            _ => 0,
        }
    }

    /// True for kinds backed by a fixed unitary matrix.
    pub fn has_matrix(&self) -> bool {
        !matches!(self, GateKind::Measure | GateKind::Oracle)
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GateKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        GateKind::from_name(s)
    }
}

impl Serialize for GateKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for GateKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        GateKind::from_name(&s).map_err(serde::de::Error::custom)
    }
}

/// Dense row-major complex matrix on 1 to 3 qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct GateMatrix {
    dim: usize,
    entries: Vec<Complex64>,
}

impl GateMatrix {
    pub fn new(dim: usize, entries: Vec<Complex64>) -> Result<Self> {
        if !(dim.is_power_of_two() && (2..=8).contains(&dim)) {
            return Err(Error::BadMatrixDim(dim));
        }
        if entries.len() != dim * dim {
            return Err(Error::BadMatrixDim(entries.len()));
        }
        Ok(GateMatrix { dim, entries })
    }

    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![Complex64::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = Complex64::new(1.0, 0.0);
        }
        GateMatrix { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of qubits the matrix acts on.
    pub fn arity(&self) -> usize {
        self.dim.trailing_zeros() as usize
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.dim + col]
    }

    /// Conjugate transpose.
    pub fn dagger(&self) -> GateMatrix {
        let mut entries = vec![Complex64::new(0.0, 0.0); self.dim * self.dim];
        for r in 0..self.dim {
            for c in 0..self.dim {
                entries[c * self.dim + r] = self.get(r, c).conj();
            }
        }
        GateMatrix {
            dim: self.dim,
            entries,
        }
    }

    /// Matrix product `self * other` (no arity cap; used by tests and
    /// reference constructions).
    pub fn matmul(&self, other: &GateMatrix) -> GateMatrix {
        assert_eq!(self.dim, other.dim);
        let d = self.dim;
        let mut entries = vec![Complex64::new(0.0, 0.0); d * d];
        for r in 0..d {
            for c in 0..d {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..d {
                    acc += self.get(r, k) * other.get(k, c);
                }
                entries[r * d + c] = acc;
            }
        }
        GateMatrix { dim: d, entries }
    }

    /// Kronecker product `self (x) other`; `self`'s qubits come first.
    pub fn kron(&self, other: &GateMatrix) -> GateMatrix {
        let d = self.dim * other.dim;
        let mut entries = vec![Complex64::new(0.0, 0.0); d * d];
        for r1 in 0..self.dim {
            for c1 in 0..self.dim {
                for r2 in 0..other.dim {
                    for c2 in 0..other.dim {
                        entries[(r1 * other.dim + r2) * d + (c1 * other.dim + c2)] =
                            self.get(r1, c1) * other.get(r2, c2);
                    }
                }
            }
        }
        GateMatrix { dim: d, entries }
    }
}

/// Checks `M M+ = I` entrywise within `tol`.
pub fn is_unitary(m: &GateMatrix, tol: f64) -> bool {
    let d = m.dim();
    let prod = m.matmul(&m.dagger());
    let mut max_dev: f64 = 0.0;
    for r in 0..d {
        for c in 0..d {
            let expect = if r == c { 1.0 } else { 0.0 };
            let dev = (prod.get(r, c) - Complex64::new(expect, 0.0)).norm();
            max_dev = max_dev.max(dev);
        }
    }
    max_dev <= tol
}

/// The fixed matrix for a unitary gate kind. `ROT` takes its angle from
/// `params`; all other kinds reject parameters.
pub fn standard_matrix(kind: GateKind, params: &[f64]) -> Result<GateMatrix> {
    if !kind.has_matrix() {
        return Err(Error::NoMatrix(kind.name().to_string()));
    }
    if params.len() != kind.param_count() {
        return Err(Error::ParamMismatch {
            gate: kind.name().to_string(),
            expected: kind.param_count(),
            actual: params.len(),
        });
    }
    let c = Complex64::new;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let m = match kind {
        GateKind::I | GateKind::Wire => GateMatrix::identity(2),
        GateKind::X => GateMatrix::new(2, vec![c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)])?,
        GateKind::H => GateMatrix::new(2, vec![c(h, 0.0), c(h, 0.0), c(h, 0.0), c(-h, 0.0)])?,
        GateKind::Phase => {
            GateMatrix::new(2, vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 1.0)])?
        }
        GateKind::Pi8 => {
            let e = Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4);
            GateMatrix::new(2, vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), e])?
        }
        GateKind::Rot => {
            let t = params[0];
            GateMatrix::new(
                2,
                vec![
                    c(t.cos(), 0.0),
                    c(-t.sin(), 0.0),
                    c(t.sin(), 0.0),
                    c(t.cos(), 0.0),
                ],
            )?
        }
        GateKind::Z => GateMatrix::new(2, vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)])?,
        GateKind::Zx => {
            GateMatrix::new(2, vec![c(0.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0), c(0.0, 0.0)])?
        }
        GateKind::Cnot => {
            let mut m = GateMatrix::identity(4);
            // |10> -> |11>, |11> -> |10> (control is the first, most
            // significant operand bit).
            m.entries[2 * 4 + 2] = c(0.0, 0.0);
            m.entries[2 * 4 + 3] = c(1.0, 0.0);
            m.entries[3 * 4 + 3] = c(0.0, 0.0);
            m.entries[3 * 4 + 2] = c(1.0, 0.0);
            m
        }
        GateKind::Toffoli => {
            let mut m = GateMatrix::identity(8);
            m.entries[6 * 8 + 6] = c(0.0, 0.0);
            m.entries[6 * 8 + 7] = c(1.0, 0.0);
            m.entries[7 * 8 + 7] = c(0.0, 0.0);
            m.entries[7 * 8 + 6] = c(1.0, 0.0);
            m
        }
        GateKind::Measure | GateKind::Oracle => unreachable!(),
    };
    debug_assert!(is_unitary(&m, UNITARITY_TOL));
    Ok(m)
}

/// One gate applied to named register positions: controls first, target
/// last. `ORACLE` operands are the oracle input qubits followed by its
/// workspace qubit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateApplication {
    pub kind: GateKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<f64>,
    pub qubits: Vec<usize>,
}

impl GateApplication {
    pub fn new(kind: GateKind, qubits: Vec<usize>) -> Self {
        GateApplication {
            kind,
            params: Vec::new(),
            qubits,
        }
    }

    pub fn with_params(kind: GateKind, params: Vec<f64>, qubits: Vec<usize>) -> Self {
        GateApplication {
            kind,
            params,
            qubits,
        }
    }

    /// Validates operand indices, arity and parameter count against a
    /// register of `num_qubits`. `oracle_input_bits` fixes the expected
    /// `ORACLE` arity when known; `adjacent_only` additionally requires
    /// multi-qubit operands to occupy consecutive wires.
    pub fn validate(
        &self,
        num_qubits: usize,
        oracle_input_bits: Option<usize>,
        adjacent_only: bool,
    ) -> Result<()> {
        for &q in &self.qubits {
            if q >= num_qubits {
                return Err(Error::QubitOutOfRange {
                    index: q,
                    qubits: num_qubits,
                });
            }
        }
        let mut seen = self.qubits.clone();
        seen.sort_unstable();
        for w in seen.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateQubit(w[0]));
            }
        }
        let expected = match self.kind.arity() {
            Some(a) => Some(a),
            None => oracle_input_bits.map(|m| m + 1),
        };
        if let Some(expected) = expected {
            if self.qubits.len() != expected {
                return Err(Error::ArityMismatch {
                    gate: self.kind.name().to_string(),
                    expected,
                    actual: self.qubits.len(),
                });
            }
        } else if self.qubits.len() < 2 {
            // An oracle application needs at least one input and the
            // workspace qubit even before the oracle itself is known.
            return Err(Error::ArityMismatch {
                gate: self.kind.name().to_string(),
                expected: 2,
                actual: self.qubits.len(),
            });
        }
        if self.kind.param_count() != self.params.len() {
            return Err(Error::ParamMismatch {
                gate: self.kind.name().to_string(),
                expected: self.kind.param_count(),
                actual: self.params.len(),
            });
        }
        if adjacent_only && self.qubits.len() > 1 {
            let min = *seen.first().unwrap();
            let max = *seen.last().unwrap();
            if max - min != self.qubits.len() - 1 {
                return Err(Error::NotTileable {
                    context: format!("{} on {:?}", self.kind.name(), self.qubits),
                });
            }
        }
        Ok(())
    }
}

/// Applies a unitary gate application to a register state. `MEASURE` and
/// `ORACLE` are rejected here; program evaluation handles them.
pub fn apply(state: &StateVector, app: &GateApplication) -> Result<StateVector> {
    let m = standard_matrix(app.kind, &app.params)?;
    apply_matrix(state, &m, &app.qubits)
}

/// Applies an arbitrary matrix to the named qubits of a register. Operand
/// order matters: `qubits[0]` is the most significant bit of the matrix's
/// local basis, matching the register-wide convention.
pub fn apply_matrix(state: &StateVector, m: &GateMatrix, qubits: &[usize]) -> Result<StateVector> {
    let n = state.num_qubits();
    let k = m.arity();
    if qubits.len() != k {
        return Err(Error::ArityMismatch {
            gate: format!("{}x{} matrix", m.dim(), m.dim()),
            expected: k,
            actual: qubits.len(),
        });
    }
    let mut seen = Vec::with_capacity(k);
    for &q in qubits {
        if q >= n {
            return Err(Error::QubitOutOfRange {
                index: q,
                qubits: n,
            });
        }
        if seen.contains(&q) {
            return Err(Error::DuplicateQubit(q));
        }
        seen.push(q);
    }

    // Expand each local basis index into its scattered register bits.
    let local_dim = 1usize << k;
    let mut spread = vec![0usize; local_dim];
    for (i, &q) in qubits.iter().enumerate() {
        let shift = n - 1 - q;
        for (l, s) in spread.iter_mut().enumerate() {
            if (l >> (k - 1 - i)) & 1 == 1 {
                *s |= 1 << shift;
            }
        }
    }
    let op_mask = spread[local_dim - 1];

    let amps = state.amplitudes();
    let mut out = vec![Complex64::new(0.0, 0.0); amps.len()];
    for base in 0..amps.len() {
        if base & op_mask != 0 {
            continue;
        }
        for (lo, &so) in spread.iter().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (li, &si) in spread.iter().enumerate() {
                acc += m.get(lo, li) * amps[base | si];
            }
            out[base | so] = acc;
        }
    }
    Ok(StateVector::from_raw(n, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::StateVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, PI};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn assert_amps(state: &StateVector, expect: &[Complex64], tol: f64) {
        assert_eq!(state.dim(), expect.len());
        for (a, e) in state.amplitudes().iter().zip(expect) {
            assert!(
                (a - e).norm() <= tol,
                "amplitude {a} differs from {e} beyond {tol}"
            );
        }
    }

    #[test]
    fn names_round_trip() {
        for kind in ALL_KINDS {
            assert_eq!(GateKind::from_name(kind.name()).unwrap(), kind);
        }
        assert_eq!(GateKind::from_name("h").unwrap(), GateKind::H);
        assert!(GateKind::from_name("SQRT-NOT").is_err());
    }

    #[test]
    fn x_flips_basis_state() {
        let zero = StateVector::basis_state(1, 0).unwrap();
        let out = apply(&zero, &GateApplication::new(GateKind::X, vec![0])).unwrap();
        assert_amps(&out, &[c(0.0, 0.0), c(1.0, 0.0)], 1e-12);
    }

    #[test]
    fn hadamard_on_basis_states() {
        let h = FRAC_1_SQRT_2;
        let zero = StateVector::basis_state(1, 0).unwrap();
        let one = StateVector::basis_state(1, 1).unwrap();
        let app = GateApplication::new(GateKind::H, vec![0]);
        assert_amps(&apply(&zero, &app).unwrap(), &[c(h, 0.0), c(h, 0.0)], 1e-12);
        assert_amps(&apply(&one, &app).unwrap(), &[c(h, 0.0), c(-h, 0.0)], 1e-12);
    }

    #[test]
    fn cnot_truth_table() {
        let app = GateApplication::new(GateKind::Cnot, vec![0, 1]);
        let expect = [0usize, 1, 3, 2]; // 00->00, 01->01, 10->11, 11->10
        for (input, output) in expect.iter().enumerate() {
            let s = StateVector::basis_state(2, input).unwrap();
            let out = apply(&s, &app).unwrap();
            assert!((out.probability(*output) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cnot_with_control_below_target() {
        // CNOT(1, 0): qubit 1 controls, qubit 0 is the target.
        let app = GateApplication::new(GateKind::Cnot, vec![1, 0]);
        let s = StateVector::basis_state(2, 0b01).unwrap();
        let out = apply(&s, &app).unwrap();
        assert!((out.probability(0b11) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn toffoli_needs_both_controls() {
        let app = GateApplication::new(GateKind::Toffoli, vec![0, 1, 2]);
        for input in 0..6 {
            let s = StateVector::basis_state(3, input).unwrap();
            let out = apply(&s, &app).unwrap();
            assert!((out.probability(input) - 1.0).abs() < 1e-12);
        }
        let s = StateVector::basis_state(3, 0b110).unwrap();
        let out = apply(&s, &app).unwrap();
        assert!((out.probability(0b111) - 1.0).abs() < 1e-12);
        let s = StateVector::basis_state(3, 0b111).unwrap();
        let out = apply(&s, &app).unwrap();
        assert!((out.probability(0b110) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn phase_gates_rotate_the_one_component() {
        let m = standard_matrix(GateKind::Phase, &[]).unwrap();
        assert_eq!(m.get(1, 1), c(0.0, 1.0));
        let m = standard_matrix(GateKind::Pi8, &[]).unwrap();
        let e = Complex64::from_polar(1.0, FRAC_PI_4);
        assert!((m.get(1, 1) - e).norm() < 1e-15);
        let m = standard_matrix(GateKind::Z, &[]).unwrap();
        assert_eq!(m.get(1, 1), c(-1.0, 0.0));
    }

    #[test]
    fn rot_is_a_real_rotation() {
        let t = PI / 8.0;
        let m = standard_matrix(GateKind::Rot, &[t]).unwrap();
        assert!((m.get(0, 0).re - t.cos()).abs() < 1e-15);
        assert!((m.get(0, 1).re + t.sin()).abs() < 1e-15);
        assert!((m.get(1, 0).re - t.sin()).abs() < 1e-15);
        assert!((m.get(1, 1).re - t.cos()).abs() < 1e-15);
        assert!(standard_matrix(GateKind::Rot, &[]).is_err());
        assert!(standard_matrix(GateKind::H, &[0.5]).is_err());
    }

    #[test]
    fn all_standard_gates_are_unitary() {
        for kind in ALL_KINDS {
            if !kind.has_matrix() {
                assert!(standard_matrix(kind, &[]).is_err());
                continue;
            }
            let params: Vec<f64> = if kind.param_count() == 1 {
                vec![3.0 * PI / 8.0]
            } else {
                vec![]
            };
            let m = standard_matrix(kind, &params).unwrap();
            assert!(is_unitary(&m, 1e-12), "{} not unitary", kind.name());
        }
        for step in 0..16 {
            let m = standard_matrix(GateKind::Rot, &[step as f64 * PI / 8.0]).unwrap();
            assert!(is_unitary(&m, 1e-12));
        }
    }

    #[test]
    fn non_unitary_matrix_is_rejected() {
        let m = GateMatrix::new(
            2,
            vec![c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)],
        )
        .unwrap();
        assert!(!is_unitary(&m, UNITARITY_TOL));
    }

    #[test]
    fn validation_catches_bad_applications() {
        let dup = GateApplication::new(GateKind::Cnot, vec![1, 1]);
        assert!(matches!(dup.validate(2, None, false), Err(Error::DuplicateQubit(1))));
        let oob = GateApplication::new(GateKind::X, vec![3]);
        assert!(oob.validate(2, None, false).is_err());
        let arity = GateApplication::new(GateKind::Cnot, vec![0]);
        assert!(arity.validate(2, None, false).is_err());
        let oracle = GateApplication::new(GateKind::Oracle, vec![0, 1]);
        assert!(oracle.validate(2, Some(1), false).is_ok());
        assert!(oracle.validate(2, Some(2), false).is_err());
    }

    #[test]
    fn adjacency_restriction() {
        let far = GateApplication::new(GateKind::Cnot, vec![0, 2]);
        assert!(far.validate(3, None, false).is_ok());
        assert!(far.validate(3, None, true).is_err());
        let near = GateApplication::new(GateKind::Cnot, vec![2, 1]);
        assert!(near.validate(3, None, true).is_ok());
    }

    #[test]
    fn measure_has_no_matrix() {
        let s = StateVector::zero_state(1).unwrap();
        let app = GateApplication::new(GateKind::Measure, vec![0]);
        assert!(matches!(apply(&s, &app), Err(Error::NoMatrix(_))));
    }

    #[test]
    fn apply_preserves_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = StateVector::zero_state(3).unwrap();
        for _ in 0..200 {
            let app = random_unitary_app(3, &mut rng);
            s = apply(&s, &app).unwrap();
            let norm: f64 = s.amplitudes().iter().map(|a| a.norm_sqr()).sum();
            assert!((norm - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn apply_then_inverse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..100 {
            let s = random_state(3, &mut rng);
            let app = random_unitary_app(3, &mut rng);
            let m = standard_matrix(app.kind, &app.params).unwrap();
            let forward = apply(&s, &app).unwrap();
            let back = apply_matrix(&forward, &m.dagger(), &app.qubits).unwrap();
            assert_amps(&back, s.amplitudes(), 1e-12);
        }
    }

    // Embedding oracle: conjugate an explicit Kronecker product by an
    // explicit bit permutation and compare against `apply` on random states.
    // This covers reversed and non-adjacent operand orders.

    fn random_state<R: Rng>(n: usize, rng: &mut R) -> StateVector {
        let dim = 1usize << n;
        let mut amps: Vec<Complex64> =
            (0..dim).map(|_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        for a in &mut amps {
            *a /= norm;
        }
        StateVector::from_amplitudes(amps).unwrap()
    }

    fn random_unitary_app<R: Rng>(n: usize, rng: &mut R) -> GateApplication {
        let unitary: Vec<GateKind> = ALL_KINDS
            .into_iter()
            .filter(|k| k.has_matrix() && k.arity().unwrap() <= n)
            .collect();
        let kind = unitary[rng.gen_range(0..unitary.len())];
        let arity = kind.arity().unwrap();
        let qubits = rand::seq::index::sample(rng, n, arity).into_vec();
        let params = if kind.param_count() == 1 {
            vec![rng.gen_range(0..16) as f64 * PI / 8.0]
        } else {
            vec![]
        };
        GateApplication::with_params(kind, params, qubits)
    }

    /// Full `2^n x 2^n` matrix for `m` on `qubits`, built as
    /// `P^-1 (m (x) I) P` where `P` moves the operand qubits to the front.
    fn embedded_matrix(m: &GateMatrix, qubits: &[usize], n: usize) -> Vec<Vec<Complex64>> {
        let rest = n - m.arity();
        let big = if rest == 0 {
            m.clone()
        } else {
            // `kron` builds the entries directly, so nesting it past the
            // three-qubit constructor cap is fine here.
            let mut id = GateMatrix::identity(2);
            for _ in 1..rest {
                id = id.kron(&GateMatrix::identity(2));
            }
            m.kron(&id)
        };
        // Qubit order after permutation: operands first, the rest ascending.
        let mut order: Vec<usize> = qubits.to_vec();
        for q in 0..n {
            if !qubits.contains(&q) {
                order.push(q);
            }
        }
        let dim = 1usize << n;
        let perm: Vec<usize> = (0..dim)
            .map(|g| {
                let mut p = 0usize;
                for (pos, &q) in order.iter().enumerate() {
                    let bit = (g >> (n - 1 - q)) & 1;
                    p |= bit << (n - 1 - pos);
                }
                p
            })
            .collect();
        let mut full = vec![vec![c(0.0, 0.0); dim]; dim];
        for (r, row) in full.iter_mut().enumerate() {
            for (cc, cell) in row.iter_mut().enumerate() {
                *cell = big.get(perm[r], perm[cc]);
            }
        }
        full
    }

    #[test]
    fn apply_matches_kronecker_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for n in 2..=4usize {
            for _ in 0..120 {
                let app = random_unitary_app(n, &mut rng);
                let s = random_state(n, &mut rng);
                let fast = apply(&s, &app).unwrap();
                let m = standard_matrix(app.kind, &app.params).unwrap();
                let full = embedded_matrix(&m, &app.qubits, n);
                let dim = 1usize << n;
                let mut expect = vec![c(0.0, 0.0); dim];
                for (r, row) in full.iter().enumerate() {
                    for (k, cell) in row.iter().enumerate() {
                        expect[r] += cell * s.amplitudes()[k];
                    }
                }
                assert_amps(&fast, &expect, 1e-12);
            }
        }
    }
}
