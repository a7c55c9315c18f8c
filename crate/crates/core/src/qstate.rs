//! Dense state vectors over qubit registers.
//!
//! A register of `n` qubits is a vector of `2^n` complex amplitudes. Qubit 0
//! is the leftmost qubit in ket notation and therefore the most significant
//! bit of a basis index: `|q0 q1 .. q_{n-1}>` has index
//! `q0*2^{n-1} + q1*2^{n-2} + .. + q_{n-1}`. Every module in this crate
//! shares that convention.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Tolerance on `|norm - 1|` when validating state normalization.
pub const NORM_TOL: f64 = 1e-10;

/// Tolerance on the pair-state determinant below which a two-qubit state is
/// considered separable.
pub const SEPARABILITY_TOL: f64 = 1e-9;

/// Tolerance used when comparing fidelities to exact values.
pub const FIDELITY_TOL: f64 = 1e-9;

/// Measurement branches with probability below this are dropped entirely.
const BRANCH_PRUNE: f64 = 1e-12;

/// Default cap on register width; override with the `EVOQ_MAX_QUBITS`
/// environment variable (read once per process).
pub const DEFAULT_MAX_QUBITS: usize = 16;

/// Largest register the process will build.
pub fn register_cap() -> usize {
    static CAP: OnceLock<usize> = OnceLock::new();
    *CAP.get_or_init(|| {
        std::env::var("EVOQ_MAX_QUBITS")
            .ok()
            .and_then(|v| v.parse().ok())
            .filter(|&n| n >= 1)
            .unwrap_or(DEFAULT_MAX_QUBITS)
    })
}

/// A normalized pure state over a register of qubits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateVector {
    num_qubits: usize,
    amps: Vec<Complex64>,
}

/// One outcome of a sampling measurement: the observed bits, the probability
/// of seeing them, and the renormalized post-measurement state.
#[derive(Debug, Clone)]
pub struct MeasurementOutcome {
    pub observed_bits: String,
    pub probability: f64,
    pub post_state: StateVector,
}

/// One branch of an exhaustive single-qubit measurement.
#[derive(Debug, Clone)]
pub struct MeasurementBranch {
    pub bit: u8,
    pub probability: f64,
    pub post_state: StateVector,
}

impl StateVector {
    /// The basis state `|k>` on an `n`-qubit register.
    pub fn basis_state(num_qubits: usize, index: usize) -> Result<Self> {
        check_register_size(num_qubits)?;
        let dim = 1usize << num_qubits;
        if index >= dim {
            return Err(Error::BasisIndexOutOfRange {
                index,
                qubits: num_qubits,
            });
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); dim];
        amps[index] = Complex64::new(1.0, 0.0);
        Ok(StateVector { num_qubits, amps })
    }

    /// The all-zeros state `|0..0>`.
    pub fn zero_state(num_qubits: usize) -> Result<Self> {
        Self::basis_state(num_qubits, 0)
    }

    /// Builds a state from raw amplitudes, validating the register shape and
    /// normalization.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let dim = amps.len();
        if dim < 2 || !dim.is_power_of_two() {
            return Err(Error::BadAmplitudeCount(dim));
        }
        let num_qubits = dim.trailing_zeros() as usize;
        check_register_size(num_qubits)?;
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized(norm));
        }
        Ok(StateVector { num_qubits, amps })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub(crate) fn from_raw(num_qubits: usize, amps: Vec<Complex64>) -> Self {
        debug_assert_eq!(amps.len(), 1 << num_qubits);
        StateVector { num_qubits, amps }
    }

    /// Probability of observing basis index `k` under a full measurement.
    pub fn probability(&self, index: usize) -> f64 {
        self.amps[index].norm_sqr()
    }

    /// The bit qubit `q` contributes to basis index `index`.
    #[inline]
    pub fn bit_of(&self, index: usize, qubit: usize) -> u8 {
        ((index >> (self.num_qubits - 1 - qubit)) & 1) as u8
    }

    /// Total probability of measuring `bit` on `qubit`.
    pub fn qubit_mass(&self, qubit: usize, bit: u8) -> Result<f64> {
        self.check_qubit(qubit)?;
        Ok(self
            .amps
            .iter()
            .enumerate()
            .filter(|(k, _)| self.bit_of(*k, qubit) == bit)
            .map(|(_, a)| a.norm_sqr())
            .sum())
    }

    /// Kronecker product `self (x) other`; `self`'s qubits come first.
    pub fn tensor(&self, other: &StateVector) -> Result<StateVector> {
        let num_qubits = self.num_qubits + other.num_qubits;
        check_register_size(num_qubits)?;
        let mut amps = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.amps {
            for b in &other.amps {
                amps.push(a * b);
            }
        }
        Ok(StateVector { num_qubits, amps })
    }

    /// Samples a measurement of every qubit, collapsing to a basis state.
    pub fn measure_all<R: Rng + ?Sized>(&self, rng: &mut R) -> MeasurementOutcome {
        let r: f64 = rng.gen();
        let mut acc = 0.0;
        let mut picked = self.dim() - 1;
        for (k, a) in self.amps.iter().enumerate() {
            acc += a.norm_sqr();
            if r < acc {
                picked = k;
                break;
            }
        }
        let probability = self.probability(picked);
        let observed_bits: String = (0..self.num_qubits)
            .map(|q| char::from(b'0' + self.bit_of(picked, q)))
            .collect();
        MeasurementOutcome {
            observed_bits,
            probability,
            post_state: StateVector::basis_state(self.num_qubits, picked)
                .expect("collapse target is a valid basis state"),
        }
    }

    /// Samples a measurement of a single qubit, projecting and renormalizing
    /// the rest of the register.
    pub fn measure_qubit<R: Rng + ?Sized>(
        &self,
        qubit: usize,
        rng: &mut R,
    ) -> Result<MeasurementOutcome> {
        let branches = self.branch_measure(qubit)?;
        let r: f64 = rng.gen();
        let mut acc = 0.0;
        let mut picked = branches.len() - 1;
        for (i, b) in branches.iter().enumerate() {
            acc += b.probability;
            if r < acc {
                picked = i;
                break;
            }
        }
        let b = &branches[picked];
        Ok(MeasurementOutcome {
            observed_bits: String::from(if b.bit == 0 { "0" } else { "1" }),
            probability: b.probability,
            post_state: b.post_state.clone(),
        })
    }

    /// Enumerates both outcomes of measuring `qubit` exactly. Branches of
    /// (numerically) zero probability are omitted; the returned probabilities
    /// sum to 1 within [`NORM_TOL`].
    pub fn branch_measure(&self, qubit: usize) -> Result<Vec<MeasurementBranch>> {
        self.check_qubit(qubit)?;
        let mut out = Vec::with_capacity(2);
        for bit in 0..2u8 {
            let probability: f64 = self
                .amps
                .iter()
                .enumerate()
                .filter(|(k, _)| self.bit_of(*k, qubit) == bit)
                .map(|(_, a)| a.norm_sqr())
                .sum();
            if probability <= BRANCH_PRUNE {
                continue;
            }
            let scale = 1.0 / probability.sqrt();
            let amps: Vec<Complex64> = self
                .amps
                .iter()
                .enumerate()
                .map(|(k, a)| {
                    if self.bit_of(k, qubit) == bit {
                        a * scale
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect();
            out.push(MeasurementBranch {
                bit,
                probability,
                post_state: StateVector::from_raw(self.num_qubits, amps),
            });
        }
        Ok(out)
    }

    /// Determinant criterion for two-qubit entanglement: with amplitudes
    /// `(d0, d1, d2, d3)` the state is a tensor product of single-qubit
    /// states exactly when `d0*d3 - d1*d2 = 0`. Tolerance [`SEPARABILITY_TOL`].
    pub fn is_entangled_pair(&self) -> Result<bool> {
        if self.num_qubits != 2 {
            return Err(Error::WrongQubitCount {
                expected: 2,
                actual: self.num_qubits,
            });
        }
        let det = self.amps[0] * self.amps[3] - self.amps[1] * self.amps[2];
        Ok(det.norm() > SEPARABILITY_TOL)
    }

    /// Fidelity `|<self|other>|^2`; 1 for states equal up to global phase.
    pub fn fidelity(&self, other: &StateVector) -> Result<f64> {
        if self.num_qubits != other.num_qubits {
            return Err(Error::WrongQubitCount {
                expected: self.num_qubits,
                actual: other.num_qubits,
            });
        }
        let inner: Complex64 = self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum();
        Ok(inner.norm_sqr())
    }

    fn check_qubit(&self, qubit: usize) -> Result<()> {
        if qubit >= self.num_qubits {
            return Err(Error::QubitOutOfRange {
                index: qubit,
                qubits: self.num_qubits,
            });
        }
        Ok(())
    }
}

fn check_register_size(num_qubits: usize) -> Result<()> {
    let cap = register_cap();
    if num_qubits == 0 || num_qubits > cap {
        return Err(Error::RegisterSize(num_qubits, cap));
    }
    Ok(())
}

impl<'de> Deserialize<'de> for StateVector {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            num_qubits: usize,
            amps: Vec<Complex64>,
        }
        let raw = Raw::deserialize(deserializer)?;
        let state = StateVector::from_amplitudes(raw.amps).map_err(serde::de::Error::custom)?;
        if state.num_qubits != raw.num_qubits {
            return Err(serde::de::Error::custom("num_qubits does not match amps"));
        }
        Ok(state)
    }
}
