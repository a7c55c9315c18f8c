//! Fitness schemes with one lower-is-better comparison interface.
//!
//! Every scheme produces a [`FitnessValue`]: a named component vector plus
//! the rule for ordering two vectors (componentwise lexicographic, weighted
//! sum, or a plain scalar). Schemes whose natural scale is higher-is-better
//! (the correctness scalar) are flagged inverted and the comparator flips
//! them internally, so a single total order serves every engine.
//!
//! Per-case errors feeding these constructors are `1 - P(correct)` for
//! decision problems, clamped to `[0, 1]`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{GateApplication, GateKind};
use crate::qstate::StateVector;

/// Hit/miss threshold: a case counts as solved when its error is at most
/// this value.
pub const HIT_ERROR_THRESHOLD: f64 = 0.48;

/// Denominator of the gate-count efficiency component.
pub const EFFICIENCY_SCALE: f64 = 100_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitnessScheme {
    Spector99,
    Spector00,
    Rubinstein,
    Lukac,
    Ding,
    Leier,
}

impl FitnessScheme {
    pub fn name(&self) -> &'static str {
        match self {
            FitnessScheme::Spector99 => "spector99",
            FitnessScheme::Spector00 => "spector00",
            FitnessScheme::Rubinstein => "rubinstein",
            FitnessScheme::Lukac => "lukac",
            FitnessScheme::Ding => "ding",
            FitnessScheme::Leier => "leier",
        }
    }

    /// Component labels, in the order they appear in a value's vector.
    pub fn component_names(&self) -> &'static [&'static str] {
        match self {
            FitnessScheme::Spector99 => &["misses", "correctness", "efficiency"],
            FitnessScheme::Spector00 => {
                &["misses", "expected_queries", "max_error", "num_gates"]
            }
            FitnessScheme::Rubinstein => &["raw_error", "standardized"],
            FitnessScheme::Lukac => &["correctness"],
            FitnessScheme::Ding => &["fitness"],
            FitnessScheme::Leier => &["misses", "max_error", "correctness", "num_gates"],
        }
    }
}

/// How two component vectors of the same scheme are ordered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompareMode {
    /// Componentwise, earlier components dominate.
    Lexicographic,
    /// By the weighted sum of the components.
    Weighted { weights: Vec<f64> },
    /// By the single component; `inverted` flips the scale so that a
    /// higher-is-better scalar still sorts lower-is-better.
    Scalar { inverted: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessValue {
    pub scheme: FitnessScheme,
    pub components: Vec<f64>,
    pub mode: CompareMode,
}

impl FitnessValue {
    /// The key vector such that plain lexicographic `total_cmp` over it
    /// realizes the scheme's ordering.
    fn ordering_key(&self) -> Vec<f64> {
        match &self.mode {
            CompareMode::Lexicographic => self.components.clone(),
            CompareMode::Weighted { weights } => {
                let sum = self
                    .components
                    .iter()
                    .zip(weights)
                    .map(|(c, w)| c * w)
                    .sum();
                vec![sum]
            }
            CompareMode::Scalar { inverted } => {
                let c = self.components[0];
                vec![if *inverted { -c } else { c }]
            }
        }
    }

    /// Component value looked up by its scheme-defined name.
    pub fn component(&self, name: &str) -> Result<f64> {
        let idx = self
            .scheme
            .component_names()
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| {
                Error::ComponentOutOfRange(format!(
                    "{} has no component named {name:?}",
                    self.scheme.name()
                ))
            })?;
        Ok(self.components[idx])
    }

    /// Scalar in `[0, 1]` (0 best) for fitness-proportional selection.
    /// Provided by the standardized error of the amplitude scheme and by
    /// scalar schemes whose value lies in the unit interval.
    pub fn selection_scalar(&self) -> Result<f64> {
        let value = match (self.scheme, &self.mode) {
            (FitnessScheme::Rubinstein, _) => self.components[1],
            (_, CompareMode::Scalar { inverted: true }) => 1.0 - self.components[0],
            (_, CompareMode::Scalar { inverted: false }) => self.components[0],
            _ => {
                return Err(Error::NotSelectionScalar(format!(
                    "{} is multi-component",
                    self.scheme.name()
                )))
            }
        };
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::NotSelectionScalar(format!("{value}")));
        }
        Ok(value)
    }

    /// Whether every bound holds for this value's components.
    pub fn meets(&self, bounds: &[ComponentBound]) -> Result<bool> {
        for bound in bounds {
            let value = self.component(&bound.component)?;
            if let Some(max) = bound.max {
                if value > max {
                    return Ok(false);
                }
            }
            if let Some(min) = bound.min {
                if value < min {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// A target condition on one named component: `min <= value <= max` for
/// whichever bounds are present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentBound {
    pub component: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
}

/// Total order over fitness values of one scheme; `Less` is fitter.
pub fn compare(a: &FitnessValue, b: &FitnessValue) -> Result<Ordering> {
    if a.scheme != b.scheme || a.mode != b.mode || a.components.len() != b.components.len() {
        return Err(Error::SchemeMismatch);
    }
    let ka = a.ordering_key();
    let kb = b.ordering_key();
    for (x, y) in ka.iter().zip(&kb) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return Ok(other),
        }
    }
    Ok(Ordering::Equal)
}

fn check_errors(case_errors: &[f64]) -> Result<()> {
    if case_errors.is_empty() {
        return Err(Error::Config("fitness needs at least one case".to_string()));
    }
    for &e in case_errors {
        if !(0.0..=1.0).contains(&e) {
            return Err(Error::ComponentOutOfRange(format!(
                "case error {e} outside [0, 1]"
            )));
        }
    }
    Ok(())
}

/// Hits-style lexicographic fitness: misses (cases with error above the
/// threshold), correctness (threshold-excess error mass per hit), and
/// efficiency (gate count scaled to stay below one).
pub fn spector99(case_errors: &[f64], gate_count: usize) -> Result<FitnessValue> {
    check_errors(case_errors)?;
    let misses = case_errors
        .iter()
        .filter(|e| **e > HIT_ERROR_THRESHOLD)
        .count();
    let hits = case_errors.len() - misses;
    let excess: f64 = case_errors
        .iter()
        .map(|e| (e - HIT_ERROR_THRESHOLD).max(0.0))
        .sum();
    let correctness = excess / hits.max(1) as f64;
    Ok(FitnessValue {
        scheme: FitnessScheme::Spector99,
        components: vec![
            misses as f64,
            correctness,
            gate_count as f64 / EFFICIENCY_SCALE,
        ],
        mode: CompareMode::Lexicographic,
    })
}

/// Query-counting lexicographic fitness: misses, expected oracle queries,
/// worst single-case error, and the raw gate count.
pub fn spector00(
    case_errors: &[f64],
    expected_queries: f64,
    gate_count: usize,
) -> Result<FitnessValue> {
    check_errors(case_errors)?;
    let misses = case_errors
        .iter()
        .filter(|e| **e > HIT_ERROR_THRESHOLD)
        .count();
    let max_error = case_errors.iter().fold(0.0_f64, |m, e| m.max(*e));
    Ok(FitnessValue {
        scheme: FitnessScheme::Spector00,
        components: vec![misses as f64, expected_queries, max_error, gate_count as f64],
        mode: CompareMode::Lexicographic,
    })
}

/// Summed amplitude distance between observed and desired states over all
/// cases and basis states. The modulus of the complex difference is used so
/// wrong states cannot cancel to zero error.
pub fn rubinstein_raw_error(observed: &[StateVector], desired: &[StateVector]) -> Result<f64> {
    if observed.len() != desired.len() || observed.is_empty() {
        return Err(Error::Config(format!(
            "amplitude fitness got {} observed vs {} desired cases",
            observed.len(),
            desired.len()
        )));
    }
    let mut total = 0.0;
    for (o, d) in observed.iter().zip(desired) {
        if o.num_qubits() != d.num_qubits() {
            return Err(Error::WrongQubitCount {
                expected: d.num_qubits(),
                actual: o.num_qubits(),
            });
        }
        total += o
            .amplitudes()
            .iter()
            .zip(d.amplitudes())
            .map(|(a, b)| (a - b).norm())
            .sum::<f64>();
    }
    Ok(total)
}

/// Wraps an already-computed raw amplitude error with its standardized form
/// `raw / population_max_error`, clamped into `[0, 1]`. A non-positive
/// population maximum means every individual is perfect and standardizes
/// to zero.
pub fn rubinstein_from_raw(raw_error: f64, population_max_error: f64) -> FitnessValue {
    let standardized = if population_max_error > 0.0 {
        (raw_error / population_max_error).min(1.0)
    } else {
        0.0
    };
    FitnessValue {
        scheme: FitnessScheme::Rubinstein,
        components: vec![raw_error, standardized],
        mode: CompareMode::Lexicographic,
    }
}

/// Amplitude-error fitness: raw summed amplitude distance plus its
/// population-standardized form. Pass 1 for the population maximum to get
/// the raw error as the standardized component.
pub fn rubinstein(
    observed: &[StateVector],
    desired: &[StateVector],
    population_max_error: f64,
) -> Result<FitnessValue> {
    Ok(rubinstein_from_raw(
        rubinstein_raw_error(observed, desired)?,
        population_max_error,
    ))
}

/// Mean correct-answer probability, where 1 is maximum fitness; the
/// comparator inverts it.
pub fn lukac(correct_probability_per_case: &[f64]) -> Result<FitnessValue> {
    if correct_probability_per_case.is_empty() {
        return Err(Error::Config("fitness needs at least one case".to_string()));
    }
    for &p in correct_probability_per_case {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::ComponentOutOfRange(format!(
                "correct probability {p} outside [0, 1]"
            )));
        }
    }
    let mean =
        correct_probability_per_case.iter().sum::<f64>() / correct_probability_per_case.len() as f64;
    Ok(FitnessValue {
        scheme: FitnessScheme::Lukac,
        components: vec![mean],
        mode: CompareMode::Scalar { inverted: true },
    })
}

/// Reward/punish parameters of the cost-correctness scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DingParams {
    pub reward: f64,
    pub punish: f64,
    pub satcost: f64,
}

impl Default for DingParams {
    fn default() -> Self {
        // punish:reward of 5:1 around a satisfactory cost of 6.
        DingParams {
            reward: 1.0,
            punish: 5.0,
            satcost: 6.0,
        }
    }
}

/// Cost-correctness scalar:
/// `reward * (actual_cost - satcost) + punish * (1 - correctness)`.
pub fn ding(actual_cost: f64, correctness: f64, params: &DingParams) -> FitnessValue {
    let value = params.reward * (actual_cost - params.satcost)
        + params.punish * (1.0 - correctness);
    FitnessValue {
        scheme: FitnessScheme::Ding,
        components: vec![value],
        mode: CompareMode::Scalar { inverted: false },
    }
}

/// Gate tariff for the cost-correctness scheme: wires are free, everything
/// else costs its operand count (one-qubit gates 1, two-qubit gates 2, and
/// so on for wider gates).
pub fn ding_cost(gates: &[GateApplication]) -> f64 {
    gates
        .iter()
        .map(|g| {
            if g.kind == GateKind::Wire {
                0.0
            } else {
                g.qubits.len() as f64
            }
        })
        .sum()
}

/// Weighted four-component scalar over misses, max-error, correctness and
/// gate count.
pub fn leier(
    misses: f64,
    max_error: f64,
    correctness: f64,
    num_gates: f64,
    weights: [f64; 4],
) -> Result<FitnessValue> {
    if weights.iter().any(|w| *w < 0.0) || weights.iter().all(|w| *w == 0.0) {
        return Err(Error::Config(
            "weights must be non-negative and not all zero".to_string(),
        ));
    }
    Ok(FitnessValue {
        scheme: FitnessScheme::Leier,
        components: vec![misses, max_error, correctness, num_gates],
        mode: CompareMode::Weighted {
            weights: weights.to_vec(),
        },
    })
}

/// Default weights: one miss always outweighs a hundred extra gates.
pub const LEIER_DEFAULT_WEIGHTS: [f64; 4] = [1.0, 0.5, 0.5, 0.001];

/// The worst representable value of a scheme, assigned to individuals whose
/// evaluation failed (for example by exceeding the branch cap).
pub fn worst(scheme: FitnessScheme, mode: CompareMode) -> FitnessValue {
    let components = match scheme {
        FitnessScheme::Spector99 => vec![f64::INFINITY; 3],
        FitnessScheme::Spector00 => vec![f64::INFINITY; 4],
        FitnessScheme::Rubinstein => vec![f64::INFINITY, 1.0],
        // Inverted scale: zero correctness is the floor.
        FitnessScheme::Lukac => vec![0.0],
        FitnessScheme::Ding => vec![f64::INFINITY],
        FitnessScheme::Leier => vec![f64::INFINITY; 4],
    };
    FitnessValue {
        scheme,
        components,
        mode,
    }
}
