//! The genetic-programming engine: population initialization, selection,
//! variation operators, and the generational and steady-state loops.
//!
//! A run is a pure function of its config. One seed drives a single
//! coordinator RNG for initialization, selection and variation; fitness
//! evaluation is exact and needs no randomness, so the parallel and
//! sequential evaluators produce identical populations and the per-worker
//! split of work can never leak into the results.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitness::{
    self, CompareMode, ComponentBound, DingParams, FitnessScheme, FitnessValue,
};
use crate::gates::{GateApplication, GateKind};
use crate::problems::{self, Expected, ProblemSpec};
use crate::program::{
    self, EvalOptions, LinearProgram, LinearTreeNode, LinearTreeProgram, MeasureBranchPoint,
    QuantumProgram, TreeNode, TreeProgram, DEFAULT_MAX_BRANCHES,
};

/// One population member: its genome, its fitness once evaluated, and a
/// birth-order id used as the final tie-breaker in rankings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Individual {
    pub program: QuantumProgram,
    pub fitness: Option<FitnessValue>,
    pub lineage: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructureKind {
    Linear,
    Tree,
    LinearTree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossoverKind {
    /// One shared cut point; equal-length parents yield equal-length
    /// children. With unequal parents the child takes the second parent's
    /// length.
    Fixed,
    /// Independent cut points per parent; child length varies and is
    /// truncated to the program length cap.
    Variable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoopKind {
    Generational,
    SteadyState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SelectionConfig {
    /// Roulette wheel over `1 - f`, requiring scalar fitness in `[0, 1]`.
    FitnessProportional,
    /// Parents drawn uniformly from the best `count` individuals.
    Ranking { count: usize },
    /// Best of `size` sampled without replacement. `exclude_losers` switches
    /// to the variant that discards only the worst of the sample and treats
    /// the remaining `size - 1` as the parent pool.
    Tournament {
        size: usize,
        #[serde(default)]
        exclude_losers: bool,
    },
    /// Stochastic universal sampling over the `1 - f` wheel.
    Sus,
}

/// Which problem to evolve against, with optional overrides of its
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    /// Replaces the problem's default evolvable gate set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate_set: Option<Vec<GateKind>>,
    /// Restricts generated gates to adjacent ascending operand runs.
    #[serde(default)]
    pub adjacent_only: bool,
}

impl ProblemConfig {
    pub fn expand(&self) -> Result<ProblemSpec> {
        let mut spec = problems::problem_by_name(&self.name, self.size)?;
        if let Some(gate_set) = &self.gate_set {
            if gate_set.is_empty() {
                return Err(Error::Config("gate set override is empty".to_string()));
            }
            spec.gate_set = gate_set.clone();
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitnessConfig {
    pub scheme: FitnessScheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ding: Option<DingParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leier_weights: Option<[f64; 4]>,
}

impl FitnessConfig {
    fn mode(&self) -> CompareMode {
        match self.scheme {
            FitnessScheme::Spector99 | FitnessScheme::Spector00 | FitnessScheme::Rubinstein => {
                CompareMode::Lexicographic
            }
            FitnessScheme::Lukac => CompareMode::Scalar { inverted: true },
            FitnessScheme::Ding => CompareMode::Scalar { inverted: false },
            FitnessScheme::Leier => CompareMode::Weighted {
                weights: self
                    .leier_weights
                    .unwrap_or(fitness::LEIER_DEFAULT_WEIGHTS)
                    .to_vec(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    /// JSON file holding a list of programs to seed the population;
    /// the remainder is filled with randoms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_file: Option<PathBuf>,
    pub min_length: usize,
    pub max_length: usize,
}

fn default_elitism() -> usize {
    1
}

fn default_max_program_length() -> usize {
    64
}

fn default_max_branches() -> usize {
    DEFAULT_MAX_BRANCHES
}

fn default_crossover() -> CrossoverKind {
    CrossoverKind::Variable
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub problem: ProblemConfig,
    pub structure: StructureKind,
    pub fitness: FitnessConfig,
    pub population_size: usize,
    pub selection: SelectionConfig,
    pub p_mutation: f64,
    pub p_crossover: f64,
    #[serde(default = "default_crossover")]
    pub crossover: CrossoverKind,
    pub max_generations: usize,
    /// Target bounds on the best individual's components; reaching them
    /// ends the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<ComponentBound>>,
    #[serde(rename = "loop")]
    pub run_mode: LoopKind,
    pub rng_seed: u64,
    pub init: InitConfig,
    /// Upper bound on a program's gate count, enforced by every variation
    /// operator.
    #[serde(default = "default_max_program_length")]
    pub max_program_length: usize,
    /// Survivors copied verbatim into the next generation (generational
    /// mode). Zero disables elitism and with it the monotonicity guarantee.
    #[serde(default = "default_elitism")]
    pub elitism: usize,
    #[serde(default = "default_max_branches")]
    pub max_branches: usize,
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.population_size < 2 {
            return fail(format!(
                "population_size must be at least 2, got {}",
                self.population_size
            ));
        }
        for (name, p) in [("p_mutation", self.p_mutation), ("p_crossover", self.p_crossover)] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.max_generations == 0 {
            return fail("max_generations must be positive".to_string());
        }
        if self.max_program_length == 0 || self.max_branches == 0 {
            return fail("length and branch caps must be positive".to_string());
        }
        if self.init.min_length == 0
            || self.init.min_length > self.init.max_length
            || self.init.max_length > self.max_program_length
        {
            return fail(format!(
                "init lengths must satisfy 1 <= min <= max <= {}, got {}..={}",
                self.max_program_length, self.init.min_length, self.init.max_length
            ));
        }
        if self.elitism >= self.population_size {
            return fail("elitism must be smaller than the population".to_string());
        }

        match &self.selection {
            SelectionConfig::Ranking { count } => {
                if *count == 0 || *count > self.population_size {
                    return fail(format!("ranking count {count} outside the population"));
                }
            }
            SelectionConfig::Tournament { size, exclude_losers } => {
                if *size == 0 || *size > self.population_size {
                    return fail(format!("tournament size {size} outside the population"));
                }
                if *exclude_losers && *size < 2 {
                    return fail("excluding losers needs a tournament of at least 2".to_string());
                }
            }
            SelectionConfig::FitnessProportional | SelectionConfig::Sus => {
                if !matches!(
                    self.fitness.scheme,
                    FitnessScheme::Rubinstein | FitnessScheme::Lukac
                ) {
                    return fail(format!(
                        "{} fitness is not a [0,1] scalar; roulette and SUS need the \
                         standardized or correctness schemes",
                        self.fitness.scheme.name()
                    ));
                }
            }
        }
        if self.run_mode == LoopKind::SteadyState {
            match self.selection {
                SelectionConfig::Tournament { size, .. } if size >= 2 => {}
                _ => {
                    return fail(
                        "steady-state replacement needs tournament selection of size >= 2"
                            .to_string(),
                    )
                }
            }
        }

        if let Some(weights) = self.fitness.leier_weights {
            if weights.iter().any(|w| *w < 0.0) || weights.iter().all(|w| *w == 0.0) {
                return fail("weights must be non-negative and not all zero".to_string());
            }
        }

        let spec = self.problem.expand()?;
        let n = spec.num_qubits;
        let oracle_arity = spec.oracle_input_bits().map(|m| m + 1);
        for kind in &spec.gate_set {
            let arity = match kind.arity() {
                Some(a) => a,
                None => match oracle_arity {
                    Some(a) => a,
                    None => {
                        return fail(format!(
                            "gate set includes {} but problem {:?} has no oracles",
                            kind.name(),
                            spec.name
                        ))
                    }
                },
            };
            if arity > n {
                return fail(format!(
                    "gate {} needs {arity} qubits but the register has {n}",
                    kind.name()
                ));
            }
        }

        let all_targets = spec
            .cases
            .iter()
            .all(|c| matches!(c.expected, Expected::TargetState(_)));
        if self.fitness.scheme == FitnessScheme::Rubinstein && !all_targets {
            return fail(
                "the amplitude-error scheme applies to state-preparation problems only"
                    .to_string(),
            );
        }
        let any_decision = spec
            .cases
            .iter()
            .any(|c| matches!(c.expected, Expected::AnswerBit(_)));
        if any_decision && spec.answer_qubit.is_none() {
            return fail("decision problems need an answer qubit".to_string());
        }

        if let Some(bounds) = &self.target {
            if bounds.is_empty() {
                return fail("target must name at least one component bound".to_string());
            }
            let names = self.fitness.scheme.component_names();
            for b in bounds {
                if !names.contains(&b.component.as_str()) {
                    return fail(format!(
                        "target component {:?} is not part of {}",
                        b.component,
                        self.fitness.scheme.name()
                    ));
                }
                if b.max.is_none() && b.min.is_none() {
                    return fail(format!("target bound on {:?} has no limits", b.component));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Random program generation
// ---------------------------------------------------------------------------

/// Everything the variation operators need about the search space.
pub struct VariationCtx<'a> {
    pub gate_set: &'a [GateKind],
    pub num_qubits: usize,
    pub oracle_arity: Option<usize>,
    pub adjacent_only: bool,
    pub structure: StructureKind,
    pub crossover: CrossoverKind,
    pub max_gates: usize,
    pub p_mutation: f64,
}

impl<'a> VariationCtx<'a> {
    pub fn new(cfg: &'a EvolutionConfig, spec: &'a ProblemSpec) -> Self {
        VariationCtx {
            gate_set: &spec.gate_set,
            num_qubits: spec.num_qubits,
            oracle_arity: spec.oracle_input_bits().map(|m| m + 1),
            adjacent_only: cfg.problem.adjacent_only,
            structure: cfg.structure,
            crossover: cfg.crossover,
            max_gates: cfg.max_program_length,
            p_mutation: cfg.p_mutation,
        }
    }

    fn arity_of(&self, kind: GateKind) -> usize {
        kind.arity()
            .or(self.oracle_arity)
            .expect("oracle gates validated against the problem")
    }
}

/// Rotation parameters are drawn from the sixteen multiples of pi/8.
const ROT_STEPS: usize = 16;

fn random_params<R: Rng>(kind: GateKind, rng: &mut R) -> Vec<f64> {
    (0..kind.param_count())
        .map(|_| rng.gen_range(0..ROT_STEPS) as f64 * std::f64::consts::FRAC_PI_8)
        .collect()
}

fn random_operands<R: Rng>(ctx: &VariationCtx, arity: usize, rng: &mut R) -> Vec<usize> {
    if ctx.adjacent_only {
        let start = rng.gen_range(0..=ctx.num_qubits - arity);
        (start..start + arity).collect()
    } else {
        sample(rng, ctx.num_qubits, arity).into_vec()
    }
}

fn random_gate<R: Rng>(ctx: &VariationCtx, rng: &mut R) -> GateApplication {
    let kind = ctx.gate_set[rng.gen_range(0..ctx.gate_set.len())];
    let arity = ctx.arity_of(kind);
    GateApplication::with_params(kind, random_params(kind, rng), random_operands(ctx, arity, rng))
}

fn random_linear<R: Rng>(ctx: &VariationCtx, length: usize, rng: &mut R) -> LinearProgram {
    LinearProgram::new(
        ctx.num_qubits,
        (0..length).map(|_| random_gate(ctx, rng)).collect(),
    )
}

/// Grows a random tree consuming at most `budget` gate nodes.
fn random_tree_node<R: Rng>(ctx: &VariationCtx, budget: &mut usize, rng: &mut R) -> TreeNode {
    if *budget == 0 || rng.gen_bool(0.25) {
        return TreeNode::Leaf {
            qubit: rng.gen_range(0..ctx.num_qubits),
        };
    }
    let kind = ctx.gate_set[rng.gen_range(0..ctx.gate_set.len())];
    *budget -= 1;
    let arity = ctx.arity_of(kind);
    let children = (0..arity)
        .map(|_| random_tree_node(ctx, budget, rng))
        .collect();
    TreeNode::Gate {
        kind,
        params: random_params(kind, rng),
        children,
    }
}

fn random_program<R: Rng>(ctx: &VariationCtx, length: usize, rng: &mut R) -> QuantumProgram {
    match ctx.structure {
        StructureKind::Linear => QuantumProgram::Linear(random_linear(ctx, length, rng)),
        StructureKind::Tree => {
            let mut budget = length;
            QuantumProgram::Tree(TreeProgram {
                num_qubits: ctx.num_qubits,
                root: random_tree_node(ctx, &mut budget, rng),
            })
        }
        StructureKind::LinearTree => QuantumProgram::LinearTree(LinearTreeProgram {
            num_qubits: ctx.num_qubits,
            root: LinearTreeNode::leaf(random_linear(ctx, length, rng).gates),
        }),
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Borrowed evaluation context shared by every individual.
pub struct EvalContext<'a> {
    pub spec: &'a ProblemSpec,
    pub fitness: &'a FitnessConfig,
    pub opts: EvalOptions,
}

fn all_gates(program: &QuantumProgram) -> Vec<GateApplication> {
    fn collect_lt(node: &LinearTreeNode, out: &mut Vec<GateApplication>) {
        out.extend(node.segment.iter().cloned());
        if let Some(b) = &node.branch {
            collect_lt(&b.zero, out);
            collect_lt(&b.one, out);
        }
    }
    match program {
        QuantumProgram::Linear(p) => p.gates.clone(),
        QuantumProgram::Tree(p) => program::linearize(p).gates,
        QuantumProgram::LinearTree(p) => {
            let mut out = Vec::new();
            collect_lt(&p.root, &mut out);
            out
        }
    }
}

/// Evaluates one program against every case of the problem and scores it
/// under the configured scheme. Evaluation failures (branch explosion,
/// structural faults) yield the scheme's worst value rather than an error,
/// so a damaged genome simply loses.
pub fn evaluate_program(program: &QuantumProgram, ctx: &EvalContext) -> FitnessValue {
    let worst = || fitness::worst(ctx.fitness.scheme, ctx.fitness.mode());
    let mut errors = Vec::with_capacity(ctx.spec.cases.len());
    let mut queries = 0.0;
    let mut raw_amplitude_error = 0.0;
    for case in &ctx.spec.cases {
        let result = match program.eval(&case.initial_state, case.oracle.as_ref(), &ctx.opts) {
            Ok(r) => r,
            Err(_) => return worst(),
        };
        queries += result.expected_oracle_calls;
        if ctx.fitness.scheme == FitnessScheme::Rubinstein {
            let Expected::TargetState(target) = &case.expected else {
                return worst();
            };
            // Branch-weighted amplitude distance; branchless programs
            // reduce to the plain per-case sum.
            for b in &result.branches {
                let dist: f64 = b
                    .state
                    .amplitudes()
                    .iter()
                    .zip(target.amplitudes())
                    .map(|(o, d)| (o - d).norm())
                    .sum();
                raw_amplitude_error += b.probability * dist;
            }
        } else {
            match problems::case_error(case, &result, ctx.spec.answer_qubit) {
                Ok(e) => errors.push(e),
                Err(_) => return worst(),
            }
        }
    }
    // Queries averaged over cases: the classical-comparison threshold is
    // per run of the algorithm, not summed over the case set.
    let mean_queries = queries / ctx.spec.cases.len() as f64;
    let gate_count = program.gate_count();
    let value = match ctx.fitness.scheme {
        FitnessScheme::Spector99 => fitness::spector99(&errors, gate_count),
        FitnessScheme::Spector00 => fitness::spector00(&errors, mean_queries, gate_count),
        FitnessScheme::Rubinstein => Ok(fitness::rubinstein_from_raw(raw_amplitude_error, 1.0)),
        FitnessScheme::Lukac => {
            let probs: Vec<f64> = errors.iter().map(|e| 1.0 - e).collect();
            fitness::lukac(&probs)
        }
        FitnessScheme::Ding => {
            let params = ctx.fitness.ding.unwrap_or_default();
            let cost = fitness::ding_cost(&all_gates(program));
            let correctness =
                errors.iter().map(|e| 1.0 - e).sum::<f64>() / errors.len().max(1) as f64;
            Ok(fitness::ding(cost, correctness, &params))
        }
        FitnessScheme::Leier => {
            let misses = errors
                .iter()
                .filter(|e| **e > fitness::HIT_ERROR_THRESHOLD)
                .count();
            let hits = errors.len() - misses;
            let max_error = errors.iter().fold(0.0_f64, |m, e| m.max(*e));
            let correctness = errors
                .iter()
                .map(|e| (e - fitness::HIT_ERROR_THRESHOLD).max(0.0))
                .sum::<f64>()
                / hits.max(1) as f64;
            let weights = ctx
                .fitness
                .leier_weights
                .unwrap_or(fitness::LEIER_DEFAULT_WEIGHTS);
            fitness::leier(misses as f64, max_error, correctness, gate_count as f64, weights)
        }
    };
    value.unwrap_or_else(|_| worst())
}

/// Fills in missing fitness values in parallel across the current rayon
/// pool. Returns the number of evaluations performed.
#[cfg(feature = "parallel")]
pub fn evaluate_population(pop: &mut [Individual], ctx: &EvalContext) -> usize {
    use rayon::prelude::*;
    pop.par_iter_mut()
        .map(|ind| {
            if ind.fitness.is_none() {
                ind.fitness = Some(evaluate_program(&ind.program, ctx));
                1
            } else {
                0
            }
        })
        .sum()
}

#[cfg(not(feature = "parallel"))]
pub fn evaluate_population(pop: &mut [Individual], ctx: &EvalContext) -> usize {
    evaluate_population_seq(pop, ctx)
}

/// Sequential twin of [`evaluate_population`], kept for benchmarking and
/// for builds without the parallel feature.
pub fn evaluate_population_seq(pop: &mut [Individual], ctx: &EvalContext) -> usize {
    let mut evaluated = 0;
    for ind in pop.iter_mut() {
        if ind.fitness.is_none() {
            ind.fitness = Some(evaluate_program(&ind.program, ctx));
            evaluated += 1;
        }
    }
    evaluated
}

/// Rewrites the standardized component of amplitude-scheme fitness against
/// the current population's maximum finite raw error. Failed evaluations
/// standardize to 1.
fn restandardize(pop: &mut [Individual], scheme: FitnessScheme) {
    if scheme != FitnessScheme::Rubinstein {
        return;
    }
    let popmax = pop
        .iter()
        .filter_map(|i| i.fitness.as_ref())
        .map(|f| f.components[0])
        .filter(|r| r.is_finite())
        .fold(0.0_f64, f64::max);
    for ind in pop.iter_mut() {
        if let Some(f) = &mut ind.fitness {
            let raw = f.components[0];
            *f = if raw.is_finite() {
                fitness::rubinstein_from_raw(raw, popmax)
            } else {
                fitness::rubinstein_from_raw(raw, 1.0)
            };
        }
    }
}

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------

/// Fitter-first total order: fitness, then gate count, then lineage id.
pub fn better(a: &Individual, b: &Individual) -> Result<std::cmp::Ordering> {
    let fa = a.fitness.as_ref().ok_or(Error::UnevaluatedIndividual)?;
    let fb = b.fitness.as_ref().ok_or(Error::UnevaluatedIndividual)?;
    Ok(fitness::compare(fa, fb)?
        .then_with(|| a.program.gate_count().cmp(&b.program.gate_count()))
        .then_with(|| a.lineage.cmp(&b.lineage)))
}

/// Population indices sorted fitter-first by [`better`].
fn selection_order(pop: &[Individual]) -> Result<Vec<usize>> {
    for ind in pop {
        if ind.fitness.is_none() {
            return Err(Error::UnevaluatedIndividual);
        }
    }
    // A run holds one scheme, so pairwise comparison cannot mismatch.
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.sort_by(|&i, &j| {
        better(&pop[i], &pop[j]).expect("uniform scheme within a population")
    });
    Ok(order)
}

fn selection_weights(pop: &[Individual]) -> Result<Vec<f64>> {
    pop.iter()
        .map(|ind| {
            let f = ind.fitness.as_ref().ok_or(Error::UnevaluatedIndividual)?;
            Ok(1.0 - f.selection_scalar()?)
        })
        .collect()
}

fn roulette_index<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        // Every individual sits at the worst scalar; fall back to uniform.
        log::warn!("selection wheel is empty (all fitness 1); falling back to uniform");
        return rng.gen_range(0..weights.len());
    }
    let u = rng.gen::<f64>() * total;
    let mut cumulative = 0.0;
    for (i, w) in weights.iter().enumerate() {
        cumulative += w;
        if u < cumulative {
            return i;
        }
    }
    weights.len() - 1
}

/// Roulette-wheel selection with probability `(1 - f_i) / sum(1 - f_j)`.
pub fn select_fitness_proportional<'a, R: Rng>(
    pop: &'a [Individual],
    rng: &mut R,
) -> Result<&'a Individual> {
    let weights = selection_weights(pop)?;
    Ok(&pop[roulette_index(&weights, rng)])
}

/// The best `count` individuals, fitter-first.
pub fn select_ranking(pop: &[Individual], count: usize) -> Result<Vec<&Individual>> {
    if count == 0 || count > pop.len() {
        return Err(Error::Config(format!(
            "ranking count {count} outside population of {}",
            pop.len()
        )));
    }
    let order = selection_order(pop)?;
    Ok(order.into_iter().take(count).map(|i| &pop[i]).collect())
}

fn tournament_indices<R: Rng>(
    pop: &[Individual],
    k: usize,
    rng: &mut R,
) -> Result<(usize, usize, Vec<usize>)> {
    if k == 0 || k > pop.len() {
        return Err(Error::Config(format!(
            "tournament size {k} outside population of {}",
            pop.len()
        )));
    }
    let picks = sample(rng, pop.len(), k).into_vec();
    let mut best = picks[0];
    let mut worst = picks[0];
    for &i in &picks[1..] {
        if better(&pop[i], &pop[best])? == std::cmp::Ordering::Less {
            best = i;
        }
        if better(&pop[i], &pop[worst])? == std::cmp::Ordering::Greater {
            worst = i;
        }
    }
    Ok((best, worst, picks))
}

/// Standard tournament: the best of `k` sampled without replacement.
pub fn select_tournament<'a, R: Rng>(
    pop: &'a [Individual],
    k: usize,
    rng: &mut R,
) -> Result<&'a Individual> {
    let (best, _, _) = tournament_indices(pop, k, rng)?;
    Ok(&pop[best])
}

/// Loser-exclusion tournament variant: everything but the worst of the `k`
/// sampled survives as a parent.
pub fn select_tournament_survivors<'a, R: Rng>(
    pop: &'a [Individual],
    k: usize,
    rng: &mut R,
) -> Result<Vec<&'a Individual>> {
    if k < 2 {
        return Err(Error::Config(
            "excluding losers needs a tournament of at least 2".to_string(),
        ));
    }
    let (_, worst, picks) = tournament_indices(pop, k, rng)?;
    Ok(picks
        .into_iter()
        .filter(|i| *i != worst)
        .map(|i| &pop[i])
        .collect())
}

fn sus_pointer_walk<R: Rng>(weights: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    if count == 0 {
        return Vec::new();
    }
    let total: f64 = weights.iter().sum();
    // Equal-weight wheel keeps the equally-spaced-pointer behavior when
    // every individual sits at the worst scalar.
    let fallback = if total <= 0.0 {
        log::warn!("selection wheel is empty (all fitness 1); using equal slots");
        Some(vec![1.0; weights.len()])
    } else {
        None
    };
    let weights = fallback.as_deref().unwrap_or(weights);
    let total = if fallback.is_some() {
        weights.len() as f64
    } else {
        total
    };
    let step = total / count as f64;
    let offset = rng.gen::<f64>() * step;
    let mut out = Vec::with_capacity(count);
    let mut cumulative = weights[0];
    let mut i = 0;
    for k in 0..count {
        let pointer = offset + k as f64 * step;
        while pointer >= cumulative && i + 1 < weights.len() {
            i += 1;
            cumulative += weights[i];
        }
        out.push(i);
    }
    out
}

fn sus_indices<R: Rng>(pop: &[Individual], count: usize, rng: &mut R) -> Result<Vec<usize>> {
    let weights = selection_weights(pop)?;
    Ok(sus_pointer_walk(&weights, count, rng))
}

/// Stochastic universal sampling: `count` picks from equally spaced
/// pointers over the `1 - f` wheel with a single random offset.
pub fn select_sus<'a, R: Rng>(
    pop: &'a [Individual],
    count: usize,
    rng: &mut R,
) -> Result<Vec<&'a Individual>> {
    Ok(sus_indices(pop, count, rng)?
        .into_iter()
        .map(|i| &pop[i])
        .collect())
}

// ---------------------------------------------------------------------------
// Variation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
enum GateOp {
    Replace,
    Operands,
    Param,
    Insert,
    Delete,
}

fn mutate_gate_list<R: Rng>(
    gates: &mut Vec<GateApplication>,
    ctx: &VariationCtx,
    total_gates: usize,
    rng: &mut R,
) {
    let mut ops = Vec::new();
    if !gates.is_empty() {
        ops.push(GateOp::Replace);
        ops.push(GateOp::Operands);
        if gates.iter().any(|g| !g.params.is_empty()) {
            ops.push(GateOp::Param);
        }
        if gates.len() > 1 {
            ops.push(GateOp::Delete);
        }
    }
    if total_gates < ctx.max_gates {
        ops.push(GateOp::Insert);
    }
    if ops.is_empty() {
        return;
    }
    match ops[rng.gen_range(0..ops.len())] {
        GateOp::Replace => {
            let i = rng.gen_range(0..gates.len());
            gates[i] = random_gate(ctx, rng);
        }
        GateOp::Operands => {
            let i = rng.gen_range(0..gates.len());
            let arity = ctx.arity_of(gates[i].kind);
            gates[i].qubits = random_operands(ctx, arity, rng);
        }
        GateOp::Param => {
            let holders: Vec<usize> = gates
                .iter()
                .enumerate()
                .filter(|(_, g)| !g.params.is_empty())
                .map(|(i, _)| i)
                .collect();
            let i = holders[rng.gen_range(0..holders.len())];
            gates[i].params = random_params(gates[i].kind, rng);
        }
        GateOp::Insert => {
            let i = rng.gen_range(0..=gates.len());
            gates.insert(i, random_gate(ctx, rng));
        }
        GateOp::Delete => {
            let i = rng.gen_range(0..gates.len());
            gates.remove(i);
        }
    }
}

fn mutate_tree<R: Rng>(p: &mut TreeProgram, ctx: &VariationCtx, rng: &mut R) {
    let count = p.root.node_count();
    let idx = rng.gen_range(0..count);
    let node = p.root.get_node(idx).expect("index within node count").clone();
    if rng.gen_bool(0.5) {
        // Point replacement: keep the shape, redraw the node.
        let new_node = match node {
            TreeNode::Leaf { .. } => TreeNode::Leaf {
                qubit: rng.gen_range(0..ctx.num_qubits),
            },
            TreeNode::Gate { params: _, children, kind } => {
                let same_arity: Vec<GateKind> = ctx
                    .gate_set
                    .iter()
                    .copied()
                    .filter(|k| ctx.arity_of(*k) == children.len())
                    .collect();
                let new_kind = if same_arity.is_empty() {
                    kind
                } else {
                    same_arity[rng.gen_range(0..same_arity.len())]
                };
                TreeNode::Gate {
                    kind: new_kind,
                    params: random_params(new_kind, rng),
                    children,
                }
            }
        };
        p.root.replace_node(idx, new_node);
    } else {
        // Regrow: replace the subtree with a small fresh one that respects
        // the gate cap.
        let removed = node.gate_count();
        let room = (ctx.max_gates + removed).saturating_sub(p.gate_count());
        let mut budget = room.min(3);
        let new_node = random_tree_node(ctx, &mut budget, rng);
        p.root.replace_node(idx, new_node);
    }
}

fn mutate_linear_tree<R: Rng>(p: &mut LinearTreeProgram, ctx: &VariationCtx, rng: &mut R) {
    /// Branch nodes are capped so mutation cannot grow unbounded trees.
    const MAX_LT_NODES: usize = 9;
    let total_gates = p.gate_count();
    let count = p.root.node_count();
    let idx = rng.gen_range(0..count);
    let num_qubits = p.num_qubits;
    let node = p.root.get_node_mut(idx).expect("index within node count");

    #[derive(Clone, Copy, PartialEq)]
    enum LtOp {
        Gates,
        AddBranch,
        RemoveBranch,
    }
    let mut ops = vec![LtOp::Gates];
    if node.branch.is_none() && count + 2 <= MAX_LT_NODES {
        ops.push(LtOp::AddBranch);
    }
    if node.branch.is_some() {
        ops.push(LtOp::RemoveBranch);
    }
    match ops[rng.gen_range(0..ops.len())] {
        LtOp::Gates => mutate_gate_list(&mut node.segment, ctx, total_gates, rng),
        LtOp::AddBranch => {
            node.branch = Some(MeasureBranchPoint {
                qubit: rng.gen_range(0..num_qubits),
                zero: Box::new(LinearTreeNode::leaf(vec![])),
                one: Box::new(LinearTreeNode::leaf(vec![])),
            });
        }
        LtOp::RemoveBranch => {
            node.branch = None;
        }
    }
}

/// With probability `p_mutation`, applies one random structural edit to the
/// program (uniform over applicable operator/site pairs) and clears the
/// fitness. The result is always structurally valid and within the gate
/// cap.
pub fn mutate<R: Rng>(ind: &Individual, ctx: &VariationCtx, rng: &mut R) -> Individual {
    let mut out = ind.clone();
    if mutate_in_place(&mut out.program, ctx, rng) {
        out.fitness = None;
    }
    out
}

fn mutate_in_place<R: Rng>(
    program: &mut QuantumProgram,
    ctx: &VariationCtx,
    rng: &mut R,
) -> bool {
    if ctx.p_mutation <= 0.0 || !rng.gen_bool(ctx.p_mutation) {
        return false;
    }
    match program {
        QuantumProgram::Linear(p) => {
            let total = p.gates.len();
            mutate_gate_list(&mut p.gates, ctx, total, rng);
        }
        QuantumProgram::Tree(p) => mutate_tree(p, ctx, rng),
        QuantumProgram::LinearTree(p) => mutate_linear_tree(p, ctx, rng),
    }
    true
}

/// Recombines two parent programs. Linear structures use the configured
/// fixed or variable cut mode; trees and linear-trees swap uniformly chosen
/// subtrees, retrying a few times when the child would breach the gate cap
/// and falling back to a copy of the first parent.
pub fn crossover_programs<R: Rng>(
    a: &QuantumProgram,
    b: &QuantumProgram,
    ctx: &VariationCtx,
    rng: &mut R,
) -> Result<QuantumProgram> {
    const SUBTREE_RETRIES: usize = 3;
    match (a, b) {
        (QuantumProgram::Linear(pa), QuantumProgram::Linear(pb)) => {
            let gates = match ctx.crossover {
                CrossoverKind::Fixed => {
                    let c = rng.gen_range(0..=pa.gates.len().min(pb.gates.len()));
                    let mut gates: Vec<GateApplication> = pa.gates[..c].to_vec();
                    gates.extend_from_slice(&pb.gates[c..]);
                    gates
                }
                CrossoverKind::Variable => {
                    let ca = rng.gen_range(0..=pa.gates.len());
                    let cb = rng.gen_range(0..=pb.gates.len());
                    let mut gates: Vec<GateApplication> = pa.gates[..ca].to_vec();
                    gates.extend_from_slice(&pb.gates[cb..]);
                    gates.truncate(ctx.max_gates);
                    gates
                }
            };
            Ok(QuantumProgram::Linear(LinearProgram::new(pa.num_qubits, gates)))
        }
        (QuantumProgram::Tree(pa), QuantumProgram::Tree(pb)) => {
            for _ in 0..SUBTREE_RETRIES {
                let mut child = pa.clone();
                let target = rng.gen_range(0..child.root.node_count());
                let source_idx = rng.gen_range(0..pb.root.node_count());
                let subtree = pb
                    .root
                    .get_node(source_idx)
                    .expect("index within node count")
                    .clone();
                child.root.replace_node(target, subtree);
                if child.gate_count() <= ctx.max_gates {
                    return Ok(QuantumProgram::Tree(child));
                }
            }
            Ok(QuantumProgram::Tree(pa.clone()))
        }
        (QuantumProgram::LinearTree(pa), QuantumProgram::LinearTree(pb)) => {
            for _ in 0..SUBTREE_RETRIES {
                let mut child = pa.clone();
                let target = rng.gen_range(0..child.root.node_count());
                let source_idx = rng.gen_range(0..pb.root.node_count());
                let subtree = pb
                    .root
                    .get_node(source_idx)
                    .expect("index within node count")
                    .clone();
                *child
                    .root
                    .get_node_mut(target)
                    .expect("index within node count") = subtree;
                if child.gate_count() <= ctx.max_gates {
                    return Ok(QuantumProgram::LinearTree(child));
                }
            }
            Ok(QuantumProgram::LinearTree(pa.clone()))
        }
        _ => Err(Error::StructureMismatch(
            a.structure_name().to_string(),
            b.structure_name().to_string(),
        )),
    }
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Builds the starting population: programs from the seed file first (when
/// configured), padded to size with randoms of the configured length range.
pub fn init_population<R: Rng>(
    cfg: &EvolutionConfig,
    spec: &ProblemSpec,
    rng: &mut R,
    lineage: &mut u64,
) -> Result<Vec<Individual>> {
    let ctx = VariationCtx::new(cfg, spec);
    let mut pop = Vec::with_capacity(cfg.population_size);
    if let Some(path) = &cfg.init.seed_file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::SeedFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let programs: Vec<QuantumProgram> =
            serde_json::from_str(&text).map_err(|e| Error::SeedFile {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        for p in programs.into_iter().take(cfg.population_size) {
            let structure_ok = matches!(
                (&p, cfg.structure),
                (QuantumProgram::Linear(_), StructureKind::Linear)
                    | (QuantumProgram::Tree(_), StructureKind::Tree)
                    | (QuantumProgram::LinearTree(_), StructureKind::LinearTree)
            );
            if !structure_ok || p.num_qubits() != spec.num_qubits {
                return Err(Error::SeedFile {
                    path: path.display().to_string(),
                    message: format!(
                        "seed program is a {}-qubit {}, expected a {}-qubit {:?}",
                        p.num_qubits(),
                        p.structure_name(),
                        spec.num_qubits,
                        cfg.structure
                    ),
                });
            }
            p.validate(spec.oracle_input_bits(), cfg.problem.adjacent_only)
                .map_err(|e| Error::SeedFile {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
            *lineage += 1;
            pop.push(Individual {
                program: p,
                fitness: None,
                lineage: *lineage,
            });
        }
    }
    while pop.len() < cfg.population_size {
        let length = rng.gen_range(cfg.init.min_length..=cfg.init.max_length);
        *lineage += 1;
        pop.push(Individual {
            program: random_program(&ctx, length, rng),
            fitness: None,
            lineage: *lineage,
        });
    }
    Ok(pop)
}

// ---------------------------------------------------------------------------
// The run loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    /// Components of the generation's best individual.
    pub best_components: Vec<f64>,
    /// Components of the rank-median individual.
    pub median_components: Vec<f64>,
    pub best_gate_count: usize,
    pub mean_gate_count: f64,
    /// Cumulative fitness evaluations up to and including this row.
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    TargetReached,
    BudgetExhausted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BestReport {
    pub program: QuantumProgram,
    pub program_text: String,
    pub fitness: FitnessValue,
    pub gate_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config: EvolutionConfig,
    pub seed: u64,
    pub generations: Vec<GenerationStats>,
    pub best: BestReport,
    pub terminated: TerminationReason,
    /// Set when the best individual solves every oracle case with at most
    /// one expected query: fewer evaluations than any classical procedure
    /// for these problems needs.
    pub better_than_classical: bool,
    pub total_evaluations: usize,
    pub wall_time_ms: u64,
}

fn stats_row(
    generation: usize,
    pop: &[Individual],
    evaluations: usize,
) -> Result<(GenerationStats, usize)> {
    let order = selection_order(pop)?;
    let best = &pop[order[0]];
    let median = &pop[order[order.len() / 2]];
    let mean_gate_count =
        pop.iter().map(|i| i.program.gate_count() as f64).sum::<f64>() / pop.len() as f64;
    let row = GenerationStats {
        generation,
        best_components: best.fitness.as_ref().expect("evaluated").components.clone(),
        median_components: median.fitness.as_ref().expect("evaluated").components.clone(),
        best_gate_count: best.program.gate_count(),
        mean_gate_count,
        evaluations,
    };
    Ok((row, order[0]))
}

fn target_met(best: &Individual, target: &Option<Vec<ComponentBound>>) -> Result<bool> {
    match target {
        None => Ok(false),
        Some(bounds) => best
            .fitness
            .as_ref()
            .ok_or(Error::UnevaluatedIndividual)?
            .meets(bounds),
    }
}

struct Breeder<'a> {
    cfg: &'a EvolutionConfig,
    sus_queue: VecDeque<usize>,
    /// Rank order and roulette weights are frozen per breeding cycle; the
    /// source population is immutable while a generation is bred.
    order_cache: Option<Vec<usize>>,
    weight_cache: Option<Vec<f64>>,
}

impl<'a> Breeder<'a> {
    fn new(cfg: &'a EvolutionConfig) -> Self {
        Breeder {
            cfg,
            sus_queue: VecDeque::new(),
            order_cache: None,
            weight_cache: None,
        }
    }

    /// Resets per-cycle caches. Must be called whenever the source
    /// population changes.
    fn begin_cycle(&mut self, pop: &[Individual]) -> Result<()> {
        self.sus_queue.clear();
        self.order_cache = match &self.cfg.selection {
            SelectionConfig::Ranking { .. } => Some(selection_order(pop)?),
            _ => None,
        };
        self.weight_cache = match &self.cfg.selection {
            SelectionConfig::FitnessProportional | SelectionConfig::Sus => {
                Some(selection_weights(pop)?)
            }
            _ => None,
        };
        Ok(())
    }

    /// Draws one parent index under the configured selection scheme.
    fn pick_parent<R: Rng>(&mut self, pop: &[Individual], rng: &mut R) -> Result<usize> {
        match &self.cfg.selection {
            SelectionConfig::FitnessProportional => {
                let weights = self.weight_cache.as_ref().expect("cycle begun");
                Ok(roulette_index(weights, rng))
            }
            SelectionConfig::Ranking { count } => {
                let order = self.order_cache.as_ref().expect("cycle begun");
                Ok(order[rng.gen_range(0..*count)])
            }
            SelectionConfig::Tournament { size, exclude_losers } => {
                let (best, worst, picks) = tournament_indices(pop, *size, rng)?;
                if *exclude_losers {
                    let survivors: Vec<usize> =
                        picks.into_iter().filter(|i| *i != worst).collect();
                    Ok(survivors[rng.gen_range(0..survivors.len())])
                } else {
                    Ok(best)
                }
            }
            SelectionConfig::Sus => {
                if self.sus_queue.is_empty() {
                    let weights = self.weight_cache.as_ref().expect("cycle begun");
                    self.sus_queue = sus_pointer_walk(weights, pop.len(), rng).into();
                }
                Ok(self.sus_queue.pop_front().expect("refilled above"))
            }
        }
    }

    /// Produces one child: crossover with probability `p_crossover`,
    /// reproduction otherwise, then the mutation coin. Unchanged clones
    /// keep their parent's fitness.
    fn make_child<R: Rng>(
        &mut self,
        pop: &[Individual],
        ctx: &VariationCtx,
        rng: &mut R,
        lineage: &mut u64,
    ) -> Result<Individual> {
        let pa = self.pick_parent(pop, rng)?;
        let (mut program, mut changed) = if rng.gen_bool(self.cfg.p_crossover) {
            let pb = self.pick_parent(pop, rng)?;
            (
                crossover_programs(&pop[pa].program, &pop[pb].program, ctx, rng)?,
                true,
            )
        } else {
            (pop[pa].program.clone(), false)
        };
        changed |= mutate_in_place(&mut program, ctx, rng);
        *lineage += 1;
        Ok(Individual {
            fitness: if changed {
                None
            } else {
                pop[pa].fitness.clone()
            },
            program,
            lineage: *lineage,
        })
    }
}

/// Runs the configured evolution to completion. Deterministic for a given
/// config: the single seed drives every random decision on the coordinator
/// and evaluation is exact.
pub fn run(cfg: &EvolutionConfig) -> Result<RunReport> {
    cfg.validate()?;
    let spec = cfg.problem.expand()?;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut lineage: u64 = 0;
    let mut pop = init_population(cfg, &spec, &mut rng, &mut lineage)?;
    let eval_ctx = EvalContext {
        spec: &spec,
        fitness: &cfg.fitness,
        opts: EvalOptions {
            max_branches: cfg.max_branches,
        },
    };
    let vctx = VariationCtx::new(cfg, &spec);
    let mut breeder = Breeder::new(cfg);

    let mut rows: Vec<GenerationStats> = Vec::new();
    let mut total_evaluations = 0usize;
    let mut terminated = TerminationReason::BudgetExhausted;
    let mut best_so_far: Option<Individual> = None;

    let note_generation =
        |pop: &mut Vec<Individual>,
         generation: usize,
         total_evaluations: usize,
         rows: &mut Vec<GenerationStats>,
         best_so_far: &mut Option<Individual>|
         -> Result<bool> {
            restandardize(pop, cfg.fitness.scheme);
            let (row, best_idx) = stats_row(generation, pop, total_evaluations)?;
            rows.push(row);
            let generation_best = &pop[best_idx];
            let improved = match best_so_far {
                None => true,
                Some(current) => better(generation_best, current)? == std::cmp::Ordering::Less,
            };
            if improved {
                *best_so_far = Some(generation_best.clone());
            }
            target_met(best_so_far.as_ref().expect("set above"), &cfg.target)
        };

    match cfg.run_mode {
        LoopKind::Generational => {
            for generation in 0..=cfg.max_generations {
                total_evaluations += evaluate_population(&mut pop, &eval_ctx);
                if note_generation(
                    &mut pop,
                    generation,
                    total_evaluations,
                    &mut rows,
                    &mut best_so_far,
                )? {
                    terminated = TerminationReason::TargetReached;
                    break;
                }
                if generation == cfg.max_generations {
                    break;
                }
                let order = selection_order(&pop)?;
                breeder.begin_cycle(&pop)?;
                let mut next: Vec<Individual> = order
                    .iter()
                    .take(cfg.elitism)
                    .map(|&i| pop[i].clone())
                    .collect();
                while next.len() < cfg.population_size {
                    next.push(breeder.make_child(&pop, &vctx, &mut rng, &mut lineage)?);
                }
                pop = next;
            }
        }
        LoopKind::SteadyState => {
            total_evaluations += evaluate_population(&mut pop, &eval_ctx);
            if note_generation(&mut pop, 0, total_evaluations, &mut rows, &mut best_so_far)? {
                terminated = TerminationReason::TargetReached;
            } else {
                let k = match cfg.selection {
                    SelectionConfig::Tournament { size, .. } => size,
                    _ => unreachable!("validated: steady state uses tournaments"),
                };
                'outer: for generation in 1..=cfg.max_generations {
                    for _ in 0..cfg.population_size {
                        // Tournament selection reads the live population;
                        // no caches to refresh (validation pins steady
                        // state to tournaments).
                        breeder.begin_cycle(&pop)?;
                        let (_, victim, _) = tournament_indices(&pop, k, &mut rng)?;
                        let mut child =
                            breeder.make_child(&pop, &vctx, &mut rng, &mut lineage)?;
                        if child.fitness.is_none() {
                            child.fitness = Some(evaluate_program(&child.program, &eval_ctx));
                            total_evaluations += 1;
                        }
                        pop[victim] = child;
                    }
                    if note_generation(
                        &mut pop,
                        generation,
                        total_evaluations,
                        &mut rows,
                        &mut best_so_far,
                    )? {
                        terminated = TerminationReason::TargetReached;
                        break 'outer;
                    }
                }
            }
        }
    }

    let best = best_so_far.expect("at least one generation row");
    let better_than_classical = flag_better_than_classical(&best, &eval_ctx)?;
    let fitness = best.fitness.clone().expect("best is evaluated");
    Ok(RunReport {
        config: cfg.clone(),
        seed: cfg.rng_seed,
        generations: rows,
        best: BestReport {
            program_text: program::render_text(&best.program),
            gate_count: best.program.gate_count(),
            program: best.program,
            fitness,
        },
        terminated,
        better_than_classical,
        total_evaluations,
        wall_time_ms: started.elapsed().as_millis() as u64,
    })
}

/// True when the best individual hits every oracle case and needs at most
/// one expected query per run.
fn flag_better_than_classical(best: &Individual, ctx: &EvalContext) -> Result<bool> {
    if ctx.spec.oracle_input_bits().is_none() {
        return Ok(false);
    }
    let mut queries = 0.0;
    for case in &ctx.spec.cases {
        let result = match best
            .program
            .eval(&case.initial_state, case.oracle.as_ref(), &ctx.opts)
        {
            Ok(r) => r,
            Err(_) => return Ok(false),
        };
        queries += result.expected_oracle_calls;
        let error = problems::case_error(case, &result, ctx.spec.answer_qubit)?;
        if error > fitness::HIT_ERROR_THRESHOLD {
            return Ok(false);
        }
    }
    Ok(queries / ctx.spec.cases.len() as f64 <= 1.0)
}
