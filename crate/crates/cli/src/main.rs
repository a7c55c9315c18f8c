//! `evoq`: simulate quantum programs, run evolution experiments from
//! config files, and verify the built-in reference algorithms.
//!
//! Exit codes: 0 on success (for `evolve`: the fitness target was
//! reached), 1 on usage or configuration errors, 2 when an evolution run
//! exhausted its generation budget without reaching its target.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use evoq_core::evolve::{run, EvolutionConfig, RunReport, TerminationReason};
use evoq_core::gates::{is_unitary, standard_matrix, ALL_KINDS};
use evoq_core::problems::{
    grover_marked_probability, grover_reference, grover_success_probability, verify_teleportation,
    Oracle,
};
use evoq_core::program::{
    parse_text, EvalOptions, EvaluationResult, QuantumProgram, DEFAULT_MAX_BRANCHES,
};
use evoq_core::qstate::StateVector;

const EXIT_BUDGET_EXHAUSTED: u8 = 2;

#[derive(Parser)]
#[command(
    name = "evoq",
    version,
    about = "Quantum program simulation and evolution workbench",
    after_help = "The EVOQ_MAX_QUBITS environment variable overrides the register size cap \
                  (default 16)."
)]
struct Cli {
    /// Worker threads for population evaluation (default: one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed override: replaces the config seed in `evolve` and seeds the
    /// random inputs of `simulate` and `verify`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; for `evolve` this is the JSON report path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a program file and print its measurement branch table.
    Simulate(SimulateArgs),
    /// Run an evolution experiment described by a JSON config file.
    Evolve(EvolveArgs),
    /// Check a reference suite against its analytic expectations.
    Verify(VerifyArgs),
}

fn main() -> ExitCode {
    // Die quietly on SIGPIPE like any pipeline member instead of panicking
    // mid-print when a consumer such as `head` closes early.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::FAILURE;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: could not size the worker pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    let outcome = match &cli.command {
        Command::Simulate(args) => cmd_simulate(&cli, args),
        Command::Evolve(args) => cmd_evolve(&cli, args),
        Command::Verify(args) => cmd_verify(&cli, args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SimulateArgs {
    /// Program file, JSON (.json) or circuit text notation.
    #[arg(required_unless_present = "teleport_reference")]
    program: Option<PathBuf>,
    /// Initial basis state as a bit string, for example 010. Defaults to
    /// all zeros.
    #[arg(long)]
    init: Option<String>,
    /// Number of qubits for text-notation programs (default: inferred
    /// from the largest operand).
    #[arg(long)]
    qubits: Option<usize>,
    /// Oracle truth table as a bit string of length 2^m, for example 01
    /// for the one-bit identity function.
    #[arg(long)]
    oracle: Option<String>,
    /// Also print per-basis amplitudes for every branch.
    #[arg(long)]
    amplitudes: bool,
    /// Teleport a random message through the built-in reference circuit
    /// instead of evaluating a program file.
    #[arg(long)]
    teleport_reference: bool,
    /// Cap on simultaneously tracked measurement branches.
    #[arg(long, default_value_t = DEFAULT_MAX_BRANCHES)]
    max_branches: usize,
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> anyhow::Result<ExitCode> {
    if args.teleport_reference {
        return simulate_teleport_reference(cli.seed);
    }
    let path = args.program.as_ref().expect("clap enforces the argument");
    let program = load_program(path, args.qubits)?;
    let n = program.num_qubits();

    let init = match &args.init {
        None => StateVector::zero_state(n)?,
        Some(bits) => {
            if bits.len() != n || !bits.chars().all(|c| c == '0' || c == '1') {
                bail!("--init must be a {n}-character bit string, got {bits:?}");
            }
            let index = usize::from_str_radix(bits, 2).expect("validated digits");
            StateVector::basis_state(n, index)?
        }
    };
    let oracle = args
        .oracle
        .as_deref()
        .map(parse_oracle_bits)
        .transpose()?;

    let opts = EvalOptions {
        max_branches: args.max_branches,
    };
    let result = program.eval(&init, oracle.as_ref(), &opts)?;
    print_branch_table(&program, &result, args.amplitudes);

    if let Some(out) = &cli.out {
        let json = simulate_report_json(&program, &result, args.amplitudes)?;
        write_atomic(out, &json)?;
        println!("wrote {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn load_program(path: &Path, qubits: Option<usize>) -> anyhow::Result<QuantumProgram> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read program file {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        let program: QuantumProgram = serde_json::from_str(&text)
            .with_context(|| format!("invalid program JSON in {}", path.display()))?;
        Ok(program)
    } else {
        parse_text(&text, qubits)
            .with_context(|| format!("cannot parse program {}", path.display()))
    }
}

fn parse_oracle_bits(bits: &str) -> anyhow::Result<Oracle> {
    if bits.is_empty() || !bits.len().is_power_of_two() || bits.len() < 2 {
        bail!("--oracle needs a truth table of length 2^m, got {} bits", bits.len());
    }
    let table: Vec<bool> = bits
        .chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(anyhow!("--oracle accepts only 0 and 1, got {other:?}")),
        })
        .collect::<anyhow::Result<_>>()?;
    let input_bits = table.len().trailing_zeros() as usize;
    Ok(Oracle::new(input_bits, table)?)
}

fn print_branch_table(program: &QuantumProgram, result: &EvaluationResult, amplitudes: bool) {
    println!(
        "program: {} qubits, {} gates",
        program.num_qubits(),
        result.gate_count
    );
    for branch in &result.branches {
        let observed = if branch.observed.is_empty() {
            "-".to_string()
        } else {
            branch.observed.iter().map(u8::to_string).collect()
        };
        println!(
            "branch {observed}: probability {:.6}, oracle calls {}",
            branch.probability, branch.oracle_calls
        );
        let n = branch.state.num_qubits();
        for (index, amp) in branch.state.amplitudes().iter().enumerate() {
            let mass = amp.norm_sqr();
            if mass < 1e-12 && !amplitudes {
                continue;
            }
            let label = format!("{index:0width$b}", width = n);
            if amplitudes {
                println!("  |{label}>  mass {mass:.6}  amplitude {:.4}{:+.4}i", amp.re, amp.im);
            } else {
                println!("  |{label}>  mass {mass:.6}");
            }
        }
    }
    println!("expected oracle calls: {}", result.expected_oracle_calls);
}

fn simulate_report_json(
    program: &QuantumProgram,
    result: &EvaluationResult,
    amplitudes: bool,
) -> anyhow::Result<String> {
    let branches: Vec<serde_json::Value> = result
        .branches
        .iter()
        .map(|b| {
            let mut entry = serde_json::json!({
                "observed": b.observed,
                "probability": b.probability,
                "oracle_calls": b.oracle_calls,
                "masses": b.state.amplitudes().iter().map(|a| a.norm_sqr()).collect::<Vec<_>>(),
            });
            if amplitudes {
                entry["amplitudes"] = serde_json::json!(b
                    .state
                    .amplitudes()
                    .iter()
                    .map(|a| [a.re, a.im])
                    .collect::<Vec<_>>());
            }
            entry
        })
        .collect();
    let report = serde_json::json!({
        "num_qubits": program.num_qubits(),
        "gate_count": result.gate_count,
        "expected_oracle_calls": result.expected_oracle_calls,
        "branches": branches,
    });
    Ok(serde_json::to_string_pretty(&report)?)
}

fn simulate_teleport_reference(seed: Option<u64>) -> anyhow::Result<ExitCode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
    let message = random_qubit(&mut rng);
    println!(
        "message: {:.4}{:+.4}i |0> {:+.4}{:+.4}i |1>",
        message.amplitudes()[0].re,
        message.amplitudes()[0].im,
        message.amplitudes()[1].re,
        message.amplitudes()[1].im
    );
    let mut ok = true;
    for branch in verify_teleportation(&message)? {
        let observed: String = branch.observed.iter().map(u8::to_string).collect();
        let good = (branch.fidelity - 1.0).abs() < 1e-10;
        ok &= good;
        println!(
            "branch {observed}: probability {:.6}, post-correction fidelity {:.12} {}",
            branch.probability,
            branch.fidelity,
            if good { "PASS" } else { "FAIL" }
        );
    }
    if ok {
        println!("teleportation: PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("teleportation: FAIL");
        Ok(ExitCode::FAILURE)
    }
}

fn random_qubit<R: rand::Rng>(rng: &mut R) -> StateVector {
    let raw = [
        num_complex::Complex64::new(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0),
        num_complex::Complex64::new(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0),
    ];
    let norm = (raw[0].norm_sqr() + raw[1].norm_sqr()).sqrt();
    StateVector::from_amplitudes(vec![raw[0] / norm, raw[1] / norm])
        .expect("normalized two-amplitude state")
}

// ---------------------------------------------------------------------------
// evolve
// ---------------------------------------------------------------------------

#[derive(Args)]
struct EvolveArgs {
    /// Experiment config file (JSON).
    config: PathBuf,
}

fn default_repetitions() -> usize {
    1
}

/// An experiment: the full evolution config plus artifact plumbing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentConfig {
    evolution: EvolutionConfig,
    /// JSON report destination; `--out` overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    report_path: Option<PathBuf>,
    /// CSV fitness-curve destination (default: report path with a .csv
    /// extension).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    csv_path: Option<PathBuf>,
    /// Number of seeded repetitions; run i uses base seed + i.
    #[serde(default = "default_repetitions")]
    repetitions: usize,
}

/// The written report: every run in full plus the aggregate success rate.
#[derive(Debug, Serialize, Deserialize)]
struct ExperimentReport {
    repetitions: usize,
    base_seed: u64,
    /// Fraction of repetitions that reached the fitness target.
    success_rate: f64,
    runs: Vec<RunReport>,
}

fn cmd_evolve(cli: &Cli, args: &EvolveArgs) -> anyhow::Result<ExitCode> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("cannot read config {}", args.config.display()))?;
    let mut experiment: ExperimentConfig = serde_json::from_str(&text)
        .with_context(|| format!("invalid config {}", args.config.display()))?;
    if experiment.repetitions == 0 {
        bail!("repetitions must be at least 1");
    }
    if let Some(seed) = cli.seed {
        experiment.evolution.rng_seed = seed;
    }
    experiment
        .evolution
        .validate()
        .context("invalid evolution config")?;

    let base_seed = experiment.evolution.rng_seed;
    let mut runs = Vec::with_capacity(experiment.repetitions);
    let mut successes = 0usize;
    for repetition in 0..experiment.repetitions {
        let mut cfg = experiment.evolution.clone();
        cfg.rng_seed = base_seed.wrapping_add(repetition as u64);
        let report = run(&cfg)?;
        let reached = report.terminated == TerminationReason::TargetReached;
        if reached {
            successes += 1;
        }
        println!(
            "run {repetition} (seed {}): {} generations, {} evaluations, best {:?}, {}",
            cfg.rng_seed,
            report.generations.len().saturating_sub(1),
            report.total_evaluations,
            report.best.fitness.components,
            if reached { "target reached" } else { "budget exhausted" }
        );
        runs.push(report);
    }
    let success_rate = successes as f64 / experiment.repetitions as f64;
    println!(
        "success rate: {successes}/{} ({success_rate:.2})",
        experiment.repetitions
    );

    let report_path = cli
        .out
        .clone()
        .or_else(|| experiment.report_path.clone())
        .unwrap_or_else(|| PathBuf::from("evoq-report.json"));
    let csv_path = experiment
        .csv_path
        .clone()
        .unwrap_or_else(|| report_path.with_extension("csv"));

    let report = ExperimentReport {
        repetitions: experiment.repetitions,
        base_seed,
        success_rate,
        runs,
    };
    write_atomic(&report_path, &serde_json::to_string_pretty(&report)?)?;
    write_atomic(&csv_path, &fitness_curve_csv(&report))?;
    println!("wrote {} and {}", report_path.display(), csv_path.display());

    if successes > 0 {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(EXIT_BUDGET_EXHAUSTED))
    }
}

/// One CSV row per generation per run: the fitness curve of the whole
/// experiment.
fn fitness_curve_csv(report: &ExperimentReport) -> String {
    let names: &[&str] = report
        .runs
        .first()
        .map(|r| r.config.fitness.scheme.component_names())
        .unwrap_or(&[]);
    let mut out = String::from("run,seed,generation,evaluations,best_gates,mean_gates");
    for name in names {
        out.push_str(&format!(",best_{name}"));
    }
    for name in names {
        out.push_str(&format!(",median_{name}"));
    }
    out.push('\n');
    for (index, run) in report.runs.iter().enumerate() {
        for row in &run.generations {
            out.push_str(&format!(
                "{index},{},{},{},{},{}",
                run.seed, row.generation, row.evaluations, row.best_gate_count, row.mean_gate_count
            ));
            for v in &row.best_components {
                out.push_str(&format!(",{v}"));
            }
            for v in &row.median_components {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    out
}

/// Writes via a same-directory temp file and rename so readers never see
/// a partial file.
fn write_atomic(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| anyhow!("output path {} has no file name", path.display()))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    fs::write(&tmp, contents)
        .with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path)
        .with_context(|| format!("cannot move report into place at {}", path.display()))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[derive(Args)]
struct VerifyArgs {
    /// Which reference suite to check.
    #[arg(value_enum)]
    suite: VerifySuite,
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifySuite {
    /// Teleport 100 random messages; every branch must reach fidelity 1.
    Teleport,
    /// Sweep the search reference against its closed-form success law.
    Grover,
    /// Check every matrix-backed gate for unitarity.
    Gates,
}

fn cmd_verify(cli: &Cli, args: &VerifyArgs) -> anyhow::Result<ExitCode> {
    let ok = match args.suite {
        VerifySuite::Teleport => verify_teleport_suite(cli.seed)?,
        VerifySuite::Grover => verify_grover_suite()?,
        VerifySuite::Gates => verify_gates_suite()?,
    };
    if ok {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::FAILURE)
    }
}

fn verify_teleport_suite(seed: Option<u64>) -> anyhow::Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let message = random_qubit(&mut rng);
        for branch in verify_teleportation(&message)? {
            worst = worst.max((branch.fidelity - 1.0).abs());
        }
    }
    let ok = worst < 1e-10;
    println!(
        "teleport: 100 random messages, 400 branches, worst |fidelity - 1| = {worst:.2e} ... {}",
        if ok { "PASS" } else { "FAIL" }
    );
    Ok(ok)
}

fn verify_grover_suite() -> anyhow::Result<bool> {
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for m in 1..=5usize {
        for k in 1..=10usize {
            let marked = (1 << m) - 1;
            let closed = grover_success_probability(m, k);
            let sim =
                grover_marked_probability(&grover_reference(m, marked, k)?, m, marked)?;
            let diff = (sim - closed).abs();
            worst = worst.max(diff);
            if diff >= 1e-9 {
                println!("grover m={m} k={k}: simulated {sim} vs closed form {closed} ... FAIL");
                ok = false;
            }
        }
    }
    let p43 = grover_marked_probability(&grover_reference(4, 5, 3)?, 4, 5)?;
    let closed43 = grover_success_probability(4, 3);
    let special = (p43 - closed43).abs() < 1e-9;
    ok &= special;
    println!(
        "grover m=4 k=3: success probability {p43:.4} (closed form {closed43:.4}) ... {}",
        if special { "PASS" } else { "FAIL" }
    );
    println!(
        "grover sweep m<=5 k<=10: worst |simulated - closed| = {worst:.2e} ... {}",
        if ok { "PASS" } else { "FAIL" }
    );
    Ok(ok)
}

fn verify_gates_suite() -> anyhow::Result<bool> {
    let mut ok = true;
    let mut checked = 0;
    for kind in ALL_KINDS {
        if !kind.has_matrix() {
            continue;
        }
        if kind.param_count() == 0 {
            let m = standard_matrix(kind, &[])?;
            if !is_unitary(&m, 1e-12) {
                println!("{}: unitarity ... FAIL", kind.name());
                ok = false;
            }
            checked += 1;
        } else {
            for step in 0..16 {
                let theta = step as f64 * std::f64::consts::FRAC_PI_8;
                let m = standard_matrix(kind, &[theta])?;
                if !is_unitary(&m, 1e-12) {
                    println!("{}({step}pi/8): unitarity ... FAIL", kind.name());
                    ok = false;
                }
                checked += 1;
            }
        }
    }
    println!(
        "gates: {checked} matrices unitary at 1e-12 ... {}",
        if ok { "PASS" } else { "FAIL" }
    );
    Ok(ok)
}
