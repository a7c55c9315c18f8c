//! End-to-end tests that drive the compiled `evoq` binary through its
//! three subcommands and check exit codes, console output and report
//! artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};

use evoq_core::evolve::EvolutionConfig;
use evoq_core::problems::{grover_reference, teleport_reference};
use evoq_core::program::{parse_text, render_text, QuantumProgram};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn evoq(dir: &Path, args: &[&str]) -> Run {
    evoq_with_env(dir, args, &[])
}

fn evoq_with_env(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_evoq"));
    cmd.args(args).current_dir(dir);
    for (key, value) in env {
        cmd.env(key, value);
    }
    let out = cmd.output().expect("the binary should spawn");
    Run {
        code: out.status.code().expect("the binary should not be killed"),
        stdout: String::from_utf8(out.stdout).expect("stdout should be UTF-8"),
        stderr: String::from_utf8(out.stderr).expect("stderr should be UTF-8"),
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, contents).expect("test fixtures should write");
    path
}

fn read_json(path: &Path) -> Value {
    let text = fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()));
    serde_json::from_str(&text)
        .unwrap_or_else(|e| panic!("{} is not valid JSON: {e}", path.display()))
}

/// A small Bell-state experiment that reliably reaches its target within a
/// couple of dozen generations.
fn bell_experiment(seed: u64, repetitions: usize, target_max: Option<f64>) -> Value {
    let mut evolution = json!({
        "rng_seed": seed,
        "population_size": 30,
        "max_generations": 40,
        "structure": "linear",
        "problem": { "name": "entanglement", "size": 2 },
        "fitness": { "scheme": "rubinstein" },
        "selection": { "method": "tournament", "size": 3 },
        "p_mutation": 0.7,
        "p_crossover": 0.6,
        "loop": "generational",
        "init": { "min_length": 1, "max_length": 3 },
        "max_program_length": 8
    });
    if let Some(max) = target_max {
        evolution["target"] = json!([{ "component": "raw_error", "max": max }]);
    }
    json!({ "evolution": evolution, "repetitions": repetitions })
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[test]
fn help_documents_the_register_cap_env_var() {
    let dir = tempfile::tempdir().unwrap();
    let r = evoq(dir.path(), &["--help"]);
    assert_eq!(r.code, 0);
    assert!(r.stdout.contains("EVOQ_MAX_QUBITS"), "help: {}", r.stdout);
}

#[test]
fn simulate_prints_amplitudes_for_text_programs() {
    let dir = tempfile::tempdir().unwrap();
    let program = write(dir.path(), "h.ql", "(HADAMARD 0)\n");
    let r = evoq(
        dir.path(),
        &["simulate", program.to_str().unwrap(), "--amplitudes"],
    );
    assert_eq!(r.code, 0, "stderr: {}", r.stderr);
    assert!(r.stdout.contains("program: 1 qubits, 1 gates"), "{}", r.stdout);
    assert!(
        r.stdout.contains("|0>  mass 0.500000  amplitude 0.7071+0.0000i"),
        "{}",
        r.stdout
    );
    assert!(
        r.stdout.contains("|1>  mass 0.500000  amplitude 0.7071+0.0000i"),
        "{}",
        r.stdout
    );
    assert!(r.stdout.contains("expected oracle calls: 0"), "{}", r.stdout);
}

#[test]
fn simulate_reports_parse_errors_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let program = write(dir.path(), "bad.ql", "(HADAMARD 0)\n(BOGUS 1)\n");
    let r = evoq(dir.path(), &["simulate", program.to_str().unwrap()]);
    assert_eq!(r.code, 1, "stdout: {}", r.stdout);
    assert!(r.stderr.contains("line 2"), "stderr: {}", r.stderr);
    assert!(r.stderr.contains("BOGUS"), "stderr: {}", r.stderr);
}

#[test]
fn simulate_accepts_json_programs_and_prints_every_branch() {
    let dir = tempfile::tempdir().unwrap();
    let program = QuantumProgram::Linear(teleport_reference().program);
    let path = dir.path().join("teleport.json");
    fs::write(&path, serde_json::to_string(&program).unwrap()).unwrap();
    let r = evoq(dir.path(), &["simulate", path.to_str().unwrap()]);
    assert_eq!(r.code, 0, "stderr: {}", r.stderr);
    for bits in ["00", "01", "10", "11"] {
        let line = format!("branch {bits}: probability 0.250000");
        assert!(r.stdout.contains(&line), "missing {line:?} in {}", r.stdout);
    }
}

#[test]
fn simulate_counts_oracle_queries() {
    let dir = tempfile::tempdir().unwrap();
    let program = write(dir.path(), "query.ql", "(ORACLE 0 1)\n");
    let r = evoq(
        dir.path(),
        &["simulate", program.to_str().unwrap(), "--oracle", "01"],
    );
    assert_eq!(r.code, 0, "stderr: {}", r.stderr);
    assert!(r.stdout.contains("oracle calls 1"), "{}", r.stdout);
    assert!(r.stdout.contains("expected oracle calls: 1"), "{}", r.stdout);
}

#[test]
fn simulate_initial_state_treats_qubit_zero_as_leftmost() {
    let dir = tempfile::tempdir().unwrap();
    let program = write(dir.path(), "cnot.ql", "(CNOT 0 1)\n");
    let r = evoq(
        dir.path(),
        &["simulate", program.to_str().unwrap(), "--init", "10"],
    );
    assert_eq!(r.code, 0, "stderr: {}", r.stderr);
    assert!(r.stdout.contains("|11>  mass 1.000000"), "{}", r.stdout);
}

#[test]
fn register_cap_env_var_limits_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let program = write(dir.path(), "wide.ql", "(TOFFOLI 0 1 2)\n");
    let args = ["simulate", program.to_str().unwrap()];
    let blocked = evoq_with_env(dir.path(), &args, &[("EVOQ_MAX_QUBITS", "2")]);
    assert_eq!(blocked.code, 1, "stdout: {}", blocked.stdout);
    assert!(
        blocked.stderr.contains("register size 3 is out of range (1..=2)"),
        "stderr: {}",
        blocked.stderr
    );
    let allowed = evoq_with_env(dir.path(), &args, &[("EVOQ_MAX_QUBITS", "3")]);
    assert_eq!(allowed.code, 0, "stderr: {}", allowed.stderr);
}

#[test]
fn simulate_teleport_reference_reports_all_branches() {
    let dir = tempfile::tempdir().unwrap();
    let r = evoq(dir.path(), &["simulate", "--teleport-reference", "--seed", "11"]);
    assert_eq!(r.code, 0, "stderr: {}", r.stderr);
    assert_eq!(r.stdout.matches("PASS").count(), 5, "{}", r.stdout);
    assert!(r.stdout.contains("teleportation: PASS"), "{}", r.stdout);
}

#[cfg(unix)]
#[test]
fn broken_stdout_pipes_kill_the_process_quietly() {
    use std::os::unix::process::ExitStatusExt;
    use std::process::Stdio;
    let dir = tempfile::tempdir().unwrap();
    // 12 uniform qubits print 4096 basis lines, far past the pipe buffer.
    let text: String = (0..12).map(|q| format!("(HADAMARD {q})\n")).collect();
    let program = write(dir.path(), "wide.ql", &text);
    let mut child = Command::new(env!("CARGO_BIN_EXE_evoq"))
        .args(["simulate", program.to_str().unwrap(), "--amplitudes"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    drop(child.stdout.take());
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.signal(), Some(13), "expected death by SIGPIPE");
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(!err.contains("panicked"), "stderr: {err}");
}

#[test]
fn simulate_writes_a_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let program = write(dir.path(), "h.ql", "(HADAMARD 0)\n");
    let r = evoq(
        dir.path(),
        &[
            "simulate",
            program.to_str().unwrap(),
            "--amplitudes",
            "--out",
            "sim.json",
        ],
    );
    assert_eq!(r.code, 0, "stderr: {}", r.stderr);
    let report = read_json(&dir.path().join("sim.json"));
    assert_eq!(report["num_qubits"], 1);
    assert_eq!(report["gate_count"], 1);
    let branches = report["branches"].as_array().unwrap();
    assert_eq!(branches.len(), 1);
    let masses = branches[0]["masses"].as_array().unwrap();
    let total: f64 = masses.iter().map(|m| m.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert_eq!(branches[0]["amplitudes"].as_array().unwrap().len(), 2);
}

// ---------------------------------------------------------------------------
// evolve
// ---------------------------------------------------------------------------

#[test]
fn evolve_reaches_target_and_writes_report_and_curve() {
    let dir = tempfile::tempdir().unwrap();
    let config = bell_experiment(7, 1, Some(1e-9));
    write(dir.path(), "config.json", &config.to_string());
    let r = evoq(dir.path(), &["evolve", "config.json", "--out", "report.json"]);
    assert_eq!(r.code, 0, "stdout: {}\nstderr: {}", r.stdout, r.stderr);
    assert!(r.stdout.contains("success rate: 1/1"), "{}", r.stdout);

    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["repetitions"], 1);
    assert_eq!(report["success_rate"], 1.0);
    let runs = report["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 1);
    assert_eq!(runs[0]["terminated"], "target-reached");
    let components = runs[0]["best"]["fitness"]["components"].as_array().unwrap();
    assert!(components[0].as_f64().unwrap() <= 1e-9, "raw error {components:?}");

    let text = runs[0]["best"]["program_text"].as_str().unwrap();
    parse_text(text, Some(2)).expect("the reported champion should parse back");

    let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some(
            "run,seed,generation,evaluations,best_gates,mean_gates,\
             best_raw_error,best_standardized,median_raw_error,median_standardized"
        )
    );
    let rows = lines.count();
    assert_eq!(rows, runs[0]["generations"].as_array().unwrap().len());
}

#[test]
fn evolve_repetitions_use_derived_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let config = bell_experiment(100, 3, Some(1e-9));
    write(dir.path(), "config.json", &config.to_string());
    let r = evoq(dir.path(), &["evolve", "config.json", "--out", "report.json"]);
    assert_eq!(r.code, 0, "stderr: {}", r.stderr);
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["base_seed"], 100);
    let runs = report["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 3);
    for (i, run) in runs.iter().enumerate() {
        assert_eq!(run["seed"], 100 + i as u64);
    }
}

#[test]
fn evolve_seed_flag_overrides_the_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = bell_experiment(7, 1, Some(1e-9));
    write(dir.path(), "config.json", &config.to_string());
    let r = evoq(
        dir.path(),
        &["evolve", "config.json", "--seed", "123", "--out", "report.json"],
    );
    assert_eq!(r.code, 0, "stderr: {}", r.stderr);
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["base_seed"], 123);
    assert_eq!(report["runs"][0]["seed"], 123);
}

#[test]
fn evolve_rejects_unknown_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = bell_experiment(7, 1, Some(1e-9));
    config["reptitions"] = json!(2);
    write(dir.path(), "typo.json", &config.to_string());
    let r = evoq(dir.path(), &["evolve", "typo.json"]);
    assert_eq!(r.code, 1, "stdout: {}", r.stdout);
    assert!(r.stderr.contains("invalid config"), "stderr: {}", r.stderr);

    let mut config = bell_experiment(7, 1, Some(1e-9));
    config["evolution"]["mutation_rate"] = json!(0.5);
    write(dir.path(), "nested-typo.json", &config.to_string());
    let r = evoq(dir.path(), &["evolve", "nested-typo.json"]);
    assert_eq!(r.code, 1, "stdout: {}", r.stdout);
    assert!(r.stderr.contains("invalid config"), "stderr: {}", r.stderr);
}

#[test]
fn evolve_rejects_a_config_without_a_fitness_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = bell_experiment(7, 1, Some(1e-9));
    config["evolution"].as_object_mut().unwrap().remove("fitness");
    write(dir.path(), "config.json", &config.to_string());
    let r = evoq(dir.path(), &["evolve", "config.json"]);
    assert_eq!(r.code, 1, "stdout: {}", r.stdout);
    assert!(r.stderr.contains("invalid config"), "stderr: {}", r.stderr);
}

#[test]
fn evolve_rejects_zero_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let config = bell_experiment(7, 1, Some(1e-9));
    write(dir.path(), "config.json", &config.to_string());
    let r = evoq(dir.path(), &["evolve", "config.json", "--jobs", "0"]);
    assert_eq!(r.code, 1, "stdout: {}", r.stdout);
    assert!(r.stderr.contains("--jobs"), "stderr: {}", r.stderr);
}

#[test]
fn evolve_exit_code_two_when_the_budget_runs_out() {
    let dir = tempfile::tempdir().unwrap();
    // raw_error is never negative, so this target is unreachable.
    let mut config = bell_experiment(7, 1, Some(-1.0));
    config["evolution"]["max_generations"] = json!(3);
    write(dir.path(), "config.json", &config.to_string());
    let r = evoq(dir.path(), &["evolve", "config.json", "--out", "report.json"]);
    assert_eq!(r.code, 2, "stdout: {}\nstderr: {}", r.stdout, r.stderr);
    assert!(r.stdout.contains("budget exhausted"), "{}", r.stdout);
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["success_rate"], 0.0);
    assert_eq!(report["runs"][0]["terminated"], "budget-exhausted");
}

#[test]
fn evolve_reports_are_reproducible_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = bell_experiment(5, 2, Some(1e-9));
    write(dir.path(), "config.json", &config.to_string());
    for (out, jobs) in [("a.json", "1"), ("b.json", "8"), ("c.json", "1")] {
        let r = evoq(
            dir.path(),
            &["evolve", "config.json", "--jobs", jobs, "--out", out],
        );
        assert_eq!(r.code, 0, "stderr: {}", r.stderr);
    }
    let csv_a = fs::read(dir.path().join("a.csv")).unwrap();
    let csv_b = fs::read(dir.path().join("b.csv")).unwrap();
    let csv_c = fs::read(dir.path().join("c.csv")).unwrap();
    assert_eq!(csv_a, csv_b, "per-generation tables differ across --jobs");
    assert_eq!(csv_a, csv_c, "per-generation tables differ across reruns");

    let a = read_json(&dir.path().join("a.json"));
    let b = read_json(&dir.path().join("b.json"));
    for i in 0..2 {
        assert_eq!(a["runs"][i]["generations"], b["runs"][i]["generations"]);
        assert_eq!(
            a["runs"][i]["best"]["program_text"],
            b["runs"][i]["best"]["program_text"]
        );
        assert_eq!(
            a["runs"][i]["total_evaluations"],
            b["runs"][i]["total_evaluations"]
        );
    }
}

#[test]
fn shipped_example_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).expect("the configs directory should exist") {
        let path = entry.unwrap().path();
        if path.extension().map(|e| e == "json") != Some(true) {
            continue;
        }
        let text = fs::read_to_string(&path).unwrap();
        let value: Value = serde_json::from_str(&text)
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        for key in value.as_object().unwrap().keys() {
            assert!(
                ["evolution", "repetitions", "report_path", "csv_path"].contains(&key.as_str()),
                "{}: unexpected key {key:?}",
                path.display()
            );
        }
        let evolution: EvolutionConfig = serde_json::from_value(value["evolution"].clone())
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        evolution
            .validate()
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert!(seen >= 6, "expected the shipped example configs, found {seen}");
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[test]
fn verify_suites_all_pass() {
    let dir = tempfile::tempdir().unwrap();
    for suite in ["teleport", "grover", "gates"] {
        let r = evoq(dir.path(), &["verify", suite]);
        assert_eq!(r.code, 0, "{suite} stderr: {}", r.stderr);
        assert!(r.stdout.contains("PASS"), "{suite}: {}", r.stdout);
        assert!(!r.stdout.contains("FAIL"), "{suite}: {}", r.stdout);
    }
}

// ---------------------------------------------------------------------------
// program text round trip
// ---------------------------------------------------------------------------

#[test]
fn text_rendering_round_trips_through_json() {
    let three_pi_8 = 3.0 * std::f64::consts::FRAC_PI_8;
    let programs = vec![
        QuantumProgram::Linear(teleport_reference().program),
        QuantumProgram::Linear(grover_reference(3, 5, 2).unwrap()),
        parse_text(&format!("(ROT 0 {three_pi_8})\n(PHASE 1)\n(PI8 2)"), Some(3)).unwrap(),
        parse_text("(TREE (CNOT (HADAMARD 0) 1))", Some(2)).unwrap(),
    ];
    for program in programs {
        let before = serde_json::to_value(&program).unwrap();
        let text = render_text(&program);
        let reparsed = parse_text(&text, Some(program.num_qubits())).unwrap();
        let after = serde_json::to_value(&reparsed).unwrap();
        assert_eq!(before, after, "round trip changed:\n{text}");
    }
}
