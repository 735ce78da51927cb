use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;
use wgflow::stepper::{Initializer, Scheme, StepRecord, Trajectory};
use wgflow::{DomainSpec, EnergyParts, EnergySpec, QuantileMeasure};
use wgflow_cli::commands::{cmd_compare, cmd_run, RunOptions};
use wgflow_cli::config::{OutputFormat, RunConfig};
use wgflow_cli::output::{self, Manifest};
use wgflow_cli::CliError;

const HEAT: &str = r#"
[problem]
m = 1.0
initial = { name = "gaussian", mean = 0.0, var = 1.0 }
reference = "gaussian_heat"

[discretization]
n = 200
tau = 0.01
t_end = 0.1
"#;

fn wgflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wgflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn run_in(dir: &TempDir, text: &str, extra: &[&str]) -> Output {
    let config = write_config(dir.path(), text);
    let out = dir.path().join("out");
    let mut args = vec!["run", "--config", &config, "--out", out.to_str().unwrap(), "--quiet"];
    args.extend_from_slice(extra);
    wgflow(&args)
}

#[test]
fn heat_run_writes_three_artifacts() {
    let dir = TempDir::new().unwrap();
    let res = run_in(&dir, HEAT, &[]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let out = dir.path().join("out");
    for name in ["states.csv", "scalars.csv", "manifest.json"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let manifest = output::read_manifest(&out).unwrap();
    assert_eq!(manifest.completed_steps, 10);
    assert_eq!(manifest.constants.d1, 0.0);
    assert_eq!(manifest.constants.tau_star, Some(0.125));
    assert!(manifest.diagnostics.unwrap().all_passed());

    let states = fs::read_to_string(out.join("states.csv")).unwrap();
    assert!(states.starts_with("k,t,i,s,x\n-1,0.0,0,0.0,"));
    assert_eq!(states.lines().count(), 1 + 12 * 200);
    let scalars = fs::read_to_string(out.join("scalars.csv")).unwrap();
    assert!(scalars.starts_with(
        "k,t,energy,internal,external,interaction,second_moment,w2_increment,dissipation_margin,iterations,grad_norm\n"
    ));
    assert_eq!(scalars.lines().count(), 1 + 12);
}

#[test]
fn identical_configs_give_identical_bytes() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    assert_eq!(run_in(&a, HEAT, &[]).status.code(), Some(0));
    assert_eq!(run_in(&b, HEAT, &[]).status.code(), Some(0));
    for name in ["states.csv", "scalars.csv"] {
        let x = fs::read(a.path().join("out").join(name)).unwrap();
        let y = fs::read(b.path().join("out").join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn tau_guard_names_the_threshold() {
    let text = r#"
[problem]
external = { name = "quadratic", strength = 1.0 }
initial = { name = "gaussian", mean = 0.0, var = 1.0 }
[discretization]
n = 50
tau = 0.1
t_end = 0.3
"#;
    let dir = TempDir::new().unwrap();
    let res = run_in(&dir, text, &[]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("tau* = 0.07142857142857142"), "{err}");
    assert!(!dir.path().join("out").exists());

    let res = run_in(&dir, text, &["--override-tau-guard"]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn solver_failure_persists_partial_trajectory() {
    let text = r#"
[problem]
m = 2.0
initial = { name = "uniform", a = -1.0, b = 1.0 }
[discretization]
n = 100
tau = 0.01
t_end = 0.1
scheme = "jko"
[optimizer]
max_iters = 1
"#;
    let dir = TempDir::new().unwrap();
    let res = run_in(&dir, text, &[]);
    assert_eq!(res.status.code(), Some(3));
    let out = dir.path().join("out");
    let manifest = output::read_manifest(&out).unwrap();
    assert_eq!(manifest.status, output::RunStatus::SolverFailure);
    assert_eq!(manifest.completed_steps, 0);
    assert!(manifest.error.unwrap().contains("did not converge"));
    let states = fs::read_to_string(out.join("states.csv")).unwrap();
    assert_eq!(states.lines().count(), 1 + 100);
}

#[test]
fn invalid_configs_exit_with_validation_code() {
    let dir = TempDir::new().unwrap();
    let bad = [
        HEAT.replace("gaussian\"", "cauchy\""),
        HEAT.replace("n = 200", "n = 0"),
        HEAT.replace("t_end = 0.1", "t_end = 0.0"),
        HEAT.replace("[discretization]", "[discretization]\nsteps = 4"),
    ];
    for text in bad {
        assert_eq!(run_in(&dir, &text, &[]).status.code(), Some(2), "{text}");
    }
    let missing = wgflow(&["run", "--config", "/nonexistent/config.toml"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn diagnose_replays_a_healthy_run() {
    let dir = TempDir::new().unwrap();
    let text = HEAT.replace("t_end = 0.1", "t_end = 0.05\nscheme = \"both\"");
    assert_eq!(run_in(&dir, &text, &[]).status.code(), Some(0));
    let out = dir.path().join("out");
    let res = wgflow(&["diagnose", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    for scheme in ["jko", "bdf2"] {
        let replay = fs::read_to_string(out.join(scheme).join("diagnostics.json")).unwrap();
        let replay: wgflow::diagnostics::DiagnosticsReport = serde_json::from_str(&replay).unwrap();
        let manifest = output::read_manifest(&out.join(scheme)).unwrap();
        assert_eq!(Some(replay), manifest.diagnostics, "{scheme}");
    }
}

#[test]
fn diagnose_rejects_corrupted_states() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run_in(&dir, HEAT, &[]).status.code(), Some(0));
    let out = dir.path().join("out");
    let path = out.join("states.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    // make X_5 of ρ^3 exceed X_6
    let row = lines
        .iter()
        .position(|l| l.starts_with("3,") && l.split(',').nth(2) == Some("5"))
        .unwrap();
    let mut cells: Vec<String> = lines[row].split(',').map(String::from).collect();
    cells[4] = "100.0".into();
    lines[row] = cells.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();

    let res = wgflow(&["diagnose", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("k = 3"));
}

#[test]
fn diagnose_reports_the_failing_margin() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run_in(&dir, HEAT, &[]).status.code(), Some(0));
    let out = dir.path().join("out");
    // shift the energy ledger of step 4 so the dissipation inequality breaks
    let path = out.join("states.csv");
    let text = fs::read_to_string(&path).unwrap();
    let shifted: Vec<String> = text
        .lines()
        .map(|l| {
            let mut cells: Vec<String> = l.split(',').map(String::from).collect();
            if cells[0] == "4" {
                let x: f64 = cells[4].parse().unwrap();
                cells[4] = format!("{:?}", 1.5 * x);
            }
            cells.join(",")
        })
        .collect();
    fs::write(&path, shifted.join("\n") + "\n").unwrap();
    let res = wgflow(&["diagnose", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(4));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("margin") && err.contains("step"), "{err}");
}

#[test]
fn compare_without_reference_is_invalid() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), &HEAT.replace("reference = \"gaussian_heat\"", ""));
    let res = wgflow(&["compare", "--config", &config, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn compare_heat_sweep_favours_bdf2() {
    let dir = TempDir::new().unwrap();
    let text = HEAT.replace(
        "t_end = 0.1",
        "t_end = 0.1\nscheme = \"both\"\ninitializer = \"jko-substep\"\ntaus = [0.02, 0.01, 0.005]",
    );
    let mut cfg = RunConfig::from_toml(&text).unwrap();
    cfg.diagnostics.enabled = false;
    let opts = RunOptions {
        out: Some(dir.path().to_path_buf()),
        quiet: true,
        ..RunOptions::default()
    };
    let report = cmd_compare(&cfg, &opts).unwrap();
    assert_eq!(report.rows.len(), 6);
    for tau in [0.02, 0.01, 0.005] {
        let j = report.row(Scheme::Jko, tau).unwrap();
        let b = report.row(Scheme::Bdf2, tau).unwrap();
        assert!(b.w2_error <= j.w2_error, "tau {tau}: {} vs {}", b.w2_error, j.w2_error);
        assert!(b.l1_error.unwrap() <= j.l1_error.unwrap(), "tau {tau}");
    }
    assert!(dir.path().join("compare.csv").is_file());
    assert!(dir.path().join("bdf2_tau2").join("manifest.json").is_file());
}

#[test]
fn compare_particle_orders() {
    let text = r#"
[problem]
external = { name = "quadratic", strength = 1.0 }
initial = { name = "point", x = 1.0 }
reference = "ornstein_uhlenbeck"
[discretization]
n = 2
tau = 0.0625
t_end = 1.0
scheme = "both"
initializer = "jko-substep"
taus = [0.0625, 0.03125, 0.015625, 0.0078125]
[diagnostics]
enabled = false
"#;
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), text);
    let res = wgflow(&["compare", "--config", &config, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let table = String::from_utf8_lossy(&res.stdout);
    assert!(table.contains("order jko") && table.contains("order bdf2"), "{table}");
    let report: wgflow_cli::CompareReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("compare.json")).unwrap()).unwrap();
    let jko = report.order(Scheme::Jko).unwrap().w2_order.unwrap();
    let bdf2 = report.order(Scheme::Bdf2).unwrap().w2_order.unwrap();
    assert!((0.8..=1.2).contains(&jko), "{jko}");
    assert!((1.7..=2.3).contains(&bdf2), "{bdf2}");
    assert!(report.rows.iter().all(|r| r.l1_error.is_none()));
}

#[test]
fn json_format_round_trips_through_diagnose() {
    let dir = TempDir::new().unwrap();
    let text = HEAT.replace("t_end = 0.1", "t_end = 0.05") + "\n[output]\nformat = \"json\"\n";
    assert_eq!(run_in(&dir, &text, &[]).status.code(), Some(0));
    let out = dir.path().join("out");
    assert!(out.join("states.json").is_file() && out.join("scalars.json").is_file());
    let res = wgflow(&["diagnose", "--out", out.to_str().unwrap(), "--quiet"]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
}

fn random_trajectory(rng: &mut ChaCha8Rng, scheme: Scheme) -> Trajectory {
    let n = rng.gen_range(2..40);
    let count = rng.gen_range(2..6);
    let states: Vec<QuantileMeasure> = (0..count)
        .map(|_| {
            let mut x: Vec<f64> = (0..n)
                .map(|_| rng.gen_range(-1e3..1e3) * rng.gen::<f64>().powi(7))
                .collect();
            x.sort_by(f64::total_cmp);
            QuantileMeasure::from_quantiles(x, DomainSpec::Line).unwrap()
        })
        .collect();
    let mut traj = Trajectory {
        scheme,
        tau: 0.1,
        grad_tol: 1e-9,
        initializer: Initializer::Duplicate,
        states,
        records: Vec::new(),
    };
    // the scalars series stores times and moments from the states themselves
    for k in 1..=traj.last_step() {
        let record = StepRecord {
            k: k as usize,
            time: traj.time(k),
            w2_increment: rng.gen(),
            energy: EnergyParts {
                internal: rng.gen(),
                external: rng.gen(),
                interaction: rng.gen(),
            },
            second_moment: traj.state(k).unwrap().second_moment(),
            iterations: rng.gen_range(1..50),
            grad_norm: rng.gen::<f64>() * 1e-9,
            dissipation_margin: rng.gen::<f64>() - 0.5,
        };
        traj.records.push(record);
    }
    traj
}

#[test]
fn series_round_trip_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = RunConfig::from_toml(HEAT).unwrap();
    for case in 0..40 {
        let scheme = if case % 2 == 0 { Scheme::Jko } else { Scheme::Bdf2 };
        let format = if case % 4 < 2 {
            OutputFormat::Csv
        } else {
            OutputFormat::Json
        };
        let traj = random_trajectory(&mut rng, scheme);
        let dir = TempDir::new().unwrap();
        let (states_file, scalars_file) =
            output::write_series_files(dir.path(), &traj, &EnergySpec::zero(), format).unwrap();
        let manifest = Manifest {
            status: output::RunStatus::Completed,
            scheme,
            initializer: traj.initializer,
            tau: traj.tau,
            grad_tol: traj.grad_tol,
            completed_steps: traj.records.len(),
            final_time: traj.final_time(),
            constants: output::Constants {
                d1: 0.0,
                d2: 1.0,
                d3: 0.0,
                d4: 0.0,
                tau_star: None,
            },
            states_file,
            scalars_file,
            error: None,
            config: cfg.clone(),
            diagnostics: None,
        };
        let back = output::read_trajectory(dir.path(), &manifest, DomainSpec::Line).unwrap();
        assert_eq!(back, traj, "case {case}");
    }
}

#[test]
fn library_run_matches_binary_run() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run_in(&dir, HEAT, &[]).status.code(), Some(0));
    let cfg = RunConfig::from_toml(HEAT).unwrap();
    let lib_dir = TempDir::new().unwrap();
    let opts = RunOptions {
        out: Some(lib_dir.path().to_path_buf()),
        quiet: true,
        ..RunOptions::default()
    };
    let outcomes = cmd_run(&cfg, &opts).unwrap();
    assert_eq!(outcomes.len(), 1);
    let manifest = output::read_manifest(&dir.path().join("out")).unwrap();
    let back = output::read_trajectory(&dir.path().join("out"), &manifest, DomainSpec::Line).unwrap();
    assert_eq!(back, outcomes[0].trajectory);
    assert!(matches!(
        cmd_run(
            &RunConfig::from_toml(&HEAT.replace("tau = 0.01", "tau = 0.2")).unwrap(),
            &opts
        ),
        Err(CliError::Validation(_))
    ));
}
