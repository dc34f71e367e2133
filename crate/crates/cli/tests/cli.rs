use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use impulse_cli::config::ExperimentConfig;
use impulse_cli::run::{evaluate, execute, Problem};
use impulse_core::envs::instances::chain2;
use impulse_core::{extract_policy, value_iteration};

fn impulse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_impulse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap().iter().map(str::to_owned).collect())
        .collect()
}

const CHAIN2: &str =
    "seeds = [1, 2]\nepisodes = 2000\nhorizon = 100\n\n[env]\nkind = \"instance\"\nname = \"chain2\"\n";

#[test]
fn train_chain2_matches_oracle_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", CHAIN2);
    let out = dir.path().join("out");
    let o = impulse(&["train", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (mdp, cost) = chain2();
    let v = value_iteration(&mdp, &cost, 1e-12, 10_000).unwrap().value;
    let oracle = extract_policy(&mdp, &cost, &v);
    for seed in [1, 2] {
        assert_eq!(read_csv(&out.join(format!("train_seed{seed}.csv"))).len(), 2000);
        let policy = read_csv(&out.join(format!("policy_seed{seed}.csv")));
        for (s, row) in policy.iter().enumerate() {
            assert_eq!(row[1], oracle.intervene[s].to_string(), "seed {seed} state {s}");
        }
    }
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    for key in [
        "epsilon_decay",
        "alpha0",
        "eval_episodes",
        "max_iters",
        "tail_fraction",
        "cost = ",
    ] {
        assert!(manifest.contains(key), "manifest lacks {key}");
    }
}

#[test]
fn unknown_instance_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[env]\nkind = \"instance\"\nname = \"chain9x\"\n");
    let o = impulse(&["train", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("env.name"), "{}", stderr(&o));
}

#[test]
fn schema_errors_point_at_a_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "seeds = [1]\nepisodez = 3\n\n[env]\nkind = \"instance\"\nname = \"chain2\"\n",
    );
    let o = impulse(&["train", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("line 2") && msg.contains("episodez"), "{msg}");
}

#[test]
fn repeated_training_is_bytewise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", CHAIN2);
    for run in ["a", "b"] {
        let o = impulse(&["train", s(&cfg), "--out", s(&dir.path().join(run)), "--jobs", "2"]);
        assert!(o.status.success());
    }
    for file in [
        "train_seed1.csv",
        "train_seed2.csv",
        "policy_seed1.csv",
        "policy_seed2.csv",
    ] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
}

#[test]
fn seed_flag_replaces_seed_list() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", CHAIN2);
    let out = dir.path().join("o");
    assert!(impulse(&["train", s(&cfg), "--out", s(&out), "--seed", "7"])
        .status
        .success());
    assert!(out.join("train_seed7.csv").exists());
    assert!(!out.join("train_seed1.csv").exists());
}

#[test]
fn oracle_chain2_hand_solution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", CHAIN2);
    let out = dir.path().join("o");
    assert!(impulse(&["oracle", s(&cfg), "--out", s(&out)]).status.success());
    let v: Vec<f64> = read_csv(&out.join("value.csv"))
        .iter()
        .map(|r| r[1].parse().unwrap())
        .collect();
    assert!((v[0] - 8.8).abs() < 1e-8 && (v[1] - 10.0).abs() < 1e-8, "{v:?}");
    let residuals: Vec<f64> = read_csv(&out.join("residuals.csv"))
        .iter()
        .map(|r| r[1].parse().unwrap())
        .collect();
    assert!(residuals.windows(2).all(|w| w[1] <= 0.9 * w[0] + 1e-12));
}

#[test]
fn oracle_zero_budget_never_intervenes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        &format!("{CHAIN2}\n[budget]\nn = 0\nmode = \"soft\"\ndelta = \"auto\"\n"),
    );
    let out = dir.path().join("o");
    assert!(impulse(&["oracle", s(&cfg), "--out", s(&out)]).status.success());
    let policy = read_csv(&out.join("policy.csv"));
    assert_eq!(policy.len(), 4);
    assert!(policy.iter().all(|r| r[1] == "false"));
}

#[test]
fn oracle_zero_cost_equals_flat_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "[env]\nkind = \"instance\"\nname = \"random(9, 7, 3)\"\n\n[cost]\nform = \"zero\"\n\n[oracle]\ntol = 1e-13\n",
    );
    let out = dir.path().join("o");
    assert!(impulse(&["oracle", s(&cfg), "--out", s(&out)]).status.success());
    let a = read_csv(&out.join("value.csv"));
    let b = read_csv(&out.join("flat_value.csv"));
    for (x, y) in a.iter().zip(&b) {
        let (x, y): (f64, f64) = (x[1].parse().unwrap(), y[1].parse().unwrap());
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn oversized_budget_product_reports_size() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "[env]\nkind = \"instance\"\nname = \"chain(5000)\"\n\n[budget]\nn = 1000\n",
    );
    let o = impulse(&["oracle", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("5010000"), "{}", stderr(&o));
}

#[test]
fn divergence_leaves_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "seeds = [4]\nepisodes = 50\n\n[env]\nkind = \"instance\"\nname = \"chain2\"\n\n[learner]\nkind = \"linear_fa\"\n\n[learner.fa]\nmax_norm = 0.001\n",
    );
    let out = dir.path().join("o");
    let o = impulse(&["train", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("diagnostics_seed4.txt"), "{}", stderr(&o));
    assert!(out.join("diagnostics_seed4.txt").exists());
}

#[test]
fn sweep_axis_errors_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "e.toml", "[env]\nkind = \"lane\"\n\n[env.params]\nk = []\n");
    let o = impulse(&[
        "sweep",
        s(&empty),
        "--axis",
        "env.params.k",
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = impulse(&[
        "sweep",
        s(&empty),
        "--axis",
        "env.params.nope",
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("env.params.nope"));
}

#[test]
fn lane_sweep_orders_rows_and_prioritizes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "l.toml",
        "seeds = [2, 1]\n\n[env]\nkind = \"lane\"\n\n[env.params]\nk = [10.0, 0.1, 1.0]\n\n[learner]\nkind = \"exact\"\n",
    );
    let out = dir.path().join("o");
    let o = impulse(&["sweep", s(&cfg), "--axis", "env.params.k", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_csv(&out.join("sweep.csv"));
    let keys: Vec<(String, String)> = rows.iter().map(|r| (r[0].clone(), r[1].clone())).collect();
    let expect = [
        ("0.1", "1"),
        ("0.1", "2"),
        ("1.0", "1"),
        ("1.0", "2"),
        ("10.0", "1"),
        ("10.0", "2"),
    ];
    assert_eq!(keys, expect.map(|(a, b)| (a.to_string(), b.to_string())));
    let interventions: Vec<f64> = rows.iter().step_by(2).map(|r| r[3].parse().unwrap()).collect();
    assert!(interventions.windows(2).all(|w| w[1] <= w[0]), "{interventions:?}");
    let last = rows.last().unwrap();
    assert!(last[6].parse::<f64>().unwrap() <= last[4].parse::<f64>().unwrap());
}

#[test]
fn single_value_sweep_matches_train_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let text = "seeds = [3]\nepisodes = 500\nhorizon = 40\neval_episodes = 50\n\n[env]\nkind = \"instance\"\nname = \"drift3\"\n\n[cost]\nform = \"fixed\"\nkappa = KAPPA\n";
    let cfg = write(dir.path(), "s.toml", &text.replace("KAPPA", "[0.4]"));
    let out = dir.path().join("o");
    assert!(impulse(&["sweep", s(&cfg), "--axis", "cost.kappa", "--out", s(&out)])
        .status
        .success());
    let row = &read_csv(&out.join("sweep.csv"))[0];

    let plain = ExperimentConfig::parse(&text.replace("KAPPA", "0.4")).unwrap();
    let problem = Problem::build(&plain).unwrap();
    let run = execute(&plain, &problem, 3, None).unwrap();
    let ev = evaluate(&plain, &problem, &run.policy, 3).unwrap();
    assert_eq!(row[2], ev.mean_return.to_string());
    assert_eq!(row[3], ev.mean_interventions.to_string());
}

#[test]
fn verify_reports_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let o = impulse(&["verify", "budget_hard", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_csv(&out.join("report.csv"));
    assert!(report.iter().all(|r| r[3] == "true"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
    assert_eq!(
        impulse(&["verify", "no_such_suite", "--out", s(&out)]).status.code(),
        Some(2)
    );
}

#[test]
fn csv_schema_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = impulse(&["verify", "csv_schema", "--out", s(&dir.path().join("v"))]);
    assert!(
        o.status.success(),
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        stderr(&o)
    );
}

#[test]
fn shipped_configs_resolve_and_round_trip() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&root).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        // Sweep configs hold a list on the axis and only parse per cell.
        let Ok(cfg) = ExperimentConfig::parse(&text) else {
            continue;
        };
        let again = ExperimentConfig::parse(&cfg.resolved_toml()).unwrap();
        assert_eq!(cfg, again, "{}", path.display());
        seen += 1;
    }
    assert!(seen >= 4);
}
