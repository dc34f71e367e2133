//! The `train`, `oracle`, `sweep` and `verify` commands.

use std::fs;
use std::path::{Path, PathBuf};

use impulse_core::solver::flat_value_iteration;
use impulse_core::{extract_policy, ValueFunction};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, LearnerKind};
use crate::output::{
    write_manifest, write_policy, write_report, write_residuals, write_sweep, write_train, write_values, Check,
    SweepRow,
};
use crate::run::{evaluate, execute, Problem, RunOutput};
use crate::suites::run_suite;
use crate::Failure;

/// Flags shared by every command.
#[derive(Clone, Debug, Default)]
pub struct Options {
    /// Replaces the config's seed list with this single seed.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Worker threads for parallel seeds; all cores when unset.
    pub jobs: Option<usize>,
}

fn load(path: &Path, opts: &Options) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = opts.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &opts.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg_out: Option<&Path>, fallback: &str) -> Result<PathBuf, Failure> {
    let dir = cfg_out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("runs").join(fallback));
    fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))
}

fn oracle_values(cfg: &ExperimentConfig, problem: &Problem) -> Result<Option<ValueFunction>, Failure> {
    if !cfg.oracle.gap || cfg.learner.kind == LearnerKind::Exact {
        return Ok(None);
    }
    Ok(Some(problem.oracle(cfg)?.value))
}

/// Run one seed; on failure leave the message in a diagnostics file.
fn execute_logged(
    cfg: &ExperimentConfig,
    problem: &Problem,
    seed: u64,
    oracle: Option<&ValueFunction>,
    dir: &Path,
) -> Result<RunOutput, Failure> {
    execute(cfg, problem, seed, oracle).map_err(|f| match f {
        Failure::Runtime(m) => {
            let path = dir.join(format!("diagnostics_seed{seed}.txt"));
            match fs::write(&path, format!("seed {seed}\n{m}\n")) {
                Ok(()) => Failure::Runtime(format!("seed {seed}: {m} (diagnostics in {})", path.display())),
                Err(_) => Failure::Runtime(format!("seed {seed}: {m}")),
            }
        }
        other => other,
    })
}

pub fn train(config: &Path, opts: &Options) -> Result<Vec<PathBuf>, Failure> {
    let cfg = load(config, opts)?;
    let problem = Problem::build(&cfg)?;
    let dir = out_dir(cfg.out.as_deref(), &stem(config))?;
    let fa = cfg.learner.kind == LearnerKind::LinearFa;
    let mut outputs = Vec::new();
    for s in &cfg.seeds {
        outputs.push(dir.join(format!("train_seed{s}.csv")));
        outputs.push(dir.join(format!("policy_seed{s}.csv")));
        if fa {
            outputs.push(dir.join(format!("weights_seed{s}.txt")));
        }
    }
    write_manifest(&dir, "train", Some(&cfg), Some(problem.describe()), &outputs)?;
    let oracle = oracle_values(&cfg, &problem)?;
    let runs = pool(opts.jobs)?.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| execute_logged(&cfg, &problem, seed, oracle.as_ref(), &dir))
            .collect::<Result<Vec<_>, _>>()
    })?;
    for run in &runs {
        write_train(&dir.join(format!("train_seed{}.csv", run.seed)), &run.records)?;
        write_policy(
            &dir.join(format!("policy_seed{}.csv", run.seed)),
            &run.policy,
            &run.values,
        )?;
        if let Some(w) = &run.weights {
            fs::write(dir.join(format!("weights_seed{}.txt", run.seed)), w.to_text())?;
        }
    }
    Ok(outputs)
}

pub fn oracle(config: &Path, opts: &Options) -> Result<Vec<PathBuf>, Failure> {
    let cfg = load(config, opts)?;
    let problem = Problem::build(&cfg)?;
    let dir = out_dir(cfg.out.as_deref(), &stem(config))?;
    let outputs: Vec<PathBuf> = ["value.csv", "policy.csv", "residuals.csv", "flat_value.csv"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_manifest(&dir, "oracle", Some(&cfg), Some(problem.describe()), &outputs)?;
    let vi = problem.oracle(&cfg)?;
    let (mdp, cost) = problem.target();
    let policy = extract_policy(mdp, cost, &vi.value);
    let flat = flat_value_iteration(mdp, cost, cfg.oracle.tol, cfg.oracle.max_iters)?;
    write_values(&outputs[0], &vi.value.0)?;
    write_policy(&outputs[1], &policy, &vi.value.0)?;
    write_residuals(&outputs[2], &vi.residuals)?;
    write_values(&outputs[3], &flat.value.0)?;
    Ok(outputs)
}

/// Walk a dotted path like `env.params.k` into a TOML table.
fn lookup<'a>(value: &'a mut toml::Value, axis: &str) -> Option<&'a mut toml::Value> {
    axis.split('.').try_fold(value, |v, key| v.as_table_mut()?.get_mut(key))
}

pub fn sweep(config: &Path, axis: &str, opts: &Options) -> Result<Vec<PathBuf>, Failure> {
    let text = fs::read_to_string(config).map_err(|e| Failure::Config(format!("{}: {e}", config.display())))?;
    let mut root: toml::Value =
        toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", config.display())))?;
    let values = match lookup(&mut root, axis) {
        Some(toml::Value::Array(values)) if values.is_empty() => {
            return Err(Failure::Config(format!("{axis}: axis list is empty")))
        }
        Some(toml::Value::Array(values)) => values.clone(),
        Some(_) => return Err(Failure::Config(format!("{axis}: axis must be a list of values"))),
        None => {
            return Err(Failure::Config(format!(
                "{axis}: axis not found in {}",
                config.display()
            )))
        }
    };
    let mut cells = Vec::with_capacity(values.len());
    for v in &values {
        let mut cell = root.clone();
        *lookup(&mut cell, axis).expect("axis exists") = v.clone();
        let mut cfg = ExperimentConfig::from_value(cell).map_err(|f| match f {
            Failure::Config(m) => Failure::Config(format!("{axis} = {v}: {m}")),
            other => other,
        })?;
        if let Some(seed) = opts.seed {
            cfg.seeds = vec![seed];
        }
        cells.push((v.to_string(), cfg));
    }
    // Numeric axes are reported in ascending order.
    if values
        .iter()
        .all(|v| v.as_float().or(v.as_integer().map(|i| i as f64)).is_some())
    {
        let key = |v: &str| v.parse::<f64>().unwrap_or(f64::NAN);
        cells.sort_by(|a, b| key(&a.0).total_cmp(&key(&b.0)));
    }
    let out = opts.out.clone().or_else(|| cells[0].1.out.clone());
    let dir = out_dir(out.as_deref(), &format!("{}-sweep", stem(config)))?;
    let outputs = vec![dir.join("sweep.csv")];
    let problems = cells
        .iter()
        .map(|(_, cfg)| Problem::build(cfg))
        .collect::<Result<Vec<_>, _>>()?;
    write_manifest(
        &dir,
        &format!("sweep --axis {axis}"),
        Some(&cells[0].1),
        Some(problems[0].describe()),
        &outputs,
    )?;
    let jobs: Vec<(usize, u64)> = cells
        .iter()
        .enumerate()
        .flat_map(|(i, (_, cfg))| cfg.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let mut rows = pool(opts.jobs)?.install(|| {
        jobs.par_iter()
            .map(|&(i, seed)| -> Result<(usize, SweepRow), Failure> {
                let (label, cfg) = &cells[i];
                let run = execute_logged(cfg, &problems[i], seed, None, &dir)?;
                let ev = evaluate(cfg, &problems[i], &run.policy, seed)?;
                Ok((
                    i,
                    SweepRow {
                        axis_value: label.clone(),
                        seed,
                        mean_return: ev.mean_return,
                        mean_interventions: ev.mean_interventions,
                        zone_violations: ev.zone_violations,
                    },
                ))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    rows.sort_by_key(|(i, r)| (*i, r.seed));
    let rows: Vec<SweepRow> = rows.into_iter().map(|(_, r)| r).collect();
    write_sweep(&outputs[0], &rows)?;
    Ok(outputs)
}

/// Runs a suite and writes `report.csv`. Fails when any check fails.
pub fn verify(suite: &str, opts: &Options) -> Result<Vec<Check>, Failure> {
    if !crate::suites::SUITES.contains(&suite) {
        return Err(Failure::Config(format!(
            "suite: unknown suite `{suite}` (expected one of {})",
            crate::suites::SUITES.join(", ")
        )));
    }
    let dir = out_dir(opts.out.as_deref(), &format!("verify-{suite}"))?;
    let outputs = vec![dir.join("report.csv")];
    write_manifest(&dir, &format!("verify {suite}"), None, None, &outputs)?;
    let checks = pool(opts.jobs)?.install(|| run_suite(suite, &dir))?;
    write_report(&outputs[0], &checks)?;
    Ok(checks)
}
