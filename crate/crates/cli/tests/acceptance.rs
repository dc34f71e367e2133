//! Acceptance criteria 1 to 10. Prints one line per criterion and exits
//! nonzero if any fails. Each criterion also has a wall-clock limit.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use impulse_cli::output::Check;
use impulse_cli::suites;
use impulse_cli::Failure;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn(&Path) -> Result<Vec<Check>, Failure>,
}

fn budget(_: &Path) -> Result<Vec<Check>, Failure> {
    let mut checks = suites::budget_hard()?;
    checks.extend(suites::budget_soft()?);
    Ok(checks)
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_impulse"))
}

fn invoke(args: &[&str]) -> Result<(), Failure> {
    let out = bin().args(args).output()?;
    if out.status.success() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        )))
    }
}

/// Every CSV under `dir`, relative path and bytes, sorted by path.
fn csv_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, Failure> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv" || e == "txt") {
                let rel = path
                    .strip_prefix(dir)
                    .expect("under dir")
                    .to_string_lossy()
                    .into_owned();
                out.push((rel, std::fs::read(&path)?));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn determinism(scratch: &Path) -> Result<Vec<Check>, Failure> {
    let train = scratch.join("chain2.toml");
    std::fs::write(
        &train,
        "seeds = [1, 2]\nepisodes = 300\nhorizon = 50\n\n[env]\nkind = \"instance\"\nname = \"chain2\"\n",
    )?;
    let fa = scratch.join("fa.toml");
    std::fs::write(
        &fa,
        "seeds = [3]\nepisodes = 200\nhorizon = 50\n\n[env]\nkind = \"instance\"\nname = \"random(4, 6, 2)\"\n\n[learner]\nkind = \"linear_fa\"\n\n[learner.features]\ntype = \"aggregation\"\ngroup_size = 2\n",
    )?;
    let budget = scratch.join("budget.toml");
    std::fs::write(
        &budget,
        "seeds = [1, 2]\nepisodes = 200\nhorizon = 30\n\n[env]\nkind = \"instance\"\nname = \"chain(4)\"\n\n[budget]\nn = 2\nmode = \"hard\"\n\n[learner]\nkind = \"flat_baseline\"\n",
    )?;
    let lane = scratch.join("lane.toml");
    std::fs::write(
        &lane,
        "seeds = [1]\n\n[env]\nkind = \"lane\"\n\n[env.params]\nk = [0.1, 1.0, 10.0]\n\n[learner]\nkind = \"exact\"\n",
    )?;
    let mut runs = Vec::new();
    for round in ["a", "b"] {
        let dir = scratch.join(round);
        let d = |sub: &str| dir.join(sub).to_string_lossy().into_owned();
        invoke(&["train", &train.to_string_lossy(), "--out", &d("train"), "--jobs", "2"])?;
        invoke(&["train", &fa.to_string_lossy(), "--out", &d("fa")])?;
        invoke(&["train", &budget.to_string_lossy(), "--out", &d("budget")])?;
        invoke(&["oracle", &budget.to_string_lossy(), "--out", &d("oracle")])?;
        invoke(&[
            "sweep",
            &lane.to_string_lossy(),
            "--axis",
            "env.params.k",
            "--out",
            &d("sweep"),
        ])?;
        invoke(&["verify", "threshold", "--out", &d("verify")])?;
        runs.push(csv_files(&dir)?);
    }
    let differing =
        runs[0].len().abs_diff(runs[1].len()) + runs[0].iter().zip(&runs[1]).filter(|(a, b)| a != b).count();
    Ok(vec![
        Check::at_least("result files compared", runs[0].len() as f64, 12.0),
        Check::at_most("result files differing between identical runs", differing as f64, 0.0),
    ])
}

fn summary(checks: &[Check]) -> String {
    checks
        .iter()
        .map(|c| format!("{}{}={}", if c.pass { "" } else { "!" }, c.property, c.measured))
        .collect::<Vec<_>>()
        .join("; ")
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            id: 1,
            name: "contraction",
            limit: Duration::from_secs(10),
            run: |_| suites::contraction(),
        },
        Criterion {
            id: 2,
            name: "fixed point",
            limit: Duration::from_secs(5),
            run: |_| suites::fixed_point(),
        },
        Criterion {
            id: 3,
            name: "zero-cost reduction",
            limit: Duration::from_secs(60),
            run: |_| suites::zero_cost(),
        },
        Criterion {
            id: 4,
            name: "never-intervene threshold",
            limit: Duration::from_secs(60),
            run: |_| suites::threshold(),
        },
        Criterion {
            id: 5,
            name: "q-learning convergence",
            limit: Duration::from_secs(120),
            run: |_| suites::qlearn(),
        },
        Criterion {
            id: 6,
            name: "linear-fa bound",
            limit: Duration::from_secs(120),
            run: |_| suites::fa_bound(),
        },
        Criterion {
            id: 7,
            name: "budget satisfaction",
            limit: Duration::from_secs(60),
            run: budget,
        },
        Criterion {
            id: 8,
            name: "merton impulse vs flat",
            limit: Duration::from_secs(300),
            run: |_| suites::merton(),
        },
        Criterion {
            id: 9,
            name: "prioritization",
            limit: Duration::from_secs(120),
            run: |_| suites::prioritization(),
        },
        Criterion {
            id: 10,
            name: "determinism",
            limit: Duration::from_secs(300),
            run: determinism,
        },
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let scratch = tempfile::tempdir().expect("temp dir");
    let mut failed = 0;
    for c in criteria.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
        let dir = scratch.path().join(c.id.to_string());
        std::fs::create_dir_all(&dir).expect("scratch dir");
        let start = Instant::now();
        let result = (c.run)(&dir);
        let elapsed = start.elapsed();
        let (pass, detail) = match &result {
            Ok(checks) => (checks.iter().all(|k| k.pass) && elapsed <= c.limit, summary(checks)),
            Err(e) => (false, e.to_string()),
        };
        let timing = format!("{:.1}s of {}s", elapsed.as_secs_f64(), c.limit.as_secs());
        println!(
            "criterion {} {}: {} ({timing}) {detail}",
            c.id,
            c.name,
            if pass { "PASS" } else { "FAIL" }
        );
        failed += !pass as usize;
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
