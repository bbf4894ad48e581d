#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

pub fn bilevel(dir: &Path, args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_bilevel"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("spawn bilevel");
    assert!(
        out.status.success(),
        "bilevel {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// File name → bytes for every file under `dir`.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_file() {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
        }
    }
    out
}

const TRAIN: &str = "geometry = \"diagonal\"\npolicy_init = \"behavior_clone\"\noutput = \"mixture\"\n\
tau_cap = 100.0\nzeta = 1.0\nq_radius = 1000.0\nq_lr = 1e-3\neta0 = 1e-2\nouter_rounds = 3\ninner_steps = 20\n";

/// Runs every command once in `dir`.
pub fn pipeline(dir: &Path) {
    fs::write(dir.join("train.toml"), TRAIN).unwrap();
    fs::write(
        dir.join("regret.toml"),
        "seeds = 2\nn_grid = [200, 400, 800]\n[train]\nouter_rounds = 2\ninner_steps = 20\n",
    )
    .unwrap();
    fs::write(dir.join("coverage.toml"), "reps = 3\nn = 300\n[ci]\nsteps = 100\n").unwrap();
    fs::write(
        dir.join("explore.toml"),
        "seeds = 2\nalphas = [0.5]\nn = 300\n[train]\nouter_rounds = 2\ninner_steps = 20\n",
    )
    .unwrap();
    fs::write(
        dir.join("sens.toml"),
        "seeds = 2\nlambda_grid = [1.0, 0.1]\nc_grid = [1.0]\nn = 300\n[train]\nouter_rounds = 2\ninner_steps = 20\n",
    )
    .unwrap();
    fs::write(dir.join("ci.toml"), "steps = 100\n").unwrap();

    bilevel(
        dir,
        &[
            "generate",
            "--env",
            "gridworld",
            "--alpha",
            "0.5",
            "--n",
            "300",
            "--seed",
            "4",
            "--out",
            "grid.jsonl",
        ],
    );
    bilevel(
        dir,
        &[
            "train",
            "--dataset",
            "grid.jsonl",
            "--env",
            "gridworld",
            "--config",
            "train.toml",
            "--mc-episodes",
            "5",
            "--out",
            "train",
        ],
    );
    bilevel(
        dir,
        &[
            "ci",
            "--dataset",
            "grid.jsonl",
            "--policy",
            "train/policy.json",
            "--config",
            "ci.toml",
            "--out",
            "ci.json",
        ],
    );
    bilevel(
        dir,
        &[
            "generate",
            "--env",
            "regret",
            "--n",
            "300",
            "--seed",
            "4",
            "--out",
            "regret.jsonl",
        ],
    );
    bilevel(
        dir,
        &[
            "train",
            "--dataset",
            "regret.jsonl",
            "--env",
            "regret",
            "--config",
            "train.toml",
            "--mc-episodes",
            "3",
            "--out",
            "train_regret",
        ],
    );
    bilevel(dir, &["regret-sweep", "--config", "regret.toml", "--out", "regret"]);
    bilevel(dir, &["coverage", "--config", "coverage.toml", "--out", "coverage"]);
    bilevel(dir, &["explore-compare", "--config", "explore.toml", "--out", "explore"]);
    bilevel(dir, &["sensitivity", "--config", "sens.toml", "--out", "sens"]);
    bilevel(
        dir,
        &[
            "diag-rcn",
            "--dataset",
            "grid.jsonl",
            "--env",
            "gridworld",
            "--samples",
            "2000",
            "--out",
            "rcn",
        ],
    );
}

/// Subdirectories written by [`pipeline`], plus the top level.
pub const OUTPUT_DIRS: [&str; 8] = [".", "train", "train_regret", "regret", "coverage", "explore", "sens", "rcn"];

/// Files that differ between two pipeline runs.
pub fn differing_files(a: &Path, b: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for sub in OUTPUT_DIRS {
        let (sa, sb) = (snapshot(&a.join(sub)), snapshot(&b.join(sub)));
        let names: std::collections::BTreeSet<&String> = sa.keys().chain(sb.keys()).collect();
        for name in names {
            if sa.get(name) != sb.get(name) {
                out.push(format!("{sub}/{name}"));
            }
        }
    }
    out
}
