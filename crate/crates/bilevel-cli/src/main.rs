use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use bilevel::approx::{FeatureMap, Policy};
use bilevel::core::{load_dataset, save_dataset, OfflineDataset, OutputRule, PolicyInit, TrainConfig};
use bilevel::detection::DetectionFunction;
use bilevel::envs::{
    behavior_policy, generate_dataset, mc_return, ActionSampler, CellPolicy, EnvDescriptor, MatrixBehavior, MatrixDynamicsEnv,
    RegretBehavior, RegretEnv,
};
use bilevel::experiments::{
    coverage_experiment, decreasing_steps, exploration_comparison, regret_sweep, relative_condition_number, sensitivity_grid,
    slope_fit, write_csv, CoverageSpec, ExploreSpec, RegretSweepSpec, RunManifest, SensitivitySpec,
};
use bilevel::ope::{confidence_interval, CiConfig};
use bilevel::optimizer::{train_with, TrainHooks};

#[derive(Parser)]
#[command(
    name = "bilevel",
    version,
    about = "Pessimistic offline policy optimization and value intervals"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EnvKind {
    Gridworld,
    Matrix,
    Regret,
}

#[derive(clap::Args)]
struct EnvArgs {
    /// Built-in environment, used when no descriptor file is given.
    #[arg(long, value_enum, default_value = "gridworld")]
    env: EnvKind,
    /// JSON environment descriptor; overrides --env.
    #[arg(long)]
    env_desc: Option<PathBuf>,
}

impl EnvArgs {
    fn descriptor(&self) -> Result<EnvDescriptor> {
        if let Some(p) = &self.env_desc {
            return read_json(p);
        }
        Ok(match self.env {
            EnvKind::Gridworld => EnvDescriptor::Gridworld { slip: 0.1, gamma: 0.95 },
            EnvKind::Matrix => EnvDescriptor::Matrix(MatrixDynamicsEnv::default()),
            EnvKind::Regret => EnvDescriptor::Regret(RegretEnv::default()),
        })
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Roll a behavior policy and write a JSONL dataset plus header.
    Generate {
        #[command(flatten)]
        env: EnvArgs,
        /// Behavior temperature (tabular and matrix environments).
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Value-iteration sweeps behind the tabular behavior policy.
        #[arg(long)]
        vi_iters: Option<usize>,
        #[arg(long, default_value_t = 1500)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        env: EnvArgs,
        /// Flat TOML file with TrainConfig fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        c_star: Option<f64>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        inner: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Episodes for the per-round Monte Carlo return; 0 disables it.
        #[arg(long, default_value_t = 100)]
        mc_episodes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Confidence interval for the value of a policy.
    Ci {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// TOML file with CiConfig fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Needed only for regret datasets, whose states are snapped to cells.
        #[arg(long)]
        env_desc: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regret against sample size on the regret environment.
    RegretSweep(ExperimentArgs),
    /// Empirical coverage of the confidence interval.
    Coverage(ExperimentArgs),
    /// Behavior against trained return across exploration levels.
    ExploreCompare(ExperimentArgs),
    /// Trained return over a (λ, c*) grid.
    Sensitivity(ExperimentArgs),
    /// Relative condition number of a policy against a dataset.
    DiagRcn {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        env: EnvArgs,
        /// Policy JSON; defaults to the uniform policy.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-6)]
        reg: f64,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct ExperimentArgs {
    /// TOML spec; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replications per cell.
    #[arg(long)]
    seeds: Option<usize>,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Reads a TOML file over `T::default()`. Nested tables are merged key by
/// key, so `[train]\nseed = 3` keeps the rest of the default `train`.
fn read_toml<T: DeserializeOwned + Serialize + Default>(path: Option<&Path>) -> Result<T> {
    let Some(p) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    let user: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
    let mut base = toml::Table::try_from(T::default()).context("serializing defaults")?;
    merge(&mut base, user);
    toml::Value::Table(base)
        .try_into()
        .with_context(|| format!("parsing {}", p.display()))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn file_names(paths: &[&str]) -> Vec<String> {
    paths.iter().map(|s| s.to_string()).collect()
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Generate {
            env,
            alpha,
            vi_iters,
            n,
            horizon,
            seed,
            out,
        } => generate(&env.descriptor()?, alpha, vi_iters, n, horizon, seed, &out),
        Cmd::Train {
            dataset,
            env,
            config,
            lambda,
            c_star,
            rounds,
            inner,
            seed,
            mc_episodes,
            out,
        } => {
            let mut cfg: TrainConfig = read_toml(config.as_deref())?;
            if let Some(v) = lambda {
                cfg.lambda = v;
            }
            if let Some(v) = c_star {
                cfg.c_star = v;
            }
            if let Some(v) = rounds {
                cfg.outer_rounds = v;
            }
            if let Some(v) = inner {
                cfg.inner_steps = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            train_cmd(&dataset, &env.descriptor()?, &cfg, mc_episodes, &out)
        }
        Cmd::Ci {
            dataset,
            policy,
            delta,
            lambda,
            config,
            env_desc,
            seed,
            out,
        } => {
            let mut cfg: CiConfig = read_toml(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let env = env_desc.as_deref().map(read_json::<EnvDescriptor>).transpose()?;
            ci_cmd(&dataset, &policy, delta, lambda, &cfg, env.as_ref(), out.as_deref())
        }
        Cmd::RegretSweep(a) => {
            let mut spec: RegretSweepSpec = read_toml(a.config.as_deref())?;
            if let Some(s) = a.seeds {
                spec.seeds = s;
            }
            if let Some(s) = a.seed {
                spec.train.seed = s;
            }
            regret_cmd(&spec, &a.out)
        }
        Cmd::Coverage(a) => {
            let mut spec: CoverageSpec = read_toml(a.config.as_deref())?;
            if let Some(s) = a.seeds {
                spec.reps = s;
            }
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            coverage_cmd(&spec, &a.out)
        }
        Cmd::ExploreCompare(a) => {
            let mut spec: ExploreSpec = read_toml(a.config.as_deref())?;
            if let Some(s) = a.seeds {
                spec.seeds = s;
            }
            if let Some(s) = a.seed {
                spec.train.seed = s;
            }
            explore_cmd(&spec, &a.out)
        }
        Cmd::Sensitivity(a) => {
            let mut spec: SensitivitySpec = read_toml(a.config.as_deref())?;
            if let Some(s) = a.seeds {
                spec.seeds = s;
            }
            if let Some(s) = a.seed {
                spec.train.seed = s;
            }
            sensitivity_cmd(&spec, &a.out)
        }
        Cmd::DiagRcn {
            dataset,
            env,
            policy,
            reg,
            samples,
            seed,
            out,
        } => rcn_cmd(&dataset, &env.descriptor()?, policy.as_deref(), reg, samples, seed, &out),
    }
}

fn generate(
    desc: &EnvDescriptor,
    alpha: f64,
    vi_iters: Option<usize>,
    n: usize,
    horizon: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let env = desc.build()?;
    let behavior: Box<dyn ActionSampler> = match desc {
        EnvDescriptor::Matrix(m) => Box::new(MatrixBehavior { env: m.clone(), alpha }),
        EnvDescriptor::Regret(r) => Box::new(RegretBehavior { env: r.clone() }),
        _ => {
            let m = desc.tabular().context("tabular environment expected")?;
            Box::new(behavior_policy(&m, alpha, vi_iters)?)
        }
    };
    let ds = generate_dataset(env.as_ref(), behavior.as_ref(), n, horizon, seed)?;
    save_dataset(&ds, out)?;
    log::info!(
        "wrote {} transitions to {} (hash {})",
        ds.len(),
        out.display(),
        ds.content_hash()
    );
    Ok(())
}

/// Dataset and features the trainer sees for `desc`: regret datasets are
/// snapped to state cells, tabular ones use one-hot features, the matrix
/// environment uses RBF representer features.
fn prepare(desc: &EnvDescriptor, raw: OfflineDataset<f64>) -> Result<(OfflineDataset<f64>, FeatureMap<f64>)> {
    match desc {
        EnvDescriptor::Regret(r) => {
            let ds = r.tabularize(&raw)?;
            Ok((ds, FeatureMap::tabular(r.num_state_cells(), raw.num_actions())))
        }
        EnvDescriptor::Matrix(_) => {
            let emb = bilevel::approx::scalar_action_embedding(raw.num_actions());
            let fm = FeatureMap::rbf_from_dataset(&raw, emb, 100)?;
            Ok((raw, fm))
        }
        _ => {
            let m = desc.tabular().context("tabular environment expected")?;
            Ok((raw, FeatureMap::tabular(m.num_states, m.num_actions)))
        }
    }
}

/// Policy as it acts in the raw environment.
fn acting<'a>(desc: &'a EnvDescriptor, pi: &'a Policy<f64>) -> Box<dyn ActionSampler + 'a> {
    match desc {
        EnvDescriptor::Regret(r) => Box::new(CellPolicy { env: r, policy: pi }),
        _ => Box::new(pi.clone()),
    }
}

fn train_cmd(dataset: &Path, desc: &EnvDescriptor, cfg: &TrainConfig, mc_episodes: usize, out: &Path) -> Result<()> {
    let raw = load_dataset::<f64>(dataset)?;
    let (ds, fm) = prepare(desc, raw)?;
    let mut cfg = cfg.clone();
    if fm.num_states == 0 && cfg.policy_init == PolicyInit::BehaviorClone {
        log::warn!("behavior cloning needs tabular features; starting from the uniform policy");
        cfg.policy_init = PolicyInit::Uniform;
    }
    let env = desc.build()?;
    let det = DetectionFunction::quadratic(cfg.tau_cap);
    let mut round = 0u64;
    let hooks = TrainHooks {
        initial_policy: None,
        evaluator: (mc_episodes > 0).then(|| {
            let env = env.as_ref();
            let seed = cfg.seed;
            Box::new(move |p: &Policy<f64>| {
                round += 1;
                let est = mc_return(env, acting(desc, p).as_ref(), mc_episodes, 100, seed.wrapping_add(round))?;
                Ok(est.mean)
            }) as Box<dyn FnMut(&Policy<f64>) -> bilevel::Result<f64> + '_>
        }),
    };
    let result = train_with(&ds, &fm, &det, &cfg, hooks)?;
    out_dir(out)?;
    write_json(&out.join("policy.json"), &result.policy)?;
    write_json(&out.join("snapshots.json"), &result.snapshots)?;
    fs::write(out.join("trace.csv"), result.trace.to_csv())?;
    RunManifest::new(
        "train",
        &cfg,
        vec![cfg.seed],
        file_names(&["policy.json", "snapshots.json", "trace.csv"]),
    )?
    .write(&out.join("manifest.json"))?;
    match cfg.output {
        OutputRule::Mixture => log::info!(
            "trained {} rounds; the output is the mixture of snapshots.json",
            cfg.outer_rounds
        ),
        OutputRule::RandomSnapshot => log::info!(
            "trained {} rounds; selected snapshot {}",
            cfg.outer_rounds,
            result.trace.selected + 1
        ),
    }
    Ok(())
}

fn ci_cmd(
    dataset: &Path,
    policy: &Path,
    delta: f64,
    lambda: f64,
    cfg: &CiConfig,
    env: Option<&EnvDescriptor>,
    out: Option<&Path>,
) -> Result<()> {
    let mut ds = load_dataset::<f64>(dataset)?;
    if let Some(EnvDescriptor::Regret(r)) = env {
        ds = r.tabularize(&ds)?;
    }
    let pi: Policy<f64> = read_json(policy)?;
    let fm = match &pi {
        Policy::Tabular(t) => FeatureMap::tabular(t.num_states(), t.num_actions()),
        Policy::Softmax(p) => p.features.clone(),
    };
    let det = DetectionFunction::quadratic(cfg.tau_cap);
    let ci = confidence_interval(&pi, &ds, &fm, &det, lambda, delta, cfg)?;
    let json = serde_json::json!({
        "lower": ci.lower,
        "upper": ci.upper,
        "sigma_n": ci.sigma_n,
        "delta": delta,
    });
    match out {
        Some(p) => write_json(p, &json),
        None => {
            println!("{}", serde_json::to_string_pretty(&json)?);
            Ok(())
        }
    }
}

fn regret_cmd(spec: &RegretSweepSpec, out: &Path) -> Result<()> {
    let table = regret_sweep(spec)?;
    out_dir(out)?;
    write_csv(&out.join("regret_rows.csv"), &table.rows)?;
    write_csv(&out.join("regret_summary.csv"), &table.summary)?;
    let means: Vec<f64> = table.summary.iter().map(|s| s.mean).collect();
    let fit = match slope_fit(&table.points()) {
        Ok(f) => serde_json::to_value(f)?,
        Err(e) => serde_json::json!({ "error": e.to_string() }),
    };
    write_json(
        &out.join("regret_fit.json"),
        &serde_json::json!({
            "fit": fit,
            "decreasing_steps": decreasing_steps(&means),
            "behavior_regret": table.behavior_regret,
        }),
    )?;
    let seeds = (0..spec.seeds as u64).map(|k| spec.train.seed + k).collect();
    RunManifest::new(
        "regret-sweep",
        spec,
        seeds,
        file_names(&["regret_rows.csv", "regret_summary.csv", "regret_fit.json"]),
    )?
    .write(&out.join("manifest.json"))?;
    for s in &table.summary {
        log::info!("n={} regret {:.4} ± {:.4}", s.n, s.mean, s.stderr);
    }
    Ok(())
}

fn coverage_cmd(spec: &CoverageSpec, out: &Path) -> Result<()> {
    let rep = coverage_experiment(spec)?;
    out_dir(out)?;
    write_csv(&out.join("coverage_rows.csv"), &rep.rows)?;
    write_json(
        &out.join("coverage_summary.json"),
        &serde_json::json!({
            "truth": rep.truth,
            "coverage": rep.coverage,
            "mean_width": rep.mean_width,
            "threshold": rep.threshold,
            "passes": rep.passes(),
        }),
    )?;
    let seeds = (0..spec.reps as u64).map(|k| spec.seed + k).collect();
    RunManifest::new(
        "coverage",
        spec,
        seeds,
        file_names(&["coverage_rows.csv", "coverage_summary.json"]),
    )?
    .write(&out.join("manifest.json"))?;
    log::info!("coverage {:.3} (threshold {:.3})", rep.coverage, rep.threshold);
    Ok(())
}

fn explore_cmd(spec: &ExploreSpec, out: &Path) -> Result<()> {
    let rep = exploration_comparison(spec)?;
    out_dir(out)?;
    write_csv(&out.join("explore_rows.csv"), &rep.rows)?;
    write_csv(&out.join("explore_summary.csv"), &rep.summary)?;
    let seeds = (0..spec.seeds as u64).map(|k| spec.train.seed + k).collect();
    RunManifest::new(
        "explore-compare",
        spec,
        seeds,
        file_names(&["explore_rows.csv", "explore_summary.csv"]),
    )?
    .write(&out.join("manifest.json"))?;
    for s in &rep.summary {
        log::info!(
            "alpha={} behavior {:.4} trained {:.4} ± {:.4}",
            s.alpha,
            s.behavior_return,
            s.trained_mean,
            s.trained_stderr
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct SensitivityRow {
    lambda: f64,
    c_star: f64,
    mean: f64,
    std: f64,
    rule: bool,
}

fn sensitivity_cmd(spec: &SensitivitySpec, out: &Path) -> Result<()> {
    let rep = sensitivity_grid(spec)?;
    out_dir(out)?;
    let row = |c: &bilevel::experiments::SensitivityCell, rule| SensitivityRow {
        lambda: c.lambda,
        c_star: c.c_star,
        mean: c.mean,
        std: c.std,
        rule,
    };
    let mut rows: Vec<SensitivityRow> = rep.cells.iter().map(|c| row(c, false)).collect();
    rows.push(row(&rep.rule, true));
    write_csv(&out.join("sensitivity.csv"), &rows)?;
    write_json(
        &out.join("sensitivity_summary.json"),
        &serde_json::json!({
            "best": rep.cells[rep.best],
            "rule": rep.rule,
            "rule_within_one_std": rep.rule_within_one_std,
            "mid_grid_spread": rep.mid_grid_spread(),
        }),
    )?;
    let seeds = (0..spec.seeds as u64).map(|k| spec.train.seed + k).collect();
    RunManifest::new(
        "sensitivity",
        spec,
        seeds,
        file_names(&["sensitivity.csv", "sensitivity_summary.json"]),
    )?
    .write(&out.join("manifest.json"))?;
    log::info!(
        "best cell lambda={} c*={} ({:.4}); rule cell {:.4}",
        rep.cells[rep.best].lambda,
        rep.cells[rep.best].c_star,
        rep.cells[rep.best].mean,
        rep.rule.mean
    );
    Ok(())
}

fn rcn_cmd(
    dataset: &Path,
    desc: &EnvDescriptor,
    policy: Option<&Path>,
    reg: f64,
    samples: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let raw = load_dataset::<f64>(dataset)?;
    let (ds, fm) = prepare(desc, raw)?;
    let pi: Policy<f64> = match policy {
        Some(p) => read_json(p)?,
        None if fm.num_states > 0 => Policy::Tabular(bilevel::approx::TabularPolicy::uniform(fm.num_states, fm.num_actions)),
        None => Policy::Softmax(bilevel::approx::SoftmaxPolicy::uniform(fm.clone(), f64::INFINITY)),
    };
    if matches!(desc, EnvDescriptor::Regret(_)) {
        bail!(
            "diag-rcn needs an environment whose states are the feature states; the regret environment is observed through cells"
        );
    }
    let env = desc.build()?;
    let iota = relative_condition_number(env.as_ref(), &pi, &ds, &fm, reg, samples, seed)?;
    out_dir(out)?;
    #[derive(Serialize)]
    struct Row {
        iota: f64,
        reg: f64,
        samples: usize,
        seed: u64,
    }
    write_csv(
        &out.join("rcn.csv"),
        &[Row {
            iota,
            reg,
            samples,
            seed,
        }],
    )?;
    RunManifest::new("diag-rcn", &(desc, reg, samples, seed), vec![seed], file_names(&["rcn.csv"]))?
        .write(&out.join("manifest.json"))?;
    log::info!("relative condition number {iota:.6}");
    if !iota.is_finite() {
        bail!("relative condition number is not finite");
    }
    Ok(())
}
