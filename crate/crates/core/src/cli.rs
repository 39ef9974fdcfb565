//! Command-line front end.
//!
//! Subcommands: `gen-synth` builds a synthetic pool, `train` fits one
//! run, `protocol` sweeps every domain as the held-out target over
//! several seeds, `eval` re-scores a saved run, `analyze` emits
//! specialty/divergence/importance CSVs, and `baseline` measures the
//! reference ensembles. All progress output is single-line `key=value`
//! records on stdout.
//!
//! Exit codes: 0 success, 2 usage or config errors, 3 refusing to
//! replace existing output without `--force`, 4 runtime failures.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::SedgeError;
use crate::eval::{evaluate, run_protocol, split_dataset, write_report, ProtocolConfig};
use crate::pool::PoolCache;
use crate::specialty::{
    aggregate_specialty, kl_matrix, mean_offdiag, minmax_normalize, model_importance,
    write_importance_csv, write_kl_csv, write_specialty_csv, SpecialtyLevel,
};
use crate::synth::{
    baseline_best_single, baseline_random_ensemble, baseline_uniform, generate_pool,
    train_uniform_adapter, GenConfig,
};
use crate::train::{load_run, save_run, train, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFLICT: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Parser)]
#[command(
    name = "sedge",
    version,
    about = "Specialty-aware ensembles over cached frozen-model outputs"
)]
struct Cli {
    /// Base seed; overrides the seed in any config file.
    #[arg(long, global = true, env = "SEDGE_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic pool with planted per-model specialties.
    GenSynth {
        /// Output pool directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Generator config JSON; defaults apply when omitted.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Replace existing non-empty output.
        #[arg(long)]
        force: bool,
    },
    /// Train a dispatcher and adapters for one held-out target domain.
    Train {
        /// Pool directory.
        #[arg(long, value_name = "DIR")]
        pool: PathBuf,
        /// Held-out target domain name.
        #[arg(long, value_name = "NAME")]
        target: String,
        /// Training config JSON; defaults apply when omitted.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Run directory to save parameters, history, and summary.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Replace existing non-empty output.
        #[arg(long)]
        force: bool,
    },
    /// Rotate every domain as target over several seeds and aggregate.
    Protocol {
        /// Pool directory.
        #[arg(long, value_name = "DIR")]
        pool: PathBuf,
        /// Training config JSON; defaults apply when omitted.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Output directory for the report and per-run directories.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Seeds per target; run s uses base seed + s.
        #[arg(long, value_name = "N")]
        seeds: Option<usize>,
        /// Worker threads; 1 runs sequentially.
        #[arg(long, value_name = "N")]
        jobs: Option<usize>,
        /// Replace existing non-empty output.
        #[arg(long)]
        force: bool,
    },
    /// Score a saved run on a chosen split.
    Eval {
        /// Pool directory.
        #[arg(long, value_name = "DIR")]
        pool: PathBuf,
        /// Run directory produced by train or protocol.
        #[arg(long, value_name = "DIR")]
        run: PathBuf,
        /// Split to score.
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Target domain; defaults to the run's training target.
        #[arg(long, value_name = "NAME")]
        target: Option<String>,
    },
    /// Emit specialty, divergence, or dispatch-importance CSVs.
    Analyze {
        /// Pool directory.
        #[arg(long, value_name = "DIR")]
        pool: PathBuf,
        /// Run directory providing the trained parameters.
        #[arg(long, value_name = "DIR")]
        run: Option<PathBuf>,
        /// Which analysis to emit.
        #[arg(long, value_enum)]
        what: WhatArg,
        /// Grouping for specialty and kl.
        #[arg(long, value_enum, default_value_t = LevelArg::Domain)]
        level: LevelArg,
        /// Output directory for the CSV files.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Replace existing non-empty output.
        #[arg(long)]
        force: bool,
    },
    /// Measure a reference ensemble on held-out targets.
    Baseline {
        /// Pool directory.
        #[arg(long, value_name = "DIR")]
        pool: PathBuf,
        /// Which baseline to run.
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Models per sample for the random baseline.
        #[arg(long, value_name = "N", default_value_t = 6)]
        k: usize,
        /// Training config JSON; defaults apply when omitted.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Single target domain; defaults to rotating all domains.
        #[arg(long, value_name = "NAME")]
        target: Option<String>,
        /// Directory whose baseline.csv collects the results.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Start baseline.csv afresh instead of appending.
        #[arg(long)]
        force: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl SplitArg {
    fn as_str(&self) -> &'static str {
        match self {
            SplitArg::Train => "train",
            SplitArg::Val => "val",
            SplitArg::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WhatArg {
    Specialty,
    Kl,
    Importance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LevelArg {
    Domain,
    Class,
}

impl LevelArg {
    fn to_level(self) -> SpecialtyLevel {
        match self {
            LevelArg::Domain => SpecialtyLevel::Domain,
            LevelArg::Class => SpecialtyLevel::Class,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MethodArg {
    Uniform,
    Random,
    BestSingle,
}

impl ValueEnum for MethodArg {
    fn value_variants<'a>() -> &'a [Self] {
        &[MethodArg::Uniform, MethodArg::Random, MethodArg::BestSingle]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.as_str()))
    }
}

impl MethodArg {
    fn as_str(&self) -> &'static str {
        match self {
            MethodArg::Uniform => "uniform",
            MethodArg::Random => "random",
            MethodArg::BestSingle => "best-single",
        }
    }
}

/// Command failure carrying its exit code class.
enum CmdError {
    Usage(String),
    Conflict(String),
    Runtime(String),
}

impl From<SedgeError> for CmdError {
    fn from(e: SedgeError) -> Self {
        match &e {
            SedgeError::InvalidArgument(_) | SedgeError::UnknownDomain { .. } => {
                CmdError::Usage(e.to_string())
            }
            _ => CmdError::Runtime(e.to_string()),
        }
    }
}

fn load_json_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CmdError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CmdError::Usage(format!("cannot read config {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text).map_err(|e| {
        CmdError::Usage(format!("config {} is not valid: {e}", path.display()))
    })
}

/// Ensures `dir` exists and is empty, deleting a prior version only
/// under --force.
fn prepare_out_dir(dir: &Path, force: bool) -> Result<(), CmdError> {
    if dir.exists() {
        let non_empty = dir.is_file()
            || std::fs::read_dir(dir)
                .map(|mut it| it.next().is_some())
                .unwrap_or(true);
        if non_empty {
            if !force {
                return Err(CmdError::Conflict(format!(
                    "output {} already exists and is not empty; pass --force to replace it",
                    dir.display()
                )));
            }
            let removed = if dir.is_file() {
                std::fs::remove_file(dir)
            } else {
                std::fs::remove_dir_all(dir)
            };
            removed.map_err(|e| {
                CmdError::Runtime(format!("cannot clear {}: {e}", dir.display()))
            })?;
        }
    }
    std::fs::create_dir_all(dir)
        .map_err(|e| CmdError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_pretty_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CmdError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CmdError::Runtime(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| CmdError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Entry point for the installed binary.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Parses and executes one invocation; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let seed = cli.seed;
    let result = match cli.cmd {
        Cmd::GenSynth { out, config, force } => cmd_gen_synth(seed, &out, config.as_deref(), force),
        Cmd::Train {
            pool,
            target,
            config,
            out,
            force,
        } => cmd_train(seed, &pool, &target, config.as_deref(), out.as_deref(), force),
        Cmd::Protocol {
            pool,
            config,
            out,
            seeds,
            jobs,
            force,
        } => cmd_protocol(seed, &pool, config.as_deref(), &out, seeds, jobs, force),
        Cmd::Eval {
            pool,
            run,
            split,
            target,
        } => cmd_eval(&pool, &run, split, target.as_deref()),
        Cmd::Analyze {
            pool,
            run,
            what,
            level,
            out,
            force,
        } => cmd_analyze(&pool, run.as_deref(), what, level, &out, force),
        Cmd::Baseline {
            pool,
            method,
            k,
            config,
            target,
            out,
            force,
        } => cmd_baseline(
            seed,
            &pool,
            method,
            k,
            config.as_deref(),
            target.as_deref(),
            out.as_deref(),
            force,
        ),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(CmdError::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(CmdError::Conflict(m)) => {
            eprintln!("error: {m}");
            EXIT_CONFLICT
        }
        Err(CmdError::Runtime(m)) => {
            eprintln!("error: {m}");
            EXIT_RUNTIME
        }
    }
}

fn cmd_gen_synth(
    seed: Option<u64>,
    out: &Path,
    config: Option<&Path>,
    force: bool,
) -> Result<(), CmdError> {
    let mut cfg: GenConfig = match config {
        Some(path) => load_json_config(path)?,
        None => GenConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    prepare_out_dir(out, force)?;
    let pool = generate_pool(&cfg, out)?;
    println!(
        "event=pool_generated dir={} pool={} models={} domains={} classes={} samples={}",
        out.display(),
        pool.manifest.pool_name,
        pool.manifest.num_models(),
        pool.manifest.domains.len(),
        pool.manifest.num_classes,
        pool.num_samples()
    );
    Ok(())
}

fn resolved_train_config(
    seed: Option<u64>,
    config: Option<&Path>,
) -> Result<TrainConfig, CmdError> {
    let mut cfg: TrainConfig = match config {
        Some(path) => load_json_config(path)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(
    seed: Option<u64>,
    pool_dir: &Path,
    target: &str,
    config: Option<&Path>,
    out: Option<&Path>,
    force: bool,
) -> Result<(), CmdError> {
    let pool = PoolCache::load(pool_dir)?;
    let target_id = pool.manifest.domain_id(target)?;
    let cfg = resolved_train_config(seed, config)?;
    if let Some(dir) = out {
        prepare_out_dir(dir, force)?;
    }
    let artifacts = train(&pool, target_id, &cfg)?;
    println!(
        "event=trained target={} seed={} best_iter={} stopped_early={} averaged={} \
         train_acc={} val_acc={} test_acc={}",
        target,
        cfg.seed,
        artifacts.best_iter,
        artifacts.stopped_early,
        artifacts.averaged,
        artifacts.metrics.train_acc,
        artifacts.metrics.val_acc,
        artifacts.metrics.test_acc
    );
    if let Some(dir) = out {
        save_run(&artifacts, &pool, dir)?;
        println!("event=run_saved dir={}", dir.display());
    }
    Ok(())
}

fn cmd_protocol(
    seed: Option<u64>,
    pool_dir: &Path,
    config: Option<&Path>,
    out: &Path,
    seeds: Option<usize>,
    jobs: Option<usize>,
    force: bool,
) -> Result<(), CmdError> {
    let pool = PoolCache::load(pool_dir)?;
    let defaults = ProtocolConfig::default();
    let pcfg = ProtocolConfig {
        train: resolved_train_config(seed, config)?,
        num_seeds: seeds.unwrap_or(defaults.num_seeds),
        jobs: jobs.unwrap_or(defaults.jobs),
    };
    prepare_out_dir(out, force)?;
    let (report, artifacts) = run_protocol(&pool, &pcfg)?;
    write_report(&report, out)?;
    write_pretty_json(&out.join("protocol_config.json"), &pcfg)?;
    for art in &artifacts {
        let name = format!(
            "{}_s{}",
            pool.manifest.domains[art.target_domain], art.config.seed
        );
        let run_dir = out.join("runs").join(name);
        std::fs::create_dir_all(&run_dir)
            .map_err(|e| CmdError::Runtime(format!("cannot create {}: {e}", run_dir.display())))?;
        save_run(art, &pool, &run_dir)?;
    }
    for row in &report.rows {
        println!(
            "event=cell target={} seed={} best_iter={} val_acc={} test_acc={}",
            row.target_domain, row.seed, row.best_iter, row.val_acc, row.test_acc
        );
    }
    for d in &report.domains {
        println!(
            "event=domain_summary target={} mean_test_acc={} std_test_acc={}",
            d.target_domain, d.mean_test_acc, d.std_test_acc
        );
    }
    println!(
        "event=protocol pool={} cells={} grand_mean_test_acc={}",
        report.pool_name,
        report.rows.len(),
        report.grand_mean_test_acc
    );
    Ok(())
}

fn cmd_eval(
    pool_dir: &Path,
    run_dir: &Path,
    split: SplitArg,
    target: Option<&str>,
) -> Result<(), CmdError> {
    let pool = PoolCache::load(pool_dir)?;
    let (params, summary) = load_run(run_dir, &pool)?;
    let target_name = target.unwrap_or(&summary.target_domain);
    let target_id = pool.manifest.domain_id(target_name)?;
    let spec = split_dataset(&pool, target_id, summary.config.seed)?;
    let indices = match split {
        SplitArg::Train => &spec.train,
        SplitArg::Val => &spec.val,
        SplitArg::Test => &spec.test,
    };
    let acc = evaluate(
        &pool,
        &params,
        indices,
        summary.config.top_k,
        summary.config.combine,
    )?;
    println!(
        "event=eval run={} target={} split={} samples={} acc={}",
        run_dir.display(),
        target_name,
        split.as_str(),
        indices.len(),
        acc
    );
    Ok(())
}

fn cmd_analyze(
    pool_dir: &Path,
    run_dir: Option<&Path>,
    what: WhatArg,
    level: LevelArg,
    out: &Path,
    force: bool,
) -> Result<(), CmdError> {
    let pool = PoolCache::load(pool_dir)?;
    let run_dir = run_dir.ok_or_else(|| {
        CmdError::Usage(
            "--run is required; analysis reads trained parameters from a run directory"
                .to_string(),
        )
    })?;
    let (params, _summary) = load_run(run_dir, &pool)?;
    prepare_out_dir(out, force)?;
    match what {
        WhatArg::Specialty => {
            let level = level.to_level();
            let m = minmax_normalize(&aggregate_specialty(&pool, &params, level)?);
            let path = out.join(format!("specialty_{}.csv", level.as_str()));
            write_specialty_csv(&path, &m, &pool)?;
            println!(
                "event=analyze what=specialty level={} out={}",
                level.as_str(),
                path.display()
            );
        }
        WhatArg::Kl => {
            let level = level.to_level();
            let m = minmax_normalize(&aggregate_specialty(&pool, &params, level)?);
            let kl = kl_matrix(&m)?;
            let path = out.join(format!("kl_{}.csv", level.as_str()));
            write_kl_csv(&path, &kl, &m.group_names)?;
            println!(
                "event=analyze what=kl level={} mean_offdiag={} out={}",
                level.as_str(),
                mean_offdiag(&kl),
                path.display()
            );
        }
        WhatArg::Importance => {
            for (d, name) in pool.manifest.domains.iter().enumerate() {
                let indices = pool.domain_indices(d);
                let entries = model_importance(&pool, &params, &indices)?;
                write_importance_csv(&out.join(format!("importance_{name}.csv")), &entries)?;
            }
            println!(
                "event=analyze what=importance files={} out={}",
                pool.manifest.domains.len(),
                out.display()
            );
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_baseline(
    seed: Option<u64>,
    pool_dir: &Path,
    method: MethodArg,
    k: usize,
    config: Option<&Path>,
    target: Option<&str>,
    out: Option<&Path>,
    force: bool,
) -> Result<(), CmdError> {
    let pool = PoolCache::load(pool_dir)?;
    let cfg = resolved_train_config(seed, config)?;
    let num_models = pool.manifest.num_models();
    if method == MethodArg::Random && (k == 0 || k > num_models) {
        return Err(CmdError::Usage(format!(
            "--k {k} must be in 1..={num_models} for the random baseline"
        )));
    }
    let targets: Vec<usize> = match target {
        Some(name) => vec![pool.manifest.domain_id(name)?],
        None => (0..pool.manifest.domains.len()).collect(),
    };
    let mut rows = Vec::new();
    for t in targets {
        let name = pool.manifest.domains[t].clone();
        let (acc, used_k, extra) = match method {
            MethodArg::Uniform => {
                let art = train_uniform_adapter(&pool, t, &cfg)?;
                let split = split_dataset(&pool, t, cfg.seed)?;
                let acc = baseline_uniform(&pool, &art.best_params, &split.test)?;
                (acc, num_models, String::new())
            }
            MethodArg::Random => {
                let art = train_uniform_adapter(&pool, t, &cfg)?;
                let split = split_dataset(&pool, t, cfg.seed)?;
                let acc =
                    baseline_random_ensemble(&pool, &art.best_params, &split.test, k, cfg.seed)?;
                (acc, k, String::new())
            }
            MethodArg::BestSingle => {
                let outcome = baseline_best_single(&pool, t, &cfg)?;
                let extra = format!(
                    " best_model={}",
                    pool.manifest.models[outcome.best_model].name
                );
                (outcome.best_test_acc, 1, extra)
            }
        };
        println!(
            "event=baseline method={} target={} seed={} k={} test_acc={}{}",
            method.as_str(),
            name,
            cfg.seed,
            used_k,
            acc,
            extra
        );
        rows.push(format!("{},{},{},{},{}", method.as_str(), name, cfg.seed, used_k, acc));
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)
            .map_err(|e| CmdError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join("baseline.csv");
        if force && path.exists() {
            std::fs::remove_file(&path)
                .map_err(|e| CmdError::Runtime(format!("cannot clear {}: {e}", path.display())))?;
        }
        let mut text = if path.exists() {
            std::fs::read_to_string(&path)
                .map_err(|e| CmdError::Runtime(format!("cannot read {}: {e}", path.display())))?
        } else {
            String::from("method,target_domain,seed,k,test_acc\n")
        };
        for row in &rows {
            text.push_str(row);
            text.push('\n');
        }
        std::fs::write(&path, &text)
            .map_err(|e| CmdError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        println!("event=baseline_saved file={}", path.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn bad_usage_exits_2() {
        assert_eq!(run_from(args(&["sedge", "no-such-command"])), EXIT_USAGE);
        assert_eq!(run_from(args(&["sedge", "train"])), EXIT_USAGE);
        assert_eq!(
            run_from(args(&["sedge", "baseline", "--pool", "x", "--method", "bogus"])),
            EXIT_USAGE
        );
    }

    #[test]
    fn help_and_version_exit_0() {
        assert_eq!(run_from(args(&["sedge", "--help"])), EXIT_OK);
        assert_eq!(run_from(args(&["sedge", "--version"])), EXIT_OK);
    }

    #[test]
    fn malformed_config_exits_2() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.json");
        std::fs::write(&cfg, "{ not json").unwrap();
        let out = dir.path().join("pool");
        let code = run_from(args(&[
            "sedge",
            "gen-synth",
            "--out",
            out.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
        ]));
        assert_eq!(code, EXIT_USAGE);

        let unknown = dir.path().join("unknown.json");
        std::fs::write(&unknown, "{\"no_such_field\": 1}").unwrap();
        let code = run_from(args(&[
            "sedge",
            "gen-synth",
            "--out",
            out.to_str().unwrap(),
            "--config",
            unknown.to_str().unwrap(),
        ]));
        assert_eq!(code, EXIT_USAGE, "unknown fields are rejected");
    }

    #[test]
    fn occupied_output_exits_3_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("pool");
        std::fs::create_dir_all(&out).unwrap();
        std::fs::write(out.join("keep.txt"), "x").unwrap();
        let cfg = dir.path().join("tiny.json");
        std::fs::write(
            &cfg,
            r#"{"num_domains": 2, "num_classes": 2, "samples_per_domain": 10,
                "embed_dim": 3,
                "groups": [{"name": "g", "c_o": 3}], "model_groups": [0]}"#,
        )
        .unwrap();
        let base = args(&[
            "sedge",
            "gen-synth",
            "--out",
            out.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
        ]);
        assert_eq!(run_from(base.clone()), EXIT_CONFLICT);
        assert!(out.join("keep.txt").exists(), "refused run must not delete");

        let mut forced = base;
        forced.push("--force".to_string());
        assert_eq!(run_from(forced), EXIT_OK);
        assert!(!out.join("keep.txt").exists());
        assert!(out.join("manifest.json").exists());
    }

    #[test]
    fn missing_pool_exits_4() {
        let code = run_from(args(&[
            "sedge",
            "train",
            "--pool",
            "/no/such/pool",
            "--target",
            "d0",
        ]));
        assert_eq!(code, EXIT_RUNTIME);
    }

    #[test]
    fn unknown_domain_exits_2_listing_valid_names() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("pool");
        let cfg = dir.path().join("tiny.json");
        std::fs::write(
            &cfg,
            r#"{"num_domains": 2, "num_classes": 2, "samples_per_domain": 10,
                "embed_dim": 3,
                "groups": [{"name": "g", "c_o": 3}], "model_groups": [0]}"#,
        )
        .unwrap();
        assert_eq!(
            run_from(args(&[
                "sedge",
                "gen-synth",
                "--out",
                out.to_str().unwrap(),
                "--config",
                cfg.to_str().unwrap(),
            ])),
            EXIT_OK
        );
        let code = run_from(args(&[
            "sedge",
            "train",
            "--pool",
            out.to_str().unwrap(),
            "--target",
            "nowhere",
        ]));
        assert_eq!(code, EXIT_USAGE);
    }
}
