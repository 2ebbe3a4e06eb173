use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use fairgrape::data::save_csv;
use fairgrape::harness::{
    compare_dirs, layer_share_report, max_share_deviation, run_sweep, stage_eval, stage_prune,
    stage_train, trial_data, write_layer_shares_csv, DataSource, ExperimentConfig, RunManifest,
};
use fairgrape::importance::read_importance_csv;
use fairgrape::pruners::Method;

#[derive(Parser)]
#[command(
    name = "fairgrape",
    version,
    about = "Fairness-aware pruning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat key = value experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this seed instead of run.seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Pruning method(s), comma separated.
    #[arg(long)]
    method: Option<String>,
    /// Fraction(s) of weights removed, comma separated.
    #[arg(long)]
    sparsity: Option<String>,
    /// Output directory; overrides run.out.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset of each seed as CSV under OUT/data.
    Synth(Common),
    /// Train and checkpoint reference models.
    Train(Common),
    /// Prune saved reference models.
    Prune(Common),
    /// Evaluate saved reference and pruned models and write seed reports.
    Eval(Common),
    /// Full pipeline for every method and sparsity.
    Run(Common),
    /// Comparison table over finished runs.
    Compare {
        /// Run directories, or sweep roots holding one run per subdirectory.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write comparison.csv and comparison.txt here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-layer group importance shares of a finished run.
    ReportLayers {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &c.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| {
                fairgrape::Error::Config(format!("cannot read {}: {e}", p.display()))
            })?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::parse("")?,
    };
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(m) = &c.method {
        cfg.methods = m
            .split(',')
            .map(|s| {
                Method::parse(s.trim()).ok_or_else(|| {
                    fairgrape::Error::Config(format!("unknown method '{}'", s.trim()))
                })
            })
            .collect::<std::result::Result<_, _>>()?;
    }
    if let Some(s) = &c.sparsity {
        cfg.sparsities = s
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| *x > 0.0 && *x < 1.0)
                    .ok_or_else(|| fairgrape::Error::Config(format!("bad sparsity '{}'", v.trim())))
            })
            .collect::<std::result::Result<_, _>>()?;
    }
    let out = c.out.clone().or_else(|| cfg.out.clone()).ok_or_else(|| {
        fairgrape::Error::Config("no output directory: pass --out or set run.out".into())
    })?;
    cfg.prune.method = cfg.methods[0];
    cfg.prune.target_keep = 1.0 - cfg.sparsities[0];
    cfg.check_paths()?;
    Ok((cfg, out))
}

fn single_run(cfg: &ExperimentConfig, what: &str) -> Result<()> {
    if cfg.methods.len() != 1 || cfg.sparsities.len() != 1 {
        return Err(fairgrape::Error::Config(format!(
            "{what} takes a single method and sparsity; use run for sweeps"
        ))
        .into());
    }
    Ok(())
}

/// Run directories under each argument: the directory itself if it holds a
/// manifest, else its immediate subdirectories that do.
fn expand_runs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.join("manifest.json").is_file() {
            out.push(p.clone());
            continue;
        }
        let mut subs: Vec<PathBuf> = fs::read_dir(p)
            .with_context(|| format!("reading {}", p.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| d.join("manifest.json").is_file())
            .collect();
        if subs.is_empty() {
            return Err(
                fairgrape::Error::Data(format!("{} holds no run manifest", p.display())).into(),
            );
        }
        subs.sort();
        out.extend(subs);
    }
    Ok(out)
}

fn report_layers(dir: &Path) -> Result<()> {
    let m = RunManifest::load(dir)?;
    for s in &m.seeds {
        let read = |tag: &str| -> Result<_> {
            let p = dir.join(format!("tables/importance_{tag}_seed{}.csv", s.seed));
            let f = fs::File::open(&p)
                .map_err(|e| fairgrape::Error::Data(format!("{}: {e}", p.display())))?;
            Ok(read_importance_csv(f)?)
        };
        let rows = layer_share_report(&read("reference")?, &read("pruned")?)?;
        let path = dir.join(format!("tables/layer_shares_seed{}.csv", s.seed));
        write_layer_shares_csv(&rows, fs::File::create(&path)?)?;
        println!(
            "seed {}: max share deviation {:.4} -> {}",
            s.seed,
            max_share_deviation(&rows),
            path.display()
        );
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(c) => {
            let (cfg, out) = load_config(&c)?;
            if !matches!(cfg.data, DataSource::Synthetic { .. }) {
                return Err(
                    fairgrape::Error::Config("synth needs data.source = synthetic".into()).into(),
                );
            }
            for &seed in &cfg.seeds {
                let path = out.join(format!("data/synthetic_seed{seed}.csv"));
                save_csv(&trial_data(&cfg, seed)?, &path)?;
                println!("{}", path.display());
            }
        }
        Command::Train(c) => {
            let (cfg, out) = load_config(&c)?;
            for &seed in &cfg.seeds {
                let a = stage_train(&cfg, seed, &out)?;
                println!("seed {seed}: {} {}", a.path, a.sha256);
            }
        }
        Command::Prune(c) => {
            let (cfg, out) = load_config(&c)?;
            single_run(&cfg, "prune")?;
            for &seed in &cfg.seeds {
                let a = stage_prune(&cfg, seed, &out)?;
                println!("seed {seed}: {} {}", a.pruned.path, a.pruned.sha256);
            }
        }
        Command::Eval(c) => {
            let (cfg, out) = load_config(&c)?;
            single_run(&cfg, "eval")?;
            for &seed in &cfg.seeds {
                let (a, _) = stage_eval(&cfg, seed, &out)?;
                println!("seed {seed}: {}", a.path);
            }
        }
        Command::Run(c) => {
            let (cfg, out) = load_config(&c)?;
            let runs = run_sweep(&cfg, &out)?;
            let mut first_failure = None;
            for (dir, m) in &runs {
                println!(
                    "{} sparsity {}: {} seeds ok, {} failed -> {}",
                    m.method.as_str(),
                    m.sparsity,
                    m.seeds.len(),
                    m.failures.len(),
                    dir.display()
                );
                for f in &m.failures {
                    eprintln!("  seed {}: {}", f.seed, f.error);
                    first_failure.get_or_insert(f.exit_code);
                }
            }
            if let Some(code) = first_failure {
                std::process::exit(code);
            }
        }
        Command::Compare { runs, out } => {
            let table = compare_dirs(&expand_runs(&runs)?)?;
            let text = table.to_text();
            print!("{text}");
            if let Some(out) = out {
                fs::create_dir_all(&out)?;
                fs::write(out.join("comparison.csv"), table.to_csv()?)?;
                fs::write(out.join("comparison.txt"), text)?;
            }
        }
        Command::ReportLayers { out } => report_layers(&out)?,
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<fairgrape::Error>() {
        Some(e) => e.exit_code() as u8,
        None if err.downcast_ref::<std::io::Error>().is_some() => 3,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
