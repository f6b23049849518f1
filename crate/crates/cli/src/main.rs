use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qcofr_core::config::RunConfig;
use qcofr_core::interpret::{
    coalition_report, context_at, default_points, expand, export_report, q_similarity, Domain,
    FrozenMixer, DEFAULT_TOP_K,
};
use qcofr_core::trainer::{
    evaluate, read_episode_log, run_training, write_episode_log, Checkpoint, Learner,
};
use qcofr_core::verify::{equivalence_check, igm_consistency, igm_checks, pade_checks, run_suite, Suite, SuiteReport};

#[derive(Parser)]
#[command(name = "qcofr", version, about = "Continued-fraction value mixing for cooperative multi-agent Q-learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dotted-path override, e.g. `trainer.seed=7`. Repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory (default: `<run.out_dir>/<run.name>`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 32)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the episode log and summary (default: next to the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a property suite: pade, grad, igm or env.
    Verify {
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for machine-readable results.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Degree-law, agreement and ladder-equivalence table over depths.
    PadeCheck {
        #[arg(long, default_value_t = 8)]
        max_depth: usize,
        /// Weight draws per depth for the degree law.
        #[arg(long, default_value_t = 100)]
        draws: usize,
        /// Weight draws per depth for agreement and residual structure.
        #[arg(long, default_value_t = 50)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Polynomial expansion, coalition ranking and Q-value similarity.
    Report {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Episode log written by `eval`.
        #[arg(long)]
        log: PathBuf,
        /// Log record whose assistive vector and state are frozen.
        #[arg(long, default_value_t = 0)]
        timestep: usize,
        /// Polynomial degree (default: ladder depth, 1 for the additive mixer).
        #[arg(long)]
        degree: Option<usize>,
        #[arg(long, default_value_t = 0.5)]
        lo: f64,
        #[arg(long, default_value_t = 1.5)]
        hi: f64,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        top_k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn runtime(e: impl std::fmt::Display) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            overrides,
            out,
            seed,
        } => train(&config, overrides, out, seed),
        Command::Eval {
            checkpoint,
            episodes,
            seed,
            out,
        } => eval(&checkpoint, episodes, seed, out),
        Command::Verify { suite, seed, out } => verify(suite, seed, out),
        Command::PadeCheck {
            max_depth,
            draws,
            seeds,
            seed,
        } => pade_check(max_depth, draws, seeds, seed),
        Command::Report {
            checkpoint,
            log,
            timestep,
            degree,
            lo,
            hi,
            top_k,
            out,
        } => report(&checkpoint, &log, timestep, degree, Domain { lo, hi }, top_k, out),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Failure::runtime)?;
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn train(config: &Path, mut overrides: Vec<String>, out: Option<PathBuf>, seed: Option<u64>) -> Result<bool, Failure> {
    let text = std::fs::read_to_string(config)
        .map_err(|e| Failure::Config(format!("{}: {e}", config.display())))?;
    if let Some(s) = seed {
        overrides.push(format!("trainer.seed={s}"));
    }
    let cfg = RunConfig::parse(&text, &overrides).map_err(|e| Failure::Config(e.to_string()))?;
    let out = out.unwrap_or_else(|| Path::new(&cfg.run.out_dir).join(&cfg.run.name));
    let run = run_training(&cfg, Some(&out)).map_err(Failure::runtime)?;
    let s = &run.summary;
    println!(
        "{}: {} steps, {} episodes, {} updates; final eval {:.4} ± {:.4}, best {:.4}",
        s.name, s.steps, s.episodes, s.updates, s.final_eval.mean, s.final_eval.std, s.best_eval
    );
    println!("wrote {}", out.display());
    Ok(true)
}

fn load_learner(checkpoint: &Path) -> Result<Learner, Failure> {
    let ck = Checkpoint::load(checkpoint).map_err(Failure::runtime)?;
    Learner::from_checkpoint(&ck).map_err(Failure::runtime)
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn eval(checkpoint: &Path, episodes: usize, seed: u64, out: Option<PathBuf>) -> Result<bool, Failure> {
    let learner = load_learner(checkpoint)?;
    let mut env = learner.cfg.env.build().map_err(Failure::runtime)?;
    let (summary, eps) = evaluate(env.as_mut(), &learner, episodes, seed).map_err(Failure::runtime)?;
    println!(
        "mean return {:.4} ± {:.4} over {} episodes",
        summary.mean, summary.std, episodes
    );
    let out = out.unwrap_or_else(|| parent_dir(checkpoint));
    std::fs::create_dir_all(&out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    write_episode_log(&out.join("episodes.jsonl"), &eps).map_err(Failure::runtime)?;
    write_json(&out.join("eval.json"), &summary)?;
    Ok(summary.mean.is_finite())
}

fn print_report(report: &SuiteReport) {
    println!("{report}");
}

fn verify(suite: Suite, seed: u64, out: Option<PathBuf>) -> Result<bool, Failure> {
    if suite == Suite::Igm {
        let outcomes = igm_consistency(1000, seed);
        let report = SuiteReport {
            suite,
            checks: igm_checks(&outcomes),
        };
        print_report(&report);
        if let Some(dir) = out {
            std::fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
            write_json(&dir.join("igm_violations.json"), &outcomes)?;
            write_json(&dir.join("verify_igm.json"), &report)?;
        }
        return Ok(report.passed());
    }
    let report = run_suite(suite, seed).map_err(Failure::runtime)?;
    print_report(&report);
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
        write_json(&dir.join(format!("verify_{suite}.json")), &report)?;
    }
    Ok(report.passed())
}

fn pade_check(max_depth: usize, draws: usize, seeds: usize, seed: u64) -> Result<bool, Failure> {
    if max_depth == 0 {
        return Err(Failure::Config("--max-depth must be at least 1".into()));
    }
    let mut checks = pade_checks(max_depth, draws, seeds, seed);
    checks.push(equivalence_check(max_depth.min(6), seeds, seed));
    let report = SuiteReport {
        suite: Suite::Pade,
        checks,
    };
    print_report(&report);
    Ok(report.passed())
}

#[allow(clippy::too_many_arguments)]
fn report(
    checkpoint: &Path,
    log: &Path,
    timestep: usize,
    degree: Option<usize>,
    domain: Domain,
    top_k: usize,
    out: Option<PathBuf>,
) -> Result<bool, Failure> {
    let learner = load_learner(checkpoint)?;
    let records = read_episode_log(log).map_err(Failure::runtime)?;
    let (m, s) = context_at(&learner, &records, timestep).map_err(Failure::runtime)?;
    let frozen = FrozenMixer::new(&learner, m, s).map_err(Failure::runtime)?;
    let degree = degree.unwrap_or(match learner.mixer.cfg.kind {
        qcofr_core::mixer::MixerKind::Vdn => 1,
        qcofr_core::mixer::MixerKind::Cfn => learner.mixer.cfg.depth,
    });
    let n = learner.dims.n_agents;
    let exp = expand(|q| frozen.q_tot(q), n, degree, domain, default_points(degree)).map_err(Failure::runtime)?;
    let coalitions = coalition_report(&exp, top_k);
    let similarity = if n >= 2 {
        Some(q_similarity(&learner, &records, 0).map_err(Failure::runtime)?)
    } else {
        None
    };
    let out = out.unwrap_or_else(|| parent_dir(checkpoint).join("report"));
    export_report(&out, &exp, &coalitions, similarity.as_ref(), frozen.credits()).map_err(Failure::runtime)?;
    println!(
        "degree {} expansion over [{}, {}]^{}: {} terms, grid residual {:.3e}",
        exp.degree,
        domain.lo,
        domain.hi,
        n,
        exp.terms.len(),
        exp.residual
    );
    for (k, c) in coalitions.ranked.iter().enumerate() {
        let agents: Vec<String> = c.agents.iter().map(usize::to_string).collect();
        println!("{:>2}. {{{}}}  {:.6}", k + 1, agents.join(", "), c.weight);
    }
    println!("wrote {}", out.display());
    Ok(true)
}
