use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use forge_core::dataset::{build_dataset, save_dataset};
use forge_core::lang::parse_program;
use forge_search::config::{load_config, RunConfig};
use forge_search::llm::{LlmClient, ProviderKind};
use forge_search::orchestrator::{round_seed, run_pipeline, train_and_evaluate, OrchestratorError, Pipeline, RunDir, RunOptions, Stage};
use forge_search::report::emit_report;

#[derive(Parser)]
#[command(name = "forge", version, about = "Evolve crowd-navigation reward programs")]
struct Cli {
    /// Config file; defaults to the run directory's snapshot, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory; overrides `out_dir`.
    #[arg(long, global = true)]
    run: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use the offline scripted provider.
    #[arg(long, global = true)]
    mock_llm: bool,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    Proxy,
    Full,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the trajectory dataset into the run directory.
    GenDataset,
    /// Run through the end of Stage I.
    Stage1,
    /// Run through the end of Stage II.
    Stage2,
    /// Run through the end of Stage III.
    Stage3,
    /// Run every stage and write the report.
    Run,
    /// Continue an interrupted run and write the report.
    Resume,
    /// Regenerate the report from the run's latest state.
    Report,
    /// Train and evaluate one program file.
    Eval {
        program: PathBuf,
        #[arg(long, value_enum, default_value = "proxy")]
        protocol: Protocol,
        /// Where to save the trained parameters.
        #[arg(long)]
        params_out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Provider(String),
    Invariant(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Config(_) => 1,
            Self::Provider(_) => 2,
            Self::Invariant(_) => 3,
        }
    }
    fn message(&self) -> &str {
        match self {
            Self::Config(m) | Self::Provider(m) | Self::Invariant(m) => m,
        }
    }
}

impl From<OrchestratorError> for Failure {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::Config(_) => Self::Config(e.to_string()),
            OrchestratorError::Provider(_) => Self::Provider(format!("{e}; state is resumable from the last checkpoint")),
            _ => Self::Invariant(e.to_string()),
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<(RunConfig, RunDir), Failure> {
    let snapshot = cli.run.as_ref().map(|r| RunDir::new(r).config()).filter(|p| p.exists());
    let mut cfg = match cli.config.as_ref().or(snapshot.as_ref()) {
        Some(path) => load_config(path).map_err(|e| Failure::Config(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.mock_llm {
        cfg.llm.provider = ProviderKind::Mock;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.llm = cfg.llm.with_env_overrides();
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let dir = RunDir::new(cli.run.clone().unwrap_or_else(|| PathBuf::from(&cfg.out_dir)));
    Ok((cfg, dir))
}

fn client(cfg: &RunConfig, dir: &RunDir) -> Result<LlmClient, Failure> {
    let c = LlmClient::from_config(&cfg.llm).map_err(|e| Failure::Config(format!("llm.mock_script: {e}")))?;
    Ok(c.with_audit_dir(dir.llm()))
}

fn run_until(cfg: &RunConfig, dir: &RunDir, until: Stage) -> Result<(), Failure> {
    let c = client(cfg, dir)?;
    let mut p = Pipeline::new(cfg, dir.clone(), &c, RunOptions { until: Some(until), ..Default::default() })?;
    let s = p.run()?;
    println!("stage {:?} reached after {} checkpoints; state in {}", s.stage, s.checkpoints, dir.state().display());
    Ok(())
}

fn full_run(cfg: &RunConfig, dir: &RunDir) -> Result<(), Failure> {
    let c = client(cfg, dir)?;
    let (_, report) = run_pipeline(cfg, dir, &c, RunOptions::default())?;
    match &report.best {
        Some(b) => println!("best {} ({})\n{}", b.id, &b.program_hash[..12], b.source),
        None => println!("no best program"),
    }
    println!("report in {}", dir.report().display());
    Ok(())
}

fn eval(cfg: &RunConfig, path: &Path, protocol: Protocol, params_out: Option<&Path>) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let program = parse_program(&text, cfg.search.limits).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let s = &cfg.search;
    let (mut tc, episodes, counts, label, stage) = match protocol {
        Protocol::Proxy => (cfg.proxy.clone(), s.e2, vec![cfg.env.human_count], "stage2-eval", 2),
        Protocol::Full => (cfg.full.clone(), s.e3, s.human_counts.clone(), "stage3-eval", 3),
    };
    tc.seed = round_seed(cfg.seed, stage, 0);
    let (params, metrics, per_count, _) =
        train_and_evaluate(&program, &tc, &cfg.env, cfg.seed, label, 0, episodes, &counts).map_err(Failure::Invariant)?;
    if let Some(out) = params_out {
        params.save(out).map_err(|e| Failure::Invariant(e.to_string()))?;
    }
    let json = serde_json::json!({ "program_hash": program.hash(), "metrics": metrics, "per_count": per_count });
    println!("{}", serde_json::to_string_pretty(&json).expect("json"));
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let (cfg, dir) = resolve_config(cli)?;
    if cfg.workers > 0 {
        // Fails only if a pool already exists, which is harmless here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    }
    match &cli.cmd {
        Cmd::GenDataset => {
            let ds = build_dataset(&cfg.env, &cfg.dataset).map_err(|e| Failure::Invariant(e.to_string()))?;
            save_dataset(&ds, &dir.dataset()).map_err(|e| Failure::Invariant(e.to_string()))?;
            println!("dataset {} written to {}", ds.content_hash(), dir.dataset().display());
            Ok(())
        }
        Cmd::Stage1 => run_until(&cfg, &dir, Stage::I),
        Cmd::Stage2 => run_until(&cfg, &dir, Stage::II),
        Cmd::Stage3 => run_until(&cfg, &dir, Stage::III),
        Cmd::Run => full_run(&cfg, &dir),
        Cmd::Resume => {
            if !dir.state().exists() {
                return Err(Failure::Config(format!("nothing to resume in {}", dir.root.display())));
            }
            full_run(&cfg, &dir)
        }
        Cmd::Report => {
            let r = emit_report(&cfg, &dir)?;
            println!("report for state {} in {}", &r.state_digest[..12], dir.report().display());
            Ok(())
        }
        Cmd::Eval { program, protocol, params_out } => eval(&cfg, program, *protocol, params_out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
