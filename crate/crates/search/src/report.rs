//! Final report: per-candidate metrics, rankings, consistency, baselines and
//! provider usage. Output depends only on the run state, so regenerating it
//! from a checkpoint is byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use forge_core::lang::Provenance;
use forge_core::metrics::{aggregate, evaluate_summaries, EpisodeSummary, MetricsError, MetricsTuple};
use forge_core::sim::controllers::{OrcaRobot, SocialForceRobot, StraightLine};
use forge_core::sim::{Scenario, WorkspaceConfig};

use crate::config::RunConfig;
use crate::evolve::{Note, RankOutcome};
use crate::llm::UsageTotals;
use crate::orchestrator::{
    average_metrics, consistency_report, eval_scenarios, load_state, ConsistencyReport, CountMetrics, GenerationRecord,
    OrchestratorError, RunDir, SearchState, Stage,
};

pub const REPORT_SCHEMA: &str = "forge.report.v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub id: String,
    pub program_hash: String,
    pub provenance: Provenance,
    pub pinned: bool,
    pub fell_back: bool,
    pub stage1_score: Option<f64>,
    pub stage2: Option<MetricsTuple>,
    pub stage3: Option<MetricsTuple>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stage3_per_count: Vec<CountMetrics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub name: String,
    pub metrics: MetricsTuple,
    pub per_count: Vec<CountMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestProgram {
    pub id: String,
    pub program_hash: String,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UsageSummary {
    pub totals: UsageTotals,
    pub failed_attempts: u64,
    /// Present only when both token prices are configured.
    pub cost: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub run_seed: u64,
    pub config_digest: String,
    pub dataset_hash: String,
    pub state_digest: String,
    pub complete: bool,
    pub best: Option<BestProgram>,
    pub candidates: Vec<CandidateRow>,
    pub stage1_generations: Vec<GenerationRecord>,
    pub r1: Option<Vec<String>>,
    pub r2: Option<RankOutcome>,
    pub r3: Option<RankOutcome>,
    pub consistency: ConsistencyReport,
    pub baselines: Vec<BaselineRow>,
    pub reflection: Vec<Note>,
    pub usage: UsageSummary,
}

fn baseline<P, F>(make: F, env: &WorkspaceConfig, sets: &[(usize, Vec<Scenario>)]) -> Result<(MetricsTuple, Vec<CountMetrics>), MetricsError>
where
    P: forge_core::sim::RobotPolicy,
    F: Fn() -> P + Sync,
{
    let mut per = Vec::new();
    for (h, scenarios) in sets {
        let cfg = WorkspaceConfig { human_count: *h, ..env.clone() };
        let s: Vec<EpisodeSummary> = evaluate_summaries(&make, scenarios, &cfg, 0)?;
        per.push(CountMetrics { humans: *h, metrics: aggregate(&s, &cfg)? });
    }
    Ok((average_metrics(&per), per))
}

/// Hand-designed controllers on the Stage III evaluation scenarios of the
/// last round.
pub fn evaluate_baselines(cfg: &RunConfig) -> Result<Vec<BaselineRow>, MetricsError> {
    let s = &cfg.search;
    let round = s.g3.saturating_sub(1);
    let env = cfg.full.env_config(&cfg.env);
    let n = s.human_counts.len();
    let sets: Vec<(usize, Vec<Scenario>)> = s
        .human_counts
        .iter()
        .enumerate()
        .map(|(j, &h)| (h, eval_scenarios(&env, cfg.seed, "stage3-eval", round, s.e3 / n + usize::from(j < s.e3 % n), h)))
        .collect();
    let mut rows = Vec::new();
    let (m, p) = baseline(|| StraightLine, &env, &sets)?;
    rows.push(BaselineRow { name: "straight".into(), metrics: m, per_count: p });
    let (m, p) = baseline(OrcaRobot::default, &env, &sets)?;
    rows.push(BaselineRow { name: "orca".into(), metrics: m, per_count: p });
    let (m, p) = baseline(SocialForceRobot::default, &env, &sets)?;
    rows.push(BaselineRow { name: "social_force".into(), metrics: m, per_count: p });
    Ok(rows)
}

pub fn build_report(state: &SearchState, cfg: &RunConfig, baselines: Vec<BaselineRow>) -> Report {
    let candidates = state
        .population
        .iter()
        .map(|c| {
            let s2 = c.latest(2);
            let s3 = c.latest(3);
            CandidateRow {
                id: c.id.clone(),
                program_hash: c.program.hash(),
                provenance: c.program.provenance,
                pinned: c.pinned,
                fell_back: c.fell_back,
                stage1_score: c.stage1.as_ref().map(|s| s.score),
                stage2: s2.and_then(|r| r.metrics.clone()),
                stage3: s3.and_then(|r| r.metrics.clone()),
                stage3_per_count: s3.map(|r| r.per_count.clone()).unwrap_or_default(),
                diagnostics: c.history.iter().filter_map(|r| r.diagnostic.clone()).collect(),
            }
        })
        .collect();
    let totals = state.usage.recomputed_totals();
    let cost = match (cfg.pricing.prompt_per_1k, cfg.pricing.completion_per_1k) {
        (Some(p), Some(c)) => Some(totals.prompt_tokens as f64 / 1000.0 * p + totals.completion_tokens as f64 / 1000.0 * c),
        _ => None,
    };
    let failed_attempts = state.usage.entries.iter().filter(|e| e.outcome != "ok").count() as u64;
    Report {
        schema: REPORT_SCHEMA.into(),
        run_seed: state.run_seed,
        config_digest: state.config_digest.clone(),
        dataset_hash: state.dataset_hash.clone(),
        state_digest: state.digest(),
        complete: state.stage == Stage::Done,
        best: state.best().map(|c| BestProgram { id: c.id.clone(), program_hash: c.program.hash(), source: c.program.canonical() }),
        candidates,
        stage1_generations: state.stage1_history.clone(),
        r1: state.r1.clone(),
        r2: state.r2.clone(),
        r3: state.r3.clone(),
        consistency: consistency_report(state),
        baselines,
        reflection: state.reflection.notes.clone(),
        usage: UsageSummary { totals, failed_attempts, cost },
    }
}

fn na(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

const CSV_HEADER: [&str; 13] = ["kind", "id", "stage", "program_hash", "stage1_score", "SR", "CR", "TR", "NT", "PL", "ITR", "SD", "episodes"];

pub fn metrics_csv(report: &Report) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    let row = |kind: &str, id: &str, stage: &str, hash: &str, s1: Option<f64>, m: Option<&MetricsTuple>| -> Vec<String> {
        let mut r = vec![kind.to_string(), id.to_string(), stage.to_string(), hash.to_string(), na(s1)];
        match m {
            Some(m) => r.extend([
                m.sr.to_string(),
                m.cr.to_string(),
                m.tr.to_string(),
                na(m.nt),
                m.pl.to_string(),
                m.itr.to_string(),
                m.sd.to_string(),
                m.episodes.to_string(),
            ]),
            None => r.extend(std::iter::repeat_n("NA".to_string(), 8)),
        }
        r
    };
    for c in &report.candidates {
        w.write_record(row("candidate", &c.id, "2", &c.program_hash, c.stage1_score, c.stage2.as_ref()))?;
        w.write_record(row("candidate", &c.id, "3", &c.program_hash, c.stage1_score, c.stage3.as_ref()))?;
    }
    for b in &report.baselines {
        w.write_record(row("baseline", &b.name, "3", "", None, Some(&b.metrics)))?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn summary_text(report: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "run seed {}  config {}  dataset {}", report.run_seed, &report.config_digest[..12], &report.dataset_hash[..12.min(report.dataset_hash.len())]);
    let _ = writeln!(s, "complete: {}", report.complete);
    match &report.best {
        Some(b) => {
            let _ = writeln!(s, "best: {} ({})\n{}\n", b.id, &b.program_hash[..12], b.source);
        }
        None => s.push_str("best: none\n\n"),
    }
    let fmt = |m: Option<&MetricsTuple>| m.map_or_else(|| "NA".to_string(), crate::prompts::format_metrics);
    for c in &report.candidates {
        let _ = writeln!(s, "{}  stage1 {}  stage2 {}", c.id, na(c.stage1_score), fmt(c.stage2.as_ref()));
        let _ = writeln!(s, "{:5} stage3 {}", "", fmt(c.stage3.as_ref()));
    }
    for b in &report.baselines {
        let _ = writeln!(s, "baseline {}  {}", b.name, fmt(Some(&b.metrics)));
    }
    let pair = |p: &Option<crate::orchestrator::PairConsistency>| {
        p.as_ref().map_or_else(
            || "NA".to_string(),
            |p| {
                let tops: Vec<String> = p.top_k.iter().map(|t| format!("top{}={}", t.k, t.preserved)).collect();
                format!("rho={} over {} ({})", p.rho, p.common, tops.join(" "))
            },
        )
    };
    let _ = writeln!(s, "stage I vs II: {}", pair(&report.consistency.stage_1_2));
    let _ = writeln!(s, "stage II vs III: {}", pair(&report.consistency.stage_2_3));
    let u = &report.usage;
    let _ = writeln!(
        s,
        "provider: {} requests, {} prompt tokens, {} completion tokens, {} failed attempts, cost {}",
        u.totals.requests,
        u.totals.prompt_tokens,
        u.totals.completion_tokens,
        u.failed_attempts,
        na(u.cost)
    );
    s
}

/// Writes `report.json`, `metrics.csv` and `summary.txt` under `report/`.
pub fn emit_report(cfg: &RunConfig, dir: &RunDir) -> Result<Report, OrchestratorError> {
    let state = load_state(dir)?;
    let baselines = evaluate_baselines(cfg).map_err(|e| OrchestratorError::Invariant(format!("baseline evaluation: {e}")))?;
    let report = build_report(&state, cfg, baselines);
    write_report(&report, &dir.report())?;
    Ok(report)
}

pub fn write_report(report: &Report, out: &Path) -> Result<(), OrchestratorError> {
    fs::create_dir_all(out)?;
    fs::write(out.join("report.json"), serde_json::to_vec_pretty(report)?)?;
    fs::write(out.join("metrics.csv"), metrics_csv(report).map_err(|e| OrchestratorError::Invariant(e.to_string()))?)?;
    fs::write(out.join("summary.txt"), summary_text(report))?;
    Ok(())
}
