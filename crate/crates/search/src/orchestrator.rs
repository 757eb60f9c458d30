//! Three-stage search driver with per-round checkpoints and resume.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use forge_core::dataset::{build_dataset, load_dataset, save_dataset, DatasetError, TrajectoryDataset};
use forge_core::lang::{print_program, seed_program, RewardProgram};
use forge_core::metrics::{aggregate, evaluate_summaries, MetricsTuple};
use forge_core::policy::{train_policy, MeanPolicy, Network, TrainConfig};
use forge_core::rng;
use forge_core::screen::{rank_population, score_stage1, Stage1Score};
use forge_core::sim::{generate_scenario, Scenario, WorkspaceConfig};
use forge_core::stats::spearman;

use crate::config::RunConfig;
use crate::evolve::{fallback_order, llm_rank, propose, update_reflection, ProposeInput, RankOutcome, Reflection};
use crate::llm::{LlmClient, LlmError, UsageLedger};

pub const STATE_SCHEMA: &str = "forge.search-state.v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    I,
    II,
    III,
    #[serde(rename = "done")]
    Done,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountMetrics {
    pub humans: usize,
    pub metrics: MetricsTuple,
}

/// Outcome of training and evaluating one candidate in one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub stage: u8,
    pub round: usize,
    pub program_hash: String,
    pub metrics: Option<MetricsTuple>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_count: Vec<CountMetrics>,
    pub params_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub program: RewardProgram,
    /// The seed: never replaced, so it stays comparable in every stage.
    pub pinned: bool,
    pub fell_back: bool,
    pub stage1: Option<Stage1Score>,
    pub history: Vec<MetricsRecord>,
}

impl Candidate {
    pub fn latest(&self, stage: u8) -> Option<&MetricsRecord> {
        self.history.iter().rev().find(|r| r.stage == stage)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub ranking: Vec<String>,
    pub scores: Vec<(String, f64)>,
    pub best: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub schema: String,
    pub run_seed: u64,
    pub config_digest: String,
    pub dataset_hash: String,
    pub stage: Stage,
    pub g1_done: usize,
    pub g2_done: usize,
    pub g3_done: usize,
    pub checkpoints: usize,
    pub next_id: usize,
    pub population: Vec<Candidate>,
    pub stage1_history: Vec<GenerationRecord>,
    pub r1: Option<Vec<String>>,
    pub r2: Option<RankOutcome>,
    pub r3: Option<RankOutcome>,
    pub reflection: Reflection,
    pub usage: UsageLedger,
}

impl SearchState {
    pub fn candidate(&self, id: &str) -> Option<&Candidate> {
        self.population.iter().find(|c| c.id == id)
    }

    /// Digest over everything except usage wall-clock figures.
    pub fn digest(&self) -> String {
        let mut s = self.clone();
        s.usage.entries.iter_mut().for_each(|e| e.wall_ms = 0);
        rng::digest_hex(&serde_json::to_vec(&s).expect("state serializes"))
    }

    /// Top of the most advanced ranking, restricted to candidates whose
    /// final-program Stage II success rate is at least the seed's.
    pub fn best(&self) -> Option<&Candidate> {
        let order: Vec<String> = match (&self.r3, &self.r2, &self.r1) {
            (Some(r), _, _) | (None, Some(r), _) => r.order.clone(),
            (None, None, Some(r)) => r.clone(),
            _ => self.population.iter().map(|c| c.id.clone()).collect(),
        };
        let seed_sr = self.population.iter().find(|c| c.pinned).and_then(proxy_sr);
        order.iter().filter_map(|id| self.candidate(id)).find(|c| match seed_sr {
            None => true,
            Some(s) => c.pinned || proxy_sr(c).is_some_and(|sr| sr >= s),
        })
    }
}

/// Stage II success rate of the candidate's current program, if measured.
fn proxy_sr(c: &Candidate) -> Option<f64> {
    let rec = c.latest(2)?;
    if rec.program_hash != c.program.hash() {
        return None;
    }
    rec.metrics.as_ref().map(|m| m.sr)
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Provider(#[from] LlmError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("state file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("stopped after checkpoint {0}")]
    Interrupted(usize),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Run-directory layout.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn state(&self) -> PathBuf {
        self.root.join("state.json")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }
    pub fn programs(&self) -> PathBuf {
        self.root.join("programs")
    }
    pub fn llm(&self) -> PathBuf {
        self.root.join("llm")
    }
    pub fn training(&self) -> PathBuf {
        self.root.join("training")
    }
    pub fn params(&self) -> PathBuf {
        self.root.join("params")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
    pub fn timing(&self) -> PathBuf {
        self.root.join("timing.json")
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Halt with [`OrchestratorError::Interrupted`] once this many checkpoints exist.
    pub stop_after: Option<usize>,
    /// Stop once the given stage is finished.
    pub until: Option<Stage>,
}

/// Everything the stages need, built once per invocation.
pub struct Pipeline<'a> {
    pub cfg: &'a RunConfig,
    pub dir: RunDir,
    pub client: &'a LlmClient,
    pub dataset: TrajectoryDataset,
    pub opts: RunOptions,
    timing: Vec<(String, f64)>,
}

/// Digest of the settings that determine results; output location, worker
/// count and provider connection details are left out so a run can resume
/// elsewhere or against another endpoint.
pub fn config_digest(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.out_dir = String::new();
    c.workers = 0;
    c.llm = Default::default();
    rng::digest_hex(c.to_toml().as_bytes())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), OrchestratorError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(value)?)?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_state(dir: &RunDir) -> Result<SearchState, OrchestratorError> {
    let s: SearchState = serde_json::from_slice(&fs::read(dir.state())?)?;
    if s.schema != STATE_SCHEMA {
        return Err(OrchestratorError::Invariant(format!("unexpected state schema {}", s.schema)));
    }
    Ok(s)
}

/// Loads the run's dataset, building and saving it on first use.
pub fn prepare_dataset(cfg: &RunConfig, dir: &RunDir) -> Result<TrajectoryDataset, OrchestratorError> {
    if dir.dataset().join("manifest.json").exists() {
        return Ok(load_dataset(&dir.dataset())?);
    }
    let ds = build_dataset(&cfg.env, &cfg.dataset)?;
    save_dataset(&ds, &dir.dataset())?;
    Ok(ds)
}

/// Held-out evaluation scenarios shared by every candidate of a round.
pub fn eval_scenarios(env: &WorkspaceConfig, seed: u64, label: &str, round: usize, count: usize, humans: usize) -> Vec<Scenario> {
    let cfg = WorkspaceConfig { human_count: humans, ..env.clone() };
    let s = rng::derive_seed(seed, label, &[round as u64, humans as u64]);
    (0..count as u64).map(|i| generate_scenario(&cfg, s, i).expect("scenario placement")).collect()
}

/// Trains with `tc` (seed already set) and evaluates the mean policy.
/// Stage III evaluates each human count in `counts` and averages.
#[allow(clippy::too_many_arguments)]
pub fn train_and_evaluate(
    program: &RewardProgram,
    tc: &TrainConfig,
    env: &WorkspaceConfig,
    eval_seed: u64,
    label: &str,
    round: usize,
    episodes: usize,
    counts: &[usize],
) -> Result<(Network, MetricsTuple, Vec<CountMetrics>, forge_core::policy::TrainLog), String> {
    let (params, log) = train_policy(program, tc, env).map_err(|e| e.to_string())?;
    let eval_env = tc.env_config(env);
    let mut per_count = Vec::new();
    let n = counts.len();
    for (j, &h) in counts.iter().enumerate() {
        let e = episodes / n + usize::from(j < episodes % n);
        let cfg = WorkspaceConfig { human_count: h, ..eval_env.clone() };
        let scenarios = eval_scenarios(&eval_env, eval_seed, label, round, e, h);
        let s = evaluate_summaries(|| MeanPolicy::new(&params, tc.k_nearest), &scenarios, &cfg, 0).map_err(|e| e.to_string())?;
        per_count.push(CountMetrics { humans: h, metrics: aggregate(&s, &cfg).map_err(|e| e.to_string())? });
    }
    let metrics = average_metrics(&per_count);
    Ok((params, metrics, if n > 1 { per_count } else { Vec::new() }, log))
}

/// Equal-weight mean over human counts; NT averages the counts that have it.
pub fn average_metrics(parts: &[CountMetrics]) -> MetricsTuple {
    if parts.len() == 1 {
        return parts[0].metrics.clone();
    }
    let k = parts.len() as f64;
    let mean = |f: &dyn Fn(&MetricsTuple) -> f64| parts.iter().map(|p| f(&p.metrics)).sum::<f64>() / k;
    let nts: Vec<f64> = parts.iter().filter_map(|p| p.metrics.nt).collect();
    let sr = mean(&|m| m.sr);
    let cr = mean(&|m| m.cr);
    MetricsTuple {
        sr,
        cr,
        tr: 1.0 - sr - cr,
        nt: (!nts.is_empty()).then(|| nts.iter().sum::<f64>() / nts.len() as f64),
        pl: mean(&|m| m.pl),
        itr: mean(&|m| m.itr),
        sd: mean(&|m| m.sd),
        episodes: parts.iter().map(|p| p.metrics.episodes).sum(),
    }
}

/// Seed for all trainings of one stage round; shared by every candidate.
pub fn round_seed(run_seed: u64, stage: u8, round: usize) -> u64 {
    rng::derive_seed(run_seed, "train", &[stage as u64, round as u64])
}

impl<'a> Pipeline<'a> {
    pub fn new(cfg: &'a RunConfig, dir: RunDir, client: &'a LlmClient, opts: RunOptions) -> Result<Self, OrchestratorError> {
        fs::create_dir_all(&dir.root)?;
        if !dir.config().exists() {
            fs::write(dir.config(), cfg.to_toml())?;
        }
        let dataset = prepare_dataset(cfg, &dir)?;
        Ok(Self { cfg, dir, client, dataset, opts, timing: Vec::new() })
    }

    fn fresh_state(&self) -> SearchState {
        SearchState {
            schema: STATE_SCHEMA.into(),
            run_seed: self.cfg.seed,
            config_digest: config_digest(self.cfg),
            dataset_hash: self.dataset.content_hash().to_string(),
            stage: Stage::I,
            g1_done: 0,
            g2_done: 0,
            g3_done: 0,
            checkpoints: 0,
            next_id: 0,
            population: Vec::new(),
            stage1_history: Vec::new(),
            r1: None,
            r2: None,
            r3: None,
            reflection: Reflection::new(self.cfg.search.reflection_cap),
            usage: UsageLedger::default(),
        }
    }

    /// Continues from `state.json` when present, otherwise starts fresh.
    pub fn run(&mut self) -> Result<SearchState, OrchestratorError> {
        let mut state = if self.dir.state().exists() {
            let s = load_state(&self.dir)?;
            if s.config_digest != config_digest(self.cfg) {
                return Err(OrchestratorError::Config("run directory was created with a different config".into()));
            }
            if s.dataset_hash != self.dataset.content_hash() {
                return Err(OrchestratorError::Invariant("dataset hash differs from the checkpoint".into()));
            }
            s
        } else {
            self.fresh_state()
        };
        self.client.set_ledger(state.usage.clone());

        if state.stage == Stage::I {
            let t = Instant::now();
            self.stage_one(&mut state)?;
            self.timing.push(("stage1".into(), t.elapsed().as_secs_f64()));
            if self.opts.until == Some(Stage::I) {
                return self.finish(state);
            }
        }
        if state.stage == Stage::II {
            let t = Instant::now();
            self.refine_stage(&mut state, 2)?;
            self.timing.push(("stage2".into(), t.elapsed().as_secs_f64()));
            if self.opts.until == Some(Stage::II) {
                return self.finish(state);
            }
        }
        if state.stage == Stage::III {
            let t = Instant::now();
            self.refine_stage(&mut state, 3)?;
            self.timing.push(("stage3".into(), t.elapsed().as_secs_f64()));
        }
        self.finish(state)
    }

    fn finish(&mut self, mut state: SearchState) -> Result<SearchState, OrchestratorError> {
        state.usage = self.client.ledger().sorted();
        write_json(&self.dir.state(), &state)?;
        self.write_timing()?;
        Ok(state)
    }

    fn write_timing(&self) -> Result<(), OrchestratorError> {
        let mut all: Vec<(String, f64)> = if self.dir.timing().exists() {
            serde_json::from_slice(&fs::read(self.dir.timing())?).unwrap_or_default()
        } else {
            Vec::new()
        };
        all.extend(self.timing.iter().cloned());
        write_json(&self.dir.timing(), &all)
    }

    fn checkpoint(&self, state: &mut SearchState, label: &str) -> Result<(), OrchestratorError> {
        state.checkpoints += 1;
        state.usage = self.client.ledger().sorted();
        write_json(&self.dir.checkpoints().join(format!("{:03}_{label}.json", state.checkpoints)), state)?;
        write_json(&self.dir.state(), state)?;
        if self.opts.stop_after.is_some_and(|k| state.checkpoints >= k) {
            self.write_timing()?;
            return Err(OrchestratorError::Interrupted(state.checkpoints));
        }
        Ok(())
    }

    fn save_program(&self, c: &Candidate) -> Result<(), OrchestratorError> {
        fs::create_dir_all(self.dir.programs())?;
        let hash = c.program.hash();
        let text = format!(
            "# candidate {} provenance {:?} parents {:?}\n{}\n",
            c.id,
            c.program.provenance,
            c.program.parents,
            print_program(c.program.ast())
        );
        fs::write(self.dir.programs().join(format!("{}-{}.rwd", c.id, &hash[..12])), text)?;
        Ok(())
    }

    fn new_candidate(&self, state: &mut SearchState, program: RewardProgram, fell_back: bool) -> Candidate {
        let c = Candidate { id: format!("c{:03}", state.next_id), program, pinned: false, fell_back, stage1: None, history: Vec::new() };
        state.next_id += 1;
        c
    }

    fn limits(&self) -> forge_core::lang::Limits {
        self.cfg.search.limits
    }

    fn initial_population(&self, state: &mut SearchState) -> Result<(), OrchestratorError> {
        let seed = seed_program();
        let seed_c = Candidate { id: "c000".into(), program: seed.clone(), pinned: true, fell_back: false, stage1: None, history: Vec::new() };
        state.next_id = 1;
        self.save_program(&seed_c)?;
        state.population.push(seed_c);
        let n = self.cfg.search.population;
        let refl = state.reflection.clone();
        let proposals: Vec<_> = (1..n)
            .into_par_iter()
            .map(|v| propose(self.client, &format!("s1_init_v{v:02}"), &ProposeInput::Initial { seed: &seed, variant: v }, &refl, self.limits(), None))
            .collect::<Result<Vec<_>, _>>()?;
        for (v, mut p) in (1..n).zip(proposals) {
            let dup = |state: &SearchState, prog: &RewardProgram| state.population.iter().any(|c| c.program.hash() == prog.hash());
            if dup(state, &p.program) {
                // Re-request once, then accept whatever comes back.
                p = propose(
                    self.client,
                    &format!("s1_init_v{v:02}_retry"),
                    &ProposeInput::Initial { seed: &seed, variant: v },
                    &refl,
                    self.limits(),
                    Some("Your previous answer duplicated an existing candidate; write a different program."),
                )?;
            }
            let c = self.new_candidate(state, p.program, p.fell_back);
            self.save_program(&c)?;
            state.population.push(c);
        }
        Ok(())
    }

    fn score_population(&self, state: &mut SearchState) {
        for c in state.population.iter_mut().filter(|c| c.stage1.is_none()) {
            c.stage1 = Some(score_stage1(&c.id, &c.program, &self.dataset));
        }
    }

    fn stage1_ranking(state: &SearchState) -> Vec<String> {
        let scores: Vec<Stage1Score> = state.population.iter().map(|c| c.stage1.clone().expect("scored")).collect();
        rank_population(&scores)
    }

    fn stage_one(&self, state: &mut SearchState) -> Result<(), OrchestratorError> {
        if state.population.is_empty() {
            self.initial_population(state)?;
        }
        let n = self.cfg.search.population;
        while state.g1_done < self.cfg.search.g1 {
            let g = state.g1_done;
            self.score_population(state);
            let ranking = Self::stage1_ranking(state);
            let score_of = |id: &str| state.candidate(id).and_then(|c| c.stage1.as_ref()).map(|s| s.score);
            let scores: Vec<(String, f64)> = ranking.iter().map(|id| (id.clone(), score_of(id).unwrap_or(f64::NAN))).collect();
            state.stage1_history.push(GenerationRecord { generation: g, best: scores[0].1, ranking: ranking.clone(), scores });

            let entries: Vec<(&str, &RewardProgram, String)> = ranking
                .iter()
                .filter_map(|id| state.candidate(id))
                .map(|c| (c.id.as_str(), &c.program, format!("agreement {}", c.stage1.as_ref().map_or(f64::NAN, |s| s.score))))
                .collect();
            let mut refl = state.reflection.clone();
            update_reflection(self.client, &format!("s1_g{g:02}_reflect"), &mut refl, 1, g, &entries);
            state.reflection = refl;

            self.next_generation(state, &ranking, g, n)?;
            state.g1_done += 1;
            self.checkpoint(state, &format!("stage1_g{:02}", state.g1_done))?;
        }
        self.score_population(state);
        state.r1 = Some(Self::stage1_ranking(state));
        state.stage = Stage::II;
        Ok(())
    }

    /// Elite (and the pinned seed) carried; the rest split into restarts,
    /// crossovers and mutations in the ratio 1 : 2 : rest.
    fn next_generation(&self, state: &mut SearchState, ranking: &[String], g: usize, n: usize) -> Result<(), OrchestratorError> {
        let mut keep: Vec<String> = vec![ranking[0].clone()];
        if let Some(seed) = state.population.iter().find(|c| c.pinned) {
            if seed.id != ranking[0] {
                keep.push(seed.id.clone());
            }
        }
        let r = n.saturating_sub(keep.len());
        let restarts = r / 6;
        let crosses = r / 3;
        let mutations = r - restarts - crosses;

        let valid: Vec<&Candidate> = ranking
            .iter()
            .filter_map(|id| state.candidate(id))
            .filter(|c| c.stage1.as_ref().is_some_and(|s| !s.invalid))
            .collect();
        let pool: Vec<&Candidate> = if valid.is_empty() { ranking.iter().filter_map(|id| state.candidate(id)).collect() } else { valid };
        let seed = seed_program();
        let score = |c: &Candidate| c.stage1.as_ref().map(|s| s.score);
        let top3 = &pool[..pool.len().min(3)];
        let top4 = &pool[..pool.len().min(4)];
        let mut pairs = Vec::new();
        for i in 0..top4.len() {
            for j in i + 1..top4.len() {
                pairs.push((top4[i], top4[j]));
            }
        }

        let mut inputs: Vec<(String, ProposeInput)> = Vec::new();
        for k in 0..mutations {
            let p = top3[k % top3.len()];
            inputs.push((format!("s1_g{g:02}_mut{k}"), ProposeInput::Mutate { parent: &p.program, score: score(p) }));
        }
        for k in 0..crosses {
            if pairs.is_empty() {
                let p = top3[k % top3.len()];
                inputs.push((format!("s1_g{g:02}_cx{k}"), ProposeInput::Mutate { parent: &p.program, score: score(p) }));
            } else {
                let (a, b) = pairs[k % pairs.len()];
                inputs.push((
                    format!("s1_g{g:02}_cx{k}"),
                    ProposeInput::Crossover { a: &a.program, score_a: score(a), b: &b.program, score_b: score(b) },
                ));
            }
        }
        for k in 0..restarts {
            inputs.push((format!("s1_g{g:02}_rs{k}"), ProposeInput::Restart { seed: &seed }));
        }
        let refl = state.reflection.clone();
        let limits = self.limits();
        let proposals = inputs
            .par_iter()
            .map(|(key, input)| propose(self.client, key, input, &refl, limits, None))
            .collect::<Result<Vec<_>, _>>()?;

        let mut next: Vec<Candidate> = keep.iter().filter_map(|id| state.candidate(id).cloned()).collect();
        for p in proposals {
            let c = self.new_candidate(state, p.program, p.fell_back);
            self.save_program(&c)?;
            next.push(c);
        }
        if next.len() != n {
            return Err(OrchestratorError::Invariant(format!("generation size {} != {n}", next.len())));
        }
        state.population = next;
        Ok(())
    }

    fn stage_params(&self, stage: u8) -> (TrainConfig, usize, Vec<usize>, &'static str) {
        let s = &self.cfg.search;
        match stage {
            2 => (self.cfg.proxy.clone(), s.e2, vec![self.cfg.env.human_count], "stage2-eval"),
            _ => (self.cfg.full.clone(), s.e3, s.human_counts.clone(), "stage3-eval"),
        }
    }

    fn evaluate_round(&self, state: &mut SearchState, stage: u8, round: usize) -> Result<(), OrchestratorError> {
        let (mut tc, episodes, counts, label) = self.stage_params(stage);
        tc.seed = round_seed(state.run_seed, stage, round);
        let env = &self.cfg.env;
        let run_seed = state.run_seed;
        let results: Vec<_> = state
            .population
            .par_iter()
            .map(|c| {
                let out = train_and_evaluate(&c.program, &tc, env, run_seed, label, round, episodes, &counts);
                (c.program.hash(), out)
            })
            .collect();
        fs::create_dir_all(self.dir.training())?;
        for (c, (hash, out)) in state.population.iter_mut().zip(results) {
            let rec = match out {
                Ok((params, metrics, per_count, log)) => {
                    fs::write(self.dir.training().join(format!("s{stage}_r{round:02}_{}.jsonl", c.id)), log.to_jsonl())?;
                    if stage == 3 {
                        fs::create_dir_all(self.dir.params())?;
                        params.save(&self.dir.params().join(format!("{}_s3_r{round:02}.json", c.id)))?;
                    }
                    MetricsRecord { stage, round, program_hash: hash, metrics: Some(metrics), per_count, params_digest: Some(params.digest()), diagnostic: None }
                }
                Err(e) => MetricsRecord { stage, round, program_hash: hash, metrics: None, per_count: Vec::new(), params_digest: None, diagnostic: Some(e) },
            };
            if let Some(m) = &rec.metrics {
                if (m.sr + m.cr + m.tr - 1.0).abs() > 1e-9 {
                    return Err(OrchestratorError::Invariant(format!("rates of {} do not sum to 1", c.id)));
                }
            }
            c.history.push(rec);
        }
        Ok(())
    }

    fn round_table(state: &SearchState, stage: u8) -> Vec<(String, Option<MetricsTuple>)> {
        state.population.iter().map(|c| (c.id.clone(), c.latest(stage).and_then(|r| r.metrics.clone()))).collect()
    }

    /// Stages II and III: train, evaluate, and refine every candidate except
    /// the round's best and the seed; the last round is ranked instead.
    fn refine_stage(&self, state: &mut SearchState, stage: u8) -> Result<(), OrchestratorError> {
        let rounds = if stage == 2 { self.cfg.search.g2 } else { self.cfg.search.g3 };
        loop {
            let done = if stage == 2 { state.g2_done } else { state.g3_done };
            if done >= rounds {
                break;
            }
            self.evaluate_round(state, stage, done)?;
            let table = Self::round_table(state, stage);
            let order = fallback_order(&table);

            let entries: Vec<(&str, &RewardProgram, String)> = order
                .iter()
                .filter_map(|id| state.candidate(id))
                .map(|c| {
                    let m = c.latest(stage).and_then(|r| r.metrics.as_ref());
                    (c.id.as_str(), &c.program, m.map_or_else(|| "training failed".to_string(), crate::prompts::format_metrics))
                })
                .collect();
            let mut refl = state.reflection.clone();
            update_reflection(self.client, &format!("s{stage}_r{done:02}_reflect"), &mut refl, stage, done, &entries);
            state.reflection = refl;

            if done + 1 < rounds {
                let elite = order[0].clone();
                let refl = state.reflection.clone();
                let limits = self.limits();
                let targets: Vec<usize> = (0..state.population.len())
                    .filter(|&i| !state.population[i].pinned && state.population[i].id != elite)
                    .collect();
                let proposals = targets
                    .par_iter()
                    .map(|&i| {
                        let c = &state.population[i];
                        let m = c.latest(stage).and_then(|r| r.metrics.as_ref());
                        propose(self.client, &format!("s{stage}_r{done:02}_{}", c.id), &ProposeInput::Refine { parent: &c.program, metrics: m }, &refl, limits, None)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                for (i, p) in targets.into_iter().zip(proposals) {
                    let c = &mut state.population[i];
                    c.program = p.program;
                    c.fell_back |= p.fell_back;
                    c.stage1 = None;
                    self.save_program(c)?;
                }
            }
            if stage == 2 {
                state.g2_done += 1;
            } else {
                state.g3_done += 1;
            }
            self.checkpoint(state, &format!("stage{stage}_r{:02}", done + 1))?;
        }
        if rounds > 0 {
            let table = Self::round_table(state, stage);
            let ranked = llm_rank(self.client, &format!("s{stage}_rank"), &table);
            if stage == 2 {
                state.r2 = Some(ranked);
            } else {
                state.r3 = Some(ranked);
            }
        }
        state.stage = if stage == 2 { Stage::III } else { Stage::Done };
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub k: usize,
    pub preserved: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairConsistency {
    pub rho: f64,
    pub common: usize,
    pub top_k: Vec<TopK>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub stage_1_2: Option<PairConsistency>,
    pub stage_2_3: Option<PairConsistency>,
}

/// Spearman correlation of two orderings over their common ids, plus top-k
/// overlap for k = 1 and 3 (k capped at the number of common ids).
pub fn ranking_consistency(a: &[String], b: &[String]) -> Result<PairConsistency, String> {
    let common: Vec<&String> = a.iter().filter(|id| b.contains(id)).collect();
    if common.len() < 2 {
        return Err(format!("need at least 2 common candidates, found {}", common.len()));
    }
    let pos = |order: &[String], id: &String| order.iter().filter(|x| common.contains(x)).position(|x| x == id).expect("common id") as f64;
    let ra: Vec<f64> = common.iter().map(|id| pos(a, id)).collect();
    let rb: Vec<f64> = common.iter().map(|id| pos(b, id)).collect();
    let rho = spearman(&ra, &rb).map_err(|e| e.to_string())?;
    let restricted = |order: &[String]| -> Vec<String> { order.iter().filter(|x| common.contains(x)).cloned().collect() };
    let (sa, sb) = (restricted(a), restricted(b));
    let top_k = [1usize, 3]
        .iter()
        .map(|&k| {
            let k = k.min(common.len());
            let hits = sa[..k].iter().filter(|id| sb[..k].contains(id)).count();
            TopK { k, preserved: hits as f64 / k as f64 }
        })
        .collect();
    Ok(PairConsistency { rho, common: common.len(), top_k })
}

pub fn consistency_report(state: &SearchState) -> ConsistencyReport {
    let r1 = state.r1.clone();
    let r2 = state.r2.as_ref().map(|r| r.order.clone());
    let r3 = state.r3.as_ref().map(|r| r.order.clone());
    let pair = |a: &Option<Vec<String>>, b: &Option<Vec<String>>| match (a, b) {
        (Some(a), Some(b)) => ranking_consistency(a, b).ok(),
        _ => None,
    };
    ConsistencyReport { stage_1_2: pair(&r1, &r2), stage_2_3: pair(&r2, &r3) }
}

/// Runs (or resumes) every stage in `dir`, then writes the report.
pub fn run_pipeline(cfg: &RunConfig, dir: &RunDir, client: &LlmClient, opts: RunOptions) -> Result<(SearchState, crate::report::Report), OrchestratorError> {
    let mut p = Pipeline::new(cfg, dir.clone(), client, opts)?;
    let state = p.run()?;
    let report = crate::report::emit_report(cfg, dir)?;
    Ok((state, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyCheck {
    pub stage2: Vec<(String, Option<MetricsTuple>)>,
    pub stage3: Vec<(String, Option<MetricsTuple>)>,
    pub r2: Vec<String>,
    pub r3: Vec<String>,
    pub consistency: PairConsistency,
}

/// Trains and evaluates fixed programs under both the Stage II and the
/// Stage III protocol (one round each, shared seeds) and compares the
/// resulting metric orderings.
pub fn proxy_consistency(programs: &[(String, RewardProgram)], cfg: &RunConfig, seed: u64) -> Result<ProxyCheck, String> {
    let s = &cfg.search;
    let run = |stage: u8| -> Vec<(String, Option<MetricsTuple>)> {
        let (mut tc, episodes, counts, label) = match stage {
            2 => (cfg.proxy.clone(), s.e2, vec![cfg.env.human_count], "stage2-eval"),
            _ => (cfg.full.clone(), s.e3, s.human_counts.clone(), "stage3-eval"),
        };
        tc.seed = round_seed(seed, stage, 0);
        programs
            .par_iter()
            .map(|(id, p)| {
                let m = train_and_evaluate(p, &tc, &cfg.env, seed, label, 0, episodes, &counts).ok().map(|r| r.1);
                (id.clone(), m)
            })
            .collect()
    };
    let stage2 = run(2);
    let stage3 = run(3);
    let r2 = fallback_order(&stage2);
    let r3 = fallback_order(&stage3);
    let consistency = ranking_consistency(&r2, &r3)?;
    Ok(ProxyCheck { stage2, stage3, r2, r3, consistency })
}
