//! Program proposals, LLM ranking and reflection notes.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use forge_core::lang::mutate::{mutate, restart};
use forge_core::lang::{parse_program, Limits, Provenance, RewardProgram};
use forge_core::metrics::MetricsTuple;
use forge_core::rng;

use crate::llm::{extract_program, fenced_blocks, ChatRequest, LlmClient, LlmError, RequestKind};
use crate::prompts;

pub const MAX_PROPOSAL_ATTEMPTS: u32 = 3;
pub const NOTE_WORD_LIMIT: usize = 60;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub stage: u8,
    pub generation: usize,
    pub candidates: Vec<String>,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reflection {
    pub notes: Vec<Note>,
    pub cap: usize,
}

impl Reflection {
    pub fn new(cap: usize) -> Self {
        Self { notes: Vec::new(), cap }
    }

    /// Appends a note, evicting the oldest beyond the cap.
    pub fn push(&mut self, note: Note) {
        self.notes.push(note);
        while self.notes.len() > self.cap {
            self.notes.remove(0);
        }
    }
}

/// What a proposal starts from.
#[derive(Clone, Debug)]
pub enum ProposeInput<'a> {
    Initial { seed: &'a RewardProgram, variant: usize },
    Mutate { parent: &'a RewardProgram, score: Option<f64> },
    Crossover { a: &'a RewardProgram, score_a: Option<f64>, b: &'a RewardProgram, score_b: Option<f64> },
    Refine { parent: &'a RewardProgram, metrics: Option<&'a MetricsTuple> },
    Restart { seed: &'a RewardProgram },
}

impl ProposeInput<'_> {
    pub fn kind(&self) -> RequestKind {
        match self {
            Self::Initial { .. } => RequestKind::Initial,
            Self::Mutate { .. } => RequestKind::Mutate,
            Self::Crossover { .. } => RequestKind::Crossover,
            Self::Refine { .. } => RequestKind::Refine,
            Self::Restart { .. } => RequestKind::Restart,
        }
    }

    fn provenance(&self) -> Provenance {
        match self {
            Self::Initial { .. } => Provenance::LlmInitial,
            Self::Mutate { .. } => Provenance::Mutation,
            Self::Crossover { .. } => Provenance::Crossover,
            Self::Refine { .. } => Provenance::Refinement,
            Self::Restart { .. } => Provenance::Restart,
        }
    }

    fn parents(&self) -> Vec<String> {
        match self {
            Self::Initial { seed, .. } | Self::Restart { seed } => vec![seed.hash()],
            Self::Mutate { parent, .. } | Self::Refine { parent, .. } => vec![parent.hash()],
            Self::Crossover { a, b, .. } => vec![a.hash(), b.hash()],
        }
    }

    fn primary(&self) -> &RewardProgram {
        match self {
            Self::Initial { seed, .. } | Self::Restart { seed } => seed,
            Self::Mutate { parent, .. } | Self::Refine { parent, .. } => parent,
            Self::Crossover { a, .. } => a,
        }
    }

    fn prompt(&self, reflection: &Reflection) -> String {
        match self {
            Self::Initial { seed, variant } => prompts::initial(seed, *variant, reflection),
            Self::Mutate { parent, score } => prompts::mutate(parent, *score, reflection),
            Self::Crossover { a, score_a, b, score_b } => prompts::crossover(a, *score_a, b, *score_b, reflection),
            Self::Refine { parent, metrics } => prompts::refine(parent, *metrics, reflection),
            Self::Restart { seed } => prompts::restart(seed, reflection),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Proposal {
    pub program: RewardProgram,
    pub fell_back: bool,
    pub attempts: u32,
    /// Last extraction or parse error, when any attempt failed.
    pub error: Option<String>,
}

/// Asks the provider for a program, feeding parse errors back, up to three
/// attempts; then falls back to a rule-based edit of the primary parent.
/// Provider outages are returned as errors.
pub fn propose(
    client: &LlmClient,
    key: &str,
    input: &ProposeInput,
    reflection: &Reflection,
    limits: Limits,
    extra: Option<&str>,
) -> Result<Proposal, LlmError> {
    let base = input.prompt(reflection);
    let base = match extra {
        Some(x) => format!("{base}\n{x}\n"),
        None => base,
    };
    let mut error: Option<String> = None;
    for attempt in 1..=MAX_PROPOSAL_ATTEMPTS {
        let user = match &error {
            None => base.clone(),
            Some(e) => format!("{base}\nYour previous answer was rejected:\n{e}\nReply again with one ```reward block.\n"),
        };
        let req = ChatRequest {
            key: format!("{key}_a{attempt}"),
            kind: input.kind(),
            system: prompts::SYSTEM.to_string(),
            user,
            temperature: client.config().temperature,
            max_tokens: client.config().max_tokens,
        };
        let text = client.complete(&req)?;
        let parsed = extract_program(&text)
            .map_err(|e| e.to_string())
            .and_then(|src| parse_program(&src, limits).map_err(|e| e.to_string()));
        match parsed {
            Ok(p) => {
                return Ok(Proposal {
                    program: p.with_origin(input.provenance(), input.parents()),
                    fell_back: false,
                    attempts: attempt,
                    error,
                })
            }
            Err(e) => error = Some(e),
        }
    }
    let digest = rng::digest_hex(key.as_bytes());
    let mut r = rng::stream(u64::from_str_radix(&digest[..16], 16).unwrap_or(0), "proposal-fallback", &[]);
    let program = match input {
        ProposeInput::Restart { .. } => restart(&mut r),
        _ => mutate(input.primary(), &mut r),
    };
    Ok(Proposal {
        program: program.with_origin(Provenance::Fallback, input.parents()),
        fell_back: true,
        attempts: MAX_PROPOSAL_ATTEMPTS,
        error,
    })
}

fn nt_key(m: &MetricsTuple) -> f64 {
    m.nt.unwrap_or(f64::INFINITY)
}

/// Deterministic total order: SR desc, CR asc, ITR asc, NT asc, then id.
/// Candidates without metrics come last.
pub fn compare_metrics(a: (&str, Option<&MetricsTuple>), b: (&str, Option<&MetricsTuple>)) -> Ordering {
    let by_metrics = match (a.1, b.1) {
        (Some(x), Some(y)) => y
            .sr
            .total_cmp(&x.sr)
            .then(x.cr.total_cmp(&y.cr))
            .then(x.itr.total_cmp(&y.itr))
            .then(nt_key(x).total_cmp(&nt_key(y))),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    };
    by_metrics.then_with(|| a.0.cmp(b.0))
}

pub fn fallback_order(candidates: &[(String, Option<MetricsTuple>)]) -> Vec<String> {
    let mut v: Vec<(&str, Option<&MetricsTuple>)> = candidates.iter().map(|(id, m)| (id.as_str(), m.as_ref())).collect();
    v.sort_by(|a, b| compare_metrics(*a, *b));
    v.into_iter().map(|(id, _)| id.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankOutcome {
    pub order: Vec<String>,
    pub fell_back: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Reads a strict permutation of `ids` from a ranking reply.
pub fn parse_ranking(text: &str, ids: &[String]) -> Result<Vec<String>, String> {
    let body = fenced_blocks(text).pop().map(|(_, b)| b).unwrap_or_else(|| text.to_string());
    let mut order: Vec<String> = Vec::new();
    for tok in body.split(|c: char| c.is_whitespace() || c == ',' || c == '>') {
        let tok = tok.trim_matches(|c: char| !c.is_alphanumeric() && c != '_' && c != '-');
        if ids.iter().any(|id| id == tok) {
            if order.iter().any(|o| o == tok) {
                return Err(format!("candidate {tok} listed twice"));
            }
            order.push(tok.to_string());
        }
    }
    if order.len() != ids.len() {
        return Err(format!("expected {} candidates, found {}", ids.len(), order.len()));
    }
    Ok(order)
}

/// Asks the provider for an ordering. Candidates are presented in fallback
/// order; any malformed reply or provider failure yields that order.
pub fn llm_rank(client: &LlmClient, key: &str, candidates: &[(String, Option<MetricsTuple>)]) -> RankOutcome {
    let fallback = fallback_order(candidates);
    let presented: Vec<(&str, Option<&MetricsTuple>)> = fallback
        .iter()
        .map(|id| {
            let m = candidates.iter().find(|(c, _)| c == id).and_then(|(_, m)| m.as_ref());
            (id.as_str(), m)
        })
        .collect();
    let req = ChatRequest {
        key: key.to_string(),
        kind: RequestKind::Rank,
        system: prompts::RANK_SYSTEM.to_string(),
        user: prompts::rank(&presented),
        temperature: client.config().rank_temperature,
        max_tokens: client.config().max_tokens,
    };
    let reply = client.complete(&req).map_err(|e| e.to_string());
    match reply.and_then(|text| parse_ranking(&text, &fallback)) {
        Ok(order) => RankOutcome { order, fell_back: false, reason: None },
        Err(reason) => RankOutcome { order: fallback, fell_back: true, reason: Some(reason) },
    }
}

/// Keeps the first `limit` words.
pub fn truncate_words(text: &str, limit: usize) -> String {
    text.split_whitespace().take(limit).collect::<Vec<_>>().join(" ")
}

/// Requests a note about the latest generation (`entries` best first) and
/// appends it. Best effort: provider failures leave the reflection as is.
pub fn update_reflection(
    client: &LlmClient,
    key: &str,
    reflection: &mut Reflection,
    stage: u8,
    generation: usize,
    entries: &[(&str, &RewardProgram, String)],
) -> bool {
    if entries.is_empty() {
        return false;
    }
    let req = ChatRequest {
        key: key.to_string(),
        kind: RequestKind::Reflect,
        system: prompts::REFLECT_SYSTEM.to_string(),
        user: prompts::reflect(entries),
        temperature: client.config().temperature,
        max_tokens: client.config().max_tokens,
    };
    match client.complete(&req) {
        Ok(text) => {
            let text = truncate_words(&text, NOTE_WORD_LIMIT);
            if text.is_empty() {
                return false;
            }
            reflection.push(Note {
                stage,
                generation,
                candidates: vec![entries[0].0.to_string(), entries[entries.len() - 1].0.to_string()],
                text,
            });
            true
        }
        Err(_) => false,
    }
}
