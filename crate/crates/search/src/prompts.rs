//! Prompt templates. Parent programs are embedded in blocks fenced with the
//! `reward` info string; rank and reflection prompts list candidates under
//! `### candidate <id>` headings.

use std::fmt::Write;

use forge_core::lang::{print_program, RewardProgram, GRAMMAR};
use forge_core::metrics::MetricsTuple;

use crate::evolve::Reflection;

pub const SYSTEM: &str = "\
You write reward functions for a holonomic disc robot that must reach a goal in a 2D \
workspace shared with pedestrians who do not yield. A reward is a small expression program \
evaluated once per simulation frame; the robot's policy is trained to maximize its discounted sum. \
Answer with exactly one program inside a code block fenced with ```reward.";

pub const RANK_SYSTEM: &str = "\
You compare trained crowd-navigation policies. Weigh goal completion first, then safety, \
then comfort for nearby pedestrians, then efficiency. Answer with the candidate ids, best first, \
one per line, inside a single fenced code block.";

pub const REFLECT_SYSTEM: &str = "\
You review a batch of reward programs for crowd navigation and write one short note \
(at most 60 words) that will steer the next round of edits.";

const METRIC_GUIDE: &str = "\
Metric definitions:
- SR: fraction of episodes that reach the goal.
- CR: fraction of episodes that end in contact with a pedestrian.
- TR: fraction of episodes that run out of time.
- NT: mean seconds to reach the goal, over successful episodes only.
- PL: mean robot path length in meters.
- ITR: fraction of running steps where the robot overlaps a pedestrian's forecast position in the next few steps.
- SD: mean over episodes of the per-step distance to the nearest visible pedestrian's edge, in meters.";

fn language_block() -> String {
    format!("Expression language reference:\n{GRAMMAR}\n")
}

fn fenced(p: &RewardProgram) -> String {
    format!("```reward\n{}\n```\n", print_program(p.ast()))
}

pub fn format_metrics(m: &MetricsTuple) -> String {
    let nt = m.nt.map_or_else(|| "n/a".to_string(), |v| v.to_string());
    format!(
        "SR={} CR={} TR={} NT={} PL={} ITR={} SD={} (episodes={})",
        m.sr, m.cr, m.tr, nt, m.pl, m.itr, m.sd, m.episodes
    )
}

fn reflection_block(r: &Reflection) -> String {
    if r.notes.is_empty() {
        return String::new();
    }
    let mut s = String::from("Notes from earlier rounds:\n");
    for n in &r.notes {
        let _ = writeln!(s, "- {}", n.text);
    }
    s
}

fn finish(mut body: String, reflection: &Reflection) -> String {
    body.push('\n');
    body.push_str(&language_block());
    let notes = reflection_block(reflection);
    if !notes.is_empty() {
        body.push('\n');
        body.push_str(&notes);
    }
    body
}

pub fn initial(seed: &RewardProgram, variant: usize, reflection: &Reflection) -> String {
    let body = format!(
        "Starting point:\n{}\nWrite variant #{variant}: a different reward for the same task. Keep a clear bonus \
         for reaching the goal and a clear penalty for contact; change how progress and pedestrian proximity are shaped.\n",
        fenced(seed)
    );
    finish(body, reflection)
}

pub fn restart(seed: &RewardProgram, reflection: &Reflection) -> String {
    let body = format!(
        "Reference program:\n{}\nIgnore the current population and write a fresh reward from a different idea, \
         for example time pressure, clearance margins, or forecast-based penalties.\n",
        fenced(seed)
    );
    finish(body, reflection)
}

pub fn mutate(parent: &RewardProgram, stage1_score: Option<f64>, reflection: &Reflection) -> String {
    let score = stage1_score.map_or_else(|| "not scored".to_string(), |s| s.to_string());
    let body = format!(
        "Parent program (agreement with the reference ordering of recorded trajectories: {score}, range -1 to 1):\n{}\n\
         Make one or two targeted edits that should raise that agreement.\n",
        fenced(parent)
    );
    finish(body, reflection)
}

pub fn crossover(a: &RewardProgram, sa: Option<f64>, b: &RewardProgram, sb: Option<f64>, reflection: &Reflection) -> String {
    let f = |s: Option<f64>| s.map_or_else(|| "not scored".to_string(), |s| s.to_string());
    let body = format!(
        "First parent (agreement {}):\n{}\nSecond parent (agreement {}):\n{}\n\
         Combine the strongest parts of both into one program.\n",
        f(sa),
        fenced(a),
        f(sb),
        fenced(b)
    );
    finish(body, reflection)
}

pub fn refine(parent: &RewardProgram, metrics: Option<&MetricsTuple>, reflection: &Reflection) -> String {
    let m = metrics.map_or_else(|| "training failed; no metrics".to_string(), format_metrics);
    let body = format!(
        "A policy trained on this reward:\n{}\nwas evaluated with these results:\n{m}\n\n{METRIC_GUIDE}\n\n\
         Revise the reward to fix its weakest metric without giving up the others.\n",
        fenced(parent)
    );
    finish(body, reflection)
}

pub fn rank(candidates: &[(&str, Option<&MetricsTuple>)]) -> String {
    let mut s = format!("{METRIC_GUIDE}\n\nRank every candidate below from best to worst.\n\n");
    for (id, m) in candidates {
        let line = m.map_or_else(|| "training failed; no metrics".to_string(), format_metrics);
        let _ = writeln!(s, "### candidate {id}\n{line}\n");
    }
    s
}

/// `entries` ordered best first.
pub fn reflect(entries: &[(&str, &RewardProgram, String)]) -> String {
    let mut s = String::from("Candidates from the latest round, best first:\n\n");
    for (id, p, summary) in entries {
        let _ = writeln!(s, "### candidate {id}\n{summary}\n{}", fenced(p));
    }
    s.push_str("\nContrast the best and the worst candidate and state what to keep and what to avoid.\n");
    s
}
