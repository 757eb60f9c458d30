//! On-disk layout: `manifest.json`, `scenarios.jsonl` and `episodes.jsonl`.
//! Episodes are stored as action sequences and re-simulated on load.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{hash_entries, DatasetError, DatasetManifest, ScenarioEntry, TrajectoryDataset};
use crate::rng::StreamRng;
use crate::sim::records::{read_records, write_records, SCENARIO_SCHEMA};
use crate::sim::{run_episode, Frame, RobotPolicy, Scenario, Status, WorkspaceConfig};
use crate::Vec2;

pub const DATASET_SCHEMA: &str = "forge.dataset";
const EPISODE_LINES: &str = "forge.dataset.episode";

#[derive(Serialize, Deserialize)]
struct StoredEpisode {
    scenario: usize,
    controller: String,
    outcome: Status,
    frames: usize,
    actions: Vec<[f64; 2]>,
}

struct Replay<'a> {
    actions: &'a [[f64; 2]],
}

impl RobotPolicy for Replay<'_> {
    fn name(&self) -> String {
        "replay".into()
    }

    fn act(&mut self, frame: &Frame, _: &Scenario, _: &WorkspaceConfig, _: &mut StreamRng) -> Vec2 {
        // Running past the recording means the replay diverged; stopping
        // lets the length check below report it.
        self.actions.get(frame.t).map_or(Vec2::zero(), |a| Vec2::new(a[0], a[1]))
    }
}

pub fn save_dataset(ds: &TrajectoryDataset, dir: &Path) -> Result<(), DatasetError> {
    std::fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut w, &ds.manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;

    let scenarios: Vec<&Scenario> = ds.entries.iter().map(|e| &e.scenario).collect();
    let meta = serde_json::json!({ "content_hash": ds.manifest.content_hash });
    let mut w = BufWriter::new(File::create(dir.join("scenarios.jsonl"))?);
    write_records(&mut w, SCENARIO_SCHEMA, meta.clone(), scenarios.iter().copied())?;
    w.flush()?;

    let episodes: Vec<StoredEpisode> = ds
        .entries
        .iter()
        .enumerate()
        .flat_map(|(j, e)| {
            e.episodes.iter().zip(&e.controllers).map(move |(ep, c)| StoredEpisode {
                scenario: j,
                controller: c.clone(),
                outcome: ep.outcome,
                frames: ep.len(),
                actions: ep.actions.iter().map(|a| [a.x, a.y]).collect(),
            })
        })
        .collect();
    let meta = serde_json::json!({
        "env_digest": ds.manifest.env_digest,
        "roster": ds.manifest.roster,
        "content_hash": ds.manifest.content_hash,
    });
    let mut w = BufWriter::new(File::create(dir.join("episodes.jsonl"))?);
    write_records(&mut w, EPISODE_LINES, meta, &episodes)?;
    w.flush()?;
    Ok(())
}

/// Loads and re-simulates a saved dataset, checking every outcome and the
/// content hash against the manifest.
pub fn load_dataset(dir: &Path) -> Result<TrajectoryDataset, DatasetError> {
    let manifest: DatasetManifest = serde_json::from_reader(BufReader::new(File::open(dir.join("manifest.json"))?))?;
    if manifest.schema != DATASET_SCHEMA {
        return Err(DatasetError::Integrity(format!("unexpected schema {}", manifest.schema)));
    }
    let env = manifest.env.clone();
    let (_, scenarios): (_, Vec<Scenario>) =
        read_records(BufReader::new(File::open(dir.join("scenarios.jsonl"))?), SCENARIO_SCHEMA)?;
    let (_, stored): (_, Vec<StoredEpisode>) =
        read_records(BufReader::new(File::open(dir.join("episodes.jsonl"))?), EPISODE_LINES)?;

    let mut entries: Vec<ScenarioEntry> = scenarios
        .into_iter()
        .map(|scenario| ScenarioEntry { scenario, episodes: Vec::new(), controllers: Vec::new(), frames: 0 })
        .collect();
    let mut r = crate::rng::stream(0, "replay", &[]);
    for s in stored {
        let entry = entries
            .get_mut(s.scenario)
            .ok_or_else(|| DatasetError::Integrity(format!("episode refers to missing scenario {}", s.scenario)))?;
        let mut replay = Replay { actions: &s.actions };
        let ep = run_episode(&entry.scenario, &mut replay, None, &env, &mut r)?;
        if ep.outcome != s.outcome || ep.len() != s.frames {
            return Err(DatasetError::Integrity(format!(
                "replay of scenario {} ({}) diverged: {:?}/{} vs stored {:?}/{}",
                s.scenario,
                s.controller,
                ep.outcome,
                ep.len(),
                s.outcome,
                s.frames
            )));
        }
        entry.episodes.push(ep);
        entry.controllers.push(s.controller);
    }
    for (e, &f) in entries.iter_mut().zip(&manifest.frames) {
        e.frames = f;
    }
    if entries.len() != manifest.frames.len() || entries.iter().any(|e| e.episodes.len() != manifest.trajectories) {
        return Err(DatasetError::Integrity("scenario or trajectory count differs from manifest".into()));
    }
    let hash = hash_entries(&env, &entries);
    if hash != manifest.content_hash {
        return Err(DatasetError::Integrity(format!("content hash {hash} != manifest {}", manifest.content_hash)));
    }
    Ok(TrajectoryDataset { env, entries, manifest })
}
