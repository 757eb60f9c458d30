//! Line-delimited JSON records: one header object, then one object per line.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::SimError;

pub const SCHEMA_VERSION: u32 = 1;
pub const SCENARIO_SCHEMA: &str = "forge.scenario";
pub const EPISODE_SCHEMA: &str = "forge.episode";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub schema: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

pub fn write_records<'a, W, T, I>(mut w: W, schema: &str, meta: serde_json::Value, items: I) -> Result<(), SimError>
where
    W: Write,
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let header = Header { schema: schema.to_string(), version: SCHEMA_VERSION, meta };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead, T: DeserializeOwned>(r: R, schema: &str) -> Result<(Header, Vec<T>), SimError> {
    let mut lines = r.lines();
    let first = lines.next().ok_or_else(|| SimError::Format("empty record stream".into()))??;
    let header: Header = serde_json::from_str(&first)?;
    if header.schema != schema || header.version != SCHEMA_VERSION {
        return Err(SimError::Format(format!(
            "expected {schema} v{SCHEMA_VERSION}, found {} v{}",
            header.schema, header.version
        )));
    }
    let mut items = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line)?);
    }
    Ok((header, items))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::sim::{generate_scenario, run_episode, controllers::StraightLine, Episode, Scenario, WorkspaceConfig};

    #[test]
    fn scenario_and_episode_lines_round_trip() {
        let cfg = WorkspaceConfig::default();
        let sc = generate_scenario(&cfg, 3, 1).unwrap();
        let mut r = rng::stream(3, "ep", &[]);
        let ep = run_episode(&sc, &mut StraightLine, None, &cfg, &mut r).unwrap();

        let mut buf = Vec::new();
        write_records(&mut buf, SCENARIO_SCHEMA, serde_json::Value::Null, [&sc]).unwrap();
        let (_, back): (_, Vec<Scenario>) = read_records(&buf[..], SCENARIO_SCHEMA).unwrap();
        assert_eq!(back, vec![sc]);

        let mut buf = Vec::new();
        write_records(&mut buf, EPISODE_SCHEMA, serde_json::json!({"note": "x"}), [&ep]).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 2);
        let (h, back): (_, Vec<Episode>) = read_records(&buf[..], EPISODE_SCHEMA).unwrap();
        assert_eq!(h.meta["note"], "x");
        assert_eq!(back, vec![ep]);
    }

    #[test]
    fn wrong_schema_is_rejected() {
        let mut buf = Vec::new();
        write_records::<_, u32, _>(&mut buf, "other", serde_json::Value::Null, []).unwrap();
        assert!(read_records::<_, u32>(&buf[..], EPISODE_SCHEMA).is_err());
    }
}
