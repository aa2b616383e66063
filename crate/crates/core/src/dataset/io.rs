//! Line-oriented dataset file.
//!
//! ```text
//! {header: DatasetMeta}
//! {"traj":0,"step":0,"behavior":0,"state":[..],"obs":[[..],..],"action":[[..],..],"reward":..,"done":false}
//! ...
//! {"traj":0,"step":24,...,"next_state":[..],"next_obs":[[..],..]}
//! ...
//! {"records":N,"sha256":"<hex digest of all record lines>"}
//! ```
//!
//! Floats are written in shortest round-trip form, so save → load → save is
//! byte-identical.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatasetMeta, OfflineDataset, Step, Trajectory};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    traj: usize,
    step: usize,
    behavior: usize,
    state: Vec<f64>,
    obs: Vec<Vec<f64>>,
    action: Vec<Vec<f64>>,
    reward: f64,
    done: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    next_state: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    next_obs: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Trailer {
    records: usize,
    sha256: String,
}

/// Serialize to the file format.
pub fn to_text(ds: &OfflineDataset) -> Result<String> {
    let mut out = serde_json::to_string(&ds.meta)?;
    out.push('\n');
    let mut hasher = Sha256::new();
    let mut n = 0;
    for (ti, tr) in ds.trajectories.iter().enumerate() {
        let last = tr.steps.len() - 1;
        for (si, st) in tr.steps.iter().enumerate() {
            let rec = Record {
                traj: ti,
                step: si,
                behavior: tr.behavior,
                state: st.state.clone(),
                obs: st.obs.clone(),
                action: st.action.clone(),
                reward: st.reward,
                done: st.done,
                next_state: (si == last).then(|| tr.final_state.clone()),
                next_obs: (si == last).then(|| tr.final_obs.clone()),
            };
            let mut line = serde_json::to_string(&rec)?;
            line.push('\n');
            hasher.update(line.as_bytes());
            out.push_str(&line);
            n += 1;
        }
    }
    let trailer = Trailer {
        records: n,
        sha256: hex::encode(hasher.finalize()),
    };
    out.push_str(&serde_json::to_string(&trailer)?);
    out.push('\n');
    Ok(out)
}

pub fn save(ds: &OfflineDataset, path: &Path) -> Result<()> {
    let text = to_text(ds)?;
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

pub fn load(path: &Path) -> Result<OfflineDataset> {
    let text = fs::read_to_string(path)?;
    parse(&text, path)
}

fn parse(text: &str, path: &Path) -> Result<OfflineDataset> {
    let fmt = |line: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        line,
        message,
    };
    let lines: Vec<&str> = text.lines().collect();
    let header = lines.first().ok_or_else(|| fmt(1, "empty file".into()))?;
    let meta: DatasetMeta =
        serde_json::from_str(header).map_err(|e| fmt(1, format!("bad header: {e}")))?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "schema version {} is not supported (expected {SCHEMA_VERSION})",
            meta.schema_version
        )));
    }
    if lines.len() < 2 {
        return Err(fmt(2, "truncated file: missing trailer".into()));
    }
    let trailer_line = lines.len();
    let trailer: Trailer = serde_json::from_str(lines[trailer_line - 1]).map_err(|_| {
        fmt(trailer_line, "truncated file: last line is not a checksum trailer".into())
    })?;

    let mut hasher = Sha256::new();
    let mut trajectories: Vec<Trajectory> = Vec::new();
    let record_lines = &lines[1..trailer_line - 1];
    for (k, raw) in record_lines.iter().enumerate() {
        let lineno = k + 2;
        let rec: Record =
            serde_json::from_str(raw).map_err(|e| fmt(lineno, format!("bad record: {e}")))?;
        hasher.update(raw.as_bytes());
        hasher.update(b"\n");
        check_arity(&meta, &rec, lineno)?;
        if rec.step == 0 {
            if rec.traj != trajectories.len() {
                return Err(fmt(lineno, format!("unexpected trajectory index {}", rec.traj)));
            }
            trajectories.push(Trajectory {
                steps: Vec::new(),
                final_state: Vec::new(),
                final_obs: Vec::new(),
                behavior: rec.behavior,
            });
        }
        let n_traj = trajectories.len();
        let tr = match trajectories.last_mut() {
            Some(tr) if rec.traj + 1 == n_traj && rec.step == tr.steps.len() => tr,
            _ => return Err(fmt(lineno, "records out of order".into())),
        };
        if !tr.final_state.is_empty() {
            return Err(fmt(lineno, "step after the trajectory's final record".into()));
        }
        tr.steps.push(Step {
            state: rec.state,
            obs: rec.obs,
            action: rec.action,
            reward: rec.reward,
            done: rec.done,
        });
        match (rec.next_state, rec.next_obs) {
            (Some(s), Some(o)) => {
                tr.final_state = s;
                tr.final_obs = o;
            }
            (None, None) => {
                if rec.done {
                    return Err(fmt(lineno, "done flag before the final step".into()));
                }
            }
            _ => return Err(fmt(lineno, "partial final-state fields".into())),
        }
    }
    if let Some(pos) = trajectories.iter().position(|t| t.final_state.is_empty()) {
        return Err(fmt(trailer_line, format!("trajectory {pos} has no final record")));
    }
    if trailer.records != record_lines.len() {
        return Err(Error::Checksum(format!(
            "trailer says {} records, file has {}",
            trailer.records,
            record_lines.len()
        )));
    }
    if hex::encode(hasher.finalize()) != trailer.sha256 {
        return Err(Error::Checksum("record digest does not match trailer".into()));
    }
    let ds = OfflineDataset { meta, trajectories };
    if ds.trajectories.is_empty() {
        return Err(Error::Schema("dataset has no trajectories".into()));
    }
    if ds.meta.n_episodes != ds.trajectories.len() || ds.meta.n_steps != ds.n_steps() {
        return Err(Error::Schema("header counts do not match the records".into()));
    }
    let env = ds.env()?;
    if ds.compute_stats(&env).checksum() != ds.meta.stats_checksum {
        return Err(Error::Checksum("stats checksum does not match the records".into()));
    }
    Ok(ds)
}

fn check_arity(meta: &DatasetMeta, rec: &Record, line: usize) -> Result<()> {
    let n = meta.n_agents;
    let bad = |what: &str| {
        Err(Error::Schema(format!(
            "line {line}: {what} does not match header (n_agents {n})"
        )))
    };
    if rec.obs.len() != n || rec.action.len() != n {
        return bad("record arity");
    }
    if rec.state.len() != meta.state_dim {
        return bad("state dimension");
    }
    for i in 0..n {
        if rec.obs[i].len() != meta.obs_dims[i] || rec.action[i].len() != meta.action_dims[i] {
            return bad("per-agent dimension");
        }
    }
    if let Some(s) = &rec.next_state {
        if s.len() != meta.state_dim {
            return bad("final state dimension");
        }
    }
    if let Some(o) = &rec.next_obs {
        if o.len() != n || (0..n).any(|i| o[i].len() != meta.obs_dims[i]) {
            return bad("final observation shape");
        }
    }
    if rec.behavior >= meta.behaviors.len() {
        return bad("behavior index");
    }
    Ok(())
}
