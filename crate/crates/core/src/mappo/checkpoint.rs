//! Team checkpoint: a header line, one line per agent, then the value line.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::agent::{AgentPolicy, NetConfig, Team, TeamValue};
use crate::envs::ActionSpace;
use crate::{Error, Result};

const FORMAT: &str = "moma-team/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    /// Training algorithm that produced the team.
    algorithm: String,
    env_id: String,
    state_dim: usize,
    net: NetConfig,
    obs_dims: Vec<usize>,
    action_spaces: Vec<ActionSpace>,
    /// Digest of the run configuration.
    config_hash: String,
}

pub fn team_to_text(team: &Team, algorithm: &str, config_hash: &str) -> Result<String> {
    let header = Header {
        format: FORMAT.into(),
        algorithm: algorithm.into(),
        env_id: team.env_id.clone(),
        state_dim: team.state_dim,
        net: team.net.clone(),
        obs_dims: team.agents.iter().map(|a| a.obs_dim).collect(),
        action_spaces: team.agents.iter().map(|a| a.space).collect(),
        config_hash: config_hash.into(),
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for a in &team.agents {
        out.push_str(&serde_json::to_string(a)?);
        out.push('\n');
    }
    out.push_str(&serde_json::to_string(&team.value)?);
    out.push('\n');
    Ok(out)
}

/// Parse a checkpoint; returns the team and its algorithm tag.
pub fn team_from_text(text: &str, path: &Path) -> Result<(Team, String)> {
    let fmt = |line: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        line,
        message,
    };
    let lines: Vec<&str> = text.lines().collect();
    let header: Header = serde_json::from_str(lines.first().ok_or_else(|| fmt(1, "empty file".into()))?)
        .map_err(|e| fmt(1, format!("bad header: {e}")))?;
    if header.format != FORMAT {
        return Err(Error::Schema(format!("unsupported team format {}", header.format)));
    }
    let n = header.obs_dims.len();
    if header.action_spaces.len() != n || lines.len() != n + 2 {
        return Err(Error::Schema(format!("expected {} agent blocks and a value block", n)));
    }
    let mut agents = Vec::with_capacity(n);
    for i in 0..n {
        let a: AgentPolicy = serde_json::from_str(lines[i + 1]).map_err(|e| fmt(i + 2, format!("bad agent block: {e}")))?;
        if a.index != i || a.obs_dim != header.obs_dims[i] || a.space != header.action_spaces[i] {
            return Err(fmt(i + 2, "agent block does not match the header".into()));
        }
        agents.push(a);
    }
    let value: TeamValue = serde_json::from_str(lines[n + 1]).map_err(|e| fmt(n + 2, format!("bad value block: {e}")))?;
    Ok((
        Team {
            env_id: header.env_id,
            state_dim: header.state_dim,
            net: header.net,
            agents,
            value,
        },
        header.algorithm,
    ))
}

pub fn save_team(team: &Team, algorithm: &str, config_hash: &str, path: &Path) -> Result<()> {
    fs::write(path, team_to_text(team, algorithm, config_hash)?)?;
    Ok(())
}

pub fn load_team(path: &Path) -> Result<(Team, String)> {
    team_from_text(&fs::read_to_string(path)?, path)
}
