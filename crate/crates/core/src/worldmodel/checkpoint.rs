//! Ensemble checkpoint: a header line, then one line per member.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Normalization, WorldModelEnsemble};
use crate::dataset::DatasetStats;
use crate::envs::ActionSpace;
use crate::nn::{Mlp, ParameterSet};
use crate::{Error, Result};

const FORMAT: &str = "moma-ensemble/1";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    env_id: String,
    state_dim: usize,
    action_spaces: Vec<ActionSpace>,
    mlp: Mlp,
    n_members: usize,
    elites: Vec<usize>,
    l_eps: f64,
    stats: DatasetStats,
    norm: Normalization,
    project_one_hot: bool,
    val_mse: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MemberBlock {
    member: usize,
    params: ParameterSet,
}

pub fn ensemble_to_text(ens: &WorldModelEnsemble) -> Result<String> {
    let header = Header {
        format: FORMAT.into(),
        env_id: ens.env_id.clone(),
        state_dim: ens.state_dim,
        action_spaces: ens.action_spaces.clone(),
        mlp: ens.mlp.clone(),
        n_members: ens.members.len(),
        elites: ens.elites.clone(),
        l_eps: ens.l_eps,
        stats: ens.stats.clone(),
        norm: ens.norm.clone(),
        project_one_hot: ens.project_one_hot,
        val_mse: ens.val_mse.clone(),
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for (m, p) in ens.members.iter().enumerate() {
        out.push_str(&serde_json::to_string(&MemberBlock {
            member: m,
            params: p.clone(),
        })?);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_ensemble(ens: &WorldModelEnsemble, path: &Path) -> Result<()> {
    fs::write(path, ensemble_to_text(ens)?)?;
    Ok(())
}

pub fn load_ensemble(path: &Path) -> Result<WorldModelEnsemble> {
    let text = fs::read_to_string(path)?;
    let fmt = |line: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    let header: Header = serde_json::from_str(lines.next().ok_or_else(|| fmt(1, "empty file".into()))?)
        .map_err(|e| fmt(1, format!("bad header: {e}")))?;
    if header.format != FORMAT {
        return Err(Error::Schema(format!("unsupported ensemble format {}", header.format)));
    }
    let mut members = Vec::with_capacity(header.n_members);
    for (k, line) in lines.enumerate() {
        let block: MemberBlock =
            serde_json::from_str(line).map_err(|e| fmt(k + 2, format!("bad member block: {e}")))?;
        if block.member != k {
            return Err(fmt(k + 2, "member blocks out of order".into()));
        }
        members.push(block.params);
    }
    if members.len() != header.n_members {
        return Err(Error::Schema(format!(
            "header lists {} members, file has {}",
            header.n_members,
            members.len()
        )));
    }
    if header.elites.iter().any(|&e| e >= members.len()) {
        return Err(Error::Schema("elite index out of range".into()));
    }
    Ok(WorldModelEnsemble {
        env_id: header.env_id,
        state_dim: header.state_dim,
        action_spaces: header.action_spaces,
        mlp: header.mlp,
        members,
        elites: header.elites,
        l_eps: header.l_eps,
        stats: header.stats,
        norm: header.norm,
        project_one_hot: header.project_one_hot,
        val_mse: header.val_mse,
    })
}
