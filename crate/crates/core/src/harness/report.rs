use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::eval::mean_sem;
use super::run::RunSummary;
use crate::{Error, Result};

/// Final normalized scores of one (environment, dataset, algorithm) across
/// seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub env: String,
    pub dataset: String,
    pub algorithm: String,
    pub seeds: Vec<u64>,
    pub mean: f64,
    pub sem: f64,
    /// Only one seed: the SEM is reported as 0.
    pub single_seed: bool,
}

/// Group summaries and aggregate them. Runs of one group must share their
/// configuration hash.
pub fn report(summaries: &[RunSummary]) -> Result<Vec<ReportRow>> {
    if summaries.is_empty() {
        return Err(Error::input("report needs at least one completed run"));
    }
    let mut groups: BTreeMap<(String, String, String), Vec<&RunSummary>> = BTreeMap::new();
    for s in summaries {
        groups
            .entry((s.env.clone(), s.dataset.clone(), s.algorithm.name().to_string()))
            .or_default()
            .push(s);
    }
    groups
        .into_iter()
        .map(|((env, dataset, algorithm), runs)| {
            if runs.iter().any(|r| r.config_hash != runs[0].config_hash) {
                return Err(Error::config(format!("runs of {algorithm} on {env}/{dataset} use different configs")));
            }
            let scores: Vec<f64> = runs.iter().map(|r| r.final_eval.normalized).collect();
            let (mean, sem) = mean_sem(&scores);
            Ok(ReportRow {
                env,
                dataset,
                algorithm,
                seeds: runs.iter().map(|r| r.seed).collect(),
                mean,
                sem,
                single_seed: runs.len() == 1,
            })
        })
        .collect()
}

/// Plain-text table, one row per group.
pub fn format_report(rows: &[ReportRow]) -> String {
    let mut out = format!("{:<22} {:<28} {:<12} {:>5}  {}\n", "env", "dataset", "algorithm", "seeds", "normalized score");
    for r in rows {
        out.push_str(&format!(
            "{:<22} {:<28} {:<12} {:>5}  {:.2} ± {:.2}{}\n",
            r.env,
            r.dataset,
            r.algorithm,
            r.seeds.len(),
            r.mean,
            r.sem,
            if r.single_seed { " (single seed)" } else { "" }
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{Algorithm, Evaluation};

    fn summary(seed: u64, score: f64, hash: &str) -> RunSummary {
        RunSummary {
            algorithm: Algorithm::Ibc,
            env: "coordgame-v0".into(),
            dataset: "bernoulli(0.5,0.5)".into(),
            config_hash: hash.into(),
            seed,
            steps: 1,
            final_eval: Evaluation {
                episodes: 1,
                mean: score,
                sem: 0.0,
                normalized: score,
                normalized_sem: 0.0,
                convention_consistency: None,
                scores: vec![score],
            },
        }
    }

    #[test]
    fn aggregates_across_seeds() {
        let rows = report(&[summary(0, 1.0, "h"), summary(1, 1.0, "h"), summary(2, 1.0, "h")]).unwrap();
        assert_eq!((rows[0].mean, rows[0].sem, rows[0].single_seed), (1.0, 0.0, false));
        let rows = report(&[summary(0, 0.0, "h"), summary(1, 1.0, "h")]).unwrap();
        assert_eq!((rows[0].mean, rows[0].sem), (0.5, 0.5));
        assert!(format_report(&rows).contains("0.50 ± 0.50"));
    }

    #[test]
    fn single_seed_is_flagged() {
        let rows = report(&[summary(3, 0.7, "h")]).unwrap();
        assert!(rows[0].single_seed);
        assert_eq!(rows[0].sem, 0.0);
        assert!(format_report(&rows).contains("(single seed)"));
    }

    #[test]
    fn mismatched_configs_are_rejected() {
        assert!(matches!(report(&[summary(0, 1.0, "a"), summary(1, 1.0, "b")]), Err(Error::Config(_))));
        assert!(report(&[]).is_err());
    }
}
