use std::path::Path;
use std::process::{Command, Output};

use moma::harness::{load_summary, Algorithm, ExperimentConfig};

fn moma(args: &[&str], dir: &Path, envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_moma"));
    cmd.args(args).current_dir(dir).env_remove("MOMA_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn failed(out: &Output) -> String {
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    assert!(err.starts_with("error: "), "{err}");
    err
}

const SMALL: &str = "net.embed_dim = 8
net.hidden = 16
net.mixer_hidden = 8
eval_episodes = 5
wm.hidden = 16
wm.steps = 40
ppo.transitions_per_update = 200
baseline.batch_size = 32
";

#[test]
fn gen_data_reports_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&moma(
        &["gen-data", "--env", "coordgame-v0", "--behavior", "favorable", "--episodes", "40", "--out", "data/fav.txt"],
        dir.path(),
        &[],
    ));
    assert!(out.contains("40 episodes, 1000 steps"), "{out}");
    let ds = moma::dataset::load(&dir.path().join("data/fav.txt")).unwrap();
    assert_eq!(ds.meta.n_episodes, 40);
}

#[test]
fn train_eval_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&moma(&["gen-data", "--env", "reacher2-v0-leader", "--behavior", "mixture", "--episodes", "6", "--out", "r.txt"], d, &[]));
    std::fs::write(
        d.join("moma.cfg"),
        format!("env = reacher2-v0-leader\ndataset = r.txt\nalgorithm = moma-ppo\nout_dir = runs/m\nworld_model = wm.txt\nsteps = 2\neval_every = 1\n{SMALL}"),
    )
    .unwrap();
    let wm = ok(&moma(&["train-wm", "--config", "moma.cfg"], d, &[]));
    assert!(wm.starts_with("wm.txt: l_eps "), "{wm}");

    let train = ok(&moma(&["train", "--config", "moma.cfg"], d, &[("MOMA_SEED", "3")]));
    assert!(train.starts_with("moma-ppo seed 3 on reacher2-v0-leader/expert-ccw+expert-cw"), "{train}");
    let run = d.join("runs/m");
    let summary = load_summary(&run).unwrap();
    assert_eq!((summary.seed, summary.steps, summary.algorithm), (3, 2, Algorithm::MomaPpo));
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);

    let eval = ok(&moma(&["eval", "--team", "runs/m/team.txt", "--dataset", "r.txt", "--episodes", "5"], d, &[]));
    assert!(eval.starts_with("moma-ppo on reacher2-v0-leader: score "), "{eval}");
    assert!(eval.contains("elbow convention consistency"), "{eval}");

    std::fs::write(
        d.join("ibc.cfg"),
        format!("env = reacher2-v0-leader\ndataset = r.txt\nalgorithm = ibc\nout_dir = runs/i\nsteps = 4\neval_every = 2\n{SMALL}"),
    )
    .unwrap();
    ok(&moma(&["train", "--config", "ibc.cfg"], d, &[]));
    let report = ok(&moma(&["report", "runs/m", "runs/i/summary.json"], d, &[]));
    assert!(report.contains("moma-ppo") && report.contains("ibc"), "{report}");
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let err = failed(&moma(&["gen-data", "--env", "pong", "--behavior", "favorable", "--out", "x.txt"], d, &[]));
    assert!(err.contains("pong"), "{err}");
    failed(&moma(&["gen-data", "--env", "coordgame-v0", "--behavior", "greedy", "--out", "x.txt"], d, &[]));

    std::fs::write(d.join("missing.cfg"), "env = coordgame-v0\ndataset = nope.txt\nalgorithm = ibc\n").unwrap();
    let err = failed(&moma(&["train", "--config", "missing.cfg"], d, &[]));
    assert!(err.contains("nope.txt"), "{err}");

    std::fs::write(d.join("typo.cfg"), "env = coordgame-v0\ndataset = d.txt\nalgorithm = ibc\nppo.lrr = 1\n").unwrap();
    failed(&moma(&["train", "--config", "typo.cfg"], d, &[]));

    std::fs::write(d.join("seed.cfg"), "env = coordgame-v0\ndataset = d.txt\nalgorithm = ibc\n").unwrap();
    let err = failed(&moma(&["train", "--config", "seed.cfg"], d, &[("MOMA_SEED", "-1")]));
    assert!(err.contains("MOMA_SEED"), "{err}");

    let err = failed(&moma(&["train-wm", "--config", "seed.cfg"], d, &[]));
    assert!(err.contains("--out"), "{err}");
    failed(&moma(&["report", "no-such-run"], d, &[]));
}

#[test]
fn config_text_round_trips() {
    let cfg = ExperimentConfig::parse(&format!(
        "env = reacher2-v0-fo\ndataset = d.txt\nalgorithm = iql-central\nseed = 9\nrollout.l_eps = 0.5\n{SMALL}"
    ))
    .unwrap();
    assert_eq!(cfg.net.hidden, vec![16]);
    assert_eq!(cfg.rollout.l_eps, Some(0.5));
    let back = ExperimentConfig::parse(&cfg.to_text().unwrap()).unwrap();
    assert_eq!(back, cfg);
    let mut other = cfg.clone();
    other.seed = 10;
    assert_eq!(other.hash(), cfg.hash());
    other.ppo.lr *= 2.0;
    assert_ne!(other.hash(), cfg.hash());
}
