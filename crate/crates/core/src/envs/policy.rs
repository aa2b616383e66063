use rand::Rng as _;

use super::reacher::{angles, inverse_kinematics, wrap};
use super::{ActionSpace, EnvState};
use crate::Rng;

/// Proportional gain of the reacher experts, per radian of joint error.
/// Commands saturate only beyond `1/EXPERT_GAIN` rad, so the recorded action
/// reflects the remaining error rather than the previous command; the error
/// still decays at `EXPERT_GAIN·MAX_SPEED` per second, well inside the
/// horizon.
pub const EXPERT_GAIN: f64 = 2.0;

/// Anything that can pick a joint action from the current state and the
/// agents' observations.
pub trait TeamPolicy: Sync {
    fn act(&self, state: &EnvState, obs: &[Vec<f64>], rng: &mut Rng) -> Vec<Vec<f64>>;

    /// Behaviour tag recorded in dataset headers.
    fn tag(&self) -> String;
}

/// Hand-written behaviour policies used to collect datasets.
#[derive(Clone, Debug, PartialEq)]
pub enum ScriptedPolicy {
    /// Agent `i` plays → (action 1) with probability `p_right[i]`.
    Bernoulli { p_right: Vec<f64> },
    /// Analytic reacher controller holding the elbow on one side:
    /// `θ2 ≥ 0` when `counter_clockwise`, `θ2 ≤ 0` otherwise.
    ReacherExpert { counter_clockwise: bool },
    /// Uniform over each agent's action space.
    UniformRandom { spaces: Vec<ActionSpace> },
}

impl TeamPolicy for ScriptedPolicy {
    fn act(&self, state: &EnvState, _obs: &[Vec<f64>], rng: &mut Rng) -> Vec<Vec<f64>> {
        match self {
            ScriptedPolicy::Bernoulli { p_right } => p_right
                .iter()
                .map(|&p| vec![if rng.random::<f64>() < p { 1.0 } else { 0.0 }])
                .collect(),
            ScriptedPolicy::ReacherExpert { counter_clockwise } => {
                let sign = if *counter_clockwise { 1.0 } else { -1.0 };
                let (th1, th2) = angles(&state.s);
                let (g1, g2) = inverse_kinematics(state.s[6], state.s[7], sign);
                vec![
                    vec![(wrap(g1 - th1) * EXPERT_GAIN).clamp(-1.0, 1.0)],
                    vec![((g2 - th2) * EXPERT_GAIN).clamp(-1.0, 1.0)],
                ]
            }
            ScriptedPolicy::UniformRandom { spaces } => spaces
                .iter()
                .map(|sp| match *sp {
                    ActionSpace::Discrete(n) => vec![rng.random_range(0..n) as f64],
                    ActionSpace::Continuous(d) => {
                        (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect()
                    }
                })
                .collect(),
        }
    }

    fn tag(&self) -> String {
        match self {
            ScriptedPolicy::Bernoulli { p_right } => {
                let ps: Vec<String> = p_right.iter().map(|p| format!("{p}")).collect();
                format!("bernoulli({})", ps.join(","))
            }
            ScriptedPolicy::ReacherExpert { counter_clockwise: true } => "expert-ccw".into(),
            ScriptedPolicy::ReacherExpert { counter_clockwise: false } => "expert-cw".into(),
            ScriptedPolicy::UniformRandom { .. } => "uniform-random".into(),
        }
    }
}
