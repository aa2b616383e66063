use std::f64::consts::PI;

use rand::Rng as _;

use super::{ActionSpace, EnvSpec, EnvState};
use crate::{Error, Result, Rng};

pub const LINK1: f64 = 0.1;
pub const LINK2: f64 = 0.1;
pub const TARGET_R_MIN: f64 = 0.05;
pub const TARGET_R_MAX: f64 = 0.19;
pub const DT: f64 = 0.05;
pub const MAX_SPEED: f64 = 2.0;

/// `[cos θ1, sin θ1, cos θ2, sin θ2, θ̇1, θ̇2, tx, ty, dx, dy]` with
/// `d = fingertip − target`.
pub const REACHER_STATE_DIM: usize = 10;

/// Which parts of the state each agent sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReacherObs {
    /// Both agents see the full state.
    AllObservant,
    /// Agent `i` sees its own joint angle and velocity plus the target.
    Independent,
    /// Both agents see both joints; only agent 1 sees the target.
    LeaderOnly,
}

impl ReacherObs {
    pub fn from_suffix(s: &str) -> Result<Self> {
        match s {
            "fo" => Ok(Self::AllObservant),
            "ind" => Ok(Self::Independent),
            "leader" => Ok(Self::LeaderOnly),
            _ => Err(Error::config(format!("unknown reacher observation mode {s:?}"))),
        }
    }

    pub fn suffix(&self) -> &'static str {
        match self {
            Self::AllObservant => "fo",
            Self::Independent => "ind",
            Self::LeaderOnly => "leader",
        }
    }
}

/// Planar two-link arm; agent 1 drives the shoulder, agent 2 the elbow.
///
/// Velocity control: `θ̇_i = 2·clip(a_i, −1, 1)`, then `θ_i += θ̇_i·Δt`.
/// The reward is minus the fingertip-to-target distance after the move.
#[derive(Clone, Debug, PartialEq)]
pub struct Reacher {
    pub obs: ReacherObs,
    pub horizon: usize,
}

impl Reacher {
    pub fn new(obs: ReacherObs) -> Self {
        Self { obs, horizon: 50 }
    }

    pub fn spec(&self) -> EnvSpec {
        let obs_dims = match self.obs {
            ReacherObs::AllObservant => vec![REACHER_STATE_DIM; 2],
            ReacherObs::Independent => vec![5, 5],
            ReacherObs::LeaderOnly => vec![8, 6],
        };
        EnvSpec {
            id: format!("reacher2-v0-{}", self.obs.suffix()),
            n_agents: 2,
            state_dim: REACHER_STATE_DIM,
            obs_dims,
            action_spaces: vec![ActionSpace::Continuous(1); 2],
            horizon: self.horizon,
        }
    }

    /// Near-straight arm, target uniform over the annulus area.
    pub fn reset(&self, rng: &mut Rng) -> EnvState {
        let th1 = rng.random_range(-0.1..=0.1);
        let th2 = rng.random_range(-0.1..=0.1);
        let r2 = rng.random_range(TARGET_R_MIN.powi(2)..=TARGET_R_MAX.powi(2));
        let r = f64::sqrt(r2);
        let phi = rng.random_range(-PI..PI);
        EnvState {
            s: compose(th1, th2, 0.0, 0.0, r * phi.cos(), r * phi.sin()),
            t: 0,
        }
    }

    pub fn transition(&self, s: &[f64], action: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
        let (th1, th2) = angles(s);
        let mut vel = [0.0; 2];
        for (i, a) in action.iter().enumerate() {
            let v = *a.first().ok_or_else(|| Error::input("empty action"))?;
            if !v.is_finite() {
                return Err(Error::input(format!("agent {i} action is not finite")));
            }
            vel[i] = MAX_SPEED * v.clamp(-1.0, 1.0);
        }
        let th1 = wrap(th1 + vel[0] * DT);
        let th2 = wrap(th2 + vel[1] * DT);
        let next = compose(th1, th2, vel[0], vel[1], s[6], s[7]);
        let reward = -(next[8].hypot(next[9]));
        Ok((next, reward))
    }

    pub fn observe(&self, s: &[f64]) -> Vec<Vec<f64>> {
        match self.obs {
            ReacherObs::AllObservant => vec![s.to_vec(), s.to_vec()],
            ReacherObs::Independent => vec![
                vec![s[0], s[1], s[4], s[6], s[7]],
                vec![s[2], s[3], s[5], s[6], s[7]],
            ],
            ReacherObs::LeaderOnly => {
                let joints = &s[..6];
                let mut leader = joints.to_vec();
                leader.extend_from_slice(&s[6..8]);
                vec![leader, joints.to_vec()]
            }
        }
    }
}

/// Joint angles recovered from the state's cosines and sines.
pub fn angles(s: &[f64]) -> (f64, f64) {
    (s[1].atan2(s[0]), s[3].atan2(s[2]))
}

fn compose(th1: f64, th2: f64, v1: f64, v2: f64, tx: f64, ty: f64) -> Vec<f64> {
    let (fx, fy) = fingertip(th1, th2);
    vec![
        th1.cos(),
        th1.sin(),
        th2.cos(),
        th2.sin(),
        v1,
        v2,
        tx,
        ty,
        fx - tx,
        fy - ty,
    ]
}

pub fn fingertip(th1: f64, th2: f64) -> (f64, f64) {
    (
        LINK1 * th1.cos() + LINK2 * (th1 + th2).cos(),
        LINK1 * th1.sin() + LINK2 * (th1 + th2).sin(),
    )
}

/// Joint angles placing the fingertip at `(x, y)` on the elbow branch with
/// `sign(θ2) = elbow_sign`. Targets outside the reachable ring map to the
/// nearest feasible configuration.
pub fn inverse_kinematics(x: f64, y: f64, elbow_sign: f64) -> (f64, f64) {
    let r2 = x * x + y * y;
    let c2 = ((r2 - LINK1 * LINK1 - LINK2 * LINK2) / (2.0 * LINK1 * LINK2)).clamp(-1.0, 1.0);
    let th2 = elbow_sign.signum() * c2.acos();
    let th1 = y.atan2(x) - (LINK2 * th2.sin()).atan2(LINK1 + LINK2 * th2.cos());
    (wrap(th1), th2)
}

/// Wrap into `[−π, π)`.
pub fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_stream;

    #[test]
    fn reset_target_is_reachable_and_deterministic() {
        let env = Reacher::new(ReacherObs::AllObservant);
        for seed in 0..200 {
            let s = env.reset(&mut rng_stream(seed, 0));
            let r = s.s[6].hypot(s.s[7]);
            assert!((TARGET_R_MIN - 1e-12..=LINK1 + LINK2).contains(&r));
            assert_eq!(s, env.reset(&mut rng_stream(seed, 0)));
        }
    }

    #[test]
    fn reward_is_zero_on_target() {
        let env = Reacher::new(ReacherObs::AllObservant);
        let (fx, fy) = fingertip(0.3, 0.8);
        let s = compose(0.3, 0.8, 0.0, 0.0, fx, fy);
        let (_, r) = env.transition(&s, &[vec![0.0], vec![0.0]]).unwrap();
        assert!(r.abs() < 1e-15);
    }

    #[test]
    fn both_ik_branches_reach_interior_targets() {
        let mut rng = rng_stream(4, 0);
        for _ in 0..1000 {
            let r = rng.random_range(TARGET_R_MIN + 1e-3..TARGET_R_MAX);
            let phi = rng.random_range(-PI..PI);
            let (x, y) = (r * phi.cos(), r * phi.sin());
            for sign in [1.0, -1.0] {
                let (a, b) = inverse_kinematics(x, y, sign);
                assert!(b * sign >= 0.0);
                let (fx, fy) = fingertip(a, b);
                assert!((fx - x).abs() < 1e-9 && (fy - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn observation_modes_hide_the_right_fields() {
        let env = Reacher::new(ReacherObs::Independent);
        let s = compose(0.4, -0.9, 1.0, -2.0, 0.05, 0.12);
        let o = env.observe(&s);
        assert_eq!(o[1], vec![s[2], s[3], s[5], s[6], s[7]]);
        assert!(!o[1].contains(&s[0]) && !o[1].contains(&s[8]));
        let env = Reacher::new(ReacherObs::LeaderOnly);
        let o = env.observe(&s);
        assert!(!o[1].contains(&s[6]) && !o[1].contains(&s[7]));
        assert_eq!(&o[0][6..], &s[6..8]);
        let env = Reacher::new(ReacherObs::AllObservant);
        let o = env.observe(&s);
        assert_eq!(o[0], s);
        assert_eq!(o[1], s);
    }
}
