//! Running one session of a policy against the simulator.

use rand::Rng;

use crate::env::World;
use crate::error::{Error, Result};
use crate::policy::{action_to_slate, Transition};
use crate::request::Request;

/// A completed session: per-step transitions plus its outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionTrajectory {
    pub user: usize,
    pub transitions: Vec<Transition>,
    pub rewards: Vec<f64>,
    /// Positive impressions per behavior over the session.
    pub positives: Vec<usize>,
    pub return_day: usize,
    pub retention: f64,
}

impl SessionTrajectory {
    pub fn steps(&self) -> usize {
        self.rewards.len()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn mean_reward(&self) -> f64 {
        self.total_reward() / self.steps() as f64
    }

    /// Checks that the last transition, and only it, carries retention.
    pub fn validate(&self) -> Result<()> {
        let n = self.transitions.len();
        if n == 0 {
            return Err(Error::Argument("empty trajectory".into()));
        }
        for (i, t) in self.transitions.iter().enumerate() {
            t.validate()?;
            if t.is_terminal() != (i + 1 == n) {
                return Err(Error::Argument(format!(
                    "transition {i} of {n} has the wrong terminal flag"
                )));
            }
        }
        Ok(())
    }
}

/// Runs one session of `user`, choosing each action with `act`.
///
/// Session `t` of length `T` yields transitions `(s_t, a_t, r_t, s_{t+1})`
/// for `t < T` and a terminal transition on `s_T` carrying the retention
/// reward and `Σ_{j<T} r_j`.
pub fn collect_session<R, F>(world: &mut World, user: usize, mut act: F, rng: &mut R) -> Result<SessionTrajectory>
where
    R: Rng + ?Sized,
    F: FnMut(&Request) -> Result<Vec<f64>>,
{
    let k = world.config().slate_size;
    let (mut session, mut request) = world.reset_session(user)?;
    let mut steps: Vec<(Request, Vec<f64>, f64)> = Vec::new();
    loop {
        let action = act(&request)?;
        let slate = action_to_slate(&action, world.items(), k)?;
        let out = world.step(&mut session, &slate, rng)?;
        let state = std::mem::replace(&mut request, out.next_request);
        steps.push((state, action, out.reward));
        if out.left_session {
            break;
        }
    }
    let ret = world.end_session(&session, rng)?;
    let n = steps.len();
    let rewards: Vec<f64> = steps.iter().map(|s| s.2).collect();
    let mut transitions = Vec::with_capacity(n);
    let mut prefix = 0.0;
    let mut states = steps.into_iter().peekable();
    while let Some((state, action, reward)) = states.next() {
        let next = states.peek().map(|s| s.0.clone());
        let retention = if next.is_none() { Some(ret.retention) } else { None };
        transitions.push(Transition {
            state,
            action,
            reward,
            next,
            retention,
            reward_prefix: prefix,
        });
        prefix += reward;
    }
    Ok(SessionTrajectory {
        user,
        transitions,
        rewards,
        positives: session.positives.clone(),
        return_day: ret.day,
        retention: ret.retention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trajectory_layout() {
        let mut world = World::new(EnvConfig::default(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut arng = ChaCha8Rng::seed_from_u64(9);
        for user in 0..20 {
            let traj = collect_session(
                &mut world,
                user,
                |_| Ok((0..8).map(|_| arng.random_range(-1.0..1.0)).collect()),
                &mut rng,
            )
            .unwrap();
            traj.validate().unwrap();
            let n = traj.steps();
            assert_eq!(traj.transitions.len(), n);
            let last = traj.transitions.last().unwrap();
            let before: f64 = traj.rewards[..n - 1].iter().sum();
            assert!((last.reward_prefix - before).abs() < 1e-12);
            for w in traj.transitions.windows(2) {
                assert_eq!(w[0].next.as_ref(), Some(&w[1].state));
                assert_eq!(w[1].state.history.len(), w[0].state.history.len() + 1);
            }
            assert!(traj.positives.iter().all(|&c| c <= n * 6));
        }
    }
}
