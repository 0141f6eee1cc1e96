//! Parametric cross-session user simulator.
//!
//! Each step the user reacts to a slate of `K` items with per-impression
//! Bernoulli feedback for every behavior, drawn at a probability that
//! depends only on the slate's mean embedding. A leave module ends the
//! session, and a return module draws the number of days until the next
//! session from the session's satisfaction and diversity.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{dot, norm, sigmoid, Tensor2D};
use crate::request::{HistoryEntry, InteractionHistory, Request, UserFeatures};
use crate::rng::{stream, SimRng};

pub const BEHAVIORS: [&str; 3] = ["click", "long_view", "like"];

#[derive(Clone, Debug, PartialEq)]
pub struct Behavior {
    pub name: String,
    /// Weight in the immediate reward.
    pub omega: f64,
    /// Sensitivity to user/slate affinity.
    pub kappa: f64,
    /// Base logit.
    pub bias: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeaveParams {
    pub theta0: f64,
    pub theta1: f64,
    pub theta2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReturnParams {
    pub kappa_ret: f64,
    pub kappa_div: f64,
    pub max_day: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub users: usize,
    pub items: usize,
    pub item_dim: usize,
    pub feature_dim: usize,
    pub slate_size: usize,
    pub max_steps: usize,
    pub history_len: usize,
    pub behaviors: Vec<Behavior>,
    pub leave: LeaveParams,
    pub ret: ReturnParams,
    /// Upper end of the uniform per-user activity draw.
    pub activity_max: f64,
    pub drift: f64,
    pub boredom: f64,
    pub boredom_window: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        let b = |name: &str, omega, kappa, bias| Behavior {
            name: name.to_string(),
            omega,
            kappa,
            bias,
        };
        EnvConfig {
            users: 200,
            items: 500,
            item_dim: 8,
            feature_dim: 8,
            slate_size: 6,
            max_steps: 20,
            history_len: 50,
            behaviors: vec![
                b("click", 1.0, 4.0, 0.0),
                b("long_view", 0.5, 4.0, -1.0),
                b("like", 0.25, 4.0, -2.0),
            ],
            leave: LeaveParams {
                theta0: -2.5,
                theta1: 0.3,
                theta2: 0.2,
            },
            ret: ReturnParams {
                kappa_ret: 0.5,
                kappa_div: 0.1,
                max_day: 10,
            },
            activity_max: 0.2,
            drift: 0.02,
            boredom: 0.3,
            boredom_window: 5,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.users == 0 || self.item_dim == 0 || self.feature_dim == 0 {
            return bad("users, item_dim and feature_dim must be positive".into());
        }
        if self.slate_size == 0 || self.slate_size > self.items {
            return bad(format!(
                "slate size {} must be in 1..={} items",
                self.slate_size, self.items
            ));
        }
        if self.max_steps == 0 || self.ret.max_day == 0 || self.history_len == 0 {
            return bad("max_steps, max_return_day and history_len must be at least 1".into());
        }
        if self.behaviors.is_empty() {
            return bad("at least one behavior is required".into());
        }
        if let Some(b) = self.behaviors.iter().find(|b| !(b.omega >= 0.0)) {
            return bad(format!("behavior `{}` has negative weight", b.name));
        }
        if !(self.activity_max > 0.0 && self.activity_max <= 1.0) {
            return bad("activity_max must lie in (0, 1]".into());
        }
        Ok(())
    }

    pub fn omega(&self) -> Vec<f64> {
        self.behaviors.iter().map(|b| b.omega).collect()
    }
}

/// `r = Σ_b ω_b y_b`.
pub fn immediate_reward(feedback: &[f64], omega: &[f64]) -> Result<f64> {
    if feedback.len() != omega.len() {
        return Err(Error::Argument(format!(
            "{} feedback values for {} behavior weights",
            feedback.len(),
            omega.len()
        )));
    }
    Ok(feedback.iter().zip(omega).map(|(y, w)| w * y).sum())
}

/// Probability of ending the session after step `t` (1-based).
pub fn leave_probability(params: &LeaveParams, t: usize, satisfaction: f64, max_steps: usize) -> f64 {
    if t >= max_steps {
        return 1.0;
    }
    sigmoid(params.theta0 + params.theta1 * t as f64 - params.theta2 * satisfaction)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SessionSummary {
    pub total_satisfaction: f64,
    pub diversity: f64,
    pub length: usize,
}

impl SessionSummary {
    pub fn satisfaction_rate(&self) -> f64 {
        if self.length == 0 {
            0.0
        } else {
            self.total_satisfaction / self.length as f64
        }
    }
}

/// `logit(day = j) = −j·(κ_ret·satisfaction_rate + κ_div·diversity + activity)`
/// for `j = 1..=max_day`.
pub fn return_day_logits(summary: &SessionSummary, activity: f64, params: &ReturnParams) -> Vec<f64> {
    let x = params.kappa_ret * summary.satisfaction_rate() + params.kappa_div * summary.diversity + activity;
    (1..=params.max_day).map(|j| -(j as f64) * x).collect()
}

pub fn return_day_probabilities(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Draws the return day `d ∈ [1, max_day]` and the retention reward `1/d`.
pub fn sample_return_day<R: Rng + ?Sized>(
    summary: &SessionSummary,
    activity: f64,
    params: &ReturnParams,
    rng: &mut R,
) -> (usize, f64) {
    let probs = return_day_probabilities(&return_day_logits(summary, activity, params));
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut day = probs.len();
    for (j, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            day = j + 1;
            break;
        }
    }
    (day, 1.0 / day as f64)
}

/// `1 − mean pairwise cosine` of the given embeddings, clamped to `[0, 1]`.
pub fn diversity(embeddings: &[&[f64]]) -> f64 {
    let n = embeddings.len();
    if n < 2 {
        return 0.0;
    }
    let norms: Vec<f64> = embeddings.iter().map(|e| norm(e)).collect();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let denom = norms[i] * norms[j];
            if denom > 0.0 {
                total += dot(embeddings[i], embeddings[j]) / denom;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    (1.0 - total / pairs).clamp(0.0, 1.0)
}

/// Per-behavior positive probability for a user/slate affinity.
pub fn feedback_probabilities(behaviors: &[Behavior], affinity: f64) -> Vec<f64> {
    behaviors
        .iter()
        .map(|b| sigmoid(b.kappa * affinity + b.bias))
        .collect()
}

#[derive(Clone, Debug)]
struct UserState {
    latent: Vec<f64>,
    activity: f64,
    features: Vec<f64>,
    log: VecDeque<Arc<HistoryEntry>>,
}

#[derive(Clone, Debug)]
pub struct World {
    cfg: EnvConfig,
    items: Vec<Vec<f64>>,
    users: Vec<UserState>,
}

/// Per-session bookkeeping owned by the caller.
#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub user: usize,
    pub steps: usize,
    pub satisfaction: f64,
    pub rewards: Vec<f64>,
    pub positives: Vec<usize>,
    recommended: Vec<usize>,
    ended: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Fraction of the slate's impressions positive for each behavior.
    pub feedback: Vec<f64>,
    pub positives: Vec<usize>,
    pub reward: f64,
    pub left_session: bool,
    /// The request after this step's feedback has been logged.
    pub next_request: Request,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReturnOutcome {
    pub day: usize,
    pub retention: f64,
    pub summary: SessionSummary,
}

fn unit_gaussian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

impl World {
    /// Builds a world deterministically from `seed`.
    pub fn new(cfg: EnvConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng: SimRng = stream(seed, 0);
        let items: Vec<Vec<f64>> = (0..cfg.items)
            .map(|_| unit_gaussian(cfg.item_dim, &mut rng))
            .collect();
        let scale = 1.0 / (cfg.item_dim as f64).sqrt();
        let proj_data = (0..cfg.feature_dim * cfg.item_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .map(|x: f64| x * scale)
            .collect();
        let projection = Tensor2D::from_vec(cfg.feature_dim, cfg.item_dim, proj_data)?;
        let users = (0..cfg.users)
            .map(|_| {
                let latent = unit_gaussian(cfg.item_dim, &mut rng);
                // strictly inside (0, activity_max]
                let activity = cfg.activity_max * (1.0 - rng.random::<f64>());
                let features = projection.matvec(&latent);
                UserState {
                    latent,
                    activity,
                    features,
                    log: VecDeque::new(),
                }
            })
            .collect();
        Ok(World { cfg, items, users })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn items(&self) -> &[Vec<f64>] {
        &self.items
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn user_latent(&self, user: usize) -> Result<&[f64]> {
        Ok(&self.user(user)?.latent)
    }

    pub fn user_activity(&self, user: usize) -> Result<f64> {
        Ok(self.user(user)?.activity)
    }

    fn user(&self, user: usize) -> Result<&UserState> {
        self.users
            .get(user)
            .ok_or_else(|| Error::Argument(format!("unknown user {user}")))
    }

    /// The current request of `user`: fixed features plus the newest
    /// `history_len` log entries.
    pub fn request(&self, user: usize) -> Result<Request> {
        let u = self.user(user)?;
        Ok(Request {
            user,
            features: UserFeatures(u.features.clone()),
            history: InteractionHistory::new(u.log.iter().cloned().collect()),
        })
    }

    pub fn reset_session(&self, user: usize) -> Result<(Session, Request)> {
        let request = self.request(user)?;
        let session = Session {
            user,
            steps: 0,
            satisfaction: 0.0,
            rewards: Vec::new(),
            positives: vec![0; self.cfg.behaviors.len()],
            recommended: Vec::new(),
            ended: false,
        };
        Ok((session, request))
    }

    fn check_slate(&self, slate: &[usize]) -> Result<()> {
        if slate.len() != self.cfg.slate_size {
            return Err(Error::Argument(format!(
                "slate has {} items, expected {}",
                slate.len(),
                self.cfg.slate_size
            )));
        }
        for (i, &id) in slate.iter().enumerate() {
            if id >= self.items.len() {
                return Err(Error::Argument(format!("item id {id} out of range")));
            }
            if slate[..i].contains(&id) {
                return Err(Error::Argument(format!("duplicate item id {id} in slate")));
            }
        }
        Ok(())
    }

    /// Latent minus the boredom term built from recently consumed slates.
    fn effective_preference(&self, user: &UserState) -> Vec<f64> {
        let recent: Vec<&Arc<HistoryEntry>> =
            user.log.iter().rev().take(self.cfg.boredom_window).collect();
        let mut eff = user.latent.clone();
        if !recent.is_empty() {
            let w = self.cfg.boredom / recent.len() as f64;
            for e in recent {
                for (x, v) in eff.iter_mut().zip(&e.item_embedding) {
                    *x -= w * v;
                }
            }
        }
        eff
    }

    pub fn step<R: Rng + ?Sized>(
        &mut self,
        session: &mut Session,
        slate: &[usize],
        rng: &mut R,
    ) -> Result<StepOutcome> {
        if session.ended {
            return Err(Error::Usage("step on an ended session".into()));
        }
        self.check_slate(slate)?;
        let k = slate.len();
        let dim = self.cfg.item_dim;
        let mut mean = vec![0.0; dim];
        for &id in slate {
            for (m, v) in mean.iter_mut().zip(&self.items[id]) {
                *m += v / k as f64;
            }
        }
        let user = &self.users[session.user];
        let affinity = dot(&self.effective_preference(user), &mean);
        let probs = feedback_probabilities(&self.cfg.behaviors, affinity);
        let positives: Vec<usize> = probs
            .iter()
            .map(|&p| (0..k).filter(|_| rng.random::<f64>() < p).count())
            .collect();
        let feedback: Vec<f64> = positives.iter().map(|&c| c as f64 / k as f64).collect();
        let reward = immediate_reward(&feedback, &self.cfg.omega())?;

        let user = &mut self.users[session.user];
        if positives[0] > 0 {
            for (x, v) in user.latent.iter_mut().zip(&mean) {
                *x += self.cfg.drift * (v - *x);
            }
        }
        user.log.push_back(Arc::new(HistoryEntry {
            item_embedding: mean,
            feedback: feedback.clone(),
        }));
        while user.log.len() > self.cfg.history_len {
            user.log.pop_front();
        }

        session.steps += 1;
        session.satisfaction += reward;
        session.rewards.push(reward);
        for (acc, c) in session.positives.iter_mut().zip(&positives) {
            *acc += c;
        }
        session.recommended.extend_from_slice(slate);
        let p_leave = leave_probability(
            &self.cfg.leave,
            session.steps,
            session.satisfaction,
            self.cfg.max_steps,
        );
        let left_session = p_leave >= 1.0 || rng.random::<f64>() < p_leave;
        session.ended = left_session;
        Ok(StepOutcome {
            feedback,
            positives,
            reward,
            left_session,
            next_request: self.request(session.user)?,
        })
    }

    pub fn summarize(&self, session: &Session) -> SessionSummary {
        let embs: Vec<&[f64]> = session
            .recommended
            .iter()
            .map(|&id| self.items[id].as_slice())
            .collect();
        SessionSummary {
            total_satisfaction: session.satisfaction,
            diversity: diversity(&embs),
            length: session.steps,
        }
    }

    /// Draws the return day for a finished session.
    pub fn end_session<R: Rng + ?Sized>(&self, session: &Session, rng: &mut R) -> Result<ReturnOutcome> {
        if session.steps == 0 {
            return Err(Error::Usage("session ended before any step".into()));
        }
        let summary = self.summarize(session);
        let activity = self.user(session.user)?.activity;
        let (day, retention) = sample_return_day(&summary, activity, &self.cfg.ret, rng);
        Ok(ReturnOutcome {
            day,
            retention,
            summary,
        })
    }
}
