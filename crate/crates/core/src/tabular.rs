//! Discrete flow network on a complete b-ary tree, trained with detailed
//! balance, with exact terminal-distribution checks.
//!
//! Every node has a unique parent, so the backward policy is identically 1
//! and the terminal distribution of a perfectly balanced model is
//! proportional to the leaf rewards.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, ParamSet, Tensor2D};

const LOGITS: &str = "logits";
const LOG_FLOW: &str = "log_flow";

#[derive(Clone, Debug, PartialEq)]
pub struct TreeEnv {
    depth: usize,
    branching: usize,
    rewards: Vec<f64>,
    // first node id of each level
    offsets: Vec<usize>,
}

impl TreeEnv {
    pub fn new(depth: usize, branching: usize, rewards: Vec<f64>) -> Result<Self> {
        if depth == 0 || branching == 0 {
            return Err(Error::Argument("depth and branching must be positive".into()));
        }
        let leaves = branching
            .checked_pow(depth as u32)
            .ok_or_else(|| Error::Argument("tree too large".into()))?;
        if rewards.len() != leaves {
            return Err(Error::Argument(format!(
                "{} rewards for {leaves} terminal states",
                rewards.len()
            )));
        }
        if let Some(r) = rewards.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(Error::Argument(format!("terminal reward {r} is not positive")));
        }
        let mut offsets = Vec::with_capacity(depth + 2);
        let mut acc = 0;
        for l in 0..=depth {
            offsets.push(acc);
            acc += branching.pow(l as u32);
        }
        offsets.push(acc);
        Ok(TreeEnv {
            depth,
            branching,
            rewards,
            offsets,
        })
    }

    /// Rewards drawn log-uniformly in `[lo, hi]`.
    pub fn log_uniform<R: Rng + ?Sized>(depth: usize, branching: usize, lo: f64, hi: f64, rng: &mut R) -> Result<Self> {
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Argument("reward range must be positive and ordered".into()));
        }
        let n = branching.pow(depth as u32);
        let (a, b) = (lo.ln(), hi.ln());
        let rewards = (0..n).map(|_| (a + (b - a) * rng.random::<f64>()).exp()).collect();
        TreeEnv::new(depth, branching, rewards)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn num_terminals(&self) -> usize {
        self.rewards.len()
    }

    pub fn num_internal(&self) -> usize {
        self.offsets[self.depth]
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets[self.depth + 1]
    }

    /// Global id of node `i` on level `l`.
    fn node(&self, level: usize, i: usize) -> usize {
        self.offsets[level] + i
    }

    /// `R / ΣR` per leaf.
    pub fn target_distribution(&self) -> Vec<f64> {
        let total: f64 = self.rewards.iter().sum();
        self.rewards.iter().map(|r| r / total).collect()
    }
}

/// Tabular forward logits per internal node and a log-flow per node.
#[derive(Clone, Debug)]
pub struct TabularGfn {
    pub params: ParamSet,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

impl TabularGfn {
    /// Uniform policy and zero log-flows.
    pub fn new(env: &TreeEnv) -> Self {
        let mut params = ParamSet::new();
        params
            .insert(LOGITS, Tensor2D::zeros(env.num_internal(), env.branching))
            .expect("fresh set");
        params
            .insert(LOG_FLOW, Tensor2D::zeros(env.num_nodes(), 1))
            .expect("fresh set");
        TabularGfn { params }
    }

    /// Flows equal to subtree reward sums and a policy proportional to child
    /// flows.
    pub fn analytic(env: &TreeEnv) -> Self {
        let mut m = TabularGfn::new(env);
        let b = env.branching;
        let mut flows = vec![0.0; env.num_nodes()];
        for (i, r) in env.rewards.iter().enumerate() {
            flows[env.node(env.depth, i)] = *r;
        }
        for l in (0..env.depth).rev() {
            for i in 0..b.pow(l as u32) {
                flows[env.node(l, i)] = (0..b).map(|c| flows[env.node(l + 1, i * b + c)]).sum();
            }
        }
        let lf = m.params.get_mut(LOG_FLOW).expect("present");
        for (v, f) in lf.value.data_mut().iter_mut().zip(&flows) {
            *v = f.ln();
        }
        let logits = m.params.get_mut(LOGITS).expect("present");
        for l in 0..env.depth {
            for i in 0..b.pow(l as u32) {
                let s = env.node(l, i);
                for c in 0..b {
                    logits.value.set(s, c, flows[env.node(l + 1, i * b + c)].ln());
                }
            }
        }
        m
    }

    pub fn policy(&self, state: usize) -> Vec<f64> {
        softmax(self.params.value(LOGITS).expect("present").row(state))
    }

    pub fn log_flow(&self, node: usize) -> f64 {
        self.params.value(LOG_FLOW).expect("present").get(node, 0)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|(_, p)| p.value.is_finite())
    }

    /// Squared residuals of one root-to-leaf path given by child choices,
    /// plus the terminal matching term; gradients are added when `grad`.
    fn path_loss(&mut self, env: &TreeEnv, choices: &[usize], grad: bool) -> f64 {
        let b = env.branching;
        let mut loss = 0.0;
        let mut i = 0;
        let mut dlogits: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut dflow: Vec<(usize, f64)> = Vec::new();
        for (l, &c) in choices.iter().enumerate() {
            let s = env.node(l, i);
            let child_i = i * b + c;
            let s_next = env.node(l + 1, child_i);
            let row = self.params.value(LOGITS).expect("present").row(s).to_vec();
            let logp = log_softmax(&row);
            let delta = self.log_flow(s) + logp[c] - self.log_flow(s_next);
            loss += delta * delta;
            if grad {
                let g = 2.0 * delta;
                let p = softmax(&row);
                let dl: Vec<f64> = (0..b).map(|k| g * (f64::from(u8::from(k == c)) - p[k])).collect();
                dlogits.push((s, dl));
                dflow.push((s, g));
                dflow.push((s_next, -g));
            }
            i = child_i;
        }
        let leaf = env.node(env.depth, i);
        let delta = self.log_flow(leaf) - env.rewards[i].ln();
        loss += delta * delta;
        if grad {
            dflow.push((leaf, 2.0 * delta));
            let lg = self.params.get_mut(LOGITS).expect("present");
            for (s, dl) in dlogits {
                for (k, v) in dl.into_iter().enumerate() {
                    let cur = lg.grad.get(s, k);
                    lg.grad.set(s, k, cur + v);
                }
            }
            let fg = self.params.get_mut(LOG_FLOW).expect("present");
            for (n, v) in dflow {
                let cur = fg.grad.get(n, 0);
                fg.grad.set(n, 0, cur + v);
            }
        }
        loss
    }

    /// Detailed-balance loss summed over every edge plus terminal matching at
    /// every leaf.
    pub fn full_tree_loss(&self, env: &TreeEnv) -> f64 {
        let b = env.branching;
        let lg = self.params.value(LOGITS).expect("present");
        let mut loss = 0.0;
        for l in 0..env.depth {
            for i in 0..b.pow(l as u32) {
                let s = env.node(l, i);
                let logp = log_softmax(lg.row(s));
                for (c, lp) in logp.iter().enumerate() {
                    let d = self.log_flow(s) + lp - self.log_flow(env.node(l + 1, i * b + c));
                    loss += d * d;
                }
            }
        }
        for (i, r) in env.rewards.iter().enumerate() {
            let d = self.log_flow(env.node(env.depth, i)) - r.ln();
            loss += d * d;
        }
        loss
    }

    fn sample_path<R: Rng + ?Sized>(&self, env: &TreeEnv, rng: &mut R) -> Vec<usize> {
        let mut i = 0;
        let mut choices = Vec::with_capacity(env.depth);
        for l in 0..env.depth {
            let p = self.policy(env.node(l, i));
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut c = p.len() - 1;
            for (k, pk) in p.iter().enumerate() {
                acc += pk;
                if u < acc {
                    c = k;
                    break;
                }
            }
            choices.push(c);
            i = i * env.branching + c;
        }
        choices
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TabularTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub trajectories_per_step: usize,
}

impl Default for TabularTrainConfig {
    fn default() -> Self {
        TabularTrainConfig {
            steps: 3000,
            lr: 0.05,
            trajectories_per_step: 16,
        }
    }
}

/// Adam on the detailed-balance loss over trajectories sampled from the
/// current policy, with terminal matching and no offsets.
pub fn train_tabular_db<R: Rng + ?Sized>(env: &TreeEnv, cfg: &TabularTrainConfig, rng: &mut R) -> Result<TabularGfn> {
    if cfg.steps == 0 || cfg.trajectories_per_step == 0 {
        return Err(Error::Argument("steps and trajectories_per_step must be positive".into()));
    }
    let mut model = TabularGfn::new(env);
    let mut opt = AdamState::new(&model.params, [LOGITS, LOG_FLOW], AdamConfig::default())?;
    for _ in 0..cfg.steps {
        model.params.zero_grad();
        for _ in 0..cfg.trajectories_per_step {
            let path = model.sample_path(env, rng);
            model.path_loss(env, &path, true);
        }
        adam_step(&mut model.params, &mut opt, cfg.lr)?;
    }
    Ok(model)
}

/// Terminal distribution by multiplying policy probabilities along every
/// root-to-leaf path.
pub fn terminal_distribution(env: &TreeEnv, model: &TabularGfn) -> Vec<f64> {
    let b = env.branching;
    (0..env.num_terminals())
        .map(|leaf| {
            let mut digits = Vec::with_capacity(env.depth);
            let mut x = leaf;
            for _ in 0..env.depth {
                digits.push(x % b);
                x /= b;
            }
            digits.reverse();
            let mut i = 0;
            let mut p = 1.0;
            for (l, c) in digits.into_iter().enumerate() {
                p *= model.policy(env.node(l, i))[c];
                i = i * b + c;
            }
            p
        })
        .collect()
}

/// Terminal distribution by propagating node marginals level by level.
pub fn terminal_distribution_recursive(env: &TreeEnv, model: &TabularGfn) -> Vec<f64> {
    let b = env.branching;
    let mut level = vec![1.0];
    for l in 0..env.depth {
        let mut next = vec![0.0; level.len() * b];
        for (i, m) in level.iter().enumerate() {
            for (c, p) in model.policy(env.node(l, i)).iter().enumerate() {
                next[i * b + c] += m * p;
            }
        }
        level = next;
    }
    level
}

/// `½ Σ |p_leaf − R_leaf/ΣR|`.
pub fn terminal_tv(env: &TreeEnv, model: &TabularGfn) -> f64 {
    let p = terminal_distribution(env, model);
    0.5 * p
        .iter()
        .zip(env.target_distribution())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tree_sizes() {
        assert_eq!(TreeEnv::new(2, 2, vec![1.0; 4]).unwrap().num_terminals(), 4);
        let t = TreeEnv::new(1, 3, vec![1.0; 3]).unwrap();
        assert_eq!(t.num_terminals(), 3);
        assert_eq!((t.num_internal(), t.num_nodes()), (1, 4));
        assert!(TreeEnv::new(1, 2, vec![1.0, 0.0]).is_err());
        assert!(TreeEnv::new(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn tv_examples() {
        let t = TreeEnv::new(2, 2, vec![1.0; 4]).unwrap();
        assert_eq!(terminal_tv(&t, &TabularGfn::new(&t)), 0.0);
        let t = TreeEnv::new(1, 2, vec![3.0, 1.0]).unwrap();
        assert!((terminal_tv(&t, &TabularGfn::new(&t)) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn analytic_optimum_has_zero_loss_and_conserves_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = TreeEnv::log_uniform(3, 3, 0.1, 10.0, &mut rng).unwrap();
        let m = TabularGfn::analytic(&t);
        assert!(m.full_tree_loss(&t) < 1e-24);
        assert!(terminal_tv(&t, &m) < 1e-12);
        let b = t.branching();
        for l in 0..t.depth() {
            for i in 0..b.pow(l as u32) {
                let f = m.log_flow(t.node(l, i)).exp();
                let children: f64 = (0..b).map(|c| m.log_flow(t.node(l + 1, i * b + c)).exp()).sum();
                assert!((f - children).abs() <= 1e-12 * f);
            }
        }
    }

    #[test]
    fn path_gradient_matches_differences() {
        let t = TreeEnv::new(2, 3, (1..=9).map(|x| x as f64).collect()).unwrap();
        let mut m = TabularGfn::new(&t);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (_, p) in m.params.iter_mut() {
            for v in p.value.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let path = [2, 1];
        let report = crate::nn::gradient_check(
            |p| {
                let mut mm = TabularGfn { params: p.clone() };
                let loss = mm.path_loss(&t, &path, true);
                for (name, q) in mm.params.iter() {
                    p.get_mut(name)?.grad = q.grad.clone();
                }
                Ok(loss)
            },
            &mut m.params,
            1e-5,
            1e-6,
            |_| true,
        )
        .unwrap();
        assert!(report.passed, "{}", report.max_rel_error);
    }

    #[test]
    fn two_leaf_case_learns_proportional_probabilities() {
        let t = TreeEnv::new(1, 2, vec![3.0, 1.0]).unwrap();
        let m = train_tabular_db(&t, &TabularTrainConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let p = terminal_distribution(&t, &m);
        assert!((p[0] - 0.75).abs() <= 0.02 && (p[1] - 0.25).abs() <= 0.02, "{p:?}");
    }

    #[test]
    fn uniform_rewards_give_uniform_policy() {
        let t = TreeEnv::new(2, 3, vec![2.0; 9]).unwrap();
        let m = train_tabular_db(&t, &TabularTrainConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for s in 0..t.num_internal() {
            for p in m.policy(s) {
                assert!((p - 1.0 / 3.0).abs() <= 0.02);
            }
        }
    }

    proptest! {
        #[test]
        fn path_product_equals_recursive_marginals(
            seed in 0u64..500,
            depth in 1usize..4,
            branching in 1usize..4,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = branching.pow(depth as u32);
            let t = TreeEnv::new(depth, branching, vec![1.0; n]).unwrap();
            let mut m = TabularGfn::new(&t);
            for v in m.params.get_mut(LOGITS).unwrap().value.data_mut() {
                *v = rng.random_range(-3.0..3.0);
            }
            let a = terminal_distribution(&t, &m);
            let b = terminal_distribution_recursive(&t, &m);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
            let tv = terminal_tv(&t, &m);
            prop_assert!((0.0..=1.0).contains(&tv));
        }
    }
}
