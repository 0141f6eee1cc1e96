//! The four trainable networks, the per-transition loss with its gradient,
//! and the optimisation step.

use rand::Rng;

use super::gaussian::{forward_log_density, log_density_grad, sample_action, GaussianParams};
use super::objective::{step_residual, terminal_residual, Hyper, Transition};
use crate::encoder::{EncoderConfig, StateEncoder};
use crate::error::{Error, Result};
use crate::nn::{adam_step, Activation, AdamConfig, AdamState, Mlp, MlpSpec};
use crate::nn::{OutputActivation, ParamSet};
use crate::request::Request;

pub const FORWARD_PREFIX: &str = "fw";
pub const BACKWARD_PREFIX: &str = "bw";
pub const FLOW_PREFIX: &str = "flow";
pub const ENCODER_PREFIX: &str = "enc";

#[derive(Clone, Debug)]
pub struct GfnModel {
    pub encoder: StateEncoder,
    fw: Mlp,
    bw: Mlp,
    flow: Mlp,
    d_action: usize,
    sigma_min: f64,
}

/// Which network a parameter belongs to.
pub fn network_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

impl GfnModel {
    pub fn new(enc: EncoderConfig, hidden: usize, d_action: usize, sigma_min: f64) -> Result<Self> {
        if !(sigma_min > 0.0) {
            return Err(Error::Argument("sigma_min must be positive".into()));
        }
        let encoder = StateEncoder::new(enc)?;
        let s = encoder.state_dim();
        let fw = Mlp::new(
            FORWARD_PREFIX,
            MlpSpec::new(vec![s, hidden, 2 * d_action], Activation::Tanh, OutputActivation::Identity)?,
        );
        let bw = Mlp::new(
            BACKWARD_PREFIX,
            MlpSpec::new(vec![2 * s + d_action, hidden, 1], Activation::Tanh, OutputActivation::Sigmoid)?,
        );
        let flow = Mlp::new(
            FLOW_PREFIX,
            MlpSpec::new(vec![s, hidden, 1], Activation::Tanh, OutputActivation::Sigmoid)?,
        );
        Ok(GfnModel {
            encoder,
            fw,
            bw,
            flow,
            d_action,
            sigma_min,
        })
    }

    pub fn d_action(&self) -> usize {
        self.d_action
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamSet> {
        let mut p = ParamSet::new();
        self.encoder.init_params(&mut p, rng)?;
        self.fw.init_params(&mut p, rng)?;
        self.bw.init_params(&mut p, rng)?;
        self.flow.init_params(&mut p, rng)?;
        Ok(p)
    }

    pub fn encode(&self, params: &ParamSet, request: &Request) -> Result<Vec<f64>> {
        Ok(self.encoder.encode_state(params, request)?.concat())
    }

    fn gaussian(&self, raw: &[f64]) -> GaussianParams {
        let (mu, rest) = raw.split_at(self.d_action);
        GaussianParams {
            mu: mu.to_vec(),
            sigma: rest.iter().map(|&x| crate::nn::softplus(x) + self.sigma_min).collect(),
        }
    }

    /// `μ` = first half of the head, `σ = softplus(second half) + σ_min`.
    pub fn forward_policy(&self, params: &ParamSet, s: &[f64]) -> Result<GaussianParams> {
        Ok(self.gaussian(&self.fw.forward(params, s)?.0))
    }

    /// `F_R(s) ∈ (0, 1)`.
    pub fn flow_value(&self, params: &ParamSet, s: &[f64]) -> Result<f64> {
        Ok(self.flow.forward(params, s)?.0[0])
    }

    /// `P_B(s | s') ∈ (0, 1)` from `s ++ a ++ s'`.
    pub fn backward_prob(&self, params: &ParamSet, s: &[f64], a: &[f64], s_next: &[f64]) -> Result<f64> {
        Ok(self.bw.forward(params, &[s, a, s_next].concat())?.0[0])
    }

    /// Encodes `request` and samples an action; returns `(a, μ/σ)`.
    pub fn act<R: Rng + ?Sized>(
        &self,
        params: &ParamSet,
        request: &Request,
        rng: &mut R,
    ) -> Result<(Vec<f64>, GaussianParams)> {
        let s = self.encode(params, request)?;
        let g = self.forward_policy(params, &s)?;
        let (a, _) = sample_action(&g, rng);
        Ok((a, g))
    }

    /// Loss of one transition; when `grad_scale` is set the loss gradient
    /// times that factor is added into `params`.
    pub fn transition_loss(
        &self,
        params: &mut ParamSet,
        t: &Transition,
        h: &Hyper,
        index: usize,
        grad_scale: Option<f64>,
    ) -> Result<f64> {
        let non_finite = |what: &str, v: f64| -> Result<f64> {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFiniteLoss {
                    index,
                    detail: format!("{what} = {v}"),
                })
            }
        };
        if t.action.len() != self.d_action {
            return Err(Error::Dimension(format!(
                "action of length {} != d_action {}",
                t.action.len(),
                self.d_action
            )));
        }
        let (emb, enc_cache) = self.encoder.forward(params, &t.state)?;
        let s = emb.concat();
        let (f_out, flow_cache) = self.flow.forward(params, &s)?;
        let flow = f_out[0];
        let ln_flow = non_finite("ln F_R(s)", flow.ln())?;

        let Some(next) = &t.next else {
            let retention = t
                .retention
                .ok_or_else(|| Error::Argument("transition has neither next state nor retention".into()))?;
            let delta = non_finite(
                "terminal residual",
                terminal_residual(ln_flow, retention, t.reward_prefix, h),
            )?;
            if let Some(scale) = grad_scale {
                let g = 2.0 * delta * scale;
                let ds = self.flow.backward(params, &flow_cache, &[g / flow])?;
                self.encoder.backward(params, &enc_cache, &ds)?;
            }
            return Ok(delta * delta);
        };

        let (next_emb, next_cache) = self.encoder.forward(params, next)?;
        let s_next = next_emb.concat();
        let (fn_out, flow_next_cache) = self.flow.forward(params, &s_next)?;
        let flow_next = fn_out[0];
        let ln_flow_next = non_finite("ln F_R(s')", flow_next.ln())?;
        let (raw, fw_cache) = self.fw.forward(params, &s)?;
        let g = self.gaussian(&raw);
        let ld = non_finite("log P_F", forward_log_density(&g, &t.action)?)?;
        let bw_in = [s.as_slice(), &t.action, &s_next].concat();
        let (pb_out, bw_cache) = self.bw.forward(params, &bw_in)?;
        let pb = pb_out[0];
        let delta = non_finite(
            "step residual",
            step_residual(ln_flow, ld, ln_flow_next, pb, t.reward, h),
        )?;

        if let Some(scale) = grad_scale {
            let gd = 2.0 * delta * scale;
            let mut ds = self.flow.backward(params, &flow_cache, &[gd / flow])?;
            let ds_next_flow = self.flow.backward(params, &flow_next_cache, &[-gd / flow_next])?;
            // ∂ ln(e^ld + β_F) / ∂ld
            let w = crate::nn::sigmoid(ld - h.beta_f.ln());
            let (dmu, dsig) = log_density_grad(&g, &t.action);
            let mut d_raw = Vec::with_capacity(2 * self.d_action);
            d_raw.extend(dmu.iter().map(|x| gd * w * x));
            d_raw.extend(
                dsig.iter()
                    .zip(&raw[self.d_action..])
                    .map(|(x, &r)| gd * w * x * crate::nn::sigmoid(r)),
            );
            let ds_fw = self.fw.backward(params, &fw_cache, &d_raw)?;
            let d_bw_in = self.bw.backward(params, &bw_cache, &[-gd / (pb + h.beta_b)])?;
            let n = s.len();
            for i in 0..n {
                ds[i] += ds_fw[i] + d_bw_in[i];
            }
            let mut ds_next = ds_next_flow;
            for (x, g) in ds_next.iter_mut().zip(&d_bw_in[n + self.d_action..]) {
                *x += g;
            }
            self.encoder.backward(params, &enc_cache, &ds)?;
            self.encoder.backward(params, &next_cache, &ds_next)?;
        }
        Ok(delta * delta)
    }

    /// Loss of one transition, without gradients.
    pub fn db_loss(&self, params: &ParamSet, t: &Transition, h: &Hyper) -> Result<f64> {
        self.eval_loss(params, t, h, 0)
    }

    pub fn eval_loss(&self, params: &ParamSet, t: &Transition, h: &Hyper, index: usize) -> Result<f64> {
        let s = self.encode(params, &t.state)?;
        let ln_flow = self.flow_value(params, &s)?.ln();
        let loss = match &t.next {
            None => {
                let retention = t
                    .retention
                    .ok_or_else(|| Error::Argument("terminal transition without retention".into()))?;
                terminal_residual(ln_flow, retention, t.reward_prefix, h).powi(2)
            }
            Some(next) => {
                let s_next = self.encode(params, next)?;
                let ln_flow_next = self.flow_value(params, &s_next)?.ln();
                let ld = forward_log_density(&self.forward_policy(params, &s)?, &t.action)?;
                let pb = self.backward_prob(params, &s, &t.action, &s_next)?;
                step_residual(ln_flow, ld, ln_flow_next, pb, t.reward, h).powi(2)
            }
        };
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(Error::NonFiniteLoss {
                index,
                detail: format!("loss = {loss}"),
            })
        }
    }

    /// Mean loss over `batch`, with gradients accumulated into `params`.
    pub fn batch_loss(&self, params: &mut ParamSet, batch: &[&Transition], h: &Hyper) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for (i, t) in batch.iter().enumerate() {
            total += self.transition_loss(params, t, h, i, Some(scale))?;
        }
        Ok(total * scale)
    }
}

/// Adam state for the flow, forward (with encoder) and backward networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub flow: AdamState,
    pub forward: AdamState,
    pub backward: AdamState,
}

impl Optimizers {
    pub fn new(params: &ParamSet) -> Result<Self> {
        let pick = |nets: &[&str]| -> Vec<String> {
            params
                .names()
                .filter(|n| nets.contains(&network_of(n)))
                .map(str::to_string)
                .collect()
        };
        let build = |names: Vec<String>| AdamState::new(params, names.iter().map(String::as_str), AdamConfig::default());
        Ok(Optimizers {
            flow: build(pick(&[FLOW_PREFIX]))?,
            forward: build(pick(&[FORWARD_PREFIX, ENCODER_PREFIX]))?,
            backward: build(pick(&[BACKWARD_PREFIX]))?,
        })
    }
}

/// One optimisation step on `batch`: mean loss, backprop, then one Adam
/// update per network group with its own learning rate. Returns the mean
/// loss before the update.
pub fn train_step(
    model: &GfnModel,
    params: &mut ParamSet,
    opt: &mut Optimizers,
    batch: &[&Transition],
    h: &Hyper,
) -> Result<f64> {
    params.zero_grad();
    let loss = match model.batch_loss(params, batch, h) {
        Ok(l) => l,
        Err(e) => {
            params.zero_grad();
            return Err(e);
        }
    };
    // all groups are checked before any of them moves
    for state in [&opt.flow, &opt.forward, &opt.backward] {
        if let Err(e) = state.check_grads(params) {
            params.zero_grad();
            return Err(e);
        }
    }
    adam_step(params, &mut opt.flow, h.lr_flow)?;
    adam_step(params, &mut opt.forward, h.lr_forward)?;
    adam_step(params, &mut opt.backward, h.lr_backward)?;
    params.zero_grad();
    Ok(loss)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub alpha: f64,
    pub beta_f: f64,
    pub beta_b: f64,
    pub beta_r: f64,
    pub d_action: usize,
    pub slate_size: usize,
}

impl CheckpointHeader {
    pub fn from_hyper(h: &Hyper) -> Self {
        CheckpointHeader {
            alpha: h.alpha,
            beta_f: h.beta_f,
            beta_b: h.beta_b,
            beta_r: h.beta_r,
            d_action: h.d_action,
            slate_size: h.slate_size,
        }
    }

    pub fn to_line(&self) -> String {
        format!(
            "{:?} {:?} {:?} {:?} {} {}",
            self.alpha, self.beta_f, self.beta_b, self.beta_r, self.d_action, self.slate_size
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::Checkpoint(format!("malformed header line `{line}`"));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad());
        }
        let real = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let count = |s: &str| s.parse::<usize>().map_err(|_| bad());
        Ok(CheckpointHeader {
            alpha: real(f[0])?,
            beta_f: real(f[1])?,
            beta_b: real(f[2])?,
            beta_r: real(f[3])?,
            d_action: count(f[4])?,
            slate_size: count(f[5])?,
        })
    }
}

/// Header line followed by every tensor.
pub fn checkpoint_text(header: &CheckpointHeader, params: &ParamSet) -> String {
    format!("{}\n{}", header.to_line(), params.to_checkpoint_text())
}

/// Parses a checkpoint and copies its tensors into `params`, requiring the
/// action dimension and slate size to match `expected`.
pub fn load_checkpoint(text: &str, expected: &CheckpointHeader, params: &mut ParamSet) -> Result<CheckpointHeader> {
    let mut lines = text.lines();
    let header = CheckpointHeader::parse(lines.next().unwrap_or(""))?;
    if header.d_action != expected.d_action || header.slate_size != expected.slate_size {
        return Err(Error::Checkpoint(format!(
            "checkpoint has d_action {} and K {}, config has {} and {}",
            header.d_action, header.slate_size, expected.d_action, expected.slate_size
        )));
    }
    let loaded = ParamSet::from_checkpoint_lines(lines)?;
    params.assign_from(&loaded)?;
    Ok(header)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, World};
    use crate::nn::{gradient_check, Tensor2D};
    use crate::rollout::collect_session;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> GfnModel {
        GfnModel::new(EncoderConfig::default(), 64, 8, 0.05).unwrap()
    }

    fn transitions(n_sessions: usize, seed: u64) -> Vec<Transition> {
        let mut world = World::new(EnvConfig::default(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut arng = ChaCha8Rng::seed_from_u64(seed + 1);
        let mut out = Vec::new();
        for i in 0..n_sessions {
            let traj = collect_session(
                &mut world,
                i % 7,
                |_| Ok((0..8).map(|_| arng.random_range(-1.0..1.0)).collect()),
                &mut rng,
            )
            .unwrap();
            out.extend(traj.transitions);
        }
        out
    }

    fn zero_network(p: &mut ParamSet, prefix: &str) {
        let names: Vec<String> = p.names().filter(|n| network_of(n) == prefix).map(String::from).collect();
        for n in names {
            p.get_mut(&n).unwrap().value.fill(0.0);
        }
    }

    fn random_state(rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..64).map(|_| rng.random_range(-3.0..3.0)).collect()
    }

    #[test]
    fn zero_weight_heads() {
        let m = model();
        let mut p = m.init_params(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        zero_network(&mut p, FLOW_PREFIX);
        zero_network(&mut p, BACKWARD_PREFIX);
        zero_network(&mut p, FORWARD_PREFIX);
        let s = vec![0.3; 64];
        assert_eq!(m.flow_value(&p, &s).unwrap(), 0.5);
        assert_eq!(m.backward_prob(&p, &s, &[0.1; 8], &s).unwrap(), 0.5);
        let g = m.forward_policy(&p, &s).unwrap();
        for sigma in g.sigma {
            assert!((sigma - (2f64.ln() + 0.05)).abs() < 1e-15);
            assert!((sigma - 0.7431).abs() < 1e-4);
        }
    }

    #[test]
    fn heads_stay_in_range() {
        let m = model();
        let p = m.init_params(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let s = random_state(&mut rng);
            let f = m.flow_value(&p, &s).unwrap();
            assert!(f > 0.0 && f < 1.0);
            let g = m.forward_policy(&p, &s).unwrap();
            assert!(g.sigma.iter().all(|&x| x >= 0.05));
            assert_eq!(g, m.forward_policy(&p, &s).unwrap());
        }
    }

    #[test]
    fn flow_log_is_finite_at_clamp() {
        let m = model();
        let mut p = m.init_params(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        zero_network(&mut p, FLOW_PREFIX);
        for bias in [-1e6, -30.0, 30.0, 1e6] {
            p.get_mut("flow.b1").unwrap().value = Tensor2D::column(&[bias]);
            let f = m.flow_value(&p, &[0.0; 64]).unwrap();
            assert!(f.ln().is_finite() && f > 0.0 && f < 1.0);
        }
    }

    #[test]
    fn backward_prob_independent_of_batch_order() {
        let m = model();
        let p = m.init_params(&mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch: Vec<(Vec<f64>, Vec<f64>)> = (0..5).map(|_| (random_state(&mut rng), random_state(&mut rng))).collect();
        let a = [0.2; 8];
        let fwd: Vec<f64> = batch.iter().map(|(s, n)| m.backward_prob(&p, s, &a, n).unwrap()).collect();
        let rev: Vec<f64> = batch.iter().rev().map(|(s, n)| m.backward_prob(&p, s, &a, n).unwrap()).collect();
        assert!(fwd.iter().zip(rev.iter().rev()).all(|(x, y)| x == y));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = model();
        let mut p = m.init_params(&mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let data = transitions(3, 6);
        let batch: Vec<&Transition> = data.iter().take(12).collect();
        assert!(batch.iter().any(|t| t.is_terminal()));
        let h = Hyper::default();
        let report = gradient_check(|p| m.batch_loss(p, &batch, &h), &mut p, 1e-3, 1e-4, |_| true).unwrap();
        assert!(report.passed, "{:?} {}", report.worst, report.max_rel_error);
        for prefix in [ENCODER_PREFIX, FORWARD_PREFIX, BACKWARD_PREFIX, FLOW_PREFIX] {
            assert!(report.tensors.iter().any(|t| network_of(&t.name) == prefix));
        }
    }

    #[test]
    fn backward_network_receives_gradient() {
        let m = model();
        let mut p = m.init_params(&mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let data = transitions(2, 7);
        let batch: Vec<&Transition> = data.iter().collect();
        m.batch_loss(&mut p, &batch, &Hyper::default()).unwrap();
        let g = p.grad("bw.w0").unwrap();
        assert!(g.data().iter().any(|&x| x != 0.0));
    }

    #[test]
    fn batch_loss_matches_evaluation() {
        let m = model();
        let mut p = m.init_params(&mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let data = transitions(2, 8);
        let batch: Vec<&Transition> = data.iter().collect();
        let h = Hyper::default();
        let mean: f64 = batch.iter().map(|t| m.db_loss(&p, t, &h).unwrap()).sum::<f64>() / batch.len() as f64;
        let got = m.batch_loss(&mut p, &batch, &h).unwrap();
        assert!((got - mean).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_rejected() {
        let m = model();
        let mut p = m.init_params(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut opt = Optimizers::new(&p).unwrap();
        assert!(matches!(
            train_step(&m, &mut p, &mut opt, &[], &Hyper::default()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn optimizer_groups_partition_parameters() {
        let m = model();
        let p = m.init_params(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let opt = Optimizers::new(&p).unwrap();
        let total = opt.flow.names().count() + opt.forward.names().count() + opt.backward.names().count();
        assert_eq!(total, p.len());
        assert!(opt.forward.names().any(|n| n.starts_with("enc.")));
        assert!(opt.flow.names().all(|n| n.starts_with("flow.")));
    }

    #[test]
    fn zero_learning_rates_freeze_parameters() {
        let m = model();
        let mut p = m.init_params(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let before = p.clone();
        let data = transitions(2, 3);
        let batch: Vec<&Transition> = data.iter().collect();
        let h = Hyper {
            lr_flow: 0.0,
            lr_forward: 0.0,
            lr_backward: 0.0,
            ..Hyper::default()
        };
        let expect: f64 = batch.iter().map(|t| m.db_loss(&p, t, &h).unwrap()).sum::<f64>() / batch.len() as f64;
        let mut opt = Optimizers::new(&p).unwrap();
        let loss = train_step(&m, &mut p, &mut opt, &batch, &h).unwrap();
        assert!(p.values_equal(&before));
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn train_step_is_deterministic() {
        let m = model();
        let p0 = m.init_params(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let data = transitions(2, 3);
        let batch: Vec<&Transition> = data.iter().collect();
        let h = Hyper::default();
        let run = || {
            let mut p = p0.clone();
            let mut opt = Optimizers::new(&p).unwrap();
            let l = train_step(&m, &mut p, &mut opt, &batch, &h).unwrap();
            (l, p)
        };
        let (la, pa) = run();
        let (lb, pb) = run();
        assert_eq!(la, lb);
        assert!(pa.values_equal(&pb));
    }

    #[test]
    fn fixed_batch_loss_halves_within_200_steps() {
        let m = model();
        let mut p = m.init_params(&mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        let data = transitions(4, 10);
        let batch: Vec<&Transition> = data.iter().take(32).collect();
        let h = Hyper {
            lr_flow: 1e-3,
            lr_forward: 1e-3,
            lr_backward: 1e-3,
            ..Hyper::default()
        };
        let mut opt = Optimizers::new(&p).unwrap();
        let first = train_step(&m, &mut p, &mut opt, &batch, &h).unwrap();
        for _ in 0..199 {
            train_step(&m, &mut p, &mut opt, &batch, &h).unwrap();
        }
        let last: f64 = batch.iter().map(|t| m.db_loss(&p, t, &h).unwrap()).sum::<f64>() / batch.len() as f64;
        assert!(last <= 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn non_finite_gradient_leaves_parameters_untouched() {
        let m = model();
        let mut p = m.init_params(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let before = p.clone();
        let data = transitions(1, 3);
        let mut bad = data[0].clone();
        bad.action[0] = f64::NAN;
        let mut opt = Optimizers::new(&p).unwrap();
        let err = train_step(&m, &mut p, &mut opt, &[&bad], &Hyper::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { index: 0, .. }), "{err:?}");
        assert!(p.values_equal(&before));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = model();
        let p = m.init_params(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let h = Hyper::default();
        let header = CheckpointHeader::from_hyper(&h);
        let text = checkpoint_text(&header, &p);
        assert_eq!(text.lines().next().unwrap(), "1.0 1.0 1.0 0.5 8 6");
        let mut q = m.init_params(&mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(!q.values_equal(&p));
        load_checkpoint(&text, &header, &mut q).unwrap();
        assert!(q.values_equal(&p));
        let other = CheckpointHeader {
            slate_size: 5,
            ..header
        };
        assert!(matches!(load_checkpoint(&text, &other, &mut q), Err(Error::Checkpoint(_))));
    }
}
