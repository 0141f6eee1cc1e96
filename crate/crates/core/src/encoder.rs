//! User-state encoder: `s = e_u ++ ψ_u`.
//!
//! `e_u` fuses an embedding of the static features with an attention
//! encoding of the interaction history; `ψ_u` is a context vector computed
//! from the features and recent feedback statistics.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, Attention, AttentionCache, AttentionSpec, Mlp, MlpCache, MlpSpec};
use crate::nn::{OutputActivation, ParamSet, ProjectedCache, Projection, Tensor2D};
use crate::request::{InteractionHistory, Request, UserFeatures};

/// Feedback vectors summarised by the context module.
pub const CONTEXT_WINDOW: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub model_dim: usize,
    pub num_heads: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    pub item_dim: usize,
    pub num_behaviors: usize,
    pub history_len: usize,
    /// Disables the context module: `ψ_u = 0` and its parameters get no gradient.
    pub no_context: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            model_dim: 32,
            num_heads: 4,
            hidden: 64,
            feature_dim: 8,
            item_dim: 8,
            num_behaviors: 3,
            history_len: 50,
            no_context: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateEmbedding {
    pub e_u: Vec<f64>,
    pub psi_u: Vec<f64>,
}

impl StateEmbedding {
    pub fn concat(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.e_u.len() + self.psi_u.len());
        s.extend_from_slice(&self.e_u);
        s.extend_from_slice(&self.psi_u);
        s
    }
}

#[derive(Clone, Debug)]
enum HistoryCache {
    Pad(AttentionCache),
    Entries(ProjectedCache),
}

#[derive(Clone, Debug)]
pub struct EncoderCache {
    history: HistoryCache,
    feat: MlpCache,
    fuse: MlpCache,
    ctx: Option<MlpCache>,
}

#[derive(Clone, Debug)]
pub struct StateEncoder {
    cfg: EncoderConfig,
    attn: Attention,
    proj: Projection,
    feat: Mlp,
    fuse: Mlp,
    ctx: Mlp,
}

pub const PAD_TOKEN: &str = "enc.pad";

impl StateEncoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        let d = cfg.model_dim;
        if cfg.history_len == 0 {
            return Err(Error::Argument("history_len must be positive".into()));
        }
        let attn = Attention::new("enc.attn", AttentionSpec::new(d, cfg.num_heads)?);
        let proj = Projection {
            weight: "enc.hist_proj.w".into(),
            bias: "enc.hist_proj.b".into(),
        };
        let linear = OutputActivation::Identity;
        let feat = Mlp::new(
            "enc.feat",
            MlpSpec::new(vec![cfg.feature_dim, d], Activation::Tanh, linear)?,
        );
        let fuse = Mlp::new(
            "enc.fuse",
            MlpSpec::new(vec![2 * d, cfg.hidden, d], Activation::Tanh, linear)?,
        );
        let ctx = Mlp::new(
            "enc.ctx",
            MlpSpec::new(
                vec![cfg.feature_dim + cfg.num_behaviors + 1, cfg.hidden, d],
                Activation::Tanh,
                linear,
            )?,
        );
        Ok(StateEncoder {
            cfg,
            attn,
            proj,
            feat,
            fuse,
            ctx,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn state_dim(&self) -> usize {
        2 * self.cfg.model_dim
    }

    fn raw_dim(&self) -> usize {
        self.cfg.item_dim + self.cfg.num_behaviors
    }

    pub fn init_params<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) -> Result<()> {
        let d = self.cfg.model_dim;
        params.insert_glorot(&self.proj.weight, d, self.raw_dim(), rng)?;
        params.insert(&self.proj.bias, Tensor2D::zeros(d, 1))?;
        params.insert_glorot(PAD_TOKEN, d, 1, rng)?;
        self.attn.init_params(params, rng)?;
        self.feat.init_params(params, rng)?;
        self.fuse.init_params(params, rng)?;
        self.ctx.init_params(params, rng)
    }

    fn check_history(&self, history: &InteractionHistory) -> Result<()> {
        let (di, nb) = (self.cfg.item_dim, self.cfg.num_behaviors);
        match history
            .entries
            .iter()
            .find(|e| e.item_embedding.len() != di || e.feedback.len() != nb)
        {
            Some(e) => Err(Error::Dimension(format!(
                "history entry of shape ({}, {}) != ({di}, {nb})",
                e.item_embedding.len(),
                e.feedback.len()
            ))),
            None => Ok(()),
        }
    }

    fn history_forward(
        &self,
        params: &ParamSet,
        history: &InteractionHistory,
    ) -> Result<(Vec<f64>, HistoryCache)> {
        self.check_history(history)?;
        let recent = history.recent(self.cfg.history_len);
        if recent.is_empty() {
            let pad = params.value(PAD_TOKEN)?.data().to_vec();
            let (out, cache) = self.attn.encode(params, &[pad])?;
            Ok((out, HistoryCache::Pad(cache)))
        } else {
            let raw: Vec<Vec<f64>> = recent.iter().map(|e| e.raw()).collect();
            let (out, cache) = self.attn.encode_projected(params, &self.proj, &raw)?;
            Ok((out, HistoryCache::Entries(cache)))
        }
    }

    /// Attention encoding of the newest `history_len` entries, or of the
    /// pad token when the history is empty.
    pub fn encode_history(&self, params: &ParamSet, history: &InteractionHistory) -> Result<Vec<f64>> {
        Ok(self.history_forward(params, history)?.0)
    }

    /// `A_u ++ mean(last feedback vectors) ++ count / CONTEXT_WINDOW`.
    pub fn context_input(&self, features: &UserFeatures, history: &InteractionHistory) -> Vec<f64> {
        let nb = self.cfg.num_behaviors;
        let recent = history.recent(CONTEXT_WINDOW);
        let mut mean = vec![0.0; nb];
        for e in recent {
            for (m, y) in mean.iter_mut().zip(&e.feedback) {
                *m += y / recent.len() as f64;
            }
        }
        let mut x = features.0.clone();
        x.extend(mean);
        x.push(recent.len() as f64 / CONTEXT_WINDOW as f64);
        x
    }

    pub fn forward(&self, params: &ParamSet, request: &Request) -> Result<(StateEmbedding, EncoderCache)> {
        let features = &request.features;
        if features.0.len() != self.cfg.feature_dim {
            return Err(Error::Dimension(format!(
                "feature vector of length {} != {}",
                features.0.len(),
                self.cfg.feature_dim
            )));
        }
        let (h, history) = self.history_forward(params, &request.history)?;
        let (f, feat) = self.feat.forward(params, &features.0)?;
        let mut fused_in = f;
        fused_in.extend_from_slice(&h);
        let (e_u, fuse) = self.fuse.forward(params, &fused_in)?;
        let (psi_u, ctx) = if self.cfg.no_context {
            (vec![0.0; self.cfg.model_dim], None)
        } else {
            let (p, c) = self
                .ctx
                .forward(params, &self.context_input(features, &request.history))?;
            (p, Some(c))
        };
        Ok((
            StateEmbedding { e_u, psi_u },
            EncoderCache {
                history,
                feat,
                fuse,
                ctx,
            },
        ))
    }

    pub fn encode_state(&self, params: &ParamSet, request: &Request) -> Result<StateEmbedding> {
        Ok(self.forward(params, request)?.0)
    }

    /// Accumulates encoder gradients for `ds = ∂L/∂s`.
    pub fn backward(&self, params: &mut ParamSet, cache: &EncoderCache, ds: &[f64]) -> Result<()> {
        let d = self.cfg.model_dim;
        if ds.len() != 2 * d {
            return Err(Error::Usage(format!(
                "state gradient of length {} != {}",
                ds.len(),
                2 * d
            )));
        }
        let d_fused = self.fuse.backward(params, &cache.fuse, &ds[..d])?;
        self.feat.backward(params, &cache.feat, &d_fused[..d])?;
        let dh = &d_fused[d..];
        match &cache.history {
            HistoryCache::Pad(c) => {
                let dx = self.attn.backward(params, c, dh)?;
                let g = params.get_mut(PAD_TOKEN)?.grad.data_mut();
                for (gi, v) in g.iter_mut().zip(&dx[0]) {
                    *gi += v;
                }
            }
            HistoryCache::Entries(c) => self.attn.backward_projected(params, &self.proj, c, dh)?,
        }
        if let Some(c) = &cache.ctx {
            self.ctx.backward(params, c, &ds[d..])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{dot, gradient_check};
    use crate::request::HistoryEntry;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn setup(no_context: bool) -> (StateEncoder, ParamSet) {
        let enc = StateEncoder::new(EncoderConfig {
            no_context,
            ..EncoderConfig::default()
        })
        .unwrap();
        let mut p = ParamSet::new();
        enc.init_params(&mut p, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        (enc, p)
    }

    fn entry(rng: &mut ChaCha8Rng) -> Arc<HistoryEntry> {
        Arc::new(HistoryEntry {
            item_embedding: (0..8).map(|_| rng.random_range(-0.5..0.5)).collect(),
            feedback: (0..3).map(|_| rng.random_range(0.0..1.0)).collect(),
        })
    }

    fn request(n: usize, seed: u64) -> Request {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Request {
            user: 0,
            features: UserFeatures((0..8).map(|_| rng.random_range(-1.0..1.0)).collect()),
            history: InteractionHistory::new((0..n).map(|_| entry(&mut rng)).collect()),
        }
    }

    #[test]
    fn state_has_twice_model_dim() {
        let (enc, p) = setup(false);
        let s = enc.encode_state(&p, &request(4, 0)).unwrap();
        assert_eq!(s.concat().len(), 64);
        assert_eq!(enc.state_dim(), 64);
        assert_eq!(&s.concat()[..32], &s.e_u[..]);
    }

    #[test]
    fn identical_requests_identical_states() {
        let (enc, p) = setup(false);
        let a = enc.encode_state(&p, &request(7, 1)).unwrap();
        let b = enc.encode_state(&p, &request(7, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_history_uses_pad_token() {
        let (enc, p) = setup(false);
        let pad = p.value(PAD_TOKEN).unwrap().data().to_vec();
        let expect = enc.attn.encode(&p, &[pad]).unwrap().0;
        let got = enc.encode_history(&p, &InteractionHistory::default()).unwrap();
        assert_eq!(got, expect);
    }

    #[test]
    fn single_entry_reduces_to_singleton_identity() {
        let (enc, p) = setup(false);
        let req = request(1, 2);
        let raw = req.history.entries[0].raw();
        let wp = p.value("enc.hist_proj.w").unwrap();
        let bp = p.value("enc.hist_proj.b").unwrap();
        let x: Vec<f64> = wp.matvec(&raw).iter().zip(bp.data()).map(|(a, b)| a + b).collect();
        let v = p.value("enc.attn.wv").unwrap().matvec(&x);
        let o = p.value("enc.attn.wo").unwrap().matvec(&v);
        let expect: Vec<f64> = x.iter().zip(&o).map(|(a, b)| a + b).collect();
        let got = enc.encode_history(&p, &req.history).unwrap();
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn history_truncated_to_most_recent() {
        let (enc, p) = setup(false);
        let mut req = request(51, 4);
        let a = enc.encode_history(&p, &req.history).unwrap();
        req.history.entries[0] = Arc::new(HistoryEntry {
            item_embedding: vec![9.0; 8],
            feedback: vec![1.0; 3],
        });
        let b = enc.encode_history(&p, &req.history).unwrap();
        assert_eq!(a, b);
        req.history.entries[1] = req.history.entries[0].clone();
        let c = enc.encode_history(&p, &req.history).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn feature_length_mismatch() {
        let (enc, p) = setup(false);
        let mut req = request(2, 0);
        req.features.0.pop();
        assert!(matches!(enc.encode_state(&p, &req), Err(Error::Dimension(_))));
    }

    #[test]
    fn no_context_zeroes_psi() {
        let (enc, mut p) = setup(true);
        let req = request(3, 5);
        let (s, cache) = enc.forward(&p, &req).unwrap();
        assert_eq!(s.psi_u, vec![0.0; 32]);
        assert_eq!(s.concat().len(), 64);
        enc.backward(&mut p, &cache, &[1.0; 64]).unwrap();
        for (name, param) in p.iter() {
            if name.starts_with("enc.ctx") {
                assert!(param.grad.data().iter().all(|&g| g == 0.0));
            }
        }
    }

    fn check(no_context: bool, hist: usize) {
        let (enc, mut p) = setup(no_context);
        let req = request(hist, 6);
        let head: Vec<f64> = (0..64).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
        let report = gradient_check(
            |p| {
                let (s, cache) = enc.forward(p, &req)?;
                let s = s.concat();
                // scalar head: Σ h_i s_i + ½ Σ s_i²
                let ds: Vec<f64> = s.iter().zip(&head).map(|(x, h)| h + x).collect();
                enc.backward(p, &cache, &ds)?;
                Ok(dot(&head, &s) + 0.5 * dot(&s, &s))
            },
            &mut p,
            1e-5,
            1e-4,
            |_| true,
        )
        .unwrap();
        assert!(report.passed, "{:?}", report.worst);
        if !no_context {
            let ctx = report.tensors.iter().find(|t| t.name == "enc.ctx.w0").unwrap();
            assert!(ctx.checked > 0);
        }
    }

    #[test]
    fn gradients_with_history() {
        check(false, 6);
    }

    #[test]
    fn gradients_with_empty_history() {
        check(false, 0);
    }

    #[test]
    fn gradients_without_context() {
        check(true, 3);
    }
}
