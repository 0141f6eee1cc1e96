//! Flat `key = value` run configuration.
//!
//! Every key has a default; a file overrides any subset. Unknown keys,
//! duplicate keys and values of the wrong type are rejected with the line
//! number. [`RunConfig::resolved`] echoes every effective key in the same
//! syntax, so a resolved file reproduces the run.

use std::fmt::Write as _;
use std::path::Path;

use crate::encoder::EncoderConfig;
use crate::env::{EnvConfig, BEHAVIORS};
use crate::error::{Error, Result};
use crate::policy::Hyper;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyKind {
    Gfn,
    Cem,
    Random,
}

impl PolicyKind {
    pub fn tag(self) -> &'static str {
        match self {
            PolicyKind::Gfn => "gfn",
            PolicyKind::Cem => "cem",
            PolicyKind::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gfn" => Some(PolicyKind::Gfn),
            "cem" => Some(PolicyKind::Cem),
            "random" => Some(PolicyKind::Random),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub embedding: usize,
    pub heads: usize,
    pub hidden: usize,
    pub d_action: usize,
    pub sigma_min: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_flow: f64,
    pub lr_forward: f64,
    pub lr_backward: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub alpha: f64,
    pub beta_f: f64,
    pub beta_b: f64,
    pub beta_r: f64,
    pub buffer_capacity: usize,
    /// Lower bound on the buffer fill before training; the effective
    /// threshold is `max(batch_size, min_fill)`.
    pub min_fill: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSection {
    pub policy: PolicyKind,
    pub seed: u64,
    pub out: String,
    pub eval_window: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CemConfig {
    pub population: usize,
    pub elite_fraction: f64,
    pub sigma_min: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Ablation {
    pub ncd: bool,
    pub nif: bool,
    pub sif: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub run: RunSection,
    pub cem: CemConfig,
    pub ablation: Ablation,
    /// Calibrated `(ω, c)` per behavior; when set they replace the env values.
    pub calib_omega: [Option<f64>; 3],
    pub calib_c: [Option<f64>; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvConfig::default(),
            model: ModelConfig {
                embedding: 32,
                heads: 4,
                hidden: 64,
                d_action: 8,
                sigma_min: 0.05,
            },
            train: TrainConfig {
                lr_flow: 2e-5,
                lr_forward: 1e-4,
                lr_backward: 1e-4,
                batch_size: 128,
                steps: 20_000,
                alpha: 1.0,
                beta_f: 1.0,
                beta_b: 1.0,
                beta_r: 0.5,
                buffer_capacity: 100_000,
                min_fill: 1000,
            },
            run: RunSection {
                policy: PolicyKind::Gfn,
                seed: 0,
                out: "runs/default".into(),
                eval_window: 1000,
                eval_interval: 100,
                eval_episodes: 2000,
                workers: 1,
            },
            cem: CemConfig {
                population: 64,
                elite_fraction: 0.25,
                sigma_min: 0.02,
            },
            ablation: Ablation::default(),
            calib_omega: [None; 3],
            calib_c: [None; 3],
        }
    }
}

enum Field<'a> {
    Count(&'a mut usize),
    Seed(&'a mut u64),
    Real(&'a mut f64),
    Flag(&'a mut bool),
    Text(&'a mut String),
    Policy(&'a mut PolicyKind),
    OptionalReal(&'a mut Option<f64>),
}

impl Field<'_> {
    fn set(&mut self, raw: &str) -> std::result::Result<(), String> {
        let bad = |kind: &str| format!("expected {kind}, found `{raw}`");
        match self {
            Field::Count(v) => **v = raw.parse().map_err(|_| bad("a non-negative integer"))?,
            Field::Seed(v) => **v = raw.parse().map_err(|_| bad("a non-negative integer"))?,
            Field::Real(v) => {
                let x: f64 = raw.parse().map_err(|_| bad("a real number"))?;
                if !x.is_finite() {
                    return Err(bad("a finite real number"));
                }
                **v = x;
            }
            Field::Flag(v) => {
                **v = match raw {
                    "true" => true,
                    "false" => false,
                    _ => return Err(bad("true or false")),
                }
            }
            Field::Text(v) => **v = raw.to_string(),
            Field::Policy(v) => **v = PolicyKind::parse(raw).ok_or_else(|| bad("gfn, cem or random"))?,
            Field::OptionalReal(v) => {
                let x: f64 = raw.parse().map_err(|_| bad("a real number"))?;
                if !x.is_finite() {
                    return Err(bad("a finite real number"));
                }
                **v = Some(x);
            }
        }
        Ok(())
    }

    fn render(&self) -> Option<String> {
        Some(match self {
            Field::Count(v) => v.to_string(),
            Field::Seed(v) => v.to_string(),
            Field::Real(v) => format!("{v:?}"),
            Field::Flag(v) => v.to_string(),
            Field::Text(v) => v.to_string(),
            Field::Policy(v) => v.tag().to_string(),
            Field::OptionalReal(v) => format!("{:?}", (**v)?),
        })
    }
}

impl RunConfig {
    fn fields(&mut self) -> Vec<(String, Field<'_>)> {
        use Field::*;
        let mut f: Vec<(String, Field<'_>)> = Vec::new();
        let e = &mut self.env;
        f.push(("env.users".into(), Count(&mut e.users)));
        f.push(("env.items".into(), Count(&mut e.items)));
        f.push(("env.feature_dim".into(), Count(&mut e.feature_dim)));
        f.push(("env.slate_size".into(), Count(&mut e.slate_size)));
        f.push(("env.max_steps".into(), Count(&mut e.max_steps)));
        f.push(("env.history_len".into(), Count(&mut e.history_len)));
        f.push(("env.max_return_day".into(), Count(&mut e.ret.max_day)));
        for b in e.behaviors.iter_mut() {
            let n = b.name.clone();
            f.push((format!("env.omega.{n}"), Real(&mut b.omega)));
            f.push((format!("env.kappa.{n}"), Real(&mut b.kappa)));
            f.push((format!("env.bias.{n}"), Real(&mut b.bias)));
        }
        f.push(("env.theta0".into(), Real(&mut e.leave.theta0)));
        f.push(("env.theta1".into(), Real(&mut e.leave.theta1)));
        f.push(("env.theta2".into(), Real(&mut e.leave.theta2)));
        f.push(("env.kappa_ret".into(), Real(&mut e.ret.kappa_ret)));
        f.push(("env.kappa_div".into(), Real(&mut e.ret.kappa_div)));
        f.push(("env.activity_max".into(), Real(&mut e.activity_max)));
        f.push(("env.drift".into(), Real(&mut e.drift)));
        f.push(("env.boredom".into(), Real(&mut e.boredom)));
        f.push(("env.boredom_window".into(), Count(&mut e.boredom_window)));

        let m = &mut self.model;
        f.push(("model.embedding".into(), Count(&mut m.embedding)));
        f.push(("model.heads".into(), Count(&mut m.heads)));
        f.push(("model.hidden".into(), Count(&mut m.hidden)));
        f.push(("model.d_action".into(), Count(&mut m.d_action)));
        f.push(("model.sigma_min".into(), Real(&mut m.sigma_min)));

        let t = &mut self.train;
        f.push(("train.lr_flow".into(), Real(&mut t.lr_flow)));
        f.push(("train.lr_forward".into(), Real(&mut t.lr_forward)));
        f.push(("train.lr_backward".into(), Real(&mut t.lr_backward)));
        f.push(("train.batch_size".into(), Count(&mut t.batch_size)));
        f.push(("train.steps".into(), Count(&mut t.steps)));
        f.push(("train.alpha".into(), Real(&mut t.alpha)));
        f.push(("train.beta_F".into(), Real(&mut t.beta_f)));
        f.push(("train.beta_B".into(), Real(&mut t.beta_b)));
        f.push(("train.beta_r".into(), Real(&mut t.beta_r)));
        f.push(("train.buffer_capacity".into(), Count(&mut t.buffer_capacity)));
        f.push(("train.min_fill".into(), Count(&mut t.min_fill)));

        let r = &mut self.run;
        f.push(("run.policy".into(), Policy(&mut r.policy)));
        f.push(("run.seed".into(), Seed(&mut r.seed)));
        f.push(("run.out".into(), Text(&mut r.out)));
        f.push(("run.eval_window".into(), Count(&mut r.eval_window)));
        f.push(("run.eval_interval".into(), Count(&mut r.eval_interval)));
        f.push(("run.eval_episodes".into(), Count(&mut r.eval_episodes)));
        f.push(("run.workers".into(), Count(&mut r.workers)));

        let c = &mut self.cem;
        f.push(("cem.population".into(), Count(&mut c.population)));
        f.push(("cem.elite_fraction".into(), Real(&mut c.elite_fraction)));
        f.push(("cem.sigma_min".into(), Real(&mut c.sigma_min)));

        let a = &mut self.ablation;
        f.push(("ablation.ncd".into(), Flag(&mut a.ncd)));
        f.push(("ablation.nif".into(), Flag(&mut a.nif)));
        f.push(("ablation.sif".into(), Flag(&mut a.sif)));

        for (i, (om, c)) in self.calib_omega.iter_mut().zip(self.calib_c.iter_mut()).enumerate() {
            f.push((format!("calib.omega.{}", BEHAVIORS[i]), OptionalReal(om)));
            f.push((format!("calib.c.{}", BEHAVIORS[i]), OptionalReal(c)));
        }
        f
    }

    /// Defaults overridden by `text`.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<(String, usize)> = Vec::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config {
                line: line_no,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some((_, first)) = seen.iter().find(|(k, _)| k == key) {
                return Err(err(format!("duplicate key `{key}` (first set on line {first})")));
            }
            seen.push((key.to_string(), line_no));
            let mut fields = cfg.fields();
            let (_, field) = fields
                .iter_mut()
                .find(|(k, _)| k == key)
                .ok_or_else(|| err(format!("unknown key `{key}`")))?;
            field.set(value).map_err(|m| err(format!("`{key}`: {m}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults when `path` is `None`, else the file's overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                RunConfig::parse_str(&text)
            }
        }
    }

    /// Every effective key, one `key = value` line each.
    pub fn resolved(&self) -> String {
        let mut copy = self.clone();
        let mut out = String::new();
        for (k, f) in copy.fields() {
            if let Some(v) = f.render() {
                writeln!(out, "{k} = {v}").expect("string write");
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config { line: 0, message: m.to_string() });
        self.effective_env().validate()?;
        self.hyper().validate()?;
        StateEncoderCheck::check(self)?;
        if self.run.eval_window == 0 || self.run.eval_interval == 0 {
            return bad("run.eval_window and run.eval_interval must be positive");
        }
        if self.run.workers == 0 {
            return bad("run.workers must be at least 1");
        }
        if self.train.buffer_capacity < self.train.batch_size {
            return bad("train.buffer_capacity must hold at least one batch");
        }
        if self.cem.population == 0
            || !(self.cem.elite_fraction > 0.0 && self.cem.elite_fraction <= 1.0)
            || !(self.cem.sigma_min > 0.0)
        {
            return bad("cem settings out of range");
        }
        Ok(())
    }

    /// Environment settings with calibrated `(ω, c)` applied and the item
    /// dimension tied to the action dimension.
    pub fn effective_env(&self) -> EnvConfig {
        let mut env = self.env.clone();
        env.item_dim = self.model.d_action;
        for (i, b) in env.behaviors.iter_mut().enumerate() {
            if let Some(w) = self.calib_omega[i] {
                b.omega = w;
            }
            if let Some(c) = self.calib_c[i] {
                b.bias = c;
            }
        }
        env
    }

    pub fn hyper(&self) -> Hyper {
        let t = &self.train;
        Hyper {
            alpha: t.alpha,
            beta_f: t.beta_f,
            beta_b: t.beta_b,
            beta_r: t.beta_r,
            lr_flow: t.lr_flow,
            lr_forward: t.lr_forward,
            lr_backward: t.lr_backward,
            batch_size: t.batch_size,
            sigma_min: self.model.sigma_min,
            d_action: self.model.d_action,
            slate_size: self.env.slate_size,
            no_immediate: self.ablation.nif,
            terminal_only_immediate: self.ablation.sif,
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            model_dim: self.model.embedding,
            num_heads: self.model.heads,
            hidden: self.model.hidden,
            feature_dim: self.env.feature_dim,
            item_dim: self.model.d_action,
            num_behaviors: self.env.behaviors.len(),
            history_len: self.env.history_len,
            no_context: self.ablation.ncd,
        }
    }

    /// `max(batch_size, min_fill)`.
    pub fn effective_min_fill(&self) -> usize {
        self.train.batch_size.max(self.train.min_fill)
    }
}

struct StateEncoderCheck;

impl StateEncoderCheck {
    fn check(cfg: &RunConfig) -> Result<()> {
        let m = &cfg.model;
        if m.embedding == 0 || m.heads == 0 || m.embedding % m.heads != 0 {
            return Err(Error::Config {
                line: 0,
                message: format!(
                    "model.embedding {} must be a positive multiple of model.heads {}",
                    m.embedding, m.heads
                ),
            });
        }
        if m.hidden == 0 || m.d_action == 0 {
            return Err(Error::Config {
                line: 0,
                message: "model.hidden and model.d_action must be positive".into(),
            });
        }
        Ok(())
    }
}
