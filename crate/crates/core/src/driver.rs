//! Training and evaluation drivers behind the command-line subcommands.
//!
//! Training interleaves rollouts and optimisation at one collected session
//! per train step. Rollout worker `i` draws users, environment outcomes and
//! action noise from actor stream `ACTOR_BASE + i`; minibatches come from
//! the sampling stream and initial weights from the init stream, so a
//! fixed config and seed reproduce every output file byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};

use crate::baselines::{cem_iteration, random_act, CemState};
use crate::calibration::{calibration_lines, fit_rates, load_interactions, FittedBehavior};
use crate::config::{PolicyKind, RunConfig};
use crate::env::World;
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, EpisodeRecord, MetricWindow, Metrics, MetricsCsv, RunLog};
use crate::nn::{gradient_check, GradCheckReport, ParamSet, Tensor2D};
use crate::policy::{
    checkpoint_text, load_checkpoint, train_step, CheckpointHeader, GfnModel, Optimizers, Transition,
};
use crate::replay::ReplayBuffer;
use crate::rng::{stream, SimRng, ACTOR_BASE, CEM, EVAL, INIT, SAMPLING};
use crate::rollout::{collect_session, SessionTrajectory};
use crate::tabular::{terminal_tv, train_tabular_db, TabularTrainConfig, TreeEnv};

pub const CONFIG_FILE: &str = "config.resolved";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RUN_LOG_FILE: &str = "run.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const LOSS_FILE: &str = "loss.csv";
pub const EVAL_METRICS_FILE: &str = "eval_metrics.csv";
pub const EVAL_LOG_FILE: &str = "eval.jsonl";

const CEM_MU: &str = "cem.mu";
const CEM_SIGMA: &str = "cem.sigma";

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub episodes: u64,
    /// Mean minibatch loss of every train step, in order.
    pub losses: Vec<f64>,
    /// Metrics over the last `run.eval_window` training episodes.
    pub final_metrics: Metrics,
    pub seconds: f64,
}

/// A frozen policy for evaluation rollouts.
#[derive(Clone, Debug)]
pub enum EvalPolicy {
    Gfn { model: GfnModel, params: ParamSet },
    /// Context-free action shared by every request.
    Fixed { action: Vec<f64> },
    Random { d_action: usize },
}

impl EvalPolicy {
    fn tag(&self) -> &'static str {
        match self {
            EvalPolicy::Gfn { .. } => "gfn",
            EvalPolicy::Fixed { .. } => "cem",
            EvalPolicy::Random { .. } => "random",
        }
    }
}

pub fn build_model(cfg: &RunConfig) -> Result<GfnModel> {
    GfnModel::new(
        cfg.encoder_config(),
        cfg.model.hidden,
        cfg.model.d_action,
        cfg.model.sigma_min,
    )
}

fn episode_record(episode: u64, traj: &SessionTrajectory, seed: u64, tag: &str) -> EpisodeRecord {
    let count = |b: usize| traj.positives.get(b).copied().unwrap_or(0);
    EpisodeRecord {
        episode,
        return_day: traj.return_day,
        retention: traj.retention,
        clicks: count(0),
        long_views: count(1),
        likes: count(2),
        steps: traj.steps(),
        mean_r: traj.mean_reward(),
        seed,
        policy_tag: tag.to_string(),
    }
}

/// Episode bookkeeping shared by every training policy.
struct Recorder {
    seed: u64,
    tag: &'static str,
    slate_size: usize,
    interval: u64,
    episodes: u64,
    window: MetricWindow,
    csv: MetricsCsv,
    log: RunLog,
    pending_losses: Vec<f64>,
    last_row: u64,
}

impl Recorder {
    fn new(cfg: &RunConfig, out: &Path) -> Result<Self> {
        Ok(Recorder {
            seed: cfg.run.seed,
            tag: cfg.run.policy.tag(),
            slate_size: cfg.env.slate_size,
            interval: cfg.run.eval_interval as u64,
            episodes: 0,
            window: MetricWindow::new(cfg.run.eval_window)?,
            csv: MetricsCsv::create(&out.join(METRICS_FILE))?,
            log: RunLog::create(&out.join(RUN_LOG_FILE))?,
            pending_losses: Vec::new(),
            last_row: 0,
        })
    }

    fn episode(&mut self, traj: &SessionTrajectory) -> Result<()> {
        let rec = episode_record(self.episodes, traj, self.seed, self.tag);
        self.log.append(&rec)?;
        self.window.push(rec);
        self.episodes += 1;
        if self.episodes % self.interval == 0 {
            self.row()?;
        }
        Ok(())
    }

    fn row(&mut self) -> Result<()> {
        let m = self.window.metrics(self.slate_size)?;
        let loss = if self.pending_losses.is_empty() {
            None
        } else {
            Some(self.pending_losses.iter().sum::<f64>() / self.pending_losses.len() as f64)
        };
        self.pending_losses.clear();
        self.last_row = self.episodes;
        self.csv.row(self.episodes, &m, loss)
    }

    /// Writes a closing row unless the last episode already produced one.
    fn finish(&mut self) -> Result<Metrics> {
        if self.last_row != self.episodes {
            self.row()?;
        }
        self.window.metrics(self.slate_size)
    }
}

/// Independent per-session stream for action noise, seeded from `rng`.
fn child_stream(rng: &mut SimRng) -> SimRng {
    SimRng::seed_from_u64(rng.random())
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let out = PathBuf::from(&cfg.run.out);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_file(&out.join(CONFIG_FILE), &cfg.resolved())?;
    Ok(out)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains the configured policy and writes the run directory.
pub fn run_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let out = prepare_out(cfg)?;
    let mut rec = Recorder::new(cfg, &out)?;
    let world = World::new(cfg.effective_env(), cfg.run.seed)?;
    let losses = match cfg.run.policy {
        PolicyKind::Gfn => train_gfn(cfg, world, &mut rec, &out)?,
        PolicyKind::Cem => {
            train_cem(cfg, world, &mut rec, &out)?;
            Vec::new()
        }
        PolicyKind::Random => {
            train_random(cfg, world, &mut rec)?;
            Vec::new()
        }
    };
    let final_metrics = rec.finish()?;
    Ok(TrainOutcome {
        out_dir: out,
        episodes: rec.episodes,
        losses,
        final_metrics,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Episodes to collect when no training steps drive the loop.
fn min_episodes(cfg: &RunConfig) -> u64 {
    cfg.train.steps.max(cfg.run.eval_interval) as u64
}

fn train_random(cfg: &RunConfig, mut world: World, rec: &mut Recorder) -> Result<()> {
    let mut actor = stream(cfg.run.seed, ACTOR_BASE);
    let d = cfg.model.d_action;
    let users = world.num_users();
    while rec.episodes < min_episodes(cfg) {
        let user = actor.random_range(0..users);
        let mut noise = child_stream(&mut actor);
        let traj = collect_session(&mut world, user, |_| Ok(random_act(d, &mut noise)), &mut actor)?;
        rec.episode(&traj)?;
    }
    Ok(())
}

fn cem_checkpoint(cfg: &RunConfig, state: &CemState) -> Result<String> {
    let d = state.mu.len();
    let mut p = ParamSet::new();
    p.insert(CEM_MU, Tensor2D::from_vec(1, d, state.mu.clone())?)?;
    p.insert(CEM_SIGMA, Tensor2D::from_vec(1, d, state.sigma.clone())?)?;
    Ok(checkpoint_text(&CheckpointHeader::from_hyper(&cfg.hyper()), &p))
}

fn train_cem(cfg: &RunConfig, mut world: World, rec: &mut Recorder, out: &Path) -> Result<()> {
    let mut actor = stream(cfg.run.seed, ACTOR_BASE);
    let mut sampler = stream(cfg.run.seed, CEM);
    let alpha = cfg.hyper().effective_alpha();
    let users = world.num_users();
    let mut state = CemState::new(
        cfg.model.d_action,
        cfg.cem.population,
        cfg.cem.elite_fraction,
        cfg.cem.sigma_min,
    )?;
    while rec.episodes < min_episodes(cfg) {
        state = cem_iteration(
            &state,
            |a| {
                let user = actor.random_range(0..users);
                let traj = collect_session(&mut world, user, |_| Ok(a.to_vec()), &mut actor)?;
                rec.episode(&traj)?;
                Ok(traj.retention + alpha * traj.total_reward())
            },
            &mut sampler,
        )?;
    }
    write_file(&out.join(CHECKPOINT_FILE), &cem_checkpoint(cfg, &state)?)
}

struct Actor {
    world: World,
    rng: SimRng,
}

impl Actor {
    fn collect(&mut self, model: &GfnModel, params: &ParamSet) -> Result<SessionTrajectory> {
        let user = self.rng.random_range(0..self.world.num_users());
        let mut noise = child_stream(&mut self.rng);
        let traj = collect_session(
            &mut self.world,
            user,
            |req| model.act(params, req, &mut noise).map(|(a, _)| a),
            &mut self.rng,
        )?;
        Ok(traj)
    }
}

fn collect_round(actors: &mut [Actor], model: &GfnModel, params: &ParamSet) -> Result<Vec<SessionTrajectory>> {
    if actors.len() == 1 {
        return Ok(vec![actors[0].collect(model, params)?]);
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = actors
            .iter_mut()
            .map(|a| scope.spawn(move || a.collect(model, params)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Argument("rollout worker panicked".into()))))
            .collect()
    })
}

fn train_gfn(cfg: &RunConfig, world: World, rec: &mut Recorder, out: &Path) -> Result<Vec<f64>> {
    let seed = cfg.run.seed;
    let h = cfg.hyper();
    let model = build_model(cfg)?;
    let mut params = model.init_params(&mut stream(seed, INIT))?;
    let mut opt = Optimizers::new(&params)?;
    let mut buffer = ReplayBuffer::new(cfg.train.buffer_capacity)?;
    let mut sampling = stream(seed, SAMPLING);
    let min_fill = cfg.effective_min_fill();
    let header = CheckpointHeader::from_hyper(&h);
    let ckpt_path = out.join(CHECKPOINT_FILE);

    let mut actors: Vec<Actor> = (0..cfg.run.workers)
        .map(|i| Actor {
            world: world.clone(),
            rng: stream(seed, ACTOR_BASE + i as u64),
        })
        .collect();
    drop(world);

    let mut losses = Vec::with_capacity(cfg.train.steps);
    let mut loss_text = String::from("step,loss\n");
    'outer: while losses.len() < cfg.train.steps || rec.episodes < cfg.run.eval_interval as u64 {
        for traj in collect_round(&mut actors, &model, &params)? {
            buffer.push(&traj)?;
            rec.episode(&traj)?;
            if losses.len() < cfg.train.steps && buffer.len() >= min_fill {
                let batch: Vec<&Transition> = buffer.sample(cfg.train.batch_size, &mut sampling)?;
                let loss = match train_step(&model, &mut params, &mut opt, &batch, &h) {
                    Ok(l) => l,
                    Err(e) => {
                        // parameters are untouched by a failed step
                        write_file(&ckpt_path, &checkpoint_text(&header, &params))?;
                        write_file(&out.join(LOSS_FILE), &loss_text)?;
                        return Err(e);
                    }
                };
                loss_text.push_str(&format!("{},{loss:?}\n", losses.len()));
                losses.push(loss);
                rec.pending_losses.push(loss);
            }
            if losses.len() >= cfg.train.steps && rec.episodes >= cfg.run.eval_interval as u64 {
                break 'outer;
            }
        }
    }
    write_file(&ckpt_path, &checkpoint_text(&header, &params))?;
    write_file(&out.join(LOSS_FILE), &loss_text)?;
    Ok(losses)
}

/// Reads a policy for evaluation. `random` needs no checkpoint.
pub fn load_policy(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<EvalPolicy> {
    let d = cfg.model.d_action;
    if cfg.run.policy == PolicyKind::Random {
        return Ok(EvalPolicy::Random { d_action: d });
    }
    let path = checkpoint.ok_or_else(|| Error::Usage(format!("policy `{}` needs --checkpoint", cfg.run.policy.tag())))?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let expected = CheckpointHeader::from_hyper(&cfg.hyper());
    match cfg.run.policy {
        PolicyKind::Gfn => {
            let model = build_model(cfg)?;
            let mut params = model.init_params(&mut stream(cfg.run.seed, INIT))?;
            load_checkpoint(&text, &expected, &mut params)?;
            Ok(EvalPolicy::Gfn { model, params })
        }
        _ => {
            let mut p = ParamSet::new();
            p.insert(CEM_MU, Tensor2D::zeros(1, d))?;
            p.insert(CEM_SIGMA, Tensor2D::zeros(1, d))?;
            load_checkpoint(&text, &expected, &mut p)?;
            Ok(EvalPolicy::Fixed {
                action: p.value(CEM_MU)?.data().to_vec(),
            })
        }
    }
}

/// Rolls out `policy` for `episodes` sessions on a freshly built world;
/// nothing is learned.
pub fn evaluate_policy(cfg: &RunConfig, policy: &EvalPolicy, episodes: usize) -> Result<(Metrics, Vec<EpisodeRecord>)> {
    if episodes == 0 {
        return Err(Error::Argument("evaluation needs at least one episode".into()));
    }
    let seed = cfg.run.seed;
    let mut world = World::new(cfg.effective_env(), seed)?;
    let mut rng = stream(seed, EVAL);
    let users = world.num_users();
    let mut records = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let user = rng.random_range(0..users);
        let mut noise = child_stream(&mut rng);
        let traj = match policy {
            EvalPolicy::Gfn { model, params } => collect_session(
                &mut world,
                user,
                |req| model.act(params, req, &mut noise).map(|(a, _)| a),
                &mut rng,
            )?,
            EvalPolicy::Fixed { action } => collect_session(&mut world, user, |_| Ok(action.clone()), &mut rng)?,
            EvalPolicy::Random { d_action } => {
                collect_session(&mut world, user, |_| Ok(random_act(*d_action, &mut noise)), &mut rng)?
            }
        };
        records.push(episode_record(e as u64, &traj, seed, policy.tag()));
    }
    let m = compute_metrics(&records, cfg.env.slate_size)?;
    Ok((m, records))
}

/// Evaluates a checkpoint and writes `eval_metrics.csv` and `eval.jsonl`
/// into `run.out`.
pub fn run_eval(cfg: &RunConfig, checkpoint: Option<&Path>, episodes: usize) -> Result<Metrics> {
    cfg.validate()?;
    if episodes == 0 {
        return Err(Error::Argument("evaluation needs at least one episode".into()));
    }
    let policy = load_policy(cfg, checkpoint)?;
    let (m, records) = evaluate_policy(cfg, &policy, episodes)?;
    let out = PathBuf::from(&cfg.run.out);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut log = RunLog::create(&out.join(EVAL_LOG_FILE))?;
    for r in &records {
        log.append(r)?;
    }
    MetricsCsv::create(&out.join(EVAL_METRICS_FILE))?.row(episodes as u64, &m, None)?;
    Ok(m)
}

/// Transitions from random-policy sessions, used to probe gradients.
pub fn probe_transitions(cfg: &RunConfig, sessions: usize) -> Result<Vec<Transition>> {
    let mut world = World::new(cfg.effective_env(), cfg.run.seed)?;
    let mut rng = stream(cfg.run.seed, SAMPLING);
    let d = cfg.model.d_action;
    let mut out = Vec::new();
    for s in 0..sessions {
        let user = s % world.num_users();
        let mut noise = child_stream(&mut rng);
        let traj = collect_session(&mut world, user, |_| Ok(random_act(d, &mut noise)), &mut rng)?;
        out.extend(traj.transitions);
    }
    Ok(out)
}

/// Finite-difference check of every parameter through the minibatch loss
/// on a small batch containing terminal and non-terminal transitions.
pub fn run_gradcheck(cfg: &RunConfig, eps: f64, tol: f64) -> Result<GradCheckReport> {
    let model = build_model(cfg)?;
    let h = cfg.hyper();
    let mut params = model.init_params(&mut stream(cfg.run.seed, INIT))?;
    let transitions = probe_transitions(cfg, 3)?;
    let batch: Vec<&Transition> = transitions.iter().take(12).collect();
    gradient_check(|p| model.batch_loss(p, &batch, &h), &mut params, eps, tol, |_| true)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SanityReport {
    pub tv: f64,
    pub threshold: f64,
    pub passed: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SanityConfig {
    pub depth: usize,
    pub branching: usize,
    pub seed: u64,
    pub threshold: f64,
    pub train: TabularTrainConfig,
}

impl Default for SanityConfig {
    fn default() -> Self {
        SanityConfig {
            depth: 3,
            branching: 3,
            seed: 7,
            threshold: 0.05,
            train: TabularTrainConfig::default(),
        }
    }
}

/// Trains a tabular model on a tree with log-uniform rewards in `[0.1, 10]`
/// and scores its terminal distribution.
pub fn run_sanity(cfg: &SanityConfig) -> Result<SanityReport> {
    let start = Instant::now();
    let mut rng = stream(cfg.seed, 0);
    let env = TreeEnv::log_uniform(cfg.depth, cfg.branching, 0.1, 10.0, &mut rng)?;
    let model = train_tabular_db(&env, &cfg.train, &mut rng)?;
    let tv = terminal_tv(&env, &model);
    Ok(SanityReport {
        tv,
        threshold: cfg.threshold,
        passed: tv <= cfg.threshold,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Fits `(ω, c)` from an interaction log and writes them as config lines.
pub fn run_calibrate(logs: &Path, out: &Path) -> Result<Vec<FittedBehavior>> {
    let fits = fit_rates(&load_interactions(logs)?)?;
    write_file(out, &calibration_lines(&fits))?;
    Ok(fits)
}
