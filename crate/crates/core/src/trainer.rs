//! Episode loop: randomized-horizon rollouts, backpropagation and Adam.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, TrainingMetadata};
use crate::controller::ControllerParams;
use crate::error::{Error, Result};
use crate::objective::{LossBreakdown, LossWeights, MIN_LOSS_HORIZON};
use crate::optim::{adam_step, AdamConfig, OptimizerState};
use crate::rng::SeededRng;
use crate::rollout::{Regime, Scenario, Simulator};

pub const DESK_GRID: usize = 48;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: usize,
    pub adam: AdamConfig,
    pub horizon_min: usize,
    pub horizon_max: usize,
    pub scenario: Scenario,
    pub weights: LossWeights,
    pub seed: u64,
    /// Extra rollouts tried when an episode blows up numerically.
    pub max_retries: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 300,
            adam: AdamConfig::default(),
            horizon_min: 60,
            horizon_max: 120,
            scenario: Regime::Hybrid.scenario(DESK_GRID),
            weights: LossWeights::default(),
            seed: 0,
            max_retries: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_min > self.horizon_max {
            return Err(Error::config(format!(
                "horizon_min ({}) must not exceed horizon_max ({})",
                self.horizon_min, self.horizon_max
            )));
        }
        if self.horizon_min < MIN_LOSS_HORIZON {
            return Err(Error::config(format!(
                "horizon_min must be at least {MIN_LOSS_HORIZON}, got {}",
                self.horizon_min
            )));
        }
        self.adam.validate()?;
        self.weights.validate()?;
        self.scenario.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Ok,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub horizon: usize,
    pub init_seed: u64,
    pub status: EpisodeStatus,
    /// Zeroed when the episode was skipped.
    pub loss: LossBreakdown,
    pub grad_norm: f64,
    pub attempts: usize,
}

impl EpisodeLog {
    pub const CSV_HEADER: &'static str =
        "episode,horizon,deficit_final,stab,l1,sustain,total,status";

    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.episode,
            self.horizon,
            l.deficit_final,
            l.stab,
            l.l1,
            l.sustain,
            l.total,
            match self.status {
                EpisodeStatus::Ok => "ok",
                EpisodeStatus::Skipped => "skipped",
            }
        )
    }
}

/// Horizon and initial-condition seed of `episode`, independent of every
/// other episode so that resumed runs see the same stream.
pub fn episode_draw(cfg: &TrainConfig, episode: usize, attempt: usize) -> (usize, u64) {
    let mut rng = SeededRng::stream(cfg.seed, episode as u64);
    let mut draw = (0, 0);
    for _ in 0..=attempt {
        let h = rng.range_inclusive(cfg.horizon_min as u64, cfg.horizon_max as u64) as usize;
        draw = (h, rng.next_u64());
    }
    draw
}

/// Single-threaded training state; owns the only mutable copy of the weights.
#[derive(Debug)]
pub struct Trainer {
    cfg: TrainConfig,
    sim: Simulator<f32>,
    params: ControllerParams<f32>,
    opt: OptimizerState<f32>,
    episode: usize,
    last_loss: Option<f64>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        let params = ControllerParams::init(cfg.seed);
        Self::from_parts(cfg, params, None, 0, None)
    }

    /// Continues from a checkpoint that carries optimizer state.
    pub fn resume(cfg: TrainConfig, ck: &Checkpoint) -> Result<Self> {
        if ck.metadata.seed != cfg.seed {
            return Err(Error::config(format!(
                "checkpoint was trained with seed {}, config has seed {}",
                ck.metadata.seed, cfg.seed
            )));
        }
        let opt = ck
            .optimizer_state()
            .ok_or_else(|| Error::config("checkpoint has no optimizer state to resume from"))?;
        Self::from_parts(
            cfg,
            ck.params()?,
            Some(opt),
            ck.metadata.episodes,
            ck.metadata.final_loss,
        )
    }

    fn from_parts(
        cfg: TrainConfig,
        params: ControllerParams<f32>,
        opt: Option<OptimizerState<f32>>,
        episode: usize,
        last_loss: Option<f64>,
    ) -> Result<Self> {
        cfg.validate()?;
        params.validate()?;
        let opt = opt.unwrap_or_else(|| OptimizerState::new(&params.tensors()));
        Ok(Self {
            sim: Simulator::new(cfg.scenario.clone())?,
            cfg,
            params,
            opt,
            episode,
            last_loss,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ControllerParams<f32> {
        &self.params
    }

    pub fn episodes_done(&self) -> usize {
        self.episode
    }

    pub fn is_finished(&self) -> bool {
        self.episode >= self.cfg.episodes
    }

    pub fn checkpoint(&self, regime: &str) -> Checkpoint {
        let meta = TrainingMetadata {
            seed: self.cfg.seed,
            episodes: self.episode,
            final_loss: self.last_loss,
            regime: regime.to_string(),
            grid: self.cfg.scenario.sim.height,
        };
        Checkpoint::new(&self.params, meta).with_optimizer(&self.opt)
    }

    /// Runs the next episode. Numeric blow-ups are retried with fresh draws
    /// up to `max_retries` times, after which the episode is skipped.
    pub fn step(&mut self) -> Result<EpisodeLog> {
        let episode = self.episode;
        let mut last = (0, 0);
        for attempt in 0..=self.cfg.max_retries {
            let (horizon, init_seed) = episode_draw(&self.cfg, episode, attempt);
            last = (horizon, init_seed);
            let out =
                match self
                    .sim
                    .train_rollout(&self.params, init_seed, horizon, &self.cfg.weights)
                {
                    Ok(out) => out,
                    Err(Error::NonFinite { .. }) => continue,
                    Err(e) => return Err(e),
                };
            let grads: Vec<&[f32]> = out.grads.iter().map(|g| g.data()).collect();
            let stats = match adam_step(
                &mut self.params.tensors_mut(),
                &grads,
                &mut self.opt,
                &self.cfg.adam,
            ) {
                Ok(s) => s,
                Err(Error::NonFinite { .. }) => continue,
                Err(e) => return Err(e),
            };
            self.episode += 1;
            self.last_loss = Some(out.loss.total);
            return Ok(EpisodeLog {
                episode,
                horizon,
                init_seed,
                status: EpisodeStatus::Ok,
                loss: out.loss,
                grad_norm: stats.grad_norm,
                attempts: attempt + 1,
            });
        }
        self.episode += 1;
        Ok(EpisodeLog {
            episode,
            horizon: last.0,
            init_seed: last.1,
            status: EpisodeStatus::Skipped,
            loss: LossBreakdown {
                deficit_final: 0.0,
                stab: 0.0,
                l1: 0.0,
                sustain: 0.0,
                total: 0.0,
                gate: 0,
            },
            grad_norm: 0.0,
            attempts: self.cfg.max_retries + 1,
        })
    }

    /// Trains until `cfg.episodes` have run, calling `on_episode` after each.
    pub fn run(
        &mut self,
        mut on_episode: impl FnMut(&Trainer, &EpisodeLog) -> Result<()>,
    ) -> Result<Vec<EpisodeLog>> {
        let mut logs = Vec::with_capacity(self.cfg.episodes.saturating_sub(self.episode));
        while !self.is_finished() {
            let log = self.step()?;
            on_episode(self, &log)?;
            logs.push(log);
        }
        Ok(logs)
    }
}

/// Convenience wrapper: a full training run from initialization.
pub fn train(cfg: TrainConfig) -> Result<(ControllerParams<f32>, Vec<EpisodeLog>)> {
    let mut t = Trainer::new(cfg)?;
    let logs = t.run(|_, _| Ok(()))?;
    Ok((t.params, logs))
}
