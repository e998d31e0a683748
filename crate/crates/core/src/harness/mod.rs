//! Episode loop, training driver, evaluation protocols and diagnostic dumps.

mod eval;
mod persist;
mod policy;
mod train;

use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dqn::{DqnError, Transition};
use crate::nn::NnError;
use crate::render::{self, CameraSpec, Observation, RenderError, SceneStyle};
use crate::sim::{self, Action, KinematicChain, ResetSpec, SimError, Status, StepResult, WorldState};

pub use eval::{activation_dump, cross_evaluate, evaluate, value_trace, CrossEvalReport, EvalReport, ValueTrace};
pub use persist::{load_replay, save_replay, TrainingState};
pub use policy::{Policy, ScriptedPolicy, UniformRandomPolicy};
pub use train::{read_metrics, train, EpisodeMetrics, TrainOutcome, TrainSettings, METRICS_HEADER};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dqn(#[from] DqnError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        HarnessError::Corrupt {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Independent random streams derived from the run seed. Each episode draws
/// from its own stream so any episode can be replayed without the history
/// that preceded it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 0,
    Reset = 1,
    Explore = 2,
    Replay = 3,
    EvalReset = 4,
    EvalExplore = 5,
}

pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 48) | index);
    rng
}

/// Everything needed to reset, step and observe the task.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub chain: KinematicChain,
    pub reset: ResetSpec,
    pub camera: CameraSpec,
    pub style: SceneStyle,
    pub width: usize,
    pub height: usize,
}

impl Environment {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.chain.validate()?;
        self.reset.validate(&self.chain)?;
        self.camera.validate()?;
        self.style.validate()?;
        if self.width == 0 || self.height == 0 {
            return Err(RenderError::EmptyImage {
                width: self.width,
                height: self.height,
            }
            .into());
        }
        Ok(())
    }

    pub fn reset(&self, rng: &mut ChaCha8Rng) -> WorldState {
        sim::reset(&self.reset, &self.chain, rng)
    }

    pub fn observe(&self, world: &WorldState) -> Result<Observation, HarnessError> {
        Ok(render::render(world, &self.chain, &self.camera, &self.style, self.width, self.height)?)
    }

    pub fn step(&self, world: &WorldState, action: Action) -> Result<StepResult, HarnessError> {
        Ok(sim::step(world, &self.chain, action, &self.reset)?)
    }
}

/// Per-step record of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub status: Status,
    pub rewards: Vec<f64>,
    /// Largest action value of the observation each action was chosen from.
    pub max_q: Vec<f64>,
    /// When recording was asked for, the observation each action was chosen
    /// from, one per step.
    pub frames: Vec<Observation>,
}

impl EpisodeLog {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn success(&self) -> bool {
        self.status == Status::Success
    }

    pub fn mean_reward(&self) -> f64 {
        mean(&self.rewards)
    }

    pub fn mean_max_q(&self) -> f64 {
        mean(&self.max_q)
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Random streams consumed by one episode.
pub struct EpisodeRngs {
    pub reset: ChaCha8Rng,
    pub explore: ChaCha8Rng,
}

/// Runs one ε-greedy episode until success or the step cap. `epsilon` maps
/// the step index within the episode to an exploration rate. `on_step` sees
/// every transition together with the policy, which lets a learning agent
/// update itself between steps.
pub fn run_episode<P, E, F>(
    env: &Environment,
    policy: &mut P,
    epsilon: E,
    rngs: &mut EpisodeRngs,
    record_frames: bool,
    mut on_step: F,
) -> Result<EpisodeLog, HarnessError>
where
    P: Policy + ?Sized,
    E: Fn(usize) -> f64,
    F: FnMut(&mut P, Transition<Observation>) -> Result<(), HarnessError>,
{
    let mut world = env.reset(&mut rngs.reset);
    let mut obs = Arc::new(env.observe(&world)?);
    let mut log = EpisodeLog {
        status: Status::Continue,
        rewards: Vec::new(),
        max_q: Vec::new(),
        frames: Vec::new(),
    };
    loop {
        if record_frames {
            log.frames.push((*obs).clone());
        }
        let q = policy.action_values(&obs, &world)?;
        log.max_q.push(q.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let action = crate::dqn::select_action(&q, epsilon(log.rewards.len()), &mut rngs.explore);
        let result = env.step(&world, action)?;
        let next_obs = Arc::new(env.observe(&result.next)?);
        log.rewards.push(result.reward);
        on_step(
            policy,
            Transition {
                observation: obs,
                action,
                reward: result.reward,
                next_observation: Arc::clone(&next_obs),
                terminal: result.status == Status::Success,
            },
        )?;
        world = result.next;
        obs = next_obs;
        if result.status.is_done() {
            log.status = result.status;
            return Ok(log);
        }
    }
}
