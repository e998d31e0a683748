use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::persist::{self, TrainingState};
use super::{run_episode, stream_rng, EpisodeRngs, Environment, HarnessError, Stream};
use crate::dqn::{AdamOptimizer, Agent, AgentConfig, EpsilonSchedule};
use crate::nn::{AdamConfig, NetworkSpec, QNetwork};

pub const METRICS_HEADER: &str = "episode,success,cumulative_successes,mean_reward,mean_max_q,length,epsilon";

/// One row of the training metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    /// 1-based.
    pub episode: u64,
    pub success: bool,
    pub cumulative_successes: u64,
    pub mean_reward: f64,
    pub mean_max_q: f64,
    pub length: u32,
    /// Exploration rate at the first step of the episode.
    pub epsilon: f64,
}

impl EpisodeMetrics {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.episode,
            u8::from(self.success),
            self.cumulative_successes,
            self.mean_reward,
            self.mean_max_q,
            self.length,
            self.epsilon
        )
    }

    pub fn from_csv_row(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return None;
        }
        Some(Self {
            episode: f[0].parse().ok()?,
            success: match f[1] {
                "0" => false,
                "1" => true,
                _ => return None,
            },
            cumulative_successes: f[2].parse().ok()?,
            mean_reward: f[3].parse().ok()?,
            mean_max_q: f[4].parse().ok()?,
            length: f[5].parse().ok()?,
            epsilon: f[6].parse().ok()?,
        })
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpisodeMetrics>, HarnessError> {
    let file = File::open(path).map_err(HarnessError::io(path))?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h == METRICS_HEADER => {}
        _ => return Err(HarnessError::corrupt(path, "missing metrics header")),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let line = line.map_err(HarnessError::io(path))?;
            EpisodeMetrics::from_csv_row(&line)
                .ok_or_else(|| HarnessError::corrupt(path, format!("line {}: malformed metrics row", i + 2)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub run_name: String,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub episodes: u64,
    pub checkpoint_every: u64,
    pub env: Environment,
    pub network: NetworkSpec,
    pub agent: AgentConfig,
    pub adam: AdamConfig,
    pub grad_norm_cap: Option<f64>,
    pub schedule: EpsilonSchedule,
}

impl TrainSettings {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.env.validate()?;
        self.network.validate()?;
        self.agent.validate()?;
        self.adam.validate()?;
        self.schedule.validate()?;
        if self.network.input != [1, self.env.height, self.env.width] {
            return Err(HarnessError::Invalid(format!(
                "network input {:?} does not match the {}x{} observation",
                self.network.input, self.env.width, self.env.height
            )));
        }
        if self.checkpoint_every == 0 {
            return Err(HarnessError::Invalid("checkpoint_every must be >= 1".into()));
        }
        if self.grad_norm_cap.is_some_and(|c| !(c > 0.0)) {
            return Err(HarnessError::Invalid("grad_norm_cap must be positive".into()));
        }
        Ok(())
    }

    pub fn path(&self, suffix: &str) -> PathBuf {
        self.output_dir.join(format!("{}.{suffix}", self.run_name))
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.path("metrics.csv")
    }

    /// Online network parameters; the file `eval` and friends consume.
    pub fn checkpoint_path(&self) -> PathBuf {
        self.path("net")
    }

    /// Builds the untrained agent for this run from the `Init` stream.
    pub fn fresh_agent(&self) -> Result<Agent<QNetwork, AdamOptimizer>, HarnessError> {
        let mut rng = stream_rng(self.seed, Stream::Init, 0);
        let net = QNetwork::init(self.network.clone(), &mut rng)?;
        let opt = AdamOptimizer::new(self.adam, &net.params, self.grad_norm_cap);
        Ok(Agent::new(self.agent, net, opt)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Rows produced by this invocation.
    pub metrics: Vec<EpisodeMetrics>,
    pub state: TrainingState,
}

/// Trains for `settings.episodes` episodes in total, writing one metrics row
/// per episode and a full checkpoint every `checkpoint_every` episodes and
/// at the end. With `resume`, training continues from the last checkpoint
/// and the metrics file is cut back to match it.
pub fn train(
    settings: &TrainSettings,
    resume: bool,
    mut progress: Option<&mut dyn FnMut(&EpisodeMetrics)>,
) -> Result<TrainOutcome, HarnessError> {
    settings.validate()?;
    fs::create_dir_all(&settings.output_dir).map_err(HarnessError::io(&settings.output_dir))?;
    let metrics_path = settings.metrics_path();

    let (mut agent, mut state) = if resume {
        let mut agent = settings.fresh_agent()?;
        let state = persist::load_training(settings, &mut agent)?;
        truncate_metrics(&metrics_path, state.episodes_done)?;
        (agent, state)
    } else {
        fs::write(&metrics_path, format!("{METRICS_HEADER}\n")).map_err(HarnessError::io(&metrics_path))?;
        (settings.fresh_agent()?, TrainingState::default())
    };

    let mut out = OpenOptions::new()
        .append(true)
        .open(&metrics_path)
        .map_err(HarnessError::io(&metrics_path))?;
    let mut produced = Vec::new();
    while state.episodes_done < settings.episodes {
        let index = state.episodes_done;
        let mut rngs = EpisodeRngs {
            reset: stream_rng(settings.seed, Stream::Reset, index),
            explore: stream_rng(settings.seed, Stream::Explore, index),
        };
        let mut replay_rng = stream_rng(settings.seed, Stream::Replay, index);
        let start_step = agent.env_steps;
        let schedule = settings.schedule;
        let log = run_episode(
            &settings.env,
            &mut agent,
            |t| schedule.epsilon_at(start_step + t as u64),
            &mut rngs,
            false,
            |agent, transition| {
                agent.train_step(transition, &mut replay_rng)?;
                Ok(())
            },
        )?;
        state.episodes_done += 1;
        state.cumulative_successes += u64::from(log.success());
        state.env_steps = agent.env_steps;
        state.updates = agent.updates;
        state.adam_t = agent.optimizer.state.t;
        let row = EpisodeMetrics {
            episode: state.episodes_done,
            success: log.success(),
            cumulative_successes: state.cumulative_successes,
            mean_reward: log.mean_reward(),
            mean_max_q: log.mean_max_q(),
            length: log.len() as u32,
            epsilon: schedule.epsilon_at(start_step),
        };
        writeln!(out, "{}", row.to_csv_row()).map_err(HarnessError::io(&metrics_path))?;
        if let Some(cb) = progress.as_mut() {
            cb(&row);
        }
        produced.push(row);
        if state.episodes_done % settings.checkpoint_every == 0 || state.episodes_done == settings.episodes {
            out.flush().map_err(HarnessError::io(&metrics_path))?;
            persist::save_training(settings, &agent, &state)?;
        }
    }
    Ok(TrainOutcome {
        metrics: produced,
        state,
    })
}

fn truncate_metrics(path: &Path, rows: u64) -> Result<(), HarnessError> {
    let text = fs::read_to_string(path).map_err(HarnessError::io(path))?;
    let keep: Vec<&str> = text.lines().take(rows as usize + 1).collect();
    if keep.first() != Some(&METRICS_HEADER) || (keep.len() as u64) < rows + 1 {
        return Err(HarnessError::corrupt(
            path,
            format!("metrics file has fewer rows than the {rows} checkpointed episodes"),
        ));
    }
    let mut body = keep.join("\n");
    body.push('\n');
    fs::write(path, body).map_err(HarnessError::io(path))
}
