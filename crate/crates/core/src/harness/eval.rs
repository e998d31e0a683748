use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{run_episode, stream_rng, EpisodeLog, EpisodeRngs, Environment, HarnessError, Policy, Stream};
use crate::nn::QNetwork;
use crate::render::Observation;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub episodes: usize,
    pub epsilon: f64,
    pub successes: usize,
    pub mean_length: f64,
}

impl EvalReport {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.episodes as f64
    }
}

fn eval_rngs(seed: u64, episode: u64) -> EpisodeRngs {
    EpisodeRngs {
        reset: stream_rng(seed, Stream::EvalReset, episode),
        explore: stream_rng(seed, Stream::EvalExplore, episode),
    }
}

/// Runs `episodes` episodes at a fixed exploration rate without learning.
/// Episode `i` uses its own seeded streams, so two policies evaluated with
/// the same seed face the same sequence of initial states.
pub fn evaluate<P: Policy + ?Sized>(
    env: &Environment,
    policy: &mut P,
    episodes: usize,
    epsilon: f64,
    seed: u64,
) -> Result<EvalReport, HarnessError> {
    if episodes == 0 {
        return Err(HarnessError::Invalid("evaluation needs at least one episode".into()));
    }
    let mut successes = 0;
    let mut steps = 0;
    for i in 0..episodes {
        let log = run_episode(env, policy, |_| epsilon, &mut eval_rngs(seed, i as u64), false, |_, _| Ok(()))?;
        successes += usize::from(log.success());
        steps += log.len();
    }
    Ok(EvalReport {
        episodes,
        epsilon,
        successes,
        mean_length: steps as f64 / episodes as f64,
    })
}

/// Success rates of two agents in two environments. Rows are agents,
/// columns are environments.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossEvalReport {
    pub episodes: usize,
    pub epsilon: f64,
    pub rates: [[f64; 2]; 2],
}

impl CrossEvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("agent,env_a,env_b,episodes,epsilon\n");
        for (name, row) in ["agent_a", "agent_b"].iter().zip(&self.rates) {
            let _ = writeln!(s, "{name},{},{},{},{}", row[0], row[1], self.episodes, self.epsilon);
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "success rate over {} episodes, epsilon = {}\n{:<10}{:>8}{:>8}\n",
            self.episodes, self.epsilon, "", "Env A", "Env B"
        );
        for (name, row) in ["Agent A", "Agent B"].iter().zip(&self.rates) {
            let _ = writeln!(s, "{name:<10}{:>7.0}%{:>7.0}%", row[0] * 100.0, row[1] * 100.0);
        }
        s
    }
}

pub fn cross_evaluate(
    agents: [&mut dyn Policy; 2],
    envs: [&Environment; 2],
    episodes: usize,
    epsilon: f64,
    seed: u64,
) -> Result<CrossEvalReport, HarnessError> {
    let mut rates = [[0.0; 2]; 2];
    for (row, agent) in rates.iter_mut().zip(agents) {
        for (cell, env) in row.iter_mut().zip(envs) {
            *cell = evaluate(env, agent, episodes, epsilon, seed)?.success_rate();
        }
    }
    Ok(CrossEvalReport {
        episodes,
        epsilon,
        rates,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueTrace {
    pub log: EpisodeLog,
    pub csv_path: PathBuf,
    pub frame_paths: Vec<PathBuf>,
}

/// One greedy episode logged frame by frame: `{prefix}.csv` holds
/// `frame,max_q,reward` and `{prefix}/frame_NNNN.pgm` the observation each
/// action was chosen from.
pub fn value_trace<P: Policy + ?Sized>(
    env: &Environment,
    policy: &mut P,
    seed: u64,
    prefix: &Path,
) -> Result<ValueTrace, HarnessError> {
    let log = run_episode(env, policy, |_| 0.0, &mut eval_rngs(seed, 0), true, |_, _| Ok(()))?;
    let mut csv_path = prefix.as_os_str().to_owned();
    csv_path.push(".csv");
    let csv_path = PathBuf::from(csv_path);
    let mut csv = String::from("frame,max_q,reward\n");
    for (i, (q, r)) in log.max_q.iter().zip(&log.rewards).enumerate() {
        let _ = writeln!(csv, "{i},{q},{r}");
    }
    fs::write(&csv_path, csv).map_err(HarnessError::io(&csv_path))?;
    fs::create_dir_all(prefix).map_err(HarnessError::io(prefix))?;
    let mut frame_paths = Vec::with_capacity(log.frames.len());
    for (i, frame) in log.frames.iter().enumerate() {
        let path = prefix.join(format!("frame_{i:04}.pgm"));
        frame.write_pgm(&path)?;
        frame_paths.push(path);
    }
    Ok(ValueTrace {
        log,
        csv_path,
        frame_paths,
    })
}

/// Maps values linearly onto 0..=255; a constant map becomes all zeros.
fn normalize(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0; values.len()];
    }
    values.iter().map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8).collect()
}

/// Writes every channel of every convolutional layer's rectified output as
/// `{dir}/conv{L}_ch{CC}.pgm`, layers and channels counted from 1 and 0.
pub fn activation_dump(net: &QNetwork, obs: &Observation, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    let mut paths = Vec::new();
    for (l, act) in net.conv_activations(&obs.to_input())?.iter().enumerate() {
        let [channels, height, width] = [act.shape()[0], act.shape()[1], act.shape()[2]];
        for (c, plane) in act.data().chunks_exact(height * width).enumerate().take(channels) {
            let image = Observation {
                width,
                height,
                pixels: normalize(plane),
            };
            let path = dir.join(format!("conv{}_ch{c:02}.pgm", l + 1));
            image.write_pgm(&path)?;
            paths.push(path);
        }
    }
    Ok(paths)
}
