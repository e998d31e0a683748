//! On-disk training state: network parameters, optimizer moments, replay
//! memory and a plain-text counter sidecar.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use super::train::TrainSettings;
use super::HarnessError;
use crate::dqn::{AdamOptimizer, Agent, ReplayBuffer, Transition};
use crate::nn::checkpoint::{decode_params, encode_params};
use crate::nn::{NetworkParams, QNetwork};
use crate::render::Observation;
use crate::sim::Action;

const REPLAY_MAGIC: &[u8; 8] = b"DGREPLAY";
const ADAM_MAGIC: &[u8; 8] = b"DGADAMST";

/// Counters restored on resume.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainingState {
    pub episodes_done: u64,
    pub cumulative_successes: u64,
    /// Environment steps taken, which is also the position in the
    /// exploration schedule.
    pub env_steps: u64,
    pub updates: u64,
    pub adam_t: u64,
}

impl TrainingState {
    fn to_text(self) -> String {
        format!(
            "episodes_done={}\ncumulative_successes={}\nenv_steps={}\nupdates={}\nadam_t={}\n",
            self.episodes_done, self.cumulative_successes, self.env_steps, self.updates, self.adam_t
        )
    }

    fn from_text(text: &str, path: &Path) -> Result<Self, HarnessError> {
        let mut fields = HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::corrupt(path, format!("malformed line `{line}`")))?;
            let v: u64 = v
                .trim()
                .parse()
                .map_err(|_| HarnessError::corrupt(path, format!("`{k}` is not an integer")))?;
            fields.insert(k.trim().to_string(), v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| HarnessError::corrupt(path, format!("missing `{k}`")))
        };
        Ok(Self {
            episodes_done: get("episodes_done")?,
            cumulative_successes: get("cumulative_successes")?,
            env_steps: get("env_steps")?,
            updates: get("updates")?,
            adam_t: get("adam_t")?,
        })
    }
}

/// Writes via a temporary sibling so a crash never leaves a torn file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(HarnessError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(HarnessError::io(path))
}

struct Reader<'a> {
    bytes: &'a [u8],
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], HarnessError> {
        if self.bytes.len() < n {
            return Err(HarnessError::corrupt(self.path, "truncated file"));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64, HarnessError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, HarnessError> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn u8(&mut self) -> Result<u8, HarnessError> {
        Ok(self.take(1)?[0])
    }

    fn params(&mut self) -> Result<NetworkParams, HarnessError> {
        let len = self.u64()? as usize;
        let path = self.path;
        decode_params(self.take(len)?).map_err(|e| HarnessError::corrupt(path, e.to_string()))
    }

    fn finish(self) -> Result<(), HarnessError> {
        if self.bytes.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::corrupt(self.path, "trailing bytes"))
        }
    }
}

fn put_params(out: &mut Vec<u8>, params: &NetworkParams) {
    let bytes = encode_params(params);
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&bytes);
}

/// Replay memory in slot order with each distinct frame stored once;
/// consecutive transitions share their middle observation.
pub fn save_replay(replay: &ReplayBuffer<Transition<Observation>>, path: &Path) -> Result<(), HarnessError> {
    let mut frame_ids: HashMap<*const Observation, u64> = HashMap::new();
    let mut frames: Vec<Arc<Observation>> = Vec::new();
    let mut id_of = |obs: &Arc<Observation>| {
        *frame_ids.entry(Arc::as_ptr(obs)).or_insert_with(|| {
            frames.push(Arc::clone(obs));
            frames.len() as u64 - 1
        })
    };
    let records: Vec<(u64, u64, &Transition<Observation>)> = replay
        .slots()
        .iter()
        .map(|t| (id_of(&t.observation), id_of(&t.next_observation), t))
        .collect();

    let mut out = Vec::new();
    out.extend_from_slice(REPLAY_MAGIC);
    out.extend_from_slice(&(replay.capacity() as u64).to_le_bytes());
    out.extend_from_slice(&replay.insert_count().to_le_bytes());
    out.extend_from_slice(&(replay.head() as u64).to_le_bytes());
    out.extend_from_slice(&(frames.len() as u64).to_le_bytes());
    for f in &frames {
        out.extend_from_slice(&(f.width as u64).to_le_bytes());
        out.extend_from_slice(&(f.height as u64).to_le_bytes());
        out.extend_from_slice(&f.pixels);
    }
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for (obs, next, t) in records {
        out.extend_from_slice(&obs.to_le_bytes());
        out.extend_from_slice(&next.to_le_bytes());
        out.push(t.action.id() as u8);
        out.extend_from_slice(&t.reward.to_bits().to_le_bytes());
        out.push(u8::from(t.terminal));
    }
    write_atomic(path, &out)
}

pub fn load_replay(path: &Path) -> Result<ReplayBuffer<Transition<Observation>>, HarnessError> {
    let bytes = fs::read(path).map_err(HarnessError::io(path))?;
    let mut r = Reader { bytes: &bytes, path };
    if r.take(8)? != REPLAY_MAGIC {
        return Err(HarnessError::corrupt(path, "not a replay file"));
    }
    let capacity = r.u64()? as usize;
    let insert_count = r.u64()?;
    let head = r.u64()? as usize;
    let num_frames = r.u64()? as usize;
    let mut frames = Vec::with_capacity(num_frames.min(1 << 20));
    for _ in 0..num_frames {
        let width = r.u64()? as usize;
        let height = r.u64()? as usize;
        let pixels = r.take(width * height)?.to_vec();
        frames.push(Arc::new(Observation { width, height, pixels }));
    }
    let frame = |id: u64| {
        frames
            .get(id as usize)
            .cloned()
            .ok_or_else(|| HarnessError::corrupt(path, format!("frame index {id} out of range")))
    };
    let count = r.u64()? as usize;
    let mut items = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let observation = frame(r.u64()?)?;
        let next_observation = frame(r.u64()?)?;
        let action =
            Action::new(u32::from(r.u8()?)).map_err(|e| HarnessError::corrupt(path, e.to_string()))?;
        let reward = r.f64()?;
        let terminal = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(HarnessError::corrupt(path, format!("bad terminal flag {b}"))),
        };
        items.push(Transition {
            observation,
            action,
            reward,
            next_observation,
            terminal,
        });
    }
    r.finish()?;
    ReplayBuffer::from_parts(capacity, items, head, insert_count).map_err(|e| HarnessError::corrupt(path, e.to_string()))
}

pub(super) fn save_training(
    settings: &TrainSettings,
    agent: &Agent<QNetwork, AdamOptimizer>,
    state: &TrainingState,
) -> Result<(), HarnessError> {
    write_atomic(&settings.checkpoint_path(), &encode_params(&agent.online.params))?;
    write_atomic(&settings.path("target.net"), &encode_params(&agent.target.params))?;
    let adam = &agent.optimizer.state;
    let mut out = Vec::new();
    out.extend_from_slice(ADAM_MAGIC);
    out.extend_from_slice(&adam.t.to_le_bytes());
    put_params(&mut out, &adam.m);
    put_params(&mut out, &adam.v);
    write_atomic(&settings.path("adam"), &out)?;
    save_replay(&agent.replay, &settings.path("replay"))?;
    let state = TrainingState {
        env_steps: agent.env_steps,
        updates: agent.updates,
        adam_t: agent.optimizer.state.t,
        ..*state
    };
    write_atomic(&settings.path("state"), state.to_text().as_bytes())
}

/// Restores a checkpoint written by [`save_training`] into a freshly built
/// agent, checking every piece against the configured shapes.
pub(super) fn load_training(
    settings: &TrainSettings,
    agent: &mut Agent<QNetwork, AdamOptimizer>,
) -> Result<TrainingState, HarnessError> {
    let state_path = settings.path("state");
    let text = fs::read_to_string(&state_path).map_err(HarnessError::io(&state_path))?;
    let state = TrainingState::from_text(&text, &state_path)?;

    let load_net = |suffix: &str| -> Result<NetworkParams, HarnessError> {
        let path = settings.path(suffix);
        let bytes = fs::read(&path).map_err(HarnessError::io(&path))?;
        let params = decode_params(&bytes).map_err(|e| HarnessError::corrupt(&path, e.to_string()))?;
        if !params.same_shape(&agent.online.params) {
            return Err(HarnessError::corrupt(&path, "parameter shapes do not match the configured network"));
        }
        Ok(params)
    };
    let online = load_net("net")?;
    let target = load_net("target.net")?;

    let adam_path = settings.path("adam");
    let bytes = fs::read(&adam_path).map_err(HarnessError::io(&adam_path))?;
    let mut r = Reader {
        bytes: &bytes,
        path: &adam_path,
    };
    if r.take(8)? != ADAM_MAGIC {
        return Err(HarnessError::corrupt(&adam_path, "not an optimizer state file"));
    }
    let t = r.u64()?;
    if t != state.adam_t {
        return Err(HarnessError::corrupt(&adam_path, "optimizer step count disagrees with the state sidecar"));
    }
    let m = r.params()?;
    let v = r.params()?;
    r.finish()?;
    if !m.same_shape(&online) || !v.same_shape(&online) {
        return Err(HarnessError::corrupt(&adam_path, "moment shapes do not match the configured network"));
    }

    let replay = load_replay(&settings.path("replay"))?;
    if replay.capacity() != settings.agent.replay_capacity {
        return Err(HarnessError::corrupt(
            settings.path("replay"),
            "replay capacity differs from the configuration",
        ));
    }

    agent.online.params = online;
    agent.target.params = target;
    agent.optimizer.state.t = t;
    agent.optimizer.state.m = m;
    agent.optimizer.state.v = v;
    agent.replay = replay;
    agent.env_steps = state.env_steps;
    agent.updates = state.updates;
    Ok(state)
}
