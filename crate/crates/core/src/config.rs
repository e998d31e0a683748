//! Line-oriented run configuration: `section.key = value`, `#` comments.
//!
//! Every key has a default, supplied by the preset named in `run.preset`
//! (`default` unless given). Joints are numbered 1 to 6 and convolution
//! layers 1 to 3. Vector values are comma-separated.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::dqn::{AgentConfig, EpsilonSchedule};
use crate::harness::{Environment, HarnessError, TrainSettings};
use crate::nn::{AdamConfig, ConvSpec, NetworkSpec};
use crate::render::{CameraSpec, SceneStyle};
use crate::sim::{KinematicChain, ResetMode, ResetSpec, NUM_JOINTS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Full-scale settings: six joints, 64×64 observations, the published
    /// learning constants.
    Default,
    /// Two controlled joints and 32×32 observations, sized to train on one
    /// CPU core in minutes.
    Desk,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "default" => Ok(Preset::Default),
            "desk" => Ok(Preset::Desk),
            _ => Err(format!("unknown preset `{s}` (expected default or desk)")),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Default => "default",
            Preset::Desk => "desk",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub preset: Preset,
    pub name: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub episodes: u64,
    pub checkpoint_every: u64,
    pub eval_episodes: usize,
    pub eval_epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub run: RunSection,
    pub chain: KinematicChain,
    pub task: ResetSpec,
    pub camera: CameraSpec,
    pub width: usize,
    pub height: usize,
    pub style: SceneStyle,
    pub convs: [ConvSpec; 3],
    pub hidden_units: usize,
    pub agent: AgentConfig,
    pub adam: AdamConfig,
    pub grad_norm_cap: Option<f64>,
    pub schedule: EpsilonSchedule,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Default)
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let net = NetworkSpec::default();
        let base = Self {
            run: RunSection {
                preset,
                name: "run".into(),
                seed: 1,
                output_dir: PathBuf::from("out"),
                episodes: 10_000,
                checkpoint_every: 100,
                eval_episodes: 50,
                eval_epsilon: 0.1,
            },
            chain: KinematicChain::default(),
            task: ResetSpec::default(),
            camera: CameraSpec::default(),
            width: net.input[2],
            height: net.input[1],
            style: SceneStyle::default(),
            convs: net.convs,
            hidden_units: net.hidden_units,
            agent: AgentConfig::default(),
            adam: AdamConfig::default(),
            grad_norm_cap: None,
            schedule: EpsilonSchedule::default(),
        };
        match preset {
            Preset::Default => base,
            Preset::Desk => desk(base),
        }
    }

    pub fn environment(&self) -> Environment {
        Environment {
            chain: self.chain.clone(),
            reset: self.task.clone(),
            camera: self.camera.clone(),
            style: self.style.clone(),
            width: self.width,
            height: self.height,
        }
    }

    pub fn network(&self) -> NetworkSpec {
        NetworkSpec {
            input: [1, self.height, self.width],
            convs: self.convs,
            hidden_units: self.hidden_units,
        }
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            run_name: self.run.name.clone(),
            output_dir: self.run.output_dir.clone(),
            seed: self.run.seed,
            episodes: self.run.episodes,
            checkpoint_every: self.run.checkpoint_every,
            env: self.environment(),
            network: self.network(),
            agent: self.agent,
            adam: self.adam,
            grad_norm_cap: self.grad_norm_cap,
            schedule: self.schedule,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: HarnessError| ConfigError::Invalid(e.to_string());
        self.train_settings().validate().map_err(invalid)?;
        if self.run.name.is_empty() || self.run.name.contains(['/', '\\']) {
            return Err(ConfigError::Invalid(format!(
                "run.name `{}` must be a non-empty file name",
                self.run.name
            )));
        }
        if self.run.eval_episodes == 0 {
            return Err(ConfigError::Invalid("run.eval_episodes must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.run.eval_epsilon) {
            return Err(ConfigError::Invalid(format!(
                "run.eval_epsilon {} must be in [0, 1]",
                self.run.eval_epsilon
            )));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: i + 1,
                message: format!("expected `section.key = value`, got `{line}`"),
            })?;
            lines.push((i + 1, key.trim(), value.trim()));
        }
        let mut preset = Preset::Default;
        for &(line, key, value) in &lines {
            if key == "run.preset" {
                preset = value.parse().map_err(|message| ConfigError::Parse { line, message })?;
            }
        }
        let mut cfg = Self::preset(preset);
        for (line, key, value) in lines {
            cfg.set(key, value)
                .map_err(|message| ConfigError::Parse { line, message: format!("{key}: {message}") })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Every key with its current value, in a form [`RunConfig::parse`]
    /// reads back to an equal configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = String::new();
        for (key, value) in self.entries() {
            let head = key.split('.').next().unwrap_or("");
            if head != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = head.to_string();
            }
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    fn entries(&self) -> Vec<(String, String)> {
        let mut e: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| e.push((k.to_string(), v));
        let r = &self.run;
        put("run.preset", r.preset.to_string());
        put("run.name", r.name.clone());
        put("run.seed", r.seed.to_string());
        put("run.output_dir", r.output_dir.display().to_string());
        put("run.episodes", r.episodes.to_string());
        put("run.checkpoint_every", r.checkpoint_every.to_string());
        put("run.eval_episodes", r.eval_episodes.to_string());
        put("run.eval_epsilon", float(r.eval_epsilon));

        put("chain.base_position", floats(&self.chain.base_position));
        put("chain.gripper_reach", float(self.chain.gripper_reach));
        for (k, link) in self.chain.links.iter().enumerate() {
            let j = k + 1;
            put(&format!("chain.joint{j}.axis"), floats(&link.axis));
            put(&format!("chain.joint{j}.length"), float(link.length));
            put(&format!("chain.joint{j}.min"), float(link.joint_min));
            put(&format!("chain.joint{j}.max"), float(link.joint_max));
        }

        let t = &self.task;
        put("task.mode", t.mode.to_string());
        put("task.base_joint_angles", floats(&t.base_joint_angles));
        put("task.joint_jitter", float(t.joint_jitter));
        put("task.cube_position", floats(&t.cube_base_position));
        put("task.cube_region_width", float(t.cube_region_width));
        put("task.cube_region_depth", float(t.cube_region_depth));
        put("task.cube_half_extent", float(t.cube_half_extent));
        put("task.lift_height", float(t.lift_height));
        put("task.max_episode_steps", t.max_episode_steps.to_string());
        put("task.grasp_radius", float(t.grasp_radius));
        put("task.reward_decay", float(t.reward_decay));
        let controlled: Vec<String> = (0..NUM_JOINTS)
            .filter(|&k| t.controlled_joints[k])
            .map(|k| (k + 1).to_string())
            .collect();
        put("task.controlled_joints", controlled.join(", "));

        let c = &self.camera;
        put("camera.view_direction", floats(&c.view_direction));
        put("camera.up", floats(&c.up));
        put("camera.center", floats(&c.center));
        put("camera.scale", float(c.scale));
        put("camera.width", self.width.to_string());
        put("camera.height", self.height.to_string());

        let s = &self.style;
        put("style.background", float(s.background));
        put("style.table", float(s.table));
        put("style.arm", float(s.arm));
        put("style.gripper_open", float(s.gripper_open));
        put("style.gripper_closed", float(s.gripper_closed));
        put("style.cube", float(s.cube));
        put("style.link_thickness", float(s.link_thickness));
        put("style.gripper_radius", float(s.gripper_radius));
        put("style.table_extent", floats(&s.table_extent));

        for (k, conv) in self.convs.iter().enumerate() {
            let l = k + 1;
            put(&format!("network.conv{l}.channels"), conv.out_channels.to_string());
            put(&format!("network.conv{l}.kernel"), conv.kernel.to_string());
            put(&format!("network.conv{l}.stride"), conv.stride.to_string());
        }
        put("network.hidden_units", self.hidden_units.to_string());

        let a = &self.agent;
        put("agent.discount", float(a.discount));
        put("agent.batch_size", a.batch_size.to_string());
        put("agent.target_sync_period", a.target_sync_period.to_string());
        put("agent.min_replay", a.min_replay_before_learning.to_string());
        put("agent.replay_capacity", a.replay_capacity.to_string());
        put("agent.train_every", a.train_every.to_string());
        put("agent.learning_rate", float(self.adam.learning_rate));
        put("agent.adam_beta1", float(self.adam.beta1));
        put("agent.adam_beta2", float(self.adam.beta2));
        put("agent.adam_epsilon", float(self.adam.epsilon));
        put(
            "agent.grad_norm_cap",
            self.grad_norm_cap.map_or_else(|| "none".to_string(), float),
        );

        put("schedule.epsilon_start", float(self.schedule.start));
        put("schedule.epsilon_end", float(self.schedule.end));
        put("schedule.anneal_span", self.schedule.anneal_span.to_string());
        e
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        if let Some(rest) = key.strip_prefix("chain.joint") {
            let (idx, field) = rest.split_once('.').ok_or("unknown key")?;
            let link = &mut self.chain.links[index(idx, NUM_JOINTS)?];
            return match field {
                "axis" => vector(v).map(|x| link.axis = x),
                "length" => num(v).map(|x| link.length = x),
                "min" => num(v).map(|x| link.joint_min = x),
                "max" => num(v).map(|x| link.joint_max = x),
                _ => Err("unknown key".into()),
            };
        }
        if let Some(rest) = key.strip_prefix("network.conv") {
            let (idx, field) = rest.split_once('.').ok_or("unknown key")?;
            let conv = &mut self.convs[index(idx, 3)?];
            return match field {
                "channels" => num(v).map(|x| conv.out_channels = x),
                "kernel" => num(v).map(|x| conv.kernel = x),
                "stride" => num(v).map(|x| conv.stride = x),
                _ => Err("unknown key".into()),
            };
        }
        match key {
            "run.preset" => Ok(()),
            "run.name" => {
                self.run.name = v.to_string();
                Ok(())
            }
            "run.seed" => num(v).map(|x| self.run.seed = x),
            "run.output_dir" => {
                self.run.output_dir = PathBuf::from(v);
                Ok(())
            }
            "run.episodes" => num(v).map(|x| self.run.episodes = x),
            "run.checkpoint_every" => num(v).map(|x| self.run.checkpoint_every = x),
            "run.eval_episodes" => num(v).map(|x| self.run.eval_episodes = x),
            "run.eval_epsilon" => num(v).map(|x| self.run.eval_epsilon = x),

            "chain.base_position" => vector(v).map(|x| self.chain.base_position = x),
            "chain.gripper_reach" => num(v).map(|x| self.chain.gripper_reach = x),

            "task.mode" => v.parse::<ResetMode>().map(|x| self.task.mode = x).map_err(|e| e.to_string()),
            "task.base_joint_angles" => vector(v).map(|x| self.task.base_joint_angles = x),
            "task.joint_jitter" => num(v).map(|x| self.task.joint_jitter = x),
            "task.cube_position" => vector(v).map(|x| self.task.cube_base_position = x),
            "task.cube_region_width" => num(v).map(|x| self.task.cube_region_width = x),
            "task.cube_region_depth" => num(v).map(|x| self.task.cube_region_depth = x),
            "task.cube_half_extent" => num(v).map(|x| self.task.cube_half_extent = x),
            "task.lift_height" => num(v).map(|x| self.task.lift_height = x),
            "task.max_episode_steps" => num(v).map(|x| self.task.max_episode_steps = x),
            "task.grasp_radius" => num(v).map(|x| self.task.grasp_radius = x),
            "task.reward_decay" => num(v).map(|x| self.task.reward_decay = x),
            "task.controlled_joints" => {
                let mut mask = [false; NUM_JOINTS];
                for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    mask[index(item, NUM_JOINTS)?] = true;
                }
                self.task.controlled_joints = mask;
                Ok(())
            }

            "camera.view_direction" => vector(v).map(|x| self.camera.view_direction = x),
            "camera.up" => vector(v).map(|x| self.camera.up = x),
            "camera.center" => vector(v).map(|x| self.camera.center = x),
            "camera.scale" => num(v).map(|x| self.camera.scale = x),
            "camera.width" => num(v).map(|x| self.width = x),
            "camera.height" => num(v).map(|x| self.height = x),

            "style.background" => num(v).map(|x| self.style.background = x),
            "style.table" => num(v).map(|x| self.style.table = x),
            "style.arm" => num(v).map(|x| self.style.arm = x),
            "style.gripper_open" => num(v).map(|x| self.style.gripper_open = x),
            "style.gripper_closed" => num(v).map(|x| self.style.gripper_closed = x),
            "style.cube" => num(v).map(|x| self.style.cube = x),
            "style.link_thickness" => num(v).map(|x| self.style.link_thickness = x),
            "style.gripper_radius" => num(v).map(|x| self.style.gripper_radius = x),
            "style.table_extent" => vector(v).map(|x| self.style.table_extent = x),

            "network.hidden_units" => num(v).map(|x| self.hidden_units = x),

            "agent.discount" => num(v).map(|x| self.agent.discount = x),
            "agent.batch_size" => num(v).map(|x| self.agent.batch_size = x),
            "agent.target_sync_period" => num(v).map(|x| self.agent.target_sync_period = x),
            "agent.min_replay" => num(v).map(|x| self.agent.min_replay_before_learning = x),
            "agent.replay_capacity" => num(v).map(|x| self.agent.replay_capacity = x),
            "agent.train_every" => num(v).map(|x| self.agent.train_every = x),
            "agent.learning_rate" => num(v).map(|x| self.adam.learning_rate = x),
            "agent.adam_beta1" => num(v).map(|x| self.adam.beta1 = x),
            "agent.adam_beta2" => num(v).map(|x| self.adam.beta2 = x),
            "agent.adam_epsilon" => num(v).map(|x| self.adam.epsilon = x),
            "agent.grad_norm_cap" => {
                self.grad_norm_cap = if v == "none" { None } else { Some(num(v)?) };
                Ok(())
            }

            "schedule.epsilon_start" => num(v).map(|x| self.schedule.start = x),
            "schedule.epsilon_end" => num(v).map(|x| self.schedule.end = x),
            "schedule.anneal_span" => num(v).map(|x| self.schedule.anneal_span = x),
            _ => Err("unknown key".into()),
        }
    }
}

/// Two controlled joints, a fixed start and 32x32 frames, tuned so one seed
/// trains to a reliable grasp-and-lift in minutes. The lower discount keeps
/// hovering with the cube worth less than finishing, and the tighter camera
/// makes each 1 degree lift step visible as about one pixel.
fn desk(mut cfg: RunConfig) -> RunConfig {
    cfg.run.name = "desk".into();
    cfg.run.seed = 1;
    cfg.run.episodes = 1200;
    cfg.task.controlled_joints = [false, true, true, false, false, false];
    cfg.task.max_episode_steps = 100;
    cfg.task.lift_height = 0.10;
    cfg.task.reward_decay = 10.0;
    cfg.camera.center = [0.5, 0.08, 0.0];
    cfg.camera.scale = 128.0;
    cfg.width = 32;
    cfg.height = 32;
    let conv = |out_channels, kernel| ConvSpec {
        out_channels,
        kernel,
        stride: 1,
    };
    cfg.convs = [conv(8, 5), conv(16, 3), conv(16, 3)];
    cfg.hidden_units = 64;
    cfg.agent = AgentConfig {
        discount: 0.9,
        batch_size: 32,
        target_sync_period: 500,
        min_replay_before_learning: 1000,
        replay_capacity: 50_000,
        train_every: 4,
    };
    cfg.adam.learning_rate = 1e-3;
    cfg.grad_norm_cap = Some(10.0);
    cfg.schedule.anneal_span = 20_000;
    cfg
}

fn float(x: f64) -> String {
    format!("{x:?}")
}

fn floats(xs: &[f64]) -> String {
    xs.iter().map(|&x| float(x)).collect::<Vec<_>>().join(", ")
}

fn num<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn vector<const N: usize>(v: &str) -> Result<[f64; N], String> {
    let items: Vec<f64> = v.split(',').map(|s| num(s.trim())).collect::<Result<_, _>>()?;
    items
        .try_into()
        .map_err(|items: Vec<f64>| format!("expected {N} comma-separated values, got {}", items.len()))
}

/// Parses a 1-based index into a 0-based one.
fn index(s: &str, count: usize) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(i) if (1..=count).contains(&i) => Ok(i - 1),
        _ => Err(format!("index `{s}` outside 1..={count}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_valid_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.agent.discount, 0.99);
        assert_eq!(cfg.adam.learning_rate, 6e-6);
        assert_eq!(cfg.agent.replay_capacity, 500_000);
        assert_eq!(cfg.task.reward_decay, 0.25);
        assert_eq!(cfg.task.lift_height, 0.30);
        assert_eq!(cfg.task.max_episode_steps, 1000);
        assert_eq!(cfg.task.joint_jitter, 20.0);
    }

    #[test]
    fn bad_discount_names_field() {
        let err = RunConfig::parse("agent.discount = 1.5").unwrap_err();
        assert!(err.to_string().contains("discount"), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = RunConfig::parse("# comment\n\nagent.bogus = 3\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 3, .. }), "{err}");
        let err = RunConfig::parse("run.seed 4\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 1, .. }), "{err}");
        let err = RunConfig::parse("task.cube_position = 1, 2\n").unwrap_err();
        assert!(err.to_string().contains("3 comma-separated"), "{err}");
    }

    #[test]
    fn round_trip_both_presets() {
        for preset in [Preset::Default, Preset::Desk] {
            let mut cfg = RunConfig::preset(preset);
            cfg.grad_norm_cap = Some(10.0);
            cfg.adam.learning_rate = 0.1 + 0.2;
            cfg.task.mode = ResetMode::Randomized;
            let text = cfg.to_text();
            assert_eq!(RunConfig::parse(&text).unwrap(), cfg, "{text}");
        }
    }

    #[test]
    fn preset_then_override() {
        let cfg = RunConfig::parse("run.seed = 9\nrun.preset = desk\n").unwrap();
        assert_eq!(cfg.run.preset, Preset::Desk);
        assert_eq!(cfg.run.seed, 9);
        assert_eq!(cfg.width, 32);
        assert_eq!(cfg.task.controlled_joints, [false, true, true, false, false, false]);
    }
}
