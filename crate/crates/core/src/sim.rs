//! Deterministic kinematic simulation of a six-joint arm with a binary
//! gripper and a graspable cube resting on a table.
//!
//! World geometry is in meters with `y` pointing up; the table surface is the
//! plane `y = 0`. Joint angles are in degrees. Every operation is a pure
//! function of its inputs: a [`WorldState`] goes in, a new one comes out.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::geom::{self, Mat3, Vec3};

pub const NUM_JOINTS: usize = 6;
pub const NUM_ACTIONS: usize = 2 * NUM_JOINTS + 2;

/// Reward paid on the step that completes the task.
pub const SUCCESS_REWARD: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("action id {0} out of range 0..{NUM_ACTIONS}")]
    InvalidAction(u32),
    #[error("episode already finished (step {step_count} of {max_steps}, succeeded: {succeeded})")]
    EpisodeFinished {
        step_count: u32,
        max_steps: u32,
        succeeded: bool,
    },
    #[error("invalid kinematic chain: {0}")]
    InvalidChain(String),
    #[error("invalid reset spec: {0}")]
    InvalidSpec(String),
    #[error("malformed world record: {0}")]
    Record(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    /// Unit rotation axis expressed in the parent link's frame.
    pub axis: Vec3,
    pub length: f64,
    pub joint_min: f64,
    pub joint_max: f64,
}

/// Six revolute joints in series. At zero angles every link extends along
/// the parent frame's `+x` direction.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    pub links: [Link; NUM_JOINTS],
    pub base_position: Vec3,
    /// Offset from the last link's end to the grasp point, along the last
    /// link's direction.
    pub gripper_reach: f64,
}

impl Default for KinematicChain {
    /// Base yaw, shoulder pitch, elbow pitch, forearm roll, wrist pitch,
    /// wrist roll.
    fn default() -> Self {
        const X: Vec3 = [1.0, 0.0, 0.0];
        const Y: Vec3 = [0.0, 1.0, 0.0];
        const Z: Vec3 = [0.0, 0.0, 1.0];
        let link = |axis, length, joint_min, joint_max| Link {
            axis,
            length,
            joint_min,
            joint_max,
        };
        Self {
            links: [
                link(Y, 0.05, -90.0, 90.0),
                link(Z, 0.40, -30.0, 120.0),
                link(Z, 0.35, -150.0, 150.0),
                link(X, 0.05, -180.0, 180.0),
                link(Z, 0.10, -120.0, 120.0),
                link(X, 0.05, -180.0, 180.0),
            ],
            base_position: [0.0, 0.10, 0.0],
            gripper_reach: 0.05,
        }
    }
}

impl KinematicChain {
    pub fn validate(&self) -> Result<(), SimError> {
        for (k, link) in self.links.iter().enumerate() {
            let n = geom::norm(link.axis);
            if !((n - 1.0).abs() <= 1e-9) {
                return Err(SimError::InvalidChain(format!(
                    "link {k} axis has norm {n}, expected 1"
                )));
            }
            if !(link.length > 0.0) {
                return Err(SimError::InvalidChain(format!(
                    "link {k} length {} must be positive",
                    link.length
                )));
            }
            if !(link.joint_min < link.joint_max) {
                return Err(SimError::InvalidChain(format!(
                    "link {k} joint_min {} must be below joint_max {}",
                    link.joint_min, link.joint_max
                )));
            }
        }
        if !(self.gripper_reach >= 0.0) {
            return Err(SimError::InvalidChain(format!(
                "gripper_reach {} must be non-negative",
                self.gripper_reach
            )));
        }
        if self.base_position.iter().any(|v| !v.is_finite()) {
            return Err(SimError::InvalidChain("base_position must be finite".into()));
        }
        Ok(())
    }

    pub fn clamp_angle(&self, joint: usize, degrees: f64) -> f64 {
        let link = &self.links[joint];
        degrees.clamp(link.joint_min, link.joint_max)
    }
}

/// Output of [`forward_kinematics`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmPose {
    /// Base position followed by the end of each link.
    pub segment_endpoints: [Vec3; NUM_JOINTS + 1],
    pub gripper_point: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmState {
    pub joint_angles: [f64; NUM_JOINTS],
    pub gripper_closed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubeState {
    /// Reference point on the cube's bottom face; `y` is its height above
    /// the table.
    pub position: Vec3,
    pub half_extent: f64,
    pub grasped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldState {
    pub arm: ArmState,
    pub cube: CubeState,
    pub step_count: u32,
    pub succeeded: bool,
}

/// One of the fourteen discrete controls.
///
/// `2k` turns joint `k` by +1°, `2k + 1` turns it by −1°, 12 opens the
/// gripper and 13 closes it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action(u8);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionKind {
    Joint { joint: usize, delta: f64 },
    OpenGripper,
    CloseGripper,
}

impl Action {
    pub const OPEN: Action = Action(12);
    pub const CLOSE: Action = Action(13);

    pub fn new(id: u32) -> Result<Self, SimError> {
        if (id as usize) < NUM_ACTIONS {
            Ok(Action(id as u8))
        } else {
            Err(SimError::InvalidAction(id))
        }
    }

    pub fn joint(joint: usize, positive: bool) -> Self {
        assert!(joint < NUM_JOINTS, "joint index {joint} out of range");
        Action((2 * joint + usize::from(!positive)) as u8)
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn kind(self) -> ActionKind {
        match self.0 {
            12 => ActionKind::OpenGripper,
            13 => ActionKind::CloseGripper,
            id => ActionKind::Joint {
                joint: (id / 2) as usize,
                delta: if id % 2 == 0 { 1.0 } else { -1.0 },
            },
        }
    }

    pub fn all() -> impl Iterator<Item = Action> {
        (0..NUM_ACTIONS as u8).map(Action)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind() {
            ActionKind::Joint { joint, delta } if delta > 0.0 => write!(f, "joint{joint}+"),
            ActionKind::Joint { joint, .. } => write!(f, "joint{joint}-"),
            ActionKind::OpenGripper => f.write_str("open"),
            ActionKind::CloseGripper => f.write_str("close"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResetMode {
    Fixed,
    Randomized,
}

impl FromStr for ResetMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(ResetMode::Fixed),
            "randomized" => Ok(ResetMode::Randomized),
            other => Err(format!("unknown reset mode `{other}` (expected fixed|randomized)")),
        }
    }
}

impl fmt::Display for ResetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResetMode::Fixed => "fixed",
            ResetMode::Randomized => "randomized",
        })
    }
}

/// Episode setup and task parameters: how the world is reset, when the task
/// counts as complete, and the constants of the shaped reward.
#[derive(Debug, Clone, PartialEq)]
pub struct ResetSpec {
    pub mode: ResetMode,
    pub base_joint_angles: [f64; NUM_JOINTS],
    /// Half-width of the uniform perturbation applied to each joint in
    /// randomized mode, degrees.
    pub joint_jitter: f64,
    pub cube_base_position: Vec3,
    /// Extent of the cube placement rectangle along `x`, centered on
    /// `cube_base_position`.
    pub cube_region_width: f64,
    /// Extent of the cube placement rectangle along `z`.
    pub cube_region_depth: f64,
    pub cube_half_extent: f64,
    pub lift_height: f64,
    pub max_episode_steps: u32,
    pub grasp_radius: f64,
    pub reward_decay: f64,
    /// Joints whose actions have an effect; actions on the others are
    /// no-ops.
    pub controlled_joints: [bool; NUM_JOINTS],
}

impl Default for ResetSpec {
    fn default() -> Self {
        let side = 0.02_f64.sqrt();
        Self {
            mode: ResetMode::Fixed,
            base_joint_angles: [0.0, 70.0, -95.0, 0.0, -65.0, 0.0],
            joint_jitter: 20.0,
            cube_base_position: [0.55, 0.0, 0.0],
            cube_region_width: side,
            cube_region_depth: side,
            cube_half_extent: 0.02,
            lift_height: 0.30,
            max_episode_steps: 1000,
            grasp_radius: 0.03,
            reward_decay: 0.25,
            controlled_joints: [true; NUM_JOINTS],
        }
    }
}

impl ResetSpec {
    pub fn validate(&self, chain: &KinematicChain) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidSpec(msg));
        if !(self.joint_jitter >= 0.0) {
            return bad(format!("joint_jitter {} must be >= 0", self.joint_jitter));
        }
        if self.mode == ResetMode::Randomized
            && !(self.cube_region_width > 0.0 && self.cube_region_depth > 0.0)
        {
            return bad("cube region must have positive area in randomized mode".into());
        }
        if !(self.cube_region_width >= 0.0 && self.cube_region_depth >= 0.0) {
            return bad("cube region extents must be non-negative".into());
        }
        if !(self.lift_height > 0.0) {
            return bad(format!("lift_height {} must be > 0", self.lift_height));
        }
        if self.max_episode_steps == 0 {
            return bad("max_episode_steps must be >= 1".into());
        }
        if !(self.grasp_radius >= 0.0) {
            return bad(format!("grasp_radius {} must be >= 0", self.grasp_radius));
        }
        if !(self.reward_decay >= 0.0 && self.reward_decay.is_finite()) {
            return bad(format!("reward_decay {} must be >= 0", self.reward_decay));
        }
        if !(self.cube_half_extent > 0.0) {
            return bad(format!("cube_half_extent {} must be > 0", self.cube_half_extent));
        }
        if !(self.cube_base_position[1] == 0.0) {
            return bad("cube_base_position must lie on the table (y = 0)".into());
        }
        for (k, (&angle, link)) in self.base_joint_angles.iter().zip(&chain.links).enumerate() {
            if !(link.joint_min <= angle && angle <= link.joint_max) {
                return bad(format!(
                    "base joint {k} angle {angle} outside [{}, {}]",
                    link.joint_min, link.joint_max
                ));
            }
        }
        let arm = ArmState {
            joint_angles: self.base_joint_angles,
            gripper_closed: false,
        };
        let y = forward_kinematics(chain, &arm).gripper_point[1];
        if y < 0.0 {
            return bad(format!("base pose puts the gripper below the table (y = {y})"));
        }
        Ok(())
    }
}

/// Outcome classification of a world state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Continue,
    Success,
    Timeout,
}

impl Status {
    pub fn is_done(self) -> bool {
        self != Status::Continue
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub next: WorldState,
    pub reward: f64,
    pub status: Status,
}

fn link_rotations(chain: &KinematicChain, arm: &ArmState) -> [Mat3; NUM_JOINTS] {
    let mut frames = [geom::IDENTITY; NUM_JOINTS];
    let mut frame = geom::IDENTITY;
    for (k, link) in chain.links.iter().enumerate() {
        let local = geom::axis_angle(link.axis, arm.joint_angles[k].to_radians());
        frame = geom::mat_mul(&frame, &local);
        frames[k] = frame;
    }
    frames
}

pub fn forward_kinematics(chain: &KinematicChain, arm: &ArmState) -> ArmPose {
    let frames = link_rotations(chain, arm);
    let mut endpoints = [chain.base_position; NUM_JOINTS + 1];
    let mut tip = chain.base_position;
    for (k, link) in chain.links.iter().enumerate() {
        let dir = geom::mat_vec(&frames[k], [1.0, 0.0, 0.0]);
        tip = geom::add(tip, geom::scale(dir, link.length));
        endpoints[k + 1] = tip;
    }
    let last_dir = geom::mat_vec(&frames[NUM_JOINTS - 1], [1.0, 0.0, 0.0]);
    ArmPose {
        segment_endpoints: endpoints,
        gripper_point: geom::add(tip, geom::scale(last_dir, chain.gripper_reach)),
    }
}

pub fn gripper_point(chain: &KinematicChain, arm: &ArmState) -> Vec3 {
    forward_kinematics(chain, arm).gripper_point
}

/// Whether closing the gripper in `world` would capture the cube: the grasp
/// point lies within `grasp_radius` of the cube (boundary inclusive) and the
/// cube is not already held.
pub fn grasp_check(world: &WorldState, chain: &KinematicChain, spec: &ResetSpec) -> bool {
    !world.cube.grasped
        && geom::distance(gripper_point(chain, &world.arm), world.cube.position) <= spec.grasp_radius
}

/// Pushes the cube horizontally out from under an open gripper that has
/// moved into its volume from outside the grasp sphere.
fn knock_cube(cube: &mut CubeState, grip: Vec3, grasp_radius: f64) {
    let h = cube.half_extent;
    let rel = geom::sub(cube.position, grip);
    let inside = rel[0].abs() < h && rel[2].abs() < h && grip[1] >= cube.position[1]
        && grip[1] < cube.position[1] + 2.0 * h;
    if !inside || geom::norm(rel) <= grasp_radius {
        return;
    }
    let horizontal = (rel[0] * rel[0] + rel[2] * rel[2]).sqrt();
    if horizontal == 0.0 {
        return;
    }
    let ux = rel[0] / horizontal;
    let uz = rel[2] / horizontal;
    let mut travel = f64::INFINITY;
    if ux != 0.0 {
        travel = travel.min((h - rel[0].abs()) / ux.abs());
    }
    if uz != 0.0 {
        travel = travel.min((h - rel[2].abs()) / uz.abs());
    }
    cube.position[0] += ux * travel;
    cube.position[2] += uz * travel;
}

pub fn apply_action(
    world: &WorldState,
    chain: &KinematicChain,
    action: Action,
    spec: &ResetSpec,
) -> Result<WorldState, SimError> {
    if world.succeeded || world.step_count >= spec.max_episode_steps {
        return Err(SimError::EpisodeFinished {
            step_count: world.step_count,
            max_steps: spec.max_episode_steps,
            succeeded: world.succeeded,
        });
    }
    let mut next = *world;
    match action.kind() {
        ActionKind::Joint { joint, delta } => {
            if spec.controlled_joints[joint] {
                let mut arm = next.arm;
                arm.joint_angles[joint] = chain.clamp_angle(joint, arm.joint_angles[joint] + delta);
                let grip = gripper_point(chain, &arm);
                // The grasp point cannot pass through the table.
                if grip[1] >= 0.0 {
                    next.arm = arm;
                    if next.cube.grasped {
                        next.cube.position = grip;
                    } else if !next.arm.gripper_closed {
                        knock_cube(&mut next.cube, grip, spec.grasp_radius);
                    }
                }
            }
        }
        ActionKind::OpenGripper => {
            next.arm.gripper_closed = false;
            if next.cube.grasped {
                next.cube.grasped = false;
                next.cube.position[1] = 0.0;
            }
        }
        ActionKind::CloseGripper => {
            if !next.arm.gripper_closed {
                next.arm.gripper_closed = true;
                if grasp_check(&next, chain, spec) {
                    next.cube.grasped = true;
                    next.cube.position = gripper_point(chain, &next.arm);
                }
            }
        }
    }
    next.step_count += 1;
    if next.cube.grasped && next.cube.position[1] >= spec.lift_height {
        next.succeeded = true;
    }
    Ok(next)
}

/// Shaped reward: 100 on success, `1 + height` while holding the cube, and
/// `exp(-decay * distance)` otherwise.
pub fn compute_reward(world: &WorldState, chain: &KinematicChain, spec: &ResetSpec) -> f64 {
    if world.succeeded {
        SUCCESS_REWARD
    } else if world.cube.grasped {
        1.0 + world.cube.position[1]
    } else {
        let d = geom::distance(gripper_point(chain, &world.arm), world.cube.position);
        (-spec.reward_decay * d).exp()
    }
}

pub fn is_terminal(world: &WorldState, spec: &ResetSpec) -> Status {
    if world.succeeded {
        Status::Success
    } else if world.step_count >= spec.max_episode_steps {
        Status::Timeout
    } else {
        Status::Continue
    }
}

pub fn reset<R: Rng + ?Sized>(spec: &ResetSpec, chain: &KinematicChain, rng: &mut R) -> WorldState {
    let mut joint_angles = spec.base_joint_angles;
    let mut cube_position = spec.cube_base_position;
    if spec.mode == ResetMode::Randomized {
        // Redraw poses that would start the grasp point under the table; the
        // base pose is the fallback.
        for _ in 0..64 {
            let mut candidate = spec.base_joint_angles;
            for (k, angle) in candidate.iter_mut().enumerate() {
                let jitter = if spec.joint_jitter > 0.0 {
                    rng.random_range(-spec.joint_jitter..=spec.joint_jitter)
                } else {
                    0.0
                };
                *angle = chain.clamp_angle(k, *angle + jitter);
            }
            let arm = ArmState {
                joint_angles: candidate,
                gripper_closed: false,
            };
            if gripper_point(chain, &arm)[1] >= 0.0 {
                joint_angles = candidate;
                break;
            }
        }
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        cube_position[0] += (u - 0.5) * spec.cube_region_width;
        cube_position[2] += (v - 0.5) * spec.cube_region_depth;
        cube_position[1] = 0.0;
    }
    WorldState {
        arm: ArmState {
            joint_angles,
            gripper_closed: false,
        },
        cube: CubeState {
            position: cube_position,
            half_extent: spec.cube_half_extent,
            grasped: false,
        },
        step_count: 0,
        succeeded: false,
    }
}

/// Applies one action, then scores and classifies the resulting state.
pub fn step(
    world: &WorldState,
    chain: &KinematicChain,
    action: Action,
    spec: &ResetSpec,
) -> Result<StepResult, SimError> {
    let next = apply_action(world, chain, action, spec)?;
    let reward = compute_reward(&next, chain, spec);
    let status = is_terminal(&next, spec);
    Ok(StepResult {
        next,
        reward,
        status,
    })
}

impl WorldState {
    /// Flat `key=value` lines, one field per line.
    pub fn to_record(&self) -> String {
        let mut out = String::new();
        for (k, a) in self.arm.joint_angles.iter().enumerate() {
            out.push_str(&format!("joint{k}={a:?}\n"));
        }
        out.push_str(&format!("gripper_closed={}\n", self.arm.gripper_closed));
        let [x, y, z] = self.cube.position;
        out.push_str(&format!("cube_x={x:?}\ncube_y={y:?}\ncube_z={z:?}\n"));
        out.push_str(&format!("cube_half_extent={:?}\n", self.cube.half_extent));
        out.push_str(&format!("cube_grasped={}\n", self.cube.grasped));
        out.push_str(&format!("step_count={}\n", self.step_count));
        out.push_str(&format!("succeeded={}\n", self.succeeded));
        out
    }

    pub fn from_record(text: &str) -> Result<Self, SimError> {
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| SimError::Record(format!("line `{line}` has no `=`")))?;
            fields.insert(key.trim().to_string(), value.trim().to_string());
        }
        fn get<T: FromStr>(
            fields: &std::collections::HashMap<String, String>,
            key: &str,
        ) -> Result<T, SimError> {
            let raw = fields
                .get(key)
                .ok_or_else(|| SimError::Record(format!("missing key `{key}`")))?;
            raw.parse()
                .map_err(|_| SimError::Record(format!("bad value `{raw}` for `{key}`")))
        }
        let mut joint_angles = [0.0; NUM_JOINTS];
        for (k, a) in joint_angles.iter_mut().enumerate() {
            *a = get(&fields, &format!("joint{k}"))?;
        }
        Ok(WorldState {
            arm: ArmState {
                joint_angles,
                gripper_closed: get(&fields, "gripper_closed")?,
            },
            cube: CubeState {
                position: [
                    get(&fields, "cube_x")?,
                    get(&fields, "cube_y")?,
                    get(&fields, "cube_z")?,
                ],
                half_extent: get(&fields, "cube_half_extent")?,
                grasped: get(&fields, "cube_grasped")?,
            },
            step_count: get(&fields, "step_count")?,
            succeeded: get(&fields, "succeeded")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const Z: Vec3 = [0.0, 0.0, 1.0];

    fn planar_chain(lengths: [f64; NUM_JOINTS]) -> KinematicChain {
        let mut links = KinematicChain::default().links;
        for (link, &len) in links.iter_mut().zip(&lengths) {
            *link = Link {
                axis: Z,
                length: len,
                joint_min: -180.0,
                joint_max: 180.0,
            };
        }
        KinematicChain {
            links,
            base_position: [0.0, 0.0, 0.0],
            gripper_reach: 0.0,
        }
    }

    /// A single long horizontal link pivoting at the table surface, with the
    /// cube sitting at its tip.
    fn lever_setup() -> (KinematicChain, ResetSpec, WorldState) {
        let mut chain = planar_chain([0.56, 0.01, 0.01, 0.01, 0.01, 0.01]);
        chain.links[0].joint_min = 0.0;
        chain.links[0].joint_max = 90.0;
        let spec = ResetSpec {
            base_joint_angles: [0.0; NUM_JOINTS],
            cube_base_position: [0.61, 0.0, 0.0],
            ..ResetSpec::default()
        };
        let world = reset(&spec, &chain, &mut ChaCha8Rng::seed_from_u64(0));
        (chain, spec, world)
    }

    #[test]
    fn zero_angles_stack_links_along_reference_direction() {
        let lengths = [0.1, 0.2, 0.3, 0.05, 0.15, 0.25];
        let chain = planar_chain(lengths);
        let arm = ArmState {
            joint_angles: [0.0; NUM_JOINTS],
            gripper_closed: false,
        };
        let pose = forward_kinematics(&chain, &arm);
        let mut acc = 0.0;
        for (k, len) in lengths.iter().enumerate() {
            acc += len;
            assert_eq!(pose.segment_endpoints[k + 1], [acc, 0.0, 0.0]);
        }
    }

    #[test]
    fn planar_quarter_turn_matches_trigonometry() {
        let chain = KinematicChain {
            gripper_reach: 0.05,
            ..planar_chain([0.1; NUM_JOINTS])
        };
        let arm = ArmState {
            joint_angles: [90.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            gripper_closed: false,
        };
        let reach = 6.0 * 0.1 + 0.05;
        let theta = std::f64::consts::FRAC_PI_2;
        let expected = [reach * theta.cos(), reach * theta.sin(), 0.0];
        let got = gripper_point(&chain, &arm);
        assert!(geom::distance(got, expected) < 1e-12, "{got:?}");
    }

    #[test]
    fn opposite_joint_turns_cancel() {
        let chain = KinematicChain::default();
        let spec = ResetSpec::default();
        let world = reset(&spec, &chain, &mut ChaCha8Rng::seed_from_u64(1));
        let there = apply_action(&world, &chain, Action::joint(0, true), &spec).unwrap();
        let back = apply_action(&there, &chain, Action::joint(0, false), &spec).unwrap();
        let a = gripper_point(&chain, &world.arm);
        let b = gripper_point(&chain, &back.arm);
        assert!(geom::distance(a, b) < 1e-12);
        assert_eq!(back.step_count, 2);
    }

    #[test]
    fn joint_at_limit_is_clamped() {
        let chain = KinematicChain::default();
        let spec = ResetSpec::default();
        let mut world = reset(&spec, &chain, &mut ChaCha8Rng::seed_from_u64(0));
        world.arm.joint_angles[0] = chain.links[0].joint_max;
        let next = apply_action(&world, &chain, Action::new(0).unwrap(), &spec).unwrap();
        assert_eq!(next.arm.joint_angles[0], chain.links[0].joint_max);
        assert_eq!(next.step_count, 1);
    }

    #[test]
    fn out_of_range_action_rejected() {
        assert_eq!(Action::new(14), Err(SimError::InvalidAction(14)));
        assert!(Action::new(13).is_ok());
    }

    #[test]
    fn action_mapping_covers_fourteen_controls() {
        let kinds: Vec<_> = Action::all().map(Action::kind).collect();
        assert_eq!(kinds.len(), 14);
        assert_eq!(kinds[4], ActionKind::Joint { joint: 2, delta: 1.0 });
        assert_eq!(kinds[5], ActionKind::Joint { joint: 2, delta: -1.0 });
        assert_eq!(kinds[12], ActionKind::OpenGripper);
        assert_eq!(kinds[13], ActionKind::CloseGripper);
    }

    #[test]
    fn grasp_then_thirty_lifts_succeeds() {
        let (chain, spec, world) = lever_setup();
        let mut w = apply_action(&world, &chain, Action::CLOSE, &spec).unwrap();
        assert!(w.cube.grasped);
        for i in 0..30 {
            assert!(!w.succeeded, "succeeded early at lift {i}");
            w = apply_action(&w, &chain, Action::joint(0, true), &spec).unwrap();
        }
        assert!(w.cube.position[1] >= 0.30);
        assert!(w.succeeded);
        assert_eq!(is_terminal(&w, &spec), Status::Success);
        assert_eq!(compute_reward(&w, &chain, &spec), 100.0);
    }

    #[test]
    fn opening_drops_held_cube_to_table() {
        let (chain, spec, world) = lever_setup();
        let mut w = apply_action(&world, &chain, Action::CLOSE, &spec).unwrap();
        // 0.61 * sin(20°) is ~0.209 m.
        for _ in 0..20 {
            w = apply_action(&w, &chain, Action::joint(0, true), &spec).unwrap();
        }
        let held_y = w.cube.position[1];
        assert!(held_y > 0.2 && held_y < 0.21, "{held_y}");
        let dropped = apply_action(&w, &chain, Action::OPEN, &spec).unwrap();
        assert!(!dropped.cube.grasped);
        assert_eq!(dropped.cube.position[1], 0.0);
        assert_eq!(dropped.cube.position[0], w.cube.position[0]);
        assert_eq!(dropped.cube.position[2], w.cube.position[2]);
    }

    #[test]
    fn grasp_radius_boundary_is_inclusive() {
        let (chain, spec, mut world) = lever_setup();
        let grip = gripper_point(&chain, &world.arm);
        world.cube.position = grip;
        assert!(grasp_check(&world, &chain, &spec));
        // Offsets along z keep the subtraction exact: the distance is exactly
        // the offset.
        world.cube.position = [grip[0], grip[1], 0.03];
        assert!(grasp_check(&world, &chain, &spec));
        world.cube.position = [grip[0], grip[1], 0.05];
        assert!(!grasp_check(&world, &chain, &spec));
        world.cube.position = grip;
        world.cube.grasped = true;
        assert!(!grasp_check(&world, &chain, &spec));
    }

    #[test]
    fn closing_twice_does_not_regrasp() {
        let (chain, spec, mut world) = lever_setup();
        world.cube.position = [5.0, 0.0, 0.0];
        let closed = apply_action(&world, &chain, Action::CLOSE, &spec).unwrap();
        assert!(!closed.cube.grasped);
        let mut moved = closed;
        moved.cube.position = gripper_point(&chain, &moved.arm);
        let again = apply_action(&moved, &chain, Action::CLOSE, &spec).unwrap();
        assert!(!again.cube.grasped);
    }

    #[test]
    fn reward_cases() {
        let (chain, spec, mut world) = lever_setup();
        world.succeeded = true;
        world.cube.grasped = true;
        assert_eq!(compute_reward(&world, &chain, &spec), 100.0);
        world.succeeded = false;
        world.cube.position = [0.0, 0.12, 0.0];
        assert!((compute_reward(&world, &chain, &spec) - 1.12).abs() < 1e-12);
        world.cube.grasped = false;
        world.cube.position = gripper_point(&chain, &world.arm);
        assert_eq!(compute_reward(&world, &chain, &spec), 1.0);
        let grip = gripper_point(&chain, &world.arm);
        world.cube.position = [grip[0], grip[1], 4.0];
        let expected = 0.367_879_441_171_442_3; // e^-1
        assert!((compute_reward(&world, &chain, &spec) - expected).abs() < 1e-12);
    }

    #[test]
    fn terminal_classification() {
        let spec = ResetSpec::default();
        let chain = KinematicChain::default();
        let mut world = reset(&spec, &chain, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(is_terminal(&world, &spec), Status::Continue);
        world.step_count = 1000;
        assert_eq!(is_terminal(&world, &spec), Status::Timeout);
        world.succeeded = true;
        assert_eq!(is_terminal(&world, &spec), Status::Success);
        world.step_count = 112;
        assert_eq!(is_terminal(&world, &spec), Status::Success);
    }

    #[test]
    fn stepping_past_the_cap_is_rejected() {
        let spec = ResetSpec::default();
        let chain = KinematicChain::default();
        let mut world = reset(&spec, &chain, &mut ChaCha8Rng::seed_from_u64(0));
        world.step_count = spec.max_episode_steps;
        assert!(matches!(
            step(&world, &chain, Action::OPEN, &spec),
            Err(SimError::EpisodeFinished { .. })
        ));
    }

    #[test]
    fn open_forever_times_out_at_cap() {
        let spec = ResetSpec::default();
        let chain = KinematicChain::default();
        let mut world = reset(&spec, &chain, &mut ChaCha8Rng::seed_from_u64(0));
        let mut status = Status::Continue;
        let mut steps = 0;
        while !status.is_done() {
            let r = step(&world, &chain, Action::OPEN, &spec).unwrap();
            world = r.next;
            status = r.status;
            steps += 1;
        }
        assert_eq!(status, Status::Timeout);
        assert_eq!(steps, 1000);
    }

    #[test]
    fn fixed_reset_ignores_rng() {
        let spec = ResetSpec::default();
        let chain = KinematicChain::default();
        let a = reset(&spec, &chain, &mut ChaCha8Rng::seed_from_u64(1));
        let b = reset(&spec, &chain, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(a, b);
        assert_eq!(a.arm.joint_angles, spec.base_joint_angles);
        assert_eq!(a.cube.position, spec.cube_base_position);
        assert!(!a.arm.gripper_closed && !a.cube.grasped && a.step_count == 0);
    }

    #[test]
    fn randomized_reset_stays_in_jitter_band_and_covers_region() {
        let spec = ResetSpec {
            mode: ResetMode::Randomized,
            ..ResetSpec::default()
        };
        let chain = KinematicChain::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut quadrants = [0usize; 4];
        for _ in 0..1000 {
            let w = reset(&spec, &chain, &mut rng);
            for (a, b) in w.arm.joint_angles.iter().zip(&spec.base_joint_angles) {
                assert!((a - b).abs() <= 20.0);
            }
            let dx = w.cube.position[0] - spec.cube_base_position[0];
            let dz = w.cube.position[2] - spec.cube_base_position[2];
            assert!(dx.abs() <= spec.cube_region_width / 2.0);
            assert!(dz.abs() <= spec.cube_region_depth / 2.0);
            assert_eq!(w.cube.position[1], 0.0);
            quadrants[usize::from(dx >= 0.0) * 2 + usize::from(dz >= 0.0)] += 1;
        }
        // Uniform placement puts ~250 in each quadrant; 150 is > 7 sigma away.
        assert!(quadrants.iter().all(|&q| q > 150), "{quadrants:?}");
    }

    #[test]
    fn frozen_joint_actions_are_noops() {
        let chain = KinematicChain::default();
        let mut spec = ResetSpec::default();
        spec.controlled_joints = [false, true, true, false, false, false];
        let world = reset(&spec, &chain, &mut ChaCha8Rng::seed_from_u64(0));
        let next = apply_action(&world, &chain, Action::joint(0, true), &spec).unwrap();
        assert_eq!(next.arm, world.arm);
        assert_eq!(next.step_count, 1);
    }

    #[test]
    fn open_gripper_pushes_cube_sideways() {
        let spec = ResetSpec {
            base_joint_angles: [0.0; NUM_JOINTS],
            ..ResetSpec::default()
        };
        let mut cube = CubeState {
            position: [0.0, 0.0, 0.0],
            half_extent: 0.02,
            grasped: false,
        };
        // Grasp point inside the cube's upper corner, outside the grasp sphere.
        knock_cube(&mut cube, [-0.015, 0.035, 0.0], spec.grasp_radius);
        assert!((cube.position[0] - 0.005).abs() < 1e-15, "{:?}", cube.position);
        assert_eq!(cube.position[1], 0.0);
        // Within the grasp sphere nothing moves.
        let before = cube;
        knock_cube(&mut cube, [0.0, 0.01, 0.0], spec.grasp_radius);
        assert_eq!(cube, before);
    }

    #[test]
    fn world_record_round_trips() {
        let chain = KinematicChain::default();
        let spec = ResetSpec {
            mode: ResetMode::Randomized,
            ..ResetSpec::default()
        };
        let w = reset(&spec, &chain, &mut ChaCha8Rng::seed_from_u64(3));
        let text = w.to_record();
        assert_eq!(WorldState::from_record(&text).unwrap(), w);
        assert!(WorldState::from_record("joint0=1").is_err());
    }

    #[test]
    fn default_setup_validates() {
        let chain = KinematicChain::default();
        chain.validate().unwrap();
        ResetSpec::default().validate(&chain).unwrap();
        let mut bad = chain.clone();
        bad.links[2].axis = [0.0, 0.0, 2.0];
        assert!(bad.validate().is_err());
    }
}
