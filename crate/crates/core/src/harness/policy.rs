use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::HarnessError;
use crate::dqn::{AdamOptimizer, Agent, QModel};
use crate::geom;
use crate::nn::QNetwork;
use crate::render::Observation;
use crate::sim::{self, Action, KinematicChain, ResetSpec, WorldState, NUM_ACTIONS};

/// Scores the fourteen actions for the current step. Action selection takes
/// the argmax under ε-greedy exploration.
pub trait Policy {
    fn action_values(&mut self, obs: &Observation, world: &WorldState) -> Result<Vec<f64>, HarnessError>;
}

impl Policy for QNetwork {
    fn action_values(&mut self, obs: &Observation, _world: &WorldState) -> Result<Vec<f64>, HarnessError> {
        Ok(self.q_values(obs)?)
    }
}

impl Policy for Agent<QNetwork, AdamOptimizer> {
    fn action_values(&mut self, obs: &Observation, _world: &WorldState) -> Result<Vec<f64>, HarnessError> {
        Ok(self.online.q_values(obs)?)
    }
}

/// Hand-written controller with access to the true world state. It scores
/// each action by a one-step lookahead: approach the cube with the gripper
/// open, close when a grasp would succeed, then raise the cube. A dropped
/// cube is simply approached again.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    pub chain: KinematicChain,
    pub spec: ResetSpec,
}

impl ScriptedPolicy {
    pub fn new(chain: KinematicChain, spec: ResetSpec) -> Self {
        Self { chain, spec }
    }

    fn potential(&self, world: &WorldState) -> f64 {
        if world.succeeded {
            1e6
        } else if world.cube.grasped {
            1e3 + world.cube.position[1]
        } else {
            let d = geom::distance(sim::gripper_point(&self.chain, &world.arm), world.cube.position);
            let closed_penalty = if world.arm.gripper_closed { 1.0 } else { 0.0 };
            -d - closed_penalty
        }
    }
}

impl Policy for ScriptedPolicy {
    fn action_values(&mut self, _obs: &Observation, world: &WorldState) -> Result<Vec<f64>, HarnessError> {
        Action::all()
            .map(|a| Ok(self.potential(&sim::apply_action(world, &self.chain, a, &self.spec)?)))
            .collect()
    }
}

/// Scores every action with an independent uniform draw, so the greedy
/// choice is itself uniform over the fourteen actions.
#[derive(Debug, Clone)]
pub struct UniformRandomPolicy {
    rng: ChaCha8Rng,
}

impl UniformRandomPolicy {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }
}

impl Policy for UniformRandomPolicy {
    fn action_values(&mut self, _obs: &Observation, _world: &WorldState) -> Result<Vec<f64>, HarnessError> {
        Ok((0..NUM_ACTIONS).map(|_| self.rng.random()).collect())
    }
}
