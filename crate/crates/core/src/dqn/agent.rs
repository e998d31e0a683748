use std::sync::Arc;

use rand::Rng;

use super::{DqnError, ReplayBuffer};
use crate::nn::{adam_step, AdamConfig, AdamState, NetworkParams, QNetwork};
use crate::render::Observation;
use crate::sim::Action;

/// An action-value function that can be differentiated with respect to its
/// own parameters.
pub trait QModel: Clone {
    type Input;
    type Gradient;

    fn q_values(&self, input: &Self::Input) -> Result<Vec<f64>, DqnError>;

    fn zero_gradient(&self) -> Self::Gradient;

    /// Runs the model on `input`, asks `d_output` for the loss gradient with
    /// respect to the outputs, and accumulates the parameter gradient into
    /// `grad`. Returns the outputs.
    fn accumulate_gradient(
        &self,
        input: &Self::Input,
        grad: &mut Self::Gradient,
        d_output: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<Vec<f64>, DqnError>;
}

pub trait Optimizer<M: QModel> {
    fn apply(&mut self, model: &mut M, grad: &M::Gradient) -> Result<(), DqnError>;
}

impl QModel for QNetwork {
    type Input = Observation;
    type Gradient = NetworkParams;

    fn q_values(&self, input: &Observation) -> Result<Vec<f64>, DqnError> {
        Ok(self.forward(&input.to_input())?)
    }

    fn zero_gradient(&self) -> NetworkParams {
        self.params.zeros_like()
    }

    fn accumulate_gradient(
        &self,
        input: &Observation,
        grad: &mut NetworkParams,
        d_output: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<Vec<f64>, DqnError> {
        let trace = self.forward_trace(&input.to_input())?;
        let d_q = d_output(&trace.q_values);
        self.backward(&trace, &d_q, grad)?;
        Ok(trace.q_values)
    }
}

/// Adam with an optional cap on the global gradient norm.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamOptimizer {
    pub state: AdamState,
    pub grad_norm_cap: Option<f64>,
}

impl AdamOptimizer {
    pub fn new(config: AdamConfig, params: &NetworkParams, grad_norm_cap: Option<f64>) -> Self {
        Self {
            state: AdamState::new(config, params),
            grad_norm_cap,
        }
    }
}

impl Optimizer<QNetwork> for AdamOptimizer {
    fn apply(&mut self, model: &mut QNetwork, grad: &NetworkParams) -> Result<(), DqnError> {
        if let Some(cap) = self.grad_norm_cap {
            let norm = grad.tensors().flat_map(|t| t.data()).map(|g| g * g).sum::<f64>().sqrt();
            if norm > cap {
                let mut clipped = grad.clone();
                clipped.scale(cap / norm);
                return Ok(adam_step(&mut model.params, &clipped, &mut self.state)?);
            }
        }
        Ok(adam_step(&mut model.params, grad, &mut self.state)?)
    }
}

/// Replay record `(s, a, r, s', terminal)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S> {
    pub observation: Arc<S>,
    pub action: Action,
    pub reward: f64,
    pub next_observation: Arc<S>,
    /// True only when the episode ended by reaching a true terminal state;
    /// step-cap truncation still bootstraps.
    pub terminal: bool,
}

/// Linear ε decay from `start` to `end` over `anneal_span` steps, then flat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_span: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.1,
            anneal_span: 1_000_000,
        }
    }
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<(), DqnError> {
        if !(0.0 <= self.end && self.end <= self.start && self.start <= 1.0) {
            return Err(DqnError::InvalidConfig(format!(
                "epsilon schedule needs 0 <= end <= start <= 1 (start {}, end {})",
                self.start, self.end
            )));
        }
        Ok(())
    }

    pub fn epsilon_at(&self, step: u64) -> f64 {
        if step >= self.anneal_span {
            return self.end;
        }
        let frac = step as f64 / self.anneal_span as f64;
        self.start + frac * (self.end - self.start)
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy choice over `q_values.len()` actions.
pub fn select_action<R: Rng + ?Sized>(q_values: &[f64], epsilon: f64, rng: &mut R) -> Action {
    let explore = rng.random::<f64>() < epsilon;
    let id = if explore {
        rng.random_range(0..q_values.len())
    } else {
        argmax(q_values)
    };
    Action::new(id as u32).expect("q-value count bounded by the action count")
}

pub fn td_target(reward: f64, terminal: bool, max_next_q: f64, discount: f64) -> f64 {
    if terminal {
        reward
    } else {
        reward + discount * max_next_q
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput<G> {
    pub loss: f64,
    pub gradients: G,
}

/// Mean squared TD error over the batch and its gradient with respect to the
/// online parameters. Targets use `target` and are held constant; only the
/// taken action's output receives gradient.
pub fn loss_and_gradients<M: QModel>(
    batch: &[&Transition<M::Input>],
    online: &M,
    target: &M,
    discount: f64,
) -> Result<LossOutput<M::Gradient>, DqnError> {
    if batch.is_empty() {
        return Err(DqnError::EmptyBatch);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut gradients = online.zero_gradient();
    let mut loss = 0.0;
    for t in batch {
        let next_q = target.q_values(&t.next_observation)?;
        let max_next = next_q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let y = td_target(t.reward, t.terminal, max_next, discount);
        let a = t.action.id();
        let mut residual = 0.0;
        online.accumulate_gradient(&t.observation, &mut gradients, &mut |q| {
            residual = q[a] - y;
            let mut d = vec![0.0; q.len()];
            d[a] = 2.0 * scale * residual;
            d
        })?;
        loss += scale * residual * residual;
    }
    Ok(LossOutput { loss, gradients })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentConfig {
    pub discount: f64,
    pub batch_size: usize,
    /// Gradient updates between target-network refreshes.
    pub target_sync_period: u64,
    pub min_replay_before_learning: usize,
    pub replay_capacity: usize,
    /// Environment steps per gradient update.
    pub train_every: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            discount: 0.99,
            batch_size: 32,
            target_sync_period: 1000,
            min_replay_before_learning: 1000,
            replay_capacity: 500_000,
            train_every: 1,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), DqnError> {
        let bad = |m: String| Err(DqnError::InvalidConfig(m));
        if !(0.0..1.0).contains(&self.discount) {
            return bad(format!("discount {} must be in [0, 1)", self.discount));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.target_sync_period == 0 {
            return bad("target_sync_period must be >= 1".into());
        }
        if self.replay_capacity == 0 {
            return bad("replay_capacity must be >= 1".into());
        }
        if self.train_every == 0 {
            return bad("train_every must be >= 1".into());
        }
        if self.min_replay_before_learning < self.batch_size {
            return bad(format!(
                "min_replay_before_learning {} must be >= batch_size {}",
                self.min_replay_before_learning, self.batch_size
            ));
        }
        if self.min_replay_before_learning > self.replay_capacity {
            return bad("min_replay_before_learning exceeds replay_capacity".into());
        }
        Ok(())
    }
}

/// Online and target models, replay memory and optimizer.
#[derive(Debug, Clone)]
pub struct Agent<M: QModel, O> {
    pub config: AgentConfig,
    pub online: M,
    pub target: M,
    pub optimizer: O,
    pub replay: ReplayBuffer<Transition<M::Input>>,
    /// Transitions observed.
    pub env_steps: u64,
    /// Gradient updates applied.
    pub updates: u64,
}

pub fn sync_target<M: Clone>(online: &M) -> M {
    online.clone()
}

impl<M: QModel, O: Optimizer<M>> Agent<M, O> {
    pub fn new(config: AgentConfig, online: M, optimizer: O) -> Result<Self, DqnError> {
        config.validate()?;
        Ok(Self {
            config,
            target: sync_target(&online),
            online,
            optimizer,
            replay: ReplayBuffer::new(config.replay_capacity)?,
            env_steps: 0,
            updates: 0,
        })
    }

    pub fn act<R: Rng + ?Sized>(&self, input: &M::Input, epsilon: f64, rng: &mut R) -> Result<(Action, Vec<f64>), DqnError> {
        let q = self.online.q_values(input)?;
        Ok((select_action(&q, epsilon, rng), q))
    }

    /// Stores the transition and, once enough experience is buffered,
    /// performs one gradient update every `train_every` steps. Returns the
    /// batch loss when an update happened.
    pub fn train_step<R: Rng + ?Sized>(&mut self, transition: Transition<M::Input>, rng: &mut R) -> Result<Option<f64>, DqnError> {
        if !transition.reward.is_finite() {
            return Err(DqnError::NonFiniteReward(transition.reward));
        }
        self.replay.push(transition);
        self.env_steps += 1;
        if self.replay.len() < self.config.min_replay_before_learning
            || self.env_steps % self.config.train_every != 0
        {
            return Ok(None);
        }
        let batch = self.replay.sample(self.config.batch_size, rng)?;
        let out = loss_and_gradients(&batch, &self.online, &self.target, self.config.discount)?;
        self.optimizer.apply(&mut self.online, &out.gradients)?;
        self.updates += 1;
        if self.updates % self.config.target_sync_period == 0 {
            self.target = sync_target(&self.online);
        }
        Ok(Some(out.loss))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn epsilon_endpoints_and_midpoint() {
        let s = EpsilonSchedule {
            start: 1.0,
            end: 0.1,
            anneal_span: 1000,
        };
        assert_eq!(s.epsilon_at(0), 1.0);
        assert_eq!(s.epsilon_at(1000), 0.1);
        assert_eq!(s.epsilon_at(5_000_000), 0.1);
        assert!((s.epsilon_at(500) - 0.55).abs() < 1e-15);
        assert!(s.epsilon_at(250) > s.epsilon_at(251));
    }

    #[test]
    fn greedy_ties_pick_lowest() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut q = vec![0.0; 14];
        q[3] = 2.0;
        q[9] = 2.0;
        for _ in 0..100 {
            assert_eq!(select_action(&q, 0.0, &mut rng).id(), 3);
        }
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q: Vec<f64> = (0..14).map(f64::from).collect();
        let mut counts = [0u32; 14];
        let draws = 100_000;
        for _ in 0..draws {
            counts[select_action(&q, 1.0, &mut rng).id()] += 1;
        }
        let p = 1.0 / 14.0;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((f64::from(c) - mean).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn td_target_cases() {
        assert_eq!(td_target(100.0, true, 55.0, 0.99), 100.0);
        assert!((td_target(0.5, false, 2.0, 0.99) - 2.48).abs() < 1e-15);
        assert_eq!(td_target(0.7, false, 12.0, 0.0), 0.7);
    }

    #[test]
    fn config_validation_names_field() {
        let cfg = AgentConfig {
            discount: 1.5,
            ..AgentConfig::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("discount"));
        assert!(AgentConfig::default().validate().is_ok());
    }
}
