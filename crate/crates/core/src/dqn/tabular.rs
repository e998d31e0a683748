//! Exact tabular Q-function and a small deterministic chain task, used to
//! check the agent's update rules against value iteration.

use super::{DqnError, Optimizer, QModel};

/// One parameter per (state, action).
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub num_states: usize,
    pub num_actions: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            values: vec![0.0; num_states * num_actions],
        }
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.num_actions + action]
    }

    fn row(&self, state: usize) -> Result<&[f64], DqnError> {
        if state >= self.num_states {
            return Err(DqnError::InvalidConfig(format!(
                "state {state} outside table of {} states",
                self.num_states
            )));
        }
        Ok(&self.values[state * self.num_actions..(state + 1) * self.num_actions])
    }
}

impl QModel for QTable {
    type Input = usize;
    type Gradient = Vec<f64>;

    fn q_values(&self, state: &usize) -> Result<Vec<f64>, DqnError> {
        Ok(self.row(*state)?.to_vec())
    }

    fn zero_gradient(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    fn accumulate_gradient(
        &self,
        state: &usize,
        grad: &mut Vec<f64>,
        d_output: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<Vec<f64>, DqnError> {
        let q = self.row(*state)?.to_vec();
        let d = d_output(&q);
        let base = state * self.num_actions;
        for (a, g) in d.iter().enumerate() {
            grad[base + a] += g;
        }
        Ok(q)
    }
}

/// Plain gradient descent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
}

impl Optimizer<QTable> for Sgd {
    fn apply(&mut self, model: &mut QTable, grad: &Vec<f64>) -> Result<(), DqnError> {
        for (p, g) in model.values.iter_mut().zip(grad) {
            *p -= self.learning_rate * g;
        }
        Ok(())
    }
}

/// A corridor of `num_states` cells. Action 0 steps left (bounded at cell
/// 0), action 1 steps right. Entering the last cell pays 1 and ends the
/// episode; every other move pays `step_reward`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainMdp {
    pub num_states: usize,
    pub step_reward: f64,
}

impl ChainMdp {
    pub const NUM_ACTIONS: usize = 2;

    pub fn goal(&self) -> usize {
        self.num_states - 1
    }

    /// `(next_state, reward, terminal)`.
    pub fn step(&self, state: usize, action: usize) -> (usize, f64, bool) {
        let next = if action == 0 {
            state.saturating_sub(1)
        } else {
            (state + 1).min(self.goal())
        };
        if next == self.goal() {
            (next, 1.0, true)
        } else {
            (next, self.step_reward, false)
        }
    }

    /// Optimal action values by synchronous value iteration to convergence.
    /// The goal cell is absorbing and has value 0.
    pub fn value_iteration(&self, discount: f64) -> Vec<[f64; 2]> {
        let mut q = vec![[0.0f64; 2]; self.num_states];
        loop {
            let v: Vec<f64> = q.iter().map(|row| row[0].max(row[1])).collect();
            let mut delta: f64 = 0.0;
            for s in 0..self.goal() {
                for a in 0..2 {
                    let (next, r, terminal) = self.step(s, a);
                    let backup = if terminal { r } else { r + discount * v[next] };
                    delta = delta.max((backup - q[s][a]).abs());
                    q[s][a] = backup;
                }
            }
            if delta < 1e-14 {
                return q;
            }
        }
    }
}
