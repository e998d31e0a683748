//! Built-in correctness checks: central finite differences against every
//! analytic gradient, and tabular Q-learning against value iteration.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dqn::tabular::{ChainMdp, QTable, Sgd};
use crate::dqn::{loss_and_gradients, Agent, AgentConfig, DqnError, Transition};
use crate::nn::{self, ConvSpec, NetworkSpec, NnError, QNetwork, Tensor};
use crate::render::Observation;
use crate::sim::{Action, NUM_ACTIONS};

pub const FD_STEP: f64 = 1e-5;
pub const GRADIENT_TOLERANCE: f64 = 1e-6;
pub const GRADIENT_INSTANCES: usize = 20;
/// Magnitude below which gradient components are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-3;

pub const TABULAR_STEPS: u64 = 10_000;
pub const TABULAR_TOLERANCE: f64 = 1e-2;

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub name: &'static str,
    pub instances: usize,
    pub components: usize,
    pub max_relative_error: f64,
}

impl GradientCheck {
    pub fn passed(&self) -> bool {
        self.instances >= GRADIENT_INSTANCES && self.max_relative_error < GRADIENT_TOLERANCE
    }
}

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_vec(shape, normal(rng, shape.iter().product())).expect("shape matches")
}

/// Compares `analytic` with central differences of `f` around `x`,
/// returning the worst relative error.
fn compare(x: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let up = f(&probe);
        probe[i] = x[i] - FD_STEP;
        let down = f(&probe);
        probe[i] = x[i];
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

fn weighted_sum(t: &Tensor, c: &[f64]) -> f64 {
    t.data().iter().zip(c).map(|(a, b)| a * b).sum()
}

struct Tally {
    name: &'static str,
    instances: usize,
    components: usize,
    worst: f64,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            instances: 0,
            components: 0,
            worst: 0.0,
        }
    }

    fn record(&mut self, components: usize, worst: f64) {
        self.instances += 1;
        self.components += components;
        self.worst = self.worst.max(worst);
    }

    fn finish(self) -> GradientCheck {
        GradientCheck {
            name: self.name,
            instances: self.instances,
            components: self.components,
            max_relative_error: self.worst,
        }
    }
}

/// Convolution with random geometry, checked with respect to input, weights
/// and bias under a random linear readout.
pub fn check_conv(seed: u64) -> Result<GradientCheck, NnError> {
    let mut tally = Tally::new("conv");
    for i in 0..GRADIENT_INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let channels = rng.random_range(1..=3);
        let kernel = rng.random_range(1..=3);
        let stride = rng.random_range(1..=2);
        let out_channels = rng.random_range(1..=3);
        let side = rng.random_range(kernel..=kernel + 5);
        let input = tensor(&mut rng, &[channels, side, side + 1]);
        let w = tensor(&mut rng, &[out_channels, channels, kernel, kernel]);
        let b = tensor(&mut rng, &[out_channels]);
        let out = nn::conv2d_forward(&input, &w, &b, stride)?;
        let c = normal(&mut rng, out.len());
        let d_out = Tensor::from_vec(out.shape(), c.clone())?;
        let g = nn::conv2d_backward(&input, &w, &b, stride, &d_out)?;
        let loss = |x: &Tensor, w: &Tensor, b: &Tensor| {
            weighted_sum(&nn::conv2d_forward(x, w, b, stride).expect("valid geometry"), &c)
        };
        let e_in = compare(input.data(), g.d_input.data(), |v| {
            loss(&Tensor::from_vec(input.shape(), v.to_vec()).unwrap(), &w, &b)
        });
        let e_w = compare(w.data(), g.d_weights.data(), |v| {
            loss(&input, &Tensor::from_vec(w.shape(), v.to_vec()).unwrap(), &b)
        });
        let e_b = compare(b.data(), g.d_bias.data(), |v| {
            loss(&input, &w, &Tensor::from_vec(b.shape(), v.to_vec()).unwrap())
        });
        tally.record(input.len() + w.len() + b.len(), e_in.max(e_w).max(e_b));
    }
    Ok(tally.finish())
}

/// Max-pool over inputs whose values are separated by far more than the
/// probe step, so no perturbation changes which element wins.
pub fn check_pool(seed: u64) -> Result<GradientCheck, NnError> {
    let mut tally = Tally::new("pool");
    for i in 0..GRADIENT_INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let shape = [rng.random_range(1..=3), 2 * rng.random_range(1..=4), 2 * rng.random_range(1..=4)];
        let n: usize = shape.iter().product();
        let mut values: Vec<f64> = (0..n).map(|k| k as f64 * 0.01).collect();
        for k in (1..n).rev() {
            values.swap(k, rng.random_range(0..=k));
        }
        let input = Tensor::from_vec(&shape, values)?;
        let (out, argmax) = nn::maxpool2x2_forward(&input)?;
        let c = normal(&mut rng, out.len());
        let d_in = nn::maxpool2x2_backward(&Tensor::from_vec(out.shape(), c.clone())?, &argmax, &shape)?;
        let e = compare(input.data(), d_in.data(), |v| {
            let x = Tensor::from_vec(&shape, v.to_vec()).unwrap();
            weighted_sum(&nn::maxpool2x2_forward(&x).unwrap().0, &c)
        });
        tally.record(n, e);
    }
    Ok(tally.finish())
}

pub fn check_fc(seed: u64) -> Result<GradientCheck, NnError> {
    let mut tally = Tally::new("fc");
    for i in 0..GRADIENT_INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let ins = rng.random_range(1..=12);
        let outs = rng.random_range(1..=8);
        let input = tensor(&mut rng, &[ins]);
        let w = tensor(&mut rng, &[outs, ins]);
        let b = tensor(&mut rng, &[outs]);
        let c = normal(&mut rng, outs);
        let g = nn::fc_backward(&input, &w, &b, &Tensor::from_vec(&[outs], c.clone())?)?;
        let loss = |x: &Tensor, w: &Tensor, b: &Tensor| weighted_sum(&nn::fc_forward(x, w, b).unwrap(), &c);
        let e_in = compare(input.data(), g.d_input.data(), |v| {
            loss(&Tensor::from_vec(&[ins], v.to_vec()).unwrap(), &w, &b)
        });
        let e_w = compare(w.data(), g.d_weights.data(), |v| {
            loss(&input, &Tensor::from_vec(&[outs, ins], v.to_vec()).unwrap(), &b)
        });
        let e_b = compare(b.data(), g.d_bias.data(), |v| {
            loss(&input, &w, &Tensor::from_vec(&[outs], v.to_vec()).unwrap())
        });
        tally.record(ins + outs * ins + outs, e_in.max(e_w).max(e_b));
    }
    Ok(tally.finish())
}

/// Rectifier on inputs kept at least 0.01 away from the kink.
pub fn check_relu(seed: u64) -> Result<GradientCheck, NnError> {
    let mut tally = Tally::new("relu");
    for i in 0..GRADIENT_INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let n = rng.random_range(1..=64);
        let values = (0..n)
            .map(|_| {
                let m: f64 = rng.random_range(0.01..1.0);
                if rng.random::<bool>() { m } else { -m }
            })
            .collect();
        let x = Tensor::from_vec(&[n], values)?;
        let c = normal(&mut rng, n);
        let d = nn::relu_backward(&x, &Tensor::from_vec(&[n], c.clone())?)?;
        let e = compare(x.data(), d.data(), |v| {
            weighted_sum(&nn::relu_forward(&Tensor::from_vec(&[n], v.to_vec()).unwrap()), &c)
        });
        tally.record(n, e);
    }
    Ok(tally.finish())
}

fn small_network_spec() -> NetworkSpec {
    let conv = |out_channels, kernel| ConvSpec {
        out_channels,
        kernel,
        stride: 1,
    };
    NetworkSpec {
        input: [1, 24, 24],
        convs: [conv(3, 5), conv(4, 3), conv(4, 3)],
        hidden_units: 8,
    }
}

/// Mean squared TD loss of a whole network over a random minibatch,
/// differentiated with respect to every online parameter while the target
/// network is held fixed.
pub fn check_td_loss(seed: u64) -> Result<GradientCheck, DqnError> {
    let mut tally = Tally::new("td_loss");
    let spec = small_network_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while tally.instances < GRADIENT_INSTANCES {
        let mut online = QNetwork::init(spec.clone(), &mut rng)?;
        // Zero biases behind dead units would sit exactly on a rectifier
        // kink, where central differences are meaningless.
        for layer in &mut online.params.layers {
            layer.bias.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
        let target = QNetwork::init(spec.clone(), &mut rng)?;
        let mut frame = || {
            Arc::new(Observation {
                width: 24,
                height: 24,
                pixels: (0..576).map(|_| rng.random()).collect(),
            })
        };
        let frames: Vec<_> = (0..5).map(|_| frame()).collect();
        let batch: Vec<Transition<Observation>> = (0..4)
            .map(|k| Transition {
                observation: Arc::clone(&frames[k]),
                action: Action::new(rng.random_range(0..NUM_ACTIONS as u32)).expect("in range"),
                reward: rng.random_range(-1.0..2.0),
                next_observation: Arc::clone(&frames[k + 1]),
                terminal: k == 3,
            })
            .collect();
        let mut margin = f64::INFINITY;
        for t in &batch {
            margin = margin.min(kink_margin(&online, &t.observation.to_input())?);
        }
        if margin < KINK_MARGIN {
            continue;
        }
        let refs: Vec<&Transition<Observation>> = batch.iter().collect();
        let discount = 0.99;
        let analytic = loss_and_gradients(&refs, &online, &target, discount)?.gradients;

        let flat: Vec<f64> = online.params.tensors().flat_map(|t| t.data().iter().copied()).collect();
        let grad: Vec<f64> = analytic.tensors().flat_map(|t| t.data().iter().copied()).collect();
        let mut probe_net = online.clone();
        let e = compare(&flat, &grad, |v| {
            let mut it = v.iter();
            for t in probe_net.params.tensors_mut() {
                t.data_mut().iter_mut().for_each(|p| *p = *it.next().expect("length"));
            }
            loss_and_gradients(&refs, &probe_net, &target, discount).expect("valid batch").loss
        });
        tally.record(flat.len(), e);
    }
    Ok(tally.finish())
}

/// Smallest distance from any rectifier input to zero, or between the two
/// largest live entries of a pooling window, over one forward pass. Instances
/// closer than this to a kink are redrawn for the whole-network check.
const KINK_MARGIN: f64 = 1e-4;

fn kink_margin(net: &QNetwork, input: &[f64]) -> Result<f64, NnError> {
    let stages = net.stage_outputs(input)?;
    let mut margin = f64::INFINITY;
    for i in 0..3 {
        let layer = &net.params.layers[i];
        let pre = nn::conv2d_forward(&stages[2 * i], &layer.weights, &layer.bias, net.spec().convs[i].stride)?;
        margin = pre.data().iter().fold(margin, |m, z| m.min(z.abs()));
        let act = &stages[2 * i + 1];
        let [c, h, w] = [act.shape()[0], act.shape()[1], act.shape()[2]];
        for ch in 0..c {
            for y in (0..h - 1).step_by(2) {
                for x in (0..w - 1).step_by(2) {
                    let at = |dy: usize, dx: usize| act.data()[(ch * h + y + dy) * w + x + dx];
                    let mut window = [at(0, 0), at(0, 1), at(1, 0), at(1, 1)];
                    window.sort_by(|a, b| b.total_cmp(a));
                    if window[0] > 0.0 {
                        margin = margin.min(window[0] - window[1]);
                    }
                }
            }
        }
    }
    let fc1 = &net.params.layers[3];
    let hidden = nn::fc_forward(&stages[7], &fc1.weights, &fc1.bias)?;
    Ok(hidden.data().iter().fold(margin, |m, z| m.min(z.abs())))
}

pub fn gradient_suite(seed: u64) -> Result<Vec<GradientCheck>, DqnError> {
    Ok(vec![
        check_conv(seed)?,
        check_pool(seed)?,
        check_fc(seed)?,
        check_relu(seed)?,
        check_td_loss(seed)?,
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularReport {
    pub steps: u64,
    pub learned: Vec<[f64; 2]>,
    pub optimal: Vec<[f64; 2]>,
    pub max_error: f64,
}

impl TabularReport {
    pub fn passed(&self) -> bool {
        self.steps <= TABULAR_STEPS && self.max_error < TABULAR_TOLERANCE
    }
}

/// Trains the generic agent, with an exact table in place of the network,
/// on a five-cell corridor under uniform exploration, then compares the
/// learned values with value iteration.
pub fn tabular_oracle(steps: u64, seed: u64) -> Result<TabularReport, DqnError> {
    let mdp = ChainMdp {
        num_states: 5,
        step_reward: 0.0,
    };
    let config = AgentConfig {
        discount: 0.9,
        batch_size: 4,
        target_sync_period: 10,
        min_replay_before_learning: 4,
        replay_capacity: 1000,
        train_every: 1,
    };
    let mut agent = Agent::new(config, QTable::zeros(mdp.num_states, ChainMdp::NUM_ACTIONS), Sgd { learning_rate: 0.5 })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = Arc::new(0usize);
    let mut episode_len = 0;
    for _ in 0..steps {
        let action = rng.random_range(0..ChainMdp::NUM_ACTIONS);
        let (next, reward, terminal) = mdp.step(*state, action);
        let next = Arc::new(next);
        agent.train_step(
            Transition {
                observation: Arc::clone(&state),
                action: Action::new(action as u32).expect("in range"),
                reward,
                next_observation: Arc::clone(&next),
                terminal,
            },
            &mut rng,
        )?;
        episode_len += 1;
        state = if terminal || episode_len == 50 {
            episode_len = 0;
            Arc::new(0)
        } else {
            next
        };
    }
    let optimal = mdp.value_iteration(config.discount);
    let learned: Vec<[f64; 2]> = (0..mdp.num_states)
        .map(|s| [agent.online.get(s, 0), agent.online.get(s, 1)])
        .collect();
    let max_error = learned
        .iter()
        .zip(&optimal)
        .flat_map(|(l, o)| [(l[0] - o[0]).abs(), (l[1] - o[1]).abs()])
        .fold(0.0, f64::max);
    Ok(TabularReport {
        steps,
        learned,
        optimal,
        max_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert!((relative_error(1e-9, 0.0) - 1e-6).abs() < 1e-18);
    }
}
