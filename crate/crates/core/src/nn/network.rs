//! The convolutional Q-network: three conv → relu → 2×2 max-pool blocks, a
//! hidden fully-connected rectifier layer, and a linear output per action.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{self, ConvGeometry};
use super::{NnError, Tensor};
use crate::sim::NUM_ACTIONS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    /// `[channels, height, width]` of the observation.
    pub input: [usize; 3],
    pub convs: [ConvSpec; 3],
    pub hidden_units: usize,
}

impl Default for NetworkSpec {
    /// 64×64 grayscale input.
    fn default() -> Self {
        let conv = |out_channels, kernel| ConvSpec {
            out_channels,
            kernel,
            stride: 1,
        };
        Self {
            input: [1, 64, 64],
            convs: [conv(16, 5), conv(32, 3), conv(32, 3)],
            hidden_units: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Plan {
    convs: [ConvGeometry; 3],
    pooled: [[usize; 3]; 3],
    flat: usize,
}

impl NetworkSpec {
    fn plan(&self) -> Result<Plan, NnError> {
        let mut shape = self.input;
        if shape.iter().any(|&d| d == 0) {
            return Err(NnError::InvalidSpec(format!("input shape {shape:?} has a zero extent")));
        }
        let mut convs = Vec::with_capacity(3);
        let mut pooled = [[0; 3]; 3];
        for (i, c) in self.convs.iter().enumerate() {
            let g = ConvGeometry::new(shape, c.out_channels, c.kernel, c.stride)
                .map_err(|e| NnError::InvalidSpec(format!("conv layer {}: {e}", i + 1)))?;
            let out = g.output_shape();
            pooled[i] = layers::pool_shape(&out)
                .map_err(|e| NnError::InvalidSpec(format!("pool after conv layer {}: {e}", i + 1)))?;
            if pooled[i][1] == 0 || pooled[i][2] == 0 {
                return Err(NnError::InvalidSpec(format!(
                    "spatial extent vanishes after block {}",
                    i + 1
                )));
            }
            convs.push(g);
            shape = pooled[i];
        }
        if self.hidden_units == 0 {
            return Err(NnError::InvalidSpec("hidden_units must be >= 1".into()));
        }
        Ok(Plan {
            convs: [convs[0], convs[1], convs[2]],
            pooled,
            flat: shape.iter().product(),
        })
    }

    pub fn validate(&self) -> Result<(), NnError> {
        self.plan().map(|_| ())
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    /// Named output shape of every stage, starting with the input.
    pub fn layer_shapes(&self) -> Result<Vec<(String, Vec<usize>)>, NnError> {
        let plan = self.plan()?;
        let mut shapes = vec![("input".to_string(), self.input.to_vec())];
        for (i, (g, p)) in plan.convs.iter().zip(&plan.pooled).enumerate() {
            shapes.push((format!("conv{}", i + 1), g.output_shape().to_vec()));
            shapes.push((format!("pool{}", i + 1), p.to_vec()));
        }
        shapes.push(("flatten".into(), vec![plan.flat]));
        shapes.push(("fc1".into(), vec![self.hidden_units]));
        shapes.push(("q".into(), vec![NUM_ACTIONS]));
        Ok(shapes)
    }

    /// Weight and bias shapes of the five parameterized layers.
    pub fn param_shapes(&self) -> Result<Vec<(Vec<usize>, Vec<usize>)>, NnError> {
        let plan = self.plan()?;
        let mut shapes: Vec<_> = plan
            .convs
            .iter()
            .map(|g| (g.weight_shape().to_vec(), vec![g.out_channels]))
            .collect();
        shapes.push((vec![self.hidden_units, plan.flat], vec![self.hidden_units]));
        shapes.push((vec![NUM_ACTIONS, self.hidden_units], vec![NUM_ACTIONS]));
        Ok(shapes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Weights and biases of every parameterized layer, in forward order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
}

impl NetworkParams {
    pub fn zeros(spec: &NetworkSpec) -> Result<Self, NnError> {
        Ok(Self {
            layers: spec
                .param_shapes()?
                .into_iter()
                .map(|(w, b)| LayerParams {
                    weights: Tensor::zeros(&w),
                    bias: Tensor::zeros(&b),
                })
                .collect(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: Tensor::zeros(l.weights.shape()),
                    bias: Tensor::zeros(l.bias.shape()),
                })
                .collect(),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self.tensors().zip(other.tensors()).all(|(a, b)| a.shape() == b.shape())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            layers::axpy(1.0, b.data(), a.data_mut());
        }
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.tensors().flat_map(|t| t.data()) {
            for byte in v.to_bits().to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// He-normal weights (standard deviation `sqrt(2 / fan_in)`) and zero biases.
pub fn init_params<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<NetworkParams, NnError> {
    let mut params = NetworkParams::zeros(spec)?;
    for layer in &mut params.layers {
        let fan_in: usize = layer.weights.shape()[1..].iter().product();
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
            .map_err(|e| NnError::InvalidSpec(e.to_string()))?;
        for w in layer.weights.data_mut() {
            *w = normal.sample(rng);
        }
    }
    Ok(params)
}

/// Intermediate values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    cols: [Vec<f64>; 3],
    activations: [Vec<f64>; 3],
    argmax: [Vec<usize>; 3],
    flat: Vec<f64>,
    hidden: Vec<f64>,
    pub q_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    spec: NetworkSpec,
    plan: Plan,
    pub params: NetworkParams,
}

impl QNetwork {
    pub fn new(spec: NetworkSpec, params: NetworkParams) -> Result<Self, NnError> {
        let plan = spec.plan()?;
        let expected = NetworkParams::zeros(&spec)?;
        if !expected.same_shape(&params) {
            return Err(NnError::shape(
                "network parameters",
                format!("{:?}", spec.param_shapes()?),
                format!(
                    "{:?}",
                    params
                        .layers
                        .iter()
                        .map(|l| (l.weights.shape().to_vec(), l.bias.shape().to_vec()))
                        .collect::<Vec<_>>()
                ),
            ));
        }
        Ok(Self { spec, plan, params })
    }

    pub fn init<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self, NnError> {
        let params = init_params(&spec, rng)?;
        Self::new(spec, params)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    fn check_input(&self, input: &[f64]) -> Result<(), NnError> {
        if input.len() != self.spec.input_len() {
            return Err(NnError::shape(
                "network input",
                format!("{:?} = {} values", self.spec.input, self.spec.input_len()),
                format!("{}", input.len()),
            ));
        }
        Ok(())
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<ForwardTrace, NnError> {
        self.check_input(input)?;
        let mut cols: [Vec<f64>; 3] = Default::default();
        let mut activations: [Vec<f64>; 3] = Default::default();
        let mut argmax: [Vec<usize>; 3] = Default::default();
        let mut current = input.to_vec();
        for i in 0..3 {
            let g = &self.plan.convs[i];
            let layer = &self.params.layers[i];
            let mut col = vec![0.0; g.patch_len() * g.out_positions()];
            g.im2col(&current, &mut col);
            let mut act = vec![0.0; g.out_channels * g.out_positions()];
            g.forward_from_col(&col, layer.weights.data(), layer.bias.data(), &mut act);
            act.iter_mut().for_each(|v| *v = v.max(0.0));
            let pooled_len: usize = self.plan.pooled[i].iter().product();
            let mut pooled = vec![0.0; pooled_len];
            let mut idx = vec![0; pooled_len];
            layers::maxpool_into(&act, g.output_shape(), &mut pooled, &mut idx);
            cols[i] = col;
            activations[i] = act;
            argmax[i] = idx;
            current = pooled;
        }
        let fc1 = &self.params.layers[3];
        let mut hidden = vec![0.0; self.spec.hidden_units];
        layers::fc_into(&current, fc1.weights.data(), fc1.bias.data(), &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.max(0.0));
        let fc2 = &self.params.layers[4];
        let mut q_values = vec![0.0; NUM_ACTIONS];
        layers::fc_into(&hidden, fc2.weights.data(), fc2.bias.data(), &mut q_values);
        Ok(ForwardTrace {
            cols,
            activations,
            argmax,
            flat: current,
            hidden,
            q_values,
        })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_trace(input)?.q_values)
    }

    /// Post-rectifier output of each convolutional layer, before pooling.
    pub fn conv_activations(&self, input: &[f64]) -> Result<Vec<Tensor>, NnError> {
        let trace = self.forward_trace(input)?;
        trace
            .activations
            .into_iter()
            .zip(&self.plan.convs)
            .map(|(a, g)| Tensor::from_vec(&g.output_shape(), a))
            .collect()
    }

    /// Output of every stage for shape inspection, in the order of
    /// [`NetworkSpec::layer_shapes`].
    pub fn stage_outputs(&self, input: &[f64]) -> Result<Vec<Tensor>, NnError> {
        let trace = self.forward_trace(input)?;
        let mut out = vec![Tensor::from_vec(&self.spec.input, input.to_vec())?];
        for i in 0..3 {
            let act = Tensor::from_vec(&self.plan.convs[i].output_shape(), trace.activations[i].clone())?;
            let (pooled, _) = layers::maxpool2x2_forward(&act)?;
            out.push(act);
            out.push(pooled);
        }
        out.push(Tensor::from_vec(&[self.plan.flat], trace.flat.clone())?);
        out.push(Tensor::from_vec(&[self.spec.hidden_units], trace.hidden.clone())?);
        out.push(Tensor::from_vec(&[NUM_ACTIONS], trace.q_values)?);
        Ok(out)
    }

    /// Backpropagates `d_q` (gradient of the loss w.r.t. the Q outputs) and
    /// accumulates parameter gradients into `grads`.
    pub fn backward(&self, trace: &ForwardTrace, d_q: &[f64], grads: &mut NetworkParams) -> Result<(), NnError> {
        if d_q.len() != NUM_ACTIONS {
            return Err(NnError::shape("d_q", format!("{NUM_ACTIONS}"), format!("{}", d_q.len())));
        }
        if !grads.same_shape(&self.params) {
            return Err(NnError::shape("gradient buffer", "network parameter shapes".into(), "mismatch".into()));
        }
        let fc2 = &self.params.layers[4];
        let mut d_hidden = vec![0.0; self.spec.hidden_units];
        {
            let g = &mut grads.layers[4];
            layers::fc_backward_into(
                &trace.hidden,
                fc2.weights.data(),
                d_q,
                g.weights.data_mut(),
                g.bias.data_mut(),
                Some(&mut d_hidden),
            );
        }
        for (d, &h) in d_hidden.iter_mut().zip(&trace.hidden) {
            if h <= 0.0 {
                *d = 0.0;
            }
        }
        let fc1 = &self.params.layers[3];
        let mut d_current = vec![0.0; self.plan.flat];
        {
            let g = &mut grads.layers[3];
            layers::fc_backward_into(
                &trace.flat,
                fc1.weights.data(),
                &d_hidden,
                g.weights.data_mut(),
                g.bias.data_mut(),
                Some(&mut d_current),
            );
        }
        for i in (0..3).rev() {
            let geo = &self.plan.convs[i];
            let mut d_act = vec![0.0; trace.activations[i].len()];
            for (&idx, &g) in trace.argmax[i].iter().zip(&d_current) {
                d_act[idx] += g;
            }
            for (d, &a) in d_act.iter_mut().zip(&trace.activations[i]) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            let layer = &self.params.layers[i];
            let g = &mut grads.layers[i];
            if i > 0 {
                let mut d_col = vec![0.0; trace.cols[i].len()];
                geo.backward_from_col(
                    &trace.cols[i],
                    layer.weights.data(),
                    &d_act,
                    g.weights.data_mut(),
                    g.bias.data_mut(),
                    Some(&mut d_col),
                );
                let mut d_input = vec![0.0; geo.channels * geo.height * geo.width];
                geo.col2im_add(&d_col, &mut d_input);
                d_current = d_input;
            } else {
                geo.backward_from_col(
                    &trace.cols[i],
                    layer.weights.data(),
                    &d_act,
                    g.weights.data_mut(),
                    g.bias.data_mut(),
                    None,
                );
            }
        }
        Ok(())
    }
}
