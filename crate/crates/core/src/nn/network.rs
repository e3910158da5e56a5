use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{self, LayerKind, LayerSpec, Window};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Architecture description: the per-sample input shape plus the layer stack.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

/// Weight and bias buffers of one layer. Empty for parameter-free layers.
///
/// Also used for gradients and optimizer velocity, which share the layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    fn zeros_like(other: &LayerParams) -> Self {
        LayerParams {
            weight: vec![0.0; other.weight.len()],
            bias: vec![0.0; other.bias.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(self.bias.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Gradient of a scalar objective with respect to every parameter, laid out
/// like [`Network::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net.layers.iter().map(|l| LayerParams::zeros_like(&l.params)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(LayerParams::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat view in layer order, weights before biases.
    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.iter().copied()).collect()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.iter_mut().for_each(|v| *v *= s);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub params: LayerParams,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        self.spec.kind()
    }

    fn window(&self) -> Window {
        match self.spec {
            LayerSpec::Conv2d { kernel, stride, .. } => Window::new(&self.input_shape, kernel, stride),
            LayerSpec::MaxPool2d { size, stride } | LayerSpec::AvgPool2d { size, stride } => {
                Window::new(&self.input_shape, size, stride)
            }
            _ => unreachable!("window requested for a non-spatial layer"),
        }
    }
}

/// Sequential network with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

/// Post-operator activations recorded by one forward pass.
///
/// Every layer except `flatten` contributes one recorded activation, so
/// `len()` is the network depth K. The batch input is kept as well, since
/// backward needs each layer's input.
#[derive(Clone, Debug)]
pub struct ActivationTrace {
    input: Tensor,
    outputs: Vec<Tensor>,
    recorded: Vec<usize>,
    kinds: Vec<LayerKind>,
}

impl ActivationTrace {
    /// Number of recorded layers (K).
    pub fn len(&self) -> usize {
        self.recorded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recorded.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.input.batch()
    }

    pub fn input(&self) -> &Tensor {
        &self.input
    }

    /// Activation φ_k of the k-th recorded layer, batch-major.
    pub fn activation(&self, k: usize) -> &Tensor {
        &self.outputs[self.recorded[k]]
    }

    pub fn activations(&self) -> impl Iterator<Item = &Tensor> {
        self.recorded.iter().map(|&i| &self.outputs[i])
    }

    /// Per-sample dimensionality d_k.
    pub fn dim(&self, k: usize) -> usize {
        self.activation(k).row_len()
    }

    pub fn kind(&self, k: usize) -> LayerKind {
        self.kinds[k]
    }

    /// Index into the network's layer list of the k-th recorded layer.
    pub fn layer_index(&self, k: usize) -> usize {
        self.recorded[k]
    }

    pub(crate) fn input_of(&self, i: usize) -> &Tensor {
        if i == 0 {
            &self.input
        } else {
            &self.outputs[i - 1]
        }
    }

    pub fn logits(&self) -> &Tensor {
        self.outputs.last().expect("trace of a non-empty network")
    }
}

/// Builds a network and initializes weights uniformly in ±sqrt(6 / fan_in);
/// biases start at zero.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<Network> {
    let mut net = Network::with_zero_params(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut net.layers {
        let fan_in = layer.spec.fan_in();
        if fan_in == 0 {
            continue;
        }
        let bound = (6.0 / fan_in as f64).sqrt();
        for w in &mut layer.params.weight {
            *w = rng.random_range(-bound..bound);
        }
    }
    Ok(net)
}

impl Network {
    /// Validates the spec and allocates zeroed parameters.
    pub fn with_zero_params(spec: &NetworkSpec) -> Result<Network> {
        if spec.layers.is_empty() {
            return Err(Error::EmptyNetwork);
        }
        if spec.input_shape.is_empty() || spec.input_shape.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "input shape {:?} must be non-empty with positive extents",
                spec.input_shape
            )));
        }
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut shape = spec.input_shape.clone();
        for (i, ls) in spec.layers.iter().enumerate() {
            let out = ls.output_shape(&shape).map_err(|detail| {
                if i == 0 {
                    Error::InvalidLayer {
                        index: 0,
                        kind: ls.kind().as_str(),
                        detail: format!("does not accept network input: {detail}"),
                    }
                } else {
                    Error::IncompatibleLayers {
                        prev: i - 1,
                        prev_kind: spec.layers[i - 1].kind().as_str(),
                        next: i,
                        next_kind: ls.kind().as_str(),
                        detail,
                    }
                }
            })?;
            let (nw, nb) = ls.param_shape();
            layers.push(Layer {
                spec: *ls,
                input_shape: shape,
                output_shape: out.clone(),
                params: LayerParams {
                    weight: vec![0.0; nw],
                    bias: vec![0.0; nb],
                },
            });
            shape = out;
        }
        if shape.len() != 1 {
            return Err(Error::InvalidLayer {
                index: layers.len() - 1,
                kind: layers.last().unwrap().kind().as_str(),
                detail: format!("network must end in flat logits, got shape {shape:?}"),
            });
        }
        Ok(Network {
            input_shape: spec.input_shape.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec {
            input_shape: self.input_shape.clone(),
            layers: self.layers.iter().map(|l| l.spec).collect(),
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn classes(&self) -> usize {
        self.layers.last().unwrap().output_shape[0]
    }

    /// Total parameter count m.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.params.len()).sum()
    }

    /// Number of layers producing a recorded activation (K).
    pub fn depth(&self) -> usize {
        self.layers.iter().filter(|l| l.kind() != LayerKind::Flatten).count()
    }

    pub fn params(&self) -> impl Iterator<Item = &LayerParams> {
        self.layers.iter().map(|l| &l.params)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut LayerParams> {
        self.layers.iter_mut().map(|l| &mut l.params)
    }

    /// Flat parameter vector in layer order, weights before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params().flat_map(|p| p.iter().copied()).collect()
    }

    /// Reads flat parameter `index` (same ordering as [`Network::flat_params`]).
    pub fn param(&self, index: usize) -> f64 {
        *self.params().flat_map(|p| p.iter()).nth(index).expect("parameter index in range")
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        *self
            .params_mut()
            .flat_map(|p| p.iter_mut())
            .nth(index)
            .expect("parameter index in range") = value;
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.shape().len() != self.input_shape.len() + 1 || batch.shape()[1..] != self.input_shape[..] {
            let mut expected = vec![batch.batch()];
            expected.extend_from_slice(&self.input_shape);
            return Err(Error::ShapeMismatch {
                context: "network input",
                expected,
                found: batch.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Runs the batch through every layer, returning logits and the trace.
    pub fn forward(&self, batch: &Tensor) -> Result<(Tensor, ActivationTrace)> {
        self.check_batch(batch)?;
        let n = batch.batch();
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { batch } else { &outputs[i - 1] };
            let mut shape = vec![n];
            shape.extend_from_slice(&layer.output_shape);
            let mut y = Tensor::zeros(shape);
            match layer.spec {
                LayerSpec::Dense { .. } => {
                    for b in 0..n {
                        layer::dense_forward(x.row(b), &layer.params.weight, &layer.params.bias, y.row_mut(b));
                    }
                }
                LayerSpec::Conv2d { out_channels, .. } => {
                    let win = layer.window();
                    for b in 0..n {
                        layer::conv_forward(
                            x.row(b),
                            &win,
                            out_channels,
                            &layer.params.weight,
                            &layer.params.bias,
                            y.row_mut(b),
                        );
                    }
                }
                LayerSpec::Relu => {
                    for (o, &v) in y.data_mut().iter_mut().zip(x.data()) {
                        *o = if v > 0.0 { v } else { 0.0 };
                    }
                }
                LayerSpec::MaxPool2d { .. } => {
                    let win = layer.window();
                    for b in 0..n {
                        let xr = x.row(b);
                        let idx = layer::maxpool_argmax(xr, &win);
                        for (o, i) in y.row_mut(b).iter_mut().zip(idx) {
                            *o = xr[i];
                        }
                    }
                }
                LayerSpec::AvgPool2d { .. } => {
                    let win = layer.window();
                    for b in 0..n {
                        layer::avgpool_forward(x.row(b), &win, y.row_mut(b));
                    }
                }
                LayerSpec::Flatten => y.data_mut().copy_from_slice(x.data()),
            }
            outputs.push(y);
        }
        let (recorded, kinds): (Vec<usize>, Vec<LayerKind>) = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind() != LayerKind::Flatten)
            .map(|(i, l)| (i, l.kind()))
            .unzip();
        let logits = outputs.last().unwrap().clone();
        Ok((
            logits,
            ActivationTrace {
                input: batch.clone(),
                outputs,
                recorded,
                kinds,
            },
        ))
    }

    /// Gradient of a loss with respect to the parameters, given its gradient
    /// with respect to the logits.
    pub fn backward(&self, trace: &ActivationTrace, dlogits: &Tensor) -> Result<Gradients> {
        self.backward_with_adjoints(trace, Some(dlogits), None)
    }

    /// One reverse sweep that accumulates `dlogits` at the output and, when
    /// given, `adjoints[k]` at the k-th recorded activation. The result is the
    /// parameter gradient of the sum of all injected scalar objectives.
    pub fn backward_with_adjoints(
        &self,
        trace: &ActivationTrace,
        dlogits: Option<&Tensor>,
        adjoints: Option<&[Tensor]>,
    ) -> Result<Gradients> {
        self.check_trace(trace)?;
        let n = trace.batch();
        if let Some(d) = dlogits {
            if d.shape() != trace.logits().shape() {
                return Err(Error::ShapeMismatch {
                    context: "logit gradient",
                    expected: trace.logits().shape().to_vec(),
                    found: d.shape().to_vec(),
                });
            }
        }
        if let Some(adj) = adjoints {
            if adj.len() != trace.len() {
                return Err(Error::StaleTrace(format!(
                    "{} adjoints for {} recorded layers",
                    adj.len(),
                    trace.len()
                )));
            }
            for (k, a) in adj.iter().enumerate() {
                if a.shape() != trace.activation(k).shape() {
                    return Err(Error::ShapeMismatch {
                        context: "activation adjoint",
                        expected: trace.activation(k).shape().to_vec(),
                        found: a.shape().to_vec(),
                    });
                }
            }
        }

        let mut grads = Gradients::zeros_like(self);
        let mut upstream = match dlogits {
            Some(d) => d.clone(),
            None => Tensor::zeros(trace.logits().shape().to_vec()),
        };
        let mut k = trace.len();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if layer.kind() != LayerKind::Flatten {
                k -= 1;
                if let Some(adj) = adjoints {
                    for (u, a) in upstream.data_mut().iter_mut().zip(adj[k].data()) {
                        *u += a;
                    }
                }
            }
            let x = trace.input_of(i);
            let need_dx = i > 0;
            let mut dx = Tensor::zeros(x.shape().to_vec());
            let g = &mut grads.layers[i];
            match layer.spec {
                LayerSpec::Dense { .. } => {
                    for b in 0..n {
                        let dxr = if need_dx { Some(dx.row_mut(b)) } else { None };
                        layer::dense_backward(
                            x.row(b),
                            &layer.params.weight,
                            upstream.row(b),
                            &mut g.weight,
                            &mut g.bias,
                            dxr,
                        );
                    }
                }
                LayerSpec::Conv2d { out_channels, .. } => {
                    let win = layer.window();
                    for b in 0..n {
                        let dxr = if need_dx { Some(dx.row_mut(b)) } else { None };
                        layer::conv_backward(
                            x.row(b),
                            &win,
                            out_channels,
                            &layer.params.weight,
                            upstream.row(b),
                            &mut g.weight,
                            &mut g.bias,
                            dxr,
                        );
                    }
                }
                LayerSpec::Relu => {
                    for ((d, &xv), &u) in dx.data_mut().iter_mut().zip(x.data()).zip(upstream.data()) {
                        *d = if xv > 0.0 { u } else { 0.0 };
                    }
                }
                LayerSpec::MaxPool2d { .. } => {
                    let win = layer.window();
                    for b in 0..n {
                        let idx = layer::maxpool_argmax(x.row(b), &win);
                        let up = upstream.row(b).to_vec();
                        let dxr = dx.row_mut(b);
                        for (j, u) in idx.into_iter().zip(up) {
                            dxr[j] += u;
                        }
                    }
                }
                LayerSpec::AvgPool2d { .. } => {
                    let win = layer.window();
                    for b in 0..n {
                        let up = upstream.row(b).to_vec();
                        layer::avgpool_backward(&up, &win, dx.row_mut(b));
                    }
                }
                LayerSpec::Flatten => dx.data_mut().copy_from_slice(upstream.data()),
            }
            upstream = dx;
        }
        Ok(grads)
    }

    fn check_trace(&self, trace: &ActivationTrace) -> Result<()> {
        if trace.outputs.len() != self.layers.len() {
            return Err(Error::StaleTrace(format!(
                "trace has {} layer outputs, network has {} layers",
                trace.outputs.len(),
                self.layers.len()
            )));
        }
        let n = trace.batch();
        if trace.input.shape()[1..] != self.input_shape[..] {
            return Err(Error::StaleTrace(format!(
                "trace input {:?} does not match network input {:?}",
                &trace.input.shape()[1..],
                self.input_shape
            )));
        }
        for (i, (layer, out)) in self.layers.iter().zip(&trace.outputs).enumerate() {
            if out.batch() != n || out.shape()[1..] != layer.output_shape[..] {
                return Err(Error::StaleTrace(format!(
                    "layer {i} ({}) output {:?} does not match expected {:?}",
                    layer.kind(),
                    &out.shape()[1..],
                    layer.output_shape
                )));
            }
        }
        Ok(())
    }
}
