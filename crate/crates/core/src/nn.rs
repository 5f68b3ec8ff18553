//! Dense feed-forward networks with exact reverse-mode gradients and Adam.
//!
//! A [`DenseNet`] is a stack of affine layers, each followed by an element-wise
//! activation. Weights are stored row-major with shape `(outputs, inputs)`.
//! There is no minibatch abstraction: callers run [`DenseNet::forward`] per
//! sample, accumulate into a [`GradientSet`] with [`DenseNet::backward_into`],
//! and hand the (scaled) sum to an [`AdamState`].

use alloc::vec;
use alloc::vec::Vec;

use rand::distr::{Distribution, Uniform};
use rand::Rng;

use crate::error::{check_finite, check_len, Error, Result};

/// Element-wise nonlinearity applied after a layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    /// Stable one-byte code used by the model file format.
    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Relu => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Relu),
            _ => None,
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => libm::tanh(x),
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    fn slope(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One affine layer plus activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    pub fn new(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        weights: Vec<f64>,
        biases: Vec<f64>,
    ) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::InvalidConfig("layer sizes must be positive".into()));
        }
        check_len("layer weights", inputs * outputs, weights.len())?;
        check_len("layer biases", outputs, biases.len())?;
        check_finite("layer weights", &weights)?;
        check_finite("layer biases", &biases)?;
        Ok(Self {
            inputs,
            outputs,
            activation,
            weights,
            biases,
        })
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Result<Self> {
        Self::new(
            inputs,
            outputs,
            activation,
            vec![0.0; inputs * outputs],
            vec![0.0; outputs],
        )
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Row-major `(outputs, inputs)` weight matrix.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    #[inline]
    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.biases)
                .map(|(row, b)| self.activation.apply(dot(row, x) + b)),
        );
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-layer activations recorded by a forward pass.
///
/// `activations[0]` is the input and `activations[k + 1]` the output of layer `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// A dense feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

impl DenseNet {
    /// Glorot-uniform weights and zero biases. Hidden layers use `hidden`, the
    /// output layer is linear.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, hidden)?;
        for layer in &mut net.layers {
            let limit = libm::sqrt(6.0 / (layer.inputs + layer.outputs) as f64);
            let dist = Uniform::new_inclusive(-limit, limit)
                .map_err(|_| Error::InvalidConfig("bad init range".into()))?;
            for w in &mut layer.weights {
                *w = dist.sample(rng);
            }
        }
        Ok(net)
    }

    /// All-zero network with the given shape.
    pub fn zeros(sizes: &[usize], hidden: Activation) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidConfig(
                "a network needs at least an input and an output size".into(),
            ));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let act = if k == last { Activation::Identity } else { hidden };
                Layer::zeros(w[0], w[1], act)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network has no layers".into()));
        }
        for pair in layers.windows(2) {
            check_len("consecutive layer sizes", pair[0].outputs, pair[1].inputs)?;
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.layers.len() + 1);
        sizes.push(self.input_size());
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Parameter by flat index: each layer's weights (row-major) then biases.
    pub fn parameter(&self, index: usize) -> Option<f64> {
        let mut i = index;
        for l in &self.layers {
            if i < l.weights.len() {
                return Some(l.weights[i]);
            }
            i -= l.weights.len();
            if i < l.biases.len() {
                return Some(l.biases[i]);
            }
            i -= l.biases.len();
        }
        None
    }

    pub(crate) fn parameter_mut(&mut self, index: usize) -> Option<&mut f64> {
        let mut i = index;
        for l in &mut self.layers {
            if i < l.weights.len() {
                return Some(&mut l.weights[i]);
            }
            i -= l.weights.len();
            if i < l.biases.len() {
                return Some(&mut l.biases[i]);
            }
            i -= l.biases.len();
        }
        None
    }

    /// Multiplies the output layer's weights by `factor`.
    pub(crate) fn scale_output_weights(&mut self, factor: f64) {
        if let Some(l) = self.layers.last_mut() {
            l.weights.iter_mut().for_each(|w| *w *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// Forward pass retaining what [`DenseNet::backward`] needs.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        check_len("network input", self.input_size(), input.len())?;
        check_finite("network input", input)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for layer in &self.layers {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.forward_into(activations.last().expect("non-empty"), &mut out);
            activations.push(out);
        }
        let output = activations.last().expect("non-empty").clone();
        Ok((output, ForwardCache { activations }))
    }

    /// Forward pass without a cache.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len("network input", self.input_size(), input.len())?;
        check_finite("network input", input)?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, &mut next);
            core::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Gradient of `<output_grad, output>` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<GradientSet> {
        let mut grads = GradientSet::zeros_like(self);
        self.backward_into(cache, output_grad, &mut grads)?;
        Ok(grads)
    }

    /// Like [`DenseNet::backward`] but adds into an existing gradient set.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        grads: &mut GradientSet,
    ) -> Result<()> {
        self.check_cache(cache)?;
        check_len("output gradient", self.output_size(), output_grad.len())?;
        check_finite("output gradient", output_grad)?;
        if !grads.congruent_with(self) {
            return Err(Error::InvalidConfig(
                "gradient set shape does not match network".into(),
            ));
        }

        let acts = &cache.activations;
        let mut delta: Vec<f64> = output_grad
            .iter()
            .zip(&acts[self.layers.len()])
            .map(|(g, &y)| g * self.layers[self.layers.len() - 1].activation.slope(y))
            .collect();
        let mut below = Vec::new();

        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let x = &acts[k];
            let g = &mut grads.layers[k];
            for ((grow, d), gb) in g
                .weights
                .chunks_exact_mut(layer.inputs)
                .zip(&delta)
                .zip(&mut g.biases)
            {
                *gb += d;
                if *d != 0.0 {
                    for (gw, xi) in grow.iter_mut().zip(x) {
                        *gw += d * xi;
                    }
                }
            }
            if k == 0 {
                break;
            }
            below.clear();
            below.resize(layer.inputs, 0.0);
            for (row, d) in layer.weights.chunks_exact(layer.inputs).zip(&delta) {
                if *d != 0.0 {
                    for (b, w) in below.iter_mut().zip(row) {
                        *b += d * w;
                    }
                }
            }
            let act = self.layers[k - 1].activation;
            for (b, &y) in below.iter_mut().zip(x) {
                *b *= act.slope(y);
            }
            core::mem::swap(&mut delta, &mut below);
        }
        Ok(())
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        check_len(
            "forward cache depth",
            self.layers.len() + 1,
            cache.activations.len(),
        )?;
        check_len("forward cache input", self.input_size(), cache.activations[0].len())?;
        for (layer, act) in self.layers.iter().zip(&cache.activations[1..]) {
            check_len("forward cache activation", layer.outputs, act.len())?;
        }
        Ok(())
    }
}

/// Gradients for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// One gradient value per network parameter, laid out like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGradient>,
}

impl GradientSet {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn congruent_with(&self, net: &DenseNet) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weights.len() == l.weights.len() && g.biases.len() == l.biases.len()
            })
    }

    pub fn clear(&mut self) {
        for v in self.values_mut() {
            *v = 0.0;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }

    /// Flat view in the same order as [`DenseNet::parameter`].
    pub fn values(&self) -> impl Iterator<Item = &f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam step for a scalar. Pure, so callers can validate
/// every candidate before committing any of them.
#[inline]
fn adam_candidate(
    cfg: &AdamConfig,
    step: u64,
    p: f64,
    g: f64,
    m: f64,
    v: f64,
) -> (f64, f64, f64) {
    let m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    let v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    let c1 = 1.0 - libm::pow(cfg.beta1, step as f64);
    let c2 = 1.0 - libm::pow(cfg.beta2, step as f64);
    let p = p - cfg.lr * (m / c1) / (libm::sqrt(v / c2) + cfg.epsilon);
    (p, m, v)
}

/// Adam moments and step counter for a plain parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorAdam {
    config: AdamConfig,
    step_count: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl VectorAdam {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            step_count: 0,
            first: vec![0.0; len],
            second: vec![0.0; len],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len("adam parameters", self.first.len(), params.len())?;
        check_len("adam gradient", self.first.len(), grads.len())?;
        check_finite("gradient", grads)?;
        let step = self.step_count + 1;
        for i in 0..params.len() {
            let (p, _, _) =
                adam_candidate(&self.config, step, params[i], grads[i], self.first[i], self.second[i]);
            if !p.is_finite() {
                return Err(Error::NonFinite("updated parameter"));
            }
        }
        for i in 0..params.len() {
            let (p, m, v) =
                adam_candidate(&self.config, step, params[i], grads[i], self.first[i], self.second[i]);
            params[i] = p;
            self.first[i] = m;
            self.second[i] = v;
        }
        self.step_count = step;
        Ok(())
    }
}

/// Adam optimizer state for one [`DenseNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    step_count: u64,
    first: GradientSet,
    second: GradientSet,
}

impl AdamState {
    pub fn new(net: &DenseNet, config: AdamConfig) -> Self {
        Self {
            config,
            step_count: 0,
            first: GradientSet::zeros_like(net),
            second: GradientSet::zeros_like(net),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &GradientSet {
        &self.first
    }

    pub fn second_moment(&self) -> &GradientSet {
        &self.second
    }

    /// One Adam step. On error neither the network nor the state changes.
    pub fn update(&mut self, net: &mut DenseNet, grads: &GradientSet) -> Result<()> {
        if !grads.congruent_with(net) || !self.first.congruent_with(net) {
            return Err(Error::InvalidConfig(
                "adam state, gradients and network shapes differ".into(),
            ));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        let step = self.step_count + 1;
        let cfg = self.config;

        for (k, layer) in net.layers.iter().enumerate() {
            let (g, m, v) = (&grads.layers[k], &self.first.layers[k], &self.second.layers[k]);
            let ok = layer
                .weights
                .iter()
                .zip(&g.weights)
                .zip(m.weights.iter().zip(&v.weights))
                .chain(
                    layer
                        .biases
                        .iter()
                        .zip(&g.biases)
                        .zip(m.biases.iter().zip(&v.biases)),
                )
                .all(|((&p, &g), (&m, &v))| adam_candidate(&cfg, step, p, g, m, v).0.is_finite());
            if !ok {
                return Err(Error::NonFinite("updated parameter"));
            }
        }

        for (k, layer) in net.layers.iter_mut().enumerate() {
            let g = &grads.layers[k];
            let m = &mut self.first.layers[k];
            let v = &mut self.second.layers[k];
            apply(&cfg, step, &mut layer.weights, &g.weights, &mut m.weights, &mut v.weights);
            apply(&cfg, step, &mut layer.biases, &g.biases, &mut m.biases, &mut v.biases);
        }
        self.step_count = step;
        Ok(())
    }
}

fn apply(cfg: &AdamConfig, step: u64, p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]) {
    for i in 0..p.len() {
        let (np, nm, nv) = adam_candidate(cfg, step, p[i], g[i], m[i], v[i]);
        p[i] = np;
        m[i] = nm;
        v[i] = nv;
    }
}

/// Scalar loss built from a network output, used by [`gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    /// `<c, output>`
    Linear(Vec<f64>),
    /// `0.5 * |output - target|^2`
    SquaredError(Vec<f64>),
}

impl LossSpec {
    pub fn value(&self, output: &[f64]) -> f64 {
        match self {
            LossSpec::Linear(c) => dot(c, output),
            LossSpec::SquaredError(t) => {
                0.5 * output
                    .iter()
                    .zip(t)
                    .map(|(o, t)| (o - t) * (o - t))
                    .sum::<f64>()
            }
        }
    }

    pub fn gradient(&self, output: &[f64]) -> Vec<f64> {
        match self {
            LossSpec::Linear(c) => c.clone(),
            LossSpec::SquaredError(t) => output.iter().zip(t).map(|(o, t)| o - t).collect(),
        }
    }

    fn len(&self) -> usize {
        match self {
            LossSpec::Linear(v) | LossSpec::SquaredError(v) => v.len(),
        }
    }
}

/// Largest parameter count [`gradient_check`] accepts.
pub const GRADIENT_CHECK_MAX_PARAMS: usize = 10_000;
/// Central-difference step used by [`gradient_check`].
pub const GRADIENT_CHECK_STEP: f64 = 1e-5;

/// Compares reverse-mode gradients against central differences and returns
/// `max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn gradient_check(net: &DenseNet, input: &[f64], loss: &LossSpec) -> Result<f64> {
    if net.parameter_count() > GRADIENT_CHECK_MAX_PARAMS {
        return Err(Error::InvalidConfig(
            "network too large for finite differencing".into(),
        ));
    }
    check_len("loss specification", net.output_size(), loss.len())?;
    let (out, cache) = net.forward(input)?;
    let analytic = net.backward(&cache, &loss.gradient(&out))?;

    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.values().enumerate() {
        let original = net.parameter(i).expect("index in range");
        *probe.parameter_mut(i).expect("index in range") = original + GRADIENT_CHECK_STEP;
        let plus = loss.value(&probe.predict(input)?);
        *probe.parameter_mut(i).expect("index in range") = original - GRADIENT_CHECK_STEP;
        let minus = loss.value(&probe.predict(input)?);
        *probe.parameter_mut(i).expect("index in range") = original;

        let numeric = (plus - minus) / (2.0 * GRADIENT_CHECK_STEP);
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_tanh() -> DenseNet {
        let l1 = Layer::new(
            2,
            2,
            Activation::Tanh,
            vec![0.3, -0.2, 0.1, 0.4],
            vec![0.05, -0.1],
        )
        .unwrap();
        let l2 = Layer::new(2, 1, Activation::Identity, vec![0.7, -0.5], vec![0.2]).unwrap();
        DenseNet::from_layers(vec![l1, l2]).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = DenseNet::zeros(&[3, 5, 2], Activation::Tanh).unwrap();
        assert_eq!(net.predict(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = Layer::new(
            3,
            3,
            Activation::Identity,
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            vec![0.0; 3],
        )
        .unwrap();
        let net = DenseNet::from_layers(vec![layer]).unwrap();
        assert_eq!(net.predict(&[0.5, -1.5, 2.0]).unwrap(), vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn tanh_net_matches_scalar_evaluation() {
        let x = [0.8, -0.6];
        let h0 = libm::tanh(0.3 * 0.8 + -0.2 * -0.6 + 0.05);
        let h1 = libm::tanh(0.1 * 0.8 + 0.4 * -0.6 - 0.1);
        let expected = 0.7 * h0 - 0.5 * h1 + 0.2;
        let got = tiny_tanh().predict(&x).unwrap()[0];
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn forward_rejects_bad_input() {
        let net = tiny_tanh();
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert_eq!(
            net.forward(&[f64::NAN, 0.0]).unwrap_err(),
            Error::NonFinite("network input")
        );
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::new(&[4, 8, 3], Activation::Tanh, &mut rng).unwrap();
        let (_, cache) = net.forward(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let g = net.backward(&cache, &[0.0; 3]).unwrap();
        assert!(g.values().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_weight_gradient_is_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = DenseNet::new(&[3, 2], Activation::Tanh, &mut rng).unwrap();
        let x = [0.4, -1.1, 2.5];
        let (_, cache) = net.forward(&x).unwrap();
        let g = net.backward(&cache, &[1.0, 0.0]).unwrap();
        assert_eq!(&g.layers[0].weights[..3], &x);
        assert_eq!(&g.layers[0].weights[3..], &[0.0; 3]);
        assert_eq!(g.layers[0].biases, vec![1.0, 0.0]);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DenseNet::new(&[2, 4, 1], Activation::Tanh, &mut rng).unwrap();
        let b = DenseNet::new(&[2, 5, 1], Activation::Tanh, &mut rng).unwrap();
        let (_, cache) = a.forward(&[0.1, 0.2]).unwrap();
        assert!(b.backward(&cache, &[1.0]).is_err());
        assert!(a.backward(&cache, &[f64::INFINITY]).is_err());
    }

    #[test]
    fn gradient_check_identity_quadratic() {
        let layer = Layer::new(
            2,
            2,
            Activation::Identity,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0],
        )
        .unwrap();
        let net = DenseNet::from_layers(vec![layer]).unwrap();
        let err =
            gradient_check(&net, &[0.7, -0.3], &LossSpec::SquaredError(vec![0.2, 0.5])).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn gradient_check_zero_network() {
        let net = DenseNet::zeros(&[3, 4, 2], Activation::Tanh).unwrap();
        let err = gradient_check(&net, &[1.0, 2.0, 3.0], &LossSpec::Linear(vec![1.0, -1.0]))
            .unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn gradient_check_random_tanh_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = DenseNet::new(&[5, 16, 16, 3], Activation::Tanh, &mut rng).unwrap();
        for _ in 0..5 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let err = gradient_check(&net, &x, &LossSpec::SquaredError(t)).unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn gradient_check_rejects_large_nets() {
        let net = DenseNet::zeros(&[100, 200], Activation::Tanh).unwrap();
        assert!(gradient_check(&net, &[0.0; 100], &LossSpec::Linear(vec![0.0; 200])).is_err());
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = DenseNet::new(&[2, 3, 1], Activation::Tanh, &mut rng).unwrap();
        let before = net.clone();
        let mut adam = AdamState::new(&net, AdamConfig::default());
        let zero = GradientSet::zeros_like(&net);
        adam.update(&mut net, &zero).unwrap();
        assert_eq!(net, before);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // t = 1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let cfg = AdamConfig::with_lr(0.01);
        for g in [3.0, -0.25, 1e-3] {
            let mut p = [1.0];
            let mut adam = VectorAdam::new(1, cfg);
            adam.update(&mut p, &[g]).unwrap();
            let expected = 1.0 - 0.01 * g / (libm::fabs(g) + 1e-8);
            assert!((p[0] - expected).abs() < 1e-15);
            assert!(((1.0 - p[0]) - 0.01 * g.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn adam_second_moment_accumulates() {
        let layer = Layer::new(1, 1, Activation::Identity, vec![0.5], vec![0.0]).unwrap();
        let mut net = DenseNet::from_layers(vec![layer]).unwrap();
        let mut adam = AdamState::new(&net, AdamConfig::default());
        let mut g = GradientSet::zeros_like(&net);
        g.layers[0].weights[0] = 0.3;
        adam.update(&mut net, &g).unwrap();
        let v1 = adam.second_moment().layers[0].weights[0];
        adam.update(&mut net, &g).unwrap();
        let v2 = adam.second_moment().layers[0].weights[0];
        assert!(v2 > v1 && v1 > 0.0);
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn adam_rejects_non_finite_gradient_without_mutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = DenseNet::new(&[2, 2], Activation::Tanh, &mut rng).unwrap();
        let before = net.clone();
        let mut adam = AdamState::new(&net, AdamConfig::default());
        let mut g = GradientSet::zeros_like(&net);
        g.layers[0].biases[1] = f64::NAN;
        assert_eq!(adam.update(&mut net, &g), Err(Error::NonFinite("gradient")));
        assert_eq!(net, before);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn adam_rejects_overflowing_result() {
        let layer = Layer::new(1, 1, Activation::Identity, vec![f64::MAX], vec![0.0]).unwrap();
        let mut net = DenseNet::from_layers(vec![layer]).unwrap();
        let mut adam = AdamState::new(&net, AdamConfig::with_lr(f64::MAX));
        let mut g = GradientSet::zeros_like(&net);
        g.layers[0].weights[0] = -1.0;
        assert!(adam.update(&mut net, &g).is_err());
        assert!(net.is_finite());
    }

    #[test]
    fn parameter_indexing_covers_all() {
        let net = tiny_tanh();
        assert_eq!(net.parameter_count(), 9);
        assert_eq!(net.parameter(0), Some(0.3));
        assert_eq!(net.parameter(4), Some(0.05));
        assert_eq!(net.parameter(8), Some(0.2));
        assert_eq!(net.parameter(9), None);
        assert_eq!(net.layer_sizes(), vec![2, 2, 1]);
    }
}
