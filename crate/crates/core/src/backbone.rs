//! The trainable classifier: a dense trunk ending in a fixed-width feature
//! layer, followed by one linear classification head per learned task.
//!
//! Head outputs are concatenated in the order the heads were added, so the
//! logits of the classes learned in stream `t` occupy a contiguous column range.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{seeded_rng, Matrix, Vector};

/// Width of the penultimate feature layer in the default trunk.
pub const DEFAULT_FEATURE_DIM: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// `y = act(W x + b)` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub biases: Vector,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, biases: Vector, activation: Activation) -> Result<Self> {
        if biases.dim() != weights.rows() {
            return Err(Error::shape(
                "DenseLayer::new",
                format!(
                    "{} biases for {} output units",
                    biases.dim(),
                    weights.rows()
                ),
            ));
        }
        Ok(Self {
            weights,
            biases,
            activation,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            weights: Matrix::from_vec(output, input, data).expect("sized above"),
            biases: Vector::zeros(output),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    /// Pre-activations for a batch: `x Wᵀ + b`.
    fn affine(&self, x: &Matrix) -> Matrix {
        let (n, out) = (x.rows(), self.output_dim());
        let mut z = Matrix::zeros(n, out);
        for i in 0..n {
            let xi = x.row(i);
            let zi = z.row_mut(i);
            for (o, zo) in zi.iter_mut().enumerate() {
                let w = self.weights.row(o);
                *zo = self.biases[o] + w.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        z
    }
}

/// A linear classification head over the feature layer.
pub type Head = DenseLayer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub const fn new(width: usize, activation: Activation) -> Self {
        Self { width, activation }
    }
}

/// `input → 64 ReLU → 128 identity`.
pub fn default_trunk() -> Vec<LayerSpec> {
    vec![
        LayerSpec::new(64, Activation::Relu),
        LayerSpec::new(DEFAULT_FEATURE_DIM, Activation::Identity),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalModel {
    input_dim: usize,
    trunk: Vec<DenseLayer>,
    heads: Vec<Head>,
    classes_per_head: usize,
    /// Seeds used to initialise the trunk and each head, in order.
    seed_lineage: Vec<u64>,
}

/// Result of a forward pass: penultimate features and concatenated logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub features: Matrix,
    pub logits: Matrix,
}

/// Activations kept from a forward pass for reuse in [`IncrementalModel::backward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to trunk layer `l` is `inputs[l]`; `inputs[trunk.len()]` is the feature matrix.
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
    pub logits: Matrix,
}

impl ForwardCache {
    pub fn features(&self) -> &Matrix {
        self.inputs.last().expect("cache always holds the input")
    }
}

/// Gradients aligned one-to-one with the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterGradients {
    pub trunk: Vec<(Matrix, Vector)>,
    pub heads: Vec<(Matrix, Vector)>,
}

impl ParameterGradients {
    pub fn zeros_like(model: &IncrementalModel) -> Self {
        let z = |l: &DenseLayer| {
            (
                Matrix::zeros(l.weights.rows(), l.weights.cols()),
                Vector::zeros(l.biases.dim()),
            )
        };
        Self {
            trunk: model.trunk.iter().map(z).collect(),
            heads: model.heads.iter().map(z).collect(),
        }
    }

    /// Flat views in the same order as [`IncrementalModel::parameters_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.trunk
            .iter()
            .chain(&self.heads)
            .flat_map(|(w, b)| [w.as_slice(), &b[..]])
            .collect()
    }

    pub fn zero_trunk(&mut self) {
        for (w, b) in &mut self.trunk {
            w.as_mut_slice().fill(0.0);
            b.fill(0.0);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl IncrementalModel {
    /// Builds a model with a Glorot-initialised trunk and no heads.
    pub fn new(
        input_dim: usize,
        trunk: &[LayerSpec],
        classes_per_head: usize,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::domain("model input dimension must be positive"));
        }
        if classes_per_head == 0 {
            return Err(Error::domain("classes per head must be at least 1"));
        }
        if let Some(i) = trunk.iter().position(|s| s.width == 0) {
            return Err(Error::domain(format!("trunk layer {i} has zero width")));
        }
        let mut rng = seeded_rng(seed);
        let mut layers = Vec::with_capacity(trunk.len());
        let mut fan_in = input_dim;
        for spec in trunk {
            layers.push(DenseLayer::glorot(fan_in, spec.width, spec.activation, &mut rng));
            fan_in = spec.width;
        }
        Ok(Self {
            input_dim,
            trunk: layers,
            heads: Vec::new(),
            classes_per_head,
            seed_lineage: vec![seed],
        })
    }

    /// Assembles a model from explicit layers, checking that every shape chains.
    pub fn from_parts(
        input_dim: usize,
        trunk: Vec<DenseLayer>,
        heads: Vec<Head>,
        classes_per_head: usize,
    ) -> Result<Self> {
        let mut width = input_dim;
        for (i, l) in trunk.iter().enumerate() {
            if l.input_dim() != width {
                return Err(Error::shape(
                    format!("trunk layer {i}"),
                    format!("expects {} inputs, previous width is {width}", l.input_dim()),
                ));
            }
            width = l.output_dim();
        }
        for (i, h) in heads.iter().enumerate() {
            if h.input_dim() != width {
                return Err(Error::shape(
                    format!("head {i}"),
                    format!("expects {} inputs, feature width is {width}", h.input_dim()),
                ));
            }
        }
        Ok(Self {
            input_dim,
            trunk,
            heads,
            classes_per_head,
            seed_lineage: Vec::new(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.trunk.last().map_or(self.input_dim, |l| l.output_dim())
    }

    pub fn classes_per_head(&self) -> usize {
        self.classes_per_head
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn output_dim(&self) -> usize {
        self.heads.iter().map(|h| h.output_dim()).sum()
    }

    pub fn trunk(&self) -> &[DenseLayer] {
        &self.trunk
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn seed_lineage(&self) -> &[u64] {
        &self.seed_lineage
    }

    /// Appends a freshly initialised head with `k` outputs.
    pub fn expand_head(&mut self, k: usize, seed: u64) -> Result<()> {
        if k == 0 {
            return Err(Error::domain("a new head needs at least one output"));
        }
        let mut rng = seeded_rng(seed);
        self.heads.push(DenseLayer::glorot(
            self.feature_dim(),
            k,
            Activation::Identity,
            &mut rng,
        ));
        self.seed_lineage.push(seed);
        Ok(())
    }

    /// Functional form of [`IncrementalModel::expand_head`].
    pub fn with_new_head(&self, k: usize, seed: u64) -> Result<Self> {
        let mut m = self.clone();
        m.expand_head(k, seed)?;
        Ok(m)
    }

    pub fn forward(&self, x: &Matrix) -> Result<ForwardOutput> {
        let cache = self.forward_cached(x)?;
        let features = cache.features().clone();
        Ok(ForwardOutput {
            features,
            logits: cache.logits,
        })
    }

    /// Penultimate features only; heads are skipped.
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut a = x.clone();
        for l in &self.trunk {
            let mut z = l.affine(&a);
            for v in z.as_mut_slice() {
                *v = l.activation.apply(*v);
            }
            a = z;
        }
        Ok(a)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim {
            let context = if self.trunk.is_empty() {
                "head 0".to_string()
            } else {
                "trunk layer 0".to_string()
            };
            return Err(Error::shape(
                context,
                format!("input has {} columns, expected {}", x.cols(), self.input_dim),
            ));
        }
        Ok(())
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.trunk.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.trunk.len());
        inputs.push(x.clone());
        for l in &self.trunk {
            let z = l.affine(inputs.last().expect("seeded with x"));
            let mut a = z.clone();
            for v in a.as_mut_slice() {
                *v = l.activation.apply(*v);
            }
            pre_activations.push(z);
            inputs.push(a);
        }
        let features = inputs.last().expect("seeded with x");
        let n = features.rows();
        let mut logits = Matrix::zeros(n, self.output_dim());
        let mut offset = 0;
        for h in &self.heads {
            let out = h.affine(features);
            for i in 0..n {
                logits.row_mut(i)[offset..offset + h.output_dim()].copy_from_slice(out.row(i));
            }
            offset += h.output_dim();
        }
        Ok(ForwardCache {
            inputs,
            pre_activations,
            logits,
        })
    }

    /// Reverse-mode gradients of a loss whose gradient w.r.t. the logits is given.
    pub fn backward(&self, x: &Matrix, grad_logits: &Matrix) -> Result<ParameterGradients> {
        let cache = self.forward_cached(x)?;
        self.backward_cached(&cache, grad_logits)
    }

    pub fn backward_cached(
        &self,
        cache: &ForwardCache,
        grad_logits: &Matrix,
    ) -> Result<ParameterGradients> {
        if grad_logits.shape() != cache.logits.shape() {
            return Err(Error::shape(
                "backward",
                format!(
                    "upstream gradient {:?} vs logits {:?}",
                    grad_logits.shape(),
                    cache.logits.shape()
                ),
            ));
        }
        let features = cache.features();
        let n = features.rows();
        let fdim = features.cols();

        let mut heads = Vec::with_capacity(self.heads.len());
        let mut grad_features = Matrix::zeros(n, fdim);
        let mut offset = 0;
        for h in &self.heads {
            let k = h.output_dim();
            let mut gw = Matrix::zeros(k, fdim);
            let mut gb = Vector::zeros(k);
            for i in 0..n {
                let g = &grad_logits.row(i)[offset..offset + k];
                let f = features.row(i);
                for (o, &go) in g.iter().enumerate() {
                    if go == 0.0 {
                        continue;
                    }
                    gb[o] += go;
                    for (w, &fv) in gw.row_mut(o).iter_mut().zip(f) {
                        *w += go * fv;
                    }
                    for (gf, &w) in grad_features.row_mut(i).iter_mut().zip(h.weights.row(o)) {
                        *gf += go * w;
                    }
                }
            }
            heads.push((gw, gb));
            offset += k;
        }

        let mut trunk = vec![(Matrix::default(), Vector::default()); self.trunk.len()];
        let mut upstream = grad_features;
        for (l, layer) in self.trunk.iter().enumerate().rev() {
            let z = &cache.pre_activations[l];
            let a_in = &cache.inputs[l];
            let mut dz = upstream;
            for (d, &zv) in dz.as_mut_slice().iter_mut().zip(z.as_slice()) {
                *d *= layer.activation.derivative(zv);
            }
            let (out, inp) = layer.weights.shape();
            let mut gw = Matrix::zeros(out, inp);
            let mut gb = Vector::zeros(out);
            let mut down = Matrix::zeros(n, inp);
            for i in 0..n {
                let xi = a_in.row(i);
                for (o, &d) in dz.row(i).iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (w, &xv) in gw.row_mut(o).iter_mut().zip(xi) {
                        *w += d * xv;
                    }
                    if l > 0 {
                        for (dv, &w) in down.row_mut(i).iter_mut().zip(layer.weights.row(o)) {
                            *dv += d * w;
                        }
                    }
                }
            }
            trunk[l] = (gw, gb);
            upstream = down;
        }
        Ok(ParameterGradients { trunk, heads })
    }

    /// Flat mutable views of every parameter: per trunk layer then per head,
    /// weights before biases.
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.trunk
            .iter_mut()
            .chain(self.heads.iter_mut())
            .flat_map(|l| [l.weights.as_mut_slice(), &mut l.biases[..]])
            .collect()
    }

    pub fn parameters(&self) -> Vec<&[f64]> {
        self.trunk
            .iter()
            .chain(&self.heads)
            .flat_map(|l| [l.weights.as_slice(), &l.biases[..]])
            .collect()
    }

    /// Number of leading parameter slices that belong to the trunk.
    pub fn trunk_slice_count(&self) -> usize {
        self.trunk.len() * 2
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Immutable, shareable snapshot for use as a distillation teacher.
    pub fn clone_frozen(&self) -> FrozenModel {
        FrozenModel(Arc::new(self.clone()))
    }
}

/// A read-only model snapshot. There is no way to obtain a mutable reference.
#[derive(Debug, Clone)]
pub struct FrozenModel(Arc<IncrementalModel>);

impl FrozenModel {
    pub fn model(&self) -> &IncrementalModel {
        &self.0
    }

    pub fn forward(&self, x: &Matrix) -> Result<ForwardOutput> {
        self.0.forward(x)
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.0.forward_cached(x)?.logits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    /// Adam moments with decoupled weight decay.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub const fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Which parameters an optimizer is allowed to move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamScope {
    #[serde(alias = "full")]
    All,
    HeadsOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub scope: ParamScope,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            kind,
            learning_rate,
            weight_decay,
            scope: ParamScope::All,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step_count: 0,
        }
    }

    pub fn with_scope(mut self, scope: ParamScope) -> Self {
        self.scope = scope;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn moment_shapes(&self) -> Vec<usize> {
        self.first_moment.iter().map(Vec::len).collect()
    }

    /// Applies one update in place. Moment buffers are created on the first
    /// call and must keep matching the model afterwards.
    pub fn step(&mut self, model: &mut IncrementalModel, grads: &ParameterGradients) -> Result<()> {
        let skip = match self.scope {
            ParamScope::All => 0,
            ParamScope::HeadsOnly => model.trunk_slice_count(),
        };
        let g = grads.slices();
        let mut params = model.parameters_mut();
        if g.len() != params.len() || g.iter().zip(&params).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::shape(
                "optimizer step",
                "gradient layout does not match the model parameters",
            ));
        }
        if let OptimizerKind::Adam { .. } = self.kind {
            if self.first_moment.is_empty() {
                self.first_moment = params.iter().map(|p| vec![0.0; p.len()]).collect();
                self.second_moment = self.first_moment.clone();
            } else if self.moment_shapes() != params.iter().map(|p| p.len()).collect::<Vec<_>>() {
                return Err(Error::State(
                    "optimizer moments were built for a different model shape".into(),
                ));
            }
        }
        self.step_count += 1;
        let lr = self.learning_rate;
        let decay = self.weight_decay;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(&g).skip(skip) {
                    for (w, &gv) in p.iter_mut().zip(g.iter()) {
                        *w -= lr * gv + lr * decay * *w;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step_count as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (idx, (p, g)) in params.iter_mut().zip(&g).enumerate().skip(skip) {
                    let m = &mut self.first_moment[idx];
                    let v = &mut self.second_moment[idx];
                    for j in 0..p.len() {
                        let gv = g[j];
                        m[j] = beta1 * m[j] + (1.0 - beta1) * gv;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * gv * gv;
                        let update = (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                        p[j] -= lr * (update + decay * p[j]);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_model() -> IncrementalModel {
        let trunk = vec![DenseLayer::new(Matrix::identity(2), Vector::zeros(2), Activation::Identity).unwrap()];
        let head = DenseLayer::new(Matrix::identity(2), Vector::zeros(2), Activation::Identity).unwrap();
        IncrementalModel::from_parts(2, trunk, vec![head], 2).unwrap()
    }

    #[test]
    fn identity_composition() {
        let m = identity_model();
        let out = m.forward(&Matrix::from_rows(&[[1.0, 2.0]]).unwrap()).unwrap();
        assert_eq!(out.logits.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn empty_batch_passthrough() {
        let mut m = IncrementalModel::new(3, &default_trunk(), 4, 1).unwrap();
        m.expand_head(4, 2).unwrap();
        m.expand_head(4, 3).unwrap();
        let out = m.forward(&Matrix::zeros(0, 3)).unwrap();
        assert_eq!(out.logits.shape(), (0, 8));
        assert_eq!(out.features.shape(), (0, DEFAULT_FEATURE_DIM));
    }

    #[test]
    fn relu_layer() {
        let w = Matrix::from_rows(&[[1.0], [-1.0]]).unwrap();
        let l = DenseLayer::new(w, Vector::zeros(2), Activation::Relu).unwrap();
        let m = IncrementalModel::from_parts(1, vec![l], vec![], 1).unwrap();
        let out = m.forward(&Matrix::from_rows(&[[2.0]]).unwrap()).unwrap();
        assert_eq!(out.features.as_slice(), &[2.0, 0.0]);
    }

    #[test]
    fn wrong_input_width_names_layer() {
        let m = identity_model();
        let err = m.forward(&Matrix::zeros(1, 3)).unwrap_err();
        assert!(err.to_string().contains("trunk layer 0"), "{err}");
    }

    #[test]
    fn from_parts_rejects_bad_chain() {
        let trunk = vec![DenseLayer::new(Matrix::zeros(4, 2), Vector::zeros(4), Activation::Relu).unwrap()];
        let head = DenseLayer::new(Matrix::zeros(3, 5), Vector::zeros(3), Activation::Identity).unwrap();
        let err = IncrementalModel::from_parts(2, trunk, vec![head], 3).unwrap_err();
        assert!(err.to_string().contains("head 0"));
    }

    #[test]
    fn expand_head_grows_output_and_keeps_old_params() {
        let mut m = IncrementalModel::new(5, &default_trunk(), 5, 9).unwrap();
        m.expand_head(5, 1).unwrap();
        m.expand_head(5, 2).unwrap();
        let before = m.clone();
        m.expand_head(5, 3).unwrap();
        assert_eq!(m.head_count(), 3);
        assert_eq!(m.output_dim(), 15);
        for (a, b) in before.parameters().iter().zip(m.parameters().iter()) {
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        assert!(m.expand_head(0, 4).is_err());
    }

    #[test]
    fn expand_head_is_deterministic() {
        let base = IncrementalModel::new(4, &default_trunk(), 3, 0).unwrap();
        let a = base.with_new_head(3, 77).unwrap();
        let b = base.with_new_head(3, 77).unwrap();
        assert_eq!(a.heads()[0], b.heads()[0]);
        let c = base.with_new_head(3, 78).unwrap();
        assert_ne!(a.heads()[0], c.heads()[0]);
    }

    #[test]
    fn glorot_draws_are_centred_and_bounded() {
        // 100 x 100 head: 10^4 draws from U(-l, l) with l = sqrt(6/200).
        let trunk = vec![LayerSpec::new(100, Activation::Identity)];
        let m = IncrementalModel::new(3, &trunk, 100, 0)
            .unwrap()
            .with_new_head(100, 5)
            .unwrap();
        let w = m.heads()[0].weights.as_slice();
        assert_eq!(w.len(), 10_000);
        let limit = (6.0f64 / 200.0).sqrt();
        assert!(w.iter().all(|v| v.abs() <= limit));
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sigma = limit / 3f64.sqrt() / (w.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean} vs 3 sigma {}", 3.0 * sigma);
        assert!(m.heads()[0].biases.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m = IncrementalModel::new(3, &default_trunk(), 2, 4)
            .unwrap()
            .with_new_head(2, 1)
            .unwrap();
        let x = Matrix::from_rows(&[[0.1, -0.2, 0.3], [1.0, 0.5, -0.5]]).unwrap();
        let g = m.backward(&x, &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn single_linear_layer_gradient_is_outer_product() {
        // No trunk: the head acts on the raw input.
        let head = DenseLayer::new(
            Matrix::from_rows(&[[0.3, -0.1, 0.2], [0.5, 0.4, -0.6]]).unwrap(),
            Vector::zeros(2),
            Activation::Identity,
        )
        .unwrap();
        let m = IncrementalModel::from_parts(3, vec![], vec![head], 2).unwrap();
        let x = [1.5, -2.0, 0.5];
        let up = [0.7, -1.1];
        let g = m
            .backward(&Matrix::from_rows(&[x]).unwrap(), &Matrix::from_rows(&[up]).unwrap())
            .unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(g.heads[0].0[(o, i)], up[o] * x[i]);
            }
        }
        assert_eq!(&g.heads[0].1[..], &up);
    }

    #[test]
    fn backward_rejects_shape_mismatch() {
        let m = identity_model();
        let x = Matrix::zeros(2, 2);
        assert!(matches!(m.backward(&x, &Matrix::zeros(2, 3)), Err(Error::Shape { .. })));
    }

    fn scalar_model(w: f64) -> IncrementalModel {
        let head = DenseLayer::new(Matrix::from_rows(&[[w]]).unwrap(), Vector::zeros(1), Activation::Identity).unwrap();
        IncrementalModel::from_parts(1, vec![], vec![head], 1).unwrap()
    }

    fn scalar_grads(g: f64) -> ParameterGradients {
        ParameterGradients {
            trunk: vec![],
            heads: vec![(Matrix::from_rows(&[[g]]).unwrap(), Vector::zeros(1))],
        }
    }

    #[test]
    fn sgd_one_step() {
        let mut m = scalar_model(1.0);
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1, 0.0);
        opt.step(&mut m, &scalar_grads(1.0)).unwrap();
        assert!((m.heads()[0].weights[(0, 0)] - 0.9).abs() < 1e-15);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_gradient_zero_decay_is_a_no_op() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::adam()] {
            let mut m = IncrementalModel::new(3, &default_trunk(), 2, 1)
                .unwrap()
                .with_new_head(2, 2)
                .unwrap();
            let before = m.clone();
            let g = ParameterGradients::zeros_like(&m);
            let mut opt = OptimizerState::new(kind, 0.1, 0.0);
            opt.step(&mut m, &g).unwrap();
            assert_eq!(m, before);
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // f(w) = w^2, gradient 2w.
        let mut m = scalar_model(1.0);
        let mut opt = OptimizerState::new(OptimizerKind::adam(), 0.05, 0.0);
        let mut reached = None;
        for step in 1..=500 {
            let w = m.heads()[0].weights[(0, 0)];
            opt.step(&mut m, &scalar_grads(2.0 * w)).unwrap();
            if m.heads()[0].weights[(0, 0)].abs() < 0.1 {
                reached = Some(step);
                break;
            }
        }
        assert!(reached.is_some());
    }

    #[test]
    fn adam_moments_track_parameter_shapes() {
        let mut m = IncrementalModel::new(3, &default_trunk(), 2, 1)
            .unwrap()
            .with_new_head(2, 2)
            .unwrap();
        let mut opt = OptimizerState::new(OptimizerKind::adam(), 1e-3, 1e-4);
        let g = ParameterGradients::zeros_like(&m);
        opt.step(&mut m, &g).unwrap();
        let shapes: Vec<usize> = m.parameters().iter().map(|s| s.len()).collect();
        assert_eq!(opt.moment_shapes(), shapes);
        m.expand_head(2, 3).unwrap();
        let g = ParameterGradients::zeros_like(&m);
        assert!(opt.step(&mut m, &g).is_err());
    }

    #[test]
    fn heads_only_scope_leaves_trunk_untouched() {
        let mut m = IncrementalModel::new(3, &default_trunk(), 2, 1)
            .unwrap()
            .with_new_head(2, 2)
            .unwrap();
        let trunk_before = m.trunk().to_vec();
        let x = Matrix::from_rows(&[[0.1, 0.2, 0.3]]).unwrap();
        let g = m.backward(&x, &Matrix::from_rows(&[[1.0, -1.0]]).unwrap()).unwrap();
        let mut opt = OptimizerState::new(OptimizerKind::adam(), 1e-2, 1e-2).with_scope(ParamScope::HeadsOnly);
        let head_before = m.heads()[0].clone();
        opt.step(&mut m, &g).unwrap();
        assert_eq!(m.trunk(), &trunk_before[..]);
        assert_ne!(m.heads()[0], head_before);
    }
}
