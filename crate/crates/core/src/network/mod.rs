//! Batch-normalized piecewise-linear networks.
//!
//! Indexing: layers are numbered `1..=L` with `z_0 = x` the input and
//! `W_l : R^{D_{l-1}} -> R^{D_l}`. Units inside a layer are 0-based. Layer
//! `L` is the linear head: it never carries batch normalization and has no
//! activation. Codes and region maps therefore cover layers `1..L`.

mod format;

pub use format::{parse_network, write_network, FORMAT_HEADER};

use ndarray::{Array1, Array2, ArrayView1, ArrayViewMut1, ArrayViewMut2, Axis};

use crate::error::{Error, Result};

/// Input-space normals shorter than this are treated as absent.
pub const ZERO_NORMAL: f64 = 1e-14;

/// Two-piece activation `a(u) = u` for `u >= 0`, `alpha * u` otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Abs,
}

impl Activation {
    pub fn leaky(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Activation::LeakyRelu(alpha))
        } else {
            Err(Error::InvalidNetwork(format!("leaky slope must lie in (0, 1), got {alpha}")))
        }
    }

    /// Slope on the negative half-line.
    pub fn alpha(&self) -> f64 {
        match *self {
            Activation::Relu => 0.0,
            Activation::LeakyRelu(a) => a,
            Activation::Abs => -1.0,
        }
    }

    #[inline]
    pub fn apply(&self, u: f64) -> f64 {
        if u >= 0.0 {
            u
        } else {
            self.alpha() * u
        }
    }

    /// Derivative, with the kink at 0 assigned to the positive piece.
    #[inline]
    pub fn slope(&self, u: f64) -> f64 {
        if u >= 0.0 {
            1.0
        } else {
            self.alpha()
        }
    }
}

/// Weights and (non-BN) bias of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Self {
        Layer { weights, bias }
    }

    pub fn zero_bias(weights: Array2<f64>) -> Self {
        let rows = weights.nrows();
        Layer { weights, bias: Array1::zeros(rows) }
    }
}

/// Architecture and weights of an `L`-layer network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    activation: Activation,
    layers: Vec<Layer>,
    bn: Vec<bool>,
}

impl NetworkSpec {
    /// `bn_layers` lists 1-based layer indices that use batch normalization.
    pub fn new(activation: Activation, layers: Vec<Layer>, bn_layers: &[usize]) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidNetwork("network needs at least one layer".into()));
        }
        if let Activation::LeakyRelu(a) = activation {
            Activation::leaky(a)?;
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].weights.ncols() != pair[0].weights.nrows() {
                return Err(Error::InvalidNetwork(format!(
                    "layer {} expects {} inputs but layer {} has {} outputs",
                    i + 2,
                    pair[1].weights.ncols(),
                    i + 1,
                    pair[0].weights.nrows()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.nrows() == 0 || l.weights.ncols() == 0 {
                return Err(Error::InvalidNetwork(format!("layer {} has an empty weight matrix", i + 1)));
            }
            if l.bias.len() != l.weights.nrows() {
                return Err(Error::InvalidNetwork(format!("layer {} bias has wrong length", i + 1)));
            }
        }
        let depth = layers.len();
        let mut bn = vec![false; depth];
        for &l in bn_layers {
            if l == 0 || l >= depth {
                return Err(Error::InvalidNetwork(format!("batch norm requested at layer {l}; allowed layers are 1..{}", depth - 1)));
            }
            bn[l - 1] = true;
        }
        Ok(NetworkSpec { activation, layers, bn })
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Number of layers `L`, head included.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.depth() - 1].weights.nrows()
    }

    /// `D_0, ..., D_L`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.weights.nrows())).collect()
    }

    /// `D_l` for `l` in `0..=L`.
    pub fn width(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim()
        } else {
            self.layers[l - 1].weights.nrows()
        }
    }

    pub fn layer(&self, l: usize) -> &Layer {
        &self.layers[l - 1]
    }

    pub fn weights(&self, l: usize) -> &Array2<f64> {
        &self.layers[l - 1].weights
    }

    pub fn weights_mut(&mut self, l: usize) -> ArrayViewMut2<'_, f64> {
        self.layers[l - 1].weights.view_mut()
    }

    pub fn bias(&self, l: usize) -> &Array1<f64> {
        &self.layers[l - 1].bias
    }

    pub fn bias_mut(&mut self, l: usize) -> ArrayViewMut1<'_, f64> {
        self.layers[l - 1].bias.view_mut()
    }

    /// Row `w_{l,k}`.
    pub fn unit_weights(&self, l: usize, k: usize) -> ArrayView1<'_, f64> {
        self.layers[l - 1].weights.row(k)
    }

    pub fn has_bn(&self, l: usize) -> bool {
        self.bn[l - 1]
    }

    pub fn bn_layers(&self) -> Vec<usize> {
        (1..=self.depth()).filter(|&l| self.bn[l - 1]).collect()
    }

    /// Same weights, with batch normalization switched on for `layers`.
    pub fn with_bn_layers(&self, layers: &[usize]) -> Result<Self> {
        NetworkSpec::new(self.activation, self.layers.clone(), layers)
    }

    pub fn with_activation(&self, activation: Activation) -> Result<Self> {
        NetworkSpec::new(activation, self.layers.clone(), &self.bn_layers())
    }

    /// Offset `m` of the feature-space hyperplane `{z : <w_{l,k}, z> = m}` where
    /// unit `k` of layer `l` has zero pre-activation.
    pub fn unit_offset(&self, bn: &BNState, l: usize, k: usize) -> Result<f64> {
        if self.has_bn(l) {
            let p = bn.get(l).ok_or(Error::MissingBatchNorm(l))?;
            if p.gamma[k] == 0.0 {
                return Err(Error::Precondition(format!("gamma is zero at layer {l}, unit {k}")));
            }
            Ok(p.mu[k] - p.beta[k] * p.sigma[k] / p.gamma[k])
        } else {
            Ok(-self.bias(l)[k])
        }
    }
}

/// Normalization parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub mu: Array1<f64>,
    pub sigma: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl BnParams {
    /// `gamma = 1`, `beta = 0`.
    pub fn standard(mu: Array1<f64>, sigma: Array1<f64>) -> Self {
        let n = mu.len();
        BnParams { mu, sigma, gamma: Array1::ones(n), beta: Array1::zeros(n) }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

/// Where the statistics in a [`BNState`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Computed from the batch the network is being evaluated on.
    Batch,
    /// Set by hand or loaded from disk.
    Fixed,
}

/// Per-layer normalization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BNState {
    layers: Vec<Option<BnParams>>,
    pub mode: BnMode,
}

impl BNState {
    /// No parameters for a network of the given depth.
    pub fn empty(depth: usize) -> Self {
        BNState { layers: vec![None; depth], mode: BnMode::Fixed }
    }

    pub fn for_network(net: &NetworkSpec) -> Self {
        Self::empty(net.depth())
    }

    pub fn get(&self, l: usize) -> Option<&BnParams> {
        self.layers.get(l.wrapping_sub(1)).and_then(|p| p.as_ref())
    }

    pub fn get_mut(&mut self, l: usize) -> Option<&mut BnParams> {
        self.layers.get_mut(l.wrapping_sub(1)).and_then(|p| p.as_mut())
    }

    pub fn set(&mut self, l: usize, params: BnParams) {
        if self.layers.len() < l {
            self.layers.resize(l, None);
        }
        self.layers[l - 1] = Some(params);
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Checks shapes and strict positivity of every sigma the network uses.
    pub fn validate(&self, net: &NetworkSpec) -> Result<()> {
        for l in net.bn_layers() {
            let p = self.get(l).ok_or(Error::MissingBatchNorm(l))?;
            let d = net.width(l);
            if p.mu.len() != d || p.sigma.len() != d || p.gamma.len() != d || p.beta.len() != d {
                return Err(Error::Dimension(format!("batch-norm parameters of layer {l} must have length {d}")));
            }
            if let Some((unit, &value)) = p.sigma.iter().enumerate().find(|(_, &s)| !(s > 0.0)) {
                return Err(Error::NonPositiveSigma { layer: l, unit, value });
            }
        }
        Ok(())
    }
}

/// Pre-activations `h_l` and activations `z_l` of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    z: Vec<Array1<f64>>,
    h: Vec<Array1<f64>>,
}

impl Trace {
    /// `z_l`, with `z_0 = x` and `z_L` the network output.
    pub fn z(&self, l: usize) -> &Array1<f64> {
        &self.z[l]
    }

    /// `h_l` for `l` in `1..=L`.
    pub fn h(&self, l: usize) -> &Array1<f64> {
        &self.h[l - 1]
    }

    pub fn output(&self) -> &Array1<f64> {
        self.z.last().expect("trace holds the input")
    }

    pub fn depth(&self) -> usize {
        self.h.len()
    }
}

/// Pre-activation of layer `l` for a given layer input.
pub fn preactivation(net: &NetworkSpec, bn: &BNState, l: usize, input: ArrayView1<f64>) -> Result<Array1<f64>> {
    let u = net.weights(l).dot(&input);
    if net.has_bn(l) {
        let p = bn.get(l).ok_or(Error::MissingBatchNorm(l))?;
        Ok(ndarray::Zip::from(&u).and(&p.mu).and(&p.sigma).and(&p.gamma).and(&p.beta).map_collect(|&u, &m, &s, &g, &b| (u - m) / s * g + b))
    } else {
        Ok(u + net.bias(l))
    }
}

/// Evaluate the network on a single input.
pub fn forward(net: &NetworkSpec, bn: &BNState, x: ArrayView1<f64>) -> Result<Trace> {
    if x.len() != net.input_dim() {
        return Err(Error::Dimension(format!("input has length {}, network expects {}", x.len(), net.input_dim())));
    }
    bn.validate(net)?;
    forward_unchecked(net, bn, x)
}

pub(crate) fn forward_unchecked(net: &NetworkSpec, bn: &BNState, x: ArrayView1<f64>) -> Result<Trace> {
    let depth = net.depth();
    let act = net.activation();
    let mut z = Vec::with_capacity(depth + 1);
    let mut h = Vec::with_capacity(depth);
    z.push(x.to_owned());
    for l in 1..=depth {
        let pre = preactivation(net, bn, l, z[l - 1].view())?;
        let out = if l < depth { pre.mapv(|u| act.apply(u)) } else { pre.clone() };
        h.push(pre);
        z.push(out);
    }
    Ok(Trace { z, h })
}

/// Per-unit sign pattern of the hidden pre-activations.
///
/// Entry `(l, i)` is `1` when `h_{l,i} >= 0` and `alpha` otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActivationCode {
    signs: Vec<Vec<bool>>,
}

impl ActivationCode {
    pub fn from_signs(signs: Vec<Vec<bool>>) -> Self {
        ActivationCode { signs }
    }

    /// Code of the hidden layers recorded in `trace`.
    pub fn from_trace(trace: &Trace) -> Self {
        let hidden = trace.depth().saturating_sub(1);
        ActivationCode { signs: (1..=hidden).map(|l| trace.h(l).iter().map(|&u| u >= 0.0).collect()).collect() }
    }

    /// Number of layers covered.
    pub fn num_layers(&self) -> usize {
        self.signs.len()
    }

    /// `true` where `h_{l,i} >= 0`.
    pub fn signs(&self, l: usize) -> &[bool] {
        &self.signs[l - 1]
    }

    pub fn value(&self, activation: Activation, l: usize, i: usize) -> f64 {
        if self.signs[l - 1][i] {
            1.0
        } else {
            activation.alpha()
        }
    }

    pub fn layer_values(&self, activation: Activation, l: usize) -> Array1<f64> {
        self.signs[l - 1].iter().map(|&s| if s { 1.0 } else { activation.alpha() }).collect()
    }

    /// Code restricted to the first `layers` layers.
    pub fn truncated(&self, layers: usize) -> Self {
        ActivationCode { signs: self.signs[..layers.min(self.signs.len())].to_vec() }
    }

    pub fn push_layer(&mut self, signs: Vec<bool>) {
        self.signs.push(signs);
    }

    /// Compact text form, `+`/`-` per unit and `|` between layers.
    pub fn to_code_string(&self) -> String {
        self.signs.iter().map(|l| l.iter().map(|&s| if s { '+' } else { '-' }).collect::<String>()).collect::<Vec<_>>().join("|")
    }
}

pub fn activation_code(net: &NetworkSpec, bn: &BNState, x: ArrayView1<f64>) -> Result<ActivationCode> {
    Ok(ActivationCode::from_trace(&forward(net, bn, x)?))
}

/// Affine map `x -> A x + b` from the input to `z_{layer-1}`, valid on one region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionAffine {
    /// Target layer `j`: the map produces the input of layer `j`.
    pub layer: usize,
    pub a: Array2<f64>,
    pub b: Array1<f64>,
}

impl RegionAffine {
    pub fn identity(dim: usize) -> Self {
        RegionAffine { layer: 1, a: Array2::eye(dim), b: Array1::zeros(dim) }
    }

    pub fn apply(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.a.dot(&x) + &self.b
    }
}

/// Affine pre-activation of layer `l` given the affine map to its input.
pub(crate) fn preactivation_affine(net: &NetworkSpec, bn: &BNState, l: usize, input: &RegionAffine) -> Result<(Array2<f64>, Array1<f64>)> {
    let w = net.weights(l);
    let mut m = w.dot(&input.a);
    let mut v = w.dot(&input.b);
    if net.has_bn(l) {
        let p = bn.get(l).ok_or(Error::MissingBatchNorm(l))?;
        for i in 0..m.nrows() {
            let s = p.gamma[i] / p.sigma[i];
            m.row_mut(i).mapv_inplace(|e| e * s);
            v[i] = (v[i] - p.mu[i]) * s + p.beta[i];
        }
    } else {
        v += net.bias(l);
    }
    Ok((m, v))
}

/// Apply a layer's code to its affine pre-activation, giving the map to `z_l`.
pub(crate) fn activate_affine(mut m: Array2<f64>, mut v: Array1<f64>, slopes: &Array1<f64>, layer_out: usize) -> RegionAffine {
    for (i, mut row) in m.axis_iter_mut(Axis(0)).enumerate() {
        row.mapv_inplace(|e| e * slopes[i]);
        v[i] *= slopes[i];
    }
    RegionAffine { layer: layer_out + 1, a: m, b: v }
}

/// Map from the input to `z_{j-1}` on the region with the given code.
///
/// `j` ranges over `1..=L+1`; `j = L+1` yields the map to the network output.
pub fn region_affine(net: &NetworkSpec, bn: &BNState, code: &ActivationCode, j: usize) -> Result<RegionAffine> {
    let depth = net.depth();
    if j == 0 || j > depth + 1 {
        return Err(Error::InvalidArgument(format!("target layer {j} outside 1..={}", depth + 1)));
    }
    let needed = (j - 1).min(depth - 1);
    if code.num_layers() < needed {
        return Err(Error::Dimension(format!("code covers {} layers, {needed} required", code.num_layers())));
    }
    for l in 1..=needed {
        if code.signs(l).len() != net.width(l) {
            return Err(Error::Dimension(format!("code for layer {l} has {} entries, expected {}", code.signs(l).len(), net.width(l))));
        }
    }
    bn.validate(net)?;
    let mut map = RegionAffine::identity(net.input_dim());
    for l in 1..j {
        let (m, v) = preactivation_affine(net, bn, l, &map)?;
        map = if l < depth {
            activate_affine(m, v, &code.layer_values(net.activation(), l), l)
        } else {
            RegionAffine { layer: l + 1, a: m, b: v }
        };
    }
    map.layer = j;
    Ok(map)
}

/// Input-space normal `A^T w_{j,k}` of the facet of unit `(j, k)` in the
/// region containing `x`; `None` when the unit is constant on that region.
pub fn preactivation_normal(net: &NetworkSpec, bn: &BNState, x: ArrayView1<f64>, j: usize, k: usize) -> Result<Option<Array1<f64>>> {
    if j == 0 || j > net.depth() || k >= net.width(j) {
        return Err(Error::InvalidArgument(format!("unit ({j}, {k}) does not exist")));
    }
    let code = activation_code(net, bn, x)?;
    let map = region_affine(net, bn, &code, j)?;
    let normal = map.a.t().dot(&net.unit_weights(j, k));
    Ok(if normal.dot(&normal).sqrt() < ZERO_NORMAL { None } else { Some(normal) })
}

/// Fold every `gamma` into the following layer's weights and the layer's `beta`.
///
/// Uses `a(c u) = c a(u)` for `c > 0`, so all gammas must be strictly positive.
pub fn absorb_gamma(net: &NetworkSpec, bn: &BNState) -> Result<(NetworkSpec, BNState)> {
    bn.validate(net)?;
    let mut net2 = net.clone();
    let mut bn2 = bn.clone();
    for l in net.bn_layers() {
        let p = bn2.get_mut(l).ok_or(Error::MissingBatchNorm(l))?;
        if let Some((k, g)) = p.gamma.iter().enumerate().find(|(_, &g)| !(g > 0.0)) {
            return Err(Error::Precondition(format!("gamma must be strictly positive to absorb; layer {l}, unit {k} has {g}")));
        }
        let gamma = std::mem::replace(&mut p.gamma, Array1::ones(p.mu.len()));
        p.beta = &p.beta / &gamma;
        let mut next = net2.weights_mut(l + 1);
        for (k, mut col) in next.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|w| w * gamma[k]);
        }
    }
    Ok((net2, bn2))
}
