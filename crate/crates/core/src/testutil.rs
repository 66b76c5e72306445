use ndarray::{Array1, Array2};
use rand::Rng;

use crate::network::{Activation, BNState, BnParams, Layer, NetworkSpec};
use crate::rng;

/// Uniform random weights/biases and, when `bn`, random BN parameters on every hidden layer.
pub(crate) fn random_net(seed: u64, widths: &[usize], act: Activation, bn: bool) -> (NetworkSpec, BNState) {
    let mut r = rng::stream(seed, 0);
    let layers: Vec<Layer> = widths
        .windows(2)
        .map(|w| {
            Layer::new(
                Array2::from_shape_fn((w[1], w[0]), |_| r.random_range(-1.0..1.0)),
                Array1::from_shape_fn(w[1], |_| r.random_range(-0.5..0.5)),
            )
        })
        .collect();
    let depth = layers.len();
    let bn_layers: Vec<usize> = if bn { (1..depth).collect() } else { vec![] };
    let net = NetworkSpec::new(act, layers, &bn_layers).unwrap();
    let mut state = BNState::for_network(&net);
    for &l in &bn_layers {
        let d = net.width(l);
        state.set(
            l,
            BnParams {
                mu: Array1::from_shape_fn(d, |_| r.random_range(-0.5..0.5)),
                sigma: Array1::from_shape_fn(d, |_| r.random_range(0.5..2.0)),
                gamma: Array1::from_shape_fn(d, |_| r.random_range(0.5..2.0)),
                beta: Array1::from_shape_fn(d, |_| r.random_range(-0.3..0.3)),
            },
        );
    }
    (net, state)
}

/// Gaussian batch with the given shape.
pub(crate) fn gaussian_batch(seed: u64, n: usize, d: usize) -> Array2<f64> {
    use rand_distr::StandardNormal;
    let mut r = rng::stream(seed, 1);
    Array2::from_shape_fn((n, d), |_| r.sample::<f64, _>(StandardNormal))
}
