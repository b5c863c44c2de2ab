//! Hypergraph wavelet convolution.
//!
//! One layer maps `X` (`n × d_in`) to
//! `σ( (1/S) Σ_s  P_s(L̃) · diag(g_s) · P'_s(L̃) · X  ·  W )`
//! where `P_s` and `P'_s` are the forward and inverse wavelet polynomials of
//! scale `s`, `g_s` is a learnable per-node diagonal for that scale and `W`
//! mixes channels.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::spectral::GraphFilters;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation.
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - pre.tanh().powi(2),
            Activation::Identity => 1.0,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

/// Borrowed layer parameters: `mix[l]` is `d_l × d_{l+1}`, `spectral[l]` is `n × S`.
#[derive(Debug, Clone, Copy)]
pub struct WaveConvView<'a> {
    pub mix: &'a [DMatrix<f64>],
    pub spectral: &'a [DMatrix<f64>],
    pub activation: Activation,
}

/// Owned parameters of a stack of wavelet layers on one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveConvParams {
    pub mix: Vec<DMatrix<f64>>,
    pub spectral: Vec<DMatrix<f64>>,
    pub activation: Activation,
}

impl WaveConvParams {
    pub fn view(&self) -> WaveConvView<'_> {
        WaveConvView {
            mix: &self.mix,
            spectral: &self.spectral,
            activation: self.activation,
        }
    }

    /// `dims = [d_0, d_1, ..., d_L]`.
    pub fn init(dims: &[usize], n_nodes: usize, n_scales: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let mix = dims.windows(2).map(|w| glorot(w[0], w[1], rng)).collect();
        let spectral = (0..dims.len() - 1).map(|_| spectral_init(n_nodes, n_scales, rng)).collect();
        WaveConvParams {
            mix,
            spectral,
            activation,
        }
    }
}

/// Uniform Glorot initialization of a `rows × cols` matrix.
pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
}

/// `1 + N(0, 0.01)` per node and scale.
pub fn spectral_init(n_nodes: usize, n_scales: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let normal = Normal::new(1.0, 0.01).unwrap();
    DMatrix::from_fn(n_nodes, n_scales, |_, _| normal.sample(rng))
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: DMatrix<f64>,
    inverse_out: Vec<DMatrix<f64>>,
    mid: DMatrix<f64>,
    pre: DMatrix<f64>,
}

/// Intermediate values needed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    fingerprint: f64,
}

fn fingerprint(params: &WaveConvView<'_>) -> f64 {
    params
        .mix
        .iter()
        .chain(params.spectral)
        .enumerate()
        .map(|(i, m)| (i + 1) as f64 * m.iter().enumerate().map(|(j, x)| x * (1.0 + (j % 7) as f64)).sum::<f64>())
        .sum()
}

fn check(x: &DMatrix<f64>, filters: &dyn GraphFilters, params: &WaveConvView<'_>) -> Result<()> {
    if params.mix.len() != params.spectral.len() || params.mix.is_empty() {
        return Err(Error::invalid("wavelet layer parameter lists disagree"));
    }
    if x.nrows() != filters.n_nodes() {
        return Err(Error::Dimension {
            expected: filters.n_nodes(),
            got: x.nrows(),
        });
    }
    let mut d = x.ncols();
    for (mix, spec) in params.mix.iter().zip(params.spectral) {
        if mix.nrows() != d {
            return Err(Error::Dimension {
                expected: d,
                got: mix.nrows(),
            });
        }
        if spec.nrows() != filters.n_nodes() || spec.ncols() != filters.n_scales() {
            return Err(Error::Dimension {
                expected: filters.n_nodes() * filters.n_scales(),
                got: spec.len(),
            });
        }
        if mix.iter().chain(spec.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("wavelet layer parameters".into()));
        }
        d = mix.ncols();
    }
    Ok(())
}

fn scale_rows(m: &mut DMatrix<f64>, diag: impl Fn(usize) -> f64) {
    for r in 0..m.nrows() {
        let g = diag(r);
        m.row_mut(r).scale_mut(g);
    }
}

/// Forward pass. The cache is returned only when `train` is set.
pub fn forward(
    x: &DMatrix<f64>,
    filters: &dyn GraphFilters,
    params: &WaveConvView<'_>,
    train: bool,
) -> Result<(DMatrix<f64>, Option<ForwardCache>)> {
    check(x, filters, params)?;
    let n_scales = filters.n_scales();
    let mut h = x.clone();
    let mut layers = Vec::new();
    for (mix, spec) in params.mix.iter().zip(params.spectral) {
        let mut mid = DMatrix::zeros(h.nrows(), h.ncols());
        let mut inverse_out = Vec::with_capacity(n_scales);
        for s in 0..n_scales {
            let b = filters.inverse(s, &h);
            let mut c = b.clone();
            scale_rows(&mut c, |r| spec[(r, s)]);
            mid += filters.forward(s, &c);
            if train {
                inverse_out.push(b);
            }
        }
        mid /= n_scales as f64;
        let pre = &mid * mix;
        let out = pre.map(|v| params.activation.apply(v));
        if train {
            layers.push(LayerCache {
                input: h,
                inverse_out,
                mid,
                pre,
            });
        }
        h = out;
    }
    let cache = train.then(|| ForwardCache {
        layers,
        fingerprint: fingerprint(params),
    });
    Ok((h, cache))
}

/// Gradients of one wavelet stack.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveConvGrads {
    pub mix: Vec<DMatrix<f64>>,
    pub spectral: Vec<DMatrix<f64>>,
}

/// Reverse-mode gradients with respect to the input and every parameter.
/// Polynomial filters in `L̃` are symmetric, so the adjoint of each filter is
/// the filter itself.
pub fn backward(
    grad_out: &DMatrix<f64>,
    cache: &ForwardCache,
    filters: &dyn GraphFilters,
    params: &WaveConvView<'_>,
) -> Result<(DMatrix<f64>, WaveConvGrads)> {
    if cache.layers.len() != params.mix.len() || fingerprint(params) != cache.fingerprint {
        return Err(Error::invalid("stale forward cache"));
    }
    let n_scales = filters.n_scales();
    let mut grads = WaveConvGrads {
        mix: params.mix.iter().map(|m| DMatrix::zeros(m.nrows(), m.ncols())).collect(),
        spectral: params.spectral.iter().map(|m| DMatrix::zeros(m.nrows(), m.ncols())).collect(),
    };
    let mut g = grad_out.clone();
    for l in (0..cache.layers.len()).rev() {
        let lc = &cache.layers[l];
        if g.shape() != lc.pre.shape() {
            return Err(Error::Dimension {
                expected: lc.pre.len(),
                got: g.len(),
            });
        }
        let dpre = g.zip_map(&lc.pre, |d, p| d * params.activation.derivative(p));
        grads.mix[l] = lc.mid.transpose() * &dpre;
        let dmid = (&dpre * params.mix[l].transpose()) / n_scales as f64;
        let spec = &params.spectral[l];
        let mut dinput = DMatrix::zeros(lc.input.nrows(), lc.input.ncols());
        for s in 0..n_scales {
            let mut dc = filters.forward(s, &dmid);
            let b = &lc.inverse_out[s];
            for r in 0..dc.nrows() {
                grads.spectral[l][(r, s)] = dc.row(r).dot(&b.row(r));
            }
            scale_rows(&mut dc, |r| spec[(r, s)]);
            dinput += filters.inverse(s, &dc);
        }
        g = dinput;
    }
    Ok((g, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{ExactFilters, ExactSpectrum};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path3() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0])
    }

    #[test]
    fn identity_configuration_passes_input_through() {
        let spec = ExactSpectrum::of(&path3());
        let filters = ExactFilters::new(&spec, &[0.3, 0.9]).unwrap();
        let params = WaveConvParams {
            mix: vec![DMatrix::identity(2, 2)],
            spectral: vec![DMatrix::from_element(3, 2, 1.0)],
            activation: Activation::Identity,
        };
        let x = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 3.0, -1.0, 0.0]);
        let (y, _) = forward(&x, &filters, &params.view(), false).unwrap();
        assert!((y - x).norm() < 1e-12);
    }

    #[test]
    fn zero_spectral_gives_activation_of_zero() {
        let spec = ExactSpectrum::of(&path3());
        let filters = ExactFilters::new(&spec, &[0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = WaveConvParams::init(&[2, 4], 3, 1, Activation::Tanh, &mut rng);
        params.spectral[0].fill(0.0);
        let x = DMatrix::from_fn(3, 2, |r, c| (r + 2 * c) as f64);
        let (y, _) = forward(&x, &filters, &params.view(), false).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_upstream_gradient() {
        let spec = ExactSpectrum::of(&path3());
        let filters = ExactFilters::new(&spec, &[0.5, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = WaveConvParams::init(&[2, 3], 3, 2, Activation::Relu, &mut rng);
        let x = DMatrix::from_fn(3, 2, |r, c| r as f64 - c as f64);
        let (y, cache) = forward(&x, &filters, &params.view(), true).unwrap();
        let (dx, g) = backward(&DMatrix::zeros(y.nrows(), y.ncols()), &cache.unwrap(), &filters, &params.view()).unwrap();
        assert!(dx.iter().all(|&v| v == 0.0));
        assert!(g.mix.iter().chain(&g.spectral).all(|m| m.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn stale_cache_and_nan_rejected() {
        let spec = ExactSpectrum::of(&path3());
        let filters = ExactFilters::new(&spec, &[0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = WaveConvParams::init(&[2, 2], 3, 1, Activation::Relu, &mut rng);
        let x = DMatrix::from_element(3, 2, 1.0);
        let (y, cache) = forward(&x, &filters, &params.view(), true).unwrap();
        params.mix[0][(0, 0)] += 0.5;
        assert!(backward(&y, &cache.unwrap(), &filters, &params.view()).is_err());
        params.spectral[0][(1, 0)] = f64::NAN;
        assert!(forward(&x, &filters, &params.view(), false).is_err());
    }
}
