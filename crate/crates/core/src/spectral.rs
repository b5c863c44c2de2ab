//! Heat-kernel graph wavelets approximated by Chebyshev polynomials.
//!
//! A wavelet at scale `κ` is the spectral operator `ψ_κ = U g(κΛ) Uᵀ` with
//! mother kernel `g(x) = e^{-x}`; its inverse uses `g(-x)`. Instead of
//! diagonalizing the Laplacian, the kernel is pulled back from `[0, g_max]`
//! to `[-1, 1]`, interpolated in Chebyshev points of the first kind, and the
//! resulting series is applied through the three-term recurrence in the
//! rescaled Laplacian `L̃ = (2/g_max) L − I`.
//!
//! Coefficients are computed with a type-II discrete cosine transform built on
//! a length-`2(n+1)` FFT, so their cost is `O(n log n)` in the interpolation
//! degree. The dense eigendecomposition path is kept as a test oracle.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Largest graph the dense oracle accepts by default.
pub const ORACLE_CAP: usize = 256;

/// Chebyshev order used unless overridden.
pub const DEFAULT_ORDER: usize = 3;
/// Interpolation degree used unless overridden.
pub const DEFAULT_INTERP_DEGREE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    /// `g(x) = e^{-x}`
    Heat,
    /// `g(-x) = e^{x}`
    InverseHeat,
}

impl Kernel {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Kernel::Heat => (-x).exp(),
            Kernel::InverseHeat => x.exp(),
        }
    }
}

/// Power-iteration estimate of `λ_max(L)` times a 1.01 safety factor.
/// Returns 1.0 for a zero spectrum.
pub fn spectrum_bound(l: &CsrMatrix, iters: usize) -> f64 {
    let n = l.n();
    if n == 0 {
        return 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_cafe);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nx = norm(&x);
    x.iter_mut().for_each(|a| *a /= nx);
    let mut y = vec![0.0; n];
    for _ in 0..iters.max(1) {
        l.mul_vec(&x, &mut y);
        let ny = norm(&y);
        if ny < 1e-300 {
            return 1.0;
        }
        for (a, b) in x.iter_mut().zip(&y) {
            *a = b / ny;
        }
    }
    l.mul_vec(&x, &mut y);
    let rayleigh: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
    if rayleigh <= 1e-12 {
        1.0
    } else {
        1.01 * rayleigh
    }
}

/// Chebyshev points of the first kind `y_k = cos((2k+1)π / (2n+2))`, `k = 0..=n`.
pub fn chebyshev_nodes(n: usize) -> Vec<f64> {
    (0..=n)
        .map(|k| ((2 * k + 1) as f64 * PI / (2 * n + 2) as f64).cos())
        .collect()
}

/// Type-II DCT `X_j = Σ_k f_k cos(πj(2k+1)/(2N))` through one complex FFT of
/// the even extension of `f`.
pub fn dct2(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex<f64>> = Vec::with_capacity(2 * n);
    buf.extend(f.iter().map(|&v| Complex::new(v, 0.0)));
    buf.extend(f.iter().rev().map(|&v| Complex::new(v, 0.0)));
    let fft = FftPlanner::new().plan_fft_forward(2 * n);
    fft.process(&mut buf);
    (0..n)
        .map(|j| {
            let phase = -PI * j as f64 / (2 * n) as f64;
            let tw = Complex::new(phase.cos(), phase.sin());
            0.5 * (tw * buf[j]).re
        })
        .collect()
}

/// Coefficients `τ_0..=τ_p` of the degree-`n` Chebyshev interpolant of `f` on
/// `[-1, 1]`, with the leading term already halved so that
/// `f(x) ≈ Σ_j τ_j T_j(x)`.
pub fn chebyshev_coeffs_fn(f: impl Fn(f64) -> f64, p: usize, n: usize) -> Result<Vec<f64>> {
    if p > n {
        return Err(Error::invalid(format!("order p = {p} exceeds interpolation degree n = {n}")));
    }
    let samples: Vec<f64> = chebyshev_nodes(n).into_iter().map(f).collect();
    let scale = 2.0 / (n + 1) as f64;
    let mut tau: Vec<f64> = dct2(&samples)[..=p].iter().map(|x| x * scale).collect();
    tau[0] *= 0.5;
    Ok(tau)
}

/// Same coefficients by direct `O(n·p)` summation with `T_j(y) = cos(j·acos y)`.
pub fn chebyshev_coeffs_direct(f: impl Fn(f64) -> f64, p: usize, n: usize) -> Result<Vec<f64>> {
    if p > n {
        return Err(Error::invalid(format!("order p = {p} exceeds interpolation degree n = {n}")));
    }
    let nodes = chebyshev_nodes(n);
    let fx: Vec<f64> = nodes.iter().map(|&y| f(y)).collect();
    let mut tau: Vec<f64> = (0..=p)
        .map(|j| {
            2.0 / (n + 1) as f64
                * nodes
                    .iter()
                    .zip(&fx)
                    .map(|(&y, &v)| v * (j as f64 * y.acos()).cos())
                    .sum::<f64>()
        })
        .collect();
    tau[0] *= 0.5;
    Ok(tau)
}

/// Coefficients for `λ ↦ kernel(κλ)` on `[0, g_max]`, pulled back to `[-1, 1]`
/// through `λ = g_max (x + 1) / 2`.
pub fn chebyshev_coeffs(kernel: Kernel, kappa: f64, p: usize, n: usize, g_max: f64) -> Result<Vec<f64>> {
    chebyshev_coeffs_fn(|x| kernel.eval(kappa * g_max * (x + 1.0) / 2.0), p, n)
}

/// `y = Σ_j τ_j T_j(L̃) x` for every column of `x`, using the three-term recurrence.
pub fn apply_poly_filter(l: &CsrMatrix, g_max: f64, tau: &[f64], x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != l.n() {
        return Err(Error::Dimension {
            expected: l.n(),
            got: x.nrows(),
        });
    }
    if tau.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("chebyshev coefficients".into()));
    }
    let a = 2.0 / g_max;
    let rescaled = |v: &DMatrix<f64>| -> DMatrix<f64> {
        let mut out = l.mul_dense(v);
        out.iter_mut().zip(v.iter()).for_each(|(o, vi)| *o = a * *o - vi);
        out
    };
    let mut y = x * tau.first().copied().unwrap_or(0.0);
    if tau.len() < 2 {
        return Ok(y);
    }
    let mut prev = x.clone();
    let mut cur = rescaled(x);
    y.zip_apply(&cur, |a, b| *a += tau[1] * b);
    for &t in &tau[2..] {
        let mut next = rescaled(&cur);
        next.iter_mut().zip(prev.iter()).for_each(|(nx, p)| *nx = 2.0 * *nx - p);
        y.zip_apply(&next, |a, b| *a += t * b);
        prev = cur;
        cur = next;
    }
    Ok(y)
}

/// Dense eigendecomposition with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct ExactSpectrum {
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors as columns.
    pub eigenvectors: DMatrix<f64>,
}

impl ExactSpectrum {
    pub fn of(l: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(l.clone());
        let n = l.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let eigenvectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        ExactSpectrum {
            eigenvalues,
            eigenvectors,
        }
    }

    /// `U diag(h(λ_i)) Uᵀ`
    pub fn function(&self, h: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let u = &self.eigenvectors;
        let mut scaled = u.clone();
        for (c, &lam) in self.eigenvalues.iter().enumerate() {
            let s = h(lam);
            scaled.column_mut(c).scale_mut(s);
        }
        scaled * u.transpose()
    }
}

/// Dense `ψ_κ = U diag(kernel(κλ)) Uᵀ`. Test oracle; refuses graphs larger than `cap`.
pub fn exact_wavelet(spectrum: &ExactSpectrum, kernel: Kernel, kappa: f64, cap: usize) -> Result<DMatrix<f64>> {
    let n = spectrum.eigenvalues.len();
    if n > cap {
        return Err(Error::invalid(format!("exact wavelet limited to {cap} nodes, got {n}")));
    }
    Ok(spectrum.function(|lam| kernel.eval(kappa * lam)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankConfig {
    pub scales: usize,
    pub order: usize,
    pub interp_degree: usize,
    /// Upper end of the scale grid expressed as `κ_max · g_max`.
    pub max_kappa_gmax: f64,
    pub power_iters: usize,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig {
            scales: 4,
            order: DEFAULT_ORDER,
            interp_degree: DEFAULT_INTERP_DEGREE,
            max_kappa_gmax: 4.0,
            power_iters: 100,
        }
    }
}

/// Per-scale forward and inverse Chebyshev coefficients for one Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletFilterBank {
    pub scales: Vec<f64>,
    pub forward: Vec<Vec<f64>>,
    pub inverse: Vec<Vec<f64>>,
    pub g_max: f64,
    pub order: usize,
    pub interp_degree: usize,
}

/// Geometric grid of `count` scales on `[lo, hi]`.
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![lo];
    }
    let ratio = (hi / lo).ln() / (count - 1) as f64;
    (0..count).map(|i| lo * (ratio * i as f64).exp()).collect()
}

pub fn build_filter_bank_with_bound(g_max: f64, cfg: &BankConfig) -> Result<WaveletFilterBank> {
    if cfg.scales == 0 {
        return Err(Error::config("scales", "must be at least 1"));
    }
    let kappa_min = 1.0 / g_max;
    let kappa_max = (cfg.max_kappa_gmax / g_max).max(kappa_min);
    let scales = geometric_grid(kappa_min, kappa_max, cfg.scales);
    let mut forward = Vec::with_capacity(scales.len());
    let mut inverse = Vec::with_capacity(scales.len());
    for &k in &scales {
        forward.push(chebyshev_coeffs(Kernel::Heat, k, cfg.order, cfg.interp_degree, g_max)?);
        inverse.push(chebyshev_coeffs(Kernel::InverseHeat, k, cfg.order, cfg.interp_degree, g_max)?);
    }
    Ok(WaveletFilterBank {
        scales,
        forward,
        inverse,
        g_max,
        order: cfg.order,
        interp_degree: cfg.interp_degree,
    })
}

pub fn build_filter_bank(l: &CsrMatrix, cfg: &BankConfig) -> Result<WaveletFilterBank> {
    build_filter_bank_with_bound(spectrum_bound(l, cfg.power_iters), cfg)
}

/// Scale-wise forward and inverse wavelet operators on one graph. Both are
/// symmetric, so they are their own adjoints.
pub trait GraphFilters: Sync {
    fn n_nodes(&self) -> usize;
    fn n_scales(&self) -> usize;
    fn forward(&self, scale: usize, x: &DMatrix<f64>) -> DMatrix<f64>;
    fn inverse(&self, scale: usize, x: &DMatrix<f64>) -> DMatrix<f64>;
}

/// Polynomial filters applied through the sparse Laplacian.
#[derive(Debug, Clone)]
pub struct ChebyshevFilters {
    pub laplacian: CsrMatrix,
    pub bank: WaveletFilterBank,
}

impl GraphFilters for ChebyshevFilters {
    fn n_nodes(&self) -> usize {
        self.laplacian.n()
    }
    fn n_scales(&self) -> usize {
        self.bank.scales.len()
    }
    fn forward(&self, s: usize, x: &DMatrix<f64>) -> DMatrix<f64> {
        apply_poly_filter(&self.laplacian, self.bank.g_max, &self.bank.forward[s], x)
            .expect("signal rows match the graph")
    }
    fn inverse(&self, s: usize, x: &DMatrix<f64>) -> DMatrix<f64> {
        apply_poly_filter(&self.laplacian, self.bank.g_max, &self.bank.inverse[s], x)
            .expect("signal rows match the graph")
    }
}

/// Dense exact wavelets, for oracle comparisons.
#[derive(Debug, Clone)]
pub struct ExactFilters {
    pub forward: Vec<DMatrix<f64>>,
    pub inverse: Vec<DMatrix<f64>>,
}

impl ExactFilters {
    pub fn new(spectrum: &ExactSpectrum, scales: &[f64]) -> Result<Self> {
        let forward = scales
            .iter()
            .map(|&k| exact_wavelet(spectrum, Kernel::Heat, k, ORACLE_CAP))
            .collect::<Result<_>>()?;
        let inverse = scales
            .iter()
            .map(|&k| exact_wavelet(spectrum, Kernel::InverseHeat, k, ORACLE_CAP))
            .collect::<Result<_>>()?;
        Ok(ExactFilters { forward, inverse })
    }
}

impl GraphFilters for ExactFilters {
    fn n_nodes(&self) -> usize {
        self.forward.first().map_or(0, |m| m.nrows())
    }
    fn n_scales(&self) -> usize {
        self.forward.len()
    }
    fn forward(&self, s: usize, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.forward[s] * x
    }
    fn inverse(&self, s: usize, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.inverse[s] * x
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::invalid("log-log fit needs two or more positive points"));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}
