//! Stationary covariance models: their derivative jets at the origin, the
//! induced metric, spectral samplers and the conditional law of the Hessian
//! at a critical point.
//!
//! The conditional law is computed by exact Gaussian regression from the
//! covariance 4-jet. With unit variance the gradient is independent of both
//! the value and the second derivatives, so conditioning on `grad f = 0`
//! is free, and conditioning on `f = t` gives mean `-t Lambda` and
//! covariance `kappa_ijkl - Lambda_ij Lambda_kl` entrywise. Expressed in
//! coordinates where the induced metric is the identity, the mean becomes
//! `-t I`.

use crate::error::{Error, Result};
use crate::special::{bessel_j_half, bessel_j_int};
use nalgebra::DMatrix;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde_json::json;
use std::sync::Arc;

const PSD_TOL: f64 = 1e-10;

pub type CovarianceFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type SpectralSampler = Arc<dyn Fn(&mut dyn RngCore, &mut [f64]) + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    BargmannFock,
    RandomWaves,
    FullBandRandomWaves,
    Custom,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelKind::BargmannFock => "bargmann_fock",
            ModelKind::RandomWaves => "random_waves",
            ModelKind::FullBandRandomWaves => "full_band_random_waves",
            ModelKind::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bargmann_fock" | "bf" => Ok(ModelKind::BargmannFock),
            "random_waves" | "rw" => Ok(ModelKind::RandomWaves),
            "full_band_random_waves" | "fbrw" => Ok(ModelKind::FullBandRandomWaves),
            "custom" => Ok(ModelKind::Custom),
            other => Err(Error::InvalidArgument(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Fully symmetric fourth-order tensor, stored dense.
#[derive(Debug, Clone)]
pub struct SymTensor4 {
    n: usize,
    data: Vec<f64>,
}

impl SymTensor4 {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n * n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        data[((i * n + j) * n + k) * n + l] = f(i, j, k, l);
                    }
                }
            }
        }
        SymTensor4 { n, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[((i * self.n + j) * self.n + k) * self.n + l]
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }
}

/// Index pairs `(i, j)` with `i <= j` enumerating the independent entries
/// of a symmetric matrix: diagonal first, then upper off-diagonals in
/// lexicographic order.
pub fn sym_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            pairs.push((i, j));
        }
    }
    pairs
}

/// A stationary unit-variance covariance model together with its second
/// and fourth spectral moments and a sampler for the spectral measure.
///
/// Immutable after construction; safe to share across workers.
#[derive(Clone)]
pub struct SpectralModel {
    kind: ModelKind,
    name: String,
    n: usize,
    covariance: CovarianceFn,
    sampler: SpectralSampler,
    lambda: DMatrix<f64>,
    kappa: SymTensor4,
    params: serde_json::Value,
    /// Smallest radius beyond which `|k| < 0.01`, when one exists within
    /// the scanned range.
    correlation_length: Option<f64>,
    /// Smallest radius beyond which `|k| < 1e-12`; bounds the image sum
    /// when the covariance is wrapped around a torus.
    decay_radius: Option<f64>,
    /// Largest spectral frequency for band-limited models.
    max_frequency: Option<f64>,
}

impl std::fmt::Debug for SpectralModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralModel")
            .field("name", &self.name)
            .field("n", &self.n)
            .finish()
    }
}

/// Builds one of the built-in models.
pub fn make_model(kind: ModelKind, n: usize) -> Result<SpectralModel> {
    if n == 0 {
        return Err(Error::InvalidModel("dimension must be at least 1".into()));
    }
    match kind {
        ModelKind::BargmannFock => Ok(bargmann_fock(n)),
        ModelKind::RandomWaves => {
            if n == 1 {
                // The spectral measure degenerates to point masses at +-1,
                // making (f, f', f'') linearly dependent.
                return Err(Error::InvalidModel(
                    "random_waves with n = 1 is a pure cosine process and fails the \
                     non-degeneracy condition"
                        .into(),
                ));
            }
            Ok(random_waves(n))
        }
        ModelKind::FullBandRandomWaves => Ok(full_band(n)),
        ModelKind::Custom => Err(Error::InvalidModel(
            "custom models are built through make_custom_model".into(),
        )),
    }
}

fn bargmann_fock(n: usize) -> SpectralModel {
    let covariance: CovarianceFn =
        Arc::new(|x: &[f64]| (-0.5 * x.iter().map(|v| v * v).sum::<f64>()).exp());
    let sampler: SpectralSampler = Arc::new(|rng, out| {
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    });
    let lambda = DMatrix::identity(n, n);
    let kappa = SymTensor4::from_fn(n, |i, j, k, l| {
        delta(i, j) * delta(k, l) + delta(i, k) * delta(j, l) + delta(i, l) * delta(j, k)
    });
    SpectralModel::assemble(
        ModelKind::BargmannFock,
        "bargmann_fock",
        n,
        covariance,
        sampler,
        lambda,
        kappa,
        json!({}),
    )
}

fn random_waves(n: usize) -> SpectralModel {
    let nn = n;
    let covariance: CovarianceFn = Arc::new(move |x: &[f64]| {
        let r = norm(x);
        normalized_radial_bessel(nn as i32 - 2, r)
    });
    let sampler: SpectralSampler = Arc::new(move |rng, out| {
        sample_unit_sphere(rng, out);
    });
    let lambda = DMatrix::identity(n, n) / n as f64;
    let denom = (n * (n + 2)) as f64;
    let kappa = SymTensor4::from_fn(n, |i, j, k, l| {
        (delta(i, j) * delta(k, l) + delta(i, k) * delta(j, l) + delta(i, l) * delta(j, k)) / denom
    });
    SpectralModel::assemble(
        ModelKind::RandomWaves,
        "random_waves",
        n,
        covariance,
        sampler,
        lambda,
        kappa,
        json!({}),
    )
}

fn full_band(n: usize) -> SpectralModel {
    let nn = n;
    let covariance: CovarianceFn = Arc::new(move |x: &[f64]| {
        let r = norm(x);
        normalized_radial_bessel(nn as i32, r)
    });
    let exponent = 1.0 / n as f64;
    let sampler: SpectralSampler = Arc::new(move |rng, out| {
        sample_unit_sphere(rng, out);
        let radius = rng.random::<f64>().powf(exponent);
        for v in out.iter_mut() {
            *v *= radius;
        }
    });
    let lambda = DMatrix::identity(n, n) / (n + 2) as f64;
    let denom = ((n + 2) * (n + 4)) as f64;
    let kappa = SymTensor4::from_fn(n, |i, j, k, l| {
        (delta(i, j) * delta(k, l) + delta(i, k) * delta(j, l) + delta(i, l) * delta(j, k)) / denom
    });
    SpectralModel::assemble(
        ModelKind::FullBandRandomWaves,
        "full_band_random_waves",
        n,
        covariance,
        sampler,
        lambda,
        kappa,
        json!({}),
    )
}

/// Specification of a user-supplied stationary model. The covariance must
/// have unit variance (the spectral measure must be a probability measure)
/// and a finite fourth moment; jets are filled in by finite differences.
pub struct CustomModelSpec {
    pub name: String,
    pub dimension: usize,
    pub covariance: CovarianceFn,
    pub spectral_sampler: SpectralSampler,
    pub params: serde_json::Value,
}

pub fn make_custom_model(spec: CustomModelSpec) -> Result<SpectralModel> {
    let n = spec.dimension;
    if n == 0 {
        return Err(Error::InvalidModel("dimension must be at least 1".into()));
    }
    let k0 = (spec.covariance)(&vec![0.0; n]);
    if (k0 - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidModel(format!(
            "spectral measure must have unit mass: k(0) = {k0}"
        )));
    }
    // Evenness spot check.
    let probe: Vec<f64> = (0..n).map(|i| 0.37 + 0.11 * i as f64).collect();
    let neg: Vec<f64> = probe.iter().map(|v| -v).collect();
    if ((spec.covariance)(&probe) - (spec.covariance)(&neg)).abs() > 1e-9 {
        return Err(Error::InvalidModel("covariance must be even".into()));
    }
    let lambda = fd_second_moment(spec.covariance.as_ref(), n);
    for i in 0..n {
        for j in 0..n {
            if i != j && lambda[(i, j)].abs() > 1e-6 {
                return Err(Error::InvalidModel(
                    "custom metrics must be diagonal".into(),
                ));
            }
        }
        if !(lambda[(i, i)] > 1e-12) {
            return Err(Error::InvalidModel(
                "second spectral moment must be positive definite".into(),
            ));
        }
    }
    let kappa = fd_fourth_moment(spec.covariance.as_ref(), n);
    if kappa.flat().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel("fourth moment is not finite".into()));
    }
    if n == 1 {
        // Point-mass spectra (cosine processes) make (f, f', f'')
        // linearly dependent: kappa = lambda^2 exactly.
        let l2 = lambda[(0, 0)];
        if kappa.get(0, 0, 0, 0) - l2 * l2 <= 1e-9 * l2 * l2 {
            return Err(Error::InvalidModel(
                "degenerate one-dimensional spectrum: the conditioned second \
                 derivative has no variance"
                    .into(),
            ));
        }
    }
    let model = SpectralModel::assemble(
        ModelKind::Custom,
        &spec.name.clone(),
        n,
        spec.covariance,
        spec.spectral_sampler,
        lambda,
        kappa,
        spec.params,
    );
    // Surfaces inconsistent jets early.
    model.hessian_law()?;
    Ok(model)
}

impl SpectralModel {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        kind: ModelKind,
        name: &str,
        n: usize,
        covariance: CovarianceFn,
        sampler: SpectralSampler,
        lambda: DMatrix<f64>,
        kappa: SymTensor4,
        params: serde_json::Value,
    ) -> SpectralModel {
        let correlation_length = scan_radius(covariance.as_ref(), n, 1e-2, 120.0);
        let decay_radius = scan_radius(covariance.as_ref(), n, 1e-12, 120.0);
        let max_frequency = match kind {
            ModelKind::RandomWaves | ModelKind::FullBandRandomWaves => Some(1.0),
            ModelKind::BargmannFock | ModelKind::Custom => None,
        };
        SpectralModel {
            kind,
            name: name.to_string(),
            n,
            covariance,
            sampler,
            lambda,
            kappa,
            params,
            correlation_length,
            decay_radius,
            max_frequency,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    /// Correlation `k(x)` at lag `x`.
    pub fn covariance(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.n);
        (self.covariance)(x)
    }

    /// Draws a frequency vector from the spectral probability measure.
    pub fn sample_frequency(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n);
        (self.sampler)(rng, out);
    }

    /// Second spectral moment `Lambda = -hess k(0)`, the induced metric.
    pub fn second_moment(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    /// Fourth spectral moment `kappa_ijkl = d4 k(0)`.
    pub fn fourth_moment(&self) -> &SymTensor4 {
        &self.kappa
    }

    /// `sqrt(det Lambda)`, the density constant of the model.
    pub fn metric_constant(&self) -> f64 {
        self.lambda.determinant().sqrt()
    }

    pub fn correlation_length(&self) -> Option<f64> {
        self.correlation_length
    }

    pub fn decay_radius(&self) -> Option<f64> {
        self.decay_radius
    }

    /// Largest frequency carrying spectral mass, for band-limited models.
    pub fn max_frequency(&self) -> Option<f64> {
        self.max_frequency
    }

    /// Conditional law of the Hessian given `f = t`, `grad f = 0`, in
    /// coordinates rescaled so the induced metric is the identity.
    pub fn hessian_law(&self) -> Result<GaussianHessianLaw> {
        conditional_hessian_law(self, &self.lambda)
    }

    /// JSON descriptor for run manifests.
    pub fn descriptor(&self) -> serde_json::Value {
        let lambda_rows: Vec<Vec<f64>> = (0..self.n)
            .map(|i| (0..self.n).map(|j| self.lambda[(i, j)]).collect())
            .collect();
        json!({
            "name": self.name,
            "n": self.n,
            "params": self.params,
            "lambda_matrix": lambda_rows,
            "kappa_tensor": self.kappa.flat(),
        })
    }
}

/// Envelope constants controlling the error terms of the critical-point
/// estimates. `theta` is the exponential suppression rate of non-extremal
/// critical points; `u0`/`u1` are the levels where the corresponding
/// bounds become effective.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct Envelope {
    pub sigma: f64,
    pub rho: f64,
    pub s: f64,
    pub theta: f64,
    pub u0: f64,
    pub u1: f64,
}

/// Gaussian law of the Hessian conditioned on the field value at a point
/// with vanishing gradient, in metric-orthonormal coordinates.
///
/// The covariance is an operator on the space of symmetric matrices with
/// the trace inner product; `sigma`/`rho` of the envelope are its spectral
/// radius and root determinant.
#[derive(Debug, Clone)]
pub struct GaussianHessianLaw {
    n: usize,
    pairs: Vec<(usize, usize)>,
    operator: DMatrix<f64>,
    factor: DMatrix<f64>,
    pub envelope: Envelope,
}

impl GaussianHessianLaw {
    pub fn dimension(&self) -> usize {
        self.n
    }

    /// Mean of the conditional Hessian at level `t`: `-t I`.
    pub fn mean_at(&self, t: f64) -> DMatrix<f64> {
        DMatrix::identity(self.n, self.n) * (-t)
    }

    /// Covariance between entries `H_ij` and `H_kl` of the conditional
    /// Hessian.
    pub fn entry_covariance(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let a = self.pair_index(i.min(j), i.max(j));
        let b = self.pair_index(k.min(l), k.max(l));
        let sa = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
        let sb = if k == l { 1.0 } else { std::f64::consts::SQRT_2 };
        self.operator[(a, b)] / (sa * sb)
    }

    /// Covariance operator on the trace-orthonormal basis of symmetric
    /// matrices (diagonal entries first, then scaled off-diagonal pairs).
    pub fn operator(&self) -> &DMatrix<f64> {
        &self.operator
    }

    fn pair_index(&self, i: usize, j: usize) -> usize {
        if i == j {
            i
        } else {
            // Offset past the n diagonal entries.
            let mut idx = self.n;
            for a in 0..i {
                idx += self.n - 1 - a;
            }
            idx + (j - i - 1)
        }
    }

    /// Draws a symmetric matrix from the law at level `t`. Deterministic
    /// given the generator state.
    pub fn sample(&self, t: f64, rng: &mut dyn RngCore) -> DMatrix<f64> {
        let d = self.pairs.len();
        let z = DMatrix::from_fn(d, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let c = &self.factor * z;
        let mut h = self.mean_at(t);
        for (a, &(i, j)) in self.pairs.iter().enumerate() {
            if i == j {
                h[(i, i)] += c[(a, 0)];
            } else {
                let v = c[(a, 0)] * std::f64::consts::FRAC_1_SQRT_2;
                h[(i, j)] += v;
                h[(j, i)] += v;
            }
        }
        h
    }
}

/// Free-function form of [`GaussianHessianLaw::sample`].
pub fn sample_conditional_hessian(
    law: &GaussianHessianLaw,
    t: f64,
    rng: &mut dyn RngCore,
) -> DMatrix<f64> {
    law.sample(t, rng)
}

/// Exact Gaussian regression of the Hessian on `(f, grad f)` at the
/// origin, expressed in coordinates rescaled by `Lambda^{-1/2}`.
pub fn conditional_hessian_law(
    model: &SpectralModel,
    lambda: &DMatrix<f64>,
) -> Result<GaussianHessianLaw> {
    let n = model.dimension();
    let pairs = sym_pairs(n);
    let d = pairs.len();
    let scale: Vec<f64> = (0..n).map(|i| lambda[(i, i)].sqrt()).collect();
    // Rescaled fourth moment minus the rank-one regression term.
    let cond = |&(i, j): &(usize, usize), &(k, l): &(usize, usize)| -> f64 {
        let kt = model.fourth_moment().get(i, j, k, l)
            / (scale[i] * scale[j] * scale[k] * scale[l]);
        kt - delta(i, j) * delta(k, l)
    };
    let mut operator = DMatrix::zeros(d, d);
    for (a, pa) in pairs.iter().enumerate() {
        for (b, pb) in pairs.iter().enumerate() {
            let sa = if pa.0 == pa.1 { 1.0 } else { std::f64::consts::SQRT_2 };
            let sb = if pb.0 == pb.1 { 1.0 } else { std::f64::consts::SQRT_2 };
            operator[(a, b)] = sa * sb * cond(pa, pb);
        }
    }
    let eig = nalgebra::SymmetricEigen::new(operator.clone());
    let min_eig = eig.eigenvalues.min();
    if min_eig < -PSD_TOL {
        return Err(Error::BadJet(format!(
            "conditional Hessian covariance has eigenvalue {min_eig:.3e}"
        )));
    }
    let sigma = eig.eigenvalues.max().max(0.0);
    let rho = eig
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0))
        .product::<f64>()
        .sqrt();
    let mut factor = eig.eigenvectors.clone();
    for (c, &l) in eig.eigenvalues.iter().enumerate() {
        let root = l.max(0.0).sqrt();
        factor.column_mut(c).scale_mut(root);
    }
    let s = 0.0; // full-dimensional flat domains carry no second fundamental form
    let theta = 1.0 / (s * s + sigma).max((s + 1.0) * (s + 1.0));
    let u0 = (1.0 + s) * 1f64.max(sigma.sqrt());
    let u1 = u0.max((n as f64 * n as f64 + 2.0) / theta);
    Ok(GaussianHessianLaw {
        n,
        pairs,
        operator,
        factor,
        envelope: Envelope {
            sigma,
            rho,
            s,
            theta,
            u0,
            u1,
        },
    })
}

/// Second spectral moment by Richardson-extrapolated central differences,
/// `Lambda_ij = -d2 k / dx_i dx_j (0)`.
pub fn fd_second_moment(cov: &dyn Fn(&[f64]) -> f64, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| -jet_derivative(cov, n, &[i, j]))
}

/// Fourth spectral moment by Richardson-extrapolated central differences.
pub fn fd_fourth_moment(cov: &dyn Fn(&[f64]) -> f64, n: usize) -> SymTensor4 {
    SymTensor4::from_fn(n, |i, j, k, l| jet_derivative(cov, n, &[i, j, k, l]))
}

fn jet_derivative(cov: &dyn Fn(&[f64]) -> f64, n: usize, axes: &[usize]) -> f64 {
    let approx = |h: f64| nested_central(cov, &mut vec![0.0; n], axes, h);
    richardson(approx, 0.16, 4)
}

fn nested_central(
    cov: &dyn Fn(&[f64]) -> f64,
    x: &mut Vec<f64>,
    axes: &[usize],
    h: f64,
) -> f64 {
    match axes.split_first() {
        None => cov(x),
        Some((&a, rest)) => {
            x[a] += h;
            let plus = nested_central(cov, x, rest, h);
            x[a] -= 2.0 * h;
            let minus = nested_central(cov, x, rest, h);
            x[a] += h;
            (plus - minus) / (2.0 * h)
        }
    }
}

/// Richardson extrapolation of a second-order approximation `A(h)`.
fn richardson(approx: impl Fn(f64) -> f64, h0: f64, levels: usize) -> f64 {
    let mut table: Vec<f64> = (0..levels)
        .map(|i| approx(h0 / 2f64.powi(i as i32)))
        .collect();
    let mut pow4 = 1.0;
    for col in 1..levels {
        pow4 *= 4.0;
        for row in (col..levels).rev() {
            table[row] = (pow4 * table[row] - table[row - 1]) / (pow4 - 1.0);
        }
    }
    table[levels - 1]
}

/// `2^nu Gamma(nu+1) J_nu(r) / r^nu` for `nu = half_degree / 2`, normalized
/// to 1 at the origin. Power series below `r = 1` to avoid the removable
/// singularity.
fn normalized_radial_bessel(half_degree: i32, r: f64) -> f64 {
    let nu = f64::from(half_degree) / 2.0;
    debug_assert!(nu >= 0.0);
    if r < 1.0 {
        let q = 0.25 * r * r;
        let mut term = 1.0;
        let mut sum = 1.0;
        for m in 1..60 {
            let mf = f64::from(m);
            term *= -q / (mf * (mf + nu));
            sum += term;
            if term.abs() < 1e-17 {
                break;
            }
        }
        return sum;
    }
    let j = if half_degree % 2 == 0 {
        bessel_j_int(half_degree as u32 / 2, r)
    } else {
        bessel_j_half((half_degree as u32 - 1) / 2, r)
    };
    let gamma = statrs::function::gamma::gamma(nu + 1.0);
    2f64.powf(nu) * gamma * j / r.powf(nu)
}

fn sample_unit_sphere(rng: &mut dyn RngCore, out: &mut [f64]) {
    loop {
        let mut norm_sq = 0.0;
        for v in out.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v = g;
            norm_sq += g * g;
        }
        if norm_sq > 1e-24 {
            let inv = norm_sq.sqrt().recip();
            for v in out.iter_mut() {
                *v *= inv;
            }
            return;
        }
    }
}

/// Largest scanned radius at which `|k|` still reaches `threshold`, plus
/// one step; `None` when the covariance has not decayed below the
/// threshold by `r_max`. Scans every axis and the main diagonal.
fn scan_radius(
    cov: &dyn Fn(&[f64]) -> f64,
    n: usize,
    threshold: f64,
    r_max: f64,
) -> Option<f64> {
    let step = 0.02;
    let steps = (r_max / step) as usize;
    let mut worst: f64 = 0.0;
    let diag = 1.0 / (n as f64).sqrt();
    for dir in 0..=n {
        let mut unit = vec![0.0; n];
        if dir < n {
            unit[dir] = 1.0;
        } else {
            unit.iter_mut().for_each(|v| *v = diag);
        }
        let mut last_above = 0.0;
        for s in 1..=steps {
            let r = step * s as f64;
            let x: Vec<f64> = unit.iter().map(|u| u * r).collect();
            if cov(&x).abs() >= threshold {
                last_above = r;
            }
        }
        if last_above >= r_max - 2.0 * step {
            return None;
        }
        worst = worst.max(last_above + step);
    }
    Some(worst)
}

#[inline]
fn delta(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.0
    }
}

#[inline]
fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
