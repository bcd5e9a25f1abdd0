//! Closed-form expectations for excursion-set topology: probabilists'
//! Hermite polynomials, Lipschitz-Killing curvatures of flat domains, the
//! exact expected Euler characteristic, high-level component-count
//! asymptotics and the Nazarov-Sodin nodal density.

use crate::covariance::SpectralModel;
use crate::error::{Error, Result};
use crate::special::{erfcx, gaussian_upper_tail};
use serde::{Deserialize, Serialize};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Probabilists' Hermite polynomial `H_j(x)`, extended to `j = -1` as the
/// scaled Gaussian tail `sqrt(2 pi) Psi(x) exp(x^2/2)`.
///
/// For `j >= 0` this evaluates the explicit sum
/// `j! sum_l (-1)^l x^(j-2l) / (l! (j-2l)! 2^l)`. The `j = -1` branch never
/// forms the tail and the exponential separately; it goes through the
/// scaled complementary error function and stays accurate for `x` up to 30.
pub fn hermite(j: i32, x: f64) -> Result<f64> {
    if j < -1 {
        return Err(Error::InvalidArgument(format!(
            "hermite order must be >= -1, got {j}"
        )));
    }
    if j == -1 {
        let root_half_pi = (0.5 * std::f64::consts::PI).sqrt();
        return Ok(root_half_pi * erfcx(x / std::f64::consts::SQRT_2));
    }
    let j = j as u32;
    let mut factorial_j = 1.0f64;
    for k in 2..=j {
        factorial_j *= f64::from(k);
    }
    let mut sum = 0.0;
    let mut l_fact = 1.0f64;
    for l in 0..=(j / 2) {
        if l > 0 {
            l_fact *= f64::from(l);
        }
        let m = j - 2 * l;
        let mut m_fact = 1.0f64;
        for k in 2..=m {
            m_fact *= f64::from(k);
        }
        let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * x.powi(m as i32) / (l_fact * m_fact * 2f64.powi(l as i32));
    }
    Ok(factorial_j * sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainShape {
    /// Flat torus with the given periods; a closed manifold.
    Torus,
    /// Axis-aligned box, a manifold with corners.
    Box,
    /// One-dimensional box.
    Interval,
}

/// A flat domain: a torus, box or interval with given side lengths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Domain {
    pub shape: DomainShape,
    pub side_lengths: Vec<f64>,
}

impl Domain {
    pub fn torus(sides: Vec<f64>) -> Result<Self> {
        Self::new(DomainShape::Torus, sides)
    }

    pub fn cube(shape: DomainShape, side: f64, n: usize) -> Result<Self> {
        Self::new(shape, vec![side; n])
    }

    pub fn new(shape: DomainShape, side_lengths: Vec<f64>) -> Result<Self> {
        if side_lengths.is_empty() {
            return Err(Error::Domain("domain needs at least one side".into()));
        }
        if side_lengths.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Domain("all side lengths must be positive".into()));
        }
        if shape == DomainShape::Interval && side_lengths.len() != 1 {
            return Err(Error::Domain("an interval is one-dimensional".into()));
        }
        Ok(Domain {
            shape,
            side_lengths,
        })
    }

    pub fn dimension(&self) -> usize {
        self.side_lengths.len()
    }

    /// Euclidean volume, before any metric rescaling.
    pub fn volume(&self) -> f64 {
        self.side_lengths.iter().product()
    }

    pub fn is_closed(&self) -> bool {
        self.shape == DomainShape::Torus
    }

    pub fn descriptor(&self) -> String {
        let sides = self
            .side_lengths
            .iter()
            .map(|s| format!("{s}"))
            .collect::<Vec<_>>()
            .join("x");
        match self.shape {
            DomainShape::Torus => format!("torus:{sides}"),
            DomainShape::Box => format!("box:{sides}"),
            DomainShape::Interval => format!("interval:{sides}"),
        }
    }
}

/// Lipschitz-Killing curvatures `L_0..L_n` of a flat domain in the metric
/// induced by the field (lengths rescaled by `sqrt(lambda_2)` per axis).
#[derive(Debug, Clone)]
pub struct LkCurvatures {
    pub values: Vec<f64>,
    pub domain: Domain,
}

/// Curvatures of a flat box or torus under a diagonal second spectral
/// moment.
///
/// Every stratum of a box is flat, so only the top term of the general
/// curvature integral survives and each k-face contributes its metric
/// volume weighted by the interior solid angle `2^-(n-k)` of its normal
/// cone. Summed over faces this collapses to the elementary symmetric
/// polynomials in the metric side lengths. A flat torus has no boundary
/// strata at all: only `L_n = vol_g` is nonzero.
pub fn lk_curvatures(domain: &Domain, lambda: &nalgebra::DMatrix<f64>) -> Result<LkCurvatures> {
    let n = domain.dimension();
    if lambda.nrows() != n || lambda.ncols() != n {
        return Err(Error::Domain(format!(
            "metric is {}x{} but the domain has dimension {n}",
            lambda.nrows(),
            lambda.ncols()
        )));
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && lambda[(i, j)].abs() > 1e-12 {
                return Err(Error::Domain(
                    "only diagonal second spectral moments are supported".into(),
                ));
            }
        }
        if lambda[(i, i)] <= 0.0 {
            return Err(Error::Domain("metric must be positive definite".into()));
        }
    }
    let metric_sides: Vec<f64> = domain
        .side_lengths
        .iter()
        .enumerate()
        .map(|(i, &t)| lambda[(i, i)].sqrt() * t)
        .collect();
    let values = match domain.shape {
        DomainShape::Torus => {
            let mut v = vec![0.0; n + 1];
            v[n] = metric_sides.iter().product();
            v
        }
        DomainShape::Box | DomainShape::Interval => elementary_symmetric(&metric_sides),
    };
    Ok(LkCurvatures {
        values,
        domain: domain.clone(),
    })
}

fn elementary_symmetric(a: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; a.len() + 1];
    e[0] = 1.0;
    for &x in a {
        for k in (1..e.len()).rev() {
            e[k] += x * e[k - 1];
        }
    }
    e
}

/// Expected Euler characteristic of the excursion set `{f >= u}`:
/// `sum_k (2 pi)^-(k+1)/2 L_k H_{k-1}(u) exp(-u^2/2)`.
///
/// This is an exact law, not an asymptotic. The `k = 0` term is evaluated
/// as `L_0 Psi(u)` directly so that the formula stays finite for any `u`.
pub fn expected_euler(lk: &LkCurvatures, u: f64) -> f64 {
    let n = lk.values.len() - 1;
    let mut total = lk.values[0] * gaussian_upper_tail(u);
    let damp = (-0.5 * u * u).exp();
    for k in 1..=n {
        let h = hermite(k as i32 - 1, u).expect("order >= 0");
        total += TWO_PI.powf(-0.5 * (k as f64 + 1.0)) * lk.values[k] * h * damp;
    }
    total
}

/// Which error regime drives a component-count prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorRegime {
    /// `1 + O(1/u)`: the general stratified-domain estimate.
    InversePolynomial,
    /// `1 + O(exp(-c u^2))`: the refined estimate on closed manifolds.
    ExponentialInLevel,
}

/// Leading and refined predictions for the expected number of connected
/// components of `{f >= u}` (equivalently, of high nodal sets and of their
/// ball/sphere-shaped subfamilies, which share the same asymptotic).
#[derive(Debug, Clone)]
pub struct ComponentPrediction {
    /// `(2 pi)^-(n+1)/2 vol_g u^(n-1) exp(-u^2/2)`.
    pub leading: f64,
    /// Hermite-refined form on closed manifolds; `None` when the domain has
    /// a boundary, where only the leading form is controlled.
    pub refined: Option<f64>,
    pub regime: ErrorRegime,
    /// Lowest level at which the underlying error estimates start to hold.
    pub valid_from: f64,
}

impl ComponentPrediction {
    /// Refined value when available, otherwise the leading one.
    pub fn best(&self) -> f64 {
        self.refined.unwrap_or(self.leading)
    }
}

/// Expected-component asymptotics on a flat domain at a positive level.
///
/// Below the model envelope's `u_1` the formulas are still returned but
/// `valid_from` flags that the error control has not kicked in yet.
pub fn expected_components_asymptotic(
    domain: &Domain,
    model: &SpectralModel,
    u: f64,
) -> Result<ComponentPrediction> {
    if u <= 0.0 {
        return Err(Error::InvalidArgument(
            "component asymptotics hold for positive levels".into(),
        ));
    }
    let n = domain.dimension();
    if n != model.dimension() {
        return Err(Error::Domain(
            "domain and model dimensions disagree".into(),
        ));
    }
    let lk = lk_curvatures(domain, model.second_moment())?;
    let vol_g = lk.values[n];
    let damp = (-0.5 * u * u).exp();
    let pref = TWO_PI.powf(-0.5 * (n as f64 + 1.0)) * vol_g;
    let leading = pref * u.powi(n as i32 - 1) * damp;
    let (refined, regime) = if domain.is_closed() {
        let h = hermite(n as i32 - 1, u)?;
        (Some(pref * h * damp), ErrorRegime::ExponentialInLevel)
    } else {
        (None, ErrorRegime::InversePolynomial)
    };
    Ok(ComponentPrediction {
        leading,
        refined,
        regime,
        valid_from: model.hessian_law()?.envelope.u1,
    })
}

/// Asymptotic volume density of connected components of the nodal set
/// `{f = u}` of a stationary field on all of euclidean space:
/// `(2 pi)^-(n+1)/2 sqrt(det Lambda) H_{n-1}(u) exp(-u^2/2)`.
pub fn nazarov_sodin_cz(model: &SpectralModel, u: f64) -> f64 {
    let n = model.dimension();
    let c_n = model.second_moment().determinant().sqrt();
    let h = hermite(n as i32 - 1, u).expect("order >= 0");
    TWO_PI.powf(-0.5 * (n as f64 + 1.0)) * c_n * h * (-0.5 * u * u).exp()
}
