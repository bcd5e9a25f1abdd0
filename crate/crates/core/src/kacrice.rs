//! Monte-Carlo evaluation of the Kac-Rice critical-point densities by
//! index, the closed-form total asymptotic, and the exponential
//! suppression of non-extremal critical points.
//!
//! For a full-dimensional stationary field the expected number of index-i
//! critical points with `f <= u`, per unit Lebesgue volume, is
//! `(2 pi)^{-n/2} det(Lambda)^{-1/2} E[ |det H| 1{ind H = i} 1{f <= u} ]`
//! where `(f, H)` is jointly Gaussian with `Cov(f, H) = -Lambda` and
//! `Cov(H, H) = kappa`. The level indicator is handled by sampling `f`
//! from the truncated Gaussian directly and weighting by the tail mass,
//! so deep levels cost nothing extra.

use crate::covariance::{sym_pairs, Envelope, SpectralModel};
use crate::error::{Error, Result};
use crate::exec;
use crate::special::{gaussian_upper_tail, normal_quantile};
use crate::theory::{lk_curvatures, Domain};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
const BATCH: u64 = 1 << 15;

/// Per-index critical-point densities at one level, per unit Lebesgue
/// volume.
#[derive(Debug, Clone)]
pub struct KacRiceEstimate {
    pub u: f64,
    pub densities: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub total: f64,
    pub total_stderr: f64,
    /// Closed-form total asymptotic at the same level, when `u <= -1`.
    pub asymptotic: Option<f64>,
    pub envelope: Envelope,
    pub n_samples: u64,
}

struct JointSampler {
    n: usize,
    pairs: Vec<(usize, usize)>,
    /// Square root factor of the conditional entry covariance.
    factor: DMatrix<f64>,
    lambda_diag: Vec<f64>,
    /// `P(f <= u)`; the truncated-sampling weight.
    tail_mass: f64,
    u: f64,
}

impl JointSampler {
    fn new(model: &SpectralModel, u: f64) -> Result<JointSampler> {
        let n = model.dimension();
        let pairs = sym_pairs(n);
        let d = pairs.len();
        let lambda = model.second_moment();
        let kappa = model.fourth_moment();
        let mut cov = DMatrix::zeros(d, d);
        for (a, &(i, j)) in pairs.iter().enumerate() {
            for (b, &(k, l)) in pairs.iter().enumerate() {
                cov[(a, b)] = kappa.get(i, j, k, l) - lambda[(i, j)] * lambda[(k, l)];
            }
        }
        let eig = nalgebra::SymmetricEigen::new(cov);
        let min = eig.eigenvalues.min();
        let scale = eig.eigenvalues.max().abs().max(1.0);
        if min < -1e-10 * scale {
            return Err(Error::BadJet(format!(
                "joint (f, hessian) covariance has eigenvalue {min:.3e}"
            )));
        }
        let mut factor = eig.eigenvectors.clone();
        for (c, &l) in eig.eigenvalues.iter().enumerate() {
            factor.column_mut(c).scale_mut(l.max(0.0).sqrt());
        }
        Ok(JointSampler {
            n,
            pairs,
            factor,
            lambda_diag: (0..n).map(|i| lambda[(i, i)]).collect(),
            tail_mass: gaussian_upper_tail(-u),
            u,
        })
    }

    /// Draws `(f, H)` with `f` already conditioned on `f <= u`; fills the
    /// row-major symmetric matrix `h`.
    fn draw(&self, rng: &mut ChaCha8Rng, z: &mut [f64], h: &mut [f64]) -> f64 {
        let f = if self.u.is_infinite() && self.u > 0.0 {
            rng.sample(StandardNormal)
        } else {
            let v: f64 = rng.random::<f64>();
            normal_quantile((v * self.tail_mass).clamp(1e-300, 1.0))
        };
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let n = self.n;
        h.iter_mut().for_each(|x| *x = 0.0);
        for (a, &(i, j)) in self.pairs.iter().enumerate() {
            let mut g = 0.0;
            for (c, zc) in z.iter().enumerate() {
                g += self.factor[(a, c)] * zc;
            }
            h[i * n + j] = g;
            h[j * n + i] = g;
        }
        // Conditional mean of the Hessian given f (diagonal metric).
        for i in 0..n {
            h[i * n + i] -= f * self.lambda_diag[i];
        }
        f
    }
}

/// Determinant and Morse index of a small symmetric matrix; leading
/// principal minors when they are safely nonzero, eigenvalues otherwise.
fn det_and_index(h: &[f64], n: usize) -> (f64, usize) {
    match n {
        1 => {
            let d = h[0];
            (d, usize::from(d < 0.0))
        }
        2 => {
            let det = h[0] * h[3] - h[1] * h[1];
            let trace = h[0] + h[3];
            if det.abs() > 1e-300 {
                if det < 0.0 {
                    (det, 1)
                } else if trace < 0.0 {
                    (det, 2)
                } else {
                    (det, 0)
                }
            } else {
                eigen_index(h, n)
            }
        }
        3 => {
            let m1 = h[0];
            let m2 = h[0] * h[4] - h[1] * h[3];
            let det = h[0] * (h[4] * h[8] - h[5] * h[7]) - h[1] * (h[3] * h[8] - h[5] * h[6])
                + h[2] * (h[3] * h[7] - h[4] * h[6]);
            let scale = h.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
            if m1.abs() > 1e-9 * scale && m2.abs() > 1e-9 * scale * scale {
                // Jacobi: sign changes in (1, m1, m2, m3) count negative
                // eigenvalues when no minor vanishes.
                let seq = [1.0, m1, m2, det];
                let mut index = 0;
                for w in seq.windows(2) {
                    if w[0].signum() != w[1].signum() {
                        index += 1;
                    }
                }
                (det, index)
            } else {
                eigen_index(h, n)
            }
        }
        _ => eigen_index(h, n),
    }
}

fn eigen_index(h: &[f64], n: usize) -> (f64, usize) {
    let m = DMatrix::from_row_slice(n, n, h);
    let eig = nalgebra::SymmetricEigen::new(m);
    let det: f64 = eig.eigenvalues.iter().product();
    let index = eig.eigenvalues.iter().filter(|&&l| l < 0.0).count();
    (det, index)
}

#[derive(Clone)]
struct Accum {
    count: f64,
    sums: Vec<f64>,
    sumsqs: Vec<f64>,
    cross_nonmax_total: f64,
    nonmax_hits: u64,
}

impl Accum {
    fn new(d: usize) -> Self {
        Accum {
            count: 0.0,
            sums: vec![0.0; d],
            sumsqs: vec![0.0; d],
            cross_nonmax_total: 0.0,
            nonmax_hits: 0,
        }
    }

    fn merge(&mut self, other: &Accum) {
        self.count += other.count;
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        for (a, b) in self.sumsqs.iter_mut().zip(&other.sumsqs) {
            *a += b;
        }
        self.cross_nonmax_total += other.cross_nonmax_total;
        self.nonmax_hits += other.nonmax_hits;
    }
}

fn run_batches(model: &SpectralModel, u: f64, n_samples: u64, seed: u64) -> Result<Accum> {
    let n = model.dimension();
    let sampler = JointSampler::new(model, u)?;
    // Slots: one per index, then the total |det|.
    let slots = n + 2;
    let n_batches = n_samples.div_ceil(BATCH);
    let batches = exec::map_indexed(n_batches as usize, |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(exec::mix_seed(seed, b as u64));
        let mut acc = Accum::new(slots);
        let mut z = vec![0.0; sampler.pairs.len()];
        let mut h = vec![0.0; n * n];
        let in_batch = BATCH.min(n_samples - b as u64 * BATCH);
        for _ in 0..in_batch {
            sampler.draw(&mut rng, &mut z, &mut h);
            let (det, index) = det_and_index(&h, n);
            let x = det.abs();
            acc.count += 1.0;
            acc.sums[index] += x;
            acc.sumsqs[index] += x * x;
            acc.sums[n + 1] += x;
            acc.sumsqs[n + 1] += x * x;
            if index > 0 {
                acc.cross_nonmax_total += x * x;
                acc.nonmax_hits += 1;
            }
        }
        acc
    });
    let mut total = Accum::new(slots);
    for b in &batches {
        total.merge(b);
    }
    Ok(total)
}

/// Monte-Carlo Kac-Rice densities by index at level `u` (which may be
/// `f64::INFINITY` for the unconditioned totals).
pub fn critical_density_mc(
    model: &SpectralModel,
    u: f64,
    n_samples: u64,
    seed: u64,
) -> Result<KacRiceEstimate> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let n = model.dimension();
    let envelope = model.hessian_law()?.envelope;
    let tail_mass = gaussian_upper_tail(-u);
    let asymptotic = if u <= -1.0 {
        Some(total_density_asymptotic(model, u))
    } else {
        None
    };
    if tail_mass == 0.0 {
        return Ok(KacRiceEstimate {
            u,
            densities: vec![0.0; n + 1],
            stderrs: vec![0.0; n + 1],
            total: 0.0,
            total_stderr: 0.0,
            asymptotic,
            envelope,
            n_samples,
        });
    }
    let acc = run_batches(model, u, n_samples, seed)?;
    let det_lambda = model.second_moment().determinant();
    let prefactor = TWO_PI.powf(-(n as f64) / 2.0) / det_lambda.sqrt() * tail_mass;
    let m = acc.count;
    let to_stats = |sum: f64, sumsq: f64| {
        let mean = sum / m;
        let var = (sumsq / m - mean * mean).max(0.0);
        (prefactor * mean, prefactor * (var / m).sqrt())
    };
    let mut densities = Vec::with_capacity(n + 1);
    let mut stderrs = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let (d, s) = to_stats(acc.sums[i], acc.sumsqs[i]);
        densities.push(d);
        stderrs.push(s);
    }
    let (total, total_stderr) = to_stats(acc.sums[n + 1], acc.sumsqs[n + 1]);
    Ok(KacRiceEstimate {
        u,
        densities,
        stderrs,
        total,
        total_stderr,
        asymptotic,
        envelope,
        n_samples,
    })
}

/// Total critical-point density asymptotic per unit Lebesgue volume:
/// `(2 pi)^{-(n+1)/2} sqrt(det Lambda) |u|^{n-1} exp(-u^2/2)`.
pub fn total_density_asymptotic(model: &SpectralModel, u: f64) -> f64 {
    let n = model.dimension() as f64;
    TWO_PI.powf(-0.5 * (n + 1.0))
        * model.second_moment().determinant().sqrt()
        * u.abs().powf(n - 1.0)
        * (-0.5 * u * u).exp()
}

/// Expected total number of critical points in the sojourn set over a
/// whole flat domain: the density asymptotic times the metric volume.
pub fn critical_total_asymptotic(model: &SpectralModel, domain: &Domain, u: f64) -> Result<f64> {
    if u > -1.0 {
        return Err(Error::InvalidArgument(
            "the total asymptotic holds for u <= -1 (sojourn side)".into(),
        ));
    }
    let lk = lk_curvatures(domain, model.second_moment())?;
    let vol_g = lk.values[domain.dimension()];
    let n = domain.dimension() as f64;
    Ok(TWO_PI.powf(-0.5 * (n + 1.0)) * vol_g * u.abs().powf(n - 1.0) * (-0.5 * u * u).exp())
}

#[derive(Debug, Clone)]
pub struct NonmaxRow {
    pub u: f64,
    pub fraction: f64,
    pub stderr: f64,
}

/// Fractions of non-minimal critical points below each level, with the
/// fitted exponential rate against the envelope's prediction.
#[derive(Debug, Clone)]
pub struct NonmaxReport {
    pub rows: Vec<NonmaxRow>,
    /// OLS slope of `ln(fraction)` against `u^2`.
    pub fitted_slope: f64,
    /// `-theta / 2` from the model envelope.
    pub theory_slope: f64,
    /// Levels whose indicator count fell below the resolution floor of 30
    /// hits, or that sit above `-u_0` where the suppression bound has not
    /// kicked in.
    pub warnings: Vec<String>,
}

/// Monte-Carlo fractions `(C - C_0) / C` of the critical points below
/// each level in `u_grid`.
pub fn nonmax_fraction(
    model: &SpectralModel,
    u_grid: &[f64],
    n_samples: u64,
    seed: u64,
) -> Result<NonmaxReport> {
    let n = model.dimension();
    let envelope = model.hessian_law()?.envelope;
    let mut rows = Vec::with_capacity(u_grid.len());
    let mut warnings = Vec::new();
    for (k, &u) in u_grid.iter().enumerate() {
        if u > -envelope.u0 {
            warnings.push(format!(
                "level {u} is above -u0 = {:.3}; suppression bound not yet effective",
                -envelope.u0
            ));
        }
        let acc = run_batches(model, u, n_samples, exec::mix_seed(seed, k as u64))?;
        let m = acc.count;
        let num_sum: f64 = acc.sums[1..=n].iter().sum();
        let num_sumsq = acc.cross_nonmax_total;
        let den_sum = acc.sums[n + 1];
        let den_sumsq = acc.sumsqs[n + 1];
        let num_mean = num_sum / m;
        let den_mean = den_sum / m;
        let fraction = if den_mean > 0.0 { num_mean / den_mean } else { 0.0 };
        // Delta method for the ratio of correlated means. The numerator
        // is a censored copy of the denominator, so Cov(num, den) =
        // E[num * den] - E[num] E[den] with num * den = num^2.
        let var_num = (num_sumsq / m - num_mean * num_mean).max(0.0);
        let var_den = (den_sumsq / m - den_mean * den_mean).max(0.0);
        let cov = num_sumsq / m - num_mean * den_mean;
        let var_ratio = if den_mean > 0.0 {
            ((var_num - 2.0 * fraction * cov + fraction * fraction * var_den) / m).max(0.0)
                / (den_mean * den_mean)
        } else {
            0.0
        };
        if acc.nonmax_hits < 30 {
            warnings.push(format!(
                "level {u}: only {} non-extremal hits out of {} samples",
                acc.nonmax_hits, n_samples
            ));
        }
        rows.push(NonmaxRow {
            u,
            fraction,
            stderr: var_ratio.sqrt(),
        });
    }
    // ln(fraction) against u^2, ordinary least squares.
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.fraction > 0.0)
        .map(|r| (r.u * r.u, r.fraction.ln()))
        .collect();
    let fitted_slope = ols_slope(&pts);
    Ok(NonmaxReport {
        rows,
        fitted_slope,
        theory_slope: -envelope.theta / 2.0,
        warnings,
    })
}

fn ols_slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return f64::NAN;
    }
    let m = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (m * sxy - sx * sy) / (m * sxx - sx * sx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{make_model, ModelKind};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn one_dimensional_rice_total() {
        // (1/pi) sqrt(lambda4 / lambda2) = sqrt(3)/pi for this model.
        let model = make_model(ModelKind::BargmannFock, 1).unwrap();
        let est = critical_density_mc(&model, f64::INFINITY, 1_000_000, 42).unwrap();
        let expect = 0.55132889542179205;
        assert!(
            (est.total - expect).abs() <= 3.0 * est.total_stderr,
            "total {} +- {} vs {}",
            est.total,
            est.total_stderr,
            expect
        );
        // Index sum matches the total by construction and by statistics.
        let sum: f64 = est.densities.iter().sum();
        assert_relative_eq!(sum, est.total, max_relative = 1e-12);
    }

    #[test]
    fn deep_level_estimate_is_zero() {
        let model = make_model(ModelKind::BargmannFock, 1).unwrap();
        let est = critical_density_mc(&model, f64::NEG_INFINITY, 1000, 1).unwrap();
        assert_eq!(est.total, 0.0);
        assert!(est.densities.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn morse_alternating_sum_vanishes_in_2d() {
        let model = make_model(ModelKind::BargmannFock, 2).unwrap();
        let est = critical_density_mc(&model, f64::INFINITY, 1_000_000, 7).unwrap();
        let alt = est.densities[0] - est.densities[1] + est.densities[2];
        let se = (est.stderrs.iter().map(|s| s * s).sum::<f64>()).sqrt();
        assert!(alt.abs() <= 3.0 * se, "alternating sum {alt} vs se {se}");
    }

    #[test]
    fn negation_symmetry_between_indices() {
        // Density of index-i points with f <= u equals the density of
        // index-(n-i) points with f >= -u.
        let model = make_model(ModelKind::BargmannFock, 2).unwrap();
        let u = -1.0;
        let below = critical_density_mc(&model, u, 400_000, 11).unwrap();
        let all = critical_density_mc(&model, f64::INFINITY, 400_000, 12).unwrap();
        let at_negu = critical_density_mc(&model, -u, 400_000, 13).unwrap();
        for i in 0..=2 {
            let lhs = below.densities[i];
            let rhs = all.densities[2 - i] - at_negu.densities[2 - i];
            let se = (below.stderrs[i].powi(2)
                + all.stderrs[2 - i].powi(2)
                + at_negu.stderrs[2 - i].powi(2))
            .sqrt();
            assert!(
                (lhs - rhs).abs() <= 4.0 * se,
                "index {i}: {lhs} vs {rhs} (se {se})"
            );
        }
    }

    #[test]
    fn mc_total_approaches_asymptotic_at_deep_levels() {
        let model = make_model(ModelKind::BargmannFock, 2).unwrap();
        let est = critical_density_mc(&model, -4.0, 400_000, 3).unwrap();
        let asym = est.asymptotic.unwrap();
        let ratio = est.total / asym;
        assert!(
            (ratio - 1.0).abs() < 0.10,
            "ratio {ratio} at u = -4 should be within 10%"
        );
    }

    #[test]
    fn total_asymptotic_closed_forms() {
        let model = make_model(ModelKind::BargmannFock, 2).unwrap();
        let domain = Domain::torus(vec![40.0, 40.0]).unwrap();
        let v = critical_total_asymptotic(&model, &domain, -3.0).unwrap();
        assert_relative_eq!(v, 3.3856827926107212, max_relative = 1e-12);
        assert!(critical_total_asymptotic(&model, &domain, 0.5).is_err());

        // One dimension reduces to the Rice tail on an interval.
        let m1 = make_model(ModelKind::BargmannFock, 1).unwrap();
        let d1 = Domain::new(crate::theory::DomainShape::Interval, vec![100.0]).unwrap();
        let got = critical_total_asymptotic(&m1, &d1, -2.0).unwrap();
        let rice = 100.0 * (-2.0f64 * 2.0 / 2.0).exp() / TWO_PI;
        assert_relative_eq!(got, rice, max_relative = 1e-12);
    }

    #[test]
    fn nonmax_fractions_decay() {
        let model = make_model(ModelKind::BargmannFock, 2).unwrap();
        let report = nonmax_fraction(&model, &[-2.5, -3.0, -3.5], 1_000_000, 5).unwrap();
        assert!(report.rows[0].fraction > report.rows[1].fraction);
        assert!(report.rows[1].fraction > report.rows[2].fraction);
        assert!(report.fitted_slope < 0.0);
        assert_abs_diff_eq!(report.theory_slope, -0.25, epsilon = 1e-12);
        assert!(report.warnings.is_empty(), "{:?}", report.warnings);
    }

    #[test]
    fn determinism_across_thread_counts() {
        // Batched seeding makes the estimate independent of scheduling.
        let model = make_model(ModelKind::BargmannFock, 2).unwrap();
        let a = critical_density_mc(&model, -2.0, 200_000, 99).unwrap();
        let b = critical_density_mc(&model, -2.0, 200_000, 99).unwrap();
        assert_eq!(a.total.to_bits(), b.total.to_bits());
    }

    #[test]
    fn index_classifier_matches_eigen_route() {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for n in 1..=3usize {
            for _ in 0..500 {
                let mut h = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..=i {
                        let v: f64 = rng.sample(rand_distr::StandardNormal);
                        h[i * n + j] = v;
                        h[j * n + i] = v;
                    }
                }
                let (det_fast, idx_fast) = det_and_index(&h, n);
                let (det_eig, idx_eig) = eigen_index(&h, n);
                assert_eq!(idx_fast, idx_eig);
                assert_relative_eq!(det_fast, det_eig, max_relative = 1e-8, epsilon = 1e-10);
            }
        }
    }
}
