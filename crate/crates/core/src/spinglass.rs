//! The p-spin spherical model: Gaussian polynomial Hamiltonians on the
//! sphere of radius sqrt(n), GOE-based evaluation of expected critical
//! point counts by index, numerical complexity-exponent probes, and a
//! dense multistart search for exact small-n cross-checks.
//!
//! The Hamiltonian is `f(x) = n^{-(p-1)/2} sum a_{i1..ip} x_{i1}..x_{ip}`
//! with iid standard Gaussian coefficients, normalized so that
//! `E f(x)^2 = n` on the sphere and `e(x, y) = n^{1-p} <x, y>^p`.

use crate::error::{Error, Result};
use crate::exec;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const MAX_TENSOR_ENTRIES: usize = 10_000_000;

/// Threshold energy `E_inf = 2 sqrt((p-1)/p)`; below `-E_inf` the
/// complexity of minima dominates all other indices.
pub fn threshold_energy(p: usize) -> f64 {
    2.0 * ((p as f64 - 1.0) / p as f64).sqrt()
}

/// A materialized p-spin Hamiltonian.
#[derive(Debug, Clone)]
pub struct SpinGlassModel {
    p: usize,
    n: usize,
    /// Symmetrized coefficient tensor, flat row-major `n^p`. The raw iid
    /// tensor and its symmetrization define the same function of `x`.
    coeffs: Vec<f64>,
    pub seed: u64,
}

impl SpinGlassModel {
    pub fn new(p: usize, n: usize, seed: u64) -> Result<SpinGlassModel> {
        if p < 2 {
            return Err(Error::InvalidModel("p-spin needs p >= 2".into()));
        }
        if n < 2 {
            return Err(Error::InvalidModel("p-spin needs n >= 2".into()));
        }
        let entries = (n as u128).pow(p as u32);
        if entries > MAX_TENSOR_ENTRIES as u128 {
            return Err(Error::InvalidModel(format!(
                "coefficient tensor would take {entries} entries; limit is {MAX_TENSOR_ENTRIES}"
            )));
        }
        let entries = entries as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..entries).map(|_| rng.sample(StandardNormal)).collect();
        // Symmetrize by averaging over index permutations; done in two
        // passes through canonical (sorted) index tuples.
        let mut sums = vec![0.0f64; entries];
        let mut counts = vec![0u32; entries];
        let mut tuple = vec![0usize; p];
        for (idx, &v) in raw.iter().enumerate() {
            decode(idx, n, &mut tuple);
            tuple.sort_unstable();
            let canon = encode(&tuple, n);
            sums[canon] += v;
            counts[canon] += 1;
        }
        let mut coeffs = vec![0.0f64; entries];
        for (idx, c) in coeffs.iter_mut().enumerate() {
            decode(idx, n, &mut tuple);
            tuple.sort_unstable();
            let canon = encode(&tuple, n);
            *c = sums[canon] / f64::from(counts[canon]);
        }
        Ok(SpinGlassModel {
            p,
            n,
            coeffs,
            seed,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sphere_radius(&self) -> f64 {
        (self.n as f64).sqrt()
    }

    /// Value, Riemannian gradient and Riemannian Hessian at a point of
    /// the sphere `|x|^2 = n`.
    pub fn eval_sphere(&self, x: &[f64]) -> Result<SphereJet> {
        let n = self.n;
        if x.len() != n {
            return Err(Error::InvalidArgument("point dimension mismatch".into()));
        }
        let r2: f64 = x.iter().map(|v| v * v).sum();
        if (r2 - n as f64).abs() > 1e-9 * n as f64 {
            return Err(Error::InvalidArgument(format!(
                "point is off the sphere: |x|^2 = {r2}, expected {n}"
            )));
        }
        let scale = (n as f64).powf(-((self.p as f64 - 1.0) / 2.0));
        // Chain contraction of the symmetric tensor with x, last axis
        // first; keep the n x n and n stages for derivatives.
        let mut stage = self.coeffs.clone();
        let mut len = stage.len();
        let mut matrix = vec![0.0; n * n];
        let mut vector = vec![0.0; n];
        for k in (1..=self.p).rev() {
            let out_len = len / n;
            let mut out = vec![0.0; out_len];
            for (t, o) in out.iter_mut().enumerate() {
                let row = &stage[t * n..(t + 1) * n];
                *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
            }
            stage = out;
            len = out_len;
            if len == n * n {
                matrix.copy_from_slice(&stage);
            }
            if len == n {
                vector.copy_from_slice(&stage);
            }
        }
        if self.p == 2 {
            matrix.copy_from_slice(&self.coeffs);
        }
        let value = scale * stage[0];
        let p = self.p as f64;
        let euclidean_gradient: Vec<f64> = vector.iter().map(|v| scale * p * v).collect();
        let mut euclidean_hessian = DMatrix::from_row_slice(n, n, &matrix);
        euclidean_hessian *= scale * p * (p - 1.0);

        // Tangential projector P = I - x x^T / n.
        let xv = DVector::from_column_slice(x);
        let proj = DMatrix::identity(n, n) - &xv * xv.transpose() / n as f64;
        let egrad = DVector::from_column_slice(&euclidean_gradient);
        let rgrad = &proj * &egrad;
        let radial = egrad.dot(&xv) / n as f64;
        let rhess = &proj * euclidean_hessian * &proj - &proj * radial;
        Ok(SphereJet {
            value,
            gradient: rgrad.as_slice().to_vec(),
            hessian: rhess,
            euclidean_gradient,
        })
    }
}

fn decode(mut idx: usize, n: usize, tuple: &mut [usize]) {
    for t in tuple.iter_mut().rev() {
        *t = idx % n;
        idx /= n;
    }
}

fn encode(tuple: &[usize], n: usize) -> usize {
    tuple.iter().fold(0, |acc, &t| acc * n + t)
}

/// Jet of the Hamiltonian restricted to the sphere, in ambient
/// coordinates. The Hessian is the Riemannian one (projected and
/// corrected by the radial derivative), restricted to the tangent space.
#[derive(Debug, Clone)]
pub struct SphereJet {
    pub value: f64,
    /// Tangential gradient.
    pub gradient: Vec<f64>,
    /// Riemannian Hessian as an ambient matrix annihilating `x`.
    pub hessian: DMatrix<f64>,
    pub euclidean_gradient: Vec<f64>,
}

/// Draws one GOE matrix (diagonal variance `1/n`, off-diagonal `1/(2n)`)
/// and returns its eigenvalues sorted ascending. The normalization puts
/// the spectral edges at plus/minus sqrt(2).
pub fn sample_goe_eigenvalues(n: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    let diag = (1.0 / n as f64).sqrt();
    let off = (1.0 / (2.0 * n as f64)).sqrt();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let g: f64 = rng.sample(StandardNormal);
            let v = if i == j { diag * g } else { off * g };
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let eig = nalgebra::SymmetricEigen::new(m);
    let mut eigs: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    eigs.sort_by(f64::total_cmp);
    eigs
}

/// Monte-Carlo estimate of the expected count of index-i critical points
/// of the p-spin Hamiltonian in the sojourn set `{f <= n u}`.
#[derive(Debug, Clone)]
pub struct GoeEstimate {
    pub value: f64,
    pub stderr: f64,
    /// `ln` of the estimate, assembled in log space so large `n` does not
    /// overflow the `(p-1)^{n/2}` prefactor.
    pub log_value: f64,
    /// Samples whose ordered eigenvalue passed the level indicator.
    pub passed: u64,
    pub warning: Option<String>,
}

/// Evaluates the exact GOE representation of `E C_i(S_{nu})`:
/// `sqrt(8/p) (p-1)^{n/2} E[ exp(-n (p-2)/p lambda_i^2)
/// 1{lambda_i <= sqrt(p/(2(p-1))) u} ]`
/// with eigenvalues sorted ascending.
pub fn expected_crit_goe(
    p: usize,
    n: usize,
    index: usize,
    u: f64,
    n_samples: u64,
    seed: u64,
) -> Result<GoeEstimate> {
    if p < 2 || n < 2 {
        return Err(Error::InvalidArgument("need p >= 2 and n >= 2".into()));
    }
    if index >= n {
        return Err(Error::InvalidArgument(format!(
            "index {index} out of range for n = {n}"
        )));
    }
    let pf = p as f64;
    let nf = n as f64;
    let threshold = (pf / (2.0 * (pf - 1.0))).sqrt() * u;
    let decay = nf * (pf - 2.0) / pf;
    let batch = 4096u64;
    let n_batches = n_samples.div_ceil(batch);
    let partials = exec::map_indexed(n_batches as usize, |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(exec::mix_seed(seed, b as u64));
        let in_batch = batch.min(n_samples - b as u64 * batch);
        let (mut sum, mut sumsq, mut passed) = (0.0f64, 0.0f64, 0u64);
        for _ in 0..in_batch {
            let eigs = sample_goe_eigenvalues(n, &mut rng);
            let li = eigs[index];
            if li <= threshold {
                let term = (-decay * li * li).exp();
                sum += term;
                sumsq += term * term;
                passed += 1;
            }
        }
        (sum, sumsq, passed)
    });
    let (mut sum, mut sumsq, mut passed) = (0.0, 0.0, 0u64);
    for (s, ss, c) in partials {
        sum += s;
        sumsq += ss;
        passed += c;
    }
    let m = n_samples as f64;
    let mean = sum / m;
    let var = (sumsq / m - mean * mean).max(0.0);
    let log_prefactor = 0.5 * (8.0 / pf).ln() + 0.5 * nf * (pf - 1.0).ln();
    let prefactor = log_prefactor.exp();
    let warning = (passed < 30).then(|| {
        format!("only {passed} of {n_samples} samples passed the level indicator at u = {u}")
    });
    Ok(GoeEstimate {
        value: prefactor * mean,
        stderr: prefactor * (var / m).sqrt(),
        log_value: log_prefactor + mean.ln(),
        passed,
        warning,
    })
}

#[derive(Debug, Clone)]
pub struct ProbeRow {
    pub n: usize,
    /// `(1/n) ln E C_0(S_{nu})`.
    pub log_density: f64,
    /// Absolute change from the previous row; a Cauchy-style convergence
    /// diagnostic for the large-n limit.
    pub gap: Option<f64>,
    pub passed: u64,
}

/// Convergence probe for the complexity exponent of minima: evaluates
/// `(1/n) ln E C_0(S_{nu})` along increasing `n`. The limit has no closed
/// form here; the shrinking gaps are the deliverable.
pub fn complexity_probe(
    p: usize,
    u: f64,
    n_list: &[usize],
    n_samples: u64,
    seed: u64,
) -> Result<Vec<ProbeRow>> {
    if u >= -threshold_energy(p) {
        return Err(Error::InvalidArgument(format!(
            "probe needs u < -E_inf = {:.6}",
            -threshold_energy(p)
        )));
    }
    let mut rows: Vec<ProbeRow> = Vec::with_capacity(n_list.len());
    for (k, &n) in n_list.iter().enumerate() {
        let est = expected_crit_goe(p, n, 0, u, n_samples, exec::mix_seed(seed, k as u64))?;
        let log_density = est.log_value / n as f64;
        let gap = rows.last().map(|prev: &ProbeRow| (log_density - prev.log_density).abs());
        rows.push(ProbeRow {
            n,
            log_density,
            gap,
            passed: est.passed,
        });
    }
    Ok(rows)
}

/// A critical point of the Hamiltonian on the sphere.
#[derive(Debug, Clone)]
pub struct SphereCriticalPoint {
    pub position: Vec<f64>,
    pub value: f64,
    /// Negative-eigenvalue count of the Riemannian Hessian on the
    /// tangent space.
    pub index: usize,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct BruteForceResult {
    pub points: Vec<SphereCriticalPoint>,
    pub failed_starts: usize,
    pub n_starts: usize,
}

impl BruteForceResult {
    pub fn counts_by_index(&self, n: usize) -> Vec<usize> {
        let mut counts = vec![0usize; n];
        for p in &self.points {
            counts[p.index] += 1;
        }
        counts
    }

    /// `sum_i (-1)^i C_i`, which must equal the Euler characteristic of
    /// the sphere for a complete Morse search.
    pub fn euler_sum(&self, n: usize) -> i64 {
        self.counts_by_index(n)
            .iter()
            .enumerate()
            .map(|(i, &c)| if i % 2 == 0 { c as i64 } else { -(c as i64) })
            .sum()
    }
}

/// Dense multistart projected Newton over the sphere; every converged
/// point is deduplicated by geodesic distance and classified by the
/// eigensigns of the tangential Hessian.
pub fn brute_force_crit_search(
    model: &SpinGlassModel,
    n_starts: usize,
    tol: f64,
    seed: u64,
) -> Result<BruteForceResult> {
    let n = model.n();
    if n > 6 {
        return Err(Error::InvalidArgument(
            "dense multistart is meant for small dimensions".into(),
        ));
    }
    let radius = model.sphere_radius();
    let outcomes = exec::map_indexed(n_starts, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(exec::mix_seed(seed, s as u64));
        let mut x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        rescale(&mut x, radius);
        projected_newton(model, &mut x, tol)
    });
    let mut converged: Vec<SphereCriticalPoint> = Vec::new();
    let mut failed = 0usize;
    for o in outcomes {
        match o {
            Some(p) => converged.push(p),
            None => failed += 1,
        }
    }
    converged.sort_by(|a, b| {
        a.value
            .total_cmp(&b.value)
            .then_with(|| a.position[0].total_cmp(&b.position[0]))
    });
    let mut points: Vec<SphereCriticalPoint> = Vec::new();
    'next: for p in converged {
        for q in &points {
            if geodesic_distance(&p.position, &q.position, radius) < 1e-4 {
                continue 'next;
            }
        }
        points.push(p);
    }
    Ok(BruteForceResult {
        points,
        failed_starts: failed,
        n_starts,
    })
}

fn projected_newton(
    model: &SpinGlassModel,
    x: &mut [f64],
    tol: f64,
) -> Option<SphereCriticalPoint> {
    let n = model.n();
    let radius = model.sphere_radius();
    for _ in 0..80 {
        let jet = model.eval_sphere(x).ok()?;
        let gnorm = norm(&jet.gradient);
        if gnorm < tol {
            let basis = tangent_basis(x, radius);
            let ht = basis.transpose() * &jet.hessian * &basis;
            let eig = nalgebra::SymmetricEigen::new(ht);
            let index = eig.eigenvalues.iter().filter(|&&l| l < 0.0).count();
            return Some(SphereCriticalPoint {
                position: x.to_vec(),
                value: jet.value,
                index,
                residual: gnorm,
            });
        }
        let basis = tangent_basis(x, radius);
        let ht = basis.transpose() * &jet.hessian * &basis;
        let gt = basis.transpose() * DVector::from_column_slice(&jet.gradient);
        let step = match ht.clone().lu().solve(&gt) {
            Some(d) => -d,
            None => {
                let shift = 1e-8 * ht.norm().max(1e-12);
                let reg = ht + DMatrix::identity(n - 1, n - 1) * shift;
                -(reg.lu().solve(&gt)?)
            }
        };
        let mut step = step;
        let max_step = 0.5 * radius;
        if step.norm() > max_step {
            let scale = max_step / step.norm();
            step *= scale;
        }
        // Backtracking on the gradient norm with a retraction back to
        // the sphere.
        let mut scale = 1.0;
        let mut moved = false;
        for _ in 0..10 {
            let ambient = &basis * &step * scale;
            let mut trial: Vec<f64> = x
                .iter()
                .zip(ambient.iter())
                .map(|(&a, &b)| a + b)
                .collect();
            rescale(&mut trial, radius);
            let tj = model.eval_sphere(&trial).ok()?;
            if norm(&tj.gradient) < gnorm {
                x.copy_from_slice(&trial);
                moved = true;
                break;
            }
            scale *= 0.5;
        }
        if !moved {
            return None;
        }
    }
    None
}

/// Orthonormal basis of the tangent space at `x`, built by projecting out
/// the radial direction from the identity and orthonormalizing.
fn tangent_basis(x: &[f64], radius: f64) -> DMatrix<f64> {
    let n = x.len();
    let unit = DVector::from_iterator(n, x.iter().map(|v| v / radius));
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n - 1);
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        let mut v = &e - &unit * unit[i];
        for c in &cols {
            let d = c.dot(&v);
            v -= c * d;
        }
        let nv = v.norm();
        if nv > 1e-8 {
            cols.push(v / nv);
            if cols.len() == n - 1 {
                break;
            }
        }
    }
    DMatrix::from_columns(&cols)
}

fn rescale(x: &mut [f64], radius: f64) {
    let r = norm(x);
    for v in x.iter_mut() {
        *v *= radius / r;
    }
}

fn geodesic_distance(a: &[f64], b: &[f64], radius: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
    let c = (dot / (radius * radius)).clamp(-1.0, 1.0);
    radius * c.acos()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}
