//! Critical points of the exact trigonometric interpolant of a torus
//! field: damped Newton refinement from sign-change seed cells, Morse
//! index classification, and per-level index counts.
//!
//! The synthesized field literally is a trigonometric polynomial, so its
//! critical points are well-defined objects rather than discretization
//! artifacts; the grid only supplies Newton seeds.

use crate::error::{Error, Result};
use crate::exec;
use crate::field::{EvalJet, GridField};
use nalgebra::{DMatrix, DVector};

const MAX_NEWTON_ITERS: usize = 50;
const DEGENERATE_EIG: f64 = 1e-8;

/// A converged critical point of the interpolant.
#[derive(Debug, Clone)]
pub struct CriticalPoint {
    /// Position in `[0, L)^n`.
    pub position: Vec<f64>,
    pub value: f64,
    /// Count of negative Hessian eigenvalues.
    pub index: usize,
    pub gradient_norm: f64,
    /// Smallest absolute Hessian eigenvalue; near-zero values are flagged.
    pub min_abs_eigenvalue: f64,
}

/// Search outcome; failures are reported, never silently dropped.
#[derive(Debug, Clone)]
pub struct CriticalSearch {
    pub points: Vec<CriticalPoint>,
    /// Converged points with a near-singular Hessian, kept separate so
    /// index counts only see Morse points.
    pub degenerate: Vec<CriticalPoint>,
    pub failed_seeds: usize,
}

impl CriticalSearch {
    /// Totals per Morse index.
    pub fn counts_by_index(&self, n: usize) -> Vec<usize> {
        let mut counts = vec![0usize; n + 1];
        for p in &self.points {
            counts[p.index] += 1;
        }
        counts
    }
}

/// Restricts where Newton seeds are planted.
#[derive(Debug, Clone, Copy)]
pub enum SeedFilter {
    All,
    /// Only cells with a vertex value at or above the threshold; finds the
    /// critical points inside high excursion components.
    Above(f64),
    /// Mirror image for sojourn analysis.
    Below(f64),
}

impl SeedFilter {
    fn admits(&self, value: f64) -> bool {
        match *self {
            SeedFilter::All => true,
            SeedFilter::Above(u) => value >= u,
            SeedFilter::Below(u) => value <= u,
        }
    }
}

/// Finds all critical points of the interpolant. `tol` is the gradient
/// residual threshold for convergence.
pub fn find_critical_points(field: &GridField, tol: f64) -> Result<CriticalSearch> {
    find_critical_points_filtered(field, tol, SeedFilter::All)
}

/// Finds the critical points reachable from seed cells passing `filter`.
///
/// Seeding happens on a grid refined twofold by spectral zero-padding:
/// a refined cell seeds a Newton run when every gradient component
/// changes sign over its corners, and refined discrete extrema seed as
/// well. The refinement catches zero curves that dip into a cell without
/// crossing its corners.
pub fn find_critical_points_filtered(
    field: &GridField,
    tol: f64,
    filter: SeedFilter,
) -> Result<CriticalSearch> {
    if field.spectral().is_none() {
        return Err(Error::NoSpectralRepresentation);
    }
    let n = field.dimension();
    let (shape, values, grads) = field.refined_grids(2)?;
    let m = shape.len();

    let mut seeds: Vec<usize> = Vec::new();
    let corner_count = 1usize << n;
    let mut corners = vec![0usize; corner_count];
    for base in 0..m {
        let mut admit = false;
        for (bits, corner) in corners.iter_mut().enumerate() {
            let mut v = base;
            for a in 0..n {
                if bits & (1 << a) != 0 {
                    v = shape.step_wrap(v, a);
                }
            }
            *corner = v;
            if filter.admits(values[v]) {
                admit = true;
            }
        }
        if !admit {
            continue;
        }
        let mut all_axes_change = true;
        for g in grads.iter().take(n) {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &c in &corners {
                lo = lo.min(g[c]);
                hi = hi.max(g[c]);
            }
            if lo > 0.0 || hi < 0.0 {
                all_axes_change = false;
                break;
            }
        }
        if all_axes_change {
            seeds.push(base);
            continue;
        }
        // Discrete extremum at the base vertex.
        if filter.admits(values[base]) {
            let mut is_max = true;
            let mut is_min = true;
            for a in 0..n {
                for nb in [shape.step_wrap(base, a), shape.step_back_wrap(base, a)] {
                    if values[nb] >= values[base] {
                        is_max = false;
                    }
                    if values[nb] <= values[base] {
                        is_min = false;
                    }
                }
            }
            if is_max || is_min {
                seeds.push(base);
            }
        }
    }

    let spacings: Vec<f64> = (0..n)
        .map(|a| field.sides()[a] / shape.dims[a] as f64)
        .collect();
    let h_min = spacings.iter().cloned().fold(f64::INFINITY, f64::min);
    let sides = field.sides().to_vec();
    let rep = field.spectral().expect("checked above");

    let outcomes = exec::map_indexed(seeds.len(), |s| {
        let base = seeds[s];
        let mut evaluator = rep.evaluator();
        let mut jet = EvalJet::zeros(n);
        // Start at the refined cell center.
        let mut x: Vec<f64> = (0..n)
            .map(|a| (shape.coord(base, a) as f64 + 0.5) * spacings[a])
            .collect();
        newton_refine(&mut evaluator, &mut jet, &mut x, &sides, 2.0 * h_min, tol)
    });

    let mut converged: Vec<CriticalPoint> = Vec::new();
    let mut failed_seeds = 0usize;
    for outcome in outcomes {
        match outcome {
            Some(p) => converged.push(p),
            None => failed_seeds += 1,
        }
    }
    // Canonical order, then greedy dedup within half a refined grid step.
    converged.sort_by(|a, b| {
        a.value
            .total_cmp(&b.value)
            .then_with(|| a.position[0].total_cmp(&b.position[0]))
            .then_with(|| {
                a.position
                    .get(1)
                    .unwrap_or(&0.0)
                    .total_cmp(b.position.get(1).unwrap_or(&0.0))
            })
    });
    let dedup_radius = 0.5 * h_min;
    let mut kept: Vec<CriticalPoint> = Vec::new();
    'next: for p in converged {
        for q in &kept {
            if torus_distance(&p.position, &q.position, &sides) < dedup_radius {
                continue 'next;
            }
        }
        kept.push(p);
    }
    let (points, degenerate): (Vec<_>, Vec<_>) = kept
        .into_iter()
        .partition(|p| p.min_abs_eigenvalue >= DEGENERATE_EIG);
    Ok(CriticalSearch {
        points,
        degenerate,
        failed_seeds,
    })
}

/// Damped Newton on the gradient with the merit function `|grad f|^2`.
/// When the Newton direction does not descend the merit, the iteration
/// falls back to steepest descent on the merit, which always makes
/// progress away from critical points of the merit itself.
fn newton_refine(
    evaluator: &mut crate::field::SpectralEvaluator<'_>,
    jet: &mut EvalJet,
    x: &mut [f64],
    sides: &[f64],
    max_step: f64,
    tol: f64,
) -> Option<CriticalPoint> {
    let n = x.len();
    evaluator.eval(x, jet);
    let mut grad_norm = norm(&jet.gradient);
    for _ in 0..MAX_NEWTON_ITERS {
        if grad_norm < tol {
            let hess = DMatrix::from_row_slice(n, n, &jet.hessian);
            let eig = nalgebra::SymmetricEigen::new(hess);
            let index = eig.eigenvalues.iter().filter(|&&l| l < 0.0).count();
            let min_abs = eig
                .eigenvalues
                .iter()
                .map(|l| l.abs())
                .fold(f64::INFINITY, f64::min);
            for (a, v) in x.iter_mut().enumerate() {
                *v = v.rem_euclid(sides[a]);
            }
            return Some(CriticalPoint {
                position: x.to_vec(),
                value: jet.value,
                index,
                gradient_norm: grad_norm,
                min_abs_eigenvalue: min_abs,
            });
        }
        let hess = DMatrix::from_row_slice(n, n, &jet.hessian);
        let g = DVector::from_column_slice(&jet.gradient);
        // Merit m = |g|^2 / 2 has gradient H g.
        let merit_grad = &hess * &g;
        let newton = hess.clone().lu().solve(&g).map(|d| -d);
        let mut step = match newton {
            Some(d) if d.dot(&merit_grad) < 0.0 => d,
            _ => {
                let mg_norm = merit_grad.norm();
                if mg_norm < 1e-14 {
                    return None; // stalled on a merit plateau
                }
                // Steepest descent scaled to a Newton-like magnitude.
                -&merit_grad * (grad_norm / (mg_norm * mg_norm).max(1e-300)).min(1.0)
            }
        };
        let sn = step.norm();
        if sn > max_step {
            step *= max_step / sn;
        }
        let merit = 0.5 * grad_norm * grad_norm;
        let directional = step.dot(&merit_grad);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let trial: Vec<f64> = x
                .iter()
                .enumerate()
                .map(|(a, &v)| v + scale * step[a])
                .collect();
            evaluator.eval(&trial, jet);
            let new_norm = norm(&jet.gradient);
            let new_merit = 0.5 * new_norm * new_norm;
            // Armijo with a mild slope requirement.
            if new_merit <= merit + 1e-4 * scale * directional || new_merit < merit {
                x.copy_from_slice(&trial);
                grad_norm = new_norm;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    None
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn torus_distance(a: &[f64], b: &[f64], sides: &[f64]) -> f64 {
    let mut d2 = 0.0;
    for i in 0..a.len() {
        let mut d = (a[i] - b[i]).abs() % sides[i];
        if d > 0.5 * sides[i] {
            d = sides[i] - d;
        }
        d2 += d * d;
    }
    d2.sqrt()
}

/// Counts critical points by index with value at most `u` (sojourn
/// convention; the excursion-side counts follow by negation).
pub fn count_by_index_below(points: &[CriticalPoint], u: f64, n: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n + 1];
    for p in points {
        if p.value <= u {
            counts[p.index] += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{make_model, ModelKind};
    use crate::field::{GridField, TorusSampler};
    use approx::assert_abs_diff_eq;

    fn cosine_product_field(m: usize, l: f64) -> GridField {
        let mut values = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                let x = 2.0 * std::f64::consts::PI * i as f64 / m as f64;
                let y = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
                values.push(x.cos() * y.cos());
            }
        }
        GridField::from_values(values, vec![l, l], vec![m, m]).unwrap()
    }

    #[test]
    fn cosine_product_critical_points() {
        let f = cosine_product_field(32, 16.0);
        let search = find_critical_points(&f, 1e-10).unwrap();
        assert_eq!(search.points.len(), 8);
        let counts = search.counts_by_index(2);
        assert_eq!(counts, vec![2, 4, 2]);
        // Each analytic critical point is found exactly once at the grid
        // positions k * L/4.
        for p in &search.points {
            for &c in &p.position {
                let nearest = (c / 4.0).round() * 4.0;
                assert_abs_diff_eq!(c, nearest % 16.0, epsilon = 1e-8);
            }
            assert!(p.gradient_norm < 1e-10);
        }
        // Morse alternating sum on the torus.
        let alt: i64 = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| if i % 2 == 0 { c as i64 } else { -(c as i64) })
            .sum();
        assert_eq!(alt, 0);
    }

    #[test]
    fn counts_below_levels() {
        let f = cosine_product_field(32, 16.0);
        let search = find_critical_points(&f, 1e-10).unwrap();
        assert_eq!(count_by_index_below(&search.points, 0.5, 2), vec![2, 4, 0]);
        assert_eq!(count_by_index_below(&search.points, 1e9, 2), vec![2, 4, 2]);
        assert_eq!(count_by_index_below(&search.points, -2.0, 2), vec![0, 0, 0]);
    }

    #[test]
    fn random_field_minima_match_discrete_minima() {
        let model = make_model(ModelKind::BargmannFock, 2).unwrap();
        let sampler = TorusSampler::new(&model, &[40.0, 40.0], &[128, 128]).unwrap();
        let f = sampler.sample(2024, 0);
        let search = find_critical_points(&f, 1e-9).unwrap();
        let newton_minima = search.counts_by_index(2)[0];
        // Discrete local minima of the grid array over the full
        // 8-neighborhood; axis-only comparisons overcount at this spacing.
        let shape = f.shape();
        let v = f.values();
        let mut discrete = 0;
        for idx in 0..shape.len() {
            let mut is_min = true;
            for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let cx = (shape.coord(idx, 0) as i64 + dx).rem_euclid(128) as usize;
                    let cy = (shape.coord(idx, 1) as i64 + dy).rem_euclid(128) as usize;
                    if v[shape.index(&[cx, cy])] <= v[idx] {
                        is_min = false;
                    }
                }
            }
            if is_min {
                discrete += 1;
            }
        }
        let rel = (newton_minima as f64 - discrete as f64).abs() / discrete as f64;
        assert!(
            rel <= 0.02,
            "newton {newton_minima} vs discrete {discrete} ({rel:.3})"
        );
    }

    #[test]
    fn morse_alternating_sum_vanishes_on_random_torus() {
        let model = make_model(ModelKind::BargmannFock, 2).unwrap();
        let sampler = TorusSampler::new(&model, &[32.0, 32.0], &[128, 128]).unwrap();
        for r in 0..3 {
            let f = sampler.sample(55, r);
            let search = find_critical_points(&f, 1e-9).unwrap();
            let counts = search.counts_by_index(2);
            let alt: i64 = counts
                .iter()
                .enumerate()
                .map(|(i, &c)| if i % 2 == 0 { c as i64 } else { -(c as i64) })
                .sum();
            assert_eq!(alt, 0, "replicate {r}: counts {counts:?}");
            assert!(search.degenerate.is_empty());
        }
    }

    #[test]
    fn filtered_search_finds_high_maxima() {
        let model = make_model(ModelKind::BargmannFock, 2).unwrap();
        let sampler = TorusSampler::new(&model, &[40.0, 40.0], &[256, 256]).unwrap();
        let f = sampler.sample(7, 3);
        let u = 2.0;
        let full = find_critical_points(&f, 1e-9).unwrap();
        let fast = find_critical_points_filtered(&f, 1e-9, SeedFilter::Above(u)).unwrap();
        let full_high: Vec<&CriticalPoint> =
            full.points.iter().filter(|p| p.value >= u).collect();
        let fast_high: Vec<&CriticalPoint> =
            fast.points.iter().filter(|p| p.value >= u).collect();
        assert_eq!(full_high.len(), fast_high.len());
    }
}
