//! Ensemble orchestration: simulate replicate fields, measure their level
//! topology, join the averages with the closed-form predictions and emit
//! machine-readable reports.
//!
//! Reports are a pure function of the configuration: replicate seeds
//! derive from the master seed by a stable mix, results are aggregated in
//! replicate order, and floats are serialized with 17 significant digits,
//! so the CSV bytes do not depend on the worker count.

use crate::covariance::{make_model, ModelKind, SpectralModel};
use crate::critical::{find_critical_points_filtered, CriticalPoint, SeedFilter};
use crate::error::{Error, Result};
use crate::exec;
use crate::field::{GridField, TorusSampler};
use crate::theory::{
    expected_components_asymptotic, expected_euler, lk_curvatures, Domain, DomainShape,
};
use crate::topology::{
    classify_components, component_count, euler_characteristic, nodal_component_count, Side,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Observable requested from the ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Components,
    BallComponents,
    NodalComponents,
    SphereComponents,
    Euler,
    BettiSum,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Components => "components",
            Metric::BallComponents => "ball_components",
            Metric::NodalComponents => "nodal_components",
            Metric::SphereComponents => "sphere_components",
            Metric::Euler => "euler",
            Metric::BettiSum => "betti_sum",
        }
    }

    fn needs_critical_points(self) -> bool {
        matches!(
            self,
            Metric::BallComponents | Metric::NodalComponents | Metric::SphereComponents
        )
    }
}

/// A metric with an optional restriction to a subset of the level grid;
/// expensive classifications are usually only wanted at high levels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRequest {
    pub metric: Metric,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_values: Option<Vec<f64>>,
}

impl From<Metric> for MetricRequest {
    fn from(metric: Metric) -> Self {
        MetricRequest {
            metric,
            u_values: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainConfig {
    pub shape: DomainShape,
    pub sides: Vec<f64>,
    /// Cells per axis on a torus; vertices per axis on a box/interval.
    pub grid: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelKind,
    pub n: usize,
    pub domain: DomainConfig,
    pub u_grid: Vec<f64>,
    pub replicates: u64,
    pub master_seed: u64,
    pub metrics: Vec<MetricRequest>,
    #[serde(default = "default_side")]
    pub side: Side,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_path: Option<PathBuf>,
}

fn default_side() -> Side {
    Side::Excursion
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Harness("need at least one replicate".into()));
        }
        if self.u_grid.is_empty() {
            return Err(Error::Harness("empty level grid".into()));
        }
        if self.u_grid.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Harness("level grid must be sorted".into()));
        }
        if self.domain.sides.len() != self.n || self.domain.grid.len() != self.n {
            return Err(Error::Harness("domain rank must match the model".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::Harness("no metrics requested".into()));
        }
        Ok(())
    }

    pub fn domain_spec(&self) -> Result<Domain> {
        Domain::new(self.domain.shape, self.domain.sides.clone())
    }
}

/// One joined (level, metric) record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub n: usize,
    pub domain: String,
    pub u: f64,
    pub metric: String,
    pub emp_mean: f64,
    pub emp_se: f64,
    pub theory: f64,
    /// `emp_mean / theory`; NaN when the theory value vanishes.
    pub ratio: f64,
    /// `(emp_mean - theory) / emp_se`; 0 when both sides agree exactly.
    pub z: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub rows: Vec<ComparisonRow>,
    pub clipped_mass: f64,
    pub warnings: Vec<String>,
    pub torus_sides: Vec<f64>,
    pub torus_dims: Vec<usize>,
}

/// Per-replicate topology record, one per analyzed level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldRecord {
    pub replicate: u64,
    #[serde(flatten)]
    pub topology: crate::topology::LevelTopology,
}

/// Runs the full simulate/analyze/compare pipeline.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let report = exec::with_workers(config.workers, || run_inner(config))?;
    if let Some(path) = &config.csv_path {
        write_csv(path, &report.rows)?;
    }
    if let Some(path) = &config.manifest_path {
        let model = make_model(config.model, config.n)?;
        let manifest = serde_json::json!({
            "config": config,
            "model": model.descriptor(),
            "torus": {"sides": report.torus_sides, "dims": report.torus_dims},
            "clipped_mass": report.clipped_mass,
            "warnings": report.warnings,
            "rows": report.rows,
        });
        std::fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
    }
    Ok(report)
}

fn run_inner(config: &RunConfig) -> Result<RunReport> {
    let model = make_model(config.model, config.n)?;
    let domain = config.domain_spec()?;
    let plan = RowPlan::build(config);
    let setup = GridSetup::derive(&model, &domain, &config.domain.grid)?;
    let sampler = TorusSampler::new(&model, &setup.torus_sides, &setup.torus_dims)?;

    let grad_tol = newton_tolerance(&model);
    let replicate_values: Vec<Result<Vec<f64>>> =
        exec::map_indexed(config.replicates as usize, |r| {
            let field = obtain_field(config, &sampler, r as u64)?;
            let field = match &setup.crop {
                Some(keep) => field.crop(keep)?,
                None => field,
            };
            measure_field(&field, &plan, config.side, grad_tol)
        });
    let mut per_row_sum = vec![0.0f64; plan.rows.len()];
    let mut per_row_sumsq = vec![0.0f64; plan.rows.len()];
    for (r, values) in replicate_values.into_iter().enumerate() {
        let values = values.map_err(|e| {
            Error::Harness(format!(
                "replicate {r} (seed {}) failed: {e}",
                exec::mix_seed(config.master_seed, r as u64)
            ))
        })?;
        for (k, v) in values.into_iter().enumerate() {
            per_row_sum[k] += v;
            per_row_sumsq[k] += v * v;
        }
    }

    let mut warnings = Vec::new();
    if sampler.clipped_mass > 0.0 {
        warnings.push(format!("clipped spectral mass {:.3e}", sampler.clipped_mass));
    }
    let m = config.replicates as f64;
    let mut rows = Vec::with_capacity(plan.rows.len());
    for (k, &(u, metric)) in plan.rows.iter().enumerate() {
        let mean = per_row_sum[k] / m;
        let var = (per_row_sumsq[k] / m - mean * mean).max(0.0);
        let se = if config.replicates > 1 {
            (var / (m - 1.0)).sqrt()
        } else {
            0.0
        };
        let theory = theory_value(&model, &domain, u, metric)?;
        let mut row = join_row(mean, se, theory);
        if config.replicates == 1 {
            row.2.push("insufficient replicates".into());
        }
        rows.push(ComparisonRow {
            model: model.name().to_string(),
            n: config.n,
            domain: domain.descriptor(),
            u,
            metric: metric.name().to_string(),
            emp_mean: mean,
            emp_se: se,
            theory,
            ratio: row.0,
            z: row.1,
            flags: row.2,
        });
    }
    Ok(RunReport {
        rows,
        clipped_mass: sampler.clipped_mass,
        warnings,
        torus_sides: setup.torus_sides,
        torus_dims: setup.torus_dims,
    })
}

/// Convergence threshold for the Newton residual, scaled to the metric.
fn newton_tolerance(model: &SpectralModel) -> f64 {
    let lambda_max = (0..model.dimension())
        .map(|i| model.second_moment()[(i, i)])
        .fold(0.0, f64::max);
    1e-9 * lambda_max.sqrt()
}

struct GridSetup {
    torus_sides: Vec<f64>,
    torus_dims: Vec<usize>,
    crop: Option<Vec<usize>>,
}

impl GridSetup {
    /// Boxes and intervals are carved out of a torus padded by ten
    /// correlation lengths, so the wrap never contaminates the window.
    fn derive(model: &SpectralModel, domain: &Domain, grid: &[usize]) -> Result<GridSetup> {
        match domain.shape {
            DomainShape::Torus => Ok(GridSetup {
                torus_sides: domain.side_lengths.clone(),
                torus_dims: grid.to_vec(),
                crop: None,
            }),
            DomainShape::Box | DomainShape::Interval => {
                let corr = model.correlation_length().ok_or_else(|| {
                    Error::Sampling("model cannot be sampled on a torus".into())
                })?;
                let pad = 10.0 * corr;
                let mut torus_sides = Vec::new();
                let mut torus_dims = Vec::new();
                for (a, &t) in domain.side_lengths.iter().enumerate() {
                    if grid[a] < 2 {
                        return Err(Error::Harness("boxes need at least 2 vertices".into()));
                    }
                    let h = t / (grid[a] - 1) as f64;
                    let cells = ((t + pad) / h).ceil() as usize;
                    torus_sides.push(cells as f64 * h);
                    torus_dims.push(cells);
                }
                Ok(GridSetup {
                    torus_sides,
                    torus_dims,
                    crop: Some(grid.to_vec()),
                })
            }
        }
    }
}

/// Flattened (level, metric) row order plus the critical-point plan.
struct RowPlan {
    rows: Vec<(f64, Metric)>,
    /// Lowest level at which any classification metric is requested.
    crit_from: Option<f64>,
}

impl RowPlan {
    fn build(config: &RunConfig) -> RowPlan {
        let mut rows = Vec::new();
        let mut crit_from: Option<f64> = None;
        for &u in &config.u_grid {
            for request in &config.metrics {
                let wanted = request
                    .u_values
                    .as_ref()
                    .map_or(true, |set| set.iter().any(|v| (v - u).abs() < 1e-12));
                if !wanted {
                    continue;
                }
                rows.push((u, request.metric));
                if request.metric.needs_critical_points() {
                    crit_from = Some(match crit_from {
                        Some(c) => c.min(u),
                        None => u,
                    });
                }
            }
        }
        RowPlan { rows, crit_from }
    }
}

fn obtain_field(config: &RunConfig, sampler: &TorusSampler, replicate: u64) -> Result<GridField> {
    let Some(dir) = &config.cache_dir else {
        return Ok(sampler.sample(config.master_seed, replicate));
    };
    std::fs::create_dir_all(dir)?;
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&serde_json::json!({
        "model": config.model.to_string(),
        "n": config.n,
        "sides": sampler.shape().dims,
        "seed": exec::mix_seed(config.master_seed, replicate),
    }))?);
    let key = hex_prefix(&hasher.finalize());
    let path = dir.join(format!("{key}.field"));
    if path.exists() {
        return GridField::read_container(&path);
    }
    let field = sampler.sample(config.master_seed, replicate);
    field.write_container(&path)?;
    Ok(field)
}

fn hex_prefix(bytes: &[u8]) -> String {
    bytes.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn measure_field(
    field: &GridField,
    plan: &RowPlan,
    side: Side,
    grad_tol: f64,
) -> Result<Vec<f64>> {
    // One restricted critical-point search serves every classification
    // level at or above the lowest requested one.
    let points: Option<Vec<CriticalPoint>> = match plan.crit_from {
        Some(u_min) => {
            if !field.is_periodic() {
                return Err(Error::Harness(
                    "ball/nodal/sphere metrics need a torus domain".into(),
                ));
            }
            let filter = match side {
                Side::Excursion => SeedFilter::Above(u_min),
                Side::Sojourn => SeedFilter::Below(u_min),
            };
            Some(find_critical_points_filtered(field, grad_tol, filter)?.points)
        }
        None => None,
    };
    let mut values = Vec::with_capacity(plan.rows.len());
    let mut cache_u = f64::NAN;
    let mut cache: Option<PerLevel> = None;
    for &(u, metric) in &plan.rows {
        if cache.is_none() || cache_u != u {
            cache = Some(PerLevel::compute(field, u, side, points.as_deref())?);
            cache_u = u;
        }
        let per = cache.as_ref().expect("just computed");
        values.push(per.get(metric)?);
    }
    Ok(values)
}

struct PerLevel {
    components: f64,
    euler: f64,
    betti_sum: Option<f64>,
    balls: Option<f64>,
    nodal: Option<f64>,
    spheres: Option<f64>,
}

impl PerLevel {
    fn compute(
        field: &GridField,
        u: f64,
        side: Side,
        points: Option<&[CriticalPoint]>,
    ) -> Result<PerLevel> {
        let labels = component_count(field, u, side);
        let chi = euler_characteristic(field, u, side);
        let betti_sum = if (2..=3).contains(&field.dimension()) {
            Some(
                crate::topology::betti_numbers(field, u, side)?
                    .iter()
                    .sum::<i64>() as f64,
            )
        } else {
            None
        };
        let (balls, nodal, spheres) = match points {
            Some(points) => {
                let class = classify_components(field, u, side, points);
                let nodal = nodal_component_count(field, u, &class);
                (
                    Some(class.n_balls as f64),
                    Some(nodal.n_nodal as f64),
                    Some(nodal.n_sphere as f64),
                )
            }
            None => (None, None, None),
        };
        Ok(PerLevel {
            components: labels.count as f64,
            euler: chi as f64,
            betti_sum,
            balls,
            nodal,
            spheres,
        })
    }

    fn get(&self, metric: Metric) -> Result<f64> {
        let missing = || Error::Harness(format!("metric {} was not computed", metric.name()));
        Ok(match metric {
            Metric::Components => self.components,
            Metric::Euler => self.euler,
            Metric::BettiSum => self.betti_sum.ok_or_else(missing)?,
            Metric::BallComponents => self.balls.ok_or_else(missing)?,
            Metric::NodalComponents => self.nodal.ok_or_else(missing)?,
            Metric::SphereComponents => self.spheres.ok_or_else(missing)?,
        })
    }
}

fn theory_value(model: &SpectralModel, domain: &Domain, u: f64, metric: Metric) -> Result<f64> {
    match metric {
        Metric::Euler => {
            let lk = lk_curvatures(domain, model.second_moment())?;
            Ok(expected_euler(&lk, u))
        }
        // High components of every flavor share one asymptotic; the Betti
        // sum collapses onto it as well.
        _ => {
            if u <= 0.0 {
                return Ok(f64::NAN);
            }
            Ok(expected_components_asymptotic(domain, model, u)?.best())
        }
    }
}

fn join_row(mean: f64, se: f64, theory: f64) -> (f64, f64, Vec<String>) {
    let mut flags = Vec::new();
    let ratio = if theory != 0.0 && theory.is_finite() {
        mean / theory
    } else {
        flags.push("ratio undefined".into());
        f64::NAN
    };
    let z = if se > 0.0 {
        (mean - theory) / se
    } else if mean == theory {
        0.0
    } else if theory.is_nan() {
        f64::NAN
    } else {
        f64::INFINITY * (mean - theory).signum()
    };
    (ratio, z, flags)
}

/// Joins externally aggregated statistics with a theory table; unmatched
/// keys are reported, not dropped silently.
pub fn compare_report(
    empirical: &[(f64, Metric, f64, f64)],
    theory: &[(f64, Metric, f64)],
    model: &str,
    n: usize,
    domain: &str,
) -> (Vec<ComparisonRow>, Vec<String>) {
    let mut rows = Vec::new();
    let mut unmatched = Vec::new();
    for &(u, metric, mean, se) in empirical {
        let found = theory
            .iter()
            .find(|&&(tu, tm, _)| tm == metric && (tu - u).abs() < 1e-12);
        match found {
            Some(&(_, _, th)) => {
                let (ratio, z, flags) = join_row(mean, se, th);
                rows.push(ComparisonRow {
                    model: model.to_string(),
                    n,
                    domain: domain.to_string(),
                    u,
                    metric: metric.name().to_string(),
                    emp_mean: mean,
                    emp_se: se,
                    theory: th,
                    ratio,
                    z,
                    flags,
                });
            }
            None => unmatched.push(format!("no theory value for ({u}, {})", metric.name())),
        }
    }
    (rows, unmatched)
}

/// Fixed CSV schema with floats at 17 significant digits.
pub fn write_csv(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "model,n,domain,u,metric,emp_mean,emp_se,theory,ratio,z")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.model,
            r.n,
            r.domain,
            fmt17(r.u),
            r.metric,
            fmt17(r.emp_mean),
            fmt17(r.emp_se),
            fmt17(r.theory),
            fmt17(r.ratio),
            fmt17(r.z),
        )?;
    }
    Ok(())
}

pub fn fmt17(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

/// Samples an ensemble to disk containers named by replicate.
pub fn simulate_to_dir(
    model_kind: ModelKind,
    n: usize,
    sides: &[f64],
    dims: &[usize],
    replicates: u64,
    master_seed: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let model = make_model(model_kind, n)?;
    let sampler = TorusSampler::new(&model, sides, dims)?;
    std::fs::create_dir_all(out_dir)?;
    let paths: Vec<Result<PathBuf>> = exec::map_indexed(replicates as usize, |r| {
        let field = sampler.sample(master_seed, r as u64);
        let path = out_dir.join(format!("replicate_{r:05}.field"));
        field.write_container(&path)?;
        Ok(path)
    });
    paths.into_iter().collect()
}

/// Loads field containers and measures their topology at every level.
pub fn analyze_files(
    paths: &[PathBuf],
    u_grid: &[f64],
    side: Side,
    with_critical: bool,
) -> Result<Vec<FieldRecord>> {
    let per_file: Vec<Result<Vec<FieldRecord>>> = exec::map_indexed(paths.len(), |i| {
        let field = GridField::read_container(&paths[i])?;
        let points = if with_critical && field.is_periodic() {
            let u_min = u_grid.iter().cloned().fold(f64::INFINITY, f64::min);
            let filter = match side {
                Side::Excursion => SeedFilter::Above(u_min),
                Side::Sojourn => SeedFilter::Below(u_min),
            };
            Some(find_critical_points_filtered(&field, 1e-9, filter)?.points)
        } else {
            None
        };
        u_grid
            .iter()
            .map(|&u| {
                Ok(FieldRecord {
                    replicate: field.provenance.replicate,
                    topology: crate::topology::level_topology(
                        &field,
                        u,
                        side,
                        points.as_deref(),
                    )?,
                })
            })
            .collect()
    });
    let mut records = Vec::new();
    for group in per_file {
        records.extend(group?);
    }
    Ok(records)
}

/// Aggregates analyzed records into `(u, metric, mean, stderr)` tuples.
pub fn aggregate_records(records: &[FieldRecord]) -> Vec<(f64, Metric, f64, f64)> {
    use std::collections::BTreeMap;
    let mut buckets: BTreeMap<(u64, &'static str), (f64, Vec<f64>)> = BTreeMap::new();
    for rec in records {
        let t = &rec.topology;
        let mut push = |metric: Metric, value: Option<f64>| {
            if let Some(v) = value {
                buckets
                    .entry((t.u.to_bits(), metric.name()))
                    .or_insert((t.u, Vec::new()))
                    .1
                    .push(v);
            }
        };
        push(Metric::Components, Some(t.n_components as f64));
        push(Metric::Euler, Some(t.euler_characteristic as f64));
        push(Metric::BettiSum, Some(t.betti.iter().sum::<i64>() as f64));
        push(Metric::BallComponents, t.n_ball_components.map(|v| v as f64));
        push(Metric::NodalComponents, t.n_nodal_components.map(|v| v as f64));
        push(
            Metric::SphereComponents,
            t.n_sphere_components.map(|v| v as f64),
        );
    }
    let metric_of = |name: &str| match name {
        "components" => Metric::Components,
        "euler" => Metric::Euler,
        "betti_sum" => Metric::BettiSum,
        "ball_components" => Metric::BallComponents,
        "nodal_components" => Metric::NodalComponents,
        _ => Metric::SphereComponents,
    };
    buckets
        .into_iter()
        .map(|((_, name), (u, vals))| {
            let m = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / m;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (m - 1.0).max(1.0);
            (u, metric_of(name), mean, (var / m).sqrt())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dir: &std::path::Path) -> RunConfig {
        RunConfig {
            model: ModelKind::BargmannFock,
            n: 2,
            domain: DomainConfig {
                shape: DomainShape::Torus,
                sides: vec![32.0, 32.0],
                grid: vec![64, 64],
            },
            u_grid: vec![0.5, 1.5],
            replicates: 3,
            master_seed: 1234,
            metrics: vec![Metric::Components.into(), Metric::Euler.into()],
            side: Side::Excursion,
            workers: None,
            cache_dir: None,
            csv_path: Some(dir.join("report.csv")),
            manifest_path: Some(dir.join("manifest.json")),
        }
    }

    #[test]
    fn run_produces_joined_rows() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        let report = run(&config).unwrap();
        assert_eq!(report.rows.len(), 4);
        for row in &report.rows {
            assert!(row.emp_mean.is_finite());
            assert!(row.emp_se >= 0.0);
            assert!(row.theory.is_finite() || row.theory.is_nan());
        }
        let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert!(csv.starts_with("model,n,domain,u,metric,emp_mean,emp_se,theory,ratio,z\n"));
        assert_eq!(csv.lines().count(), 5);
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["config"]["replicates"], 3);
    }

    #[test]
    fn reports_are_byte_identical_across_worker_counts() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = tiny_config(dir.path());
        a.csv_path = Some(dir.path().join("a.csv"));
        a.workers = Some(1);
        run(&a).unwrap();
        let mut b = tiny_config(dir.path());
        b.csv_path = Some(dir.path().join("b.csv"));
        b.workers = Some(4);
        run(&b).unwrap();
        let bytes_a = std::fs::read(dir.path().join("a.csv")).unwrap();
        let bytes_b = std::fs::read(dir.path().join("b.csv")).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn field_cache_is_reused() {
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("cache");
        let mut config = tiny_config(dir.path());
        config.cache_dir = Some(cache.clone());
        config.csv_path = Some(dir.path().join("c1.csv"));
        run(&config).unwrap();
        let count_after_first = std::fs::read_dir(&cache).unwrap().count();
        assert_eq!(count_after_first, 3);
        config.csv_path = Some(dir.path().join("c2.csv"));
        run(&config).unwrap();
        assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 3);
        let a = std::fs::read(dir.path().join("c1.csv")).unwrap();
        let b = std::fs::read(dir.path().join("c2.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn compare_report_arithmetic() {
        let rows = compare_report(
            &[(3.0, Metric::Components, 5.0, 1.0)],
            &[(3.0, Metric::Components, 4.0)],
            "m",
            2,
            "d",
        );
        assert!(rows.1.is_empty());
        let row = &rows.0[0];
        assert_eq!(row.ratio, 1.25);
        assert_eq!(row.z, 1.0);

        // Vanishing theory: ratio undefined, z = 0, row flagged.
        let rows = compare_report(
            &[(0.0, Metric::Euler, 0.0, 0.0)],
            &[(0.0, Metric::Euler, 0.0)],
            "m",
            2,
            "d",
        );
        let row = &rows.0[0];
        assert!(row.ratio.is_nan());
        assert_eq!(row.z, 0.0);
        assert!(!row.flags.is_empty());

        // Unmatched keys are reported.
        let rows = compare_report(
            &[(1.0, Metric::Euler, 0.0, 0.0)],
            &[(2.0, Metric::Euler, 0.0)],
            "m",
            2,
            "d",
        );
        assert!(rows.0.is_empty());
        assert_eq!(rows.1.len(), 1);
    }

    #[test]
    fn single_replicate_is_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.replicates = 1;
        config.csv_path = None;
        config.manifest_path = None;
        let report = run(&config).unwrap();
        assert!(report.rows.iter().all(|r| r.emp_se == 0.0));
        assert!(report.rows[0]
            .flags
            .iter()
            .any(|f| f.contains("insufficient replicates")));
    }

    #[test]
    fn simulate_analyze_aggregate_pipeline() {
        let dir = tempfile::tempdir().unwrap();
        let paths = simulate_to_dir(
            ModelKind::BargmannFock,
            2,
            &[32.0, 32.0],
            &[64, 64],
            2,
            7,
            dir.path(),
        )
        .unwrap();
        assert_eq!(paths.len(), 2);
        let records = analyze_files(&paths, &[1.0], Side::Excursion, false).unwrap();
        assert_eq!(records.len(), 2);
        let stats = aggregate_records(&records);
        assert!(stats
            .iter()
            .any(|&(u, m, mean, _)| u == 1.0 && m == Metric::Components && mean > 0.0));
    }

    #[test]
    fn interval_domain_crops_from_torus() {
        let dir = tempfile::tempdir().unwrap();
        let config = RunConfig {
            model: ModelKind::BargmannFock,
            n: 1,
            domain: DomainConfig {
                shape: DomainShape::Interval,
                sides: vec![100.0],
                grid: vec![801],
            },
            u_grid: vec![1.0],
            replicates: 4,
            master_seed: 5,
            metrics: vec![Metric::Euler.into()],
            side: Side::Excursion,
            workers: None,
            cache_dir: None,
            csv_path: Some(dir.path().join("rice.csv")),
            manifest_path: None,
        };
        let report = run(&config).unwrap();
        assert_eq!(report.rows.len(), 1);
        // Rice oracle for the interval.
        let expect = crate::special::gaussian_upper_tail(1.0)
            + 100.0 * (-0.5f64).exp() / (2.0 * std::f64::consts::PI);
        approx::assert_relative_eq!(report.rows[0].theory, expect, max_relative = 1e-12);
        assert!(report.rows[0].emp_mean > 0.0);
    }
}
