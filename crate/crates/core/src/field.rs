//! Gaussian field realizations: exact spectral synthesis on flat tori,
//! random-feature evaluation at scattered points, and a binary on-disk
//! container for sampled grids.
//!
//! The torus sampler wraps the covariance around the torus, transforms it
//! to per-mode weights, and shapes complex white noise by the square-root
//! weights. The synthesized field is therefore an exact trigonometric
//! polynomial whose coefficients are retained, so values, gradients and
//! Hessians can later be evaluated anywhere, not just at grid vertices.

use crate::covariance::SpectralModel;
use crate::error::{Error, Result};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const CONTAINER_MAGIC: &[u8; 8] = b"GFLD0001";
const CLIP_WARN: f64 = 1e-8;
const CLIP_FAIL: f64 = 1e-4;
const PRUNE_REL: f64 = 1e-15;

/// Row-major shape arithmetic for an n-dimensional periodic grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub dims: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl GridShape {
    pub fn new(dims: Vec<usize>) -> Self {
        let mut strides = vec![1; dims.len()];
        for a in (0..dims.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * dims[a + 1];
        }
        let len = dims.iter().product();
        GridShape { dims, strides, len }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    #[inline]
    pub fn coord(&self, index: usize, axis: usize) -> usize {
        (index / self.strides[axis]) % self.dims[axis]
    }

    pub fn coords(&self, index: usize) -> Vec<usize> {
        (0..self.ndim()).map(|a| self.coord(index, a)).collect()
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.strides).map(|(c, s)| c * s).sum()
    }

    /// Neighbor one step forward along `axis`, wrapping around.
    #[inline]
    pub fn step_wrap(&self, index: usize, axis: usize) -> usize {
        let c = self.coord(index, axis);
        if c + 1 < self.dims[axis] {
            index + self.strides[axis]
        } else {
            index - c * self.strides[axis]
        }
    }

    /// Neighbor one step forward, `None` at the boundary.
    #[inline]
    pub fn step_clamped(&self, index: usize, axis: usize) -> Option<usize> {
        let c = self.coord(index, axis);
        if c + 1 < self.dims[axis] {
            Some(index + self.strides[axis])
        } else {
            None
        }
    }

    /// Neighbor one step backward along `axis`, wrapping around.
    #[inline]
    pub fn step_back_wrap(&self, index: usize, axis: usize) -> usize {
        let c = self.coord(index, axis);
        if c > 0 {
            index - self.strides[axis]
        } else {
            index + (self.dims[axis] - 1) * self.strides[axis]
        }
    }
}

/// Exact Fourier representation of a real field on a torus: a pruned list
/// of integer frequency vectors and complex amplitudes.
#[derive(Debug, Clone)]
pub struct SpectralRep {
    n: usize,
    /// Angular frequency per unit index, `2 pi / L_a`.
    base_freq: Vec<f64>,
    /// Signed integer frequencies, flattened `K x n`.
    qidx: Vec<i32>,
    amps: Vec<Complex64>,
    /// Per-axis largest |q| present, for phase-table sizing.
    qmax: Vec<i32>,
}

impl SpectralRep {
    pub fn coefficient_count(&self) -> usize {
        self.amps.len()
    }

    pub fn evaluator(&self) -> SpectralEvaluator<'_> {
        SpectralEvaluator {
            rep: self,
            tables: self
                .qmax
                .iter()
                .map(|&q| vec![Complex64::new(0.0, 0.0); 2 * q as usize + 1])
                .collect(),
        }
    }
}

/// Value, gradient and Hessian of the interpolant at one point.
#[derive(Debug, Clone)]
pub struct EvalJet {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Row-major symmetric `n x n`.
    pub hessian: Vec<f64>,
}

impl EvalJet {
    pub fn zeros(n: usize) -> Self {
        EvalJet {
            value: 0.0,
            gradient: vec![0.0; n],
            hessian: vec![0.0; n * n],
        }
    }
}

/// Reusable workspace for evaluating a spectral representation at
/// arbitrary points.
pub struct SpectralEvaluator<'a> {
    rep: &'a SpectralRep,
    tables: Vec<Vec<Complex64>>,
}

impl SpectralEvaluator<'_> {
    /// Evaluates value, gradient and Hessian at `x` (periodic).
    pub fn eval(&mut self, x: &[f64], out: &mut EvalJet) {
        let n = self.rep.n;
        debug_assert_eq!(x.len(), n);
        // Phase tables: table[a][q + qmax] = exp(i q w_a x_a).
        for a in 0..n {
            let qmax = self.rep.qmax[a] as usize;
            let table = &mut self.tables[a];
            let step = Complex64::from_polar(1.0, self.rep.base_freq[a] * x[a]);
            table[qmax] = Complex64::new(1.0, 0.0);
            let mut acc = Complex64::new(1.0, 0.0);
            for q in 1..=qmax {
                acc *= step;
                table[qmax + q] = acc;
                table[qmax - q] = acc.conj();
            }
        }
        out.value = 0.0;
        out.gradient.iter_mut().for_each(|g| *g = 0.0);
        out.hessian.iter_mut().for_each(|h| *h = 0.0);
        let mut omega = vec![0.0; n];
        for (c, amp) in self.rep.amps.iter().enumerate() {
            let qs = &self.rep.qidx[c * n..(c + 1) * n];
            let mut phase = Complex64::new(1.0, 0.0);
            for a in 0..n {
                let qmax = self.rep.qmax[a];
                phase *= self.tables[a][(qs[a] + qmax) as usize];
                omega[a] = f64::from(qs[a]) * self.rep.base_freq[a];
            }
            let z = amp * phase;
            out.value += z.re;
            for a in 0..n {
                // d/dx_a picks up a factor i omega_a.
                out.gradient[a] -= omega[a] * z.im;
                for b in a..n {
                    let v = -omega[a] * omega[b] * z.re;
                    out.hessian[a * n + b] += v;
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                out.hessian[a * n + b] = out.hessian[b * n + a];
            }
        }
    }
}

/// Where a field came from: enough to reproduce it bit for bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub model: serde_json::Value,
    pub master_seed: u64,
    pub replicate: u64,
}

/// A real field sampled on a periodic grid, with its exact Fourier
/// representation when it was synthesized spectrally.
#[derive(Debug, Clone)]
pub struct GridField {
    shape: GridShape,
    sides: Vec<f64>,
    values: Vec<f64>,
    periodic: bool,
    spectral: Option<SpectralRep>,
    pub provenance: Provenance,
}

impl GridField {
    pub fn dimension(&self) -> usize {
        self.shape.ndim()
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn sides(&self) -> &[f64] {
        &self.sides
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.sides[axis] / self.shape.dims[axis] as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn spectral(&self) -> Option<&SpectralRep> {
        self.spectral.as_ref()
    }

    /// Evaluates the trigonometric interpolant and its exact first and
    /// second derivatives at an arbitrary point.
    pub fn eval_spectral(&self, x: &[f64]) -> Result<EvalJet> {
        let rep = self
            .spectral
            .as_ref()
            .ok_or(Error::NoSpectralRepresentation)?;
        let mut jet = EvalJet::zeros(self.dimension());
        rep.evaluator().eval(x, &mut jet);
        Ok(jet)
    }

    /// Builds a field from explicit grid values; the spectral
    /// representation is the discrete Fourier interpolant, which passes
    /// through the samples exactly.
    pub fn from_values(values: Vec<f64>, sides: Vec<f64>, dims: Vec<usize>) -> Result<GridField> {
        let shape = GridShape::new(dims);
        if values.len() != shape.len() {
            return Err(Error::InvalidArgument(format!(
                "value array has {} entries but the grid has {}",
                values.len(),
                shape.len()
            )));
        }
        if sides.len() != shape.ndim() {
            return Err(Error::InvalidArgument("sides/dims rank mismatch".into()));
        }
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_all_axes(&mut buf, &shape, FftDirection::Forward);
        let m = shape.len() as f64;
        buf.iter_mut().for_each(|z| *z /= m);
        let spectral = prune_spectrum(&buf, &shape, &sides);
        Ok(GridField {
            shape,
            sides,
            values,
            periodic: true,
            spectral: Some(spectral),
            provenance: Provenance {
                model: serde_json::json!({"name": "explicit_values"}),
                master_seed: 0,
                replicate: 0,
            },
        })
    }

    /// Restricts the field to the box of the first `keep[a]` vertices per
    /// axis. The result is non-periodic; the spectral representation is
    /// kept since it still interpolates the retained values.
    pub fn crop(&self, keep: &[usize]) -> Result<GridField> {
        let n = self.dimension();
        if keep.len() != n
            || keep
                .iter()
                .zip(&self.shape.dims)
                .any(|(&k, &d)| k == 0 || k > d)
        {
            return Err(Error::InvalidArgument("bad crop extents".into()));
        }
        let new_shape = GridShape::new(keep.to_vec());
        let mut values = Vec::with_capacity(new_shape.len());
        for idx in 0..new_shape.len() {
            let coords = new_shape.coords(idx);
            values.push(self.values[self.shape.index(&coords)]);
        }
        let sides = (0..n).map(|a| self.spacing(a) * keep[a] as f64).collect();
        Ok(GridField {
            shape: new_shape,
            sides,
            values,
            periodic: false,
            spectral: self.spectral.clone(),
            provenance: self.provenance.clone(),
        })
    }

    /// Exact gradient grids by spectral differentiation: one array per
    /// axis with the derivative of the interpolant at every vertex.
    pub fn gradient_grids(&self) -> Result<Vec<Vec<f64>>> {
        if self.spectral.is_none() {
            return Err(Error::NoSpectralRepresentation);
        }
        let n = self.dimension();
        let m = self.shape.len() as f64;
        let mut base: Vec<Complex64> = self
            .values
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        fft_all_axes(&mut base, &self.shape, FftDirection::Forward);
        base.iter_mut().for_each(|z| *z /= m);
        let mut out = Vec::with_capacity(n);
        for a in 0..n {
            let w = 2.0 * std::f64::consts::PI / self.sides[a];
            let ma = self.shape.dims[a];
            let mut buf = base.clone();
            for (idx, z) in buf.iter_mut().enumerate() {
                let q = self.shape.coord(idx, a);
                let signed = if 2 * q <= ma {
                    q as i64
                } else {
                    q as i64 - ma as i64
                };
                let omega = w * signed as f64;
                *z *= Complex64::new(0.0, omega);
            }
            fft_all_axes(&mut buf, &self.shape, FftDirection::Inverse);
            out.push(buf.iter().map(|z| z.re).collect());
        }
        Ok(out)
    }

    /// Synthesizes the interpolant's values and gradient components on a
    /// grid refined by `factor` per axis (spectral zero-padding, exact).
    /// Returns `(refined_shape, values, gradients)`.
    pub fn refined_grids(
        &self,
        factor: usize,
    ) -> Result<(GridShape, Vec<f64>, Vec<Vec<f64>>)> {
        let rep = self
            .spectral
            .as_ref()
            .ok_or(Error::NoSpectralRepresentation)?;
        let n = self.dimension();
        let dims2: Vec<usize> = self.shape.dims.iter().map(|&d| d * factor).collect();
        let shape2 = GridShape::new(dims2);
        let mut value_buf = vec![Complex64::new(0.0, 0.0); shape2.len()];
        // Place every retained coefficient at its signed frequency slot.
        let mut coords = vec![0usize; n];
        for (c, amp) in rep.amps.iter().enumerate() {
            for a in 0..n {
                let q = rep.qidx[c * n + a];
                let ma = shape2.dims[a] as i64;
                coords[a] = i64::from(q).rem_euclid(ma) as usize;
            }
            value_buf[shape2.index(&coords)] = *amp;
        }
        let mut grads = Vec::with_capacity(n);
        for a in 0..n {
            let mut buf = value_buf.clone();
            let ma = shape2.dims[a];
            for (idx, z) in buf.iter_mut().enumerate() {
                let q = shape2.coord(idx, a);
                let signed = if 2 * q <= ma {
                    q as i64
                } else {
                    q as i64 - ma as i64
                };
                *z *= Complex64::new(0.0, rep.base_freq[a] * signed as f64);
            }
            fft_all_axes(&mut buf, &shape2, FftDirection::Inverse);
            grads.push(buf.iter().map(|z| z.re).collect());
        }
        fft_all_axes(&mut value_buf, &shape2, FftDirection::Inverse);
        let values = value_buf.iter().map(|z| z.re).collect();
        Ok((shape2, values, grads))
    }

    /// Serializes the field to a binary container: a JSON header followed
    /// by little-endian doubles in row-major order. Round-trips bit-exactly.
    pub fn write_container(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&ContainerHeader {
            dims: self.shape.dims.clone(),
            sides: self.sides.clone(),
            periodic: self.periodic,
            provenance: self.provenance.clone(),
            coefficient_count: self.spectral.as_ref().map_or(0, |s| s.amps.len()),
        })?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(CONTAINER_MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        if let Some(rep) = &self.spectral {
            for q in &rep.qidx {
                w.write_all(&q.to_le_bytes())?;
            }
            for amp in &rep.amps {
                w.write_all(&amp.re.to_le_bytes())?;
                w.write_all(&amp.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_container(path: &Path) -> Result<GridField> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CONTAINER_MAGIC {
            return Err(Error::BadContainer("wrong magic".into()));
        }
        let mut len8 = [0u8; 8];
        r.read_exact(&mut len8)?;
        let hlen = u64::from_le_bytes(len8) as usize;
        let mut hbuf = vec![0u8; hlen];
        r.read_exact(&mut hbuf)?;
        let header: ContainerHeader = serde_json::from_slice(&hbuf)?;
        let shape = GridShape::new(header.dims.clone());
        let mut values = Vec::with_capacity(shape.len());
        let mut f8 = [0u8; 8];
        for _ in 0..shape.len() {
            r.read_exact(&mut f8)?;
            values.push(f64::from_le_bytes(f8));
        }
        let n = shape.ndim();
        let spectral = if header.coefficient_count > 0 {
            let k = header.coefficient_count;
            let mut qidx = Vec::with_capacity(k * n);
            let mut q4 = [0u8; 4];
            for _ in 0..k * n {
                r.read_exact(&mut q4)?;
                qidx.push(i32::from_le_bytes(q4));
            }
            let mut amps = Vec::with_capacity(k);
            for _ in 0..k {
                r.read_exact(&mut f8)?;
                let re = f64::from_le_bytes(f8);
                r.read_exact(&mut f8)?;
                let im = f64::from_le_bytes(f8);
                amps.push(Complex64::new(re, im));
            }
            let base_freq = header
                .sides
                .iter()
                .map(|&l| 2.0 * std::f64::consts::PI / l)
                .collect();
            let mut qmax = vec![0i32; n];
            for (c, q) in qidx.iter().enumerate() {
                let a = c % n;
                qmax[a] = qmax[a].max(q.abs());
            }
            Some(SpectralRep {
                n,
                base_freq,
                qidx,
                amps,
                qmax,
            })
        } else {
            None
        };
        Ok(GridField {
            shape,
            sides: header.sides,
            values,
            periodic: header.periodic,
            spectral,
            provenance: header.provenance,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ContainerHeader {
    dims: Vec<usize>,
    sides: Vec<f64>,
    periodic: bool,
    provenance: Provenance,
    coefficient_count: usize,
}

/// Reusable torus sampler: the per-mode weights depend only on the model,
/// the periods and the grid, so replicate ensembles pay the covariance
/// transform once.
pub struct TorusSampler {
    shape: GridShape,
    sides: Vec<f64>,
    /// `sqrt(max(c_hat, 0)) / M` per mode.
    scale: Vec<f64>,
    model_descriptor: serde_json::Value,
    pub clipped_mass: f64,
}

impl TorusSampler {
    pub fn new(model: &SpectralModel, sides: &[f64], dims: &[usize]) -> Result<TorusSampler> {
        let n = model.dimension();
        if sides.len() != n || dims.len() != n {
            return Err(Error::Sampling(
                "sides/dims must match the model dimension".into(),
            ));
        }
        if dims.iter().any(|&m| m < 4) {
            return Err(Error::Sampling("grids need at least 4 points per axis".into()));
        }
        let corr = model.correlation_length().ok_or_else(|| {
            Error::Sampling(format!(
                "model {} has no finite 1% correlation length; it cannot be \
                 sampled on a torus",
                model.name()
            ))
        })?;
        for (a, &l) in sides.iter().enumerate() {
            if l < 10.0 * corr {
                return Err(Error::Sampling(format!(
                    "side {a} is {l} but the model needs at least {}",
                    10.0 * corr
                )));
            }
        }
        let decay = model.decay_radius().ok_or_else(|| {
            Error::Sampling(format!(
                "covariance of {} does not decay below 1e-12 in the scanned \
                 range; periodization would not converge",
                model.name()
            ))
        })?;
        if let Some(wmax) = model.max_frequency() {
            let min_wavelength = 2.0 * std::f64::consts::PI / wmax;
            for (a, &l) in sides.iter().enumerate() {
                let h = l / dims[a] as f64;
                if h > min_wavelength / 8.0 {
                    return Err(Error::Sampling(format!(
                        "axis {a} has {:.1} points per shortest wavelength; need 8",
                        min_wavelength / h
                    )));
                }
            }
        }
        let shape = GridShape::new(dims.to_vec());
        let m_total = shape.len() as f64;
        // Periodized covariance on the grid, images summed within the
        // decay radius.
        let images: Vec<i64> = sides.iter().map(|&l| (decay / l).ceil() as i64).collect();
        let mut cov = vec![0.0f64; shape.len()];
        let mut x = vec![0.0f64; n];
        for (idx, c) in cov.iter_mut().enumerate() {
            let mut base = vec![0.0f64; n];
            for a in 0..n {
                let h = sides[a] / shape.dims[a] as f64;
                let mut v = h * shape.coord(idx, a) as f64;
                if v > 0.5 * sides[a] {
                    v -= sides[a];
                }
                base[a] = v;
            }
            *c = sum_images(model, &mut x, &base, sides, &images, 0, decay);
        }
        let mut buf: Vec<Complex64> = cov.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_all_axes(&mut buf, &shape, FftDirection::Forward);
        let mut clipped = 0.0;
        let mut total = 0.0;
        let mut scale = Vec::with_capacity(shape.len());
        for z in &buf {
            total += z.re.abs();
            if z.re < 0.0 {
                clipped += -z.re;
                scale.push(0.0);
            } else {
                scale.push(z.re.sqrt() / m_total);
            }
        }
        let clipped_mass = if total > 0.0 { clipped / total } else { 0.0 };
        if clipped_mass > CLIP_FAIL {
            return Err(Error::Sampling(format!(
                "clipped spectral mass {clipped_mass:.3e} exceeds {CLIP_FAIL:.0e}; \
                 the grid does not resolve the covariance"
            )));
        }
        if clipped_mass > CLIP_WARN {
            eprintln!(
                "warning: clipped spectral mass {clipped_mass:.3e} while sampling {}",
                model.name()
            );
        }
        Ok(TorusSampler {
            shape,
            sides: sides.to_vec(),
            scale,
            model_descriptor: model.descriptor(),
            clipped_mass,
        })
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    /// Synthesizes one replicate. Deterministic in `(master_seed,
    /// replicate)` and independent of any threading outside this call.
    pub fn sample(&self, master_seed: u64, replicate: u64) -> GridField {
        let seed = crate::exec::mix_seed(master_seed, replicate);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.shape.len();
        let mut buf: Vec<Complex64> = (0..m)
            .map(|_| Complex64::new(rng.sample::<f64, _>(StandardNormal), 0.0))
            .collect();
        fft_all_axes(&mut buf, &self.shape, FftDirection::Forward);
        for (z, &s) in buf.iter_mut().zip(&self.scale) {
            *z *= s;
        }
        let spectral = prune_spectrum(&buf, &self.shape, &self.sides);
        fft_all_axes(&mut buf, &self.shape, FftDirection::Inverse);
        let values: Vec<f64> = buf.iter().map(|z| z.re).collect();
        GridField {
            shape: self.shape.clone(),
            sides: self.sides.clone(),
            values,
            periodic: true,
            spectral: Some(spectral),
            provenance: Provenance {
                model: self.model_descriptor.clone(),
                master_seed,
                replicate,
            },
        }
    }
}

fn sum_images(
    model: &SpectralModel,
    x: &mut [f64],
    base: &[f64],
    sides: &[f64],
    images: &[i64],
    axis: usize,
    decay: f64,
) -> f64 {
    if axis == x.len() {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        if r2 > (decay + 1.0) * (decay + 1.0) {
            return 0.0;
        }
        return model.covariance(x);
    }
    let mut acc = 0.0;
    for img in -images[axis]..=images[axis] {
        x[axis] = base[axis] + img as f64 * sides[axis];
        acc += sum_images(model, x, base, sides, images, axis + 1, decay);
    }
    acc
}

/// Draws one field on a torus. See [`TorusSampler`] for ensembles.
pub fn sample_torus(
    model: &SpectralModel,
    sides: &[f64],
    dims: &[usize],
    seed: u64,
) -> Result<GridField> {
    Ok(TorusSampler::new(model, sides, dims)?.sample(seed, 0))
}

/// Random-feature evaluation at scattered points:
/// `f(x) = sqrt(2/m) sum_j cos(<xi_j, x> + phi_j)` with frequencies from
/// the spectral measure. The empirical covariance converges to the model
/// covariance at rate `m^(-1/2)`.
pub fn sample_random_features(
    model: &SpectralModel,
    points: &[Vec<f64>],
    m_features: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if m_features == 0 {
        return Err(Error::Sampling("need at least one feature".into()));
    }
    let n = model.dimension();
    if points.iter().any(|p| p.len() != n) {
        return Err(Error::Sampling("point dimension mismatch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xi = vec![0.0; n];
    let mut out = vec![0.0; points.len()];
    let two_pi = 2.0 * std::f64::consts::PI;
    for _ in 0..m_features {
        model.sample_frequency(&mut rng as &mut dyn RngCore, &mut xi);
        let phi: f64 = rng.random::<f64>() * two_pi;
        for (o, p) in out.iter_mut().zip(points) {
            let dot: f64 = xi.iter().zip(p).map(|(a, b)| a * b).sum();
            *o += (dot + phi).cos();
        }
    }
    let scale = (2.0 / m_features as f64).sqrt();
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

enum FftDirection {
    Forward,
    Inverse,
}

/// Unnormalized separable FFT over every axis of a row-major buffer.
fn fft_all_axes(buf: &mut [Complex64], shape: &GridShape, direction: FftDirection) {
    let mut planner = FftPlanner::new();
    for axis in 0..shape.ndim() {
        let m = shape.dims[axis];
        let fft = match direction {
            FftDirection::Forward => planner.plan_fft_forward(m),
            FftDirection::Inverse => planner.plan_fft_inverse(m),
        };
        let stride = shape.stride(axis);
        let outer: usize = shape.dims[..axis].iter().product();
        let block = m * stride;
        let mut line = vec![Complex64::new(0.0, 0.0); m];
        for o in 0..outer {
            for i in 0..stride {
                let base = o * block + i;
                for t in 0..m {
                    line[t] = buf[base + t * stride];
                }
                fft.process(&mut line);
                for t in 0..m {
                    buf[base + t * stride] = line[t];
                }
            }
        }
    }
}

/// Keeps the modes that carry mass; amplitudes below `1e-15` of the peak
/// contribute less than the container round-trip tolerance in total.
fn prune_spectrum(amps: &[Complex64], shape: &GridShape, sides: &[f64]) -> SpectralRep {
    let n = shape.ndim();
    let peak = amps.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max).sqrt();
    let tol = peak * PRUNE_REL;
    let mut qidx = Vec::new();
    let mut kept = Vec::new();
    let mut qmax = vec![0i32; n];
    for (idx, z) in amps.iter().enumerate() {
        if z.norm() > tol {
            for a in 0..n {
                let q = shape.coord(idx, a);
                let ma = shape.dims[a];
                let signed = if 2 * q <= ma {
                    q as i64
                } else {
                    q as i64 - ma as i64
                } as i32;
                qidx.push(signed);
                qmax[a] = qmax[a].max(signed.abs());
            }
            kept.push(*z);
        }
    }
    SpectralRep {
        n,
        base_freq: sides
            .iter()
            .map(|&l| 2.0 * std::f64::consts::PI / l)
            .collect(),
        qidx,
        amps: kept,
        qmax,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{make_model, ModelKind};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn bf2() -> SpectralModel {
        make_model(ModelKind::BargmannFock, 2).unwrap()
    }

    #[test]
    fn torus_sampler_rejects_small_domains_and_slow_decay() {
        let model = bf2();
        assert!(TorusSampler::new(&model, &[20.0, 20.0], &[64, 64]).is_err());
        let rw = make_model(ModelKind::RandomWaves, 2).unwrap();
        assert!(TorusSampler::new(&rw, &[400.0, 400.0], &[512, 512]).is_err());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let sampler = TorusSampler::new(&bf2(), &[40.0, 40.0], &[64, 64]).unwrap();
        let a = sampler.sample(1234, 7);
        let b = sampler.sample(1234, 7);
        assert_eq!(a.values(), b.values());
        let c = sampler.sample(1234, 8);
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn field_variance_and_covariance_match_model() {
        let sides = [40.0, 40.0];
        let dims = [160, 160];
        let sampler = TorusSampler::new(&bf2(), &sides, &dims).unwrap();
        assert!(sampler.clipped_mass < CLIP_WARN);
        let reps = 50;
        let mut var = 0.0;
        let mut cov_lag1 = 0.0;
        let lag = 4; // 4 * 0.25 = 1.0
        let mut count = 0.0;
        for r in 0..reps {
            let f = sampler.sample(5, r);
            let v = f.values();
            let shape = f.shape().clone();
            for idx in 0..v.len() {
                var += v[idx] * v[idx];
                let mut j = idx;
                for _ in 0..lag {
                    j = shape.step_wrap(j, 0);
                }
                cov_lag1 += v[idx] * v[j];
                count += 1.0;
            }
        }
        assert_abs_diff_eq!(var / count, 1.0, epsilon = 0.02);
        assert_abs_diff_eq!(cov_lag1 / count, (-0.5f64).exp(), epsilon = 0.02);
    }

    #[test]
    fn field_is_gaussian_at_a_vertex() {
        let sampler = TorusSampler::new(&bf2(), &[32.0, 32.0], &[64, 64]).unwrap();
        let reps = 2000;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for r in 0..reps {
            let f = sampler.sample(11, r);
            let v = f.values()[777];
            m2 += v * v;
            m3 += v * v * v;
            m4 += v * v * v * v;
        }
        let n = reps as f64;
        let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
        let skew = m3 / m2.powf(1.5);
        let kurt = m4 / (m2 * m2) - 3.0;
        assert!(skew.abs() < 0.1, "skewness {skew}");
        assert!(kurt.abs() < 0.2, "excess kurtosis {kurt}");
    }

    #[test]
    fn spectral_derivative_second_moment() {
        let sampler = TorusSampler::new(&bf2(), &[40.0, 40.0], &[128, 128]).unwrap();
        let mut e_dx2 = [0.0, 0.0];
        let mut count = 0.0;
        for r in 0..20 {
            let f = sampler.sample(21, r);
            let grads = f.gradient_grids().unwrap();
            for a in 0..2 {
                e_dx2[a] += grads[a].iter().map(|g| g * g).sum::<f64>();
            }
            count += f.values().len() as f64;
        }
        for a in 0..2 {
            assert_relative_eq!(e_dx2[a] / count, 1.0, max_relative = 0.02);
        }
    }

    #[test]
    fn eval_matches_grid_values() {
        let sampler = TorusSampler::new(&bf2(), &[40.0, 40.0], &[64, 64]).unwrap();
        let f = sampler.sample(3, 0);
        for &idx in &[0usize, 17, 1000, 4095] {
            let x = [
                f.spacing(0) * f.shape().coord(idx, 0) as f64,
                f.spacing(1) * f.shape().coord(idx, 1) as f64,
            ];
            let jet = f.eval_spectral(&x).unwrap();
            assert_abs_diff_eq!(jet.value, f.values()[idx], epsilon = 1e-10);
        }
    }

    #[test]
    fn eval_gradient_matches_finite_differences() {
        let sampler = TorusSampler::new(&bf2(), &[40.0, 40.0], &[64, 64]).unwrap();
        let f = sampler.sample(13, 1);
        let x = [11.37, 23.91];
        let jet = f.eval_spectral(&x).unwrap();
        let h = 1e-5;
        for a in 0..2 {
            let mut xp = x;
            xp[a] += h;
            let mut xm = x;
            xm[a] -= h;
            let fd = (f.eval_spectral(&xp).unwrap().value - f.eval_spectral(&xm).unwrap().value)
                / (2.0 * h);
            assert_relative_eq!(jet.gradient[a], fd, max_relative = 1e-6, epsilon = 1e-9);
        }
        assert_eq!(jet.hessian[1], jet.hessian[2]);
    }

    #[test]
    fn from_values_recovers_trig_polynomials() {
        let m = 32;
        let l = 16.0;
        let mut values = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                let x = l * i as f64 / m as f64;
                let y = l * j as f64 / m as f64;
                values.push(
                    (2.0 * std::f64::consts::PI * x / l).cos()
                        * (2.0 * std::f64::consts::PI * y / l).cos(),
                );
            }
        }
        let f = GridField::from_values(values.clone(), vec![l, l], vec![m, m]).unwrap();
        assert_eq!(f.spectral().unwrap().coefficient_count(), 4);
        let jet = f.eval_spectral(&[3.123, 9.71]).unwrap();
        let expect = (2.0 * std::f64::consts::PI * 3.123 / l).cos()
            * (2.0 * std::f64::consts::PI * 9.71 / l).cos();
        assert_relative_eq!(jet.value, expect, epsilon = 1e-12);
    }

    #[test]
    fn random_features_covariance_converges() {
        let rw = make_model(ModelKind::RandomWaves, 2).unwrap();
        let points = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let reps = 20_000;
        let (mut var0, mut cov01) = (0.0, 0.0);
        for r in 0..reps {
            let f =
                sample_random_features(&rw, &points, 4096, crate::exec::mix_seed(77, r)).unwrap();
            var0 += f[0] * f[0];
            cov01 += f[0] * f[1];
        }
        let n = reps as f64;
        assert_abs_diff_eq!(var0 / n, 1.0, epsilon = 0.03);
        // J_0(1), pinned against the series oracle in special::tests.
        assert_abs_diff_eq!(cov01 / n, 0.7651976865579666, epsilon = 0.02);
    }

    #[test]
    fn container_roundtrip_is_bit_exact() {
        let sampler = TorusSampler::new(&bf2(), &[40.0, 40.0], &[32, 32]).unwrap();
        let f = sampler.sample(100, 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.bin");
        f.write_container(&path).unwrap();
        let g = GridField::read_container(&path).unwrap();
        assert_eq!(f.values().len(), g.values().len());
        for (a, b) in f.values().iter().zip(g.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(g.provenance.replicate, 5);
        let ja = f.eval_spectral(&[1.0, 2.0]).unwrap();
        let jb = g.eval_spectral(&[1.0, 2.0]).unwrap();
        assert_eq!(ja.value.to_bits(), jb.value.to_bits());
    }

    #[test]
    fn crop_to_box() {
        let model = make_model(ModelKind::BargmannFock, 1).unwrap();
        let f = sample_torus(&model, &[128.0], &[512], 9).unwrap();
        let g = f.crop(&[401]).unwrap();
        assert!(!g.is_periodic());
        assert_eq!(g.values().len(), 401);
        assert_eq!(g.values()[37], f.values()[37]);
        assert_relative_eq!(g.sides()[0], 100.25, max_relative = 1e-12);
    }
}
