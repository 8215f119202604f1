//! Design matrices and per-voxel regressor estimation.
//!
//! The design column of a category is its event boxcar convolved with a
//! hemodynamic response. Regressors are estimated by generalized least
//! squares, `β̂ = ((DᵀΣ⁻¹D)⁻¹ DᵀΣ⁻¹ F)ᵀ`, computed by whitening both sides
//! with the inverse Cholesky factor of `Σ` and solving the ordinary normal
//! equations of the whitened problem.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::io;
use crate::volume::{BoldSeries, Dims, OnsetSchedule};

/// Largest `|ρ|` accepted from the residual autocorrelation estimate.
pub const MAX_ESTIMATED_RHO: f64 = 0.95;

/// Gram matrices with a larger eigenvalue ratio are treated as singular.
const MAX_GRAM_CONDITION: f64 = 1e12;

/// Double-gamma response parameters, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrfParams {
    pub peak_delay: f64,
    pub undershoot_delay: f64,
    pub peak_dispersion: f64,
    pub undershoot_dispersion: f64,
    pub undershoot_ratio: f64,
}

impl Default for HrfParams {
    fn default() -> Self {
        HrfParams {
            peak_delay: 6.0,
            undershoot_delay: 16.0,
            peak_dispersion: 1.0,
            undershoot_dispersion: 1.0,
            undershoot_ratio: 1.0 / 6.0,
        }
    }
}

impl HrfParams {
    /// Unnormalized response at time `t` seconds.
    pub fn eval(&self, t: f64) -> f64 {
        gamma_pdf(t, self.peak_delay / self.peak_dispersion, self.peak_dispersion)
            - self.undershoot_ratio
                * gamma_pdf(
                    t,
                    self.undershoot_delay / self.undershoot_dispersion,
                    self.undershoot_dispersion,
                )
    }
}

fn gamma_pdf(t: f64, shape: f64, scale: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    ((shape - 1.0) * t.ln() - t / scale - ln_gamma(shape) - shape * scale.ln()).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HrfKernel {
    samples: Vec<f64>,
    tr_seconds: f64,
    peak_index: usize,
}

impl HrfKernel {
    /// Wraps arbitrary samples, e.g. a unit impulse for tests.
    pub fn from_samples(samples: Vec<f64>, tr_seconds: f64) -> Result<Self> {
        if !(tr_seconds.is_finite() && tr_seconds > 0.0) {
            return Err(Error::Argument(format!("tr must be positive, got {tr_seconds}")));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("HRF samples must be finite".into()));
        }
        if !samples.iter().any(|&v| v > 0.0) {
            return Err(Error::Argument("HRF needs at least one positive sample".into()));
        }
        let peak_index = argmax(&samples);
        Ok(HrfKernel {
            samples,
            tr_seconds,
            peak_index,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn tr_seconds(&self) -> f64 {
        self.tr_seconds
    }

    pub fn peak_index(&self) -> usize {
        self.peak_index
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn canonical_hrf(tr_seconds: f64, length_seconds: f64) -> Result<HrfKernel> {
    hrf_with_params(tr_seconds, length_seconds, &HrfParams::default())
}

/// Samples the double-gamma response at `0, tr, 2tr, ...` for
/// `floor(length / tr)` samples and scales it to a maximum of 1.
pub fn hrf_with_params(tr_seconds: f64, length_seconds: f64, params: &HrfParams) -> Result<HrfKernel> {
    if !(tr_seconds.is_finite() && tr_seconds > 0.0) {
        return Err(Error::Argument(format!("tr must be positive, got {tr_seconds}")));
    }
    if !(length_seconds.is_finite() && length_seconds >= tr_seconds) {
        return Err(Error::Argument(format!(
            "HRF length {length_seconds} s must be at least one tr ({tr_seconds} s)"
        )));
    }
    let n = (length_seconds / tr_seconds + 1e-9).floor() as usize;
    let mut samples: Vec<f64> = (0..n).map(|k| params.eval(k as f64 * tr_seconds)).collect();
    let max = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::Argument(format!(
            "HRF sampled at tr {tr_seconds} s has no positive sample"
        )));
    }
    for v in &mut samples {
        *v /= max;
    }
    HrfKernel::from_samples(samples, tr_seconds)
}

/// One column per category, each of length `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    names: Vec<String>,
    t: usize,
    columns: Vec<Vec<f64>>,
}

impl DesignMatrix {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if columns.is_empty() || names.len() != columns.len() {
            return Err(Error::Argument(format!(
                "design needs one name per column and at least one column ({} names, {} columns)",
                names.len(),
                columns.len()
            )));
        }
        let t = columns[0].len();
        if columns.iter().any(|c| c.len() != t) {
            return Err(Error::Argument("design columns differ in length".into()));
        }
        Ok(DesignMatrix { names, t, columns })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.columns[i]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn to_text(&self) -> String {
        let mut out = self.names.join(",");
        out.push('\n');
        for j in 0..self.t {
            let row: Vec<String> = self.columns.iter().map(|c| io::fmt_f64(c[j])).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (header, rows) = io::parse_records(text, "design")?;
        let names: Vec<String> = header.iter().map(str::to_string).collect();
        let mut columns = vec![Vec::with_capacity(rows.len()); names.len()];
        for (r, rec) in rows.iter().enumerate() {
            if rec.len() != names.len() {
                return Err(Error::format(
                    format!("design row {}", r + 1),
                    format!("expected {} fields, found {}", names.len(), rec.len()),
                ));
            }
            for (c, v) in rec.iter().enumerate() {
                columns[c].push(io::parse_f64("design", v)?);
            }
        }
        DesignMatrix::new(names, columns)
    }
}

/// Causal linear convolution of `signal` with `kernel`, truncated to the
/// signal length: `out[j] = Σ_k kernel[k] · signal[j - k]`.
pub fn convolve_causal(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; signal.len()];
    for (j, o) in out.iter_mut().enumerate() {
        let kmax = j.min(kernel.len().saturating_sub(1));
        let mut acc = 0.0;
        for k in 0..=kmax {
            if k < kernel.len() {
                acc += kernel[k] * signal[j - k];
            }
        }
        *o = acc;
    }
    out
}

/// Event boxcar of one category: 1 during each event, 0 elsewhere.
pub fn boxcar(onsets: &[usize], durations: &[usize], t: usize) -> Vec<f64> {
    let mut s = vec![0.0; t];
    for (&on, &dur) in onsets.iter().zip(durations) {
        for v in s.iter_mut().skip(on).take(dur) {
            *v = 1.0;
        }
    }
    s
}

pub fn build_design(schedule: &OnsetSchedule, hrf: &HrfKernel, t: usize) -> Result<DesignMatrix> {
    for c in schedule.categories() {
        for (k, (&on, &dur)) in c.onsets.iter().zip(&c.durations).enumerate() {
            if on >= t || on + dur > t {
                return Err(Error::Argument(format!(
                    "event {k} of category {:?} (onset {on}, duration {dur}) lies outside [0, {t})",
                    c.name
                )));
            }
        }
    }
    let columns = schedule
        .categories()
        .iter()
        .map(|c| convolve_causal(&boxcar(&c.onsets, &c.durations, t), hrf.samples()))
        .collect();
    DesignMatrix::new(
        schedule.categories().iter().map(|c| c.name.clone()).collect(),
        columns,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    Identity,
    /// First-order autoregressive noise with `Σ_ij ∝ ρ^|i-j|`.
    Ar1 { rho: f64 },
    /// AR(1) with `ρ` estimated from pooled OLS residuals (Yule-Walker).
    Ar1Estimated,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::Identity
    }
}

impl NoiseModel {
    /// Dense noise covariance of a length-`t` series, up to scale.
    pub fn covariance(&self, t: usize) -> Result<DMatrix<f64>> {
        match *self {
            NoiseModel::Identity => Ok(DMatrix::identity(t, t)),
            NoiseModel::Ar1 { rho } => {
                check_rho(rho)?;
                Ok(DMatrix::from_fn(t, t, |i, j| {
                    rho.powi((i as i64 - j as i64).unsigned_abs() as i32) / (1.0 - rho * rho)
                }))
            }
            NoiseModel::Ar1Estimated => Err(Error::Argument(
                "estimated AR(1) has no covariance until rho is estimated".into(),
            )),
        }
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho.is_finite() && rho.abs() < 1.0) {
        return Err(Error::Argument(format!("AR(1) rho must lie in (-1, 1), got {rho}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Native,
    Standard,
}

/// Per-category regressor maps, one value per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    pub names: Vec<String>,
    pub maps: Vec<Vec<f64>>,
    pub dims: Dims,
    pub space: Space,
    /// Noise model actually used; estimated models are resolved to `Ar1`.
    pub noise: NoiseModel,
}

impl CorrelationMap {
    pub fn p(&self) -> usize {
        self.maps.len()
    }

    pub fn map(&self, i: usize) -> &[f64] {
        &self.maps[i]
    }
}

/// Applies the AR(1) whitening operator `P` (with `PᵀP ∝ Σ⁻¹`) in place to
/// a row-major `t × width` block.
fn whiten_rows(data: &mut [f64], t: usize, width: usize, rho: f64) {
    if t == 0 {
        return;
    }
    for j in (1..t).rev() {
        let (prev, cur) = data.split_at_mut(j * width);
        let prev = &prev[(j - 1) * width..];
        for (c, p) in cur[..width].iter_mut().zip(prev) {
            *c -= rho * p;
        }
    }
    let s = (1.0 - rho * rho).sqrt();
    for v in &mut data[..width] {
        *v *= s;
    }
}

/// Solves the (whitened) normal equations for all voxels at once.
/// `x` is row-major `t × p`, `y` row-major `t × m`. Returns `p × m`.
fn solve_normal_equations(x: &[f64], y: &[f64], t: usize, p: usize, m: usize) -> Result<Vec<Vec<f64>>> {
    let xm = DMatrix::from_row_slice(t, p, x);
    let gram = xm.transpose() * &xm;
    let eig = SymmetricEigen::new(gram.clone());
    let lmax = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if !(condition.is_finite() && condition < MAX_GRAM_CONDITION) {
        return Err(Error::Singular {
            message: "design columns are linearly dependent".into(),
            condition,
        });
    }
    let chol = gram.cholesky().ok_or(Error::Singular {
        message: "Cholesky factorization of DᵀΣ⁻¹D failed".into(),
        condition,
    })?;
    // Xᵀ Y, p × m
    let mut rhs = DMatrix::<f64>::zeros(p, m);
    for j in 0..t {
        let yrow = &y[j * m..(j + 1) * m];
        for i in 0..p {
            let xi = x[j * p + i];
            if xi == 0.0 {
                continue;
            }
            let mut r = rhs.row_mut(i);
            for (acc, &v) in r.iter_mut().zip(yrow) {
                *acc += xi * v;
            }
        }
    }
    let beta = chol.solve(&rhs);
    Ok((0..p).map(|i| beta.row(i).iter().cloned().collect()).collect())
}

fn design_rows(d: &DesignMatrix) -> Vec<f64> {
    let (t, p) = (d.t(), d.p());
    let mut x = vec![0.0; t * p];
    for (i, col) in d.columns().iter().enumerate() {
        for (j, &v) in col.iter().enumerate() {
            x[j * p + i] = v;
        }
    }
    x
}

/// Yule-Walker lag-1 autocorrelation of OLS residuals pooled over voxels,
/// clamped to `±MAX_ESTIMATED_RHO`.
pub fn estimate_ar1_rho(f: &BoldSeries, d: &DesignMatrix) -> Result<f64> {
    let (t, p, m) = (f.t(), d.p(), f.m());
    let x = design_rows(d);
    let beta = solve_normal_equations(&x, f.samples(), t, p, m)?;
    let mut prev = vec![0.0; m];
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..t {
        let row = f.row(j);
        for v in 0..m {
            let fit: f64 = (0..p).map(|i| x[j * p + i] * beta[i][v]).sum();
            let r = row[v] - fit;
            den += r * r;
            if j > 0 {
                num += r * prev[v];
            }
            prev[v] = r;
        }
    }
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok((num / den).clamp(-MAX_ESTIMATED_RHO, MAX_ESTIMATED_RHO))
}

pub fn estimate_regressors(f: &BoldSeries, d: &DesignMatrix, noise: NoiseModel) -> Result<CorrelationMap> {
    let (t, p, m) = (f.t(), d.p(), f.m());
    if d.t() != t {
        return Err(Error::Argument(format!(
            "design has {} rows but the series has {t} samples",
            d.t()
        )));
    }
    if t < p {
        return Err(Error::Argument(format!("{t} samples cannot fit {p} regressors")));
    }
    let noise = match noise {
        NoiseModel::Ar1Estimated => NoiseModel::Ar1 {
            rho: estimate_ar1_rho(f, d)?,
        },
        other => other,
    };
    let mut x = design_rows(d);
    let maps = match noise {
        NoiseModel::Ar1 { rho } if rho != 0.0 => {
            check_rho(rho)?;
            let mut y = f.samples().to_vec();
            whiten_rows(&mut x, t, p, rho);
            whiten_rows(&mut y, t, m, rho);
            solve_normal_equations(&x, &y, t, p, m)?
        }
        NoiseModel::Ar1 { rho } => {
            check_rho(rho)?;
            solve_normal_equations(&x, f.samples(), t, p, m)?
        }
        _ => solve_normal_equations(&x, f.samples(), t, p, m)?,
    };
    Ok(CorrelationMap {
        names: d.names().to_vec(),
        maps,
        dims: f.dims(),
        space: Space::Native,
        noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Category;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series_from(d: &DesignMatrix, b: &[Vec<f64>], dims: Dims) -> BoldSeries {
        let (t, m) = (d.t(), dims.len());
        let mut flat = vec![0.0; t * m];
        for j in 0..t {
            for v in 0..m {
                flat[j * m + v] = (0..d.p()).map(|i| d.column(i)[j] * b[i][v]).sum();
            }
        }
        BoldSeries::from_flat("s", dims, 1.0, t, flat).unwrap()
    }

    fn random_design(rng: &mut ChaCha8Rng, t: usize, p: usize) -> DesignMatrix {
        let cols = (0..p)
            .map(|_| (0..t).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        DesignMatrix::new((0..p).map(|i| format!("c{i}")).collect(), cols).unwrap()
    }

    /// Dense-inverse GLS: (DᵀΣ⁻¹D)⁻¹ DᵀΣ⁻¹ F.
    fn dense_gls(d: &DesignMatrix, f: &BoldSeries, sigma: &DMatrix<f64>) -> DMatrix<f64> {
        let dm = DMatrix::from_fn(d.t(), d.p(), |j, i| d.column(i)[j]);
        let fm = DMatrix::from_row_slice(f.t(), f.m(), f.samples());
        let si = sigma.clone().try_inverse().unwrap();
        let a = (dm.transpose() * &si * &dm).try_inverse().unwrap();
        a * dm.transpose() * si * fm
    }

    #[test]
    fn canonical_hrf_shape() {
        let h = canonical_hrf(1.0, 32.0).unwrap();
        assert_eq!(h.len(), 32);
        assert!((4..=6).contains(&h.peak_index()));
        assert!((h.samples()[h.peak_index()] - 1.0).abs() < 1e-15);
        let min = h.samples().iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min < 0.0 && min > -0.5, "undershoot {min}");
        let ups = h.samples().windows(3).filter(|w| w[0] < w[1] && w[1] >= w[2]).count();
        assert_eq!(ups, 1);
        // independent closed form at the peak sample: t^5 e^-t / 5! - t^15 e^-t / (6 * 15!)
        let raw = |t: f64| t.powi(5) * (-t).exp() / 120.0 - t.powi(15) * (-t).exp() / (6.0 * 1_307_674_368_000.0);
        let scale = raw(h.peak_index() as f64);
        for k in 0..32 {
            assert!((h.samples()[k] - raw(k as f64) / scale).abs() < 1e-12);
        }
    }

    #[test]
    fn hrf_sample_count_follows_tr() {
        assert_eq!(canonical_hrf(2.0, 32.0).unwrap().len(), 16);
        assert!(canonical_hrf(2.0, 1.0).is_err());
        assert!(canonical_hrf(0.0, 32.0).is_err());
        assert!(canonical_hrf(-1.0, 32.0).is_err());
    }

    fn one_event(on: usize, dur: usize) -> OnsetSchedule {
        OnsetSchedule::new(vec![Category {
            name: "a".into(),
            onsets: vec![on],
            durations: vec![dur],
        }])
        .unwrap()
    }

    #[test]
    fn impulse_hrf_gives_boxcar() {
        let delta = HrfKernel::from_samples(vec![1.0], 1.0).unwrap();
        let d = build_design(&one_event(0, 1), &delta, 8).unwrap();
        assert_eq!(d.column(0), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn design_is_shifted_hrf() {
        let h = canonical_hrf(1.0, 32.0).unwrap();
        let d = build_design(&one_event(10, 1), &h, 60).unwrap();
        for j in 0..60 {
            let expect = if j >= 10 && j - 10 < 32 { h.samples()[j - 10] } else { 0.0 };
            assert_eq!(d.column(0)[j], expect);
        }
    }

    #[test]
    fn design_is_linear_in_events() {
        let h = canonical_hrf(1.0, 32.0).unwrap();
        let two = OnsetSchedule::new(vec![
            Category { name: "a".into(), onsets: vec![3, 50], durations: vec![2, 1] },
            Category { name: "b".into(), onsets: vec![20, 70], durations: vec![1, 3] },
        ])
        .unwrap();
        let merged = OnsetSchedule::new(vec![Category {
            name: "ab".into(),
            onsets: vec![3, 20, 50, 70],
            durations: vec![2, 1, 1, 3],
        }])
        .unwrap();
        let t = 100;
        let d2 = build_design(&two, &h, t).unwrap();
        let d1 = build_design(&merged, &h, t).unwrap();
        // direct O(t·k) convolution oracle on the merged boxcar
        let s = boxcar(&[3, 20, 50, 70], &[2, 1, 1, 3], t);
        for j in 0..t {
            let mut direct = 0.0;
            for k in 0..h.len() {
                if j >= k {
                    direct += h.samples()[k] * s[j - k];
                }
            }
            assert!((d2.column(0)[j] + d2.column(1)[j] - direct).abs() < 1e-12);
            assert!((d1.column(0)[j] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_event_is_named() {
        let h = canonical_hrf(1.0, 32.0).unwrap();
        let err = build_design(&one_event(40, 5), &h, 42).unwrap_err();
        assert!(err.to_string().contains("\"a\""), "{err}");
    }

    #[test]
    fn noise_free_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_design(&mut rng, 40, 3);
        let dims = Dims::new(5, 4, 2);
        let b: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..dims.len()).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let f = series_from(&d, &b, dims);
        let est = estimate_regressors(&f, &d, NoiseModel::Identity).unwrap();
        for i in 0..3 {
            for v in 0..dims.len() {
                assert!((est.map(i)[v] - b[i][v]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn intercept_only_gives_voxel_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dims = Dims::new(3, 3, 1);
        let t = 25;
        let flat: Vec<f64> = (0..t * 9).map(|_| rng.random_range(-5.0..5.0)).collect();
        let f = BoldSeries::from_flat("s", dims, 1.0, t, flat.clone()).unwrap();
        let d = DesignMatrix::new(vec!["one".into()], vec![vec![1.0; t]]).unwrap();
        let est = estimate_regressors(&f, &d, NoiseModel::Identity).unwrap();
        for v in 0..9 {
            let mean: f64 = (0..t).map(|j| flat[j * 9 + v]).sum::<f64>() / t as f64;
            assert!((est.map(0)[v] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn ar1_matches_dense_inverse_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = 64;
        let d = random_design(&mut rng, t, 2);
        let dims = Dims::new(4, 3, 2);
        let flat: Vec<f64> = (0..t * dims.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = BoldSeries::from_flat("s", dims, 1.0, t, flat).unwrap();
        let noise = NoiseModel::Ar1 { rho: 0.5 };
        let est = estimate_regressors(&f, &d, noise).unwrap();
        let oracle = dense_gls(&d, &f, &noise.covariance(t).unwrap());
        for i in 0..2 {
            for v in 0..dims.len() {
                assert!((est.map(i)[v] - oracle[(i, v)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rank_deficient_design_is_singular() {
        let t = 20;
        let c: Vec<f64> = (0..t).map(|j| j as f64).collect();
        let d = DesignMatrix::new(vec!["a".into(), "b".into()], vec![c.clone(), c.iter().map(|v| 2.0 * v).collect()]).unwrap();
        let f = BoldSeries::from_flat("s", Dims::cube(1), 1.0, t, vec![0.5; t]).unwrap();
        match estimate_regressors(&f, &d, NoiseModel::Identity) {
            Err(Error::Singular { condition, .. }) => assert!(condition > 1e12),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn too_few_samples() {
        let d = DesignMatrix::new(vec!["a".into(), "b".into()], vec![vec![1.0], vec![0.0]]).unwrap();
        let f = BoldSeries::from_flat("s", Dims::cube(1), 1.0, 1, vec![1.0]).unwrap();
        assert!(matches!(estimate_regressors(&f, &d, NoiseModel::Identity), Err(Error::Argument(_))));
    }

    #[test]
    fn estimated_rho_tracks_generated_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = 400;
        let d = random_design(&mut rng, t, 1);
        let dims = Dims::new(10, 10, 1);
        let m = dims.len();
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let mut flat = vec![0.0; t * m];
        for v in 0..m {
            let mut e: f64 = rng.sample(normal);
            for j in 0..t {
                if j > 0 {
                    e = 0.6 * e + rng.sample::<f64, _>(normal);
                }
                flat[j * m + v] = d.column(0)[j] + e;
            }
        }
        let f = BoldSeries::from_flat("s", dims, 1.0, t, flat).unwrap();
        let rho = estimate_ar1_rho(&f, &d).unwrap();
        assert!((rho - 0.6).abs() < 0.05, "rho {rho}");
        let est = estimate_regressors(&f, &d, NoiseModel::Ar1Estimated).unwrap();
        assert_eq!(est.noise, NoiseModel::Ar1 { rho });
    }

    #[test]
    fn ar1_covariance_is_positive_definite() {
        for &rho in &[-0.94, -0.5, 0.0, 0.3, 0.9, 0.949] {
            let s = NoiseModel::Ar1 { rho }.covariance(50).unwrap();
            assert_eq!(s, s.transpose());
            assert!(s.cholesky().is_some(), "rho {rho}");
        }
    }

    #[test]
    fn design_text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = random_design(&mut rng, 12, 2);
        assert_eq!(DesignMatrix::parse(&d.to_text()).unwrap(), d);
    }
}
