//! Bivariate Gaussian mixture over (start minute, energy kWh).
//!
//! Fitting runs EM on standardized data so the covariance floor is
//! expressed in unit-free terms; the stored model is in original units and
//! remembers the standardization scale used for the floor.

use std::f64::consts::{LN_2, PI};
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::clock::{wrap_minute, TimeWindow};
use crate::duration::DurationModel;
use crate::error::{Error, Result};
use crate::seeds::derive_seed;
use crate::session::Segment;

pub const MIXTURE_FORMAT_VERSION: u32 = 1;

/// Lower bound on eigenvalues of each standardized component covariance.
pub const COVARIANCE_FLOOR: f64 = 1e-4;

pub type Point = [f64; 2];

/// Row-major 2×2 covariance `[xx, xy, yx, yy]`.
pub type Cov = [f64; 4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    /// Relative log-likelihood change that counts as converged.
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            tol: 1e-6,
            max_iter: 500,
            restarts: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub n: usize,
    pub log_likelihood: f64,
    pub bic: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// (G, BIC) for every candidate when the model came out of selection.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bic_curve: Vec<(usize, f64)>,
    /// Log-likelihood after each EM iteration of the winning restart.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub format_version: u32,
    pub segment: Option<Segment>,
    pub n_components: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Point>,
    pub covariances: Vec<Cov>,
    pub covariance_floor: f64,
    /// Per-dimension scale the floor is measured in.
    pub floor_scale: Point,
    pub fit: Option<FitInfo>,
    /// Plug-in duration model fitted alongside the mixture, when known.
    #[serde(default)]
    pub duration: Option<DurationModel>,
}

fn det(c: &Cov) -> f64 {
    c[0] * c[3] - c[1] * c[2]
}

fn eigenvalues(c: &Cov) -> (f64, f64) {
    let tr = c[0] + c[3];
    let half_gap = (0.25 * (c[0] - c[3]).powi(2) + c[1] * c[2]).max(0.0).sqrt();
    (0.5 * tr - half_gap, 0.5 * tr + half_gap)
}

/// Clamps the eigenvalues of a symmetric 2×2 matrix from below.
fn floor_cov(c: Cov, floor: f64) -> Cov {
    let off = 0.5 * (c[1] + c[2]);
    let c = [c[0], off, off, c[3]];
    let (l1, l2) = eigenvalues(&c);
    if l1 >= floor && l2 >= floor {
        return c;
    }
    if off.abs() < 1e-300 {
        return [c[0].max(floor), 0.0, 0.0, c[3].max(floor)];
    }
    // eigenvector for l2: (off, l2 - a)
    let (vx, vy) = (off, l2 - c[0]);
    let norm = (vx * vx + vy * vy).sqrt();
    let (ux, uy) = (vx / norm, vy / norm);
    let (m1, m2) = (l1.max(floor), l2.max(floor));
    // m2·u uᵀ + m1·(I − u uᵀ)
    let xx = m1 + (m2 - m1) * ux * ux;
    let xy = (m2 - m1) * ux * uy;
    let yy = m1 + (m2 - m1) * uy * uy;
    [xx, xy, xy, yy]
}

/// Precomputed per-component terms for density evaluation.
struct Kernel {
    log_norm: f64,
    mean: Point,
    inv: [f64; 3],
}

impl Kernel {
    fn new(weight: f64, mean: Point, cov: &Cov) -> Result<Self> {
        let d = det(cov);
        if !(d > 0.0 && cov[0] > 0.0 && d.is_finite()) {
            return Err(Error::Numerical(format!(
                "covariance {cov:?} is not positive definite"
            )));
        }
        Ok(Kernel {
            log_norm: weight.ln() - (2.0 * PI).ln() - 0.5 * d.ln(),
            mean,
            inv: [cov[3] / d, -cov[1] / d, cov[0] / d],
        })
    }

    #[inline]
    fn log_density(&self, x: &Point) -> f64 {
        let dx = x[0] - self.mean[0];
        let dy = x[1] - self.mean[1];
        self.log_norm
            - 0.5 * (self.inv[0] * dx * dx + 2.0 * self.inv[1] * dx * dy + self.inv[2] * dy * dy)
    }
}

#[inline]
fn log_sum_exp(vals: &[f64]) -> f64 {
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Number of free parameters of a bivariate full-covariance mixture.
pub fn free_parameters(g: usize) -> usize {
    (g - 1) + 2 * g + 3 * g
}

pub fn bic(log_likelihood: f64, g: usize, n: usize) -> f64 {
    free_parameters(g) as f64 * (n as f64).ln() - 2.0 * log_likelihood
}

impl MixtureModel {
    /// Builds and validates a model with unit floor scale.
    pub fn new(weights: Vec<f64>, means: Vec<Point>, covariances: Vec<Cov>) -> Result<Self> {
        let m = MixtureModel {
            format_version: MIXTURE_FORMAT_VERSION,
            segment: None,
            n_components: weights.len(),
            weights,
            means,
            covariances,
            covariance_floor: COVARIANCE_FLOOR,
            floor_scale: [1.0, 1.0],
            fit: None,
            duration: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn g(&self) -> usize {
        self.weights.len()
    }

    pub fn with_segment(mut self, segment: Segment) -> Self {
        self.segment = Some(segment);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != MIXTURE_FORMAT_VERSION {
            return Err(Error::Version {
                what: "mixture model",
                found: self.format_version,
                expected: MIXTURE_FORMAT_VERSION,
            });
        }
        let g = self.weights.len();
        if g == 0 {
            return Err(Error::invalid("weights", "model has no components"));
        }
        if self.n_components != g || self.means.len() != g || self.covariances.len() != g {
            return Err(Error::invalid(
                "n_components",
                format!(
                    "inconsistent sizes: n_components={}, weights={}, means={}, covariances={}",
                    self.n_components,
                    g,
                    self.means.len(),
                    self.covariances.len()
                ),
            ));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("weights", "weights must be ≥ 0"));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("weights", format!("weights sum to {sum}")));
        }
        let [sx, sy] = self.floor_scale;
        if !(sx > 0.0 && sy > 0.0) {
            return Err(Error::invalid("floor_scale", "scales must be > 0"));
        }
        for (i, c) in self.covariances.iter().enumerate() {
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(
                    format!("covariances[{i}]"),
                    "non-finite entry",
                ));
            }
            if (c[1] - c[2]).abs() > 1e-12 * (c[0].abs() + c[3].abs()) {
                return Err(Error::invalid(format!("covariances[{i}]"), "not symmetric"));
            }
            let z = [
                c[0] / (sx * sx),
                c[1] / (sx * sy),
                c[2] / (sx * sy),
                c[3] / (sy * sy),
            ];
            let (lo, _) = eigenvalues(&z);
            if lo < self.covariance_floor * (1.0 - 1e-6) {
                return Err(Error::invalid(
                    format!("covariances[{i}]"),
                    format!(
                        "standardized eigenvalue {lo:e} below floor {:e}",
                        self.covariance_floor
                    ),
                ));
            }
        }
        for (i, m) in self.means.iter().enumerate() {
            if !(m[0].is_finite() && m[1].is_finite()) {
                return Err(Error::invalid(format!("means[{i}]"), "non-finite mean"));
            }
        }
        Ok(())
    }

    fn kernels(&self) -> Result<Vec<Kernel>> {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.covariances)
            .map(|((&w, &m), c)| Kernel::new(w, m, c))
            .collect()
    }

    /// Σᵢ log Σ_g π_g φ(xᵢ | μ_g, Σ_g).
    pub fn log_likelihood(&self, data: &[Point]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::invalid("data", "empty data"));
        }
        let kernels = self.kernels()?;
        let mut buf = vec![0.0; kernels.len()];
        let mut ll = 0.0;
        for x in data {
            for (b, k) in buf.iter_mut().zip(&kernels) {
                *b = k.log_density(x);
            }
            ll += log_sum_exp(&buf);
        }
        Ok(ll)
    }

    pub fn bic(&self, data: &[Point]) -> Result<f64> {
        Ok(bic(self.log_likelihood(data)?, self.g(), data.len()))
    }

    /// Standard deviation of the start-time marginal of component `g`.
    pub fn start_std(&self, g: usize) -> f64 {
        self.covariances[g][0].sqrt()
    }

    /// Draws `n` points with their component labels. Energies are clipped
    /// at zero and starts wrapped onto the day.
    pub fn sample_labelled(&self, n: usize, seed: u64) -> Result<Vec<(usize, Point)>> {
        self.validate()?;
        let chol: Vec<[f64; 3]> = self
            .covariances
            .iter()
            .map(|c| {
                let l11 = c[0].sqrt();
                let l21 = c[1] / l11;
                let l22 = (c[3] - l21 * l21).max(0.0).sqrt();
                [l11, l21, l22]
            })
            .collect();
        let mut cum = Vec::with_capacity(self.g());
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w;
            cum.push(acc);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random::<f64>() * acc;
            let g = cum.iter().position(|&c| u < c).unwrap_or(self.g() - 1);
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let [l11, l21, l22] = chol[g];
            let m = self.means[g];
            let start = m[0] + l11 * z1;
            let energy = m[1] + l21 * z1 + l22 * z2;
            out.push((g, [wrap_minute(start), energy.max(0.0)]));
        }
        Ok(out)
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Point>> {
        Ok(self
            .sample_labelled(n, seed)?
            .into_iter()
            .map(|(_, p)| p)
            .collect())
    }

    /// Drops the listed components and renormalizes the remaining weights.
    pub fn remove_components(&self, indices: &[usize]) -> Result<MixtureModel> {
        let g = self.g();
        if let Some(bad) = indices.iter().find(|&&i| i >= g) {
            return Err(Error::invalid(
                "component_indices",
                format!("index {bad} out of range for {g} components"),
            ));
        }
        let keep: Vec<usize> = (0..g).filter(|i| !indices.contains(i)).collect();
        if keep.is_empty() {
            return Err(Error::invalid(
                "component_indices",
                "cannot remove every component",
            ));
        }
        if keep.len() == g {
            return Ok(self.clone());
        }
        let total: f64 = keep.iter().map(|&i| self.weights[i]).sum();
        if !(total > 0.0) {
            return Err(Error::invalid(
                "component_indices",
                "remaining components carry zero weight",
            ));
        }
        let m = MixtureModel {
            n_components: keep.len(),
            weights: keep.iter().map(|&i| self.weights[i] / total).collect(),
            means: keep.iter().map(|&i| self.means[i]).collect(),
            covariances: keep.iter().map(|&i| self.covariances[i]).collect(),
            fit: None,
            ..self.clone()
        };
        m.validate()?;
        Ok(m)
    }

    /// Components whose start mean falls in `window` with a start standard
    /// deviation no larger than `max_start_std` minutes.
    pub fn flag_timer_components(&self, window: &TimeWindow, max_start_std: f64) -> Vec<usize> {
        (0..self.g())
            .filter(|&g| window.contains(self.means[g][0]) && self.start_std(g) <= max_start_std)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: MixtureModel = serde_json::from_str(text).map_err(|source| Error::Json {
            path: "<mixture model>".into(),
            source,
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json { source, .. } => Error::Json {
                path: path.into(),
                source,
            },
            other => other,
        })
    }
}

struct Standardizer {
    center: Point,
    scale: Point,
}

impl Standardizer {
    fn fit(data: &[Point]) -> (Self, bool) {
        let n = data.len() as f64;
        let mut center = [0.0; 2];
        for x in data {
            center[0] += x[0] / n;
            center[1] += x[1] / n;
        }
        let mut var = [0.0; 2];
        for x in data {
            var[0] += (x[0] - center[0]).powi(2) / n;
            var[1] += (x[1] - center[1]).powi(2) / n;
        }
        let mut degenerate = false;
        let scale = var.map(|v| {
            let s = v.sqrt();
            if s > 1e-12 {
                s
            } else {
                degenerate = true;
                1.0
            }
        });
        (Standardizer { center, scale }, degenerate)
    }

    fn apply(&self, x: &Point) -> Point {
        [
            (x[0] - self.center[0]) / self.scale[0],
            (x[1] - self.center[1]) / self.scale[1],
        ]
    }
}

struct EmRun {
    weights: Vec<f64>,
    means: Vec<Point>,
    covs: Vec<Cov>,
    ll: f64,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn kmeans_init(z: &[Point], g: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<Point>, Vec<Cov>) {
    let n = z.len();
    let d2 = |a: &Point, b: &Point| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);

    // k-means++ seeding
    let mut centers = vec![z[rng.random_range(0..n)]];
    let mut dist: Vec<f64> = z.iter().map(|x| d2(x, &centers[0])).collect();
    while centers.len() < g {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in dist.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = z[next];
        for (d, x) in dist.iter_mut().zip(z) {
            *d = d.min(d2(x, &c));
        }
        centers.push(c);
    }

    let mut labels = vec![0usize; n];
    for _ in 0..20 {
        let mut changed = false;
        for (l, x) in labels.iter_mut().zip(z) {
            let best = (0..g)
                .min_by(|&a, &b| d2(x, &centers[a]).total_cmp(&d2(x, &centers[b])))
                .unwrap();
            if *l != best {
                *l = best;
                changed = true;
            }
        }
        let mut sums = vec![[0.0; 3]; g];
        for (l, x) in labels.iter().zip(z) {
            sums[*l][0] += x[0];
            sums[*l][1] += x[1];
            sums[*l][2] += 1.0;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s[2] > 0.0 {
                *c = [s[0] / s[2], s[1] / s[2]];
            }
        }
        if !changed {
            break;
        }
    }

    let mut counts = vec![0.0; g];
    let mut scatter = vec![[0.0; 4]; g];
    for (l, x) in labels.iter().zip(z) {
        let c = centers[*l];
        let (dx, dy) = (x[0] - c[0], x[1] - c[1]);
        counts[*l] += 1.0;
        scatter[*l][0] += dx * dx;
        scatter[*l][1] += dx * dy;
        scatter[*l][3] += dy * dy;
    }
    let mut weights = Vec::with_capacity(g);
    let mut covs = Vec::with_capacity(g);
    for k in 0..g {
        let cnt = counts[k];
        let cov = if cnt >= 2.0 {
            let s = scatter[k];
            [s[0] / cnt, s[1] / cnt, s[1] / cnt, s[3] / cnt]
        } else {
            [1.0, 0.0, 0.0, 1.0]
        };
        weights.push(cnt.max(1.0));
        covs.push(floor_cov(cov, COVARIANCE_FLOOR));
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (weights, centers, covs)
}

fn run_em(z: &[Point], g: usize, opts: &EmOptions, seed: u64) -> Result<EmRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut weights, mut means, mut covs) = kmeans_init(z, g, &mut rng);
    let n = z.len() as f64;
    let mut trace = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut lp = vec![0.0; g];

    while iterations < opts.max_iter {
        let kernels: Vec<Kernel> = (0..g)
            .map(|k| Kernel::new(weights[k].max(1e-300), means[k], &covs[k]))
            .collect::<Result<_>>()?;
        // fused E-step and sufficient statistics: [N, Σx, Σy, Σxx, Σxy, Σyy]
        let mut stats = vec![[0.0f64; 6]; g];
        let mut ll = 0.0;
        for x in z {
            let mut m = f64::NEG_INFINITY;
            for (v, k) in lp.iter_mut().zip(&kernels) {
                *v = k.log_density(x);
                m = m.max(*v);
            }
            let mut s = 0.0;
            for v in lp.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            ll += m + s.ln();
            let inv = 1.0 / s;
            for (st, v) in stats.iter_mut().zip(&lp) {
                let r = v * inv;
                st[0] += r;
                st[1] += r * x[0];
                st[2] += r * x[1];
                st[3] += r * x[0] * x[0];
                st[4] += r * x[0] * x[1];
                st[5] += r * x[1] * x[1];
            }
        }
        if !ll.is_finite() {
            return Err(Error::Numerical("log-likelihood became non-finite".into()));
        }
        trace.push(ll);
        iterations += 1;

        for (k, st) in stats.iter().enumerate() {
            let nk = st[0];
            weights[k] = nk / n;
            if nk > 1e-10 {
                let mu = [st[1] / nk, st[2] / nk];
                let cxx = st[3] / nk - mu[0] * mu[0];
                let cxy = st[4] / nk - mu[0] * mu[1];
                let cyy = st[5] / nk - mu[1] * mu[1];
                means[k] = mu;
                covs[k] = floor_cov([cxx, cxy, cxy, cyy], COVARIANCE_FLOOR);
            }
        }
        let wsum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= wsum);

        if prev.is_finite() && (ll - prev).abs() <= opts.tol * prev.abs().max(1.0) {
            converged = true;
            break;
        }
        prev = ll;
    }

    // log-likelihood of the parameters actually returned
    let kernels: Vec<Kernel> = (0..g)
        .map(|k| Kernel::new(weights[k].max(1e-300), means[k], &covs[k]))
        .collect::<Result<_>>()?;
    let mut buf = vec![0.0; g];
    let mut ll = 0.0;
    for x in z {
        for (b, k) in buf.iter_mut().zip(&kernels) {
            *b = k.log_density(x);
        }
        ll += log_sum_exp(&buf);
    }
    trace.push(ll);
    Ok(EmRun {
        weights,
        means,
        covs,
        ll,
        trace,
        iterations,
        converged,
    })
}

/// Fits a `g`-component mixture by EM, keeping the best of
/// `opts.restarts` k-means++-seeded runs.
pub fn fit_em(data: &[Point], g: usize, opts: &EmOptions, seed: u64) -> Result<MixtureModel> {
    if g == 0 {
        return Err(Error::invalid("G", "component count must be ≥ 1"));
    }
    if data.len() < g {
        return Err(Error::invalid(
            "data",
            format!("{} points cannot support {g} components", data.len()),
        ));
    }
    if data.iter().any(|x| !(x[0].is_finite() && x[1].is_finite())) {
        return Err(Error::invalid("data", "non-finite point"));
    }
    let (std, degenerate) = Standardizer::fit(data);
    let mut warnings = Vec::new();
    let all_identical = data.iter().all(|x| x == &data[0]);
    if all_identical && g > 1 {
        let msg = format!(
            "degenerate data: all {} points identical; covariances floored",
            data.len()
        );
        warn!("{msg}");
        warnings.push(msg);
    } else if degenerate {
        let msg = "degenerate data: a dimension has zero variance".to_string();
        warn!("{msg}");
        warnings.push(msg);
    }
    let z: Vec<Point> = data.iter().map(|x| std.apply(x)).collect();

    let mut best: Option<EmRun> = None;
    for r in 0..opts.restarts.max(1) {
        let run = run_em(&z, g, opts, derive_seed(seed, r as u64))?;
        if best.as_ref().is_none_or(|b| run.ll > b.ll) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    if !best.converged {
        warnings.push(format!(
            "EM did not converge within {} iterations",
            opts.max_iter
        ));
    }

    let [sx, sy] = std.scale;
    let [cx, cy] = std.center;
    let log_jac = data.len() as f64 * (sx * sy).ln();
    let means = best
        .means
        .iter()
        .map(|m| [cx + sx * m[0], cy + sy * m[1]])
        .collect();
    let covariances = best
        .covs
        .iter()
        .map(|c| {
            let xy = c[1] * sx * sy;
            [c[0] * sx * sx, xy, xy, c[3] * sy * sy]
        })
        .collect();
    let ll = best.ll - log_jac;
    let model = MixtureModel {
        format_version: MIXTURE_FORMAT_VERSION,
        segment: None,
        n_components: g,
        weights: best.weights,
        means,
        covariances,
        covariance_floor: COVARIANCE_FLOOR,
        floor_scale: std.scale,
        fit: Some(FitInfo {
            n: data.len(),
            log_likelihood: ll,
            bic: bic(ll, g, data.len()),
            iterations: best.iterations,
            converged: best.converged,
            warnings,
            bic_curve: Vec::new(),
            trace: best.trace.iter().map(|v| v - log_jac).collect(),
        }),
        duration: None,
    };
    model.validate()?;
    Ok(model)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Selection {
    pub chosen: usize,
    pub bic: Vec<(usize, f64)>,
    /// Knee of the BIC curve (largest distance below the chord), for review.
    pub elbow: Option<usize>,
    pub skipped: Vec<(usize, String)>,
    #[serde(skip)]
    pub models: Vec<MixtureModel>,
}

impl Selection {
    pub fn chosen_model(&self) -> &MixtureModel {
        self.models
            .iter()
            .find(|m| m.g() == self.chosen)
            .expect("chosen model is present")
    }

    /// The chosen model with the BIC curve recorded in its fit info.
    pub fn into_chosen(self) -> MixtureModel {
        let mut m = self.chosen_model().clone();
        if let Some(f) = m.fit.as_mut() {
            f.bic_curve = self.bic;
        }
        m
    }
}

/// Fits every G in `g_range` and picks the minimum-BIC model (smaller G wins ties).
pub fn select_components(
    data: &[Point],
    g_range: &[usize],
    opts: &EmOptions,
    seed: u64,
) -> Result<Selection> {
    if g_range.is_empty() {
        return Err(Error::invalid("G_range", "empty range"));
    }
    if g_range.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("G_range", "must be strictly ascending"));
    }
    let mut models = Vec::new();
    let mut bics = Vec::new();
    let mut skipped = Vec::new();
    let mut last_err = None;
    for &g in g_range {
        match fit_em(data, g, opts, derive_seed(seed, 1000 + g as u64)) {
            Ok(m) => {
                bics.push((g, m.fit.as_ref().unwrap().bic));
                models.push(m);
            }
            Err(e) => {
                warn!("skipping G={g}: {e}");
                skipped.push((g, e.to_string()));
                last_err = Some(e);
            }
        }
    }
    if models.is_empty() {
        return Err(last_err.unwrap());
    }
    let mut chosen = bics[0];
    for &(g, b) in &bics[1..] {
        if b < chosen.1 {
            chosen = (g, b);
        }
    }
    Ok(Selection {
        chosen: chosen.0,
        elbow: elbow(&bics),
        bic: bics,
        skipped,
        models,
    })
}

fn elbow(curve: &[(usize, f64)]) -> Option<usize> {
    if curve.len() < 3 {
        return None;
    }
    let (x0, y0) = (curve[0].0 as f64, curve[0].1);
    let (x1, y1) = (curve[curve.len() - 1].0 as f64, curve[curve.len() - 1].1);
    let span_y = (y0 - y1).abs().max(f64::MIN_POSITIVE);
    let span_x = (x1 - x0).max(1.0);
    // normalized distance below the chord
    curve
        .iter()
        .map(|&(g, b)| {
            let t = (g as f64 - x0) / span_x;
            let chord = y0 + t * (y1 - y0);
            (g, (chord - b) / span_y)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .filter(|(_, d)| *d > 0.0)
        .map(|(g, _)| g)
}

/// −log(2π), the standard bivariate normal log density at its mode.
pub fn std_normal_log_mode() -> f64 {
    -(LN_2 + PI.ln())
}
