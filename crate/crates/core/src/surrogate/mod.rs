//! Learned control mapping: normalized uncontrolled profile → controlled
//! profile, fitted on LP solutions and applied in closed form.

pub mod forest;
pub mod linear;
pub mod mlp;
pub mod training;

use std::path::Path;
use std::time::Instant;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::LoadProfile;
use crate::seeds::derive_seed;

pub use forest::{Forest, ForestParams};
pub use linear::Affine;
pub use mlp::{Activation, Mlp, MlpParams};
pub use training::{
    build_training_set, split_labels, ModelSource, SessionPool, SessionSource, Split, TrainingSet,
    TRAINING_FORMAT_VERSION,
};

pub const SURROGATE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    Linear,
    Ridge,
    RandomForest,
    Mlp,
}

impl SurrogateKind {
    pub const ALL: [SurrogateKind; 4] = [
        SurrogateKind::Linear,
        SurrogateKind::Ridge,
        SurrogateKind::RandomForest,
        SurrogateKind::Mlp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SurrogateKind::Linear => "linear",
            SurrogateKind::Ridge => "ridge",
            SurrogateKind::RandomForest => "random_forest",
            SurrogateKind::Mlp => "mlp",
        }
    }
}

impl std::fmt::Display for SurrogateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SurrogateKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SurrogateKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid("kind", format!("unknown surrogate kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hyper {
    Linear,
    Ridge { alpha: f64 },
    RandomForest(ForestParams),
    Mlp(MlpParams),
}

impl Hyper {
    pub fn kind(&self) -> SurrogateKind {
        match self {
            Hyper::Linear => SurrogateKind::Linear,
            Hyper::Ridge { .. } => SurrogateKind::Ridge,
            Hyper::RandomForest(_) => SurrogateKind::RandomForest,
            Hyper::Mlp(_) => SurrogateKind::Mlp,
        }
    }
}

/// Hyperparameter grids per kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub ridge_alpha: Vec<f64>,
    pub forest: Vec<ForestParams>,
    pub mlp: Vec<MlpParams>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        let forest = [50, 100, 200]
            .into_iter()
            .flat_map(|n_trees| {
                [Some(4), Some(8), Some(16), None]
                    .into_iter()
                    .map(move |max_depth| ForestParams {
                        n_trees,
                        max_depth,
                        ..ForestParams::default()
                    })
            })
            .collect();
        let mlp = [vec![64], vec![128], vec![64, 64]]
            .into_iter()
            .flat_map(|hidden| {
                [Activation::Relu, Activation::Tanh]
                    .into_iter()
                    .map(move |activation| MlpParams {
                        hidden: hidden.clone(),
                        activation,
                        ..MlpParams::default()
                    })
            })
            .collect();
        HyperGrid {
            ridge_alpha: vec![1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0],
            forest,
            mlp,
        }
    }
}

impl HyperGrid {
    pub fn for_kind(&self, kind: SurrogateKind) -> Vec<Hyper> {
        match kind {
            SurrogateKind::Linear => vec![Hyper::Linear],
            SurrogateKind::Ridge => self
                .ridge_alpha
                .iter()
                .map(|&alpha| Hyper::Ridge { alpha })
                .collect(),
            SurrogateKind::RandomForest => self
                .forest
                .iter()
                .copied()
                .map(Hyper::RandomForest)
                .collect(),
            SurrogateKind::Mlp => self.mlp.iter().cloned().map(Hyper::Mlp).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Regressor {
    Affine(Affine),
    Forest(Forest),
    Mlp(Mlp),
}

impl Regressor {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Regressor::Affine(m) => m.predict(x),
            Regressor::Forest(m) => m.predict(x),
            Regressor::Mlp(m) => m.predict(x),
        }
    }

    fn dims(&self) -> (usize, usize) {
        match self {
            Regressor::Affine(m) => (m.inputs, m.outputs),
            Regressor::Forest(m) => (m.inputs, m.outputs),
            Regressor::Mlp(m) => (m.layers[0].inputs, m.layers.last().unwrap().outputs),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Regressor::Affine(m) => m.validate(),
            Regressor::Forest(m) => m.validate(),
            Regressor::Mlp(m) => m.validate(),
        }
    }
}

/// Trains one regressor; returns it with any numerical warning.
pub fn train(
    hyper: &Hyper,
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    seed: u64,
) -> Result<(Regressor, Option<String>)> {
    Ok(match hyper {
        Hyper::Linear => {
            let (m, w) = linear::fit_affine(x, y, 0.0)?;
            (Regressor::Affine(m), w)
        }
        Hyper::Ridge { alpha } => {
            let (m, w) = linear::fit_affine(x, y, *alpha)?;
            (Regressor::Affine(m), w)
        }
        Hyper::RandomForest(p) => (Regressor::Forest(forest::fit_forest(x, y, p, seed)?), None),
        Hyper::Mlp(p) => (Regressor::Mlp(mlp::fit_mlp(x, y, p, seed)?), None),
    })
}

/// Root of the mean squared difference over every element of every row.
pub fn rmse(y: &[Vec<f64>], y_hat: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, b) in y.iter().zip(y_hat) {
        for (p, q) in a.iter().zip(b) {
            sum += (p - q).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        return 0.0;
    }
    (sum / count as f64).sqrt()
}

fn predict_clipped(reg: &Regressor, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.par_iter()
        .map(|r| reg.predict(r).into_iter().map(|v| v.max(0.0)).collect())
        .collect()
}

/// Relative energy change |ΣŶ − ΣX| / ΣX per row.
pub fn energy_drift(x: &[Vec<f64>], y_hat: &[Vec<f64>]) -> Vec<f64> {
    x.iter()
        .zip(y_hat)
        .map(|(a, b)| {
            let ea: f64 = a.iter().sum();
            let eb: f64 = b.iter().sum();
            (eb - ea).abs() / ea
        })
        .collect()
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvEntry {
    pub hyper: Hyper,
    pub mean_rmse: f64,
    pub fold_rmse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub cv_rmse: f64,
    pub dev_rmse: Option<f64>,
    pub test_rmse: Option<f64>,
    /// Median relative energy drift on the test split.
    pub test_energy_drift_median: Option<f64>,
    pub cv: Vec<CvEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub rate_name: String,
    pub rate_sha256: String,
    pub training_seed: u64,
    pub fit_seed: u64,
    pub n_instances: usize,
    pub n_vehicles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub format_version: u32,
    pub kind: SurrogateKind,
    pub hyper: Hyper,
    pub dt: u32,
    pub inputs: usize,
    pub outputs: usize,
    pub regressor: Regressor,
    pub scores: Scores,
    pub provenance: Provenance,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Contiguous folds over a seeded shuffle of `idx`.
fn cv_folds(idx: &[usize], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order = idx.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = order.len();
    (0..k)
        .map(|f| order[f * n / k..(f + 1) * n / k].to_vec())
        .collect()
}

/// Grid search by k-fold CV on the train split, refit on the whole train
/// split, then score on dev and test.
pub fn fit(
    kind: SurrogateKind,
    ts: &TrainingSet,
    cv_folds_k: usize,
    grid: &[Hyper],
    seed: u64,
) -> Result<SurrogateModel> {
    ts.validate()?;
    if grid.is_empty() {
        return Err(Error::invalid("hyper_grid", "grid is empty"));
    }
    if let Some(h) = grid.iter().find(|h| h.kind() != kind) {
        return Err(Error::invalid(
            "hyper_grid",
            format!("{} entry in a {kind} grid", h.kind()),
        ));
    }
    let train_idx = ts.indices(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::invalid("training_set", "train split is empty"));
    }
    let k = cv_folds_k.min(train_idx.len());
    let mut warnings = Vec::new();
    let cv: Vec<CvEntry> = if grid.len() == 1 && k < 2 {
        vec![CvEntry {
            hyper: grid[0].clone(),
            mean_rmse: f64::NAN,
            fold_rmse: Vec::new(),
        }]
    } else {
        if k < 2 {
            return Err(Error::invalid(
                "cv_folds",
                "need at least two training pairs for CV",
            ));
        }
        let folds = cv_folds(&train_idx, k, derive_seed(seed, 0xCF));
        grid.iter()
            .map(|h| {
                let fold_rmse: Vec<f64> = (0..k)
                    .into_par_iter()
                    .map(|f| {
                        let fit_idx: Vec<usize> = folds
                            .iter()
                            .enumerate()
                            .filter(|&(g, _)| g != f)
                            .flat_map(|(_, v)| v.iter().copied())
                            .collect();
                        let (x, y) = ts.rows(&fit_idx);
                        let (reg, _) = train(h, &x, &y, derive_seed(seed, f as u64))?;
                        let (vx, vy) = ts.rows(&folds[f]);
                        Ok(rmse(&vy, &predict_clipped(&reg, &vx)))
                    })
                    .collect::<Result<_>>()?;
                Ok(CvEntry {
                    hyper: h.clone(),
                    mean_rmse: fold_rmse.iter().sum::<f64>() / k as f64,
                    fold_rmse,
                })
            })
            .collect::<Result<_>>()?
    };
    let best = cv
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.mean_rmse.total_cmp(&b.1.mean_rmse).then(a.0.cmp(&b.0)))
        .map(|(_, e)| e.clone())
        .expect("grid is non-empty");

    let (x, y) = ts.rows(&train_idx);
    let (regressor, warn_msg) = train(&best.hyper, &x, &y, derive_seed(seed, 0xF17))?;
    if let Some(w) = warn_msg {
        warn!("{w}");
        warnings.push(w);
    }
    let score = |split| {
        let idx = ts.indices(split);
        if idx.is_empty() {
            return (None, None);
        }
        let (sx, sy) = ts.rows(&idx);
        let pred = predict_clipped(&regressor, &sx);
        (Some(rmse(&sy, &pred)), median(&energy_drift(&sx, &pred)))
    };
    let (dev_rmse, _) = score(Split::Dev);
    let (test_rmse, drift) = score(Split::Test);
    let (inputs, outputs) = regressor.dims();
    let model = SurrogateModel {
        format_version: SURROGATE_FORMAT_VERSION,
        kind,
        hyper: best.hyper.clone(),
        dt: ts.dt,
        inputs,
        outputs,
        regressor,
        scores: Scores {
            cv_rmse: best.mean_rmse,
            dev_rmse,
            test_rmse,
            test_energy_drift_median: drift,
            cv,
        },
        provenance: Provenance {
            rate_name: ts.rate_name.clone(),
            rate_sha256: ts.rate_sha256.clone(),
            training_seed: ts.seed,
            fit_seed: seed,
            n_instances: ts.len(),
            n_vehicles: ts.n_vehicles,
        },
        warnings,
    };
    model.validate()?;
    Ok(model)
}

impl SurrogateModel {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != SURROGATE_FORMAT_VERSION {
            return Err(Error::Version {
                what: "surrogate model",
                found: self.format_version,
                expected: SURROGATE_FORMAT_VERSION,
            });
        }
        let t = crate::clock::steps_per_day(self.dt)?;
        if self.inputs != t || self.outputs != t || self.regressor.dims() != (t, t) {
            return Err(Error::invalid(
                "inputs",
                format!(
                    "surrogate dimensions must both equal {t} for dt={}",
                    self.dt
                ),
            ));
        }
        if self.hyper.kind() != self.kind {
            return Err(Error::invalid("hyper", "hyperparameters do not match kind"));
        }
        self.regressor.validate()
    }

    /// Normalize by the peak, map, rescale and clip at zero.
    pub fn apply(&self, profile: &LoadProfile) -> Result<LoadProfile> {
        if profile.dt != self.dt {
            return Err(Error::DtMismatch {
                expected: self.dt,
                actual: profile.dt,
            });
        }
        profile.validate()?;
        if profile.max() == 0.0 {
            return LoadProfile::zeros(self.dt);
        }
        let (unit, scale) = profile.normalize()?;
        let values = self
            .regressor
            .predict(&unit.values)
            .into_iter()
            .map(|v| (v * scale).max(0.0))
            .collect();
        Ok(LoadProfile {
            dt: self.dt,
            values,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: SurrogateModel = serde_json::from_str(text).map_err(|source| Error::Json {
            path: "<surrogate>".into(),
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
        let m: SurrogateModel = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.into(),
            source,
        })?;
        m.validate()?;
        Ok(m)
    }
}

/// Free-function form of [`SurrogateModel::apply`].
pub fn apply(model: &SurrogateModel, profile: &LoadProfile) -> Result<LoadProfile> {
    model.apply(profile)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub kind: SurrogateKind,
    pub hyper: Hyper,
    pub cv_rmse: f64,
    pub dev_rmse: Option<f64>,
    pub test_rmse: Option<f64>,
    pub test_energy_drift_median: Option<f64>,
    pub fit_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionReport {
    pub note: String,
    pub rate_name: String,
    pub rows: Vec<ReportRow>,
    /// Chosen by mean CV RMSE.
    pub selected: SurrogateKind,
    pub best_on_test: Option<SurrogateKind>,
    /// The test split would have picked a different kind.
    pub cv_test_disagree: bool,
    #[serde(skip)]
    pub models: Vec<SurrogateModel>,
}

impl SelectionReport {
    pub fn selected_model(&self) -> &SurrogateModel {
        self.models
            .iter()
            .find(|m| m.kind == self.selected)
            .expect("selected model is present")
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("# {}\n# rate: {}\n", self.note, self.rate_name);
        s.push_str("kind            cv_rmse   dev_rmse  test_rmse drift_med fit_s\n");
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.5}"));
        for r in &self.rows {
            s.push_str(&format!(
                "{:<15} {:<9.5} {:<9} {:<9} {:<9} {:.2}{}\n",
                r.kind.as_str(),
                r.cv_rmse,
                opt(r.dev_rmse),
                opt(r.test_rmse),
                opt(r.test_energy_drift_median),
                r.fit_seconds,
                if r.kind == self.selected {
                    "  <- selected (CV)"
                } else {
                    ""
                }
            ));
        }
        if self.cv_test_disagree {
            s.push_str(&format!(
                "# note: test split favours {} while CV selects {}\n",
                self.best_on_test.map_or("-", |k| k.as_str()),
                self.selected
            ));
        }
        s
    }
}

/// Fits each kind with its grid and tabulates CV and test RMSE.
pub fn model_selection_report(
    ts: &TrainingSet,
    kinds: &[SurrogateKind],
    grid: &HyperGrid,
    cv_folds_k: usize,
    seed: u64,
) -> Result<SelectionReport> {
    if kinds.is_empty() {
        return Err(Error::invalid("kinds", "no surrogate kinds requested"));
    }
    let mut rows = Vec::new();
    let mut models = Vec::new();
    for &kind in kinds {
        let started = Instant::now();
        let m = fit(kind, ts, cv_folds_k, &grid.for_kind(kind), seed)?;
        rows.push(ReportRow {
            kind,
            hyper: m.hyper.clone(),
            cv_rmse: m.scores.cv_rmse,
            dev_rmse: m.scores.dev_rmse,
            test_rmse: m.scores.test_rmse,
            test_energy_drift_median: m.scores.test_energy_drift_median,
            fit_seconds: started.elapsed().as_secs_f64(),
        });
        models.push(m);
    }
    let selected = rows
        .iter()
        .min_by(|a, b| a.cv_rmse.total_cmp(&b.cv_rmse))
        .map(|r| r.kind)
        .unwrap();
    let best_on_test = rows
        .iter()
        .filter_map(|r| r.test_rmse.map(|t| (r.kind, t)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k);
    Ok(SelectionReport {
        note: "RMSE is the joint mean over all instances and time steps, in fraction-of-peak units"
            .into(),
        rate_name: ts.rate_name.clone(),
        cv_test_disagree: best_on_test.is_some_and(|k| k != selected),
        rows,
        selected,
        best_on_test,
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn synthetic(n: usize, t: usize, seed: u64, identity: bool) -> TrainingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let c = rng.random_range(0..t) as f64;
            let w = rng.random_range(2.0..6.0);
            let mut row: Vec<f64> = (0..t)
                .map(|i| (-((i as f64 - c) / w).powi(2)).exp())
                .collect();
            let m = row.iter().copied().fold(0.0, f64::max);
            row.iter_mut().for_each(|v| *v /= m);
            let target = if identity {
                row.clone()
            } else {
                let mean = row.iter().sum::<f64>() / t as f64;
                row.iter().map(|v| 0.5 * v + 0.5 * mean).collect()
            };
            x.push(row);
            y.push(target);
        }
        TrainingSet {
            format_version: training::TRAINING_FORMAT_VERSION,
            rate_name: "synthetic".into(),
            rate_sha256: String::new(),
            dt: 1440 / t as u32,
            n_vehicles: 1,
            seed,
            scales: vec![1.0; n],
            split: training::split_labels(n, seed),
            lp_seconds: vec![0.0; n],
            clip: Default::default(),
            redrawn: 0,
            x,
            y,
        }
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[vec![1.0, 2.0]], &[vec![1.0, 2.0]]), 0.0);
        assert_eq!(rmse(&[vec![0.0, 0.0]], &[vec![1.0, 1.0]]), 1.0);
        assert!((rmse(&[vec![0.0, 2.0]], &[vec![0.0, 0.0]]) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ridge_zero_equals_linear() {
        let ts = synthetic(120, 24, 1, false);
        let lin = fit(SurrogateKind::Linear, &ts, 5, &[Hyper::Linear], 1).unwrap();
        let rid = fit(
            SurrogateKind::Ridge,
            &ts,
            5,
            &[Hyper::Ridge { alpha: 0.0 }],
            1,
        )
        .unwrap();
        let (Regressor::Affine(a), Regressor::Affine(b)) = (&lin.regressor, &rid.regressor) else {
            panic!("affine expected");
        };
        for (p, q) in a.a.iter().chain(&a.b).zip(b.a.iter().chain(&b.b)) {
            assert!((p - q).abs() <= 1e-8);
        }
    }

    #[test]
    fn linear_learns_identity() {
        let ts = synthetic(200, 24, 2, true);
        let m = fit(SurrogateKind::Linear, &ts, 5, &[Hyper::Linear], 2).unwrap();
        assert!(m.scores.test_rmse.unwrap() <= 1e-8);
        let p = LoadProfile::new(60, ts.x[0].iter().map(|v| v * 7.0).collect()).unwrap();
        let out = m.apply(&p).unwrap();
        for (a, b) in out.values.iter().zip(&p.values) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn apply_contract() {
        let ts = synthetic(100, 24, 3, false);
        let m = fit(
            SurrogateKind::Ridge,
            &ts,
            5,
            &HyperGrid::default().for_kind(SurrogateKind::Ridge),
            3,
        )
        .unwrap();
        let zero = LoadProfile::zeros(60).unwrap();
        assert_eq!(m.apply(&zero).unwrap(), zero);
        assert!(matches!(
            m.apply(&LoadProfile::zeros(15).unwrap()),
            Err(Error::DtMismatch {
                expected: 60,
                actual: 15
            })
        ));
        let x = LoadProfile::new(60, ts.x[5].iter().map(|v| v * 40.0).collect()).unwrap();
        let base = m.apply(&x).unwrap();
        for c in [0.5, 2.0, 10.0] {
            let scaled = m.apply(&x.scaled(c)).unwrap();
            for (a, b) in scaled.values.iter().zip(&base.values) {
                assert!((a - c * b).abs() <= 1e-9 * (c * b).abs().max(1.0));
            }
        }
        assert!(base.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn grid_kind_mismatch_rejected() {
        let ts = synthetic(30, 24, 4, false);
        assert!(fit(SurrogateKind::Ridge, &ts, 5, &[Hyper::Linear], 1).is_err());
        assert!(fit(SurrogateKind::Ridge, &ts, 5, &[], 1).is_err());
    }

    #[test]
    fn report_rows_and_selection() {
        let ts = synthetic(80, 24, 5, false);
        let grid = HyperGrid {
            ridge_alpha: vec![1e-3, 1.0],
            forest: vec![ForestParams {
                n_trees: 10,
                max_depth: Some(6),
                ..Default::default()
            }],
            mlp: vec![MlpParams {
                hidden: vec![16],
                epochs: 20,
                ..Default::default()
            }],
        };
        let one = model_selection_report(&ts, &[SurrogateKind::Ridge], &grid, 5, 1).unwrap();
        assert_eq!(one.rows.len(), 1);
        assert_eq!(one.selected, SurrogateKind::Ridge);
        let all = model_selection_report(&ts, &SurrogateKind::ALL, &grid, 5, 1).unwrap();
        assert_eq!(all.rows.len(), 4);
        let best_cv = all
            .rows
            .iter()
            .min_by(|a, b| a.cv_rmse.total_cmp(&b.cv_rmse))
            .unwrap();
        assert_eq!(all.selected, best_cv.kind);
        assert!(all.to_table().contains("selected"));
    }

    #[test]
    fn model_file_round_trip() {
        let ts = synthetic(60, 24, 6, false);
        let grid = HyperGrid {
            forest: vec![ForestParams {
                n_trees: 3,
                max_depth: Some(4),
                ..Default::default()
            }],
            ..HyperGrid::default()
        };
        for kind in [SurrogateKind::Ridge, SurrogateKind::RandomForest] {
            let m = fit(kind, &ts, 3, &grid.for_kind(kind), 1).unwrap();
            let back = SurrogateModel::from_json(&m.to_json()).unwrap();
            assert_eq!(
                back.regressor.predict(&ts.x[0]),
                m.regressor.predict(&ts.x[0])
            );
        }
    }

    #[test]
    fn cv_folds_partition() {
        let idx: Vec<usize> = (0..23).collect();
        let folds = cv_folds(&idx, 5, 1);
        let mut all: Vec<usize> = folds.concat();
        all.sort();
        assert_eq!(all, idx);
        assert!(folds.iter().all(|f| f.len() == 4 || f.len() == 5));
    }
}
