//! Training pairs (uncontrolled X, optimal Y) built by solving many random
//! parking-lot instances.

use std::path::Path;
use std::time::Instant;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chargeopt::{optimize, prepare_instance, uncontrolled, ClipReport};
use crate::duration::DurationModel;
use crate::error::{Error, Result};
use crate::gmm::MixtureModel;
use crate::rates::RateSchedule;
use crate::seeds::derive_seed;
use crate::session::{Segment, Session};

pub const TRAINING_FORMAT_VERSION: u32 = 1;

/// Anything that can produce a lot of sessions on demand.
pub trait SessionSource: Sync {
    fn sample(&self, n: usize, seed: u64) -> Result<Vec<Session>>;
    fn describe(&self) -> String;
}

/// Draws with replacement from a fixed pool of observed sessions.
#[derive(Debug, Clone)]
pub struct SessionPool {
    sessions: Vec<Session>,
}

impl SessionPool {
    pub fn new(sessions: Vec<Session>) -> Result<Self> {
        if sessions.is_empty() {
            return Err(Error::invalid("session_source", "empty session pool"));
        }
        Ok(SessionPool { sessions })
    }
}

impl SessionSource for SessionPool {
    fn sample(&self, n: usize, seed: u64) -> Result<Vec<Session>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n)
            .map(|_| self.sessions[rng.random_range(0..self.sessions.len())].clone())
            .collect())
    }

    fn describe(&self) -> String {
        format!("pool of {} sessions", self.sessions.len())
    }
}

/// Artificial sessions: mixture draws completed by a duration model.
#[derive(Debug, Clone)]
pub struct ModelSource {
    pub mixture: MixtureModel,
    pub duration: DurationModel,
    pub segment: Segment,
}

impl ModelSource {
    pub fn new(mixture: MixtureModel, duration: DurationModel, segment: Segment) -> Result<Self> {
        mixture.validate()?;
        duration.validate()?;
        Ok(ModelSource {
            mixture,
            duration,
            segment,
        })
    }
}

impl SessionSource for ModelSource {
    fn sample(&self, n: usize, seed: u64) -> Result<Vec<Session>> {
        let pts = self.mixture.sample(n, derive_seed(seed, 0))?;
        Ok(self
            .duration
            .complete(&pts, self.segment, derive_seed(seed, 1)))
    }

    fn describe(&self) -> String {
        format!(
            "{}-component mixture for {}",
            self.mixture.g(),
            self.segment
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub format_version: u32,
    pub rate_name: String,
    pub rate_sha256: String,
    pub dt: u32,
    pub n_vehicles: usize,
    pub seed: u64,
    /// Normalized uncontrolled profiles; each has maximum exactly 1.
    pub x: Vec<Vec<f64>>,
    /// Optimal controlled profiles divided by the same scale as `x`.
    pub y: Vec<Vec<f64>>,
    /// Peak kW each pair was divided by.
    pub scales: Vec<f64>,
    pub split: Vec<Split>,
    /// Wall-clock seconds of each LP solve.
    pub lp_seconds: Vec<f64>,
    pub clip: ClipReport,
    /// Instances that had to be redrawn once.
    pub redrawn: usize,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.split[i] == split)
            .collect()
    }

    pub fn rows(&self, idx: &[usize]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (
            idx.iter().map(|&i| self.x[i].clone()).collect(),
            idx.iter().map(|&i| self.y[i].clone()).collect(),
        )
    }

    pub fn mean_lp_seconds(&self) -> f64 {
        self.lp_seconds.iter().sum::<f64>() / self.lp_seconds.len().max(1) as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != TRAINING_FORMAT_VERSION {
            return Err(Error::Version {
                what: "training set",
                found: self.format_version,
                expected: TRAINING_FORMAT_VERSION,
            });
        }
        let n = self.x.len();
        if [self.y.len(), self.scales.len(), self.split.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::invalid("training_set", "ragged arrays"));
        }
        let t = crate::clock::steps_per_day(self.dt)?;
        for (j, (x, y)) in self.x.iter().zip(&self.y).enumerate() {
            if x.len() != t || y.len() != t {
                return Err(Error::invalid(
                    format!("x[{j}]"),
                    format!("expected {t} steps"),
                ));
            }
            let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if m != 1.0 {
                return Err(Error::invalid(
                    format!("x[{j}]"),
                    format!("max is {m}, expected 1"),
                ));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("serializable");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ts: TrainingSet = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.into(),
            source,
        })?;
        ts.validate()?;
        Ok(ts)
    }
}

/// Labels `n` items 70/10/20 after a seeded shuffle.
pub fn split_labels(n: usize, seed: u64) -> Vec<Split> {
    let n_train = (0.7 * n as f64).round() as usize;
    let n_dev = ((0.1 * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut labels = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        labels[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
    }
    labels
}

struct Pair {
    x: Vec<f64>,
    y: Vec<f64>,
    scale: f64,
    seconds: f64,
    clip: ClipReport,
    redrawn: bool,
}

fn solve_instance(
    source: &dyn SessionSource,
    rate: &RateSchedule,
    n_vehicles: usize,
    dt: u32,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>, f64, f64, ClipReport)> {
    let raw = source.sample(n_vehicles, seed)?;
    let (sessions, clip) = prepare_instance(&raw, dt)?;
    let x = uncontrolled(&sessions, dt)?;
    let (xu, scale) = x.normalize()?;
    let started = Instant::now();
    let sched = optimize(&sessions, rate, dt)?;
    let seconds = started.elapsed().as_secs_f64();
    let y = sched.aggregate.values.iter().map(|v| v / scale).collect();
    Ok((xu.values, y, scale, seconds, clip))
}

/// Samples `n_instances` lots of `n_vehicles`, solves each LP and stores the
/// normalized (X, Y) pairs. Instances are independent and run in parallel;
/// the result depends only on `seed`.
pub fn build_training_set(
    source: &dyn SessionSource,
    rate: &RateSchedule,
    n_instances: usize,
    n_vehicles: usize,
    dt: u32,
    seed: u64,
) -> Result<TrainingSet> {
    rate.validate()?;
    crate::clock::steps_per_day(dt)?;
    if n_instances == 0 || n_vehicles == 0 {
        return Err(Error::invalid(
            "n_instances",
            "need at least one instance and vehicle",
        ));
    }
    if n_instances < 10 {
        warn!("only {n_instances} training instances; CV and splits will be thin");
    }
    let pairs: Vec<Pair> = (0..n_instances)
        .into_par_iter()
        .map(|j| {
            let s = derive_seed(seed, j as u64);
            match solve_instance(source, rate, n_vehicles, dt, s) {
                Ok((x, y, scale, seconds, clip)) => Ok(Pair {
                    x,
                    y,
                    scale,
                    seconds,
                    clip,
                    redrawn: false,
                }),
                Err(first) => {
                    warn!("instance {j} failed ({first}); redrawing once");
                    let (x, y, scale, seconds, clip) =
                        solve_instance(source, rate, n_vehicles, dt, derive_seed(s, 1))?;
                    Ok(Pair {
                        x,
                        y,
                        scale,
                        seconds,
                        clip,
                        redrawn: true,
                    })
                }
            }
        })
        .collect::<Result<_>>()?;

    let mut clip = ClipReport::default();
    for p in &pairs {
        clip.truncated_at_midnight += p.clip.truncated_at_midnight;
        clip.clipped += p.clip.clipped;
        clip.clipped_kwh += p.clip.clipped_kwh;
    }
    let ts = TrainingSet {
        format_version: TRAINING_FORMAT_VERSION,
        rate_name: rate.name.clone(),
        rate_sha256: rate.content_hash(),
        dt,
        n_vehicles,
        seed,
        split: split_labels(n_instances, derive_seed(seed, u64::MAX)),
        redrawn: pairs.iter().filter(|p| p.redrawn).count(),
        lp_seconds: pairs.iter().map(|p| p.seconds).collect(),
        scales: pairs.iter().map(|p| p.scale).collect(),
        x: pairs.iter().map(|p| p.x.clone()).collect(),
        y: pairs.into_iter().map(|p| p.y).collect(),
        clip,
    };
    ts.validate()?;
    Ok(ts)
}
