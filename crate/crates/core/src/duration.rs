//! Plug-in duration and vehicle-rate model used to turn mixture samples
//! (start, energy) into complete sessions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::clock::wrap_minute;
use crate::error::{Error, Result};
use crate::gmm::Point;
use crate::groundtruth::{RateOption, MIN_DURATION_MIN};
use crate::session::{Segment, Session};

/// Lognormal plug-in duration (minutes) with a feasibility floor, plus the
/// distribution of vehicle charging limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationModel {
    pub log_mean: f64,
    pub log_std: f64,
    /// Empty means every vehicle charges at the segment's rated power.
    #[serde(default)]
    pub max_rate_pool: Vec<RateOption>,
}

impl DurationModel {
    pub fn new(log_mean: f64, log_std: f64) -> Result<Self> {
        let m = DurationModel {
            log_mean,
            log_std,
            max_rate_pool: Vec::new(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.log_mean.is_finite() {
            return Err(Error::invalid("duration.log_mean", "must be finite"));
        }
        if !(self.log_std >= 0.0 && self.log_std.is_finite()) {
            return Err(Error::invalid("duration.log_std", "must be ≥ 0"));
        }
        if !self.max_rate_pool.is_empty() {
            let sum: f64 = self.max_rate_pool.iter().map(|r| r.probability).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(
                    "duration.max_rate_pool",
                    format!("probabilities sum to {sum}"),
                ));
            }
            if self
                .max_rate_pool
                .iter()
                .any(|r| !(r.kw > 0.0) || r.probability < 0.0)
            {
                return Err(Error::invalid(
                    "duration.max_rate_pool",
                    "rates must be > 0 and probabilities ≥ 0",
                ));
            }
        }
        Ok(())
    }

    /// Maximum-likelihood lognormal fit, with the empirical rate pool
    /// (rates rounded to 0.1 kW).
    pub fn fit(sessions: &[Session]) -> Result<Self> {
        if sessions.len() < 2 {
            return Err(Error::invalid("sessions", "need at least 2 sessions"));
        }
        let n = sessions.len() as f64;
        let logs: Vec<f64> = sessions.iter().map(|s| s.duration.ln()).collect();
        let mean = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;

        let mut counts: Vec<(i64, usize)> = Vec::new();
        for s in sessions {
            let key = (s.power_kw() * 10.0).round() as i64;
            match counts.iter_mut().find(|(k, _)| *k == key) {
                Some((_, c)) => *c += 1,
                None => counts.push((key, 1)),
            }
        }
        counts.sort();
        let mut pool: Vec<RateOption> = counts
            .iter()
            .map(|&(k, c)| RateOption {
                kw: k as f64 / 10.0,
                probability: c as f64 / n,
            })
            .collect();
        // absorb rounding so the pool validates
        let sum: f64 = pool.iter().map(|r| r.probability).sum();
        pool.iter_mut().for_each(|r| r.probability /= sum);

        let m = DurationModel {
            log_mean: mean,
            log_std: var.sqrt(),
            max_rate_pool: pool,
        };
        m.validate()?;
        Ok(m)
    }

    pub(crate) fn draw_rate<R: Rng>(&self, rng: &mut R, rated: f64) -> f64 {
        if self.max_rate_pool.is_empty() {
            return rated;
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for r in &self.max_rate_pool {
            acc += r.probability;
            if u < acc {
                return r.kw.min(rated);
            }
        }
        self.max_rate_pool.last().unwrap().kw.min(rated)
    }

    pub(crate) fn draw_duration<R: Rng>(&self, rng: &mut R, energy: f64, rate: f64) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        let d = (self.log_mean + self.log_std * z).exp();
        d.max(energy / rate * 60.0).max(MIN_DURATION_MIN)
    }

    /// Turns (start, energy) draws into feasible sessions. Deterministic in `seed`.
    pub fn complete(&self, points: &[Point], segment: Segment, seed: u64) -> Vec<Session> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rated = segment.rated_kw();
        let key = segment.key();
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let max_rate = self.draw_rate(&mut rng, rated);
                let duration = self.draw_duration(&mut rng, p[1], max_rate);
                Session {
                    id: format!("{key}-{seed}-{i}"),
                    segment,
                    start: wrap_minute(p[0]),
                    duration,
                    energy: p[1],
                    max_rate,
                }
            })
            .collect()
    }
}
