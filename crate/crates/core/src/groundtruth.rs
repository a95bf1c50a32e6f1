//! Parametric synthetic session generator.
//!
//! Each segment is a weighted list of components. A component draws a
//! correlated Gaussian (start, energy) pair plus an independent Gaussian
//! plug-in duration. Starts wrap modulo 1440, energies clip at zero and
//! durations are stretched until the session is feasible at its max rate.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::clock::wrap_minute;
use crate::duration::DurationModel;
use crate::error::{Error, Result};
use crate::gmm::MixtureModel;
use crate::session::{Segment, Session};

pub const GROUND_TRUTH_FORMAT_VERSION: u32 = 1;

/// Shortest plug-in duration the generator will emit, in minutes.
pub const MIN_DURATION_MIN: f64 = 5.0;

const SHIPPED_SPEC: &str = include_str!("../../../fixtures/ground_truth.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorComponent {
    pub weight: f64,
    pub start_mean: f64,
    pub start_std: f64,
    pub energy_mean: f64,
    pub energy_std: f64,
    pub duration_mean: f64,
    pub duration_std: f64,
    #[serde(default)]
    pub start_energy_corr: f64,
    /// Marks components that represent timer-delayed starts.
    #[serde(default)]
    pub timer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateOption {
    pub kw: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentGenerator {
    pub segment: Segment,
    pub components: Vec<GeneratorComponent>,
    pub max_rate_pool: Vec<RateOption>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSpec {
    pub format_version: u32,
    #[serde(default)]
    pub description: String,
    pub segments: Vec<SegmentGenerator>,
}

/// A generated session together with the raw draws it came from.
#[derive(Debug, Clone)]
pub struct LabelledSession {
    pub session: Session,
    pub component: usize,
    /// Start before wrapping.
    pub raw_start: f64,
    /// Energy before clipping at zero.
    pub raw_energy: f64,
}

impl GroundTruthSpec {
    /// The spec bundled with the crate (`fixtures/ground_truth.json`).
    pub fn shipped() -> Self {
        let spec: GroundTruthSpec =
            serde_json::from_str(SHIPPED_SPEC).expect("bundled ground truth parses");
        spec.validate().expect("bundled ground truth is valid");
        spec
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: GroundTruthSpec = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.into(),
            source,
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != GROUND_TRUTH_FORMAT_VERSION {
            return Err(Error::Version {
                what: "ground truth spec",
                found: self.format_version,
                expected: GROUND_TRUTH_FORMAT_VERSION,
            });
        }
        for (si, seg) in self.segments.iter().enumerate() {
            let path = format!("segments[{si}]");
            if seg.components.is_empty() {
                return Err(Error::invalid(&path, "no components"));
            }
            let wsum: f64 = seg.components.iter().map(|c| c.weight).sum();
            if (wsum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(
                    format!("{path}.components"),
                    format!("weights sum to {wsum}, expected 1"),
                ));
            }
            for (ci, c) in seg.components.iter().enumerate() {
                let cp = format!("{path}.components[{ci}]");
                if c.weight < 0.0 {
                    return Err(Error::invalid(format!("{cp}.weight"), "negative weight"));
                }
                for (name, v) in [
                    ("start_std", c.start_std),
                    ("energy_std", c.energy_std),
                    ("duration_std", c.duration_std),
                ] {
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(Error::invalid(format!("{cp}.{name}"), "std must be > 0"));
                    }
                }
                if !(-1.0..=1.0).contains(&c.start_energy_corr) {
                    return Err(Error::invalid(
                        format!("{cp}.start_energy_corr"),
                        "correlation must lie in [-1, 1]",
                    ));
                }
            }
            if seg.max_rate_pool.is_empty() {
                return Err(Error::invalid(
                    format!("{path}.max_rate_pool"),
                    "empty pool",
                ));
            }
            let psum: f64 = seg.max_rate_pool.iter().map(|r| r.probability).sum();
            if (psum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(
                    format!("{path}.max_rate_pool"),
                    format!("probabilities sum to {psum}, expected 1"),
                ));
            }
            if seg
                .max_rate_pool
                .iter()
                .any(|r| !(r.kw > 0.0) || r.probability < 0.0)
            {
                return Err(Error::invalid(
                    format!("{path}.max_rate_pool"),
                    "rates must be > 0 and probabilities ≥ 0",
                ));
            }
        }
        Ok(())
    }

    pub fn segment(&self, segment: Segment) -> Result<&SegmentGenerator> {
        self.segments
            .iter()
            .find(|s| s.segment == segment)
            .ok_or_else(|| Error::MissingModel(format!("{segment} (not in ground truth spec)")))
    }

    /// The generator itself as a mixture model, with a lognormal duration
    /// model moment-matched to the generator's duration mixture.
    pub fn mixture(&self, segment: Segment) -> Result<MixtureModel> {
        let gen = self.segment(segment)?;
        let c = &gen.components;
        let means = c.iter().map(|c| [c.start_mean, c.energy_mean]).collect();
        let covs = c
            .iter()
            .map(|c| {
                let xy = c.start_energy_corr * c.start_std * c.energy_std;
                [c.start_std.powi(2), xy, xy, c.energy_std.powi(2)]
            })
            .collect();
        let mut m = MixtureModel::new(c.iter().map(|c| c.weight).collect(), means, covs)?
            .with_segment(segment);
        let mu: f64 = c.iter().map(|c| c.weight * c.duration_mean).sum();
        let second: f64 = c
            .iter()
            .map(|c| c.weight * (c.duration_std.powi(2) + c.duration_mean.powi(2)))
            .sum();
        let s2 = (1.0 + (second - mu * mu) / (mu * mu)).ln();
        let mut d = DurationModel::new(mu.ln() - 0.5 * s2, s2.sqrt())?;
        d.max_rate_pool = gen.max_rate_pool.clone();
        d.validate()?;
        m.duration = Some(d);
        Ok(m)
    }
}

fn pick<T>(items: &[T], weight: impl Fn(&T) -> f64, u: f64) -> usize {
    let mut acc = 0.0;
    for (i, it) in items.iter().enumerate() {
        acc += weight(it);
        if u < acc {
            return i;
        }
    }
    items.len() - 1
}

/// Draws `n` sessions for `segment`, keeping component labels and pre-clip
/// values. Deterministic in `seed`.
pub fn generate_labelled(
    spec: &GroundTruthSpec,
    segment: Segment,
    n: usize,
    seed: u64,
) -> Result<Vec<LabelledSession>> {
    spec.validate()?;
    let gen = spec.segment(segment)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rated = segment.rated_kw();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let ci = pick(&gen.components, |c| c.weight, rng.random::<f64>());
        let c = &gen.components[ci];
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let rho = c.start_energy_corr;
        let raw_start = c.start_mean + c.start_std * z1;
        let raw_energy = c.energy_mean + c.energy_std * (rho * z1 + (1.0 - rho * rho).sqrt() * z2);
        let mut duration = loop {
            let d = c.duration_mean + c.duration_std * rng.sample::<f64, _>(StandardNormal);
            if d >= MIN_DURATION_MIN {
                break d;
            }
        };
        let ri = pick(&gen.max_rate_pool, |r| r.probability, rng.random::<f64>());
        let max_rate = gen.max_rate_pool[ri].kw.min(rated);
        let energy = raw_energy.max(0.0);
        let needed = energy / max_rate * 60.0;
        if duration < needed {
            duration = needed;
        }
        out.push(LabelledSession {
            session: Session {
                id: format!("{}-{seed}-{i}", segment.key()),
                segment,
                start: wrap_minute(raw_start),
                duration,
                energy,
                max_rate,
            },
            component: ci,
            raw_start,
            raw_energy,
        });
    }
    Ok(out)
}

pub fn generate_sessions(
    spec: &GroundTruthSpec,
    segment: Segment,
    n: usize,
    seed: u64,
) -> Result<Vec<Session>> {
    Ok(generate_labelled(spec, segment, n, seed)?
        .into_iter()
        .map(|l| l.session)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{DayType, Level, Location};

    fn workplace() -> Segment {
        Segment::new(Location::Workplace, Level::L2, DayType::Weekday).unwrap()
    }

    fn single(component: GeneratorComponent) -> GroundTruthSpec {
        GroundTruthSpec {
            format_version: 1,
            description: String::new(),
            segments: vec![SegmentGenerator {
                segment: workplace(),
                components: vec![component],
                max_rate_pool: vec![RateOption {
                    kw: 6.6,
                    probability: 1.0,
                }],
            }],
        }
    }

    fn comp(energy_mean: f64, energy_std: f64, corr: f64) -> GeneratorComponent {
        GeneratorComponent {
            weight: 1.0,
            start_mean: 540.0,
            start_std: 60.0,
            energy_mean,
            energy_std,
            duration_mean: 480.0,
            duration_std: 60.0,
            start_energy_corr: corr,
            timer: false,
        }
    }

    #[test]
    fn zero_sessions() {
        let spec = GroundTruthSpec::shipped();
        assert!(generate_sessions(&spec, workplace(), 0, 1)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn degenerate_energy() {
        let spec = single(comp(6.6, 1e-12, 0.0));
        for s in generate_sessions(&spec, workplace(), 500, 3).unwrap() {
            assert!((s.energy - 6.6).abs() < 1e-6);
        }
    }

    #[test]
    fn pre_clip_correlation_matches_spec() {
        let spec = single(comp(8.0, 3.0, -0.5));
        let draws = generate_labelled(&spec, workplace(), 50_000, 11).unwrap();
        let n = draws.len() as f64;
        let (mx, my) = draws.iter().fold((0.0, 0.0), |(a, b), d| {
            (a + d.raw_start / n, b + d.raw_energy / n)
        });
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for d in &draws {
            let (dx, dy) = (d.raw_start - mx, d.raw_energy - my);
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
        let r = sxy / (sxx * syy).sqrt();
        assert!((r + 0.5).abs() <= 0.03, "pearson r = {r}");
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = GroundTruthSpec::shipped();
        let a = generate_sessions(&spec, workplace(), 200, 42).unwrap();
        let b = generate_sessions(&spec, workplace(), 200, 42).unwrap();
        let c = generate_sessions(&spec, workplace(), 200, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn generated_sessions_are_feasible() {
        let spec = GroundTruthSpec::shipped();
        for gen in &spec.segments {
            for s in generate_sessions(&spec, gen.segment, 2_000, 5).unwrap() {
                s.validate().unwrap();
            }
        }
    }

    #[test]
    fn shipped_spec_zero_energy_fraction_small() {
        let spec = GroundTruthSpec::shipped();
        for gen in &spec.segments {
            let s = generate_sessions(&spec, gen.segment, 20_000, 9).unwrap();
            let zeros = s.iter().filter(|s| s.energy == 0.0).count() as f64 / s.len() as f64;
            assert!(zeros < 0.02, "{}: zero fraction {zeros}", gen.segment);
        }
    }

    #[test]
    fn unknown_segment_errors() {
        let spec = single(comp(5.0, 1.0, 0.0));
        let mud = Segment::new(Location::Mud, Level::L2, DayType::Weekday).unwrap();
        assert!(generate_sessions(&spec, mud, 10, 1).is_err());
    }

    #[test]
    fn invalid_weights_rejected() {
        let mut spec = single(comp(5.0, 1.0, 0.0));
        spec.segments[0].components[0].weight = 0.9;
        assert!(spec.validate().is_err());
    }
}
