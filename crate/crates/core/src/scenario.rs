//! Scenario engine: session counts per segment, mixture sampling, timer
//! policies, learned control and assembly of the total load profile.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clock::{format_hhmm, parse_hhmm, steps_per_day, TimeWindow};
use crate::error::{Error, Result};
use crate::gmm::MixtureModel;
use crate::groundtruth::GroundTruthSpec;
use crate::profile::{timer_shift, write_profiles_csv, Accumulator, LoadProfile};
use crate::rates::RateSchedule;
use crate::seeds::{derive_named, derive_seed};
use crate::session::{DayType, Level, Location, Segment};
use crate::surrogate::{
    build_training_set, fit, HyperGrid, ModelSource, Scores, SurrogateKind, SurrogateModel,
    TrainingSet,
};

/// Sessions simulated per parallel work unit. Fixed so results do not depend
/// on the thread count.
const CHUNK: usize = 1 << 16;

/// Rough per-session cost used to predict run time.
const SECONDS_PER_SESSION: f64 = 2.5e-7;

/// One number per driver group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupValues {
    pub residential: f64,
    pub workplace: f64,
    pub public_l2: f64,
    pub public_dcfc: f64,
}

impl GroupValues {
    pub fn entries(&self) -> [(&'static str, f64); 4] {
        [
            ("residential", self.residential),
            ("workplace", self.workplace),
            ("public_l2", self.public_l2),
            ("public_dcfc", self.public_dcfc),
        ]
    }

    pub fn sum(&self) -> f64 {
        self.entries().iter().map(|e| e.1).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChargeProbability {
    pub weekday: GroupValues,
    pub weekend: GroupValues,
}

impl ChargeProbability {
    pub fn for_day(&self, day: DayType) -> &GroupValues {
        match day {
            DayType::Weekday => &self.weekday,
            DayType::Weekend => &self.weekend,
        }
    }
}

/// A share of residential L2 sessions whose start is delayed to `start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimerPolicy {
    pub participation: f64,
    /// `HH:MM`.
    pub start: String,
}

impl TimerPolicy {
    pub fn new(participation: f64, minute: u32) -> Self {
        TimerPolicy {
            participation,
            start: format_hhmm(minute as f64),
        }
    }

    /// `total` participation split evenly over every hour from `first_hour`
    /// to `last_hour`, wrapping past midnight.
    pub fn staggered(total: f64, first_hour: u32, last_hour: u32) -> Vec<TimerPolicy> {
        let n = (last_hour + 24 - first_hour) % 24 + 1;
        (0..n)
            .map(|k| TimerPolicy::new(total / n as f64, ((first_hour + k) % 24) * 60))
            .collect()
    }

    pub fn minute(&self) -> Result<u32> {
        parse_hhmm(&self.start)
    }
}

/// How timer components are recognised when deriving smooth residential
/// models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimerFlagging {
    pub window_start: String,
    pub window_end: String,
    /// Components with a start-time std above this (minutes) are kept.
    pub max_start_std: f64,
}

impl Default for TimerFlagging {
    fn default() -> Self {
        TimerFlagging {
            window_start: "19:00".into(),
            window_end: "03:00".into(),
            max_start_std: 10.0,
        }
    }
}

impl TimerFlagging {
    pub fn window(&self) -> Result<TimeWindow> {
        TimeWindow::hhmm(&self.window_start, &self.window_end)
    }
}

fn default_dt() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub total_drivers: u64,
    pub segment_shares: GroupValues,
    /// Fraction of residential drivers living in multi-unit dwellings.
    pub mud_fraction: f64,
    /// Fraction of single-family residential sessions that are L1.
    pub l1_fraction: f64,
    pub charge_probability: ChargeProbability,
    #[serde(default)]
    pub timer_policies: Vec<TimerPolicy>,
    /// Keep the timer components of the residential L2 model. When false the
    /// smooth model (timer components removed) is used.
    #[serde(default)]
    pub observed_timers: bool,
    /// Location → surrogate id.
    #[serde(default)]
    pub control_assignment: BTreeMap<Location, String>,
    pub day_type: DayType,
    #[serde(default = "default_dt")]
    pub dt_output: u32,
    pub seed: u64,
    #[serde(default)]
    pub timer_flagging: TimerFlagging,
}

impl ScenarioConfig {
    /// 75/15/5/5 split, 80% daily charging for residential and workplace
    /// (10% workplace on weekends), 33% public, 10% MUD, 20% L1.
    pub fn base_case(total_drivers: u64) -> Self {
        let weekday = GroupValues {
            residential: 0.8,
            workplace: 0.8,
            public_l2: 0.33,
            public_dcfc: 0.33,
        };
        ScenarioConfig {
            total_drivers,
            segment_shares: GroupValues {
                residential: 0.75,
                workplace: 0.15,
                public_l2: 0.05,
                public_dcfc: 0.05,
            },
            mud_fraction: 0.1,
            l1_fraction: 0.2,
            charge_probability: ChargeProbability {
                weekday,
                weekend: GroupValues {
                    workplace: 0.1,
                    ..weekday
                },
            },
            timer_policies: Vec::new(),
            observed_timers: false,
            control_assignment: BTreeMap::new(),
            day_type: DayType::Weekday,
            dt_output: 1,
            seed: 42,
            timer_flagging: TimerFlagging::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.segment_shares.entries() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(
                    format!("segment_shares.{name}"),
                    format!("share {v} outside [0, 1]"),
                ));
            }
        }
        let sum = self.segment_shares.sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "segment_shares",
                format!("shares sum to {sum}, expected 1"),
            ));
        }
        for (name, v) in [
            ("mud_fraction", self.mud_fraction),
            ("l1_fraction", self.l1_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(name, format!("{v} outside [0, 1]")));
            }
        }
        for (day, p) in [
            ("weekday", &self.charge_probability.weekday),
            ("weekend", &self.charge_probability.weekend),
        ] {
            for (name, v) in p.entries() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::invalid(
                        format!("charge_probability.{day}.{name}"),
                        format!("probability {v} outside [0, 1]"),
                    ));
                }
            }
        }
        if self.timer_policies.len() > 255 {
            return Err(Error::invalid("timer_policies", "at most 255 policies"));
        }
        let mut total = 0.0;
        for (i, t) in self.timer_policies.iter().enumerate() {
            if !(0.0..=1.0).contains(&t.participation) {
                return Err(Error::invalid(
                    format!("timer_policies[{i}].participation"),
                    format!("{} outside [0, 1]", t.participation),
                ));
            }
            t.minute()
                .map_err(|e| Error::invalid(format!("timer_policies[{i}].start"), e.to_string()))?;
            total += t.participation;
        }
        if total > 1.0 + 1e-9 {
            return Err(Error::invalid(
                "timer_policies",
                format!("participation sums to {total}, more than 1"),
            ));
        }
        if self.control_assignment.contains_key(&Location::PublicDcfc) {
            return Err(Error::invalid(
                "control_assignment.public_dcfc",
                "fast charging cannot be load-modulated",
            ));
        }
        steps_per_day(self.dt_output).map_err(|e| Error::invalid("dt_output", e.to_string()))?;
        self.timer_flagging
            .window()
            .map_err(|e| Error::invalid("timer_flagging", e.to_string()))?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: ScenarioConfig = serde_json::from_str(text).map_err(|source| Error::Json {
            path: "<scenario config>".into(),
            source,
        })?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: ScenarioConfig = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.into(),
            source,
        })?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    /// Predicted wall-clock seconds for [`run_scenario`], excluding control.
    pub fn estimated_seconds(&self) -> f64 {
        segment_counts(self)
            .map(|c| c.total_sessions() as f64 * SECONDS_PER_SESSION)
            .unwrap_or(0.0)
    }
}

/// Half-up rounding that ignores float noise in the last few ulps.
fn round_half_up(x: f64) -> u64 {
    let y = (x * 1e6).round() / 1e6;
    (y + 0.5).floor().max(0.0) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentCounts {
    /// Sessions per driver group before residential sub-splits.
    pub groups: BTreeMap<String, u64>,
    /// Sessions per segment key.
    pub segments: BTreeMap<String, u64>,
}

impl SegmentCounts {
    pub fn get(&self, segment: Segment) -> u64 {
        self.segments.get(&segment.key()).copied().unwrap_or(0)
    }

    pub fn total_sessions(&self) -> u64 {
        self.segments.values().sum()
    }
}

fn scenario_segments(day: DayType) -> [Segment; 6] {
    let s = |l, v| Segment::new(l, v, day).expect("valid pair");
    [
        s(Location::ResidentialSf, Level::L1),
        s(Location::ResidentialSf, Level::L2),
        s(Location::Mud, Level::L2),
        s(Location::Workplace, Level::L2),
        s(Location::PublicL2, Level::L2),
        s(Location::PublicDcfc, Level::Dcfc),
    ]
}

/// `round(total × group share × sub-split × charge probability)` per segment.
pub fn segment_counts(config: &ScenarioConfig) -> Result<SegmentCounts> {
    config.validate()?;
    let n = config.total_drivers as f64;
    let sh = &config.segment_shares;
    let p = config.charge_probability.for_day(config.day_type);
    let res = n * sh.residential * p.residential;
    let sf = res * (1.0 - config.mud_fraction);
    let exact = [
        sf * config.l1_fraction,
        sf * (1.0 - config.l1_fraction),
        res * config.mud_fraction,
        n * sh.workplace * p.workplace,
        n * sh.public_l2 * p.public_l2,
        n * sh.public_dcfc * p.public_dcfc,
    ];
    let segments = scenario_segments(config.day_type)
        .iter()
        .zip(exact)
        .map(|(s, x)| (s.key(), round_half_up(x)))
        .collect();
    let groups = [
        ("residential", res),
        ("workplace", exact[3]),
        ("public_l2", exact[4]),
        ("public_dcfc", exact[5]),
    ]
    .into_iter()
    .map(|(k, x)| (k.to_string(), round_half_up(x)))
    .collect();
    Ok(SegmentCounts { groups, segments })
}

/// Mixture models keyed by segment.
#[derive(Debug, Clone, Default)]
pub struct ModelSet {
    mixtures: BTreeMap<Segment, MixtureModel>,
}

impl ModelSet {
    pub fn new() -> Self {
        ModelSet::default()
    }

    /// Adds a model; it must carry its segment.
    pub fn insert(&mut self, model: MixtureModel) -> Result<()> {
        model.validate()?;
        let seg = model
            .segment
            .ok_or_else(|| Error::invalid("segment", "mixture model has no segment"))?;
        self.mixtures.insert(seg, model);
        Ok(())
    }

    pub fn get(&self, segment: Segment) -> Option<&MixtureModel> {
        self.mixtures.get(&segment)
    }

    pub fn segments(&self) -> impl Iterator<Item = &Segment> {
        self.mixtures.keys()
    }

    pub fn len(&self) -> usize {
        self.mixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mixtures.is_empty()
    }

    /// Every segment of a ground-truth spec, converted to mixture form.
    pub fn from_ground_truth(spec: &GroundTruthSpec) -> Result<Self> {
        let mut set = ModelSet::new();
        for g in &spec.segments {
            set.insert(spec.mixture(g.segment)?)?;
        }
        Ok(set)
    }
}

/// Residential L2 model with timer components removed, rated for `level`.
pub fn smooth_residential(l2: &MixtureModel, flagging: &TimerFlagging) -> Result<MixtureModel> {
    let flagged = l2.flag_timer_components(&flagging.window()?, flagging.max_start_std);
    if flagged.len() == l2.g() {
        return Err(Error::invalid(
            "timer_flagging",
            "every residential component is flagged as a timer",
        ));
    }
    let mut m = l2.remove_components(&flagged)?;
    m.duration = l2.duration.clone();
    m.segment = l2.segment;
    Ok(m)
}

fn resolve_model(
    models: &ModelSet,
    segment: Segment,
    config: &ScenarioConfig,
) -> Result<MixtureModel> {
    let is_res_sf = segment.location() == Location::ResidentialSf;
    if is_res_sf && segment.level() == Level::L1 {
        if let Some(m) = models.get(segment) {
            return Ok(m.clone());
        }
    }
    if is_res_sf && (segment.level() == Level::L1 || !config.observed_timers) {
        let l2_seg = segment.with_level(Level::L2)?;
        let l2 = models
            .get(l2_seg)
            .ok_or_else(|| Error::MissingModel(format!("{l2_seg} (needed for {segment})")))?;
        let mut m = smooth_residential(l2, &config.timer_flagging)?;
        m.segment = Some(segment);
        return Ok(m);
    }
    models
        .get(segment)
        .cloned()
        .ok_or_else(|| Error::MissingModel(segment.key()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimerStats {
    pub assigned: u64,
    pub applied: u64,
    /// Sessions whose plug-in window could not accept the timer.
    pub rejected: u64,
}

/// Samples `n` sessions and accumulates their uncontrolled load. `timers`
/// lists (minute, session count) per policy.
fn simulate_segment(
    model: &MixtureModel,
    segment: Segment,
    n: u64,
    dt: u32,
    timers: &[(u32, u64)],
    seed: u64,
) -> Result<(LoadProfile, TimerStats)> {
    let n = n as usize;
    let rated = segment.rated_kw();
    let duration = model.duration.as_ref();
    let assigned: u64 = timers.iter().map(|t| t.1).sum();
    if assigned > 0 && duration.is_none() {
        return Err(Error::MissingModel(format!(
            "duration model for {segment} (required by timer policies)"
        )));
    }
    // policy label per session: 0 means no timer
    let labels: Vec<u8> = if assigned > 0 {
        let mut l = vec![0u8; n];
        let mut at = 0usize;
        for (k, &(_, c)) in timers.iter().enumerate() {
            let c = (c as usize).min(n - at);
            l[at..at + c].fill(k as u8 + 1);
            at += c;
        }
        l.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX)));
        l
    } else {
        Vec::new()
    };
    let starts: Vec<f64> = timers.iter().map(|t| t.0 as f64).collect();
    let chunks: Vec<(Accumulator, TimerStats)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let cs = derive_seed(seed, c as u64);
            let pts = model.sample(hi - lo, cs)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cs, 1));
            let mut acc = Accumulator::new(dt)?;
            let mut st = TimerStats::default();
            for (i, p) in pts.iter().enumerate() {
                let (mut start, energy) = (p[0], p[1]);
                let (power, plug) = match duration {
                    Some(d) => {
                        let r = d.draw_rate(&mut rng, rated);
                        (r, d.draw_duration(&mut rng, energy, r))
                    }
                    None => (rated, 0.0),
                };
                if let Some(&k) = labels.get(lo + i).filter(|&&k| k > 0) {
                    st.assigned += 1;
                    match timer_shift(start, plug, energy, power, starts[k as usize - 1]) {
                        Some((s, _)) => {
                            start = s;
                            st.applied += 1;
                        }
                        None => st.rejected += 1,
                    }
                }
                acc.add_interval(start, energy / power * 60.0, power);
            }
            Ok((acc, st))
        })
        .collect::<Result<_>>()?;
    let mut total = Accumulator::new(dt)?;
    let mut stats = TimerStats::default();
    for (a, s) in &chunks {
        total.merge(a);
        stats.assigned += s.assigned;
        stats.applied += s.applied;
        stats.rejected += s.rejected;
    }
    Ok((total.finish(), stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResult {
    pub segment: Segment,
    pub sessions: u64,
    /// Surrogate id when the segment is under load-modulation control.
    pub controlled_by: Option<String>,
    pub profile: LoadProfile,
    /// Pre-control profile at the surrogate's resolution.
    pub uncontrolled: Option<LoadProfile>,
    pub timers: TimerStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub peak_kw: f64,
    pub peak_minute: u32,
    pub peak_time: String,
    pub total_energy_kwh: f64,
    pub session_counts: BTreeMap<String, u64>,
    pub segment_energy_kwh: BTreeMap<String, f64>,
}

impl Metrics {
    fn of(total: &LoadProfile, segments: &[SegmentResult]) -> Self {
        let (_, peak_kw) = total.peak();
        let peak_minute = total.peak_minute();
        Metrics {
            peak_kw,
            peak_minute,
            peak_time: format_hhmm(peak_minute as f64),
            total_energy_kwh: total.energy_kwh(),
            session_counts: segments
                .iter()
                .map(|s| (s.segment.key(), s.sessions))
                .collect(),
            segment_energy_kwh: segments
                .iter()
                .map(|s| (s.segment.key(), s.profile.energy_kwh()))
                .collect(),
        }
    }
}

/// Stage name → wall-clock seconds.
pub type Timings = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub day_type: DayType,
    pub seed: u64,
    pub segments: Vec<SegmentResult>,
    /// Sum of every segment at the coarsest segment resolution.
    pub total: LoadProfile,
    pub metrics: Metrics,
    pub timings: Timings,
}

impl ScenarioResult {
    pub fn segment(&self, segment: Segment) -> Option<&SegmentResult> {
        self.segments.iter().find(|s| s.segment == segment)
    }

    /// Writes `profiles.csv` (segments and total at the total's resolution),
    /// `metrics.json` and `timings.json` into `dir`.
    pub fn write_bundle(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let resampled: Vec<(String, LoadProfile)> = self
            .segments
            .iter()
            .map(|s| Ok((s.segment.key(), s.profile.resample(self.total.dt)?)))
            .collect::<Result<_>>()?;
        let mut cols: Vec<(&str, &LoadProfile)> =
            resampled.iter().map(|(k, p)| (k.as_str(), p)).collect();
        cols.push(("total", &self.total));
        write_profiles_csv(&cols, dir.join("profiles.csv"))?;
        for (name, text) in [
            ("metrics.json", serde_json::to_string_pretty(&self.metrics)),
            ("timings.json", serde_json::to_string_pretty(&self.timings)),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, text.expect("serializable")).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn sum_profiles(profiles: &[&LoadProfile], dt: u32) -> Result<LoadProfile> {
    let mut total = LoadProfile::zeros(dt)?;
    for p in profiles {
        let r = p.resample(dt)?;
        for (t, v) in total.values.iter_mut().zip(&r.values) {
            *t += v;
        }
    }
    Ok(total)
}

/// Runs the full pipeline for one configuration. Deterministic in
/// `config.seed`; segments run concurrently.
pub fn run_scenario(
    config: &ScenarioConfig,
    models: &ModelSet,
    surrogates: &BTreeMap<String, SurrogateModel>,
) -> Result<ScenarioResult> {
    let started = Instant::now();
    let counts = segment_counts(config)?;
    let mut plan = Vec::new();
    for segment in scenario_segments(config.day_type) {
        let n = counts.get(segment);
        let control = match config.control_assignment.get(&segment.location()) {
            Some(id) => {
                let m = surrogates.get(id).ok_or_else(|| {
                    Error::MissingModel(format!("surrogate `{id}` for {}", segment.location()))
                })?;
                if m.dt % config.dt_output != 0 {
                    return Err(Error::DtMismatch {
                        expected: m.dt,
                        actual: config.dt_output,
                    });
                }
                Some((id.clone(), m))
            }
            None => None,
        };
        let model = if n > 0 {
            Some(resolve_model(models, segment, config)?)
        } else {
            None
        };
        let timers: Vec<(u32, u64)> =
            if segment.location() == Location::ResidentialSf && segment.level() == Level::L2 {
                config
                    .timer_policies
                    .iter()
                    .map(|t| Ok((t.minute()?, round_half_up(t.participation * n as f64))))
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            };
        plan.push((segment, n, model, control, timers));
    }

    let simulated: Vec<(SegmentResult, f64)> = plan
        .par_iter()
        .map(|(segment, n, model, control, timers)| {
            let t0 = Instant::now();
            let seed = derive_named(config.seed, &segment.key());
            let (profile, stats) = match model {
                Some(m) => simulate_segment(m, *segment, *n, config.dt_output, timers, seed)?,
                None => (LoadProfile::zeros(config.dt_output)?, TimerStats::default()),
            };
            if stats.rejected > 0 {
                info!(
                    "{segment}: {} of {} timer assignments rejected",
                    stats.rejected, stats.assigned
                );
            }
            let (profile, uncontrolled, controlled_by) = match control {
                Some((id, m)) => {
                    let before = profile.resample(m.dt)?;
                    (m.apply(&before)?, Some(before), Some(id.clone()))
                }
                None => (profile, None, None),
            };
            Ok((
                SegmentResult {
                    segment: *segment,
                    sessions: *n,
                    controlled_by,
                    profile,
                    uncontrolled,
                    timers: stats,
                },
                t0.elapsed().as_secs_f64(),
            ))
        })
        .collect::<Result<_>>()?;

    let t_assemble = Instant::now();
    let mut timings = Timings::new();
    let mut segments = Vec::with_capacity(simulated.len());
    for (s, secs) in simulated {
        timings.insert(format!("segment.{}", s.segment.key()), secs);
        segments.push(s);
    }
    let dt_total = segments
        .iter()
        .map(|s| s.profile.dt)
        .max()
        .unwrap_or(config.dt_output);
    let total = sum_profiles(
        &segments.iter().map(|s| &s.profile).collect::<Vec<_>>(),
        dt_total,
    )?;
    let metrics = Metrics::of(&total, &segments);
    timings.insert("assemble".into(), t_assemble.elapsed().as_secs_f64());
    timings.insert("total".into(), started.elapsed().as_secs_f64());
    Ok(ScenarioResult {
        day_type: config.day_type,
        seed: config.seed,
        segments,
        total,
        metrics,
        timings,
    })
}

/// Runs several configurations side by side. Scenario `i` uses the seed
/// `derive_seed(master_seed, configs[i].seed)`, so identical configurations
/// give identical results while distinct config seeds stay independent.
pub fn compare_scenarios(
    configs: &[ScenarioConfig],
    models: &ModelSet,
    surrogates: &BTreeMap<String, SurrogateModel>,
    master_seed: u64,
) -> Result<Vec<ScenarioResult>> {
    configs
        .iter()
        .map(|c| {
            let cfg = ScenarioConfig {
                seed: derive_seed(master_seed, c.seed),
                ..c.clone()
            };
            run_scenario(&cfg, models, surrogates)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateDesignOptions {
    /// Segment location placed under control.
    pub location: Location,
    pub n_instances: usize,
    pub n_vehicles: usize,
    pub dt: u32,
    pub kind: SurrogateKind,
    pub grid: HyperGrid,
    pub cv_folds: usize,
}

impl Default for RateDesignOptions {
    fn default() -> Self {
        RateDesignOptions {
            location: Location::Workplace,
            n_instances: 1000,
            n_vehicles: 250,
            dt: crate::chargeopt::CONTROL_DT,
            kind: SurrogateKind::Ridge,
            grid: HyperGrid::default(),
            cv_folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTimings {
    pub training_set: f64,
    pub fit: f64,
    pub scenario: f64,
    pub apply: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateDesignReport {
    pub rate_name: String,
    pub segment: Segment,
    pub surrogate_kind: SurrogateKind,
    /// Test-split RMSE of the fitted surrogate.
    pub rmse: Option<f64>,
    pub scores: Scores,
    pub segment_before: LoadProfile,
    pub segment_after: LoadProfile,
    pub total_before: LoadProfile,
    pub total_after: LoadProfile,
    pub segment_peak_before_kw: f64,
    pub segment_peak_after_kw: f64,
    pub total_peak_before_kw: f64,
    pub total_peak_after_kw: f64,
    /// Relative change in controlled-segment energy caused by the surrogate.
    pub segment_energy_drift: f64,
    pub timings: StepTimings,
    pub mean_lp_seconds: f64,
    /// Mean time to apply the surrogate to one training-lot profile.
    pub mean_apply_seconds: f64,
    pub speedup: f64,
    pub clipped_sessions: usize,
}

#[derive(Debug, Clone)]
pub struct RateDesignOutcome {
    pub report: RateDesignReport,
    pub training_set: TrainingSet,
    pub surrogate: SurrogateModel,
}

/// Evaluates a proposed rate: sample artificial sessions, solve the training
/// LPs, fit a surrogate, simulate the uncontrolled scenario and apply the
/// surrogate to the controlled segment.
pub fn rate_design_workflow(
    rate: &RateSchedule,
    models: &ModelSet,
    config: &ScenarioConfig,
    options: &RateDesignOptions,
    seed: u64,
) -> Result<RateDesignOutcome> {
    rate.validate()?;
    config.validate()?;
    let segment = Segment::new(options.location, Level::L2, config.day_type)?;
    let mixture = resolve_model(models, segment, config)?;
    let duration = mixture
        .duration
        .clone()
        .ok_or_else(|| Error::MissingModel(format!("duration model for {segment}")))?;
    let source = ModelSource::new(mixture, duration, segment)?;

    let t0 = Instant::now();
    let ts = build_training_set(
        &source,
        rate,
        options.n_instances,
        options.n_vehicles,
        options.dt,
        derive_named(seed, "training"),
    )?;
    let t_build = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let surrogate = fit(
        options.kind,
        &ts,
        options.cv_folds,
        &options.grid.for_kind(options.kind),
        derive_named(seed, "fit"),
    )?;
    let t_fit = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let uncontrolled_cfg = ScenarioConfig {
        control_assignment: BTreeMap::new(),
        ..config.clone()
    };
    let scenario = run_scenario(&uncontrolled_cfg, models, &BTreeMap::new())?;
    let t_scenario = t0.elapsed().as_secs_f64();

    let seg_result = scenario
        .segment(segment)
        .ok_or_else(|| Error::MissingModel(segment.key()))?;
    let before = seg_result.profile.resample(surrogate.dt)?;
    let t0 = Instant::now();
    let after = surrogate.apply(&before)?;
    let t_apply = t0.elapsed().as_secs_f64();

    // per-lot apply time on the same instances the LPs solved
    let lots: Vec<LoadProfile> =
        ts.x.iter()
            .zip(&ts.scales)
            .map(|(x, s)| LoadProfile {
                dt: ts.dt,
                values: x.iter().map(|v| v * s).collect(),
            })
            .collect();
    let t0 = Instant::now();
    for lot in &lots {
        std::hint::black_box(surrogate.apply(std::hint::black_box(lot))?);
    }
    let mean_apply = t0.elapsed().as_secs_f64() / lots.len() as f64;
    let mean_lp = ts.mean_lp_seconds();

    let others: Vec<&LoadProfile> = scenario
        .segments
        .iter()
        .filter(|s| s.segment != segment)
        .map(|s| &s.profile)
        .collect();
    let dt_total = scenario.total.dt.max(surrogate.dt);
    let mut with_after = others.clone();
    with_after.push(&after);
    let total_after = sum_profiles(&with_after, dt_total)?;
    let total_before = scenario.total.resample(dt_total)?;
    let e_before = before.energy_kwh();
    let drift = if e_before > 0.0 {
        (after.energy_kwh() - e_before) / e_before
    } else {
        0.0
    };
    if drift.abs() > 0.05 {
        warn!(
            "surrogate changes controlled energy by {:.1}%",
            drift * 100.0
        );
    }
    let report = RateDesignReport {
        rate_name: rate.name.clone(),
        segment,
        surrogate_kind: surrogate.kind,
        rmse: surrogate.scores.test_rmse,
        scores: surrogate.scores.clone(),
        segment_peak_before_kw: before.max(),
        segment_peak_after_kw: after.max(),
        total_peak_before_kw: total_before.max(),
        total_peak_after_kw: total_after.max(),
        segment_before: before,
        segment_after: after,
        total_before,
        total_after,
        segment_energy_drift: drift,
        timings: StepTimings {
            training_set: t_build,
            fit: t_fit,
            scenario: t_scenario,
            apply: t_apply,
        },
        mean_lp_seconds: mean_lp,
        mean_apply_seconds: mean_apply,
        speedup: if mean_apply > 0.0 {
            mean_lp / mean_apply
        } else {
            f64::INFINITY
        },
        clipped_sessions: ts.clip.clipped + ts.clip.truncated_at_midnight,
    };
    Ok(RateDesignOutcome {
        report,
        training_set: ts,
        surrogate,
    })
}
