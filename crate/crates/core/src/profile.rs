//! 24 h load profiles: sessions to power, aggregation, timers and resampling.
//!
//! A profile is circular; charging that runs past midnight lands at the
//! start of the same day.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clock::{forward_offset, steps_per_day, MINUTES_PER_DAY};
use crate::error::{Error, Result};
use crate::session::{Session, FEASIBILITY_SLACK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    /// Step size in minutes.
    pub dt: u32,
    /// Average kW over each step.
    pub values: Vec<f64>,
}

impl LoadProfile {
    pub fn new(dt: u32, values: Vec<f64>) -> Result<Self> {
        let p = LoadProfile { dt, values };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(dt: u32) -> Result<Self> {
        Ok(LoadProfile {
            dt,
            values: vec![0.0; steps_per_day(dt)?],
        })
    }

    pub fn validate(&self) -> Result<()> {
        let t = steps_per_day(self.dt)?;
        if self.values.len() != t {
            return Err(Error::invalid(
                "values",
                format!(
                    "expected {t} values for dt={}, got {}",
                    self.dt,
                    self.values.len()
                ),
            ));
        }
        if let Some(i) = self
            .values
            .iter()
            .position(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::invalid(
                format!("values[{i}]"),
                format!("load must be finite and ≥ 0, got {}", self.values[i]),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dt_hours(&self) -> f64 {
        self.dt as f64 / 60.0
    }

    pub fn energy_kwh(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dt_hours()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Index and value of the first maximum.
    pub fn peak(&self) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, &v) in self.values.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        best
    }

    /// Minute of day at which the peak step starts.
    pub fn peak_minute(&self) -> u32 {
        self.peak().0 as u32 * self.dt
    }

    pub fn scaled(&self, c: f64) -> LoadProfile {
        LoadProfile {
            dt: self.dt,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// Returns the unit-peak profile and the scale it was divided by.
    pub fn normalize(&self) -> Result<(LoadProfile, f64)> {
        let scale = self.max();
        if !(scale > 0.0) {
            return Err(Error::invalid("profile", "cannot normalize zero profile"));
        }
        let values = self
            .values
            .iter()
            .map(|&v| if v == scale { 1.0 } else { v / scale })
            .collect();
        Ok((
            LoadProfile {
                dt: self.dt,
                values,
            },
            scale,
        ))
    }

    /// Energy-preserving change of resolution. Downsampling averages,
    /// upsampling holds each value constant.
    pub fn resample(&self, dt_new: u32) -> Result<LoadProfile> {
        steps_per_day(dt_new)?;
        if dt_new == self.dt {
            return Ok(self.clone());
        }
        if dt_new.is_multiple_of(self.dt) {
            let k = (dt_new / self.dt) as usize;
            let values = self
                .values
                .chunks(k)
                .map(|c| c.iter().sum::<f64>() / k as f64)
                .collect();
            Ok(LoadProfile { dt: dt_new, values })
        } else if self.dt.is_multiple_of(dt_new) {
            let k = (self.dt / dt_new) as usize;
            let values = self
                .values
                .iter()
                .flat_map(|&v| std::iter::repeat_n(v, k))
                .collect();
            Ok(LoadProfile { dt: dt_new, values })
        } else {
            Err(Error::invalid(
                "dt",
                format!("cannot resample dt={} to dt={dt_new}", self.dt),
            ))
        }
    }

    /// Coarsest-needed downsample so the profile has at most `max_points` steps.
    pub fn for_display(&self, max_points: usize) -> Result<LoadProfile> {
        let mut dt = self.dt;
        while (MINUTES_PER_DAY / dt) as usize > max_points {
            dt = (dt + 1..=MINUTES_PER_DAY)
                .find(|d| MINUTES_PER_DAY.is_multiple_of(*d) && d.is_multiple_of(self.dt))
                .expect("1440 is always a candidate");
        }
        self.resample(dt)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_profiles_csv(&[("kw", self)], path)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<LoadProfile> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path)?;
        let mut minutes = Vec::new();
        let mut values = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i as u64 + 2;
            let field = |idx: usize, name: &str| -> Result<f64> {
                rec.get(idx)
                    .ok_or_else(|| Error::Parse {
                        line,
                        field: name.into(),
                        message: "missing".into(),
                    })?
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse {
                        line,
                        field: name.into(),
                        message: "not a number".into(),
                    })
            };
            minutes.push(field(0, "minute")?);
            values.push(field(1, "kw")?);
        }
        if minutes.len() < 2 {
            return Err(Error::invalid("profile", "need at least two rows"));
        }
        let dt = (minutes[1] - minutes[0]).round() as u32;
        LoadProfile::new(dt, values)
    }
}

/// Writes several same-resolution profiles side by side, one column each.
pub fn write_profiles_csv(columns: &[(&str, &LoadProfile)], path: impl AsRef<Path>) -> Result<()> {
    let Some((_, first)) = columns.first() else {
        return Err(Error::invalid("profiles", "nothing to write"));
    };
    for (name, p) in columns {
        if p.dt != first.dt {
            return Err(Error::invalid(
                format!("profiles.{name}"),
                format!("dt={} differs from dt={}", p.dt, first.dt),
            ));
        }
    }
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec!["minute".to_string()];
    header.extend(columns.iter().map(|(n, _)| n.to_string()));
    w.write_record(&header)?;
    for t in 0..first.len() {
        let mut row = vec![(t as u32 * first.dt).to_string()];
        row.extend(columns.iter().map(|(_, p)| p.values[t].to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(())
}

/// Accumulates constant-power intervals onto a circular grid in O(1) each.
#[derive(Debug, Clone)]
pub struct Accumulator {
    dt: f64,
    steps: usize,
    base: f64,
    diff: Vec<f64>,
    partial: Vec<f64>,
}

impl Accumulator {
    pub fn new(dt: u32) -> Result<Self> {
        let steps = steps_per_day(dt)?;
        Ok(Accumulator {
            dt: dt as f64,
            steps,
            base: 0.0,
            diff: vec![0.0; steps + 1],
            partial: vec![0.0; steps],
        })
    }

    /// Adds `kw` over `[start, start + minutes)`, wrapping around the day.
    pub fn add_interval(&mut self, start: f64, minutes: f64, kw: f64) {
        if !(minutes > 0.0) || kw == 0.0 {
            return;
        }
        let t = self.steps as i64;
        let end = start + minutes;
        let a = (start / self.dt).floor() as i64;
        let b = (end / self.dt).floor() as i64;
        let slot = |k: i64| k.rem_euclid(t) as usize;
        if a == b {
            self.partial[slot(a)] += kw * minutes / self.dt;
            return;
        }
        self.partial[slot(a)] += kw * ((a + 1) as f64 * self.dt - start) / self.dt;
        let tail = end - b as f64 * self.dt;
        if tail > 0.0 {
            self.partial[slot(b)] += kw * tail / self.dt;
        }
        // whole steps a+1 .. b-1
        let n = b - a - 1;
        if n <= 0 {
            return;
        }
        self.base += (n / t) as f64 * kw;
        let rem = (n % t) as usize;
        if rem == 0 {
            return;
        }
        let lo = slot(a + 1);
        let hi = lo + rem;
        self.diff[lo] += kw;
        if hi <= self.steps {
            self.diff[hi] -= kw;
        } else {
            self.diff[self.steps] -= kw;
            self.diff[0] += kw;
            self.diff[hi - self.steps] -= kw;
        }
    }

    /// Adds the uncontrolled charging rectangle of `session`.
    pub fn add_session(&mut self, s: &Session) {
        let p = s.power_kw();
        self.add_interval(s.start, s.energy / p * 60.0, p);
    }

    pub fn merge(&mut self, other: &Accumulator) {
        self.base += other.base;
        for (a, b) in self.diff.iter_mut().zip(&other.diff) {
            *a += b;
        }
        for (a, b) in self.partial.iter_mut().zip(&other.partial) {
            *a += b;
        }
    }

    pub fn finish(&self) -> LoadProfile {
        let mut run = 0.0;
        let values = (0..self.steps)
            .map(|i| {
                run += self.diff[i];
                // cancellation can leave tiny negatives
                (self.base + run + self.partial[i]).max(0.0)
            })
            .collect();
        LoadProfile {
            dt: self.dt as u32,
            values,
        }
    }
}

/// Uncontrolled profile of one session: full power from plug-in until the
/// energy is delivered, with the last step holding the fractional average.
pub fn session_to_profile(session: &Session, dt: u32) -> Result<LoadProfile> {
    session.validate()?;
    let mut acc = Accumulator::new(dt)?;
    acc.add_session(session);
    Ok(acc.finish())
}

/// Pointwise sum of profiles sharing one resolution.
pub fn aggregate(profiles: &[LoadProfile]) -> Result<LoadProfile> {
    let Some(first) = profiles.first() else {
        return Err(Error::invalid("profiles", "nothing to aggregate"));
    };
    let mut out = LoadProfile::zeros(first.dt)?;
    for p in profiles {
        if p.dt != first.dt {
            return Err(Error::DtMismatch {
                expected: first.dt,
                actual: p.dt,
            });
        }
        p.validate()?;
        for (o, v) in out.values.iter_mut().zip(&p.values) {
            *o += v;
        }
    }
    Ok(out)
}

const CHUNK: usize = 1 << 16;

/// Aggregate uncontrolled profile of many sessions. Chunking is fixed, so
/// the result does not depend on the thread count.
pub fn aggregate_sessions(sessions: &[Session], dt: u32) -> Result<LoadProfile> {
    steps_per_day(dt)?;
    let parts: Vec<Accumulator> = sessions
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Accumulator::new(dt)?;
            for s in chunk {
                s.validate()?;
                acc.add_session(s);
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = Accumulator::new(dt)?;
    for p in &parts {
        total.merge(p);
    }
    Ok(total.finish())
}

/// New (start, duration) when a timer delays the start to `timer_start`, or
/// `None` if the shifted window cannot deliver `energy` at `power` kW.
pub fn timer_shift(
    start: f64,
    duration: f64,
    energy: f64,
    power: f64,
    timer_start: f64,
) -> Option<(f64, f64)> {
    let offset = forward_offset(start, timer_start);
    if offset == 0.0 {
        return Some((start, duration));
    }
    if offset >= duration {
        return None;
    }
    let left = duration - offset;
    let capacity = left / 60.0 * power;
    if energy > capacity * (1.0 + FEASIBILITY_SLACK) + 1e-12 {
        return None;
    }
    Some((crate::clock::wrap_minute(timer_start), left))
}

/// Delays the start of `session` to the next occurrence of `timer_start`,
/// keeping its departure and energy.
pub fn apply_timer(session: &Session, timer_start: f64) -> Result<Session> {
    let err = |m: String| Error::Session {
        id: session.id.clone(),
        message: m,
    };
    let offset = forward_offset(session.start, timer_start);
    if offset >= session.duration && offset > 0.0 {
        return Err(err(format!(
            "timer at minute {timer_start} is outside the plug-in window"
        )));
    }
    let (start, duration) = timer_shift(
        session.start,
        session.duration,
        session.energy,
        session.power_kw(),
        timer_start,
    )
    .ok_or_else(|| {
        err(format!(
            "timer leaves {:.3} kWh of capacity for {:.3} kWh",
            (session.duration - offset) / 60.0 * session.power_kw(),
            session.energy
        ))
    })?;
    Ok(Session {
        start,
        duration,
        ..session.clone()
    })
}
