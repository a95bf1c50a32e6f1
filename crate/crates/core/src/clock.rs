//! Minutes-since-midnight arithmetic on a circular 24 h day.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MINUTES_PER_DAY: u32 = 1440;
pub const MINUTES_PER_DAY_F: f64 = 1440.0;

/// Wraps any real minute value onto `[0, 1440)`.
pub fn wrap_minute(m: f64) -> f64 {
    let w = m.rem_euclid(MINUTES_PER_DAY_F);
    // rem_euclid can round up to exactly 1440 for tiny negative inputs
    if w >= MINUTES_PER_DAY_F {
        0.0
    } else {
        w
    }
}

/// Forward circular distance from `from` to `to`, in `[0, 1440)`.
pub fn forward_offset(from: f64, to: f64) -> f64 {
    wrap_minute(to - from)
}

/// Parses `HH:MM` into minutes since midnight. `24:00` is accepted as 1440.
pub fn parse_hhmm(s: &str) -> Result<u32> {
    let bad = || Error::invalid("time", format!("expected HH:MM, got `{s}`"));
    let (h, m) = s.split_once(':').ok_or_else(bad)?;
    let h: u32 = h.trim().parse().map_err(|_| bad())?;
    let m: u32 = m.trim().parse().map_err(|_| bad())?;
    if m >= 60 || h > 24 || (h == 24 && m != 0) {
        return Err(bad());
    }
    Ok(h * 60 + m)
}

pub fn format_hhmm(minute: f64) -> String {
    let m = wrap_minute(minute).round() as u32 % MINUTES_PER_DAY;
    format!("{:02}:{:02}", m / 60, m % 60)
}

/// Checks that `dt` is a positive divisor of 1440 and returns the step count.
pub fn steps_per_day(dt: u32) -> Result<usize> {
    if dt == 0 || !MINUTES_PER_DAY.is_multiple_of(dt) {
        return Err(Error::invalid(
            "dt",
            format!("step size {dt} min does not divide 1440"),
        ));
    }
    Ok((MINUTES_PER_DAY / dt) as usize)
}

/// Half-open window `[start, end)` in minutes. `end < start` wraps past
/// midnight; `start = 0, end = 1440` is the whole day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: u32,
    pub end: u32,
}

impl TimeWindow {
    pub const ALL_DAY: TimeWindow = TimeWindow {
        start: 0,
        end: MINUTES_PER_DAY,
    };

    pub fn new(start: u32, end: u32) -> Result<Self> {
        let w = TimeWindow { start, end };
        w.validate()?;
        Ok(w)
    }

    pub fn hhmm(start: &str, end: &str) -> Result<Self> {
        let s = parse_hhmm(start)?;
        let e = parse_hhmm(end)?;
        TimeWindow::new(s % MINUTES_PER_DAY, e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.start >= MINUTES_PER_DAY {
            return Err(Error::invalid(
                "window.start",
                format!("{} is outside [0,1440)", self.start),
            ));
        }
        if self.end > MINUTES_PER_DAY || self.end == 0 {
            return Err(Error::invalid(
                "window.end",
                format!("{} is outside (0,1440]", self.end),
            ));
        }
        if self.start == self.end {
            return Err(Error::invalid("window", "empty window (start == end)"));
        }
        Ok(())
    }

    pub fn wraps(&self) -> bool {
        self.end < self.start
    }

    pub fn len_minutes(&self) -> u32 {
        if self.wraps() {
            MINUTES_PER_DAY - self.start + self.end
        } else {
            self.end - self.start
        }
    }

    /// Whether minute `m` (any real, wrapped first) lies in the window.
    pub fn contains(&self, m: f64) -> bool {
        let m = wrap_minute(m);
        let (s, e) = (self.start as f64, self.end as f64);
        if self.wraps() {
            m >= s || m < e
        } else {
            m >= s && m < e
        }
    }

    /// The one or two non-wrapping `[lo, hi)` pieces making up the window.
    pub fn segments(&self) -> Vec<(u32, u32)> {
        if self.wraps() {
            let mut v = vec![(self.start, MINUTES_PER_DAY)];
            if self.end > 0 {
                v.push((0, self.end));
            }
            v
        } else {
            vec![(self.start, self.end)]
        }
    }

    /// Minutes of overlap between the window and `[lo, hi)` (non-wrapping).
    pub fn overlap_minutes(&self, lo: u32, hi: u32) -> u32 {
        self.segments()
            .iter()
            .map(|&(a, b)| b.min(hi).saturating_sub(a.max(lo)))
            .sum()
    }

    pub fn overlaps(&self, other: &TimeWindow) -> bool {
        self.segments()
            .iter()
            .any(|&(a, b)| other.overlap_minutes(a, b) > 0)
    }
}

impl std::fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}, {})",
            format_hhmm(self.start as f64),
            if self.end == MINUTES_PER_DAY {
                "24:00".to_string()
            } else {
                format_hhmm(self.end as f64)
            }
        )
    }
}
