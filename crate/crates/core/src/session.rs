//! Charging sessions, segments and the sessions CSV format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clock::{TimeWindow, MINUTES_PER_DAY_F};
use crate::error::{Error, Result};

/// Relative slack on the energy-feasibility check, absorbing float noise
/// from duration/energy arithmetic.
pub const FEASIBILITY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    ResidentialSf,
    Mud,
    Workplace,
    PublicL2,
    PublicDcfc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    L1,
    L2,
    Dcfc,
}

impl Level {
    /// Rated charging power in kW.
    pub fn rated_kw(self) -> f64 {
        match self {
            Level::L1 => 1.4,
            Level::L2 => 6.6,
            Level::Dcfc => 150.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayType {
    Weekday,
    Weekend,
}

macro_rules! str_enum {
    ($ty:ty { $($variant:ident => $s:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $(Self::$variant => $s),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s.trim() {
                    $($s => Ok(Self::$variant),)+
                    other => Err(format!("unknown {} `{other}`", stringify!($ty).to_lowercase())),
                }
            }
        }
    };
}

str_enum!(Location {
    ResidentialSf => "residential_sf",
    Mud => "mud",
    Workplace => "workplace",
    PublicL2 => "public_l2",
    PublicDcfc => "public_dcfc",
});
str_enum!(Level { L1 => "l1", L2 => "l2", Dcfc => "dcfc" });
str_enum!(DayType { Weekday => "weekday", Weekend => "weekend" });

/// A (location, level, day type) slice of charging demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "SegmentRepr", into = "SegmentRepr")]
pub struct Segment {
    location: Location,
    level: Level,
    day_type: DayType,
}

#[derive(Serialize, Deserialize)]
struct SegmentRepr {
    location: Location,
    level: Level,
    day_type: DayType,
}

impl TryFrom<SegmentRepr> for Segment {
    type Error = Error;
    fn try_from(r: SegmentRepr) -> Result<Self> {
        Segment::new(r.location, r.level, r.day_type)
    }
}

impl From<Segment> for SegmentRepr {
    fn from(s: Segment) -> Self {
        SegmentRepr {
            location: s.location,
            level: s.level,
            day_type: s.day_type,
        }
    }
}

impl Segment {
    pub fn new(location: Location, level: Level, day_type: DayType) -> Result<Self> {
        use Level::*;
        use Location::*;
        let ok = matches!(
            (location, level),
            (ResidentialSf, L1 | L2)
                | (Mud, L2)
                | (Workplace, L2)
                | (PublicL2, L2)
                | (PublicDcfc, Dcfc)
        );
        if !ok {
            return Err(Error::invalid(
                "segment",
                format!("{location} does not support charging level {level}"),
            ));
        }
        Ok(Segment {
            location,
            level,
            day_type,
        })
    }

    pub fn location(&self) -> Location {
        self.location
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn day_type(&self) -> DayType {
        self.day_type
    }

    pub fn rated_kw(&self) -> f64 {
        self.level.rated_kw()
    }

    pub fn with_day_type(self, day_type: DayType) -> Self {
        Segment { day_type, ..self }
    }

    pub fn with_level(self, level: Level) -> Result<Self> {
        Segment::new(self.location, level, self.day_type)
    }

    /// Every valid segment, weekday first.
    pub fn all() -> Vec<Segment> {
        use Level::*;
        use Location::*;
        let pairs = [
            (ResidentialSf, L1),
            (ResidentialSf, L2),
            (Mud, L2),
            (Workplace, L2),
            (PublicL2, L2),
            (PublicDcfc, Dcfc),
        ];
        [DayType::Weekday, DayType::Weekend]
            .iter()
            .flat_map(|&d| {
                pairs
                    .iter()
                    .map(move |&(l, v)| Segment::new(l, v, d).unwrap())
            })
            .collect()
    }

    /// Stable key such as `workplace_l2_weekday`, used for file names and
    /// result columns.
    pub fn key(&self) -> String {
        format!("{}_{}_{}", self.location, self.level, self.day_type)
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

impl FromStr for Segment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Segment::all()
            .into_iter()
            .find(|seg| seg.key() == s.trim())
            .ok_or_else(|| Error::invalid("segment", format!("unknown segment `{s}`")))
    }
}

/// One charging event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub segment: Segment,
    /// Minutes since midnight, in `[0, 1440)`.
    pub start: f64,
    /// Plug-in duration in minutes.
    pub duration: f64,
    /// kWh delivered.
    pub energy: f64,
    /// kW limit of the vehicle.
    pub max_rate: f64,
}

impl Session {
    /// Charging power actually available: vehicle limit capped by the segment.
    pub fn power_kw(&self) -> f64 {
        self.max_rate.min(self.segment.rated_kw())
    }

    pub fn departure(&self) -> f64 {
        self.start + self.duration
    }

    /// Most energy deliverable within the plug-in window.
    pub fn window_capacity_kwh(&self) -> f64 {
        self.duration / 60.0 * self.power_kw()
    }

    /// Minutes of full-power charging needed to deliver `energy`.
    pub fn charge_minutes(&self) -> f64 {
        self.energy / self.power_kw() * 60.0
    }

    pub fn is_feasible(&self) -> bool {
        self.energy <= self.window_capacity_kwh() * (1.0 + FEASIBILITY_SLACK) + 1e-12
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Error::Session {
            id: self.id.clone(),
            message: m,
        };
        if !(self.start.is_finite() && self.start >= 0.0 && self.start < MINUTES_PER_DAY_F) {
            return Err(err(format!("start out of range: {}", self.start)));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(err(format!("duration must be > 0, got {}", self.duration)));
        }
        if !(self.energy.is_finite() && self.energy >= 0.0) {
            return Err(err(format!("energy must be ≥ 0, got {}", self.energy)));
        }
        if !(self.max_rate.is_finite() && self.max_rate > 0.0) {
            return Err(err(format!("max_rate must be > 0, got {}", self.max_rate)));
        }
        if self.max_rate > self.segment.rated_kw() {
            return Err(err(format!(
                "max_rate {} exceeds rated power {} of {}",
                self.max_rate,
                self.segment.rated_kw(),
                self.segment
            )));
        }
        if !self.is_feasible() {
            return Err(err(format!(
                "infeasible: energy {} kWh exceeds window capacity {} kWh",
                self.energy,
                self.window_capacity_kwh()
            )));
        }
        Ok(())
    }
}

const CSV_HEADER: [&str; 8] = [
    "id",
    "location",
    "level",
    "day_type",
    "start_min",
    "duration_min",
    "energy_kwh",
    "max_rate_kw",
];

pub fn write_sessions_csv(sessions: &[Session], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_sessions(sessions, file)?;
    Ok(())
}

pub fn write_sessions<W: std::io::Write>(sessions: &[Session], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for s in sessions {
        // `{}` on f64 prints the shortest representation that round-trips.
        w.write_record([
            s.id.clone(),
            s.segment.location().to_string(),
            s.segment.level().to_string(),
            s.segment.day_type().to_string(),
            s.start.to_string(),
            s.duration.to_string(),
            s.energy.to_string(),
            s.max_rate.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_sessions_csv(path: impl AsRef<Path>) -> Result<Vec<Session>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_sessions(file)
}

pub fn read_sessions<R: std::io::Read>(input: R) -> Result<Vec<Session>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let headers = rdr.headers()?.clone();
    let idx = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                field: name.to_string(),
                message: "missing column in header".into(),
            })
    };
    let cols: Vec<usize> = CSV_HEADER.iter().map(|c| idx(c)).collect::<Result<_>>()?;

    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| -> Result<&str> {
            rec.get(cols[i]).ok_or_else(|| Error::Parse {
                line,
                field: CSV_HEADER[i].into(),
                message: "missing value".into(),
            })
        };
        let perr = |i: usize, m: String| Error::Parse {
            line,
            field: CSV_HEADER[i].into(),
            message: m,
        };
        let num = |i: usize| -> Result<f64> {
            let raw = field(i)?;
            raw.trim()
                .parse::<f64>()
                .map_err(|_| perr(i, format!("not a number: `{raw}`")))
        };
        let location: Location = field(1)?.parse().map_err(|m| perr(1, m))?;
        let level: Level = field(2)?.parse().map_err(|m| perr(2, m))?;
        let day_type: DayType = field(3)?.parse().map_err(|m| perr(3, m))?;
        let segment =
            Segment::new(location, level, day_type).map_err(|e| perr(2, e.to_string()))?;
        let start = num(4)?;
        let duration = num(5)?;
        let energy = num(6)?;
        let max_rate = num(7)?;

        if !(start.is_finite() && (0.0..MINUTES_PER_DAY_F).contains(&start)) {
            return Err(perr(4, format!("start out of range [0,1440): {start}")));
        }
        if !(duration.is_finite() && duration > 0.0) {
            return Err(perr(5, format!("duration must be > 0, got {duration}")));
        }
        if !(energy.is_finite() && energy >= 0.0) {
            return Err(perr(6, format!("energy must be ≥ 0, got {energy}")));
        }
        if !(max_rate.is_finite() && max_rate > 0.0) {
            return Err(perr(7, format!("max_rate must be > 0, got {max_rate}")));
        }
        let session = Session {
            id: field(0)?.to_string(),
            segment,
            start,
            duration,
            energy,
            max_rate: max_rate.min(segment.rated_kw()),
        };
        if !session.is_feasible() {
            return Err(perr(
                6,
                format!(
                    "infeasible session `{}`: energy {} kWh exceeds window capacity {} kWh",
                    session.id,
                    energy,
                    session.window_capacity_kwh()
                ),
            ));
        }
        out.push(session);
    }
    Ok(out)
}

/// Energy distribution for the sessions starting inside one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEnergyStats {
    /// `None` for the "other" bucket.
    pub window: Option<TimeWindow>,
    pub count: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    /// Counts per bin `[k·bin_width, (k+1)·bin_width)`.
    pub histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyStatsReport {
    pub bin_width_kwh: f64,
    pub windows: Vec<WindowEnergyStats>,
    pub other: WindowEnergyStats,
    pub total: usize,
}

/// Splits sessions by start-time window and summarises each window's energy
/// distribution. Sessions outside every window land in `other`.
pub fn conditional_energy_stats(
    sessions: &[Session],
    windows: &[TimeWindow],
    bin_width_kwh: f64,
) -> Result<EnergyStatsReport> {
    if windows.is_empty() {
        return Err(Error::invalid("windows", "at least one window is required"));
    }
    if !(bin_width_kwh > 0.0) {
        return Err(Error::invalid("bin_width_kwh", "must be > 0"));
    }
    for (i, w) in windows.iter().enumerate() {
        w.validate()
            .map_err(|e| Error::invalid(format!("windows[{i}]"), e.to_string()))?;
        for (j, v) in windows.iter().enumerate().skip(i + 1) {
            if w.overlaps(v) {
                return Err(Error::invalid(
                    "windows",
                    format!("windows {i} {w} and {j} {v} overlap"),
                ));
            }
        }
    }

    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); windows.len() + 1];
    for s in sessions {
        let slot = windows
            .iter()
            .position(|w| w.contains(s.start))
            .unwrap_or(windows.len());
        buckets[slot].push(s.energy);
    }
    let max_e = sessions.iter().map(|s| s.energy).fold(0.0, f64::max);
    let n_bins = (max_e / bin_width_kwh).floor() as usize + 1;

    let summarise = |window: Option<TimeWindow>, mut energies: Vec<f64>| {
        let count = energies.len();
        let mut histogram = vec![0usize; n_bins];
        for &e in &energies {
            histogram[((e / bin_width_kwh).floor() as usize).min(n_bins - 1)] += 1;
        }
        let mean = (count > 0).then(|| energies.iter().sum::<f64>() / count as f64);
        energies.sort_by(f64::total_cmp);
        let median = (count > 0).then(|| {
            if count % 2 == 1 {
                energies[count / 2]
            } else {
                0.5 * (energies[count / 2 - 1] + energies[count / 2])
            }
        });
        WindowEnergyStats {
            window,
            count,
            mean,
            median,
            histogram,
        }
    };

    let other = summarise(None, buckets.pop().unwrap_or_default());
    let windows = windows
        .iter()
        .zip(buckets)
        .map(|(w, b)| summarise(Some(*w), b))
        .collect();
    Ok(EnergyStatsReport {
        bin_width_kwh,
        windows,
        other,
        total: sessions.len(),
    })
}
