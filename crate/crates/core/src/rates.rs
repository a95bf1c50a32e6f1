//! Electricity rate schedules and the cost of a load profile under them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::{steps_per_day, TimeWindow, MINUTES_PER_DAY};
use crate::error::{Error, Result};
use crate::profile::LoadProfile;

pub const RATE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    #[default]
    CostMin,
    PeakMin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyPrice {
    pub window: TimeWindow,
    /// $/kWh
    pub price: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandCharge {
    pub window: TimeWindow,
    /// $/kW applied to the highest load within the window.
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSchedule {
    pub format_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub energy_prices: Vec<EnergyPrice>,
    #[serde(default)]
    pub demand_charges: Vec<DemandCharge>,
    #[serde(default)]
    pub cap_kw: Option<f64>,
    #[serde(default)]
    pub objective: ObjectiveKind,
}

impl RateSchedule {
    /// Single all-day energy price, nothing else.
    pub fn flat(name: &str, price: f64) -> Self {
        RateSchedule {
            format_version: RATE_FORMAT_VERSION,
            name: name.into(),
            description: String::new(),
            energy_prices: vec![EnergyPrice {
                window: TimeWindow::ALL_DAY,
                price,
            }],
            demand_charges: Vec::new(),
            cap_kw: None,
            objective: ObjectiveKind::CostMin,
        }
    }

    pub fn peak_min(name: &str) -> Self {
        RateSchedule {
            objective: ObjectiveKind::PeakMin,
            ..RateSchedule::flat(name, 0.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != RATE_FORMAT_VERSION {
            return Err(Error::Version {
                what: "rate schedule",
                found: self.format_version,
                expected: RATE_FORMAT_VERSION,
            });
        }
        if self.name.trim().is_empty() {
            return Err(Error::invalid("name", "rate name is empty"));
        }
        let mut owner: Vec<Option<usize>> = vec![None; MINUTES_PER_DAY as usize];
        for (i, e) in self.energy_prices.iter().enumerate() {
            e.window.validate().map_err(|err| {
                Error::invalid(format!("energy_prices[{i}].window"), err.to_string())
            })?;
            if !(e.price.is_finite() && e.price >= 0.0) {
                return Err(Error::invalid(
                    format!("energy_prices[{i}].price"),
                    format!("price must be ≥ 0, got {}", e.price),
                ));
            }
            for (lo, hi) in e.window.segments() {
                for m in lo..hi {
                    if let Some(j) = owner[m as usize] {
                        return Err(Error::invalid(
                            "energy_prices",
                            format!("windows {j} and {i} overlap at minute {m}"),
                        ));
                    }
                    owner[m as usize] = Some(i);
                }
            }
        }
        if let Some(m) = owner.iter().position(Option::is_none) {
            return Err(Error::invalid(
                "energy_prices",
                format!("windows leave a gap at minute {m}"),
            ));
        }
        for (i, d) in self.demand_charges.iter().enumerate() {
            d.window.validate().map_err(|err| {
                Error::invalid(format!("demand_charges[{i}].window"), err.to_string())
            })?;
            if !(d.price.is_finite() && d.price >= 0.0) {
                return Err(Error::invalid(
                    format!("demand_charges[{i}].price"),
                    format!("price must be ≥ 0, got {}", d.price),
                ));
            }
        }
        if let Some(cap) = self.cap_kw {
            if !(cap.is_finite() && cap > 0.0) {
                return Err(Error::invalid(
                    "cap_kw",
                    format!("cap must be > 0, got {cap}"),
                ));
            }
        }
        Ok(())
    }

    /// Price of each minute of the day.
    pub fn minute_prices(&self) -> Vec<f64> {
        let mut p = vec![0.0; MINUTES_PER_DAY as usize];
        for e in &self.energy_prices {
            for (lo, hi) in e.window.segments() {
                p[lo as usize..hi as usize].fill(e.price);
            }
        }
        p
    }

    /// Time-averaged $/kWh over each step of width `dt`.
    pub fn step_prices(&self, dt: u32) -> Result<Vec<f64>> {
        steps_per_day(dt)?;
        Ok(self
            .minute_prices()
            .chunks(dt as usize)
            .map(|c| c.iter().sum::<f64>() / dt as f64)
            .collect())
    }

    /// Steps whose span overlaps demand component `k`.
    pub fn demand_steps(&self, k: usize, dt: u32) -> Result<Vec<usize>> {
        let t = steps_per_day(dt)?;
        let w = &self.demand_charges[k].window;
        Ok((0..t)
            .filter(|&i| w.overlap_minutes(i as u32 * dt, (i as u32 + 1) * dt) > 0)
            .collect())
    }

    pub fn energy_cost(&self, profile: &LoadProfile) -> f64 {
        let prices = self.step_prices(profile.dt).expect("profile dt is valid");
        let dt_h = profile.dt_hours();
        profile
            .values
            .iter()
            .zip(&prices)
            .map(|(l, p)| l * p * dt_h)
            .sum()
    }

    pub fn demand_cost(&self, profile: &LoadProfile) -> f64 {
        (0..self.demand_charges.len())
            .map(|k| {
                let steps = self
                    .demand_steps(k, profile.dt)
                    .expect("profile dt is valid");
                let peak = steps.iter().map(|&i| profile.values[i]).fold(0.0, f64::max);
                self.demand_charges[k].price * peak
            })
            .sum()
    }

    /// Objective value: dollars for cost-minimizing rates, kW peak for PeakMin.
    pub fn total_cost(&self, profile: &LoadProfile) -> f64 {
        match self.objective {
            ObjectiveKind::PeakMin => profile.max(),
            ObjectiveKind::CostMin => self.energy_cost(profile) + self.demand_cost(profile),
        }
    }

    /// SHA-256 over the compact JSON form, so formatting does not matter.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("serializable");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: RateSchedule = serde_json::from_str(text).map_err(|source| Error::Json {
            path: "<rate>".into(),
            source,
        })?;
        r.validate()?;
        Ok(r)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: RateSchedule = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.into(),
            source,
        })?;
        r.validate()?;
        Ok(r)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

pub fn validate_rate(rate: &RateSchedule) -> Result<()> {
    rate.validate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_window() -> RateSchedule {
        RateSchedule {
            energy_prices: vec![
                EnergyPrice {
                    window: TimeWindow::new(0, 720).unwrap(),
                    price: 0.10,
                },
                EnergyPrice {
                    window: TimeWindow::new(720, 1440).unwrap(),
                    price: 0.20,
                },
            ],
            ..RateSchedule::flat("two", 0.0)
        }
    }

    fn demand(components: Vec<(TimeWindow, f64)>) -> RateSchedule {
        RateSchedule {
            demand_charges: components
                .into_iter()
                .map(|(window, price)| DemandCharge { window, price })
                .collect(),
            ..RateSchedule::flat("d", 0.0)
        }
    }

    #[test]
    fn energy_cost_examples() {
        let flat10 = LoadProfile::new(60, vec![10.0; 24]).unwrap();
        assert!((RateSchedule::flat("f", 0.10).energy_cost(&flat10) - 24.0).abs() < 1e-12);
        assert_eq!(
            RateSchedule::flat("f", 0.10).energy_cost(&LoadProfile::zeros(60).unwrap()),
            0.0
        );
        assert!((two_window().energy_cost(&flat10) - 36.0).abs() < 1e-12);
    }

    #[test]
    fn demand_cost_examples() {
        let p = LoadProfile::new(480, vec![10.0, 20.0, 15.0]).unwrap();
        let r = demand(vec![(TimeWindow::ALL_DAY, 2.0)]);
        assert_eq!(r.demand_cost(&p), 40.0);
        assert_eq!(r.demand_cost(&LoadProfile::zeros(480).unwrap()), 0.0);

        let mut v = vec![5.0; 24];
        v[12] = 50.0;
        v[18] = 20.0;
        let p = LoadProfile::new(60, v).unwrap();
        let r = demand(vec![
            (TimeWindow::ALL_DAY, 1.0),
            (TimeWindow::hhmm("16:00", "21:00").unwrap(), 3.0),
        ]);
        assert_eq!(r.demand_cost(&p), 110.0);
        assert_eq!(r.total_cost(&p), 110.0);
    }

    #[test]
    fn total_cost_kinds() {
        let p = LoadProfile::new(480, vec![10.0, 20.0, 15.0]).unwrap();
        assert_eq!(RateSchedule::peak_min("pm").total_cost(&p), 20.0);
        let tou = two_window();
        assert_eq!(tou.total_cost(&p), tou.energy_cost(&p));
    }

    #[test]
    fn wrapping_demand_window() {
        let mut v = vec![0.0; 24];
        v[23] = 7.0;
        v[1] = 9.0;
        let p = LoadProfile::new(60, v).unwrap();
        let r = demand(vec![(TimeWindow::hhmm("22:00", "02:00").unwrap(), 1.0)]);
        assert_eq!(r.demand_cost(&p), 9.0);
    }

    #[test]
    fn validation_diagnostics() {
        two_window().validate().unwrap();
        let mut gap = two_window();
        gap.energy_prices[1].window = TimeWindow::new(730, 1440).unwrap();
        let msg = gap.validate().unwrap_err().to_string();
        assert!(msg.contains("gap at minute 720"), "{msg}");

        let mut overlap = two_window();
        overlap.energy_prices[1].window = TimeWindow::new(700, 1440).unwrap();
        assert!(overlap
            .validate()
            .unwrap_err()
            .to_string()
            .contains("overlap"));

        let mut neg = two_window();
        neg.energy_prices[0].price = -0.1;
        assert!(neg
            .validate()
            .unwrap_err()
            .to_string()
            .contains("energy_prices[0].price"));

        let mut cap = two_window();
        cap.cap_kw = Some(0.0);
        assert!(cap.validate().is_err());
    }

    #[test]
    fn shipped_fixtures_validate() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../rates");
        let mut n = 0;
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "json") {
                RateSchedule::load(&path).unwrap();
                n += 1;
            }
        }
        assert_eq!(n, 6);
    }

    #[test]
    fn hash_ignores_formatting() {
        let r = two_window();
        let pretty = RateSchedule::from_json(&r.to_json()).unwrap();
        assert_eq!(pretty.content_hash(), r.content_hash());
        let mut other = r.clone();
        other.energy_prices[0].price = 0.11;
        assert_ne!(other.content_hash(), r.content_hash());
    }

    fn e19_like() -> RateSchedule {
        RateSchedule {
            energy_prices: vec![
                EnergyPrice {
                    window: TimeWindow::new(0, 480).unwrap(),
                    price: 0.10,
                },
                EnergyPrice {
                    window: TimeWindow::new(480, 960).unwrap(),
                    price: 0.13,
                },
                EnergyPrice {
                    window: TimeWindow::new(960, 1260).unwrap(),
                    price: 0.17,
                },
                EnergyPrice {
                    window: TimeWindow::new(1260, 1440).unwrap(),
                    price: 0.13,
                },
            ],
            demand_charges: vec![
                DemandCharge {
                    window: TimeWindow::ALL_DAY,
                    price: 20.0,
                },
                DemandCharge {
                    window: TimeWindow::new(960, 1260).unwrap(),
                    price: 15.0,
                },
            ],
            ..RateSchedule::flat("e19", 0.0)
        }
    }

    proptest! {
        #[test]
        fn demand_cost_homogeneous(v in prop::collection::vec(0.0f64..100.0, 96), c in 0.0f64..20.0) {
            let r = RateSchedule { energy_prices: RateSchedule::flat("x", 0.0).energy_prices, ..e19_like() };
            let p = LoadProfile::new(15, v).unwrap();
            let a = r.demand_cost(&p.scaled(c));
            let b = c * r.demand_cost(&p);
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }

        #[test]
        fn cost_monotone(v in prop::collection::vec(0.0f64..100.0, 96), bump in prop::collection::vec(0.0f64..10.0, 96)) {
            let r = e19_like();
            let lo = LoadProfile::new(15, v.clone()).unwrap();
            let hi = LoadProfile::new(15, v.iter().zip(&bump).map(|(a, b)| a + b).collect()).unwrap();
            prop_assert!(r.total_cost(&lo) <= r.total_cost(&hi) + 1e-9);
        }

        #[test]
        fn cost_resample_invariant(v in prop::collection::vec(0.0f64..100.0, 24)) {
            // hourly piecewise-constant profile, windows on hour boundaries
            let r = e19_like();
            let hourly = LoadProfile::new(60, v).unwrap();
            let fine = hourly.resample(15).unwrap();
            prop_assert!((r.total_cost(&hourly) - r.total_cost(&fine)).abs() < 1e-9 * r.total_cost(&hourly).max(1.0));
        }
    }
}
