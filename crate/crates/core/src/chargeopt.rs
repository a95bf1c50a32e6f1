//! Load-modulation scheduling: the exact LP over per-session charging rates,
//! instance preparation, and an exhaustive search used as a test oracle.

use std::path::Path;

use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem, Variable};
use serde::{Deserialize, Serialize};

use crate::clock::{steps_per_day, MINUTES_PER_DAY_F};
use crate::error::{Error, Result};
use crate::profile::{aggregate_sessions, LoadProfile};
use crate::rates::{ObjectiveKind, RateSchedule};
use crate::session::{read_sessions_csv, write_sessions_csv, Session};

/// Step size used for every control problem, in minutes.
pub const CONTROL_DT: u32 = 15;

/// Tolerance on delivered energy per session, kWh.
pub const ENERGY_TOL_KWH: f64 = 1e-6;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClipReport {
    /// Sessions whose plug-in window was cut at midnight.
    pub truncated_at_midnight: usize,
    /// Sessions whose energy exceeded window capacity.
    pub clipped: usize,
    pub clipped_kwh: f64,
}

/// Makes sessions day-contained and individually feasible.
pub fn prepare_instance(sessions: &[Session], dt: u32) -> Result<(Vec<Session>, ClipReport)> {
    steps_per_day(dt)?;
    let mut report = ClipReport::default();
    let mut out = Vec::with_capacity(sessions.len());
    for s in sessions {
        let mut s = s.clone();
        if s.departure() > MINUTES_PER_DAY_F {
            s.duration = MINUTES_PER_DAY_F - s.start;
            report.truncated_at_midnight += 1;
        }
        let cap = s.window_capacity_kwh();
        if s.energy > cap {
            report.clipped += 1;
            report.clipped_kwh += s.energy - cap;
            s.energy = cap;
        }
        s.validate()?;
        out.push(s);
    }
    Ok((out, report))
}

/// Minutes of the circular plug-in window inside `[lo, hi)`.
fn window_overlap(s: &Session, lo: f64, hi: f64) -> f64 {
    let (a, b) = (s.start, s.departure());
    let mut total = 0.0;
    for lap in [-1.0, 0.0, 1.0] {
        let shift = lap * MINUTES_PER_DAY_F;
        total += ((b + shift).min(hi) - (a + shift).max(lo)).max(0.0);
    }
    total.min(hi - lo)
}

/// Per-step kW bound of a session: rated power scaled by the fraction of
/// the step covered by its plug-in window. This keeps the uncontrolled
/// schedule feasible at any step size.
pub fn rate_bounds(s: &Session, dt: u32) -> Result<Vec<f64>> {
    let t = steps_per_day(dt)?;
    let p = s.power_kw();
    let d = dt as f64;
    Ok((0..t)
        .map(|i| {
            let lo = i as f64 * d;
            p * window_overlap(s, lo, lo + d) / d
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeSchedule {
    pub dt: u32,
    pub session_ids: Vec<String>,
    /// `rates[i][t]`, kW.
    pub rates: Vec<Vec<f64>>,
    pub aggregate: LoadProfile,
    /// Rate objective evaluated on the aggregate ($, or kW for PeakMin).
    pub cost: f64,
    /// Objective value reported by the solver.
    pub lp_objective: f64,
}

impl ChargeSchedule {
    /// Checks bounds, window containment and energy delivery.
    pub fn check(&self, sessions: &[Session]) -> Result<()> {
        if sessions.len() != self.rates.len() {
            return Err(Error::invalid(
                "rates",
                "one rate vector per session expected",
            ));
        }
        let dt_h = self.dt as f64 / 60.0;
        for (s, r) in sessions.iter().zip(&self.rates) {
            let bounds = rate_bounds(s, self.dt)?;
            let err = |m: String| Error::Session {
                id: s.id.clone(),
                message: m,
            };
            for (t, (&v, &b)) in r.iter().zip(&bounds).enumerate() {
                if v < 0.0 {
                    return Err(err(format!("negative rate {v} at step {t}")));
                }
                if v > s.power_kw() + 1e-9 {
                    return Err(err(format!("rate {v} above limit at step {t}")));
                }
                if b == 0.0 && v > 0.0 {
                    return Err(err(format!("charging outside plug-in window at step {t}")));
                }
                if v > b + 1e-9 {
                    return Err(err(format!(
                        "rate {v} exceeds window bound {b} at step {t}"
                    )));
                }
            }
            let delivered: f64 = r.iter().sum::<f64>() * dt_h;
            if (delivered - s.energy).abs() > ENERGY_TOL_KWH {
                return Err(err(format!(
                    "delivered {delivered} kWh, required {} kWh",
                    s.energy
                )));
            }
        }
        Ok(())
    }
}

/// Solves the charging LP exactly for `sessions` under `rate`.
pub fn optimize(sessions: &[Session], rate: &RateSchedule, dt: u32) -> Result<ChargeSchedule> {
    rate.validate()?;
    let t_len = steps_per_day(dt)?;
    let dt_h = dt as f64 / 60.0;
    for s in sessions {
        s.validate()
            .map_err(|e| Error::Infeasible(format!("{e}; run prepare_instance first")))?;
    }
    let prices = rate.step_prices(dt)?;
    let peak_min = rate.objective == ObjectiveKind::PeakMin;

    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let mut vars: Vec<Vec<Option<Variable>>> = Vec::with_capacity(sessions.len());
    let mut per_step: Vec<Vec<Variable>> = vec![Vec::new(); t_len];
    for s in sessions {
        let bounds = rate_bounds(s, dt)?;
        let mut row = vec![None; t_len];
        if s.energy > 0.0 {
            let mut energy = LinearExpr::empty();
            for (t, &b) in bounds.iter().enumerate() {
                if b > 0.0 {
                    let obj = if peak_min { 0.0 } else { prices[t] * dt_h };
                    let v = lp.add_var(obj, (0.0, b));
                    energy.add(v, dt_h);
                    per_step[t].push(v);
                    row[t] = Some(v);
                }
            }
            lp.add_constraint(energy, ComparisonOp::Eq, s.energy);
        }
        vars.push(row);
    }

    let load = |t: usize, aux: Option<Variable>| {
        let mut e: LinearExpr = per_step[t].iter().map(|&v| (v, 1.0)).collect();
        if let Some(a) = aux {
            e.add(a, -1.0);
        }
        e
    };
    if peak_min {
        let aux = lp.add_var(1.0, (0.0, f64::INFINITY));
        for t in (0..t_len).filter(|&t| !per_step[t].is_empty()) {
            lp.add_constraint(load(t, Some(aux)), ComparisonOp::Le, 0.0);
        }
    } else {
        for (k, d) in rate.demand_charges.iter().enumerate() {
            if d.price == 0.0 {
                continue;
            }
            let aux = lp.add_var(d.price, (0.0, f64::INFINITY));
            for t in rate.demand_steps(k, dt)? {
                if !per_step[t].is_empty() {
                    lp.add_constraint(load(t, Some(aux)), ComparisonOp::Le, 0.0);
                }
            }
        }
    }
    if let Some(cap) = rate.cap_kw {
        for t in (0..t_len).filter(|&t| !per_step[t].is_empty()) {
            lp.add_constraint(load(t, None), ComparisonOp::Le, cap);
        }
    }

    let solution = lp.solve().map_err(|e| match e {
        minilp::Error::Infeasible => match rate.cap_kw {
            Some(cap) => Error::Infeasible(format!(
                "capacity cap of {cap} kW is binding: the required energy cannot be delivered under it"
            )),
            None => Error::Infeasible("session energy constraints cannot be met".into()),
        },
        minilp::Error::Unbounded => Error::Numerical("internal error: LP reported unbounded".into()),
    })?;

    let mut rates = Vec::with_capacity(sessions.len());
    for (s, row) in sessions.iter().zip(&vars) {
        let bounds = rate_bounds(s, dt)?;
        let r: Vec<f64> = row
            .iter()
            .zip(&bounds)
            .map(|(v, &b)| v.map_or(0.0, |v| solution[v].clamp(0.0, b)))
            .collect();
        rates.push(r);
    }
    let mut agg = vec![0.0; t_len];
    for r in &rates {
        for (a, v) in agg.iter_mut().zip(r) {
            *a += v;
        }
    }
    let aggregate = LoadProfile { dt, values: agg };
    let schedule = ChargeSchedule {
        dt,
        session_ids: sessions.iter().map(|s| s.id.clone()).collect(),
        cost: rate.total_cost(&aggregate),
        lp_objective: solution.objective(),
        rates,
        aggregate,
    };
    Ok(schedule)
}

/// Uncontrolled aggregate of the same sessions at `dt`.
pub fn uncontrolled(sessions: &[Session], dt: u32) -> Result<LoadProfile> {
    aggregate_sessions(sessions, dt)
}

pub const BRUTE_MAX_SESSIONS: usize = 6;
pub const BRUTE_MAX_STEPS: usize = 16;
const BRUTE_MAX_SCHEDULES: usize = 2_000_000;

/// Minimal cost over schedules where each session charges at 0, ½ or 1
/// times its per-step bound. Exhaustive with cost-based pruning; only the
/// steps some session can use ("active" steps) count toward the size limit.
pub fn brute_force_cost(sessions: &[Session], rate: &RateSchedule, dt: u32) -> Result<f64> {
    rate.validate()?;
    let t_len = steps_per_day(dt)?;
    if sessions.len() > BRUTE_MAX_SESSIONS {
        return Err(Error::TooLarge(format!(
            "{} sessions (limit {BRUTE_MAX_SESSIONS})",
            sessions.len()
        )));
    }
    for s in sessions {
        s.validate()?;
    }
    let bounds: Vec<Vec<f64>> = sessions
        .iter()
        .map(|s| rate_bounds(s, dt))
        .collect::<Result<_>>()?;
    let active: Vec<usize> = (0..t_len)
        .filter(|&t| bounds.iter().any(|b| b[t] > 0.0))
        .collect();
    if active.len() > BRUTE_MAX_STEPS {
        return Err(Error::TooLarge(format!(
            "{} active steps (limit {BRUTE_MAX_STEPS})",
            active.len()
        )));
    }
    let n = active.len();
    let dt_h = dt as f64 / 60.0;
    let prices = rate.step_prices(dt)?;
    let peak_min = rate.objective == ObjectiveKind::PeakMin;
    let step_price: Vec<f64> = active
        .iter()
        .map(|&t| if peak_min { 0.0 } else { prices[t] * dt_h })
        .collect();
    // demand components as (price, active indices); PeakMin is one all-day component
    let demand: Vec<(f64, Vec<usize>)> = if peak_min {
        vec![(1.0, (0..n).collect())]
    } else {
        (0..rate.demand_charges.len())
            .map(|k| {
                let steps = rate.demand_steps(k, dt)?;
                let idx = (0..n).filter(|&j| steps.contains(&active[j])).collect();
                Ok((rate.demand_charges[k].price, idx))
            })
            .collect::<Result<_>>()?
    };
    let cap = rate.cap_kw.unwrap_or(f64::INFINITY);

    // all grid schedules per session, as (energy cost, profile over active steps)
    let mut options: Vec<Vec<(f64, Vec<f64>)>> = Vec::with_capacity(sessions.len());
    for (s, b) in sessions.iter().zip(&bounds) {
        let b_act: Vec<f64> = active.iter().map(|&t| b[t]).collect();
        let mut found = Vec::new();
        enumerate_session(&b_act, s.energy, dt_h, &mut found)?;
        if found.is_empty() {
            return Err(Error::Infeasible(format!(
                "session {} has no schedule on the {{0, ½, 1}} grid",
                s.id
            )));
        }
        let mut opts: Vec<(f64, Vec<f64>)> = found
            .into_iter()
            .map(|v| (v.iter().zip(&step_price).map(|(a, p)| a * p).sum(), v))
            .filter(|(_, v)| v.iter().all(|&x| x <= cap + 1e-9))
            .collect();
        opts.sort_by(|a, b| a.0.total_cmp(&b.0));
        options.push(opts);
    }
    // energy cost is separable, so the cheapest remaining energy is a valid lower bound
    let mut rest_lb = vec![0.0; sessions.len() + 1];
    for i in (0..sessions.len()).rev() {
        rest_lb[i] = rest_lb[i + 1] + options[i].first().map_or(f64::INFINITY, |o| o.0);
    }

    let demand_cost = |agg: &[f64]| -> f64 {
        demand
            .iter()
            .map(|(p, idx)| p * idx.iter().map(|&j| agg[j]).fold(0.0, f64::max))
            .sum()
    };

    struct Search<'a> {
        options: &'a [Vec<(f64, Vec<f64>)>],
        rest_lb: &'a [f64],
        cap: f64,
        best: f64,
    }
    fn dfs(
        st: &mut Search,
        depth: usize,
        agg: &mut Vec<f64>,
        energy: f64,
        demand_cost: &dyn Fn(&[f64]) -> f64,
    ) {
        if depth == st.options.len() {
            let c = energy + demand_cost(agg);
            if c < st.best {
                st.best = c;
            }
            return;
        }
        for (e, v) in &st.options[depth] {
            let lb_energy = energy + e + st.rest_lb[depth + 1];
            if lb_energy >= st.best {
                // options are sorted by energy cost
                break;
            }
            for (a, x) in agg.iter_mut().zip(v) {
                *a += x;
            }
            if agg.iter().all(|&a| a <= st.cap + 1e-9) && lb_energy + demand_cost(agg) < st.best {
                dfs(st, depth + 1, agg, energy + e, demand_cost);
            }
            for (a, x) in agg.iter_mut().zip(v) {
                *a -= x;
            }
        }
    }

    let mut search = Search {
        options: &options,
        rest_lb: &rest_lb,
        cap,
        best: f64::INFINITY,
    };
    let mut agg = vec![0.0; n];
    dfs(&mut search, 0, &mut agg, 0.0, &demand_cost);
    if search.best.is_finite() {
        Ok(search.best)
    } else {
        Err(Error::Infeasible(
            "no grid schedule satisfies the capacity cap".into(),
        ))
    }
}

fn enumerate_session(
    bounds: &[f64],
    energy: f64,
    dt_h: f64,
    out: &mut Vec<Vec<f64>>,
) -> Result<()> {
    let tol = 1e-9 * energy.max(1.0);
    let mut suffix = vec![0.0; bounds.len() + 1];
    for i in (0..bounds.len()).rev() {
        suffix[i] = suffix[i + 1] + bounds[i] * dt_h;
    }
    let mut cur = vec![0.0; bounds.len()];
    fn go(
        i: usize,
        remaining: f64,
        bounds: &[f64],
        suffix: &[f64],
        dt_h: f64,
        tol: f64,
        cur: &mut Vec<f64>,
        out: &mut Vec<Vec<f64>>,
    ) -> Result<()> {
        if remaining < -tol || remaining > suffix[i] + tol {
            return Ok(());
        }
        if i == bounds.len() {
            if out.len() >= BRUTE_MAX_SCHEDULES {
                return Err(Error::TooLarge(format!(
                    "more than {BRUTE_MAX_SCHEDULES} schedules for one session"
                )));
            }
            out.push(cur.clone());
            return Ok(());
        }
        let levels: &[f64] = if bounds[i] > 0.0 {
            &[0.0, 0.5, 1.0]
        } else {
            &[0.0]
        };
        for &l in levels {
            let r = l * bounds[i];
            cur[i] = r;
            go(
                i + 1,
                remaining - r * dt_h,
                bounds,
                suffix,
                dt_h,
                tol,
                cur,
                out,
            )?;
        }
        cur[i] = 0.0;
        Ok(())
    }
    go(0, energy, bounds, &suffix, dt_h, tol, &mut cur, out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstanceMeta {
    dt: u32,
    sessions: String,
    rate: String,
}

/// Writes `sessions.csv`, `rate.json` and `instance.json` into `dir`.
pub fn dump_instance(
    sessions: &[Session],
    rate: &RateSchedule,
    dt: u32,
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_sessions_csv(sessions, dir.join("sessions.csv"))?;
    rate.save(dir.join("rate.json"))?;
    let meta = InstanceMeta {
        dt,
        sessions: "sessions.csv".into(),
        rate: "rate.json".into(),
    };
    let path = dir.join("instance.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&meta).expect("serializable"),
    )
    .map_err(|e| Error::io(&path, e))
}

pub fn load_instance(dir: impl AsRef<Path>) -> Result<(Vec<Session>, RateSchedule, u32)> {
    let dir = dir.as_ref();
    let path = dir.join("instance.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: InstanceMeta =
        serde_json::from_str(&text).map_err(|source| Error::Json { path, source })?;
    steps_per_day(meta.dt)?;
    Ok((
        read_sessions_csv(dir.join(&meta.sessions))?,
        RateSchedule::load(dir.join(&meta.rate))?,
        meta.dt,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::TimeWindow;
    use crate::rates::EnergyPrice;
    use crate::session::{DayType, Level, Location, Segment};

    fn l2(id: &str, start: f64, duration: f64, energy: f64) -> Session {
        Session {
            id: id.into(),
            segment: Segment::new(Location::Workplace, Level::L2, DayType::Weekday).unwrap(),
            start,
            duration,
            energy,
            max_rate: 6.6,
        }
    }

    /// Hourly TOU with a distinct price per hour; hour 3 of the window is cheapest.
    fn hourly_tou(cheap_hour: u32) -> RateSchedule {
        RateSchedule {
            energy_prices: (0..24)
                .map(|h| EnergyPrice {
                    window: TimeWindow::new(h * 60, (h + 1) * 60).unwrap(),
                    price: if h == cheap_hour {
                        0.05
                    } else {
                        0.10 + 0.01 * h as f64
                    },
                })
                .collect(),
            ..RateSchedule::flat("tou", 0.0)
        }
    }

    #[test]
    fn single_session_picks_cheapest_hour() {
        let s = vec![l2("a", 480.0, 240.0, 6.6)];
        let rate = hourly_tou(11);
        let sched = optimize(&s, &rate, 60).unwrap();
        sched.check(&s).unwrap();
        assert!((sched.rates[0][11] - 6.6).abs() < 1e-9);
        // every single-hour placement, priced directly
        let best = (8..12)
            .map(|h| rate.energy_prices[h].price * 6.6)
            .fold(f64::INFINITY, f64::min);
        assert!((sched.cost - best).abs() < 1e-9);
        let bf = brute_force_cost(&s, &rate, 60).unwrap();
        assert!((bf - sched.cost).abs() < 1e-9);
    }

    #[test]
    fn peak_min_two_sessions_flat() {
        let s = vec![l2("a", 600.0, 120.0, 6.6), l2("b", 600.0, 120.0, 6.6)];
        let rate = RateSchedule::peak_min("pm");
        let sched = optimize(&s, &rate, 60).unwrap();
        sched.check(&s).unwrap();
        assert!((sched.cost - 6.6).abs() < 1e-9);
        assert!((sched.aggregate.values[10] - 6.6).abs() < 1e-9);
        assert!((sched.aggregate.values[11] - 6.6).abs() < 1e-9);
        assert!((brute_force_cost(&s, &rate, 60).unwrap() - 6.6).abs() < 1e-9);
    }

    #[test]
    fn flat_price_cost_is_energy() {
        let s = vec![l2("a", 100.0, 300.0, 10.0), l2("b", 200.0, 500.0, 20.0)];
        let rate = RateSchedule::flat("f", 0.2);
        let sched = optimize(&s, &rate, 15).unwrap();
        assert!((sched.cost - 0.2 * 30.0).abs() < 1e-9);
    }

    #[test]
    fn cap_at_min_peak_is_feasible() {
        let s = vec![l2("a", 600.0, 120.0, 6.6), l2("b", 600.0, 120.0, 6.6)];
        let mut rate = RateSchedule::flat("c", 0.1);
        rate.cap_kw = Some(6.6);
        let sched = optimize(&s, &rate, 60).unwrap();
        assert!(sched.aggregate.max() <= 6.6 + 1e-9);
        rate.cap_kw = Some(6.0);
        let err = optimize(&s, &rate, 60).unwrap_err();
        assert!(err.to_string().contains("cap"), "{err}");
    }

    #[test]
    fn exact_fill_has_no_freedom() {
        let s = vec![l2("a", 120.0, 120.0, 13.2)];
        let rate = hourly_tou(5);
        let lp = optimize(&s, &rate, 60).unwrap().cost;
        let bf = brute_force_cost(&s, &rate, 60).unwrap();
        assert_eq!(lp.to_bits(), bf.to_bits());
    }

    #[test]
    fn fractional_window_edges() {
        // window starts mid-step; the uncontrolled schedule must remain feasible
        let s = vec![l2("a", 607.0, 50.0, 5.0)];
        let rate = RateSchedule::peak_min("pm");
        let sched = optimize(&s, &rate, 15).unwrap();
        sched.check(&s).unwrap();
        let unc = uncontrolled(&s, 15).unwrap();
        assert!(sched.cost <= rate.total_cost(&unc) + 1e-9);
    }

    #[test]
    fn prepare_examples() {
        let (out, rep) = prepare_instance(&[], 15).unwrap();
        assert!(out.is_empty() && rep == ClipReport::default());
        let ok = l2("a", 100.0, 60.0, 6.0);
        assert_eq!(
            prepare_instance(std::slice::from_ref(&ok), 15).unwrap().0,
            vec![ok]
        );
        let over = Session {
            energy: 100.0,
            ..l2("b", 100.0, 60.0, 0.0)
        };
        let (out, rep) = prepare_instance(&[over], 15).unwrap();
        assert!((out[0].energy - 6.6).abs() < 1e-12);
        assert_eq!(rep.clipped, 1);
        assert!((rep.clipped_kwh - 93.4).abs() < 1e-9);
        let late = l2("c", 1380.0, 180.0, 13.2);
        let (out, rep) = prepare_instance(&[late], 15).unwrap();
        assert_eq!(out[0].duration, 60.0);
        assert!((out[0].energy - 6.6).abs() < 1e-12);
        assert_eq!(rep.truncated_at_midnight, 1);
    }

    #[test]
    fn brute_force_limits() {
        let many: Vec<Session> = (0..7).map(|i| l2(&i.to_string(), 0.0, 60.0, 1.0)).collect();
        assert!(matches!(
            brute_force_cost(&many, &RateSchedule::flat("f", 0.1), 60),
            Err(Error::TooLarge(_))
        ));
        let long = vec![l2("a", 0.0, 1000.0, 1.0)];
        assert!(matches!(
            brute_force_cost(&long, &RateSchedule::flat("f", 0.1), 60),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn duplication_scales_peak() {
        let base = vec![
            l2("a", 480.0, 180.0, 8.0),
            l2("b", 540.0, 120.0, 9.0),
            l2("c", 600.0, 240.0, 4.0),
        ];
        let rate = RateSchedule::peak_min("pm");
        let p1 = optimize(&base, &rate, 15).unwrap().cost;
        for k in [2usize, 3] {
            let dup: Vec<Session> = (0..k).flat_map(|_| base.clone()).collect();
            let pk = optimize(&dup, &rate, 15).unwrap().cost;
            assert!(
                (pk - k as f64 * p1).abs() < 1e-6 * pk,
                "k={k}: {pk} vs {p1}"
            );
        }
    }

    #[test]
    fn dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = vec![l2("a", 480.0, 180.0, 8.0)];
        let rate = RateSchedule::peak_min("pm");
        dump_instance(&s, &rate, 15, dir.path()).unwrap();
        let (s2, r2, dt) = load_instance(dir.path()).unwrap();
        assert_eq!((s2, r2, dt), (s, rate, 15));
    }
}
