//! Session models on generated data: mixture fits, timer flags, profiles.

use evscen_core::clock::TimeWindow;
use evscen_core::gmm::{fit_em, select_components, EmOptions};
use evscen_core::groundtruth::{generate_sessions, GroundTruthSpec};
use evscen_core::profile::aggregate_sessions;
use evscen_core::session::{conditional_energy_stats, DayType, Level, Location, Segment, Session};

fn seg(l: Location, v: Level) -> Segment {
    Segment::new(l, v, DayType::Weekday).unwrap()
}

/// Circular distance in minutes.
fn minute_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1440.0);
    d.min(1440.0 - d)
}

#[test]
fn residential_fit_flags_exactly_the_timer_components() {
    let spec = GroundTruthSpec::shipped();
    let segment = seg(Location::ResidentialSf, Level::L2);
    let gen = spec.segment(segment).unwrap();
    let timer_starts: Vec<f64> = gen
        .components
        .iter()
        .filter(|c| c.timer)
        .map(|c| c.start_mean)
        .collect();
    assert_eq!(timer_starts.len(), 2);

    let sessions = generate_sessions(&spec, segment, 40_000, 11).unwrap();
    let data: Vec<[f64; 2]> = sessions.iter().map(|s| [s.start, s.energy]).collect();
    let g_range: Vec<usize> = (4..=8).collect();
    let sel = select_components(&data, &g_range, &EmOptions::default(), 11).unwrap();
    let model = sel.chosen_model();
    let window = TimeWindow::hhmm("19:00", "03:00").unwrap();
    let flagged = model.flag_timer_components(&window, 10.0);
    assert_eq!(
        flagged.len(),
        timer_starts.len(),
        "G={} flagged {flagged:?}",
        model.g()
    );
    for &t in &timer_starts {
        let hit = flagged
            .iter()
            .filter(|&&k| minute_gap(model.means[k][0], t) < 5.0)
            .count();
        assert_eq!(hit, 1, "timer at {t} not matched by {flagged:?}");
    }
}

#[test]
fn sampled_occupancy_matches_weights() {
    let spec = GroundTruthSpec::shipped();
    let segment = seg(Location::Workplace, Level::L2);
    let sessions = generate_sessions(&spec, segment, 20_000, 3).unwrap();
    let data: Vec<[f64; 2]> = sessions.iter().map(|s| [s.start, s.energy]).collect();
    let model = fit_em(&data, 4, &EmOptions::default(), 3).unwrap();
    let n = 200_000;
    let draws = model.sample_labelled(n, 8).unwrap();
    let mut counts = vec![0usize; model.g()];
    for (k, _) in &draws {
        counts[*k] += 1;
    }
    for (k, w) in model.weights.iter().enumerate() {
        let freq = counts[k] as f64 / n as f64;
        assert!((freq - w).abs() <= 0.01, "component {k}: {freq} vs {w}");
    }
}

#[test]
fn afternoon_workplace_sessions_need_less_energy() {
    let spec = GroundTruthSpec::shipped();
    let sessions =
        generate_sessions(&spec, seg(Location::Workplace, Level::L2), 30_000, 5).unwrap();
    let windows = [
        TimeWindow::hhmm("06:00", "11:00").unwrap(),
        TimeWindow::hhmm("12:00", "17:00").unwrap(),
    ];
    let stats = conditional_energy_stats(&sessions, &windows, 1.0).unwrap();
    let morning = stats.windows[0].mean.unwrap();
    let afternoon = stats.windows[1].mean.unwrap();
    assert!(afternoon < morning, "{afternoon} vs {morning}");
}

#[test]
fn simultaneous_dcfc_starts_spike_above_15_mw() {
    let segment = seg(Location::PublicDcfc, Level::Dcfc);
    let mk = |i: usize, start: f64| Session {
        id: format!("d{i}"),
        segment,
        start,
        duration: 40.0,
        energy: 50.0,
        max_rate: 150.0,
    };
    // 100 sessions share 18:00; the rest are spread one per ~0.9 s over the day
    let mut sessions: Vec<Session> = (0..100).map(|i| mk(i, 1080.0)).collect();
    sessions.extend((100..100_000).map(|i| mk(i, (i as f64 * 0.0144) % 1440.0)));
    let profile = aggregate_sessions(&sessions, 1).unwrap();
    let spike = profile.values[1080];
    // the shared sessions alone draw 100 x 150 kW for the whole minute
    assert!(spike >= 15_000.0, "{spike} kW");
    let energy: f64 = sessions.iter().map(|s| s.energy).sum();
    assert!((profile.energy_kwh() - energy).abs() <= 1e-6 * energy);
}
