//! End-to-end scenario runs on the bundled synthetic models.

use std::collections::BTreeMap;

use evscen_core::groundtruth::GroundTruthSpec;
use evscen_core::rates::RateSchedule;
use evscen_core::scenario::{
    compare_scenarios, rate_design_workflow, run_scenario, GroupValues, ModelSet,
    RateDesignOptions, ScenarioConfig,
};
use evscen_core::surrogate::SurrogateKind;

fn models() -> ModelSet {
    ModelSet::from_ground_truth(&GroundTruthSpec::shipped()).unwrap()
}

#[test]
fn base_case_peaks_late_evening() {
    let r = run_scenario(
        &ScenarioConfig::base_case(5_000_000),
        &models(),
        &BTreeMap::new(),
    )
    .unwrap();
    let m = r.metrics.peak_minute;
    assert!(
        (21 * 60..24 * 60).contains(&m),
        "peak at {}",
        r.metrics.peak_time
    );
    // segments add up to the total, pointwise and in energy
    let seg_energy: f64 = r.segments.iter().map(|s| s.profile.energy_kwh()).sum();
    assert!((seg_energy - r.metrics.total_energy_kwh).abs() <= 1e-6 * seg_energy);
}

#[test]
fn shifting_drivers_to_work_moves_peak_earlier() {
    let base = ScenarioConfig::base_case(1_000_000);
    let mut shifted = base.clone();
    shifted.segment_shares = GroupValues {
        residential: 0.40,
        workplace: 0.50,
        public_l2: 0.05,
        public_dcfc: 0.05,
    };
    let out = compare_scenarios(&[base, shifted], &models(), &BTreeMap::new(), 3).unwrap();
    let (a, b) = (out[0].metrics.peak_minute, out[1].metrics.peak_minute);
    assert!(
        b < a,
        "shifted peak {} vs base {}",
        out[1].metrics.peak_time,
        out[0].metrics.peak_time
    );
}

#[test]
fn flat_rate_design_conserves_energy_up_to_reported_drift() {
    let options = RateDesignOptions {
        n_instances: 40,
        n_vehicles: 40,
        kind: SurrogateKind::Ridge,
        cv_folds: 3,
        ..RateDesignOptions::default()
    };
    let out = rate_design_workflow(
        &RateSchedule::flat("flat", 0.2),
        &models(),
        &ScenarioConfig::base_case(200_000),
        &options,
        5,
    )
    .unwrap();
    // the optimizer moves no energy under a flat price
    for (x, y) in out.training_set.x.iter().zip(&out.training_set.y) {
        let (ex, ey): (f64, f64) = (x.iter().sum(), y.iter().sum());
        assert!((ex - ey).abs() <= 1e-6 * ex, "{ex} vs {ey}");
    }
    let r = &out.report;
    let before = r.segment_before.energy_kwh();
    let after = r.segment_after.energy_kwh();
    assert!((after - before * (1.0 + r.segment_energy_drift)).abs() <= 1e-9 * before);
    assert!(
        r.segment_energy_drift.abs() < 0.05,
        "drift {}",
        r.segment_energy_drift
    );
    assert!(r.timings.training_set > 0.0 && r.timings.apply >= 0.0);
}
