use std::time::Duration;

use oricf_core::telemetry::{
    build_report, collect, energy_reduction, load_reduction, power_at, sample_host, stats, stats_of, Basis,
    EnergyReport, PowerParams, ReplaySampler, TelemetryError, UtilizationTrace,
};
use proptest::prelude::*;

const P: PowerParams = PowerParams {
    p_idle_w: 5.0,
    p_full_w: 25.0,
};

#[test]
fn headline_power_numbers() {
    assert_eq!(power_at(0.95, &P).unwrap(), 24.0);
    assert!((power_at(0.16, &P).unwrap() - 8.2).abs() <= 1e-12);
    let r = energy_reduction(8.2, 24.0).unwrap();
    assert!((r - 0.658_333_333_333_333_3).abs() < 1e-12);
    assert_eq!(format!("{:.1}%", r * 100.0), "65.8%");
    let l = load_reduction(16.0, 95.0).unwrap();
    assert_eq!(format!("{l:.4}"), "0.8316");
}

// Brute-force oracle: median by rank counting, variance from all pairwise
// squared differences, mean by pairwise-summed halves.
fn oracle(xs: &[f64]) -> (f64, f64, f64) {
    fn sum(xs: &[f64]) -> f64 {
        match xs.len() {
            0 => 0.0,
            1 => xs[0],
            n => sum(&xs[..n / 2]) + sum(&xs[n / 2..]),
        }
    }
    let n = xs.len();
    let mean = sum(xs) / n as f64;
    let rank = |k: usize| -> f64 {
        *xs.iter()
            .find(|&&x| {
                let below = xs.iter().filter(|&&y| y < x).count();
                let upto = xs.iter().filter(|&&y| y <= x).count();
                below <= k && k < upto
            })
            .unwrap()
    };
    let median = if n % 2 == 1 {
        rank(n / 2)
    } else {
        (rank(n / 2 - 1) + rank(n / 2)) / 2.0
    };
    let mut pair = 0.0;
    for a in xs {
        for b in xs {
            pair += (a - b) * (a - b);
        }
    }
    let var = pair / (2.0 * (n * n) as f64);
    (mean, median, var)
}

fn pcts() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        prop_oneof![(0u32..=10_000).prop_map(|v| v as f64 / 100.0), 0.0f64..=100.0],
        1..60,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn stats_match_oracle(xs in pcts()) {
        let s = stats_of(&xs).unwrap();
        let (mean, median, var) = oracle(&xs);
        prop_assert!((s.mean_pct - mean).abs() <= 1e-9);
        prop_assert_eq!(s.median_pct, median);
        prop_assert!((s.variance - var).abs() <= 1e-9, "{} vs {}", s.variance, var);
        prop_assert!((s.stddev_pct - var.sqrt()).abs() <= 1e-6);
        prop_assert_eq!(s.stddev_pct * s.stddev_pct, s.variance);
        prop_assert_eq!(s.variance.sqrt(), s.stddev_pct);
        prop_assert!(s.variance >= 0.0);
    }

    #[test]
    fn power_is_affine_and_increasing(a in 0.0f64..=1.0, b in 0.0f64..=1.0, idle in 0.1f64..50.0, span in 0.1f64..200.0) {
        let p = PowerParams { p_idle_w: idle, p_full_w: idle + span };
        let mid = power_at((a + b) / 2.0, &p).unwrap();
        let avg = (power_at(a, &p).unwrap() + power_at(b, &p).unwrap()) / 2.0;
        prop_assert!((mid - avg).abs() <= 1e-12 * (1.0 + idle + span));
        if a < b {
            prop_assert!(power_at(a, &p).unwrap() < power_at(b, &p).unwrap());
        }
    }

    #[test]
    fn reduction_composes_with_power(u1 in 0.01f64..=1.0, u2 in 0.0f64..=1.0, idle in 0.1f64..50.0, span in 0.1f64..200.0) {
        let p = PowerParams { p_idle_w: idle, p_full_w: idle + span };
        let direct = energy_reduction(power_at(u2, &p).unwrap(), power_at(u1, &p).unwrap()).unwrap();
        let closed = (u1 - u2) * span / (idle + u1 * span);
        prop_assert!((direct - closed).abs() <= 1e-12);
    }

    #[test]
    fn reduction_is_scale_invariant(a in 0.1f64..100.0, b in 0.1f64..100.0, k in 0.01f64..100.0) {
        let r = energy_reduction(a, b).unwrap();
        let rk = energy_reduction(k * a, k * b).unwrap();
        prop_assert!((r - rk).abs() <= 1e-12 * (1.0 + r.abs()));
    }

    #[test]
    fn report_json_round_trips(on in pcts(), off in pcts()) {
        let on = UtilizationTrace::from_percentages("on", &on).unwrap();
        let off = UtilizationTrace::from_percentages("off", &off).unwrap();
        if stats(&on).unwrap().median_pct > 0.0 {
            let r = build_report(&on, &off, P, Basis::Median).unwrap();
            prop_assert_eq!(EnergyReport::from_json(&r.to_json()).unwrap(), r.clone());
            prop_assert_eq!(r.onboard.stats.stddev_pct * r.onboard.stats.stddev_pct, r.onboard.stats.variance);
        }
    }
}

/// Odd-length trace whose sorted middle element is `median`.
fn trace_with_median(label: &str, median: f64) -> UtilizationTrace {
    let xs = [median - 3.0, median + 4.0, median, median + 1.0, median - 2.5];
    UtilizationTrace::from_percentages(label, &xs).unwrap()
}

#[test]
fn report_reproduces_headline_figures() {
    let r = build_report(
        &trace_with_median("on", 95.0),
        &trace_with_median("off", 16.0),
        P,
        Basis::Median,
    )
    .unwrap();
    assert_eq!(r.p_loaded_w, 24.0);
    assert!((r.p_base_w - 8.2).abs() < 1e-12);
    let table = r.to_table();
    for needle in ["24.0 W", "8.2 W", "65.8%", "83.16%"] {
        assert!(table.contains(needle), "{needle} missing from\n{table}");
    }
}

#[test]
fn identical_traces_have_zero_reductions() {
    let t = trace_with_median("x", 50.0);
    let r = build_report(&t, &t, P, Basis::Median).unwrap();
    assert_eq!(r.energy_reduction, 0.0);
    assert_eq!(r.load_reduction, 0.0);
    assert!(r.to_table().contains("0.0%"));
}

#[test]
fn mean_basis_differs_from_median() {
    let on = UtilizationTrace::from_percentages("on", &[90.0, 95.0, 40.0]).unwrap();
    let off = trace_with_median("off", 16.0);
    let med = build_report(&on, &off, P, Basis::Median).unwrap();
    let mean = build_report(&on, &off, P, Basis::Mean).unwrap();
    assert_eq!(med.p_loaded_w, power_at(0.90, &P).unwrap());
    assert_eq!(mean.p_loaded_w, power_at(75.0 / 100.0, &P).unwrap());
    assert!(mean.to_json().contains("\"basis\": \"mean\""));
}

#[test]
fn empty_trace_is_an_error() {
    let empty = UtilizationTrace::new("e");
    assert_eq!(stats(&empty).unwrap_err(), TelemetryError::EmptyTrace);
    assert!(build_report(&empty, &trace_with_median("x", 5.0), P, Basis::Median).is_err());
}

#[test]
fn replay_is_identity() {
    let text = "t_s,util_pct\n0.0,12.5\n0.5,40\n1.0,99.9\n";
    let t = UtilizationTrace::read_csv(text.as_bytes(), "r").unwrap();
    let back = collect(&mut ReplaySampler::new(t.clone())).unwrap();
    assert_eq!(back, t);
    assert_eq!(back.len(), 3);
}

#[test]
fn host_sampler_bounds() {
    match sample_host(Duration::from_millis(100), Duration::from_secs(1)) {
        Ok(t) => {
            assert!((9..=11).contains(&t.len()), "{} samples", t.len());
            assert!(t.samples().iter().all(|p| (0.0..=100.0).contains(&p.util_pct)));
        }
        Err(TelemetryError::Unavailable(why)) => eprintln!("host sampler unavailable here: {why}"),
        Err(e) => panic!("{e}"),
    }
}
