mod common;

use common::{farm, phase, placed_world};
use multiconcern::graph::{ChannelKind, MetaKey, MetaValue, SkeletonExpr, Target};
use multiconcern::sim::{SimConfig, SimEventKind, World};
use proptest::prelude::*;

fn collector_completions(w: &World, from: f64, to: f64) -> usize {
    let c = w.graph().managed_farm().unwrap().collector;
    w.completions(&c).iter().filter(|t| **t > from && **t <= to).count()
}

/// Saturated farm: k workers of 4 s each deliver k/4 tasks per second.
#[test]
fn saturated_farm_matches_degree_over_service() {
    for k in [1u32, 2, 4] {
        let mut w = placed_world(&farm(4.0, k), vec![phase(1000.0, 5.0)], SimConfig::default());
        w.step(1000.0).unwrap();
        let n = collector_completions(&w, 100.0, 1000.0);
        assert!(n >= 200, "k={k}: only {n} completions");
        let measured = n as f64 / 900.0;
        let expected = k as f64 / 4.0;
        assert!((measured - expected).abs() <= 0.05 * expected, "k={k}: {measured} vs {expected}");
    }
}

#[test]
fn unsaturated_farm_follows_arrivals() {
    let mut w = placed_world(&farm(4.0, 4), vec![phase(1000.0, 0.5)], SimConfig::default());
    w.step(1000.0).unwrap();
    let n = collector_completions(&w, 100.0, 1000.0);
    let measured = n as f64 / 900.0;
    assert!((measured - 0.5).abs() <= 0.025, "{measured}");
}

/// One stage of 1 s fed once per second for 10 s completes exactly 10 tasks.
#[test]
fn rate_matched_stage_completes_everything() {
    let expr = SkeletonExpr::seq("a", 1.0);
    let mut w = placed_world(&expr, vec![phase(10.0, 1.0)], SimConfig::default());
    w.step(11.0).unwrap();
    assert_eq!(w.injected(), 10);
    assert_eq!(w.completed(), 10);
    assert_eq!(w.in_flight(), 0);
    let events = w.take_events();
    let done: Vec<f64> =
        events.iter().filter(|e| e.ev == SimEventKind::Complete).map(|e| e.t).collect();
    assert_eq!(done, (1..=10).map(|i| i as f64).collect::<Vec<_>>());
}

#[test]
fn ssl_slows_a_saturated_farm_by_the_overhead() {
    let plain = {
        let mut w = placed_world(&farm(4.0, 2), vec![phase(1000.0, 5.0)], SimConfig::default());
        w.step(1000.0).unwrap();
        collector_completions(&w, 100.0, 1000.0)
    };
    let ssl = {
        let mut w = placed_world(&farm(4.0, 2), vec![phase(1000.0, 5.0)], SimConfig::default());
        let mut g = w.graph().clone();
        for a in g.arcs().keys().cloned().collect::<Vec<_>>() {
            g = g.annotate(&Target::Arc(a), MetaKey::ChannelKind, MetaValue::Channel(ChannelKind::Ssl)).unwrap();
        }
        w.install(&multiconcern::diff(w.graph(), &g)).unwrap();
        w.step(1000.0).unwrap();
        collector_completions(&w, 100.0, 1000.0)
    };
    assert!(ssl < plain, "{ssl} vs {plain}");
    let ratio = plain as f64 / ssl as f64;
    assert!((ratio - 1.1).abs() < 0.02, "{ratio}");
}

/// Doubling the arrival rate halves the monitored inter-arrival time within one window.
#[test]
fn hot_spot_halves_t_arr() {
    let cfg = SimConfig { window: 10.0, ..SimConfig::default() };
    let mut w = placed_world(&farm(1.0, 4), vec![phase(50.0, 1.0), phase(50.0, 2.0)], cfg);
    w.step(50.0).unwrap();
    let before = w.monitor(50.0).t_arr.unwrap();
    w.step(60.0).unwrap();
    let after = w.monitor(60.0).t_arr.unwrap();
    assert!((before - 1.0).abs() < 1e-9, "{before}");
    assert!((after - 0.5).abs() < 1e-9, "{after}");
}

#[test]
fn identical_inputs_give_identical_events() {
    let run = || {
        let cfg = SimConfig { jitter: true, seed: 11, ..SimConfig::default() };
        let mut w = placed_world(&farm(3.0, 3), vec![phase(200.0, 1.5)], cfg);
        w.step(200.0).unwrap();
        serde_json::to_string(&w.take_events()).unwrap()
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Every injected task is either completed or still somewhere in the application.
    #[test]
    fn tasks_are_conserved(
        degree in 1u32..6,
        service in 0.5f64..6.0,
        rate in 0.1f64..4.0,
        seed in any::<u64>(),
        stop in 1.0f64..150.0,
    ) {
        let cfg = SimConfig { jitter: true, seed, ..SimConfig::default() };
        let mut w = placed_world(&farm(service, degree), vec![phase(100.0, rate)], cfg);
        w.step(stop).unwrap();
        prop_assert_eq!(w.injected(), w.completed() + w.in_flight());
    }
}
