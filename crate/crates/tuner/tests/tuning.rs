use std::time::Duration;

use txmerge_tuner::{tune_loop, Config, SearchSpace, SyntheticSurface, TuneOptions};

fn space() -> SearchSpace {
    SearchSpace::new(20, 10).unwrap()
}

fn surface(seed: u64) -> SyntheticSurface {
    SyntheticSurface::unimodal(space(), Config::new(13, 7), 1000.0, 0.02, seed)
}

fn opts(seed: u64, cap: usize) -> TuneOptions {
    TuneOptions { cap, window: Duration::from_millis(1), seed, ..Default::default() }
}

#[test]
fn bo_reaches_near_optimum_in_most_seeds() {
    let mut hits = 0;
    for seed in 0..50 {
        let mut s = surface(seed);
        let r = tune_loop(&mut s, &space(), opts(seed, 10)).unwrap();
        assert!(r.iterations <= 10);
        assert_eq!(r.trace.iter().filter(|t| t.iteration == 0).count(), 20);
        if s.true_value(r.best) >= 0.95 * s.grid_optimum().1 {
            hits += 1;
        }
    }
    assert!(hits >= 45, "{hits}/50");
}

#[test]
fn grid_optimum_is_the_bump_centre() {
    assert_eq!(surface(0).grid_optimum(), (Config::new(13, 7), 1000.0));
}

#[test]
fn flat_surface_stops_after_one_iteration() {
    let mut s = SyntheticSurface::flat(space(), 500.0);
    let r = tune_loop(&mut s, &space(), opts(3, 25)).unwrap();
    assert_eq!(r.iterations, 1);
    assert!(r.converged && !r.capped);
}

#[test]
fn cap_returns_best_seen_and_flags_it() {
    let mut s = surface(9);
    let r = tune_loop(&mut s, &space(), opts(9, 1)).unwrap();
    assert!(r.capped);
    let top = r.trace.iter().map(|t| t.throughput).fold(f64::MIN, f64::max);
    assert_eq!(r.best_throughput, top);
}

#[test]
fn loop_is_deterministic_for_a_seed() {
    let a = tune_loop(&mut surface(4), &space(), opts(4, 25)).unwrap();
    let b = tune_loop(&mut surface(4), &space(), opts(4, 25)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn trace_csv_has_blank_predictions_for_initial_samples() {
    let r = tune_loop(&mut surface(1), &space(), opts(1, 2)).unwrap();
    let first = r.trace[0].to_csv();
    assert!(first.starts_with("0,") && first.ends_with(",,"));
    assert_eq!(r.trace[20].to_csv().split(',').count(), 6);
    assert!(!r.trace[20].to_csv().ends_with(','));
}
