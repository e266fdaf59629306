use atlaslab::dynamics::SimConfig;
use atlaslab::experiments::{ergodic_average, ErgodicConfig};
use atlaslab::parallel::run_replicas;
use atlaslab::stats::{swap_invariance_test, Moments, Observable};
use atlaslab::DriftSpec;

#[test]
fn swap_test_is_calibrated() {
    let spec = DriftSpec::atlas1();
    let seeds = 20;
    let verdicts = run_replicas(None, seeds, |seed| {
        swap_invariance_test(&spec, 1.0, 1, 100_000, seed).unwrap()
    });
    assert!((verdicts[0].scale - 4.0 / 3.0).abs() < 1e-12);
    let rejected = verdicts.iter().filter(|v| !v.pass).count() as f64;
    let n = seeds as f64;
    assert!(rejected <= 0.01 * n + 3.0 * (n * 0.01 * 0.99).sqrt(), "{rejected} of {seeds}");
}

#[test]
fn time_averages_centre_on_the_stationary_mean() {
    // A single T = 50 path has a relative spread near 20%; 32 independent
    // paths bring it to about 3.5%.
    let spec = DriftSpec::atlas1();
    let paths = 32;
    for (obs, target) in [
        (Observable::Coordinate { i: 1 }, 0.5),
        (Observable::Indicator { i: 1, threshold: 0.3466 }, 0.5),
    ] {
        let cfg = ErgodicConfig {
            a: 0.0,
            sim: SimConfig {
                n_particles: 16,
                horizon: 50.0,
                dt: 1e-4,
                k_obs: 1,
                seed: 71,
                record_stride: 100,
            },
            observable: obs.clone(),
        };
        let finals: Moments = run_replicas(None, paths, |r| {
            ergodic_average(&spec, &cfg, r as u64).unwrap().final_average
        })
        .into_iter()
        .collect();
        assert!(
            (finals.mean - target).abs() <= 0.1 * target,
            "{obs:?}: {} ± {}",
            finals.mean,
            finals.stderr()
        );
    }
}
