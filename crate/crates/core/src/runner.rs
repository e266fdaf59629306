//! Config-driven experiment runs and dry-run diagnostics.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::coupling::{
    build_geometry, coupling_probability, coupling_sweep, event_bound_e1, lemcty_search,
    CouplingSim,
};
use crate::drift::{admissibility, finite_system_rates, pi_a_rates, Admissibility};
use crate::dynamics::{
    default_truncation, triple_collision_monitor, truncation_sensitivity, InitialLaw,
};
use crate::error::Result;
use crate::experiments::{
    ergodic_average, exponential_expectation, ito_check, laplace_checks, nu_check, product_checks, run_panel,
    stationarity_check, ErgodicConfig, ItoSpec, Panel, PanelConfig, ProductPair,
};
use crate::local_time::{estimate_nu, final_occupations, occupation_p99, IdentityRow};
use crate::report::{
    fmt_f64, fmt_opt, write_csv, write_occupation, write_report, write_trajectory, CheckRecord,
    Report, RngProvenance, Timing, SCHEMA_VERSION,
};
use crate::sampler::kakutani_affinity_product;
use crate::stats::{swap_invariance_test, Z95};

/// Tolerance of the triple-collision diagnostic.
const TRIPLE_TOL: f64 = 1e-3;

struct Outcome {
    checks: Vec<CheckRecord>,
    details: serde_json::Value,
    files: Vec<String>,
}

/// Validate, run and write every artifact of one experiment into `out_dir`.
///
/// Configuration problems surface as errors before anything is simulated.
/// The returned report carries the verdicts; failed checks are not errors.
pub fn run(config: &ExperimentConfig, out_dir: &Path, threads: Option<usize>) -> Result<Report> {
    let mut cfg = config.clone();
    cfg.resolve();
    let notes = cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let start = Instant::now();
    let outcome = match cfg.experiment {
        ExperimentKind::Stationarity => stationarity(&cfg, out_dir, threads)?,
        ExperimentKind::NuIdentities => nu_identities(&cfg, out_dir, threads)?,
        ExperimentKind::ProductIdentity => product_identity(&cfg, out_dir, threads)?,
        ExperimentKind::Laplace => laplace(&cfg, out_dir, threads)?,
        ExperimentKind::CouplingSweep => sweep(&cfg, out_dir, threads)?,
        ExperimentKind::LemctySearch => lemcty(&cfg, out_dir, threads)?,
        ExperimentKind::ErgodicAverage => ergodic(&cfg, out_dir)?,
        ExperimentKind::TruncationStudy => truncation(&cfg, out_dir, threads)?,
        ExperimentKind::SwapInvariance => swap(&cfg, out_dir)?,
        ExperimentKind::Kakutani => kakutani(&cfg, out_dir)?,
    };
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml()?)?;
    let mut files = vec!["report.json".to_string(), "summary.txt".into(), "config.toml".into()];
    files.extend(outcome.files);
    let pass = outcome.checks.iter().all(|c| c.pass);
    let report = Report {
        schema: SCHEMA_VERSION,
        experiment: cfg.experiment.name().to_string(),
        rng: RngProvenance::new(cfg.seed, cfg.replicas),
        config: cfg,
        checks: outcome.checks,
        pass,
        details: outcome.details,
        files,
        notes,
        timing: Timing {
            wall_clock_seconds: start.elapsed().as_secs_f64(),
            threads,
        },
    };
    write_report(out_dir, &report)?;
    Ok(report)
}

fn panel_config(cfg: &ExperimentConfig, pairs: Vec<ProductPair>, ito: Option<ItoSpec>) -> PanelConfig {
    PanelConfig {
        a: cfg.a,
        sim: cfg.sim_config(),
        replicas: cfg.replicas,
        eps_ladder: cfg.eps_ladder(),
        product_pairs: pairs,
        ito,
    }
}

/// Files and diagnostics shared by every panel experiment.
fn panel_artifacts(cfg: &ExperimentConfig, panel: &Panel, dir: &Path) -> Result<(Vec<String>, serde_json::Value)> {
    let mut files = write_trajectory(dir, &panel.trajectories[0], cfg)?;
    files.push(write_occupation(dir, &panel.trajectories)?);
    let frames: usize = panel.trajectories.iter().map(|t| t.gaps.len()).sum();
    let flagged: usize = panel
        .trajectories
        .iter()
        .map(|t| triple_collision_monitor(t, TRIPLE_TOL))
        .sum();
    let diag = json!({
        "triple_collision": {
            "tol": TRIPLE_TOL,
            "flagged_frames": flagged,
            "frames": frames,
            "fraction": flagged as f64 / frames.max(1) as f64,
        }
    });
    Ok((files, diag))
}

fn write_identity_rows(dir: &Path, rows: &[IdentityRow]) -> Result<String> {
    std::fs::write(dir.join("local_time.json"), serde_json::to_string_pretty(rows)?)?;
    Ok("local_time.json".into())
}

fn bool_str(b: bool) -> String {
    b.to_string()
}

fn stationarity(cfg: &ExperimentConfig, dir: &Path, threads: Option<usize>) -> Result<Outcome> {
    let spec = &cfg.drift;
    let panel = run_panel(spec, &panel_config(cfg, vec![], None), threads)?;
    let st = stationarity_check(&panel, spec, cfg.stationarity.gaps, &cfg.stationarity.times)?;
    let mut checks: Vec<CheckRecord> = st
        .rates
        .iter()
        .map(|r| {
            let se = (r.ci_hi - r.ci_lo) / (2.0 * Z95);
            CheckRecord::new(format!("rate_gap{}", r.i), r.target, r.rate, Some(se), r.pass)
        })
        .collect();
    let rejections = st.ks.iter().filter(|k| k.rejected).count();
    checks.push(CheckRecord::new(
        "ks_holm_rejections",
        0.0,
        rejections as f64,
        None,
        rejections == 0,
    ));
    checks.push(CheckRecord::new(
        "ks_time_trend",
        0.0,
        st.trend.slope,
        Some(st.trend.se_slope),
        st.trend_pass,
    ));

    let (mut files, diag) = panel_artifacts(cfg, &panel, dir)?;
    let rate_rows: Vec<Vec<String>> = st
        .rates
        .iter()
        .map(|r| {
            vec![
                r.i.to_string(),
                fmt_f64(r.t),
                fmt_f64(r.target),
                fmt_f64(r.rate),
                fmt_f64(r.ci_lo),
                fmt_f64(r.ci_hi),
                fmt_f64(r.rel_error),
                bool_str(r.pass),
            ]
        })
        .collect();
    write_csv(
        dir,
        "rates.csv",
        &["i", "t", "target", "rate", "ci_lo", "ci_hi", "rel_error", "pass"],
        &rate_rows,
    )?;
    let ks_rows: Vec<Vec<String>> = st
        .ks
        .iter()
        .map(|k| {
            vec![
                k.i.to_string(),
                fmt_f64(k.t),
                fmt_f64(k.statistic),
                fmt_f64(k.p_value),
                bool_str(k.rejected),
            ]
        })
        .collect();
    write_csv(dir, "ks.csv", &["i", "t", "statistic", "p_value", "rejected"], &ks_rows)?;
    files.extend(["rates.csv".to_string(), "ks.csv".into()]);
    Ok(Outcome {
        checks,
        details: json!({ "stationarity": st, "diagnostics": diag }),
        files,
    })
}

fn nu_identities(cfg: &ExperimentConfig, dir: &Path, threads: Option<usize>) -> Result<Outcome> {
    let spec = &cfg.drift;
    let lt = &cfg.local_time;
    let panel = run_panel(spec, &panel_config(cfg, vec![], lt.ito), threads)?;
    let nu = nu_check(&panel, spec, lt.nu_estimates().max(3))?;
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    for r in nu.rows.iter().filter(|r| r.i <= lt.nu_gaps) {
        checks.push(CheckRecord::new(format!("nu_{}", r.i), r.target, r.estimate, Some(r.stderr), r.pass));
        rows.push(IdentityRow {
            check: "nu".into(),
            i: r.i,
            j: None,
            lhs: r.estimate,
            rhs: r.target,
            stderr: r.stderr,
            pass: r.pass,
        });
    }
    for b in nu.balance.iter().filter(|b| lt.balance.contains(&b.i)) {
        checks.push(CheckRecord::new(format!("balance_{}", b.i), 0.0, b.residual, Some(b.stderr), b.pass));
        rows.push(b.row());
    }
    let mut details = json!({ "nu": nu.rows, "balance": nu.balance });
    if let Some(spec_ito) = lt.ito {
        let ito = ito_check(&panel)?;
        checks.push(CheckRecord::new(
            format!("ito_psi_gap{}", spec_ito.i),
            0.0,
            ito.mean,
            Some(ito.stderr),
            ito.pass,
        ));
        rows.push(IdentityRow {
            check: format!("ito_psi(eps={})", spec_ito.eps),
            i: spec_ito.i,
            j: None,
            lhs: ito.mean,
            rhs: 0.0,
            stderr: ito.stderr,
            pass: ito.pass,
        });
        details["ito"] = serde_json::to_value(&ito)?;
    }
    let occ = final_occupations(&panel.trajectories);
    let p99: Vec<_> = (1..=lt.nu_gaps)
        .map(|i| json!({ "i": i, "p99": occupation_p99(&occ, panel.horizon, i, &panel.eps_ladder) }))
        .collect();
    details["occupation_p99"] = json!(p99);
    details["estimates"] = serde_json::to_value(&nu.estimates)?;

    let (mut files, diag) = panel_artifacts(cfg, &panel, dir)?;
    details["diagnostics"] = diag;
    files.push(write_identity_rows(dir, &rows)?);
    Ok(Outcome { checks, details, files })
}

fn product_identity(cfg: &ExperimentConfig, dir: &Path, threads: Option<usize>) -> Result<Outcome> {
    let spec = &cfg.drift;
    let pairs = cfg.local_time.product_pairs.clone();
    let panel = run_panel(spec, &panel_config(cfg, pairs.clone(), None), threads)?;
    let rows = product_checks(&panel, &pairs, spec)?;
    let checks = rows
        .iter()
        .map(|r| {
            CheckRecord::new(
                format!("product_{}_{}", r.check.i, r.check.j),
                r.target,
                r.check.lhs,
                Some(r.check.lhs_stderr),
                r.check.pass,
            )
        })
        .collect();
    let identity: Vec<IdentityRow> = rows.iter().map(|r| r.check.row()).collect();
    let (mut files, diag) = panel_artifacts(cfg, &panel, dir)?;
    files.push(write_identity_rows(dir, &identity)?);
    Ok(Outcome {
        checks,
        details: json!({ "product": rows, "diagnostics": diag }),
        files,
    })
}

fn laplace(cfg: &ExperimentConfig, dir: &Path, threads: Option<usize>) -> Result<Outcome> {
    let spec = &cfg.drift;
    let lt = &cfg.local_time;
    let panel = run_panel(spec, &panel_config(cfg, vec![], None), threads)?;
    let occ = final_occupations(&panel.trajectories);
    let estimates = (1..=lt.laplace_gaps)
        .map(|i| estimate_nu(&occ, panel.horizon, i, &panel.eps_ladder))
        .collect::<Result<Vec<_>>>()?;
    let rows = laplace_checks(&panel, spec, &estimates, lt.laplace_gaps, &lt.laplace_multipliers)?;
    let checks = rows
        .iter()
        .map(|r| {
            CheckRecord::new(
                format!("laplace_gap{}_lambda{}", r.i, r.lambda),
                r.predicted,
                r.empirical,
                Some(r.stderr),
                r.pass,
            )
        })
        .collect();
    let identity: Vec<IdentityRow> = rows.iter().map(|r| r.row()).collect();
    let (mut files, diag) = panel_artifacts(cfg, &panel, dir)?;
    files.push(write_identity_rows(dir, &identity)?);
    Ok(Outcome {
        checks,
        details: json!({ "laplace": rows, "nu": estimates, "diagnostics": diag }),
        files,
    })
}

pub const COUPLING_HEADER: [&str; 10] = [
    "delta1", "delta2", "i", "s", "p_E1", "p_E2", "p_E", "p_coupled", "ci_lo", "ci_hi",
];

fn coupling_sim(cfg: &ExperimentConfig) -> CouplingSim {
    CouplingSim {
        dt: cfg.sim.dt,
        seed: cfg.seed,
        replicas: cfg.replicas,
    }
}

fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

fn sweep(cfg: &ExperimentConfig, dir: &Path, threads: Option<usize>) -> Result<Outcome> {
    let spec = &cfg.drift;
    let c = &cfg.coupling;
    let z = cfg.coupling_start();
    let sim = coupling_sim(cfg);
    let deltas: Vec<(f64, f64)> = c.deltas.iter().map(|d| (d[0], d[1])).collect();
    let mut checks = Vec::new();
    let mut csv_rows = Vec::new();
    let mut geometries = Vec::new();
    for &(d1, d2) in &deltas {
        let geom = build_geometry(&z, d1, d2, c.i, spec)?;
        geometries.push(json!({
            "delta1": d1, "delta2": d2, "v": geom.v, "r": geom.r, "time_cap": geom.time_cap,
        }));
    }
    let mut event_rows = Vec::new();
    let tag = |d1: f64, d2: f64, s: f64| format!("d{d1}_{d2}_s{s}");
    if let Some(ud) = c.underline_delta {
        let rows = coupling_sweep(&z, c.i, spec, &deltas, &c.s, ud, &sim, threads)?;
        for r in &rows {
            let geom = build_geometry(&z, r.delta1, r.delta2, c.i, spec)?;
            let bound = event_bound_e1(&geom, spec, r.s, ud);
            let t = tag(r.delta1, r.delta2, r.s);
            checks.push(CheckRecord::new(
                format!("e_within_coupled_{t}"),
                r.p_coupled,
                r.p_e,
                Some(binomial_se(r.p_e, r.replicas)),
                r.inclusion_ok,
            ));
            let miss = 1.0 - r.p_e1;
            checks.push(CheckRecord::new(
                format!("e1_complement_bound_{t}"),
                bound,
                miss,
                Some(binomial_se(miss, r.replicas)),
                miss <= bound,
            ));
            if c.require_positive {
                checks.push(CheckRecord::new(
                    format!("coupled_positive_{t}"),
                    0.0,
                    r.p_coupled,
                    Some(binomial_se(r.p_coupled, r.replicas)),
                    r.ci_lo > 0.0,
                ));
            }
            csv_rows.push(vec![
                fmt_f64(r.delta1),
                fmt_f64(r.delta2),
                r.i.to_string(),
                fmt_f64(r.s),
                fmt_f64(r.p_e1),
                fmt_f64(r.p_e2),
                fmt_f64(r.p_e),
                fmt_f64(r.p_coupled),
                fmt_f64(r.ci_lo),
                fmt_f64(r.ci_hi),
            ]);
            event_rows.push(json!({ "row": r, "e1_complement_bound": bound }));
        }
    } else {
        for &(d1, d2) in &deltas {
            let geom = build_geometry(&z, d1, d2, c.i, spec)?;
            for r in coupling_probability(&geom, spec, &c.s, &sim, threads)? {
                if c.require_positive {
                    checks.push(CheckRecord::new(
                        format!("coupled_positive_{}", tag(d1, d2, r.s)),
                        0.0,
                        r.p_coupled,
                        Some(binomial_se(r.p_coupled, r.replicas)),
                        r.ci_lo > 0.0,
                    ));
                }
                csv_rows.push(vec![
                    fmt_f64(d1),
                    fmt_f64(d2),
                    c.i.to_string(),
                    fmt_f64(r.s),
                    fmt_opt(None),
                    fmt_opt(None),
                    fmt_opt(None),
                    fmt_f64(r.p_coupled),
                    fmt_f64(r.ci_lo),
                    fmt_f64(r.ci_hi),
                ]);
                event_rows.push(json!({ "delta1": d1, "delta2": d2, "row": r }));
            }
        }
    }
    write_csv(dir, "coupling.csv", &COUPLING_HEADER, &csv_rows)?;
    Ok(Outcome {
        checks,
        details: json!({ "geometries": geometries, "rows": event_rows }),
        files: vec!["coupling.csv".into()],
    })
}

fn lemcty(cfg: &ExperimentConfig, dir: &Path, threads: Option<usize>) -> Result<Outcome> {
    let spec = &cfg.drift;
    let c = &cfg.coupling;
    let z = cfg.coupling_start();
    let ud = c.underline_delta.expect("validated");
    let report = lemcty_search(
        &z,
        c.i,
        spec,
        c.eta,
        &c.t1_grid,
        &c.delta0_grid,
        ud,
        &coupling_sim(cfg),
        threads,
    )?;
    let worst = report
        .cells
        .iter()
        .max_by(|a, b| a.p_not_coupled.total_cmp(&b.p_not_coupled));
    let mut checks = vec![CheckRecord::new(
        "lemcty_found",
        c.eta,
        worst.map_or(f64::NAN, |w| w.p_not_coupled),
        worst.map(|w| w.p_not_coupled_se),
        report.found.is_some(),
    )];
    for cell in &report.cells {
        checks.push(CheckRecord::new(
            format!("lemcty_cell_d{}_{}", cell.delta1, cell.delta2),
            c.eta,
            cell.p_not_coupled,
            Some(cell.p_not_coupled_se),
            cell.below_eta && cell.ordered,
        ));
    }
    let cell_rows: Vec<Vec<String>> = report
        .cells
        .iter()
        .map(|cell| {
            vec![
                fmt_f64(cell.delta1),
                fmt_f64(cell.delta2),
                fmt_f64(cell.t1),
                fmt_f64(cell.time_cap),
                fmt_f64(cell.p_not_coupled),
                fmt_f64(cell.p_not_coupled_se),
                fmt_f64(cell.p_e_complement),
                fmt_f64(cell.gap_mean),
                fmt_f64(cell.gap_se),
                bool_str(cell.below_eta),
                bool_str(cell.ordered),
            ]
        })
        .collect();
    write_csv(
        dir,
        "lemcty_cells.csv",
        &[
            "delta1", "delta2", "t1", "time_cap", "p_not_coupled", "p_not_coupled_se",
            "p_e_complement", "gap_mean", "gap_se", "below_eta", "ordered",
        ],
        &cell_rows,
    )?;
    let tried: Vec<Vec<String>> = report
        .tried
        .iter()
        .map(|t| {
            vec![
                fmt_f64(t.t1),
                fmt_f64(t.delta0),
                bool_str(t.admissible),
                bool_str(t.pass),
            ]
        })
        .collect();
    write_csv(dir, "lemcty_candidates.csv", &["t1", "delta0", "admissible", "pass"], &tried)?;
    Ok(Outcome {
        checks,
        details: serde_json::to_value(&report)?,
        files: vec!["lemcty_cells.csv".into(), "lemcty_candidates.csv".into()],
    })
}

fn ergodic(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome> {
    let ecfg = ErgodicConfig {
        a: cfg.a,
        sim: cfg.sim_config(),
        observable: cfg.ergodic.observable.clone(),
    };
    let r = ergodic_average(&cfg.drift, &ecfg, cfg.ergodic.replica)?;
    let rows: Vec<Vec<String>> = r
        .times
        .iter()
        .zip(&r.averages)
        .map(|(t, v)| vec![fmt_f64(*t), fmt_f64(*v)])
        .collect();
    write_csv(dir, "ergodic.csv", &["t", "average"], &rows)?;
    let mut details = serde_json::to_value(&r)?;
    // What the truncated system itself averages to over long times.
    if let (Some(i), Ok(rates)) = (
        ecfg.observable.gap_index(),
        finite_system_rates(&cfg.drift, ecfg.sim.n_particles),
    ) {
        details["finite_system_target"] = json!(exponential_expectation(&ecfg.observable, rates[i - 1]));
    }
    Ok(Outcome {
        checks: vec![CheckRecord::new("ergodic_average", r.target, r.final_average, None, r.pass)],
        details,
        files: vec!["ergodic.csv".into()],
    })
}

fn truncation(cfg: &ExperimentConfig, dir: &Path, threads: Option<usize>) -> Result<Outcome> {
    let t = &cfg.truncation;
    let mut n_list = t.n_list.clone();
    n_list.sort_unstable();
    n_list.dedup();
    let table = truncation_sensitivity(
        &cfg.drift,
        &InitialLaw::Stationary { a: cfg.a },
        &cfg.sim_config(),
        &n_list,
        t.rank,
        cfg.replicas,
        threads,
    )?;
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.n_particles.to_string(),
                fmt_f64(r.median),
                fmt_f64(r.mean),
                fmt_f64(r.p99),
            ]
        })
        .collect();
    write_csv(dir, "truncation.csv", &["n_particles", "median", "mean", "p99"], &rows)?;
    let below_reference = &table.rows[table.rows.len() - 2];
    let increases = table
        .rows
        .windows(2)
        .filter(|w| w[1].mean > w[0].mean)
        .count();
    let checks = vec![
        CheckRecord::new(
            format!("truncation_p99_n{}", below_reference.n_particles),
            t.tol,
            below_reference.p99,
            None,
            below_reference.p99 <= t.tol,
        ),
        CheckRecord::new("truncation_mean_monotone", 0.0, increases as f64, None, increases == 0),
    ];
    let summary: Vec<_> = table
        .rows
        .iter()
        .map(|r| json!({ "n_particles": r.n_particles, "median": r.median, "mean": r.mean, "p99": r.p99 }))
        .collect();
    Ok(Outcome {
        checks,
        details: json!({ "rank": table.rank, "reference_n": table.reference_n, "rows": summary }),
        files: vec!["truncation.csv".into()],
    })
}

fn swap(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome> {
    let s = &cfg.swap;
    let v = swap_invariance_test(&cfg.drift, cfg.a, s.i, s.n_samples, cfg.seed)?;
    let rows: Vec<Vec<String>> = v
        .p_values
        .iter()
        .zip(&v.rejected)
        .enumerate()
        .map(|(k, (p, r))| vec![(k + 1).to_string(), fmt_f64(*p), bool_str(*r)])
        .collect();
    write_csv(dir, "swap.csv", &["coordinate", "p_value", "rejected"], &rows)?;
    let min_p = v.p_values.iter().copied().fold(1.0, f64::min);
    Ok(Outcome {
        checks: vec![CheckRecord::new(format!("swap_invariance_i{}", s.i), 0.01, min_p, None, v.pass)],
        details: serde_json::to_value(&v)?,
        files: vec!["swap.csv".into()],
    })
}

fn kakutani(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome> {
    let k = &cfg.kakutani;
    let a = pi_a_rates(&cfg.drift, cfg.a, k.n_max)?;
    let b = pi_a_rates(&cfg.drift, k.a_prime, k.n_max)?;
    let products = kakutani_affinity_product(&a.rates, &b.rates)?;
    let rows: Vec<Vec<String>> = products
        .iter()
        .enumerate()
        .map(|(n, p)| vec![(n + 1).to_string(), fmt_f64(*p)])
        .collect();
    write_csv(dir, "kakutani.csv", &["n", "partial_product"], &rows)?;
    let non_decreasing = products.windows(2).filter(|w| !(w[1] < w[0])).count();
    let last = *products.last().expect("n_max >= 1");
    Ok(Outcome {
        checks: vec![
            CheckRecord::new(
                "kakutani_strictly_decreasing",
                0.0,
                non_decreasing as f64,
                None,
                non_decreasing == 0 && products[0] < 1.0,
            ),
            CheckRecord::new(format!("kakutani_below_tol_n{}", k.n_max), k.tol, last, None, last < k.tol),
        ],
        details: json!({ "a": cfg.a, "a_prime": k.a_prime, "partial_products": products }),
        files: vec!["kakutani.csv".into()],
    })
}

/// Seconds per unit of work (one particle advanced one step, or one pair
/// particle-step) on one core of the reference machine.
pub const SECONDS_PER_UNIT: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct DryRun {
    pub experiment: String,
    pub drift: Vec<f64>,
    pub a: f64,
    pub a_min: f64,
    pub admissibility: Admissibility,
    pub d1_member: bool,
    pub n_particles: usize,
    pub suggested_n_particles: usize,
    pub work_units: f64,
    pub estimated_seconds: f64,
    /// `Err` message when the config would be rejected by `run`.
    pub verdict: std::result::Result<Vec<String>, String>,
}

/// Work in particle-steps, linear in replicas, steps and `N`.
pub fn work_units(cfg: &ExperimentConfig) -> f64 {
    let sim = &cfg.sim;
    let n = sim.n_particles() as f64;
    let steps = (sim.horizon / sim.dt).round().max(0.0);
    let reps = cfg.replicas as f64;
    let c = &cfg.coupling;
    let pair_n = c.z.as_ref().map_or(n, |z| z.len() as f64 + 1.0);
    match cfg.experiment {
        k if k.uses_panel() => reps * steps * n,
        ExperimentKind::CouplingSweep => {
            let s_max = c.s.iter().copied().fold(0.0, f64::max);
            2.0 * reps * (s_max / sim.dt).ceil() * pair_n * c.deltas.len() as f64
        }
        ExperimentKind::LemctySearch => {
            let t_max = c.t1_grid.iter().copied().fold(0.0, f64::max);
            let candidates = (c.t1_grid.len() * c.delta0_grid.len()) as f64;
            2.0 * reps * (t_max / sim.dt).ceil() * pair_n * 4.0 * candidates
        }
        ExperimentKind::ErgodicAverage => steps * n,
        ExperimentKind::TruncationStudy => {
            reps * steps * cfg.truncation.n_list.iter().map(|&m| m as f64).sum::<f64>()
        }
        ExperimentKind::SwapInvariance => cfg.swap.n_samples as f64 * (cfg.swap.i as f64 + 2.0),
        _ => cfg.kakutani.n_max as f64,
    }
}

/// Diagnostics for `atlaslab validate`: nothing is simulated or written.
pub fn dry_run(config: &ExperimentConfig, threads: Option<usize>) -> DryRun {
    let mut cfg = config.clone();
    cfg.resolve();
    let work = work_units(&cfg);
    let workers = match cfg.experiment {
        ExperimentKind::ErgodicAverage
        | ExperimentKind::SwapInvariance
        | ExperimentKind::Kakutani => 1,
        _ => threads.unwrap_or_else(rayon::current_num_threads).max(1),
    };
    DryRun {
        experiment: cfg.experiment.name().to_string(),
        drift: cfg.drift.prefix().to_vec(),
        a: cfg.a,
        a_min: cfg.drift.a_min(),
        admissibility: admissibility(&cfg.drift, cfg.a),
        d1_member: cfg.drift.in_class_d1(),
        n_particles: cfg.sim.n_particles(),
        suggested_n_particles: default_truncation(cfg.sim.k_obs, cfg.sim.horizon),
        work_units: work,
        estimated_seconds: work * SECONDS_PER_UNIT / workers as f64,
        verdict: cfg.validate().map_err(|e| e.to_string()),
    }
}
