use pnrcal::model::{estimate_xi, forward_distribution, EstimateSource, PhotonNumberDistribution};
use pnrcal::simulator::{
    check_pileup, closure_test, dark_rate_for_purity, simulate_herald_stats, simulate_run,
    ClosureOptions, ExperimentConfig, PeakShape,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn config(gamma: f64, xi: f64, mu: f64, n_pulses: u64, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        gamma_true: gamma,
        xi_true: xi,
        herald_prob: 0.5,
        background_mean: mu,
        background_table: None,
        peak_model: vec![
            PeakShape {
                center: 0.0,
                width: 0.1,
            },
            PeakShape {
                center: 1.0,
                width: 0.12,
            },
        ],
        n_pulses,
        rep_period: 25.0,
        detector_recovery: 10.4,
        seed,
    }
}

/// Pearson statistic of observed frequencies against `expected`, pooling
/// cells whose expectation falls below 5 into the last kept cell.
fn chi_square(observed: &[u64], expected: &PhotonNumberDistribution, n: f64) -> (f64, usize) {
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let len = observed.len().max(expected.probs().len());
    for i in 0..len {
        let o = observed.get(i).copied().unwrap_or(0) as f64;
        let e = n * expected.prob(i);
        match cells.last_mut() {
            Some(last) if e < 5.0 => {
                last.0 += o;
                last.1 += e;
            }
            _ => cells.push((o, e)),
        }
    }
    let stat = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    (stat, cells.len() - 1)
}

#[test]
fn detection_frequency_is_binomial() {
    let g = 0.3;
    let run = simulate_run(&config(g, 1.0, 0.0, 400_000, 2)).unwrap();
    let t = &run.tallies;
    let n = t.true_heralds as f64;
    let sd = (n * g * (1.0 - g)).sqrt();
    assert!((t.heralded_detections as f64 - n * g).abs() < 5.0 * sd);
    assert_eq!(t.heralded_detections + t.heralded_misses, t.true_heralds);
    assert_eq!(t.true_heralds + t.false_heralds, t.heralds);
}

#[test]
fn gate_frequencies_follow_the_model() {
    let cfg = config(0.4, 0.8, 0.3, 2_400_000, 3);
    let run = simulate_run(&cfg).unwrap();
    let n = run.tallies.heralds as f64;
    assert!(n >= 1e6);
    let bg = cfg.background().unwrap();
    let on = forward_distribution(cfg.gamma_true, cfg.xi_true, &bg).unwrap();
    for (observed, expected) in [
        (&run.tallies.on_photon_numbers, &on),
        (&run.tallies.off_photon_numbers, &bg),
    ] {
        let (stat, dof) = chi_square(observed, expected, n);
        let p = 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat);
        assert!(p > 1e-3, "chi2 {stat} dof {dof} p {p}");
    }
}

#[test]
fn table_background_is_sampled_faithfully() {
    let mut cfg = config(0.0, 1.0, 0.0, 1_000_000, 4);
    cfg.background_table = Some(vec![0.7, 0.2, 0.1]);
    let run = simulate_run(&cfg).unwrap();
    let n = run.tallies.heralds as f64;
    let table = PhotonNumberDistribution::new(vec![0.7, 0.2, 0.1]).unwrap();
    let (stat, dof) = chi_square(&run.tallies.off_photon_numbers, &table, n);
    let p = 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat);
    assert!(p > 1e-3, "chi2 {stat} p {p}");
}

#[test]
fn purity_estimates_scatter_around_target() {
    let xi = 0.98794;
    let base = ExperimentConfig::reference_scale().with_expected_heralds(1e6);
    let dark = dark_rate_for_purity(base.herald_prob, xi);
    let estimates: Vec<f64> = (0..100)
        .map(|s| {
            let cfg = base.clone().with_seed(1000 + s);
            estimate_xi(&simulate_herald_stats(&cfg, dark).unwrap())
                .unwrap()
                .xi
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / 100.0;
    let var = estimates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 99.0;
    assert!(
        (mean - xi).abs() < 5.0 * (var / 100.0).sqrt(),
        "{mean} vs {xi}"
    );
}

#[test]
fn pileup_margin_is_monotone() {
    let mut cfg = config(0.1, 1.0, 0.0, 10, 1);
    let mut last = false;
    for period in [1.0, 5.0, 10.4, 12.0, 25.0] {
        cfg.rep_period = period;
        let r = check_pileup(&cfg);
        assert!(r.pass || !last);
        last = r.pass;
        assert_eq!(r.margin, period - 10.4);
    }
    cfg.rep_period = 5.0;
    assert!(simulate_run(&cfg).is_err());
}

fn closure_options() -> ClosureOptions {
    ClosureOptions {
        bins: 200,
        n_peaks: 2,
        jobs: Some(2),
        init_from_config: true,
    }
}

#[test]
fn zero_efficiency_closure_straddles_zero() {
    let mut cfg = config(0.0, 0.95, 0.2, 40_000, 5);
    cfg.peak_model.push(PeakShape {
        center: 2.0,
        width: 0.14,
    });
    let report = closure_test(&cfg, 40, &closure_options()).unwrap();
    assert_eq!(report.completed, 40);
    let s = report.summary(EstimateSource::PhotonNumber(0)).unwrap();
    assert!(
        s.bias.abs() < 3.0 * s.standard_error,
        "bias {} se {}",
        s.bias,
        s.standard_error
    );
    let frac = s.out_of_range as f64 / s.n as f64;
    assert!(
        (0.25..=0.75).contains(&frac),
        "out of range fraction {frac}"
    );
}

#[test]
fn background_free_closure_has_unit_pulls() {
    let cfg = config(0.3, 1.0, 0.0, 40_000, 6);
    let report = closure_test(&cfg, 60, &closure_options()).unwrap();
    let s = report.summary(EstimateSource::PhotonNumber(0)).unwrap();
    assert!(s.bias.abs() < 2.5 * s.standard_error);
    assert!(
        (0.6..=1.4).contains(&s.pull_variance),
        "{}",
        s.pull_variance
    );
}

#[test]
fn closure_reports_repeat_exactly() {
    let cfg = config(0.3, 0.9, 0.1, 20_000, 7);
    let mut opts = closure_options();
    let first = serde_json::to_string(&closure_test(&cfg, 6, &opts).unwrap()).unwrap();
    for jobs in [1, 3, 4] {
        opts.jobs = Some(jobs);
        let again = serde_json::to_string(&closure_test(&cfg, 6, &opts).unwrap()).unwrap();
        assert_eq!(first, again);
    }
}
