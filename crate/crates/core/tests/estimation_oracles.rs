use backlog_core::estimation::{
    estimate_g, estimate_g_ergodic, estimate_h, GCondition, HProvider, McHProvider, ReportStream,
};
use backlog_core::stats::{ks_two_sample, variance_se, Moments};
use backlog_core::stochastics::{count_moments, sample_reporting_row};
use backlog_core::{ModelConfig, RngState};

/// `E[(R - c)^+]` for `R ~ NB` from the probability mass function.
fn expected_excess(shape: f64, beta: f64, c: u64) -> f64 {
    let p = beta / (1.0 + beta);
    let mut pk = p.powf(shape);
    let mean = shape / beta;
    let mut below = 0.0;
    for k in 0..c {
        below += (c - k) as f64 * pk;
        pk *= (k as f64 + shape) / (k as f64 + 1.0) * (1.0 - p);
    }
    mean - c as f64 + below
}

#[test]
fn negative_binomial_moments() {
    let cfg = ModelConfig::reference();
    let s = cfg.total_sampler();
    let m = count_moments(200_000, RngState::new(1), |r| s.sample(r));
    assert!((m.mean() - 1000.0).abs() < 4.0 * m.se());
    assert!(
        (m.variance() / 501_000.0 - 1.0).abs() < 0.02,
        "{}",
        m.variance()
    );
    for (j, d) in cfg.delay_samplers().iter().enumerate() {
        let mut rng = RngState::new(2 + j as u64).rng();
        let xs: Vec<f64> = (0..100_000).map(|_| d.sample(&mut rng) as f64).collect();
        let m: Moments = xs.iter().copied().collect();
        assert!((m.mean() - cfg.mu_j(j)).abs() < 4.0 * m.se());
        assert!(
            (m.variance() - d.variance()).abs() < 4.0 * variance_se(&xs),
            "delay {j}"
        );
    }
}

#[test]
fn delay_counts_aggregate_to_the_total_law() {
    let cfg = ModelConfig::reference();
    let mut rng = RngState::new(5).rng();
    let summed: Vec<f64> = (0..20_000)
        .map(|_| sample_reporting_row(&cfg, &mut rng).iter().sum::<u64>() as f64)
        .collect();
    let s = cfg.total_sampler();
    let direct: Vec<f64> = (0..20_000).map(|_| s.sample(&mut rng) as f64).collect();
    assert!(ks_two_sample(&summed, &direct, 0.01).indistinguishable());
}

#[test]
fn first_g_from_zero_backlog_is_expected_excess() {
    let cfg = ModelConfig::reference();
    for eta in [1.05, 1.2, 1.5] {
        let c = cfg.capacity(eta);
        let t = estimate_g(
            &cfg,
            GCondition::Backlog(0),
            eta,
            1,
            200_000,
            RngState::new(9),
        )
        .unwrap();
        let exact = expected_excess(cfg.alpha_total(), cfg.beta(), c);
        assert!(
            (t.values[0] - exact).abs() < 4.0 * t.se[0],
            "eta {eta}: {} vs {exact}",
            t.values[0]
        );
    }
}

#[test]
fn one_period_delay_h_equals_conditional_g() {
    let cfg = ModelConfig::reference();
    for b in [0, 1500, 4000] {
        let h = estimate_h(&cfg, b, 1, 1.15, 12, 40_000, RngState::new(3)).unwrap();
        let g = estimate_g(
            &cfg,
            GCondition::Backlog(b),
            1.15,
            12,
            40_000,
            RngState::new(4),
        )
        .unwrap();
        for j in 0..12 {
            let se = (h.se[j].powi(2) + g.se[j].powi(2)).sqrt();
            assert!(
                (h.values[j] - g.values[j]).abs() <= 4.5 * se + 1e-9,
                "b {b} j {j}"
            );
        }
    }
}

#[test]
fn h_bank_surface_agrees_with_direct_h() {
    let cfg = ModelConfig::reference();
    let bank = McHProvider::new(&cfg, 40_000, 10, RngState::new(21)).unwrap();
    let s = bank.surface(2500.0, 1.1, 10).unwrap();
    assert!(s.h0[0] == 1.0);
    for m in [0usize, 1, 3] {
        let direct = estimate_h(
            &cfg,
            2500,
            m,
            1.1,
            10 - m.saturating_sub(1),
            40_000,
            RngState::new(22),
        )
        .unwrap();
        for k in 0..direct.values.len().min(6) {
            let got = s.h(k, m).unwrap();
            let tol = 5.0 * direct.se[k] + 0.02 * direct.values[k].abs() + 1e-9;
            assert!(
                (got - direct.values[k]).abs() <= tol,
                "m {m} k {k}: {got} vs {}",
                direct.values[k]
            );
        }
    }
}

#[test]
fn replicate_and_ergodic_estimators_agree() {
    let cfg = ModelConfig::reference();
    let eta = 1.3;
    let rep = estimate_g(
        &cfg,
        GCondition::Stationary { burn: 1200 },
        eta,
        10,
        100_000,
        RngState::new(6),
    )
    .unwrap();
    let stream = ReportStream::new(&cfg, 2_000_000, RngState::new(7));
    let erg = estimate_g_ergodic(&cfg, eta, 10, 5000, &stream).unwrap();
    for j in 0..10 {
        let se = (rep.se[j].powi(2) + erg.table.se[j].powi(2)).sqrt();
        assert!(
            (rep.values[j] - erg.table.values[j]).abs() <= 4.0 * se,
            "j {j}"
        );
    }
}

#[test]
fn estimates_do_not_depend_on_thread_count() {
    let cfg = ModelConfig::reference();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                estimate_g(
                    &cfg,
                    GCondition::Stationary { burn: 300 },
                    1.2,
                    8,
                    3000,
                    RngState::new(12),
                )
                .unwrap()
            })
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one, four);
}
