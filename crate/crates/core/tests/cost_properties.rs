use backlog_core::costing::{
    cost_conditional_linear, cost_linear, heavy_traffic_optimum, optimize_eta, CostParams,
    UncondCostModel,
};
use backlog_core::estimation::{McHProvider, ReportStream};
use backlog_core::expectations::HistorySummary;
use backlog_core::{ModelConfig, RngState};
use proptest::prelude::*;
use std::sync::OnceLock;

fn bank() -> &'static McHProvider {
    static BANK: OnceLock<McHProvider> = OnceLock::new();
    BANK.get_or_init(|| {
        McHProvider::new(&ModelConfig::reference(), 200, 40, RngState::new(1)).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn no_backlog_penalty_leaves_base_cost(
        eta in 1.05f64..1.5,
        t in 1usize..40,
        reports in prop::collection::vec(0u64..1500, 4),
        carried in prop::collection::vec(0u64..3000, 3),
    ) {
        let cfg = ModelConfig::reference();
        let mut backlog = carried.clone();
        backlog.push(0);
        let history = HistorySummary::new(0, 1200, vec![-3, -2, -1, 0], reports, backlog).unwrap();
        let params = CostParams { kappa_b: 0.0, ..CostParams::default() };
        let got = cost_conditional_linear(eta, t, &history, bank(), &params, cfg.mu()).unwrap();
        let c = (eta * 1000.0).round();
        prop_assert_eq!(got.value, params.kappa_g * 1000.0 + params.kappa_c * (c - 1000.0));
    }

    #[test]
    fn linear_cost_grows_with_backlog(eta in 1.05f64..1.5, b in 0.0f64..5000.0, extra in 0.1f64..100.0) {
        let p = CostParams::default();
        prop_assert!(cost_linear(eta, b + extra, &p, 1000.0) > cost_linear(eta, b, &p, 1000.0));
    }
}

#[test]
fn heavy_traffic_optimum_minimizes_its_cost() {
    let p = CostParams::default();
    let (c_star, cost) = heavy_traffic_optimum(&p, 1000.0, 501_000.0).unwrap();
    let ht = |c: f64| {
        p.kappa_g * 1000.0 + p.kappa_c * (c - 1000.0) + p.kappa_b * 501_000.0 / (2.0 * (c - 1000.0))
    };
    assert!((ht(c_star) - cost).abs() < 1e-9);
    let r = optimize_eta(|e| Ok((ht(e * 1000.0), 0.0)), (1.05, 1.5), 0.005, 1e-6).unwrap();
    assert!((r.eta_star - c_star / 1000.0).abs() < 1e-4);
}

#[test]
fn unconditional_linear_curve_is_convex_up_to_noise() {
    let config = ModelConfig::reference();
    let model = UncondCostModel {
        stream: ReportStream::new(&config, 1_000_000, RngState::new(4)),
        config,
        params: CostParams::default(),
        t_len: 3000,
        burn: 5000,
    };
    let etas: Vec<f64> = (0..=18).map(|k| 1.05 + 0.025 * k as f64).collect();
    let pts: Vec<(f64, f64)> = etas.iter().map(|&e| model.linear(e).unwrap()).collect();
    for w in pts.windows(3) {
        let d2 = w[0].0 - 2.0 * w[1].0 + w[2].0;
        let se = (w[0].1.powi(2) + 4.0 * w[1].1.powi(2) + w[2].1.powi(2)).sqrt();
        assert!(d2 >= -3.0 * se, "second difference {d2} below -3 SE ({se})");
    }
    let p = model.evaluate(1.2).unwrap();
    assert!(
        (p.mean_backlog - p.chain_mean).abs() <= 0.03 * p.chain_mean,
        "{p:?}"
    );
}

#[test]
fn conditional_optimum_moves_up_with_horizon() {
    let cfg = ModelConfig::reference();
    let bank = McHProvider::new(&cfg, 4000, 120, RngState::new(8)).unwrap();
    let history = HistorySummary::zero_start(&cfg, 1200, 1310).unwrap();
    let params = CostParams::default();
    let stars: Vec<f64> = [12, 36, 120]
        .iter()
        .map(|&t| {
            optimize_eta(
                |e| {
                    cost_conditional_linear(e, t, &history, &bank, &params, 1000.0)
                        .map(|c| (c.value, c.se))
                },
                (1.05, 1.5),
                0.005,
                1e-4,
            )
            .unwrap()
            .eta_star
        })
        .collect();
    assert!(stars.windows(2).all(|w| w[0] < w[1]), "{stars:?}");
}
