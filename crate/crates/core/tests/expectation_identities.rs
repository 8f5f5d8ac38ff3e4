use backlog_core::estimation::{estimate_g, GCondition, HProvider, McHProvider};
use backlog_core::expectations::{
    backlog_profile, cond_aggregate_backlog, processed_profile, HistorySummary,
};
use backlog_core::{ModelConfig, RngState};
use proptest::prelude::*;
use std::sync::OnceLock;

fn bank() -> &'static McHProvider {
    static BANK: OnceLock<McHProvider> = OnceLock::new();
    BANK.get_or_init(|| {
        McHProvider::new(&ModelConfig::reference(), 500, 6, RngState::new(2)).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Summing the per-origin conditional backlogs one step ahead recovers the
    /// observed `B_{tau+1}`.
    #[test]
    fn next_period_aggregate_is_observed(
        reports in prop::collection::vec(0u64..1500, 4),
        carried in prop::collection::vec(0u64..3000, 3),
        eta in 1.05f64..1.5,
    ) {
        let cfg = ModelConfig::reference();
        let mut backlog = carried.clone();
        backlog.push(0);
        let c = cfg.capacity(eta);
        let h = HistorySummary::new(0, c, vec![-3, -2, -1, 0], reports, backlog).unwrap();
        let s = bank().surface(h.next_backlog as f64, eta, 6).unwrap();
        let agg = cond_aggregate_backlog(&h, &s, &cfg, 0).unwrap();
        prop_assert!((agg - h.next_backlog as f64).abs() < 1e-6 * (1.0 + agg));
    }
}

#[test]
fn stationary_profiles_balance() {
    let cfg = ModelConfig::reference();
    let g = estimate_g(
        &cfg,
        GCondition::Stationary { burn: 1200 },
        1.4,
        200,
        50_000,
        RngState::new(5),
    )
    .unwrap();
    let processed: f64 = processed_profile(&g, &cfg).iter().sum();
    assert!((processed / cfg.mu() - 1.0).abs() < 0.01, "{processed}");
    let backlog: f64 = backlog_profile(&g, &cfg).iter().sum();
    assert!((backlog - g.total()).abs() < 1e-6 * backlog.max(1.0));
}
