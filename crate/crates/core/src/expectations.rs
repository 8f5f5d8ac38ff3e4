//! Backlog and processing expectations per occurrence period, assembled from
//! `g` and `h` sequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{GTable, HSurface};
use crate::processing::{compute_fg, PeriodState};
use crate::queueing::lindley_step;
use crate::stochastics::ModelConfig;

/// Conditioning data observed at the reference period `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistorySummary {
    pub tau: i64,
    pub capacity: u64,
    /// Origins with data at `tau`, oldest first.
    pub origins: Vec<i64>,
    /// `R_{i, tau-i}` aligned with `origins`.
    pub reports: Vec<u64>,
    /// `B_{i, tau-i}` aligned with `origins`.
    pub backlogs: Vec<u64>,
    pub total_reports: u64,
    pub total_backlog: u64,
    pub f: u64,
    pub g: f64,
    /// `B_{tau+1}`.
    pub next_backlog: u64,
}

impl HistorySummary {
    pub fn new(
        tau: i64,
        capacity: u64,
        origins: Vec<i64>,
        reports: Vec<u64>,
        backlogs: Vec<u64>,
    ) -> Result<Self> {
        let state = PeriodState::new(tau, capacity, origins, backlogs, reports)?;
        Ok(Self::from_state(&state))
    }

    pub fn from_state(state: &PeriodState) -> Self {
        let r = state.total_reports();
        let b = state.total_backlog();
        let (f, g) = compute_fg(b, r, state.capacity);
        Self {
            tau: state.period,
            capacity: state.capacity,
            origins: state.origins.clone(),
            reports: state.reports.clone(),
            backlogs: state.backlog.clone(),
            total_reports: r,
            total_backlog: b,
            f,
            g,
            next_backlog: lindley_step(b, r, state.capacity),
        }
    }

    /// A history with no backlog whose reports at `tau` are split over the
    /// reporting origins in proportion to the delay means.
    pub fn zero_start(config: &ModelConfig, capacity: u64, total_reports: u64) -> Result<Self> {
        let jmax = config.max_delay() as i64;
        let mus = config.mus();
        let mut reports: Vec<u64> = (0..=jmax)
            .map(|r| (total_reports as f64 * mus[(jmax - r) as usize] / config.mu()).floor() as u64)
            .collect();
        let short = total_reports - reports.iter().sum::<u64>();
        *reports.last_mut().expect("at least one origin") += short;
        Self::new(
            0,
            capacity,
            (-jmax..=0).collect(),
            reports,
            vec![0; jmax as usize + 1],
        )
    }

    /// The same observations evaluated under another capacity.
    pub fn with_capacity(&self, capacity: u64) -> Result<Self> {
        Self::new(
            self.tau,
            capacity,
            self.origins.clone(),
            self.reports.clone(),
            self.backlogs.clone(),
        )
    }

    fn lookup(&self, origin: i64) -> (u64, u64) {
        match self.origins.iter().position(|&o| o == origin) {
            Some(k) => (self.reports[k], self.backlogs[k]),
            None => (0, 0),
        }
    }
}

fn need(table: &GTable, len: usize, companion: bool) -> Result<()> {
    let have = if companion {
        table.companion.len()
    } else {
        table.values.len()
    };
    if have < len {
        return Err(Error::Input(format!(
            "table has {have} entries, need {len}"
        )));
    }
    Ok(())
}

/// `E[B_{i,j}] = sum_{k=1}^{min(j, J+1)} (mu_{k-1} / mu) g_{j-k}`.
pub fn uncond_backlog_expectation(g: &GTable, config: &ModelConfig, j: usize) -> Result<f64> {
    if j == 0 {
        return Ok(0.0);
    }
    need(g, j, false)?;
    let mu = config.mu();
    Ok((1..=j.min(config.max_delay() + 1))
        .map(|k| config.mu_j(k - 1) / mu * g.values[j - k])
        .sum())
}

/// `E[P_{i,j}]` from the companion products:
/// `sum_k (mu_{k-1} / mu) q_{j-k} + 1{j <= J} (mu_j / mu) (mu - g_0)`.
pub fn uncond_processed_expectation(g: &GTable, config: &ModelConfig, j: usize) -> Result<f64> {
    need(g, j.max(1), true)?;
    let mu = config.mu();
    let carried: f64 = (1..=j.min(config.max_delay() + 1))
        .map(|k| config.mu_j(k - 1) / mu * g.companion[j - k])
        .sum();
    let fresh = if j <= config.max_delay() {
        config.mu_j(j) / mu * (mu - g.values[0])
    } else {
        0.0
    };
    Ok(carried + fresh)
}

/// `E[B_{i,j}]` for `j = 0..=len`.
pub fn backlog_profile(g: &GTable, config: &ModelConfig) -> Vec<f64> {
    (0..=g.len())
        .map(|j| uncond_backlog_expectation(g, config, j).expect("index within table"))
        .collect()
}

/// `E[P_{i,j}]` for `j = 0..len`.
pub fn processed_profile(g: &GTable, config: &ModelConfig) -> Vec<f64> {
    (0..g.len())
        .map(|j| uncond_processed_expectation(g, config, j).expect("index within table"))
        .collect()
}

/// Cumulative expected proportion of an origin's claims processed by each
/// delay, one row per table.
pub fn processing_pattern(config: &ModelConfig, tables: &[GTable]) -> Vec<Vec<f64>> {
    tables
        .iter()
        .map(|g| {
            let p: Vec<f64> = processed_profile(g, config)
                .into_iter()
                .map(|x| x.max(0.0))
                .collect();
            let total: f64 = p.iter().sum();
            let mut acc = 0.0;
            p.iter()
                .map(|x| {
                    acc += x;
                    if total > 0.0 {
                        (acc / total).min(1.0)
                    } else {
                        1.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Conditional expectation of origin `i`'s backlog at the start of period
/// `tau + k + 1` given the history at `tau`, with constant capacity.
///
/// `surface` must be evaluated at `b = B_{tau+1}` and cover index `k`.
pub fn cond_backlog_expectation(
    history: &HistorySummary,
    surface: &HSurface,
    config: &ModelConfig,
    origin: i64,
    k: usize,
) -> Result<f64> {
    let tau = history.tau;
    if tau - origin + k as i64 + 1 < 0 {
        return Err(Error::Input(format!(
            "origin {origin} has not occurred by period {}",
            tau + k as i64 + 1
        )));
    }
    if k >= surface.len {
        return Err(Error::Input(format!(
            "surface of length {} does not cover k = {k}",
            surface.len
        )));
    }
    let jmax = config.max_delay() as i64;
    let mu = config.mu();
    let mut value = 0.0;
    for m in 1..=k {
        let dev = tau + m as i64 - origin;
        if (0..=jmax).contains(&dev) {
            value += config.mu_j(dev as usize) / mu * surface.hm[m - 1][k - m];
        }
    }
    if origin <= tau {
        let (r_i, b_i) = history.lookup(origin);
        let h = surface.h0[k];
        if tau - origin <= jmax && history.total_reports > 0 {
            value += r_i as f64 / history.total_reports as f64 * history.f as f64 * h;
        }
        value += b_i as f64 * history.g * h;
    }
    Ok(value)
}

/// Sum of [`cond_backlog_expectation`] over every origin that can hold
/// backlog at `tau + k + 1`.
pub fn cond_aggregate_backlog(
    history: &HistorySummary,
    surface: &HSurface,
    config: &ModelConfig,
    k: usize,
) -> Result<f64> {
    let jmax = config.max_delay() as i64;
    let oldest = history
        .origins
        .first()
        .copied()
        .unwrap_or(history.tau)
        .min(history.tau - jmax);
    (oldest..=history.tau + k as i64)
        .map(|i| cond_backlog_expectation(history, surface, config, i, k))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::GCondition;

    fn table(values: Vec<f64>, companion: Vec<f64>) -> GTable {
        let n = values.len();
        GTable {
            eta: 1.2,
            condition: GCondition::Stationary { burn: 1 },
            se: vec![0.0; n],
            companion_se: vec![0.0; n],
            values,
            companion,
            n: 1,
        }
    }

    #[test]
    fn first_delays_use_reporting_split() {
        let cfg = ModelConfig::reference();
        let g = table(
            vec![400.0, 200.0, 100.0, 50.0, 25.0],
            vec![200.0, 100.0, 50.0, 25.0, 25.0],
        );
        assert_eq!(uncond_backlog_expectation(&g, &cfg, 0).unwrap(), 0.0);
        assert!((uncond_backlog_expectation(&g, &cfg, 1).unwrap() - 200.0).abs() < 1e-12);
        assert!(
            (uncond_backlog_expectation(&g, &cfg, 2).unwrap() - (0.5 * 200.0 + 0.3 * 400.0)).abs()
                < 1e-12
        );
        assert!(uncond_backlog_expectation(&g, &cfg, 7).is_err());
    }

    #[test]
    fn no_backlog_processes_at_reporting() {
        let cfg = ModelConfig::reference();
        let g = table(vec![0.0; 8], vec![0.0; 8]);
        for j in 0..8 {
            let p = uncond_processed_expectation(&g, &cfg, j).unwrap();
            let expect = if j <= 3 { cfg.mu_j(j) } else { 0.0 };
            assert!((p - expect).abs() < 1e-9);
        }
        let pattern = processing_pattern(&cfg, &[g]);
        assert!((pattern[0][3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_start_history_splits_reports() {
        let cfg = ModelConfig::reference();
        let h = HistorySummary::zero_start(&cfg, 1200, 1310).unwrap();
        assert_eq!(h.total_reports, 1310);
        assert_eq!(h.next_backlog, 110);
        assert_eq!(h.f, 110);
        assert_eq!(h.g, 0.0);
    }

    #[test]
    fn future_origin_uses_only_future_reports() {
        let cfg = ModelConfig::reference();
        let h = HistorySummary::new(0, 1200, vec![-1, 0], vec![300, 600], vec![900, 0]).unwrap();
        let s = HSurface {
            eta: 1.2,
            b: h.next_backlog as f64,
            len: 3,
            h0: vec![1.0, 0.5, 0.25],
            hm: vec![vec![10.0, 5.0, 2.0], vec![8.0, 4.0], vec![6.0]],
            backlog_sum_se: None,
        };
        // Origin 1 reports from period 1 on: m = 1 at delay 0, m = 2 at delay 1.
        let v = cond_backlog_expectation(&h, &s, &cfg, 1, 2).unwrap();
        assert!((v - (0.5 * 5.0 + 0.3 * 8.0)).abs() < 1e-12);
        // Newly reported plus carried backlog for an observed origin at k = 0.
        let v0 = cond_backlog_expectation(&h, &s, &cfg, -1, 0).unwrap();
        let expect = 300.0 / 900.0 * h.f as f64 + 900.0 * h.g;
        assert!((v0 - expect).abs() < 1e-9);
    }
}
