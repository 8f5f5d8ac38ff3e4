//! Capacity cost curves and their minimizers.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{estimate_g_ergodic, HProvider, ReportStream};
use crate::expectations::{backlog_profile, HistorySummary};
use crate::stochastics::ModelConfig;

/// Unit costs of the cost models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostParams {
    pub kappa_g: f64,
    pub kappa_b: f64,
    pub kappa_c: f64,
    pub lambda_b: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            kappa_g: 1.0,
            kappa_b: 0.075,
            kappa_c: 0.5,
            lambda_b: 1.05,
        }
    }
}

impl CostParams {
    pub fn validate(&self, inflating: bool) -> Result<()> {
        for (name, v) in [
            ("kappa_g", self.kappa_g),
            ("kappa_b", self.kappa_b),
            ("kappa_c", self.kappa_c),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        if inflating && !(self.lambda_b > 1.0 && self.lambda_b.is_finite()) {
            return Err(Error::Parameter(format!(
                "lambda_b must exceed one, got {}",
                self.lambda_b
            )));
        }
        Ok(())
    }
}

fn capacity(eta: f64, mu: f64) -> f64 {
    (eta * mu).round()
}

/// `kappa_g mu + kappa_b E[B] + kappa_c (c - mu)`.
pub fn cost_linear(eta: f64, mean_backlog: f64, params: &CostParams, mu: f64) -> f64 {
    params.kappa_g * mu + params.kappa_b * mean_backlog + params.kappa_c * (capacity(eta, mu) - mu)
}

/// Inflating cost with the delay sum cut where the residual backlog drops
/// below `TRUNCATION * mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflatingCost {
    pub value: f64,
    /// Last delay included in the sum.
    pub truncated_at: usize,
    pub warning: Option<String>,
}

/// Relative residual backlog at which the inflating sum stops.
pub const TRUNCATION: f64 = 1e-3;

/// `kappa_g sum_j lambda^j E[P_{i,j}] + kappa_c (c - mu)` from the per-delay
/// backlog expectations `E[B_{i,j}]`, `j = 0, 1, ...`.
pub fn cost_inflating(
    eta: f64,
    backlog_by_delay: &[f64],
    config: &ModelConfig,
    params: &CostParams,
) -> Result<InflatingCost> {
    params.validate(true)?;
    if backlog_by_delay.len() < 2 {
        return Err(Error::Input("need at least two delays".into()));
    }
    let mu = config.mu();
    let jmax = config.max_delay();
    let mut sum = 0.0;
    let mut weight = 1.0;
    let last = backlog_by_delay.len() - 2;
    let mut stop = None;
    for j in 0..=last {
        let reported = if j <= jmax { config.mu_j(j) } else { 0.0 };
        sum += weight * (backlog_by_delay[j] + reported - backlog_by_delay[j + 1]);
        weight *= params.lambda_b;
        if j >= jmax && backlog_by_delay[j + 1] < TRUNCATION * mu {
            stop = Some(j);
            break;
        }
    }
    let warning = match stop {
        Some(_) => None,
        None => Some(format!(
            "residual backlog {:.3} at delay {} is above the truncation level at eta = {eta}",
            backlog_by_delay[last + 1],
            last + 1
        )),
    };
    Ok(InflatingCost {
        value: params.kappa_g * sum + params.kappa_c * (capacity(eta, mu) - mu),
        truncated_at: stop.unwrap_or(last),
        warning,
    })
}

/// Constant-capacity heavy-traffic optimum `(c*, minimal cost)`.
pub fn heavy_traffic_optimum(
    params: &CostParams,
    mean_reports: f64,
    var_reports: f64,
) -> Result<(f64, f64)> {
    if !(params.kappa_c > 0.0) {
        return Err(Error::Parameter("kappa_c must be positive".into()));
    }
    let c = mean_reports + (var_reports * params.kappa_b / (2.0 * params.kappa_c)).sqrt();
    let cost = params.kappa_g * mean_reports
        + (2.0 * params.kappa_b * params.kappa_c * var_reports).sqrt();
    Ok((c, cost))
}

/// Observed and expected reports per origin and period.
///
/// Row `r` is origin `tau - J + r`; column 0 holds the reports observed at
/// `tau` and column `s >= 1` the expected reports in period `tau + s`.
pub fn runoff_matrix(
    observed: &[u64],
    config: &ModelConfig,
    horizon: usize,
) -> Result<Vec<Vec<f64>>> {
    let jmax = config.max_delay();
    if horizon == 0 {
        return Err(Error::Input("horizon must be at least one".into()));
    }
    if observed.len() != jmax + 1 {
        return Err(Error::Input(format!(
            "expected {} observed reports, got {}",
            jmax + 1,
            observed.len()
        )));
    }
    Ok((0..horizon + jmax + 1)
        .map(|r| {
            (0..=horizon)
                .map(|s| {
                    if s == 0 {
                        return if r <= jmax { observed[r] as f64 } else { 0.0 };
                    }
                    let dev = (s + jmax) as i64 - r as i64;
                    if (0..=jmax as i64).contains(&dev) {
                        config.mu_j(dev as usize)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect())
}

/// A cost value with its Monte Carlo standard error (zero when exact).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub value: f64,
    pub se: f64,
}

/// Average per-period linear cost over the planning window `(tau, tau + T]`.
pub fn cost_conditional_linear(
    eta: f64,
    horizon: usize,
    history: &HistorySummary,
    provider: &dyn HProvider,
    params: &CostParams,
    mu: f64,
) -> Result<CostEstimate> {
    if horizon == 0 || horizon > provider.max_len() {
        return Err(Error::Input(format!(
            "planning horizon {horizon} outside provider range 1..={}",
            provider.max_len()
        )));
    }
    let c = capacity(eta, mu);
    let h = history.with_capacity(c as u64)?;
    let base = params.kappa_g * mu + params.kappa_c * (c - mu);
    if params.kappa_b == 0.0 {
        return Ok(CostEstimate {
            value: base,
            se: 0.0,
        });
    }
    let s = provider.surface(h.next_backlog as f64, eta, horizon)?;
    let t = horizon as f64;
    let carried = h.total_backlog as f64 * h.g + h.f as f64;
    let backlog = carried * s.h0.iter().take(horizon).sum::<f64>() + s.delayed_sum(horizon);
    Ok(CostEstimate {
        value: base + params.kappa_b * backlog / t,
        se: params.kappa_b * s.backlog_sum_se.unwrap_or(0.0) / t,
    })
}

/// One evaluated point of a cost curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub eta: f64,
    pub cost: f64,
    pub se: f64,
}

/// Minimizer output with the sampled curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub eta_star: f64,
    pub cost: f64,
    pub se: f64,
    pub method: String,
    pub bracket: (f64, f64),
    pub iterations: usize,
    pub curve: Vec<CurvePoint>,
}

impl OptimizationResult {
    pub fn write_curve_csv<W: Write>(
        &self,
        mut w: W,
        header: &serde_json::Value,
    ) -> std::io::Result<()> {
        writeln!(w, "# {header}")?;
        writeln!(w, "eta,cost,se")?;
        for p in &self.curve {
            writeln!(w, "{},{},{}", p.eta, p.cost, p.se)?;
        }
        Ok(())
    }

    /// Summary JSON without the curve.
    pub fn summary_json(&self, header: &serde_json::Value) -> serde_json::Value {
        serde_json::json!({
            "provenance": header,
            "eta_star": self.eta_star,
            "cost": self.cost,
            "se": self.se,
            "method": self.method,
            "bracket": [self.bracket.0, self.bracket.1],
            "iterations": self.iterations,
        })
    }
}

/// Default grid step of [`optimize_eta`].
pub const GRID_STEP: f64 = 0.005;

/// Grid scan over `bracket` followed by golden-section refinement around the
/// best grid point. `cost` returns `(value, se)`.
pub fn optimize_eta<F>(
    cost: F,
    bracket: (f64, f64),
    step: f64,
    tol: f64,
) -> Result<OptimizationResult>
where
    F: Fn(f64) -> Result<(f64, f64)> + Sync,
{
    let (lo, hi) = bracket;
    if !(lo < hi && step > 0.0 && tol > 0.0) {
        return Err(Error::Input(
            "need lo < hi and positive step and tolerance".into(),
        ));
    }
    let eval = |eta: f64| -> Result<CurvePoint> {
        let (c, se) = cost(eta)?;
        if !c.is_finite() {
            return Err(Error::Optimization {
                eta,
                reason: format!("cost evaluated to {c}"),
            });
        }
        Ok(CurvePoint { eta, cost: c, se })
    };
    let points = ((hi - lo) / step).round() as usize + 1;
    let curve: Vec<CurvePoint> = crate::parallel::map_indexed(points, |k| {
        eval(if k + 1 == points {
            hi
        } else {
            lo + k as f64 * step
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let mut best = 0;
    for (k, p) in curve.iter().enumerate() {
        if p.cost < curve[best].cost {
            best = k;
        }
    }
    let a0 = curve[best.saturating_sub(1)].eta;
    let b0 = curve[(best + 1).min(points - 1)].eta;
    let mut winner = curve[best];
    let mut iterations = 0;
    if b0 - a0 > tol {
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (a0, b0);
        let mut x1 = b - ratio * (b - a);
        let mut x2 = a + ratio * (b - a);
        let mut f1 = eval(x1)?;
        let mut f2 = eval(x2)?;
        while b - a > tol {
            iterations += 1;
            if f1.cost <= f2.cost {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - ratio * (b - a);
                f1 = eval(x1)?;
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + ratio * (b - a);
                f2 = eval(x2)?;
            }
        }
        for p in [f1, f2] {
            if p.cost < winner.cost || (p.cost == winner.cost && p.eta < winner.eta) {
                winner = p;
            }
        }
    }
    Ok(OptimizationResult {
        eta_star: winner.eta,
        cost: winner.cost,
        se: winner.se,
        method: "grid+golden".into(),
        bracket: (a0, b0),
        iterations,
        curve,
    })
}

/// Stationary cost curves evaluated with one shared report stream.
#[derive(Debug, Clone)]
pub struct UncondCostModel {
    pub config: ModelConfig,
    pub params: CostParams,
    pub stream: ReportStream,
    /// Length of the `g` sequences.
    pub t_len: usize,
    pub burn: usize,
}

/// Stationary quantities at one capacity ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncondPoint {
    pub eta: f64,
    /// `E[B]` from summing the per-delay expectations.
    pub mean_backlog: f64,
    /// Time-average backlog of the chain, an independent check.
    pub chain_mean: f64,
    pub chain_se: f64,
    pub linear: f64,
    pub inflating: InflatingCost,
}

impl UncondCostModel {
    pub fn evaluate(&self, eta: f64) -> Result<UncondPoint> {
        let e = estimate_g_ergodic(&self.config, eta, self.t_len, self.burn, &self.stream)?;
        let profile = backlog_profile(&e.table, &self.config);
        let mean_backlog: f64 = profile.iter().sum();
        Ok(UncondPoint {
            eta,
            mean_backlog,
            chain_mean: e.mean_backlog,
            chain_se: e.mean_backlog_se,
            linear: cost_linear(eta, mean_backlog, &self.params, self.config.mu()),
            inflating: cost_inflating(eta, &profile, &self.config, &self.params)?,
        })
    }

    pub fn linear(&self, eta: f64) -> Result<(f64, f64)> {
        let p = self.evaluate(eta)?;
        Ok((p.linear, self.params.kappa_b * p.chain_se))
    }

    pub fn inflating(&self, eta: f64) -> Result<(f64, f64)> {
        let p = self.evaluate(eta)?;
        Ok((p.inflating.value, f64::NAN))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_ground_up_cost() {
        let p = CostParams {
            kappa_b: 0.0,
            kappa_c: 0.0,
            ..CostParams::default()
        };
        assert_eq!(cost_linear(1.3, 12345.0, &p, 1000.0), 1000.0);
    }

    #[test]
    fn heavy_traffic_optimum_values() {
        let (c, cost) = heavy_traffic_optimum(&CostParams::default(), 1000.0, 501_000.0).unwrap();
        let expect = 1000.0 + (501_000.0f64 * 0.075).sqrt();
        assert!((c - expect).abs() < 1e-9);
        assert!((cost - expect).abs() < 1e-9);
        assert!((c / 1000.0 - 1.194).abs() < 5e-4);
        let p = CostParams {
            kappa_b: 0.0,
            ..CostParams::default()
        };
        assert_eq!(
            heavy_traffic_optimum(&p, 1000.0, 501_000.0).unwrap(),
            (1000.0, 1000.0)
        );
    }

    #[test]
    fn runoff_columns() {
        let cfg = ModelConfig::reference();
        let m = runoff_matrix(&[40, 160, 410, 700], &cfg, 6).unwrap();
        assert_eq!(m.len(), 10);
        let col = |s: usize| m.iter().map(|row| row[s]).sum::<f64>();
        assert_eq!(col(0), 1310.0);
        for s in 1..=6 {
            assert!((col(s) - 1000.0).abs() < 1e-9);
        }
        assert_eq!(m[3][1], 300.0);
        assert_eq!(m[4][1], 500.0);
        assert_eq!(m[0][1], 0.0);
    }

    #[test]
    fn quadratic_minimum() {
        let r = optimize_eta(
            |x| Ok(((x - 1.25).powi(2), 0.0)),
            (1.05, 1.5),
            GRID_STEP,
            1e-6,
        )
        .unwrap();
        assert!((r.eta_star - 1.25).abs() < 1e-5);
        assert!(r.curve.iter().all(|p| r.cost <= p.cost));
        assert_eq!(r.curve.len(), 91);
    }

    #[test]
    fn ties_go_to_smallest_eta() {
        let r = optimize_eta(|_| Ok((7.0, 0.0)), (1.05, 1.5), GRID_STEP, 1e-4).unwrap();
        assert_eq!(r.eta_star, 1.05);
    }

    #[test]
    fn nonfinite_cost_reports_eta() {
        let r = optimize_eta(
            |x| Ok((if x > 1.3 { f64::NAN } else { x }, 0.0)),
            (1.05, 1.5),
            GRID_STEP,
            1e-4,
        );
        match r {
            Err(Error::Optimization { eta, .. }) => assert!(eta > 1.3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inflating_without_backlog() {
        let cfg = ModelConfig::reference();
        let p = CostParams::default();
        let c = cost_inflating(100.0, &[0.0; 10], &cfg, &p).unwrap();
        let expect: f64 = (0..4)
            .map(|j| 1.05f64.powi(j as i32) * cfg.mu_j(j))
            .sum::<f64>()
            + 0.5 * 99_000.0;
        assert!((c.value - expect).abs() < 1e-6);
        assert!(c.warning.is_none());
        assert_eq!(c.truncated_at, 3);
    }
}
