//! Aggregate backlog dynamics and single-server queueing formulas.
//!
//! The total backlog follows the Lindley recursion
//! `B_{t+1} = max(B_t + R_t - C_t, 0)`. Capacities are real valued here so the
//! same code covers GI/G/1 validation runs with exponential capacity.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::Moments;
use crate::stochastics::RngState;

/// One Lindley step on counts.
pub fn lindley_step(backlog: u64, reported: u64, capacity: u64) -> u64 {
    (backlog + reported).saturating_sub(capacity)
}

/// One Lindley step on reals.
pub fn lindley_step_real(backlog: f64, reported: f64, capacity: f64) -> f64 {
    (backlog + reported - capacity).max(0.0)
}

/// A backlog trajectory `B_0, ..., B_T` with its increments `R_t - C_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LindleySeries {
    pub initial: f64,
    /// `backlog[t]` is `B_t`; length is one more than `increments`.
    pub backlog: Vec<f64>,
    pub increments: Vec<f64>,
}

impl LindleySeries {
    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn last(&self) -> f64 {
        *self.backlog.last().expect("path holds the initial backlog")
    }
}

/// Run the recursion over a report and capacity sequence.
pub fn lindley_path(initial: f64, reports: &[f64], capacities: &[f64]) -> Result<LindleySeries> {
    if reports.len() != capacities.len() {
        return Err(Error::Input(format!(
            "{} reports but {} capacities",
            reports.len(),
            capacities.len()
        )));
    }
    if initial < 0.0 {
        return Err(Error::Input("initial backlog must be nonnegative".into()));
    }
    let increments: Vec<f64> = reports.iter().zip(capacities).map(|(r, c)| r - c).collect();
    let mut backlog = Vec::with_capacity(reports.len() + 1);
    backlog.push(initial);
    let mut b = initial;
    for d in &increments {
        b = (b + d).max(0.0);
        backlog.push(b);
    }
    Ok(LindleySeries {
        initial,
        backlog,
        increments,
    })
}

/// `rho = E[R] / E[C]`.
pub fn traffic_intensity(mean_reports: f64, mean_capacity: f64) -> Result<f64> {
    if !(mean_capacity > 0.0) {
        return Err(Error::Domain("mean capacity must be positive".into()));
    }
    Ok(mean_reports / mean_capacity)
}

/// Heavy-traffic approximation of the stationary mean backlog:
/// `E[C] rho^2 / (2 (1 - rho)) (Var R / E[R]^2 + Var C / E[C]^2)`.
pub fn heavy_traffic_approx(
    mean_reports: f64,
    var_reports: f64,
    mean_capacity: f64,
    var_capacity: f64,
) -> Result<f64> {
    let rho = traffic_intensity(mean_reports, mean_capacity)?;
    if rho >= 1.0 {
        return Err(Error::Domain(format!(
            "traffic intensity {rho} is not below one"
        )));
    }
    if mean_reports <= 0.0 {
        return Ok(0.0);
    }
    let scv = var_reports / (mean_reports * mean_reports)
        + var_capacity / (mean_capacity * mean_capacity);
    Ok(mean_capacity * rho * rho / (2.0 * (1.0 - rho)) * scv)
}

/// Kingman/Daley upper bound for constant capacity `c = eta E[R]`:
/// `Var R / (2 E[R] (eta - 1))`.
pub fn kingman_daley_bound(mean_reports: f64, var_reports: f64, eta: f64) -> Result<f64> {
    if !(eta > 1.0) {
        return Err(Error::Domain(format!(
            "capacity ratio {eta} must exceed one"
        )));
    }
    if var_reports == 0.0 {
        return Ok(0.0);
    }
    Ok(var_reports / (2.0 * mean_reports * (eta - 1.0)))
}

/// Exact mean backlog for exponential capacity with mean `c`:
/// `(E[R] / (c - E[R])) E[R^2] / (2 E[R])`.
pub fn pollaczek_khintchine(mean_reports: f64, second_moment: f64, c: f64) -> Result<f64> {
    if mean_reports >= c {
        return Err(Error::Domain(format!(
            "E[R] = {mean_reports} is not below c = {c}"
        )));
    }
    if mean_reports <= 0.0 {
        return Ok(0.0);
    }
    Ok(mean_reports / (c - mean_reports) * second_moment / (2.0 * mean_reports))
}

/// Truncated Monte Carlo evaluation of `E[B] = sum_k E[max(S_k, 0)] / k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesEstimate {
    pub value: f64,
    pub se: f64,
    /// Estimated size of the last included term, a truncation diagnostic.
    pub last_term: f64,
    pub terms: usize,
    pub replicates: usize,
}

/// Estimate the stationary mean backlog from the random-walk series.
///
/// Each replicate draws one walk of `terms` increments and contributes
/// `sum_k max(S_k, 0) / k`; the replicate mean is unbiased for the truncated
/// series.
pub fn stationary_mean_series<F>(
    increment: F,
    terms: usize,
    replicates: usize,
    state: RngState,
) -> Result<SeriesEstimate>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> f64 + Sync,
{
    if terms == 0 {
        return Err(Error::Input(
            "series truncation must be at least one".into(),
        ));
    }
    if replicates < 2 {
        return Err(Error::Input("need at least two replicates".into()));
    }
    struct Acc {
        total: Moments,
        last: Moments,
        drift: Moments,
    }
    let acc = crate::parallel::fold_replicates(
        replicates,
        || Acc {
            total: Moments::new(),
            last: Moments::new(),
            drift: Moments::new(),
        },
        |acc, k| {
            let mut rng = state.replicate(k as u64).rng();
            let mut s = 0.0;
            let mut sum = 0.0;
            let mut last = 0.0;
            for step in 1..=terms {
                let x = increment(&mut rng);
                acc.drift.push(x);
                s += x;
                last = s.max(0.0) / step as f64;
                sum += last;
            }
            acc.total.push(sum);
            acc.last.push(last);
        },
        |a, b| {
            a.total.merge(&b.total);
            a.last.merge(&b.last);
            a.drift.merge(&b.drift);
        },
    );
    // Increments are iid across replicates and steps, so the plain SE applies.
    if acc.drift.mean() - 3.0 * acc.drift.se() >= 0.0 && acc.drift.mean() > 0.0 {
        return Err(Error::Instability(format!(
            "mean increment {:.4} is nonnegative (traffic intensity >= 1)",
            acc.drift.mean()
        )));
    }
    Ok(SeriesEstimate {
        value: acc.total.mean(),
        se: acc.total.se(),
        last_term: acc.last.mean(),
        terms,
        replicates,
    })
}

/// Long-run mean of a single backlog chain, with a batch-means standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRunMean {
    pub mean: f64,
    pub se: f64,
    pub periods: usize,
}

/// Simulate `burn + periods` real-valued Lindley steps from zero and average
/// the backlog after burn-in.
pub fn long_run_mean<R, F, G>(
    rng: &mut R,
    burn: usize,
    periods: usize,
    mut report: F,
    mut capacity: G,
) -> LongRunMean
where
    R: Rng,
    F: FnMut(&mut R) -> f64,
    G: FnMut(&mut R) -> f64,
{
    let mut b = 0.0;
    for _ in 0..burn {
        let r = report(rng);
        let c = capacity(rng);
        b = lindley_step_real(b, r, c);
    }
    let mut xs = Vec::with_capacity(periods);
    for _ in 0..periods {
        xs.push(b);
        let r = report(rng);
        let c = capacity(rng);
        b = lindley_step_real(b, r, c);
    }
    let mean = xs.iter().sum::<f64>() / periods.max(1) as f64;
    LongRunMean {
        mean,
        se: crate::stats::batch_means_se(&xs, 100),
        periods,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_examples() {
        assert_eq!(lindley_step(0, 900, 1200), 0);
        assert_eq!(lindley_step(0, 1310, 1200), 110);
        assert_eq!(lindley_step(500, 900, 1200), 200);
    }

    #[test]
    fn path_examples() {
        let p = lindley_path(0.0, &[1500.0, 1500.0], &[1200.0, 1200.0]).unwrap();
        assert_eq!(p.backlog, vec![0.0, 300.0, 600.0]);
        let p = lindley_path(0.0, &[900.0, 1000.0, 1100.0], &[1200.0; 3]).unwrap();
        assert!(p.backlog.iter().all(|b| *b == 0.0));
        assert!(matches!(
            lindley_path(0.0, &[1.0, 2.0], &[1.0]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn closed_forms() {
        let ht = heavy_traffic_approx(1000.0, 501_000.0, 1200.0, 0.0).unwrap();
        assert!((ht - 1252.5).abs() < 1e-9);
        assert_eq!(heavy_traffic_approx(1000.0, 0.0, 1200.0, 0.0).unwrap(), 0.0);
        assert!(heavy_traffic_approx(1200.0, 1.0, 1200.0, 0.0).is_err());

        let kd = kingman_daley_bound(1000.0, 501_000.0, 1.2).unwrap();
        assert!((kd - 1252.5).abs() < 1e-9);
        assert!((kingman_daley_bound(1000.0, 1000.0, 1.2).unwrap() - 2.5).abs() < 1e-12);
        assert_eq!(kingman_daley_bound(1000.0, 0.0, 1.2).unwrap(), 0.0);
        assert!(kingman_daley_bound(1000.0, 1.0, 1.0).is_err());

        assert!((pollaczek_khintchine(1.0, 2.0, 2.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((pollaczek_khintchine(1.0, 1.0, 2.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(pollaczek_khintchine(2.0, 4.0, 2.0).is_err());

        let rho = traffic_intensity(1000.0, 1200.0).unwrap();
        assert!((rho - 0.833_333_333_333).abs() < 1e-9);
        assert_eq!(traffic_intensity(0.0, 5.0).unwrap(), 0.0);
        assert!((traffic_intensity(1000.0, 1.25 * 1000.0).unwrap() - 1.0 / 1.25).abs() < 1e-12);
    }

    #[test]
    fn heavy_traffic_with_exponential_capacity_is_pollaczek_khintchine() {
        // R ~ NB moments, C exponential with mean c: Var C = c^2.
        let (er, var_r, c) = (1000.0, 501_000.0, 1200.0);
        let ht = heavy_traffic_approx(er, var_r, c, c * c).unwrap();
        let pk = pollaczek_khintchine(er, var_r + er * er, c).unwrap();
        assert!((ht - pk).abs() < 1e-9 * pk);
    }

    #[test]
    fn empty_system_series_is_zero() {
        let est = stationary_mean_series(|_| -5.0, 50, 10, RngState::new(1)).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn unstable_series_rejected() {
        let r = stationary_mean_series(|rng| rng.random::<f64>() + 0.1, 20, 100, RngState::new(2));
        assert!(matches!(r, Err(Error::Instability(_))));
    }
}
