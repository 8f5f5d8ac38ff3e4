//! Monte Carlo estimators for the `g` and `h` expectation sequences and the
//! stationarity diagnostics of the aggregate backlog chain.
//!
//! Indexing follows the aggregate chain started at period 1 with `B_1 = b`:
//!
//! * `g_j(b) = E[F_1 G_2 ... G_{j+1} | B_1 = b]`, so `g_0 = E[F_1]`;
//! * `h_j(b, 0) = E[G_1 ... G_j | B_1 = b]`, so `h_0 = 1`;
//! * `h_j(b, m) = E[F_m G_{m+1} ... G_{m+j} | B_1 = b]` for `m >= 1`.
//!
//! The companion sequence `q_j = E[F_1 G_2 ... G_{j+1} (1 - G_{j+2})]` is
//! recorded in the same pass as `g`; under stationarity `q_j = g_j - g_{j+1}`.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::fold_replicates;
use crate::processing::compute_fg;
use crate::queueing::lindley_step;
use crate::stats::{correlation, ks_two_sample, KsResult, Moments};
use crate::stochastics::{ModelConfig, NegBinSampler, RngState};

/// Default number of burn-in periods.
pub const DEFAULT_BURN: usize = 1200;

/// Run the aggregate chain `burn` periods from `start` with constant capacity.
pub fn burn_in_from<R: Rng + ?Sized>(
    config: &ModelConfig,
    capacity: u64,
    start: u64,
    burn: usize,
    rng: &mut R,
) -> u64 {
    let sampler = config.total_sampler();
    let mut b = start;
    for _ in 0..burn {
        b = lindley_step(b, sampler.sample(rng), capacity);
    }
    b
}

/// One approximately stationary backlog draw at capacity ratio `eta`.
pub fn burn_in_sampler<R: Rng + ?Sized>(
    config: &ModelConfig,
    eta: f64,
    burn: usize,
    rng: &mut R,
) -> Result<u64> {
    check_eta(eta)?;
    if burn == 0 {
        return Err(Error::Input("burn-in must be at least one period".into()));
    }
    Ok(burn_in_from(config, config.capacity(eta), 0, burn, rng))
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 1.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::Instability(format!(
            "capacity ratio {eta} gives traffic intensity >= 1"
        )))
    }
}

/// Compare post-burn-in windows: draws at `burn` against draws at
/// `burn + window`, from disjoint replicate sets.
pub fn burn_in_ks(
    config: &ModelConfig,
    eta: f64,
    burn: usize,
    window: usize,
    n: usize,
    state: RngState,
) -> Result<KsResult> {
    check_eta(eta)?;
    let c = config.capacity(eta);
    let draw = |k: usize, periods: usize| {
        burn_in_from(config, c, 0, periods, &mut state.replicate(k as u64).rng()) as f64
    };
    let a: Vec<f64> = crate::parallel::map_indexed(n, |k| draw(2 * k, burn));
    let b: Vec<f64> = crate::parallel::map_indexed(n, |k| draw(2 * k + 1, burn + window));
    Ok(ks_two_sample(&a, &b, 0.01))
}

/// Starting backlog of an estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GCondition {
    /// `B_1` drawn by burn-in from zero.
    Stationary { burn: usize },
    /// `B_1 = b`.
    Backlog(u64),
}

/// Estimated `g_j` sequence with its companion products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GTable {
    pub eta: f64,
    pub condition: GCondition,
    pub values: Vec<f64>,
    pub se: Vec<f64>,
    /// `q_j = E[F_1 G_2 ... G_{j+1} (1 - G_{j+2})]`.
    pub companion: Vec<f64>,
    pub companion_se: Vec<f64>,
    pub n: usize,
}

impl GTable {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `sum_j g_j`, the stationary mean backlog when `g` is unconditional.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `g_{T-1} / max(g_0, eps)`: how much mass the truncation may miss.
    pub fn tail_mass(&self) -> f64 {
        match (self.values.first(), self.values.last()) {
            (Some(first), Some(last)) => last / first.max(1e-12),
            _ => 0.0,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W, header: &serde_json::Value) -> std::io::Result<()> {
        let mut h = header.clone();
        if let Some(obj) = h.as_object_mut() {
            obj.insert("eta".into(), self.eta.into());
            obj.insert(
                "condition".into(),
                serde_json::to_value(self.condition).unwrap_or_default(),
            );
            obj.insert("n".into(), self.n.into());
        }
        writeln!(w, "# {h}")?;
        writeln!(w, "j,value,se,companion,companion_se")?;
        for j in 0..self.values.len() {
            writeln!(
                w,
                "{j},{},{},{},{}",
                self.values[j], self.se[j], self.companion[j], self.companion_se[j]
            )?;
        }
        Ok(())
    }
}

/// Estimate `g_j`, `j < t_len`, from `n` independent replicates.
pub fn estimate_g(
    config: &ModelConfig,
    condition: GCondition,
    eta: f64,
    t_len: usize,
    n: usize,
    state: RngState,
) -> Result<GTable> {
    check_eta(eta)?;
    if t_len == 0 || n < 2 {
        return Err(Error::Input(
            "need T >= 1 and at least two replicates".into(),
        ));
    }
    let c = config.capacity(eta);
    let sampler = config.total_sampler();
    let acc = fold_replicates(
        n,
        || (vec![Moments::new(); t_len], vec![Moments::new(); t_len]),
        |(vals, comp), k| {
            let mut rng = state.replicate(k as u64).rng();
            let b1 = match condition {
                GCondition::Backlog(b) => b,
                GCondition::Stationary { burn } => burn_in_from(config, c, 0, burn, &mut rng),
            };
            let path = g_products(b1, c, t_len, &sampler, &mut rng);
            for j in 0..t_len {
                vals[j].push(path.0[j]);
                comp[j].push(path.1[j]);
            }
        },
        merge_moment_vecs,
    );
    Ok(GTable {
        eta,
        condition,
        values: acc.0.iter().map(Moments::mean).collect(),
        se: acc.0.iter().map(Moments::se).collect(),
        companion: acc.1.iter().map(Moments::mean).collect(),
        companion_se: acc.1.iter().map(Moments::se).collect(),
        n,
    })
}

fn merge_moment_vecs(a: &mut (Vec<Moments>, Vec<Moments>), b: (Vec<Moments>, Vec<Moments>)) {
    for (x, y) in a.0.iter_mut().zip(&b.0) {
        x.merge(y);
    }
    for (x, y) in a.1.iter_mut().zip(&b.1) {
        x.merge(y);
    }
}

/// Pathwise `F_1 G_2 ... G_{j+1}` and its companion for `j < t_len`.
pub fn g_products<R: Rng + ?Sized>(
    b1: u64,
    capacity: u64,
    t_len: usize,
    sampler: &NegBinSampler,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let mut vals = vec![0.0; t_len];
    let mut comp = vec![0.0; t_len];
    let r = sampler.sample(rng);
    let (f, _) = compute_fg(b1, r, capacity);
    let mut b = lindley_step(b1, r, capacity);
    let mut prod = f as f64;
    for j in 0..t_len {
        vals[j] = prod;
        // Backlog products stay zero once the chain clears.
        if prod == 0.0 {
            break;
        }
        let r = sampler.sample(rng);
        let (_, g) = compute_fg(b, r, capacity);
        comp[j] = prod * (1.0 - g);
        prod *= g;
        b = lindley_step(b, r, capacity);
    }
    (vals, comp)
}

/// Estimated `h_j(b, m)` for one delay `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HTable {
    pub eta: f64,
    pub b: u64,
    pub m: usize,
    pub values: Vec<f64>,
    pub se: Vec<f64>,
    pub n: usize,
}

impl HTable {
    pub fn write_csv<W: Write>(&self, mut w: W, header: &serde_json::Value) -> std::io::Result<()> {
        let mut h = header.clone();
        if let Some(obj) = h.as_object_mut() {
            obj.insert("eta".into(), self.eta.into());
            obj.insert("b".into(), self.b.into());
            obj.insert("m".into(), self.m.into());
            obj.insert("n".into(), self.n.into());
        }
        writeln!(w, "# {h}")?;
        writeln!(w, "j,value,se")?;
        for j in 0..self.values.len() {
            writeln!(w, "{j},{},{}", self.values[j], self.se[j])?;
        }
        Ok(())
    }
}

/// Estimate `h_j(b, m)`, `j < t_len`.
pub fn estimate_h(
    config: &ModelConfig,
    b: u64,
    m: usize,
    eta: f64,
    t_len: usize,
    n: usize,
    state: RngState,
) -> Result<HTable> {
    check_eta(eta)?;
    if t_len == 0 || n < 2 {
        return Err(Error::Input(
            "need T >= 1 and at least two replicates".into(),
        ));
    }
    let c = config.capacity(eta);
    let sampler = config.total_sampler();
    let acc = fold_replicates(
        n,
        || vec![Moments::new(); t_len],
        |vals, k| {
            let mut rng = state.replicate(k as u64).rng();
            let path = if m == 0 {
                g_free_products(b, c, t_len, &sampler, &mut rng)
            } else {
                // m - 1 delay periods bring the chain to B_m.
                let bm = burn_in_from(config, c, b, m - 1, &mut rng);
                g_products(bm, c, t_len, &sampler, &mut rng).0
            };
            for (acc, x) in vals.iter_mut().zip(path) {
                acc.push(x);
            }
        },
        |a, b| {
            for (x, y) in a.iter_mut().zip(&b) {
                x.merge(y);
            }
        },
    );
    Ok(HTable {
        eta,
        b,
        m,
        values: acc.iter().map(Moments::mean).collect(),
        se: acc.iter().map(Moments::se).collect(),
        n,
    })
}

/// Pathwise `G_1 ... G_j` for `j < t_len`.
fn g_free_products<R: Rng + ?Sized>(
    b1: u64,
    capacity: u64,
    t_len: usize,
    sampler: &NegBinSampler,
    rng: &mut R,
) -> Vec<f64> {
    let mut out = vec![0.0; t_len];
    let mut prod = 1.0;
    let mut b = b1;
    for v in out.iter_mut() {
        *v = prod;
        if prod == 0.0 {
            break;
        }
        let r = sampler.sample(rng);
        prod *= compute_fg(b, r, capacity).1;
        b = lindley_step(b, r, capacity);
    }
    out
}

/// All `h` values needed by the conditional formulas for one `(b, eta)`:
/// `h_k(b, 0)` for `k < len` and `h_k(b, m)` for `1 <= m <= len`,
/// `k <= len - m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HSurface {
    pub eta: f64,
    pub b: f64,
    pub len: usize,
    pub h0: Vec<f64>,
    /// `hm[m - 1][k] = h_k(b, m)`.
    pub hm: Vec<Vec<f64>>,
    /// Standard error of the mean of
    /// `b sum_{k<len} G_1..G_k + sum_m sum_k F_m G_{m+1}..G_{m+k}`, when known.
    pub backlog_sum_se: Option<f64>,
}

impl HSurface {
    pub fn h(&self, k: usize, m: usize) -> Option<f64> {
        if m == 0 {
            self.h0.get(k).copied()
        } else {
            self.hm.get(m - 1).and_then(|v| v.get(k)).copied()
        }
    }

    /// `sum_{k <= horizon - m} h_k(b, m)` summed over `1 <= m <= horizon`.
    pub fn delayed_sum(&self, horizon: usize) -> f64 {
        (1..=horizon.min(self.len))
            .map(|m| self.hm[m - 1][..=(horizon - m)].iter().sum::<f64>())
            .sum()
    }
}

/// Source of `h` surfaces, from Monte Carlo or a fitted network.
pub trait HProvider: Sync {
    /// Longest surface the provider can produce.
    fn max_len(&self) -> usize;

    fn surface(&self, b: f64, eta: f64, len: usize) -> Result<HSurface>;
}

/// Monte Carlo `h` surfaces over a fixed bank of aggregate report paths,
/// shared by every `(b, eta)` request.
#[derive(Debug, Clone)]
pub struct McHProvider {
    mu: f64,
    n: usize,
    len: usize,
    bank: Vec<u32>,
}

impl McHProvider {
    pub fn new(config: &ModelConfig, n: usize, len: usize, state: RngState) -> Result<Self> {
        if n < 2 || len == 0 {
            return Err(Error::Input(
                "need at least two paths of positive length".into(),
            ));
        }
        let sampler = config.total_sampler();
        let rows: Vec<Vec<u32>> = crate::parallel::map_indexed(n, |k| {
            let mut rng = state.replicate(k as u64).rng();
            (0..len).map(|_| sampler.sample(&mut rng) as u32).collect()
        });
        Ok(Self {
            mu: config.mu(),
            n,
            len,
            bank: rows.concat(),
        })
    }

    pub fn paths(&self) -> usize {
        self.n
    }
}

impl HProvider for McHProvider {
    fn max_len(&self) -> usize {
        self.len
    }

    fn surface(&self, b: f64, eta: f64, len: usize) -> Result<HSurface> {
        check_eta(eta)?;
        if len == 0 || len > self.len {
            return Err(Error::Input(format!(
                "surface length {len} outside 1..={}",
                self.len
            )));
        }
        if !(b >= 0.0) {
            return Err(Error::Input(format!("backlog {b} must be nonnegative")));
        }
        let c = (eta * self.mu).round() as u64;
        let b1 = b.round() as u64;
        struct Acc {
            h0: Vec<f64>,
            hm: Vec<Vec<f64>>,
            total: Moments,
        }
        let acc = fold_replicates(
            self.n,
            || Acc {
                h0: vec![0.0; len],
                hm: (1..=len).map(|m| vec![0.0; len - m + 1]).collect(),
                total: Moments::new(),
            },
            |acc, k| {
                let reports = &self.bank[k * self.len..k * self.len + len];
                let mut fs = Vec::with_capacity(len);
                let mut gs = Vec::with_capacity(len);
                let mut bt = b1;
                for &r in reports {
                    let (f, g) = compute_fg(bt, r as u64, c);
                    fs.push(f as f64);
                    gs.push(g);
                    bt = lindley_step(bt, r as u64, c);
                }
                let mut total = 0.0;
                let mut prod = 1.0;
                for k in 0..len {
                    if prod == 0.0 {
                        break;
                    }
                    acc.h0[k] += prod;
                    total += b1 as f64 * prod;
                    prod *= gs[k];
                }
                for m in 1..=len {
                    let mut prod = fs[m - 1];
                    for k in 0..=(len - m) {
                        if prod == 0.0 {
                            break;
                        }
                        acc.hm[m - 1][k] += prod;
                        total += prod;
                        if m + k < len {
                            prod *= gs[m + k];
                        }
                    }
                }
                acc.total.push(total);
            },
            |a, b| {
                for (x, y) in a.h0.iter_mut().zip(&b.h0) {
                    *x += y;
                }
                for (xs, ys) in a.hm.iter_mut().zip(&b.hm) {
                    for (x, y) in xs.iter_mut().zip(ys) {
                        *x += y;
                    }
                }
                a.total.merge(&b.total);
            },
        );
        let scale = 1.0 / self.n as f64;
        Ok(HSurface {
            eta,
            b,
            len,
            h0: acc.h0.iter().map(|x| x * scale).collect(),
            hm: acc
                .hm
                .iter()
                .map(|v| v.iter().map(|x| x * scale).collect())
                .collect(),
            backlog_sum_se: Some(acc.total.se()),
        })
    }
}

/// A long aggregate report sequence reused across capacity ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportStream {
    pub reports: Vec<u32>,
}

impl ReportStream {
    pub fn new(config: &ModelConfig, periods: usize, state: RngState) -> Self {
        let sampler = config.total_sampler();
        let mut rng = state.rng();
        Self {
            reports: (0..periods)
                .map(|_| sampler.sample(&mut rng) as u32)
                .collect(),
        }
    }
}

/// Time-average estimate of the stationary `g` sequence from one long chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicG {
    pub table: GTable,
    /// Mean backlog over the measured window.
    pub mean_backlog: f64,
    /// Batch-means standard error of `mean_backlog`.
    pub mean_backlog_se: f64,
    pub periods: usize,
}

/// Estimate stationary `g_j`, `j < t_len`, by averaging `F_t G_{t+1}...`
/// over all start periods of a single chain driven by `stream`.
///
/// The same stream at different `eta` gives common random numbers, so cost
/// curves built from these estimates are smooth in `eta`.
pub fn estimate_g_ergodic(
    config: &ModelConfig,
    eta: f64,
    t_len: usize,
    burn: usize,
    stream: &ReportStream,
) -> Result<ErgodicG> {
    check_eta(eta)?;
    const BATCHES: usize = 50;
    let total = stream.reports.len();
    if t_len == 0 || total < burn + t_len + 1 + BATCHES {
        return Err(Error::Input(
            "report stream too short for burn-in and horizon".into(),
        ));
    }
    let c = config.capacity(eta);
    let mut b = 0u64;
    let mut fs = Vec::with_capacity(total);
    let mut gs = Vec::with_capacity(total);
    let mut bs = Vec::with_capacity(total);
    for &r in &stream.reports {
        bs.push(b as f64);
        let (f, g) = compute_fg(b, r as u64, c);
        fs.push(f as f64);
        gs.push(g);
        b = lindley_step(b, r as u64, c);
    }
    let starts = burn..total - t_len - 1;
    let count = starts.len();
    let batch_size = count / BATCHES;
    let mut vb = vec![vec![0.0; t_len]; BATCHES];
    let mut cb = vec![vec![0.0; t_len]; BATCHES];
    let used = batch_size * BATCHES;
    for (idx, t) in starts.clone().take(used).enumerate() {
        let batch = idx / batch_size;
        let mut prod = fs[t];
        for j in 0..t_len {
            if prod == 0.0 {
                break;
            }
            vb[batch][j] += prod;
            let g = gs[t + j + 1];
            cb[batch][j] += prod * (1.0 - g);
            prod *= g;
        }
    }
    let column = |data: &Vec<Vec<f64>>, j: usize| -> Moments {
        data.iter().map(|row| row[j] / batch_size as f64).collect()
    };
    let vm: Vec<Moments> = (0..t_len).map(|j| column(&vb, j)).collect();
    let cm: Vec<Moments> = (0..t_len).map(|j| column(&cb, j)).collect();
    let window = &bs[burn + 1..burn + 1 + used];
    Ok(ErgodicG {
        table: GTable {
            eta,
            condition: GCondition::Stationary { burn },
            values: vm.iter().map(Moments::mean).collect(),
            se: vm.iter().map(Moments::se).collect(),
            companion: cm.iter().map(Moments::mean).collect(),
            companion_se: cm.iter().map(Moments::se).collect(),
            n: used,
        },
        mean_backlog: window.iter().sum::<f64>() / used as f64,
        mean_backlog_se: crate::stats::batch_means_se(window, BATCHES),
        periods: used,
    })
}

/// `Corr(B_2, B_{2+s})` for `s = 0..=max_lag` over `n` zero-start paths.
pub fn autocorrelation(
    config: &ModelConfig,
    eta: f64,
    max_lag: usize,
    n: usize,
    state: RngState,
) -> Result<Vec<f64>> {
    check_eta(eta)?;
    let c = config.capacity(eta);
    let sampler = config.total_sampler();
    let paths: Vec<Vec<f64>> = crate::parallel::map_indexed(n, |k| {
        let mut rng = state.replicate(k as u64).rng();
        let mut b = lindley_step(0, sampler.sample(&mut rng), c);
        let mut out = Vec::with_capacity(max_lag + 1);
        for _ in 0..=max_lag {
            out.push(b as f64);
            b = lindley_step(b, sampler.sample(&mut rng), c);
        }
        out
    });
    let base: Vec<f64> = paths.iter().map(|p| p[0]).collect();
    (0..=max_lag)
        .map(|s| {
            let lagged: Vec<f64> = paths.iter().map(|p| p[s]).collect();
            if s == 0 {
                return if Moments::from_iter(base.iter().copied()).variance() > 0.0 {
                    Ok(1.0)
                } else {
                    Err(Error::Estimation("B_2 has zero variance".into()))
                };
            }
            correlation(&base, &lagged).ok_or_else(|| {
                Error::Estimation(format!(
                    "correlation at lag {s} undefined (constant sample)"
                ))
            })
        })
        .collect()
}

/// Per-period statistics of zero-start backlog paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodDiagnostic {
    pub t: usize,
    pub p_nonzero: f64,
    pub p_nonzero_se: f64,
    /// `E[B_t | B_t > 0]`, `NaN` when no path is backlogged.
    pub conditional_mean: f64,
    pub conditional_mean_se: f64,
    /// `E[B_t] / mu`.
    pub mean_ratio: f64,
    pub mean_ratio_se: f64,
}

/// Diagnostics for `t = 1..=horizon` from `n` paths with `B_1 = 0`.
pub fn backlog_diagnostics(
    config: &ModelConfig,
    eta: f64,
    horizon: usize,
    n: usize,
    state: RngState,
) -> Result<Vec<PeriodDiagnostic>> {
    check_eta(eta)?;
    let c = config.capacity(eta);
    let sampler = config.total_sampler();
    let acc = fold_replicates(
        n,
        || {
            (
                vec![Moments::new(); horizon],
                vec![Moments::new(); horizon],
                vec![Moments::new(); horizon],
            )
        },
        |(nz, cond, all), k| {
            let mut rng = state.replicate(k as u64).rng();
            let mut b = 0u64;
            for t in 0..horizon {
                nz[t].push(if b > 0 { 1.0 } else { 0.0 });
                if b > 0 {
                    cond[t].push(b as f64);
                }
                all[t].push(b as f64);
                b = lindley_step(b, sampler.sample(&mut rng), c);
            }
        },
        |a, b| {
            for (x, y) in a.0.iter_mut().zip(&b.0) {
                x.merge(y);
            }
            for (x, y) in a.1.iter_mut().zip(&b.1) {
                x.merge(y);
            }
            for (x, y) in a.2.iter_mut().zip(&b.2) {
                x.merge(y);
            }
        },
    );
    let mu = config.mu();
    Ok((0..horizon)
        .map(|t| PeriodDiagnostic {
            t: t + 1,
            p_nonzero: acc.0[t].mean(),
            p_nonzero_se: acc.0[t].se(),
            conditional_mean: if acc.1[t].n > 0 {
                acc.1[t].mean()
            } else {
                f64::NAN
            },
            conditional_mean_se: acc.1[t].se(),
            mean_ratio: acc.2[t].mean() / mu,
            mean_ratio_se: acc.2[t].se() / mu,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_model() -> ModelConfig {
        ModelConfig::reference()
    }

    #[test]
    fn huge_capacity_burns_to_zero() {
        let mut rng = RngState::new(1).rng();
        for _ in 0..20 {
            assert_eq!(
                burn_in_sampler(&reference_model(), 100.0, 50, &mut rng).unwrap(),
                0
            );
        }
        assert!(matches!(
            burn_in_sampler(&reference_model(), 1.0, 50, &mut rng),
            Err(Error::Instability(_))
        ));
    }

    #[test]
    fn h_zero_delay_starts_at_one() {
        let h = estimate_h(&reference_model(), 800, 0, 1.2, 10, 200, RngState::new(2)).unwrap();
        assert_eq!(h.values[0], 1.0);
        assert!(h.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn g_table_is_nonnegative_and_tail_diagnostic_finite() {
        let g = estimate_g(
            &reference_model(),
            GCondition::Backlog(3000),
            1.1,
            30,
            500,
            RngState::new(3),
        )
        .unwrap();
        assert!(g.values.iter().all(|v| *v >= 0.0));
        assert!(g.values[0] >= 1000.0 * 0.9);
        assert!(g.tail_mass().is_finite());
    }

    #[test]
    fn surface_consistency_with_tables() {
        let cfg = reference_model();
        let provider = McHProvider::new(&cfg, 600, 12, RngState::new(5)).unwrap();
        let s = provider.surface(500.0, 1.1, 12).unwrap();
        assert_eq!(s.h0[0], 1.0);
        assert_eq!(s.hm.len(), 12);
        assert_eq!(s.hm[11].len(), 1);
        assert!(provider.surface(500.0, 1.1, 13).is_err());
    }

    #[test]
    fn autocorrelation_degenerate_when_no_backlog() {
        assert!(matches!(
            autocorrelation(&reference_model(), 100.0, 3, 100, RngState::new(1)),
            Err(Error::Estimation(_))
        ));
    }

    #[test]
    fn ergodic_g_sums_to_mean_backlog() {
        let cfg = reference_model();
        let stream = ReportStream::new(&cfg, 200_000, RngState::new(9));
        let e = estimate_g_ergodic(&cfg, 1.2, 200, 1200, &stream).unwrap();
        let total = e.table.total();
        assert!(
            (total - e.mean_backlog).abs() < 0.02 * e.mean_backlog,
            "{total} vs {}",
            e.mean_backlog
        );
    }
}
