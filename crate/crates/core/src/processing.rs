//! Labeled capacity sharing between occurrence periods.
//!
//! Each period the backlog is served first and the remaining capacity goes to
//! the newly reported claims. Within each of the two pools the served claims
//! form a uniformly random subset, so the per-origin counts are multivariate
//! hypergeometric. This keeps the per-origin conditional means
//! `B_i (1{B<=C} + C/B 1{B>C})` and `R_i (1{B+R<=C} + (C-B)/R 1{B<=C<B+R})`
//! and makes the period total exactly `min(B_t + R_t, C_t)` on every path.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Hypergeometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastics::{ModelConfig, NegBinSampler};

/// Per-period spill-over `F_t` and backlog carry fraction `G_t`.
///
/// `F_t = R_t 1{B_t > C_t} + (B_t + R_t - C_t) 1{B_t <= C_t < B_t + R_t}` and
/// `G_t = (1 - C_t / B_t) 1{B_t > C_t}`.
pub fn compute_fg(backlog: u64, reported: u64, capacity: u64) -> (u64, f64) {
    if backlog > capacity {
        (reported, 1.0 - capacity as f64 / backlog as f64)
    } else if backlog + reported > capacity {
        (backlog + reported - capacity, 0.0)
    } else {
        (0, 0.0)
    }
}

/// Everything known at the start of period `t` before processing: per-origin
/// backlogs, the reports arriving during `t`, and the capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodState {
    pub period: i64,
    pub capacity: u64,
    /// Occurrence periods, oldest first.
    pub origins: Vec<i64>,
    /// `B_{i, t-i}` aligned with `origins`.
    pub backlog: Vec<u64>,
    /// `R_{i, t-i}` aligned with `origins`.
    pub reports: Vec<u64>,
}

impl PeriodState {
    pub fn new(
        period: i64,
        capacity: u64,
        origins: Vec<i64>,
        backlog: Vec<u64>,
        reports: Vec<u64>,
    ) -> Result<Self> {
        let s = Self {
            period,
            capacity,
            origins,
            backlog,
            reports,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::Parameter("capacity must be positive".into()));
        }
        let n = self.origins.len();
        if self.backlog.len() != n || self.reports.len() != n {
            return Err(Error::Input(
                "origin, backlog and report vectors differ in length".into(),
            ));
        }
        for (k, &i) in self.origins.iter().enumerate() {
            if i > self.period {
                return Err(Error::Input(format!(
                    "origin {i} lies after period {}",
                    self.period
                )));
            }
            if i == self.period && self.backlog[k] != 0 {
                return Err(Error::Input(format!("newest origin {i} carries a backlog")));
            }
            if k > 0 && self.origins[k - 1] >= i {
                return Err(Error::Input("origins must be strictly increasing".into()));
            }
        }
        Ok(())
    }

    pub fn total_backlog(&self) -> u64 {
        self.backlog.iter().sum()
    }

    pub fn total_reports(&self) -> u64 {
        self.reports.iter().sum()
    }

    /// Conditional means of the backlog and report claims processed per
    /// origin given this state.
    pub fn expected_processing(&self) -> Vec<(f64, f64)> {
        let b = self.total_backlog();
        let r = self.total_reports();
        let c = self.capacity;
        let backlog_rate = if b <= c { 1.0 } else { c as f64 / b as f64 };
        let report_rate = if b + r <= c {
            1.0
        } else if b <= c {
            (c - b) as f64 / r as f64
        } else {
            0.0
        };
        self.backlog
            .iter()
            .zip(&self.reports)
            .map(|(&bi, &ri)| (bi as f64 * backlog_rate, ri as f64 * report_rate))
            .collect()
    }
}

/// Result of serving one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub processed_backlog: Vec<u64>,
    pub processed_reports: Vec<u64>,
    /// `B_{i, t-i+1}` aligned with the state's origins.
    pub next_backlog: Vec<u64>,
    pub f: u64,
    pub g: f64,
}

impl StepOutcome {
    pub fn total_processed(&self) -> u64 {
        self.processed_backlog.iter().sum::<u64>() + self.processed_reports.iter().sum::<u64>()
    }

    pub fn total_next_backlog(&self) -> u64 {
        self.next_backlog.iter().sum()
    }
}

/// Exact hypergeometric draw by sequential sampling, for populations where
/// the closed-form sampler underflows.
fn draw_one_by_one<R: Rng + ?Sized>(population: u64, marked: u64, draws: u64, rng: &mut R) -> u64 {
    let (mut pop, mut marked_left, mut hits) = (population, marked, 0);
    for _ in 0..draws {
        if rng.random_range(0..pop) < marked_left {
            marked_left -= 1;
            hits += 1;
        }
        pop -= 1;
    }
    hits
}

/// Draw how many of `take` uniformly chosen claims fall into each group.
fn allocate<R: Rng + ?Sized>(groups: &[u64], take: u64, rng: &mut R) -> Vec<u64> {
    let mut population: u64 = groups.iter().sum();
    debug_assert!(take <= population);
    let mut left = take;
    let mut out = vec![0; groups.len()];
    for (k, &size) in groups.iter().enumerate() {
        if left == 0 {
            break;
        }
        if left == population {
            out[k..].copy_from_slice(&groups[k..]);
            break;
        }
        if size == 0 {
            continue;
        }
        let x = if size == population {
            left
        } else {
            match Hypergeometric::new(population, size, left) {
                Ok(h) => h.sample(rng),
                Err(_) => draw_one_by_one(population, size, left, rng),
            }
        };
        out[k] = x;
        population -= size;
        left -= x;
    }
    out
}

/// Serve one period: backlog first, then new reports.
pub fn share_capacity_step<R: Rng + ?Sized>(
    state: &PeriodState,
    rng: &mut R,
) -> Result<StepOutcome> {
    if state.capacity == 0 {
        return Err(Error::Parameter("capacity must be positive".into()));
    }
    let b = state.total_backlog();
    let r = state.total_reports();
    let c = state.capacity;
    let from_backlog = b.min(c);
    let processed_backlog = allocate(&state.backlog, from_backlog, rng);
    let from_reports = r.min(c - from_backlog);
    let processed_reports = allocate(&state.reports, from_reports, rng);
    let next_backlog = state
        .backlog
        .iter()
        .zip(&state.reports)
        .zip(processed_backlog.iter().zip(&processed_reports))
        .map(|((bi, ri), (pb, pr))| bi + ri - pb - pr)
        .collect();
    let (f, g) = compute_fg(b, r, c);
    Ok(StepOutcome {
        processed_backlog,
        processed_reports,
        next_backlog,
        f,
        g,
    })
}

/// How the backlog at the start of the first simulated period is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitialBacklog {
    Zero,
    /// A fixed count attributed to one synthetic origin older than every
    /// origin still reporting.
    Fixed(u64),
    /// A draw from the stationary law via a burn-in from zero.
    Stationary {
        burn: usize,
    },
}

/// One development cell `(i, j)` of a simulated path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub reported: u64,
    pub processed_backlog: u64,
    pub processed_reports: u64,
    /// `B_{i,j}`: backlog at the start of development period `j`.
    pub backlog: u64,
}

impl Cell {
    pub fn processed(&self) -> u64 {
        self.processed_backlog + self.processed_reports
    }
}

/// The in-horizon history of one occurrence period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginTrack {
    pub origin: i64,
    /// Development period of `cells[0]`.
    pub first_dev: i64,
    /// Consecutive cells while the origin was open (reporting or backlogged).
    pub cells: Vec<Cell>,
    /// Backlog after the last recorded cell.
    pub closing_backlog: u64,
}

impl OriginTrack {
    pub fn last_dev(&self) -> i64 {
        self.first_dev + self.cells.len() as i64 - 1
    }
}

/// Calendar-period aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodRecord {
    pub period: i64,
    pub backlog: u64,
    pub reported: u64,
    pub processed: u64,
    pub capacity: u64,
    pub f: u64,
    pub g: f64,
}

/// A simulated labeled trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPath {
    pub max_delay: usize,
    pub capacity: u64,
    pub origins: Vec<OriginTrack>,
    pub periods: Vec<PeriodRecord>,
    /// Aggregate backlog after the last period.
    pub final_backlog: u64,
}

impl SimPath {
    pub fn first_period(&self) -> i64 {
        self.periods.first().map_or(0, |p| p.period)
    }

    pub fn last_period(&self) -> i64 {
        self.periods.last().map_or(0, |p| p.period)
    }

    pub fn origin(&self, origin: i64) -> Option<&OriginTrack> {
        self.origins.iter().find(|o| o.origin == origin)
    }

    /// Cell `(i, j)`; cells of closed origins inside the horizon are zero.
    /// Returns `None` outside the simulated window.
    pub fn cell(&self, origin: i64, dev: i64) -> Option<Cell> {
        let t = origin + dev;
        if dev < 0 || t < self.first_period() || t > self.last_period() {
            return None;
        }
        let track = self.origin(origin)?;
        if dev < track.first_dev {
            return None;
        }
        let k = (dev - track.first_dev) as usize;
        Some(track.cells.get(k).copied().unwrap_or_default())
    }

    /// `B_{t+1}` for each simulated period, i.e. the backlog path shifted by one.
    pub fn backlog_path(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.periods.iter().map(|p| p.backlog).collect();
        v.push(self.final_backlog);
        v
    }

    /// Columnar CSV: one row per open (period, origin) cell.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "period,origin,R,P_B,P_R,B,C,F,G")?;
        for p in &self.periods {
            for o in &self.origins {
                let dev = p.period - o.origin;
                if dev < o.first_dev || dev > o.last_dev() {
                    continue;
                }
                let c = o.cells[(dev - o.first_dev) as usize];
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{}",
                    p.period,
                    o.origin,
                    c.reported,
                    c.processed_backlog,
                    c.processed_reports,
                    c.backlog,
                    p.capacity,
                    p.f,
                    p.g
                )?;
            }
        }
        Ok(())
    }
}

struct Open {
    origin: i64,
    backlog: u64,
    track: usize,
}

/// Shared labeled simulation loop starting at `first_period`.
///
/// `open` lists origins entering the first period with a backlog. Origins in
/// the reporting window are added as needed. `first_reports`, when given,
/// fixes the reports of the first period instead of sampling them.
fn run_labeled<R: Rng + ?Sized>(
    config: &ModelConfig,
    capacity: u64,
    first_period: i64,
    open_backlog: &[(i64, u64)],
    first_reports: Option<&[(i64, u64)]>,
    horizon: usize,
    rng: &mut R,
) -> Result<SimPath> {
    if capacity == 0 {
        return Err(Error::Parameter("capacity must be positive".into()));
    }
    let jmax = config.max_delay() as i64;
    let samplers: Vec<NegBinSampler> = config.delay_samplers();
    let mut tracks: Vec<OriginTrack> = Vec::new();
    let mut open: Vec<Open> = Vec::new();
    for &(origin, b) in open_backlog {
        if b == 0 && origin < first_period - jmax {
            continue;
        }
        tracks.push(OriginTrack {
            origin,
            first_dev: first_period - origin,
            cells: Vec::new(),
            closing_backlog: 0,
        });
        open.push(Open {
            origin,
            backlog: b,
            track: tracks.len() - 1,
        });
    }
    open.sort_by_key(|o| o.origin);
    let mut periods = Vec::with_capacity(horizon);

    for step in 0..horizon {
        let t = first_period + step as i64;
        // Origins entering the reporting window.
        let lo = t - jmax;
        for i in lo..=t {
            if !open.iter().any(|o| o.origin == i) && !tracks.iter().any(|tr| tr.origin == i) {
                tracks.push(OriginTrack {
                    origin: i,
                    first_dev: t - i,
                    cells: Vec::new(),
                    closing_backlog: 0,
                });
                open.push(Open {
                    origin: i,
                    backlog: 0,
                    track: tracks.len() - 1,
                });
            }
        }
        open.sort_by_key(|o| o.origin);

        let reports: Vec<u64> = open
            .iter()
            .map(|o| {
                let dev = t - o.origin;
                if dev > jmax {
                    return 0;
                }
                match first_reports.filter(|_| step == 0) {
                    Some(given) => given
                        .iter()
                        .find(|(i, _)| *i == o.origin)
                        .map_or(0, |(_, r)| *r),
                    None => samplers[dev as usize].sample(rng),
                }
            })
            .collect();
        let state = PeriodState {
            period: t,
            capacity,
            origins: open.iter().map(|o| o.origin).collect(),
            backlog: open.iter().map(|o| o.backlog).collect(),
            reports,
        };
        let out = share_capacity_step(&state, rng)?;
        for (k, o) in open.iter_mut().enumerate() {
            tracks[o.track].cells.push(Cell {
                reported: state.reports[k],
                processed_backlog: out.processed_backlog[k],
                processed_reports: out.processed_reports[k],
                backlog: state.backlog[k],
            });
            o.backlog = out.next_backlog[k];
            tracks[o.track].closing_backlog = o.backlog;
        }
        periods.push(PeriodRecord {
            period: t,
            backlog: state.total_backlog(),
            reported: state.total_reports(),
            processed: out.total_processed(),
            capacity,
            f: out.f,
            g: out.g,
        });
        // Close origins that finished reporting and have no backlog left.
        open.retain(|o| o.backlog > 0 || t - o.origin < jmax);
    }
    let final_backlog = open.iter().map(|o| o.backlog).sum();
    tracks.sort_by_key(|t| t.origin);
    Ok(SimPath {
        max_delay: config.max_delay(),
        capacity,
        origins: tracks,
        periods,
        final_backlog,
    })
}

/// Simulate `horizon` periods `1..=horizon` with constant capacity
/// `round(eta * mu)`.
pub fn simulate_path<R: Rng + ?Sized>(
    config: &ModelConfig,
    eta: f64,
    horizon: usize,
    initial: InitialBacklog,
    rng: &mut R,
) -> Result<SimPath> {
    if !(eta > 1.0) {
        return Err(Error::Parameter(format!(
            "capacity ratio {eta} must exceed one"
        )));
    }
    let capacity = config.capacity(eta);
    let b0 = match initial {
        InitialBacklog::Zero => 0,
        InitialBacklog::Fixed(b) => b,
        InitialBacklog::Stationary { burn } => {
            crate::estimation::burn_in_from(config, capacity, 0, burn, rng)
        }
    };
    let synthetic = -(config.max_delay() as i64);
    let open = if b0 > 0 {
        vec![(synthetic, b0)]
    } else {
        vec![]
    };
    run_labeled(config, capacity, 1, &open, None, horizon, rng)
}

/// Continue a labeled system from a fully observed period state: the given
/// reports are served in `state.period`, later reports are sampled.
pub fn simulate_from_state<R: Rng + ?Sized>(
    config: &ModelConfig,
    state: &PeriodState,
    horizon: usize,
    rng: &mut R,
) -> Result<SimPath> {
    state.validate()?;
    let jmax = config.max_delay() as i64;
    if let Some(i) = state
        .origins
        .iter()
        .zip(&state.reports)
        .find(|(i, r)| **r > 0 && state.period - **i > jmax)
    {
        return Err(Error::Input(format!(
            "origin {} reports beyond the maximal delay",
            i.0
        )));
    }
    let open: Vec<(i64, u64)> = state
        .origins
        .iter()
        .copied()
        .zip(state.backlog.iter().copied())
        .collect();
    let reports: Vec<(i64, u64)> = state
        .origins
        .iter()
        .copied()
        .zip(state.reports.iter().copied())
        .collect();
    run_labeled(
        config,
        state.capacity,
        state.period,
        &open,
        Some(&reports),
        horizon,
        rng,
    )
}

/// Which bookkeeping rule a finding violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axiom {
    /// Newest origin starts without backlog; carry fraction in `[0, 1)`;
    /// processed claims never exceed what was available.
    Nonnegativity,
    /// `B_{i,j+1} = B_{i,j} + R_{i,j} - P_{i,j}`.
    OriginRecursion,
    /// Every reported claim of a run-off origin is processed.
    Conservation,
    /// `P_t = min(B_t + R_t, C_t)`.
    AggregateProcessing,
    /// Per-origin cells add up to the period aggregates.
    AggregateSums,
    /// `B_{t+1} = B_t G_t + F_t`.
    FgRecursion,
    /// `B_{t+1} = max(B_t + R_t - C_t, 0)`.
    Lindley,
    /// Recorded `F_t`, `G_t` equal those computed from the aggregates.
    FgConsistency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub axiom: Axiom,
    pub period: i64,
    pub origin: Option<i64>,
    pub detail: String,
}

/// Check a path against the processing axioms; an empty list means clean.
pub fn axioms_check(path: &SimPath) -> Vec<Violation> {
    let mut v = Vec::new();
    let jmax = path.max_delay as i64;
    let (first, last) = (path.first_period(), path.last_period());
    let mut push = |axiom, period, origin, detail: String| {
        v.push(Violation {
            axiom,
            period,
            origin,
            detail,
        })
    };

    for o in &path.origins {
        for (k, c) in o.cells.iter().enumerate() {
            let dev = o.first_dev + k as i64;
            let t = o.origin + dev;
            if dev == 0 && c.backlog != 0 {
                push(
                    Axiom::Nonnegativity,
                    t,
                    Some(o.origin),
                    format!("B_{{i,0}} = {}", c.backlog),
                );
            }
            if c.processed_backlog > c.backlog || c.processed_reports > c.reported {
                push(
                    Axiom::Nonnegativity,
                    t,
                    Some(o.origin),
                    "processed more than available".into(),
                );
            }
            if dev > jmax && c.reported != 0 {
                push(
                    Axiom::Nonnegativity,
                    t,
                    Some(o.origin),
                    "report beyond maximal delay".into(),
                );
            }
            let next = o.cells.get(k + 1).map_or(o.closing_backlog, |n| n.backlog);
            let expect = (c.backlog + c.reported) as i128 - c.processed() as i128;
            if next as i128 != expect {
                push(
                    Axiom::OriginRecursion,
                    t,
                    Some(o.origin),
                    format!("B_next = {next}, B + R - P = {expect}"),
                );
            }
        }
        // Fully observed origins whose reporting window ended inside the
        // horizon and whose backlog is cleared must balance.
        let closed = o.closing_backlog == 0 && o.origin + o.last_dev() < last;
        if o.first_dev == 0 && o.origin + jmax <= last && (closed || o.closing_backlog == 0) {
            let r: u64 = o.cells.iter().map(|c| c.reported).sum();
            let p: u64 = o.cells.iter().map(|c| c.processed()).sum();
            if r != p {
                push(
                    Axiom::Conservation,
                    o.origin,
                    Some(o.origin),
                    format!("reported {r}, processed {p}"),
                );
            }
        }
    }

    for (k, p) in path.periods.iter().enumerate() {
        let t = p.period;
        if p.capacity == 0 {
            push(Axiom::Nonnegativity, t, None, "zero capacity".into());
        }
        if !(0.0..1.0).contains(&p.g) {
            push(Axiom::Nonnegativity, t, None, format!("G_t = {}", p.g));
        }
        if p.processed != (p.backlog + p.reported).min(p.capacity) {
            push(
                Axiom::AggregateProcessing,
                t,
                None,
                format!(
                    "P_t = {}, min(B+R, C) = {}",
                    p.processed,
                    (p.backlog + p.reported).min(p.capacity)
                ),
            );
        }
        let (mut b, mut r, mut pr) = (0u64, 0u64, 0u64);
        for o in &path.origins {
            let dev = t - o.origin;
            if dev >= o.first_dev && dev <= o.last_dev() {
                let c = o.cells[(dev - o.first_dev) as usize];
                b += c.backlog;
                r += c.reported;
                pr += c.processed();
            }
        }
        if (b, r, pr) != (p.backlog, p.reported, p.processed) {
            push(
                Axiom::AggregateSums,
                t,
                None,
                format!(
                    "cells sum to (B, R, P) = ({b}, {r}, {pr}), aggregates ({}, {}, {})",
                    p.backlog, p.reported, p.processed
                ),
            );
        }
        let next = path
            .periods
            .get(k + 1)
            .map_or(path.final_backlog, |n| n.backlog);
        let via_fg = p.backlog as f64 * p.g + p.f as f64;
        if (via_fg - next as f64).abs() > 1e-6 * (1.0 + next as f64) {
            push(
                Axiom::FgRecursion,
                t,
                None,
                format!("B G + F = {via_fg}, B_next = {next}"),
            );
        }
        let lindley = crate::queueing::lindley_step(p.backlog, p.reported, p.capacity);
        if lindley != next {
            push(
                Axiom::Lindley,
                t,
                None,
                format!("Lindley gives {lindley}, path has {next}"),
            );
        }
        let (f, g) = compute_fg(p.backlog, p.reported, p.capacity);
        if f != p.f || (g - p.g).abs() > 1e-12 {
            push(
                Axiom::FgConsistency,
                t,
                None,
                format!("recorded ({}, {}), computed ({f}, {g})", p.f, p.g),
            );
        }
    }
    let _ = first;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastics::RngState;

    #[test]
    fn fg_examples() {
        assert_eq!(compute_fg(0, 900, 1200), (0, 0.0));
        let (f, g) = compute_fg(1500, 1310, 1200);
        assert_eq!(f, 1310);
        assert!((g - 0.2).abs() < 1e-12);
        assert_eq!(compute_fg(1000, 1310, 1200), (1110, 0.0));
        assert_eq!(compute_fg(1200, 0, 1200), (0, 0.0));
    }

    #[test]
    fn sufficient_capacity_processes_everything() {
        let s = PeriodState::new(
            5,
            1200,
            vec![2, 3, 4, 5],
            vec![0, 0, 0, 0],
            vec![50, 150, 300, 400],
        )
        .unwrap();
        let out = share_capacity_step(&s, &mut RngState::new(1).rng()).unwrap();
        assert_eq!(out.processed_reports, s.reports);
        assert!(out.next_backlog.iter().all(|b| *b == 0));
        assert_eq!((out.f, out.g), (0, 0.0));
    }

    #[test]
    fn state_validation() {
        assert!(PeriodState::new(3, 0, vec![3], vec![0], vec![1]).is_err());
        assert!(PeriodState::new(3, 10, vec![3], vec![5], vec![1]).is_err());
        assert!(PeriodState::new(3, 10, vec![4], vec![0], vec![1]).is_err());
        assert!(PeriodState::new(3, 10, vec![2, 2], vec![0, 0], vec![1, 1]).is_err());
        assert!(PeriodState::new(3, 10, vec![2, 3], vec![0], vec![1, 1]).is_err());
    }

    #[test]
    fn allocation_is_exact_in_total() {
        let mut rng = RngState::new(5).rng();
        for take in [0u64, 1, 17, 600, 999, 1000] {
            let a = allocate(&[100, 0, 400, 500], take, &mut rng);
            assert_eq!(a.iter().sum::<u64>(), take);
            assert!(a[0] <= 100 && a[1] == 0 && a[2] <= 400 && a[3] <= 500);
        }
    }

    #[test]
    fn unlimited_capacity_means_no_backlog() {
        let cfg = ModelConfig::reference();
        let mut rng = RngState::new(3).rng();
        let path = simulate_path(&cfg, 100.0, 60, InitialBacklog::Zero, &mut rng).unwrap();
        assert!(path.periods.iter().all(|p| p.backlog == 0));
        for o in &path.origins {
            for c in &o.cells {
                assert_eq!(c.processed(), c.reported);
            }
        }
        assert!(axioms_check(&path).is_empty());
    }

    #[test]
    fn corrupted_cell_is_flagged() {
        let cfg = ModelConfig::reference();
        let mut rng = RngState::new(4).rng();
        let mut path = simulate_path(&cfg, 1.1, 40, InitialBacklog::Fixed(3000), &mut rng).unwrap();
        assert!(axioms_check(&path).is_empty());
        let o = path.origins.iter_mut().find(|o| o.origin == 5).unwrap();
        o.cells[1].processed_reports += 1;
        let v = axioms_check(&path);
        assert!(v.iter().any(|x| x.axiom == Axiom::OriginRecursion));
    }

    #[test]
    fn fixed_initial_backlog_sits_in_synthetic_origin() {
        let cfg = ModelConfig::reference();
        let mut rng = RngState::new(8).rng();
        let path = simulate_path(&cfg, 1.2, 5, InitialBacklog::Fixed(2500), &mut rng).unwrap();
        let o = path.origin(-3).unwrap();
        assert_eq!(o.first_dev, 4);
        assert_eq!(o.cells[0].backlog, 2500);
        assert_eq!(path.periods[0].backlog, 2500);
        assert!(axioms_check(&path).is_empty());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let cfg = ModelConfig::reference();
        let path = simulate_path(
            &cfg,
            1.2,
            3,
            InitialBacklog::Zero,
            &mut RngState::new(1).rng(),
        )
        .unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), "period,origin,R,P_B,P_R,B,C,F,G");
        assert!(lines.count() >= 4 * 3);
    }
}

#[cfg(test)]
mod allocation_tests {
    use super::*;
    use crate::stochastics::RngState;

    #[test]
    fn sequential_draw_has_hypergeometric_mean() {
        let mut rng = RngState::new(8).rng();
        let n = 4000;
        let mean = (0..n)
            .map(|_| draw_one_by_one(50, 20, 10, &mut rng) as f64)
            .sum::<f64>()
            / n as f64;
        assert!((mean - 4.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn large_backlog_pools_allocate_exactly() {
        let mut rng = RngState::new(2).rng();
        for groups in [
            vec![60_000, 2, 900],
            vec![5000, 1, 3, 1400],
            vec![250_000, 7],
        ] {
            let total: u64 = groups.iter().sum();
            for take in [1, 1200, total / 2, total - 1] {
                let out = allocate(&groups, take, &mut rng);
                assert_eq!(out.iter().sum::<u64>(), take);
                assert!(out.iter().zip(&groups).all(|(x, g)| x <= g));
            }
        }
    }
}
