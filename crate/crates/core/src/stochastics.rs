//! Seeded sampling for the gamma-Poisson reporting model.
//!
//! Reported counts `R_{i,j}` are independent negative binomial variables
//! `NegBin(alpha_j, beta)`: conditionally Poisson with a gamma distributed mean
//! of shape `alpha_j` and rate `beta`. Because every delay shares the same
//! rate, a calendar-period total `R_t` is again negative binomial with shape
//! `sum_j alpha_j`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::Moments;

/// Reporting model: delay horizon `J`, per-delay gamma shapes and a shared
/// gamma rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    alphas: Vec<f64>,
    beta: f64,
}

impl ModelConfig {
    pub fn new(alphas: Vec<f64>, beta: f64) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::Parameter(
                "at least one reporting delay is required".into(),
            ));
        }
        if let Some(a) = alphas.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::Parameter(format!(
                "gamma shape must be positive, got {a}"
            )));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::Parameter(format!(
                "gamma rate must be positive, got {beta}"
            )));
        }
        Ok(Self { alphas, beta })
    }

    /// The reference model: `alpha = 2`, `beta = 0.002`, expected reports
    /// split as (500, 300, 150, 50) over four delays.
    pub fn reference() -> Self {
        let beta = 2.0 / 1000.0;
        let alphas = [500.0, 300.0, 150.0, 50.0]
            .iter()
            .map(|m| m * beta)
            .collect();
        Self { alphas, beta }
    }

    /// Builds a model from expected counts per delay and the shared rate.
    pub fn from_means(mus: &[f64], beta: f64) -> Result<Self> {
        Self::new(mus.iter().map(|m| m * beta).collect(), beta)
    }

    /// Maximal reporting delay `J`.
    pub fn max_delay(&self) -> usize {
        self.alphas.len() - 1
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn alpha_total(&self) -> f64 {
        self.alphas.iter().sum()
    }

    /// Expected reports per delay, `mu_j = alpha_j / beta`.
    pub fn mus(&self) -> Vec<f64> {
        self.alphas.iter().map(|a| a / self.beta).collect()
    }

    pub fn mu_j(&self, j: usize) -> f64 {
        self.alphas.get(j).map_or(0.0, |a| a / self.beta)
    }

    /// Expected reports per occurrence (and per calendar) period.
    pub fn mu(&self) -> f64 {
        self.mus().iter().sum()
    }

    /// Variance of the calendar-period total, `mu (1 + 1/beta)`.
    pub fn variance_total(&self) -> f64 {
        self.mu() * (1.0 + 1.0 / self.beta)
    }

    /// Coefficient of variation of `R_t`, `sqrt(1/mu + (1/beta)/mu)`.
    pub fn cv_total(&self) -> f64 {
        let mu = self.mu();
        (1.0 / mu + (1.0 / self.beta) / mu).sqrt()
    }

    /// Constant capacity `round(eta * mu)` for a capacity ratio.
    pub fn capacity(&self, eta: f64) -> u64 {
        (eta * self.mu()).round() as u64
    }

    /// Sampler for the calendar-period total `R_t`.
    pub fn total_sampler(&self) -> NegBinSampler {
        NegBinSampler::new(self.alpha_total(), self.beta).expect("validated config")
    }

    /// Samplers for each delay, index `j`.
    pub fn delay_samplers(&self) -> Vec<NegBinSampler> {
        self.alphas
            .iter()
            .map(|&a| NegBinSampler::new(a, self.beta).expect("validated config"))
            .collect()
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::reference()
    }
}

/// A (seed, stream) pair naming an independent random sequence.
///
/// Replicate `k` of an experiment uses `state.replicate(k)`, so results do
/// not depend on the order in which replicates are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Child state for replicate `k`.
    pub fn replicate(&self, k: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(k.wrapping_add(1))),
        }
    }

    /// Child state for a named sub-experiment, e.g. one stream per η grid
    /// point or per table.
    pub fn derive(&self, label: &str) -> Self {
        let h = label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
        });
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ h),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

/// One draw from Gamma(shape, rate).
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    check_positive("gamma shape", shape)?;
    check_positive("gamma rate", rate)?;
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Parameter(e.to_string()))?;
    Ok(g.sample(rng))
}

/// One Poisson draw; a zero mean yields zero.
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u64> {
    if !(mean.is_finite() && mean >= 0.0) {
        return Err(Error::Parameter(format!(
            "poisson mean must be nonnegative, got {mean}"
        )));
    }
    Ok(poisson_unchecked(mean, rng))
}

fn poisson_unchecked<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let p: Poisson<f64> = Poisson::new(mean).expect("finite positive mean");
    p.sample(rng) as u64
}

/// One negative binomial draw via the gamma-Poisson mixture.
pub fn sample_negbin<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<u64> {
    Ok(NegBinSampler::new(shape, scale)?.sample(rng))
}

/// Prebuilt `NegBin(shape, beta)` sampler; the gamma stage is set up once.
#[derive(Debug, Clone, Copy)]
pub struct NegBinSampler {
    gamma: Gamma<f64>,
    shape: f64,
    beta: f64,
}

impl NegBinSampler {
    pub fn new(shape: f64, beta: f64) -> Result<Self> {
        check_positive("negative binomial shape", shape)?;
        check_positive("negative binomial scale", beta)?;
        let gamma = Gamma::new(shape, 1.0 / beta).map_err(|e| Error::Parameter(e.to_string()))?;
        Ok(Self { gamma, shape, beta })
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.beta
    }

    pub fn variance(&self) -> f64 {
        self.mean() * (1.0 + 1.0 / self.beta)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let lambda = self.gamma.sample(rng);
        poisson_unchecked(lambda, rng)
    }
}

/// Independent reports `R_{i,0..=J}` for one occurrence period.
pub fn sample_reporting_row<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Vec<u64> {
    config
        .delay_samplers()
        .iter()
        .map(|s| s.sample(rng))
        .collect()
}

/// Least-squares slope through the origin of `R_{i,j}` on the calendar total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSlopes {
    pub slopes: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// The linear prediction `mu_j / mu`.
    pub expected: Vec<f64>,
    pub n: usize,
}

/// Regress each delay's count on the calendar-period total over `n` simulated
/// diagonals. Under the gamma-Poisson model the conditional mean is exactly
/// linear, `E[R_{i,j} | R_t] = (mu_j/mu) R_t`.
pub fn conditional_split_slope(
    config: &ModelConfig,
    n: usize,
    state: RngState,
) -> Result<SplitSlopes> {
    if n < 2 {
        return Err(Error::Input("need at least two replicates".into()));
    }
    let width = config.max_delay() + 1;
    let samplers = config.delay_samplers();
    // (sum x^2, sum x*y_j, sum y_j^2) accumulated per chunk
    let acc = crate::parallel::fold_replicates(
        n,
        || (0.0f64, vec![0.0f64; width], vec![0.0f64; width]),
        |acc, k| {
            let mut rng = state.replicate(k as u64).rng();
            let row: Vec<u64> = samplers.iter().map(|s| s.sample(&mut rng)).collect();
            let total: u64 = row.iter().sum();
            let x = total as f64;
            acc.0 += x * x;
            for (j, &r) in row.iter().enumerate() {
                acc.1[j] += x * r as f64;
                acc.2[j] += (r as f64) * (r as f64);
            }
        },
        |a, b| {
            a.0 += b.0;
            for j in 0..width {
                a.1[j] += b.1[j];
                a.2[j] += b.2[j];
            }
        },
    );
    let (sxx, sxy, syy) = acc;
    if sxx <= 0.0 {
        return Err(Error::Estimation("all simulated totals are zero".into()));
    }
    let slopes: Vec<f64> = sxy.iter().map(|s| s / sxx).collect();
    let std_errors = slopes
        .iter()
        .zip(&syy)
        .map(|(b, y2)| {
            let rss = (y2 - b * b * sxx).max(0.0);
            (rss / (n as f64 - 1.0) / sxx).sqrt()
        })
        .collect();
    let mu = config.mu();
    Ok(SplitSlopes {
        slopes,
        std_errors,
        expected: config.mus().iter().map(|m| m / mu).collect(),
        n,
    })
}

/// Sample moments of `n` draws from a count sampler, used by diagnostics.
pub fn count_moments<F>(n: usize, state: RngState, draw: F) -> Moments
where
    F: Fn(&mut ChaCha8Rng) -> u64 + Sync,
{
    crate::parallel::fold_replicates(
        n,
        Moments::new,
        |m, k| {
            let mut rng = state.replicate(k as u64).rng();
            m.push(draw(&mut rng) as f64);
        },
        |a, b| a.merge(&b),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_means() {
        let c = ModelConfig::reference();
        assert_eq!(c.max_delay(), 3);
        let mus = c.mus();
        for (m, e) in mus.iter().zip([500.0, 300.0, 150.0, 50.0]) {
            assert!((m - e).abs() < 1e-9);
        }
        assert!((c.mu() - 1000.0).abs() < 1e-9);
        assert!((c.alpha_total() - 2.0).abs() < 1e-12);
        assert!((c.variance_total() - 501_000.0).abs() < 1e-6);
        let cv = c.cv_total();
        assert!((cv - c.variance_total().sqrt() / c.mu()).abs() < 1e-12);
        assert!((cv - 0.7078).abs() < 1e-3);
        assert_eq!(c.capacity(1.2), 1200);
        assert_eq!(c.capacity(1.05), 1050);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(ModelConfig::new(vec![], 1.0).is_err());
        assert!(ModelConfig::new(vec![1.0, 0.0], 1.0).is_err());
        assert!(ModelConfig::new(vec![1.0], -1.0).is_err());
        assert!(ModelConfig::new(vec![1.0], f64::NAN).is_err());
    }

    #[test]
    fn sampler_parameter_errors() {
        let mut rng = RngState::new(1).rng();
        assert!(matches!(
            sample_gamma(0.0, 1.0, &mut rng),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            sample_gamma(1.0, -2.0, &mut rng),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            sample_poisson(-0.5, &mut rng),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            sample_negbin(2.0, 0.0, &mut rng),
            Err(Error::Parameter(_))
        ));
        assert_eq!(sample_poisson(0.0, &mut rng).unwrap(), 0);
    }

    #[test]
    fn identical_state_reproduces_draws() {
        let s = RngState::with_stream(42, 7);
        let a: Vec<u64> = (0..50)
            .map(|_| 0)
            .scan(s.rng(), |r, _| Some(r.random::<u64>()))
            .collect();
        let b: Vec<u64> = (0..50)
            .map(|_| 0)
            .scan(s.rng(), |r, _| Some(r.random::<u64>()))
            .collect();
        assert_eq!(a, b);
        let mut r1 = s.replicate(3).rng();
        let mut r2 = s.replicate(4).rng();
        assert_ne!(r1.random::<u64>(), r2.random::<u64>());
    }

    #[test]
    fn single_delay_slope_is_exactly_one() {
        let c = ModelConfig::new(vec![2.0], 0.002).unwrap();
        let s = conditional_split_slope(&c, 1000, RngState::new(3)).unwrap();
        assert!((s.slopes[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_delay_row_has_one_entry() {
        let c = ModelConfig::new(vec![2.0], 0.002).unwrap();
        let mut rng = RngState::new(9).rng();
        assert_eq!(sample_reporting_row(&c, &mut rng).len(), 1);
        assert!((c.mu() - 1000.0).abs() < 1e-9);
    }
}
