//! Recurrent sequence approximator for the `g` and `h` sequences.
//!
//! A gated recurrent cell is unrolled for `T` steps with the normalized input
//! fed at every step; a linear readout of the hidden state gives one output
//! per step. Gradients are computed by hand-written backpropagation through
//! time and checked against finite differences.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{
    burn_in_from, estimate_g, estimate_h, g_products, GCondition, HProvider, HSurface, DEFAULT_BURN,
};
use crate::processing::compute_fg;
use crate::queueing::lindley_step;
use crate::stochastics::{ModelConfig, RngState};

/// Which sequence a network approximates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetKind {
    /// `g_j(b; eta)`, inputs `(b, eta)`.
    G,
    /// Stationary `g_j(eta)`, input `eta`.
    GUncond,
    /// `h_j(b, 0; eta)`, inputs `(b, eta)`.
    H0,
    /// `h_j(b, m; eta)` for `m >= 1`, inputs `(b, eta, m)`.
    HDelayed,
}

impl NetKind {
    pub fn input_dim(self) -> usize {
        match self {
            NetKind::GUncond => 1,
            NetKind::G | NetKind::H0 => 2,
            NetKind::HDelayed => 3,
        }
    }
}

/// Affine input scaling and output scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// Backlog feature is `b / b_scale`.
    pub b_scale: f64,
    /// Ratio feature is `(eta - 1) * eta_scale`.
    pub eta_scale: f64,
    /// Delay feature is `m / m_scale`.
    pub m_scale: f64,
    /// Network outputs are targets divided by this.
    pub target_scale: f64,
}

/// Input region covered by training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub b_max: f64,
    pub eta_min: f64,
    pub eta_max: f64,
    pub m_max: usize,
}

impl Default for Domain {
    fn default() -> Self {
        Self {
            b_max: 40_000.0,
            eta_min: 1.05,
            eta_max: 1.50,
            m_max: 0,
        }
    }
}

/// Raw network input; unused fields are ignored by the kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetInput {
    pub b: f64,
    pub eta: f64,
    pub m: usize,
}

/// A forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub values: Vec<f64>,
    /// Set when the input lies outside the trained domain.
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    d: usize,
    h: usize,
    wz: usize,
    wr: usize,
    wn: usize,
    uz: usize,
    ur: usize,
    un: usize,
    bz: usize,
    br: usize,
    bn: usize,
    wo: usize,
    bo: usize,
    len: usize,
}

impl Layout {
    fn new(d: usize, h: usize) -> Self {
        let wz = 0;
        let wr = wz + h * d;
        let wn = wr + h * d;
        let uz = wn + h * d;
        let ur = uz + h * h;
        let un = ur + h * h;
        let bz = un + h * h;
        let br = bz + h;
        let bn = br + h;
        let wo = bn + h;
        let bo = wo + h;
        Self {
            d,
            h,
            wz,
            wr,
            wn,
            uz,
            ur,
            un,
            bz,
            br,
            bn,
            wo,
            bo,
            len: bo + 1,
        }
    }
}

const FORMAT: &str = "backlog-sequence-net";

/// GRU sequence model with per-step scalar readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceNet {
    pub format: String,
    pub version: u32,
    pub kind: NetKind,
    pub hidden: usize,
    pub steps: usize,
    pub normalization: Normalization,
    pub domain: Domain,
    pub params: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out += m x` for a row-major `rows x cols` block.
fn matvec_add(m: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (row, o) in m.chunks_exact(cols).zip(out.iter_mut()) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += m^T v`.
fn matvec_t_add(m: &[f64], cols: usize, v: &[f64], out: &mut [f64]) {
    for (row, &vi) in m.chunks_exact(cols).zip(v) {
        if vi != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vi;
            }
        }
    }
}

/// `g += u v^T`.
fn outer_add(g: &mut [f64], cols: usize, u: &[f64], v: &[f64]) {
    for (row, &ui) in g.chunks_exact_mut(cols).zip(u) {
        if ui != 0.0 {
            for (o, b) in row.iter_mut().zip(v) {
                *o += ui * b;
            }
        }
    }
}

/// Per-step activations of one unrolled pass, stored flat with stride `H`.
struct Trace {
    x: Vec<f64>,
    /// Hidden states `h_0 .. h_T`.
    hs: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    uh: Vec<f64>,
    y: Vec<f64>,
}

impl SequenceNet {
    /// Fresh network with uniform `±1/sqrt(hidden)` weights and zero readout
    /// bias.
    pub fn new(
        kind: NetKind,
        hidden: usize,
        steps: usize,
        mu: f64,
        domain: Domain,
        seed: u64,
    ) -> Result<Self> {
        if hidden == 0 || steps == 0 {
            return Err(Error::Parameter(
                "hidden width and steps must be positive".into(),
            ));
        }
        let layout = Layout::new(kind.input_dim(), hidden);
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut rng = RngState::new(seed).derive("init").rng();
        let mut params: Vec<f64> = (0..layout.len)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        params[layout.bo] = 0.0;
        let target_scale = if kind == NetKind::H0 { 1.0 } else { mu };
        Ok(Self {
            format: FORMAT.into(),
            version: 1,
            kind,
            hidden,
            steps,
            normalization: Normalization {
                b_scale: mu,
                eta_scale: 4.0,
                m_scale: steps as f64,
                target_scale,
            },
            domain,
            params,
        })
    }

    fn layout(&self) -> Layout {
        Layout::new(self.kind.input_dim(), self.hidden)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn features(&self, input: &NetInput) -> Vec<f64> {
        let nz = &self.normalization;
        let b = input.b / nz.b_scale;
        let e = (input.eta - 1.0) * nz.eta_scale;
        let m = input.m as f64 / nz.m_scale;
        match self.kind {
            NetKind::GUncond => vec![e],
            NetKind::G | NetKind::H0 => vec![b, e],
            NetKind::HDelayed => vec![b, e, m],
        }
    }

    fn domain_warning(&self, input: &NetInput) -> Option<String> {
        let d = &self.domain;
        let mut issues = Vec::new();
        if self.kind != NetKind::GUncond && !(0.0..=d.b_max).contains(&input.b) {
            issues.push(format!("b = {} outside [0, {}]", input.b, d.b_max));
        }
        if !(d.eta_min - 1e-12..=d.eta_max + 1e-12).contains(&input.eta) {
            issues.push(format!(
                "eta = {} outside [{}, {}]",
                input.eta, d.eta_min, d.eta_max
            ));
        }
        if self.kind == NetKind::HDelayed && (input.m == 0 || input.m > d.m_max) {
            issues.push(format!("m = {} outside [1, {}]", input.m, d.m_max));
        }
        (!issues.is_empty()).then(|| issues.join("; "))
    }

    fn run(&self, x: &[f64]) -> Trace {
        let l = self.layout();
        let p = &self.params;
        let h = l.h;
        let steps = self.steps;
        let mut xz = p[l.bz..l.bz + h].to_vec();
        let mut xr = p[l.br..l.br + h].to_vec();
        let mut xn = p[l.bn..l.bn + h].to_vec();
        matvec_add(&p[l.wz..l.wz + h * l.d], l.d, x, &mut xz);
        matvec_add(&p[l.wr..l.wr + h * l.d], l.d, x, &mut xr);
        matvec_add(&p[l.wn..l.wn + h * l.d], l.d, x, &mut xn);
        let (uz, ur, un) = (
            &p[l.uz..l.uz + h * h],
            &p[l.ur..l.ur + h * h],
            &p[l.un..l.un + h * h],
        );
        let wo = &p[l.wo..l.wo + h];
        let bo = p[l.bo];
        let mut tr = Trace {
            x: x.to_vec(),
            hs: vec![0.0; (steps + 1) * h],
            z: vec![0.0; steps * h],
            r: vec![0.0; steps * h],
            n: vec![0.0; steps * h],
            uh: vec![0.0; steps * h],
            y: Vec::with_capacity(steps),
        };
        for t in 0..steps {
            let (done, rest) = tr.hs.split_at_mut((t + 1) * h);
            let hp = &done[t * h..];
            let hn = &mut rest[..h];
            let cur = t * h..(t + 1) * h;
            let z = &mut tr.z[cur.clone()];
            let r = &mut tr.r[cur.clone()];
            let n = &mut tr.n[cur.clone()];
            let uh = &mut tr.uh[cur];
            z.copy_from_slice(&xz);
            r.copy_from_slice(&xr);
            matvec_add(uz, h, hp, z);
            matvec_add(ur, h, hp, r);
            matvec_add(un, h, hp, uh);
            let mut y = bo;
            for k in 0..h {
                z[k] = sigmoid(z[k]);
                r[k] = sigmoid(r[k]);
                n[k] = (xn[k] + r[k] * uh[k]).tanh();
                hn[k] = (1.0 - z[k]) * n[k] + z[k] * hp[k];
                y += wo[k] * hn[k];
            }
            tr.y.push(y);
        }
        tr
    }

    /// Propagate the output gradient `dy` back through the unrolled cell,
    /// adding into `grad`.
    fn backward(&self, tr: &Trace, dy: &[f64], grad: &mut [f64]) {
        let l = self.layout();
        let p = &self.params;
        let h = l.h;
        let (uz, ur, un) = (
            &p[l.uz..l.uz + h * h],
            &p[l.ur..l.ur + h * h],
            &p[l.un..l.un + h * h],
        );
        let wo = &p[l.wo..l.wo + h];
        let mut dh = vec![0.0; h];
        let mut dhp = vec![0.0; h];
        let mut sz = vec![0.0; h];
        let mut sr = vec![0.0; h];
        let mut sn = vec![0.0; h];
        let mut daz = vec![0.0; h];
        let mut dar = vec![0.0; h];
        let mut duh = vec![0.0; h];
        for t in (0..self.steps).rev() {
            let hp = &tr.hs[t * h..(t + 1) * h];
            let ht = &tr.hs[(t + 1) * h..(t + 2) * h];
            let cur = t * h..(t + 1) * h;
            let (z, r, n, uh) = (
                &tr.z[cur.clone()],
                &tr.r[cur.clone()],
                &tr.n[cur.clone()],
                &tr.uh[cur],
            );
            let g = dy[t];
            if g != 0.0 {
                for k in 0..h {
                    grad[l.wo + k] += g * ht[k];
                    dh[k] += wo[k] * g;
                }
                grad[l.bo] += g;
            }
            for k in 0..h {
                let dn = dh[k] * (1.0 - z[k]);
                let dz = dh[k] * (hp[k] - n[k]);
                dhp[k] = dh[k] * z[k];
                let dan = dn * (1.0 - n[k] * n[k]);
                let dr = dan * uh[k];
                duh[k] = dan * r[k];
                daz[k] = dz * z[k] * (1.0 - z[k]);
                dar[k] = dr * r[k] * (1.0 - r[k]);
                sn[k] += dan;
                sz[k] += daz[k];
                sr[k] += dar[k];
            }
            outer_add(&mut grad[l.un..l.un + h * h], h, &duh, hp);
            outer_add(&mut grad[l.uz..l.uz + h * h], h, &daz, hp);
            outer_add(&mut grad[l.ur..l.ur + h * h], h, &dar, hp);
            matvec_t_add(un, h, &duh, &mut dhp);
            matvec_t_add(uz, h, &daz, &mut dhp);
            matvec_t_add(ur, h, &dar, &mut dhp);
            std::mem::swap(&mut dh, &mut dhp);
        }
        outer_add(&mut grad[l.wz..l.wz + h * l.d], l.d, &sz, &tr.x);
        outer_add(&mut grad[l.wr..l.wr + h * l.d], l.d, &sr, &tr.x);
        outer_add(&mut grad[l.wn..l.wn + h * l.d], l.d, &sn, &tr.x);
        for k in 0..h {
            grad[l.bz + k] += sz[k];
            grad[l.br + k] += sr[k];
            grad[l.bn + k] += sn[k];
        }
    }

    /// Prediction in target units, without the domain check.
    pub fn predict(&self, input: &NetInput) -> Vec<f64> {
        let s = self.normalization.target_scale;
        self.run(&self.features(input))
            .y
            .into_iter()
            .map(|v| v * s)
            .collect()
    }

    /// Prediction with an out-of-domain flag.
    pub fn forward(&self, input: &NetInput) -> Prediction {
        Prediction {
            values: self.predict(input),
            warning: self.domain_warning(input),
        }
    }

    /// Mean squared error over steps in scaled units, and its gradient added
    /// into `grad` with weight `weight`.
    fn loss_grad(&self, sample: &TrainSample, weight: f64, grad: Option<&mut [f64]>) -> f64 {
        let s = self.normalization.target_scale;
        let tr = self.run(&self.features(&sample.input));
        let t = self.steps as f64;
        let mut loss = 0.0;
        let mut dy = vec![0.0; self.steps];
        for (k, y) in tr.y.iter().enumerate() {
            let e = y - sample.target.get(k).copied().unwrap_or(0.0) / s;
            loss += e * e / t;
            dy[k] = weight * 2.0 * e / t;
        }
        if let Some(g) = grad {
            self.backward(&tr, &dy, g);
        }
        loss
    }

    /// Mean loss over a sample set.
    pub fn loss(&self, data: &[TrainSample]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        data.iter()
            .map(|s| self.loss_grad(s, 1.0, None))
            .sum::<f64>()
            / data.len() as f64
    }

    /// Gradient of the mean loss over `data`.
    pub fn gradient(&self, data: &[TrainSample]) -> (f64, Vec<f64>) {
        let refs: Vec<&TrainSample> = data.iter().collect();
        self.batch_gradient(&refs)
    }

    fn batch_gradient(&self, batch: &[&TrainSample]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; self.params.len()];
        let w = 1.0 / batch.len().max(1) as f64;
        let loss = batch
            .iter()
            .map(|s| self.loss_grad(s, w, Some(&mut g)))
            .sum::<f64>()
            * w;
        (loss, g)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::report::write_file(path, |w| {
            serde_json::to_writer(&mut *w, self)?;
            writeln!(w)
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let net: SequenceNet =
            serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        if net.format != FORMAT {
            return Err(Error::Input(format!(
                "unknown model format {:?}",
                net.format
            )));
        }
        if net.params.len() != Layout::new(net.kind.input_dim(), net.hidden).len {
            return Err(Error::Input(
                "parameter vector does not match the architecture".into(),
            ));
        }
        Ok(net)
    }
}

/// Max relative error between the analytic gradient and central differences
/// over `count` random parameters (all when `count` exceeds the total).
pub fn gradient_check(
    net: &SequenceNet,
    sample: &TrainSample,
    perturbation: f64,
    count: usize,
    seed: u64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&perturbation) {
        return Err(Error::Parameter(format!(
            "perturbation {perturbation} outside [1e-7, 1e-3]"
        )));
    }
    let (_, grad) = net.gradient(std::slice::from_ref(sample));
    let mut idx: Vec<usize> = (0..net.params.len()).collect();
    idx.shuffle(&mut RngState::new(seed).derive("gradient-check").rng());
    idx.truncate(count.max(1));
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in idx {
        let base = probe.params[i];
        probe.params[i] = base + perturbation;
        let up = probe.loss_grad(sample, 1.0, None);
        probe.params[i] = base - perturbation;
        let down = probe.loss_grad(sample, 1.0, None);
        probe.params[i] = base;
        let numeric = (up - down) / (2.0 * perturbation);
        let scale = grad[i].abs().max(numeric.abs());
        if scale > 1e-9 {
            worst = worst.max((grad[i] - numeric).abs() / scale);
        }
    }
    Ok(worst)
}

/// One training pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSample {
    pub input: NetInput,
    /// Target sequence in natural units, length `T`.
    pub target: Vec<f64>,
}

/// How `B_1` is chosen when building a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BSampling {
    /// Burn-in draw at the sample's `eta`.
    Stationary {
        burn: usize,
    },
    Zero,
    /// Stationary draws mixed with uniform draws on `[0, b_low]` and
    /// `[0, b_high]` so the fit covers large starting backlogs.
    Mixed {
        burn: usize,
        b_low: f64,
        b_high: f64,
    },
}

/// Settings shared by the dataset builders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n: usize,
    pub steps: usize,
    pub eta_range: (f64, f64),
    pub b_sampling: BSampling,
    /// Independent paths averaged into each target; 1 gives single-path
    /// targets.
    pub paths_per_sample: usize,
}

fn draw_b<R: Rng>(config: &ModelConfig, c: u64, mode: BSampling, rng: &mut R) -> u64 {
    match mode {
        BSampling::Zero => 0,
        BSampling::Stationary { burn } => burn_in_from(config, c, 0, burn, rng),
        BSampling::Mixed {
            burn,
            b_low,
            b_high,
        } => {
            let u: f64 = rng.random();
            if u < 0.4 {
                burn_in_from(config, c, 0, burn, rng)
            } else if u < 0.5 {
                0
            } else if u < 0.85 {
                rng.random_range(0.0..=b_low).round() as u64
            } else {
                rng.random_range(0.0..=b_high).round() as u64
            }
        }
    }
}

fn check_spec(spec: &DatasetSpec) -> Result<()> {
    let (lo, hi) = spec.eta_range;
    if !(lo > 1.0 && hi >= lo) {
        return Err(Error::Parameter(format!(
            "capacity ratio range ({lo}, {hi}) must lie above one"
        )));
    }
    if spec.n == 0 || spec.steps == 0 || spec.paths_per_sample == 0 {
        return Err(Error::Input("dataset sizes must be positive".into()));
    }
    Ok(())
}

fn sample_eta(spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> f64 {
    let (lo, hi) = spec.eta_range;
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Samples with targets `F_1 G_2 ... G_{j+1}`.
pub fn build_dataset_g(
    config: &ModelConfig,
    spec: &DatasetSpec,
    state: RngState,
) -> Result<Vec<TrainSample>> {
    check_spec(spec)?;
    let sampler = config.total_sampler();
    Ok(crate::parallel::map_indexed(spec.n, |k| {
        let mut rng = state.replicate(k as u64).rng();
        let eta = sample_eta(spec, &mut rng);
        let c = config.capacity(eta);
        let b = draw_b(config, c, spec.b_sampling, &mut rng);
        let mut target = vec![0.0; spec.steps];
        for _ in 0..spec.paths_per_sample {
            let (vals, _) = g_products(b, c, spec.steps, &sampler, &mut rng);
            for (t, v) in target.iter_mut().zip(vals) {
                *t += v;
            }
        }
        target
            .iter_mut()
            .for_each(|t| *t /= spec.paths_per_sample as f64);
        TrainSample {
            input: NetInput {
                b: b as f64,
                eta,
                m: 0,
            },
            target,
        }
    }))
}

/// Samples for `h_j(b, m)`: `m` uniform on `m_range`, `m = 0` giving pure
/// `G` products and `m >= 1` running `m - 1` delay periods first.
pub fn build_dataset_h(
    config: &ModelConfig,
    spec: &DatasetSpec,
    m_range: (usize, usize),
    state: RngState,
) -> Result<Vec<TrainSample>> {
    check_spec(spec)?;
    if m_range.0 > m_range.1 {
        return Err(Error::Input("empty delay range".into()));
    }
    let sampler = config.total_sampler();
    Ok(crate::parallel::map_indexed(spec.n, |k| {
        let mut rng = state.replicate(k as u64).rng();
        let eta = sample_eta(spec, &mut rng);
        let c = config.capacity(eta);
        let b = draw_b(config, c, spec.b_sampling, &mut rng);
        let m = rng.random_range(m_range.0..=m_range.1);
        let mut target = vec![0.0; spec.steps];
        for _ in 0..spec.paths_per_sample {
            if m == 0 {
                let mut prod = 1.0;
                let mut bt = b;
                for t in target.iter_mut() {
                    *t += prod;
                    let r = sampler.sample(&mut rng);
                    prod *= compute_fg(bt, r, c).1;
                    bt = lindley_step(bt, r, c);
                }
            } else {
                let bm = burn_in_from(config, c, b, m - 1, &mut rng);
                let (vals, _) = g_products(bm, c, spec.steps, &sampler, &mut rng);
                for (t, v) in target.iter_mut().zip(vals) {
                    *t += v;
                }
            }
        }
        target
            .iter_mut()
            .for_each(|t| *t /= spec.paths_per_sample as f64);
        TrainSample {
            input: NetInput {
                b: b as f64,
                eta,
                m,
            },
            target,
        }
    }))
}

/// Parameter update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Heavy-ball momentum.
    Momentum,
    /// Bias-corrected adaptive moments; `momentum` is the first-moment decay.
    Adam,
}

/// Optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub momentum: f64,
    /// Step size multiplier applied after every epoch.
    pub decay: f64,
    /// Gradient norm cap.
    pub clip: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            epochs: 40,
            batch_size: 32,
            step_size: 0.003,
            momentum: 0.9,
            decay: 0.93,
            clip: 10.0,
            validation_fraction: 0.1,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

/// Loss history of a training run. Epoch 0 is the untrained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub train_size: usize,
    pub validation_size: usize,
}

impl TrainReport {
    pub fn initial_validation_loss(&self) -> f64 {
        self.history[0].validation_loss
    }

    /// `1 - best / initial` on the held-out split.
    pub fn improvement(&self) -> f64 {
        1.0 - self.best_validation_loss / self.initial_validation_loss()
    }

    pub fn write_csv<W: Write>(&self, mut w: W, header: &serde_json::Value) -> std::io::Result<()> {
        writeln!(w, "# {header}")?;
        writeln!(w, "epoch,train_loss,validation_loss")?;
        for e in &self.history {
            writeln!(w, "{},{},{}", e.epoch, e.train_loss, e.validation_loss)?;
        }
        Ok(())
    }
}

/// Minibatch gradient descent with momentum; `net` ends at the parameters
/// with the lowest validation loss seen.
pub fn train(
    net: &mut SequenceNet,
    data: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    for (name, v) in [
        ("step_size", cfg.step_size),
        ("momentum", cfg.momentum),
        ("decay", cfg.decay),
        ("clip", cfg.clip),
    ] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Parameter(format!(
                "{name} must be finite and nonnegative, got {v}"
            )));
        }
    }
    if cfg.momentum >= 1.0 {
        return Err(Error::Parameter("momentum must be below one".into()));
    }
    if cfg.batch_size == 0 || !(0.0..1.0).contains(&cfg.validation_fraction) {
        return Err(Error::Parameter(
            "batch size must be positive and validation fraction in [0, 1)".into(),
        ));
    }
    let mut rng = RngState::new(cfg.seed).derive("train").rng();
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_val =
        ((data.len() as f64 * cfg.validation_fraction).round() as usize).min(data.len() - 1);
    let validation: Vec<TrainSample> = order[..n_val].iter().map(|&k| data[k].clone()).collect();
    let training: Vec<TrainSample> = order[n_val..].iter().map(|&k| data[k].clone()).collect();
    let held_out = if validation.is_empty() {
        &training
    } else {
        &validation
    };

    let initial_train = net.loss(&training);
    let initial_val = net.loss(held_out);
    if !initial_val.is_finite() {
        return Err(Error::Training(format!("initial loss is {initial_val}")));
    }
    let mut history = vec![EpochLog {
        epoch: 0,
        train_loss: initial_train,
        validation_loss: initial_val,
    }];
    let mut best = (0, initial_val, net.params.clone());
    let mut velocity = vec![0.0; net.params.len()];
    let mut second = vec![0.0; net.params.len()];
    let mut updates = 0;
    let mut step = cfg.step_size;
    let mut idx: Vec<usize> = (0..training.len()).collect();
    for epoch in 1..=cfg.epochs {
        idx.shuffle(&mut rng);
        let mut running = 0.0;
        for (bno, batch) in idx.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<&TrainSample> = batch.iter().map(|&k| &training[k]).collect();
            let (loss, mut grad) = net.batch_gradient(&samples);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite loss {loss} at epoch {epoch}, batch {bno}, step size {step}"
                )));
            }
            running += loss * batch.len() as f64;
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if cfg.clip > 0.0 && norm > cfg.clip {
                grad.iter_mut().for_each(|g| *g *= cfg.clip / norm);
            }
            match cfg.optimizer {
                Optimizer::Momentum => {
                    for ((p, v), g) in net.params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                        *v = cfg.momentum * *v - step * g;
                        *p += *v;
                    }
                }
                Optimizer::Adam => {
                    const BETA2: f64 = 0.999;
                    updates += 1;
                    let c1 = 1.0 - cfg.momentum.powi(updates);
                    let c2 = 1.0 - BETA2.powi(updates);
                    for k in 0..grad.len() {
                        velocity[k] = cfg.momentum * velocity[k] + (1.0 - cfg.momentum) * grad[k];
                        second[k] = BETA2 * second[k] + (1.0 - BETA2) * grad[k] * grad[k];
                        net.params[k] -=
                            step * (velocity[k] / c1) / ((second[k] / c2).sqrt() + 1e-8);
                    }
                }
            }
        }
        step *= cfg.decay;
        let val = net.loss(held_out);
        if !val.is_finite() {
            return Err(Error::Training(format!(
                "validation loss {val} at epoch {epoch}"
            )));
        }
        history.push(EpochLog {
            epoch,
            train_loss: running / training.len() as f64,
            validation_loss: val,
        });
        if val < best.1 {
            best = (epoch, val, net.params.clone());
        }
    }
    net.params = best.2;
    Ok(TrainReport {
        history,
        best_epoch: best.0,
        best_validation_loss: best.1,
        train_size: training.len(),
        validation_size: validation.len(),
    })
}

/// One cell of a network-vs-Monte-Carlo comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementEntry {
    pub eta: f64,
    pub b: f64,
    pub m: usize,
    pub j: usize,
    pub net: f64,
    pub monte_carlo: f64,
    pub se: f64,
    pub tolerance: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub entries: Vec<AgreementEntry>,
    pub failures: usize,
    pub max_relative_error: f64,
}

impl AgreementReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn write_csv<W: Write>(&self, mut w: W, header: &serde_json::Value) -> std::io::Result<()> {
        writeln!(w, "# {header}")?;
        writeln!(w, "eta,b,m,j,net,monte_carlo,se,tolerance,ok")?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                e.eta, e.b, e.m, e.j, e.net, e.monte_carlo, e.se, e.tolerance, e.ok
            )?;
        }
        Ok(())
    }
}

/// Compare a network against Monte Carlo tables on the `etas x bs x ms`
/// grid. Entries above `0.05` target units (`0.05 mu` for `g`) must agree
/// within 10%, smaller ones within that floor.
///
/// `bs` is ignored for the stationary `g` network and `ms` is used only by
/// the delayed `h` network.
pub fn agreement_report(
    net: &SequenceNet,
    config: &ModelConfig,
    etas: &[f64],
    bs: &[u64],
    ms: &[usize],
    n: usize,
    state: RngState,
) -> Result<AgreementReport> {
    let floor = 0.05 * net.normalization.target_scale;
    let bs: Vec<u64> = if net.kind == NetKind::GUncond {
        vec![0]
    } else {
        bs.to_vec()
    };
    let ms: Vec<usize> = match net.kind {
        NetKind::HDelayed => ms.to_vec(),
        _ => vec![0],
    };
    if ms.iter().any(|&m| net.kind == NetKind::HDelayed && m == 0) {
        return Err(Error::Input("delayed h network needs m >= 1".into()));
    }
    let mut entries = Vec::new();
    let mut worst: f64 = 0.0;
    for (a, &eta) in etas.iter().enumerate() {
        for (bi, &b) in bs.iter().enumerate() {
            for &m in &ms {
                let label = if m == 0 {
                    format!("grid-{a}-{bi}")
                } else {
                    format!("grid-{a}-{bi}-{m}")
                };
                let (mc, se) = match net.kind {
                    NetKind::G | NetKind::GUncond => {
                        let condition = if net.kind == NetKind::G {
                            GCondition::Backlog(b)
                        } else {
                            GCondition::Stationary { burn: DEFAULT_BURN }
                        };
                        let t =
                            estimate_g(config, condition, eta, net.steps, n, state.derive(&label))?;
                        (t.values, t.se)
                    }
                    NetKind::H0 | NetKind::HDelayed => {
                        let t = estimate_h(config, b, m, eta, net.steps, n, state.derive(&label))?;
                        (t.values, t.se)
                    }
                };
                let pred = net.predict(&NetInput {
                    b: b as f64,
                    eta,
                    m,
                });
                for j in 0..net.steps {
                    let tolerance = if mc[j] > floor { 0.1 * mc[j] } else { floor };
                    let err = (pred[j] - mc[j]).abs();
                    if mc[j] > floor {
                        worst = worst.max(err / mc[j]);
                    }
                    entries.push(AgreementEntry {
                        eta,
                        b: if net.kind == NetKind::GUncond {
                            f64::NAN
                        } else {
                            b as f64
                        },
                        m,
                        j,
                        net: pred[j],
                        monte_carlo: mc[j],
                        se: se[j],
                        tolerance,
                        ok: err <= tolerance,
                    });
                }
            }
        }
    }
    let failures = entries.iter().filter(|e| !e.ok).count();
    Ok(AgreementReport {
        entries,
        failures,
        max_relative_error: worst,
    })
}

/// `h` surfaces from a pair of fitted networks.
#[derive(Debug, Clone)]
pub struct NetHProvider {
    pub h0: SequenceNet,
    pub delayed: SequenceNet,
}

impl NetHProvider {
    pub fn new(h0: SequenceNet, delayed: SequenceNet) -> Result<Self> {
        if h0.kind != NetKind::H0 || delayed.kind != NetKind::HDelayed {
            return Err(Error::Input(
                "expected an h0 network and a delayed h network".into(),
            ));
        }
        Ok(Self { h0, delayed })
    }
}

impl HProvider for NetHProvider {
    fn max_len(&self) -> usize {
        self.h0
            .steps
            .min(self.delayed.steps)
            .min(self.delayed.domain.m_max)
    }

    fn surface(&self, b: f64, eta: f64, len: usize) -> Result<HSurface> {
        if len == 0 || len > self.max_len() {
            return Err(Error::Input(format!(
                "surface length {len} outside 1..={}",
                self.max_len()
            )));
        }
        let h0 = self.h0.predict(&NetInput { b, eta, m: 0 });
        let hm = (1..=len)
            .map(|m| {
                let v = self.delayed.predict(&NetInput { b, eta, m });
                v[..=(len - m)].iter().map(|x| x.max(0.0)).collect()
            })
            .collect();
        Ok(HSurface {
            eta,
            b,
            len,
            h0: h0[..len].iter().map(|x| x.clamp(0.0, 1.0)).collect(),
            hm,
            backlog_sum_se: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: NetKind) -> SequenceNet {
        SequenceNet::new(kind, 6, 5, 1000.0, Domain::default(), 3).unwrap()
    }

    fn sample() -> TrainSample {
        TrainSample {
            input: NetInput {
                b: 1500.0,
                eta: 1.2,
                m: 2,
            },
            target: vec![600.0, 300.0, 100.0, 20.0, 0.0],
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in [NetKind::G, NetKind::GUncond, NetKind::H0, NetKind::HDelayed] {
            let mut s = sample();
            if kind == NetKind::H0 {
                s.target.iter_mut().for_each(|t| *t /= 1000.0);
            }
            let err = gradient_check(&tiny(kind), &s, 1e-5, 10_000, 1).unwrap();
            assert!(err < 1e-4, "{kind:?}: {err}");
        }
    }

    #[test]
    fn zero_network_zero_target_has_zero_gradient() {
        let mut net = tiny(NetKind::G);
        net.params.iter_mut().for_each(|p| *p = 0.0);
        let s = TrainSample {
            input: NetInput {
                b: 10.0,
                eta: 1.3,
                m: 0,
            },
            target: vec![0.0; 5],
        };
        let (loss, g) = net.gradient(&[s]);
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn forward_is_deterministic_and_flags_domain() {
        let net = tiny(NetKind::G);
        let a = net.forward(&NetInput {
            b: 100.0,
            eta: 1.2,
            m: 0,
        });
        let b = net.forward(&NetInput {
            b: 100.0,
            eta: 1.2,
            m: 0,
        });
        assert_eq!(a, b);
        assert_eq!(a.values.len(), 5);
        assert!(a.warning.is_none());
        assert!(net
            .forward(&NetInput {
                b: 100.0,
                eta: 2.0,
                m: 0
            })
            .warning
            .is_some());
        assert!(net
            .forward(&NetInput {
                b: 50_000.0,
                eta: 1.2,
                m: 0
            })
            .warning
            .is_some());
    }

    #[test]
    fn learns_a_constant() {
        let mut net = tiny(NetKind::G);
        let data: Vec<TrainSample> = (0..200)
            .map(|k| TrainSample {
                input: NetInput {
                    b: (k * 37 % 5000) as f64,
                    eta: 1.05 + (k % 40) as f64 * 0.01,
                    m: 0,
                },
                target: vec![400.0; 5],
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 300,
            step_size: 0.02,
            decay: 0.99,
            ..TrainConfig::default()
        };
        let rep = train(&mut net, &data, &cfg).unwrap();
        assert!(rep.best_validation_loss < 1e-3 * rep.initial_validation_loss());
        let y = net.predict(&NetInput {
            b: 1000.0,
            eta: 1.2,
            m: 0,
        });
        assert!(y.iter().all(|v| (v - 400.0).abs() < 8.0), "{y:?}");
    }

    #[test]
    fn nan_targets_fail_training() {
        let mut net = tiny(NetKind::G);
        let data = vec![
            TrainSample {
                input: NetInput {
                    b: 1.0,
                    eta: 1.2,
                    m: 0
                },
                target: vec![f64::NAN; 5],
            };
            4
        ];
        assert!(matches!(
            train(&mut net, &data, &TrainConfig::default()),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = std::env::temp_dir().join(format!("seqnet-{}", std::process::id()));
        let path = dir.join("net.json");
        let net = tiny(NetKind::HDelayed);
        net.save(&path).unwrap();
        let back = SequenceNet::load(&path).unwrap();
        assert_eq!(net, back);
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn dataset_targets_are_cumulative_products() {
        let cfg = ModelConfig::reference();
        let spec = DatasetSpec {
            n: 50,
            steps: 8,
            eta_range: (1.05, 1.5),
            b_sampling: BSampling::Mixed {
                burn: 200,
                b_low: 5000.0,
                b_high: 40000.0,
            },
            paths_per_sample: 1,
        };
        for s in build_dataset_g(&cfg, &spec, RngState::new(1)).unwrap() {
            assert!(s.target.windows(2).all(|w| w[1] <= w[0]));
            assert!(s.target.iter().all(|v| *v >= 0.0));
        }
        for s in build_dataset_h(&cfg, &spec, (0, 0), RngState::new(2)).unwrap() {
            assert_eq!(s.target[0], 1.0);
            assert!(s.target.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn agreement_grid_covers_every_kind() {
        let cfg = ModelConfig::reference();
        let h0 = tiny(NetKind::H0);
        let r = agreement_report(
            &h0,
            &cfg,
            &[1.1, 1.3],
            &[0, 2000],
            &[],
            200,
            RngState::new(1),
        )
        .unwrap();
        assert_eq!(r.entries.len(), 2 * 2 * 5);
        assert!(r.entries.iter().all(|e| e.j != 0 || e.monte_carlo == 1.0));
        let d = tiny(NetKind::HDelayed);
        assert_eq!(
            agreement_report(&d, &cfg, &[1.1], &[0], &[1, 2], 200, RngState::new(1))
                .unwrap()
                .entries
                .len(),
            10
        );
        assert!(agreement_report(&d, &cfg, &[1.1], &[0], &[0], 200, RngState::new(1)).is_err());
        let u = tiny(NetKind::GUncond);
        assert_eq!(
            agreement_report(&u, &cfg, &[1.1], &[0, 1, 2], &[], 200, RngState::new(1))
                .unwrap()
                .entries
                .len(),
            5
        );
    }
}
