use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use backlog_core::approximator::{
    agreement_report, build_dataset_g, build_dataset_h, train as fit, AgreementReport, BSampling,
    DatasetSpec, Domain, NetHProvider, NetKind, SequenceNet,
};
use backlog_core::costing::{
    cost_conditional_linear, heavy_traffic_optimum, optimize_eta, OptimizationResult,
    UncondCostModel, GRID_STEP,
};
use backlog_core::estimation::{
    autocorrelation, backlog_diagnostics, estimate_g, estimate_g_ergodic, estimate_h, GCondition,
    HProvider, McHProvider, ReportStream,
};
use backlog_core::expectations::{backlog_profile, HistorySummary};
use backlog_core::processing::{axioms_check, simulate_path, InitialBacklog};
use backlog_core::report::{write_csv, write_file, write_json, Provenance};
use backlog_core::validation::{self, Corruption, ValidationSettings};
use backlog_core::{ModelConfig, RngState};
use serde_json::json;

use crate::config::{ExperimentConfig, HSource, Start};
use crate::{Common, CostMode, Scale, Target};

/// A command failure with its process exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Missing(String),
    Validation(String),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Config(_) => 2,
            Failure::Missing(_) => 3,
            Failure::Validation(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration: {m}"),
            Failure::Missing(m) => write!(f, "missing artifact: {m}"),
            Failure::Validation(m) => write!(f, "validation failed: {m}"),
            Failure::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<backlog_core::Error> for Failure {
    fn from(e: backlog_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

pub struct Context {
    pub cfg: ExperimentConfig,
    pub model: ModelConfig,
    pub seed: u64,
    pub seed_override: Option<u64>,
    pub eta: Option<f64>,
    pub horizon: Option<usize>,
    pub hash: String,
}

impl Context {
    pub fn new(cfg: ExperimentConfig, common: &Common) -> Result<Self, Failure> {
        if let Some(eta) = common.eta {
            if !(eta > 1.0) {
                return Err(Failure::Config(format!(
                    "capacity ratio {eta} must exceed one"
                )));
            }
        }
        if common.horizon == Some(0) {
            return Err(Failure::Config("horizon must be positive".into()));
        }
        let model = cfg.model().map_err(Failure::Config)?;
        Ok(Self {
            seed: common.seed.unwrap_or(cfg.simulation.seed),
            seed_override: common.seed,
            eta: common.eta,
            horizon: common.horizon,
            hash: cfg.hash(),
            model,
            cfg,
        })
    }

    fn provenance(&self, command: &str, seed: u64) -> Provenance {
        Provenance {
            config_hash: self.hash.clone(),
            seed,
            command: command.into(),
        }
    }

    fn state(&self, label: &str) -> RngState {
        RngState::new(self.seed).derive(label)
    }

    fn out(&self, parts: &[&str]) -> PathBuf {
        parts
            .iter()
            .fold(self.cfg.output.dir.clone(), |p, s| p.join(s))
    }

    fn etas(&self) -> Vec<f64> {
        self.eta
            .map_or_else(|| self.cfg.estimation.eta_grid.clone(), |e| vec![e])
    }
}

fn io(e: backlog_core::Error) -> Failure {
    Failure::Runtime(e.to_string())
}

fn with_header<F>(path: &Path, prov: &Provenance, body: F) -> Result<(), Failure>
where
    F: FnOnce(&mut dyn Write, &serde_json::Value) -> std::io::Result<()>,
{
    let header = prov.to_json();
    write_file(path, |w| body(w, &header)).map_err(io)
}

fn parse_start(spec: &str, burn: usize) -> Result<InitialBacklog, Failure> {
    match spec {
        "zero" => Ok(InitialBacklog::Zero),
        "stationary" => Ok(InitialBacklog::Stationary { burn }),
        s => s
            .strip_prefix("fixed:")
            .unwrap_or(s)
            .parse::<u64>()
            .map(InitialBacklog::Fixed)
            .map_err(|_| {
                Failure::Config(format!("start `{s}` is not zero, stationary or fixed:N"))
            }),
    }
}

pub fn simulate(ctx: &Context, start: Option<&str>) -> Result<(), Failure> {
    let sim = &ctx.cfg.simulation;
    let eta = ctx.eta.unwrap_or(sim.eta);
    let horizon = ctx.horizon.unwrap_or(sim.horizon);
    let initial = match start {
        Some(s) => parse_start(s, sim.burn_in)?,
        None => match sim.start {
            Start::Zero => InitialBacklog::Zero,
            Start::Stationary => InitialBacklog::Stationary { burn: sim.burn_in },
            Start::Fixed => InitialBacklog::Fixed(sim.fixed_backlog),
        },
    };
    let prov = ctx.provenance("simulate", ctx.seed);
    let mut violations = 0;
    for k in 0..sim.labeled_paths {
        let mut rng = ctx.state("labeled-path").replicate(k as u64).rng();
        let path = simulate_path(&ctx.model, eta, horizon, initial, &mut rng)?;
        violations += axioms_check(&path).len();
        with_header(
            &ctx.out(&["simulate", &format!("path_{k}.csv")]),
            &prov,
            |w, h| {
                writeln!(w, "# {h}")?;
                path.write_csv(w)
            },
        )?;
    }

    let diag = backlog_diagnostics(
        &ctx.model,
        eta,
        horizon,
        sim.replicates,
        ctx.state("diagnostics"),
    )?;
    let rows: Vec<String> = diag
        .iter()
        .map(|d| {
            format!(
                "{},{},{},{},{},{},{}",
                d.t,
                d.p_nonzero,
                d.p_nonzero_se,
                d.conditional_mean,
                d.conditional_mean_se,
                d.mean_ratio,
                d.mean_ratio_se
            )
        })
        .collect();
    write_csv(
        ctx.out(&["simulate", "diagnostics.csv"]),
        &prov,
        "t,p_nonzero,p_nonzero_se,conditional_mean,conditional_mean_se,mean_ratio,mean_ratio_se",
        &rows,
    )
    .map_err(io)?;

    let max_lag = sim.max_lag.min(horizon.saturating_sub(2));
    let acf = autocorrelation(
        &ctx.model,
        eta,
        max_lag,
        sim.replicates,
        ctx.state("autocorrelation"),
    );
    if let Ok(acf) = &acf {
        let rows: Vec<String> = acf
            .iter()
            .enumerate()
            .map(|(s, c)| format!("{s},{c}"))
            .collect();
        write_csv(
            ctx.out(&["simulate", "autocorrelation.csv"]),
            &prov,
            "lag,correlation",
            &rows,
        )
        .map_err(io)?;
    }

    let tail = &diag[diag.len() / 2..];
    let backlogged: Vec<f64> = tail
        .iter()
        .map(|d| d.conditional_mean)
        .filter(|x| x.is_finite())
        .collect();
    let summary = json!({
        "eta": eta,
        "capacity": ctx.model.capacity(eta),
        "horizon": horizon,
        "replicates": sim.replicates,
        "start": format!("{initial:?}"),
        "labeled_paths": sim.labeled_paths,
        "axiom_violations": violations,
        "plateau_p_nonzero": tail.iter().map(|d| d.p_nonzero).sum::<f64>() / tail.len() as f64,
        "plateau_conditional_mean": if backlogged.is_empty() { None } else { Some(backlogged.iter().sum::<f64>() / backlogged.len() as f64) },
        "plateau_mean_ratio": tail.iter().map(|d| d.mean_ratio).sum::<f64>() / tail.len() as f64,
        "autocorrelation": acf.as_ref().map(|_| "autocorrelation.csv".to_string()).unwrap_or_else(|e| e.to_string()),
    });
    write_json(ctx.out(&["simulate", "summary.json"]), &prov, &summary).map_err(io)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).unwrap_or_default()
    );
    Ok(())
}

pub fn estimate(ctx: &Context, mode: Target) -> Result<(), Failure> {
    let est = &ctx.cfg.estimation;
    let prov = ctx.provenance("estimate", ctx.seed);
    let t_len = ctx.horizon.unwrap_or(est.t_len);
    let etas = ctx.etas();
    let mut written = 0;
    match mode {
        Target::G => {
            for &eta in &etas {
                for &b in &est.backlogs {
                    let t = estimate_g(
                        &ctx.model,
                        GCondition::Backlog(b),
                        eta,
                        t_len,
                        est.replicates,
                        ctx.state(&format!("g-{eta}-{b}")),
                    )?;
                    let name = format!("g_eta{eta:.3}_b{b}.csv");
                    with_header(&ctx.out(&["estimate", "g", &name]), &prov, |w, h| {
                        t.write_csv(w, h)
                    })?;
                    written += 1;
                }
            }
        }
        Target::GUncond => {
            let t_len = ctx.horizon.unwrap_or(est.chain_len);
            let stream = ReportStream::new(&ctx.model, est.stream_periods, ctx.state("stream"));
            let mut rows = Vec::new();
            for &eta in &etas {
                let e = estimate_g_ergodic(&ctx.model, eta, t_len, est.chain_burn, &stream)?;
                let profile: f64 = backlog_profile(&e.table, &ctx.model).iter().sum();
                rows.push(format!(
                    "{eta},{profile},{},{}",
                    e.mean_backlog, e.mean_backlog_se
                ));
                let name = format!("g_uncond_eta{eta:.3}.csv");
                with_header(&ctx.out(&["estimate", "g-uncond", &name]), &prov, |w, h| {
                    e.table.write_csv(w, h)
                })?;
                written += 1;
            }
            write_csv(
                ctx.out(&["estimate", "g-uncond", "mean_backlog.csv"]),
                &prov,
                "eta,mean_backlog,chain_mean,chain_se",
                &rows,
            )
            .map_err(io)?;
        }
        Target::H => {
            for &eta in &etas {
                for &b in &est.backlogs {
                    for &m in &est.delays {
                        let t = estimate_h(
                            &ctx.model,
                            b,
                            m,
                            eta,
                            t_len,
                            est.replicates,
                            ctx.state(&format!("h-{eta}-{b}-{m}")),
                        )?;
                        let name = format!("h_eta{eta:.3}_b{b}_m{m}.csv");
                        with_header(&ctx.out(&["estimate", "h", &name]), &prov, |w, h| {
                            t.write_csv(w, h)
                        })?;
                        written += 1;
                    }
                }
            }
        }
    }
    println!(
        "wrote {written} tables under {}",
        ctx.out(&["estimate"]).display()
    );
    Ok(())
}

struct Fitted {
    name: &'static str,
    net: SequenceNet,
    agreement: AgreementReport,
}

fn fit_one(
    ctx: &Context,
    name: &'static str,
    kind: NetKind,
    steps: usize,
    sampling: BSampling,
    m_range: Option<(usize, usize)>,
    ms: &[usize],
) -> Result<Fitted, Failure> {
    let tr = &ctx.cfg.training;
    let spec = DatasetSpec {
        n: tr.dataset_size,
        steps,
        eta_range: (tr.eta_range[0], tr.eta_range[1]),
        b_sampling: sampling,
        paths_per_sample: tr.paths_per_sample,
    };
    let data_state = ctx.state(&format!("dataset-{name}"));
    let data = match m_range {
        None => build_dataset_g(&ctx.model, &spec, data_state)?,
        Some(r) => build_dataset_h(&ctx.model, &spec, r, data_state)?,
    };
    let domain = Domain {
        b_max: tr.b_high,
        eta_min: tr.eta_range[0],
        eta_max: tr.eta_range[1],
        m_max: m_range.map_or(0, |r| r.1),
    };
    let mut net = SequenceNet::new(kind, tr.hidden, steps, ctx.model.mu(), domain, tr.net_seed)?;
    let report = fit(&mut net, &data, &tr.train_config(ctx.seed))?;
    let prov = ctx.provenance("train", ctx.seed);
    with_header(
        &ctx.out(&["train", &format!("{name}_loss.csv")]),
        &prov,
        |w, h| report.write_csv(w, h),
    )?;
    let agreement = agreement_report(
        &net,
        &ctx.model,
        &ctx.etas(),
        &ctx.cfg.estimation.backlogs,
        ms,
        tr.agreement_replicates,
        ctx.state(&format!("agreement-{name}")),
    )?;
    with_header(
        &ctx.out(&["train", &format!("{name}_agreement.csv")]),
        &prov,
        |w, h| agreement.write_csv(w, h),
    )?;
    net.save(ctx.out(&["models", &format!("{name}.json")]))?;
    println!(
        "{name}: held-out loss {:.3e} -> {:.3e} (best epoch {}), agreement failures {}/{}",
        report.initial_validation_loss(),
        report.best_validation_loss,
        report.best_epoch,
        agreement.failures,
        agreement.entries.len()
    );
    Ok(Fitted {
        name,
        net,
        agreement,
    })
}

pub fn train(ctx: &Context, mode: Target) -> Result<(), Failure> {
    let tr = &ctx.cfg.training;
    let mixed = BSampling::Mixed {
        burn: tr.burn_in,
        b_low: tr.b_low,
        b_high: tr.b_high,
    };
    let fitted = match mode {
        Target::G => vec![fit_one(ctx, "g", NetKind::G, tr.steps, mixed, None, &[])?],
        Target::GUncond => vec![fit_one(
            ctx,
            "g_uncond",
            NetKind::GUncond,
            tr.steps,
            BSampling::Stationary { burn: tr.burn_in },
            None,
            &[],
        )?],
        Target::H => {
            let ms: Vec<usize> = ctx
                .cfg
                .estimation
                .delays
                .iter()
                .copied()
                .filter(|&m| m >= 1 && m <= tr.h_steps)
                .collect();
            vec![
                fit_one(ctx, "h0", NetKind::H0, tr.h_steps, mixed, Some((0, 0)), &[])?,
                fit_one(
                    ctx,
                    "h_delayed",
                    NetKind::HDelayed,
                    tr.h_steps,
                    mixed,
                    Some((1, tr.h_steps)),
                    &ms,
                )?,
            ]
        }
    };
    let failed: Vec<String> = fitted
        .iter()
        .filter(|f| !f.agreement.passed())
        .map(|f| {
            format!(
                "{} ({} of {} cells, {} parameters)",
                f.name,
                f.agreement.failures,
                f.agreement.entries.len(),
                f.net.param_count()
            )
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Validation(format!(
            "agreement report failed for {}",
            failed.join(", ")
        )))
    }
}

fn write_result(
    ctx: &Context,
    name: &str,
    r: &OptimizationResult,
    extra: serde_json::Value,
) -> Result<(), Failure> {
    let prov = ctx.provenance("optimize", ctx.seed);
    with_header(
        &ctx.out(&["optimize", &format!("{name}_curve.csv")]),
        &prov,
        |w, h| r.write_curve_csv(w, h),
    )?;
    let mut summary = r.summary_json(&prov.to_json());
    if let (Some(obj), Some(more)) = (summary.as_object_mut(), extra.as_object()) {
        obj.extend(more.clone());
    }
    write_file(ctx.out(&["optimize", &format!("{name}.json")]), |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        writeln!(w)
    })
    .map_err(io)?;
    println!("{name}: eta* = {:.4}, cost = {:.2}", r.eta_star, r.cost);
    Ok(())
}

fn load_net(path: &Path) -> Result<SequenceNet, Failure> {
    if !path.exists() {
        return Err(Failure::Missing(format!(
            "{} (run `backlog train --mode h` first)",
            path.display()
        )));
    }
    Ok(SequenceNet::load(path)?)
}

pub fn optimize(ctx: &Context, mode: CostMode) -> Result<(), Failure> {
    let cost = &ctx.cfg.cost;
    let est = &ctx.cfg.estimation;
    let params = cost.params();
    let bracket = (cost.bracket[0], cost.bracket[1]);
    match mode {
        CostMode::Linear | CostMode::Inflating => {
            let model = UncondCostModel {
                config: ctx.model.clone(),
                params,
                stream: ReportStream::new(&ctx.model, est.stream_periods, ctx.state("stream")),
                t_len: est.chain_len,
                burn: est.chain_burn,
            };
            if mode == CostMode::Linear {
                let r = optimize_eta(|e| model.linear(e), bracket, GRID_STEP, cost.tolerance)?;
                let (c_ht, cost_ht) =
                    heavy_traffic_optimum(&params, ctx.model.mu(), ctx.model.variance_total())?;
                let extra = json!({ "heavy_traffic": { "eta_star": c_ht / ctx.model.mu(), "cost": cost_ht } });
                write_result(ctx, "linear", &r, extra)
            } else {
                let r = optimize_eta(|e| model.inflating(e), bracket, GRID_STEP, cost.tolerance)?;
                write_result(ctx, "inflating", &r, json!({ "lambda_b": params.lambda_b }))
            }
        }
        CostMode::Conditional => {
            let horizons = ctx
                .horizon
                .map_or_else(|| cost.horizons.clone(), |t| vec![t]);
            let provider: Box<dyn HProvider> = match cost.h_source {
                HSource::MonteCarlo => Box::new(McHProvider::new(
                    &ctx.model,
                    est.h_paths,
                    est.h_len,
                    ctx.state("h-bank"),
                )?),
                HSource::Network => {
                    let h0 = load_net(&ctx.out(&["models", "h0.json"]))?;
                    let delayed = load_net(&ctx.out(&["models", "h_delayed.json"]))?;
                    Box::new(NetHProvider::new(h0, delayed)?)
                }
            };
            if let Some(t) = horizons.iter().find(|&&t| t == 0 || t > provider.max_len()) {
                return Err(Failure::Config(format!(
                    "horizon {t} outside 1..={}",
                    provider.max_len()
                )));
            }
            let capacity = ctx.model.capacity(cost.history_eta);
            let history = HistorySummary::zero_start(&ctx.model, capacity, cost.history_reports)?;
            let mu = ctx.model.mu();
            for &t in &horizons {
                let r = optimize_eta(
                    |e| {
                        cost_conditional_linear(e, t, &history, provider.as_ref(), &params, mu)
                            .map(|c| (c.value, c.se))
                    },
                    bracket,
                    GRID_STEP,
                    cost.tolerance,
                )?;
                let extra = json!({
                    "horizon": t,
                    "history_reports": cost.history_reports,
                    "h_source": cost.h_source,
                });
                write_result(ctx, &format!("conditional_T{t}"), &r, extra)?;
            }
            Ok(())
        }
    }
}

pub fn validate(
    ctx: &Context,
    scale: Scale,
    criteria: &[u8],
    corrupt: bool,
) -> Result<(), Failure> {
    let defaults = ValidationSettings::default();
    let settings = ValidationSettings {
        scale: match scale {
            Scale::Full => validation::Scale::Full,
            Scale::Reduced => validation::Scale::Reduced,
        },
        seed: ctx.seed_override.unwrap_or(defaults.seed),
        corruption: if corrupt {
            Corruption::ProcessingStep
        } else {
            Corruption::None
        },
    };
    let ids: Vec<u8> = if criteria.is_empty() {
        validation::CRITERIA.iter().map(|c| c.0).collect()
    } else {
        criteria.to_vec()
    };
    if let Some(bad) = ids
        .iter()
        .find(|id| !validation::CRITERIA.iter().any(|c| c.0 == **id))
    {
        return Err(Failure::Config(format!("no criterion {bad}")));
    }
    let mut outcomes = Vec::new();
    for &id in &ids {
        let o = validation::run_criterion(id, &settings);
        println!("{}", o.line());
        outcomes.push(o);
    }
    let report = validation::ValidationReport {
        scale: settings.scale,
        seed: settings.seed,
        widened_tolerance: settings.scale == validation::Scale::Reduced,
        passed: outcomes.iter().all(|o| o.passed),
        outcomes,
    };
    let prov = ctx.provenance("validate", settings.seed);
    let value = serde_json::to_value(&report).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_json(ctx.out(&["validation.json"]), &prov, &value).map_err(io)?;
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<String> = report
            .outcomes
            .iter()
            .filter(|o| !o.passed)
            .map(|o| o.id.to_string())
            .collect();
        Err(Failure::Validation(format!(
            "criteria {}",
            failed.join(", ")
        )))
    }
}
