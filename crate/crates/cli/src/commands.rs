use std::collections::BTreeMap;
use std::fs;

use anyhow::{ensure, Context, Result};
use lmc_core::experiments::{
    dropout_gap, empirical_rate, gain_rates, lower_bound_rate, lowdim_rate, meanfield_lmc, repro_mnist as run_repro, RateFit,
    RatePoint,
};
use lmc_core::interpolation::{barrier_curve, layer_deviations, uniform_grid};
use lmc_core::matching::{apply_stack, match_layers, matching_report, MatchKind, MatchMethod, PermutationStack};
use lmc_core::network::{
    init_weights, save_checkpoint, train as train_net, Architecture, InitScheme, Layer, Mlp, Schedule, TrainConfig,
};
use lmc_core::numerics::{Matrix, RngState};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{
    load_model, loss_for, parse, AlignCmd, DataSpec, DimCmd, DropoutCmd, GainCmd, LowDimCmd, LowerBoundCmd,
    MeanFieldCmd, PathCmd, RatesCmd, ReproCmd, Seeded, TrainCmd,
};
use crate::output::{Cell, OutDir};
use crate::row;
use crate::RunArgs;

/// Parses the config, creates the output directory and echoes the
/// normalized config into it.
fn setup<C: DeserializeOwned + Serialize + Seeded>(args: &RunArgs) -> Result<(C, OutDir)> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let cfg: C = parse(&text, args.seed)?;
    let out = OutDir::create(&args.out)?;
    out.json("config.json", &cfg)?;
    Ok((cfg, out))
}

fn metadata(command: &str, seed: u64) -> BTreeMap<String, String> {
    BTreeMap::from([("command".to_string(), command.to_string()), ("seed".to_string(), seed.to_string())])
}

fn probe_inputs(spec: &DataSpec, net: &Mlp, rng: &RngState) -> Result<Matrix> {
    Ok(spec.load(net.arch().input_dim(), net.arch().output_dim(), rng)?.inputs)
}

fn load_pair(a: &std::path::Path, b: &std::path::Path) -> Result<(Mlp, Mlp)> {
    let (a, b) = (load_model(a)?, load_model(b)?);
    ensure!(a.same_shape(&b), "checkpoints have different architectures");
    Ok((a, b))
}

fn aligned(a: &Mlp, b: &Mlp, kind: MatchKind, probe: &Matrix) -> Result<(PermutationStack, Mlp)> {
    let method = MatchMethod::new(kind, kind.needs_probe().then_some(probe))?;
    let stack = match_layers(a, b, method)?;
    let moved = apply_stack(b, &stack)?;
    Ok((stack, moved))
}

pub fn train(args: &RunArgs) -> Result<()> {
    let (cfg, out): (TrainCmd, _) = setup(args)?;
    let root = RngState::new(cfg.seed);
    let data = cfg.data.load(cfg.arch.input_dim(), cfg.arch.output_dim(), &root.child(0))?;
    let init = init_weights(&cfg.arch, &cfg.init, &mut root.child(1))?;
    let tc = TrainConfig {
        steps: cfg.steps,
        batch_size: cfg.batch_size,
        step_size: cfg.step_size,
        schedule: Schedule::Constant,
        weight_decay: cfg.weight_decay,
        noise_temperature: cfg.noise_temperature,
        loss: loss_for(cfg.loss, &data.targets),
        seed: root.child(2).next_u64(),
    };
    let outcome = train_net(&init, &data, &tc)?;
    save_checkpoint(&outcome.weights, &metadata("train", cfg.seed), out.path("model.lmck"))?;
    let rows = outcome.losses.iter().enumerate().map(|(k, &l)| row![k, l]).collect();
    out.csv("train_loss.csv", &["step", "loss"], rows)
}

fn report_rows(stack: &PermutationStack, a: &Mlp, b: &Mlp, probe: &Matrix, kind: MatchKind) -> Result<(f64, Vec<Vec<Cell>>)> {
    let report = matching_report(a, b, stack, probe)?;
    let mut total = 0.0;
    let rows = report
        .iter()
        .map(|r| {
            let cost = match kind {
                MatchKind::NaiveWm => r.naive_cost,
                MatchKind::CovWm => r.sigma_cost,
                MatchKind::ActivationM => r.activation_cost,
            };
            total += cost;
            row![
                r.layer,
                r.width,
                cost,
                r.naive_cost,
                r.sigma_cost,
                r.activation_cost,
                r.dim_weights,
                r.dim_weighted,
                r.dim_activations
            ]
        })
        .collect();
    Ok((total, rows))
}

#[derive(Serialize)]
struct AlignSummary {
    method: MatchKind,
    total_cost: f64,
    identity: bool,
}

pub fn align(args: &RunArgs) -> Result<()> {
    let (cfg, out): (AlignCmd, _) = setup(args)?;
    let (a, b) = load_pair(&cfg.a, &cfg.b)?;
    let probe = probe_inputs(&cfg.probe, &a, &RngState::new(cfg.seed))?;
    let (stack, moved) = aligned(&a, &b, cfg.method, &probe)?;
    let (total_cost, rows) = report_rows(&stack, &a, &b, &probe, cfg.method)?;
    out.csv(
        "align.csv",
        &[
            "layer",
            "width",
            "cost",
            "naive_cost",
            "sigma_cost",
            "activation_cost",
            "dim_weights",
            "dim_weighted",
            "dim_activations",
        ],
        rows,
    )?;
    out.json("stack.json", &stack)?;
    out.json("summary.json", &AlignSummary { method: cfg.method, total_cost, identity: stack.is_identity() })?;
    save_checkpoint(&moved, &metadata("align", cfg.seed), out.path("aligned.lmck"))?;
    Ok(())
}

/// B, aligned to A if the config asks for it.
fn path_endpoint(cfg: &PathCmd, a: &Mlp, b: Mlp, rng: &RngState) -> Result<Mlp> {
    match cfg.align {
        Some(kind) => {
            let probe = probe_inputs(&cfg.probe, a, &rng.child(1))?;
            Ok(aligned(a, &b, kind, &probe)?.1)
        }
        None => Ok(b),
    }
}

pub fn barrier(args: &RunArgs) -> Result<()> {
    let (cfg, out): (PathCmd, _) = setup(args)?;
    let (a, b) = load_pair(&cfg.a, &cfg.b)?;
    let root = RngState::new(cfg.seed);
    let data = cfg.data.load(a.arch().input_dim(), a.arch().output_dim(), &root.child(0))?;
    let b = path_endpoint(&cfg, &a, b, &root)?;
    let curve = barrier_curve(&a, &b, &data.inputs, &data.targets, loss_for(cfg.loss, &data.targets), cfg.grid)?;
    let rows = curve
        .t_grid
        .iter()
        .zip(&curve.losses)
        .zip(curve.gaps())
        .map(|((&t, &l), g)| row![t, l, l - g, g])
        .collect();
    out.csv("barrier_curve.csv", &["t", "loss", "baseline", "gap"], rows)?;
    out.csv(
        "barrier.csv",
        &["loss_a", "loss_b", "barrier", "barrier_clamped", "barrier_interior", "barrier_max_baseline"],
        vec![row![
            curve.loss_a,
            curve.loss_b,
            curve.barrier,
            curve.barrier_clamped(),
            curve.barrier_interior,
            curve.barrier_max_baseline
        ]],
    )
}

pub fn deviations(args: &RunArgs) -> Result<()> {
    let (cfg, out): (PathCmd, _) = setup(args)?;
    let (a, b) = load_pair(&cfg.a, &cfg.b)?;
    let root = RngState::new(cfg.seed);
    let data = cfg.data.load(a.arch().input_dim(), a.arch().output_dim(), &root.child(0))?;
    let b = path_endpoint(&cfg, &a, b, &root)?;
    let report = layer_deviations(&a, &b, &data.inputs, &uniform_grid(cfg.grid)?)?;
    let mut rows = Vec::new();
    for l in &report.layers {
        for (i, &t) in report.t_grid.iter().enumerate() {
            rows.push(row![l.layer, l.width, t, l.deviation_a[i], l.deviation_b[i], l.energy_a, l.energy_b]);
        }
    }
    out.csv(
        "deviations.csv",
        &["layer", "width", "t", "deviation_a", "deviation_b", "energy_a", "energy_b"],
        rows,
    )
}

pub fn dim(args: &RunArgs) -> Result<()> {
    let (cfg, out): (DimCmd, _) = setup(args)?;
    let model = load_model(&cfg.model)?;
    let probe = probe_inputs(&cfg.probe, &model, &RngState::new(cfg.seed))?;
    let report = matching_report(&model, &model, &PermutationStack::identity(&model), &probe)?;
    let rows = report
        .iter()
        .map(|r| row![r.layer, r.width, r.dim_weights, r.dim_weighted, r.dim_activations])
        .collect();
    out.csv("dim.csv", &["layer", "width", "dim_weights", "dim_weighted", "dim_activations"], rows)
}

fn point_rows(points: &[RatePoint]) -> Vec<Vec<Cell>> {
    points.iter().map(|p| row![p.m, p.mean_cost, p.std_err]).collect()
}

fn fit_row(fit: &RateFit) -> Vec<Cell> {
    row![fit.slope, fit.intercept, fit.r_squared]
}

const POINT_HEADER: [&str; 3] = ["m", "mean_cost", "std_err"];
const FIT_HEADER: [&str; 3] = ["slope", "intercept", "r_squared"];

fn write_fit(out: &OutDir, fit: &RateFit) -> Result<()> {
    out.csv("rates.csv", &POINT_HEADER, point_rows(&fit.points))?;
    out.csv("fit.csv", &FIT_HEADER, vec![fit_row(fit)])
}

pub fn rates(args: &RunArgs) -> Result<()> {
    let (cfg, out): (RatesCmd, _) = setup(args)?;
    write_fit(&out, &empirical_rate(&cfg.law, &cfg.sizes, cfg.trials, cfg.seed)?)
}

pub fn lowerbound(args: &RunArgs) -> Result<()> {
    let (cfg, out): (LowerBoundCmd, _) = setup(args)?;
    write_fit(&out, &lower_bound_rate(cfg.n, cfg.variance, &cfg.sizes, cfg.trials, cfg.seed)?)
}

pub fn lowdim(args: &RunArgs) -> Result<()> {
    let (cfg, out): (LowDimCmd, _) = setup(args)?;
    let res = lowdim_rate(&cfg.profile, &cfg.sizes, cfg.trials, cfg.seed)?;
    let rows = res
        .fit
        .points
        .iter()
        .map(|p| (p, true))
        .chain(res.beyond.iter().map(|p| (p, false)))
        .map(|(p, inside)| row![p.m, p.mean_cost, p.std_err, inside])
        .collect();
    out.csv("rates.csv", &["m", "mean_cost", "std_err", "in_regime"], rows)?;
    let mut fit = fit_row(&res.fit);
    fit.extend(row![res.eta, res.regime_limit]);
    out.csv("fit.csv", &["slope", "intercept", "r_squared", "eta", "regime_limit"], vec![fit])
}

pub fn gain(args: &RunArgs) -> Result<()> {
    let (cfg, out): (GainCmd, _) = setup(args)?;
    let rep = gain_rates(cfg.n, cfg.rank, &cfg.sizes, cfg.trials, cfg.seed)?;
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for (name, fit) in [("naive", &rep.naive), ("weighted", &rep.weighted)] {
        for p in &fit.points {
            rows.push(row![name, p.m, p.mean_cost, p.std_err]);
        }
        let mut f = row![name];
        f.extend(fit_row(fit));
        f.extend(row![rep.instances, rep.dominance_violations]);
        fits.push(f);
    }
    out.csv("rates.csv", &["series", "m", "mean_cost", "std_err"], rows)?;
    out.csv(
        "fit.csv",
        &["series", "slope", "intercept", "r_squared", "instances", "dominance_violations"],
        fits,
    )
}

fn unit_ball(d: usize, count: usize, rng: &mut RngState) -> Matrix {
    let mut x = Matrix::zeros(d, count);
    for c in 0..count {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let r = rng.next_f64().powf(1.0 / d as f64);
        for (i, a) in v.iter().enumerate() {
            x.set(i, c, a * r / norm);
        }
    }
    x
}

pub fn dropout(args: &RunArgs) -> Result<()> {
    let (cfg, out): (DropoutCmd, _) = setup(args)?;
    let arch = Architecture::new(vec![cfg.input_dim, cfg.width, 1], cfg.activation, false)?;
    let root = RngState::new(cfg.seed);
    let mut rows = Vec::with_capacity(cfg.nets);
    for k in 0..cfg.nets {
        let mut rng = root.child(k as u64);
        let first = init_weights(&arch, &InitScheme::GaussianIid, &mut rng)?.layers()[0].clone();
        let n = cfg.width;
        let readout = Layer { weight: Matrix::new(1, n, vec![1.0 / n as f64; n])?, bias: None };
        let net = Mlp::new(arch.clone(), vec![first, readout])?;
        let g = dropout_gap(&net, &unit_ball(cfg.input_dim, cfg.inputs, &mut rng))?;
        rows.push(row![k, g.drop_error, g.w1_bound, g.max_input_norm, g.holds()]);
    }
    out.csv("dropout.csv", &["net", "drop_error", "w1_bound", "max_input_norm", "holds"], rows)
}

pub fn meanfield(args: &RunArgs) -> Result<()> {
    let (cfg, out): (MeanFieldCmd, _) = setup(args)?;
    let reports = (0..cfg.pairs as u64)
        .map(|k| meanfield_lmc(&cfg.run, cfg.seed.wrapping_add(k)))
        .collect::<lmc_core::Result<Vec<_>>>()?;
    out.json("meanfield.json", &reports)
}

#[derive(Serialize)]
struct ReproSummary {
    learning_rate: f64,
    test_accuracy_a: f64,
    test_accuracy_b: f64,
    barrier_unmatched: f64,
    barrier_naive_wm: f64,
    barrier_cov_wm: f64,
    barrier_activation_m: f64,
}

pub fn repro_mnist(args: &RunArgs) -> Result<()> {
    let (cfg, out): (ReproCmd, _) = setup(args)?;
    let mut summaries = Vec::new();
    for &lr in &cfg.learning_rates {
        let res = run_repro(&cfg.run_config(lr))?;
        let rows = res
            .rows
            .iter()
            .map(|r| row![r.method.name(), r.layer, r.cost, r.dim, r.barrier_raw, r.barrier_clamped])
            .collect();
        out.csv(
            &format!("repro_lr_{lr}.csv"),
            &["method", "layer", "cost", "dim", "barrier_raw", "barrier_clamped"],
            rows,
        )?;
        let barrier = |k| res.barrier(k).unwrap_or(f64::NAN);
        summaries.push(ReproSummary {
            learning_rate: lr,
            test_accuracy_a: res.test_accuracy_a,
            test_accuracy_b: res.test_accuracy_b,
            barrier_unmatched: res.unmatched.barrier,
            barrier_naive_wm: barrier(MatchKind::NaiveWm),
            barrier_cov_wm: barrier(MatchKind::CovWm),
            barrier_activation_m: barrier(MatchKind::ActivationM),
        });
    }
    out.json("summary.json", &summaries)
}
