//! Command-line toolkit for VAR models with common response and
//! predictor factors: simulation, estimation, model selection, multi-step
//! forecasting, and Monte-Carlo benchmarks over CSV/JSON files.
//!
//! Exit codes: 0 on success, 2 for usage or specification errors, 3 for
//! numerical failures. Stdout carries only the produced artifact paths;
//! diagnostics go to stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use varcs_core::error::Error as CoreError;
use varcs_core::estimator::{
    fit_sparse_var1, fit_var1, fit_varl, FitReport, GdConfig, SparsityLevels,
};
use varcs_core::forecaster::forecast;
use varcs_core::initializer::{
    rank_constrained_varl, reduced_rank_var1, sparse_init_var1, spectral_init_var1,
    spectral_init_varl,
};
use varcs_core::model::Model;
use varcs_core::panel::{format_f64, TimePanel};
use varcs_core::selector::{
    select_common_dim_var1, select_pipeline, PipelineFit, SelectionConfig, SelectionReport,
};
use varcs_core::simulator::{
    make_dgp123, make_var1_cs_dgp, make_varl_cs_dgp, run_experiment, simulate, Dgp123, DgpKind,
    DgpSpec, ExperimentSpec,
};

#[derive(Parser)]
#[command(
    name = "varcs",
    about = "High-dimensional VARs with common response and predictor factor subspaces",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic panel and its ground-truth model.
    Simulate(SimulateArgs),
    /// Fit a model to a panel; selects ranks and common dimension when
    /// they are not given.
    Estimate(EstimateArgs),
    /// Run rank and common-dimension selection, reporting the BIC table
    /// and singular-value profile.
    Select(SelectArgs),
    /// Multi-step forecasts from a fitted model JSON.
    Forecast(ForecastArgs),
    /// Monte-Carlo benchmark from an experiment spec, written as CSV.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON simulation spec: {"dgp": {..}, "t_len": .., "seed": ..}.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_panel: PathBuf,
    /// Ground-truth model JSON (model-representable DGPs only).
    #[arg(long)]
    out_truth: Option<PathBuf>,
}

#[derive(Clone, Serialize, Deserialize)]
struct SimulateSpec {
    dgp: DgpSpec,
    t_len: usize,
    seed: u64,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    panel: PathBuf,
    #[arg(long, default_value_t = 1)]
    lag: usize,
    /// VAR(1) rank; triggers auto-selection when omitted.
    #[arg(long)]
    rank: Option<usize>,
    /// Tensor ranks "r1,r2,r3" for lag > 1.
    #[arg(long, value_parser = parse_triple)]
    ranks: Option<(usize, usize, usize)>,
    #[arg(long)]
    common_dim: Option<usize>,
    /// Row budgets "s_c,s_r,s_p" for the hard-thresholded sparse fit
    /// (lag 1 only).
    #[arg(long, value_parser = parse_triple)]
    sparse: Option<(usize, usize, usize)>,
    #[arg(long, default_value_t = 0.01)]
    eta: f64,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    /// Rank upper bound for auto-selection.
    #[arg(long, default_value_t = 10)]
    r_bar: usize,
    /// Seed recorded in the report; estimation itself is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_model: PathBuf,
    #[arg(long)]
    out_report: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    panel: PathBuf,
    #[arg(long, default_value_t = 1)]
    lag: usize,
    #[arg(long, default_value_t = 10)]
    r_bar: usize,
    /// Tensor upper bounds "r1,r2,r3"; defaults to r_bar per mode.
    #[arg(long, value_parser = parse_triple)]
    r_bars: Option<(usize, usize, usize)>,
    /// Replaces the ridge parameter s(p, T).
    #[arg(long)]
    ridge_override: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ForecastArgs {
    #[arg(long)]
    panel: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated horizons, e.g. "1,2,3".
    #[arg(long, default_value = "1,2,3", value_parser = parse_horizons)]
    horizons: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// JSON experiment spec (see the packaged files under experiments/).
    #[arg(long)]
    experiment: PathBuf,
    /// Overrides the spec's replication count.
    #[arg(long)]
    reps: Option<usize>,
    /// Worker threads; defaults to $VARCS_JOBS, then all cores.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_triple(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated integers, got {s:?}"));
    }
    let mut v = [0usize; 3];
    for (i, part) in parts.iter().enumerate() {
        v[i] = part
            .trim()
            .parse()
            .map_err(|_| format!("cannot parse {part:?} as an integer"))?;
    }
    Ok((v[0], v[1], v[2]))
}

fn parse_horizons(s: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let h: usize = part
            .trim()
            .parse()
            .map_err(|_| format!("cannot parse horizon {part:?}"))?;
        if h == 0 {
            return Err("horizons must be positive".into());
        }
        out.push(h);
    }
    if out.is_empty() {
        return Err("need at least one horizon".into());
    }
    Ok(out)
}

/// CLI-level error carrying its exit code.
enum CliError {
    /// Usage or specification problems (exit 2).
    Spec(String),
    /// Numerical failures (exit 3).
    Numerical(String),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NonConvergence { .. }
            | CoreError::Divergence { .. }
            | CoreError::DegenerateDesign
            | CoreError::NonStationary { .. }
            | CoreError::DgpRejection(_)
            | CoreError::NonFinite(_) => CliError::Numerical(e.to_string()),
            other => CliError::Spec(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Spec(format!("json: {e}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Spec(format!("io: {e}"))
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Select(a) => cmd_select(a),
        Command::Forecast(a) => cmd_forecast(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Spec(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.spec)?;
    let spec: SimulateSpec = serde_json::from_str(&text)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (panel, truth): (TimePanel, Option<Model>) = match spec.dgp.kind {
        DgpKind::Var1Cs => {
            let truth = make_var1_cs_dgp(&spec.dgp, &mut rng)?;
            let panel = simulate(
                std::slice::from_ref(&truth.a),
                spec.t_len,
                &spec.dgp.noise,
                spec.dgp.burn_in,
                &mut rng,
            )?;
            (panel, Some(Model::from(&truth.params)))
        }
        DgpKind::VarlCs => {
            let truth = make_varl_cs_dgp(&spec.dgp, &mut rng)?;
            let panel = simulate(
                &truth.tensor.frontal_slices(),
                spec.t_len,
                &spec.dgp.noise,
                spec.dgp.burn_in,
                &mut rng,
            )?;
            (panel, Some(Model::from(&truth.params)))
        }
        DgpKind::CsD1 => {
            let dgp = make_dgp123(&spec.dgp, &mut rng)?;
            let (panel, _) = dgp.simulate(spec.t_len, spec.dgp.burn_in, &mut rng)?;
            let truth = match &dgp {
                Dgp123::CsD1 { truth, .. } => Some(Model::from(truth)),
                _ => None,
            };
            (panel, truth)
        }
        DgpKind::Dfm1 | DgpKind::Dfm2 => {
            let dgp = make_dgp123(&spec.dgp, &mut rng)?;
            let (panel, _) = dgp.simulate(spec.t_len, spec.dgp.burn_in, &mut rng)?;
            (panel, None)
        }
    };
    panel.write_csv(&args.out_panel).map_err(CliError::from)?;
    println!("{}", args.out_panel.display());
    if let Some(path) = &args.out_truth {
        match truth {
            Some(model) => {
                std::fs::write(path, serde_json::to_string_pretty(&model)?)?;
                println!("{}", path.display());
            }
            None => {
                return Err(CliError::Spec(
                    "this DGP has no VAR-model representation for --out-truth".into(),
                ))
            }
        }
    }
    Ok(())
}

/// Estimation report stored beside the fitted model.
#[derive(Serialize)]
struct EstimateReport {
    config: EstimateConfigEcho,
    selection: Option<SelectionReport>,
    fit: FitSummary,
}

#[derive(Serialize)]
struct EstimateConfigEcho {
    lag: usize,
    rank: Option<usize>,
    ranks: Option<(usize, usize, usize)>,
    common_dim: Option<usize>,
    sparse: Option<(usize, usize, usize)>,
    eta: f64,
    max_iters: usize,
    r_bar: usize,
    seed: Option<u64>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum FitSummary {
    Var1(FitReport<varcs_core::Var1CsParams>),
    VarL(FitReport<varcs_core::VarLCsParams>),
}

fn cmd_estimate(args: EstimateArgs) -> CliResult<()> {
    let panel = TimePanel::read_csv(&args.panel)?;
    if args.lag == 0 {
        return Err(CliError::Spec("--lag must be at least 1".into()));
    }
    let gd = GdConfig {
        step_size: args.eta,
        max_iters: args.max_iters,
        ..GdConfig::default()
    };
    let selection_cfg = SelectionConfig {
        r_bar: args.r_bar,
        r_bars: (args.r_bar, args.r_bar, args.r_bar),
        gd: gd.clone(),
        ..SelectionConfig::default()
    };

    let (selection, fit): (Option<SelectionReport>, FitSummary) = if args.lag == 1 {
        let (y, x) = panel.design(1)?;
        match (args.rank, args.common_dim) {
            (Some(r), Some(d)) => {
                let fit = fit_var1_at(&y, &x, r, d, args.sparse, &gd)?;
                (None, FitSummary::Var1(fit))
            }
            (Some(r), None) => {
                let outcome = select_common_dim_var1(&y, &x, r, &selection_cfg)?;
                let d = outcome.report.selected_common_dim;
                let report = outcome.report;
                let fit = match (args.sparse, outcome.fit) {
                    (Some(_), _) => fit_var1_at(&y, &x, r, d, args.sparse, &gd)?,
                    (None, PipelineFit::Var1(f)) => f,
                    _ => unreachable!("var1 path"),
                };
                (Some(report), FitSummary::Var1(fit))
            }
            (None, _) => {
                let outcome = select_pipeline(&panel, 1, &selection_cfg)?;
                let report = outcome.report.clone();
                let fit = match outcome.fit {
                    PipelineFit::Var1(f) => {
                        if args.sparse.is_some() {
                            let r = f.params.rank();
                            let d = f.params.common_dim();
                            fit_var1_at(&y, &x, r, d, args.sparse, &gd)?
                        } else {
                            f
                        }
                    }
                    _ => unreachable!("var1 path"),
                };
                (Some(report), FitSummary::Var1(fit))
            }
        }
    } else {
        if args.sparse.is_some() {
            return Err(CliError::Spec(
                "--sparse is supported for lag 1 only".into(),
            ));
        }
        match (args.ranks, args.common_dim) {
            (Some(ranks), Some(d)) => {
                let rc = rank_constrained_varl(&panel, args.lag, ranks)?;
                let init = spectral_init_varl(&rc, d, gd.reg_scale)?;
                let fit = fit_varl(&panel, ranks, d, &init, &gd)?;
                (None, FitSummary::VarL(fit))
            }
            _ => {
                let outcome = select_pipeline(&panel, args.lag, &selection_cfg)?;
                let report = outcome.report;
                match outcome.fit {
                    PipelineFit::VarL(f) => (Some(report), FitSummary::VarL(f)),
                    _ => unreachable!("varl path"),
                }
            }
        }
    };

    let model = match &fit {
        FitSummary::Var1(f) => Model::from(&f.params),
        FitSummary::VarL(f) => Model::from(&f.params),
    };
    std::fs::write(&args.out_model, serde_json::to_string_pretty(&model)?)?;
    let report = EstimateReport {
        config: EstimateConfigEcho {
            lag: args.lag,
            rank: args.rank,
            ranks: args.ranks,
            common_dim: args.common_dim,
            sparse: args.sparse,
            eta: args.eta,
            max_iters: args.max_iters,
            r_bar: args.r_bar,
            seed: args.seed,
        },
        selection,
        fit,
    };
    std::fs::write(&args.out_report, serde_json::to_string_pretty(&report)?)?;
    println!("{}", args.out_model.display());
    println!("{}", args.out_report.display());
    Ok(())
}

/// Dense or hard-thresholded VAR(1) fit at fixed structure. Budgets of at
/// least `p` reduce the sparse path to the dense one exactly, so both
/// share the spectral initialization; genuinely sparse budgets use the
/// L1-seeded initializer.
fn fit_var1_at(
    y: &varcs_core::Matrix,
    x: &varcs_core::Matrix,
    r: usize,
    d: usize,
    sparse: Option<(usize, usize, usize)>,
    gd: &GdConfig,
) -> CliResult<FitReport<varcs_core::Var1CsParams>> {
    match sparse {
        None => {
            let rr = reduced_rank_var1(y, x, r)?;
            let init = spectral_init_var1(&rr, d, gd.reg_scale)?;
            Ok(fit_var1(y, x, r, d, &init, gd)?)
        }
        Some((s_c, s_r, s_p)) => {
            let p = y.rows();
            let levels = SparsityLevels {
                s_common: s_c,
                s_resp: s_r,
                s_pred: s_p,
            };
            let init = if s_c >= p && s_r >= p && s_p >= p {
                let rr = reduced_rank_var1(y, x, r)?;
                spectral_init_var1(&rr, d, gd.reg_scale)?
            } else {
                let lambda = varcs_core::initializer::default_sparse_lambda(y, x)?;
                sparse_init_var1(y, x, r, d, lambda, levels, gd.reg_scale)?
            };
            Ok(fit_sparse_var1(y, x, r, d, levels, &init, gd)?)
        }
    }
}

fn cmd_select(args: SelectArgs) -> CliResult<()> {
    let panel = TimePanel::read_csv(&args.panel)?;
    let config = SelectionConfig {
        r_bar: args.r_bar,
        r_bars: args.r_bars.unwrap_or((args.r_bar, args.r_bar, args.r_bar)),
        ridge_override: args.ridge_override,
        ..SelectionConfig::default()
    };
    let outcome = select_pipeline(&panel, args.lag, &config)?;
    std::fs::write(&args.out, serde_json::to_string_pretty(&outcome.report)?)?;
    println!("{}", args.out.display());
    Ok(())
}

fn cmd_forecast(args: ForecastArgs) -> CliResult<()> {
    let panel = TimePanel::read_csv(&args.panel)?;
    let text = std::fs::read_to_string(&args.model)?;
    let model: Model = serde_json::from_str(&text)?;
    if model.dim() != panel.dim() {
        return Err(CliError::Spec(format!(
            "model dimension {} does not match panel dimension {}",
            model.dim(),
            panel.dim()
        )));
    }
    let slices = model.coefficient_slices()?;
    let history = panel.tail(model.lag())?;
    let max_h = *args.horizons.iter().max().expect("validated non-empty");
    let fc = forecast(&slices, &history, max_h)?;
    let mut w = csv::Writer::from_path(&args.out).map_err(CoreError::from)?;
    let p = panel.dim();
    let mut header = vec!["horizon".to_string()];
    match panel.names() {
        Some(names) => header.extend(names.iter().cloned()),
        None => header.extend((1..=p).map(|i| format!("y{i}"))),
    }
    w.write_record(&header).map_err(CoreError::from)?;
    for &h in &args.horizons {
        let mut rec = vec![h.to_string()];
        for i in 0..p {
            rec.push(format_f64(fc.get(i, h - 1)));
        }
        w.write_record(&rec).map_err(CoreError::from)?;
    }
    w.flush().map_err(|e| CliError::Spec(format!("io: {e}")))?;
    println!("{}", args.out.display());
    Ok(())
}

fn cmd_benchmark(args: BenchmarkArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.experiment)?;
    let mut spec: ExperimentSpec = serde_json::from_str(&text)?;
    if let Some(reps) = args.reps {
        spec.reps = reps;
    }
    let jobs = args.jobs.or_else(|| {
        std::env::var("VARCS_JOBS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    eprintln!(
        "running {} reps x {} T value(s) of '{}'",
        spec.reps,
        spec.t_values.len(),
        spec.name
    );
    let summary = run_experiment(&spec, jobs)?;
    summary.write_csv(&args.out)?;
    println!("{}", args.out.display());
    Ok(())
}
