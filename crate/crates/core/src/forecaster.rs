//! Multi-step forecasting and rolling out-of-sample evaluation.
//!
//! Forecasts operate on reconstructed coefficient slices, never on raw
//! factor matrices, so two parameter sets with equal reconstructed
//! coefficients forecast identically (gauge invariance).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::panel::{format_f64, TimePanel};
use crate::selector::{select_pipeline, PipelineFit, SelectionConfig};
use crate::simulator::dfm_var_baseline;

/// Iterated plug-in forecasts from VAR(ℓ) coefficient slices.
///
/// `history` holds at least the last `lag` observations as columns,
/// oldest first; forecasts beyond one step feed previous forecasts back
/// in for the unavailable lags. Returns `p x horizon`.
pub fn forecast(slices: &[Matrix], history: &Matrix, horizon: usize) -> Result<Matrix> {
    let lag = slices.len();
    if lag == 0 {
        return Err(Error::InvalidArg("forecast: no coefficient slices".into()));
    }
    let p = slices[0].rows();
    if history.rows() != p || history.cols() < lag {
        return Err(Error::InvalidArg(format!(
            "forecast: history must supply the last {lag} observations of dimension {p}"
        )));
    }
    // recent[k] = y_{T-k}, newest first.
    let n = history.cols();
    let mut recent: Vec<Vec<f64>> = (0..lag).map(|k| history.column(n - 1 - k)).collect();
    let mut out = Matrix::zeros(p, horizon);
    for h in 0..horizon {
        let mut next = vec![0.0; p];
        for (k, a_k) in slices.iter().enumerate() {
            let contrib = a_k.matvec(&recent[k]);
            for i in 0..p {
                next[i] += contrib[i];
            }
        }
        for i in 0..p {
            out.set(i, h, next[i]);
        }
        recent.rotate_right(1);
        recent[0] = next;
    }
    Ok(out)
}

/// How the model structure is chosen inside the rolling evaluation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum RollingSelection {
    /// Run the full two-stage pipeline (see `refit_each_origin`).
    Auto(SelectionConfig),
    /// Fixed VAR(1) structure.
    FixedVar1 { rank: usize, common_dim: usize },
    /// Fixed VAR(ℓ) structure.
    FixedVarL {
        ranks: (usize, usize, usize),
        common_dim: usize,
    },
}

/// Rolling-origin evaluation protocol.
///
/// For each origin `t` in `first_origin ..= last_origin` (0-based index
/// into the panel), models are fitted on observations `0 .. t` (that is,
/// data strictly before the origin) and the `h`-step forecast is scored
/// against observation `t + h - 1`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RollingSpec {
    pub first_origin: usize,
    pub last_origin: usize,
    pub horizons: Vec<usize>,
    /// When off, automatic selection runs once at the first origin and the
    /// chosen structure is reused; coefficients are refitted either way.
    pub refit_each_origin: bool,
    pub lag: usize,
    pub selection: RollingSelection,
}

impl Default for RollingSpec {
    fn default() -> Self {
        Self {
            first_origin: 0,
            last_origin: 0,
            horizons: vec![1, 2, 3],
            refit_each_origin: true,
            lag: 1,
            selection: RollingSelection::Auto(SelectionConfig::default()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastMethod {
    VarCs,
    VarRr,
    DfmVar,
}

impl ForecastMethod {
    pub fn name(self) -> &'static str {
        match self {
            ForecastMethod::VarCs => "var_cs",
            ForecastMethod::VarRr => "var_rr",
            ForecastMethod::DfmVar => "dfm_var",
        }
    }
}

/// One row of the rolling error table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RollingRow {
    pub method: String,
    pub horizon: usize,
    pub mean_error: f64,
    pub n_origins: usize,
}

/// Per-origin forecast errors plus the aggregated table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RollingReport {
    pub rows: Vec<RollingRow>,
    pub failures: usize,
}

impl RollingReport {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["method", "horizon", "mean_error", "n_origins"])?;
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                r.horizon.to_string(),
                format_f64(r.mean_error),
                r.n_origins.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn mean_error(&self, method: ForecastMethod, horizon: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method.name() && r.horizon == horizon)
            .map(|r| r.mean_error)
    }
}

/// Coefficient slices for one method fitted on `train`.
fn fit_method(
    method: ForecastMethod,
    train: &TimePanel,
    spec: &RollingSpec,
    structure: &RollingSelection,
    dfm_rank: usize,
) -> Result<Vec<Matrix>> {
    match method {
        ForecastMethod::VarCs => match structure {
            RollingSelection::Auto(cfg) => {
                let outcome = select_pipeline(train, spec.lag, cfg)?;
                match outcome.fit {
                    PipelineFit::Var1(f) => Ok(vec![f.params.reconstruct()]),
                    PipelineFit::VarL(f) => Ok(f.params.reconstruct().frontal_slices()),
                }
            }
            RollingSelection::FixedVar1 { rank, common_dim } => {
                let (y, x) = train.design(1)?;
                let rr = crate::initializer::reduced_rank_var1(&y, &x, *rank)?;
                let init =
                    crate::initializer::spectral_init_var1(&rr, *common_dim, 1.0)?;
                let fit = crate::estimator::fit_var1(
                    &y,
                    &x,
                    *rank,
                    *common_dim,
                    &init,
                    &Default::default(),
                )?;
                Ok(vec![fit.params.reconstruct()])
            }
            RollingSelection::FixedVarL { ranks, common_dim } => {
                let rc = crate::initializer::rank_constrained_varl(train, spec.lag, *ranks)?;
                let init = crate::initializer::spectral_init_varl(&rc, *common_dim, 1.0)?;
                let fit = crate::estimator::fit_varl(
                    train,
                    *ranks,
                    *common_dim,
                    &init,
                    &Default::default(),
                )?;
                Ok(fit.params.reconstruct().frontal_slices())
            }
        },
        ForecastMethod::VarRr => match structure {
            RollingSelection::FixedVar1 { rank, .. } => {
                let (y, x) = train.design(1)?;
                Ok(vec![crate::initializer::reduced_rank_var1(&y, &x, *rank)?.a_hat])
            }
            RollingSelection::FixedVarL { ranks, .. } => {
                let rc = crate::initializer::rank_constrained_varl(train, spec.lag, *ranks)?;
                Ok(rc.tensor.frontal_slices())
            }
            RollingSelection::Auto(cfg) => {
                if spec.lag == 1 {
                    let (y, x) = train.design(1)?;
                    let (r_hat, _) = crate::selector::select_rank_var1(&y, &x, cfg)?;
                    Ok(vec![
                        crate::initializer::reduced_rank_var1(&y, &x, r_hat)?.a_hat,
                    ])
                } else {
                    let (ranks, rc, _) =
                        crate::selector::select_ranks_varl(train, spec.lag, cfg)?;
                    let _ = ranks;
                    Ok(rc.tensor.frontal_slices())
                }
            }
        },
        ForecastMethod::DfmVar => {
            let dfm = dfm_var_baseline(train, dfm_rank, spec.lag, 2)?;
            // The DFM forecaster is not a plain VAR on observables; wrap
            // its forecasts through an equivalent slice set is not exact,
            // so handle it separately in the evaluation loop.
            let _ = dfm;
            unreachable!("DfmVar is dispatched separately")
        }
    }
}

/// Rolling out-of-sample evaluation over all origins and methods.
///
/// Per-origin failures are recorded and excluded; means are arithmetic
/// over the origins that succeeded, with the count disclosed.
pub fn rolling_evaluate(
    panel: &TimePanel,
    spec: &RollingSpec,
    methods: &[ForecastMethod],
    dfm_rank: usize,
) -> Result<RollingReport> {
    let n = panel.len();
    let max_h = spec.horizons.iter().copied().max().unwrap_or(1);
    if spec.horizons.is_empty() || spec.horizons.iter().any(|&h| h == 0) {
        return Err(Error::InvalidArg("horizons must be positive".into()));
    }
    if spec.first_origin > spec.last_origin || spec.last_origin + max_h - 1 >= n {
        return Err(Error::InvalidArg(format!(
            "origins {}..={} with horizon {max_h} do not fit a panel of length {n}",
            spec.first_origin, spec.last_origin
        )));
    }
    if spec.first_origin < spec.lag + 2 {
        return Err(Error::InvalidArg(
            "first origin leaves no training data".into(),
        ));
    }

    // Structure reuse: when not refitting the selection at every origin,
    // resolve Auto once on the first training window.
    let mut resolved = spec.selection.clone();
    if !spec.refit_each_origin {
        if let RollingSelection::Auto(cfg) = &spec.selection {
            let train = panel.prefix(spec.first_origin);
            let outcome = select_pipeline(&train, spec.lag, cfg)?;
            resolved = match outcome.fit {
                PipelineFit::Var1(f) => RollingSelection::FixedVar1 {
                    rank: f.params.rank(),
                    common_dim: f.params.common_dim(),
                },
                PipelineFit::VarL(f) => RollingSelection::FixedVarL {
                    ranks: f.params.ranks(),
                    common_dim: f.params.common_dim(),
                },
            };
        }
    }

    let mut failures = 0usize;
    let mut sums: Vec<Vec<f64>> = vec![vec![0.0; spec.horizons.len()]; methods.len()];
    let mut counts: Vec<Vec<usize>> = vec![vec![0; spec.horizons.len()]; methods.len()];
    for origin in spec.first_origin..=spec.last_origin {
        // Fit strictly on data before the origin.
        let train = panel.prefix(origin);
        let history = train.tail(spec.lag)?;
        for (mi, &method) in methods.iter().enumerate() {
            let fc: Result<Matrix> = if method == ForecastMethod::DfmVar {
                dfm_var_baseline(&train, dfm_rank, spec.lag, 2)
                    .and_then(|dfm| dfm.forecast(&history, max_h))
            } else {
                fit_method(method, &train, spec, &resolved, dfm_rank)
                    .and_then(|slices| forecast(&slices, &history, max_h))
            };
            match fc {
                Ok(fc) => {
                    for (hi, &h) in spec.horizons.iter().enumerate() {
                        let target = panel.observation(origin + h - 1);
                        let pred = fc.column(h - 1);
                        let err = pred
                            .iter()
                            .zip(&target)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt();
                        sums[mi][hi] += err;
                        counts[mi][hi] += 1;
                    }
                }
                Err(_) => failures += 1,
            }
        }
    }

    let mut rows = Vec::new();
    for (mi, &method) in methods.iter().enumerate() {
        for (hi, &h) in spec.horizons.iter().enumerate() {
            rows.push(RollingRow {
                method: method.name().to_string(),
                horizon: h,
                mean_error: if counts[mi][hi] > 0 {
                    sums[mi][hi] / counts[mi][hi] as f64
                } else {
                    f64::NAN
                },
                n_origins: counts[mi][hi],
            });
        }
    }
    Ok(RollingReport { rows, failures })
}
