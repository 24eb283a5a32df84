//! Rank selection by the ridge-type ratio method, common-dimension
//! selection by BIC, and the two-stage pipeline combining them.
//!
//! Stage 1 estimates the reduced-rank (or rank-constrained) model at the
//! upper bounds and picks the rank(s) minimizing consecutive regularized
//! singular-value ratios. Stage 2 runs the gradient-descent fit for every
//! candidate common dimension and picks the BIC minimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit_var1, fit_varl_design, FitReport, GdConfig, GramData};
use crate::initializer::{
    rank_constrained_varl_design, reduced_rank_var1, spectral_init_var1, spectral_init_varl,
    RankConstrainedFit, ReducedRankFit,
};
use crate::linalg::{svd, unfold, Matrix};
use crate::model::{param_count_cs, param_count_cs_tensor, Var1CsParams, VarLCsParams};
use crate::panel::TimePanel;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Rank upper bound for VAR(1); clamped to `p`.
    pub r_bar: usize,
    /// Per-mode upper bounds for VAR(ℓ); clamped to `(p, p, lag)`.
    pub r_bars: (usize, usize, usize),
    /// Replaces `s(p, T)` when set.
    pub ridge_override: Option<f64>,
    pub gd: GdConfig,
    /// Joint BIC search over `(r, d)` instead of the two-stage procedure
    /// (VAR(1) only).
    pub joint_search: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            r_bar: 10,
            r_bars: (10, 10, 10),
            ridge_override: None,
            gd: GdConfig::default(),
            joint_search: false,
        }
    }
}

/// Ridge parameter `s(p, T) = sqrt(p ln(T) / (10 T))`.
pub fn ridge_param(p: usize, t_len: usize) -> f64 {
    let pf = p as f64;
    let tf = t_len as f64;
    (pf * tf.ln() / (10.0 * tf)).sqrt()
}

/// Rank minimizing `(sigma_{i+1} + s) / (sigma_i + s)` over
/// `1 <= i <= len - 1`; ties break toward the smaller rank.
pub fn ridge_ratio_rank(singular_values: &[f64], s_pt: f64) -> Result<usize> {
    if singular_values.len() < 2 {
        return Err(Error::InvalidArg(
            "ridge_ratio_rank: need at least two singular values".into(),
        ));
    }
    if !(s_pt > 0.0) {
        return Err(Error::InvalidArg("ridge_ratio_rank: s(p,T) must be positive".into()));
    }
    let mut best = 1usize;
    let mut best_ratio = f64::INFINITY;
    for i in 1..singular_values.len() {
        let ratio = (singular_values[i] + s_pt) / (singular_values[i - 1] + s_pt);
        if ratio < best_ratio {
            best_ratio = ratio;
            best = i;
        }
    }
    Ok(best)
}

/// Stage-1 rank selection for VAR(1): ridge ratio on the singular values
/// of the reduced-rank estimator at the upper bound.
pub fn select_rank_var1(
    y: &Matrix,
    x: &Matrix,
    config: &SelectionConfig,
) -> Result<(usize, ReducedRankFit)> {
    let p = y.rows();
    let r_bar = config.r_bar.min(p);
    if r_bar < 2 {
        return Err(Error::InvalidArg(format!(
            "select_rank_var1: rank upper bound {r_bar} must be at least 2"
        )));
    }
    let rr = reduced_rank_var1(y, x, r_bar)?;
    let s_pt = config
        .ridge_override
        .unwrap_or_else(|| ridge_param(p, y.cols()));
    let svals = &rr.svd.s[..r_bar];
    let r_hat = ridge_ratio_rank(svals, s_pt)?;
    Ok((r_hat, rr))
}

/// `BIC(r, d) = T p ln(||Y - A X||_F^2) + d_CS(p, r, d) ln(T)`.
///
/// A numerically zero residual returns negative infinity (exact fit).
pub fn bic_var1(y: &Matrix, x: &Matrix, a_hat: &Matrix, r: usize, d: usize) -> f64 {
    let gram = GramData::new(y, x).expect("shape-checked by callers");
    let resid_sq = gram.residual_sq(a_hat);
    bic_from_residual(
        resid_sq,
        y.rows(),
        y.cols(),
        param_count_cs(y.rows(), r, d),
    )
}

fn bic_from_residual(resid_sq: f64, p: usize, t_len: usize, d_cs: usize) -> f64 {
    if resid_sq <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let tf = t_len as f64;
    tf * p as f64 * resid_sq.ln() + d_cs as f64 * tf.ln()
}

/// One candidate row of the BIC table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BicEntry {
    pub d: usize,
    pub bic: Option<f64>,
    pub exact_fit: bool,
    pub converged: bool,
    pub iterations: usize,
    /// Present when the candidate fit failed; failed candidates are
    /// excluded from selection rather than fatal.
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum SelectedRank {
    Var1(usize),
    Tensor((usize, usize, usize)),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionReport {
    pub lag: usize,
    pub selected_rank: SelectedRank,
    pub selected_common_dim: usize,
    pub bic_table: Vec<BicEntry>,
    /// Singular values used for rank selection: one list for VAR(1),
    /// three (per mode) for VAR(ℓ).
    pub singular_value_profile: Vec<Vec<f64>>,
    pub ridge_param_used: f64,
}

/// A fitted model of either order together with its descent report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum PipelineFit {
    Var1(FitReport<Var1CsParams>),
    VarL(FitReport<VarLCsParams>),
}

impl PipelineFit {
    pub fn var1(&self) -> Option<&FitReport<Var1CsParams>> {
        match self {
            PipelineFit::Var1(f) => Some(f),
            _ => None,
        }
    }

    pub fn varl(&self) -> Option<&FitReport<VarLCsParams>> {
        match self {
            PipelineFit::VarL(f) => Some(f),
            _ => None,
        }
    }
}

pub struct SelectionOutcome {
    pub report: SelectionReport,
    pub fit: PipelineFit,
}

/// Stage-2 common-dimension selection for VAR(1): fits every
/// `d in 0..=r_hat` from the spectral initialization and returns the BIC
/// minimizer (ties prefer the smaller `d`).
pub fn select_common_dim_var1(
    y: &Matrix,
    x: &Matrix,
    r_hat: usize,
    config: &SelectionConfig,
) -> Result<SelectionOutcome> {
    let rr = reduced_rank_var1(y, x, r_hat)?;
    let mut table = Vec::with_capacity(r_hat + 1);
    let mut best: Option<(f64, usize, FitReport<Var1CsParams>)> = None;
    for d in 0..=r_hat {
        match fit_candidate_var1(y, x, &rr, r_hat, d, &config.gd) {
            Ok((fit, bic, exact)) => {
                table.push(BicEntry {
                    d,
                    bic: Some(bic),
                    exact_fit: exact,
                    converged: fit.converged,
                    iterations: fit.iterations_used,
                    error: None,
                });
                if best.as_ref().is_none_or(|(b, _, _)| bic < *b) {
                    best = Some((bic, d, fit));
                }
            }
            Err(e) => table.push(BicEntry {
                d,
                bic: None,
                exact_fit: false,
                converged: false,
                iterations: 0,
                error: Some(e.to_string()),
            }),
        }
    }
    let (_, d_hat, fit) = best.ok_or_else(|| {
        Error::InvalidArg("select_common_dim_var1: every candidate fit failed".into())
    })?;
    let s_pt = config
        .ridge_override
        .unwrap_or_else(|| ridge_param(y.rows(), y.cols()));
    Ok(SelectionOutcome {
        report: SelectionReport {
            lag: 1,
            selected_rank: SelectedRank::Var1(r_hat),
            selected_common_dim: d_hat,
            bic_table: table,
            singular_value_profile: vec![rr.svd.s.clone()],
            ridge_param_used: s_pt,
        },
        fit: PipelineFit::Var1(fit),
    })
}

fn fit_candidate_var1(
    y: &Matrix,
    x: &Matrix,
    rr: &ReducedRankFit,
    r: usize,
    d: usize,
    gd: &GdConfig,
) -> Result<(FitReport<Var1CsParams>, f64, bool)> {
    let init = spectral_init_var1(rr, d, gd.reg_scale)?;
    let fit = fit_var1(y, x, r, d, &init, gd)?;
    let a_hat = fit.params.reconstruct();
    let bic = bic_var1(y, x, &a_hat, r, d);
    Ok((fit, bic, bic == f64::NEG_INFINITY))
}

/// Stage-1 tensor rank selection: per-mode ridge ratios on the singular
/// values of the rank-constrained estimator at the upper bounds.
pub fn select_ranks_varl(
    panel: &TimePanel,
    lag: usize,
    config: &SelectionConfig,
) -> Result<((usize, usize, usize), RankConstrainedFit, Vec<Vec<f64>>)> {
    let (y, x) = panel.design(lag)?;
    let p = y.rows();
    let bounds = (
        config.r_bars.0.min(p),
        config.r_bars.1.min(p),
        config.r_bars.2.min(lag),
    );
    if bounds.0 < 2 || bounds.1 < 2 {
        return Err(Error::InvalidArg(format!(
            "select_ranks_varl: mode-1/2 upper bounds {bounds:?} must be at least 2"
        )));
    }
    let rc = rank_constrained_varl_design(&y, &x, lag, bounds)?;
    let s_pt = config
        .ridge_override
        .unwrap_or_else(|| ridge_param(p, y.cols()));
    let mut profile = Vec::with_capacity(3);
    let mut hats = [0usize; 3];
    for (idx, (mode, bound)) in [(1usize, bounds.0), (2, bounds.1), (3, bounds.2)]
        .into_iter()
        .enumerate()
    {
        let svals: Vec<f64> = svd(&unfold(&rc.tensor, mode))?
            .s
            .into_iter()
            .take(bound)
            .collect();
        // A lag-1 model has a single mode-3 direction by construction.
        hats[idx] = if svals.len() < 2 {
            1
        } else {
            ridge_ratio_rank(&svals, s_pt)?
        };
        profile.push(svals);
    }
    Ok(((hats[0], hats[1], hats[2]), rc, profile))
}

/// The full two-stage procedure: rank selection, spectral initialization,
/// gradient-descent fits over every candidate common dimension, and BIC
/// selection. Dispatches on the lag order.
pub fn select_pipeline(
    panel: &TimePanel,
    lag: usize,
    config: &SelectionConfig,
) -> Result<SelectionOutcome> {
    if lag == 0 {
        return Err(Error::InvalidArg("select_pipeline: lag must be >= 1".into()));
    }
    if lag == 1 {
        let (y, x) = panel.design(1)?;
        if config.joint_search {
            return joint_search_var1(&y, &x, config);
        }
        let (r_hat, rr_bar) = select_rank_var1(&y, &x, config)?;
        let mut outcome = select_common_dim_var1(&y, &x, r_hat, config)?;
        // Report the stage-1 profile (at the upper bound), which is the
        // basis of the rank choice.
        outcome.report.singular_value_profile = vec![rr_bar.svd.s];
        Ok(outcome)
    } else {
        select_pipeline_varl(panel, lag, config)
    }
}

fn select_pipeline_varl(
    panel: &TimePanel,
    lag: usize,
    config: &SelectionConfig,
) -> Result<SelectionOutcome> {
    let (ranks, _, profile) = select_ranks_varl(panel, lag, config)?;
    let (y, x) = panel.design(lag)?;
    let rc = rank_constrained_varl_design(&y, &x, lag, ranks)?;
    select_common_dim_varl(&y, &x, lag, ranks, &rc, profile, config)
}

/// Stage-2 common-dimension selection for VAR(ℓ), given the stage-1 ranks
/// and the rank-constrained fit at those ranks.
pub fn select_common_dim_varl(
    y: &Matrix,
    x: &Matrix,
    lag: usize,
    ranks: (usize, usize, usize),
    rc: &RankConstrainedFit,
    profile: Vec<Vec<f64>>,
    config: &SelectionConfig,
) -> Result<SelectionOutcome> {
    let p = y.rows();
    let t_len = y.cols();
    let d_max = ranks.0.min(ranks.1);
    let mut table = Vec::with_capacity(d_max + 1);
    let mut best: Option<(f64, usize, FitReport<VarLCsParams>)> = None;
    let gram = GramData::new(y, x)?;
    for d in 0..=d_max {
        let attempt = spectral_init_varl(rc, d, config.gd.reg_scale)
            .and_then(|init| fit_varl_design(y, x, ranks, d, &init, &config.gd));
        match attempt {
            Ok(fit) => {
                let a1 = unfold(&fit.params.reconstruct(), 1);
                let resid_sq = gram.residual_sq(&a1);
                let d_cs = param_count_cs_tensor(p, lag, ranks.0, ranks.1, ranks.2, d);
                let bic = bic_from_residual(resid_sq, p, t_len, d_cs);
                table.push(BicEntry {
                    d,
                    bic: Some(bic),
                    exact_fit: bic == f64::NEG_INFINITY,
                    converged: fit.converged,
                    iterations: fit.iterations_used,
                    error: None,
                });
                if best.as_ref().is_none_or(|(b, _, _)| bic < *b) {
                    best = Some((bic, d, fit));
                }
            }
            Err(e) => table.push(BicEntry {
                d,
                bic: None,
                exact_fit: false,
                converged: false,
                iterations: 0,
                error: Some(e.to_string()),
            }),
        }
    }
    let (_, d_hat, fit) = best.ok_or_else(|| {
        Error::InvalidArg("select_pipeline: every tensor candidate fit failed".into())
    })?;
    let s_pt = config
        .ridge_override
        .unwrap_or_else(|| ridge_param(p, t_len));
    Ok(SelectionOutcome {
        report: SelectionReport {
            lag,
            selected_rank: SelectedRank::Tensor(ranks),
            selected_common_dim: d_hat,
            bic_table: table,
            singular_value_profile: profile,
            ridge_param_used: s_pt,
        },
        fit: PipelineFit::VarL(fit),
    })
}

/// Joint `(r, d)` BIC search for VAR(1), opt-in via
/// [`SelectionConfig::joint_search`].
fn joint_search_var1(y: &Matrix, x: &Matrix, config: &SelectionConfig) -> Result<SelectionOutcome> {
    let p = y.rows();
    let r_bar = config.r_bar.min(p);
    let mut best: Option<(f64, usize, usize, FitReport<Var1CsParams>)> = None;
    let mut winning_table = Vec::new();
    for r in 1..=r_bar {
        let rr = reduced_rank_var1(y, x, r)?;
        let mut table = Vec::with_capacity(r + 1);
        let mut improved = false;
        for d in 0..=r {
            match fit_candidate_var1(y, x, &rr, r, d, &config.gd) {
                Ok((fit, bic, exact)) => {
                    table.push(BicEntry {
                        d,
                        bic: Some(bic),
                        exact_fit: exact,
                        converged: fit.converged,
                        iterations: fit.iterations_used,
                        error: None,
                    });
                    if best.as_ref().is_none_or(|(b, _, _, _)| bic < *b) {
                        best = Some((bic, r, d, fit));
                        improved = true;
                    }
                }
                Err(e) => table.push(BicEntry {
                    d,
                    bic: None,
                    exact_fit: false,
                    converged: false,
                    iterations: 0,
                    error: Some(e.to_string()),
                }),
            }
        }
        if improved {
            winning_table = table;
        }
    }
    let (_, r_hat, d_hat, fit) = best.ok_or_else(|| {
        Error::InvalidArg("joint_search_var1: every candidate fit failed".into())
    })?;
    let rr_bar = reduced_rank_var1(y, x, r_bar)?;
    let s_pt = config
        .ridge_override
        .unwrap_or_else(|| ridge_param(p, y.cols()));
    Ok(SelectionOutcome {
        report: SelectionReport {
            lag: 1,
            selected_rank: SelectedRank::Var1(r_hat),
            selected_common_dim: d_hat,
            bic_table: winning_table,
            singular_value_profile: vec![rr_bar.svd.s],
            ridge_param_used: s_pt,
        },
        fit: PipelineFit::Var1(fit),
    })
}
