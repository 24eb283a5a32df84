//! Factored VAR model types, coefficient reconstruction, parameter
//! counting, and stationarity/conditioning diagnostics.
//!
//! The factor matrices are identified only up to block-orthogonal
//! rotations. Models are therefore compared through gauge-invariant
//! quantities: the reconstructed coefficients, subspace projectors, and
//! sin-Θ distances. Never compare raw factor matrices across fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    orthonormalize, spectral_radius, svd, tucker_reconstruct, unfold, Matrix, Tensor3,
};

/// VAR(1) coefficient factorization `A = [C R] D [C P]'`.
///
/// `common` is `p x d`, `resp` and `pred` are `p x (r - d)`, and `core`
/// is the `r x r` block matrix `D`. `d = 0` and `d = r` are represented
/// by zero-column blocks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Var1CsParams {
    pub common: Matrix,
    pub resp: Matrix,
    pub pred: Matrix,
    pub core: Matrix,
    pub scale_b: f64,
}

impl Var1CsParams {
    pub fn new(
        common: Matrix,
        resp: Matrix,
        pred: Matrix,
        core: Matrix,
        scale_b: f64,
    ) -> Result<Self> {
        let p = common.rows();
        let d = common.cols();
        let spec = resp.cols();
        let r = d + spec;
        if resp.rows() != p || pred.rows() != p || pred.cols() != spec {
            return Err(Error::ShapeMismatch {
                op: "Var1CsParams::new",
                expected: format!("factors with {p} rows and {spec} specific columns"),
                got: format!(
                    "resp {:?}, pred {:?}",
                    resp.shape(),
                    pred.shape()
                ),
            });
        }
        if core.shape() != (r, r) {
            return Err(Error::ShapeMismatch {
                op: "Var1CsParams::new",
                expected: format!("{r}x{r} core"),
                got: format!("{:?}", core.shape()),
            });
        }
        if r > p {
            return Err(Error::InvalidArg(format!(
                "rank {r} exceeds dimension {p}"
            )));
        }
        if !(scale_b > 0.0) {
            return Err(Error::InvalidArg("scale_b must be positive".into()));
        }
        Ok(Self {
            common,
            resp,
            pred,
            core,
            scale_b,
        })
    }

    pub fn dim(&self) -> usize {
        self.common.rows()
    }

    pub fn rank(&self) -> usize {
        self.core.rows()
    }

    pub fn common_dim(&self) -> usize {
        self.common.cols()
    }

    /// `[C R]`.
    pub fn left_factor(&self) -> Matrix {
        self.common.hcat(&self.resp)
    }

    /// `[C P]`.
    pub fn right_factor(&self) -> Matrix {
        self.common.hcat(&self.pred)
    }

    /// Reconstructs the `p x p` coefficient matrix `A = [C R] D [C P]'`.
    pub fn reconstruct(&self) -> Matrix {
        self.left_factor()
            .matmul(&self.core)
            .matmul_nt(&self.right_factor())
    }

    pub fn diagnostics(&self) -> Result<ModelDiagnostics> {
        let a = self.reconstruct();
        let f = svd(&a)?;
        let r = self.rank();
        let sigma1 = f.s.first().copied().unwrap_or(0.0);
        let sigma_r = if r >= 1 { f.s[r - 1] } else { 0.0 };
        diagnostics_from(
            sigma1,
            sigma_r,
            &self.common,
            &self.resp,
            &self.pred,
            spectral_radius(&a)?,
        )
    }
}

/// VAR(ℓ) coefficient factorization `A = G x1 [C R] x2 [C P] x3 L`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VarLCsParams {
    pub common: Matrix,
    pub resp: Matrix,
    pub pred: Matrix,
    /// Lag factor `L`, shape `lag x r3`.
    pub lag_factor: Matrix,
    /// Core tensor `G`, dims `(r1, r2, r3)`.
    pub core: Tensor3,
    pub scale_b: f64,
}

impl VarLCsParams {
    pub fn new(
        common: Matrix,
        resp: Matrix,
        pred: Matrix,
        lag_factor: Matrix,
        core: Tensor3,
        scale_b: f64,
    ) -> Result<Self> {
        let p = common.rows();
        let d = common.cols();
        let (r1, r2, r3) = core.dims();
        if resp.rows() != p
            || pred.rows() != p
            || resp.cols() + d != r1
            || pred.cols() + d != r2
            || lag_factor.cols() != r3
        {
            return Err(Error::ShapeMismatch {
                op: "VarLCsParams::new",
                expected: format!("factors consistent with core dims ({r1},{r2},{r3}) and d={d}"),
                got: format!(
                    "resp {:?}, pred {:?}, lag {:?}",
                    resp.shape(),
                    pred.shape(),
                    lag_factor.shape()
                ),
            });
        }
        if r3 > lag_factor.rows() {
            return Err(Error::InvalidArg(format!(
                "lag rank {r3} exceeds lag order {}",
                lag_factor.rows()
            )));
        }
        if d > r1.min(r2) {
            return Err(Error::InvalidArg(format!(
                "common dimension {d} exceeds min(r1, r2) = {}",
                r1.min(r2)
            )));
        }
        if !(scale_b > 0.0) {
            return Err(Error::InvalidArg("scale_b must be positive".into()));
        }
        Ok(Self {
            common,
            resp,
            pred,
            lag_factor,
            core,
            scale_b,
        })
    }

    pub fn dim(&self) -> usize {
        self.common.rows()
    }

    pub fn ranks(&self) -> (usize, usize, usize) {
        self.core.dims()
    }

    pub fn common_dim(&self) -> usize {
        self.common.cols()
    }

    pub fn lag_order(&self) -> usize {
        self.lag_factor.rows()
    }

    pub fn left_factor(&self) -> Matrix {
        self.common.hcat(&self.resp)
    }

    pub fn right_factor(&self) -> Matrix {
        self.common.hcat(&self.pred)
    }

    /// Reconstructs the `p x p x lag` coefficient tensor.
    pub fn reconstruct(&self) -> Tensor3 {
        tucker_reconstruct(
            &self.core,
            &self.left_factor(),
            &self.right_factor(),
            &self.lag_factor,
        )
        .expect("shapes validated at construction")
    }

    pub fn diagnostics(&self) -> Result<ModelDiagnostics> {
        let t = self.reconstruct();
        let (r1, r2, r3) = self.ranks();
        let mut sigma1 = 0.0f64;
        let mut sigma_r = f64::INFINITY;
        for (mode, r) in [(1, r1), (2, r2), (3, r3)] {
            let f = svd(&unfold(&t, mode))?;
            sigma1 = sigma1.max(f.s.first().copied().unwrap_or(0.0));
            let tail = if r >= 1 { f.s[r - 1] } else { 0.0 };
            sigma_r = sigma_r.min(tail);
        }
        if !sigma_r.is_finite() {
            sigma_r = 0.0;
        }
        let radius = stationarity_check(&t.frontal_slices())?;
        diagnostics_from(sigma1, sigma_r, &self.common, &self.resp, &self.pred, radius)
    }
}

/// Conditioning and separation diagnostics of a (true or fitted) model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelDiagnostics {
    /// Largest singular value of the reconstructed coefficients (max over
    /// unfoldings in the tensor case).
    pub sigma1: f64,
    /// Smallest retained singular value (min over unfoldings).
    pub sigma_r: f64,
    /// Condition number `sigma1 / sigma_r`.
    pub kappa: f64,
    /// Sine of the smallest canonical angle between the response- and
    /// predictor-specific subspaces; 1 by convention when they are empty.
    pub g_min: f64,
    pub spectral_radius: f64,
}

fn diagnostics_from(
    sigma1: f64,
    sigma_r: f64,
    common: &Matrix,
    resp: &Matrix,
    pred: &Matrix,
    radius: f64,
) -> Result<ModelDiagnostics> {
    let kappa = if sigma_r > 0.0 {
        sigma1 / sigma_r
    } else {
        f64::INFINITY
    };
    let g_min = if resp.cols() == 0 {
        1.0
    } else {
        // Canonical angles are defined for orthonormal bases; factors from
        // mid-optimization iterates are only approximately scaled, so
        // orthonormalize [C R] and [C P] and take the specific blocks.
        let d = common.cols();
        let left = orthonormalize(&common.hcat(resp))?;
        let right = orthonormalize(&common.hcat(pred))?;
        let r_on = left.columns(d, left.cols());
        let p_on = right.columns(d, right.cols());
        let s1 = svd(&r_on.matmul_tn(&p_on))?
            .s
            .first()
            .copied()
            .unwrap_or(0.0)
            .min(1.0);
        (1.0 - s1 * s1).max(0.0).sqrt()
    };
    Ok(ModelDiagnostics {
        sigma1,
        sigma_r,
        kappa,
        g_min,
        spectral_radius: radius,
    })
}

/// Frontal slices `A_1 .. A_l` of a coefficient tensor.
pub fn coefficient_slices(t: &Tensor3) -> Vec<Matrix> {
    t.frontal_slices()
}

/// Parameter count of the common-subspace VAR(1) model:
/// `r (2p - r) - d (p - (d + 1) / 2)`.
pub fn param_count_cs(p: usize, r: usize, d: usize) -> usize {
    param_count_rr(p, r) - d * (2 * p - d - 1) / 2
}

/// Parameter count of the reduced-rank VAR(1) model: `r (2p - r)`.
pub fn param_count_rr(p: usize, r: usize) -> usize {
    r * (2 * p - r)
}

/// Parameter count of the common-subspace VAR(ℓ) model:
/// `r1 r2 r3 + r1 (p - r1) + r2 (p - r2) + r3 (l - r3) - d (p - (d + 1) / 2)`.
pub fn param_count_cs_tensor(
    p: usize,
    lag: usize,
    r1: usize,
    r2: usize,
    r3: usize,
    d: usize,
) -> usize {
    r1 * r2 * r3 + r1 * (p - r1) + r2 * (p - r2) + r3 * (lag - r3) - d * (2 * p - d - 1) / 2
}

/// Companion matrix of VAR(ℓ) coefficient slices, shape `pl x pl`.
pub fn companion_matrix(slices: &[Matrix]) -> Matrix {
    let lag = slices.len();
    assert!(lag > 0, "companion_matrix: empty slice list");
    let p = slices[0].rows();
    let mut c = Matrix::zeros(p * lag, p * lag);
    for (k, a) in slices.iter().enumerate() {
        assert_eq!(a.shape(), (p, p), "companion_matrix: non-square slice");
        for i in 0..p {
            for j in 0..p {
                c.set(i, k * p + j, a.get(i, j));
            }
        }
    }
    for i in p..p * lag {
        c.set(i, i - p, 1.0);
    }
    c
}

/// Spectral radius of the companion matrix; the model is stationary iff
/// the returned value is below one.
pub fn stationarity_check(slices: &[Matrix]) -> Result<f64> {
    spectral_radius(&companion_matrix(slices))
}

/// A fitted model of either order, as stored on disk.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "model_type")]
pub enum Model {
    #[serde(rename = "var1_cs")]
    Var1Cs {
        dims: ModelDims,
        rank: usize,
        common_dim: usize,
        scale_b: f64,
        common: Matrix,
        resp: Matrix,
        pred: Matrix,
        core: Matrix,
    },
    #[serde(rename = "varl_cs")]
    VarLCs {
        dims: ModelDims,
        ranks: (usize, usize, usize),
        common_dim: usize,
        scale_b: f64,
        common: Matrix,
        resp: Matrix,
        pred: Matrix,
        lag_factor: Matrix,
        core: Tensor3,
    },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ModelDims {
    pub p: usize,
    pub lag: usize,
}

impl Model {
    pub fn lag(&self) -> usize {
        match self {
            Model::Var1Cs { dims, .. } | Model::VarLCs { dims, .. } => dims.lag,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Model::Var1Cs { dims, .. } | Model::VarLCs { dims, .. } => dims.p,
        }
    }

    /// Reconstructed coefficient slices `A_1 .. A_l` for forecasting.
    pub fn coefficient_slices(&self) -> Result<Vec<Matrix>> {
        match self.clone().into_params()? {
            Params::Var1(m) => Ok(vec![m.reconstruct()]),
            Params::VarL(m) => Ok(m.reconstruct().frontal_slices()),
        }
    }

    pub fn into_params(self) -> Result<Params> {
        match self {
            Model::Var1Cs {
                common,
                resp,
                pred,
                core,
                scale_b,
                ..
            } => Ok(Params::Var1(Var1CsParams::new(
                common, resp, pred, core, scale_b,
            )?)),
            Model::VarLCs {
                common,
                resp,
                pred,
                lag_factor,
                core,
                scale_b,
                ..
            } => Ok(Params::VarL(VarLCsParams::new(
                common, resp, pred, lag_factor, core, scale_b,
            )?)),
        }
    }
}

/// Either parameterization, for code paths handling both orders.
#[derive(Clone, Debug)]
pub enum Params {
    Var1(Var1CsParams),
    VarL(VarLCsParams),
}

impl From<&Var1CsParams> for Model {
    fn from(m: &Var1CsParams) -> Self {
        Model::Var1Cs {
            dims: ModelDims {
                p: m.dim(),
                lag: 1,
            },
            rank: m.rank(),
            common_dim: m.common_dim(),
            scale_b: m.scale_b,
            common: m.common.clone(),
            resp: m.resp.clone(),
            pred: m.pred.clone(),
            core: m.core.clone(),
        }
    }
}

impl From<&VarLCsParams> for Model {
    fn from(m: &VarLCsParams) -> Self {
        Model::VarLCs {
            dims: ModelDims {
                p: m.dim(),
                lag: m.lag_order(),
            },
            ranks: m.ranks(),
            common_dim: m.common_dim(),
            scale_b: m.scale_b,
            common: m.common.clone(),
            resp: m.resp.clone(),
            pred: m.pred.clone(),
            lag_factor: m.lag_factor.clone(),
            core: m.core.clone(),
        }
    }
}
