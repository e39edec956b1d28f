//! Exact Gaussian kernel of the constant-coefficient Kolmogorov operator.
//!
//! For a drift matrix `B` satisfying the rank condition and a diffusion level
//! `M`, the operator `1/2 M Σ_{i<=p0} ∂²_{x_i} + <Bx,∇> + ∂_t` has the
//! explicit fundamental solution
//!
//! ```text
//! Γ(t,x;T,ξ) = (2π)^(-d/2) det(C(T-t))^(-1/2)
//!              exp( -1/2 <C(T-t)^{-1} z, z> ),   z = ξ - e^{(T-t)B} x,
//! ```
//!
//! where the covariance is the integral `C(s) = ∫_0^s e^{rB} D e^{rB'} dr`
//! with `D = diag(M I_{p0}, 0)`. The covariance is computed by fixed-order
//! Gauss-Legendre quadrature (exact when `B` is nilpotent, since the
//! integrand is then polynomial), factored once per elapsed time and reused
//! across evaluation points. Residual checks for the Chapman-Kolmogorov
//! identity and for the backward/forward Kolmogorov equations are included.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::geometry::{kalman_rank, BlockStructure, DriftMatrix};
use crate::quadrature::{gauss_legendre, integrate_gaussian_frame, GaussianFrame};

/// Nodes per axis for tensor quadrature checks (normalization and
/// Chapman-Kolmogorov); generous for analytic Gaussian integrands.
pub const TENSOR_NODES: usize = 96;
/// Half-width of tensor quadrature boxes, in standard deviations.
pub const TENSOR_HALF_WIDTH: f64 = 8.0;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("kalman rank is {rank} < d = {d}; the covariance is singular for all times")]
    HypoellipticityFailure { rank: usize, d: usize },
    #[error("covariance matrix is not positive definite at elapsed time {elapsed}")]
    SingularCovariance { elapsed: f64 },
    #[error("elapsed time must be positive, got T - t = {0}")]
    NonPositiveElapsed(f64),
    #[error("step h = {h} too large for elapsed time {elapsed}: h^2 must not exceed 0.1 (T - t)")]
    StepTooLarge { h: f64, elapsed: f64 },
}

/// Matrix exponential `e^{tB}` by scaling and squaring of the Taylor series.
///
/// The argument is halved until its infinity norm is at most 1/2, the series
/// is summed to machine convergence and the result squared back. For a
/// nilpotent matrix the series terminates, making the result exact up to
/// rounding.
pub fn mat_exp(b: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let d = b.nrows();
    let a = b * t;
    let norm = a
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = &a / 2.0_f64.powi(squarings as i32);
    let mut result = DMatrix::identity(d, d);
    let mut term = DMatrix::identity(d, d);
    for k in 1..=80 {
        term = (&term * &scaled) / k as f64;
        let tnorm: f64 = term.iter().map(|v| v.abs()).sum();
        if tnorm == 0.0 {
            break;
        }
        result += &term;
        if tnorm < 1e-18 * result.iter().map(|v| v.abs()).sum::<f64>() {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Frozen data of a constant-coefficient Gaussian kernel.
#[derive(Debug, Clone)]
pub struct GaussianKernelParams {
    pub drift: DriftMatrix,
    pub p0: usize,
    /// Diffusion level `M` multiplying the identity on the first block.
    pub diffusion_level: f64,
    pub structure: BlockStructure,
}

impl GaussianKernelParams {
    /// Builds kernel parameters, rejecting drift matrices that fail the rank
    /// condition (the covariance would be singular for every elapsed time).
    pub fn new(
        drift: DriftMatrix,
        diffusion_level: f64,
        structure: BlockStructure,
    ) -> Result<Self, KernelError> {
        assert!(diffusion_level > 0.0, "diffusion level must be positive");
        let d = drift.dim();
        let p0 = drift.p0;
        let rank = kalman_rank(&drift, p0);
        if rank < d {
            return Err(KernelError::HypoellipticityFailure { rank, d });
        }
        Ok(GaussianKernelParams {
            drift,
            p0,
            diffusion_level,
            structure,
        })
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }
}

/// Covariance of the kernel at a fixed elapsed time, with its factorization.
pub struct CovarianceMatrix {
    pub elapsed: f64,
    pub matrix: DMatrix<f64>,
    pub log_det: f64,
    chol: Cholesky<f64, Dyn>,
}

impl CovarianceMatrix {
    /// Gaussian density with this covariance evaluated at a centered point.
    pub fn density(&self, z: &DVector<f64>) -> f64 {
        let d = z.len() as f64;
        let sol = self.chol.solve(z);
        let quad = sol.dot(z);
        (-0.5 * (d * (2.0 * std::f64::consts::PI).ln() + self.log_det + quad)).exp()
    }

    /// Lower Cholesky factor.
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

/// Integral covariance `C(s)` by Gauss-Legendre quadrature with `2d` nodes.
///
/// The integrand `r -> e^{rB} D e^{rB'}` is polynomial of degree `2(d-1)`
/// when `B` is nilpotent, so the rule is exact there; for generic small `B`
/// the error is far below the tolerances used downstream.
pub fn covariance(s: f64, params: &GaussianKernelParams) -> Result<CovarianceMatrix, KernelError> {
    if s <= 0.0 {
        return Err(KernelError::NonPositiveElapsed(s));
    }
    let d = params.dim();
    let p0 = params.p0;
    let m_level = params.diffusion_level;
    let (nodes, weights) = gauss_legendre(2 * d);
    let mut cov = DMatrix::zeros(d, d);
    for (&u, &w) in nodes.iter().zip(&weights) {
        let r = 0.5 * s * (u + 1.0);
        let flow = mat_exp(&params.drift.matrix, r);
        // e^{rB} D e^{rB'} = M * E E' with E the first p0 columns of e^{rB}.
        for row in 0..d {
            for col in 0..d {
                let mut acc = 0.0;
                for k in 0..p0 {
                    acc += flow[(row, k)] * flow[(col, k)];
                }
                cov[(row, col)] += 0.5 * s * w * m_level * acc;
            }
        }
    }
    // Symmetrize: quadrature preserves symmetry up to rounding.
    for row in 0..d {
        for col in 0..row {
            let v: f64 = 0.5 * (cov[(row, col)] + cov[(col, row)]);
            cov[(row, col)] = v;
            cov[(col, row)] = v;
        }
    }
    let chol = Cholesky::new(cov.clone()).ok_or(KernelError::SingularCovariance { elapsed: s })?;
    let log_det = 2.0 * (0..d).map(|i| chol.l()[(i, i)].ln()).sum::<f64>();
    Ok(CovarianceMatrix {
        elapsed: s,
        matrix: cov,
        log_det,
        chol,
    })
}

/// Kernel frozen at one elapsed time: the flow `e^{sB}` plus the factored
/// covariance, ready for repeated evaluation over grids.
pub struct KernelSlice {
    pub flow: DMatrix<f64>,
    pub cov: CovarianceMatrix,
}

impl KernelSlice {
    pub fn new(elapsed: f64, params: &GaussianKernelParams) -> Result<Self, KernelError> {
        if elapsed <= 0.0 {
            return Err(KernelError::NonPositiveElapsed(elapsed));
        }
        Ok(KernelSlice {
            flow: mat_exp(&params.drift.matrix, elapsed),
            cov: covariance(elapsed, params)?,
        })
    }

    /// Forward mean `e^{sB} x`.
    pub fn mean(&self, x: &[f64]) -> DVector<f64> {
        let d = self.flow.nrows();
        DVector::from_fn(d, |r, _| (0..d).map(|c| self.flow[(r, c)] * x[c]).sum())
    }

    /// Kernel density at forward point `xi` from backward point `x`.
    pub fn eval(&self, x: &[f64], xi: &[f64]) -> f64 {
        let mean = self.mean(x);
        let z = DVector::from_fn(xi.len(), |i, _| xi[i] - mean[i]);
        self.cov.density(&z)
    }
}

/// Kernel density `Γ(t,x;T,ξ)`.
///
/// Convenience wrapper around [`KernelSlice`]; grids should build the slice
/// once per elapsed time instead.
pub fn gauss_eval(
    t: f64,
    x: &[f64],
    t_end: f64,
    xi: &[f64],
    params: &GaussianKernelParams,
) -> Result<f64, KernelError> {
    let slice = KernelSlice::new(t_end - t, params)?;
    Ok(slice.eval(x, xi))
}

/// Total mass of the kernel by tensor quadrature over ±8 standard deviations
/// along the principal axes; 1 up to quadrature and truncation error.
pub fn normalization_mass(
    t: f64,
    x: &[f64],
    t_end: f64,
    params: &GaussianKernelParams,
) -> Result<f64, KernelError> {
    let slice = KernelSlice::new(t_end - t, params)?;
    let frame = GaussianFrame::new(slice.mean(x), &slice.cov.matrix);
    let mass = integrate_gaussian_frame(&frame, TENSOR_HALF_WIDTH, TENSOR_NODES, &|p| {
        slice
            .cov
            .density(&DVector::from_fn(p.len(), |i, _| p[i] - frame.mean[i]))
    });
    Ok(mass)
}

/// Residuals of the Chapman-Kolmogorov identity
/// `∫ Γ(t,x;s,z) Γ(s,z;T,ξ) dz = Γ(t,x;T,ξ)`, evaluated two ways.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct CkResidual {
    /// Composition of covariances in closed form vs the direct kernel.
    pub analytic: f64,
    /// Tensor quadrature of the intermediate integral vs the direct kernel.
    pub quadrature: f64,
}

/// Chapman-Kolmogorov residual at an intermediate time `t < s < T`.
pub fn chapman_kolmogorov_residual(
    t: f64,
    s: f64,
    t_end: f64,
    x: &[f64],
    xi: &[f64],
    params: &GaussianKernelParams,
) -> Result<CkResidual, KernelError> {
    assert!(t < s && s < t_end, "requires t < s < T");
    let first = KernelSlice::new(s - t, params)?;
    let second = KernelSlice::new(t_end - s, params)?;
    let full = KernelSlice::new(t_end - t, params)?;
    let direct = full.eval(x, xi);

    // Analytic route: C(T-t) = e^{(T-s)B} C(s-t) e^{(T-s)B'} + C(T-s), so the
    // intermediate integral is the Gaussian with the composed covariance.
    let composed = &second.flow * &first.cov.matrix * second.flow.transpose() + &second.cov.matrix;
    let chol = Cholesky::new(composed.clone())
        .ok_or(KernelError::SingularCovariance { elapsed: t_end - t })?;
    let log_det = 2.0
        * (0..composed.nrows())
            .map(|i| chol.l()[(i, i)].ln())
            .sum::<f64>();
    let mean = full.mean(x);
    let z = DVector::from_fn(xi.len(), |i, _| xi[i] - mean[i]);
    let quad_form = chol.solve(&z).dot(&z);
    let d = xi.len() as f64;
    let analytic_value =
        (-0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det + quad_form)).exp();

    // Quadrature route over the intermediate variable.
    let frame = GaussianFrame::new(first.mean(x), &first.cov.matrix);
    let xi_vec = xi.to_vec();
    let x_vec = x.to_vec();
    let integral = integrate_gaussian_frame(&frame, TENSOR_HALF_WIDTH, TENSOR_NODES, &|zp| {
        let zs = zp.as_slice();
        first.eval(&x_vec, zs) * second.eval(zs, &xi_vec)
    });

    Ok(CkResidual {
        analytic: (analytic_value - direct).abs(),
        quadrature: (integral - direct).abs(),
    })
}

/// Finite-difference residuals of the kernel under the backward operator in
/// `(t,x)` and the forward (adjoint) operator in `(T,ξ)`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct PdeResidual {
    pub backward: f64,
    pub forward: f64,
}

/// Central finite-difference residual of `K Γ` at `(t,x)` and `K* Γ` at
/// `(T,ξ)` with step `h`; the drift-time derivative is discretized along the
/// integral curve `δ -> (t+δ, e^{δB} x)`.
///
/// Both stencils are second order, so halving `h` divides the residual by
/// about 4.
pub fn pde_residual(
    t: f64,
    x: &[f64],
    t_end: f64,
    xi: &[f64],
    params: &GaussianKernelParams,
    h: f64,
) -> Result<PdeResidual, KernelError> {
    let elapsed = t_end - t;
    if elapsed <= 0.0 {
        return Err(KernelError::NonPositiveElapsed(elapsed));
    }
    if h * h > 0.1 * elapsed {
        return Err(KernelError::StepTooLarge { h, elapsed });
    }
    let m_level = params.diffusion_level;
    let p0 = params.p0;
    let d = params.dim();

    // Backward residual in (t, x): 1/2 M Σ ∂²_{x_i} Γ + YΓ.
    let slice = KernelSlice::new(elapsed, params)?;
    let center = slice.eval(x, xi);
    let mut backward = 0.0;
    let mut xp = x.to_vec();
    for i in 0..p0 {
        xp[i] = x[i] + h;
        let up = slice.eval(&xp, xi);
        xp[i] = x[i] - h;
        let dn = slice.eval(&xp, xi);
        xp[i] = x[i];
        backward += 0.5 * m_level * (up - 2.0 * center + dn) / (h * h);
    }
    let flow_fwd = mat_exp(&params.drift.matrix, h);
    let flow_bwd = mat_exp(&params.drift.matrix, -h);
    let move_x = |f: &DMatrix<f64>| -> Vec<f64> {
        (0..d)
            .map(|r| (0..d).map(|c| f[(r, c)] * x[c]).sum())
            .collect()
    };
    let up = KernelSlice::new(elapsed - h, params)?.eval(&move_x(&flow_fwd), xi);
    let dn = KernelSlice::new(elapsed + h, params)?.eval(&move_x(&flow_bwd), xi);
    backward += (up - dn) / (2.0 * h);

    // Forward residual in (T, ξ): 1/2 M Σ ∂²_{ξ_i} Γ - YΓ - tr(B) Γ.
    let mut forward = 0.0;
    let mut xip = xi.to_vec();
    for i in 0..p0 {
        xip[i] = xi[i] + h;
        let up = slice.eval(x, &xip);
        xip[i] = xi[i] - h;
        let dn = slice.eval(x, &xip);
        xip[i] = xi[i];
        forward += 0.5 * m_level * (up - 2.0 * center + dn) / (h * h);
    }
    let move_xi = |f: &DMatrix<f64>| -> Vec<f64> {
        (0..d)
            .map(|r| (0..d).map(|c| f[(r, c)] * xi[c]).sum())
            .collect()
    };
    let up = KernelSlice::new(elapsed + h, params)?.eval(x, &move_xi(&flow_fwd));
    let dn = KernelSlice::new(elapsed - h, params)?.eval(x, &move_xi(&flow_bwd));
    forward -= (up - dn) / (2.0 * h);
    forward -= params.drift.matrix.trace() * center;

    Ok(PdeResidual {
        backward: backward.abs(),
        forward: forward.abs(),
    })
}
