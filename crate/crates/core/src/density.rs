//! Local-density machinery on cylinders: survivor-based Green function
//! estimation, the localization series over excursions, exit-probability
//! decay and Kolmogorov-equation residuals on estimated and exact densities.
//!
//! The Green function of a cylinder is the density of paths absorbed at the
//! exit from the lens-shaped base; it is estimated by a product-Gaussian
//! kernel density over the endpoints of surviving paths, normalized by the
//! total path count (the density is defective: absorbed mass is simply
//! missing). The local transition density restricted to the base is the sum
//! over excursion indices of the same survivor estimate restarted at the
//! hitting times of an inner region; by the strong Markov property the
//! continuation of a path after its n-th hitting time is such a restart, so
//! classifying each path by its open excursion at the terminal time
//! assembles the series from a single ensemble.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::kernel::{pde_residual, GaussianKernelParams, KernelError, KernelSlice};
use crate::parallel::map_indexed;
use crate::quadrature::{integrate_gaussian_frame, GaussianFrame};
use crate::simulate::{simulate_paths, Cylinder, ModelSpec, SimConfig, SimulateError};
use crate::stats::{linear_fit, mean_se, LineFit};
use crate::verify::McConfig;

#[derive(Debug, Error)]
pub enum DensityError {
    #[error("evaluation grid is empty")]
    EmptyGrid,
    #[error("grid node {node} lies outside the cylinder base")]
    GridOutsideBase { node: usize },
    #[error("start point lies outside the cylinder base")]
    StartOutsideBase,
    #[error("all paths exited the base before the horizon")]
    NoSurvivors,
    #[error("stencil node leaves the model domain")]
    StencilOutsideDomain,
    #[error("step h = {h} too large for elapsed time {elapsed}")]
    StepTooLarge { h: f64, elapsed: f64 },
    #[error("model has no constant-coefficient kernel")]
    ExactKernelUnavailable,
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Gridded nonparametric density estimate with standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct DensityEstimate {
    pub grid: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Dimensionless global bandwidth factor.
    pub bandwidth: f64,
    /// Per-coordinate bandwidths: the factor times the sample spread, which
    /// carries the anisotropic dilation scaling of the density.
    pub bandwidths: Vec<f64>,
    /// Samples contributing mass (survivors or endpoints in the domain).
    pub n_effective: usize,
    pub n_paths: usize,
    pub elapsed: f64,
    /// Fraction of contributing samples; at most 1 by construction.
    pub mass: f64,
    pub mass_se: f64,
}

fn product_kernel(node: &[f64], point: &[f64], bandwidths: &[f64]) -> f64 {
    let mut acc = 1.0;
    for ((&n, &p), &h) in node.iter().zip(point).zip(bandwidths) {
        let u = (n - p) / h;
        acc *= (-0.5 * u * u).exp() / (h * (2.0 * std::f64::consts::PI).sqrt());
    }
    acc
}

/// Per-coordinate sample standard deviation scaled by the global factor.
fn kde_bandwidths(points: &[Vec<f64>], d: usize, global_bw: f64) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for i in 0..d {
        let coord: Vec<f64> = points.iter().map(|p| p[i]).collect();
        let (mean, _) = mean_se(&coord);
        let centered: Vec<f64> = coord.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = crate::stats::pairwise_sum(&centered) / (coord.len().max(2) - 1) as f64;
        out[i] = (global_bw * var.sqrt()).max(1e-12);
    }
    out
}

/// KDE evaluation over a grid, with one contribution slot per path so the
/// per-node standard error reflects the defective normalization.
fn kde_on_grid(
    grid: &[Vec<f64>],
    contributions: &[Option<Vec<f64>>],
    bandwidths: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let per_node: Vec<(f64, f64)> = map_indexed(grid.len(), |node_idx| {
        let node = &grid[node_idx];
        let vals: Vec<f64> = contributions
            .iter()
            .map(|c| match c {
                Some(p) => product_kernel(node, p, bandwidths),
                None => 0.0,
            })
            .collect();
        mean_se(&vals)
    });
    per_node.into_iter().unzip()
}

/// Kernel-density estimate of the cylinder Green function from absorbed
/// paths: survivors are the paths that never leave the base before the
/// horizon, and the estimate is normalized by the total path count.
#[allow(clippy::too_many_arguments)]
pub fn green_estimate(
    model: &ModelSpec,
    cyl: &Cylinder,
    t: f64,
    x: &[f64],
    t_end: f64,
    grid: &[Vec<f64>],
    global_bw: f64,
    mc: &McConfig,
) -> Result<DensityEstimate, DensityError> {
    if grid.is_empty() {
        return Err(DensityError::EmptyGrid);
    }
    if !cyl.contains(x) {
        return Err(DensityError::StartOutsideBase);
    }
    for (node, point) in grid.iter().enumerate() {
        if !cyl.contains(point) {
            return Err(DensityError::GridOutsideBase { node });
        }
    }
    let cfg = SimConfig {
        t0: t,
        x0: x.to_vec(),
        t_end,
        dt: mc.dt,
        n_paths: mc.n_paths,
        seed: mc.seed,
    };
    let endpoints: Vec<Option<Vec<f64>>> = simulate_paths(model, &cfg, |_p, track| {
        let survived = (0..track.n_times()).all(|k| cyl.contains(track.state(k)));
        survived.then(|| track.last().to_vec())
    })?;
    let survivors: Vec<Vec<f64>> = endpoints.iter().flatten().cloned().collect();
    if survivors.is_empty() {
        return Err(DensityError::NoSurvivors);
    }
    let bandwidths = kde_bandwidths(&survivors, model.d, global_bw);
    let (values, std_errors) = kde_on_grid(grid, &endpoints, &bandwidths);
    let indicator: Vec<f64> = endpoints
        .iter()
        .map(|c| if c.is_some() { 1.0 } else { 0.0 })
        .collect();
    let (mass, mass_se) = mean_se(&indicator);
    Ok(DensityEstimate {
        grid: grid.to_vec(),
        values,
        std_errors,
        bandwidth: global_bw,
        bandwidths,
        n_effective: survivors.len(),
        n_paths: mc.n_paths,
        elapsed: t_end - t,
        mass,
        mass_se,
    })
}

/// Region membership predicate shared across threads.
pub type RegionFn = dyn Fn(&[f64]) -> bool + Send + Sync;

/// Inner-region and truncation order of the localization series.
#[derive(Clone)]
pub struct SeriesSpec {
    pub cyl: Cylinder,
    pub inner: Arc<RegionFn>,
    pub n_max: usize,
}

/// Truncated localization series assembled on the evaluation grid.
#[derive(Debug, Clone, Serialize)]
pub struct SeriesAssembly {
    /// Term `n` (1-based) per grid node: mass of paths whose open excursion
    /// at the horizon has index `n`.
    pub terms: Vec<Vec<f64>>,
    /// Sum of the first `n_max` terms per node.
    pub partial: Vec<f64>,
    /// Largest gap between the full estimate and the partial sum over nodes
    /// inside the inner region.
    pub sup_discrepancy: f64,
    /// `P(σ_n < T)` for `n = 1..n_max`, with standard errors.
    pub sigma_probs: Vec<(f64, f64)>,
}

/// Local transition density estimate with an optional localization series.
#[derive(Debug, Clone, Serialize)]
pub struct LocalDensityReport {
    pub kde: DensityEstimate,
    pub series: Option<SeriesAssembly>,
}

struct ExcursionWalk {
    sigma_count: usize,
    tau_count: usize,
    open: Option<usize>,
    contained: bool,
}

fn walk_excursions(
    track: &crate::simulate::PathTrack,
    cyl: &Cylinder,
    inner: &dyn Fn(&[f64]) -> bool,
) -> ExcursionWalk {
    let mut sigma_count = 0usize;
    let mut tau_count = 0usize;
    let mut open = false;
    let mut contained = true;
    for k in 0..track.n_times() {
        let xk = track.state(k);
        let in_inner = inner(xk);
        let in_base = cyl.contains(xk);
        if in_inner && !in_base {
            contained = false;
        }
        if !open {
            if in_inner {
                sigma_count += 1;
                open = true;
            }
        } else if !in_base {
            tau_count += 1;
            open = false;
        }
    }
    ExcursionWalk {
        sigma_count,
        tau_count,
        open: open.then_some(sigma_count),
        contained,
    }
}

/// Kernel-density estimate of the local transition density over endpoints in
/// the domain, with the first terms of the localization series assembled by
/// classifying each path by its open excursion index at the horizon.
#[allow(clippy::too_many_arguments)]
pub fn local_density_estimate(
    model: &ModelSpec,
    t: f64,
    x: &[f64],
    t_end: f64,
    grid: &[Vec<f64>],
    global_bw: f64,
    mc: &McConfig,
    series: Option<&SeriesSpec>,
) -> Result<LocalDensityReport, DensityError> {
    if grid.is_empty() {
        return Err(DensityError::EmptyGrid);
    }
    let cfg = SimConfig {
        t0: t,
        x0: x.to_vec(),
        t_end,
        dt: mc.dt,
        n_paths: mc.n_paths,
        seed: mc.seed,
    };
    struct PathOut {
        end: Vec<f64>,
        in_domain: bool,
        open: Option<usize>,
        sigma_count: usize,
        contained: bool,
    }
    let per_path = simulate_paths(model, &cfg, |_p, track| {
        let end = track.last().to_vec();
        let in_domain = model.in_domain(&end);
        match series {
            Some(sp) => {
                let walk = walk_excursions(track, &sp.cyl, sp.inner.as_ref());
                PathOut {
                    end,
                    in_domain,
                    open: walk.open,
                    sigma_count: walk.sigma_count,
                    contained: walk.contained,
                }
            }
            None => PathOut {
                end,
                in_domain,
                open: None,
                sigma_count: 0,
                contained: true,
            },
        }
    })?;
    if let Some(bad) = per_path.iter().position(|p| !p.contained) {
        return Err(SimulateError::InnerNotContained {
            path: bad,
            time: t_end,
        }
        .into());
    }
    let in_domain: Vec<Option<Vec<f64>>> = per_path
        .iter()
        .map(|p| p.in_domain.then(|| p.end.clone()))
        .collect();
    let kept: Vec<Vec<f64>> = in_domain.iter().flatten().cloned().collect();
    if kept.is_empty() {
        return Err(DensityError::NoSurvivors);
    }
    let bandwidths = kde_bandwidths(&kept, model.d, global_bw);
    let (values, std_errors) = kde_on_grid(grid, &in_domain, &bandwidths);
    let indicator: Vec<f64> = in_domain
        .iter()
        .map(|c| if c.is_some() { 1.0 } else { 0.0 })
        .collect();
    let (mass, mass_se) = mean_se(&indicator);
    let kde = DensityEstimate {
        grid: grid.to_vec(),
        values: values.clone(),
        std_errors,
        bandwidth: global_bw,
        bandwidths: bandwidths.clone(),
        n_effective: kept.len(),
        n_paths: mc.n_paths,
        elapsed: t_end - t,
        mass,
        mass_se,
    };
    let series_out = series.map(|sp| {
        let mut terms = Vec::with_capacity(sp.n_max);
        for n in 1..=sp.n_max {
            let term_pts: Vec<Option<Vec<f64>>> = per_path
                .iter()
                .map(|p| (p.open == Some(n)).then(|| p.end.clone()))
                .collect();
            let (tv, _) = kde_on_grid(grid, &term_pts, &bandwidths);
            terms.push(tv);
        }
        let partial: Vec<f64> = (0..grid.len())
            .map(|i| terms.iter().map(|t| t[i]).sum())
            .collect();
        let mut sup = 0.0_f64;
        for (i, node) in grid.iter().enumerate() {
            if (sp.inner)(node) {
                sup = sup.max((values[i] - partial[i]).abs());
            }
        }
        let sigma_probs: Vec<(f64, f64)> = (1..=sp.n_max)
            .map(|n| {
                let ind: Vec<f64> = per_path
                    .iter()
                    .map(|p| if p.sigma_count >= n { 1.0 } else { 0.0 })
                    .collect();
                mean_se(&ind)
            })
            .collect();
        SeriesAssembly {
            terms,
            partial,
            sup_discrepancy: sup,
            sigma_probs,
        }
    });
    Ok(LocalDensityReport {
        kde,
        series: series_out,
    })
}

/// Empirical hitting/exit probabilities of the localization recursion.
#[derive(Debug, Clone, Serialize)]
pub struct SeriesReport {
    /// `P(σ_n < T)` for `n = 1..n_max`; nonincreasing by construction.
    pub sigma_probs: Vec<(f64, f64)>,
    /// `P(τ_n < T)` for `n = 1..n_max`.
    pub tau_probs: Vec<(f64, f64)>,
    /// Sum of the sigma probabilities up to `n_max`.
    pub partial_sum: f64,
    /// Fit of `ln P(τ_n < T)` against `n`: geometric decay shows as a
    /// negative slope. `None` when fewer than two probabilities are resolved.
    pub ratio_fit: Option<LineFit>,
}

/// Estimates the hitting/exit probability sequence of the localization
/// recursion up to `n_max`.
#[allow(clippy::too_many_arguments)]
pub fn localization_series(
    model: &ModelSpec,
    cyl: &Cylinder,
    inner: Arc<RegionFn>,
    t: f64,
    x: &[f64],
    t_end: f64,
    n_max: usize,
    mc: &McConfig,
) -> Result<SeriesReport, DensityError> {
    let cfg = SimConfig {
        t0: t,
        x0: x.to_vec(),
        t_end,
        dt: mc.dt,
        n_paths: mc.n_paths,
        seed: mc.seed,
    };
    let walks = simulate_paths(model, &cfg, |_p, track| {
        let w = walk_excursions(track, cyl, inner.as_ref());
        (w.sigma_count, w.tau_count, w.contained)
    })?;
    if let Some(bad) = walks.iter().position(|w| !w.2) {
        return Err(SimulateError::InnerNotContained {
            path: bad,
            time: t_end,
        }
        .into());
    }
    let prob_of = |counts: &dyn Fn(&(usize, usize, bool)) -> usize, n: usize| {
        let ind: Vec<f64> = walks
            .iter()
            .map(|w| if counts(w) >= n { 1.0 } else { 0.0 })
            .collect();
        mean_se(&ind)
    };
    let sigma_probs: Vec<(f64, f64)> = (1..=n_max).map(|n| prob_of(&|w| w.0, n)).collect();
    let tau_probs: Vec<(f64, f64)> = (1..=n_max).map(|n| prob_of(&|w| w.1, n)).collect();
    let partial_sum = sigma_probs.iter().map(|p| p.0).sum();
    let resolved: Vec<(f64, f64)> = tau_probs
        .iter()
        .enumerate()
        .filter(|(_, p)| p.0 > 0.0)
        .map(|(i, p)| ((i + 1) as f64, p.0.ln()))
        .collect();
    let ratio_fit = if resolved.len() >= 2 {
        let xs: Vec<f64> = resolved.iter().map(|r| r.0).collect();
        let ys: Vec<f64> = resolved.iter().map(|r| r.1).collect();
        linear_fit(&xs, &ys)
    } else {
        None
    };
    Ok(SeriesReport {
        sigma_probs,
        tau_probs,
        partial_sum,
        ratio_fit,
    })
}

/// Exit-probability decay data and fit.
#[derive(Debug, Clone, Serialize)]
pub struct ExitDecayReport {
    /// Per elapsed time: `(elapsed, P(τ < T), se, used in fit)`.
    pub points: Vec<(f64, f64, f64, bool)>,
    /// Fit of `ln P` against `-1/(T-t)`: a positive slope is
    /// super-polynomial decay.
    pub fit: Option<LineFit>,
    /// Every probability was zero: decay too fast to resolve.
    pub all_zero: bool,
}

/// Estimates `P(τ < T)` over a grid of elapsed times and fits the
/// exponential decay rate in `-1/(T-t)`.
///
/// The fit window keeps points with at least 10 observed exits and below
/// probability 1/2; larger probabilities sit on the plateau where the
/// maximal bound saturates.
#[allow(clippy::too_many_arguments)]
pub fn exit_decay(
    model: &ModelSpec,
    cyl: &Cylinder,
    x: &[f64],
    t: f64,
    elapsed_grid: &[f64],
    steps_per_elapsed: usize,
    n_paths: usize,
    seed: u64,
) -> Result<ExitDecayReport, DensityError> {
    if !cyl.contains(x) {
        return Err(DensityError::StartOutsideBase);
    }
    let mut points = Vec::with_capacity(elapsed_grid.len());
    for (k, &elapsed) in elapsed_grid.iter().enumerate() {
        let cfg = SimConfig {
            t0: t,
            x0: x.to_vec(),
            t_end: t + elapsed,
            dt: elapsed / steps_per_elapsed as f64,
            n_paths,
            seed: seed.wrapping_add(k as u64),
        };
        let exits = simulate_paths(model, &cfg, |_p, track| {
            let exited = (0..track.n_times()).any(|j| !cyl.contains(track.state(j)));
            if exited {
                1.0
            } else {
                0.0
            }
        })?;
        let (p, se) = mean_se(&exits);
        let used = p > 10.0 / n_paths as f64 && p <= 0.5;
        points.push((elapsed, p, se, used));
    }
    let all_zero = points.iter().all(|p| p.1 == 0.0);
    let xs: Vec<f64> = points.iter().filter(|p| p.3).map(|p| -1.0 / p.0).collect();
    let ys: Vec<f64> = points.iter().filter(|p| p.3).map(|p| p.1.ln()).collect();
    let fit = if xs.len() >= 2 {
        linear_fit(&xs, &ys)
    } else {
        None
    };
    Ok(ExitDecayReport {
        points,
        fit,
        all_zero,
    })
}

/// How the semigroup function is computed at stencil nodes.
pub enum ResidualRoute<'a> {
    /// Tensor quadrature of the exact constant-coefficient kernel against
    /// the payoff; only available when the model is constant.
    ExactKernel,
    /// Common-random-number Monte Carlo: the same seed drives the paths
    /// from every stencil node, so the finite-difference combination is
    /// formed per path before averaging.
    MonteCarlo(&'a McConfig),
}

/// Finite-difference residual of the generator applied to
/// `u(t,x) = E[φ(X_T)]`.
#[derive(Debug, Clone, Serialize)]
pub struct BackwardResidual {
    pub residual: f64,
    /// Standard error of the per-path stencil combination (Monte Carlo
    /// route only).
    pub se: Option<f64>,
    pub h: f64,
}

/// Central finite-difference residual of `L u` at `(t, x)` for the payoff
/// `φ`, with the drift-time derivative discretized along the integral
/// curve. On the exact route `u` is a kernel integral; on the Monte Carlo
/// route `u` is estimated with common random numbers across stencil nodes
/// and the residual's standard error is reported alongside.
#[allow(clippy::too_many_arguments)]
pub fn backward_residual(
    model: &ModelSpec,
    phi: &(dyn Fn(&[f64]) -> f64 + Sync),
    t_end: f64,
    t: f64,
    x: &[f64],
    h: f64,
    route: ResidualRoute,
) -> Result<BackwardResidual, DensityError> {
    let elapsed = t_end - t;
    if h * h > 0.1 * elapsed {
        return Err(DensityError::StepTooLarge { h, elapsed });
    }
    let p0 = model.p0;
    let d = model.d;
    let mut a_diff = vec![0.0; p0 * p0];
    let mut a_drift = vec![0.0; p0];
    model.eval_diffusion(t, x, &mut a_diff);
    model.eval_drift(t, x, &mut a_drift);

    // Flow step for the drift-time derivative; on the Monte Carlo route it
    // snaps to a multiple of dt so horizons stay grid-aligned.
    let delta = match &route {
        ResidualRoute::ExactKernel => h,
        ResidualRoute::MonteCarlo(mc) => (h / mc.dt).round().max(1.0) * mc.dt,
    };

    // Stencil: (t_node, x_node, weight).
    let mut stencil: Vec<(f64, Vec<f64>, f64)> = Vec::new();
    let mut center_weight = 0.0;
    for i in 0..p0 {
        for j in i..p0 {
            let a = a_diff[i * p0 + j];
            let mult = if i == j { 1.0 } else { 2.0 };
            if a == 0.0 {
                continue;
            }
            if i == j {
                let w = 0.5 * a / (h * h);
                let mut xp = x.to_vec();
                xp[i] += h;
                stencil.push((t, xp, w));
                let mut xm = x.to_vec();
                xm[i] -= h;
                stencil.push((t, xm, w));
                center_weight -= 2.0 * w;
            } else {
                let w = 0.5 * mult * a / (4.0 * h * h) / 2.0;
                // Four-point cross stencil for the mixed derivative; the
                // factor mult/2 accounts for the symmetric (j,i) term.
                for (si, sj, sign) in [
                    (1.0, 1.0, 1.0),
                    (-1.0, -1.0, 1.0),
                    (1.0, -1.0, -1.0),
                    (-1.0, 1.0, -1.0),
                ] {
                    let mut xn = x.to_vec();
                    xn[i] += si * h;
                    xn[j] += sj * h;
                    stencil.push((t, xn, sign * w * 2.0));
                }
            }
        }
    }
    for i in 0..p0 {
        let a = a_drift[i];
        if a != 0.0 {
            let w = a / (2.0 * h);
            let mut xp = x.to_vec();
            xp[i] += h;
            stencil.push((t, xp, w));
            let mut xm = x.to_vec();
            xm[i] -= h;
            stencil.push((t, xm, -w));
        }
    }
    let fwd = crate::kernel::mat_exp(&model.drift_matrix.matrix, delta);
    let bwd = crate::kernel::mat_exp(&model.drift_matrix.matrix, -delta);
    let apply = |m: &nalgebra::DMatrix<f64>| -> Vec<f64> {
        (0..d)
            .map(|r| (0..d).map(|c| m[(r, c)] * x[c]).sum())
            .collect()
    };
    stencil.push((t + delta, apply(&fwd), 1.0 / (2.0 * delta)));
    stencil.push((t - delta, apply(&bwd), -1.0 / (2.0 * delta)));
    if center_weight != 0.0 {
        stencil.push((t, x.to_vec(), center_weight));
    }
    for (tn, xn, _) in &stencil {
        if !model.in_domain(xn) || *tn >= t_end {
            return Err(DensityError::StencilOutsideDomain);
        }
    }

    match route {
        ResidualRoute::ExactKernel => {
            let params = model
                .kernel_params()
                .ok_or(DensityError::ExactKernelUnavailable)?;
            let mut acc = 0.0;
            for (tn, xn, w) in &stencil {
                acc += w * semigroup_quadrature(&params, *tn, xn, t_end, phi)?;
            }
            Ok(BackwardResidual {
                residual: acc.abs(),
                se: None,
                h,
            })
        }
        ResidualRoute::MonteCarlo(mc) => {
            let mut combos = vec![0.0; mc.n_paths];
            for (tn, xn, w) in &stencil {
                let cfg = SimConfig {
                    t0: *tn,
                    x0: xn.clone(),
                    t_end,
                    dt: mc.dt,
                    n_paths: mc.n_paths,
                    seed: mc.seed,
                };
                let values = simulate_paths(model, &cfg, |_p, track| phi(track.last()))?;
                for (c, v) in combos.iter_mut().zip(&values) {
                    *c += w * v;
                }
            }
            let (mean, se) = mean_se(&combos);
            Ok(BackwardResidual {
                residual: mean.abs(),
                se: Some(se),
                h,
            })
        }
    }
}

/// `u(t,x) = ∫ Γ(t,x;T,ξ) φ(ξ) dξ` by tensor quadrature on the kernel frame.
fn semigroup_quadrature(
    params: &GaussianKernelParams,
    t: f64,
    x: &[f64],
    t_end: f64,
    phi: &(dyn Fn(&[f64]) -> f64 + Sync),
) -> Result<f64, DensityError> {
    let slice = KernelSlice::new(t_end - t, params)?;
    let frame = GaussianFrame::new(slice.mean(x), &slice.cov.matrix);
    let x_vec = x.to_vec();
    Ok(integrate_gaussian_frame(&frame, 8.0, 48, &|p| {
        slice.eval(&x_vec, p.as_slice()) * phi(p.as_slice())
    }))
}

/// Finite-difference residual of the adjoint operator applied to the exact
/// kernel in the forward variables; second order in `h`.
pub fn forward_residual(
    params: &GaussianKernelParams,
    t: f64,
    x: &[f64],
    t_end: f64,
    xi: &[f64],
    h: f64,
) -> Result<f64, DensityError> {
    Ok(pde_residual(t, x, t_end, xi, params, h)?.forward)
}
