//! Euler-Maruyama simulation with the degenerate diffusion block and the
//! exit/re-entry stopping-time machinery.
//!
//! One explicit step reads
//!
//! ```text
//! ΔX = [pad(a(t, X)) + B X] Δt + σ(t, X) ΔW,
//! ```
//!
//! where `σ` is the lower-triangular factor of the `p0 x p0` matrix `A`
//! embedded in the top-left block, so coordinates beyond `p0` receive no
//! noise increment at all. Once a path leaves the outer domain the
//! coefficients `a, A` are frozen at their last value inside it, while the
//! linear drift keeps acting; nothing is assumed about the model out there.
//!
//! Every path consumes its own counter-based RNG stream derived from
//! `(seed, path index)`, so ensembles are bitwise reproducible at any thread
//! count. Exit detection is grid-based: the recorded time is the first grid
//! point outside the region, which biases exits late by `O(sqrt(dt))`;
//! downstream tolerances absorb this.

mod models;

pub use models::{
    asian_model, builtin, builtin_models, deterministic_model, inline_constant_model,
    kolmogorov_2d, kolmogorov_2d_with_drift, kolmogorov_3d, perturbed_2d, ModelSpec,
};

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::parallel::map_indexed;

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("dt = {dt} too large for horizon span {span}: need dt <= span / 10")]
    StepTooLarge { dt: f64, span: f64 },
    #[error("horizon span {span} is not an integer multiple of dt = {dt}")]
    GridMismatch { span: f64, dt: f64 },
    #[error(
        "times must satisfy t0 < T <= model horizon, got t0 = {t0}, T = {t_end}, T0 = {horizon}"
    )]
    InvalidHorizon { t0: f64, t_end: f64, horizon: f64 },
    #[error(
        "diffusion matrix is not positive semi-definite inside the domain at t = {t}, x = {x:?}"
    )]
    NonSPDDiffusion { t: f64, x: Vec<f64> },
    #[error("path {path} starts outside the region")]
    StartOutsideRegion { path: usize },
    #[error("inner region is not contained in the cylinder base: path {path} at t = {time}")]
    InnerNotContained { path: usize, time: f64 },
    #[error(
        "coercivity violated at x = {x:?}: quadratic form {quad} outside [1/{bound}, {bound}]"
    )]
    CoercivityViolation { x: Vec<f64>, quad: f64, bound: f64 },
    #[error("diffusion matrix is asymmetric at x = {x:?}")]
    AsymmetricDiffusion { x: Vec<f64> },
    #[error("cylinder aperture must lie in (0, 1), got {0}")]
    BadAperture(f64),
    #[error("ensemble byte stream is malformed: {0}")]
    MalformedStream(String),
}

/// Simulation run parameters.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SimConfig {
    pub t0: f64,
    pub x0: Vec<f64>,
    pub t_end: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl SimConfig {
    fn validate(&self, model: &ModelSpec) -> Result<usize, SimulateError> {
        let span = self.t_end - self.t0;
        if span.is_nan() || span <= 0.0 || self.t_end > model.horizon + 1e-12 {
            return Err(SimulateError::InvalidHorizon {
                t0: self.t0,
                t_end: self.t_end,
                horizon: model.horizon,
            });
        }
        if self.dt > span / 10.0 {
            return Err(SimulateError::StepTooLarge { dt: self.dt, span });
        }
        let steps = (span / self.dt).round();
        if (steps * self.dt - span).abs() > 1e-9 * span.max(1.0) {
            return Err(SimulateError::GridMismatch { span, dt: self.dt });
        }
        Ok(steps as usize)
    }
}

/// One simulated trajectory on the shared time grid.
pub struct PathTrack<'a> {
    pub grid: &'a [f64],
    states: &'a [f64],
    pub d: usize,
    /// First grid time outside the model's outer domain, if any.
    pub outer_exit: Option<f64>,
}

impl PathTrack<'_> {
    pub fn n_times(&self) -> usize {
        self.grid.len()
    }

    pub fn state(&self, step: usize) -> &[f64] {
        &self.states[step * self.d..(step + 1) * self.d]
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.grid.len() - 1)
    }
}

/// Lower Cholesky factor of a small symmetric matrix, tolerant of positive
/// semi-definite inputs.
///
/// Returns an error when a pivot is genuinely negative or a zero pivot has
/// nonzero entries below it, which signals an indefinite matrix. When
/// `clamp` is set those defects are flattened to zero instead (used outside
/// the domain, where no coercivity is promised).
fn cholesky_psd(a: &[f64], p: usize, l: &mut [f64], clamp: bool) -> Result<(), ()> {
    let scale = (0..p)
        .map(|i| a[i * p + i].abs())
        .fold(0.0_f64, f64::max)
        .max(1e-300);
    let tol = 1e-12 * scale;
    for j in 0..p {
        let mut s = a[j * p + j];
        for k in 0..j {
            s -= l[j * p + k] * l[j * p + k];
        }
        if s < -tol && !clamp {
            return Err(());
        }
        let ljj = if s > tol { s.sqrt() } else { 0.0 };
        l[j * p + j] = ljj;
        for i in (j + 1)..p {
            let mut v = a[i * p + j];
            for k in 0..j {
                v -= l[i * p + k] * l[j * p + k];
            }
            if ljj > 0.0 {
                l[i * p + j] = v / ljj;
            } else if v.abs() <= tol.sqrt() * scale.sqrt() || clamp {
                l[i * p + j] = 0.0;
            } else {
                return Err(());
            }
        }
        for k in (j + 1)..p {
            l[j * p + k] = 0.0;
        }
    }
    Ok(())
}

struct PathState {
    x: Vec<f64>,
    a_drift: Vec<f64>,
    a_diff: Vec<f64>,
    sigma: Vec<f64>,
    noise: Vec<f64>,
    frozen: bool,
}

/// Simulates `n_paths` trajectories and maps each through `f`, in path order.
///
/// This is the streaming core: per-path state lives on the worker's stack,
/// so estimators over large ensembles never materialize the full state
/// array. [`PathEnsemble::generate`] is the materializing special case.
pub fn simulate_paths<T, F>(
    model: &ModelSpec,
    cfg: &SimConfig,
    f: F,
) -> Result<Vec<T>, SimulateError>
where
    T: Send,
    F: Fn(usize, &PathTrack) -> T + Sync + Send,
{
    let n_steps = cfg.validate(model)?;
    let d = model.d;
    let p0 = model.p0;
    assert_eq!(cfg.x0.len(), d, "start point dimension mismatch");
    let grid: Vec<f64> = (0..=n_steps).map(|k| cfg.t0 + k as f64 * cfg.dt).collect();
    let sqrt_dt = cfg.dt.sqrt();
    let b = &model.drift_matrix.matrix;

    let results: Vec<Result<T, SimulateError>> = map_indexed(cfg.n_paths, |path| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(path as u64);
        let mut st = PathState {
            x: cfg.x0.clone(),
            a_drift: vec![0.0; p0],
            a_diff: vec![0.0; p0 * p0],
            sigma: vec![0.0; p0 * p0],
            noise: vec![0.0; p0],
            frozen: false,
        };
        let mut states = vec![0.0; (n_steps + 1) * d];
        states[..d].copy_from_slice(&st.x);
        let mut outer_exit = None;
        if !model.in_outer_domain(&st.x) {
            outer_exit = Some(grid[0]);
        }
        // Coefficients start from the initial point even if it is already
        // outside the outer domain.
        model.eval_drift(grid[0], &st.x, &mut st.a_drift);
        model.eval_diffusion(grid[0], &st.x, &mut st.a_diff);
        let mut need_factor = true;
        for k in 0..n_steps {
            let t = grid[k];
            let inside_outer = model.in_outer_domain(&st.x);
            if !st.frozen {
                if inside_outer || k == 0 {
                    model.eval_drift(t, &st.x, &mut st.a_drift);
                    model.eval_diffusion(t, &st.x, &mut st.a_diff);
                    need_factor = true;
                }
                if !inside_outer {
                    st.frozen = true;
                }
            }
            if need_factor {
                let clamp = !model.in_domain(&st.x);
                if cholesky_psd(&st.a_diff, p0, &mut st.sigma, clamp).is_err() {
                    return Err(SimulateError::NonSPDDiffusion { t, x: st.x.clone() });
                }
                need_factor = false;
            }
            if !st.frozen {
                need_factor = true;
            }
            for z in st.noise.iter_mut() {
                *z = rng.sample::<f64, _>(StandardNormal) * sqrt_dt;
            }
            let xs = &mut states[(k + 1) * d..(k + 2) * d];
            for r in 0..d {
                let mut bx = 0.0;
                for c in 0..d {
                    bx += b[(r, c)] * st.x[c];
                }
                let mut dx = bx * cfg.dt;
                if r < p0 {
                    dx += st.a_drift[r] * cfg.dt;
                    for c in 0..=r {
                        dx += st.sigma[r * p0 + c] * st.noise[c];
                    }
                }
                xs[r] = st.x[r] + dx;
            }
            st.x.copy_from_slice(xs);
            if outer_exit.is_none() && !model.in_outer_domain(&st.x) {
                outer_exit = Some(grid[k + 1]);
            }
        }
        let track = PathTrack {
            grid: &grid,
            states: &states,
            d,
            outer_exit,
        };
        Ok(f(path, &track))
    });
    results.into_iter().collect()
}

/// A batch of simulated trajectories with its time grid.
pub struct PathEnsemble {
    pub t0: f64,
    pub dt: f64,
    pub seed: u64,
    pub d: usize,
    pub n_paths: usize,
    /// Number of grid points, including the start time.
    pub n_steps: usize,
    pub grid: Vec<f64>,
    /// Row-major `(path, step, coordinate)` state array.
    states: Vec<f64>,
    /// Per path, the first grid time outside the model's outer domain.
    pub outer_exit: Vec<Option<f64>>,
}

impl PathEnsemble {
    pub fn generate(model: &ModelSpec, cfg: &SimConfig) -> Result<Self, SimulateError> {
        let per_path = simulate_paths(model, cfg, |_p, track| {
            (track.states.to_vec(), track.outer_exit)
        })?;
        let n_steps = per_path
            .first()
            .map(|(s, _)| s.len() / model.d)
            .unwrap_or(0);
        let mut states = Vec::with_capacity(cfg.n_paths * n_steps * model.d);
        let mut outer_exit = Vec::with_capacity(cfg.n_paths);
        for (s, oe) in per_path {
            states.extend_from_slice(&s);
            outer_exit.push(oe);
        }
        Ok(PathEnsemble {
            t0: cfg.t0,
            dt: cfg.dt,
            seed: cfg.seed,
            d: model.d,
            n_paths: cfg.n_paths,
            n_steps,
            grid: (0..n_steps).map(|k| cfg.t0 + k as f64 * cfg.dt).collect(),
            states,
            outer_exit,
        })
    }

    pub fn state(&self, path: usize, step: usize) -> &[f64] {
        let base = (path * self.n_steps + step) * self.d;
        &self.states[base..base + self.d]
    }

    /// Flat binary layout: five little-endian 64-bit header fields
    /// `d, n_paths, n_steps, dt, seed`, then the row-major state array as
    /// little-endian doubles. The start time is not part of the layout.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&(self.d as u64).to_le_bytes())?;
        w.write_all(&(self.n_paths as u64).to_le_bytes())?;
        w.write_all(&(self.n_steps as u64).to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for v in &self.states {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads the flat binary layout back; the grid is reconstructed from
    /// `dt` with the given start time.
    pub fn read_binary<R: Read>(r: &mut R, t0: f64) -> Result<Self, SimulateError> {
        let mut u64buf = [0u8; 8];
        let mut read_u64 = |r: &mut R| -> Result<u64, SimulateError> {
            r.read_exact(&mut u64buf)
                .map_err(|e| SimulateError::MalformedStream(e.to_string()))?;
            Ok(u64::from_le_bytes(u64buf))
        };
        let d = read_u64(r)? as usize;
        let n_paths = read_u64(r)? as usize;
        let n_steps = read_u64(r)? as usize;
        let dt = f64::from_le_bytes({
            let mut b = [0u8; 8];
            r.read_exact(&mut b)
                .map_err(|e| SimulateError::MalformedStream(e.to_string()))?;
            b
        });
        let seed = read_u64(r)?;
        let count = d
            .checked_mul(n_paths)
            .and_then(|v| v.checked_mul(n_steps))
            .ok_or_else(|| SimulateError::MalformedStream("size overflow".into()))?;
        let mut states = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf)
                .map_err(|e| SimulateError::MalformedStream(e.to_string()))?;
            states.push(f64::from_le_bytes(buf));
        }
        Ok(PathEnsemble {
            t0,
            dt,
            seed,
            d,
            n_paths,
            n_steps,
            grid: (0..n_steps).map(|k| t0 + k as f64 * dt).collect(),
            states,
            outer_exit: vec![None; n_paths],
        })
    }

    /// CSV rows `path,step,t,x_1,...,x_d` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        write!(w, "path,step,t")?;
        for i in 1..=self.d {
            write!(w, ",x{i}")?;
        }
        writeln!(w)?;
        for p in 0..self.n_paths {
            for k in 0..self.n_steps {
                write!(w, "{p},{k},{:.16e}", self.grid[k])?;
                for v in self.state(p, k) {
                    write!(w, ",{v:.16e}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Space-time cylinder over the lens-shaped base
/// `S_ε(x0) = B_1(x0 - ε e_1) ∩ B_1(x0 + ε e_1)`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Cylinder {
    pub x0: Vec<f64>,
    pub eps: f64,
    pub t: f64,
    pub t_end: f64,
}

impl Cylinder {
    pub fn new(x0: Vec<f64>, eps: f64, t: f64, t_end: f64) -> Result<Self, SimulateError> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(SimulateError::BadAperture(eps));
        }
        Ok(Cylinder { x0, eps, t, t_end })
    }

    /// Membership in the base `S_ε(x0)`.
    pub fn contains(&self, y: &[f64]) -> bool {
        let mut minus = 0.0;
        let mut plus = 0.0;
        for (i, (&yi, &ci)) in y.iter().zip(&self.x0).enumerate() {
            let shift = if i == 0 { self.eps } else { 0.0 };
            let dm = yi - (ci - shift);
            let dp = yi - (ci + shift);
            minus += dm * dm;
            plus += dp * dp;
        }
        minus < 1.0 && plus < 1.0
    }

    /// Membership in the base shrunk by a factor of two about its center.
    pub fn contains_central_half(&self, y: &[f64]) -> bool {
        let doubled: Vec<f64> = y
            .iter()
            .zip(&self.x0)
            .map(|(&yi, &ci)| ci + 2.0 * (yi - ci))
            .collect();
        self.contains(&doubled)
    }

    /// Axis-aligned bounding box of the base.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.x0.len();
        let w1 = 1.0 - self.eps;
        let wk = (1.0 - self.eps * self.eps).sqrt();
        let lo = (0..d)
            .map(|i| self.x0[i] - if i == 0 { w1 } else { wk })
            .collect();
        let hi = (0..d)
            .map(|i| self.x0[i] + if i == 0 { w1 } else { wk })
            .collect();
        (lo, hi)
    }
}

/// First grid time at which each path leaves the region; `None` when it
/// never does within the horizon.
pub fn first_exit_time<R>(
    ensemble: &PathEnsemble,
    region: R,
) -> Result<Vec<Option<f64>>, SimulateError>
where
    R: Fn(&[f64]) -> bool,
{
    let mut out = Vec::with_capacity(ensemble.n_paths);
    for p in 0..ensemble.n_paths {
        if !region(ensemble.state(p, 0)) {
            return Err(SimulateError::StartOutsideRegion { path: p });
        }
        let mut exit = None;
        for k in 1..ensemble.n_steps {
            if !region(ensemble.state(p, k)) {
                exit = Some(ensemble.grid[k]);
                break;
            }
        }
        out.push(exit);
    }
    Ok(out)
}

/// Alternating hitting/exit times of one path.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PathStoppingTimes {
    /// Pairs `(σ_n, τ_n)`: the n-th hitting time of the inner region and the
    /// following exit time from the cylinder base, `None` if the horizon
    /// arrives first.
    pub excursions: Vec<(f64, Option<f64>)>,
    /// First grid time outside the model's outer domain.
    pub outer_exit: Option<f64>,
}

/// Stopping-time records of a whole ensemble.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StoppingRecord {
    pub per_path: Vec<PathStoppingTimes>,
}

/// Grid-resolved recursion of hitting times of `inner` and exit times from
/// the cylinder base: `σ_n` is the first time at or after `τ_{n-1}` in the
/// closure of the inner region, `τ_n` the first subsequent time outside the
/// base.
///
/// Fails with `InnerNotContained` when a path state certifies that the inner
/// region is not a subset of the base.
pub fn localization_times<V>(
    ensemble: &PathEnsemble,
    cyl: &Cylinder,
    inner: V,
) -> Result<StoppingRecord, SimulateError>
where
    V: Fn(&[f64]) -> bool,
{
    let mut per_path = Vec::with_capacity(ensemble.n_paths);
    for p in 0..ensemble.n_paths {
        let mut excursions: Vec<(f64, Option<f64>)> = Vec::new();
        let mut seeking_entry = true;
        for k in 0..ensemble.n_steps {
            let x = ensemble.state(p, k);
            let in_inner = inner(x);
            let in_base = cyl.contains(x);
            if in_inner && !in_base {
                return Err(SimulateError::InnerNotContained {
                    path: p,
                    time: ensemble.grid[k],
                });
            }
            if seeking_entry {
                if in_inner {
                    excursions.push((ensemble.grid[k], None));
                    seeking_entry = false;
                }
            } else if !in_base {
                excursions.last_mut().expect("open excursion").1 = Some(ensemble.grid[k]);
                seeking_entry = true;
            }
        }
        per_path.push(PathStoppingTimes {
            excursions,
            outer_exit: ensemble.outer_exit[p],
        });
    }
    Ok(StoppingRecord { per_path })
}
