//! Intrinsic differential calculus along the vector fields of the operator.
//!
//! The admissible derivatives of a function are the spatial derivatives in
//! the first `p0` coordinates and the Lie derivative along the drift flow
//! `δ -> (t + δ, e^{δB} x)`, which counts as a second-order operation. A jet
//! of such derivatives up to an anisotropic order defines the intrinsic
//! Taylor polynomial
//!
//! ```text
//! T(t,x) = Σ_{2k + [β] <= n}  1/(k! β!) (Y^k ∂^β f)(base) (t - t0)^k (x - e^{(t-t0)B} x0)^β,
//! ```
//!
//! whose remainder is of order `n + α` in the intrinsic distance for
//! functions in the anisotropic Hölder class `C^{n,α}`. The module provides
//! jet storage, polynomial evaluation, an empirical remainder-order fit and
//! sampled anisotropic Hölder seminorms.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::geometry::{
    admissible_pairs, factorial, intrinsic_distance, multi_index_height, BlockStructure,
    DriftMatrix, MultiIndex,
};
use crate::kernel::mat_exp;
use crate::stats::{halton, linear_fit};

/// Remainders below this threshold are treated as numerical zeros.
pub const REMAINDER_FLOOR: f64 = 1e-13;

#[derive(Debug, Error)]
pub enum CalculusError {
    #[error("jet is missing the admissible pair (k = {k}, β = {beta:?}) for order {order}")]
    IncompleteJet { k: u32, beta: Vec<u32>, order: u32 },
    #[error("jet contains the pair (k = {k}, β = {beta:?}) with 2k + [β] > order {order}")]
    InadmissiblePair { k: u32, beta: Vec<u32>, order: u32 },
    #[error("remainder fit needs at least 8 usable points, got {0}")]
    DegenerateCloud(usize),
    #[error("sampled cloud spans {decades:.2} decades of intrinsic distance, need at least 2")]
    InsufficientSpan { decades: f64 },
    #[error("region is empty or degenerate")]
    EmptyRegion,
}

type FieldFn = Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// A deterministic scalar field on space-time.
pub struct ScalarField {
    eval: FieldFn,
}

impl ScalarField {
    pub fn new(f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ScalarField { eval: Box::new(f) }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        (self.eval)(t, x)
    }
}

/// Derivative data of a function at a base point, up to an intrinsic order.
///
/// Entries map admissible pairs `(k, β)` with `2k + [β] <= order` to the
/// values `Y^k ∂^β f(base)`. The jet must contain every admissible pair
/// exactly once; [`JetSpec::validate`] checks completeness against the
/// enumeration of the admissible set.
pub struct JetSpec {
    pub base_t: f64,
    pub base_x: Vec<f64>,
    pub order: u32,
    pub alpha: f64,
    pub entries: BTreeMap<(u32, MultiIndex), f64>,
}

impl JetSpec {
    pub fn new(base_t: f64, base_x: Vec<f64>, order: u32, alpha: f64) -> Self {
        JetSpec {
            base_t,
            base_x,
            order,
            alpha,
            entries: BTreeMap::new(),
        }
    }

    /// Records the value of `Y^k ∂^β f` at the base point.
    pub fn insert(&mut self, k: u32, beta: MultiIndex, value: f64) -> &mut Self {
        self.entries.insert((k, beta), value);
        self
    }

    /// Checks that the jet holds exactly the admissible set for its order.
    pub fn validate(&self, s: &BlockStructure) -> Result<(), CalculusError> {
        for (k, beta) in admissible_pairs(self.order, s) {
            if !self.entries.contains_key(&(k, beta.clone())) {
                return Err(CalculusError::IncompleteJet {
                    k,
                    beta: beta.0,
                    order: self.order,
                });
            }
        }
        for (k, beta) in self.entries.keys() {
            let h = multi_index_height(beta, s).expect("jet multi-index length");
            if 2 * k + h > self.order {
                return Err(CalculusError::InadmissiblePair {
                    k: *k,
                    beta: beta.0.clone(),
                    order: self.order,
                });
            }
        }
        Ok(())
    }
}

/// Lie derivative of `f` along the drift flow by a central difference:
/// `(f(t+δ, e^{δB}x) - f(t-δ, e^{-δB}x)) / (2δ)`; second order in `δ`.
pub fn lie_derivative(f: &ScalarField, t: f64, x: &[f64], b: &DriftMatrix, delta: f64) -> f64 {
    assert!(delta > 0.0, "step must be positive");
    let d = b.dim();
    let fwd = mat_exp(&b.matrix, delta);
    let bwd = mat_exp(&b.matrix, -delta);
    let apply = |m: &nalgebra::DMatrix<f64>| -> Vec<f64> {
        (0..d)
            .map(|r| (0..d).map(|c| m[(r, c)] * x[c]).sum())
            .collect()
    };
    (f.eval(t + delta, &apply(&fwd)) - f.eval(t - delta, &apply(&bwd))) / (2.0 * delta)
}

/// Evaluates the intrinsic Taylor polynomial of a jet at `(t, x)`.
pub fn taylor_eval(
    jet: &JetSpec,
    t: f64,
    x: &[f64],
    b: &DriftMatrix,
    s: &BlockStructure,
) -> Result<f64, CalculusError> {
    jet.validate(s)?;
    let dt = t - jet.base_t;
    let flow = mat_exp(&b.matrix, dt);
    let d = s.d;
    let mut z = vec![0.0; d];
    for r in 0..d {
        let mut acc = 0.0;
        for c in 0..d {
            acc += flow[(r, c)] * jet.base_x[c];
        }
        z[r] = x[r] - acc;
    }
    let mut total = 0.0;
    for ((k, beta), value) in &jet.entries {
        let coeff = value / (factorial(*k) * beta.factorial());
        total += coeff * dt.powi(*k as i32) * beta.monomial(&z);
    }
    Ok(total)
}

/// Outcome of the remainder-order fit.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub enum RemainderFit {
    /// Least-squares slope of `log |f - T|` against the log intrinsic
    /// distance, with the number of points used.
    Slope { slope: f64, n_used: usize },
    /// Every remainder on the cloud was a numerical zero: the polynomial
    /// reproduces the function exactly.
    ExactReproduction,
}

/// Fits the decay order of the Taylor remainder on a cloud of points.
///
/// Points whose remainder is below [`REMAINDER_FLOOR`] are excluded before
/// fitting. For a function of class `C^{n,α}` the slope is at least
/// `n + α` up to sampling effects.
pub fn remainder_order_fit(
    f: &ScalarField,
    jet: &JetSpec,
    cloud: &[(f64, Vec<f64>)],
    b: &DriftMatrix,
    s: &BlockStructure,
) -> Result<RemainderFit, CalculusError> {
    let mut log_dist = Vec::new();
    let mut log_rem = Vec::new();
    for (t, x) in cloud {
        let rem = (f.eval(*t, x) - taylor_eval(jet, *t, x, b, s)?).abs();
        if rem < REMAINDER_FLOOR {
            continue;
        }
        let dist = intrinsic_distance(jet.base_t, &jet.base_x, *t, x, b, s);
        if dist <= 0.0 {
            continue;
        }
        log_dist.push(dist.ln());
        log_rem.push(rem.ln());
    }
    if log_dist.is_empty() {
        return Ok(RemainderFit::ExactReproduction);
    }
    if log_dist.len() < 8 {
        return Err(CalculusError::DegenerateCloud(log_dist.len()));
    }
    let span = (log_dist.iter().cloned().fold(f64::MIN, f64::max)
        - log_dist.iter().cloned().fold(f64::MAX, f64::min))
        / std::f64::consts::LN_10;
    if span < 2.0 {
        return Err(CalculusError::InsufficientSpan { decades: span });
    }
    let fit = linear_fit(&log_dist, &log_rem).ok_or(CalculusError::DegenerateCloud(0))?;
    Ok(RemainderFit::Slope {
        slope: fit.slope,
        n_used: log_dist.len(),
    })
}

/// Cloud of space-time points reaching the base along anisotropic dilations.
///
/// For each scale `λ` on a geometric grid, the point is
/// `(t0 + λ² τ, e^{(λ²τ)B} x0 + D(λ) w)` with `(τ, w)` from a fixed
/// low-discrepancy sequence, so intrinsic distances to the base are
/// proportional to `λ`.
pub fn dilation_cloud(
    base_t: f64,
    base_x: &[f64],
    lambda_min: f64,
    lambda_max: f64,
    n_points: usize,
    b: &DriftMatrix,
    s: &BlockStructure,
) -> Vec<(f64, Vec<f64>)> {
    assert!(lambda_min > 0.0 && lambda_max > lambda_min);
    let d = s.d;
    let ratio = lambda_max / lambda_min;
    let mut cloud = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let u = halton(i as u64, d + 2);
        let lambda = lambda_min * ratio.powf(i as f64 / (n_points - 1).max(1) as f64);
        let tau = 2.0 * u[0] - 1.0;
        let t = base_t + lambda * lambda * tau;
        let flow = mat_exp(&b.matrix, t - base_t);
        let mut x = vec![0.0; d];
        for r in 0..d {
            let mut acc = 0.0;
            for c in 0..d {
                acc += flow[(r, c)] * base_x[c];
            }
            // Unit-box offset scaled by the dilation exponent of coordinate r.
            let w = 2.0 * u[r + 2] - 1.0;
            x[r] = acc + lambda.powi(s.exponent_of(r) as i32) * w;
        }
        cloud.push((t, x));
    }
    cloud
}

/// Direction of a sampled Hölder seminorm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Straight line along coordinate `i` (must satisfy `i < p0`).
    Axis(usize),
    /// The drift flow `δ -> (t + δ, e^{δB} x)`; increments are measured
    /// against `|δ|^{α/2}`.
    Flow,
}

/// Axis-aligned box in space-time.
#[derive(Debug, Clone)]
pub struct SpaceTimeBox {
    pub t_min: f64,
    pub t_max: f64,
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
}

impl SpaceTimeBox {
    pub fn contains(&self, t: f64, x: &[f64]) -> bool {
        t >= self.t_min
            && t <= self.t_max
            && x.iter()
                .zip(self.x_min.iter().zip(&self.x_max))
                .all(|(&xi, (&lo, &hi))| xi >= lo && xi <= hi)
    }

    fn is_empty(&self) -> bool {
        self.t_min >= self.t_max
            || self
                .x_min
                .iter()
                .zip(&self.x_max)
                .any(|(&lo, &hi)| lo >= hi)
    }

    /// Low-discrepancy point inside the box.
    fn sample(&self, index: u64) -> (f64, Vec<f64>) {
        let d = self.x_min.len();
        let u = halton(index, d + 1);
        let t = self.t_min + u[0] * (self.t_max - self.t_min);
        let x = (0..d)
            .map(|i| self.x_min[i] + u[i + 1] * (self.x_max[i] - self.x_min[i]))
            .collect();
        (t, x)
    }
}

/// Largest flow step keeping all integral curves from `v` inside `q`.
///
/// The step is searched on a geometric grid of 64 candidates in `(0, 1]`,
/// checking both endpoints `±δ` of every admissible curve from a
/// low-discrepancy sample of `v`.
pub fn curve_step_bound(
    v: &SpaceTimeBox,
    q: &SpaceTimeBox,
    b: &DriftMatrix,
    p0: usize,
    n_samples: usize,
) -> Result<f64, CalculusError> {
    if v.is_empty() {
        return Err(CalculusError::EmptyRegion);
    }
    let d = b.dim();
    let candidates: Vec<f64> = (0..64)
        .map(|i| 1e-4_f64 * (1.0_f64 / 1e-4).powf(i as f64 / 63.0))
        .collect();
    let mut bound: f64 = 0.0;
    'cand: for &delta in candidates.iter().rev() {
        let fwd = mat_exp(&b.matrix, delta);
        let bwd = mat_exp(&b.matrix, -delta);
        for idx in 0..n_samples {
            let (t, x) = v.sample(idx as u64);
            for i in 0..p0 {
                for sign in [-1.0, 1.0] {
                    let mut xs = x.clone();
                    xs[i] += sign * delta;
                    if !q.contains(t, &xs) {
                        continue 'cand;
                    }
                }
            }
            for (flow, sign) in [(&fwd, 1.0), (&bwd, -1.0)] {
                let moved: Vec<f64> = (0..d)
                    .map(|r| (0..d).map(|c| flow[(r, c)] * x[c]).sum())
                    .collect();
                if !q.contains(t + sign * delta, &moved) {
                    continue 'cand;
                }
            }
        }
        bound = delta;
        break;
    }
    if bound == 0.0 {
        return Err(CalculusError::EmptyRegion);
    }
    Ok(bound)
}

/// Sampled Hölder seminorm of `f` in one direction over the region `v ⊂ q`.
///
/// The supremum runs over a deterministic low-discrepancy set of at least
/// `n_samples` point/step pairs, with steps `0 < |δ| < δ_v` where `δ_v` comes
/// from [`curve_step_bound`]. Spatial increments are measured against
/// `|δ|^α`, flow increments against `|δ|^{α/2}`.
#[allow(clippy::too_many_arguments)]
pub fn holder_seminorm(
    f: &ScalarField,
    direction: Direction,
    alpha: f64,
    v: &SpaceTimeBox,
    q: &SpaceTimeBox,
    b: &DriftMatrix,
    p0: usize,
    n_samples: usize,
) -> Result<f64, CalculusError> {
    let delta_v = curve_step_bound(v, q, b, p0, 128)?;
    let samples: Vec<(f64, Vec<f64>, f64)> = (0..n_samples.max(10_000))
        .map(|i| {
            let (t, x) = v.sample(i as u64);
            // Log-spaced |δ| in (δ_v/1e3, δ_v), alternating sign.
            let u = halton(i as u64, 7)[6];
            let mag = delta_v * 1e-3_f64.powf(u);
            let delta = if i % 2 == 0 { mag } else { -mag };
            (t, x, delta)
        })
        .collect();
    holder_seminorm_on_samples(f, direction, alpha, &samples, b)
}

/// Seminorm supremum over an explicit set of `(t, x, δ)` samples.
///
/// Exposed so that nested regions can be compared on the identical sample
/// set filtered by membership.
pub fn holder_seminorm_on_samples(
    f: &ScalarField,
    direction: Direction,
    alpha: f64,
    samples: &[(f64, Vec<f64>, f64)],
    b: &DriftMatrix,
) -> Result<f64, CalculusError> {
    assert!((0.0..=1.0).contains(&alpha) && alpha > 0.0);
    if samples.is_empty() {
        return Err(CalculusError::EmptyRegion);
    }
    let d = b.dim();
    let mut sup: f64 = 0.0;
    for (t, x, delta) in samples {
        let base = f.eval(*t, x);
        let quotient = match direction {
            Direction::Axis(i) => {
                let mut xs = x.clone();
                xs[i] += delta;
                (f.eval(*t, &xs) - base).abs() / delta.abs().powf(alpha)
            }
            Direction::Flow => {
                let flow = mat_exp(&b.matrix, *delta);
                let moved: Vec<f64> = (0..d)
                    .map(|r| (0..d).map(|c| flow[(r, c)] * x[c]).sum())
                    .collect();
                (f.eval(t + delta, &moved) - base).abs() / delta.abs().powf(alpha / 2.0)
            }
        };
        sup = sup.max(quotient);
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::chain_drift_2d;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn asian() -> (DriftMatrix, BlockStructure) {
        (chain_drift_2d(), BlockStructure::new(&[1, 1]).unwrap())
    }

    /// Full jet of `f(t,x) = x_2` at `(s, y)` for order 2 on the 2d chain.
    fn jet_x2(base_t: f64, y: [f64; 2]) -> JetSpec {
        let mut jet = JetSpec::new(base_t, y.to_vec(), 2, 1.0);
        jet.insert(0, MultiIndex(vec![0, 0]), y[1]);
        jet.insert(0, MultiIndex(vec![1, 0]), 0.0);
        jet.insert(0, MultiIndex(vec![2, 0]), 0.0);
        // Y x_2 = (Bx)_2 = x_1.
        jet.insert(1, MultiIndex(vec![0, 0]), y[0]);
        jet
    }

    #[test]
    fn lie_derivative_examples() {
        let (b, _) = asian();
        let constant = ScalarField::new(|_, _| 4.2);
        assert_abs_diff_eq!(
            lie_derivative(&constant, 0.3, &[1.0, 2.0], &b, 1e-4),
            0.0,
            epsilon = 1e-12
        );
        let x2 = ScalarField::new(|_, x| x[1]);
        assert_relative_eq!(
            lie_derivative(&x2, 0.0, &[1.5, -0.3], &b, 1e-4),
            1.5,
            max_relative = 1e-9
        );
        let time = ScalarField::new(|t, _| t);
        assert_relative_eq!(
            lie_derivative(&time, 0.7, &[1.0, 1.0], &b, 1e-4),
            1.0,
            max_relative = 1e-10
        );
    }

    #[test]
    fn lie_derivative_richardson_ratio() {
        let (b, _) = asian();
        let f = ScalarField::new(|t, x| (t + x[0]).sin() * x[1].cosh());
        let exact_at = |delta: f64| lie_derivative(&f, 0.2, &[0.4, 0.3], &b, delta);
        // Extrapolate the limit from the two finest steps, then compare errors.
        let d1 = exact_at(1e-2);
        let d2 = exact_at(5e-3);
        let d4 = exact_at(2.5e-3);
        let limit = d4 + (d4 - d2) / 3.0;
        let ratio = (d1 - limit).abs() / (d2 - limit).abs();
        assert!((3.4..=4.6).contains(&ratio), "ratio = {ratio}");
    }

    #[test]
    fn taylor_order_zero_is_constant() {
        let (b, s) = asian();
        let mut jet = JetSpec::new(0.0, vec![1.0, 2.0], 0, 1.0);
        jet.insert(0, MultiIndex(vec![0, 0]), 7.25);
        for (t, x) in [(0.5, [3.0, -1.0]), (-0.2, [0.0, 0.0])] {
            assert_eq!(taylor_eval(&jet, t, &x, &b, &s).unwrap(), 7.25);
        }
    }

    #[test]
    fn taylor_reproduces_first_coordinate_exactly() {
        let (b, s) = asian();
        // f = x_1: ∂_1 f = 1, everything else zero.
        let mut jet = JetSpec::new(0.1, vec![0.7, -0.4], 2, 1.0);
        jet.insert(0, MultiIndex(vec![0, 0]), 0.7);
        jet.insert(0, MultiIndex(vec![1, 0]), 1.0);
        jet.insert(0, MultiIndex(vec![2, 0]), 0.0);
        jet.insert(1, MultiIndex(vec![0, 0]), 0.0);
        for (t, x) in [(0.5, [3.0, -1.0]), (0.05, [-2.0, 0.3])] {
            assert_relative_eq!(
                taylor_eval(&jet, t, &x, &b, &s).unwrap(),
                x[0],
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn taylor_for_x2_matches_algebra() {
        let (b, s) = asian();
        let y = [1.3, -0.2];
        let base_t = 0.2;
        let jet = jet_x2(base_t, y);
        let (t, x) = (0.7, [2.0, 1.0]);
        // T(t,x) = y2 + (t-s) y1 and the remainder is the transported x2 gap.
        let expected = y[1] + (t - base_t) * y[0];
        let value = taylor_eval(&jet, t, &x, &b, &s).unwrap();
        assert_relative_eq!(value, expected, max_relative = 1e-14);
        let remainder = x[1] - value;
        let z2 = x[1] - (y[1] + (t - base_t) * y[0]);
        assert_relative_eq!(remainder, z2, max_relative = 1e-14);
    }

    #[test]
    fn taylor_at_base_returns_base_value() {
        let (b, s) = asian();
        let jet = jet_x2(0.4, [2.0, 5.0]);
        assert_eq!(taylor_eval(&jet, 0.4, &[2.0, 5.0], &b, &s).unwrap(), 5.0);
    }

    #[test]
    fn incomplete_jet_is_rejected() {
        let (b, s) = asian();
        let mut jet = JetSpec::new(0.0, vec![0.0, 0.0], 2, 1.0);
        jet.insert(0, MultiIndex(vec![0, 0]), 1.0);
        assert!(matches!(
            taylor_eval(&jet, 0.1, &[0.0, 0.0], &b, &s),
            Err(CalculusError::IncompleteJet { .. })
        ));
        // Height 3 > order 2 is inadmissible.
        let mut jet = jet_x2(0.0, [0.0, 0.0]);
        jet.insert(0, MultiIndex(vec![0, 1]), 1.0);
        assert!(matches!(
            taylor_eval(&jet, 0.1, &[0.0, 0.0], &b, &s),
            Err(CalculusError::InadmissiblePair { .. })
        ));
    }

    #[test]
    fn remainder_slope_for_x2_is_cubic() {
        let (b, s) = asian();
        let f = ScalarField::new(|_, x| x[1]);
        let jet = jet_x2(0.5, [1.0, 0.0]);
        let cloud = dilation_cloud(0.5, &[1.0, 0.0], 1e-2, 1.0, 64, &b, &s);
        match remainder_order_fit(&f, &jet, &cloud, &b, &s).unwrap() {
            RemainderFit::Slope { slope, n_used } => {
                assert!(n_used >= 8);
                assert!(slope >= 2.85, "slope = {slope}");
                assert!((2.5..=3.5).contains(&slope), "slope = {slope}");
            }
            RemainderFit::ExactReproduction => panic!("expected nonzero remainders"),
        }
    }

    #[test]
    fn remainder_slope_for_sine() {
        let (b, s) = asian();
        let f = ScalarField::new(|_, x| x[0].sin());
        let mut jet = JetSpec::new(0.0, vec![0.0, 0.0], 2, 1.0);
        jet.insert(0, MultiIndex(vec![0, 0]), 0.0);
        jet.insert(0, MultiIndex(vec![1, 0]), 1.0);
        jet.insert(0, MultiIndex(vec![2, 0]), 0.0);
        jet.insert(1, MultiIndex(vec![0, 0]), 0.0);
        let cloud = dilation_cloud(0.0, &[0.0, 0.0], 1e-2, 1.0, 64, &b, &s);
        match remainder_order_fit(&f, &jet, &cloud, &b, &s).unwrap() {
            RemainderFit::Slope { slope, .. } => {
                assert!(slope >= 2.85, "slope = {slope}");
            }
            RemainderFit::ExactReproduction => panic!("sin is not a polynomial"),
        }
    }

    #[test]
    fn exact_polynomial_reports_reproduction() {
        let (b, s) = asian();
        let f = ScalarField::new(|_, x| x[0]);
        let mut jet = JetSpec::new(0.0, vec![0.3, 0.1], 2, 1.0);
        jet.insert(0, MultiIndex(vec![0, 0]), 0.3);
        jet.insert(0, MultiIndex(vec![1, 0]), 1.0);
        jet.insert(0, MultiIndex(vec![2, 0]), 0.0);
        jet.insert(1, MultiIndex(vec![0, 0]), 0.0);
        let cloud = dilation_cloud(0.0, &[0.3, 0.1], 1e-2, 1.0, 32, &b, &s);
        assert!(matches!(
            remainder_order_fit(&f, &jet, &cloud, &b, &s).unwrap(),
            RemainderFit::ExactReproduction
        ));
    }

    #[test]
    fn holder_seminorm_examples() {
        let (b, _) = asian();
        let v = SpaceTimeBox {
            t_min: 0.1,
            t_max: 0.4,
            x_min: vec![-0.3, -0.3],
            x_max: vec![0.3, 0.3],
        };
        let q = SpaceTimeBox {
            t_min: 0.0,
            t_max: 1.0,
            x_min: vec![-2.0, -2.0],
            x_max: vec![2.0, 2.0],
        };
        let constant = ScalarField::new(|_, _| 1.0);
        assert_eq!(
            holder_seminorm(&constant, Direction::Axis(0), 1.0, &v, &q, &b, 1, 10_000).unwrap(),
            0.0
        );
        let x1 = ScalarField::new(|_, x| x[0]);
        let norm = holder_seminorm(&x1, Direction::Axis(0), 1.0, &v, &q, &b, 1, 10_000).unwrap();
        assert_relative_eq!(norm, 1.0, max_relative = 1e-12);
        let x2 = ScalarField::new(|_, x| x[1]);
        assert_eq!(
            holder_seminorm(&x2, Direction::Axis(0), 1.0, &v, &q, &b, 1, 10_000).unwrap(),
            0.0
        );
    }

    #[test]
    fn holder_seminorm_monotone_in_region() {
        let (b, _) = asian();
        let f = ScalarField::new(|t, x| (3.0 * x[0]).sin() * (t + x[1] * x[1]).cos());
        let v2 = SpaceTimeBox {
            t_min: 0.1,
            t_max: 0.5,
            x_min: vec![-0.5, -0.5],
            x_max: vec![0.5, 0.5],
        };
        let v1 = SpaceTimeBox {
            t_min: 0.2,
            t_max: 0.3,
            x_min: vec![-0.2, -0.2],
            x_max: vec![0.2, 0.2],
        };
        // Identical sample filtration: draw from the outer region, restrict.
        let samples: Vec<(f64, Vec<f64>, f64)> = (0..20_000u64)
            .map(|i| {
                let (t, x) = v2.sample(i);
                let u = halton(i, 7)[6];
                let mag = 0.3 * 1e-3_f64.powf(u);
                (t, x, if i % 2 == 0 { mag } else { -mag })
            })
            .collect();
        let inner: Vec<_> = samples
            .iter()
            .filter(|(t, x, _)| v1.contains(*t, x))
            .cloned()
            .collect();
        assert!(!inner.is_empty());
        let s2 = holder_seminorm_on_samples(&f, Direction::Flow, 1.0, &samples, &b).unwrap();
        let s1 = holder_seminorm_on_samples(&f, Direction::Flow, 1.0, &inner, &b).unwrap();
        assert!(s1 <= s2, "inner {s1} > outer {s2}");
    }

    #[test]
    fn empty_region_is_rejected() {
        let (b, _) = asian();
        let v = SpaceTimeBox {
            t_min: 0.5,
            t_max: 0.5,
            x_min: vec![0.0, 0.0],
            x_max: vec![0.0, 0.0],
        };
        let f = ScalarField::new(|_, _| 0.0);
        assert!(matches!(
            holder_seminorm(&f, Direction::Axis(0), 1.0, &v, &v, &b, 1, 100),
            Err(CalculusError::EmptyRegion)
        ));
    }

    #[test]
    fn polynomial_exactness_for_admissible_monomials() {
        // f(t,x) = t x_1 on the 2d chain: Yf = x_1, Y ∂_1 f = 1, the rest 0.
        let (b, s) = asian();
        let f = ScalarField::new(|t, x| t * x[0]);
        let base = (0.3, [0.8, -0.5]);
        let mut jet = JetSpec::new(base.0, base.1.to_vec(), 3, 1.0);
        for (k, beta) in admissible_pairs(3, &s) {
            let value = match (k, beta.0.as_slice()) {
                (0, [0, 0]) => base.0 * base.1[0],
                (0, [1, 0]) => base.0,
                (1, [0, 0]) => base.1[0],
                (1, [1, 0]) => 1.0,
                _ => 0.0,
            };
            jet.insert(k, beta, value);
        }
        let cloud = dilation_cloud(base.0, &base.1, 1e-2, 1.0, 40, &b, &s);
        for (t, x) in &cloud {
            let rem = (f.eval(*t, x) - taylor_eval(&jet, *t, x, &b, &s).unwrap()).abs();
            assert!(rem <= 1e-12, "remainder {rem} at ({t}, {x:?})");
        }
    }
}
