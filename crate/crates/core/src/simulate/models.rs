//! Model specifications and the built-in catalogue.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::geometry::{chain_drift_2d, chain_drift_3d, BlockStructure, DriftMatrix};
use crate::kernel::GaussianKernelParams;
use crate::stats::halton;

use super::SimulateError;

type CoeffFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
type RegionFn = dyn Fn(&[f64]) -> bool + Send + Sync;
type DistFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Full specification of a local diffusion.
///
/// The diffusion callback fills the symmetric `p0 x p0` matrix
/// `A(t,x) = (a_ij)` in row-major order; the drift callback fills the `p0`
/// coefficients `a_i`. The full drift of the process is the padded `a` plus
/// `B x`, and the noise enters only the first `p0` coordinates through the
/// lower-triangular factor of `A`.
///
/// Coercivity with constant `coercivity` (`M`) and symmetry of `A` are
/// promised on `domain` only; nothing is assumed outside. Paths of the
/// associated process may leave and re-enter; the simulation freezes the
/// coefficients at their last value inside `outer_domain`.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub p0: usize,
    pub d: usize,
    pub drift_matrix: DriftMatrix,
    pub structure: BlockStructure,
    pub diffusion: Arc<CoeffFn>,
    pub drift: Arc<CoeffFn>,
    pub domain: Arc<RegionFn>,
    pub outer_domain: Arc<RegionFn>,
    /// Terminal horizon `T0`.
    pub horizon: f64,
    /// Two-sided coercivity constant `M`.
    pub coercivity: f64,
    /// Hölder exponent of the coefficients.
    pub alpha: f64,
    /// Intrinsic regularity order `N`.
    pub order: usize,
    /// `Some(M)` when `A = M I` and the first-order coefficients vanish, in
    /// which case the exact Gaussian kernel is available.
    pub constant_diffusion: Option<f64>,
    /// Euclidean distance to the boundary of `domain`, when it has a simple
    /// closed form; used to pick indicator cutoffs.
    pub boundary_distance: Option<Arc<DistFn>>,
}

impl ModelSpec {
    pub fn in_domain(&self, x: &[f64]) -> bool {
        (self.domain)(x)
    }

    pub fn in_outer_domain(&self, x: &[f64]) -> bool {
        (self.outer_domain)(x)
    }

    /// Exact kernel parameters for constant-coefficient models.
    pub fn kernel_params(&self) -> Option<GaussianKernelParams> {
        let m = self.constant_diffusion?;
        GaussianKernelParams::new(self.drift_matrix.clone(), m, self.structure.clone()).ok()
    }

    /// Evaluates `a_i(t, x)` into a `p0` buffer.
    pub fn eval_drift(&self, t: f64, x: &[f64], buf: &mut [f64]) {
        (self.drift)(t, x, buf);
    }

    /// Evaluates `A(t, x)` into a row-major `p0 x p0` buffer.
    pub fn eval_diffusion(&self, t: f64, x: &[f64], buf: &mut [f64]) {
        (self.diffusion)(t, x, buf);
    }

    /// Samples the coercivity condition and the symmetry of `A` on points of
    /// a box intersected with the domain.
    pub fn check_coercivity(
        &self,
        t: f64,
        lo: &[f64],
        hi: &[f64],
        n_points: usize,
        n_dirs: usize,
    ) -> Result<(), SimulateError> {
        let p0 = self.p0;
        let mut a = vec![0.0; p0 * p0];
        let mut checked = 0usize;
        for i in 0..(n_points * 8) {
            if checked >= n_points {
                break;
            }
            let u = halton(i as u64, self.d);
            let x: Vec<f64> = (0..self.d)
                .map(|k| lo[k] + u[k] * (hi[k] - lo[k]))
                .collect();
            if !self.in_domain(&x) {
                continue;
            }
            checked += 1;
            self.eval_diffusion(t, &x, &mut a);
            let scale = a.iter().fold(1e-300_f64, |m, v| m.max(v.abs()));
            for r in 0..p0 {
                for c in (r + 1)..p0 {
                    if (a[r * p0 + c] - a[c * p0 + r]).abs() > 1e-12 * scale {
                        return Err(SimulateError::AsymmetricDiffusion { x });
                    }
                }
            }
            for k in 0..n_dirs {
                let v = halton((i * n_dirs + k) as u64 + 7919, p0);
                let xi: Vec<f64> = v.iter().map(|&u| 2.0 * u - 1.0).collect();
                let norm2: f64 = xi.iter().map(|z| z * z).sum();
                if norm2 < 1e-12 {
                    continue;
                }
                let mut quad = 0.0;
                for r in 0..p0 {
                    for c in 0..p0 {
                        quad += a[r * p0 + c] * xi[r] * xi[c];
                    }
                }
                let slack = 1e-9 * norm2;
                if quad < norm2 / self.coercivity - slack || quad > self.coercivity * norm2 + slack
                {
                    return Err(SimulateError::CoercivityViolation {
                        x,
                        quad: quad / norm2,
                        bound: self.coercivity,
                    });
                }
            }
        }
        Ok(())
    }
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("p0", &self.p0)
            .field("d", &self.d)
            .field("horizon", &self.horizon)
            .field("coercivity", &self.coercivity)
            .finish()
    }
}

/// Geometric-average prototype: `dX1 = X1 dW`, `dX2 = X1 dt`.
///
/// Here `a_11 = x_1^2`, which degenerates at zero, so the domain is the
/// half-plane `x_1 > floor`. The coercivity constant covers `x_1` up to 10.
pub fn asian_model(floor: f64) -> ModelSpec {
    assert!(floor > 0.0, "domain floor must be positive");
    let outer_floor = 0.5 * floor;
    ModelSpec {
        name: "asian".into(),
        p0: 1,
        d: 2,
        drift_matrix: chain_drift_2d(),
        structure: BlockStructure::new(&[1, 1]).unwrap(),
        diffusion: Arc::new(|_t, x, a| {
            a[0] = x[0] * x[0];
        }),
        drift: Arc::new(|_t, _x, a| {
            a[0] = 0.0;
        }),
        domain: Arc::new(move |x| x[0] > floor),
        outer_domain: Arc::new(move |x| x[0] > outer_floor),
        horizon: 1.0,
        coercivity: (1.0 / (floor * floor)).max(100.0),
        alpha: 1.0,
        order: 2,
        constant_diffusion: None,
        boundary_distance: Some(Arc::new(move |x| x[0] - floor)),
    }
}

/// Constant-coefficient model on the 2d chain: unit diffusion, no lower-order
/// drift, whole space as domain.
pub fn kolmogorov_2d() -> ModelSpec {
    constant_chain_model("kolmogorov-2d", chain_drift_2d(), &[1, 1], 0.0)
}

/// Constant-coefficient model on the 3d chain.
pub fn kolmogorov_3d() -> ModelSpec {
    constant_chain_model("kolmogorov-3d", chain_drift_3d(), &[1, 1, 1], 0.0)
}

/// Constant model with an injected first-order coefficient `a_1`.
pub fn kolmogorov_2d_with_drift(a1: f64) -> ModelSpec {
    let mut m = constant_chain_model("kolmogorov-2d-drift", chain_drift_2d(), &[1, 1], a1);
    // The kernel mean no longer matches the drift-free flow.
    m.constant_diffusion = if a1 == 0.0 { Some(1.0) } else { None };
    m
}

fn constant_chain_model(
    name: &str,
    drift_matrix: DriftMatrix,
    sizes: &[usize],
    a1: f64,
) -> ModelSpec {
    let structure = BlockStructure::new(sizes).unwrap();
    ModelSpec {
        name: name.into(),
        p0: 1,
        d: structure.d,
        drift_matrix,
        structure,
        diffusion: Arc::new(|_t, _x, a| {
            a[0] = 1.0;
        }),
        drift: Arc::new(move |_t, _x, a| {
            a[0] = a1;
        }),
        domain: Arc::new(|_x| true),
        outer_domain: Arc::new(|_x| true),
        horizon: 2.0,
        coercivity: 1.0,
        alpha: 1.0,
        order: 2,
        constant_diffusion: if a1 == 0.0 { Some(1.0) } else { None },
        boundary_distance: None,
    }
}

/// Smooth variable-coefficient perturbation of the 2d chain:
/// `a_11 = 1 + sin(x_1)/2`, coercive with `M = 2`.
pub fn perturbed_2d() -> ModelSpec {
    ModelSpec {
        name: "perturbed-2d".into(),
        p0: 1,
        d: 2,
        drift_matrix: chain_drift_2d(),
        structure: BlockStructure::new(&[1, 1]).unwrap(),
        diffusion: Arc::new(|_t, x, a| {
            a[0] = 1.0 + 0.5 * x[0].sin();
        }),
        drift: Arc::new(|_t, _x, a| {
            a[0] = 0.0;
        }),
        domain: Arc::new(|_x| true),
        outer_domain: Arc::new(|_x| true),
        horizon: 2.0,
        coercivity: 2.0,
        alpha: 1.0,
        order: 2,
        constant_diffusion: None,
        boundary_distance: None,
    }
}

/// Noise-free model with the given drift matrix; paths follow the flow
/// `e^{tB}` exactly up to the Euler discretization.
pub fn deterministic_model(drift_matrix: DriftMatrix, sizes: &[usize]) -> ModelSpec {
    let structure = BlockStructure::new(sizes).unwrap();
    ModelSpec {
        name: "deterministic".into(),
        p0: drift_matrix.p0,
        d: structure.d,
        drift_matrix,
        structure,
        diffusion: Arc::new(|_t, _x, a| {
            for v in a.iter_mut() {
                *v = 0.0;
            }
        }),
        drift: Arc::new(|_t, _x, a| {
            for v in a.iter_mut() {
                *v = 0.0;
            }
        }),
        domain: Arc::new(|_x| false),
        outer_domain: Arc::new(|_x| true),
        horizon: 10.0,
        coercivity: f64::INFINITY,
        alpha: 1.0,
        order: 2,
        constant_diffusion: None,
        boundary_distance: None,
    }
}

/// The built-in catalogue, keyed by name.
pub fn builtin_models() -> Vec<ModelSpec> {
    vec![
        asian_model(0.1),
        kolmogorov_2d(),
        kolmogorov_3d(),
        kolmogorov_2d_with_drift(0.7),
        perturbed_2d(),
    ]
}

/// Looks a built-in model up by its name.
pub fn builtin(name: &str) -> Option<ModelSpec> {
    builtin_models().into_iter().find(|m| m.name == name)
}

/// Builds a constant-coefficient model from raw drift-matrix rows.
pub fn inline_constant_model(
    name: &str,
    b_rows: &[Vec<f64>],
    sizes: &[usize],
    p0: usize,
    a_const: Vec<f64>,
    a_drift: Vec<f64>,
    horizon: f64,
) -> Result<ModelSpec, crate::geometry::GeometryError> {
    let d: usize = sizes.iter().sum();
    assert!(
        b_rows.len() == d && b_rows.iter().all(|r| r.len() == d),
        "drift matrix must be {d} x {d}"
    );
    let flat: Vec<f64> = b_rows.iter().flatten().cloned().collect();
    let drift_matrix = DriftMatrix::new(DMatrix::from_row_slice(d, d, &flat), p0);
    let structure = crate::geometry::validate_block_form(&drift_matrix, sizes)?;
    assert_eq!(a_const.len(), p0 * p0, "a matrix must be p0 x p0");
    assert_eq!(a_drift.len(), p0, "drift vector must have p0 entries");
    let is_identity_scalar = {
        let mut level = None;
        let mut ok = true;
        for r in 0..p0 {
            for c in 0..p0 {
                let v = a_const[r * p0 + c];
                if r == c {
                    match level {
                        None => level = Some(v),
                        Some(l) if l == v => {}
                        _ => ok = false,
                    }
                } else if v != 0.0 {
                    ok = false;
                }
            }
        }
        if ok && a_drift.iter().all(|&v| v == 0.0) {
            level
        } else {
            None
        }
    };
    let a_mat = a_const.clone();
    let a_vec = a_drift.clone();
    let scale = a_const
        .iter()
        .enumerate()
        .filter(|(i, _)| i % (p0 + 1) == 0)
        .fold(0.0_f64, |m, (_, v)| m.max(v.abs()));
    Ok(ModelSpec {
        name: name.into(),
        p0,
        d: structure.d,
        drift_matrix,
        structure,
        diffusion: Arc::new(move |_t, _x, a| a.copy_from_slice(&a_mat)),
        drift: Arc::new(move |_t, _x, a| a.copy_from_slice(&a_vec)),
        domain: Arc::new(|_x| true),
        outer_domain: Arc::new(|_x| true),
        horizon,
        coercivity: scale.max(1.0),
        alpha: 1.0,
        order: 2,
        constant_diffusion: is_identity_scalar.filter(|&l| l > 0.0),
        boundary_distance: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn asian_diffusion_is_squared_first_coordinate() {
        let m = asian_model(0.1);
        let mut a = [0.0];
        m.eval_diffusion(0.0, &[2.0, 5.0], &mut a);
        assert_eq!(a[0], 4.0);
    }

    #[test]
    fn constant_model_passes_coercivity_with_unit_constant() {
        let m = kolmogorov_2d();
        m.check_coercivity(0.5, &[-3.0, -3.0], &[3.0, 3.0], 64, 8)
            .unwrap();
    }

    #[test]
    fn perturbed_model_is_coercive_with_m_two() {
        let m = perturbed_2d();
        m.check_coercivity(0.5, &[-6.0, -6.0], &[6.0, 6.0], 128, 8)
            .unwrap();
        // M = 1 is too tight for a_11 ranging over [1/2, 3/2].
        let mut tight = perturbed_2d();
        tight.coercivity = 1.0;
        assert!(matches!(
            tight.check_coercivity(0.5, &[-6.0, -6.0], &[6.0, 6.0], 128, 8),
            Err(SimulateError::CoercivityViolation { .. })
        ));
    }

    #[test]
    fn asian_coercivity_on_probe_box() {
        let m = asian_model(0.1);
        m.check_coercivity(0.5, &[0.1, -2.0], &[10.0, 2.0], 128, 8)
            .unwrap();
    }

    #[test]
    fn asymmetric_diffusion_is_rejected() {
        let mut m = kolmogorov_2d();
        m.p0 = 1; // 1x1 can't be asymmetric; build a 2-block variant
        let m2 = ModelSpec {
            p0: 2,
            d: 2,
            drift_matrix: DriftMatrix::new(DMatrix::zeros(2, 2), 2),
            structure: BlockStructure::new(&[2]).unwrap(),
            diffusion: Arc::new(|_t, _x, a| {
                a.copy_from_slice(&[1.0, 0.3, 0.2, 1.0]);
            }),
            ..m
        };
        assert!(matches!(
            m2.check_coercivity(0.0, &[-1.0, -1.0], &[1.0, 1.0], 16, 4),
            Err(SimulateError::AsymmetricDiffusion { .. })
        ));
    }

    #[test]
    fn catalogue_contains_expected_names() {
        let names: Vec<String> = builtin_models().into_iter().map(|m| m.name).collect();
        assert!(names.contains(&"asian".to_string()));
        assert!(names.contains(&"kolmogorov-2d".to_string()));
        assert!(names.contains(&"kolmogorov-3d".to_string()));
        assert!(builtin("asian").is_some());
        assert!(builtin("unknown").is_none());
    }

    #[test]
    fn constant_models_expose_kernel_params() {
        assert!(kolmogorov_2d().kernel_params().is_some());
        assert!(kolmogorov_3d().kernel_params().is_some());
        assert!(asian_model(0.1).kernel_params().is_none());
        assert!(kolmogorov_2d_with_drift(0.7).kernel_params().is_none());
    }
}
