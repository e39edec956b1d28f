//! Gauss-Legendre rules and tensor-product integration on Gaussian supports.

use nalgebra::{DMatrix, DVector};

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
///
/// Newton iteration on the Legendre recurrence; exact for polynomials of
/// degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess for the i-th positive root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        let (_, d) = legendre_and_derivative(n, 0.0);
        nodes[n / 2] = 0.0;
        weights[n / 2] = 2.0 / (d * d);
    }
    (nodes, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Integrates `f` over `[a, b]` with an `n`-point Gauss-Legendre rule.
pub fn integrate_1d(a: f64, b: f64, n: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    let (nodes, weights) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    nodes
        .iter()
        .zip(&weights)
        .map(|(&u, &w)| w * f(mid + half * u))
        .sum::<f64>()
        * half
}

/// Axis-aligned integration frame adapted to a Gaussian density.
///
/// Holds the principal axes (unit eigenvectors scaled by the standard
/// deviation along each axis) of a covariance matrix together with the mean.
pub struct GaussianFrame {
    pub mean: DVector<f64>,
    /// Columns are eigenvectors scaled by sqrt(eigenvalue).
    pub scaled_axes: DMatrix<f64>,
}

impl GaussianFrame {
    /// Builds the frame from a mean and a symmetric positive-definite
    /// covariance matrix.
    pub fn new(mean: DVector<f64>, covariance: &DMatrix<f64>) -> Self {
        let eig = covariance.clone().symmetric_eigen();
        let d = mean.len();
        let mut scaled = eig.eigenvectors.clone();
        for k in 0..d {
            let sd = eig.eigenvalues[k].max(0.0).sqrt();
            for r in 0..d {
                scaled[(r, k)] *= sd;
            }
        }
        GaussianFrame {
            mean,
            scaled_axes: scaled,
        }
    }

    /// Maps standardized coordinates `z` to the ambient point `mean + Q z`.
    pub fn point(&self, z: &[f64]) -> DVector<f64> {
        let mut p = self.mean.clone();
        for (k, &zk) in z.iter().enumerate() {
            for r in 0..p.len() {
                p[r] += self.scaled_axes[(r, k)] * zk;
            }
        }
        p
    }
}

/// Tensor-product Gauss-Legendre integral of `f` over the box
/// `|z_k| <= half_width` in the standardized coordinates of `frame`.
///
/// The Jacobian of the frame map is `sqrt(det C)`, accounted for here, so the
/// integral of the corresponding Gaussian density over a wide box tends to 1.
pub fn integrate_gaussian_frame(
    frame: &GaussianFrame,
    half_width: f64,
    nodes_per_axis: usize,
    f: &dyn Fn(&DVector<f64>) -> f64,
) -> f64 {
    let d = frame.mean.len();
    let (nodes, weights) = gauss_legendre(nodes_per_axis);
    // det(Q) with Q the scaled-axes matrix equals sqrt(det C) up to sign.
    let jac = frame.scaled_axes.determinant().abs() * half_width.powi(d as i32);
    let mut z = vec![0.0; d];
    let mut total = 0.0;
    let mut idx = vec![0usize; d];
    loop {
        let mut w = 1.0;
        for k in 0..d {
            z[k] = half_width * nodes[idx[k]];
            w *= weights[idx[k]];
        }
        total += w * f(&frame.point(&z));
        // Odometer increment over the tensor grid.
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < nodes_per_axis {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == d {
                return total * jac;
            }
        }
    }
}
