//! Deterministic reductions, least-squares fits and low-discrepancy samples.

/// Sums a slice with a fixed pairwise tree.
///
/// The splitting points depend only on the slice length, so the result is a
/// pure function of the input vector; estimators rely on this for bitwise
/// reproducibility across thread counts.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 64;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Sample mean and standard error of the mean.
///
/// Two-pass: the mean is computed first, then centered squares are summed
/// pairwise. Returns `(mean, se)`; `se` is zero for fewer than two samples.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = pairwise_sum(values) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let centered: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&centered) / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Ordinary least-squares line fit.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits `y = slope * x + intercept` by least squares.
///
/// Returns `None` for fewer than two points or degenerate abscissae.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LineFit> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = pairwise_sum(x) / nf;
    let my = pairwise_sum(y) / nf;
    let sxx: f64 = x.iter().map(|&v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(&u, &v)| (u - mx) * (v - my)).sum();
    let syy: f64 = y.iter().map(|&v| (v - my) * (v - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    Some(LineFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Radical-inverse (van der Corput) digit reversal of `index` in `base`.
pub fn van_der_corput(mut index: u64, base: u64) -> f64 {
    let mut result = 0.0;
    let mut denom = 1.0;
    while index > 0 {
        denom *= base as f64;
        result += (index % base) as f64 / denom;
        index /= base;
    }
    result
}

const HALTON_BASES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// `dim`-dimensional Halton point in the unit cube (dim ≤ 8).
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    assert!(dim <= HALTON_BASES.len(), "halton supports up to 8 dims");
    // Index offset skips the degenerate all-zero first point.
    (0..dim)
        .map(|k| van_der_corput(index + 1, HALTON_BASES[k]))
        .collect()
}
