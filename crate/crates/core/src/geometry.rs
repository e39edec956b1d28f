//! Non-Euclidean geometry induced by the drift matrix.
//!
//! A constant matrix `B` whose subdiagonal blocks have full rank stratifies
//! the coordinates into blocks of sizes `p_0 >= p_1 >= ... >= p_r >= 1`.
//! Coordinates in block `j` carry the dilation exponent `2j + 1`, which
//! drives the anisotropic dilations, the homogeneous quasi-norm, the height
//! of multi-indices and the intrinsic space-time semi-distance implemented
//! here. Hypoellipticity of the associated constant-coefficient operator is
//! equivalent to a Kalman-type rank condition on `B`, checked numerically by
//! [`kalman_rank`].

use nalgebra::DMatrix;
use thiserror::Error;

use crate::kernel::mat_exp;

/// Absolute tolerance for entries that the block form requires to vanish.
pub const ZERO_PATTERN_TOL: f64 = 1e-12;
/// Relative singular-value threshold for numerical rank decisions.
pub const RANK_REL_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("block sizes must satisfy p_0 >= p_1 >= ... >= p_r >= 1, got {0:?}")]
    NonMonotoneSizes(Vec<usize>),
    #[error("block sizes sum to {sum}, expected ambient dimension {d}")]
    SizesSumMismatch { sum: usize, d: usize },
    #[error(
        "entry ({row}, {col}) = {value} violates the zero pattern below the subdiagonal blocks"
    )]
    ZeroPatternViolation { row: usize, col: usize, value: f64 },
    #[error("subdiagonal block {block} has numerical rank {rank}, expected {expected}")]
    RankDeficientSubdiagonal {
        block: usize,
        rank: usize,
        expected: usize,
    },
    #[error("dilation parameter must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("multi-index has {got} entries, expected ambient dimension {d}")]
    MultiIndexLength { got: usize, d: usize },
}

/// Block decomposition `(p_0, ..., p_r)` of the coordinates, with offsets.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct BlockStructure {
    /// Number of sub-blocks beyond the first.
    pub r: usize,
    /// Block sizes `p_0, ..., p_r`.
    pub sizes: Vec<usize>,
    /// Cumulative sums: `offsets[j] = p_0 + ... + p_j`; `offsets[r] = d`.
    pub offsets: Vec<usize>,
    /// Ambient dimension.
    pub d: usize,
}

impl BlockStructure {
    /// Builds the structure from block sizes, checking monotonicity.
    pub fn new(sizes: &[usize]) -> Result<Self, GeometryError> {
        if sizes.is_empty() || sizes.contains(&0) || sizes.windows(2).any(|w| w[1] > w[0]) {
            return Err(GeometryError::NonMonotoneSizes(sizes.to_vec()));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &p in sizes {
            acc += p;
            offsets.push(acc);
        }
        Ok(BlockStructure {
            r: sizes.len() - 1,
            sizes: sizes.to_vec(),
            offsets,
            d: acc,
        })
    }

    /// Block index of coordinate `i`.
    pub fn block_of(&self, i: usize) -> usize {
        debug_assert!(i < self.d);
        self.offsets.partition_point(|&off| off <= i)
    }

    /// Dilation exponent `2j + 1` of coordinate `i` in block `j`.
    pub fn exponent_of(&self, i: usize) -> u32 {
        2 * self.block_of(i) as u32 + 1
    }

    /// Homogeneous dimension `sum_j (2j+1) p_j` plus 2 for the time variable.
    pub fn homogeneous_dimension(&self) -> usize {
        2 + self
            .sizes
            .iter()
            .enumerate()
            .map(|(j, &p)| (2 * j + 1) * p)
            .sum::<usize>()
    }
}

/// The constant drift matrix `B` together with the width of the diffused block.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftMatrix {
    pub matrix: DMatrix<f64>,
    pub p0: usize,
}

impl DriftMatrix {
    pub fn new(matrix: DMatrix<f64>, p0: usize) -> Self {
        assert!(matrix.is_square(), "drift matrix must be square");
        assert!(p0 >= 1 && p0 <= matrix.nrows(), "p0 out of range");
        DriftMatrix { matrix, p0 }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `B x` into a freshly allocated vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d];
        for (r, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (c, xc) in x.iter().enumerate().take(d) {
                acc += self.matrix[(r, c)] * xc;
            }
            *slot = acc;
        }
        out
    }
}

/// A spatial multi-index `β` of length `d`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn zero(d: usize) -> Self {
        MultiIndex(vec![0; d])
    }

    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    /// `β!` as a float.
    pub fn factorial(&self) -> f64 {
        self.0.iter().map(|&b| factorial(b)).product()
    }

    /// `z^β`.
    pub fn monomial(&self, z: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(z)
            .map(|(&b, &zi)| zi.powi(b as i32))
            .product()
    }
}

pub(crate) fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Numerical rank via singular values above `RANK_REL_TOL` times the largest.
fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_REL_TOL * max).count()
}

/// Validates that `b` has the stratified block form for the given sizes.
///
/// Every block strictly below the subdiagonal must vanish (absolute tolerance
/// [`ZERO_PATTERN_TOL`]) and every subdiagonal block `B_j`, of shape
/// `p_j x p_{j-1}`, must have full numerical rank `p_j`. Blocks on and above
/// the diagonal are arbitrary.
pub fn validate_block_form(
    b: &DriftMatrix,
    sizes: &[usize],
) -> Result<BlockStructure, GeometryError> {
    let s = BlockStructure::new(sizes)?;
    let d = b.dim();
    if s.d != d {
        return Err(GeometryError::SizesSumMismatch { sum: s.d, d });
    }
    let start = |j: usize| if j == 0 { 0 } else { s.offsets[j - 1] };
    // Zero pattern below the first subdiagonal of blocks.
    for bi in 0..=s.r {
        for bj in 0..=s.r {
            if bi > bj + 1 {
                for row in start(bi)..s.offsets[bi] {
                    for col in start(bj)..s.offsets[bj] {
                        let value = b.matrix[(row, col)];
                        if value.abs() > ZERO_PATTERN_TOL {
                            return Err(GeometryError::ZeroPatternViolation { row, col, value });
                        }
                    }
                }
            }
        }
    }
    // Full rank of each subdiagonal block.
    for j in 1..=s.r {
        let rows = start(j)..s.offsets[j];
        let cols = start(j - 1)..s.offsets[j - 1];
        let block = DMatrix::from_fn(s.sizes[j], s.sizes[j - 1], |r, c| {
            b.matrix[(rows.start + r, cols.start + c)]
        });
        let rank = numerical_rank(&block);
        if rank < s.sizes[j] {
            return Err(GeometryError::RankDeficientSubdiagonal {
                block: j,
                rank,
                expected: s.sizes[j],
            });
        }
    }
    Ok(s)
}

/// Rank of the controllability-type matrix `[E  BE  B^2 E ... B^{d-1} E]`
/// with `E` the first `p0` canonical columns.
///
/// The associated constant-coefficient operator is hypoelliptic iff the
/// result equals `d`. The matrix `B` is normalized by its largest entry
/// before forming powers; column scalings leave the rank unchanged, and this
/// makes the numerical decision invariant under `B -> cB`.
pub fn kalman_rank(b: &DriftMatrix, p0: usize) -> usize {
    let d = b.dim();
    assert!(p0 >= 1 && p0 <= d, "p0 out of range");
    let max = b.matrix.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
    let scaled = if max > 0.0 {
        &b.matrix / max
    } else {
        b.matrix.clone()
    };
    let mut kal = DMatrix::zeros(d, d * p0);
    let mut power = DMatrix::identity(d, d);
    for k in 0..d {
        for c in 0..p0 {
            for r in 0..d {
                kal[(r, k * p0 + c)] = power[(r, c)];
            }
        }
        power = &scaled * power;
    }
    numerical_rank(&kal)
}

/// Anisotropic dilation: coordinate `i` in block `j` is scaled by
/// `lambda^(2j+1)`.
pub fn dilation(lambda: f64, x: &[f64], s: &BlockStructure) -> Result<Vec<f64>, GeometryError> {
    if lambda <= 0.0 {
        return Err(GeometryError::NonPositiveLambda(lambda));
    }
    Ok(x.iter()
        .enumerate()
        .map(|(i, &xi)| lambda.powi(s.exponent_of(i) as i32) * xi)
        .collect())
}

/// Homogeneous quasi-norm `sum_i |x_i|^(1/(2j+1))`.
///
/// With this exponent the norm is exactly 1-homogeneous under [`dilation`]:
/// `|D(lambda) x| = lambda |x|` for every `lambda > 0`.
pub fn quasi_norm(x: &[f64], s: &BlockStructure) -> f64 {
    x.iter()
        .enumerate()
        .map(|(i, &xi)| {
            let e = s.exponent_of(i);
            if e == 1 {
                xi.abs()
            } else {
                xi.abs().powf(1.0 / e as f64)
            }
        })
        .sum()
}

/// Height `[β] = sum_i (2j+1) β_i` of a multi-index.
pub fn multi_index_height(beta: &MultiIndex, s: &BlockStructure) -> Result<u32, GeometryError> {
    if beta.0.len() != s.d {
        return Err(GeometryError::MultiIndexLength {
            got: beta.0.len(),
            d: s.d,
        });
    }
    Ok(beta
        .0
        .iter()
        .enumerate()
        .map(|(i, &bi)| s.exponent_of(i) * bi)
        .sum())
}

/// Space-time semi-distance `|T - t|^(1/2) + |y - e^((T-t)B) x|`, with the
/// second term measured in the quasi-norm.
pub fn intrinsic_distance(
    t: f64,
    x: &[f64],
    t_end: f64,
    y: &[f64],
    b: &DriftMatrix,
    s: &BlockStructure,
) -> f64 {
    let flow = mat_exp(&b.matrix, t_end - t);
    let mut diff = vec![0.0; s.d];
    for r in 0..s.d {
        let mut acc = 0.0;
        for c in 0..s.d {
            acc += flow[(r, c)] * x[c];
        }
        diff[r] = y[r] - acc;
    }
    (t_end - t).abs().sqrt() + quasi_norm(&diff, s)
}

/// Enumerates the admissible derivative set `{(k, β) : 2k + [β] <= n}`.
///
/// Pairs are returned in lexicographic `(k, β)` order; the set is finite for
/// every order because each coordinate contributes height at least 1.
pub fn admissible_pairs(n: u32, s: &BlockStructure) -> Vec<(u32, MultiIndex)> {
    let mut out = Vec::new();
    for k in 0..=(n / 2) {
        let budget = n - 2 * k;
        let mut beta = vec![0u32; s.d];
        enumerate_heights(&mut beta, 0, budget, s, &mut |b| {
            out.push((k, MultiIndex(b.to_vec())));
        });
    }
    out
}

fn enumerate_heights(
    beta: &mut [u32],
    coord: usize,
    budget: u32,
    s: &BlockStructure,
    emit: &mut impl FnMut(&[u32]),
) {
    if coord == beta.len() {
        emit(beta);
        return;
    }
    let weight = s.exponent_of(coord);
    let max = budget / weight;
    for v in 0..=max {
        beta[coord] = v;
        enumerate_heights(beta, coord + 1, budget - v * weight, s, emit);
    }
    beta[coord] = 0;
}

/// Drift matrix of the prototype two-dimensional model: `B = [[0,0],[1,0]]`.
pub fn chain_drift_2d() -> DriftMatrix {
    DriftMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]), 1)
}

/// Three-dimensional chain `B = [[0,0,0],[1,0,0],[0,1,0]]`.
pub fn chain_drift_3d() -> DriftMatrix {
    DriftMatrix::new(
        DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
        1,
    )
}
