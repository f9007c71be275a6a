//! Normal-family primitives and the random-number contract used by every simulation.
//!
//! Random draws are addressed by a [`RandomStream`]: a root seed plus a path of
//! indices (for example `[replicate]`). The same `(seed, path)` always yields the
//! same variate sequence, independent of which thread consumes it or in what order
//! sibling streams are visited.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{invalid, Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// A value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(invalid(format!("probability must lie in [0, 1], got {value}")))
        }
    }

    /// Clamps rounding spill-over (e.g. `1.0000000000000002`) back into range.
    pub(crate) fn saturating(value: f64) -> Self {
        debug_assert!(!value.is_nan());
        Self(value.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// Standard normal cdf without argument checks. Accurate in both tails.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal survival function `1 - Φ(x)`, computed without cancellation.
#[inline]
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Φ(x) for finite `x`.
pub fn std_normal_cdf(x: f64) -> Result<Probability> {
    if !x.is_finite() {
        return Err(invalid(format!("normal cdf argument must be finite, got {x}")));
    }
    Ok(Probability::saturating(norm_cdf(x)))
}

/// Φ⁻¹(p) for `p` in the open unit interval.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("normal quantile needs 0 < p < 1, got {p}")));
    }
    let mut x = -SQRT_2 * erfc_inv(2.0 * p);
    // One Newton step against the cdf; the residual is computed on the smaller tail.
    let density = norm_pdf(x);
    if density > 0.0 {
        let residual = if x < 0.0 { norm_cdf(x) - p } else { (1.0 - p) - norm_sf(x) };
        x -= residual / density;
    }
    Ok(x)
}

/// Generator behind every [`RandomStream`].
pub type StreamRng = ChaCha8Rng;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// A deterministic substream addressed by `(seed, path)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomStream {
    seed: u64,
    path: Vec<u64>,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, path: Vec::new() }
    }

    pub fn with_path(seed: u64, path: &[u64]) -> Self {
        Self { seed, path: path.to_vec() }
    }

    /// The child stream one level below this one.
    pub fn substream(&self, index: u64) -> Self {
        let mut path = Vec::with_capacity(self.path.len() + 1);
        path.extend_from_slice(&self.path);
        path.push(index);
        Self { seed: self.seed, path }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    fn key(&self) -> u64 {
        let mut h = mix64(self.seed.wrapping_add(GOLDEN_GAMMA));
        for (depth, &index) in self.path.iter().enumerate() {
            let salt = GOLDEN_GAMMA.wrapping_mul(depth as u64 + 2);
            h = mix64(h ^ mix64(index.wrapping_add(salt)));
        }
        h
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.key())
    }

    /// The stream's standard normal variates, in order.
    pub fn normals(&self) -> impl Iterator<Item = f64> {
        let mut rng = self.rng();
        std::iter::repeat_with(move || rng.sample::<f64, _>(StandardNormal))
    }
}

/// The first standard normal variate of `stream`.
pub fn sample_std_normal(stream: &RandomStream) -> f64 {
    stream.rng().sample(StandardNormal)
}

/// Draws `mean + L ζ` where `L` is the lower Cholesky factor of `cov` and `ζ`
/// holds the first `dim` normal variates of `stream`.
pub fn sample_mvn(mean: &DVector<f64>, cov: &DMatrix<f64>, stream: &RandomStream) -> Result<DVector<f64>> {
    let dim = mean.len();
    if cov.nrows() != dim || cov.ncols() != dim {
        return Err(invalid(format!(
            "mean has dimension {dim} but covariance is {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    check_symmetric(cov, 1e-12)?;
    let factor = cholesky(cov)?;
    let zeta = DVector::from_iterator(dim, stream.normals().take(dim));
    Ok(mean + factor * zeta)
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(invalid(format!("matrix must be square, got {}x{}", m.nrows(), m.ncols())));
    }
    for i in 0..m.nrows() {
        for j in 0..i {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if (a - b).abs() > tol * a.abs().max(b.abs()).max(1.0) {
                return Err(invalid(format!("matrix is not symmetric at ({i}, {j}): {a} vs {b}")));
            }
        }
    }
    Ok(())
}

/// Lower-triangular `L` with `L Lᵀ = a`. Only the lower triangle of `a` is read.
///
/// Fails with [`Error::NotPositiveDefinite`] naming the zero-based pivot whose
/// Schur complement is not positive beyond rounding. No regularization is applied.
pub fn cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(invalid(format!("matrix must be square, got {}x{}", n, a.ncols())));
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        // Pivots lost to rounding count as zero, so numerically singular input fails.
        let floor = 4.0 * n as f64 * f64::EPSILON * a[(j, j)].abs();
        if !(diag > floor) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let d = diag.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L x = b` for lower-triangular `L`.
pub(crate) fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for c in 0..x.ncols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Solves `Lᵀ x = b` for lower-triangular `L`.
pub(crate) fn solve_lower_transpose(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for c in 0..x.ncols() {
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Solves `A x = b` given the lower Cholesky factor of `A`.
pub(crate) fn cholesky_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    solve_lower_transpose(l, &solve_lower(l, b))
}
