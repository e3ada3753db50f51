//! Complex linear algebra primitives and seeded randomness.
//!
//! Everything downstream funnels through here: channel builders draw CN(0,1)
//! matrices, the solver projects iterates onto power and phase feasible sets,
//! and auxiliary receiver updates go through [`hermitian_solve`] instead of an
//! explicit inverse. There is no global RNG anywhere in the crate; every
//! stream is a [`Rng`] built from an explicit 64-bit seed, and child streams
//! are split off with [`derive_seed`] so that paired experiments and reruns
//! are bit-for-bit reproducible.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Relative tolerance for the Hermitian symmetry check in [`hermitian_solve`].
pub const HERMITIAN_TOL: f64 = 1e-12;

// Stream tags for `derive_seed`. Fixed numeric tags rather than hashed
// strings so the derivation is trivially stable.
pub const STREAM_DIRECT: u64 = 1;
pub const STREAM_RIS: u64 = 2;
pub const STREAM_TRAFFIC: u64 = 3;
pub const STREAM_SOLVER: u64 = 4;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Collapse a base seed and context words into a child seed.
///
/// Used to give every trial, channel block, and solver run its own
/// independent stream while staying reproducible from one root seed. The
/// mixing is SplitMix64, so the mapping is platform independent.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = splitmix64(base);
    for &p in parts {
        h = splitmix64(h ^ p);
    }
    h
}

/// Deterministic stream generator: ChaCha8 keyed by a 64-bit seed.
///
/// The same seed yields the same integer stream on every platform, which is
/// what makes paired RIS on/off runs and experiment reruns byte-identical.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// One N(0, 1) draw.
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform angle in [0, 2*pi).
    pub fn uniform_phase(&mut self) -> f64 {
        self.inner.random::<f64>() * std::f64::consts::TAU
    }

    /// One CN(0, 1) draw: real and imaginary parts independent N(0, 1/2),
    /// so E|z|^2 = 1.
    pub fn sample_cn_scalar(&mut self) -> Complex64 {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Complex64::new(self.standard_normal() * s, self.standard_normal() * s)
    }

    /// Matrix of i.i.d. CN(0, 1) entries, filled in column-major order.
    pub fn sample_cn(&mut self, rows: usize, cols: usize) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| self.sample_cn_scalar())
    }

    pub fn sample_cn_vector(&mut self, n: usize) -> CVector {
        CVector::from_fn(n, |_, _| self.sample_cn_scalar())
    }

    /// Unit-modulus vector with i.i.d. uniform phases.
    pub fn sample_unit_phases(&mut self, n: usize) -> CVector {
        CVector::from_fn(n, |_, _| Complex64::from_polar(1.0, self.uniform_phase()))
    }
}

/// Frobenius norm.
pub fn fro_norm(a: &CMatrix) -> f64 {
    a.norm()
}

/// Euclidean norm.
pub fn vec_norm(v: &CVector) -> f64 {
    v.norm()
}

fn all_finite<'a, I: Iterator<Item = &'a Complex64>>(mut it: I) -> bool {
    it.all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Solve `A X = B` for Hermitian positive definite `A` via Cholesky.
///
/// Interference covariances always carry a `sigma^2 I` floor, so `A` should
/// factor on the first try; if it does not, one diagonally loaded retry
/// (`1e-12 * trace/n` added to the diagonal) is attempted before giving up
/// with [`Error::NumericalFailure`].
pub fn hermitian_solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::invalid(format!(
            "hermitian_solve: matrix is {}x{}, expected square",
            n,
            a.ncols()
        )));
    }
    if b.nrows() != n {
        return Err(Error::invalid(format!(
            "hermitian_solve: rhs has {} rows, expected {}",
            b.nrows(),
            n
        )));
    }
    if !all_finite(a.iter()) || !all_finite(b.iter()) {
        return Err(Error::invalid("hermitian_solve: non-finite entry"));
    }
    let scale = a.iter().map(|z| z.norm()).fold(0.0_f64, f64::max);
    let asym = (a - a.adjoint()).iter().map(|z| z.norm()).fold(0.0_f64, f64::max);
    if asym > HERMITIAN_TOL * scale.max(1.0) {
        return Err(Error::invalid(format!(
            "hermitian_solve: matrix is not Hermitian (asymmetry {asym:.3e})"
        )));
    }

    if let Some(chol) = nalgebra::linalg::Cholesky::new(a.clone()) {
        return Ok(chol.solve(b));
    }
    // Single retry with a trace-scaled diagonal load.
    let load = 1e-12 * a.trace().re / n as f64;
    let mut loaded = a.clone();
    for i in 0..n {
        loaded[(i, i)] += Complex64::new(load, 0.0);
    }
    match nalgebra::linalg::Cholesky::new(loaded) {
        Some(chol) => Ok(chol.solve(b)),
        None => Err(Error::numerical(
            "hermitian_solve: Cholesky failed even after diagonal loading",
        )),
    }
}

/// Convenience wrapper for a vector right-hand side.
pub fn hermitian_solve_vec(a: &CMatrix, b: &CVector) -> Result<CVector> {
    let cols = CMatrix::from_columns(&[b.clone()]);
    Ok(hermitian_solve(a, &cols)?.column(0).into_owned())
}

// Idempotence slack: a vector produced by one of the projections below must
// land in the "unchanged" branch when projected again, even after rounding
// nudged its norm a few ulps past the boundary.
const PROJ_SLACK: f64 = 4.0 * f64::EPSILON;

/// Euclidean projection onto the origin-centered ball of the given radius.
pub fn project_ball(v: &CVector, radius: f64) -> Result<CVector> {
    if !(radius >= 0.0) {
        return Err(Error::invalid(format!(
            "project_ball: radius must be nonnegative, got {radius}"
        )));
    }
    let n = vec_norm(v);
    if n * n <= radius * radius * (1.0 + PROJ_SLACK) {
        Ok(v.clone())
    } else {
        Ok(v * Complex64::from(radius / n))
    }
}

/// Entrywise projection onto the closed unit disk: entries with modulus
/// above one are rescaled to unit modulus, phase preserved.
pub fn project_unit_disk(phi: &CVector) -> CVector {
    phi.map(|z| {
        let m2 = z.norm_sqr();
        if m2 <= 1.0 + PROJ_SLACK {
            z
        } else {
            z / m2.sqrt()
        }
    })
}
