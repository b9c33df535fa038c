//! KP Whitham modulation system: averaged densities, characteristic speeds,
//! modulation matrices, hyperbolicity classification, the soliton-limit 2x2
//! system and the Cauchy-problem boundary formulas.
//!
//! The modulation variables are the wave levels `b1 > b2 > b3` (Riemann-type
//! coordinates of the underlying cubic roots `e1 > e2 > e3`) and the
//! transverse slope `q = l/k`.

use nalgebra::Matrix4;
use ndarray::Array2;
use num_complex::Complex64;

use crate::solutions::KpBranch;
use crate::special::{complete_e, complete_k, EllipticModulus};
use crate::spectral::{antiderivative_x, Field};
use crate::{Error, Result};

/// Modulation state `(b1, b2, b3, q)` with the equation branch.
#[derive(Debug, Clone, Copy)]
pub struct WhithamPoint {
    pub beta: [f64; 3],
    pub q: f64,
    pub branch: KpBranch,
}

impl WhithamPoint {
    pub fn new(beta: [f64; 3], q: f64, branch: KpBranch) -> Result<Self> {
        let [b1, b2, b3] = beta;
        if !(b1 > b2 && b2 > b3) {
            return Err(Error::parameter(format!(
                "Whitham point needs b1 > b2 > b3, got ({b1}, {b2}, {b3})"
            )));
        }
        Ok(WhithamPoint { beta, q, branch })
    }

    /// Elliptic parameter `m = (b2 - b3)/(b1 - b3)`.
    pub fn modulus(&self) -> f64 {
        let [b1, b2, b3] = self.beta;
        (b2 - b3) / (b1 - b3)
    }
}

/// Ordered roots `e1 > e2 > e3` of `-eta^3 + V eta^2 + B eta + A`.
#[derive(Debug, Clone, Copy)]
pub struct CubicRoots {
    pub e: [f64; 3],
}

impl CubicRoots {
    pub fn new(e: [f64; 3]) -> Result<Self> {
        if !(e[0] > e[1] && e[1] > e[2]) {
            return Err(Error::Degenerate(format!(
                "cubic roots must be strictly ordered, got {e:?}"
            )));
        }
        Ok(CubicRoots { e })
    }

    /// Vieta coefficients: `V = sum e_i`, `B = -(e1 e2 + e1 e3 + e2 e3)`,
    /// `A = e1 e2 e3`.
    pub fn coefficients(&self) -> (f64, f64, f64) {
        let [e1, e2, e3] = self.e;
        (e1 + e2 + e3, -(e1 * e2 + e1 * e3 + e2 * e3), e1 * e2 * e3)
    }

    /// `m = (e1 - e2)/(e1 - e3)`, identical to the beta-variable modulus.
    pub fn modulus(&self) -> f64 {
        let [e1, e2, e3] = self.e;
        (e1 - e2) / (e1 - e3)
    }
}

/// Change of coordinates between the cubic roots and the wave levels:
/// `b1 = (e2 + e1)/2`, `b2 = (e1 + e3)/2`, `b3 = (e2 + e3)/2`.
pub fn beta_from_e(roots: &CubicRoots) -> [f64; 3] {
    let [e1, e2, e3] = roots.e;
    [0.5 * (e2 + e1), 0.5 * (e1 + e3), 0.5 * (e2 + e3)]
}

/// Inverse of [`beta_from_e`]; rejects ties.
pub fn e_from_beta(beta: [f64; 3]) -> Result<CubicRoots> {
    let [b1, b2, b3] = beta;
    CubicRoots::new([b1 + b2 - b3, b1 - b2 + b3, -b1 + b2 + b3])
}

/// Period-averaged density `W` and its partial derivatives with respect to
/// the cubic coefficients `A`, `B`, `V`.
#[derive(Debug, Clone, Copy)]
pub struct AveragedDensities {
    pub w: f64,
    pub w_a: f64,
    pub w_b: f64,
    pub w_v: f64,
    /// Number of quadrature nodes at convergence.
    pub nodes: usize,
}

impl AveragedDensities {
    /// Wave number recovered from the averaging relation `k W_A = 1/6`.
    pub fn wavenumber(&self) -> f64 {
        1.0 / (6.0 * self.w_a)
    }

    /// Mean level `c1 = W_B / W_A`.
    pub fn mean_level(&self) -> f64 {
        self.w_b / self.w_a
    }
}

/// Evaluates `W, W_A, W_B, W_V` at fixed node count `n` by Gauss-Chebyshev
/// rules matched to the square-root endpoint behaviour on `[e2, e1]`.
fn densities_at(roots: &CubicRoots, n: usize) -> AveragedDensities {
    let [e1, e2, e3] = roots.e;
    let mid = 0.5 * (e1 + e2);
    let half = 0.5 * (e1 - e2);
    let sqrt3 = 3.0_f64.sqrt();
    let pi = std::f64::consts::PI;

    // W: second-kind rule for the weight sqrt(1 - t^2).
    let mut w = 0.0;
    for i in 1..=n {
        let theta = i as f64 * pi / (n as f64 + 1.0);
        let t = theta.cos();
        let eta = mid + half * t;
        w += theta.sin().powi(2) * (eta - e3).sqrt();
    }
    w *= pi / (n as f64 + 1.0) * half * half / (sqrt3 * pi);

    // Moments over the first-kind weight 1/sqrt(1 - t^2).
    let mut m0 = 0.0;
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for i in 1..=n {
        let t = ((2.0 * i as f64 - 1.0) * pi / (2.0 * n as f64)).cos();
        let eta = mid + half * t;
        let g = 1.0 / (eta - e3).sqrt();
        m0 += g;
        m1 += eta * g;
        m2 += eta * eta * g;
    }
    let scale = pi / n as f64 / (2.0 * sqrt3 * pi);
    AveragedDensities {
        w,
        w_a: scale * m0,
        w_b: scale * m1,
        w_v: scale * m2,
        nodes: n,
    }
}

/// Averaged densities with node doubling until the relative change of every
/// component drops below `1e-11`.
pub fn averaged_densities(roots: &CubicRoots) -> Result<AveragedDensities> {
    let [e1, e2, e3] = roots.e;
    let span = e1 - e3;
    if (e1 - e2) < 1e-12 * span || (e2 - e3) < 1e-12 * span {
        return Err(Error::Degenerate(
            "near-degenerate roots: use the soliton or small-amplitude limit formulas".into(),
        ));
    }
    let mut n = 64;
    let mut prev = densities_at(roots, n);
    loop {
        n *= 2;
        let next = densities_at(roots, n);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
        let change = rel(prev.w, next.w)
            .max(rel(prev.w_a, next.w_a))
            .max(rel(prev.w_b, next.w_b))
            .max(rel(prev.w_v, next.w_v));
        if change < 1e-11 || n >= 1 << 16 {
            return Ok(next);
        }
        prev = next;
    }
}

/// Wave number from the elliptic closed form
/// `k = pi sqrt(e1 - e3) / (2 sqrt(3) K(m))`.
pub fn wavenumber_elliptic(roots: &CubicRoots) -> Result<f64> {
    let [e1, _, e3] = roots.e;
    let m = roots.modulus();
    let k = complete_k(EllipticModulus::new(m)?)?;
    Ok(std::f64::consts::PI * (e1 - e3).sqrt() / (2.0 * 3.0_f64.sqrt() * k))
}

/// Characteristic speeds in the solitonic limit `b2 = b1`.
pub fn speeds_soliton_limit(b1: f64, b3: f64) -> [f64; 3] {
    let v12 = (2.0 * b1 + b3) / 3.0;
    [v12, v12, b3]
}

/// Characteristic speeds in the small-amplitude limit `b2 = b3`.
pub fn speeds_small_amplitude_limit(b1: f64, b3: f64) -> [f64; 3] {
    [b1, 2.0 * b3 - b1, 2.0 * b3 - b1]
}

const M_LIMIT_MARGIN: f64 = 1e-8;

/// KdV-type characteristic speeds
/// `v_i = (b1+b2+b3)/3 + (2/3) prod_{k != i} (b_i - b_k) / (b_i - b1 + (b1 - b3) E/K)`,
/// with explicit limit branches for `m` within `1e-8` of either endpoint.
pub fn whitham_speeds(p: &WhithamPoint) -> Result<[f64; 3]> {
    let [b1, b2, b3] = p.beta;
    let m = p.modulus();
    // The solitonic branch is inclusive: v3 approaches its limit only like
    // 1/K(m) = O(1/log(1-m)), so the threshold itself already belongs to the
    // limit regime.
    if m >= 1.0 - M_LIMIT_MARGIN {
        return Ok(speeds_soliton_limit(b1, b3));
    }
    if m < M_LIMIT_MARGIN {
        return Ok(speeds_small_amplitude_limit(b1, b3));
    }
    let modulus = EllipticModulus::new(m)?;
    let ratio = complete_e(modulus)? / complete_k(modulus)?;
    let mean = (b1 + b2 + b3) / 3.0;
    let mut v = [0.0; 3];
    for (i, vi) in v.iter_mut().enumerate() {
        let bi = p.beta[i];
        let mut prod = 1.0;
        for (k, &bk) in p.beta.iter().enumerate() {
            if k != i {
                prod *= bi - bk;
            }
        }
        let denom = bi - b1 + (b1 - b3) * ratio;
        *vi = mean + 2.0 / 3.0 * prod / denom;
    }
    Ok(v)
}

/// The transformed modulation matrices `(A, B)` of the quasi-linear system
/// `U_t + A U_x + B U_y = 0` for `U = (b1, b2, b3, q)`.
pub fn modulation_matrices(p: &WhithamPoint) -> Result<(Matrix4<f64>, Matrix4<f64>)> {
    let v = whitham_speeds(p)?;
    Ok(modulation_matrices_from_speeds(p.beta, p.q, p.branch, v))
}

/// Matrix assembly from externally supplied speeds (used at degenerate
/// configurations where the speeds come from a limit formula).
pub fn modulation_matrices_from_speeds(
    beta: [f64; 3],
    q: f64,
    branch: KpBranch,
    v: [f64; 3],
) -> (Matrix4<f64>, Matrix4<f64>) {
    let alpha = branch.alpha();
    let big_v = beta[0] + beta[1] + beta[2];
    let mut a = Matrix4::<f64>::zeros();
    let mut b = Matrix4::<f64>::zeros();
    for i in 0..3 {
        a[(i, i)] = v[i] - alpha * q * q;
        a[(i, 3)] = alpha * q * (v[i] - 2.0 * beta[i]);
        a[(3, i)] = -q / 3.0;
        b[(i, i)] = 2.0 * alpha * q;
        b[(i, 3)] = -alpha * (v[i] - 2.0 * beta[i]);
        b[(3, i)] = 1.0 / 3.0;
    }
    a[(3, 3)] = big_v / 3.0 - alpha * q * q;
    b[(3, 3)] = 2.0 * alpha * q;
    (a, b)
}

/// Character of the matrix pencil `A + xi B` at a real `xi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PencilClass {
    /// All four eigenvalues real.
    Hyperbolic,
    /// All eigenvalues in non-real conjugate pairs.
    Elliptic,
    /// Some real and some complex eigenvalues.
    Mixed,
}

impl std::fmt::Display for PencilClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PencilClass::Hyperbolic => write!(f, "hyperbolic"),
            PencilClass::Elliptic => write!(f, "elliptic"),
            PencilClass::Mixed => write!(f, "mixed"),
        }
    }
}

/// Eigenvalues of `A + xi B` and their classification.
pub fn pencil_spectrum(
    a: &Matrix4<f64>,
    b: &Matrix4<f64>,
    xi: f64,
) -> (Vec<Complex64>, PencilClass) {
    let m = a + b * xi;
    let scale = m.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs())).max(1.0);
    let eig = m.complex_eigenvalues();
    let eigs: Vec<Complex64> = eig.iter().map(|z| Complex64::new(z.re, z.im)).collect();
    let tol = 1e-9 * scale;
    let real_count = eigs.iter().filter(|z| z.im.abs() < tol).count();
    let class = match real_count {
        4 => PencilClass::Hyperbolic,
        0 => PencilClass::Elliptic,
        _ => PencilClass::Mixed,
    };
    (eigs, class)
}

/// Eigenvalues of the soliton-front modulation system,
/// `lambda = a/3 - alpha q^2 + 2 xi alpha q +/- (2/3) sqrt(alpha a (q - xi)^2)`.
/// Real for KPII; complex for KPI whenever `xi != q`.
pub fn soliton_system_eigs(
    a: f64,
    q: f64,
    xi: f64,
    branch: KpBranch,
) -> Result<(Complex64, Complex64)> {
    if a <= 0.0 {
        return Err(Error::domain("soliton amplitude a must be positive"));
    }
    let alpha = branch.alpha();
    let base = a / 3.0 - alpha * q * q + 2.0 * xi * alpha * q;
    let radicand = alpha * a * (q - xi) * (q - xi);
    let root = if radicand >= 0.0 {
        Complex64::new(radicand.sqrt(), 0.0)
    } else {
        Complex64::new(0.0, (-radicand).sqrt())
    };
    let offset = root * (2.0 / 3.0);
    Ok((base + offset, base - offset))
}

/// Closed form of the discriminant of the cubic factor `P3` of
/// `det(A + xi B - lambda I)` at the soliton front with `b3 -> 0`:
/// `alpha (xi - q)^2 b1^3 (b1 - 2 xi alpha + 4 xi alpha q - 2 alpha q^2)^2`.
pub fn p3_discriminant_at_beta3_zero(b1: f64, q: f64, xi: f64, branch: KpBranch) -> f64 {
    let alpha = branch.alpha();
    let factor = b1 - 2.0 * xi * alpha + 4.0 * xi * alpha * q - 2.0 * alpha * q * q;
    alpha * (xi - q) * (xi - q) * b1.powi(3) * factor * factor
}

/// Transverse slope of the modulation data at breakup,
/// `q = (dx^{-1} u_y) / u`, computed spectrally on the grid of `u0`.
/// Returns the field of values and a validity mask; entries where
/// `|u0| < 1e-8 max|u0|` are flagged invalid.
pub fn riemann_q_field(u0: &Field) -> Result<(Array2<f64>, Array2<bool>)> {
    let grid = u0.grid.clone();
    let phys = u0.to_physical();
    let u = phys.physical()?;
    let hat = phys.to_spectral();
    // d/dy then dx^{-1}.
    let dy = {
        let a = hat.spectral()?;
        let mut out = a.clone();
        for jy in 0..grid.ny {
            let ky = if jy == 0 || jy == grid.ny / 2 {
                0.0
            } else {
                grid.ky()[jy]
            };
            for jx in 0..grid.nx {
                out[(jy, jx)] *= Complex64::new(0.0, ky);
            }
        }
        Field {
            grid: grid.clone(),
            data: crate::spectral::FieldData::Spectral(out),
        }
    };
    let w = crate::spectral::transform(&antiderivative_x(&dy)?);
    let wp = w.physical()?;
    let floor = 1e-8 * u.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
    let mut q = Array2::<f64>::zeros((grid.ny, grid.nx));
    let mut valid = Array2::<bool>::from_elem((grid.ny, grid.nx), false);
    for jy in 0..grid.ny {
        for jx in 0..grid.nx {
            if u[(jy, jx)].abs() > floor {
                q[(jy, jx)] = wp[(jy, jx)] / u[(jy, jx)];
                valid[(jy, jx)] = true;
            }
        }
    }
    Ok((q, valid))
}

/// [`riemann_q_field`] evaluated at the grid node nearest to `(x, y)`.
pub fn riemann_q_init(u0: &Field, x: f64, y: f64) -> Result<f64> {
    let (q, valid) = riemann_q_field(u0)?;
    let (ix, jy) = u0.grid.nearest_index(x, y);
    if !valid[(jy, ix)] {
        return Err(Error::Undefined(format!(
            "initial datum below floor at ({x}, {y})"
        )));
    }
    Ok(q[(jy, ix)])
}
