//! Closed-form solution families of the KP and NLS equations.
//!
//! These evaluators serve three roles: initial data for the solvers,
//! exactness oracles for the time steppers, and models for the nonlinear
//! fits in [`crate::diagnostics`].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::special::{complete_k, jacobi_cn, mean_cn_squared, EllipticModulus};
use crate::{Error, Result};

/// Equation branch: `KpI` is the focusing case (alpha = -1, strong surface
/// tension), `KpII` the defocusing case (alpha = +1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KpBranch {
    KpI,
    KpII,
}

impl KpBranch {
    /// The sign `alpha` in `(u_t + u u_x + eps^2 u_xxx)_x + alpha u_yy = 0`.
    pub fn alpha(self) -> f64 {
        match self {
            KpBranch::KpI => -1.0,
            KpBranch::KpII => 1.0,
        }
    }

    pub fn from_alpha(a: f64) -> Result<Self> {
        if a == -1.0 {
            Ok(KpBranch::KpI)
        } else if a == 1.0 {
            Ok(KpBranch::KpII)
        } else {
            Err(Error::parameter(format!("alpha must be +1 or -1, got {a}")))
        }
    }
}

/// Travelling cnoidal wave of KP.
///
/// `u = b1 + b3 - b2 + 2 (b2 - b3) cn^2( K(m)(k x + l y - w t)/(pi eps) + phi0; m )`
/// with `m = (b2 - b3)/(b1 - b3)`, `k = pi sqrt(b1 - b3) / (sqrt(6) K(m))`,
/// `l = q k` and `w = (k/3)(b1 + b2 + b3) + alpha l^2 / k`.
#[derive(Debug, Clone, Copy)]
pub struct CnoidalParams {
    pub beta: [f64; 3],
    pub q: f64,
    pub phi0: f64,
    pub epsilon: f64,
    pub branch: KpBranch,
    m: f64,
    big_k: f64,
    k: f64,
    l: f64,
    omega: f64,
}

impl CnoidalParams {
    pub fn new(beta: [f64; 3], q: f64, phi0: f64, epsilon: f64, branch: KpBranch) -> Result<Self> {
        let [b1, b2, b3] = beta;
        if !(b1 > b2 && b2 > b3) {
            return Err(Error::parameter(format!(
                "cnoidal wave needs b1 > b2 > b3, got ({b1}, {b2}, {b3})"
            )));
        }
        if epsilon <= 0.0 {
            return Err(Error::parameter("epsilon must be positive"));
        }
        let m = (b2 - b3) / (b1 - b3);
        let big_k = complete_k(EllipticModulus::new(m)?)?;
        let k = std::f64::consts::PI * (b1 - b3).sqrt() / (6.0_f64.sqrt() * big_k);
        let l = q * k;
        let omega = k / 3.0 * (b1 + b2 + b3) + branch.alpha() * l * l / k;
        Ok(CnoidalParams {
            beta,
            q,
            phi0,
            epsilon,
            branch,
            m,
            big_k,
            k,
            l,
            omega,
        })
    }

    pub fn modulus(&self) -> f64 {
        self.m
    }

    pub fn wavenumber(&self) -> f64 {
        self.k
    }

    pub fn transverse_wavenumber(&self) -> f64 {
        self.l
    }

    pub fn frequency(&self) -> f64 {
        self.omega
    }

    /// Spatial period along x.
    pub fn period_x(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.epsilon / self.k
    }

    /// Mean of `u` over one period (needed to build zero-mean initial data).
    pub fn mean(&self) -> f64 {
        let [b1, b2, b3] = self.beta;
        let avg_cn2 = mean_cn_squared(EllipticModulus::new(self.m).expect("m in (0,1)"))
            .expect("m < 1 by construction");
        b1 + b3 - b2 + 2.0 * (b2 - b3) * avg_cn2
    }

    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        let [b1, b2, b3] = self.beta;
        let phase = self.big_k * (self.k * x + self.l * y - self.omega * t)
            / (std::f64::consts::PI * self.epsilon)
            + self.phi0;
        let cn = jacobi_cn(phase, EllipticModulus::new(self.m).expect("m in (0,1)"))
            .expect("finite phase");
        b1 + b3 - b2 + 2.0 * (b2 - b3) * cn * cn
    }
}

/// Line one-soliton of KP: `u = 12 k^2 sech^2((k x + l y - w t + phi0)/eps)`
/// with `w = 4 k^3 + alpha l^2 / k`.
#[derive(Debug, Clone, Copy)]
pub struct SolitonParams {
    pub k: f64,
    pub l: f64,
    pub phi0: f64,
    pub epsilon: f64,
    pub branch: KpBranch,
}

impl SolitonParams {
    pub fn new(k: f64, l: f64, phi0: f64, epsilon: f64, branch: KpBranch) -> Result<Self> {
        if k == 0.0 {
            return Err(Error::parameter("soliton wavenumber k must be nonzero"));
        }
        if epsilon <= 0.0 {
            return Err(Error::parameter("epsilon must be positive"));
        }
        Ok(SolitonParams {
            k,
            l,
            phi0,
            epsilon,
            branch,
        })
    }

    pub fn frequency(&self) -> f64 {
        4.0 * self.k.powi(3) + self.branch.alpha() * self.l * self.l / self.k
    }

    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        let arg = (self.k * x + self.l * y - self.frequency() * t + self.phi0) / self.epsilon;
        let s = 1.0 / arg.cosh();
        12.0 * self.k * self.k * s * s
    }
}

/// Lump soliton of KPI, algebraically decaying, with maximum `24 b^2` on the
/// trajectory `x = (a^2 + 3 b^2) t`, `y = -2 a t`.
#[derive(Debug, Clone, Copy)]
pub struct LumpParams {
    pub a: f64,
    pub b: f64,
    pub epsilon: f64,
}

impl LumpParams {
    pub fn new(a: f64, b: f64, epsilon: f64) -> Result<Self> {
        if b == 0.0 {
            return Err(Error::parameter("lump amplitude parameter b must be nonzero"));
        }
        if epsilon <= 0.0 {
            return Err(Error::parameter("epsilon must be positive"));
        }
        Ok(LumpParams { a, b, epsilon })
    }

    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        let (a, b, eps) = (self.a, self.b, self.epsilon);
        let xs = (x + a * y + (a * a - 3.0 * b * b) * t) / eps;
        let ys = (y + 2.0 * a * t) / eps;
        let b2 = b * b;
        let core = xs * xs + 3.0 * b2 * ys * ys + 1.0 / b2;
        24.0 * (core - 2.0 * xs * xs) / (core * core)
    }

    /// Location of the maximum at time `t`.
    pub fn peak_position(&self, t: f64) -> (f64, f64) {
        (
            (self.a * self.a + 3.0 * self.b * self.b) * t,
            -2.0 * self.a * t,
        )
    }
}

/// Rational Peregrine breather of the focusing NLS equation (at `eps = 1`),
/// on background `b` with carrier slope `a`.
#[derive(Debug, Clone, Copy)]
pub struct BreatherParams {
    pub a: f64,
    pub b: f64,
}

impl BreatherParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if b <= 0.0 {
            return Err(Error::parameter("breather background b must be positive"));
        }
        Ok(BreatherParams { a, b })
    }

    /// `Q(x, y; a, b)`; `|Q| -> b` as `|x| -> inf` and `sup |Q| = 3 b`.
    pub fn eval(&self, x: f64, y: f64) -> Complex64 {
        let (a, b) = (self.a, self.b);
        let b2 = b * b;
        let xi = x + a * y;
        let denom = 1.0 + 4.0 * b2 * xi * xi + 4.0 * b2 * b2 * y * y;
        let rational = Complex64::new(1.0, 0.0)
            - 4.0 * Complex64::new(1.0, 2.0 * b2 * y) / denom;
        let phase = Complex64::new(0.0, -(a * x + (0.5 * a * a - b2) * y)).exp();
        b * phase * rational
    }
}

/// KPI lump expressed through the Peregrine breather:
/// `12 |Q(x - (a^2+3b^2) t, 2 sqrt(3) (y + 2 a t); a/(2 sqrt 3), b/2)|^2 - 3 b^2`,
/// which coincides pointwise with [`LumpParams::eval`] at `eps = 1`.
pub fn lump_from_breather(a: f64, b: f64, x: f64, y: f64, t: f64) -> Result<f64> {
    let breather = BreatherParams::new(a / (2.0 * 3.0_f64.sqrt()), b / 2.0)?;
    let xi = x - (a * a + 3.0 * b * b) * t;
    let eta = 2.0 * 3.0_f64.sqrt() * (y + 2.0 * a * t);
    Ok(12.0 * breather.eval(xi, eta).norm_sqr() - 3.0 * b * b)
}

/// Localised dipole initial datum `u0 = -C0 d/dx sech^2(sqrt(x^2 + y^2))`,
/// evaluated as `2 C0 (x/r) sech^2(r) tanh(r)` with value 0 at the origin.
pub fn dsw_initial(c0: f64, x: f64, y: f64) -> f64 {
    let r = (x * x + y * y).sqrt();
    if r == 0.0 {
        return 0.0;
    }
    let s = 1.0 / r.cosh();
    2.0 * c0 * (x / r) * s * s * r.tanh()
}

/// Pseudo-rotation symmetry of KP: for a solution `u`, the returned evaluator
/// `(x, y, t) -> u(x + a y - alpha a^2 t, y - 2 alpha a t, t)` is again a
/// solution. Applied to a line soliton with `l = 0` it produces the soliton
/// with `l = a k`; applied with `a = 0` it is the identity.
pub fn pseudo_rotate<F>(u: F, a: f64, branch: KpBranch) -> impl Fn(f64, f64, f64) -> f64
where
    F: Fn(f64, f64, f64) -> f64,
{
    let alpha = branch.alpha();
    move |x: f64, y: f64, t: f64| u(x + a * y - alpha * a * a * t, y - 2.0 * alpha * a * t, t)
}
