//! Periodic 2D grids, Fourier transforms, multipliers and functionals.
//!
//! Conventions, fixed so that file outputs are bit-exact:
//! * the domain is `[-Lx, Lx] x [-Ly, Ly]` with `x_i = -Lx + i dx`;
//! * forward transforms are unnormalised, the inverse carries `1/(Nx Ny)`;
//! * wavenumbers are integer multiples of `pi/Lx`, `pi/Ly` in standard FFT
//!   ordering;
//! * multipliers containing odd powers of `1/k_x` or `k_x` vanish on the
//!   `k_x = 0` plane (projection onto zero x-mean data) and on the unpaired
//!   Nyquist plane, which keeps inverse transforms real to round-off.
//!
//! Physical arrays are `Ny` rows by `Nx` columns, row-major, so a row is a
//! line of constant `y`.

use std::sync::{Arc, Mutex, OnceLock};

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::solutions::KpBranch;
use crate::{Error, Result};

/// Periodic rectangle with power-of-two resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    kx: Vec<f64>,
    ky: Vec<f64>,
}

fn signed_index(j: usize, n: usize) -> i64 {
    if j < n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        for (n, name) in [(nx, "nx"), (ny, "ny")] {
            if n < 8 || !n.is_power_of_two() {
                return Err(Error::parameter(format!(
                    "{name} must be a power of two >= 8, got {n}"
                )));
            }
        }
        if lx <= 0.0 || ly <= 0.0 {
            return Err(Error::parameter("half-periods Lx, Ly must be positive"));
        }
        let kx = (0..nx)
            .map(|j| signed_index(j, nx) as f64 * std::f64::consts::PI / lx)
            .collect();
        let ky = (0..ny)
            .map(|j| signed_index(j, ny) as f64 * std::f64::consts::PI / ly)
            .collect();
        Ok(Grid2D {
            nx,
            ny,
            lx,
            ly,
            kx,
            ky,
        })
    }

    /// Default domain `[-5 pi, 5 pi]^2`.
    pub fn square(n: usize) -> Result<Self> {
        let l = 5.0 * std::f64::consts::PI;
        Grid2D::new(n, n, l, l)
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.lx / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        2.0 * self.ly / self.ny as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        -self.lx + i as f64 * self.dx()
    }

    pub fn y(&self, j: usize) -> f64 {
        -self.ly + j as f64 * self.dy()
    }

    pub fn kx(&self) -> &[f64] {
        &self.kx
    }

    pub fn ky(&self) -> &[f64] {
        &self.ky
    }

    /// Nearest grid indices to a physical point (periodic wrap).
    pub fn nearest_index(&self, x: f64, y: f64) -> (usize, usize) {
        let wrap = |v: f64, l: f64, n: usize, d: f64| -> usize {
            let idx = ((v + l) / d).round() as i64;
            (idx.rem_euclid(n as i64)) as usize
        };
        (
            wrap(x, self.lx, self.nx, self.dx()),
            wrap(y, self.ly, self.ny, self.dy()),
        )
    }

    /// Samples a function of `(x, y)` into a physical field.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64 + Sync) -> Field {
        let nx = self.nx;
        let mut data = Array2::<f64>::zeros((self.ny, nx));
        let dx = self.dx();
        let dy = self.dy();
        let (lx, ly) = (self.lx, self.ly);
        data.as_slice_mut()
            .expect("standard layout")
            .par_chunks_mut(nx)
            .enumerate()
            .for_each(|(j, row)| {
                let y = -ly + j as f64 * dy;
                for (i, v) in row.iter_mut().enumerate() {
                    *v = f(-lx + i as f64 * dx, y);
                }
            });
        Field {
            grid: self.clone(),
            data: FieldData::Physical(data),
        }
    }
}

/// Scalar state on a grid, in physical or spectral representation.
#[derive(Debug, Clone)]
pub enum FieldData {
    Physical(Array2<f64>),
    Spectral(Array2<Complex64>),
}

#[derive(Debug, Clone)]
pub struct Field {
    pub grid: Grid2D,
    pub data: FieldData,
}

impl Field {
    pub fn zeros(grid: &Grid2D) -> Field {
        Field {
            grid: grid.clone(),
            data: FieldData::Physical(Array2::zeros((grid.ny, grid.nx))),
        }
    }

    pub fn from_physical(grid: &Grid2D, data: Array2<f64>) -> Result<Field> {
        if data.dim() != (grid.ny, grid.nx) {
            return Err(Error::Structure(format!(
                "field shape {:?} does not match grid ({}, {})",
                data.dim(),
                grid.ny,
                grid.nx
            )));
        }
        Ok(Field {
            grid: grid.clone(),
            data: FieldData::Physical(data),
        })
    }

    pub fn is_physical(&self) -> bool {
        matches!(self.data, FieldData::Physical(_))
    }

    pub fn physical(&self) -> Result<&Array2<f64>> {
        match &self.data {
            FieldData::Physical(a) => Ok(a),
            FieldData::Spectral(_) => Err(Error::Structure(
                "expected physical representation".into(),
            )),
        }
    }

    pub fn spectral(&self) -> Result<&Array2<Complex64>> {
        match &self.data {
            FieldData::Spectral(a) => Ok(a),
            FieldData::Physical(_) => Err(Error::Structure(
                "expected spectral representation".into(),
            )),
        }
    }

    /// Physical copy of this field, transforming if needed.
    pub fn to_physical(&self) -> Field {
        match self.data {
            FieldData::Physical(_) => self.clone(),
            FieldData::Spectral(_) => transform(self),
        }
    }

    /// Spectral copy of this field, transforming if needed.
    pub fn to_spectral(&self) -> Field {
        match self.data {
            FieldData::Spectral(_) => self.clone(),
            FieldData::Physical(_) => transform(self),
        }
    }
}

// ---------------------------------------------------------------------------
// FFT engine
// ---------------------------------------------------------------------------

/// Planned 1D transforms for a fixed `(nx, ny)` pair.
pub struct Fft2 {
    nx: usize,
    ny: usize,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

fn planner() -> &'static Mutex<FftPlanner<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()))
}

impl Fft2 {
    pub fn new(nx: usize, ny: usize) -> Fft2 {
        let mut p = planner().lock().expect("fft planner poisoned");
        Fft2 {
            nx,
            ny,
            fwd_x: p.plan_fft(nx, FftDirection::Forward),
            inv_x: p.plan_fft(nx, FftDirection::Inverse),
            fwd_y: p.plan_fft(ny, FftDirection::Forward),
            inv_y: p.plan_fft(ny, FftDirection::Inverse),
        }
    }

    fn pass(fft: &Arc<dyn Fft<f64>>, data: &mut [Complex64], row_len: usize) {
        let scratch_len = fft.get_inplace_scratch_len();
        data.par_chunks_mut(row_len).for_each_init(
            || vec![Complex64::ZERO; scratch_len],
            |scratch, row| fft.process_with_scratch(row, scratch),
        );
    }

    /// Unnormalised forward 2D transform, in place. `work` must hold
    /// `nx * ny` elements.
    pub fn forward(&self, data: &mut [Complex64], work: &mut [Complex64]) {
        Self::pass(&self.fwd_x, data, self.nx);
        transpose(data, self.ny, self.nx, work);
        Self::pass(&self.fwd_y, work, self.ny);
        transpose(work, self.nx, self.ny, data);
    }

    /// Inverse 2D transform with `1/(Nx Ny)` normalisation, in place.
    pub fn inverse(&self, data: &mut [Complex64], work: &mut [Complex64]) {
        Self::pass(&self.inv_x, data, self.nx);
        transpose(data, self.ny, self.nx, work);
        Self::pass(&self.inv_y, work, self.ny);
        transpose(work, self.nx, self.ny, data);
        let scale = 1.0 / (self.nx * self.ny) as f64;
        data.par_chunks_mut(self.nx)
            .for_each(|row| row.iter_mut().for_each(|v| *v *= scale));
    }
}

/// Out-of-place transpose of a `rows x cols` row-major matrix into `dst`
/// (`cols x rows`), cache-blocked.
pub(crate) fn transpose(src: &[Complex64], rows: usize, cols: usize, dst: &mut [Complex64]) {
    const B: usize = 64;
    dst.par_chunks_mut(B * rows)
        .enumerate()
        .for_each(|(block, chunk)| {
            let j0 = block * B;
            let jn = (j0 + B).min(cols);
            for i0 in (0..rows).step_by(B) {
                let i1 = (i0 + B).min(rows);
                for j in j0..jn {
                    let drow = &mut chunk[(j - j0) * rows..(j - j0) * rows + rows];
                    for i in i0..i1 {
                        drow[i] = src[i * cols + j];
                    }
                }
            }
        });
}

/// Switches representation. A round trip reproduces the data to round-off.
pub fn transform(f: &Field) -> Field {
    let grid = f.grid.clone();
    let fft = Fft2::new(grid.nx, grid.ny);
    let mut work = vec![Complex64::ZERO; grid.nx * grid.ny];
    match &f.data {
        FieldData::Physical(a) => {
            let mut buf: Vec<Complex64> = a
                .as_slice()
                .expect("standard layout")
                .iter()
                .map(|&v| Complex64::new(v, 0.0))
                .collect();
            fft.forward(&mut buf, &mut work);
            let arr = Array2::from_shape_vec((grid.ny, grid.nx), buf).expect("shape");
            Field {
                grid,
                data: FieldData::Spectral(arr),
            }
        }
        FieldData::Spectral(a) => {
            let mut buf: Vec<Complex64> = a.as_slice().expect("standard layout").to_vec();
            fft.inverse(&mut buf, &mut work);
            let re: Vec<f64> = buf.iter().map(|v| v.re).collect();
            let arr = Array2::from_shape_vec((grid.ny, grid.nx), re).expect("shape");
            Field {
                grid,
                data: FieldData::Physical(arr),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Fourier multipliers
// ---------------------------------------------------------------------------

/// Signed wavenumber used in odd multipliers: zero on the `k_x = 0` plane and
/// on the unpaired Nyquist plane.
fn kx_odd(grid: &Grid2D, jx: usize) -> f64 {
    if jx == 0 || jx == grid.nx / 2 {
        0.0
    } else {
        grid.kx()[jx]
    }
}

/// Symbol of the linear KP operator,
/// `L = i (eps^2 k_x^3 - alpha k_y^2 / k_x)`, purely imaginary, zero on the
/// `k_x = 0` and Nyquist planes.
pub fn linear_symbol(grid: &Grid2D, epsilon: f64, branch: KpBranch) -> Array2<Complex64> {
    let alpha = branch.alpha();
    let e2 = epsilon * epsilon;
    let mut sym = Array2::<Complex64>::zeros((grid.ny, grid.nx));
    for jy in 0..grid.ny {
        let ky = grid.ky()[jy];
        for jx in 0..grid.nx {
            let kx = kx_odd(grid, jx);
            if kx != 0.0 {
                sym[(jy, jx)] = Complex64::new(0.0, e2 * kx.powi(3) - alpha * ky * ky / kx);
            }
        }
    }
    sym
}

/// 2/3-rule dealiasing mask (1 inside the retained band, 0 outside).
pub fn dealias_mask(grid: &Grid2D) -> Array2<f64> {
    let mut mask = Array2::<f64>::zeros((grid.ny, grid.nx));
    for jy in 0..grid.ny {
        let sy = signed_index(jy, grid.ny).unsigned_abs() as usize;
        for jx in 0..grid.nx {
            let sx = signed_index(jx, grid.nx).unsigned_abs() as usize;
            if sx <= grid.nx / 3 && sy <= grid.ny / 3 {
                mask[(jy, jx)] = 1.0;
            }
        }
    }
    mask
}

/// Nonlinear term `N(u) = -(i/2) k_x FFT(u^2)`, with `u^2` formed pointwise in
/// physical space. Returns a spectral field.
pub fn nonlinear_term(u: &Field, dealias: bool) -> Result<Field> {
    let phys = u.physical()?;
    let grid = &u.grid;
    let squared = Field {
        grid: grid.clone(),
        data: FieldData::Physical(phys.mapv(|v| v * v)),
    };
    let mut hat = transform(&squared);
    let mask = if dealias {
        Some(dealias_mask(grid))
    } else {
        None
    };
    if let FieldData::Spectral(a) = &mut hat.data {
        for jy in 0..grid.ny {
            for jx in 0..grid.nx {
                let kx = kx_odd(grid, jx);
                let m = mask.as_ref().map_or(1.0, |m| m[(jy, jx)]);
                a[(jy, jx)] *= Complex64::new(0.0, -0.5 * kx * m);
            }
        }
    }
    Ok(hat)
}

/// `d/dx^{-1}` multiplier `-i/k_x`; all `k_x = 0` modes are projected out.
pub fn antiderivative_x(f: &Field) -> Result<Field> {
    let a = f.spectral()?;
    let grid = &f.grid;
    let mut out = a.clone();
    for jy in 0..grid.ny {
        for jx in 0..grid.nx {
            let kx = kx_odd(grid, jx);
            out[(jy, jx)] = if kx == 0.0 {
                Complex64::ZERO
            } else {
                out[(jy, jx)] * Complex64::new(0.0, -1.0 / kx)
            };
        }
    }
    Ok(Field {
        grid: grid.clone(),
        data: FieldData::Spectral(out),
    })
}

/// Spectral `d/dx`.
pub fn derivative_x(f: &Field) -> Result<Field> {
    let a = f.spectral()?;
    let grid = &f.grid;
    let mut out = a.clone();
    for jy in 0..grid.ny {
        for jx in 0..grid.nx {
            out[(jy, jx)] *= Complex64::new(0.0, kx_odd(grid, jx));
        }
    }
    Ok(Field {
        grid: grid.clone(),
        data: FieldData::Spectral(out),
    })
}

/// Deterministic pairwise summation (independent of thread count).
pub(crate) fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 64 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// `L^2` norm `sqrt(dx dy sum u^2)`; accepts either representation
/// (spectral via Parseval).
pub fn l2_norm(f: &Field) -> f64 {
    let grid = &f.grid;
    let area = grid.dx() * grid.dy();
    match &f.data {
        FieldData::Physical(a) => {
            let sq: Vec<f64> = a.iter().map(|&v| v * v).collect();
            (area * pairwise_sum(&sq)).sqrt()
        }
        FieldData::Spectral(a) => {
            let sq: Vec<f64> = a.iter().map(|v| v.norm_sqr()).collect();
            (area * pairwise_sum(&sq) / (grid.nx * grid.ny) as f64).sqrt()
        }
    }
}

/// Max-abs over grid nodes (physical representation).
pub fn linf_norm(f: &Field) -> Result<f64> {
    let a = f.physical()?;
    Ok(a.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs())))
}

/// Conserved energy
/// `H = dx dy sum [ u^3/6 - (eps^2/2)(u_x)^2 + (alpha/2)(dx^{-1} u_y)^2 ]`,
/// with spectral derivatives. The sign of the transverse term is fixed by
/// requiring `dH/dt = 0` along `u_t = -d/dx (dH/du)`.
pub fn hamiltonian(f: &Field, epsilon: f64, branch: KpBranch) -> Result<f64> {
    let phys = f.to_physical();
    let grid = &f.grid;
    let hat = phys.to_spectral();
    let ux = transform(&derivative_x(&hat)?);
    // dx^{-1} d/dy has the real symbol k_y/k_x (zero where k_x is projected).
    let v = {
        let a = hat.spectral()?;
        let mut out = a.clone();
        for jy in 0..grid.ny {
            let ky = grid.ky()[jy];
            for jx in 0..grid.nx {
                let kx = kx_odd(grid, jx);
                out[(jy, jx)] = if kx == 0.0 {
                    Complex64::ZERO
                } else {
                    out[(jy, jx)] * (ky / kx)
                };
            }
        }
        transform(&Field {
            grid: grid.clone(),
            data: FieldData::Spectral(out),
        })
    };
    let u = phys.physical()?;
    let uxp = ux.physical()?;
    let vp = v.physical()?;
    let alpha = branch.alpha();
    let e2 = epsilon * epsilon;
    let integrand: Vec<f64> = u
        .iter()
        .zip(uxp.iter())
        .zip(vp.iter())
        .map(|((&u, &ux), &v)| u * u * u / 6.0 - 0.5 * e2 * ux * ux + 0.5 * alpha * v * v)
        .collect();
    Ok(grid.dx() * grid.dy() * pairwise_sum(&integrand))
}

/// Resolution indicator: the largest coefficient modulus in the outermost 10%
/// of the normalised wavenumber radius, relative to the global maximum.
/// Small values (below ~1e-6) certify spatial resolution.
pub fn tail_indicator(f: &Field) -> Result<f64> {
    let a = f.spectral()?;
    let grid = &f.grid;
    let kx_max = grid.nx as f64 / 2.0 * std::f64::consts::PI / grid.lx;
    let ky_max = grid.ny as f64 / 2.0 * std::f64::consts::PI / grid.ly;
    let r_max = std::f64::consts::SQRT_2;
    let mut global: f64 = 0.0;
    let mut tail: f64 = 0.0;
    for jy in 0..grid.ny {
        let ry = (signed_index(jy, grid.ny) as f64 * std::f64::consts::PI / grid.ly) / ky_max;
        for jx in 0..grid.nx {
            let rx =
                (signed_index(jx, grid.nx) as f64 * std::f64::consts::PI / grid.lx) / kx_max;
            let modulus = a[(jy, jx)].norm();
            global = global.max(modulus);
            if (rx * rx + ry * ry).sqrt() >= 0.9 * r_max {
                tail = tail.max(modulus);
            }
        }
    }
    if global == 0.0 {
        Ok(0.0)
    } else {
        Ok(tail / global)
    }
}

/// Projects out the `k_x = 0` content (zero x-mean on every y-line), in the
/// spectral representation.
pub fn project_zero_x_mean(hat: &mut Array2<Complex64>) {
    for jy in 0..hat.nrows() {
        hat[(jy, 0)] = Complex64::ZERO;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid(n: usize) -> Grid2D {
        Grid2D::new(n, n, PI, PI).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid2D::new(1000, 64, 1.0, 1.0).is_err());
        assert!(Grid2D::new(4, 64, 1.0, 1.0).is_err());
        assert!(Grid2D::new(64, 64, -1.0, 1.0).is_err());
        let g = grid(16);
        let zeros_x = g.kx().iter().filter(|&&k| k == 0.0).count();
        let zeros_y = g.ky().iter().filter(|&&k| k == 0.0).count();
        assert_eq!((zeros_x, zeros_y), (1, 1));
    }

    #[test]
    fn constant_field_transform() {
        let g = grid(16);
        let f = g.sample(|_, _| 2.5);
        let hat = transform(&f);
        let a = hat.spectral().unwrap();
        assert!((a[(0, 0)].re - 2.5 * 256.0).abs() < 1e-10);
        let off: f64 = a.iter().skip(1).map(|v| v.norm()).fold(0.0, f64::max);
        // Only the zero mode is populated.
        let nonzero = a
            .indexed_iter()
            .filter(|(_, v)| v.norm() > 1e-9)
            .count();
        assert_eq!(nonzero, 1);
        assert!(off < 1e-9);
    }

    #[test]
    fn cosine_has_two_modes() {
        let g = grid(32);
        let f = g.sample(|x, _| x.cos());
        let hat = transform(&f);
        let a = hat.spectral().unwrap();
        let nonzero = a
            .indexed_iter()
            .filter(|(_, v)| v.norm() > 1e-8)
            .count();
        assert_eq!(nonzero, 2);
    }

    #[test]
    fn round_trip_error_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = grid(64);
        let data = Array2::from_shape_fn((64, 64), |_| rng.random_range(-1.0..1.0));
        let f = Field::from_physical(&g, data.clone()).unwrap();
        let back = transform(&transform(&f));
        let b = back.physical().unwrap();
        let scale = data.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
        let err = data
            .iter()
            .zip(b.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert!(err < 1e-12 * scale.max(1.0));
    }

    #[test]
    fn linear_symbol_values() {
        let g = Grid2D::new(16, 16, PI, PI).unwrap();
        let sym = linear_symbol(&g, 0.1, KpBranch::KpI);
        // (kx, ky) = (1, 0): L = i eps^2 = 0.01 i.
        assert!((sym[(0, 1)] - Complex64::new(0.0, 0.01)).norm() < 1e-15);
        // kx = 0 plane vanishes.
        for jy in 0..16 {
            assert_eq!(sym[(jy, 0)], Complex64::ZERO);
        }
        let sym = linear_symbol(&g, 1.0, KpBranch::KpI);
        assert!((sym[(1, 1)] - Complex64::new(0.0, 2.0)).norm() < 1e-14);
        let sym = linear_symbol(&g, 1.0, KpBranch::KpII);
        assert!(sym[(1, 1)].norm() < 1e-14);
        // Purely imaginary everywhere.
        let sym = linear_symbol(&g, 0.3, KpBranch::KpII);
        assert!(sym.iter().all(|v| v.re == 0.0));
    }

    #[test]
    fn nonlinear_term_basics() {
        let g = grid(32);
        let zero = g.sample(|_, _| 0.0);
        let n = nonlinear_term(&zero, false).unwrap();
        assert!(n.spectral().unwrap().iter().all(|v| v.norm() == 0.0));
        let constant = g.sample(|_, _| 3.0);
        let n = nonlinear_term(&constant, false).unwrap();
        assert!(n.spectral().unwrap().iter().all(|v| v.norm() < 1e-10));
    }

    #[test]
    fn nonlinear_term_matches_analytic_derivative() {
        // N(sin x) corresponds to -(1/2) d/dx sin^2 x = -sin x cos x.
        let g = grid(32);
        let u = g.sample(|x, _| x.sin());
        let n = nonlinear_term(&u, false).unwrap();
        let n_phys = transform(&n);
        let expected = g.sample(|x, _| -x.sin() * x.cos());
        let err = n_phys
            .physical()
            .unwrap()
            .iter()
            .zip(expected.physical().unwrap().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert!(err < 1e-12, "err {err}");
    }

    #[test]
    fn antiderivative_of_cosine() {
        let g = grid(32);
        let hat = transform(&g.sample(|x, _| x.cos()));
        let anti = transform(&antiderivative_x(&hat).unwrap());
        let expected = g.sample(|x, _| x.sin());
        let err = anti
            .physical()
            .unwrap()
            .iter()
            .zip(expected.physical().unwrap().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn antiderivative_kills_zero_kx() {
        let g = grid(16);
        let hat = transform(&g.sample(|_, y| 1.0 + y.sin()));
        let anti = antiderivative_x(&hat).unwrap();
        assert!(anti.spectral().unwrap().iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn derivative_antiderivative_composition() {
        // d/dx (dx^{-1} f) = f - x-mean(f) for band-limited f.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = grid(32);
        // Random trigonometric polynomial below Nyquist.
        let mut coef = vec![];
        for _ in 0..6 {
            coef.push((
                rng.random_range(1..10) as f64,
                rng.random_range(0..10) as f64,
                rng.random_range(-1.0..1.0),
                rng.random_range(0.0..PI),
            ));
        }
        let f = g.sample(|x, y| {
            coef.iter()
                .map(|&(kx, ky, a, p)| a * (kx * x + ky * y + p).cos())
                .sum()
        });
        let hat = transform(&f);
        let composed = transform(&derivative_x(&antiderivative_x(&hat).unwrap()).unwrap());
        // x-mean per row.
        let orig = f.physical().unwrap();
        let comp = composed.physical().unwrap();
        for j in 0..g.ny {
            let mean: f64 = (0..g.nx).map(|i| orig[(j, i)]).sum::<f64>() / g.nx as f64;
            for i in 0..g.nx {
                assert!((comp[(j, i)] - (orig[(j, i)] - mean)).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn norms_on_zero_and_sine() {
        let g = grid(32);
        let zero = g.sample(|_, _| 0.0);
        assert_eq!(l2_norm(&zero), 0.0);
        assert_eq!(linf_norm(&zero).unwrap(), 0.0);
        assert_eq!(hamiltonian(&zero, 0.5, KpBranch::KpI).unwrap(), 0.0);

        // l2(sin x)^2 = half the domain area.
        let f = g.sample(|x, _| x.sin());
        let area = 4.0 * PI * PI;
        assert!((l2_norm(&f).powi(2) - 0.5 * area).abs() < 1e-10);
        assert!((linf_norm(&f).unwrap() - 1.0).abs() < 1e-12);
        // H(sin x) = -(eps^2/2) * integral of cos^2 = -(eps^2/2)(area/2).
        let h = hamiltonian(&f, 0.5, KpBranch::KpI).unwrap();
        assert!((h - (-0.125 * 0.5 * area)).abs() < 1e-10, "H = {h}");
    }

    #[test]
    fn parseval_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = grid(64);
        let data = Array2::from_shape_fn((64, 64), |_| rng.random_range(-1.0..1.0));
        let f = Field::from_physical(&g, data).unwrap();
        let a = l2_norm(&f);
        let b = l2_norm(&transform(&f));
        assert!((a - b).abs() < 1e-10 * a);
    }

    #[test]
    fn tail_indicator_cases() {
        let g = grid(64);
        // Band-limited: zero tail.
        let f = transform(&g.sample(|x, y| (2.0 * x).cos() + y.sin()));
        assert!(tail_indicator(&f).unwrap() < 1e-12);
        // White noise: order one.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let noise = Field::from_physical(
            &g,
            Array2::from_shape_fn((64, 64), |_| rng.random_range(-1.0..1.0)),
        )
        .unwrap();
        assert!(tail_indicator(&transform(&noise)).unwrap() > 0.05);
    }

    #[test]
    fn tail_indicator_resolved_profile() {
        // sech^2(x/eps) with eps = 0.1 on Nx = 1024, Lx = 5 pi is fully
        // resolved: the outer annulus is empty of content.
        let g = Grid2D::new(1024, 8, 5.0 * PI, 5.0 * PI).unwrap();
        let f = g.sample(|x, _| {
            let s = 1.0 / (x / 0.1).cosh();
            s * s
        });
        assert!(tail_indicator(&transform(&f)).unwrap() < 1e-8);
    }

    #[test]
    fn differentiation_multiplier_consistency() {
        let g = grid(64);
        for kx in [1.0, 3.0, 7.0] {
            let f = g.sample(|x, _| (kx * x).sin());
            let d = transform(&derivative_x(&transform(&f)).unwrap());
            let expected = g.sample(|x, _| kx * (kx * x).cos());
            let err = d
                .physical()
                .unwrap()
                .iter()
                .zip(expected.physical().unwrap().iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            assert!(err < 1e-11 * kx.max(1.0), "kx={kx}: err {err}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn round_trip_random(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = grid(16);
            let data = Array2::from_shape_fn((16, 16), |_| rng.random_range(-5.0..5.0));
            let f = Field::from_physical(&g, data.clone()).unwrap();
            let back = transform(&transform(&f));
            let b = back.physical().unwrap();
            let scale = data.iter().fold(1.0_f64, |m, &v| m.max(v.abs()));
            for (x, y) in data.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-12 * scale);
            }
        }
    }
}
