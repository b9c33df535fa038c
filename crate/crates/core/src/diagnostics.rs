//! Peak detection, lump fitting, lattice statistics and the scaling-law
//! regressions used in the amplitude/position studies.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};

use crate::spectral::Field;
use crate::{Error, Result};

/// A local maximum refined to sub-cell accuracy.
#[derive(Debug, Clone, Copy)]
pub struct Peak {
    pub x: f64,
    pub y: f64,
    pub height: f64,
    pub ix: usize,
    pub iy: usize,
}

/// Small-problem nonlinear fit outcome.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// Standard-error proxy `sqrt(diag((J^T J)^{-1}) * SSE / (n - p))`.
    pub stderr: Vec<f64>,
    pub residual_rms: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Local maxima above `rel_threshold` times the global maximum, each refined
/// by a 2D quadratic fit on its 3x3 neighbourhood (periodic wrap). Sorted by
/// height, highest first.
pub fn find_peaks(f: &Field, rel_threshold: f64) -> Result<Vec<Peak>> {
    if !(0.0..1.0).contains(&rel_threshold) {
        return Err(Error::parameter("rel_threshold must lie in (0, 1)"));
    }
    let grid = &f.grid;
    let a = f.physical()?;
    let (ny, nx) = (grid.ny, grid.nx);
    let global = a.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let floor = rel_threshold * global;
    let mut peaks = Vec::new();
    let wrap = |i: i64, n: usize| -> usize { i.rem_euclid(n as i64) as usize };
    for iy in 0..ny {
        for ix in 0..nx {
            let v = a[(iy, ix)];
            if v <= floor || global <= 0.0 {
                continue;
            }
            let mut is_max = true;
            'nbr: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    if a[(wrap(iy as i64 + dy, ny), wrap(ix as i64 + dx, nx))] >= v {
                        is_max = false;
                        break 'nbr;
                    }
                }
            }
            if !is_max {
                continue;
            }
            let s = |dx: i64, dy: i64| a[(wrap(iy as i64 + dy, ny), wrap(ix as i64 + dx, nx))];
            let gx = 0.5 * (s(1, 0) - s(-1, 0));
            let gy = 0.5 * (s(0, 1) - s(0, -1));
            let hxx = s(1, 0) - 2.0 * v + s(-1, 0);
            let hyy = s(0, 1) - 2.0 * v + s(0, -1);
            let hxy = 0.25 * (s(1, 1) - s(1, -1) - s(-1, 1) + s(-1, -1));
            let det = hxx * hyy - hxy * hxy;
            let (mut dx, mut dy) = if det.abs() > 1e-300 {
                ((-gx * hyy + gy * hxy) / det, (-gy * hxx + gx * hxy) / det)
            } else {
                (0.0, 0.0)
            };
            // The refinement stays within one cell of the grid argmax.
            dx = dx.clamp(-0.5, 0.5);
            dy = dy.clamp(-0.5, 0.5);
            let height = v
                + gx * dx
                + gy * dy
                + 0.5 * (hxx * dx * dx + 2.0 * hxy * dx * dy + hyy * dy * dy);
            peaks.push(Peak {
                x: grid.x(ix) + dx * grid.dx(),
                y: grid.y(iy) + dy * grid.dy(),
                height,
                ix,
                iy,
            });
        }
    }
    peaks.sort_by(|p, q| q.height.partial_cmp(&p.height).unwrap());
    Ok(peaks)
}

/// Lump model at `t = 0` with free parameters `(a, b, x0, y0)` and fixed
/// dispersion `eps`.
pub fn lump_model(params: &[f64; 4], eps: f64, x: f64, y: f64) -> f64 {
    let [a, b, x0, y0] = *params;
    let ys = (y - y0) / eps;
    let xs = (x - x0) / eps + a * ys;
    let b2 = b * b;
    let p = xs * xs + 3.0 * b2 * ys * ys + 1.0 / b2;
    24.0 * (p - 2.0 * xs * xs) / (p * p)
}

fn lump_model_jacobian(params: &[f64; 4], eps: f64, x: f64, y: f64) -> [f64; 4] {
    let [a, b, x0, y0] = *params;
    let ys = (y - y0) / eps;
    let xs = (x - x0) / eps + a * ys;
    let b2 = b * b;
    let p = xs * xs + 3.0 * b2 * ys * ys + 1.0 / b2;
    let g_p = 1.0 / (p * p) - 2.0 * (p - 2.0 * xs * xs) / (p * p * p);
    // du/dX and du/dY for the scaled coordinates.
    let du_dx = 24.0 * 2.0 * xs * (g_p - 2.0 / (p * p));
    let du_dy = 24.0 * g_p * 6.0 * b2 * ys;
    let du_db = 24.0 * g_p * (6.0 * b * ys * ys - 2.0 / (b2 * b));
    [
        du_dx * ys,                                  // d/da
        du_db,                                       // d/db
        du_dx * (-1.0 / eps),                        // d/dx0
        du_dx * (-a / eps) + du_dy * (-1.0 / eps),   // d/dy0
    ]
}

/// Damped Gauss-Newton fit of the lump model on a square window of half-width
/// `window` cells around `seed`. Initialisation: `b = sqrt(height/24)`,
/// `a = 0`, centre at the seed. Converges when the relative step drops below
/// `1e-10`, capped at 100 iterations.
pub fn fit_lump(f: &Field, seed: &Peak, window: usize, eps: f64) -> Result<FitResult> {
    if window < 8 {
        return Err(Error::parameter("fit window must be at least 8 cells"));
    }
    let grid = &f.grid;
    let a = f.physical()?;
    if seed.height <= 0.0 {
        return Err(Error::parameter("seed peak must be positive"));
    }
    // Window samples with unwrapped coordinates around the seed.
    let mut pts = Vec::with_capacity((2 * window + 1).pow(2));
    let w = window as i64;
    for dy in -w..=w {
        for dx in -w..=w {
            let iy = (seed.iy as i64 + dy).rem_euclid(grid.ny as i64) as usize;
            let ix = (seed.ix as i64 + dx).rem_euclid(grid.nx as i64) as usize;
            let x = grid.x(seed.ix) + dx as f64 * grid.dx();
            let y = grid.y(seed.iy) + dy as f64 * grid.dy();
            pts.push((x, y, a[(iy, ix)]));
        }
    }
    let mut params = [0.0, (seed.height / 24.0).sqrt(), seed.x, seed.y];
    let n = pts.len();
    let sse = |p: &[f64; 4]| -> f64 {
        pts.iter()
            .map(|&(x, y, v)| {
                let r = v - lump_model(p, eps, x, y);
                r * r
            })
            .sum()
    };
    let mut lambda = 1e-3;
    let mut current_sse = sse(&params);
    let mut converged = false;
    let mut iterations = 0;
    for iter in 0..100 {
        iterations = iter + 1;
        // Normal equations.
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for &(x, y, v) in &pts {
            let r = v - lump_model(&params, eps, x, y);
            let jac = lump_model_jacobian(&params, eps, x, y);
            for i in 0..4 {
                jtr[i] += jac[i] * r;
                for j in 0..4 {
                    jtj[(i, j)] += jac[i] * jac[j];
                }
            }
        }
        // Levenberg-style damping on the diagonal.
        let mut trial_params = params;
        let mut accepted = false;
        for _ in 0..12 {
            let mut damped = jtj;
            for i in 0..4 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(delta) = damped.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            for i in 0..4 {
                trial_params[i] = params[i] + delta[i];
            }
            if trial_params[1] <= 0.0 {
                lambda *= 10.0;
                continue;
            }
            let trial_sse = sse(&trial_params);
            if trial_sse <= current_sse {
                let scale: f64 = params.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-30);
                let step: f64 = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
                params = trial_params;
                current_sse = trial_sse;
                lambda = (lambda / 10.0).max(1e-14);
                accepted = true;
                if step < 1e-10 * scale {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No usable downhill step at any damping: treat as stalled.
            converged = current_sse <= 1e-20 * seed.height * seed.height * n as f64
                || jtr.norm() < 1e-10 * seed.height;
            break;
        }
        if converged {
            break;
        }
    }
    // Standard-error proxy from the undamped normal matrix.
    let mut jtj = Matrix4::<f64>::zeros();
    for &(x, y, _) in &pts {
        let jac = lump_model_jacobian(&params, eps, x, y);
        for i in 0..4 {
            for j in 0..4 {
                jtj[(i, j)] += jac[i] * jac[j];
            }
        }
    }
    let dof = (n.saturating_sub(4)).max(1) as f64;
    let variance = current_sse / dof;
    let stderr = match jtj.try_inverse() {
        Some(inv) => (0..4).map(|i| (inv[(i, i)].max(0.0) * variance).sqrt()).collect(),
        None => vec![f64::NAN; 4],
    };
    Ok(FitResult {
        params: params.to_vec(),
        stderr,
        residual_rms: (current_sse / n as f64).sqrt(),
        converged,
        iterations,
    })
}

/// Subtracts a fitted lump from the field, pointwise over the whole grid.
pub fn subtract_fitted_lump(f: &Field, fit: &FitResult, eps: f64) -> Result<Field> {
    if fit.params.len() != 4 {
        return Err(Error::parameter("expected a 4-parameter lump fit"));
    }
    let params = [fit.params[0], fit.params[1], fit.params[2], fit.params[3]];
    let grid = f.grid.clone();
    let a = f.physical()?;
    let mut out = a.clone();
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            out[(iy, ix)] -= lump_model(&params, eps, grid.x(ix), grid.y(iy));
        }
    }
    Field::from_physical(&grid, out)
}

/// Mean Euclidean nearest-neighbour distance among the peaks.
pub fn lattice_spacing(peaks: &[Peak]) -> Result<(f64, usize)> {
    if peaks.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "lattice spacing needs at least 2 peaks, got {}",
            peaks.len()
        )));
    }
    let mut total = 0.0;
    for (i, p) in peaks.iter().enumerate() {
        let mut nearest = f64::INFINITY;
        for (j, q) in peaks.iter().enumerate() {
            if i != j {
                let d = ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt();
                nearest = nearest.min(d);
            }
        }
        total += nearest;
    }
    Ok((total / peaks.len() as f64, peaks.len()))
}

/// Ordinary least squares for `y = slope x + intercept`.
pub fn fit_linear(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InsufficientData(
            "linear fit needs at least two (x, y) pairs".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all x values identical".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Least squares for `y = c1 + c2 x^beta` by damped Gauss-Newton, with `beta`
/// initialised from the log-log slope of consecutive difference quotients.
/// Underdetermined or degenerate data is reported via `converged = false`.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<FitResult> {
    if xs.len() != ys.len() {
        return Err(Error::Structure("xs and ys lengths differ".into()));
    }
    if xs.iter().any(|&x| x <= 0.0) {
        return Err(Error::Domain("power-law fit needs positive x".into()));
    }
    let n = xs.len();
    let my = ys.iter().sum::<f64>() / n.max(1) as f64;
    let var: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if n < 4 || var < 1e-24 * (1.0 + my * my) * n as f64 {
        // Underdetermined or flat: beta unidentifiable.
        return Ok(FitResult {
            params: vec![my, 0.0, 0.0],
            stderr: vec![f64::NAN; 3],
            residual_rms: (var / n.max(1) as f64).sqrt(),
            converged: false,
            iterations: 0,
        });
    }
    // Sort by x for the difference-quotient initialisation.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| xs[i].partial_cmp(&xs[j]).unwrap());
    let xs_s: Vec<f64> = order.iter().map(|&i| xs[i]).collect();
    let ys_s: Vec<f64> = order.iter().map(|&i| ys[i]).collect();
    if xs_s.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Domain("x values must be distinct".into()));
    }
    let mut logs = Vec::new();
    for i in 0..n - 1 {
        let d = (ys_s[i + 1] - ys_s[i]) / (xs_s[i + 1] - xs_s[i]);
        if d.abs() > 0.0 {
            logs.push(((0.5 * (xs_s[i] + xs_s[i + 1])).ln(), d.abs().ln()));
        }
    }
    let beta0 = if logs.len() >= 2 {
        let lx: Vec<f64> = logs.iter().map(|p| p.0).collect();
        let ly: Vec<f64> = logs.iter().map(|p| p.1).collect();
        match fit_linear(&lx, &ly) {
            Ok((slope, _)) => (slope + 1.0).clamp(-6.0, 6.0),
            Err(_) => 1.0,
        }
    } else {
        1.0
    };
    // Linear solve for (c1, c2) at fixed beta gives the starting point.
    let linear_at = |beta: f64| -> (f64, f64, f64) {
        let zs: Vec<f64> = xs_s.iter().map(|x| x.powf(beta)).collect();
        match fit_linear(&zs, &ys_s) {
            Ok((c2, c1)) => {
                let sse: f64 = xs_s
                    .iter()
                    .zip(&ys_s)
                    .map(|(&x, &y)| {
                        let r = y - c1 - c2 * x.powf(beta);
                        r * r
                    })
                    .sum();
                (c1, c2, sse)
            }
            Err(_) => (my, 0.0, f64::INFINITY),
        }
    };
    let (c1, c2, sse0) = linear_at(beta0);
    let mut p = [c1, c2, beta0];
    let mut current_sse = sse0;
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    for iter in 0..200 {
        iterations = iter + 1;
        let mut jtj = DMatrix::<f64>::zeros(3, 3);
        let mut jtr = DVector::<f64>::zeros(3);
        for (&x, &y) in xs_s.iter().zip(&ys_s) {
            let xb = x.powf(p[2]);
            let r = y - p[0] - p[1] * xb;
            let jac = [1.0, xb, p[1] * xb * x.ln()];
            for i in 0..3 {
                jtr[i] += jac[i] * r;
                for j in 0..3 {
                    jtj[(i, j)] += jac[i] * jac[j];
                }
            }
        }
        let mut accepted = false;
        for _ in 0..15 {
            let mut damped = jtj.clone();
            for i in 0..3 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(delta) = damped.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + delta[0], p[1] + delta[1], p[2] + delta[2]];
            let trial_sse: f64 = xs_s
                .iter()
                .zip(&ys_s)
                .map(|(&x, &y)| {
                    let r = y - trial[0] - trial[1] * x.powf(trial[2]);
                    r * r
                })
                .sum();
            if trial_sse.is_finite() && trial_sse <= current_sse {
                let scale: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-30);
                let step: f64 = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
                p = trial;
                current_sse = trial_sse;
                lambda = (lambda / 10.0).max(1e-14);
                accepted = true;
                if step < 1e-10 * scale {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            converged = jtr.norm() < 1e-9 * (1.0 + current_sse.sqrt());
            break;
        }
        if converged {
            break;
        }
    }
    // If c2 degenerated to ~0, beta is unidentifiable.
    let c2_scale = ys_s.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if p[1].abs() < 1e-12 * c2_scale.max(1.0) {
        converged = false;
    }
    let mut jtj = DMatrix::<f64>::zeros(3, 3);
    for &x in &xs_s {
        let xb = x.powf(p[2]);
        let jac = [1.0, xb, p[1] * xb * x.ln()];
        for i in 0..3 {
            for j in 0..3 {
                jtj[(i, j)] += jac[i] * jac[j];
            }
        }
    }
    let dof = (n.saturating_sub(3)).max(1) as f64;
    let variance = current_sse / dof;
    let stderr = match jtj.try_inverse() {
        Some(inv) => (0..3)
            .map(|i| (inv[(i, i)].max(0.0) * variance).sqrt())
            .collect(),
        None => vec![f64::NAN; 3],
    };
    Ok(FitResult {
        params: p.to_vec(),
        stderr,
        residual_rms: (current_sse / n as f64).sqrt(),
        converged,
        iterations,
    })
}

/// Scaling fit of the first-lump position proxy: for runs
/// `(eps, x_max, t_max, u_max)` the combination `x_max - (u_max/8) t_max`
/// is fitted to `c1 + c2 eps^beta`.
pub fn lump_position_scaling(runs: &[(f64, f64, f64, f64)]) -> Result<FitResult> {
    let xs: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let zs: Vec<f64> = runs
        .iter()
        .map(|&(_, x_max, t_max, u_max)| x_max - u_max / 8.0 * t_max)
        .collect();
    fit_power_law(&xs, &zs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solutions::LumpParams;
    use crate::spectral::Grid2D;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn lump_field(grid: &Grid2D, a: f64, b: f64, eps: f64, x0: f64, y0: f64) -> Field {
        let lump = LumpParams::new(a, b, eps).unwrap();
        grid.sample(move |x, y| lump.eval(x - x0, y - y0, 0.0))
    }

    #[test]
    fn single_lump_peak() {
        let grid = Grid2D::square(256).unwrap();
        let f = lump_field(&grid, 0.0, 1.0, 1.0, 1.7, -2.3);
        let peaks = find_peaks(&f, 0.3).unwrap();
        assert_eq!(peaks.len(), 1);
        let p = &peaks[0];
        assert!(
            ((p.x - 1.7).powi(2) + (p.y + 2.3).powi(2)).sqrt() < 0.1 * grid.dx(),
            "peak at ({}, {})",
            p.x,
            p.y
        );
        assert!((p.height - 24.0).abs() < 0.024, "height {}", p.height);
    }

    #[test]
    fn constant_field_has_no_peaks() {
        let grid = Grid2D::square(32).unwrap();
        let f = grid.sample(|_, _| 3.0);
        assert!(find_peaks(&f, 0.5).unwrap().is_empty());
    }

    #[test]
    fn two_lumps_ordered_by_height() {
        let grid = Grid2D::square(256).unwrap();
        let l1 = LumpParams::new(0.0, 1.0, 1.0).unwrap();
        let l2 = LumpParams::new(0.0, 0.8, 1.0).unwrap();
        let f = grid.sample(|x, y| l1.eval(x - 5.0, y, 0.0) + l2.eval(x + 5.0, y, 0.0));
        let peaks = find_peaks(&f, 0.3).unwrap();
        assert_eq!(peaks.len(), 2);
        assert!(peaks[0].height > peaks[1].height);
        assert!((peaks[0].x - 5.0).abs() < 0.1);
        assert!((peaks[1].x + 5.0).abs() < 0.1);
    }

    #[test]
    fn peaks_are_translation_equivariant() {
        let grid = Grid2D::square(128).unwrap();
        let f = lump_field(&grid, 0.0, 1.0, 1.0, 0.0, 0.0);
        let a = f.physical().unwrap();
        let (shift_x, shift_y) = (17usize, 5usize);
        let mut shifted = a.clone();
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                shifted[(iy, ix)] = a[(
                    (iy + grid.ny - shift_y) % grid.ny,
                    (ix + grid.nx - shift_x) % grid.nx,
                )];
            }
        }
        let g = Field::from_physical(&grid, shifted).unwrap();
        let p0 = &find_peaks(&f, 0.3).unwrap()[0];
        let p1 = &find_peaks(&g, 0.3).unwrap()[0];
        assert_eq!(p1.ix, (p0.ix + shift_x) % grid.nx);
        assert_eq!(p1.iy, (p0.iy + shift_y) % grid.ny);
        // Same sub-cell offsets, bitwise.
        let off0 = p0.x - grid.x(p0.ix);
        let off1 = p1.x - grid.x(p1.ix);
        assert_eq!(off0.to_bits(), off1.to_bits());
        assert_eq!(p0.height.to_bits(), p1.height.to_bits());
    }

    #[test]
    fn fit_recovers_exact_lump() {
        let grid = Grid2D::square(256).unwrap();
        let eps = 0.05;
        // eps = 0.05 lump has width ~ eps; use a fine grid region instead:
        // sample a small domain so the window resolves it.
        let small = Grid2D::new(256, 256, 1.0, 1.0).unwrap();
        let f = lump_field(&small, 0.0, 1.5, eps, 0.2, -0.1);
        let peaks = find_peaks(&f, 0.3).unwrap();
        let fit = fit_lump(&f, &peaks[0], 12, eps).unwrap();
        assert!(fit.converged);
        assert!(
            (fit.params[1] - 1.5).abs() < 1e-6,
            "b = {} (expected 1.5)",
            fit.params[1]
        );
        assert!((fit.params[2] - 0.2).abs() < 1e-6);
        assert!((fit.params[3] + 0.1).abs() < 1e-6);
        assert!(fit.residual_rms < 1e-6 * peaks[0].height);
        let _ = grid;
    }

    #[test]
    fn fit_tolerates_noise() {
        let small = Grid2D::new(256, 256, 2.0, 2.0).unwrap();
        let eps = 0.2;
        let clean = lump_field(&small, 0.0, 1.2, eps, 0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let peak_height = 24.0 * 1.2 * 1.2;
        let mut noisy = clean.physical().unwrap().clone();
        for v in noisy.iter_mut() {
            *v += 0.01 * peak_height * rng.random_range(-0.5..0.5);
        }
        let f = Field::from_physical(&small, noisy).unwrap();
        let peaks = find_peaks(&f, 0.3).unwrap();
        let fit = fit_lump(&f, &peaks[0], 16, eps).unwrap();
        assert!((fit.params[1] - 1.2).abs() < 0.012, "b = {}", fit.params[1]);
    }

    #[test]
    fn fit_converges_from_offset_seeds() {
        // Basin check: seeds within 2 cells of the true centre all converge.
        let small = Grid2D::new(128, 128, 2.0, 2.0).unwrap();
        let eps = 0.25;
        let f = lump_field(&small, 0.3, 0.9, eps, 0.15, -0.2);
        let peaks = find_peaks(&f, 0.3).unwrap();
        let true_peak = &peaks[0];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let dx = rng.random_range(-2i64..=2);
            let dy = rng.random_range(-2i64..=2);
            let seed = Peak {
                x: true_peak.x + dx as f64 * small.dx(),
                y: true_peak.y + dy as f64 * small.dy(),
                height: true_peak.height,
                ix: (true_peak.ix as i64 + dx).rem_euclid(small.nx as i64) as usize,
                iy: (true_peak.iy as i64 + dy).rem_euclid(small.ny as i64) as usize,
            };
            let fit = fit_lump(&f, &seed, 12, eps).unwrap();
            assert!(fit.converged, "seed offset ({dx}, {dy})");
            assert!((fit.params[1] - 0.9).abs() < 1e-5);
        }
    }

    #[test]
    fn subtraction_removes_exact_lump() {
        let small = Grid2D::new(256, 256, 2.0, 2.0).unwrap();
        let eps = 0.2;
        let f = lump_field(&small, 0.0, 1.0, eps, 0.1, 0.3);
        let peaks = find_peaks(&f, 0.3).unwrap();
        let fit = fit_lump(&f, &peaks[0], 16, eps).unwrap();
        let residual = subtract_fitted_lump(&f, &fit, eps).unwrap();
        let max_res = residual
            .physical()
            .unwrap()
            .iter()
            .fold(0.0_f64, |m, &v| m.max(v.abs()));
        assert!(max_res < 1e-8 * 24.0, "residual {max_res}");
        // Idempotence: nothing at the original scale remains; the residual's
        // own "peaks" are numerical dust far below the subtracted lump.
        for p in find_peaks(&residual, 0.3).unwrap() {
            assert!(p.height < 1e-6 * 24.0, "leftover peak {}", p.height);
        }
    }

    #[test]
    fn subtraction_leaves_background() {
        let small = Grid2D::new(256, 256, 4.0, 4.0).unwrap();
        let eps = 0.25;
        let lump = LumpParams::new(0.0, 1.0, eps).unwrap();
        let background = |x: f64, y: f64| 0.3 * (1.2 * x).sin() * (0.9 * y).cos();
        let f = small.sample(move |x, y| lump.eval(x, y, 0.0) + background(x, y));
        let peaks = find_peaks(&f, 0.5).unwrap();
        let fit = fit_lump(&f, &peaks[0], 16, eps).unwrap();
        let residual = subtract_fitted_lump(&f, &fit, eps).unwrap();
        // The residual should be close to the background away from the core.
        let r = residual.physical().unwrap();
        let mut max_err = 0.0_f64;
        for iy in (0..small.ny).step_by(7) {
            for ix in (0..small.nx).step_by(7) {
                let (x, y) = (small.x(ix), small.y(iy));
                if x * x + y * y > 1.0 {
                    max_err = max_err.max((r[(iy, ix)] - background(x, y)).abs());
                }
            }
        }
        assert!(max_err < 0.05, "background mismatch {max_err}");
    }

    #[test]
    fn lattice_spacing_on_synthetic_lattice() {
        // Triangular lattice of narrow lumps with spacing d.
        let grid = Grid2D::square(512).unwrap();
        let lump = LumpParams::new(0.0, 1.0, 0.5).unwrap();
        let d = 3.0;
        let centers: Vec<(f64, f64)> = vec![
            (0.0, 0.0),
            (d, 0.0),
            (-d, 0.0),
            (d / 2.0, d * 3.0_f64.sqrt() / 2.0),
            (-d / 2.0, d * 3.0_f64.sqrt() / 2.0),
            (d / 2.0, -d * 3.0_f64.sqrt() / 2.0),
        ];
        let f = grid.sample(move |x, y| {
            centers
                .iter()
                .map(|&(cx, cy)| lump.eval(x - cx, y - cy, 0.0))
                .sum()
        });
        let peaks = find_peaks(&f, 0.3).unwrap();
        assert_eq!(peaks.len(), 6);
        let (spacing, count) = lattice_spacing(&peaks).unwrap();
        assert_eq!(count, 6);
        assert!((spacing - d).abs() < grid.dx(), "spacing {spacing}");
    }

    #[test]
    fn lattice_two_points_and_insufficient() {
        let mk = |x: f64, y: f64| Peak {
            x,
            y,
            height: 1.0,
            ix: 0,
            iy: 0,
        };
        let (d, n) = lattice_spacing(&[mk(0.0, 0.0), mk(3.0, 4.0)]).unwrap();
        assert_eq!((d, n), (5.0, 2));
        assert!(matches!(
            lattice_spacing(&[mk(0.0, 0.0)]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn linear_fit_exact_and_degenerate() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let (slope, intercept) = fit_linear(&xs, &ys).unwrap();
        assert!((slope - 2.0).abs() < 1e-14);
        assert!((intercept - 1.0).abs() < 1e-14);
        assert!(fit_linear(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn power_law_round_trip() {
        let xs = [0.02_f64, 0.03, 0.05, 0.07, 0.1];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 3.0 * x.powf(0.8)).collect();
        let fit = fit_power_law(&xs, &ys).unwrap();
        assert!(fit.converged);
        assert!((fit.params[0] - 2.0).abs() < 1e-8, "c1 = {}", fit.params[0]);
        assert!((fit.params[1] + 3.0).abs() < 1e-8, "c2 = {}", fit.params[1]);
        assert!((fit.params[2] - 0.8).abs() < 1e-8, "beta = {}", fit.params[2]);
        assert!(fit.residual_rms < 1e-10);
    }

    #[test]
    fn power_law_flat_data_flagged() {
        let xs = [0.02, 0.04, 0.06, 0.08];
        let ys = [5.0, 5.0, 5.0, 5.0];
        let fit = fit_power_law(&xs, &ys).unwrap();
        assert!(!fit.converged);
    }

    #[test]
    fn fits_are_scale_equivariant() {
        let xs = [0.02_f64, 0.03, 0.05, 0.07, 0.1];
        let ys: Vec<f64> = xs.iter().map(|x| 1.3 + 0.7 * x.powf(0.6)).collect();
        let s = 37.5;
        let scaled: Vec<f64> = ys.iter().map(|y| s * y).collect();
        let f1 = fit_power_law(&xs, &ys).unwrap();
        let f2 = fit_power_law(&xs, &scaled).unwrap();
        assert!((f2.params[0] - s * f1.params[0]).abs() < 1e-10 * s);
        assert!((f2.params[1] - s * f1.params[1]).abs() < 1e-10 * s);
        assert!((f2.params[2] - f1.params[2]).abs() < 1e-10);
        // Linear fit equivariance.
        let (a1, b1) = fit_linear(&xs, &ys).unwrap();
        let (a2, b2) = fit_linear(&xs, &scaled).unwrap();
        assert!((a2 - s * a1).abs() < 1e-10 * s);
        assert!((b2 - s * b1).abs() < 1e-10 * s);
    }

    #[test]
    fn lump_position_scaling_round_trip() {
        // Generator parameters from the position-scaling law; recovery is a
        // round trip through the combination x_max - u_max t_max / 8.
        let (c1, c2, beta) = (14.354_f64, 6.1037_f64, 0.782_f64);
        let eps = [0.04_f64, 0.05, 0.06, 0.07, 0.08, 0.09, 0.1];
        let runs: Vec<(f64, f64, f64, f64)> = eps
            .iter()
            .enumerate()
            .map(|(i, &e)| {
                let t_max = 0.3 + 0.02 * i as f64;
                let u_max = 40.0 + i as f64;
                let z = c1 + c2 * e.powf(beta);
                (e, z + u_max / 8.0 * t_max, t_max, u_max)
            })
            .collect();
        let fit = lump_position_scaling(&runs).unwrap();
        assert!(fit.converged);
        assert!((fit.params[0] - c1).abs() < 1e-8);
        assert!((fit.params[1] - c2).abs() < 1e-8);
        assert!((fit.params[2] - beta).abs() < 1e-8);
        // Compatibility band: 4/5 within one stderr-proxy of the recovered
        // exponent on exact data is trivially tight, so just check the proxy
        // is finite and small.
        assert!(fit.stderr[2].is_finite());
        // Two-point input is underdetermined.
        let fit = lump_position_scaling(&runs[..2]).unwrap();
        assert!(!fit.converged);
    }
}
