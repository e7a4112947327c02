//! Windowed SSIM, its analytic gradient, and its quadratic-form approximation.
//!
//! A window's SSIM is the product of a luminance term and a
//! contrast-structure term,
//!
//! ```text
//! S(x, y) = (2μxμy + c1)/(μx² + μy² + c1) · (2σxy + c2)/(σx² + σy² + c2)
//! ```
//!
//! with population statistics over the `N²` pixels. Around `y = x` the loss
//! `1 − S(x, x+δ)` behaves like `μδ²/(2μx²) + σδ²/(2σx²)`, i.e. the quadratic
//! form `δᵀGδ` with `G = M/(2μx²) + V/(2σx²)`, where `M = 11ᵀ/N⁴` and
//! `V = I/N² − M` over the `N²` window pixels, so that `δᵀMδ = μδ²` and
//! `δᵀVδ = σδ²` hold exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SSIM_C1: f64 = 1e-8;
pub const SSIM_C2: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
struct WindowStats {
    mu_x: f64,
    mu_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
}

fn window_stats(x: &[f64], y: &[f64]) -> WindowStats {
    let k = x.len() as f64;
    let mu_x = x.iter().sum::<f64>() / k;
    let mu_y = y.iter().sum::<f64>() / k;
    let (mut var_x, mut var_y, mut cov) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mu_x, b - mu_y);
        var_x += dx * dx;
        var_y += dy * dy;
        cov += dx * dy;
    }
    WindowStats {
        mu_x,
        mu_y,
        var_x: var_x / k,
        var_y: var_y / k,
        cov: cov / k,
    }
}

/// SSIM of two equal-length windows with explicit stabilizers.
///
/// With `c1 = c2 = 0` a window whose mean or variance terms vanish is
/// rejected instead of producing NaN.
pub fn ssim_window_with(x: &[f64], y: &[f64], c1: f64, c2: f64) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Shape(format!(
            "ssim windows must be non-empty and equal length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let s = window_stats(x, y);
    let l_den = s.mu_x * s.mu_x + s.mu_y * s.mu_y + c1;
    let c_den = s.var_x + s.var_y + c2;
    if l_den == 0.0 || c_den == 0.0 {
        return Err(Error::InvalidArgument(
            "degenerate ssim window: zero mean or zero variance without stabilizer".into(),
        ));
    }
    Ok((2.0 * s.mu_x * s.mu_y + c1) / l_den * (2.0 * s.cov + c2) / c_den)
}

/// Luminance and contrast-structure factors of a window's SSIM.
pub fn ssim_window_terms(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Shape("ssim windows must be non-empty and equal length".into()));
    }
    let s = window_stats(x, y);
    let lum = (2.0 * s.mu_x * s.mu_y + SSIM_C1) / (s.mu_x * s.mu_x + s.mu_y * s.mu_y + SSIM_C1);
    let cs = (2.0 * s.cov + SSIM_C2) / (s.var_x + s.var_y + SSIM_C2);
    Ok((lum, cs))
}

/// SSIM of two windows using the crate's default stabilizers.
pub fn ssim_window(x: &[f64], y: &[f64]) -> Result<f64> {
    ssim_window_with(x, y, SSIM_C1, SSIM_C2)
}

/// Adds `scale · ∂S/∂x` and `scale · ∂S/∂y` into the given buffers and
/// returns `S`.
pub(crate) fn ssim_window_grad(
    x: &[f64],
    y: &[f64],
    scale: f64,
    gx: Option<&mut [f64]>,
    gy: &mut [f64],
) -> f64 {
    let k = x.len() as f64;
    let s = window_stats(x, y);
    let a1 = 2.0 * s.mu_x * s.mu_y + SSIM_C1;
    let a2 = s.mu_x * s.mu_x + s.mu_y * s.mu_y + SSIM_C1;
    let b1 = 2.0 * s.cov + SSIM_C2;
    let b2 = s.var_x + s.var_y + SSIM_C2;
    let lum = a1 / a2;
    let cs = b1 / b2;

    let dl_dmuy = (2.0 * s.mu_x * a2 - a1 * 2.0 * s.mu_y) / (a2 * a2);
    let dl_dmux = (2.0 * s.mu_y * a2 - a1 * 2.0 * s.mu_x) / (a2 * a2);
    let dc_dcov = 2.0 / b2;
    let dc_dvar = -b1 / (b2 * b2);

    for i in 0..x.len() {
        let (dx, dy) = (x[i] - s.mu_x, y[i] - s.mu_y);
        gy[i] += scale * (cs * dl_dmuy / k + lum * (dc_dcov * dx / k + dc_dvar * 2.0 * dy / k));
    }
    if let Some(gx) = gx {
        for i in 0..x.len() {
            let (dx, dy) = (x[i] - s.mu_x, y[i] - s.mu_y);
            gx[i] += scale * (cs * dl_dmux / k + lum * (dc_dcov * dy / k + dc_dvar * 2.0 * dx / k));
        }
    }
    lum * cs
}

/// Quadratic form of `1 − SSIM` around one window `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimWindowForm {
    pub mu_x: f64,
    pub sigma2_x: f64,
    /// Window side `N`; the window holds `N²` pixels.
    pub window: usize,
}

impl SsimWindowForm {
    /// `δᵀGδ = μδ²/(2μx²) + σδ²/(2σx²)`, computed from the displacement's
    /// mean and population variance only.
    pub fn quadratic(&self, delta: &[f64]) -> f64 {
        let k = delta.len() as f64;
        let mu = delta.iter().sum::<f64>() / k;
        let var = delta.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / k;
        mu * mu / (2.0 * self.mu_x * self.mu_x) + var / (2.0 * self.sigma2_x)
    }

    /// Dense `N² × N²` matrix `G = M/(2μx²) + V/(2σx²)`, row-major.
    /// `M = 11ᵀ/N⁴`, `V = I/N² − M`.
    pub fn dense(&self) -> Vec<f64> {
        let k = self.window * self.window;
        let kf = k as f64;
        let a = 1.0 / (2.0 * self.mu_x * self.mu_x);
        let b = 1.0 / (2.0 * self.sigma2_x);
        let mut g = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                let m = 1.0 / (kf * kf);
                let v = if i == j { 1.0 / kf - m } else { -m };
                g[i * k + j] = a * m + b * v;
            }
        }
        g
    }
}

/// Builds the window quadratic form for a non-constant window with nonzero mean.
pub fn ssim_metric_form(x: &[f64]) -> Result<SsimWindowForm> {
    let n = (x.len() as f64).sqrt().round() as usize;
    if n == 0 || n * n != x.len() {
        return Err(Error::Shape(format!("{} pixels is not an N×N window", x.len())));
    }
    let s = window_stats(x, x);
    if s.mu_x == 0.0 {
        return Err(Error::InvalidArgument("ssim metric needs a nonzero window mean".into()));
    }
    if s.var_x <= 0.0 {
        return Err(Error::InvalidArgument("ssim metric undefined for a constant window".into()));
    }
    Ok(SsimWindowForm {
        mu_x: s.mu_x,
        sigma2_x: s.var_x,
        window: n,
    })
}

/// Non-overlapping `N×N` tiling of a `rows × cols` image (stride `N`).
///
/// Partial windows at the right/bottom edges are not visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowGrid {
    pub rows: usize,
    pub cols: usize,
    pub window: usize,
}

impl WindowGrid {
    pub fn new(rows: usize, cols: usize, window: usize) -> Result<Self> {
        if window == 0 || rows < window || cols < window {
            return Err(Error::Config(format!(
                "ssim window {window} does not fit a {rows}x{cols} image"
            )));
        }
        Ok(Self { rows, cols, window })
    }

    pub fn count(&self) -> usize {
        (self.rows / self.window) * (self.cols / self.window)
    }

    /// Flat pixel indices of every window, window by window.
    pub fn windows(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        let n = self.window;
        let (wr, wc) = (self.rows / n, self.cols / n);
        (0..wr).flat_map(move |bv| {
            (0..wc).map(move |bh| {
                let mut idx = Vec::with_capacity(n * n);
                for r in 0..n {
                    for c in 0..n {
                        idx.push((bv * n + r) * self.cols + bh * n + c);
                    }
                }
                idx
            })
        })
    }
}

fn gather(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Whole-image SSIM: the mean of window SSIMs over the grid.
pub fn ssim_image(grid: &WindowGrid, x: &[f64], y: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for idx in grid.windows() {
        total += ssim_window(&gather(x, &idx), &gather(y, &idx))?;
    }
    Ok(total / grid.count() as f64)
}

/// `1 − SSIM` and its gradients, accumulated with weight `scale`.
pub(crate) fn ssim_loss_grad(
    grid: &WindowGrid,
    x: &[f64],
    y: &[f64],
    scale: f64,
    mut gx: Option<&mut [f64]>,
    gy: &mut [f64],
) -> f64 {
    let w = grid.count() as f64;
    let mut total = 0.0;
    for idx in grid.windows() {
        let xw = gather(x, &idx);
        let yw = gather(y, &idx);
        let mut gyw = vec![0.0; idx.len()];
        let mut gxw = vec![0.0; idx.len()];
        let want_x = gx.is_some();
        total += ssim_window_grad(
            &xw,
            &yw,
            -scale / w,
            if want_x { Some(&mut gxw) } else { None },
            &mut gyw,
        );
        for (k, &i) in idx.iter().enumerate() {
            gy[i] += gyw[k];
        }
        if let Some(gx) = gx.as_deref_mut() {
            for (k, &i) in idx.iter().enumerate() {
                gx[i] += gxw[k];
            }
        }
    }
    1.0 - total / w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_grad, max_relative_error};

    fn ramp64() -> Vec<f64> {
        (0..64).map(|i| i as f64 / 63.0).collect()
    }

    /// Second, independent evaluation of the window formula without stabilizers.
    fn direct_ssim(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx: f64 = x.iter().sum::<f64>() / n;
        let my: f64 = y.iter().sum::<f64>() / n;
        let sxx: f64 = x.iter().map(|a| a * a).sum::<f64>() / n - mx * mx;
        let syy: f64 = y.iter().map(|a| a * a).sum::<f64>() / n - my * my;
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n - mx * my;
        (2.0 * mx * my / (mx * mx + my * my)) * (2.0 * sxy / (sxx + syy))
    }

    #[test]
    fn identical_windows_score_one() {
        let x = ramp64();
        assert!((ssim_window(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negated_window_flips_both_terms() {
        let x = ramp64();
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        let (lum, cs) = ssim_window_terms(&x, &y).unwrap();
        assert!(lum < 0.0);
        assert!(cs < 0.0);
        // the two sign flips cancel in the product
        assert!((ssim_window(&x, &y).unwrap() - 1.0).abs() < 1e-6);
        // flipping only the structure keeps the luminance positive and the product negative
        let z: Vec<f64> = x.iter().map(|v| 1.0 - v).collect();
        assert!(ssim_window(&x, &z).unwrap() <= 0.0);
    }

    #[test]
    fn shifted_ramp_matches_direct_formula() {
        let x = ramp64();
        let y: Vec<f64> = x.iter().map(|v| v + 0.01).collect();
        let got = ssim_window(&x, &y).unwrap();
        let want = direct_ssim(&x, &y);
        assert!((got - want).abs() < 1e-7, "{got} vs {want}");
    }

    #[test]
    fn degenerate_window_without_stabilizer_errors() {
        let z = vec![0.0; 16];
        assert!(ssim_window_with(&z, &z, 0.0, 0.0).is_err());
        assert!(ssim_window(&z, &z).is_ok());
    }

    #[test]
    fn metric_form_special_cases() {
        let x = ramp64();
        let form = ssim_metric_form(&x).unwrap();
        assert_eq!(form.quadratic(&vec![0.0; 64]), 0.0);
        let c = 0.03;
        let q = form.quadratic(&vec![c; 64]);
        assert!((q - c * c / (2.0 * form.mu_x * form.mu_x)).abs() < 1e-15);
        assert!(ssim_metric_form(&vec![0.5; 64]).is_err());
        assert!(ssim_metric_form(&vec![0.5; 10]).is_err());
    }

    #[test]
    fn dense_matrix_agrees_with_moment_form() {
        let x: Vec<f64> = (0..16).map(|i| 0.2 + (i as f64 * 0.7).sin().abs()).collect();
        let form = ssim_metric_form(&x).unwrap();
        let g = form.dense();
        let d: Vec<f64> = (0..16).map(|i| ((i * 7 % 5) as f64 - 2.0) * 1e-2).collect();
        let mut q = 0.0;
        for i in 0..16 {
            for j in 0..16 {
                q += d[i] * g[i * 16 + j] * d[j];
            }
        }
        let want = form.quadratic(&d);
        assert!((q - want).abs() <= 1e-12 * want.abs(), "{q} vs {want}");
    }

    #[test]
    fn window_gradient_matches_finite_differences() {
        let x: Vec<f64> = (0..16).map(|i| 0.3 + 0.5 * ((i as f64) * 1.3).sin().abs()).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + 0.05 * ((i as f64) * 0.9).cos()).collect();
        let mut gy = vec![0.0; 16];
        let mut gx = vec![0.0; 16];
        ssim_window_grad(&x, &y, 1.0, Some(&mut gx), &mut gy);
        let ny = finite_diff_grad(|v| ssim_window(&x, v).unwrap(), &y, 1e-6).unwrap();
        let nx = finite_diff_grad(|v| ssim_window(v, &y).unwrap(), &x, 1e-6).unwrap();
        assert!(max_relative_error(&gy, &ny) < 1e-5);
        assert!(max_relative_error(&gx, &nx) < 1e-5);
    }

    #[test]
    fn grid_tiles_without_overlap() {
        let g = WindowGrid::new(28, 28, 8).unwrap();
        assert_eq!(g.count(), 9);
        let mut seen = std::collections::HashSet::new();
        for w in g.windows() {
            assert_eq!(w.len(), 64);
            for i in w {
                assert!(seen.insert(i));
            }
        }
        assert!(WindowGrid::new(4, 4, 8).is_err());
    }
}
