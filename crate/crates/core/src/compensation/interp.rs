//! Two-dimensional interpolants used to estimate the real tip geometry between
//! calibration samples.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub trait Surface: Send + Sync {
    fn eval(&self, x: f64, y: f64) -> f64;
}

/// Natural cubic spline through `(xs[i], ys[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    second: Vec<f64>,
}

impl CubicSpline {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        if n < 2 || ys.len() != n {
            return Err(Error::Fit(format!("cubic spline needs >= 2 matching knots, got {} / {}", n, ys.len())));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Fit("spline knots must be strictly increasing".into()));
        }
        let second = natural_second_derivatives(&xs, &ys);
        Ok(Self { xs, ys, second })
    }

    /// Evaluates the spline; outside the knot range the end cubic is extended.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let k = match self.xs.partition_point(|&v| v <= x) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        };
        let (x0, x1) = (self.xs[k], self.xs[k + 1]);
        let h = x1 - x0;
        let a = (x1 - x) / h;
        let b = (x - x0) / h;
        let curvature = ((a * a * a - a) * self.second[k] + (b * b * b - b) * self.second[k + 1]) * h * h / 6.0;
        if curvature == 0.0 {
            // exact at knots
            return a * self.ys[k] + b * self.ys[k + 1];
        }
        a * self.ys[k] + b * self.ys[k + 1] + curvature
    }
}

/// Second derivatives of the natural spline (zero at both ends), Thomas algorithm.
fn natural_second_derivatives(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    let mut diag = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for i in 1..n - 1 {
        let h0 = xs[i] - xs[i - 1];
        let h1 = xs[i + 1] - xs[i];
        diag[i] = 2.0 * (h0 + h1);
        upper[i] = h1;
        rhs[i] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
    }
    // forward sweep over interior rows 1..n-1; lower coefficient of row i is h_{i-1}
    for i in 2..n - 1 {
        let lower = xs[i] - xs[i - 1];
        let w = lower / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    for i in (1..n - 1).rev() {
        let next = if i + 1 < n - 1 { upper[i] * m[i + 1] } else { 0.0 };
        m[i] = (rhs[i] - next) / diag[i];
    }
    m
}

/// Tensor-product natural cubic spline over a rectilinear grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BicubicSpline {
    xs: Vec<f64>,
    rows: Vec<CubicSpline>,
}

impl BicubicSpline {
    /// `values[i * ys.len() + j]` is the sample at `(xs[i], ys[j])`.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, values: &[f64]) -> Result<Self> {
        if values.len() != xs.len() * ys.len() {
            return Err(Error::Fit(format!(
                "grid of {}x{} needs {} values, got {}",
                xs.len(),
                ys.len(),
                xs.len() * ys.len(),
                values.len()
            )));
        }
        if xs.len() < 2 || xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Fit("grid x nodes must be >= 2 and strictly increasing".into()));
        }
        let rows = values
            .chunks(ys.len())
            .map(|row| CubicSpline::new(ys.clone(), row.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { xs, rows })
    }

    fn column_at(&self, y: f64) -> CubicSpline {
        let col: Vec<f64> = self.rows.iter().map(|r| r.eval(y)).collect();
        CubicSpline::new(self.xs.clone(), col).expect("grid nodes validated at construction")
    }

    /// Values on the product grid `qx × qy`, row-major in `qx`.
    pub fn eval_grid(&self, qx: &[f64], qy: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; qx.len() * qy.len()];
        for (j, &y) in qy.iter().enumerate() {
            let col = self.column_at(y);
            for (i, &x) in qx.iter().enumerate() {
                out[i * qy.len() + j] = col.eval(x);
            }
        }
        out
    }
}

impl Surface for BicubicSpline {
    fn eval(&self, x: f64, y: f64) -> f64 {
        self.column_at(y).eval(x)
    }
}

/// Thin-plate spline `f(p) = a0 + a1 x + a2 y + sum w_k U(|p - c_k|)`, `U(r) = r^2 ln r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinPlateSpline {
    centers: Vec<(f64, f64)>,
    weights: Vec<f64>,
    affine: [f64; 3],
    scale: f64,
}

fn tps_kernel(r2: f64) -> f64 {
    if r2 == 0.0 {
        0.0
    } else {
        0.5 * r2 * r2.ln()
    }
}

impl ThinPlateSpline {
    /// Fits an exact interpolant. `scale` normalizes coordinates before the kernel is applied.
    pub fn new(points: &[(f64, f64)], values: &[f64], scale: f64) -> Result<Self> {
        let n = points.len();
        if n != values.len() {
            return Err(Error::Fit(format!("{} points but {} values", n, values.len())));
        }
        if n < 3 || !spans_plane(points) {
            return Err(Error::Fit(format!("thin-plate spline needs >= 3 non-collinear samples, got {n}")));
        }
        let scaled: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x / scale, y / scale)).collect();
        let size = n + 3;
        let mut a = DMatrix::<f64>::zeros(size, size);
        let mut b = DVector::<f64>::zeros(size);
        for i in 0..n {
            for j in 0..n {
                let (dx, dy) = (scaled[i].0 - scaled[j].0, scaled[i].1 - scaled[j].1);
                a[(i, j)] = tps_kernel(dx * dx + dy * dy);
            }
            let row = [1.0, scaled[i].0, scaled[i].1];
            for (k, v) in row.iter().enumerate() {
                a[(i, n + k)] = *v;
                a[(n + k, i)] = *v;
            }
            b[i] = values[i];
        }
        let sol = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Fit("thin-plate system is singular".into()))?;
        Ok(Self {
            centers: scaled,
            weights: sol.rows(0, n).iter().copied().collect(),
            affine: [sol[n], sol[n + 1], sol[n + 2]],
            scale,
        })
    }
}

impl Surface for ThinPlateSpline {
    fn eval(&self, x: f64, y: f64) -> f64 {
        let (x, y) = (x / self.scale, y / self.scale);
        let radial: f64 = self
            .centers
            .iter()
            .zip(&self.weights)
            .map(|(&(cx, cy), w)| {
                let (dx, dy) = (x - cx, y - cy);
                w * tps_kernel(dx * dx + dy * dy)
            })
            .sum();
        self.affine[0] + self.affine[1] * x + self.affine[2] * y + radial
    }
}

/// True when the points are not all on one line.
pub fn spans_plane(points: &[(f64, f64)]) -> bool {
    let Some(&(x0, y0)) = points.first() else { return false };
    let extent = points
        .iter()
        .map(|&(x, y)| (x - x0).abs().max((y - y0).abs()))
        .fold(0.0, f64::max);
    if extent == 0.0 {
        return false;
    }
    points.iter().enumerate().any(|(i, &(xi, yi))| {
        points[i + 1..].iter().any(|&(xj, yj)| {
            let cross = (xi - x0) * (yj - y0) - (yi - y0) * (xj - x0);
            cross.abs() > 1e-9 * extent * extent
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn spline_reproduces_knots_and_lines() {
        let xs: Vec<f64> = (0..7).map(|i| i as f64 * 1.5 - 3.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sin() * 4.0).collect();
        let s = CubicSpline::new(xs.clone(), ys.clone()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(s.eval(*x), *y);
        }
        let line = CubicSpline::new(xs.clone(), xs.iter().map(|x| 2.0 * x - 1.0).collect()).unwrap();
        for k in 0..50 {
            let x = -3.0 + k as f64 * 0.18;
            assert_abs_diff_eq!(line.eval(x), 2.0 * x - 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn spline_matches_natural_spline_solution() {
        // Natural spline through (0,0), (1,1), (2,0): M1 = -3, so at x = 0.5
        // S = 0.5 + (0.125 - 0.5)(-3)/6 = 0.6875.
        let s = CubicSpline::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(s.eval(0.5), 0.6875, epsilon = 1e-12);
        assert_abs_diff_eq!(s.eval(1.5), 0.6875, epsilon = 1e-12);
    }

    #[test]
    fn spline_converges_on_smooth_function() {
        let xs: Vec<f64> = (0..=18).map(|i| -90.0 + 10.0 * i as f64).collect();
        let f = |x: f64| (x.to_radians()).cos() * 30.0;
        let s = CubicSpline::new(xs.clone(), xs.iter().map(|&x| f(x)).collect()).unwrap();
        for k in 0..=180 {
            let x = -90.0 + k as f64;
            assert!((s.eval(x) - f(x)).abs() < 0.05, "x = {x}");
        }
    }

    #[test]
    fn bicubic_reproduces_nodes_and_bilinear_functions() {
        let xs: Vec<f64> = (0..5).map(|i| i as f64 * 10.0).collect();
        let ys: Vec<f64> = (0..6).map(|i| i as f64 * 5.0 - 10.0).collect();
        let f = |x: f64, y: f64| 3.0 + 0.5 * x - 0.25 * y + 0.01 * x * y;
        let values: Vec<f64> = xs.iter().flat_map(|&x| ys.iter().map(move |&y| f(x, y))).collect();
        let s = BicubicSpline::new(xs.clone(), ys.clone(), &values).unwrap();
        for &x in &xs {
            for &y in &ys {
                assert_eq!(s.eval(x, y), f(x, y));
            }
        }
        let qx = [1.0, 17.5, 33.3];
        let qy = [-9.0, 0.1, 14.0];
        let grid = s.eval_grid(&qx, &qy);
        for (i, &x) in qx.iter().enumerate() {
            for (j, &y) in qy.iter().enumerate() {
                assert_abs_diff_eq!(grid[i * 3 + j], f(x, y), epsilon = 1e-10);
                assert_abs_diff_eq!(s.eval(x, y), f(x, y), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn tps_interpolates_and_reproduces_affine() {
        let pts = [(0.0, 0.0), (90.0, 0.0), (-90.0, 0.0), (0.0, 90.0), (0.0, -90.0)];
        let vals: Vec<f64> = pts.iter().map(|&(x, y)| 1.0 + 0.4 * x - 0.2 * y).collect();
        let tps = ThinPlateSpline::new(&pts, &vals, 90.0).unwrap();
        for (p, v) in pts.iter().zip(&vals) {
            assert_abs_diff_eq!(tps.eval(p.0, p.1), *v, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(tps.eval(45.0, 45.0), 1.0 + 18.0 - 9.0, epsilon = 1e-9);

        let bump: Vec<f64> = vec![60.0, 38.2, 38.2, 38.2, 38.2];
        let tps = ThinPlateSpline::new(&pts, &bump, 90.0).unwrap();
        for (p, v) in pts.iter().zip(&bump) {
            assert_abs_diff_eq!(tps.eval(p.0, p.1), *v, epsilon = 1e-10);
        }
    }

    #[test]
    fn tps_rejects_collinear_samples() {
        let pts = [(0.0, 0.0), (10.0, 10.0), (20.0, 20.0), (-5.0, -5.0)];
        assert!(matches!(ThinPlateSpline::new(&pts, &[0.0; 4], 90.0), Err(Error::Fit(_))));
        assert!(ThinPlateSpline::new(&pts[..2], &[0.0; 2], 90.0).is_err());
        assert!(!spans_plane(&[(1.0, 1.0), (1.0, 1.0), (1.0, 1.0)]));
        assert!(spans_plane(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]));
    }
}
