//! Savitzky-Golay smoothing of joint trajectories.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kinematics::Config;

pub const DEFAULT_WINDOW: usize = 11;
pub const DEFAULT_ORDER: usize = 2;

/// Least-squares projection onto polynomials of degree `order` over a window:
/// row `p` holds the weights that produce the fitted value at window position `p`.
fn projection(window: usize, order: usize) -> DMatrix<f64> {
    let half = (window / 2) as f64;
    let scale = half.max(1.0);
    let design = DMatrix::from_fn(window, order + 1, |r, c| ((r as f64 - half) / scale).powi(c as i32));
    let gram = design.transpose() * &design;
    let inv = gram.try_inverse().expect("Vandermonde gram matrix is invertible when order < window");
    &design * inv * design.transpose()
}

fn check(len: usize, window: usize, order: usize) -> Result<()> {
    if window % 2 == 0 || window == 0 {
        return Err(Error::Domain(format!("window {window} must be odd")));
    }
    if order >= window {
        return Err(Error::Domain(format!("order {order} must be below window {window}")));
    }
    if len < window {
        return Err(Error::Domain(format!("signal of length {len} shorter than window {window}")));
    }
    Ok(())
}

/// Filters one channel. Interior samples use the centred window; the first and
/// last `window / 2` samples are read off the polynomial fitted to the first or
/// last full window.
pub fn savitzky_golay(signal: &[f64], window: usize, order: usize) -> Result<Vec<f64>> {
    check(signal.len(), window, order)?;
    let hat = projection(window, order);
    let half = window / 2;
    let n = signal.len();
    let apply = |row: usize, start: usize| (0..window).map(|k| hat[(row, k)] * signal[start + k]).sum::<f64>();

    Ok((0..n)
        .map(|i| {
            if i < half {
                apply(i, 0)
            } else if i + half >= n {
                apply(window - (n - i), n - window)
            } else {
                apply(half, i - half)
            }
        })
        .collect())
}

/// Channel-wise smoothing of a configuration sequence.
pub fn smooth(traj: &[Config], window: usize, order: usize) -> Result<Vec<Config>> {
    check(traj.len(), window, order)?;
    let channels: Vec<Vec<f64>> = (0..4)
        .map(|c| savitzky_golay(&traj.iter().map(|q| q.as_array()[c]).collect::<Vec<_>>(), window, order))
        .collect::<Result<_>>()?;
    Ok((0..traj.len())
        .map(|i| Config::new(channels[0][i], channels[1][i], channels[2][i], channels[3][i]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn quadratic(i: usize) -> f64 {
        let t = i as f64;
        3.0 - 0.7 * t + 0.045 * t * t
    }

    #[test]
    fn reproduces_quadratics() {
        let traj: Vec<Config> = (0..60)
            .map(|i| Config::new(quadratic(i), 10.0 + 0.5 * i as f64, -(i as f64).powi(2) * 0.01, 4.0))
            .collect();
        let out = smooth(&traj, 11, 2).unwrap();
        assert_eq!(out.len(), traj.len());
        for (a, b) in out.iter().zip(&traj) {
            assert!(a.max_abs_diff(b) < 1e-9, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn constant_is_unchanged() {
        let signal = vec![7.25; 15];
        for v in savitzky_golay(&signal, 5, 2).unwrap() {
            assert!((v - 7.25).abs() < 1e-12);
        }
    }

    #[test]
    fn classic_five_point_quadratic_weights() {
        // Interior weights of the 5-point quadratic filter are (-3, 12, 17, 12, -3) / 35.
        let hat = projection(5, 2);
        let expected = [-3.0, 12.0, 17.0, 12.0, -3.0].map(|v| v / 35.0);
        for (k, e) in expected.iter().enumerate() {
            assert!((hat[(2, k)] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn reduces_noise_variance() {
        // Monte-Carlo: the residual variance about the true quadratic should drop by well over 60%.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = 400;
        let truth: Vec<f64> = (0..n).map(|i| quadratic(i) * 0.01).collect();
        let noisy: Vec<f64> = truth.iter().map(|t| t + normal.sample(&mut rng)).collect();
        let out = savitzky_golay(&noisy, 11, 2).unwrap();
        let var = |xs: &[f64]| xs.iter().zip(&truth).map(|(x, t)| (x - t).powi(2)).sum::<f64>() / n as f64;
        let before = var(&noisy);
        let after = var(&out);
        assert!(after <= 0.4 * before, "variance {before} -> {after}");
    }

    #[test]
    fn rejects_bad_parameters() {
        let s = vec![0.0; 20];
        assert!(savitzky_golay(&s, 10, 2).is_err());
        assert!(savitzky_golay(&s, 5, 5).is_err());
        assert!(savitzky_golay(&s[..4], 5, 2).is_err());
        assert!(smooth(&[Config::STRAIGHT; 3], 5, 2).is_err());
    }
}
