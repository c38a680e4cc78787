//! Symmetric alpha-stable sampling via the Chambers-Mallows-Stuck transform,
//! characteristic function convention exp(-|t|^alpha).

use std::f64::consts::FRAC_PI_2;

use rand::Rng;

use crate::error::{Error, Result};

/// One standard symmetric alpha-stable draw.
pub fn draw(alpha: f64, rng: &mut impl Rng) -> f64 {
    debug_assert!(alpha > 0.0 && alpha <= 2.0);
    let v: f64 = rng.gen_range(-FRAC_PI_2..FRAC_PI_2);
    let w: f64 = -f64::ln(1.0 - rng.gen::<f64>()); // Exp(1)
    if (alpha - 1.0).abs() < 1e-12 {
        // standard Cauchy
        v.tan()
    } else {
        let av = alpha * v;
        (av.sin() / v.cos().powf(1.0 / alpha))
            * ((v - av).cos() / w).powf((1.0 - alpha) / alpha)
    }
}

/// i.i.d. standard symmetric alpha-stable samples.
pub fn sample_alpha_stable(alpha: f64, count: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(Error::Invalid(format!(
            "stability index alpha must lie in (0, 2], got {}",
            alpha
        )));
    }
    Ok((0..count).map(|_| draw(alpha, rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn empirical_cf(samples: &[f64], t: f64) -> f64 {
        samples.iter().map(|&x| (t * x).cos()).sum::<f64>() / samples.len() as f64
    }

    #[test]
    fn rejects_out_of_range_alpha() {
        assert!(sample_alpha_stable(0.0, 1, &mut rng::seeded(0)).is_err());
        assert!(sample_alpha_stable(2.1, 1, &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn alpha_two_is_gaussian_with_variance_two() {
        let xs = sample_alpha_stable(2.0, 100_000, &mut rng::seeded(1)).unwrap();
        for &t in &[0.5, 1.0, 2.0] {
            let cf = empirical_cf(&xs, t);
            assert!(
                (cf - (-t * t).exp()).abs() < 0.01,
                "cf({}) = {} vs {}",
                t,
                cf,
                (-t * t).exp()
            );
        }
    }

    #[test]
    fn alpha_one_is_standard_cauchy() {
        let xs = sample_alpha_stable(1.0, 100_000, &mut rng::seeded(2)).unwrap();
        // Cauchy CF is exp(-|t|); also check the median is near zero.
        for &t in &[0.5, 1.0] {
            assert!((empirical_cf(&xs, t) - (-t).exp()).abs() < 0.01);
        }
        let below = xs.iter().filter(|&&x| x < 0.0).count() as f64 / xs.len() as f64;
        assert!((below - 0.5).abs() < 0.01);
    }

    #[test]
    fn alpha_1_5_matches_stable_cf() {
        let xs = sample_alpha_stable(1.5, 100_000, &mut rng::seeded(3)).unwrap();
        for &t in &[0.5f64, 1.0, 2.0] {
            let expect = (-t.abs().powf(1.5)).exp();
            assert!(
                (empirical_cf(&xs, t) - expect).abs() < 0.01,
                "cf({}) = {} vs {}",
                t,
                empirical_cf(&xs, t),
                expect
            );
        }
    }
}
