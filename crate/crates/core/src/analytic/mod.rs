//! Closed-form second-order coherence of modulated pseudothermal light.
//!
//! The scattered light's correlation factorizes into the modulation's
//! normalized intensity correlation times the groundglass factor
//! `1 + sinc^2(delta_omega tau / 2)`. All functions are normalized to a
//! far-lag plateau of one.

mod fit;

use std::io::Write;

pub use fit::{fit_g2, FitParam, FitResult, FitSpec, Nuisance};

use crate::scalar::Real;

/// `sin(x) / x`, with the Taylor series near zero.
pub fn sinc<T: Real>(x: T) -> T {
    if x.abs() < T::lit(1e-4) {
        let x2 = x * x;
        T::one() - x2 / T::lit(6.0) + x2 * x2 / T::lit(120.0)
    } else {
        x.sin() / x
    }
}

/// `d sinc / dx = (x cos x - sin x) / x^2`.
pub(crate) fn sinc_prime<T: Real>(x: T) -> T {
    if x.abs() < T::lit(1e-3) {
        let x2 = x * x;
        -x / T::lit(3.0) + x * x2 / T::lit(30.0)
    } else {
        (x * x.cos() - x.sin()) / (x * x)
    }
}

/// Thermal-light bunching: `1 + sinc^2(delta_omega tau / 2)`.
pub fn g2_speckle<T: Real>(tau: T, delta_omega: T) -> T {
    let s = sinc(delta_omega * tau / T::lit(2.0));
    T::one() + s * s
}

/// Sinusoidally modulated input:
/// `[1 + 2C cos^2(omega0 tau / 2)] / (1 + C) * [1 + sinc^2(delta_omega tau / 2)]`.
///
/// `depth` is expected in `[0, 1]`.
pub fn g2_sinusoid<T: Real>(tau: T, depth: T, omega0: T, delta_omega: T) -> T {
    let c = (omega0 * tau / T::lit(2.0)).cos();
    (T::one() + T::lit(2.0) * depth * c * c) / (T::one() + depth) * g2_speckle(tau, delta_omega)
}

/// Zero-lag value of [`g2_sinusoid`]: `2 + 2C / (1 + C)`, rising from 2 to 3 on `[0, 1]`.
pub fn g2_zero_sinusoid<T: Real>(depth: T) -> T {
    T::lit(2.0) + T::lit(2.0) * depth / (T::one() + depth)
}

/// Intensity correlation of band-limited Gaussian noise `nu0` Hz wide: `1 + sinc^2(pi nu0 tau)`.
pub fn gamma_noise<T: Real>(tau: T, nu0: T) -> T {
    let s = sinc(T::PI() * nu0 * tau);
    T::one() + s * s
}

/// Noise-modulated input: `[1 + sinc^2(pi nu0 tau)] [1 + sinc^2(delta_omega tau / 2)]`, peak 4.
pub fn g2_noise<T: Real>(tau: T, nu0: T, delta_omega: T) -> T {
    gamma_noise(tau, nu0) * g2_speckle(tau, delta_omega)
}

/// Parametric coherence model; angular frequencies in rad/s, `cutoff_hz` in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TheoryModel<T> {
    SpeckleOnly { delta_omega: T },
    SinusoidSpeckle { depth: T, omega0: T, delta_omega: T },
    NoiseSpeckle { cutoff_hz: T, delta_omega: T },
}

impl<T: Real> TheoryModel<T> {
    pub fn name(&self) -> &'static str {
        match self {
            TheoryModel::SpeckleOnly { .. } => "speckle",
            TheoryModel::SinusoidSpeckle { .. } => "sinusoid",
            TheoryModel::NoiseSpeckle { .. } => "noise",
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            TheoryModel::SpeckleOnly { .. } => &["delta_omega"],
            TheoryModel::SinusoidSpeckle { .. } => &["depth", "omega0", "delta_omega"],
            TheoryModel::NoiseSpeckle { .. } => &["cutoff_hz", "delta_omega"],
        }
    }

    pub fn params(&self) -> Vec<T> {
        match *self {
            TheoryModel::SpeckleOnly { delta_omega } => vec![delta_omega],
            TheoryModel::SinusoidSpeckle {
                depth,
                omega0,
                delta_omega,
            } => vec![depth, omega0, delta_omega],
            TheoryModel::NoiseSpeckle { cutoff_hz, delta_omega } => vec![cutoff_hz, delta_omega],
        }
    }

    /// Same variant with parameters replaced, in [`Self::param_names`] order.
    pub fn with_params(&self, p: &[T]) -> Self {
        match self {
            TheoryModel::SpeckleOnly { .. } => TheoryModel::SpeckleOnly { delta_omega: p[0] },
            TheoryModel::SinusoidSpeckle { .. } => TheoryModel::SinusoidSpeckle {
                depth: p[0],
                omega0: p[1],
                delta_omega: p[2],
            },
            TheoryModel::NoiseSpeckle { .. } => TheoryModel::NoiseSpeckle {
                cutoff_hz: p[0],
                delta_omega: p[1],
            },
        }
    }

    /// Closed interval each parameter is projected onto during fitting.
    pub fn bounds(&self) -> Vec<(T, T)> {
        let positive = (T::min_positive_value(), T::infinity());
        match self {
            TheoryModel::SpeckleOnly { .. } => vec![positive],
            TheoryModel::SinusoidSpeckle { .. } => vec![(T::zero(), T::one()), positive, positive],
            TheoryModel::NoiseSpeckle { .. } => vec![positive, positive],
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        for ((name, v), (lo, hi)) in self.param_names().iter().zip(self.params()).zip(self.bounds()) {
            if !(v.is_finite() && v >= lo && v <= hi) {
                return Err(crate::Error::config(
                    format!("analysis.{name}"),
                    format!("{v} is outside [{lo}, {hi}]"),
                ));
            }
        }
        Ok(())
    }

    pub fn eval(&self, tau: T) -> T {
        match *self {
            TheoryModel::SpeckleOnly { delta_omega } => g2_speckle(tau, delta_omega),
            TheoryModel::SinusoidSpeckle {
                depth,
                omega0,
                delta_omega,
            } => g2_sinusoid(tau, depth, omega0, delta_omega),
            TheoryModel::NoiseSpeckle { cutoff_hz, delta_omega } => g2_noise(tau, cutoff_hz, delta_omega),
        }
    }

    /// Partial derivatives of [`Self::eval`] with respect to each parameter.
    pub fn gradient(&self, tau: T) -> Vec<T> {
        let two = T::lit(2.0);
        let speckle = |dw: T| {
            let u = dw * tau / two;
            let s = sinc(u);
            (T::one() + s * s, two * s * sinc_prime(u) * tau / two)
        };
        match *self {
            TheoryModel::SpeckleOnly { delta_omega } => vec![speckle(delta_omega).1],
            TheoryModel::SinusoidSpeckle {
                depth,
                omega0,
                delta_omega,
            } => {
                let (s, ds) = speckle(delta_omega);
                let one_c = T::one() + depth;
                let cos = (omega0 * tau).cos();
                let m = T::one() + depth * cos / one_c;
                vec![
                    s * cos / (one_c * one_c),
                    -s * depth * tau * (omega0 * tau).sin() / one_c,
                    m * ds,
                ]
            }
            TheoryModel::NoiseSpeckle { cutoff_hz, delta_omega } => {
                let (s, ds) = speckle(delta_omega);
                let v = T::PI() * cutoff_hz * tau;
                let q = sinc(v);
                let n = T::one() + q * q;
                vec![s * two * q * sinc_prime(v) * T::PI() * tau, n * ds]
            }
        }
    }
}

/// CSV with header `tau_s,g2_theory`.
pub fn write_theory_csv<T: Real, W: Write>(taus: &[T], model: impl Fn(T) -> T, mut w: W) -> std::io::Result<()> {
    writeln!(w, "tau_s,g2_theory")?;
    for &t in taus {
        writeln!(w, "{},{}", t, model(t))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::{PI, TAU};

    #[test]
    fn speckle_reference_values() {
        let dw = TAU * 1e4;
        assert_eq!(g2_speckle(0.0, dw), 2.0);
        assert_relative_eq!(g2_speckle(TAU / dw, dw), 1.0, epsilon = 1e-15);
        assert!((g2_speckle(1.0, dw) - 1.0) < 1e-8);
        assert_eq!(g2_speckle(0.0_f32, 1e4_f32), 2.0_f32);
    }

    #[test]
    fn sinusoid_reference_values() {
        assert_relative_eq!(g2_sinusoid(0.0, 1.0, 1e5, 1e4), 3.0, epsilon = 1e-15);
        assert_relative_eq!(g2_sinusoid(0.0, 0.94, 1e5, 1e4), 2.0 + 1.88 / 1.94, epsilon = 1e-15);
        assert_relative_eq!(g2_sinusoid(0.0, 0.94, 1e5, 1e4), 2.969_072, epsilon = 1e-6);
        for k in 0..50 {
            let tau = k as f64 * 3.7e-6;
            assert_relative_eq!(g2_sinusoid(tau, 0.0, 3e5, 6e4), g2_speckle(tau, 6e4), epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_lag_sinusoid() {
        assert_eq!(g2_zero_sinusoid(0.0), 2.0);
        assert_eq!(g2_zero_sinusoid(1.0), 3.0);
        assert_relative_eq!(g2_zero_sinusoid(0.5), 2.666_666_666_666_667, epsilon = 1e-15);
        let mut prev = g2_zero_sinusoid(0.0);
        for k in 1..=1000 {
            let v = g2_zero_sinusoid(k as f64 / 1000.0);
            assert!(v > prev);
            prev = v;
        }
        assert_eq!(prev, 3.0);
    }

    #[test]
    fn noise_reference_values() {
        assert_eq!(gamma_noise(0.0, 200.0), 2.0);
        assert_relative_eq!(gamma_noise(1.0 / 200.0, 200.0), 1.0, epsilon = 1e-15);
        assert_relative_eq!(gamma_noise(1.0 / 400.0, 200.0), 1.0 + 4.0 / (PI * PI), epsilon = 1e-15);
        assert_relative_eq!(gamma_noise(1.0 / 400.0, 200.0), 1.405_284_7, epsilon = 1e-7);
        assert_eq!(g2_noise(0.0, 200.0, 1e4), 4.0);
        assert!(g2_noise(10.0, 200.0, 1e4) - 1.0 < 1e-6);
        // nu0 tau = 1 and delta_omega tau / 2 = pi
        let tau = 1e-3;
        assert_relative_eq!(g2_noise(tau, 1e3, TAU / tau), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn factorization_identity() {
        let (c, w0, dw) = (0.63, TAU * 5e4, TAU * 1e4);
        for k in -400..=400 {
            let tau = k as f64 * 0.5e-6;
            let half = (w0 * tau / 2.0).cos();
            let lhs = g2_sinusoid(tau, c, w0, dw) * (1.0 + c);
            let rhs = (1.0 + 2.0 * c * half * half) * g2_speckle(tau, dw);
            assert_relative_eq!(lhs, rhs, max_relative = 1e-14);
        }
    }

    #[test]
    fn noise_tends_to_speckle_for_wide_band() {
        let dw = TAU * 1e4;
        for &tau in &[1e-5, 3e-5, 1e-4] {
            for &nu in &[1e6, 1e8] {
                // sinc^2(pi nu tau) <= 1 / (pi nu tau)^2
                let bound = 1.0 / (PI * nu * tau).powi(2) * g2_speckle(tau, dw);
                assert!((g2_noise(tau, nu, dw) - g2_speckle(tau, dw)).abs() <= bound + 1e-15);
            }
        }
    }

    #[test]
    fn peak_to_plateau_is_three_to_one() {
        // unnormalized [1 + 2C cos^2][1 + sinc^2] at C = 1: peak 6, plateau mean 2
        let (w0, dw) = (TAU * 5e4, TAU * 1e4);
        let peak = g2_sinusoid(0.0, 1.0, w0, dw) * 2.0;
        let far: Vec<f64> = (0..20_000).map(|k| 0.05 + k as f64 * 1e-7).collect();
        let plateau = far.iter().map(|&t| g2_sinusoid(t, 1.0, w0, dw) * 2.0).sum::<f64>() / far.len() as f64;
        assert_relative_eq!(peak, 6.0, epsilon = 1e-12);
        assert_relative_eq!(plateau, 2.0, epsilon = 1e-3);
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let mut checked = 0;
        for _ in 0..20 {
            let models = [
                TheoryModel::SpeckleOnly {
                    delta_omega: rng.random_range(1e3..1e5),
                },
                TheoryModel::SinusoidSpeckle {
                    depth: rng.random_range(0.05..0.95),
                    omega0: rng.random_range(1e4..1e6),
                    delta_omega: rng.random_range(1e3..1e5),
                },
                TheoryModel::NoiseSpeckle {
                    cutoff_hz: rng.random_range(10.0..1e4),
                    delta_omega: rng.random_range(1e3..1e5),
                },
            ];
            let tau: f64 = rng.random_range(-3e-4..3e-4);
            for m in models {
                let p = m.params();
                let g = m.gradient(tau);
                for i in 0..p.len() {
                    let h = 1e-5 * p[i].abs();
                    let mut up = p.clone();
                    let mut dn = p.clone();
                    up[i] += h;
                    dn[i] -= h;
                    let fd = (m.with_params(&up).eval(tau) - m.with_params(&dn).eval(tau)) / (2.0 * h);
                    // derivative scale of the whole function per relative parameter change
                    let scale = (m.eval(tau) / p[i].abs()).max(g[i].abs());
                    assert!(
                        (g[i] - fd).abs() <= 1e-6 * scale,
                        "{m:?} tau {tau} param {i}: {} vs {fd}",
                        g[i]
                    );
                    checked += 1;
                }
            }
        }
        assert_eq!(checked, 20 * 6);
    }
}
