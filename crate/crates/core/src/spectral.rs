//! Band-limited circular complex Gaussian processes by spectral synthesis.
//!
//! Fourier coefficients inside the band are independent `CN(0, 1/K)` draws
//! (K = number of in-band bins), everything outside is zero, and one inverse
//! FFT yields a periodic stationary process with `E|a|^2 = 1` and a flat
//! spectrum over the band.

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::scalar::Real;
use crate::seed::substream;

/// Coefficients are drawn in blocks of this many FFT bins, one substream per block.
const COEFF_BLOCK: usize = 4096;

pub(crate) struct BandField<T> {
    pub samples: Vec<Complex<T>>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub bins: usize,
}

/// Synthesizes `n` samples spaced `dt` seconds apart with a flat spectrum on `[f_lo, f_hi]` Hz.
///
/// At least one bin is always populated; with a single bin the modulus is constant.
pub(crate) fn band_limited_field<T: Real>(
    n: usize,
    dt: f64,
    f_lo: f64,
    f_hi: f64,
    seed: u64,
    stage: &str,
) -> BandField<T> {
    assert!(n > 0 && dt > 0.0 && f_hi >= f_lo);
    let span = n as f64 * dt;
    let half = (n / 2) as i64;
    let mut k_lo = ((f_lo * span) - 1e-9).ceil() as i64;
    let mut k_hi = ((f_hi * span) + 1e-9).floor() as i64;
    k_lo = k_lo.max(half - n as i64 + 1);
    k_hi = k_hi.min(half);
    if k_hi < k_lo {
        k_hi = k_lo;
    }

    let mut indices: Vec<usize> = (k_lo..=k_hi).map(|k| k.rem_euclid(n as i64) as usize).collect();
    indices.sort_unstable();
    let bins = indices.len();
    let scale = (0.5 / bins as f64).sqrt();

    let mut groups: Vec<&[usize]> = Vec::new();
    let mut rest = indices.as_slice();
    while let Some(&first) = rest.first() {
        let block = first / COEFF_BLOCK;
        let len = rest.partition_point(|&i| i / COEFF_BLOCK == block);
        groups.push(&rest[..len]);
        rest = &rest[len..];
    }

    let drawn: Vec<Vec<(usize, Complex<T>)>> = groups
        .par_iter()
        .map(|group| {
            let mut rng = substream(seed, stage, (group[0] / COEFF_BLOCK) as u64);
            group
                .iter()
                .map(|&idx| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    (idx, Complex::new(T::lit(re * scale), T::lit(im * scale)))
                })
                .collect()
        })
        .collect();

    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    for (idx, c) in drawn.into_iter().flatten() {
        buf[idx] = c;
    }
    FftPlanner::<T>::new().plan_fft_inverse(n).process(&mut buf);
    BandField { samples: buf, bins }
}
