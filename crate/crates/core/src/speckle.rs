//! Rotating-groundglass speckle as a multiplicative pseudothermal field.
//!
//! The field is a stationary circular complex Gaussian process with a flat
//! angular spectrum of width `delta_omega`, so its normalized field
//! correlation is `sinc(delta_omega tau / 2)` and the intensity correlation
//! of the scattered light is `1 + sinc^2(delta_omega tau / 2)`.

use std::io::Write;

use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::{ordered_mean, Real};
use crate::signal::IntensityTrace;
use crate::spectral::band_limited_field;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeckleParams<T> {
    /// Angular bandwidth, rad/s.
    pub bandwidth: T,
    /// Mean intensity gain of the scattered field.
    pub gain: T,
    pub seed: u64,
}

impl<T: Real> SpeckleParams<T> {
    pub fn new(bandwidth: T, seed: u64) -> Self {
        Self {
            bandwidth,
            gain: T::one(),
            seed,
        }
    }

    /// `2 pi / delta_omega`, the first zero of the field correlation.
    pub fn coherence_time(&self) -> T {
        T::TAU() / self.bandwidth
    }

    /// Largest grid spacing that resolves the field: a tenth of the coherence time.
    pub fn max_dt(&self) -> T {
        self.coherence_time() / T::lit(10.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth.is_finite() && self.bandwidth > T::zero()) {
            return Err(Error::config(
                "speckle.bandwidth_hz",
                format!("must be finite and > 0, got {}", self.bandwidth),
            ));
        }
        if !(self.gain.is_finite() && self.gain > T::zero()) {
            return Err(Error::config(
                "speckle.gain",
                format!("must be finite and > 0, got {}", self.gain),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexFieldTrace<T> {
    pub t0: T,
    pub dt: T,
    pub samples: Vec<Complex<T>>,
}

impl<T: Real> ComplexFieldTrace<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn intensities(&self) -> Vec<T> {
        self.samples.par_iter().map(|e| e.norm_sqr()).collect()
    }

    pub fn mean_intensity(&self) -> T {
        ordered_mean(&self.intensities())
    }

    /// `|E|^2` as an intensity trace (same CSV format as any other trace).
    pub fn intensity_trace(&self) -> Result<IntensityTrace<T>> {
        let samples = self.intensities();
        let mean = ordered_mean(&samples);
        IntensityTrace::new(self.t0, self.dt, samples, mean)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        self.intensity_trace()?.write_csv(w)?;
        Ok(())
    }
}

/// Pseudothermal field on the grid `t0 + i dt`, `i < n`, with mean intensity equal to the gain.
pub fn generate_speckle_field<T: Real>(
    params: &SpeckleParams<T>,
    t0: T,
    dt: T,
    n: usize,
) -> Result<ComplexFieldTrace<T>> {
    params.validate()?;
    if n == 0 {
        return Err(Error::domain("speckle field needs at least one sample"));
    }
    if !(dt > T::zero()) || dt > params.max_dt() * T::lit(1.0 + 1e-9) {
        return Err(Error::config(
            "detection.dt_s",
            format!(
                "sample spacing {dt} s undersamples speckle of coherence time {} s; need <= {} s",
                params.coherence_time(),
                params.max_dt()
            ),
        ));
    }
    let half_width_hz = params.bandwidth.as_f64() / (4.0 * std::f64::consts::PI);
    let mut field = band_limited_field::<T>(n, dt.as_f64(), -half_width_hz, half_width_hz, params.seed, "speckle");
    let power = ordered_mean(&field.samples.iter().map(|e| e.norm_sqr()).collect::<Vec<T>>());
    let scale = (params.gain / power).sqrt();
    field.samples.par_iter_mut().for_each(|e| *e = *e * scale);
    Ok(ComplexFieldTrace {
        t0,
        dt,
        samples: field.samples,
    })
}

fn same_grid<T: Real>(a: T, b: T) -> bool {
    a == b || (a - b).abs() <= T::lit(1e-12) * a.abs().max(b.abs())
}

/// Scatters the modulated beam off the groundglass: `I_out = I_in |E|^2` sample by sample.
pub fn apply_speckle<T: Real>(input: &IntensityTrace<T>, field: &ComplexFieldTrace<T>) -> Result<IntensityTrace<T>> {
    if input.len() != field.len() || !same_grid(input.t0, field.t0) || !same_grid(input.dt, field.dt) {
        return Err(Error::domain(format!(
            "grid mismatch: intensity ({} samples, t0 {}, dt {}) vs field ({} samples, t0 {}, dt {})",
            input.len(),
            input.t0,
            input.dt,
            field.len(),
            field.t0,
            field.dt
        )));
    }
    if field.is_empty() {
        return Err(Error::domain("cannot apply an empty speckle field"));
    }
    let samples: Vec<T> = input
        .samples
        .par_iter()
        .zip(&field.samples)
        .map(|(&i, e)| i * e.norm_sqr())
        .collect();
    let mean = input.mean * field.mean_intensity();
    let mut out = IntensityTrace::new(input.t0, input.dt, samples, mean)?;
    out.short_record = input.short_record;
    Ok(out)
}
