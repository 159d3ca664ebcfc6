//! Modulated laser intensity ahead of the groundglass.
//!
//! Four drive models are supported: a constant beam, an ideal sinusoid
//! `I0 [1 + C cos(w0 t + phi)]`, band-limited Gaussian noise (intensity equal
//! to the squared modulus of a circular complex Gaussian field with a flat
//! spectrum `nu0` Hz wide, optionally clipped and quantized), and a voltage
//! waveform pushed through the fitted EOM transfer curve.

use std::io::Write;

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::correlator::G2Curve;
use crate::error::{Error, Result};
use crate::scalar::{ordered_mean, Real};
use crate::spectral::band_limited_field;

/// Sinusoidal voltage-to-intensity response of the polarizer/EOM/polarizer stack.
///
/// `offset + amplitude * sin(pi (v - center) / period)`, in scaled detector units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EomTransfer<T> {
    pub offset: T,
    pub amplitude: T,
    pub period: T,
    pub center: T,
}

impl<T: Real> Default for EomTransfer<T> {
    fn default() -> Self {
        Self {
            offset: T::lit(2.04),
            amplitude: T::lit(1.92),
            period: T::lit(8.65),
            center: T::lit(0.49),
        }
    }
}

impl<T: Real> EomTransfer<T> {
    pub fn eval(&self, v_in: T) -> Result<T> {
        if !v_in.is_finite() {
            return Err(Error::domain(format!("EOM drive voltage must be finite, got {v_in}")));
        }
        Ok(self.offset + self.amplitude * (T::PI() * (v_in - self.center) / self.period).sin())
    }

    /// Output range `[offset - amplitude, offset + amplitude]`.
    pub fn range(&self) -> (T, T) {
        (self.offset - self.amplitude, self.offset + self.amplitude)
    }
}

/// Voltage to intensity with the default transfer parameters.
pub fn eom_transfer<T: Real>(v_in: T) -> Result<T> {
    EomTransfer::default().eval(v_in)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriveWaveform<T> {
    Sinusoid {
        frequency_hz: T,
    },
    /// Real Gaussian voltage with flat spectrum on `[0, cutoff_hz]`.
    BandNoise {
        cutoff_hz: T,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EomDrive<T> {
    pub waveform: DriveWaveform<T>,
    /// Peak-to-peak drive voltage.
    pub v_pp: T,
    /// DC bias added to the waveform.
    pub bias: T,
    /// Resolution of the signal generator, if finite.
    pub drive_bits: Option<u32>,
    pub transfer: EomTransfer<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModulationModel<T> {
    Constant {
        intensity: T,
    },
    Sinusoid {
        intensity: T,
        depth: T,
        /// Angular frequency, rad/s.
        omega: T,
        phase: T,
    },
    BandNoise {
        mean: T,
        cutoff_hz: T,
        clip: Option<T>,
        quantization_bits: Option<u32>,
    },
    EomDriven(EomDrive<T>),
}

impl<T: Real> ModulationModel<T> {
    /// Band noise limited the way a real EOM drive is: saturation at twice
    /// the mean and an 8-bit generator.
    pub fn realistic_noise(mean: T, cutoff_hz: T) -> Self {
        ModulationModel::BandNoise {
            mean,
            cutoff_hz,
            clip: Some(mean + mean),
            quantization_bits: Some(8),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: T| {
            if x.is_finite() && x > T::zero() {
                Ok(())
            } else {
                Err(Error::config(
                    format!("modulation.{name}"),
                    format!("must be finite and > 0, got {x}"),
                ))
            }
        };
        let bits = |name: &str, b: Option<u32>| match b {
            Some(b) if !(1..=32).contains(&b) => Err(Error::config(
                format!("modulation.{name}"),
                format!("must be in 1..=32, got {b}"),
            )),
            _ => Ok(()),
        };
        match *self {
            ModulationModel::Constant { intensity } => positive("intensity", intensity),
            ModulationModel::Sinusoid {
                intensity,
                depth,
                omega,
                phase,
            } => {
                positive("intensity", intensity)?;
                positive("frequency", omega)?;
                if !(depth >= T::zero() && depth <= T::one()) {
                    return Err(Error::config(
                        "modulation.depth",
                        format!("must lie in [0, 1], got {depth}"),
                    ));
                }
                if !phase.is_finite() {
                    return Err(Error::config("modulation.phase", "must be finite"));
                }
                Ok(())
            }
            ModulationModel::BandNoise {
                mean,
                cutoff_hz,
                clip,
                quantization_bits,
            } => {
                positive("mean", mean)?;
                positive("cutoff_hz", cutoff_hz)?;
                if let Some(c) = clip {
                    positive("clip", c)?;
                }
                bits("quantization_bits", quantization_bits)
            }
            ModulationModel::EomDriven(drive) => {
                match drive.waveform {
                    DriveWaveform::Sinusoid { frequency_hz } => positive("frequency_hz", frequency_hz)?,
                    DriveWaveform::BandNoise { cutoff_hz } => positive("cutoff_hz", cutoff_hz)?,
                }
                if !(drive.v_pp.is_finite() && drive.v_pp >= T::zero()) {
                    return Err(Error::config(
                        "modulation.v_pp",
                        format!("must be finite and >= 0, got {}", drive.v_pp),
                    ));
                }
                if !drive.bias.is_finite() {
                    return Err(Error::config("modulation.bias_v", "must be finite"));
                }
                positive("transfer.period", drive.transfer.period)?;
                bits("drive_bits", drive.drive_bits)
            }
        }
    }

    /// Largest sample spacing that resolves the model's fastest structure.
    pub fn max_dt(&self) -> Option<T> {
        let ten = T::lit(10.0);
        match *self {
            ModulationModel::Constant { .. } => None,
            ModulationModel::Sinusoid { omega, .. } => Some(T::TAU() / (omega * T::lit(20.0))),
            ModulationModel::BandNoise { cutoff_hz, .. } => Some(T::one() / (ten * cutoff_hz)),
            ModulationModel::EomDriven(drive) => Some(match drive.waveform {
                DriveWaveform::Sinusoid { frequency_hz } => T::one() / (ten * frequency_hz),
                DriveWaveform::BandNoise { cutoff_hz } => T::one() / (ten * cutoff_hz),
            }),
        }
    }
}

/// Uniformly sampled nonnegative intensity, in scaled units.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityTrace<T> {
    pub t0: T,
    pub dt: T,
    pub samples: Vec<T>,
    /// Mean the generating model targets.
    pub mean: T,
    /// Set when the record spans fewer than ten correlation times of the model.
    pub short_record: bool,
}

impl<T: Real> IntensityTrace<T> {
    pub fn new(t0: T, dt: T, samples: Vec<T>, mean: T) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::domain("intensity trace must be nonempty"));
        }
        if !(dt > T::zero()) {
            return Err(Error::domain(format!("sample spacing must be > 0, got {dt}")));
        }
        if let Some(bad) = samples.iter().find(|x| !(**x >= T::zero()) || !x.is_finite()) {
            return Err(Error::domain(format!(
                "intensity samples must be finite and >= 0, found {bad}"
            )));
        }
        Ok(Self {
            t0,
            dt,
            samples,
            mean,
            short_record: false,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> T {
        self.dt * T::from_usize_lossy(self.samples.len())
    }

    pub fn time(&self, i: usize) -> T {
        self.t0 + T::from_usize_lossy(i) * self.dt
    }

    pub fn empirical_mean(&self) -> T {
        ordered_mean(&self.samples)
    }

    pub fn max(&self) -> T {
        self.samples.iter().fold(T::zero(), |m, &x| m.max(x))
    }

    /// CSV with header `t_s,intensity`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t_s,intensity")?;
        for (i, x) in self.samples.iter().enumerate() {
            writeln!(w, "{},{}", self.time(i), x)?;
        }
        Ok(())
    }
}

fn check_grid<T: Real>(dt: T, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::config(
            "detection.duration_s",
            "sampling grid must contain at least one sample",
        ));
    }
    if !(dt.is_finite() && dt > T::zero()) {
        return Err(Error::config(
            "detection.dt_s",
            format!("sample spacing must be > 0, got {dt}"),
        ));
    }
    Ok(())
}

/// Samples `model` on the grid `t0 + i dt`, `i < n`. Deterministic in `seed`.
pub fn sample_intensity<T: Real>(
    model: &ModulationModel<T>,
    t0: T,
    dt: T,
    n: usize,
    seed: u64,
) -> Result<IntensityTrace<T>> {
    model.validate()?;
    check_grid(dt, n)?;
    if let Some(limit) = model.max_dt() {
        if dt > limit * T::lit(1.0 + 1e-9) {
            return Err(Error::config(
                "detection.dt_s",
                format!("sample spacing {dt} s undersamples the modulation; need <= {limit} s"),
            ));
        }
    }
    let time = |i: usize| t0 + T::from_usize_lossy(i) * dt;
    let span = dt.as_f64() * n as f64;

    match *model {
        ModulationModel::Constant { intensity } => IntensityTrace::new(t0, dt, vec![intensity; n], intensity),
        ModulationModel::Sinusoid {
            intensity,
            depth,
            omega,
            phase,
        } => {
            let samples = (0..n)
                .into_par_iter()
                .map(|i| intensity * (T::one() + depth * (omega * time(i) + phase).cos()))
                .collect();
            IntensityTrace::new(t0, dt, samples, intensity)
        }
        ModulationModel::BandNoise {
            mean,
            cutoff_hz,
            clip,
            quantization_bits,
        } => {
            let nu = cutoff_hz.as_f64();
            let field = band_limited_field::<T>(n, dt.as_f64(), 0.0, nu, seed, "signal");
            let mut samples: Vec<T> = field.samples.par_iter().map(|a| a.norm_sqr()).collect();
            let scale = mean / ordered_mean(&samples);
            samples.par_iter_mut().for_each(|x| *x = *x * scale);
            if let Some(c) = clip {
                samples.par_iter_mut().for_each(|x| *x = x.min(c));
            }
            if let Some(bits) = quantization_bits {
                let top = samples.iter().fold(T::zero(), |m, &x| m.max(x));
                quantize(&mut samples, T::zero(), top, bits);
            }
            let mut trace = IntensityTrace::new(t0, dt, samples, mean)?;
            trace.short_record = span < 10.0 / nu;
            Ok(trace)
        }
        ModulationModel::EomDriven(drive) => {
            let half = drive.v_pp / T::lit(2.0);
            let (mut volts, short) = match drive.waveform {
                DriveWaveform::Sinusoid { frequency_hz } => {
                    let w = T::TAU() * frequency_hz;
                    let v: Vec<T> = (0..n)
                        .into_par_iter()
                        .map(|i| drive.bias + half * (w * time(i)).sin())
                        .collect();
                    (v, false)
                }
                DriveWaveform::BandNoise { cutoff_hz } => {
                    let nu = cutoff_hz.as_f64();
                    let field = band_limited_field::<T>(n, dt.as_f64(), 0.0, nu, seed, "signal.drive");
                    let re: Vec<T> = field.samples.iter().map(|a| a.re).collect();
                    let lo = re.iter().fold(T::infinity(), |m, &x| m.min(x));
                    let hi = re.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
                    let mid = (lo + hi) / T::lit(2.0);
                    let width = hi - lo;
                    let v = re
                        .iter()
                        .map(|&x| {
                            if width > T::zero() {
                                drive.bias + drive.v_pp * (x - mid) / width
                            } else {
                                drive.bias
                            }
                        })
                        .collect();
                    (v, span < 10.0 / nu)
                }
            };
            if let Some(bits) = drive.drive_bits {
                quantize_offset(&mut volts, drive.bias - half, drive.v_pp, bits);
            }
            let samples = volts
                .iter()
                .map(|&v| drive.transfer.eval(v))
                .collect::<Result<Vec<T>>>()?;
            let samples: Vec<T> = samples.into_iter().map(|x| x.max(T::zero())).collect();
            let mean = ordered_mean(&samples);
            let mut trace = IntensityTrace::new(t0, dt, samples, mean)?;
            trace.short_record = short;
            Ok(trace)
        }
    }
}

/// Mid-tread uniform quantizer with `2^bits` levels spanning `[lo, hi]`.
fn quantize<T: Real>(xs: &mut [T], lo: T, hi: T, bits: u32) {
    quantize_offset(xs, lo, hi - lo, bits)
}

fn quantize_offset<T: Real>(xs: &mut [T], lo: T, width: T, bits: u32) {
    if !(width > T::zero()) {
        return;
    }
    let levels = (2f64.powi(bits as i32) - 1.0).max(1.0);
    let step = width / T::lit(levels);
    let top = T::lit(levels);
    xs.par_iter_mut().for_each(|x| {
        let q = ((*x - lo) / step).round().max(T::zero()).min(top);
        *x = lo + q * step;
    });
}

/// Sums `S_k = sum_j x_j x_{j+k}` for `k = 0..=max_k`.
pub(crate) fn lagged_products(x: &[f64], max_k: usize) -> Vec<f64> {
    let n = x.len();
    let max_k = max_k.min(n.saturating_sub(1));
    if (n as f64) * ((max_k + 1) as f64) <= 2e7 {
        return lagged_products_direct(x, max_k);
    }
    lagged_products_fft(x, max_k)
}

pub(crate) fn lagged_products_direct(x: &[f64], max_k: usize) -> Vec<f64> {
    (0..=max_k)
        .into_par_iter()
        .map(|k| x[..x.len() - k].iter().zip(&x[k..]).map(|(a, b)| a * b).sum())
        .collect()
}

/// Overlap-save evaluation: each block of `block` starts is correlated
/// against itself plus `max_k` samples of look-ahead in one zero-padded FFT.
pub(crate) fn lagged_products_fft(x: &[f64], max_k: usize) -> Vec<f64> {
    let n = x.len();
    let block = (4 * (max_k + 1)).max(1 << 14);
    let size = (block + max_k).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let starts: Vec<usize> = (0..n).step_by(block).collect();

    let partial: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&s| {
            let zero = Complex::new(0.0, 0.0);
            let mut a = vec![zero; size];
            let mut b = vec![zero; size];
            for (dst, &v) in a.iter_mut().zip(&x[s..(s + block).min(n)]) {
                dst.re = v;
            }
            for (dst, &v) in b.iter_mut().zip(&x[s..(s + block + max_k).min(n)]) {
                dst.re = v;
            }
            fwd.process(&mut a);
            fwd.process(&mut b);
            for (p, q) in a.iter_mut().zip(&b) {
                *p = p.conj() * q;
            }
            inv.process(&mut a);
            a[..=max_k].iter().map(|c| c.re / size as f64).collect()
        })
        .collect();

    let mut out = vec![0.0; max_k + 1];
    for p in &partial {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

/// Normalized intensity autocorrelation `<I(t) I(t+tau)>_t / <I>^2` for `tau = k dt <= max_lag`.
///
/// The product average at lag `k` runs over the `n - k` overlapping pairs, so
/// a constant trace gives exactly one at every lag. Errors are reported as zero.
pub fn modulation_autocorrelation<T: Real>(trace: &IntensityTrace<T>, max_lag: T) -> Result<G2Curve<T>> {
    if trace.is_empty() {
        return Err(Error::domain("cannot correlate an empty trace"));
    }
    if !(max_lag >= T::zero()) || !(max_lag < trace.duration() / T::lit(2.0)) {
        return Err(Error::domain(format!(
            "max lag {max_lag} s must be nonnegative and below half the trace duration {} s",
            trace.duration()
        )));
    }
    let x: Vec<f64> = trace.samples.iter().map(|v| v.as_f64()).collect();
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    if !(mean > 0.0) {
        return Err(Error::Degenerate("trace has zero mean intensity".into()));
    }
    let max_k = (max_lag / trace.dt).floor().to_usize().unwrap_or(0);
    let sums = lagged_products(&x, max_k);
    let tau = (0..=max_k).map(|k| T::from_usize_lossy(k) * trace.dt).collect();
    let g2 = sums
        .iter()
        .enumerate()
        .map(|(k, s)| T::lit(s / (n - k) as f64 / (mean * mean)))
        .collect();
    Ok(G2Curve::new(tau, g2, vec![T::zero(); max_k + 1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn eom_transfer_reference_points() {
        assert_relative_eq!(eom_transfer(0.49_f64).unwrap(), 2.04, epsilon = 1e-15);
        assert_relative_eq!(eom_transfer(4.815_f64).unwrap(), 3.96, epsilon = 1e-12);
        // 2.04 + 1.92 sin(pi * 3.61 / 8.65)
        assert_relative_eq!(eom_transfer(4.1_f64).unwrap(), 3.895_626, epsilon = 1e-6);
        assert!(eom_transfer(f64::NAN).is_err());
        assert!(eom_transfer(f64::INFINITY).is_err());
        assert_relative_eq!(eom_transfer(4.1_f32).unwrap(), 3.895_626_f32, epsilon = 1e-5);
    }

    #[test]
    fn constant_trace_is_exact() {
        let t = sample_intensity(&ModulationModel::Constant { intensity: 1.0 }, 0.0, 1e-3, 100, 1).unwrap();
        assert!(t.samples.iter().all(|&x| x == 1.0));
        let g = modulation_autocorrelation(&t, 0.02).unwrap();
        assert!(g.g2.iter().all(|&x| (x - 1.0_f64).abs() < 1e-12));
    }

    #[test]
    fn sinusoid_extremes() {
        let model = ModulationModel::Sinusoid {
            intensity: 1.0,
            depth: 1.0,
            omega: std::f64::consts::TAU * 1e3,
            phase: 0.0,
        };
        let t = sample_intensity(&model, 0.0, 1e-5, 10_000, 0).unwrap();
        assert_eq!(t.samples[0], 2.0);
        let (lo, hi) = t
            .samples
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        assert!((0.0..1e-9).contains(&lo));
        assert!(hi <= 2.0);
        let g = modulation_autocorrelation(&t, 0.0).unwrap();
        // <(1 + cos)^2> / <1 + cos>^2 = 1 + C^2 / 2 over whole periods
        assert_relative_eq!(g.g2[0], 1.5, epsilon = 1e-9);
    }

    #[test]
    fn undersampled_noise_is_rejected() {
        let model = ModulationModel::BandNoise {
            mean: 1.0,
            cutoff_hz: 200.0,
            clip: None,
            quantization_bits: None,
        };
        let err = sample_intensity(&model, 0.0, 1e-3, 1000, 0).unwrap_err();
        assert!(matches!(err, Error::Config { .. }), "{err}");
        let short = sample_intensity(&model, 0.0, 5e-4, 80, 0).unwrap();
        assert!(short.short_record);
        let long = sample_intensity(&model, 0.0, 5e-4, 1000, 0).unwrap();
        assert!(!long.short_record);
    }

    #[test]
    fn invalid_models_are_rejected() {
        let bad = [
            ModulationModel::Constant { intensity: 0.0 },
            ModulationModel::Sinusoid {
                intensity: 1.0,
                depth: 1.5,
                omega: 1.0,
                phase: 0.0,
            },
            ModulationModel::Sinusoid {
                intensity: 1.0,
                depth: 0.5,
                omega: 0.0,
                phase: 0.0,
            },
            ModulationModel::BandNoise {
                mean: 1.0,
                cutoff_hz: -1.0,
                clip: None,
                quantization_bits: None,
            },
            ModulationModel::BandNoise {
                mean: 1.0,
                cutoff_hz: 1.0,
                clip: None,
                quantization_bits: Some(0),
            },
        ];
        for m in bad {
            assert!(m.validate().is_err(), "{m:?}");
        }
    }

    #[test]
    fn empty_grid_is_rejected() {
        assert!(sample_intensity(&ModulationModel::Constant { intensity: 1.0 }, 0.0, 1e-3, 0, 1).is_err());
        assert!(IntensityTrace::<f64>::new(0.0, 1.0, vec![], 1.0).is_err());
    }

    #[test]
    fn lag_beyond_half_duration_is_rejected() {
        let t = sample_intensity(&ModulationModel::Constant { intensity: 1.0 }, 0.0, 1e-3, 100, 1).unwrap();
        assert!(modulation_autocorrelation(&t, 0.05).is_err());
        assert!(modulation_autocorrelation(&t, 0.049).is_ok());
    }

    #[test]
    fn fft_and_direct_lagged_products_agree() {
        let model = ModulationModel::BandNoise {
            mean: 1.0,
            cutoff_hz: 50.0,
            clip: None,
            quantization_bits: None,
        };
        let t = sample_intensity(&model, 0.0, 1e-3, 70_001, 9).unwrap();
        let direct = lagged_products_direct(&t.samples, 300);
        let fft = lagged_products_fft(&t.samples, 300);
        for (a, b) in direct.iter().zip(&fft) {
            assert_relative_eq!(a, b, max_relative = 1e-10);
        }
    }

    #[test]
    fn quantizer_levels() {
        let mut xs = vec![0.0, 0.1, 0.49, 0.51, 1.0];
        quantize(&mut xs, 0.0, 1.0, 1);
        assert_eq!(xs, vec![0.0, 0.0, 0.0, 1.0, 1.0]);
        let mut ys: Vec<f64> = (0..1000).map(|i| i as f64 / 999.0).collect();
        quantize(&mut ys, 0.0, 1.0, 8);
        let mut distinct = ys.clone();
        distinct.dedup();
        assert_eq!(distinct.len(), 256);
    }

    #[test]
    fn eom_sinusoid_drive_spans_transfer_range() {
        let drive = EomDrive {
            waveform: DriveWaveform::Sinusoid { frequency_hz: 50e3 },
            v_pp: 8.0,
            bias: 0.0,
            drive_bits: None,
            transfer: EomTransfer::default(),
        };
        let t = sample_intensity(&ModulationModel::EomDriven(drive), 0.0, 1e-7, 2000, 0).unwrap();
        let (lo, hi) = EomTransfer::<f64>::default().range();
        assert!(t.samples.iter().all(|&x| x >= lo - 1e-12 && x <= hi + 1e-12));
        let c = (t.max() - t.samples.iter().cloned().fold(f64::MAX, f64::min))
            / (t.max() + t.samples.iter().cloned().fold(f64::MAX, f64::min));
        // depth near 0.94 at 8 V peak-to-peak
        assert!((c - 0.94).abs() < 0.01, "depth {c}");
    }

    #[test]
    fn f32_sampling_matches_f64_closely() {
        let m64 = ModulationModel::Sinusoid {
            intensity: 1.0_f64,
            depth: 0.5,
            omega: 1000.0,
            phase: 0.3,
        };
        let m32 = ModulationModel::Sinusoid {
            intensity: 1.0_f32,
            depth: 0.5,
            omega: 1000.0,
            phase: 0.3,
        };
        let a = sample_intensity(&m64, 0.0, 1e-4, 500, 0).unwrap();
        let b = sample_intensity(&m32, 0.0, 1e-4, 500, 0).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!((x - *y as f64).abs() < 1e-4);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn transfer_output_within_range(v in -1e3f64..1e3) {
            let t = EomTransfer::<f64>::default();
            let (lo, hi) = t.range();
            let y = t.eval(v).unwrap();
            prop_assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
        }

        #[test]
        fn every_model_is_nonnegative_and_deterministic(
            kind in 0usize..4,
            depth in 0.0f64..=1.0,
            seed in any::<u64>(),
            clip in proptest::option::of(0.5f64..4.0),
            bits in proptest::option::of(1u32..12),
            v_pp in 0.0f64..12.0,
        ) {
            let model = match kind {
                0 => ModulationModel::Constant { intensity: 1.3 },
                1 => ModulationModel::Sinusoid { intensity: 1.0, depth, omega: 200.0, phase: 0.7 },
                2 => ModulationModel::BandNoise { mean: 1.0, cutoff_hz: 20.0, clip, quantization_bits: bits },
                _ => ModulationModel::EomDriven(EomDrive {
                    waveform: DriveWaveform::BandNoise { cutoff_hz: 20.0 },
                    v_pp,
                    bias: 0.0,
                    drive_bits: bits,
                    transfer: EomTransfer::default(),
                }),
            };
            let a = sample_intensity(&model, 0.0, 1e-3, 2048, seed).unwrap();
            let b = sample_intensity(&model, 0.0, 1e-3, 2048, seed).unwrap();
            prop_assert!(a.samples.iter().all(|&x| x >= 0.0));
            prop_assert_eq!(a, b);
        }

        #[test]
        fn zero_lag_correlation_shrinks_with_tighter_clip(seed in any::<u64>(), c_hi in 1.0f64..5.0, frac in 0.2f64..1.0) {
            let run = |clip: f64| {
                let m = ModulationModel::BandNoise { mean: 1.0, cutoff_hz: 20.0, clip: Some(clip), quantization_bits: None };
                let t = sample_intensity(&m, 0.0, 1e-3, 4096, seed).unwrap();
                modulation_autocorrelation(&t, 0.0).unwrap().g2[0]
            };
            let loose = run(c_hi);
            let tight = run(c_hi * frac);
            prop_assert!(tight <= loose + 1e-12);
        }
    }
}
