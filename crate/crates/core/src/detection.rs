//! Semiclassical photodetection behind a 1:1 beam splitter.
//!
//! Photon arrivals form an inhomogeneous Poisson process with rate
//! `r I(t) / I_ref` per detector. The process is realized by thinning a
//! two-dimensional unit-density Poisson process in (time, level): each
//! time block of the trace is covered by stripes of height `2 r`, every
//! stripe has its own substream, and a candidate in stripe `j` with level
//! `j + u` survives when `j + u < I(t) / I_ref + dark / r`. The survivors of a
//! smaller intensity are therefore always a subset of those of a larger one
//! for the same seed, and the result does not depend on how blocks are
//! scheduled across threads.

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seed::substream2;
use crate::signal::IntensityTrace;

const TIME_BLOCK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    D1,
    D2,
}

impl Channel {
    pub fn number(self) -> u8 {
        match self {
            Channel::D1 => 1,
            Channel::D2 => 2,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Channel::D1),
            2 => Some(Channel::D2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct PhotonRecord {
    pub timestamp_ns: u64,
    pub channel: Channel,
}

/// Time-tagged detections of both detectors, each channel sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhotonStream {
    pub d1: Vec<u64>,
    pub d2: Vec<u64>,
    pub start_ns: u64,
    /// Acquisition time used to normalize coincidences.
    pub duration_ns: u64,
    pub resolution_ns: u64,
}

fn is_sorted(xs: &[u64]) -> bool {
    xs.windows(2).all(|w| w[0] <= w[1])
}

impl PhotonStream {
    pub fn new(d1: Vec<u64>, d2: Vec<u64>, start_ns: u64, duration_ns: u64, resolution_ns: u64) -> Result<Self> {
        if !is_sorted(&d1) || !is_sorted(&d2) {
            return Err(Error::domain("photon timestamps must be sorted ascending per channel"));
        }
        if duration_ns == 0 {
            return Err(Error::domain("acquisition time must be > 0"));
        }
        Ok(Self {
            d1,
            d2,
            start_ns,
            duration_ns,
            resolution_ns: resolution_ns.max(1),
        })
    }

    /// Builds a stream from records, which must be sorted by timestamp.
    ///
    /// Without an explicit duration the acquisition time is taken as the
    /// span of the records plus one resolution step.
    pub fn from_records(records: &[PhotonRecord], duration_ns: Option<u64>, resolution_ns: u64) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Degenerate("no photon records".into()));
        }
        let (mut d1, mut d2) = (Vec::new(), Vec::new());
        for r in records {
            match r.channel {
                Channel::D1 => d1.push(r.timestamp_ns),
                Channel::D2 => d2.push(r.timestamp_ns),
            }
        }
        let first = records.iter().map(|r| r.timestamp_ns).min().unwrap_or(0);
        let last = records.iter().map(|r| r.timestamp_ns).max().unwrap_or(0);
        let duration = duration_ns.unwrap_or(last - first + resolution_ns.max(1));
        Self::new(d1, d2, first, duration, resolution_ns)
    }

    pub fn channel(&self, ch: Channel) -> &[u64] {
        match ch {
            Channel::D1 => &self.d1,
            Channel::D2 => &self.d2,
        }
    }

    pub fn total(&self) -> usize {
        self.d1.len() + self.d2.len()
    }

    /// All records merged in time order, D1 first on ties.
    pub fn records(&self) -> Vec<PhotonRecord> {
        let mut out = Vec::with_capacity(self.total());
        let (mut i, mut j) = (0, 0);
        while i < self.d1.len() || j < self.d2.len() {
            let take_d1 = j >= self.d2.len() || (i < self.d1.len() && self.d1[i] <= self.d2[j]);
            if take_d1 {
                out.push(PhotonRecord {
                    timestamp_ns: self.d1[i],
                    channel: Channel::D1,
                });
                i += 1;
            } else {
                out.push(PhotonRecord {
                    timestamp_ns: self.d2[j],
                    channel: Channel::D2,
                });
                j += 1;
            }
        }
        out
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_ns as f64 * 1e-9
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    /// Count rate per detector at the reference intensity, counts/s.
    pub rate: f64,
    /// Timestamp quantum, ns.
    pub resolution_ns: u64,
    /// Additive dark-count rate per detector, counts/s.
    pub dark_rate: f64,
    /// Intensity that produces `rate`; `None` uses the trace's declared mean.
    pub reference_intensity: Option<f64>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            rate: 5e4,
            resolution_ns: 1,
            dark_rate: 0.0,
            reference_intensity: None,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(Error::config(
                "detection.rate",
                format!("must be finite and > 0, got {}", self.rate),
            ));
        }
        if self.resolution_ns == 0 {
            return Err(Error::config("detection.resolution_ns", "must be >= 1"));
        }
        if !(self.dark_rate.is_finite() && self.dark_rate >= 0.0) {
            return Err(Error::config("detection.dark_rate", "must be finite and >= 0"));
        }
        if let Some(r) = self.reference_intensity {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::config("detection.reference_intensity", "must be finite and > 0"));
            }
        }
        Ok(())
    }
}

/// Draws both detectors' photon streams for `intensity`. Deterministic in `seed`.
pub fn detect_photons<T: Real>(intensity: &IntensityTrace<T>, cfg: &DetectorConfig, seed: u64) -> Result<PhotonStream> {
    cfg.validate()?;
    if intensity.is_empty() {
        return Err(Error::domain("cannot detect photons from an empty trace"));
    }
    let t0 = intensity.t0.as_f64();
    let dt = intensity.dt.as_f64();
    if !(t0 >= 0.0) {
        return Err(Error::domain(format!(
            "trace start must be >= 0 s for timestamping, got {t0}"
        )));
    }
    let reference = cfg.reference_intensity.unwrap_or_else(|| intensity.mean.as_f64());
    if !(reference > 0.0) {
        return Err(Error::Degenerate("reference intensity is zero".into()));
    }
    let levels: Vec<f64> = intensity.samples.iter().map(|x| x.as_f64() / reference).collect();
    let dark = cfg.dark_rate / cfg.rate;
    let peak = levels.iter().fold(0.0_f64, |m, &x| m.max(x)) + dark;
    let peak_rate = cfg.rate * peak;
    let res = cfg.resolution_ns;
    if peak_rate * res as f64 * 1e-9 > 0.1 {
        return Err(Error::Resolution(format!(
            "peak rate {peak_rate:.3e}/s with {res} ns resolution exceeds 0.1 counts per tick"
        )));
    }

    let stripe_rate = 2.0 * cfg.rate;
    let n = levels.len();
    let blocks: Vec<(usize, usize)> = (0..n)
        .step_by(TIME_BLOCK)
        .map(|s| (s, (s + TIME_BLOCK).min(n)))
        .collect();

    let per_block: Vec<Vec<(u64, Channel)>> = blocks
        .par_iter()
        .enumerate()
        .map(|(b, &(s, e))| {
            let local = &levels[s..e];
            let top = local.iter().fold(0.0_f64, |m, &x| m.max(x)) + dark;
            let stripes = top.ceil() as u64;
            let start = t0 + s as f64 * dt;
            let length = (e - s) as f64 * dt;
            let mut hits = Vec::new();
            for j in 0..stripes {
                let mut rng = substream2(seed, "detection", b as u64, j);
                let mut t = 0.0;
                loop {
                    let gap: f64 = rng.sample(Exp1);
                    let u: f64 = rng.random();
                    let second: bool = rng.random();
                    t += gap / stripe_rate;
                    if t >= length {
                        break;
                    }
                    let i = ((t / dt) as usize).min(local.len() - 1);
                    if (j as f64) + u < local[i] + dark {
                        let ns = ((start + t) * 1e9 / res as f64).floor() as u64 * res;
                        hits.push((ns, if second { Channel::D2 } else { Channel::D1 }));
                    }
                }
            }
            hits.sort_unstable();
            hits
        })
        .collect();

    let (mut d1, mut d2) = (Vec::new(), Vec::new());
    for (ns, ch) in per_block.into_iter().flatten() {
        match ch {
            Channel::D1 => d1.push(ns),
            Channel::D2 => d2.push(ns),
        }
    }
    // rounding at block edges can swap neighbours by one tick
    d1.sort_unstable();
    d2.sort_unstable();
    let start_ns = (t0 * 1e9).round() as u64;
    let duration_ns = ((n as f64 * dt) * 1e9).round() as u64;
    PhotonStream::new(d1, d2, start_ns, duration_ns, res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{sample_intensity, ModulationModel};

    fn flat(level: f64, dt: f64, n: usize) -> IntensityTrace<f64> {
        sample_intensity(&ModulationModel::Constant { intensity: level }, 0.0, dt, n, 0).unwrap()
    }

    fn unit_ref(rate: f64) -> DetectorConfig {
        DetectorConfig {
            rate,
            reference_intensity: Some(1.0),
            ..Default::default()
        }
    }

    #[test]
    fn homogeneous_counts_are_poisson() {
        // r T = 1e5 per channel
        let trace = flat(1.0, 1e-4, 100_000);
        let s = detect_photons(&trace, &unit_ref(1e4), 5).unwrap();
        let expected = 1e5;
        for ch in [Channel::D1, Channel::D2] {
            let k = s.channel(ch).len() as f64;
            assert!((k - expected).abs() < 3.0 * expected.sqrt(), "{ch:?}: {k}");
        }
        assert_eq!(s.duration_ns, 10_000_000_000);
    }

    #[test]
    fn doubling_intensity_doubles_counts() {
        let cfg = unit_ref(1e4);
        let a = detect_photons(&flat(1.0, 1e-4, 50_000), &cfg, 1).unwrap().total() as f64;
        let b = detect_photons(&flat(2.0, 1e-4, 50_000), &cfg, 2).unwrap().total() as f64;
        // ratio of two Poisson counts: sd of b - 2a is sqrt(b + 4a)
        assert!((b - 2.0 * a).abs() < 3.0 * (b + 4.0 * a).sqrt(), "{a} {b}");
    }

    #[test]
    fn channels_split_evenly() {
        for seed in 0..20 {
            let s = detect_photons(&flat(1.0, 1e-4, 20_000), &unit_ref(5e3), seed).unwrap();
            let total = s.total() as f64;
            let diff = (s.d1.len() as f64 - s.d2.len() as f64).abs();
            // D1 - D2 = 2 D1 - N has variance N for a fair coin
            assert!(diff < 4.0 * total.sqrt(), "seed {seed}: {diff} of {total}");
        }
    }

    #[test]
    fn nested_intensities_give_nested_detections() {
        let big = sample_intensity(
            &ModulationModel::BandNoise {
                mean: 1.0,
                cutoff_hz: 50.0,
                clip: None,
                quantization_bits: None,
            },
            0.0,
            1e-3,
            20_000,
            3,
        )
        .unwrap();
        let mut small = big.clone();
        for (k, x) in small.samples.iter_mut().enumerate() {
            *x *= 0.3 + 0.7 * ((k as f64) * 1e-3).sin().abs();
        }
        let cfg = unit_ref(2e3);
        let a = detect_photons(&small, &cfg, 77).unwrap();
        let b = detect_photons(&big, &cfg, 77).unwrap();
        assert!(a.total() < b.total());
        for ch in [Channel::D1, Channel::D2] {
            let superset: std::collections::HashSet<u64> = b.channel(ch).iter().copied().collect();
            assert!(a.channel(ch).iter().all(|t| superset.contains(t)));
        }
    }

    #[test]
    fn timestamps_are_quantized_sorted_and_in_range() {
        let trace = flat(1.0, 1e-5, 30_000);
        let cfg = DetectorConfig {
            rate: 1e5,
            resolution_ns: 16,
            dark_rate: 0.0,
            reference_intensity: None,
        };
        let s = detect_photons(&trace, &cfg, 9).unwrap();
        for ch in [&s.d1, &s.d2] {
            assert!(ch.windows(2).all(|w| w[0] <= w[1]));
            assert!(ch.iter().all(|t| t % 16 == 0 && *t < 300_000_000));
        }
        let recs = s.records();
        assert_eq!(recs.len(), s.total());
        assert!(recs.windows(2).all(|w| w[0].timestamp_ns <= w[1].timestamp_ns));
    }

    #[test]
    fn pile_up_is_rejected() {
        let cfg = DetectorConfig {
            rate: 2e8,
            ..Default::default()
        };
        assert!(matches!(
            detect_photons(&flat(1.0, 1e-6, 100), &cfg, 0),
            Err(Error::Resolution(_))
        ));
    }

    #[test]
    fn dark_counts_add_a_floor() {
        let cfg = DetectorConfig {
            rate: 1e3,
            dark_rate: 1e3,
            reference_intensity: Some(1.0),
            ..Default::default()
        };
        let s = detect_photons(&flat(1.0, 1e-3, 100_000), &cfg, 4).unwrap();
        let per_channel = s.total() as f64 / 2.0;
        assert!((per_channel - 2e5).abs() < 3.0 * (2e5f64).sqrt() * 2.0);
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let trace = flat(1.0, 1e-5, 100_000);
        let cfg = unit_ref(2e4);
        let a = detect_photons(&trace, &cfg, 11).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| detect_photons(&trace, &cfg, 11)).unwrap();
        assert_eq!(a, b);
    }
}
