//! Coincidence counting between D1 and D2 and normalization to g2.
//!
//! Every ordered pair (t1 in D1, t2 in D2) with `|t1 - t2| < window` is
//! binned by `d = t1 - t2` (multi-start, multi-stop). Bins are `bin` wide
//! and mirror each other about zero: positive lags fill `[k bin, (k+1) bin)`,
//! negative lags `(-(k+1) bin, -k bin]`, and exact ties land in the first
//! positive bin.

use std::io::Write;
use std::ops::Range;

use rayon::prelude::*;

use crate::detection::PhotonStream;
use crate::error::{Error, Result};
use crate::scalar::Real;

const D1_CHUNK: usize = 1 << 15;

/// Binned correlation curve with one standard error per point.
#[derive(Debug, Clone, PartialEq)]
pub struct G2Curve<T> {
    pub tau: Vec<T>,
    pub g2: Vec<T>,
    pub stderr: Vec<T>,
}

impl<T: Real> G2Curve<T> {
    pub fn new(tau: Vec<T>, g2: Vec<T>, stderr: Vec<T>) -> Self {
        assert!(
            tau.len() == g2.len() && g2.len() == stderr.len(),
            "curve arrays must have equal length"
        );
        Self { tau, g2, stderr }
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    /// Mean of the point(s) closest to zero lag, with the matching standard error.
    pub fn zero_lag(&self) -> Option<(T, T)> {
        let closest = self.tau.iter().map(|t| t.abs()).fold(T::infinity(), T::min);
        let tol = closest * T::lit(1e-9);
        let picks: Vec<usize> = (0..self.len())
            .filter(|&i| (self.tau[i].abs() - closest).abs() <= tol)
            .collect();
        if picks.is_empty() {
            return None;
        }
        let k = T::from_usize_lossy(picks.len());
        let value = picks.iter().map(|&i| self.g2[i]).sum::<T>() / k;
        let err = picks.iter().map(|&i| self.stderr[i] * self.stderr[i]).sum::<T>().sqrt() / k;
        Some((value, err))
    }

    /// Averages each point with its mirror image, for curves on a lag grid symmetric about zero.
    pub fn symmetrized(&self) -> Self {
        let n = self.len();
        let two = T::lit(2.0);
        let g2 = (0..n).map(|i| (self.g2[i] + self.g2[n - 1 - i]) / two).collect();
        let stderr = (0..n)
            .map(|i| (self.stderr[i] * self.stderr[i] + self.stderr[n - 1 - i] * self.stderr[n - 1 - i]).sqrt() / two)
            .collect();
        Self::new(self.tau.clone(), g2, stderr)
    }

    /// CSV with header `tau_s,g2,stderr`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "tau_s,g2,stderr")?;
        for i in 0..self.len() {
            writeln!(w, "{},{},{}", self.tau[i], self.g2[i], self.stderr[i])?;
        }
        Ok(())
    }
}

/// Bin width and half-window, both in ns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorrelatorConfig {
    pub bin_ns: u64,
    pub window_ns: u64,
}

impl CorrelatorConfig {
    /// Window `window_s`; bin `bin_s`, or `window / 500` when absent.
    pub fn from_seconds(window_s: f64, bin_s: Option<f64>) -> Result<Self> {
        if !(window_s.is_finite() && window_s > 0.0) {
            return Err(Error::config(
                "correlator.window_s",
                format!("must be finite and > 0, got {window_s}"),
            ));
        }
        let window_ns = (window_s * 1e9).round() as u64;
        let bin_ns = match bin_s {
            Some(b) if !(b.is_finite() && b > 0.0) => {
                return Err(Error::config(
                    "correlator.bin_s",
                    format!("must be finite and > 0, got {b}"),
                ))
            }
            Some(b) => (b * 1e9).round() as u64,
            None => window_ns / 500,
        };
        let cfg = Self { bin_ns, window_ns };
        cfg.validate(1)?;
        Ok(cfg)
    }

    pub fn validate(&self, resolution_ns: u64) -> Result<()> {
        if self.bin_ns == 0 || self.bin_ns < resolution_ns {
            return Err(Error::config(
                "correlator.bin_s",
                format!(
                    "bin of {} ns is finer than the {resolution_ns} ns timestamp resolution",
                    self.bin_ns
                ),
            ));
        }
        if self.window_ns < 10 * self.bin_ns {
            return Err(Error::config(
                "correlator.window_s",
                "window must span at least ten bins",
            ));
        }
        if !self.window_ns.is_multiple_of(self.bin_ns) {
            return Err(Error::config(
                "correlator.window_s",
                "window must be a whole number of bins",
            ));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        (2 * self.window_ns / self.bin_ns) as usize
    }

    pub fn bin_s(&self) -> f64 {
        self.bin_ns as f64 * 1e-9
    }

    pub fn window_s(&self) -> f64 {
        self.window_ns as f64 * 1e-9
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoincidenceHistogram {
    pub bin_ns: u64,
    pub window_ns: u64,
    pub counts: Vec<u64>,
    /// Singles counts of D1 and D2.
    pub singles: [u64; 2],
    pub duration_ns: u64,
}

impl CoincidenceHistogram {
    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn config(&self) -> CorrelatorConfig {
        CorrelatorConfig {
            bin_ns: self.bin_ns,
            window_ns: self.window_ns,
        }
    }

    /// Bin centers in seconds, `(k - n/2 + 1/2) bin`.
    pub fn tau_centers_s(&self) -> Vec<f64> {
        let half = self.n_bins() as f64 / 2.0;
        (0..self.n_bins())
            .map(|k| (k as f64 - half + 0.5) * self.bin_ns as f64 * 1e-9)
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds the counts, singles and acquisition time of another histogram
    /// with identical geometry.
    pub fn merge(&mut self, other: &CoincidenceHistogram) -> Result<()> {
        if self.bin_ns != other.bin_ns || self.window_ns != other.window_ns {
            return Err(Error::domain("cannot merge histograms with different bin geometry"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.singles[0] += other.singles[0];
        self.singles[1] += other.singles[1];
        self.duration_ns += other.duration_ns;
        Ok(())
    }

    /// CSV with header `tau_s,counts`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "tau_s,counts")?;
        for (tau, c) in self.tau_centers_s().iter().zip(&self.counts) {
            writeln!(w, "{tau},{c}")?;
        }
        Ok(())
    }
}

#[inline]
fn bin_index(d: i64, bin: i64, half: usize) -> usize {
    if d >= 0 {
        half + (d / bin) as usize
    } else {
        half - 1 - ((-d) / bin) as usize
    }
}

/// Pair counts for the D1 photons `d1`, against all of `d2`.
fn count_pairs(d1: &[u64], d2: &[u64], cfg: CorrelatorConfig) -> Vec<u64> {
    let nb = cfg.n_bins();
    let half = nb / 2;
    let w = cfg.window_ns;
    let bin = cfg.bin_ns as i64;
    let mut counts = vec![0u64; nb];
    let Some(&first) = d1.first() else {
        return counts;
    };
    let mut lo = d2.partition_point(|&t2| t2 + w <= first);
    let mut hi = d2.partition_point(|&t2| t2 < first + w);
    for &t1 in d1 {
        while lo < d2.len() && d2[lo] + w <= t1 {
            lo += 1;
        }
        while hi < d2.len() && d2[hi] < t1 + w {
            hi += 1;
        }
        for &t2 in &d2[lo..hi] {
            counts[bin_index(t1 as i64 - t2 as i64, bin, half)] += 1;
        }
    }
    counts
}

fn check_stream(stream: &PhotonStream, cfg: &CorrelatorConfig) -> Result<()> {
    cfg.validate(stream.resolution_ns)?;
    for (name, ch) in [("D1", &stream.d1), ("D2", &stream.d2)] {
        if !ch.windows(2).all(|w| w[0] <= w[1]) {
            return Err(Error::domain(format!("{name} timestamps are not sorted")));
        }
        if ch.is_empty() {
            return Err(Error::Degenerate(format!("channel {name} has no photons")));
        }
    }
    Ok(())
}

/// Histogram of `t1 - t2` over all D1/D2 pairs inside the window.
pub fn coincidence_histogram(stream: &PhotonStream, cfg: &CorrelatorConfig) -> Result<CoincidenceHistogram> {
    coincidence_histogram_range(stream, cfg, 0..stream.d1.len())
}

/// Histogram restricted to the D1 photons with indices in `d1_range` (all
/// of D2 is searched). Histograms of disjoint ranges merge to the full one.
pub fn coincidence_histogram_range(
    stream: &PhotonStream,
    cfg: &CorrelatorConfig,
    d1_range: Range<usize>,
) -> Result<CoincidenceHistogram> {
    check_stream(stream, cfg)?;
    let d1 = &stream.d1[d1_range.clone()];
    let counts = d1
        .par_chunks(D1_CHUNK)
        .map(|chunk| count_pairs(chunk, &stream.d2, *cfg))
        .reduce(
            || vec![0u64; cfg.n_bins()],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                a
            },
        );
    // D2 singles and the acquisition time are attributed to the range starting at zero
    let first = d1_range.start == 0;
    Ok(CoincidenceHistogram {
        bin_ns: cfg.bin_ns,
        window_ns: cfg.window_ns,
        counts,
        singles: [d1.len() as u64, if first { stream.d2.len() as u64 } else { 0 }],
        duration_ns: if first { stream.duration_ns } else { 0 },
    })
}

/// `g2 = counts T / (N1 N2 bin)`, with Poisson errors `g2 / sqrt(counts)`.
///
/// Empty bins get value zero and the one-count level as an upper-bound error.
pub fn normalize_g2<T: Real>(hist: &CoincidenceHistogram) -> Result<G2Curve<T>> {
    let [n1, n2] = hist.singles;
    if n1 == 0 || n2 == 0 {
        return Err(Error::Degenerate(
            "both channels need singles counts to normalize".into(),
        ));
    }
    if hist.duration_ns == 0 || hist.bin_ns == 0 {
        return Err(Error::Degenerate("histogram has no acquisition time".into()));
    }
    let unit = hist.duration_ns as f64 / (n1 as f64 * n2 as f64 * hist.bin_ns as f64);
    let tau = hist.tau_centers_s().into_iter().map(T::lit).collect();
    let (g2, stderr) = hist
        .counts
        .iter()
        .map(|&c| {
            if c == 0 {
                (T::zero(), T::lit(unit))
            } else {
                let g = c as f64 * unit;
                (T::lit(g), T::lit(g / (c as f64).sqrt()))
            }
        })
        .unzip();
    Ok(G2Curve::new(tau, g2, stderr))
}

/// Peak-to-background summary of a raw coincidence histogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakBackground {
    pub ratio: f64,
    pub peak: u64,
    /// Mean count of the outer 20% of bins.
    pub background: f64,
    /// Background expressed in singles-normalized g2 units.
    pub background_g2: f64,
    /// Half width at half maximum of the excess over background, s.
    pub correlation_time_s: f64,
    /// Set when the background is not the uncorrelated floor, so the ratio underestimates g2(0).
    pub unreliable: bool,
}

pub fn r_pb(hist: &CoincidenceHistogram) -> Result<PeakBackground> {
    let nb = hist.n_bins();
    if nb < 20 {
        return Err(Error::domain(format!(
            "peak-to-background needs at least 20 bins, got {nb}"
        )));
    }
    let edge = (nb / 10).max(1);
    let outer: u64 = hist.counts[..edge].iter().chain(&hist.counts[nb - edge..]).sum();
    let background = outer as f64 / (2 * edge) as f64;
    let peak = *hist.counts.iter().max().unwrap_or(&0);
    let ratio = peak as f64 / background;

    let half = nb / 2;
    let excess_at = |k: usize| (hist.counts[half + k] + hist.counts[half - 1 - k]) as f64 / 2.0 - background;
    let top = excess_at(0);
    let cross = (0..half).find(|&k| excess_at(k) < top / 2.0).unwrap_or(half);
    let correlation_time_s = (cross as f64 + 0.5) * hist.bin_ns as f64 * 1e-9;

    let [n1, n2] = hist.singles;
    let (background_g2, sigma) = if n1 > 0 && n2 > 0 && hist.duration_ns > 0 {
        let unit = hist.duration_ns as f64 / (n1 as f64 * n2 as f64 * hist.bin_ns as f64);
        let g = background * unit;
        (
            g,
            if outer > 0 {
                g / (outer as f64).sqrt()
            } else {
                f64::INFINITY
            },
        )
    } else {
        (f64::NAN, f64::INFINITY)
    };
    let window_s = hist.window_ns as f64 * 1e-9;
    let off_floor = background_g2.is_finite() && (background_g2 - 1.0).abs() > (3.0 * sigma).max(0.05);
    Ok(PeakBackground {
        ratio,
        peak,
        background,
        background_g2,
        correlation_time_s,
        unreliable: correlation_time_s > window_s / 4.0 || off_floor,
    })
}

/// g2 at zero lag from the two central bins, with a batch-means error bar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroLag {
    pub value: f64,
    /// Spread of per-batch estimates over `sqrt(batches)`; includes intensity fluctuations.
    pub stderr: f64,
    /// Counting error of the central bins alone.
    pub poisson_stderr: f64,
    pub batches: usize,
}

/// Pairs with `|t1 - t2| < bin`, split into the two central bins.
fn central_counts(d1: &[u64], d2: &[u64], bin: u64) -> [u64; 2] {
    let mut out = [0u64; 2];
    let mut lo = 0;
    for &t1 in d1 {
        while lo < d2.len() && d2[lo] + bin <= t1 {
            lo += 1;
        }
        let mut j = lo;
        while j < d2.len() && d2[j] < t1 + bin {
            if t1 >= d2[j] {
                out[1] += 1;
            } else {
                out[0] += 1;
            }
            j += 1;
        }
    }
    out
}

pub fn zero_lag_estimate(stream: &PhotonStream, cfg: &CorrelatorConfig, batches: usize) -> Result<ZeroLag> {
    check_stream(stream, cfg)?;
    let batches = batches.max(2);
    let bin = cfg.bin_ns;
    let unit = |c: u64, n1: usize, n2: usize, dur: u64| c as f64 * dur as f64 / (n1 as f64 * n2 as f64 * bin as f64);

    let full = central_counts(&stream.d1, &stream.d2, bin);
    let (n1, n2) = (stream.d1.len(), stream.d2.len());
    let c = full[0] + full[1];
    let value = unit(c, n1, n2, stream.duration_ns) / 2.0;
    let poisson_stderr = if c > 0 {
        value / (c as f64).sqrt()
    } else {
        f64::INFINITY
    };

    let start = stream.start_ns;
    let step = stream.duration_ns / batches as u64;
    let per: Vec<f64> = (0..batches)
        .into_par_iter()
        .filter_map(|b| {
            let from = start + b as u64 * step;
            let to = if b + 1 == batches { u64::MAX } else { from + step };
            let cut = |ch: &[u64]| {
                let i = ch.partition_point(|&t| t < from);
                let j = ch.partition_point(|&t| t < to);
                (i, j)
            };
            let (a0, a1) = cut(&stream.d1);
            let (b0, b1) = cut(&stream.d2);
            let (m1, m2) = (a1 - a0, b1 - b0);
            if m1 == 0 || m2 == 0 {
                return None;
            }
            let cc = central_counts(&stream.d1[a0..a1], &stream.d2[b0..b1], bin);
            Some(unit(cc[0] + cc[1], m1, m2, step) / 2.0)
        })
        .collect();
    let k = per.len() as f64;
    let stderr = if per.len() >= 2 {
        let m = per.iter().sum::<f64>() / k;
        (per.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(ZeroLag {
        value,
        stderr: stderr.max(poisson_stderr),
        poisson_stderr,
        batches: per.len(),
    })
}
