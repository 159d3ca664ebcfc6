//! Whole-pipeline runs and parameter sweeps.
//!
//! Stage seeds are `derive_seed(master, stage, 0)` for the stages `signal`,
//! `speckle` and `detection`; sweep point `i` runs with master seed
//! `derive_seed(master, "sweep", i)`.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::analytic::{fit_g2, write_theory_csv, FitResult};
use crate::config::RunConfig;
use crate::correlator::{
    coincidence_histogram, normalize_g2, r_pb, zero_lag_estimate, CoincidenceHistogram, G2Curve, PeakBackground,
    ZeroLag,
};
use crate::detection::{detect_photons, PhotonStream};
use crate::error::{Error, Result};
use crate::photon_io::{read_records, write_stream, PhotonFormat};
use crate::seed::derive_seed;
use crate::signal::{sample_intensity, IntensityTrace};
use crate::speckle::{apply_speckle, generate_speckle_field, ComplexFieldTrace};

pub const MANIFEST: &str = "manifest.toml";

/// Correlator and fit products for one photon stream.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub histogram: CoincidenceHistogram,
    pub curve: G2Curve<f64>,
    pub zero_lag: ZeroLag,
    pub peak: PeakBackground,
    pub fit: Option<FitResult<f64>>,
}

impl Analysis {
    /// False only when a requested fit did not converge.
    pub fn converged(&self) -> bool {
        self.fit.as_ref().is_none_or(|f| f.converged)
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub dt: f64,
    pub intensity: IntensityTrace<f64>,
    pub field: ComplexFieldTrace<f64>,
    pub stream: PhotonStream,
    pub analysis: Analysis,
}

pub fn analyze_stream(stream: &PhotonStream, cfg: &RunConfig) -> Result<Analysis> {
    let section = cfg.correlator()?;
    let corr = section.correlator()?;
    let histogram = coincidence_histogram(stream, &corr)?;
    let curve = normalize_g2::<f64>(&histogram)?;
    let zero_lag = zero_lag_estimate(stream, &corr, section.batches)?;
    let peak = r_pb(&histogram)?;
    let fit = match cfg.fit_spec()? {
        Some(spec) => Some(fit_g2(&curve, &spec)?),
        None => None,
    };
    Ok(Analysis {
        histogram,
        curve,
        zero_lag,
        peak,
        fit,
    })
}

/// Runs signal, speckle, detection, correlator and fit in memory.
pub fn simulate(cfg: &RunConfig) -> Result<Simulation> {
    cfg.validate_simulation()?;
    let (dt, n) = cfg.grid()?;
    let model = cfg.modulation()?.model()?;
    let intensity = sample_intensity(&model, 0.0, dt, n, derive_seed(cfg.seed, "signal", 0))?;
    let mut speckle = cfg.speckle_params()?;
    speckle.seed = derive_seed(cfg.seed, "speckle", 0);
    let field = generate_speckle_field(&speckle, 0.0, dt, n)?;
    let scattered = apply_speckle(&intensity, &field)?;
    let detector = cfg.detection()?.detector()?;
    let stream = detect_photons(&scattered, &detector, derive_seed(cfg.seed, "detection", 0))?;
    let analysis = analyze_stream(&stream, cfg)?;
    Ok(Simulation {
        dt,
        intensity,
        field,
        stream,
        analysis,
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Plain-text run summary followed by the fit report.
pub fn summary(a: &Analysis, seed: u64) -> String {
    let mut s = String::new();
    let h = &a.histogram;
    let _ = writeln!(s, "seed = {seed}");
    let _ = writeln!(s, "duration_s = {}", h.duration_ns as f64 * 1e-9);
    let _ = writeln!(s, "singles_d1 = {}", h.singles[0]);
    let _ = writeln!(s, "singles_d2 = {}", h.singles[1]);
    let _ = writeln!(s, "coincidences = {}", h.total());
    let _ = writeln!(s, "g2_zero_estimate = {}", a.zero_lag.value);
    let _ = writeln!(s, "g2_zero_estimate_sigma = {}", a.zero_lag.stderr);
    let _ = writeln!(s, "peak_to_background = {}", a.peak.ratio);
    let _ = writeln!(s, "background_g2 = {}", a.peak.background_g2);
    let _ = writeln!(s, "correlation_time_s = {}", a.peak.correlation_time_s);
    let _ = writeln!(s, "peak_to_background_unreliable = {}", a.peak.unreliable);
    match &a.fit {
        Some(f) => s.push_str(&f.report()),
        None => s.push_str("model = none\n"),
    }
    s
}

/// Writes `histogram.csv`, `g2.csv`, `theory.csv` (when fitted) and `fit.txt`.
pub fn write_analysis(a: &Analysis, seed: u64, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    a.histogram.write_csv(create(&dir.join("histogram.csv"))?)?;
    a.curve.write_csv(create(&dir.join("g2.csv"))?)?;
    if let Some(fit) = &a.fit {
        // four theory points per bin resolve the oscillating forms
        let w = a.histogram.window_ns as f64 * 1e-9;
        let m = 4 * a.histogram.n_bins();
        let taus: Vec<f64> = (0..=m).map(|i| -w + 2.0 * w * i as f64 / m as f64).collect();
        write_theory_csv(&taus, |t| fit.eval(t), create(&dir.join("theory.csv"))?)?;
    }
    fs::write(dir.join("fit.txt"), summary(a, seed))?;
    Ok(())
}

/// Config as actually run: resolved seed, grid and output directory, plus a
/// `[provenance]` table. Parsing it back reproduces the run.
pub fn manifest(cfg: &RunConfig, sim: &Simulation, dir: &Path) -> Result<String> {
    let mut m = cfg.clone();
    if let Some(det) = m.detection.as_mut() {
        det.dt_s = Some(sim.dt);
    }
    let mut out = m.output();
    out.dir = dir.to_path_buf();
    m.output = Some(out);
    m.sweep = None;
    let mut p = toml::Table::new();
    p.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    p.insert("seed".into(), toml::Value::String(cfg.seed.to_string()));
    for stage in ["signal", "speckle", "detection"] {
        p.insert(
            format!("{stage}_seed"),
            toml::Value::String(derive_seed(cfg.seed, stage, 0).to_string()),
        );
    }
    p.insert("samples".into(), (sim.intensity.len() as i64).into());
    p.insert("start_ns".into(), toml::Value::String(sim.stream.start_ns.to_string()));
    p.insert(
        "duration_ns".into(),
        toml::Value::String(sim.stream.duration_ns.to_string()),
    );
    p.insert("photons_d1".into(), (sim.stream.d1.len() as i64).into());
    p.insert("photons_d2".into(), (sim.stream.d2.len() as i64).into());
    m.provenance = Some(p);
    m.to_toml()
}

/// Simulates and writes every artifact into `dir`. Returns the in-memory result.
pub fn simulate_to_dir(cfg: &RunConfig, dir: &Path) -> Result<Simulation> {
    let sim = simulate(cfg)?;
    fs::create_dir_all(dir)?;
    let format = cfg.output().photon_format()?;
    write_stream(
        &sim.stream,
        &dir.join(format!("photons.{}", format.extension())),
        format,
    )?;
    write_analysis(&sim.analysis, cfg.seed, dir)?;
    if cfg.output().traces {
        sim.intensity.write_csv(create(&dir.join("intensity.csv"))?)?;
        sim.field.write_csv(create(&dir.join("speckle.csv"))?)?;
    }
    fs::write(dir.join(MANIFEST), manifest(cfg, &sim, dir)?)?;
    Ok(sim)
}

fn provenance_u64(cfg: &RunConfig, key: &str) -> Option<u64> {
    cfg.provenance.as_ref()?.get(key)?.as_str()?.parse().ok()
}

/// Acquisition time recorded in a run manifest, if present.
pub fn manifest_duration_ns(cfg: &RunConfig) -> Option<u64> {
    provenance_u64(cfg, "duration_ns")
}

/// Reads a photon file and analyzes it with `cfg`. The acquisition window comes
/// from the manifest provenance when available, else from the record span.
pub fn analyze_file(path: &Path, cfg: &RunConfig) -> Result<Analysis> {
    let records = read_records(path)?;
    let resolution = cfg.detection.as_ref().map_or(1, |d| d.resolution_ns);
    let mut stream = PhotonStream::from_records(&records, manifest_duration_ns(cfg), resolution)?;
    if let Some(start) = provenance_u64(cfg, "start_ns") {
        if records.first().is_some_and(|r| r.timestamp_ns < start) {
            return Err(Error::domain(
                "photon timestamps precede the recorded acquisition start",
            ));
        }
        stream.start_ns = start;
    }
    analyze_stream(&stream, cfg)
}

/// Finds `manifest.toml` beside a photon file.
pub fn sibling_manifest(photons: &Path) -> Option<PathBuf> {
    let m = photons.parent().unwrap_or(Path::new(".")).join(MANIFEST);
    m.is_file().then_some(m)
}

/// One row of a sweep summary.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub index: usize,
    pub value: String,
    pub seed: u64,
    pub outcome: std::result::Result<Analysis, String>,
}

impl SweepRow {
    fn csv(&self) -> String {
        let mut cols = vec![self.index.to_string(), self.value.clone(), self.seed.to_string()];
        match &self.outcome {
            Ok(a) => {
                cols.push(a.zero_lag.value.to_string());
                cols.push(a.zero_lag.stderr.to_string());
                match &a.fit {
                    Some(f) => {
                        let (name, value, sigma) = headline(f);
                        cols.extend([
                            f.g2_zero.to_string(),
                            f.g2_zero_sigma.to_string(),
                            name.into(),
                            value.to_string(),
                            sigma.to_string(),
                            f.converged.to_string(),
                        ]);
                    }
                    None => cols.extend(["", "", "", "", "", ""].map(String::from)),
                }
                cols.push(if a.converged() { "ok" } else { "not_converged" }.into());
            }
            Err(e) => {
                cols.extend(["", "", "", "", "", "", "", ""].map(String::from));
                cols.push(format!("error: {}", e.replace([',', '\n'], ";")));
            }
        }
        cols.join(",")
    }
}

/// The fitted quantity a sweep reports for each model (bandwidth in Hz for speckle only).
fn headline(f: &FitResult<f64>) -> (&'static str, f64, f64) {
    let pick = |name: &str| {
        f.param(name)
            .map(|p| (p.value, p.sigma))
            .unwrap_or((f64::NAN, f64::NAN))
    };
    match f.model.name() {
        "sinusoid" => {
            let (v, s) = pick("depth");
            ("depth", v, s)
        }
        "noise" => {
            let (v, s) = pick("cutoff_hz");
            ("cutoff_hz", v, s)
        }
        _ => {
            let (v, s) = pick("delta_omega");
            ("bandwidth_hz", v / TAU, s / TAU)
        }
    }
}

pub const SWEEP_HEADER: &str =
    "index,value,seed,g2_zero,g2_zero_sigma,fit_g2_zero,fit_g2_zero_sigma,parameter,fit_value,fit_sigma,converged,status";

/// Runs every sweep point into `dir/point_NNN` and writes `dir/sweep.csv`.
/// A failing point is recorded in its row and the sweep continues.
pub fn sweep(base: &toml::Table, master_seed: u64, dir: &Path) -> Result<Vec<SweepRow>> {
    let cfg = RunConfig::from_table(base.clone())?;
    let spec = cfg
        .sweep
        .clone()
        .ok_or_else(|| Error::config("sweep", "missing required section [sweep]"))?;
    if spec.values.is_empty() {
        return Err(Error::config("sweep.values", "must not be empty"));
    }
    let mut probe = base.clone();
    crate::config::set_path(&mut probe, &spec.parameter, spec.values[0].clone())?;
    fs::create_dir_all(dir)?;

    let rows: Vec<SweepRow> = spec
        .values
        .par_iter()
        .enumerate()
        .map(|(index, value)| {
            let seed = derive_seed(master_seed, "sweep", index as u64);
            let point_dir = dir.join(format!("point_{index:03}"));
            let outcome = (|| {
                let mut t = base.clone();
                t.remove("sweep");
                crate::config::set_path(&mut t, &spec.parameter, value.clone())?;
                let mut point = RunConfig::from_table(t)?;
                point.seed = seed;
                let sim = simulate_to_dir(&point, &point_dir)?;
                Ok::<_, Error>(sim.analysis)
            })()
            .map_err(|e| e.to_string());
            let value = value.as_str().map_or_else(|| value.to_string(), String::from);
            SweepRow {
                index,
                value,
                seed,
                outcome,
            }
        })
        .collect();

    let mut w = create(&dir.join("sweep.csv"))?;
    writeln!(w, "{SWEEP_HEADER}")?;
    for row in &rows {
        writeln!(w, "{}", row.csv())?;
    }
    w.flush()?;
    Ok(rows)
}

/// Photon file written by a simulation in `dir`.
pub fn photon_path(dir: &Path, format: PhotonFormat) -> PathBuf {
    dir.join(format!("photons.{}", format.extension()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
seed = 11

[modulation]
kind = "sinusoid"
depth = 1.0
frequency_hz = 5e3

[speckle]
bandwidth_hz = 1e3

[detection]
rate = 2e4
duration_s = 2.0

[correlator]
window_s = 1e-3
bin_s = 1e-5
"#;

    #[test]
    fn simulation_is_reproducible_and_reanalyzable() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::from_toml(SMALL).unwrap();
        let a = simulate_to_dir(&cfg, &dir.path().join("a")).unwrap();
        simulate_to_dir(&cfg, &dir.path().join("b")).unwrap();
        for f in ["g2.csv", "histogram.csv", "theory.csv", "fit.txt", "photons.txt"] {
            let x = fs::read(dir.path().join("a").join(f)).unwrap();
            let y = fs::read(dir.path().join("b").join(f)).unwrap();
            assert!(x == y, "{f} differs");
        }
        let manifest = RunConfig::load(&dir.path().join("a").join(MANIFEST)).unwrap();
        assert_eq!(manifest_duration_ns(&manifest), Some(a.stream.duration_ns));
        let again = analyze_file(&dir.path().join("a/photons.txt"), &manifest).unwrap();
        assert_eq!(again.histogram, a.analysis.histogram);
        assert_eq!(again.curve, a.analysis.curve);
    }

    #[test]
    fn sweep_records_failures_and_continues() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("{SMALL}\n[sweep]\nparameter = \"modulation.depth\"\nvalues = [0.5, 1.5]\n");
        let table: toml::Table = text.parse().unwrap();
        let rows = sweep(&table, 11, dir.path()).unwrap();
        assert!(rows[0].outcome.is_ok());
        assert!(rows[1].outcome.is_err());
        let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[2].contains("error:"));
        assert_eq!(lines[1].split(',').count(), lines[0].split(',').count());
        assert_eq!(lines[2].split(',').count(), lines[0].split(',').count());
        assert!(dir.path().join("point_000/g2.csv").is_file());
    }

    #[test]
    fn unresolvable_sweep_path_fails_up_front() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("{SMALL}\n[sweep]\nparameter = \"nosuch.depth\"\nvalues = [0.5]\n");
        assert!(sweep(&text.parse().unwrap(), 1, dir.path()).is_err());
    }
}
