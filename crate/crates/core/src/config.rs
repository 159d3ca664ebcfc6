//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//!
//! [modulation]
//! kind = "sinusoid"          # constant | sinusoid | band_noise | eom
//! depth = 1.0
//! frequency_hz = 50e3
//!
//! [speckle]
//! bandwidth_hz = 10e3        # delta_omega / 2 pi
//!
//! [detection]
//! rate = 5e4                 # counts/s per detector at the mean intensity
//! duration_s = 20.0
//!
//! [correlator]
//! window_s = 200e-6
//! bin_s = 400e-9
//!
//! [analysis]
//! model = "sinusoid"         # speckle | sinusoid | noise | none
//!
//! [output]
//! dir = "out"
//! format = "text"            # text | binary
//! ```
//!
//! Unknown keys anywhere are errors. A `[provenance]` table, written into run
//! manifests, is accepted and ignored so a manifest can be rerun directly.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytic::{FitSpec, TheoryModel};
use crate::correlator::CorrelatorConfig;
use crate::detection::DetectorConfig;
use crate::error::{Error, Result};
use crate::photon_io::PhotonFormat;
use crate::signal::{DriveWaveform, EomDrive, EomTransfer, ModulationModel};
use crate::speckle::SpeckleParams;

/// A number, or the word `"none"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Level<T> {
    Value(T),
    Keyword(Keyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Keyword {
    None,
}

impl<T: Copy> Level<T> {
    fn get(opt: Option<Self>) -> Option<T> {
        match opt {
            Some(Level::Value(v)) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModulationSection {
    Constant {
        #[serde(default = "one")]
        intensity: f64,
    },
    Sinusoid {
        #[serde(default = "one")]
        intensity: f64,
        depth: f64,
        frequency_hz: f64,
        #[serde(default)]
        phase: f64,
    },
    BandNoise {
        #[serde(default = "one")]
        mean: f64,
        cutoff_hz: f64,
        /// Saturation level in intensity units; defaults to `2 mean` when `realistic`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        clip: Option<Level<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        quantization_bits: Option<Level<u32>>,
        /// Fill unset `clip` and `quantization_bits` with the EOM limits.
        #[serde(default)]
        realistic: bool,
    },
    Eom {
        /// `sinusoid` or `noise`.
        waveform: String,
        v_pp: f64,
        #[serde(default)]
        bias_v: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        frequency_hz: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cutoff_hz: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        drive_bits: Option<Level<u32>>,
    },
}

fn one() -> f64 {
    1.0
}

impl ModulationSection {
    pub fn model(&self) -> Result<ModulationModel<f64>> {
        let model = match self {
            ModulationSection::Constant { intensity } => ModulationModel::Constant { intensity: *intensity },
            ModulationSection::Sinusoid {
                intensity,
                depth,
                frequency_hz,
                phase,
            } => ModulationModel::Sinusoid {
                intensity: *intensity,
                depth: *depth,
                omega: TAU * frequency_hz,
                phase: *phase,
            },
            ModulationSection::BandNoise {
                mean,
                cutoff_hz,
                clip,
                quantization_bits,
                realistic,
            } => {
                let (dclip, dbits) = if *realistic {
                    (Some(2.0 * mean), Some(8))
                } else {
                    (None, None)
                };
                ModulationModel::BandNoise {
                    mean: *mean,
                    cutoff_hz: *cutoff_hz,
                    clip: if clip.is_some() { Level::get(*clip) } else { dclip },
                    quantization_bits: if quantization_bits.is_some() {
                        Level::get(*quantization_bits)
                    } else {
                        dbits
                    },
                }
            }
            ModulationSection::Eom {
                waveform,
                v_pp,
                bias_v,
                frequency_hz,
                cutoff_hz,
                drive_bits,
            } => {
                let need = |v: Option<f64>, key: &str| {
                    v.ok_or_else(|| {
                        Error::config(
                            format!("modulation.{key}"),
                            format!("required for waveform `{waveform}`"),
                        )
                    })
                };
                let waveform = match waveform.as_str() {
                    "sinusoid" => DriveWaveform::Sinusoid {
                        frequency_hz: need(*frequency_hz, "frequency_hz")?,
                    },
                    "noise" => DriveWaveform::BandNoise {
                        cutoff_hz: need(*cutoff_hz, "cutoff_hz")?,
                    },
                    other => {
                        return Err(Error::config(
                            "modulation.waveform",
                            format!("expected `sinusoid` or `noise`, got `{other}`"),
                        ))
                    }
                };
                ModulationModel::EomDriven(EomDrive {
                    waveform,
                    v_pp: *v_pp,
                    bias: *bias_v,
                    drive_bits: Level::get(*drive_bits),
                    transfer: EomTransfer::default(),
                })
            }
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeckleSection {
    /// Groundglass bandwidth `delta_omega / 2 pi`, Hz.
    pub bandwidth_hz: f64,
    #[serde(default = "one")]
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    #[serde(default = "default_rate")]
    pub rate: f64,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    /// Simulation grid spacing; chosen from the modulation and speckle scales when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_s: Option<f64>,
    #[serde(default = "default_resolution")]
    pub resolution_ns: u64,
    #[serde(default)]
    pub dark_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_intensity: Option<f64>,
}

fn default_rate() -> f64 {
    5e4
}

fn default_duration() -> f64 {
    100.0
}

fn default_resolution() -> u64 {
    1
}

impl DetectionSection {
    pub fn detector(&self) -> Result<DetectorConfig> {
        let cfg = DetectorConfig {
            rate: self.rate,
            resolution_ns: self.resolution_ns,
            dark_rate: self.dark_rate,
            reference_intensity: self.reference_intensity,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelatorSection {
    pub window_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_s: Option<f64>,
    /// Time batches for the zero-lag error estimate.
    #[serde(default = "default_batches")]
    pub batches: usize,
}

fn default_batches() -> usize {
    10
}

impl CorrelatorSection {
    pub fn correlator(&self) -> Result<CorrelatorConfig> {
        CorrelatorConfig::from_seconds(self.window_s, self.bin_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Speckle,
    Sinusoid,
    Noise,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Defaults to the model matching the modulation kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    /// Initial guesses; unset ones are taken from the modulation and speckle sections.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_hz: Option<f64>,
    /// Model parameters held at their initial value: `depth`, `frequency_hz`, `cutoff_hz`, `bandwidth_hz`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fix: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_format")]
    pub format: String,
    /// Also write the intensity and speckle traces.
    #[serde(default)]
    pub traces: bool,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_format() -> String {
    "text".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            format: default_format(),
            traces: false,
        }
    }
}

impl OutputSection {
    pub fn photon_format(&self) -> Result<PhotonFormat> {
        parse_format(&self.format)
    }
}

pub fn parse_format(s: &str) -> Result<PhotonFormat> {
    match s {
        "text" => Ok(PhotonFormat::Text),
        "binary" => Ok(PhotonFormat::Binary),
        other => Err(Error::config(
            "output.format",
            format!("expected `text` or `binary`, got `{other}`"),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Dotted key to vary, e.g. `modulation.depth`.
    pub parameter: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulation: Option<ModulationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speckle: Option<SpeckleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlator: Option<CorrelatorSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<toml::Table>,
}

fn missing(section: &str) -> Error {
    Error::config(section, format!("missing required section [{section}]"))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("config", e.to_string()))?;
        Self::from_table(table)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        RunConfig::deserialize(toml::Value::Table(table)).map_err(|e| Error::config(field_of(&e), e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn modulation(&self) -> Result<&ModulationSection> {
        self.modulation.as_ref().ok_or_else(|| missing("modulation"))
    }

    pub fn speckle(&self) -> Result<&SpeckleSection> {
        self.speckle.as_ref().ok_or_else(|| missing("speckle"))
    }

    pub fn detection(&self) -> Result<&DetectionSection> {
        self.detection.as_ref().ok_or_else(|| missing("detection"))
    }

    pub fn correlator(&self) -> Result<&CorrelatorSection> {
        self.correlator.as_ref().ok_or_else(|| missing("correlator"))
    }

    pub fn output(&self) -> OutputSection {
        self.output.clone().unwrap_or_default()
    }

    pub fn speckle_params(&self) -> Result<SpeckleParams<f64>> {
        let s = self.speckle()?;
        let p = SpeckleParams {
            bandwidth: TAU * s.bandwidth_hz,
            gain: s.gain,
            seed: 0,
        };
        p.validate()?;
        Ok(p)
    }

    /// Checks every section a full simulation needs.
    pub fn validate_simulation(&self) -> Result<()> {
        self.modulation()?.model()?;
        self.speckle_params()?;
        let det = self.detection()?;
        det.detector()?;
        if !(det.duration_s.is_finite() && det.duration_s > 0.0) {
            return Err(Error::config("detection.duration_s", "must be finite and > 0"));
        }
        let corr = self.correlator()?.correlator()?;
        corr.validate(det.resolution_ns)?;
        self.output().photon_format()?;
        self.fit_spec()?;
        self.grid()?;
        Ok(())
    }

    /// Simulation grid `(dt, n)`. An unset `dt_s` becomes the largest spacing that
    /// resolves both the modulation and the speckle, rounded down to a whole ns.
    pub fn grid(&self) -> Result<(f64, usize)> {
        let det = self.detection()?;
        let mut limit = self.speckle_params()?.max_dt();
        if let Some(m) = self.modulation()?.model()?.max_dt() {
            limit = limit.min(m);
        }
        let dt = match det.dt_s {
            Some(dt) => {
                if !(dt.is_finite() && dt > 0.0) {
                    return Err(Error::config("detection.dt_s", "must be finite and > 0"));
                }
                dt
            }
            None => ((limit * 1e9).floor() * 1e-9).max(1e-9),
        };
        if dt > limit * (1.0 + 1e-9) {
            return Err(Error::config(
                "detection.dt_s",
                format!("sample spacing {dt} s undersamples the modulation or speckle; need <= {limit} s"),
            ));
        }
        let n = (det.duration_s / dt).round();
        if n < 2.0 {
            return Err(Error::config("detection.duration_s", "shorter than two grid samples"));
        }
        if n > 1e9 {
            return Err(Error::config(
                "detection.duration_s",
                format!("{n} grid samples exceeds the 1e9 limit"),
            ));
        }
        Ok((dt, n as usize))
    }

    /// Fit request, or `None` when the analysis model is `none`.
    pub fn fit_spec(&self) -> Result<Option<FitSpec<f64>>> {
        let a = self.analysis.clone().unwrap_or(AnalysisSection {
            model: None,
            depth: None,
            frequency_hz: None,
            cutoff_hz: None,
            bandwidth_hz: None,
            fix: Vec::new(),
        });
        let m = self.modulation.as_ref();
        let kind = match (a.model, m) {
            (Some(k), _) => k,
            (None, Some(ModulationSection::Constant { .. })) => ModelKind::Speckle,
            (None, Some(ModulationSection::Sinusoid { .. })) => ModelKind::Sinusoid,
            (None, Some(ModulationSection::BandNoise { .. })) => ModelKind::Noise,
            (None, Some(ModulationSection::Eom { waveform, .. })) if waveform == "sinusoid" => ModelKind::Sinusoid,
            (None, Some(ModulationSection::Eom { .. })) => ModelKind::Noise,
            (None, None) => ModelKind::Speckle,
        };
        if kind == ModelKind::None {
            return Ok(None);
        }
        let guess = |value: Option<f64>, fallback: Option<f64>, key: &str| {
            value
                .or(fallback)
                .ok_or_else(|| Error::config(format!("analysis.{key}"), "no initial guess available"))
        };
        let bandwidth = guess(
            a.bandwidth_hz,
            self.speckle.as_ref().map(|s| s.bandwidth_hz),
            "bandwidth_hz",
        )?;
        let delta_omega = TAU * bandwidth;
        let (model, names): (TheoryModel<f64>, &[(&str, &str)]) = match kind {
            ModelKind::Speckle => (
                TheoryModel::SpeckleOnly { delta_omega },
                &[("bandwidth_hz", "delta_omega")],
            ),
            ModelKind::Sinusoid => {
                let (d, f) = match m {
                    Some(ModulationSection::Sinusoid {
                        depth, frequency_hz, ..
                    }) => (Some(*depth), Some(*frequency_hz)),
                    Some(ModulationSection::Eom { frequency_hz, .. }) => (Some(0.5), *frequency_hz),
                    _ => (None, None),
                };
                let depth = guess(a.depth, d, "depth")?.clamp(0.05, 0.95);
                let omega0 = TAU * guess(a.frequency_hz, f, "frequency_hz")?;
                (
                    TheoryModel::SinusoidSpeckle {
                        depth,
                        omega0,
                        delta_omega,
                    },
                    &[
                        ("depth", "depth"),
                        ("frequency_hz", "omega0"),
                        ("bandwidth_hz", "delta_omega"),
                    ],
                )
            }
            ModelKind::Noise => {
                let c = match m {
                    Some(ModulationSection::BandNoise { cutoff_hz, .. }) => Some(*cutoff_hz),
                    Some(ModulationSection::Eom { cutoff_hz, .. }) => *cutoff_hz,
                    _ => None,
                };
                let cutoff_hz = guess(a.cutoff_hz, c, "cutoff_hz")?;
                (
                    TheoryModel::NoiseSpeckle { cutoff_hz, delta_omega },
                    &[("cutoff_hz", "cutoff_hz"), ("bandwidth_hz", "delta_omega")],
                )
            }
            ModelKind::None => unreachable!(),
        };
        model.validate().map_err(|e| Error::config("analysis", e.to_string()))?;
        let mut spec = FitSpec::new(model);
        for key in &a.fix {
            let (_, internal) = names
                .iter()
                .find(|(k, _)| k == key)
                .ok_or_else(|| Error::config("analysis.fix", format!("`{key}` is not a parameter of this model")))?;
            spec = spec.fix(internal);
        }
        Ok(Some(spec))
    }
}

/// Best-effort dotted path of the key a deserialization error refers to.
fn field_of(e: &toml::de::Error) -> String {
    let msg = e.message();
    for marker in ["unknown field `", "missing field `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(name) = rest.split('`').next() {
                return name.to_string();
            }
        }
    }
    "config".into()
}

/// Sets the dotted `path` in `table` to `value`. The parent tables must exist.
pub fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::config("sweep.parameter", "empty path"))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .get_mut(p)
            .and_then(|v| v.as_table_mut())
            .ok_or_else(|| Error::config("sweep.parameter", format!("`{path}` does not resolve: no table `{p}`")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 3

[modulation]
kind = "sinusoid"
depth = 0.5
frequency_hz = 1e4

[speckle]
bandwidth_hz = 2e3

[detection]
rate = 1e4
duration_s = 1.0

[correlator]
window_s = 1e-3
"#;

    #[test]
    fn parses_and_resolves_grid() {
        let cfg = RunConfig::from_toml(BASE).unwrap();
        cfg.validate_simulation().unwrap();
        let (dt, n) = cfg.grid().unwrap();
        // 2 pi / (20 * 2 pi * 1e4) = 5 us, tighter than the speckle's 50 us
        assert!((dt - 5e-6).abs() < 1e-15);
        assert_eq!(n, 200_000);
        let spec = cfg.fit_spec().unwrap().unwrap();
        assert_eq!(spec.model.name(), "sinusoid");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = BASE.replace("depth = 0.5", "depht = 0.5");
        let err = RunConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("depht"), "{err}");
        let text = format!("{BASE}\n[extra]\nx = 1\n");
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn missing_section_is_named() {
        let text = BASE.replace("[speckle]\nbandwidth_hz = 2e3\n", "");
        let cfg = RunConfig::from_toml(&text).unwrap();
        match cfg.validate_simulation().unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "speckle"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn realistic_noise_defaults_and_none_keyword() {
        let text = r#"
[modulation]
kind = "band_noise"
cutoff_hz = 200.0
realistic = true
"#;
        let m = RunConfig::from_toml(text).unwrap().modulation.unwrap().model().unwrap();
        assert_eq!(m, ModulationModel::realistic_noise(1.0, 200.0));
        let text = format!("{text}clip = \"none\"\n");
        let m = RunConfig::from_toml(&text)
            .unwrap()
            .modulation
            .unwrap()
            .model()
            .unwrap();
        assert!(matches!(
            m,
            ModulationModel::BandNoise {
                clip: None,
                quantization_bits: Some(8),
                ..
            }
        ));
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::from_toml(BASE).unwrap();
        cfg.detection.as_mut().unwrap().dt_s = Some(2e-6);
        let again = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn undersampled_grid_is_a_config_error() {
        let text = BASE.replace("duration_s = 1.0", "duration_s = 1.0\ndt_s = 1e-4");
        let err = RunConfig::from_toml(&text).unwrap().grid().unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "detection.dt_s"));
    }

    #[test]
    fn set_path_overrides_and_checks() {
        let mut t: toml::Table = BASE.parse().unwrap();
        set_path(&mut t, "modulation.depth", toml::Value::Float(0.9)).unwrap();
        let cfg = RunConfig::from_table(t.clone()).unwrap();
        assert!(matches!(cfg.modulation, Some(ModulationSection::Sinusoid { depth, .. }) if depth == 0.9));
        assert!(set_path(&mut t, "nosuch.depth", toml::Value::Float(0.9)).is_err());
    }

    #[test]
    fn fix_list_is_checked() {
        let text = format!("{BASE}\n[analysis]\nfix = [\"bandwidth_hz\"]\n");
        let spec = RunConfig::from_toml(&text).unwrap().fit_spec().unwrap().unwrap();
        assert_eq!(spec.free, vec![true, true, false]);
        let text = format!("{BASE}\n[analysis]\nfix = [\"cutoff_hz\"]\n");
        assert!(RunConfig::from_toml(&text).unwrap().fit_spec().is_err());
    }
}
