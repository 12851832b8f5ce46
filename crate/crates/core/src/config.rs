//! Run configuration: one JSON document drives every command. Missing
//! sections take the defaults below, which reproduce the reference
//! measurement; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::coupling::PolarizationChoice;
use crate::efficiency::{EfficiencyInputs, FreeSpaceBounds};
use crate::emitter::{pump_coeff_for_saturation, DetectionChannel, EmissionModel};
use crate::error::{Error, Result};
use crate::fiber_modes::{fused_silica_index, FiberSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub fiber: FiberConfig,
    pub dipole: DipoleConfig,
    pub emitter: EmissionModel,
    pub acquisition: AcquisitionConfig,
    pub powers_mw: Vec<f64>,
    pub correlation: CorrelationConfig,
    pub analysis: AnalysisConfig,
    pub efficiency: EfficiencyConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiberConfig {
    pub radius_nm: f64,
    pub wavelength_nm: f64,
    /// Fused silica (Sellmeier) when absent.
    pub n_core: Option<f64>,
    pub n_clad: f64,
}

impl Default for FiberConfig {
    fn default() -> Self {
        Self { radius_nm: 130.0, wavelength_nm: 666.0, n_core: None, n_clad: 1.0 }
    }
}

impl FiberConfig {
    pub fn spec(&self) -> Result<FiberSpec> {
        let wavelength = self.wavelength_nm * 1e-9;
        let n_core = self.n_core.unwrap_or_else(|| fused_silica_index(wavelength));
        FiberSpec::new(self.radius_nm * 1e-9, wavelength, n_core, self.n_clad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DipoleConfig {
    /// Height above the fiber surface.
    pub distance_nm: f64,
    pub phi_rad: f64,
    /// Extra orientation in the local `(r̂, φ̂, ẑ)` frame, reported next to
    /// the three canonical ones.
    pub orientation: Option<[f64; 3]>,
    /// Two-dipole (NV) model: β range over rotations about this axis.
    pub nv_axis: Option<[f64; 3]>,
    /// Γ_free/Γ₀ near the fiber.
    pub free_space_factor: f64,
    pub polarization: PolarizationChoice,
    /// Heights for the distance sweep.
    pub distance_sweep_nm: Vec<f64>,
    /// Angle steps of the orientation sweep over 0–90°.
    pub orientation_steps: usize,
    /// Emission spectrum (`lambda_nm,intensity`) for the spectral average.
    pub spectrum_csv: Option<PathBuf>,
    /// Wavelength samples of β(λ) spanning the spectrum.
    pub spectrum_points: usize,
}

impl Default for DipoleConfig {
    fn default() -> Self {
        Self {
            distance_nm: 10.0,
            phi_rad: 0.0,
            orientation: None,
            nv_axis: None,
            free_space_factor: 1.0,
            polarization: PolarizationChoice::Both,
            distance_sweep_nm: vec![0.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0],
            orientation_steps: 18,
            spectrum_csv: None,
            spectrum_points: 21,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionConfig {
    pub duration_s: f64,
    /// Detector pair of the confocal microscope.
    pub confocal_channels: [u8; 2],
    /// Detectors at the two fiber ends; g² is measured between them.
    pub fiber_channels: [u8; 2],
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self { duration_s: 100.0, confocal_channels: [0, 1], fiber_channels: [2, 3] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelationConfig {
    pub bin_ns: f64,
    pub tau_max_ns: f64,
    pub norm_window_ns: [f64; 2],
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self { bin_ns: 0.924, tau_max_ns: 1200.0, norm_window_ns: [700.0, 1100.0] }
    }
}

impl CorrelationConfig {
    pub fn bin_ps(&self) -> u64 {
        (self.bin_ns * 1e3).round() as u64
    }

    pub fn tau_max_ps(&self) -> u64 {
        (self.tau_max_ns * 1e3).round() as u64
    }

    pub fn window(&self) -> (f64, f64) {
        (self.norm_window_ns[0], self.norm_window_ns[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Only g² fits up to this power enter the lifetime extrapolation.
    pub lifetime_max_power_mw: Option<f64>,
}

/// Calibration of the efficiency chain. The count rates and lifetime come
/// from the pipeline's fits; `analyze` takes them from here instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EfficiencyConfig {
    pub na_eff: f64,
    pub sigma_na_eff: f64,
    pub t_path: f64,
    pub sigma_t_path: f64,
    pub t_ges: f64,
    pub sigma_t_ges: f64,
    pub eta: f64,
    pub sigma_eta: f64,
    pub free_space_bounds: Option<FreeSpaceBounds>,
    /// Monte Carlo cross-check of the propagated errors; 0 disables it.
    pub monte_carlo_draws: usize,
    pub c_free_per_s: Option<f64>,
    pub sigma_c_free_per_s: f64,
    pub c_nf_per_s: Option<f64>,
    pub sigma_c_nf_per_s: f64,
    pub tau_tot_s: Option<f64>,
    pub sigma_tau_tot_s: f64,
}

impl Default for EfficiencyConfig {
    fn default() -> Self {
        Self {
            na_eff: 0.32,
            sigma_na_eff: 0.01,
            t_path: 0.257,
            sigma_t_path: 0.0,
            t_ges: 0.0241,
            sigma_t_ges: 0.0003,
            eta: 0.65,
            sigma_eta: 0.0,
            free_space_bounds: Some(FreeSpaceBounds {
                low_per_s: 1.7e6,
                high_per_s: 1.8e6,
                sigma_low_per_s: 0.1e6,
                sigma_high_per_s: 0.1e6,
            }),
            monte_carlo_draws: 100_000,
            c_free_per_s: None,
            sigma_c_free_per_s: 0.0,
            c_nf_per_s: None,
            sigma_c_nf_per_s: 0.0,
            tau_tot_s: None,
            sigma_tau_tot_s: 0.0,
        }
    }
}

impl EfficiencyConfig {
    /// Inputs with measured quantities `(value, sigma)` supplied by the caller.
    pub fn inputs_with(&self, c_free: (f64, f64), c_nf: (f64, f64), tau_tot: (f64, f64)) -> EfficiencyInputs {
        EfficiencyInputs {
            c_free_per_s: c_free.0,
            sigma_c_free_per_s: c_free.1,
            c_nf_per_s: c_nf.0,
            sigma_c_nf_per_s: c_nf.1,
            na_eff: self.na_eff,
            sigma_na_eff: self.sigma_na_eff,
            t_path: self.t_path,
            sigma_t_path: self.sigma_t_path,
            t_ges: self.t_ges,
            sigma_t_ges: self.sigma_t_ges,
            eta: self.eta,
            sigma_eta: self.sigma_eta,
            tau_tot_s: tau_tot.0,
            sigma_tau_tot_s: tau_tot.1,
            free_space_bounds: self.free_space_bounds,
        }
    }

    /// Inputs from the configured measured quantities alone.
    pub fn inputs(&self) -> Result<EfficiencyInputs> {
        let need = |v: Option<f64>, key: &str| v.ok_or_else(|| Error::Config(format!("efficiency.{key} is required")));
        Ok(self.inputs_with(
            (need(self.c_free_per_s, "c_free_per_s")?, self.sigma_c_free_per_s),
            (need(self.c_nf_per_s, "c_nf_per_s")?, self.sigma_c_nf_per_s),
            (need(self.tau_tot_s, "tau_tot_s")?, self.sigma_tau_tot_s),
        ))
    }
}

/// Emitter calibrated to the reference measurement: 63 ns excited-state
/// lifetime, 1.17 mW saturation, 7.70e3/s confocal and 19.6e3/s fiber
/// saturation count rates, and fiber background growing linearly with pump.
pub fn default_emitter() -> EmissionModel {
    let (k21, k23, k31) = (1.4373e7, 1.5e6, 3.3e6);
    let confocal = DetectionChannel { det_eff: 2.886e-3, dark_rate: 100.0, bg_coeff: 0.0 };
    let fiber = DetectionChannel { det_eff: 7.35e-3, dark_rate: 160.0, bg_coeff: 316.95 };
    EmissionModel {
        k21,
        k23,
        k31,
        radiative_fraction: 0.135,
        pump_coeff: pump_coeff_for_saturation(k21, k23, k31, 1.17),
        channels: vec![confocal, confocal, fiber, fiber],
        resolution_ps: 77,
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            fiber: FiberConfig::default(),
            dipole: DipoleConfig::default(),
            emitter: default_emitter(),
            acquisition: AcquisitionConfig::default(),
            powers_mw: vec![0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0],
            correlation: CorrelationConfig::default(),
            analysis: AnalysisConfig::default(),
            efficiency: EfficiencyConfig::default(),
            seed: 20_261_017,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Apply `key.path=value` overrides. Values parse as JSON where possible
    /// and are taken as strings otherwise.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o.split_once('=').ok_or_else(|| Error::Config(format!("override `{o}` is not KEY=VALUE")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, key, value)?;
        }
        let cfg: Self = serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.emitter.validate()?;
        let n = self.emitter.channels.len();
        for ch in self.acquisition.confocal_channels.iter().chain(&self.acquisition.fiber_channels) {
            if *ch as usize >= n {
                return Err(Error::Config(format!("channel {ch} does not exist (emitter has {n})")));
            }
        }
        if self.acquisition.confocal_channels[0] == self.acquisition.confocal_channels[1]
            || self.acquisition.fiber_channels[0] == self.acquisition.fiber_channels[1]
        {
            return Err(Error::Config("a detector pair needs two different channels".into()));
        }
        if !(self.acquisition.duration_s > 0.0 && self.acquisition.duration_s.is_finite()) {
            return Err(Error::Config("acquisition.duration_s must be > 0".into()));
        }
        if self.powers_mw.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::Config("powers_mw must all be > 0".into()));
        }
        let c = &self.correlation;
        if c.bin_ps() == 0 || c.tau_max_ps() == 0 {
            return Err(Error::Config("correlation.bin_ns and tau_max_ns must be > 0".into()));
        }
        if !(0.0 <= c.norm_window_ns[0] && c.norm_window_ns[0] <= c.norm_window_ns[1] && c.norm_window_ns[1] <= c.tau_max_ns) {
            return Err(Error::Config("correlation.norm_window_ns must satisfy 0 <= lo <= hi <= tau_max_ns".into()));
        }
        if self.dipole.orientation_steps == 0 || self.dipole.spectrum_points < 2 {
            return Err(Error::Config("dipole.orientation_steps must be >= 1 and spectrum_points >= 2".into()));
        }
        Ok(())
    }
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| Error::Config(format!("`{part}` in `{key}` is not an index")))?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| Error::Config(format!("index {idx} in `{key}` out of range ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            Value::Null if !last => {
                *node = Value::Object(Default::default());
                let Value::Object(map) = node else { unreachable!() };
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            _ => return Err(Error::Config(format!("`{key}` does not name a config leaf"))),
        };
    }
    Ok(())
}
