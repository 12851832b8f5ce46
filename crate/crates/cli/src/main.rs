use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use fibercouple::config::RunConfig;
use fibercouple::correlation::{cross_correlate, normalize_g2, G2Histogram};
use fibercouple::coupling::{
    beta_factor_with, beta_spectrum, nv_average_beta, read_spectrum_csv, spectral_average, CouplingOptions,
    CouplingResult, DipoleEmitter, DipoleModel, NvSweep,
};
use fibercouple::efficiency::{propagate_errors, MonteCarloOptions};
use fibercouple::emitter::{derive_seed, simulate_time_tags};
use fibercouple::fiber_modes::{solve_he11, CVec3, Cylindrical, Direction, ModeSolution, Polarization};
use fibercouple::inference::{
    extrapolate_lifetime, fit_g2, fit_saturation_confocal, fit_saturation_fiber, FitReport, G2FitOptions,
    LifetimeOptions, LifetimePoint,
};
use fibercouple::pipeline::{run_pipeline, write_pipeline};
use fibercouple::timetag::{write_atomic, TagSet};
use fibercouple::{Error, Result};

#[derive(Parser)]
#[command(name = "fibercouple", version, about = "Nanofiber coupling and photon-statistics analysis")]
struct Cli {
    /// JSON run configuration; defaults apply to anything not given.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Root seed for all randomness.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override a config leaf, e.g. --set fiber.radius_nm=130. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the HE11 mode; writes modes.json and mode_profile.csv.
    Modes,
    /// Coupling efficiency of the configured dipole; writes coupling.json and sweeps.
    Couple,
    /// Simulate time tags at one pump power.
    Simulate {
        #[arg(long, value_name = "MW")]
        power: f64,
        /// Seconds; defaults to acquisition.duration_s.
        #[arg(long)]
        duration: Option<f64>,
        /// Written as CSV when the name ends in .csv, binary otherwise.
        #[arg(long, default_value = "tags.ttg")]
        output: PathBuf,
    },
    /// Correlate two channels of a time-tag file into a normalized g² histogram.
    Correlate {
        input: PathBuf,
        /// Channel pair; defaults to the fiber detectors.
        #[arg(long, value_delimiter = ',', value_name = "A,B")]
        channels: Option<Vec<u8>>,
        /// Clock resolution assumed for CSV input.
        #[arg(long, default_value_t = 77)]
        csv_resolution_ps: u64,
        #[arg(long, default_value = "g2.csv")]
        output: PathBuf,
    },
    /// Fit one model to a CSV data file and write its report.
    Fit {
        #[arg(value_enum)]
        model: FitModel,
        input: PathBuf,
        /// Saturation power for the fiber model (mW).
        #[arg(long)]
        p_sat: Option<f64>,
        /// Highest power used by the lifetime extrapolation (mW).
        #[arg(long)]
        max_power: Option<f64>,
        #[arg(long, default_value = "fit.json")]
        output: PathBuf,
    },
    /// Efficiency chain from the rates and lifetime given in the config.
    Analyze {
        #[arg(long, default_value = "efficiency_report.json")]
        output: PathBuf,
    },
    /// Full synthetic measurement and analysis over all configured powers.
    Pipeline,
    /// Print the resolved configuration.
    Config,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitModel {
    /// Histogram CSV from `correlate`.
    G2,
    /// `power_mw,rate_per_s`
    SaturationConfocal,
    /// `power_mw,rate_per_s`, needs --p-sat.
    SaturationFiber,
    /// `power_mw,tau1_ns,sigma_tau1_ns`
    Lifetime,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut cfg = base.with_overrides(&cli.overrides)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let cfg = resolve_config(&cli)?;
    let out = cfg.output_dir.clone();
    let target = |name: &Path| -> Result<PathBuf> {
        std::fs::create_dir_all(&out)?;
        Ok(if name.is_absolute() { name.to_path_buf() } else { out.join(name) })
    };
    match cli.command {
        Command::Config => print!("{}", cfg.to_json()),
        Command::Modes => cmd_modes(&cfg, &target(Path::new("modes.json"))?, &target(Path::new("mode_profile.csv"))?)?,
        Command::Couple => cmd_couple(&cfg, &out)?,
        Command::Simulate { power, duration, output } => {
            let duration = duration.unwrap_or(cfg.acquisition.duration_s);
            let tags = simulate_time_tags(&cfg.emitter, power, duration, derive_seed(cfg.seed, 0))?;
            let path = target(&output)?;
            tags.write(&path)?;
            let counts: Vec<usize> = tags.streams.iter().map(|s| s.len()).collect();
            eprintln!("wrote {} ({counts:?} tags per channel)", path.display());
        }
        Command::Correlate { input, channels, csv_resolution_ps, output } => {
            let tags = TagSet::read(&input, csv_resolution_ps)?;
            let [a, b] = match channels.as_deref() {
                None => cfg.acquisition.fiber_channels,
                Some(&[a, b]) => [a, b],
                Some(_) => return Err(Error::Config("--channels takes exactly two channels, e.g. 2,3".into())),
            };
            cmd_correlate(&cfg, &tags, a, b, &target(&output)?)?;
        }
        Command::Fit { model, input, p_sat, max_power, output } => {
            let report = cmd_fit(model, &input, p_sat, max_power)?;
            write_json(&target(&output)?, &report)?;
        }
        Command::Analyze { output } => {
            let mc = (cfg.efficiency.monte_carlo_draws > 0)
                .then(|| MonteCarloOptions { draws: cfg.efficiency.monte_carlo_draws, seed: derive_seed(cfg.seed, u64::MAX) });
            let report = propagate_errors(&cfg.efficiency.inputs()?, mc)?;
            write_json(&target(&output)?, &report)?;
            for f in &report.flags {
                eprintln!("warning: {f}");
            }
        }
        Command::Pipeline => {
            let report = run_pipeline(&cfg)?;
            write_pipeline(&report, &out)?;
            if let Some(e) = &report.efficiency {
                eprintln!(
                    "beta {:.2}–{:.2} %, QE {:.1}–{:.1} %",
                    100.0 * e.beta_low.value,
                    100.0 * e.beta_high.value,
                    100.0 * e.qe_low.value,
                    100.0 * e.qe_high.value
                );
            }
            if !report.is_complete() {
                for f in &report.failures {
                    eprintln!("failed: {f}");
                }
                eprintln!("partial results written to {}", out.display());
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
}

fn cmd_modes(cfg: &RunConfig, json_path: &Path, csv_path: &Path) -> Result<()> {
    let spec = cfg.fiber.spec()?;
    let mode = solve_he11(spec)?;
    let summary = json!({
        "fiber": spec,
        "v_number": spec.v_number(),
        "single_mode": spec.is_single_mode(),
        "n_eff": mode.n_eff,
        "n_group": mode.n_group,
        "prop_const_per_m": mode.prop_const,
        "decay_length_nm": mode.decay_length() * 1e9,
        "normalization_integral": mode.norm.integral,
    });
    write_json(json_path, &summary)?;
    write_atomic(csv_path, mode_profile(&mode).as_bytes())?;
    eprintln!("n_eff = {:.6}, n_group = {:.6}, V = {:.4}", mode.n_eff, mode.n_group, spec.v_number());
    Ok(())
}

/// |E|² components of the quasi-linear mode along its polarization axis
/// (φ = 0) and across it (φ = 90°).
fn mode_profile(mode: &ModeSolution) -> String {
    let mut s = String::from("r_nm,e_r_sq_parallel,e_phi_sq_parallel,e_z_sq_parallel,e_sq_parallel,e_sq_perpendicular\n");
    let r_max = mode.spec.radius * 1e9 + 600.0;
    let pol = Polarization::QuasiLinear { phi0: 0.0 };
    for i in 0..=(r_max.round() as usize) {
        let r = i as f64 * 1e-9;
        let par = mode.field(Cylindrical::new(r, 0.0, 0.0), pol, Direction::Forward).e;
        let perp = mode.field(Cylindrical::new(r, std::f64::consts::FRAC_PI_2, 0.0), pol, Direction::Forward).e;
        let sq = |e: CVec3| e.iter().map(|c| c.norm_sqr()).sum::<f64>();
        s.push_str(&format!(
            "{i},{},{},{},{},{}\n",
            par[0].norm_sqr(),
            par[1].norm_sqr(),
            par[2].norm_sqr(),
            sq(par),
            sq(perp)
        ));
    }
    s
}

const CANONICAL: [(&str, [f64; 3]); 3] = [("radial", [1.0, 0.0, 0.0]), ("tangential", [0.0, 1.0, 0.0]), ("axial", [0.0, 0.0, 1.0])];

fn cmd_couple(cfg: &RunConfig, out: &Path) -> Result<()> {
    let spec = cfg.fiber.spec()?;
    let mode = solve_he11(spec)?;
    let d = &cfg.dipole;
    let opts = CouplingOptions { polarization: d.polarization, ..Default::default() };
    let at = |dist_nm: f64| Cylindrical::new(spec.radius + dist_nm * 1e-9, d.phi_rad, 0.0);
    let beta = |dist_nm: f64, u: [f64; 3]| -> Result<CouplingResult> {
        beta_factor_with(&mode, &DipoleEmitter::oriented(at(dist_nm), u, spec.wavelength), d.free_space_factor, &opts)
    };
    let mut canonical = serde_json::Map::new();
    for (name, u) in CANONICAL {
        canonical.insert(name.into(), serde_json::to_value(beta(d.distance_nm, u)?)?);
    }
    let custom = d.orientation.map(|u| beta(d.distance_nm, u)).transpose()?;
    let sweep = NvSweep { free_space_factor: d.free_space_factor, polarization: d.polarization, ..Default::default() };
    let nv = d.nv_axis.map(|axis| nv_average_beta(&mode, axis, at(d.distance_nm), spec.wavelength, &sweep)).transpose()?;
    let spectral = match &d.spectrum_csv {
        Some(path) => {
            let spectrum = read_spectrum_csv(path)
                .map_err(|e| match e {
                    Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("spectrum {}: {io}", path.display()))),
                    other => other,
                })?;
            if spectrum.len() < 2 {
                return Err(Error::EmptySpectrum);
            }
            let (lo, hi) = (spectrum[0].0, spectrum[spectrum.len() - 1].0);
            let n = d.spectrum_points;
            let grid: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
            let model = match (d.nv_axis, d.orientation) {
                (Some(nv_axis), _) => DipoleModel::TwoDipole { nv_axis },
                (None, Some(orientation)) => DipoleModel::Oriented { orientation },
                (None, None) => DipoleModel::Oriented { orientation: CANONICAL[0].1 },
            };
            let curve = beta_spectrum(spec.radius, model, at(d.distance_nm), &grid, d.free_space_factor, d.polarization)?;
            Some(json!({
                "model": model,
                "beta": spectral_average(&curve, &spectrum)?,
                "wavelengths_nm": curve.iter().map(|p| p.0 * 1e9).collect::<Vec<_>>(),
                "beta_of_wavelength": curve.iter().map(|p| p.1).collect::<Vec<_>>(),
            }))
        }
        None => None,
    };
    let report = json!({
        "distance_nm": d.distance_nm,
        "free_space_factor": d.free_space_factor,
        "polarization": d.polarization,
        "n_eff": mode.n_eff,
        "canonical": canonical,
        "custom": custom,
        "nv": nv,
        "spectral_average": spectral,
    });
    std::fs::create_dir_all(out)?;
    write_json(&out.join("coupling.json"), &report)?;

    let mut dist = String::from("distance_nm,beta_radial,beta_tangential,beta_axial\n");
    for &x in &d.distance_sweep_nm {
        let b: Vec<String> = CANONICAL.iter().map(|(_, u)| beta(x, *u).map(|r| r.beta.to_string())).collect::<Result<_>>()?;
        dist.push_str(&format!("{x},{}\n", b.join(",")));
    }
    write_atomic(&out.join("distance_sweep.csv"), dist.as_bytes())?;

    let mut orient = String::from("angle_deg,beta_radial_to_tangential,beta_radial_to_axial,beta_tangential_to_axial\n");
    for k in 0..=d.orientation_steps {
        let deg = 90.0 * k as f64 / d.orientation_steps as f64;
        let (s, c) = deg.to_radians().sin_cos();
        let rows = [[c, s, 0.0], [c, 0.0, s], [0.0, c, s]];
        let b: Vec<String> = rows.iter().map(|u| beta(d.distance_nm, *u).map(|r| r.beta.to_string())).collect::<Result<_>>()?;
        orient.push_str(&format!("{deg},{}\n", b.join(",")));
    }
    write_atomic(&out.join("orientation_sweep.csv"), orient.as_bytes())?;
    for (name, _) in CANONICAL {
        eprintln!("beta {name}: {:.2} %", 100.0 * canonical[name]["beta"].as_f64().unwrap_or(f64::NAN));
    }
    Ok(())
}

fn cmd_correlate(cfg: &RunConfig, tags: &TagSet, a: u8, b: u8, path: &Path) -> Result<()> {
    let c = &cfg.correlation;
    let hist = cross_correlate(tags.stream(a)?, tags.stream(b)?, c.bin_ps(), c.tau_max_ps(), tags.duration_ps)?;
    if hist.empty_input {
        // nothing to normalize: keep the all-zero histogram, flagged
        eprintln!("warning: channel {a} or {b} is empty; histogram is all zero");
        write_atomic(path, zero_histogram_csv(&hist).as_bytes())?;
        return Ok(());
    }
    let hist = normalize_g2(hist, c.window())?;
    write_atomic(path, hist.to_csv()?.as_bytes())?;
    eprintln!("{} pairs, normalization {:.4} counts/bin", hist.total_pairs(), hist.norm_value.unwrap_or(0.0));
    Ok(())
}

fn zero_histogram_csv(hist: &G2Histogram) -> String {
    let mut s = String::from("tau_ns,counts,g2\n");
    for i in 0..hist.len() {
        s.push_str(&format!("{:.6},0,0\n", hist.tau_ns(i)));
    }
    s
}

/// Numeric CSV with a fixed header; format errors carry the byte offset.
fn read_table(path: &Path, header: &str) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let cols = header.split(',').count();
    let mut offset = 0u64;
    let mut rows = Vec::new();
    for (n, line) in text.split_inclusive('\n').enumerate() {
        let trimmed = line.trim();
        if n == 0 {
            if trimmed.replace(' ', "") != header {
                return Err(Error::Format { offset: 0, message: format!("expected header `{header}`") });
            }
        } else if !trimmed.is_empty() {
            let row: Option<Vec<f64>> = trimmed.split(',').map(|v| v.trim().parse().ok()).collect();
            match row {
                Some(r) if r.len() == cols => rows.push(r),
                _ => return Err(Error::Format { offset, message: format!("line {}: expected {cols} numbers", n + 1) }),
            }
        }
        offset += line.len() as u64;
    }
    Ok(rows)
}

fn cmd_fit(model: FitModel, input: &Path, p_sat: Option<f64>, max_power: Option<f64>) -> Result<FitReport> {
    let pairs = |rows: Vec<Vec<f64>>| rows.into_iter().map(|r| (r[0], r[1])).collect::<Vec<_>>();
    Ok(match model {
        FitModel::G2 => {
            let hist = G2Histogram::from_csv(&std::fs::read_to_string(input)?)?;
            FitReport::from(&fit_g2(&hist, &G2FitOptions::default())?)
        }
        FitModel::SaturationConfocal => {
            FitReport::from(&fit_saturation_confocal(&pairs(read_table(input, "power_mw,rate_per_s")?))?)
        }
        FitModel::SaturationFiber => {
            let p_sat = p_sat.ok_or_else(|| Error::Config("the fiber saturation model needs --p-sat".into()))?;
            FitReport::from(&fit_saturation_fiber(&pairs(read_table(input, "power_mw,rate_per_s")?), p_sat)?)
        }
        FitModel::Lifetime => {
            let pts: Vec<LifetimePoint> = read_table(input, "power_mw,tau1_ns,sigma_tau1_ns")?
                .into_iter()
                .map(|r| LifetimePoint { power_mw: r[0], tau1: r[1] * 1e-9, sigma: r[2] * 1e-9 })
                .collect();
            FitReport::from(&extrapolate_lifetime(&pts, &LifetimeOptions { max_power_mw: max_power })?)
        }
    })
}
