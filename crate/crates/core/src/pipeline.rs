//! End-to-end analysis on synthetic data: simulate every pump power,
//! correlate the fiber detector pair, fit g², fit both saturation curves,
//! extrapolate the lifetime and run the efficiency chain.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::correlation::{g2_histogram, G2Histogram};
use crate::efficiency::{propagate_errors, EfficiencyReport, MonteCarloOptions};
use crate::emitter::{analytic_g2, derive_seed, rates_from_power, signal_fraction, simulate_time_tags};
use crate::error::{Error, Result};
use crate::inference::{
    extrapolate_lifetime, fit_g2, fit_saturation_confocal, fit_saturation_fiber, FitReport, G2Fit, G2FitOptions,
    LifetimeExtrapolation, LifetimeOptions, LifetimePoint, SaturationFit,
};
use crate::timetag::write_atomic;

/// g² parameters the simulation should reproduce at one power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedG2 {
    pub p_f: f64,
    pub tau1_s: f64,
    pub tau2_s: f64,
    pub c: f64,
    pub g2_zero: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    pub power_mw: f64,
    pub seed: u64,
    pub confocal_rate_per_s: f64,
    pub fiber_rate_per_s: f64,
    pub expected: ExpectedG2,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g2: Option<G2Fit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub histogram: Option<G2Histogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifetimeSummary {
    pub tau_tot_s: f64,
    pub sigma_tau_tot_s: f64,
    /// `1/(k21 + k23)` of the simulated emitter.
    pub expected_tau_tot_s: f64,
    pub fit: FitReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    /// Fully resolved configuration of the run.
    pub config: RunConfig,
    pub powers: Vec<PowerResult>,
    pub saturation_confocal: Option<FitReport>,
    pub saturation_fiber: Option<FitReport>,
    pub lifetime: Option<LifetimeSummary>,
    pub efficiency: Option<EfficiencyReport>,
    /// Stages that failed; later stages that depend on them are absent.
    pub failures: Vec<String>,
}

impl PipelineReport {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

fn analyse_power(cfg: &RunConfig, index: usize, power_mw: f64) -> Result<PowerResult> {
    let seed = derive_seed(cfg.seed, index as u64);
    let model = &cfg.emitter;
    let [ca, cb] = cfg.acquisition.confocal_channels;
    let [fa, fb] = cfg.acquisition.fiber_channels;
    let rates = rates_from_power(model, power_mw)?;
    let shape = analytic_g2(&rates)?;
    let p_f = (signal_fraction(&rates, &model.channels[fa as usize], power_mw)
        * signal_fraction(&rates, &model.channels[fb as usize], power_mw))
    .sqrt();
    let expected = ExpectedG2 { p_f, tau1_s: shape.tau1, tau2_s: shape.tau2, c: shape.c, g2_zero: 1.0 - p_f * p_f };

    let tags = simulate_time_tags(model, power_mw, cfg.acquisition.duration_s, seed)?;
    let rate = |ch: u8| tags.streams[ch as usize].rate(tags.duration_ps);
    let mut out = PowerResult {
        power_mw,
        seed,
        confocal_rate_per_s: rate(ca) + rate(cb),
        fiber_rate_per_s: rate(fa) + rate(fb),
        expected,
        g2: None,
        error: None,
        histogram: None,
    };
    let c = &cfg.correlation;
    let fitted = g2_histogram(tags.stream(fa)?, tags.stream(fb)?, c.bin_ps(), c.tau_max_ps(), tags.duration_ps, c.window())
        .and_then(|h| {
            out.histogram = Some(h);
            fit_g2(out.histogram.as_ref().unwrap(), &G2FitOptions::default())
        });
    match fitted {
        Ok(fit) => out.g2 = Some(fit),
        Err(e) => out.error = Some(e.to_string()),
    }
    Ok(out)
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    let mut failures = Vec::new();
    let results: Vec<Result<PowerResult>> =
        cfg.powers_mw.par_iter().enumerate().map(|(i, &p)| analyse_power(cfg, i, p)).collect();
    let mut powers = Vec::new();
    for (r, p) in results.into_iter().zip(&cfg.powers_mw) {
        match r {
            Ok(r) => {
                if let Some(e) = &r.error {
                    failures.push(format!("g2 fit at {p} mW: {e}"));
                }
                powers.push(r);
            }
            Err(e) => failures.push(format!("simulation at {p} mW: {e}")),
        }
    }

    // known dark counts come off before fitting; the fiber's pump-induced
    // background is part of its model
    let dark = |chs: [u8; 2]| chs.iter().map(|&c| cfg.emitter.channels[c as usize].dark_rate).sum::<f64>();
    let (dark_conf, dark_fiber) = (dark(cfg.acquisition.confocal_channels), dark(cfg.acquisition.fiber_channels));
    let conf_pts: Vec<(f64, f64)> = powers.iter().map(|r| (r.power_mw, r.confocal_rate_per_s - dark_conf)).collect();
    let fiber_pts: Vec<(f64, f64)> = powers.iter().map(|r| (r.power_mw, r.fiber_rate_per_s - dark_fiber)).collect();

    let confocal: Option<SaturationFit> = stage(&mut failures, "confocal saturation fit", fit_saturation_confocal(&conf_pts));
    let fiber: Option<SaturationFit> = match &confocal {
        Some(c) => stage(&mut failures, "fiber saturation fit", fit_saturation_fiber(&fiber_pts, c.p_sat)),
        None => None,
    };
    let series: Vec<LifetimePoint> = powers
        .iter()
        .filter_map(|r| r.g2.as_ref().map(|g| LifetimePoint { power_mw: r.power_mw, tau1: g.tau1, sigma: g.sigmas.tau1 }))
        .filter(|p| p.sigma.is_finite())
        .collect();
    let opts = LifetimeOptions { max_power_mw: cfg.analysis.lifetime_max_power_mw };
    let lifetime: Option<LifetimeExtrapolation> = stage(&mut failures, "lifetime extrapolation", extrapolate_lifetime(&series, &opts));

    let efficiency = match (&confocal, &fiber, &lifetime) {
        (Some(c), Some(f), Some(l)) => {
            let inputs = cfg.efficiency.inputs_with((c.k, c.sigma_k), (f.k, f.sigma_k), (l.tau_tot, l.sigma_tau_tot));
            let mc = (cfg.efficiency.monte_carlo_draws > 0).then(|| MonteCarloOptions {
                draws: cfg.efficiency.monte_carlo_draws,
                seed: derive_seed(cfg.seed, u64::MAX),
            });
            stage(&mut failures, "efficiency", propagate_errors(&inputs, mc))
        }
        _ => None,
    };

    Ok(PipelineReport {
        config: cfg.clone(),
        powers,
        saturation_confocal: confocal.as_ref().map(FitReport::from),
        saturation_fiber: fiber.as_ref().map(FitReport::from),
        lifetime: lifetime.as_ref().map(|l| LifetimeSummary {
            tau_tot_s: l.tau_tot,
            sigma_tau_tot_s: l.sigma_tau_tot,
            expected_tau_tot_s: 1.0 / (cfg.emitter.k21 + cfg.emitter.k23),
            fit: FitReport::from(l),
        }),
        efficiency,
        failures,
    })
}

fn stage<T>(failures: &mut Vec<String>, name: &str, r: Result<T>) -> Option<T> {
    r.map_err(|e| failures.push(format!("{name}: {e}"))).ok()
}

/// Per-power table of measured and expected quantities.
pub fn replication_csv(report: &PipelineReport) -> String {
    let mut s = String::from(
        "power_mw,confocal_rate_per_s,fiber_rate_per_s,g2_zero,sigma_g2_zero,p_f,sigma_p_f,tau1_ns,sigma_tau1_ns,\
         tau2_ns,sigma_tau2_ns,c,sigma_c,expected_g2_zero,expected_p_f,expected_tau1_ns,expected_tau2_ns,expected_c,status\n",
    );
    for r in &report.powers {
        let e = &r.expected;
        let fit = match &r.g2 {
            Some(g) => format!(
                "{},{},{},{},{},{},{},{},{},{}",
                g.g2_zero,
                g.sigmas.g2_zero,
                g.p_f,
                g.sigmas.p_f,
                g.tau1 * 1e9,
                g.sigmas.tau1 * 1e9,
                g.tau2 * 1e9,
                g.sigmas.tau2 * 1e9,
                g.c,
                g.sigmas.c
            ),
            None => ",,,,,,,,,".to_string(),
        };
        let status = if r.error.is_some() { "failed" } else { "ok" };
        writeln!(
            s,
            "{},{},{},{fit},{},{},{},{},{},{status}",
            r.power_mw,
            r.confocal_rate_per_s,
            r.fiber_rate_per_s,
            e.g2_zero,
            e.p_f,
            e.tau1_s * 1e9,
            e.tau2_s * 1e9,
            e.c
        )
        .unwrap();
    }
    s
}

/// Write `pipeline_report.json`, `replication.csv` and one g² histogram per
/// power into `dir`.
pub fn write_pipeline(report: &PipelineReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, r) in report.powers.iter().enumerate() {
        if let Some(h) = &r.histogram {
            write_atomic(&dir.join(format!("g2_fiber_{i:02}.csv")), h.to_csv()?.as_bytes())?;
        }
    }
    write_atomic(&dir.join("replication.csv"), replication_csv(report).as_bytes())?;
    let json = serde_json::to_string_pretty(report).map_err(Error::from)? + "\n";
    write_atomic(&dir.join("pipeline_report.json"), json.as_bytes())
}
