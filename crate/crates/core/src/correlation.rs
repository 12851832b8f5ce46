//! Full pair cross-correlation of two tag streams and its normalization to g².
//!
//! Bin `k` covers delays `[k·w − w/2, k·w + w/2)`, so a zero delay lands in
//! the central bin. Bin indices use doubled integer arithmetic and are exact.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timetag::TimeTagStream;

/// Default bin width (ps): twelve quanta of the 77 ps tagger.
pub const DEFAULT_BIN_WIDTH_PS: u64 = 924;
pub const DEFAULT_TAU_MAX_PS: u64 = 1_200_000;
pub const DEFAULT_NORM_WINDOW_NS: (f64, f64) = (700.0, 1100.0);

/// Tags of stream `a` handled per parallel task.
const CHUNK: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Histogram {
    pub bin_width_ps: u64,
    /// Bins run over `k = −half_bins..=half_bins`.
    pub half_bins: usize,
    pub counts: Vec<u64>,
    /// Normalization window on |τ| (ns), once normalized.
    pub norm_window_ns: Option<(f64, f64)>,
    /// Mean counts per bin in the window.
    pub norm_value: Option<f64>,
    /// `counts / norm_value`; empty until normalized.
    pub g2: Vec<f64>,
    /// Tags in stream a and b.
    pub totals: [u64; 2],
    pub duration_ps: u64,
    /// Set when either input stream was empty.
    pub empty_input: bool,
}

impl G2Histogram {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Signed bin index of position `i`.
    pub fn bin_index(&self, i: usize) -> i64 {
        i as i64 - self.half_bins as i64
    }

    /// Bin center (ns).
    pub fn tau_ns(&self, i: usize) -> f64 {
        self.bin_index(i) as f64 * self.bin_width_ps as f64 * 1e-3
    }

    pub fn bin_width_s(&self) -> f64 {
        self.bin_width_ps as f64 * 1e-12
    }

    pub fn tau_max_ps(&self) -> u64 {
        self.half_bins as u64 * self.bin_width_ps
    }

    pub fn total_pairs(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn is_normalized(&self) -> bool {
        self.norm_value.is_some()
    }

    pub fn to_csv(&self) -> Result<String> {
        if !self.is_normalized() {
            return Err(Error::validation("histogram must be normalized before export"));
        }
        let mut out = String::from("tau_ns,counts,g2\n");
        for (i, (c, g)) in self.counts.iter().zip(&self.g2).enumerate() {
            out.push_str(&format!("{:.6},{},{}\n", self.tau_ns(i), c, g));
        }
        Ok(out)
    }

    /// Parse the CSV export back. The normalization is recovered as
    /// `counts/g2`; the window is not stored in the file.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut offset = 0u64;
        let mut lines = text.split_inclusive('\n');
        match lines.next() {
            Some(h) if h.trim().replace(' ', "") == "tau_ns,counts,g2" => offset += h.len() as u64,
            _ => return Err(Error::Format { offset: 0, message: "expected header `tau_ns,counts,g2`".into() }),
        }
        let mut rows = Vec::new();
        for line in lines {
            let t = line.trim();
            if !t.is_empty() {
                let f: Vec<&str> = t.split(',').map(str::trim).collect();
                let row = (f.len() == 3)
                    .then(|| Some((f[0].parse::<f64>().ok()?, f[1].parse::<u64>().ok()?, f[2].parse::<f64>().ok()?)))
                    .flatten();
                let Some(row) = row else {
                    return Err(Error::Format { offset, message: format!("bad row `{t}`") });
                };
                rows.push(row);
            }
            offset += line.len() as u64;
        }
        if rows.len() < 3 || rows.len() % 2 == 0 {
            return Err(Error::Format { offset, message: "need an odd number (>= 3) of bins".into() });
        }
        let half_bins = rows.len() / 2;
        let width_ns = (rows[rows.len() - 1].0 - rows[0].0) / (rows.len() - 1) as f64;
        let bin_width_ps = (width_ns * 1e3).round() as u64;
        if bin_width_ps == 0 || rows[half_bins].0.abs() > 1e-6 {
            return Err(Error::Format { offset: 0, message: "bins must be symmetric about τ = 0".into() });
        }
        let norm_value = rows
            .iter()
            .filter(|r| r.1 > 0 && r.2 > 0.0)
            .map(|r| r.1 as f64 / r.2)
            .next()
            .ok_or_else(|| Error::Format { offset: 0, message: "cannot recover normalization".into() })?;
        Ok(Self {
            bin_width_ps,
            half_bins,
            counts: rows.iter().map(|r| r.1).collect(),
            norm_window_ns: None,
            norm_value: Some(norm_value),
            g2: rows.iter().map(|r| r.2).collect(),
            totals: [0, 0],
            duration_ps: 0,
            empty_input: false,
        })
    }
}

/// `floor((2·dt + w) / 2w)`: index of the half-open bin holding delay `dt`.
fn bin_of(dt: i64, width: u64) -> i64 {
    (2 * dt as i128 + width as i128).div_euclid(2 * width as i128) as i64
}

/// Histogram of all ordered pairs `t_b − t_a` within `±tau_max`.
///
/// `tau_max_ps` is rounded up to a whole number of bins.
pub fn cross_correlate(
    a: &TimeTagStream,
    b: &TimeTagStream,
    bin_width_ps: u64,
    tau_max_ps: u64,
    duration_ps: u64,
) -> Result<G2Histogram> {
    if bin_width_ps == 0 {
        return Err(Error::validation("bin width must be > 0"));
    }
    if tau_max_ps == 0 {
        return Err(Error::validation("tau_max must be > 0"));
    }
    let half_bins = tau_max_ps.div_ceil(bin_width_ps) as usize;
    let nbins = 2 * half_bins + 1;
    let mut hist = G2Histogram {
        bin_width_ps,
        half_bins,
        counts: vec![0; nbins],
        norm_window_ns: None,
        norm_value: None,
        g2: Vec::new(),
        totals: [a.len() as u64, b.len() as u64],
        duration_ps,
        empty_input: a.is_empty() || b.is_empty(),
    };
    if hist.empty_input {
        return Ok(hist);
    }
    // reach covers every delay that maps into bins −n..=n
    let reach = (half_bins as u64 * bin_width_ps + bin_width_ps / 2 + 1) as i64;
    let tb = &b.tags;
    let partial = |chunk: &[u64]| -> Vec<u64> {
        let mut local = vec![0u64; nbins];
        let first = chunk[0] as i64;
        let mut lo = tb.partition_point(|&t| (t as i64) < first - reach);
        for &ta in chunk {
            let ta = ta as i64;
            while lo < tb.len() && (tb[lo] as i64) < ta - reach {
                lo += 1;
            }
            for &t in &tb[lo..] {
                let dt = t as i64 - ta;
                if dt > reach {
                    break;
                }
                let k = bin_of(dt, bin_width_ps);
                if k.unsigned_abs() as usize <= half_bins {
                    local[(k + half_bins as i64) as usize] += 1;
                }
            }
        }
        local
    };
    hist.counts = a
        .tags
        .par_chunks(CHUNK)
        .map(partial)
        .reduce(|| vec![0u64; nbins], |mut x, y| {
            x.iter_mut().zip(y).for_each(|(p, q)| *p += q);
            x
        });
    Ok(hist)
}

/// Divide by the mean count of all bins whose |τ| center lies in
/// `[lo_ns, hi_ns]`.
pub fn normalize_g2(mut hist: G2Histogram, window_ns: (f64, f64)) -> Result<G2Histogram> {
    let (lo, hi) = window_ns;
    let tau_max_ns = hist.tau_max_ps() as f64 * 1e-3;
    if !(lo >= 0.0 && hi >= lo && hi <= tau_max_ns + 1e-9) {
        return Err(Error::validation(format!(
            "normalization window [{lo}, {hi}] ns must satisfy 0 <= lo <= hi <= tau_max = {tau_max_ns} ns"
        )));
    }
    let selected: Vec<u64> = (0..hist.len())
        .filter(|&i| (lo..=hi).contains(&hist.tau_ns(i).abs()))
        .map(|i| hist.counts[i])
        .collect();
    if selected.is_empty() {
        return Err(Error::validation(format!("normalization window [{lo}, {hi}] ns contains no bin center")));
    }
    let mean = selected.iter().sum::<u64>() as f64 / selected.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::ZeroNormalization { lo_ns: lo, hi_ns: hi });
    }
    hist.g2 = hist.counts.iter().map(|&c| c as f64 / mean).collect();
    hist.norm_value = Some(mean);
    hist.norm_window_ns = Some(window_ns);
    Ok(hist)
}

/// Correlate and normalize with the default window.
pub fn g2_histogram(
    a: &TimeTagStream,
    b: &TimeTagStream,
    bin_width_ps: u64,
    tau_max_ps: u64,
    duration_ps: u64,
    window_ns: (f64, f64),
) -> Result<G2Histogram> {
    normalize_g2(cross_correlate(a, b, bin_width_ps, tau_max_ps, duration_ps)?, window_ns)
}
