//! Detector time-tag streams and their on-disk formats.
//!
//! `TTG1` binary layout (little-endian): magic `TTG1`, `u16` channel count,
//! `u64` resolution (ps), `u64` duration (ps), then `{u8 channel, u64 t_ps}`
//! records sorted by time. The CSV form is `channel,t_ps`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TTG1";
const HEADER_LEN: u64 = 4 + 2 + 8 + 8;
const RECORD_LEN: u64 = 9;

/// Sorted integer-picosecond tags of one detector channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeTagStream {
    pub channel: u8,
    pub tags: Vec<u64>,
}

impl TimeTagStream {
    pub fn new(channel: u8, tags: Vec<u64>) -> Result<Self> {
        if tags.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation(format!("channel {channel}: tags must be strictly increasing")));
        }
        Ok(Self { channel, tags })
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Count rate over `duration_ps`.
    pub fn rate(&self, duration_ps: u64) -> f64 {
        self.tags.len() as f64 / (duration_ps as f64 * 1e-12)
    }
}

/// A set of channels recorded together; `streams[i].channel == i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSet {
    pub resolution_ps: u64,
    pub duration_ps: u64,
    pub streams: Vec<TimeTagStream>,
}

impl TagSet {
    pub fn validate(&self) -> Result<()> {
        if self.resolution_ps == 0 {
            return Err(Error::validation("resolution must be > 0 ps"));
        }
        if self.streams.len() > u16::MAX as usize || self.streams.len() > 256 {
            return Err(Error::validation("at most 256 channels"));
        }
        for (i, s) in self.streams.iter().enumerate() {
            if s.channel as usize != i {
                return Err(Error::validation(format!("stream {i} carries channel id {}", s.channel)));
            }
            if s.tags.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::validation(format!("channel {i}: tags not strictly increasing")));
            }
            if s.tags.last().is_some_and(|&t| t > self.duration_ps) {
                return Err(Error::validation(format!("channel {i}: tag beyond duration")));
            }
        }
        Ok(())
    }

    pub fn stream(&self, channel: u8) -> Result<&TimeTagStream> {
        self.streams
            .get(channel as usize)
            .ok_or_else(|| Error::validation(format!("no channel {channel} (have {})", self.streams.len())))
    }

    /// All records ordered by `(t, channel)`.
    pub fn merged(&self) -> Vec<(u8, u64)> {
        let mut out: Vec<(u8, u64)> =
            self.streams.iter().flat_map(|s| s.tags.iter().map(move |&t| (s.channel, t))).collect();
        out.sort_unstable_by_key(|&(c, t)| (t, c));
        out
    }

    pub fn to_ttg1(&self) -> Vec<u8> {
        let records = self.merged();
        let mut buf = Vec::with_capacity((HEADER_LEN + RECORD_LEN * records.len() as u64) as usize);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.streams.len() as u16).to_le_bytes());
        buf.extend_from_slice(&self.resolution_ps.to_le_bytes());
        buf.extend_from_slice(&self.duration_ps.to_le_bytes());
        for (c, t) in records {
            buf.push(c);
            buf.extend_from_slice(&t.to_le_bytes());
        }
        buf
    }

    pub fn from_ttg1(bytes: &[u8]) -> Result<Self> {
        let fmt = |offset: u64, message: &str| Error::Format { offset, message: message.to_string() };
        if bytes.len() < HEADER_LEN as usize {
            return Err(fmt(bytes.len() as u64, "truncated header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(fmt(0, "bad magic, expected TTG1"));
        }
        let channels = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
        let resolution_ps = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
        let duration_ps = u64::from_le_bytes(bytes[14..22].try_into().unwrap());
        if resolution_ps == 0 {
            return Err(fmt(6, "resolution must be > 0"));
        }
        if channels > 256 {
            return Err(fmt(4, "channel count above 256"));
        }
        let body = &bytes[HEADER_LEN as usize..];
        if !(body.len() as u64).is_multiple_of(RECORD_LEN) {
            let whole = body.len() as u64 / RECORD_LEN;
            return Err(fmt(HEADER_LEN + whole * RECORD_LEN, "truncated record"));
        }
        let mut streams: Vec<TimeTagStream> =
            (0..channels).map(|c| TimeTagStream { channel: c as u8, tags: Vec::new() }).collect();
        let mut last = 0u64;
        for (i, rec) in body.chunks_exact(RECORD_LEN as usize).enumerate() {
            let offset = HEADER_LEN + i as u64 * RECORD_LEN;
            let c = rec[0] as usize;
            let t = u64::from_le_bytes(rec[1..9].try_into().unwrap());
            if c >= channels {
                return Err(fmt(offset, &format!("channel {c} out of range (count {channels})")));
            }
            if t < last {
                return Err(fmt(offset + 1, "records not sorted by timestamp"));
            }
            if t > duration_ps {
                return Err(fmt(offset + 1, "timestamp beyond duration"));
            }
            if streams[c].tags.last() == Some(&t) {
                return Err(fmt(offset + 1, "duplicate timestamp within a channel"));
            }
            last = t;
            streams[c].tags.push(t);
        }
        Ok(Self { resolution_ps, duration_ps, streams })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("channel,t_ps\n");
        for (c, t) in self.merged() {
            out.push_str(&format!("{c},{t}\n"));
        }
        out
    }

    /// Parse `channel,t_ps`. CSV carries no header fields, so the resolution is
    /// supplied and the duration defaults to the last tag.
    pub fn from_csv(text: &str, resolution_ps: u64, duration_ps: Option<u64>) -> Result<Self> {
        let mut offset = 0u64;
        let mut lines = text.split_inclusive('\n');
        match lines.next() {
            Some(h) if h.trim().replace(' ', "") == "channel,t_ps" => offset += h.len() as u64,
            _ => return Err(Error::Format { offset: 0, message: "expected header `channel,t_ps`".into() }),
        }
        let mut streams: Vec<TimeTagStream> = Vec::new();
        let mut max_t = 0;
        for line in lines {
            let trimmed = line.trim();
            if !trimmed.is_empty() {
                let parsed = trimmed
                    .split_once(',')
                    .and_then(|(c, t)| Some((c.trim().parse::<u8>().ok()?, t.trim().parse::<u64>().ok()?)));
                let Some((c, t)) = parsed else {
                    return Err(Error::Format { offset, message: format!("bad record `{trimmed}`") });
                };
                while streams.len() <= c as usize {
                    streams.push(TimeTagStream { channel: streams.len() as u8, tags: Vec::new() });
                }
                let s = &mut streams[c as usize];
                if s.tags.last().is_some_and(|&l| t <= l) {
                    return Err(Error::Format { offset, message: format!("channel {c}: tags not increasing") });
                }
                s.tags.push(t);
                max_t = max_t.max(t);
            }
            offset += line.len() as u64;
        }
        let set = Self { resolution_ps, duration_ps: duration_ps.unwrap_or(max_t), streams };
        set.validate()?;
        Ok(set)
    }

    /// Read CSV when the extension is `.csv`, TTG1 otherwise.
    pub fn read(path: &Path, csv_resolution_ps: u64) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if !is_csv(path) {
            return Self::from_ttg1(&bytes);
        }
        let text = String::from_utf8(bytes)
            .map_err(|e| Error::Format { offset: e.utf8_error().valid_up_to() as u64, message: "not UTF-8".into() })?;
        Self::from_csv(&text, csv_resolution_ps, None)
    }

    /// Write as CSV when the extension is `.csv`, TTG1 otherwise.
    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        if is_csv(path) {
            write_atomic(path, self.to_csv().as_bytes())
        } else {
            write_atomic(path, &self.to_ttg1())
        }
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Write through a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    let name = path.file_name().ok_or_else(|| Error::validation("output path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}
