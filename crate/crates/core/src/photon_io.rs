//! Photon stream files.
//!
//! Text: one `channel,timestamp_ns` line per record, channel 1 or 2, sorted by
//! timestamp. Binary (`.bin`): headerless little-endian records of a `u64`
//! timestamp in ns followed by a `u8` channel.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::detection::{Channel, PhotonRecord, PhotonStream};
use crate::error::{Error, Result};

const RECORD_BYTES: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhotonFormat {
    Text,
    Binary,
}

impl PhotonFormat {
    /// `.bin` is binary, anything else text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("bin") => PhotonFormat::Binary,
            _ => PhotonFormat::Text,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            PhotonFormat::Text => "txt",
            PhotonFormat::Binary => "bin",
        }
    }
}

pub fn write_text<W: Write>(stream: &PhotonStream, w: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(w);
    for r in stream.records() {
        writeln!(w, "{},{}", r.channel.number(), r.timestamp_ns)?;
    }
    w.flush()
}

pub fn write_binary<W: Write>(stream: &PhotonStream, w: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(w);
    for r in stream.records() {
        w.write_all(&r.timestamp_ns.to_le_bytes())?;
        w.write_all(&[r.channel.number()])?;
    }
    w.flush()
}

pub fn parse_text(data: &str) -> Result<Vec<PhotonRecord>> {
    let mut out = Vec::new();
    let mut last = 0u64;
    for (i, line) in data.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let pos = || format!("line {lineno}");
        let (ch, ts) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(pos(), format!("expected `channel,timestamp_ns`, got `{line}`")))?;
        let channel = ch
            .trim()
            .parse::<u8>()
            .ok()
            .and_then(Channel::from_number)
            .ok_or_else(|| Error::parse(pos(), format!("channel must be 1 or 2, got `{}`", ch.trim())))?;
        let timestamp_ns = ts
            .trim()
            .parse::<u64>()
            .map_err(|e| Error::parse(pos(), format!("bad timestamp `{}`: {e}", ts.trim())))?;
        if timestamp_ns < last {
            return Err(Error::parse(pos(), "timestamps are not sorted"));
        }
        last = timestamp_ns;
        out.push(PhotonRecord { timestamp_ns, channel });
    }
    Ok(out)
}

pub fn parse_binary(data: &[u8]) -> Result<Vec<PhotonRecord>> {
    let whole = data.len() - data.len() % RECORD_BYTES;
    if whole != data.len() {
        return Err(Error::parse(
            format!("byte {whole}"),
            format!("truncated record: {} trailing bytes", data.len() - whole),
        ));
    }
    let mut out = Vec::with_capacity(data.len() / RECORD_BYTES);
    let mut last = 0u64;
    for (k, rec) in data.chunks_exact(RECORD_BYTES).enumerate() {
        let offset = k * RECORD_BYTES;
        let timestamp_ns = u64::from_le_bytes(rec[..8].try_into().expect("8-byte slice"));
        let channel = Channel::from_number(rec[8]).ok_or_else(|| {
            Error::parse(
                format!("byte {}", offset + 8),
                format!("channel must be 1 or 2, got {}", rec[8]),
            )
        })?;
        if timestamp_ns < last {
            return Err(Error::parse(format!("byte {offset}"), "timestamps are not sorted"));
        }
        last = timestamp_ns;
        out.push(PhotonRecord { timestamp_ns, channel });
    }
    Ok(out)
}

pub fn write_stream(stream: &PhotonStream, path: &Path, format: PhotonFormat) -> Result<()> {
    let f = fs::File::create(path)?;
    match format {
        PhotonFormat::Text => write_text(stream, f)?,
        PhotonFormat::Binary => write_binary(stream, f)?,
    }
    Ok(())
}

/// Reads records from `path`, choosing the format by extension.
pub fn read_records(path: &Path) -> Result<Vec<PhotonRecord>> {
    let records = match PhotonFormat::from_path(path) {
        PhotonFormat::Binary => parse_binary(&fs::read(path)?)?,
        PhotonFormat::Text => {
            let bytes = fs::read(path)?;
            let text = String::from_utf8(bytes).map_err(|e| {
                Error::parse(
                    format!("byte {}", e.utf8_error().valid_up_to()),
                    "file is not UTF-8 text",
                )
            })?;
            parse_text(&text)?
        }
    };
    if records.is_empty() {
        return Err(Error::Degenerate(format!(
            "{} contains no photon records",
            path.display()
        )));
    }
    Ok(records)
}
