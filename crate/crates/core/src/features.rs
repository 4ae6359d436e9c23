//! Binary feature file: a header followed by raw `H × W × C` grids.
//!
//! ```text
//! "OCOF"  u32 version  u32 H  u32 W  u32 C  u32 count
//! count × (H·W·C × f64, little-endian, (h, w, c) row-major)
//! ```
//!
//! A zero-length file is read as an empty collection.

use std::io::{Read, Write};

use crate::error::{OcoError, Result};
use crate::slot::FeatureMap;

pub const FEATURE_MAGIC: &[u8; 4] = b"OCOF";
pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureHeader {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub count: usize,
}

impl FeatureHeader {
    /// Exact file size implied by the header.
    pub fn file_len(&self) -> usize {
        FEATURE_HEADER_LEN + 8 * self.height * self.width * self.channels * self.count
    }

    fn grid_len(&self) -> usize {
        self.height * self.width * self.channels
    }
}

pub fn write_features<W: Write>(
    mut w: W,
    height: usize,
    width: usize,
    channels: usize,
    maps: &[FeatureMap],
) -> Result<()> {
    if let Some(i) = maps
        .iter()
        .position(|m| (m.height(), m.width(), m.channels()) != (height, width, channels))
    {
        return Err(OcoError::invalid(format!(
            "feature map {i} does not match header shape {height}x{width}x{channels}"
        )));
    }
    w.write_all(FEATURE_MAGIC)?;
    for v in [
        FEATURE_VERSION,
        height as u32,
        width as u32,
        channels as u32,
        maps.len() as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for m in maps {
        for v in m.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn parse_header(bytes: &[u8]) -> Result<FeatureHeader> {
    if bytes.len() < FEATURE_HEADER_LEN {
        return Err(OcoError::parse(
            format!("byte {}", bytes.len()),
            "feature file is shorter than its header",
        ));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(OcoError::parse("byte 0", "not a feature file (bad magic)"));
    }
    let word = |i: usize| {
        u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize
    };
    if word(0) != FEATURE_VERSION as usize {
        return Err(OcoError::parse(
            "byte 4",
            format!(
                "unsupported feature file version {}, expected {FEATURE_VERSION}",
                word(0)
            ),
        ));
    }
    Ok(FeatureHeader {
        height: word(1),
        width: word(2),
        channels: word(3),
        count: word(4),
    })
}

/// Reads every grid in the file. The byte length must match the header exactly.
pub fn read_features<R: Read>(mut r: R) -> Result<(Option<FeatureHeader>, Vec<FeatureMap>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.is_empty() {
        return Ok((None, Vec::new()));
    }
    let header = parse_header(&bytes)?;
    if bytes.len() != header.file_len() {
        return Err(OcoError::parse(
            format!("byte {}", bytes.len().min(header.file_len())),
            format!(
                "feature file is {} bytes, header {}x{}x{} x {} implies {}",
                bytes.len(),
                header.height,
                header.width,
                header.channels,
                header.count,
                header.file_len()
            ),
        ));
    }
    let grid = header.grid_len();
    let mut maps = Vec::with_capacity(header.count);
    for i in 0..header.count {
        let start = FEATURE_HEADER_LEN + 8 * grid * i;
        let values = bytes[start..start + 8 * grid]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let map = FeatureMap::new(header.height, header.width, header.channels, values)
            .map_err(|e| OcoError::parse(format!("feature map {i}"), e.to_string()))?;
        maps.push(map);
    }
    Ok((Some(header), maps))
}
