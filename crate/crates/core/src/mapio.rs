//! Text map files (`FEASMAP 1`) and 8-bit PGM previews.
//!
//! ```text
//! FEASMAP 1
//! W H resolution origin_x origin_y
//! h(0,0) h(1,0) ... h(W-1,0)
//! ...
//! h(0,H-1) ...
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::terrain::{ElevationMap, TerrainError};

const MAGIC: &str = "FEASMAP";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MapFileError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("expected {expected} height values (W x H), found {actual}")]
    Count { expected: usize, actual: usize },
    #[error(transparent)]
    Map(#[from] TerrainError),
}

fn parse_err(line: usize, message: impl Into<String>) -> MapFileError {
    MapFileError::Parse {
        line,
        message: message.into(),
    }
}

/// Serializes a map. `{}` formatting of `f64` is the shortest string that
/// parses back to the same bits, so the round trip is exact.
pub fn map_to_string(map: &ElevationMap) -> String {
    let mut out = String::with_capacity(map.width() * map.height() * 8 + 64);
    out.push_str(&format!("{MAGIC} {VERSION}\n"));
    let (ox, oy) = map.origin();
    out.push_str(&format!(
        "{} {} {} {} {}\n",
        map.width(),
        map.height(),
        map.resolution(),
        ox,
        oy
    ));
    for row in map.data().chunks(map.width()) {
        let line: Vec<String> = row.iter().map(|h| format!("{h}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_map(text: &str) -> Result<ElevationMap, MapFileError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (ln, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(parse_err(ln, format!("missing `{MAGIC}` magic")));
    }
    match parts.next().map(str::parse::<u32>) {
        Some(Ok(VERSION)) => {}
        Some(Ok(v)) => return Err(parse_err(ln, format!("unsupported version {v}, expected {VERSION}"))),
        _ => return Err(parse_err(ln, "missing or malformed version")),
    }

    let (ln, dims) = lines.next().ok_or_else(|| parse_err(2, "missing dimension line"))?;
    let fields: Vec<&str> = dims.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(parse_err(
            ln,
            format!("expected `W H resolution origin_x origin_y`, found {} fields", fields.len()),
        ));
    }
    let width: usize = fields[0]
        .parse()
        .map_err(|_| parse_err(ln, format!("bad width `{}`", fields[0])))?;
    let height: usize = fields[1]
        .parse()
        .map_err(|_| parse_err(ln, format!("bad height `{}`", fields[1])))?;
    let mut nums = [0.0f64; 3];
    for (slot, s) in nums.iter_mut().zip(&fields[2..]) {
        *slot = s
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_err(ln, format!("bad number `{s}`")))?;
    }
    let [resolution, ox, oy] = nums;

    let mut data = Vec::with_capacity(width.saturating_mul(height).min(1 << 24));
    for (ln, line) in lines {
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(ln, format!("bad height value `{tok}`")))?;
            if !v.is_finite() {
                return Err(parse_err(ln, format!("non-finite height `{tok}`")));
            }
            data.push(v);
        }
    }
    if data.len() != width * height {
        return Err(MapFileError::Count {
            expected: width * height,
            actual: data.len(),
        });
    }
    Ok(ElevationMap::new(width, height, resolution, (ox, oy), data)?)
}

pub fn save_map(map: &ElevationMap, path: impl AsRef<Path>) -> Result<(), MapFileError> {
    let path = path.as_ref();
    fs::write(path, map_to_string(map)).map_err(|source| MapFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_map(path: impl AsRef<Path>) -> Result<ElevationMap, MapFileError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| MapFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_map(&text)
}

/// Grayscale image with 8-bit pixels, row 0 first.
#[derive(Debug, Clone, PartialEq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Gray {
    /// Min-max scales `values` to 0..=255. A constant field maps to 0.
    pub fn scaled(width: usize, height: usize, values: &[f64]) -> Self {
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        let pixels = values
            .iter()
            .map(|&v| {
                if span > 0.0 {
                    ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                }
            })
            .collect();
        Self { width, height, pixels }
    }

    /// Maps values in `[0, 1]` linearly to 0..=255 without rescaling.
    pub fn unit(width: usize, height: usize, values: &[f64]) -> Self {
        let pixels = values
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Self { width, height, pixels }
    }

    /// Plain (P2) PGM text.
    pub fn to_pgm(&self) -> String {
        let mut out = format!("P2\n{} {}\n255\n", self.width, self.height);
        for row in self.pixels.chunks(self.width.max(1)) {
            let line: Vec<String> = row.iter().map(|p| p.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_pgm().as_bytes())
    }
}

pub fn map_preview(map: &ElevationMap) -> Gray {
    Gray::scaled(map.width(), map.height(), map.data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::{generate, TerrainFamily, TerrainParams, TerrainSpec};

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = TerrainSpec::new(TerrainFamily::Mixed, (8.0, 1.6))
            .with_params(TerrainParams {
                jitter: 0.01,
                buffer: 0.4,
                ..Default::default()
            })
            .with_seed(3);
        let map = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.feasmap");
        save_map(&map, &path).unwrap();
        let back = load_map(&path).unwrap();
        assert_eq!(back, map);
        assert!(back.data().iter().zip(map.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn count_mismatch_names_both_counts() {
        let err = parse_map("FEASMAP 1\n2 2 0.05 0 0\n0 0 0\n").unwrap_err();
        assert!(matches!(err, MapFileError::Count { expected: 4, actual: 3 }));
        assert!(err.to_string().contains('4') && err.to_string().contains('3'));
    }

    #[test]
    fn nan_token_is_rejected_with_line() {
        let err = parse_map("FEASMAP 1\n2 2 0.05 0 0\n0 0\n0 NaN\n").unwrap_err();
        match err {
            MapFileError::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(parse_map(""), Err(MapFileError::Parse { line: 1, .. })));
        assert!(matches!(parse_map("FEASMAP 2\n"), Err(MapFileError::Parse { line: 1, .. })));
        assert!(matches!(parse_map("MAP 1\n"), Err(MapFileError::Parse { line: 1, .. })));
        assert!(matches!(
            parse_map("FEASMAP 1\n2 2 0.05 0\n"),
            Err(MapFileError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_map("FEASMAP 1\n2 1 -1 0 0\n0 0\n"),
            Err(MapFileError::Map(TerrainError::BadResolution(_)))
        ));
    }

    #[test]
    fn pgm_scaling() {
        let g = Gray::scaled(2, 1, &[1.0, 3.0]);
        assert_eq!(g.pixels, vec![0, 255]);
        assert_eq!(g.to_pgm(), "P2\n2 1\n255\n0 255\n");
        assert_eq!(Gray::scaled(2, 1, &[0.5, 0.5]).pixels, vec![0, 0]);
        assert_eq!(Gray::unit(3, 1, &[0.0, 0.5, 2.0]).pixels, vec![0, 128, 255]);
    }
}
