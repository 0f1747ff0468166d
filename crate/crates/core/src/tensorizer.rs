//! Sliding-window conversion of an elevation map into an OOD-weighted
//! directional feasibility tensor.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feasnet::{predict_feasibility, reconstruction_error, FeasNetError, FeasNetParams};
use crate::mapio::Gray;
use crate::oracle::{channel_heading, PolicyArchetype, TaskVector};
use crate::terrain::{extract_patch, ElevationMap, TerrainError};
use crate::DIRECTIONS;

const MAGIC: &[u8; 4] = b"FTEN";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("no cell of the {width}x{height} map has a full patch footprint")]
    NoValidCells { width: usize, height: usize },
    #[error("no policy bundles given")]
    NoBundles,
    #[error("policy id {0} appears more than once")]
    DuplicatePolicy(usize),
    #[error("policy {policy_id}: {source}")]
    Policy {
        policy_id: usize,
        #[source]
        source: Box<TensorError>,
    },
    #[error("invalid tensor: {0}")]
    Invalid(String),
    #[error("invalid OOD thresholds: tau_low {low} must be below tau_high {high}")]
    Thresholds { low: f64, high: f64 },
    #[error(transparent)]
    Net(#[from] FeasNetError),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed tensor file: {0}")]
    Format(String),
    #[error("unsupported tensor file version {found}, expected {expected}")]
    Version { found: u16, expected: u16 },
}

/// Reconstruction-error band over which the OOD weight falls from 1 to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OodThresholds {
    pub tau_low: f64,
    pub tau_high: f64,
}

impl Default for OodThresholds {
    fn default() -> Self {
        Self {
            tau_low: 0.1,
            tau_high: 2.0,
        }
    }
}

impl OodThresholds {
    pub fn validate(&self) -> Result<(), TensorError> {
        if !(self.tau_low.is_finite() && self.tau_high.is_finite() && self.tau_low >= 0.0 && self.tau_low < self.tau_high) {
            return Err(TensorError::Thresholds {
                low: self.tau_low,
                high: self.tau_high,
            });
        }
        Ok(())
    }

    pub fn weight(&self, recon_error: f64) -> f64 {
        (1.0 - (recon_error - self.tau_low) / (self.tau_high - self.tau_low)).clamp(0.0, 1.0)
    }
}

/// OOD weight with the default thresholds.
pub fn ood_weight(recon_error: f64) -> f64 {
    OodThresholds::default().weight(recon_error)
}

/// A feasibility-predicting policy: oracle archetype plus trained weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyBundle {
    pub archetype: PolicyArchetype,
    pub params: FeasNetParams,
}

impl PolicyBundle {
    pub fn new(archetype: PolicyArchetype, params: FeasNetParams) -> Self {
        Self { archetype, params }
    }

    pub fn id(&self) -> usize {
        self.archetype.id
    }
}

/// `W x H x 8` directional feasibility for one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityTensor {
    width: usize,
    height: usize,
    policy_id: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl FeasibilityTensor {
    /// `values[(y * W + x) * 8 + k]`; invalid cells must be zero in every
    /// channel.
    pub fn new(
        width: usize,
        height: usize,
        policy_id: usize,
        values: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self, TensorError> {
        if valid.len() != width * height || values.len() != width * height * DIRECTIONS {
            return Err(TensorError::Invalid(format!(
                "{}x{} grid needs {} mask entries and {} values, got {} and {}",
                width,
                height,
                width * height,
                width * height * DIRECTIONS,
                valid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(TensorError::Invalid(format!("value {} at index {i} outside [0, 1]", values[i])));
        }
        for (c, ok) in valid.iter().enumerate() {
            if !ok && values[c * DIRECTIONS..(c + 1) * DIRECTIONS].iter().any(|&v| v != 0.0) {
                return Err(TensorError::Invalid(format!("masked cell {c} has nonzero values")));
            }
        }
        Ok(Self {
            width,
            height,
            policy_id,
            values,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn policy_id(&self) -> usize {
        self.policy_id
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, x: usize, y: usize, k: usize) -> f64 {
        self.values[(y * self.width + x) * DIRECTIONS + k]
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    /// Mean over valid cells and all channels.
    pub fn valid_mean(&self) -> f64 {
        let (sum, n) = self
            .valid
            .iter()
            .enumerate()
            .filter(|(_, ok)| **ok)
            .fold((0.0, 0usize), |(s, n), (c, _)| {
                (s + self.values[c * DIRECTIONS..(c + 1) * DIRECTIONS].iter().sum::<f64>(), n + DIRECTIONS)
            });
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Channel `k` as an image, feasibility 0 black and 1 white.
    pub fn channel_image(&self, k: usize) -> Gray {
        let v: Vec<f64> = (0..self.width * self.height)
            .map(|c| self.values[c * DIRECTIONS + k])
            .collect();
        Gray::unit(self.width, self.height, &v)
    }
}

/// Footprint mask of `map`.
pub fn valid_mask(map: &ElevationMap) -> Vec<bool> {
    (0..map.height())
        .flat_map(|y| (0..map.width()).map(move |x| (x, y)))
        .map(|(x, y)| map.footprint_fits(x, y))
        .collect()
}

/// OOD weight of cell `(x, y)` from its heading-0 patch.
pub fn cell_weight(
    map: &ElevationMap,
    params: &FeasNetParams,
    x: usize,
    y: usize,
    thresholds: &OodThresholds,
) -> Result<f64, TensorError> {
    let patch = extract_patch(map, x, y, 0.0)?;
    Ok(thresholds.weight(reconstruction_error(params, &patch)?))
}

/// Raw network feasibility of moving from `(x, y)` along channel `k`.
pub fn cell_feasibility(
    map: &ElevationMap,
    params: &FeasNetParams,
    x: usize,
    y: usize,
    k: usize,
) -> Result<f64, TensorError> {
    let patch = extract_patch(map, x, y, channel_heading(k))?;
    Ok(predict_feasibility(params, &patch, &TaskVector::forward())?)
}

pub fn tensorize(map: &ElevationMap, params: &FeasNetParams, policy_id: usize) -> Result<FeasibilityTensor, TensorError> {
    tensorize_with(map, params, policy_id, &OodThresholds::default())
}

/// Evaluates every valid cell row-major: `value(x, y, k) = w(x, y) * f(x, y, k)`.
pub fn tensorize_with(
    map: &ElevationMap,
    params: &FeasNetParams,
    policy_id: usize,
    thresholds: &OodThresholds,
) -> Result<FeasibilityTensor, TensorError> {
    thresholds.validate()?;
    let (w, h) = (map.width(), map.height());
    let valid = valid_mask(map);
    if !valid.iter().any(|&v| v) {
        return Err(TensorError::NoValidCells { width: w, height: h });
    }
    let mut values = vec![0.0; w * h * DIRECTIONS];
    for y in 0..h {
        for x in 0..w {
            let c = y * w + x;
            if !valid[c] {
                continue;
            }
            let weight = cell_weight(map, params, x, y, thresholds)?;
            for k in 0..DIRECTIONS {
                values[c * DIRECTIONS + k] = weight * cell_feasibility(map, params, x, y, k)?;
            }
        }
    }
    FeasibilityTensor::new(w, h, policy_id, values, valid)
}

/// One tensor per bundle, in bundle order.
pub fn tensorize_all(map: &ElevationMap, bundles: &[PolicyBundle]) -> Result<Vec<FeasibilityTensor>, TensorError> {
    tensorize_all_with(map, bundles, &OodThresholds::default())
}

pub fn tensorize_all_with(
    map: &ElevationMap,
    bundles: &[PolicyBundle],
    thresholds: &OodThresholds,
) -> Result<Vec<FeasibilityTensor>, TensorError> {
    if bundles.is_empty() {
        return Err(TensorError::NoBundles);
    }
    for (i, b) in bundles.iter().enumerate() {
        if bundles[..i].iter().any(|o| o.id() == b.id()) {
            return Err(TensorError::DuplicatePolicy(b.id()));
        }
    }
    bundles
        .iter()
        .map(|b| {
            tensorize_with(map, &b.params, b.id(), thresholds).map_err(|e| TensorError::Policy {
                policy_id: b.id(),
                source: Box::new(e),
            })
        })
        .collect()
}

/// Serializes a tensor: magic, version, `W`, `H`, `D`, policy id, the mask
/// as a row-major bitset (bit `i % 8` of byte `i / 8`), then little-endian
/// `f32` values.
pub fn tensor_to_bytes(t: &FeasibilityTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + t.valid.len() / 8 + 4 * t.values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [t.width, t.height, DIRECTIONS, t.policy_id] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let mut bits = vec![0u8; t.valid.len().div_ceil(8)];
    for (i, _) in t.valid.iter().enumerate().filter(|(_, v)| **v) {
        bits[i / 8] |= 1 << (i % 8);
    }
    out.extend_from_slice(&bits);
    for v in &t.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn tensor_from_bytes(buf: &[u8]) -> Result<FeasibilityTensor, TensorError> {
    let truncated = || TensorError::Format(format!("truncated file ({} bytes)", buf.len()));
    if buf.len() < 6 {
        return Err(truncated());
    }
    if &buf[..4] != MAGIC {
        return Err(TensorError::Format("missing FTEN magic".into()));
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != VERSION {
        return Err(TensorError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let header = buf.get(6..22).ok_or_else(truncated)?;
    let field = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (w, h, d, policy_id) = (field(0), field(1), field(2), field(3));
    if d != DIRECTIONS {
        return Err(TensorError::Format(format!("{d} directions, expected {DIRECTIONS}")));
    }
    let cells = w.checked_mul(h).ok_or_else(truncated)?;
    let mask_len = cells.div_ceil(8);
    let expected = 22 + mask_len + 4 * cells * DIRECTIONS;
    if buf.len() != expected {
        return Err(TensorError::Format(format!(
            "expected {expected} bytes for a {w}x{h} tensor, found {}",
            buf.len()
        )));
    }
    let bits = &buf[22..22 + mask_len];
    let valid = (0..cells).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
    let values = buf[22 + mask_len..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    FeasibilityTensor::new(w, h, policy_id, values, valid)
}

pub fn save_tensor(t: &FeasibilityTensor, path: impl AsRef<Path>) -> Result<(), TensorError> {
    let path = path.as_ref();
    fs::write(path, tensor_to_bytes(t)).map_err(|source| TensorError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<FeasibilityTensor, TensorError> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|source| TensorError::Io {
        path: path.display().to_string(),
        source,
    })?;
    tensor_from_bytes(&buf)
}
