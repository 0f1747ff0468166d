//! Elevation maps, synthetic terrain families and rotated patch extraction.
//!
//! Grid convention: cell `(x, y)` is column `x`, row `y`; data is stored
//! row-major (`data[y * width + x]`). Headings are measured counter-clockwise
//! from the +x axis.

use std::f64::consts::SQRT_2;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Grid resolution used by every generated map (meters per cell).
pub const DEFAULT_RESOLUTION: f64 = 0.05;

/// Side length of a height patch in cells.
pub const PATCH_SIDE: usize = 16;

/// Index of the patch center along either axis.
pub const PATCH_CENTER: usize = PATCH_SIDE / 2;

#[derive(Debug, Error, PartialEq)]
pub enum TerrainError {
    #[error("map dimensions must be at least 1x1, got {width}x{height}")]
    EmptyMap { width: usize, height: usize },
    #[error("resolution must be positive and finite, got {0}")]
    BadResolution(f64),
    #[error("expected {expected} height values for the map, got {actual}")]
    DataLength { expected: usize, actual: usize },
    #[error("height at cell ({x}, {y}) is not finite")]
    NonFinite { x: usize, y: usize },
    #[error("terrain extent must be positive, got {0:?}")]
    BadExtent((f64, f64)),
    #[error("invalid terrain parameter `{name}`: {reason}")]
    BadParam { name: &'static str, reason: String },
    #[error("{family} terrain needs at least {needed_m:.3} m along x for one feature period, extent gives {available_m:.3} m")]
    ExtentTooSmall {
        family: TerrainFamily,
        needed_m: f64,
        available_m: f64,
    },
    #[error("patch footprint at ({x}, {y}) leaves the map")]
    OutOfBounds { x: usize, y: usize },
}

/// 2D height grid with metric resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ElevationMap {
    width: usize,
    height: usize,
    resolution: f64,
    origin: (f64, f64),
    data: Vec<f64>,
}

impl ElevationMap {
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        origin: (f64, f64),
        data: Vec<f64>,
    ) -> Result<Self, TerrainError> {
        if width == 0 || height == 0 {
            return Err(TerrainError::EmptyMap { width, height });
        }
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(TerrainError::BadResolution(resolution));
        }
        if data.len() != width * height {
            return Err(TerrainError::DataLength {
                expected: width * height,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|h| !h.is_finite()) {
            return Err(TerrainError::NonFinite {
                x: i % width,
                y: i / width,
            });
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            data,
        })
    }

    /// Builds a map by evaluating `f(x, y)` for every cell.
    pub fn from_fn(
        width: usize,
        height: usize,
        resolution: f64,
        f: impl Fn(usize, usize) -> f64,
    ) -> Result<Self, TerrainError> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, resolution, (0.0, 0.0), data)
    }

    pub fn flat(width: usize, height: usize, resolution: f64) -> Result<Self, TerrainError> {
        Self::from_fn(width, height, resolution, |_, _| 0.0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear interpolation at fractional cell coordinates. Returns `None`
    /// outside `[0, width-1] x [0, height-1]`.
    pub fn sample(&self, fx: f64, fy: f64) -> Option<f64> {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(0.0..=max_x).contains(&fx) || !(0.0..=max_y).contains(&fy) {
            return None;
        }
        let x0 = (fx.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (fy.floor() as usize).min(self.height.saturating_sub(2));
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let top = (1.0 - tx) * self.get(x0, y0) + tx * self.get(x1, y0);
        let bottom = (1.0 - tx) * self.get(x0, y1) + tx * self.get(x1, y1);
        Some((1.0 - ty) * top + ty * bottom)
    }

    /// True when a patch of side [`PATCH_SIDE`] at any heading fits inside
    /// the map around `(x, y)`. Depends only on geometry.
    pub fn footprint_fits(&self, x: usize, y: usize) -> bool {
        footprint_fits(self.width, self.height, x, y)
    }

    /// Returns a copy with the given cells overwritten; used by tests and
    /// experiment setups that carve features into existing maps.
    pub fn with_heights(mut self, f: impl Fn(usize, usize, f64) -> f64) -> Result<Self, TerrainError> {
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                self.data[i] = f(x, y, self.data[i]);
            }
        }
        Self::new(self.width, self.height, self.resolution, self.origin, self.data)
    }
}

/// Circumscribed radius of the patch footprint in cells.
pub fn footprint_radius() -> f64 {
    PATCH_CENTER as f64 * SQRT_2
}

pub fn footprint_fits(width: usize, height: usize, x: usize, y: usize) -> bool {
    let r = footprint_radius();
    let (fx, fy) = (x as f64, y as f64);
    fx - r >= 0.0
        && fy - r >= 0.0
        && fx + r <= (width as f64 - 1.0)
        && fy + r <= (height as f64 - 1.0)
}

/// Local heightmap window resampled for one travel heading.
///
/// `values[row * side + col]`: `col` runs along the travel direction
/// (offset `col - 8` cells), `row` runs to the left of travel (offset
/// `row - 8`). The center element `(8, 8)` is the query cell itself.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightPatch {
    side: usize,
    resolution: f64,
    values: Vec<f64>,
    heading: f64,
}

impl HeightPatch {
    /// Builds a patch from raw values and center-normalizes it.
    pub fn from_values(resolution: f64, heading: f64, mut values: Vec<f64>) -> Self {
        assert_eq!(values.len(), PATCH_SIDE * PATCH_SIDE, "patch must be 16x16");
        let center = values[PATCH_CENTER * PATCH_SIDE + PATCH_CENTER];
        for v in &mut values {
            *v -= center;
        }
        Self {
            side: PATCH_SIDE,
            resolution,
            values,
            heading,
        }
    }

    /// Patch where `f(along, left)` gives the height at the given cell offsets.
    pub fn from_fn(resolution: f64, f: impl Fn(i32, i32) -> f64) -> Self {
        let mut values = Vec::with_capacity(PATCH_SIDE * PATCH_SIDE);
        for row in 0..PATCH_SIDE {
            for col in 0..PATCH_SIDE {
                values.push(f(col as i32 - PATCH_CENTER as i32, row as i32 - PATCH_CENTER as i32));
            }
        }
        Self::from_values(resolution, 0.0, values)
    }

    pub fn flat(resolution: f64) -> Self {
        Self::from_fn(resolution, |_, _| 0.0)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Height at offset `along` cells ahead and `left` cells to the left.
    #[inline]
    pub fn at(&self, along: i32, left: i32) -> f64 {
        let col = (along + PATCH_CENTER as i32) as usize;
        let row = (left + PATCH_CENTER as i32) as usize;
        self.values[row * self.side + col]
    }
}

/// Cosine and sine of `heading` with values within 1e-12 of 0 or ±1 snapped,
/// so that axis-aligned rotations sample exact cell centers.
pub fn heading_basis(heading: f64) -> (f64, f64) {
    fn snap(v: f64) -> f64 {
        if v.abs() < 1e-12 {
            0.0
        } else if (v.abs() - 1.0).abs() < 1e-12 {
            v.signum()
        } else {
            v
        }
    }
    (snap(heading.cos()), snap(heading.sin()))
}

/// Samples a [`PATCH_SIDE`]-square patch around `(x, y)` on a grid rotated by
/// `heading`, then subtracts the height of `(x, y)`.
pub fn extract_patch(
    map: &ElevationMap,
    x: usize,
    y: usize,
    heading: f64,
) -> Result<HeightPatch, TerrainError> {
    if x >= map.width || y >= map.height || !map.footprint_fits(x, y) {
        return Err(TerrainError::OutOfBounds { x, y });
    }
    let (c, s) = heading_basis(heading);
    let (cx, cy) = (x as f64, y as f64);
    let mut values = Vec::with_capacity(PATCH_SIDE * PATCH_SIDE);
    for row in 0..PATCH_SIDE {
        let left = row as f64 - PATCH_CENTER as f64;
        for col in 0..PATCH_SIDE {
            let along = col as f64 - PATCH_CENTER as f64;
            let fx = cx + along * c - left * s;
            let fy = cy + along * s + left * c;
            let h = map
                .sample(fx, fy)
                .ok_or(TerrainError::OutOfBounds { x, y })?;
            values.push(h);
        }
    }
    Ok(HeightPatch::from_values(map.resolution, heading, values))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainFamily {
    Flat,
    Steps,
    Gaps,
    Bridge,
    Valley,
    Mixed,
}

impl TerrainFamily {
    pub const ALL: [TerrainFamily; 6] = [
        TerrainFamily::Flat,
        TerrainFamily::Steps,
        TerrainFamily::Gaps,
        TerrainFamily::Bridge,
        TerrainFamily::Valley,
        TerrainFamily::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TerrainFamily::Flat => "flat",
            TerrainFamily::Steps => "steps",
            TerrainFamily::Gaps => "gaps",
            TerrainFamily::Bridge => "bridge",
            TerrainFamily::Valley => "valley",
            TerrainFamily::Mixed => "mixed",
        }
    }
}

impl fmt::Display for TerrainFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TerrainFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TerrainFamily::ALL
            .into_iter()
            .find(|f| f.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown terrain family `{s}` (expected one of flat, steps, gaps, bridge, valley, mixed)"))
    }
}

/// Family-specific geometry. Lengths in meters, angles in degrees.
///
/// Features occupy the span between two flat `buffer` strips along x and
/// extend across the whole map in y (except the bridge deck).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainParams {
    /// Rise of each step.
    pub step_height: f64,
    /// Run of each step.
    pub tread: f64,
    /// Steps up before descending again; 0 climbs for the whole feature span.
    pub step_count: usize,
    /// Optional lanes around the center row with their own step heights.
    /// `tier_half_widths[i]` bounds lane `i` (meters from the center row),
    /// cells outside the last lane stay flat. Empty means uniform steps.
    pub tier_step_heights: Vec<f64>,
    pub tier_half_widths: Vec<f64>,
    pub gap_width: f64,
    pub platform_length: f64,
    pub gap_depth: f64,
    pub bridge_width: f64,
    pub pit_depth: f64,
    pub valley_incline_deg: f64,
    /// Distance over which the valley cross-section deepens from flat.
    pub valley_ramp: f64,
    /// Flat strip at both ends of the feature span.
    pub buffer: f64,
    /// Uniform height noise amplitude (± meters).
    pub jitter: f64,
}

impl Default for TerrainParams {
    fn default() -> Self {
        Self {
            step_height: 0.10,
            tread: 0.40,
            step_count: 0,
            tier_step_heights: Vec::new(),
            tier_half_widths: Vec::new(),
            gap_width: 0.15,
            platform_length: 0.30,
            gap_depth: 0.50,
            bridge_width: 0.35,
            pit_depth: 1.0,
            valley_incline_deg: 50.0,
            valley_ramp: 0.5,
            buffer: 0.0,
            jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainSpec {
    pub family: TerrainFamily,
    /// (length along x, width along y) in meters.
    pub extent: (f64, f64),
    #[serde(default)]
    pub params: TerrainParams,
    #[serde(default)]
    pub seed: u64,
}

impl TerrainSpec {
    pub fn new(family: TerrainFamily, extent: (f64, f64)) -> Self {
        Self {
            family,
            extent,
            params: TerrainParams::default(),
            seed: 0,
        }
    }

    pub fn with_params(mut self, params: TerrainParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), TerrainError> {
        let (w, h) = self.extent;
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return Err(TerrainError::BadExtent(self.extent));
        }
        let p = &self.params;
        let bad = |name: &'static str, reason: String| Err(TerrainError::BadParam { name, reason });
        let in_range = |v: f64, lo: f64, hi: f64| v.is_finite() && v >= lo - 1e-12 && v <= hi + 1e-12;
        if !in_range(p.step_height, 0.05, 0.15) {
            return bad("step_height", format!("{} outside [0.05, 0.15] m", p.step_height));
        }
        if !in_range(p.tread, 0.1, 2.0) {
            return bad("tread", format!("{} outside [0.1, 2.0] m", p.tread));
        }
        if p.tier_step_heights.len() != p.tier_half_widths.len() {
            return bad(
                "tier_half_widths",
                format!(
                    "{} widths for {} tier heights",
                    p.tier_half_widths.len(),
                    p.tier_step_heights.len()
                ),
            );
        }
        for &t in &p.tier_step_heights {
            if !in_range(t, 0.05, 0.15) {
                return bad("tier_step_heights", format!("{t} outside [0.05, 0.15] m"));
            }
        }
        if p.tier_half_widths.windows(2).any(|w| w[1] <= w[0])
            || p.tier_half_widths.iter().any(|w| !(w.is_finite() && *w > 0.0))
        {
            return bad("tier_half_widths", "must be positive and strictly increasing".into());
        }
        if !in_range(p.gap_width, 0.05, 1.0) {
            return bad("gap_width", format!("{} outside [0.05, 1.0] m", p.gap_width));
        }
        if !in_range(p.platform_length, 0.1, 2.0) {
            return bad("platform_length", format!("{} outside [0.1, 2.0] m", p.platform_length));
        }
        if !in_range(p.gap_depth, 0.31, 3.0) {
            return bad("gap_depth", format!("{} outside [0.31, 3.0] m", p.gap_depth));
        }
        if !in_range(p.pit_depth, 0.31, 3.0) {
            return bad("pit_depth", format!("{} outside [0.31, 3.0] m", p.pit_depth));
        }
        if !in_range(p.bridge_width, 0.15, 1.0) {
            return bad("bridge_width", format!("{} outside [0.15, 1.0] m", p.bridge_width));
        }
        if !in_range(p.valley_incline_deg, 10.0, 70.0) {
            return bad(
                "valley_incline_deg",
                format!("{} outside [10, 70] degrees", p.valley_incline_deg),
            );
        }
        if !in_range(p.valley_ramp, 0.0, 5.0) {
            return bad("valley_ramp", format!("{} outside [0, 5] m", p.valley_ramp));
        }
        if !in_range(p.buffer, 0.0, 1e6) {
            return bad("buffer", format!("{} must be non-negative", p.buffer));
        }
        if !in_range(p.jitter, 0.0, 0.01) {
            return bad("jitter", format!("{} outside [0, 0.01] m", p.jitter));
        }
        Ok(())
    }
}

fn cells(meters: f64, resolution: f64) -> usize {
    (meters / resolution).round() as usize
}

/// Geometry resolved to integer cell counts.
#[derive(Clone)]
struct Layout {
    res: f64,
    buffer: usize,
    step_height: f64,
    tread: usize,
    step_count: usize,
    tiers: Vec<(f64, f64)>,
    gap: usize,
    platform: usize,
    gap_depth: f64,
    bridge_half: usize,
    pit_depth: f64,
    valley_slope: f64,
    valley_ramp: usize,
}

impl Layout {
    fn new(p: &TerrainParams, res: f64) -> Self {
        Self {
            res,
            buffer: cells(p.buffer, res),
            step_height: p.step_height,
            tread: cells(p.tread, res).max(1),
            step_count: p.step_count,
            tiers: p
                .tier_half_widths
                .iter()
                .copied()
                .zip(p.tier_step_heights.iter().copied())
                .collect(),
            gap: cells(p.gap_width, res).max(1),
            platform: cells(p.platform_length, res).max(1),
            gap_depth: p.gap_depth,
            bridge_half: cells(p.bridge_width, res).max(1).saturating_sub(1) / 2,
            pit_depth: p.pit_depth,
            valley_slope: p.valley_incline_deg.to_radians().tan(),
            valley_ramp: cells(p.valley_ramp, res),
        }
    }

    /// Minimum feature span (cells along x) for one period of `family`.
    fn period(&self, family: TerrainFamily) -> usize {
        match family {
            TerrainFamily::Flat => 1,
            TerrainFamily::Steps => self.tread * 2,
            TerrainFamily::Gaps => self.platform + self.gap + self.platform,
            TerrainFamily::Bridge => 1,
            TerrainFamily::Valley => 2 * self.valley_ramp + 1,
            TerrainFamily::Mixed => 0,
        }
    }

    /// Height of column `x` (local to a section `len` cells long) at row `y`.
    fn height(&self, family: TerrainFamily, x: usize, len: usize, y: usize, rows: usize) -> f64 {
        let start = self.buffer;
        let end = len.saturating_sub(self.buffer);
        let center = rows / 2;
        let dy = y.abs_diff(center);
        if family == TerrainFamily::Flat {
            return 0.0;
        }
        if x < start || x >= end {
            // Monotone staircases keep their final level past the span.
            if family == TerrainFamily::Steps && self.step_count == 0 && x >= end && end > start {
                return self.step_level(end - 1 - start) as f64 * self.step_rise(dy);
            }
            return 0.0;
        }
        let u = x - start;
        let span = end - start;
        match family {
            TerrainFamily::Steps => self.step_level(u) as f64 * self.step_rise(dy),
            TerrainFamily::Gaps => {
                // platform, gap, platform, ..., always ending on a full platform
                let period = self.platform + self.gap;
                let count = (span - self.platform) / period;
                if u < count * period && u % period >= self.platform {
                    -self.gap_depth
                } else {
                    0.0
                }
            }
            TerrainFamily::Bridge => {
                if dy <= self.bridge_half {
                    0.0
                } else {
                    -self.pit_depth
                }
            }
            TerrainFamily::Valley => {
                let edge = u.min(span - 1 - u) as f64;
                let ramp = if self.valley_ramp == 0 {
                    1.0
                } else {
                    (edge / self.valley_ramp as f64).min(1.0)
                };
                dy as f64 * self.res * self.valley_slope * ramp
            }
            TerrainFamily::Flat | TerrainFamily::Mixed => 0.0,
        }
    }

    fn step_level(&self, u: usize) -> usize {
        let band = u / self.tread;
        if self.step_count == 0 {
            band
        } else if band <= self.step_count {
            band
        } else {
            (2 * self.step_count).saturating_sub(band)
        }
    }

    fn step_rise(&self, dy: usize) -> f64 {
        if self.tiers.is_empty() {
            return self.step_height;
        }
        let d = dy as f64 * self.res;
        self.tiers
            .iter()
            .find(|(half, _)| d <= *half + 1e-9)
            .map(|&(_, h)| h)
            .unwrap_or(0.0)
    }
}

/// Mixed maps chain these sections along x.
pub const MIXED_SECTIONS: [TerrainFamily; 4] = [
    TerrainFamily::Steps,
    TerrainFamily::Gaps,
    TerrainFamily::Bridge,
    TerrainFamily::Valley,
];

/// Generates a map at [`DEFAULT_RESOLUTION`]. Deterministic in `spec`.
pub fn generate(spec: &TerrainSpec) -> Result<ElevationMap, TerrainError> {
    spec.validate()?;
    let res = DEFAULT_RESOLUTION;
    let width = cells(spec.extent.0, res).max(1);
    let height = cells(spec.extent.1, res).max(1);
    let layout = Layout::new(&spec.params, res);

    let check_span = |family: TerrainFamily, len: usize| -> Result<(), TerrainError> {
        if family == TerrainFamily::Flat {
            return Ok(());
        }
        let span = len.saturating_sub(2 * layout.buffer);
        let needed = layout.period(family);
        if span < needed {
            return Err(TerrainError::ExtentTooSmall {
                family,
                needed_m: (needed + 2 * layout.buffer) as f64 * res,
                available_m: len as f64 * res,
            });
        }
        Ok(())
    };

    let mut data = Vec::with_capacity(width * height);
    match spec.family {
        TerrainFamily::Mixed => {
            let section = width / MIXED_SECTIONS.len();
            for fam in MIXED_SECTIONS {
                check_span(fam, section).map_err(|_| TerrainError::ExtentTooSmall {
                    family: TerrainFamily::Mixed,
                    needed_m: (layout.period(fam) + 2 * layout.buffer) as f64 * res * 4.0,
                    available_m: width as f64 * res,
                })?;
            }
            // staircases climb and descend so every section meets the next at ground level
            let mut stairs = layout.clone();
            if stairs.step_count == 0 {
                let bands = section.saturating_sub(2 * layout.buffer) / layout.tread;
                stairs.step_count = (bands.saturating_sub(1) / 2).max(1);
            }
            for y in 0..height {
                for x in 0..width {
                    let idx = (x / section.max(1)).min(MIXED_SECTIONS.len() - 1);
                    let local = x - idx * section;
                    let len = if idx == MIXED_SECTIONS.len() - 1 {
                        width - idx * section
                    } else {
                        section
                    };
                    let fam = MIXED_SECTIONS[idx];
                    let l = if fam == TerrainFamily::Steps { &stairs } else { &layout };
                    data.push(l.height(fam, local, len, y, height));
                }
            }
        }
        family => {
            check_span(family, width)?;
            for y in 0..height {
                for x in 0..width {
                    data.push(layout.height(family, x, width, y, height));
                }
            }
        }
    }

    let jitter = spec.params.jitter;
    if jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for h in &mut data {
            *h += rng.random_range(-jitter..=jitter);
        }
    }
    ElevationMap::new(width, height, res, (0.0, 0.0), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn flat_two_meters_is_forty_cells_of_zero() {
        let map = generate(&TerrainSpec::new(TerrainFamily::Flat, (2.0, 2.0))).unwrap();
        assert_eq!((map.width(), map.height()), (40, 40));
        assert_eq!(map.resolution(), 0.05);
        assert!(map.data().iter().all(|&h| h == 0.0));
    }

    #[test]
    fn steps_form_eight_cell_bands() {
        let spec = TerrainSpec::new(TerrainFamily::Steps, (4.0, 1.0)).with_params(TerrainParams {
            step_height: 0.10,
            tread: 0.4,
            ..Default::default()
        });
        let map = generate(&spec).unwrap();
        for x in 0..map.width() {
            let expected = (x / 8) as f64 * 0.10;
            for y in 0..map.height() {
                assert_eq!(map.get(x, y), expected, "cell ({x}, {y})");
            }
        }
        // band widths measured from the map itself
        let mut widths = vec![];
        let mut run = 1;
        for x in 1..map.width() {
            if map.get(x, 0) == map.get(x - 1, 0) {
                run += 1;
            } else {
                widths.push(run);
                run = 1;
            }
        }
        widths.push(run);
        assert!(widths.iter().all(|&w| w == 8), "{widths:?}");
    }

    #[test]
    fn pyramid_steps_descend_after_count() {
        let spec = TerrainSpec::new(TerrainFamily::Steps, (3.0, 1.0)).with_params(TerrainParams {
            step_height: 0.1,
            tread: 0.2,
            step_count: 2,
            buffer: 0.4,
            ..Default::default()
        });
        let map = generate(&spec).unwrap();
        let levels: Vec<f64> = (0..map.width()).step_by(4).map(|x| map.get(x, 0)).collect();
        let expected = [0.0, 0.0, 0.0, 0.1, 0.2, 0.1, 0.0, 0.0];
        for (got, want) in levels.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{levels:?}");
        }
        assert_eq!(*levels.last().unwrap(), 0.0);
    }

    #[test]
    fn mixed_sections_meet_at_ground_level() {
        let spec = TerrainSpec::new(TerrainFamily::Mixed, (16.0, 2.5)).with_params(TerrainParams {
            buffer: 1.0,
            ..Default::default()
        });
        let map = generate(&spec).unwrap();
        let section = map.width() / 4;
        let y = map.height() / 2;
        for s in 0..4 {
            assert_eq!(map.get(s * section, y), 0.0);
            assert_eq!(map.get(s * section + section - 1, y), 0.0);
        }
        let peak = (0..section).map(|x| map.get(x, y)).fold(0.0, f64::max);
        assert!((peak - 0.2).abs() < 1e-12, "{peak}");
    }

    #[test]
    fn mixed_is_deterministic_under_seed() {
        let spec = TerrainSpec::new(TerrainFamily::Mixed, (12.0, 2.5))
            .with_params(TerrainParams {
                jitter: 0.005,
                buffer: 0.8,
                ..Default::default()
            })
            .with_seed(7);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = generate(&spec.clone().with_seed(8)).unwrap();
        assert_eq!((c.width(), c.height(), c.resolution()), (a.width(), a.height(), a.resolution()));
        assert_ne!(a, c);
    }

    #[test]
    fn gaps_have_configured_width_and_depth() {
        let spec = TerrainSpec::new(TerrainFamily::Gaps, (3.0, 1.0)).with_params(TerrainParams {
            buffer: 0.5,
            ..Default::default()
        });
        let map = generate(&spec).unwrap();
        let row: Vec<f64> = (0..map.width()).map(|x| map.get(x, 5)).collect();
        let mut runs = vec![];
        let mut x = 0;
        while x < row.len() {
            if row[x] < -0.3 {
                let s = x;
                while x < row.len() && row[x] < -0.3 {
                    x += 1;
                }
                runs.push((s, x - s));
            } else {
                x += 1;
            }
        }
        assert!(!runs.is_empty());
        assert!(runs.iter().all(|&(_, w)| w == 3), "{runs:?}");
        assert!(runs[0].0 >= 10);
        let last = runs.last().unwrap();
        assert!(last.0 + last.1 + 6 <= map.width() - 10, "span must end on a platform");
    }

    #[test]
    fn bridge_deck_is_seven_cells() {
        let spec = TerrainSpec::new(TerrainFamily::Bridge, (3.0, 2.0)).with_params(TerrainParams {
            buffer: 0.5,
            ..Default::default()
        });
        let map = generate(&spec).unwrap();
        let deck = (0..map.height()).filter(|&y| map.get(30, y) == 0.0).count();
        assert_eq!(deck, 7);
        assert_eq!(map.get(30, 0), -1.0);
        assert_eq!(map.get(5, 0), 0.0);
    }

    #[test]
    fn valley_walls_reach_configured_incline() {
        let spec = TerrainSpec::new(TerrainFamily::Valley, (6.0, 2.0)).with_params(TerrainParams {
            buffer: 0.5,
            ..Default::default()
        });
        let map = generate(&spec).unwrap();
        let x = map.width() / 2;
        let c = map.height() / 2;
        let slope = (map.get(x, c + 1) - map.get(x, c)) / map.resolution();
        assert!((slope.atan().to_degrees() - 50.0).abs() < 1e-9);
        assert_eq!(map.get(x, c), 0.0);
        // ramps in from flat
        assert_eq!(map.get(10, 0), 0.0);
    }

    #[test]
    fn rejects_extent_shorter_than_one_period() {
        let spec = TerrainSpec::new(TerrainFamily::Gaps, (0.3, 1.0));
        assert!(matches!(generate(&spec), Err(TerrainError::ExtentTooSmall { .. })));
        let spec = TerrainSpec::new(TerrainFamily::Steps, (1.0, 1.0)).with_params(TerrainParams {
            buffer: 0.4,
            ..Default::default()
        });
        assert!(matches!(generate(&spec), Err(TerrainError::ExtentTooSmall { .. })));
    }

    #[test]
    fn rejects_illegal_params() {
        let spec = TerrainSpec::new(TerrainFamily::Steps, (2.0, 2.0)).with_params(TerrainParams {
            step_height: 0.3,
            ..Default::default()
        });
        assert!(matches!(generate(&spec), Err(TerrainError::BadParam { name: "step_height", .. })));
        assert!(matches!(
            generate(&TerrainSpec::new(TerrainFamily::Flat, (0.0, 1.0))),
            Err(TerrainError::BadExtent(_))
        ));
    }

    #[test]
    fn map_construction_validates() {
        assert!(matches!(
            ElevationMap::new(2, 2, 0.05, (0.0, 0.0), vec![0.0; 3]),
            Err(TerrainError::DataLength { expected: 4, actual: 3 })
        ));
        assert!(matches!(
            ElevationMap::new(2, 1, 0.05, (0.0, 0.0), vec![0.0, f64::NAN]),
            Err(TerrainError::NonFinite { x: 1, y: 0 })
        ));
        assert!(ElevationMap::new(0, 2, 0.05, (0.0, 0.0), vec![]).is_err());
        assert!(ElevationMap::new(1, 1, 0.0, (0.0, 0.0), vec![0.0]).is_err());
    }

    fn bump_map() -> ElevationMap {
        // radially symmetric around (20, 20)
        ElevationMap::from_fn(41, 41, 0.05, |x, y| {
            let dx = x as f64 - 20.0;
            let dy = y as f64 - 20.0;
            (-(dx * dx + dy * dy) / 18.0).exp() * 0.3
        })
        .unwrap()
    }

    #[test]
    fn flat_patch_is_zero() {
        let map = ElevationMap::flat(40, 40, 0.05).unwrap();
        let p = extract_patch(&map, 20, 20, 0.0).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn patch_center_is_zero_and_heading_aligns_with_travel() {
        // ramp rising along +y: heading pi/2 must see it rise "ahead"
        let map = ElevationMap::from_fn(40, 40, 0.05, |_, y| y as f64 * 0.01).unwrap();
        let p = extract_patch(&map, 20, 20, PI / 2.0).unwrap();
        assert_eq!(p.at(0, 0), 0.0);
        assert!((p.at(3, 0) - 0.03).abs() < 1e-12);
        assert!((p.at(0, 3)).abs() < 1e-12);
        // travel along +x: the same ramp rises to the left
        let q = extract_patch(&map, 20, 20, 0.0).unwrap();
        assert!((q.at(0, 2) - 0.02).abs() < 1e-12);
    }

    #[test]
    fn half_turn_reverses_both_axes() {
        // cell-aligned features: integer-valued checkerboard of heights
        let map = ElevationMap::from_fn(40, 40, 0.05, |x, y| ((x * 7 + y * 13) % 5) as f64 * 0.03).unwrap();
        let a = extract_patch(&map, 20, 19, 0.0).unwrap();
        let b = extract_patch(&map, 20, 19, PI).unwrap();
        for along in -7..=7 {
            for left in -7..=7 {
                assert!(
                    (b.at(along, left) - a.at(-along, -left)).abs() < 1e-9,
                    "mismatch at ({along}, {left})"
                );
            }
        }
    }

    #[test]
    fn symmetric_bump_is_identical_at_quarter_turns() {
        let map = bump_map();
        let base = extract_patch(&map, 20, 20, 0.0).unwrap();
        for k in 1..4 {
            let p = extract_patch(&map, 20, 20, k as f64 * PI / 2.0).unwrap();
            for (u, v) in base.values().iter().zip(p.values()) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rotation_matches_prerotated_map() {
        let base = ElevationMap::from_fn(40, 40, 0.05, |x, y| ((x * 3 + y * y) % 7) as f64 * 0.02).unwrap();
        let (cx, cy) = (20usize, 20usize);
        for k in 1..4 {
            let theta = k as f64 * PI / 2.0;
            // rotated map: M'(p) = M(c + R(theta)(p - c))
            let (c, s) = heading_basis(theta);
            let rotated = ElevationMap::from_fn(40, 40, 0.05, |x, y| {
                let dx = x as f64 - cx as f64;
                let dy = y as f64 - cy as f64;
                let sx = cx as f64 + dx * c - dy * s;
                let sy = cy as f64 + dx * s + dy * c;
                base.sample(sx, sy).unwrap_or(0.0)
            })
            .unwrap();
            let a = extract_patch(&base, cx, cy, theta).unwrap();
            let b = extract_patch(&rotated, cx, cy, 0.0).unwrap();
            for (u, v) in a.values().iter().zip(b.values()) {
                assert!((u - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn out_of_bounds_footprint_is_an_error() {
        let map = ElevationMap::flat(40, 40, 0.05).unwrap();
        assert!(matches!(
            extract_patch(&map, 11, 20, 0.0),
            Err(TerrainError::OutOfBounds { x: 11, y: 20 })
        ));
        assert!(extract_patch(&map, 12, 12, 0.3).is_ok());
        assert!(extract_patch(&map, 27, 27, 2.0).is_ok());
        assert!(extract_patch(&map, 28, 27, 2.0).is_err());
        assert!(extract_patch(&map, 100, 27, 0.0).is_err());
    }
}
