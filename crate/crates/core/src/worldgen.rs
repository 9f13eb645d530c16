//! World representation: classified ground strips, the seeded synthetic
//! generator, and the `DTG1` dataset file format.
//!
//! A strip is an `H x T` grid of reward classes. Each column is one timestep
//! of along-track motion; the center row is nadir. Columns are stored
//! contiguously (column-major), which is also the on-disk payload order.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seeded_rng;

/// Reward tier of a single ground pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[repr(u8)]
pub enum RewardClass {
    #[default]
    Low = 0,
    Mid = 1,
    High = 2,
}

impl RewardClass {
    pub const ALL: [RewardClass; 3] = [RewardClass::Low, RewardClass::Mid, RewardClass::High];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(RewardClass::Low),
            1 => Some(RewardClass::Mid),
            2 => Some(RewardClass::High),
            _ => None,
        }
    }
}

/// Which real-world labels the three tiers stand for. Mechanics are identical.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Scenario {
    #[default]
    CloudAvoidance,
    StormHunting,
}

impl Scenario {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cloud_avoidance" => Some(Scenario::CloudAvoidance),
            "storm_hunting" => Some(Scenario::StormHunting),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::CloudAvoidance => "cloud_avoidance",
            Scenario::StormHunting => "storm_hunting",
        }
    }

    pub fn class_label(self, class: RewardClass) -> &'static str {
        match (self, class) {
            (Scenario::CloudAvoidance, RewardClass::Low) => "Cloud",
            (Scenario::CloudAvoidance, RewardClass::Mid) => "Mid-Cloud",
            (Scenario::CloudAvoidance, RewardClass::High) => "Clear",
            (Scenario::StormHunting, RewardClass::Low) => "No Storm",
            (Scenario::StormHunting, RewardClass::Mid) => "Rainy Anvil",
            (Scenario::StormHunting, RewardClass::High) => "Convective Core",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Scientific reward per tier. Not sampling always earns zero.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardModel {
    pub scenario: Scenario,
    pub low: f64,
    pub mid: f64,
    pub high: f64,
}

impl Default for RewardModel {
    fn default() -> Self {
        RewardModel {
            scenario: Scenario::CloudAvoidance,
            low: 1.0,
            mid: 10.0,
            high: 100.0,
        }
    }
}

impl RewardModel {
    pub const OFF: f64 = 0.0;

    pub fn new(scenario: Scenario, low: f64, mid: f64, high: f64) -> Result<Self> {
        let m = RewardModel {
            scenario,
            low,
            mid,
            high,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.low.is_finite()
            && self.high.is_finite()
            && Self::OFF < self.low
            && self.low < self.mid
            && self.mid < self.high;
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!(
                "rewards must satisfy 0 < low < mid < high, got {}/{}/{}",
                self.low, self.mid, self.high
            )))
        }
    }

    #[inline]
    pub fn reward(&self, class: RewardClass) -> f64 {
        match class {
            RewardClass::Low => self.low,
            RewardClass::Mid => self.mid,
            RewardClass::High => self.high,
        }
    }
}

/// Classified ground strip, one column per timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvStrip {
    height: usize,
    length: usize,
    pixel_size_km: f32,
    cells: Vec<RewardClass>,
}

impl EnvStrip {
    /// Builds a strip from column-major cells (`cells[col * height + row]`).
    pub fn from_cells(
        height: usize,
        length: usize,
        pixel_size_km: f32,
        cells: Vec<RewardClass>,
    ) -> Result<Self> {
        if height == 0 || length == 0 {
            return Err(Error::param("strip dimensions must be non-zero"));
        }
        if height % 2 == 0 {
            return Err(Error::param(format!("strip height must be odd, got {height}")));
        }
        let n = height
            .checked_mul(length)
            .ok_or_else(|| Error::param("strip dimensions overflow"))?;
        if cells.len() != n {
            return Err(Error::param(format!(
                "expected {n} cells for {height}x{length}, got {}",
                cells.len()
            )));
        }
        Ok(EnvStrip {
            height,
            length,
            pixel_size_km,
            cells,
        })
    }

    pub fn filled(height: usize, length: usize, class: RewardClass) -> Result<Self> {
        let n = height.checked_mul(length).unwrap_or(0);
        Self::from_cells(height, length, 7.0, vec![class; n])
    }

    /// Builds a strip from row-major text rows, `L`/`M`/`H` per cell.
    /// Handy for small hand-made worlds.
    pub fn from_rows(rows: &[&str]) -> Result<Self> {
        let height = rows.len();
        let length = rows.first().map_or(0, |r| r.len());
        let mut cells = vec![RewardClass::Low; height * length];
        for (r, line) in rows.iter().enumerate() {
            if line.len() != length {
                return Err(Error::param("ragged rows"));
            }
            for (c, ch) in line.chars().enumerate() {
                cells[c * height + r] = match ch {
                    'L' | '.' => RewardClass::Low,
                    'M' => RewardClass::Mid,
                    'H' => RewardClass::High,
                    other => return Err(Error::param(format!("bad cell char {other:?}"))),
                };
            }
        }
        Self::from_cells(height, length, 7.0, cells)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of timesteps `T`.
    #[inline]
    pub fn length(&self) -> usize {
        self.length
    }

    #[inline]
    pub fn pixel_size_km(&self) -> f32 {
        self.pixel_size_km
    }

    #[inline]
    pub fn center_row(&self) -> usize {
        self.height / 2
    }

    /// Cell at `row`, zero-based column `col`.
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> RewardClass {
        self.cells[col * self.height + row]
    }

    #[inline]
    pub fn column(&self, col: usize) -> &[RewardClass] {
        &self.cells[col * self.height..(col + 1) * self.height]
    }

    pub fn set(&mut self, row: usize, col: usize, class: RewardClass) {
        self.cells[col * self.height + row] = class;
    }

    pub fn cells(&self) -> &[RewardClass] {
        &self.cells
    }

    /// Sub-strip of columns `start..end` (zero-based).
    pub fn slice_columns(&self, start: usize, end: usize) -> Result<EnvStrip> {
        if start >= end || end > self.length {
            return Err(Error::Bounds(format!(
                "column range {start}..{end} outside 0..{}",
                self.length
            )));
        }
        let cells = self.cells[start * self.height..end * self.height].to_vec();
        EnvStrip::from_cells(self.height, end - start, self.pixel_size_km, cells)
    }

    /// Strips laid end to end along track. Heights and pixel sizes must match.
    pub fn concat(strips: &[EnvStrip]) -> Result<EnvStrip> {
        let first = strips
            .first()
            .ok_or_else(|| Error::param("nothing to concatenate"))?;
        if strips
            .iter()
            .any(|s| s.height != first.height || s.pixel_size_km != first.pixel_size_km)
        {
            return Err(Error::param("strips differ in height or pixel size"));
        }
        let cells = strips.iter().flat_map(|s| s.cells.iter().copied()).collect();
        let length = strips.iter().map(|s| s.length).sum();
        EnvStrip::from_cells(first.height, length, first.pixel_size_km, cells)
    }

    /// Truncated SHA-256 over the encoded strip.
    pub fn digest(&self) -> [u8; 16] {
        let full = Sha256::digest(encode_strip(self));
        let mut out = [0u8; 16];
        out.copy_from_slice(&full[..16]);
        out
    }

    /// [`EnvStrip::digest`] as lowercase hex.
    pub fn fingerprint(&self) -> String {
        self.digest().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Synthetic generator parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GenParams {
    pub height: usize,
    pub length: usize,
    /// Target cell fraction per class, indexed by `RewardClass::index`.
    pub prevalence: [f64; 3],
    /// Mean blob radius in pixels per class. The Low entry is unused (background).
    pub blob_scale: [f64; 3],
    pub pixel_size_km: f32,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            height: 31,
            length: 10_000,
            prevalence: [0.67, 0.25, 0.08],
            blob_scale: [0.0, 6.0, 6.0],
            pixel_size_km: 7.0,
            seed: 0,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.length == 0 {
            return Err(Error::param("grid dimensions must be non-zero"));
        }
        if self.height % 2 == 0 {
            return Err(Error::param("height must be odd so a nadir row exists"));
        }
        if self.height.checked_mul(self.length).is_none() {
            return Err(Error::param("grid dimensions overflow"));
        }
        if self.prevalence.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::param("prevalence entries must lie in [0, 1]"));
        }
        let sum: f64 = self.prevalence.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("prevalence must sum to 1, got {sum}")));
        }
        if self.blob_scale[1..].iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::param("blob scales must be positive"));
        }
        Ok(())
    }
}

/// Generates a spatially correlated strip by growing seeded blobs of Mid and
/// High over a Low background. Class counts hit the targets exactly (up to
/// rounding of `prevalence * H * T`).
pub fn generate_synthetic(params: &GenParams) -> Result<EnvStrip> {
    params.validate()?;
    let (h, t) = (params.height, params.length);
    let n = h * t;
    let mut rng = seeded_rng(params.seed);
    let mut cells = vec![RewardClass::Low; n];
    let mut low_left = n;

    // Rarest class first so it is never crowded out.
    for class in [RewardClass::High, RewardClass::Mid] {
        let target = (params.prevalence[class.index()] * n as f64).round() as usize;
        let target = target.min(low_left);
        let scale = params.blob_scale[class.index()];
        let mut painted = 0usize;
        let mut blob: Vec<usize> = Vec::new();
        while painted < target {
            let Some(start) = random_low_cell(&cells, &mut rng) else {
                break;
            };
            let radius = scale * rng.random_range(0.5..1.5);
            let area = (std::f64::consts::PI * radius * radius).round().max(1.0) as usize;
            let size = area.min(target - painted);

            blob.clear();
            blob.push(start);
            cells[start] = class;
            let mut grown = 1;
            let mut attempts = 0;
            while grown < size && attempts < 40 * size {
                attempts += 1;
                let from = blob[rng.random_range(0..blob.len())];
                let (col, row) = (from / h, from % h);
                let next = match rng.random_range(0..4u8) {
                    0 if row > 0 => from - 1,
                    1 if row + 1 < h => from + 1,
                    2 if col > 0 => from - h,
                    3 if col + 1 < t => from + h,
                    _ => continue,
                };
                if cells[next] == RewardClass::Low {
                    cells[next] = class;
                    blob.push(next);
                    grown += 1;
                }
            }
            painted += grown;
            low_left -= grown;
        }
    }
    EnvStrip::from_cells(h, t, params.pixel_size_km, cells)
}

fn random_low_cell(cells: &[RewardClass], rng: &mut impl Rng) -> Option<usize> {
    for _ in 0..64 {
        let i = rng.random_range(0..cells.len());
        if cells[i] == RewardClass::Low {
            return Some(i);
        }
    }
    let offset = rng.random_range(0..cells.len());
    (0..cells.len())
        .map(|k| (offset + k) % cells.len())
        .find(|&i| cells[i] == RewardClass::Low)
}

/// Fraction of cells in each class, indexed by `RewardClass::index`.
pub fn class_fractions(strip: &EnvStrip) -> [f64; 3] {
    let mut counts = [0usize; 3];
    for c in strip.cells() {
        counts[c.index()] += 1;
    }
    let n = strip.cells().len() as f64;
    counts.map(|k| k as f64 / n)
}

pub const DATASET_MAGIC: &[u8; 4] = b"DTG1";
const HEADER_LEN: usize = 16;
/// Upper bound on cells accepted from a file (4 GiB payload).
const MAX_CELLS: u64 = 1 << 32;

/// Serializes a strip to the `DTG1` layout.
pub fn encode_strip(strip: &EnvStrip) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + strip.cells.len());
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&(strip.height as u32).to_le_bytes());
    out.extend_from_slice(&(strip.length as u32).to_le_bytes());
    out.extend_from_slice(&strip.pixel_size_km.to_le_bytes());
    out.extend(strip.cells.iter().map(|c| *c as u8));
    out
}

pub fn decode_strip(bytes: &[u8]) -> Result<EnvStrip> {
    if bytes.len() < 4 || &bytes[..4] != DATASET_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"DTG1\""));
    }
    let read_u32 = |off: usize| -> Result<u32> {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::format(off as u64, "truncated header"))
    };
    let height = read_u32(4)?;
    let length = read_u32(8)?;
    let pixel_size_km = f32::from_bits(read_u32(12)?);
    if height == 0 || height % 2 == 0 {
        return Err(Error::format(4, format!("height must be odd and non-zero, got {height}")));
    }
    if length == 0 {
        return Err(Error::format(8, "length must be non-zero"));
    }
    let n = height as u64 * length as u64;
    if n > MAX_CELLS {
        return Err(Error::format(4, format!("dimension overflow: {height}x{length}")));
    }
    let n = n as usize;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < n {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: expected {n} cells, found {}", payload.len()),
        ));
    }
    if payload.len() > n {
        return Err(Error::format(
            (HEADER_LEN + n) as u64,
            "trailing bytes after payload",
        ));
    }
    let mut cells = Vec::with_capacity(n);
    for (i, &b) in payload.iter().enumerate() {
        let class = RewardClass::from_byte(b).ok_or_else(|| {
            Error::format((HEADER_LEN + i) as u64, format!("invalid class byte {b}"))
        })?;
        cells.push(class);
    }
    EnvStrip::from_cells(height as usize, length as usize, pixel_size_km, cells)
}

pub fn save_dataset(strip: &EnvStrip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_strip(strip)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<EnvStrip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Resolution {
            path: path.to_path_buf(),
        },
        _ => Error::io(path, e),
    })?;
    decode_strip(&bytes)
}

/// Sidecar `key=value` manifest written next to a dataset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn for_generated(scenario: Scenario, params: &GenParams) -> Self {
        let p = params.prevalence;
        let mut m = Manifest::default();
        m.push("scenario", scenario.as_str());
        m.push("seed", params.seed);
        m.push("prevalence", format!("{},{},{}", p[0], p[1], p[2]));
        m.push("height", params.height);
        m.push("length", params.length);
        m
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("manifest line {}: missing '='", i + 1)))?;
            m.push(k.trim(), v.trim());
        }
        Ok(m)
    }

    /// Manifest path for a data file: `<file>.manifest`.
    pub fn sidecar_path(data_path: &Path) -> PathBuf {
        let mut s = data_path.as_os_str().to_owned();
        s.push(".manifest");
        PathBuf::from(s)
    }

    pub fn save_beside(&self, data_path: &Path) -> Result<()> {
        let path = Self::sidecar_path(data_path);
        fs::write(&path, self.to_string()).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}
