//! Synthetic deflectometry patches.
//!
//! A clean patch is a crop of the fringe pattern `B + A sin(2πf·x/W + ψ)`,
//! constant down each column, plus Gaussian pixel noise. Surface defects are
//! modelled as a local phase perturbation `φ(r, c)` with compact support:
//! a crater shifts the phase by the bowl's slope along the fringe direction,
//! whose magnitude is a ring; dirt by a single bump.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{parse_phase, KeyValues};
use crate::error::{Error, Result};
use crate::features::{ClassLabel, Patch};
use crate::io::{write_patch, PatchFormat};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternSpec {
    pub offset: f64,
    pub amplitude: f64,
    /// Cycles across `pattern_width`.
    pub frequency: f64,
    pub phase: f64,
    /// Width in pixels of the full capture the patch is cut from.
    pub pattern_width: usize,
    pub noise_sigma: f64,
}

impl Default for PatternSpec {
    fn default() -> Self {
        PatternSpec {
            offset: 0.5,
            amplitude: 0.5,
            frequency: 8.0,
            phase: PI,
            pattern_width: 2456,
            noise_sigma: 0.005,
        }
    }
}

impl PatternSpec {
    fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0) || !self.offset.is_finite() || !self.amplitude.is_finite() {
            return Err(Error::Config("pattern amplitude must be positive and finite".into()));
        }
        if !(self.frequency > 0.0) || !self.frequency.is_finite() || !self.phase.is_finite() {
            return Err(Error::Config(
                "pattern frequency must be positive and phase finite".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config("noise sigma must be non-negative".into()));
        }
        Ok(())
    }

    /// Noise-free fringe phase at an absolute capture column.
    fn carrier(&self, column: f64) -> f64 {
        2.0 * PI * self.frequency * column / self.pattern_width as f64 + self.phase
    }

    /// Intensity window used when quantizing patches to 16 bits.
    pub fn intensity_range(&self) -> (f64, f64) {
        let pad = 4.0 * self.noise_sigma;
        (self.offset - self.amplitude - pad, self.offset + self.amplitude + pad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DefectKind {
    Crater,
    Dirt,
}

impl DefectKind {
    pub fn label(self) -> ClassLabel {
        match self {
            DefectKind::Crater => ClassLabel::Crater,
            DefectKind::Dirt => ClassLabel::Dirt,
        }
    }

    pub fn from_label(label: ClassLabel) -> Option<Self> {
        match label {
            ClassLabel::Crater => Some(DefectKind::Crater),
            ClassLabel::Dirt => Some(DefectKind::Dirt),
            ClassLabel::DefectFree => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefectSpec {
    pub kind: DefectKind,
    pub center_row: f64,
    pub center_col: f64,
    pub radius: f64,
    /// Peak phase distortion in radians.
    pub strength: f64,
}

/// `(1 − u²)²` on `[0, 1)`, zero beyond.
fn taper(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        let v = 1.0 - u * u;
        v * v
    }
}

fn crater_shape(u: f64) -> f64 {
    // Radial slope of a Gaussian bowl with width radius/2, in units of radius.
    let s = 2.0 * u;
    s * (0.5 - 0.5 * s * s).exp() * taper(u)
}

fn crater_peak() -> f64 {
    use std::sync::OnceLock;
    static PEAK: OnceLock<f64> = OnceLock::new();
    *PEAK.get_or_init(|| {
        (0..=100_000)
            .map(|i| crater_shape(i as f64 / 100_000.0))
            .fold(0.0, f64::max)
    })
}

fn dirt_shape(u: f64) -> f64 {
    let s = 2.0 * u;
    (-0.5 * s * s).exp() * taper(u)
}

impl DefectSpec {
    fn validate(&self, side: usize) -> Result<()> {
        let inside = |x: f64| x >= 0.0 && x <= (side - 1) as f64;
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::InvalidInput("defect radius must be positive".into()));
        }
        if !(self.strength >= 0.0) || !self.strength.is_finite() {
            return Err(Error::InvalidInput("defect strength must be non-negative".into()));
        }
        if !inside(self.center_row) || !inside(self.center_col) {
            return Err(Error::InvalidInput(format!(
                "defect center ({}, {}) lies outside a {side}×{side} patch",
                self.center_row, self.center_col
            )));
        }
        Ok(())
    }

    /// Phase perturbation at pixel `(row, col)`; exactly zero at distance
    /// `radius` and beyond.
    pub fn phase_shift(&self, row: usize, col: usize) -> f64 {
        let dr = row as f64 - self.center_row;
        let dc = col as f64 - self.center_col;
        let u = (dr * dr + dc * dc).sqrt() / self.radius;
        if u >= 1.0 || self.strength == 0.0 {
            return 0.0;
        }
        match self.kind {
            // Column component of the radial slope; zero at the center itself.
            DefectKind::Crater if u > 0.0 => {
                let rho = u * self.radius;
                self.strength * crater_shape(u) / crater_peak() * (dc / rho)
            }
            DefectKind::Crater => 0.0,
            DefectKind::Dirt => self.strength * dirt_shape(u),
        }
    }
}

/// Renders an `m × m` crop starting at capture column `origin_col`.
pub fn render_clean_patch(spec: &PatternSpec, m: usize, origin_col: usize, seed: u64) -> Result<Patch> {
    spec.validate()?;
    if m == 0 || origin_col + m > spec.pattern_width {
        return Err(Error::InvalidInput(format!(
            "patch columns {origin_col}..{} exceed the pattern width {}",
            origin_col + m,
            spec.pattern_width
        )));
    }
    let row: Vec<f64> = (0..m)
        .map(|c| spec.offset + spec.amplitude * spec.carrier((origin_col + c) as f64).sin())
        .collect();
    let mut pixels = Vec::with_capacity(m * m);
    for _ in 0..m {
        pixels.extend_from_slice(&row);
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in pixels.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *p += spec.noise_sigma * e;
        }
    }
    Ok(Patch::new(m, pixels)?
        .with_channel(spec.frequency, spec.phase)
        .with_label(Some(ClassLabel::DefectFree)))
}

/// Distorts a rendered patch by re-evaluating the fringe with the defect's
/// phase perturbation added. Pixels outside the defect support, and all
/// pixels when the strength is zero, are returned unchanged, noise included.
pub fn inject_defect(patch: &Patch, spec: &PatternSpec, origin_col: usize, defect: &DefectSpec) -> Result<Patch> {
    let side = patch.side();
    defect.validate(side)?;
    if origin_col + side > spec.pattern_width {
        return Err(Error::InvalidInput("patch exceeds the pattern width".into()));
    }
    let mut out = patch.clone().with_label(Some(defect.kind.label()));
    let pixels = out.pixels_mut();
    for r in 0..side {
        for c in 0..side {
            let phi = defect.phase_shift(r, c);
            if phi != 0.0 {
                let theta = spec.carrier((origin_col + c) as f64);
                pixels[r * side + c] += spec.amplitude * ((theta + phi).sin() - theta.sin());
            }
        }
    }
    Ok(out)
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConfig {
    pub counts: BTreeMap<ClassLabel, usize>,
    pub side: usize,
    pub pattern: PatternSpec,
    pub radius_range: (f64, f64),
    pub strength_range: (f64, f64),
    /// Defect centers fall within this fraction of the side around the middle.
    pub center_spread: f64,
    pub format: PatchFormat,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        // Class sizes proportional to 13827 : 372 : 4234 at 1000 patches.
        let counts = BTreeMap::from([
            (ClassLabel::DefectFree, 750),
            (ClassLabel::Crater, 20),
            (ClassLabel::Dirt, 230),
        ]);
        GenerationConfig {
            counts,
            side: 91,
            pattern: PatternSpec::default(),
            radius_range: (8.0, 14.0),
            strength_range: (1.0, 2.0),
            center_spread: 0.1,
            format: PatchFormat::Pgm,
        }
    }
}

impl GenerationConfig {
    /// Reads overrides from flat `key = value` pairs. Unknown keys are
    /// rejected.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut cfg = GenerationConfig::default();
        let mut noise_set = false;
        for (key, value) in kv.iter() {
            let num = || -> Result<f64> {
                value
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("{key}: expected a number, got '{value}'")))
            };
            let count = || -> Result<usize> {
                value
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("{key}: expected a count, got '{value}'")))
            };
            match key {
                "defect_free" | "crater" | "dirt" => {
                    cfg.counts.insert(key.parse()?, count()?);
                }
                "m" => cfg.side = count()?,
                "frequency" | "f" => cfg.pattern.frequency = num()?,
                "phase" | "psi" => cfg.pattern.phase = parse_phase(value)?,
                "pattern_width" => cfg.pattern.pattern_width = count()?,
                "offset" => cfg.pattern.offset = num()?,
                "amplitude" => cfg.pattern.amplitude = num()?,
                "noise_sigma" => {
                    cfg.pattern.noise_sigma = num()?;
                    noise_set = true;
                }
                "radius_min" => cfg.radius_range.0 = num()?,
                "radius_max" => cfg.radius_range.1 = num()?,
                "strength_min" => cfg.strength_range.0 = num()?,
                "strength_max" => cfg.strength_range.1 = num()?,
                "center_spread" => cfg.center_spread = num()?,
                "format" => cfg.format = value.parse()?,
                "seed" => {}
                other => return Err(Error::Config(format!("unknown generation key '{other}'"))),
            }
        }
        if !noise_set {
            cfg.pattern.noise_sigma = 0.01 * cfg.pattern.amplitude;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.pattern.validate()?;
        if self.side < 2 {
            return Err(Error::Config("patch side must be at least 2".into()));
        }
        if self.side > self.pattern.pattern_width {
            return Err(Error::Config(format!(
                "patch side {} exceeds pattern width {}",
                self.side, self.pattern.pattern_width
            )));
        }
        let (r0, r1) = self.radius_range;
        if !(r0 > 0.0 && r0 <= r1) {
            return Err(Error::Config("radius range must satisfy 0 < min ≤ max".into()));
        }
        let (s0, s1) = self.strength_range;
        if !(s0 > 0.0 && s0 <= s1) {
            return Err(Error::Config("strength range must satisfy 0 < min ≤ max".into()));
        }
        if !(0.0..=1.0).contains(&self.center_spread) {
            return Err(Error::Config("center_spread must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Resolved configuration as `key = value` lines.
    pub fn to_key_values(&self, seed: u64) -> String {
        let p = &self.pattern;
        let mut out = String::new();
        for (label, n) in &self.counts {
            out.push_str(&format!("{label} = {n}\n"));
        }
        out.push_str(&format!("m = {}\n", self.side));
        out.push_str(&format!("frequency = {}\n", p.frequency));
        out.push_str(&format!("phase = {}\n", p.phase));
        out.push_str(&format!("pattern_width = {}\n", p.pattern_width));
        out.push_str(&format!("offset = {}\n", p.offset));
        out.push_str(&format!("amplitude = {}\n", p.amplitude));
        out.push_str(&format!("noise_sigma = {}\n", p.noise_sigma));
        out.push_str(&format!("radius_min = {}\n", self.radius_range.0));
        out.push_str(&format!("radius_max = {}\n", self.radius_range.1));
        out.push_str(&format!("strength_min = {}\n", self.strength_range.0));
        out.push_str(&format!("strength_max = {}\n", self.strength_range.1));
        out.push_str(&format!("center_spread = {}\n", self.center_spread));
        out.push_str(&format!("format = {}\n", self.format));
        out.push_str(&format!("seed = {seed}\n"));
        out
    }
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub patch_id: String,
    pub file: String,
    pub label: String,
    pub f: f64,
    pub psi: f64,
    pub m: usize,
    pub origin_col: usize,
    pub defect_kind: Option<String>,
    pub center_row: Option<f64>,
    pub center_col: Option<f64>,
    pub radius: Option<f64>,
    pub strength: Option<f64>,
    pub seed: u64,
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const CONFIG_FILE: &str = "generation.cfg";
pub const PATCH_DIR: &str = "patches";

/// Mixes a dataset seed with a patch index.
pub fn patch_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Draws and renders one patch of the dataset.
pub fn synthesize_patch(
    config: &GenerationConfig,
    label: ClassLabel,
    patch_id: &str,
    seed: u64,
) -> Result<(Patch, ManifestRecord)> {
    let m = config.side;
    let spec = &config.pattern;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin_col = rng.random_range(0..=spec.pattern_width - m);
    let noise_seed: u64 = rng.random();
    let clean = render_clean_patch(spec, m, origin_col, noise_seed)?;

    let mid = (m - 1) as f64 / 2.0;
    let half_spread = config.center_spread * m as f64 / 2.0;
    let defect = DefectKind::from_label(label).map(|kind| DefectSpec {
        kind,
        center_row: uniform(&mut rng, (mid - half_spread, mid + half_spread)).round(),
        center_col: uniform(&mut rng, (mid - half_spread, mid + half_spread)).round(),
        radius: uniform(&mut rng, config.radius_range),
        strength: uniform(&mut rng, config.strength_range),
    });
    let patch = match &defect {
        Some(d) => inject_defect(&clean, spec, origin_col, d)?,
        None => clean,
    }
    .with_id(patch_id);

    let record = ManifestRecord {
        patch_id: patch_id.to_string(),
        file: format!("{PATCH_DIR}/{patch_id}.{}", config.format.extension()),
        label: label.to_string(),
        f: spec.frequency,
        psi: spec.phase,
        m,
        origin_col,
        defect_kind: defect.map(|d| d.kind.label().to_string()),
        center_row: defect.map(|d| d.center_row),
        center_col: defect.map(|d| d.center_col),
        radius: defect.map(|d| d.radius),
        strength: defect.map(|d| d.strength),
        seed,
    };
    Ok((patch, record))
}

/// Writes `patches/`, `manifest.csv` and `generation.cfg` under `out_dir`.
/// Output is a pure function of `(config, seed)`.
pub fn generate_dataset(config: &GenerationConfig, seed: u64, out_dir: &Path) -> Result<Vec<ManifestRecord>> {
    config.validate()?;
    let patch_dir = out_dir.join(PATCH_DIR);
    std::fs::create_dir_all(&patch_dir).map_err(|e| Error::io(&patch_dir, e))?;

    let jobs: Vec<(ClassLabel, String, u64)> = config
        .counts
        .iter()
        .flat_map(|(&label, &n)| std::iter::repeat_n(label, n))
        .enumerate()
        .map(|(i, label)| (label, format!("p{i:06}"), patch_seed(seed, i as u64)))
        .collect();

    let records: Vec<ManifestRecord> = jobs
        .par_iter()
        .map(|(label, id, s)| {
            let (patch, record) = synthesize_patch(config, *label, id, *s)?;
            write_patch(
                &out_dir.join(&record.file),
                &patch,
                config.format,
                config.pattern.intensity_range(),
            )?;
            Ok(record)
        })
        .collect::<Result<_>>()?;

    let manifest_path = out_dir.join(MANIFEST_FILE);
    let mut writer =
        csv::Writer::from_path(&manifest_path).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    for record in &records {
        writer.serialize(record)?;
    }
    writer.flush().map_err(|e| Error::io(&manifest_path, e))?;

    let cfg_path = out_dir.join(CONFIG_FILE);
    std::fs::write(&cfg_path, config.to_key_values(seed)).map_err(|e| Error::io(&cfg_path, e))?;
    Ok(records)
}

pub fn read_manifest(dataset_dir: &Path) -> Result<Vec<ManifestRecord>> {
    let path: PathBuf = dataset_dir.join(MANIFEST_FILE);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| Error::format(&path, e.to_string()))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::format(&path, e.to_string())))
        .collect()
}
