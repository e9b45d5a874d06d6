//! Patch standardization and the row-wise EDF feature vector.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::splinefit::{select_lambda, SplineModel};

/// Smallest patch side accepted by the extractor.
pub const MIN_PATCH_SIDE: usize = 31;
/// Standard patch sides.
pub const STANDARD_SIDES: [usize; 8] = [31, 51, 71, 91, 111, 131, 151, 171];

/// EDF assigned to rows that cannot be scored; the affine-fit floor.
pub const EDF_FLOOR: f64 = 2.0;
const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClassLabel {
    DefectFree,
    Crater,
    Dirt,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::DefectFree, ClassLabel::Crater, ClassLabel::Dirt];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::DefectFree => "defect_free",
            ClassLabel::Crater => "crater",
            ClassLabel::Dirt => "dirt",
        }
    }

    pub fn is_defect(self) -> bool {
        self != ClassLabel::DefectFree
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "defect_free" => Ok(ClassLabel::DefectFree),
            "crater" => Ok(ClassLabel::Crater),
            "dirt" => Ok(ClassLabel::Dirt),
            other => Err(Error::InvalidInput(format!("unknown class label '{other}'"))),
        }
    }
}

/// Square grayscale patch, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    side: usize,
    pixels: Vec<f64>,
    pub frequency: f64,
    pub phase: f64,
    pub label: Option<ClassLabel>,
    pub patch_id: String,
}

impl Patch {
    pub fn new(side: usize, pixels: Vec<f64>) -> Result<Self> {
        if side == 0 || pixels.len() != side * side {
            return Err(Error::InvalidInput(format!(
                "patch of side {side} needs {} pixels, got {}",
                side * side,
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("patch contains non-finite pixels".into()));
        }
        Ok(Patch {
            side,
            pixels,
            frequency: 0.0,
            phase: 0.0,
            label: None,
            patch_id: String::new(),
        })
    }

    pub fn with_channel(mut self, frequency: f64, phase: f64) -> Self {
        self.frequency = frequency;
        self.phase = phase;
        self
    }

    pub fn with_label(mut self, label: Option<ClassLabel>) -> Self {
        self.label = label;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.patch_id = id.into();
        self
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.side + col]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.pixels[r * self.side..(r + 1) * self.side]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.pixels.chunks_exact(self.side)
    }

    pub fn transposed(&self) -> Patch {
        let n = self.side;
        let mut pixels = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                pixels[c * n + r] = self.pixels[r * n + c];
            }
        }
        Patch { pixels, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub patch: Patch,
    /// Set when the input was constant; the patch is then all zeros.
    pub degenerate: bool,
}

/// Subtracts the overall pixel mean and divides by the overall standard
/// deviation (denominator `m² − 1`).
pub fn standardize_patch(patch: &Patch) -> Standardized {
    let n = patch.pixels.len() as f64;
    let mean = patch.pixels.iter().sum::<f64>() / n;
    let var = patch.pixels.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    let mut out = patch.clone();
    if !(std >= DEGENERATE_STD) {
        out.pixels.iter_mut().for_each(|p| *p = 0.0);
        return Standardized {
            patch: out,
            degenerate: true,
        };
    }
    out.pixels.iter_mut().for_each(|p| *p = (*p - mean) / std);
    Standardized {
        patch: out,
        degenerate: false,
    }
}

/// Basis dimension that is flexible enough for a fringe channel of
/// frequency `f`.
pub fn q_for_frequency(f: f64) -> usize {
    if f <= 8.0 {
        20
    } else if f <= 32.0 {
        30
    } else {
        40
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub tau: Vec<f64>,
    pub raw_edf: Vec<f64>,
    pub label: Option<ClassLabel>,
    pub patch_id: String,
    pub frequency: f64,
    pub phase: f64,
    /// Whole-patch degeneracy (constant input).
    pub degenerate: bool,
    /// Rows whose GCV search failed and were floored at [`EDF_FLOOR`].
    pub degenerate_rows: usize,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.tau.len()
    }

    fn from_raw(patch: &Patch, raw: Vec<f64>, degenerate: bool, degenerate_rows: usize) -> Self {
        let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tau = if max > 0.0 {
            raw.iter().map(|v| v / max).collect()
        } else {
            vec![0.0; raw.len()]
        };
        FeatureVector {
            tau,
            raw_edf: raw,
            label: patch.label,
            patch_id: patch.patch_id.clone(),
            frequency: patch.frequency,
            phase: patch.phase,
            degenerate,
            degenerate_rows,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExtractOptions {
    /// Overrides [`q_for_frequency`].
    pub q: Option<usize>,
    /// Smooth columns instead of rows.
    pub transpose: bool,
}

/// Scaled-EDF feature vector with the default basis for the patch channel.
pub fn extract_edf_features(patch: &Patch) -> Result<FeatureVector> {
    extract_edf_features_with(patch, &ExtractOptions::default())
}

pub fn extract_edf_features_with(patch: &Patch, options: &ExtractOptions) -> Result<FeatureVector> {
    let side = patch.side();
    if side < MIN_PATCH_SIDE {
        return Err(Error::InvalidInput(format!(
            "patch side {side} is below the minimum of {MIN_PATCH_SIDE}"
        )));
    }
    // The channel's basis can outgrow a small patch (q = 40 against m = 31).
    let q = options.q.unwrap_or_else(|| q_for_frequency(patch.frequency).min(side));
    let oriented;
    let patch = if options.transpose {
        oriented = patch.transposed();
        &oriented
    } else {
        patch
    };

    let standardized = standardize_patch(patch);
    if standardized.degenerate {
        return Ok(FeatureVector::from_raw(patch, vec![EDF_FLOOR; side], true, 0));
    }
    let model = SplineModel::new(side, q)?;
    let mut raw = Vec::with_capacity(side);
    let mut degenerate_rows = 0;
    for row in standardized.patch.rows() {
        match select_lambda(&model, row) {
            Ok(fit) => raw.push(fit.edf),
            Err(Error::DegenerateGcv(_)) => {
                degenerate_rows += 1;
                raw.push(EDF_FLOOR);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(FeatureVector::from_raw(patch, raw, false, degenerate_rows))
}

/// Column standard deviations of the standardized patch, scaled by their
/// maximum. `raw_edf` holds the unscaled deviations.
pub fn colstd_features(patch: &Patch) -> Result<FeatureVector> {
    let side = patch.side();
    if side < 2 {
        return Err(Error::InvalidInput("patch side must be at least 2".into()));
    }
    let standardized = standardize_patch(patch);
    if standardized.degenerate {
        let mut fv = FeatureVector::from_raw(patch, vec![0.0; side], true, 0);
        fv.tau = vec![0.0; side];
        return Ok(fv);
    }
    let n = side as f64;
    let sp = &standardized.patch;
    let raw: Vec<f64> = (0..side)
        .map(|c| {
            let mean = (0..side).map(|r| sp.get(r, c)).sum::<f64>() / n;
            let ss = (0..side).map(|r| (sp.get(r, c) - mean).powi(2)).sum::<f64>();
            (ss / (n - 1.0)).sqrt()
        })
        .collect();
    Ok(FeatureVector::from_raw(patch, raw, false, 0))
}
