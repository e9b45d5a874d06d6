//! On-disk formats: patch images, feature tables and posterior tables.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::classifier::PosteriorVector;
use crate::error::{Error, Result};
use crate::features::{ClassLabel, FeatureVector, Patch};

const PGM_MAXVAL: u32 = 65535;
const PGM_VALUES_PER_LINE: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchFormat {
    /// Plain-text 16-bit graymap.
    Pgm,
    /// Comma-separated matrix, one image row per line.
    Csv,
}

impl PatchFormat {
    pub fn extension(self) -> &'static str {
        match self {
            PatchFormat::Pgm => "pgm",
            PatchFormat::Csv => "csv",
        }
    }

    fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("pgm") => Ok(PatchFormat::Pgm),
            Some("csv") => Ok(PatchFormat::Csv),
            _ => Err(Error::format(path, "unrecognized patch file extension")),
        }
    }
}

impl fmt::Display for PatchFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl FromStr for PatchFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pgm" => Ok(PatchFormat::Pgm),
            "csv" => Ok(PatchFormat::Csv),
            other => Err(Error::Config(format!("unknown patch format '{other}'"))),
        }
    }
}

/// Writes a patch. For PGM, intensities in `range` map linearly onto
/// `0..=65535` (clamped) and the range is recorded in a header comment.
pub fn write_patch(path: &Path, patch: &Patch, format: PatchFormat, range: (f64, f64)) -> Result<()> {
    let text = match format {
        PatchFormat::Pgm => encode_pgm(patch, range),
        PatchFormat::Csv => encode_csv_matrix(patch),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a patch, choosing the decoder from the file extension. PGM values
/// are mapped back to intensities when the header carries a range comment.
pub fn read_patch(path: &Path) -> Result<Patch> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match PatchFormat::from_path(path)? {
        PatchFormat::Pgm => decode_pgm(&text).map_err(|m| Error::format(path, m)),
        PatchFormat::Csv => decode_csv_matrix(&text).map_err(|m| Error::format(path, m)),
    }
}

fn encode_pgm(patch: &Patch, (lo, hi): (f64, f64)) -> String {
    let side = patch.side();
    let span = hi - lo;
    let mut out = format!("P2\n# range {lo} {hi}\n{side} {side}\n{PGM_MAXVAL}\n");
    for row in patch.rows() {
        for chunk in row.chunks(PGM_VALUES_PER_LINE) {
            let line: Vec<String> = chunk
                .iter()
                .map(|v| {
                    let level = ((v - lo) / span * PGM_MAXVAL as f64).round();
                    (level.clamp(0.0, PGM_MAXVAL as f64) as u32).to_string()
                })
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out
}

fn decode_pgm(text: &str) -> std::result::Result<Patch, String> {
    let mut range = None;
    let mut tokens = Vec::new();
    for line in text.lines() {
        let (body, comment) = match line.split_once('#') {
            Some((b, c)) => (b, Some(c)),
            None => (line, None),
        };
        if let Some(c) = comment {
            let parts: Vec<&str> = c.split_whitespace().collect();
            if let ["range", lo, hi] = parts.as_slice() {
                if let (Ok(lo), Ok(hi)) = (lo.parse::<f64>(), hi.parse::<f64>()) {
                    range = Some((lo, hi));
                }
            }
        }
        tokens.extend(body.split_whitespace());
    }
    let mut it = tokens.into_iter();
    if it.next() != Some("P2") {
        return Err("not a plain-text (P2) graymap".into());
    }
    let mut header = || -> std::result::Result<usize, String> {
        it.next()
            .ok_or("truncated header")?
            .parse::<usize>()
            .map_err(|e| e.to_string())
    };
    let width = header()?;
    let height = header()?;
    let maxval = header()?;
    if width != height {
        return Err(format!("patch must be square, got {width}×{height}"));
    }
    if maxval == 0 {
        return Err("maxval must be positive".into());
    }
    let levels: Vec<u32> = it
        .map(|t| t.parse::<u32>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    if levels.len() != width * height {
        return Err(format!(
            "expected {} pixel values, found {}",
            width * height,
            levels.len()
        ));
    }
    let pixels = levels
        .into_iter()
        .map(|l| match range {
            Some((lo, hi)) => lo + (hi - lo) * l as f64 / maxval as f64,
            None => l as f64,
        })
        .collect();
    Patch::new(width, pixels).map_err(|e| e.to_string())
}

fn encode_csv_matrix(patch: &Patch) -> String {
    let mut out = String::new();
    for row in patch.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn decode_csv_matrix(text: &str) -> std::result::Result<Patch, String> {
    let mut pixels = Vec::new();
    let mut rows = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        rows += 1;
        for cell in line.split(',') {
            pixels.push(cell.trim().parse::<f64>().map_err(|e| format!("row {rows}: {e}"))?);
        }
    }
    if rows * rows != pixels.len() {
        return Err(format!("{rows} rows with {} values do not form a square", pixels.len()));
    }
    Patch::new(rows, pixels).map_err(|e| e.to_string())
}

/// Features table: `patch_id,label,f,psi,m,tau_1..tau_m`.
pub fn write_features_csv(path: &Path, features: &[FeatureVector]) -> Result<()> {
    let dim = features.first().map_or(0, FeatureVector::dim);
    if let Some(bad) = features.iter().find(|f| f.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.dim(),
        });
    }
    let mut out = String::from("patch_id,label,f,psi,m");
    for r in 1..=dim {
        let _ = write!(out, ",tau_{r}");
    }
    out.push('\n');
    for fv in features {
        let label = fv.label.map(|l| l.as_str()).unwrap_or("");
        let _ = write!(out, "{},{label},{},{},{dim}", fv.patch_id, fv.frequency, fv.phase);
        for t in &fv.tau {
            let _ = write!(out, ",{t}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_features_csv(path: &Path) -> Result<Vec<FeatureVector>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let headers = reader.headers()?.clone();
    let fixed = ["patch_id", "label", "f", "psi", "m"];
    if headers.len() < fixed.len() || headers.iter().zip(fixed).any(|(h, f)| h != f) {
        return Err(Error::format(
            path,
            "features header must start with patch_id,label,f,psi,m",
        ));
    }
    let dim = headers.len() - fixed.len();
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let bad = |what: &str| Error::format(path, format!("record {}: bad {what}", line + 1));
        let num = |i: usize, what: &str| record[i].trim().parse::<f64>().map_err(|_| bad(what));
        let label = match record[1].trim() {
            "" => None,
            s => Some(s.parse::<ClassLabel>()?),
        };
        let m: usize = record[4].trim().parse().map_err(|_| bad("m"))?;
        if m != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: m,
            });
        }
        let tau = (fixed.len()..headers.len())
            .map(|i| num(i, "tau"))
            .collect::<Result<Vec<f64>>>()?;
        out.push(FeatureVector {
            raw_edf: Vec::new(),
            tau,
            label,
            patch_id: record[0].to_string(),
            frequency: num(2, "f")?,
            phase: num(3, "psi")?,
            degenerate: false,
            degenerate_rows: 0,
        });
    }
    Ok(out)
}

/// Posterior table: `patch_id,true_label,predicted,p_<class>..,entropy`.
pub fn write_posteriors_csv<L: fmt::Display>(
    path: &Path,
    classes: &[L],
    rows: &[(String, Option<L>, PosteriorVector<L>)],
) -> Result<()> {
    let mut out = String::from("patch_id,true_label,predicted");
    for c in classes {
        let _ = write!(out, ",p_{c}");
    }
    out.push_str(",entropy\n");
    for (id, truth, post) in rows {
        let truth = truth.as_ref().map(|t| t.to_string()).unwrap_or_default();
        let _ = write!(out, "{id},{truth},{}", post.predicted);
        for p in &post.probabilities {
            let _ = write!(out, ",{p}");
        }
        let _ = writeln!(out, ",{}", post.entropy);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
