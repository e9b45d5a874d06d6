//! Conventional and probability-based evaluation metrics.
//!
//! Binary metrics use the defect / defect-free view: `p_defect` is the
//! posterior probability of the defect class, and the per-point error
//! probabilities are `1 − p_defect` for true defects and `p_defect` for
//! defect-free points. FPR counts defect-free points called defects, FNR
//! counts defects called defect-free.

mod report;
mod split;

pub use report::{derive_seeds, repeated_evaluation, EvaluationConfig, EvaluationReport, MetricSummary};
pub use split::{stratified_split, Split};

use crate::classifier::{shannon_entropy, PosteriorVector};
use crate::error::{Error, Result};

/// Two-class posterior `(p_defect_free, p_defect)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryPosterior {
    probs: [f64; 2],
}

impl BinaryPosterior {
    pub fn new(p_defect: f64, p_defect_free: f64) -> Self {
        BinaryPosterior {
            probs: [p_defect_free, p_defect],
        }
    }

    pub fn p_defect(&self) -> f64 {
        self.probs[1]
    }

    pub fn p_defect_free(&self) -> f64 {
        self.probs[0]
    }

    /// Argmax; an exact tie counts as a defect.
    pub fn predicted_defect(&self) -> bool {
        self.probs[1] >= self.probs[0]
    }

    pub fn entropy(&self) -> f64 {
        shannon_entropy(&self.probs)
    }
}

impl AsRef<[f64]> for BinaryPosterior {
    fn as_ref(&self) -> &[f64] {
        &self.probs
    }
}

/// Collapses a multi-class posterior to defect vs defect-free by summing the
/// probabilities of `defect_classes`.
pub fn merge_defect_classes<L: PartialEq>(
    posterior: &PosteriorVector<L>,
    classes: &[L],
    defect_classes: &[L],
) -> Result<BinaryPosterior> {
    if posterior.probabilities.len() != classes.len() {
        return Err(Error::DimensionMismatch {
            expected: classes.len(),
            actual: posterior.probabilities.len(),
        });
    }
    let members: Vec<bool> = classes.iter().map(|c| defect_classes.contains(c)).collect();
    let n_defect = members.iter().filter(|&&b| b).count();
    if n_defect == 0 || n_defect == classes.len() || n_defect != defect_classes.len() {
        return Err(Error::InvalidInput(
            "defect classes must be a nonempty proper subset of the posterior classes".into(),
        ));
    }
    let (mut p_defect, mut p_free) = (0.0, 0.0);
    for (p, is_defect) in posterior.probabilities.iter().zip(&members) {
        if *is_defect {
            p_defect += p;
        } else {
            p_free += p;
        }
    }
    Ok(BinaryPosterior::new(p_defect, p_free))
}

/// Binary posterior of class `positive` against all others.
pub fn one_against_all<L>(posterior: &PosteriorVector<L>, positive: usize) -> Result<BinaryPosterior> {
    let k = posterior.probabilities.len();
    if positive >= k {
        return Err(Error::InvalidInput(format!(
            "class index {positive} out of range for {k} classes"
        )));
    }
    let p = posterior.probabilities[positive];
    let rest: f64 = posterior
        .probabilities
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != positive)
        .map(|(_, x)| x)
        .sum();
    Ok(BinaryPosterior::new(p, rest))
}

/// Rates that are undefined when a class is missing are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbabilityRates {
    pub prob_mer: f64,
    pub prob_fpr: Option<f64>,
    pub prob_fnr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardRates {
    pub mer: f64,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, actual: b });
    }
    if a == 0 {
        return Err(Error::InvalidInput("no points to evaluate".into()));
    }
    Ok(())
}

fn mean_or_none(sum: f64, n: usize) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

/// probMER, probFPR and probFNR from true defect flags and `p_defect`.
pub fn probability_metrics(is_defect: &[bool], p_defect: &[f64]) -> Result<ProbabilityRates> {
    check_lengths(is_defect.len(), p_defect.len())?;
    let (mut pm, mut pfn, mut pfp) = (0.0, 0.0, 0.0);
    let (mut n1, mut n0) = (0, 0);
    for (&defect, &p) in is_defect.iter().zip(p_defect) {
        if defect {
            pm += 1.0 - p;
            pfn += 1.0 - p;
            n1 += 1;
        } else {
            pm += p;
            pfp += p;
            n0 += 1;
        }
    }
    Ok(ProbabilityRates {
        prob_mer: pm / is_defect.len() as f64,
        prob_fpr: mean_or_none(pfp, n0),
        prob_fnr: mean_or_none(pfn, n1),
    })
}

/// Counting MER, FPR and FNR.
pub fn hard_metrics(is_defect: &[bool], predicted_defect: &[bool]) -> Result<HardRates> {
    check_lengths(is_defect.len(), predicted_defect.len())?;
    let (mut errors, mut fp, mut fn_, mut n1, mut n0) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for (&truth, &pred) in is_defect.iter().zip(predicted_defect) {
        if truth {
            n1 += 1;
            if !pred {
                fn_ += 1;
                errors += 1;
            }
        } else {
            n0 += 1;
            if pred {
                fp += 1;
                errors += 1;
            }
        }
    }
    Ok(HardRates {
        mer: errors as f64 / is_defect.len() as f64,
        fpr: mean_or_none(fp as f64, n0),
        fnr: mean_or_none(fn_ as f64, n1),
    })
}

/// Fraction of points whose predicted class differs from the truth.
pub fn multiclass_error_rate<L: PartialEq>(truth: &[L], predicted: &[L]) -> Result<f64> {
    check_lengths(truth.len(), predicted.len())?;
    let wrong = truth.iter().zip(predicted).filter(|(t, p)| t != p).count();
    Ok(wrong as f64 / truth.len() as f64)
}

/// Mean of `1 − p(true class)`; `None` in `true_index` means the true class
/// has no probability mass (absent from the reference set).
pub fn multiclass_prob_error<P: AsRef<[f64]>>(true_index: &[Option<usize>], posteriors: &[P]) -> Result<f64> {
    check_lengths(true_index.len(), posteriors.len())?;
    let total: f64 = true_index
        .iter()
        .zip(posteriors)
        .map(|(t, p)| 1.0 - t.map_or(0.0, |i| p.as_ref()[i]))
        .sum();
    Ok(total / true_index.len() as f64)
}

/// Mean per-point Shannon entropy.
pub fn average_entropy<P: AsRef<[f64]>>(posteriors: &[P]) -> Result<f64> {
    if posteriors.is_empty() {
        return Err(Error::InvalidInput("no posteriors to average".into()));
    }
    let total: f64 = posteriors.iter().map(|p| shannon_entropy(p.as_ref())).sum();
    Ok(total / posteriors.len() as f64)
}
