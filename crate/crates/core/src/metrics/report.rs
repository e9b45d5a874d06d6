use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    average_entropy, hard_metrics, merge_defect_classes, multiclass_error_rate, multiclass_prob_error,
    probability_metrics, stratified_split, BinaryPosterior,
};
use crate::classifier::{classify_batch, LabeledFeatureSet};
use crate::error::{Error, Result};
use crate::features::{ClassLabel, FeatureVector};

/// Per-run values of one metric with their mean and standard error.
///
/// Runs where the metric is undefined (a class missing from the validation
/// set) are `None` and excluded from the summary. `se` is absent with fewer
/// than two defined runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub runs: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub se: Option<f64>,
}

impl MetricSummary {
    pub fn from_runs(runs: Vec<Option<f64>>) -> Self {
        let values: Vec<f64> = runs.iter().flatten().copied().collect();
        let n = values.len();
        let mean = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
        let se = (n > 1).then(|| {
            // Shifted sums make constant inputs give exactly zero.
            let shift = values[0];
            let s1: f64 = values.iter().map(|v| v - shift).sum();
            let s2: f64 = values.iter().map(|v| (v - shift) * (v - shift)).sum();
            let var = ((s2 - s1 * s1 / n as f64) / (n - 1) as f64).max(0.0);
            (var / n as f64).sqrt()
        });
        MetricSummary { runs, mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_runs: usize,
    pub train_fraction: f64,
    pub seeds: Vec<u64>,
    pub classes: Vec<String>,
    pub defect_classes: Vec<String>,
    /// Validation-set sizes; identical across runs under stratification.
    pub n_total: usize,
    pub n_defect: usize,
    pub n_defect_free: usize,
    /// False when only one run was made and standard errors are absent.
    pub se_available: bool,
    pub metrics: BTreeMap<String, MetricSummary>,
}

/// Names of every metric in a report, in serialization order.
pub const METRIC_NAMES: [&str; 10] = [
    "avg_entropy",
    "avg_entropy_multiclass",
    "fnr",
    "fpr",
    "mer",
    "mer_multiclass",
    "prob_fnr",
    "prob_fpr",
    "prob_mer",
    "prob_mer_multiclass",
];

impl EvaluationReport {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.get(name)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Flat `metric,run,value` table; the run column is the run index, or
    /// `mean` / `se` for the summary rows. Absent values are empty.
    pub fn to_csv(&self) -> String {
        fn cell(v: Option<f64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        let mut out = String::from("metric,run,value\n");
        for (name, summary) in &self.metrics {
            for (i, v) in summary.runs.iter().enumerate() {
                out.push_str(&format!("{name},{i},{}\n", cell(*v)));
            }
            out.push_str(&format!("{name},mean,{}\n", cell(summary.mean)));
            out.push_str(&format!("{name},se,{}\n", cell(summary.se)));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct EvaluationConfig {
    pub train_fraction: f64,
    pub seeds: Vec<u64>,
    pub defect_classes: Vec<ClassLabel>,
}

impl EvaluationConfig {
    pub fn new(n_runs: usize, base_seed: u64) -> Self {
        EvaluationConfig {
            train_fraction: 0.7,
            seeds: derive_seeds(base_seed, n_runs),
            defect_classes: vec![ClassLabel::Crater, ClassLabel::Dirt],
        }
    }
}

/// SplitMix64 stream of run seeds.
pub fn derive_seeds(base: u64, n: usize) -> Vec<u64> {
    let mut state = base;
    (0..n)
        .map(|_| {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        })
        .collect()
}

struct RunOutcome {
    values: BTreeMap<&'static str, Option<f64>>,
    n_defect: usize,
    n_defect_free: usize,
}

fn labels_of(dataset: &[FeatureVector]) -> Result<Vec<ClassLabel>> {
    dataset
        .iter()
        .map(|fv| {
            fv.label
                .ok_or_else(|| Error::InvalidInput(format!("feature vector '{}' has no label", fv.patch_id)))
        })
        .collect()
}

fn evaluate_once(
    dataset: &[FeatureVector],
    labels: &[ClassLabel],
    config: &EvaluationConfig,
    seed: u64,
) -> Result<RunOutcome> {
    let split = stratified_split(labels, config.train_fraction, seed)?;
    let reference = LabeledFeatureSet::from_entries(
        split
            .train
            .iter()
            .map(|&i| (&dataset[i].tau, labels[i], Some(dataset[i].patch_id.clone()))),
    )?;
    let queries: Vec<&[f64]> = split.validation.iter().map(|&i| dataset[i].tau.as_slice()).collect();
    let truth: Vec<ClassLabel> = split.validation.iter().map(|&i| labels[i]).collect();
    let posteriors = classify_batch(&reference, &queries)?;

    let classes = reference.classes();
    let predicted: Vec<ClassLabel> = posteriors.iter().map(|p| p.predicted).collect();
    let true_index: Vec<Option<usize>> = truth.iter().map(|t| classes.iter().position(|c| c == t)).collect();

    let defect_set: Vec<ClassLabel> = classes
        .iter()
        .copied()
        .filter(|c| config.defect_classes.contains(c))
        .collect();
    let binary: Vec<BinaryPosterior> = posteriors
        .iter()
        .map(|p| merge_defect_classes(p, classes, &defect_set))
        .collect::<Result<_>>()?;
    let is_defect: Vec<bool> = truth.iter().map(|t| config.defect_classes.contains(t)).collect();
    let p_defect: Vec<f64> = binary.iter().map(|b| b.p_defect()).collect();
    let predicted_defect: Vec<bool> = binary.iter().map(|b| b.predicted_defect()).collect();

    let hard = hard_metrics(&is_defect, &predicted_defect)?;
    let prob = probability_metrics(&is_defect, &p_defect)?;

    let mut values = BTreeMap::new();
    values.insert("mer", Some(hard.mer));
    values.insert("fpr", hard.fpr);
    values.insert("fnr", hard.fnr);
    values.insert("prob_mer", Some(prob.prob_mer));
    values.insert("prob_fpr", prob.prob_fpr);
    values.insert("prob_fnr", prob.prob_fnr);
    values.insert("avg_entropy", Some(average_entropy(&binary)?));
    values.insert("mer_multiclass", Some(multiclass_error_rate(&truth, &predicted)?));
    values.insert(
        "prob_mer_multiclass",
        Some(multiclass_prob_error(&true_index, &posteriors)?),
    );
    values.insert("avg_entropy_multiclass", Some(average_entropy(&posteriors)?));

    let n_defect = is_defect.iter().filter(|&&d| d).count();
    Ok(RunOutcome {
        values,
        n_defect,
        n_defect_free: is_defect.len() - n_defect,
    })
}

/// Split → classify → score once per seed, then summarize every metric.
/// Runs execute in parallel; results are ordered by seed position.
pub fn repeated_evaluation(dataset: &[FeatureVector], config: &EvaluationConfig) -> Result<EvaluationReport> {
    if config.seeds.is_empty() {
        return Err(Error::InvalidInput("at least one run is required".into()));
    }
    if config.defect_classes.is_empty() {
        return Err(Error::InvalidInput("defect class set is empty".into()));
    }
    let labels = labels_of(dataset)?;

    let outcomes: Vec<RunOutcome> = config
        .seeds
        .par_iter()
        .enumerate()
        .map(|(run, &seed)| {
            evaluate_once(dataset, &labels, config, seed).map_err(|e| Error::Run {
                run,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut classes: Vec<ClassLabel> = labels.clone();
    classes.sort();
    classes.dedup();

    let metrics = METRIC_NAMES
        .iter()
        .map(|&name| {
            let runs = outcomes.iter().map(|o| o.values[name]).collect();
            (name.to_string(), MetricSummary::from_runs(runs))
        })
        .collect();

    let first = &outcomes[0];
    Ok(EvaluationReport {
        n_runs: config.seeds.len(),
        train_fraction: config.train_fraction,
        seeds: config.seeds.clone(),
        classes: classes.iter().map(|c| c.to_string()).collect(),
        defect_classes: config.defect_classes.iter().map(|c| c.to_string()).collect(),
        n_total: first.n_defect + first.n_defect_free,
        n_defect: first.n_defect,
        n_defect_free: first.n_defect_free,
        se_available: config.seeds.len() > 1,
        metrics,
    })
}
