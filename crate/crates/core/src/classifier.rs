//! NN-ball probabilistic nearest-neighbour classifier.
//!
//! For a query `τ` with per-class nearest distances `D_j`, the class density
//! estimate is `1 / (n_j · a_m · D_j^m)`. Weighting by priors `n_j / N`, the
//! ball constant and class sizes cancel and the posterior is
//! `D_j^{−m} / Σ_i D_i^{−m}`, which is evaluated here in log space since
//! `D^{−m}` leaves the double range for moderate `D` once `m` is near 100.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Validated, immutable reference set.
#[derive(Debug, Clone)]
pub struct LabeledFeatureSet<L> {
    dim: usize,
    data: Vec<f64>,
    class_of: Vec<usize>,
    ids: Vec<Option<String>>,
    classes: Vec<L>,
    counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorVector<L> {
    pub probabilities: Vec<f64>,
    pub predicted: L,
    pub predicted_index: usize,
    pub entropy: f64,
    /// Natural log of each probability. Stays finite where the probability
    /// itself underflows to zero.
    pub log_probabilities: Vec<f64>,
    /// `log D_j` per class; `-inf` for zero distance.
    pub log_distances: Vec<f64>,
}

impl<L> AsRef<[f64]> for PosteriorVector<L> {
    fn as_ref(&self) -> &[f64] {
        &self.probabilities
    }
}

/// Builds a reference set from `(vector, label)` pairs.
pub fn build_reference<L, I, V>(vectors: I) -> Result<LabeledFeatureSet<L>>
where
    L: Ord + Clone,
    I: IntoIterator<Item = (V, L)>,
    V: AsRef<[f64]>,
{
    LabeledFeatureSet::from_entries(vectors.into_iter().map(|(v, l)| (v, l, None)))
}

impl<L: Ord + Clone> LabeledFeatureSet<L> {
    /// Like [`build_reference`], keeping an identifier per point for
    /// leave-one-out queries.
    pub fn from_entries<I, V>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (V, L, Option<String>)>,
        V: AsRef<[f64]>,
    {
        let mut dim = None;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut ids = Vec::new();
        for (vector, label, id) in entries {
            let v = vector.as_ref();
            let expected = *dim.get_or_insert(v.len());
            if v.len() != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    actual: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput("reference vector has non-finite entries".into()));
            }
            data.extend_from_slice(v);
            labels.push(label);
            ids.push(id);
        }
        let dim = dim.unwrap_or(0);
        if dim == 0 {
            return Err(Error::InvalidInput("reference set is empty or zero-dimensional".into()));
        }

        let mut classes = labels.clone();
        classes.sort();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::SingleClass(classes.len()));
        }
        let class_of: Vec<usize> = labels
            .iter()
            .map(|l| classes.binary_search(l).expect("label is in class list"))
            .collect();
        let mut counts = vec![0; classes.len()];
        for &c in &class_of {
            counts[c] += 1;
        }
        Ok(LabeledFeatureSet {
            dim,
            data,
            class_of,
            ids,
            classes,
            counts,
        })
    }
}

impl<L: Clone> LabeledFeatureSet<L> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.class_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_of.is_empty()
    }

    pub fn classes(&self) -> &[L] {
        &self.classes
    }

    pub fn per_class_counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> &L {
        &self.classes[self.class_of[i]]
    }

    fn check_dim(&self, query: &[f64]) -> Result<()> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        Ok(())
    }

    fn min_sq_distances(&self, query: &[f64], exclude: Option<&str>) -> Vec<f64> {
        let mut best = vec![f64::INFINITY; self.classes.len()];
        for (i, point) in self.data.chunks_exact(self.dim).enumerate() {
            if let (Some(ex), Some(id)) = (exclude, self.ids[i].as_deref()) {
                if ex == id {
                    continue;
                }
            }
            let c = self.class_of[i];
            let mut d2 = 0.0;
            for (a, b) in point.iter().zip(query) {
                let d = a - b;
                d2 += d * d;
            }
            if d2 < best[c] {
                best[c] = d2;
            }
        }
        best
    }
}

/// Euclidean distance from `query` to the nearest reference point of each
/// class, in class order.
pub fn min_class_distance<L: Clone>(reference: &LabeledFeatureSet<L>, query: &[f64]) -> Result<Vec<f64>> {
    reference.check_dim(query)?;
    Ok(reference
        .min_sq_distances(query, None)
        .into_iter()
        .map(f64::sqrt)
        .collect())
}

/// Shannon entropy in nats, with `0 · log 0 = 0`.
pub fn shannon_entropy(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .sum::<f64>()
        .max(0.0)
}

/// Log posterior class probabilities from per-class log distances and the
/// feature dimension used as the ball exponent.
pub fn log_posterior_from_log_distances(log_distances: &[f64], dim: usize) -> Vec<f64> {
    let k = log_distances.len();
    let zeros = log_distances.iter().filter(|d| **d == f64::NEG_INFINITY).count();
    if zeros > 0 {
        let share = -(zeros as f64).ln();
        return log_distances
            .iter()
            .map(|d| {
                if *d == f64::NEG_INFINITY {
                    share
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
    }
    let m = dim as f64;
    let logits: Vec<f64> = log_distances.iter().map(|d| -m * d).collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        // Every class infinitely far away: nothing to prefer.
        return vec![-(k as f64).ln(); k];
    }
    // log1p keeps the leading class's log probability accurate when it is
    // within rounding of zero.
    let lead = logits.iter().position(|&l| l == top).unwrap_or(0);
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != lead)
        .map(|(_, l)| (l - top).exp())
        .sum();
    let log_norm = rest.ln_1p();
    logits.iter().map(|l| (l - top) - log_norm).collect()
}

/// Posterior class probabilities; see [`log_posterior_from_log_distances`].
pub fn posterior_from_log_distances(log_distances: &[f64], dim: usize) -> Vec<f64> {
    probabilities_from_logs(&log_posterior_from_log_distances(log_distances, dim))
}

fn probabilities_from_logs(log_p: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best
}

fn assemble<L: Clone>(reference: &LabeledFeatureSet<L>, sq: Vec<f64>) -> PosteriorVector<L> {
    let log_distances: Vec<f64> = sq.iter().map(|d2| 0.5 * d2.ln()).collect();
    let log_probabilities = log_posterior_from_log_distances(&log_distances, reference.dim);
    let probabilities = probabilities_from_logs(&log_probabilities);
    let predicted_index = argmax(&log_probabilities);
    PosteriorVector {
        entropy: shannon_entropy(&probabilities),
        log_probabilities,
        predicted: reference.classes[predicted_index].clone(),
        predicted_index,
        probabilities,
        log_distances,
    }
}

/// Posterior class probabilities for one query.
pub fn posterior<L: Clone>(reference: &LabeledFeatureSet<L>, query: &[f64]) -> Result<PosteriorVector<L>> {
    reference.check_dim(query)?;
    Ok(assemble(reference, reference.min_sq_distances(query, None)))
}

/// Posterior that ignores reference points whose id equals `query_id`.
pub fn posterior_leave_one_out<L: Clone>(
    reference: &LabeledFeatureSet<L>,
    query: &[f64],
    query_id: &str,
) -> Result<PosteriorVector<L>> {
    reference.check_dim(query)?;
    Ok(assemble(reference, reference.min_sq_distances(query, Some(query_id))))
}

/// Order-preserving batch of [`posterior`] calls.
pub fn classify_batch<L, V>(reference: &LabeledFeatureSet<L>, queries: &[V]) -> Result<Vec<PosteriorVector<L>>>
where
    L: Clone + Send + Sync,
    V: AsRef<[f64]> + Sync,
{
    queries
        .par_iter()
        .enumerate()
        .map(|(index, q)| {
            posterior(reference, q.as_ref()).map_err(|e| Error::Query {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Batch classification with leave-one-out on matching ids.
pub fn classify_batch_leave_one_out<L, V>(
    reference: &LabeledFeatureSet<L>,
    queries: &[(String, V)],
) -> Result<Vec<PosteriorVector<L>>>
where
    L: Clone + Send + Sync,
    V: AsRef<[f64]> + Sync,
{
    queries
        .par_iter()
        .enumerate()
        .map(|(index, (id, q))| {
            posterior_leave_one_out(reference, q.as_ref(), id).map_err(|e| Error::Query {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}
