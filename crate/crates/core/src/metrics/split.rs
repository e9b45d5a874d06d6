use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Index partition of a dataset; both lists are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Per-class shuffle-and-cut. Each class contributes
/// `round_half_up(n_j · train_fraction)` points to training and the rest to
/// validation.
pub fn stratified_split<L: Ord>(labels: &[L], train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut by_class: BTreeMap<&L, Vec<usize>> = BTreeMap::new();
    for (i, label) in labels.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    if let Some((_, members)) = by_class.iter().find(|(_, m)| m.len() < 2) {
        return Err(Error::InvalidInput(format!(
            "stratified split needs at least 2 members per class; point {} is alone in its class",
            members[0]
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        let n_train = train_count(members.len(), train_fraction);
        train.extend_from_slice(&members[..n_train]);
        validation.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    validation.sort_unstable();
    Ok(Split { train, validation })
}

fn train_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction + 0.5).floor() as usize).min(n)
}
