//! Labeled/unlabeled pool bookkeeping and the simulated oracle.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;

use super::Sample;
use crate::error::{Error, Result};
use crate::rng;

/// The active-learning pool at stage `t`: labeled ids with their labels and
/// the unlabeled ids. The two sets are always disjoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pool {
    labeled: BTreeMap<usize, usize>,
    unlabeled: BTreeSet<usize>,
    rejected: BTreeSet<usize>,
    stage: usize,
}

impl Pool {
    pub fn new(labeled: BTreeMap<usize, usize>, unlabeled: BTreeSet<usize>) -> Result<Self> {
        if let Some(id) = labeled.keys().find(|id| unlabeled.contains(id)) {
            return Err(Error::Consistency(format!("id {id} is both labeled and unlabeled")));
        }
        Ok(Pool {
            labeled,
            unlabeled,
            rejected: BTreeSet::new(),
            stage: 0,
        })
    }

    pub fn labeled(&self) -> &BTreeMap<usize, usize> {
        &self.labeled
    }

    pub fn labeled_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.labeled.keys().copied()
    }

    pub fn unlabeled(&self) -> &BTreeSet<usize> {
        &self.unlabeled
    }

    /// Ids the oracle has turned away at least once. They stay unlabeled.
    pub fn rejected(&self) -> &BTreeSet<usize> {
        &self.rejected
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unlabeled ids eligible for selection, ascending.
    pub fn candidates(&self, exclude_rejected: bool) -> Vec<usize> {
        self.unlabeled
            .iter()
            .copied()
            .filter(|id| !(exclude_rejected && self.rejected.contains(id)))
            .collect()
    }

    /// Moves annotated ids into the labeled set, flags rejected ids (which
    /// stay unlabeled) and advances the stage.
    pub fn commit_labels(mut self, annotated: &[(usize, usize)], rejected: &[usize]) -> Pool {
        for &(id, label) in annotated {
            if self.unlabeled.remove(&id) {
                self.labeled.insert(id, label);
            }
        }
        self.rejected.extend(rejected.iter().copied().filter(|id| self.unlabeled.contains(id)));
        self.stage += 1;
        self
    }
}

/// Appends out-of-distribution samples to the unlabeled set.
pub fn inject_ood(mut pool: Pool, ood_samples: &[Sample]) -> Result<Pool> {
    for s in ood_samples {
        if s.origin.is_in_dist() {
            return Err(Error::Consistency(format!("sample {} is not out-of-distribution", s.id)));
        }
        if pool.labeled.contains_key(&s.id) || !pool.unlabeled.insert(s.id) {
            return Err(Error::Consistency(format!("OOD id {} collides with the pool", s.id)));
        }
    }
    Ok(pool)
}

/// Result of one oracle query.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Annotation {
    pub annotated: Vec<(usize, usize)>,
    pub rejected: Vec<usize>,
}

/// Ground-truth label table standing in for a human annotator.
#[derive(Debug, Clone, Default)]
pub struct OracleSim {
    truth: HashMap<usize, Option<usize>>,
}

impl OracleSim {
    /// In-distribution samples must carry their label; OOD samples are
    /// always rejected.
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Result<Self> {
        let mut truth = HashMap::new();
        for s in samples {
            let entry = if s.origin.is_in_dist() {
                Some(s.label.ok_or_else(|| {
                    Error::Consistency(format!("in-distribution sample {} has no label", s.id))
                })?)
            } else {
                None
            };
            if truth.insert(s.id, entry).is_some() {
                return Err(Error::Consistency(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(OracleSim { truth })
    }

    pub fn is_ood(&self, id: usize) -> Option<bool> {
        self.truth.get(&id).map(|t| t.is_none())
    }

    pub fn annotate(&self, pool: &Pool, ids: &[usize]) -> Result<Annotation> {
        let mut out = Annotation::default();
        for &id in ids {
            if !pool.unlabeled.contains(&id) {
                return Err(Error::Consistency(format!("id {id} is not in the unlabeled pool")));
            }
            match self.truth.get(&id) {
                Some(Some(label)) => out.annotated.push((id, *label)),
                Some(None) => out.rejected.push(id),
                None => return Err(Error::Consistency(format!("oracle has no record of id {id}"))),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub initial_labeled: usize,
    pub val_size: usize,
    /// Carved out of the same samples; zero when a separate test set exists.
    pub test_size: usize,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub pool: Pool,
    pub val_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

/// Splits training samples into an initial labeled pool, validation and test
/// holdouts, and the unlabeled remainder. The labeled pool is drawn
/// round-robin across classes when `stratified` and every sample is labeled.
pub fn make_splits(samples: &[Sample], sizes: SplitSizes, stratified: bool, seed: u64) -> Result<Splits> {
    let needed = sizes.initial_labeled + sizes.val_size + sizes.test_size;
    if needed > samples.len() {
        return Err(Error::config(
            "splits",
            format!("{needed} samples requested but only {} available", samples.len()),
        ));
    }
    let mut r = rng::stream(seed, "splits", &[]);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut r);

    let all_labeled = samples.iter().all(|s| s.label.is_some());
    let mut taken = vec![false; samples.len()];
    let mut labeled = BTreeMap::new();
    if stratified && all_labeled {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &i in &order {
            by_class.entry(samples[i].label.unwrap()).or_default().push(i);
        }
        let mut queues: Vec<std::vec::IntoIter<usize>> =
            by_class.into_values().map(|v| v.into_iter()).collect();
        'fill: while labeled.len() < sizes.initial_labeled {
            let mut progressed = false;
            for q in queues.iter_mut() {
                if labeled.len() == sizes.initial_labeled {
                    break 'fill;
                }
                if let Some(i) = q.next() {
                    taken[i] = true;
                    labeled.insert(samples[i].id, samples[i].label.unwrap());
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
    } else {
        for &i in order.iter().take(sizes.initial_labeled) {
            let label = samples[i].label.ok_or_else(|| {
                Error::Consistency(format!("initial labeled sample {} has no label", samples[i].id))
            })?;
            taken[i] = true;
            labeled.insert(samples[i].id, label);
        }
    }

    let mut rest = order.into_iter().filter(|&i| !taken[i]);
    let val_ids: Vec<usize> = rest.by_ref().take(sizes.val_size).map(|i| samples[i].id).collect();
    let test_ids: Vec<usize> = rest.by_ref().take(sizes.test_size).map(|i| samples[i].id).collect();
    let unlabeled: BTreeSet<usize> = rest.map(|i| samples[i].id).collect();
    Ok(Splits {
        pool: Pool::new(labeled, unlabeled)?,
        val_ids,
        test_ids,
    })
}
