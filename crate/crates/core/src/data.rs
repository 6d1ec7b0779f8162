//! Labeled sample matrices and the train/held-out partition handles.
//!
//! Fitting entry points (standardizer, autoencoder, classifiers) take a
//! [`TrainingSet`]; evaluation takes a [`HeldOutSet`]. The two can only be
//! produced together from one partition, so a trial cannot hand test rows to
//! a fit call by accident.

use std::ops::Deref;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    /// One sample per row.
    pub features: Array2<f64>,
    pub n_classes: usize,
}

impl LabeledSet {
    pub fn new(
        ids: Vec<String>,
        labels: Vec<usize>,
        features: Array2<f64>,
        n_classes: usize,
    ) -> Result<Self> {
        if ids.len() != labels.len() || labels.len() != features.nrows() {
            return Err(Error::shape(format!(
                "{} ids, {} labels, {} feature rows",
                ids.len(),
                labels.len(),
                features.nrows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::input(format!(
                "label {bad} outside 0..{n_classes}"
            )));
        }
        Ok(Self {
            ids,
            labels,
            features,
            n_classes,
        })
    }

    /// Anonymous set with ids `0..n`.
    pub fn from_features(features: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let ids = (0..features.nrows()).map(|i| i.to_string()).collect();
        Self::new(ids, labels, features, n_classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            features: self.features.select(Axis(0), rows),
            n_classes: self.n_classes,
        }
    }

    /// Same ids and labels, new feature rows.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        Self::new(self.ids.clone(), self.labels.clone(), features, self.n_classes)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

/// Rows a model may be fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet(LabeledSet);

/// Rows a model may only be evaluated on.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldOutSet(LabeledSet);

impl TrainingSet {
    /// Wraps a whole set for fitting, e.g. synthetic data or a final model
    /// trained on everything.
    pub fn new(set: LabeledSet) -> Self {
        Self(set)
    }

    pub fn into_inner(self) -> LabeledSet {
        self.0
    }

    /// Re-wraps transformed features of the same rows.
    pub fn map_features(&self, features: Array2<f64>) -> Result<Self> {
        Ok(Self(self.0.with_features(features)?))
    }
}

impl HeldOutSet {
    pub fn into_inner(self) -> LabeledSet {
        self.0
    }

    pub fn map_features(&self, features: Array2<f64>) -> Result<Self> {
        Ok(Self(self.0.with_features(features)?))
    }
}

impl Deref for TrainingSet {
    type Target = LabeledSet;
    fn deref(&self) -> &LabeledSet {
        &self.0
    }
}

impl Deref for HeldOutSet {
    type Target = LabeledSet;
    fn deref(&self) -> &LabeledSet {
        &self.0
    }
}

/// Splits `set` into disjoint train and held-out handles by row index.
pub fn partition(set: &LabeledSet, train: &[usize], test: &[usize]) -> Result<(TrainingSet, HeldOutSet)> {
    let mut seen = vec![false; set.len()];
    for &i in train.iter().chain(test) {
        if i >= set.len() || std::mem::replace(&mut seen[i], true) {
            return Err(Error::input(format!(
                "row {i} is out of range or in both partitions"
            )));
        }
    }
    Ok((TrainingSet(set.select(train)), HeldOutSet(set.select(test))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn partition_is_disjoint() {
        let set = LabeledSet::from_features(array![[0.0], [1.0], [2.0]], vec![0, 1, 0], 2).unwrap();
        let (tr, te) = partition(&set, &[2, 0], &[1]).unwrap();
        assert_eq!(tr.ids, vec!["2", "0"]);
        assert_eq!(te.features, array![[1.0]]);
        assert!(partition(&set, &[0, 1], &[1]).is_err());
        assert!(partition(&set, &[5], &[]).is_err());
    }

    #[test]
    fn label_bounds() {
        assert!(LabeledSet::from_features(array![[0.0]], vec![2], 2).is_err());
        assert!(LabeledSet::from_features(array![[0.0]], vec![0, 1], 2).is_err());
    }
}
