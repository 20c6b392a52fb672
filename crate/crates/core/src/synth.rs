//! Synthetic fine-grained base features standing in for a CNN backbone, and
//! pairwise label supervision.
//!
//! Every class plants channel patterns at the same `n_attributes` spatial
//! sites. A `subtlety` fraction of those sites carries a pattern shared by
//! all classes; the remaining sites carry class-specific patterns and are the
//! only discriminative evidence. Items add Gaussian noise to their class
//! signature.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Query,
    Retrieval,
}

impl Split {
    pub fn to_byte(self) -> u8 {
        match self {
            Split::Query => 0,
            Split::Retrieval => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Split::Query),
            1 => Some(Split::Retrieval),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub per_class: usize,
    /// Leading items of each class tagged as queries; the rest are retrieval.
    pub query_per_class: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub n_attributes: usize,
    /// Fraction of attribute sites whose pattern is shared by all classes.
    pub subtlety: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// 8 classes × 40 items of 16×8×8 features, half the attribute sites
    /// shared, noise σ = 0.3.
    pub fn standard_benchmark(seed: u64) -> Self {
        Self {
            n_classes: 8,
            per_class: 40,
            query_per_class: 10,
            channels: 16,
            height: 8,
            width: 8,
            n_attributes: 8,
            subtlety: 0.5,
            noise_sigma: 0.3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.per_class == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::argument("class counts and feature extents must be positive"));
        }
        if self.n_attributes == 0 {
            return Err(Error::argument("n_attributes must be positive"));
        }
        if self.n_attributes > self.height * self.width {
            return Err(Error::argument("n_attributes exceeds the number of spatial sites H*W"));
        }
        if self.query_per_class > self.per_class {
            return Err(Error::argument("query_per_class exceeds per_class"));
        }
        if !(self.subtlety > 0.0 && self.subtlety <= 1.0) {
            return Err(Error::argument("subtlety must lie in (0, 1]"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::argument("noise_sigma must be finite and non-negative"));
        }
        Ok(())
    }

    /// Number of sites whose pattern is common to every class.
    pub fn shared_sites(&self) -> usize {
        libm::round(self.subtlety * self.n_attributes as f64) as usize
    }
}

/// Base features with labels, unique ids and split tags (parallel arrays).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub features: Vec<Tensor>,
    pub labels: Vec<u32>,
    pub ids: Vec<u64>,
    pub splits: Vec<Split>,
}

impl FeatureSet {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            features: Vec::new(),
            labels: Vec::new(),
            ids: Vec::new(),
            splits: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn push(&mut self, id: u64, label: u32, split: Split, features: Tensor) -> Result<()> {
        let shape = [self.channels, self.height, self.width];
        if features.shape() != shape {
            return Err(Error::dimension("feature set", &shape, features.shape()));
        }
        self.features.push(features);
        self.labels.push(label);
        self.ids.push(id);
        self.splits.push(split);
        Ok(())
    }

    /// Items tagged with `split`, in original order.
    pub fn subset(&self, split: Split) -> FeatureSet {
        let mut out = FeatureSet::new(self.channels, self.height, self.width);
        for i in (0..self.len()).filter(|&i| self.splits[i] == split) {
            out.features.push(self.features[i].clone());
            out.labels.push(self.labels[i]);
            out.ids.push(self.ids[i]);
            out.splits.push(split);
        }
        out
    }

    pub fn position_of(&self, id: u64) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }
}

/// Generates a class-balanced set; a pure function of `spec`.
///
/// Items are class-major: item `j` of class `c` has id `c·per_class + j` and
/// is a query iff `j < query_per_class`.
pub fn generate(spec: &SyntheticSpec) -> Result<FeatureSet> {
    spec.validate()?;
    let (c, h, w) = (spec.channels, spec.height, spec.width);
    let positions = h * w;
    let mut rng = Rng::new(spec.seed);

    let sites = rng.sample_indices(positions, spec.n_attributes);
    let shared = spec.shared_sites();
    let shared_patterns: Vec<Vec<f64>> = (0..shared).map(|_| (0..c).map(|_| rng.gaussian()).collect()).collect();

    let signatures: Vec<Tensor> = (0..spec.n_classes)
        .map(|_| {
            let mut sig = Tensor::zeros(&[c, h, w]);
            for (a, &site) in sites.iter().enumerate() {
                let own: Vec<f64>;
                let pattern = if a < shared {
                    &shared_patterns[a]
                } else {
                    own = (0..c).map(|_| rng.gaussian()).collect();
                    &own
                };
                for (ch, &v) in pattern.iter().enumerate() {
                    sig.data_mut()[ch * positions + site] = v;
                }
            }
            sig
        })
        .collect();

    let mut set = FeatureSet::new(c, h, w);
    for (class, sig) in signatures.iter().enumerate() {
        for j in 0..spec.per_class {
            let mut item = sig.clone();
            if spec.noise_sigma > 0.0 {
                for v in item.data_mut() {
                    *v += spec.noise_sigma * rng.gaussian();
                }
            }
            let split = if j < spec.query_per_class {
                Split::Query
            } else {
                Split::Retrieval
            };
            set.push((class * spec.per_class + j) as u64, class as u32, split, item)?;
        }
    }
    Ok(set)
}

/// Pairwise supervision `S ∈ {−1, +1}^{n×m}`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<i8>,
}

impl SimilarityMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[i8] {
        &self.entries[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, t: usize) -> i8 {
        self.entries[r * self.cols + t]
    }
}

/// `+1` where labels agree, `−1` elsewhere.
pub fn similarity_matrix(labels_q: &[u32], labels_db: &[u32]) -> Result<SimilarityMatrix> {
    if labels_q.is_empty() || labels_db.is_empty() {
        return Err(Error::argument("similarity matrix needs non-empty label lists"));
    }
    let entries = labels_q
        .iter()
        .flat_map(|&q| labels_db.iter().map(move |&d| if q == d { 1 } else { -1 }))
        .collect();
    Ok(SimilarityMatrix {
        rows: labels_q.len(),
        cols: labels_db.len(),
        entries,
    })
}
