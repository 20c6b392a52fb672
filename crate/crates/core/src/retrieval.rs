//! Bit-packed codes, exhaustive Hamming ranking and retrieval metrics.
//!
//! Bit `j` of a code lives in word `j / 64` at bit position `j % 64`; a set
//! bit means coordinate `+1`. Bits past the code length are always zero.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PackedCode {
    words: Vec<u64>,
    nbits: u32,
}

pub fn words_for(nbits: u32) -> usize {
    (nbits as usize).div_ceil(64)
}

impl PackedCode {
    pub fn pack(code: &[i8]) -> Result<Self> {
        if code.is_empty() {
            return Err(Error::argument("cannot pack an empty code"));
        }
        let nbits = u32::try_from(code.len()).map_err(|_| Error::argument("code too long"))?;
        let mut words = vec![0u64; words_for(nbits)];
        for (j, &b) in code.iter().enumerate() {
            match b {
                1 => words[j / 64] |= 1 << (j % 64),
                -1 => {}
                other => return Err(Error::argument(format!("code coordinate {j} is {other}, expected ±1"))),
            }
        }
        Ok(Self { words, nbits })
    }

    /// Rebuilds a code from raw words; high bits past `nbits` must be zero.
    pub fn from_words(words: Vec<u64>, nbits: u32) -> Result<Self> {
        if nbits == 0 || words.len() != words_for(nbits) {
            return Err(Error::argument("word count does not match code length"));
        }
        let tail = nbits % 64;
        if tail != 0 && words[words.len() - 1] >> tail != 0 {
            return Err(Error::argument("bits beyond the code length must be zero"));
        }
        Ok(Self { words, nbits })
    }

    pub fn unpack(&self) -> Vec<i8> {
        (0..self.nbits as usize)
            .map(|j| if self.words[j / 64] >> (j % 64) & 1 == 1 { 1 } else { -1 })
            .collect()
    }

    pub fn nbits(&self) -> u32 {
        self.nbits
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }
}

/// Number of differing coordinates.
pub fn hamming(a: &PackedCode, b: &PackedCode) -> Result<u32> {
    if a.nbits != b.nbits {
        return Err(Error::argument(format!(
            "code lengths differ: {} vs {} bits",
            a.nbits, b.nbits
        )));
    }
    Ok(hamming_words(&a.words, &b.words))
}

#[inline]
fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Database of packed codes with parallel ids and labels.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CodeDatabase {
    nbits: u32,
    codes: Vec<PackedCode>,
    ids: Vec<u64>,
    labels: Vec<u32>,
}

impl CodeDatabase {
    pub fn new(nbits: u32) -> Self {
        Self {
            nbits,
            ..Self::default()
        }
    }

    pub fn push(&mut self, id: u64, label: u32, code: PackedCode) -> Result<()> {
        if code.nbits != self.nbits {
            return Err(Error::argument(format!(
                "code has {} bits, database holds {}-bit codes",
                code.nbits, self.nbits
            )));
        }
        self.codes.push(code);
        self.ids.push(id);
        self.labels.push(label);
        Ok(())
    }

    pub fn nbits(&self) -> u32 {
        self.nbits
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[PackedCode] {
        &self.codes
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }
}

/// A database position and its distance to the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hit {
    pub index: usize,
    pub distance: u32,
}

/// Every database item ordered by ascending Hamming distance, ties by
/// ascending database index.
pub fn rank(query: &PackedCode, db: &CodeDatabase) -> Result<Vec<Hit>> {
    if db.is_empty() {
        return Err(Error::argument("cannot rank against an empty database"));
    }
    if query.nbits != db.nbits {
        return Err(Error::argument(format!(
            "query has {} bits, database holds {}-bit codes",
            query.nbits, db.nbits
        )));
    }
    // Counting sort over the nbits + 1 possible distances keeps index order
    // within each distance.
    let distances: Vec<u32> = db.codes.iter().map(|c| hamming_words(&query.words, &c.words)).collect();
    let mut starts = vec![0usize; db.nbits as usize + 2];
    for &d in &distances {
        starts[d as usize + 1] += 1;
    }
    for i in 1..starts.len() {
        starts[i] += starts[i - 1];
    }
    let mut hits = vec![Hit { index: 0, distance: 0 }; distances.len()];
    for (index, &distance) in distances.iter().enumerate() {
        let slot = &mut starts[distance as usize];
        hits[*slot] = Hit { index, distance };
        *slot += 1;
    }
    Ok(hits)
}

/// A query code with the metadata relevance is judged by.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub id: u64,
    pub label: u32,
    pub code: PackedCode,
}

/// Average precision of one query over the full ranking, relevance by equal
/// label. Database entries carrying the query's own id are skipped.
pub fn average_precision(query: &Query, db: &CodeDatabase) -> Result<f64> {
    let ranking = rank(&query.code, db)?;
    let mut position = 0usize;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for hit in ranking {
        if db.ids[hit.index] == query.id {
            continue;
        }
        position += 1;
        if db.labels[hit.index] == query.label {
            hits += 1;
            sum += hits as f64 / position as f64;
        }
    }
    if hits == 0 {
        return Err(Error::argument(format!(
            "query {} has no relevant database items",
            query.id
        )));
    }
    Ok(sum / hits as f64)
}

/// Mean of [`average_precision`] over `queries`.
pub fn mean_average_precision(queries: &[Query], db: &CodeDatabase) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::argument("no queries"));
    }
    let mut total = 0.0;
    for q in queries {
        total += average_precision(q, db)?;
    }
    Ok(total / queries.len() as f64)
}

/// Mean fraction of relevant items among the top `k` of each ranking
/// (self-hits skipped as in [`average_precision`]).
pub fn precision_at_k(queries: &[Query], db: &CodeDatabase, k: usize) -> Result<f64> {
    if queries.is_empty() || k == 0 {
        return Err(Error::argument("precision@k needs queries and k > 0"));
    }
    let mut total = 0.0;
    for q in queries {
        let relevant = rank(&q.code, db)?
            .into_iter()
            .filter(|h| db.ids[h.index] != q.id)
            .take(k)
            .filter(|h| db.labels[h.index] == q.label)
            .count();
        total += relevant as f64 / k as f64;
    }
    Ok(total / queries.len() as f64)
}
