//! Fixed standard-normal base samples for sample-average approximations.
//!
//! All estimator randomness flows through [`BaseSampleTree`]: one outer draw
//! per outer index, and per outer index a reserved row of inner draws. Coarse
//! estimators slice prefixes or halves of each row, never fresh draws, which
//! is what couples the fine and coarse levels. An optional access log records
//! which entries were read so tests can assert the coupling rules.

use std::ops::Range;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Derives an independent seed from a base seed and a stream tag.
/// SplitMix64 over the combined words, so nearby tags give unrelated streams.
pub fn seed_stream(seed: u64, tags: &[u64]) -> u64 {
    let mut z = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &t in tags {
        z = z.wrapping_add(t).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

pub fn rng_from(seed: u64, tags: &[u64]) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed_stream(seed, tags))
}

/// Which inner draws of a row an estimator consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerSlice {
    /// The first `m` draws (fine estimators, and plain coarse estimators).
    Prefix(usize),
    /// `[m, 2m)`: the second antithetic half of `2m` draws.
    SecondHalf(usize),
}

impl InnerSlice {
    pub fn range(self) -> Range<usize> {
        match self {
            InnerSlice::Prefix(m) => 0..m,
            InnerSlice::SecondHalf(m) => m..2 * m,
        }
    }
}

#[derive(Debug, Default)]
pub struct AccessLog {
    entries: Mutex<Vec<(usize, Range<usize>)>>,
}

impl AccessLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&self, outer: usize, range: Range<usize>) {
        self.entries.lock().unwrap().push((outer, range));
    }

    pub fn take(&self) -> Vec<(usize, Range<usize>)> {
        std::mem::take(&mut *self.entries.lock().unwrap())
    }
}

/// Frozen standard-normal draws: `outer[i]` drives the stage-0 fantasy for
/// outer index `i`, and row `i` of `inner` provides up to `m_max` inner draws
/// of width `q` each (q > 1 for batch rewards).
pub struct BaseSampleTree {
    seed: u64,
    outer: Vec<f64>,
    /// Row-major `[n][m_max * q]`.
    inner: Vec<Vec<f64>>,
    m_max: usize,
    q: usize,
    log: Option<AccessLog>,
}

impl BaseSampleTree {
    /// Generates the tree from `seed`. Regeneration with the same arguments
    /// reproduces identical draws. Each outer index has its own inner stream,
    /// so extending `m_max` keeps existing prefixes unchanged.
    pub fn generate(seed: u64, n: usize, m_max: usize, q: usize) -> Self {
        assert!(q >= 1);
        let mut outer_rng = rng_from(seed, &[0x0eu64]);
        let outer = (0..n)
            .map(|_| StandardNormal.sample(&mut outer_rng))
            .collect();
        let inner = (0..n)
            .map(|i| {
                let mut rng = rng_from(seed, &[0x1eu64, i as u64]);
                (0..m_max * q)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            })
            .collect();
        Self {
            seed,
            outer,
            inner,
            m_max,
            q,
            log: None,
        }
    }

    pub fn with_access_log(mut self) -> Self {
        self.log = Some(AccessLog::new());
        self
    }

    /// Builds a tree from explicit draws. Tests use this to pin fantasy
    /// values (for example, all-zero draws place fantasies at posterior
    /// means).
    pub fn from_parts(
        seed: u64,
        outer: Vec<f64>,
        inner: Vec<Vec<f64>>,
        m_max: usize,
        q: usize,
    ) -> Self {
        assert_eq!(outer.len(), inner.len());
        for row in &inner {
            assert_eq!(row.len(), m_max * q);
        }
        Self {
            seed,
            outer,
            inner,
            m_max,
            q,
            log: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n(&self) -> usize {
        self.outer.len()
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn outer(&self, i: usize) -> f64 {
        self.outer[i]
    }

    /// Inner draws for outer index `i` restricted to `slice`; returns
    /// `slice.len() * q` scalars.
    pub fn inner_slice(&self, i: usize, slice: InnerSlice) -> &[f64] {
        let r = slice.range();
        assert!(
            r.end <= self.m_max,
            "slice {:?} exceeds m_max {}",
            r,
            self.m_max
        );
        if let Some(log) = &self.log {
            log.record(i, r.clone());
        }
        &self.inner[i][r.start * self.q..r.end * self.q]
    }

    pub fn access_log(&self) -> Option<&AccessLog> {
        self.log.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regeneration_is_identical() {
        let a = BaseSampleTree::generate(99, 4, 8, 1);
        let b = BaseSampleTree::generate(99, 4, 8, 1);
        assert_eq!(a.outer, b.outer);
        assert_eq!(a.inner, b.inner);
    }

    #[test]
    fn prefix_stability_under_m_growth() {
        let small = BaseSampleTree::generate(7, 3, 4, 1);
        let big = BaseSampleTree::generate(7, 3, 16, 1);
        for i in 0..3 {
            assert_eq!(
                small.inner_slice(i, InnerSlice::Prefix(4)),
                &big.inner_slice(i, InnerSlice::Prefix(16))[..4]
            );
        }
        assert_eq!(small.outer, big.outer);
    }

    #[test]
    fn slices_partition_the_row() {
        let t = BaseSampleTree::generate(1, 1, 8, 1);
        let full = t.inner_slice(0, InnerSlice::Prefix(8)).to_vec();
        let first = t.inner_slice(0, InnerSlice::Prefix(4)).to_vec();
        let second = t.inner_slice(0, InnerSlice::SecondHalf(4)).to_vec();
        assert_eq!(&full[..4], &first[..]);
        assert_eq!(&full[4..], &second[..]);
    }

    #[test]
    fn access_log_records_reads() {
        let t = BaseSampleTree::generate(1, 2, 4, 1).with_access_log();
        t.inner_slice(0, InnerSlice::Prefix(2));
        t.inner_slice(1, InnerSlice::SecondHalf(2));
        let log = t.access_log().unwrap().take();
        assert_eq!(log, vec![(0, 0..2), (1, 2..4)]);
    }

    #[test]
    fn seed_streams_differ_across_tags() {
        assert_ne!(seed_stream(5, &[1]), seed_stream(5, &[2]));
        assert_ne!(seed_stream(5, &[1, 2]), seed_stream(5, &[2, 1]));
    }

    #[test]
    fn q_width_rows() {
        let t = BaseSampleTree::generate(3, 2, 4, 3);
        assert_eq!(t.inner_slice(0, InnerSlice::Prefix(4)).len(), 12);
        assert_eq!(t.inner_slice(1, InnerSlice::Prefix(1)).len(), 3);
    }
}
