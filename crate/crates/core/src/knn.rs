//! The example memory `D` and nearest-neighbor queries over it.
//!
//! Search is a linear scan. Each entry keeps its raw features, labels and
//! the label-space projection `w = Pᵀx` (P is frozen, so `w` never goes
//! stale). The d-dimensional embeddings `Vᵀw` are cached lazily and tagged
//! with the [`MetricV::stamp`] they were computed under.

use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::linalg;
use crate::metric_learner::MetricV;

/// Which distance the training-time nearest-neighbor lookup uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrainNnMetric {
    /// Squared Euclidean distance on raw features.
    #[default]
    EuclideanRaw,
    /// Learned metric on label-space projections.
    Learned,
}

/// A query hit: store index and its (squared) distance to the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Default)]
struct EmbeddingCache {
    stamp: Option<u64>,
    d: usize,
    rows: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NeighborStore {
    p: usize,
    q: usize,
    // length of the cached projection per entry: q, or 0 for a raw-feature store
    proj_dim: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
    projected: Vec<f64>,
    capacity: Option<usize>,
    cache: EmbeddingCache,
}

impl NeighborStore {
    pub fn new(p: usize, q: usize) -> Self {
        Self {
            p,
            q,
            proj_dim: q,
            features: Vec::new(),
            labels: Vec::new(),
            projected: Vec::new(),
            capacity: None,
            cache: EmbeddingCache::default(),
        }
    }

    /// A store without label-space projections, for raw-feature search only.
    pub fn new_raw(p: usize, q: usize) -> Self {
        Self {
            proj_dim: 0,
            ..Self::new(p, q)
        }
    }

    pub fn has_projections(&self) -> bool {
        self.proj_dim > 0
    }

    /// Bounds the store; once full, each append evicts the oldest entry.
    pub fn with_capacity_limit(mut self, limit: Option<usize>) -> Self {
        self.capacity = limit;
        self
    }

    pub fn capacity_limit(&self) -> Option<usize> {
        self.capacity
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn len(&self) -> usize {
        self.labels.len() / self.q.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.p..(i + 1) * self.p]
    }

    pub fn labels(&self, i: usize) -> &[u8] {
        &self.labels[i * self.q..(i + 1) * self.q]
    }

    /// Cached `Pᵀx` of entry `i`.
    pub fn projected(&self, i: usize) -> &[f64] {
        &self.projected[i * self.proj_dim..(i + 1) * self.proj_dim]
    }

    /// Appends an entry with its precomputed projection `w = Pᵀx` (empty for a raw store).
    pub fn push(&mut self, features: &[f64], labels: &[u8], projected: &[f64]) -> Result<()> {
        check_len("store features", self.p, features.len())?;
        check_len("store labels", self.q, labels.len())?;
        check_len("store projection", self.proj_dim, projected.len())?;
        if let Some(limit) = self.capacity {
            if limit > 0 && self.len() >= limit {
                let drop = self.len() + 1 - limit;
                self.features.drain(..drop * self.p);
                self.labels.drain(..drop * self.q);
                self.projected.drain(..drop * self.proj_dim);
                self.cache = EmbeddingCache::default();
            }
        }
        self.features.extend_from_slice(features);
        self.labels.extend_from_slice(labels);
        self.projected.extend_from_slice(projected);
        Ok(())
    }

    /// Training-time nearest neighbor of `(x_t, w_t = Pᵀx_t)`; ties go to the lowest index.
    pub fn nearest_neighbor_train(
        &self,
        x_t: &[f64],
        w_t: &[f64],
        mode: TrainNnMetric,
        v: &MetricV,
    ) -> Result<Neighbor> {
        if self.is_empty() {
            return Err(Error::EmptyStore);
        }
        let mut best = Neighbor {
            index: 0,
            distance: f64::INFINITY,
        };
        match mode {
            TrainNnMetric::EuclideanRaw => {
                check_len("query features", self.p, x_t.len())?;
                for (i, row) in self.features.chunks_exact(self.p.max(1)).enumerate() {
                    let dist = linalg::sq_dist(row, x_t);
                    if dist < best.distance {
                        best = Neighbor {
                            index: i,
                            distance: dist,
                        };
                    }
                }
                if self.p == 0 {
                    best.distance = 0.0;
                }
            }
            TrainNnMetric::Learned => {
                check_len("store projections", self.q, self.proj_dim)?;
                check_len("query projection", self.q, w_t.len())?;
                let mut diff = alloc::vec![0.0; self.q];
                let mut emb = alloc::vec![0.0; v.d()];
                for i in 0..self.len() {
                    for ((d, a), b) in diff.iter_mut().zip(self.projected(i)).zip(w_t) {
                        *d = a - b;
                    }
                    v.matrix().tr_mul_vec_into(&diff, &mut emb);
                    let dist = linalg::norm_sq(&emb);
                    if dist < best.distance {
                        best = Neighbor {
                            index: i,
                            distance: dist,
                        };
                    }
                }
            }
        }
        if !best.distance.is_finite() {
            return Err(Error::NonFinite("nearest-neighbor distance"));
        }
        Ok(best)
    }

    fn refresh_embeddings(&mut self, v: &MetricV) {
        let d = v.d();
        if self.cache.stamp != Some(v.stamp()) || self.cache.d != d {
            self.cache = EmbeddingCache {
                stamp: Some(v.stamp()),
                d,
                rows: 0,
                data: Vec::with_capacity(self.len() * d),
            };
        }
        let n = self.len();
        if self.cache.rows < n {
            self.cache.data.resize(n * d, 0.0);
            for i in self.cache.rows..n {
                let (w, out) = (
                    &self.projected[i * self.q..(i + 1) * self.q],
                    &mut self.cache.data[i * d..(i + 1) * d],
                );
                v.matrix().tr_mul_vec_into(w, out);
            }
            self.cache.rows = n;
        }
    }

    /// The `k` entries closest to `w_query` under the learned metric, ascending.
    ///
    /// Embeddings of stored entries are cached per metric stamp and reused.
    pub fn knn_query(&mut self, v: &MetricV, w_query: &[f64], k: usize) -> Result<Vec<Neighbor>> {
        self.check_query(k)?;
        check_len("store projections", self.q, self.proj_dim)?;
        check_len("query projection", self.q, w_query.len())?;
        check_len("metric rows", self.q, v.q())?;
        self.refresh_embeddings(v);
        let query = v.embed(w_query)?;
        let d = v.d();
        let dists = self
            .cache
            .data
            .chunks_exact(d.max(1))
            .take(self.len())
            .enumerate()
            .map(|(i, e)| (linalg::sq_dist(e, &query), i))
            .collect();
        Ok(k_smallest(dists, k))
    }

    /// Same as [`NeighborStore::knn_query`], recomputing every embedding.
    pub fn knn_query_uncached(
        &self,
        v: &MetricV,
        w_query: &[f64],
        k: usize,
    ) -> Result<Vec<Neighbor>> {
        self.check_query(k)?;
        check_len("store projections", self.q, self.proj_dim)?;
        check_len("query projection", self.q, w_query.len())?;
        check_len("metric rows", self.q, v.q())?;
        let query = v.embed(w_query)?;
        let dists = (0..self.len())
            .map(|i| {
                v.embed(self.projected(i))
                    .map(|e| (linalg::sq_dist(&e, &query), i))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(k_smallest(dists, k))
    }

    /// The `k` entries closest to `x` in raw feature space (Euclidean baseline).
    pub fn knn_query_raw(&self, x: &[f64], k: usize) -> Result<Vec<Neighbor>> {
        self.check_query(k)?;
        check_len("query features", self.p, x.len())?;
        let dists = (0..self.len())
            .map(|i| (linalg::sq_dist(self.features(i), x), i))
            .collect();
        Ok(k_smallest(dists, k))
    }

    fn check_query(&self, k: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyStore);
        }
        if k == 0 || k > self.len() {
            return Err(Error::Query(format!(
                "k = {k} outside 1..={} (store size)",
                self.len()
            )));
        }
        Ok(())
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Shape {
            what,
            expected,
            found,
        });
    }
    Ok(())
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn k_smallest(mut dists: Vec<(f64, usize)>, k: usize) -> Vec<Neighbor> {
    if k < dists.len() {
        dists.select_nth_unstable_by(k - 1, by_distance_then_index);
        dists.truncate(k);
    }
    dists.sort_unstable_by(by_distance_then_index);
    dists
        .into_iter()
        .map(|(distance, index)| Neighbor { index, distance })
        .collect()
}

/// `(w_i − w_j)ᵀ V Vᵀ (w_i − w_j)`, evaluated as `‖Vᵀ(w_i − w_j)‖²`.
pub fn learned_distance(v: &MetricV, w_i: &[f64], w_j: &[f64]) -> Result<f64> {
    check_len("learned distance operands", w_i.len(), w_j.len())?;
    check_len("learned distance rows", v.q(), w_i.len())?;
    let diff: Vec<f64> = w_i.iter().zip(w_j).map(|(a, b)| a - b).collect();
    Ok(linalg::norm_sq(&v.matrix().tr_mul_vec(&diff)?))
}

/// Majority-style vote: label `j` is on iff the mean neighbor value at `j` is `>= threshold`.
pub fn aggregate_labels<L: AsRef<[u8]>>(neighbors: &[L], threshold: f64) -> Result<Vec<u8>> {
    let first = neighbors
        .first()
        .ok_or_else(|| Error::Query("cannot aggregate an empty neighbor list".into()))?;
    let q = first.as_ref().len();
    let mut counts = alloc::vec![0usize; q];
    for n in neighbors {
        let n = n.as_ref();
        check_len("neighbor labels", q, n.len())?;
        for (c, &l) in counts.iter_mut().zip(n) {
            *c += usize::from(l);
        }
    }
    let k = neighbors.len() as f64;
    Ok(counts
        .into_iter()
        .map(|c| u8::from(c as f64 / k >= threshold))
        .collect())
}
