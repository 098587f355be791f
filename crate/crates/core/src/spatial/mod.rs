//! Exact spatial operators: k-nearest-neighbor queries, farthest point
//! sampling, and grid/FPS resampling maps.
//!
//! Everything here is deterministic: distances tie-break on ascending point
//! index, grid cells order by lexicographic cell key, and cell members order
//! by lexicographic coordinate. Relabeling a duplicate-free cloud by a
//! permutation therefore permutes outputs consistently.

mod fps;
mod grid;
mod knn;

pub use fps::{fps_knn_map, fps_select};
pub use grid::{grid_pool_map, pool_features, unpool_features, Reduce};
pub use knn::{knn_query, Backend};

use crate::mat::Mat;

/// Squared Euclidean distance; the one distance used by every backend so
/// accelerated and brute-force paths round identically.
#[inline(always)]
pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// For each query point, the indices of its k nearest source points, sorted
/// by ascending squared distance with ties broken by ascending source index.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    indices: Vec<usize>,
    k: usize,
    queries: usize,
    source_len: usize,
    pub source_scale: usize,
    pub query_scale: usize,
}

impl NeighborTable {
    pub(crate) fn from_flat(indices: Vec<usize>, k: usize, source_len: usize) -> Self {
        assert_eq!(indices.len() % k.max(1), 0);
        let queries = if k == 0 { 0 } else { indices.len() / k };
        NeighborTable {
            indices,
            k,
            queries,
            source_len,
            source_scale: 0,
            query_scale: 0,
        }
    }

    pub fn with_scales(mut self, source_scale: usize, query_scale: usize) -> Self {
        self.source_scale = source_scale;
        self.query_scale = query_scale;
        self
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.queries
    }

    pub fn is_empty(&self) -> bool {
        self.queries == 0
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }
}

/// How features travel between two adjacent scales: a total fine-to-coarse
/// assignment for pooling plus per-fine interpolation weights for unpooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleKind {
    Grid,
    FpsKnn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResampleMap {
    kind: ResampleKind,
    down_assign: Vec<usize>,
    coarse_coords: Mat,
    // Fine indices grouped by coarse parent (CSR), members in canonical
    // order: lexicographic coordinate, then fine index.
    member_offsets: Vec<usize>,
    member_indices: Vec<usize>,
    // Upsample interpolation (CSR over fine points).
    up_offsets: Vec<usize>,
    up_indices: Vec<usize>,
    up_weights: Vec<f64>,
}

impl ResampleMap {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        kind: ResampleKind,
        down_assign: Vec<usize>,
        coarse_coords: Mat,
        member_offsets: Vec<usize>,
        member_indices: Vec<usize>,
        up_offsets: Vec<usize>,
        up_indices: Vec<usize>,
        up_weights: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(member_offsets.len(), coarse_coords.rows() + 1);
        debug_assert_eq!(member_indices.len(), down_assign.len());
        debug_assert_eq!(up_offsets.len(), down_assign.len() + 1);
        ResampleMap {
            kind,
            down_assign,
            coarse_coords,
            member_offsets,
            member_indices,
            up_offsets,
            up_indices,
            up_weights,
        }
    }

    pub fn kind(&self) -> ResampleKind {
        self.kind
    }

    pub fn fine_len(&self) -> usize {
        self.down_assign.len()
    }

    pub fn coarse_len(&self) -> usize {
        self.coarse_coords.rows()
    }

    pub fn down_assign(&self) -> &[usize] {
        &self.down_assign
    }

    pub fn coarse_coords(&self) -> &Mat {
        &self.coarse_coords
    }

    /// Fine members of coarse point `c`, canonical order.
    pub fn members(&self, c: usize) -> &[usize] {
        &self.member_indices[self.member_offsets[c]..self.member_offsets[c + 1]]
    }

    /// Coarse indices and convex weights used to interpolate fine point `i`.
    pub fn up_row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.up_offsets[i]..self.up_offsets[i + 1];
        (&self.up_indices[r.clone()], &self.up_weights[r])
    }
}

/// Builds the member CSR from a down assignment, ordering members within
/// each cell by lexicographic coordinate then fine index.
pub(crate) fn members_from_assign(
    down_assign: &[usize],
    coarse_len: usize,
    fine_coords: &Mat,
) -> (Vec<usize>, Vec<usize>) {
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); coarse_len];
    for (i, &c) in down_assign.iter().enumerate() {
        buckets[c].push(i);
    }
    let mut offsets = Vec::with_capacity(coarse_len + 1);
    let mut indices = Vec::with_capacity(down_assign.len());
    offsets.push(0);
    for bucket in &mut buckets {
        bucket.sort_unstable_by(|&a, &b| {
            let ra = fine_coords.row(a);
            let rb = fine_coords.row(b);
            ra.partial_cmp(rb)
                .expect("finite coordinates")
                .then(a.cmp(&b))
        });
        indices.extend_from_slice(bucket);
        offsets.push(indices.len());
    }
    (offsets, indices)
}
