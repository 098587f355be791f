//! Exact k-nearest-neighbor search: a brute-force reference and a uniform
//! spatial hash with ring expansion that returns identical results.

use super::{dist_sq, NeighborTable};
use crate::error::{Error, Result};
use crate::mat::Mat;
use rayon::prelude::*;
use std::collections::{BinaryHeap, HashMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Brute,
    Grid,
}

/// Exact KNN under squared Euclidean distance. Rows are sorted by ascending
/// distance, ties broken by ascending source index; both backends produce
/// bit-identical tables.
pub fn knn_query(source: &Mat, query: &Mat, k: usize, backend: Backend) -> Result<NeighborTable> {
    if k == 0 || k > source.rows() {
        return Err(Error::invalid(format!(
            "k = {} out of range for {} source points",
            k,
            source.rows()
        )));
    }
    assert_eq!(source.cols(), 3);
    assert_eq!(query.cols(), 3);
    let rows: Vec<Vec<usize>> = match backend {
        Backend::Brute => (0..query.rows())
            .into_par_iter()
            .map(|i| brute_one(source, query.row(i), k))
            .collect(),
        Backend::Grid => {
            let grid = HashGrid::build(source, k);
            (0..query.rows())
                .into_par_iter()
                .map(|i| grid.query(source, query.row(i), k))
                .collect()
        }
    };
    let mut flat = Vec::with_capacity(query.rows() * k);
    for row in rows {
        flat.extend_from_slice(&row);
    }
    Ok(NeighborTable::from_flat(flat, k, source.rows()))
}

fn brute_one(source: &Mat, q: &[f64], k: usize) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = (0..source.rows())
        .map(|j| (dist_sq(q, source.row(j)), j))
        .collect();
    // (distance, index) keys are unique, so the order is total.
    if cand.len() > k {
        cand.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
        cand.truncate(k);
    }
    cand.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    cand.into_iter().map(|(_, j)| j).collect()
}

/// Max-heap entry ordered by (distance, index); the worst candidate sits on
/// top so it can be evicted.
#[derive(PartialEq)]
struct Candidate {
    d: f64,
    idx: usize,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.d
            .total_cmp(&other.d)
            .then(self.idx.cmp(&other.idx))
    }
}

struct HashGrid {
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
    cell_size: f64,
    key_min: (i64, i64, i64),
    key_max: (i64, i64, i64),
}

impl HashGrid {
    fn build(source: &Mat, k: usize) -> Self {
        let p = source.rows();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for i in 0..p {
            let r = source.row(i);
            for a in 0..3 {
                lo[a] = lo[a].min(r[a]);
                hi[a] = hi[a].max(r[a]);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0f64, f64::max);
        // Aim for roughly max(k, 8) points per cell so the home ring usually
        // already holds k candidates.
        let target = (p as f64 / k.max(8) as f64).max(1.0);
        let per_axis = target.cbrt().ceil().max(1.0);
        let cell_size = if extent > 0.0 { extent / per_axis } else { 1.0 };
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        let mut key_min = (i64::MAX, i64::MAX, i64::MAX);
        let mut key_max = (i64::MIN, i64::MIN, i64::MIN);
        for i in 0..p {
            let key = Self::key_of(source.row(i), cell_size);
            key_min = (key_min.0.min(key.0), key_min.1.min(key.1), key_min.2.min(key.2));
            key_max = (key_max.0.max(key.0), key_max.1.max(key.1), key_max.2.max(key.2));
            cells.entry(key).or_default().push(i);
        }
        HashGrid {
            cells,
            cell_size,
            key_min,
            key_max,
        }
    }

    #[inline]
    fn key_of(pt: &[f64], s: f64) -> (i64, i64, i64) {
        (
            (pt[0] / s).floor() as i64,
            (pt[1] / s).floor() as i64,
            (pt[2] / s).floor() as i64,
        )
    }

    /// Exact query: expand Chebyshev rings around the home cell until no
    /// unscanned cell can hold a candidate strictly better than the current
    /// k-th (a point in ring r+1 is at distance >= r * cell_size).
    fn query(&self, source: &Mat, q: &[f64], k: usize) -> Vec<usize> {
        let s = self.cell_size;
        let home = Self::key_of(q, s);
        let max_ring = ring_bound(home, self.key_min, self.key_max);
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        let mut ring = 0i64;
        loop {
            self.scan_ring(source, q, home, ring, k, &mut heap);
            if heap.len() == k {
                let worst = heap.peek().unwrap().d;
                let bound = ring as f64 * s;
                if worst < bound * bound {
                    break;
                }
            }
            if ring >= max_ring {
                break;
            }
            ring += 1;
        }
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort_unstable_by(|a, b| a.cmp(b));
        out.into_iter().map(|c| c.idx).collect()
    }

    fn scan_ring(
        &self,
        source: &Mat,
        q: &[f64],
        home: (i64, i64, i64),
        ring: i64,
        k: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        let mut visit = |key: (i64, i64, i64)| {
            if let Some(members) = self.cells.get(&key) {
                for &idx in members {
                    let d = dist_sq(q, source.row(idx));
                    let cand = Candidate { d, idx };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
        };
        if ring == 0 {
            visit(home);
            return;
        }
        for dx in -ring..=ring {
            for dy in -ring..=ring {
                if dx.abs().max(dy.abs()) == ring {
                    for dz in -ring..=ring {
                        visit((home.0 + dx, home.1 + dy, home.2 + dz));
                    }
                } else {
                    visit((home.0 + dx, home.1 + dy, home.2 - ring));
                    visit((home.0 + dx, home.1 + dy, home.2 + ring));
                }
            }
        }
    }
}

/// Largest Chebyshev ring around `home` that can still intersect the
/// occupied key range.
fn ring_bound(home: (i64, i64, i64), lo: (i64, i64, i64), hi: (i64, i64, i64)) -> i64 {
    let spans = [
        (home.0 - lo.0).max(hi.0 - home.0),
        (home.1 - lo.1).max(hi.1 - home.1),
        (home.2 - lo.2).max(hi.2 - home.2),
    ];
    spans.into_iter().max().unwrap().max(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{synthetic_cloud, synthetic_cloud_quantized};

    fn line_points() -> Mat {
        Mat::from_rows(&[vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![3.0, 0.0, 0.0]])
    }

    #[test]
    fn self_is_nearest() {
        let pts = line_points();
        let t = knn_query(&pts, &pts, 1, Backend::Brute).unwrap();
        assert_eq!(t.row(0), &[0]);
        assert_eq!(t.row(1), &[1]);
        assert_eq!(t.row(2), &[2]);
    }

    #[test]
    fn two_neighbors_hand_checked() {
        let pts = line_points();
        for backend in [Backend::Brute, Backend::Grid] {
            let t = knn_query(&pts, &pts, 2, backend).unwrap();
            assert_eq!(t.row(0), &[0, 1]);
            assert_eq!(t.row(1), &[1, 0]);
            assert_eq!(t.row(2), &[2, 1]);
        }
    }

    #[test]
    fn k_larger_than_source_is_rejected() {
        let pts = line_points();
        assert!(knn_query(&pts, &pts, 4, Backend::Brute).is_err());
    }

    #[test]
    fn grid_matches_brute_on_random_clouds() {
        for seed in 0..50u64 {
            let cloud = synthetic_cloud(256, seed, 1.0, 0);
            let pts = cloud.coords();
            let b = knn_query(pts, pts, 16, Backend::Brute).unwrap();
            let g = knn_query(pts, pts, 16, Backend::Grid).unwrap();
            assert_eq!(b, g, "seed {seed}");
        }
    }

    #[test]
    fn grid_matches_brute_with_coincident_points() {
        for seed in 0..20u64 {
            let cloud = synthetic_cloud_quantized(200, seed, 1.0, 0.2);
            let pts = cloud.coords();
            for k in [1, 4, 16] {
                let b = knn_query(pts, pts, k, Backend::Brute).unwrap();
                let g = knn_query(pts, pts, k, Backend::Grid).unwrap();
                assert_eq!(b, g, "seed {seed} k {k}");
            }
        }
    }

    #[test]
    fn distinct_query_set() {
        let src = synthetic_cloud(128, 1, 1.0, 0);
        let qry = synthetic_cloud(40, 2, 1.0, 0);
        let b = knn_query(src.coords(), qry.coords(), 5, Backend::Brute).unwrap();
        let g = knn_query(src.coords(), qry.coords(), 5, Backend::Grid).unwrap();
        assert_eq!(b, g);
        assert_eq!(b.len(), 40);
        assert_eq!(b.k(), 5);
    }
}
