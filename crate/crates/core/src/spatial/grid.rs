//! Grid pooling and unpooling: non-overlapping axis-aligned cells with a
//! fixed global origin, one coarse point (the centroid) per non-empty cell,
//! and back-projection as the inverse.

use super::{members_from_assign, ResampleKind, ResampleMap};
use crate::error::{Error, Result};
use crate::mat::Mat;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduce {
    #[default]
    Max,
    Mean,
}

/// Partitions points into half-open cells `[k*s, (k+1)*s)` keyed by
/// `floor(coord / cell_size)`. Coarse points are cell centroids ordered by
/// ascending lexicographic cell key; members within a cell are ordered by
/// lexicographic coordinate so the centroid sum does not depend on input
/// point order.
pub fn grid_pool_map(coords: &Mat, cell_size: f64) -> Result<ResampleMap> {
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(Error::invalid("cell_size must be positive and finite"));
    }
    let n = coords.rows();
    let key_of = |i: usize| -> (i64, i64, i64) {
        let r = coords.row(i);
        (
            (r[0] / cell_size).floor() as i64,
            (r[1] / cell_size).floor() as i64,
            (r[2] / cell_size).floor() as i64,
        )
    };
    let mut cells: HashMap<(i64, i64, i64), usize> = HashMap::new();
    let mut keys: Vec<(i64, i64, i64)> = Vec::new();
    let mut point_keys = Vec::with_capacity(n);
    for i in 0..n {
        let key = key_of(i);
        point_keys.push(key);
        if !cells.contains_key(&key) {
            cells.insert(key, 0);
            keys.push(key);
        }
    }
    keys.sort_unstable();
    for (rank, key) in keys.iter().enumerate() {
        *cells.get_mut(key).unwrap() = rank;
    }
    let down_assign: Vec<usize> = point_keys.iter().map(|k| cells[k]).collect();
    let (member_offsets, member_indices) = members_from_assign(&down_assign, keys.len(), coords);

    let mut coarse = Mat::zeros(keys.len(), 3);
    for c in 0..keys.len() {
        let members = &member_indices[member_offsets[c]..member_offsets[c + 1]];
        let anchor = coords.row(members[0]);
        let mut sum = [0.0f64; 3];
        for &m in members {
            let r = coords.row(m);
            for a in 0..3 {
                sum[a] += r[a] - anchor[a];
            }
        }
        let inv = 1.0 / members.len() as f64;
        for a in 0..3 {
            coarse.set(c, a, anchor[a] + sum[a] * inv);
        }
    }

    let mut up_offsets = Vec::with_capacity(n + 1);
    up_offsets.push(0);
    for i in 0..n {
        up_offsets.push(i + 1);
    }
    let up_indices = down_assign.clone();
    let up_weights = vec![1.0; n];
    Ok(ResampleMap::new(
        ResampleKind::Grid,
        down_assign,
        coarse,
        member_offsets,
        member_indices,
        up_offsets,
        up_indices,
        up_weights,
    ))
}

/// Reduces fine features to one row per coarse point.
///
/// The mean is anchored at the first member in canonical order,
/// `first + mean(v - first)`, which makes the mean of identical values exact
/// so that pooling an unpooled matrix reproduces it bit for bit.
pub fn pool_features(fine: &Mat, map: &ResampleMap, reduce: Reduce) -> Result<Mat> {
    if fine.rows() != map.fine_len() {
        return Err(Error::invalid(format!(
            "pool: feature rows {} != map fine count {}",
            fine.rows(),
            map.fine_len()
        )));
    }
    let c = fine.cols();
    let mut out = Mat::zeros(map.coarse_len(), c);
    for cell in 0..map.coarse_len() {
        let members = map.members(cell);
        let row = out.row_mut(cell);
        match reduce {
            Reduce::Max => {
                row.copy_from_slice(fine.row(members[0]));
                for &m in &members[1..] {
                    for (o, &v) in row.iter_mut().zip(fine.row(m)) {
                        if v > *o {
                            *o = v;
                        }
                    }
                }
            }
            Reduce::Mean => {
                let anchor = fine.row(members[0]);
                for &m in members {
                    for (o, (&v, &a)) in row.iter_mut().zip(fine.row(m).iter().zip(anchor)) {
                        *o += v - a;
                    }
                }
                let inv = 1.0 / members.len() as f64;
                for (o, &a) in row.iter_mut().zip(anchor) {
                    *o = a + *o * inv;
                }
            }
        }
    }
    Ok(out)
}

/// Interpolates coarse features back to fine points using the map's
/// upsample weights; for grid maps this copies the parent row.
pub fn unpool_features(coarse: &Mat, map: &ResampleMap) -> Result<Mat> {
    if coarse.rows() != map.coarse_len() {
        return Err(Error::invalid(format!(
            "unpool: feature rows {} != map coarse count {}",
            coarse.rows(),
            map.coarse_len()
        )));
    }
    let c = coarse.cols();
    let mut out = Mat::zeros(map.fine_len(), c);
    for i in 0..map.fine_len() {
        let (idx, w) = map.up_row(i);
        let row = out.row_mut(i);
        for (&src, &weight) in idx.iter().zip(w) {
            for (o, &v) in row.iter_mut().zip(coarse.row(src)) {
                *o += weight * v;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::synthetic_cloud;
    use crate::rng::Counter;

    #[test]
    fn hand_partition() {
        let pts = Mat::from_rows(&[
            vec![0.1, 0.0, 0.0],
            vec![0.2, 0.0, 0.0],
            vec![1.1, 0.0, 0.0],
        ]);
        let map = grid_pool_map(&pts, 1.0).unwrap();
        assert_eq!(map.coarse_len(), 2);
        let c0 = map.coarse_coords().row(0);
        assert!((c0[0] - 0.15000000000000002).abs() < 1e-15);
        assert_eq!(map.coarse_coords().row(1), &[1.1, 0.0, 0.0]);
        assert_eq!(map.down_assign(), &[0, 0, 1]);
    }

    #[test]
    fn single_cell_when_cell_dwarfs_cloud() {
        let cloud = synthetic_cloud(50, 3, 1.0, 0);
        let map = grid_pool_map(cloud.coords(), 100.0).unwrap();
        assert_eq!(map.coarse_len(), 1);
        let centroid = map.coarse_coords().row(0);
        for a in 0..3 {
            let mean: f64 = (0..50).map(|i| cloud.coords().get(i, a)).sum::<f64>() / 50.0;
            assert!((centroid[a] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn partition_is_total_and_cells_contain_their_points() {
        let cloud = synthetic_cloud(512, 9, 2.0, 0);
        let s = 0.3;
        let map = grid_pool_map(cloud.coords(), s).unwrap();
        let mut count = 0;
        for c in 0..map.coarse_len() {
            count += map.members(c).len();
            for &m in map.members(c) {
                // Re-derive the key from coordinates.
                let r = cloud.coords().row(m);
                let key = (
                    (r[0] / s).floor() as i64,
                    (r[1] / s).floor() as i64,
                    (r[2] / s).floor() as i64,
                );
                let first = map.members(c)[0];
                let rf = cloud.coords().row(first);
                let key_first = (
                    (rf[0] / s).floor() as i64,
                    (rf[1] / s).floor() as i64,
                    (rf[2] / s).floor() as i64,
                );
                assert_eq!(key, key_first);
            }
        }
        assert_eq!(count, 512);
    }

    #[test]
    fn reduce_of_constants_and_two_elements() {
        let pts = Mat::from_rows(&[vec![0.0, 0.0, 0.0], vec![0.1, 0.0, 0.0]]);
        let map = grid_pool_map(&pts, 1.0).unwrap();
        let feats = Mat::from_rows(&[vec![1.0], vec![3.0]]);
        let mx = pool_features(&feats, &map, Reduce::Max).unwrap();
        assert_eq!(mx.row(0), &[3.0]);
        let mean = pool_features(&feats, &map, Reduce::Mean).unwrap();
        assert_eq!(mean.row(0), &[2.0]);
        let konst = Mat::from_rows(&[vec![7.0, -1.0], vec![7.0, -1.0]]);
        for r in [Reduce::Max, Reduce::Mean] {
            let out = pool_features(&konst, &map, r).unwrap();
            assert_eq!(out.row(0), &[7.0, -1.0]);
        }
    }

    #[test]
    fn pool_matches_per_cell_loop_oracle() {
        let cloud = synthetic_cloud(512, 21, 1.0, 0);
        let map = grid_pool_map(cloud.coords(), 0.25).unwrap();
        let mut rng = Counter::new(77, "feat");
        let mut feats = Mat::zeros(512, 8);
        for v in feats.data_mut() {
            *v = rng.next_range(-1.0, 1.0);
        }
        for reduce in [Reduce::Max, Reduce::Mean] {
            let got = pool_features(&feats, &map, reduce).unwrap();
            for cell in 0..map.coarse_len() {
                for ch in 0..8 {
                    let vals: Vec<f64> =
                        map.members(cell).iter().map(|&m| feats.get(m, ch)).collect();
                    let want = match reduce {
                        Reduce::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                        Reduce::Mean => {
                            let anchor = vals[0];
                            anchor
                                + vals.iter().map(|v| v - anchor).sum::<f64>()
                                    / vals.len() as f64
                        }
                    };
                    assert_eq!(got.get(cell, ch), want);
                }
            }
        }
    }

    #[test]
    fn unpool_copies_parent_rows() {
        let pts = Mat::from_rows(&[
            vec![0.1, 0.0, 0.0],
            vec![0.2, 0.0, 0.0],
            vec![1.1, 0.0, 0.0],
        ]);
        let map = grid_pool_map(&pts, 1.0).unwrap();
        let coarse = Mat::from_rows(&[vec![5.0], vec![9.0]]);
        let fine = unpool_features(&coarse, &map).unwrap();
        assert_eq!(fine.row(0), &[5.0]);
        assert_eq!(fine.row(1), &[5.0]);
        assert_eq!(fine.row(2), &[9.0]);
    }

    #[test]
    fn unpool_pool_preserves_constants() {
        let cloud = synthetic_cloud(128, 4, 1.0, 0);
        let map = grid_pool_map(cloud.coords(), 0.3).unwrap();
        let konst = Mat::from_vec(128, 2, vec![3.5; 256]);
        for reduce in [Reduce::Max, Reduce::Mean] {
            let pooled = pool_features(&konst, &map, reduce).unwrap();
            let back = unpool_features(&pooled, &map).unwrap();
            assert_eq!(back.data(), konst.data());
        }
    }

    #[test]
    fn pool_after_unpool_is_idempotent_on_mean_path() {
        let cloud = synthetic_cloud(128, 6, 1.0, 0);
        let map = grid_pool_map(cloud.coords(), 0.3).unwrap();
        let mut rng = Counter::new(1, "f");
        let mut feats = Mat::zeros(128, 4);
        for v in feats.data_mut() {
            *v = rng.next_range(-1.0, 1.0);
        }
        let pooled = pool_features(&feats, &map, Reduce::Mean).unwrap();
        let back = unpool_features(&pooled, &map).unwrap();
        let again = pool_features(&back, &map, Reduce::Mean).unwrap();
        assert_eq!(pooled.data(), again.data());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let pts = Mat::from_rows(&[vec![0.0, 0.0, 0.0]]);
        let map = grid_pool_map(&pts, 1.0).unwrap();
        let bad = Mat::zeros(3, 2);
        assert!(unpool_features(&bad, &map).is_err());
        assert!(pool_features(&bad, &map, Reduce::Max).is_err());
    }
}
