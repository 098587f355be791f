//! Farthest point sampling and the FPS+KNN resampling map.

use super::{dist_sq, knn_query, members_from_assign, Backend, ResampleKind, ResampleMap};
use crate::error::{Error, Result};
use crate::mat::Mat;

/// Greedy farthest point sampling. The seed is the lexicographically
/// smallest coordinate (so the selected set does not depend on point
/// order); each subsequent pick maximizes the minimum distance to the
/// selected set, ties broken by lowest index.
pub fn fps_select(coords: &Mat, m: usize) -> Result<Vec<usize>> {
    let p = coords.rows();
    if m == 0 || m > p {
        return Err(Error::invalid(format!(
            "m = {m} out of range for {p} points"
        )));
    }
    let mut seed = 0usize;
    for i in 1..p {
        if coords.row(i) < coords.row(seed) {
            seed = i;
        }
    }
    let mut selected = Vec::with_capacity(m);
    selected.push(seed);
    let mut min_d: Vec<f64> = (0..p)
        .map(|i| dist_sq(coords.row(i), coords.row(seed)))
        .collect();
    min_d[seed] = f64::NEG_INFINITY;
    while selected.len() < m {
        // Strict greater keeps the lowest index on ties; selected entries
        // are pinned at -inf so they never win again.
        let mut best = 0usize;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_d.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        selected.push(best);
        min_d[best] = f64::NEG_INFINITY;
        for i in 0..p {
            if min_d[i] > f64::NEG_INFINITY {
                let d = dist_sq(coords.row(i), coords.row(best));
                if d < min_d[i] {
                    min_d[i] = d;
                }
            }
        }
    }
    Ok(selected)
}

/// FPS downsampling with nearest-coarse assignment and inverse squared
/// distance interpolation over `interp_k` nearest coarse points.
pub fn fps_knn_map(fine_coords: &Mat, m: usize, interp_k: usize) -> Result<ResampleMap> {
    if interp_k == 0 || interp_k > m {
        return Err(Error::invalid(format!(
            "interp_k = {interp_k} out of range for m = {m}"
        )));
    }
    let selection = fps_select(fine_coords, m)?;
    let mut coarse = Mat::zeros(m, 3);
    for (c, &idx) in selection.iter().enumerate() {
        coarse.row_mut(c).copy_from_slice(fine_coords.row(idx));
    }
    let nearest = knn_query(&coarse, fine_coords, 1, Backend::Grid)?;
    let down_assign: Vec<usize> = (0..fine_coords.rows()).map(|i| nearest.row(i)[0]).collect();
    let (member_offsets, member_indices) = members_from_assign(&down_assign, m, fine_coords);

    let interp = knn_query(&coarse, fine_coords, interp_k, Backend::Grid)?;
    let fine_n = fine_coords.rows();
    let mut up_offsets = Vec::with_capacity(fine_n + 1);
    let mut up_indices = Vec::with_capacity(fine_n * interp_k);
    let mut up_weights = Vec::with_capacity(fine_n * interp_k);
    up_offsets.push(0);
    for i in 0..fine_n {
        let row = interp.row(i);
        let d: Vec<f64> = row
            .iter()
            .map(|&c| dist_sq(fine_coords.row(i), coarse.row(c)))
            .collect();
        if let Some(hit) = d.iter().position(|&v| v == 0.0) {
            // Coincident with a coarse point: copy it exactly.
            up_indices.push(row[hit]);
            up_weights.push(1.0);
        } else {
            let inv: Vec<f64> = d.iter().map(|&v| 1.0 / v).collect();
            let total: f64 = inv.iter().sum();
            for (n, &c) in row.iter().enumerate() {
                up_indices.push(c);
                up_weights.push(inv[n] / total);
            }
        }
        up_offsets.push(up_indices.len());
    }
    Ok(ResampleMap::new(
        ResampleKind::FpsKnn,
        down_assign,
        coarse,
        member_offsets,
        member_indices,
        up_offsets,
        up_indices,
        up_weights,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::synthetic_cloud;

    #[test]
    fn full_selection_is_a_permutation() {
        let cloud = synthetic_cloud(32, 5, 1.0, 0);
        let sel = fps_select(cloud.coords(), 32).unwrap();
        let mut sorted = sel.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..32).collect::<Vec<_>>());
    }

    #[test]
    fn unit_square_picks_opposite_corner() {
        let pts = Mat::from_rows(&[
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![1.0, 1.0, 0.0],
        ]);
        assert_eq!(fps_select(&pts, 2).unwrap(), vec![0, 3]);
    }

    #[test]
    fn m_out_of_range_rejected() {
        let pts = Mat::from_rows(&[vec![0.0, 0.0, 0.0]]);
        assert!(fps_select(&pts, 2).is_err());
        assert!(fps_select(&pts, 0).is_err());
    }

    #[test]
    fn greedy_invariant_on_random_cloud() {
        let cloud = synthetic_cloud(64, 11, 1.0, 0);
        let coords = cloud.coords();
        let sel = fps_select(coords, 32).unwrap();
        for t in 1..sel.len() {
            let chosen = &sel[..t];
            let min_to = |i: usize| {
                chosen
                    .iter()
                    .map(|&s| dist_sq(coords.row(i), coords.row(s)))
                    .fold(f64::INFINITY, f64::min)
            };
            let picked = min_to(sel[t]);
            for c in 0..coords.rows() {
                if !sel[..=t].contains(&c) {
                    assert!(
                        picked >= min_to(c),
                        "step {t}: candidate {c} beats pick {}",
                        sel[t]
                    );
                }
            }
        }
    }

    #[test]
    fn line_interpolation_weights() {
        let pts = Mat::from_rows(&[
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![2.0, 0.0, 0.0],
        ]);
        let map = fps_knn_map(&pts, 2, 2).unwrap();
        // FPS picks 0 then 2; the middle point interpolates evenly.
        let (idx, w) = map.up_row(1);
        assert_eq!(idx, &[0, 1]);
        assert_eq!(w, &[0.5, 0.5]);
    }

    #[test]
    fn identity_resampling_when_m_equals_p() {
        let cloud = synthetic_cloud(16, 2, 1.0, 0);
        let map = fps_knn_map(cloud.coords(), 16, 3).unwrap();
        // Every fine point coincides with a coarse point.
        for i in 0..16 {
            let (idx, w) = map.up_row(i);
            assert_eq!(w, &[1.0]);
            assert_eq!(map.coarse_coords().row(idx[0]), cloud.coords().row(i));
        }
        let mut assigned = map.down_assign().to_vec();
        assigned.sort_unstable();
        assigned.dedup();
        assert_eq!(assigned.len(), 16, "down_assign is a bijection");
    }

    #[test]
    fn down_assign_is_nearest_by_brute_force() {
        let cloud = synthetic_cloud(256, 17, 1.0, 0);
        let coords = cloud.coords();
        let map = fps_knn_map(coords, 64, 3).unwrap();
        for i in 0..coords.rows() {
            let assigned = map.down_assign()[i];
            let best = (0..64)
                .map(|c| (dist_sq(coords.row(i), map.coarse_coords().row(c)), c))
                .min_by(|a, b| a.partial_cmp(b).unwrap())
                .unwrap()
                .1;
            assert_eq!(assigned, best);
        }
    }

    #[test]
    fn up_weights_sum_to_one() {
        let cloud = synthetic_cloud(128, 23, 1.0, 0);
        let map = fps_knn_map(cloud.coords(), 40, 3).unwrap();
        for i in 0..128 {
            let (_, w) = map.up_row(i);
            let s: f64 = w.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|&v| v >= 0.0));
        }
    }
}
