//! The knn-based sequence operator: embed, neighbor fetch, local extraction,
//! update with residual. Three interchangeable local extractors are
//! provided: vector attention, grouped vector attention, and MLP-maxpool.
//!
//! All kernels fix their summation order (ascending neighbor index, then
//! ascending channel) so outputs are bit-identical to the scalar reference
//! implementations in [`crate::oracle`].

mod backward;
mod gradcheck;

pub use backward::{
    block_backward, gva_backward, mlp_extract_backward, va_backward, BlockGrads, ExtractGrads,
};
pub use gradcheck::{
    finite_diff_check, gradcheck_block, gradcheck_extractor, FlatSpace, GradCheckReport,
    GRADCHECK_THRESHOLD,
};

use crate::config::OperatorKind;
use crate::error::{Error, Result};
use crate::mat::{row_normalize, Mat};
use crate::spatial::NeighborTable;
use rayon::prelude::*;

/// Points per parallel task in the extractors; bounds temporary pair-matrix
/// memory while keeping scheduling overhead low.
const CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    /// `in x out`.
    pub w: Mat,
    pub b: Vec<f64>,
}

impl LinearParams {
    pub fn forward(&self, x: &Mat) -> Mat {
        x.linear(&self.w, &self.b)
    }
}

/// Two-layer MLP: linear, relu, linear.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w0: Mat,
    pub b0: Vec<f64>,
    pub w1: Mat,
    pub b1: Vec<f64>,
}

impl MlpParams {
    pub fn in_width(&self) -> usize {
        self.w0.rows()
    }

    pub fn out_width(&self) -> usize {
        self.w1.cols()
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut h = x.linear(&self.w0, &self.b0);
        h.relu_inplace();
        h.linear(&self.w1, &self.b1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl NormParams {
    pub fn forward(&self, x: &Mat) -> Mat {
        row_normalize(x, &self.gamma, &self.beta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QkvParams {
    pub q: LinearParams,
    pub k: LinearParams,
    pub v: LinearParams,
}

/// Everything one sequence block owns.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBlockParams {
    pub norm1: NormParams,
    pub embed: LinearParams,
    /// Query/key/value projections; present for va and gva.
    pub qkv: Option<QkvParams>,
    /// Attention weight MLP (va: C -> C, gva: C -> g) or the mlp-extractor
    /// embedding (C -> C).
    pub phi: MlpParams,
    /// Group count for gva; va behaves as groups == channels.
    pub groups: usize,
    /// Optional relative-position MLP (3 -> C -> C), added to both the
    /// attention relation and the values.
    pub pos: Option<MlpParams>,
    pub norm2: NormParams,
    pub update: LinearParams,
}

/// Pre-projected attention inputs at one scale.
#[derive(Debug, Clone, Copy)]
pub struct LocalExtractInputs<'a> {
    pub queries: &'a Mat,
    pub keys: &'a Mat,
    pub values: &'a Mat,
    pub table: &'a NeighborTable,
}

/// out[(i * K + n)] = features[table[i][n]]; the M x K x C gather flattened
/// to an (M * K) x C matrix.
pub fn gather_neighbors(features: &Mat, table: &NeighborTable) -> Mat {
    let k = table.k();
    let c = features.cols();
    let mut out = Mat::zeros(table.len() * k, c);
    for i in 0..table.len() {
        for (n, &j) in table.row(i).iter().enumerate() {
            assert!(j < features.rows(), "neighbor index out of range");
            out.row_mut(i * k + n).copy_from_slice(features.row(j));
        }
    }
    out
}

/// Softmax along the neighbor axis, independently per point and channel,
/// with max-subtraction. `scores` is (M * K) x D, grouped in runs of `k`.
pub fn neighbor_softmax(scores: &Mat, k: usize) -> Mat {
    assert_eq!(scores.rows() % k, 0);
    let mut out = scores.clone();
    softmax_groups_inplace(&mut out, k);
    out
}

fn softmax_groups_inplace(scores: &mut Mat, k: usize) {
    let d = scores.cols();
    let points = scores.rows() / k;
    for i in 0..points {
        for ch in 0..d {
            let mut m = f64::NEG_INFINITY;
            for n in 0..k {
                let v = scores.get(i * k + n, ch);
                if v > m {
                    m = v;
                }
            }
            let mut denom = 0.0;
            for n in 0..k {
                let e = (scores.get(i * k + n, ch) - m).exp();
                scores.set(i * k + n, ch, e);
                denom += e;
            }
            for n in 0..k {
                let v = scores.get(i * k + n, ch) / denom;
                scores.set(i * k + n, ch, v);
            }
        }
    }
}

/// Vector attention (phi output width = C): w_ij = phi(q_i - k_j), output
/// is the softmax-weighted channelwise sum of neighbor values.
pub fn va_extract(inputs: LocalExtractInputs<'_>, phi: &MlpParams) -> Result<Mat> {
    let c = inputs.queries.cols();
    if phi.out_width() != c || phi.in_width() != c {
        return Err(Error::invalid(format!(
            "va phi maps {} -> {}, expected {} -> {}",
            phi.in_width(),
            phi.out_width(),
            c,
            c
        )));
    }
    attention_extract(inputs, phi, c, None)
}

/// Grouped vector attention (phi output width = groups): channels are split
/// evenly into groups sharing one scalar weight per neighbor.
pub fn gva_extract(inputs: LocalExtractInputs<'_>, phi: &MlpParams, groups: usize) -> Result<Mat> {
    let c = inputs.queries.cols();
    if groups == 0 || c % groups != 0 {
        return Err(Error::invalid(format!(
            "groups {groups} does not divide channel count {c}"
        )));
    }
    if phi.out_width() != groups || phi.in_width() != c {
        return Err(Error::invalid(format!(
            "gva phi maps {} -> {}, expected {} -> {}",
            phi.in_width(),
            phi.out_width(),
            c,
            groups
        )));
    }
    attention_extract(inputs, phi, groups, None)
}

/// Shared va/gva kernel; `groups == C` recovers plain vector attention.
/// `pos` adds a relative-position embedding to the relation and the values.
fn attention_extract(
    inputs: LocalExtractInputs<'_>,
    phi: &MlpParams,
    groups: usize,
    pos: Option<(&MlpParams, &Mat)>,
) -> Result<Mat> {
    let LocalExtractInputs {
        queries,
        keys,
        values,
        table,
    } = inputs;
    let m = queries.rows();
    let c = queries.cols();
    if keys.rows() != m || values.rows() != m || keys.cols() != c || values.cols() != c {
        return Err(Error::invalid("q/k/v shapes disagree"));
    }
    if table.len() != m {
        return Err(Error::invalid("neighbor table does not match point count"));
    }
    let k = table.k();
    let group_size = c / groups;
    let mut out = Mat::zeros(m, c);
    out.data_mut()
        .par_chunks_mut(CHUNK * c)
        .enumerate()
        .for_each(|(chunk_idx, out_chunk)| {
            let start = chunk_idx * CHUNK;
            let count = out_chunk.len() / c;
            // Relation rows q_i - k_j for every (point, neighbor) pair.
            let mut pair = Mat::zeros(count * k, c);
            for i in 0..count {
                let q = queries.row(start + i);
                for (n, &j) in table.row(start + i).iter().enumerate() {
                    let kj = keys.row(j);
                    let row = pair.row_mut(i * k + n);
                    for ch in 0..c {
                        row[ch] = q[ch] - kj[ch];
                    }
                }
            }
            let delta = pos.map(|(pos_mlp, coords)| {
                let mut diffs = Mat::zeros(count * k, 3);
                for i in 0..count {
                    let pi = coords.row(start + i);
                    for (n, &j) in table.row(start + i).iter().enumerate() {
                        let pj = coords.row(j);
                        let row = diffs.row_mut(i * k + n);
                        for a in 0..3 {
                            row[a] = pi[a] - pj[a];
                        }
                    }
                }
                pos_mlp.forward(&diffs)
            });
            if let Some(d) = &delta {
                pair.add_assign(d);
            }
            let mut weights = phi.forward(&pair);
            softmax_groups_inplace(&mut weights, k);
            for i in 0..count {
                let orow = &mut out_chunk[i * c..(i + 1) * c];
                for (n, &j) in table.row(start + i).iter().enumerate() {
                    let vrow = values.row(j);
                    let wrow = weights.row(i * k + n);
                    let drow = delta.as_ref().map(|d| d.row(i * k + n));
                    for ch in 0..c {
                        let w = wrow[ch / group_size];
                        let v = match drow {
                            Some(d) => vrow[ch] + d[ch],
                            None => vrow[ch],
                        };
                        orow[ch] += w * v;
                    }
                }
            }
        });
    debug_assert!(out.is_finite(), "attention output must be finite");
    Ok(out)
}

/// MLP-maxpool extractor: out_i = channelwise max over neighbors of
/// phi(values_j). phi depends only on the source row, so it runs once per
/// point before the gather.
pub fn mlp_extract(values: &Mat, table: &NeighborTable, phi: &MlpParams) -> Result<Mat> {
    let c = values.cols();
    if phi.out_width() != c || phi.in_width() != c {
        return Err(Error::invalid(format!(
            "mlp phi maps {} -> {}, expected {} -> {}",
            phi.in_width(),
            phi.out_width(),
            c,
            c
        )));
    }
    if table.len() != values.rows() {
        return Err(Error::invalid("neighbor table does not match point count"));
    }
    let embedded = phi.forward(values);
    let mut out = Mat::zeros(values.rows(), c);
    out.data_mut()
        .par_chunks_mut(CHUNK * c)
        .enumerate()
        .for_each(|(chunk_idx, out_chunk)| {
            let start = chunk_idx * CHUNK;
            for (i, orow) in out_chunk.chunks_mut(c).enumerate() {
                let row = table.row(start + i);
                orow.copy_from_slice(embedded.row(row[0]));
                for &j in &row[1..] {
                    for (o, &v) in orow.iter_mut().zip(embedded.row(j)) {
                        if v > *o {
                            *o = v;
                        }
                    }
                }
            }
        });
    debug_assert!(out.is_finite());
    Ok(out)
}

/// One application of the sequence operator:
/// normalize, embed, extract over neighbors, normalize, update, residual.
pub fn sequence_block_forward(
    features: &Mat,
    coords: &Mat,
    table: &NeighborTable,
    params: &SequenceBlockParams,
    kind: OperatorKind,
) -> Result<Mat> {
    let xn = params.norm1.forward(features);
    let embedded = params.embed.forward(&xn);
    let pos = params.pos.as_ref().map(|p| (p, coords));
    let extracted = match kind {
        OperatorKind::Va | OperatorKind::Gva => {
            let qkv = params
                .qkv
                .as_ref()
                .ok_or_else(|| Error::invalid("attention block lacks q/k/v projections"))?;
            let q = qkv.q.forward(&embedded);
            let k = qkv.k.forward(&embedded);
            let v = qkv.v.forward(&embedded);
            let inputs = LocalExtractInputs {
                queries: &q,
                keys: &k,
                values: &v,
                table,
            };
            let groups = match kind {
                OperatorKind::Va => features.cols(),
                _ => params.groups,
            };
            if kind == OperatorKind::Va && params.phi.out_width() != features.cols() {
                return Err(Error::invalid("va phi width mismatch"));
            }
            if kind == OperatorKind::Gva
                && (groups == 0
                    || features.cols() % groups != 0
                    || params.phi.out_width() != groups)
            {
                return Err(Error::invalid("gva group/phi width mismatch"));
            }
            attention_extract(inputs, &params.phi, groups, pos)?
        }
        OperatorKind::Mlp => mlp_extract(&embedded, table, &params.phi)?,
    };
    let mut out = params.norm2.forward(&extracted).linear(&params.update.w, &params.update.b);
    out.add_assign(features);
    debug_assert!(out.is_finite(), "block output must be finite");
    Ok(out)
}

/// Deterministic random parameters for a block; used by tests and the
/// gradient-check harness.
pub fn random_block_params(
    kind: OperatorKind,
    channels: usize,
    groups: usize,
    seed: u64,
    scale: f64,
) -> SequenceBlockParams {
    use crate::rng::Counter;
    let mk = |name: &str, rows: usize, cols: usize| -> Mat {
        let mut rng = Counter::new(seed, name);
        let mut m = Mat::zeros(rows, cols);
        for v in m.data_mut() {
            *v = rng.next_range(-scale, scale);
        }
        m
    };
    let vecp = |name: &str, n: usize| -> Vec<f64> {
        let mut rng = Counter::new(seed, name);
        (0..n).map(|_| rng.next_range(-scale, scale)).collect()
    };
    let c = channels;
    let phi_out = match kind {
        OperatorKind::Va | OperatorKind::Mlp => c,
        OperatorKind::Gva => groups,
    };
    SequenceBlockParams {
        norm1: NormParams {
            gamma: vecp("norm1.gamma", c).iter().map(|v| 1.0 + v).collect(),
            beta: vecp("norm1.beta", c),
        },
        embed: LinearParams {
            w: mk("embed.w", c, c),
            b: vecp("embed.b", c),
        },
        qkv: match kind {
            OperatorKind::Mlp => None,
            _ => Some(QkvParams {
                q: LinearParams {
                    w: mk("q.w", c, c),
                    b: vecp("q.b", c),
                },
                k: LinearParams {
                    w: mk("k.w", c, c),
                    b: vecp("k.b", c),
                },
                v: LinearParams {
                    w: mk("v.w", c, c),
                    b: vecp("v.b", c),
                },
            }),
        },
        phi: MlpParams {
            w0: mk("phi.w0", c, c),
            b0: vecp("phi.b0", c),
            w1: mk("phi.w1", c, phi_out),
            b1: vecp("phi.b1", phi_out),
        },
        groups: match kind {
            OperatorKind::Va => c,
            OperatorKind::Gva => groups,
            OperatorKind::Mlp => 1,
        },
        pos: None,
        norm2: NormParams {
            gamma: vecp("norm2.gamma", c).iter().map(|v| 1.0 + v).collect(),
            beta: vecp("norm2.beta", c),
        },
        update: LinearParams {
            w: mk("update.w", c, c),
            b: vecp("update.b", c),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::synthetic_cloud;
    use crate::oracle;
    use crate::rng::Counter;
    use crate::spatial::{knn_query, Backend};

    fn random_mat(rows: usize, cols: usize, seed: u64, name: &str) -> Mat {
        let mut rng = Counter::new(seed, name);
        let mut m = Mat::zeros(rows, cols);
        for v in m.data_mut() {
            *v = rng.next_range(-1.0, 1.0);
        }
        m
    }

    fn self_table(m: usize, k: usize) -> NeighborTable {
        // Row i = [i, i, ...]; only valid for tests.
        let mut flat = Vec::with_capacity(m * k);
        for i in 0..m {
            flat.extend(std::iter::repeat(i).take(k));
        }
        NeighborTable::from_flat(flat, k, m)
    }

    fn random_inputs(
        m: usize,
        c: usize,
        k: usize,
        seed: u64,
    ) -> (Mat, Mat, Mat, NeighborTable) {
        let cloud = synthetic_cloud(m, seed, 1.0, 0);
        let table = knn_query(cloud.coords(), cloud.coords(), k, Backend::Brute).unwrap();
        (
            random_mat(m, c, seed, "q"),
            random_mat(m, c, seed.wrapping_add(1), "k"),
            random_mat(m, c, seed.wrapping_add(2), "v"),
            table,
        )
    }

    fn random_phi(c: usize, out: usize, seed: u64) -> MlpParams {
        MlpParams {
            w0: random_mat(c, c, seed, "phi.w0"),
            b0: random_mat(1, c, seed, "phi.b0").row(0).to_vec(),
            w1: random_mat(c, out, seed, "phi.w1"),
            b1: random_mat(1, out, seed, "phi.b1").row(0).to_vec(),
        }
    }

    #[test]
    fn gather_self_and_constant() {
        let feats = random_mat(8, 4, 0, "f");
        let table = self_table(8, 3);
        let got = gather_neighbors(&feats, &table);
        for i in 0..8 {
            assert_eq!(got.row(i * 3), feats.row(i));
        }
        let konst = Mat::from_vec(8, 2, vec![5.0; 16]);
        let got = gather_neighbors(&konst, &table);
        assert!(got.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn gather_matches_loop_oracle() {
        let cloud = synthetic_cloud(64, 3, 1.0, 0);
        let table = knn_query(cloud.coords(), cloud.coords(), 5, Backend::Brute).unwrap();
        let feats = random_mat(64, 8, 9, "f");
        let got = gather_neighbors(&feats, &table);
        for i in 0..64 {
            for n in 0..5 {
                for ch in 0..8 {
                    assert_eq!(got.get(i * 5 + n, ch), feats.get(table.row(i)[n], ch));
                }
            }
        }
    }

    #[test]
    fn softmax_uniform_stable_and_normalized() {
        let zeros = Mat::zeros(8, 2);
        let w = neighbor_softmax(&zeros, 4);
        assert!(w.data().iter().all(|&v| v == 0.25));

        let spiky = Mat::from_vec(2, 1, vec![1000.0, -1000.0]);
        let w = neighbor_softmax(&spiky, 2);
        assert_eq!(w.get(0, 0), 1.0);
        assert_eq!(w.get(1, 0), 0.0);

        let scores = random_mat(32 * 4, 8, 5, "s");
        let w = neighbor_softmax(&scores, 4);
        for i in 0..32 {
            for ch in 0..8 {
                let s: f64 = (0..4).map(|n| w.get(i * 4 + n, ch)).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn va_zero_phi_is_uniform_attention() {
        let (q, k, v, table) = random_inputs(16, 8, 4, 1);
        let phi = MlpParams {
            w0: Mat::zeros(8, 8),
            b0: vec![0.0; 8],
            w1: Mat::zeros(8, 8),
            b1: vec![0.0; 8],
        };
        let out = va_extract(
            LocalExtractInputs {
                queries: &q,
                keys: &k,
                values: &v,
                table: &table,
            },
            &phi,
        )
        .unwrap();
        for i in 0..16 {
            for ch in 0..8 {
                let mean: f64 = table.row(i).iter().map(|&j| 0.25 * v.get(j, ch)).sum();
                assert!((out.get(i, ch) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn va_single_self_neighbor_returns_values() {
        let q = random_mat(8, 4, 2, "q");
        let k = random_mat(8, 4, 3, "k");
        let v = random_mat(8, 4, 4, "v");
        let table = self_table(8, 1);
        let phi = random_phi(4, 4, 5);
        let out = va_extract(
            LocalExtractInputs {
                queries: &q,
                keys: &k,
                values: &v,
                table: &table,
            },
            &phi,
        )
        .unwrap();
        assert_eq!(out.data(), v.data());
    }

    #[test]
    fn va_matches_loop_oracle() {
        let (q, k, v, table) = random_inputs(16, 8, 4, 7);
        let phi = random_phi(8, 8, 8);
        let got = va_extract(
            LocalExtractInputs {
                queries: &q,
                keys: &k,
                values: &v,
                table: &table,
            },
            &phi,
        )
        .unwrap();
        let want = oracle::va_reference(&q, &k, &v, &table, &phi);
        assert_eq!(got.data(), want.data());
    }

    #[test]
    fn gva_matches_loop_oracle() {
        let (q, k, v, table) = random_inputs(16, 8, 4, 9);
        let phi = random_phi(8, 2, 10);
        let got = gva_extract(
            LocalExtractInputs {
                queries: &q,
                keys: &k,
                values: &v,
                table: &table,
            },
            &phi,
            2,
        )
        .unwrap();
        let want = oracle::gva_reference(&q, &k, &v, &table, &phi, 2);
        assert_eq!(got.data(), want.data());
    }

    #[test]
    fn gva_with_full_groups_equals_va() {
        let (q, k, v, table) = random_inputs(12, 8, 4, 11);
        let phi = random_phi(8, 8, 12);
        let inputs = LocalExtractInputs {
            queries: &q,
            keys: &k,
            values: &v,
            table: &table,
        };
        let va = va_extract(inputs, &phi).unwrap();
        let gva = gva_extract(inputs, &phi, 8).unwrap();
        assert_eq!(va.data(), gva.data());
    }

    #[test]
    fn gva_single_group_is_scalar_attention() {
        let (q, k, v, table) = random_inputs(12, 8, 4, 13);
        let phi = random_phi(8, 1, 14);
        let inputs = LocalExtractInputs {
            queries: &q,
            keys: &k,
            values: &v,
            table: &table,
        };
        let got = gva_extract(inputs, &phi, 1).unwrap();
        // One weight per neighbor broadcast over all channels.
        for i in 0..12 {
            let mut pair_rows = Vec::new();
            for &j in table.row(i) {
                let row: Vec<f64> = (0..8).map(|ch| q.get(i, ch) - k.get(j, ch)).collect();
                pair_rows.push(row);
            }
            let logits: Vec<f64> = pair_rows
                .iter()
                .map(|r| oracle::mlp_scalar(&Mat::from_rows(&[r.clone()]), 0, &phi)[0])
                .collect();
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
            let denom: f64 = exps.iter().sum();
            for ch in 0..8 {
                let mut acc = 0.0;
                for (n, &j) in table.row(i).iter().enumerate() {
                    acc += exps[n] / denom * v.get(j, ch);
                }
                assert_eq!(got.get(i, ch), acc);
            }
        }
    }

    #[test]
    fn gva_rejects_bad_groups() {
        let (q, k, v, table) = random_inputs(8, 8, 4, 15);
        let phi = random_phi(8, 3, 16);
        let inputs = LocalExtractInputs {
            queries: &q,
            keys: &k,
            values: &v,
            table: &table,
        };
        assert!(gva_extract(inputs, &phi, 3).is_err());
    }

    #[test]
    fn mlp_identity_phi_on_self_table_returns_values() {
        let v = random_mat(8, 4, 17, "v");
        let table = self_table(8, 1);
        let mut w0 = Mat::zeros(4, 4);
        let mut w1 = Mat::zeros(4, 4);
        for i in 0..4 {
            w0.set(i, i, 1.0);
            w1.set(i, i, 1.0);
        }
        // Bias lifts values above zero so relu passes them through; then
        // the second layer subtracts it back via b1.
        let phi = MlpParams {
            w0,
            b0: vec![10.0; 4],
            w1,
            b1: vec![-10.0; 4],
        };
        let out = mlp_extract(&v, &table, &phi).unwrap();
        for (a, b) in out.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mlp_is_invariant_to_neighbor_order() {
        let cloud = synthetic_cloud(32, 19, 1.0, 0);
        let table = knn_query(cloud.coords(), cloud.coords(), 4, Backend::Brute).unwrap();
        let v = random_mat(32, 8, 20, "v");
        let phi = random_phi(8, 8, 21);
        let a = mlp_extract(&v, &table, &phi).unwrap();
        // Reverse every neighbor row.
        let mut flat = Vec::new();
        for i in 0..32 {
            let mut row = table.row(i).to_vec();
            row.reverse();
            flat.extend(row);
        }
        let reversed = NeighborTable::from_flat(flat, 4, 32);
        let b = mlp_extract(&v, &reversed, &phi).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn mlp_matches_loop_oracle() {
        let cloud = synthetic_cloud(16, 22, 1.0, 0);
        let table = knn_query(cloud.coords(), cloud.coords(), 4, Backend::Brute).unwrap();
        let v = random_mat(16, 8, 23, "v");
        let phi = random_phi(8, 8, 24);
        let got = mlp_extract(&v, &table, &phi).unwrap();
        let want = oracle::mlp_reference(&v, &table, &phi);
        assert_eq!(got.data(), want.data());
    }

    #[test]
    fn block_with_zero_update_is_identity() {
        for kind in OperatorKind::ALL {
            let mut params = random_block_params(kind, 8, 2, 30, 0.5);
            params.update.w = Mat::zeros(8, 8);
            params.update.b = vec![0.0; 8];
            let cloud = synthetic_cloud(16, 31, 1.0, 0);
            let table = knn_query(cloud.coords(), cloud.coords(), 4, Backend::Brute).unwrap();
            let feats = random_mat(16, 8, 32, "f");
            let out =
                sequence_block_forward(&feats, cloud.coords(), &table, &params, kind).unwrap();
            assert_eq!(out.data(), feats.data(), "kind {kind}");
        }
    }

    #[test]
    fn block_constant_rows_stay_constant_for_mlp() {
        let params = random_block_params(OperatorKind::Mlp, 8, 1, 33, 0.5);
        let cloud = synthetic_cloud(16, 34, 1.0, 0);
        let table = knn_query(cloud.coords(), cloud.coords(), 4, Backend::Brute).unwrap();
        let mut feats = Mat::zeros(16, 8);
        for i in 0..16 {
            for ch in 0..8 {
                feats.set(i, ch, 0.25 * ch as f64 - 1.0);
            }
        }
        let out =
            sequence_block_forward(&feats, cloud.coords(), &table, &params, OperatorKind::Mlp)
                .unwrap();
        for i in 1..16 {
            assert_eq!(out.row(i), out.row(0));
        }
    }

    #[test]
    fn block_matches_composed_oracle() {
        for kind in OperatorKind::ALL {
            let params = random_block_params(kind, 16, 4, 40, 0.5);
            let cloud = synthetic_cloud(32, 41, 1.0, 0);
            let table = knn_query(cloud.coords(), cloud.coords(), 4, Backend::Brute).unwrap();
            let feats = random_mat(32, 16, 42, "f");
            let got =
                sequence_block_forward(&feats, cloud.coords(), &table, &params, kind).unwrap();
            let want = oracle::block_reference(&feats, &table, &params, kind);
            assert_eq!(got.data(), want.data(), "kind {kind}");
            assert!(got.is_finite());
        }
    }
}
