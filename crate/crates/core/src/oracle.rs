//! Scalar reference implementations of the sequence operator pieces.
//!
//! These are deliberately naive per-point loops, kept independent of the
//! batched kernels in [`crate::seqops`] but with the same summation order
//! (ascending shared index, bias added after the dot product), so agreement
//! is bit-exact. Tests and the CLI `oracle` subcommand compare against them.

use crate::config::OperatorKind;
use crate::mat::{relu, Mat, NORM_EPS};
use crate::seqops::{MlpParams, SequenceBlockParams};
use crate::spatial::NeighborTable;

/// Scalar dot-then-bias linear layer on one row.
fn linear_row(x: &[f64], w: &Mat, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (o, out_v) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (i, &xv) in x.iter().enumerate() {
            acc += xv * w.get(i, o);
        }
        *out_v = acc + b[o];
    }
    out
}

/// Two-layer MLP on row `row` of `x`, fully scalar.
pub fn mlp_scalar(x: &Mat, row: usize, phi: &MlpParams) -> Vec<f64> {
    let mut hidden = linear_row(x.row(row), &phi.w0, &phi.b0);
    for h in &mut hidden {
        *h = relu(*h);
    }
    linear_row(&hidden, &phi.w1, &phi.b1)
}

fn softmax_columns(logits: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = logits.len();
    let d = logits[0].len();
    let mut out = vec![vec![0.0; d]; k];
    for ch in 0..d {
        let mut m = f64::NEG_INFINITY;
        for row in logits {
            if row[ch] > m {
                m = row[ch];
            }
        }
        let mut denom = 0.0;
        for (n, row) in logits.iter().enumerate() {
            let e = (row[ch] - m).exp();
            out[n][ch] = e;
            denom += e;
        }
        for row in out.iter_mut().take(k) {
            row[ch] /= denom;
        }
    }
    out
}

/// Vector attention, one point at a time.
pub fn va_reference(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    table: &NeighborTable,
    phi: &MlpParams,
) -> Mat {
    let c = q.cols();
    let mut out = Mat::zeros(q.rows(), c);
    for i in 0..q.rows() {
        let mut logits = Vec::new();
        for &j in table.row(i) {
            let pair: Vec<f64> = (0..c).map(|ch| q.get(i, ch) - k.get(j, ch)).collect();
            let pair_mat = Mat::from_rows(&[pair]);
            logits.push(mlp_scalar(&pair_mat, 0, phi));
        }
        let weights = softmax_columns(&logits);
        let orow = out.row_mut(i);
        for (n, &j) in table.row(i).iter().enumerate() {
            for ch in 0..c {
                orow[ch] += weights[n][ch] * v.get(j, ch);
            }
        }
    }
    out
}

/// Grouped vector attention: one scalar weight per group of channels.
pub fn gva_reference(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    table: &NeighborTable,
    phi: &MlpParams,
    groups: usize,
) -> Mat {
    let c = q.cols();
    let group_size = c / groups;
    let mut out = Mat::zeros(q.rows(), c);
    for i in 0..q.rows() {
        let mut logits = Vec::new();
        for &j in table.row(i) {
            let pair: Vec<f64> = (0..c).map(|ch| q.get(i, ch) - k.get(j, ch)).collect();
            let pair_mat = Mat::from_rows(&[pair]);
            logits.push(mlp_scalar(&pair_mat, 0, phi));
        }
        let weights = softmax_columns(&logits);
        let orow = out.row_mut(i);
        for (n, &j) in table.row(i).iter().enumerate() {
            for l in 0..groups {
                for m in 0..group_size {
                    let ch = l * group_size + m;
                    orow[ch] += weights[n][l] * v.get(j, ch);
                }
            }
        }
    }
    out
}

/// MLP-maxpool: channelwise max of phi over each neighborhood.
pub fn mlp_reference(values: &Mat, table: &NeighborTable, phi: &MlpParams) -> Mat {
    let c = values.cols();
    let mut out = Mat::zeros(values.rows(), c);
    for i in 0..values.rows() {
        let mut first = true;
        for &j in table.row(i) {
            let e = mlp_scalar(values, j, phi);
            let orow = out.row_mut(i);
            if first {
                orow.copy_from_slice(&e);
                first = false;
            } else {
                for (o, &v) in orow.iter_mut().zip(&e) {
                    if v > *o {
                        *o = v;
                    }
                }
            }
        }
    }
    out
}

fn normalize_row(x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let c = x.len();
    let mean = x.iter().sum::<f64>() / c as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
    let inv = 1.0 / (var + NORM_EPS).sqrt();
    (0..c).map(|j| (x[j] - mean) * inv * gamma[j] + beta[j]).collect()
}

/// The full sequence block composed from the scalar pieces above. Positional
/// encoding is not modeled here; the reference only covers the plain block.
pub fn block_reference(
    features: &Mat,
    table: &NeighborTable,
    params: &SequenceBlockParams,
    kind: OperatorKind,
) -> Mat {
    assert!(params.pos.is_none(), "reference block has no positional term");
    let m = features.rows();
    let c = features.cols();
    let mut xn = Mat::zeros(m, c);
    for i in 0..m {
        let row = normalize_row(features.row(i), &params.norm1.gamma, &params.norm1.beta);
        xn.row_mut(i).copy_from_slice(&row);
    }
    let mut embedded = Mat::zeros(m, c);
    for i in 0..m {
        let row = linear_row(xn.row(i), &params.embed.w, &params.embed.b);
        embedded.row_mut(i).copy_from_slice(&row);
    }
    let extracted = match kind {
        OperatorKind::Va | OperatorKind::Gva => {
            let qkv = params.qkv.as_ref().expect("attention block has qkv");
            let mut q = Mat::zeros(m, c);
            let mut kk = Mat::zeros(m, c);
            let mut v = Mat::zeros(m, c);
            for i in 0..m {
                q.row_mut(i)
                    .copy_from_slice(&linear_row(embedded.row(i), &qkv.q.w, &qkv.q.b));
                kk.row_mut(i)
                    .copy_from_slice(&linear_row(embedded.row(i), &qkv.k.w, &qkv.k.b));
                v.row_mut(i)
                    .copy_from_slice(&linear_row(embedded.row(i), &qkv.v.w, &qkv.v.b));
            }
            match kind {
                OperatorKind::Va => va_reference(&q, &kk, &v, table, &params.phi),
                _ => gva_reference(&q, &kk, &v, table, &params.phi, params.groups),
            }
        }
        OperatorKind::Mlp => mlp_reference(&embedded, table, &params.phi),
    };
    let mut out = Mat::zeros(m, c);
    for i in 0..m {
        let n2 = normalize_row(extracted.row(i), &params.norm2.gamma, &params.norm2.beta);
        let upd = linear_row(&n2, &params.update.w, &params.update.b);
        let orow = out.row_mut(i);
        for ch in 0..c {
            orow[ch] = upd[ch] + features.get(i, ch);
        }
    }
    out
}
