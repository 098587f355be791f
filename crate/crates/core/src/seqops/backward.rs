//! Analytic gradients for the extractors and the full sequence block,
//! written for the small problem sizes the gradient checker uses. The loss
//! convention throughout is a scalar downstream gradient `dout` over the
//! operator output.

use super::{LocalExtractInputs, MlpParams, SequenceBlockParams};
use crate::config::OperatorKind;
use crate::mat::{Mat, NORM_EPS};
use crate::spatial::NeighborTable;

#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub w0: Mat,
    pub b0: Vec<f64>,
    pub w1: Mat,
    pub b1: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExtractGrads {
    pub queries: Mat,
    pub keys: Mat,
    pub values: Mat,
    pub phi: MlpGrads,
}

fn colsum(m: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (o, &v) in out.iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
    out
}

/// y = x w + b: returns (dx, dw, db).
fn linear_backward(x: &Mat, w: &Mat, dy: &Mat) -> (Mat, Mat, Vec<f64>) {
    let dx = dy.matmul(&w.transpose());
    let dw = x.transpose().matmul(dy);
    let db = colsum(dy);
    (dx, dw, db)
}

/// Two-layer MLP backward; recomputes the forward activations.
fn mlp_backward(phi: &MlpParams, x: &Mat, dy: &Mat) -> (Mat, MlpGrads) {
    let h_pre = x.linear(&phi.w0, &phi.b0);
    let mut h = h_pre.clone();
    h.relu_inplace();
    let (mut dh, dw1, db1) = linear_backward(&h, &phi.w1, dy);
    for (g, &pre) in dh.data_mut().iter_mut().zip(h_pre.data()) {
        if pre <= 0.0 {
            *g = 0.0;
        }
    }
    let (dx, dw0, db0) = linear_backward(x, &phi.w0, &dh);
    (
        dx,
        MlpGrads {
            w0: dw0,
            b0: db0,
            w1: dw1,
            b1: db1,
        },
    )
}

/// Softmax-over-neighbors backward: `w` is the post-softmax weight matrix
/// grouped in runs of `k` rows.
fn softmax_backward(w: &Mat, dw: &Mat, k: usize) -> Mat {
    let d = w.cols();
    let points = w.rows() / k;
    let mut ds = Mat::zeros(w.rows(), d);
    for i in 0..points {
        for ch in 0..d {
            let mut dot = 0.0;
            for n in 0..k {
                dot += dw.get(i * k + n, ch) * w.get(i * k + n, ch);
            }
            for n in 0..k {
                let wv = w.get(i * k + n, ch);
                ds.set(i * k + n, ch, wv * (dw.get(i * k + n, ch) - dot));
            }
        }
    }
    ds
}

fn attention_backward(
    inputs: LocalExtractInputs<'_>,
    phi: &MlpParams,
    groups: usize,
    dout: &Mat,
) -> ExtractGrads {
    let LocalExtractInputs {
        queries,
        keys,
        values,
        table,
    } = inputs;
    let m = queries.rows();
    let c = queries.cols();
    let k = table.k();
    let group_size = c / groups;

    // Forward recomputation.
    let mut pair = Mat::zeros(m * k, c);
    for i in 0..m {
        let q = queries.row(i);
        for (n, &j) in table.row(i).iter().enumerate() {
            let kj = keys.row(j);
            let row = pair.row_mut(i * k + n);
            for ch in 0..c {
                row[ch] = q[ch] - kj[ch];
            }
        }
    }
    let mut weights = phi.forward(&pair);
    super::softmax_groups_inplace(&mut weights, k);

    // d(weights) and d(values) from the weighted sum.
    let mut dweights = Mat::zeros(m * k, groups);
    let mut dvalues = Mat::zeros(m, c);
    for i in 0..m {
        for (n, &j) in table.row(i).iter().enumerate() {
            for l in 0..groups {
                let mut acc = 0.0;
                for t in 0..group_size {
                    let ch = l * group_size + t;
                    acc += dout.get(i, ch) * values.get(j, ch);
                    let dv = dvalues.get(j, ch) + weights.get(i * k + n, l) * dout.get(i, ch);
                    dvalues.set(j, ch, dv);
                }
                dweights.set(i * k + n, l, acc);
            }
        }
    }
    let dlogits = softmax_backward(&weights, &dweights, k);
    let (dpair, dphi) = mlp_backward(phi, &pair, &dlogits);

    let mut dq = Mat::zeros(m, c);
    let mut dk = Mat::zeros(m, c);
    for i in 0..m {
        for (n, &j) in table.row(i).iter().enumerate() {
            let prow = dpair.row(i * k + n);
            let qrow = dq.row_mut(i);
            for ch in 0..c {
                qrow[ch] += prow[ch];
            }
            let krow = dk.row_mut(j);
            for ch in 0..c {
                krow[ch] -= prow[ch];
            }
        }
    }
    ExtractGrads {
        queries: dq,
        keys: dk,
        values: dvalues,
        phi: dphi,
    }
}

pub fn va_backward(inputs: LocalExtractInputs<'_>, phi: &MlpParams, dout: &Mat) -> ExtractGrads {
    attention_backward(inputs, phi, inputs.queries.cols(), dout)
}

pub fn gva_backward(
    inputs: LocalExtractInputs<'_>,
    phi: &MlpParams,
    groups: usize,
    dout: &Mat,
) -> ExtractGrads {
    attention_backward(inputs, phi, groups, dout)
}

/// Backward of the MLP-maxpool extractor; gradient flows to the first
/// maximal neighbor per (point, channel), matching the forward's strict
/// greater-than update.
pub fn mlp_extract_backward(
    values: &Mat,
    table: &NeighborTable,
    phi: &MlpParams,
    dout: &Mat,
) -> (Mat, MlpGrads) {
    let c = values.cols();
    let embedded = phi.forward(values);
    let mut dembedded = Mat::zeros(values.rows(), c);
    for i in 0..values.rows() {
        let row = table.row(i);
        for ch in 0..c {
            let mut best_n = 0;
            let mut best = embedded.get(row[0], ch);
            for (n, &j) in row.iter().enumerate().skip(1) {
                let v = embedded.get(j, ch);
                if v > best {
                    best = v;
                    best_n = n;
                }
            }
            let j = row[best_n];
            dembedded.set(j, ch, dembedded.get(j, ch) + dout.get(i, ch));
        }
    }
    mlp_backward(phi, values, &dembedded)
}

/// Per-row normalization backward: returns (dx, dgamma, dbeta).
fn norm_backward(x: &Mat, gamma: &[f64], dy: &Mat) -> (Mat, Vec<f64>, Vec<f64>) {
    let c = x.cols();
    let cf = c as f64;
    let mut dx = Mat::zeros(x.rows(), c);
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for i in 0..x.rows() {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / cf;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cf;
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv).collect();
        let dyrow = dy.row(i);
        let mut dxhat = vec![0.0; c];
        for ch in 0..c {
            dgamma[ch] += dyrow[ch] * xhat[ch];
            dbeta[ch] += dyrow[ch];
            dxhat[ch] = dyrow[ch] * gamma[ch];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / cf;
        let mean_dxhat_xhat = dxhat
            .iter()
            .zip(&xhat)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / cf;
        let dxrow = dx.row_mut(i);
        for ch in 0..c {
            dxrow[ch] = inv * (dxhat[ch] - mean_dxhat - xhat[ch] * mean_dxhat_xhat);
        }
    }
    (dx, dgamma, dbeta)
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub w: Mat,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NormGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Gradients of everything a sequence block owns plus its input features.
#[derive(Debug, Clone)]
pub struct BlockGrads {
    pub features: Mat,
    pub norm1: NormGrads,
    pub embed: LinearGrads,
    pub qkv: Option<(LinearGrads, LinearGrads, LinearGrads)>,
    pub phi: MlpGrads,
    pub norm2: NormGrads,
    pub update: LinearGrads,
}

/// Full-block backward; recomputes the forward chain. Positional encoding
/// is not differentiated (the model only needs forward for it).
pub fn block_backward(
    features: &Mat,
    table: &NeighborTable,
    params: &SequenceBlockParams,
    kind: OperatorKind,
    dout: &Mat,
) -> BlockGrads {
    assert!(params.pos.is_none(), "backward does not cover the positional term");
    let xn = params.norm1.forward(features);
    let embedded = params.embed.forward(&xn);

    let (dembedded, dphi, dqkv, extracted) = match kind {
        OperatorKind::Va | OperatorKind::Gva => {
            let qkv = params.qkv.as_ref().expect("attention block has qkv");
            let q = qkv.q.forward(&embedded);
            let kk = qkv.k.forward(&embedded);
            let v = qkv.v.forward(&embedded);
            let inputs = LocalExtractInputs {
                queries: &q,
                keys: &kk,
                values: &v,
                table,
            };
            let groups = if kind == OperatorKind::Va {
                features.cols()
            } else {
                params.groups
            };
            let extracted = super::attention_extract(inputs, &params.phi, groups, None)
                .expect("shapes already validated");
            // d(extracted) arrives later; compute it first.
            let dn2 = pre_update_grad(&extracted, params, dout);
            let eg = attention_backward(inputs, &params.phi, groups, &dn2);
            let (dq_emb, dqw, dqb) = linear_backward(&embedded, &qkv.q.w, &eg.queries);
            let (dk_emb, dkw, dkb) = linear_backward(&embedded, &qkv.k.w, &eg.keys);
            let (dv_emb, dvw, dvb) = linear_backward(&embedded, &qkv.v.w, &eg.values);
            let mut demb = dq_emb;
            demb.add_assign(&dk_emb);
            demb.add_assign(&dv_emb);
            (
                demb,
                eg.phi,
                Some((
                    LinearGrads { w: dqw, b: dqb },
                    LinearGrads { w: dkw, b: dkb },
                    LinearGrads { w: dvw, b: dvb },
                )),
                extracted,
            )
        }
        OperatorKind::Mlp => {
            let extracted = super::mlp_extract(&embedded, table, &params.phi)
                .expect("shapes already validated");
            let dn2 = pre_update_grad(&extracted, params, dout);
            let (demb, dphi) = mlp_extract_backward(&embedded, table, &params.phi, &dn2);
            (demb, dphi, None, extracted)
        }
    };

    // Gradients of update and norm2 (recomputed; cheap at check sizes).
    let n2 = params.norm2.forward(&extracted);
    let (dn2_out, duw, dub) = linear_backward(&n2, &params.update.w, dout);
    let (_, dgamma2, dbeta2) = norm_backward(&extracted, &params.norm2.gamma, &dn2_out);

    let (dxn, dew, deb) = linear_backward(&xn, &params.embed.w, &dembedded);
    let (mut dfeat, dgamma1, dbeta1) = norm_backward(features, &params.norm1.gamma, &dxn);
    dfeat.add_assign(dout);

    BlockGrads {
        features: dfeat,
        norm1: NormGrads {
            gamma: dgamma1,
            beta: dbeta1,
        },
        embed: LinearGrads { w: dew, b: deb },
        qkv: dqkv,
        phi: dphi,
        norm2: NormGrads {
            gamma: dgamma2,
            beta: dbeta2,
        },
        update: LinearGrads { w: duw, b: dub },
    }
}

/// d(extracted) from d(block output): back through update and norm2.
fn pre_update_grad(extracted: &Mat, params: &SequenceBlockParams, dout: &Mat) -> Mat {
    let n2 = params.norm2.forward(extracted);
    let (dn2, _, _) = linear_backward(&n2, &params.update.w, dout);
    let (dext, _, _) = norm_backward(extracted, &params.norm2.gamma, &dn2);
    dext
}
