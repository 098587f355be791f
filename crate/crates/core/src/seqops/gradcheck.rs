//! Central finite-difference checking of the analytic backward passes.
//!
//! The harness flattens every input and parameter into one vector, compares
//! the analytic gradient against (f(x+eps) - f(x-eps)) / (2 eps) per entry,
//! and reports the worst relative error together with the tensor it lives
//! in. Inputs that sit on a non-differentiable point (a near-tied max or a
//! relu kink) are re-sampled before checking.

use super::{
    block_backward, gva_backward, mlp_extract_backward, random_block_params,
    sequence_block_forward, va_backward, LocalExtractInputs, Mat, MlpParams,
    SequenceBlockParams,
};
use crate::config::OperatorKind;
use crate::error::{Error, Result};
use crate::rng::Counter;
use crate::spatial::{knn_query, Backend, NeighborTable};

/// Pass threshold for the max relative error at 64-bit precision.
pub const GRADCHECK_THRESHOLD: f64 = 1e-4;

/// Margin below which a max competition or relu pre-activation counts as a
/// tie and the inputs are re-sampled.
const TIE_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Tensor and flat offset where the worst error occurred.
    pub worst: String,
    pub checked: usize,
    /// Tensor name if any gradient came out non-finite.
    pub non_finite: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.non_finite.is_none() && self.max_rel_err < GRADCHECK_THRESHOLD
    }
}

/// Names the contiguous segments of a flattened parameter vector.
#[derive(Debug, Clone, Default)]
pub struct FlatSpace {
    segments: Vec<(String, usize)>,
}

impl FlatSpace {
    pub fn push(&mut self, name: &str, len: usize) {
        self.segments.push((name.to_string(), len));
    }

    pub fn len(&self) -> usize {
        self.segments.iter().map(|(_, l)| l).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn locate(&self, flat: usize) -> String {
        let mut offset = flat;
        for (name, len) in &self.segments {
            if offset < *len {
                return format!("{name}[{offset}]");
            }
            offset -= len;
        }
        format!("<out of range {flat}>")
    }
}

/// Core comparison. `f` evaluates the scalar loss, `analytic` is the full
/// gradient at `x0`.
pub fn finite_diff_check(
    f: &dyn Fn(&[f64]) -> f64,
    analytic: &[f64],
    x0: &[f64],
    eps: f64,
    space: &FlatSpace,
) -> GradCheckReport {
    assert!(eps > 0.0);
    assert_eq!(analytic.len(), x0.len());
    let mut max_rel = 0.0;
    let mut worst = String::from("-");
    let mut non_finite = None;
    let mut x = x0.to_vec();
    for i in 0..x0.len() {
        let a = analytic[i];
        if !a.is_finite() && non_finite.is_none() {
            non_finite = Some(space.locate(i));
        }
        x[i] = x0[i] + eps;
        let up = f(&x);
        x[i] = x0[i] - eps;
        let down = f(&x);
        x[i] = x0[i];
        let numeric = (up - down) / (2.0 * eps);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
            worst = space.locate(i);
        }
    }
    GradCheckReport {
        max_rel_err: max_rel,
        worst,
        checked: x0.len(),
        non_finite,
    }
}

fn random_vec(rng: &mut Counter, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.next_range(-scale, scale)).collect()
}

fn random_table(points: usize, k: usize, seed: u64) -> NeighborTable {
    let cloud = crate::cloud::synthetic_cloud(points, seed, 1.0, 0);
    knn_query(cloud.coords(), cloud.coords(), k, Backend::Brute)
        .expect("k <= points by construction")
}

fn mat_from(rng: &mut Counter, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_vec(rows, cols, random_vec(rng, rows * cols, scale))
}

struct ExtractorProblem {
    q: Mat,
    k: Mat,
    v: Mat,
    phi: MlpParams,
    table: NeighborTable,
}

impl ExtractorProblem {
    fn sample(kind: OperatorKind, m: usize, c: usize, kn: usize, groups: usize, seed: u64) -> Self {
        let mut rng = Counter::new(seed, "gradcheck-extractor");
        let phi_out = match kind {
            OperatorKind::Gva => groups,
            _ => c,
        };
        ExtractorProblem {
            q: mat_from(&mut rng, m, c, 0.8),
            k: mat_from(&mut rng, m, c, 0.8),
            v: mat_from(&mut rng, m, c, 0.8),
            phi: MlpParams {
                w0: mat_from(&mut rng, c, c, 0.7),
                b0: random_vec(&mut rng, c, 0.3),
                w1: mat_from(&mut rng, c, phi_out, 0.7),
                b1: random_vec(&mut rng, phi_out, 0.3),
            },
            table: random_table(m, kn, seed),
        }
    }

    /// True when some max competition or relu pre-activation is too close
    /// to call for a stable finite difference.
    fn near_tie(&self, kind: OperatorKind) -> bool {
        let pre = |x: &Mat| -> bool {
            let h = x.linear(&self.phi.w0, &self.phi.b0);
            h.data().iter().any(|v| v.abs() < TIE_MARGIN)
        };
        match kind {
            OperatorKind::Mlp => {
                if pre(&self.v) {
                    return true;
                }
                let e = self.phi.forward(&self.v);
                for i in 0..self.table.len() {
                    let row = self.table.row(i);
                    for ch in 0..e.cols() {
                        let mut top1 = f64::NEG_INFINITY;
                        let mut top2 = f64::NEG_INFINITY;
                        for &j in row {
                            let v = e.get(j, ch);
                            if v > top1 {
                                top2 = top1;
                                top1 = v;
                            } else if v > top2 {
                                top2 = v;
                            }
                        }
                        if row.len() > 1 && (top1 - top2).abs() < TIE_MARGIN {
                            return true;
                        }
                    }
                }
                false
            }
            _ => {
                // Attention relations pass through the same relu MLP.
                let kk = crate::seqops::gather_neighbors(&self.k, &self.table);
                let mut pair = Mat::zeros(kk.rows(), kk.cols());
                let k = self.table.k();
                for i in 0..self.table.len() {
                    for n in 0..k {
                        for ch in 0..kk.cols() {
                            pair.set(
                                i * k + n,
                                ch,
                                self.q.get(i, ch) - kk.get(i * k + n, ch),
                            );
                        }
                    }
                }
                pre(&pair)
            }
        }
    }
}

/// Gradient check for one extractor. Re-samples up to 64 times when the
/// drawn inputs sit on a tie.
pub fn gradcheck_extractor(
    kind: OperatorKind,
    points: usize,
    channels: usize,
    neighbors: usize,
    groups: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if neighbors > points {
        return Err(Error::invalid("neighbors must be <= points"));
    }
    if kind == OperatorKind::Gva && (groups == 0 || channels % groups != 0) {
        return Err(Error::invalid("groups must divide channels"));
    }
    let mut attempt_seed = seed;
    let problem = loop {
        let p = ExtractorProblem::sample(kind, points, channels, neighbors, groups, attempt_seed);
        if !p.near_tie(kind) {
            break p;
        }
        attempt_seed = attempt_seed.wrapping_add(0x1000_0000_0000_0001);
        if attempt_seed == seed {
            return Err(Error::invalid("could not find tie-free inputs"));
        }
    };

    let (m, c) = (problem.q.rows(), problem.q.cols());
    let phi_out = problem.phi.out_width();
    let mut space = FlatSpace::default();
    let with_qkv = kind != OperatorKind::Mlp;
    if with_qkv {
        space.push("queries", m * c);
        space.push("keys", m * c);
    }
    space.push("values", m * c);
    space.push("phi.w0", c * c);
    space.push("phi.b0", c);
    space.push("phi.w1", c * phi_out);
    space.push("phi.b1", phi_out);

    let table = problem.table.clone();
    let unpack = move |x: &[f64]| -> (Mat, Mat, Mat, MlpParams) {
        let mut off = 0;
        let mut take = |n: usize| {
            let s = x[off..off + n].to_vec();
            off += n;
            s
        };
        let (q, k) = if with_qkv {
            (
                Mat::from_vec(m, c, take(m * c)),
                Mat::from_vec(m, c, take(m * c)),
            )
        } else {
            (Mat::zeros(m, c), Mat::zeros(m, c))
        };
        let v = Mat::from_vec(m, c, take(m * c));
        let phi = MlpParams {
            w0: Mat::from_vec(c, c, take(c * c)),
            b0: take(c),
            w1: Mat::from_vec(c, phi_out, take(c * phi_out)),
            b1: take(phi_out),
        };
        (q, k, v, phi)
    };

    let mut x0 = Vec::with_capacity(space.len());
    if with_qkv {
        x0.extend_from_slice(problem.q.data());
        x0.extend_from_slice(problem.k.data());
    }
    x0.extend_from_slice(problem.v.data());
    x0.extend_from_slice(problem.phi.w0.data());
    x0.extend_from_slice(&problem.phi.b0);
    x0.extend_from_slice(problem.phi.w1.data());
    x0.extend_from_slice(&problem.phi.b1);

    let table_f = table.clone();
    let eval = move |x: &[f64]| -> f64 {
        let (q, k, v, phi) = unpack(x);
        let out = match kind {
            OperatorKind::Va => super::va_extract(
                LocalExtractInputs {
                    queries: &q,
                    keys: &k,
                    values: &v,
                    table: &table_f,
                },
                &phi,
            ),
            OperatorKind::Gva => super::gva_extract(
                LocalExtractInputs {
                    queries: &q,
                    keys: &k,
                    values: &v,
                    table: &table_f,
                },
                &phi,
                groups,
            ),
            OperatorKind::Mlp => super::mlp_extract(&v, &table_f, &phi),
        }
        .expect("validated shapes");
        out.data().iter().sum()
    };

    let dout = Mat::from_vec(m, c, vec![1.0; m * c]);
    let inputs = LocalExtractInputs {
        queries: &problem.q,
        keys: &problem.k,
        values: &problem.v,
        table: &problem.table,
    };
    let mut analytic = Vec::with_capacity(space.len());
    match kind {
        OperatorKind::Mlp => {
            let (dv, dphi) =
                mlp_extract_backward(&problem.v, &problem.table, &problem.phi, &dout);
            analytic.extend_from_slice(dv.data());
            analytic.extend_from_slice(dphi.w0.data());
            analytic.extend_from_slice(&dphi.b0);
            analytic.extend_from_slice(dphi.w1.data());
            analytic.extend_from_slice(&dphi.b1);
        }
        _ => {
            let g = if kind == OperatorKind::Va {
                va_backward(inputs, &problem.phi, &dout)
            } else {
                gva_backward(inputs, &problem.phi, groups, &dout)
            };
            analytic.extend_from_slice(g.queries.data());
            analytic.extend_from_slice(g.keys.data());
            analytic.extend_from_slice(g.values.data());
            analytic.extend_from_slice(g.phi.w0.data());
            analytic.extend_from_slice(&g.phi.b0);
            analytic.extend_from_slice(g.phi.w1.data());
            analytic.extend_from_slice(&g.phi.b1);
        }
    }

    Ok(finite_diff_check(&eval, &analytic, &x0, eps, &space))
}

/// Gradient check for the full sequence block with respect to the input
/// features and every parameter.
pub fn gradcheck_block(
    kind: OperatorKind,
    points: usize,
    channels: usize,
    neighbors: usize,
    groups: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if neighbors > points {
        return Err(Error::invalid("neighbors must be <= points"));
    }
    if kind == OperatorKind::Gva && (groups == 0 || channels % groups != 0) {
        return Err(Error::invalid("groups must divide channels"));
    }
    let c = channels;
    let phi_out = match kind {
        OperatorKind::Gva => groups,
        _ => c,
    };
    let cloud = crate::cloud::synthetic_cloud(points, seed, 1.0, 0);
    let coords = cloud.coords().clone();
    let table = knn_query(&coords, &coords, neighbors, Backend::Brute)?;

    let mut attempt = seed;
    let (params, features) = loop {
        let params = random_block_params(kind, c, groups, attempt, 0.6);
        let mut rng = Counter::new(attempt, "gradcheck-block-features");
        let features = mat_from(&mut rng, points, c, 0.8);
        if !block_near_tie(&features, &table, &params, kind) {
            break (params, features);
        }
        attempt = attempt.wrapping_add(0x2000_0000_0000_0003);
    };

    let with_qkv = kind != OperatorKind::Mlp;
    let mut space = FlatSpace::default();
    space.push("features", points * c);
    space.push("norm1.gamma", c);
    space.push("norm1.beta", c);
    space.push("embed.w", c * c);
    space.push("embed.b", c);
    if with_qkv {
        for n in ["q", "k", "v"] {
            space.push(&format!("{n}.w"), c * c);
            space.push(&format!("{n}.b"), c);
        }
    }
    space.push("phi.w0", c * c);
    space.push("phi.b0", c);
    space.push("phi.w1", c * phi_out);
    space.push("phi.b1", phi_out);
    space.push("norm2.gamma", c);
    space.push("norm2.beta", c);
    space.push("update.w", c * c);
    space.push("update.b", c);

    let pack = |params: &SequenceBlockParams, features: &Mat| -> Vec<f64> {
        let mut x = Vec::new();
        x.extend_from_slice(features.data());
        x.extend_from_slice(&params.norm1.gamma);
        x.extend_from_slice(&params.norm1.beta);
        x.extend_from_slice(params.embed.w.data());
        x.extend_from_slice(&params.embed.b);
        if let Some(qkv) = &params.qkv {
            for lin in [&qkv.q, &qkv.k, &qkv.v] {
                x.extend_from_slice(lin.w.data());
                x.extend_from_slice(&lin.b);
            }
        }
        x.extend_from_slice(params.phi.w0.data());
        x.extend_from_slice(&params.phi.b0);
        x.extend_from_slice(params.phi.w1.data());
        x.extend_from_slice(&params.phi.b1);
        x.extend_from_slice(&params.norm2.gamma);
        x.extend_from_slice(&params.norm2.beta);
        x.extend_from_slice(params.update.w.data());
        x.extend_from_slice(&params.update.b);
        x
    };

    let template = params.clone();
    let m = points;
    let unpack = move |x: &[f64]| -> (SequenceBlockParams, Mat) {
        let mut p = template.clone();
        let mut off = 0;
        let mut take = |n: usize| {
            let s = x[off..off + n].to_vec();
            off += n;
            s
        };
        let features = Mat::from_vec(m, c, take(m * c));
        p.norm1.gamma = take(c);
        p.norm1.beta = take(c);
        p.embed.w = Mat::from_vec(c, c, take(c * c));
        p.embed.b = take(c);
        if let Some(qkv) = &mut p.qkv {
            for lin in [&mut qkv.q, &mut qkv.k, &mut qkv.v] {
                lin.w = Mat::from_vec(c, c, take(c * c));
                lin.b = take(c);
            }
        }
        p.phi.w0 = Mat::from_vec(c, c, take(c * c));
        p.phi.b0 = take(c);
        p.phi.w1 = Mat::from_vec(c, phi_out, take(c * phi_out));
        p.phi.b1 = take(phi_out);
        p.norm2.gamma = take(c);
        p.norm2.beta = take(c);
        p.update.w = Mat::from_vec(c, c, take(c * c));
        p.update.b = take(c);
        (p, features)
    };

    let x0 = pack(&params, &features);
    let coords_f = coords.clone();
    let table_f = table.clone();
    let eval = move |x: &[f64]| -> f64 {
        let (p, f) = unpack(x);
        sequence_block_forward(&f, &coords_f, &table_f, &p, kind)
            .expect("validated shapes")
            .data()
            .iter()
            .sum()
    };

    let dout = Mat::from_vec(points, c, vec![1.0; points * c]);
    let grads = block_backward(&features, &table, &params, kind, &dout);
    let mut analytic = Vec::with_capacity(space.len());
    analytic.extend_from_slice(grads.features.data());
    analytic.extend_from_slice(&grads.norm1.gamma);
    analytic.extend_from_slice(&grads.norm1.beta);
    analytic.extend_from_slice(grads.embed.w.data());
    analytic.extend_from_slice(&grads.embed.b);
    if let Some((gq, gk, gv)) = &grads.qkv {
        for g in [gq, gk, gv] {
            analytic.extend_from_slice(g.w.data());
            analytic.extend_from_slice(&g.b);
        }
    }
    analytic.extend_from_slice(grads.phi.w0.data());
    analytic.extend_from_slice(&grads.phi.b0);
    analytic.extend_from_slice(grads.phi.w1.data());
    analytic.extend_from_slice(&grads.phi.b1);
    analytic.extend_from_slice(&grads.norm2.gamma);
    analytic.extend_from_slice(&grads.norm2.beta);
    analytic.extend_from_slice(grads.update.w.data());
    analytic.extend_from_slice(&grads.update.b);

    Ok(finite_diff_check(&eval, &analytic, &x0, eps, &space))
}

/// Tie detection for the full block: relu pre-activations in phi and, for
/// the mlp kind, the neighborhood max competition.
fn block_near_tie(
    features: &Mat,
    table: &NeighborTable,
    params: &SequenceBlockParams,
    kind: OperatorKind,
) -> bool {
    let xn = params.norm1.forward(features);
    let embedded = params.embed.forward(&xn);
    match kind {
        OperatorKind::Mlp => {
            let h = embedded.linear(&params.phi.w0, &params.phi.b0);
            if h.data().iter().any(|v| v.abs() < TIE_MARGIN) {
                return true;
            }
            let e = params.phi.forward(&embedded);
            for i in 0..table.len() {
                let row = table.row(i);
                for ch in 0..e.cols() {
                    let mut top1 = f64::NEG_INFINITY;
                    let mut top2 = f64::NEG_INFINITY;
                    for &j in row {
                        let v = e.get(j, ch);
                        if v > top1 {
                            top2 = top1;
                            top1 = v;
                        } else if v > top2 {
                            top2 = v;
                        }
                    }
                    if row.len() > 1 && (top1 - top2).abs() < TIE_MARGIN {
                        return true;
                    }
                }
            }
            false
        }
        _ => {
            let qkv = params.qkv.as_ref().expect("attention block has qkv");
            let q = qkv.q.forward(&embedded);
            let k = qkv.k.forward(&embedded);
            let kk = crate::seqops::gather_neighbors(&k, table);
            let kn = table.k();
            let c = q.cols();
            let mut pair = Mat::zeros(kk.rows(), c);
            for i in 0..table.len() {
                for n in 0..kn {
                    for ch in 0..c {
                        pair.set(i * kn + n, ch, q.get(i, ch) - kk.get(i * kn + n, ch));
                    }
                }
            }
            let h = pair.linear(&params.phi.w0, &params.phi.b0);
            h.data().iter().any(|v| v.abs() < TIE_MARGIN)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_alone_is_exact() {
        let mut rng = Counter::new(3, "lin");
        let w = mat_from(&mut rng, 4, 5, 1.0);
        let b = random_vec(&mut rng, 5, 1.0);
        let x0 = random_vec(&mut rng, 3 * 4, 1.0);
        let mut space = FlatSpace::default();
        space.push("x", 12);
        let w2 = w.clone();
        let b2 = b.clone();
        let eval = move |x: &[f64]| -> f64 {
            Mat::from_vec(3, 4, x.to_vec())
                .linear(&w2, &b2)
                .data()
                .iter()
                .sum()
        };
        // d(sum)/dx = row sums of w broadcast over rows.
        let mut analytic = Vec::new();
        for _ in 0..3 {
            for i in 0..4 {
                analytic.push(w.row(i).iter().sum::<f64>());
            }
        }
        let report = finite_diff_check(&eval, &analytic, &x0, 1e-6, &space);
        assert!(report.max_rel_err < 1e-9, "{}", report.max_rel_err);
    }

    #[test]
    fn extractor_gradients_pass() {
        for kind in OperatorKind::ALL {
            let report = gradcheck_extractor(kind, 8, 4, 3, 2, 1e-6, 7).unwrap();
            assert!(
                report.passed(),
                "kind {kind}: err {} at {}",
                report.max_rel_err,
                report.worst
            );
        }
    }

    #[test]
    fn block_gradients_pass() {
        for kind in OperatorKind::ALL {
            let report = gradcheck_block(kind, 8, 4, 3, 2, 1e-6, 11).unwrap();
            assert!(
                report.passed(),
                "kind {kind}: err {} at {}",
                report.max_rel_err,
                report.worst
            );
        }
    }
}
