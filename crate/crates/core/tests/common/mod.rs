//! Naive reference implementations used as test oracles.
//!
//! Everything here is written with plain index loops, independently of the
//! batched tape kernels, so agreement between the two is meaningful.

#![allow(dead_code)]

pub mod cases;

use firecast_core::nn::{grad_check, Bound, Mode, ParamId, ParamStore, Tape, Tensor, Var};
use firecast_core::sampling::Batch;
use firecast_core::{Model, ModelConfig, SampleSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn randn(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Overwrites every parameter with uniform values in `(−scale, scale)`.
pub fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    for p in store.iter_mut() {
        for v in p.value.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

pub fn zero_params(store: &mut ParamStore) {
    for p in store.iter_mut() {
        p.value.data_mut().fill(0.0);
    }
}

pub fn val(store: &ParamStore, id: ParamId) -> Vec<f64> {
    store.get(id).value.data().to_vec()
}

pub fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).unwrap()
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `x: [n, d]`, `w: [d, m]`, `b: [m]` → `[n, m]`.
pub fn dense(x: &[f64], n: usize, d: usize, w: &[f64], m: usize, b: Option<&[f64]>) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut s = b.map_or(0.0, |b| b[j]);
            for k in 0..d {
                s += x[i * d + k] * w[k * m + j];
            }
            out[i * m + j] = s;
        }
    }
    out
}

/// Zero-padded cross-correlation of one image `[c_in, h, w]` with `[c_out, c_in, kh, kw]`.
pub fn conv(
    x: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    k: &[f64],
    c_out: usize,
    kh: usize,
    kw: usize,
    b: Option<&[f64]>,
) -> Vec<f64> {
    let mut out = vec![0.0; c_out * h * w];
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    for o in 0..c_out {
        for y in 0..h {
            for xx in 0..w {
                let mut s = b.map_or(0.0, |b| b[o]);
                for c in 0..c_in {
                    for i in 0..kh {
                        for j in 0..kw {
                            let sy = y as isize + i as isize - ph;
                            let sx = xx as isize + j as isize - pw;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            s += k[((o * c_in + c) * kh + i) * kw + j] * x[(c * h + sy as usize) * w + sx as usize];
                        }
                    }
                }
                out[(o * h + y) * w + xx] = s;
            }
        }
    }
    out
}

pub struct AttentionParams<'a> {
    pub wq: &'a [f64],
    pub bq: &'a [f64],
    pub wk: &'a [f64],
    pub bk: &'a [f64],
    pub wv: &'a [f64],
    pub bv: &'a [f64],
    pub wo: &'a [f64],
    pub bo: &'a [f64],
}

/// Multi-head self-attention over the `n` rows of `x: [n, d]`, computed head by
/// head with an explicit `QKᵀ/√d_k` matrix and row softmax.
pub fn attention(x: &[f64], n: usize, d: usize, p: &AttentionParams, dm: usize, heads: usize) -> Vec<f64> {
    let q = dense(x, n, d, p.wq, dm, Some(p.bq));
    let k = dense(x, n, d, p.wk, dm, Some(p.bk));
    let v = dense(x, n, d, p.wv, dm, Some(p.bv));
    let dk = dm / heads;
    let mut concat = vec![0.0; n * dm];
    for hd in 0..heads {
        for i in 0..n {
            let mut scores = vec![0.0; n];
            for j in 0..n {
                let mut dot = 0.0;
                for c in 0..dk {
                    dot += q[i * dm + hd * dk + c] * k[j * dm + hd * dk + c];
                }
                scores[j] = dot / (dk as f64).sqrt();
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for c in 0..dk {
                let mut s = 0.0;
                for j in 0..n {
                    s += exps[j] / z * v[j * dm + hd * dk + c];
                }
                concat[i * dm + hd * dk + c] = s;
            }
        }
    }
    dense(&concat, n, dm, p.wo, dm, Some(p.bo))
}

/// `a: [n, n]` times `x: [n, d]`.
pub fn matmul_sq(a: &[f64], n: usize, x: &[f64], d: usize) -> Vec<f64> {
    dense(a, n, n, x, d, None)
}

/// `σ(Â·relu(Â·X·W0)·W1)`.
pub fn gcn2(a: &[f64], n: usize, x: &[f64], d: usize, w0: &[f64], h1: usize, w1: &[f64], h2: usize) -> Vec<f64> {
    let ax = matmul_sq(a, n, x, d);
    let z: Vec<f64> = dense(&ax, n, d, w0, h1, None).into_iter().map(|v| v.max(0.0)).collect();
    let zw = dense(&z, n, h1, w1, h2, None);
    matmul_sq(a, n, &zw, h2).into_iter().map(sig).collect()
}

pub struct TgcnParams<'a> {
    pub gcn: [(&'a [f64], &'a [f64]); 3],
    pub w: [&'a [f64]; 3],
    pub b: [&'a [f64]; 3],
}

fn cat_rows(a: &[f64], da: usize, b: &[f64], db: usize, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * (da + db));
    for i in 0..n {
        out.extend_from_slice(&a[i * da..(i + 1) * da]);
        out.extend_from_slice(&b[i * db..(i + 1) * db]);
    }
    out
}

/// One graph-gated recurrent step, written out with plain loops.
pub fn tgcn_step(
    a: &[f64],
    n: usize,
    x: &[f64],
    d: usize,
    h: &[f64],
    hidden: usize,
    widths: (usize, usize),
    p: &TgcnParams,
) -> Vec<f64> {
    let f: Vec<Vec<f64>> = p.gcn.iter().map(|(w0, w1)| gcn2(a, n, x, d, w0, widths.0, w1, widths.1)).collect();
    let cat = widths.1 + hidden;
    let u: Vec<f64> = dense(&cat_rows(&f[0], widths.1, h, hidden, n), n, cat, p.w[0], hidden, Some(p.b[0]))
        .into_iter()
        .map(sig)
        .collect();
    let r: Vec<f64> = dense(&cat_rows(&f[1], widths.1, h, hidden, n), n, cat, p.w[1], hidden, Some(p.b[1]))
        .into_iter()
        .map(sig)
        .collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let c: Vec<f64> = dense(&cat_rows(&f[2], widths.1, &rh, hidden, n), n, cat, p.w[2], hidden, Some(p.b[2]))
        .into_iter()
        .map(f64::tanh)
        .collect();
    (0..n * hidden).map(|i| u[i] * h[i] + (1.0 - u[i]) * c[i]).collect()
}

/// One Conv-LSTM step on a single image; fused gate weights in `(i, f, o, g)` order.
pub fn convlstm_step(
    x: &[f64],
    f_in: usize,
    g: usize,
    h: &[f64],
    c: &[f64],
    hidden: usize,
    w_x: &[f64],
    w_h: &[f64],
    b: &[f64],
    k: usize,
) -> (Vec<f64>, Vec<f64>) {
    let gx = conv(x, f_in, g, g, w_x, 4 * hidden, k, k, Some(b));
    let gh = conv(h, hidden, g, g, w_h, 4 * hidden, k, k, None);
    let plane = hidden * g * g;
    let pre = |gate: usize, i: usize| gx[gate * plane + i] + gh[gate * plane + i];
    let mut h_next = vec![0.0; plane];
    let mut c_next = vec![0.0; plane];
    for i in 0..plane {
        let ig = sig(pre(0, i));
        let fg = sig(pre(1, i));
        let og = sig(pre(2, i));
        let gg = pre(3, i).tanh();
        c_next[i] = fg * c[i] + ig * gg;
        h_next[i] = og * c_next[i].tanh();
    }
    (h_next, c_next)
}

/// One GRU step for a single input vector; fused weights in `(r, z, n)` column order.
pub fn gru_step(
    x: &[f64],
    d: usize,
    h: &[f64],
    hidden: usize,
    w_ih: &[f64],
    w_hh: &[f64],
    b_ih: &[f64],
    b_hh: &[f64],
) -> Vec<f64> {
    let col =
        |w: &[f64], v: &[f64], rows: usize, j: usize| (0..rows).map(|k| v[k] * w[k * 3 * hidden + j]).sum::<f64>();
    let mut out = vec![0.0; hidden];
    for j in 0..hidden {
        let r = sig(col(w_ih, x, d, j) + b_ih[j] + col(w_hh, h, hidden, j) + b_hh[j]);
        let z =
            sig(col(w_ih, x, d, hidden + j) + b_ih[hidden + j] + col(w_hh, h, hidden, hidden + j) + b_hh[hidden + j]);
        let nn = (col(w_ih, x, d, 2 * hidden + j)
            + b_ih[2 * hidden + j]
            + r * (col(w_hh, h, hidden, 2 * hidden + j) + b_hh[2 * hidden + j]))
            .tanh();
        out[j] = (1.0 - z) * nn + z * h[j];
    }
    out
}

/// Dense `D̃^{-1/2}(A+I)D̃^{-1/2}` from an adjacency matrix.
pub fn normalized(a: &[f64], n: usize) -> Vec<f64> {
    let mut hat = a.to_vec();
    for i in 0..n {
        hat[i * n + i] += 1.0;
    }
    let deg: Vec<f64> = (0..n).map(|i| (0..n).map(|j| hat[i * n + j]).sum()).collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = hat[i * n + j] / (deg[i] * deg[j]).sqrt();
        }
    }
    out
}

/// Average precision by scanning every distinct threshold τ and predicting `score ≥ τ`.
pub fn brute_force_ap(scores: &[f64], labels: &[u8]) -> f64 {
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|(s, l)| **s >= t && **l == 1).count() as f64;
        let predicted = scores.iter().filter(|s| **s >= t).count() as f64;
        let recall = tp / n_pos;
        ap += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    ap
}

/// Batch of uniform random features with alternating labels.
pub fn random_batch(
    rng: &mut ChaCha8Rng,
    size: usize,
    ts: usize,
    n_features: usize,
    side: usize,
    graph: Option<std::sync::Arc<firecast_core::GridGraph>>,
) -> Batch {
    Batch {
        features: randn(rng, size * ts * n_features * side * side, 1.5),
        labels: (0..size).map(|i| (i % 2) as f64).collect(),
        size,
        ts,
        n_features,
        side,
        graph,
    }
}

fn model_loss<'a>(
    model: &'a Model,
    batch: &'a Batch,
) -> impl FnMut(&mut Tape, &Bound) -> firecast_core::Result<Var> + 'a {
    let batch = batch.clone();
    move |t, p| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = model.forward(t, p, &batch, Mode::Eval, &mut rng)?;
        t.bce_mean(y, &batch.labels)
    }
}

/// Gradient check of the full BCE loss of a model; parameters are scaled up so
/// the loss surface is far from flat.
pub fn model_grad_error(config: ModelConfig, spec: SampleSpec, nf: usize, seed: u64) -> f64 {
    let mut model = Model::new(config, spec, nf, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    randomize(&mut model.params, &mut rng, 0.6);
    let batch = random_batch(&mut rng, 3, spec.ts, nf, spec.side(), model.graph());
    let frozen = model.clone();
    let report = grad_check(&mut model.params, model_loss(&frozen, &batch), 1e-6, 600, seed).unwrap();
    report.max_rel_error
}

/// Value of the single driver of [`toy_cube`]; encodes its coordinates.
pub fn toy_value(t: usize, lat: usize, lon: usize) -> f32 {
    (1000 * t + 10 * lat + lon) as f32
}

pub fn toy_fire(t: usize, lat: usize, lon: usize) -> bool {
    (3 * t + lat + 2 * lon) % 7 == 0
}

/// `years` whole years on a `lat × lon` grid with one driver `a` and the burned-area
/// target. The grid spans the globe in longitude when `global` is set. Cells listed
/// in `ocean` are masked out.
pub fn toy_cube(
    lat: usize,
    lon: usize,
    years: usize,
    global: bool,
    ocean: &[(usize, usize)],
) -> firecast_core::Datacube {
    use firecast_core::cube::{FillPolicy, VariableSpec, PERIODS_PER_YEAR, TARGET_NAME};
    let time_len = years * PERIODS_PER_YEAR;
    let step = if global { 360.0 / lon as f64 } else { 1.0 };
    let header = firecast_core::CubeHeader {
        time_len,
        lat_len: lat,
        lon_len: lon,
        lat_values: (0..lat).map(|i| 40.0 - i as f64).collect(),
        lon_values: (0..lon).map(|j| -180.0 + j as f64 * step).collect(),
        steps_per_year: PERIODS_PER_YEAR,
        t0_year: 2001,
        t0_step: 0,
        variables: ["a", TARGET_NAME]
            .iter()
            .map(|n| VariableSpec { name: n.to_string(), fill_policy: FillPolicy::None })
            .collect(),
        mask_variable: None,
    };
    let mut a = Vec::with_capacity(header.len());
    let mut ba = Vec::with_capacity(header.len());
    for t in 0..time_len {
        for i in 0..lat {
            for j in 0..lon {
                a.push(toy_value(t, i, j));
                ba.push(if toy_fire(t, i, j) { 50.0 } else { 0.0 });
            }
        }
    }
    let mut mask = vec![1u8; lat * lon];
    for &(i, j) in ocean {
        mask[i * lon + j] = 0;
    }
    firecast_core::Datacube::new(header, vec![a, ba], mask).unwrap()
}

/// Prepares `cube` with identity standardization so driver values pass through unchanged.
pub fn identity_prepared(cube: &firecast_core::Datacube) -> firecast_core::sampling::PreparedCube {
    use firecast_core::cube::{StandardizationStats, VariableStats, TARGET_NAME};
    let variables =
        cube.header.variables.iter().map(|v| (v.name.clone(), VariableStats { mean: 0.0, std: 1.0 })).collect();
    let stats = StandardizationStats { variables, computed_over: (0, cube.header.time_len) };
    firecast_core::sampling::PreparedCube::new(cube, &stats, &["a".to_string()], TARGET_NAME).unwrap()
}

/// Every labeling of `n` items with at least one positive.
pub fn labelings(n: usize) -> impl Iterator<Item = Vec<u8>> {
    (1u32..1 << n).map(move |bits| (0..n).map(|i| ((bits >> i) & 1) as u8).collect())
}

/// Distinct, fully tied and partially tied score vectors of length `n`.
pub fn score_vectors(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    vec![
        (0..n).map(|i| (n - i) as f64 / n as f64).collect(),
        (0..n).map(|_| rng.gen::<f64>()).collect(),
        vec![0.5; n],
        (0..n).map(|_| rng.gen_range(0..3) as f64 / 4.0).collect(),
        (0..n).map(|i| (i % 2) as f64).collect(),
    ]
}
