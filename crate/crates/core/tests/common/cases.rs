//! Random instances comparing tape ops and model cells with the loop oracles.

use std::sync::Arc;

use firecast_core::models::{ConvLstmCell, Gcn2, GruLayer, TgcnCell};
use firecast_core::nn::{ParamStore, SelfAttention, Tape};
use firecast_core::sampling::build_grid_graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

pub fn dense_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d, m) = (rng.gen_range(1..7), rng.gen_range(1..9), rng.gen_range(1..6));
    let x = randn(&mut rng, n * d, 2.0);
    let w = randn(&mut rng, d * m, 1.0);
    let b = randn(&mut rng, m, 1.0);
    let mut tape = Tape::new();
    let xv = tape.constant(tensor(&[n, d], x.clone()));
    let wv = tape.constant(tensor(&[d, m], w.clone()));
    let bv = tape.constant(tensor(&[m], b.clone()));
    let with_bias = tape.dense(xv, wv, Some(bv)).unwrap();
    let no_bias = tape.dense(xv, wv, None).unwrap();
    max_diff(tape.value(with_bias).data(), &dense(&x, n, d, &w, m, Some(&b)))
        .max(max_diff(tape.value(no_bias).data(), &dense(&x, n, d, &w, m, None)))
}

pub fn conv2d_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let b = rng.gen_range(1..3);
    let (c_in, c_out) = (rng.gen_range(1..4), rng.gen_range(1..4));
    let (h, w) = (rng.gen_range(1..7), rng.gen_range(1..7));
    let (kh, kw) = (2 * rng.gen_range(0..3) + 1, 2 * rng.gen_range(0..3) + 1);
    let x = randn(&mut rng, b * c_in * h * w, 1.5);
    let k = randn(&mut rng, c_out * c_in * kh * kw, 1.0);
    let bias = randn(&mut rng, c_out, 1.0);
    let mut tape = Tape::new();
    let xv = tape.constant(tensor(&[b, c_in, h, w], x.clone()));
    let kv = tape.constant(tensor(&[c_out, c_in, kh, kw], k.clone()));
    let bv = tape.constant(tensor(&[c_out], bias.clone()));
    let y = tape.conv2d_same(xv, kv, Some(bv)).unwrap();
    let img = c_in * h * w;
    let expected: Vec<f64> =
        (0..b).flat_map(|s| conv(&x[s * img..(s + 1) * img], c_in, h, w, &k, c_out, kh, kw, Some(&bias))).collect();
    max_diff(tape.value(y).data(), &expected)
}

pub fn attention_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
    let heads = rng.gen_range(1..4);
    let dm = heads * rng.gen_range(1..4);
    let (group, groups, d) = (rng.gen_range(1..6), rng.gen_range(1..3), rng.gen_range(1..5));
    let mut store = ParamStore::new();
    let att = SelfAttention::register(&mut store, "att", d, dm, heads, &mut rng).unwrap();
    randomize(&mut store, &mut rng, 1.0);
    let x = randn(&mut rng, groups * group * d, 1.5);

    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let xv = tape.constant(tensor(&[groups * group, d], x.clone()));
    let y = att.forward(&mut tape, &bound, xv, group).unwrap();

    let ids = att.param_ids();
    let v: Vec<Vec<f64>> = ids.iter().map(|&id| val(&store, id)).collect();
    let p = AttentionParams { wq: &v[0], bq: &v[1], wk: &v[2], bk: &v[3], wv: &v[4], bv: &v[5], wo: &v[6], bo: &v[7] };
    let expected: Vec<f64> =
        (0..groups).flat_map(|g| attention(&x[g * group * d..(g + 1) * group * d], group, d, &p, dm, heads)).collect();
    max_diff(tape.value(y).data(), &expected)
}

pub fn gcn2_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
    let (n, a_oracle, adj) = random_graph(&mut rng);
    let (d, h1, h2, b) = (rng.gen_range(1..5), rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..3));
    let mut store = ParamStore::new();
    let gcn = Gcn2::register(&mut store, "g", d, (h1, h2), &mut rng).unwrap();
    randomize(&mut store, &mut rng, 1.0);
    let x = randn(&mut rng, b * n * d, 1.5);

    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let xv = tape.constant(tensor(&[b * n, d], x.clone()));
    let y = gcn.forward(&mut tape, &bound, &adj, n, xv).unwrap();
    let (w0, w1) = (val(&store, gcn.w0), val(&store, gcn.w1));
    let expected: Vec<f64> =
        (0..b).flat_map(|s| gcn2(&a_oracle, n, &x[s * n * d..(s + 1) * n * d], d, &w0, h1, &w1, h2)).collect();
    max_diff(tape.value(y).data(), &expected)
}

pub fn convlstm_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
    let (f, hidden, g, b) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..3));
    let k = 2 * rng.gen_range(0..2) + 1;
    let mut store = ParamStore::new();
    let cell = ConvLstmCell::register(&mut store, "c", f, hidden, k, &mut rng).unwrap();
    randomize(&mut store, &mut rng, 1.0);
    let x = randn(&mut rng, b * f * g * g, 1.5);
    let h = randn(&mut rng, b * hidden * g * g, 1.0);
    let c = randn(&mut rng, b * hidden * g * g, 1.0);

    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let xv = tape.constant(tensor(&[b, f, g, g], x.clone()));
    let hv = tape.constant(tensor(&[b, hidden, g, g], h.clone()));
    let cv = tape.constant(tensor(&[b, hidden, g, g], c.clone()));
    let (hn, cn) = cell.step(&mut tape, &bound, xv, hv, cv).unwrap();

    let (wx, wh, bias) = (val(&store, cell.w_x), val(&store, cell.w_h), val(&store, cell.b));
    let (xs, ss) = (f * g * g, hidden * g * g);
    let mut want_h = Vec::new();
    let mut want_c = Vec::new();
    for s in 0..b {
        let (a, bb) = convlstm_step(
            &x[s * xs..(s + 1) * xs],
            f,
            g,
            &h[s * ss..(s + 1) * ss],
            &c[s * ss..(s + 1) * ss],
            hidden,
            &wx,
            &wh,
            &bias,
            k,
        );
        want_h.extend(a);
        want_c.extend(bb);
    }
    max_diff(tape.value(hn).data(), &want_h).max(max_diff(tape.value(cn).data(), &want_c))
}

pub fn gru_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
    let (d, hidden, b) = (rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..4));
    let mut store = ParamStore::new();
    let layer = GruLayer::register(&mut store, "g", d, hidden, &mut rng).unwrap();
    randomize(&mut store, &mut rng, 1.0);
    let x = randn(&mut rng, b * d, 1.5);
    let h = randn(&mut rng, b * hidden, 1.0);
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let xv = tape.constant(tensor(&[b, d], x.clone()));
    let hv = tape.constant(tensor(&[b, hidden], h.clone()));
    let y = layer.step(&mut tape, &bound, xv, hv).unwrap();
    let (wi, wh, bi, bh) =
        (val(&store, layer.w_ih), val(&store, layer.w_hh), val(&store, layer.b_ih), val(&store, layer.b_hh));
    let want: Vec<f64> = (0..b)
        .flat_map(|s| gru_step(&x[s * d..(s + 1) * d], d, &h[s * hidden..(s + 1) * hidden], hidden, &wi, &wh, &bi, &bh))
        .collect();
    max_diff(tape.value(y).data(), &want)
}

pub fn random_graph(rng: &mut ChaCha8Rng) -> (usize, Vec<f64>, Arc<Vec<f64>>) {
    let r = rng.gen_range(0..3);
    let n = (2 * r + 1) * (2 * r + 1);
    let k = rng.gen_range(1..=n.min(9));
    let g = build_grid_graph(r, k).unwrap();
    (n, normalized(&g.adjacency(), n), g.adjacency_norm.clone())
}

/// Returns `(n, tape output, oracle output)`.
pub fn tgcn_case(seed: u64) -> (usize, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, a_oracle, adj) = random_graph(&mut rng);
    let (d, hidden) = (rng.gen_range(1..5), rng.gen_range(1..6));
    let widths = (rng.gen_range(1..5), rng.gen_range(1..5));
    let b = rng.gen_range(1..3);
    let mut store = ParamStore::new();
    let cell = TgcnCell::register(&mut store, "c", d, widths, hidden, &mut rng).unwrap();
    randomize(&mut store, &mut rng, 1.0);
    let x = randn(&mut rng, b * n * d, 1.5);
    let h = randn(&mut rng, b * n * hidden, 1.0);

    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let xv = tape.constant(tensor(&[b * n, d], x.clone()));
    let hv = tape.constant(tensor(&[b * n, hidden], h.clone()));
    let y = cell.step(&mut tape, &bound, &adj, n, xv, hv).unwrap();

    let gv = |g: &Gcn2| (val(&store, g.w0), val(&store, g.w1));
    let (gu, gr, gc) = (gv(&cell.gcn_u), gv(&cell.gcn_r), gv(&cell.gcn_c));
    let w = [val(&store, cell.w_u), val(&store, cell.w_r), val(&store, cell.w_c)];
    let bs = [val(&store, cell.b_u), val(&store, cell.b_r), val(&store, cell.b_c)];
    let p = TgcnParams {
        gcn: [(&gu.0, &gu.1), (&gr.0, &gr.1), (&gc.0, &gc.1)],
        w: [&w[0], &w[1], &w[2]],
        b: [&bs[0], &bs[1], &bs[2]],
    };
    let expected: Vec<f64> = (0..b)
        .flat_map(|s| {
            tgcn_step(
                &a_oracle,
                n,
                &x[s * n * d..(s + 1) * n * d],
                d,
                &h[s * n * hidden..(s + 1) * n * hidden],
                hidden,
                widths,
                &p,
            )
        })
        .collect();
    (n, tape.value(y).data().to_vec(), expected)
}

pub fn tgcn_error(seed: u64) -> f64 {
    let (_, got, want) = tgcn_case(400 + seed);
    max_diff(&got, &want)
}
