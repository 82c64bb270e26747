mod common;

use common::*;
use firecast_core::models::{ConvLstmConfig, GruConfig, TgcnConfig};
use firecast_core::nn::{grad_check, Bound, Init, ParamStore, Tape, Var};
use firecast_core::sampling::build_grid_graph;
use firecast_core::{ModelConfig, Result, SampleSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;
const OP_TOL: f64 = 1e-6;
const MODEL_TOL: f64 = 1e-4;

fn uniform(store: &mut ParamStore, name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> firecast_core::nn::ParamId {
    store.add(name, shape, Init::Uniform { fan_in: 1 }, rng).unwrap()
}

/// Contracts `y` with fixed random weights so every output coordinate matters.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(y).to_vec();
    let n = tape.value(y).len();
    let r = tape.constant(tensor(&shape, randn(&mut rng, n, 1.0)));
    let m = tape.mul(y, r)?;
    Ok(tape.sum(m))
}

fn check<F>(store: &mut ParamStore, f: F)
where
    F: FnMut(&mut Tape, &Bound) -> Result<Var>,
{
    let report = grad_check(store, f, EPS, 400, 0).unwrap();
    assert!(report.probed > 0);
    assert!(report.max_rel_error < OP_TOL, "{report:?}");
}

#[test]
fn dense_and_pointwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut s = ParamStore::new();
    let x = uniform(&mut s, "x", &[3, 4], &mut rng);
    let w = uniform(&mut s, "w", &[4, 5], &mut rng);
    let b = uniform(&mut s, "b", &[5], &mut rng);
    let z = uniform(&mut s, "z", &[3, 5], &mut rng);
    check(&mut s, |t, p| {
        let y = t.dense(p[x], p[w], Some(p[b]))?;
        let a = t.sigmoid(y);
        let c = t.tanh(y);
        let d = t.one_minus(a);
        let e = t.mul(c, d)?;
        let f = t.add(e, p[z])?;
        let g = t.mul(f, p[z])?;
        project(t, g, 9)
    });
}

#[test]
fn relu_away_from_kink() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut s = ParamStore::new();
    let x = s.add("x", &[2, 3], Init::Constant(0.0), &mut rng).unwrap();
    let vals = [0.7, -0.4, 1.3, -2.0, 0.2, -0.9];
    s.get_mut(x).value.data_mut().copy_from_slice(&vals);
    check(&mut s, |t, p| {
        let y = t.relu(p[x]);
        project(t, y, 3)
    });
}

#[test]
fn conv2d_same_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = ParamStore::new();
    let x = uniform(&mut s, "x", &[2, 2, 4, 3], &mut rng);
    let k = uniform(&mut s, "k", &[3, 2, 3, 3], &mut rng);
    let b = uniform(&mut s, "b", &[3], &mut rng);
    check(&mut s, |t, p| {
        let y = t.conv2d_same(p[x], p[k], Some(p[b]))?;
        let y = t.tanh(y);
        project(t, y, 4)
    });
}

#[test]
fn propagate_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = build_grid_graph(1, 4).unwrap();
    let mut s = ParamStore::new();
    let x = uniform(&mut s, "x", &[18, 3], &mut rng);
    check(&mut s, |t, p| {
        let y = t.propagate(g.adjacency_norm.clone(), 9, p[x])?;
        let y = t.sigmoid(y);
        project(t, y, 5)
    });
}

#[test]
fn concat_slice_reshape_and_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = ParamStore::new();
    let a = uniform(&mut s, "a", &[2, 3, 2], &mut rng);
    let b = uniform(&mut s, "b", &[2, 1, 2], &mut rng);
    let mask = randn(&mut rng, 2 * 3 * 2, 2.0);
    check(&mut s, |t, p| {
        let c = t.concat(&[p[a], p[b]])?;
        let m = t.slice(c, 1, 3)?;
        let r = t.reshape(m, &[3, 4])?;
        let r = t.tanh(r);
        let r = t.reshape(r, &[2, 3, 2])?;
        let r = t.scale_mask(r, mask.clone())?;
        project(t, r, 6)
    });
}

#[test]
fn attention_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut s = ParamStore::new();
    let q = uniform(&mut s, "q", &[8, 6], &mut rng);
    let k = uniform(&mut s, "k", &[8, 6], &mut rng);
    let v = uniform(&mut s, "v", &[8, 6], &mut rng);
    check(&mut s, |t, p| {
        let y = t.attention(p[q], p[k], p[v], 4, 3)?;
        project(t, y, 7)
    });
}

#[test]
fn weighted_pool_and_bce_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut s = ParamStore::new();
    let x = uniform(&mut s, "x", &[6, 1], &mut rng);
    let w = uniform(&mut s, "w", &[3], &mut rng);
    check(&mut s, |t, p| {
        let y = t.weighted_pool(p[x], p[w], 3)?;
        let y = t.sigmoid(y);
        t.bce_mean(y, &[1.0, 0.0])
    });
}

#[test]
fn gru_end_to_end() {
    let config = ModelConfig::Gru(GruConfig { layers: 2, hidden: 4, dropout: 0.0 });
    let err = model_grad_error(config, SampleSpec::new(3, 1, 0, 1).unwrap(), 5, 11);
    assert!(err < MODEL_TOL, "{err}");
}

#[test]
fn convlstm_end_to_end() {
    let config = ModelConfig::ConvLstm(ConvLstmConfig { hidden: 2, kernel: 3, mlp_widths: vec![6, 4] });
    let err = model_grad_error(config, SampleSpec::new(2, 1, 1, 1).unwrap(), 3, 12);
    assert!(err < MODEL_TOL, "{err}");
}

#[test]
fn tgcn_end_to_end() {
    let config =
        ModelConfig::Tgcn(TgcnConfig { gcn_widths: (3, 3), hidden: 3, heads: 2, d_model: 4, mlp_widths: vec![5, 3] });
    let err = model_grad_error(config, SampleSpec::new(2, 1, 1, 4).unwrap(), 3, 13);
    assert!(err < MODEL_TOL, "{err}");
}
