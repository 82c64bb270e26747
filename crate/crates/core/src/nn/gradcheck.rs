use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Bound, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Max over probed coordinates of `|g_ad − g_fd| / max(1, |g_ad|, |g_fd|)`.
    pub max_rel_error: f64,
    pub probed: usize,
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// finite differences with step `eps`.
///
/// At most `max_coords` coordinates are probed, spread over every parameter
/// tensor in proportion to its size (at least one each). `f` must be a pure
/// function of the parameter values.
pub fn grad_check<F>(
    store: &mut ParamStore,
    mut f: F,
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let out = f(&mut tape, &bound)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = store
        .iter()
        .zip(bound.vars())
        .map(|(p, &v)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.value.len()]))
        .collect();
    drop(tape);

    let total = store.num_scalars().max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let out = f(&mut tape, &bound)?;
        Ok(tape.value(out).data()[0])
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, probed: 0 };
    let ids: Vec<_> = (0..store.len()).collect();
    for pi in ids {
        let len = store.iter().nth(pi).expect("index in range").value.len();
        let coords: Vec<usize> = if total <= max_coords {
            (0..len).collect()
        } else {
            let k = ((max_coords * len) / total).clamp(1, len);
            (0..k).map(|_| rng.gen_range(0..len)).collect()
        };
        for c in coords {
            let orig = param_value(store, pi, c);
            set_param_value(store, pi, c, orig + eps);
            let plus = eval(store)?;
            set_param_value(store, pi, c, orig - eps);
            let minus = eval(store)?;
            set_param_value(store, pi, c, orig);
            let fd = (plus - minus) / (2.0 * eps);
            let ad = analytic[pi][c];
            if !fd.is_finite() || !ad.is_finite() {
                return Err(Error::Numerical("non-finite gradient in grad_check".into()));
            }
            let err = (ad - fd).abs() / 1f64.max(ad.abs()).max(fd.abs());
            report.max_rel_error = report.max_rel_error.max(err);
            report.probed += 1;
        }
    }
    Ok(report)
}

fn param_value(store: &ParamStore, p: usize, c: usize) -> f64 {
    store.iter().nth(p).expect("index in range").value.data()[c]
}

fn set_param_value(store: &mut ParamStore, p: usize, c: usize, v: f64) {
    store.iter_mut().nth(p).expect("index in range").value.data_mut()[c] = v;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Init, Tensor};

    #[test]
    fn square_at_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let w = store.add("w", &[1], Init::Constant(3.0), &mut rng).unwrap();
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let sq = tape.mul(b[w], b[w]).unwrap();
        let f = tape.sum(sq);
        tape.backward(f).unwrap();
        assert_eq!(tape.grad(b[w]).unwrap(), &[6.0]);

        let report = grad_check(
            &mut store,
            |t, b| {
                let sq = t.mul(b[w], b[w])?;
                Ok(t.sum(sq))
            },
            1e-5,
            10,
            0,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8);
        assert_eq!(report.probed, 1);
    }

    #[test]
    fn logistic_unit_bce() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let w = store.add("w", &[3, 1], Init::Uniform { fan_in: 3 }, &mut rng).unwrap();
        let b = store.add("b", &[1], Init::Uniform { fan_in: 3 }, &mut rng).unwrap();
        let x = Tensor::new(&[4, 3], vec![0.3, -1.0, 2.0, 1.5, 0.2, -0.7, -0.4, 0.9, 0.1, 1.0, 1.0, -1.0]).unwrap();
        let labels = [1.0, 0.0, 1.0, 0.0];
        let report = grad_check(
            &mut store,
            |t, p| {
                let xv = t.constant(x.clone());
                let z = t.dense(xv, p[w], Some(p[b]))?;
                let s = t.sigmoid(z);
                t.bce_mean(s, &labels)
            },
            1e-5,
            100,
            0,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }
}
