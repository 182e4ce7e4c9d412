//! Central finite-difference validation of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::array::Array;
use super::store::ParamStore;
use super::tape::{Tape, ValueId};
use crate::error::{Error, Result};

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
}

impl CheckReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.max_rel_err < threshold
    }
}

/// Evaluate a scalar-valued graph builder against the current parameters.
pub fn eval_scalar<F>(store: &ParamStore, f: &mut F) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<ValueId>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    tape.value(out).item()
}

/// Compare analytic gradients of `f` against central finite differences
/// (f(θ+δ) − f(θ−δ)) / 2δ for every parameter coordinate.
///
/// Returns the maximum over coordinates of
/// |analytic − numeric| / max(1e-8, |analytic| + |numeric|).
/// `f` must be deterministic given the parameters.
pub fn gradient_check<F>(store: &mut ParamStore, step: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<ValueId>,
{
    if step <= 0.0 {
        return Err(Error::Config(format!("gradient check step must be > 0, got {step}")));
    }

    store.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    if !tape.value(loss).is_scalar() {
        return Err(Error::Shape {
            op: "gradient_check",
            lhs: tape.value(loss).shape().to_vec(),
            rhs: vec![1],
        });
    }
    tape.backward(loss, store)?;
    let analytic: Vec<Vec<f64>> = store
        .iter()
        .map(|(_, p)| p.grad.data().to_vec())
        .collect();

    let mut max_rel = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for (pi, pid) in ids.iter().enumerate() {
        let n = store.get(*pid).value.numel();
        for i in 0..n {
            let orig = store.get(*pid).value.data()[i];

            store.get_mut(*pid).value.data_mut()[i] = orig + step;
            let plus = eval_scalar(store, &mut f);
            store.get_mut(*pid).value.data_mut()[i] = orig - step;
            let minus = eval_scalar(store, &mut f);
            store.get_mut(*pid).value.data_mut()[i] = orig;

            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                let name = &store.get(*pid).name;
                return Err(Error::Numeric(format!(
                    "non-finite value while probing {name}[{i}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[pi][i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}

fn random_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Shift values away from zero so finite differences stay valid at the
/// relu kink and the sqrt singularity.
fn away_from_zero(v: &mut [f64], margin: f64) {
    for x in v.iter_mut() {
        if x.abs() < margin {
            *x += if *x >= 0.0 { margin } else { -margin };
        }
    }
}

/// Finite-difference checks for every tape primitive, on seeded random
/// inputs in [-1, 1], step 1e-5.
pub fn primitive_checks(seed: u64) -> Result<Vec<CheckReport>> {
    const STEP: f64 = 1e-5;
    let mut reports = Vec::new();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    // Fixed mixing weights give every output coordinate a distinct pull.
    let mix = |tape: &mut Tape, x: ValueId| -> Result<ValueId> {
        let n = tape.value(x).numel();
        let w = tape.leaf(Array::vector(
            (0..n).map(|i| 0.3 + 0.7 * (i as f64 + 1.0)).collect(),
        ));
        let flat = tape.reshape(x, &[n])?;
        let prod = tape.mul(flat, w)?;
        tape.sum(prod)
    };

    // matmul: random 3x4 · 4x2
    {
        let mut store = ParamStore::new();
        let a = store.add("a", Array::from_vec(&[3, 4], random_vec(&mut rng, 12))?)?;
        let b = store.add("b", Array::from_vec(&[4, 2], random_vec(&mut rng, 8))?)?;
        let err = gradient_check(&mut store, STEP, |t, s| {
            let av = t.param(s, a);
            let bv = t.param(s, b);
            let m = t.matmul(av, bv)?;
            mix(t, m)
        })?;
        reports.push(CheckReport {
            name: "matmul".into(),
            max_rel_err: err,
        });
    }

    // add / sub / mul / scale
    for (name, which) in [("add", 0u8), ("sub", 1), ("mul", 2), ("scale", 3)] {
        let mut store = ParamStore::new();
        let a = store.add("a", Array::vector(random_vec(&mut rng, 6)))?;
        let b = store.add("b", Array::vector(random_vec(&mut rng, 6)))?;
        let err = gradient_check(&mut store, STEP, |t, s| {
            let av = t.param(s, a);
            let bv = t.param(s, b);
            let out = match which {
                0 => t.add(av, bv)?,
                1 => t.sub(av, bv)?,
                2 => t.mul(av, bv)?,
                _ => t.scale(av, -1.7)?,
            };
            mix(t, out)
        })?;
        reports.push(CheckReport {
            name: name.into(),
            max_rel_err: err,
        });
    }

    // relu (inputs nudged off the kink)
    {
        let mut v = random_vec(&mut rng, 8);
        away_from_zero(&mut v, 0.05);
        let mut store = ParamStore::new();
        let x = store.add("x", Array::vector(v))?;
        let err = gradient_check(&mut store, STEP, |t, s| {
            let xv = t.param(s, x);
            let out = t.relu(xv)?;
            mix(t, out)
        })?;
        reports.push(CheckReport {
            name: "relu".into(),
            max_rel_err: err,
        });
    }

    // sqrt (positive inputs)
    {
        let v: Vec<f64> = (0..6).map(|_| rng.random_range(0.5..1.5)).collect();
        let mut store = ParamStore::new();
        let x = store.add("x", Array::vector(v))?;
        let err = gradient_check(&mut store, STEP, |t, s| {
            let xv = t.param(s, x);
            let out = t.sqrt(xv)?;
            mix(t, out)
        })?;
        reports.push(CheckReport {
            name: "sqrt".into(),
            max_rel_err: err,
        });
    }

    // softplus
    {
        let mut store = ParamStore::new();
        let x = store.add("x", Array::vector(random_vec(&mut rng, 6)))?;
        let err = gradient_check(&mut store, STEP, |t, s| {
            let xv = t.param(s, x);
            let out = t.softplus(xv)?;
            mix(t, out)
        })?;
        reports.push(CheckReport {
            name: "softplus".into(),
            max_rel_err: err,
        });
    }

    // softmax and logsumexp
    for name in ["softmax", "logsumexp"] {
        let mut store = ParamStore::new();
        let x = store.add("x", Array::vector(random_vec(&mut rng, 5)))?;
        let err = gradient_check(&mut store, STEP, |t, s| {
            let xv = t.param(s, x);
            if name == "softmax" {
                let out = t.softmax(xv)?;
                mix(t, out)
            } else {
                t.logsumexp(xv)
            }
        })?;
        reports.push(CheckReport {
            name: name.into(),
            max_rel_err: err,
        });
    }

    // sum
    {
        let mut store = ParamStore::new();
        let x = store.add("x", Array::vector(random_vec(&mut rng, 7)))?;
        let err = gradient_check(&mut store, STEP, |t, s| {
            let xv = t.param(s, x);
            t.sum(xv)
        })?;
        reports.push(CheckReport {
            name: "sum".into(),
            max_rel_err: err,
        });
    }

    // mean_rows
    {
        let mut store = ParamStore::new();
        let x = store.add("x", Array::from_vec(&[4, 3], random_vec(&mut rng, 12))?)?;
        let err = gradient_check(&mut store, STEP, |t, s| {
            let xv = t.param(s, x);
            let out = t.mean_rows(xv)?;
            mix(t, out)
        })?;
        reports.push(CheckReport {
            name: "mean_rows".into(),
            max_rel_err: err,
        });
    }

    // stack_rows
    {
        let mut store = ParamStore::new();
        let a = store.add("a", Array::vector(random_vec(&mut rng, 4)))?;
        let b = store.add("b", Array::vector(random_vec(&mut rng, 4)))?;
        let c = store.add("c", Array::vector(random_vec(&mut rng, 4)))?;
        let err = gradient_check(&mut store, STEP, |t, s| {
            let rows = [t.param(s, a), t.param(s, b), t.param(s, c)];
            let m = t.stack_rows(&rows)?;
            mix(t, m)
        })?;
        reports.push(CheckReport {
            name: "stack_rows".into(),
            max_rel_err: err,
        });
    }

    // concat (gradient splits at the boundary)
    {
        let mut store = ParamStore::new();
        let a = store.add("a", Array::vector(random_vec(&mut rng, 3)))?;
        let b = store.add("b", Array::vector(random_vec(&mut rng, 5)))?;
        let err = gradient_check(&mut store, STEP, |t, s| {
            let av = t.param(s, a);
            let bv = t.param(s, b);
            let out = t.concat(av, bv)?;
            mix(t, out)
        })?;
        reports.push(CheckReport {
            name: "concat".into(),
            max_rel_err: err,
        });
    }

    // index
    {
        let mut store = ParamStore::new();
        let x = store.add("x", Array::vector(random_vec(&mut rng, 6)))?;
        let err = gradient_check(&mut store, STEP, |t, s| {
            let xv = t.param(s, x);
            t.index(xv, 2)
        })?;
        reports.push(CheckReport {
            name: "index".into(),
            max_rel_err: err,
        });
    }

    // cosine
    {
        let mut store = ParamStore::new();
        let mut va = random_vec(&mut rng, 5);
        let mut vb = random_vec(&mut rng, 5);
        away_from_zero(&mut va, 0.1);
        away_from_zero(&mut vb, 0.1);
        let a = store.add("a", Array::vector(va))?;
        let b = store.add("b", Array::vector(vb))?;
        let err = gradient_check(&mut store, STEP, |t, s| {
            let av = t.param(s, a);
            let bv = t.param(s, b);
            t.cosine(av, bv)
        })?;
        reports.push(CheckReport {
            name: "cosine".into(),
            max_rel_err: err,
        });
    }

    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        // f(θ) = θ² at θ = 3: analytic 6, numeric 6 + O(δ²).
        let mut store = ParamStore::new();
        let x = store.add("x", Array::scalar(3.0)).unwrap();
        let err = gradient_check(&mut store, 1e-5, |t, s| {
            let xv = t.param(s, x);
            t.mul(xv, xv)
        })
        .unwrap();
        assert!(err < 1e-9, "rel err {err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut store = ParamStore::new();
        let _x = store.add("x", Array::vector(vec![1.0, 2.0])).unwrap();
        let err = gradient_check(&mut store, 1e-5, |t, _s| Ok(t.scalar(4.0))).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn softmax_cross_entropy_micro_net() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let w = store
            .add("w", Array::from_vec(&[4, 3], random_vec(&mut rng, 12)).unwrap())
            .unwrap();
        let b = store
            .add("b", Array::vector(random_vec(&mut rng, 4)))
            .unwrap();
        let xdata = Array::from_vec(&[3, 1], random_vec(&mut rng, 3)).unwrap();
        let err = gradient_check(&mut store, 1e-5, |t, s| {
            let wv = t.param(s, w);
            let bv = t.param(s, b);
            let x = t.leaf(xdata.clone());
            let wx = t.matmul(wv, x)?;
            let flat = t.reshape(wx, &[4])?;
            let logits = t.add(flat, bv)?;
            let lse = t.logsumexp(logits)?;
            let target = t.index(logits, 1)?;
            t.sub(lse, target)
        })
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn all_primitives_pass() {
        for report in primitive_checks(7).unwrap() {
            assert!(
                report.passes(1e-4),
                "{} rel err {}",
                report.name,
                report.max_rel_err
            );
        }
    }

    #[test]
    fn rejects_nonpositive_step() {
        let mut store = ParamStore::new();
        store.add("x", Array::scalar(1.0)).unwrap();
        assert!(gradient_check(&mut store, 0.0, |t, _| Ok(t.scalar(1.0))).is_err());
    }
}
