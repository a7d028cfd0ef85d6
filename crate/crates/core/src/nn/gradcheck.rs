//! Finite-difference gradient verification.
//!
//! The checker drives an arbitrary scalar-valued closure over a
//! [`ParamStore`]: once with reverse-mode backprop, then once per parameter
//! element with central differences. The closure must be a pure function of
//! the store contents.

use crate::error::{Error, Result};
use crate::nn::params::{Bound, ParamStore};
use crate::nn::tape::{Tape, Var};
use std::collections::BTreeMap;

pub type ScalarFn<'a> = dyn Fn(&mut Tape, &Bound) -> Result<Var> + 'a;

/// Worst relative error and where it occurred.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

fn forward_scalar(store: &ParamStore, f: &ScalarFn) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let out = f(&mut tape, &bound)?;
    if tape.shape(out) != [1] {
        return Err(Error::Usage(format!(
            "grad_check requires a scalar-valued op, got shape {:?}",
            tape.shape(out)
        )));
    }
    Ok(tape.scalar_value(out))
}

/// Reverse-mode gradients of `f` w.r.t. every parameter.
pub fn analytic_grads(store: &ParamStore, f: &ScalarFn) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let out = f(&mut tape, &bound)?;
    if tape.shape(out) != [1] {
        return Err(Error::Usage(format!(
            "grad_check requires a scalar-valued op, got shape {:?}",
            tape.shape(out)
        )));
    }
    let grads = tape.backward(out)?;
    Ok(store
        .iter()
        .map(|(name, _)| (name.clone(), grads.of(bound.var(name)).to_vec()))
        .collect())
}

/// Central-difference gradients, (f(x+eps) - f(x-eps)) / (2 eps) per element.
pub fn numeric_grads(
    store: &mut ParamStore,
    f: &ScalarFn,
    eps: f64,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let names: Vec<String> = store.names().cloned().collect();
    let mut out = BTreeMap::new();
    for name in names {
        let n = store.get(&name).unwrap().values.len();
        let mut g = vec![0.0; n];
        for (i, slot) in g.iter_mut().enumerate() {
            let orig = store.get(&name).unwrap().values[i];
            store.get_mut(&name).unwrap().values[i] = orig + eps;
            let fp = forward_scalar(store, f)?;
            store.get_mut(&name).unwrap().values[i] = orig - eps;
            let fm = forward_scalar(store, f)?;
            store.get_mut(&name).unwrap().values[i] = orig;
            *slot = (fp - fm) / (2.0 * eps);
        }
        out.insert(name, g);
    }
    Ok(out)
}

/// Relative error between two gradient maps: |a - n| / max(1e-8, |a| + |n|)
/// elementwise, maximized over everything.
pub fn max_rel_err(
    analytic: &BTreeMap<String, Vec<f64>>,
    numeric: &BTreeMap<String, Vec<f64>>,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for (name, a) in analytic {
        let n = &numeric[name];
        for (i, (av, nv)) in a.iter().zip(n).enumerate() {
            let denom = (av.abs() + nv.abs()).max(1e-8);
            let rel = (av - nv).abs() / denom;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.analytic = *av;
                report.numeric = *nv;
            }
        }
    }
    report
}

/// Full check: max relative error between backprop and central differences.
pub fn grad_check(store: &mut ParamStore, f: &ScalarFn, eps: f64) -> Result<GradCheckReport> {
    let analytic = analytic_grads(store, f)?;
    let numeric = numeric_grads(store, f, eps)?;
    Ok(max_rel_err(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn linear_function_is_exact() {
        let mut store = ParamStore::new();
        store.insert("w", &[2, 3], vec![1.0, -2.0, 0.5, 3.0, 0.25, -1.0]);
        let f: &ScalarFn = &|tape, bound| {
            let x = tape.leaf_vector(vec![0.3, 0.7, -0.4]);
            let y = tape.matvec(bound.var("w"), x)?;
            Ok(tape.sum(y))
        };
        let report = grad_check(&mut store, f, 1e-5).unwrap();
        assert!(report.max_rel_err < 1e-10, "{report:?}");
    }

    #[test]
    fn nonlinear_composition_within_tolerance() {
        let mut rng = Rng::seed_from_u64(42);
        let mut store = ParamStore::new();
        store.init_uniform("w", &[4, 3], &mut rng);
        store.init_uniform("b", &[4], &mut rng);
        let f: &ScalarFn = &|tape, bound| {
            let x = tape.leaf_vector(vec![0.2, -0.5, 0.9]);
            let y = tape.affine(bound.var("w"), bound.var("b"), x)?;
            let t = tape.tanh(y);
            let s = tape.sigmoid(t);
            let sm = tape.softmax(s);
            let l = tape.ln(sm);
            Ok(tape.mean(l))
        };
        let report = grad_check(&mut store, f, 1e-5).unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn corrupted_gradient_detected() {
        let mut store = ParamStore::new();
        store.insert("w", &[2], vec![0.4, -0.3]);
        let f: &ScalarFn = &|tape, bound| {
            let w = bound.var("w");
            let sq = tape.mul(w, w)?;
            Ok(tape.sum(sq))
        };
        let mut analytic = analytic_grads(&store, f).unwrap();
        analytic.get_mut("w").unwrap()[1] += 0.5;
        let numeric = numeric_grads(&mut store, f, 1e-5).unwrap();
        let report = max_rel_err(&analytic, &numeric);
        assert!(report.max_rel_err > 1e-4, "{report:?}");
        assert_eq!(report.worst_param, "w");
        assert_eq!(report.worst_index, 1);
    }

    #[test]
    fn non_scalar_loss_is_usage_error() {
        let mut store = ParamStore::new();
        store.insert("w", &[2], vec![1.0, 2.0]);
        let f: &ScalarFn = &|_tape, bound| Ok(bound.var("w"));
        assert!(grad_check(&mut store, f, 1e-5).is_err());
    }
}
