//! Central-difference validation of analytic gradients.
//!
//! The checker is the independent oracle for every differentiable path in
//! the repository: it never looks at the tape's backward rules, only at the
//! scalar the forward pass produces under parameter perturbations.

use super::params::ParamStore;
use super::tape::{NodeId, Tape};
use super::{NumericsError, Result};

#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub entries_checked: usize,
    pub worst_param: String,
    pub worst_index: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl std::fmt::Display for FdReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} over {} entries: max rel err {:.3e} (worst {}[{}]), tol {:.1e}",
            if self.passed { "pass" } else { "FAIL" },
            self.entries_checked,
            self.max_rel_err,
            self.worst_param,
            self.worst_index,
            self.tolerance
        )
    }
}

/// Relative error convention: |a - g| / max(|a|, |g|, 1e-8).
pub fn rel_err(a: f64, g: f64) -> f64 {
    (a - g).abs() / (a.abs().max(g.abs()).max(1e-8))
}

/// Compare the analytic gradient of a scalar-valued tape program against
/// central differences for every entry of every parameter in `names`.
///
/// `build` must be deterministic: it is re-run many times under perturbed
/// parameter values and must return the scalar loss node each time.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    names: &[String],
    eps: f64,
    tol: f64,
    mut build: F,
) -> Result<FdReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    if eps <= 0.0 {
        return Err(NumericsError::InvalidInput {
            op: "finite_diff_check".into(),
            detail: "eps must be positive".into(),
        });
    }

    // Analytic pass.
    store.zero_grads();
    let mut tape = Tape::new();
    let out = build(&mut tape, store)?;
    if tape.value(out).len() != 1 {
        return Err(NumericsError::Evaluation("checked function must be scalar-valued".into()));
    }
    if !tape.value(out).item().is_finite() {
        return Err(NumericsError::Evaluation("non-finite function value".into()));
    }
    tape.backward(out)?;
    tape.accumulate_grads(store)?;

    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    for name in names {
        analytic.push((name.clone(), store.grad(name)?.data().to_vec()));
    }

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = build(&mut tape, store)?;
        let v = tape.value(out).item();
        if !v.is_finite() {
            return Err(NumericsError::Evaluation("non-finite function value".into()));
        }
        Ok(v)
    };

    let mut report = FdReport {
        max_rel_err: 0.0,
        entries_checked: 0,
        worst_param: String::new(),
        worst_index: 0,
        tolerance: tol,
        passed: true,
    };

    for (name, grads) in &analytic {
        for idx in 0..grads.len() {
            let original = store.get(name)?.data()[idx];
            store.get_mut(name)?.data_mut()[idx] = original + eps;
            let up = eval(store)?;
            store.get_mut(name)?.data_mut()[idx] = original - eps;
            let down = eval(store)?;
            store.get_mut(name)?.data_mut()[idx] = original;

            let fd = (up - down) / (2.0 * eps);
            let err = rel_err(fd, grads[idx]);
            report.entries_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_param = name.clone();
                report.worst_index = idx;
            }
        }
    }
    report.passed = report.max_rel_err < tol;
    store.zero_grads();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn quadratic_is_exact_under_central_differences() {
        // f(theta) = sum theta^2 at theta = [1, 2]; analytic gradient [2, 4].
        let mut store = ParamStore::new();
        store.insert("theta", Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
        let names = vec!["theta".to_string()];
        let report = finite_diff_check(&mut store, &names, 1e-5, 1e-8, |tape, store| {
            let t = tape.param(store, "theta")?;
            let sq = tape.mul_elem(t, t)?;
            tape.sum(sq)
        })
        .unwrap();
        assert!(report.passed, "{report}");
        assert!(report.max_rel_err < 1e-8, "{report}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut store = ParamStore::new();
        store.insert("theta", Tensor::vector(vec![0.4, -1.1, 2.0]).unwrap()).unwrap();
        let names = vec!["theta".to_string()];
        let report = finite_diff_check(&mut store, &names, 1e-5, 1e-6, |tape, store| {
            let t = tape.param(store, "theta")?;
            let zero = tape.scale(t, 0.0)?;
            let s = tape.sum(zero)?;
            let one = tape.leaf(Tensor::scalar(7.0)?)?;
            tape.add(s, one)
        })
        .unwrap();
        assert!(report.passed, "{report}");
        // Analytic side must literally be zeros too.
        let mut tape = Tape::new();
        let t = tape.param(&store, "theta").unwrap();
        let zero = tape.scale(t, 0.0).unwrap();
        let s = tape.sum(zero).unwrap();
        tape.backward(s).unwrap();
        tape.accumulate_grads(&mut store).unwrap();
        assert!(store.grad("theta").unwrap().data().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn softmax_cross_entropy_gradient_checks() {
        let mut store = ParamStore::new();
        store.insert("logits", Tensor::vector(vec![0.3, -1.2, 0.9, 0.1]).unwrap()).unwrap();
        let names = vec!["logits".to_string()];
        let report = finite_diff_check(&mut store, &names, 1e-5, 1e-6, |tape, store| {
            let z = tape.param(store, "logits")?;
            let p = tape.softmax(z)?;
            let p = tape.clamp_min(p, 1e-12)?;
            let logp = tape.log(p)?;
            let target = tape.leaf(Tensor::vector(vec![0.1, 0.2, 0.3, 0.4])?)?;
            let ce = tape.dot(target, logp)?;
            tape.scale(ce, -1.0)
        })
        .unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn rejects_non_positive_eps() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::vector(vec![1.0]).unwrap()).unwrap();
        let names = vec!["x".to_string()];
        let r = finite_diff_check(&mut store, &names, 0.0, 1e-4, |tape, store| {
            let x = tape.param(store, "x")?;
            tape.sum(x)
        });
        assert!(r.is_err());
    }
}
