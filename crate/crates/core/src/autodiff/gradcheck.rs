//! Central finite-difference verification of analytic gradients.

use serde::Serialize;

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::Result;

/// Outcome of a gradient check.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub label: String,
    /// Max relative error per checked input.
    pub max_rel_error: Vec<f64>,
    pub tol: f64,
    pub passed: bool,
    /// Set when a forward evaluation failed or produced a non-finite value.
    pub failure: Option<String>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }

    fn failed(label: &str, tol: f64, why: String) -> Self {
        Self {
            label: label.to_string(),
            max_rel_error: Vec::new(),
            tol,
            passed: false,
            failure: Some(why),
        }
    }
}

fn rel_error(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / (ad.abs() + fd.abs() + 1e-12)
}

/// Checks `∂f/∂inputs` for a scalar-valued graph builder `f` against central differences.
pub fn grad_check<F>(label: &str, f: F, inputs: &[Tensor<f64>], h: f64, tol: f64) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> std::result::Result<f64, String> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let out = f(&mut tape, &vars).map_err(|e| e.to_string())?;
        let v = tape.value(out).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("non-finite output {v}"))
        }
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let analytic = match f(&mut tape, &vars).and_then(|out| {
        tape.backward(out)?;
        Ok(out)
    }) {
        Ok(_) => vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect::<Vec<_>>(),
        Err(e) => return GradCheckReport::failed(label, tol, e.to_string()),
    };

    let mut work = inputs.to_vec();
    let mut errors = Vec::with_capacity(inputs.len());
    for (i, ad) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for j in 0..ad.len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work);
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work);
            work[i].data_mut()[j] = orig;
            match (plus, minus) {
                (Ok(p), Ok(m)) => worst = worst.max(rel_error(ad[j], (p - m) / (2.0 * h))),
                (Err(e), _) | (_, Err(e)) => return GradCheckReport::failed(label, tol, e),
            }
        }
        errors.push(worst);
    }
    finish(label, errors, tol)
}

/// Checks gradients of a scalar loss with respect to parameters held in a store.
///
/// `f` records the parameters it uses on the tape itself. When `max_elems`
/// is set, at most that many evenly spaced elements of each parameter are
/// perturbed.
pub fn grad_check_params<F>(
    label: &str,
    store: &mut ParamStore<f64>,
    f: F,
    h: f64,
    tol: f64,
    max_elems: Option<usize>,
) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &mut ParamStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    store.zero_grads();
    let analytic = f(&mut tape, store)
        .and_then(|out| tape.backward(out))
        .and_then(|_| store.accumulate_grads(&tape));
    if let Err(e) = analytic {
        return GradCheckReport::failed(label, tol, e.to_string());
    }
    let analytic: Vec<Vec<f64>> = store
        .params()
        .iter()
        .map(|p| p.grad.clone().unwrap_or_else(|| vec![0.0; p.value.numel()]))
        .collect();
    store.zero_grads();

    let eval = |store: &mut ParamStore<f64>| -> std::result::Result<f64, String> {
        let mut tape = Tape::new();
        let out = f(&mut tape, store).map_err(|e| e.to_string())?;
        let v = tape.value(out).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("non-finite output {v}"))
        }
    };

    let mut errors = Vec::with_capacity(analytic.len());
    for (i, ad) in analytic.iter().enumerate() {
        let n = ad.len();
        let picks: Vec<usize> = match max_elems {
            Some(k) if k < n => (0..k).map(|j| j * n / k).collect(),
            _ => (0..n).collect(),
        };
        let mut worst: f64 = 0.0;
        for j in picks {
            let orig = store.params()[i].value.data()[j];
            store.params_mut()[i].value.data_mut()[j] = orig + h;
            let plus = eval(store);
            store.params_mut()[i].value.data_mut()[j] = orig - h;
            let minus = eval(store);
            store.params_mut()[i].value.data_mut()[j] = orig;
            match (plus, minus) {
                (Ok(p), Ok(m)) => worst = worst.max(rel_error(ad[j], (p - m) / (2.0 * h))),
                (Err(e), _) | (_, Err(e)) => return GradCheckReport::failed(label, tol, e),
            }
        }
        errors.push(worst);
    }
    finish(label, errors, tol)
}

fn finish(label: &str, errors: Vec<f64>, tol: f64) -> GradCheckReport {
    let passed = errors.iter().all(|&e| e <= tol);
    GradCheckReport {
        label: label.to_string(),
        max_rel_error: errors,
        tol,
        passed,
        failure: None,
    }
}
