//! Central finite-difference checks for tape gradients.

use super::graph::{Graph, Var};
use super::mat::Mat;
use super::params::{ParamId, ParamStore};

/// Per-block comparison of analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct BlockReport {
    pub name: String,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub rel_error: f64,
}

/// `‖a − n‖ / max(‖a‖, ‖n‖, floor)`.
pub fn relative_error(analytic: &Mat, numeric: &Mat, floor: f64) -> f64 {
    let diff = analytic.zip_map(numeric, |a, b| a - b).sq_norm().sqrt();
    let scale = analytic.sq_norm().sqrt().max(numeric.sq_norm().sqrt()).max(floor);
    diff / scale
}

fn numeric_grad(base: &Mat, eps: f64, mut eval: impl FnMut(&Mat) -> f64) -> Mat {
    let mut grad = Mat::zeros(base.rows(), base.cols());
    let mut probe = base.clone();
    for i in 0..base.data().len() {
        let x0 = base.data()[i];
        probe.data_mut()[i] = x0 + eps;
        let up = eval(&probe);
        probe.data_mut()[i] = x0 - eps;
        let down = eval(&probe);
        probe.data_mut()[i] = x0;
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Checks gradients of a scalar function of free inputs.
pub fn check_inputs(
    inputs: &[Mat],
    eps: f64,
    build: impl Fn(&mut Graph, &[Var]) -> Var,
) -> Vec<BlockReport> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|m| g.variable(m.clone())).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss);
    inputs
        .iter()
        .enumerate()
        .map(|(k, base)| {
            let analytic = grads
                .wrt(vars[k])
                .cloned()
                .unwrap_or_else(|| Mat::zeros(base.rows(), base.cols()));
            let numeric = numeric_grad(base, eps, |probe| {
                let mut g = Graph::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, m)| g.variable(if j == k { probe.clone() } else { m.clone() }))
                    .collect();
                let loss = build(&mut g, &vars);
                g.item(loss)
            });
            BlockReport {
                name: format!("input{k}"),
                analytic_norm: analytic.sq_norm().sqrt(),
                numeric_norm: numeric.sq_norm().sqrt(),
                rel_error: relative_error(&analytic, &numeric, 1e-10),
            }
        })
        .collect()
}

/// Checks gradients of a scalar function of stored parameters.
pub fn check_params(
    store: &ParamStore,
    ids: &[ParamId],
    eps: f64,
    build: impl Fn(&mut Graph, &ParamStore) -> Var,
) -> Vec<BlockReport> {
    let mut g = Graph::new();
    let loss = build(&mut g, store);
    let grads = g.backward(loss);
    let mut work = store.clone();
    ids.iter()
        .map(|&id| {
            let base = store.value(id).clone();
            let analytic = grads
                .param(id)
                .cloned()
                .unwrap_or_else(|| Mat::zeros(base.rows(), base.cols()));
            let numeric = numeric_grad(&base, eps, |probe| {
                *work.value_mut(id) = probe.clone();
                let mut g = Graph::new();
                let loss = build(&mut g, &work);
                g.item(loss)
            });
            *work.value_mut(id) = base;
            BlockReport {
                name: store.name(id).to_string(),
                analytic_norm: analytic.sq_norm().sqrt(),
                numeric_norm: numeric.sq_norm().sqrt(),
                rel_error: relative_error(&analytic, &numeric, 1e-10),
            }
        })
        .collect()
}
