use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor_core::graph::{Graph, Var};
use crate::tensor_core::params::{Bindings, ParameterStore};
use crate::tensor_core::Tensor;

pub const DEFAULT_STEP: f64 = 1e-4;
const DENOM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub per_param: BTreeMap<String, f64>,
    pub analytic: BTreeMap<String, Tensor<f64>>,
    pub coordinates: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

/// Compares reverse-mode gradients of the scalar computation `f` against
/// central differences over every parameter in `params`.
pub fn grad_check<F>(f: F, params: &ParameterStore<f64>, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &Bindings) -> Result<Var>,
{
    grad_check_filtered(f, params, h, |_| true)
}

/// Like [`grad_check`], restricted to parameters whose name passes `select`.
/// Analytic gradients are still reported for every parameter.
pub fn grad_check_filtered<F, S>(f: F, params: &ParameterStore<f64>, h: f64, select: S) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &Bindings) -> Result<Var>,
    S: Fn(&str) -> bool,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let mut graph = Graph::new();
    let bindings = params.bind(&mut graph);
    let loss = f(&mut graph, &bindings)?;
    if graph.value(loss).len() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar output, got shape {:?}",
            graph.shape(loss)
        )));
    }
    let mut grads = graph.backward(loss)?;
    let analytic = bindings.collect_grads(&graph, &mut grads);
    drop(graph);

    let eval = |store: &ParameterStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let b = store.bind_frozen(&mut g);
        let out = f(&mut g, &b)?;
        Ok(g.scalar(out))
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        per_param: BTreeMap::new(),
        analytic: BTreeMap::new(),
        coordinates: 0,
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names.iter().filter(|n| select(n)) {
        let n = params.get(name)?.len();
        let mut worst_here = 0.0f64;
        for i in 0..n {
            let orig = work.get(name)?.data()[i];
            work.get_mut(name)?.data_mut()[i] = orig + h;
            let up = eval(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig - h;
            let down = eval(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(analytic[name].data()[i], numeric);
            report.coordinates += 1;
            worst_here = worst_here.max(err);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((name.clone(), i));
            }
        }
        report.per_param.insert(name.clone(), worst_here);
    }
    report.analytic = analytic;
    Ok(report)
}
