//! Central-difference gradient checking.

use rand::seq::index::sample;
use rand::Rng;

use super::{Bound, Graph, ParameterSet, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Relative errors use `max(|analytic|, |numeric|, floor)` as denominator.
    pub floor: f64,
    /// Coordinates probed per tensor; larger tensors are subsampled.
    pub max_coords: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, floor: 1e-3, max_coords: 24 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Where the worst error occurred, e.g. `param dense.w[3]` or `input 0[7]`.
    pub worst: String,
    pub probes: usize,
}

fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Check the gradient of the scalar `f(graph, params, inputs)` with respect
/// to every tensor of `params` and every input.
pub fn check_gradients<F>(
    params: &ParameterSet,
    inputs: &[Tensor],
    cfg: &GradCheckConfig,
    rng: &mut impl Rng,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &Bound, &[Var]) -> Result<Var>,
{
    let eval = |p: &ParameterSet, xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let b = g.bind_frozen(p);
        let vs: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&mut g, &b, &vs)?;
        g.value(out).item()
    };

    let mut g = Graph::new();
    let bound = g.bind(params);
    let vars: Vec<Var> = inputs.iter().map(|x| g.variable(x.clone())).collect();
    let out = f(&mut g, &bound, &vars)?;
    if g.value(out).len() != 1 {
        return Err(Error::NonScalarLoss(g.shape(out).to_vec()));
    }
    g.backward(out)?;

    let mut report = GradCheckReport { max_rel_err: 0.0, worst: String::new(), probes: 0 };
    let mut record = |label: String, a: f64, n: f64| {
        let e = relative_error(a, n, cfg.floor);
        report.probes += 1;
        if e > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = report.max_rel_err.max(e);
            report.worst = label;
        }
    };
    let pick = |rng: &mut dyn rand::RngCore, len: usize| -> Vec<usize> {
        if len <= cfg.max_coords {
            (0..len).collect()
        } else {
            sample(rng, len, cfg.max_coords).into_vec()
        }
    };

    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let var = bound.get(name)?;
        let zeros = Tensor::zeros(g.shape(var).to_vec());
        let analytic = g.grad(var).unwrap_or(&zeros);
        for i in pick(rng, analytic.len()) {
            let mut p = params.clone();
            let base = params.get(name).expect("bound name").data()[i];
            p.get_mut(name).expect("bound name").data_mut()[i] = base + cfg.step;
            let up = eval(&p, inputs)?;
            p.get_mut(name).expect("bound name").data_mut()[i] = base - cfg.step;
            let down = eval(&p, inputs)?;
            record(format!("param {name}[{i}]"), analytic.data()[i], (up - down) / (2.0 * cfg.step));
        }
    }
    for (k, &var) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(g.shape(var).to_vec());
        let analytic = g.grad(var).unwrap_or(&zeros);
        for i in pick(rng, analytic.len()) {
            let mut xs = inputs.to_vec();
            let base = inputs[k].data()[i];
            xs[k].data_mut()[i] = base + cfg.step;
            let up = eval(params, &xs)?;
            xs[k].data_mut()[i] = base - cfg.step;
            let down = eval(params, &xs)?;
            record(format!("input {k}[{i}]"), analytic.data()[i], (up - down) / (2.0 * cfg.step));
        }
    }
    Ok(report)
}

/// `sum(out ⊙ weights)` for a fixed random weighting, so that every output
/// coordinate contributes a distinct amount to the checked scalar.
pub fn random_projection(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}
