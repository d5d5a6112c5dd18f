//! Central finite-difference checks of tape gradients.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Norm-wise relative error of analytic vs numeric gradients per checked
/// tensor, in checking order.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub errors: Vec<(String, f64)>,
}

impl GradReport {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.errors.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// `||a - n|| / max(||a||, ||n||, 1e-8)`
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied())
        .max(norm(&mut numeric.iter().copied()))
        .max(1e-8);
    diff / scale
}

fn scalar_of(g: &Graph<'_>, v: Var) -> Result<f64> {
    g.value(v)
        .item()
        .ok_or_else(|| Error::NotScalar(g.shape(v).to_vec()))
}

/// Checks `d f / d inputs` where `f` maps differentiable leaves to a scalar.
pub fn check_inputs<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
{
    check_inputs_with(Graph::new, inputs, h, f)
}

/// As [`check_inputs`], with every tape created by `make`. Use this to check
/// training-mode ops: a seeded tape replays the same dropout masks.
pub fn check_inputs_with<M, F>(make: M, inputs: &[Tensor], h: f64, f: F) -> Result<GradReport>
where
    M: Fn() -> Graph<'static>,
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
{
    let mut g = make();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = make();
        let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar_of(&g, out)
    };

    let mut errors = Vec::new();
    for (idx, v) in vars.iter().enumerate() {
        let analytic = g
            .grad(*v)
            .map(Tensor::into_data)
            .unwrap_or_else(|| vec![0.0; inputs[idx].numel()]);
        let mut numeric = Vec::with_capacity(analytic.len());
        let mut xs = inputs.to_vec();
        for j in 0..inputs[idx].numel() {
            let orig = xs[idx].data()[j];
            xs[idx].data_mut()[j] = orig + h;
            let up = eval(&xs)?;
            xs[idx].data_mut()[j] = orig - h;
            let down = eval(&xs)?;
            xs[idx].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        errors.push((format!("input{idx}"), relative_error(&analytic, &numeric)));
    }
    Ok(GradReport { errors })
}

/// Checks gradients of every trainable parameter in `params`. At most
/// `max_coords` evenly spaced coordinates are probed per tensor.
pub fn check_params<F>(params: &ParamStore, h: f64, max_coords: usize, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let mut g = Graph::with_params(params);
    let loss = f(&mut g)?;
    g.backward(loss)?;
    let grads = g.param_grads();

    let eval = |p: &ParamStore| -> Result<f64> {
        let mut g = Graph::with_params(p).track_params(false);
        let out = f(&mut g)?;
        scalar_of(&g, out)
    };

    let mut work = params.clone();
    let mut errors = Vec::new();
    let names: Vec<String> = params
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(n, _)| n.clone())
        .collect();
    for name in names {
        let full = grads
            .get(&name)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; params.value(&name).map(|t| t.numel()).unwrap_or(0)]);
        let n = full.len();
        let stride = n.div_ceil(max_coords.max(1)).max(1);
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for j in (0..n).step_by(stride) {
            let orig = work.value(&name)?.data()[j];
            work.get_mut(&name).unwrap().value.data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work.get_mut(&name).unwrap().value.data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work.get_mut(&name).unwrap().value.data_mut()[j] = orig;
            analytic.push(full[j]);
            numeric.push((up - down) / (2.0 * h));
        }
        errors.push((name, relative_error(&analytic, &numeric)));
    }
    Ok(GradReport { errors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_passes() {
        let x = Tensor::vector(vec![0.3, -1.2, 2.0]);
        let report = check_inputs(&[x], 1e-5, |g, v| {
            let sq = g.mul(v[0], v[0])?;
            let cube = g.mul(sq, v[0])?;
            Ok(g.reduce_sum(cube))
        })
        .unwrap();
        assert!(report.max_error() < 1e-6, "{report:?}");
    }

    #[test]
    fn relative_error_is_zero_for_equal_vectors() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!(relative_error(&[1.0, 0.0], &[0.0, 1.0]) > 1.0);
    }
}
