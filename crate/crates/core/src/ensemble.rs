//! Dual-channel weighting of the extractor pool.
//!
//! Channel 1 maps a fixed random vector to softmax weights `w`; channel 2
//! maps its own fixed vector to selection gates `g`. The pool's feature maps
//! are combined with `c = w * g / sum(w * g)`.

use std::fmt::Write as _;

use ndgrad::{Graph, ParamStore, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modelpool::ExtractorKind;
use crate::nn::Dense;

/// Channel-net settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    /// Length of each channel's random input; `None` uses the pool size K.
    pub z_dim: Option<usize>,
    pub channel_hidden: usize,
    /// Gate sharpness lambda in `sigmoid(lambda * x)`.
    pub gate_steepness: f64,
    pub renormalize: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            z_dim: None,
            channel_hidden: 32,
            gate_steepness: 10.0,
            renormalize: true,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.z_dim == Some(0) || self.channel_hidden == 0 {
            return Err(Error::Config(
                "ensemble.z_dim and ensemble.channel_hidden must be at least 1".into(),
            ));
        }
        if !(self.gate_steepness > 0.0 && self.gate_steepness.is_finite()) {
            return Err(Error::Config(format!(
                "ensemble.gate_steepness must be positive, got {}",
                self.gate_steepness
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Terminal {
    Softmax,
    SteepSigmoid,
}

/// A small MLP over an immutable random input vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelNet {
    pub prefix: String,
    pub z_dim: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub dropout: f64,
    pub terminal: Terminal,
}

impl ChannelNet {
    fn blocks(&self) -> [Dense; 3] {
        [
            Dense::new(format!("{}.fc0", self.prefix), self.z_dim, self.hidden),
            Dense::new(format!("{}.fc1", self.prefix), self.hidden, self.hidden),
            Dense::new(format!("{}.out", self.prefix), self.hidden, self.outputs),
        ]
    }

    pub fn z_name(&self) -> String {
        format!("{}.z", self.prefix)
    }

    /// Draws the fixed standard-normal input and initialises the MLP.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let z: Vec<f64> = (0..self.z_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        store.insert(self.z_name(), Tensor::vector(z), false);
        self.blocks().iter().for_each(|b| b.init(store, rng));
    }

    /// Pre-activation outputs, shape `[K]`.
    pub fn logits(&self, g: &mut Graph<'_>) -> Result<Var> {
        let [fc0, fc1, out] = self.blocks();
        let mut h = g.param(&self.z_name())?;
        for block in [fc0, fc1] {
            h = block.forward(g, h)?;
            h = g.relu(h);
            h = g.dropout(h, self.dropout)?;
        }
        out.forward(g, h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateMode {
    /// Smooth gates `sigmoid(lambda * logit)`.
    Train,
    /// Hard gates `logit > 0`.
    Infer,
}

/// `w = softmax(logits)` over the K extractors.
pub fn interpret_weights(g: &mut Graph<'_>, channel1: &ChannelNet) -> Result<Var> {
    let l = channel1.logits(g)?;
    Ok(g.softmax(l, 0)?)
}

/// Gate values from channel-2 logits.
pub fn gates_from_logits(g: &mut Graph<'_>, logits: Var, steepness: f64, mode: GateMode) -> Var {
    match mode {
        GateMode::Train => g.sigmoid_steep(logits, steepness),
        GateMode::Infer => {
            let hard = g
                .value(logits)
                .data()
                .iter()
                .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
                .collect();
            g.input(Tensor::vector(hard))
        }
    }
}

pub fn select_gates(
    g: &mut Graph<'_>,
    channel2: &ChannelNet,
    steepness: f64,
    mode: GateMode,
) -> Result<Var> {
    if !(steepness > 0.0) {
        return Err(Error::Config(format!(
            "gate steepness must be positive, got {steepness}"
        )));
    }
    let l = channel2.logits(g)?;
    Ok(gates_from_logits(g, l, steepness, mode))
}

/// Weights, gates and combined coefficients of one forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleCoefficients {
    pub w: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    /// Every gate was closed and `c` fell back to `w`.
    pub fallback: bool,
}

/// `sum_k c_k F_k` with `c = w g / sum(w g)` (or `c = w g` without
/// renormalisation). When every gate is closed, `c = w` and a warning is
/// logged.
pub fn combine(
    g: &mut Graph<'_>,
    features: &[Var],
    w: Var,
    gates: Var,
    renormalize: bool,
) -> Result<(Var, EnsembleCoefficients)> {
    let first = *features
        .first()
        .ok_or_else(|| Error::Config("combine needs at least one feature map".into()))?;
    let shape = g.shape(first).to_vec();
    for &f in features {
        if g.shape(f) != shape.as_slice() {
            return Err(Error::Tensor(ndgrad::Error::ShapeMismatch {
                op: "combine",
                lhs: shape,
                rhs: g.shape(f).to_vec(),
            }));
        }
    }
    let k = features.len();
    if g.shape(w) != [k] || g.shape(gates) != [k] {
        return Err(Error::Tensor(ndgrad::Error::ShapeMismatch {
            op: "combine",
            lhs: g.shape(w).to_vec(),
            rhs: g.shape(gates).to_vec(),
        }));
    }
    let wg = g.mul(w, gates)?;
    let total: f64 = g.value(wg).data().iter().sum();
    let fallback = total == 0.0;
    let c = if fallback {
        log::warn!("all ensemble gates are closed; falling back to the channel-1 weights");
        w
    } else if renormalize {
        let s = g.reduce_sum(wg);
        g.div_scalar(wg, s)?
    } else {
        wg
    };
    let coeffs = EnsembleCoefficients {
        w: g.value(w).data().to_vec(),
        g: g.value(gates).data().to_vec(),
        c: g.value(c).data().to_vec(),
        fallback,
    };
    let out = weighted_sum(g, features, c)?;
    Ok((out, coeffs))
}

/// `sum_k c_k F_k`. Terms whose coefficient is exactly zero are skipped, so
/// a one-hot `c` returns the selected map unchanged. A zero coefficient here
/// always comes from a closed hard gate or an underflowed softmax/sigmoid,
/// whose upstream derivative is zero as well.
pub fn weighted_sum(g: &mut Graph<'_>, features: &[Var], c: Var) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (k, &f) in features.iter().enumerate() {
        if g.value(c).data()[k] == 0.0 {
            continue;
        }
        let ck = g.select(c, 0, k)?;
        let term = g.scale(f, ck)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    match acc {
        Some(a) => Ok(a),
        None => {
            let zero = g.scale_const(features[0], 0.0);
            Ok(zero)
        }
    }
}

/// Uniform average of the feature maps (weighting disabled).
pub fn uniform_average(g: &mut Graph<'_>, features: &[Var]) -> Result<Var> {
    let k = features.len();
    let c = g.input(Tensor::vector(vec![1.0 / k as f64; k]));
    weighted_sum(g, features, c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainRow {
    pub kind: ExtractorKind,
    pub w: f64,
    pub g: f64,
    pub c: f64,
}

/// Ensemble coefficients per extractor, largest `c` first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainReport {
    pub rows: Vec<ExplainRow>,
    pub fallback: bool,
    /// Effective fusion weight on the PV branch, when fusion is enabled.
    pub fusion_lambda: Option<f64>,
}

pub fn explain(
    coeffs: &EnsembleCoefficients,
    kinds: &[ExtractorKind],
    fusion_lambda: Option<f64>,
) -> ExplainReport {
    let mut rows: Vec<ExplainRow> = kinds
        .iter()
        .enumerate()
        .map(|(i, &kind)| ExplainRow {
            kind,
            w: coeffs.w[i],
            g: coeffs.g[i],
            c: coeffs.c[i],
        })
        .collect();
    rows.sort_by(|a, b| b.c.total_cmp(&a.c));
    ExplainReport {
        rows,
        fallback: coeffs.fallback,
        fusion_lambda,
    }
}

impl ExplainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,w,g,c\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.kind, r.w, r.g, r.c);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<18} {:>8} {:>4} {:>8}\n", "extractor", "w", "g", "c");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<18} {:>8.4} {:>4} {:>8.4}",
                r.kind.label(),
                r.w,
                r.g,
                r.c
            );
        }
        if self.fallback {
            out.push_str("all gates closed: coefficients fell back to w\n");
        }
        if let Some(l) = self.fusion_lambda {
            let _ = writeln!(out, "fusion lambda (PV branch): {l:.4}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hard_gates_use_strict_threshold() {
        let mut g = Graph::new();
        let l = g.input(Tensor::vector(vec![2.0, -1.5, 0.0]));
        let gate = gates_from_logits(&mut g, l, 10.0, GateMode::Infer);
        assert_eq!(g.value(gate).data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn soft_gate_value() {
        let mut g = Graph::new();
        let l = g.input(Tensor::vector(vec![0.5]));
        let gate = gates_from_logits(&mut g, l, 10.0, GateMode::Train);
        let expected = 1.0 / (1.0 + (-5.0f64).exp());
        assert!((g.value(gate).data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn explain_sorts_by_coefficient() {
        let coeffs = EnsembleCoefficients {
            w: vec![0.2, 0.5, 0.3],
            g: vec![1.0, 0.0, 1.0],
            c: vec![0.4, 0.0, 0.6],
            fallback: false,
        };
        let kinds = &ExtractorKind::ALL[..3];
        let r = explain(&coeffs, kinds, Some(0.5));
        let order: Vec<_> = r.rows.iter().map(|r| r.kind).collect();
        assert_eq!(
            order,
            vec![ExtractorKind::Cnn, ExtractorKind::Lr, ExtractorKind::Mlp]
        );
        assert!(r.to_csv().starts_with("kind,w,g,c\nCNN,"));
    }
}
