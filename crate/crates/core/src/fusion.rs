//! Auxiliary-feature branch, PV/feature fusion and the prediction head.

use ndgrad::{Graph, ParamStore, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv, Dense};

pub const THETA: &str = "fusion.theta";

/// Two temporal convolutions `N -> HF -> HF` with a ReLU between.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FConvNet {
    pub n_features: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub padding: usize,
}

impl FConvNet {
    fn layers(&self) -> [Conv; 2] {
        [
            Conv {
                prefix: "fconv.conv0".into(),
                c_in: self.n_features,
                c_out: self.hidden,
                kernel: self.kernel,
                padding: self.padding,
            },
            Conv {
                prefix: "fconv.conv1".into(),
                c_in: self.hidden,
                c_out: self.hidden,
                kernel: self.kernel,
                padding: self.padding,
            },
        ]
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.layers().iter().for_each(|c| c.init(store, rng));
    }

    /// `[B, LW, N]` to `[B, LW, HF]`.
    pub fn forward(&self, g: &mut Graph<'_>, aux: Var) -> Result<Var> {
        let s = g.shape(aux);
        if s.len() != 3 || s[2] != self.n_features {
            return Err(Error::Tensor(ndgrad::Error::ShapeMismatch {
                op: "fconv",
                lhs: s.to_vec(),
                rhs: vec![0, 0, self.n_features],
            }));
        }
        let [c0, c1] = self.layers();
        let h = c0.forward(g, aux)?;
        let h = g.relu(h);
        c1.forward(g, h)
    }
}

/// Inserts the fusion logit at `theta` (lambda = sigmoid(theta)).
pub fn init_lambda(store: &mut ParamStore, theta: f64) {
    store.insert(THETA, Tensor::vector(vec![theta]), true);
}

/// `lambda * pv + (1 - lambda) * aux` with `lambda = sigmoid(theta)`.
pub fn fuse(g: &mut Graph<'_>, pv: Var, aux: Var, theta: Var) -> Result<Var> {
    if g.shape(pv) != g.shape(aux) {
        return Err(Error::Tensor(ndgrad::Error::ShapeMismatch {
            op: "fuse",
            lhs: g.shape(pv).to_vec(),
            rhs: g.shape(aux).to_vec(),
        }));
    }
    let lambda = g.sigmoid(theta);
    let neg = g.scale_const(lambda, -1.0);
    let rest = g.add_const(neg, 1.0);
    let a = g.scale(pv, lambda)?;
    let b = g.scale(aux, rest)?;
    Ok(g.add(a, b)?)
}

pub fn lambda_of(theta: f64) -> f64 {
    1.0 / (1.0 + (-theta).exp())
}

/// Flatten, dense to `hidden`, ReLU, dropout, dense to one output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadMlp {
    pub look_back: usize,
    pub width: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl HeadMlp {
    fn layers(&self) -> [Dense; 2] {
        [
            Dense::new("head.fc0", self.look_back * self.width, self.hidden),
            Dense::new("head.fc1", self.hidden, 1),
        ]
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.layers().iter().for_each(|d| d.init(store, rng));
    }

    /// `[B, LW, HF]` to `[B, 1]`.
    pub fn forward(&self, g: &mut Graph<'_>, fused: Var) -> Result<Var> {
        let [fc0, fc1] = self.layers();
        let flat = g.flatten(fused)?;
        let h = fc0.forward(g, flat)?;
        let h = g.relu(h);
        let h = g.dropout(h, self.dropout)?;
        fc1.forward(g, h)
    }
}
