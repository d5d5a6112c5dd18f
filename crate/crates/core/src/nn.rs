//! Layer descriptors. Each layer owns only parameter names and sizes; the
//! values live in a [`ParamStore`] and are bound on a [`Graph`] per forward
//! pass.

use ndgrad::{Graph, ParamStore, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn join(prefix: &str, leaf: &str) -> String {
    format!("{prefix}.{leaf}")
}

/// `x W + b` over the last axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub prefix: String,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Dense {
    pub fn new(prefix: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        Self {
            prefix: prefix.into(),
            fan_in,
            fan_out,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        store.xavier_uniform(
            join(&self.prefix, "W"),
            &[self.fan_in, self.fan_out],
            self.fan_in,
            self.fan_out,
            rng,
        );
        store.zeros(join(&self.prefix, "b"), &[self.fan_out]);
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(&join(&self.prefix, "W"))?;
        let b = g.param(&join(&self.prefix, "b"))?;
        Ok(g.affine(x, w, b)?)
    }
}

/// Stride-1 temporal convolution over `[B, L, C]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv {
    pub prefix: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub padding: usize,
}

impl Conv {
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        store.xavier_uniform(
            join(&self.prefix, "W"),
            &[self.c_out, self.c_in, self.kernel],
            self.c_in * self.kernel,
            self.c_out * self.kernel,
            rng,
        );
        store.zeros(join(&self.prefix, "b"), &[self.c_out]);
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(&join(&self.prefix, "W"))?;
        let b = g.param(&join(&self.prefix, "b"))?;
        Ok(g.conv1d(x, w, b, self.padding)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    Rnn,
    Gru,
    Lstm,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Rnn => 1,
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

/// One recurrent layer returning the full hidden sequence `[B, L, H]`.
///
/// Gate blocks are laid out `i, f, g, o` for the LSTM and `r, z, n` for the
/// GRU, whose update is `h' = n + z * (h - n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recurrent {
    pub prefix: String,
    pub cell: CellKind,
    pub input: usize,
    pub hidden: usize,
}

impl Recurrent {
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let gh = self.cell.gates() * self.hidden;
        store.xavier_uniform(
            join(&self.prefix, "W_ih"),
            &[self.input, gh],
            self.input,
            gh,
            rng,
        );
        store.xavier_uniform(
            join(&self.prefix, "W_hh"),
            &[self.hidden, gh],
            self.hidden,
            gh,
            rng,
        );
        store.zeros(join(&self.prefix, "b_ih"), &[gh]);
        store.zeros(join(&self.prefix, "b_hh"), &[gh]);
    }

    /// Runs over `x: [B, L, input]`; with `reverse` the sequence is consumed
    /// back to front and the outputs are returned in original time order.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, reverse: bool) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.input {
            return Err(Error::Tensor(ndgrad::Error::ShapeMismatch {
                op: "recurrent",
                lhs: s,
                rhs: vec![self.input],
            }));
        }
        let (batch, len, hid) = (s[0], s[1], self.hidden);
        let w_ih = g.param(&join(&self.prefix, "W_ih"))?;
        let b_ih = g.param(&join(&self.prefix, "b_ih"))?;
        let w_hh = g.param(&join(&self.prefix, "W_hh"))?;
        let b_hh = g.param(&join(&self.prefix, "b_hh"))?;
        let projected = g.affine(x, w_ih, b_ih)?;
        let mut h = g.input(Tensor::zeros(&[batch, hid]));
        let mut c = g.input(Tensor::zeros(&[batch, hid]));
        let mut outs = vec![h; len];
        for step in 0..len {
            let t = if reverse { len - 1 - step } else { step };
            let xt = g.select(projected, 1, t)?;
            let ht = g.affine(h, w_hh, b_hh)?;
            h = match self.cell {
                CellKind::Rnn => {
                    let z = g.add(xt, ht)?;
                    g.tanh(z)
                }
                CellKind::Gru => g.gru_cell(xt, ht, h)?,
                CellKind::Lstm => {
                    let z = g.add(xt, ht)?;
                    let hc = g.lstm_cell(z, c)?;
                    c = g.slice(hc, 1, hid, hid)?;
                    g.slice(hc, 1, 0, hid)?
                }
            };
            outs[t] = h;
        }
        Ok(g.stack(&outs, 1)?)
    }
}

/// Multi-head self-attention over the time axis with a residual connection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfAttention {
    pub prefix: String,
    pub width: usize,
    pub heads: usize,
}

/// Attention output plus the raw attention node, whose weights are read
/// with [`Graph::attention_weights`].
pub struct Attended {
    pub output: Var,
    pub weights: Var,
}

impl SelfAttention {
    pub fn new(prefix: impl Into<String>, width: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "attention heads ({heads}) must divide the hidden size ({width})"
            )));
        }
        Ok(Self {
            prefix: prefix.into(),
            width,
            heads,
        })
    }

    fn projection(&self, leaf: &str) -> Dense {
        Dense::new(join(&self.prefix, leaf), self.width, self.width)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for leaf in ["q", "k", "v", "o"] {
            self.projection(leaf).init(store, rng);
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Attended> {
        let q = self.projection("q").forward(g, x)?;
        let k = self.projection("k").forward(g, x)?;
        let v = self.projection("v").forward(g, x)?;
        let joined = g.attention(q, k, v, self.heads)?;
        let projected = self.projection("o").forward(g, joined)?;
        let output = g.add(x, projected)?;
        Ok(Attended {
            output,
            weights: joined,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recurrent_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let cells = [CellKind::Rnn, CellKind::Gru, CellKind::Lstm];
        for (i, cell) in cells.into_iter().enumerate() {
            let layer = Recurrent {
                prefix: format!("r{i}"),
                cell,
                input: 3,
                hidden: 5,
            };
            layer.init(&mut store, &mut rng);
            let mut g = Graph::with_params(&store);
            let x = g.input(Tensor::full(&[2, 4, 3], 0.3));
            let y = layer.forward(&mut g, x, i == 1).unwrap();
            assert_eq!(g.shape(y), &[2, 4, 5]);
        }
    }

    #[test]
    fn heads_must_divide_width() {
        assert!(SelfAttention::new("a", 16, 3).is_err());
        assert!(SelfAttention::new("a", 16, 16).is_ok());
    }
}
