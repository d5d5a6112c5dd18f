//! The eight per-timestep feature extractors.

use std::fmt;

use ndgrad::{Graph, ParamStore, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{CellKind, Conv, Dense, Recurrent, SelfAttention};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExtractorKind {
    #[serde(rename = "LR")]
    Lr,
    #[serde(rename = "MLP")]
    Mlp,
    #[serde(rename = "CNN")]
    Cnn,
    #[serde(rename = "RNN")]
    Rnn,
    #[serde(rename = "GRU")]
    Gru,
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "BiLSTM")]
    BiLstm,
    #[serde(rename = "BiLSTM_Attention")]
    BiLstmAttention,
}

impl ExtractorKind {
    pub const ALL: [ExtractorKind; 8] = [
        ExtractorKind::Lr,
        ExtractorKind::Mlp,
        ExtractorKind::Cnn,
        ExtractorKind::Rnn,
        ExtractorKind::Gru,
        ExtractorKind::Lstm,
        ExtractorKind::BiLstm,
        ExtractorKind::BiLstmAttention,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ExtractorKind::Lr => "LR",
            ExtractorKind::Mlp => "MLP",
            ExtractorKind::Cnn => "CNN",
            ExtractorKind::Rnn => "RNN",
            ExtractorKind::Gru => "GRU",
            ExtractorKind::Lstm => "LSTM",
            ExtractorKind::BiLstm => "BiLSTM",
            ExtractorKind::BiLstmAttention => "BiLSTM_Attention",
        }
    }

    /// Parameter-name segment, e.g. `pool.lstm.layer0.W_ih`.
    pub fn slug(self) -> &'static str {
        match self {
            ExtractorKind::Lr => "lr",
            ExtractorKind::Mlp => "mlp",
            ExtractorKind::Cnn => "cnn",
            ExtractorKind::Rnn => "rnn",
            ExtractorKind::Gru => "gru",
            ExtractorKind::Lstm => "lstm",
            ExtractorKind::BiLstm => "bilstm",
            ExtractorKind::BiLstmAttention => "bilstm_attn",
        }
    }
}

impl fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolConfig {
    pub hidden_size: usize,
    pub layers: usize,
    pub kernel: usize,
    pub padding: usize,
    pub heads: usize,
    pub dropout: f64,
    /// Stride of the max pooling in the standalone diagnostic heads.
    pub pool_stride: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            hidden_size: 64,
            layers: 2,
            kernel: 3,
            padding: 1,
            heads: 16,
            dropout: 0.1,
            pool_stride: 2,
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        let hf = self.hidden_size;
        if hf == 0 || self.layers == 0 {
            return Err(Error::Config(
                "pool.hidden_size and pool.layers must be at least 1".into(),
            ));
        }
        if self.heads == 0 || !hf.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "pool.heads ({}) must divide pool.hidden_size ({hf})",
                self.heads
            )));
        }
        if !hf.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "pool.hidden_size ({hf}) must be even to split across BiLSTM directions"
            )));
        }
        if self.kernel == 0 || 2 * self.padding + 1 != self.kernel {
            return Err(Error::Config(format!(
                "pool.kernel ({}) and pool.padding ({}) must preserve the window length",
                self.kernel, self.padding
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "pool.dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.pool_stride == 0 {
            return Err(Error::Config("pool.pool_stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// The extractor pool. Each member maps `[B, LW, input_dim]` to `[B, LW, HF]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelPool {
    pub cfg: PoolConfig,
    pub input_dim: usize,
}

impl ModelPool {
    pub fn new(cfg: PoolConfig, input_dim: usize) -> Result<Self> {
        cfg.validate()?;
        if input_dim == 0 {
            return Err(Error::Config(
                "pool input dimension must be at least 1".into(),
            ));
        }
        Ok(Self { cfg, input_dim })
    }

    pub fn kinds(&self) -> &'static [ExtractorKind] {
        &ExtractorKind::ALL
    }

    pub fn len(&self) -> usize {
        ExtractorKind::ALL.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn prefix(kind: ExtractorKind) -> String {
        format!("pool.{}", kind.slug())
    }

    fn dense_stack(&self, kind: ExtractorKind) -> Vec<Dense> {
        let hf = self.cfg.hidden_size;
        (0..self.cfg.layers)
            .map(|l| {
                let fan_in = if l == 0 { self.input_dim } else { hf };
                Dense::new(format!("{}.fc{l}", Self::prefix(kind)), fan_in, hf)
            })
            .collect()
    }

    fn conv_stack(&self) -> Vec<Conv> {
        let hf = self.cfg.hidden_size;
        (0..self.cfg.layers)
            .map(|l| Conv {
                prefix: format!("pool.cnn.conv{l}"),
                c_in: if l == 0 { self.input_dim } else { hf },
                c_out: hf,
                kernel: self.cfg.kernel,
                padding: self.cfg.padding,
            })
            .collect()
    }

    fn recurrent_stack(
        &self,
        kind: ExtractorKind,
        cell: CellKind,
        dir: Option<&str>,
    ) -> Vec<Recurrent> {
        let hf = self.cfg.hidden_size;
        let hidden = if dir.is_some() { hf / 2 } else { hf };
        (0..self.cfg.layers)
            .map(|l| Recurrent {
                prefix: match dir {
                    Some(d) => format!("{}.layer{l}.{d}", Self::prefix(kind)),
                    None => format!("{}.layer{l}", Self::prefix(kind)),
                },
                cell,
                input: if l == 0 { self.input_dim } else { hf },
                hidden,
            })
            .collect()
    }

    fn attention(&self) -> SelfAttention {
        SelfAttention::new(
            "pool.bilstm_attn.attn",
            self.cfg.hidden_size,
            self.cfg.heads,
        )
        .expect("validated in ModelPool::new")
    }

    /// Initialises every extractor's parameters in kind order.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for &kind in self.kinds() {
            match kind {
                ExtractorKind::Lr | ExtractorKind::Mlp => self
                    .dense_stack(kind)
                    .iter()
                    .for_each(|d| d.init(store, rng)),
                ExtractorKind::Cnn => self.conv_stack().iter().for_each(|c| c.init(store, rng)),
                ExtractorKind::Rnn | ExtractorKind::Gru | ExtractorKind::Lstm => {
                    let cell = match kind {
                        ExtractorKind::Rnn => CellKind::Rnn,
                        ExtractorKind::Gru => CellKind::Gru,
                        _ => CellKind::Lstm,
                    };
                    self.recurrent_stack(kind, cell, None)
                        .iter()
                        .for_each(|r| r.init(store, rng));
                }
                ExtractorKind::BiLstm | ExtractorKind::BiLstmAttention => {
                    let fwd = self.recurrent_stack(kind, CellKind::Lstm, Some("fwd"));
                    let bwd = self.recurrent_stack(kind, CellKind::Lstm, Some("bwd"));
                    for (f, b) in fwd.iter().zip(&bwd) {
                        f.init(store, rng);
                        b.init(store, rng);
                    }
                    if kind == ExtractorKind::BiLstmAttention {
                        self.attention().init(store, rng);
                    }
                }
            }
        }
    }

    fn check_input(&self, g: &Graph<'_>, x: Var) -> Result<()> {
        let s = g.shape(x);
        if s.len() != 3 || s[2] != self.input_dim || s[0] == 0 || s[1] == 0 {
            return Err(Error::Tensor(ndgrad::Error::ShapeMismatch {
                op: "extract",
                lhs: s.to_vec(),
                rhs: vec![0, 0, self.input_dim],
            }));
        }
        Ok(())
    }

    /// Two stacked BiLSTM layers, directions concatenated to width HF.
    fn bilstm(&self, g: &mut Graph<'_>, kind: ExtractorKind, x: Var) -> Result<Var> {
        let fwd = self.recurrent_stack(kind, CellKind::Lstm, Some("fwd"));
        let bwd = self.recurrent_stack(kind, CellKind::Lstm, Some("bwd"));
        let mut h = x;
        for (f, b) in fwd.iter().zip(&bwd) {
            let hf = f.forward(g, h, false)?;
            let hb = b.forward(g, h, true)?;
            h = g.concat(&[hf, hb], 2)?;
        }
        Ok(h)
    }

    /// Feature map `[B, LW, HF]` of one extractor.
    pub fn extract(&self, g: &mut Graph<'_>, kind: ExtractorKind, x: Var) -> Result<Var> {
        Ok(self.extract_detailed(g, kind, x)?.0)
    }

    /// As [`extract`](Self::extract), also returning attention weights for
    /// the attention extractor.
    pub fn extract_detailed(
        &self,
        g: &mut Graph<'_>,
        kind: ExtractorKind,
        x: Var,
    ) -> Result<(Var, Option<Tensor>)> {
        self.check_input(g, x)?;
        let mut h = x;
        match kind {
            ExtractorKind::Lr => {
                for d in self.dense_stack(kind) {
                    h = d.forward(g, h)?;
                }
            }
            ExtractorKind::Mlp => {
                for d in self.dense_stack(kind) {
                    h = d.forward(g, h)?;
                    h = g.relu(h);
                    h = g.dropout(h, self.cfg.dropout)?;
                }
            }
            ExtractorKind::Cnn => {
                for c in self.conv_stack() {
                    h = c.forward(g, h)?;
                    h = g.relu(h);
                }
            }
            ExtractorKind::Rnn | ExtractorKind::Gru | ExtractorKind::Lstm => {
                let cell = match kind {
                    ExtractorKind::Rnn => CellKind::Rnn,
                    ExtractorKind::Gru => CellKind::Gru,
                    _ => CellKind::Lstm,
                };
                for r in self.recurrent_stack(kind, cell, None) {
                    h = r.forward(g, h, false)?;
                }
            }
            ExtractorKind::BiLstm => h = self.bilstm(g, kind, x)?,
            ExtractorKind::BiLstmAttention => {
                let seq = self.bilstm(g, kind, x)?;
                let att = self.attention().forward(g, seq)?;
                let weights = g.attention_weights(att.weights);
                return Ok((att.output, weights));
            }
        }
        Ok((h, None))
    }

    pub fn extract_all(&self, g: &mut Graph<'_>, x: Var) -> Result<Vec<Var>> {
        self.kinds()
            .iter()
            .map(|&k| self.extract(g, k, x))
            .collect()
    }

    /// Trainable parameter count per extractor, in kind order.
    pub fn param_counts(&self, store: &ParamStore) -> Vec<(ExtractorKind, usize)> {
        self.kinds()
            .iter()
            .map(|&k| (k, store.count_trainable(&format!("{}.", Self::prefix(k)))))
            .collect()
    }
}

/// Diagnostic single-model predictor: extractor, max pooling over time with
/// the configured stride, then a dense map to one output. Not part of the
/// ensemble; its parameters live under `diag.<kind>.head`.
#[derive(Clone, Debug)]
pub struct StandaloneHead {
    pub kind: ExtractorKind,
    pub dense: Dense,
    pub stride: usize,
}

impl StandaloneHead {
    pub fn new(pool: &ModelPool, kind: ExtractorKind, look_back: usize) -> Result<Self> {
        let stride = pool.cfg.pool_stride;
        if look_back < stride {
            return Err(Error::Config(format!(
                "look-back {look_back} is shorter than the pooling stride {stride}"
            )));
        }
        let pooled = (look_back - stride) / stride + 1;
        Ok(Self {
            kind,
            dense: Dense::new(
                format!("diag.{}.head", kind.slug()),
                pooled * pool.cfg.hidden_size,
                1,
            ),
            stride,
        })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.dense.init(store, rng);
    }

    /// `[B, LW, input_dim]` to `[B, 1]`.
    pub fn forward(&self, pool: &ModelPool, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let f = pool.extract(g, self.kind, x)?;
        let p = g.max_pool1d(f, self.stride, self.stride)?;
        let flat = g.flatten(p)?;
        self.dense.forward(g, flat)
    }
}
