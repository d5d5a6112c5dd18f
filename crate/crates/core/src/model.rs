//! The assembled forecaster: pool, channel nets, FConv branch, fusion and
//! head, with switches for the ablation variants.

use ndgrad::{Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::WindowSet;
use crate::ensemble::{
    combine, explain, interpret_weights, select_gates, uniform_average, ChannelNet,
    EnsembleCoefficients, EnsembleConfig, ExplainReport, GateMode, Terminal,
};
use crate::error::{Error, Result};
use crate::fusion::{fuse, init_lambda, lambda_of, FConvNet, HeadMlp, THETA};
use crate::modelpool::{ModelPool, PoolConfig};

/// Architecture description; together with a [`ParamStore`] it fully
/// determines the forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub pool: PoolConfig,
    pub ensemble: EnsembleConfig,
    pub look_back: usize,
    pub n_features: usize,
    pub head_hidden: usize,
    /// FConv branch and learnable fusion. When off, PV and features are
    /// concatenated at the pool input.
    pub fusion: bool,
    /// Dual-channel weighting. When off, pool outputs are averaged.
    pub weighted: bool,
}

impl ModelSpec {
    pub fn new(
        pool: PoolConfig,
        ensemble: EnsembleConfig,
        look_back: usize,
        n_features: usize,
    ) -> Self {
        Self {
            pool,
            ensemble,
            look_back,
            n_features,
            head_hidden: 64,
            fusion: true,
            weighted: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pool.validate()?;
        self.ensemble.validate()?;
        if self.look_back == 0 {
            return Err(Error::Config("look-back window must be at least 1".into()));
        }
        if self.n_features == 0 {
            return Err(Error::Config(
                "at least one auxiliary feature is required".into(),
            ));
        }
        if self.head_hidden == 0 {
            return Err(Error::Config("head hidden width must be at least 1".into()));
        }
        Ok(())
    }

    pub fn pool(&self) -> ModelPool {
        let input_dim = if self.fusion { 1 } else { 1 + self.n_features };
        ModelPool::new(self.pool.clone(), input_dim).expect("validated pool config")
    }

    fn channel(&self, which: u8) -> ChannelNet {
        let k = self.pool().len();
        ChannelNet {
            prefix: format!("ensemble.channel{which}"),
            z_dim: self.ensemble.z_dim.unwrap_or(k),
            hidden: self.ensemble.channel_hidden,
            outputs: k,
            dropout: self.pool.dropout,
            terminal: if which == 1 {
                Terminal::Softmax
            } else {
                Terminal::SteepSigmoid
            },
        }
    }

    pub fn channel1(&self) -> ChannelNet {
        self.channel(1)
    }

    pub fn channel2(&self) -> ChannelNet {
        self.channel(2)
    }

    pub fn fconv(&self) -> FConvNet {
        FConvNet {
            n_features: self.n_features,
            hidden: self.pool.hidden_size,
            kernel: self.pool.kernel,
            padding: self.pool.padding,
        }
    }

    pub fn head(&self) -> HeadMlp {
        HeadMlp {
            look_back: self.look_back,
            width: self.pool.hidden_size,
            hidden: self.head_hidden,
            dropout: self.pool.dropout,
        }
    }
}

/// Graph handles produced by one forward pass.
pub struct ForwardOut {
    /// `[B, 1]`, normalised scale.
    pub prediction: Var,
    pub coefficients: Option<EnsembleCoefficients>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdsNetModel {
    pub spec: ModelSpec,
    pub params: ParamStore,
}

impl IdsNetModel {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        spec.pool().init(&mut params, &mut rng);
        if spec.weighted {
            spec.channel1().init(&mut params, &mut rng);
            spec.channel2().init(&mut params, &mut rng);
        }
        if spec.fusion {
            spec.fconv().init(&mut params, &mut rng);
            init_lambda(&mut params, 0.0);
        }
        spec.head().init(&mut params, &mut rng);
        Ok(Self { spec, params })
    }

    /// Rebuilds from a checkpointed spec and parameters, checking that every
    /// parameter the spec needs is present with the right shape.
    pub fn from_parts(spec: ModelSpec, params: ParamStore) -> Result<Self> {
        let reference = Self::new(spec.clone(), 0)?;
        for (name, p) in reference.params.iter() {
            let got = params
                .get(name)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks parameter `{name}`")))?;
            if got.value.shape() != p.value.shape() {
                return Err(Error::Data(format!(
                    "checkpoint parameter `{name}` has shape {:?}, expected {:?}",
                    got.value.shape(),
                    p.value.shape()
                )));
            }
        }
        Ok(Self { spec, params })
    }

    pub fn graph(&self) -> Graph<'_> {
        Graph::with_params(&self.params)
    }

    /// Forward pass on `[B, LW, 1]` PV and `[B, LW, N]` feature windows.
    /// Gates are smooth in training mode and hard otherwise.
    pub fn forward(&self, g: &mut Graph<'_>, pv: Var, feat: Var) -> Result<ForwardOut> {
        let spec = &self.spec;
        let (sp, sf) = (g.shape(pv).to_vec(), g.shape(feat).to_vec());
        let ok = sp.len() == 3
            && sf.len() == 3
            && sp[0] == sf[0]
            && sp[1] == spec.look_back
            && sf[1] == spec.look_back
            && sp[2] == 1
            && sf[2] == spec.n_features;
        if !ok {
            return Err(Error::Tensor(ndgrad::Error::ShapeMismatch {
                op: "model input",
                lhs: sp,
                rhs: sf,
            }));
        }
        let pool = spec.pool();
        let x = if spec.fusion {
            pv
        } else {
            g.concat(&[pv, feat], 2)?
        };
        let maps = pool.extract_all(g, x)?;
        let (combined, coefficients) = if spec.weighted {
            let mode = if g.is_training() {
                GateMode::Train
            } else {
                GateMode::Infer
            };
            let w = interpret_weights(g, &spec.channel1())?;
            let gates = select_gates(g, &spec.channel2(), spec.ensemble.gate_steepness, mode)?;
            let (out, c) = combine(g, &maps, w, gates, spec.ensemble.renormalize)?;
            (out, Some(c))
        } else {
            (uniform_average(g, &maps)?, None)
        };
        let fused = if spec.fusion {
            let aux = spec.fconv().forward(g, feat)?;
            let theta = g.param(THETA)?;
            fuse(g, combined, aux, theta)?
        } else {
            combined
        };
        let prediction = spec.head().forward(g, fused)?;
        Ok(ForwardOut {
            prediction,
            coefficients,
        })
    }

    /// Normalised predictions for every window, evaluated in batches with
    /// dropout off and hard gates.
    pub fn predict(&self, windows: &WindowSet) -> Result<Vec<f64>> {
        const CHUNK: usize = 512;
        let mut out = Vec::with_capacity(windows.len());
        let idx: Vec<usize> = (0..windows.len()).collect();
        for chunk in idx.chunks(CHUNK) {
            let (pv, feat, _) = windows.gather(chunk);
            let mut g = self.graph().track_params(false);
            let pv = g.input(pv);
            let feat = g.input(feat);
            let f = self.forward(&mut g, pv, feat)?;
            out.extend_from_slice(g.value(f.prediction).data());
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "model produced a non-finite prediction".into(),
            ));
        }
        Ok(out)
    }

    /// Inference-mode ensemble coefficients and the fusion weight.
    pub fn explain(&self) -> Result<ExplainReport> {
        if !self.spec.weighted {
            return Err(Error::Config(
                "this model averages its pool uniformly; there are no learned weights".into(),
            ));
        }
        let lambda = self
            .spec
            .fusion
            .then(|| self.params.value(THETA).map(|t| lambda_of(t.data()[0])))
            .transpose()?;
        let mut g = self.graph().track_params(false);
        let pv = g.input(Tensor::zeros(&[1, self.spec.look_back, 1]));
        let feat = g.input(Tensor::zeros(&[
            1,
            self.spec.look_back,
            self.spec.n_features,
        ]));
        let f = self.forward(&mut g, pv, feat)?;
        let coeffs = f.coefficients.expect("weighted model reports coefficients");
        Ok(explain(&coeffs, self.spec.pool().kinds(), lambda))
    }

    pub fn n_trainable(&self) -> usize {
        self.params.count_trainable("")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ModelSpec {
        let pool = PoolConfig {
            hidden_size: 8,
            heads: 2,
            ..PoolConfig::default()
        };
        ModelSpec::new(pool, EnsembleConfig::default(), 6, 3)
    }

    #[test]
    fn forward_shape_and_determinism() {
        let m = IdsNetModel::new(spec(), 5).unwrap();
        let run = || {
            let mut g = m.graph();
            let pv = g.input(Tensor::full(&[4, 6, 1], 0.3));
            let feat = g.input(Tensor::full(&[4, 6, 3], 0.7));
            let f = m.forward(&mut g, pv, feat).unwrap();
            assert_eq!(g.shape(f.prediction), &[4, 1]);
            g.value(f.prediction).clone()
        };
        assert_eq!(run(), run());
        assert_eq!(IdsNetModel::new(spec(), 5).unwrap(), m);
    }

    #[test]
    fn ablated_variants_build() {
        for (fusion, weighted) in [(false, true), (true, false), (false, false)] {
            let mut s = spec();
            s.fusion = fusion;
            s.weighted = weighted;
            let m = IdsNetModel::new(s, 1).unwrap();
            assert_eq!(m.params.get(THETA).is_some(), fusion);
            assert_eq!(m.params.get("ensemble.channel1.z").is_some(), weighted);
            let mut g = m.graph();
            let pv = g.input(Tensor::full(&[2, 6, 1], 0.3));
            let feat = g.input(Tensor::full(&[2, 6, 3], 0.7));
            let f = m.forward(&mut g, pv, feat).unwrap();
            assert_eq!(g.shape(f.prediction), &[2, 1]);
        }
    }

    #[test]
    fn explain_rows_sum_to_one() {
        let m = IdsNetModel::new(spec(), 2).unwrap();
        let r = m.explain().unwrap();
        assert_eq!(r.rows.len(), 8);
        assert_eq!(r.fusion_lambda, Some(0.5));
        let total: f64 = r.rows.iter().map(|r| r.c).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}
