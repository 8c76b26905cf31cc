//! The longitudinal architecture: a shared-weight encoder applied to every
//! visit, interval scaling of the per-visit feature vectors, and a GRU head
//! producing a progression probability. Also the single-image baseline.

mod cam;
mod config;
mod ops;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use cam::{cam, min_max_normalize, ClassActivation};
pub use config::{Architecture, EncoderConfig, FeatureSource, ModelConfig, CAM_HIDDEN};
pub use ops::{
    assemble_sequence, encode_image, forward_sequence, forward_single_baseline, interval_scales, predict, ConvBlock,
    DenseParams, Encoded, EncoderParams, FeatureMatrix, HeadParams, IntervalScales, Progression, DEFAULT_THRESHOLD,
};

use crate::error::{Error, Result};
use crate::nn::gru::{GruVars, GRU_TENSOR_NAMES};
use crate::nn::{Graph, GruParams, Padding, ParamSet, Tensor, Var};

/// One visit as seen by the model.
#[derive(Clone, Debug, PartialEq)]
pub enum VisitInput {
    /// Preprocessed `S×S×C` image in [0, 1].
    Image(Tensor),
    /// Externally computed feature vector of length F.
    Features(Vec<f64>),
}

/// The most recent `T` visits of one eye, oldest first, with their interval scales.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceInput {
    pub visits: Vec<VisitInput>,
    pub scales: Vec<f64>,
}

/// Name, shape and Glorot fans of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
    bias: bool,
}

/// Parameter tensors of `config`, in canonical order.
pub fn layout(config: &ModelConfig) -> Vec<TensorSpec> {
    let mut specs = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, fan_in: usize, fan_out: usize, bias: bool| {
        specs.push(TensorSpec {
            name,
            shape,
            fan_in,
            fan_out,
            bias,
        })
    };
    if let Some(enc) = config.source.encoder() {
        let k = enc.kernel;
        for (i, (cin, cout)) in enc.block_channels().into_iter().enumerate() {
            push(
                format!("encoder.block{i}.kernel"),
                vec![k, k, cin, cout],
                k * k * cin,
                k * k * cout,
                false,
            );
            push(format!("encoder.block{i}.bias"), vec![cout], 0, 0, true);
        }
    }
    let f = config.feature_len();
    match config.architecture {
        Architecture::Longitudinal => {
            let h = config.hidden;
            for name in GRU_TENSOR_NAMES {
                let full = format!("head.gru.{name}");
                match &name[..5] {
                    "input" => push(full, vec![f, h], f, h, false),
                    "recur" => push(full, vec![h, h], h, h, false),
                    _ => push(full, vec![h], 0, 0, true),
                }
            }
            push("head.readout.weight".into(), vec![h, 1], h, 1, false);
            push("head.readout.bias".into(), vec![1], 0, 0, true);
        }
        Architecture::SingleImage => {
            push("head.dense.weight".into(), vec![f, 1], f, 1, false);
            push("head.dense.bias".into(), vec![1], 0, 0, true);
        }
    }
    specs
}

/// Model parameters bound as leaves on a [`Graph`].
#[derive(Clone, Debug)]
pub struct BoundModel {
    /// One var per parameter tensor, in layout order.
    pub vars: Vec<Var>,
    blocks: Vec<(Var, Var)>,
    head: BoundHead,
}

#[derive(Clone, Debug)]
enum BoundHead {
    Recurrent { gru: GruVars, readout: (Var, Var) },
    Single { dense: (Var, Var) },
}

/// Handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub logit: Var,
    pub prob: Var,
    /// Pooled per-visit features before interval scaling.
    pub features: Vec<Var>,
    /// Final encoder activation per visit (`None` for external features).
    pub conv_maps: Vec<Option<Var>>,
}

/// Loss, prediction and parameter gradients for one labelled sequence.
#[derive(Clone, Debug)]
pub struct ExampleGrad {
    pub loss: f64,
    pub prob: f64,
    pub grads: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
}

impl Model {
    /// Glorot-uniform weights, zero biases, drawn from a stream seeded by `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for spec in layout(&config) {
            let n: usize = spec.shape.iter().product();
            let data = if spec.bias {
                vec![0.0; n]
            } else {
                let limit = (6.0 / (spec.fan_in + spec.fan_out) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-limit..limit)).collect()
            };
            params.push(spec.name, Tensor::new(spec.shape, data)?)?;
        }
        Ok(Model { config, params })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        for spec in layout(&config) {
            params.push(spec.name, Tensor::zeros(&spec.shape))?;
        }
        Ok(Model { config, params })
    }

    /// Wrap existing tensors, checking names, order and shapes against the layout.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let specs = layout(&config);
        if specs.len() != params.len() {
            return Err(Error::Config(format!(
                "architecture needs {} parameter tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (spec, (name, t)) in specs.iter().zip(params.iter()) {
            if spec.name != name || spec.shape != t.shape() {
                return Err(Error::Config(format!(
                    "parameter mismatch: expected {} {:?}, got {} {:?}",
                    spec.name,
                    spec.shape,
                    name,
                    t.shape()
                )));
            }
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Overwrite the bias of the final logit unit.
    pub fn set_output_bias(&mut self, value: f64) {
        let name = match self.config.architecture {
            Architecture::Longitudinal => "head.readout.bias",
            Architecture::SingleImage => "head.dense.bias",
        };
        let i = self.params.index_of(name).expect("layout tensor present");
        self.params.tensor_mut(i).data_mut()[0] = value;
    }

    fn tensor(&self, name: &str) -> Tensor {
        self.params.get(name).cloned().expect("layout tensor present")
    }

    pub fn encoder_params(&self) -> Option<EncoderParams> {
        let enc = self.config.source.encoder()?;
        let blocks = (0..enc.widths.len() + 1)
            .map(|i| ConvBlock {
                kernel: self.tensor(&format!("encoder.block{i}.kernel")),
                bias: self.tensor(&format!("encoder.block{i}.bias")),
            })
            .collect();
        Some(EncoderParams {
            config: enc.clone(),
            blocks,
        })
    }

    pub fn head_params(&self) -> Option<HeadParams> {
        if self.config.architecture != Architecture::Longitudinal {
            return None;
        }
        let tensors = GRU_TENSOR_NAMES.map(|n| self.tensor(&format!("head.gru.{n}")));
        Some(HeadParams {
            gru: GruParams::from_tensors(tensors).expect("layout shapes"),
            readout: DenseParams {
                weight: self.tensor("head.readout.weight"),
                bias: self.tensor("head.readout.bias"),
            },
        })
    }

    pub fn baseline_dense(&self) -> Option<DenseParams> {
        if self.config.architecture != Architecture::SingleImage {
            return None;
        }
        Some(DenseParams {
            weight: self.tensor("head.dense.weight"),
            bias: self.tensor("head.dense.bias"),
        })
    }

    pub fn bind(&self, g: &mut Graph) -> BoundModel {
        let vars = self.params.tensors().map(|t| g.leaf(t.clone())).collect();
        self.bind_vars(vars)
    }

    /// Interpret existing graph nodes, one per parameter tensor in layout
    /// order, as this model's parameters.
    pub fn bind_vars(&self, vars: Vec<Var>) -> BoundModel {
        assert_eq!(vars.len(), self.params.len(), "one var per parameter tensor");
        let n_blocks = self.config.source.encoder().map_or(0, |e| e.widths.len() + 1);
        let blocks = (0..n_blocks).map(|i| (vars[2 * i], vars[2 * i + 1])).collect();
        let off = 2 * n_blocks;
        let head = match self.config.architecture {
            Architecture::Longitudinal => {
                let v = &vars[off..];
                BoundHead::Recurrent {
                    gru: GruVars {
                        input_update: v[0],
                        input_reset: v[1],
                        input_candidate: v[2],
                        recurrent_update: v[3],
                        recurrent_reset: v[4],
                        recurrent_candidate: v[5],
                        bias_update: v[6],
                        bias_reset: v[7],
                        bias_candidate: v[8],
                    },
                    readout: (v[9], v[10]),
                }
            }
            Architecture::SingleImage => BoundHead::Single {
                dense: (vars[off], vars[off + 1]),
            },
        };
        BoundModel { vars, blocks, head }
    }

    fn visit_features(&self, g: &mut Graph, bound: &BoundModel, visit: &VisitInput) -> Result<(Var, Option<Var>)> {
        match (visit, &self.config.source) {
            (VisitInput::Image(img), FeatureSource::Encoder(enc)) => {
                ops::check_image(img, enc)?;
                let x = g.leaf(img.clone());
                let (f, maps) = ops::encode_on_graph(g, x, &bound.blocks, enc)?;
                Ok((f, Some(maps)))
            }
            (VisitInput::Features(v), source) => {
                let f = source.feature_len();
                if v.len() != f {
                    return Err(Error::Input(format!(
                        "feature vector of length {} where F = {f}",
                        v.len()
                    )));
                }
                if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        name: "external feature vector".into(),
                        index: i,
                    });
                }
                Ok((g.leaf(Tensor::vector(v.clone())), None))
            }
            (VisitInput::Image(_), FeatureSource::External { .. }) => Err(Error::Input(
                "model consumes precomputed feature vectors, but an image was supplied".into(),
            )),
        }
    }

    pub fn forward(&self, g: &mut Graph, bound: &BoundModel, input: &SequenceInput) -> Result<Forward> {
        let t = self.config.timepoints;
        if input.visits.len() != t {
            return Err(Error::Input(format!(
                "model expects {t} timepoint(s), got {}",
                input.visits.len()
            )));
        }
        if input.scales.len() != t {
            return Err(Error::Input(format!(
                "{} interval scales for {t} visits",
                input.scales.len()
            )));
        }

        let mut features = Vec::with_capacity(t);
        let mut conv_maps = Vec::with_capacity(t);
        for visit in &input.visits {
            let (f, maps) = self.visit_features(g, bound, visit)?;
            features.push(f);
            conv_maps.push(maps);
        }

        let logit = match &bound.head {
            BoundHead::Recurrent { gru, readout } => {
                let rows: Vec<Var> = features
                    .iter()
                    .zip(&input.scales)
                    .map(|(&f, &s)| g.scale(f, if self.config.interval_scaling { s } else { 1.0 }))
                    .collect();
                ops::recurrent_logit(g, &rows, gru, *readout, self.config.hidden)?
            }
            BoundHead::Single { dense } => g.dense(features[0], dense.0, dense.1)?,
        };
        let prob = g.sigmoid(logit);
        Ok(Forward {
            logit,
            prob,
            features,
            conv_maps,
        })
    }

    pub fn predict_proba(&self, input: &SequenceInput) -> Result<f64> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let fwd = self.forward(&mut g, &bound, input)?;
        Ok(g.value(fwd.prob).item())
    }

    /// BCE loss (optionally up-weighting positives) and its parameter gradients.
    pub fn loss_and_grads(&self, input: &SequenceInput, label: f64, pos_weight: Option<f64>) -> Result<ExampleGrad> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let fwd = self.forward(&mut g, &bound, input)?;
        let mut loss = g.bce(fwd.prob, label)?;
        if let (Some(w), true) = (pos_weight, label == 1.0) {
            loss = g.scale(loss, w);
        }
        let grads = g.backward(loss)?;
        Ok(ExampleGrad {
            loss: g.value(loss).item(),
            prob: g.value(fwd.prob).item(),
            grads: bound.vars.iter().map(|&v| grads.get(v)).collect(),
        })
    }
}

pub(crate) const ENCODER_PADDING: Padding = Padding::Same;

#[cfg(test)]
mod tests;
