use serde::{Deserialize, Serialize};

use super::config::EncoderConfig;
use super::ENCODER_PADDING;
use crate::error::{Error, Result};
use crate::nn::gru::{gru_step_graph, GruVars};
use crate::nn::{Graph, GruParams, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub kernel: Tensor,
    pub bias: Tensor,
}

/// Shared encoder weights; the same blocks are applied to every visit.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub blocks: Vec<ConvBlock>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub gru: GruParams,
    /// `H×1` projection of the final hidden state to the logit.
    pub readout: DenseParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub features: Vec<f64>,
    /// Final encoder activation, `h×w×F`, before pooling.
    pub conv_maps: Tensor,
}

pub(crate) fn check_image(image: &Tensor, enc: &EncoderConfig) -> Result<()> {
    let expected = [enc.input_size, enc.input_size, enc.in_channels];
    if image.shape() != expected {
        return Err(Error::Input(format!(
            "image shape {:?} does not match encoder input {expected:?}",
            image.shape()
        )));
    }
    if let Some(i) = image.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Input(format!(
            "image intensity {} at element {i} outside [0, 1]",
            image.data()[i]
        )));
    }
    Ok(())
}

pub(crate) fn encode_on_graph(
    g: &mut Graph,
    image: Var,
    blocks: &[(Var, Var)],
    enc: &EncoderConfig,
) -> Result<(Var, Var)> {
    let mut x = image;
    for (&(kernel, bias), &stride) in blocks.iter().zip(&enc.strides) {
        let conv = g.conv2d(x, kernel, stride, ENCODER_PADDING)?;
        let biased = g.add_channel_bias(conv, bias)?;
        x = g.relu(biased);
    }
    let features = g.global_avg_pool(x)?;
    Ok((features, x))
}

pub(crate) fn recurrent_logit(
    g: &mut Graph,
    rows: &[Var],
    gru: &GruVars,
    readout: (Var, Var),
    hidden: usize,
) -> Result<Var> {
    let mut h = g.leaf(Tensor::zeros(&[hidden]));
    for &row in rows {
        h = gru_step_graph(g, row, h, gru)?;
    }
    g.dense(h, readout.0, readout.1)
}

fn bind_encoder(g: &mut Graph, params: &EncoderParams) -> Result<Vec<(Var, Var)>> {
    params.config.validate()?;
    let expected = params.config.block_channels();
    if params.blocks.len() != expected.len() {
        return Err(Error::Config(format!(
            "encoder has {} blocks, configuration describes {}",
            params.blocks.len(),
            expected.len()
        )));
    }
    Ok(params
        .blocks
        .iter()
        .map(|b| (g.leaf(b.kernel.clone()), g.leaf(b.bias.clone())))
        .collect())
}

pub fn encode_image(image: &Tensor, params: &EncoderParams) -> Result<Encoded> {
    check_image(image, &params.config)?;
    let mut g = Graph::new();
    let blocks = bind_encoder(&mut g, params)?;
    let x = g.leaf(image.clone());
    let (f, maps) = encode_on_graph(&mut g, x, &blocks, &params.config)?;
    Ok(Encoded {
        features: g.value(f).data().to_vec(),
        conv_maps: g.value(maps).clone(),
    })
}

/// Per-visit weights `1 / (t_predict − t_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalScales {
    scales: Vec<f64>,
}

impl IntervalScales {
    pub fn as_slice(&self) -> &[f64] {
        &self.scales
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    pub fn ones(n: usize) -> Self {
        IntervalScales { scales: vec![1.0; n] }
    }
}

/// Interval scales for visits at `times` (years, strictly increasing) when
/// predicting at `predict_time`.
pub fn interval_scales(times: &[f64], predict_time: f64) -> Result<IntervalScales> {
    if times.is_empty() {
        return Err(Error::Input("interval scaling needs at least one visit time".into()));
    }
    if let Some(t) = times.iter().chain([&predict_time]).find(|t| !t.is_finite()) {
        return Err(Error::Domain(format!("non-finite visit time {t}")));
    }
    if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::Domain(format!(
            "visit times must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    let last = times[times.len() - 1];
    if predict_time <= last {
        return Err(Error::Domain(format!(
            "prediction time {predict_time} must follow the last visit at {last}"
        )));
    }
    Ok(IntervalScales {
        scales: times.iter().map(|t| 1.0 / (predict_time - t)).collect(),
    })
}

/// `T×F` matrix of interval-scaled feature vectors, one row per visit.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    values: Tensor,
}

impl FeatureMatrix {
    pub fn timepoints(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn features(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let f = self.features();
        &self.values.data()[i * f..(i + 1) * f]
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.values
    }
}

pub fn assemble_sequence(feature_vectors: &[Vec<f64>], scales: &IntervalScales) -> Result<FeatureMatrix> {
    if feature_vectors.len() != scales.len() {
        return Err(Error::Input(format!(
            "{} feature vectors but {} interval scales",
            feature_vectors.len(),
            scales.len()
        )));
    }
    let f = feature_vectors.first().map_or(0, Vec::len);
    if f == 0 || feature_vectors.iter().any(|v| v.len() != f) {
        return Err(Error::Input("feature vectors must share one positive length".into()));
    }
    let data = feature_vectors
        .iter()
        .zip(scales.as_slice())
        .flat_map(|(v, &s)| v.iter().map(move |x| x * s))
        .collect();
    Ok(FeatureMatrix {
        values: Tensor::new(vec![feature_vectors.len(), f], data)?,
    })
}

/// Run the GRU head over the rows of `matrix`, oldest first, from a zero state.
pub fn forward_sequence(matrix: &FeatureMatrix, head: &HeadParams) -> Result<f64> {
    head.gru.validate()?;
    let (f, h) = (head.gru.input_size(), head.gru.hidden());
    if matrix.features() != f {
        return Err(Error::shape("forward_sequence", format!("F = {f}"), matrix.features()));
    }
    if head.readout.weight.shape() != [h, 1] || head.readout.bias.shape() != [1] {
        return Err(Error::shape(
            "forward_sequence",
            format!("readout [{h}, 1] + [1]"),
            format!("{:?} + {:?}", head.readout.weight.shape(), head.readout.bias.shape()),
        ));
    }
    let mut g = Graph::new();
    let gru = head.gru.bind(&mut g);
    let w = g.leaf(head.readout.weight.clone());
    let b = g.leaf(head.readout.bias.clone());
    let rows: Vec<Var> = (0..matrix.timepoints())
        .map(|i| g.leaf(Tensor::vector(matrix.row(i).to_vec())))
        .collect();
    let logit = recurrent_logit(&mut g, &rows, &gru, (w, b), h)?;
    let p = g.sigmoid(logit);
    Ok(g.value(p).item())
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Progression {
    Progressing,
    NonProgressing,
}

/// Progressing iff `probability > threshold` (strict).
pub fn predict(probability: f64, threshold: f64) -> Progression {
    if probability > threshold {
        Progression::Progressing
    } else {
        Progression::NonProgressing
    }
}

/// Single-visit comparator: `σ(dense(encoder(image)))`, no scaling, no recurrence.
pub fn forward_single_baseline(image: &Tensor, encoder: &EncoderParams, dense: &DenseParams) -> Result<f64> {
    check_image(image, &encoder.config)?;
    let mut g = Graph::new();
    let blocks = bind_encoder(&mut g, encoder)?;
    let w = g.leaf(dense.weight.clone());
    let b = g.leaf(dense.bias.clone());
    let x = g.leaf(image.clone());
    let (f, _) = encode_on_graph(&mut g, x, &blocks, &encoder.config)?;
    let logit = g.dense(f, w, b)?;
    if g.value(logit).len() != 1 {
        return Err(Error::shape(
            "forward_single_baseline",
            "F×1 dense",
            format!("{:?}", dense.weight.shape()),
        ));
    }
    let p = g.sigmoid(logit);
    Ok(g.value(p).item())
}
