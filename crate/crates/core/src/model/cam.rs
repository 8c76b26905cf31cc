use super::{Model, SequenceInput};
use crate::error::{Error, Result};
use crate::nn::{Graph, Tensor};
use crate::preprocess::resize_to;

/// Class activation map for one visit.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassActivation {
    /// `Σ_f g_f · A[:, :, f]` on the encoder grid, before normalization.
    pub raw: Tensor,
    /// `raw` min-max normalized to [0, 1], `h×w×1`.
    pub normalized: Tensor,
    /// `normalized` bilinearly upsampled to the input resolution, `S×S×1`.
    pub upsampled: Tensor,
}

/// Rescale to [0, 1]; a constant map becomes all zeros.
pub fn min_max_normalize(t: &Tensor) -> Tensor {
    let (lo, hi) = t
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !(hi > lo) {
        return t.map(|_| 0.0);
    }
    t.map(|v| (v - lo) / (hi - lo))
}

/// Gradient-weighted class activation maps, one per visit.
///
/// The channel weights are `g_f = ∂logit/∂features_f` for that visit's pooled
/// (unscaled) features. When the path from features to logit is linear these
/// are the dense weights of the classic construction.
pub fn cam(model: &Model, input: &SequenceInput) -> Result<Vec<ClassActivation>> {
    let config = model.config();
    if !config.cam_head {
        return Err(Error::Config(
            "class activation maps need a model trained with the CAM head (cam_head = true)".into(),
        ));
    }
    let enc = config
        .source
        .encoder()
        .ok_or_else(|| Error::Config("class activation maps need an image encoder".into()))?;
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let fwd = model.forward(&mut g, &bound, input)?;
    let grads = g.backward(fwd.logit)?;
    fwd.features
        .iter()
        .zip(&fwd.conv_maps)
        .map(|(&f, maps)| {
            let maps = g.value(maps.expect("encoder visits carry maps"));
            let weights = grads.get(f);
            let raw = weighted_sum(maps, weights.data())?;
            let normalized = min_max_normalize(&raw);
            let upsampled = resize_to(&normalized, enc.input_size, enc.input_size)?;
            Ok(ClassActivation {
                raw,
                normalized,
                upsampled,
            })
        })
        .collect()
}

fn weighted_sum(maps: &Tensor, weights: &[f64]) -> Result<Tensor> {
    let [h, w, c] = *maps.shape() else {
        return Err(Error::shape("cam", "h×w×F maps", format!("{:?}", maps.shape())));
    };
    if weights.len() != c {
        return Err(Error::shape("cam", format!("{c} channel weights"), weights.len()));
    }
    let data = maps
        .data()
        .chunks_exact(c)
        .map(|px| px.iter().zip(weights).map(|(a, g)| a * g).sum())
        .collect();
    Tensor::new(vec![h, w, 1], data)
}
