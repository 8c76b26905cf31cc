//! Finite-difference checks of every differentiable operation and of the
//! full model, shared by the gradient tests and the acceptance target.

use longiprog::model::{interval_scales, EncoderConfig, Model, ModelConfig, SequenceInput, VisitInput};
use longiprog::nn::gradcheck::random_projection;
use longiprog::nn::gru::{gru_step_graph, GruParams, GruVars};
use longiprog::nn::{grad_check, Graph, Padding, Tensor, Var};
use longiprog::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOLERANCE: f64 = 1e-4;
const DELTA: f64 = 1e-5;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero so piecewise-linear kinks are never straddled.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn check(inputs: &[Tensor], seed: u64, f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> f64 {
    grad_check(
        |g, v| {
            let out = f(g, v)?;
            random_projection(g, out, seed)
        },
        inputs,
        DELTA,
    )
    .unwrap()
    .max_rel_error
}

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        input_size: 8,
        in_channels: 3,
        widths: vec![2],
        features: 3,
        kernel: 3,
        strides: vec![2, 1],
    }
}

fn pipeline(config: ModelConfig, seed: u64) -> f64 {
    let mut model = Model::init(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    // Non-zero biases so every gradient path is exercised.
    for i in 0..model.params().len() {
        if model.params().name(i).contains("bias") {
            let t = model.params_mut().tensor_mut(i);
            *t = uniform(&mut rng, t.shape(), -0.3, 0.3);
        }
    }
    let t = model.config().timepoints;
    let times = [0.0, 1.25, 2.0];
    let input = SequenceInput {
        visits: (0..t)
            .map(|_| VisitInput::Image(uniform(&mut rng, &[8, 8, 3], 0.0, 1.0)))
            .collect(),
        scales: interval_scales(&times[3 - t..], 3.5).unwrap().as_slice().to_vec(),
    };
    let label = f64::from(u8::from(rng.random_bool(0.5)));
    let params: Vec<Tensor> = model.params().tensors().cloned().collect();
    grad_check(
        |g, vars| {
            let bound = model.bind_vars(vars.to_vec());
            let fwd = model.forward(g, &bound, &input)?;
            g.bce(fwd.prob, label)
        },
        &params,
        DELTA,
    )
    .unwrap()
    .max_rel_error
}

/// Worst relative error of each check for one seed.
pub fn suite(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let x = uniform(&mut rng, &[5, 6, 2], -1.0, 1.0);
    let k = uniform(&mut rng, &[3, 3, 2, 3], -1.0, 1.0);
    for (name, stride, padding) in [
        ("conv2d same stride 1", 1, Padding::Same),
        ("conv2d same stride 2", 2, Padding::Same),
        ("conv2d valid stride 2", 2, Padding::Valid),
    ] {
        let err = check(&[x.clone(), k.clone()], seed, |g, v| {
            g.conv2d(v[0], v[1], stride, padding)
        });
        out.push((name, err));
    }

    let b = uniform(&mut rng, &[2], -1.0, 1.0);
    out.push((
        "channel bias",
        check(&[x.clone(), b], seed, |g, v| g.add_channel_bias(v[0], v[1])),
    ));
    let a = off_zero(&mut rng, &[7]);
    out.push(("relu", check(std::slice::from_ref(&a), seed, |g, v| Ok(g.relu(v[0])))));
    out.push((
        "sigmoid",
        check(std::slice::from_ref(&a), seed, |g, v| Ok(g.sigmoid(v[0]))),
    ));
    out.push(("tanh", check(std::slice::from_ref(&a), seed, |g, v| Ok(g.tanh(v[0])))));
    out.push(("global average pool", check(&[x], seed, |g, v| g.global_avg_pool(v[0]))));

    let xv = uniform(&mut rng, &[4], -1.0, 1.0);
    let w = uniform(&mut rng, &[4, 3], -1.0, 1.0);
    let bias = uniform(&mut rng, &[3], -1.0, 1.0);
    out.push(("dense", check(&[xv, w, bias], seed, |g, v| g.dense(v[0], v[1], v[2]))));

    let c = uniform(&mut rng, &[7], -1.0, 1.0);
    out.push((
        "elementwise",
        check(&[a, c], seed, |g, v| {
            let m = g.mul(v[0], v[1])?;
            let s = g.scale(m, 0.7);
            let o = g.one_minus(v[1]);
            g.add(s, o)
        }),
    ));

    let logits = uniform(&mut rng, &[3], -2.0, 2.0);
    let labels: Vec<f64> = (0..3).map(|i| f64::from(u8::from(i % 2 == 0))).collect();
    out.push((
        "binary cross-entropy",
        grad_check(
            |g, v| {
                let losses = labels
                    .iter()
                    .enumerate()
                    .map(|(i, &y)| {
                        let sel = Tensor::new(vec![3], (0..3).map(|j| f64::from(u8::from(j == i))).collect())?;
                        let sel = g.leaf(sel);
                        let picked = g.mul(v[0], sel)?;
                        let z = g.sum(picked);
                        let p = g.sigmoid(z);
                        g.bce(p, y)
                    })
                    .collect::<Result<Vec<_>>>()?;
                g.mean(&losses)
            },
            &[logits],
            DELTA,
        )
        .unwrap()
        .max_rel_error,
    ));

    let (f, h) = (4, 3);
    let mut gru = GruParams::zeros(f, h);
    for t in gru.tensors_mut() {
        *t = uniform(&mut rng, t.shape(), -1.0, 1.0);
    }
    let mut inputs: Vec<Tensor> = gru.tensors().into_iter().cloned().collect();
    inputs.push(uniform(&mut rng, &[f], -1.0, 1.0));
    inputs.push(uniform(&mut rng, &[h], -1.0, 1.0));
    out.push((
        "gru step",
        check(&inputs, seed, |g, v| {
            let p = GruVars {
                input_update: v[0],
                input_reset: v[1],
                input_candidate: v[2],
                recurrent_update: v[3],
                recurrent_reset: v[4],
                recurrent_candidate: v[5],
                bias_update: v[6],
                bias_reset: v[7],
                bias_candidate: v[8],
            };
            gru_step_graph(g, v[9], v[10], &p)
        }),
    ));

    out.push((
        "pipeline T=3",
        pipeline(ModelConfig::longitudinal(3, tiny_encoder()), seed),
    ));
    let mut cam = ModelConfig::longitudinal(2, tiny_encoder());
    cam.cam_head = true;
    cam.hidden = 3;
    out.push(("pipeline T=2 with CAM head", pipeline(cam, seed)));
    out.push((
        "pipeline single image",
        pipeline(ModelConfig::single_image(tiny_encoder()), seed),
    ));
    out
}
