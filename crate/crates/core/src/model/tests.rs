use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::gru::gru_step;
use crate::nn::layers::sigmoid;
use crate::nn::{grad_check, Graph};

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

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn random_head(f: usize, h: usize, rng: &mut ChaCha8Rng) -> HeadParams {
    let mut gru = GruParams::zeros(f, h);
    for t in gru.tensors_mut() {
        *t = random_tensor(t.shape(), rng, -1.0, 1.0);
    }
    HeadParams {
        gru,
        readout: DenseParams {
            weight: random_tensor(&[h, 1], rng, -1.0, 1.0),
            bias: random_tensor(&[1], rng, -1.0, 1.0),
        },
    }
}

fn random_model(config: ModelConfig, seed: u64) -> Model {
    let mut model = Model::init(config, seed).unwrap();
    // Non-zero biases so every gradient path is exercised.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for i in 0..model.params().len() {
        if model.params().name(i).ends_with("bias") || model.params().name(i).contains(".bias_") {
            let t = model.params_mut().tensor_mut(i);
            *t = random_tensor(t.shape(), &mut rng, -0.3, 0.3);
        }
    }
    model
}

fn random_images(t: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<VisitInput> {
    (0..t)
        .map(|_| VisitInput::Image(random_tensor(&[size, size, 3], rng, 0.0, 1.0)))
        .collect()
}

#[test]
fn interval_scales_figure_two() {
    let a = interval_scales(&[0.0, 2.0, 3.0], 7.5).unwrap();
    assert_eq!(a.as_slice(), &[1.0 / 7.5, 1.0 / 5.5, 1.0 / 4.5]);
    let rounded: Vec<f64> = a.as_slice().iter().map(|s| (s * 1e5).round() / 1e5).collect();
    assert_eq!(rounded, vec![0.13333, 0.18182, 0.22222]);
    let b = interval_scales(&[0.0, 2.0, 3.0], 4.0).unwrap();
    assert_eq!(b.as_slice(), &[0.25, 0.5, 1.0]);
    assert_eq!(interval_scales(&[3.25], 4.25).unwrap().as_slice(), &[1.0]);
}

#[test]
fn interval_scales_errors() {
    assert!(matches!(interval_scales(&[0.0, 2.0], 2.0), Err(Error::Domain(_))));
    assert!(matches!(interval_scales(&[0.0, 2.0], 1.0), Err(Error::Domain(_))));
    assert!(matches!(interval_scales(&[0.0, 0.0], 5.0), Err(Error::Domain(_))));
    assert!(matches!(interval_scales(&[], 5.0), Err(Error::Input(_))));
    assert!(interval_scales(&[0.0, f64::NAN], 5.0).is_err());
}

#[test]
fn interval_scales_increase_and_rescale() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let mut times = vec![rng.random_range(0.0..2.0)];
        for _ in 0..4 {
            times.push(times[times.len() - 1] + rng.random_range(0.1..3.0));
        }
        let predict = times[4] + rng.random_range(0.1..3.0);
        let s = interval_scales(&times, predict).unwrap();
        assert!(s.as_slice().windows(2).all(|w| w[0] < w[1]));
        let c = rng.random_range(0.2..5.0);
        let scaled_times: Vec<f64> = times.iter().map(|t| t * c).collect();
        let s2 = interval_scales(&scaled_times, predict * c).unwrap();
        for (a, b) in s.as_slice().iter().zip(s2.as_slice()) {
            assert!((a / c - b).abs() < 1e-12 * a.max(1.0));
        }
    }
}

#[test]
fn assemble_sequence_rows() {
    let vecs = vec![vec![1.0, 2.0], vec![0.0, 0.0], vec![-3.0, 4.0]];
    let m = assemble_sequence(&vecs, &IntervalScales::ones(3)).unwrap();
    assert_eq!(m.as_tensor().data(), &[1.0, 2.0, 0.0, 0.0, -3.0, 4.0]);
    let s = interval_scales(&[0.0, 2.0, 3.0], 4.0).unwrap();
    let m = assemble_sequence(&vecs, &s).unwrap();
    assert_eq!(m.row(1), &[0.0, 0.0]);
    let ones = vec![vec![1.0; 4]; 3];
    let m = assemble_sequence(&ones, &s).unwrap();
    assert_eq!(m.row(0), &[0.25; 4]);
    assert_eq!(m.row(1), &[0.5; 4]);
    assert_eq!(m.row(2), &[1.0; 4]);
    assert!(assemble_sequence(&ones[..2], &s).is_err());
    assert!(assemble_sequence(&[vec![1.0], vec![1.0, 2.0]], &IntervalScales::ones(2)).is_err());
}

#[test]
fn zero_head_gives_one_half() {
    let head = HeadParams {
        gru: GruParams::zeros(4, 1),
        readout: DenseParams {
            weight: Tensor::zeros(&[1, 1]),
            bias: Tensor::zeros(&[1]),
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let vecs: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..4).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    let m = assemble_sequence(&vecs, &IntervalScales::ones(3)).unwrap();
    assert_eq!(forward_sequence(&m, &head).unwrap(), 0.5);
}

#[test]
fn forward_sequence_unrolls_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let head = random_head(4, 1, &mut rng);
    let vecs: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let scales = interval_scales(&[0.0, 1.5, 2.25], 4.0).unwrap();
    let m = assemble_sequence(&vecs, &scales).unwrap();
    let mut h = vec![0.0];
    for i in 0..3 {
        h = gru_step(m.row(i), &h, &head.gru).unwrap();
        if i == 0 {
            let single = assemble_sequence(&vecs[..1], &IntervalScales::ones(1)).unwrap();
            let scaled: Vec<f64> = vecs[0].iter().map(|v| v * scales.as_slice()[0]).collect();
            let h1 = gru_step(&scaled, &[0.0], &head.gru).unwrap();
            assert_eq!(h, h1);
            let h_unscaled = gru_step(&vecs[0], &[0.0], &head.gru).unwrap();
            let p1 = sigmoid(h_unscaled[0] * head.readout.weight.item() + head.readout.bias.item());
            assert!((forward_sequence(&single, &head).unwrap() - p1).abs() < 1e-15);
        }
    }
    let expected = sigmoid(h[0] * head.readout.weight.item() + head.readout.bias.item());
    assert!((forward_sequence(&m, &head).unwrap() - expected).abs() < 1e-15);
}

#[test]
fn forward_sequence_shape_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let head = random_head(4, 2, &mut rng);
    let m = assemble_sequence(&[vec![1.0; 3]], &IntervalScales::ones(1)).unwrap();
    assert!(forward_sequence(&m, &head).is_err());
}

#[test]
fn predict_is_strict() {
    assert_eq!(predict(0.51, DEFAULT_THRESHOLD), Progression::Progressing);
    assert_eq!(predict(0.5, DEFAULT_THRESHOLD), Progression::NonProgressing);
    assert_eq!(predict(0.49, DEFAULT_THRESHOLD), Progression::NonProgressing);
}

#[test]
fn encode_image_properties() {
    let cfg = ModelConfig::longitudinal(1, tiny_encoder());
    let model = Model::init(cfg, 5).unwrap();
    let enc = model.encoder_params().unwrap();
    let zero = encode_image(&Tensor::zeros(&[8, 8, 3]), &enc).unwrap();
    assert_eq!(zero.features, vec![0.0; 3]);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = random_tensor(&[8, 8, 3], &mut rng, 0.0, 1.0);
    let a = encode_image(&img, &enc).unwrap();
    let b = encode_image(&img, &enc).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.conv_maps.shape(), &[4, 4, 3]);
    for f in 0..3 {
        let mean: f64 = a.conv_maps.data().iter().skip(f).step_by(3).sum::<f64>() / 16.0;
        assert!((a.features[f] - mean).abs() < 1e-15);
    }
    assert!(matches!(
        encode_image(&Tensor::zeros(&[6, 6, 3]), &enc),
        Err(Error::Input(_))
    ));
    assert!(encode_image(&Tensor::full(&[8, 8, 3], 1.5), &enc).is_err());
}

#[test]
fn baseline_zero_and_deterministic() {
    let model = Model::zeros(ModelConfig::single_image(tiny_encoder())).unwrap();
    let enc = model.encoder_params().unwrap();
    let dense = model.baseline_dense().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = random_tensor(&[8, 8, 3], &mut rng, 0.0, 1.0);
    assert_eq!(forward_single_baseline(&img, &enc, &dense).unwrap(), 0.5);

    let model = random_model(ModelConfig::single_image(tiny_encoder()), 6);
    let (enc, dense) = (model.encoder_params().unwrap(), model.baseline_dense().unwrap());
    let p = forward_single_baseline(&img, &enc, &dense).unwrap();
    assert_eq!(p, forward_single_baseline(&img, &enc, &dense).unwrap());
    let input = SequenceInput {
        visits: vec![VisitInput::Image(img)],
        scales: vec![1.0],
    };
    assert_eq!(model.predict_proba(&input).unwrap(), p);
}

#[test]
fn baseline_matches_linearized_recurrent_head() {
    // z saturates at 1 and the candidate runs in tanh's linear regime:
    // h = tanh(ε·fᵀw) ≈ ε·fᵀw, and the readout undoes ε.
    let model = random_model(ModelConfig::single_image(tiny_encoder()), 12);
    let (enc, dense) = (model.encoder_params().unwrap(), model.baseline_dense().unwrap());
    let eps = 1e-4;
    let mut gru = GruParams::zeros(3, 1);
    gru.bias_update = Tensor::vector(vec![60.0]);
    gru.input_candidate = dense.weight.map(|w| w * eps);
    let head = HeadParams {
        gru,
        readout: DenseParams {
            weight: Tensor::new(vec![1, 1], vec![1.0 / eps]).unwrap(),
            bias: dense.bias.clone(),
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..5 {
        let img = random_tensor(&[8, 8, 3], &mut rng, 0.0, 1.0);
        let p = forward_single_baseline(&img, &enc, &dense).unwrap();
        let features = encode_image(&img, &enc).unwrap().features;
        let m = assemble_sequence(&[features], &IntervalScales::ones(1)).unwrap();
        let q = forward_sequence(&m, &head).unwrap();
        assert!((p - q).abs() < 1e-7, "{p} vs {q}");
    }
}

#[test]
fn model_matches_free_functions() {
    let model = random_model(ModelConfig::longitudinal(3, tiny_encoder()), 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let visits = random_images(3, 8, &mut rng);
    let scales = interval_scales(&[0.0, 1.0, 2.5], 4.0).unwrap();
    let enc = model.encoder_params().unwrap();
    let features: Vec<Vec<f64>> = visits
        .iter()
        .map(|v| match v {
            VisitInput::Image(img) => encode_image(img, &enc).unwrap().features,
            VisitInput::Features(_) => unreachable!(),
        })
        .collect();
    let m = assemble_sequence(&features, &scales).unwrap();
    let expected = forward_sequence(&m, &model.head_params().unwrap()).unwrap();
    let input = SequenceInput {
        visits,
        scales: scales.as_slice().to_vec(),
    };
    assert!((model.predict_proba(&input).unwrap() - expected).abs() < 1e-15);
}

#[test]
fn unscaled_model_ignores_scales() {
    let mut cfg = ModelConfig::longitudinal(2, tiny_encoder());
    cfg.interval_scaling = false;
    let model = random_model(cfg.clone(), 31);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let visits = random_images(2, 8, &mut rng);
    let a = SequenceInput {
        visits: visits.clone(),
        scales: vec![0.2, 0.9],
    };
    let b = SequenceInput {
        visits,
        scales: vec![1.0, 1.0],
    };
    assert_eq!(model.predict_proba(&a).unwrap(), model.predict_proba(&b).unwrap());
    cfg.interval_scaling = true;
    let scaled = Model::from_params(cfg, model.params().clone()).unwrap();
    assert_eq!(scaled.predict_proba(&b).unwrap(), model.predict_proba(&b).unwrap());
    assert_ne!(scaled.predict_proba(&a).unwrap(), model.predict_proba(&a).unwrap());
}

#[test]
fn shared_encoder_parameters() {
    for t in 1..=3 {
        let cfg = ModelConfig::longitudinal(t, tiny_encoder());
        let n_encoder = layout(&cfg).iter().filter(|s| s.name.starts_with("encoder.")).count();
        assert_eq!(n_encoder, 4);
    }
    // Identical visits yield identical feature rows.
    let model = random_model(ModelConfig::longitudinal(3, tiny_encoder()), 41);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let img = random_tensor(&[8, 8, 3], &mut rng, 0.0, 1.0);
    let input = SequenceInput {
        visits: vec![VisitInput::Image(img); 3],
        scales: vec![1.0; 3],
    };
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let fwd = model.forward(&mut g, &bound, &input).unwrap();
    assert_eq!(g.value(fwd.features[0]), g.value(fwd.features[2]));
}

#[test]
fn init_is_seeded_and_glorot_bounded() {
    let cfg = ModelConfig::longitudinal(3, EncoderConfig::default());
    let a = Model::init(cfg.clone(), 7).unwrap();
    assert_eq!(a, Model::init(cfg.clone(), 7).unwrap());
    assert_ne!(a, Model::init(cfg.clone(), 8).unwrap());
    for spec in layout(&cfg) {
        let t = a.params().get(&spec.name).unwrap();
        assert_eq!(t.shape(), spec.shape.as_slice());
        if spec.bias {
            assert!(t.data().iter().all(|&v| v == 0.0));
        } else {
            let limit = (6.0 / (spec.fan_in + spec.fan_out) as f64).sqrt();
            assert!(t.data().iter().all(|v| v.abs() <= limit));
        }
    }
}

#[test]
fn from_params_checks_layout() {
    let cfg = ModelConfig::longitudinal(2, tiny_encoder());
    let model = Model::init(cfg.clone(), 1).unwrap();
    let other = Model::init(ModelConfig::single_image(tiny_encoder()), 1).unwrap();
    assert!(Model::from_params(cfg.clone(), other.params().clone()).is_err());
    assert!(Model::from_params(cfg, model.params().clone()).is_ok());
}

#[test]
fn forward_input_errors() {
    let model = Model::init(ModelConfig::longitudinal(3, tiny_encoder()), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = SequenceInput {
        visits: random_images(2, 8, &mut rng),
        scales: vec![1.0; 2],
    };
    assert!(matches!(model.predict_proba(&input), Err(Error::Input(_))));
    let features = SequenceInput {
        visits: vec![VisitInput::Features(vec![0.0; 3]); 3],
        scales: vec![1.0; 3],
    };
    // Image models accept precomputed features of the right length.
    assert!(model.predict_proba(&features).is_ok());
    let external = ModelConfig {
        source: FeatureSource::External { features: 3 },
        ..ModelConfig::longitudinal(3, tiny_encoder())
    };
    let ext = Model::init(external, 2).unwrap();
    let images = SequenceInput {
        visits: random_images(3, 8, &mut rng),
        scales: vec![1.0; 3],
    };
    assert!(ext.predict_proba(&images).is_err());
}

fn pipeline_grad_check(config: ModelConfig, seed: u64) -> f64 {
    let model = random_model(config, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let t = model.config().timepoints;
    let input = SequenceInput {
        visits: random_images(t, 8, &mut rng),
        scales: interval_scales(&[0.0, 1.25, 2.0][..t], 3.5)
            .unwrap()
            .as_slice()
            .to_vec(),
    };
    let label = f64::from(u8::from(rng.random_bool(0.5)));
    let params: Vec<Tensor> = model.params().tensors().cloned().collect();
    let check = grad_check(
        |g, vars| {
            let bound = model.bind_vars(vars.to_vec());
            let fwd = model.forward(g, &bound, &input)?;
            g.bce(fwd.prob, label)
        },
        &params,
        1e-5,
    )
    .unwrap();
    check.max_rel_error
}

#[test]
fn full_pipeline_gradients() {
    for seed in 0..3 {
        let err = pipeline_grad_check(ModelConfig::longitudinal(3, tiny_encoder()), seed);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
    let mut cam = ModelConfig::longitudinal(2, tiny_encoder());
    cam.cam_head = true;
    cam.hidden = 3;
    assert!(pipeline_grad_check(cam, 9) < 1e-4);
    assert!(pipeline_grad_check(ModelConfig::single_image(tiny_encoder()), 10) < 1e-4);
}

#[test]
fn loss_and_grads_agree_with_graph() {
    let model = random_model(ModelConfig::longitudinal(2, tiny_encoder()), 50);
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let input = SequenceInput {
        visits: random_images(2, 8, &mut rng),
        scales: vec![0.4, 0.8],
    };
    let plain = model.loss_and_grads(&input, 1.0, None).unwrap();
    let p = model.predict_proba(&input).unwrap();
    assert_eq!(plain.prob, p);
    assert!((plain.loss + p.ln()).abs() < 1e-12);
    let weighted = model.loss_and_grads(&input, 1.0, Some(3.0)).unwrap();
    assert!((weighted.loss - 3.0 * plain.loss).abs() < 1e-12);
    for (a, b) in weighted.grads.iter().zip(&plain.grads) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - 3.0 * y).abs() < 1e-12));
    }
    let negative = model.loss_and_grads(&input, 0.0, Some(3.0)).unwrap();
    assert!((negative.loss + (1.0 - p).ln()).abs() < 1e-12);
}

#[test]
fn cam_requires_cam_head() {
    let model = Model::init(ModelConfig::longitudinal(1, tiny_encoder()), 1).unwrap();
    let input = SequenceInput {
        visits: vec![VisitInput::Image(Tensor::zeros(&[8, 8, 3]))],
        scales: vec![1.0],
    };
    assert!(matches!(cam(&model, &input), Err(Error::Config(_))));
}

#[test]
fn cam_shapes_and_zero_gradient() {
    let mut cfg = ModelConfig::longitudinal(2, tiny_encoder());
    cfg.cam_head = true;
    cfg.hidden = CAM_HIDDEN;
    let model = Model::zeros(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let input = SequenceInput {
        visits: random_images(2, 8, &mut rng),
        scales: vec![0.5, 1.0],
    };
    let maps = cam(&model, &input).unwrap();
    assert_eq!(maps.len(), 2);
    for m in &maps {
        assert_eq!(m.raw.shape(), &[4, 4, 1]);
        assert!(m.raw.data().iter().all(|&v| v == 0.0));
        assert!(m.normalized.data().iter().all(|&v| v == 0.0));
        assert_eq!(m.upsampled.shape(), &[8, 8, 1]);
    }

    let model = random_model(cfg, 62);
    for m in cam(&model, &input).unwrap() {
        let (lo, hi) = m
            .normalized
            .data()
            .iter()
            .fold((1.0f64, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(lo >= 0.0 && hi <= 1.0);
    }
}

#[test]
fn cam_single_channel_closed_form() {
    let enc = EncoderConfig {
        features: 1,
        ..tiny_encoder()
    };
    let mut cfg = ModelConfig::longitudinal(1, enc);
    cfg.cam_head = true;
    cfg.hidden = 2;
    let model = random_model(cfg, 71);
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    let input = SequenceInput {
        visits: random_images(1, 8, &mut rng),
        scales: vec![0.5],
    };
    let maps = cam(&model, &input).unwrap();
    let conv = match &input.visits[0] {
        VisitInput::Image(img) => encode_image(img, &model.encoder_params().unwrap()).unwrap().conv_maps,
        VisitInput::Features(_) => unreachable!(),
    };
    // Gradient of the logit with respect to the lone pooled feature.
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let fwd = model.forward(&mut g, &bound, &input).unwrap();
    let grad = g.backward(fwd.logit).unwrap().get(fwd.features[0]).item();
    assert!(grad != 0.0);
    for (r, a) in maps[0].raw.data().iter().zip(conv.data()) {
        assert!((r - grad * a).abs() < 1e-15);
    }
}

#[test]
fn min_max_normalization() {
    let t = Tensor::vector(vec![2.0, 4.0, 3.0]);
    assert_eq!(min_max_normalize(&t).data(), &[0.0, 1.0, 0.5]);
    assert_eq!(min_max_normalize(&Tensor::full(&[3], 7.0)).data(), &[0.0; 3]);
}
