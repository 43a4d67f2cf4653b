mod common;

use common::{model_gradient_error, random_input, tiny_temporal, tiny_unet, tiny_vit};
use meltpool::model::{
    positional_encoding, self_attention, Checkpoint, Dropout, ModelConfig, MultiHeadAttention, SdfNet, TemporalConfig,
    TrainingMeta, UNetConfig, VitConfig,
};
use meltpool::nn::{Graph, ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::from_fn(vec![r, c], |_| rng.random_range(-2.0..2.0))
}

/// Row-by-row softmax-weighted sum.
fn attention_oracle(q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>) -> Vec<f64> {
    let (l, d) = (q.shape()[0], q.shape()[1]);
    let (lk, dv) = (k.shape()[0], v.shape()[1]);
    let mut out = vec![0.0; l * dv];
    for i in 0..l {
        let scores: Vec<f64> = (0..lk)
            .map(|j| (0..d).map(|t| q.data()[i * d + t] * k.data()[j * d + t]).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for j in 0..lk {
            for t in 0..dv {
                out[i * dv + t] += e[j] / z * v.data()[j * dv + t];
            }
        }
    }
    out
}

#[test]
fn attention_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (q, k, v) = (matrix(&mut rng, 5, 8), matrix(&mut rng, 5, 8), matrix(&mut rng, 5, 8));
        let out = self_attention(&q, &k, &v).unwrap();
        for (a, b) in out.data().iter().zip(attention_oracle(&q, &k, &v)) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn attention_special_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (q, k, v) = (matrix(&mut rng, 1, 4), matrix(&mut rng, 1, 4), matrix(&mut rng, 1, 4));
    let out = self_attention(&q, &k, &v).unwrap();
    for (a, b) in out.data().iter().zip(v.data()) {
        assert!((a - b).abs() < 1e-15);
    }
    let zeros = Tensor::zeros(vec![4, 3]);
    let v = matrix(&mut rng, 4, 3);
    let out = self_attention(&zeros, &zeros, &v).unwrap();
    for c in 0..3 {
        let mean = (0..4).map(|r| v.data()[r * 3 + c]).sum::<f64>() / 4.0;
        for r in 0..4 {
            assert!((out.data()[r * 3 + c] - mean).abs() < 1e-12);
        }
    }
    assert!(self_attention(&matrix(&mut rng, 2, 3), &matrix(&mut rng, 2, 4), &v).is_err());
}

proptest! {
    #[test]
    fn attention_output_in_convex_hull(seed in 0u64..10_000, l in 1usize..7, d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (q, k, v) = (matrix(&mut rng, l, d), matrix(&mut rng, l, d), matrix(&mut rng, l, d));
        let out = self_attention(&q, &k, &v).unwrap();
        for c in 0..d {
            let col: Vec<f64> = (0..l).map(|r| v.data()[r * d + c]).collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for r in 0..l {
                let x = out.data()[r * d + c];
                prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
            }
        }
    }
}

#[test]
fn multi_head_single_head_identity_projection() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mha = MultiHeadAttention::new(&mut store, &mut rng, "a", 4, 1).unwrap();
    // q = k = v = x, output projection identity.
    let eye: Vec<f64> = (0..16).map(|i| if i / 4 == i % 4 { 1.0 } else { 0.0 }).collect();
    let mut qkv = vec![0.0; 4 * 12];
    for r in 0..4 {
        for part in 0..3 {
            qkv[r * 12 + part * 4 + r] = 1.0;
        }
    }
    *store.get_mut(mha.qkv.w) = Tensor::new(vec![4, 12], qkv).unwrap();
    *store.get_mut(mha.out.w) = Tensor::new(vec![4, 4], eye).unwrap();
    let x = matrix(&mut rng, 3, 4);
    let mut g = Graph::inference(&store);
    let xi = g.input(x.clone().reshape(vec![1, 3, 4]).unwrap());
    let a = mha.forward(&mut g, xi).unwrap();
    let expect = self_attention(&x, &x, &x).unwrap();
    for (p, q) in g.value(a.output).data().iter().zip(expect.data()) {
        assert!((p - q).abs() < 1e-12);
    }
    let mut s2 = ParamStore::<f64>::new();
    assert!(MultiHeadAttention::new(&mut s2, &mut rng, "b", 6, 4).is_err());
}

#[test]
fn positional_codes() {
    let pe0 = positional_encoding(0, 32);
    for (i, v) in pe0.iter().enumerate() {
        assert_eq!(*v, if i % 2 == 0 { 0.0 } else { 1.0 });
    }
    let codes: Vec<Vec<f64>> = (0..1000).map(|i| positional_encoding(i, 32)).collect();
    assert!(codes.iter().flatten().all(|v| v.abs() <= 1.0));
    let mut min = f64::INFINITY;
    for i in 0..codes.len() {
        for j in i + 1..codes.len() {
            let d: f64 = codes[i].iter().zip(&codes[j]).map(|(a, b)| (a - b).powi(2)).sum();
            min = min.min(d.sqrt());
        }
    }
    assert!(min > 0.0);
}

#[test]
fn parameter_budgets() {
    let t = SdfNet::<f32>::new(ModelConfig::Temporal(TemporalConfig::default()), 0).unwrap();
    let n = t.num_parameters() as f64;
    assert!((6.0e6..=9.0e6).contains(&n), "{n}");
    let u = SdfNet::<f32>::new(ModelConfig::Unet(UNetConfig::default()), 0).unwrap();
    let n = u.num_parameters() as f64;
    assert!((6.4e7..=9.6e7).contains(&n), "{n}");
}

#[test]
fn shapes_and_embedding_width() {
    let cfg = TemporalConfig {
        resnet_channels: vec![4, 8],
        blocks_per_stage: 1,
        token_dim: 64,
        layers: 1,
        feed_forward_dim: 32,
        decoder_hidden: 32,
        ..TemporalConfig::default()
    };
    let net = SdfNet::<f32>::new(ModelConfig::Temporal(cfg.clone()), 1).unwrap();
    for l in [1, 10] {
        let x = random_input(l as u64, &[2, l, 64, 64]).cast::<f32>();
        assert_eq!(net.predict(&x).unwrap().shape(), &[2, 64, 64]);
    }
    let mut g = Graph::inference(net.params());
    let f = g.input(random_input(9, &[3, 1, 64, 64]).cast::<f32>());
    let e = net.embed_frames(&mut g, f).unwrap();
    assert_eq!(g.shape(e), &[3, cfg.embed_dim()]);
    assert!(net.predict(&Tensor::zeros(vec![1, 0, 64, 64])).is_err());
    assert!(net.predict(&Tensor::zeros(vec![1, 1, 32, 32])).is_err());

    let vit = VitConfig {
        dim: 32,
        heads: 4,
        layers: 1,
        feed_forward_dim: 32,
        decoder_hidden: 32,
        ..VitConfig::default()
    };
    assert_eq!(vit.patches(), 16);
    let vnet = SdfNet::<f32>::new(ModelConfig::Vit(vit), 2).unwrap();
    let x = random_input(3, &[2, 3, 64, 64]).cast::<f32>();
    let mut g = Graph::inference(vnet.params());
    let xi = g.input(x);
    let out = vnet.forward(&mut g, xi, &mut Dropout::eval()).unwrap();
    assert_eq!(g.shape(out.output), &[2, 64, 64]);
    for &w in &out.attention {
        assert_eq!(g.shape(w), &[2 * 4, 17, 17]);
        for row in g.value(w).data().chunks(17) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    let x = random_input(11, &[1, 2, 8, 8]);
    for (i, cfg) in [tiny_temporal(8), tiny_unet(8), tiny_vit(8)].into_iter().enumerate() {
        let net = SdfNet::<f64>::new(cfg.clone(), 20 + i as u64).unwrap();
        let err = model_gradient_error(&net, &x, 30 + i as u64);
        assert!(err <= 1e-4, "{}: relative error {err}", cfg.name());
    }
}

#[test]
fn eval_is_deterministic_and_batch_independent() {
    for cfg in [tiny_temporal(16), tiny_unet(16), tiny_vit(16)] {
        let net = SdfNet::<f32>::new(cfg, 7).unwrap();
        let x = random_input(12, &[3, 4, 16, 16]).cast::<f32>();
        let all = net.predict(&x).unwrap();
        assert_eq!(all, net.predict(&x).unwrap());
        let one = net
            .predict(&Tensor::new(vec![1, 4, 16, 16], x.data()[4 * 256..8 * 256].to_vec()).unwrap())
            .unwrap();
        for (a, b) in one.data().iter().zip(&all.data()[256..512]) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
}

#[test]
fn training_mode_dropout_changes_output() {
    let net = SdfNet::<f64>::new(tiny_temporal(8), 1).unwrap();
    let x = random_input(2, &[1, 3, 8, 8]);
    let run = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new(net.params());
        let xi = g.input(x.clone());
        let f = net.forward(&mut g, xi, &mut Dropout::train(0.1, &mut rng)).unwrap();
        g.value(f.output).clone()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

#[test]
fn frame_permutation_equivariance_without_positions() {
    let net = SdfNet::<f64>::new(tiny_temporal(8), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (l, d) = (5, 16);
    let tokens: Vec<f64> = (0..l * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let perm = [3, 0, 4, 1, 2];
    let permuted: Vec<f64> = perm.iter().flat_map(|&p| tokens[p * d..(p + 1) * d].to_vec()).collect();
    let run = |t: Vec<f64>| {
        let mut g = Graph::inference(net.params());
        let x = g.input(Tensor::new(vec![1, l, d], t).unwrap());
        let (y, w) = net.encode_tokens(&mut g, x, &mut Dropout::eval()).unwrap();
        for &wi in &w {
            for row in g.value(wi).data().chunks(l + 1) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        g.value(y).data().to_vec()
    };
    let (a, b) = (run(tokens), run(permuted));
    for (i, &p) in perm.iter().enumerate() {
        for k in 0..d {
            assert!((b[i * d + k] - a[p * d + k]).abs() < 1e-10);
        }
    }
    for k in 0..d {
        assert!((a[l * d + k] - b[l * d + k]).abs() < 1e-10);
    }
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let net = SdfNet::<f32>::new(tiny_vit(8), 4).unwrap();
    let meta = TrainingMeta {
        epoch: 3,
        seed: 4,
        loss_history: vec![0.5, 0.25],
        origin: None,
        ..TrainingMeta::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    Checkpoint::from_model(&net, meta.clone()).save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"MPCK");
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.meta, meta);
    let net2 = loaded.into_model().unwrap();
    let x = random_input(5, &[2, 2, 8, 8]).cast::<f32>();
    assert_eq!(net.predict(&x).unwrap().data(), net2.predict(&x).unwrap().data());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(Checkpoint::from_bytes(b"NOPE").is_err());
}

#[test]
fn config_validation() {
    let bad = ModelConfig::Temporal(TemporalConfig {
        heads: 3,
        ..TemporalConfig::default()
    });
    assert!(SdfNet::<f32>::new(bad, 0).is_err());
    let bad = ModelConfig::Unet(UNetConfig {
        image_size: 20,
        ..UNetConfig::default()
    });
    assert!(bad.validate().is_err());
    let toml = "architecture = \"vit\"\ndim = 64\nheads = 4\n";
    let cfg: ModelConfig = toml::from_str(toml).unwrap();
    assert!(matches!(cfg, ModelConfig::Vit(VitConfig { dim: 64, patch: 16, .. })));
}
