//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

pub mod oracles;

use meltpool::ingest::Domain;
use meltpool::model::{Dropout, ModelConfig, SdfNet, TemporalConfig, UNetConfig, VitConfig};
use meltpool::nn::{Graph, Tensor};
use meltpool::pipeline::ExperimentConfig;
use meltpool::synthdata::{RangeSpec, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_temporal(image_size: usize) -> ModelConfig {
    ModelConfig::Temporal(TemporalConfig {
        image_size,
        token_dim: 16,
        pos_dim: 4,
        heads: 2,
        layers: 1,
        feed_forward_dim: 8,
        dropout: 0.1,
        resnet_channels: vec![2, 3],
        blocks_per_stage: 1,
        decoder_hidden: 8,
        readout_init_std: 0.02,
    })
}

pub fn tiny_unet(image_size: usize) -> ModelConfig {
    ModelConfig::Unet(UNetConfig {
        image_size,
        channels: vec![2, 4],
        kernel: 3,
    })
}

pub fn tiny_vit(image_size: usize) -> ModelConfig {
    ModelConfig::Vit(VitConfig {
        image_size,
        patch: 4,
        dim: 8,
        heads: 2,
        layers: 1,
        feed_forward_dim: 8,
        dropout: 0.1,
        decoder_hidden: 8,
    })
}

pub fn random_input(seed: u64, shape: &[usize]) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(0.0..1.0))
}

/// `sum(c * model(x))` for a fixed random `c`, in evaluation mode.
fn objective(model: &SdfNet<f64>, x: &Tensor<f64>, c: &[f64]) -> f64 {
    let mut g = Graph::inference(model.params());
    let xi = g.input(x.clone());
    let f = model.forward(&mut g, xi, &mut Dropout::eval()).unwrap();
    g.value(f.output).data().iter().zip(c).map(|(a, b)| a * b).sum()
}

/// Largest norm-wise relative error `|a - n| / max(|a|, |n|)` between the
/// backpropagated gradient of each parameter tensor (and of the input) and
/// its central-difference estimate.
pub fn model_gradient_error(model: &SdfNet<f64>, x: &Tensor<f64>, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = model.config().image_size();
    let n_out = x.shape()[0] * s * s;
    let c: Vec<f64> = (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut g = Graph::new(model.params());
    let xi = g.leaf(x.clone());
    let f = model.forward(&mut g, xi, &mut Dropout::eval()).unwrap();
    let loss = g.dot_const(f.output, c.clone()).unwrap();
    let grads = g.backward(loss).unwrap();

    let h = 1e-6;
    let rel = |a: &[f64], n: &[f64]| {
        let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
        let diff = norm(&mut a.iter().zip(n).map(|(p, q)| p - q));
        let scale = norm(&mut a.iter().copied()).max(norm(&mut n.iter().copied()));
        if scale == 0.0 {
            0.0
        } else {
            diff / scale
        }
    };
    let mut worst = 0.0f64;

    let mut probe = model.clone();
    let ids: Vec<_> = model.params().ids().collect();
    for pid in ids {
        let size = model.params().get(pid).numel();
        let analytic = grads
            .param(pid)
            .map_or_else(|| vec![0.0; size], |t| t.data().to_vec());
        let mut numeric = Vec::with_capacity(size);
        for k in 0..size {
            let orig = model.params().get(pid).data()[k];
            probe.params_mut().get_mut(pid).data_mut()[k] = orig + h;
            let up = objective(&probe, x, &c);
            probe.params_mut().get_mut(pid).data_mut()[k] = orig - h;
            let down = objective(&probe, x, &c);
            probe.params_mut().get_mut(pid).data_mut()[k] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        worst = worst.max(rel(&analytic, &numeric));
    }
    let dx = grads.wrt(xi).cloned().unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
    let numeric: Vec<f64> = (0..x.numel())
        .map(|k| {
            let mut xp = x.clone();
            xp.data_mut()[k] += h;
            let mut xm = x.clone();
            xm.data_mut()[k] -= h;
            (objective(model, &xp, &c) - objective(model, &xm, &c)) / (2.0 * h)
        })
        .collect();
    worst.max(rel(dx.data(), &numeric))
}

/// A small synthetic grid: `np x nv` combinations of `frames` frames each.
pub fn small_synth(domain: Domain, np: usize, nv: usize, frames: usize, seed: u64) -> SynthConfig {
    let mut c = SynthConfig {
        domain,
        seed,
        frames_per_track: frames,
        ..SynthConfig::default()
    };
    c.power_w = RangeSpec {
        start: 190.0,
        stop: 190.0 + 120.0 * (np as f64 - 1.0),
        step: 120.0,
    };
    c.velocity_m_s = RangeSpec {
        start: 0.5,
        stop: 0.5 + 0.4 * (nv as f64 - 1.0),
        step: 0.4,
    };
    c
}

/// Experiment settings for the tiny temporal model on 64 x 64 inputs.
pub fn tiny_experiment(window: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        model: tiny_temporal(64),
        epochs: 1,
        learning_rate: 1e-3,
        batch_size: 2,
        weight_decay: 0.0,
        dropout: 0.0,
        window,
        half_window: 0,
        ..ExperimentConfig::default()
    }
}
