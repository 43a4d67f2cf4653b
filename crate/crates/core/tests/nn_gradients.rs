//! Analytic gradients of every graph operation against central differences.

use meltpool::nn::{Graph, NodeId, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build = dyn Fn(&mut Graph<'_, f64>, &[NodeId]) -> NodeId;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Builds `sum(c * f(inputs))` for a fixed random `c` and compares gradients.
fn check(shapes: &[&[usize]], seed: u64, build: &Build) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random(&mut rng, s)).collect();
    let store = ParamStore::new();

    let eval = |inputs: &[Tensor<f64>], c: Option<&[f64]>| -> (f64, Vec<f64>, Vec<Tensor<f64>>) {
        let mut g = Graph::new(&store);
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &ids);
        let n = g.value(out).numel();
        let c: Vec<f64> = match c {
            Some(c) => c.to_vec(),
            None => {
                let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
                (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
            }
        };
        let loss = g.dot_const(out, c.clone()).unwrap();
        let value = g.value(loss).data()[0];
        let grads = g.backward(loss).unwrap();
        let gs = ids
            .iter()
            .map(|&id| grads.wrt(id).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(id).to_vec())))
            .collect();
        (value, c, gs)
    };

    let (_, c, analytic) = eval(&inputs, None);
    let h = 1e-6;
    for (k, input) in inputs.iter().enumerate() {
        for idx in 0..input.numel() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[idx] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[idx] -= h;
            let fd = (eval(&plus, Some(&c)).0 - eval(&minus, Some(&c)).0) / (2.0 * h);
            let an = analytic[k].data()[idx];
            assert!(
                (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                "input {k} element {idx}: analytic {an} vs numeric {fd}"
            );
        }
    }
}

#[test]
fn linear() {
    check(&[&[2, 3, 4], &[4, 5], &[5]], 1, &|g, x| g.linear(x[0], x[1], Some(x[2])).unwrap());
}

#[test]
fn batch_matmul_both_layouts() {
    check(&[&[2, 3, 4], &[2, 4, 5]], 2, &|g, x| g.batch_matmul(x[0], x[1], false).unwrap());
    check(&[&[2, 3, 4], &[2, 5, 4]], 3, &|g, x| g.batch_matmul(x[0], x[1], true).unwrap());
}

#[test]
fn conv2d_strided_padded() {
    check(&[&[2, 2, 5, 5], &[3, 2, 3, 3], &[3]], 4, &|g, x| {
        g.conv2d(x[0], x[1], Some(x[2]), 2, 1).unwrap()
    });
    check(&[&[1, 3, 4, 4], &[2, 3, 1, 1]], 5, &|g, x| g.conv2d(x[0], x[1], None, 1, 0).unwrap());
}

#[test]
fn conv_transpose() {
    check(&[&[2, 3, 2, 3], &[3, 2, 2, 2], &[2]], 6, &|g, x| {
        g.conv_transpose2x2(x[0], x[1], Some(x[2])).unwrap()
    });
}

#[test]
fn max_pool() {
    check(&[&[2, 2, 4, 4]], 7, &|g, x| g.max_pool2(x[0]).unwrap());
}

#[test]
fn elementwise() {
    check(&[&[3, 4], &[4]], 8, &|g, x| {
        let s = g.add(x[0], x[1]).unwrap();
        let a = g.gelu(s);
        let b = g.tanh(a);
        let c = g.relu(b);
        let d = g.scale(c, 1.7);
        g.mul_const(d, (0..12).map(|i| i as f64 * 0.1).collect()).unwrap()
    });
}

#[test]
fn layer_norm_and_softmax() {
    check(&[&[3, 6], &[6], &[6]], 9, &|g, x| {
        let y = g.layer_norm(x[0], x[1], x[2], 1e-5).unwrap();
        g.softmax(y)
    });
}

#[test]
fn shape_ops() {
    check(&[&[2, 3, 4], &[2, 2, 4]], 10, &|g, x| {
        let c = g.concat(&[x[0], x[1]], 1).unwrap();
        let p = g.permute(c, &[2, 0, 1]).unwrap();
        let r = g.reshape(p, &[8, 5]).unwrap();
        let n = g.narrow(r, 1, 1, 3).unwrap();
        let m = g.mean_axis(n, 0).unwrap();
        g.expand(m, 3)
    });
}

#[test]
fn losses() {
    check(&[&[3, 4], &[3, 4]], 11, &|g, x| g.mse(x[0], x[1]).unwrap());
    check(&[&[5]], 12, &|g, x| g.sum_all(x[0]));
}

#[test]
fn shared_input_accumulates() {
    check(&[&[2, 3]], 13, &|g, x| {
        let a = g.tanh(x[0]);
        let b = g.scale(x[0], 2.0);
        g.add(a, b).unwrap()
    });
}

#[test]
fn inference_graph_has_no_gradients() {
    let store = ParamStore::<f32>::new();
    let mut g = Graph::inference(&store);
    let x = g.leaf(Tensor::full(vec![2], 1.0));
    let y = g.sum_all(x);
    let grads = g.backward(y).unwrap();
    assert!(grads.wrt(x).is_none());
}
