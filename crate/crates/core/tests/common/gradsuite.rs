//! Finite-difference checks over every graph operation, layer and the critic.

use pagewise::critic::Critic;
use pagewise::encoder::ModelConfig;
use pagewise::nn::{Attention, ConvLayerSpec, Dense, Embedding, Gru, PageConv, PageConvConfig, PageDeconv};
use pagewise::tensor::gradcheck::{check_gradients, random_projection, GradCheckConfig};
use pagewise::tensor::{ConvSpec, Graph, ParameterSet, Tensor, Var};
use pagewise::Result;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const OPS: [&str; 24] = [
    "matmul",
    "add_broadcast",
    "sub",
    "mul_broadcast",
    "scale",
    "tanh",
    "sigmoid",
    "softmax",
    "concat",
    "slice",
    "gather",
    "reshape",
    "sum",
    "frobenius_sq",
    "conv2d",
    "deconv2d",
    "dense",
    "embedding",
    "embedding_lookup",
    "gru_step",
    "attention_pool",
    "page_conv",
    "page_deconv",
    "critic_q",
];

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Checks `f`, projecting its output onto fixed random weights.
fn check<F>(params: &ParameterSet, inputs: Vec<Tensor>, rng: &mut ChaCha8Rng, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &pagewise::tensor::Bound, &[Var]) -> Result<Var>,
{
    // Probe the output shape once to draw the projection weights.
    let shape = {
        let mut g = Graph::new();
        let b = g.bind_frozen(params);
        let vs: Vec<Var> = inputs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&mut g, &b, &vs)?;
        g.shape(out).to_vec()
    };
    let weights = uniform(rng, shape);
    let cfg = GradCheckConfig::default();
    let report = check_gradients(params, &inputs, &cfg, rng, |g, b, vs| {
        let out = f(g, b, vs)?;
        random_projection(g, out, &weights)
    })?;
    Ok(report.max_rel_err)
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.gen_range(1..5), rng.gen_range(1..6), rng.gen_range(1..6))
}

/// Worst relative error of `op` over `instances` seeded random cases.
pub fn worst_error(op: &str, instances: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(i as u64));
        worst = worst.max(instance(op, &mut rng)?);
    }
    Ok(worst)
}

fn instance(op: &str, rng: &mut ChaCha8Rng) -> Result<f64> {
    let empty = ParameterSet::new();
    let (n, k, m) = dims(rng);
    match op {
        "matmul" => {
            let (a, b) = (uniform(rng, vec![n, k]), uniform(rng, vec![k, m]));
            check(&empty, vec![a, b], rng, |g, _, v| g.matmul(v[0], v[1]))
        }
        "add_broadcast" => {
            let (a, b) = (uniform(rng, vec![n, m]), uniform(rng, vec![m]));
            check(&empty, vec![a, b], rng, |g, _, v| g.add(v[0], v[1]))
        }
        "sub" => {
            let (a, b) = (uniform(rng, vec![n, m]), uniform(rng, vec![n, m]));
            check(&empty, vec![a, b], rng, |g, _, v| g.sub(v[0], v[1]))
        }
        "mul_broadcast" => {
            let (a, b) = (uniform(rng, vec![n, m]), uniform(rng, vec![n, 1]));
            check(&empty, vec![a, b], rng, |g, _, v| g.mul(v[0], v[1]))
        }
        "scale" => {
            let f = rng.gen_range(-3.0..3.0);
            check(&empty, vec![uniform(rng, vec![n, m])], rng, move |g, _, v| Ok(g.scale(v[0], f)))
        }
        "tanh" => check(&empty, vec![uniform(rng, vec![n, m])], rng, |g, _, v| Ok(g.tanh(v[0]))),
        "sigmoid" => check(&empty, vec![uniform(rng, vec![n, m])], rng, |g, _, v| Ok(g.sigmoid(v[0]))),
        "softmax" => check(&empty, vec![uniform(rng, vec![n, m + 1])], rng, |g, _, v| g.softmax(v[0])),
        "concat" => {
            let axis = rng.gen_range(0..2);
            let (a, b) = if axis == 0 {
                (uniform(rng, vec![n, m]), uniform(rng, vec![k, m]))
            } else {
                (uniform(rng, vec![n, m]), uniform(rng, vec![n, k]))
            };
            check(&empty, vec![a, b], rng, move |g, _, v| g.concat(&[v[0], v[1]], axis))
        }
        "slice" => {
            let start = rng.gen_range(0..m);
            let len = rng.gen_range(1..=m - start);
            check(&empty, vec![uniform(rng, vec![n, m])], rng, move |g, _, v| g.slice(v[0], 1, start, len))
        }
        "gather" => {
            let rows: Vec<usize> = (0..k + 2).map(|_| rng.gen_range(0..n)).collect();
            check(&empty, vec![uniform(rng, vec![n, m])], rng, move |g, _, v| g.gather(v[0], &rows))
        }
        "reshape" => check(&empty, vec![uniform(rng, vec![n, m])], rng, move |g, _, v| {
            let r = g.reshape(v[0], vec![m, n])?;
            Ok(g.tanh(r))
        }),
        "sum" => check(&empty, vec![uniform(rng, vec![n, m])], rng, |g, _, v| Ok(g.sum(v[0]))),
        "frobenius_sq" => check(&empty, vec![uniform(rng, vec![n, m])], rng, |g, _, v| Ok(g.frobenius_sq(v[0]))),
        "conv2d" | "deconv2d" => {
            let spec = ConvSpec { stride: rng.gen_range(1..3), pad: rng.gen_range(0..2) };
            let (kh, kw) = (rng.gen_range(1..4), rng.gen_range(1..3));
            let (cin, cout) = (rng.gen_range(1..4), rng.gen_range(1..4));
            let (h, w) = (rng.gen_range(kh..kh + 4), rng.gen_range(kw..kw + 3));
            let x = uniform(rng, vec![n, h, w, cin]);
            if op == "conv2d" {
                let kernel = uniform(rng, vec![kh, kw, cin, cout]);
                check(&empty, vec![x, kernel], rng, move |g, _, v| g.conv2d(v[0], v[1], spec))
            } else {
                let kernel = uniform(rng, vec![kh, kw, cout, cin]);
                let spec = ConvSpec { pad: 0, ..spec };
                check(&empty, vec![x, kernel], rng, move |g, _, v| g.deconv2d(v[0], v[1], spec))
            }
        }
        "dense" => {
            let mut set = ParameterSet::new();
            let layer = Dense::new(&mut set, "d", k, m, rng)?;
            randomize(&mut set, rng);
            check(&set, vec![uniform(rng, vec![n, k])], rng, move |g, p, v| layer.forward(g, p, v[0]))
        }
        "embedding" => {
            let mut set = ParameterSet::new();
            let layer = Embedding::new(&mut set, "e", k, m, rng)?;
            randomize(&mut set, rng);
            check(&set, vec![uniform(rng, vec![n, k])], rng, move |g, p, v| layer.forward(g, p, v[0]))
        }
        "embedding_lookup" => {
            let mut set = ParameterSet::new();
            let layer = Embedding::new(&mut set, "e", k + 1, m, rng)?;
            randomize(&mut set, rng);
            let hot: Vec<usize> = (0..n).map(|_| rng.gen_range(0..=k)).collect();
            check(&set, vec![], rng, move |g, p, _| layer.lookup(g, p, &hot))
        }
        "gru_step" => {
            let mut set = ParameterSet::new();
            let gru = Gru::new(&mut set, "gru", k, m, rng)?;
            let (x, h) = (uniform(rng, vec![n, k]), uniform(rng, vec![n, m]));
            check(&set, vec![x, h], rng, move |g, p, v| gru.step(g, p, v[0], v[1]))
        }
        "attention_pool" => {
            let mut set = ParameterSet::new();
            let att = Attention::new(&mut set, "att", m, rng)?;
            randomize(&mut set, rng);
            let steps = k + 1;
            let hs: Vec<Tensor> = (0..steps).map(|_| uniform(rng, vec![n, m])).collect();
            // Every row keeps its first step; later steps are masked at random.
            let mask: Vec<f64> = (0..n * steps).map(|i| if i % steps == 0 || rng.gen_bool(0.7) { 1.0 } else { 0.0 }).collect();
            let mask = Tensor::new(vec![n, steps], mask)?;
            check(&set, hs, rng, move |g, p, v| att.pool(g, p, v, Some(&mask)))
        }
        "page_conv" | "page_deconv" => {
            let (rows, cols) = (rng.gen_range(2..5), rng.gen_range(1..3));
            let cfg = PageConvConfig {
                rows,
                cols,
                in_channels: rng.gen_range(1..4),
                layers: vec![
                    ConvLayerSpec { kh: 2, kw: cols.min(2), channels: rng.gen_range(1..4) },
                    ConvLayerSpec { kh: 1, kw: 1, channels: rng.gen_range(1..4) },
                ],
                out_dim: rng.gen_range(1..5),
            };
            let mut set = ParameterSet::new();
            if op == "page_conv" {
                let layer = PageConv::new(&mut set, "pc", cfg.clone(), rng)?;
                randomize(&mut set, rng);
                let x = uniform(rng, vec![n, rows, cols, cfg.in_channels]);
                check(&set, vec![x], rng, move |g, p, v| layer.forward(g, p, v[0]))
            } else {
                let in_dim = rng.gen_range(1..5);
                let layer = PageDeconv::new(&mut set, "pd", &cfg, in_dim, rng.gen_range(1..4), rng)?;
                randomize(&mut set, rng);
                check(&set, vec![uniform(rng, vec![n, in_dim])], rng, move |g, p, v| layer.forward(g, p, v[0]))
            }
        }
        "critic_q" => {
            let model = ModelConfig {
                item_dim: rng.gen_range(2..5),
                hidden: rng.gen_range(2..6),
                action_vec: rng.gen_range(2..6),
                critic_hidden: rng.gen_range(2..8),
                ..ModelConfig::default()
            };
            let mut set = ParameterSet::new();
            let critic = Critic::new(&model, &mut set, rng)?;
            randomize(&mut set, rng);
            let s = uniform(rng, vec![n, model.hidden]);
            let grid = uniform(rng, vec![n, model.rows, model.cols, model.item_dim]);
            check(&set, vec![s, grid], rng, move |g, p, v| critic.q_of_grid(g, p, v[0], v[1]))
        }
        other => panic!("unknown op {other}"),
    }
}

/// Replace every value (including zero-initialised biases) with U(−0.5, 0.5)
/// so that bias gradients are exercised away from the initial point.
fn randomize(set: &mut ParameterSet, rng: &mut ChaCha8Rng) {
    let names: Vec<String> = set.names().map(str::to_string).collect();
    for name in names {
        for v in set.get_mut(&name).unwrap().data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
}
