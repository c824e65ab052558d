//! Finite-difference checks for every tape op and for the fusion composite.

use modfuse_core::autodiff::{
    grad_check_deep, grad_check_with, Floor, GradCheckOptions, GradCheckReport,
};
use modfuse_core::fusion::{FusionConfig, FusionHead};
use modfuse_core::nn::ParamRegistry;
use modfuse_core::{Result, Tape, Tensor, Var, NUM_CLASSES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const OP_TOLERANCE: f64 = 1e-3;
pub const COMPOSITE_TOLERANCE: f64 = 1e-2;

pub const OPS: [&str; 19] = [
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "gelu",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "slice",
    "concat",
    "softmax",
    "conv1d_depthwise",
    "expand_rows",
    "normalize_rows",
    "cross_entropy",
    "gather",
];

fn normal(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::normal(shape, 0.0, 1.0, rng).unwrap()
}

/// `sum(y * w)` with a fixed random `w`, so every output coordinate matters.
fn project(tape: &Tape, y: Var, w: &Tensor) -> Result<Var> {
    let w = tape.constant(w.reshape(tape.shape(y)?)?);
    tape.sum(tape.mul(y, w)?)
}

type Case = (Vec<Tensor>, Box<dyn Fn(&Tape, &[Var]) -> Result<Var>>);

fn case(op: &str, rng: &mut ChaCha8Rng) -> Case {
    let n = rng.random_range(2..5usize);
    let d = rng.random_range(2..6usize);
    let k = rng.random_range(2..5usize);
    let x = normal(vec![n, d], rng);
    let w = |shape: Vec<usize>, rng: &mut ChaCha8Rng| normal(shape, rng);
    match op {
        "matmul" => {
            let b = normal(vec![d, k], rng);
            let wo = w(vec![n, k], rng);
            (
                vec![x, b],
                Box::new(move |t, v| project(t, t.matmul(v[0], v[1])?, &wo)),
            )
        }
        "add" | "sub" | "mul" => {
            let b = normal(vec![n, d], rng);
            let wo = w(vec![n, d], rng);
            let op = op.to_string();
            (
                vec![x, b],
                Box::new(move |t, v| {
                    let y = match op.as_str() {
                        "add" => t.add(v[0], v[1])?,
                        "sub" => t.sub(v[0], v[1])?,
                        _ => t.mul(v[0], v[1])?,
                    };
                    project(t, y, &wo)
                }),
            )
        }
        "scale" => {
            let c = rng.random_range(-2.0..2.0f32);
            let wo = w(vec![n, d], rng);
            (
                vec![x],
                Box::new(move |t, v| project(t, t.scale(v[0], c)?, &wo)),
            )
        }
        "add_scalar" => {
            let c = rng.random_range(-2.0..2.0f32);
            let wo = w(vec![n, d], rng);
            (
                vec![x],
                Box::new(move |t, v| project(t, t.add_scalar(v[0], c)?, &wo)),
            )
        }
        "gelu" => {
            let wo = w(vec![n, d], rng);
            (
                vec![x],
                Box::new(move |t, v| project(t, t.gelu(v[0])?, &wo)),
            )
        }
        "sum" => {
            let wo = w(vec![n, d], rng);
            (
                vec![x],
                Box::new(move |t, v| {
                    let s = t.sum(v[0])?;
                    let c = t.constant(wo.clone());
                    let y = t.mul(v[0], c)?;
                    t.mul(t.sum(y)?, s)
                }),
            )
        }
        "mean" => {
            let wo = w(vec![n, d], rng);
            (
                vec![x],
                Box::new(move |t, v| {
                    let m = t.mean(v[0])?;
                    let c = t.constant(wo.clone());
                    t.mul(t.sum(t.mul(v[0], c)?)?, m)
                }),
            )
        }
        "reshape" => {
            let wo = w(vec![d, n], rng);
            (
                vec![x],
                Box::new(move |t, v| project(t, t.reshape(v[0], vec![d, n])?, &wo)),
            )
        }
        "transpose" => {
            let wo = w(vec![d, n], rng);
            (
                vec![x],
                Box::new(move |t, v| project(t, t.transpose(v[0])?, &wo)),
            )
        }
        "slice" => {
            let start = rng.random_range(0..d - 1);
            let end = rng.random_range(start + 1..=d);
            let wo = w(vec![n, end - start], rng);
            (
                vec![x],
                Box::new(move |t, v| project(t, t.slice(v[0], 1, start, end)?, &wo)),
            )
        }
        "concat" => {
            let b = normal(vec![k, d], rng);
            let wo = w(vec![n + k, d], rng);
            (
                vec![x, b],
                Box::new(move |t, v| project(t, t.concat(&[v[0], v[1]], 0)?, &wo)),
            )
        }
        "softmax" => {
            let axis = rng.random_range(0..2usize);
            let wo = w(vec![n, d], rng);
            (
                vec![x],
                Box::new(move |t, v| project(t, t.softmax(v[0], axis)?, &wo)),
            )
        }
        "conv1d_depthwise" => {
            let len = rng.random_range(6..12usize);
            let stride = rng.random_range(1..3usize);
            let sig = normal(vec![n, len], rng);
            let ker = normal(vec![n, k], rng);
            let out = (len - k) / stride + 1;
            let wo = w(vec![n, out], rng);
            (
                vec![sig, ker],
                Box::new(move |t, v| project(t, t.conv1d_depthwise(v[0], v[1], stride)?, &wo)),
            )
        }
        "expand_rows" => {
            let row = normal(vec![d], rng);
            let wo = w(vec![n, d], rng);
            (
                vec![row],
                Box::new(move |t, v| project(t, t.expand_rows(v[0], n)?, &wo)),
            )
        }
        "normalize_rows" => {
            // Three-wide rows of N(0, 1) draws often have near-zero variance,
            // where the map is nearly singular and no finite step is accurate.
            let d = d + 2;
            let x = normal(vec![n, d], rng);
            let wo = w(vec![n, d], rng);
            (
                vec![x],
                Box::new(move |t, v| project(t, t.normalize_rows(v[0], 1e-5)?, &wo)),
            )
        }
        "cross_entropy" => {
            let logits = normal(vec![n, NUM_CLASSES], rng);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..NUM_CLASSES)).collect();
            (
                vec![logits],
                Box::new(move |t, v| t.cross_entropy(v[0], &labels)),
            )
        }
        "gather" => {
            let m = rng.random_range(3..9usize);
            let index: Vec<usize> = (0..m).map(|_| rng.random_range(0..n * d)).collect();
            let wo = w(vec![m], rng);
            (
                vec![x],
                Box::new(move |t, v| project(t, t.gather(v[0], vec![m], index.clone())?, &wo)),
            )
        }
        other => panic!("no gradient case for op {other}"),
    }
}

/// Finite differences of single ops stay within about 16 units of f32
/// rounding noise of the true gradient, so a coordinate whose gradient is
/// below `16 / OP_TOLERANCE` units is judged on that absolute noise level
/// rather than relative to its own near-zero size.
pub const OP_ROUNDING_ULPS: f64 = 16.0 / OP_TOLERANCE;

/// Finite-difference scheme for an op. Ops at most quadratic in each input
/// coordinate get an exact central difference at a unit step; smooth
/// nonlinear ops get a Richardson-extrapolated difference at a small one.
pub fn options(op: &str) -> GradCheckOptions {
    let (eps, richardson) = match op {
        "gelu" | "softmax" | "cross_entropy" => (0.05, true),
        "normalize_rows" => (0.01, true),
        _ => (1.0, false),
    };
    GradCheckOptions {
        eps,
        richardson,
        floor: Floor::Rounding {
            ulps: OP_ROUNDING_ULPS,
        },
    }
}

/// Worst relative error of each op over `instances` random draws.
pub fn op_suite(instances: usize, seed: u64) -> Vec<GradCheckReport> {
    OPS.iter()
        .enumerate()
        .map(|(i, op)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut worst: Option<GradCheckReport> = None;
            for _ in 0..instances {
                let (inputs, f) = case(op, &mut rng);
                let r =
                    grad_check_with(|t: &Tape, v: &[Var]| f(t, v), &inputs, options(op)).unwrap();
                if worst
                    .as_ref()
                    .is_none_or(|w| r.max_rel_error > w.max_rel_error)
                {
                    worst = Some(r);
                }
            }
            worst.expect("at least one instance").named(*op)
        })
        .collect()
}

/// Modality features through projection, stacking, attention fusion and the
/// classifier into cross-entropy; checked against every fusion parameter and
/// the three feature vectors.
pub fn composite_suite(instances: usize, seed: u64) -> GradCheckReport {
    let mut worst: Option<GradCheckReport> = None;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..instances {
        let d_model = rng.random_range(4..8usize);
        let head = FusionHead::new(FusionConfig {
            d_model,
            d_fuse: 8,
            heads: 2,
            hidden: 10,
            modality_embeddings: i % 2 == 0,
        })
        .unwrap();
        let mut reg = ParamRegistry::new();
        head.init(&mut reg, &mut rng).unwrap();
        let n = reg.len();
        let mut inputs = reg.values();
        for _ in 0..3 {
            inputs.push(normal(vec![d_model], &mut rng));
        }
        let label = rng.random_range(0..NUM_CLASSES);
        let r = grad_check_deep(
            |t: &Tape, v: &[Var]| {
                let p = reg.bind_vars(&v[..n])?;
                let logits = head.logits(t, &p, [v[n], v[n + 1], v[n + 2]])?;
                t.cross_entropy(t.reshape(logits, vec![1, NUM_CLASSES])?, &[label])
            },
            &inputs,
            1e-2,
        )
        .unwrap();
        if worst
            .as_ref()
            .is_none_or(|w| r.max_rel_error > w.max_rel_error)
        {
            worst = Some(r);
        }
    }
    worst
        .expect("at least one instance")
        .named("stack-fuse-classify")
}
