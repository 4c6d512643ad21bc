//! Finite-difference checks of every differentiable operator, in f64.

use rand::Rng;
use tunet_core::autodiff::{grad_check, GradCheck};
use tunet_core::model::{TUNet, TUNetConfig};
use tunet_core::rng::{standard_normal, stream_rng, StreamRng};
use tunet_core::{losses, Graph, Result, Tensor, Var};

const TOL: f64 = 1e-6;

fn normal(rng: &mut StreamRng, shape: &[usize]) -> Tensor<f64> {
    let shape = if shape.is_empty() { &[1][..] } else { shape };
    Tensor::from_fn(shape, |_| standard_normal(rng))
}

/// Values at least 0.1 away from zero, so ReLU kinks are never crossed.
fn away_from_zero(rng: &mut StreamRng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = 0.1 + rng.random::<f64>();
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Distinct values spaced 0.1 apart, so max-pool choices never flip.
fn distinct(rng: &mut StreamRng, shape: &[usize]) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| 0.1 * i as f64 - 0.05 * n as f64).collect();
    v.shuffle(rng);
    Tensor::new(shape, v).unwrap()
}

fn probs(rng: &mut StreamRng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| 0.05 + 0.9 * rng.random::<f64>())
}

/// Reduce a tensor-valued function to a scalar with fixed random weights.
fn check<F>(name: &str, seed: u64, out_shape: &[usize], leaves: &[Tensor<f64>], f: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let weights = normal(&mut stream_rng(seed, 99), out_shape);
    let report = grad_check(
        |g, v| {
            let y = f(g, v)?;
            g.weighted_sum(y, &weights)
        },
        leaves,
        GradCheck {
            probes: 40,
            seed,
            ..GradCheck::default()
        },
    )
    .unwrap();
    let err = report.max_rel_error();
    assert!(err <= TOL, "{name}: max relative error {err:e}");
}

#[test]
fn elementwise_ops() {
    let mut rng = stream_rng(1, 0);
    let a = normal(&mut rng, &[2, 3]);
    let b = normal(&mut rng, &[2, 3]);
    check("add", 1, &[2, 3], &[a.clone(), b.clone()], |g, v| g.add(v[0], v[1]));
    check("mul", 2, &[2, 3], &[a.clone(), b.clone()], |g, v| g.mul(v[0], v[1]));
    check("scale", 3, &[2, 3], &[a.clone()], |g, v| Ok(g.scale(v[0], -1.7)));
    check("sigmoid", 4, &[2, 3], &[a.clone()], |g, v| Ok(g.sigmoid(v[0])));
    let r = away_from_zero(&mut rng, &[3, 4]);
    check("relu", 5, &[3, 4], &[r], |g, v| Ok(g.relu(v[0])));
    check("sum", 6, &[], &[a.clone()], |g, v| Ok(g.sum(v[0])));
    check("mean", 7, &[], &[b], |g, v| Ok(g.mean(v[0])));
}

#[test]
fn convolution() {
    let mut rng = stream_rng(2, 0);
    let x = normal(&mut rng, &[2, 3, 5, 6]);
    let k = normal(&mut rng, &[4, 3, 3, 3]);
    let b = normal(&mut rng, &[4]);
    check("conv s1 p1", 10, &[2, 4, 5, 6], &[x.clone(), k.clone(), b.clone()], |g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), (1, 1), (1, 1))
    });
    check("conv s2 p1", 11, &[2, 4, 3, 3], &[x.clone(), k.clone(), b], |g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), (2, 2), (1, 1))
    });
    check("conv no bias p0", 12, &[2, 4, 3, 4], &[x.clone(), k], |g, v| {
        g.conv2d(v[0], v[1], None, (1, 1), (0, 0))
    });
    let k1 = normal(&mut rng, &[2, 3, 1, 1]);
    check("conv 1x1", 13, &[2, 2, 5, 6], &[x, k1], |g, v| g.conv2d(v[0], v[1], None, (1, 1), (0, 0)));
}

#[test]
fn transposed_convolution() {
    let mut rng = stream_rng(3, 0);
    let x = normal(&mut rng, &[2, 3, 3, 4]);
    let k = normal(&mut rng, &[3, 2, 2, 2]);
    check("conv transpose", 20, &[2, 2, 6, 8], &[x, k], |g, v| g.conv2d_transpose(v[0], v[1], (2, 2)));
}

#[test]
fn pooling_and_channels() {
    let mut rng = stream_rng(4, 0);
    let x = distinct(&mut rng, &[2, 2, 4, 6]);
    check("maxpool", 30, &[2, 2, 2, 3], &[x], |g, v| g.maxpool2x2(v[0]));
    let a = normal(&mut rng, &[2, 2, 3, 3]);
    let b = normal(&mut rng, &[2, 3, 3, 3]);
    check("concat", 31, &[2, 5, 3, 3], &[a.clone(), b.clone()], |g, v| g.concat_channels(v[0], v[1]));
    check("slice", 32, &[2, 2, 3, 3], &[b.clone()], |g, v| g.slice_channels(v[0], 1, 2));
    check("gap", 33, &[2, 3], &[b], |g, v| g.global_avg_pool(v[0]));
}

#[test]
fn dense_and_dropout() {
    let mut rng = stream_rng(5, 0);
    let x = normal(&mut rng, &[3, 5]);
    let w = normal(&mut rng, &[5, 2]);
    let b = normal(&mut rng, &[2]);
    check("dense", 40, &[3, 2], &[x.clone(), w, b], |g, v| g.dense(v[0], v[1], v[2]));
    check("dropout", 41, &[3, 5], &[x], |g, v| {
        // Same stream on every evaluation, so the mask is fixed.
        let mut r = stream_rng(7, 7);
        g.dropout(v[0], 0.4, true, &mut r)
    });
}

#[test]
fn fused_losses() {
    let mut rng = stream_rng(6, 0);
    let p = probs(&mut rng, &[4, 3]);
    let y = Tensor::from_fn(&[4, 3], |i| (i % 3 == 0) as u8 as f64);
    for gamma in [0.0, 1.0, 2.0, 3.5] {
        let y = y.clone();
        check("focal", 50, &[], &[p.clone()], move |g, v| losses::focal_loss(g, v[0], &y, gamma));
    }
    let r = probs(&mut rng, &[2, 2, 4, 4]);
    let t = Tensor::from_fn(&[2, 2, 4, 4], |i| ((i * 7) % 5 < 2) as u8 as f64);
    for eps in [0.0, 1e-3, 1.0] {
        let t = t.clone();
        check("dice", 51, &[], &[r.clone()], move |g, v| losses::dice_loss(g, v[0], &t, eps));
    }
}

#[test]
fn tunet_joint_loss_end_to_end() {
    let model = TUNet::new(TUNetConfig {
        side: 16,
        classes: 2,
        levels: 2,
        base_width: 4,
        dropout: 0.0,
    })
    .unwrap();
    let params = model.init::<f64>(11);
    let mut rng = stream_rng(8, 0);
    let x = Tensor::from_fn(&[2, 4, 16, 16], |_| rng.random::<f64>());
    let labels = Tensor::new(&[2, 2], vec![1.0, 0.0, 1.0, 1.0]).unwrap();
    let masks = Tensor::from_fn(&[2, 2, 16, 16], |i| ((i / 16 + i) % 3 == 0) as u8 as f64);
    let mut leaves = params.tensors().to_vec();
    leaves.push(x);
    let n = params.len();
    let report = grad_check(
        |g, v| {
            let bound = params.bind_vars(g, &v[..n])?;
            let mut unused = stream_rng(0, 0);
            let out = model.forward(g, &bound, v[n], true, &mut unused)?;
            let seg = losses::dice_loss(g, out.seg_probs, &masks, 1.0)?;
            let cls = losses::focal_loss(g, out.cls_probs, &labels, 2.0)?;
            losses::joint_loss(g, seg, cls, 0.4)
        },
        &leaves,
        GradCheck {
            probes: 30,
            seed: 3,
            avoid_branch_changes: true,
            ..GradCheck::default()
        },
    )
    .unwrap();
    assert_eq!(report.probes.len(), 30, "{} probes skipped", report.skipped);
    let worst = report
        .probes
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .unwrap();
    assert!(worst.rel_error <= 1e-5, "{worst:?}");
}
