use std::collections::BTreeMap;
use std::ops::ControlFlow;

use tunet_core::data::{class_weights, synth_dataset, AugmentConfig, SynthConfig, LABEL_COUNT_PROBS};
use tunet_core::model::{ModelParams, TUNet, TUNetConfig};
use tunet_core::rng::{standard_normal, stream_rng};
use tunet_core::train::{
    adam_step, fit, lr_find, train, AdamConfig, AdamState, BatchContext, Evaluation, LrFindConfig,
    LrSchedule, NoClock, TrainConfig, TrainTask,
};
use tunet_core::{Graph, Result, Tensor};

fn tiny() -> TUNet {
    TUNet::new(TUNetConfig {
        side: 16,
        classes: 3,
        levels: 2,
        base_width: 4,
        dropout: 0.0,
    })
    .unwrap()
}

fn batch(n: usize, side: usize, seed: u64) -> Tensor<f32> {
    let mut rng = stream_rng(seed, 0);
    Tensor::from_fn(&[n, 4, side, side], |_| (0.5 + 0.2 * standard_normal(&mut rng)) as f32)
}

#[test]
fn shapes_and_ranges_across_configs() {
    for (side, classes, levels, width) in [(16, 2, 2, 4), (32, 4, 3, 8), (48, 3, 4, 4), (64, 5, 2, 4)] {
        let model = TUNet::new(TUNetConfig {
            side,
            classes,
            levels,
            base_width: width,
            dropout: 0.25,
        })
        .unwrap();
        let params = model.init::<f32>(1);
        let out = model.predict(&params, &batch(2, side, 2)).unwrap();
        assert_eq!(out.seg_probs.shape(), &[2, classes, side, side]);
        assert_eq!(out.cls_probs.shape(), &[2, classes]);
        assert!(out.seg_probs.data().iter().chain(out.cls_probs.data()).all(|&p| p > 0.0 && p < 1.0));
    }
}

#[test]
fn batch_permutation_permutes_outputs() {
    let model = tiny();
    let params = model.init::<f64>(4);
    let x = batch(3, 16, 5).cast::<f64>();
    let order = [2, 0, 1];
    let permuted = Tensor::stack(&order.map(|i| x.outer(i).unwrap())).unwrap();
    let a = model.predict(&params, &x).unwrap();
    let b = model.predict(&params, &permuted).unwrap();
    for (k, &i) in order.iter().enumerate() {
        assert_eq!(b.cls_probs.outer(k).unwrap(), a.cls_probs.outer(i).unwrap());
        assert_eq!(b.seg_probs.outer(k).unwrap(), a.seg_probs.outer(i).unwrap());
    }
}

#[test]
fn zero_dropout_training_pass_equals_eval() {
    let model = tiny();
    let params = model.init::<f32>(6);
    let x = batch(2, 16, 7);
    let eval = model.predict(&params, &x).unwrap();
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let input = g.constant(x);
    let out = model.forward(&mut g, &bound, input, true, &mut stream_rng(1, 2)).unwrap();
    assert_eq!(g.value(out.cls_probs), &eval.cls_probs);
    assert_eq!(g.value(out.seg_probs), &eval.seg_probs);
}

#[test]
fn eval_is_deterministic_with_dropout() {
    let model = TUNet::new(TUNetConfig {
        dropout: 0.5,
        ..*tiny().config()
    })
    .unwrap();
    let params = model.init::<f32>(6);
    let x = batch(2, 16, 7);
    assert_eq!(model.predict(&params, &x).unwrap(), model.predict(&params, &x).unwrap());
}

#[test]
fn adam_descends_quadratic_bowl() {
    let mut p = ModelParams::new();
    p.insert("x", Tensor::scalar(1.0f64)).unwrap();
    let mut state = AdamState::new(&p);
    for _ in 0..200 {
        let x = p.tensors()[0].item();
        adam_step(&mut p, &[Tensor::scalar(2.0 * x)], &mut state, 0.1, &AdamConfig::default()).unwrap();
    }
    let x = p.tensors()[0].item();
    assert!(x.abs() < 1e-2, "{x}");
    assert_eq!(state.step, 200);
}

/// Least-squares fit of `y = 2x - 1 + noise` on 64 points.
struct Regression {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Regression {
    fn new() -> Self {
        let mut rng = stream_rng(3, 3);
        let xs: Vec<f64> = (0..64).map(|_| standard_normal(&mut rng)).collect();
        let ys = xs.iter().map(|x| 2.0 * x - 1.0 + 0.1 * standard_normal(&mut rng)).collect();
        Regression { xs, ys }
    }

    fn init() -> ModelParams<f64> {
        let mut p = ModelParams::new();
        p.insert("w", Tensor::scalar(0.0)).unwrap();
        p.insert("b", Tensor::scalar(0.0)).unwrap();
        p
    }
}

impl TrainTask<f64> for Regression {
    fn train_len(&self) -> usize {
        self.xs.len()
    }

    fn batch_grads(&mut self, p: &ModelParams<f64>, batch: &[usize], _: BatchContext) -> Result<(f64, Vec<Tensor<f64>>)> {
        let (w, b) = (p.tensors()[0].item(), p.tensors()[1].item());
        let k = batch.len() as f64;
        let (mut loss, mut gw, mut gb) = (0.0, 0.0, 0.0);
        for &i in batch {
            let r = w * self.xs[i] + b - self.ys[i];
            loss += r * r / k;
            gw += 2.0 * r * self.xs[i] / k;
            gb += 2.0 * r / k;
        }
        Ok((loss, vec![Tensor::scalar(gw), Tensor::scalar(gb)]))
    }

    fn evaluate(&mut self, p: &ModelParams<f64>) -> Result<Evaluation> {
        let all: Vec<usize> = (0..self.xs.len()).collect();
        let (loss, _) = self.batch_grads(p, &all, BatchContext { epoch: 0, batch: 0 })?;
        Ok(Evaluation { loss, f1_macro: 0.0 })
    }
}

#[test]
fn lr_finder_suggestion_trains_convex_regression() {
    let cfg = LrFindConfig {
        steps: 1000,
        lr_max: 100.0,
        batch_size: 64,
        ..LrFindConfig::default()
    };
    let res = lr_find(&mut Regression::new(), Regression::init(), &cfg).unwrap();
    assert!(res.curve.len() <= cfg.steps);
    let div = res.divergence_lr.expect("range reaches divergence");
    assert!(res.suggested < div);

    // 50 full-batch Adam steps at the suggested rate from a fresh start; the
    // smoothed loss ends no higher than it started.
    let mut task = Regression::new();
    let mut p = Regression::init();
    let mut state = AdamState::new(&p);
    let all: Vec<usize> = (0..64).collect();
    let (mut avg, mut first, mut last) = (0.0, None, 0.0);
    for i in 0..50 {
        let (loss, grads) = task.batch_grads(&p, &all, BatchContext { epoch: 0, batch: i }).unwrap();
        avg = cfg.smoothing * avg + (1.0 - cfg.smoothing) * loss;
        let smoothed = avg / (1.0 - cfg.smoothing.powi(i as i32 + 1));
        first.get_or_insert(smoothed);
        last = smoothed;
        adam_step(&mut p, &grads, &mut state, res.suggested, &cfg.adam).unwrap();
    }
    assert!(last <= first.unwrap(), "{last} > {first:?}");
}

#[test]
fn fixed_seed_training_is_bit_identical() {
    let model = tiny();
    let ds = synth_dataset(&SynthConfig {
        n: 12,
        classes: 3,
        side: 16,
        ..SynthConfig::default()
    })
    .unwrap();
    let (tr, va) = (ds.subset(&(0..9).collect::<Vec<_>>()), ds.subset(&[9, 10, 11]));
    let cfg = TrainConfig {
        batch_size: 4,
        max_epochs: 3,
        schedule: LrSchedule::from_initial(0.003),
        augment: AugmentConfig::default(),
        ..TrainConfig::default()
    };
    let run = || train::<f32, _, _>(&model, &tr, &va, &cfg, &mut NoClock, |_, _| ControlFlow::Continue(())).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.best, b.best);
    assert_eq!(a.last, b.last);
    assert_eq!(a.log, b.log);
    let other = train::<f32, _, _>(
        &model,
        &tr,
        &va,
        &TrainConfig { seed: 1, ..cfg.clone() },
        &mut NoClock,
        |_, _| ControlFlow::Continue(()),
    )
    .unwrap();
    assert_ne!(a.last, other.last);
}

#[test]
fn early_stop_on_toy_task_keeps_epoch_one() {
    struct Rising(usize);
    impl TrainTask<f64> for Rising {
        fn train_len(&self) -> usize {
            2
        }
        fn batch_grads(&mut self, _: &ModelParams<f64>, _: &[usize], _: BatchContext) -> Result<(f64, Vec<Tensor<f64>>)> {
            Ok((1.0, vec![Tensor::scalar(1.0)]))
        }
        fn evaluate(&mut self, _: &ModelParams<f64>) -> Result<Evaluation> {
            self.0 += 1;
            Ok(Evaluation { loss: self.0 as f64, f1_macro: 0.0 })
        }
    }
    let mut p = ModelParams::new();
    p.insert("x", Tensor::scalar(0.0)).unwrap();
    let cfg = TrainConfig {
        patience: 1,
        ..TrainConfig::default()
    };
    let mut first = None;
    let out = fit(&mut Rising(0), p, &cfg, &mut NoClock, |r, p| {
        if r.epoch == 1 {
            first = Some(p.clone());
        }
        ControlFlow::Continue(())
    })
    .unwrap();
    assert_eq!(out.log.records.len(), 2);
    assert_eq!(out.best_epoch, 1);
    assert_eq!(Some(out.best), first);
}

/// Exact probability of each label set under sequential weighted draws
/// without replacement.
fn label_set_probs(weights: &[f64]) -> BTreeMap<Vec<usize>, f64> {
    fn walk(weights: &[f64], picked: &mut Vec<usize>, p: f64, k: usize, out: &mut BTreeMap<Vec<usize>, f64>) {
        if picked.len() == k {
            let mut set = picked.clone();
            set.sort_unstable();
            *out.entry(set).or_default() += p;
            return;
        }
        let rest: f64 = (0..weights.len()).filter(|c| !picked.contains(c)).map(|c| weights[c]).sum();
        for c in 0..weights.len() {
            if !picked.contains(&c) {
                picked.push(c);
                walk(weights, picked, p * weights[c] / rest, k, out);
                picked.pop();
            }
        }
    }
    let mut out = BTreeMap::new();
    for (i, &pk) in LABEL_COUNT_PROBS.iter().enumerate() {
        walk(weights, &mut Vec::new(), pk, i + 1, &mut out);
    }
    out
}

#[test]
fn synthetic_label_sets_follow_the_sampling_law() {
    let (classes, imbalance, n) = (4, 1.5, 3000);
    let ds = synth_dataset(&SynthConfig {
        n,
        classes,
        side: 16,
        seed: 21,
        imbalance,
    })
    .unwrap();
    let expected = label_set_probs(&class_weights(classes, imbalance));
    assert!((expected.values().sum::<f64>() - 1.0).abs() < 1e-12);
    let mut observed: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for s in &ds.samples {
        *observed.entry(s.labels.as_slice().to_vec()).or_default() += 1;
    }
    assert!(observed.keys().all(|k| expected.contains_key(k)));
    let chi2: f64 = expected
        .iter()
        .map(|(set, &p)| {
            let e = p * n as f64;
            let o = *observed.get(set).unwrap_or(&0) as f64;
            (o - e).powi(2) / e
        })
        .sum();
    // 14 cells, 13 degrees of freedom; 34.53 is the 0.999 quantile.
    assert!(chi2 < 34.53, "chi-square {chi2}");
}
