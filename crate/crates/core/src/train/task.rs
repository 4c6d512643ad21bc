use alloc::vec::Vec;

use super::trainer::{BatchContext, Evaluation, TrainTask};
use crate::autodiff::{Graph, Tensor};
use crate::data::{augment, make_target_masks, AugmentConfig, Dataset, Sample};
use crate::error::{Error, Result};
use crate::losses::{dice, dice_loss, focal_loss, focal_value, joint_loss, LossConfig};
use crate::metrics::{f1_scores, LabelMatrix};
use crate::model::{ForwardOutput, ModelParams, TUNet};
use crate::postprocess::{predict_labels, ThresholdVector, DEFAULT_MASK_THRESHOLD};
use crate::rng::{mix, stream_rng};
use crate::scalar::Scalar;

/// Data-side settings of a TUNet training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskSettings {
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    pub green_threshold: f64,
    pub seed: u64,
    /// Batch size for evaluation passes.
    pub eval_batch: usize,
}

/// Stack images, multi-hot labels and target masks of `samples`.
fn batch_tensors<T: Scalar>(
    samples: &[&Sample],
    classes: usize,
    green_threshold: f64,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let images: Vec<Tensor<T>> = samples.iter().map(|s| s.image().cast()).collect();
    let masks = samples
        .iter()
        .map(|s| Ok(make_target_masks(s, classes, green_threshold)?.tensor().cast()))
        .collect::<Result<Vec<Tensor<T>>>>()?;
    let labels = LabelMatrix::from_label_sets(samples.iter().map(|s| s.labels.as_slice()), classes)?;
    Ok((Tensor::stack(&images)?, labels.to_tensor(), Tensor::stack(&masks)?))
}

/// Visit eval-mode outputs of `ds` in order, `batch` samples at a time.
/// The callback receives the index of the first sample in the chunk.
pub fn for_each_batch<T, F>(model: &TUNet, params: &ModelParams<T>, ds: &Dataset, batch: usize, mut f: F) -> Result<()>
where
    T: Scalar,
    F: FnMut(usize, &[Sample], &ForwardOutput<T>) -> Result<()>,
{
    if batch == 0 {
        return Err(Error::usage("batch size must be >= 1"));
    }
    model.check_params(params)?;
    for (k, chunk) in ds.samples.chunks(batch).enumerate() {
        let images: Vec<Tensor<T>> = chunk.iter().map(|s| s.image().cast()).collect();
        let out = model.predict(params, &Tensor::stack(&images)?)?;
        f(k * batch, chunk, &out)?;
    }
    Ok(())
}

/// Classification probabilities and soft-mask losses over a whole dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPredictions {
    /// `[N,C]`.
    pub cls_probs: Tensor<f64>,
    /// Focal loss over all samples.
    pub focal: f64,
    /// Mean smoothed dice of the soft masks against the generated targets.
    pub dice: f64,
}

impl DatasetPredictions {
    /// The joint loss with weight `alpha` on the segmentation term.
    pub fn loss(&self, alpha: f64) -> f64 {
        alpha * (1.0 - self.dice) + (1.0 - alpha) * self.focal
    }
}

/// Evaluate `ds` in eval mode.
pub fn predict_dataset<T: Scalar>(
    model: &TUNet,
    params: &ModelParams<T>,
    ds: &Dataset,
    batch: usize,
    loss: &LossConfig,
    green_threshold: f64,
) -> Result<DatasetPredictions> {
    if ds.is_empty() {
        return Err(Error::usage("cannot evaluate an empty dataset"));
    }
    let classes = model.config().classes;
    let mut probs = Vec::with_capacity(ds.len() * classes);
    let (mut focal, mut dice_sum) = (0.0, 0.0);
    for_each_batch(model, params, ds, batch, |_, chunk, out| {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (_, labels, masks) = batch_tensors::<T>(&refs, classes, green_threshold)?;
        let k = chunk.len() as f64;
        focal += focal_value(&out.cls_probs, &labels, loss.gamma)?.as_f64() * k;
        dice_sum += dice(&out.seg_probs, &masks, loss.dice_epsilon)?.as_f64() * k;
        probs.extend(out.cls_probs.data().iter().map(|p| p.as_f64()));
        Ok(())
    })?;
    let n = ds.len() as f64;
    Ok(DatasetPredictions {
        cls_probs: Tensor::new(&[ds.len(), classes], probs)?,
        focal: focal / n,
        dice: dice_sum / n,
    })
}

/// TUNet on a train/validation split, as seen by the training loop.
pub struct TUNetTask<'a, T> {
    model: &'a TUNet,
    train: &'a Dataset,
    val: &'a Dataset,
    val_truth: LabelMatrix,
    settings: TaskSettings,
    _scalar: core::marker::PhantomData<T>,
}

impl<'a, T: Scalar> TUNetTask<'a, T> {
    pub fn new(model: &'a TUNet, train: &'a Dataset, val: &'a Dataset, settings: TaskSettings) -> Result<Self> {
        settings.loss.validate()?;
        let cfg = model.config();
        for ds in [train, val] {
            if ds.classes != cfg.classes || ds.side != cfg.side {
                return Err(Error::usage(alloc::format!(
                    "dataset has {} classes at side {}, network expects {} at side {}",
                    ds.classes,
                    ds.side,
                    cfg.classes,
                    cfg.side
                )));
            }
        }
        let val_truth = LabelMatrix::from_label_sets(val.samples.iter().map(|s| s.labels.as_slice()), cfg.classes)?;
        Ok(TUNetTask {
            model,
            train,
            val,
            val_truth,
            settings,
            _scalar: core::marker::PhantomData,
        })
    }

    /// Training samples for a batch, augmented with a per-(epoch, sample) stream.
    fn batch_samples(&self, batch: &[usize], epoch: usize) -> Result<Vec<Sample>> {
        batch
            .iter()
            .map(|&i| {
                let s = self
                    .train
                    .samples
                    .get(i)
                    .ok_or_else(|| Error::usage(alloc::format!("sample index {i} out of range")))?;
                if self.settings.augment.is_enabled() {
                    let mut rng = stream_rng(self.settings.seed, mix(&[0x6175_676d, epoch as u64, i as u64]));
                    augment(s, &self.settings.augment, &mut rng)
                } else {
                    Ok(s.clone())
                }
            })
            .collect()
    }
}

impl<T: Scalar> TrainTask<T> for TUNetTask<'_, T> {
    fn train_len(&self) -> usize {
        self.train.len()
    }

    fn batch_grads(
        &mut self,
        params: &ModelParams<T>,
        batch: &[usize],
        ctx: BatchContext,
    ) -> Result<(f64, Vec<Tensor<T>>)> {
        let samples = self.batch_samples(batch, ctx.epoch)?;
        let refs: Vec<&Sample> = samples.iter().collect();
        let classes = self.model.config().classes;
        let (images, labels, masks) = batch_tensors::<T>(&refs, classes, self.settings.green_threshold)?;

        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let input = g.constant(images);
        let mut rng = stream_rng(
            self.settings.seed,
            mix(&[0x6472_6f70, ctx.epoch as u64, ctx.batch as u64]),
        );
        let out = self.model.forward(&mut g, &bound, input, true, &mut rng)?;
        let loss = &self.settings.loss;
        let seg = dice_loss(&mut g, out.seg_probs, &masks, loss.dice_epsilon)?;
        let cls = focal_loss(&mut g, out.cls_probs, &labels, loss.gamma)?;
        let total = joint_loss(&mut g, seg, cls, loss.alpha)?;
        g.backward(total)?;
        Ok((g.value(total).item().as_f64(), bound.grads(&g)))
    }

    fn evaluate(&mut self, params: &ModelParams<T>) -> Result<Evaluation> {
        let s = &self.settings;
        let pred = predict_dataset(self.model, params, self.val, s.eval_batch, &s.loss, s.green_threshold)?;
        let thresholds = ThresholdVector::uniform(self.model.config().classes, DEFAULT_MASK_THRESHOLD)?;
        let labels = predict_labels(&pred.cls_probs, &thresholds, false)?;
        Ok(Evaluation {
            loss: pred.loss(s.loss.alpha),
            f1_macro: f1_scores(&labels, &self.val_truth)?.macro_f1(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SynthConfig};
    use crate::model::TUNetConfig;

    fn setup() -> (TUNet, Dataset) {
        let model = TUNet::new(TUNetConfig {
            side: 16,
            classes: 2,
            levels: 2,
            base_width: 4,
            dropout: 0.0,
        })
        .unwrap();
        let ds = synth_dataset(&SynthConfig {
            n: 6,
            classes: 2,
            side: 16,
            ..SynthConfig::default()
        })
        .unwrap();
        (model, ds)
    }

    fn settings(alpha: f64) -> TaskSettings {
        TaskSettings {
            loss: LossConfig {
                alpha,
                ..LossConfig::default()
            },
            augment: AugmentConfig::disabled(),
            green_threshold: 0.5,
            seed: 1,
            eval_batch: 4,
        }
    }

    #[test]
    fn eval_loss_matches_training_loss_without_dropout() {
        let (model, ds) = setup();
        let params = model.init::<f64>(3);
        let mut task = TUNetTask::<f64>::new(&model, &ds, &ds, settings(0.4)).unwrap();
        let all: Vec<usize> = (0..ds.len()).collect();
        let (train_loss, grads) = task
            .batch_grads(&params, &all, BatchContext { epoch: 0, batch: 0 })
            .unwrap();
        let eval = task.evaluate(&params).unwrap();
        assert!((train_loss - eval.loss).abs() < 1e-12, "{train_loss} vs {}", eval.loss);
        assert_eq!(grads.len(), params.len());
        assert!((0.0..=1.0).contains(&eval.f1_macro));
    }

    #[test]
    fn rejects_mismatched_dataset() {
        let (model, _) = setup();
        let other = synth_dataset(&SynthConfig {
            n: 2,
            classes: 3,
            side: 16,
            ..SynthConfig::default()
        })
        .unwrap();
        assert!(TUNetTask::<f32>::new(&model, &other, &other, settings(0.4)).is_err());
    }
}
