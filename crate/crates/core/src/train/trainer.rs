use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::{color_jitter, load_split, patch_sample, DatasetManifest, JitterRanges, Sample, Split};
use crate::error::{domain_err, Error, Result};
use crate::metrics::{dataset_iou, EvalReport};
use crate::model::{build, load_checkpoint_as, save_checkpoint, CheckpointMeta, ModelConfig, ModelGraph, ModelKind};
use crate::nn::softmax_ce_loss;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::Mode;

use super::{AdamHyper, AdamState, EpochRecord, PlateauScheduler, TrainHistory};

/// Every knob of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub widths: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub plateau_factor: f64,
    pub patience: usize,
    pub dropout: f64,
    pub class_weights: [f64; 2],
    pub seed: u64,
    /// Epochs trained on foreground-centered half-size patches before
    /// switching to full images.
    pub warmup_epochs: usize,
    pub jitter: JitterRanges,
    /// Dataset directory (or manifest file) for [`train`].
    pub data: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub history: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(model: ModelKind) -> Self {
        Self {
            model,
            widths: model.default_widths(),
            epochs: 30,
            batch_size: 4,
            base_lr: 1e-4,
            plateau_factor: 0.1,
            patience: 3,
            dropout: 0.2,
            class_weights: [1.0, 3.0],
            seed: 0,
            warmup_epochs: 5,
            jitter: JitterRanges::default(),
            data: PathBuf::new(),
            checkpoint: None,
            history: None,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::new(self.model)
            .with_widths(self.widths.clone())
            .with_dropout(self.dropout)
            .with_seed(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=64).contains(&self.batch_size) {
            return Err(domain_err!("batch size {} outside [1, 64]", self.batch_size));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(domain_err!("learning rate must be positive, got {}", self.base_lr));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(domain_err!("plateau factor {} outside (0, 1)", self.plateau_factor));
        }
        if self.patience == 0 {
            return Err(domain_err!("patience must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(domain_err!("dropout {} outside [0, 1)", self.dropout));
        }
        if !self.class_weights.iter().all(|w| *w > 0.0 && w.is_finite()) {
            return Err(domain_err!(
                "class weights must be positive, got {:?}",
                self.class_weights
            ));
        }
        let j = &self.jitter;
        let ordered = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi;
        if !(j.brightness >= 0.0 && ordered(j.contrast) && ordered(j.saturation)) {
            return Err(domain_err!("invalid jitter ranges {j:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    /// Model after the last epoch.
    pub model: ModelGraph<f32>,
    pub best_iou: f64,
    pub best_epoch: usize,
}

fn batch_tensors(samples: &[Sample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let images: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.image).collect();
    let masks: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.mask).collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}

fn write_checkpoint(cfg: &TrainConfig, model: &mut ModelGraph<f32>, epoch: usize, best: f64) -> Result<()> {
    match &cfg.checkpoint {
        Some(path) => save_checkpoint(
            model,
            &CheckpointMeta {
                epoch: epoch as u64,
                best_iou: best,
                seed: cfg.seed,
            },
            path,
        ),
        None => Ok(()),
    }
}

/// Trains on in-memory samples. `on_epoch` sees each record as soon as the
/// epoch finishes.
///
/// Epoch `e` draws everything random (shuffle, patch placement, jitter,
/// dropout) from `Rng::derive(seed, e)`, so the run is fixed by the config.
/// Validation IoU is computed after each epoch; the checkpoint is written
/// once before training (epoch 0) and again on every strict improvement.
pub fn train_on_samples(
    cfg: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(domain_err!("training split is empty"));
    }
    let mut model = build(&cfg.model_config())?;
    let mut adam = AdamState::new(&mut model, AdamHyper::new(cfg.base_lr));
    let mut sched = PlateauScheduler::new(cfg.base_lr, cfg.plateau_factor, cfg.patience);
    let mut history = TrainHistory::default();
    let (mut best_iou, mut best_epoch) = (0.0, 0);
    write_checkpoint(cfg, &mut model, 0, best_iou)?;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let lr = sched.lr;
        adam.hyper.lr = lr;
        let mut rng = Rng::derive(cfg.seed, epoch as u64);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        rng.shuffle(&mut order);
        let warmup = epoch <= cfg.warmup_epochs;
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mut batch = Vec::with_capacity(idx.len());
            for &i in idx {
                let s = &train_set[i];
                let mut s = if warmup {
                    patch_sample(s, s.size() / 2, &mut rng)?
                } else {
                    s.clone()
                };
                s.image = color_jitter(&s.image, &mut rng, &cfg.jitter)?;
                batch.push(s);
            }
            let (x, y) = batch_tensors(&batch)?;
            let logits = model.forward(&x, Mode::Train, Some(&mut rng))?;
            let (loss, grad) = softmax_ce_loss(&logits, &y, cfg.class_weights)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("epoch {epoch} step {step}: loss is {loss}")));
            }
            model.zero_grad();
            model.backward(&grad)?;
            adam.step(&mut model)
                .map_err(|e| Error::Numeric(format!("epoch {epoch} step {step}: {e}")))?;
            if !model.all_params_finite() {
                return Err(Error::Numeric(format!(
                    "epoch {epoch} step {step}: non-finite parameters"
                )));
            }
            loss_sum += loss;
            batches += 1;
        }
        let iou = if val_set.is_empty() {
            0.0
        } else {
            dataset_iou(&mut model, val_set, cfg.batch_size)?.iou
        };
        let record = EpochRecord {
            epoch,
            loss: loss_sum / batches as f64,
            iou,
            lr,
            secs: start.elapsed().as_secs_f64(),
        };
        if iou > best_iou {
            best_iou = iou;
            best_epoch = epoch;
            write_checkpoint(cfg, &mut model, epoch, best_iou)?;
        }
        sched.observe(iou);
        on_epoch(&record);
        history.records.push(record);
    }
    Ok(TrainOutcome {
        history,
        model,
        best_iou,
        best_epoch,
    })
}

/// Loads the dataset named by `cfg.data`, trains, and writes the history
/// file if one is configured.
pub fn train(cfg: &TrainConfig, on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(&cfg.data)?;
    let train_set = load_split(&manifest, Split::Train)?;
    let val_set = load_split(&manifest, Split::Val)?;
    let outcome = train_on_samples(cfg, &train_set, &val_set, on_epoch)?;
    if let Some(path) = &cfg.history {
        write_history(&outcome.history, path)?;
    }
    Ok(outcome)
}

fn write_history(h: &TrainHistory, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, h.to_text()).map_err(|e| Error::io(path, e))
}

/// Eval-mode IoU of a saved checkpoint on one split. With `kind` given the
/// checkpoint must hold that architecture.
pub fn evaluate(
    checkpoint: &Path,
    manifest: &DatasetManifest,
    split: Split,
    kind: Option<ModelKind>,
) -> Result<EvalReport> {
    if manifest.stems(split).is_empty() {
        return Err(domain_err!("{} split is empty", split.name()));
    }
    let (mut model, _) = match kind {
        Some(k) => load_checkpoint_as(checkpoint, k)?,
        None => crate::model::load_checkpoint(checkpoint)?,
    };
    let samples = load_split(manifest, split)?;
    dataset_iou(&mut model, &samples, 4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_dataset;

    fn tiny(kind: ModelKind) -> TrainConfig {
        TrainConfig {
            widths: ModelConfig::reduced(kind).widths,
            epochs: 2,
            warmup_epochs: 1,
            batch_size: 2,
            ..TrainConfig::new(kind)
        }
    }

    #[test]
    fn zero_epochs_writes_initial_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        make_dataset(2, 1, 32, 1, dir.path()).unwrap();
        let ckpt = dir.path().join("m.ckpt");
        let cfg = TrainConfig {
            epochs: 0,
            data: dir.path().into(),
            checkpoint: Some(ckpt.clone()),
            ..tiny(ModelKind::VggD2s)
        };
        let out = train(&cfg, |_| {}).unwrap();
        assert!(out.history.records.is_empty());
        let (_, meta) = crate::model::load_checkpoint(&ckpt).unwrap();
        assert_eq!((meta.epoch, meta.best_iou), (0, 0.0));
    }

    #[test]
    fn best_checkpoint_reproduces_recorded_iou() {
        let dir = tempfile::tempdir().unwrap();
        let m = make_dataset(4, 2, 32, 3, dir.path()).unwrap();
        let ckpt = dir.path().join("best.ckpt");
        let cfg = TrainConfig {
            epochs: 3,
            base_lr: 1e-2,
            data: dir.path().into(),
            checkpoint: Some(ckpt.clone()),
            ..tiny(ModelKind::VggD2s)
        };
        let out = train(&cfg, |_| {}).unwrap();
        let (_, meta) = crate::model::load_checkpoint(&ckpt).unwrap();
        let report = evaluate(&ckpt, &m, Split::Val, Some(ModelKind::VggD2s)).unwrap();
        if out.best_epoch > 0 {
            let rec = &out.history.records[out.best_epoch - 1];
            assert_eq!(report.iou, rec.iou);
            assert_eq!(meta.best_iou, rec.iou);
        }
        assert_eq!(meta.epoch as usize, out.best_epoch);
        assert!(matches!(
            evaluate(&ckpt, &m, Split::Val, Some(ModelKind::Segnet)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn deterministic_history() {
        let train_set: Vec<Sample> = (0..3)
            .map(|s| crate::data::generate_road_scene(s, 32).unwrap())
            .collect();
        let val = vec![crate::data::generate_road_scene(9, 32).unwrap()];
        for kind in ModelKind::ALL {
            let cfg = tiny(kind);
            let a = train_on_samples(&cfg, &train_set, &val, |_| {}).unwrap();
            let b = train_on_samples(&cfg, &train_set, &val, |_| {}).unwrap();
            assert_eq!(a.history.without_timing(), b.history.without_timing());
            assert_eq!(a.model.clone().state(), b.model.clone().state());
        }
    }

    #[test]
    fn invalid_configs() {
        let base = TrainConfig::new(ModelKind::Segnet);
        assert!(TrainConfig {
            batch_size: 0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 65,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            base_lr: 0.0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            dropout: 1.0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(base.validate().is_ok());
    }

    #[test]
    fn empty_split_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = make_dataset(1, 0, 32, 1, dir.path()).unwrap();
        let ckpt = dir.path().join("m.ckpt");
        let mut model = build(&ModelConfig::reduced(ModelKind::VggD2s)).unwrap();
        save_checkpoint(
            &mut model,
            &CheckpointMeta {
                epoch: 0,
                best_iou: 0.0,
                seed: 0,
            },
            &ckpt,
        )
        .unwrap();
        assert!(matches!(evaluate(&ckpt, &m, Split::Val, None), Err(Error::Domain(_))));
    }
}
