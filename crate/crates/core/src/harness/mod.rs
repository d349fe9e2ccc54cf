//! Experiment runner: optional momentum-contrast pretraining, stratified
//! k-fold fine-tuning under either loss, F1-optimal thresholding,
//! best-epoch model selection, held-out test evaluation, trust scoring and
//! report emission for the {loss} x {initialization} grid.
//!
//! Every run first carves a class-balanced test split from the dataset and
//! folds only the remainder (the pool). Test rows are read once per fold,
//! after training and threshold selection are finished.

mod access;
mod config;
mod report;

use std::path::{Path, PathBuf};

use ndarray::Axis;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use access::{AccessLog, Phase, TrackedData};
pub use config::{DataSource, ExperimentConfig, Init, LossKind};
pub use report::{
    aggregate, mean_std, render_tables, FoldMetrics, GridSummary, MetricSummary, RunReport,
    COMPARED_METRICS, METRIC_NAMES,
};

use crate::data::{
    gen_gaussian_mixture, load_checkpoint, load_csv, save_checkpoint, Checkpoint, DatasetTable,
    SplitMix64,
};
use crate::losses::{auc_margin_logits, bce_with_logits, estimate_prior, AucState};
use crate::metrics::{
    best_f1_threshold, confusion_at, roc_auc, roc_curve, stratified_kfold, write_roc_csv,
    ConfusionMatrix, FoldAssignment,
};
use crate::model::{init_params, ModelParams, ModelSpec};
use crate::moco::{replace_head, MocoState};
use crate::optim::{PesgState, SgdState};
use crate::trust::TrustReport;
use crate::{Error, Result};

const TAG_TEST_SPLIT: u64 = 1;
const TAG_FOLDS: u64 = 2;
const TAG_PRETRAIN: u64 = 3;
const TAG_PRETRAIN_BATCHES: u64 = 4;
const TAG_FOLD_INIT: u64 = 100;
const TAG_FOLD_SHUFFLE: u64 = 200;
const TAG_FOLD_LABELS: u64 = 300;

/// The dataset plus the held-out test split and the pool that is folded.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub table: DatasetTable,
    pub pool: Vec<usize>,
    pub test: Vec<usize>,
}

impl PreparedData {
    pub fn pool_labels(&self) -> Vec<bool> {
        self.table.labels_at(&self.pool)
    }
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<DatasetTable> {
    match &cfg.data {
        DataSource::Synthetic(spec) => gen_gaussian_mixture(spec),
        DataSource::Csv { path, label_column } => load_csv(path, label_column),
    }
}

/// Loads the dataset and carves the balanced test split.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let table = load_dataset(cfg)?;
    table.require_both_classes()?;
    let mut rng = SplitMix64::new(SplitMix64::derive_seed(cfg.seed, TAG_TEST_SPLIT));
    let mut pool = Vec::new();
    let mut test = Vec::new();
    for (class, n_test) in [(true, cfg.test_pos), (false, cfg.test_neg)] {
        let mut idx: Vec<usize> = (0..table.len()).filter(|&i| table.labels[i] == class).collect();
        if idx.len() < n_test + cfg.folds {
            return Err(Error::Dataset(format!(
                "class {} has {} samples; need {n_test} for the test split plus {} for folding",
                u8::from(class),
                idx.len(),
                cfg.folds
            )));
        }
        rng.shuffle(&mut idx);
        test.extend_from_slice(&idx[..n_test]);
        pool.extend_from_slice(&idx[n_test..]);
    }
    pool.sort_unstable();
    test.sort_unstable();
    Ok(PreparedData { table, pool, test })
}

/// Stratified folds over the pool, shared by every run with this seed.
pub fn fold_assignment(cfg: &ExperimentConfig, data: &PreparedData) -> Result<FoldAssignment> {
    stratified_kfold(
        &data.pool_labels(),
        cfg.folds,
        SplitMix64::derive_seed(cfg.seed, TAG_FOLDS),
    )
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    /// Mean InfoNCE loss per step.
    pub losses: Vec<f64>,
}

fn moco_state(cfg: &ExperimentConfig, dim: usize) -> Result<MocoState<f64>> {
    let spec = ModelSpec::encoder(cfg.encoder_dims(dim), cfg.activation)?;
    MocoState::new(&spec, cfg.moco.clone(), SplitMix64::derive_seed(cfg.seed, TAG_PRETRAIN))
}

/// The query encoder pretraining starts from, for `dim` input features.
pub fn initial_encoder(cfg: &ExperimentConfig, dim: usize) -> Result<ModelParams<f64>> {
    Ok(moco_state(cfg, dim)?.query)
}

/// Momentum-contrast pretraining of the encoder on the pool's features.
/// Labels are never read.
pub fn pretrain(cfg: &ExperimentConfig, log: &AccessLog) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let tracked = TrackedData::new(&data.table, log);
    let features = tracked.rows(Phase::Pretrain, &data.pool);
    let batch = cfg.moco.batch_size;
    if features.nrows() < batch {
        return Err(Error::Dataset(format!(
            "pretraining pool has {} samples, fewer than the batch size {batch}",
            features.nrows()
        )));
    }
    let mut state = moco_state(cfg, features.ncols())?;
    let mut optimizer = SgdState::new(
        &state.query,
        cfg.pretrain_lr,
        cfg.pretrain_momentum,
        cfg.pretrain_weight_decay,
    )?;
    let mut rng = SplitMix64::new(SplitMix64::derive_seed(cfg.seed, TAG_PRETRAIN_BATCHES));
    let mut order: Vec<usize> = (0..features.nrows()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(cfg.pretrain_steps);
    for _ in 0..cfg.pretrain_steps {
        if cursor + batch > order.len() {
            rng.shuffle(&mut order);
            cursor = 0;
        }
        let x = features.select(Axis(0), &order[cursor..cursor + batch]);
        cursor += batch;
        losses.push(state.train_step(&x, &mut optimizer, &mut rng)?);
    }
    Ok(PretrainOutcome {
        checkpoint: Checkpoint::new(state.query, "pretrain", cfg.seed),
        losses,
    })
}

/// [`pretrain`], then writes `pretrain.ckpt` and `pretrain_losses.csv` into
/// the output directory. Returns the checkpoint path.
pub fn run_pretrain(cfg: &ExperimentConfig) -> Result<(PathBuf, PretrainOutcome)> {
    let outcome = pretrain(cfg, &AccessLog::new())?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("pretrain.ckpt");
    save_checkpoint(&outcome.checkpoint, &path)?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in outcome.losses.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    let loss_path = dir.join("pretrain_losses.csv");
    std::fs::write(&loss_path, csv).map_err(|e| Error::io(&loss_path, e))?;
    Ok((path, outcome))
}

/// Everything one fold produced.
#[derive(Clone, Debug)]
pub struct FoldRun {
    pub metrics: FoldMetrics,
    pub checkpoint: Checkpoint,
    pub roc: Vec<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub report: RunReport,
    pub folds: FoldAssignment,
    pub runs: Vec<FoldRun>,
    pub pool: Vec<usize>,
    pub test: Vec<usize>,
}

enum Optimizer {
    Ce(SgdState<f64>),
    Auc(PesgState<f64>, AucState<f64>),
}

struct FoldJob<'a> {
    cfg: &'a ExperimentConfig,
    data: TrackedData<'a>,
    pool: &'a [usize],
    test: &'a [usize],
    folds: &'a FoldAssignment,
    encoder: Option<&'a ModelParams<f64>>,
}

fn require_both(labels: &[bool], what: &str, fold: usize) -> Result<()> {
    let pos = labels.iter().filter(|&&y| y).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Usage(format!(
            "fold {fold}: {what} split is degenerate ({pos} positives of {})",
            labels.len()
        )));
    }
    Ok(())
}

/// Keeps `ceil(fraction * n_c)` (at least one) samples of each class.
fn label_subset(indices: &[usize], labels: &[bool], fraction: f64, seed: u64) -> Vec<usize> {
    if fraction >= 1.0 {
        return indices.to_vec();
    }
    let mut rng = SplitMix64::new(seed);
    let mut keep = Vec::new();
    for class in [false, true] {
        let mut idx: Vec<usize> = indices
            .iter()
            .zip(labels)
            .filter(|(_, &y)| y == class)
            .map(|(&i, _)| i)
            .collect();
        rng.shuffle(&mut idx);
        let n = ((idx.len() as f64 * fraction).ceil() as usize).clamp(1, idx.len().max(1));
        keep.extend_from_slice(&idx[..n.min(idx.len())]);
    }
    keep.sort_unstable();
    keep
}

impl FoldJob<'_> {
    fn initial_params(&self, fold: usize) -> Result<ModelParams<f64>> {
        let seed = SplitMix64::derive_seed(self.cfg.seed, TAG_FOLD_INIT + fold as u64);
        match self.encoder {
            None => {
                let spec = ModelSpec::new(self.cfg.scorer_dims(self.data.dim()), self.cfg.activation)?;
                init_params(&spec, seed)
            }
            Some(enc) => {
                if enc.input_dim() != self.data.dim() {
                    return Err(Error::Shape(format!(
                        "pretrained encoder expects {} features, data has {}",
                        enc.input_dim(),
                        self.data.dim()
                    )));
                }
                replace_head(enc, seed)
            }
        }
    }

    fn run(&self, fold: usize) -> Result<FoldRun> {
        let cfg = self.cfg;
        let to_global = |local: Vec<usize>| -> Vec<usize> { local.into_iter().map(|i| self.pool[i]).collect() };
        let train_all = to_global(self.folds.training_indices(fold));
        let val = to_global(self.folds.validation_indices(fold));

        let train_labels_all = self.data.labels(Phase::Train, &train_all);
        let train = label_subset(
            &train_all,
            &train_labels_all,
            cfg.label_fraction,
            SplitMix64::derive_seed(cfg.seed, TAG_FOLD_LABELS + fold as u64),
        );
        let x_train = self.data.rows(Phase::Train, &train);
        let y_train = self.data.labels(Phase::Train, &train);
        require_both(&y_train, "training", fold)?;
        let x_val = self.data.rows(Phase::Validation, &val);
        let y_val = self.data.labels(Phase::Validation, &val);
        require_both(&y_val, "validation", fold)?;

        let mut params = self.initial_params(fold)?;
        let prior = estimate_prior(&y_train)?;
        let (schedule, mut optimizer) = match cfg.loss {
            LossKind::Ce => (
                cfg.ce_schedule()?,
                Optimizer::Ce(SgdState::new(&params, cfg.ce_lr, cfg.ce_momentum, cfg.ce_weight_decay)?),
            ),
            LossKind::AucMax => (
                cfg.auc_schedule()?,
                Optimizer::Auc(
                    PesgState::new(cfg.auc_lr, cfg.dual_lr.unwrap_or(cfg.auc_lr), cfg.auc_weight_decay)?
                        .with_proximal(cfg.gamma),
                    AucState::new(prior, cfg.margin)?,
                ),
            ),
        };
        let dual_ratio = cfg.dual_lr.unwrap_or(cfg.auc_lr) / cfg.auc_lr;

        let mut rng = SplitMix64::new(SplitMix64::derive_seed(cfg.seed, TAG_FOLD_SHUFFLE + fold as u64));
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut history = Vec::with_capacity(cfg.epochs);
        let mut best: Option<(f64, usize, ModelParams<f64>, Option<AucState<f64>>, f64)> = None;

        for epoch in 0..cfg.epochs {
            let lr = schedule.lr(epoch);
            match &mut optimizer {
                Optimizer::Ce(sgd) => sgd.lr = lr,
                Optimizer::Auc(pesg, _) => {
                    if epoch == 0 || schedule.lr(epoch.saturating_sub(1)) != lr {
                        pesg.set_reference(&params);
                    }
                    pesg.primal_lr = lr;
                    pesg.dual_lr = lr * dual_ratio;
                    pesg.epoch = epoch;
                }
            }
            rng.shuffle(&mut order);
            for chunk in order.chunks(cfg.batch_size) {
                let xb = x_train.select(Axis(0), chunk);
                let yb: Vec<bool> = chunk.iter().map(|&i| y_train[i]).collect();
                let (logits, trace) = params.forward(&xb)?;
                let logits = logits.to_vec();
                match &mut optimizer {
                    Optimizer::Ce(sgd) => {
                        let lg = bce_with_logits(&logits, &yb)?;
                        let grads = params.backward(&trace, lg.d_scores.as_slice().into())?;
                        sgd.step(&mut params, &grads)?;
                    }
                    Optimizer::Auc(pesg, aux) => {
                        let lg = auc_margin_logits(&logits, &yb, aux)?;
                        let grads = params.backward(&trace, lg.d_scores.as_slice().into())?;
                        pesg.step(&mut params, &grads, aux, &lg)?;
                    }
                }
            }

            let val_probs = params.predict_proba(&x_val)?.to_vec();
            let (threshold, _) = best_f1_threshold(&val_probs, &y_val)?;
            let accuracy = confusion_at(&val_probs, &y_val, threshold)?.accuracy();
            history.push(accuracy);
            if best.as_ref().is_none_or(|b| accuracy > b.0) {
                let aux = match &optimizer {
                    Optimizer::Auc(_, aux) => Some(*aux),
                    Optimizer::Ce(_) => None,
                };
                best = Some((accuracy, epoch, params.clone(), aux, threshold));
            }
        }
        let (_, selected_epoch, params, aux, threshold) = best.expect("epochs >= 1");

        // Test rows are only touched once the fold's model and threshold are fixed.
        let x_test = self.data.rows(Phase::Test, self.test);
        let y_test = self.data.labels(Phase::Test, self.test);
        let probs = params.predict_proba(&x_test)?.to_vec();
        let cm = confusion_at(&probs, &y_test, threshold)?;
        let trust = TrustReport::compute(&probs, &y_test, &cfg.trust_config(threshold))?;
        let metrics = fold_metrics(fold, roc_auc(&probs, &y_test)?, &cm, threshold, &trust, selected_epoch, history);
        let mut checkpoint = Checkpoint::new(
            params,
            format!("finetune:{}/{}:fold{fold}", cfg.loss, cfg.init.label()),
            cfg.seed,
        );
        checkpoint.aux = aux;
        checkpoint.threshold = Some(threshold);
        Ok(FoldRun {
            metrics,
            checkpoint,
            roc: roc_curve(&probs, &y_test)?,
        })
    }
}

fn fold_metrics(
    fold: usize,
    auc: f64,
    cm: &ConfusionMatrix,
    threshold: f64,
    trust: &TrustReport<f64>,
    selected_epoch: usize,
    val_accuracy_by_epoch: Vec<f64>,
) -> FoldMetrics {
    FoldMetrics {
        fold,
        auc,
        precision_pos: cm.precision_pos(),
        precision_neg: cm.precision_neg(),
        sensitivity_pos: cm.sensitivity_pos(),
        sensitivity_neg: cm.sensitivity_neg(),
        accuracy: cm.accuracy(),
        f1_threshold: threshold,
        trust_pos: trust.trust_pos,
        trust_neg: trust.trust_neg,
        precision_pos_defined: cm.precision_pos_defined(),
        precision_neg_defined: cm.precision_neg_defined(),
        confusion: *cm,
        selected_epoch,
        val_accuracy_by_epoch,
    }
}

fn load_encoder(cfg: &ExperimentConfig) -> Result<Option<ModelParams<f64>>> {
    match &cfg.init {
        Init::Scratch => Ok(None),
        Init::Pretrained(path) => Ok(Some(load_checkpoint(path)?.params)),
    }
}

/// Cross-validated fine-tuning without writing any files. With
/// `encoder = Some(..)` the scorer starts from that encoder with a fresh
/// head; otherwise `cfg.init` decides.
pub fn finetune_with(
    cfg: &ExperimentConfig,
    encoder: Option<&ModelParams<f64>>,
    log: &AccessLog,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    let loaded;
    let encoder = match encoder {
        Some(e) => Some(e),
        None => {
            loaded = load_encoder(cfg)?;
            loaded.as_ref()
        }
    };
    let data = prepare_data(cfg)?;
    let folds = fold_assignment(cfg, &data)?;
    let job = FoldJob {
        cfg,
        data: TrackedData::new(&data.table, log),
        pool: &data.pool,
        test: &data.test,
        folds: &folds,
        encoder,
    };
    let runs: Vec<FoldRun> = (0..cfg.folds)
        .into_par_iter()
        .map(|f| job.run(f))
        .collect::<Result<_>>()?;

    let fold_metrics: Vec<FoldMetrics> = runs.iter().map(|r| r.metrics.clone()).collect();
    let pool_labels = data.pool_labels();
    let pool_pos = pool_labels.iter().filter(|&&y| y).count();
    let init = if encoder.is_some() { "pretrained" } else { "scratch" };
    let report = RunReport {
        label: format!("{}/{init}", cfg.loss),
        loss: cfg.loss,
        init: init.to_string(),
        seed: cfg.seed,
        data: data.table.provenance.clone(),
        train_pool: (pool_pos, pool_labels.len() - pool_pos),
        test: (cfg.test_pos, cfg.test_neg),
        prior: estimate_prior(&pool_labels)?,
        aggregate: aggregate(&fold_metrics),
        folds: fold_metrics,
        config: cfg.clone(),
    };
    Ok(FinetuneOutcome {
        report,
        folds,
        runs,
        pool: data.pool,
        test: data.test,
    })
}

pub fn finetune(cfg: &ExperimentConfig, log: &AccessLog) -> Result<FinetuneOutcome> {
    finetune_with(cfg, None, log)
}

/// Writes `report.json`, `folds.csv`, `roc_fold<i>.csv` and
/// `model_fold<i>.ckpt` into `dir`.
pub fn write_finetune_outputs(outcome: &FinetuneOutcome, dir: &Path) -> Result<()> {
    outcome.report.write(dir)?;
    for run in &outcome.runs {
        let i = run.metrics.fold;
        write_roc_csv(&run.roc, &dir.join(format!("roc_fold{i}.csv")))?;
        save_checkpoint(&run.checkpoint, &dir.join(format!("model_fold{i}.ckpt")))?;
    }
    Ok(())
}

pub fn run_finetune(cfg: &ExperimentConfig) -> Result<FinetuneOutcome> {
    let outcome = finetune(cfg, &AccessLog::new())?;
    write_finetune_outputs(&outcome, &cfg.output_dir)?;
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub n: usize,
    pub threshold: f64,
    pub auc: f64,
    pub precision_pos: f64,
    pub precision_neg: f64,
    pub sensitivity_pos: f64,
    pub sensitivity_neg: f64,
    pub accuracy: f64,
    pub trust_pos: f64,
    pub trust_neg: f64,
    pub confusion: ConfusionMatrix,
}

/// Metrics of a saved scorer on `table`. The threshold defaults to the
/// one stored in the checkpoint, then to 0.5.
pub fn evaluate(
    ckpt: &Checkpoint,
    table: &DatasetTable,
    threshold: Option<f64>,
    cfg: &ExperimentConfig,
) -> Result<(EvalMetrics, Vec<(f64, f64)>)> {
    if ckpt.params.input_dim() != table.dim() {
        return Err(Error::Shape(format!(
            "checkpoint expects {} features, dataset has {}",
            ckpt.params.input_dim(),
            table.dim()
        )));
    }
    if ckpt.params.output_dim() != 1 {
        return Err(Error::Shape(format!(
            "checkpoint is not a scorer ({} outputs); fine-tune it first",
            ckpt.params.output_dim()
        )));
    }
    table.require_both_classes()?;
    let threshold = threshold.or(ckpt.threshold).unwrap_or(0.5);
    let probs = ckpt.params.predict_proba(&table.features)?.to_vec();
    let cm = confusion_at(&probs, &table.labels, threshold)?;
    let trust = TrustReport::compute(&probs, &table.labels, &cfg.trust_config(threshold))?;
    let metrics = EvalMetrics {
        n: table.len(),
        threshold,
        auc: roc_auc(&probs, &table.labels)?,
        precision_pos: cm.precision_pos(),
        precision_neg: cm.precision_neg(),
        sensitivity_pos: cm.sensitivity_pos(),
        sensitivity_neg: cm.sensitivity_neg(),
        accuracy: cm.accuracy(),
        trust_pos: trust.trust_pos,
        trust_neg: trust.trust_neg,
        confusion: cm,
    };
    Ok((metrics, roc_curve(&probs, &table.labels)?))
}

/// Loads a checkpoint, evaluates it, and writes `eval.json` and `roc.csv`
/// into the output directory.
pub fn run_eval(
    checkpoint: &Path,
    table: &DatasetTable,
    threshold: Option<f64>,
    cfg: &ExperimentConfig,
) -> Result<EvalMetrics> {
    let ckpt = load_checkpoint(checkpoint)?;
    let (metrics, roc) = evaluate(&ckpt, table, threshold, cfg)?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join("eval.json");
    let mut text = serde_json::to_string_pretty(&metrics)?;
    text.push('\n');
    std::fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    write_roc_csv(&roc, &dir.join("roc.csv"))?;
    Ok(metrics)
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    pub reports: Vec<RunReport>,
    pub folds: Vec<FoldAssignment>,
    pub summary: GridSummary,
    pub encoder_checkpoint: PathBuf,
}

/// Runs {ce, auc_max} x {scratch, pretrained} with shared folds and seeds.
/// Pretrains first unless `cfg.init` already names a checkpoint.
pub fn run_grid(cfg: &ExperimentConfig) -> Result<GridOutcome> {
    let encoder_checkpoint = match &cfg.init {
        Init::Pretrained(path) => path.clone(),
        Init::Scratch => {
            let mut pre = cfg.clone();
            pre.output_dir = cfg.output_dir.join("pretrain");
            run_pretrain(&pre)?.0
        }
    };
    let mut reports = Vec::new();
    let mut folds = Vec::new();
    for loss in [LossKind::Ce, LossKind::AucMax] {
        for init in [Init::Scratch, Init::Pretrained(encoder_checkpoint.clone())] {
            let mut run = cfg.clone();
            run.loss = loss;
            run.output_dir = cfg.output_dir.join(format!("{loss}_{}", init.label()));
            run.init = init;
            let outcome = run_finetune(&run)?;
            reports.push(outcome.report);
            folds.push(outcome.folds);
        }
    }
    let summary = GridSummary::from_reports(&reports);
    let dir = &cfg.output_dir;
    let path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let md = dir.join("summary.md");
    std::fs::write(&md, render_tables(&reports)).map_err(|e| Error::io(&md, e))?;
    Ok(GridOutcome {
        reports,
        folds,
        summary,
        encoder_checkpoint,
    })
}
