//! Training protocol: NMSE loss, Adam, per-epoch validation with patience
//! early stopping, and a learning-rate grid search on validation NMSE.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Arr, Ctx, GemmPrecision, ParamStore, Tape};
use crate::data::{Batch, WindowSet};
use crate::error::{Error, Result};
use crate::metrics::{MetricAccumulator, MetricConfig, MetricSpace, Scores};
use crate::models::{build, ForecastModel, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    /// Candidate learning rates, largest first.
    pub lr_grid: Vec<f64>,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Rescale gradients whose global L2 norm exceeds this value.
    pub clip_grad_norm: Option<f64>,
    /// Epoch budget per grid candidate; `None` uses `max_epochs`.
    pub grid_max_epochs: Option<usize>,
    pub precision: GemmPrecision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 20,
            batch_size: 1024,
            patience: 5,
            lr_grid: vec![1e-3, 5e-4, 1e-4, 5e-5, 1e-5, 5e-6, 1e-6, 5e-7],
            adam: AdamConfig::default(),
            seed: 0,
            clip_grad_norm: None,
            grid_max_epochs: None,
            precision: GemmPrecision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadValue(m.to_string()));
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return bad("max_epochs, patience and batch_size must be >= 1");
        }
        if self.lr_grid.is_empty() || self.lr_grid.iter().any(|lr| !(*lr > 0.0) || !lr.is_finite()) {
            return bad("lr_grid must be non-empty with positive finite values");
        }
        if self.lr_grid.windows(2).any(|w| w[1] >= w[0]) {
            return bad("lr_grid must be strictly descending");
        }
        if self.grid_max_epochs == Some(0) {
            return bad("grid_max_epochs must be >= 1");
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c > 0.0) {
                return bad("clip_grad_norm must be > 0");
            }
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) || !(a.weight_decay >= 0.0) {
            return bad("Adam needs betas in [0, 1), eps > 0 and weight_decay >= 0");
        }
        Ok(())
    }
}

/// Adam with bias correction; weight decay is added to the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub lr: f64,
    t: i32,
    m: Vec<Option<Arr>>,
    v: Vec<Option<Arr>>,
}

impl Adam {
    pub fn new(lr: f64, cfg: AdamConfig, n_params: usize) -> Self {
        Adam { cfg, lr, t: 0, m: vec![None; n_params], v: vec![None; n_params] }
    }

    /// Applies one update. Parameters without a gradient are left alone.
    pub fn step(&mut self, store: &mut ParamStore, grads: Vec<Option<Arr>>) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for (id, g) in ids.into_iter().zip(grads) {
            let Some(mut g) = g else { continue };
            let i = id.index();
            if c.weight_decay > 0.0 {
                g.scaled_add(c.weight_decay, store.get(id));
            }
            let m = self.m[i].get_or_insert_with(|| Arr::zeros(g.raw_dim()));
            let v = self.v[i].get_or_insert_with(|| Arr::zeros(g.raw_dim()));
            let p = store.get_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(&g).for_each(|p, m, v, &g| {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
            });
        }
    }
}

/// Loss and parameter gradients of one training-mode pass.
pub fn loss_and_grads(model: &ForecastModel, batch: &Batch, seed: u64, precision: GemmPrecision) -> Result<(f64, Vec<Option<Arr>>)> {
    let tape = Tape::new(precision);
    let ctx = Ctx::new(&tape, &model.params, true, seed);
    let loss = model.loss(&ctx, batch)?;
    let mut grads = tape.backward(loss);
    Ok((loss.item(), ctx.param_grads(&mut grads)))
}

fn clip(grads: &mut [Option<Arr>], max_norm: f64) {
    let norm = grads.iter().flatten().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| g.mapv_inplace(|v| v * k));
    }
}

/// Patience rule over a validation curve. An epoch improves when its value
/// is strictly below the best so far; training stops at the first
/// non-improving epoch `e` with `e − best_epoch + 1 ≥ patience`.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    pub patience: usize,
    pub best: f64,
    /// 1-based; 0 before any finite value was seen.
    pub best_epoch: usize,
    pub epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper { patience, best: f64::INFINITY, best_epoch: 0, epoch: 0 }
    }

    pub fn observe(&mut self, value: f64) -> StopDecision {
        self.epoch += 1;
        let improved = value < self.best;
        if improved {
            self.best = value;
            self.best_epoch = self.epoch;
        }
        let stop = !improved && self.epoch + 1 >= self.best_epoch + self.patience;
        StopDecision { improved, stop }
    }

    /// Runs the rule over a fixed curve: `(termination epoch, best epoch,
    /// stopped early)`.
    pub fn simulate(curve: &[f64], patience: usize, max_epochs: usize) -> (usize, usize, bool) {
        let mut s = EarlyStopper::new(patience);
        for &v in curve.iter().take(max_epochs) {
            if s.observe(v).stop {
                return (s.epoch, s.best_epoch, s.epoch < max_epochs);
            }
        }
        (s.epoch, s.best_epoch, false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_nmse: f64,
    pub steps: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub lr: f64,
    pub epochs: Vec<EpochRecord>,
    /// Mini-batch losses in optimization order.
    pub step_losses: Vec<f64>,
    pub termination_epoch: usize,
    pub early_stopped: bool,
    pub best_epoch: usize,
    pub best_val_nmse: f64,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine<'a> {
    Epoch(&'a EpochRecord),
    Summary { lr: f64, termination_epoch: usize, early_stopped: bool, best_epoch: usize, best_val_nmse: f64, steps: usize },
}

impl TrainLog {
    /// One JSON object per epoch followed by a summary object.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(&LogLine::Epoch(e)).expect("plain data"));
            out.push('\n');
        }
        let summary = LogLine::Summary {
            lr: self.lr,
            termination_epoch: self.termination_epoch,
            early_stopped: self.early_stopped,
            best_epoch: self.best_epoch,
            best_val_nmse: self.best_val_nmse,
            steps: self.step_losses.len(),
        };
        out.push_str(&serde_json::to_string(&summary).expect("plain data"));
        out.push('\n');
        out
    }

    /// Copy with wall-clock fields zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> TrainLog {
        let mut log = self.clone();
        log.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
        log
    }
}

/// State at the moment a non-finite loss or gradient appeared.
#[derive(Debug, Clone)]
pub struct DivergenceState {
    pub epoch: usize,
    /// Parameters before the failing step; every earlier loss was finite.
    pub params: ParamStore,
    /// Log truncated before the failing step.
    pub log: TrainLog,
}

impl PartialEq for DivergenceState {
    fn eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch && self.log == other.log
    }
}

/// A trained model carrying the parameters of its best validation epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ForecastModel,
    pub log: TrainLog,
}

fn step_seed(seed: u64, epoch: usize, step: usize) -> u64 {
    seed ^ ((epoch as u64) << 40) ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains `model` in place at learning rate `lr`; on return the model holds
/// the parameters of the epoch with the lowest validation NMSE.
pub fn train(model: &mut ForecastModel, train_set: &WindowSet, val_set: &WindowSet, cfg: &TrainConfig, lr: f64) -> Result<TrainOutcome> {
    cfg.validate()?;
    for set in [train_set, val_set] {
        if set.spec() != model.window {
            return Err(Error::SchemaMismatch(format!("windows are {:?}, model expects {:?}", set.spec(), model.window)));
        }
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InsufficientData("training needs at least one train and one validation window".into()));
    }
    let mut opt = Adam::new(lr, cfg.adam, model.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut log = TrainLog { lr, best_val_nmse: f64::INFINITY, ..Default::default() };
    let mut best_params = model.params.clone();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_set.batch(idx);
            let (loss, mut grads) = loss_and_grads(model, &batch, step_seed(cfg.seed, epoch, step), cfg.precision)?;
            let finite = loss.is_finite() && grads.iter().flatten().all(|g| g.iter().all(|v| v.is_finite()));
            if !finite {
                log.termination_epoch = epoch;
                return Err(Error::Divergence {
                    epoch,
                    step: log.step_losses.len(),
                    last_finite: Box::new(DivergenceState { epoch, params: model.params.clone(), log }),
                });
            }
            if let Some(c) = cfg.clip_grad_norm {
                clip(&mut grads, c);
            }
            opt.step(&mut model.params, grads);
            log.step_losses.push(loss);
            loss_sum += loss * idx.len() as f64;
            seen += idx.len();
        }
        let val = evaluate(model, val_set, MetricSpace::Normalized, cfg.batch_size, cfg.precision)?.nmse;
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_nmse: val,
            steps: order.len().div_ceil(cfg.batch_size),
            seconds: started.elapsed().as_secs_f64(),
        });
        log::info!("epoch {epoch}: train {:.6} val {val:.6}", loss_sum / seen as f64);
        let decision = stopper.observe(val);
        if decision.improved {
            best_params = model.params.clone();
        }
        log.termination_epoch = epoch;
        if decision.stop {
            log.early_stopped = epoch < cfg.max_epochs;
            break;
        }
    }
    log.best_epoch = stopper.best_epoch;
    log.best_val_nmse = stopper.best;
    model.params = best_params;
    Ok(TrainOutcome { model: model.clone(), log })
}

/// Forecasts `[N, T]` for every window of `set`, in enumeration order and
/// normalized units.
pub fn predict_set(model: &ForecastModel, set: &WindowSet, batch_size: usize, precision: GemmPrecision) -> Result<Array2<f64>> {
    if set.spec() != model.window {
        return Err(Error::SchemaMismatch(format!("windows are {:?}, model expects {:?}", set.spec(), model.window)));
    }
    let mut out = Array2::zeros((set.len(), model.window.horizon));
    for (range, batch) in set.batches(batch_size) {
        out.slice_mut(s![range, ..]).assign(&model.predict(&batch, precision)?);
    }
    Ok(out)
}

/// Normalized targets `[N, T]` of every window of `set`.
pub fn targets(set: &WindowSet) -> Array2<f64> {
    let t = set.spec().horizon;
    let mut out = Array2::zeros((set.len(), t));
    for i in 0..set.len() {
        let w = set.sample(i);
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&w.y_target));
    }
    out
}

/// Scores `[N, T]` normalized forecasts against the windows of `set`. In
/// physical space both sides are mapped back to kWh with each building's
/// statistics and divided by the physical load std.
pub fn score(pred: &Array2<f64>, set: &WindowSet, space: MetricSpace) -> Result<Scores> {
    let t = set.spec().horizon;
    if pred.dim() != (set.len(), t) {
        return Err(Error::AlignmentError(format!("{:?} forecasts for {} windows of horizon {t}", pred.dim(), set.len())));
    }
    let norm = &set.data.normalizer;
    let sigma = match space {
        MetricSpace::Normalized => 1.0,
        MetricSpace::Physical => norm.sigma_y_physical(),
    };
    let mut acc = MetricAccumulator::new(MetricConfig::new(sigma, 1)?)?;
    for (i, &(b, start)) in set.entries.iter().enumerate() {
        let series = &set.data.series[b];
        let y = series.values.slice(s![start + set.spec().lookback..start + set.spec().span(), 0]);
        match space {
            MetricSpace::Normalized => acc.update(pred.row(i), y)?,
            MetricSpace::Physical => {
                let id = &series.building_id;
                let p = pred.row(i).iter().map(|&z| norm.denormalize_load(id, z)).collect::<Result<Vec<_>>>()?;
                let y = y.iter().map(|&z| norm.denormalize_load(id, z)).collect::<Result<Vec<_>>>()?;
                acc.update(ndarray::ArrayView1::from(&p), ndarray::ArrayView1::from(&y))?;
            }
        }
    }
    acc.finish()
}

/// NMSE and NMAE over every window of `set`.
pub fn evaluate(model: &ForecastModel, set: &WindowSet, space: MetricSpace, batch_size: usize, precision: GemmPrecision) -> Result<Scores> {
    if set.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let pred = predict_set(model, set, batch_size, precision)?;
    score(&pred, set, space)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub lr: f64,
    /// Best validation NMSE; `None` when the candidate diverged.
    pub val_nmse: Option<f64>,
    pub termination_epoch: usize,
    pub best_epoch: usize,
    pub selected: bool,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best_lr: f64,
    pub rows: Vec<GridRow>,
    pub best: TrainOutcome,
}

impl GridResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lr,val_nmse,termination_epoch,best_epoch,status,selected\n");
        for r in &self.rows {
            let (val, status) = match r.val_nmse {
                Some(v) => (format!("{v}"), "ok"),
                None => (String::new(), "diverged"),
            };
            writeln!(out, "{},{val},{},{},{status},{}", r.lr, r.termination_epoch, r.best_epoch, r.selected).unwrap();
        }
        out
    }
}

/// Trains one freshly initialized model per learning rate and keeps the
/// one with the lowest validation NMSE; ties go to the larger rate.
pub fn grid_search(
    config: &ModelConfig,
    model_seed: u64,
    train_set: &WindowSet,
    val_set: &WindowSet,
    cfg: &TrainConfig,
) -> Result<GridResult> {
    cfg.validate()?;
    let mut cand_cfg = cfg.clone();
    cand_cfg.max_epochs = cfg.grid_max_epochs.unwrap_or(cfg.max_epochs);
    let mut rows = Vec::new();
    let mut best: Option<TrainOutcome> = None;
    for &lr in &cfg.lr_grid {
        let mut model = build(config, train_set.spec(), model_seed)?;
        match train(&mut model, train_set, val_set, &cand_cfg, lr) {
            Ok(outcome) => {
                let v = outcome.log.best_val_nmse;
                rows.push(GridRow {
                    lr,
                    val_nmse: Some(v),
                    termination_epoch: outcome.log.termination_epoch,
                    best_epoch: outcome.log.best_epoch,
                    selected: false,
                });
                let better = match &best {
                    None => true,
                    Some(b) => v < b.log.best_val_nmse || (v == b.log.best_val_nmse && lr > b.log.lr),
                };
                if better {
                    best = Some(outcome);
                }
            }
            Err(Error::Divergence { epoch, .. }) => {
                log::warn!("lr {lr} diverged in epoch {epoch}");
                rows.push(GridRow { lr, val_nmse: None, termination_epoch: epoch, best_epoch: 0, selected: false });
            }
            Err(e) => return Err(e),
        }
    }
    let best = best.ok_or(Error::AllDiverged)?;
    let best_lr = best.log.lr;
    rows.iter_mut().for_each(|r| r.selected = r.lr == best_lr);
    Ok(GridResult { best_lr, rows, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crafted_curve_stops_at_seven() {
        let curve = [5.0, 4.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0];
        assert_eq!(EarlyStopper::simulate(&curve, 5, 20), (7, 3, true));
    }

    #[test]
    fn decreasing_curve_runs_to_budget() {
        let curve: Vec<f64> = (0..20).map(|i| 10.0 - i as f64 * 0.1).collect();
        assert_eq!(EarlyStopper::simulate(&curve, 5, 20), (20, 20, false));
    }

    #[test]
    fn patience_one_stops_at_first_non_improvement() {
        assert_eq!(EarlyStopper::simulate(&[3.0, 2.0, 2.0, 1.0], 1, 20), (3, 2, true));
        // equal values do not count as improvement
        assert_eq!(EarlyStopper::simulate(&[1.0, 1.0], 1, 20), (2, 1, true));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { lr_grid: vec![], ..Default::default() },
            TrainConfig { lr_grid: vec![1e-4, 1e-3], ..Default::default() },
            TrainConfig { patience: 0, ..Default::default() },
            TrainConfig { max_epochs: 0, ..Default::default() },
            TrainConfig { clip_grad_norm: Some(0.0), ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", Arr::from_elem(ndarray::IxDyn(&[3]), 1.0));
        let mut opt = Adam::new(0.1, AdamConfig::default(), 1);
        let g = Arr::from_shape_vec(ndarray::IxDyn(&[3]), vec![2.0, -0.5, 0.0]).unwrap();
        opt.step(&mut store, vec![Some(g)]);
        let w = store.get(id);
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] - 1.1).abs() < 1e-6 && w[2] == 1.0);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut g = vec![Some(Arr::from_elem(ndarray::IxDyn(&[4]), 3.0)), None];
        clip(&mut g, 1.5);
        let n: f64 = g[0].as_ref().unwrap().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.5).abs() < 1e-12);
    }
}
