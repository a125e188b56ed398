//! Adam training with periodic validation and early stopping, plus the
//! ablation grid.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{ModelConfig, SegmentationNet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub steps: usize,
    /// Samples whose gradients are averaged into one update.
    pub accumulation: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub eval_interval: usize,
    /// Seeds the sample order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 20_000,
            accumulation: 8,
            patience: 10,
            eval_interval: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return fail("epsilon must be positive");
        }
        if self.steps == 0 || self.accumulation == 0 || self.eval_interval == 0 || self.patience == 0 {
            return fail("steps, accumulation, eval_interval and patience must be positive");
        }
        Ok(())
    }
}

/// One validation checkpoint of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    /// Mean loss over the steps since the previous row.
    pub train_loss: f64,
    pub val_miou: f64,
    pub val_accuracy: f64,
}

pub const LOG_HEADER: &str = "step,train_loss,val_miou,val_accuracy";

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(s, "{},{:.6},{:.6},{:.6}", r.step, r.train_loss, r.val_miou, r.val_accuracy).unwrap();
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Completed,
    EarlyStopped,
    /// Non-finite loss or parameters at this step.
    Diverged(usize),
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation accuracy seen, or the last finite
    /// ones when no evaluation ran.
    pub net: SegmentationNet,
    pub log: Vec<LogRow>,
    pub best: Option<(usize, EvalReport)>,
    pub stop: StopReason,
    pub steps_run: usize,
}

struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
}

impl Adam {
    fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f32>> = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f32>], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in params.get_mut(id).data_mut().iter_mut().enumerate() {
                let g = grads[i][j];
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *p -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
            }
        }
    }
}

fn better(a: &EvalReport, b: &EvalReport) -> bool {
    (a.accuracy, a.miou) > (b.accuracy, b.miou)
}

/// Trains a freshly initialized model. `progress` sees each log row as it
/// is produced.
pub fn train(
    model: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    mut progress: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("train", "train and validation splits must be non-empty"));
    }
    let mut net = SegmentationNet::new(model.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut adam = Adam::new(net.params());
    let mut grads: Vec<Vec<f32>> = net.params().iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();

    let mut log = Vec::new();
    let mut best: Option<(usize, EvalReport, ParamStore)> = None;
    let mut stale = 0usize;
    let (mut loss_sum, mut loss_steps) = (0.0f64, 0usize);
    let mut stop = StopReason::Completed;
    let mut steps_run = 0;
    let mut last_finite = net.params().clone();

    for step in 1..=cfg.steps {
        grads.iter_mut().for_each(|g| g.fill(0.0));
        let mut step_loss = 0.0f64;
        for _ in 0..cfg.accumulation {
            if order.is_empty() {
                order = (0..train_set.len()).collect();
                order.shuffle(&mut rng);
                order.reverse();
            }
            let i = order.pop().expect("refilled");
            let s = &train_set[i];
            let (loss, g) = net
                .loss_and_grad(&s.image, &s.elements, &s.expression, &s.mask)
                .map_err(|e| Error::Sample { index: i, source: Box::new(e) })?;
            step_loss += f64::from(loss);
            for (acc, gp) in grads.iter_mut().zip(&g.per_param) {
                if let Some(gp) = gp {
                    acc.iter_mut().zip(gp).for_each(|(a, v)| *a += v);
                }
            }
        }
        step_loss /= cfg.accumulation as f64;
        if !step_loss.is_finite() {
            stop = StopReason::Diverged(step);
            break;
        }
        let scale = 1.0 / cfg.accumulation as f32;
        grads.iter_mut().flatten().for_each(|v| *v *= scale);
        adam.step(net.params_mut(), &grads, cfg);
        if !net.params().all_finite() {
            stop = StopReason::Diverged(step);
            break;
        }
        last_finite.clone_from(net.params());
        steps_run = step;
        loss_sum += step_loss;
        loss_steps += 1;

        if step % cfg.eval_interval == 0 || step == cfg.steps {
            let report = evaluate(&net, "val", val_set)?;
            let row = LogRow {
                step,
                train_loss: loss_sum / loss_steps as f64,
                val_miou: report.miou,
                val_accuracy: report.accuracy,
            };
            progress(&row);
            log.push(row);
            (loss_sum, loss_steps) = (0.0, 0);
            if best.as_ref().map_or(true, |(_, b, _)| better(&report, b)) {
                best = Some((step, report, net.params().clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    stop = StopReason::EarlyStopped;
                    break;
                }
            }
        }
    }

    let (params, best) = match best {
        Some((step, report, params)) => (params, Some((step, report))),
        None => (last_finite, None),
    };
    Ok(TrainOutcome {
        net: SegmentationNet::with_params(model.clone(), params)?,
        log,
        best,
        stop,
        steps_run,
    })
}

/// The five (image, elements, projection) switch settings compared by the grid.
pub const ABLATIONS: [(bool, bool, bool); 5] = [
    (true, true, true),
    (true, false, false),
    (false, true, true),
    (true, true, false),
    (false, true, false),
];

pub fn ablation_name(flags: (bool, bool, bool)) -> &'static str {
    match flags {
        (true, true, true) => "ours",
        (true, false, false) => "image_only",
        (false, true, true) => "elements_only",
        (true, true, false) => "no_projection",
        (false, true, false) => "no_projection_elements_only",
        _ => "custom",
    }
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub flags: (bool, bool, bool),
    /// Test report, or the error that stopped this cell.
    pub result: std::result::Result<EvalReport, String>,
}

/// Trains and tests each ablation with the same seeds and hyperparameters.
/// A failing cell is recorded and the grid moves on.
pub fn run_ablation_grid(
    base: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    test_set: &[Sample],
    mut progress: impl FnMut((bool, bool, bool), &LogRow),
) -> Vec<AblationRow> {
    ABLATIONS
        .iter()
        .map(|&flags| {
            let model = base.with_ablation(flags.0, flags.1, flags.2);
            let result = train(&model, cfg, train_set, val_set, |r| progress(flags, r))
                .and_then(|o| match o.stop {
                    StopReason::Diverged(step) => Err(Error::Diverged(step)),
                    _ => evaluate(&o.net, "test", test_set),
                })
                .map_err(|e| e.to_string());
            AblationRow { flags, result }
        })
        .collect()
}

pub const ABLATION_HEADER: &str = "name,use_image,use_elements,use_projection,accuracy,miou,status";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(ABLATION_HEADER);
    s.push('\n');
    for r in rows {
        let (i, e, p) = r.flags;
        let name = ablation_name(r.flags);
        let (i, e, p) = (u8::from(i), u8::from(e), u8::from(p));
        match &r.result {
            Ok(rep) => writeln!(s, "{name},{i},{e},{p},{:.4},{:.4},ok", rep.accuracy, rep.miou),
            Err(msg) => writeln!(s, "{name},{i},{e},{p},,,failed: {}", msg.replace([',', '\n'], ";")),
        }
        .unwrap();
    }
    s
}
