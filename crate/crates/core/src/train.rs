//! Staged training: autoencoder pretraining, self-expression pretraining and
//! full training with pseudo-label self-supervision.
//!
//! Every entry point takes an [`Unlabeled`] view; ground truth never reaches
//! this module.

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::align_labels;
use crate::config::{ExperimentConfig, Schedule};
use crate::data::Unlabeled;
use crate::error::{Error, Result};
use crate::losses::{
    center_loss_and_grad, cq_loss_and_grad, cross_entropy_loss_and_grad, reconstruction_loss_and_grad,
    symmetry_loss_and_grad, total_loss, LossParts,
};
use crate::model::Model;
use crate::nn::{GradientTape, Optimizer, Trace, UpdateRule};
use crate::selfexpr::robust_objective;
use crate::spectral::{make_pseudo_labels, PseudoLabelState};
use crate::tensor::Tensor;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Autoencoder,
    Dscnet,
    Full,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub reconstruction: f64,
    pub self_expression: f64,
    pub cq: f64,
    pub cross_entropy: f64,
    pub center: f64,
    pub symmetry: f64,
    pub total: f64,
    pub lr: f64,
    /// `;`-separated: `refine`, `refine-kept`, `lr-reduced`, `early-stop`.
    pub events: String,
    pub wall_seconds: f64,
}

/// Append-only record of every epoch across stages.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    records: Vec<EpochRecord>,
    /// Why each stage stopped, in stage order.
    pub stop_rules: Vec<(Stage, String)>,
    pub warnings: Vec<String>,
}

impl TrainLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: EpochRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn stage(&self, stage: Stage) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.stage == stage)
    }

    pub fn epochs_run(&self, stage: Stage) -> usize {
        self.stage(stage).count()
    }

    /// Full-stage epochs after which a refinement was attempted.
    pub fn refinement_epochs(&self) -> Vec<usize> {
        self.stage(Stage::Full)
            .filter(|r| r.events.split(';').any(|e| e.starts_with("refine")))
            .map(|r| r.epoch)
            .collect()
    }

    pub fn stop_rule(&self, stage: Stage) -> Option<&str> {
        self.stop_rules.iter().find(|(s, _)| *s == stage).map(|(_, r)| r.as_str())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        let err = |e: csv::Error| Error::Data { path: path.into(), message: e.to_string() };
        for r in &self.records {
            w.serialize(r).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// True when the best of the last `patience` values fails to beat the best
/// before them by at least `min_delta`.
fn stagnated(history: &[f64], patience: usize, min_delta: f64) -> bool {
    if patience == 0 || history.len() <= patience {
        return false;
    }
    let split = history.len() - patience;
    let best = |s: &[f64]| s.iter().copied().fold(f64::INFINITY, f64::min);
    best(&history[split..]) > best(&history[..split]) - min_delta
}

/// Plateau rule: scale `lr` by the plateau factor, down to the minimum,
/// when `history` (losses since the last change) has stagnated.
pub fn lr_schedule_step(history: &[f64], lr: f64, schedule: &Schedule) -> f64 {
    if stagnated(history, schedule.plateau_patience, schedule.min_delta) {
        (lr * schedule.plateau_factor).max(schedule.lr_min)
    } else {
        lr
    }
}

/// Early-stopping rule on the stage's total-loss history.
pub fn should_stop_early(history: &[f64], schedule: &Schedule) -> bool {
    stagnated(history, schedule.early_stop_patience, schedule.min_delta)
}

struct EpochOutcome<T> {
    parts: LossParts<T>,
    total: T,
    events: Vec<&'static str>,
}

/// Shared epoch loop: plateau LR, early stopping and divergence handling.
/// On divergence the model is restored to the last state with a finite loss.
fn run_stage<T, F>(
    stage: Stage,
    budget: usize,
    schedule: &Schedule,
    model: &mut Model<T>,
    log: &mut TrainLog,
    mut epoch_fn: F,
) -> Result<()>
where
    T: Scalar,
    F: FnMut(&mut Model<T>, usize, f64, &mut TrainLog) -> Result<EpochOutcome<T>>,
{
    let mut lr = schedule.lr_start;
    let mut since_change = Vec::new();
    let mut history = Vec::new();
    let mut last_good = model.clone();
    let mut rule = format!("epoch budget of {budget} reached");
    for epoch in 1..=budget {
        let start = Instant::now();
        let before = model.clone();
        let outcome = match epoch_fn(model, epoch, lr, log) {
            Ok(o) if o.total.is_finite() => o,
            Ok(_) | Err(Error::NonFinite(_)) => {
                *model = last_good;
                log.stop_rules.push((stage, format!("diverged at epoch {epoch}")));
                return Err(Error::Diverged {
                    epoch,
                    message: format!("non-finite loss or gradient in {stage:?} stage; model restored to epoch {}", epoch - 1),
                });
            }
            Err(e) => return Err(e),
        };
        last_good = before;
        let total = outcome.total.as_f64();
        history.push(total);
        since_change.push(total);
        let mut events = outcome.events;
        let next = lr_schedule_step(&since_change, lr, schedule);
        let reduced = next < lr;
        if reduced {
            events.push("lr-reduced");
            since_change.clear();
        }
        let stop = should_stop_early(&history, schedule);
        if stop {
            events.push("early-stop");
        }
        let p = outcome.parts;
        log.push(EpochRecord {
            stage,
            epoch,
            reconstruction: p.reconstruction.as_f64(),
            self_expression: p.self_expression.as_f64(),
            cq: p.cq.as_f64(),
            cross_entropy: p.cross_entropy.as_f64(),
            center: p.center.as_f64(),
            symmetry: p.symmetry.as_f64(),
            total,
            lr,
            events: events.join(";"),
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        lr = next;
        if stop {
            rule = format!(
                "early stop: total loss improved by less than {} over {} epochs",
                schedule.min_delta, schedule.early_stop_patience
            );
            break;
        }
    }
    log.stop_rules.push((stage, rule));
    Ok(())
}

fn adam<T: Scalar>() -> Optimizer<T> {
    Optimizer::new(UpdateRule::default())
}

fn flatten<T>(tapes: Vec<GradientTape<T>>) -> Vec<Tensor<T>> {
    tapes.into_iter().flat_map(|t| t.grads).collect()
}

/// Forward pass through the autoencoder; the decoder trace is absent for
/// models without one.
struct AutoencoderPass<T> {
    enc: Trace<T>,
    dec: Option<Trace<T>>,
}

impl<T: Scalar> AutoencoderPass<T> {
    fn run(model: &Model<T>, x: &Tensor<T>) -> Result<Self> {
        let enc = model.encoder.forward_trace(x)?;
        let dec = if model.decoder.is_empty() {
            None
        } else {
            Some(model.decoder.forward_trace(enc.output())?)
        };
        Ok(AutoencoderPass { enc, dec })
    }

    fn latent(&self) -> Array2<T> {
        self.enc.output().to_rows()
    }

    fn reconstruction(&self) -> &Tensor<T> {
        self.dec.as_ref().map_or(self.enc.output(), Trace::output)
    }

    /// Reconstruction loss, its gradient on the latent rows and decoder grads.
    fn reconstruction_grad(&self, model: &Model<T>, x: &Tensor<T>) -> Result<(T, Array2<T>, Vec<Tensor<T>>)> {
        let (loss, g) = reconstruction_loss_and_grad(x, self.reconstruction())?;
        match &self.dec {
            Some(trace) => {
                let (dz, tapes) = model.decoder.backward(trace, &g)?;
                Ok((loss, dz.to_rows(), flatten(tapes)))
            }
            // Identity model: loss does not depend on parameters.
            None => Ok((loss, Array2::zeros((x.batch(), self.enc.output().sample_len())), Vec::new())),
        }
    }

    fn encoder_grads(&self, model: &Model<T>, dz: &Array2<T>) -> Result<Vec<Tensor<T>>> {
        let shape = self.enc.output().shape().to_vec();
        let upstream = Tensor::new(shape, dz.iter().copied().collect())?;
        Ok(flatten(model.encoder.backward(&self.enc, &upstream)?.1))
    }
}

fn step_network<T: Scalar>(model: &mut Model<T>, opt: &mut Optimizer<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
    let params = model.params_mut();
    if params.len() != grads.len() {
        return Err(Error::shape("network gradients", params.len(), grads.len()));
    }
    let pairs = params.into_iter().zip(grads).map(|(p, g)| (p.data_mut(), g.data()));
    opt.step(pairs, T::lit(lr))
}

fn check_data<T: Scalar>(model: &Model<T>, data: &Unlabeled<'_, T>) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("training data is empty"));
    }
    if data.k != model.k {
        return Err(Error::invalid(format!("data has k={}, model has k={}", data.k, model.k)));
    }
    data.samples.ensure_finite("training samples")
}

/// Loss terms, total and gradients of one full-batch evaluation. `network`
/// follows [`Model::params`]; `c` is present when the objective involves
/// the representation matrix.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub parts: LossParts<T>,
    pub total: T,
    pub network: Vec<Tensor<T>>,
    pub c: Option<Array2<T>>,
}

fn representation<T: Scalar>(model: &Model<T>) -> Result<&Array2<T>> {
    model
        .c
        .as_ref()
        .map(|c| c.matrix())
        .ok_or_else(|| Error::invalid("model has no representation matrix"))
}

/// Reconstruction loss alone.
pub fn autoencoder_objective<T: Scalar>(model: &Model<T>, x: &Tensor<T>) -> Result<Gradients<T>> {
    let pass = AutoencoderPass::run(model, x)?;
    let (rec, dz, dec_grads) = pass.reconstruction_grad(model, x)?;
    let mut network = pass.encoder_grads(model, &dz)?;
    network.extend(dec_grads);
    let parts = LossParts {
        reconstruction: rec,
        ..Default::default()
    };
    Ok(Gradients { parts, total: rec, network, c: None })
}

/// `lambda1 * reconstruction + lambda2 * (error + gamma * regularizer)`.
pub fn dscnet_objective<T: Scalar>(model: &Model<T>, x: &Tensor<T>, cfg: &ExperimentConfig) -> Result<Gradients<T>> {
    let w = cfg.loss;
    let c = representation(model)?;
    let pass = AutoencoderPass::run(model, x)?;
    let obj = robust_objective(&pass.latent().t().to_owned(), c, &cfg.objective_spec(model.k))?;
    let (rec, dz_rec, dec_grads) = pass.reconstruction_grad(model, x)?;
    let dz = dz_rec * T::lit(w.lambda1) + &(obj.grad_z.t().to_owned() * T::lit(w.lambda2));
    let mut network = pass.encoder_grads(model, &dz)?;
    network.extend(dec_grads);
    let parts = LossParts {
        reconstruction: rec,
        self_expression: obj.loss,
        ..Default::default()
    };
    Ok(Gradients {
        parts,
        total: T::lit(w.lambda1) * rec + T::lit(w.lambda2) * obj.loss,
        network,
        c: Some(obj.grad_c * T::lit(w.lambda2)),
    })
}

/// The six-term loss against fixed pseudo-labels and fixed logit centroids.
pub fn full_objective<T: Scalar>(
    model: &Model<T>,
    x: &Tensor<T>,
    targets: &PseudoLabelState<T>,
    centroids: &Array2<T>,
    cfg: &ExperimentConfig,
) -> Result<Gradients<T>> {
    let w = cfg.loss;
    let c = representation(model)?;
    let head = model.head.as_ref().ok_or_else(|| Error::invalid("model has no classifier head"))?;
    let pass = AutoencoderPass::run(model, x)?;
    let z = pass.latent();
    let obj = robust_objective(&z.t().to_owned(), c, &cfg.objective_spec(model.k))?;
    let (rec, dz_rec, dec_grads) = pass.reconstruction_grad(model, x)?;
    let (cq, g_cq) = cq_loss_and_grad(c, &targets.q_onehot)?;
    let (sym, g_sym) = symmetry_loss_and_grad(c)?;

    let logits = head.logits(z.view())?;
    let (ce, g_ce) = cross_entropy_loss_and_grad(&logits, &targets.q_onehot)?;
    let (center, g_center) = center_loss_and_grad(&logits, &targets.labels, centroids)?;
    let dlogits = g_ce * T::lit(w.lambda4) + &(g_center * T::lit(w.lambda5));
    let (dz_head, head_tape) = head.backward(z.view(), &dlogits)?;

    let dz = dz_rec * T::lit(w.lambda1) + &(obj.grad_z.t().to_owned() * T::lit(w.lambda2)) + &dz_head;
    let mut network = pass.encoder_grads(model, &dz)?;
    network.extend(dec_grads);
    network.extend(head_tape.grads);
    let mut grad_c = obj.grad_c * T::lit(w.lambda2) + &(g_cq * T::lit(w.lambda3)) + &(g_sym * T::lit(w.lambda6));
    grad_c.diag_mut().fill(T::zero());

    let parts = LossParts {
        reconstruction: rec,
        self_expression: obj.loss,
        cq,
        cross_entropy: ce,
        center,
        symmetry: sym,
    };
    Ok(Gradients {
        parts,
        total: total_loss(&parts, &w),
        network,
        c: Some(grad_c),
    })
}

fn apply<T: Scalar>(model: &mut Model<T>, g: &Gradients<T>, opt: &mut Optimizer<T>, c_opt: &mut Optimizer<T>, lr: f64) -> Result<()> {
    step_network(model, opt, &g.network, lr)?;
    if let (Some(grad), Some(c)) = (&g.c, model.c.as_mut()) {
        c.step(c_opt, grad, lr)?;
    }
    Ok(())
}

/// Trains encoder and decoder on the reconstruction loss alone.
pub fn pretrain_autoencoder<T: Scalar>(
    model: &mut Model<T>,
    data: Unlabeled<'_, T>,
    cfg: &ExperimentConfig,
    log: &mut TrainLog,
) -> Result<()> {
    check_data(model, &data)?;
    let x = data.samples;
    let (mut opt, mut c_opt) = (adam(), adam());
    run_stage(Stage::Autoencoder, cfg.schedule.ae_epochs, &cfg.schedule, model, log, |model, _, lr, _| {
        let g = autoencoder_objective(model, x)?;
        apply(model, &g, &mut opt, &mut c_opt, lr)?;
        Ok(EpochOutcome { parts: g.parts, total: g.total, events: Vec::new() })
    })
}

/// Adds the self-expression layer and trains it with the autoencoder on
/// weighted reconstruction plus the robust self-expression objective.
pub fn pretrain_dscnet<T: Scalar>(
    model: &mut Model<T>,
    data: Unlabeled<'_, T>,
    cfg: &ExperimentConfig,
    log: &mut TrainLog,
) -> Result<()> {
    check_data(model, &data)?;
    let x = data.samples;
    model.ensure_c(data.len())?;
    let (mut opt, mut c_opt) = (adam(), adam());
    run_stage(Stage::Dscnet, cfg.schedule.dsc_epochs, &cfg.schedule, model, log, |model, _, lr, _| {
        let g = dscnet_objective(model, x, cfg)?;
        apply(model, &g, &mut opt, &mut c_opt, lr)?;
        Ok(EpochOutcome { parts: g.parts, total: g.total, events: Vec::new() })
    })
}

/// Adds the classifier head and trains everything on the six-term loss.
/// Pseudo-labels start from the current `C`, stay frozen for the warm-up
/// epochs and are refreshed every `t0` epochs after that. Returns the final
/// pseudo-labels.
pub fn train_full<T: Scalar>(
    model: &mut Model<T>,
    data: Unlabeled<'_, T>,
    cfg: &ExperimentConfig,
    log: &mut TrainLog,
) -> Result<PseudoLabelState<T>> {
    check_data(model, &data)?;
    let x = data.samples;
    model.ensure_c(data.len())?;
    model.ensure_head(&mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let mut state = make_pseudo_labels(representation(model)?, data.k, &cfg.postprocess, cfg.seed)?;
    let (mut opt, mut c_opt) = (adam(), adam());
    run_stage(Stage::Full, cfg.schedule.t_max, &cfg.schedule, model, log, |model, epoch, lr, log| {
        let logits = {
            let head = model.head.as_ref().expect("head present");
            head.logits(model.encode(x)?.view())?
        };
        let head = model.head.as_mut().expect("head present");
        head.update_centroids(&logits, &state.labels)?;
        let centroids = head.centroids.clone();
        let g = full_objective(model, x, &state, &centroids, cfg)?;
        apply(model, &g, &mut opt, &mut c_opt, lr)?;
        let mut events = Vec::new();
        if cfg.schedule.is_refinement_epoch(epoch) {
            events.push(refine(&mut state, representation(model)?, cfg, epoch, log));
        }
        Ok(EpochOutcome { parts: g.parts, total: g.total, events })
    })?;
    Ok(state)
}

/// Re-clusters `C` and adopts the new labels, renamed to match the old
/// ones, unless fewer than `k` clusters come back or clustering fails.
fn refine<T: Scalar>(
    state: &mut PseudoLabelState<T>,
    c: &Array2<T>,
    cfg: &ExperimentConfig,
    epoch: usize,
    log: &mut TrainLog,
) -> &'static str {
    let k = state.k();
    let fresh = make_pseudo_labels::<T>(c, k, &cfg.postprocess, cfg.seed).and_then(|s| {
        if s.nonempty_clusters() < k {
            return Err(Error::Convergence(format!("only {} of {k} clusters are nonempty", s.nonempty_clusters())));
        }
        let aligned = align_labels(&state.labels, &s.labels, k)?;
        PseudoLabelState::from_labels(aligned, k, epoch)
    });
    match fresh {
        Ok(s) => {
            *state = s;
            "refine"
        }
        Err(e) => {
            let msg = format!("epoch {epoch}: refinement kept previous labels: {e}");
            log::warn!("{msg}");
            log.warnings.push(msg);
            "refine-kept"
        }
    }
}

/// Runs all three stages in order and returns the final pseudo-labels.
pub fn train_pipeline<T: Scalar>(
    model: &mut Model<T>,
    data: Unlabeled<'_, T>,
    cfg: &ExperimentConfig,
    log: &mut TrainLog,
) -> Result<PseudoLabelState<T>> {
    pretrain_autoencoder(model, data, cfg, log)?;
    pretrain_dscnet(model, data, cfg, log)?;
    train_full(model, data, cfg, log)
}
