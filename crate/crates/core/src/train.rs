//! Training loops for the vanilla, reverse-guidance, shape-regularized and combined objectives.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{argmax, ranked_output_variance_in, MetricsLog, MetricsRow, VarianceReport, VarianceSpace};
use crate::checkpoint::{Checkpoint, CheckpointManifest, NamedTensor};
use crate::data::{assemble_batch, build_batches, AugmentationPolicy, BatchPlan, Dataset, LabeledImageDataset};
use crate::error::{Error, Result};
use crate::losses::{ascending_permutation, ce_kernel, check_coefficient, kl_kernel, Temperature};
use crate::model::{attach_auxiliary, model_registry, AcSpec, BlockSequentialModel, Scaffold, TapPoint};
use crate::nn::{Mode, Param};
use crate::optim::{LrSchedule, Sgd};
use crate::rng::stream_seed;
use crate::tensor::Tensor;

const AUGMENT_STREAM: u64 = 0xA0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Vanilla,
    Drg,
    Dsr,
    Combined,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Vanilla, Method::Drg, Method::Dsr, Method::Combined];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Drg => "drg",
            Method::Dsr => "dsr",
            Method::Combined => "combined",
        }
    }

    /// Table label.
    pub fn label(self) -> &'static str {
        match self {
            Method::Vanilla => "Vanilla",
            Method::Drg => "DRG",
            Method::Dsr => "DSR",
            Method::Combined => "DRG+DSR",
        }
    }

    /// Whether the method trains with an auxiliary classifier.
    pub fn uses_aux(self) -> bool {
        matches!(self, Method::Drg | Method::Combined)
    }

    /// Whether the method uses the ranked-logit cache.
    pub fn uses_sr(self) -> bool {
        matches!(self, Method::Dsr | Method::Combined)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| Error::UnknownName {
            kind: "method",
            name: s.to_string(),
            available: Method::ALL.iter().map(|m| m.as_str().to_string()).collect(),
        })
    }
}

/// What the shape term compares against on the very first iteration, when no cache exists yet.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SrFirstStep {
    /// No shape term at iteration 0.
    #[default]
    Skip,
    /// Compare against all-zero ranked logits, i.e. a uniform target.
    Uniform,
}

impl SrFirstStep {
    pub fn as_str(self) -> &'static str {
        match self {
            SrFirstStep::Skip => "skip",
            SrFirstStep::Uniform => "uniform",
        }
    }
}

impl FromStr for SrFirstStep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skip" => Ok(SrFirstStep::Skip),
            "uniform" => Ok(SrFirstStep::Uniform),
            _ => Err(Error::UnknownName {
                kind: "sr_first_step",
                name: s.to_string(),
                available: vec!["skip".into(), "uniform".into()],
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub method: Method,
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub tau_drg: Temperature,
    pub tau_dsr: Temperature,
    pub alpha: f64,
    pub beta: f64,
    pub tap: TapPoint,
    /// Auxiliary conv width; `None` is twice the tapped width.
    pub ac_channels: Option<usize>,
    pub batch: BatchPlan,
    pub augmentation: Option<AugmentationPolicy>,
    pub seed: u64,
    pub teacher_detach: bool,
    pub sr_first_step: SrFirstStep,
    pub variance_space: VarianceSpace,
    /// Reports zero timings so logs are byte-identical across runs.
    pub deterministic: bool,
}

impl TrainingConfig {
    /// Full-length protocol: 200 epochs, milestones 60/120/160, alpha 0.2, beta 1, tau 1 and 4.
    pub fn new(method: Method) -> Self {
        Self {
            method,
            epochs: 200,
            schedule: LrSchedule::cifar100(),
            momentum: 0.9,
            weight_decay: 5e-4,
            tau_drg: Temperature::ONE,
            tau_dsr: Temperature::new(4.0).expect("positive"),
            alpha: 0.2,
            beta: 1.0,
            tap: TapPoint(2),
            ac_channels: None,
            batch: BatchPlan { batch_size: 128, shuffle_seed: 0, drop_last: false },
            augmentation: None,
            seed: 0,
            teacher_detach: false,
            sr_first_step: SrFirstStep::Skip,
            variance_space: VarianceSpace::Logits,
            deterministic: true,
        }
    }

    /// The same protocol compressed to 30 epochs, decaying by 0.2 at epochs 9, 18 and 24.
    pub fn desk(method: Method) -> Self {
        Self {
            epochs: 30,
            schedule: LrSchedule { initial: 0.1, milestones: vec![9, 18, 24], factor: 0.2 },
            ..Self::new(method)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        self.schedule.validate(self.epochs)?;
        check_coefficient("alpha", self.alpha)?;
        check_coefficient("beta", self.beta)?;
        check_coefficient("weight_decay", self.weight_decay)?;
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::invalid(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.batch.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if self.tap.0 == 0 {
            return Err(Error::invalid("tap must be >= 1"));
        }
        if self.ac_channels == Some(0) {
            return Err(Error::invalid("ac_channels must be >= 1"));
        }
        Ok(())
    }

    pub fn objective_weights(&self) -> ObjectiveWeights {
        ObjectiveWeights {
            alpha: if self.method.uses_aux() { self.alpha } else { 0.0 },
            beta: if self.method.uses_sr() { self.beta } else { 0.0 },
            tau_drg: self.tau_drg,
            tau_dsr: self.tau_dsr,
            teacher_detach: self.teacher_detach,
        }
    }
}

/// Coefficients of `L_HL + alpha * L_RG + beta * L_SR`; inactive terms carry zero weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveWeights {
    pub alpha: f64,
    pub beta: f64,
    pub tau_drg: Temperature,
    pub tau_dsr: Temperature,
    pub teacher_detach: bool,
}

/// Batch means of each term and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub main_ce: f64,
    /// Zero without an auxiliary classifier.
    pub aux_ce: f64,
    /// `tau^2 * KL(aux || main)`, before `alpha`.
    pub reverse_guidance: f64,
    /// `tau^2 * KL(cached || current)` on ranked rows, before `beta`.
    pub shape_regularization: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss {
    pub breakdown: LossBreakdown,
    pub grad_main: Tensor,
    pub grad_aux: Option<Tensor>,
}

/// Batch-mean objective and its gradients with respect to both logit batches.
///
/// `prev_ranked` pairs row `i` of the cache with row `i` of `main`; the longer side is truncated.
pub fn batch_loss(
    main: &Tensor,
    aux: Option<&Tensor>,
    labels: &[usize],
    prev_ranked: Option<&[Vec<f64>]>,
    weights: &ObjectiveWeights,
) -> Result<BatchLoss> {
    let n = main.batch();
    if n == 0 || main.shape().len() != 2 || labels.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("[{}, K] logits", labels.len()),
            actual: format!("{:?}", main.shape()),
        });
    }
    let k = main.item_len();
    if let Some(&y) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::invalid(format!("label {y} out of range for {k} classes")));
    }
    if let Some(a) = aux {
        if a.shape() != main.shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", main.shape()),
                actual: format!("{:?}", a.shape()),
            });
        }
    }
    let inv = 1.0 / n as f64;
    let mut grad_main = Tensor::zeros(&[n, k]);
    let mut grad_aux = aux.map(|_| Tensor::zeros(&[n, k]));
    let mut out = LossBreakdown::default();

    for (i, &y) in labels.iter().enumerate() {
        let g = &mut grad_main.data_mut()[i * k..(i + 1) * k];
        out.main_ce += ce_kernel(main.item(i), y, inv, Some(g));
    }
    out.main_ce *= inv;

    if let (Some(aux), Some(grad_aux)) = (aux, grad_aux.as_mut()) {
        let tau = weights.tau_drg;
        let w = weights.alpha * tau.kl_scale() * inv;
        for (i, &y) in labels.iter().enumerate() {
            let ga = &mut grad_aux.data_mut()[i * k..(i + 1) * k];
            out.aux_ce += ce_kernel(aux.item(i), y, inv, Some(&mut *ga));
            let gm = &mut grad_main.data_mut()[i * k..(i + 1) * k];
            let kl =
                kl_kernel(aux.item(i), main.item(i), tau.value(), w, (!weights.teacher_detach).then_some(ga), Some(gm));
            out.reverse_guidance += tau.kl_scale() * kl;
        }
        out.aux_ce *= inv;
        out.reverse_guidance *= inv;
    }

    if let Some(prev) = prev_ranked {
        let m = prev.len().min(n);
        if m > 0 {
            let tau = weights.tau_dsr;
            let w = weights.beta * tau.kl_scale() / m as f64;
            let mut ranked = vec![0.0; k];
            let mut ranked_grad = vec![0.0; k];
            for (i, target) in prev.iter().take(m).enumerate() {
                if target.len() != k {
                    return Err(Error::ClassCountMismatch { left: target.len(), right: k });
                }
                let row = main.item(i);
                let perm = ascending_permutation(row);
                for (r, &src) in ranked.iter_mut().zip(&perm) {
                    *r = row[src];
                }
                ranked_grad.iter_mut().for_each(|g| *g = 0.0);
                let kl = kl_kernel(target, &ranked, tau.value(), w, None, Some(&mut ranked_grad));
                let gm = &mut grad_main.data_mut()[i * k..(i + 1) * k];
                for (g, &src) in ranked_grad.iter().zip(&perm) {
                    gm[src] += g;
                }
                out.shape_regularization += tau.kl_scale() * kl;
            }
            out.shape_regularization /= m as f64;
        }
    }

    out.total =
        (out.main_ce + out.aux_ce) + weights.alpha * out.reverse_guidance + weights.beta * out.shape_regularization;
    Ok(BatchLoss { breakdown: out, grad_main, grad_aux })
}

/// Ranked logits of one batch, kept as a constant target for the next iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedLogitsCache {
    rows: Vec<Vec<f64>>,
    iteration: u64,
}

impl RankedLogitsCache {
    /// Sorts each row of `[N, K]` logits ascending.
    pub fn from_logits(logits: &Tensor, iteration: u64) -> Self {
        let rows = (0..logits.batch())
            .map(|i| {
                let mut r = logits.item(i).to_vec();
                r.sort_by(f64::total_cmp);
                r
            })
            .collect();
        Self { rows, iteration }
    }

    /// Rows must already be non-decreasing.
    pub fn new(rows: Vec<Vec<f64>>, iteration: u64) -> Result<Self> {
        if rows.iter().any(|r| r.windows(2).any(|w| w[0] > w[1])) {
            return Err(Error::invalid("cached ranked rows must be non-decreasing"));
        }
        Ok(Self { rows, iteration })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn batch_size_recorded(&self) -> usize {
        self.rows.len()
    }

    /// Iteration that produced these rows.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }
}

type SrTarget = (Vec<Vec<f64>>, Option<u64>);

/// Position of a trainer in its run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    /// Completed iterations.
    pub iteration: u64,
}

/// A bare model, or a model with its auxiliary classifier.
pub enum Network {
    Plain(BlockSequentialModel),
    Scaffolded(Scaffold),
}

impl Network {
    pub fn model(&self) -> &BlockSequentialModel {
        match self {
            Network::Plain(m) => m,
            Network::Scaffolded(s) => s.model(),
        }
    }

    pub fn tap(&self) -> Option<TapPoint> {
        match self {
            Network::Plain(_) => None,
            Network::Scaffolded(s) => Some(s.tap()),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.model().num_classes()
    }

    /// Main logits, plus auxiliary logits when scaffolded.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Option<Tensor>)> {
        match self {
            Network::Plain(m) => Ok((m.forward(x, mode)?, None)),
            Network::Scaffolded(s) => {
                let out = s.forward_dual(x, mode)?;
                Ok((out.main_logits, Some(out.aux_logits)))
            }
        }
    }

    pub fn forward_main(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Network::Plain(m) => m.forward(x, mode),
            Network::Scaffolded(s) => s.forward_main(x, mode),
        }
    }

    fn backward(&mut self, grad_main: &Tensor, grad_aux: Option<&Tensor>) {
        match (self, grad_aux) {
            (Network::Plain(m), _) => m.backward(grad_main),
            (Network::Scaffolded(s), Some(ga)) => s.backward_dual(grad_main, ga),
            (Network::Scaffolded(s), None) => s.backward_dual(grad_main, &Tensor::zeros(grad_main.shape())),
        }
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param)) {
        match self {
            Network::Plain(m) => m.visit(f),
            Network::Scaffolded(s) => s.visit(f),
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        match self {
            Network::Plain(m) => m.visit_mut(f),
            Network::Scaffolded(s) => s.visit_mut(f),
        }
    }

    /// Trainable scalars, auxiliary classifier included.
    pub fn parameter_count(&self) -> usize {
        match self {
            Network::Plain(m) => m.parameter_count(),
            Network::Scaffolded(s) => s.parameter_count(),
        }
    }

    fn zero_grads(&mut self) {
        self.visit_mut(&mut |p| p.grad.iter_mut().for_each(|g| *g = 0.0));
    }

    fn ac_channels(&self) -> Option<usize> {
        match self {
            Network::Plain(_) => None,
            Network::Scaffolded(s) => Some(s.aux().channels()),
        }
    }

    /// Copies every parameter and buffer value.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.push(p.value.clone()));
        out
    }
}

/// Builds the registered model, with an auxiliary classifier when the method needs one.
pub fn build_network(model: &str, num_classes: usize, in_channels: usize, config: &TrainingConfig) -> Result<Network> {
    let base = model_registry(model, num_classes, in_channels, config.seed)?;
    if config.method.uses_aux() {
        let spec = AcSpec { channels: config.ac_channels, num_classes };
        Ok(Network::Scaffolded(attach_auxiliary(base, config.tap, spec, config.seed)?))
    } else {
        Ok(Network::Plain(base))
    }
}

/// Rebuilds the network recorded in a checkpoint and loads its parameters and buffers.
pub fn restore_network(checkpoint: &Checkpoint) -> Result<Network> {
    let m = &checkpoint.manifest;
    let base = model_registry(&m.model, m.num_classes, m.in_channels, m.seed)?;
    let mut network = match m.tap {
        None => Network::Plain(base),
        Some(tap) => {
            let spec = AcSpec { channels: m.ac_channels, num_classes: m.num_classes };
            Network::Scaffolded(attach_auxiliary(base, TapPoint(tap), spec, m.seed)?)
        }
    };
    load_parameters(&mut network, checkpoint)?;
    Ok(network)
}

fn param_key(index: usize, name: &str) -> String {
    format!("param/{index:04}/{name}")
}

fn load_parameters(network: &mut Network, checkpoint: &Checkpoint) -> Result<()> {
    let stored: Vec<&NamedTensor> = checkpoint.tensors_with_prefix("param/").collect();
    let mut index = 0;
    let mut failure = None;
    network.visit_mut(&mut |p| {
        if failure.is_some() {
            return;
        }
        match stored.get(index) {
            Some(t) if t.name == param_key(index, &p.name) && t.values.len() == p.len() => {
                p.value.copy_from_slice(&t.values);
            }
            _ => failure = Some(format!("parameter {index} (`{}`) does not match the checkpoint", p.name)),
        }
        index += 1;
    });
    if let Some(msg) = failure {
        return Err(Error::Checkpoint(msg));
    }
    if index != stored.len() {
        return Err(Error::Checkpoint(format!("checkpoint holds {} parameters, network has {index}", stored.len())));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// 0-based index of this iteration.
    pub iteration: u64,
    pub learning_rate: f64,
    pub loss: LossBreakdown,
    pub correct: usize,
    pub batch_size: usize,
    /// Iteration that produced the shape-term target, if the term was active.
    pub sr_target_iteration: Option<u64>,
}

/// Summary of one split after one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub logits: Tensor,
    pub labels: Vec<usize>,
    pub top1_accuracy: f64,
    /// Mean cross-entropy of the main head.
    pub mean_loss: f64,
    pub variance: VarianceReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub train: MetricsRow,
    pub test: MetricsRow,
}

pub struct Trainer {
    network: Network,
    config: TrainingConfig,
    optimizer: Sgd,
    state: TrainState,
    cache: Option<RankedLogitsCache>,
    log: MetricsLog,
    loss_trace: Vec<f64>,
}

impl Trainer {
    pub fn new(network: Network, config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        match (&network, config.method.uses_aux()) {
            (Network::Plain(_), true) => {
                return Err(Error::invalid(format!("method `{}` needs an auxiliary classifier", config.method)))
            }
            (Network::Scaffolded(s), true) if s.tap() != config.tap => {
                return Err(Error::invalid(format!(
                    "network tap {} differs from configured tap {}",
                    s.tap(),
                    config.tap
                )))
            }
            _ => {}
        }
        let optimizer = Sgd::new(config.momentum, config.weight_decay);
        Ok(Self {
            network,
            config,
            optimizer,
            state: TrainState::default(),
            cache: None,
            log: MetricsLog::new(),
            loss_trace: Vec::new(),
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    pub fn into_network(self) -> Network {
        self.network
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn state(&self) -> TrainState {
        self.state
    }

    pub fn log(&self) -> &MetricsLog {
        &self.log
    }

    /// Total loss of every iteration run so far.
    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    pub fn cache(&self) -> Option<&RankedLogitsCache> {
        self.cache.as_ref()
    }

    /// Replaces the shape-term target used by the next step.
    pub fn set_cache(&mut self, cache: Option<RankedLogitsCache>) {
        self.cache = cache;
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.schedule.lr_at(self.state.epoch)
    }

    /// Objective on one batch at the current parameters, without updating anything but BN statistics.
    pub fn batch_loss(&mut self, x: &Tensor, labels: &[usize]) -> Result<BatchLoss> {
        let (main, aux) = self.network.forward(x, Mode::Train)?;
        let prev = self.sr_target(main.batch(), main.item_len())?;
        batch_loss(
            &main,
            aux.as_ref(),
            labels,
            prev.as_ref().map(|(rows, _)| rows.as_slice()),
            &self.config.objective_weights(),
        )
    }

    /// Target rows for the shape term and the iteration that produced them.
    fn sr_target(&self, n: usize, k: usize) -> Result<Option<SrTarget>> {
        if !self.config.method.uses_sr() {
            return Ok(None);
        }
        let t = self.state.iteration;
        match &self.cache {
            Some(c) if c.iteration + 1 == t => Ok(Some((c.rows.clone(), Some(c.iteration)))),
            Some(c) => Err(Error::invalid(format!(
                "ranked-logit cache is from iteration {}, expected {}",
                c.iteration,
                t.wrapping_sub(1)
            ))),
            None if t == 0 && self.config.sr_first_step == SrFirstStep::Uniform => {
                Ok(Some((vec![vec![0.0; k]; n], None)))
            }
            None if t == 0 => Ok(None),
            None => Err(Error::invalid(format!("ranked-logit cache missing at iteration {t}"))),
        }
    }

    /// One forward, loss, backward and SGD update.
    pub fn step(&mut self, x: &Tensor, labels: &[usize]) -> Result<StepRecord> {
        self.step_with_logits(x, labels).map(|(r, _)| r)
    }

    fn step_with_logits(&mut self, x: &Tensor, labels: &[usize]) -> Result<(StepRecord, Tensor)> {
        let t = self.state.iteration;
        let lr = self.learning_rate();
        let (main, aux) = self.network.forward(x, Mode::Train)?;
        let prev = self.sr_target(main.batch(), main.item_len())?;
        let loss = batch_loss(
            &main,
            aux.as_ref(),
            labels,
            prev.as_ref().map(|(rows, _)| rows.as_slice()),
            &self.config.objective_weights(),
        )?;
        let total = loss.breakdown.total;
        if !total.is_finite() {
            return Err(Error::Divergence { epoch: self.state.epoch + 1, iteration: t, loss: total });
        }
        self.network.zero_grads();
        self.network.backward(&loss.grad_main, loss.grad_aux.as_ref());
        let network = &mut self.network;
        self.optimizer.step(lr, |f| network.visit_mut(f));
        if self.config.method.uses_sr() {
            self.cache = Some(RankedLogitsCache::from_logits(&main, t));
        }
        self.state.iteration += 1;
        self.loss_trace.push(total);
        let correct = (0..labels.len()).filter(|&i| argmax(main.item(i)) == labels[i]).count();
        let record = StepRecord {
            iteration: t,
            learning_rate: lr,
            loss: loss.breakdown,
            correct,
            batch_size: labels.len(),
            sr_target_iteration: prev.and_then(|(_, it)| it),
        };
        Ok((record, main))
    }

    /// Runs one epoch over `train` and returns its metrics row. Does not touch the log.
    pub fn train_epoch(&mut self, train: &Dataset) -> Result<MetricsRow> {
        let epoch = self.state.epoch;
        let lr = self.learning_rate();
        let batches = build_batches(train.len(), &self.config.batch, epoch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.config.seed, AUGMENT_STREAM, epoch as u64));
        let policy = self.config.augmentation;
        let k = self.network.num_classes();
        let mut all_logits = Vec::with_capacity(train.len() * k);
        let (mut correct, mut seen, mut loss_sum, mut seconds) = (0, 0, 0.0, 0.0);
        for indices in &batches {
            let (x, labels) = assemble_batch(train, indices, policy.as_ref(), &mut rng);
            let start = Instant::now();
            let (record, logits) = self.step_with_logits(&x, &labels)?;
            seconds += start.elapsed().as_secs_f64();
            correct += record.correct;
            seen += record.batch_size;
            loss_sum += record.loss.total * record.batch_size as f64;
            all_logits.extend_from_slice(logits.data());
        }
        self.state.epoch += 1;
        let logits = Tensor::new(vec![seen, k], all_logits)?;
        Ok(MetricsRow {
            epoch: epoch + 1,
            split: "train".into(),
            top1_accuracy: correct as f64 / seen as f64,
            mean_loss: loss_sum / seen as f64,
            ranked_output_variance: ranked_output_variance_in(&logits, self.config.variance_space)?.mean,
            seconds_per_iteration: self.timing(seconds / batches.len() as f64),
            learning_rate: lr,
        })
    }

    fn timing(&self, seconds: f64) -> f64 {
        if self.config.deterministic {
            0.0
        } else {
            seconds
        }
    }

    /// Evaluation-mode pass over `dataset` in index order. Parameters and buffers are left untouched.
    pub fn evaluate(&mut self, dataset: &Dataset) -> Result<Evaluation> {
        evaluate_network(&mut self.network, dataset, self.config.batch.batch_size, self.config.variance_space)
    }

    /// Trains one epoch, evaluates the test split and appends both rows to the log.
    pub fn run_epoch(&mut self, data: &LabeledImageDataset) -> Result<EpochReport> {
        let train = self.train_epoch(&data.train)?;
        let start = Instant::now();
        let eval = self.evaluate(&data.test)?;
        let batches = data.test.len().div_ceil(self.config.batch.batch_size);
        let test = MetricsRow {
            epoch: train.epoch,
            split: "test".into(),
            top1_accuracy: eval.top1_accuracy,
            mean_loss: eval.mean_loss,
            ranked_output_variance: eval.variance.mean,
            seconds_per_iteration: self.timing(start.elapsed().as_secs_f64() / batches as f64),
            learning_rate: train.learning_rate,
        };
        self.log.push(train.clone())?;
        self.log.push(test.clone())?;
        Ok(EpochReport { train, test })
    }

    /// Runs the remaining epochs.
    pub fn fit(&mut self, data: &LabeledImageDataset) -> Result<()> {
        while self.state.epoch < self.config.epochs {
            self.run_epoch(data)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self, config_hash: &str) -> Checkpoint {
        let model = self.network.model();
        let mut tensors = Vec::new();
        let mut index = 0;
        self.network.visit(&mut |p| {
            tensors.push(NamedTensor { name: param_key(index, &p.name), values: p.value.clone() });
            index += 1;
        });
        for (i, v) in self.optimizer.velocity().iter().enumerate() {
            tensors.push(NamedTensor { name: format!("velocity/{i:04}"), values: v.clone() });
        }
        if let Some(c) = &self.cache {
            tensors.push(NamedTensor { name: "sr_cache".into(), values: c.rows.concat() });
        }
        Checkpoint {
            manifest: CheckpointManifest {
                model: model.spec().name.clone(),
                num_classes: model.num_classes(),
                in_channels: model.spec().in_channels,
                method: self.config.method.as_str().into(),
                tap: self.network.tap().map(|t| t.0),
                ac_channels: self.network.ac_channels(),
                epoch: self.state.epoch,
                iteration: self.state.iteration,
                seed: self.config.seed,
                config_hash: config_hash.into(),
                sr_cache_iteration: self.cache.as_ref().map(|c| c.iteration),
            },
            tensors,
        }
    }

    /// Continues a run from `checkpoint` as if it had never stopped.
    pub fn resume(checkpoint: &Checkpoint, config: TrainingConfig) -> Result<Self> {
        let m = &checkpoint.manifest;
        if m.method != config.method.as_str() {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained with `{}`, config asks for `{}`",
                m.method, config.method
            )));
        }
        let network = restore_network(checkpoint)?;
        let mut trainer = Trainer::new(network, config)?;
        trainer.state = TrainState { epoch: m.epoch, iteration: m.iteration };
        trainer.optimizer.set_velocity(checkpoint.tensors_with_prefix("velocity/").map(|t| t.values.clone()).collect());
        if let Some(it) = m.sr_cache_iteration {
            let flat = checkpoint
                .tensor("sr_cache")
                .ok_or_else(|| Error::Checkpoint("manifest names a ranked-logit cache but none is stored".into()))?;
            let rows = flat.chunks(m.num_classes).map(|r| r.to_vec()).collect();
            trainer.cache = Some(RankedLogitsCache::new(rows, it)?);
        }
        Ok(trainer)
    }
}

/// Evaluation-mode logits, accuracy, mean cross-entropy and ranked variance over a split.
pub fn evaluate_network(
    network: &mut Network,
    dataset: &Dataset,
    batch_size: usize,
    space: VarianceSpace,
) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::invalid(format!("split `{}` is empty", dataset.split.as_str())));
    }
    let k = network.num_classes();
    if dataset.num_classes != k {
        return Err(Error::ClassCountMismatch { left: dataset.num_classes, right: k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let mut all = Vec::with_capacity(dataset.len() * k);
    let mut labels = Vec::with_capacity(dataset.len());
    let mut loss_sum = 0.0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, y) = assemble_batch(dataset, chunk, None, &mut rng);
        let logits = network.forward_main(&x, Mode::Eval)?;
        for (i, &label) in y.iter().enumerate() {
            loss_sum += ce_kernel(logits.item(i), label, 1.0, None);
        }
        all.extend_from_slice(logits.data());
        labels.extend(y);
    }
    let logits = Tensor::new(vec![labels.len(), k], all)?;
    let correct = (0..labels.len()).filter(|&i| argmax(logits.item(i)) == labels[i]).count();
    Ok(Evaluation {
        top1_accuracy: correct as f64 / labels.len() as f64,
        mean_loss: loss_sum / labels.len() as f64,
        variance: ranked_output_variance_in(&logits, space)?,
        logits,
        labels,
    })
}

/// A trained network with its per-epoch log and per-iteration losses.
pub struct TrainOutcome {
    pub network: Network,
    pub log: MetricsLog,
    pub loss_trace: Vec<f64>,
}

fn run(
    network: Network,
    data: &LabeledImageDataset,
    config: &TrainingConfig,
    expected: Method,
) -> Result<TrainOutcome> {
    if config.method != expected {
        return Err(Error::invalid(format!("config method is `{}`, expected `{expected}`", config.method)));
    }
    let mut trainer = Trainer::new(network, config.clone())?;
    trainer.fit(data)?;
    Ok(TrainOutcome { log: trainer.log.clone(), loss_trace: trainer.loss_trace.clone(), network: trainer.network })
}

/// Batch-mean cross-entropy only.
pub fn train_vanilla(
    model: BlockSequentialModel,
    data: &LabeledImageDataset,
    config: &TrainingConfig,
) -> Result<TrainOutcome> {
    run(Network::Plain(model), data, config, Method::Vanilla)
}

/// Hard-label loss on both heads plus `alpha`-weighted reverse guidance from the auxiliary head.
pub fn train_drg(scaffold: Scaffold, data: &LabeledImageDataset, config: &TrainingConfig) -> Result<TrainOutcome> {
    run(Network::Scaffolded(scaffold), data, config, Method::Drg)
}

/// Cross-entropy plus `beta`-weighted alignment of ranked logits with the previous iteration's.
pub fn train_dsr(
    model: BlockSequentialModel,
    data: &LabeledImageDataset,
    config: &TrainingConfig,
) -> Result<TrainOutcome> {
    run(Network::Plain(model), data, config, Method::Dsr)
}

/// Both regularizers together.
pub fn train_combined(scaffold: Scaffold, data: &LabeledImageDataset, config: &TrainingConfig) -> Result<TrainOutcome> {
    run(Network::Scaffolded(scaffold), data, config, Method::Combined)
}
