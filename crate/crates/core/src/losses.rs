//! Classification and self-distillation losses.
//!
//! Conventions:
//! - cross-entropy is `-log p_y` and KL is `sum_k q_k (log q_k - log p_k)`,
//!   with no `1/K` factor;
//! - every `log` argument is clamped below at [`PROB_FLOOR`];
//! - softmax is computed in log-sum-exp form.
//!
//! The functions at module level work on probability distributions and return
//! values only. [`logits`] holds the same losses as functions of raw logits
//! that also return analytic gradients; the trainers use those.

use crate::error::{Error, Result};

/// Lower clamp applied to every probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;

const SUM_TOLERANCE: f64 = 1e-6;

fn log_floor() -> f64 {
    PROB_FLOOR.ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogitVector {
    values: Vec<f64>,
}

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid(format!("logit vector needs at least 2 classes, got {}", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("logit {i} is not finite ({})", values[i])));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Temperature(f64);

impl Temperature {
    pub const ONE: Temperature = Temperature(1.0);

    pub fn new(tau: f64) -> Result<Self> {
        if tau.is_finite() && tau > 0.0 {
            Ok(Self(tau))
        } else {
            Err(Error::invalid(format!("temperature must be finite and > 0, got {tau}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// The `tau^2` factor applied to KL terms so their gradient scale does not shrink with `tau`.
    pub fn kl_scale(self) -> f64 {
        self.0 * self.0
    }
}

/// A normalized distribution over `K` classes.
///
/// Entries may be exactly zero (one-hot targets, underflowed softmax tails);
/// construction rescales the input so that it sums to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityDistribution {
    probs: Vec<f64>,
}

impl ProbabilityDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::invalid("distribution needs at least 2 classes"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("probabilities must be finite and non-negative"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::invalid(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { probs: probs.into_iter().map(|p| p / sum).collect() })
    }

    pub fn one_hot(label: &OneHotLabel) -> Self {
        let mut probs = vec![0.0; label.num_classes()];
        probs[label.class_index()] = 1.0;
        Self { probs }
    }

    pub fn uniform(num_classes: usize) -> Self {
        Self { probs: vec![1.0 / num_classes as f64; num_classes] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OneHotLabel {
    class_index: usize,
    num_classes: usize,
}

impl OneHotLabel {
    pub fn new(class_index: usize, num_classes: usize) -> Result<Self> {
        if class_index >= num_classes {
            return Err(Error::invalid(format!("label {class_index} out of range for {num_classes} classes")));
        }
        Ok(Self { class_index, num_classes })
    }

    pub fn class_index(&self) -> usize {
        self.class_index
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
}

/// Logits sorted non-decreasing, with the permutation that produced them:
/// `values[i] == original[source_permutation[i]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedLogitVector {
    values: Vec<f64>,
    source_permutation: Vec<usize>,
}

impl RankedLogitVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source_permutation(&self) -> &[usize] {
        &self.source_permutation
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Gradient of a loss with respect to the logits it was computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitGrad {
    /// Whole-model (student) logits.
    pub student: Vec<f64>,
    /// Teacher logits, when the loss depends on them and they are not detached.
    pub teacher: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// `None` for losses evaluated on distributions rather than logits.
    pub grad: Option<LogitGrad>,
}

impl LossValue {
    pub fn constant(value: f64) -> Self {
        Self { value, grad: None }
    }

    pub fn has_grad(&self) -> bool {
        self.grad.is_some()
    }
}

/// A teacher/student pair of distributions at one temperature.
#[derive(Clone, Copy, Debug)]
pub struct TeacherStudent<'a> {
    pub teacher: &'a ProbabilityDistribution,
    pub student: &'a ProbabilityDistribution,
}

fn check_same_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::ClassCountMismatch { left: a, right: b })
    }
}

// ---------------------------------------------------------------------------
// Slice kernels shared by both API layers and the batch objective.

/// `out[k] = log softmax(z / tau)[k]`.
pub(crate) fn log_softmax_into(z: &[f64], tau: f64, out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in out.iter_mut().zip(z) {
        *o = (v - max) / tau;
        sum += o.exp();
    }
    let lse = sum.ln();
    for o in out.iter_mut() {
        *o -= lse;
    }
}

/// Cross-entropy of `softmax(z)` against `label`. Adds `weight * dL/dz` into `grad`.
pub(crate) fn ce_kernel(z: &[f64], label: usize, weight: f64, grad: Option<&mut [f64]>) -> f64 {
    let mut log_p = vec![0.0; z.len()];
    log_softmax_into(z, 1.0, &mut log_p);
    let floor = log_floor();
    if log_p[label] < floor {
        return -floor;
    }
    if let Some(grad) = grad {
        for (k, (g, lp)) in grad.iter_mut().zip(&log_p).enumerate() {
            let target = if k == label { 1.0 } else { 0.0 };
            *g += weight * (lp.exp() - target);
        }
    }
    -log_p[label]
}

/// Unscaled `KL(softmax(target/tau) || softmax(input/tau))`.
///
/// Adds `weight * dKL/dtarget` and `weight * dKL/dinput` into the given buffers.
pub(crate) fn kl_kernel(
    target: &[f64],
    input: &[f64],
    tau: f64,
    weight: f64,
    grad_target: Option<&mut [f64]>,
    grad_input: Option<&mut [f64]>,
) -> f64 {
    let k = target.len();
    let floor = log_floor();
    let mut log_q = vec![0.0; k];
    let mut log_p = vec![0.0; k];
    log_softmax_into(target, tau, &mut log_q);
    log_softmax_into(input, tau, &mut log_p);
    let q: Vec<f64> = log_q.iter().map(|v| v.exp()).collect();

    let mut value = 0.0;
    let mut diff = vec![0.0; k];
    for i in 0..k {
        diff[i] = log_q[i].max(floor) - log_p[i].max(floor);
        if q[i] > 0.0 {
            value += q[i] * diff[i];
        }
    }

    if let Some(gi) = grad_input {
        // d/dinput_j of -sum_k q_k log p_k, restricted to unclamped log p_k.
        let live_mass: f64 = (0..k).filter(|&i| log_p[i] >= floor).map(|i| q[i]).sum();
        for j in 0..k {
            let p_j = log_p[j].exp();
            let q_live = if log_p[j] >= floor { q[j] } else { 0.0 };
            gi[j] += weight * (p_j * live_mass - q_live) / tau;
        }
    }
    if let Some(gt) = grad_target {
        let live_mass: f64 = (0..k).filter(|&i| log_q[i] >= floor).map(|i| q[i]).sum();
        for j in 0..k {
            let q_live = if log_q[j] >= floor { q[j] } else { 0.0 };
            let d = q[j] * (diff[j] - value) + q_live - q[j] * live_mass;
            gt[j] += weight * d / tau;
        }
    }
    value.max(0.0)
}

/// Stable ascending argsort; ties keep their original order.
pub(crate) fn ascending_permutation(z: &[f64]) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..z.len()).collect();
    perm.sort_by(|&a, &b| z[a].total_cmp(&z[b]));
    perm
}

// ---------------------------------------------------------------------------
// Distribution-level losses.

pub fn softened_distribution(z: &LogitVector, tau: Temperature) -> Result<ProbabilityDistribution> {
    let mut log_p = vec![0.0; z.len()];
    log_softmax_into(z.values(), tau.value(), &mut log_p);
    Ok(ProbabilityDistribution { probs: log_p.into_iter().map(f64::exp).collect() })
}

pub fn cross_entropy(p: &ProbabilityDistribution, y: &OneHotLabel) -> Result<LossValue> {
    check_same_len(p.len(), y.num_classes())?;
    let p_y = p.probs[y.class_index()].max(PROB_FLOOR);
    Ok(LossValue::constant(-p_y.ln()))
}

/// `KL(q || p)`; `q` is the target.
pub fn kl_divergence(q: &ProbabilityDistribution, p: &ProbabilityDistribution) -> Result<LossValue> {
    check_same_len(q.len(), p.len())?;
    let value: f64 = q
        .probs
        .iter()
        .zip(&p.probs)
        .filter(|(qk, _)| **qk > 0.0)
        .map(|(qk, pk)| qk * (qk.max(PROB_FLOOR).ln() - pk.max(PROB_FLOOR).ln()))
        .sum();
    Ok(LossValue::constant(value.max(0.0)))
}

/// Vanilla distillation: `CE(p_hard, y) + tau^2 * KL(q_soft || p_soft)`.
pub fn kd_loss(
    p_hard: &ProbabilityDistribution,
    y: &OneHotLabel,
    soft: TeacherStudent<'_>,
    tau: Temperature,
) -> Result<LossValue> {
    let ce = cross_entropy(p_hard, y)?.value;
    let kl = kl_divergence(soft.teacher, soft.student)?.value;
    Ok(LossValue::constant(ce + tau.kl_scale() * kl))
}

/// `CE(q, y) + CE(p, y)` for the auxiliary teacher `q` and the whole model `p`.
pub fn hard_label_loss(hard: TeacherStudent<'_>, y: &OneHotLabel) -> Result<LossValue> {
    let teacher = cross_entropy(hard.teacher, y)?.value;
    let student = cross_entropy(hard.student, y)?.value;
    Ok(LossValue::constant(teacher + student))
}

/// `tau^2 * KL(q || p)` with the shallow teacher as the target.
pub fn reverse_guidance_loss(soft: TeacherStudent<'_>, tau: Temperature) -> Result<LossValue> {
    let kl = kl_divergence(soft.teacher, soft.student)?.value;
    Ok(LossValue::constant(tau.kl_scale() * kl))
}

pub fn drg_loss(
    hard: TeacherStudent<'_>,
    soft: TeacherStudent<'_>,
    y: &OneHotLabel,
    tau: Temperature,
    alpha: f64,
) -> Result<LossValue> {
    check_coefficient("alpha", alpha)?;
    let hl = hard_label_loss(hard, y)?.value;
    let rg = reverse_guidance_loss(soft, tau)?.value;
    Ok(LossValue::constant(hl + alpha * rg))
}

pub fn rank_ascending(z: &LogitVector) -> RankedLogitVector {
    let perm = ascending_permutation(z.values());
    RankedLogitVector { values: perm.iter().map(|&i| z.values()[i]).collect(), source_permutation: perm }
}

/// `tau^2 * KL(softmax(prev/tau) || softmax(cur/tau))` on ranked logits.
///
/// `prev` is a stored constant; the returned gradient is with respect to the
/// *unsorted* logits `cur` was ranked from.
pub fn shape_regularization_loss(
    prev: &RankedLogitVector,
    cur: &RankedLogitVector,
    tau: Temperature,
) -> Result<LossValue> {
    check_same_len(prev.len(), cur.len())?;
    let scale = tau.kl_scale();
    let mut ranked_grad = vec![0.0; cur.len()];
    let kl = kl_kernel(&prev.values, &cur.values, tau.value(), scale, None, Some(&mut ranked_grad));
    let mut student = vec![0.0; cur.len()];
    for (g, &src) in ranked_grad.iter().zip(&cur.source_permutation) {
        student[src] = *g;
    }
    Ok(LossValue { value: scale * kl, grad: Some(LogitGrad { student, teacher: None }) })
}

pub fn dsr_loss(p: &ProbabilityDistribution, y: &OneHotLabel, sr: &LossValue, beta: f64) -> Result<LossValue> {
    check_coefficient("beta", beta)?;
    let ce = cross_entropy(p, y)?.value;
    Ok(LossValue::constant(ce + beta * sr.value))
}

pub fn combined_loss(
    hard: TeacherStudent<'_>,
    soft: TeacherStudent<'_>,
    y: &OneHotLabel,
    sr: &LossValue,
    tau: Temperature,
    alpha: f64,
    beta: f64,
) -> Result<LossValue> {
    check_coefficient("alpha", alpha)?;
    check_coefficient("beta", beta)?;
    let hl = hard_label_loss(hard, y)?.value;
    let rg = reverse_guidance_loss(soft, tau)?.value;
    Ok(LossValue::constant(hl + alpha * rg + beta * sr.value))
}

pub(crate) fn check_coefficient(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite and >= 0, got {value}")))
    }
}

/// The same losses as functions of logits, with analytic gradients.
pub mod logits {
    use super::*;

    fn label_for(z: &LogitVector, y: &OneHotLabel) -> Result<usize> {
        check_same_len(z.len(), y.num_classes())?;
        Ok(y.class_index())
    }

    pub fn cross_entropy(z: &LogitVector, y: &OneHotLabel) -> Result<LossValue> {
        let label = label_for(z, y)?;
        let mut grad = vec![0.0; z.len()];
        let value = ce_kernel(z.values(), label, 1.0, Some(&mut grad));
        Ok(LossValue { value, grad: Some(LogitGrad { student: grad, teacher: None }) })
    }

    /// `KL(softmax(teacher/tau) || softmax(student/tau))`, unscaled.
    pub fn kl_divergence(teacher: &LogitVector, student: &LogitVector, tau: Temperature) -> Result<LossValue> {
        check_same_len(teacher.len(), student.len())?;
        let mut gt = vec![0.0; teacher.len()];
        let mut gs = vec![0.0; student.len()];
        let value = kl_kernel(teacher.values(), student.values(), tau.value(), 1.0, Some(&mut gt), Some(&mut gs));
        Ok(LossValue { value, grad: Some(LogitGrad { student: gs, teacher: Some(gt) }) })
    }

    /// Vanilla KD with a fixed external teacher: the teacher receives no gradient.
    pub fn kd_loss(
        student: &LogitVector,
        teacher: &LogitVector,
        y: &OneHotLabel,
        tau: Temperature,
    ) -> Result<LossValue> {
        let label = label_for(student, y)?;
        check_same_len(teacher.len(), student.len())?;
        let mut gs = vec![0.0; student.len()];
        let ce = ce_kernel(student.values(), label, 1.0, Some(&mut gs));
        let kl = kl_kernel(teacher.values(), student.values(), tau.value(), tau.kl_scale(), None, Some(&mut gs));
        Ok(LossValue { value: ce + tau.kl_scale() * kl, grad: Some(LogitGrad { student: gs, teacher: None }) })
    }

    pub fn hard_label_loss(student: &LogitVector, teacher: &LogitVector, y: &OneHotLabel) -> Result<LossValue> {
        let label = label_for(student, y)?;
        check_same_len(teacher.len(), student.len())?;
        let mut gs = vec![0.0; student.len()];
        let mut gt = vec![0.0; teacher.len()];
        let t = ce_kernel(teacher.values(), label, 1.0, Some(&mut gt));
        let s = ce_kernel(student.values(), label, 1.0, Some(&mut gs));
        Ok(LossValue { value: t + s, grad: Some(LogitGrad { student: gs, teacher: Some(gt) }) })
    }

    /// `tau^2 * KL(q || p)`. With `detach_teacher` the teacher gradient is omitted.
    pub fn reverse_guidance_loss(
        student: &LogitVector,
        teacher: &LogitVector,
        tau: Temperature,
        detach_teacher: bool,
    ) -> Result<LossValue> {
        check_same_len(teacher.len(), student.len())?;
        let scale = tau.kl_scale();
        let mut gs = vec![0.0; student.len()];
        let mut gt = vec![0.0; teacher.len()];
        let kl = kl_kernel(
            teacher.values(),
            student.values(),
            tau.value(),
            scale,
            (!detach_teacher).then_some(gt.as_mut_slice()),
            Some(&mut gs),
        );
        Ok(LossValue {
            value: scale * kl,
            grad: Some(LogitGrad { student: gs, teacher: (!detach_teacher).then_some(gt) }),
        })
    }

    pub fn drg_loss(
        student: &LogitVector,
        teacher: &LogitVector,
        y: &OneHotLabel,
        tau: Temperature,
        alpha: f64,
        detach_teacher: bool,
    ) -> Result<LossValue> {
        combined_loss(student, teacher, y, None, tau, alpha, 0.0, detach_teacher)
    }

    pub fn dsr_loss(student: &LogitVector, y: &OneHotLabel, sr: &LossValue, beta: f64) -> Result<LossValue> {
        check_coefficient("beta", beta)?;
        let label = label_for(student, y)?;
        let mut gs = vec![0.0; student.len()];
        let ce = ce_kernel(student.values(), label, 1.0, Some(&mut gs));
        add_sr_grad(&mut gs, sr, beta)?;
        Ok(LossValue { value: ce + beta * sr.value, grad: Some(LogitGrad { student: gs, teacher: None }) })
    }

    /// `L_HL + alpha * L_RG + beta * L_SR`; `sr = None` drops the shape term.
    #[allow(clippy::too_many_arguments)]
    pub fn combined_loss(
        student: &LogitVector,
        teacher: &LogitVector,
        y: &OneHotLabel,
        sr: Option<&LossValue>,
        tau: Temperature,
        alpha: f64,
        beta: f64,
        detach_teacher: bool,
    ) -> Result<LossValue> {
        check_coefficient("alpha", alpha)?;
        check_coefficient("beta", beta)?;
        let label = label_for(student, y)?;
        check_same_len(teacher.len(), student.len())?;
        let mut gs = vec![0.0; student.len()];
        let mut gt = vec![0.0; teacher.len()];
        let hl = ce_kernel(teacher.values(), label, 1.0, Some(&mut gt))
            + ce_kernel(student.values(), label, 1.0, Some(&mut gs));
        let scale = tau.kl_scale();
        let kl = kl_kernel(
            teacher.values(),
            student.values(),
            tau.value(),
            alpha * scale,
            (!detach_teacher).then_some(gt.as_mut_slice()),
            Some(&mut gs),
        );
        let mut value = hl + alpha * (scale * kl);
        if let Some(sr) = sr {
            add_sr_grad(&mut gs, sr, beta)?;
            value += beta * sr.value;
        }
        Ok(LossValue { value, grad: Some(LogitGrad { student: gs, teacher: Some(gt) }) })
    }

    fn add_sr_grad(grad: &mut [f64], sr: &LossValue, beta: f64) -> Result<()> {
        if let Some(g) = &sr.grad {
            check_same_len(grad.len(), g.student.len())?;
            for (a, b) in grad.iter_mut().zip(&g.student) {
                *a += beta * b;
            }
        }
        Ok(())
    }
}
