//! WebAssembly bindings for a single-page demo of the distillation losses.
//!
//! The plain functions are usable from Rust; the `js_*` wrappers are what the page calls.

use skd_core::analysis::ranked_output_variance;
use skd_core::losses::{rank_ascending, softened_distribution};
use skd_core::train::{batch_loss, ObjectiveWeights};
use skd_core::{LogitVector, Result, Temperature, Tensor};
use wasm_bindgen::prelude::*;

/// `softmax(logits / tau)`.
pub fn soften(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    let p = softened_distribution(&LogitVector::new(logits.to_vec())?, Temperature::new(tau)?)?;
    Ok(p.probs().to_vec())
}

/// Loss terms for one sample, computed by the same batch objective the trainer uses.
#[wasm_bindgen]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Breakdown {
    pub main_ce: f64,
    pub aux_ce: f64,
    pub reverse_guidance: f64,
    pub shape_regularization: f64,
    pub total: f64,
}

/// Inputs for [`breakdown`]. An empty `aux` drops the guidance terms; an empty `previous` drops the shape term.
#[derive(Clone, Debug)]
pub struct Sample<'a> {
    pub main: &'a [f64],
    pub aux: &'a [f64],
    pub previous: &'a [f64],
    pub label: usize,
}

pub fn breakdown(sample: &Sample<'_>, alpha: f64, beta: f64, tau_drg: f64, tau_dsr: f64) -> Result<Breakdown> {
    let k = sample.main.len();
    let row = |v: &[f64]| Tensor::new(vec![1, v.len()], v.to_vec());
    let main = row(sample.main)?;
    let aux = if sample.aux.is_empty() { None } else { Some(row(sample.aux)?) };
    let previous = if sample.previous.is_empty() {
        None
    } else {
        Some(vec![rank_ascending(&LogitVector::new(sample.previous.to_vec())?).values().to_vec()])
    };
    if let Some(p) = &previous {
        if p[0].len() != k {
            return Err(skd_core::Error::ClassCountMismatch { left: p[0].len(), right: k });
        }
    }
    let weights = ObjectiveWeights {
        alpha: if aux.is_some() { alpha } else { 0.0 },
        beta: if previous.is_some() { beta } else { 0.0 },
        tau_drg: Temperature::new(tau_drg)?,
        tau_dsr: Temperature::new(tau_dsr)?,
        teacher_detach: false,
    };
    let b = batch_loss(&main, aux.as_ref(), &[sample.label], previous.as_deref(), &weights)?.breakdown;
    Ok(Breakdown {
        main_ce: b.main_ce,
        aux_ce: b.aux_ce,
        reverse_guidance: b.reverse_guidance,
        shape_regularization: b.shape_regularization,
        total: b.total,
    })
}

/// Logits sorted ascending: the class-agnostic output shape.
pub fn ranked_shape(logits: &[f64]) -> Result<Vec<f64>> {
    Ok(rank_ascending(&LogitVector::new(logits.to_vec())?).values().to_vec())
}

/// Mean per-position variance of ranked rows; `flat` holds `rows x classes` values.
pub fn ranked_variance(flat: &[f64], classes: usize) -> Result<f64> {
    if classes == 0 || !flat.len().is_multiple_of(classes) {
        return Err(skd_core::Error::InvalidInput(format!(
            "{} values do not split into rows of {classes}",
            flat.len()
        )));
    }
    let t = Tensor::new(vec![flat.len() / classes, classes], flat.to_vec())?;
    Ok(ranked_output_variance(&t)?.mean)
}

fn js(e: skd_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = soften)]
pub fn js_soften(logits: Vec<f64>, tau: f64) -> std::result::Result<Vec<f64>, JsError> {
    soften(&logits, tau).map_err(js)
}

#[wasm_bindgen(js_name = lossBreakdown)]
#[allow(clippy::too_many_arguments)]
pub fn js_loss_breakdown(
    main: Vec<f64>,
    aux: Vec<f64>,
    previous: Vec<f64>,
    label: usize,
    alpha: f64,
    beta: f64,
    tau_drg: f64,
    tau_dsr: f64,
) -> std::result::Result<Breakdown, JsError> {
    let sample = Sample { main: &main, aux: &aux, previous: &previous, label };
    breakdown(&sample, alpha, beta, tau_drg, tau_dsr).map_err(js)
}

#[wasm_bindgen(js_name = rankedShape)]
pub fn js_ranked_shape(logits: Vec<f64>) -> std::result::Result<Vec<f64>, JsError> {
    ranked_shape(&logits).map_err(js)
}

#[wasm_bindgen(js_name = rankedVariance)]
pub fn js_ranked_variance(flat: Vec<f64>, classes: usize) -> std::result::Result<f64, JsError> {
    ranked_variance(&flat, classes).map_err(js)
}
