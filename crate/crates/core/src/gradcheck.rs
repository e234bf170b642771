//! Central finite-difference verification of the analytic gradients.

use crate::encoder::{EncoderParams, ParamGrads, Side};
use crate::error::Result;
use crate::trainer::{batch_loss, batch_loss_and_grad, Batch};

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    /// ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, [`NORM_FLOOR`]).
    pub relative_error: f64,
    pub analytic_norm: f64,
}

/// Denominator floor. Some gradients vanish identically (the document-side
/// output bias of an untied model: a shared shift of every candidate moves
/// all scores of a row together), and there both norms are rounding noise.
pub const NORM_FLOOR: f64 = 1e-6;

const TENSOR_NAMES: [&str; 5] = ["token_table", "w_hidden", "b_hidden", "w_out", "b_out"];

fn dense_grads(grads: &ParamGrads<f64>, params: &EncoderParams<f64>) -> Vec<Vec<Vec<f64>>> {
    let cfg = &params.config;
    grads
        .towers()
        .map(|g| {
            vec![
                g.dense_token_table(cfg.hash_buckets, cfg.embed_dim),
                g.w_hidden.clone(),
                g.b_hidden.clone(),
                g.w_out.clone(),
                g.b_out.clone(),
            ]
        })
        .collect()
}

/// Compares every entry of every parameter tensor against
/// `(L(θ + h) − L(θ − h)) / 2h`. Keep the configuration small: this costs
/// two loss evaluations per parameter.
pub fn check_gradients(
    params: &EncoderParams<f64>,
    batch: &Batch,
    step: f64,
) -> Result<Vec<TensorCheck>> {
    let (_, grads) = batch_loss_and_grad(params, batch)?;
    let analytic = dense_grads(&grads, params);
    let mut probe = params.clone();
    let sides: Vec<(Side, &str)> = if params.document.is_some() {
        vec![(Side::Query, "query"), (Side::Document, "document")]
    } else {
        vec![(Side::Query, "shared")]
    };
    let mut out = Vec::new();
    for (t, (side, tower_name)) in sides.into_iter().enumerate() {
        for (k, name) in TENSOR_NAMES.iter().enumerate() {
            let len = probe.tower(side).tensors()[k].len();
            let mut numeric = vec![0.0; len];
            for (i, slot) in numeric.iter_mut().enumerate() {
                let orig = probe.tower(side).tensors()[k][i];
                probe.tower_mut(side).tensors_mut()[k][i] = orig + step;
                let up = batch_loss(&probe, batch)?;
                probe.tower_mut(side).tensors_mut()[k][i] = orig - step;
                let down = batch_loss(&probe, batch)?;
                probe.tower_mut(side).tensors_mut()[k][i] = orig;
                *slot = (up - down) / (2.0 * step);
            }
            let a = &analytic[t][k];
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let diff: Vec<f64> = a.iter().zip(&numeric).map(|(x, y)| x - y).collect();
            let scale = norm(a).max(norm(&numeric)).max(NORM_FLOOR);
            out.push(TensorCheck {
                name: format!("{tower_name}.{name}"),
                entries: len,
                relative_error: norm(&diff) / scale,
                analytic_norm: norm(a),
            });
        }
    }
    Ok(out)
}
