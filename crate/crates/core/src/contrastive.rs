//! Bidirectional temperature-scaled contrastive loss over cosine similarities.
//!
//! For a batch of positive pairs `(a_j, v_j)` the loss treats row `j` of the
//! similarity matrix as the audio query against all video candidates and
//! column `j` as the video query against all audio candidates. Two negative
//! -set variants are supported: the standard form keeps the positive pair in
//! the denominator; the paper-literal form excludes it, in which case a
//! directional term may go negative.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neuralcore::{l2_normalize_rows, NeuralError};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("batch size mismatch: audio {audio} vs video {video}")]
    BatchMismatch { audio: usize, video: usize },
    #[error("embedding dim mismatch: audio {audio} vs video {video}")]
    DimMismatch { audio: usize, video: usize },
    #[error("similarity matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("batch size {0} is too small, need at least 2")]
    BatchTooSmall(usize),
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Which similarities enter the denominator of each softmax term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeSet {
    /// Positive pair included (standard InfoNCE; each term is >= 0).
    #[default]
    Standard,
    /// Positive pair excluded from the denominator; terms may be negative.
    PaperLiteral,
}

impl NegativeSet {
    pub fn as_str(self) -> &'static str {
        match self {
            NegativeSet::Standard => "standard",
            NegativeSet::PaperLiteral => "paper-literal",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossConfig {
    pub temperature: f64,
    pub negative_set: NegativeSet,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            negative_set: NegativeSet::Standard,
        }
    }
}

impl LossConfig {
    fn validate(&self) -> Result<(), LossError> {
        if !(self.temperature > 0.0) {
            return Err(LossError::BadTemperature(self.temperature));
        }
        Ok(())
    }
}

/// Mean per-pair loss of each direction; the total loss is their sum.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DirectionalLosses {
    pub audio_to_video: f64,
    pub video_to_audio: f64,
}

/// Loss, per-direction means, and gradients with respect to both raw
/// (pre-normalization) embedding batches.
pub struct ContrastiveGrads {
    pub loss: f64,
    pub per_direction: DirectionalLosses,
    pub grad_audio: Array2<f64>,
    pub grad_video: Array2<f64>,
}

/// `S[j][k] = cos(a_j, v_k)`. Rows index audio, columns index video.
pub fn similarity_matrix(
    audio: &Array2<f64>,
    video: &Array2<f64>,
) -> Result<Array2<f64>, LossError> {
    if audio.nrows() != video.nrows() {
        return Err(LossError::BatchMismatch {
            audio: audio.nrows(),
            video: video.nrows(),
        });
    }
    if audio.ncols() != video.ncols() {
        return Err(LossError::DimMismatch {
            audio: audio.ncols(),
            video: video.ncols(),
        });
    }
    let a = l2_normalize_rows(audio)?;
    let v = l2_normalize_rows(video)?;
    Ok(a.dot(&v.t()))
}

/// One directional softmax term for query `j` over scaled scores `x`.
/// Returns the loss term; `exclude_positive` drops `x[j]` from the log-sum.
fn directional_term(x: &[f64], j: usize, exclude_positive: bool) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (k, &v) in x.iter().enumerate() {
        if exclude_positive && k == j {
            continue;
        }
        if v > max {
            max = v;
        }
    }
    let mut sum = 0.0;
    for (k, &v) in x.iter().enumerate() {
        if exclude_positive && k == j {
            continue;
        }
        sum += (v - max).exp();
    }
    // -log( exp(x_j) / sum_k exp(x_k) ) = log-sum-exp(x) - x_j
    max + sum.ln() - x[j]
}

/// Bidirectional contrastive loss over a precomputed similarity matrix.
///
/// Returns the total loss `(1/beta) * sum_j (l_av_j + l_va_j)` together with
/// the per-direction means.
pub fn contrastive_loss(
    s: &Array2<f64>,
    cfg: &LossConfig,
) -> Result<(f64, DirectionalLosses), LossError> {
    cfg.validate()?;
    let beta = s.nrows();
    if s.ncols() != beta {
        return Err(LossError::NotSquare {
            rows: s.nrows(),
            cols: s.ncols(),
        });
    }
    if beta < 2 {
        return Err(LossError::BatchTooSmall(beta));
    }
    let exclude = cfg.negative_set == NegativeSet::PaperLiteral;
    let scaled = s.mapv(|v| v / cfg.temperature);
    let scaled_t = scaled.t().to_owned();

    let mut sum_av = 0.0;
    let mut sum_va = 0.0;
    for j in 0..beta {
        let row = scaled.row(j);
        let col = scaled_t.row(j);
        sum_av += directional_term(row.as_slice().expect("contiguous row"), j, exclude);
        sum_va += directional_term(col.as_slice().expect("contiguous row"), j, exclude);
    }
    let per = DirectionalLosses {
        audio_to_video: sum_av / beta as f64,
        video_to_audio: sum_va / beta as f64,
    };
    Ok((per.audio_to_video + per.video_to_audio, per))
}

/// Gradient of the directional terms with respect to the scaled score matrix,
/// accumulated into `grad` (queries along rows of `scaled`).
fn accumulate_direction_grad(
    scaled: &Array2<f64>,
    exclude_positive: bool,
    transpose_into: bool,
    grad: &mut Array2<f64>,
) {
    let beta = scaled.nrows();
    for j in 0..beta {
        let row = scaled.row(j);
        let mut max = f64::NEG_INFINITY;
        for (k, &v) in row.iter().enumerate() {
            if exclude_positive && k == j {
                continue;
            }
            if v > max {
                max = v;
            }
        }
        let mut denom = 0.0;
        for (k, &v) in row.iter().enumerate() {
            if exclude_positive && k == j {
                continue;
            }
            denom += (v - max).exp();
        }
        for (k, &v) in row.iter().enumerate() {
            let softmax = if exclude_positive && k == j {
                0.0
            } else {
                (v - max).exp() / denom
            };
            let mut g = softmax;
            if k == j {
                g -= 1.0;
            }
            if transpose_into {
                grad[[k, j]] += g;
            } else {
                grad[[j, k]] += g;
            }
        }
    }
}

/// Loss and exact gradients with respect to the raw embedding batches,
/// chaining through the per-row L2 normalization inside the cosine.
pub fn contrastive_loss_backward(
    audio: &Array2<f64>,
    video: &Array2<f64>,
    cfg: &LossConfig,
) -> Result<ContrastiveGrads, LossError> {
    cfg.validate()?;
    if audio.nrows() != video.nrows() {
        return Err(LossError::BatchMismatch {
            audio: audio.nrows(),
            video: video.nrows(),
        });
    }
    if audio.ncols() != video.ncols() {
        return Err(LossError::DimMismatch {
            audio: audio.ncols(),
            video: video.ncols(),
        });
    }
    let beta = audio.nrows();
    if beta < 2 {
        return Err(LossError::BatchTooSmall(beta));
    }

    let a_hat = l2_normalize_rows(audio)?;
    let v_hat = l2_normalize_rows(video)?;
    let s = a_hat.dot(&v_hat.t());
    let (loss, per_direction) = contrastive_loss(&s, cfg)?;

    let exclude = cfg.negative_set == NegativeSet::PaperLiteral;
    let scaled = s.mapv(|v| v / cfg.temperature);
    let scaled_t = scaled.t().to_owned();

    // dL/dS, including the 1/(beta*tau) factor.
    let mut ds = Array2::<f64>::zeros((beta, beta));
    accumulate_direction_grad(&scaled, exclude, false, &mut ds);
    accumulate_direction_grad(&scaled_t, exclude, true, &mut ds);
    ds.mapv_inplace(|v| v / (beta as f64 * cfg.temperature));

    // Through S = A_hat V_hat^T.
    let d_a_hat = ds.dot(&v_hat);
    let d_v_hat = ds.t().dot(&a_hat);

    // Through the row normalization: x_hat = x / ||x||.
    let grad_audio = normalize_backward(audio, &a_hat, &d_a_hat);
    let grad_video = normalize_backward(video, &v_hat, &d_v_hat);

    Ok(ContrastiveGrads {
        loss,
        per_direction,
        grad_audio,
        grad_video,
    })
}

/// dL/dx for x_hat = x/||x||: (g - x_hat (x_hat . g)) / ||x||, per row.
fn normalize_backward(raw: &Array2<f64>, unit: &Array2<f64>, grad_unit: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(raw.raw_dim());
    for (i, mut row_out) in out.axis_iter_mut(Axis(0)).enumerate() {
        let x = raw.row(i);
        let u = unit.row(i);
        let g = grad_unit.row(i);
        let norm = x.dot(&x).sqrt();
        let proj = u.dot(&g);
        for (j, o) in row_out.iter_mut().enumerate() {
            *o = (g[j] - u[j] * proj) / norm;
        }
    }
    out
}
