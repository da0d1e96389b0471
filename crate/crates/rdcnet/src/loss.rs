//! Embedding soft-Jaccard loss.
//!
//! Embeddings are converted into per-instance probabilities through a
//! Gaussian kernel around the true-mask centroid, then scored with a soft
//! Jaccard against the one-hot instance mask. A semantic soft-Jaccard term
//! supervises the foreground probability. Undefined regions contribute
//! nothing; the instance term is restricted to true foreground.

use serde::{Deserialize, Serialize};

use crate::label::{LabelMap, UNDEFINED};
use crate::tensor::ops::{
    add, add_const, broadcast_channels, exp, mean_scalars, mul, mul_weights, narrow_channels,
    scale, select_batch, sub, sum_channels, sum_spatial, weighted_sum,
};
use crate::tensor::{Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Embedding distance from the centroid (in pixels) at which the
    /// instance probability equals 0.5.
    pub margin: f64,
    pub semantic_weight: f64,
    pub instance_weight: f64,
    pub epsilon: f64,
    pub supervise_all_iterations: bool,
    /// Ablation switch: stop gradients at the centroid estimate.
    pub detach_centroids: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 10.0,
            semantic_weight: 1.0,
            instance_weight: 1.0,
            epsilon: 1e-6,
            supervise_all_iterations: false,
            detach_centroids: false,
        }
    }
}

impl LossConfig {
    /// Bandwidth derived from the margin: margin = sigma * sqrt(-2 ln 0.5).
    pub fn sigma(&self) -> f64 {
        sigma_from_margin(self.margin).expect("margin validated at config load")
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if self.margin <= 0.0 {
            return Err(TensorError::Config(format!(
                "margin must be > 0, got {}",
                self.margin
            )));
        }
        if self.semantic_weight < 0.0 || self.instance_weight < 0.0 {
            return Err(TensorError::Config("loss weights must be >= 0".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(TensorError::Config("epsilon must be > 0".into()));
        }
        Ok(())
    }
}

pub fn sigma_from_margin(margin: f64) -> Result<f64, TensorError> {
    if margin <= 0.0 {
        return Err(TensorError::Config(format!(
            "margin must be > 0, got {margin}"
        )));
    }
    Ok(margin / (2.0 * std::f64::consts::LN_2).sqrt())
}

/// Mean embedding under each true instance mask: (id, centroid [D]).
/// Gradients flow through the mean unless `detach` is set.
pub fn true_centroids<T: Scalar>(
    embeddings: &Tensor<T>,
    labels: &LabelMap,
    detach: bool,
) -> Result<Vec<(u16, Tensor<T>)>, TensorError> {
    let shape = embeddings.shape();
    if shape.len() != 3 {
        return Err(TensorError::Usage(format!(
            "true_centroids expects [D,H,W] embeddings, got {shape:?}"
        )));
    }
    let (d, h, w) = (shape[0], shape[1], shape[2]);
    if labels.height() != h || labels.width() != w {
        return Err(TensorError::ShapeMismatch {
            what: "true_centroids labels",
            expected: vec![h, w],
            got: vec![labels.height(), labels.width()],
        });
    }
    let mut out = Vec::new();
    for id in labels.instance_ids() {
        let count = labels.data().iter().filter(|&&v| v == id).count();
        if count == 0 {
            eprintln!("warning: instance {id} has zero pixels, skipped");
            continue;
        }
        let mut weights = vec![T::zero(); d * h * w];
        for (pix, &v) in labels.data().iter().enumerate() {
            if v == id {
                for c in 0..d {
                    weights[c * h * w + pix] = T::one();
                }
            }
        }
        let masked = mul_weights(embeddings, &weights);
        let sums = sum_spatial(&masked);
        let centroid = scale(&sums, T::from_f64(1.0 / count as f64));
        let centroid = if detach { centroid.detach() } else { centroid };
        out.push((id, centroid));
    }
    Ok(out)
}

/// P(u = k) = exp(-|y_u - c_k|^2 / (2 sigma^2)) per pixel, shape [H,W].
pub fn instance_prob<T: Scalar>(
    embeddings: &Tensor<T>,
    centroid: &Tensor<T>,
    sigma: f64,
) -> Result<Tensor<T>, TensorError> {
    if sigma <= 0.0 {
        return Err(TensorError::Config(format!("sigma must be > 0, got {sigma}")));
    }
    let shape = embeddings.shape();
    let (h, w) = (shape[1], shape[2]);
    let diff = sub(embeddings, &broadcast_channels(centroid, h, w))?;
    let sq = mul(&diff, &diff)?;
    let d2 = sum_channels(&sq);
    Ok(exp(&scale(&d2, T::from_f64(-1.0 / (2.0 * sigma * sigma)))))
}

/// 1 - (sum pt + eps) / (sum p + sum t - sum pt + eps), all sums over the
/// masked region. `target` and `mask` are constants; only `pred` is
/// differentiated.
pub fn soft_jaccard<T: Scalar>(
    pred: &Tensor<T>,
    target: &[T],
    mask: &[T],
    epsilon: f64,
) -> Result<Tensor<T>, TensorError> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(TensorError::Usage(format!(
            "soft_jaccard length mismatch: pred {}, target {}, mask {}",
            pred.len(),
            target.len(),
            mask.len()
        )));
    }
    let eps = T::from_f64(epsilon);
    let tm: Vec<T> = target.iter().zip(mask).map(|(t, m)| *t * *m).collect();
    let intersection = weighted_sum(pred, &tm);
    let pred_sum = weighted_sum(pred, mask);
    let t_sum = tm.iter().fold(T::zero(), |a, v| a + *v);
    // union = sum p + sum t - intersection
    let union = sub(&add_const(&pred_sum, t_sum), &intersection)?;
    let ratio = crate::tensor::ops::div(&add_const(&intersection, eps), &add_const(&union, eps))?;
    Ok(add_const(&scale(&ratio, -T::one()), T::one()))
}

/// Total loss over a batch of iteration outputs.
///
/// `iteration_outputs` holds, per iteration, batched NCHW semantic
/// probabilities and embeddings. By default only the final iteration is
/// supervised; with `supervise_all_iterations` the loss is averaged over
/// all of them. The per-image loss is
/// `semantic_weight * semantic + instance_weight * mean_k instance_k`.
pub fn esj_total<T: Scalar>(
    iteration_outputs: &[(Tensor<T>, Tensor<T>)],
    labels: &[LabelMap],
    cfg: &LossConfig,
) -> Result<Tensor<T>, TensorError> {
    cfg.validate()?;
    if iteration_outputs.is_empty() {
        return Err(TensorError::Usage("no iteration outputs".into()));
    }
    let supervised: Vec<&(Tensor<T>, Tensor<T>)> = if cfg.supervise_all_iterations {
        iteration_outputs.iter().collect()
    } else {
        vec![iteration_outputs.last().unwrap()]
    };
    let mut iter_losses = Vec::with_capacity(supervised.len());
    for (semantic, embeddings) in supervised {
        let n = semantic.shape()[0];
        if labels.len() != n {
            return Err(TensorError::Usage(format!(
                "batch size {n} does not match {} label maps",
                labels.len()
            )));
        }
        let mut image_losses = Vec::with_capacity(n);
        for (b, lab) in labels.iter().enumerate() {
            image_losses.push(esj_image(semantic, embeddings, b, lab, cfg)?);
        }
        iter_losses.push(mean_scalars(&image_losses)?);
    }
    mean_scalars(&iter_losses)
}

fn esj_image<T: Scalar>(
    semantic: &Tensor<T>,
    embeddings: &Tensor<T>,
    batch: usize,
    labels: &LabelMap,
    cfg: &LossConfig,
) -> Result<Tensor<T>, TensorError> {
    let (h, w) = (semantic.shape()[2], semantic.shape()[3]);
    if labels.height() != h || labels.width() != w {
        return Err(TensorError::ShapeMismatch {
            what: "esj labels",
            expected: vec![h, w],
            got: vec![labels.height(), labels.width()],
        });
    }
    let plane = h * w;
    let defined: Vec<T> = labels
        .data()
        .iter()
        .map(|&v| if v == UNDEFINED { T::zero() } else { T::one() })
        .collect();
    let fg_indicator: Vec<T> = labels
        .data()
        .iter()
        .map(|&v| {
            if v != 0 && v != UNDEFINED {
                T::one()
            } else {
                T::zero()
            }
        })
        .collect();

    // Semantic term: foreground probability vs foreground indicator over
    // defined pixels.
    let fg_prob = select_batch(&narrow_channels(semantic, 1, 1)?, batch)?;
    let semantic_term = soft_jaccard(&fg_prob, &fg_indicator, &defined, cfg.epsilon)?;

    // Instance term: excluded over background, zeroed over undefined.
    let emb = select_batch(embeddings, batch)?;
    let centroids = true_centroids(&emb, labels, cfg.detach_centroids)?;
    let sigma = cfg.sigma();
    let instance_term = if centroids.is_empty() {
        Tensor::scalar(T::zero())
    } else {
        let mut terms = Vec::with_capacity(centroids.len());
        for (id, centroid) in &centroids {
            let prob = instance_prob(&emb, centroid, sigma)?;
            let target: Vec<T> = labels
                .data()
                .iter()
                .map(|&v| if v == *id { T::one() } else { T::zero() })
                .collect();
            debug_assert_eq!(target.len(), plane);
            terms.push(soft_jaccard(&prob, &target, &fg_indicator, cfg.epsilon)?);
        }
        mean_scalars(&terms)?
    };

    add(
        &scale(&semantic_term, T::from_f64(cfg.semantic_weight)),
        &scale(&instance_term, T::from_f64(cfg.instance_weight)),
    )
}
