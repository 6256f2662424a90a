//! Temperature-scaled cosine kernel and the three training objectives:
//! the supervised BYOL regression on incoming data, the prototype
//! cross-entropy on replayed data, and the prototype-contrast objective on
//! incoming data.
//!
//! All losses take `[n, d]` tensors of any float dtype and return a scalar
//! tensor that can be back-propagated.

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `aᵀb / (temperature ‖a‖ ‖b‖)`.
pub fn cosine_sim(a: &[f64], b: &[f64], temperature: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("cosine of {}- and {}-vectors", a.len(), b.len())));
    }
    if temperature <= 0.0 {
        return Err(Error::Config(format!("temperature {temperature} must be positive")));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateEmbedding { context: "cosine_sim" });
    }
    Ok(dot / (temperature * na * nb))
}

/// Rows scaled to unit length; fails on any zero row.
pub fn normalize_rows(x: &Tensor, context: &'static str) -> Result<Tensor> {
    let norms = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    let min = norms.to_dtype(DType::F64)?.flatten_all()?.min(0)?.to_scalar::<f64>()?;
    if min == 0.0 || !min.is_finite() {
        return Err(Error::DegenerateEmbedding { context });
    }
    Ok(x.broadcast_div(&norms)?)
}

/// Pairwise `sim(a_i, b_j)` as an `[n, m]` matrix.
pub fn cosine_logits(a: &Tensor, b: &Tensor, temperature: f64) -> Result<Tensor> {
    if temperature <= 0.0 {
        return Err(Error::Config(format!("temperature {temperature} must be positive")));
    }
    if a.rank() != 2 || b.rank() != 2 || a.dim(1)? != b.dim(1)? {
        return Err(Error::Shape(format!("cosine logits of {:?} and {:?}", a.dims(), b.dims())));
    }
    let a = normalize_rows(a, "cosine_logits lhs")?;
    let b = normalize_rows(b, "cosine_logits rhs")?;
    Ok(a.matmul(&b.t()?)?.affine(1.0 / temperature, 0.0)?)
}

/// Positive index sets over an extended batch laid out as
/// `[raw_0 .. raw_{n-1}, view_0 .. view_{n-1}]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositiveSets {
    n_raw: usize,
    sets: Vec<Vec<usize>>,
}

impl PositiveSets {
    pub fn n_raw(&self) -> usize {
        self.n_raw
    }

    pub fn extended_len(&self) -> usize {
        2 * self.n_raw
    }

    pub fn get(&self, i: usize) -> &[usize] {
        &self.sets[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.sets.iter().map(Vec::as_slice)
    }

    /// Index of the augmented view of raw sample `i`.
    pub fn view_of(&self, i: usize) -> usize {
        self.n_raw + i
    }

    /// `[n_raw, 2 n_raw]` matrix with `1/|P(i)|` on each positive of row `i`.
    pub fn weights(&self, device: &Device, dtype: DType) -> Result<Tensor> {
        let m = self.extended_len();
        let mut w = vec![0f64; self.n_raw * m];
        for (i, set) in self.sets.iter().enumerate() {
            let inv = 1.0 / set.len() as f64;
            for &p in set {
                w[i * m + p] += inv;
            }
        }
        Ok(Tensor::from_vec(w, (self.n_raw, m), device)?.to_dtype(dtype)?)
    }
}

/// `P(i)` = raw batch-mates sharing `i`'s label, plus `i`'s own augmented view.
pub fn build_positive_sets(labels: &[u32], n_raw: usize) -> Result<PositiveSets> {
    if labels.len() != 2 * n_raw {
        return Err(Error::Shape(format!(
            "extended batch has {} labels, expected 2 x {n_raw}",
            labels.len()
        )));
    }
    if let Some(k) = (0..n_raw).find(|&k| labels[k] != labels[n_raw + k]) {
        return Err(Error::Shape(format!("view {k} is labeled differently from its source")));
    }
    let sets = (0..n_raw)
        .map(|i| {
            let mut p: Vec<usize> = (0..n_raw).filter(|&j| j != i && labels[j] == labels[i]).collect();
            p.push(n_raw + i);
            p
        })
        .collect();
    Ok(PositiveSets { n_raw, sets })
}

/// Which target projection enters the positive sum of the BYOL objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ByolTarget {
    /// `z_ξ(x_p)` for each positive `p`.
    #[default]
    Positive,
    /// `z_ξ(x_i)` for every term, as the symbols are literally written.
    Anchor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

/// `-(1/N) Σ_i (1/|P(i)|) Σ_{p ∈ P(i)} sim(q_θ(z_θ(x_i)), z_ξ(x_p))`.
///
/// `predictions` covers the `N` raw samples, `targets` the full extended batch.
/// Targets are detached here regardless of how they were produced.
pub fn supbyol_loss(
    predictions: &Tensor,
    targets: &Tensor,
    positives: &PositiveSets,
    temperature: f64,
    mode: ByolTarget,
) -> Result<Tensor> {
    let n = positives.n_raw();
    if n == 0 {
        return Err(Error::EmptyBatch("supbyol_loss"));
    }
    if predictions.dim(0)? != n || targets.dim(0)? != positives.extended_len() {
        return Err(Error::Shape(format!(
            "predictions {:?} / targets {:?} for {n} raw samples",
            predictions.dims(),
            targets.dims()
        )));
    }
    let targets = targets.detach();
    let total = match mode {
        ByolTarget::Positive => {
            let sims = cosine_logits(predictions, &targets, temperature)?;
            let w = positives.weights(predictions.device(), predictions.dtype())?;
            (sims * w)?.sum_all()?
        }
        ByolTarget::Anchor => {
            let own = targets.narrow(0, 0, n)?;
            let a = normalize_rows(predictions, "supbyol predictions")?;
            let b = normalize_rows(&own, "supbyol targets")?;
            (a * b)?.sum_all()?.affine(1.0 / temperature, 0.0)?
        }
    };
    Ok(total.affine(-1.0 / n as f64, 0.0)?)
}

fn label_rows(labels: &[u32], class_ids: &[u32]) -> Result<Vec<u32>> {
    labels
        .iter()
        .map(|y| {
            class_ids
                .iter()
                .position(|c| c == y)
                .map(|p| p as u32)
                .ok_or(Error::UnknownClass(*y))
        })
        .collect()
}

/// Softmax cross-entropy over cosine logits against every prototype.
///
/// `prototypes` row `k` belongs to class `class_ids[k]`.
pub fn buffer_ce_loss(
    projections: &Tensor,
    labels: &[u32],
    prototypes: &Tensor,
    class_ids: &[u32],
    temperature: f64,
    reduction: Reduction,
) -> Result<Tensor> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptyBatch("buffer_ce_loss"));
    }
    if class_ids.is_empty() {
        return Err(Error::EmptyStore);
    }
    if projections.dim(0)? != n || prototypes.dim(0)? != class_ids.len() {
        return Err(Error::Shape(format!(
            "{n} labels, projections {:?}, prototypes {:?} for {} classes",
            projections.dims(),
            prototypes.dims(),
            class_ids.len()
        )));
    }
    let rows = label_rows(labels, class_ids)?;
    let logits = cosine_logits(projections, prototypes, temperature)?;
    let log_norm = logits.log_sum_exp(D::Minus1)?;
    let idx = Tensor::from_vec(rows, (n, 1), projections.device())?;
    let picked = logits.gather(&idx, D::Minus1)?.squeeze(D::Minus1)?;
    let nll = (log_norm - picked)?.sum_all()?;
    Ok(match reduction {
        Reduction::Sum => nll,
        Reduction::Mean => nll.affine(1.0 / n as f64, 0.0)?,
    })
}

/// `(1/|C|) Σ_i Σ_{j ≠ i} sim(c_i, c_j)`.
pub fn prototype_contrast(prototypes: &Tensor, temperature: f64) -> Result<Tensor> {
    let k = prototypes.dim(0)?;
    if k == 0 {
        return Err(Error::EmptyStore);
    }
    let sims = cosine_logits(prototypes, prototypes, temperature)?;
    let off_diag = (Tensor::ones((k, k), sims.dtype(), sims.device())? - Tensor::eye(k, sims.dtype(), sims.device())?)?;
    Ok((sims * off_diag)?.sum_all()?.affine(1.0 / k as f64, 0.0)?)
}

/// Prototype attraction plus positive-pair attraction on the incoming batch,
/// plus the inter-prototype contrast.
///
/// `projections` covers the extended batch; `labels` the `N` raw samples.
/// Which prototypes receive gradients is decided by the caller: rows passed
/// in detached act as constants.
pub fn ccp_incoming_loss(
    projections: &Tensor,
    labels: &[u32],
    positives: &PositiveSets,
    prototypes: &Tensor,
    class_ids: &[u32],
    temperature: f64,
) -> Result<Tensor> {
    let n = positives.n_raw();
    if n == 0 {
        return Err(Error::EmptyBatch("ccp_incoming_loss"));
    }
    if labels.len() != n || projections.dim(0)? != positives.extended_len() {
        return Err(Error::Shape(format!(
            "{} labels, projections {:?} for {n} raw samples",
            labels.len(),
            projections.dims()
        )));
    }
    let rows = label_rows(labels, class_ids)?;
    let raw = projections.narrow(0, 0, n)?;

    let to_protos = cosine_logits(&raw, prototypes, temperature)?;
    let idx = Tensor::from_vec(rows, (n, 1), projections.device())?;
    let own_proto = to_protos.gather(&idx, D::Minus1)?.sum_all()?;

    let pairwise = cosine_logits(&raw, projections, temperature)?;
    let w = positives.weights(projections.device(), projections.dtype())?;
    let pairs = (pairwise * w)?.sum_all()?;

    let attraction = (own_proto + pairs)?.affine(-1.0 / n as f64, 0.0)?;
    Ok((attraction + prototype_contrast(prototypes, temperature)?)?)
}
