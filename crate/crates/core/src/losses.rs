//! Training objectives: large-margin cosine loss, embedding regression
//! against a frozen teacher, and their convex combination.
//!
//! Gradients are taken with respect to the raw embeddings and raw head
//! columns; normalization happens inside the loss.

use serde::{Deserialize, Serialize};

use crate::embedder::ClassificationHead;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosFaceConfig {
    pub margin: f64,
    pub scale: f64,
}

impl Default for CosFaceConfig {
    fn default() -> Self {
        CosFaceConfig {
            margin: 0.35,
            scale: 64.0,
        }
    }
}

impl CosFaceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.margin) {
            return Err(Error::Config(format!(
                "margin must lie in [0, 1), got {}",
                self.margin
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// `N x d`.
    pub grad_embeddings: Matrix,
    /// `d x C`; `None` for the pure regression loss.
    pub grad_head: Option<Matrix>,
}

/// Unit-normalized rows, with their original norms.
fn unit_rows(f: &Matrix, what: &str) -> Result<(Matrix, Vec<f64>)> {
    let mut out = f.clone();
    let mut norms = Vec::with_capacity(f.rows());
    for i in 0..f.rows() {
        let n = norm(f.row(i));
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Degenerate(format!(
                "{what} {i} has zero or non-finite norm"
            )));
        }
        out.row_mut(i).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// Cosine logits between every embedding row and every class center.
/// Returns `(cos N x C, unit embeddings, embedding norms, unit centers C x d, center norms)`.
#[allow(clippy::type_complexity)]
fn cosine_table(f: &Matrix, w: &Matrix) -> Result<(Matrix, Matrix, Vec<f64>, Matrix, Vec<f64>)> {
    let wt = w.transpose();
    let (fu, fn_) = unit_rows(f, "embedding row")?;
    let (wu, wn) = unit_rows(&wt, "head column")?;
    let cos = fu.matmul_t(&wu)?;
    Ok((cos, fu, fn_, wu, wn))
}

pub fn cosface_loss(
    embeddings: &Matrix,
    labels: &[usize],
    head: &ClassificationHead,
    cfg: &CosFaceConfig,
) -> Result<LossOutput> {
    cfg.validate()?;
    let (n, d) = embeddings.shape();
    let c = head.num_classes();
    if n == 0 {
        return Err(Error::Input(
            "cosface_loss needs at least one sample".into(),
        ));
    }
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{} labels for {n} embeddings",
            labels.len()
        )));
    }
    if head.embedding_dim() != d {
        return Err(Error::Dimension(format!(
            "head expects width {}, embeddings have {d}",
            head.embedding_dim()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Protocol(format!("label {bad} outside [0, {c})")));
    }
    let (cos, fu, fnorm, wu, wnorm) = cosine_table(embeddings, &head.weights)?;
    let s = cfg.scale;
    let inv_n = 1.0 / n as f64;

    // dL/dcos, N x C
    let mut gcos = Matrix::zeros(n, c);
    let mut total = 0.0;
    let mut logits = vec![0.0; c];
    for i in 0..n {
        let y = labels[i];
        for (j, l) in logits.iter_mut().enumerate() {
            let m = if j == y { cfg.margin } else { 0.0 };
            *l = s * (cos[(i, j)] - m);
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - logits[y];
        for j in 0..c {
            let p = (logits[j] - lse).exp();
            let target = if j == y { 1.0 } else { 0.0 };
            gcos[(i, j)] = s * (p - target) * inv_n;
        }
    }

    // d cos_ij / d f_i = (u_j - cos_ij f^_i) / |f_i|
    let mut grad_f = gcos.matmul(&wu)?;
    for i in 0..n {
        let proj: f64 = (0..c).map(|j| gcos[(i, j)] * cos[(i, j)]).sum();
        let fi = fu.row(i).to_vec();
        for (g, u) in grad_f.row_mut(i).iter_mut().zip(fi) {
            *g = (*g - proj * u) / fnorm[i];
        }
    }
    // d cos_ij / d w_j = (f^_i - cos_ij u_j) / |w_j|, assembled as C x d then transposed
    let mut grad_wt = gcos.t_matmul(&fu)?;
    for j in 0..c {
        let proj: f64 = (0..n).map(|i| gcos[(i, j)] * cos[(i, j)]).sum();
        let uj = wu.row(j).to_vec();
        for (g, u) in grad_wt.row_mut(j).iter_mut().zip(uj) {
            *g = (*g - proj * u) / wnorm[j];
        }
    }

    let out = LossOutput {
        value: total * inv_n,
        grad_embeddings: grad_f,
        grad_head: Some(grad_wt.transpose()),
    };
    if !out.value.is_finite() || !out.grad_embeddings.is_finite() {
        return Err(Error::Numeric("cosface loss is not finite".into()));
    }
    Ok(out)
}

/// Mean over samples of the per-sample mean squared difference. The teacher
/// side is a constant.
pub fn kt_loss(student: &Matrix, teacher: &Matrix) -> Result<LossOutput> {
    if student.shape() != teacher.shape() {
        return Err(Error::Dimension(format!(
            "student embeddings {:?} vs teacher embeddings {:?}",
            student.shape(),
            teacher.shape()
        )));
    }
    let (n, d) = student.shape();
    if n == 0 || d == 0 {
        return Err(Error::Input("kt_loss needs a non-empty batch".into()));
    }
    let denom = (n * d) as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(n, d);
    for ((g, s), t) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(student.as_slice())
        .zip(teacher.as_slice())
    {
        let diff = s - t;
        value += diff * diff;
        *g = 2.0 * diff / denom;
    }
    Ok(LossOutput {
        value: value / denom,
        grad_embeddings: grad,
        grad_head: None,
    })
}

pub fn combined_loss(
    student: &Matrix,
    labels: &[usize],
    head: &ClassificationHead,
    teacher: &Matrix,
    alpha: f64,
    cfg: &CosFaceConfig,
) -> Result<LossOutput> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let cls = cosface_loss(student, labels, head, cfg)?;
    let kt = kt_loss(student, teacher)?;
    let beta = 1.0 - alpha;
    let mut grad = cls.grad_embeddings;
    for (g, k) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(kt.grad_embeddings.as_slice())
    {
        *g = alpha * *g + beta * k;
    }
    let grad_head = cls.grad_head.map(|mut h| {
        h.scale(alpha);
        h
    });
    Ok(LossOutput {
        value: alpha * cls.value + beta * kt.value,
        grad_embeddings: grad,
        grad_head,
    })
}

/// Cosine between two vectors, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension(format!(
            "lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if !(nu > 0.0 && nv > 0.0) || !(nu.is_finite() && nv.is_finite()) {
        return Err(Error::Degenerate("cosine of a zero-norm vector".into()));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}
