//! Test-side oracles shared by the integration tests and the acceptance gate.
#![allow(dead_code)]

use identikit::embedder::{backward, forward, ClassificationHead, EmbeddingModel, GradientBundle};
use identikit::losses::{combined_loss, cosface_loss, kt_loss, CosFaceConfig};
use identikit::Matrix;

/// Exhaustive threshold sweep by direct counting. Returns, for every candidate
/// threshold in ascending order, `(t, false_matches, false_non_matches)`.
pub fn oracle_sweep(genuine: &[f64], imposter: &[f64]) -> Vec<(f64, u64, u64)> {
    let mut distinct: Vec<f64> = genuine.iter().chain(imposter).copied().collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    let mut candidates = Vec::new();
    for w in distinct.windows(2) {
        candidates.push(w[0]);
        let mid = w[0] + (w[1] - w[0]) / 2.0;
        if mid > w[0] && mid < w[1] {
            candidates.push(mid);
        }
    }
    let top = *distinct.last().unwrap();
    candidates.push(top);
    candidates.push(top.next_up());
    candidates
        .into_iter()
        .map(|t| {
            let fm = imposter.iter().filter(|&&s| s >= t).count() as u64;
            let fnm = genuine.iter().filter(|&&s| s < t).count() as u64;
            (t, fm, fnm)
        })
        .collect()
}

/// `(numerator, denominator, threshold)`; first threshold wins ties.
pub fn oracle_eer(genuine: &[f64], imposter: &[f64]) -> (u128, u128, f64) {
    let (g, i) = (genuine.len() as u128, imposter.len() as u128);
    let mut best: Option<(u128, u128, f64)> = None;
    for (t, fm, fnm) in oracle_sweep(genuine, imposter) {
        let a = fm as u128 * g;
        let b = fnm as u128 * i;
        let gap = a.abs_diff(b);
        match best {
            Some((bg, _, _)) if bg <= gap => {}
            _ => best = Some((gap, a + b, t)),
        }
    }
    let (_, num, t) = best.unwrap();
    (num, 2 * g * i, t)
}

pub fn oracle_fmr_point(genuine: &[f64], imposter: &[f64], bound: f64) -> (u128, u128, f64) {
    let i = imposter.len() as f64;
    let mut best: Option<(u64, f64)> = None;
    for (t, fm, fnm) in oracle_sweep(genuine, imposter) {
        if fm as f64 / i > bound {
            continue;
        }
        match best {
            Some((b, _)) if b <= fnm => {}
            _ => best = Some((fnm, t)),
        }
    }
    let (fnm, t) = best.unwrap();
    (fnm as u128, genuine.len() as u128, t)
}

pub fn oracle_accuracy(genuine: &[f64], imposter: &[f64]) -> (u128, u128, f64) {
    let total = (genuine.len() + imposter.len()) as u64;
    let mut best: Option<(u64, f64)> = None;
    for (t, fm, fnm) in oracle_sweep(genuine, imposter) {
        let correct = total - fm - fnm;
        match best {
            Some((b, _)) if b >= correct => {}
            _ => best = Some((correct, t)),
        }
    }
    let (c, t) = best.unwrap();
    (c as u128, total as u128, t)
}

/// Exact fraction equality by cross-multiplication.
pub fn same_fraction(a: (u128, u128), b: (u128, u128)) -> bool {
    a.0 * b.1 == b.0 * a.1
}

pub enum Objective<'a> {
    CosFace,
    Kt(&'a EmbeddingModel),
    Cl(&'a EmbeddingModel, f64),
}

/// Loss and full gradient (layers plus head when the objective has one).
pub fn objective(
    which: &Objective,
    model: &EmbeddingModel,
    head: Option<&ClassificationHead>,
    x: &Matrix,
    labels: &[usize],
    cfg: &CosFaceConfig,
) -> identikit::Result<(f64, GradientBundle)> {
    let (emb, cache) = forward(model, x)?;
    let out = match which {
        Objective::CosFace => cosface_loss(&emb, labels, head.unwrap(), cfg)?,
        Objective::Kt(t) => kt_loss(&emb, &t.embed(x)?)?,
        Objective::Cl(t, alpha) => {
            combined_loss(&emb, labels, head.unwrap(), &t.embed(x)?, *alpha, cfg)?
        }
    };
    let mut grads = backward(model, &cache, &out.grad_embeddings)?;
    grads.head = out.grad_head;
    Ok((out.value, grads))
}
