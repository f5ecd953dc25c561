//! Acquisition strategies for the active-learning loop.
//!
//! Each strategy maps a model snapshot and a candidate sub-pool to a batch
//! of sample ids, optionally with per-sample attack byproducts (an
//! adversarial point and a margin estimate) that the augmentation stage can
//! reuse. All four are pure functions of the model, the candidate id set,
//! and the seed: candidate presentation order never changes the outcome,
//! and repeated calls agree exactly.
//!
//! * random — uniform without replacement;
//! * margin ranking — bisection-estimated FGSM margin, smallest first;
//! * DeepFool ranking — smallest minimal-perturbation norm first;
//! * gradient embeddings + k-means++ — diverse, high-gradient batch.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use crate::attacks::{self, AttackParams};
use crate::data::Sample;
use crate::nn::MlpModel;
use crate::{Error, Result, Scalar};

/// Proxy margin assigned to candidates the bisection attack cannot flip;
/// ranks strictly after every genuine margin (which is always < 1).
const UNFLIPPABLE_MARGIN: f64 = 1.0;

/// Attack byproducts of scoring one candidate, reusable during
/// augmentation.
#[derive(Clone, Debug)]
pub struct Byproduct<T> {
    pub adversarial: Option<Vec<T>>,
    pub margin: Option<T>,
}

/// A selected batch: distinct candidate ids plus any byproducts keyed by id.
#[derive(Clone, Debug)]
pub struct SelectionResult<T> {
    pub chosen_ids: Vec<usize>,
    pub byproducts: BTreeMap<usize, Byproduct<T>>,
}

/// Per-candidate output-layer gradient embedding: for each class `c`,
/// `(softmax_c - 1{c = pseudo_label}) * penultimate(x)`, blocks
/// concatenated over classes.
pub type GradientEmbedding<T> = Vec<T>;

/// Uniform selection of `n` ids without replacement.
///
/// The pool is canonicalized by sorting, so the draw depends only on the id
/// set and the rng state.
pub fn select_random<T: Scalar, R: Rng>(
    pool_ids: &[usize],
    n: usize,
    rng: &mut R,
) -> Result<SelectionResult<T>> {
    if n > pool_ids.len() {
        return Err(Error::invalid(format!(
            "select_random: n = {n} exceeds pool size {}",
            pool_ids.len()
        )));
    }
    let mut sorted = pool_ids.to_vec();
    sorted.sort_unstable();
    let chosen_ids = rand::seq::index::sample(rng, sorted.len(), n)
        .iter()
        .map(|i| sorted[i])
        .collect();
    Ok(SelectionResult {
        chosen_ids,
        byproducts: BTreeMap::new(),
    })
}

/// Margin-ranking selection: estimates each candidate's bisection margin
/// and keeps the `n` smallest.
///
/// Candidates the attack cannot flip rank last with proxy margin 1.0; ties
/// break by ascending id. Byproducts carry the adversarial point and margin
/// of every chosen candidate that actually flipped.
pub fn select_fvaal<T: Scalar>(
    model: &MlpModel<T>,
    candidates: &[&Sample<T>],
    n: usize,
    params: &AttackParams<T>,
) -> Result<SelectionResult<T>> {
    if n > candidates.len() {
        return Err(Error::invalid(format!(
            "select_fvaal: n = {n} exceeds candidate count {}",
            candidates.len()
        )));
    }
    let mut scored: Vec<(f64, usize, Option<Byproduct<T>>)> = candidates
        .par_iter()
        .map(|s| {
            let est = attacks::margin_by_binary_search(model, &s.features, params)?;
            Ok(if est.flipped {
                (
                    est.eps_star.as_f64(),
                    s.id,
                    Some(Byproduct {
                        adversarial: Some(est.adversarial),
                        margin: Some(est.eps_star),
                    }),
                )
            } else {
                (UNFLIPPABLE_MARGIN, s.id, None)
            })
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    finish_ranked(scored, n)
}

/// DeepFool-ranking selection: smallest minimal-perturbation norm first,
/// unflippable candidates last in id order. Byproducts carry the DeepFool
/// adversarial of every chosen, flipped candidate.
pub fn select_dfal<T: Scalar>(
    model: &MlpModel<T>,
    candidates: &[&Sample<T>],
    n: usize,
    params: &AttackParams<T>,
) -> Result<SelectionResult<T>> {
    if n > candidates.len() {
        return Err(Error::invalid(format!(
            "select_dfal: n = {n} exceeds candidate count {}",
            candidates.len()
        )));
    }
    let mut scored: Vec<(f64, usize, Option<Byproduct<T>>)> = candidates
        .par_iter()
        .map(|s| {
            let df = attacks::deepfool(model, &s.features, params)?;
            Ok(if df.flipped {
                (
                    df.perturbation_norm.as_f64(),
                    s.id,
                    Some(Byproduct {
                        adversarial: Some(df.adversarial),
                        margin: Some(df.perturbation_norm),
                    }),
                )
            } else {
                (f64::INFINITY, s.id, None)
            })
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    finish_ranked(scored, n)
}

fn finish_ranked<T: Scalar>(
    scored: Vec<(f64, usize, Option<Byproduct<T>>)>,
    n: usize,
) -> Result<SelectionResult<T>> {
    let mut chosen_ids = Vec::with_capacity(n);
    let mut byproducts = BTreeMap::new();
    for (_, id, byproduct) in scored.into_iter().take(n) {
        chosen_ids.push(id);
        if let Some(b) = byproduct {
            byproducts.insert(id, b);
        }
    }
    Ok(SelectionResult {
        chosen_ids,
        byproducts,
    })
}

/// Output-layer loss-gradient embedding per candidate, with the model's own
/// prediction as the pseudo-label — exactly the cross-entropy gradient with
/// respect to the output weight matrix, flattened class-major.
pub fn badge_embeddings<T: Scalar>(
    model: &MlpModel<T>,
    candidates: &[&Sample<T>],
) -> Vec<GradientEmbedding<T>> {
    let classes = model.num_classes();
    candidates
        .par_iter()
        .map(|s| {
            let h = model.penultimate(&s.features);
            let mut p = model.w2.matvec(&h);
            for (pi, &bi) in p.iter_mut().zip(&model.b2) {
                *pi += bi;
            }
            let pseudo = crate::nn::argmax(&p);
            crate::nn::softmax_in_place(&mut p);
            let mut emb = Vec::with_capacity(classes * h.len());
            for c in 0..classes {
                let coeff = if c == pseudo { p[c] - T::one() } else { p[c] };
                emb.extend(h.iter().map(|&hr| coeff * hr));
            }
            emb
        })
        .collect()
}

/// k-means++ seeding used directly as a batch selector.
///
/// The first index is uniform; each subsequent index is drawn with
/// probability proportional to the squared distance to its nearest
/// already-chosen embedding. Chosen indices are distinct; when every
/// remaining distance is zero (identical embeddings) the draw falls back
/// to uniform over the remaining indices.
pub fn kmeanspp_select<T: Scalar, R: Rng>(
    embeddings: &[GradientEmbedding<T>],
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if n > embeddings.len() {
        return Err(Error::invalid(format!(
            "kmeanspp_select: n = {n} exceeds embedding count {}",
            embeddings.len()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let count = embeddings.len();
    let mut chosen = Vec::with_capacity(n);
    let mut is_chosen = vec![false; count];
    let first = rng.gen_range(0..count);
    chosen.push(first);
    is_chosen[first] = true;

    // Squared distance to the nearest chosen embedding, maintained
    // incrementally.
    let mut d2: Vec<f64> = embeddings
        .iter()
        .map(|e| crate::linalg::squared_distance(e, &embeddings[first]).as_f64())
        .collect();
    d2[first] = 0.0;

    while chosen.len() < n {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                u -= w;
                if u <= 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            // Cumulative rounding can leave u marginally positive after the
            // last weighted entry; fall back to the last positive weight.
            pick.unwrap_or_else(|| {
                d2.iter()
                    .rposition(|&w| w > 0.0)
                    .expect("total > 0 implies a positive weight")
            })
        } else {
            // Everything remaining coincides with a chosen embedding.
            let remaining: Vec<usize> = (0..count).filter(|&i| !is_chosen[i]).collect();
            remaining[rng.gen_range(0..remaining.len())]
        };
        debug_assert!(!is_chosen[next]);
        chosen.push(next);
        is_chosen[next] = true;
        for i in 0..count {
            if !is_chosen[i] {
                let d = crate::linalg::squared_distance(&embeddings[i], &embeddings[next]).as_f64();
                if d < d2[i] {
                    d2[i] = d;
                }
            }
        }
        d2[next] = 0.0;
    }
    Ok(chosen)
}

/// Gradient-embedding batch selection: [`badge_embeddings`] followed by
/// [`kmeanspp_select`], with candidates canonicalized into ascending id
/// order first so presentation order cannot matter.
pub fn select_badge<T: Scalar, R: Rng>(
    model: &MlpModel<T>,
    candidates: &[&Sample<T>],
    n: usize,
    rng: &mut R,
) -> Result<SelectionResult<T>> {
    let mut ordered: Vec<&Sample<T>> = candidates.to_vec();
    ordered.sort_by_key(|s| s.id);
    let embeddings = badge_embeddings(model, &ordered);
    let picks = kmeanspp_select(&embeddings, n, rng)?;
    Ok(SelectionResult {
        chosen_ids: picks.into_iter().map(|i| ordered[i].id).collect(),
        byproducts: BTreeMap::new(),
    })
}
