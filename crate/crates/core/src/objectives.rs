//! Training objectives and their analytic gradients.
//!
//! Three terms over a two-view batch:
//! * meta: per labeled item and per meta-class set, a softmax cross-entropy
//!   at temperature tau between the normalized embedding slice and the set's
//!   prototypes, with the item's assigned prototype as the positive.
//! * sim: per anchor, a contrastive term over the other items. Scores are
//!   inner products between the anchor's normalized embedding and the others'
//!   normalized combinatorial embeddings. Positives are items whose
//!   combinatorial embeddings agree with the anchor's above the cosine
//!   threshold gamma, plus same-class labeled items for labeled anchors.
//!   Positive selection is treated as a constant during differentiation.
//! * cons: per item, the negative cosine between the prediction head applied
//!   to one view's combinatorial embedding and the other view's normalized
//!   combinatorial embedding, symmetrized over the two views. The target view
//!   is a constant (stop-gradient).
//!
//! Total: meta + alpha * sim + beta * cons. Gradients are for the total.
//!
//! [`capture_frozen`] and [`total_loss_frozen`] evaluate the same value with
//! the positive sets and consistency targets pinned, which makes the value a
//! smooth function of the parameters for finite-difference checks.

use crate::error::{Error, Result};
use crate::model::{EncoderCache, Gradients, Model, PiCache, PredictionHead};
use crate::scalar::Scalar;
use crate::vecmath::{dot, l2_norm, l2_normalize_backward, log_sum_exp, softmax_in_place, MIN_NORM};

/// One training item: two views of the same underlying features.
#[derive(Debug, Clone)]
pub struct BatchItem<T> {
    pub view_a: Vec<T>,
    pub view_b: Vec<T>,
    /// Class label; None for unlabeled items.
    pub label: Option<u32>,
    /// Per-set prototype assignment of the class; required iff labeled.
    pub meta_labels: Option<Vec<u32>>,
}

#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub items: Vec<BatchItem<T>>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn validate_for(&self, model: &Model<T>) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::Data("cannot evaluate objectives on an empty batch".into()));
        }
        let sizes = model.sizes();
        for (i, item) in self.items.iter().enumerate() {
            if item.view_a.len() != model.d() || item.view_b.len() != model.d() {
                return Err(Error::Shape(format!(
                    "batch item {i} has {} / {} features, model expects {}",
                    item.view_a.len(),
                    item.view_b.len(),
                    model.d()
                )));
            }
            match (&item.label, &item.meta_labels) {
                (Some(_), Some(ml)) => {
                    if ml.len() != sizes.len() {
                        return Err(Error::Label(format!(
                            "batch item {i} has {} meta-labels, expected {}",
                            ml.len(),
                            sizes.len()
                        )));
                    }
                    for (m, (&l, &k)) in ml.iter().zip(sizes.iter()).enumerate() {
                        if l as usize >= k {
                            return Err(Error::Label(format!(
                                "batch item {i}: meta-label {l} out of range for set {m} of size {k}"
                            )));
                        }
                    }
                }
                (Some(_), None) => {
                    return Err(Error::Label(format!("labeled batch item {i} is missing meta-labels")));
                }
                (None, Some(_)) => {
                    return Err(Error::Label(format!("unlabeled batch item {i} carries meta-labels")));
                }
                (None, None) => {}
            }
        }
        Ok(())
    }
}

/// Loss values; `total = meta + alpha * sim + beta * cons`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub meta: T,
    pub sim: T,
    pub cons: T,
    pub total: T,
}

/// Quantities held constant while differentiating: per-anchor positive sets
/// and raw consistency targets (the opposite view's combinatorial embedding).
#[derive(Debug, Clone)]
pub struct FrozenParts<T> {
    pub positives: Vec<Vec<usize>>,
    /// Target for the direction that runs view A through the prediction head.
    pub target_for_a: Vec<Vec<T>>,
    /// Target for the direction that runs view B through the prediction head.
    pub target_for_b: Vec<Vec<T>>,
}

/// Pseudo-positive selection. `pi_hats` are normalized combinatorial
/// embeddings; item j is a positive for anchor i when their inner product
/// reaches `gamma`, or when both carry the same class label.
pub fn select_positives<T: Scalar>(
    pi_hats: &[Vec<T>],
    labels: &[Option<u32>],
    gamma: T,
) -> Vec<Vec<usize>> {
    let n = pi_hats.len();
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .filter(|&j| {
                    dot(&pi_hats[i], &pi_hats[j]) >= gamma
                        || matches!((labels[i], labels[j]), (Some(a), Some(b)) if a == b)
                })
                .collect()
        })
        .collect()
}

/// Meta-class cross-entropy of a single embedding, summed over sets.
pub fn meta_item_loss<T: Scalar>(
    model: &Model<T>,
    z: &[T],
    meta_labels: &[u32],
    tau: T,
) -> Result<T> {
    let heads = &model.heads;
    if z.len() != heads.d1() {
        return Err(Error::Shape(format!("embedding has {} dims, expected {}", z.len(), heads.d1())));
    }
    if meta_labels.len() != heads.num_sets() {
        return Err(Error::Label(format!(
            "got {} meta-labels for {} sets",
            meta_labels.len(),
            heads.num_sets()
        )));
    }
    let mut loss = T::zero();
    for (m, mat) in heads.mats.iter().enumerate() {
        let pos = meta_labels[m] as usize;
        if pos >= mat.k {
            return Err(Error::Label(format!("meta-label {pos} out of range for set {m} of size {}", mat.k)));
        }
        let slice = heads.slice(z, m);
        let norm = l2_norm(slice);
        if norm < T::from_f64_near(MIN_NORM) {
            return Err(Error::Normalization(format!("embedding slice {m} has near-zero norm")));
        }
        let unit: Vec<T> = slice.iter().map(|&v| v / norm).collect();
        let logits: Vec<T> = (0..mat.k).map(|j| dot(&unit, mat.proto(j)) / tau).collect();
        loss += log_sum_exp(&logits) - logits[pos];
    }
    Ok(loss)
}

/// Gradients of one consistency direction. The target enters the value but
/// is a constant by construction, so `d_target` is always exactly zero.
#[derive(Debug, Clone)]
pub struct ConsGrads<T> {
    pub d_w1: Vec<T>,
    pub d_b1: Vec<T>,
    pub d_w2: Vec<T>,
    pub d_b2: Vec<T>,
    pub d_online: Vec<T>,
    pub d_target: Vec<T>,
}

/// One direction of the consistency term: value
/// `-cos(normalize(pred(online)), normalize(target))` together with its
/// gradients with respect to the prediction head and the online input.
pub fn cons_direction<T: Scalar>(
    pred: &PredictionHead<T>,
    online: &[T],
    target: &[T],
) -> Result<(T, ConsGrads<T>)> {
    let cache = pred.forward(online)?;
    let out_norm = l2_norm(&cache.out);
    if out_norm < T::from_f64_near(MIN_NORM) {
        return Err(Error::Normalization("prediction output has near-zero norm".into()));
    }
    let h_hat: Vec<T> = cache.out.iter().map(|&v| v / out_norm).collect();
    let t_norm = l2_norm(target);
    if t_norm < T::from_f64_near(MIN_NORM) {
        return Err(Error::Normalization("consistency target has near-zero norm".into()));
    }
    let t_hat: Vec<T> = target.iter().map(|&v| v / t_norm).collect();
    let value = -dot(&h_hat, &t_hat);

    let dim = pred.dim();
    let mut grads = ConsGrads {
        d_w1: vec![T::zero(); pred.l1.w.len()],
        d_b1: vec![T::zero(); pred.l1.b.len()],
        d_w2: vec![T::zero(); pred.l2.w.len()],
        d_b2: vec![T::zero(); pred.l2.b.len()],
        d_online: vec![T::zero(); dim],
        d_target: vec![T::zero(); dim],
    };
    let d_h_hat: Vec<T> = t_hat.iter().map(|&v| -v).collect();
    let mut d_out = vec![T::zero(); dim];
    l2_normalize_backward(&h_hat, out_norm, &d_h_hat, &mut d_out);
    pred.backward(
        online,
        &cache,
        &d_out,
        &mut grads.d_w1,
        &mut grads.d_b1,
        &mut grads.d_w2,
        &mut grads.d_b2,
        &mut grads.d_online,
    );
    Ok((value, grads))
}

struct ItemFwd<T> {
    enc_a: EncoderCache<T>,
    pi_a: PiCache<T>,
    z_norm: T,
    z_hat: Vec<T>,
    pi_norm: T,
    pi_hat: Vec<T>,
    enc_b: EncoderCache<T>,
    pi_b: PiCache<T>,
}

fn forward_item<T: Scalar>(model: &Model<T>, item: &BatchItem<T>) -> Result<ItemFwd<T>> {
    let enc_a = model.encoder.forward(&item.view_a)?;
    let pi_a = model.heads.comb_embed_cached(&enc_a.z, model.hyper.lambda)?;
    let z_norm = l2_norm(&enc_a.z);
    if z_norm < T::from_f64_near(MIN_NORM) {
        return Err(Error::Normalization("embedding has near-zero norm".into()));
    }
    let z_hat: Vec<T> = enc_a.z.iter().map(|&v| v / z_norm).collect();
    let pi_norm = l2_norm(&pi_a.pi);
    if pi_norm < T::from_f64_near(MIN_NORM) {
        return Err(Error::Normalization("combinatorial embedding has near-zero norm".into()));
    }
    let pi_hat: Vec<T> = pi_a.pi.iter().map(|&v| v / pi_norm).collect();
    let enc_b = model.encoder.forward(&item.view_b)?;
    let pi_b = model.heads.comb_embed_cached(&enc_b.z, model.hyper.lambda)?;
    Ok(ItemFwd { enc_a, pi_a, z_norm, z_hat, pi_norm, pi_hat, enc_b, pi_b })
}

/// Captures the positive sets and consistency targets at the current
/// parameters, for use with [`total_loss_frozen`].
pub fn capture_frozen<T: Scalar>(model: &Model<T>, batch: &Batch<T>) -> Result<FrozenParts<T>> {
    batch.validate_for(model)?;
    let fwd: Vec<ItemFwd<T>> =
        batch.items.iter().map(|item| forward_item(model, item)).collect::<Result<_>>()?;
    let pi_hats: Vec<Vec<T>> = fwd.iter().map(|f| f.pi_hat.clone()).collect();
    let labels: Vec<Option<u32>> = batch.items.iter().map(|it| it.label).collect();
    let positives = select_positives(&pi_hats, &labels, model.hyper.gamma);
    let target_for_a = fwd.iter().map(|f| f.pi_b.pi.clone()).collect();
    let target_for_b = fwd.iter().map(|f| f.pi_a.pi.clone()).collect();
    Ok(FrozenParts { positives, target_for_a, target_for_b })
}

fn validate_frozen<T: Scalar>(model: &Model<T>, batch: &Batch<T>, frozen: &FrozenParts<T>) -> Result<()> {
    let n = batch.items.len();
    if frozen.positives.len() != n || frozen.target_for_a.len() != n || frozen.target_for_b.len() != n {
        return Err(Error::Parameter("frozen parts do not match the batch size".into()));
    }
    for (i, pos) in frozen.positives.iter().enumerate() {
        if pos.iter().any(|&j| j >= n || j == i) {
            return Err(Error::Parameter(format!("frozen positives of anchor {i} are out of range")));
        }
    }
    for t in frozen.target_for_a.iter().chain(frozen.target_for_b.iter()) {
        if t.len() != model.d1() {
            return Err(Error::Parameter("frozen target has wrong dimension".into()));
        }
    }
    Ok(())
}

fn run_batch<T: Scalar>(
    model: &Model<T>,
    batch: &Batch<T>,
    frozen: Option<&FrozenParts<T>>,
    want_grads: bool,
) -> Result<(LossBreakdown<T>, Option<Gradients<T>>)> {
    batch.validate_for(model)?;
    if let Some(f) = frozen {
        validate_frozen(model, batch, f)?;
    }
    let hyper = model.hyper;
    let n = batch.items.len();
    let d1 = model.d1();
    let d2 = model.d2();

    let fwd: Vec<ItemFwd<T>> =
        batch.items.iter().map(|item| forward_item(model, item)).collect::<Result<_>>()?;

    let mut grads = want_grads.then(|| Gradients::zeros_for(model));
    let mut d_z_a = vec![vec![T::zero(); d1]; n];
    let mut d_z_hat = vec![vec![T::zero(); d1]; n];
    let mut d_pi_a = vec![vec![T::zero(); d1]; n];
    let mut d_pi_hat = vec![vec![T::zero(); d1]; n];
    let mut d_z_b = vec![vec![T::zero(); d1]; n];
    let mut d_pi_b = vec![vec![T::zero(); d1]; n];

    // Meta-class term over labeled items.
    let labeled: Vec<usize> = (0..n).filter(|&i| batch.items[i].label.is_some()).collect();
    let mut meta = T::zero();
    if !labeled.is_empty() {
        let w_item = T::one() / T::from_usize_near(labeled.len());
        for &i in &labeled {
            let metas = batch.items[i].meta_labels.as_ref().unwrap();
            for (m, mat) in model.heads.mats.iter().enumerate() {
                let assign = &fwd[i].pi_a.slices[m];
                let pos = metas[m] as usize;
                let logits: Vec<T> =
                    (0..mat.k).map(|j| dot(&assign.unit, mat.proto(j)) / hyper.tau).collect();
                meta += w_item * (log_sum_exp(&logits) - logits[pos]);
                if let Some(g) = grads.as_mut() {
                    let mut probs = logits.clone();
                    softmax_in_place(&mut probs);
                    let mut d_unit = vec![T::zero(); d2];
                    for j in 0..mat.k {
                        let mut dl = probs[j];
                        if j == pos {
                            dl -= T::one();
                        }
                        dl = dl * w_item / hyper.tau;
                        let proto = mat.proto(j);
                        for t in 0..d2 {
                            d_unit[t] += dl * proto[t];
                            g.heads[m][j * d2 + t] += dl * assign.unit[t];
                        }
                    }
                    let lo = m * d2;
                    l2_normalize_backward(&assign.unit, assign.norm, &d_unit, &mut d_z_a[i][lo..lo + d2]);
                }
            }
        }
    }

    // Similarity term over anchors with a nonempty positive set.
    let positives: Vec<Vec<usize>> = match frozen {
        Some(f) => f.positives.clone(),
        None => {
            let pi_hats: Vec<Vec<T>> = fwd.iter().map(|f| f.pi_hat.clone()).collect();
            let labels: Vec<Option<u32>> = batch.items.iter().map(|it| it.label).collect();
            select_positives(&pi_hats, &labels, hyper.gamma)
        }
    };
    let active: Vec<usize> = (0..n).filter(|&i| !positives[i].is_empty()).collect();
    let mut sim = T::zero();
    if !active.is_empty() {
        let w_anchor = T::one() / T::from_usize_near(active.len());
        for &i in &active {
            let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let scores: Vec<T> = others.iter().map(|&j| dot(&fwd[i].z_hat, &fwd[j].pi_hat)).collect();
            let lse = log_sum_exp(&scores);
            let inv_p = T::one() / T::from_usize_near(positives[i].len());
            let mut pos_mean = T::zero();
            for &p in &positives[i] {
                let slot = if p < i { p } else { p - 1 };
                pos_mean += scores[slot] * inv_p;
            }
            sim += w_anchor * (lse - pos_mean);
            if grads.is_some() {
                let mut probs = scores.clone();
                softmax_in_place(&mut probs);
                for &p in &positives[i] {
                    let slot = if p < i { p } else { p - 1 };
                    probs[slot] -= inv_p;
                }
                let scale = hyper.alpha * w_anchor;
                for (slot, &j) in others.iter().enumerate() {
                    let coeff = scale * probs[slot];
                    for t in 0..d1 {
                        d_z_hat[i][t] += coeff * fwd[j].pi_hat[t];
                        d_pi_hat[j][t] += coeff * fwd[i].z_hat[t];
                    }
                }
            }
        }
    }

    // Consistency term, symmetrized over views; targets are constants.
    let mut cons = T::zero();
    let w_item = T::one() / T::from_usize_near(n);
    let half = T::from_f64_near(0.5);
    for i in 0..n {
        let target_a: &[T] = match frozen {
            Some(f) => &f.target_for_a[i],
            None => &fwd[i].pi_b.pi,
        };
        let target_b: &[T] = match frozen {
            Some(f) => &f.target_for_b[i],
            None => &fwd[i].pi_a.pi,
        };
        let (va, ga) = cons_direction(&model.pred, &fwd[i].pi_a.pi, target_a)?;
        let (vb, gb) = cons_direction(&model.pred, &fwd[i].pi_b.pi, target_b)?;
        cons += w_item * half * (va + vb);
        if let Some(g) = grads.as_mut() {
            let scale = hyper.beta * w_item * half;
            for (dst, src) in [
                (&mut g.pred_w1, &ga.d_w1),
                (&mut g.pred_b1, &ga.d_b1),
                (&mut g.pred_w2, &ga.d_w2),
                (&mut g.pred_b2, &ga.d_b2),
            ] {
                for (d, s) in dst.iter_mut().zip(src.iter()) {
                    *d += scale * *s;
                }
            }
            for (dst, src) in [
                (&mut g.pred_w1, &gb.d_w1),
                (&mut g.pred_b1, &gb.d_b1),
                (&mut g.pred_w2, &gb.d_w2),
                (&mut g.pred_b2, &gb.d_b2),
            ] {
                for (d, s) in dst.iter_mut().zip(src.iter()) {
                    *d += scale * *s;
                }
            }
            for t in 0..d1 {
                d_pi_a[i][t] += scale * ga.d_online[t];
                d_pi_b[i][t] += scale * gb.d_online[t];
            }
        }
    }

    let total = meta + hyper.alpha * sim + hyper.beta * cons;
    if !total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss: meta {meta}, sim {sim}, cons {cons}")));
    }
    let breakdown = LossBreakdown { meta, sim, cons, total };

    let Some(mut g) = grads else {
        return Ok((breakdown, None));
    };

    // Pull per-item gradients back through the embeddings and the encoder.
    for i in 0..n {
        l2_normalize_backward(&fwd[i].pi_hat, fwd[i].pi_norm, &d_pi_hat[i], &mut d_pi_a[i]);
        model.heads.comb_embed_backward(&fwd[i].pi_a, hyper.lambda, &d_pi_a[i], &mut d_z_a[i], &mut g.heads);
        l2_normalize_backward(&fwd[i].z_hat, fwd[i].z_norm, &d_z_hat[i], &mut d_z_a[i]);
        model.encoder.backward(
            &batch.items[i].view_a,
            &fwd[i].enc_a,
            &d_z_a[i],
            &mut g.enc_w1,
            &mut g.enc_b1,
            &mut g.enc_w2,
            &mut g.enc_b2,
        );
        model.heads.comb_embed_backward(&fwd[i].pi_b, hyper.lambda, &d_pi_b[i], &mut d_z_b[i], &mut g.heads);
        model.encoder.backward(
            &batch.items[i].view_b,
            &fwd[i].enc_b,
            &d_z_b[i],
            &mut g.enc_w1,
            &mut g.enc_b1,
            &mut g.enc_w2,
            &mut g.enc_b2,
        );
    }
    Ok((breakdown, Some(g)))
}

/// Loss and gradients of the total objective at the current parameters.
pub fn total_loss<T: Scalar>(model: &Model<T>, batch: &Batch<T>) -> Result<(LossBreakdown<T>, Gradients<T>)> {
    let (breakdown, grads) = run_batch(model, batch, None, true)?;
    Ok((breakdown, grads.unwrap()))
}

/// Loss values only.
pub fn total_loss_value<T: Scalar>(model: &Model<T>, batch: &Batch<T>) -> Result<LossBreakdown<T>> {
    Ok(run_batch(model, batch, None, false)?.0)
}

/// Loss values with positive sets and consistency targets pinned to `frozen`.
/// At the parameters where `frozen` was captured this equals the live value.
pub fn total_loss_frozen<T: Scalar>(
    model: &Model<T>,
    batch: &Batch<T>,
    frozen: &FrozenParts<T>,
) -> Result<LossBreakdown<T>> {
    Ok(run_batch(model, batch, Some(frozen), false)?.0)
}
