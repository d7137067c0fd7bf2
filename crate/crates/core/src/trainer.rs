//! Mini-batch training loop.
//!
//! Each step samples a batch with replacement (a labeled part and an
//! unlabeled part), makes two augmented views of every item, takes one AdamW
//! step on the composite objective, and renormalizes the prototypes. All
//! randomness comes from per-purpose counter streams of the run seed, so a
//! rerun with the same inputs reproduces the parameter trajectory bit for
//! bit.

use crate::dataset::{sample_with_replacement, FeatureTable, OpenSetSplit};
use crate::error::{Error, Result};
use crate::metascheme::MetaScheme;
use crate::model::Model;
use crate::objectives::{total_loss, Batch, BatchItem};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;
use rand::Rng;
use std::io::Write as _;
use std::path::Path;

/// One training example: raw features plus, for revealed items, the class
/// label and its per-set prototype assignment.
#[derive(Debug, Clone)]
pub struct TrainItem<T> {
    pub features: Vec<T>,
    pub label: Option<u32>,
    pub meta_labels: Option<Vec<u32>>,
}

#[derive(Debug, Clone)]
pub struct TrainConfig<T> {
    pub steps: usize,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub lr: T,
    pub weight_decay: T,
    pub aug_sigma: T,
    pub aug_dropout: T,
    pub seed: u64,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_labeled: 64,
            batch_unlabeled: 64,
            lr: T::from_f64_near(1e-3),
            weight_decay: T::from_f64_near(1e-4),
            aug_sigma: T::from_f64_near(0.05),
            aug_dropout: T::from_f64_near(0.1),
            seed: 7,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.batch_labeled == 0 {
            return Err(Error::Parameter("batch_labeled must be at least 1".into()));
        }
        if !(self.lr > T::zero() && self.lr.is_finite()) {
            return Err(Error::Parameter(format!("lr must be positive and finite, got {}", self.lr)));
        }
        if !(self.weight_decay >= T::zero() && self.weight_decay.is_finite()) {
            return Err(Error::Parameter(format!(
                "weight_decay must be nonnegative and finite, got {}",
                self.weight_decay
            )));
        }
        if !(self.aug_sigma >= T::zero() && self.aug_sigma.is_finite()) {
            return Err(Error::Parameter(format!(
                "aug_sigma must be nonnegative and finite, got {}",
                self.aug_sigma
            )));
        }
        if !(self.aug_dropout >= T::zero() && self.aug_dropout < T::one()) {
            return Err(Error::Parameter(format!(
                "aug_dropout must be in [0, 1), got {}",
                self.aug_dropout
            )));
        }
        Ok(())
    }
}

/// Loss values recorded at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow<T> {
    pub step: usize,
    pub meta: T,
    pub sim: T,
    pub cons: T,
    pub total: T,
}

#[derive(Debug, Clone)]
pub struct TrainReport<T> {
    pub trace: Vec<TraceRow<T>>,
}

/// Additive Gaussian noise followed by inverted dropout. Both draws happen
/// for every coordinate regardless of the configuration so that a change of
/// sigma or dropout rate never shifts the rest of the stream.
pub fn augment<T: Scalar, R: Rng + ?Sized>(x: &[T], sigma: T, dropout: T, rng: &mut R) -> Vec<T> {
    let keep = T::one() - dropout;
    x.iter()
        .map(|&v| {
            let noise = T::standard_normal(rng);
            let u = T::uniform_01(rng);
            let noisy = v + sigma * noise;
            if u < dropout {
                T::zero()
            } else {
                noisy / keep
            }
        })
        .collect()
}

/// Assembles per-item training inputs from a feature table, a split, and a
/// meta-label scheme. Items keep table order; only ids in the split's labeled
/// set carry their label and meta-labels.
pub fn build_train_items<T: Scalar>(
    table: &FeatureTable,
    split: &OpenSetSplit,
    scheme: &MetaScheme,
) -> Result<Vec<TrainItem<T>>> {
    split.validate_against(table)?;
    let mut items = Vec::with_capacity(table.len());
    for (i, rec) in table.records.iter().enumerate() {
        let features = table.features_as::<T>(i);
        if split.labeled_ids.contains(&rec.id) {
            let label = rec.label.ok_or_else(|| {
                Error::Label(format!("item {} is in the labeled set but has no class label", rec.id))
            })?;
            items.push(TrainItem {
                features,
                label: Some(label),
                meta_labels: Some(scheme.meta_labels_for(label)?),
            });
        } else {
            items.push(TrainItem { features, label: None, meta_labels: None });
        }
    }
    Ok(items)
}

struct AdamW<T> {
    m: Vec<T>,
    v: Vec<T>,
    beta1: T,
    beta2: T,
    eps: T,
    t: u32,
}

impl<T: Scalar> AdamW<T> {
    fn new(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            beta1: T::from_f64_near(0.9),
            beta2: T::from_f64_near(0.999),
            eps: T::from_f64_near(1e-8),
            t: 1,
        }
    }

    /// One decoupled-weight-decay Adam step over the flattened parameters.
    fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr: T, wd: T) {
        let bc1 = T::one() - self.beta1.powi(self.t as i32);
        let bc2 = T::one() - self.beta2.powi(self.t as i32);
        let mut off = 0usize;
        for (pslice, gslice) in params.iter_mut().zip(grads.iter()) {
            debug_assert_eq!(pslice.len(), gslice.len());
            for (p, &g) in pslice.iter_mut().zip(gslice.iter()) {
                let m = &mut self.m[off];
                let v = &mut self.v[off];
                *m = self.beta1 * *m + (T::one() - self.beta1) * g;
                *v = self.beta2 * *v + (T::one() - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = *p - lr * (m_hat / (v_hat.sqrt() + self.eps) + wd * *p);
                off += 1;
            }
        }
        self.t += 1;
    }
}

/// Runs the training loop in place and returns the per-step loss trace.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    items: &[TrainItem<T>],
    cfg: &TrainConfig<T>,
) -> Result<TrainReport<T>> {
    cfg.validate()?;
    model.validate()?;
    for (i, item) in items.iter().enumerate() {
        if item.features.len() != model.d() {
            return Err(Error::Shape(format!(
                "training item {i} has {} features, model expects {}",
                item.features.len(),
                model.d()
            )));
        }
    }
    let labeled: Vec<usize> =
        (0..items.len()).filter(|&i| items[i].label.is_some()).collect();
    let unlabeled: Vec<usize> =
        (0..items.len()).filter(|&i| items[i].label.is_none()).collect();
    if labeled.is_empty() {
        return Err(Error::Parameter("training requires at least one labeled item".into()));
    }
    if cfg.batch_unlabeled > 0 && unlabeled.is_empty() {
        return Err(Error::Parameter(
            "batch_unlabeled > 0 but the pool has no unlabeled items".into(),
        ));
    }

    let mut sample_rng = stream_rng(cfg.seed, Stream::Sample);
    let mut aug_rng = stream_rng(cfg.seed, Stream::Augment);
    let n_params = model.flatten_params().len();
    let mut opt = AdamW::<T>::new(n_params);
    let mut trace = Vec::with_capacity(cfg.steps);

    model.renormalize_prototypes()?;
    for step in 0..cfg.steps {
        let mut chosen = sample_with_replacement(&labeled, cfg.batch_labeled, &mut sample_rng);
        if cfg.batch_unlabeled > 0 {
            chosen.extend(sample_with_replacement(&unlabeled, cfg.batch_unlabeled, &mut sample_rng));
        }
        let batch = Batch {
            items: chosen
                .iter()
                .map(|&i| {
                    let it = &items[i];
                    BatchItem {
                        view_a: augment(&it.features, cfg.aug_sigma, cfg.aug_dropout, &mut aug_rng),
                        view_b: augment(&it.features, cfg.aug_sigma, cfg.aug_dropout, &mut aug_rng),
                        label: it.label,
                        meta_labels: it.meta_labels.clone(),
                    }
                })
                .collect(),
        };
        let (loss, grads) = total_loss(model, &batch)?;
        opt.step(&mut model.param_slices_mut(), &grads.slices(), cfg.lr, cfg.weight_decay);
        model.renormalize_prototypes()?;
        trace.push(TraceRow {
            step,
            meta: loss.meta,
            sim: loss.sim,
            cons: loss.cons,
            total: loss.total,
        });
    }
    Ok(TrainReport { trace })
}

/// Writes the trace as `step,meta,sim,cons,total` lines, no header.
pub fn write_trace_csv<T: Scalar>(path: &Path, trace: &[TraceRow<T>]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in trace {
        writeln!(out, "{},{},{},{},{}", row.step, row.meta, row.sim, row.cons, row.total)?;
    }
    out.flush()?;
    Ok(())
}
