//! Model parameters and differentiable building blocks.
//!
//! The encoder is a two-layer tanh MLP mapping d-dimensional features to an
//! embedding of dimension d1 = M * d2. The embedding splits into M slices;
//! slice m is softly assigned to one of K_m prototype columns. A prediction
//! head (same two-layer shape, d1 -> d1) transforms the concatenated
//! assignment for the consistency objective.
//!
//! Backward routines accumulate into caller-provided gradient buffers in a
//! fixed order, keeping results bit-reproducible.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vecmath::{dot, l2_norm, l2_normalize_backward, softmax_in_place, MIN_NORM};
use rand::Rng;
use std::io::{Read, Write};
use std::path::Path;

pub const CEMB_MAGIC: &[u8; 4] = b"CEMB";

/// Dense affine layer, weights row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear { in_dim, out_dim, w: vec![T::zero(); in_dim * out_dim], b: vec![T::zero(); out_dim] }
    }

    fn init(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let scale = T::one() / T::from_usize_near(in_dim).sqrt();
        let w = (0..in_dim * out_dim).map(|_| T::standard_normal(rng) * scale).collect();
        Linear { in_dim, out_dim, w, b: vec![T::zero(); out_dim] }
    }

    pub fn forward_into(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for i in 0..self.out_dim {
            let row = &self.w[i * self.in_dim..(i + 1) * self.in_dim];
            out[i] = self.b[i] + dot(row, x);
        }
    }

    /// Accumulates dL/dw and dL/db; optionally backpropagates into `d_x`.
    pub fn backward(&self, x: &[T], d_out: &[T], d_w: &mut [T], d_b: &mut [T], d_x: Option<&mut [T]>) {
        for i in 0..self.out_dim {
            let g = d_out[i];
            d_b[i] += g;
            let row = i * self.in_dim;
            for j in 0..self.in_dim {
                d_w[row + j] += g * x[j];
            }
        }
        if let Some(d_x) = d_x {
            for j in 0..self.in_dim {
                let mut acc = T::zero();
                for i in 0..self.out_dim {
                    acc += self.w[i * self.in_dim + j] * d_out[i];
                }
                d_x[j] += acc;
            }
        }
    }
}

/// Two-layer tanh MLP mapping input features to the embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub l1: Linear<T>,
    pub l2: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    /// tanh activations of the first layer.
    pub hidden: Vec<T>,
    pub z: Vec<T>,
}

impl<T: Scalar> Encoder<T> {
    pub fn init(d: usize, hidden: usize, d1: usize, rng: &mut impl Rng) -> Self {
        Encoder { l1: Linear::init(d, hidden, rng), l2: Linear::init(hidden, d1, rng) }
    }

    pub fn in_dim(&self) -> usize {
        self.l1.in_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.l1.out_dim
    }

    pub fn out_dim(&self) -> usize {
        self.l2.out_dim
    }

    pub fn forward(&self, x: &[T]) -> Result<EncoderCache<T>> {
        if x.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "encoder expects {} input features, got {}",
                self.in_dim(),
                x.len()
            )));
        }
        let mut hidden = vec![T::zero(); self.hidden_dim()];
        self.l1.forward_into(x, &mut hidden);
        for h in hidden.iter_mut() {
            *h = h.tanh();
        }
        let mut z = vec![T::zero(); self.out_dim()];
        self.l2.forward_into(&hidden, &mut z);
        Ok(EncoderCache { hidden, z })
    }

    pub fn encode(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.forward(x)?.z)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        x: &[T],
        cache: &EncoderCache<T>,
        d_z: &[T],
        d_w1: &mut [T],
        d_b1: &mut [T],
        d_w2: &mut [T],
        d_b2: &mut [T],
    ) {
        let mut d_hidden = vec![T::zero(); self.hidden_dim()];
        self.l2.backward(&cache.hidden, d_z, d_w2, d_b2, Some(&mut d_hidden));
        for (i, g) in d_hidden.iter_mut().enumerate() {
            let h = cache.hidden[i];
            *g = *g * (T::one() - h * h);
        }
        self.l1.backward(x, &d_hidden, d_w1, d_b1, None);
    }
}

/// Prototype matrix for one meta-class set: K columns of dimension d2,
/// stored prototype-major (column j occupies `data[j*d2..(j+1)*d2]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProtoMat<T> {
    pub d2: usize,
    pub k: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> ProtoMat<T> {
    pub fn proto(&self, j: usize) -> &[T] {
        &self.data[j * self.d2..(j + 1) * self.d2]
    }

    pub fn proto_mut(&mut self, j: usize) -> &mut [T] {
        &mut self.data[j * self.d2..(j + 1) * self.d2]
    }
}

/// All M prototype matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaHeads<T> {
    pub d2: usize,
    pub mats: Vec<ProtoMat<T>>,
}

/// Forward cache of one soft assignment.
#[derive(Debug, Clone)]
pub struct SliceAssign<T> {
    pub norm: T,
    pub unit: Vec<T>,
    pub weights: Vec<T>,
    pub phi: Vec<T>,
}

/// Soft assignment of one embedding slice onto a prototype matrix:
/// softmax (at inverse temperature `lambda`) of inner products between the
/// normalized slice and the prototype columns, used as convex weights over
/// the columns themselves.
pub fn soft_assign_cached<T: Scalar>(z_m: &[T], mat: &ProtoMat<T>, lambda: T) -> Result<SliceAssign<T>> {
    if z_m.len() != mat.d2 {
        return Err(Error::Shape(format!("slice has {} dims, prototypes have {}", z_m.len(), mat.d2)));
    }
    let norm = l2_norm(z_m);
    if norm < T::from_f64_near(MIN_NORM) {
        return Err(Error::Normalization(format!("embedding slice has near-zero norm {norm}")));
    }
    let unit: Vec<T> = z_m.iter().map(|&v| v / norm).collect();
    let mut weights: Vec<T> = (0..mat.k).map(|j| lambda * dot(&unit, mat.proto(j))).collect();
    softmax_in_place(&mut weights);
    let mut phi = vec![T::zero(); mat.d2];
    for j in 0..mat.k {
        let w = weights[j];
        let proto = mat.proto(j);
        for i in 0..mat.d2 {
            phi[i] += w * proto[i];
        }
    }
    Ok(SliceAssign { norm, unit, weights, phi })
}

pub fn soft_assign<T: Scalar>(z_m: &[T], mat: &ProtoMat<T>, lambda: T) -> Result<Vec<T>> {
    Ok(soft_assign_cached(z_m, mat, lambda)?.phi)
}

/// Pullback of [`soft_assign_cached`]: accumulates into the raw slice gradient
/// `d_zm` and the prototype gradient `d_mat`.
pub fn soft_assign_backward<T: Scalar>(
    cache: &SliceAssign<T>,
    mat: &ProtoMat<T>,
    lambda: T,
    d_phi: &[T],
    d_zm: &mut [T],
    d_mat: &mut [T],
) {
    let k = mat.k;
    let d2 = mat.d2;
    let mut g = vec![T::zero(); k];
    for j in 0..k {
        g[j] = dot(d_phi, mat.proto(j));
    }
    let mut mean_g = T::zero();
    for j in 0..k {
        mean_g += cache.weights[j] * g[j];
    }
    let mut d_unit = vec![T::zero(); d2];
    for j in 0..k {
        let ds = cache.weights[j] * (g[j] - mean_g);
        let proto = mat.proto(j);
        let lam_ds = lambda * ds;
        for i in 0..d2 {
            d_unit[i] += lam_ds * proto[i];
            d_mat[j * d2 + i] += lam_ds * cache.unit[i] + cache.weights[j] * d_phi[i];
        }
    }
    l2_normalize_backward(&cache.unit, cache.norm, &d_unit, d_zm);
}

/// Forward cache of a full combinatorial embedding.
#[derive(Debug, Clone)]
pub struct PiCache<T> {
    pub slices: Vec<SliceAssign<T>>,
    pub pi: Vec<T>,
}

impl<T: Scalar> MetaHeads<T> {
    pub fn num_sets(&self) -> usize {
        self.mats.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.mats.iter().map(|m| m.k).collect()
    }

    pub fn d1(&self) -> usize {
        self.d2 * self.mats.len()
    }

    pub fn init(d2: usize, sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Parameter("need at least one meta-class set".into()));
        }
        if d2 < 1 {
            return Err(Error::Parameter("slice dimension must be >= 1".into()));
        }
        let mut mats = Vec::with_capacity(sizes.len());
        for &k in sizes {
            if k < 1 {
                return Err(Error::Parameter("every meta-class set needs >= 1 prototype".into()));
            }
            let mut data = vec![T::zero(); k * d2];
            for j in 0..k {
                loop {
                    for v in data[j * d2..(j + 1) * d2].iter_mut() {
                        *v = T::standard_normal(rng);
                    }
                    let norm = l2_norm(&data[j * d2..(j + 1) * d2]);
                    if norm > T::from_f64_near(1e-6) {
                        for v in data[j * d2..(j + 1) * d2].iter_mut() {
                            *v = *v / norm;
                        }
                        break;
                    }
                }
            }
            mats.push(ProtoMat { d2, k, data });
        }
        Ok(MetaHeads { d2, mats })
    }

    pub fn slice<'a>(&self, z: &'a [T], m: usize) -> &'a [T] {
        &z[m * self.d2..(m + 1) * self.d2]
    }

    /// Concatenation of per-set soft assignments.
    pub fn comb_embed_cached(&self, z: &[T], lambda: T) -> Result<PiCache<T>> {
        if z.len() != self.d1() {
            return Err(Error::Shape(format!("embedding has {} dims, heads expect {}", z.len(), self.d1())));
        }
        let mut slices = Vec::with_capacity(self.mats.len());
        let mut pi = Vec::with_capacity(self.d1());
        for (m, mat) in self.mats.iter().enumerate() {
            let cache = soft_assign_cached(self.slice(z, m), mat, lambda)?;
            pi.extend_from_slice(&cache.phi);
            slices.push(cache);
        }
        Ok(PiCache { slices, pi })
    }

    pub fn comb_embed(&self, z: &[T], lambda: T) -> Result<Vec<T>> {
        Ok(self.comb_embed_cached(z, lambda)?.pi)
    }

    /// Pullback of the combinatorial embedding; adds into `d_z` and `d_mats`.
    pub fn comb_embed_backward(
        &self,
        cache: &PiCache<T>,
        lambda: T,
        d_pi: &[T],
        d_z: &mut [T],
        d_mats: &mut [Vec<T>],
    ) {
        for (m, mat) in self.mats.iter().enumerate() {
            let lo = m * self.d2;
            let hi = lo + self.d2;
            soft_assign_backward(&cache.slices[m], mat, lambda, &d_pi[lo..hi], &mut d_z[lo..hi], &mut d_mats[m]);
        }
    }
}

/// Two-layer tanh MLP (d1 -> d1) applied to the combinatorial embedding in
/// the consistency objective.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionHead<T> {
    pub l1: Linear<T>,
    pub l2: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct PredCache<T> {
    pub hidden: Vec<T>,
    pub out: Vec<T>,
}

impl<T: Scalar> PredictionHead<T> {
    pub fn init(d1: usize, rng: &mut impl Rng) -> Self {
        PredictionHead { l1: Linear::init(d1, d1, rng), l2: Linear::init(d1, d1, rng) }
    }

    pub fn dim(&self) -> usize {
        self.l1.in_dim
    }

    pub fn forward(&self, p: &[T]) -> Result<PredCache<T>> {
        if p.len() != self.dim() {
            return Err(Error::Shape(format!("prediction head expects {} dims, got {}", self.dim(), p.len())));
        }
        let mut hidden = vec![T::zero(); self.l1.out_dim];
        self.l1.forward_into(p, &mut hidden);
        for h in hidden.iter_mut() {
            *h = h.tanh();
        }
        let mut out = vec![T::zero(); self.l2.out_dim];
        self.l2.forward_into(&hidden, &mut out);
        Ok(PredCache { hidden, out })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        p: &[T],
        cache: &PredCache<T>,
        d_out: &[T],
        d_w1: &mut [T],
        d_b1: &mut [T],
        d_w2: &mut [T],
        d_b2: &mut [T],
        d_p: &mut [T],
    ) {
        let mut d_hidden = vec![T::zero(); self.l1.out_dim];
        self.l2.backward(&cache.hidden, d_out, d_w2, d_b2, Some(&mut d_hidden));
        for (i, g) in d_hidden.iter_mut().enumerate() {
            let h = cache.hidden[i];
            *g = *g * (T::one() - h * h);
        }
        self.l1.backward(p, &d_hidden, d_w1, d_b1, Some(d_p));
    }
}

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams<T> {
    /// Inverse temperature of the soft assignment.
    pub lambda: T,
    /// Temperature of the meta-class softmax loss.
    pub tau: T,
    /// Cosine threshold for pseudo-positive selection.
    pub gamma: T,
    /// Weight of the similarity objective.
    pub alpha: T,
    /// Weight of the consistency objective.
    pub beta: T,
}

impl<T: Scalar> Default for Hyperparams<T> {
    fn default() -> Self {
        Hyperparams {
            lambda: T::from_f64_near(10.0),
            tau: T::from_f64_near(0.1),
            gamma: T::from_f64_near(0.8),
            alpha: T::one(),
            beta: T::one(),
        }
    }
}

impl<T: Scalar> Hyperparams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > T::zero()) {
            return Err(Error::Parameter(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.tau > T::zero()) {
            return Err(Error::Parameter(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.gamma > -T::one() && self.gamma <= T::one()) {
            return Err(Error::Parameter(format!("gamma must be in (-1, 1], got {}", self.gamma)));
        }
        if !(self.alpha >= T::zero()) {
            return Err(Error::Parameter(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.beta >= T::zero()) {
            return Err(Error::Parameter(format!("beta must be >= 0, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Complete trainable model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub encoder: Encoder<T>,
    pub heads: MetaHeads<T>,
    pub pred: PredictionHead<T>,
    pub hyper: Hyperparams<T>,
}

impl<T: Scalar> Model<T> {
    pub fn init(
        d: usize,
        hidden: usize,
        d2: usize,
        sizes: &[usize],
        hyper: Hyperparams<T>,
        seed: u64,
    ) -> Result<Self> {
        if d < 1 || hidden < 1 {
            return Err(Error::Parameter("encoder dimensions must be >= 1".into()));
        }
        hyper.validate()?;
        let d1 = d2 * sizes.len();
        let mut rng = crate::rng::stream_rng(seed, crate::rng::Stream::Init);
        let encoder = Encoder::init(d, hidden, d1, &mut rng);
        let heads = MetaHeads::init(d2, sizes, &mut rng)?;
        let pred = PredictionHead::init(d1, &mut rng);
        Ok(Model { encoder, heads, pred, hyper })
    }

    pub fn d(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn hidden(&self) -> usize {
        self.encoder.hidden_dim()
    }

    pub fn d1(&self) -> usize {
        self.heads.d1()
    }

    pub fn d2(&self) -> usize {
        self.heads.d2
    }

    pub fn num_sets(&self) -> usize {
        self.heads.num_sets()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.heads.sizes()
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.encoder.out_dim() != self.heads.d1() {
            return Err(Error::Shape(format!(
                "encoder output dim {} does not match heads dim {}",
                self.encoder.out_dim(),
                self.heads.d1()
            )));
        }
        if self.pred.dim() != self.heads.d1() {
            return Err(Error::Shape("prediction head dim does not match embedding dim".into()));
        }
        Ok(())
    }

    pub fn encode(&self, x: &[T]) -> Result<Vec<T>> {
        self.encoder.encode(x)
    }

    /// Rescales every prototype column back to unit length.
    pub fn renormalize_prototypes(&mut self) -> Result<()> {
        for mat in self.heads.mats.iter_mut() {
            for j in 0..mat.k {
                let norm = l2_norm(mat.proto(j));
                if norm < T::from_f64_near(MIN_NORM) {
                    return Err(Error::Numeric("prototype collapsed to zero norm".into()));
                }
                for v in mat.proto_mut(j) {
                    *v = *v / norm;
                }
            }
        }
        Ok(())
    }

    /// Parameter tensors in declared order: encoder layers, prototype
    /// matrices, prediction head layers. Gradient buffers mirror this order.
    pub fn param_slices(&self) -> Vec<&[T]> {
        let mut v: Vec<&[T]> = vec![
            &self.encoder.l1.w,
            &self.encoder.l1.b,
            &self.encoder.l2.w,
            &self.encoder.l2.b,
        ];
        for mat in &self.heads.mats {
            v.push(&mat.data);
        }
        v.push(&self.pred.l1.w);
        v.push(&self.pred.l1.b);
        v.push(&self.pred.l2.w);
        v.push(&self.pred.l2.b);
        v
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut v: Vec<&mut [T]> = vec![
            &mut self.encoder.l1.w,
            &mut self.encoder.l1.b,
            &mut self.encoder.l2.w,
            &mut self.encoder.l2.b,
        ];
        for mat in &mut self.heads.mats {
            v.push(&mut mat.data);
        }
        v.push(&mut self.pred.l1.w);
        v.push(&mut self.pred.l1.b);
        v.push(&mut self.pred.l2.w);
        v.push(&mut self.pred.l2.b);
        v
    }

    pub fn flatten_params(&self) -> Vec<T> {
        let mut out = Vec::new();
        for s in self.param_slices() {
            out.extend_from_slice(s);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[T]) -> Result<()> {
        let total: usize = self.param_slices().iter().map(|s| s.len()).sum();
        if flat.len() != total {
            return Err(Error::Shape(format!("expected {total} parameters, got {}", flat.len())));
        }
        let mut offset = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CEMB_MAGIC);
        for v in [
            self.d() as u32,
            self.hidden() as u32,
            self.d1() as u32,
            self.d2() as u32,
            self.num_sets() as u32,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for k in self.sizes() {
            buf.extend_from_slice(&(k as u32).to_le_bytes());
        }
        for s in self.param_slices() {
            for &v in s {
                buf.extend_from_slice(&v.as_f32().to_le_bytes());
            }
        }
        for v in [self.hyper.lambda, self.hyper.tau, self.hyper.gamma, self.hyper.alpha, self.hyper.beta] {
            buf.extend_from_slice(&v.as_f32().to_le_bytes());
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::format_in(path, format!("truncated at offset {}", *pos)));
            }
            let out = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(out)
        };
        let magic = take(&mut pos, 4)?;
        if magic != CEMB_MAGIC {
            return Err(Error::format_in(path, "bad magic, expected CEMB"));
        }
        let u32_at = |pos: &mut usize| -> Result<u32> {
            Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
        };
        let d = u32_at(&mut pos)? as usize;
        let hidden = u32_at(&mut pos)? as usize;
        let d1 = u32_at(&mut pos)? as usize;
        let d2 = u32_at(&mut pos)? as usize;
        let m = u32_at(&mut pos)? as usize;
        if d2 * m != d1 {
            return Err(Error::format_in(path, format!("header claims d1 = {d1} but d2 * M = {}", d2 * m)));
        }
        let mut sizes = Vec::with_capacity(m);
        for _ in 0..m {
            let k = u32_at(&mut pos)? as usize;
            if k < 1 {
                return Err(Error::format_in(path, "meta-class set of size 0"));
            }
            sizes.push(k);
        }
        let f32_at = |pos: &mut usize| -> Result<f32> {
            Ok(f32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
        };
        let read_vec = |pos: &mut usize, n: usize| -> Result<Vec<T>> {
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                v.push(T::from_f32_exact(f32_at(pos)?));
            }
            Ok(v)
        };
        let mut encoder = Encoder { l1: Linear::zeros(d, hidden), l2: Linear::zeros(hidden, d1) };
        encoder.l1.w = read_vec(&mut pos, d * hidden)?;
        encoder.l1.b = read_vec(&mut pos, hidden)?;
        encoder.l2.w = read_vec(&mut pos, hidden * d1)?;
        encoder.l2.b = read_vec(&mut pos, d1)?;
        let mut mats = Vec::with_capacity(m);
        for &k in &sizes {
            mats.push(ProtoMat { d2, k, data: read_vec(&mut pos, k * d2)? });
        }
        let mut pred = PredictionHead { l1: Linear::zeros(d1, d1), l2: Linear::zeros(d1, d1) };
        pred.l1.w = read_vec(&mut pos, d1 * d1)?;
        pred.l1.b = read_vec(&mut pos, d1)?;
        pred.l2.w = read_vec(&mut pos, d1 * d1)?;
        pred.l2.b = read_vec(&mut pos, d1)?;
        let hyper = Hyperparams {
            lambda: T::from_f32_exact(f32_at(&mut pos)?),
            tau: T::from_f32_exact(f32_at(&mut pos)?),
            gamma: T::from_f32_exact(f32_at(&mut pos)?),
            alpha: T::from_f32_exact(f32_at(&mut pos)?),
            beta: T::from_f32_exact(f32_at(&mut pos)?),
        };
        if pos != bytes.len() {
            return Err(Error::format_in(path, format!("{} trailing bytes", bytes.len() - pos)));
        }
        let model = Model { encoder, heads: MetaHeads { d2, mats }, pred, hyper };
        model.validate().map_err(|e| Error::format_in(path, e.to_string()))?;
        Ok(model)
    }
}

/// Gradient buffers mirroring [`Model::param_slices`] order.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub enc_w1: Vec<T>,
    pub enc_b1: Vec<T>,
    pub enc_w2: Vec<T>,
    pub enc_b2: Vec<T>,
    pub heads: Vec<Vec<T>>,
    pub pred_w1: Vec<T>,
    pub pred_b1: Vec<T>,
    pub pred_w2: Vec<T>,
    pub pred_b2: Vec<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_for(model: &Model<T>) -> Self {
        Gradients {
            enc_w1: vec![T::zero(); model.encoder.l1.w.len()],
            enc_b1: vec![T::zero(); model.encoder.l1.b.len()],
            enc_w2: vec![T::zero(); model.encoder.l2.w.len()],
            enc_b2: vec![T::zero(); model.encoder.l2.b.len()],
            heads: model.heads.mats.iter().map(|m| vec![T::zero(); m.data.len()]).collect(),
            pred_w1: vec![T::zero(); model.pred.l1.w.len()],
            pred_b1: vec![T::zero(); model.pred.l1.b.len()],
            pred_w2: vec![T::zero(); model.pred.l2.w.len()],
            pred_b2: vec![T::zero(); model.pred.l2.b.len()],
        }
    }

    pub fn slices(&self) -> Vec<&[T]> {
        let mut v: Vec<&[T]> = vec![&self.enc_w1, &self.enc_b1, &self.enc_w2, &self.enc_b2];
        for h in &self.heads {
            v.push(h);
        }
        v.push(&self.pred_w1);
        v.push(&self.pred_b1);
        v.push(&self.pred_w2);
        v.push(&self.pred_b2);
        v
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for s in self.slices() {
            out.extend_from_slice(s);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis_mat(d2: usize, k: usize) -> ProtoMat<f64> {
        // Prototype j is the j-th axis vector.
        let mut data = vec![0.0; d2 * k];
        for j in 0..k {
            data[j * d2 + j] = 1.0;
        }
        ProtoMat { d2, k, data }
    }

    #[test]
    fn single_prototype_soft_assignment_is_that_prototype() {
        let mat = ProtoMat { d2: 3, k: 1, data: vec![0.6, 0.0, 0.8] };
        let phi = soft_assign(&[5.0, -2.0, 1.0], &mat, 10.0).unwrap();
        assert_eq!(phi, vec![0.6, 0.0, 0.8]);
    }

    #[test]
    fn equidistant_slice_lands_on_the_midpoint() {
        let mat = axis_mat(2, 2);
        let phi = soft_assign(&[1.0, 1.0], &mat, 7.3).unwrap();
        assert_eq!(phi, vec![0.5, 0.5]);
    }

    #[test]
    fn high_inverse_temperature_snaps_to_the_nearest_prototype() {
        let mat = axis_mat(2, 2);
        let phi = soft_assign(&[1.0, 0.0], &mat, 1e4).unwrap();
        let diff = ((phi[0] - 1.0).powi(2) + phi[1].powi(2)).sqrt();
        assert!(diff < 1e-3, "distance to argmax prototype {diff}");
    }

    #[test]
    fn soft_assignment_weights_are_convex() {
        let mat = ProtoMat {
            d2: 4,
            k: 3,
            data: vec![0.5, 0.5, 0.5, 0.5, -0.5, 0.5, -0.5, 0.5, 0.1, -0.9, 0.2, 0.3],
        };
        let cache = soft_assign_cached(&[0.3, -0.2, 0.9, 0.1], &mat, 10.0).unwrap();
        let sum: f64 = cache.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(cache.weights.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn zero_slice_is_rejected() {
        let mat = axis_mat(2, 2);
        assert!(soft_assign(&[0.0, 0.0], &mat, 10.0).is_err());
    }

    #[test]
    fn comb_embed_concatenates_per_slice_assignments() {
        let heads = MetaHeads { d2: 2, mats: vec![axis_mat(2, 2), axis_mat(2, 2)] };
        let z = vec![1.0, 0.2, -0.3, 0.9];
        let pi = heads.comb_embed(&z, 5.0).unwrap();
        let a = soft_assign(&z[0..2], &heads.mats[0], 5.0).unwrap();
        let b = soft_assign(&z[2..4], &heads.mats[1], 5.0).unwrap();
        assert_eq!(pi[..2], a[..]);
        assert_eq!(pi[2..], b[..]);
    }

    #[test]
    fn all_singleton_sets_make_a_constant_embedding() {
        let heads = MetaHeads {
            d2: 2,
            mats: vec![
                ProtoMat { d2: 2, k: 1, data: vec![1.0, 0.0] },
                ProtoMat { d2: 2, k: 1, data: vec![0.0, 1.0] },
            ],
        };
        let a = heads.comb_embed(&[0.4, 0.1, 0.3, -0.8], 10.0).unwrap();
        let b = heads.comb_embed(&[-2.0, 5.0, 1.0, 1.0], 10.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn encoder_rejects_wrong_input_dim() {
        let model = Model::<f64>::init(4, 8, 2, &[2, 2], Hyperparams::default(), 1).unwrap();
        assert!(model.encode(&[0.0; 5]).is_err());
        assert!(model.encode(&[0.5; 4]).is_ok());
    }

    #[test]
    fn init_is_deterministic_and_prototypes_are_unit() {
        let a = Model::<f64>::init(6, 10, 3, &[4, 4, 2], Hyperparams::default(), 42).unwrap();
        let b = Model::<f64>::init(6, 10, 3, &[4, 4, 2], Hyperparams::default(), 42).unwrap();
        assert_eq!(a, b);
        for mat in &a.heads.mats {
            for j in 0..mat.k {
                assert!((l2_norm(mat.proto(j)) - 1.0).abs() < 1e-12);
            }
        }
        let c = Model::<f64>::init(6, 10, 3, &[4, 4, 2], Hyperparams::default(), 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn model_file_roundtrip_is_byte_stable() {
        let model = Model::<f64>::init(5, 7, 3, &[4, 2], Hyperparams::default(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("m1.cemb");
        let p2 = dir.path().join("m2.cemb");
        model.save(&p1).unwrap();
        let loaded = Model::<f64>::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(loaded.sizes(), vec![4, 2]);
        assert_eq!(loaded.d(), 5);
    }

    #[test]
    fn corrupt_model_header_is_rejected() {
        let model = Model::<f64>::init(5, 7, 3, &[4, 2], Hyperparams::default(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cemb");
        model.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(Model::<f64>::load(&path).is_err());
    }

    #[test]
    fn gradient_buffers_align_with_parameter_slices() {
        let model = Model::<f64>::init(5, 7, 3, &[4, 2], Hyperparams::default(), 9).unwrap();
        let grads = Gradients::zeros_for(&model);
        let ps = model.param_slices();
        let gs = grads.slices();
        assert_eq!(ps.len(), gs.len());
        for (p, g) in ps.iter().zip(gs.iter()) {
            assert_eq!(p.len(), g.len());
        }
    }

    #[test]
    fn hyperparameter_validation_catches_bad_values() {
        let mut h = Hyperparams::<f64>::default();
        h.tau = 0.0;
        assert!(h.validate().is_err());
        let mut h = Hyperparams::<f64>::default();
        h.gamma = 1.5;
        assert!(h.validate().is_err());
        let mut h = Hyperparams::<f64>::default();
        h.alpha = -0.1;
        assert!(h.validate().is_err());
    }
}
