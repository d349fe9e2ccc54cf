//! Momentum-contrast pretraining at desk scale.
//!
//! A query encoder is trained with InfoNCE to match each sample's query
//! view to the key view produced by a slowly moving copy of itself (the key
//! encoder), against a FIFO queue of keys from earlier batches.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::data::SplitMix64;
use crate::model::{init_encoder, Layer, ModelParams, ModelSpec};
use crate::optim::SgdState;
use crate::{Error, Result, Scalar};

const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augmentation {
    /// Additive Gaussian noise, then independent coordinate dropout.
    VectorNoiseMask { noise_std: f64, mask_prob: f64 },
    /// Reverses the coordinate order with probability `prob`.
    HorizontalFlip { prob: f64 },
}

impl Default for Augmentation {
    fn default() -> Self {
        Augmentation::VectorNoiseMask {
            noise_std: 0.1,
            mask_prob: 0.2,
        }
    }
}

impl Augmentation {
    pub fn horizontal_flip() -> Self {
        Augmentation::HorizontalFlip { prob: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MocoConfig {
    pub embed_dim: usize,
    pub queue_size: usize,
    pub momentum: f64,
    pub temperature: f64,
    pub batch_size: usize,
    pub augmentation: Augmentation,
}

impl Default for MocoConfig {
    fn default() -> Self {
        Self {
            embed_dim: 128,
            queue_size: 256,
            momentum: 0.999,
            temperature: 0.07,
            batch_size: 32,
            augmentation: Augmentation::default(),
        }
    }
}

impl MocoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.queue_size == 0 || self.batch_size == 0 {
            return Err(Error::Usage(
                "embed_dim, queue_size and batch_size must be positive".into(),
            ));
        }
        if !self.queue_size.is_multiple_of(self.batch_size) {
            return Err(Error::Usage(format!(
                "batch size {} must divide queue size {}",
                self.batch_size, self.queue_size
            )));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::Usage(format!("key momentum must lie in [0, 1], got {}", self.momentum)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Usage(format!("temperature must be > 0, got {}", self.temperature)));
        }
        Ok(())
    }
}

pub fn horizontal_flip<T: Clone>(x: ArrayView1<T>) -> Array1<T> {
    x.slice(s![..;-1]).to_owned()
}

/// One stochastic view of `x`.
pub fn augment_view<T: Scalar>(x: ArrayView1<T>, aug: &Augmentation, rng: &mut SplitMix64) -> Array1<T> {
    match *aug {
        Augmentation::VectorNoiseMask {
            noise_std,
            mask_prob,
        } => x.mapv(|v| {
            let noisy = v + T::lit(noise_std * rng.gaussian());
            if rng.bernoulli(mask_prob) {
                T::zero()
            } else {
                noisy
            }
        }),
        Augmentation::HorizontalFlip { prob } => {
            if rng.bernoulli(prob) {
                horizontal_flip(x)
            } else {
                x.to_owned()
            }
        }
    }
}

pub fn augment_pair_with<T: Scalar>(
    x: ArrayView1<T>,
    aug: &Augmentation,
    rng: &mut SplitMix64,
) -> (Array1<T>, Array1<T>) {
    let q = augment_view(x, aug, rng);
    let k = augment_view(x, aug, rng);
    (q, k)
}

/// Query and key views of `x`, reproducible from `seed`.
pub fn augment_pair<T: Scalar>(x: ArrayView1<T>, aug: &Augmentation, seed: u64) -> (Array1<T>, Array1<T>) {
    augment_pair_with(x, aug, &mut SplitMix64::new(seed))
}

/// `key <- m key + (1 - m) query`, elementwise.
pub fn momentum_update<T: Scalar>(key: &mut ModelParams<T>, query: &ModelParams<T>, m: T) -> Result<()> {
    if !(m >= T::zero() && m <= T::one()) {
        return Err(Error::Usage(format!("key momentum must lie in [0, 1], got {m}")));
    }
    let keep = T::one() - m;
    key.zip_apply(query, |k, q| *k = m * *k + keep * q)
}

/// Row-wise L2 normalization; returns the unit rows and the original norms.
pub fn normalize_rows<T: Scalar>(z: &Array2<T>) -> Result<(Array2<T>, Vec<T>)> {
    let (out, norms) = normalize_rows_or_zero(z)?;
    if let Some(n) = norms.iter().find(|n| n.is_zero()) {
        return Err(Error::Numerical(format!("cannot normalize embedding of norm {n}")));
    }
    Ok((out, norms))
}

/// Like [`normalize_rows`], but an all-zero row stays zero (norm 0).
fn normalize_rows_or_zero<T: Scalar>(z: &Array2<T>) -> Result<(Array2<T>, Vec<T>)> {
    let mut out = z.clone();
    let mut norms = Vec::with_capacity(z.nrows());
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if !norm.is_finite() {
            return Err(Error::Numerical(format!("cannot normalize embedding of norm {norm}")));
        }
        if norm > T::zero() {
            row.mapv_inplace(|v| v / norm);
        }
        norms.push(norm);
    }
    Ok((out, norms))
}

/// Pulls a gradient w.r.t. unit rows back to the unnormalized rows.
pub fn normalize_rows_backward<T: Scalar>(unit: &Array2<T>, norms: &[T], d_unit: &Array2<T>) -> Array2<T> {
    let mut out = d_unit.clone();
    for ((mut g, u), &n) in out.rows_mut().into_iter().zip(unit.rows()).zip(norms) {
        if n.is_zero() {
            g.fill(T::zero());
            continue;
        }
        let radial = g.dot(&u);
        g.zip_mut_with(&u, |gi, &ui| *gi = (*gi - radial * ui) / n);
    }
    out
}

fn check_unit<T: Scalar>(v: ArrayView1<T>, what: &str) -> Result<()> {
    let norm = v.dot(&v).sqrt();
    if (norm - T::one()).abs() > T::lit(UNIT_NORM_TOL) || !norm.is_finite() {
        return Err(Error::Domain(format!("{what} has norm {norm}, expected 1")));
    }
    Ok(())
}

/// Ring buffer of `K` unit-norm keys.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyQueue<T> {
    entries: Array2<T>,
    head: usize,
}

impl<T: Scalar> KeyQueue<T> {
    /// Queue pre-filled with seeded random unit vectors.
    pub fn random(size: usize, dim: usize, seed: u64) -> Result<Self> {
        if size == 0 || dim == 0 {
            return Err(Error::Usage("queue needs positive size and dimension".into()));
        }
        let mut rng = SplitMix64::new(seed);
        let raw = Array2::from_shape_simple_fn((size, dim), || T::lit(rng.gaussian()));
        let (entries, _) = normalize_rows(&raw)?;
        Ok(Self { entries, head: 0 })
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.entries.ncols()
    }

    /// Storage order; the oldest entry sits at `head`.
    pub fn entries(&self) -> &Array2<T> {
        &self.entries
    }

    /// Entries oldest first.
    pub fn ordered(&self) -> Array2<T> {
        let mut out = Array2::zeros(self.entries.dim());
        for i in 0..self.len() {
            out.row_mut(i).assign(&self.entries.row((self.head + i) % self.len()));
        }
        out
    }

    /// Overwrites the oldest `keys.nrows()` entries.
    pub fn enqueue(&mut self, keys: &Array2<T>) -> Result<()> {
        let b = keys.nrows();
        if b == 0 || !self.len().is_multiple_of(b) {
            return Err(Error::Usage(format!(
                "batch of {b} keys does not divide queue size {}",
                self.len()
            )));
        }
        if keys.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "keys have dimension {}, queue holds {}",
                keys.ncols(),
                self.dim()
            )));
        }
        for row in keys.rows() {
            check_unit(row, "enqueued key")?;
        }
        let k = self.len();
        for (i, row) in keys.rows().into_iter().enumerate() {
            self.entries.row_mut((self.head + i) % k).assign(&row);
        }
        self.head = (self.head + b) % k;
        Ok(())
    }
}

/// InfoNCE with the positive key at index 0. Returns the loss and its
/// gradient w.r.t. `q`; keys and queue are treated as constants.
pub fn info_nce<T: Scalar>(
    q: ArrayView1<T>,
    k_pos: ArrayView1<T>,
    queue: &KeyQueue<T>,
    tau: T,
) -> Result<(T, Array1<T>)> {
    if !(tau > T::zero()) {
        return Err(Error::Domain(format!("temperature must be > 0, got {tau}")));
    }
    if q.len() != queue.dim() || k_pos.len() != queue.dim() {
        return Err(Error::Shape(format!(
            "query {} / key {} / queue {} dimensions differ",
            q.len(),
            k_pos.len(),
            queue.dim()
        )));
    }
    check_unit(q, "query")?;
    check_unit(k_pos, "positive key")?;
    for row in queue.entries().rows() {
        check_unit(row, "queue entry")?;
    }

    let l_pos = q.dot(&k_pos) / tau;
    let l_neg = queue.entries().dot(&q) / tau;
    let max = l_neg.iter().fold(l_pos, |m, &v| m.max(v));
    let w_pos = (l_pos - max).exp();
    let w_neg = l_neg.mapv(|v| (v - max).exp());
    let z = w_pos + w_neg.sum();
    let loss = max + z.ln() - l_pos;

    // d loss / d q = (sum_j softmax_j k_j - k_pos) / tau
    let mut grad = queue.entries().t().dot(&(w_neg / z));
    grad.scaled_add(w_pos / z - T::one(), &k_pos);
    Ok((loss, grad.mapv(|v| v / tau)))
}

#[derive(Clone, Debug)]
pub struct MocoState<T> {
    pub query: ModelParams<T>,
    pub key: ModelParams<T>,
    pub queue: KeyQueue<T>,
    pub config: MocoConfig,
}

impl<T: Scalar> MocoState<T> {
    /// Fresh encoders (key = copy of query) and a random queue.
    pub fn new(encoder: &ModelSpec, config: MocoConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if encoder.output_dim() != config.embed_dim {
            return Err(Error::Spec(format!(
                "encoder outputs {} dimensions, embed_dim is {}",
                encoder.output_dim(),
                config.embed_dim
            )));
        }
        let query = init_encoder(encoder, SplitMix64::derive_seed(seed, 0));
        let queue = KeyQueue::random(
            config.queue_size,
            config.embed_dim,
            SplitMix64::derive_seed(seed, 1),
        )?;
        Ok(Self {
            key: query.clone(),
            query,
            queue,
            config,
        })
    }

    /// Unit embeddings of a batch under the given encoder.
    pub fn embed(params: &ModelParams<T>, batch: &Array2<T>) -> Result<Array2<T>> {
        let (z, _) = params.forward_outputs(batch)?;
        normalize_rows(&z).map(|(u, _)| u)
    }

    /// One pretraining step: augment, encode, InfoNCE, query update,
    /// momentum update of the key encoder, enqueue. Returns the mean loss.
    pub fn train_step(
        &mut self,
        batch: &Array2<T>,
        optimizer: &mut SgdState<T>,
        rng: &mut SplitMix64,
    ) -> Result<T> {
        let n = batch.nrows();
        if n != self.config.batch_size {
            return Err(Error::Usage(format!(
                "pretraining batch has {n} rows, configured batch size is {}",
                self.config.batch_size
            )));
        }
        let mut x_q = Array2::zeros(batch.dim());
        let mut x_k = Array2::zeros(batch.dim());
        for (i, row) in batch.axis_iter(Axis(0)).enumerate() {
            let (vq, vk) = augment_pair_with(row, &self.config.augmentation, rng);
            x_q.row_mut(i).assign(&vq);
            x_k.row_mut(i).assign(&vk);
        }

        // An embedding that is exactly zero (every ReLU inactive while the
        // output bias is still zero) has no direction. Its row is left out of
        // the loss, and its queue slot keeps the previous key.
        let (z_q, trace) = self.query.forward_outputs(&x_q)?;
        let (q, norms) = normalize_rows_or_zero(&z_q)?;
        let (z_k, _) = self.key.forward_outputs(&x_k)?;
        let (mut k, key_norms) = normalize_rows_or_zero(&z_k)?;
        let valid: Vec<bool> = norms
            .iter()
            .zip(&key_norms)
            .map(|(a, b)| !a.is_zero() && !b.is_zero())
            .collect();
        let n_valid = valid.iter().filter(|&&v| v).count();
        if n_valid == 0 {
            return Err(Error::Numerical("every embedding in the batch is zero".into()));
        }

        let tau = T::lit(self.config.temperature);
        let scale = T::one() / T::from_usize(n_valid).unwrap();
        let mut total = T::zero();
        let mut d_q = Array2::zeros(q.dim());
        for i in (0..n).filter(|&i| valid[i]) {
            let (loss, g) = info_nce(q.row(i), k.row(i), &self.queue, tau)?;
            total = total + loss;
            d_q.row_mut(i).assign(&g.mapv(|v| v * scale));
        }
        let d_z = normalize_rows_backward(&q, &norms, &d_q);
        let grads = self.query.backward_outputs(&trace, &d_z)?;
        optimizer.step(&mut self.query, &grads)?;
        momentum_update(&mut self.key, &self.query, T::lit(self.config.momentum))?;
        let head = self.queue.head;
        for (i, norm) in key_norms.iter().enumerate() {
            if norm.is_zero() {
                k.row_mut(i).assign(&self.queue.entries.row((head + i) % self.queue.len()));
            }
        }
        self.queue.enqueue(&k)?;
        Ok(total * scale)
    }
}

/// Replaces the final layer with a fresh single-output layer; every earlier
/// layer is copied unchanged.
pub fn replace_head<T: Scalar>(pretrained: &ModelParams<T>, seed: u64) -> Result<ModelParams<T>> {
    let last = pretrained
        .layers
        .last()
        .ok_or_else(|| Error::Spec("pretrained model has no layers".into()))?;
    let mut rng = SplitMix64::new(seed);
    let mut layers = pretrained.layers[..pretrained.layers.len() - 1].to_vec();
    layers.push(Layer::glorot(last.in_dim(), 1, &mut rng));
    Ok(ModelParams {
        activation: pretrained.activation,
        layers,
    })
}
