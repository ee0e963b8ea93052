//! Metric-learning training at desk scale: additive angular-margin softmax
//! (ArcFace) head, SGD with classical momentum, the stepped learning-rate
//! schedule, and a fit loop over labeled identity datasets.

use std::path::{Path, PathBuf};

use crate::arch::ModelGraph;
use crate::error::{Error, Result};
use crate::image::RawImage;
use crate::ops::Mode;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::serialize;
use crate::tensor::{Shape, Tensor};
use crate::verify::preprocess_with_size;

// ---------------------------------------------------------------------------
// ArcFace head

/// Classification head that adds an angular margin `m` to the target-class
/// angle on the normalized-embedding hypersphere, scaled by `s`.
pub struct ArcFaceHead<T> {
    /// Class weight rows, `(num_identities, dim, 1, 1)`; rows are
    /// L2-normalized on use.
    pub weights: Tensor<T>,
    pub scale: f64,
    pub margin: f64,
    grad_weights: Tensor<T>,
}

pub const DEFAULT_ARCFACE_SCALE: f64 = 64.0;
pub const DEFAULT_ARCFACE_MARGIN: f64 = 0.5;

impl<T: Scalar> ArcFaceHead<T> {
    pub fn new(num_identities: usize, dim: usize, rng: &mut Rng) -> ArcFaceHead<T> {
        let shape = Shape {
            n: num_identities,
            c: dim,
            h: 1,
            w: 1,
        };
        ArcFaceHead {
            weights: Tensor::randn(shape, 0.01, rng),
            scale: DEFAULT_ARCFACE_SCALE,
            margin: DEFAULT_ARCFACE_MARGIN,
            grad_weights: Tensor::zeros(shape),
        }
    }

    pub fn num_identities(&self) -> usize {
        self.weights.shape().n
    }

    pub fn dim(&self) -> usize {
        self.weights.shape().c
    }

    /// Plain cosine similarities between embeddings and class weights
    /// (no margin, no scale); the prediction geometry.
    pub fn cosines(&self, embeddings: &Tensor<T>) -> Result<Vec<Vec<f64>>> {
        let es = embeddings.shape();
        if es.c != self.dim() {
            return Err(Error::shape(
                "arcface",
                format!("embedding dim {} != head dim {}", es.c, self.dim()),
            ));
        }
        let k = self.num_identities();
        let dim = self.dim();
        let mut w_norm = Vec::with_capacity(k);
        for j in 0..k {
            let row = &self.weights.data()[j * dim..(j + 1) * dim];
            let n = row.iter().map(|v| v.to_f64() * v.to_f64()).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(Error::Training(format!("class weight {j} has zero norm")));
            }
            w_norm.push(n);
        }
        let mut out = Vec::with_capacity(es.n);
        for i in 0..es.n {
            let x = embeddings.batch_item(i);
            let nx = x.iter().map(|v| v.to_f64() * v.to_f64()).sum::<f64>().sqrt();
            if nx == 0.0 {
                return Err(Error::Training(format!("embedding {i} has zero norm")));
            }
            let mut row = Vec::with_capacity(k);
            for j in 0..k {
                let w = &self.weights.data()[j * dim..(j + 1) * dim];
                let dot: f64 = x
                    .iter()
                    .zip(w.iter())
                    .map(|(a, b)| a.to_f64() * b.to_f64())
                    .sum();
                row.push((dot / (nx * w_norm[j])).clamp(-1.0, 1.0));
            }
            out.push(row);
        }
        Ok(out)
    }

    /// Nearest class weight by cosine.
    pub fn predict(&self, embeddings: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(self
            .cosines(embeddings)?
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite cosine"))
                    .map(|(i, _)| i)
                    .expect("non-empty row")
            })
            .collect())
    }

    pub fn zero_grads(&mut self) {
        self.grad_weights.fill(T::ZERO);
    }

    pub fn visit_trainable(&mut self, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        f(
            "arcface.weights",
            self.weights.data_mut(),
            self.grad_weights.data_mut(),
        );
    }
}

/// ArcFace loss and gradients. Returns the mean cross-entropy over the batch
/// and the gradient w.r.t. the raw embeddings; class-weight gradients
/// accumulate inside the head.
///
/// Target logit: `s * cos(theta + m)` where the angle is measured between the
/// normalized embedding and normalized class weight; when `theta + m` would
/// pass pi the monotone fallback `s * (cos(theta) - m sin(m))` applies.
pub fn arcface_loss<T: Scalar>(
    head: &mut ArcFaceHead<T>,
    embeddings: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, Tensor<T>)> {
    let es = embeddings.shape();
    if labels.len() != es.n {
        return Err(Error::Training(format!(
            "{} labels for a batch of {}",
            labels.len(),
            es.n
        )));
    }
    let k = head.num_identities();
    for &l in labels {
        if l >= k {
            return Err(Error::Training(format!("label {l} out of range for {k} identities")));
        }
    }
    let dim = head.dim();
    if es.c != dim {
        return Err(Error::shape(
            "arcface_loss",
            format!("embedding dim {} != head dim {dim}", es.c),
        ));
    }

    let s = head.scale;
    let m = head.margin;
    let cos_m = m.cos();
    let sin_m = m.sin();
    let threshold = (std::f64::consts::PI - m).cos();

    // Normalized copies (f64 for the transcendental parts).
    let mut w_unit = vec![0.0f64; k * dim];
    let mut w_norm = vec![0.0f64; k];
    for j in 0..k {
        let row = &head.weights.data()[j * dim..(j + 1) * dim];
        let n = row.iter().map(|v| v.to_f64() * v.to_f64()).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(Error::Training(format!("class weight {j} has zero norm")));
        }
        w_norm[j] = n;
        for (d, v) in w_unit[j * dim..(j + 1) * dim].iter_mut().zip(row.iter()) {
            *d = v.to_f64() / n;
        }
    }

    let mut loss = 0.0;
    let mut d_emb = Tensor::<T>::zeros(es);
    let inv_n = 1.0 / es.n as f64;
    let mut logits = vec![0.0f64; k];
    let mut cosines = vec![0.0f64; k];

    for i in 0..es.n {
        let x: Vec<f64> = embeddings.batch_item(i).iter().map(|v| v.to_f64()).collect();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nx < 1e-12 {
            return Err(Error::Training(format!("embedding {i} has zero norm")));
        }
        let e: Vec<f64> = x.iter().map(|v| v / nx).collect();
        let y = labels[i];

        for j in 0..k {
            let dot: f64 = e
                .iter()
                .zip(&w_unit[j * dim..(j + 1) * dim])
                .map(|(a, b)| a * b)
                .sum();
            cosines[j] = dot.clamp(-1.0, 1.0);
            logits[j] = s * cosines[j];
        }
        let c_y = cosines[y];
        let main_branch = c_y > threshold;
        let (phi, dphi_dc) = if main_branch {
            let sin_theta = (1.0 - c_y * c_y).max(1e-12).sqrt();
            (
                c_y * cos_m - sin_theta * sin_m,
                cos_m + sin_m * c_y / sin_theta,
            )
        } else {
            (c_y - m * sin_m, 1.0)
        };
        logits[y] = s * phi;

        // Stable log-softmax.
        let max_logit = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|l| (l - max_logit).exp()).sum();
        loss += inv_n * (sum_exp.ln() + max_logit - logits[y]);

        // d loss / d logit_j = (softmax_j - [j == y]) / n
        // then through the margin, the normalization, and both norms.
        let mut sum_dc_c = 0.0; // sum_j dcos_j * cos_j
        let mut dc = vec![0.0f64; k];
        for j in 0..k {
            let p = ((logits[j] - max_logit).exp() / sum_exp - if j == y { 1.0 } else { 0.0 }) * inv_n;
            let dlogit_dcos = if j == y { s * dphi_dc } else { s };
            dc[j] = p * dlogit_dcos;
            sum_dc_c += dc[j] * cosines[j];
        }
        let dx = d_emb.batch_item_mut(i);
        for d in 0..dim {
            let mut acc = 0.0;
            for j in 0..k {
                acc += dc[j] * w_unit[j * dim + d];
            }
            dx[d] = T::from_f64((acc - sum_dc_c * e[d]) / nx);
        }
        for j in 0..k {
            let gw = &mut head.grad_weights.data_mut()[j * dim..(j + 1) * dim];
            let w = &w_unit[j * dim..(j + 1) * dim];
            let scale = dc[j] / w_norm[j];
            for d in 0..dim {
                gw[d] += T::from_f64(scale * (e[d] - cosines[j] * w[d]));
            }
        }
    }
    Ok((loss, d_emb))
}

// ---------------------------------------------------------------------------
// Schedule and optimizer

/// Training hyper-parameters: 16 epochs, momentum 0.9, learning rate 0.1
/// decayed by 10x at epochs 9, 13 and 15.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub momentum: f64,
    pub initial_lr: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            batch_size: 64,
            epochs: 16,
            momentum: 0.9,
            initial_lr: 0.1,
            lr_decay_epochs: vec![9, 13, 15],
            decay_factor: 0.1,
            weight_decay: 0.0,
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !self.lr_decay_epochs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("lr_decay_epochs must be strictly increasing".into()));
        }
        if self.lr_decay_epochs.iter().any(|&e| e >= self.epochs) {
            return Err(Error::Config("lr_decay_epochs must lie below epochs".into()));
        }
        Ok(())
    }
}

/// Piecewise-constant schedule: the initial rate times `decay_factor` for
/// every decay epoch at or below `epoch`.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::Config(format!(
            "epoch {epoch} out of range for a {}-epoch schedule",
            cfg.epochs
        )));
    }
    let decays = cfg.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
    Ok(cfg.initial_lr * cfg.decay_factor.powi(decays as i32))
}

/// Classical momentum update: `v <- momentum * v + g`, `p <- p - lr * v`.
/// Rejects non-finite gradients.
pub fn sgd_momentum_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    velocity: &mut [T],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Config("sgd step: mismatched buffer lengths".into()));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient("sgd step".into()));
    }
    let mom = T::from_f64(momentum);
    let rate = T::from_f64(lr);
    for ((p, g), v) in params.iter_mut().zip(grads.iter()).zip(velocity.iter_mut()) {
        *v = mom * *v + *g;
        *p -= rate * *v;
    }
    Ok(())
}

/// Momentum SGD over everything a model and head expose as trainable.
/// Velocity buffers are keyed by visit order, which is stable.
pub struct SgdMomentum<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocities: Vec<Vec<T>>,
}

impl<T: Scalar> SgdMomentum<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> SgdMomentum<T> {
        SgdMomentum {
            momentum,
            weight_decay,
            velocities: Vec::new(),
        }
    }

    pub fn step(
        &mut self,
        lr: f64,
        visit: impl FnOnce(&mut dyn FnMut(&str, &mut [T], &mut [T])),
    ) -> Result<()> {
        let mut idx = 0usize;
        let mut failure: Option<Error> = None;
        let velocities = &mut self.velocities;
        let momentum = self.momentum;
        let weight_decay = self.weight_decay;
        visit(&mut |name, params, grads| {
            if failure.is_some() {
                return;
            }
            if idx == velocities.len() {
                velocities.push(vec![T::ZERO; params.len()]);
            }
            let velocity = &mut velocities[idx];
            idx += 1;
            if velocity.len() != params.len() {
                failure = Some(Error::Config(format!(
                    "optimizer state for '{name}' has stale length"
                )));
                return;
            }
            if grads.iter().any(|g| !g.is_finite()) {
                failure = Some(Error::NonFiniteGradient(name.to_string()));
                return;
            }
            if weight_decay > 0.0 {
                let wd = T::from_f64(weight_decay);
                for (g, p) in grads.iter_mut().zip(params.iter()) {
                    *g += wd * *p;
                }
            }
            sgd_momentum_step(params, grads, velocity, lr, momentum).ok();
        });
        failure.map_or(Ok(()), Err)
    }
}

// ---------------------------------------------------------------------------
// Datasets

/// Identity-labeled images.
#[derive(Debug, Clone, Default)]
pub struct LabeledDataset {
    pub images: Vec<RawImage>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Load `path, label` manifest lines; image paths are relative to the
    /// manifest's directory.
    pub fn from_manifest(manifest: impl AsRef<Path>) -> Result<LabeledDataset> {
        let manifest = manifest.as_ref();
        let base = manifest.parent().unwrap_or_else(|| Path::new("."));
        let text = std::fs::read_to_string(manifest)
            .map_err(|e| Error::Manifest(format!("{}: {e}", manifest.display())))?;
        let mut ds = LabeledDataset::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (path, label) = line
                .rsplit_once(',')
                .ok_or_else(|| Error::Manifest(format!("line {}: expected 'path, label'", i + 1)))?;
            let label: usize = label
                .trim()
                .parse()
                .map_err(|_| Error::Manifest(format!("line {}: bad label '{label}'", i + 1)))?;
            ds.images.push(RawImage::read_ppm(base.join(path.trim()))?);
            ds.labels.push(label);
            ds.num_classes = ds.num_classes.max(label + 1);
        }
        Ok(ds)
    }

    pub fn write_manifest(&self, dir: impl AsRef<Path>, manifest_name: &str) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut lines = String::new();
        for (i, (img, label)) in self.images.iter().zip(&self.labels).enumerate() {
            let name = format!("img{:05}_id{:03}.ppm", i, label);
            img.write_ppm(dir.join(&name))?;
            lines.push_str(&format!("{name}, {label}\n"));
        }
        let path = dir.join(manifest_name);
        std::fs::write(&path, lines)?;
        Ok(path)
    }
}

/// Synthetic identity dataset: one fixed random base pattern per identity,
/// samples are the base plus pixel noise.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub identities: usize,
    pub samples_per_identity: usize,
    pub size: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> SyntheticSpec {
        SyntheticSpec {
            identities: 20,
            samples_per_identity: 10,
            size: 28,
            noise_std: 8.0,
            seed: 0,
        }
    }
}

pub fn synthesize_identity_dataset(spec: &SyntheticSpec) -> LabeledDataset {
    // Offset keeps the dataset stream independent of the fit loop's shuffle
    // stream when both use the same user-facing seed.
    let mut rng = Rng::new(spec.seed ^ 0x5EE5_DA7A);
    let mut ds = LabeledDataset {
        num_classes: spec.identities,
        ..Default::default()
    };
    for identity in 0..spec.identities {
        let mut base = RawImage::new(spec.size, spec.size);
        for b in base.data.iter_mut() {
            *b = (rng.next_u64() & 0xFF) as u8;
        }
        for _ in 0..spec.samples_per_identity {
            let mut img = base.clone();
            for b in img.data.iter_mut() {
                let v = *b as f64 + rng.next_normal() * spec.noise_std;
                *b = v.round().clamp(0.0, 255.0) as u8;
            }
            ds.images.push(img);
            ds.labels.push(identity);
        }
    }
    ds
}

/// Build a balanced pair set from a labeled dataset: `pair_count/2` same-
/// identity pairs and as many different-identity pairs.
pub fn synthesize_pairset(dataset: &LabeledDataset, pair_count: usize, seed: u64) -> Result<crate::verify::PairSet> {
    use crate::verify::{ImagePair, PairSet};
    if dataset.num_classes < 2 {
        return Err(Error::Config("pair synthesis needs at least two identities".into()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, &l) in dataset.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    if by_class.iter().any(|c| c.len() < 2) {
        return Err(Error::Config("every identity needs at least two samples".into()));
    }
    let mut rng = Rng::new(seed);
    let mut pairs = Vec::with_capacity(pair_count);
    for i in 0..pair_count {
        if i % 2 == 0 {
            let class = rng.next_below(dataset.num_classes);
            let members = &by_class[class];
            let a = members[rng.next_below(members.len())];
            let mut b = members[rng.next_below(members.len())];
            while b == a {
                b = members[rng.next_below(members.len())];
            }
            pairs.push(ImagePair {
                a: dataset.images[a].clone(),
                b: dataset.images[b].clone(),
                same: true,
            });
        } else {
            let ca = rng.next_below(dataset.num_classes);
            let mut cb = rng.next_below(dataset.num_classes);
            while cb == ca {
                cb = rng.next_below(dataset.num_classes);
            }
            let a = by_class[ca][rng.next_below(by_class[ca].len())];
            let b = by_class[cb][rng.next_below(by_class[cb].len())];
            pairs.push(ImagePair {
                a: dataset.images[a].clone(),
                b: dataset.images[b].clone(),
                same: false,
            });
        }
    }
    Ok(PairSet { pairs })
}

// ---------------------------------------------------------------------------
// Fit loop

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

fn assemble_batch<T: Scalar>(
    dataset: &LabeledDataset,
    indices: &[usize],
    input: (usize, usize, usize),
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (_, h, w) = input;
    let mut batch = Tensor::<T>::zeros(Shape::new(indices.len(), 3, h, w)?);
    let mut labels = Vec::with_capacity(indices.len());
    for (slot, &i) in indices.iter().enumerate() {
        let t = preprocess_with_size::<T>(&dataset.images[i], h, w)?;
        batch.batch_item_mut(slot).copy_from_slice(t.data());
        labels.push(dataset.labels[i]);
    }
    Ok((batch, labels))
}

fn train_accuracy<T: Scalar>(
    model: &mut ModelGraph<T>,
    head: &ArcFaceHead<T>,
    dataset: &LabeledDataset,
    batch_size: usize,
) -> Result<f64> {
    let mut correct = 0usize;
    let all: Vec<usize> = (0..dataset.len()).collect();
    for chunk in all.chunks(batch_size) {
        let (batch, labels) = assemble_batch::<T>(dataset, chunk, model.input)?;
        let emb = model.forward_embed(&batch, Mode::Infer)?;
        let preds = head.predict(&emb)?;
        correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Run the full schedule. Returns per-epoch learning rate, mean loss and
/// training accuracy; writes one checkpoint container (plus a `.meta`
/// sidecar) per epoch when a checkpoint directory is configured.
pub fn fit<T: Scalar>(
    model: &mut ModelGraph<T>,
    head: &mut ArcFaceHead<T>,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Training("empty dataset".into()));
    }
    if let Some(&bad) = dataset.labels.iter().find(|&&l| l >= head.num_identities()) {
        return Err(Error::Training(format!(
            "label {bad} out of range for {} identities",
            head.num_identities()
        )));
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut rng = Rng::new(cfg.seed);
    let mut optimizer = SgdMomentum::<T>::new(cfg.momentum, cfg.weight_decay);
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(epoch, cfg)?;
        rng.shuffle(&mut indices);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            let (batch, labels) = assemble_batch::<T>(dataset, chunk, model.input)?;
            model.zero_grads();
            head.zero_grads();
            let emb = model.forward_embed(&batch, Mode::Train)?;
            let (loss, d_emb) = arcface_loss(head, &emb, &labels)?;
            model.backward(&d_emb)?;
            optimizer.step(lr, |f| {
                model.visit_trainable(f);
                head.visit_trainable(f);
            })?;
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let loss = loss_sum / seen as f64;
        let accuracy = train_accuracy(model, head, dataset, cfg.batch_size)?;
        if let Some(dir) = &cfg.checkpoint_dir {
            let ckpt = dir.join(format!("epoch_{epoch:02}.ssfn"));
            serialize::model_to_weights(model).write_to(&ckpt)?;
            std::fs::write(
                dir.join(format!("epoch_{epoch:02}.meta")),
                format!("epoch {epoch}\nlr {lr}\nloss {loss}\naccuracy {accuracy}\n"),
            )?;
        }
        log.epochs.push(EpochLog {
            epoch,
            lr,
            loss,
            train_accuracy: accuracy,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::shape;

    fn toy_head(k: usize, dim: usize, seed: u64) -> ArcFaceHead<f64> {
        let mut rng = Rng::new(seed);
        ArcFaceHead::new(k, dim, &mut rng)
    }

    #[test]
    fn margin_free_unit_scale_reduces_to_softmax() {
        let mut rng = Rng::new(41);
        let mut head = toy_head(5, 8, 42);
        head.margin = 0.0;
        head.scale = 1.0;
        let emb = Tensor::<f64>::randn(shape(4, 8, 1, 1), 1.0, &mut rng);
        let labels = vec![0, 2, 4, 1];
        let (loss, _) = arcface_loss(&mut head, &emb, &labels).unwrap();

        // Direct softmax oracle on plain cosines.
        let cosines = head.cosines(&emb).unwrap();
        let mut expected = 0.0;
        for (row, &y) in cosines.iter().zip(&labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|c| (c - max).exp()).sum();
            expected += (z.ln() + max - row[y]) / labels.len() as f64;
        }
        assert!((loss - expected).abs() < 1e-6, "{loss} vs {expected}");
    }

    #[test]
    fn aligned_embedding_logit_is_cos_margin() {
        // Embedding parallel to its class weight: theta = 0, so the target
        // logit is s*cos(m) while the others stay s*cos(theta_j). Check the
        // whole cross-entropy against that closed form.
        let mut head = toy_head(3, 4, 1);
        let s = 2.0;
        let m = 0.5;
        head.scale = s;
        head.margin = m;
        let w0: Vec<f64> = head.weights.data()[0..4].to_vec();
        let emb = Tensor::from_vec(shape(1, 4, 1, 1), w0.iter().map(|v| v * 3.0).collect()).unwrap();
        let cosines = head.cosines(&emb).unwrap();
        assert!((cosines[0][0] - 1.0).abs() < 1e-9);

        let (loss, _) = arcface_loss(&mut head, &emb, &[0]).unwrap();
        let target_logit = s * m.cos(); // 2 * 0.87758...
        let z = (s * cosines[0][1]).exp() + (s * cosines[0][2]).exp() + target_logit.exp();
        let expected = z.ln() - target_logit;
        // theta is zero only up to rounding, so allow a little slack.
        assert!((loss - expected).abs() < 1e-6, "{loss} vs {expected}");
    }

    #[test]
    fn margin_never_helps_the_target() {
        // s*cos(theta+m) <= s*cos(theta) over theta in [0, pi - m].
        let m = 0.5f64;
        for i in 0..1000 {
            let theta = (std::f64::consts::PI - m) * i as f64 / 999.0;
            assert!((theta + m).cos() <= theta.cos() + 1e-12, "theta {theta}");
        }
    }

    #[test]
    fn prediction_is_scale_invariant() {
        let mut rng = Rng::new(43);
        let head = toy_head(6, 8, 44);
        let emb = Tensor::<f64>::randn(shape(3, 8, 1, 1), 1.0, &mut rng);
        let base = head.predict(&emb).unwrap();
        let scaled = Tensor::from_vec(
            emb.shape(),
            emb.data().iter().map(|v| v * 17.0).collect(),
        )
        .unwrap();
        assert_eq!(head.predict(&scaled).unwrap(), base);
    }

    #[test]
    fn loss_is_nonnegative() {
        let mut rng = Rng::new(45);
        let mut head = toy_head(4, 6, 46);
        for _ in 0..10 {
            let emb = Tensor::<f64>::randn(shape(5, 6, 1, 1), 1.0, &mut rng);
            let labels: Vec<usize> = (0..5).map(|_| rng.next_below(4)).collect();
            let (loss, _) = arcface_loss(&mut head, &emb, &labels).unwrap();
            assert!(loss >= 0.0);
        }
    }

    #[test]
    fn label_out_of_range_is_an_error() {
        let mut head = toy_head(3, 4, 2);
        let emb = Tensor::<f64>::full(shape(1, 4, 1, 1), 0.5);
        assert!(arcface_loss(&mut head, &emb, &[3]).is_err());
    }

    #[test]
    fn zero_embedding_is_an_error() {
        let mut head = toy_head(3, 4, 2);
        let emb = Tensor::<f64>::zeros(shape(1, 4, 1, 1));
        assert!(arcface_loss(&mut head, &emb, &[0]).is_err());
    }

    #[test]
    fn schedule_matches_published_rates() {
        let cfg = TrainConfig::default();
        let expect = [
            (0, 0.1),
            (8, 0.1),
            (9, 0.01),
            (12, 0.01),
            (13, 0.001),
            (14, 0.001),
            (15, 0.0001),
        ];
        for (epoch, lr) in expect {
            assert!((lr_at_epoch(epoch, &cfg).unwrap() - lr).abs() < 1e-12, "epoch {epoch}");
        }
        assert!(lr_at_epoch(16, &cfg).is_err());
    }

    #[test]
    fn schedule_validation() {
        let mut cfg = TrainConfig::default();
        cfg.lr_decay_epochs = vec![9, 9];
        assert!(cfg.validate().is_err());
        cfg.lr_decay_epochs = vec![9, 20];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sgd_basic_updates() {
        // momentum 0, lr 1: p decreases by g.
        let mut p = vec![1.0f64];
        let mut v = vec![0.0f64];
        sgd_momentum_step(&mut p, &[1.0], &mut v, 1.0, 0.0).unwrap();
        assert!((p[0] - 0.0).abs() < 1e-12);

        // zero grads: params unchanged, velocity decays.
        let mut p = vec![2.0f64];
        let mut v = vec![1.0f64];
        sgd_momentum_step(&mut p, &[0.0], &mut v, 0.5, 0.9).unwrap();
        assert!((v[0] - 0.9).abs() < 1e-12);
        assert!((p[0] - (2.0 - 0.5 * 0.9)).abs() < 1e-12);
    }

    #[test]
    fn sgd_two_steps_unroll() {
        // Constant gradient, momentum 0.9: total update lr*(1 + 1.9)*g.
        let lr = 0.1;
        let g = 2.0;
        let mut p = vec![0.0f64];
        let mut v = vec![0.0f64];
        sgd_momentum_step(&mut p, &[g], &mut v, lr, 0.9).unwrap();
        sgd_momentum_step(&mut p, &[g], &mut v, lr, 0.9).unwrap();
        assert!((p[0] + lr * (1.0 + 1.9) * g).abs() < 1e-12, "{}", p[0]);
    }

    #[test]
    fn sgd_rejects_nan_gradient() {
        let mut p = vec![0.0f64];
        let mut v = vec![0.0f64];
        assert!(sgd_momentum_step(&mut p, &[f64::NAN], &mut v, 0.1, 0.9).is_err());
    }

    #[test]
    fn synthetic_dataset_shape() {
        let ds = synthesize_identity_dataset(&SyntheticSpec::default());
        assert_eq!(ds.len(), 200);
        assert_eq!(ds.num_classes, 20);
        assert!(ds.images.iter().all(|i| i.height == 28 && i.width == 28));
    }

    #[test]
    fn synthetic_dataset_is_seed_deterministic() {
        let a = synthesize_identity_dataset(&SyntheticSpec::default());
        let b = synthesize_identity_dataset(&SyntheticSpec::default());
        assert_eq!(a.images[0].data, b.images[0].data);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn pairset_is_balanced_and_sized() {
        let ds = synthesize_identity_dataset(&SyntheticSpec::default());
        let ps = synthesize_pairset(&ds, 60, 3).unwrap();
        assert_eq!(ps.len(), 60);
        let same = ps.pairs.iter().filter(|p| p.same).count();
        assert_eq!(same, 30);
    }

    #[test]
    fn fit_rejects_empty_dataset() {
        let mut model = crate::arch::build_model::<f32>(&crate::arch::spec_seesaw_toy(), 1).unwrap();
        let mut rng = Rng::new(1);
        let mut head = ArcFaceHead::<f32>::new(4, 128, &mut rng);
        let ds = LabeledDataset::default();
        assert!(fit(&mut model, &mut head, &ds, &TrainConfig::default()).is_err());
    }
}
