//! Face-verification protocol: pixel normalization, cosine scoring and the
//! 10-fold best-threshold accuracy evaluation over labeled pairs.

use std::path::Path;

use crate::arch::ModelGraph;
use crate::error::{Error, Result};
use crate::image::RawImage;
use crate::ops::Mode;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Map 8-bit pixels into roughly [-1, 1]: `(p - 127.5) / 128`.
pub fn normalize_pixel(p: u8) -> f64 {
    (p as f64 - 127.5) / 128.0
}

/// Normalize one image into a `(1, 3, h, w)` tensor, checking the expected
/// spatial size.
pub fn preprocess_with_size<T: Scalar>(img: &RawImage, height: usize, width: usize) -> Result<Tensor<T>> {
    if img.height != height || img.width != width {
        return Err(Error::Image(format!(
            "image is {}x{}, expected {width}x{height}",
            img.width, img.height
        )));
    }
    let mut out = Tensor::zeros(Shape::new(1, 3, height, width)?);
    for c in 0..3 {
        for y in 0..height {
            for x in 0..width {
                *out.at_mut(0, c, y, x) = T::from_f64(normalize_pixel(img.pixel(y, x, c)));
            }
        }
    }
    Ok(out)
}

/// Standard aligned-crop preprocessing: exact 112x112x3 input.
pub fn preprocess<T: Scalar>(img: &RawImage) -> Result<Tensor<T>> {
    preprocess_with_size(img, 112, 112)
}

/// Cosine similarity of two nonzero vectors, in [-1, 1].
pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "cosine_score",
            format!("lengths {} vs {}", a.len(), b.len()),
        ));
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Config("cosine_score: zero vector".into()));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// L2-normalize rows of an `(n, d, 1, 1)` embedding tensor into plain vectors.
pub fn normalized_rows<T: Scalar>(embeddings: &Tensor<T>) -> Result<Vec<Vec<f64>>> {
    let s = embeddings.shape();
    let mut rows = Vec::with_capacity(s.n);
    for n in 0..s.n {
        let row: Vec<f64> = embeddings.batch_item(n).iter().map(|v| v.to_f64()).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Config(format!("embedding {n} has zero norm")));
        }
        rows.push(row.iter().map(|v| v / norm).collect());
    }
    Ok(rows)
}

/// One labeled pair of aligned face crops.
#[derive(Debug, Clone)]
pub struct ImagePair {
    pub a: RawImage,
    pub b: RawImage,
    pub same: bool,
}

/// Labeled pair set for the k-fold protocol.
#[derive(Debug, Clone, Default)]
pub struct PairSet {
    pub pairs: Vec<ImagePair>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Load a text manifest: one pair per line, `path_a, path_b, 0/1`.
    /// Paths are relative to the manifest's directory.
    pub fn from_manifest(manifest: impl AsRef<Path>) -> Result<PairSet> {
        let manifest = manifest.as_ref();
        let base = manifest.parent().unwrap_or_else(|| Path::new("."));
        let text = std::fs::read_to_string(manifest)
            .map_err(|e| Error::Manifest(format!("{}: {e}", manifest.display())))?;
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::Manifest(format!(
                    "line {}: expected 'path_a, path_b, label', got '{line}'",
                    i + 1
                )));
            }
            let same = match fields[2] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Manifest(format!("line {}: label must be 0/1, got '{other}'", i + 1)))
                }
            };
            pairs.push(ImagePair {
                a: RawImage::read_ppm(base.join(fields[0]))?,
                b: RawImage::read_ppm(base.join(fields[1]))?,
                same,
            });
        }
        Ok(PairSet { pairs })
    }

    /// Write images and a manifest under `dir` (used by the data synthesizer).
    pub fn write_manifest(&self, dir: impl AsRef<Path>, manifest_name: &str) -> Result<std::path::PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut lines = String::new();
        for (i, pair) in self.pairs.iter().enumerate() {
            let pa = format!("pair{:04}_a.ppm", i);
            let pb = format!("pair{:04}_b.ppm", i);
            pair.a.write_ppm(dir.join(&pa))?;
            pair.b.write_ppm(dir.join(&pb))?;
            lines.push_str(&format!("{pa}, {pb}, {}\n", pair.same as u8));
        }
        let path = dir.join(manifest_name);
        std::fs::write(&path, lines)?;
        Ok(path)
    }
}

/// Result of the k-fold best-threshold protocol.
#[derive(Debug, Clone)]
pub struct KfoldReport {
    pub mean_accuracy: f64,
    pub fold_accuracies: Vec<f64>,
    pub fold_thresholds: Vec<f64>,
}

fn accuracy_at(scores: &[f64], labels: &[bool], idx: &[usize], threshold: f64) -> f64 {
    let correct = idx
        .iter()
        .filter(|&&i| (scores[i] >= threshold) == labels[i])
        .count();
    correct as f64 / idx.len() as f64
}

/// K-fold accuracy: for each held-out fold pick the threshold that maximizes
/// accuracy on the remaining folds (scanning midpoints of adjacent sorted
/// unique scores plus sentinels), then score the held-out fold.
///
/// Ties between equally good thresholds go to the centermost tied candidate.
/// Candidates and tie-breaking depend only on score ranks, so any strictly
/// monotone transform of the scores leaves every fold's result unchanged.
pub fn kfold_accuracy(scores: &[f64], labels: &[bool], fold_count: usize) -> Result<KfoldReport> {
    if scores.len() != labels.len() {
        return Err(Error::Config(format!(
            "kfold_accuracy: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if fold_count == 0 || scores.len() < fold_count {
        return Err(Error::Config(format!(
            "kfold_accuracy: need at least {fold_count} pairs, got {}",
            scores.len()
        )));
    }
    if scores.len() % fold_count != 0 {
        return Err(Error::Config(format!(
            "kfold_accuracy: pair count {} must divide evenly into {fold_count} folds",
            scores.len()
        )));
    }

    // Candidate thresholds from the whole score set: below-min and above-max
    // sentinels plus midpoints between adjacent distinct values.
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    sorted.dedup();
    let mut candidates = Vec::with_capacity(sorted.len() + 1);
    candidates.push(sorted[0] - 1.0);
    for w in sorted.windows(2) {
        candidates.push((w[0] + w[1]) / 2.0);
    }
    candidates.push(sorted[sorted.len() - 1] + 1.0);

    let fold_size = scores.len() / fold_count;
    let mut fold_accuracies = Vec::with_capacity(fold_count);
    let mut fold_thresholds = Vec::with_capacity(fold_count);
    for fold in 0..fold_count {
        let held: Vec<usize> = (fold * fold_size..(fold + 1) * fold_size).collect();
        let train: Vec<usize> = (0..scores.len()).filter(|i| i / fold_size != fold).collect();
        let mut best_acc = f64::NEG_INFINITY;
        let mut tied: Vec<f64> = Vec::new();
        for &t in &candidates {
            let acc = accuracy_at(scores, labels, &train, t);
            if acc > best_acc {
                best_acc = acc;
                tied.clear();
            }
            if acc == best_acc {
                tied.push(t);
            }
        }
        let threshold = tied[tied.len() / 2];
        fold_thresholds.push(threshold);
        fold_accuracies.push(accuracy_at(scores, labels, &held, threshold));
    }
    let mean_accuracy = fold_accuracies.iter().sum::<f64>() / fold_count as f64;
    Ok(KfoldReport {
        mean_accuracy,
        fold_accuracies,
        fold_thresholds,
    })
}

/// Full evaluation report for a model over a pair set.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub pair_count: usize,
    pub fold_count: usize,
    pub kfold: KfoldReport,
}

/// Embed a slice of images in fixed-size batches (infer mode), L2-normalized.
pub fn embed_images<T: Scalar>(
    model: &mut ModelGraph<T>,
    images: &[&RawImage],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let (c, h, w) = model.input;
    debug_assert_eq!(c, 3);
    let mut rows = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let mut batch = Tensor::<T>::zeros(Shape::new(chunk.len(), 3, h, w)?);
        for (i, img) in chunk.iter().enumerate() {
            let t = preprocess_with_size::<T>(img, h, w)?;
            batch.batch_item_mut(i).copy_from_slice(t.data());
        }
        let emb = model.forward_embed(&batch, Mode::Infer)?;
        rows.extend(normalized_rows(&emb)?);
    }
    Ok(rows)
}

/// Preprocess, embed, score and run the 10-fold protocol.
pub fn evaluate_model<T: Scalar>(
    model: &mut ModelGraph<T>,
    pairset: &PairSet,
    fold_count: usize,
) -> Result<EvalReport> {
    if pairset.is_empty() {
        return Err(Error::Config("evaluate_model: empty pair set".into()));
    }
    let mut images = Vec::with_capacity(pairset.len() * 2);
    for pair in &pairset.pairs {
        images.push(&pair.a);
        images.push(&pair.b);
    }
    let rows = embed_images(model, &images, 32)?;
    let mut scores = Vec::with_capacity(pairset.len());
    let mut labels = Vec::with_capacity(pairset.len());
    for (i, pair) in pairset.pairs.iter().enumerate() {
        scores.push(cosine_score(&rows[2 * i], &rows[2 * i + 1])?);
        labels.push(pair.same);
    }
    let kfold = kfold_accuracy(&scores, &labels, fold_count)?;
    Ok(EvalReport {
        pair_count: pairset.len(),
        fold_count,
        kfold,
    })
}
