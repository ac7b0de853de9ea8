//! End-to-end orchestration: train one structure per class, build cost
//! volumes from trained dictionaries, produce smoothed label images, and
//! score them.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::dictlearn::{train_class, TrainConfig};
use crate::error::Error;
use crate::imageio::GrayImage;
use crate::patches::{
    extract_patches, gaussian_mask, mirror_pad, overexpose, preprocess, preprocess_patch,
};
use crate::rng::{rng_from, sub_seed};
use crate::scalar::{count, real, Real};
use crate::smoothing::{
    alpha_erosion, alpha_expansion_traced, edge_erosion, CostVolume, LabelImage,
};
use crate::sparse::{decompose, norm_error, MultilevelDictionary};
use crate::Result;

/// A trained classifier: one multilevel dictionary per class plus the patch
/// geometry and preprocessing parameters shared by training and test.
#[derive(Debug, Clone)]
pub struct ClassifierModel<T> {
    dictionaries: Vec<MultilevelDictionary<T>>,
    side: usize,
    sparsity: usize,
    sigma: f64,
}

impl<T: Real> ClassifierModel<T> {
    pub fn new(
        dictionaries: Vec<MultilevelDictionary<T>>,
        side: usize,
        sparsity: usize,
        sigma: f64,
    ) -> Result<Self> {
        if dictionaries.is_empty() {
            return Err(Error::Contract("model needs at least one class".into()));
        }
        if sparsity == 0 || side == 0 || sigma <= 0.0 {
            return Err(Error::Contract("bad model parameters".into()));
        }
        for (i, d) in dictionaries.iter().enumerate() {
            if d.dim() != side * side {
                return Err(Error::Contract("dictionary does not match patch side".into()));
            }
            if d.class_id() != i {
                return Err(Error::Contract("class ids must be 0..C-1 in order".into()));
            }
        }
        Ok(Self {
            dictionaries,
            side,
            sparsity,
            sigma,
        })
    }

    pub fn nclasses(&self) -> usize {
        self.dictionaries.len()
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn sparsity(&self) -> usize {
        self.sparsity
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn set_sigma(&mut self, sigma: f64) {
        self.sigma = sigma;
    }

    pub fn dictionary(&self, class: usize) -> &MultilevelDictionary<T> {
        &self.dictionaries[class]
    }

    pub fn dictionaries(&self) -> &[MultilevelDictionary<T>] {
        &self.dictionaries
    }
}

/// Smoothing parameters of the label pipeline.
#[derive(Debug, Clone, Copy)]
pub struct SmoothParams<T> {
    /// Potts weight of the expansion step.
    pub u: T,
    /// Energy weight of the erosion acceptance test.
    pub lam: T,
    /// Segments below this size are always eroded.
    pub small: usize,
    /// Segments above this size are never eroded.
    pub big: usize,
    /// Edge-erosion depth in pixels.
    pub depth: usize,
}

impl<T: Real> Default for SmoothParams<T> {
    fn default() -> Self {
        Self {
            u: real(0.16),
            lam: real(2.0),
            small: 2000,
            big: 10_000,
            depth: 2,
        }
    }
}

/// Patch anchor: a `side`-patch centered on pixel `p` covers rows
/// `[r - top, r + side - 1 - top]`, so the test image is mirror-padded by
/// `(top, top, side-1-top, side-1-top)` and the window of pixel `(r, c)`
/// starts at `(r, c)` in padded coordinates.
pub fn anchor_pad(side: usize) -> (usize, usize) {
    let top = (side - 1) / 2;
    (top, side - 1 - top)
}

/// Normalized reconstruction error of every pixel's preprocessed patch over
/// every class structure.
pub fn cost_volume<T: Real>(img: &GrayImage, model: &ClassifierModel<T>) -> Result<CostVolume<T>> {
    let side = model.side();
    let (front, back) = anchor_pad(side);
    let padded = mirror_pad(img, front, front, back, back)?;
    let mask = gaussian_mask::<T>(side, model.sigma());
    let (h, w) = (img.height(), img.width());
    let nclasses = model.nclasses();
    let sparsity = model.sparsity();

    let rows: Vec<Vec<T>> = (0..h)
        .into_par_iter()
        .map(|r| {
            let mut out = Vec::with_capacity(w * nclasses);
            let mut patch = vec![T::zero(); side * side];
            for c in 0..w {
                for pc in 0..side {
                    for pr in 0..side {
                        patch[pc * side + pr] = real(padded.get(r + pr, c + pc) as f64);
                    }
                }
                let y = preprocess_patch(&patch, &mask);
                for class in 0..nclasses {
                    let path = decompose(&y, model.dictionary(class), sparsity);
                    out.push(norm_error(&y, &path));
                }
            }
            out
        })
        .collect();

    let mut costs = Vec::with_capacity(h * w * nclasses);
    for row in rows {
        costs.extend(row);
    }
    CostVolume::new(h, w, nclasses, costs)
}

/// Scoring and bookkeeping of one classification run.
#[derive(Debug, Clone)]
pub struct Report<T> {
    pub trials: usize,
    /// One error rate per trial; empty when no ground truth was supplied.
    pub per_trial_error: Vec<T>,
    pub mean_error: Option<T>,
    /// Per-trial confusion counts, row-major `C x C`, row = true class.
    pub confusions: Vec<Vec<u64>>,
    /// Expansion energy trace per trial.
    pub energy_traces: Vec<Vec<T>>,
    pub cost_volume_secs: f64,
    pub smoothing_secs: Vec<f64>,
}

/// Fraction of pixels whose labels disagree.
pub fn error_rate<T: Real>(f: &LabelImage, gt: &LabelImage) -> Result<T> {
    if f.height() != gt.height() || f.width() != gt.width() {
        return Err(Error::Contract(format!(
            "label image {}x{} does not match ground truth {}x{}",
            f.height(),
            f.width(),
            gt.height(),
            gt.width()
        )));
    }
    let wrong = f
        .labels()
        .iter()
        .zip(gt.labels())
        .filter(|(a, b)| a != b)
        .count();
    Ok(count::<T>(wrong) / count(f.labels().len()))
}

fn confusion(f: &LabelImage, gt: &LabelImage, nclasses: usize) -> Vec<u64> {
    let mut m = vec![0u64; nclasses * nclasses];
    for (&pred, &truth) in f.labels().iter().zip(gt.labels()) {
        m[truth * nclasses + pred] += 1;
    }
    m
}

/// Classifies a test image: one cost volume, then per trial an expansion pass
/// (sub-seeded from the trial index), segment erosion and edge erosion.
/// Returns the per-trial label images and the aggregated report.
pub fn classify<T: Real>(
    img: &GrayImage,
    model: &ClassifierModel<T>,
    params: &SmoothParams<T>,
    trials: usize,
    seed: u64,
    gt: Option<&LabelImage>,
) -> Result<(Vec<LabelImage>, Report<T>)> {
    if trials == 0 {
        return Err(Error::Contract("at least one trial required".into()));
    }
    let t0 = Instant::now();
    let cv = cost_volume(img, model)?;
    let cost_volume_secs = t0.elapsed().as_secs_f64();
    classify_with_volume(&cv, model.nclasses(), params, trials, seed, gt, cost_volume_secs)
}

/// The smoothing trials over an existing cost volume.
pub fn classify_with_volume<T: Real>(
    cv: &CostVolume<T>,
    nclasses: usize,
    params: &SmoothParams<T>,
    trials: usize,
    seed: u64,
    gt: Option<&LabelImage>,
    cost_volume_secs: f64,
) -> Result<(Vec<LabelImage>, Report<T>)> {
    let runs: Vec<(LabelImage, Vec<T>, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let t0 = Instant::now();
            let (f, trace) = alpha_expansion_traced(cv, params.u, sub_seed(seed, t as u64));
            let f = alpha_erosion(&f, cv, params.lam, params.small, params.big);
            let f = edge_erosion(&f, cv, params.depth);
            (f, trace, t0.elapsed().as_secs_f64())
        })
        .collect();

    let mut per_trial_error = Vec::new();
    let mut confusions = Vec::new();
    if let Some(gt) = gt {
        for (f, _, _) in &runs {
            per_trial_error.push(error_rate::<T>(f, gt)?);
            confusions.push(confusion(f, gt, nclasses));
        }
    }
    let mean_error = if per_trial_error.is_empty() {
        None
    } else {
        Some(per_trial_error.iter().copied().sum::<T>() / count(per_trial_error.len()))
    };
    let report = Report {
        trials,
        per_trial_error,
        mean_error,
        confusions,
        energy_traces: runs.iter().map(|(_, tr, _)| tr.clone()).collect(),
        cost_volume_secs,
        smoothing_secs: runs.iter().map(|(_, _, s)| *s).collect(),
    };
    Ok((runs.into_iter().map(|(f, _, _)| f).collect(), report))
}

/// Over-exposure augmentation request: offsets and sample count per offset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentSpec {
    pub deltas: Vec<u32>,
    pub per_delta: usize,
}

/// A trained model with per-class wall-clock timings.
pub struct TrainOutcome<T> {
    pub model: ClassifierModel<T>,
    pub per_class_secs: Vec<f64>,
}

fn sample_without_replacement(
    n: usize,
    take: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.truncate(take.min(n));
    idx
}

/// Extracts, optionally augments and preprocesses the patches of every class,
/// then trains all class structures.
///
/// With augmentation, each class samples `deltas.len() * per_delta` original
/// patches plus `per_delta` patches from each over-exposed image copy, so
/// originals and over-exposed samples stay balanced. Affinities always use
/// the raw (non-preprocessed) patches.
pub fn train_model<T: Real>(
    train_images: &[GrayImage],
    side: usize,
    sigma: f64,
    sparsity: usize,
    cfg: &TrainConfig,
    augment: Option<&AugmentSpec>,
) -> Result<TrainOutcome<T>> {
    if train_images.is_empty() {
        return Err(Error::Contract("no training classes".into()));
    }
    let mask = gaussian_mask::<T>(side, sigma);
    let mut raw_classes = Vec::with_capacity(train_images.len());
    for (c, img) in train_images.iter().enumerate() {
        let mut set = extract_patches::<T>(img, side, 1)?;
        if let Some(aug) = augment {
            if !aug.deltas.is_empty() && aug.per_delta > 0 {
                let mut rng = rng_from(sub_seed(sub_seed(cfg.seed, c as u64), 3));
                let n_orig = aug.deltas.len() * aug.per_delta;
                let picks = sample_without_replacement(set.count(), n_orig, &mut rng);
                let mut merged = set.subset(&picks);
                for &delta in &aug.deltas {
                    let exposed = overexpose(img, delta)?;
                    let eset = extract_patches::<T>(&exposed, side, 1)?;
                    let picks = sample_without_replacement(eset.count(), aug.per_delta, &mut rng);
                    merged = merged.concat(&eset.subset(&picks));
                }
                set = merged;
            }
        }
        set.set_class(c);
        raw_classes.push(set);
    }
    let processed: Vec<_> = raw_classes.iter().map(|s| preprocess(s, &mask)).collect();

    let trained: Vec<Result<(MultilevelDictionary<T>, f64)>> = (0..train_images.len())
        .into_par_iter()
        .map(|c| {
            let t0 = Instant::now();
            let d = train_class(c, &processed, &raw_classes, cfg)?;
            Ok((d, t0.elapsed().as_secs_f64()))
        })
        .collect();
    let mut dictionaries = Vec::with_capacity(trained.len());
    let mut per_class_secs = Vec::with_capacity(trained.len());
    for r in trained {
        let (d, secs) = r?;
        dictionaries.push(d);
        per_class_secs.push(secs);
    }
    let model = ClassifierModel::new(dictionaries, side, sparsity, sigma)?;
    Ok(TrainOutcome {
        model,
        per_class_secs,
    })
}
