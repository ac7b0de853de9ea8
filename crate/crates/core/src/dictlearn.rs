//! Dictionary learning: K-SVD with sparsity one, multilevel structure
//! construction with branch merging, the discriminative first-level atom
//! update, and the class-affinity machinery that picks counter-samples.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Error;
use crate::linalg::{dot, gram, max_eigvec, norm_sq, DenseMatrix, UnitVector};
use crate::patches::PatchSet;
use crate::rng::{rng_from, sub_seed};
use crate::scalar::{count, real, Real};
use crate::sparse::{mp1_slices, FlatDictionary, MultilevelDictionary};
use crate::Result;

/// Training hyperparameters. Defaults are the usual working values: 64-atom
/// dictionaries, two levels, 50 first-level and 10 later-level iterations,
/// alpha 1/40.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub natoms: usize,
    pub levels: usize,
    pub iters_level1: usize,
    pub iters_other: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            natoms: 64,
            levels: 2,
            iters_level1: 50,
            iters_other: 10,
            alpha: 1.0 / 40.0,
            seed: 0,
        }
    }
}

/// Pairwise class similarity: symmetric, unit diagonal, off-diagonal values
/// in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct AffinityMatrix<T> {
    n: usize,
    entries: Vec<T>,
}

impl<T: Real> AffinityMatrix<T> {
    pub fn from_entries(n: usize, entries: Vec<T>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::Contract("affinity matrix size mismatch".into()));
        }
        for i in 0..n {
            if entries[i * n + i] != T::one() {
                return Err(Error::Contract("affinity diagonal must be 1".into()));
            }
            for j in 0..n {
                let v = entries[i * n + j];
                if v < T::zero() || v > T::one() || entries[j * n + i] != v {
                    return Err(Error::Contract("affinity must be symmetric in [0,1]".into()));
                }
            }
        }
        Ok(Self { n, entries })
    }

    pub fn nclasses(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[i * self.n + j]
    }
}

// ---------------------------------------------------------------------------
// K-SVD with sparsity one
// ---------------------------------------------------------------------------

/// Draws the initial atoms: distinct columns chosen uniformly at random,
/// normalized. Zero columns are skipped; if the data cannot provide enough
/// directions, canonical basis vectors fill the remainder.
fn init_atoms<T: Real>(
    samples: &DenseMatrix<T>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<UnitVector<T>> {
    let n = samples.rows();
    let dim = samples.cols();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut atoms = Vec::with_capacity(k);
    for &i in &order {
        if atoms.len() == k {
            break;
        }
        if let Ok(u) = UnitVector::normalized(samples.row(i).to_vec()) {
            atoms.push(u);
        }
    }
    let mut fill = 0usize;
    while atoms.len() < k {
        let mut e = vec![T::zero(); dim];
        e[fill % dim] = T::one();
        atoms.push(UnitVector::from_unit(e, real(1e-12)).unwrap());
        fill += 1;
    }
    atoms
}

/// Assigns every sample row to its best atom; returns `(atom, coeff)` pairs.
fn assign_all<T: Real>(samples: &DenseMatrix<T>, atoms: &[UnitVector<T>]) -> Vec<(usize, T)> {
    (0..samples.rows())
        .into_par_iter()
        .map(|i| mp1_slices(samples.row(i), atoms))
        .collect()
}

fn members_by_atom(assign: &[(usize, impl Copy)], k: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); k];
    for (i, (a, _)) in assign.iter().enumerate() {
        members[*a].push(i);
    }
    members
}

/// Accumulates `sum y yᵀ` over `(set, rows)` groups in order; bitwise equal
/// to `gram` of the same columns concatenated in the same order.
fn gram_of_groups<T: Real>(groups: &[(&DenseMatrix<T>, &[usize])], dim: usize) -> DenseMatrix<T> {
    let mut g = DenseMatrix::zeros(dim, dim);
    for (set, rows) in groups {
        for &r in rows.iter() {
            let y = set.row(r);
            for a in 0..dim {
                let ya = y[a];
                let grow = g.row_mut(a);
                for b in a..dim {
                    grow[b] += ya * y[b];
                }
            }
        }
    }
    for a in 0..dim {
        for b in a + 1..dim {
            let v = g.get(a, b);
            g.set(b, a, v);
        }
    }
    g
}

/// Replaces an unused atom by the currently worst-approximated sample,
/// normalized. `errors` are consumed: the chosen sample is knocked out so a
/// second unused atom picks the next-worst one. Returns `None` (atom kept)
/// when every sample is already represented exactly.
fn replace_unused_atom<T: Real>(
    samples: &DenseMatrix<T>,
    errors: &mut [T],
) -> Option<UnitVector<T>> {
    let mut worst = 0usize;
    for i in 1..errors.len() {
        if errors[i] > errors[worst] {
            worst = i;
        }
    }
    if errors.is_empty() || errors[worst] <= T::zero() {
        return None;
    }
    errors[worst] = T::neg_infinity();
    UnitVector::normalized(samples.row(worst).to_vec()).ok()
}

/// One sparse-coding-plus-update round shared by `ksvd1` and the
/// discriminative first-level loop. `update` maps (atom index, member rows,
/// current atom) to the new atom.
fn ksvd_round<T: Real>(
    samples: &DenseMatrix<T>,
    norms_sq: &[T],
    atoms: &mut [UnitVector<T>],
    mut update: impl FnMut(usize, &[usize], &UnitVector<T>) -> Result<UnitVector<T>>,
) -> Result<()> {
    let assign = assign_all(samples, atoms);
    let members = members_by_atom(&assign, atoms.len());
    // Approximation error of each sample at coding time; drives the
    // unused-atom replacement rule.
    let mut errors: Vec<T> = assign
        .iter()
        .enumerate()
        .map(|(i, (_, c))| norms_sq[i] - *c * *c)
        .collect();
    for k in 0..atoms.len() {
        if members[k].is_empty() {
            if let Some(a) = replace_unused_atom(samples, &mut errors) {
                atoms[k] = a;
            }
        } else {
            atoms[k] = update(k, &members[k], &atoms[k])?;
        }
    }
    Ok(())
}

fn ksvd1_rows<T: Real>(
    samples: &DenseMatrix<T>,
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<FlatDictionary<T>> {
    let n = samples.rows();
    let dim = samples.cols();
    if k == 0 {
        return Err(Error::Contract("dictionary needs at least one atom".into()));
    }
    if n < k {
        return Err(Error::InsufficientData(format!(
            "{n} samples cannot train {k} atoms"
        )));
    }
    let mut rng = rng_from(seed);
    let mut atoms = init_atoms(samples, k, &mut rng);
    let norms_sq: Vec<T> = (0..n).map(|i| norm_sq(samples.row(i))).collect();
    for _ in 0..iters {
        ksvd_round(samples, &norms_sq, &mut atoms, |_, rows, _| {
            Ok(max_eigvec(&gram_of_groups(&[(samples, rows)], dim))?.vector)
        })?;
    }
    FlatDictionary::new(dim, atoms)
}

/// K-SVD for a sparsity of one atom: alternates assignment of every column
/// to its best atom with a per-atom update to the dominant singular direction
/// of the assigned columns. `Y` is `dim x n`, one sample per column.
pub fn ksvd1<T: Real>(
    y: &DenseMatrix<T>,
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<FlatDictionary<T>> {
    ksvd1_rows(&y.transposed(), k, iters, seed)
}

/// Objective `||Y - DX||_F^2` of a sparsity-one coding of `Y` over `dict`.
pub fn coding_objective<T: Real>(y: &DenseMatrix<T>, dict: &FlatDictionary<T>) -> T {
    let samples = y.transposed();
    let mut total = T::zero();
    for i in 0..samples.rows() {
        let (_, c) = mp1_slices(samples.row(i), dict.atoms());
        total += norm_sq(samples.row(i)) - c * c;
    }
    total
}

// ---------------------------------------------------------------------------
// Residual splitting and structure learning
// ---------------------------------------------------------------------------

/// Splits the columns of `Y` by their best atom of `dict` (the `mp1` rule)
/// and returns the per-atom residual sets `y - <y,d> d` plus the assignment.
pub fn split_residuals<T: Real>(
    y: &DenseMatrix<T>,
    dict: &FlatDictionary<T>,
) -> (Vec<DenseMatrix<T>>, Vec<usize>) {
    let samples = y.transposed();
    let groups = split_residual_rows(&samples, dict);
    let assignments = {
        let mut a = vec![0usize; y.cols()];
        for (k, g) in groups.iter().enumerate() {
            for &i in &g.1 {
                a[i] = k;
            }
        }
        a
    };
    let sets = groups
        .into_iter()
        .map(|(rows, _)| rows.transposed())
        .collect();
    (sets, assignments)
}

/// Row-major variant: per atom, the residual rows and their source indices.
fn split_residual_rows<T: Real>(
    samples: &DenseMatrix<T>,
    dict: &FlatDictionary<T>,
) -> Vec<(DenseMatrix<T>, Vec<usize>)> {
    let dim = dict.dim();
    let assign = assign_all(samples, dict.atoms());
    let members = members_by_atom(&assign, dict.natoms());
    members
        .into_iter()
        .enumerate()
        .map(|(k, rows)| {
            if rows.is_empty() {
                return (empty_rows(dim), rows);
            }
            let mut out = DenseMatrix::zeros(rows.len(), dim);
            let atom = dict.atom(k);
            for (r, &i) in rows.iter().enumerate() {
                let y = samples.row(i);
                let c = assign[i].1;
                let dst = out.row_mut(r);
                for d in 0..dim {
                    dst[d] = y[d] - c * atom[d];
                }
            }
            (out, rows)
        })
        .collect()
}

fn empty_rows<T: Real>(dim: usize) -> DenseMatrix<T> {
    DenseMatrix::zeros(0, dim)
}

/// Learns the levels below an already-trained first-level dictionary.
///
/// Level by level, each branch's residual set with at least `K` members
/// trains a child dictionary; all smaller sets, together with every residual
/// flowing out of the previous level's merged dictionary, pool into the
/// merged set of this level. The merged dictionary exists only when the pool
/// itself reaches `K` members; otherwise those branches dead-end.
pub fn learn_structure<T: Real>(
    y_c: &DenseMatrix<T>,
    first_level: FlatDictionary<T>,
    cfg: &TrainConfig,
) -> Result<MultilevelDictionary<T>> {
    let mut rng = rng_from(cfg.seed);
    learn_structure_rows(&y_c.transposed(), first_level, cfg, &mut rng, 0)
}

fn learn_structure_rows<T: Real>(
    samples: &DenseMatrix<T>,
    first_level: FlatDictionary<T>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    class_id: usize,
) -> Result<MultilevelDictionary<T>> {
    let k = first_level.natoms();
    let dim = first_level.dim();
    let mut structure = MultilevelDictionary::new(class_id, cfg.levels, first_level);
    // Branch nodes of the current level with the sets they were trained on.
    let mut branches = vec![(MultilevelDictionary::<T>::ROOT, samples.clone())];
    // Training set of the current level's merged dictionary, if any.
    let mut merged_set: Option<DenseMatrix<T>> = None;

    for level in 2..=cfg.levels {
        let mut next_branches = Vec::new();
        let mut pool: Vec<DenseMatrix<T>> = Vec::new();
        for (node, set) in &branches {
            let dict = structure.node(*node).dict.clone();
            for (atom, (residuals, _)) in split_residual_rows(set, &dict).into_iter().enumerate() {
                if residuals.rows() >= k {
                    let child = ksvd1_rows(&residuals, k, cfg.iters_other, rng.gen())?;
                    let id = structure.add_child(*node, atom, child)?;
                    next_branches.push((id, residuals));
                } else if residuals.rows() > 0 {
                    pool.push(residuals);
                }
            }
        }
        if let Some(set) = merged_set.take() {
            let mnode = structure.merged_at(level - 1).expect("merged set has a node");
            let dict = structure.node(mnode).dict.clone();
            // Every residual of a merged dictionary flows to the next pool,
            // without a per-atom cardinality check.
            pool.push(residuals_over(&set, &dict));
        }
        let pooled = concat_rows(&pool, dim);
        if pooled.rows() >= k {
            let dict = ksvd1_rows(&pooled, k, cfg.iters_other, rng.gen())?;
            structure.add_merged(level, dict)?;
            merged_set = Some(pooled);
        }
        branches = next_branches;
        if branches.is_empty() && merged_set.is_none() {
            break;
        }
    }
    Ok(structure)
}

/// Residuals of every row after subtracting its best atom of `dict`.
fn residuals_over<T: Real>(samples: &DenseMatrix<T>, dict: &FlatDictionary<T>) -> DenseMatrix<T> {
    let dim = dict.dim();
    let assign = assign_all(samples, dict.atoms());
    let mut out = DenseMatrix::zeros(samples.rows(), dim);
    for i in 0..samples.rows() {
        let (k, c) = assign[i];
        let atom = dict.atom(k);
        let y = samples.row(i);
        let dst = out.row_mut(i);
        for d in 0..dim {
            dst[d] = y[d] - c * atom[d];
        }
    }
    out
}

fn concat_rows<T: Real>(sets: &[DenseMatrix<T>], dim: usize) -> DenseMatrix<T> {
    let total: usize = sets.iter().map(|s| s.rows()).sum();
    let mut out = DenseMatrix::zeros(total, dim);
    let mut r = 0;
    for s in sets {
        for i in 0..s.rows() {
            out.row_mut(r).copy_from_slice(s.row(i));
            r += 1;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Class affinities and counter-samples
// ---------------------------------------------------------------------------

/// Direction maximizing the projected energy of the mean-removed samples:
/// the dominant eigenvector of the Gram of `Y` after subtracting each
/// column's own mean. All-constant data is rejected.
pub fn class_representative<T: Real>(y_raw: &DenseMatrix<T>) -> Result<UnitVector<T>> {
    if y_raw.cols() == 0 {
        return Err(Error::Degenerate("no samples".into()));
    }
    let dim = y_raw.rows();
    let mut centered = y_raw.clone();
    let inv_dim = T::one() / count(dim);
    for j in 0..centered.cols() {
        let mut mean = T::zero();
        for i in 0..dim {
            mean += centered.get(i, j);
        }
        mean *= inv_dim;
        for i in 0..dim {
            let v = centered.get(i, j) - mean;
            centered.set(i, j, v);
        }
    }
    if centered.frob_norm() <= T::zero() {
        return Err(Error::Degenerate(
            "all samples constant; mean removal annihilates them".into(),
        ));
    }
    Ok(max_eigvec(&gram(&centered))?.vector)
}

/// Affinity matrix `S_ij = |<eta_i, eta_j>|` with the diagonal forced to 1.
pub fn affinity<T: Real>(reps: &[UnitVector<T>]) -> AffinityMatrix<T> {
    let n = reps.len();
    let mut entries = vec![T::zero(); n * n];
    for i in 0..n {
        entries[i * n + i] = T::one();
        for j in i + 1..n {
            let v = dot(&reps[i], &reps[j]).abs().min(T::one());
            entries[i * n + j] = v;
            entries[j * n + i] = v;
        }
    }
    AffinityMatrix { n, entries }
}

/// Per-class counter-sample row indices for updating one atom of class `c`.
///
/// Class `j` contributes its `round(S_jc * N̄)` samples most correlated with
/// the atom (`N̄` the mean size of the other classes, so equal-sized classes
/// get exactly `round(S_jc * N)`), capped at the class size.
fn counter_sample_indices<T: Real>(
    d: &[T],
    c: usize,
    s: &AffinityMatrix<T>,
    classes: &[PatchSet<T>],
) -> Vec<Vec<usize>> {
    let nclasses = classes.len();
    let mut out = vec![Vec::new(); nclasses];
    if nclasses <= 1 {
        return out;
    }
    let nbar: f64 = classes
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != c)
        .map(|(_, p)| p.count() as f64)
        .sum::<f64>()
        / (nclasses - 1) as f64;
    for (j, class) in classes.iter().enumerate() {
        if j == c {
            continue;
        }
        let sjc = s.get(j, c).to_f64().expect("finite affinity");
        let quota = ((sjc * nbar).round() as usize).min(class.count());
        if quota == 0 {
            continue;
        }
        let corr: Vec<T> = (0..class.count())
            .into_par_iter()
            .map(|i| dot(class.sample(i), d).abs())
            .collect();
        let mut idx: Vec<usize> = (0..class.count()).collect();
        let by_corr = |a: &usize, b: &usize| {
            corr[*b]
                .partial_cmp(&corr[*a])
                .expect("finite correlation")
                .then(a.cmp(b))
        };
        if quota < idx.len() {
            idx.select_nth_unstable_by(quota - 1, by_corr);
            idx.truncate(quota);
        }
        idx.sort_unstable_by(by_corr);
        out[j] = idx;
    }
    out
}

/// Counter-sample matrix `Y_{c≠}` for one atom: from every other class `j`,
/// the `round(S_jc * N̄)` samples with the highest `|<y, d>|`, concatenated in
/// class order.
pub fn counter_samples<T: Real>(
    d: &[T],
    c: usize,
    s: &AffinityMatrix<T>,
    classes: &[PatchSet<T>],
) -> DenseMatrix<T> {
    let dim = d.len();
    let picks = counter_sample_indices(d, c, s, classes);
    let total: usize = picks.iter().map(|v| v.len()).sum();
    let mut m = DenseMatrix::zeros(dim, total);
    let mut col = 0;
    for (j, rows) in picks.iter().enumerate() {
        for &i in rows {
            let y = classes[j].sample(i);
            for r in 0..dim {
                m.set(r, col, y[r]);
            }
            col += 1;
        }
    }
    m
}

// ---------------------------------------------------------------------------
// Discriminative atom update
// ---------------------------------------------------------------------------

fn discriminative_from_grams<T: Real>(
    gram_own: &DenseMatrix<T>,
    n_own: usize,
    counter: Option<(&DenseMatrix<T>, usize)>,
    alpha: T,
) -> Result<UnitVector<T>> {
    match counter {
        None => Ok(max_eigvec(gram_own)?.vector),
        Some((gram_counter, n_counter)) => {
            let lambda = count::<T>(n_own) / count(n_counter) * alpha;
            let dim = gram_own.rows();
            let mut a = DenseMatrix::zeros(dim, dim);
            for i in 0..dim {
                for j in 0..dim {
                    a.set(i, j, gram_own.get(i, j) - lambda * gram_counter.get(i, j));
                }
            }
            Ok(max_eigvec(&a)?.vector)
        }
    }
}

/// Atom maximizing own-class fit against counter-class repulsion: the top
/// eigenvector of `A = Y_c^R Y_c^Rᵀ - λ Y_{c≠} Y_{c≠}ᵀ` with
/// `λ = (|Y_c^R| / |Y_{c≠}|) α`. An empty counter set reduces the update to
/// the dominant singular direction of `Y_c^R`.
pub fn discriminative_update<T: Real>(
    ycr: &DenseMatrix<T>,
    ycn: &DenseMatrix<T>,
    alpha: T,
) -> Result<UnitVector<T>> {
    if ycr.cols() == 0 {
        return Err(Error::Contract(
            "empty own-class set; apply the unused-atom replacement instead".into(),
        ));
    }
    let gr = gram(ycr);
    if ycn.cols() == 0 {
        discriminative_from_grams(&gr, ycr.cols(), None, alpha)
    } else {
        let gn = gram(ycn);
        discriminative_from_grams(&gr, ycr.cols(), Some((&gn, ycn.cols())), alpha)
    }
}

// ---------------------------------------------------------------------------
// Per-class training
// ---------------------------------------------------------------------------

/// Trains the full multilevel dictionary of class `c`.
///
/// The first level alternates sparse coding of the class samples with the
/// discriminative update of every atom in index order, re-selecting the
/// counter-samples for each atom from the affinity quotas; the levels below
/// are learnt reconstructively. `raw_classes` are the unprocessed patches the
/// affinity matrix is computed from.
///
/// Seed protocol: the class derives `sub_seed(cfg.seed, c)`, from which the
/// first level uses stream 1 and the structure below uses stream 2, so the
/// stages are independently reproducible.
pub fn train_class<T: Real>(
    c: usize,
    all_classes: &[PatchSet<T>],
    raw_classes: &[PatchSet<T>],
    cfg: &TrainConfig,
) -> Result<MultilevelDictionary<T>> {
    let nclasses = all_classes.len();
    if nclasses == 0 || c >= nclasses || raw_classes.len() != nclasses {
        return Err(Error::Contract("bad class setup".into()));
    }
    let k = cfg.natoms;
    for set in all_classes {
        if set.count() < k {
            return Err(Error::InsufficientData(format!(
                "class with {} samples cannot train {k} atoms",
                set.count()
            )));
        }
    }
    let dim = all_classes[c].dim();
    let class_seed = sub_seed(cfg.seed, c as u64);

    let s = if nclasses > 1 {
        let reps: Vec<UnitVector<T>> = raw_classes
            .iter()
            .map(|p| class_representative(&p.data()))
            .collect::<Result<_>>()?;
        affinity(&reps)
    } else {
        AffinityMatrix {
            n: 1,
            entries: vec![T::one()],
        }
    };

    let own = all_classes[c].samples();
    let mut rng = rng_from(sub_seed(class_seed, 1));
    let mut atoms = init_atoms(own, k, &mut rng);
    let norms_sq: Vec<T> = (0..own.rows()).map(|i| norm_sq(own.row(i))).collect();
    let alpha = real::<T>(cfg.alpha);

    for _ in 0..cfg.iters_level1 {
        ksvd_round(own, &norms_sq, &mut atoms, |_, rows, atom| {
            let gr = gram_of_groups(&[(own, rows)], dim);
            let picks = counter_sample_indices(atom, c, &s, all_classes);
            let n_counter: usize = picks.iter().map(|v| v.len()).sum();
            if n_counter == 0 {
                discriminative_from_grams(&gr, rows.len(), None, alpha)
            } else {
                let groups: Vec<(&DenseMatrix<T>, &[usize])> = picks
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| !v.is_empty())
                    .map(|(j, v)| (all_classes[j].samples(), v.as_slice()))
                    .collect();
                let gn = gram_of_groups(&groups, dim);
                discriminative_from_grams(&gr, rows.len(), Some((&gn, n_counter)), alpha)
            }
        })?;
    }

    let first = FlatDictionary::new(dim, atoms)?;
    let mut structure_cfg = *cfg;
    structure_cfg.seed = sub_seed(class_seed, 2);
    let mut srng = rng_from(structure_cfg.seed);
    learn_structure_rows(own, first, &structure_cfg, &mut srng, c)
}
