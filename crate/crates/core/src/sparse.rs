//! Matching-pursuit atom selection, multilevel decomposition over a
//! structured dictionary, and reconstruction errors.
//!
//! A multilevel dictionary is a tree of complete dictionaries: every atom of
//! a branch dictionary may own a child dictionary at the next level, and each
//! level may additionally hold one "merged" dictionary trained from pooled
//! residuals of pruned branches. Decomposition walks one atom per level; when
//! the chosen atom has no child the walk falls through to the merged
//! dictionary and stays on that chain.

use std::collections::HashMap;

use crate::error::Error;
use crate::linalg::{dot, norm_sq, UnitVector};
use crate::scalar::Real;
use crate::Result;

/// A complete dictionary of unit-norm atoms.
#[derive(Debug, Clone)]
pub struct FlatDictionary<T> {
    dim: usize,
    atoms: Vec<UnitVector<T>>,
}

impl<T: Real> FlatDictionary<T> {
    pub fn new(dim: usize, atoms: Vec<UnitVector<T>>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Contract("dictionary needs at least one atom".into()));
        }
        for a in &atoms {
            if a.dim() != dim {
                return Err(Error::Contract("atom dimension mismatch".into()));
            }
        }
        Ok(Self { dim, atoms })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn natoms(&self) -> usize {
        self.atoms.len()
    }

    #[inline]
    pub fn atom(&self, k: usize) -> &[T] {
        &self.atoms[k]
    }

    pub fn atoms(&self) -> &[UnitVector<T>] {
        &self.atoms
    }
}

/// Index of a dictionary node inside a [`MultilevelDictionary`].
pub type NodeId = usize;

/// How a dictionary node hangs in the structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// The single first-level dictionary.
    Root,
    /// Child trained from the residuals selecting `atom` of `parent`.
    Child { parent: NodeId, atom: usize },
    /// Merged-branch dictionary of its level.
    Merged,
}

#[derive(Debug, Clone)]
pub struct StructureNode<T> {
    pub kind: NodeKind,
    pub level: usize,
    pub dict: FlatDictionary<T>,
}

/// Multilevel dictionary of one class: a root, per-atom child dictionaries,
/// and at most one merged dictionary per level. Every stored dictionary has
/// the same atom count.
#[derive(Debug, Clone)]
pub struct MultilevelDictionary<T> {
    class_id: usize,
    levels: usize,
    nodes: Vec<StructureNode<T>>,
    children: HashMap<(NodeId, usize), NodeId>,
    merged: Vec<Option<NodeId>>,
}

impl<T: Real> MultilevelDictionary<T> {
    pub fn new(class_id: usize, levels: usize, root: FlatDictionary<T>) -> Self {
        assert!(levels >= 1);
        let nodes = vec![StructureNode {
            kind: NodeKind::Root,
            level: 1,
            dict: root,
        }];
        Self {
            class_id,
            levels,
            nodes,
            children: HashMap::new(),
            merged: vec![None; levels + 1],
        }
    }

    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].dict.dim()
    }

    pub fn natoms(&self) -> usize {
        self.nodes[0].dict.natoms()
    }

    pub const ROOT: NodeId = 0;

    pub fn node(&self, id: NodeId) -> &StructureNode<T> {
        &self.nodes[id]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &StructureNode<T>)> {
        self.nodes.iter().enumerate()
    }

    pub fn child_of(&self, parent: NodeId, atom: usize) -> Option<NodeId> {
        self.children.get(&(parent, atom)).copied()
    }

    pub fn merged_at(&self, level: usize) -> Option<NodeId> {
        self.merged.get(level).copied().flatten()
    }

    /// Attaches a child dictionary under `(parent, atom)`.
    pub fn add_child(
        &mut self,
        parent: NodeId,
        atom: usize,
        dict: FlatDictionary<T>,
    ) -> Result<NodeId> {
        let pnode = self
            .nodes
            .get(parent)
            .ok_or_else(|| Error::Contract("unknown parent node".into()))?;
        if pnode.kind == NodeKind::Merged {
            return Err(Error::Contract(
                "merged dictionaries do not branch; residuals pool to the next level".into(),
            ));
        }
        let level = pnode.level + 1;
        if level > self.levels {
            return Err(Error::Contract("child exceeds structure depth".into()));
        }
        if atom >= pnode.dict.natoms() {
            return Err(Error::Contract("atom index out of range".into()));
        }
        if self.children.contains_key(&(parent, atom)) {
            return Err(Error::Contract("atom already has a child".into()));
        }
        self.check_dict(&dict)?;
        let id = self.nodes.len();
        self.nodes.push(StructureNode {
            kind: NodeKind::Child { parent, atom },
            level,
            dict,
        });
        self.children.insert((parent, atom), id);
        Ok(id)
    }

    /// Installs the merged dictionary of `level`.
    pub fn add_merged(&mut self, level: usize, dict: FlatDictionary<T>) -> Result<NodeId> {
        if level < 2 || level > self.levels {
            return Err(Error::Contract(format!(
                "merged dictionary level {level} out of range"
            )));
        }
        if self.merged[level].is_some() {
            return Err(Error::Contract(format!(
                "level {level} already has a merged dictionary"
            )));
        }
        self.check_dict(&dict)?;
        let id = self.nodes.len();
        self.nodes.push(StructureNode {
            kind: NodeKind::Merged,
            level,
            dict,
        });
        self.merged[level] = Some(id);
        Ok(id)
    }

    fn check_dict(&self, dict: &FlatDictionary<T>) -> Result<()> {
        if dict.dim() != self.dim() {
            return Err(Error::Contract("dictionary dimension mismatch".into()));
        }
        if dict.natoms() != self.natoms() {
            return Err(Error::Contract(
                "all dictionaries in a structure share the atom count".into(),
            ));
        }
        Ok(())
    }

    /// Atom vector selected by a path step.
    pub fn step_atom(&self, step: &PathStep<T>) -> &[T] {
        self.nodes[step.node].dict.atom(step.atom)
    }
}

/// One selected atom along a decomposition path.
#[derive(Debug, Clone, Copy)]
pub struct PathStep<T> {
    pub level: usize,
    pub node: NodeId,
    pub atom: usize,
    pub coeff: T,
}

/// Result of a multilevel decomposition: the selected atoms with their
/// coefficients and the squared norm of the final residual.
#[derive(Debug, Clone)]
pub struct SparsePath<T> {
    pub steps: Vec<PathStep<T>>,
    pub residual_norm_sq: T,
}

/// Matching pursuit with sparsity one: the atom of maximum absolute
/// correlation with `r`, ties broken by smallest index. A zero residual
/// yields `(0, 0)` under the tie rule.
pub fn mp1<T: Real>(r: &[T], dict: &FlatDictionary<T>) -> (usize, T) {
    debug_assert_eq!(r.len(), dict.dim());
    mp1_slices(r, &dict.atoms)
}

/// The `mp1` core over any slice-like atom list; shared with the learning
/// loops so selection semantics cannot drift.
pub(crate) fn mp1_slices<T, A>(r: &[T], atoms: &[A]) -> (usize, T)
where
    T: Real,
    A: std::ops::Deref<Target = [T]>,
{
    let mut best_k = 0usize;
    let mut best_coeff = dot(r, &atoms[0]);
    let mut best_abs = best_coeff.abs();
    for (k, a) in atoms.iter().enumerate().skip(1) {
        let c = dot(r, a);
        if c.abs() > best_abs {
            best_abs = c.abs();
            best_coeff = c;
            best_k = k;
        }
    }
    (best_k, best_coeff)
}

/// Decomposes `y` over the structure, selecting one atom per level up to
/// sparsity `max_atoms`. The walk descends to the chosen atom's child when it
/// exists, otherwise to the merged dictionary of the next level (and stays on
/// the merged chain); it stops early at a structural dead end.
pub fn decompose<T: Real>(
    y: &[T],
    structure: &MultilevelDictionary<T>,
    max_atoms: usize,
) -> SparsePath<T> {
    assert!(max_atoms >= 1, "sparsity must be at least one");
    assert_eq!(y.len(), structure.dim());
    let mut residual = y.to_vec();
    let mut steps = Vec::with_capacity(max_atoms);
    let mut node_id = MultilevelDictionary::<T>::ROOT;
    for level in 1..=max_atoms {
        let node = structure.node(node_id);
        let (atom, coeff) = mp1(&residual, &node.dict);
        let a = node.dict.atom(atom);
        for i in 0..residual.len() {
            residual[i] -= coeff * a[i];
        }
        steps.push(PathStep {
            level,
            node: node_id,
            atom,
            coeff,
        });
        if level == max_atoms {
            break;
        }
        let next = if node.kind == NodeKind::Merged {
            structure.merged_at(level + 1)
        } else {
            structure
                .child_of(node_id, atom)
                .or_else(|| structure.merged_at(level + 1))
        };
        match next {
            Some(id) => node_id = id,
            None => break,
        }
    }
    SparsePath {
        steps,
        residual_norm_sq: norm_sq(&residual),
    }
}

/// Squared reconstruction error of the path, `||y - sum x_l d_l||^2`.
pub fn recon_error<T: Real>(path: &SparsePath<T>) -> T {
    path.residual_norm_sq
}

/// Reconstruction error normalized by the signal energy; zero signals score
/// zero so blank patches never dominate a class.
pub fn norm_error<T: Real>(y: &[T], path: &SparsePath<T>) -> T {
    let energy = norm_sq(y);
    if energy == T::zero() {
        T::zero()
    } else {
        path.residual_norm_sq / energy
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit(v: Vec<f64>) -> UnitVector<f64> {
        UnitVector::normalized(v).unwrap()
    }

    fn basis(dim: usize, i: usize) -> UnitVector<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        UnitVector::from_unit(v, 1e-12).unwrap()
    }

    fn basis_dict(dim: usize) -> FlatDictionary<f64> {
        FlatDictionary::new(dim, (0..dim).map(|i| basis(dim, i)).collect()).unwrap()
    }

    pub(crate) fn random_dict(dim: usize, k: usize, rng: &mut impl Rng) -> FlatDictionary<f64> {
        let atoms = (0..k)
            .map(|_| unit((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        FlatDictionary::new(dim, atoms).unwrap()
    }

    #[test]
    fn mp1_orthonormal_basis() {
        let d = basis_dict(3);
        let (k, c) = mp1(&[0.0, 2.0, 0.0], &d);
        assert_eq!(k, 1);
        assert_eq!(c, 2.0);
    }

    #[test]
    fn mp1_two_atom_arithmetic() {
        let d = FlatDictionary::new(
            2,
            vec![basis(2, 0), unit(vec![1.0, 1.0])],
        )
        .unwrap();
        let (k, c) = mp1(&[0.0, 1.0], &d);
        assert_eq!(k, 1);
        assert!((c - 1.0 / 2f64.sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn mp1_zero_residual_tie_rule() {
        let d = basis_dict(4);
        let (k, c) = mp1(&[0.0; 4], &d);
        assert_eq!(k, 0);
        assert_eq!(c, 0.0);
    }

    #[test]
    fn mp1_matches_brute_force() {
        let mut rng = crate::rng::rng_from(29);
        for _ in 0..200 {
            let d = random_dict(16, 8, &mut rng);
            let r: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (k, c) = mp1(&r, &d);
            // Exhaustive scan oracle with the same tie rule.
            let mut want = 0;
            let mut best = f64::NEG_INFINITY;
            for j in 0..8 {
                let v = dot(&r, d.atom(j)).abs();
                if v > best {
                    best = v;
                    want = j;
                }
            }
            assert_eq!(k, want);
            assert_eq!(c, dot(&r, d.atom(want)));
        }
    }

    #[test]
    fn decompose_single_level_is_mp1() {
        let mut rng = crate::rng::rng_from(31);
        let root = random_dict(8, 4, &mut rng);
        let s = MultilevelDictionary::new(0, 1, root.clone());
        let y: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = decompose(&y, &s, 1);
        let (k, c) = mp1(&y, &root);
        assert_eq!(p.steps.len(), 1);
        assert_eq!(p.steps[0].atom, k);
        assert_eq!(p.steps[0].coeff, c);
        let mut r = y.clone();
        for i in 0..8 {
            r[i] -= c * root.atom(k)[i];
        }
        assert!((p.residual_norm_sq - norm_sq(&r)).abs() <= 1e-12);
    }

    #[test]
    fn decompose_exact_atom_zero_residual() {
        let mut rng = crate::rng::rng_from(37);
        let root = random_dict(6, 4, &mut rng);
        let mut s = MultilevelDictionary::new(0, 3, root.clone());
        s.add_merged(2, random_dict(6, 4, &mut rng)).unwrap();
        s.add_merged(3, random_dict(6, 4, &mut rng)).unwrap();
        let y = root.atom(2).to_vec();
        let p = decompose(&y, &s, 3);
        assert_eq!(p.steps[0].atom, 2);
        assert!((p.steps[0].coeff - 1.0).abs() <= 1e-12);
        assert!(p.residual_norm_sq <= 1e-20);
        for step in &p.steps[1..] {
            assert!(step.coeff.abs() <= 1e-10);
        }
    }

    #[test]
    fn decompose_falls_through_to_merged_and_stays() {
        let mut rng = crate::rng::rng_from(41);
        let dim = 5;
        let root = random_dict(dim, 3, &mut rng);
        let child0 = random_dict(dim, 3, &mut rng);
        let merged2 = random_dict(dim, 3, &mut rng);
        let merged3 = random_dict(dim, 3, &mut rng);
        let mut s = MultilevelDictionary::new(7, 3, root.clone());
        let c0 = s.add_child(0, 0, child0.clone()).unwrap();
        let m2 = s.add_merged(2, merged2.clone()).unwrap();
        let m3 = s.add_merged(3, merged3.clone()).unwrap();
        // Pick a signal whose best root atom is atom 1 (no child there).
        let y = root.atom(1).iter().map(|v| 2.0 * v + 0.01).collect::<Vec<_>>();
        let p = decompose(&y, &s, 3);
        assert_eq!(p.steps.len(), 3);

        // Scripted trace oracle over the hand-built structure.
        let mut r = y.clone();
        let (k1, c1) = mp1(&r, &root);
        for i in 0..dim {
            r[i] -= c1 * root.atom(k1)[i];
        }
        let expect_node2 = if k1 == 0 { c0 } else { m2 };
        let d2 = if k1 == 0 { &child0 } else { &merged2 };
        let (k2, c2) = mp1(&r, d2);
        for i in 0..dim {
            r[i] -= c2 * d2.atom(k2)[i];
        }
        // From the merged chain the walk must stay merged.
        let expect_node3 = if expect_node2 == m2 {
            m3
        } else {
            s.child_of(c0, k2).unwrap_or(m3)
        };
        assert_eq!(p.steps[0].atom, k1);
        assert_eq!(p.steps[1].node, expect_node2);
        assert_eq!(p.steps[1].atom, k2);
        assert_eq!(p.steps[2].node, expect_node3);
        assert_eq!(s.node(m2).kind, NodeKind::Merged);
    }

    #[test]
    fn decompose_dead_end_terminates_early() {
        let mut rng = crate::rng::rng_from(43);
        let root = random_dict(4, 2, &mut rng);
        let s = MultilevelDictionary::new(0, 3, root);
        let y = vec![0.5, -0.25, 1.0, 0.0];
        let p = decompose(&y, &s, 3);
        assert_eq!(p.steps.len(), 1);
    }

    #[test]
    fn recon_error_empty_path_is_energy() {
        let y = vec![1.0, 2.0, -2.0];
        let p = SparsePath::<f64> {
            steps: vec![],
            residual_norm_sq: norm_sq(&y),
        };
        assert_eq!(recon_error(&p), 9.0);
    }

    #[test]
    fn recon_error_matches_resummation_oracle() {
        let mut rng = crate::rng::rng_from(47);
        for _ in 0..50 {
            let root = random_dict(8, 4, &mut rng);
            let mut s = MultilevelDictionary::new(0, 3, root);
            for a in 0..4 {
                if rng.gen_bool(0.5) {
                    s.add_child(0, a, random_dict(8, 4, &mut rng)).unwrap();
                }
            }
            if rng.gen_bool(0.7) {
                s.add_merged(2, random_dict(8, 4, &mut rng)).unwrap();
                s.add_merged(3, random_dict(8, 4, &mut rng)).unwrap();
            }
            let y: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p = decompose(&y, &s, 3);
            let mut recon = vec![0.0; 8];
            for step in &p.steps {
                let a = s.step_atom(step);
                for i in 0..8 {
                    recon[i] += step.coeff * a[i];
                }
            }
            let direct: f64 = y
                .iter()
                .zip(&recon)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            assert!((recon_error(&p) - direct).abs() <= 1e-10);
        }
    }

    #[test]
    fn norm_error_conventions() {
        let y = vec![0.0, 0.0];
        let p = SparsePath::<f64> {
            steps: vec![],
            residual_norm_sq: 0.0,
        };
        assert_eq!(norm_error(&y, &p), 0.0);

        let mut rng = crate::rng::rng_from(53);
        let root = random_dict(6, 3, &mut rng);
        let s = MultilevelDictionary::new(0, 1, root);
        let y: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = decompose(&y, &s, 1);
        let e = norm_error(&y, &p);
        let scaled: Vec<f64> = y.iter().map(|v| 3.5 * v).collect();
        let ps = decompose(&scaled, &s, 1);
        let es = norm_error(&scaled, &ps);
        assert_eq!(ps.steps[0].atom, p.steps[0].atom);
        assert!((e - es).abs() <= 1e-12);
    }

    proptest! {
        #[test]
        fn residual_monotone_and_energy_identity(seed in 0u64..300) {
            let mut rng = crate::rng::rng_from(seed);
            let root = random_dict(8, 5, &mut rng);
            let mut s = MultilevelDictionary::new(0, 4, root);
            for a in 0..5 {
                if rng.gen_bool(0.4) {
                    s.add_child(0, a, random_dict(8, 5, &mut rng)).unwrap();
                }
            }
            for lvl in 2..=4 {
                if rng.gen_bool(0.6) {
                    s.add_merged(lvl, random_dict(8, 5, &mut rng)).unwrap();
                }
            }
            let y: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut prev = norm_sq(&y);
            for depth in 1..=4usize {
                let p = decompose(&y, &s, depth);
                prop_assert!(p.residual_norm_sq <= prev + 1e-10);
                if depth > 1 {
                    let shallow = decompose(&y, &s, depth - 1);
                    if p.steps.len() == depth {
                        let c = p.steps[depth - 1].coeff;
                        prop_assert!(
                            (shallow.residual_norm_sq - c * c - p.residual_norm_sq).abs() <= 1e-10
                        );
                    }
                }
                prev = p.residual_norm_sq;
            }
        }

        #[test]
        fn positive_scaling_keeps_atom_sequence(seed in 0u64..300, scale in 0.01f64..50.0) {
            let mut rng = crate::rng::rng_from(seed);
            let root = random_dict(6, 4, &mut rng);
            let mut s = MultilevelDictionary::new(0, 3, root);
            for a in 0..4 {
                if rng.gen_bool(0.5) {
                    s.add_child(0, a, random_dict(6, 4, &mut rng)).unwrap();
                }
            }
            if rng.gen_bool(0.5) {
                s.add_merged(2, random_dict(6, 4, &mut rng)).unwrap();
            }
            let y: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            prop_assume!(norm(&y) > 1e-6);
            let scaled: Vec<f64> = y.iter().map(|v| v * scale).collect();
            let a = decompose(&y, &s, 3);
            let b = decompose(&scaled, &s, 3);
            prop_assert_eq!(a.steps.len(), b.steps.len());
            for (sa, sb) in a.steps.iter().zip(b.steps.iter()) {
                prop_assert_eq!(sa.node, sb.node);
                prop_assert_eq!(sa.atom, sb.atom);
            }
        }

        #[test]
        fn decompose_deterministic(seed in 0u64..200) {
            let mut rng = crate::rng::rng_from(seed);
            let root = random_dict(6, 4, &mut rng);
            let s = MultilevelDictionary::new(0, 2, root);
            let y: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = decompose(&y, &s, 2);
            let b = decompose(&y, &s, 2);
            prop_assert_eq!(a.residual_norm_sq.to_bits(), b.residual_norm_sq.to_bits());
            for (sa, sb) in a.steps.iter().zip(b.steps.iter()) {
                prop_assert_eq!(sa.atom, sb.atom);
                prop_assert_eq!(sa.coeff.to_bits(), sb.coeff.to_bits());
            }
        }
    }
}
