//! Bayesian backfitting over a sum of trees.
//!
//! Each tree is updated against the partial residual of all other trees:
//! a grow / prune / change / swap proposal is accepted by Metropolis-Hastings
//! with the leaf values integrated out, then the leaf values are drawn from
//! their normal full conditionals. Units may carry weights `w_i`, in which
//! case tree `j` contributes `w_i g_j(x_i)` to the fit; this is what the
//! treatment-effect forest of a causal forest uses.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{BartConfig, MoveProbs};
use super::cutpoints::{BinnedDesign, CutpointGrid};
use super::prior::{split_prior_prob, LeafPrior};
use super::tree::{FlatForest, Tree};
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Tree-structure prior and proposal settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreePrior {
    pub alpha: f64,
    pub beta: f64,
    pub min_node_size: usize,
    pub moves: MoveProbs,
}

impl From<&BartConfig> for TreePrior {
    fn from(c: &BartConfig) -> Self {
        TreePrior { alpha: c.alpha, beta: c.beta, min_node_size: c.min_node_size, moves: c.proposal.normalized() }
    }
}

impl TreePrior {
    fn split(&self, depth: usize) -> f64 {
        split_prior_prob(self.alpha, self.beta, depth)
    }

    /// log of p(d) (1 - p(d+1))^2 / (1 - p(d)): prior ratio of splitting a leaf at depth d.
    fn log_grow_prior_ratio(&self, depth: usize) -> f64 {
        let p = self.split(depth);
        let pc = self.split(depth + 1);
        p.ln() + 2.0 * (1.0 - pc).ln() - (1.0 - p).ln()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MoveStats {
    pub proposed: [u64; 4],
    pub accepted: [u64; 4],
}

#[derive(Clone, Copy)]
enum Move {
    Grow = 0,
    Prune = 1,
    Change = 2,
    Swap = 3,
}

#[derive(Clone, Copy, Default)]
struct LeafStats<T> {
    /// Sum of squared weights (count when unweighted).
    sw2: T,
    /// Weighted residual sum.
    swr: T,
    /// Units with non-zero weight.
    active: usize,
}

impl<T: Real> LeafStats<T> {
    fn merge(self, o: Self) -> Self {
        LeafStats { sw2: self.sw2 + o.sw2, swr: self.swr + o.swr, active: self.active + o.active }
    }
}

/// Sum-of-trees state bound to one training design.
#[derive(Debug, Clone)]
pub struct ForestSampler<T: Real> {
    trees: Vec<Tree<T>>,
    grid: CutpointGrid<T>,
    design: BinnedDesign,
    splittable: Vec<usize>,
    weights: Option<Vec<T>>,
    /// Unweighted sum of tree functions at each training unit.
    fn_sum: Vec<T>,
    resid: Vec<T>,
    old_contrib: Vec<T>,
    leaf_prior: LeafPrior<T>,
    prior: TreePrior,
    fixed_structure: bool,
    verify: bool,
    stats: MoveStats,
}

impl<T: Real> ForestSampler<T> {
    /// Starts `m` root-only trees, each leaf at `leaf_prior.mu_mu`.
    pub fn new(
        x: &Array2<T>,
        grid: CutpointGrid<T>,
        m: usize,
        prior: TreePrior,
        leaf_prior: LeafPrior<T>,
        weights: Option<Vec<T>>,
    ) -> Result<Self> {
        let n = x.nrows();
        if grid.n_features() != x.ncols() {
            return Err(Error::Schema(format!(
                "cutpoint grid has {} covariates, design has {}",
                grid.n_features(),
                x.ncols()
            )));
        }
        if weights.as_ref().is_some_and(|w| w.len() != n) {
            return Err(Error::Schema("weight vector length differs from design".into()));
        }
        let design = grid.bin_matrix(x);
        let splittable = grid.splittable();
        let trees = (0..m).map(|_| Tree::root_only(n, leaf_prior.mu_mu)).collect();
        let fn_sum = vec![leaf_prior.mu_mu * crate::scalar::count(m); n];
        Ok(ForestSampler {
            trees,
            grid,
            design,
            splittable,
            weights,
            fn_sum,
            resid: vec![T::zero(); n],
            old_contrib: vec![T::zero(); n],
            leaf_prior,
            prior,
            fixed_structure: false,
            verify: cfg!(debug_assertions),
            stats: MoveStats::default(),
        })
    }

    pub fn with_fixed_structure(mut self, fixed: bool) -> Self {
        self.fixed_structure = fixed;
        self
    }

    /// Check tree invariants after every sweep (on by default in debug builds).
    pub fn with_verification(mut self, verify: bool) -> Self {
        self.verify = verify;
        self
    }

    pub fn n_units(&self) -> usize {
        self.fn_sum.len()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn leaf_prior(&self) -> LeafPrior<T> {
        self.leaf_prior
    }

    pub fn set_leaf_prior(&mut self, p: LeafPrior<T>) {
        self.leaf_prior = p;
    }

    pub fn move_stats(&self) -> MoveStats {
        self.stats
    }

    #[inline]
    fn w(&self, u: usize) -> T {
        match &self.weights {
            None => T::one(),
            Some(w) => w[u],
        }
    }

    /// Unweighted `sum_j g_j(x_i)` at each training unit.
    pub fn function_values(&self) -> &[T] {
        &self.fn_sum
    }

    /// Weighted contribution `w_i sum_j g_j(x_i)` to the response.
    pub fn fitted(&self) -> Vec<T> {
        match &self.weights {
            None => self.fn_sum.clone(),
            Some(w) => self.fn_sum.iter().zip(w).map(|(&f, &wi)| f * wi).collect(),
        }
    }

    pub fn leaf_values(&self) -> Vec<T> {
        self.trees.iter().flat_map(|t| t.leaves().into_iter().map(move |l| t.leaf_value(l))).collect()
    }

    pub fn tree_depths(&self) -> Vec<usize> {
        self.trees.iter().map(|t| t.max_depth()).collect()
    }

    pub fn snapshot(&self) -> FlatForest<T> {
        let mut nodes = Vec::new();
        let roots = self.trees.iter().map(|t| t.flatten_into(&self.grid, &mut nodes)).collect();
        FlatForest { nodes, roots }
    }

    /// Verifies every tree's structural invariants.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let n = self.n_units();
        for (j, t) in self.trees.iter().enumerate() {
            t.check(n, self.prior.min_node_size, self.weights.as_deref()).map_err(|e| format!("tree {j}: {e}"))?;
            // leaf membership must agree with routing on the bins
            for l in t.leaves() {
                for &u in t.leaf_units(l) {
                    let mut id = 0u32;
                    while let Some((a, b)) = t.children(id) {
                        let (v, c) = t.rule(id).unwrap();
                        id = if self.design.bin(v as usize, u as usize) <= c { a } else { b };
                    }
                    if id != l {
                        return Err(format!("tree {j}: unit {u} stored in leaf {l}, routes to {id}"));
                    }
                }
            }
        }
        Ok(())
    }

    fn stats_of(&self, units: &[u32]) -> LeafStats<T> {
        let mut s = LeafStats { sw2: T::zero(), swr: T::zero(), active: 0 };
        match &self.weights {
            None => {
                for &u in units {
                    s.swr = s.swr + self.resid[u as usize];
                }
                s.sw2 = crate::scalar::count(units.len());
                s.active = units.len();
            }
            Some(w) => {
                for &u in units {
                    let wi = w[u as usize];
                    if wi != T::zero() {
                        s.sw2 = s.sw2 + wi * wi;
                        s.swr = s.swr + wi * self.resid[u as usize];
                        s.active += 1;
                    }
                }
            }
        }
        s
    }

    /// Split statistics of a leaf's units under rule `(var, cut)`.
    fn split_stats(&self, units: &[u32], var: usize, cut: u16) -> (LeafStats<T>, LeafStats<T>) {
        let col = self.design.column(var);
        let zero = LeafStats { sw2: T::zero(), swr: T::zero(), active: 0 };
        let (mut l, mut r) = (zero, zero);
        for &u in units {
            let ui = u as usize;
            let wi = self.w(ui);
            if wi == T::zero() {
                continue;
            }
            let side = if col[ui] <= cut { &mut l } else { &mut r };
            side.sw2 = side.sw2 + wi * wi;
            side.swr = side.swr + wi * self.resid[ui];
            side.active += 1;
        }
        (l, r)
    }

    /// Log marginal likelihood of a leaf's residuals with its value integrated out,
    /// dropping terms common to every partition.
    fn log_ml(&self, s: LeafStats<T>, sigma2: T) -> f64 {
        let tau2 = self.leaf_prior.sigma_mu * self.leaf_prior.sigma_mu;
        let mm = self.leaf_prior.mu_mu;
        let prec = s.sw2 / sigma2 + T::one() / tau2;
        let b = s.swr / sigma2 + mm / tau2;
        let half: T = lit(0.5);
        (-(half) * (tau2 * prec).ln() + half * b * b / prec - half * mm * mm / tau2).as_f64()
    }

    fn draw_leaf<R: Rng>(&self, s: LeafStats<T>, sigma2: T, rng: &mut R) -> T {
        let tau2 = self.leaf_prior.sigma_mu * self.leaf_prior.sigma_mu;
        let prec = s.sw2 / sigma2 + T::one() / tau2;
        let mean = (s.swr / sigma2 + self.leaf_prior.mu_mu / tau2) / prec;
        let z: f64 = StandardNormal.sample(rng);
        mean + lit::<T>(z) / prec.sqrt()
    }

    fn random_rule<R: Rng>(&self, rng: &mut R) -> Option<(u32, u16)> {
        if self.splittable.is_empty() {
            return None;
        }
        let v = self.splittable[rng.random_range(0..self.splittable.len())];
        let c = rng.random_range(0..self.grid.cuts[v].len()) as u16;
        Some((v as u32, c))
    }

    fn rule_log_prior(&self, var: u32) -> f64 {
        -(self.splittable.len() as f64).ln() - (self.grid.cuts[var as usize].len() as f64).ln()
    }

    fn prob_grow(&self, root_only: bool) -> f64 {
        if root_only {
            1.0
        } else {
            self.prior.moves.grow
        }
    }

    /// One backfitting pass over every tree against `target`.
    pub fn sweep<R: Rng>(&mut self, target: &[T], sigma2: T, iteration: usize, rng: &mut R) -> Result<()> {
        debug_assert_eq!(target.len(), self.n_units());
        for j in 0..self.trees.len() {
            self.update_tree(j, target, sigma2, iteration, rng)?;
        }
        if self.verify {
            if let Err(e) = self.check_invariants() {
                panic!("tree invariant violated at iteration {iteration}: {e}");
            }
        }
        Ok(())
    }

    fn update_tree<R: Rng>(&mut self, j: usize, target: &[T], sigma2: T, iteration: usize, rng: &mut R) -> Result<()> {
        // Partial residual of tree j.
        let tree = std::mem::replace(&mut self.trees[j], Tree::root_only(0, T::zero()));
        for l in tree.leaves() {
            let g = tree.leaf_value(l);
            for &u in tree.leaf_units(l) {
                let ui = u as usize;
                self.old_contrib[ui] = g;
                self.resid[ui] = target[ui] - self.w(ui) * (self.fn_sum[ui] - g);
            }
        }
        let mut tree = tree;
        if !self.fixed_structure {
            let log_alpha = self.propose(&mut tree, sigma2, rng);
            if log_alpha.is_nan() {
                self.trees[j] = tree;
                return Err(Error::NonFinite { iteration, tree: j });
            }
        }
        // Leaf values from their full conditionals.
        for l in tree.leaves() {
            let s = self.stats_of(tree.leaf_units(l));
            let v = self.draw_leaf(s, sigma2, rng);
            if !v.is_finite() {
                self.trees[j] = tree;
                return Err(Error::NonFinite { iteration, tree: j });
            }
            tree.set_leaf_value(l, v);
            for &u in tree.leaf_units(l) {
                let ui = u as usize;
                self.fn_sum[ui] = self.fn_sum[ui] - self.old_contrib[ui] + v;
            }
        }
        self.trees[j] = tree;
        Ok(())
    }

    /// Proposes and resolves one structural move; returns the log acceptance
    /// ratio (NaN signals a numerical failure).
    fn propose<R: Rng>(&mut self, tree: &mut Tree<T>, sigma2: T, rng: &mut R) -> f64 {
        let root_only = tree.is_root_only();
        let mv = if root_only {
            Move::Grow
        } else {
            let p = self.prior.moves;
            let u: f64 = rng.random();
            if u < p.grow {
                Move::Grow
            } else if u < p.grow + p.prune {
                Move::Prune
            } else if u < p.grow + p.prune + p.change {
                Move::Change
            } else {
                Move::Swap
            }
        };
        self.stats.proposed[mv as usize] += 1;
        let (log_alpha, applied) = match mv {
            Move::Grow => self.grow(tree, sigma2, rng),
            Move::Prune => self.prune(tree, sigma2, rng),
            Move::Change => self.change(tree, sigma2, rng),
            Move::Swap => self.swap(tree, sigma2, rng),
        };
        if applied {
            self.stats.accepted[mv as usize] += 1;
        }
        log_alpha
    }

    fn accept<R: Rng>(log_alpha: f64, rng: &mut R) -> bool {
        log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha
    }

    fn grow<R: Rng>(&mut self, tree: &mut Tree<T>, sigma2: T, rng: &mut R) -> (f64, bool) {
        let leaves = tree.leaves();
        let b = leaves.len() as f64;
        let leaf = leaves[rng.random_range(0..leaves.len())];
        let Some((var, cut)) = self.random_rule(rng) else {
            return (0.0, false);
        };
        let units = tree.leaf_units(leaf);
        let (ls, rs) = self.split_stats(units, var as usize, cut);
        let min = self.prior.min_node_size;
        if ls.active < min || rs.active < min {
            return (0.0, false);
        }
        let parent_stats = ls.merge(rs);
        let depth = tree.depth(leaf);
        let w_before = tree.nogs().len();
        let parent_was_nog = tree.sibling(leaf).is_some_and(|s| tree.is_leaf(s));
        let w_after = (w_before + 1 - usize::from(parent_was_nog)) as f64;
        let log_alpha = (self.prior.moves.prune / w_after).ln() - (self.prob_grow(tree.is_root_only()) / b).ln()
            + self.prior.log_grow_prior_ratio(depth)
            + self.log_ml(ls, sigma2)
            + self.log_ml(rs, sigma2)
            - self.log_ml(parent_stats, sigma2);
        if log_alpha.is_nan() {
            return (f64::NAN, false);
        }
        if Self::accept(log_alpha, rng) {
            tree.grow(leaf, var, cut, &self.design);
            (log_alpha, true)
        } else {
            (log_alpha, false)
        }
    }

    fn prune<R: Rng>(&mut self, tree: &mut Tree<T>, sigma2: T, rng: &mut R) -> (f64, bool) {
        let nogs = tree.nogs();
        let w = nogs.len() as f64;
        let node = nogs[rng.random_range(0..nogs.len())];
        let (l, r) = tree.children(node).expect("nog has children");
        let ls = self.stats_of(tree.leaf_units(l));
        let rs = self.stats_of(tree.leaf_units(r));
        let merged = ls.merge(rs);
        let b_after = (tree.n_leaves() - 1) as f64;
        let becomes_root_only = node == 0;
        let log_alpha = (self.prob_grow(becomes_root_only) / b_after).ln()
            - (self.prior.moves.prune / w).ln()
            - self.prior.log_grow_prior_ratio(tree.depth(node))
            + self.log_ml(merged, sigma2)
            - self.log_ml(ls, sigma2)
            - self.log_ml(rs, sigma2);
        if log_alpha.is_nan() {
            return (f64::NAN, false);
        }
        if Self::accept(log_alpha, rng) {
            tree.prune(node, self.leaf_prior.mu_mu);
            (log_alpha, true)
        } else {
            (log_alpha, false)
        }
    }

    /// Re-routes the subtree under `node` after its rules were edited and
    /// returns `(log-likelihood change, every leaf large enough)`.
    fn reroute_and_score(&self, tree: &mut Tree<T>, node: u32, leaves: &[u32], sigma2: T, old_ll: f64) -> (f64, bool) {
        let saved_units: Vec<u32> = leaves.iter().flat_map(|&l| tree.leaf_units(l).to_vec()).collect();
        let _ = tree.take_units(leaves);
        tree.route(node, saved_units.into_iter(), &self.design);
        let mut new_ll = 0.0;
        let mut valid = true;
        for &l in leaves {
            let s = self.stats_of(tree.leaf_units(l));
            if s.active < self.prior.min_node_size {
                valid = false;
            }
            new_ll += self.log_ml(s, sigma2);
        }
        (new_ll - old_ll, valid)
    }

    fn subtree_ll(&self, tree: &Tree<T>, leaves: &[u32], sigma2: T) -> f64 {
        leaves.iter().map(|&l| self.log_ml(self.stats_of(tree.leaf_units(l)), sigma2)).sum()
    }

    fn change<R: Rng>(&mut self, tree: &mut Tree<T>, sigma2: T, rng: &mut R) -> (f64, bool) {
        let internals = tree.internals();
        let node = internals[rng.random_range(0..internals.len())];
        let Some(new_rule) = self.random_rule(rng) else {
            return (0.0, false);
        };
        let old_rule = tree.rule(node).expect("internal node");
        let leaves = tree.subtree_leaves(node);
        let old_ll = self.subtree_ll(tree, &leaves, sigma2);
        let saved = leaves.iter().map(|&l| tree.leaf_units(l).to_vec()).collect::<Vec<_>>();
        tree.set_rule(node, new_rule);
        let (log_alpha, valid) = self.reroute_and_score(tree, node, &leaves, sigma2, old_ll);
        if log_alpha.is_nan() {
            tree.set_rule(node, old_rule);
            tree.take_units(&leaves);
            tree.restore_units(&leaves, saved);
            return (f64::NAN, false);
        }
        if valid && Self::accept(log_alpha, rng) {
            (log_alpha, true)
        } else {
            tree.set_rule(node, old_rule);
            tree.take_units(&leaves);
            tree.restore_units(&leaves, saved);
            (log_alpha, false)
        }
    }

    fn swap<R: Rng>(&mut self, tree: &mut Tree<T>, sigma2: T, rng: &mut R) -> (f64, bool) {
        let pairs = tree.internal_pairs();
        if pairs.is_empty() {
            return (0.0, false);
        }
        let (p, c) = pairs[rng.random_range(0..pairs.len())];
        let (l, r) = tree.children(p).expect("internal");
        let p_rule = tree.rule(p).unwrap();
        // Both children internal with one shared rule: swap the parent with both.
        let both = match (tree.rule(l), tree.rule(r)) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        };
        let c_rule = tree.rule(c).unwrap();
        let leaves = tree.subtree_leaves(p);
        let old_ll = self.subtree_ll(tree, &leaves, sigma2);
        let saved = leaves.iter().map(|&x| tree.leaf_units(x).to_vec()).collect::<Vec<_>>();
        let edit = |t: &mut Tree<T>, parent: (u32, u16), child: (u32, u16)| {
            t.set_rule(p, parent);
            if both {
                t.set_rule(l, child);
                t.set_rule(r, child);
            } else {
                t.set_rule(c, child);
            }
        };
        edit(tree, c_rule, p_rule);
        let (mut log_alpha, valid) = self.reroute_and_score(tree, p, &leaves, sigma2, old_ll);
        if both {
            // rule multiset goes from {p, c, c} to {c, p, p}
            log_alpha += self.rule_log_prior(p_rule.0) - self.rule_log_prior(c_rule.0);
        }
        if !log_alpha.is_nan() && valid && Self::accept(log_alpha, rng) {
            return (log_alpha, true);
        }
        edit(tree, p_rule, c_rule);
        tree.take_units(&leaves);
        tree.restore_units(&leaves, saved);
        (log_alpha, false)
    }
}
