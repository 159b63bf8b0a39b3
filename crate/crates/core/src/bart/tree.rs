//! Mutable tree used during sampling, and the compact form kept per posterior draw.

use serde::{Deserialize, Serialize};

use super::cutpoints::{BinnedDesign, CutpointGrid};
use crate::scalar::Real;

pub(crate) const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub(crate) enum Node<T> {
    Leaf { value: T, units: Vec<u32> },
    Internal { var: u32, cut: u16, left: u32, right: u32 },
    Free,
}

/// Arena-backed binary tree whose leaves hold the training units routed to them.
#[derive(Debug, Clone)]
pub(crate) struct Tree<T> {
    nodes: Vec<Node<T>>,
    parent: Vec<u32>,
    depth: Vec<u32>,
    free: Vec<u32>,
}

impl<T: Real> Tree<T> {
    pub fn root_only(n_units: usize, value: T) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value, units: (0..n_units as u32).collect() }],
            parent: vec![NONE],
            depth: vec![0],
            free: Vec::new(),
        }
    }

    #[inline]
    pub fn node(&self, id: u32) -> &Node<T> {
        &self.nodes[id as usize]
    }

    #[inline]
    pub fn depth(&self, id: u32) -> usize {
        self.depth[id as usize] as usize
    }

    #[inline]
    pub fn parent(&self, id: u32) -> u32 {
        self.parent[id as usize]
    }

    pub fn is_leaf(&self, id: u32) -> bool {
        matches!(self.nodes[id as usize], Node::Leaf { .. })
    }

    fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.nodes.len() as u32).filter(|&i| !matches!(self.nodes[i as usize], Node::Free))
    }

    pub fn leaves(&self) -> Vec<u32> {
        self.ids().filter(|&i| self.is_leaf(i)).collect()
    }

    pub fn internals(&self) -> Vec<u32> {
        self.ids().filter(|&i| !self.is_leaf(i)).collect()
    }

    pub fn is_root_only(&self) -> bool {
        self.is_leaf(0)
    }

    pub fn children(&self, id: u32) -> Option<(u32, u32)> {
        match self.nodes[id as usize] {
            Node::Internal { left, right, .. } => Some((left, right)),
            _ => None,
        }
    }

    /// Internal nodes whose children are both leaves.
    pub fn nogs(&self) -> Vec<u32> {
        self.ids()
            .filter(|&i| match self.children(i) {
                Some((l, r)) => self.is_leaf(l) && self.is_leaf(r),
                None => false,
            })
            .collect()
    }

    /// `(parent, child)` pairs where both are internal nodes.
    pub fn internal_pairs(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for p in self.ids() {
            if let Some((l, r)) = self.children(p) {
                if !self.is_leaf(l) {
                    out.push((p, l));
                }
                if !self.is_leaf(r) {
                    out.push((p, r));
                }
            }
        }
        out
    }

    pub fn sibling(&self, id: u32) -> Option<u32> {
        let p = self.parent(id);
        if p == NONE {
            return None;
        }
        let (l, r) = self.children(p)?;
        Some(if l == id { r } else { l })
    }

    pub fn rule(&self, id: u32) -> Option<(u32, u16)> {
        match self.nodes[id as usize] {
            Node::Internal { var, cut, .. } => Some((var, cut)),
            _ => None,
        }
    }

    pub fn set_rule(&mut self, id: u32, rule: (u32, u16)) {
        if let Node::Internal { var, cut, .. } = &mut self.nodes[id as usize] {
            *var = rule.0;
            *cut = rule.1;
        }
    }

    pub fn leaf_units(&self, id: u32) -> &[u32] {
        match &self.nodes[id as usize] {
            Node::Leaf { units, .. } => units,
            _ => &[],
        }
    }

    pub fn set_leaf_value(&mut self, id: u32, v: T) {
        if let Node::Leaf { value, .. } = &mut self.nodes[id as usize] {
            *value = v;
        }
    }

    pub fn leaf_value(&self, id: u32) -> T {
        match &self.nodes[id as usize] {
            Node::Leaf { value, .. } => *value,
            _ => T::zero(),
        }
    }

    fn alloc(&mut self, node: Node<T>, parent: u32, depth: u32) -> u32 {
        if let Some(id) = self.free.pop() {
            self.nodes[id as usize] = node;
            self.parent[id as usize] = parent;
            self.depth[id as usize] = depth;
            id
        } else {
            self.nodes.push(node);
            self.parent.push(parent);
            self.depth.push(depth);
            (self.nodes.len() - 1) as u32
        }
    }

    /// Splits a leaf; both children start with the parent's value.
    pub fn grow(&mut self, leaf: u32, var: u32, cut: u16, design: &BinnedDesign) -> (u32, u32) {
        let (value, units) = match std::mem::replace(&mut self.nodes[leaf as usize], Node::Free) {
            Node::Leaf { value, units } => (value, units),
            other => {
                self.nodes[leaf as usize] = other;
                panic!("grow on a non-leaf node");
            }
        };
        let col = design.column(var as usize);
        let (lu, ru): (Vec<u32>, Vec<u32>) = units.into_iter().partition(|&u| col[u as usize] <= cut);
        let d = self.depth[leaf as usize] + 1;
        let l = self.alloc(Node::Leaf { value, units: lu }, leaf, d);
        let r = self.alloc(Node::Leaf { value, units: ru }, leaf, d);
        self.nodes[leaf as usize] = Node::Internal { var, cut, left: l, right: r };
        (l, r)
    }

    /// Collapses a node whose children are leaves into a single leaf.
    pub fn prune(&mut self, id: u32, value: T) {
        let (l, r) = self.children(id).expect("prune on a leaf");
        let mut units = match std::mem::replace(&mut self.nodes[l as usize], Node::Free) {
            Node::Leaf { units, .. } => units,
            _ => panic!("prune requires leaf children"),
        };
        match std::mem::replace(&mut self.nodes[r as usize], Node::Free) {
            Node::Leaf { units: ru, .. } => units.extend(ru),
            _ => panic!("prune requires leaf children"),
        }
        self.free.push(l);
        self.free.push(r);
        self.nodes[id as usize] = Node::Leaf { value, units };
    }

    /// Leaves of the subtree rooted at `id`.
    pub fn subtree_leaves(&self, id: u32) -> Vec<u32> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            match self.nodes[n as usize] {
                Node::Internal { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
                Node::Leaf { .. } => out.push(n),
                Node::Free => {}
            }
        }
        out
    }

    /// Removes and returns the unit lists of the given leaves.
    pub fn take_units(&mut self, leaves: &[u32]) -> Vec<Vec<u32>> {
        leaves
            .iter()
            .map(|&l| match &mut self.nodes[l as usize] {
                Node::Leaf { units, .. } => std::mem::take(units),
                _ => Vec::new(),
            })
            .collect()
    }

    pub fn restore_units(&mut self, leaves: &[u32], saved: Vec<Vec<u32>>) {
        for (&l, u) in leaves.iter().zip(saved) {
            if let Node::Leaf { units, .. } = &mut self.nodes[l as usize] {
                *units = u;
            }
        }
    }

    /// Sends `units` down from `id` according to the current rules.
    pub fn route(&mut self, id: u32, units: impl Iterator<Item = u32>, design: &BinnedDesign) {
        for u in units {
            let mut n = id;
            loop {
                match &mut self.nodes[n as usize] {
                    Node::Internal { var, cut, left, right } => {
                        n = if design.bin(*var as usize, u as usize) <= *cut { *left } else { *right };
                    }
                    Node::Leaf { units, .. } => {
                        units.push(u);
                        break;
                    }
                    Node::Free => unreachable!("routing reached a freed node"),
                }
            }
        }
    }

    pub fn max_depth(&self) -> usize {
        self.ids().filter(|&i| self.is_leaf(i)).map(|i| self.depth(i)).max().unwrap_or(0)
    }

    pub fn n_leaves(&self) -> usize {
        self.ids().filter(|&i| self.is_leaf(i)).count()
    }

    /// Appends this tree to a flat forest and returns its root index.
    pub fn flatten_into(&self, grid: &CutpointGrid<T>, out: &mut Vec<FlatNode<T>>) -> u32 {
        fn rec<T: Real>(t: &Tree<T>, id: u32, grid: &CutpointGrid<T>, out: &mut Vec<FlatNode<T>>) -> u32 {
            let me = out.len() as u32;
            match *t.node(id) {
                Node::Leaf { value, .. } => {
                    out.push(FlatNode { var: NONE, value, left: NONE, right: NONE });
                }
                Node::Internal { var, cut, left, right } => {
                    out.push(FlatNode { var, value: grid.cuts[var as usize][cut as usize], left: NONE, right: NONE });
                    let l = rec(t, left, grid, out);
                    let r = rec(t, right, grid, out);
                    out[me as usize].left = l;
                    out[me as usize].right = r;
                }
                Node::Free => unreachable!(),
            }
            me
        }
        rec(self, 0, grid, out)
    }

    /// Checks structural invariants; used by debug assertions and tests.
    pub fn check(&self, n_units: usize, min_node_size: usize, weights: Option<&[T]>) -> Result<(), String> {
        let mut seen = 0usize;
        for id in self.ids() {
            match self.node(id) {
                Node::Internal { left, right, .. } => {
                    for c in [*left, *right] {
                        if matches!(self.node(c), Node::Free) || self.parent(c) != id {
                            return Err(format!("node {id} has a dangling child {c}"));
                        }
                    }
                }
                Node::Leaf { units, .. } => {
                    seen += units.len();
                    let active = match weights {
                        None => units.len(),
                        Some(w) => units.iter().filter(|&&u| w[u as usize] != T::zero()).count(),
                    };
                    if active < min_node_size {
                        return Err(format!("leaf {id} holds {active} < {min_node_size} units"));
                    }
                }
                Node::Free => {}
            }
        }
        if seen != n_units {
            return Err(format!("leaves hold {seen} units, expected {n_units}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FlatNode<T> {
    /// Split covariate, or `u32::MAX` for a leaf.
    pub var: u32,
    /// Split threshold for internal nodes, leaf value for leaves.
    pub value: T,
    pub left: u32,
    pub right: u32,
}

/// One posterior draw of the whole sum-of-trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FlatForest<T> {
    pub nodes: Vec<FlatNode<T>>,
    pub roots: Vec<u32>,
}

impl<T: Real> FlatForest<T> {
    #[inline]
    pub fn tree_value(&self, tree: usize, row: &[T]) -> T {
        let mut n = self.roots[tree] as usize;
        loop {
            let node = &self.nodes[n];
            if node.var == NONE {
                return node.value;
            }
            n = if row[node.var as usize] <= node.value { node.left } else { node.right } as usize;
        }
    }

    /// Sum over trees at one covariate row.
    pub fn predict_row(&self, row: &[T]) -> T {
        (0..self.roots.len()).map(|t| self.tree_value(t, row)).fold(T::zero(), |a, b| a + b)
    }

    pub fn n_trees(&self) -> usize {
        self.roots.len()
    }

    pub fn tree_depth(&self, tree: usize) -> usize {
        fn rec<T: Real>(f: &FlatForest<T>, n: u32) -> usize {
            let node = &f.nodes[n as usize];
            if node.var == NONE {
                0
            } else {
                1 + rec(f, node.left).max(rec(f, node.right))
            }
        }
        rec(self, self.roots[tree])
    }
}
