//! Sample spaces, dyadic partition nodes and observation counting.
//!
//! A node is stored as one heap index per dimension: `1` is the whole
//! dimension, and the heap index `h` at depth `k` has children `2h` and
//! `2h + 1`. A binary table dimension is a dyadic dimension with resolution
//! one, so heap `1` is "intact", `2` is "fixed at 1" and `3` is "fixed at 2".
//! The per-dimension fields are packed into a `u128`, which is both the node
//! and its canonical key.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2: f64 = std::f64::consts::LN_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceKind {
    ContinuousRectangle,
    BinaryTable,
}

/// Canonical, order-independent key of a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeKey(pub u128);

impl fmt::Display for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl Serialize for NodeKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for NodeKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        u128::from_str_radix(&s, 16)
            .map(NodeKey)
            .map_err(serde::de::Error::custom)
    }
}

/// A region of the sample space: the product of one dyadic interval (or
/// cell subset) per dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Node(u128);

impl Node {
    pub fn key(self) -> NodeKey {
        NodeKey(self.0)
    }

    pub fn from_key(key: NodeKey) -> Node {
        Node(key.0)
    }
}

/// Per-dimension state of a table node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trit {
    Intact,
    FixedAt1,
    FixedAt2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSpace {
    kind: SpaceKind,
    dims: usize,
    /// Per-dimension `[lo, hi)`; empty for tables.
    bounds: Vec<(f64, f64)>,
    /// Maximum depth of any single dimension.
    resolution: u32,
}

impl SampleSpace {
    /// The `2^dims` binary contingency table.
    pub fn table(dims: usize) -> Result<Self> {
        Self::build(SpaceKind::BinaryTable, dims, Vec::new(), 1)
    }

    /// A bounded rectangle, each dimension resolvable to `resolution` halvings.
    pub fn rectangle(bounds: Vec<(f64, f64)>, resolution: u32) -> Result<Self> {
        for (d, (lo, hi)) in bounds.iter().enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::param(format!(
                    "dimension {d}: bounds [{lo}, {hi}) are empty or not finite"
                )));
            }
        }
        if resolution == 0 {
            return Err(Error::param("continuous resolution must be at least 1"));
        }
        Self::build(SpaceKind::ContinuousRectangle, bounds.len(), bounds, resolution)
    }

    /// Rectangle spanning the pooled data range; the upper bound is moved one
    /// representable step past the maximum so every point is interior.
    pub fn rectangle_from_data(datasets: &[&Dataset], resolution: u32) -> Result<Self> {
        let dims = datasets
            .first()
            .map(|d| d.dims())
            .ok_or_else(|| Error::input("no datasets to infer bounds from"))?;
        let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); dims];
        for data in datasets {
            if data.dims() != dims {
                return Err(Error::input("datasets disagree on dimension"));
            }
            for point in data.points() {
                for (b, &x) in bounds.iter_mut().zip(point) {
                    b.0 = b.0.min(x);
                    b.1 = b.1.max(x);
                }
            }
        }
        if bounds.iter().any(|b| b.0 > b.1) {
            return Err(Error::input("cannot infer bounds from empty data"));
        }
        let bounds = bounds.into_iter().map(|(lo, hi)| (lo, hi.next_up())).collect();
        Self::rectangle(bounds, resolution)
    }

    fn build(kind: SpaceKind, dims: usize, bounds: Vec<(f64, f64)>, resolution: u32) -> Result<Self> {
        if dims == 0 {
            return Err(Error::param("a sample space needs at least one dimension"));
        }
        if resolution > 31 {
            return Err(Error::param("per-dimension resolution is capped at 31"));
        }
        let width = (resolution + 1) as usize;
        if dims * width > 128 {
            return Err(Error::param(format!(
                "{dims} dimensions at resolution {resolution} do not fit a 128-bit node key"
            )));
        }
        Ok(SampleSpace {
            kind,
            dims,
            bounds,
            resolution,
        })
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    #[inline]
    fn width(&self) -> u32 {
        self.resolution + 1
    }

    #[inline]
    fn mask(&self) -> u128 {
        (1u128 << self.width()) - 1
    }

    pub fn root(&self) -> Node {
        let mut packed = 0u128;
        for d in 0..self.dims {
            packed |= 1u128 << (d as u32 * self.width());
        }
        Node(packed)
    }

    /// Heap index of dimension `dim` (`1` = whole range).
    #[inline]
    pub fn heap(&self, node: Node, dim: usize) -> u32 {
        ((node.0 >> (dim as u32 * self.width())) & self.mask()) as u32
    }

    #[inline]
    pub fn depth(&self, node: Node, dim: usize) -> u32 {
        31 - self.heap(node, dim).leading_zeros()
    }

    /// Offset of the node's interval within its depth, `0..2^depth`.
    pub fn index(&self, node: Node, dim: usize) -> u32 {
        let h = self.heap(node, dim);
        h - (1 << self.depth(node, dim))
    }

    pub fn total_depth(&self, node: Node) -> u32 {
        (0..self.dims).map(|d| self.depth(node, d)).sum()
    }

    pub fn trit(&self, node: Node, dim: usize) -> Trit {
        match self.heap(node, dim) {
            1 => Trit::Intact,
            2 => Trit::FixedAt1,
            _ => Trit::FixedAt2,
        }
    }

    /// Whether `node` is a well-formed node of this space.
    pub fn is_valid(&self, node: Node) -> bool {
        let used = self.dims as u32 * self.width();
        if used < 128 && node.0 >> used != 0 {
            return false;
        }
        (0..self.dims).all(|d| {
            let h = self.heap(node, d);
            h >= 1 && 31 - h.leading_zeros() <= self.resolution
        })
    }

    #[inline]
    pub fn is_splittable(&self, node: Node, dim: usize) -> bool {
        dim < self.dims && self.depth(node, dim) < self.resolution
    }

    /// M(A): the number of dimensions that can still be halved.
    pub fn num_splits(&self, node: Node) -> usize {
        (0..self.dims).filter(|&d| self.is_splittable(node, d)).count()
    }

    pub fn splittable_dims(&self, node: Node) -> Vec<usize> {
        (0..self.dims).filter(|&d| self.is_splittable(node, d)).collect()
    }

    pub fn is_atom(&self, node: Node) -> bool {
        self.num_splits(node) == 0
    }

    /// The lower and upper halves of `node` along `dim`.
    pub fn children(&self, node: Node, dim: usize) -> Result<(Node, Node)> {
        if !self.is_splittable(node, dim) {
            return Err(Error::param(format!(
                "dimension {dim} of {} cannot be split",
                self.describe(node)
            )));
        }
        Ok(self.children_unchecked(node, dim))
    }

    #[inline]
    pub(crate) fn children_unchecked(&self, node: Node, dim: usize) -> (Node, Node) {
        let shift = dim as u32 * self.width();
        let h = (node.0 >> shift) & self.mask();
        let cleared = node.0 & !(self.mask() << shift);
        let left = cleared | ((h << 1) << shift);
        let right = cleared | (((h << 1) | 1) << shift);
        (Node(left), Node(right))
    }

    /// `ln(μ(A)/μ(Ω))`.
    pub fn log_relative_measure(&self, node: Node) -> f64 {
        -LN_2 * self.total_depth(node) as f64
    }

    /// `ln μ(Ω)` in natural units: counting measure for tables, Lebesgue for rectangles.
    pub fn log_natural_measure(&self) -> f64 {
        match self.kind {
            SpaceKind::BinaryTable => LN_2 * self.dims as f64,
            SpaceKind::ContinuousRectangle => {
                self.bounds.iter().map(|(lo, hi)| (hi - lo).ln()).sum()
            }
        }
    }

    /// Leaf heap index of a coordinate, validating membership in Ω.
    pub(crate) fn leaf_of(&self, dim: usize, x: f64) -> Option<u32> {
        let r = self.resolution;
        let bin = match self.kind {
            SpaceKind::BinaryTable => {
                if x == 0.0 {
                    0
                } else if x == 1.0 {
                    1
                } else {
                    return None;
                }
            }
            SpaceKind::ContinuousRectangle => {
                let (lo, hi) = self.bounds[dim];
                if !(x >= lo && x <= hi) {
                    return None;
                }
                let cells = (1u64 << r) as f64;
                let t = ((x - lo) / (hi - lo) * cells).floor();
                (t.max(0.0) as u64).min((1u64 << r) - 1) as u32
            }
        };
        Some((1u32 << r) | bin)
    }

    /// Whether a point, given as per-dimension leaf heap indices, lies in `node`.
    #[inline]
    pub(crate) fn contains_leaf(&self, node: Node, leaf: &[u32]) -> bool {
        leaf.iter().enumerate().all(|(d, &l)| {
            let k = self.depth(node, d);
            l >> (self.resolution - k) == self.heap(node, d)
        })
    }

    /// Resolve a dataset against this space.
    pub fn bin(&self, data: &Dataset) -> Result<BinnedData> {
        if data.dims() != self.dims {
            return Err(Error::input(format!(
                "dataset has {} dimensions, space has {}",
                data.dims(),
                self.dims
            )));
        }
        let mut leaves = Vec::with_capacity(data.len() * self.dims);
        for (row, point) in data.points().enumerate() {
            for (d, &x) in point.iter().enumerate() {
                let leaf = self.leaf_of(d, x).ok_or_else(|| {
                    Error::input(format!(
                        "observation {} column {}: value {x} lies outside the sample space",
                        row + 1,
                        d + 1
                    ))
                })?;
                leaves.push(leaf);
            }
        }
        Ok(BinnedData {
            dims: self.dims,
            leaves,
        })
    }

    /// `n(A)` for a binned dataset.
    pub fn count(&self, node: Node, data: &BinnedData) -> u32 {
        data.leaves()
            .filter(|leaf| self.contains_leaf(node, leaf))
            .count() as u32
    }

    /// `(n1(A), n2(A))`.
    pub fn count_pair(&self, node: Node, data1: &BinnedData, data2: &BinnedData) -> (u32, u32) {
        (self.count(node, data1), self.count(node, data2))
    }

    /// Interval `[lo, hi)` covered by `node` along `dim` (continuous spaces).
    pub fn interval(&self, node: Node, dim: usize) -> (f64, f64) {
        let (lo, hi) = self.bounds[dim];
        let k = self.depth(node, dim);
        let i = self.index(node, dim) as f64;
        let step = (hi - lo) / (1u64 << k) as f64;
        (lo + i * step, lo + (i + 1.0) * step)
    }

    /// Human-readable region, e.g. `[0,0.5)x[0,1)` or `(*,1,2)`.
    pub fn describe(&self, node: Node) -> String {
        match self.kind {
            SpaceKind::BinaryTable => {
                let cells: Vec<&str> = (0..self.dims)
                    .map(|d| match self.trit(node, d) {
                        Trit::Intact => "*",
                        Trit::FixedAt1 => "1",
                        Trit::FixedAt2 => "2",
                    })
                    .collect();
                format!("({})", cells.join(","))
            }
            SpaceKind::ContinuousRectangle => (0..self.dims)
                .map(|d| {
                    let (a, b) = self.interval(node, d);
                    format!("[{a},{b})")
                })
                .collect::<Vec<_>>()
                .join("x"),
        }
    }

    /// Every node reachable from the root, in breadth-first order.
    pub fn enumerate_nodes(&self, limit: usize) -> Result<Vec<Node>> {
        use std::collections::{HashSet, VecDeque};
        let mut seen = HashSet::new();
        let mut order = Vec::new();
        let mut queue = VecDeque::from([self.root()]);
        seen.insert(self.root());
        while let Some(node) = queue.pop_front() {
            order.push(node);
            if order.len() > limit {
                return Err(Error::ResourceLimit {
                    what: "node enumeration".into(),
                    limit,
                });
            }
            for d in self.splittable_dims(node) {
                let (l, r) = self.children_unchecked(node, d);
                for c in [l, r] {
                    if seen.insert(c) {
                        queue.push_back(c);
                    }
                }
            }
        }
        Ok(order)
    }
}

/// Observations in a `dims`-dimensional space, stored row-major.
///
/// Table observations use `0` for level 1 and `1` for level 2.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dims: usize,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(dims: usize) -> Self {
        Dataset {
            dims,
            values: Vec::new(),
        }
    }

    pub fn from_rows(dims: usize, rows: impl IntoIterator<Item = Vec<f64>>) -> Result<Self> {
        let mut data = Dataset::new(dims);
        for row in rows {
            data.push(&row)?;
        }
        Ok(data)
    }

    /// One-dimensional dataset.
    pub fn from_values(values: &[f64]) -> Self {
        Dataset {
            dims: 1,
            values: values.to_vec(),
        }
    }

    /// Table dataset from cell bit-vectors.
    pub fn from_cells(dims: usize, cells: &[Vec<u8>]) -> Result<Self> {
        Dataset::from_rows(
            dims,
            cells
                .iter()
                .map(|c| c.iter().map(|&b| f64::from(b)).collect::<Vec<_>>()),
        )
    }

    pub fn push(&mut self, point: &[f64]) -> Result<()> {
        if point.len() != self.dims {
            return Err(Error::input(format!(
                "point has {} coordinates, expected {}",
                point.len(),
                self.dims
            )));
        }
        self.values.extend_from_slice(point);
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        if self.dims == 0 {
            0
        } else {
            self.values.len() / self.dims
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dims.max(1))
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.dims..(i + 1) * self.dims]
    }

    /// Coordinates of one dimension.
    pub fn column(&self, dim: usize) -> Vec<f64> {
        self.points().map(|p| p[dim]).collect()
    }

    /// Concatenation of two datasets.
    pub fn pooled(&self, other: &Dataset) -> Result<Dataset> {
        if self.dims != other.dims {
            return Err(Error::input("cannot pool datasets of different dimension"));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Ok(Dataset {
            dims: self.dims,
            values,
        })
    }

    /// Reorder dimensions: output dimension `i` is input dimension `perm[i]`.
    pub fn permute_dims(&self, perm: &[usize]) -> Dataset {
        let values = self
            .points()
            .flat_map(|p| perm.iter().map(move |&d| p[d]))
            .collect();
        Dataset {
            dims: self.dims,
            values,
        }
    }
}

/// A dataset resolved to leaf cells of a particular space.
#[derive(Clone, Debug, PartialEq)]
pub struct BinnedData {
    dims: usize,
    leaves: Vec<u32>,
}

impl BinnedData {
    pub fn len(&self) -> usize {
        self.leaves.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn leaf(&self, i: usize) -> &[u32] {
        &self.leaves[i * self.dims..(i + 1) * self.dims]
    }

    pub fn leaves(&self) -> impl Iterator<Item = &[u32]> + '_ {
        self.leaves.chunks_exact(self.dims)
    }

    /// Concatenation; indices of `other` follow those of `self`.
    pub fn pooled(&self, other: &BinnedData) -> BinnedData {
        let mut leaves = self.leaves.clone();
        leaves.extend_from_slice(&other.leaves);
        BinnedData {
            dims: self.dims,
            leaves,
        }
    }
}
