//! Single-scan BIRCH clustering of entity embeddings and the kernel-weighted
//! semantic incidence built from the resulting centroids.
//!
//! A point joins the closest leaf subcluster only if the merged subcluster
//! keeps both its RMS radius and its largest member-to-centroid distance
//! within the threshold `T`. The second condition is what bounds every
//! intra-cluster pair by `2T`; it is tracked with a cheap upper bound that is
//! recomputed exactly from the members only when the bound alone would reject.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{squared_distance, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::hypergraph::SparseMatrix;

/// `(n, LS, SS)` summary of a set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringFeature {
    pub n: usize,
    pub linear_sum: Vec<f64>,
    pub square_sum: f64,
}

impl ClusteringFeature {
    pub fn from_point(x: &[f64]) -> Self {
        Self {
            n: 1,
            linear_sum: x.to_vec(),
            square_sum: x.iter().map(|v| v * v).sum(),
        }
    }

    pub fn absorb(&mut self, other: &ClusteringFeature) {
        self.n += other.n;
        self.square_sum += other.square_sum;
        for (a, b) in self.linear_sum.iter_mut().zip(&other.linear_sum) {
            *a += b;
        }
    }

    pub fn merged(&self, other: &ClusteringFeature) -> ClusteringFeature {
        let mut out = self.clone();
        out.absorb(other);
        out
    }

    pub fn centroid(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.linear_sum.iter().map(|v| v / n).collect()
    }

    /// Root-mean-square distance of the points to the centroid, clamped at 0
    /// against cancellation.
    pub fn radius(&self) -> f64 {
        let n = self.n as f64;
        let centroid_sq: f64 = self.linear_sum.iter().map(|v| (v / n) * (v / n)).sum();
        (self.square_sum / n - centroid_sq).max(0.0).sqrt()
    }
}

#[derive(Debug, Clone)]
struct Entry {
    cf: ClusteringFeature,
    child: Option<usize>,
    /// Leaf subclusters only: member ids and an upper bound on the largest
    /// member distance to the centroid.
    members: Vec<usize>,
    bound: f64,
}

#[derive(Debug, Clone)]
struct Node {
    leaf: bool,
    entries: Vec<Entry>,
}

/// A finished leaf subcluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafCluster {
    pub centroid: Vec<f64>,
    /// Member entity ids, ascending.
    pub members: Vec<usize>,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct CfTree {
    threshold: f64,
    branching: usize,
    nodes: Vec<Node>,
    root: usize,
}

impl CfTree {
    pub fn new(threshold: f64, branching: usize) -> Result<Self> {
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(Error::Config(format!(
                "BIRCH threshold must be > 0, got {threshold}"
            )));
        }
        if branching < 2 {
            return Err(Error::Config(format!(
                "BIRCH branching must be >= 2, got {branching}"
            )));
        }
        Ok(Self {
            threshold,
            branching,
            nodes: vec![Node {
                leaf: true,
                entries: Vec::new(),
            }],
            root: 0,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn depth(&self) -> usize {
        let mut depth = 1;
        let mut node = self.root;
        while let Some(child) = self.nodes[node].entries.first().and_then(|e| e.child) {
            depth += 1;
            node = child;
        }
        depth
    }

    /// Inserts one point. `lookup` resolves member ids of earlier points to
    /// their vectors for the exact member-distance check.
    pub fn insert<'a>(&mut self, id: usize, x: &[f64], lookup: &dyn Fn(usize) -> &'a [f64]) {
        let point = ClusteringFeature::from_point(x);
        if let Some(sibling) = self.insert_into(self.root, id, x, &point, lookup) {
            let old_root = self.root;
            let entries = [old_root, sibling]
                .iter()
                .map(|&child| Entry {
                    cf: self.summary(child),
                    child: Some(child),
                    members: Vec::new(),
                    bound: 0.0,
                })
                .collect();
            self.nodes.push(Node {
                leaf: false,
                entries,
            });
            self.root = self.nodes.len() - 1;
        }
    }

    fn summary(&self, node: usize) -> ClusteringFeature {
        let entries = &self.nodes[node].entries;
        let mut cf = entries[0].cf.clone();
        for e in &entries[1..] {
            cf.absorb(&e.cf);
        }
        cf
    }

    fn closest_entry(&self, node: usize, x: &[f64]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.nodes[node].entries.iter().enumerate() {
            let d = squared_distance(&e.cf.centroid(), x);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|b| b.0)
    }

    fn insert_into<'a>(
        &mut self,
        node: usize,
        id: usize,
        x: &[f64],
        point: &ClusteringFeature,
        lookup: &dyn Fn(usize) -> &'a [f64],
    ) -> Option<usize> {
        let closest = self.closest_entry(node, x);
        if self.nodes[node].leaf {
            if let Some(i) = closest {
                if let Some(bound) = self.try_absorb(&self.nodes[node].entries[i], x, point, lookup)
                {
                    let entry = &mut self.nodes[node].entries[i];
                    entry.cf.absorb(point);
                    entry.members.push(id);
                    entry.bound = bound;
                    return None;
                }
            }
            self.nodes[node].entries.push(Entry {
                cf: point.clone(),
                child: None,
                members: vec![id],
                bound: 0.0,
            });
        } else {
            let i = closest.expect("non-leaf nodes always have entries");
            let child = self.nodes[node].entries[i]
                .child
                .expect("non-leaf entry has a child");
            match self.insert_into(child, id, x, point, lookup) {
                None => self.nodes[node].entries[i].cf.absorb(point),
                Some(sibling) => {
                    self.nodes[node].entries[i].cf = self.summary(child);
                    let cf = self.summary(sibling);
                    self.nodes[node].entries.push(Entry {
                        cf,
                        child: Some(sibling),
                        members: Vec::new(),
                        bound: 0.0,
                    });
                }
            }
        }
        if self.nodes[node].entries.len() > self.branching {
            Some(self.split(node))
        } else {
            None
        }
    }

    /// Returns the new member-distance bound if `x` may join `entry`.
    fn try_absorb<'a>(
        &self,
        entry: &Entry,
        x: &[f64],
        point: &ClusteringFeature,
        lookup: &dyn Fn(usize) -> &'a [f64],
    ) -> Option<f64> {
        let merged = entry.cf.merged(point);
        if merged.radius() > self.threshold {
            return None;
        }
        let old_centroid = entry.cf.centroid();
        let new_centroid = merged.centroid();
        let shift = squared_distance(&old_centroid, &new_centroid).sqrt();
        let newcomer = squared_distance(x, &new_centroid).sqrt();
        let bound = (entry.bound + shift).max(newcomer);
        if bound <= self.threshold {
            return Some(bound);
        }
        let exact = entry
            .members
            .iter()
            .map(|&m| squared_distance(lookup(m), &new_centroid).sqrt())
            .fold(newcomer, f64::max);
        (exact <= self.threshold).then_some(exact)
    }

    /// Splits an overfull node around its farthest pair of entries and returns
    /// the index of the new sibling.
    fn split(&mut self, node: usize) -> usize {
        let entries = std::mem::take(&mut self.nodes[node].entries);
        let centroids: Vec<Vec<f64>> = entries.iter().map(|e| e.cf.centroid()).collect();
        let (mut seed_a, mut seed_b, mut far) = (0, 1, -1.0);
        for i in 0..centroids.len() {
            for j in i + 1..centroids.len() {
                let d = squared_distance(&centroids[i], &centroids[j]);
                if d > far {
                    (seed_a, seed_b, far) = (i, j, d);
                }
            }
        }
        let (mut keep, mut moved) = (Vec::new(), Vec::new());
        for (i, entry) in entries.into_iter().enumerate() {
            let to_a = squared_distance(&centroids[i], &centroids[seed_a]);
            let to_b = squared_distance(&centroids[i], &centroids[seed_b]);
            if i == seed_a || (i != seed_b && to_a <= to_b) {
                keep.push(entry);
            } else {
                moved.push(entry);
            }
        }
        let leaf = self.nodes[node].leaf;
        self.nodes[node].entries = keep;
        self.nodes.push(Node {
            leaf,
            entries: moved,
        });
        self.nodes.len() - 1
    }

    /// Leaf subclusters ordered by their smallest member id.
    pub fn clusters(&self) -> Vec<LeafCluster> {
        let mut out: Vec<LeafCluster> = self
            .nodes
            .iter()
            .filter(|n| n.leaf)
            .flat_map(|n| n.entries.iter())
            .map(|e| {
                let mut members = e.members.clone();
                members.sort_unstable();
                LeafCluster {
                    centroid: e.cf.centroid(),
                    members,
                    radius: e.cf.radius(),
                }
            })
            .collect();
        out.sort_by_key(|c| c.members[0]);
        out
    }
}

/// Clusters `points` in ascending id order. Zero vectors are skipped.
pub fn birch_fit(points: &[(usize, &[f64])], threshold: f64, branching: usize) -> Result<CfTree> {
    let mut tree = CfTree::new(threshold, branching)?;
    let dim = points.first().map_or(0, |p| p.1.len());
    if let Some(bad) = points.iter().find(|p| p.1.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.1.len(),
        });
    }
    let mut order: Vec<&(usize, &[f64])> = points
        .iter()
        .filter(|p| p.1.iter().any(|&v| v != 0.0))
        .collect();
    order.sort_by_key(|p| p.0);
    let by_id: HashMap<usize, &[f64]> = order.iter().map(|p| (p.0, p.1)).collect();
    let lookup = |id: usize| by_id[&id];
    for &&(id, x) in &order {
        tree.insert(id, x, &lookup);
    }
    Ok(tree)
}

/// Clusters the non-zero rows of an embedding matrix, using row index as id.
pub fn cluster_embeddings(
    vectors: &EmbeddingMatrix,
    threshold: f64,
    branching: usize,
) -> Result<Vec<LeafCluster>> {
    let points: Vec<(usize, &[f64])> = (0..vectors.len()).map(|i| (i, vectors.row(i))).collect();
    Ok(birch_fit(&points, threshold, branching)?.clusters())
}

/// Exact nearest-neighbour search over the non-zero rows of an embedding
/// matrix.
///
/// Rows are ranked by `||x||^2 - 2 x.c`, which differs from the squared
/// distance to `c` by a constant. A row sharing no non-zero coordinate with
/// `c` has `x.c = 0` exactly, so its key is its own squared norm; those rows
/// are streamed from one list presorted by `(||x||^2, id)` and only rows
/// reached through the coordinate lists of `c` need a dot product.
#[derive(Debug, Clone)]
pub struct NeighbourIndex<'a> {
    vectors: &'a EmbeddingMatrix,
    sq_norms: Vec<f64>,
    /// Non-zero rows ordered by `(||x||^2, id)`.
    by_norm: Vec<usize>,
    /// For each coordinate, the rows with a non-zero value there.
    postings: Vec<Vec<(u32, f64)>>,
}

impl<'a> NeighbourIndex<'a> {
    pub fn new(vectors: &'a EmbeddingMatrix) -> Self {
        let mut postings = vec![Vec::new(); vectors.dim()];
        let mut sq_norms = vec![0.0; vectors.len()];
        let mut by_norm = Vec::new();
        for i in 0..vectors.len() {
            if vectors.is_zero(i) {
                continue;
            }
            let row = vectors.row(i);
            sq_norms[i] = row.iter().map(|x| x * x).sum();
            by_norm.push(i);
            for (j, &x) in row.iter().enumerate() {
                if x != 0.0 {
                    postings[j].push((i as u32, x));
                }
            }
        }
        by_norm.sort_by(|&a, &b| sq_norms[a].total_cmp(&sq_norms[b]).then(a.cmp(&b)));
        Self {
            vectors,
            sq_norms,
            by_norm,
            postings,
        }
    }

    /// The `min(depth, |eligible|)` rows closest to `centroid`, as
    /// `(id, squared distance)` sorted by distance then id.
    pub fn nearest(&self, centroid: &[f64], depth: usize) -> Vec<(usize, f64)> {
        self.nearest_with(&mut self.scratch(), centroid, depth)
    }

    /// Reusable buffers for [`NeighbourIndex::nearest_with`].
    pub fn scratch(&self) -> SearchScratch {
        SearchScratch {
            dots: vec![0.0; self.vectors.len()],
            stamp: vec![0; self.vectors.len()],
            generation: 0,
            touched: Vec::new(),
        }
    }

    pub fn nearest_with(
        &self,
        scratch: &mut SearchScratch,
        centroid: &[f64],
        depth: usize,
    ) -> Vec<(usize, f64)> {
        scratch.generation += 1;
        let generation = scratch.generation;
        scratch.touched.clear();
        for (j, &c) in centroid.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for &(i, x) in &self.postings[j] {
                let i = i as usize;
                if scratch.stamp[i] != generation {
                    scratch.stamp[i] = generation;
                    scratch.dots[i] = 0.0;
                    scratch.touched.push(i);
                }
                scratch.dots[i] += x * c;
            }
        }
        let order = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        let mut touched: Vec<(usize, f64)> = scratch
            .touched
            .iter()
            .map(|&i| (i, self.sq_norms[i] - 2.0 * scratch.dots[i]))
            .collect();
        // only the best `depth` touched rows can reach the output
        if depth == 0 {
            return Vec::new();
        }
        if touched.len() > depth {
            touched.select_nth_unstable_by(depth - 1, order);
            touched.truncate(depth);
        }
        touched.sort_by(order);

        let stamp = &scratch.stamp;
        let mut untouched = self
            .by_norm
            .iter()
            .filter(|&&i| stamp[i] != generation)
            .map(|&i| (i, self.sq_norms[i]))
            .peekable();
        let mut touched = touched.into_iter().peekable();
        let mut out = Vec::with_capacity(depth.min(self.by_norm.len()));
        while out.len() < depth {
            let next = match (touched.peek(), untouched.peek()) {
                (Some(a), Some(b)) if order(a, b).is_le() => touched.next(),
                (Some(_), None) => touched.next(),
                (_, Some(_)) => untouched.next(),
                (None, None) => break,
            };
            let (i, _) = next.expect("peeked");
            out.push((i, squared_distance(self.vectors.row(i), centroid)));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SearchScratch {
    dots: Vec<f64>,
    /// Rows whose `dots` entry belongs to the current search.
    stamp: Vec<u32>,
    generation: u32,
    touched: Vec<usize>,
}

/// The `min(depth, |eligible|)` rows closest to `centroid`, as
/// `(id, squared distance)` sorted by distance then id. Zero rows are not
/// eligible.
pub fn nearest_members(
    centroid: &[f64],
    vectors: &EmbeddingMatrix,
    depth: usize,
) -> Vec<(usize, f64)> {
    NeighbourIndex::new(vectors).nearest(centroid, depth)
}

/// `|V| x K` matrix with entry `exp(-||x_i - c_k||^2 / tau)` for the `depth`
/// nearest entities of each centroid and zero elsewhere.
pub fn build_semantic_incidence(
    clusters: &[LeafCluster],
    vectors: &EmbeddingMatrix,
    depth: usize,
    tau: f64,
) -> Result<SparseMatrix> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!(
            "kernel temperature must be > 0, got {tau}"
        )));
    }
    if depth == 0 {
        return Err(Error::Config("neighbourhood size D must be >= 1".into()));
    }
    let neighbours = NeighbourIndex::new(vectors);
    let columns: Vec<Vec<(usize, usize, f64)>> = clusters
        .par_iter()
        .enumerate()
        .map_init(
            || neighbours.scratch(),
            |scratch, (k, cluster)| {
                neighbours
                    .nearest_with(scratch, &cluster.centroid, depth)
                    .into_iter()
                    .map(|(i, d2)| (i, k, (-d2 / tau).exp()))
                    .filter(|t| t.2 > 0.0)
                    .collect()
            },
        )
        .collect();
    SparseMatrix::from_triplets(vectors.len(), clusters.len(), columns.concat())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit_1d(values: &[f64], t: f64, b: usize) -> Vec<LeafCluster> {
        let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        let points: Vec<(usize, &[f64])> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (i, r.as_slice()))
            .collect();
        birch_fit(&points, t, b).unwrap().clusters()
    }

    #[test]
    fn coincident_points_form_one_cluster() {
        let clusters = fit_1d(&[3.0, 3.0], 0.01, 2);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].centroid, vec![3.0]);
        assert_eq!(clusters[0].radius, 0.0);
    }

    #[test]
    fn distant_points_split() {
        let clusters = fit_1d(&[1.0, 10.0], 0.5, 2);
        assert_eq!(clusters.len(), 2);
        assert_eq!(clusters[0].centroid, vec![1.0]);
        assert_eq!(clusters[1].centroid, vec![10.0]);
    }

    #[test]
    fn hand_traced_insertion() {
        // 1 opens a subcluster; 1.1 merges (radius 0.05 <= 0.2); 5.0 is
        // 3.95 from the centroid and opens a second one.
        let clusters = fit_1d(&[1.0, 1.1, 5.0], 0.2, 3);
        assert_eq!(clusters.len(), 2);
        assert_eq!(clusters[0].members, vec![0, 1]);
        assert!((clusters[0].centroid[0] - 1.05).abs() < 1e-15);
        assert!((clusters[0].radius - 0.05).abs() < 1e-12);
        assert_eq!(clusters[1].members, vec![2]);
        assert_eq!(clusters[1].centroid, vec![5.0]);
    }

    #[test]
    fn node_splits_keep_every_point() {
        let values: Vec<f64> = (1..=40).map(|i| i as f64).collect();
        let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        let points: Vec<(usize, &[f64])> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (i, r.as_slice()))
            .collect();
        let tree = birch_fit(&points, 0.1, 3).unwrap();
        assert!(tree.depth() > 1);
        let clusters = tree.clusters();
        assert_eq!(clusters.len(), 40);
        let mut all: Vec<usize> = clusters.iter().flat_map(|c| c.members.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn empty_input_gives_no_clusters() {
        assert!(birch_fit(&[], 0.5, 50).unwrap().clusters().is_empty());
        assert!(CfTree::new(0.0, 50).is_err());
        assert!(CfTree::new(0.5, 1).is_err());
    }

    #[test]
    fn nearest_members_hand_placed() {
        let m = EmbeddingMatrix::from_rows(
            2,
            vec![
                vec![0.1, 0.0],
                vec![3.0, 4.0],
                vec![1.0, 0.0],
                vec![0.0, -2.0],
                vec![0.5, 0.5],
                vec![0.0, 0.0],
            ],
        )
        .unwrap();
        let ids: Vec<usize> = nearest_members(&[0.2, 0.1], &m, 3)
            .into_iter()
            .map(|p| p.0)
            .collect();
        // squared distances: 0.02, 22.9, 0.65, 4.45, 0.25; the zero row is ineligible
        assert_eq!(ids, vec![0, 4, 2]);
        assert_eq!(nearest_members(&[0.2, 0.1], &m, 1)[0].0, 0);
        assert_eq!(nearest_members(&[0.2, 0.1], &m, 99).len(), 5);
    }

    #[test]
    fn nearest_members_breaks_ties_by_id() {
        let m = EmbeddingMatrix::from_rows(1, vec![vec![1.0], vec![-1.0], vec![1.0]]).unwrap();
        let ids: Vec<usize> = nearest_members(&[0.0], &m, 2)
            .into_iter()
            .map(|p| p.0)
            .collect();
        assert_eq!(ids, vec![0, 1]);
    }

    #[test]
    fn kernel_weights() {
        let tau: f64 = 0.7;
        let m = EmbeddingMatrix::from_rows(1, vec![vec![1.0], vec![1.0 + tau.sqrt()], vec![6.0]])
            .unwrap();
        let cluster = LeafCluster {
            centroid: vec![1.0],
            members: vec![0],
            radius: 0.0,
        };
        let h = build_semantic_incidence(&[cluster], &m, 2, tau).unwrap();
        assert_eq!(h.get(0, 0), 1.0);
        assert!((h.get(1, 0) - (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(h.get(2, 0), 0.0);
    }
}
