use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::matrix::FeatureMatrix;

#[derive(Debug, Clone, Copy)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

/// Median-split kd-tree over the rows of a feature matrix. Only row indices
/// are stored; queries report every row whose features they examine.
#[derive(Debug)]
pub struct KdTree<'a> {
    ds: &'a FeatureMatrix,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    row: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.row.cmp(&other.row))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl<'a> KdTree<'a> {
    pub fn build(ds: &'a FeatureMatrix, leaf_size: usize) -> Self {
        let leaf_size = leaf_size.max(1);
        let mut tree = KdTree {
            ds,
            order: (0..ds.n()).collect(),
            nodes: Vec::new(),
        };
        tree.build_node(0, ds.n(), leaf_size);
        tree
    }

    fn build_node(&mut self, start: usize, end: usize, leaf_size: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= leaf_size {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let ds = self.ds;
        let slice = &mut self.order[start..end];
        let m = ds.m();
        let mut dim = 0;
        let mut best = f64::NEG_INFINITY;
        for j in 0..m {
            let (lo, hi) = slice.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = ds.row(i)[j];
                (lo.min(v), hi.max(v))
            });
            if hi - lo > best {
                best = hi - lo;
                dim = j;
            }
        }
        let half = slice.len() / 2;
        slice.select_nth_unstable_by(half, |&a, &b| {
            ds.row(a)[dim].total_cmp(&ds.row(b)[dim]).then(a.cmp(&b))
        });
        // midpoint between the halves keeps both pruning bounds tight
        let right_min = ds.row(slice[half])[dim];
        let left_max = slice[..half]
            .iter()
            .map(|&i| ds.row(i)[dim])
            .fold(f64::NEG_INFINITY, f64::max);
        let value = 0.5 * (left_max + right_min);
        let mid = start + half;
        self.nodes.push(Node::Leaf { start, end }); // placeholder
        let left = self.build_node(start, mid, leaf_size);
        let right = self.build_node(mid, end, leaf_size);
        self.nodes[id] = Node::Split { dim, value, left, right };
        id
    }

    /// Pruned depth-first k-nearest-neighbour search. `examine` is called for
    /// every row whose distance is computed, in examination order. Returns
    /// the neighbours sorted by (distance, row).
    pub fn knn(&self, q: &[f64], k: usize, examine: &mut impl FnMut(usize)) -> Vec<usize> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            self.knn_node(0, q, k, &mut heap, examine);
        }
        let mut out = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| c.row).collect()
    }

    fn knn_node(
        &self,
        node: usize,
        q: &[f64],
        k: usize,
        heap: &mut BinaryHeap<Candidate>,
        examine: &mut impl FnMut(usize),
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &row in &self.order[start..end] {
                    examine(row);
                    let c = Candidate { dist: sq_dist(q, self.ds.row(row)), row };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_node(near, q, k, heap, examine);
                if heap.len() < k || diff * diff <= heap.peek().unwrap().dist {
                    self.knn_node(far, q, k, heap, examine);
                }
            }
        }
    }

    /// All rows within `radius` (inclusive) of `q`, in examination order.
    pub fn radius(&self, q: &[f64], radius: f64, examine: &mut impl FnMut(usize)) -> Vec<usize> {
        let mut out = Vec::new();
        self.radius_node(0, q, radius, radius * radius, &mut out, examine);
        out
    }

    fn radius_node(
        &self,
        node: usize,
        q: &[f64],
        r: f64,
        r2: f64,
        out: &mut Vec<usize>,
        examine: &mut impl FnMut(usize),
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &row in &self.order[start..end] {
                    examine(row);
                    if sq_dist(q, self.ds.row(row)) <= r2 {
                        out.push(row);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.radius_node(near, q, r, r2, out, examine);
                if diff.abs() <= r {
                    self.radius_node(far, q, r, r2, out, examine);
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 1,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}
