use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;

const LEAF_SIZE: usize = 16;

/// Static 3D kd-tree over a borrowed point slice. Queries are exact.
pub struct KdTree<'a> {
    points: &'a [Vector3<f64>],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    // max-heap on (distance, index): the worst candidate sits on top
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vector3<f64>]) -> Self {
        let mut tree = Self {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        if hi[axis] <= lo[axis] {
            // all points identical
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = (start + end) / 2;
        let points = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `k` nearest points to `query` ordered by (distance, index),
    /// skipping `exclude`. Returns (index, distance) pairs.
    pub fn nearest(&self, query: &Vector3<f64>, k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.nearest_rec(0, query, k, exclude, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.index, c.dist2.sqrt())).collect()
    }

    fn nearest_rec(
        &self,
        node: usize,
        query: &Vector3<f64>,
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let c = Candidate {
                        dist2: (self.points[i] - query).norm_squared(),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("non-empty heap") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let delta = query[axis] - value;
                let (near, far) = if delta < 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, query, k, exclude, heap);
                // equal distances must still be visited so that index tie-breaks stay exact
                if heap.len() < k || delta * delta <= heap.peek().expect("non-empty heap").dist2 {
                    self.nearest_rec(far, query, k, exclude, heap);
                }
            }
        }
    }

    /// Indices of all points within `radius` (inclusive) of `query`, ascending.
    pub fn within_radius(&self, query: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(query, radius, |i| out.push(i));
        out.sort_unstable();
        out
    }

    /// Number of points within `radius`, stopping early once `cap` is reached.
    pub fn count_within(&self, query: &Vector3<f64>, radius: f64, cap: usize) -> usize {
        let mut count = 0;
        if !self.nodes.is_empty() {
            self.count_rec(0, query, radius * radius, cap, &mut count);
        }
        count
    }

    fn count_rec(&self, node: usize, query: &Vector3<f64>, r2: f64, cap: usize, count: &mut usize) {
        if *count >= cap {
            return;
        }
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if (self.points[i] - query).norm_squared() <= r2 {
                        *count += 1;
                        if *count >= cap {
                            return;
                        }
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let delta = query[axis] - value;
                let (near, far) = if delta < 0.0 { (left, right) } else { (right, left) };
                self.count_rec(near, query, r2, cap, count);
                if delta * delta <= r2 {
                    self.count_rec(far, query, r2, cap, count);
                }
            }
        }
    }

    pub fn for_each_within(&self, query: &Vector3<f64>, radius: f64, mut f: impl FnMut(usize)) {
        if !self.nodes.is_empty() {
            self.radius_rec(0, query, radius * radius, &mut f);
        }
    }

    fn radius_rec(&self, node: usize, query: &Vector3<f64>, r2: f64, f: &mut impl FnMut(usize)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if (self.points[i] - query).norm_squared() <= r2 {
                        f(i);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let delta = query[axis] - value;
                let (near, far) = if delta < 0.0 { (left, right) } else { (right, left) };
                self.radius_rec(near, query, r2, f);
                if delta * delta <= r2 {
                    self.radius_rec(far, query, r2, f);
                }
            }
        }
    }
}
