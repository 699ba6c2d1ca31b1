//! Static 3-d tree for k-nearest-neighbour distances.

use std::collections::BinaryHeap;

use crate::Vec3;

const LEAF: usize = 12;

struct Node {
    lo: usize,
    hi: usize,
    axis: usize,
    split: f64,
    children: Option<(usize, usize)>,
}

pub struct KdTree<'a> {
    points: &'a [Vec3],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(PartialEq)]
struct Candidate(f64, usize);

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        let mut tree = KdTree {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    fn build(&mut self, lo: usize, hi: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node {
            lo,
            hi,
            axis: 0,
            split: 0.0,
            children: None,
        });
        if hi - lo <= LEAF {
            return id;
        }
        let (mut min, mut max) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for &k in &self.order[lo..hi] {
            min = min.inf(&self.points[k]);
            max = max.sup(&self.points[k]);
        }
        let axis = (max - min).imax();
        let mid = (lo + hi) / 2;
        let pts = self.points;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        let split = pts[self.order[mid]][axis];
        let left = self.build(lo, mid);
        let right = self.build(mid, hi);
        let node = &mut self.nodes[id];
        node.axis = axis;
        node.split = split;
        node.children = Some((left, right));
        id
    }

    /// Squared distances from point `query_index` to its `k` nearest other
    /// points, ascending.
    pub fn knn_sq_excluding(&self, query_index: usize, k: usize) -> Vec<f64> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if !self.nodes.is_empty() {
            self.search(0, &self.points[query_index], Some(query_index), k, &mut heap);
        }
        let mut out: Vec<f64> = heap.into_iter().map(|c| c.0).collect();
        out.sort_by(f64::total_cmp);
        out
    }

    fn search(&self, id: usize, q: &Vec3, skip: Option<usize>, k: usize, heap: &mut BinaryHeap<Candidate>) {
        let node = &self.nodes[id];
        match node.children {
            None => {
                for &p in &self.order[node.lo..node.hi] {
                    if Some(p) == skip {
                        continue;
                    }
                    let d = (self.points[p] - q).norm_squared();
                    if heap.len() < k {
                        heap.push(Candidate(d, p));
                    } else if d < heap.peek().map_or(f64::INFINITY, |c| c.0) {
                        heap.pop();
                        heap.push(Candidate(d, p));
                    }
                }
            }
            Some((left, right)) => {
                let diff = q[node.axis] - node.split;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, skip, k, heap);
                let bound = heap.peek().map_or(f64::INFINITY, |c| c.0);
                if heap.len() < k || diff * diff < bound {
                    self.search(far, q, skip, k, heap);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::keyed_rng;
    use rand::Rng;

    #[test]
    fn matches_brute_force() {
        let mut rng = keyed_rng(&[42]);
        let pts: Vec<Vec3> = (0..500)
            .map(|_| Vec3::new(rng.random(), rng.random::<f64>() * 3.0, rng.random()))
            .collect();
        let tree = KdTree::new(&pts);
        for q in (0..500).step_by(37) {
            let mut brute: Vec<f64> = (0..500)
                .filter(|&j| j != q)
                .map(|j| (pts[j] - pts[q]).norm_squared())
                .collect();
            brute.sort_by(f64::total_cmp);
            assert_eq!(tree.knn_sq_excluding(q, 5), brute[..5].to_vec());
        }
    }
}
