//! Exact k-nearest-neighbour search over 3-D points.
//!
//! A plain median-split kd-tree. Queries are exact: results are ordered by
//! ascending distance and ties are broken by ascending point index, matching
//! a brute-force scan bit for bit.

use nalgebra::Vector3;

pub struct KdTree<'a> {
    points: &'a [Vector3<f64>],
    /// Point indices arranged so that each tree node owns a contiguous slice.
    order: Vec<u32>,
    nodes: Vec<Node>,
}

struct Node {
    /// Splitting axis (0..3); leaves use 3.
    axis: u8,
    /// Split coordinate value.
    split: f64,
    /// Children as indices into `nodes`; leaves store the slice range instead.
    left: u32,
    right: u32,
    start: u32,
    len: u32,
}

const LEAF_SIZE: usize = 16;

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Vector3<f64>]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build_node(points, &mut order, 0, &mut nodes, 0);
        }
        KdTree {
            points,
            order,
            nodes,
        }
    }

    /// Indices of the `k` nearest neighbours of `query`, excluding `exclude`
    /// when given, ordered by (distance, index).
    pub fn knn(&self, query: &Vector3<f64>, k: usize, exclude: Option<usize>) -> Vec<usize> {
        if self.points.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.search(0, query, k, exclude, &mut best);
        best.into_iter().map(|(_, i)| i).collect()
    }

    fn search(
        &self,
        node_id: usize,
        query: &Vector3<f64>,
        k: usize,
        exclude: Option<usize>,
        best: &mut Vec<(f64, usize)>,
    ) {
        let node = &self.nodes[node_id];
        if node.axis == 3 {
            for &oi in &self.order[node.start as usize..(node.start + node.len) as usize] {
                let i = oi as usize;
                if Some(i) == exclude {
                    continue;
                }
                let d2 = (self.points[i] - query).norm_squared();
                insert_candidate(best, k, d2, i);
            }
            return;
        }
        let axis = node.axis as usize;
        let delta = query[axis] - node.split;
        let (near, far) = if delta < 0.0 {
            (node.left as usize, node.right as usize)
        } else {
            (node.right as usize, node.left as usize)
        };
        self.search(near, query, k, exclude, best);
        // Descend on equality too so equidistant lower-index points are found.
        if best.len() < k || delta * delta <= best.last().unwrap().0 {
            self.search(far, query, k, exclude, best);
        }
    }
}

fn insert_candidate(best: &mut Vec<(f64, usize)>, k: usize, d2: f64, idx: usize) {
    if best.len() == k {
        let worst = *best.last().unwrap();
        if (d2, idx) >= worst {
            return;
        }
    }
    let pos = best.partition_point(|&(bd, bi)| (bd, bi) < (d2, idx));
    best.insert(pos, (d2, idx));
    if best.len() > k {
        best.pop();
    }
}

fn build_node(
    points: &[Vector3<f64>],
    order: &mut [u32],
    offset: usize,
    nodes: &mut Vec<Node>,
    depth: usize,
) -> u32 {
    let id = nodes.len() as u32;
    if order.len() <= LEAF_SIZE {
        nodes.push(Node {
            axis: 3,
            split: 0.0,
            left: 0,
            right: 0,
            start: offset as u32,
            len: order.len() as u32,
        });
        return id;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        (points[a as usize][axis], a).partial_cmp(&(points[b as usize][axis], b)).unwrap()
    });
    let split = points[order[mid] as usize][axis];
    nodes.push(Node {
        axis: axis as u8,
        split,
        left: 0,
        right: 0,
        start: 0,
        len: 0,
    });
    let (lo, hi) = order.split_at_mut(mid);
    let left = build_node(points, lo, offset, nodes, depth + 1);
    let right = build_node(points, hi, offset + mid, nodes, depth + 1);
    nodes[id as usize].left = left;
    nodes[id as usize].right = right;
    id
}
