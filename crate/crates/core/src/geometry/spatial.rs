//! Static 3D k-d tree. Nearest-neighbour ties resolve to the lowest point
//! index, so results match a linear scan exactly.


use super::Point;
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Immutable spatial index over a point set; `Send + Sync`.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Point>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[inline]
fn better(d2: f64, idx: usize, best_d2: f64, best_idx: usize) -> bool {
    d2 < best_d2 || (d2 == best_d2 && idx < best_idx)
}

impl SpatialIndex {
    pub fn build(points: &[Point]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut index = SpatialIndex {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        index.build_node(0, points.len());
        Ok(index)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let (mut lo, mut hi) = (self.points[self.order[start]], self.points[self.order[start]]);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let extent = hi - lo;
        let axis = extent.imax();
        if extent[axis] <= 0.0 {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let pts = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// Index of and Euclidean distance to the closest point.
    pub fn nearest(&self, q: &Point) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_in(0, q, &mut best);
        (best.0, best.1.sqrt())
    }

    fn nearest_in(&self, node: usize, q: &Point, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = (q - self.points[i]).norm_squared();
                    if better(d2, i, best.1, best.0) {
                        *best = (i, d2);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_in(near, q, best);
                if diff * diff <= best.1 {
                    self.nearest_in(far, q, best);
                }
            }
        }
    }

    /// The `k` closest points sorted by (distance, index).
    pub fn k_nearest(&self, q: &Point, k: usize) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.knn_in(0, q, k, &mut heap);
        heap.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
    }

    fn knn_in(&self, node: usize, q: &Point, k: usize, found: &mut Vec<(f64, usize)>) {
        let worst = |found: &Vec<(f64, usize)>| {
            if found.len() < k {
                f64::INFINITY
            } else {
                found[found.len() - 1].0
            }
        };
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = (q - self.points[i]).norm_squared();
                    if found.len() < k || better(d2, i, found[k - 1].0, found[k - 1].1) {
                        let pos = found
                            .binary_search_by(|&(bd, bi)| {
                                bd.total_cmp(&d2).then(bi.cmp(&i))
                            })
                            .unwrap_or_else(|p| p);
                        found.insert(pos, (d2, i));
                        found.truncate(k);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_in(near, q, k, found);
                if diff * diff <= worst(found) {
                    self.knn_in(far, q, k, found);
                }
            }
        }
    }

    /// Indices of all points within `radius` (inclusive), ascending.
    pub fn within_radius(&self, q: &Point, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        let r2 = radius * radius;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        if (q - self.points[i]).norm_squared() <= r2 {
                            out.push(i);
                        }
                    }
                }
                Node::Split { axis, value, left, right } => {
                    let diff = q[axis] - value;
                    if diff - radius <= 0.0 {
                        stack.push(left);
                    }
                    if diff + radius >= 0.0 {
                        stack.push(right);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Linear-scan nearest neighbour with the same tie rule as the index.
#[cfg(test)]
pub(crate) fn nearest_linear(points: &[Point], q: &Point) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d2 = (q - p).norm_squared();
        match best {
            Some((_, bd)) if d2.partial_cmp(&bd) != Some(std::cmp::Ordering::Less) => {}
            _ => best = Some((i, d2)),
        }
    }
    best.map(|(i, d2)| (i, d2.sqrt()))
}
