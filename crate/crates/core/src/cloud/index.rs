use super::{Point3, PointCloud};
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { axis: u8, value: f64, left: u32, right: u32 },
}

/// Balanced k-d tree over an immutable point set.
///
/// Nearest-neighbor answers are exact. Among equidistant candidates the one
/// with the lowest original point index wins, so results match an exhaustive
/// scan in original order.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    // Points permuted into leaf order, with their original indices alongside.
    coords: Vec<[f64; 3]>,
    ids: Vec<u32>,
    // Slot in `coords` of every original index.
    slots: Vec<u32>,
    nodes: Vec<Node>,
    // Bounding box of every node's points.
    boxes: Vec<[[f64; 3]; 2]>,
}

#[inline]
fn box_dist2(b: &[[f64; 3]; 2], q: &[f64; 3]) -> f64 {
    let mut d = 0.0;
    for a in 0..3 {
        let e = (b[0][a] - q[a]).max(q[a] - b[1][a]).max(0.0);
        d += e * e;
    }
    d
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl NeighborIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        Self::from_points(cloud.points())
    }

    pub fn from_points(points: &[Point3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if points.len() > u32::MAX as usize {
            return Err(Error::invalid("too many points for the neighbor index"));
        }
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        let mut boxes = Vec::with_capacity(nodes.capacity());
        build_node(&raw, &mut order, 0, &mut nodes, &mut boxes);
        let coords = order.iter().map(|&i| raw[i as usize]).collect();
        let mut slots = vec![0u32; order.len()];
        for (slot, &i) in order.iter().enumerate() {
            slots[i as usize] = slot as u32;
        }
        Ok(Self {
            coords,
            ids: order,
            slots,
            nodes,
            boxes,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Exact nearest neighbor of `q` as (original index, Euclidean distance).
    pub fn nearest(&self, q: &Point3) -> (usize, f64) {
        let (idx, d2) = self.nearest_squared(q);
        (idx, d2.sqrt())
    }

    /// Like [`nearest`](Self::nearest) but returns the squared distance.
    pub fn nearest_squared(&self, q: &Point3) -> (usize, f64) {
        let q = [q.x, q.y, q.z];
        let mut best = (f64::INFINITY, u32::MAX);
        self.search_nearest(0, &q, &mut best);
        (best.1 as usize, best.0)
    }

    /// [`nearest_squared`](Self::nearest_squared) seeded with a candidate,
    /// typically the answer for a nearby query. The result is the same; a
    /// close hint only prunes more of the tree.
    pub fn nearest_squared_hinted(&self, q: &Point3, hint: usize) -> (usize, f64) {
        let q = [q.x, q.y, q.z];
        let mut best = (dist2(&self.coords[self.slots[hint] as usize], &q), hint as u32);
        self.search_nearest(0, &q, &mut best);
        (best.1 as usize, best.0)
    }

    fn search_nearest(&self, node: usize, q: &[f64; 3], best: &mut (f64, u32)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for k in start as usize..end as usize {
                    let d = dist2(&self.coords[k], q);
                    let id = self.ids[k];
                    if d < best.0 || (d == best.0 && id < best.1) {
                        *best = (d, id);
                    }
                }
            }
            Node::Split { left, right, .. } => {
                let dl = box_dist2(&self.boxes[left as usize], q);
                let dr = box_dist2(&self.boxes[right as usize], q);
                let (near, d_near, far, d_far) = if dl <= dr { (left, dl, right, dr) } else { (right, dr, left, dl) };
                // Equality still has to be explored for the index tie-break.
                if d_near <= best.0 {
                    self.search_nearest(near as usize, q, best);
                }
                if d_far <= best.0 {
                    self.search_nearest(far as usize, q, best);
                }
            }
        }
    }

    /// Original indices of all points within `radius` of `q` (inclusive), ascending.
    pub fn within_radius(&self, q: &Point3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(q, radius, |i, _| out.push(i));
        out.sort_unstable();
        out
    }

    /// Calls `f(original_index, squared_distance)` for every point within `radius`.
    /// Visit order is unspecified.
    pub fn for_each_within(&self, q: &Point3, radius: f64, mut f: impl FnMut(usize, f64)) {
        if radius < 0.0 {
            return;
        }
        let q = [q.x, q.y, q.z];
        let r2 = radius * radius;
        let mut stack = vec![0u32];
        while let Some(node) = stack.pop() {
            match self.nodes[node as usize] {
                Node::Leaf { start, end } => {
                    for k in start as usize..end as usize {
                        let d = dist2(&self.coords[k], &q);
                        if d <= r2 {
                            f(self.ids[k] as usize, d);
                        }
                    }
                }
                Node::Split {
                    axis,
                    value,
                    left,
                    right,
                } => {
                    let diff = q[axis as usize] - value;
                    if diff <= radius {
                        stack.push(left);
                    }
                    if diff >= -radius {
                        stack.push(right);
                    }
                }
            }
        }
    }
}

fn build_node(raw: &[[f64; 3]], order: &mut [u32], offset: usize, nodes: &mut Vec<Node>, boxes: &mut Vec<[[f64; 3]; 2]>) -> u32 {
    let id = nodes.len() as u32;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        let p = raw[i as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    boxes.push([lo, hi]);
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset as u32,
            end: (offset + order.len()) as u32,
        });
        return id;
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap();
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| raw[a as usize][axis].total_cmp(&raw[b as usize][axis]));
    let value = raw[order[mid] as usize][axis];
    // Left holds coordinates <= value, right holds >= value; the search relies
    // on exactly this split convention.
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (left_slice, right_slice) = order.split_at_mut(mid);
    let left = build_node(raw, left_slice, offset, nodes, boxes);
    let right = build_node(raw, right_slice, offset + mid, nodes, boxes);
    nodes[id as usize] = Node::Split {
        axis: axis as u8,
        value,
        left,
        right,
    };
    id
}
