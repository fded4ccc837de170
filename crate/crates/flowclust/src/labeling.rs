//! Ground-truth generation: locating a box's attractor node, per-node
//! attractor/object masks, flow labels, and synthetic flows whose clustering
//! provably recovers the labels.
//!
//! Image rows grow downward, so the "lowest" node of a box is the one with
//! the largest row index. Attractors sit on the bottom node row of a box, at
//! the column closest to where the major axis meets the lower short side
//! (for horizontal boxes: the midpoint of the lower long edge).

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::flow::FlowMaps;
use crate::geom::RotatedBox;
use crate::grid::{FlowDir, GridShape, NodeId};
use crate::scalar::Scalar;

/// Per-node attractor indices plus the per-box bookkeeping behind them.
#[derive(Debug, Clone)]
pub struct AttractorMask {
    pub shape: GridShape,
    /// Attractor node of every node; background nodes point to themselves.
    pub index: Vec<u32>,
    /// Attractor of each input box, in box order.
    pub attractors: Vec<NodeId>,
    /// Boxes after the minimal adjustment that pulls the attractor inside.
    pub adjusted_boxes: Vec<RotatedBox>,
}

impl AttractorMask {
    pub fn attractor_of(&self, node: NodeId) -> NodeId {
        NodeId(self.index[node.0] as usize)
    }

    /// Nodes assigned to a given attractor, ascending.
    pub fn cluster_members(&self, attractor: NodeId) -> Vec<NodeId> {
        self.index
            .iter()
            .enumerate()
            .filter(|&(_, &a)| a as usize == attractor.0)
            .map(|(m, _)| NodeId(m))
            .collect()
    }

    /// Foreground/background mask consistent with the attractor indices.
    pub fn object_mask(&self) -> ObjectMask {
        let fg = (0..self.index.len())
            .map(|m| self.index[m] as usize != m || self.attractors.contains(&NodeId(m)))
            .collect();
        ObjectMask {
            shape: self.shape,
            fg,
        }
    }
}

/// Per-node foreground flag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectMask {
    pub shape: GridShape,
    pub fg: Vec<bool>,
}

/// Compact per-node attractor index; node `m`'s target distribution is the
/// one-hot vector at `attractor[m]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowLabel {
    pub shape: GridShape,
    pub attractor: Vec<u32>,
}

impl FlowLabel {
    #[inline]
    pub fn target_of(&self, node: NodeId) -> NodeId {
        NodeId(self.attractor[node.0] as usize)
    }

    pub fn len(&self) -> usize {
        self.attractor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attractor.is_empty()
    }
}

/// Nodes whose image-space centers fall inside the box (boundary-inclusive).
pub fn nodes_in_box(rect: &RotatedBox, shape: &GridShape) -> Vec<NodeId> {
    // Restrict the scan to the axis-aligned pixel bounds of the corners.
    let corners = rect.corners();
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in corners {
        min_x = min_x.min(c[0]);
        max_x = max_x.max(c[0]);
        min_y = min_y.min(c[1]);
        max_y = max_y.max(c[1]);
    }
    let u = shape.stride as f64;
    let off = shape.offset as f64;
    let col_lo = (((min_x - off) / u).floor().max(0.0)) as usize;
    let col_hi = ((((max_x - off) / u).ceil()).max(0.0) as usize).min(shape.cols.saturating_sub(1));
    let row_lo = (((min_y - off) / u).floor().max(0.0)) as usize;
    let row_hi = ((((max_y - off) / u).ceil()).max(0.0) as usize).min(shape.rows.saturating_sub(1));

    let mut out = Vec::new();
    for j in col_lo..=col_hi.min(shape.cols - 1) {
        for i in row_lo..=row_hi.min(shape.rows - 1) {
            let m = NodeId(shape.idx(i, j));
            if rect.contains(shape.node_center(m)) {
                out.push(m);
            }
        }
    }
    out.sort_unstable();
    out
}

/// Finds the attractor node of a box and minimally adjusts the box to
/// contain it.
///
/// The attractor row is the bottom node row of the box; the column is the
/// grid column nearest to the lower endpoint of the major axis (falling back
/// to the lower long-edge midpoint for horizontal boxes).
pub fn locate_attractor(rect: &RotatedBox, shape: &GridShape) -> Result<(NodeId, RotatedBox)> {
    let nodes = nodes_in_box(rect, shape);
    if nodes.is_empty() {
        return Err(Error::EmptyBox);
    }
    let bottom_row = nodes
        .iter()
        .map(|&m| shape.node_coords(m).0)
        .max()
        .expect("non-empty");

    let (u, v) = rect.axes();
    let d_x = if u[1].abs() < 1e-12 {
        // Horizontal box: the major axis never meets a "lower" short side.
        let sign = if v[1] >= 0.0 { 1.0 } else { -1.0 };
        rect.cx + sign * (rect.h / 2.0) * v[0]
    } else {
        let sign = if u[1] >= 0.0 { 1.0 } else { -1.0 };
        rect.cx + sign * (rect.w / 2.0) * u[0]
    };
    let raw_col = (d_x - shape.offset as f64) / shape.stride as f64;
    let col = (raw_col.round().max(0.0) as usize).min(shape.cols - 1);

    let attractor = NodeId(shape.idx(bottom_row, col));
    let center = shape.node_center(attractor);
    let adjusted = if rect.contains(center) {
        *rect
    } else {
        rect.expanded_to_include(center)
    };
    debug_assert!(adjusted.contains(center));
    Ok((attractor, adjusted))
}

/// Builds the per-node attractor mask for a set of boxes.
///
/// Boxes must not overlap at node resolution; a node claimed twice is an
/// error rather than a silent priority.
pub fn build_attractor_mask(boxes: &[RotatedBox], shape: &GridShape) -> Result<AttractorMask> {
    let n = shape.node_count();
    let mut index: Vec<u32> = (0..n as u32).collect();
    let mut claimed: Vec<Option<usize>> = vec![None; n];
    let mut attractors = Vec::with_capacity(boxes.len());
    let mut adjusted_boxes = Vec::with_capacity(boxes.len());

    for (b, rect) in boxes.iter().enumerate() {
        let (attractor, adjusted) = locate_attractor(rect, shape)?;
        for node in nodes_in_box(&adjusted, shape) {
            if let Some(first) = claimed[node.0] {
                return Err(Error::OverlappingBoxes {
                    node: node.0,
                    first,
                    second: b,
                });
            }
            claimed[node.0] = Some(b);
            index[node.0] = attractor.0 as u32;
        }
        attractors.push(attractor);
        adjusted_boxes.push(adjusted);
    }
    Ok(AttractorMask {
        shape: *shape,
        index,
        attractors,
        adjusted_boxes,
    })
}

/// Compacts a mask into the per-node flow label.
pub fn build_flow_label(mask: &AttractorMask) -> FlowLabel {
    FlowLabel {
        shape: mask.shape,
        attractor: mask.index.clone(),
    }
}

/// Materializes node `m`'s one-hot target distribution.
pub fn expand_one_hot<T: Scalar>(label: &FlowLabel, m: NodeId) -> Vec<T> {
    let mut v = vec![T::zero(); label.attractor.len()];
    v[label.attractor[m.0] as usize] = T::one();
    v
}

/// Synthesizes flows that provably cluster back to the mask.
///
/// Attractor and background nodes are absorbing (`f0 = 1`); every other box
/// node splits its unit mass uniformly over the bottom/right/left moves that
/// advance a shortest in-box path towards its attractor. A node strictly
/// below its attractor has no such move and is an error.
pub fn ground_truth_flows<T: Scalar>(mask: &AttractorMask) -> Result<FlowMaps<T>> {
    let shape = mask.shape;
    let mut fm = FlowMaps::isolated(shape);

    for &attractor in &mask.attractors {
        let members = mask.cluster_members(attractor);
        // BFS from the attractor along reversed moves (up, left, right):
        // dist[v] = length of the shortest forward path v -> attractor.
        let mut dist: Vec<Option<usize>> = vec![None; shape.node_count()];
        let member_set: Vec<bool> = {
            let mut s = vec![false; shape.node_count()];
            for &m in &members {
                s[m.0] = true;
            }
            s
        };
        dist[attractor.0] = Some(0);
        let mut queue = VecDeque::from([attractor]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u.0].expect("visited");
            let (i, j) = shape.node_coords(u);
            let mut feeders = Vec::with_capacity(3);
            if i > 0 {
                feeders.push(shape.idx(i - 1, j)); // its Bottom move reaches u
            }
            if j > 0 {
                feeders.push(shape.idx(i, j - 1)); // its Right move reaches u
            }
            if j + 1 < shape.cols {
                feeders.push(shape.idx(i, j + 1)); // its Left move reaches u
            }
            for f in feeders {
                if member_set[f] && dist[f].is_none() {
                    dist[f] = Some(du + 1);
                    queue.push_back(NodeId(f));
                }
            }
        }

        for &node in &members {
            if node == attractor {
                continue;
            }
            let d = dist[node.0].ok_or(Error::Unroutable {
                node: node.0,
                attractor: attractor.0,
            })?;
            let mut dirs = Vec::with_capacity(3);
            for dir in FlowDir::MOVES {
                if let Some(nb) = shape.neighbor(node, dir) {
                    if member_set[nb.0] && dist[nb.0] == Some(d - 1) {
                        dirs.push(dir);
                    }
                }
            }
            debug_assert!(!dirs.is_empty(), "BFS distance implies a descent move");
            let share = T::one() / T::from_usize_c(dirs.len());
            let mut flows = [T::zero(); 4];
            for dir in dirs {
                let k = match dir {
                    FlowDir::Bottom => 1,
                    FlowDir::Right => 2,
                    FlowDir::Left => 3,
                    FlowDir::SelfLoop => unreachable!(),
                };
                flows[k] = share;
            }
            fm.set_node_flows(node, flows);
        }
    }
    Ok(fm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::validate_flow_maps;
    use crate::testutil::box_over_nodes;

    fn shape8() -> GridShape {
        GridShape::new(8, 8, 16)
    }

    #[test]
    fn nodes_in_pixel_boundary_box() {
        // Box spanning pixels [8,24]^2 with centers on its boundary.
        let shape = GridShape::new(4, 4, 16);
        let rect = RotatedBox::new(16.0, 16.0, 16.0, 16.0, 0.0);
        let nodes = nodes_in_box(&rect, &shape);
        let expect: Vec<NodeId> = vec![
            shape.node_index(0, 0).unwrap(),
            shape.node_index(1, 0).unwrap(),
            shape.node_index(0, 1).unwrap(),
            shape.node_index(1, 1).unwrap(),
        ];
        let mut expect = expect;
        expect.sort_unstable();
        assert_eq!(nodes, expect);
    }

    #[test]
    fn tiny_box_contains_no_node() {
        let shape = shape8();
        let rect = RotatedBox::new(16.0, 16.0, 4.0, 4.0, 0.0);
        assert!(nodes_in_box(&rect, &shape).is_empty());
        assert!(matches!(
            locate_attractor(&rect, &shape),
            Err(Error::EmptyBox)
        ));
    }

    #[test]
    fn quarter_turn_matches_swapped_twin() {
        let shape = shape8();
        let rot = RotatedBox::new(60.0, 60.0, 50.0, 20.0, std::f64::consts::FRAC_PI_2);
        let twin = RotatedBox::new(60.0, 60.0, 20.0, 50.0, 0.0);
        assert_eq!(nodes_in_box(&rot, &shape), nodes_in_box(&twin, &shape));
    }

    #[test]
    fn horizontal_box_attractor_is_bottom_center() {
        // 4x2-node axis-aligned box: rows 2..=3, cols 1..=4.
        let shape = shape8();
        let rect = box_over_nodes(&shape, 2, 3, 1, 4);
        let (attractor, adjusted) = locate_attractor(&rect, &shape).unwrap();
        let (i, j) = shape.node_coords(attractor);
        assert_eq!(i, 3);
        // Lower-edge midpoint x = 48 sits halfway between columns 2 and 3;
        // round-half-up picks column 3.
        assert_eq!(j, 3);
        assert_eq!(adjusted, rect);
        assert!(adjusted.contains(shape.node_center(attractor)));
    }

    #[test]
    fn oblique_mirror_boxes_have_mirrored_attractors() {
        let shape = GridShape::new(10, 11, 16);
        let theta = 0.35;
        let right = RotatedBox::new(80.0, 80.0, 70.0, 25.0, theta);
        let left = RotatedBox::new(80.0, 80.0, 70.0, 25.0, -theta);
        let (a_r, _) = locate_attractor(&right, &shape).unwrap();
        let (a_l, _) = locate_attractor(&left, &shape).unwrap();
        let (ri, rj) = shape.node_coords(a_r);
        let (li, lj) = shape.node_coords(a_l);
        assert_eq!(ri, li);
        // Columns reflect about the box center column (x = 80 -> col 4.5).
        assert_eq!(rj + lj, 9);
    }

    #[test]
    fn mask_with_no_boxes_is_identity() {
        let shape = shape8();
        let mask = build_attractor_mask(&[], &shape).unwrap();
        for (m, &a) in mask.index.iter().enumerate() {
            assert_eq!(a as usize, m);
        }
        assert!(mask.object_mask().fg.iter().all(|&f| !f));
    }

    #[test]
    fn single_box_mask_counts() {
        let shape = shape8();
        let rect = box_over_nodes(&shape, 2, 3, 1, 3); // 2x3 nodes
        let mask = build_attractor_mask(&[rect], &shape).unwrap();
        let a = mask.attractors[0];
        let members = mask.cluster_members(a);
        assert_eq!(members.len(), 6);
        let self_indexed = mask
            .index
            .iter()
            .enumerate()
            .filter(|&(m, &v)| v as usize == m)
            .count();
        // The attractor itself is self-indexed but foreground.
        assert_eq!(self_indexed, 64 - 6 + 1);
        let y_o = mask.object_mask();
        assert_eq!(y_o.fg.iter().filter(|&&f| f).count(), 6);
    }

    #[test]
    fn two_disjoint_boxes_two_attractors() {
        let shape = shape8();
        let boxes = vec![
            box_over_nodes(&shape, 1, 2, 1, 2),
            box_over_nodes(&shape, 5, 6, 4, 6),
        ];
        let mask = build_attractor_mask(&boxes, &shape).unwrap();
        assert_eq!(mask.attractors.len(), 2);
        assert_ne!(mask.attractors[0], mask.attractors[1]);
        let distinct: std::collections::BTreeSet<u32> = mask
            .index
            .iter()
            .enumerate()
            .filter(|&(m, &v)| v as usize != m)
            .map(|(_, &v)| v)
            .collect();
        assert_eq!(distinct.len(), 2);
    }

    #[test]
    fn overlapping_boxes_are_refused() {
        let shape = shape8();
        let boxes = vec![
            box_over_nodes(&shape, 1, 3, 1, 3),
            box_over_nodes(&shape, 3, 5, 3, 5),
        ];
        match build_attractor_mask(&boxes, &shape) {
            Err(Error::OverlappingBoxes { first, second, .. }) => {
                assert_eq!(first, 0);
                assert_eq!(second, 1);
            }
            other => panic!("expected overlap error, got {other:?}"),
        }
    }

    #[test]
    fn flow_label_one_hot_round_trip() {
        let shape = GridShape::new(6, 6, 16);
        let rect = box_over_nodes(&shape, 2, 4, 1, 3);
        let mask = build_attractor_mask(&[rect], &shape).unwrap();
        let label = build_flow_label(&mask);
        // Dense construction oracle.
        for m in shape.nodes() {
            let one_hot: Vec<f64> = expand_one_hot(&label, m);
            for k in 0..shape.node_count() {
                let expect = if k == mask.index[m.0] as usize { 1.0 } else { 0.0 };
                assert_eq!(one_hot[k], expect);
            }
        }
    }

    #[test]
    fn background_label_is_self() {
        let shape = shape8();
        let mask = build_attractor_mask(&[], &shape).unwrap();
        let label = build_flow_label(&mask);
        let v: Vec<f64> = expand_one_hot(&label, NodeId(5));
        assert_eq!(v[5], 1.0);
        assert_eq!(v.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn all_background_flows_are_self_loops() {
        let shape = shape8();
        let mask = build_attractor_mask(&[], &shape).unwrap();
        let fm: FlowMaps<f64> = ground_truth_flows(&mask).unwrap();
        assert!(fm.plane(0).iter().all(|&f| f == 1.0));
    }

    #[test]
    fn horizontal_triple_routes_inward() {
        // 1x3 box whose attractor lands on the middle column.
        let shape = shape8();
        let rect = box_over_nodes(&shape, 4, 4, 2, 4);
        let mask = build_attractor_mask(&[rect], &shape).unwrap();
        let (ai, aj) = shape.node_coords(mask.attractors[0]);
        assert_eq!((ai, aj), (4, 3));
        let fm: FlowMaps<f64> = ground_truth_flows(&mask).unwrap();
        let left = shape.node_index(4, 2).unwrap();
        let right = shape.node_index(4, 4).unwrap();
        assert_eq!(fm.node_flows(left), [0.0, 0.0, 1.0, 0.0]); // flows right
        assert_eq!(fm.node_flows(right), [0.0, 0.0, 0.0, 1.0]); // flows left
        assert_eq!(fm.node_flows(mask.attractors[0])[0], 1.0);
    }

    #[test]
    fn ground_truth_flows_validate_and_absorb() {
        let shape = shape8();
        let boxes = vec![
            box_over_nodes(&shape, 1, 2, 1, 3),
            box_over_nodes(&shape, 4, 6, 5, 6),
        ];
        let mask = build_attractor_mask(&boxes, &shape).unwrap();
        let fm: FlowMaps<f64> = ground_truth_flows(&mask).unwrap();
        assert!(validate_flow_maps(&fm).passes());
        let m0 = crate::flow::build_flow_matrix(&fm).unwrap();
        for m in shape.nodes() {
            let absorbing = mask.index[m.0] as usize == m.0;
            if absorbing {
                assert_eq!(m0.get(m.0, m.0), 1.0);
            }
        }
    }
}
