//! Cluster-to-box conversion (coordinate lifting + PCA), rotated-IoU
//! detection scoring, and the undirected local-link clustering baseline.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::fml::NodeSignals;
use crate::geom::{rotated_iou, RotatedBox};
use crate::grid::{FlowDir, GridShape, NodeId};
use crate::mcl::ClusterAssignment;
use crate::scalar::Scalar;

/// How covariance eigenvalues translate into box extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtentMode {
    /// Half-extents proportional to the raw eigenvalues (units of length^2).
    /// Kept for fidelity; box size does not track cluster size linearly.
    PaperLiteral,
    /// Half-extents proportional to the standard deviations (default).
    Stddev,
}

/// Parameters of [`pca_box`].
#[derive(Debug, Clone, Copy)]
pub struct PcaBoxParams {
    /// Scaling factor applied to the extents.
    pub scale: f64,
    pub extent_mode: ExtentMode,
    /// Lattice cell size in pixels; half-extents are floored at half a cell
    /// so degenerate clusters still produce a usable box.
    pub cell_size: f64,
}

impl Default for PcaBoxParams {
    fn default() -> Self {
        PcaBoxParams {
            scale: 1.75,
            extent_mode: ExtentMode::Stddev,
            cell_size: 16.0,
        }
    }
}

/// Lifts lattice nodes to their image-space centers.
pub fn nodes_to_image_coords(nodes: &[NodeId], shape: &GridShape) -> Result<Vec<[f64; 2]>> {
    if nodes.is_empty() {
        return Err(Error::EmptyNodeSet);
    }
    Ok(nodes.iter().map(|&m| shape.node_center(m)).collect())
}

/// Fits an oriented box to a point cloud by principal component analysis.
///
/// The centroid becomes the box center; the eigenvectors of the 2x2
/// coordinate covariance give the axes (major axis sign fixed to a
/// non-negative x-component); extents come from the eigenvalues per
/// `params.extent_mode`, scaled by `params.scale` and floored at half a
/// lattice cell.
pub fn pca_box(points: &[[f64; 2]], params: &PcaBoxParams) -> RotatedBox {
    assert!(!points.is_empty(), "pca_box needs at least one point");
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let dx = p[0] - cx;
        let dy = p[1] - cy;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    sxx /= n;
    sxy /= n;
    syy /= n;

    // Closed-form symmetric 2x2 eigendecomposition.
    let half_tr = (sxx + syy) / 2.0;
    let disc = (((sxx - syy) / 2.0).powi(2) + sxy * sxy).sqrt();
    let lambda1 = (half_tr + disc).max(0.0);
    let lambda2 = (half_tr - disc).max(0.0);
    let mut axis = if sxy.abs() > 1e-12 {
        [lambda1 - syy, sxy]
    } else if sxx >= syy {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    let norm = (axis[0] * axis[0] + axis[1] * axis[1]).sqrt();
    axis = [axis[0] / norm, axis[1] / norm];
    if axis[0] < 0.0 || (axis[0] == 0.0 && axis[1] < 0.0) {
        axis = [-axis[0], -axis[1]];
    }

    let extent = |lambda: f64| match params.extent_mode {
        ExtentMode::PaperLiteral => lambda,
        ExtentMode::Stddev => lambda.sqrt(),
    };
    let half1 = (params.scale * extent(lambda1)).max(params.cell_size / 2.0);
    let half2 = (params.scale * extent(lambda2)).max(params.cell_size / 2.0);
    RotatedBox::new(cx, cy, 2.0 * half1, 2.0 * half2, axis[1].atan2(axis[0]))
}

/// A detected box tagged with the cluster it came from.
#[derive(Debug, Clone)]
pub struct ClusterBox {
    pub attractor: NodeId,
    pub rect: RotatedBox,
}

/// One box per non-background cluster, in ascending attractor order.
pub fn clusters_to_boxes(
    assignment: &ClusterAssignment,
    shape: &GridShape,
    params: &PcaBoxParams,
) -> Vec<ClusterBox> {
    assignment
        .clusters
        .iter()
        .map(|(&attractor, members)| {
            let points = nodes_to_image_coords(members, shape).expect("clusters are non-empty");
            ClusterBox {
                attractor,
                rect: pca_box(&points, params),
            }
        })
        .collect()
}

/// One matched prediction/ground-truth pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

/// Precision/recall/F-score of a detection set.
#[derive(Debug, Clone)]
pub struct DetectionScore {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub matches: Vec<MatchPair>,
}

/// Greedy one-to-one matching by descending IoU at a fixed threshold.
pub fn evaluate_detections(
    pred: &[RotatedBox],
    gt: &[RotatedBox],
    iou_threshold: f64,
) -> DetectionScore {
    assert!(
        iou_threshold > 0.0 && iou_threshold < 1.0,
        "IoU threshold must lie in (0, 1)"
    );
    let mut candidates = Vec::new();
    for (pi, p) in pred.iter().enumerate() {
        for (gi, g) in gt.iter().enumerate() {
            let iou = rotated_iou(p, g);
            if iou >= iou_threshold {
                candidates.push(MatchPair {
                    pred: pi,
                    gt: gi,
                    iou,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.iou
            .partial_cmp(&a.iou)
            .unwrap()
            .then(a.pred.cmp(&b.pred))
            .then(a.gt.cmp(&b.gt))
    });
    let mut pred_used = vec![false; pred.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut matches = Vec::new();
    for cand in candidates {
        if !pred_used[cand.pred] && !gt_used[cand.gt] {
            pred_used[cand.pred] = true;
            gt_used[cand.gt] = true;
            matches.push(cand);
        }
    }
    let m = matches.len() as f64;
    let precision = if pred.is_empty() {
        if gt.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        m / pred.len() as f64
    };
    let recall = if gt.is_empty() {
        if pred.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        m / gt.len() as f64
    };
    let f_score = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    DetectionScore {
        precision,
        recall,
        f_score,
        matches,
    }
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }
}

/// Undirected link-score clustering baseline.
///
/// Foreground nodes (`P > fg_threshold`) are joined whenever a bottom, right
/// or left link score on either side of the edge exceeds `link_threshold`;
/// clusters are the connected components, with the lowest node id as the
/// attractor. Directionality is lost, which is exactly the failure mode the
/// directed-flow path avoids.
pub fn local_link_baseline<T: Scalar>(
    sig: &NodeSignals<T>,
    link_threshold: T,
    fg_threshold: T,
) -> ClusterAssignment {
    let shape = sig.shape;
    let n = shape.node_count();
    let fg: Vec<bool> = (0..n).map(|m| sig.p[m] > fg_threshold).collect();
    let mut uf = UnionFind::new(n);
    for m in shape.nodes() {
        if !fg[m.0] {
            continue;
        }
        let links = [
            (&sig.s1, FlowDir::Bottom),
            (&sig.s2, FlowDir::Right),
            (&sig.s3, FlowDir::Left),
        ];
        for (scores, dir) in links {
            if scores[m.0] > link_threshold {
                if let Some(nb) = shape.neighbor(m, dir) {
                    if fg[nb.0] {
                        uf.union(m.0, nb.0);
                    }
                }
            }
        }
    }

    let mut attractor: Vec<NodeId> = (0..n).map(NodeId).collect();
    let mut groups: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
    for m in 0..n {
        if fg[m] {
            groups.entry(uf.find(m)).or_default().push(NodeId(m));
        }
    }
    let mut clusters = BTreeMap::new();
    for members in groups.into_values() {
        let a = *members.iter().min().expect("non-empty component");
        for &m in &members {
            attractor[m.0] = a;
        }
        clusters.insert(a, members);
    }
    let background: Vec<NodeId> = (0..n).filter(|&m| !fg[m]).map(NodeId).collect();
    ClusterAssignment {
        attractor,
        clusters,
        background,
    }
}
