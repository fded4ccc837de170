//! Per-node stochastic flows and construction of the initial flow matrix.
//!
//! Each lattice node carries four non-negative flows summing to 1: a
//! self-loop (`f0`) and transitions to its bottom, right and left neighbors
//! (`f1`, `f2`, `f3`). Column `n` of the resulting matrix is node `n`'s
//! outgoing transition distribution.

use crate::error::{Error, Result};
use crate::grid::{FlowDir, GridShape, NodeId};
use crate::matrix::FlowMatrix;
use crate::scalar::Scalar;

/// Tolerance on per-node flow sums.
pub const FLOW_SUM_TOL: f64 = 1e-6;

/// Four per-node flow planes over an `R x C` lattice, flattened column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMaps<T> {
    pub shape: GridShape,
    planes: [Vec<T>; 4],
}

impl<T: Scalar> FlowMaps<T> {
    /// All-background maps: `f0 = 1` everywhere.
    pub fn isolated(shape: GridShape) -> Self {
        let n = shape.node_count();
        FlowMaps {
            shape,
            planes: [
                vec![T::one(); n],
                vec![T::zero(); n],
                vec![T::zero(); n],
                vec![T::zero(); n],
            ],
        }
    }

    pub fn from_planes(shape: GridShape, planes: [Vec<T>; 4]) -> Result<Self> {
        let n = shape.node_count();
        for plane in &planes {
            if plane.len() != n {
                return Err(Error::ShapeMismatch {
                    expected: n,
                    got: plane.len(),
                });
            }
        }
        Ok(FlowMaps { shape, planes })
    }

    #[inline]
    pub fn plane(&self, k: usize) -> &[T] {
        &self.planes[k]
    }

    #[inline]
    pub fn plane_mut(&mut self, k: usize) -> &mut [T] {
        &mut self.planes[k]
    }

    /// The four flows of one node in plane order.
    #[inline]
    pub fn node_flows(&self, node: NodeId) -> [T; 4] {
        [
            self.planes[0][node.0],
            self.planes[1][node.0],
            self.planes[2][node.0],
            self.planes[3][node.0],
        ]
    }

    pub fn set_node_flows(&mut self, node: NodeId, flows: [T; 4]) {
        for (k, f) in flows.into_iter().enumerate() {
            self.planes[k][node.0] = f;
        }
    }
}

/// Outcome of validating a [`FlowMaps`]: worst sum deviation and negativity.
#[derive(Debug, Clone)]
pub struct FlowMapReport {
    /// Largest `|f0+f1+f2+f3 - 1|` over nodes.
    pub max_sum_deviation: f64,
    /// Node attaining the largest sum deviation.
    pub worst_node: Option<NodeId>,
    /// Smallest entry across all planes.
    pub min_entry: f64,
    /// Number of strictly negative entries.
    pub negative_count: usize,
    /// First node holding a negative entry.
    pub first_negative: Option<NodeId>,
}

impl FlowMapReport {
    pub fn passes(&self) -> bool {
        self.max_sum_deviation <= FLOW_SUM_TOL && self.negative_count == 0
    }
}

impl std::fmt::Display for FlowMapReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "max |sum-1| = {:.3e}{}, {} negative entries (min entry {:.3e})",
            self.max_sum_deviation,
            self.worst_node
                .map(|m| format!(" at node {m}"))
                .unwrap_or_default(),
            self.negative_count,
            self.min_entry,
        )
    }
}

/// Checks that every node's flows are non-negative and sum to 1 within
/// [`FLOW_SUM_TOL`].
pub fn validate_flow_maps<T: Scalar>(fm: &FlowMaps<T>) -> FlowMapReport {
    let n = fm.shape.node_count();
    let mut report = FlowMapReport {
        max_sum_deviation: 0.0,
        worst_node: None,
        min_entry: f64::INFINITY,
        negative_count: 0,
        first_negative: None,
    };
    for m in 0..n {
        let flows = fm.node_flows(NodeId(m));
        let mut sum = T::zero();
        for f in flows {
            sum += f;
            let fv = f.to_f64_c();
            if fv < report.min_entry {
                report.min_entry = fv;
            }
            if fv < 0.0 {
                report.negative_count += 1;
                report.first_negative.get_or_insert(NodeId(m));
            }
        }
        let dev = (sum.to_f64_c() - 1.0).abs();
        if dev > report.max_sum_deviation {
            report.max_sum_deviation = dev;
            report.worst_node = Some(NodeId(m));
        }
    }
    report
}

/// Builds the initial column-stochastic flow matrix from per-node flows.
///
/// Column `n` receives `f0` on the diagonal and `f1..f3` at the bottom,
/// right and left neighbors. Flow pointing off-grid is redirected into the
/// self-loop, so no mass is lost at the lattice border and columns stay
/// stochastic without renormalization.
pub fn build_flow_matrix<T: Scalar>(fm: &FlowMaps<T>) -> Result<FlowMatrix<T>> {
    let report = validate_flow_maps(fm);
    if !report.passes() {
        return Err(Error::InvalidFlowMaps(report));
    }
    let shape = fm.shape;
    let n = shape.node_count();
    let mut triplets = Vec::with_capacity(4 * n);
    for m in shape.nodes() {
        let flows = fm.node_flows(m);
        let mut self_mass = flows[0];
        for (k, dir) in FlowDir::MOVES.iter().enumerate() {
            let f = flows[k + 1];
            match shape.neighbor(m, *dir) {
                Some(nb) => triplets.push((nb.0, m.0, f)),
                None => self_mass += f,
            }
        }
        triplets.push((m.0, m.0, self_mass));
    }
    Ok(FlowMatrix::from_triplets(n, triplets))
}

/// Adjoint of [`build_flow_matrix`]: gathers a matrix gradient back onto the
/// four flow planes.
///
/// Construction is a linear scatter, so each plane entry reads the matrix
/// cell it fed; flows that were redirected off-grid read the diagonal.
pub fn flow_matrix_backward<T: Scalar>(
    g_m0: &crate::matrix::DenseMatrix<T>,
    shape: &GridShape,
) -> crate::fml::FlowMapGrad<T> {
    let n = shape.node_count();
    assert_eq!(g_m0.rows(), n);
    let mut g = crate::fml::FlowMapGrad::zeros(n);
    for m in shape.nodes() {
        g.f0[m.0] = g_m0.get(m.0, m.0);
        for (k, dir) in FlowDir::MOVES.iter().enumerate() {
            let cell = match shape.neighbor(m, *dir) {
                Some(nb) => g_m0.get(nb.0, m.0),
                None => g_m0.get(m.0, m.0),
            };
            *match k {
                0 => &mut g.f1[m.0],
                1 => &mut g.f2[m.0],
                _ => &mut g.f3[m.0],
            } = cell;
        }
    }
    g
}
