//! Lattice geometry: grid shape, 1D/2D node indexing and neighbor lookup.
//!
//! Nodes live on an `R x C` lattice. The 1D index is column-major,
//! `m = i + R * j`, and every tensor in this crate is flattened the same way.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of a lattice node, `m = i + R * j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Outgoing flow directions of a node, in plane order `f0..f3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowDir {
    SelfLoop,
    Bottom,
    Right,
    Left,
}

impl FlowDir {
    /// The three moving directions, in plane order (f1, f2, f3).
    pub const MOVES: [FlowDir; 3] = [FlowDir::Bottom, FlowDir::Right, FlowDir::Left];
}

/// Shape of the node lattice plus the node-to-pixel mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
    /// Lattice spacing in pixels.
    pub stride: u32,
    /// Pixel offset of node (0, 0) from the image origin.
    pub offset: u32,
}

impl GridShape {
    /// Grid with the default half-stride offset.
    pub fn new(rows: usize, cols: usize, stride: u32) -> Self {
        assert!(rows >= 1 && cols >= 1 && stride >= 1, "degenerate grid");
        GridShape {
            rows,
            cols,
            stride,
            offset: stride / 2,
        }
    }

    /// Square default-geometry grid (stride 16, offset 8).
    pub fn square(side: usize) -> Self {
        GridShape::new(side, side, 16)
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Checked 2D -> 1D index conversion.
    pub fn node_index(&self, row: usize, col: usize) -> Result<NodeId> {
        if row >= self.rows || col >= self.cols {
            return Err(Error::NodeOutOfRange {
                row,
                col,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(NodeId(self.idx(row, col)))
    }

    /// Inverse of [`GridShape::node_index`].
    #[inline]
    pub fn node_coords(&self, node: NodeId) -> (usize, usize) {
        debug_assert!(node.0 < self.node_count());
        (node.0 % self.rows, node.0 / self.rows)
    }

    /// Unchecked column-major flattening.
    #[inline]
    pub(crate) fn idx(&self, row: usize, col: usize) -> usize {
        row + self.rows * col
    }

    /// Image-space center of a node: `x = col * stride + offset`, `y = row * stride + offset`.
    #[inline]
    pub fn node_center(&self, node: NodeId) -> [f64; 2] {
        let (i, j) = self.node_coords(node);
        [
            j as f64 * self.stride as f64 + self.offset as f64,
            i as f64 * self.stride as f64 + self.offset as f64,
        ]
    }

    /// Lattice neighbor in a flow direction, or `None` when off-grid.
    pub fn neighbor(&self, node: NodeId, dir: FlowDir) -> Option<NodeId> {
        let (i, j) = self.node_coords(node);
        let (ni, nj) = match dir {
            FlowDir::SelfLoop => (Some(i), Some(j)),
            FlowDir::Bottom => (i.checked_add(1).filter(|&r| r < self.rows), Some(j)),
            FlowDir::Right => (Some(i), j.checked_add(1).filter(|&c| c < self.cols)),
            FlowDir::Left => (Some(i), j.checked_sub(1)),
        };
        match (ni, nj) {
            (Some(i), Some(j)) => Some(NodeId(self.idx(i, j))),
            _ => None,
        }
    }

    /// Iterator over all node ids in index order.
    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.node_count()).map(NodeId)
    }
}

/// Standalone checked indexing, mirroring the grid-level method.
pub fn node_index(row: usize, col: usize, shape: &GridShape) -> Result<NodeId> {
    shape.node_index(row, col)
}

/// Standalone inverse indexing.
pub fn node_coords(node: NodeId, shape: &GridShape) -> (usize, usize) {
    shape.node_coords(node)
}
