//! Shared helpers for unit tests.

use rand::Rng;

use crate::flow::FlowMaps;
use crate::geom::RotatedBox;
use crate::grid::GridShape;
use crate::scalar::Scalar;

/// Axis-aligned box that covers exactly node rows `r0..=r1` and columns
/// `c0..=c1`, with a snug margin around the node centers.
pub(crate) fn box_over_nodes(
    shape: &GridShape,
    r0: usize,
    r1: usize,
    c0: usize,
    c1: usize,
) -> RotatedBox {
    let u = shape.stride as f64;
    let off = shape.offset as f64;
    let cx = off + u * (c0 + c1) as f64 / 2.0;
    let cy = off + u * (r0 + r1) as f64 / 2.0;
    let w = u * (c1 - c0) as f64 + 0.6 * u;
    let h = u * (r1 - r0) as f64 + 0.6 * u;
    RotatedBox::new(cx, cy, w, h, 0.0)
}

/// Random valid flow maps: per node, four positive flows normalized to 1.
pub(crate) fn random_flow_maps<T: Scalar>(shape: GridShape, rng: &mut impl Rng) -> FlowMaps<T> {
    let n = shape.node_count();
    let mut planes: [Vec<T>; 4] = std::array::from_fn(|_| Vec::with_capacity(n));
    for _ in 0..n {
        let raw: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.05..1.0));
        let sum: f64 = raw.iter().sum();
        for (k, plane) in planes.iter_mut().enumerate() {
            plane.push(T::from_f64_c(raw[k] / sum));
        }
    }
    FlowMaps::from_planes(shape, planes).unwrap()
}
