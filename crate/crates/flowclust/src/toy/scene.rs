//! Synthetic scene generation: randomized non-overlapping boxes on a lattice
//! plus per-node feature vectors for the toy predictor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::RotatedBox;
use crate::grid::GridShape;
use crate::labeling::{build_attractor_mask, ground_truth_flows, AttractorMask};
use crate::scalar::Scalar;

/// Feature channels per node.
pub const FEATURE_DIM: usize = 8;

/// Attempts per box before a scene is declared unplaceable.
const PLACEMENT_TRIES: usize = 60;

/// Knobs of the synthetic scene distribution.
#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub shape: GridShape,
    /// Inclusive range of boxes per scene.
    pub box_count: (usize, usize),
    /// Inclusive range of node rows a box should span.
    pub span_rows: (usize, usize),
    /// Inclusive range of node columns a box should span.
    pub span_cols: (usize, usize),
    /// Allowed box angles (radians).
    pub angles: Vec<f64>,
    /// Amplitude of the uniform noise added to the in-box feature channel.
    pub noise: f64,
    /// Minimum Chebyshev node distance kept between boxes.
    pub min_gap_nodes: usize,
    /// Base seed; per-scene seeds are derived from it.
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            shape: GridShape::square(16),
            box_count: (1, 3),
            span_rows: (2, 4),
            span_cols: (2, 5),
            angles: vec![
                0.0,
                std::f64::consts::PI / 12.0,
                -std::f64::consts::PI / 12.0,
                std::f64::consts::PI / 6.0,
                -std::f64::consts::PI / 6.0,
            ],
            noise: 0.1,
            min_gap_nodes: 1,
            seed: 0,
        }
    }
}

impl SceneConfig {
    /// Axis-aligned curriculum used by the toy trainer.
    pub fn training_curriculum() -> Self {
        SceneConfig {
            span_rows: (2, 3),
            span_cols: (3, 4),
            angles: vec![0.0],
            ..SceneConfig::default()
        }
    }
}

/// Per-node feature vectors, node-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures<T> {
    pub shape: GridShape,
    pub dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> NodeFeatures<T> {
    pub fn zeros(shape: GridShape, dim: usize) -> Self {
        NodeFeatures {
            shape,
            dim,
            data: vec![T::zero(); shape.node_count() * dim],
        }
    }

    #[inline]
    pub fn node(&self, m: usize) -> &[T] {
        &self.data[m * self.dim..(m + 1) * self.dim]
    }

    #[inline]
    pub fn node_mut(&mut self, m: usize) -> &mut [T] {
        &mut self.data[m * self.dim..(m + 1) * self.dim]
    }
}

/// A generated scene with everything the trainer needs.
#[derive(Debug, Clone)]
pub struct SceneSample<T> {
    pub features: NodeFeatures<T>,
    pub boxes: Vec<RotatedBox>,
    pub mask: AttractorMask,
}

/// One candidate box, or `None` when validation fails.
///
/// The box is grown around a sampled node span. Its center x is kept close
/// to the middle span column, so the attractor column is well separated in
/// feature space from its neighbors.
fn try_place_box(
    rng: &mut ChaCha8Rng,
    cfg: &SceneConfig,
    occupied: &[bool],
) -> Option<(RotatedBox, AttractorMask)> {
    let shape = cfg.shape;
    let u = shape.stride as f64;
    let sr = rng.random_range(cfg.span_rows.0..=cfg.span_rows.1);
    let sc = rng.random_range(cfg.span_cols.0..=cfg.span_cols.1);
    if sr > shape.rows || sc > shape.cols {
        return None;
    }
    let theta = cfg.angles[rng.random_range(0..cfg.angles.len())];
    let r0 = rng.random_range(0..=shape.rows - sr);
    let c0 = rng.random_range(0..=shape.cols - sc);
    let (r1, c1) = (r0 + sr - 1, c0 + sc - 1);
    let x = |col: usize| col as f64 * u + shape.offset as f64;
    let y = |row: usize| row as f64 * u + shape.offset as f64;

    let mid_col = c0 + (sc - 1) / 2;
    let cx = x(mid_col) + u * rng.random_range(-0.2..0.2);
    let cy = (y(r0) + y(r1)) / 2.0 + u * rng.random_range(-0.3..0.3);
    // Cover the span with a snug margin that stays short of the next column.
    let half_w = (cx - x(c0)).max(x(c1) - cx) + u * rng.random_range(0.2..0.42);
    let half_h = (cy - y(r0)).max(y(r1) - cy) + u * rng.random_range(0.2..0.42);
    let rect = RotatedBox::new(cx, cy, 2.0 * half_w, 2.0 * half_h, theta);

    let single = build_attractor_mask(std::slice::from_ref(&rect), &shape).ok()?;
    let members = single.cluster_members(single.attractors[0]);
    if members.len() < 2 {
        return None;
    }
    // Spans at node resolution: at least a 2x1 footprint.
    let rows: Vec<usize> = members.iter().map(|&m| shape.node_coords(m).0).collect();
    let cols: Vec<usize> = members.iter().map(|&m| shape.node_coords(m).1).collect();
    let span_r = rows.iter().max().unwrap() - rows.iter().min().unwrap() + 1;
    let span_c = cols.iter().max().unwrap() - cols.iter().min().unwrap() + 1;
    if span_r.max(span_c) < 2 {
        return None;
    }
    // Enforce the configured node gap to already-placed boxes.
    let gap = cfg.min_gap_nodes as i64;
    for &m in &members {
        let (i, j) = shape.node_coords(m);
        for di in -gap..=gap {
            for dj in -gap..=gap {
                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                if ni >= 0 && (ni as usize) < shape.rows && nj >= 0 && (nj as usize) < shape.cols {
                    if occupied[shape.idx(ni as usize, nj as usize)] {
                        return None;
                    }
                }
            }
        }
    }
    // The box must be routable on its own.
    ground_truth_flows::<f64>(&single).ok()?;
    Some((rect, single))
}

/// Generates a deterministic scene: non-overlapping routable boxes plus
/// features.
///
/// Feature channels per node: in-box indicator with additive uniform noise,
/// the covering box's orientation as `(cos 2theta, sin 2theta)`, the node's
/// normalized major/minor-axis offsets inside the box (zero for background),
/// and three pure-noise channels.
pub fn synth_scene<T: Scalar>(
    cfg: &SceneConfig,
    seed: u64,
) -> Result<(NodeFeatures<T>, Vec<RotatedBox>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = cfg.shape;
    let target = rng.random_range(cfg.box_count.0..=cfg.box_count.1);

    let mut boxes: Vec<RotatedBox> = Vec::with_capacity(target);
    let mut occupied = vec![false; shape.node_count()];
    let mut attempts = 0;
    while boxes.len() < target {
        let mut placed = false;
        for _ in 0..PLACEMENT_TRIES {
            attempts += 1;
            if let Some((rect, single)) = try_place_box(&mut rng, cfg, &occupied) {
                for m in single.cluster_members(single.attractors[0]) {
                    occupied[m.0] = true;
                }
                boxes.push(rect);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::ScenePlacement {
                requested: target,
                attempts,
            });
        }
    }

    let mask = build_attractor_mask(&boxes, &shape)?;
    let features = build_features(cfg, &mask, &mut rng);
    Ok((features, boxes))
}

/// Scene plus all supervision targets, as one bundle.
pub fn sample_scene<T: Scalar>(cfg: &SceneConfig, seed: u64) -> Result<SceneSample<T>> {
    let (features, boxes) = synth_scene(cfg, seed)?;
    let mask = build_attractor_mask(&boxes, &cfg.shape)?;
    Ok(SceneSample {
        features,
        boxes,
        mask,
    })
}

fn build_features<T: Scalar>(
    cfg: &SceneConfig,
    mask: &AttractorMask,
    rng: &mut ChaCha8Rng,
) -> NodeFeatures<T> {
    let shape = cfg.shape;
    let mut feats = NodeFeatures::zeros(shape, FEATURE_DIM);
    // Which adjusted box covers each node.
    let mut covering: Vec<Option<usize>> = vec![None; shape.node_count()];
    for (b, _) in mask.adjusted_boxes.iter().enumerate() {
        for m in mask.cluster_members(mask.attractors[b]) {
            covering[m.0] = Some(b);
        }
    }
    for m in shape.nodes() {
        let center = shape.node_center(m);
        let noise = rng.random_range(-cfg.noise..=cfg.noise);
        let tail: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
        let f = feats.node_mut(m.0);
        match covering[m.0] {
            Some(b) => {
                let rect = &mask.adjusted_boxes[b];
                let [dx, dy] = rect.to_frame(center);
                // Pixel-scaled box-frame geometry: the major-axis offset from
                // the center and the distance to the bottom long edge, both
                // over a fixed four-cell scale so thresholds transfer across
                // box sizes.
                let scale = 4.0 * shape.stride as f64;
                f[0] = T::from_f64_c(1.0 + noise);
                f[1] = T::from_f64_c((2.0 * rect.theta).cos());
                f[2] = T::from_f64_c((2.0 * rect.theta).sin());
                f[3] = T::from_f64_c(dx / scale);
                f[4] = T::from_f64_c((rect.h / 2.0 - dy) / scale);
            }
            None => {
                f[0] = T::from_f64_c(noise);
            }
        }
        for (k, t) in tail.iter().enumerate() {
            f[5 + k] = T::from_f64_c(*t);
        }
    }
    feats
}
