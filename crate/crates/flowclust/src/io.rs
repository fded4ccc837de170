//! File formats: binary flow/signal containers and the JSON documents shared
//! by the CLI subcommands.
//!
//! Binary containers are little-endian and bit-exact: a 4-byte magic
//! (`SFG1` for flows, `SIG1` for signals), then `u32` rows, cols and stride,
//! then four planes of `rows * cols` IEEE-754 `f32` values in column-major
//! node order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowMaps;
use crate::fml::NodeSignals;
use crate::geom::RotatedBox;
use crate::grid::{GridShape, NodeId};
use crate::mcl::ClusterAssignment;
use crate::scalar::Scalar;
use crate::toy::ToyPredictor;

pub const FLOW_MAGIC: &str = "SFG1";
pub const SIGNAL_MAGIC: &str = "SIG1";

fn write_container<W: Write>(
    mut w: W,
    magic: &str,
    shape: &GridShape,
    planes: [&[f64]; 4],
    context: &str,
) -> Result<()> {
    let io_err = |e| Error::io(context, e);
    w.write_all(magic.as_bytes()).map_err(io_err)?;
    for v in [shape.rows as u32, shape.cols as u32, shape.stride] {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    for plane in planes {
        for &v in plane {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
        }
    }
    Ok(())
}

fn read_container<R: Read>(
    mut r: R,
    magic: &str,
    context: &str,
) -> Result<(GridShape, [Vec<f64>; 4])> {
    let io_err = |e| Error::io(context, e);
    let mut tag = [0u8; 4];
    r.read_exact(&mut tag).map_err(io_err)?;
    if tag != magic.as_bytes() {
        return Err(Error::BadMagic {
            path: context.to_string(),
            expected: if magic == FLOW_MAGIC {
                FLOW_MAGIC
            } else {
                SIGNAL_MAGIC
            },
        });
    }
    let mut word = [0u8; 4];
    let mut dims = [0u32; 3];
    for d in &mut dims {
        r.read_exact(&mut word).map_err(io_err)?;
        *d = u32::from_le_bytes(word);
    }
    let [rows, cols, stride] = dims;
    if rows == 0 || cols == 0 || stride == 0 {
        return Err(Error::MalformedFile {
            path: context.to_string(),
            detail: format!("degenerate dimensions {rows}x{cols}, stride {stride}"),
        });
    }
    let shape = GridShape::new(rows as usize, cols as usize, stride);
    let n = shape.node_count();
    let mut planes: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(n));
    for plane in &mut planes {
        for _ in 0..n {
            r.read_exact(&mut word).map_err(|e| Error::MalformedFile {
                path: context.to_string(),
                detail: format!("truncated plane data: {e}"),
            })?;
            plane.push(f32::from_le_bytes(word) as f64);
        }
    }
    Ok((shape, planes))
}

/// Writes flow maps as an `SFG1` container.
pub fn write_flow_maps<T: Scalar, W: Write>(w: W, fm: &FlowMaps<T>, context: &str) -> Result<()> {
    let to64 = |p: &[T]| p.iter().map(|v| v.to_f64_c()).collect::<Vec<_>>();
    let planes = [
        to64(fm.plane(0)),
        to64(fm.plane(1)),
        to64(fm.plane(2)),
        to64(fm.plane(3)),
    ];
    write_container(
        w,
        FLOW_MAGIC,
        &fm.shape,
        [&planes[0], &planes[1], &planes[2], &planes[3]],
        context,
    )
}

/// Reads an `SFG1` container.
pub fn read_flow_maps<T: Scalar, R: Read>(r: R, context: &str) -> Result<FlowMaps<T>> {
    let (shape, planes) = read_container(r, FLOW_MAGIC, context)?;
    let conv = |p: Vec<f64>| p.into_iter().map(T::from_f64_c).collect::<Vec<T>>();
    FlowMaps::from_planes(shape, planes.map(conv))
}

pub fn save_flow_maps<T: Scalar>(path: &Path, fm: &FlowMaps<T>) -> Result<()> {
    let ctx = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| Error::io(&ctx, e))?;
    write_flow_maps(std::io::BufWriter::new(file), fm, &ctx)
}

pub fn load_flow_maps<T: Scalar>(path: &Path) -> Result<FlowMaps<T>> {
    let ctx = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(&ctx, e))?;
    read_flow_maps(std::io::BufReader::new(file), &ctx)
}

/// Writes node signals as a `SIG1` container (planes `P`, `S1`, `S2`, `S3`).
pub fn write_signals<T: Scalar, W: Write>(w: W, sig: &NodeSignals<T>, context: &str) -> Result<()> {
    let to64 = |p: &[T]| p.iter().map(|v| v.to_f64_c()).collect::<Vec<_>>();
    let planes = [to64(&sig.p), to64(&sig.s1), to64(&sig.s2), to64(&sig.s3)];
    write_container(
        w,
        SIGNAL_MAGIC,
        &sig.shape,
        [&planes[0], &planes[1], &planes[2], &planes[3]],
        context,
    )
}

/// Reads a `SIG1` container.
pub fn read_signals<T: Scalar, R: Read>(r: R, context: &str) -> Result<NodeSignals<T>> {
    let (shape, planes) = read_container(r, SIGNAL_MAGIC, context)?;
    let conv = |p: Vec<f64>| p.into_iter().map(T::from_f64_c).collect::<Vec<T>>();
    let [p, s1, s2, s3] = planes.map(conv);
    NodeSignals::new(shape, p, s1, s2, s3)
}

pub fn save_signals<T: Scalar>(path: &Path, sig: &NodeSignals<T>) -> Result<()> {
    let ctx = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| Error::io(&ctx, e))?;
    write_signals(std::io::BufWriter::new(file), sig, &ctx)
}

pub fn load_signals<T: Scalar>(path: &Path) -> Result<NodeSignals<T>> {
    let ctx = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(&ctx, e))?;
    read_signals(std::io::BufReader::new(file), &ctx)
}

/// Scene document: image size, lattice stride and ground-truth boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub width: u32,
    pub height: u32,
    pub stride: u32,
    pub boxes: Vec<BoxRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl From<&RotatedBox> for BoxRecord {
    fn from(b: &RotatedBox) -> Self {
        BoxRecord {
            cx: b.cx,
            cy: b.cy,
            w: b.w,
            h: b.h,
            theta: b.theta,
        }
    }
}

impl From<&BoxRecord> for RotatedBox {
    fn from(r: &BoxRecord) -> Self {
        RotatedBox::new(r.cx, r.cy, r.w, r.h, r.theta)
    }
}

impl SceneFile {
    pub fn new(shape: &GridShape, boxes: &[RotatedBox]) -> Self {
        SceneFile {
            width: shape.cols as u32 * shape.stride,
            height: shape.rows as u32 * shape.stride,
            stride: shape.stride,
            boxes: boxes.iter().map(BoxRecord::from).collect(),
        }
    }

    pub fn grid_shape(&self) -> Result<GridShape> {
        if self.stride == 0 || self.width % self.stride != 0 || self.height % self.stride != 0 {
            return Err(Error::MalformedFile {
                path: "scene".into(),
                detail: format!(
                    "image {}x{} not divisible by stride {}",
                    self.width, self.height, self.stride
                ),
            });
        }
        Ok(GridShape::new(
            (self.height / self.stride) as usize,
            (self.width / self.stride) as usize,
            self.stride,
        ))
    }

    pub fn rotated_boxes(&self) -> Vec<RotatedBox> {
        self.boxes.iter().map(RotatedBox::from).collect()
    }
}

/// Clustering document: per-node attractors, clusters, background, grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterFile {
    pub attractor: Vec<usize>,
    pub clusters: BTreeMap<usize, Vec<usize>>,
    pub background: Vec<usize>,
    pub iterations_run: usize,
    pub grid: GridInfo,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridInfo {
    pub rows: usize,
    pub cols: usize,
    pub stride: u32,
}

impl ClusterFile {
    pub fn new(assignment: &ClusterAssignment, shape: &GridShape, iterations_run: usize) -> Self {
        ClusterFile {
            attractor: assignment.attractor.iter().map(|a| a.0).collect(),
            clusters: assignment
                .clusters
                .iter()
                .map(|(a, ms)| (a.0, ms.iter().map(|m| m.0).collect()))
                .collect(),
            background: assignment.background.iter().map(|m| m.0).collect(),
            iterations_run,
            grid: GridInfo {
                rows: shape.rows,
                cols: shape.cols,
                stride: shape.stride,
            },
        }
    }

    pub fn grid_shape(&self) -> GridShape {
        GridShape::new(self.grid.rows, self.grid.cols, self.grid.stride)
    }

    pub fn assignment(&self) -> ClusterAssignment {
        ClusterAssignment {
            attractor: self.attractor.iter().map(|&a| NodeId(a)).collect(),
            clusters: self
                .clusters
                .iter()
                .map(|(&a, ms)| (NodeId(a), ms.iter().map(|&m| NodeId(m)).collect()))
                .collect(),
            background: self.background.iter().map(|&m| NodeId(m)).collect(),
        }
    }
}

/// One detection: four corners plus the originating cluster.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub corners: [[f64; 2]; 4],
    pub cluster: usize,
}

/// Serialized predictor weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub feat_dim: usize,
    pub hidden: usize,
    pub w1: WeightBlock,
    pub b1: Vec<f64>,
    pub w2: WeightBlock,
    pub b2: Vec<f64>,
    pub fml: FmlRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightBlock {
    pub rows: usize,
    pub cols: usize,
    /// Column-major data.
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FmlRecord {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl ModelFile {
    pub fn from_model<T: Scalar>(model: &ToyPredictor<T>) -> Self {
        let block = |m: &crate::matrix::DenseMatrix<T>| WeightBlock {
            rows: m.rows(),
            cols: m.cols(),
            data: m.data().iter().map(|v| v.to_f64_c()).collect(),
        };
        ModelFile {
            feat_dim: model.feat_dim,
            hidden: model.hidden,
            w1: block(&model.w1),
            b1: model.b1.iter().map(|v| v.to_f64_c()).collect(),
            w2: block(&model.w2),
            b2: model.b2.iter().map(|v| v.to_f64_c()).collect(),
            fml: FmlRecord {
                alpha: model.fml.alpha.to_f64_c(),
                beta: model.fml.beta.to_f64_c(),
                gamma: model.fml.gamma.to_f64_c(),
            },
        }
    }

    pub fn into_model<T: Scalar>(&self) -> Result<ToyPredictor<T>> {
        let expect_w1 = (self.hidden, 9 * self.feat_dim);
        let expect_w2 = (4, self.hidden);
        for (block, (r, c)) in [(&self.w1, expect_w1), (&self.w2, expect_w2)] {
            if block.rows != r || block.cols != c || block.data.len() != r * c {
                return Err(Error::MalformedFile {
                    path: "model".into(),
                    detail: format!(
                        "weight block {}x{} with {} values, expected {r}x{c}",
                        block.rows,
                        block.cols,
                        block.data.len()
                    ),
                });
            }
        }
        let mut model = ToyPredictor::zeros(self.feat_dim, self.hidden);
        let fill = |dst: &mut [T], src: &[f64]| {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = T::from_f64_c(s);
            }
        };
        fill(model.w1.data_mut(), &self.w1.data);
        fill(&mut model.b1, &self.b1);
        fill(model.w2.data_mut(), &self.w2.data);
        fill(&mut model.b2, &self.b2);
        model.fml.alpha = T::from_f64_c(self.fml.alpha);
        model.fml.beta = T::from_f64_c(self.fml.beta);
        model.fml.gamma = T::from_f64_c(self.fml.gamma);
        Ok(model)
    }
}
