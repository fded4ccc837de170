//! The toy per-node predictor: a two-layer model over the concatenated 3x3
//! feature neighborhood, with logistic heads for `P` and `S1..S3` and
//! hand-derived backpropagation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::fml::{FmlGradients, FmlParams, NodeSignals};
use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;
use crate::toy::scene::NodeFeatures;

/// Output heads: objectness plus three link scores.
const HEADS: usize = 4;

/// Two-layer per-node model plus the flow-mapping parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPredictor<T> {
    pub feat_dim: usize,
    pub hidden: usize,
    /// `hidden x (9 * feat_dim)`.
    pub w1: DenseMatrix<T>,
    pub b1: Vec<T>,
    /// `4 x hidden`.
    pub w2: DenseMatrix<T>,
    pub b2: Vec<T>,
    pub fml: FmlParams<T>,
}

/// Per-node intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct PredictorCache<T> {
    /// tanh activations, node-major, `n * hidden`.
    hidden: Vec<T>,
    /// Logistic outputs, node-major, `n * 4`.
    outputs: Vec<T>,
}

/// Gradients of all predictor weights (flow-mapping params excluded).
#[derive(Debug, Clone)]
pub struct PredictorGrads<T> {
    pub w1: DenseMatrix<T>,
    pub b1: Vec<T>,
    pub w2: DenseMatrix<T>,
    pub b2: Vec<T>,
}

impl<T: Scalar> PredictorGrads<T> {
    pub fn zeros(feat_dim: usize, hidden: usize) -> Self {
        PredictorGrads {
            w1: DenseMatrix::zeros(hidden, 9 * feat_dim),
            b1: vec![T::zero(); hidden],
            w2: DenseMatrix::zeros(HEADS, hidden),
            b2: vec![T::zero(); HEADS],
        }
    }

    /// `self = momentum * self + g`.
    pub fn momentum_update(&mut self, momentum: T, g: &PredictorGrads<T>) {
        let blend = |acc: &mut [T], inc: &[T]| {
            for (a, &b) in acc.iter_mut().zip(inc) {
                *a = momentum * *a + b;
            }
        };
        blend(self.w1.data_mut(), g.w1.data());
        blend(&mut self.b1, &g.b1);
        blend(self.w2.data_mut(), g.w2.data());
        blend(&mut self.b2, &g.b2);
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> ToyPredictor<T> {
    pub fn zeros(feat_dim: usize, hidden: usize) -> Self {
        ToyPredictor {
            feat_dim,
            hidden,
            w1: DenseMatrix::zeros(hidden, 9 * feat_dim),
            b1: vec![T::zero(); hidden],
            w2: DenseMatrix::zeros(HEADS, hidden),
            b2: vec![T::zero(); HEADS],
            fml: FmlParams::default(),
        }
    }

    /// Uniform random initialization in `[-scale, scale]`.
    pub fn random(feat_dim: usize, hidden: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut model = ToyPredictor::zeros(feat_dim, hidden);
        let mut fill = |data: &mut [T]| {
            for v in data.iter_mut() {
                *v = T::from_f64_c(rng.random_range(-scale..=scale));
            }
        };
        fill(model.w1.data_mut());
        fill(&mut model.b1);
        fill(model.w2.data_mut());
        fill(&mut model.b2);
        model
    }

    /// Concatenated 3x3 neighborhood of `feats` at node `m` (zero-padded).
    fn gather_input(&self, feats: &NodeFeatures<T>, m: usize, out: &mut [T]) {
        let shape = feats.shape;
        let (i, j) = shape.node_coords(crate::grid::NodeId(m));
        let f = self.feat_dim;
        let mut k = 0;
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                let slot = &mut out[k * f..(k + 1) * f];
                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                if ni >= 0 && (ni as usize) < shape.rows && nj >= 0 && (nj as usize) < shape.cols {
                    let nm = shape.idx(ni as usize, nj as usize);
                    slot.copy_from_slice(feats.node(nm));
                } else {
                    slot.fill(T::zero());
                }
                k += 1;
            }
        }
    }

    /// Forward pass with cached intermediates.
    pub fn forward(&self, feats: &NodeFeatures<T>) -> Result<(NodeSignals<T>, PredictorCache<T>)> {
        if feats.dim != self.feat_dim {
            return Err(Error::FeatureDimMismatch {
                expected: self.feat_dim,
                got: feats.dim,
            });
        }
        let shape = feats.shape;
        let n = shape.node_count();
        let in_dim = 9 * self.feat_dim;
        let mut x = vec![T::zero(); in_dim];
        let mut hidden = vec![T::zero(); n * self.hidden];
        let mut outputs = vec![T::zero(); n * HEADS];
        let mut planes: [Vec<T>; 4] = std::array::from_fn(|_| vec![T::zero(); n]);

        for m in 0..n {
            self.gather_input(feats, m, &mut x);
            let h = &mut hidden[m * self.hidden..(m + 1) * self.hidden];
            for (r, hv) in h.iter_mut().enumerate() {
                let mut acc = self.b1[r];
                for (c, &xv) in x.iter().enumerate() {
                    acc += self.w1.get(r, c) * xv;
                }
                *hv = acc.tanh();
            }
            let out = &mut outputs[m * HEADS..(m + 1) * HEADS];
            for (r, ov) in out.iter_mut().enumerate() {
                let mut acc = self.b2[r];
                for (c, &hv) in h.iter().enumerate() {
                    acc += self.w2.get(r, c) * hv;
                }
                *ov = sigmoid(acc);
            }
            for (k, plane) in planes.iter_mut().enumerate() {
                plane[m] = out[k];
            }
        }
        let [p, s1, s2, s3] = planes;
        let signals = NodeSignals::new(shape, p, s1, s2, s3)?;
        Ok((signals, PredictorCache { hidden, outputs }))
    }

    /// Forward pass without the cache.
    pub fn predict(&self, feats: &NodeFeatures<T>) -> Result<NodeSignals<T>> {
        Ok(self.forward(feats)?.0)
    }

    /// Backpropagates per-node signal gradients into weight gradients.
    pub fn backward(
        &self,
        feats: &NodeFeatures<T>,
        cache: &PredictorCache<T>,
        upstream: &FmlGradients<T>,
    ) -> PredictorGrads<T> {
        let shape = feats.shape;
        let n = shape.node_count();
        let in_dim = 9 * self.feat_dim;
        let mut g = PredictorGrads::zeros(self.feat_dim, self.hidden);
        let mut x = vec![T::zero(); in_dim];
        let mut dz2 = vec![T::zero(); HEADS];
        let mut dz1 = vec![T::zero(); self.hidden];

        for m in 0..n {
            let u = [
                upstream.d_p[m],
                upstream.d_s1[m],
                upstream.d_s2[m],
                upstream.d_s3[m],
            ];
            let out = &cache.outputs[m * HEADS..(m + 1) * HEADS];
            for k in 0..HEADS {
                dz2[k] = u[k] * out[k] * (T::one() - out[k]);
            }
            let h = &cache.hidden[m * self.hidden..(m + 1) * self.hidden];
            for (r, &d) in dz2.iter().enumerate() {
                g.b2[r] += d;
                for (c, &hv) in h.iter().enumerate() {
                    g.w2.set(r, c, g.w2.get(r, c) + d * hv);
                }
            }
            for (c, dz) in dz1.iter_mut().enumerate() {
                let mut acc = T::zero();
                for (r, &d) in dz2.iter().enumerate() {
                    acc += self.w2.get(r, c) * d;
                }
                *dz = acc * (T::one() - h[c] * h[c]);
            }
            self.gather_input(feats, m, &mut x);
            for (r, &d) in dz1.iter().enumerate() {
                g.b1[r] += d;
                if d == T::zero() {
                    continue;
                }
                for (c, &xv) in x.iter().enumerate() {
                    if xv != T::zero() {
                        g.w1.set(r, c, g.w1.get(r, c) + d * xv);
                    }
                }
            }
        }
        g
    }
}
