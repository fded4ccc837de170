//! Flow mapping layer: the closed-form map from per-node objectness `P` and
//! link scores `S1..S3` to stochastic flows `f0..f3`, with analytic partial
//! derivatives with respect to both inputs and the layer parameters.
//!
//! Per node: `f0 = exp(-alpha * (1 - mu(1 - P)) * (S1^2 + S2^2 + S3^2))` and
//! `f_k = (1 - f0) * S_k / (S1 + S2 + S3)`, where `mu` is a trainable
//! logistic gate. The self-loop saturates to 1 for background nodes (large
//! `1 - P`) and for nodes with vanishing link scores, isolating them.

use crate::error::{Error, Result};
use crate::flow::FlowMaps;
use crate::grid::GridShape;
use crate::scalar::Scalar;

/// Inputs are clamped into `[SIGNAL_CLAMP, 1 - SIGNAL_CLAMP]`.
pub const SIGNAL_CLAMP: f64 = 1e-6;
/// Link-score sum below which the 0/0 split degenerates to a pure self-loop.
pub const SINGULAR_EPS: f64 = 1e-9;

/// Trainable parameters of the logistic gate and the exponent scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FmlParams<T> {
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
}

impl<T: Scalar> Default for FmlParams<T> {
    /// Gate acting as a soft step at `P = 0.5`.
    fn default() -> Self {
        FmlParams {
            alpha: T::one(),
            beta: T::from_f64_c(10.0),
            gamma: T::from_f64_c(0.5),
        }
    }
}

/// Per-node objectness and link-score grids, flattened column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSignals<T> {
    pub shape: GridShape,
    pub p: Vec<T>,
    pub s1: Vec<T>,
    pub s2: Vec<T>,
    pub s3: Vec<T>,
}

impl<T: Scalar> NodeSignals<T> {
    pub fn new(shape: GridShape, p: Vec<T>, s1: Vec<T>, s2: Vec<T>, s3: Vec<T>) -> Result<Self> {
        let n = shape.node_count();
        for plane in [&p, &s1, &s2, &s3] {
            if plane.len() != n {
                return Err(Error::ShapeMismatch {
                    expected: n,
                    got: plane.len(),
                });
            }
        }
        Ok(NodeSignals { shape, p, s1, s2, s3 })
    }

    /// Uniform signal grids (useful as a neutral starting point).
    pub fn constant(shape: GridShape, p: T, s: T) -> Self {
        let n = shape.node_count();
        NodeSignals {
            shape,
            p: vec![p; n],
            s1: vec![s; n],
            s2: vec![s; n],
            s3: vec![s; n],
        }
    }
}

/// Upstream gradients with respect to the four flow planes.
#[derive(Debug, Clone)]
pub struct FlowMapGrad<T> {
    pub f0: Vec<T>,
    pub f1: Vec<T>,
    pub f2: Vec<T>,
    pub f3: Vec<T>,
}

impl<T: Scalar> FlowMapGrad<T> {
    pub fn zeros(n: usize) -> Self {
        FlowMapGrad {
            f0: vec![T::zero(); n],
            f1: vec![T::zero(); n],
            f2: vec![T::zero(); n],
            f3: vec![T::zero(); n],
        }
    }

    pub fn plane_mut(&mut self, k: usize) -> &mut Vec<T> {
        match k {
            0 => &mut self.f0,
            1 => &mut self.f1,
            2 => &mut self.f2,
            _ => &mut self.f3,
        }
    }
}

/// Gradients of a scalar cost with respect to signals and parameters.
#[derive(Debug, Clone)]
pub struct FmlGradients<T> {
    pub d_p: Vec<T>,
    pub d_s1: Vec<T>,
    pub d_s2: Vec<T>,
    pub d_s3: Vec<T>,
    pub d_alpha: T,
    pub d_beta: T,
    pub d_gamma: T,
}

/// Logistic gate `mu(x) = 1 / (1 + exp(-beta (x - gamma)))`.
pub fn mu<T: Scalar>(x: T, params: &FmlParams<T>) -> T {
    T::one() / (T::one() + (-params.beta * (x - params.gamma)).exp())
}

#[inline]
fn clamp_signal<T: Scalar>(x: T) -> T {
    let lo = T::from_f64_c(SIGNAL_CLAMP);
    let hi = T::one() - lo;
    x.max(lo).min(hi)
}

/// Everything the forward map computes for one node.
struct NodeEval<T> {
    singular: bool,
    p: T,
    s: [T; 3],
    mu_v: T,
    q: T,
    r2: T,
    t_s: T,
    f0: T,
}

fn eval_node<T: Scalar>(
    p_raw: T,
    s1_raw: T,
    s2_raw: T,
    s3_raw: T,
    params: &FmlParams<T>,
) -> NodeEval<T> {
    if s1_raw + s2_raw + s3_raw < T::from_f64_c(SINGULAR_EPS) {
        return NodeEval {
            singular: true,
            p: p_raw,
            s: [s1_raw, s2_raw, s3_raw],
            mu_v: T::zero(),
            q: T::zero(),
            r2: T::zero(),
            t_s: T::zero(),
            f0: T::one(),
        };
    }
    let p = clamp_signal(p_raw);
    let s = [clamp_signal(s1_raw), clamp_signal(s2_raw), clamp_signal(s3_raw)];
    let mu_v = mu(T::one() - p, params);
    let q = T::one() - mu_v;
    let r2 = s[0] * s[0] + s[1] * s[1] + s[2] * s[2];
    let t_s = s[0] + s[1] + s[2];
    let f0 = (-params.alpha * q * r2).exp();
    NodeEval {
        singular: false,
        p,
        s,
        mu_v,
        q,
        r2,
        t_s,
        f0,
    }
}

/// Maps signals to stochastic flow maps. The output always satisfies
/// `f0 + f1 + f2 + f3 = 1` per node.
pub fn fml_forward<T: Scalar>(sig: &NodeSignals<T>, params: &FmlParams<T>) -> FlowMaps<T> {
    let shape = sig.shape;
    let mut out = FlowMaps::isolated(shape);
    for m in 0..shape.node_count() {
        let e = eval_node(sig.p[m], sig.s1[m], sig.s2[m], sig.s3[m], params);
        if e.singular {
            continue; // already f0 = 1, rest 0
        }
        let residue = T::one() - e.f0;
        out.plane_mut(0)[m] = e.f0;
        for k in 0..3 {
            out.plane_mut(k + 1)[m] = residue * e.s[k] / e.t_s;
        }
    }
    out
}

/// Chain-rule partials of a scalar cost through the flow mapping layer.
///
/// Parameter gradients are summed over all nodes. Gradients vanish at
/// singular nodes and with respect to inputs pinned by the clamp.
pub fn fml_backward<T: Scalar>(
    sig: &NodeSignals<T>,
    params: &FmlParams<T>,
    upstream: &FlowMapGrad<T>,
) -> FmlGradients<T> {
    let n = sig.shape.node_count();
    let mut g = FmlGradients {
        d_p: vec![T::zero(); n],
        d_s1: vec![T::zero(); n],
        d_s2: vec![T::zero(); n],
        d_s3: vec![T::zero(); n],
        d_alpha: T::zero(),
        d_beta: T::zero(),
        d_gamma: T::zero(),
    };
    let lo = T::from_f64_c(SIGNAL_CLAMP);
    let hi = T::one() - lo;

    for m in 0..n {
        let e = eval_node(sig.p[m], sig.s1[m], sig.s2[m], sig.s3[m], params);
        if e.singular {
            continue;
        }
        let u = [upstream.f0[m], upstream.f1[m], upstream.f2[m], upstream.f3[m]];
        // c = sum_k u_k S_k / T; w = effective upstream on f0.
        let mut c = T::zero();
        for k in 0..3 {
            c += u[k + 1] * e.s[k];
        }
        c /= e.t_s;
        let w = u[0] - c;

        let sig_gate = e.mu_v * (T::one() - e.mu_v);
        let x = T::one() - e.p;
        // f0 partials.
        let df0_dp = -params.alpha * e.r2 * e.f0 * params.beta * sig_gate;
        let df0_dalpha = -e.q * e.r2 * e.f0;
        let df0_dbeta = params.alpha * e.r2 * e.f0 * (x - params.gamma) * sig_gate;
        let df0_dgamma = -params.alpha * e.r2 * e.f0 * params.beta * sig_gate;
        let two = T::from_f64_c(2.0);
        let residue = T::one() - e.f0;

        if sig.p[m] > lo && sig.p[m] < hi {
            g.d_p[m] = w * df0_dp;
        }
        for j in 0..3 {
            let df0_dsj = -two * params.alpha * e.q * e.s[j] * e.f0;
            let direct = residue * (u[j + 1] - c) / e.t_s;
            let raw = [sig.s1[m], sig.s2[m], sig.s3[m]][j];
            if raw > lo && raw < hi {
                let d = w * df0_dsj + direct;
                match j {
                    0 => g.d_s1[m] = d,
                    1 => g.d_s2[m] = d,
                    _ => g.d_s3[m] = d,
                }
            }
        }
        g.d_alpha += w * df0_dalpha;
        g.d_beta += w * df0_dbeta;
        g.d_gamma += w * df0_dgamma;
    }
    g
}
