//! Markov clustering: iterated expand / inflate / prune on a column-stochastic
//! flow matrix, plus extraction of clusters from the converged iterate.
//!
//! Each iteration multiplies the running matrix by the initial matrix
//! (expansion), renormalizes columns (inflation) and zeroes entries below a
//! threshold (pruning). Columns of the converged matrix are one-hot at the
//! cluster's attractor node.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::grid::NodeId;
use crate::matrix::FlowMatrix;
use crate::scalar::Scalar;

/// Parameters of the clustering loop.
#[derive(Debug, Clone, Copy)]
pub struct MclConfig<T> {
    /// Maximum number of expand/inflate/prune iterations.
    pub max_iters: usize,
    /// Entries strictly below this value are zeroed after each inflation.
    pub prune_threshold: T,
    /// Early-stop tolerance on the max-abs change between successive
    /// post-prune iterates; `None` disables early stopping.
    pub convergence_eps: Option<T>,
    /// Re-normalize columns once after the loop so the output is stochastic.
    pub final_renormalize: bool,
}

impl<T: Scalar> MclConfig<T> {
    /// Training-time setup: threshold 0 keeps pruning equivalent to a ReLU.
    pub fn training(max_iters: usize) -> Self {
        MclConfig {
            max_iters,
            prune_threshold: T::zero(),
            convergence_eps: Some(T::from_f64_c(1e-6)),
            final_renormalize: true,
        }
    }

    /// Test-time setup with the 0.15 pruning threshold.
    pub fn inference(max_iters: usize) -> Self {
        MclConfig {
            prune_threshold: T::from_f64_c(0.15),
            ..MclConfig::training(max_iters)
        }
    }

    pub fn without_early_stop(mut self) -> Self {
        self.convergence_eps = None;
        self
    }
}

/// One recorded iteration: the matrix after each of the three stages.
#[derive(Debug, Clone)]
pub struct MclIteration<T> {
    pub expanded: FlowMatrix<T>,
    pub inflated: FlowMatrix<T>,
    pub pruned: FlowMatrix<T>,
}

/// Forward-pass record used by the backward pass.
#[derive(Debug, Clone)]
pub struct MclTape<T> {
    pub m0: FlowMatrix<T>,
    pub iterations: Vec<MclIteration<T>>,
    /// Final matrix, after the optional trailing renormalization.
    pub m_n: FlowMatrix<T>,
    pub final_renormalized: bool,
}

/// Output of [`markov_cluster`].
#[derive(Debug, Clone)]
pub struct MclResult<T> {
    pub m_n: FlowMatrix<T>,
    pub iterations_run: usize,
    pub tape: Option<MclTape<T>>,
}

/// Expansion step: `m_prev * m0`.
pub fn expand<T: Scalar>(m_prev: &FlowMatrix<T>, m0: &FlowMatrix<T>) -> Result<FlowMatrix<T>> {
    m_prev.matmul(m0)
}

/// Inflation step: divides each entry by its column sum.
pub fn inflate<T: Scalar>(m: &FlowMatrix<T>) -> Result<FlowMatrix<T>> {
    let mut out = m.clone();
    out.normalize_columns_in_place()?;
    Ok(out)
}

/// Pruning step: zeroes entries strictly below `threshold`.
pub fn prune<T: Scalar>(m: &FlowMatrix<T>, threshold: T) -> FlowMatrix<T> {
    let mut out = m.clone();
    out.prune_in_place(threshold);
    out
}

/// Runs the clustering loop for up to `cfg.max_iters` iterations.
///
/// Stops early once the post-prune iterate changes by less than
/// `cfg.convergence_eps`. With `record_tape` the per-stage matrices of every
/// executed iteration are kept for the backward pass.
pub fn markov_cluster<T: Scalar>(
    m0: &FlowMatrix<T>,
    cfg: &MclConfig<T>,
    record_tape: bool,
) -> Result<MclResult<T>> {
    assert!(cfg.max_iters >= 1, "at least one iteration required");
    let mut iterations = Vec::new();
    let mut current = m0.clone();
    let mut iterations_run = 0;

    for t in 0..cfg.max_iters {
        let expanded = expand(&current, m0)?;
        let mut inflated = expanded.clone();
        inflated.normalize_columns_in_place().map_err(|e| match e {
            Error::ZeroColumn { column, .. } => Error::ZeroColumn {
                column,
                iteration: Some(t + 1),
            },
            other => other,
        })?;
        let mut pruned = inflated.clone();
        pruned.prune_in_place(cfg.prune_threshold);

        let delta = cfg.convergence_eps.map(|_| pruned.max_abs_diff(&current));
        if record_tape {
            iterations.push(MclIteration {
                expanded,
                inflated,
                pruned: pruned.clone(),
            });
        }
        current = pruned;
        iterations_run = t + 1;
        if let (Some(eps), Some(d)) = (cfg.convergence_eps, delta) {
            if d < eps {
                break;
            }
        }
    }

    let m_n = if cfg.final_renormalize {
        inflate(&current)?
    } else {
        current
    };
    let tape = record_tape.then(|| MclTape {
        m0: m0.clone(),
        iterations,
        m_n: m_n.clone(),
        final_renormalized: cfg.final_renormalize,
    });
    Ok(MclResult {
        m_n,
        iterations_run,
        tape,
    })
}

/// Options for [`extract_clusters`].
#[derive(Debug, Clone, Copy)]
pub struct ExtractConfig {
    /// Clusters whose mean foreground probability falls below this value are
    /// demoted to background (only when a probability grid is supplied).
    pub fg_cutoff: f64,
    /// Clusters smaller than this are demoted to background.
    pub min_cluster_size: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            fg_cutoff: 0.5,
            min_cluster_size: 1,
        }
    }
}

/// Per-node clustering result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    /// Attractor of every node (column argmax).
    pub attractor: Vec<NodeId>,
    /// Non-background clusters, keyed by attractor, members ascending.
    pub clusters: BTreeMap<NodeId, Vec<NodeId>>,
    /// Background nodes, ascending.
    pub background: Vec<NodeId>,
}

impl ClusterAssignment {
    pub fn is_background(&self, node: NodeId) -> bool {
        self.background.binary_search(&node).is_ok()
    }
}

/// Reads clusters off a converged matrix.
///
/// Each node's attractor is the argmax of its column (ties broken towards the
/// lowest row). Nodes sharing an attractor form a cluster; a cluster counts as
/// background when it is a self-attracting singleton, is smaller than
/// `cfg.min_cluster_size`, or has mean foreground probability below
/// `cfg.fg_cutoff`.
pub fn extract_clusters<T: Scalar>(
    m_n: &FlowMatrix<T>,
    fg_prob: Option<&[T]>,
    cfg: &ExtractConfig,
) -> ClusterAssignment {
    let n = m_n.dim();
    if let Some(p) = fg_prob {
        assert_eq!(p.len(), n, "foreground grid does not match matrix");
    }
    let mut attractor = Vec::with_capacity(n);
    for j in 0..n {
        let mut best_row = j;
        let mut best_val = T::neg_infinity();
        for (r, v) in m_n.col(j) {
            if v > best_val {
                best_val = v;
                best_row = r;
            }
        }
        if best_val <= T::zero() {
            // Empty column: treat the node as isolated.
            best_row = j;
        }
        attractor.push(NodeId(best_row));
    }

    let mut groups: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for (m, &a) in attractor.iter().enumerate() {
        groups.entry(a).or_default().push(NodeId(m));
    }

    let mut clusters = BTreeMap::new();
    let mut background = Vec::new();
    for (a, members) in groups {
        let singleton_self = members.len() == 1 && members[0] == a;
        let too_small = members.len() < cfg.min_cluster_size;
        let low_fg = fg_prob.is_some_and(|p| {
            let mean = members
                .iter()
                .map(|m| p[m.0].to_f64_c())
                .sum::<f64>()
                / members.len() as f64;
            mean < cfg.fg_cutoff
        });
        if singleton_self || too_small || low_fg {
            background.extend(members);
        } else {
            clusters.insert(a, members);
        }
    }
    background.sort_unstable();
    ClusterAssignment {
        attractor,
        clusters,
        background,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{build_flow_matrix, FlowMaps};
    use crate::grid::GridShape;
    use crate::grid::NodeId;

    fn absorbing_pair() -> FlowMatrix<f64> {
        // 2x1 grid: top node flows fully to the absorbing bottom node.
        let shape = GridShape::new(2, 1, 16);
        let mut fm = FlowMaps::<f64>::isolated(shape);
        fm.set_node_flows(NodeId(0), [0.0, 1.0, 0.0, 0.0]);
        build_flow_matrix(&fm).unwrap()
    }

    #[test]
    fn expand_identity_is_noop() {
        let m0 = absorbing_pair();
        let id = FlowMatrix::identity(2);
        let e = expand(&id, &m0).unwrap();
        assert_eq!(e.max_abs_diff(&m0), 0.0);
    }

    #[test]
    fn expand_absorbing_fixed_point() {
        let m0 = FlowMatrix::from_triplets(2, vec![(1, 0, 1.0), (1, 1, 1.0)]);
        let sq = expand(&m0, &m0).unwrap();
        assert_eq!(sq.max_abs_diff(&m0), 0.0);
    }

    #[test]
    fn inflate_normalizes_and_is_idempotent() {
        let m = FlowMatrix::<f64>::from_triplets(2, vec![(0, 0, 1.0), (1, 0, 3.0), (0, 1, 2.0)]);
        let i1 = inflate(&m).unwrap();
        assert!((i1.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((i1.get(1, 0) - 0.75).abs() < 1e-15);
        let i2 = inflate(&i1).unwrap();
        assert!(i2.max_abs_diff(&i1) < 1e-12);
    }

    #[test]
    fn inflate_idempotent_on_random_matrix() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 9;
        let data: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..1.0)).collect();
        let m = FlowMatrix::from_dense_data(n, data);
        let i1 = inflate(&m).unwrap();
        let i2 = inflate(&i1).unwrap();
        assert!(i2.max_abs_diff(&i1) < 1e-12);
    }

    #[test]
    fn prune_zero_threshold_is_relu_noop() {
        let m = absorbing_pair();
        let p = prune(&m, 0.0);
        assert_eq!(p.max_abs_diff(&m), 0.0);
    }

    #[test]
    fn prune_one_hot_fixed_point() {
        let m = FlowMatrix::from_triplets(3, vec![(2, 0, 1.0), (2, 1, 1.0), (2, 2, 1.0)]);
        let p = prune(&m, 0.5);
        assert_eq!(p.max_abs_diff(&m), 0.0);
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let m0 = FlowMatrix::<f64>::identity(4);
        let out = markov_cluster(&m0, &MclConfig::training(8), false).unwrap();
        assert_eq!(out.iterations_run, 1);
        assert_eq!(out.m_n.max_abs_diff(&m0), 0.0);
    }

    #[test]
    fn absorbing_pair_converges_to_indicator() {
        let m0 = absorbing_pair();
        let out = markov_cluster(&m0, &MclConfig::training(8), false).unwrap();
        for j in 0..2 {
            assert_eq!(out.m_n.get(1, j), 1.0);
            assert_eq!(out.m_n.get(0, j), 0.0);
        }
    }

    #[test]
    fn zero_column_error_carries_iteration() {
        // Uniform doubly-connected pair: iteration 1 leaves every entry at
        // 0.5, a 0.95 threshold prunes both columns empty, and iteration 2's
        // inflate hits the zero column.
        let m0 = FlowMatrix::<f64>::from_triplets(
            2,
            vec![(0, 0, 0.5), (1, 0, 0.5), (0, 1, 0.5), (1, 1, 0.5)],
        );
        let cfg = MclConfig {
            max_iters: 3,
            prune_threshold: 0.95,
            convergence_eps: None,
            final_renormalize: false,
        };
        let err = markov_cluster(&m0, &cfg, false).unwrap_err();
        match err {
            Error::ZeroColumn { column, iteration } => {
                assert_eq!(column, 0);
                assert_eq!(iteration, Some(2));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn extract_identity_is_all_background() {
        let m = FlowMatrix::<f64>::identity(5);
        let a = extract_clusters(&m, None, &ExtractConfig::default());
        assert!(a.clusters.is_empty());
        assert_eq!(a.background.len(), 5);
        for (m_id, &attr) in a.attractor.iter().enumerate() {
            assert_eq!(attr, NodeId(m_id));
        }
    }

    #[test]
    fn argmax_tie_breaks_to_lowest_row() {
        let m = FlowMatrix::from_triplets(
            8,
            (0..8)
                .flat_map(|j| vec![(3usize, j, 0.5), (7usize, j, 0.5)])
                .collect::<Vec<_>>(),
        );
        let a = extract_clusters(&m, None, &ExtractConfig::default());
        for &attr in &a.attractor {
            assert_eq!(attr, NodeId(3));
        }
    }

    #[test]
    fn tape_records_every_executed_iteration() {
        let m0 = absorbing_pair();
        let out = markov_cluster(&m0, &MclConfig::training(8), true).unwrap();
        let tape = out.tape.unwrap();
        assert_eq!(tape.iterations.len(), out.iterations_run);
        assert!(tape.final_renormalized);
    }
}
