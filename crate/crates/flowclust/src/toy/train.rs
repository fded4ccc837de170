//! End-to-end training loop: predictor -> flow mapping -> flow matrix ->
//! Markov clustering -> flow + object losses, backpropagated all the way to
//! the predictor weights, with momentum SGD.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::boxgen::{clusters_to_boxes, evaluate_detections, DetectionScore, PcaBoxParams};
use crate::error::{Error, Result};
use crate::flow::{build_flow_matrix, flow_matrix_backward};
use crate::fml::{fml_backward, fml_forward, FmlParams};
use crate::grad::{flow_loss, mcl_backward, GradMode};
use crate::labeling::{build_flow_label, ObjectMask};
use crate::mcl::{extract_clusters, markov_cluster, ExtractConfig, MclConfig};
use crate::scalar::Scalar;
use crate::toy::predictor::{PredictorGrads, ToyPredictor};
use crate::toy::scene::{sample_scene, SceneConfig, SceneSample, FEATURE_DIM};

/// Lower bound kept on the positive flow-mapping parameters during SGD.
const FML_PARAM_FLOOR: f64 = 1e-3;

/// Everything the training loop needs.
#[derive(Debug, Clone)]
pub struct TrainConfig<T> {
    pub scene: SceneConfig,
    pub hidden: usize,
    pub train_mcl: MclConfig<T>,
    pub eval_mcl: MclConfig<T>,
    pub grad_mode: GradMode,
    pub lr: T,
    /// The learning rate is divided by 10 after this fraction of the steps.
    pub lr_decay_after: Option<f64>,
    pub momentum: T,
    pub steps: usize,
    /// Weight of the object cost in the total (1 = plain sum).
    pub co_weight: T,
    /// Largest absolute entry allowed in the clustering gradient; larger
    /// gradients are rescaled (the cross-entropy blows up as probabilities
    /// approach the log clamp).
    pub grad_clip: Option<T>,
    /// Learning-rate multiplier for the flow-mapping parameters; they sit
    /// near a good operating point at initialization and destabilize the
    /// gate if driven as hard as the predictor weights.
    pub fml_lr_scale: T,
    pub eval_scenes: usize,
    pub seed: u64,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig {
            scene: SceneConfig::training_curriculum(),
            hidden: 16,
            train_mcl: MclConfig::training(5),
            eval_mcl: MclConfig::inference(8),
            grad_mode: GradMode::Exact,
            lr: T::from_f64_c(1e-2),
            lr_decay_after: Some(2.0 / 3.0),
            momentum: T::from_f64_c(0.9),
            steps: 2000,
            co_weight: T::one(),
            grad_clip: Some(T::from_f64_c(100.0)),
            fml_lr_scale: T::from_f64_c(0.5),
            eval_scenes: 50,
            seed: 0,
        }
    }
}

/// Losses of one step; the total is the (weighted) sum of the parts.
#[derive(Debug, Clone, Copy)]
pub struct LossRecord<T> {
    pub c_o: T,
    pub c_f: T,
    pub c_total: T,
}

/// Mutable training state: model, momentum buffers, loss history.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub model: ToyPredictor<T>,
    vel: PredictorGrads<T>,
    vel_fml: [T; 3],
    pub step: usize,
    pub history: Vec<LossRecord<T>>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(model: ToyPredictor<T>) -> Self {
        let vel = PredictorGrads::zeros(model.feat_dim, model.hidden);
        TrainState {
            model,
            vel,
            vel_fml: [T::zero(); 3],
            step: 0,
            history: Vec::new(),
        }
    }
}

/// Held-out evaluation summary.
#[derive(Debug, Clone)]
pub struct EvalReport {
    /// Pooled over all held-out scenes (match list left empty).
    pub detection: DetectionScore,
    /// Fraction of nodes with the correct background flag and attractor.
    pub node_accuracy: f64,
    pub scenes: usize,
}

/// Per-node binary cross-entropy of the objectness grid, with its gradient.
pub fn object_loss<T: Scalar>(p: &[T], y_o: &ObjectMask) -> (T, Vec<T>) {
    assert_eq!(p.len(), y_o.fg.len());
    let n = p.len();
    let clamp = T::from_f64_c(crate::grad::LOG_CLAMP);
    let inv_n = T::one() / T::from_usize_c(n);
    let mut total = T::zero();
    let mut grad = vec![T::zero(); n];
    for m in 0..n {
        let y = if y_o.fg[m] { T::one() } else { T::zero() };
        let pv = p[m];
        total += -(y * pv.max(clamp).ln() + (T::one() - y) * (T::one() - pv).max(clamp).ln());
        grad[m] = (-y / pv.max(clamp) + (T::one() - y) / (T::one() - pv).max(clamp)) * inv_n;
    }
    (total * inv_n, grad)
}

/// Per-scene seed derivation (distinct streams for training and evaluation).
pub fn scene_seed(base: u64, index: u64, held_out: bool) -> u64 {
    let salt = if held_out { 0x9E3779B97F4A7C15 } else { 0xD1B54A32D192ED03 };
    base ^ (index.wrapping_add(1)).wrapping_mul(salt)
}

/// One SGD-with-momentum step on one scene. Appends to the loss history and
/// returns the step's losses.
pub fn train_step<T: Scalar>(
    state: &mut TrainState<T>,
    sample: &SceneSample<T>,
    cfg: &TrainConfig<T>,
) -> Result<LossRecord<T>> {
    let label = build_flow_label(&sample.mask);
    let y_o = sample.mask.object_mask();

    // Forward.
    let (signals, cache) = state.model.forward(&sample.features)?;
    let flows = fml_forward(&signals, &state.model.fml);
    let m0 = build_flow_matrix(&flows)?;
    let run = markov_cluster(&m0, &cfg.train_mcl, true)?;
    let tape = run.tape.as_ref().expect("tape requested");
    let fl = flow_loss(&run.m_n, &label)?;
    let (c_o, d_p_obj) = object_loss(&signals.p, &y_o);
    let record = LossRecord {
        c_o,
        c_f: fl.c_f,
        c_total: cfg.co_weight * c_o + fl.c_f,
    };
    if !record.c_total.is_finite() {
        return Err(Error::NonFiniteLoss { step: state.step });
    }

    // Backward.
    let mut g_m0 = mcl_backward(tape, &label, cfg.grad_mode)?;
    if let Some(clip) = cfg.grad_clip {
        let peak = g_m0.max_abs();
        if peak > clip {
            let s = clip / peak;
            for v in g_m0.data_mut() {
                *v *= s;
            }
        }
    }
    let g_flows = flow_matrix_backward(&g_m0, &sample.mask.shape);
    let mut g_sig = fml_backward(&signals, &state.model.fml, &g_flows);
    for (gp, &go) in g_sig.d_p.iter_mut().zip(&d_p_obj) {
        *gp += cfg.co_weight * go;
    }
    let g_weights = state.model.backward(&sample.features, &cache, &g_sig);

    // Momentum SGD update.
    state.vel.momentum_update(cfg.momentum, &g_weights);
    let decayed = cfg
        .lr_decay_after
        .is_some_and(|frac| (state.step as f64) >= frac * cfg.steps as f64);
    let lr = if decayed {
        cfg.lr * T::from_f64_c(0.1)
    } else {
        cfg.lr
    };
    let apply = |w: &mut [T], v: &[T]| {
        for (wv, &vv) in w.iter_mut().zip(v) {
            *wv -= lr * vv;
        }
    };
    apply(state.model.w1.data_mut(), state.vel.w1.data());
    apply(&mut state.model.b1, &state.vel.b1);
    apply(state.model.w2.data_mut(), state.vel.w2.data());
    apply(&mut state.model.b2, &state.vel.b2);

    let mu = cfg.momentum;
    let g_fml = [g_sig.d_alpha, g_sig.d_beta, g_sig.d_gamma];
    for (v, g) in state.vel_fml.iter_mut().zip(g_fml) {
        *v = mu * *v + g;
    }
    let fml_lr = lr * cfg.fml_lr_scale;
    let floor = T::from_f64_c(FML_PARAM_FLOOR);
    let FmlParams { alpha, beta, gamma } = &mut state.model.fml;
    *alpha = (*alpha - fml_lr * state.vel_fml[0]).max(floor);
    *beta = (*beta - fml_lr * state.vel_fml[1]).max(floor);
    // The gate thresholds 1 - P, which lives in (0, 1); outside that range
    // the gate saturates for every node and the pipeline degenerates.
    *gamma = (*gamma - fml_lr * state.vel_fml[2]).clamp(T::zero(), T::one());

    state.step += 1;
    state.history.push(record);
    Ok(record)
}

/// Trains a fresh model on the configured curriculum.
pub fn train<T: Scalar>(cfg: &TrainConfig<T>) -> Result<TrainState<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ToyPredictor::random(FEATURE_DIM, cfg.hidden, 0.1, &mut rng);
    model.fml.alpha = T::from_f64_c(3.0);
    let mut state = TrainState::new(model);
    for step in 0..cfg.steps {
        let sample = sample_scene(&cfg.scene, scene_seed(cfg.seed, step as u64, false))?;
        train_step(&mut state, &sample, cfg)?;
    }
    Ok(state)
}

/// Runs the inference path on held-out scenes and scores it.
pub fn evaluate_model<T: Scalar>(
    model: &ToyPredictor<T>,
    cfg: &TrainConfig<T>,
) -> Result<EvalReport> {
    // Generated boxes always span at least two nodes.
    let extract_cfg = ExtractConfig {
        min_cluster_size: 2,
        ..ExtractConfig::default()
    };
    let pca = PcaBoxParams {
        cell_size: cfg.scene.shape.stride as f64,
        ..PcaBoxParams::default()
    };
    let mut matches = 0usize;
    let mut pred_total = 0usize;
    let mut gt_total = 0usize;
    let mut correct_nodes = 0usize;
    let mut total_nodes = 0usize;

    for i in 0..cfg.eval_scenes {
        let sample: SceneSample<T> =
            sample_scene(&cfg.scene, scene_seed(cfg.seed, i as u64, true))?;
        let signals = model.predict(&sample.features)?;
        let flows = fml_forward(&signals, &model.fml);
        let m0 = build_flow_matrix(&flows)?;
        let run = markov_cluster(&m0, &cfg.eval_mcl, false)?;
        let assignment = extract_clusters(&run.m_n, Some(&signals.p), &extract_cfg);

        let gt_bg = sample.mask.object_mask();
        for m in 0..sample.mask.index.len() {
            let node = crate::grid::NodeId(m);
            let pred_bg = assignment.is_background(node);
            let truth_bg = !gt_bg.fg[m];
            let ok = if truth_bg || pred_bg {
                pred_bg == truth_bg
            } else {
                assignment.attractor[m].0 == sample.mask.index[m] as usize
            };
            correct_nodes += ok as usize;
        }
        total_nodes += sample.mask.index.len();

        let pred_boxes: Vec<_> = clusters_to_boxes(&assignment, &cfg.scene.shape, &pca)
            .into_iter()
            .map(|cb| cb.rect)
            .collect();
        let score = evaluate_detections(&pred_boxes, &sample.boxes, 0.5);
        matches += score.matches.len();
        pred_total += pred_boxes.len();
        gt_total += sample.boxes.len();
    }

    let precision = if pred_total == 0 {
        if gt_total == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        matches as f64 / pred_total as f64
    };
    let recall = if gt_total == 0 {
        1.0
    } else {
        matches as f64 / gt_total as f64
    };
    let f_score = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(EvalReport {
        detection: DetectionScore {
            precision,
            recall,
            f_score,
            matches: Vec::new(),
        },
        node_accuracy: correct_nodes as f64 / total_nodes as f64,
        scenes: cfg.eval_scenes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> TrainConfig<f64> {
        TrainConfig {
            scene: SceneConfig {
                shape: crate::grid::GridShape::square(8),
                box_count: (1, 2),
                span_rows: (2, 3),
                span_cols: (2, 3),
                angles: vec![0.0],
                noise: 0.05,
                min_gap_nodes: 1,
                seed: 0,
            },
            hidden: 8,
            train_mcl: MclConfig::training(4),
            eval_mcl: MclConfig::inference(8),
            steps: 0,
            eval_scenes: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn object_loss_analytic_values() {
        let shape = crate::grid::GridShape::new(2, 2, 16);
        let y = ObjectMask {
            shape,
            fg: vec![true, false, true, false],
        };
        // Exact prediction: loss at the clamp floor.
        let (c, _) = object_loss(&[1.0, 0.0, 1.0, 0.0], &y);
        assert!(c <= 1e-9);
        // Uniform half: ln 2.
        let (c, g) = object_loss(&[0.5; 4], &y);
        assert!((c - 2f64.ln()).abs() < 1e-12);
        // Gradient sign: foreground pulls up, background pushes down.
        assert!(g[0] < 0.0 && g[1] > 0.0);
    }

    #[test]
    fn object_loss_gradient_matches_fd() {
        let shape = crate::grid::GridShape::new(2, 2, 16);
        let y = ObjectMask {
            shape,
            fg: vec![true, false, false, true],
        };
        let p: [f64; 4] = [0.3, 0.8, 0.4, 0.6];
        let (_, g) = object_loss(&p, &y);
        let eps = 1e-6;
        for m in 0..4 {
            let mut plus = p;
            let mut minus = p;
            plus[m] += eps;
            minus[m] -= eps;
            let fd = (object_loss(&plus, &y).0 - object_loss(&minus, &y).0) / (2.0 * eps);
            assert!((g[m] - fd).abs() / fd.abs().max(1e-4) < 1e-5);
        }
    }

    #[test]
    fn zero_lr_keeps_model_fixed() {
        let mut cfg = small_cfg();
        cfg.lr = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = ToyPredictor::<f64>::random(FEATURE_DIM, cfg.hidden, 0.1, &mut rng);
        let mut state = TrainState::new(model.clone());
        let sample = sample_scene(&cfg.scene, 3).unwrap();
        train_step(&mut state, &sample, &cfg).unwrap();
        assert_eq!(state.model, model);
        assert_eq!(state.history.len(), 1);
    }

    #[test]
    fn total_is_sum_of_parts() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = ToyPredictor::<f64>::random(FEATURE_DIM, cfg.hidden, 0.1, &mut rng);
        let mut state = TrainState::new(model);
        for s in 0..5 {
            let sample = sample_scene(&cfg.scene, 100 + s).unwrap();
            let rec = train_step(&mut state, &sample, &cfg).unwrap();
            assert_eq!(rec.c_total, rec.c_o + rec.c_f);
        }
    }

    #[test]
    fn untrained_model_scores_near_zero_f() {
        let cfg = small_cfg();
        let model = ToyPredictor::<f64>::zeros(FEATURE_DIM, cfg.hidden);
        let report = evaluate_model(&model, &cfg).unwrap();
        assert!(report.detection.f_score < 0.05);
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let mut cfg = small_cfg();
        cfg.steps = 6;
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        for (ra, rb) in a.history.iter().zip(&b.history) {
            assert_eq!(ra.c_total, rb.c_total);
        }
        assert_eq!(a.model, b.model);
    }

    /// Directional finite-difference check through the entire pipeline:
    /// predictor -> flow mapping -> matrix -> clustering -> total cost.
    #[test]
    fn end_to_end_gradient_matches_directional_fd() {
        let cfg = TrainConfig::<f64> {
            scene: SceneConfig {
                shape: crate::grid::GridShape::square(4),
                box_count: (1, 1),
                span_rows: (2, 2),
                span_cols: (2, 3),
                angles: vec![0.0],
                noise: 0.05,
                min_gap_nodes: 1,
                seed: 0,
            },
            hidden: 6,
            train_mcl: MclConfig::training(2).without_early_stop(),
            ..TrainConfig::default()
        };
        let sample = sample_scene::<f64>(&cfg.scene, 21).unwrap();
        let label = build_flow_label(&sample.mask);
        let y_o = sample.mask.object_mask();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = ToyPredictor::<f64>::random(FEATURE_DIM, cfg.hidden, 0.3, &mut rng);

        let total_of = |model: &ToyPredictor<f64>| -> f64 {
            let sig = model.predict(&sample.features).unwrap();
            let flows = fml_forward(&sig, &model.fml);
            let m0 = build_flow_matrix(&flows).unwrap();
            let run = markov_cluster(&m0, &cfg.train_mcl, false).unwrap();
            let c_f = flow_loss(&run.m_n, &label).unwrap().c_f;
            let (c_o, _) = object_loss(&sig.p, &y_o);
            c_o + c_f
        };

        // Analytic gradient of all weights.
        let (signals, cache) = model.forward(&sample.features).unwrap();
        let flows = fml_forward(&signals, &model.fml);
        let m0 = build_flow_matrix(&flows).unwrap();
        let run = markov_cluster(&m0, &cfg.train_mcl, true).unwrap();
        let g_m0 = mcl_backward(run.tape.as_ref().unwrap(), &label, GradMode::Exact).unwrap();
        let g_flows = flow_matrix_backward(&g_m0, &sample.mask.shape);
        let mut g_sig = fml_backward(&signals, &model.fml, &g_flows);
        let (_, d_p_obj) = object_loss(&signals.p, &y_o);
        for (gp, &go) in g_sig.d_p.iter_mut().zip(&d_p_obj) {
            *gp += go;
        }
        let g = model.backward(&sample.features, &cache, &g_sig);

        // Random direction over every weight block; the directional
        // derivative is <g, d>.
        use rand::Rng;
        let mut make_dir = |len: usize| -> Vec<f64> {
            (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let d_w1 = make_dir(g.w1.data().len());
        let d_b1 = make_dir(g.b1.len());
        let d_w2 = make_dir(g.w2.data().len());
        let d_b2 = make_dir(g.b2.len());
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let analytic =
            dot(&d_w1, g.w1.data()) + dot(&d_b1, &g.b1) + dot(&d_w2, g.w2.data()) + dot(&d_b2, &g.b2);

        let eps = 1e-6;
        let shifted = |s: f64| -> ToyPredictor<f64> {
            let mut m = model.clone();
            let axpy = |dst: &mut [f64], dir: &[f64]| {
                for (d, &v) in dst.iter_mut().zip(dir) {
                    *d += s * v;
                }
            };
            axpy(m.w1.data_mut(), &d_w1);
            axpy(&mut m.b1, &d_b1);
            axpy(m.w2.data_mut(), &d_w2);
            axpy(&mut m.b2, &d_b2);
            m
        };
        let fd = (total_of(&shifted(eps)) - total_of(&shifted(-eps))) / (2.0 * eps);
        assert!(
            (fd - analytic).abs() / analytic.abs().max(1e-6) < 1e-3,
            "fd {fd} vs analytic {analytic}"
        );
    }
}
