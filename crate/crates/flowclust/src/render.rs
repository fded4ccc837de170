//! Static SVG rendering of scenes: lattice nodes, flow edges with widths
//! proportional to the flow value, clusters colored by attractor, and
//! predicted (yellow) versus ground-truth (red) boxes.

use std::fmt::Write as _;

use crate::flow::FlowMaps;
use crate::geom::RotatedBox;
use crate::grid::{FlowDir, GridShape};
use crate::mcl::ClusterAssignment;
use crate::scalar::Scalar;

/// Stroke width mapping: `width = MIN + flow * RANGE`.
const EDGE_WIDTH_MIN: f64 = 0.2;
const EDGE_WIDTH_RANGE: f64 = 3.0;
/// Flows below this are not drawn at all.
const EDGE_FLOW_CUTOFF: f64 = 1e-3;

/// Everything the renderer may draw; only `shape` is required.
#[derive(Debug, Clone, Copy, Default)]
pub struct RenderInput<'a, T> {
    pub flows: Option<&'a FlowMaps<T>>,
    pub assignment: Option<&'a ClusterAssignment>,
    pub pred_boxes: Option<&'a [RotatedBox]>,
    pub gt_boxes: Option<&'a [RotatedBox]>,
}

impl<'a, T> RenderInput<'a, T> {
    pub fn empty() -> Self {
        RenderInput {
            flows: None,
            assignment: None,
            pred_boxes: None,
            gt_boxes: None,
        }
    }
}

fn cluster_color(index: usize) -> String {
    // Fixed golden-angle palette: deterministic and well spread.
    let hue = (index as f64 * 137.508) % 360.0;
    format!("hsl({hue:.1},70%,45%)")
}

/// Renders the scene to an SVG document. Output is deterministic for a
/// fixed input.
pub fn render_svg<T: Scalar>(shape: &GridShape, input: &RenderInput<'_, T>) -> String {
    let u = shape.stride as f64;
    let width = shape.cols as f64 * u;
    let height = shape.rows as f64 * u;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#
    );

    // Flow edges under the nodes.
    if let Some(flows) = input.flows {
        for m in shape.nodes() {
            let [x, y] = shape.node_center(m);
            let nf = flows.node_flows(m);
            for (k, dir) in FlowDir::MOVES.iter().enumerate() {
                let f = nf[k + 1].to_f64_c();
                if f < EDGE_FLOW_CUTOFF {
                    continue;
                }
                if let Some(nb) = shape.neighbor(m, *dir) {
                    let [nx, ny] = shape.node_center(nb);
                    let w = EDGE_WIDTH_MIN + f * EDGE_WIDTH_RANGE;
                    let _ = writeln!(
                        svg,
                        r#"<line x1="{x:.2}" y1="{y:.2}" x2="{nx:.2}" y2="{ny:.2}" stroke="steelblue" stroke-width="{w:.3}"/>"#
                    );
                }
            }
            // Self-loop arc for strongly self-looping nodes.
            let f0 = nf[0].to_f64_c();
            if f0 >= EDGE_FLOW_CUTOFF {
                let w = EDGE_WIDTH_MIN + f0 * EDGE_WIDTH_RANGE;
                let r = u * 0.22;
                let _ = writeln!(
                    svg,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="{r:.2}" fill="none" stroke="gray" stroke-width="{w:.3}"/>"#,
                    x + u * 0.25,
                    y - u * 0.25,
                );
            }
        }
    }

    // Nodes, colored by attractor when a clustering is given.
    for m in shape.nodes() {
        let [x, y] = shape.node_center(m);
        let (fill, radius) = match input.assignment {
            Some(a) if !a.is_background(m) => {
                let attractor = a.attractor[m.0];
                let idx = a
                    .clusters
                    .keys()
                    .position(|&k| k == attractor)
                    .unwrap_or(0);
                (cluster_color(idx), u * 0.18)
            }
            _ => ("lightgray".to_string(), u * 0.10),
        };
        let _ = writeln!(
            svg,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="{radius:.2}" fill="{fill}"/>"#
        );
    }

    let mut draw_boxes = |boxes: &[RotatedBox], stroke: &str| {
        for b in boxes {
            let pts = b
                .corners()
                .iter()
                .map(|c| format!("{:.2},{:.2}", c[0], c[1]))
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(
                svg,
                r#"<polygon points="{pts}" fill="none" stroke="{stroke}" stroke-width="1.5"/>"#
            );
        }
    };
    if let Some(gt) = input.gt_boxes {
        draw_boxes(gt, "red");
    }
    if let Some(pred) = input.pred_boxes {
        draw_boxes(pred, "gold");
    }
    svg.push_str("</svg>\n");
    svg
}
