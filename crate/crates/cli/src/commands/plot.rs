//! `ocra plot`: standalone SVG figures (loss curve, top-down trajectory
//! overlay, force tracking) with the underlying data as CSV.

use std::path::Path;

use ocra_core::control::camera_to_robot;
use ocra_core::io::write_atomic;
use ocra_core::synth::read_manifest;
use ocra_core::{Error, Result, Se3Transform};

use crate::config::PipelineConfig;

use super::rollout::read_rollout;
use super::{manifest_path, plot_dir, rollout_path, train_log_path};

struct Series<'a> {
    name: &'a str,
    color: &'a str,
    points: Vec<(f64, f64)>,
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;

/// Minimal line-plot SVG: axes, bounds labels, one polyline per series, a
/// text legend. Empty series produce an empty-axes plot.
fn render_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            xs.push(x);
            ys.push(y);
        }
    }
    let bound = |v: &[f64]| -> (f64, f64) {
        if v.is_empty() {
            return (0.0, 1.0);
        }
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if (hi - lo).abs() < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = bound(&xs);
    let (y0, y1) = bound(&ys);
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" \
         width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{title}</text>\n",
        W / 2.0
    ));
    // axes
    svg.push_str(&format!(
        "  <line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n  \
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN,
        t = MARGIN
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{x_label}</text>\n",
        W / 2.0,
        H - 16.0
    ));
    svg.push_str(&format!(
        "  <text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" \
         transform=\"rotate(-90 16 {})\">{y_label}</text>\n",
        H / 2.0,
        H / 2.0
    ));
    // bounds labels
    svg.push_str(&format!(
        "  <text x=\"{m}\" y=\"{b}\" font-size=\"10\">{x0:.3}</text>\n  \
         <text x=\"{r}\" y=\"{b}\" text-anchor=\"end\" font-size=\"10\">{x1:.3}</text>\n  \
         <text x=\"{m2}\" y=\"{bb}\" text-anchor=\"end\" font-size=\"10\">{y0:.3}</text>\n  \
         <text x=\"{m2}\" y=\"{t}\" text-anchor=\"end\" font-size=\"10\">{y1:.3}</text>\n",
        m = MARGIN,
        b = H - MARGIN + 14.0,
        r = W - MARGIN,
        m2 = MARGIN - 6.0,
        bb = H - MARGIN,
        t = MARGIN + 4.0
    ));
    for (i, s) in series.iter().enumerate() {
        if !s.points.is_empty() {
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            svg.push_str(&format!(
                "  <polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                s.color,
                pts.join(" ")
            ));
        }
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{}\">{}</text>\n",
            W - MARGIN - 140.0,
            MARGIN + 16.0 + 14.0 * i as f64,
            s.color,
            s.name
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn read_loss_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line.trim() != "step,loss" {
                return Err(Error::format("train log", format!("bad header: {line}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split(',');
        let step: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("train log", format!("bad row: {line}")))?;
        let loss: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("train log", format!("bad row: {line}")))?;
        rows.push((step, loss));
    }
    Ok(rows)
}

pub fn run(config: &PipelineConfig, root: &Path) -> Result<()> {
    let dir = plot_dir(root);
    std::fs::create_dir_all(&dir)?;
    let mut produced = 0;

    let loss_file = train_log_path(root);
    if loss_file.exists() {
        let rows = read_loss_csv(&loss_file)?;
        let mut csv = String::from("step,loss\n");
        for &(s, l) in &rows {
            csv.push_str(&format!("{s},{l:.17e}\n"));
        }
        write_atomic(&dir.join("loss.csv"), csv.as_bytes())?;
        let svg = render_svg(
            "Training loss",
            "step",
            "loss",
            &[Series {
                name: "loss",
                color: "#1f77b4",
                points: rows,
            }],
        );
        write_atomic(&dir.join("loss.svg"), svg.as_bytes())?;
        produced += 1;
    } else {
        println!("plot: no train log, skipping loss plot");
    }

    let manifest_file = manifest_path(root);
    if manifest_file.exists() && rollout_path(root, 0).exists() {
        let manifest = read_manifest(&manifest_file)?;
        let mut traj_csv = String::from("rollout,step,pred_x,pred_y,gt_x,gt_y\n");
        let mut force_csv = String::from("rollout,step,reference,measured\n");
        let mut pred_series: Vec<Series> = Vec::new();
        let mut gt_points: Vec<(f64, f64)> = Vec::new();
        let mut force_ref: Vec<(f64, f64)> = Vec::new();
        let mut force_meas: Vec<(f64, f64)> = Vec::new();
        let colors = ["#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"];
        for r in 0..config.rollout.n_rollouts {
            let path = rollout_path(root, r);
            if !path.exists() {
                break;
            }
            let (header, steps) = read_rollout(&path)?;
            let mut cumulative = Se3Transform::identity();
            let mut pred = Vec::with_capacity(steps.len());
            for (i, line) in steps.iter().enumerate() {
                pred.push((line.pose.translation.x, line.pose.translation.y));
                let gt = if i < manifest.scene.trajectory.len() {
                    cumulative = manifest.scene.trajectory[i].compose(&cumulative);
                    camera_to_robot(&cumulative, &header.extrinsic)
                        .compose(&header.extrinsic.compose(&header.start_world))
                } else {
                    line.pose
                };
                if r == 0 {
                    gt_points.push((gt.translation.x, gt.translation.y));
                    force_ref.push((line.step as f64, line.reference_force));
                    force_meas.push((line.step as f64, line.measured_force));
                    force_csv.push_str(&format!(
                        "{r},{},{:.17e},{:.17e}\n",
                        line.step, line.reference_force, line.measured_force
                    ));
                }
                traj_csv.push_str(&format!(
                    "{r},{},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                    line.step,
                    line.pose.translation.x,
                    line.pose.translation.y,
                    gt.translation.x,
                    gt.translation.y
                ));
            }
            if r < colors.len() {
                pred_series.push(Series {
                    name: "predicted",
                    color: colors[r],
                    points: pred,
                });
            }
        }
        let mut series = vec![Series {
            name: "ground truth",
            color: "#000000",
            points: gt_points,
        }];
        series.extend(pred_series);
        write_atomic(&dir.join("trajectory.csv"), traj_csv.as_bytes())?;
        write_atomic(
            &dir.join("trajectory.svg"),
            render_svg("Top-down trajectory (XY)", "x (m)", "y (m)", &series).as_bytes(),
        )?;
        write_atomic(&dir.join("force.csv"), force_csv.as_bytes())?;
        write_atomic(
            &dir.join("force.svg"),
            render_svg(
                "Force tracking (rollout 0)",
                "step",
                "force (N)",
                &[
                    Series {
                        name: "reference",
                        color: "#000000",
                        points: force_ref,
                    },
                    Series {
                        name: "measured",
                        color: "#d62728",
                        points: force_meas,
                    },
                ],
            )
            .as_bytes(),
        )?;
        produced += 1;
    } else {
        println!("plot: no rollout logs, skipping trajectory/force plots");
    }

    if produced == 0 {
        return Err(Error::format("plot", "no inputs found (train log or rollout logs)"));
    }
    println!("plot: wrote figures to {}", dir.display());
    Ok(())
}
