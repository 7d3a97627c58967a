//! Static SVG plots generated from the columnar traces. No display server
//! involved; output is deterministic for fixed traces.

use super::config::{ExperimentConfig, ExperimentKind};
use super::traces::TraceSet;
use crate::error::Result;
use std::path::Path;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;

struct Series<'a> {
    label: &'a str,
    points: Vec<(f64, f64)>,
    color: &'a str,
}

fn svg_line_plot(title: &str, series: &[Series], log_y: bool) -> String {
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for (x, y) in &s.points {
            let y = if log_y {
                if *y <= 0.0 {
                    continue;
                }
                y.log10()
            } else {
                *y
            };
            xs.push(*x);
            ys.push(y);
        }
    }
    if xs.is_empty() {
        return format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\"><text x=\"20\" y=\"30\">{title}: no positive data</text></svg>");
    }
    let (x0, x1) = bounds(&xs);
    let (y0, y1) = bounds(&ys);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0).max(1e-12) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0).max(1e-12) * (H - 2.0 * MARGIN);
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"monospace\" font-size=\"12\">\n"
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-size=\"14\">{}</text>\n",
        MARGIN, title
    ));
    // Axes.
    out.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        r = W - MARGIN,
        t = MARGIN,
        b = H - MARGIN
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\">{:.3}</text>\n<text x=\"{}\" y=\"{}\">{:.3}</text>\n",
        6.0,
        H - MARGIN,
        if log_y { 10f64.powf(y0) } else { y0 },
        6.0,
        MARGIN + 6.0,
        if log_y { 10f64.powf(y1) } else { y1 },
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\">{:.2}</text>\n<text x=\"{}\" y=\"{}\">{:.2}</text>\n",
        MARGIN,
        H - MARGIN + 16.0,
        x0,
        W - MARGIN - 30.0,
        H - MARGIN + 16.0,
        x1,
    ));
    for (si, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(_, y)| !log_y || *y > 0.0)
            .map(|(x, y)| {
                let yy = if log_y { y.log10() } else { *y };
                format!("{:.2},{:.2}", sx(*x), sy(yy))
            })
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            s.color,
            pts.join(" ")
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{}\">{}</text>\n",
            W - MARGIN - 120.0,
            MARGIN + 16.0 * (si as f64 + 1.0),
            s.color,
            s.label
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if (hi - lo).abs() < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn zip_cols(t: &super::traces::Table, xc: &str, yc: &str) -> Result<Vec<(f64, f64)>> {
    Ok(t.column(xc)?
        .into_iter()
        .zip(t.column(yc)?)
        .collect())
}

pub fn emit_plots(cfg: &ExperimentConfig, traces: &TraceSet, out_dir: &Path) -> Result<()> {
    let pdir = out_dir.join("plots");
    std::fs::create_dir_all(&pdir)?;
    match cfg.kind {
        ExperimentKind::TurnpikePair => {
            let gap = traces.get("gap")?;
            let series = [
                Series {
                    label: "Phi",
                    points: zip_cols(gap, "t", "Phi")?,
                    color: "#1f77b4",
                },
                Series {
                    label: "|phi|",
                    points: zip_cols(gap, "t", "phi")?
                        .into_iter()
                        .map(|(t, v)| (t, v.abs()))
                        .collect(),
                    color: "#ff7f0e",
                },
                Series {
                    label: "W2",
                    points: zip_cols(gap, "t", "w2")?,
                    color: "#2ca02c",
                },
            ];
            std::fs::write(
                pdir.join("gap_decay.svg"),
                svg_line_plot("gap functions (log scale)", &series, true),
            )?;
        }
        ExperimentKind::ErgodicStudy | ExperimentKind::Uniqueness => {
            let name = if cfg.kind == ExperimentKind::ErgodicStudy {
                "lambda"
            } else {
                "lambda_1"
            };
            let lt = traces.get(name)?;
            let series = [Series {
                label: "lambda^T",
                points: zip_cols(lt, "horizon_t", "lambda")?,
                color: "#1f77b4",
            }];
            std::fs::write(
                pdir.join("lambda_vs_horizon.svg"),
                svg_line_plot("ergodic constant vs horizon", &series, false),
            )?;
        }
        ExperimentKind::Solve => {
            let res = traces.get("residuals")?;
            let series = [Series {
                label: "W2 residual",
                points: zip_cols(res, "iteration", "w2_residual")?,
                color: "#1f77b4",
            }];
            std::fs::write(
                pdir.join("fixed_point_residual.svg"),
                svg_line_plot("fixed point residual (log scale)", &series, true),
            )?;
        }
        ExperimentKind::Verify => {}
    }
    Ok(())
}
