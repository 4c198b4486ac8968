//! Static log-log convergence plots written directly as SVG: error vs h and
//! error vs averaged DOFs, one polyline per arm, reference-slope guide lines
//! at 0.5 and 1.0 and the fitted slope annotated per arm. Output carries no
//! timestamps, so identical reports render to identical bytes.

use subgrf::experiment::{ConvergenceReport, MeshMode};

use crate::CliError;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;

const ARM_COLORS: [(&str, &str); 2] = [("adapted", "#1f77b4"), ("standard", "#d62728")];

struct LogAxes {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl LogAxes {
    fn from_points(points: &[(f64, f64)]) -> LogAxes {
        let mut a = LogAxes {
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for &(x, y) in points {
            a.x_min = a.x_min.min(x.ln());
            a.x_max = a.x_max.max(x.ln());
            a.y_min = a.y_min.min(y.ln());
            a.y_max = a.y_max.max(y.ln());
        }
        let pad = |lo: &mut f64, hi: &mut f64| {
            let span = (*hi - *lo).max(1e-9);
            *lo -= 0.08 * span;
            *hi += 0.08 * span;
        };
        pad(&mut a.x_min, &mut a.x_max);
        pad(&mut a.y_min, &mut a.y_max);
        a
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x.ln() - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        MARGIN_T
            + (self.y_max - y.ln()) / (self.y_max - self.y_min) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// One log-log panel: arm polylines with markers, guide lines, annotations.
fn render_panel(
    title: &str,
    x_label: &str,
    series: &[(String, Vec<(f64, f64)>, Option<f64>)],
    guide_slopes: [f64; 2],
) -> String {
    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, pts, _)| pts.clone()).collect();
    let axes = LogAxes::from_points(&all);
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<text x=\"{}\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\" \
         text-anchor=\"middle\">{title}</text>\n",
        WIDTH / 2.0
    ));
    // frame
    s.push_str(&format!(
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{}\" height=\"{}\" fill=\"none\" \
         stroke=\"black\"/>\n",
        WIDTH - MARGIN_L - MARGIN_R,
        HEIGHT - MARGIN_T - MARGIN_B
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\">{x_label}</text>\n",
        WIDTH / 2.0,
        HEIGHT - 12.0
    ));
    s.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">V-norm error</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    ));

    // tick marks at the data abscissae of the first series
    if let Some((_, pts, _)) = series.first() {
        for &(x, _) in pts {
            let px = axes.px(x);
            s.push_str(&format!(
                "<line x1=\"{px:.2}\" y1=\"{}\" x2=\"{px:.2}\" y2=\"{}\" stroke=\"black\"/>\n",
                HEIGHT - MARGIN_B,
                HEIGHT - MARGIN_B + 5.0
            ));
            s.push_str(&format!(
                "<text x=\"{px:.2}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" \
                 text-anchor=\"middle\">{x:.3}</text>\n",
                HEIGHT - MARGIN_B + 16.0
            ));
        }
    }

    // guide lines anchored at the first point of the first series
    if let Some((_, pts, _)) = series.first() {
        if let Some(&(x0, y0)) = pts.first() {
            let x1 = pts.last().unwrap().0;
            for slope in guide_slopes {
                let y1 = y0 * (x1 / x0).powf(slope);
                s.push_str(&format!(
                    "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#999\" \
                     stroke-dasharray=\"5,4\" class=\"guide\" data-slope=\"{slope}\"/>\n",
                    axes.px(x0),
                    axes.py(y0),
                    axes.px(x1),
                    axes.py(y1)
                ));
                s.push_str(&format!(
                    "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" \
                     fill=\"#999\">slope {}</text>\n",
                    axes.px(x1) + 3.0,
                    axes.py(y1),
                    slope.abs()
                ));
            }
        }
    }

    for (idx, (name, pts, fitted)) in series.iter().enumerate() {
        let color = ARM_COLORS
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| *c)
            .unwrap_or(ARM_COLORS[idx % 2].1);
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{},{}", fmt(axes.px(x)), fmt(axes.py(y))))
            .collect();
        s.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        for &(x, y) in pts {
            s.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>\n",
                fmt(axes.px(x)),
                fmt(axes.py(y))
            ));
        }
        let label = match fitted {
            Some(slope) => format!("{name}: slope ≈ {slope:.3}"),
            None => name.clone(),
        };
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
             fill=\"{color}\" class=\"fit\">{label}</text>\n",
            MARGIN_L + 10.0,
            MARGIN_T + 18.0 + 16.0 * idx as f64
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// Error-vs-h and error-vs-DOF SVGs for a multi-level report.
pub fn render_report(report: &ConvergenceReport) -> Result<(String, String), CliError> {
    if report.arms.iter().all(|a| a.levels.len() < 2) {
        return Err(CliError::config(
            "report has fewer than 2 levels; nothing to plot".into(),
        ));
    }
    let arm_name = |m: MeshMode| match m {
        MeshMode::Adapted => "adapted".to_string(),
        MeshMode::Standard => "standard".to_string(),
    };
    let vs_h: Vec<(String, Vec<(f64, f64)>, Option<f64>)> = report
        .arms
        .iter()
        .map(|a| {
            (
                arm_name(a.mode),
                a.levels
                    .iter()
                    .map(|l| (l.h, l.mean_sq_error.sqrt()))
                    .collect(),
                a.rate_vs_h.map(|r| r.slope),
            )
        })
        .collect();
    let vs_dofs: Vec<(String, Vec<(f64, f64)>, Option<f64>)> = report
        .arms
        .iter()
        .map(|a| {
            (
                arm_name(a.mode),
                a.levels
                    .iter()
                    .map(|l| (l.mean_dofs, l.mean_sq_error.sqrt()))
                    .collect(),
                a.rate_vs_dofs.map(|r| r.slope),
            )
        })
        .collect();
    let h_svg = render_panel("Strong error vs mesh size", "h", &vs_h, [0.5, 1.0]);
    let dof_svg = render_panel(
        "Strong error vs averaged DOFs",
        "mean DOFs",
        &vs_dofs,
        [-0.5, -1.0],
    );
    Ok((h_svg, dof_svg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use subgrf::experiment::{
        ArmReport, ConvergenceReport, ExperimentConfig, LevelResult, MeshMode, RateFit,
        ReferenceMeta,
    };

    fn synthetic_report(rate: f64) -> ConvergenceReport {
        let heights = [0.4, 0.2, 0.1, 0.05];
        let levels: Vec<LevelResult> = heights
            .iter()
            .enumerate()
            .map(|(i, &h)| LevelResult {
                level: i + 1,
                h,
                eps_w: h,
                eps_l: None,
                m_used: 10,
                mean_sq_error: (2.0 * h.powf(rate)).powi(2),
                std_sq_error: 0.0,
                mean_dofs: 1.0 / (h * h),
                wall_ms: 0,
                capped: false,
                voided: vec![],
            })
            .collect();
        let fit_h = RateFit {
            slope: rate,
            intercept: 2f64.ln(),
        };
        let fit_d = RateFit {
            slope: -rate / 2.0,
            intercept: 2f64.ln(),
        };
        ConvergenceReport {
            config: ExperimentConfig::poisson_low_intensity(),
            seed: 0,
            version: "test".into(),
            conventions: Default::default(),
            arms: vec![ArmReport {
                mode: MeshMode::Adapted,
                kappa_hat: 1.0,
                reference: ReferenceMeta {
                    level: 5,
                    h: 0.025,
                    eps_w: 0.025,
                    eps_l: None,
                    w1_ref_intervals: 48,
                    w2_ref_intervals: 320,
                    path_ref_intervals: None,
                },
                levels,
                rate_vs_h: Some(fit_h),
                rate_vs_dofs: Some(fit_d),
                flagged: false,
            }],
        }
    }

    #[test]
    fn two_svgs_with_polyline_and_guides() {
        let (h_svg, d_svg) = render_report(&synthetic_report(1.0)).unwrap();
        for svg in [&h_svg, &d_svg] {
            assert!(svg.starts_with("<svg "));
            assert_eq!(svg.matches("<polyline").count(), 1);
            assert_eq!(svg.matches("class=\"guide\"").count(), 2);
        }
    }

    #[test]
    fn slope_annotation_matches_fit_to_three_decimals() {
        let (h_svg, _) = render_report(&synthetic_report(1.0)).unwrap();
        assert!(h_svg.contains("slope ≈ 1.000"), "{h_svg}");
        let (h_svg, _) = render_report(&synthetic_report(0.7)).unwrap();
        assert!(h_svg.contains("slope ≈ 0.700"));
    }

    #[test]
    fn guide_line_coordinates_match_hand_computed_logs() {
        // guides anchored at (h1, e1), ending at h4 with slopes 0.5 and 1.0
        let report = synthetic_report(1.0);
        let (h_svg, _) = render_report(&report).unwrap();
        let pts: Vec<(f64, f64)> = report.arms[0]
            .levels
            .iter()
            .map(|l| (l.h, l.mean_sq_error.sqrt()))
            .collect();
        let axes = LogAxes::from_points(&pts);
        let (x0, y0) = pts[0];
        let x1 = pts.last().unwrap().0;
        for slope in [0.5, 1.0] {
            let y1 = y0 * (x1 / x0).powf(slope);
            let expected = format!(
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\"",
                axes.px(x0),
                axes.py(y0),
                axes.px(x1),
                axes.py(y1)
            );
            assert!(h_svg.contains(&expected), "missing guide: {expected}");
        }
    }

    #[test]
    fn single_level_report_is_rejected() {
        let mut report = synthetic_report(1.0);
        report.arms[0].levels.truncate(1);
        assert!(render_report(&report).is_err());
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = render_report(&synthetic_report(0.7)).unwrap();
        let b = render_report(&synthetic_report(0.7)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }
}
