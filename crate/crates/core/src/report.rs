//! Report rendering: result CSV/markdown tables, cluster-sweep curves
//! (CSV/markdown/SVG), and the auxiliary per-run dumps.
//!
//! Scores are rounded to two decimals at render time only. Output is fully
//! deterministic: same rows in, same bytes out.

use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::ExperimentResult;
use crate::federation::RoundStat;

pub const CSV_HEADER: &str =
    "exp_type,dataset,scenario,seed,accuracy_mean,accuracy_std,ARI,AMI,hom,cmplt,vm";

/// Output format selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    MarkdownTable,
    SvgPlot,
}

impl ReportFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::MarkdownTable => "markdown-table",
            ReportFormat::SvgPlot => "svg-plot",
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::MarkdownTable => "md",
            ReportFormat::SvgPlot => "svg",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown-table" | "markdown" => Ok(ReportFormat::MarkdownTable),
            "svg-plot" | "svg" => Ok(ReportFormat::SvgPlot),
            other => Err(Error::config(
                "format",
                format!("unknown format `{other}`, expected csv | markdown-table | svg-plot"),
            )),
        }
    }
}

fn metric_cells(row: &ExperimentResult) -> [String; 5] {
    match &row.metrics {
        Some(m) => [
            format!("{:.2}", m.ari),
            format!("{:.2}", m.ami),
            format!("{:.2}", m.homogeneity),
            format!("{:.2}", m.completeness),
            format!("{:.2}", m.v_measure),
        ],
        None => std::array::from_fn(|_| "n/a".to_string()),
    }
}

pub fn render_results_csv(results: &[ExperimentResult]) -> Result<String> {
    if results.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in results {
        let m = metric_cells(row);
        out.push_str(&format!(
            "{},{},{},{},{:.2},{:.2},{},{},{},{},{}\n",
            row.regime,
            row.dataset,
            row.scenario,
            row.seed_label,
            row.accuracy_mean,
            row.accuracy_std,
            m[0],
            m[1],
            m[2],
            m[3],
            m[4],
        ));
    }
    Ok(out)
}

pub fn render_results_markdown(results: &[ExperimentResult]) -> Result<String> {
    if results.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut out = String::new();
    out.push_str("| exp_type | dataset | accuracy | ARI | AMI | hom | cmplt | vm |\n");
    out.push_str("|---|---|---|---|---|---|---|---|\n");
    for row in results {
        let m = metric_cells(row);
        out.push_str(&format!(
            "| {} | {} | {:.2} ± {:.2} | {} | {} | {} | {} | {} |\n",
            row.regime, row.dataset, row.accuracy_mean, row.accuracy_std, m[0], m[1], m[2], m[3], m[4],
        ));
    }
    Ok(out)
}

/// Writes experiment rows as CSV or a markdown table. SVG plots apply to
/// sweep curves; see [`write_sweep`].
pub fn write_report(
    results: &[ExperimentResult],
    path: &Path,
    format: ReportFormat,
) -> Result<()> {
    let rendered = match format {
        ReportFormat::Csv => render_results_csv(results)?,
        ReportFormat::MarkdownTable => render_results_markdown(results)?,
        ReportFormat::SvgPlot => {
            return Err(Error::config(
                "format",
                "svg-plot renders sweep curves, not result tables",
            ))
        }
    };
    std::fs::write(path, rendered)?;
    Ok(())
}

pub fn render_sweep_csv(points: &[(usize, f64)]) -> Result<String> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut out = String::from("k,accuracy_mean\n");
    for (k, acc) in points {
        out.push_str(&format!("{k},{acc:.2}\n"));
    }
    Ok(out)
}

pub fn render_sweep_markdown(points: &[(usize, f64)]) -> Result<String> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut out = String::from("| k | accuracy |\n|---|---|\n");
    for (k, acc) in points {
        out.push_str(&format!("| {k} | {acc:.2} |\n"));
    }
    Ok(out)
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const SVG_MARGIN: f64 = 50.0;

/// Renders a sweep curve as a standalone SVG line chart with one polyline
/// vertex per `(k, accuracy)` point.
pub fn render_sweep_svg(points: &[(usize, f64)]) -> Result<String> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    let min_k = points.iter().map(|(k, _)| *k).min().expect("non-empty") as f64;
    let max_k = points.iter().map(|(k, _)| *k).max().expect("non-empty") as f64;
    let min_a = points.iter().map(|(_, a)| *a).fold(f64::INFINITY, f64::min);
    let max_a = points.iter().map(|(_, a)| *a).fold(f64::NEG_INFINITY, f64::max);
    let (lo_a, hi_a) = if (max_a - min_a).abs() < 1e-9 {
        (min_a - 1.0, max_a + 1.0)
    } else {
        let pad = (max_a - min_a) * 0.1;
        (min_a - pad, max_a + pad)
    };
    let span_k = if max_k > min_k { max_k - min_k } else { 1.0 };
    let x = |k: f64| SVG_MARGIN + (k - min_k) / span_k * (SVG_W - 2.0 * SVG_MARGIN);
    let y = |a: f64| SVG_H - SVG_MARGIN - (a - lo_a) / (hi_a - lo_a) * (SVG_H - 2.0 * SVG_MARGIN);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"white\"/>\n"
    ));
    // Axes.
    svg.push_str(&format!(
        "  <line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = SVG_MARGIN,
        b = SVG_H - SVG_MARGIN,
        r = SVG_W - SVG_MARGIN
    ));
    svg.push_str(&format!(
        "  <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = SVG_MARGIN,
        b = SVG_H - SVG_MARGIN
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">clusters k</text>\n",
        SVG_W / 2.0,
        SVG_H - 12.0
    ));
    svg.push_str(&format!(
        "  <text x=\"14\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">accuracy (%)</text>\n",
        SVG_H / 2.0,
        SVG_H / 2.0
    ));
    for (k, a) in points {
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{k}</text>\n",
            x(*k as f64),
            SVG_H - SVG_MARGIN + 16.0
        ));
        svg.push_str(&format!(
            "  <circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"steelblue\"/>\n",
            x(*k as f64),
            y(*a)
        ));
    }
    let vertices: Vec<String> = points
        .iter()
        .map(|(k, a)| format!("{:.1},{:.1}", x(*k as f64), y(*a)))
        .collect();
    svg.push_str(&format!(
        "  <polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n",
        vertices.join(" ")
    ));
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes a sweep curve in the requested format.
pub fn write_sweep(points: &[(usize, f64)], path: &Path, format: ReportFormat) -> Result<()> {
    let rendered = match format {
        ReportFormat::Csv => render_sweep_csv(points)?,
        ReportFormat::MarkdownTable => render_sweep_markdown(points)?,
        ReportFormat::SvgPlot => render_sweep_svg(points)?,
    };
    std::fs::write(path, rendered)?;
    Ok(())
}

pub fn render_rounds_csv(rounds: &[RoundStat]) -> String {
    let mut out = String::from("round,mean_train_loss,eval_accuracy\n");
    for r in rounds {
        out.push_str(&format!(
            "{},{:.6},{:.6}\n",
            r.round, r.mean_train_loss, r.eval_accuracy
        ));
    }
    out
}

pub fn render_assignment_csv(rows: &[(usize, usize, usize)]) -> String {
    let mut out = String::from("client_id,het_class,cluster_id\n");
    for (client, class, cluster) in rows {
        out.push_str(&format!("{client},{class},{cluster}\n"));
    }
    out
}

pub fn render_trace_csv(trace: &[crate::cfl_client::AssignmentRecord]) -> String {
    let mut out = String::from("round,client_id,cluster_id\n");
    for rec in trace {
        out.push_str(&format!("{},{},{}\n", rec.round, rec.client_id, rec.cluster));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DatasetName;
    use crate::experiment::Regime;
    use crate::heterogeneity::ScenarioKind;
    use crate::metrics::MetricsReport;

    fn fl_row() -> ExperimentResult {
        ExperimentResult {
            regime: Regime::Fl,
            dataset: DatasetName::Mnist,
            scenario: ScenarioKind::ConceptShiftFeatures,
            seed_label: "42".to_string(),
            accuracy_mean: 80.951,
            accuracy_std: 0.0,
            metrics: None,
        }
    }

    fn server_row() -> ExperimentResult {
        ExperimentResult {
            regime: Regime::Server,
            dataset: DatasetName::Mnist,
            scenario: ScenarioKind::ConceptShiftFeatures,
            seed_label: "42".to_string(),
            accuracy_mean: 91.78,
            accuracy_std: 1.62,
            metrics: Some(MetricsReport {
                ari: 1.0,
                ami: 1.0,
                homogeneity: 1.0,
                completeness: 1.0,
                v_measure: 1.0,
            }),
        }
    }

    #[test]
    fn csv_schema_and_na_cells() {
        let csv = render_results_csv(&[fl_row(), server_row()]).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let fl = lines.next().unwrap();
        assert_eq!(
            fl,
            "fl,mnist,concept-shift-features,42,80.95,0.00,n/a,n/a,n/a,n/a,n/a"
        );
        let server = lines.next().unwrap();
        assert!(server.ends_with("91.78,1.62,1.00,1.00,1.00,1.00,1.00"));
    }

    #[test]
    fn empty_results_rejected() {
        assert!(matches!(render_results_csv(&[]), Err(Error::EmptyInput)));
        assert!(matches!(render_sweep_csv(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn markdown_has_one_row_per_result() {
        let md = render_results_markdown(&[fl_row(), server_row()]).unwrap();
        assert_eq!(md.lines().count(), 4);
        assert!(md.contains("| fl | mnist | 80.95 ± 0.00 | n/a |"));
    }

    #[test]
    fn svg_contains_one_vertex_per_point() {
        let points = vec![(1, 70.0), (2, 80.0), (4, 88.0), (6, 91.0), (8, 91.5)];
        let svg = render_sweep_svg(&points).unwrap();
        let polyline = svg
            .lines()
            .find(|l| l.contains("<polyline"))
            .expect("polyline present");
        let vertices = polyline
            .split("points=\"")
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap()
            .split(' ')
            .count();
        assert_eq!(vertices, 5);
        assert_eq!(svg.matches("<circle").count(), 5);
    }

    #[test]
    fn render_is_deterministic() {
        let rows = [fl_row(), server_row()];
        assert_eq!(
            render_results_csv(&rows).unwrap(),
            render_results_csv(&rows).unwrap()
        );
    }
}
