//! Static report: regression tables, SVG figures and an index page.
//!
//! ```text
//! <report>/index.html
//! <report>/tables.md
//! <report>/figures/*.svg
//! <report>/data/*.csv          the analysis tables behind every figure
//! ```
//!
//! Everything is a pure function of the run directory, so regenerating a
//! report from the same run reproduces it byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use pooling_core::analysis::Source;

use crate::analyze::{analyze, write_analysis, Analysis, POOLED};
use crate::error::{Error, IoContext, Result};
use crate::load::{load_run, RunData};

pub const TABLES_MD: &str = "tables.md";
pub const INDEX_HTML: &str = "index.html";
pub const FIGURES_DIR: &str = "figures";
pub const DATA_DIR: &str = "data";

const SOURCES: [Source; 3] = [Source::Hier, Source::Shrinkage, Source::Lm];
const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(140, 86, 75),
];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Figure {
    pub file: String,
    pub title: String,
    pub caption: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub dir: PathBuf,
    pub analysis: Analysis,
    pub figures: Vec<Figure>,
    /// Sections that could not be produced, and why.
    pub gaps: Vec<String>,
}

/// Renders a line chart to an SVG string. Horizontal reference lines are
/// drawn dashed across the full x range.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], hlines: &[(String, f64)]) -> Result<String> {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).chain(hlines.iter().map(|h| h.1));
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !(x0.is_finite() && y0.is_finite()) {
        return Err(Error::Plot(format!("{title}: nothing to plot")));
    }
    let (x0, x1) = if x1 > x0 { (x0, x1) } else { (x0 - 1.0, x1 + 1.0) };
    let pad = if y1 > y0 { 0.05 * (y1 - y0) } else { 0.5 };
    let (y0, y1) = (y0 - pad, y1 + pad);

    let mut svg = String::new();
    {
        let plot_err = |e: &dyn std::fmt::Display| Error::Plot(format!("{title}: {e}"));
        let root = SVGBackend::with_string(&mut svg, (640, 400)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| plot_err(&e))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(|e| plot_err(&e))?;
        chart
            .configure_mesh()
            .x_desc(x_label)
            .y_desc(y_label)
            .light_line_style(WHITE)
            .draw()
            .map_err(|e| plot_err(&e))?;
        for (i, s) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            chart
                .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
                .map_err(|e| plot_err(&e))?
                .label(s.name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        }
        for (i, (name, y)) in hlines.iter().enumerate() {
            let color = PALETTE[(series.len() + i) % PALETTE.len()];
            let y = *y;
            chart
                .draw_series(DashedLineSeries::new(vec![(x0, y), (x1, y)], 6, 4, color.stroke_width(2)))
                .map_err(|e| plot_err(&e))?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .position(SeriesLabelPosition::UpperRight)
            .draw()
            .map_err(|e| plot_err(&e))?;
        root.present().map_err(|e| plot_err(&e))?;
    }
    Ok(svg)
}

fn num(x: f64) -> String {
    if x.is_nan() {
        "NA".into()
    } else {
        format!("{x:.4}")
    }
}

fn pval(p: f64) -> String {
    if p.is_nan() {
        "NA".into()
    } else if p < 1e-300 {
        "< 1e-300".into()
    } else if p < 1e-4 {
        format!("{p:.1e}")
    } else {
        format!("{p:.4}")
    }
}

fn p_clause(p: f64) -> String {
    let v = pval(p);
    if v.starts_with('<') {
        format!("p {v}")
    } else {
        format!("p = {v}")
    }
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn source_header(a: &Analysis, source: Source, condition: &str) -> String {
    match source {
        Source::Lm if condition == POOLED => "lm (best epochs)".into(),
        Source::Lm => match a.best_epoch(condition) {
            Some(e) => format!("lm (epoch {e})"),
            None => "lm".into(),
        },
        s => s.to_string(),
    }
}

/// One markdown coefficient table per condition: terms down, sources across.
fn coefficient_tables(a: &Analysis, term_set: &str, out: &mut String, gaps: &mut Vec<String>) {
    let mut conditions: Vec<&str> = Vec::new();
    for c in a.coefficients.iter().filter(|c| c.term_set == term_set) {
        if !conditions.contains(&c.condition.as_str()) {
            conditions.push(&c.condition);
        }
    }
    if conditions.is_empty() {
        out.push_str("_No fits available._\n\n");
        gaps.push(format!("{term_set} table: no fits"));
        return;
    }
    for cond in conditions {
        let present: Vec<Source> = SOURCES
            .into_iter()
            .filter(|s| a.coefficients.iter().any(|c| c.term_set == term_set && c.condition == cond && c.source == *s))
            .collect();
        let mut terms: Vec<&str> = Vec::new();
        for c in a.coefficients.iter().filter(|c| c.term_set == term_set && c.condition == cond) {
            if !terms.contains(&c.term.as_str()) {
                terms.push(&c.term);
            }
        }
        let _ = writeln!(out, "### {cond}\n");
        let headers: Vec<String> = present.iter().map(|s| source_header(a, *s, cond)).collect();
        let _ = writeln!(out, "| Term | {} |", headers.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(present.len()));
        for t in terms {
            let cells: Vec<String> = present
                .iter()
                .map(|s| match a.coefficient(term_set, *s, cond, t) {
                    Some(c) => format!("{} ({}; {})", num(c.estimate), num(c.se), p_clause(c.p)),
                    None => "NA".into(),
                })
                .collect();
            let _ = writeln!(out, "| {t} | {} |", cells.join(" | "));
        }
        let rows: Vec<String> = present
            .iter()
            .filter_map(|s| a.coefficient(term_set, *s, cond, "(Intercept)").map(|c| format!("{s}: {}", c.n_rows)))
            .collect();
        let _ = writeln!(out, "\nRows per fit: {}.\n", rows.join(", "));
        for s in SOURCES {
            if !present.contains(&s) {
                let _ = writeln!(out, "_{s}: absent._\n");
            }
        }
    }
}

fn type_frequency_table(a: &Analysis, out: &mut String, gaps: &mut Vec<String>) {
    if a.type_freq.is_empty() {
        out.push_str("_No fits available._\n\n");
        gaps.push("type-frequency table: no fits".into());
        return;
    }
    out.push_str("Group p coefficient of a main-effects fit within each group, replications stacked.\n\n");
    out.push_str("| Source | Condition | Epoch | Types in group | Group p | SE | p |\n|---|---|---|---|---|---|---|\n");
    for r in a.type_freq.iter().filter(|r| r.term == "Group p") {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} |",
            r.source,
            r.condition,
            r.epoch,
            r.type_freq,
            num(r.estimate),
            num(r.se),
            pval(r.p)
        );
    }
    out.push('\n');
}

pub fn render_tables(a: &Analysis) -> (String, Vec<String>) {
    let mut gaps = Vec::new();
    let mut out = String::from("# Pooling report\n\n");
    out.push_str("Estimates are beta-regression coefficients, shown as estimate (SE; p).\n\n");
    out.push_str("## Frequency model\n\nInferred p on Group p, Observed p and their interactions with context token frequency.\n\n");
    coefficient_tables(a, "frequency", &mut out, &mut gaps);
    out.push_str("## Variance model\n\nInferred p on Group p, Observed p and their interactions with between-context variance, all conditions stacked.\n\n");
    coefficient_tables(a, "variance", &mut out, &mut gaps);
    out.push_str("## Type frequency\n\n");
    type_frequency_table(a, &mut out, &mut gaps);

    out.push_str("## Transformer best-truth epochs\n\n");
    if a.best_epochs.is_empty() {
        out.push_str("_Transformer outputs absent._\n\n");
        gaps.push("transformer: no probe outputs".into());
    } else {
        out.push_str("| Condition | Best epoch | Mean r | Final epoch | Final mean r |\n|---|---|---|---|---|\n");
        for b in &a.best_epochs {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                b.condition,
                b.epoch,
                num(b.mean_r),
                b.final_epoch,
                num(b.final_mean_r)
            );
        }
        out.push('\n');
    }

    out.push_str("## Truth correlation of the regression estimators\n\n");
    let fixed: Vec<_> = a.correlation_summary.iter().filter(|c| c.source != Source::Lm).collect();
    if fixed.is_empty() {
        out.push_str("_No regression outputs._\n\n");
    } else {
        out.push_str("| Condition | Source | Mean r | SD | Replications |\n|---|---|---|---|---|\n");
        for c in fixed {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                c.condition,
                c.source,
                num(c.mean_r),
                num(c.sd_r),
                c.replications
            );
        }
        out.push('\n');
    }

    out.push_str("## Notes\n\n");
    for n in &a.notes {
        let _ = writeln!(out, "- {n}");
    }
    out.push('\n');
    (out, gaps)
}

fn figures_for(a: &Analysis) -> Vec<(Figure, Result<String>)> {
    let mut out = Vec::new();
    let mut conditions: Vec<&str> = a.trajectory.iter().map(|t| t.condition.as_str()).collect();
    conditions.extend(a.correlation_summary.iter().map(|c| c.condition.as_str()));
    conditions.sort_unstable();
    conditions.dedup();
    for cond in conditions {
        let traj = |term: &str| Series {
            name: term.to_string(),
            points: a
                .trajectory
                .iter()
                .filter(|t| t.condition == cond && t.term == term)
                .map(|t| (t.epoch as f64, t.estimate))
                .collect(),
        };
        if a.trajectory.iter().any(|t| t.condition == cond) {
            let fig = Figure {
                file: format!("trajectory_main_{cond}.svg"),
                title: format!("Group p and Observed p across epochs ({cond})"),
                caption: "Transformer frequency-model coefficients for Group p and Observed p per epoch.".into(),
            };
            let svg = line_chart(&fig.title, "epoch", "coefficient", &[traj("Group p"), traj("Observed p")], &[]);
            out.push((fig, svg));
            let fig = Figure {
                file: format!("trajectory_freq_{cond}.svg"),
                title: format!("Frequency interactions across epochs ({cond})"),
                caption: "Transformer Group p : Freq and Observed p : Freq coefficients per epoch.".into(),
            };
            let svg = line_chart(
                &fig.title,
                "epoch",
                "coefficient",
                &[traj("Group p : Freq"), traj("Observed p : Freq")],
                &[],
            );
            out.push((fig, svg));
        }

        let lm_r: Vec<(f64, f64)> = a
            .correlation_summary
            .iter()
            .filter(|c| c.condition == cond && c.source == Source::Lm)
            .map(|c| (c.epoch as f64, c.mean_r))
            .collect();
        if !lm_r.is_empty() {
            let hlines: Vec<(String, f64)> = a
                .correlation_summary
                .iter()
                .filter(|c| c.condition == cond && c.source != Source::Lm)
                .map(|c| (c.source.to_string(), c.mean_r))
                .collect();
            let fig = Figure {
                file: format!("correlation_{cond}.svg"),
                title: format!("Correlation with true probabilities ({cond})"),
                caption: "Mean Pearson r between inferred and true probabilities; dashed lines are the regression estimators.".into(),
            };
            let svg = line_chart(&fig.title, "epoch", "mean r", &[Series { name: "lm".into(), points: lm_r }], &hlines);
            out.push((fig, svg));
        }

        let mut ranges: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for r in a.range_summary.iter().filter(|r| r.condition == cond && r.source == Source::Lm) {
            ranges.entry(format!("group {} {} freq", r.group, r.bucket)).or_default().push((r.epoch as f64, r.mean_range));
        }
        if !ranges.is_empty() {
            let series: Vec<Series> = ranges.into_iter().map(|(name, points)| Series { name, points }).collect();
            let fig = Figure {
                file: format!("ranges_{cond}.svg"),
                title: format!("Range of inferred probabilities ({cond})"),
                caption: "Max minus min transformer inferred p per group and frequency bucket; greater range means less pooling.".into(),
            };
            let svg = line_chart(&fig.title, "epoch", "range", &series, &[]);
            out.push((fig, svg));
        }

        let spread: Vec<(f64, f64)> =
            a.spread.iter().filter(|s| s.condition == cond).map(|s| (s.epoch as f64, s.spread)).collect();
        if !spread.is_empty() {
            let fig = Figure {
                file: format!("spread_{cond}.svg"),
                title: format!("Within-group spread of inferred p ({cond})"),
                caption: "Mean within-group SD of transformer inferred p per epoch.".into(),
            };
            let svg = line_chart(&fig.title, "epoch", "SD", &[Series { name: "lm".into(), points: spread }], &[]);
            out.push((fig, svg));
        }

        let loss: Vec<(f64, f64)> =
            a.losses.iter().filter(|l| l.condition == cond).map(|l| (l.epoch as f64, l.mean_loss)).collect();
        if !loss.is_empty() {
            let fig = Figure {
                file: format!("loss_{cond}.svg"),
                title: format!("Training loss ({cond})"),
                caption: "Mean training cross-entropy per epoch; epoch 0 is the untrained model.".into(),
            };
            let svg = line_chart(&fig.title, "epoch", "loss", &[Series { name: "lm".into(), points: loss }], &[]);
            out.push((fig, svg));
        }
    }
    out
}

fn index_html(tables_md: &str, figures: &[Figure], gaps: &[String]) -> String {
    let mut h = String::from(
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>Pooling report</title>\n</head>\n<body>\n<h1>Pooling report</h1>\n",
    );
    h.push_str("<h2>Gaps</h2>\n");
    if gaps.is_empty() {
        h.push_str("<p>None.</p>\n");
    } else {
        h.push_str("<ul>\n");
        for g in gaps {
            let _ = writeln!(h, "<li>{}</li>", html_escape(g));
        }
        h.push_str("</ul>\n");
    }
    h.push_str("<h2>Figures</h2>\n");
    for f in figures {
        let _ = writeln!(
            h,
            "<figure>\n<img src=\"{dir}/{file}\" alt=\"{title}\">\n<figcaption>{caption}</figcaption>\n</figure>",
            dir = FIGURES_DIR,
            file = html_escape(&f.file),
            title = html_escape(&f.title),
            caption = html_escape(&f.caption)
        );
    }
    let _ = writeln!(h, "<h2>Tables</h2>\n<p><a href=\"{TABLES_MD}\">{TABLES_MD}</a></p>\n<pre>{}</pre>", html_escape(tables_md));
    h.push_str("</body>\n</html>\n");
    h
}

/// Analyzes `data` and writes the report into `out_dir`.
pub fn write_report(data: &RunData, out_dir: &Path) -> Result<Report> {
    let analysis = analyze(data)?;
    let figures_dir = out_dir.join(FIGURES_DIR);
    fs::create_dir_all(&figures_dir).at(&figures_dir)?;
    write_analysis(&analysis, &out_dir.join(DATA_DIR))?;

    let (tables, mut gaps) = render_tables(&analysis);
    let mut figures = Vec::new();
    for (fig, svg) in figures_for(&analysis) {
        match svg {
            Ok(svg) => {
                let path = figures_dir.join(&fig.file);
                fs::write(&path, svg).at(&path)?;
                figures.push(fig);
            }
            Err(e) => gaps.push(format!("figure {} not drawn: {e}", fig.file)),
        }
    }
    if !data.has(Source::Lm) {
        gaps.push("transformer sections absent: no probes.csv in the run".into());
    }
    if !data.has(Source::Hier) {
        gaps.push("hierarchical-regression sections absent: no hier_predictions.csv in the run".into());
    }
    gaps.extend(data.gaps.iter().cloned());

    let path = out_dir.join(TABLES_MD);
    fs::write(&path, &tables).at(&path)?;
    let path = out_dir.join(INDEX_HTML);
    fs::write(&path, index_html(&tables, &figures, &gaps)).at(&path)?;
    Ok(Report { dir: out_dir.to_path_buf(), analysis, figures, gaps })
}

/// Loads `run_dir` and writes its report to `out_dir`, defaulting to
/// `<run_dir>/report`.
pub fn report(run_dir: &Path, out_dir: Option<&Path>) -> Result<Report> {
    let data = load_run(run_dir)?;
    let out = out_dir.map_or_else(|| run_dir.join("report"), Path::to_path_buf);
    write_report(&data, &out)
}
