//! Report stage: health-indicator charts for the proposed MD indicator and
//! the normalized knowledge features, plus a severity-grouped summary table.
//! Every chart's data is also emitted as CSV so downstream checks never have
//! to parse SVG.

use std::fmt::Write as _;
use std::path::Path;

use crate::baselines::{normalize_features, time_features, FeatureVector, FEATURE_NAMES};
use crate::error::{Error, Result};
use crate::io;
use crate::pipeline::config::RunConfig;
use crate::pipeline::manifest::RunManifest;
use crate::pipeline::stages::{scores_rel, signal_rel};
use crate::sim::window_slices;

const PALETTE: [&str; 8] = [
    "#2266cc", "#ee8800", "#22aa55", "#cc2222", "#8844cc", "#777733", "#11aaaa", "#884422",
];

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Linear-interpolation quantile of a sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

struct CellScores {
    label: String,
    fr: f64,
    scores: Vec<f64>,
    above: Vec<bool>,
}

pub fn write_report(config: &RunConfig, manifest: &RunManifest, out: &Path) -> Result<Vec<String>> {
    let report_dir = out.join("report");
    std::fs::create_dir_all(&report_dir).map_err(|e| Error::Io {
        path: report_dir.clone(),
        source: e,
    })?;

    // Scores per cell, from the emitted CSVs only.
    let mut cells = Vec::new();
    for cell in &config.fault.grid {
        let rows = io::read_health_csv(&out.join(scores_rel(&cell.label)))?;
        cells.push(CellScores {
            label: cell.label.clone(),
            fr: cell.fr,
            scores: rows.iter().map(|r| r.1).collect(),
            above: rows.iter().map(|r| r.2).collect(),
        });
    }
    let threshold = manifest.derived.health_threshold;

    // Knowledge features recomputed from the signal windows.
    let mut raw_rows: Vec<(usize, String, [f64; 6])> = Vec::new();
    let mut feature_rows: Vec<FeatureVector> = Vec::new();
    let mut global = 0usize;
    for cell in &config.fault.grid {
        let sig =
            io::read_signal_csv(&out.join(signal_rel(&cell.label)), config.motor.sample_rate)?;
        let windows = window_slices(
            sig.channel(config.windowing.phase),
            config.windowing.window_len,
            config.windowing.hop,
        )?;
        for w in windows {
            let f = time_features(w)?;
            raw_rows.push((global, cell.label.clone(), f.as_array()));
            feature_rows.push(f);
            global += 1;
        }
    }
    let normalized = normalize_features(&feature_rows)?;

    let mut rels = Vec::new();

    // Raw feature table.
    let features_rel = "report/features.csv".to_string();
    io::write_feature_csv(&out.join(&features_rel), &raw_rows)?;
    rels.push(features_rel);

    // Proposed health indicator data.
    let hi_rel = "report/hi_proposed.csv".to_string();
    {
        let mut text = String::from("global_index,label,fr,md_score,above_threshold\n");
        let mut idx = 0usize;
        for c in &cells {
            for (s, a) in c.scores.iter().zip(&c.above) {
                let _ = writeln!(text, "{},{},{},{},{}", idx, c.label, c.fr, s, u8::from(*a));
                idx += 1;
            }
        }
        write_text(&out.join(&hi_rel), &text)?;
        rels.push(hi_rel);
    }

    // Normalized features data (the conventional indicator).
    let hifeat_rel = "report/hi_features.csv".to_string();
    {
        let mut text = format!("global_index,label,fr,{}\n", FEATURE_NAMES.join(","));
        let mut idx = 0usize;
        for cell in &config.fault.grid {
            let count = cells
                .iter()
                .find(|c| c.label == cell.label)
                .map(|c| c.scores.len())
                .unwrap_or(0);
            for _ in 0..count {
                let row = normalized.rows[idx];
                let _ = write!(text, "{},{},{}", idx, cell.label, cell.fr);
                for v in row {
                    let _ = write!(text, ",{v}");
                }
                text.push('\n');
                idx += 1;
            }
        }
        write_text(&out.join(&hifeat_rel), &text)?;
        rels.push(hifeat_rel);
    }

    // Severity-grouped summary.
    let summary_rel = "report/summary.csv".to_string();
    let mut summary: Vec<(String, f64, usize, f64, f64, f64, f64)> = Vec::new();
    {
        let mut text =
            String::from("label,fr,windows,md_median,md_q1,md_q3,fraction_above\n");
        for c in &cells {
            let mut sorted = c.scores.clone();
            sorted.sort_by(f64::total_cmp);
            let median = quantile_sorted(&sorted, 0.5);
            let q1 = quantile_sorted(&sorted, 0.25);
            let q3 = quantile_sorted(&sorted, 0.75);
            let frac = c.above.iter().filter(|&&a| a).count() as f64 / c.above.len().max(1) as f64;
            let _ = writeln!(
                text,
                "{},{},{},{},{},{},{}",
                c.label,
                c.fr,
                c.scores.len(),
                median,
                q1,
                q3,
                frac
            );
            summary.push((c.label.clone(), c.fr, c.scores.len(), median, q1, q3, frac));
        }
        write_text(&out.join(&summary_rel), &text)?;
        rels.push(summary_rel);
    }

    // Charts: conventional features (left) and proposed MD (right).
    let svg_rel = "report/health_indicators.svg".to_string();
    write_text(
        &out.join(&svg_rel),
        &health_chart_svg(config, &cells, &normalized.rows, threshold),
    )?;
    rels.push(svg_rel);

    let table_rel = "report/summary.svg".to_string();
    write_text(&out.join(&table_rel), &summary_table_svg(&summary))?;
    rels.push(table_rel);

    Ok(rels)
}

struct Panel {
    x0: f64,
    y0: f64,
    width: f64,
    height: f64,
}

impl Panel {
    fn x(&self, frac: f64) -> f64 {
        self.x0 + frac * self.width
    }

    fn y(&self, frac: f64) -> f64 {
        // SVG y grows downward.
        self.y0 + (1.0 - frac) * self.height
    }
}

fn axis_box(svg: &mut String, p: &Panel, title: &str, y_label: &str) {
    let _ = writeln!(
        svg,
        "<rect x='{}' y='{}' width='{}' height='{}' fill='none' stroke='#333'/>",
        p.x0, p.y0, p.width, p.height
    );
    let _ = writeln!(
        svg,
        "<text x='{}' y='{}' font-size='15' text-anchor='middle' font-family='sans-serif'>{}</text>",
        p.x0 + p.width / 2.0,
        p.y0 - 10.0,
        title
    );
    let _ = writeln!(
        svg,
        "<text x='{}' y='{}' font-size='12' text-anchor='middle' font-family='sans-serif' transform='rotate(-90 {} {})'>{}</text>",
        p.x0 - 45.0,
        p.y0 + p.height / 2.0,
        p.x0 - 45.0,
        p.y0 + p.height / 2.0,
        y_label
    );
}

/// Two side-by-side panels: per-window normalized features and per-window MD
/// on a log axis, grouped by severity along x.
fn health_chart_svg(
    config: &RunConfig,
    cells: &[CellScores],
    normalized_rows: &[[f64; 6]],
    threshold: Option<f64>,
) -> String {
    let total: usize = cells.iter().map(|c| c.scores.len()).sum();
    let mut svg = String::new();
    let width = 1200.0;
    let height = 520.0;
    let _ = writeln!(
        svg,
        "<svg xmlns='http://www.w3.org/2000/svg' width='{width}' height='{height}' viewBox='0 0 {width} {height}'>"
    );
    let _ = writeln!(svg, "<rect width='{width}' height='{height}' fill='white'/>");

    let left = Panel {
        x0: 70.0,
        y0: 40.0,
        width: 460.0,
        height: 380.0,
    };
    let right = Panel {
        x0: 670.0,
        y0: 40.0,
        width: 460.0,
        height: 380.0,
    };
    axis_box(
        &mut svg,
        &left,
        "Conventional: normalized time features",
        "z-scored feature value",
    );
    axis_box(
        &mut svg,
        &right,
        "Proposed: CNN activations + Mahalanobis distance",
        "squared Mahalanobis distance (log10)",
    );

    let denom = total.max(2) as f64 - 1.0;

    // Left: one polyline per feature across all windows.
    let (mut flo, mut fhi) = (f64::INFINITY, f64::NEG_INFINITY);
    for row in normalized_rows {
        for v in row {
            flo = flo.min(*v);
            fhi = fhi.max(*v);
        }
    }
    let fspan = (fhi - flo).max(1e-12);
    for (f, name) in FEATURE_NAMES.iter().enumerate() {
        let mut points = String::new();
        for (i, row) in normalized_rows.iter().enumerate() {
            let x = left.x(i as f64 / denom);
            let y = left.y((row[f] - flo) / fspan);
            let _ = write!(points, "{x:.1},{y:.1} ");
        }
        let _ = writeln!(
            svg,
            "<polyline points='{points}' fill='none' stroke='{}' stroke-width='1'/>",
            PALETTE[f % PALETTE.len()]
        );
        let _ = writeln!(
            svg,
            "<text x='{}' y='{}' font-size='11' font-family='sans-serif' fill='{}'>{}</text>",
            left.x0 + 8.0,
            left.y0 + 16.0 + 14.0 * f as f64,
            PALETTE[f % PALETTE.len()],
            name
        );
    }

    // Right: MD per window (log scale), colored per severity cell.
    let all_scores: Vec<f64> = cells.iter().flat_map(|c| c.scores.iter().copied()).collect();
    let floor = 1e-12;
    let mut mlo = f64::INFINITY;
    let mut mhi = f64::NEG_INFINITY;
    for s in &all_scores {
        let l = s.max(floor).log10();
        mlo = mlo.min(l);
        mhi = mhi.max(l);
    }
    if let Some(t) = threshold {
        let l = t.max(floor).log10();
        mlo = mlo.min(l);
        mhi = mhi.max(l);
    }
    let mspan = (mhi - mlo).max(1e-12);
    let mut offset = 0usize;
    for (ci, c) in cells.iter().enumerate() {
        let color = PALETTE[ci % PALETTE.len()];
        for (w, s) in c.scores.iter().enumerate() {
            let x = right.x((offset + w) as f64 / denom);
            let y = right.y((s.max(floor).log10() - mlo) / mspan);
            let _ = writeln!(svg, "<circle cx='{x:.1}' cy='{y:.1}' r='2.2' fill='{color}'/>");
        }
        let _ = writeln!(
            svg,
            "<text x='{}' y='{}' font-size='11' font-family='sans-serif' fill='{color}'>{} (FR {:.2}%)</text>",
            right.x0 + 8.0,
            right.y0 + 16.0 + 14.0 * ci as f64,
            c.label,
            c.fr * 100.0
        );
        // Severity boundary.
        offset += c.scores.len();
        if ci + 1 < cells.len() {
            let x = right.x(offset as f64 / denom);
            let _ = writeln!(
                svg,
                "<line x1='{x:.1}' y1='{}' x2='{x:.1}' y2='{}' stroke='#bbb' stroke-dasharray='3 3'/>",
                right.y0,
                right.y0 + right.height
            );
        }
    }
    if let Some(t) = threshold {
        let y = right.y((t.max(floor).log10() - mlo) / mspan);
        let _ = writeln!(
            svg,
            "<line x1='{}' y1='{y:.1}' x2='{}' y2='{y:.1}' stroke='#cc2222' stroke-dasharray='6 3'/>",
            right.x0,
            right.x0 + right.width
        );
        let _ = writeln!(
            svg,
            "<text x='{}' y='{:.1}' font-size='11' font-family='sans-serif' fill='#cc2222'>threshold</text>",
            right.x0 + right.width - 70.0,
            y - 5.0
        );
    }

    let _ = writeln!(
        svg,
        "<text x='{}' y='{}' font-size='12' text-anchor='middle' font-family='sans-serif'>window index (grouped by severity; master seed {})</text>",
        width / 2.0,
        height - 15.0,
        config.seed
    );
    svg.push_str("</svg>\n");
    svg
}

fn summary_table_svg(rows: &[(String, f64, usize, f64, f64, f64, f64)]) -> String {
    let headers = [
        "label",
        "FR",
        "windows",
        "MD median",
        "MD q1",
        "MD q3",
        "frac above",
    ];
    let row_h = 26.0;
    let col_w = [140.0, 80.0, 80.0, 120.0, 120.0, 120.0, 100.0];
    let width: f64 = col_w.iter().sum::<f64>() + 40.0;
    let height = row_h * (rows.len() + 2) as f64 + 20.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns='http://www.w3.org/2000/svg' width='{width}' height='{height}' viewBox='0 0 {width} {height}'>"
    );
    let _ = writeln!(svg, "<rect width='{width}' height='{height}' fill='white'/>");
    let mut x = 20.0;
    for (h, w) in headers.iter().zip(col_w) {
        let _ = writeln!(
            svg,
            "<text x='{x}' y='30' font-size='13' font-weight='bold' font-family='sans-serif'>{h}</text>"
        );
        x += w;
    }
    for (r, row) in rows.iter().enumerate() {
        let y = 30.0 + row_h * (r + 1) as f64;
        let cells = [
            row.0.clone(),
            format!("{:.2}%", row.1 * 100.0),
            format!("{}", row.2),
            format!("{:.4e}", row.3),
            format!("{:.4e}", row.4),
            format!("{:.4e}", row.5),
            format!("{:.2}", row.6),
        ];
        let mut x = 20.0;
        for (c, w) in cells.iter().zip(col_w) {
            let _ = writeln!(
                svg,
                "<text x='{x}' y='{y}' font-size='12' font-family='sans-serif'>{c}</text>"
            );
            x += w;
        }
    }
    svg.push_str("</svg>\n");
    svg
}
