//! Collation of result files from a directory into a single CSV, JSON, or
//! SVG artifact. Inputs are evaluation reports, compare grids, and training
//! histories; anything else in the directory is ignored.

use std::collections::BTreeSet;
use std::path::Path;

use serde::Serialize;

use crate::compare::{CompareReport, COMPARE_FORMAT};
use crate::config::TOOL_VERSION;
use crate::error::{Error, Result};
use crate::eval::{MetricsReport, REPORT_FORMAT};
use crate::train::HISTORY_FORMAT;

pub const COLLATION_FORMAT: &str = "wmlm-collation-1";

/// One loss curve extracted from a history file: (epoch, loss) for the
/// train rows (stage-1 rows carry no split and count as train).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossCurve {
    pub file: String,
    pub stage: String,
    pub points: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Collated {
    pub format: String,
    pub tool_version: String,
    pub config_digests: Vec<String>,
    pub seeds: Vec<u64>,
    pub reports: Vec<(String, MetricsReport)>,
    pub compares: Vec<(String, CompareReport)>,
    pub curves: Vec<LossCurve>,
}

fn parse_history(path: &Path) -> Option<LossCurve> {
    let text = std::fs::read_to_string(path).ok()?;
    let mut lines = text.lines();
    let header: serde_json::Value = serde_json::from_str(lines.next()?).ok()?;
    if header.get("format")? != HISTORY_FORMAT {
        return None;
    }
    let stage = header.get("stage")?.as_str()?.to_string();
    let mut points = Vec::new();
    for line in lines {
        let row: serde_json::Value = serde_json::from_str(line).ok()?;
        let is_train = row.get("split").map(|s| s == "train").unwrap_or(true);
        if is_train {
            points.push((row.get("epoch")?.as_u64()? as usize, row.get("loss")?.as_f64()?));
        }
    }
    Some(LossCurve { file: stem(path), stage, points })
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("?").to_string()
}

/// Scan a directory (sorted by file name, so output is reproducible) and
/// classify every readable artifact.
pub fn collect(dir: &Path) -> Result<Collated> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    paths.sort();

    let mut out = Collated {
        format: COLLATION_FORMAT.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        config_digests: Vec::new(),
        seeds: Vec::new(),
        reports: Vec::new(),
        compares: Vec::new(),
        curves: Vec::new(),
    };
    let mut digests = BTreeSet::new();
    let mut seeds = BTreeSet::new();
    for path in &paths {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if ext == "json" {
            let text = std::fs::read_to_string(path)?;
            if let Ok(r) = serde_json::from_str::<MetricsReport>(&text) {
                if r.format == REPORT_FORMAT {
                    digests.insert(r.config_digest.clone());
                    seeds.insert(r.seed);
                    out.reports.push((stem(path), r));
                    continue;
                }
            }
            if let Ok(c) = serde_json::from_str::<CompareReport>(&text) {
                if c.format == COMPARE_FORMAT {
                    digests.insert(c.config_digest.clone());
                    seeds.insert(c.seed);
                    out.compares.push((stem(path), c));
                }
            }
        } else if ext == "jsonl" {
            if let Some(curve) = parse_history(path) {
                out.curves.push(curve);
            }
        }
    }
    if out.reports.is_empty() && out.compares.is_empty() && out.curves.is_empty() {
        return Err(Error::Data(format!("{}: no collatable result files", dir.display())));
    }
    out.config_digests = digests.into_iter().collect();
    out.seeds = seeds.into_iter().collect();
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn to_csv(c: &Collated) -> String {
    let mut out = format!(
        "# format={} tool_version={} config_digests={} seeds={}\n",
        c.format,
        c.tool_version,
        c.config_digests.join("|"),
        c.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("|")
    );
    out.push_str(
        "file,model,split,seed,config_digest,\
         top1_step1,top1_step2,top1_step3,top3_step1,top3_step2,top3_step3,\
         top5_step1,top5_step2,top5_step3,nmse,retrieval,\
         persistence_top1_step1,persistence_top1_step2,persistence_top1_step3,\
         persistence_nmse,majority_top1_step1,majority_top1_step2,majority_top1_step3\n",
    );
    for (file, r) in &c.reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            file,
            r.model,
            r.split.name,
            r.seed,
            r.config_digest,
            r.top1[0],
            r.top1[1],
            r.top1[2],
            r.top3[0],
            r.top3[1],
            r.top3[2],
            r.top5[0],
            r.top5[1],
            r.top5[2],
            fmt_opt(r.nmse),
            fmt_opt(r.retrieval),
            r.persistence_top1[0],
            r.persistence_top1[1],
            r.persistence_top1[2],
            r.persistence_nmse,
            r.majority_top1[0],
            r.majority_top1[1],
            r.majority_top1[2],
        ));
    }
    // compare summaries reuse the leading columns and leave the rest blank
    for (file, cr) in &c.compares {
        for s in &cr.summary {
            let mut cols = vec![String::new(); 23];
            cols[0] = format!("{file}/{}-{}", s.split, s.anchor);
            cols[1] = "compare".to_string();
            cols[2] = s.split.clone();
            cols[3] = cr.seed.to_string();
            cols[4] = cr.config_digest.clone();
            for i in 0..3 {
                cols[5 + i] = s.median_top1[i].to_string();
            }
            cols[14] = s.median_nmse.to_string();
            out.push_str(&cols.join(","));
            out.push('\n');
        }
    }
    out
}

pub fn to_json(c: &Collated) -> Result<String> {
    serde_json::to_string_pretty(c)
        .map(|s| s + "\n")
        .map_err(|e| Error::Data(format!("collation serialization: {e}")))
}

const BAR_COLORS: [&str; 3] = ["#4c78a8", "#f58518", "#54a24b"];
const CURVE_COLORS: [&str; 6] =
    ["#4c78a8", "#f58518", "#54a24b", "#e45756", "#72b7b2", "#b279a2"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped vertical bars scaled into [x0, x0+w] × [y0, y0+h]; one group per
/// label, one bar per value. Values are clipped to [0, ymax].
fn bar_panel(
    svg: &mut String,
    (x0, y0, w, h): (f64, f64, f64, f64),
    title: &str,
    groups: &[(String, Vec<f64>)],
    ymax: f64,
) {
    svg.push_str(&format!(
        "<text x='{}' y='{}' font-size='13' text-anchor='middle' font-family='sans-serif'>{}</text>\n",
        x0 + w / 2.0,
        y0 - 8.0,
        esc(title)
    ));
    svg.push_str(&format!(
        "<line x1='{x0}' y1='{}' x2='{}' y2='{}' stroke='#333'/>\n",
        y0 + h,
        x0 + w,
        y0 + h
    ));
    svg.push_str(&format!("<line x1='{x0}' y1='{y0}' x2='{x0}' y2='{}' stroke='#333'/>\n", y0 + h));
    for i in 0..=4 {
        let v = ymax * i as f64 / 4.0;
        let y = y0 + h - h * i as f64 / 4.0;
        svg.push_str(&format!(
            "<text x='{}' y='{}' font-size='9' text-anchor='end' font-family='sans-serif'>{v:.2}</text>\n",
            x0 - 4.0,
            y + 3.0
        ));
        svg.push_str(&format!(
            "<line x1='{x0}' y1='{y}' x2='{}' y2='{y}' stroke='#ddd' stroke-dasharray='2,3'/>\n",
            x0 + w
        ));
    }
    if groups.is_empty() {
        return;
    }
    let group_w = w / groups.len() as f64;
    for (gi, (label, values)) in groups.iter().enumerate() {
        let gx = x0 + gi as f64 * group_w;
        let n = values.len().max(1) as f64;
        let bar_w = (group_w * 0.8) / n;
        for (vi, &v) in values.iter().enumerate() {
            let vh = (v.clamp(0.0, ymax) / ymax) * h;
            svg.push_str(&format!(
                "<rect x='{:.2}' y='{:.2}' width='{:.2}' height='{:.2}' fill='{}'/>\n",
                gx + group_w * 0.1 + vi as f64 * bar_w,
                y0 + h - vh,
                bar_w * 0.92,
                vh,
                BAR_COLORS[vi % BAR_COLORS.len()]
            ));
        }
        svg.push_str(&format!(
            "<text x='{:.2}' y='{:.2}' font-size='9' text-anchor='middle' font-family='sans-serif'>{}</text>\n",
            gx + group_w / 2.0,
            y0 + h + 12.0,
            esc(&label.chars().take(14).collect::<String>())
        ));
    }
}

fn line_panel(
    svg: &mut String,
    (x0, y0, w, h): (f64, f64, f64, f64),
    title: &str,
    curves: &[LossCurve],
) {
    svg.push_str(&format!(
        "<text x='{}' y='{}' font-size='13' text-anchor='middle' font-family='sans-serif'>{}</text>\n",
        x0 + w / 2.0,
        y0 - 8.0,
        esc(title)
    ));
    svg.push_str(&format!(
        "<line x1='{x0}' y1='{}' x2='{}' y2='{}' stroke='#333'/>\n",
        y0 + h,
        x0 + w,
        y0 + h
    ));
    svg.push_str(&format!("<line x1='{x0}' y1='{y0}' x2='{x0}' y2='{}' stroke='#333'/>\n", y0 + h));
    let max_epoch = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.0))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let max_loss = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.1))
        .fold(f64::MIN, f64::max)
        .max(1e-9);
    for (ci, curve) in curves.iter().enumerate() {
        if curve.points.is_empty() {
            continue;
        }
        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|&(e, l)| {
                format!(
                    "{:.2},{:.2}",
                    x0 + (e as f64 / max_epoch) * w,
                    y0 + h - (l.clamp(0.0, max_loss) / max_loss) * h
                )
            })
            .collect();
        let color = CURVE_COLORS[ci % CURVE_COLORS.len()];
        svg.push_str(&format!(
            "<polyline points='{}' fill='none' stroke='{color}' stroke-width='1.5'/>\n",
            pts.join(" ")
        ));
        svg.push_str(&format!(
            "<text x='{}' y='{}' font-size='9' fill='{color}' font-family='sans-serif'>{}</text>\n",
            x0 + w + 4.0,
            y0 + 10.0 + 11.0 * ci as f64,
            esc(&curve.file.chars().take(16).collect::<String>())
        ));
    }
    svg.push_str(&format!(
        "<text x='{}' y='{}' font-size='9' text-anchor='middle' font-family='sans-serif'>epoch (max {max_epoch:.0})</text>\n",
        x0 + w / 2.0,
        y0 + h + 12.0
    ));
}

/// Three fixed panels: top-1 accuracy bars per step, forecast NMSE bars, and
/// training-loss line curves. Metadata rides in the <desc> element.
pub fn to_svg(c: &Collated) -> String {
    let (width, height) = (1060.0, 300.0);
    let mut svg = format!(
        "<svg xmlns='http://www.w3.org/2000/svg' width='{width}' height='{height}' viewBox='0 0 {width} {height}'>\n"
    );
    svg.push_str(&format!(
        "<desc>format={} tool_version={} config_digests={} seeds={}</desc>\n",
        c.format,
        c.tool_version,
        c.config_digests.join("|"),
        c.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("|")
    ));
    svg.push_str(&format!("<rect width='{width}' height='{height}' fill='white'/>\n"));

    let mut acc_groups: Vec<(String, Vec<f64>)> = Vec::new();
    let mut nmse_groups: Vec<(String, Vec<f64>)> = Vec::new();
    for (file, r) in &c.reports {
        acc_groups.push((file.clone(), r.top1.to_vec()));
        if let Some(n) = r.nmse {
            nmse_groups.push((file.clone(), vec![n]));
        }
    }
    for (_, cr) in &c.compares {
        for s in &cr.summary {
            acc_groups.push((format!("{}-{}", s.split, s.anchor), s.median_top1.to_vec()));
            nmse_groups.push((format!("{}-{}", s.split, s.anchor), vec![s.median_nmse]));
        }
    }
    let nmse_max = nmse_groups
        .iter()
        .flat_map(|(_, v)| v.iter().cloned())
        .fold(f64::MIN, f64::max)
        .max(1e-9)
        * 1.1;
    bar_panel(&mut svg, (50.0, 30.0, 280.0, 220.0), "top-1 accuracy by step", &acc_groups, 1.0);
    bar_panel(&mut svg, (400.0, 30.0, 280.0, 220.0), "forecast NMSE (log-power)", &nmse_groups, nmse_max);
    line_panel(&mut svg, (740.0, 30.0, 220.0, 220.0), "training loss", &c.curves);
    svg.push_str("</svg>\n");
    svg
}

/// Render the directory in the requested format. Returns the content and
/// the natural file extension.
pub fn render(dir: &Path, format: &str) -> Result<(String, &'static str)> {
    let collated = collect(dir)?;
    match format {
        "csv" => Ok((to_csv(&collated), "csv")),
        "json" => Ok((to_json(&collated)?, "json")),
        "svg" => Ok((to_svg(&collated), "svg")),
        other => Err(Error::Config(format!("unknown report format {other:?} (csv|json|svg)"))),
    }
}
