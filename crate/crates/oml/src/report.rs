//! Curve CSVs, run summaries, the final-metrics table and SVG charts.

use std::fmt::Write as _;

use anyhow::{anyhow, bail, Result};
use oml_core::{CurveRow, RunOutput, StreamDataset};

use crate::config::{ridge_name, train_nn_name, update_rule_name, RunConfig};

pub const CURVE_HEADER: &str = "round,macro_f1,micro_f1,example_f1,hamming_loss,cumulative_loss";

pub fn write_curve_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.round, r.macro_f1, r.micro_f1, r.example_f1, r.hamming_loss, r.cumulative_loss
        )
        .unwrap();
    }
    out
}

pub fn parse_curve_csv(text: &str) -> Result<Vec<CurveRow>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == CURVE_HEADER => {}
        Some((_, h)) => bail!(
            "line 1: expected header {CURVE_HEADER:?}, got {:?}",
            h.trim()
        ),
        None => bail!("empty curve file"),
    }
    let mut rows: Vec<CurveRow> = Vec::new();
    for (i, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != 6 {
            bail!("line {}: expected 6 columns, got {}", i + 1, cells.len());
        }
        let num = |j: usize| -> Result<f64> {
            cells[j]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| anyhow!("line {}: bad number {:?}", i + 1, cells[j]))
        };
        let round: u64 = cells[0]
            .parse()
            .map_err(|_| anyhow!("line {}: bad round {:?}", i + 1, cells[0]))?;
        if rows.last().is_some_and(|r| r.round >= round) {
            bail!("line {}: rounds must increase", i + 1);
        }
        let row = CurveRow {
            round,
            macro_f1: num(1)?,
            micro_f1: num(2)?,
            example_f1: num(3)?,
            hamming_loss: num(4)?,
            cumulative_loss: num(5)?,
        };
        for (name, v) in [
            ("macro_f1", row.macro_f1),
            ("micro_f1", row.micro_f1),
            ("example_f1", row.example_f1),
            ("hamming_loss", row.hamming_loss),
        ] {
            if !(0.0..=1.0).contains(&v) {
                bail!("line {}: {name} {v} outside [0, 1]", i + 1);
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("curve file has no rows");
    }
    Ok(rows)
}

/// `key=value` lines describing a finished run.
pub fn summary_text(run: &RunOutput, ds: &StreamDataset, cfg: &RunConfig, rng_seed: u64) -> String {
    let hp = &cfg.hp;
    let r = &run.report;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").unwrap();
    kv("method", run.method.name().into());
    kv("dataset", ds.name().into());
    kv("n", ds.len().to_string());
    kv("p", ds.p().to_string());
    kv("q", ds.q().to_string());
    kv("label_cardinality", ds.label_cardinality().to_string());
    kv("seed_size", run.seed_size.to_string());
    kv("stream_size", run.stream_size.to_string());
    if run.method == oml_core::Method::Oml {
        kv("d", hp.embedding_dim(ds.q()).to_string());
    }
    kv("k", hp.k.to_string());
    kv("m", hp.lambda_min.to_string());
    kv("M", hp.lambda_max.to_string());
    kv("seed_fraction", hp.seed_fraction.to_string());
    kv("ridge", ridge_name(hp.ridge));
    kv("update_rule", update_rule_name(hp.update_rule).into());
    kv("train_nn", train_nn_name(hp.train_nn).into());
    kv("threshold", hp.threshold.to_string());
    kv("shuffle", hp.shuffle.to_string());
    kv("rng_seed", rng_seed.to_string());
    kv("checkpoint_every", cfg.checkpoint_every.to_string());
    kv("macro_f1", r.macro_f1().to_string());
    kv("micro_f1", r.micro_f1().to_string());
    kv("example_f1", r.example_f1().to_string());
    kv("hamming_loss", r.hamming_loss().to_string());
    kv("cumulative_loss", run.cumulative_loss().to_string());
    let mean = if run.stream_size > 0 {
        run.cumulative_loss() / run.stream_size as f64
    } else {
        0.0
    };
    kv("mean_loss_per_round", mean.to_string());
    kv("r_hat", r.r_hat().to_string());
    kv("loss_positive_rounds", run.positive_loss_rounds.to_string());
    kv("singular_fallbacks", run.singular_fallbacks.to_string());
    s
}

/// Side-by-side final metrics, one row per named curve.
pub fn final_table(curves: &[(String, Vec<CurveRow>)]) -> String {
    let width = curves
        .iter()
        .map(|(n, _)| n.len())
        .max()
        .unwrap_or(0)
        .max(6);
    let mut s = String::new();
    writeln!(
        s,
        "{:<width$}  {:>8}  {:>8}  {:>8}  {:>10}  {:>12}  {:>15}",
        "series", "rounds", "macro_f1", "micro_f1", "example_f1", "hamming_loss", "cumulative_loss"
    )
    .unwrap();
    for (name, rows) in curves {
        let last = rows.last().expect("curves are non-empty");
        writeln!(
            s,
            "{:<width$}  {:>8}  {:>8.4}  {:>8.4}  {:>10.4}  {:>12.4}  {:>15.4}",
            name,
            last.round,
            last.macro_f1,
            last.micro_f1,
            last.example_f1,
            last.hamming_loss,
            last.cumulative_loss
        )
        .unwrap();
    }
    s
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// A line chart of one metric over rounds; y is fixed to [0, 1].
pub fn svg_chart(title: &str, series: &[(String, Vec<(u64, f64)>)]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 170.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let max_round = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.0))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let sx = |r: f64| left + pw * r / max_round;
    let sy = |v: f64| top + ph * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#, left + pw / 2.0, escape(title)).unwrap();
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let y = sy(v);
        writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/>"##,
            left + pw
        )
        .unwrap();
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.1}</text>"#, left - 6.0, y + 4.0).unwrap();
    }
    for i in 0..=4 {
        let r = max_round * i as f64 / 4.0;
        let x = sx(r);
        writeln!(s, r#"<text x="{x:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#, top + ph + 16.0, r.round()).unwrap();
    }
    writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">round</text>"#, left + pw / 2.0, h - 10.0).unwrap();
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|&(r, v)| format!("{:.2},{:.2}", sx(r as f64), sy(v)))
            .collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        )
        .unwrap();
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 18.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            lx + 24.0,
            ly + 4.0,
            escape(name)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// The four per-metric charts as `(file name, svg)`.
pub fn metric_charts(curves: &[(String, Vec<CurveRow>)]) -> Vec<(String, String)> {
    type Getter = fn(&CurveRow) -> f64;
    let metrics: [(&str, Getter); 4] = [
        ("macro_f1", |r| r.macro_f1),
        ("micro_f1", |r| r.micro_f1),
        ("example_f1", |r| r.example_f1),
        ("hamming_loss", |r| r.hamming_loss),
    ];
    metrics
        .iter()
        .map(|(name, get)| {
            let series: Vec<(String, Vec<(u64, f64)>)> = curves
                .iter()
                .map(|(n, rows)| (n.clone(), rows.iter().map(|r| (r.round, get(r))).collect()))
                .collect();
            (format!("{name}.svg"), svg_chart(name, &series))
        })
        .collect()
}
