//! Merged result tables and static SVG plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::align::SummaryRow;
use crate::error::{Error, Result};
use crate::probe::ResultRow;
use crate::train::LogRow;

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::Input(format!("csv: {e}"))
}

pub fn write_log<W: Write>(out: W, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

pub fn read_log<R: std::io::Read>(input: R) -> Result<Vec<LogRow>> {
    csv::Reader::from_reader(input).deserialize().map(|r| r.map_err(csv_err)).collect()
}

/// One value per (encoder, metric).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub encoder: String,
    pub metric: String,
    pub value: Option<f64>,
}

/// Long-format table: probe metrics are averaged over the tasks that report
/// them; alignment rows become `rho_partial/<metric>`. Sorted by encoder,
/// then metric.
pub fn metric_table(results: &[ResultRow], alignment: &[SummaryRow]) -> Vec<MetricRow> {
    let mut acc: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    let mut undefined: BTreeMap<(String, String), ()> = BTreeMap::new();
    for r in results {
        let fields = [
            ("success_rate", r.success_rate),
            ("bc_train_loss", r.bc_train_loss),
            ("bc_val_loss", r.bc_val_loss),
            ("state_train_loss", r.state_train_loss),
            ("state_val_loss", r.state_val_loss),
        ];
        for (name, v) in fields {
            if let Some(v) = v {
                acc.entry((r.encoder_id.clone(), name.into())).or_default().push(v);
            }
        }
    }
    for s in alignment {
        let key = (s.encoder.clone(), format!("rho_partial/{}", s.metric));
        match s.rho_partial {
            Some(v) => acc.entry(key).or_default().push(v),
            None => {
                undefined.insert(key, ());
            }
        }
    }
    let mut rows: Vec<MetricRow> = acc
        .into_iter()
        .map(|((encoder, metric), vs)| MetricRow {
            encoder,
            metric,
            value: Some(vs.iter().sum::<f64>() / vs.len() as f64),
        })
        .collect();
    for (encoder, metric) in undefined.into_keys() {
        if !rows.iter().any(|r| r.encoder == encoder && r.metric == metric) {
            rows.push(MetricRow {
                encoder,
                metric,
                value: None,
            });
        }
    }
    rows.sort_by(|a, b| (&a.encoder, &a.metric).cmp(&(&b.encoder, &b.metric)));
    rows
}

pub fn write_metrics<W: Write>(out: W, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

pub fn read_metrics<R: std::io::Read>(input: R) -> Result<Vec<MetricRow>> {
    csv::Reader::from_reader(input).deserialize().map(|r| r.map_err(csv_err)).collect()
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(s: &mut String, y_lo: f64, y_hi: f64, x_label: &str, y_label: &str) {
    let (x0, x1, y0, y1) = (MARGIN, W - MARGIN, H - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for k in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * k as f64 / 4.0;
        let y = y0 - (y0 - y1) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.3}</text>"#, x0 - 4.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 16.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
}

/// `L_vla` (solid) and `L_inv` (dashed, when present) against step, one
/// colour per run.
pub fn loss_curves_svg(runs: &[(String, Vec<LogRow>)]) -> String {
    let mut s = svg_open("Training losses");
    let vals = runs.iter().flat_map(|(_, log)| log.iter().flat_map(|r| [r.l_vla, r.l_inv]));
    let y_hi = vals.fold(0.0f64, |m, v| if v.is_finite() { m.max(v) } else { m }).max(1e-9);
    let x_hi = runs.iter().flat_map(|(_, l)| l.iter().map(|r| r.step)).max().unwrap_or(1).max(1) as f64;
    axes(&mut s, 0.0, y_hi, "step", "loss");
    let px = |step: u64| MARGIN + (W - 2.0 * MARGIN) * step as f64 / x_hi;
    let py = |v: f64| H - MARGIN - (H - 2.0 * MARGIN) * (v / y_hi).clamp(0.0, 1.0);
    for (k, (name, log)) in runs.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let line = |f: fn(&LogRow) -> f64| log.iter().map(|r| format!("{:.2},{:.2}", px(r.step), py(f(r)))).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.2" points="{}"/>"#, line(|r| r.l_vla));
        if log.iter().any(|r| r.l_inv != 0.0) {
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{colour}" stroke-width="1.2" stroke-dasharray="4 3" points="{}"/>"#,
                line(|r| r.l_inv)
            );
        }
        let ly = MARGIN + 16.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="12" height="3" fill="{colour}"/>"#, W - MARGIN - 150.0, ly - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, W - MARGIN - 134.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

/// Grouped bars of ρ_partial per encoder, one bar per metric. Undefined
/// values are drawn as a hollow marker at zero.
pub fn alignment_svg(rows: &[SummaryRow]) -> String {
    let mut s = svg_open("Pixel-controlled partial Spearman");
    let mut encoders: Vec<&str> = Vec::new();
    let mut metrics: Vec<&str> = Vec::new();
    for r in rows {
        if !encoders.contains(&r.encoder.as_str()) {
            encoders.push(&r.encoder);
        }
        if !metrics.contains(&r.metric.as_str()) {
            metrics.push(&r.metric);
        }
    }
    let lo = rows.iter().filter_map(|r| r.rho_partial).fold(0.0f64, f64::min).min(-0.1);
    let hi = rows.iter().filter_map(|r| r.rho_partial).fold(0.0f64, f64::max).max(0.1);
    axes(&mut s, lo, hi, "encoder", "rho_partial");
    let py = |v: f64| H - MARGIN - (H - 2.0 * MARGIN) * (v - lo) / (hi - lo);
    let group = (W - 2.0 * MARGIN) / encoders.len().max(1) as f64;
    let bar = group * 0.8 / metrics.len().max(1) as f64;
    let _ = writeln!(s, r#"<line x1="{MARGIN}" y1="{0}" x2="{1}" y2="{0}" stroke="gray"/>"#, py(0.0), W - MARGIN);
    for (e, enc) in encoders.iter().enumerate() {
        let gx = MARGIN + group * e as f64 + group * 0.1;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, gx + group * 0.4, H - MARGIN + 16.0, escape(enc));
        for (m, metric) in metrics.iter().enumerate() {
            let colour = PALETTE[m % PALETTE.len()];
            let x = gx + bar * m as f64;
            match rows.iter().find(|r| r.encoder == *enc && r.metric == *metric).and_then(|r| r.rho_partial) {
                Some(v) => {
                    let (top, bottom) = (py(v.max(0.0)), py(v.min(0.0)));
                    let _ = writeln!(
                        s,
                        r#"<rect x="{x:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{colour}"/>"#,
                        bar * 0.9,
                        bottom - top
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="4" fill="none" stroke="{colour}"/>"#,
                        py(0.0) - 2.0,
                        bar * 0.9
                    );
                }
            }
        }
    }
    for (m, metric) in metrics.iter().enumerate() {
        let ly = MARGIN + 16.0 * m as f64;
        let colour = PALETTE[m % PALETTE.len()];
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="10" height="10" fill="{colour}"/>"#, W - MARGIN - 100.0, ly - 9.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, W - MARGIN - 84.0, escape(metric));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(encoder: &str, metric: &str, rho: Option<f64>) -> SummaryRow {
        SummaryRow {
            encoder: encoder.into(),
            metric: metric.into(),
            rho_partial: rho,
            n_pairs: 10,
            n_dropped: 0,
        }
    }

    #[test]
    fn one_row_per_encoder_metric() {
        let mut a = ResultRow::new("enc-a", "pick-red");
        a.success_rate = Some(0.5);
        a.bc_train_loss = Some(0.2);
        let mut b = ResultRow::new("enc-a", "stack-red-blue");
        b.success_rate = Some(0.25);
        let mut c = ResultRow::new("enc-b", "all");
        c.state_val_loss = Some(0.1);
        let al = [summary("enc-a", "cosine", Some(0.3)), summary("enc-a", "scale", None)];
        let rows = metric_table(&[a, b, c], &al);
        let keys: Vec<(&str, &str)> = rows.iter().map(|r| (r.encoder.as_str(), r.metric.as_str())).collect();
        assert_eq!(
            keys,
            vec![
                ("enc-a", "bc_train_loss"),
                ("enc-a", "rho_partial/cosine"),
                ("enc-a", "rho_partial/scale"),
                ("enc-a", "success_rate"),
                ("enc-b", "state_val_loss"),
            ]
        );
        assert_eq!(rows[3].value, Some(0.375));
        assert_eq!(rows[2].value, None);
        let mut buf = Vec::new();
        write_metrics(&mut buf, &rows).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("encoder,metric,value\n"));
        assert_eq!(read_metrics(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn log_csv_round_trip() {
        let rows = vec![LogRow {
            step: 1,
            l_vla: 0.5,
            l_inv: 0.25,
            total: 0.55,
            reversed_fraction: 0.5,
        }];
        let mut buf = Vec::new();
        write_log(&mut buf, &rows).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("step,L_vla,L_inv,total,reversed_fraction\n"));
        assert_eq!(read_log(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn svgs_are_well_formed_documents() {
        let log = |k: f64| {
            (1..=5)
                .map(|s| LogRow {
                    step: s,
                    l_vla: k / s as f64,
                    l_inv: 0.1,
                    total: 0.0,
                    reversed_fraction: 0.0,
                })
                .collect::<Vec<_>>()
        };
        let svg = loss_curves_svg(&[("bc".into(), log(1.0)), ("a<b".into(), log(2.0))]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert!(svg.contains("a&lt;b"));
        let bars = alignment_svg(&[summary("bc", "cosine", Some(0.2)), summary("bc", "scale", Some(-0.1)), summary("rnd", "cosine", None)]);
        assert!(bars.trim_end().ends_with("</svg>"));
        assert!(bars.contains(">rnd<"));
    }
}
