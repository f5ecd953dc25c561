//! Label-efficiency metrics and report emission.
//!
//! Covers the area under the budget/accuracy curve (trapezoid rule,
//! normalized by budget span), feature-space diversity of adversarial
//! additions (pairwise distances between penultimate-layer embeddings),
//! cross-run aggregation by the law of total variance, and the three
//! report surfaces: round-record CSV, accuracy-curve SVG, and a plain-text
//! summary table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::engine::RoundRecord;
use crate::linalg::squared_distance;
use crate::nn::MlpModel;
use crate::{Error, Result, Scalar};

/// One point of an accuracy-vs-label-budget curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub budget: f64,
    pub accuracy: f64,
}

/// Mean and population standard deviation of pairwise embedding
/// distances, with the number of pairs they summarize.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiversityStat {
    pub mean: f64,
    pub std: f64,
    pub pair_count: u64,
}

/// Area under the budget/accuracy curve by the trapezoid rule, divided by
/// the budget span so the result lives on the accuracy scale.
///
/// Requires at least two points with strictly increasing budgets.
pub fn aubc(curve: &[CurvePoint]) -> Result<f64> {
    if curve.len() < 2 {
        return Err(Error::invalid(format!(
            "aubc: need at least 2 curve points, got {}",
            curve.len()
        )));
    }
    for pair in curve.windows(2) {
        if !(pair[1].budget > pair[0].budget) {
            return Err(Error::invalid(format!(
                "aubc: budgets must be strictly increasing ({} then {})",
                pair[0].budget, pair[1].budget
            )));
        }
    }
    let mut area = 0.0;
    for pair in curve.windows(2) {
        area += (pair[1].budget - pair[0].budget) * (pair[0].accuracy + pair[1].accuracy) / 2.0;
    }
    Ok(area / (curve[curve.len() - 1].budget - curve[0].budget))
}

/// Pairwise-distance diversity of adversarial additions in the model's
/// penultimate feature space.
///
/// `adv_sets` groups the added points by source sample. When more than
/// `sample_cap` sources exist, a uniform subset of sources is kept; all
/// points of the kept sources are embedded and every unordered pair
/// contributes one Euclidean distance. Fewer than two pooled points is an
/// error.
pub fn diversity<T: Scalar, R: Rng>(
    model: &MlpModel<T>,
    adv_sets: &[Vec<Vec<T>>],
    sample_cap: usize,
    rng: &mut R,
) -> Result<DiversityStat> {
    if sample_cap == 0 {
        return Err(Error::invalid("diversity: sample_cap must be positive"));
    }
    let kept: Vec<&Vec<Vec<T>>> = if adv_sets.len() > sample_cap {
        let mut idx: Vec<usize> = rand::seq::index::sample(rng, adv_sets.len(), sample_cap).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| &adv_sets[i]).collect()
    } else {
        adv_sets.iter().collect()
    };
    let embeddings: Vec<Vec<T>> = kept
        .iter()
        .flat_map(|set| set.iter())
        .map(|point| model.penultimate(point))
        .collect();
    if embeddings.len() < 2 {
        return Err(Error::invalid(format!(
            "diversity: need at least 2 adversarial points, got {}",
            embeddings.len()
        )));
    }
    let mut distances = Vec::with_capacity(embeddings.len() * (embeddings.len() - 1) / 2);
    for i in 0..embeddings.len() {
        for j in (i + 1)..embeddings.len() {
            distances.push(
                squared_distance(&embeddings[i], &embeddings[j])
                    .as_f64()
                    .sqrt(),
            );
        }
    }
    let n = distances.len() as f64;
    let mean = distances.iter().sum::<f64>() / n;
    let var = distances.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    Ok(DiversityStat {
        mean,
        std: var.sqrt(),
        pair_count: distances.len() as u64,
    })
}

/// Combines per-run diversity statistics into one, weighting by pair count
/// (law of total variance, population convention): the result equals the
/// statistic over the pooled distances.
pub fn aggregate_runs(stats: &[DiversityStat]) -> Result<DiversityStat> {
    let total: u64 = stats.iter().map(|s| s.pair_count).sum();
    if stats.is_empty() || total == 0 {
        return Err(Error::invalid(
            "aggregate_runs: need at least one statistic with a positive pair count",
        ));
    }
    let n = total as f64;
    let mean = stats
        .iter()
        .map(|s| s.pair_count as f64 * s.mean)
        .sum::<f64>()
        / n;
    let var = stats
        .iter()
        .map(|s| s.pair_count as f64 * (s.std * s.std + (s.mean - mean) * (s.mean - mean)))
        .sum::<f64>()
        / n;
    Ok(DiversityStat {
        mean,
        std: var.sqrt(),
        pair_count: total,
    })
}

/// Exact column order of the round-record CSV.
pub const CSV_HEADER: &str =
    "run,round,labeled,accuracy,adv_added,sat,unsat,timeout,select_ms,verify_ms,train_ms";

/// Writes round records as CSV with the fixed [`CSV_HEADER`] schema.
pub fn write_csv(records: &[RoundRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("write_csv: no records to write"));
    }
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.run,
            r.round,
            r.labeled,
            r.accuracy,
            r.adv_added,
            r.sat,
            r.unsat,
            r.timeout,
            r.select_ms,
            r.verify_ms,
            r.train_ms
        );
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a CSV produced by [`write_csv`]; numeric fields round-trip
/// exactly.
pub fn read_csv(path: &Path) -> Result<Vec<RoundRecord>> {
    let text = fs::read_to_string(path)?;
    let fmt_err = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    let mut records = Vec::new();
    let mut offset = 0usize;
    let mut saw_header = false;
    for line in text.split_inclusive('\n') {
        let line_start = offset;
        offset += line.len();
        let line = line.trim_end_matches('\n').trim_end_matches('\r');
        if !saw_header {
            if line != CSV_HEADER {
                return Err(fmt_err(
                    line_start,
                    format!("expected header `{CSV_HEADER}`, got `{line}`"),
                ));
            }
            saw_header = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(fmt_err(
                line_start,
                format!("expected 11 fields, got {}", fields.len()),
            ));
        }
        let int = |s: &str, name: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| fmt_err(line_start, format!("field {name}: invalid integer `{s}`")))
        };
        let int64 = |s: &str, name: &str| -> Result<u64> {
            s.parse()
                .map_err(|_| fmt_err(line_start, format!("field {name}: invalid integer `{s}`")))
        };
        let accuracy: f64 = fields[3].parse().map_err(|_| {
            fmt_err(
                line_start,
                format!("field accuracy: invalid float `{}`", fields[3]),
            )
        })?;
        records.push(RoundRecord {
            run: int(fields[0], "run")?,
            round: int(fields[1], "round")?,
            labeled: int(fields[2], "labeled")?,
            accuracy,
            adv_added: int(fields[4], "adv_added")?,
            sat: int(fields[5], "sat")?,
            unsat: int(fields[6], "unsat")?,
            timeout: int(fields[7], "timeout")?,
            select_ms: int64(fields[8], "select_ms")?,
            verify_ms: int64(fields[9], "verify_ms")?,
            train_ms: int64(fields[10], "train_ms")?,
        });
    }
    if !saw_header {
        return Err(fmt_err(0, "empty file, expected CSV header".to_string()));
    }
    Ok(records)
}

const SVG_PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#393b79", "#ad494a",
];

/// Renders labeled accuracy curves to a standalone SVG file.
///
/// Emits exactly one `<polyline>` element per curve; axes, tick marks, and
/// legend swatches are drawn with `<line>` elements. Output bytes are a
/// pure function of the input.
pub fn render_curves_svg(curves: &[(String, Vec<CurvePoint>)], path: &Path) -> Result<()> {
    if curves.is_empty() {
        return Err(Error::invalid("render_curves_svg: no curves"));
    }
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    for (label, points) in curves {
        if points.is_empty() {
            return Err(Error::invalid(format!(
                "render_curves_svg: curve `{label}` is empty"
            )));
        }
        for p in points {
            if !p.budget.is_finite() || !p.accuracy.is_finite() {
                return Err(Error::invalid(format!(
                    "render_curves_svg: curve `{label}` has a non-finite point"
                )));
            }
            x_min = x_min.min(p.budget);
            x_max = x_max.max(p.budget);
        }
    }
    if x_max <= x_min {
        x_min -= 1.0;
        x_max += 1.0;
    }
    // Plot rectangle inside a fixed 860x540 canvas; y is the accuracy
    // scale pinned to [0, 1].
    let (left, right, top, bottom) = (70.0, 640.0, 20.0, 480.0);
    let px = |b: f64| left + (b - x_min) / (x_max - x_min) * (right - left);
    let py = |a: f64| bottom - a.clamp(0.0, 1.0) * (bottom - top);

    let mut svg = String::new();
    svg.push_str(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"860\" height=\"540\" viewBox=\"0 0 860 540\">\n",
    );
    svg.push_str("<rect width=\"860\" height=\"540\" fill=\"white\"/>\n");
    let _ = writeln!(
        svg,
        "<line x1=\"{left}\" y1=\"{bottom}\" x2=\"{right}\" y2=\"{bottom}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{bottom}\" stroke=\"black\"/>"
    );
    for k in 0..=4 {
        let a = k as f64 / 4.0;
        let y = py(a);
        let _ = writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{left}\" y2=\"{y:.2}\" stroke=\"black\"/>",
            left - 6.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\">{a:.2}</text>",
            left - 10.0,
            y + 4.0
        );
    }
    for k in 0..=4 {
        let b = x_min + (x_max - x_min) * k as f64 / 4.0;
        let x = px(b);
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{bottom}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
            bottom + 6.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{x:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{b:.0}</text>",
            bottom + 20.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\">labeled samples</text>",
        (left + right) / 2.0,
        bottom + 40.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"18\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.2})\">test accuracy</text>",
        (top + bottom) / 2.0,
        (top + bottom) / 2.0
    );
    for (i, (label, points)) in curves.iter().enumerate() {
        let color = SVG_PALETTE[i % SVG_PALETTE.len()];
        let coords: Vec<String> = points
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.budget), py(p.accuracy)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            coords.join(" ")
        );
        let ly = 30.0 + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            "<line x1=\"660\" y1=\"{ly:.2}\" x2=\"684\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>"
        );
        let _ = writeln!(
            svg,
            "<text x=\"690\" y=\"{:.2}\" font-size=\"12\">{label}</text>",
            ly + 4.0
        );
    }
    svg.push_str("</svg>\n");
    fs::write(path, svg)?;
    Ok(())
}

/// One row of the plain-text summary: a cell label with its aggregate
/// metrics.
#[derive(Clone, Debug)]
pub struct SummaryRow {
    pub label: String,
    pub aubc_mean: f64,
    pub final_accuracy_mean: f64,
    pub diversity: Option<DiversityStat>,
}

/// Formats the cross-cell comparison table. The best area-under-curve is
/// bolded (`**v**`) and the second best underlined (`_v_`).
pub fn format_summary(rows: &[SummaryRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::invalid("format_summary: no rows"));
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[b].aubc_mean.partial_cmp(&rows[a].aubc_mean).unwrap());
    let best = order[0];
    let second = order.get(1).copied();

    let mut cells: Vec<[String; 4]> = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let aubc = if i == best {
            format!("**{:.4}**", row.aubc_mean)
        } else if Some(i) == second {
            format!("_{:.4}_", row.aubc_mean)
        } else {
            format!("{:.4}", row.aubc_mean)
        };
        let div = match &row.diversity {
            Some(d) => format!("{:.4} +/- {:.4}", d.mean, d.std),
            None => "-".to_string(),
        };
        cells.push([
            row.label.clone(),
            aubc,
            format!("{:.4}", row.final_accuracy_mean),
            div,
        ]);
    }
    let header = ["cell", "aubc", "final_acc", "adv_diversity"];
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &cells {
        for (w, cell) in widths.iter_mut().zip(row.iter()) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let fmt_row = |cols: &[&str], widths: &[usize]| -> String {
        cols.iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    out.push_str(&fmt_row(&header, &widths));
    out.push('\n');
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let rule_refs: Vec<&str> = rule.iter().map(String::as_str).collect();
    out.push_str(&fmt_row(&rule_refs, &widths));
    out.push('\n');
    for row in &cells {
        let refs: Vec<&str> = row.iter().map(String::as_str).collect();
        out.push_str(&fmt_row(&refs, &widths));
        out.push('\n');
    }
    Ok(out)
}
