//! `cmt report`: merge per-subject quantification CSVs into one summary
//! table with per-region cohort means.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use cmt_core::{Error, Result};

use super::common::fmt_f64;
use super::quantify::METRICS_HEADER;

#[derive(Debug, Clone)]
struct Row {
    subject_id: String,
    region: String,
    values: [f64; 4],
}

fn parse_metrics_csv(text: &str, source: &Path) -> Result<Vec<Row>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != METRICS_HEADER {
        return Err(Error::InvalidConfig(format!(
            "unexpected metrics header in {}",
            source.display()
        )));
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::InvalidConfig(format!(
                "bad metrics row in {}",
                source.display()
            )));
        }
        let mut values = [0.0f64; 4];
        for (i, v) in values.iter_mut().enumerate() {
            *v = fields[2 + i]
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad number {:?}", fields[2 + i])))?;
        }
        rows.push(Row {
            subject_id: fields[0].to_string(),
            region: fields[1].to_string(),
            values,
        });
    }
    Ok(rows)
}

pub fn run(quantify_dir: &Path, out_path: &Path) -> Result<String> {
    let mut files: Vec<std::path::PathBuf> = std::fs::read_dir(quantify_dir)
        .map_err(|e| Error::io(quantify_dir.display().to_string(), e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with("_metrics.csv"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::MissingInputs(format!(
            "no *_metrics.csv under {}",
            quantify_dir.display()
        )));
    }
    let mut rows = Vec::new();
    for f in &files {
        let text = std::fs::read_to_string(f).map_err(|e| Error::io(f.display().to_string(), e))?;
        rows.extend(parse_metrics_csv(&text, f)?);
    }
    rows.sort_by(|a, b| (&a.subject_id, &a.region).cmp(&(&b.subject_id, &b.region)));

    let mut csv = String::from(METRICS_HEADER);
    csv.push('\n');
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.subject_id,
            r.region,
            fmt_f64(r.values[0]),
            fmt_f64(r.values[1]),
            fmt_f64(r.values[2]),
            fmt_f64(r.values[3])
        );
    }
    // cohort means per region
    let mut grouped: BTreeMap<&str, Vec<&Row>> = BTreeMap::new();
    for r in &rows {
        grouped.entry(r.region.as_str()).or_default().push(r);
    }
    for (region, group) in &grouped {
        let n = group.len() as f64;
        let mut mean = [0.0f64; 4];
        for r in group {
            for (m, v) in mean.iter_mut().zip(r.values.iter()) {
                *m += v / n;
            }
        }
        let _ = writeln!(
            csv,
            "mean,{},{},{},{},{}",
            region,
            fmt_f64(mean[0]),
            fmt_f64(mean[1]),
            fmt_f64(mean[2]),
            fmt_f64(mean[3])
        );
    }
    std::fs::write(out_path, &csv).map_err(|e| Error::io(out_path.display().to_string(), e))?;
    Ok(csv)
}
