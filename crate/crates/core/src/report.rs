//! Comparison tables over metric rows with per-(L, T) best and runner-up
//! marks.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluated (dataset, model, window) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    pub arch: String,
    #[serde(rename = "L")]
    pub lookback: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub nmse: f64,
    pub nmae: f64,
    pub seed: u64,
    /// Learning rate of the scored model; empty for external forecasts.
    pub lr: Option<f64>,
}

pub const METRICS_HEADER: &str = "dataset,arch,L,T,nmse,nmae,seed,lr";

pub fn write_metrics(rows: &[MetricRow], writer: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(METRICS_HEADER.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn metrics_csv(rows: &[MetricRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_metrics(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn read_metrics(reader: impl Read) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != METRICS_HEADER {
        return Err(Error::SchemaMismatch(format!("metrics header `{}`, expected `{METRICS_HEADER}`", header.join(","))));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn read_metrics_file(path: impl AsRef<Path>) -> Result<Vec<MetricRow>> {
    read_metrics(std::fs::File::open(path)?)
}

/// Appends `rows` to a metrics file, writing the header if the file is new.
pub fn append_metrics_file(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    let path = path.as_ref();
    let mut all = if path.exists() { read_metrics_file(path)? } else { Vec::new() };
    all.extend_from_slice(rows);
    write_metrics(&all, std::fs::File::create(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rank {
    Best,
    Second,
    Other,
}

impl Rank {
    fn label(self) -> &'static str {
        match self {
            Rank::Best => "best",
            Rank::Second => "second",
            Rank::Other => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedRow {
    pub row: MetricRow,
    pub nmse_rank: Rank,
    pub nmae_rank: Rank,
}

/// Best is the lowest value in each (dataset, L, T) group, second is the
/// next distinct value; equal values share a rank. Non-finite values are
/// never ranked. Groups are ordered by (dataset, L, T); rows keep their
/// input order inside a group.
pub fn rank(rows: &[MetricRow]) -> Vec<RankedRow> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&rows[a], &rows[b]);
        (&ra.dataset, ra.lookback, ra.horizon).cmp(&(&rb.dataset, rb.lookback, rb.horizon))
    });
    let mut out: Vec<RankedRow> =
        order.iter().map(|&i| RankedRow { row: rows[i].clone(), nmse_rank: Rank::Other, nmae_rank: Rank::Other }).collect();
    let mut start = 0;
    while start < out.len() {
        let key = |r: &RankedRow| (r.row.dataset.clone(), r.row.lookback, r.row.horizon);
        let k = key(&out[start]);
        let end = start + out[start..].iter().take_while(|r| key(r) == k).count();
        let group = &mut out[start..end];
        let nmse = ranks(group.iter().map(|r| r.row.nmse));
        let nmae = ranks(group.iter().map(|r| r.row.nmae));
        for ((r, a), b) in group.iter_mut().zip(nmse).zip(nmae) {
            r.nmse_rank = a;
            r.nmae_rank = b;
        }
        start = end;
    }
    out
}

fn ranks(values: impl Iterator<Item = f64>) -> Vec<Rank> {
    let values: Vec<f64> = values.collect();
    let mut distinct: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    values
        .iter()
        .map(|&v| match distinct.iter().position(|&d| d == v) {
            Some(0) => Rank::Best,
            Some(1) => Rank::Second,
            _ => Rank::Other,
        })
        .collect()
}

/// Ranked rows as CSV: the metrics columns followed by `nmse_rank,nmae_rank`.
pub fn report_csv(ranked: &[RankedRow]) -> String {
    let mut s = format!("{METRICS_HEADER},nmse_rank,nmae_rank\n");
    for r in ranked {
        let m = &r.row;
        let lr = m.lr.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            m.dataset,
            m.arch,
            m.lookback,
            m.horizon,
            m.nmse,
            m.nmae,
            m.seed,
            lr,
            r.nmse_rank.label(),
            r.nmae_rank.label()
        )
        .unwrap();
    }
    s
}

fn cell(v: f64, rank: Rank) -> String {
    match rank {
        Rank::Best => format!("**{v:.4}**"),
        Rank::Second => format!("*{v:.4}*"),
        Rank::Other => format!("{v:.4}"),
    }
}

/// One markdown table per dataset and (L, T), best in bold and second in
/// italics.
pub fn report_markdown(ranked: &[RankedRow]) -> String {
    let mut s = String::new();
    let mut current: Option<(&str, usize, usize)> = None;
    for r in ranked {
        let m = &r.row;
        let key = (m.dataset.as_str(), m.lookback, m.horizon);
        if current != Some(key) {
            if current.is_some() {
                s.push('\n');
            }
            writeln!(s, "### {} (L={}, T={})\n", m.dataset, m.lookback, m.horizon).unwrap();
            s.push_str("| model | NMSE | NMAE |\n|---|---:|---:|\n");
            current = Some(key);
        }
        writeln!(s, "| {} | {} | {} |", m.arch, cell(m.nmse, r.nmse_rank), cell(m.nmae, r.nmae_rank)).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(arch: &str, nmse: f64, nmae: f64) -> MetricRow {
        MetricRow { dataset: "d".into(), arch: arch.into(), lookback: 16, horizon: 4, nmse, nmae, seed: 0, lr: Some(1e-3) }
    }

    #[test]
    fn single_row_is_best() {
        let r = rank(&[row("lstm", 0.5, 0.4)]);
        assert_eq!((r[0].nmse_rank, r[0].nmae_rank), (Rank::Best, Rank::Best));
    }

    #[test]
    fn ties_share_the_flag() {
        let r = rank(&[row("a", 0.5, 0.4), row("b", 0.5, 0.4), row("c", 0.7, 0.9)]);
        assert_eq!(r.iter().map(|r| r.nmse_rank).collect::<Vec<_>>(), [Rank::Best, Rank::Best, Rank::Second]);
    }

    #[test]
    fn nan_is_never_ranked() {
        let r = rank(&[row("a", f64::NAN, 0.4), row("b", 0.5, 0.5)]);
        assert_eq!(r[0].nmse_rank, Rank::Other);
        assert_eq!(r[1].nmse_rank, Rank::Best);
    }

    #[test]
    fn groups_are_ranked_separately_and_sorted() {
        let mut other = row("a", 0.9, 0.9);
        other.horizon = 2;
        let r = rank(&[row("a", 0.1, 0.1), other, row("b", 0.2, 0.2)]);
        assert_eq!(r[0].row.horizon, 2);
        assert_eq!(r[0].nmse_rank, Rank::Best);
        assert_eq!(r[1].nmse_rank, Rank::Best);
        assert_eq!(r[2].nmse_rank, Rank::Second);
    }

    #[test]
    fn metrics_csv_round_trips() {
        let mut rows = vec![row("lstm", 0.123456789, 1.0 / 3.0), row("patchtst", 0.2, 0.1)];
        rows[1].lr = None;
        let text = metrics_csv(&rows).unwrap();
        assert!(text.starts_with("dataset,arch,L,T,nmse,nmae,seed,lr\n"));
        assert_eq!(read_metrics(text.as_bytes()).unwrap(), rows);
    }

    #[test]
    fn markdown_marks_best_and_second() {
        let md = report_markdown(&rank(&[row("a", 0.1, 0.3), row("b", 0.2, 0.2)]));
        assert!(md.contains("| a | **0.1000** | *0.3000* |"), "{md}");
        assert!(md.contains("| b | *0.2000* | **0.2000** |"), "{md}");
    }
}
