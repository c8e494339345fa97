//! Pearson and Spearman correlation against external metric tables.

use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CorrelationError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("at least 3 observations are needed, got {0}")]
    TooShort(usize),
    #[error("correlation is undefined for a constant series")]
    Constant,
    #[error("series contains a non-finite value")]
    NonFinite,
}

fn check(xs: &[f64], ys: &[f64]) -> Result<(), CorrelationError> {
    if xs.len() != ys.len() {
        return Err(CorrelationError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(CorrelationError::TooShort(xs.len()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(CorrelationError::NonFinite);
    }
    Ok(())
}

/// Sample Pearson correlation, accumulated in one streaming pass.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, CorrelationError> {
    check(xs, ys)?;
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let k = (i + 1) as f64;
        let dx = x - mx;
        let dy = y - my;
        mx += dx / k;
        my += dy / k;
        sxx += dx * (x - mx);
        syy += dy * (y - my);
        sxy += dx * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(CorrelationError::Constant);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn fractional_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, CorrelationError> {
    check(xs, ys)?;
    pearson(&fractional_ranks(xs), &fractional_ranks(ys))
}

/// One model row of an external metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureRow {
    pub model: String,
    pub c1_emb: f64,
    pub c2_emb: f64,
    pub c3_emb: f64,
    pub c1_bleu: f64,
    pub c2_bleu: f64,
    pub c3_bleu: f64,
    pub autorank: f64,
    pub metricx: f64,
    pub cometkiwi: f64,
}

pub const INTERNAL_COLUMNS: [&str; 6] = ["c1_emb", "c2_emb", "c3_emb", "c1_bleu", "c2_bleu", "c3_bleu"];
pub const EXTERNAL_COLUMNS: [&str; 3] = ["autorank", "metricx", "cometkiwi"];

impl FixtureRow {
    pub fn column(&self, name: &str) -> Option<f64> {
        Some(match name {
            "c1_emb" => self.c1_emb,
            "c2_emb" => self.c2_emb,
            "c3_emb" => self.c3_emb,
            "c1_bleu" => self.c1_bleu,
            "c2_bleu" => self.c2_bleu,
            "c3_bleu" => self.c3_bleu,
            "autorank" => self.autorank,
            "metricx" => self.metricx,
            "cometkiwi" => self.cometkiwi,
            _ => return None,
        })
    }
}

/// Lower-is-better columns, negated before correlating.
pub fn is_inverse(column: &str) -> bool {
    matches!(column, "autorank" | "metricx")
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot read fixture: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed fixture: {0}")]
    Csv(#[from] csv::Error),
    #[error("fixture has no rows")]
    Empty,
}

pub fn load_fixture(reader: impl Read) -> Result<Vec<FixtureRow>, FixtureError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let rows = rdr.deserialize().collect::<Result<Vec<FixtureRow>, _>>()?;
    if rows.is_empty() {
        return Err(FixtureError::Empty);
    }
    Ok(rows)
}

pub fn load_fixture_file(path: &std::path::Path) -> Result<Vec<FixtureRow>, FixtureError> {
    load_fixture(std::fs::File::open(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub internal: String,
    pub external: String,
    /// True when the external column was negated first.
    pub sign_adjusted: bool,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extremes {
    pub column: String,
    pub top: String,
    pub bottom: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub models: Vec<String>,
    pub cells: Vec<CorrelationCell>,
    /// Best and worst model per column, after sign adjustment.
    pub extremes: Vec<Extremes>,
}

fn adjusted(rows: &[FixtureRow], column: &str) -> Vec<f64> {
    let sign = if is_inverse(column) { -1.0 } else { 1.0 };
    rows.iter()
        .map(|r| sign * r.column(column).expect("known column"))
        .collect()
}

/// First model with the highest and lowest value; ties go to the earlier row.
pub fn extremes(rows: &[FixtureRow], column: &str) -> Extremes {
    let values = adjusted(rows, column);
    let mut top = 0;
    let mut bottom = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[top] {
            top = i;
        }
        if *v < values[bottom] {
            bottom = i;
        }
    }
    Extremes {
        column: column.to_string(),
        top: rows[top].model.clone(),
        bottom: rows[bottom].model.clone(),
    }
}

pub fn correlate(rows: &[FixtureRow]) -> CorrelationReport {
    let mut cells = Vec::new();
    for internal in INTERNAL_COLUMNS {
        let xs = adjusted(rows, internal);
        for external in EXTERNAL_COLUMNS {
            let ys = adjusted(rows, external);
            let p = pearson(&xs, &ys);
            let s = spearman(&xs, &ys);
            let note = p.as_ref().err().or(s.as_ref().err()).map(ToString::to_string);
            cells.push(CorrelationCell {
                internal: internal.to_string(),
                external: external.to_string(),
                sign_adjusted: is_inverse(external),
                pearson: p.ok(),
                spearman: s.ok(),
                note,
            });
        }
    }
    let extremes = INTERNAL_COLUMNS
        .iter()
        .chain(EXTERNAL_COLUMNS.iter())
        .map(|c| extremes(rows, c))
        .collect();
    CorrelationReport {
        models: rows.iter().map(|r| r.model.clone()).collect(),
        cells,
        extremes,
    }
}

impl CorrelationReport {
    pub fn cell(&self, internal: &str, external: &str) -> Option<&CorrelationCell> {
        self.cells
            .iter()
            .find(|c| c.internal == internal && c.external == external)
    }

    pub fn render_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into());
        let mut out = format!("{:<10} {:<12} {:>8} {:>9}\n", "internal", "external", "pearson", "spearman");
        for c in &self.cells {
            let ext = if c.sign_adjusted { format!("-{}", c.external) } else { c.external.clone() };
            out.push_str(&format!(
                "{:<10} {:<12} {:>8} {:>9}",
                c.internal,
                ext,
                fmt(c.pearson),
                fmt(c.spearman)
            ));
            if let Some(note) = &c.note {
                out.push_str(&format!("  ({note})"));
            }
            out.push('\n');
        }
        out.push('\n');
        for e in &self.extremes {
            out.push_str(&format!("{:<10} top {:<20} bottom {}\n", e.column, e.top, e.bottom));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_and_inverse_correlation() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &xs).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&xs, &xs).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(CorrelationError::Constant));
        assert_eq!(pearson(&[1.0, 2.0], &[1.0, 2.0]), Err(CorrelationError::TooShort(2)));
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0]), Err(CorrelationError::LengthMismatch(3, 2)));
    }

    #[test]
    fn ties_share_ranks() {
        assert_eq!(fractional_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn constant_column_is_reported_not_fatal() {
        let rows: Vec<FixtureRow> = (0..3)
            .map(|i| FixtureRow {
                model: format!("m{i}"),
                c1_emb: 1.0,
                c2_emb: i as f64,
                c3_emb: i as f64,
                c1_bleu: i as f64,
                c2_bleu: i as f64,
                c3_bleu: i as f64,
                autorank: 3.0 - i as f64,
                metricx: 3.0 - i as f64,
                cometkiwi: i as f64,
            })
            .collect();
        let report = correlate(&rows);
        let cell = report.cell("c1_emb", "cometkiwi").unwrap();
        assert!(cell.pearson.is_none());
        assert!(cell.note.is_some());
        let cell = report.cell("c3_emb", "autorank").unwrap();
        assert!(cell.sign_adjusted);
        assert!((cell.pearson.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fixture_header_is_enforced() {
        let good = "model,c1_emb,c2_emb,c3_emb,c1_bleu,c2_bleu,c3_bleu,autorank,metricx,cometkiwi\nA,1,2,3,4,5,6,7,8,0.5\n";
        assert_eq!(load_fixture(good.as_bytes()).unwrap()[0].cometkiwi, 0.5);
        let bad = "model,c1_emb\nA,1\n";
        assert!(load_fixture(bad.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn spearman_is_invariant_under_monotone_maps(
            xs in proptest::collection::vec(-50.0f64..50.0, 3..30),
            ys in proptest::collection::vec(-50.0f64..50.0, 3..30),
        ) {
            let n = xs.len().min(ys.len());
            let (xs, ys) = (&xs[..n], &ys[..n]);
            if let Ok(base) = spearman(xs, ys) {
                let mapped: Vec<f64> = xs.iter().map(|x| x.powi(3) + 2.0 * x).collect();
                let flipped: Vec<f64> = ys.iter().map(|y| (y / 10.0).exp()).collect();
                prop_assert!((spearman(&mapped, &flipped).unwrap() - base).abs() < 1e-12);
            }
        }

        #[test]
        fn correlations_stay_in_range(
            xs in proptest::collection::vec(-1e6f64..1e6, 3..40),
            ys in proptest::collection::vec(-1e6f64..1e6, 3..40),
        ) {
            let n = xs.len().min(ys.len());
            for r in [pearson(&xs[..n], &ys[..n]), spearman(&xs[..n], &ys[..n])].into_iter().flatten() {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}
