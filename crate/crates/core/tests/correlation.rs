use std::path::PathBuf;

use consistency_checker::scoring::correlation::{
    self, correlate, extremes, load_fixture, load_fixture_file, pearson, spearman, FixtureRow,
};

fn fixture(name: &str) -> Vec<FixtureRow> {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "fixtures", name].iter().collect();
    load_fixture_file(&path).unwrap()
}

fn column(rows: &[FixtureRow], name: &str) -> Vec<f64> {
    rows.iter().map(|r| r.column(name).unwrap()).collect()
}

#[test]
fn fixtures_hold_six_models() {
    for name in ["wmt_cs_uk.csv", "wmt_en_zh.csv"] {
        let rows = fixture(name);
        assert_eq!(rows.len(), 6);
        assert_eq!(rows.iter().filter(|r| r.model == "Phi-3").count(), 1);
    }
}

#[test]
fn spearman_matches_reference_values() {
    // reference values from an independent rank-correlation implementation
    let cs = fixture("wmt_cs_uk.csv");
    let rho = spearman(&column(&cs, "c3_emb"), &column(&cs, "cometkiwi")).unwrap();
    assert!((rho - 0.8285714285714287).abs() < 1e-12, "{rho}");
    let zh = fixture("wmt_en_zh.csv");
    let rho = spearman(&column(&zh, "c3_emb"), &column(&zh, "cometkiwi")).unwrap();
    assert!((rho - 0.9276336570439174).abs() < 1e-12, "{rho}");
}

#[test]
fn self_correlation_is_one() {
    let rows = fixture("wmt_cs_uk.csv");
    for c in correlation::INTERNAL_COLUMNS.iter().chain(correlation::EXTERNAL_COLUMNS.iter()) {
        let xs = column(&rows, c);
        assert!((pearson(&xs, &xs).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&xs, &xs).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn inverse_metrics_are_negated_before_correlation() {
    let rows = fixture("wmt_cs_uk.csv");
    let report = correlate(&rows);
    let cell = report.cell("c3_emb", "autorank").unwrap();
    assert!(cell.sign_adjusted);
    let raw = pearson(&column(&rows, "c3_emb"), &column(&rows, "autorank")).unwrap();
    assert!((cell.pearson.unwrap() + raw).abs() < 1e-12);
    assert!(cell.pearson.unwrap() > 0.7);
    assert!(!report.cell("c3_emb", "cometkiwi").unwrap().sign_adjusted);
    assert_eq!(extremes(&rows, "autorank").top, "Claude");
}

#[test]
fn english_chinese_rankings_agree_at_both_ends() {
    let rows = fixture("wmt_en_zh.csv");
    for c in ["c3_emb", "c3_bleu", "cometkiwi", "autorank", "metricx"] {
        let e = extremes(&rows, c);
        assert_eq!(e.top, "Claude", "{c}");
        assert_eq!(e.bottom, "Phi-3", "{c}");
    }
}

#[test]
fn czech_ukrainian_bottom_agrees_and_top_differs_under_bleu() {
    let rows = fixture("wmt_cs_uk.csv");
    for c in ["c3_emb", "c3_bleu", "cometkiwi", "autorank", "metricx"] {
        assert_eq!(extremes(&rows, c).bottom, "Phi-3", "{c}");
    }
    assert_eq!(extremes(&rows, "c3_emb").top, "Claude");
    assert_eq!(extremes(&rows, "cometkiwi").top, "Claude");
    // Gemini's 67.6 edges out Claude's 67.3 in the table itself
    assert_eq!(extremes(&rows, "c3_bleu").top, "Gemini");
}

#[test]
fn constant_column_is_reported_not_fatal() {
    let mut rows = fixture("wmt_cs_uk.csv");
    for r in &mut rows {
        r.cometkiwi = 0.5;
    }
    let report = correlate(&rows);
    let cell = report.cell("c3_emb", "cometkiwi").unwrap();
    assert!(cell.pearson.is_none() && cell.spearman.is_none());
    assert!(cell.note.is_some());
    assert!(report.render_table().contains("n/a"));
    assert!(report.cell("c3_emb", "metricx").unwrap().pearson.is_some());
}

#[test]
fn malformed_fixtures_are_rejected() {
    let missing = "model,c1_emb\nA,1\n";
    assert!(load_fixture(missing.as_bytes()).is_err());
    let header = "model,c1_emb,c2_emb,c3_emb,c1_bleu,c2_bleu,c3_bleu,autorank,metricx,cometkiwi\n";
    assert!(load_fixture(format!("{header}A,1,2,3,4,5,x,7,8,9\n").as_bytes()).is_err());
    let rows = load_fixture(format!("{header}A,1,2,3,4,5,6,7,8,9\n").as_bytes()).unwrap();
    assert_eq!(rows[0].cometkiwi, 9.0);
}

#[test]
fn every_correlation_is_bounded() {
    for name in ["wmt_cs_uk.csv", "wmt_en_zh.csv"] {
        let report = correlate(&fixture(name));
        assert_eq!(report.cells.len(), 18);
        for c in &report.cells {
            for v in [c.pearson, c.spearman].into_iter().flatten() {
                assert!((-1.0..=1.0).contains(&v), "{c:?}");
            }
        }
    }
}
