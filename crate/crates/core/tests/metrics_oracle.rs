use std::path::PathBuf;

use contribsum_core::metrics::{cyclomatic, notebook_complexity, ComplexityReport};

fn data(rel: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(rel);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn scores(report: &ComplexityReport) -> Vec<(String, u32)> {
    report.functions.iter().map(|f| (f.name.clone(), f.score)).collect()
}

/// Per-function hand counts and the `@file` total.
fn hand_counts() -> (Vec<(String, u32)>, u32) {
    let mut functions = Vec::new();
    let mut file = None;
    for l in data("complexity/corpus.expected").lines() {
        if l.trim().is_empty() || l.starts_with('#') {
            continue;
        }
        let (name, score) = l.split_once(' ').unwrap();
        let score: u32 = score.trim().parse().unwrap();
        if name == "@file" {
            file = Some(score);
        } else {
            functions.push((name.to_string(), score));
        }
    }
    (functions, file.expect("@file line"))
}

#[test]
fn corpus_matches_hand_counts() {
    let (expected, file_score) = hand_counts();
    assert!(expected.len() >= 15);
    let report = cyclomatic(&data("complexity/corpus.py"));
    assert_eq!(report.warning, None);
    assert_eq!(scores(&report), expected);
    assert_eq!(report.file_score, file_score);
}

#[test]
fn notebooks_score_like_their_scripts() {
    for n in 1..=5 {
        let script = cyclomatic(&data(&format!("notebooks/pair{n}.py")));
        let notebook = notebook_complexity(&data(&format!("notebooks/pair{n}.ipynb"))).unwrap();
        assert!(!script.functions.is_empty(), "pair{n}");
        assert_eq!(scores(&notebook), scores(&script), "pair{n}");
        assert_eq!(notebook.file_score, script.file_score, "pair{n}");
    }
}
