use std::collections::BTreeMap;

use chrono::{TimeZone, Utc};
use contribsum_core::attribution::{blame_snapshot, churn_stats_with, AttributionOptions, LineAttribution};
use contribsum_core::ingest::AnalysisWindow;
use contribsum_core::synthfix::{build, standard_suite, TruthLine};

fn no_excludes() -> AttributionOptions {
    AttributionOptions {
        excludes: Vec::new(),
        ..AttributionOptions::default()
    }
}

fn key_truth(l: &TruthLine) -> (String, usize, String, String, String) {
    (
        l.path.clone(),
        l.line_no,
        l.content.clone(),
        l.commit.clone(),
        l.student.or_unmapped().id,
    )
}

fn key_blame(l: &LineAttribution) -> (String, usize, String, String, String) {
    (
        l.path.clone(),
        l.line_no,
        l.content.clone(),
        l.commit.clone(),
        l.student.or_unmapped().id,
    )
}

fn mismatches(truth: &[TruthLine], blame: &[LineAttribution]) -> Vec<String> {
    let t: Vec<_> = truth.iter().map(key_truth).collect();
    let b: Vec<_> = blame.iter().map(key_blame).collect();
    let mut out = Vec::new();
    for i in 0..t.len().max(b.len()) {
        if t.get(i) != b.get(i) {
            out.push(format!("expected {:?}, got {:?}", t.get(i), b.get(i)));
        }
    }
    out
}

#[test]
fn blame_matches_ground_truth_on_every_fixture() {
    for fixture in standard_suite() {
        let dir = tempfile::tempdir().unwrap();
        let (repo, truth) = build(&fixture.script, dir.path()).unwrap();
        let blame = blame_snapshot(&repo, repo.head_ref(), &fixture.script.roster, &no_excludes()).unwrap();
        let bad = mismatches(&truth.lines, &blame);
        assert!(bad.is_empty(), "{}: {bad:#?}", fixture.name);

        for (name, cp) in &truth.checkpoints {
            let blame = blame_snapshot(&repo, &cp.commit, &fixture.script.roster, &no_excludes()).unwrap();
            let bad = mismatches(&cp.lines, &blame);
            assert!(bad.is_empty(), "{} at {name}: {bad:#?}", fixture.name);
        }
    }
}

#[test]
fn churn_matches_ground_truth() {
    let all_time = AnalysisWindow::new(
        Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap(),
        Utc.with_ymd_and_hms(2100, 1, 1, 0, 0, 0).unwrap(),
        "all",
    )
    .unwrap();
    for fixture in standard_suite() {
        let dir = tempfile::tempdir().unwrap();
        let (repo, truth) = build(&fixture.script, dir.path()).unwrap();
        let churn = churn_stats_with(&repo, &all_time, &fixture.script.roster, &no_excludes()).unwrap();
        let got: BTreeMap<String, (u64, u64)> = churn
            .into_iter()
            .map(|(s, c)| (s.id, (c.added, c.deleted)))
            .collect();
        assert_eq!(got, truth.churn, "{}", fixture.name);
    }
}

#[test]
fn generated_files_are_excluded_by_default() {
    let fixture = standard_suite().into_iter().find(|f| f.name == "generated-files").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (repo, truth) = build(&fixture.script, dir.path()).unwrap();
    let blame = blame_snapshot(&repo, repo.head_ref(), &fixture.script.roster, &AttributionOptions::default()).unwrap();
    let mut paths: Vec<&str> = blame.iter().map(|l| l.path.as_str()).collect();
    paths.dedup();
    assert_eq!(paths, vec!["web/main.js", "web/view.js"]);
    let generated = ["dist/bundle.min.js", "node_modules/left-pad/index.js", "package-lock.json"];
    let expected = truth.lines.iter().filter(|l| !generated.contains(&l.path.as_str())).count();
    assert_eq!(blame.len(), expected);
}

#[test]
fn fixture_builds_are_bit_reproducible() {
    for fixture in standard_suite() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let (ra, ta) = build(&fixture.script, a.path()).unwrap();
        let (rb, tb) = build(&fixture.script, b.path()).unwrap();
        assert_eq!(ra.head_ref(), rb.head_ref(), "{}", fixture.name);
        assert_eq!(ta.commit_hashes, tb.commit_hashes);
    }
}
