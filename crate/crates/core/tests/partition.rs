mod support {
    pub mod random_history;
}

use std::collections::BTreeMap;
use std::time::Instant;

use chrono::{TimeZone, Utc};
use contribsum_core::attribution::{build_contribution_set, AttributionOptions};
use contribsum_core::ingest::AnalysisWindow;
use contribsum_core::synthfix::{build, RepoScript};
use support::random_history::random_script;

const HISTORIES: u64 = 100;

fn all_time() -> AnalysisWindow {
    AnalysisWindow::new(
        Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap(),
        Utc.with_ymd_and_hms(2100, 1, 1, 0, 0, 0).unwrap(),
        "all",
    )
    .unwrap()
}

/// Checks one history under both co-author settings; returns the first
/// violation.
fn check(seed: u64) -> Result<(), String> {
    let text = random_script(seed);
    let script = RepoScript::parse(&text).map_err(|e| format!("seed {seed}: {e}\n{text}"))?;
    let dir = tempfile::tempdir().unwrap();
    let (repo, truth) = build(&script, dir.path()).map_err(|e| format!("seed {seed}: {e}\n{text}"))?;
    let mut expected: BTreeMap<String, u64> = BTreeMap::new();
    for l in &truth.lines {
        *expected.entry(l.path.clone()).or_default() += 1;
    }
    for split in [true, false] {
        let options = AttributionOptions {
            coauthor_split: split,
            excludes: Vec::new(),
            ..AttributionOptions::default()
        };
        let set = build_contribution_set(&repo, &all_time(), &script.roster, &options)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        if set.file_line_counts != expected {
            return Err(format!(
                "seed {seed} split={split}: line counts {:?} != truth {:?}",
                set.file_line_counts, expected
            ));
        }
        let mut owned: BTreeMap<&str, f64> = BTreeMap::new();
        for e in set.per_student.values().flatten() {
            *owned.entry(e.path.as_str()).or_default() += e.lines_owned;
        }
        for (path, &n) in &set.file_line_counts {
            let sum = owned.get(path.as_str()).copied().unwrap_or(0.0);
            if (sum - n as f64).abs() > 1e-9 {
                return Err(format!("seed {seed} split={split}: {path} owned {sum} of {n}\n{text}"));
            }
        }
    }
    Ok(())
}

#[test]
fn ownership_partitions_every_snapshot_file() {
    let started = Instant::now();
    for seed in 0..HISTORIES {
        if let Err(e) = check(seed) {
            panic!("{e}");
        }
    }
    let elapsed = started.elapsed();
    println!("{HISTORIES} histories in {elapsed:?}");
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
}
