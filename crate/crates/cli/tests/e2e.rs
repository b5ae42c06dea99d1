mod common;

use common::{course, run};

#[test]
fn two_teams_in_mock_mode() {
    let c = course(&["sole-author", "interleaved-edits"], "");
    let o = c.run(&["analyze", "--week", "1"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    for team in ["sole-author", "interleaved-edits"] {
        for file in ["functionality.csv", "contribution.csv", "report.md", "report.json"] {
            assert!(c.path(&format!("out/{team}/week-1/{file}")).is_file(), "{team}/{file}");
        }
    }
    assert!(o.stdout.contains("cost $0.0000"), "{}", o.stdout);
    let manifest: serde_json::Value = serde_json::from_str(&c.read("out/manifest-week-1.json")).unwrap();
    assert_eq!(manifest["teams"].as_array().unwrap().len(), 2);
    assert!(manifest["teams"][0]["outcome"]["artifacts"]["report.md"].is_string());

    let cost = c.run(&["cost"]);
    assert_eq!(cost.code, 0);
    assert!(cost.stdout.contains("total"), "{}", cost.stdout);
    assert!(cost.stdout.contains("$0.0000"));
}

#[test]
fn cached_rerun_makes_no_provider_calls() {
    let c = course(&["sole-author"], "");
    assert_eq!(c.run(&["analyze", "--week", "1"]).code, 0);
    let first = c.read("state/ledger.jsonl").lines().count();
    let o = c.run(&["analyze", "--week", "1"]);
    assert_eq!(o.code, 0);
    assert!(o.stdout.contains("0 provider call(s)"), "{}", o.stdout);
    assert_eq!(c.read("state/ledger.jsonl").lines().count(), first);
}

#[test]
fn missing_roster_is_a_config_error_with_no_outputs() {
    let c = course(&["sole-author"], "");
    std::fs::remove_file(c.path("rosters/sole-author.txt")).unwrap();
    let o = c.run(&["analyze", "--week", "1"]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("sole-author.txt"), "{}", o.stderr);
    assert!(!c.path("out").exists());
}

#[test]
fn corrupt_repo_does_not_block_healthy_team() {
    let c = course(&["sole-author", "interleaved-edits"], "");
    let objects = c.path("repos/interleaved-edits/.git/objects");
    std::fs::remove_dir_all(&objects).unwrap();
    std::fs::create_dir(&objects).unwrap();
    let o = c.run(&["analyze", "--week", "1"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("interleaved-edits: FAILED"), "{}", o.stderr);
    assert!(c.path("out/sole-author/week-1/report.md").is_file());
    let manifest: serde_json::Value = serde_json::from_str(&c.read("out/manifest-week-1.json")).unwrap();
    let statuses: Vec<&str> = manifest["teams"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["status"].as_str().unwrap())
        .collect();
    assert_eq!(statuses, ["ok", "failed"]);
}

#[test]
fn check_lists_unmapped_authors() {
    let c = course(&["sole-author"], "");
    let o = c.run(&["check"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.trim_end().ends_with("ok"), "{}", o.stdout);

    let c = course(&["unknown-author"], "");
    let o = c.run(&["check"]);
    assert_eq!(o.code, 0);
    assert!(o.stdout.contains("CI Bot <ci@build.local>"), "{}", o.stdout);
    assert!(o.stdout.contains("warning"));
}

#[test]
fn check_reports_unreachable_provider() {
    let c = course(&["sole-author"], "endpoint = \"http://127.0.0.1:9/v1/chat\"\napi_key = \"test\"");
    let o = c.run(&["check", "--provider", "live"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("unreachable"), "{}", o.stderr);
}

#[test]
fn fresh_state_costs_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("state");
    let o = run(&["contribsum", "cost", "--state", state.to_str().unwrap()]);
    assert_eq!(o.code, 0);
    assert!(o.stdout.contains("(none)"));
    assert!(!o.stdout.contains("$0.0001"));
}

#[test]
fn week_two_writes_delta_and_render_is_stable() {
    let c = course(&["john-doe"], "");
    assert_eq!(c.run(&["analyze", "--week", "1"]).code, 0);
    assert!(!c.path("out/john-doe/week-1/delta.md").exists());
    assert_eq!(c.run(&["analyze", "--week", "2"]).code, 0);
    let delta = c.read("out/john-doe/week-2/delta.md");
    assert!(delta.contains("## Sam Reyes"), "{delta}");
    assert!(delta.contains("new file `static/style.css`"), "{delta}");

    let report = c.read("out/john-doe/week-2/report.md");
    let o = c.run(&["render", "--week", "2"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(c.read("out/john-doe/week-2/report.md"), report);
    assert_eq!(c.read("out/john-doe/week-2/delta.md"), delta);
}

#[test]
fn bad_arguments_exit_2() {
    assert_eq!(run(&["contribsum", "analyze"]).code, 2);
    assert_eq!(run(&["contribsum", "frobnicate"]).code, 2);
    let c = course(&["sole-author"], "");
    assert_eq!(c.run(&["analyze"]).code, 2);
}
