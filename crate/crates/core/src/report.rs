//! Markdown reports: one section per roster student, the team section, then
//! warnings. Rendering never calls a provider.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::agents::{fmt_lines, StudentSummary, TeamSummary, ValidationStatus};
use crate::attribution::{BranchSupplement, ContributionSet};
use crate::identity::StudentId;
use crate::ingest::AnalysisWindow;

pub const TEAM_HEADING: &str = "Overall contribution of the team";

pub const ROLE_DISCLAIMER: &str = "Role labels are generated automatically from this window's files. \
They can be wrong and are not an assessment.";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ReportError {
    #[error("cannot compare reports of different teams ({0} vs {1})")]
    TeamMismatch(String, String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEvidence {
    pub path: String,
    pub lines_owned: f64,
    pub lines_added_in_window: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentSection {
    pub summary: StudentSummary,
    pub evidence: Vec<FileEvidence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub team: String,
    pub window: AnalysisWindow,
    pub snapshot_commit: Option<String>,
    pub roles: bool,
    pub student_sections: Vec<StudentSection>,
    pub team_section: TeamSummary,
    pub branch_supplements: Vec<BranchSupplement>,
    pub warnings: Vec<String>,
}

/// Run metadata needed beyond the summaries themselves.
#[derive(Debug, Clone, Copy)]
pub struct RenderMeta<'a> {
    pub team: &'a str,
    pub set: &'a ContributionSet,
    pub roles: bool,
    /// Unmerged branches left out of the snapshot, with their commit counts.
    pub excluded_branches: &'a [(String, usize)],
    pub supplements: &'a [BranchSupplement],
    pub extra_warnings: &'a [String],
}

fn section_order(a: &StudentId, b: &StudentId) -> std::cmp::Ordering {
    (&a.display_name, &a.id).cmp(&(&b.display_name, &b.id))
}

/// Builds the document. Summaries are expected to be validated already.
pub fn render(summaries: &[StudentSummary], team: &TeamSummary, meta: &RenderMeta<'_>) -> ReportDocument {
    let mut sections: Vec<StudentSection> = summaries
        .iter()
        .map(|s| StudentSection {
            summary: s.clone(),
            evidence: meta
                .set
                .evidence(&s.student.id)
                .iter()
                .filter(|e| e.has_lines())
                .map(|e| FileEvidence {
                    path: e.path.clone(),
                    lines_owned: e.lines_owned,
                    lines_added_in_window: e.lines_added_in_window,
                })
                .collect(),
        })
        .collect();
    sections.sort_by(|a, b| section_order(&a.summary.student, &b.summary.student));

    let mut warnings = Vec::new();
    for s in &sections {
        for f in &s.summary.validation.flags {
            warnings.push(format!(
                "{}: claim about `{}` not supported by attribution ({})",
                s.summary.student.display_name, f.path, f.reason
            ));
        }
    }
    let unmapped_lines: f64 = meta.set.evidence("unmapped").iter().map(|e| e.lines_owned).sum();
    for author in &meta.set.unmapped_authors {
        warnings.push(format!("Commits by {author} do not match any roster entry"));
    }
    if unmapped_lines > 0.0 {
        warnings.push(format!(
            "{} snapshot lines belong to authors outside the roster",
            fmt_lines(unmapped_lines)
        ));
    }
    for (branch, commits) in meta.excluded_branches {
        if !meta.supplements.iter().any(|s| &s.branch == branch) {
            warnings.push(format!(
                "Branch `{branch}` has {commits} commit(s) not merged into the default branch; its work is not counted"
            ));
        }
    }
    warnings.extend(meta.extra_warnings.iter().cloned());

    ReportDocument {
        team: meta.team.to_string(),
        window: meta.set.window.clone(),
        snapshot_commit: meta.set.snapshot_commit.clone(),
        roles: meta.roles,
        student_sections: sections,
        team_section: team.clone(),
        branch_supplements: meta.supplements.to_vec(),
        warnings,
    }
}

impl ReportDocument {
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# Contribution report: {}, {}\n", self.team, self.window.label);
        let _ = writeln!(
            out,
            "- Window: {} to {}",
            self.window.start.format("%Y-%m-%d %H:%M UTC"),
            self.window.end.format("%Y-%m-%d %H:%M UTC")
        );
        match &self.snapshot_commit {
            Some(c) => {
                let _ = writeln!(out, "- Snapshot: {}\n", &c[..c.len().min(12)]);
            }
            None => out.push_str("- Snapshot: none (no commits before the window end)\n\n"),
        }

        for s in &self.student_sections {
            let summary = &s.summary;
            let _ = writeln!(out, "## {}\n", summary.student.display_name);
            let _ = writeln!(out, "Summary: {}\n", summary.headline);
            out.push_str("Contributions:\n\n");
            if summary.per_file_bullets.is_empty() {
                out.push_str(if summary.no_contribution {
                    "- none\n"
                } else {
                    "- none surviving in the snapshot\n"
                });
            }
            for b in &summary.per_file_bullets {
                let _ = write!(out, "- `{}`: {}", b.path, b.text);
                if let Some(reason) = summary.validation.flag_for(&b.path) {
                    let _ = write!(out, " **[caution: {reason}]**");
                }
                out.push('\n');
            }
            if self.roles {
                if let Some(role) = summary.role {
                    let _ = writeln!(out, "\nRole: {role}\n\n_{ROLE_DISCLAIMER}_");
                }
            }
            out.push('\n');
        }

        let _ = writeln!(out, "## {TEAM_HEADING}\n");
        let _ = writeln!(out, "{}\n", self.team_section.narrative);
        for b in &self.team_section.progress_bullets {
            let _ = writeln!(out, "- {b}");
        }
        if !self.team_section.progress_bullets.is_empty() {
            out.push('\n');
        }

        for sup in &self.branch_supplements {
            let _ = writeln!(out, "## Unmerged branch `{}`\n", sup.branch);
            let _ = writeln!(
                out,
                "Work on this branch (tip {}) is not part of the default branch and is listed separately.\n",
                &sup.tip[..sup.tip.len().min(12)]
            );
            if sup.entries.is_empty() {
                out.push_str("- no branch-only lines\n");
            }
            for e in &sup.entries {
                let _ = writeln!(out, "- {}: `{}` ({} lines)", e.student.display_name, e.path, e.lines);
            }
            out.push('\n');
        }

        if !self.warnings.is_empty() {
            out.push_str("## Warnings\n\n");
            for w in &self.warnings {
                let _ = writeln!(out, "- {w}");
            }
            out.push('\n');
        }
        let trimmed = out.trim_end().len();
        out.truncate(trimmed);
        out.push('\n');
        out
    }

    pub fn is_flagged(&self) -> bool {
        self.student_sections
            .iter()
            .any(|s| s.summary.validation.status == ValidationStatus::Flagged)
    }
}

/// Per-student changes in evidence between two windows of the same team.
/// Identical documents produce an empty digest.
pub fn diff_windows(earlier: &ReportDocument, later: &ReportDocument) -> Result<String, ReportError> {
    if earlier.team != later.team {
        return Err(ReportError::TeamMismatch(earlier.team.clone(), later.team.clone()));
    }
    let by_id = |doc: &ReportDocument| -> BTreeMap<String, (StudentId, BTreeMap<String, FileEvidence>)> {
        doc.student_sections
            .iter()
            .map(|s| {
                let files = s.evidence.iter().map(|e| (e.path.clone(), e.clone())).collect();
                (s.summary.student.id.clone(), (s.summary.student.clone(), files))
            })
            .collect()
    };
    let (before, after) = (by_id(earlier), by_id(later));
    let empty = BTreeMap::new();
    let mut students: Vec<&StudentId> = before
        .values()
        .chain(after.values())
        .map(|(s, _)| (s.id.as_str(), s))
        .collect::<BTreeMap<_, _>>()
        .into_values()
        .collect();
    students.sort_by(|a, b| section_order(a, b));

    let mut out = String::new();
    for student in students {
        let old = before.get(&student.id).map_or(&empty, |(_, f)| f);
        let new = after.get(&student.id).map_or(&empty, |(_, f)| f);
        let mut lines = Vec::new();
        for (path, e) in new {
            match old.get(path) {
                None => lines.push(format!(
                    "- new file `{path}`: {} lines owned, {} added",
                    fmt_lines(e.lines_owned),
                    fmt_lines(e.lines_added_in_window)
                )),
                Some(o) if o.lines_owned != e.lines_owned => lines.push(format!(
                    "- `{path}`: lines owned {} -> {}",
                    fmt_lines(o.lines_owned),
                    fmt_lines(e.lines_owned)
                )),
                Some(_) => {}
            }
        }
        for (path, o) in old {
            if !new.contains_key(path) {
                lines.push(format!(
                    "- `{path}`: no longer listed (had {} lines owned)",
                    fmt_lines(o.lines_owned)
                ));
            }
        }
        if !lines.is_empty() {
            let _ = writeln!(out, "## {}\n\n{}\n", student.display_name, lines.join("\n"));
        }
    }
    if out.is_empty() {
        return Ok(String::new());
    }
    Ok(format!(
        "# Changes for {}: {} to {}\n\n{}",
        later.team,
        earlier.window.label,
        later.window.label,
        out.trim_end()
    ) + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{Bullet, FlagReason, ValidationFlag, ValidationReport};
    use crate::attribution::ContributionEvidence;
    use chrono::{TimeZone, Utc};

    fn window(label: &str, day: u32) -> AnalysisWindow {
        AnalysisWindow::new(
            Utc.with_ymd_and_hms(2024, 3, day, 0, 0, 0).unwrap(),
            Utc.with_ymd_and_hms(2024, 3, day + 7, 0, 0, 0).unwrap(),
            label,
        )
        .unwrap()
    }

    fn evidence(student: &StudentId, path: &str, owned: f64) -> ContributionEvidence {
        ContributionEvidence {
            student: student.clone(),
            path: path.into(),
            lines_owned: owned,
            lines_added_in_window: owned,
            code_lines_owned: owned,
            commit_messages: Vec::new(),
            solo_functions: Vec::new(),
        }
    }

    fn set(window: AnalysisWindow, per: Vec<(&StudentId, Vec<(&str, f64)>)>) -> ContributionSet {
        ContributionSet {
            window,
            snapshot_commit: Some("0123456789abcdef0123".into()),
            per_student: per
                .into_iter()
                .map(|(s, files)| (s.id.clone(), files.into_iter().map(|(p, n)| evidence(s, p, n)).collect()))
                .collect(),
            zero_commit_students: Vec::new(),
            active_students: Vec::new(),
            unmapped_authors: Vec::new(),
            file_line_counts: BTreeMap::new(),
        }
    }

    fn summary(student: &StudentId, bullets: &[&str]) -> StudentSummary {
        StudentSummary {
            student: student.clone(),
            headline: format!("{} worked.", student.display_name),
            per_file_bullets: bullets
                .iter()
                .map(|p| Bullet {
                    path: p.to_string(),
                    text: "did work".into(),
                })
                .collect(),
            role: None,
            validation: ValidationReport::clean(),
            no_contribution: false,
        }
    }

    fn doc(team: &str, set: &ContributionSet, summaries: &[StudentSummary]) -> ReportDocument {
        let team_summary = TeamSummary {
            window: set.window.clone(),
            narrative: "Progress was made.".into(),
            progress_bullets: vec!["Things advanced.".into()],
        };
        render(
            summaries,
            &team_summary,
            &RenderMeta {
                team,
                set,
                roles: false,
                excluded_branches: &[],
                supplements: &[],
                extra_warnings: &[],
            },
        )
    }

    #[test]
    fn sections_sorted_and_flags_visible() {
        let (zed, amy) = (StudentId::new("z", "Zed"), StudentId::new("a", "Amy"));
        let s = set(window("week-1", 4), vec![(&amy, vec![("a.py", 3.0)])]);
        let mut flagged = summary(&amy, &["a.py", "b.py"]);
        flagged.validation = ValidationReport {
            status: ValidationStatus::Flagged,
            flags: vec![ValidationFlag {
                claim: "b.py: did work".into(),
                path: "b.py".into(),
                reason: FlagReason::FileNotTouched,
            }],
        };
        let d = doc("t", &s, &[StudentSummary::no_contribution(zed.clone()), flagged]);
        let md = d.to_markdown();
        assert!(md.find("## Amy").unwrap() < md.find("## Zed").unwrap());
        assert!(md.contains("- `b.py`: did work **[caution: file-not-touched]**"));
        assert!(md.contains("- `a.py`: did work\n"));
        assert!(md.contains("## Warnings"));
        assert!(md.contains("Summary: No recorded contributions in this window."));
        assert_eq!(md.matches(&format!("## {TEAM_HEADING}")).count(), 1);
        assert!(!md.contains("Role:"));
        assert!(d.is_flagged());
    }

    #[test]
    fn digest_of_identical_documents_is_empty() {
        let amy = StudentId::new("a", "Amy");
        let s = set(window("week-1", 4), vec![(&amy, vec![("a.py", 3.0)])]);
        let d = doc("t", &s, &[summary(&amy, &["a.py"])]);
        assert_eq!(diff_windows(&d, &d).unwrap(), "");
    }

    #[test]
    fn digest_lists_new_file() {
        let amy = StudentId::new("a", "Amy");
        let s1 = set(window("week-1", 4), vec![(&amy, vec![("a.py", 3.0)])]);
        let s2 = set(window("week-2", 11), vec![(&amy, vec![("a.py", 3.0), ("b.py", 2.0)])]);
        let d1 = doc("t", &s1, &[summary(&amy, &["a.py"])]);
        let d2 = doc("t", &s2, &[summary(&amy, &["a.py", "b.py"])]);
        let digest = diff_windows(&d1, &d2).unwrap();
        assert!(digest.contains("## Amy"));
        assert!(digest.contains("new file `b.py`"));
        assert!(!digest.contains("`a.py`"));
    }

    #[test]
    fn digest_rejects_other_team() {
        let amy = StudentId::new("a", "Amy");
        let s = set(window("week-1", 4), vec![(&amy, vec![("a.py", 3.0)])]);
        let (d1, d2) = (doc("t1", &s, &[summary(&amy, &[])]), doc("t2", &s, &[summary(&amy, &[])]));
        assert_eq!(
            diff_windows(&d1, &d2),
            Err(ReportError::TeamMismatch("t1".into(), "t2".into()))
        );
    }
}
