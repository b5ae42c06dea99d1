//! Line-level diffing and similarity-based rename pairing.
//!
//! Lines are compared with trailing whitespace removed, so reformatting
//! that only touches line endings or trailing blanks never counts as a change.

use similar::{capture_diff_slices, Algorithm, DiffTag};

/// Similarity at or above which a delete/add pair is treated as a rename.
pub const RENAME_THRESHOLD: f64 = 0.5;

/// Candidate pairs beyond this count skip inexact (content) rename matching.
const MAX_RENAME_CANDIDATES: usize = 20_000;

pub fn split_lines(bytes: &[u8]) -> Vec<String> {
    String::from_utf8_lossy(bytes).lines().map(str::to_owned).collect()
}

fn keys(lines: &[String]) -> Vec<&str> {
    lines.iter().map(|l| l.trim_end()).collect()
}

/// For every line of `new`, the index of the `old` line it was carried over from.
pub fn match_lines(old: &[String], new: &[String]) -> Vec<Option<usize>> {
    let (old_keys, new_keys) = (keys(old), keys(new));
    let mut matched = vec![None; new.len()];
    for op in capture_diff_slices(Algorithm::Myers, &old_keys, &new_keys) {
        let (tag, old_range, new_range) = op.as_tag_tuple();
        if tag == DiffTag::Equal {
            for (o, n) in old_range.zip(new_range) {
                matched[n] = Some(o);
            }
        }
    }
    matched
}

/// `(added, deleted)` line counts between two versions of a file.
pub fn line_churn(old: &[String], new: &[String]) -> (u64, u64) {
    let common = match_lines(old, new).iter().filter(|m| m.is_some()).count();
    ((new.len() - common) as u64, (old.len() - common) as u64)
}

/// Dice coefficient over matched lines; two empty files are identical.
pub fn similarity(old: &[String], new: &[String]) -> f64 {
    if old.is_empty() && new.is_empty() {
        return 1.0;
    }
    let common = match_lines(old, new).iter().filter(|m| m.is_some()).count();
    2.0 * common as f64 / (old.len() + new.len()) as f64
}

/// A file version participating in rename detection.
pub struct RenameCandidate<'a> {
    pub path: &'a str,
    pub oid: &'a str,
    /// `None` for binary blobs, which only pair on identical content.
    pub lines: Option<&'a [String]>,
}

/// Pairs deleted paths with added paths. Identical blobs pair first, then
/// content matches at or above [`RENAME_THRESHOLD`], best score first.
/// Returns `(deleted index, added index)` pairs.
pub fn detect_renames(deleted: &[RenameCandidate], added: &[RenameCandidate]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    let mut del_used = vec![false; deleted.len()];
    let mut add_used = vec![false; added.len()];

    for (ai, a) in added.iter().enumerate() {
        if let Some(di) = (0..deleted.len()).find(|&di| !del_used[di] && deleted[di].oid == a.oid) {
            del_used[di] = true;
            add_used[ai] = true;
            pairs.push((di, ai));
        }
    }

    let remaining = del_used.iter().filter(|u| !**u).count() * add_used.iter().filter(|u| !**u).count();
    if remaining > 0 && remaining <= MAX_RENAME_CANDIDATES {
        let mut scored = Vec::new();
        for (di, d) in deleted.iter().enumerate().filter(|(i, _)| !del_used[*i]) {
            for (ai, a) in added.iter().enumerate().filter(|(i, _)| !add_used[*i]) {
                let (Some(dl), Some(al)) = (d.lines, a.lines) else {
                    continue;
                };
                let score = similarity(dl, al);
                if score >= RENAME_THRESHOLD {
                    scored.push((score, di, ai));
                }
            }
        }
        scored.sort_by(|x, y| {
            y.0.total_cmp(&x.0)
                .then_with(|| deleted[x.1].path.cmp(deleted[y.1].path))
                .then_with(|| added[x.2].path.cmp(added[y.2].path))
        });
        for (_, di, ai) in scored {
            if !del_used[di] && !add_used[ai] {
                del_used[di] = true;
                add_used[ai] = true;
                pairs.push((di, ai));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(lines: &[&str]) -> Vec<String> {
        lines.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn trailing_whitespace_is_not_a_change() {
        let old = v(&["a", "b  ", "c"]);
        let new = v(&["a", "b", "c\t"]);
        assert_eq!(match_lines(&old, &new), vec![Some(0), Some(1), Some(2)]);
        assert_eq!(line_churn(&old, &new), (0, 0));
    }

    #[test]
    fn churn_counts_replacements() {
        let old = v(&["a", "b", "c"]);
        let new = v(&["a", "x", "y", "c"]);
        assert_eq!(line_churn(&old, &new), (2, 1));
    }

    #[test]
    fn similarity_bounds() {
        assert_eq!(similarity(&[], &[]), 1.0);
        assert_eq!(similarity(&v(&["a"]), &v(&["b"])), 0.0);
        assert_eq!(similarity(&v(&["a", "b"]), &v(&["a", "c"])), 0.5);
    }

    #[test]
    fn renames_need_half_the_content() {
        let old = v(&["one", "two", "three", "four"]);
        let close = v(&["one", "two", "three", "five"]);
        let far = v(&["one", "x", "y", "z", "w"]);
        let deleted = [RenameCandidate { path: "a.py", oid: "1", lines: Some(&old) }];
        let added = [
            RenameCandidate { path: "b.py", oid: "2", lines: Some(&far) },
            RenameCandidate { path: "c.py", oid: "3", lines: Some(&close) },
        ];
        assert_eq!(detect_renames(&deleted, &added), vec![(0, 1)]);
        let only_far = [RenameCandidate { path: "b.py", oid: "2", lines: Some(&far) }];
        assert!(detect_renames(&deleted, &only_far).is_empty());
    }

    #[test]
    fn identical_blobs_pair_first() {
        let body = v(&["x"]);
        let deleted = [
            RenameCandidate { path: "a", oid: "same", lines: Some(&body) },
            RenameCandidate { path: "b", oid: "other", lines: Some(&body) },
        ];
        let added = [RenameCandidate { path: "c", oid: "same", lines: Some(&body) }];
        assert_eq!(detect_renames(&deleted, &added), vec![(0, 0)]);
    }
}
