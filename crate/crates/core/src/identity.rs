//! Mapping git signatures onto roster students.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ingest::CommitRecord;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IdentityError {
    #[error("line {line}: alias {alias:?} claimed by both {first} and {second}")]
    DuplicateAlias {
        line: usize,
        alias: String,
        first: String,
        second: String,
    },
    #[error("line {line}: {message}")]
    MalformedRoster { line: usize, message: String },
}

/// A roster student.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StudentId {
    pub id: String,
    pub display_name: String,
}

impl StudentId {
    /// Reserved key under which unresolved authors aggregate.
    pub const UNMAPPED: &'static str = "unmapped";

    pub fn new(id: impl Into<String>, display_name: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            display_name: display_name.into(),
        }
    }

    pub fn unmapped() -> Self {
        Self::new(Self::UNMAPPED, "Unmapped authors")
    }

    pub fn is_unmapped(&self) -> bool {
        self.id == Self::UNMAPPED
    }
}

impl fmt::Display for StudentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display_name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resolution {
    Student(StudentId),
    Unknown,
}

impl Resolution {
    pub fn student(&self) -> Option<&StudentId> {
        match self {
            Resolution::Student(s) => Some(s),
            Resolution::Unknown => None,
        }
    }

    /// The resolved student, or the unmapped pseudo-student.
    pub fn or_unmapped(&self) -> StudentId {
        self.student().cloned().unwrap_or_else(StudentId::unmapped)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct RosterEntry {
    student: StudentId,
    emails: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Roster {
    entries: Vec<RosterEntry>,
    email_aliases: BTreeMap<String, usize>,
    name_aliases: BTreeMap<String, usize>,
}

/// Lowercased, trimmed, inner whitespace collapsed.
pub fn normalize(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Parses `id | display name | email1, email2` lines; `#` lines and blanks are skipped.
pub fn load_roster(document: &str) -> Result<Roster, IdentityError> {
    let mut roster = Roster::default();
    for (idx, raw) in document.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('|').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(IdentityError::MalformedRoster {
                line,
                message: format!("expected 3 '|'-separated fields, found {}", fields.len()),
            });
        }
        let (id, display_name) = (fields[0], fields[1]);
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(IdentityError::MalformedRoster {
                line,
                message: format!("student id {id:?} must be non-empty without whitespace"),
            });
        }
        if id == StudentId::UNMAPPED {
            return Err(IdentityError::MalformedRoster {
                line,
                message: format!("student id {id:?} is reserved"),
            });
        }
        if display_name.is_empty() {
            return Err(IdentityError::MalformedRoster {
                line,
                message: "display name is empty".into(),
            });
        }
        if roster.entries.iter().any(|e| e.student.id == id) {
            return Err(IdentityError::MalformedRoster {
                line,
                message: format!("duplicate student id {id:?}"),
            });
        }
        let mut emails = Vec::new();
        for email in fields[2].split(',').map(normalize).filter(|e| !e.is_empty()) {
            if !email.contains('@') {
                return Err(IdentityError::MalformedRoster {
                    line,
                    message: format!("{email:?} is not an email address"),
                });
            }
            if !emails.contains(&email) {
                emails.push(email);
            }
        }

        let index = roster.entries.len();
        for email in &emails {
            if let Some(&other) = roster.email_aliases.get(email) {
                return Err(IdentityError::DuplicateAlias {
                    line,
                    alias: email.clone(),
                    first: roster.entries[other].student.id.clone(),
                    second: id.to_string(),
                });
            }
            roster.email_aliases.insert(email.clone(), index);
        }
        let name = normalize(display_name);
        if let Some(&other) = roster.name_aliases.get(&name) {
            return Err(IdentityError::DuplicateAlias {
                line,
                alias: name,
                first: roster.entries[other].student.id.clone(),
                second: id.to_string(),
            });
        }
        roster.name_aliases.insert(name, index);
        roster.entries.push(RosterEntry {
            student: StudentId::new(id, display_name),
            emails,
        });
    }
    Ok(roster)
}

impl Roster {
    pub fn students(&self) -> impl Iterator<Item = &StudentId> {
        self.entries.iter().map(|e| &e.student)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&StudentId> {
        self.students().find(|s| s.id == id)
    }

    /// Email matches win over name matches.
    pub fn resolve(&self, name: &str, email: &str) -> Resolution {
        let hit = self
            .email_aliases
            .get(&normalize(email))
            .or_else(|| self.name_aliases.get(&normalize(name)));
        match hit {
            Some(&i) => Resolution::Student(self.entries[i].student.clone()),
            None => Resolution::Unknown,
        }
    }

    /// Every normalized alias (emails and names) with its student id.
    pub fn aliases(&self) -> BTreeMap<String, String> {
        self.email_aliases
            .iter()
            .chain(self.name_aliases.iter())
            .map(|(alias, &i)| (alias.clone(), self.entries[i].student.id.clone()))
            .collect()
    }

    /// Serializes back to the roster file format.
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(&format!(
                "{} | {} | {}\n",
                entry.student.id,
                entry.student.display_name,
                entry.emails.join(", ")
            ));
        }
        out
    }
}

/// A `Co-authored-by:` trailer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoAuthorTag {
    pub name: String,
    pub email: String,
    pub source_commit: String,
}

const TRAILER_KEY: &str = "co-authored-by:";

/// One tag per well-formed `Co-authored-by: NAME <EMAIL>` line, in message order.
/// `source_commit` is left empty; see [`coauthors_of`].
pub fn parse_coauthors(message: &str) -> Vec<CoAuthorTag> {
    message.lines().filter_map(parse_trailer_line).collect()
}

pub fn coauthors_of(commit: &CommitRecord) -> Vec<CoAuthorTag> {
    parse_coauthors(&commit.message)
        .into_iter()
        .map(|tag| CoAuthorTag {
            source_commit: commit.hash.clone(),
            ..tag
        })
        .collect()
}

fn parse_trailer_line(line: &str) -> Option<CoAuthorTag> {
    let line = line.trim();
    let head = line.get(..TRAILER_KEY.len())?;
    if !head.eq_ignore_ascii_case(TRAILER_KEY) {
        return None;
    }
    let rest = line[TRAILER_KEY.len()..].trim();
    let open = rest.find('<')?;
    let close = rest.rfind('>')?;
    if close != rest.len() - 1 || close < open {
        return None;
    }
    let name = rest[..open].trim();
    let email = rest[open + 1..close].trim();
    if name.is_empty() || email.is_empty() || !email.contains('@') || email.contains(['<', '>']) {
        return None;
    }
    Some(CoAuthorTag {
        name: name.to_string(),
        email: email.to_string(),
        source_commit: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROSTER: &str = "# team alpha\n\
ana | Ana Lima | ana@x.com, ana.lima@uni.edu\n\
\n\
ben | Ben Ode | ben@x.com\n";

    #[test]
    fn loads_aliases() {
        let r = load_roster(ROSTER).unwrap();
        assert_eq!(r.len(), 2);
        let emails = r.aliases().keys().filter(|k| k.contains('@')).count();
        assert_eq!(emails, 3);
    }

    #[test]
    fn duplicate_email_is_rejected() {
        let doc = "a | A | same@x.com\nb | B | Same@X.com\n";
        assert!(matches!(
            load_roster(doc),
            Err(IdentityError::DuplicateAlias { line: 2, .. })
        ));
    }

    #[test]
    fn malformed_lines_report_location() {
        assert_eq!(
            load_roster("a | A | a@x.com\nbroken line\n"),
            Err(IdentityError::MalformedRoster {
                line: 2,
                message: "expected 3 '|'-separated fields, found 1".into()
            })
        );
        assert!(load_roster("unmapped | U | u@x.com").is_err());
        assert!(load_roster("a | A | a@x.com\na | B | b@x.com").is_err());
    }

    #[test]
    fn resolution_order() {
        let r = load_roster(ROSTER).unwrap();
        let ana = StudentId::new("ana", "Ana Lima");
        // mixed-case email normalizes to the same alias
        assert_eq!(r.resolve("whoever", "ANA@X.com"), Resolution::Student(ana.clone()));
        assert_eq!(r.resolve("  ana   LIMA ", "laptop@local"), Resolution::Student(ana.clone()));
        // email wins over a conflicting name
        assert_eq!(
            r.resolve("Ana Lima", "ben@x.com"),
            Resolution::Student(StudentId::new("ben", "Ben Ode"))
        );
        assert_eq!(r.resolve("CI Bot", "ci@build.local"), Resolution::Unknown);
    }

    #[test]
    fn roster_document_round_trips() {
        let r = load_roster(ROSTER).unwrap();
        let again = load_roster(&r.to_document()).unwrap();
        assert_eq!(again.aliases(), r.aliases());
        assert_eq!(again, r);
    }

    #[test]
    fn coauthor_trailers() {
        assert!(parse_coauthors("Fix login\n\nplain body").is_empty());
        let tags = parse_coauthors("Pair on auth\n\nCo-authored-by: Ana <ana@x.com>\nco-authored-by: Ben Ode <ben@x.com>\n");
        assert_eq!(tags.len(), 2);
        assert_eq!((tags[0].name.as_str(), tags[0].email.as_str()), ("Ana", "ana@x.com"));
        assert_eq!(tags[1].name, "Ben Ode");
    }

    #[test]
    fn malformed_trailers_are_ignored() {
        let msg = "x\n\nCo-authored-by: <a@x.com>\nCo-authored-by: Ana ana@x.com\nCo-authored-by: Ana <not-an-email>\nCo-authored-by: Ana <a@x.com> trailing\n";
        assert!(parse_coauthors(msg).is_empty());
    }
}
