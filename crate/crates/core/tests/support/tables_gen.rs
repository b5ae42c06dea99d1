//! Proptest strategies for both intermediate tables. Text fields mix
//! delimiters, quotes, line breaks, padding and non-ASCII.

use contribsum_core::attribution::SoloFunction;
use contribsum_core::tables::{ContributionRecord, ContributionTable, FunctionalityRecord, FunctionalityTable};
use proptest::collection::vec;
use proptest::prelude::*;

pub fn text() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        "[a-zA-Z0-9 ]{0,8}",
        Just(",".to_string()),
        Just("\"".to_string()),
        Just("\"\"".to_string()),
        Just("\n".to_string()),
        Just("\r\n".to_string()),
        Just("\r".to_string()),
        Just(";".to_string()),
        Just(":".to_string()),
        Just("\t".to_string()),
        Just(" ".to_string()),
        "[éßøλжש中文🙂]{1,3}",
    ];
    vec(piece, 0..8).prop_map(|parts| parts.concat())
}

fn count() -> impl Strategy<Value = f64> {
    prop_oneof![
        (0u32..5000).prop_map(f64::from),
        (0u32..5000, 1u32..7).prop_map(|(n, d)| f64::from(n) / f64::from(d)),
    ]
}

fn solo() -> impl Strategy<Value = SoloFunction> {
    ("[a-zA-Z_][a-zA-Z0-9_]{0,10}", 1u32..40).prop_map(|(name, score)| SoloFunction { name, score })
}

fn functionality_record() -> impl Strategy<Value = FunctionalityRecord> {
    (
        text(),
        text(),
        text(),
        any::<u32>(),
        any::<u32>(),
        proptest::option::of(1u32..500),
        proptest::option::of(0u64..10_000),
    )
        .prop_map(
            |(filename, functionality, difficulty, bytes, lines, complexity, tag_count)| FunctionalityRecord {
                filename,
                functionality,
                difficulty,
                byte_size: u64::from(bytes),
                line_count: u64::from(lines),
                complexity,
                tag_count,
            },
        )
}

fn contribution_record() -> impl Strategy<Value = ContributionRecord> {
    (text(), text(), text(), count(), count(), vec(solo(), 0..4)).prop_map(
        |(student, file, description, lines_owned, lines_added_in_window, solo_functions)| ContributionRecord {
            student,
            file,
            description,
            lines_owned,
            lines_added_in_window,
            solo_functions,
        },
    )
}

pub fn functionality_table() -> impl Strategy<Value = FunctionalityTable> {
    vec(functionality_record(), 0..12).prop_map(|mut rows| {
        rows.sort_by(|a, b| a.filename.cmp(&b.filename));
        rows.dedup_by(|a, b| a.filename == b.filename);
        FunctionalityTable::new(rows).expect("keys are unique")
    })
}

pub fn contribution_table() -> impl Strategy<Value = ContributionTable> {
    vec(contribution_record(), 0..12).prop_map(|mut rows| {
        rows.sort_by(|a, b| (&a.student, &a.file).cmp(&(&b.student, &b.file)));
        rows.dedup_by(|a, b| a.student == b.student && a.file == b.file);
        ContributionTable::new(rows).expect("keys are unique")
    })
}
