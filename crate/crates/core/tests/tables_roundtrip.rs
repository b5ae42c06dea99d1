mod support {
    pub mod tables_gen;
}

use contribsum_core::tables::{read_csv, to_csv_bytes, ContributionTable, FunctionalityTable};
use proptest::prelude::*;
use support::tables_gen::{contribution_table, functionality_table};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn functionality_table_round_trips(table in functionality_table()) {
        let bytes = to_csv_bytes(&table);
        let back: FunctionalityTable = read_csv(bytes.as_slice()).unwrap();
        prop_assert_eq!(back, table);
    }

    #[test]
    fn contribution_table_round_trips(table in contribution_table()) {
        let bytes = to_csv_bytes(&table);
        let back: ContributionTable = read_csv(bytes.as_slice()).unwrap();
        prop_assert_eq!(back, table);
    }
}
