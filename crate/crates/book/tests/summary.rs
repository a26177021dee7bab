//! Every chapter in SUMMARY.md is compiled by the crate, and vice versa.

use std::collections::BTreeSet;

#[test]
fn summary_and_lib_list_the_same_chapters() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../book/src");
    let summary = std::fs::read_to_string(format!("{root}/SUMMARY.md")).unwrap();
    let linked: BTreeSet<&str> = summary
        .split("](")
        .skip(1)
        .map(|s| s.split(')').next().unwrap())
        .collect();
    let lib = include_str!("../src/lib.rs");
    let included: BTreeSet<&str> = lib
        .split("book/src/")
        .skip(1)
        .map(|s| s.split('"').next().unwrap())
        .collect();
    assert_eq!(linked, included);
    for chapter in &linked {
        assert!(
            std::path::Path::new(&format!("{root}/{chapter}")).is_file(),
            "{chapter}"
        );
    }
}
