#![allow(dead_code)]

use std::path::PathBuf;

use orpd::case_io::{parse_case, RawCase};
use orpd::network::{build_network, Network};

pub fn case_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/cases").join(format!("{name}.m"))
}

pub fn raw(name: &str) -> RawCase {
    let text = std::fs::read_to_string(case_path(name)).expect("case file is readable");
    parse_case(&text).expect("case parses")
}

pub fn network(name: &str) -> Network {
    build_network(&raw(name)).expect("network builds")
}
