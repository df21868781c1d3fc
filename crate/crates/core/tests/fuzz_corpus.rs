//! Replays the checked-in fuzz corpus through the same properties the
//! fuzz targets assert.

use std::path::PathBuf;

use vpn_reserve::scenario::Scenario;
use vpn_reserve::simplex::LinearProgram;

fn corpus(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut entries: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            (path.display().to_string(), std::fs::read_to_string(&path).unwrap())
        })
        .collect();
    entries.sort();
    assert!(!entries.is_empty(), "empty corpus at {}", dir.display());
    entries
}

#[test]
fn scenario_corpus_round_trips() {
    let mut parsed = 0;
    for (name, text) in corpus("scenario_toml") {
        if let Ok(s) = Scenario::from_toml(&text) {
            let again = Scenario::from_toml(&s.to_toml()).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(again.hash(), s.hash(), "{name}");
            parsed += 1;
        }
    }
    assert!(parsed >= 4);
}

#[test]
fn lp_dump_corpus_round_trips() {
    let mut parsed = 0;
    for (name, text) in corpus("lp_dump") {
        if let Ok(lp) = LinearProgram::parse_dump(&text) {
            assert_eq!(LinearProgram::parse_dump(&lp.to_dump()).unwrap(), lp, "{name}");
            parsed += 1;
        }
    }
    assert!(parsed >= 2);
}
