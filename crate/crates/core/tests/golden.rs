//! Pins the summary of every preset at its default seed.
//! Regenerate with `UPDATE_GOLDEN=1 cargo test --test golden`.

use ehsim_core::scenario::{preset, PRESETS};
use std::path::PathBuf;

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("{name}.json"))
}

#[test]
fn preset_summaries_are_frozen() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let mut stale = Vec::new();
    for name in PRESETS {
        let scenario = preset(name).unwrap().to_scenario().unwrap();
        let summary = ehsim_core::run(&scenario).unwrap().summary;
        let actual = serde_json::to_string_pretty(&summary).unwrap() + "\n";
        let path = golden_path(name);
        if update {
            std::fs::create_dir_all(path.parent().unwrap()).unwrap();
            std::fs::write(&path, &actual).unwrap();
            continue;
        }
        let expected = std::fs::read_to_string(&path)
            .unwrap_or_else(|e| panic!("{}: {e}; run with UPDATE_GOLDEN=1", path.display()));
        if expected != actual {
            stale.push(format!("{name}:\n--- expected\n{expected}--- actual\n{actual}"));
        }
    }
    assert!(stale.is_empty(), "preset summaries changed:\n{}", stale.join("\n"));
}
