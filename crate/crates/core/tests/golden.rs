use std::path::PathBuf;

use confetty_core::fixtures::{fixture_names, load_fixture};

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden").join(format!("{name}.json"))
}

#[test]
fn bundles_match_golden_files() {
    let bless = std::env::var_os("CONFETTY_BLESS").is_some();
    for name in fixture_names() {
        let rendered = load_fixture(name).unwrap().to_json();
        let path = golden(name);
        if bless {
            std::fs::write(&path, &rendered).unwrap();
            continue;
        }
        let expected = std::fs::read_to_string(&path)
            .unwrap_or_else(|e| panic!("{}: {e}; run with CONFETTY_BLESS=1 to create it", path.display()));
        assert_eq!(rendered, expected, "{name} drifted from its golden file");
    }
}
