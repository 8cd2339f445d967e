use sacmoe::harness::ExperimentConfig;

#[test]
fn shipped_configs_load_and_resolve() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let c = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert!(!c.context_set().unwrap().contexts.is_empty(), "{}", path.display());
            n += 1;
        }
    }
    assert!(n >= 3);
}
