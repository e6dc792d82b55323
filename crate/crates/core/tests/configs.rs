use std::path::Path;

use repulse::io::config::ExperimentConfig;

#[test]
fn shipped_configs_load_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.model_specs().unwrap();
            cfg.train_config().unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 4);
}
