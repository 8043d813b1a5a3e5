use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

pub const CACHE_DIR_ENV: &str = "AUTOHALL_CACHE_DIR";

/// Optional run settings from a TOML file. Command-line flags override every field.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub backend: Option<BackendSection>,
    pub model_id: Option<String>,
    pub temperature: Option<f64>,
    pub k: Option<usize>,
    pub threshold: Option<usize>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub paths: Paths,
    pub refusal_patterns_path: Option<PathBuf>,
    pub template_overrides_path: Option<PathBuf>,
    pub topic_vocabulary: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub kind: Option<String>,
    pub endpoint: Option<String>,
    pub script: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub max_concurrency: Option<usize>,
    pub token_env: Option<String>,
    pub max_attempts: Option<u32>,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub reports: Option<PathBuf>,
    pub exemplars: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: FileConfig =
            toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        // Relative paths in the file are relative to the file.
        if let Some(base) = path.parent() {
            config.rebase(base);
        }
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.paths.corpus);
        fix(&mut self.paths.out);
        fix(&mut self.paths.dataset);
        fix(&mut self.paths.reports);
        fix(&mut self.paths.exemplars);
        fix(&mut self.refusal_patterns_path);
        fix(&mut self.template_overrides_path);
        if let Some(b) = self.backend.as_mut() {
            fix(&mut b.script);
            fix(&mut b.cache_dir);
        }
    }
}
