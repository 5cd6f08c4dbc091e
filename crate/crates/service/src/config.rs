use std::fs;
use std::path::PathBuf;

use ifspref_core::AggregationMethod;

use crate::ServiceError;

/// Overrides `data_dir` when set.
pub const DATA_DIR_ENV: &str = "IFS_DATA_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub listen_port: u16,
    pub data_dir: PathBuf,
    pub default_method: AggregationMethod,
    pub cors_allowed_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen_port: 8080,
            data_dir: PathBuf::from("ifs-data"),
            default_method: AggregationMethod::DynamicWeighting,
            cors_allowed_origin: None,
        }
    }
}

impl ServiceConfig {
    pub fn with_env_overrides(mut self) -> Self {
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV).filter(|d| !d.is_empty()) {
            self.data_dir = PathBuf::from(dir);
        }
        self
    }

    /// Checks the port and that `data_dir` exists and is writable.
    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.listen_port == 0 {
            return Err(ServiceError::Config("listen_port must lie in [1, 65535]".into()));
        }
        let meta = fs::metadata(&self.data_dir)
            .map_err(|e| ServiceError::Config(format!("data_dir {}: {e}", self.data_dir.display())))?;
        if !meta.is_dir() {
            return Err(ServiceError::Config(format!("data_dir {} is not a directory", self.data_dir.display())));
        }
        let probe = self.data_dir.join(".write-probe");
        fs::write(&probe, b"")
            .and_then(|_| fs::remove_file(&probe))
            .map_err(|e| ServiceError::Config(format!("data_dir {} is not writable: {e}", self.data_dir.display())))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let dir = tempfile::tempdir().unwrap();
        let ok = ServiceConfig { data_dir: dir.path().to_path_buf(), ..Default::default() };
        assert!(ok.validate().is_ok());
        assert!(ServiceConfig { listen_port: 0, ..ok.clone() }.validate().is_err());
        let missing = ServiceConfig { data_dir: dir.path().join("nope"), ..ok };
        assert!(missing.validate().is_err());
    }
}
