//! One command process at a time per output directory, enforced with an
//! exclusive lock file that is removed when the guard drops.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use crate::errors::CliError;

pub const LOCK_NAME: &str = ".afm-lock";

pub struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    /// Create the output directory if needed and take its lock.
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| {
            CliError::validation(format!("cannot create {}: {e}", dir.display()))
        })?;
        let path = dir.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(LockGuard { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CliError::validation(format!(
                    "{} is locked by another command ({} exists); \
                     remove the file if that process is gone",
                    dir.display(),
                    path.display()
                )))
            }
            Err(e) => Err(CliError::validation(format!(
                "cannot lock {}: {e}",
                dir.display()
            ))),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
