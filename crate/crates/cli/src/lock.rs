//! Advisory lock on a working directory.
//!
//! Commands that write artifacts take the lock for their whole run so two
//! concurrent invocations cannot interleave half-written files. The lock is
//! a plain `.lock` file created with `create_new`, which is atomic on every
//! platform we care about; it holds the owning pid for post-mortem
//! diagnosis and is removed on drop (including on error paths, since the
//! guard lives on the stack of the command function).

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use socrec_core::{Error, Result};

pub struct WorkdirLock {
    path: PathBuf,
}

impl WorkdirLock {
    /// Creates `<dir>/.lock` exclusively, failing if it already exists.
    pub fn acquire(dir: &Path) -> Result<WorkdirLock> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut file) => {
                let _ = write!(file, "{}", std::process::id());
                Ok(WorkdirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Invalid(format!(
                "working directory {} is locked by another command; remove {} if no other process is running",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for WorkdirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
