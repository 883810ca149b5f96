use std::fs;
use std::path::{Path, PathBuf};

use magscan_core::harness::SessionLog;

/// Directory under which each session gets its own numbered folder.
#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
}

impl SessionStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Create the next free `session-NNNN` folder.
    pub fn allocate(&self) -> std::io::Result<(String, PathBuf)> {
        fs::create_dir_all(&self.root)?;
        for n in 1.. {
            let name = format!("session-{n:04}");
            let dir = self.root.join(&name);
            match fs::create_dir(&dir) {
                Ok(()) => return Ok((name, dir)),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e),
            }
        }
        unreachable!()
    }

    pub fn save(&self, dir: &Path, log: &SessionLog) -> magscan_core::Result<()> {
        log.save(dir)
    }
}
