//! Run directories: one per invocation, guarded by a lock file.

use std::fs::{self, File, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use crate::Failure;

pub const LOCK_FILE: &str = "textgan.lock";
pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SAMPLES_FILE: &str = "samples.txt";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// An output directory held for the lifetime of the value. The lock file is
/// removed on drop.
#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    /// Uses `explicit` when given, otherwise the first free
    /// `<root>/<stem>-NNN`.
    pub fn create(explicit: Option<&Path>, root: &Path, stem: &str) -> Result<Self, Failure> {
        let path = match explicit {
            Some(p) => {
                fs::create_dir_all(p).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", p.display())))?;
                p.to_path_buf()
            }
            None => fresh_dir(root, stem)?,
        };
        let lock = path.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())
                    .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", lock.display())))?;
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                return Err(Failure::runtime(format!(
                    "output directory {} is in use by another run (delete {} if no run is active)",
                    path.display(),
                    lock.display()
                )));
            }
            Err(e) => return Err(Failure::runtime(format!("cannot create {}: {e}", lock.display()))),
        }
        Ok(Self { path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn checkpoint(&self, name: &str) -> Result<PathBuf, Failure> {
        let dir = self.path.join(CHECKPOINT_DIR);
        fs::create_dir_all(&dir).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(dir.join(format!("{name}.ckpt")))
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<(), Failure> {
        let p = self.file(name);
        fs::write(&p, contents).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", p.display())))
    }

    /// Opens the metrics log for appending after keeping its first `keep`
    /// lines. Resuming into the same directory drops records written after
    /// the checkpoint being resumed.
    pub fn metrics(&self, keep: usize) -> Result<File, Failure> {
        let p = self.file(METRICS_FILE);
        let err = |e: std::io::Error| Failure::runtime(format!("cannot open {}: {e}", p.display()));
        let kept: String = match fs::read_to_string(&p) {
            Ok(text) => text.lines().take(keep).map(|l| format!("{l}\n")).collect(),
            Err(e) if e.kind() == ErrorKind::NotFound => String::new(),
            Err(e) => return Err(err(e)),
        };
        fs::write(&p, kept).map_err(err)?;
        OpenOptions::new().append(true).open(&p).map_err(err)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.path.join(LOCK_FILE));
    }
}

fn fresh_dir(root: &Path, stem: &str) -> Result<PathBuf, Failure> {
    fs::create_dir_all(root).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", root.display())))?;
    for n in 1.. {
        let p = root.join(format!("{stem}-{n:03}"));
        match fs::create_dir(&p) {
            Ok(()) => return Ok(p),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Failure::runtime(format!("cannot create {}: {e}", p.display()))),
        }
    }
    unreachable!("unbounded range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_directories_are_numbered_and_unlocked_on_drop() {
        let root = tempfile::tempdir().unwrap();
        let a = RunDir::create(None, root.path(), "x").unwrap();
        let b = RunDir::create(None, root.path(), "x").unwrap();
        assert!(a.path().ends_with("x-001") && b.path().ends_with("x-002"));
        assert!(a.file(LOCK_FILE).exists());
        let p = a.path().to_path_buf();
        drop(a);
        assert!(!p.join(LOCK_FILE).exists());
        RunDir::create(Some(&p), root.path(), "x").unwrap();
    }

    #[test]
    fn metrics_keep_only_the_requested_prefix() {
        let root = tempfile::tempdir().unwrap();
        let run = RunDir::create(None, root.path(), "m").unwrap();
        fs::write(run.file(METRICS_FILE), "1\n2\n3\n").unwrap();
        let mut f = run.metrics(2).unwrap();
        writeln!(f, "x").unwrap();
        assert_eq!(fs::read_to_string(run.file(METRICS_FILE)).unwrap(), "1\n2\nx\n");
    }
}
