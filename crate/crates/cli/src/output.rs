//! Staged outputs: nothing reaches the output directory until every file
//! of a command has been produced, and then each lands by rename.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

#[derive(Debug, Default)]
pub struct Staged {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Staged {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    /// Writes every file to a temporary sibling, then renames them all.
    /// Temporaries are removed if any write fails.
    pub fn commit(self) -> Result<()> {
        let mut temps: Vec<(PathBuf, &Path)> = Vec::with_capacity(self.files.len());
        let written = (|| -> Result<()> {
            for (path, bytes) in &self.files {
                let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                let tmp = dir.join(format!(".{name}.partial{}", std::process::id()));
                temps.push((tmp.clone(), path));
                let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
                f.write_all(bytes)?;
                f.sync_all()?;
            }
            Ok(())
        })();
        if let Err(e) = written {
            for (tmp, _) in &temps {
                let _ = fs::remove_file(tmp);
            }
            return Err(e);
        }
        for (i, (tmp, path)) in temps.iter().enumerate() {
            if let Err(e) = fs::rename(tmp, path) {
                for (rest, _) in &temps[i..] {
                    let _ = fs::remove_file(rest);
                }
                return Err(e).with_context(|| format!("writing {}", path.display()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Staged::new();
        s.add(dir.path().join("a.txt"), b"one".to_vec());
        s.add(dir.path().join("sub/b.txt"), b"two".to_vec());
        s.commit().unwrap();
        assert_eq!(fs::read(dir.path().join("a.txt")).unwrap(), b"one");
        assert_eq!(fs::read(dir.path().join("sub/b.txt")).unwrap(), b"two");
    }

    #[test]
    fn failed_commit_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("blocker"), b"file").unwrap();
        let mut s = Staged::new();
        s.add(dir.path().join("a.txt"), b"one".to_vec());
        s.add(dir.path().join("blocker/b.txt"), b"two".to_vec());
        assert!(s.commit().is_err());
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("blocker")]);
    }
}
