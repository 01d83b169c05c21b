use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// Files and directories a command is about to write. Unless `commit` is
/// called, everything recorded is removed when the guard drops.
#[derive(Default)]
pub struct Outputs {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn file(&mut self, path: &Path) -> Result<PathBuf> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            self.dir(parent)?;
        }
        self.files.push(path.to_path_buf());
        Ok(path.to_path_buf())
    }

    /// Creates `dir` (and missing parents); only directories created here
    /// are removed on failure.
    pub fn dir(&mut self, dir: &Path) -> Result<()> {
        let mut missing = Vec::new();
        let mut cur = Some(dir);
        while let Some(d) = cur.filter(|d| !d.as_os_str().is_empty() && !d.exists()) {
            missing.push(d.to_path_buf());
            cur = d.parent();
        }
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        self.dirs.extend(missing);
        Ok(())
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        self.dirs.sort_by_key(|d| std::cmp::Reverse(d.components().count()));
        for d in &self.dirs {
            let _ = fs::remove_dir(d);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncommitted_outputs_are_removed() {
        let tmp = tempfile::tempdir().unwrap();
        let nested = tmp.path().join("a/b");
        {
            let mut out = Outputs::default();
            out.dir(&nested).unwrap();
            let f = out.file(&nested.join("x.txt")).unwrap();
            fs::write(f, "x").unwrap();
        }
        assert!(!tmp.path().join("a").exists());

        let mut out = Outputs::default();
        let f = out.file(&tmp.path().join("kept.txt")).unwrap();
        fs::write(&f, "x").unwrap();
        out.commit();
        assert!(f.exists());
    }
}
