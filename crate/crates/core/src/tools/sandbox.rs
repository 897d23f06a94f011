//! Per-worker sandbox directory with path containment.

use std::io;
use std::path::{Component, Path, PathBuf};

use super::ToolError;

#[derive(Debug, Clone)]
pub struct Sandbox {
    root: PathBuf,
}

impl Sandbox {
    /// Creates the directory if needed.
    pub fn create(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Sandbox { root: root.canonicalize()? })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Maps a worker-supplied path into the sandbox. Relative paths are taken
    /// from the root; absolute ones must already point inside it. `..` may not
    /// climb above the root, and symlinks may not lead out of it.
    pub fn resolve(&self, requested: &str) -> Result<PathBuf, ToolError> {
        let violation = || ToolError::SandboxViolation(requested.to_string());
        let p = Path::new(requested);
        let rel: PathBuf = if p.is_absolute() {
            p.strip_prefix(&self.root).map_err(|_| violation())?.to_path_buf()
        } else {
            p.to_path_buf()
        };
        let mut parts: Vec<&std::ffi::OsStr> = Vec::new();
        for c in rel.components() {
            match c {
                Component::Normal(s) => parts.push(s),
                Component::CurDir => {}
                Component::ParentDir => {
                    parts.pop().ok_or_else(violation)?;
                }
                Component::RootDir | Component::Prefix(_) => return Err(violation()),
            }
        }
        let mut out = self.root.clone();
        out.extend(parts);
        // Follow symlinks on the longest existing prefix.
        let mut probe = out.as_path();
        while !probe.exists() {
            match probe.parent() {
                Some(p) => probe = p,
                None => break,
            }
        }
        let real = probe.canonicalize().map_err(ToolError::Io)?;
        if !real.starts_with(&self.root) {
            return Err(violation());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn containment() {
        let d = tempfile::tempdir().unwrap();
        let sb = Sandbox::create(d.path().join("w1")).unwrap();
        assert_eq!(sb.resolve("a/../b.txt").unwrap(), sb.root().join("b.txt"));
        assert!(sb.resolve("../escape").is_err());
        assert!(sb.resolve("a/../../escape").is_err());
        assert!(sb.resolve("/etc/passwd").is_err());
        assert!(sb.resolve(sb.root().join("x").to_str().unwrap()).is_ok());
    }

    #[test]
    fn symlink_escape() {
        let d = tempfile::tempdir().unwrap();
        let sb = Sandbox::create(d.path().join("w1")).unwrap();
        std::os::unix::fs::symlink(d.path(), sb.root().join("link")).unwrap();
        assert!(matches!(sb.resolve("link/secret"), Err(ToolError::SandboxViolation(_))));
    }
}
