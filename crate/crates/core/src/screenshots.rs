//! Content-addressed screenshot directory (`<key>.png`).

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::digest::sha256_hex;

#[derive(Debug, Clone)]
pub struct ScreenshotStore {
    dir: PathBuf,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key.len() <= 200
        && key.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
        && !key.starts_with('.')
}

impl ScreenshotStore {
    pub fn open(dir: impl AsRef<Path>) -> io::Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(ScreenshotStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        valid_key(key).then(|| self.dir.join(format!("{key}.png")))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.path(key).is_some_and(|p| p.is_file())
    }

    /// Stores `bytes` under their SHA-256 and returns the key.
    pub fn put(&self, bytes: &[u8]) -> io::Result<String> {
        let key = sha256_hex(bytes);
        self.put_with_key(&key, bytes)?;
        Ok(key)
    }

    pub fn put_with_key(&self, key: &str, bytes: &[u8]) -> io::Result<()> {
        let path = self
            .path(key)
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, format!("invalid screenshot key `{key}`")))?;
        fs::write(path, bytes)
    }

    pub fn read(&self, key: &str) -> io::Result<Vec<u8>> {
        let path = self
            .path(key)
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, format!("invalid screenshot key `{key}`")))?;
        fs::read(path)
    }
}
