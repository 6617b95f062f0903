//! Directory-backed key-value store with JSON values.
//!
//! Each namespace is a directory; each key a file named by the hex encoding
//! of the key. Writes go to a temporary file and are renamed into place.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Clone)]
pub struct KvStore {
    root: PathBuf,
}

fn decode(name: &str) -> Option<String> {
    String::from_utf8(hex::decode(name).ok()?).ok()
}

impl KvStore {
    pub fn open(root: impl AsRef<Path>) -> io::Result<Self> {
        fs::create_dir_all(root.as_ref())?;
        Ok(KvStore { root: root.as_ref().to_path_buf() })
    }

    fn path(&self, namespace: &str, key: &str) -> PathBuf {
        self.root.join(namespace).join(format!("{}.json", hex::encode(key)))
    }

    pub fn get<T: DeserializeOwned>(&self, namespace: &str, key: &str) -> io::Result<Option<T>> {
        match fs::read(self.path(namespace, key)) {
            Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn put<T: Serialize>(&self, namespace: &str, key: &str, value: &T) -> io::Result<()> {
        let path = self.path(namespace, key);
        fs::create_dir_all(path.parent().expect("namespaced path"))?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(value).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?)?;
        fs::rename(tmp, path)
    }

    pub fn contains(&self, namespace: &str, key: &str) -> bool {
        self.path(namespace, key).is_file()
    }

    pub fn delete(&self, namespace: &str, key: &str) -> io::Result<bool> {
        match fs::remove_file(self.path(namespace, key)) {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// Keys in `namespace`, sorted.
    pub fn keys(&self, namespace: &str) -> io::Result<Vec<String>> {
        let dir = self.root.join(namespace);
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut keys: Vec<String> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".json")).and_then(decode))
            .collect();
        keys.sort();
        Ok(keys)
    }
}
