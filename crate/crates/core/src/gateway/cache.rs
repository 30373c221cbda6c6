//! Content-addressed response cache.
//!
//! One JSON file per key, named by the hex key. The same layout serves as
//! replay fixtures when opened read-only.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub prompt: String,
    pub response: String,
    pub provider_id: String,
    /// Seconds since the Unix epoch at record time.
    pub timestamp: u64,
}

impl CacheEntry {
    pub fn now(prompt: String, response: String, provider_id: String) -> Self {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            prompt,
            response,
            provider_id,
            timestamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CacheStats {
    pub entries: usize,
    pub bytes: u64,
}

pub fn is_cache_key(name: &str) -> bool {
    name.len() == 64
        && name
            .bytes()
            .all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

#[derive(Debug)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    read_only: bool,
    memory: RwLock<HashMap<String, CacheEntry>>,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            read_only: false,
            memory: RwLock::new(HashMap::new()),
            write_lock: Mutex::new(()),
        }
    }

    /// Persistent cache; the directory is created if needed.
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            read_only: false,
            memory: RwLock::new(HashMap::new()),
            write_lock: Mutex::new(()),
        })
    }

    /// Fixture directory; never written.
    pub fn open_read_only(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(io::Error::new(
                io::ErrorKind::NotFound,
                format!("fixture directory {} does not exist", dir.display()),
            ));
        }
        Ok(Self {
            dir: Some(dir),
            read_only: true,
            memory: RwLock::new(HashMap::new()),
            write_lock: Mutex::new(()),
        })
    }

    pub fn is_read_only(&self) -> bool {
        self.read_only
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn get(&self, key: &str) -> io::Result<Option<CacheEntry>> {
        if let Some(hit) = self.memory.read().expect("cache lock").get(key) {
            return Ok(Some(hit.clone()));
        }
        let Some(dir) = &self.dir else {
            return Ok(None);
        };
        if !is_cache_key(key) {
            return Ok(None);
        }
        let path = dir.join(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        let entry: CacheEntry = serde_json::from_slice(&bytes).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("corrupt cache entry {}: {e}", path.display()),
            )
        })?;
        self.memory
            .write()
            .expect("cache lock")
            .insert(key.to_string(), entry.clone());
        Ok(Some(entry))
    }

    pub fn put(&self, key: &str, entry: CacheEntry) -> io::Result<()> {
        if self.read_only {
            return Err(io::Error::new(
                io::ErrorKind::PermissionDenied,
                "cache is read-only",
            ));
        }
        let _guard = self.write_lock.lock().expect("cache write lock");
        if let Some(dir) = &self.dir {
            let body = serde_json::to_vec_pretty(&entry).map_err(io::Error::other)?;
            let tmp = dir.join(format!(".{key}.tmp"));
            fs::write(&tmp, body)?;
            fs::rename(&tmp, dir.join(key))?;
        }
        self.memory
            .write()
            .expect("cache lock")
            .insert(key.to_string(), entry);
        Ok(())
    }

    pub fn stats(&self) -> io::Result<CacheStats> {
        match &self.dir {
            Some(dir) => dir_stats(dir),
            None => Ok(CacheStats {
                entries: self.memory.read().expect("cache lock").len(),
                bytes: 0,
            }),
        }
    }
}

fn cache_files(dir: &Path) -> io::Result<Vec<(PathBuf, u64)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        if entry.file_type()?.is_file() && name.to_str().is_some_and(is_cache_key) {
            out.push((entry.path(), entry.metadata()?.len()));
        }
    }
    Ok(out)
}

pub fn dir_stats(dir: &Path) -> io::Result<CacheStats> {
    let files = cache_files(dir)?;
    Ok(CacheStats {
        entries: files.len(),
        bytes: files.iter().map(|(_, len)| len).sum(),
    })
}

/// Removes every cache entry file in `dir`; other files are left alone.
pub fn clear_dir(dir: &Path) -> io::Result<usize> {
    let files = cache_files(dir)?;
    for (path, _) in &files {
        fs::remove_file(path)?;
    }
    Ok(files.len())
}
