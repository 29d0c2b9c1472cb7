use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use sha2::{Digest, Sha256};

/// Keyed blob storage. Keys are `/`-separated relative paths.
pub trait ObjectStore: Send + Sync {
    fn get(&self, key: &str) -> io::Result<Vec<u8>>;
    /// Atomic: readers see either the old object or the complete new one.
    fn put(&self, key: &str, bytes: &[u8]) -> io::Result<()>;
    fn delete(&self, key: &str) -> io::Result<()>;
    /// Keys starting with `prefix`, sorted.
    fn list(&self, prefix: &str) -> io::Result<Vec<String>>;

    /// Digest over every `(key, content)` pair, in key order.
    fn content_hash(&self) -> io::Result<String> {
        let mut h = Sha256::new();
        for key in self.list("")? {
            let body = Sha256::digest(self.get(&key)?);
            h.update(key.as_bytes());
            h.update([0]);
            h.update(body);
        }
        Ok(hex::encode(h.finalize()))
    }
}

fn check_key(key: &str) -> io::Result<()> {
    let bad = key.is_empty()
        || key.starts_with('/')
        || Path::new(key)
            .components()
            .any(|c| !matches!(c, Component::Normal(_)));
    if bad {
        Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("invalid object key `{key}`"),
        ))
    } else {
        Ok(())
    }
}

/// Objects as files under a root directory.
#[derive(Debug)]
pub struct LocalDirStore {
    root: PathBuf,
    tmp_seq: AtomicU64,
}

impl LocalDirStore {
    pub fn new(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(LocalDirStore {
            root,
            tmp_seq: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

const TMP_SUFFIX: &str = ".partial";

impl ObjectStore for LocalDirStore {
    fn get(&self, key: &str) -> io::Result<Vec<u8>> {
        check_key(key)?;
        fs::read(self.root.join(key))
    }

    fn put(&self, key: &str, bytes: &[u8]) -> io::Result<()> {
        check_key(key)?;
        let path = self.root.join(key);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let seq = self.tmp_seq.fetch_add(1, Ordering::Relaxed);
        let tmp = path.with_file_name(format!(
            ".{}.{}.{seq}{TMP_SUFFIX}",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("obj"),
            std::process::id()
        ));
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path).inspect_err(|_| {
            let _ = fs::remove_file(&tmp);
        })
    }

    fn delete(&self, key: &str) -> io::Result<()> {
        check_key(key)?;
        match fs::remove_file(self.root.join(key)) {
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
            r => r,
        }
    }

    fn list(&self, prefix: &str) -> io::Result<Vec<String>> {
        let mut out = Vec::new();
        walk(&self.root, &self.root, &mut out)?;
        out.retain(|k| k.starts_with(prefix));
        out.sort();
        Ok(out)
    }
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> io::Result<()> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(e),
    };
    for entry in entries {
        let entry = entry?;
        let path = entry.path();
        if entry.file_type()?.is_dir() {
            walk(root, &path, out)?;
        } else {
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if name.starts_with('.') && name.ends_with(TMP_SUFFIX) {
                continue;
            }
            let rel = path.strip_prefix(root).expect("under root");
            let key: Vec<String> = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect();
            out.push(key.join("/"));
        }
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    objects: RwLock<BTreeMap<String, Vec<u8>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.objects.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ObjectStore for MemoryStore {
    fn get(&self, key: &str) -> io::Result<Vec<u8>> {
        self.objects
            .read()
            .unwrap()
            .get(key)
            .cloned()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("no object `{key}`")))
    }

    fn put(&self, key: &str, bytes: &[u8]) -> io::Result<()> {
        check_key(key)?;
        self.objects
            .write()
            .unwrap()
            .insert(key.to_string(), bytes.to_vec());
        Ok(())
    }

    fn delete(&self, key: &str) -> io::Result<()> {
        self.objects.write().unwrap().remove(key);
        Ok(())
    }

    fn list(&self, prefix: &str) -> io::Result<Vec<String>> {
        Ok(self
            .objects
            .read()
            .unwrap()
            .range(prefix.to_string()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(k, _)| k.clone())
            .collect())
    }
}

/// Wraps a store and sleeps before every read and write.
#[derive(Debug)]
pub struct LatencyStore<S> {
    inner: S,
    latency: std::time::Duration,
}

impl<S: ObjectStore> LatencyStore<S> {
    pub fn new(inner: S, latency: std::time::Duration) -> Self {
        LatencyStore { inner, latency }
    }
}

impl<S: ObjectStore> ObjectStore for LatencyStore<S> {
    fn get(&self, key: &str) -> io::Result<Vec<u8>> {
        std::thread::sleep(self.latency);
        self.inner.get(key)
    }

    fn put(&self, key: &str, bytes: &[u8]) -> io::Result<()> {
        std::thread::sleep(self.latency);
        self.inner.put(key, bytes)
    }

    fn delete(&self, key: &str) -> io::Result<()> {
        self.inner.delete(key)
    }

    fn list(&self, prefix: &str) -> io::Result<Vec<String>> {
        self.inner.list(prefix)
    }
}

impl<S: ObjectStore + ?Sized> ObjectStore for std::sync::Arc<S> {
    fn get(&self, key: &str) -> io::Result<Vec<u8>> {
        (**self).get(key)
    }

    fn put(&self, key: &str, bytes: &[u8]) -> io::Result<()> {
        (**self).put(key, bytes)
    }

    fn delete(&self, key: &str) -> io::Result<()> {
        (**self).delete(key)
    }

    fn list(&self, prefix: &str) -> io::Result<Vec<String>> {
        (**self).list(prefix)
    }
}

/// Copy a local tree into `store`, keeping relative paths as keys. The first
/// path component is taken to be the accession number.
pub fn ingest_dir(dir: &Path, store: &dyn ObjectStore) -> io::Result<usize> {
    let mut keys = Vec::new();
    walk(dir, dir, &mut keys)?;
    keys.sort();
    for key in &keys {
        store.put(key, &fs::read(dir.join(key))?)?;
    }
    Ok(keys.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exercise(store: &dyn ObjectStore) {
        store.put("a/b/c.dcm", b"one").unwrap();
        store.put("a/b/c.dcm", b"two").unwrap();
        store.put("a/d.dcm", b"x").unwrap();
        store.put("b.dcm", b"y").unwrap();
        assert_eq!(store.get("a/b/c.dcm").unwrap(), b"two");
        assert_eq!(store.list("a/").unwrap(), vec!["a/b/c.dcm", "a/d.dcm"]);
        assert_eq!(store.list("").unwrap().len(), 3);
        assert!(store.put("../evil", b"").is_err());
        assert!(store.put("/abs", b"").is_err());
        store.delete("b.dcm").unwrap();
        store.delete("b.dcm").unwrap();
        assert!(store.get("b.dcm").is_err());
    }

    #[test]
    fn memory_store() {
        exercise(&MemoryStore::new());
    }

    #[test]
    fn latency_store() {
        exercise(&LatencyStore::new(MemoryStore::new(), std::time::Duration::from_micros(10)));
    }

    #[test]
    fn local_store() {
        let dir = tempfile::tempdir().unwrap();
        let store = LocalDirStore::new(dir.path()).unwrap();
        exercise(&store);
        assert!(fs::read_dir(dir.path().join("a/b"))
            .unwrap()
            .all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(TMP_SUFFIX)));
    }

    #[test]
    fn hashes_agree_across_backends() {
        let dir = tempfile::tempdir().unwrap();
        let local = LocalDirStore::new(dir.path()).unwrap();
        let mem = MemoryStore::new();
        for s in [&local as &dyn ObjectStore, &mem] {
            s.put("x/1", b"a").unwrap();
            s.put("x/2", b"b").unwrap();
        }
        assert_eq!(local.content_hash().unwrap(), mem.content_hash().unwrap());
        mem.put("x/2", b"c").unwrap();
        assert_ne!(local.content_hash().unwrap(), mem.content_hash().unwrap());
    }

    #[test]
    fn ingest() {
        let src = tempfile::tempdir().unwrap();
        fs::create_dir_all(src.path().join("ACC1/series")).unwrap();
        fs::write(src.path().join("ACC1/series/1.dcm"), b"1").unwrap();
        fs::write(src.path().join("ACC1/2.dcm"), b"2").unwrap();
        let store = MemoryStore::new();
        assert_eq!(ingest_dir(src.path(), &store).unwrap(), 2);
        assert_eq!(store.list("ACC1/").unwrap(), vec!["ACC1/2.dcm", "ACC1/series/1.dcm"]);
    }
}
