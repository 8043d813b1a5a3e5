use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use super::{cache_key, BackendError, ChatBackend, ChatRequest};

/// Append-only directory of replies, one file per cache key.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| BackendError::Cache { path: dir.clone(), source })?;
        Ok(ResponseCache { dir, write_lock: Mutex::new(()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn get(&self, key: &str) -> Result<Option<String>, BackendError> {
        let path = self.dir.join(key);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(BackendError::Cache { path, source }),
        }
    }

    /// Store `reply` under `key` unless an entry already exists.
    pub fn put(&self, key: &str, reply: &str) -> Result<(), BackendError> {
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        let path = self.dir.join(key);
        if path.exists() {
            return Ok(());
        }
        let tmp = self.dir.join(format!(".{key}.tmp"));
        let io = |source| BackendError::Cache { path: path.clone(), source };
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(reply.as_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, &path).map_err(io)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

/// Serves replies from a [`ResponseCache`] and forwards misses to `inner`.
pub struct CachedBackend<B> {
    inner: B,
    cache: ResponseCache,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<B: ChatBackend> CachedBackend<B> {
    pub fn new(inner: B, cache: ResponseCache) -> Self {
        CachedBackend { inner, cache, hits: AtomicU64::new(0), misses: AtomicU64::new(0) }
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats { hits: self.hits.load(Ordering::Relaxed), misses: self.misses.load(Ordering::Relaxed) }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ChatBackend> ChatBackend for CachedBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let key = cache_key(request);
        if let Some(hit) = self.cache.get(&key)? {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let reply = self.inner.complete(request)?;
        self.cache.put(&key, &reply)?;
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Purpose;
    use crate::types::GenerationParams;
    use std::sync::atomic::AtomicUsize;

    struct Counting(AtomicUsize);

    impl ChatBackend for Counting {
        fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
            let n = self.0.fetch_add(1, Ordering::SeqCst);
            Ok(format!("{} #{n}", request.prompt))
        }
    }

    fn req(prompt: &str) -> ChatRequest {
        let params = GenerationParams {
            model_id: "m".into(),
            temperature: 0.1,
            prompt_template_id: "t".into(),
            sample_index: 0,
        };
        ChatRequest::new(prompt, params, Purpose::Generation)
    }

    #[test]
    fn second_call_is_served_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let backend = CachedBackend::new(Counting(AtomicUsize::new(0)), ResponseCache::open(dir.path()).unwrap());
        let a = backend.complete(&req("hello")).unwrap();
        let b = backend.complete(&req("hello")).unwrap();
        assert_eq!(a, b);
        assert_eq!(backend.stats(), CacheStats { hits: 1, misses: 1 });
        assert_eq!(backend.inner().0.load(Ordering::SeqCst), 1);

        let file = dir.path().join(cache_key(&req("hello")));
        assert_eq!(fs::read_to_string(file).unwrap(), "hello #0");

        let reopened = CachedBackend::new(Counting(AtomicUsize::new(0)), ResponseCache::open(dir.path()).unwrap());
        assert_eq!(reopened.complete(&req("hello")).unwrap(), "hello #0");
        assert_eq!(reopened.inner().0.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn entries_are_never_overwritten() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        cache.put("k", "first").unwrap();
        cache.put("k", "second").unwrap();
        assert_eq!(cache.get("k").unwrap().as_deref(), Some("first"));
        assert_eq!(cache.get("missing").unwrap(), None);
    }
}
