//! Local content-addressed store.
//!
//! Objects live in a sharded directory, `<root>/<first two hex>/<rest of hex>`,
//! keyed by the SHA-256 of their bytes. Reads re-hash before returning, so a
//! modified backing file surfaces as [`CasError::IntegrityViolation`].

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::digest::Digest;

pub const LOCATOR_TAG: &str = "sha256";

/// Content-addressed locator, rendered as `sha256:<hex>`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Locator {
    digest: Digest,
}

impl Locator {
    pub fn for_content(content: &[u8]) -> Self {
        Self {
            digest: Digest::of(content),
        }
    }

    pub fn from_digest(digest: Digest) -> Self {
        Self { digest }
    }

    pub fn digest(&self) -> &Digest {
        &self.digest
    }

    pub fn algorithm(&self) -> &'static str {
        LOCATOR_TAG
    }
}

impl fmt::Display for Locator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{LOCATOR_TAG}:{}", self.digest)
    }
}

impl fmt::Debug for Locator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Locator({LOCATOR_TAG}:{})", self.digest.short(16))
    }
}

impl FromStr for Locator {
    type Err = CasError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let hex = s
            .strip_prefix(LOCATOR_TAG)
            .and_then(|r| r.strip_prefix(':'))
            .ok_or_else(|| CasError::BadLocator(s.to_owned()))?;
        if hex.chars().any(|c| c.is_ascii_uppercase()) {
            return Err(CasError::BadLocator(s.to_owned()));
        }
        let digest = hex.parse().map_err(|_| CasError::BadLocator(s.to_owned()))?;
        Ok(Self { digest })
    }
}

impl Serialize for Locator {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Locator {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error)]
pub enum CasError {
    #[error("empty content is not allowed by this store")]
    EmptyContent,
    #[error("store capacity of {capacity} bytes exceeded")]
    StorageFull { capacity: u64 },
    #[error("no object stored under {0}")]
    NotFound(Locator),
    #[error("stored bytes for {0} no longer match their digest")]
    IntegrityViolation(Locator),
    #[error("malformed locator `{0}`")]
    BadLocator(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct CasConfig {
    pub allow_empty: bool,
    /// Total byte budget; `None` means unbounded.
    pub capacity: Option<u64>,
}

#[derive(Debug)]
pub struct CasStore {
    root: PathBuf,
    config: CasConfig,
    used: AtomicU64,
    tmp_counter: AtomicU64,
}

impl CasStore {
    pub fn open(root: impl Into<PathBuf>, config: CasConfig) -> Result<Self, CasError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let used = disk_usage(&root)?;
        Ok(Self {
            root,
            config,
            used: AtomicU64::new(used),
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Backing file for a locator. Exposed so operators (and tamper tests) can
    /// inspect objects directly.
    pub fn object_path(&self, locator: &Locator) -> PathBuf {
        let hex = locator.digest.to_hex();
        self.root.join(&hex[..2]).join(&hex[2..])
    }

    pub fn put(&self, content: &[u8]) -> Result<Locator, CasError> {
        if content.is_empty() && !self.config.allow_empty {
            return Err(CasError::EmptyContent);
        }
        let locator = Locator::for_content(content);
        let path = self.object_path(&locator);
        if path.exists() {
            return Ok(locator);
        }
        if let Some(capacity) = self.config.capacity {
            let len = content.len() as u64;
            let reserved = self
                .used
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |used| {
                    (used + len <= capacity).then_some(used + len)
                });
            if reserved.is_err() {
                return Err(CasError::StorageFull { capacity });
            }
        } else {
            self.used.fetch_add(content.len() as u64, Ordering::SeqCst);
        }
        let dir = path.parent().expect("sharded path has a parent");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            self.tmp_counter.fetch_add(1, Ordering::SeqCst)
        ));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(content)?;
            f.sync_all()?;
        }
        // Concurrent puts of the same content race benignly: identical bytes.
        fs::rename(&tmp, &path)?;
        Ok(locator)
    }

    pub fn get(&self, locator: &Locator) -> Result<Vec<u8>, CasError> {
        let bytes = match fs::read(self.object_path(locator)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(CasError::NotFound(*locator))
            }
            Err(e) => return Err(e.into()),
        };
        if !verify(locator, &bytes) {
            return Err(CasError::IntegrityViolation(*locator));
        }
        Ok(bytes)
    }

    pub fn contains(&self, locator: &Locator) -> bool {
        self.object_path(locator).exists()
    }

    pub fn used_bytes(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }

    /// Every stored object path (for audits and scanners).
    pub fn object_paths(&self) -> Result<Vec<PathBuf>, CasError> {
        let mut out = Vec::new();
        for shard in fs::read_dir(&self.root)? {
            let shard = shard?;
            if !shard.file_type()?.is_dir() {
                continue;
            }
            for obj in fs::read_dir(shard.path())? {
                let obj = obj?;
                if !obj.file_name().to_string_lossy().starts_with('.') {
                    out.push(obj.path());
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

/// True iff `content` hashes to the locator's digest.
pub fn verify(locator: &Locator, content: &[u8]) -> bool {
    Locator::for_content(content) == *locator
}

fn disk_usage(root: &Path) -> Result<u64, std::io::Error> {
    let mut total = 0;
    for shard in fs::read_dir(root)? {
        let shard = shard?;
        if shard.file_type()?.is_dir() {
            for obj in fs::read_dir(shard.path())? {
                total += obj?.metadata()?.len();
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn store(config: CasConfig) -> (tempfile::TempDir, CasStore) {
        let dir = tempfile::tempdir().unwrap();
        let store = CasStore::open(dir.path().join("cas"), config).unwrap();
        (dir, store)
    }

    #[test]
    fn put_is_idempotent() {
        let (_d, s) = store(CasConfig::default());
        let a = s.put(b"abc").unwrap();
        let b = s.put(b"abc").unwrap();
        assert_eq!(a, b);
        assert_eq!(s.object_paths().unwrap().len(), 1);
    }

    #[test]
    fn empty_content_respects_configuration() {
        let (_d, s) = store(CasConfig::default());
        assert!(matches!(s.put(b""), Err(CasError::EmptyContent)));
        let (_d, s) = store(CasConfig {
            allow_empty: true,
            ..Default::default()
        });
        let loc = s.put(b"").unwrap();
        assert_eq!(
            loc.digest().to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(s.get(&loc).unwrap(), b"");
    }

    #[test]
    fn one_mebibyte_round_trip() {
        let (_d, s) = store(CasConfig::default());
        let mut blob = vec![0u8; 1 << 20];
        rand::thread_rng().fill_bytes(&mut blob);
        let loc = s.put(&blob).unwrap();
        assert_eq!(s.get(&loc).unwrap(), blob);
    }

    #[test]
    fn unknown_locator_is_not_found() {
        let (_d, s) = store(CasConfig::default());
        let loc = Locator::for_content(b"never stored");
        assert!(matches!(s.get(&loc), Err(CasError::NotFound(_))));
    }

    #[test]
    fn tampered_object_is_an_integrity_violation() {
        let (_d, s) = store(CasConfig::default());
        let loc = s.put(b"payload bytes").unwrap();
        let path = s.object_path(&loc);
        let mut bytes = fs::read(&path).unwrap();
        bytes[3] ^= 0x01;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(s.get(&loc), Err(CasError::IntegrityViolation(_))));
    }

    #[test]
    fn capacity_is_enforced() {
        let (_d, s) = store(CasConfig {
            capacity: Some(8),
            ..Default::default()
        });
        s.put(b"12345").unwrap();
        assert!(matches!(s.put(b"6789"), Err(CasError::StorageFull { capacity: 8 })));
        // Re-putting existing content costs nothing.
        s.put(b"12345").unwrap();
    }

    #[test]
    fn verify_detects_extension() {
        let loc = Locator::for_content(b"x");
        assert!(verify(&loc, b"x"));
        assert!(!verify(&loc, b"x0"));
    }

    #[test]
    fn locator_rendering_round_trips() {
        let loc = Locator::for_content(b"abc");
        let text = loc.to_string();
        assert!(text.starts_with("sha256:"));
        assert_eq!(text.parse::<Locator>().unwrap(), loc);
        assert!("md5:abcd".parse::<Locator>().is_err());
        assert!(text.to_uppercase().parse::<Locator>().is_err());
    }
}
