//! Content-addressed image store.
//!
//! Bytes live in memory and, when a root directory is configured, under
//! `<root>/<sha256>.<ext>`. Sidecar blobs (synthetic scene descriptions)
//! live under `<root>/scenes/<id>.json`.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use super::{ImageRef, Provenance};
use crate::text::sha256_hex;

#[derive(Debug, Default)]
pub struct ArtifactStore {
    root: Option<PathBuf>,
    images: RwLock<HashMap<String, (String, Vec<u8>)>>,
    sidecars: RwLock<HashMap<String, Vec<u8>>>,
}

fn extension(media_type: &str) -> &str {
    match media_type {
        "image/png" => "png",
        "image/jpeg" => "jpg",
        "image/webp" => "webp",
        _ => "bin",
    }
}

impl ArtifactStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// A store persisted under `root` (created if missing).
    pub fn on_disk(root: impl AsRef<Path>) -> io::Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("scenes"))?;
        Ok(Self { root: Some(root), ..Self::default() })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn put(
        &self,
        bytes: Vec<u8>,
        media_type: &str,
        provenance: Provenance,
    ) -> io::Result<ImageRef> {
        if bytes.is_empty() {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "empty image"));
        }
        let hash = sha256_hex(&bytes);
        let image = ImageRef {
            content_hash: hash.clone(),
            media_type: media_type.to_string(),
            byte_length: bytes.len() as u64,
            provenance,
        };
        if let Some(root) = &self.root {
            let path = root.join(format!("{hash}.{}", extension(media_type)));
            if !path.exists() {
                write_atomic(&path, &bytes)?;
            }
        }
        self.images
            .write()
            .expect("store lock poisoned")
            .entry(hash)
            .or_insert_with(|| (media_type.to_string(), bytes));
        Ok(image)
    }

    pub fn contains(&self, content_hash: &str) -> bool {
        if self.images.read().expect("store lock poisoned").contains_key(content_hash) {
            return true;
        }
        self.find_on_disk(content_hash).is_some()
    }

    fn find_on_disk(&self, content_hash: &str) -> Option<PathBuf> {
        let root = self.root.as_ref()?;
        ["png", "jpg", "webp", "bin"]
            .iter()
            .map(|ext| root.join(format!("{content_hash}.{ext}")))
            .find(|p| p.exists())
    }

    /// Load the bytes behind a reference and verify they hash back to it.
    pub fn resolve(&self, image: &ImageRef) -> io::Result<Vec<u8>> {
        let cached = self
            .images
            .read()
            .expect("store lock poisoned")
            .get(&image.content_hash)
            .map(|(_, b)| b.clone());
        let bytes = match cached {
            Some(b) => b,
            None => {
                let path = self.find_on_disk(&image.content_hash).ok_or_else(|| {
                    io::Error::new(io::ErrorKind::NotFound, image.content_hash.clone())
                })?;
                fs::read(path)?
            }
        };
        if sha256_hex(&bytes) != image.content_hash {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "content hash mismatch"));
        }
        Ok(bytes)
    }

    pub fn put_sidecar(&self, id: &str, bytes: Vec<u8>) -> io::Result<()> {
        if let Some(root) = &self.root {
            let path = root.join("scenes").join(format!("{id}.json"));
            if !path.exists() {
                write_atomic(&path, &bytes)?;
            }
        }
        self.sidecars
            .write()
            .expect("store lock poisoned")
            .entry(id.to_string())
            .or_insert(bytes);
        Ok(())
    }

    pub fn sidecar(&self, id: &str) -> io::Result<Vec<u8>> {
        if let Some(b) = self.sidecars.read().expect("store lock poisoned").get(id) {
            return Ok(b.clone());
        }
        match &self.root {
            Some(root) => fs::read(root.join("scenes").join(format!("{id}.json"))),
            None => Err(io::Error::new(io::ErrorKind::NotFound, id.to_string())),
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov() -> Provenance {
        Provenance::Http { prompt_id: "p".into() }
    }

    #[test]
    fn round_trip_in_memory() {
        let store = ArtifactStore::in_memory();
        let image = store.put(vec![1, 2, 3], "image/png", prov()).unwrap();
        assert_eq!(image.byte_length, 3);
        assert_eq!(store.resolve(&image).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn round_trip_on_disk_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let image = {
            let store = ArtifactStore::on_disk(dir.path()).unwrap();
            store.put(b"bytes".to_vec(), "image/png", prov()).unwrap()
        };
        let reopened = ArtifactStore::on_disk(dir.path()).unwrap();
        assert!(reopened.contains(&image.content_hash));
        assert_eq!(sha256_hex(&reopened.resolve(&image).unwrap()), image.content_hash);
    }

    #[test]
    fn tampered_bytes_fail_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::on_disk(dir.path()).unwrap();
        let image = store.put(b"abc".to_vec(), "image/png", prov()).unwrap();
        fs::write(dir.path().join(format!("{}.png", image.content_hash)), b"xyz").unwrap();
        let fresh = ArtifactStore::on_disk(dir.path()).unwrap();
        assert!(fresh.resolve(&image).is_err());
    }

    #[test]
    fn empty_image_rejected() {
        assert!(ArtifactStore::in_memory().put(vec![], "image/png", prov()).is_err());
    }
}
