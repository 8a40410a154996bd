//! Run manifests. A manifest lists every artifact a scenario produced
//! together with its content hash, so a rerun can be checked for
//! reproducibility byte by byte. Nothing time- or host-dependent goes in.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CoreError;
use crate::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Path relative to the run directory, with `/` separators.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub seeds: Vec<u64>,
    pub status: RunStatus,
    /// Why the run failed, when it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    /// Hash of the resolved scenario configuration.
    pub config_sha256: String,
    /// Every file under the run directory except the manifest itself,
    /// sorted by path.
    pub artifacts: Vec<ArtifactEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn walk(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            walk(&path, root, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

impl RunManifest {
    /// Hashes every file under `dir` (except the manifest file) into a
    /// manifest with the given run metadata.
    pub fn collect(
        dir: &Path,
        scenario: &str,
        seeds: &[u64],
        status: RunStatus,
        failure: Option<String>,
        config_sha256: String,
    ) -> Result<RunManifest> {
        let mut paths = Vec::new();
        walk(dir, dir, &mut paths)?;
        let mut artifacts = Vec::with_capacity(paths.len());
        for path in paths {
            let rel = path
                .strip_prefix(dir)
                .map_err(|_| CoreError::invalid("walked file escaped the run directory"))?;
            let rel: String = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            if rel == MANIFEST_FILE {
                continue;
            }
            let bytes = fs::read(&path)?;
            artifacts.push(ArtifactEntry {
                path: rel,
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(RunManifest {
            scenario: scenario.to_string(),
            seeds: seeds.to_vec(),
            status,
            failure,
            config_sha256,
            artifacts,
        })
    }

    /// Writes `manifest.json` into the run directory.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CoreError::invalid(format!("manifest serialization: {e}")))?;
        fs::write(&path, json)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| CoreError::invalid(format!("{}: {e}", path.display())))
    }

    pub fn artifact(&self, rel_path: &str) -> Option<&ArtifactEntry> {
        self.artifacts.iter().find(|a| a.path == rel_path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fill(dir: &Path) {
        fs::write(dir.join("a.csv"), "# schema v1\n1,2\n").unwrap();
        fs::create_dir(dir.join("sub")).unwrap();
        fs::write(dir.join("sub/b.txt"), "payload").unwrap();
    }

    #[test]
    fn collect_is_sorted_and_skips_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        fill(dir.path());
        let m = RunManifest::collect(
            dir.path(),
            "case1",
            &[1, 2],
            RunStatus::Completed,
            None,
            sha256_hex(b"cfg"),
        )
        .unwrap();
        m.write(dir.path()).unwrap();

        let m2 = RunManifest::collect(
            dir.path(),
            "case1",
            &[1, 2],
            RunStatus::Completed,
            None,
            sha256_hex(b"cfg"),
        )
        .unwrap();
        assert_eq!(m, m2, "manifest file must not hash itself");
        let paths: Vec<&str> = m.artifacts.iter().map(|a| a.path.as_str()).collect();
        assert_eq!(paths, vec!["a.csv", "sub/b.txt"]);
    }

    #[test]
    fn hashes_track_content() {
        let dir = tempfile::tempdir().unwrap();
        fill(dir.path());
        let before = RunManifest::collect(
            dir.path(),
            "x",
            &[0],
            RunStatus::Completed,
            None,
            String::new(),
        )
        .unwrap();
        fs::write(dir.path().join("a.csv"), "# schema v1\n1,3\n").unwrap();
        let after = RunManifest::collect(
            dir.path(),
            "x",
            &[0],
            RunStatus::Completed,
            None,
            String::new(),
        )
        .unwrap();
        assert_ne!(
            before.artifact("a.csv").unwrap().sha256,
            after.artifact("a.csv").unwrap().sha256
        );
        assert_eq!(
            before.artifact("sub/b.txt").unwrap(),
            after.artifact("sub/b.txt").unwrap()
        );
    }

    #[test]
    fn json_round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        fill(dir.path());
        let m = RunManifest::collect(
            dir.path(),
            "case3",
            &[7],
            RunStatus::Failed,
            Some("trainer diverged".into()),
            sha256_hex(b"c"),
        )
        .unwrap();
        let path = m.write(dir.path()).unwrap();
        let back = RunManifest::load(&path).unwrap();
        assert_eq!(m, back);
        assert_eq!(back.status, RunStatus::Failed);
    }

    #[test]
    fn known_hash_value() {
        // sha256 of the empty string, pinned so the encoding cannot drift.
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
