use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::UNIX_EPOCH;

use walkdir::WalkDir;
use xxhash_rust::xxh3::xxh3_64;

use super::IngestError;

/// File facts of one image found on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScannedFile {
    /// `/`-separated path below the scanned root.
    pub relative_path: String,
    pub absolute_path: PathBuf,
    pub content_hash: u64,
    pub byte_size: u64,
    pub mtime_ms: i64,
}

pub fn is_image_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

pub fn relative_key(root: &Path, path: &Path) -> Option<String> {
    let rel = path.strip_prefix(root).ok()?;
    let parts: Vec<&str> = rel
        .components()
        .map(|c| c.as_os_str().to_str())
        .collect::<Option<_>>()?;
    (!parts.is_empty()).then(|| parts.join("/"))
}

/// Reads a file and records its hash, size and modification time.
pub fn file_facts(path: &Path) -> std::io::Result<(u64, u64, i64, Vec<u8>)> {
    let bytes = std::fs::read(path)?;
    let meta = std::fs::metadata(path)?;
    let mtime_ms = meta
        .modified()
        .ok()
        .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0);
    Ok((xxh3_64(&bytes), bytes.len() as u64, mtime_ms, bytes))
}

#[cfg(unix)]
fn file_key(meta: &std::fs::Metadata) -> Option<(u64, u64)> {
    use std::os::unix::fs::MetadataExt;
    Some((meta.dev(), meta.ino()))
}

#[cfg(not(unix))]
fn file_key(_: &std::fs::Metadata) -> Option<(u64, u64)> {
    None
}

/// Recursive walk following symlinks. Loops are cut by the walker and a file
/// reachable through several links is reported once, under its
/// lexicographically first path. Output is sorted by relative path.
pub fn scan_directory(root: &Path) -> Result<Vec<ScannedFile>, IngestError> {
    if !root.is_dir() {
        return Err(IngestError::PathNotFound(root.to_path_buf()));
    }
    let mut paths: Vec<(String, PathBuf)> = WalkDir::new(root)
        .follow_links(true)
        .into_iter()
        .filter_map(|entry| match entry {
            Ok(e) => Some(e),
            Err(err) => {
                log::debug!("scan of {} skipped an entry: {err}", root.display());
                None
            }
        })
        .filter(|e| e.file_type().is_file() && is_image_path(e.path()))
        .filter_map(|e| relative_key(root, e.path()).map(|k| (k, e.into_path())))
        .collect();
    paths.sort();

    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(paths.len());
    for (relative_path, absolute_path) in paths {
        let Ok(meta) = std::fs::metadata(&absolute_path) else {
            continue;
        };
        if let Some(key) = file_key(&meta) {
            if !seen.insert(key) {
                continue;
            }
        }
        match file_facts(&absolute_path) {
            Ok((content_hash, byte_size, mtime_ms, _)) => out.push(ScannedFile {
                relative_path,
                absolute_path,
                content_hash,
                byte_size,
                mtime_ms,
            }),
            Err(e) => log::warn!("cannot read {}: {e}", absolute_path.display()),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_filtered() {
        let dir = tempfile::tempdir().unwrap();
        assert!(scan_directory(dir.path()).unwrap().is_empty());
        std::fs::create_dir_all(dir.path().join("a/b")).unwrap();
        for f in ["x.png", "a/y.PNG", "a/b/z.jpeg", "a/notes.txt", "a/b/w.JPG"] {
            std::fs::write(dir.path().join(f), f.as_bytes()).unwrap();
        }
        let found: Vec<String> = scan_directory(dir.path())
            .unwrap()
            .into_iter()
            .map(|f| f.relative_path)
            .collect();
        assert_eq!(found, ["a/b/w.JPG", "a/b/z.jpeg", "a/y.PNG", "x.png"]);
    }

    #[test]
    fn missing_root() {
        assert!(matches!(
            scan_directory(Path::new("/definitely/not/here")),
            Err(IngestError::PathNotFound(_))
        ));
    }

    #[cfg(unix)]
    #[test]
    fn symlink_loop_terminates_and_visits_each_file_once() {
        use std::os::unix::fs::symlink;
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().canonicalize().unwrap();
        std::fs::create_dir_all(root.join("d/e")).unwrap();
        std::fs::write(root.join("d/one.png"), b"1").unwrap();
        std::fs::write(root.join("d/e/two.png"), b"2").unwrap();
        symlink(&root, root.join("d/e/loop")).unwrap();
        symlink(root.join("d/one.png"), root.join("alias.png")).unwrap();

        // oracle: walk real directories only, collecting distinct inodes
        fn real_files(p: &Path, out: &mut HashSet<(u64, u64)>) {
            for e in std::fs::read_dir(p).unwrap() {
                let e = e.unwrap();
                let ft = e.file_type().unwrap();
                if ft.is_dir() {
                    real_files(&e.path(), out);
                } else if ft.is_file() {
                    out.insert(file_key(&e.metadata().unwrap()).unwrap());
                }
            }
        }
        let mut inodes = HashSet::new();
        real_files(&root, &mut inodes);

        let found = scan_directory(&root).unwrap();
        assert_eq!(found.len(), inodes.len());
        let keys: HashSet<_> = found
            .iter()
            .map(|f| file_key(&std::fs::metadata(&f.absolute_path).unwrap()).unwrap())
            .collect();
        assert_eq!(keys, inodes);
        assert_eq!(found[0].relative_path, "alias.png");
    }
}
