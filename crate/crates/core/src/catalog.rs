//! Relational metadata for registered directories, images and per-embedder
//! index state, kept in a single SQLite file.
//!
//! Schema (the statements in [`SCHEMA`] are plain SQL and port to a
//! client-server engine unchanged):
//!
//! * `directories(id, path UNIQUE, enabled, created_at_ms)`
//! * `images(id, directory_id → directories ON DELETE CASCADE, rel_path,
//!   content_hash, byte_size, mtime_ms, UNIQUE(directory_id, rel_path))`
//! * `index_state(image_id → images ON DELETE CASCADE, embedder, state)`
//! * `embedders(name)`: the enabled embedder set that `index_state` keys track
//!
//! Directory removal cascades to its images. The export format is one JSON
//! object per line (`kind` = `header` | `embedder` | `directory` | `image`),
//! ordered by kind then id, so two catalogs with the same logical state
//! export byte-identical text.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use rusqlite::{params, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("PathNotFound: {0}")]
    PathNotFound(PathBuf),
    #[error("NotADirectory: {0}")]
    NotADirectory(PathBuf),
    #[error("PermissionDenied: {0}")]
    PermissionDenied(PathBuf),
    #[error("UnknownDirectory: {0}")]
    UnknownDirectory(i64),
    #[error("UnknownEmbedder: {0}")]
    UnknownEmbedder(String),
    #[error("malformed export line {line}: {msg}")]
    Import { line: usize, msg: String },
    #[error("sqlite: {0}")]
    Sql(#[from] rusqlite::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CatalogError>;

pub const SCHEMA: &str = "
PRAGMA foreign_keys = ON;
CREATE TABLE IF NOT EXISTS directories (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    path TEXT NOT NULL UNIQUE,
    enabled INTEGER NOT NULL,
    created_at_ms INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS images (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    directory_id INTEGER NOT NULL REFERENCES directories(id) ON DELETE CASCADE,
    rel_path TEXT NOT NULL,
    content_hash INTEGER NOT NULL,
    byte_size INTEGER NOT NULL,
    mtime_ms INTEGER NOT NULL,
    UNIQUE(directory_id, rel_path)
);
CREATE TABLE IF NOT EXISTS index_state (
    image_id INTEGER NOT NULL REFERENCES images(id) ON DELETE CASCADE,
    embedder TEXT NOT NULL,
    state TEXT NOT NULL,
    PRIMARY KEY(image_id, embedder)
);
CREATE INDEX IF NOT EXISTS index_state_pending ON index_state(embedder, state, image_id);
CREATE TABLE IF NOT EXISTS embedders (name TEXT PRIMARY KEY);
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DirectoryId(pub i64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub u64);

impl std::fmt::Display for DirectoryId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

impl std::fmt::Display for ImageId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexState {
    Pending,
    Indexed,
    Failed,
}

impl IndexState {
    fn as_str(self) -> &'static str {
        match self {
            IndexState::Pending => "pending",
            IndexState::Indexed => "indexed",
            IndexState::Failed => "failed",
        }
    }

    fn parse(s: &str) -> Self {
        match s {
            "indexed" => IndexState::Indexed,
            "failed" => IndexState::Failed,
            _ => IndexState::Pending,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectoryEntry {
    pub id: DirectoryId,
    pub path: PathBuf,
    pub enabled: bool,
    pub created_at_ms: i64,
    pub image_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: ImageId,
    pub directory_id: DirectoryId,
    pub relative_path: String,
    pub content_hash: u64,
    pub byte_size: u64,
    pub mtime_ms: i64,
    pub index_state: BTreeMap<String, IndexState>,
}

/// File facts gathered by a scan, before the catalog assigns an id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageCandidate {
    pub directory_id: DirectoryId,
    pub relative_path: String,
    pub content_hash: u64,
    pub byte_size: u64,
    pub mtime_ms: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsertChange {
    Inserted,
    Unchanged,
    /// Content hash differed; every index state was reset to pending.
    ContentChanged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    /// Images every enabled embedder has finished with (indexed or failed),
    /// taking the minimum across embedders.
    pub done: u64,
    pub total: u64,
}

impl Progress {
    pub fn ratio(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.done as f64 / self.total as f64
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ExportLine {
    Header {
        format: String,
        version: u32,
    },
    Embedder {
        name: String,
    },
    Directory {
        id: i64,
        path: String,
        enabled: bool,
        created_at_ms: i64,
    },
    Image {
        id: u64,
        directory_id: i64,
        relative_path: String,
        content_hash: String,
        byte_size: u64,
        mtime_ms: i64,
        index_state: BTreeMap<String, IndexState>,
    },
}

pub fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

pub struct Catalog {
    conn: Mutex<Connection>,
}

impl std::fmt::Debug for Catalog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Catalog").finish_non_exhaustive()
    }
}

fn canonical_directory(path: &Path) -> Result<PathBuf> {
    let canonical = match std::fs::canonicalize(path) {
        Ok(p) => p,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CatalogError::PathNotFound(path.to_path_buf()))
        }
        Err(e) if e.kind() == std::io::ErrorKind::PermissionDenied => {
            return Err(CatalogError::PermissionDenied(path.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    if !canonical.is_dir() {
        return Err(CatalogError::NotADirectory(path.to_path_buf()));
    }
    if let Err(e) = std::fs::read_dir(&canonical) {
        return Err(if e.kind() == std::io::ErrorKind::PermissionDenied {
            CatalogError::PermissionDenied(path.to_path_buf())
        } else {
            e.into()
        });
    }
    Ok(canonical)
}

impl Catalog {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        Self::init(conn)
    }

    pub fn in_memory() -> Result<Self> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self> {
        conn.busy_timeout(std::time::Duration::from_secs(5))?;
        conn.execute_batch(SCHEMA)?;
        Ok(Self {
            conn: Mutex::new(conn),
        })
    }

    /// Declares the enabled embedder set. Images gain a pending state for
    /// every newly enabled embedder and lose states for embedders no longer
    /// enabled.
    pub fn set_embedders(&self, names: &[String]) -> Result<()> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction()?;
        tx.execute("CREATE TEMP TABLE IF NOT EXISTS wanted(name TEXT PRIMARY KEY)", [])?;
        tx.execute("DELETE FROM wanted", [])?;
        for name in names {
            tx.execute("INSERT OR IGNORE INTO wanted(name) VALUES (?1)", [name])?;
        }
        tx.execute("DELETE FROM embedders WHERE name NOT IN (SELECT name FROM wanted)", [])?;
        tx.execute("DELETE FROM index_state WHERE embedder NOT IN (SELECT name FROM wanted)", [])?;
        tx.execute("INSERT OR IGNORE INTO embedders(name) SELECT name FROM wanted", [])?;
        tx.execute(
            "INSERT OR IGNORE INTO index_state(image_id, embedder, state)
             SELECT images.id, embedders.name, 'pending' FROM images, embedders",
            [],
        )?;
        tx.execute("DROP TABLE wanted", [])?;
        tx.commit()?;
        Ok(())
    }

    pub fn embedders(&self) -> Result<Vec<String>> {
        let conn = self.conn.lock();
        let mut stmt = conn.prepare("SELECT name FROM embedders ORDER BY name")?;
        let names = stmt
            .query_map([], |r| r.get(0))?
            .collect::<std::result::Result<Vec<String>, _>>()?;
        Ok(names)
    }

    /// Registers `path` (canonicalized). Returns the entry and whether it was
    /// newly created; an existing entry is returned unchanged.
    pub fn register_directory(&self, path: &Path) -> Result<(DirectoryEntry, bool)> {
        let canonical = canonical_directory(path)?;
        let text = canonical.to_string_lossy().into_owned();
        let conn = self.conn.lock();
        let inserted = conn.execute(
            "INSERT OR IGNORE INTO directories(path, enabled, created_at_ms) VALUES (?1, 1, ?2)",
            params![text, now_ms()],
        )? == 1;
        let id: i64 = conn.query_row("SELECT id FROM directories WHERE path = ?1", [&text], |r| {
            r.get(0)
        })?;
        let entry = Self::directory_row(&conn, DirectoryId(id))?
            .ok_or(CatalogError::UnknownDirectory(id))?;
        Ok((entry, inserted))
    }

    fn directory_row(conn: &Connection, id: DirectoryId) -> Result<Option<DirectoryEntry>> {
        Ok(conn
            .query_row(
                "SELECT d.id, d.path, d.enabled, d.created_at_ms,
                        (SELECT COUNT(*) FROM images i WHERE i.directory_id = d.id)
                 FROM directories d WHERE d.id = ?1",
                [id.0],
                Self::map_directory,
            )
            .optional()?)
    }

    fn map_directory(r: &rusqlite::Row<'_>) -> rusqlite::Result<DirectoryEntry> {
        Ok(DirectoryEntry {
            id: DirectoryId(r.get(0)?),
            path: PathBuf::from(r.get::<_, String>(1)?),
            enabled: r.get::<_, i64>(2)? != 0,
            created_at_ms: r.get(3)?,
            image_count: r.get::<_, i64>(4)? as u64,
        })
    }

    pub fn directory(&self, id: DirectoryId) -> Result<Option<DirectoryEntry>> {
        Self::directory_row(&self.conn.lock(), id)
    }

    pub fn directories(&self) -> Result<Vec<DirectoryEntry>> {
        let conn = self.conn.lock();
        let mut stmt = conn.prepare(
            "SELECT d.id, d.path, d.enabled, d.created_at_ms,
                    (SELECT COUNT(*) FROM images i WHERE i.directory_id = d.id)
             FROM directories d ORDER BY d.id",
        )?;
        let rows = stmt
            .query_map([], Self::map_directory)?
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(rows)
    }

    pub fn set_directory_enabled(&self, id: DirectoryId, enabled: bool) -> Result<DirectoryEntry> {
        let conn = self.conn.lock();
        let n = conn.execute(
            "UPDATE directories SET enabled = ?1 WHERE id = ?2",
            params![i64::from(enabled), id.0],
        )?;
        if n == 0 {
            return Err(CatalogError::UnknownDirectory(id.0));
        }
        Self::directory_row(&conn, id)?.ok_or(CatalogError::UnknownDirectory(id.0))
    }

    /// Deletes the directory and, by cascade, its images. Returns the ids of
    /// the removed images so callers can drop their vectors.
    pub fn remove_directory(&self, id: DirectoryId) -> Result<Vec<ImageId>> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction()?;
        let ids = {
            let mut stmt = tx.prepare("SELECT id FROM images WHERE directory_id = ?1 ORDER BY id")?;
            let ids = stmt
                .query_map([id.0], |r| r.get::<_, i64>(0))?
                .collect::<std::result::Result<Vec<_>, _>>()?;
            ids
        };
        let n = tx.execute("DELETE FROM directories WHERE id = ?1", [id.0])?;
        if n == 0 {
            return Err(CatalogError::UnknownDirectory(id.0));
        }
        tx.commit()?;
        Ok(ids.into_iter().map(|i| ImageId(i as u64)).collect())
    }

    /// Inserts a new image or refreshes an existing one. A changed content
    /// hash resets every index state to pending.
    pub fn upsert_image(&self, c: &ImageCandidate) -> Result<(ImageRecord, UpsertChange)> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction()?;
        let dir_exists: bool = tx
            .query_row("SELECT 1 FROM directories WHERE id = ?1", [c.directory_id.0], |_| Ok(()))
            .optional()?
            .is_some();
        if !dir_exists {
            return Err(CatalogError::UnknownDirectory(c.directory_id.0));
        }
        let existing: Option<(i64, i64)> = tx
            .query_row(
                "SELECT id, content_hash FROM images WHERE directory_id = ?1 AND rel_path = ?2",
                params![c.directory_id.0, c.relative_path],
                |r| Ok((r.get(0)?, r.get(1)?)),
            )
            .optional()?;
        let (id, change) = match existing {
            None => {
                tx.execute(
                    "INSERT INTO images(directory_id, rel_path, content_hash, byte_size, mtime_ms)
                     VALUES (?1, ?2, ?3, ?4, ?5)",
                    params![
                        c.directory_id.0,
                        c.relative_path,
                        c.content_hash as i64,
                        c.byte_size as i64,
                        c.mtime_ms
                    ],
                )?;
                let id = tx.last_insert_rowid();
                tx.execute(
                    "INSERT INTO index_state(image_id, embedder, state)
                     SELECT ?1, name, 'pending' FROM embedders",
                    [id],
                )?;
                (id, UpsertChange::Inserted)
            }
            Some((id, old_hash)) => {
                tx.execute(
                    "UPDATE images SET content_hash = ?1, byte_size = ?2, mtime_ms = ?3 WHERE id = ?4",
                    params![c.content_hash as i64, c.byte_size as i64, c.mtime_ms, id],
                )?;
                if old_hash as u64 != c.content_hash {
                    tx.execute("DELETE FROM index_state WHERE image_id = ?1", [id])?;
                    tx.execute(
                        "INSERT INTO index_state(image_id, embedder, state)
                         SELECT ?1, name, 'pending' FROM embedders",
                        [id],
                    )?;
                    (id, UpsertChange::ContentChanged)
                } else {
                    (id, UpsertChange::Unchanged)
                }
            }
        };
        let record = Self::image_row(&tx, ImageId(id as u64))?.expect("row written above");
        tx.commit()?;
        Ok((record, change))
    }

    fn image_row(conn: &Connection, id: ImageId) -> Result<Option<ImageRecord>> {
        let base = conn
            .query_row(
                "SELECT id, directory_id, rel_path, content_hash, byte_size, mtime_ms
                 FROM images WHERE id = ?1",
                [id.0 as i64],
                Self::map_image,
            )
            .optional()?;
        let Some(mut record) = base else {
            return Ok(None);
        };
        record.index_state = Self::states(conn, id)?;
        Ok(Some(record))
    }

    fn map_image(r: &rusqlite::Row<'_>) -> rusqlite::Result<ImageRecord> {
        Ok(ImageRecord {
            id: ImageId(r.get::<_, i64>(0)? as u64),
            directory_id: DirectoryId(r.get(1)?),
            relative_path: r.get(2)?,
            content_hash: r.get::<_, i64>(3)? as u64,
            byte_size: r.get::<_, i64>(4)? as u64,
            mtime_ms: r.get(5)?,
            index_state: BTreeMap::new(),
        })
    }

    fn states(conn: &Connection, id: ImageId) -> Result<BTreeMap<String, IndexState>> {
        let mut stmt =
            conn.prepare_cached("SELECT embedder, state FROM index_state WHERE image_id = ?1")?;
        let rows = stmt
            .query_map([id.0 as i64], |r| {
                Ok((r.get::<_, String>(0)?, IndexState::parse(&r.get::<_, String>(1)?)))
            })?
            .collect::<std::result::Result<BTreeMap<_, _>, _>>()?;
        Ok(rows)
    }

    fn images_where(
        conn: &Connection,
        sql_tail: &str,
        params: impl rusqlite::Params,
    ) -> Result<Vec<ImageRecord>> {
        let sql = format!(
            "SELECT id, directory_id, rel_path, content_hash, byte_size, mtime_ms FROM images {sql_tail}"
        );
        let mut stmt = conn.prepare(&sql)?;
        let mut rows = stmt
            .query_map(params, Self::map_image)?
            .collect::<std::result::Result<Vec<_>, _>>()?;
        for r in &mut rows {
            r.index_state = Self::states(conn, r.id)?;
        }
        Ok(rows)
    }

    pub fn image(&self, id: ImageId) -> Result<Option<ImageRecord>> {
        Self::image_row(&self.conn.lock(), id)
    }

    pub fn image_by_path(&self, dir: DirectoryId, relative_path: &str) -> Result<Option<ImageRecord>> {
        let conn = self.conn.lock();
        let found = Self::images_where(
            &conn,
            "WHERE directory_id = ?1 AND rel_path = ?2",
            params![dir.0, relative_path],
        )?;
        Ok(found.into_iter().next())
    }

    /// Absolute path of an image on disk.
    pub fn image_path(&self, id: ImageId) -> Result<Option<PathBuf>> {
        let conn = self.conn.lock();
        Ok(conn
            .query_row(
                "SELECT d.path, i.rel_path FROM images i JOIN directories d ON d.id = i.directory_id
                 WHERE i.id = ?1",
                [id.0 as i64],
                |r| Ok(Path::new(&r.get::<_, String>(0)?).join(r.get::<_, String>(1)?)),
            )
            .optional()?)
    }

    pub fn images_in(&self, dir: DirectoryId) -> Result<Vec<ImageRecord>> {
        let conn = self.conn.lock();
        Self::images_where(&conn, "WHERE directory_id = ?1 ORDER BY id", [dir.0])
    }

    fn require_embedder(conn: &Connection, name: &str) -> Result<()> {
        let known = conn
            .query_row("SELECT 1 FROM embedders WHERE name = ?1", [name], |_| Ok(()))
            .optional()?
            .is_some();
        if known {
            Ok(())
        } else {
            Err(CatalogError::UnknownEmbedder(name.to_string()))
        }
    }

    /// Up to `limit` records pending for `embedder`, oldest first.
    pub fn list_pending(&self, embedder: &str, limit: usize) -> Result<Vec<ImageRecord>> {
        let conn = self.conn.lock();
        Self::require_embedder(&conn, embedder)?;
        Self::images_where(
            &conn,
            "WHERE id IN (SELECT image_id FROM index_state WHERE embedder = ?1 AND state = 'pending')
             ORDER BY id LIMIT ?2",
            params![embedder, limit as i64],
        )
    }

    /// Up to `limit` records of one directory pending for any embedder.
    pub fn list_pending_in_directory(&self, dir: DirectoryId, limit: usize) -> Result<Vec<ImageRecord>> {
        let conn = self.conn.lock();
        Self::images_where(
            &conn,
            "WHERE directory_id = ?1
               AND id IN (SELECT image_id FROM index_state WHERE state = 'pending')
             ORDER BY id LIMIT ?2",
            params![dir.0, limit as i64],
        )
    }

    pub fn set_state(&self, id: ImageId, embedder: &str, state: IndexState) -> Result<()> {
        let conn = self.conn.lock();
        Self::require_embedder(&conn, embedder)?;
        conn.execute(
            "UPDATE index_state SET state = ?1 WHERE image_id = ?2 AND embedder = ?3",
            params![state.as_str(), id.0 as i64, embedder],
        )?;
        Ok(())
    }

    /// Sets the state of every embedder entry of `id`.
    pub fn set_all_states(&self, id: ImageId, state: IndexState) -> Result<()> {
        self.conn.lock().execute(
            "UPDATE index_state SET state = ?1 WHERE image_id = ?2",
            params![state.as_str(), id.0 as i64],
        )?;
        Ok(())
    }

    /// Idempotent hard delete.
    pub fn remove_image(&self, id: ImageId) -> Result<()> {
        self.conn
            .lock()
            .execute("DELETE FROM images WHERE id = ?1", [id.0 as i64])?;
        Ok(())
    }

    pub fn image_count(&self) -> Result<u64> {
        let n: i64 = self
            .conn
            .lock()
            .query_row("SELECT COUNT(*) FROM images", [], |r| r.get(0))?;
        Ok(n as u64)
    }

    /// Ids of images indexed for `embedder`, ascending.
    pub fn indexed_ids(&self, embedder: &str) -> Result<Vec<ImageId>> {
        let conn = self.conn.lock();
        let mut stmt = conn.prepare(
            "SELECT image_id FROM index_state WHERE embedder = ?1 AND state = 'indexed' ORDER BY image_id",
        )?;
        let ids = stmt
            .query_map([embedder], |r| r.get::<_, i64>(0))?
            .map(|r| r.map(|i| ImageId(i as u64)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(ids)
    }

    pub fn progress(&self, dir: DirectoryId) -> Result<Progress> {
        let conn = self.conn.lock();
        let total: i64 = conn.query_row(
            "SELECT COUNT(*) FROM images WHERE directory_id = ?1",
            [dir.0],
            |r| r.get(0),
        )?;
        let done: Option<i64> = conn.query_row(
            "SELECT MIN(cnt) FROM (
                SELECT e.name,
                       (SELECT COUNT(*) FROM index_state s JOIN images i ON i.id = s.image_id
                         WHERE i.directory_id = ?1 AND s.embedder = e.name AND s.state != 'pending') AS cnt
                FROM embedders e)",
            [dir.0],
            |r| r.get(0),
        )?;
        Ok(Progress {
            done: done.unwrap_or(total) as u64,
            total: total as u64,
        })
    }

    pub fn export(&self, out: &mut impl Write) -> Result<()> {
        let mut lines = vec![ExportLine::Header {
            format: "needle-catalog".into(),
            version: 1,
        }];
        lines.extend(
            self.embedders()?
                .into_iter()
                .map(|name| ExportLine::Embedder { name }),
        );
        for d in self.directories()? {
            lines.push(ExportLine::Directory {
                id: d.id.0,
                path: d.path.to_string_lossy().into_owned(),
                enabled: d.enabled,
                created_at_ms: d.created_at_ms,
            });
        }
        let images = {
            let conn = self.conn.lock();
            Self::images_where(&conn, "ORDER BY id", [])?
        };
        for i in images {
            lines.push(ExportLine::Image {
                id: i.id.0,
                directory_id: i.directory_id.0,
                relative_path: i.relative_path,
                content_hash: format!("{:016x}", i.content_hash),
                byte_size: i.byte_size,
                mtime_ms: i.mtime_ms,
                index_state: i.index_state,
            });
        }
        for line in lines {
            serde_json::to_writer(&mut *out, &line).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn export_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.export(&mut buf)?;
        Ok(String::from_utf8(buf).expect("export is utf-8"))
    }

    /// Loads an export into this catalog, replacing its contents.
    pub fn import(&self, input: impl BufRead) -> Result<()> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction()?;
        tx.execute_batch("DELETE FROM images; DELETE FROM directories; DELETE FROM embedders;")?;
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| CatalogError::Import { line: n + 1, msg };
            let parsed: ExportLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            match parsed {
                ExportLine::Header { version, .. } if version != 1 => {
                    return Err(bad(format!("unsupported version {version}")));
                }
                ExportLine::Header { .. } => {}
                ExportLine::Embedder { name } => {
                    tx.execute("INSERT INTO embedders(name) VALUES (?1)", [name])?;
                }
                ExportLine::Directory {
                    id,
                    path,
                    enabled,
                    created_at_ms,
                } => {
                    tx.execute(
                        "INSERT INTO directories(id, path, enabled, created_at_ms) VALUES (?1, ?2, ?3, ?4)",
                        params![id, path, i64::from(enabled), created_at_ms],
                    )?;
                }
                ExportLine::Image {
                    id,
                    directory_id,
                    relative_path,
                    content_hash,
                    byte_size,
                    mtime_ms,
                    index_state,
                } => {
                    let hash = u64::from_str_radix(&content_hash, 16)
                        .map_err(|e| bad(format!("content_hash: {e}")))?;
                    tx.execute(
                        "INSERT INTO images(id, directory_id, rel_path, content_hash, byte_size, mtime_ms)
                         VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
                        params![id as i64, directory_id, relative_path, hash as i64, byte_size as i64, mtime_ms],
                    )?;
                    for (embedder, state) in index_state {
                        tx.execute(
                            "INSERT INTO index_state(image_id, embedder, state) VALUES (?1, ?2, ?3)",
                            params![id as i64, embedder, state.as_str()],
                        )?;
                    }
                }
            }
        }
        tx.commit()?;
        Ok(())
    }
}
