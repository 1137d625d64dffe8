//! On-disk layout of one collection directory.
//!
//! ```text
//! segments.bin    append-only; per record: u64 id, dim x f32 (all little-endian)
//! tombstones.bin  append-only; per record: u64 id, u64 number of segment
//!                 records that existed when the id was removed
//! graph.snap      "NDLV1", u32 dim, u32 M, u32 efConstruction, u64 seed,
//!                 u32 efSearch, u8 metric (0 cosine, 1 l2),
//!                 u64 segment records covered, u64 tombstones covered,
//!                 u64 entry node (u64::MAX if none), u32 max level,
//!                 then per node: u64 id, u8 deleted, u8 layer count,
//!                 per layer: u32 n, n x u32 neighbour node index
//! ```
//!
//! The snapshot is rewritten atomically on flush and at compaction. On open
//! the graph is restored from the snapshot and any segment/tombstone records
//! written after it are replayed; if the snapshot does not match the logs the
//! graph is rebuilt from the segment file alone. Compaction stages its new
//! files under `compact/` and commits them with a marker file so a crash
//! mid-way is rolled forward on the next open.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use super::hnsw::Hnsw;
use super::{HnswParams, Metric, VecStoreError};

pub(crate) const MAGIC: &[u8; 5] = b"NDLV1";
const SEGMENTS: &str = "segments.bin";
const TOMBSTONES: &str = "tombstones.bin";
const SNAPSHOT: &str = "graph.snap";
const COMPACT_DIR: &str = "compact";
const COMPACT_MARKER: &str = "COMPACT_COMMIT";

pub(crate) struct Header {
    pub dim: usize,
    pub params: HnswParams,
    pub seed: u64,
}

pub(crate) struct CollectionFiles {
    dir: PathBuf,
    dim: usize,
    segments: File,
    tombstones: File,
    segment_records: u64,
    tombstone_records: u64,
}

enum LogEvent<'a> {
    Insert(u64, &'a [f32]),
    Remove(u64),
}

fn corrupt(msg: impl Into<String>) -> VecStoreError {
    VecStoreError::Corrupt(msg.into())
}

impl CollectionFiles {
    /// Initialises an empty collection directory.
    pub(crate) fn create(dir: &Path, graph: &Hnsw) -> Result<Self, VecStoreError> {
        fs::create_dir_all(dir)?;
        File::create(dir.join(SEGMENTS))?;
        File::create(dir.join(TOMBSTONES))?;
        let mut files = Self::open_logs(dir, graph.dim())?;
        files.write_snapshot(graph)?;
        Ok(files)
    }

    fn open_logs(dir: &Path, dim: usize) -> Result<Self, VecStoreError> {
        let open = |name: &str| {
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join(name))
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            dim,
            segments: open(SEGMENTS)?,
            tombstones: open(TOMBSTONES)?,
            segment_records: 0,
            tombstone_records: 0,
        })
    }

    fn segment_len(&self) -> usize {
        8 + 4 * self.dim
    }

    /// Opens an existing collection and restores its graph.
    pub(crate) fn open(dir: &Path) -> Result<(Self, Hnsw), VecStoreError> {
        if dir.join(COMPACT_MARKER).exists() {
            finish_compaction(dir)?;
        } else if dir.join(COMPACT_DIR).exists() {
            fs::remove_dir_all(dir.join(COMPACT_DIR))?;
        }

        let snap = fs::read(dir.join(SNAPSHOT))?;
        let mut reader = ByteReader::new(&snap);
        let header = read_header(&mut reader)?;
        let dim = header.dim;

        let mut files = Self::open_logs(dir, dim)?;
        let rec = files.segment_len();
        let seg_bytes = read_truncating(&dir.join(SEGMENTS), rec)?;
        let tomb_bytes = read_truncating(&dir.join(TOMBSTONES), 16)?;
        let seg_count = seg_bytes.len() / rec;
        let tomb_count = tomb_bytes.len() / 16;
        files.segment_records = seg_count as u64;
        files.tombstone_records = tomb_count as u64;

        let mut vectors = Vec::with_capacity(seg_count * dim);
        let mut seg_ids = Vec::with_capacity(seg_count);
        for chunk in seg_bytes.chunks_exact(rec) {
            seg_ids.push(u64::from_le_bytes(chunk[..8].try_into().unwrap()));
            vectors.extend(
                chunk[8..]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap())),
            );
        }
        let tombs: Vec<(u64, u64)> = tomb_bytes
            .chunks_exact(16)
            .map(|c| {
                (
                    u64::from_le_bytes(c[..8].try_into().unwrap()),
                    u64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect();

        let restored = read_topology(&mut reader, &header, &vectors, &seg_ids, seg_count, tomb_count);
        let (mut graph, seg_from, tomb_from) = match restored {
            Some(found) => found,
            None => {
                log::warn!("{}: stale graph snapshot, rebuilding", dir.display());
                (Hnsw::new(dim, header.params.clone(), header.seed), 0, 0)
            }
        };

        let events = merge_events(&seg_ids, &vectors, dim, &tombs, seg_from, tomb_from);
        for event in events {
            match event {
                LogEvent::Insert(id, v) => {
                    if !graph.contains(id) {
                        graph.insert(id, v);
                    }
                }
                LogEvent::Remove(id) => {
                    graph.remove(id);
                }
            }
        }
        Ok((files, graph))
    }

    pub(crate) fn append_segment(&mut self, id: u64, vector: &[f32]) -> Result<(), VecStoreError> {
        let mut buf = Vec::with_capacity(self.segment_len());
        buf.extend_from_slice(&id.to_le_bytes());
        for x in vector {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        self.segments.write_all(&buf)?;
        self.segment_records += 1;
        Ok(())
    }

    pub(crate) fn append_tombstone(&mut self, id: u64) -> Result<(), VecStoreError> {
        let mut buf = [0u8; 16];
        buf[..8].copy_from_slice(&id.to_le_bytes());
        buf[8..].copy_from_slice(&self.segment_records.to_le_bytes());
        self.tombstones.write_all(&buf)?;
        self.tombstone_records += 1;
        Ok(())
    }

    pub(crate) fn write_snapshot(&mut self, graph: &Hnsw) -> Result<(), VecStoreError> {
        self.segments.sync_data()?;
        self.tombstones.sync_data()?;
        let bytes = encode_snapshot(graph, self.segment_records, self.tombstone_records);
        write_atomic(&self.dir.join(SNAPSHOT), &bytes)
    }

    /// Replaces the logs and snapshot with the contents of a compacted graph.
    pub(crate) fn compact(&mut self, graph: &Hnsw) -> Result<(), VecStoreError> {
        let stage = self.dir.join(COMPACT_DIR);
        if stage.exists() {
            fs::remove_dir_all(&stage)?;
        }
        fs::create_dir_all(&stage)?;

        let mut seg = Vec::with_capacity(graph.live_count() * self.segment_len());
        let mut count = 0u64;
        for (id, v) in graph.live_entries() {
            seg.extend_from_slice(&id.to_le_bytes());
            for x in v {
                seg.extend_from_slice(&x.to_le_bytes());
            }
            count += 1;
        }
        write_synced(&stage.join(SEGMENTS), &seg)?;
        write_synced(&stage.join(TOMBSTONES), &[])?;
        write_synced(&stage.join(SNAPSHOT), &encode_snapshot(graph, count, 0))?;
        write_synced(&self.dir.join(COMPACT_MARKER), b"")?;

        finish_compaction(&self.dir)?;
        *self = Self::open_logs(&self.dir, self.dim)?;
        self.segment_records = count;
        Ok(())
    }
}

fn finish_compaction(dir: &Path) -> Result<(), VecStoreError> {
    let stage = dir.join(COMPACT_DIR);
    for name in [SEGMENTS, TOMBSTONES, SNAPSHOT] {
        let staged = stage.join(name);
        if staged.exists() {
            fs::rename(&staged, dir.join(name))?;
        }
    }
    if stage.exists() {
        fs::remove_dir_all(&stage)?;
    }
    fs::remove_file(dir.join(COMPACT_MARKER))?;
    Ok(())
}

fn merge_events<'a>(
    seg_ids: &[u64],
    vectors: &'a [f32],
    dim: usize,
    tombs: &[(u64, u64)],
    seg_from: usize,
    tomb_from: usize,
) -> Vec<LogEvent<'a>> {
    let mut out = Vec::new();
    let mut t = tomb_from;
    for i in seg_from..seg_ids.len() {
        while t < tombs.len() && tombs[t].1 <= i as u64 {
            out.push(LogEvent::Remove(tombs[t].0));
            t += 1;
        }
        out.push(LogEvent::Insert(seg_ids[i], &vectors[i * dim..(i + 1) * dim]));
    }
    out.extend(tombs[t..].iter().map(|&(id, _)| LogEvent::Remove(id)));
    out
}

fn read_header(r: &mut ByteReader<'_>) -> Result<Header, VecStoreError> {
    let magic = r.take(5).ok_or_else(|| corrupt("short snapshot"))?;
    if magic != MAGIC {
        return Err(corrupt("bad snapshot magic"));
    }
    let short = || corrupt("short snapshot header");
    let dim = r.u32().ok_or_else(short)? as usize;
    let m = r.u32().ok_or_else(short)? as usize;
    let ef_construction = r.u32().ok_or_else(short)? as usize;
    let seed = r.u64().ok_or_else(short)?;
    let ef_search = r.u32().ok_or_else(short)? as usize;
    let metric = match r.u8().ok_or_else(short)? {
        0 => Metric::Cosine,
        1 => Metric::L2,
        other => return Err(corrupt(format!("unknown metric tag {other}"))),
    };
    Ok(Header {
        dim,
        params: HnswParams {
            m,
            ef_construction,
            ef_search,
            metric,
        },
        seed,
    })
}

fn read_topology(
    r: &mut ByteReader<'_>,
    header: &Header,
    vectors: &[f32],
    seg_ids: &[u64],
    seg_count: usize,
    tomb_count: usize,
) -> Option<(Hnsw, usize, usize)> {
    let covered_segments = r.u64()? as usize;
    let covered_tombs = r.u64()? as usize;
    if covered_segments > seg_count || covered_tombs > tomb_count {
        return None;
    }
    let entry = match r.u64()? {
        u64::MAX => None,
        e => Some(u32::try_from(e).ok()?),
    };
    let max_level = r.u32()? as usize;
    let mut nodes = Vec::with_capacity(covered_segments);
    for idx in 0..covered_segments {
        let id = r.u64()?;
        if seg_ids[idx] != id {
            return None;
        }
        let deleted = r.u8()? != 0;
        let layers = r.u8()? as usize;
        let mut links = Vec::with_capacity(layers);
        for _ in 0..layers {
            let n = r.u32()? as usize;
            let mut list = Vec::with_capacity(n);
            for _ in 0..n {
                list.push(r.u32()?);
            }
            links.push(list);
        }
        nodes.push((id, deleted, links));
    }
    if !r.is_empty() {
        return None;
    }
    let graph = Hnsw::from_parts(
        header.dim,
        header.params.clone(),
        header.seed,
        vectors[..covered_segments * header.dim].to_vec(),
        nodes,
        entry,
        max_level,
    )?;
    Some((graph, covered_segments, covered_tombs))
}

fn encode_snapshot(graph: &Hnsw, segment_records: u64, tombstone_records: u64) -> Vec<u8> {
    let p = graph.params();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(graph.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(p.m as u32).to_le_bytes());
    out.extend_from_slice(&(p.ef_construction as u32).to_le_bytes());
    out.extend_from_slice(&graph.seed().to_le_bytes());
    out.extend_from_slice(&(p.ef_search as u32).to_le_bytes());
    out.push(match p.metric {
        Metric::Cosine => 0,
        Metric::L2 => 1,
    });
    out.extend_from_slice(&segment_records.to_le_bytes());
    out.extend_from_slice(&tombstone_records.to_le_bytes());
    out.extend_from_slice(&graph.entry().map_or(u64::MAX, u64::from).to_le_bytes());
    out.extend_from_slice(&(graph.max_level() as u32).to_le_bytes());
    for node in 0..graph.node_count() {
        let (id, deleted, links) = graph.node_parts(node);
        out.extend_from_slice(&id.to_le_bytes());
        out.push(u8::from(deleted));
        out.push(links.len() as u8);
        for list in links {
            out.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for n in list {
                out.extend_from_slice(&n.to_le_bytes());
            }
        }
    }
    out
}

/// Reads a record log, dropping (and truncating away) a torn trailing record.
fn read_truncating(path: &Path, record: usize) -> Result<Vec<u8>, VecStoreError> {
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut bytes)?;
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(bytes),
        Err(e) => return Err(e.into()),
    }
    let whole = bytes.len() / record * record;
    if whole != bytes.len() {
        log::warn!("{}: dropping torn trailing record", path.display());
        bytes.truncate(whole);
        OpenOptions::new().write(true).open(path)?.set_len(whole as u64)?;
    }
    Ok(bytes)
}

fn write_synced(path: &Path, bytes: &[u8]) -> Result<(), VecStoreError> {
    let mut f = File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), VecStoreError> {
    let tmp = path.with_extension("tmp");
    write_synced(&tmp, bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

struct ByteReader<'a> {
    buf: &'a [u8],
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.buf.len() < n {
            return None;
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Some(head)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}
