use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::Ordering;
use std::sync::mpsc::{channel, RecvTimeoutError};
use std::sync::{Arc, Weak};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::{IngestError, Inner};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WatchKind {
    Created,
    Modified,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WatchEvent {
    pub kind: WatchKind,
    pub path: PathBuf,
}

impl WatchEvent {
    /// Classifies a settled path by what is on disk now.
    pub fn settled(path: PathBuf, known: bool) -> Self {
        let kind = if !path.exists() {
            WatchKind::Deleted
        } else if known {
            WatchKind::Modified
        } else {
            WatchKind::Created
        };
        Self { kind, path }
    }
}

/// The notify callback only forwards paths; a separate thread waits until a
/// path has been quiet for the debounce window and then applies it.
pub(super) fn spawn(
    inner: Arc<Inner>,
) -> Result<(notify::RecommendedWatcher, JoinHandle<()>), IngestError> {
    let (tx, rx) = channel::<notify::Result<notify::Event>>();
    let watcher = notify::recommended_watcher(move |ev| {
        let _ = tx.send(ev);
    })?;
    let debounce = inner.config.debounce;
    let weak: Weak<Inner> = Arc::downgrade(&inner);
    drop(inner);
    let tick = (debounce / 5).clamp(Duration::from_millis(5), Duration::from_millis(50));
    let handle = std::thread::Builder::new()
        .name("needle-watch".into())
        .spawn(move || {
            let mut pending: HashMap<PathBuf, Instant> = HashMap::new();
            loop {
                match rx.recv_timeout(tick) {
                    Ok(Ok(event)) => {
                        let now = Instant::now();
                        for p in event.paths {
                            pending.insert(p, now);
                        }
                    }
                    Ok(Err(e)) => log::warn!("watch error: {e}"),
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => break,
                }
                let Some(inner) = weak.upgrade() else { break };
                if inner.shutdown.load(Ordering::SeqCst) {
                    break;
                }
                inner.pending_events.store(pending.len(), Ordering::SeqCst);
                let now = Instant::now();
                let mut due: Vec<PathBuf> = pending
                    .iter()
                    .filter(|(_, t)| now.duration_since(**t) >= debounce)
                    .map(|(p, _)| p.clone())
                    .collect();
                due.sort();
                for path in due {
                    let known = inner.is_known(&path);
                    let event = WatchEvent::settled(path.clone(), known);
                    if let Err(e) = inner.handle_watch_event(&event) {
                        log::warn!("handling {event:?} failed: {e}");
                    }
                    pending.remove(&path);
                    inner.pending_events.store(pending.len(), Ordering::SeqCst);
                }
            }
            if let Some(inner) = weak.upgrade() {
                inner.pending_events.store(0, Ordering::SeqCst);
            }
        })
        .expect("spawn watcher thread");
    Ok((watcher, handle))
}

impl Inner {
    fn is_known(&self, path: &std::path::Path) -> bool {
        let Ok(Some(dir)) = self.owning_directory(path) else {
            return false;
        };
        let Some(rel) = super::scan::relative_key(&dir.path, path) else {
            return false;
        };
        matches!(self.catalog.image_by_path(dir.id, &rel), Ok(Some(_)))
    }
}
