use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde::Serialize;

use crate::catalog::{now_ms, DirectoryId};

/// User-triggered directory adds.
pub const PRIORITY_USER: u8 = 0;
pub const PRIORITY_WATCH: u8 = 1;
pub const PRIORITY_RECONCILE: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IndexTask {
    pub directory: DirectoryId,
    pub priority: u8,
    pub enqueued_at_ms: i64,
    seq: u64,
}

#[derive(Default)]
struct State {
    heap: BinaryHeap<Reverse<(u8, u64, i64)>>,
    /// Live queued task per directory; heap entries not matching are stale.
    queued: HashMap<i64, IndexTask>,
    /// Directories being worked on, with the best priority requested while
    /// active.
    active: HashMap<i64, Option<u8>>,
    seq: u64,
    closed: bool,
}

/// Directory tasks ordered by priority, then enqueue order. A directory is
/// queued at most once; re-enqueueing it keeps the better priority.
#[derive(Default)]
pub struct TaskQueue {
    state: Mutex<State>,
    ready: Condvar,
}

impl State {
    fn insert(&mut self, task: IndexTask) {
        self.heap.push(Reverse((task.priority, task.seq, task.directory.0)));
        self.queued.insert(task.directory.0, task);
    }

    fn head(&mut self) -> Option<IndexTask> {
        while let Some(Reverse((p, seq, dir))) = self.heap.peek().copied() {
            match self.queued.get(&dir) {
                Some(t) if t.priority == p && t.seq == seq => return Some(*t),
                _ => {
                    self.heap.pop();
                }
            }
        }
        None
    }
}

impl TaskQueue {
    pub fn push(&self, directory: DirectoryId, priority: u8) {
        let mut s = self.state.lock();
        if s.closed {
            return;
        }
        if let Some(dirty) = s.active.get_mut(&directory.0) {
            *dirty = Some(dirty.map_or(priority, |p| p.min(priority)));
            return;
        }
        if let Some(existing) = s.queued.get(&directory.0) {
            if existing.priority <= priority {
                return;
            }
        }
        s.seq += 1;
        let task = IndexTask {
            directory,
            priority,
            enqueued_at_ms: now_ms(),
            seq: s.seq,
        };
        s.insert(task);
        self.ready.notify_one();
    }

    /// Blocks until a task is available; `None` once closed.
    pub fn pop(&self) -> Option<IndexTask> {
        let mut s = self.state.lock();
        loop {
            if s.closed {
                return None;
            }
            if let Some(task) = s.head() {
                s.heap.pop();
                s.queued.remove(&task.directory.0);
                s.active.insert(task.directory.0, None);
                return Some(task);
            }
            self.ready.wait(&mut s);
        }
    }

    pub fn pop_timeout(&self, timeout: Duration) -> Option<IndexTask> {
        let mut s = self.state.lock();
        if s.closed {
            return None;
        }
        if s.head().is_none() {
            self.ready.wait_for(&mut s, timeout);
        }
        let task = s.head()?;
        s.heap.pop();
        s.queued.remove(&task.directory.0);
        s.active.insert(task.directory.0, None);
        Some(task)
    }

    /// Whether a queued task outranks one of `priority`.
    pub fn should_yield(&self, priority: u8) -> bool {
        self.state.lock().head().is_some_and(|t| t.priority < priority)
    }

    /// Returns an active task to the queue in its original position.
    pub fn requeue(&self, task: IndexTask) {
        let mut s = self.state.lock();
        let dirty = s.active.remove(&task.directory.0).flatten();
        if s.closed {
            return;
        }
        let priority = dirty.map_or(task.priority, |p| p.min(task.priority));
        s.insert(IndexTask { priority, ..task });
        self.ready.notify_one();
    }

    /// Marks an active task done, re-queueing it if pushed meanwhile.
    pub fn finish(&self, task: IndexTask) {
        let dirty = self.state.lock().active.remove(&task.directory.0).flatten();
        if let Some(p) = dirty {
            self.push(task.directory, p);
        }
    }

    /// Drops any queued task of `directory` and forgets pushes made while it
    /// was active.
    pub fn remove(&self, directory: DirectoryId) {
        let mut s = self.state.lock();
        s.queued.remove(&directory.0);
        if let Some(dirty) = s.active.get_mut(&directory.0) {
            *dirty = None;
        }
    }

    pub fn close(&self) {
        self.state.lock().closed = true;
        self.ready.notify_all();
    }

    pub fn is_idle(&self) -> bool {
        let s = self.state.lock();
        s.queued.is_empty() && s.active.is_empty()
    }

    /// Queued tasks in pop order.
    pub fn snapshot(&self) -> Vec<IndexTask> {
        let s = self.state.lock();
        let mut tasks: Vec<IndexTask> = s.queued.values().copied().collect();
        tasks.sort_by_key(|t| (t.priority, t.seq));
        tasks
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: DirectoryId = DirectoryId(1);
    const B: DirectoryId = DirectoryId(2);
    const C: DirectoryId = DirectoryId(3);

    #[test]
    fn priority_then_fifo() {
        let q = TaskQueue::default();
        q.push(A, 2);
        q.push(B, 1);
        q.push(C, 1);
        let order: Vec<_> = (0..3).map(|_| q.pop().unwrap().directory).collect();
        assert_eq!(order, [B, C, A]);
    }

    #[test]
    fn one_task_per_directory_keeps_best_priority() {
        let q = TaskQueue::default();
        q.push(A, 2);
        q.push(B, 1);
        q.push(A, 0);
        q.push(A, 2);
        assert_eq!(q.snapshot().len(), 2);
        assert_eq!(q.pop().unwrap().directory, A);
        assert_eq!(q.pop().unwrap().directory, B);
        assert!(q.pop_timeout(Duration::from_millis(1)).is_none());
    }

    #[test]
    fn push_while_active_reruns_after_finish() {
        let q = TaskQueue::default();
        q.push(A, 1);
        let t = q.pop().unwrap();
        q.push(A, 1);
        assert!(q.snapshot().is_empty());
        q.finish(t);
        assert_eq!(q.snapshot()[0].directory, A);
    }

    #[test]
    fn higher_priority_arrival_preempts_at_batch_boundary() {
        let q = TaskQueue::default();
        q.push(A, PRIORITY_RECONCILE);
        let running = q.pop().unwrap();
        assert!(!q.should_yield(running.priority));
        q.push(B, PRIORITY_USER);
        assert!(q.should_yield(running.priority));
        q.requeue(running);
        assert_eq!(q.pop().unwrap().directory, B);
        assert_eq!(q.pop().unwrap().directory, A);
    }

    #[test]
    fn removed_and_closed() {
        let q = TaskQueue::default();
        q.push(A, 1);
        q.remove(A);
        assert!(q.is_idle());
        q.close();
        assert!(q.pop().is_none());
    }
}
