//! Counting semaphore bounding in-flight remote calls.

use parking_lot::{Condvar, Mutex};

#[derive(Debug)]
pub struct InFlight {
    cap: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    owner: &'a InFlight,
}

impl InFlight {
    pub fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock();
        while *used >= self.cap {
            self.freed.wait(&mut used);
        }
        *used += 1;
        Permit { owner: self }
    }

    pub fn in_use(&self) -> usize {
        *self.used.lock()
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.owner.used.lock() -= 1;
        self.owner.freed.notify_one();
    }
}
