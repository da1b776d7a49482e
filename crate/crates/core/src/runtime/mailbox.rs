use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use arc_swap::ArcSwapOption;

/// A published value with its sequence number and publish tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Stamped<T> {
    pub seq: u64,
    pub tick: u64,
    pub value: T,
}

/// Latest-value slot. Reads never block and always see the newest published
/// value; sequence numbers start at 1.
#[derive(Debug)]
pub struct Mailbox<T> {
    slot: ArcSwapOption<Stamped<T>>,
    seq: AtomicU64,
}

impl<T> Default for Mailbox<T> {
    fn default() -> Self {
        Self { slot: ArcSwapOption::empty(), seq: AtomicU64::new(0) }
    }
}

impl<T> Mailbox<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Publish from the single writer; returns the new sequence number.
    pub fn publish(&self, value: T, tick: u64) -> u64 {
        let seq = self.seq.fetch_add(1, Ordering::AcqRel) + 1;
        self.slot.store(Some(Arc::new(Stamped { seq, tick, value })));
        seq
    }

    pub fn read(&self) -> Option<Arc<Stamped<T>>> {
        self.slot.load_full()
    }

    /// Sequence number of the latest value, 0 before the first publish.
    pub fn seq(&self) -> u64 {
        self.read().map_or(0, |s| s.seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latest_wins() {
        let m = Mailbox::new();
        assert!(m.read().is_none());
        assert_eq!(m.publish("a", 3), 1);
        assert_eq!(m.publish("b", 3), 2);
        let s = m.read().unwrap();
        assert_eq!((s.seq, s.tick, s.value), (2, 3, "b"));
    }
}
