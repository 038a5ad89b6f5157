//! Shared immutable payload buffers and the per-topic slot arena.
//!
//! A slot is an `Arc<Vec<u8>>` owned by the arena. Loaning a slot requires
//! that the arena holds the only reference; once published, every sample
//! handed to a subscriber clones the same `Arc`. The strong count minus one is
//! therefore the slot's reader count, and the slot is reused only after it
//! drops back to zero.

use std::fmt;
use std::ops::{Deref, DerefMut};
use std::sync::{Arc, Mutex};

use super::MiddlewareError;

pub const DEFAULT_SLOT_SIZE: usize = 8 * 1024 * 1024;
pub const DEFAULT_MAX_SLOTS: usize = 65_536;

/// Immutable, shareable payload buffer.
#[derive(Clone, PartialEq, Eq)]
pub struct Payload {
    buf: Arc<Vec<u8>>,
}

impl Payload {
    pub fn from_vec(v: Vec<u8>) -> Self {
        Self { buf: Arc::new(v) }
    }

    pub fn copy_from(bytes: &[u8]) -> Self {
        Self::from_vec(bytes.to_vec())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.buf
    }

    /// Address of the underlying buffer; equal ids mean the same bytes in
    /// memory, not merely equal contents.
    pub fn buffer_id(&self) -> usize {
        Arc::as_ptr(&self.buf) as usize
    }

    pub fn same_buffer(&self, other: &Payload) -> bool {
        Arc::ptr_eq(&self.buf, &other.buf)
    }

    /// Number of live handles to this buffer (including the arena's own).
    pub fn handle_count(&self) -> usize {
        Arc::strong_count(&self.buf)
    }
}

impl From<Vec<u8>> for Payload {
    fn from(v: Vec<u8>) -> Self {
        Self::from_vec(v)
    }
}

impl Deref for Payload {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        &self.buf
    }
}

impl AsRef<[u8]> for Payload {
    fn as_ref(&self) -> &[u8] {
        &self.buf
    }
}

impl fmt::Debug for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Payload")
            .field("len", &self.buf.len())
            .field("buffer_id", &format_args!("{:#x}", self.buffer_id()))
            .finish()
    }
}

#[derive(Debug)]
struct Slots {
    slots: Vec<Option<Arc<Vec<u8>>>>,
    cursor: usize,
}

/// Ring of fixed-capacity slots backing one topic.
#[derive(Debug)]
pub struct SlotArena {
    slot_size: usize,
    max_slots: usize,
    inner: Mutex<Slots>,
}

impl SlotArena {
    pub fn new(slot_size: usize, max_slots: usize) -> Arc<Self> {
        Arc::new(Self {
            slot_size,
            max_slots,
            inner: Mutex::new(Slots {
                slots: Vec::new(),
                cursor: 0,
            }),
        })
    }

    pub fn slot_size(&self) -> usize {
        self.slot_size
    }

    /// Reserves a free slot sized to `len` bytes.
    ///
    /// The loaned bytes are whatever the slot last held; writers overwrite
    /// them before publishing.
    pub fn loan(self: &Arc<Self>, len: usize) -> Result<Loan, MiddlewareError> {
        if len > self.slot_size {
            return Err(MiddlewareError::PayloadTooLarge {
                len,
                limit: self.slot_size,
            });
        }
        let mut inner = self.inner.lock().unwrap();
        let n = inner.slots.len();
        let mut found = None;
        for k in 0..n {
            let i = (inner.cursor + k) % n;
            let free = match &inner.slots[i] {
                Some(a) => Arc::strong_count(a) == 1,
                None => false,
            };
            if free {
                found = Some(i);
                break;
            }
        }
        let (index, buf) = match found {
            Some(i) => (i, inner.slots[i].take().unwrap()),
            None => {
                if n >= self.max_slots {
                    return Err(MiddlewareError::ArenaExhausted(self.max_slots));
                }
                inner.slots.push(None);
                (n, Arc::new(Vec::new()))
            }
        };
        inner.cursor = (index + 1) % inner.slots.len();
        drop(inner);
        let mut loan = Loan {
            arena: Arc::clone(self),
            index,
            buf: Some(buf),
        };
        let v = Arc::get_mut(loan.buf.as_mut().unwrap()).expect("loaned slot is uniquely owned");
        v.resize(len, 0);
        Ok(loan)
    }

    fn commit(&self, index: usize, buf: Arc<Vec<u8>>) -> Payload {
        let mut inner = self.inner.lock().unwrap();
        inner.slots[index] = Some(Arc::clone(&buf));
        Payload { buf }
    }

    fn give_back(&self, index: usize, buf: Arc<Vec<u8>>) {
        let mut inner = self.inner.lock().unwrap();
        inner.slots[index] = Some(buf);
    }

    pub fn slot_count(&self) -> usize {
        self.inner.lock().unwrap().slots.len()
    }

    /// Reader count per slot (handles held outside the arena).
    pub fn reader_counts(&self) -> Vec<usize> {
        self.inner
            .lock()
            .unwrap()
            .slots
            .iter()
            .map(|s| s.as_ref().map_or(0, |a| Arc::strong_count(a) - 1))
            .collect()
    }

    pub fn slots_in_use(&self) -> usize {
        self.reader_counts().iter().filter(|&&c| c > 0).count()
    }

    /// Slot index holding `payload`, if it came from this arena.
    pub fn slot_of(&self, payload: &Payload) -> Option<usize> {
        self.inner
            .lock()
            .unwrap()
            .slots
            .iter()
            .position(|s| s.as_ref().is_some_and(|a| Arc::ptr_eq(a, &payload.buf)))
    }
}

/// A writable slot. Returned to the arena on drop unless published.
pub struct Loan {
    arena: Arc<SlotArena>,
    index: usize,
    buf: Option<Arc<Vec<u8>>>,
}

impl Loan {
    pub fn slot_index(&self) -> usize {
        self.index
    }

    pub(crate) fn into_payload(mut self) -> Payload {
        let buf = self.buf.take().unwrap();
        self.arena.commit(self.index, buf)
    }
}

impl Deref for Loan {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        self.buf.as_ref().unwrap()
    }
}

impl DerefMut for Loan {
    fn deref_mut(&mut self) -> &mut [u8] {
        Arc::get_mut(self.buf.as_mut().unwrap()).expect("loan is unique")
    }
}

impl Drop for Loan {
    fn drop(&mut self) {
        if let Some(buf) = self.buf.take() {
            self.arena.give_back(self.index, buf);
        }
    }
}

impl fmt::Debug for Loan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Loan")
            .field("slot", &self.index)
            .field("len", &self.len())
            .finish()
    }
}
