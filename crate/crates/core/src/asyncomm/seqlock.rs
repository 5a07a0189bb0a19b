use std::sync::atomic::{fence, AtomicU64, Ordering};

/// Single-writer versioned buffer. The version is odd while a write is in
/// flight; readers retry until they see the same even version on both sides
/// of their copy.
#[derive(Debug)]
pub struct SeqBuffer {
    seq: AtomicU64,
    words: Box<[AtomicU64]>,
}

impl SeqBuffer {
    pub fn new(len: usize) -> Self {
        SeqBuffer {
            seq: AtomicU64::new(0),
            words: (0..len).map(|_| AtomicU64::new(0)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.seq.load(Ordering::Acquire)
    }

    /// Caller guarantees no concurrent `write`.
    pub fn write(&self, data: &[u64]) {
        assert_eq!(data.len(), self.words.len());
        let v = self.seq.load(Ordering::Relaxed);
        debug_assert!(v % 2 == 0);
        self.seq.store(v + 1, Ordering::Relaxed);
        fence(Ordering::Release);
        for (w, &d) in self.words.iter().zip(data) {
            w.store(d, Ordering::Relaxed);
        }
        self.seq.store(v + 2, Ordering::Release);
    }

    /// Consistent copy into `out`; returns its (even) version.
    pub fn read(&self, out: &mut [u64]) -> u64 {
        assert_eq!(out.len(), self.words.len());
        let mut spins = 0u32;
        loop {
            let v1 = self.seq.load(Ordering::Acquire);
            if v1 % 2 == 0 {
                for (o, w) in out.iter_mut().zip(self.words.iter()) {
                    *o = w.load(Ordering::Relaxed);
                }
                fence(Ordering::Acquire);
                if self.seq.load(Ordering::Relaxed) == v1 {
                    return v1;
                }
            }
            spins += 1;
            if spins % 64 == 0 {
                std::thread::yield_now();
            } else {
                std::hint::spin_loop();
            }
        }
    }
}
