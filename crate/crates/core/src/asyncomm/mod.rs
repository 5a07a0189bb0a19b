//! Emulated one-sided communication: windows with passive lock/unlock epochs,
//! put/get/flush, collective fences, latency injection and per-rank timing.
//!
//! Ranks are threads of one process. Lock modes are bookkeeping only: window
//! consistency comes from a single-writer seqlock, so a reader never waits on
//! a writer's epoch.

mod latency;
mod payload;
mod seqlock;

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};

use thiserror::Error;

pub use latency::{Delay, LatencyModel};
pub use payload::{decode_payload, encode_payload, payload_size};
pub use seqlock::SeqBuffer;

use latency::LatencySampler;

pub const DEFAULT_FENCE_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CommError {
    #[error("rank {rank} out of range for {num_ranks} ranks")]
    RankOutOfRange { rank: usize, num_ranks: usize },
    #[error("window size must be positive (channel {channel})")]
    ZeroSize { channel: String },
    #[error("channel {0} already has a window")]
    DuplicateChannel(String),
    #[error("{op} by rank {rank} on {channel}: {reason}")]
    Epoch {
        op: &'static str,
        rank: usize,
        channel: String,
        reason: &'static str,
    },
    #[error("rank {rank} may not write {channel}, owned by rank {owner}")]
    WriterContract { channel: String, rank: usize, owner: usize },
    #[error("payload of {got} bytes for {channel}, window holds {expected}")]
    SizeMismatch { channel: String, expected: usize, got: usize },
    #[error("fence watchdog on rank {rank}: ranks {missing:?} missing after {waited:?}")]
    FenceTimeout {
        rank: usize,
        missing: Vec<usize>,
        waited: Duration,
    },
    #[error("malformed payload of {len} bytes")]
    Payload { len: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessMode {
    SharedRead,
    ExclusiveWrite,
}

const EPOCH_NONE: u8 = 0;
const EPOCH_SHARED: u8 = 1;
const EPOCH_EXCLUSIVE: u8 = 2;
/// Active-target epoch opened by a fence.
const EPOCH_FENCE: u8 = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CommStats {
    /// Time inside window operations, injected latency included.
    pub comm: Duration,
    /// Time blocked at barriers or polling for new data.
    pub wait: Duration,
    pub ops: u64,
}

#[derive(Debug, Default)]
struct RankCounters {
    comm_ns: AtomicU64,
    wait_ns: AtomicU64,
    ops: AtomicU64,
}

#[derive(Debug)]
struct BarrierState {
    generation: u64,
    arrived: Vec<bool>,
    count: usize,
}

/// The communicator: rank count, channel registry, latency and counters.
#[derive(Debug)]
pub struct Comm {
    num_ranks: usize,
    channels: Mutex<HashSet<String>>,
    latency: RwLock<Arc<LatencySampler>>,
    counters: Vec<RankCounters>,
    barrier: Mutex<BarrierState>,
    barrier_cv: Condvar,
    fence_timeout: RwLock<Duration>,
}

impl Comm {
    pub fn new(num_ranks: usize) -> Arc<Self> {
        assert!(num_ranks >= 1);
        Arc::new(Comm {
            num_ranks,
            channels: Mutex::new(HashSet::new()),
            latency: RwLock::new(Arc::new(LatencySampler::new(LatencyModel::zero(), num_ranks))),
            counters: (0..num_ranks).map(|_| RankCounters::default()).collect(),
            barrier: Mutex::new(BarrierState {
                generation: 0,
                arrived: vec![false; num_ranks],
                count: 0,
            }),
            barrier_cv: Condvar::new(),
            fence_timeout: RwLock::new(DEFAULT_FENCE_TIMEOUT),
        })
    }

    pub fn num_ranks(&self) -> usize {
        self.num_ranks
    }

    /// Replaces the latency model; later completions use it.
    pub fn inject_latency(&self, model: LatencyModel) {
        *self.latency.write().unwrap() = Arc::new(LatencySampler::new(model, self.num_ranks));
    }

    pub fn latency_model(&self) -> LatencyModel {
        self.latency.read().unwrap().model().clone()
    }

    pub fn set_fence_timeout(&self, timeout: Duration) {
        *self.fence_timeout.write().unwrap() = timeout;
    }

    fn check_rank(&self, rank: usize) -> Result<(), CommError> {
        if rank >= self.num_ranks {
            return Err(CommError::RankOutOfRange {
                rank,
                num_ranks: self.num_ranks,
            });
        }
        Ok(())
    }

    fn sample_delay(&self, rank: usize) -> Duration {
        let sampler = self.latency.read().unwrap().clone();
        sampler.sample(rank)
    }

    pub fn win_create(self: &Arc<Self>, channel: &str, owner: usize, size: usize) -> Result<Window, CommError> {
        self.check_rank(owner)?;
        if size == 0 {
            return Err(CommError::ZeroSize {
                channel: channel.to_string(),
            });
        }
        if !self.channels.lock().unwrap().insert(channel.to_string()) {
            return Err(CommError::DuplicateChannel(channel.to_string()));
        }
        Ok(Window {
            comm: self.clone(),
            channel: channel.to_string(),
            owner,
            size,
            buf: SeqBuffer::new(size.div_ceil(8)),
            epochs: (0..self.num_ranks).map(|_| AtomicU8::new(EPOCH_NONE)).collect(),
            pending: Mutex::new(Vec::new()),
        })
    }

    pub fn stats(&self, rank: usize) -> CommStats {
        let c = &self.counters[rank];
        CommStats {
            comm: Duration::from_nanos(c.comm_ns.load(Ordering::Relaxed)),
            wait: Duration::from_nanos(c.wait_ns.load(Ordering::Relaxed)),
            ops: c.ops.load(Ordering::Relaxed),
        }
    }

    pub fn record_comm(&self, rank: usize, d: Duration) {
        let c = &self.counters[rank];
        c.comm_ns.fetch_add(d.as_nanos() as u64, Ordering::Relaxed);
        c.ops.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_wait(&self, rank: usize, d: Duration) {
        self.counters[rank].wait_ns.fetch_add(d.as_nanos() as u64, Ordering::Relaxed);
    }

    /// Collective barrier over all ranks. Pending puts of `rank` on `windows`
    /// are completed first; on return every rank's earlier puts are visible
    /// and `windows` are open for put/get by `rank` until the next fence.
    pub fn fence(&self, rank: usize, windows: &[&Window]) -> Result<(), CommError> {
        self.check_rank(rank)?;
        let t0 = Instant::now();
        for w in windows {
            let state = w.epochs[rank].load(Ordering::Acquire);
            if state == EPOCH_SHARED || state == EPOCH_EXCLUSIVE {
                return Err(w.epoch_err("fence", rank, "passive epoch still open"));
            }
            if w.owner == rank {
                w.complete_pending();
            }
        }
        let delay = self.sample_delay(rank);
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
        let t1 = Instant::now();
        self.record_comm(rank, t1 - t0);
        let result = self.barrier_wait(rank);
        self.record_wait(rank, t1.elapsed());
        result?;
        for w in windows {
            w.epochs[rank].store(EPOCH_FENCE, Ordering::Release);
        }
        Ok(())
    }

    fn barrier_wait(&self, rank: usize) -> Result<(), CommError> {
        let timeout = *self.fence_timeout.read().unwrap();
        let start = Instant::now();
        let mut st = self.barrier.lock().unwrap();
        let generation = st.generation;
        st.arrived[rank] = true;
        st.count += 1;
        if st.count == self.num_ranks {
            st.generation += 1;
            st.count = 0;
            st.arrived.iter_mut().for_each(|a| *a = false);
            self.barrier_cv.notify_all();
            return Ok(());
        }
        loop {
            let waited = start.elapsed();
            if waited >= timeout {
                let missing = (0..self.num_ranks).filter(|&r| !st.arrived[r]).collect();
                st.arrived[rank] = false;
                st.count -= 1;
                return Err(CommError::FenceTimeout { rank, missing, waited });
            }
            let (guard, _) = self.barrier_cv.wait_timeout(st, timeout - waited).unwrap();
            st = guard;
            if st.generation != generation {
                return Ok(());
            }
        }
    }
}

/// Consistent copy of a window's payload.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub version: u64,
    pub data: Vec<u8>,
}

/// One-sided memory region with a single writer (its owner).
#[derive(Debug)]
pub struct Window {
    comm: Arc<Comm>,
    channel: String,
    owner: usize,
    size: usize,
    buf: SeqBuffer,
    epochs: Box<[AtomicU8]>,
    /// Owner puts awaiting completion: (deadline, words).
    pending: Mutex<Vec<(Instant, Vec<u64>)>>,
}

impl Window {
    pub fn channel(&self) -> &str {
        &self.channel
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Version of the published payload (even unless a write is in flight).
    pub fn version(&self) -> u64 {
        self.buf.version()
    }

    pub fn comm(&self) -> &Arc<Comm> {
        &self.comm
    }

    fn epoch_err(&self, op: &'static str, rank: usize, reason: &'static str) -> CommError {
        CommError::Epoch {
            op,
            rank,
            channel: self.channel.clone(),
            reason,
        }
    }

    fn epoch_state(&self, rank: usize) -> Result<u8, CommError> {
        self.comm.check_rank(rank)?;
        Ok(self.epochs[rank].load(Ordering::Acquire))
    }

    pub fn lock(&self, rank: usize, mode: AccessMode) -> Result<(), CommError> {
        self.comm.check_rank(rank)?;
        let target = match mode {
            AccessMode::SharedRead => EPOCH_SHARED,
            AccessMode::ExclusiveWrite => EPOCH_EXCLUSIVE,
        };
        self.epochs[rank]
            .compare_exchange(EPOCH_NONE, target, Ordering::AcqRel, Ordering::Acquire)
            .map(|_| ())
            .map_err(|_| self.epoch_err("lock", rank, "epoch already open"))
    }

    /// Closes the passive epoch, completing pending puts first.
    pub fn unlock(&self, rank: usize) -> Result<(), CommError> {
        let state = self.epoch_state(rank)?;
        if state != EPOCH_SHARED && state != EPOCH_EXCLUSIVE {
            return Err(self.epoch_err("unlock", rank, "no passive epoch open"));
        }
        if rank == self.owner {
            let t0 = Instant::now();
            if self.complete_pending() {
                self.comm.record_comm(rank, t0.elapsed());
            }
        }
        self.epochs[rank].store(EPOCH_NONE, Ordering::Release);
        Ok(())
    }

    pub fn put(&self, rank: usize, payload: &[u8]) -> Result<(), CommError> {
        let state = self.epoch_state(rank)?;
        if state == EPOCH_NONE {
            return Err(self.epoch_err("put", rank, "no open epoch"));
        }
        if state == EPOCH_SHARED {
            return Err(self.epoch_err("put", rank, "shared epoch is read-only"));
        }
        if rank != self.owner {
            return Err(CommError::WriterContract {
                channel: self.channel.clone(),
                rank,
                owner: self.owner,
            });
        }
        if payload.len() != self.size {
            return Err(CommError::SizeMismatch {
                channel: self.channel.clone(),
                expected: self.size,
                got: payload.len(),
            });
        }
        let t0 = Instant::now();
        let words = to_words(payload, self.buf.len());
        let delay = self.comm.sample_delay(rank);
        let mut pending = self.pending.lock().unwrap();
        if delay.is_zero() && pending.is_empty() {
            self.buf.write(&words);
        } else {
            pending.push((t0 + delay, words));
        }
        drop(pending);
        self.comm.record_comm(rank, t0.elapsed());
        Ok(())
    }

    /// Completes this rank's outstanding puts.
    pub fn flush(&self, rank: usize) -> Result<(), CommError> {
        let state = self.epoch_state(rank)?;
        if state == EPOCH_NONE {
            return Err(self.epoch_err("flush", rank, "no open epoch"));
        }
        if rank == self.owner {
            let t0 = Instant::now();
            if self.complete_pending() {
                self.comm.record_comm(rank, t0.elapsed());
            }
        }
        Ok(())
    }

    pub fn get(&self, rank: usize) -> Result<Snapshot, CommError> {
        let state = self.epoch_state(rank)?;
        if state == EPOCH_NONE {
            return Err(self.epoch_err("get", rank, "no open epoch"));
        }
        let t0 = Instant::now();
        let delay = self.comm.sample_delay(rank);
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
        let mut words = vec![0u64; self.buf.len()];
        let version = self.buf.read(&mut words);
        let mut data: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
        data.truncate(self.size);
        self.comm.record_comm(rank, t0.elapsed());
        Ok(Snapshot { version, data })
    }

    /// Publishes queued puts in order once their deadlines pass. Returns
    /// whether anything was pending.
    fn complete_pending(&self) -> bool {
        let mut pending = self.pending.lock().unwrap();
        if pending.is_empty() {
            return false;
        }
        for (deadline, words) in pending.drain(..) {
            let now = Instant::now();
            if deadline > now {
                std::thread::sleep(deadline - now);
            }
            self.buf.write(&words);
        }
        true
    }
}

fn to_words(bytes: &[u8], len: usize) -> Vec<u64> {
    let mut words = vec![0u64; len];
    for (w, chunk) in words.iter_mut().zip(bytes.chunks(8)) {
        let mut b = [0u8; 8];
        b[..chunk.len()].copy_from_slice(chunk);
        *w = u64::from_le_bytes(b);
    }
    words
}

/// One-byte window raised once by its owner to stop the other ranks.
#[derive(Debug)]
pub struct StopFlag {
    window: Window,
    raised: Mutex<bool>,
}

impl StopFlag {
    pub fn new(comm: &Arc<Comm>, channel: &str, owner: usize) -> Result<Self, CommError> {
        Ok(StopFlag {
            window: comm.win_create(channel, owner, 1)?,
            raised: Mutex::new(false),
        })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    /// Sets the flag; returns false if it was already set.
    pub fn raise(&self, rank: usize) -> Result<bool, CommError> {
        let mut raised = self.raised.lock().unwrap();
        if *raised {
            return Ok(false);
        }
        self.window.lock(rank, AccessMode::ExclusiveWrite)?;
        let res = self.window.put(rank, &[1]).and_then(|_| self.window.flush(rank));
        self.window.unlock(rank)?;
        res?;
        *raised = true;
        Ok(true)
    }

    pub fn is_raised(&self, rank: usize) -> Result<bool, CommError> {
        self.window.lock(rank, AccessMode::SharedRead)?;
        let snap = self.window.get(rank);
        self.window.unlock(rank)?;
        Ok(snap?.data[0] == 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    fn win(comm: &Arc<Comm>, name: &str, owner: usize, size: usize) -> Window {
        comm.win_create(name, owner, size).unwrap()
    }

    #[test]
    fn fresh_window_reads_zero() {
        let c = Comm::new(2);
        let w = win(&c, "a", 0, 16);
        w.lock(1, AccessMode::SharedRead).unwrap();
        let s = w.get(1).unwrap();
        w.unlock(1).unwrap();
        assert_eq!(s, Snapshot { version: 0, data: vec![0; 16] });
    }

    #[test]
    fn duplicate_and_zero_size_rejected() {
        let c = Comm::new(2);
        let _w = win(&c, "a", 0, 8);
        assert_eq!(c.win_create("a", 1, 8).unwrap_err(), CommError::DuplicateChannel("a".into()));
        assert!(matches!(c.win_create("b", 0, 0), Err(CommError::ZeroSize { .. })));
        assert!(matches!(c.win_create("c", 5, 8), Err(CommError::RankOutOfRange { .. })));
    }

    #[test]
    fn windows_are_isolated() {
        let c = Comm::new(1);
        let a = win(&c, "a", 0, 8);
        let b = win(&c, "b", 0, 8);
        a.lock(0, AccessMode::ExclusiveWrite).unwrap();
        a.put(0, &7u64.to_le_bytes()).unwrap();
        a.unlock(0).unwrap();
        b.lock(0, AccessMode::SharedRead).unwrap();
        assert_eq!(b.get(0).unwrap().version, 0);
        b.unlock(0).unwrap();
    }

    #[test]
    fn put_get_versions() {
        let c = Comm::new(2);
        let w = win(&c, "a", 0, 8);
        for i in 1..=5u64 {
            w.lock(0, AccessMode::ExclusiveWrite).unwrap();
            w.put(0, &i.to_le_bytes()).unwrap();
            w.unlock(0).unwrap();
        }
        w.lock(1, AccessMode::SharedRead).unwrap();
        let s = w.get(1).unwrap();
        w.unlock(1).unwrap();
        assert_eq!(s.version, 10);
        assert_eq!(s.data, 5u64.to_le_bytes());
    }

    #[test]
    fn epoch_contract_violations() {
        let c = Comm::new(2);
        let w = win(&c, "a", 0, 8);
        assert!(matches!(w.get(1), Err(CommError::Epoch { op: "get", .. })));
        assert!(matches!(w.put(0, &[0; 8]), Err(CommError::Epoch { op: "put", .. })));
        assert!(matches!(w.unlock(1), Err(CommError::Epoch { op: "unlock", .. })));
        assert!(matches!(w.flush(0), Err(CommError::Epoch { op: "flush", .. })));
        w.lock(1, AccessMode::SharedRead).unwrap();
        assert!(matches!(w.lock(1, AccessMode::SharedRead), Err(CommError::Epoch { op: "lock", .. })));
        assert!(matches!(w.put(1, &[0; 8]), Err(CommError::Epoch { op: "put", .. })));
        w.unlock(1).unwrap();
        w.lock(1, AccessMode::ExclusiveWrite).unwrap();
        assert!(matches!(w.put(1, &[0; 8]), Err(CommError::WriterContract { rank: 1, owner: 0, .. })));
        w.unlock(1).unwrap();
        w.lock(0, AccessMode::ExclusiveWrite).unwrap();
        assert!(matches!(w.put(0, &[0; 9]), Err(CommError::SizeMismatch { expected: 8, got: 9, .. })));
        w.unlock(0).unwrap();
    }

    #[test]
    fn shared_readers_proceed_together() {
        let c = Comm::new(3);
        let w = win(&c, "a", 0, 8);
        w.lock(1, AccessMode::SharedRead).unwrap();
        w.lock(2, AccessMode::SharedRead).unwrap();
        assert!(w.get(1).is_ok() && w.get(2).is_ok());
        w.unlock(1).unwrap();
        w.unlock(2).unwrap();
    }

    #[test]
    fn delayed_put_visible_after_flush() {
        let c = Comm::new(2);
        c.inject_latency(LatencyModel::zero().with_rank(0, Delay::fixed_ms(50.0)));
        let w = win(&c, "a", 0, 8);
        w.lock(0, AccessMode::ExclusiveWrite).unwrap();
        let t0 = Instant::now();
        w.put(0, &3u64.to_le_bytes()).unwrap();
        assert_eq!(w.version(), 0);
        w.flush(0).unwrap();
        assert!(t0.elapsed() >= Duration::from_millis(50));
        assert_eq!(w.version(), 2);
        let t1 = Instant::now();
        w.flush(0).unwrap();
        assert!(t1.elapsed() < Duration::from_millis(5));
        w.unlock(0).unwrap();
        assert!(c.stats(0).comm >= Duration::from_millis(50));
    }

    #[test]
    fn fixed_latency_accounts_per_operation() {
        let c = Comm::new(2);
        c.inject_latency(LatencyModel::zero().with_rank(1, Delay::fixed_ms(10.0)));
        let w = win(&c, "a", 0, 8);
        w.lock(1, AccessMode::SharedRead).unwrap();
        for _ in 0..5 {
            w.get(1).unwrap();
        }
        w.unlock(1).unwrap();
        let s = c.stats(1);
        assert_eq!(s.ops, 5);
        assert!(s.comm >= Duration::from_millis(50));
        assert!(s.comm < Duration::from_millis(500));
        assert_eq!(c.stats(0).comm, Duration::ZERO);
    }

    #[test]
    fn fence_publishes_across_ranks() {
        let c = Comm::new(2);
        let w = Arc::new(win(&c, "a", 0, 8));
        let (w2, c2) = (w.clone(), c.clone());
        let t = thread::spawn(move || {
            c2.fence(1, &[&w2]).unwrap();
            c2.fence(1, &[&w2]).unwrap();
            u64::from_le_bytes(w2.get(1).unwrap().data.try_into().unwrap())
        });
        c.fence(0, &[&w]).unwrap();
        w.put(0, &12u64.to_le_bytes()).unwrap();
        c.fence(0, &[&w]).unwrap();
        assert_eq!(t.join().unwrap(), 12);
    }

    #[test]
    fn single_rank_fence_returns() {
        let c = Comm::new(1);
        c.fence(0, &[]).unwrap();
    }

    #[test]
    fn fence_watchdog_names_missing_rank() {
        let c = Comm::new(3);
        c.set_fence_timeout(Duration::from_millis(100));
        let c2 = c.clone();
        let t = thread::spawn(move || c2.fence(1, &[]));
        let err = c.fence(0, &[]).unwrap_err();
        let err1 = t.join().unwrap().unwrap_err();
        for e in [err, err1] {
            match e {
                CommError::FenceTimeout { missing, .. } => assert!(missing.contains(&2)),
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn stop_flag_raises_once() {
        let c = Comm::new(2);
        let f = StopFlag::new(&c, "stop", 0).unwrap();
        assert!(!f.is_raised(1).unwrap());
        assert!(f.raise(0).unwrap());
        assert!(!f.raise(0).unwrap());
        assert!(f.is_raised(1).unwrap());
        assert_eq!(f.window().version(), 2);
    }
}
