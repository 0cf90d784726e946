//! Peak-memory measurement: an opt-in counting allocator, with resident-set
//! sampling as the fallback when it is not installed.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::Serialize;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
static ACTIVE: AtomicBool = AtomicBool::new(false);

/// System allocator that tracks live bytes and their high-water mark.
///
/// Install it in a binary or test target with
/// `#[global_allocator] static A: TrackingAllocator = TrackingAllocator;`.
pub struct TrackingAllocator;

impl TrackingAllocator {
    /// Whether this allocator is serving allocations in this process.
    pub fn is_active() -> bool {
        ACTIVE.load(Ordering::Relaxed)
    }

    pub fn current() -> usize {
        CURRENT.load(Ordering::Relaxed)
    }

    pub fn peak() -> usize {
        PEAK.load(Ordering::Relaxed)
    }

    /// Restart high-water tracking from the current live size, which is
    /// returned.
    pub fn reset_peak() -> usize {
        let now = CURRENT.load(Ordering::Relaxed);
        PEAK.store(now, Ordering::Relaxed);
        now
    }

    #[inline]
    fn grew(bytes: usize) {
        let now = CURRENT.fetch_add(bytes, Ordering::Relaxed) + bytes;
        PEAK.fetch_max(now, Ordering::Relaxed);
        if !ACTIVE.load(Ordering::Relaxed) {
            ACTIVE.store(true, Ordering::Relaxed);
        }
    }
}

unsafe impl GlobalAlloc for TrackingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let ptr = System.alloc(layout);
        if !ptr.is_null() {
            Self::grew(layout.size());
        }
        ptr
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let ptr = System.alloc_zeroed(layout);
        if !ptr.is_null() {
            Self::grew(layout.size());
        }
        ptr
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let out = System.realloc(ptr, layout, new_size);
        if !out.is_null() {
            if new_size >= layout.size() {
                Self::grew(new_size - layout.size());
            } else {
                CURRENT.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryMetric {
    /// Heap high-water mark from [`TrackingAllocator`].
    AllocatorHighWater,
    /// Resident set size sampled every few milliseconds.
    SampledRss,
}

fn resident_bytes() -> usize {
    std::fs::read_to_string("/proc/self/statm")
        .ok()
        .and_then(|s| s.split_whitespace().nth(1)?.parse::<usize>().ok())
        .map_or(0, |pages| pages * 4096)
}

/// Measures how far memory use rises above its level at [`PeakProbe::start`].
pub struct PeakProbe {
    metric: MemoryMetric,
    baseline: usize,
    sampler: Option<(Arc<AtomicBool>, JoinHandle<usize>)>,
}

impl PeakProbe {
    pub fn start() -> Self {
        if TrackingAllocator::is_active() {
            let baseline = TrackingAllocator::reset_peak();
            return Self {
                metric: MemoryMetric::AllocatorHighWater,
                baseline,
                sampler: None,
            };
        }
        let baseline = resident_bytes();
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let handle = thread::spawn(move || {
            let mut peak = resident_bytes();
            while !flag.load(Ordering::Relaxed) {
                peak = peak.max(resident_bytes());
                thread::sleep(Duration::from_millis(2));
            }
            peak.max(resident_bytes())
        });
        Self {
            metric: MemoryMetric::SampledRss,
            baseline,
            sampler: Some((stop, handle)),
        }
    }

    pub fn metric(&self) -> MemoryMetric {
        self.metric
    }

    /// Peak bytes above the starting level.
    pub fn finish(self) -> usize {
        match self.sampler {
            None => TrackingAllocator::peak().saturating_sub(self.baseline),
            Some((stop, handle)) => {
                stop.store(true, Ordering::Relaxed);
                handle
                    .join()
                    .unwrap_or(self.baseline)
                    .saturating_sub(self.baseline)
            }
        }
    }
}
