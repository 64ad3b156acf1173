use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::LockManager;

/// Background thread calling [`LockManager::expire_deadlines`] on a fixed
/// period. Stops when dropped.
#[derive(Debug)]
pub struct Sweeper {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<u64>>,
}

impl Sweeper {
    pub fn spawn(locks: Arc<LockManager>, period: Duration) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = std::thread::Builder::new()
            .name("lock-sweeper".into())
            .spawn(move || {
                let mut expired = 0u64;
                while !flag.load(Ordering::Relaxed) {
                    expired += locks.expire_deadlines(locks.clock().now()).len() as u64;
                    std::thread::sleep(period);
                }
                expired
            })
            .expect("spawn sweeper thread");
        Sweeper {
            stop,
            handle: Some(handle),
        }
    }

    /// Stop the thread and return how many grants it expired.
    pub fn stop(mut self) -> u64 {
        self.shutdown()
    }

    fn shutdown(&mut self) -> u64 {
        self.stop.store(true, Ordering::Relaxed);
        self.handle.take().map_or(0, |h| h.join().unwrap_or(0))
    }
}

impl Drop for Sweeper {
    fn drop(&mut self) {
        self.shutdown();
    }
}
