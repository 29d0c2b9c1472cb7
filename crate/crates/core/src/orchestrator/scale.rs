use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalePolicy {
    /// Messages per second one worker handles. `None` until measured.
    pub per_worker_rate: Option<f64>,
    /// Seconds within which the outstanding queue should be delivered.
    pub delivery_window: f64,
    pub min_workers: usize,
    pub max_workers: usize,
}

impl Default for ScalePolicy {
    fn default() -> Self {
        ScalePolicy {
            per_worker_rate: None,
            delivery_window: 3600.0,
            min_workers: 0,
            max_workers: 8,
        }
    }
}

impl ScalePolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_workers == 0 {
            return Err("max_workers must be at least 1".into());
        }
        if self.min_workers > self.max_workers {
            return Err("min_workers exceeds max_workers".into());
        }
        if self.delivery_window.is_nan() || self.delivery_window <= 0.0 {
            return Err("delivery window must be positive".into());
        }
        if let Some(r) = self.per_worker_rate {
            if r.is_nan() || r <= 0.0 {
                return Err("per-worker rate must be positive".into());
            }
        }
        Ok(())
    }
}

/// `clamp(ceil(depth / (rate * window)), min, max)`, and zero for an empty
/// queue. Without a rate estimate yet, one worker (or `min_workers`) runs.
pub fn autoscale_tick(policy: &ScalePolicy, queue_depth: usize, _current_workers: usize) -> usize {
    if queue_depth == 0 {
        return 0;
    }
    let floor = policy.min_workers;
    let want = match policy.per_worker_rate {
        Some(rate) => {
            let per_worker = rate * policy.delivery_window;
            let raw = (queue_depth as f64 / per_worker).ceil();
            if raw.is_finite() && raw < usize::MAX as f64 {
                raw as usize
            } else {
                usize::MAX
            }
        }
        None => 1,
    };
    want.clamp(floor, policy.max_workers)
}

/// Warm-up estimate of per-worker throughput from the first items processed.
#[derive(Debug)]
pub struct RateEstimator {
    warmup: usize,
    state: Mutex<(usize, Duration)>,
}

impl RateEstimator {
    pub fn new(warmup: usize) -> Self {
        RateEstimator {
            warmup: warmup.max(1),
            state: Mutex::new((0, Duration::ZERO)),
        }
    }

    pub fn record(&self, busy: Duration) {
        let mut s = self.state.lock().unwrap();
        if s.0 < self.warmup {
            s.0 += 1;
            s.1 += busy;
        }
    }

    /// Items per second per worker, once the warm-up sample is complete.
    pub fn rate(&self) -> Option<f64> {
        let s = self.state.lock().unwrap();
        (s.0 >= self.warmup).then(|| s.0 as f64 / s.1.as_secs_f64().max(1e-9))
    }
}
