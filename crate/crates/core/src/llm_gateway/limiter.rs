use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

/// Admission control: at most `max_in_flight` concurrent calls, and
/// optionally a token bucket refilled at `rate_per_sec`.
#[derive(Debug)]
pub struct Limiter {
    max_in_flight: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
    bucket: Option<Mutex<Bucket>>,
}

#[derive(Debug)]
struct Bucket {
    rate_per_sec: f64,
    capacity: f64,
    tokens: f64,
    last: Instant,
}

impl Bucket {
    /// Take one token, or report how long until one is available.
    fn try_take(&mut self, now: Instant) -> Result<(), Duration> {
        let elapsed = now.saturating_duration_since(self.last).as_secs_f64();
        self.tokens = (self.tokens + elapsed * self.rate_per_sec).min(self.capacity);
        self.last = now;
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            Ok(())
        } else {
            Err(Duration::from_secs_f64(
                (1.0 - self.tokens) / self.rate_per_sec,
            ))
        }
    }
}

/// Releases its slot on drop.
pub struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.in_flight.lock().expect("limiter poisoned");
        *n -= 1;
        self.limiter.freed.notify_one();
    }
}

impl Limiter {
    pub fn new(max_in_flight: usize, rate_per_sec: Option<f64>) -> Self {
        let max_in_flight = max_in_flight.max(1);
        let bucket = rate_per_sec.filter(|r| *r > 0.0).map(|rate| {
            let capacity = rate.max(1.0);
            Mutex::new(Bucket {
                rate_per_sec: rate,
                capacity,
                tokens: capacity,
                last: Instant::now(),
            })
        });
        Self {
            max_in_flight,
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            bucket,
        }
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    /// Block until a slot (and a rate token, if limited) is available.
    pub fn acquire(&self) -> Permit<'_> {
        if let Some(bucket) = &self.bucket {
            loop {
                let wait = bucket
                    .lock()
                    .expect("limiter poisoned")
                    .try_take(Instant::now());
                match wait {
                    Ok(()) => break,
                    Err(d) => thread::sleep(d),
                }
            }
        }
        let mut n = self.in_flight.lock().expect("limiter poisoned");
        while *n >= self.max_in_flight {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n += 1;
        Permit { limiter: self }
    }
}
