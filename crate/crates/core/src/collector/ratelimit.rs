use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};

use crate::clock::Clock;

/// Sliding one-minute window shared by every worker hitting one engine.
#[derive(Debug)]
pub struct RateLimiter {
    per_minute: usize,
    window: Mutex<VecDeque<DateTime<Utc>>>,
}

const WINDOW: chrono::TimeDelta = chrono::TimeDelta::seconds(60);

impl RateLimiter {
    pub fn per_minute(n: u32) -> Self {
        Self {
            per_minute: n.max(1) as usize,
            window: Mutex::new(VecDeque::new()),
        }
    }

    /// Block (on `clock`) until a request may be sent, then record it.
    pub fn acquire(&self, clock: &dyn Clock) {
        loop {
            let wait = {
                let mut window = self.window.lock().unwrap();
                let now = clock.now();
                while window.front().is_some_and(|t| now - *t >= WINDOW) {
                    window.pop_front();
                }
                if window.len() < self.per_minute {
                    window.push_back(now);
                    return;
                }
                (window[0] + WINDOW) - now
            };
            clock.sleep(wait.to_std().unwrap_or(Duration::from_millis(1)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use chrono::TimeZone;

    #[test]
    fn never_more_than_limit_in_any_minute() {
        let clock = ManualClock::new(Utc.with_ymd_and_hms(2011, 5, 1, 0, 0, 0).unwrap());
        let limiter = RateLimiter::per_minute(5);
        let mut sent = Vec::new();
        for i in 0..23 {
            limiter.acquire(&clock);
            sent.push(clock.now());
            if i % 7 == 0 {
                clock.advance(Duration::from_secs(3));
            }
        }
        for (i, t) in sent.iter().enumerate() {
            let in_window = sent[i..].iter().filter(|s| **s - *t < WINDOW).count();
            assert!(in_window <= 5, "{in_window} requests within a minute of #{i}");
        }
        // 23 requests at 5/min need at least four full waits.
        assert!(sent[22] - sent[0] >= chrono::TimeDelta::seconds(240));
    }
}
