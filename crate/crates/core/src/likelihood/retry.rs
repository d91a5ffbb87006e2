use std::time::Duration;

/// Bounded exponential backoff: `retries` extra attempts after the first,
/// sleeping `initial`, `2 * initial`, `4 * initial`, ... in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub initial: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { retries: 3, initial: Duration::from_millis(250) }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { retries: 0, initial: Duration::ZERO }
    }

    /// Runs `op` until it succeeds, returns a non-retryable error, or the
    /// attempts are exhausted. Returns the last error and the attempt count.
    pub fn run<T, E>(
        &self,
        mut op: impl FnMut() -> Result<T, E>,
        retryable: impl Fn(&E) -> bool,
    ) -> Result<T, (E, u32)> {
        let mut delay = self.initial;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if attempt <= self.retries && retryable(&e) => {
                    log::warn!("attempt {attempt} failed; retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                Err(e) => return Err((e, attempt)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gives_up_after_retries() {
        let policy = RetryPolicy { retries: 3, initial: Duration::from_millis(1) };
        let mut calls = 0;
        let out: Result<(), _> = policy.run(
            || {
                calls += 1;
                Err::<(), _>("boom")
            },
            |_| true,
        );
        assert_eq!(calls, 4);
        assert_eq!(out.unwrap_err().1, 4);
    }

    #[test]
    fn succeeds_midway() {
        let policy = RetryPolicy { retries: 3, initial: Duration::from_millis(1) };
        let mut calls = 0;
        let out = policy.run(
            || {
                calls += 1;
                if calls < 3 { Err("transient") } else { Ok(calls) }
            },
            |_| true,
        );
        assert_eq!(out.unwrap(), 3);
    }

    #[test]
    fn non_retryable_stops_immediately() {
        let policy = RetryPolicy::default();
        let mut calls = 0;
        let out: Result<(), _> = policy.run(
            || {
                calls += 1;
                Err::<(), _>("fatal")
            },
            |_| false,
        );
        assert_eq!(calls, 1);
        assert!(out.is_err());
    }
}
