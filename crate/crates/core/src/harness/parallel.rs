use std::thread;

/// Execution knobs shared by every harness entry point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Execution {
    /// Worker threads for per-instance work; 1 runs inline.
    pub jobs: usize,
    /// Forces one thread and leaves wall-clock times out of reports.
    pub deterministic: bool,
}

impl Default for Execution {
    fn default() -> Self {
        Self {
            jobs: 1,
            deterministic: false,
        }
    }
}

impl Execution {
    pub fn deterministic() -> Self {
        Self {
            jobs: 1,
            deterministic: true,
        }
    }

    pub fn threads(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.jobs.max(1)
        }
    }
}

/// `items.map(f)` over contiguous chunks on up to `jobs` threads. Results
/// keep input order.
pub fn par_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    let f = &f;
    thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                s.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(i, x)| f(c * chunk + i, x))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_kept_for_any_thread_count() {
        let xs: Vec<u64> = (0..37).collect();
        let want: Vec<u64> = xs.iter().map(|x| x * x + 1).collect();
        for jobs in [1, 2, 3, 8, 64] {
            assert_eq!(par_map(&xs, jobs, |i, x| x * x + i as u64 - x + 1), want);
        }
    }
}
