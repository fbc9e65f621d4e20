//! Rollout-level parallelism. Results always come back in input order, so
//! parallel and sequential runs produce identical outputs.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// `threads == 0` lets the pool pick one worker per core.
    Parallel {
        threads: usize,
    },
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel { threads: 0 }
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Maps thread count `1` to sequential and anything else to a pool.
    pub fn with_threads(threads: usize) -> Self {
        if threads == 1 {
            Execution::Sequential
        } else {
            Execution::Parallel { threads }
        }
    }

    pub fn is_parallel(&self) -> bool {
        cfg!(feature = "parallel") && matches!(self, Execution::Parallel { .. })
    }

    pub fn map<I, O, F>(&self, items: &[I], f: F) -> Vec<O>
    where
        I: Sync,
        O: Send,
        F: Fn(&I) -> O + Sync + Send,
    {
        match *self {
            Execution::Sequential => items.iter().map(f).collect(),
            Execution::Parallel { threads } => parallel_map(threads, items, f),
        }
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<I, O, F>(threads: usize, items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> O + Sync + Send,
{
    use rayon::prelude::*;
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<I, O, F>(_threads: usize, items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> O + Sync + Send,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let xs: Vec<u64> = (0..100).collect();
        let f = |x: &u64| x * x + 1;
        let seq = Execution::Sequential.map(&xs, f);
        let par = Execution::Parallel { threads: 4 }.map(&xs, f);
        assert_eq!(seq, par);
        assert_eq!(seq[7], 50);
    }

    #[test]
    fn thread_count_mapping() {
        assert_eq!(Execution::with_threads(1), Execution::Sequential);
        assert_eq!(
            Execution::with_threads(0),
            Execution::Parallel { threads: 0 }
        );
    }
}
