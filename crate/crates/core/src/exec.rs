//! Sequential / data-parallel execution switch.
//!
//! Every data-parallel loop in the crate takes an [`Execution`]. When the
//! `parallel` feature is off, [`Execution::Parallel`] silently runs
//! sequentially, so results never depend on the feature set.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Order-preserving map over a slice.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    /// Order-preserving map over `0..n`.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }

    /// Map each item then fold the partial results with a commutative,
    /// associative `merge`.
    pub fn map_reduce<T, R, M, G, I>(self, items: &[T], map: M, identity: I, merge: G) -> R
    where
        T: Sync,
        R: Send,
        M: Fn(&T) -> R + Sync + Send,
        I: Fn() -> R + Sync + Send,
        G: Fn(R, R) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => items.par_iter().map(map).reduce(identity, merge),
            _ => items.iter().map(map).fold(identity(), merge),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_agree() {
        let xs: Vec<u64> = (0..1000).collect();
        for mode in [Execution::Sequential, Execution::Parallel] {
            assert_eq!(mode.map(&xs, |x| x * 2)[999], 1998);
            assert_eq!(mode.map_range(10, |i| i)[9], 9);
            assert_eq!(mode.map_reduce(&xs, |x| *x, || 0, |a, b| a + b), 499_500);
        }
    }
}
