use serde::{Deserialize, Serialize};

/// How batch loops are executed.
///
/// `Parallel` runs on the rayon pool when the `parallel` feature is on and
/// degrades to `Sequential` when it is off. Results are always returned in
/// input order, so the choice never changes outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// True when `Parallel` actually fans out in this build.
    pub const fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }

    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }

    pub fn map_indexed<R, F>(self, len: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..len).into_par_iter().map(f).collect()
            }
            _ => (0..len).map(f).collect(),
        }
    }

    /// Like [`Exec::map`] but bounded to `workers` threads.
    pub fn map_bounded<T, R, F>(self, workers: usize, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(not(feature = "parallel"))]
        let _ = workers;
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel if workers > 1 => {
                use rayon::prelude::*;
                match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                    Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
                    Err(err) => {
                        tracing::warn!(%err, "falling back to sequential execution");
                        items.iter().map(f).collect()
                    }
                }
            }
            _ => items.iter().map(f).collect(),
        }
    }
}
