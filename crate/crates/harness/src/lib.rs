//! Experiment orchestration for the federated unlearning simulator:
//! configuration parsing, the client- and class-level benchmark pipelines,
//! and result persistence. The `fedunlearn` binary is a thin wrapper over
//! this crate.

pub mod config;
pub mod error;
pub mod pipeline;

/// Installs a global rayon pool sized from the `FU_THREADS` env var.
/// Defaults to the available cores; a no-op when the pool already exists
/// or the crate is built without the `parallel` feature.
pub fn init_thread_pool() {
    #[cfg(feature = "parallel")]
    {
        if let Ok(value) = std::env::var("FU_THREADS") {
            if let Ok(threads) = value.parse::<usize>() {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads.max(1))
                    .build_global();
            }
        }
    }
}
