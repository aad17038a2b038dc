//! Query-by-example keyword spotting with a fusable convolutional embedding
//! model and a one-pass fast search scheme.
//!
//! The pipeline: log-mel filterbank frontend -> multi-branch convolutional
//! encoder (fusable to a single-branch deploy form) -> attentive-statistics
//! embedding head trained with additive-margin softmax -> sliding-window
//! cosine search over long audio, either window-by-window (basic) or by
//! running the encoder once and sliding on the hidden map (fast), followed by
//! T-norm, 1-D non-maximum suppression and cross-word competition.
//!
//! See the `examples/` directory for one runnable walkthrough per capability.

pub mod bench;
pub mod config;
pub mod encoder;
pub mod error;
pub mod features;
pub mod head;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod search;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Environment variable capping the rayon worker count used for window
/// scoring. Unset or invalid values fall back to the rayon default.
pub const THREADS_ENV: &str = "SEPSPOT_THREADS";

/// Build a rayon pool honoring `SEPSPOT_THREADS`, or with an explicit
/// override when `workers` is `Some`.
pub fn thread_pool(workers: Option<usize>) -> rayon::ThreadPool {
    let n = workers.or_else(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0)
    });
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = n {
        builder = builder.num_threads(n);
    }
    builder.build().expect("failed to build worker pool")
}
