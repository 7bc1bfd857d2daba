//! Probability densities, special functions, and seeded sampling streams.
//!
//! Everything here is pure and value-semantic: an [`RngStream`] can be cloned
//! or moved across threads, and two streams with distinct ids never share
//! state. All density arithmetic is done in log space.

mod dist;
mod rng;
mod special;

pub use dist::{kl_normal, standard_normal, DistFamily};
pub use rng::RngStream;
pub use special::{digamma, ln_gamma, logsumexp, sigmoid};
