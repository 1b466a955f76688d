//! Core library for architecture search over message-passing graph networks.
//!
//! Layered bottom-up:
//!
//! * [`tensor`]: dense f64 tensors, a reverse-mode autodiff tape, Adam, and a
//!   finite-difference gradient checker.
//! * [`graph`]: CSR graphs, dataset manifests and loaders, splits, and a
//!   stochastic block model generator.
//! * [`gnn`]: neighborhood and layer aggregators, model assembly, losses, and
//!   evaluation metrics.
//! * [`space`]: architecture genotypes, the text grammar, enumeration and
//!   sampling, and named baseline architectures.
//! * [`search`]: the recurrent controller, policy-gradient updates, child
//!   training with optional weight sharing, and search drivers.
//!
//! Everything is deterministic given explicit seeds: all randomness flows
//! through caller-provided ChaCha8 generators and no output depends on hash
//! map iteration order.

pub mod gnn;
pub mod graph;
pub mod search;
pub mod space;
pub mod tensor;
