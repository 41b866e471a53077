//! Distance-encoded spatial neural networks.
//!
//! Every neuron lives in the unit cube as a *soma* (where its inputs arrive)
//! and an *axon terminal* (where its output leaves). The weight of the
//! connection from neuron `i` of one layer to neuron `j` of the next is a
//! monotone function of the distance between `i`'s axon and `j`'s soma, so the
//! trainable parameters are coordinates, not weights.
//!
//! Two optimizers are provided:
//!
//! * [`ga`]: a tournament/crossover/mutation genetic algorithm over flat
//!   coordinate chromosomes.
//! * [`gd`]: spatial backpropagation, which turns weight gradients into
//!   distance gradients, projects them onto axon-soma directions, averages
//!   the resulting displacement vectors per endpoint and alternates soma and
//!   axon updates.
//!
//! [`data`], [`eval`] and [`gradcheck`] supply the datasets, metrics and the
//! finite-difference oracle used to validate the analytic gradients.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod error;
pub mod eval;
pub mod forward;
pub mod ga;
pub mod gd;
pub mod geometry;
pub mod gradcheck;
pub mod loss;
mod rng;

pub use error::{Error, Result};
pub use forward::{forward, predict, ActivationKind, ForwardTrace, Network};
pub use geometry::{
    init_geometry, parameter_count, InitScheme, MappingKind, NetworkGeometry, NetworkSpec,
    NeuronGeometry, Point3,
};
