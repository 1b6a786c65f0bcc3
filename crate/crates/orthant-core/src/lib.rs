//! Simulation engine for stationary distributions of obliquely reflected
//! diffusions in the nonnegative orthant.
//!
//! The chain is a Euler scheme with decreasing steps: from state `X_k`, draw
//! an unconstrained increment `b(X_k) l_{k+1} + sigma(X_k) sqrt(l_{k+1}) U_{k+1}`
//! and map the linear path back into the orthant with the Skorokhod map. The
//! weighted occupation measure of the pre-step states, atom `X_k` with weight
//! `l_{k+1}`, estimates the stationary distribution. Boundary pushes are
//! recorded as weighted face measures so that stationarity can be audited
//! through the generator identity.
//!
//! Everything here is allocation-only compute: no IO, no clocks, no threads.
//! The companion CLI crate layers file formats and parallel drivers on top.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod cltlab;
pub mod lcp;
pub mod math;
pub mod measure;
pub mod model;
pub mod noise;
pub mod numerics;
pub mod reference;
pub mod scheme;
pub mod skorokhod;

pub mod testrand;
