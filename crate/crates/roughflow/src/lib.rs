//! Rough divergence-free velocity fields on the 2-torus.
//!
//! Two constructions are provided: nested intermittent pipe loops and a
//! checkerboard shear-flow schedule. For both the crate evaluates the field,
//! integrates its flow exactly, simulates the stochastic flow, and solves the
//! advection-diffusion equation on a periodic grid.

pub mod cli;
pub mod config;
pub mod error;
pub mod fields;
pub mod flow;
pub mod manifest;
pub mod params;
pub mod pde;
pub mod stochastic;

pub use error::{Error, Result};

/// A point or vector in the plane.
pub type Point = [f64; 2];

#[inline]
pub(crate) fn norm(p: Point) -> f64 {
    p[0].hypot(p[1])
}

#[inline]
pub(crate) fn sub(p: Point, q: Point) -> Point {
    [p[0] - q[0], p[1] - q[1]]
}

#[inline]
pub(crate) fn add(p: Point, q: Point) -> Point {
    [p[0] + q[0], p[1] + q[1]]
}

#[inline]
pub(crate) fn scale(p: Point, s: f64) -> Point {
    [p[0] * s, p[1] * s]
}
