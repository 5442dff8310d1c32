//! Volume-preserving suspension of torus maps.
//!
//! Given a vector field on T × T^m whose time component stays positive and
//! which preserves a product volume form, and a target diffeomorphism of T^m
//! isotopic to the field's return map, this crate constructs a new field on
//! T × T^m that preserves the same volume form and whose return map is
//! exactly the target. The pieces: exact torus geometry, trigonometric
//! polynomial fields, elementary map compositions with closed-form inverses,
//! scheduled isotopies with a flat-at-the-ends reparametrization, Runge-Kutta
//! flows with return-map extraction, the transport family interpolating
//! between the two maps, and the suspended field itself with its density
//! correction.

pub mod error;
pub mod field;
pub mod flow;
pub mod geometry;
pub mod isotopy;
pub mod maps;
pub mod suspension;
pub mod transport;
pub mod trig;

pub use error::{Error, Result, Stage};
pub use field::{FieldEval, FieldReport, FieldTM};
pub use flow::{flow, flow_jacobian, poincare, section_flow, section_flow_inverse, FlowConfig, JacobianMode, ReturnData};
pub use geometry::{CylPoint, LiftedPoint, TorusPoint};
pub use isotopy::{bump, bump_deriv, Isotopy};
pub use maps::{ElementaryMap, MapExpr};
pub use suspension::{suspension_build, unit_field_fd, SuspensionField};
pub use transport::TransportFamily;
pub use trig::{TrigPoly, TrigRational};
