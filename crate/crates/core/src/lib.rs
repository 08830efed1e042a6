//! Computational tools for intrinsic flat distance estimates between metrics
//! on closed surfaces.

pub mod families;
pub mod geodesy;
pub mod goodset;
pub mod mesh;
pub mod metrics;
pub mod quadrature;
pub mod flatbound;
pub mod zspace;
pub mod tubes;
pub mod cache;
