pub mod heights;
pub mod hyperbolic;
pub mod invariants;
pub mod lattice;
pub mod wehler;
