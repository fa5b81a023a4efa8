//! Executable algebraic model theory at desk scale.
//!
//! Formula algebras of decidable theories (cylindric with equality,
//! quasi-polyadic without), finite set algebras, Henkin ultrafilters built
//! step by step, the models they represent, omitting types, and the
//! realization-counting comparison of models.

pub mod algebra;
pub mod distinguish;
pub mod oracle;
pub mod repr;
pub mod stone;
pub mod syntax;
pub mod types;
