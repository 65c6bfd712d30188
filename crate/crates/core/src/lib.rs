#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod quadrature;
pub mod coeffs;
pub mod oracle;
pub mod tridiag;
pub mod mode;
pub mod symbol;
pub mod flow;
