//! Analysis toolkit for ARM pointer-authentication (PA) based kernel CFI.

pub mod analyzer;
pub mod asm;
pub mod cfg;
pub mod exec;
pub mod pa;
pub mod validator;
