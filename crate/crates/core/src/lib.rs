pub mod data;
pub mod error;
pub mod io;
pub mod numerics;
pub mod filtering;
pub mod par;
pub mod pipeline;
pub mod scoring;
pub mod theory_lab;
pub mod tiny_lm;
pub mod training;

pub use error::{Result, XtfError};
