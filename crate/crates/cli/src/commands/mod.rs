pub mod data;
pub mod policy;
pub mod simulate;
