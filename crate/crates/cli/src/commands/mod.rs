pub mod analyze;
pub mod cohort;
pub mod regress;
pub mod score;
pub mod simulate;
