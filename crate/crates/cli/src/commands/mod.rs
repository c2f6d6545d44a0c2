pub mod fit;
pub mod forecast;
pub mod postprocess;
pub mod score;
pub mod simulate;
