pub mod gradcheck;
pub mod oracles;
pub mod curve_grid;
