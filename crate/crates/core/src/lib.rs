pub mod capacity;
pub mod evaluation;
pub mod maghp;
pub mod pmf;
pub mod prediction;
pub mod scenario;
pub mod solver;
pub mod synthetic;
