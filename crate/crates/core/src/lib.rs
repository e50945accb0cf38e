pub mod data;
pub mod model;
pub mod seed;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod tune;
