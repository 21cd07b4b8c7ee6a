pub mod data;
pub mod decode;
pub mod eval;
pub mod inspect;
pub mod train;
