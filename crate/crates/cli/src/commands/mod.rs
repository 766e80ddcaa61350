pub mod composite;
pub mod decompose;
pub mod eval;
pub mod gen_data;
pub mod train;
