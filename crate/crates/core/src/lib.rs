pub mod analysis;
pub mod cls_model;
pub mod corpus;
pub mod cte;
mod fsutil;
pub mod gen_model;
pub mod pipeline;
pub mod rfx;
pub mod vocab;

pub use fsutil::write_atomic;
