pub mod dist;
pub mod error;
pub mod fit;
pub mod liquidity;
pub mod lob;
pub mod pipeline;
pub mod quantile;
pub mod select;
pub mod special;
pub mod synth;
pub mod ted;

pub use error::{Error, Result};
