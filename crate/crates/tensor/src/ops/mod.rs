mod conv;
mod elementwise;
mod layout;
mod linalg;
mod norm;
mod reduce;
mod resize;

pub use conv::{conv_out_extent, Conv2dSpec};
