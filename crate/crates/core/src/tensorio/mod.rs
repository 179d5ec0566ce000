//! Dense matrices, the deterministic kernels ED needs, and the `.tct` /
//! `.tcq` file formats.
//!
//! All reductions accumulate in `f64`, sequentially in index order, so
//! results are reproducible bit for bit.

mod container;
mod matrix;
mod qfile;

pub use container::{DType, DenseTensor, TensorContainer, TCT_MAGIC};
pub use matrix::{column_outer, dot, matmul, matmul_bt, squared_l2, Matrix};
pub use qfile::{pack_codes, unpack_codes, QuantizedContainer, TCQ_MAGIC};
