//! Dense numerical kernels: tensors, reverse-mode gradients, a symmetric
//! eigensolver, k-means, a finite-difference gradient checker and SGD.

mod eigen;
mod gradcheck;
mod kmeans;
mod optim;
mod tape;
mod tensor;

pub use eigen::sym_eigs;
pub use gradcheck::{grad_check, grad_check_params};
pub use kmeans::{kmeans, kmeans_fit, wcss, KMeansFit};
pub use optim::{Adam, Sgd};
pub use tape::{normalize_adjacency, sigmoid, softmax_rows, Gradients, ParamSet, RowMap, Tape, Var};
pub use tensor::Tensor;
