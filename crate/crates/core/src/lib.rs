//! Tree-ensemble proximities computed through an exact sparse factorization.
//!
//! A bagged forest ([`ensemble`]) routes every sample to one leaf per tree.
//! Any proximity whose per-tree pair weight splits into a query factor and a
//! reference factor can then be written as `P = Q·Wᵀ` over the global leaf
//! columns ([`proximity`]), computed with a sparse product ([`sparse`]) in
//! time and memory close to linear in the number of samples. [`oracle`]
//! holds the quadratic pairwise reference and [`bench`] the scaling harness.

pub mod bagging;
pub mod bench;
pub mod ensemble;
pub mod error;
pub mod oracle;
pub mod proximity;
pub mod sparse;

pub use bagging::{compute_leaf_mass, record_bagging, BaggingRecord, LeafMass};
pub use ensemble::{
    apply, load_ensemble, save_ensemble, train_forest, Ensemble, LeafAssignment, TrainConfig,
    Tree, TreeNode,
};
pub use error::{Error, Result};
pub use oracle::{proximity_naive, proximity_naive_sparse};
pub use proximity::{
    build_factors, proximity_query_rows, proximity_sparse, Factors, LeafIndexMap, Scheme,
    SchemeWeights,
};
pub use sparse::{spgemm_transposed, SparseMatrix};
