//! Operation counting for the engines' inner loops.
//!
//! Kernels report each matrix-level operation they perform to an
//! [`OpTally`]. Production runs use [`NoTally`], which compiles away; the
//! instrumented runs use [`OpCounts`].

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    /// Explicit inverse of an `n x n` matrix from its factorization.
    MatrixInverse(usize),
    /// `n x n` by `n x n` product.
    MatrixProduct(usize),
    MatrixVector(usize),
    /// Forward plus back substitution for one right-hand side.
    TriangularSolve(usize),
    /// Rank-one update `x x^H` of an `n x n` matrix.
    OuterProduct(usize),
    Factorization(usize),
    Eigendecomposition(usize),
    /// Elementwise work on diagonals and scalars, given as real flops.
    Scalar(usize),
}

impl Op {
    /// Real floating-point operations, counting a complex multiply-add as 8.
    pub fn flops(self) -> u64 {
        let cube = |n: usize| (n * n * n) as u64;
        let square = |n: usize| (n * n) as u64;
        match self {
            Op::MatrixInverse(n) => 8 * cube(n),
            Op::MatrixProduct(n) => 8 * cube(n),
            Op::MatrixVector(n) => 8 * square(n),
            Op::TriangularSolve(n) => 8 * square(n),
            Op::OuterProduct(n) => 8 * square(n),
            Op::Factorization(n) => 8 * cube(n) / 3,
            Op::Eigendecomposition(n) => 80 * cube(n),
            Op::Scalar(k) => k as u64,
        }
    }
}

pub trait OpTally {
    fn record(&mut self, op: Op);
}

/// Discards everything.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoTally;

impl OpTally for NoTally {
    #[inline(always)]
    fn record(&mut self, _op: Op) {}
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct OpCounts {
    pub matrix_inversions: u64,
    pub matrix_products: u64,
    pub matrix_vector_products: u64,
    pub triangular_solves: u64,
    pub outer_products: u64,
    pub factorizations: u64,
    pub eigendecompositions: u64,
    pub flops: u64,
}

impl OpTally for OpCounts {
    fn record(&mut self, op: Op) {
        match op {
            Op::MatrixInverse(_) => self.matrix_inversions += 1,
            Op::MatrixProduct(_) => self.matrix_products += 1,
            Op::MatrixVector(_) => self.matrix_vector_products += 1,
            Op::TriangularSolve(_) => self.triangular_solves += 1,
            Op::OuterProduct(_) => self.outer_products += 1,
            Op::Factorization(_) => self.factorizations += 1,
            Op::Eigendecomposition(_) => self.eigendecompositions += 1,
            Op::Scalar(_) => {}
        }
        self.flops += op.flops();
    }
}

/// Operation totals of an instrumented run, split by loop level.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct OpReport {
    /// Work inside the per-(frame, bin) loop of the EM iterations.
    pub frame: OpCounts,
    /// Work done once per bin per iteration.
    pub bin: OpCounts,
    pub frame_visits: u64,
    pub bin_visits: u64,
}

impl OpReport {
    pub fn flops_per_frame(&self) -> f64 {
        self.frame.flops as f64 / self.frame_visits.max(1) as f64
    }

    pub fn inversions_per_frame(&self) -> f64 {
        self.frame.matrix_inversions as f64 / self.frame_visits.max(1) as f64
    }

    pub fn products_per_frame(&self) -> f64 {
        self.frame.matrix_products as f64 / self.frame_visits.max(1) as f64
    }
}
