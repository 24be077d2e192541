//! Interaction kernels β(x,y) on [0,1]², population densities, and their
//! discretizations onto the K-cell partition.
//!
//! Row and column integral bounds are part of the kernel's contract: every
//! kernel carries a declared C_β with ∫β(x,·) ≤ C_β and ∫β(·,x) ≤ C_β, and
//! discretization re-checks the bound on the matrix.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Kernel catalog. Symmetry is not assumed anywhere downstream even though
/// the shipped shapes happen to be symmetric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelShape {
    Constant { level: f64 },
    /// scale · (x·y + offset).
    Separable { scale: f64, offset: f64 },
    /// scale · exp(−(x−y)²/sigma²).
    GaussianBump { scale: f64, sigma: f64 },
    /// strength / sqrt(|x−y|), singular on the diagonal but integrable.
    SingularInverseSqrt { strength: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialKernel {
    shape: KernelShape,
    c_beta: f64,
}

impl SpatialKernel {
    pub fn new(shape: KernelShape) -> Result<Self> {
        let valid = match shape {
            KernelShape::Constant { level } => level >= 0.0 && level.is_finite(),
            KernelShape::Separable { scale, offset } => scale >= 0.0 && offset >= 0.0,
            KernelShape::GaussianBump { scale, sigma } => scale >= 0.0 && sigma > 0.0,
            KernelShape::SingularInverseSqrt { strength } => strength >= 0.0,
        };
        if !valid {
            return Err(Error::InvalidConfig(format!("bad kernel shape {shape:?}")));
        }
        let c_beta = match shape {
            KernelShape::Constant { level } => level,
            // sup_x ∫ scale(xy + offset) dy = scale(x/2 + offset) at x = 1.
            KernelShape::Separable { scale, offset } => scale * (0.5 + offset),
            // sup at x = 1/2; Simpson is plenty for a constructor constant.
            KernelShape::GaussianBump { scale, sigma } => {
                let f = |y: f64| scale * (-((0.5 - y) / sigma).powi(2)).exp();
                let n = 10_000;
                let h = 1.0 / n as f64;
                let mut acc = f(0.0) + f(1.0);
                for i in 1..n {
                    acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
                }
                (acc * h / 3.0) * (1.0 + 1e-9)
            }
            // ∫ |x−y|^{-1/2} dy = 2(√x + √(1−x)), maximal 2√2 at x = 1/2.
            KernelShape::SingularInverseSqrt { strength } => strength * 2.0 * 2.0f64.sqrt(),
        };
        Ok(Self { shape, c_beta })
    }

    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    /// Declared bound on row and column integrals.
    pub fn c_beta(&self) -> f64 {
        self.c_beta
    }

    /// Pointwise value; +∞ on the diagonal for the singular kernel.
    pub fn value(&self, x: f64, y: f64) -> f64 {
        match self.shape {
            KernelShape::Constant { level } => level,
            KernelShape::Separable { scale, offset } => scale * (x * y + offset),
            KernelShape::GaussianBump { scale, sigma } => {
                scale * (-((x - y) / sigma).powi(2)).exp()
            }
            KernelShape::SingularInverseSqrt { strength } => {
                let d = (x - y).abs();
                if d == 0.0 {
                    f64::INFINITY
                } else {
                    strength / d.sqrt()
                }
            }
        }
    }

    /// ∫_0^1 β(x,y) dy in closed form (all catalog kernels admit one).
    pub fn row_integral(&self, x: f64) -> f64 {
        match self.shape {
            KernelShape::Constant { level } => level,
            KernelShape::Separable { scale, offset } => scale * (0.5 * x + offset),
            KernelShape::GaussianBump { scale, sigma } => {
                // Numeric; only used by the bound check.
                let n = 2000;
                let h = 1.0 / n as f64;
                let f = |y: f64| scale * (-((x - y) / sigma).powi(2)).exp();
                let mut acc = 0.5 * (f(0.0) + f(1.0));
                for i in 1..n {
                    acc += f(i as f64 * h);
                }
                acc * h
            }
            KernelShape::SingularInverseSqrt { strength } => {
                strength * 2.0 * (x.sqrt() + (1.0 - x).sqrt())
            }
        }
    }

    /// Numeric verification of the row/column integral bound on a grid.
    pub fn verify_bounds(&self, grid: usize) -> Result<()> {
        for i in 0..=grid {
            let x = i as f64 / grid as f64;
            let row = self.row_integral(x);
            if row > self.c_beta * (1.0 + 1e-6) + 1e-12 {
                return Err(Error::KernelBoundViolation {
                    declared: self.c_beta,
                    observed: row,
                });
            }
        }
        Ok(())
    }
}

/// Population density catalog: B̄(x) with ∫ B̄ = 1 and 0 < c_B ≤ B̄ ≤ C_B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DensityShape {
    Uniform,
    /// `left` on [0, split), and the level on [split, 1] that makes the total
    /// mass one.
    TwoBlock { split: f64, left: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationDensity {
    shape: DensityShape,
}

impl PopulationDensity {
    pub fn new(shape: DensityShape) -> Result<Self> {
        if let DensityShape::TwoBlock { split, left } = shape {
            if !(split > 0.0 && split < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "two-block split {split} must be in (0,1)"
                )));
            }
            let right = (1.0 - left * split) / (1.0 - split);
            if left <= 0.0 || right <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "two-block levels must stay positive (left {left}, implied right {right})"
                )));
            }
        }
        Ok(Self { shape })
    }

    pub fn shape(&self) -> DensityShape {
        self.shape
    }

    pub fn value(&self, x: f64) -> f64 {
        match self.shape {
            DensityShape::Uniform => 1.0,
            DensityShape::TwoBlock { split, left } => {
                let right = (1.0 - left * split) / (1.0 - split);
                if x < split {
                    left
                } else {
                    right
                }
            }
        }
    }

    /// Exact average over [a, b].
    pub fn cell_average(&self, a: f64, b: f64) -> f64 {
        match self.shape {
            DensityShape::Uniform => 1.0,
            DensityShape::TwoBlock { split, left } => {
                let right = (1.0 - left * split) / (1.0 - split);
                if b <= split {
                    left
                } else if a >= split {
                    right
                } else {
                    (left * (split - a) + right * (b - split)) / (b - a)
                }
            }
        }
    }
}

/// Discretized kernel and density on the K-cell uniform partition.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteKernel {
    k: usize,
    /// Row-major K×K: beta[k*K + k'] is the effect of k' on k.
    beta: Vec<f64>,
    b_vec: Vec<f64>,
    c_beta: f64,
    c_b: f64,
    big_c_b: f64,
}

impl DiscreteKernel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn beta(&self, row: usize, col: usize) -> f64 {
        self.beta[row * self.k + col]
    }

    pub fn beta_matrix(&self) -> &[f64] {
        &self.beta
    }

    pub fn b_vec(&self) -> &[f64] {
        &self.b_vec
    }

    pub fn c_beta(&self) -> f64 {
        self.c_beta
    }

    /// min_k B̄_k.
    pub fn c_b(&self) -> f64 {
        self.c_b
    }

    /// max_k B̄_k.
    pub fn big_c_b(&self) -> f64 {
        self.big_c_b
    }

    /// Cell midpoints x_k.
    pub fn cell_centers(&self) -> Vec<f64> {
        let k = self.k as f64;
        (0..self.k).map(|i| (i as f64 + 0.5) / k).collect()
    }

    /// v_k = (1/K) Σ_k' β_{k,k'} field_{k'}: the discrete interaction
    /// integral ∫ β(x,·) field.
    pub fn interaction_integral(&self, field: &[f64]) -> Result<Vec<f64>> {
        if field.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                got: field.len(),
            });
        }
        let inv_k = 1.0 / self.k as f64;
        let mut out = vec![0.0; self.k];
        for row in 0..self.k {
            let b = &self.beta[row * self.k..(row + 1) * self.k];
            let mut acc = 0.0;
            for (bv, fv) in b.iter().zip(field) {
                acc += bv * fv;
            }
            out[row] = acc * inv_k;
        }
        Ok(out)
    }

    /// Same as `interaction_integral`, writing into a caller buffer (hot path
    /// of the solvers).
    pub(crate) fn interaction_into(&self, field: &[f64], out: &mut [f64]) {
        let inv_k = 1.0 / self.k as f64;
        for row in 0..self.k {
            let b = &self.beta[row * self.k..(row + 1) * self.k];
            let mut acc = 0.0;
            for (bv, fv) in b.iter().zip(field) {
                acc += bv * fv;
            }
            out[row] = acc * inv_k;
        }
    }

    /// Build directly from raw parts (tests, synthetic kernels).
    pub fn from_parts(k: usize, beta: Vec<f64>, b_vec: Vec<f64>, c_beta: f64) -> Result<Self> {
        if beta.len() != k * k {
            return Err(Error::DimensionMismatch {
                expected: k * k,
                got: beta.len(),
            });
        }
        if b_vec.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: b_vec.len(),
            });
        }
        let c_b = b_vec.iter().cloned().fold(f64::INFINITY, f64::min);
        let big_c_b = b_vec.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            k,
            beta,
            b_vec,
            c_beta,
            c_b,
            big_c_b,
        })
    }
}

/// Exact double cell integral of |x−y|^{-1/2} over [a,b]×[c,d], via the
/// second antiderivative g2(u) = (4/3)|u|^{3/2}.
fn singular_cell_integral(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let g2 = |u: f64| (4.0 / 3.0) * u.abs().powf(1.5);
    g2(b - c) - g2(b - d) - g2(a - c) + g2(a - d)
}

/// Discretize kernel and density onto K cells: midpoint values for smooth
/// kernels, exact cell means where the catalog admits them (separable,
/// constant, singular), exact cell averages for the density rescaled so its
/// discrete mean is exactly one.
pub fn discretize(
    kernel: &SpatialKernel,
    density: &PopulationDensity,
    k: usize,
) -> Result<DiscreteKernel> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be ≥ 1".into()));
    }
    let kf = k as f64;
    let centers: Vec<f64> = (0..k).map(|i| (i as f64 + 0.5) / kf).collect();
    let mut beta = vec![0.0; k * k];
    for row in 0..k {
        for col in 0..k {
            beta[row * k + col] = match kernel.shape() {
                KernelShape::Constant { level } => level,
                // Cell mean of a separable product is the product of cell
                // means, which are the midpoints for uniform cells.
                KernelShape::Separable { scale, offset } => {
                    scale * (centers[row] * centers[col] + offset)
                }
                KernelShape::GaussianBump { .. } => kernel.value(centers[row], centers[col]),
                KernelShape::SingularInverseSqrt { strength } => {
                    let (a, b) = (row as f64 / kf, (row + 1) as f64 / kf);
                    let (c, d) = (col as f64 / kf, (col + 1) as f64 / kf);
                    strength * singular_cell_integral(a, b, c, d) * kf * kf
                }
            };
        }
    }

    let mut b_vec: Vec<f64> = (0..k)
        .map(|i| density.cell_average(i as f64 / kf, (i + 1) as f64 / kf))
        .collect();
    // Enforce the discrete normalization (1/K) Σ B̄_k = 1 exactly.
    let total: f64 = b_vec.iter().sum::<f64>() / kf;
    for b in &mut b_vec {
        *b /= total;
    }

    let dk = DiscreteKernel::from_parts(k, beta, b_vec, kernel.c_beta())?;

    // Bound check: (1/K)·row sums and column sums against declared C_β.
    let tol = kernel.c_beta() * 1e-9 + 1e-12;
    for row in 0..k {
        let sum: f64 = (0..k).map(|col| dk.beta(row, col)).sum::<f64>() / kf;
        if sum > kernel.c_beta() + tol {
            return Err(Error::KernelBoundViolation {
                declared: kernel.c_beta(),
                observed: sum,
            });
        }
    }
    for col in 0..k {
        let sum: f64 = (0..k).map(|row| dk.beta(row, col)).sum::<f64>() / kf;
        if sum > kernel.c_beta() + tol {
            return Err(Error::KernelBoundViolation {
                declared: kernel.c_beta(),
                observed: sum,
            });
        }
    }
    Ok(dk)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(shape: KernelShape) -> SpatialKernel {
        SpatialKernel::new(shape).unwrap()
    }

    fn uniform_density() -> PopulationDensity {
        PopulationDensity::new(DensityShape::Uniform).unwrap()
    }

    #[test]
    fn constant_kernel_discretizes_to_constant_matrix() {
        let b = 2.5;
        let dk = discretize(&kernel(KernelShape::Constant { level: b }), &uniform_density(), 4)
            .unwrap();
        assert!(dk.beta_matrix().iter().all(|&v| v == b));
        assert!(dk.b_vec().iter().all(|&v| v == 1.0));
        assert_eq!(dk.c_b(), 1.0);
        assert_eq!(dk.big_c_b(), 1.0);
    }

    #[test]
    fn separable_kernel_uses_cell_means() {
        let dk = discretize(
            &kernel(KernelShape::Separable {
                scale: 1.0,
                offset: 0.0,
            }),
            &uniform_density(),
            3,
        )
        .unwrap();
        for row in 0..3 {
            for col in 0..3 {
                let xr = (row as f64 + 0.5) / 3.0;
                let xc = (col as f64 + 0.5) / 3.0;
                assert!((dk.beta(row, col) - xr * xc).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn singular_kernel_exact_cells_and_bound() {
        let c = 0.7;
        let sk = kernel(KernelShape::SingularInverseSqrt { strength: c });
        let dk = discretize(&sk, &uniform_density(), 2).unwrap();
        // Closed-form diagonal cell: K² c ∫∫_{[0,1/2]²} |x−y|^{-1/2}
        //   = 4c · (4/3)(1/2)^{3/2} · ... check against direct formula.
        let diag = 4.0 * c * super::singular_cell_integral(0.0, 0.5, 0.0, 0.5);
        assert!((dk.beta(0, 0) - diag).abs() < 1e-12);
        assert!((dk.beta(0, 0) - dk.beta(1, 1)).abs() < 1e-12);
        assert!((dk.beta(0, 1) - dk.beta(1, 0)).abs() < 1e-12);
        // Row sums stay within the declared bound.
        for row in 0..2 {
            let sum = (dk.beta(row, 0) + dk.beta(row, 1)) / 2.0;
            assert!(sum <= sk.c_beta() + 1e-12);
        }
        sk.verify_bounds(1000).unwrap();
    }

    #[test]
    fn whole_interval_singular_integral() {
        // ∫∫_{[0,1]²} |x−y|^{-1/2} = 8/3.
        let v = super::singular_cell_integral(0.0, 1.0, 0.0, 1.0);
        assert!((v - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn interaction_integral_examples() {
        let b = 1.5;
        let dk = discretize(&kernel(KernelShape::Constant { level: b }), &uniform_density(), 5)
            .unwrap();
        let field = vec![2.0; 5];
        let out = dk.interaction_integral(&field).unwrap();
        assert!(out.iter().all(|&v| (v - b * 2.0).abs() < 1e-14));

        // Kronecker scaling: beta = K·I returns the field unchanged.
        let k = 4;
        let mut eye = vec![0.0; k * k];
        for i in 0..k {
            eye[i * k + i] = k as f64;
        }
        let dk = DiscreteKernel::from_parts(k, eye, vec![1.0; k], k as f64).unwrap();
        let field = vec![0.3, 1.0, -2.0, 4.5];
        let out = dk.interaction_integral(&field).unwrap();
        for (a, b) in out.iter().zip(&field) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn interaction_integral_matches_triple_loop() {
        let k = 3;
        let beta = vec![0.3, 1.2, 0.0, 2.0, 0.7, 0.1, 0.9, 0.4, 1.1];
        let dk = DiscreteKernel::from_parts(k, beta.clone(), vec![1.0; k], 10.0).unwrap();
        let field = vec![1.0, 2.0, 3.0];
        let fast = dk.interaction_integral(&field).unwrap();
        for row in 0..k {
            let mut acc = 0.0;
            for col in 0..k {
                acc += beta[row * k + col] * field[col];
            }
            acc /= k as f64;
            assert!((fast[row] - acc).abs() < 1e-14);
        }
        // Dimension mismatch is an error.
        assert!(dk.interaction_integral(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn two_block_density_normalizes() {
        let density = PopulationDensity::new(DensityShape::TwoBlock {
            split: 0.25,
            left: 0.5,
        })
        .unwrap();
        for k in [3usize, 8, 10] {
            let dk = discretize(&kernel(KernelShape::Constant { level: 1.0 }), &density, k)
                .unwrap();
            let total: f64 = dk.b_vec().iter().sum::<f64>() / k as f64;
            assert!((total - 1.0).abs() < 1e-14);
            assert!(dk.c_b() > 0.0);
            assert!(dk.big_c_b() >= dk.c_b());
        }
    }

    #[test]
    fn refinement_improves_row_integrals() {
        // ∫β^N(x,y)·1 dy vs ∫β(x,y) dy in L¹: halving the cell width must not
        // make it worse for catalog kernels.
        for shape in [
            KernelShape::GaussianBump {
                scale: 1.0,
                sigma: 0.3,
            },
            KernelShape::Separable {
                scale: 1.0,
                offset: 0.2,
            },
            KernelShape::SingularInverseSqrt { strength: 0.5 },
        ] {
            let sk = kernel(shape);
            let err = |k: usize| -> f64 {
                let dk = discretize(&sk, &uniform_density(), k).unwrap();
                let ones = vec![1.0; k];
                let rows = dk.interaction_integral(&ones).unwrap();
                // Compare per cell against the exact row integral at a fine
                // sub-sampling of the cell.
                let mut acc = 0.0;
                for (i, row) in rows.iter().enumerate() {
                    let subs = 8;
                    for s in 0..subs {
                        let x = (i as f64 + (s as f64 + 0.5) / subs as f64) / k as f64;
                        acc += (row - sk.row_integral(x)).abs() / (k * subs) as f64;
                    }
                }
                acc
            };
            let (e1, e2) = (err(8), err(16));
            assert!(
                e2 < e1,
                "L1 row-integral error did not shrink for {shape:?}: {e1} -> {e2}"
            );
        }
    }

    #[test]
    fn declared_bounds_hold_numerically() {
        for shape in [
            KernelShape::Constant { level: 2.0 },
            KernelShape::Separable {
                scale: 1.5,
                offset: 0.1,
            },
            KernelShape::GaussianBump {
                scale: 2.0,
                sigma: 0.2,
            },
            KernelShape::SingularInverseSqrt { strength: 1.0 },
        ] {
            kernel(shape).verify_bounds(500).unwrap();
        }
    }
}
