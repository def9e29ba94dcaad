//! Positive-sequence bus admittance matrix, the large-admittance fault
//! modification, complex linear solves and node impedance matrices.
//!
//! Only three-phase faults are in scope, so the sequence networks decouple
//! and a single positive-sequence block carries all the current. Synchronous
//! machines enter the matrix as Norton shunts 1/(j·x''_d); renewable units
//! are pure current sources and contribute no shunt.

use std::collections::BTreeMap;
use std::io::Write;

use num_complex::Complex64;

use crate::grid::{GridModel, OperatingCondition};

#[derive(Debug, thiserror::Error)]
pub enum MatrixError {
    #[error("matrix is singular or has no source shunt")]
    SingularMatrix,
    #[error("linear solve did not reach the residual tolerance ({0:.3e})")]
    DidNotConverge(f64),
    #[error("dimension mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Relative-residual tolerance enforced by [`solve`].
pub const SOLVE_TOLERANCE: f64 = 1e-10;

/// Sparse complex bus admittance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct YBus {
    n: usize,
    entries: BTreeMap<(usize, usize), Complex64>,
}

impl YBus {
    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.entries
            .get(&(i, j))
            .copied()
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    /// Nonzero entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        self.entries.iter().map(|(&(i, j), &v)| (i, j, v))
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn to_dense(&self) -> Vec<Complex64> {
        let mut dense = vec![Complex64::new(0.0, 0.0); self.n * self.n];
        for (&(i, j), &v) in &self.entries {
            dense[i * self.n + j] = v;
        }
        dense
    }
}

/// Single-diagonal fault modification: a large admittance added at the
/// faulted bus grounds it.
#[derive(Debug, Clone, Copy)]
pub struct FaultDelta {
    pub bus: usize,
    pub magnitude: f64,
}

impl FaultDelta {
    pub fn new(bus: usize) -> Self {
        FaultDelta { bus, magnitude: 1e6 }
    }
}

/// Dense node impedance matrix, the inverse of a [`YBus`].
#[derive(Debug, Clone)]
pub struct ZMatrix {
    n: usize,
    data: Vec<Complex64>,
}

impl ZMatrix {
    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.n + j]
    }
}

/// Build the positive-sequence Y-bus under an operating condition.
///
/// Off-diagonals are -1/z summed over in-service branches; diagonals add the
/// branch admittances plus the synchronous source shunts. Errors if no source
/// shunt is present anywhere (the matrix would be singular).
pub fn build_ybus(grid: &GridModel, tau: &OperatingCondition) -> Result<YBus, MatrixError> {
    if tau.len() != grid.branch_count() {
        return Err(MatrixError::ShapeMismatch(format!(
            "tau has {} entries for {} branches",
            tau.len(),
            grid.branch_count()
        )));
    }
    if grid.sync_gens.is_empty() {
        return Err(MatrixError::SingularMatrix);
    }
    let mut entries: BTreeMap<(usize, usize), Complex64> = BTreeMap::new();
    let mut add = |i: usize, j: usize, v: Complex64| {
        *entries.entry((i, j)).or_insert(Complex64::new(0.0, 0.0)) += v;
    };
    for b in &grid.branches {
        if !tau.is_in_service(b.id) {
            continue;
        }
        let y = Complex64::new(1.0, 0.0) / b.z;
        add(b.from_bus, b.from_bus, y);
        add(b.to_bus, b.to_bus, y);
        add(b.from_bus, b.to_bus, -y);
        add(b.to_bus, b.from_bus, -y);
    }
    for g in &grid.sync_gens {
        add(g.bus, g.bus, Complex64::new(1.0, 0.0) / Complex64::new(0.0, g.x_d2));
    }
    Ok(YBus { n: grid.bus_count(), entries })
}

/// Apply the three-phase fault modification: the positive-sequence block
/// adds the large admittance on the faulted diagonal only.
pub fn apply_fault(y: &YBus, delta: &FaultDelta) -> YBus {
    assert!(delta.bus < y.n, "fault bus out of range");
    let mut out = y.clone();
    *out.entries
        .entry((delta.bus, delta.bus))
        .or_insert(Complex64::new(0.0, 0.0)) += Complex64::new(delta.magnitude, 0.0);
    out
}

/// LU factorization with partial pivoting of a dense complex matrix.
///
/// Keeps a copy of the original matrix for one step of iterative refinement.
pub struct LuFactor {
    n: usize,
    lu: Vec<Complex64>,
    perm: Vec<usize>,
    original: Vec<Complex64>,
}

impl LuFactor {
    pub fn new(y: &YBus) -> Result<Self, MatrixError> {
        let n = y.n;
        let original = y.to_dense();
        let mut lu = original.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut max_val = lu[k * n + k].norm();
            let mut max_row = k;
            for i in (k + 1)..n {
                let v = lu[i * n + k].norm();
                if v > max_val {
                    max_val = v;
                    max_row = i;
                }
            }
            if max_val < 1e-300 {
                return Err(MatrixError::SingularMatrix);
            }
            if max_row != k {
                for j in 0..n {
                    lu.swap(k * n + j, max_row * n + j);
                }
                perm.swap(k, max_row);
            }
            let pivot = lu[k * n + k];
            for i in (k + 1)..n {
                let factor = lu[i * n + k] / pivot;
                lu[i * n + k] = factor;
                if factor.norm() != 0.0 {
                    for j in (k + 1)..n {
                        let v = lu[k * n + j];
                        lu[i * n + j] -= factor * v;
                    }
                }
            }
        }
        Ok(LuFactor { n, lu, perm, original })
    }

    /// Triangular solves for one right-hand side (no refinement).
    pub fn solve_raw(&self, rhs: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut x: Vec<Complex64> = self.perm.iter().map(|&p| rhs[p]).collect();
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc / self.lu[i * n + i];
        }
        x
    }

    fn residual(&self, x: &[Complex64], rhs: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut r = rhs.to_vec();
        for i in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..n {
                acc += self.original[i * n + j] * x[j];
            }
            r[i] -= acc;
        }
        r
    }

    /// Solve with one step of iterative refinement and check the
    /// infinity-norm relative residual against [`SOLVE_TOLERANCE`].
    pub fn solve(&self, rhs: &[Complex64]) -> Result<Vec<Complex64>, MatrixError> {
        if rhs.len() != self.n {
            return Err(MatrixError::ShapeMismatch(format!(
                "rhs length {} for dimension {}",
                rhs.len(),
                self.n
            )));
        }
        let rhs_norm = rhs.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
        if rhs_norm == 0.0 {
            return Ok(vec![Complex64::new(0.0, 0.0); self.n]);
        }
        let mut x = self.solve_raw(rhs);
        let r = self.residual(&x, rhs);
        let correction = self.solve_raw(&r);
        for (xi, ci) in x.iter_mut().zip(&correction) {
            *xi += ci;
        }
        let rel = self
            .residual(&x, rhs)
            .iter()
            .map(|v| v.norm())
            .fold(0.0f64, f64::max)
            / rhs_norm;
        if rel > SOLVE_TOLERANCE {
            return Err(MatrixError::DidNotConverge(rel));
        }
        Ok(x)
    }
}

/// Solve Y·V = I. Factorize with [`LuFactor`] directly when solving many
/// right-hand sides against one matrix.
pub fn solve(y: &YBus, injections: &[Complex64]) -> Result<Vec<Complex64>, MatrixError> {
    LuFactor::new(y)?.solve(injections)
}

/// Node impedance matrix: column j solves Y·z = e_j.
pub fn impedance_matrix(y: &YBus) -> Result<ZMatrix, MatrixError> {
    let n = y.n;
    let factor = LuFactor::new(y)?;
    let mut data = vec![Complex64::new(0.0, 0.0); n * n];
    let mut rhs = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        rhs[j] = Complex64::new(1.0, 0.0);
        let col = factor.solve(&rhs)?;
        rhs[j] = Complex64::new(0.0, 0.0);
        for i in 0..n {
            data[i * n + j] = col[i];
        }
    }
    Ok(ZMatrix { n, data })
}

/// Debug dump in Matrix Market coordinate format (1-based, complex general).
pub fn write_matrix_market<W: Write>(
    w: &mut W,
    n: usize,
    entries: impl Iterator<Item = (usize, usize, Complex64)>,
) -> Result<(), MatrixError> {
    let entries: Vec<_> = entries.collect();
    writeln!(w, "%%MatrixMarket matrix coordinate complex general")?;
    writeln!(w, "{} {} {}", n, n, entries.len())?;
    for (i, j, v) in entries {
        writeln!(w, "{} {} {:.16e} {:.16e}", i + 1, j + 1, v.re, v.im)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::load_case;
    use crate::testing;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn two_bus_analytic_entries() {
        let grid = testing::two_bus();
        let tau = OperatingCondition::all_in_service(1);
        let y = build_ybus(&grid, &tau).unwrap();
        // 1/(j0.1) = -j10 on both diagonals; gen shunt 1/(j0.2) = -j5 at bus 0
        assert!((y.get(0, 1) - c(0.0, 10.0)).norm() < 1e-12);
        assert!((y.get(1, 0) - c(0.0, 10.0)).norm() < 1e-12);
        assert!((y.get(0, 0) - c(0.0, -15.0)).norm() < 1e-12);
        assert!((y.get(1, 1) - c(0.0, -10.0)).norm() < 1e-12);
    }

    #[test]
    fn branch_removal_adjusts_four_entries() {
        let grid = testing::six_bus();
        let all = OperatingCondition::all_in_service(grid.branch_count());
        let y_full = build_ybus(&grid, &all).unwrap();
        let removed = 4usize;
        let y_out = build_ybus(&grid, &all.with_outages(&[removed])).unwrap();
        let br = &grid.branches[removed];
        let yb = c(1.0, 0.0) / br.z;
        for (i, j, v) in y_full.iter() {
            let expect = if (i, j) == (br.from_bus, br.to_bus) || (i, j) == (br.to_bus, br.from_bus)
            {
                v + yb
            } else if i == j && (i == br.from_bus || i == br.to_bus) {
                v - yb
            } else {
                v
            };
            assert!((y_out.get(i, j) - expect).norm() < 1e-12, "entry ({i},{j})");
        }
    }

    /// Independent dense builder: walks every bus pair instead of streaming
    /// branch contributions.
    fn dense_oracle(grid: &crate::grid::GridModel, tau: &OperatingCondition) -> Vec<Complex64> {
        let n = grid.bus_count();
        let mut dense = vec![c(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    let mut diag = c(0.0, 0.0);
                    for b in &grid.branches {
                        if tau.is_in_service(b.id) && (b.from_bus == i || b.to_bus == i) {
                            diag += c(1.0, 0.0) / b.z;
                        }
                    }
                    for g in &grid.sync_gens {
                        if g.bus == i {
                            diag += c(1.0, 0.0) / c(0.0, g.x_d2);
                        }
                    }
                    dense[i * n + j] = diag;
                } else {
                    for b in &grid.branches {
                        if tau.is_in_service(b.id)
                            && ((b.from_bus == i && b.to_bus == j)
                                || (b.from_bus == j && b.to_bus == i))
                        {
                            dense[i * n + j] -= c(1.0, 0.0) / b.z;
                        }
                    }
                }
            }
        }
        dense
    }

    #[test]
    fn ieee39_matches_dense_oracle() {
        let grid = load_case(testing::workspace_path("data").join("ieee39.json")).unwrap();
        let tau = OperatingCondition::all_in_service(grid.branch_count());
        let y = build_ybus(&grid, &tau).unwrap();
        let oracle = dense_oracle(&grid, &tau);
        let n = grid.bus_count();
        for i in 0..n {
            for j in 0..n {
                assert!(
                    (y.get(i, j) - oracle[i * n + j]).norm() < 1e-10,
                    "mismatch at ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn ybus_symmetry_and_sparsity_pattern() {
        let grid = load_case(testing::workspace_path("data").join("ieee39.json")).unwrap();
        let all = OperatingCondition::all_in_service(grid.branch_count());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let out: Vec<usize> = (0..grid.branch_count())
                .filter(|_| rng.gen_bool(0.1))
                .collect();
            let tau = all.with_outages(&out);
            let y = build_ybus(&grid, &tau).unwrap();
            let mut expected_offdiag = std::collections::HashSet::new();
            for b in &grid.branches {
                if tau.is_in_service(b.id) {
                    expected_offdiag.insert((b.from_bus, b.to_bus));
                    expected_offdiag.insert((b.to_bus, b.from_bus));
                }
            }
            for (i, j, v) in y.iter() {
                assert!((y.get(j, i) - v).norm() < 1e-12, "asymmetric at ({i},{j})");
                if i != j {
                    assert!(expected_offdiag.contains(&(i, j)), "spurious nonzero ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn row_sums_equal_shunts() {
        let grid = testing::six_bus();
        let tau = OperatingCondition::all_in_service(grid.branch_count());
        let y = build_ybus(&grid, &tau).unwrap();
        for i in 0..grid.bus_count() {
            let row_sum: Complex64 = (0..grid.bus_count()).map(|j| y.get(i, j)).sum();
            let shunt: Complex64 = grid
                .sync_gens
                .iter()
                .filter(|g| g.bus == i)
                .map(|g| c(1.0, 0.0) / c(0.0, g.x_d2))
                .sum();
            assert!((row_sum - shunt).norm() < 1e-10, "row {i}");
        }
    }

    #[test]
    fn no_source_shunt_is_singular() {
        let mut grid = testing::two_bus();
        grid.sync_gens.clear();
        let tau = OperatingCondition::all_in_service(1);
        assert!(matches!(build_ybus(&grid, &tau), Err(MatrixError::SingularMatrix)));
    }

    #[test]
    fn fault_modifies_single_entry() {
        let grid = testing::six_bus();
        let tau = OperatingCondition::all_in_service(grid.branch_count());
        let y = build_ybus(&grid, &tau).unwrap();
        let faulted = apply_fault(&y, &FaultDelta::new(3));
        let mut diffs = 0;
        for (i, j, v) in faulted.iter() {
            if (y.get(i, j) - v).norm() > 0.0 {
                diffs += 1;
                assert_eq!((i, j), (3, 3));
                assert!((v - y.get(3, 3) - c(1e6, 0.0)).norm() < 1e-6);
            }
        }
        assert_eq!(diffs, 1);

        let zero = apply_fault(&y, &FaultDelta { bus: 3, magnitude: 0.0 });
        for (i, j, v) in zero.iter() {
            assert_eq!(y.get(i, j), v);
        }
    }

    #[test]
    fn diagonal_solve() {
        let grid = testing::two_bus();
        let tau = OperatingCondition::all_in_service(1);
        let y = build_ybus(&grid, &tau).unwrap();
        let mut rhs = vec![c(0.0, 0.0); 2];
        rhs[0] = c(1.0, 0.0);
        let v = solve(&y, &rhs).unwrap();
        // check against explicit 2x2 inverse
        let (a, b, d) = (y.get(0, 0), y.get(0, 1), y.get(1, 1));
        let det = a * d - b * b;
        assert!((v[0] - d / det).norm() < 1e-12);
        assert!((v[1] - (-b) / det).norm() < 1e-12);
    }

    /// Gauss-Jordan elimination oracle, no pivot-order tricks shared with the
    /// implementation path.
    fn gauss_jordan(a: &[Complex64], b: &[Complex64], n: usize) -> Vec<Complex64> {
        let mut aug: Vec<Complex64> = vec![c(0.0, 0.0); n * (n + 1)];
        for i in 0..n {
            for j in 0..n {
                aug[i * (n + 1) + j] = a[i * n + j];
            }
            aug[i * (n + 1) + n] = b[i];
        }
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&r1, &r2| {
                    aug[r1 * (n + 1) + col]
                        .norm()
                        .partial_cmp(&aug[r2 * (n + 1) + col].norm())
                        .unwrap()
                })
                .unwrap();
            for j in 0..=n {
                aug.swap(col * (n + 1) + j, pivot_row * (n + 1) + j);
            }
            let pivot = aug[col * (n + 1) + col];
            for j in 0..=n {
                aug[col * (n + 1) + j] /= pivot;
            }
            for row in 0..n {
                if row != col {
                    let factor = aug[row * (n + 1) + col];
                    for j in 0..=n {
                        let v = aug[col * (n + 1) + j];
                        aug[row * (n + 1) + j] -= factor * v;
                    }
                }
            }
        }
        (0..n).map(|i| aug[i * (n + 1) + n]).collect()
    }

    #[test]
    fn random_system_matches_elimination_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10;
        // diagonally dominant complex system
        let mut a = vec![c(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
            a[i * n + i] += c(8.0, 8.0);
        }
        let b: Vec<Complex64> =
            (0..n).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let mut entries = BTreeMap::new();
        for i in 0..n {
            for j in 0..n {
                entries.insert((i, j), a[i * n + j]);
            }
        }
        let y = YBus { n, entries };
        let x = solve(&y, &b).unwrap();
        let oracle = gauss_jordan(&a, &b, n);
        let scale = oracle.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
        for (xi, oi) in x.iter().zip(&oracle) {
            assert!((xi - oi).norm() / scale < 1e-10);
        }
    }

    #[test]
    fn ieee118_fault_residual() {
        let grid = load_case(testing::workspace_path("data").join("ieee118.json")).unwrap();
        let tau = OperatingCondition::all_in_service(grid.branch_count());
        let y = apply_fault(&build_ybus(&grid, &tau).unwrap(), &FaultDelta::new(50));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rhs: Vec<Complex64> = (0..grid.bus_count())
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let v = solve(&y, &rhs).unwrap();
        let n = grid.bus_count();
        let dense = y.to_dense();
        let mut resid = 0.0f64;
        let rhs_norm = rhs.iter().map(|x| x.norm()).fold(0.0f64, f64::max);
        for i in 0..n {
            let mut acc = c(0.0, 0.0);
            for j in 0..n {
                acc += dense[i * n + j] * v[j];
            }
            resid = resid.max((acc - rhs[i]).norm());
        }
        assert!(resid / rhs_norm <= 1e-10);
    }

    #[test]
    fn scalar_impedance_matrix() {
        // single bus with only a source shunt: Z = 1/y
        let mut entries = BTreeMap::new();
        entries.insert((0, 0), c(0.0, -5.0));
        let y = YBus { n: 1, entries };
        let z = impedance_matrix(&y).unwrap();
        assert!((z.get(0, 0) - c(1.0, 0.0) / c(0.0, -5.0)).norm() < 1e-14);
    }

    #[test]
    fn impedance_matrix_inverts_and_is_symmetric() {
        let grid = load_case(testing::workspace_path("data").join("ieee39.json")).unwrap();
        let tau = OperatingCondition::all_in_service(grid.branch_count());
        let y = build_ybus(&grid, &tau).unwrap();
        let z = impedance_matrix(&y).unwrap();
        let n = grid.bus_count();
        let dense = y.to_dense();
        for i in 0..n {
            for j in 0..n {
                let mut acc = c(0.0, 0.0);
                for k in 0..n {
                    acc += z.get(i, k) * dense[k * n + j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((acc - c(expect, 0.0)).norm() < 1e-8, "Z*Y at ({i},{j})");
                assert!((z.get(i, j) - z.get(j, i)).norm() <= 1e-8);
            }
        }
    }

    #[test]
    fn impedance_matrix_tracks_outages() {
        let grid = load_case(testing::workspace_path("data").join("ieee39.json")).unwrap();
        let all = OperatingCondition::all_in_service(grid.branch_count());
        let base = impedance_matrix(&build_ybus(&grid, &all).unwrap()).unwrap();
        let outaged =
            impedance_matrix(&build_ybus(&grid, &all.with_outages(&[0])).unwrap()).unwrap();
        let n = grid.bus_count();
        let max_diff = (0..n * n)
            .map(|k| (base.data[k] - outaged.data[k]).norm())
            .fold(0.0f64, f64::max);
        assert!(max_diff > 1e-6, "outage must change the impedance matrix");
    }

    #[test]
    fn matrix_market_dump() {
        let grid = testing::two_bus();
        let tau = OperatingCondition::all_in_service(1);
        let y = build_ybus(&grid, &tau).unwrap();
        let mut buf = Vec::new();
        write_matrix_market(&mut buf, y.dimension(), y.iter()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate complex general"));
        assert!(text.lines().nth(1).unwrap().starts_with("2 2 4"));
        assert_eq!(text.lines().count(), 2 + y.nnz());
    }
}
