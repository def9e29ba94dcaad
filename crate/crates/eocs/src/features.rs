//! Feature encoding of a (grid, operating condition, protected line)
//! instance into four parallel N x (N+1) matrices: component parameters,
//! topology, electrical distance and graph distance, each carrying a signed
//! protection-indicator column.
//!
//! All four matrices are built under the given operating condition, not the
//! base topology: the out-of-service lines vanish from the component and
//! topology channels and reshape both distance channels.

use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::grid::{GridModel, OperatingCondition};
use crate::matrices::{build_ybus, impedance_matrix, MatrixError};

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("operating condition leaves the grid disconnected")]
    Disconnected,
    #[error("feature record IO failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed feature record: {0}")]
    Format(String),
}

/// Raw (unscaled) feature matrices in channel order P, T, D_Z, D.
pub type RawFeatures = [Array2<f64>; 4];

/// The four scaled feature matrices, each N x (N+1); the last column is the
/// protection indicator (+1 at the head bus, -1 at the fault-end bus).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub p: Array2<f64>,
    pub t: Array2<f64>,
    pub d_z: Array2<f64>,
    pub d: Array2<f64>,
}

impl FeatureSet {
    pub fn bus_count(&self) -> usize {
        self.p.nrows()
    }

    pub fn channels(&self) -> [&Array2<f64>; 4] {
        [&self.p, &self.t, &self.d_z, &self.d]
    }

    /// Binary record: u32 bus count, then the four matrices row-major as
    /// little-endian f64.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), FeatureError> {
        w.write_all(&(self.bus_count() as u32).to_le_bytes())?;
        for mat in self.channels() {
            for &v in mat.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, FeatureError> {
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)?;
        let n = u32::from_le_bytes(buf4) as usize;
        let read_mat = |r: &mut R| -> Result<Array2<f64>, FeatureError> {
            let mut data = Vec::with_capacity(n * (n + 1));
            let mut buf8 = [0u8; 8];
            for _ in 0..n * (n + 1) {
                r.read_exact(&mut buf8)?;
                data.push(f64::from_le_bytes(buf8));
            }
            Array2::from_shape_vec((n, n + 1), data)
                .map_err(|e| FeatureError::Format(e.to_string()))
        };
        Ok(FeatureSet {
            p: read_mat(r)?,
            t: read_mat(r)?,
            d_z: read_mat(r)?,
            d: read_mat(r)?,
        })
    }
}

/// Per-channel min-max ranges of off-diagonal magnitudes, fitted on the
/// training set and frozen thereafter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub p: (f64, f64),
    pub t: (f64, f64),
    pub d_z: (f64, f64),
    pub d: (f64, f64),
}

impl FeatureScaling {
    /// No-op scaling (range [0, 1] leaves values untouched).
    pub fn identity() -> Self {
        FeatureScaling { p: (0.0, 1.0), t: (0.0, 1.0), d_z: (0.0, 1.0), d: (0.0, 1.0) }
    }

    /// Fit ranges over the off-diagonal entries of raw feature matrices.
    pub fn fit<'a>(sets: impl Iterator<Item = &'a RawFeatures>) -> Self {
        let mut ranges = [(f64::INFINITY, f64::NEG_INFINITY); 4];
        for raw in sets {
            for (c, mat) in raw.iter().enumerate() {
                let n = mat.nrows();
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            let v = mat[[i, j]];
                            ranges[c].0 = ranges[c].0.min(v);
                            ranges[c].1 = ranges[c].1.max(v);
                        }
                    }
                }
            }
        }
        for r in &mut ranges {
            if !r.0.is_finite() || !r.1.is_finite() || r.1 <= r.0 {
                *r = (0.0, 1.0);
            }
        }
        FeatureScaling { p: ranges[0], t: ranges[1], d_z: ranges[2], d: ranges[3] }
    }

    fn ranges(&self) -> [(f64, f64); 4] {
        [self.p, self.t, self.d_z, self.d]
    }

    fn scale_in_place(&self, raw: &mut RawFeatures) {
        for (c, (lo, hi)) in self.ranges().into_iter().enumerate() {
            let mat = &mut raw[c];
            let n = mat.nrows();
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        mat[[i, j]] = (mat[[i, j]] - lo) / (hi - lo);
                    }
                }
            }
        }
    }

    /// Invert the affine map for one channel (0 = P, 1 = T, 2 = D_Z, 3 = D).
    pub fn descale(&self, channel: usize, value: f64) -> f64 {
        let (lo, hi) = self.ranges()[channel];
        value * (hi - lo) + lo
    }
}

/// Component-parameter matrix: node-type codes on the diagonal, in-service
/// branch impedance magnitudes off it.
pub fn component_matrix(grid: &GridModel, tau0: &OperatingCondition) -> Array2<f64> {
    let n = grid.bus_count();
    let mut p = Array2::zeros((n, n));
    for bus in &grid.buses {
        p[[bus.id, bus.id]] = bus.kind.diag_code();
    }
    for b in &grid.branches {
        if tau0.is_in_service(b.id) {
            p[[b.from_bus, b.to_bus]] = b.z.norm();
            p[[b.to_bus, b.from_bus]] = b.z.norm();
        }
    }
    p
}

/// Adjacency-plus-identity over in-service branches.
pub fn topology_matrix(grid: &GridModel, tau0: &OperatingCondition) -> Array2<f64> {
    let n = grid.bus_count();
    let mut t = Array2::zeros((n, n));
    for i in 0..n {
        t[[i, i]] = 1.0;
    }
    for b in &grid.branches {
        if tau0.is_in_service(b.id) {
            t[[b.from_bus, b.to_bus]] = 1.0;
            t[[b.to_bus, b.from_bus]] = 1.0;
        }
    }
    t
}

/// Electrical distance: |Z_ij| of the node impedance matrix, zero diagonal.
pub fn electrical_distance_matrix(
    grid: &GridModel,
    tau0: &OperatingCondition,
) -> Result<Array2<f64>, FeatureError> {
    let z = impedance_matrix(&build_ybus(grid, tau0)?)?;
    let n = grid.bus_count();
    let mut d_z = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                d_z[[i, j]] = z.get(i, j).norm();
            }
        }
    }
    Ok(d_z)
}

/// Unweighted shortest-path hop counts on the in-service graph.
pub fn graph_distance_matrix(
    grid: &GridModel,
    tau0: &OperatingCondition,
) -> Result<Array2<f64>, FeatureError> {
    let n = grid.bus_count();
    let adj = grid.adjacency(tau0);
    let mut d = Array2::zeros((n, n));
    let mut dist = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    for start in 0..n {
        dist.fill(usize::MAX);
        dist[start] = 0;
        queue.push_back(start);
        let mut reached = 1;
        while let Some(v) = queue.pop_front() {
            for &(u, _) in &adj[v] {
                if dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    reached += 1;
                    queue.push_back(u);
                }
            }
        }
        if reached != n {
            return Err(FeatureError::Disconnected);
        }
        for (j, &dj) in dist.iter().enumerate() {
            d[[start, j]] = dj as f64;
        }
    }
    Ok(d)
}

/// The four raw N x N matrices under `tau0`, in channel order.
pub fn raw_features(
    grid: &GridModel,
    tau0: &OperatingCondition,
) -> Result<RawFeatures, FeatureError> {
    Ok([
        component_matrix(grid, tau0),
        topology_matrix(grid, tau0),
        electrical_distance_matrix(grid, tau0)?,
        graph_distance_matrix(grid, tau0)?,
    ])
}

fn with_indicator(mat: Array2<f64>, p_l_from: usize, p_l_to: usize) -> Array2<f64> {
    let n = mat.nrows();
    let mut out = Array2::zeros((n, n + 1));
    out.slice_mut(ndarray::s![.., ..n]).assign(&mat);
    out[[p_l_from, n]] = 1.0;
    out[[p_l_to, n]] = -1.0;
    out
}

/// Assemble the scaled feature set for one instance: the four matrices under
/// `tau0`, min-max scaled off the diagonal with the frozen ranges, plus the
/// signed protection-indicator column.
pub fn encode(
    grid: &GridModel,
    tau0: &OperatingCondition,
    p_l: usize,
    scaling: &FeatureScaling,
) -> Result<FeatureSet, FeatureError> {
    let mut raw = raw_features(grid, tau0)?;
    scaling.scale_in_place(&mut raw);
    let line = &grid.branches[p_l];
    let [p, t, d_z, d] = raw;
    Ok(FeatureSet {
        p: with_indicator(p, line.from_bus, line.to_bus),
        t: with_indicator(t, line.from_bus, line.to_bus),
        d_z: with_indicator(d_z, line.from_bus, line.to_bus),
        d: with_indicator(d, line.from_bus, line.to_bus),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BusKind;
    use crate::testing;
    use num_complex::Complex64;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn component_diagonal_codes_and_masking() {
        let grid = testing::six_bus();
        let all = OperatingCondition::all_in_service(grid.branch_count());
        let p = component_matrix(&grid, &all);
        assert_eq!(p[[0, 0]], 1.0); // synchronous terminal
        assert_eq!(p[[2, 2]], 0.75); // renewable terminal
        assert_eq!(p[[4, 4]], 0.0); // plain bus
        let xf = testing::meshed_five_line();
        let p_xf = component_matrix(&xf, &OperatingCondition::all_in_service(6));
        assert_eq!(p_xf[[2, 2]], 0.5); // transformer high side

        let tau = all.with_outages(&[4]); // line 2-4
        let p_masked = component_matrix(&grid, &tau);
        assert_eq!(p_masked[[2, 4]], 0.0);
        assert_eq!(p_masked[[4, 2]], 0.0);
        assert!(p[[2, 4]] > 0.0);
    }

    #[test]
    fn component_offdiagonal_is_impedance_magnitude() {
        let mut grid = testing::two_bus();
        grid.branches[0].z = Complex64::new(0.01, 0.1);
        let p = component_matrix(&grid, &OperatingCondition::all_in_service(1));
        // |0.01 + j0.1| = 0.100498756...
        assert!((p[[0, 1]] - 0.1004987562112089).abs() < 1e-12);
        assert_eq!(p[[0, 1]], p[[1, 0]]);
    }

    #[test]
    fn topology_matches_edge_list_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let grid = testing::random_grid(&mut rng, 12, 6);
        let all = OperatingCondition::all_in_service(grid.branch_count());
        let t = topology_matrix(&grid, &all);
        let n = grid.bus_count();
        // independent: build from an explicit edge set
        let mut expect = Array2::zeros((n, n));
        for i in 0..n {
            expect[[i, i]] = 1.0;
        }
        for b in &grid.branches {
            expect[[b.from_bus, b.to_bus]] = 1.0;
            expect[[b.to_bus, b.from_bus]] = 1.0;
        }
        assert_eq!(t, expect);

        let removed = 3usize;
        let t2 = topology_matrix(&grid, &all.with_outages(&[removed]));
        let br = &grid.branches[removed];
        let mut flips = 0;
        for i in 0..n {
            for j in 0..n {
                if t[[i, j]] != t2[[i, j]] {
                    flips += 1;
                    assert!(
                        (i, j) == (br.from_bus, br.to_bus) || (i, j) == (br.to_bus, br.from_bus)
                    );
                }
            }
        }
        assert_eq!(flips, 2);
    }

    #[test]
    fn electrical_distance_two_bus_closed_form() {
        let grid = testing::two_bus();
        let all = OperatingCondition::all_in_service(1);
        let d_z = electrical_distance_matrix(&grid, &all).unwrap();
        assert_eq!(d_z[[0, 0]], 0.0);
        assert_eq!(d_z[[1, 1]], 0.0);
        // hand-inverted 2x2: Y = [[-15j, 10j], [10j, -10j]]
        let y00 = Complex64::new(0.0, -15.0);
        let y01 = Complex64::new(0.0, 10.0);
        let y11 = Complex64::new(0.0, -10.0);
        let det = y00 * y11 - y01 * y01;
        let z01 = -y01 / det;
        assert!((d_z[[0, 1]] - z01.norm()).abs() < 1e-12);
        assert!((d_z[[0, 1]] - d_z[[1, 0]]).abs() <= 1e-8);
    }

    #[test]
    fn graph_distance_path_and_metric() {
        let grid = testing::path_grid(3);
        let d = graph_distance_matrix(&grid, &OperatingCondition::all_in_service(2)).unwrap();
        assert_eq!(d[[0, 2]], 2.0);
        assert_eq!(d[[0, 0]], 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid = testing::random_grid(&mut rng, 15, 8);
        let d =
            graph_distance_matrix(&grid, &OperatingCondition::all_in_service(grid.branch_count()))
                .unwrap();
        let n = grid.bus_count();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    assert!(d[[i, k]] <= d[[i, j]] + d[[j, k]]);
                }
            }
        }
    }

    /// Floyd-Warshall oracle over the in-service graph.
    fn floyd_warshall(grid: &GridModel, tau: &OperatingCondition) -> Array2<f64> {
        let n = grid.bus_count();
        let inf = 1e18;
        let mut d = Array2::from_elem((n, n), inf);
        for i in 0..n {
            d[[i, i]] = 0.0;
        }
        for b in &grid.branches {
            if tau.is_in_service(b.id) {
                d[[b.from_bus, b.to_bus]] = 1.0;
                d[[b.to_bus, b.from_bus]] = 1.0;
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = d[[i, k]] + d[[k, j]];
                    if via < d[[i, j]] {
                        d[[i, j]] = via;
                    }
                }
            }
        }
        d
    }

    #[test]
    fn graph_distance_matches_floyd_warshall() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..30 {
            let n = rng.gen_range(4..=50);
            let extra = rng.gen_range(0..=n);
            let grid = testing::random_grid(&mut rng, n, extra);
            let tau = OperatingCondition::all_in_service(grid.branch_count());
            let d = graph_distance_matrix(&grid, &tau).unwrap();
            assert_eq!(d, floyd_warshall(&grid, &tau));
        }
    }

    #[test]
    fn graph_distance_rejects_disconnection() {
        let grid = testing::path_grid(4);
        let tau = OperatingCondition::all_in_service(3).with_outages(&[1]);
        assert!(matches!(
            graph_distance_matrix(&grid, &tau),
            Err(FeatureError::Disconnected)
        ));
    }

    #[test]
    fn encode_indicator_column() {
        let grid = testing::six_bus();
        let all = OperatingCondition::all_in_service(grid.branch_count());
        let scaling = FeatureScaling::identity();
        let fs = encode(&grid, &all, 4, &scaling).unwrap();
        let n = grid.bus_count();
        let line = &grid.branches[4];
        for mat in fs.channels() {
            assert_eq!(mat.ncols(), n + 1);
            assert_eq!(mat.nrows(), n);
            let col = mat.column(n);
            assert_eq!(col[line.from_bus], 1.0);
            assert_eq!(col[line.to_bus], -1.0);
            assert_eq!(col.iter().filter(|&&v| v != 0.0).count(), 2);
        }

        // a different protected line touches only the indicator column
        let fs2 = encode(&grid, &all, 2, &scaling).unwrap();
        for (a, b) in fs.channels().into_iter().zip(fs2.channels()) {
            assert_eq!(a.slice(ndarray::s![.., ..n]), b.slice(ndarray::s![.., ..n]));
            assert_ne!(a.column(n), b.column(n));
        }
    }

    #[test]
    fn scaling_roundtrip_recovers_raw_values() {
        let grid = testing::six_bus();
        let all = OperatingCondition::all_in_service(grid.branch_count());
        let raw = raw_features(&grid, &all).unwrap();
        let scaling = FeatureScaling::fit(std::iter::once(&raw));
        let fs = encode(&grid, &all, 0, &scaling).unwrap();
        let n = grid.bus_count();
        for (c, mat) in fs.channels().into_iter().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        let v = mat[[i, j]];
                        assert!((-1e-9..=1.0 + 1e-9).contains(&v), "channel {c} not in [0,1]");
                        let back = scaling.descale(c, v);
                        assert!((back - raw[c][[i, j]]).abs() <= 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn outages_reshape_all_channels() {
        let grid = testing::six_bus();
        let all = OperatingCondition::all_in_service(grid.branch_count());
        let tau = all.with_outages(&[6]); // line 4-5
        let base = raw_features(&grid, &all).unwrap();
        let masked = raw_features(&grid, &tau).unwrap();
        assert_eq!(masked[0][[4, 5]], 0.0);
        assert_eq!(masked[1][[4, 5]], 0.0);
        assert!(base[0][[4, 5]] > 0.0);
        // both distance channels must move somewhere
        assert_ne!(base[2], masked[2]);
        assert_ne!(base[3], masked[3]);
    }

    #[test]
    fn feature_record_roundtrip() {
        let grid = testing::six_bus();
        let all = OperatingCondition::all_in_service(grid.branch_count());
        let fs = encode(&grid, &all, 1, &FeatureScaling::identity()).unwrap();
        let mut buf = Vec::new();
        fs.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 4 * 6 * 7 * 8);
        let back = FeatureSet::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(fs, back);
    }

    #[test]
    fn renewable_bus_code_follows_replacement() {
        let grid = testing::six_bus();
        assert_eq!(grid.buses[3].kind, BusKind::RenewableTerminal);
        let p = component_matrix(&grid, &OperatingCondition::all_in_service(grid.branch_count()));
        assert_eq!(p[[3, 3]], 0.75);
    }
}
