//! Electrical network data model: buses, branches, sources, operating
//! conditions, case-file IO and renewable replacement.
//!
//! A [`GridModel`] is immutable after construction and safe to share across
//! worker threads; every operation here is pure.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("failed to read case file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed case file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid case data: {0}")]
    Validation(String),
    #[error("bus {0} does not host a synchronous generator")]
    UnknownGenerator(usize),
}

/// Node-type code used by the component-parameter feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Plain,
    GenTerminal,
    RenewableTerminal,
    XfmrHigh,
    XfmrLow,
}

impl BusKind {
    /// Diagonal code of the component-parameter matrix.
    pub fn diag_code(self) -> f64 {
        match self {
            BusKind::GenTerminal => 1.0,
            BusKind::RenewableTerminal => 0.75,
            BusKind::XfmrHigh => 0.5,
            BusKind::XfmrLow => 0.25,
            BusKind::Plain => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    #[serde(rename = "base_kV")]
    pub base_kv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    Line,
    Transformer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    /// Series impedance, per-unit, encoded as `[re, im]` in case files.
    #[serde(with = "complex_pair")]
    pub z: Complex64,
    pub kind: BranchKind,
    /// Only switchable branches are outage candidates; transformers are not.
    pub switchable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncGenerator {
    pub bus: usize,
    /// Subtransient reactance, per-unit on the system base.
    pub x_d2: f64,
    /// Internal voltage magnitude, per-unit.
    #[serde(default = "default_emf")]
    pub emf: f64,
}

fn default_emf() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RenewableKind {
    #[serde(rename = "FIPS")]
    Fips,
    #[serde(rename = "PIPS")]
    Pips,
}

/// Inverter-interfaced source. FIPS units leave the PIPS-only fields at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewableUnit {
    pub bus: usize,
    pub kind: RenewableKind,
    /// Rated current, per-unit on the system base.
    #[serde(rename = "I_N")]
    pub i_n: f64,
    /// Pre-fault output ratio in [0, 1].
    pub m: f64,
    /// Output current ceiling, per-unit.
    #[serde(rename = "I_lim")]
    pub i_lim: f64,
    /// Pre-fault active power, per-unit (PIPS).
    #[serde(rename = "P0", default)]
    pub p0: f64,
    /// Crowbar equivalent-impedance coefficients, per-unit (PIPS).
    #[serde(rename = "I_dcb", default)]
    pub i_dcb: f64,
    #[serde(rename = "I_qcb", default)]
    pub i_qcb: f64,
}

/// Line in/out-of-service vector over all branches.
///
/// `true` means in service. Non-switchable branches are always in service.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OperatingCondition(pub Vec<bool>);

impl OperatingCondition {
    pub fn all_in_service(m: usize) -> Self {
        OperatingCondition(vec![true; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_in_service(&self, branch: usize) -> bool {
        self.0[branch]
    }

    /// Branch ids that are out of service.
    pub fn outages(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, s)| !**s)
            .map(|(i, _)| i)
            .collect()
    }

    /// Switch the given branches off, returning the new condition.
    pub fn with_outages(&self, branches: &[usize]) -> Self {
        let mut tau = self.0.clone();
        for &b in branches {
            tau[b] = false;
        }
        OperatingCondition(tau)
    }
}

impl fmt::Display for OperatingCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let out = self.outages();
        if out.is_empty() {
            write!(f, "all-in-service")
        } else {
            write!(
                f,
                "out:{}",
                out.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(",")
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridModel {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub sync_gens: Vec<SyncGenerator>,
    pub renewables: Vec<RenewableUnit>,
}

impl GridModel {
    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub fn line_count(&self) -> usize {
        self.branches
            .iter()
            .filter(|b| b.kind == BranchKind::Line)
            .count()
    }

    /// Branch ids of the transmission lines, ascending. Network outputs and
    /// training labels are indexed by position in this list.
    pub fn line_ids(&self) -> Vec<usize> {
        self.branches
            .iter()
            .filter(|b| b.kind == BranchKind::Line)
            .map(|b| b.id)
            .collect()
    }

    /// Adjacency lists over in-service branches: `(neighbor bus, branch id)`.
    pub fn adjacency(&self, tau: &OperatingCondition) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.buses.len()];
        for b in &self.branches {
            if tau.is_in_service(b.id) {
                adj[b.from_bus].push((b.to_bus, b.id));
                adj[b.to_bus].push((b.from_bus, b.id));
            }
        }
        adj
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let n = self.buses.len();
        let err = |msg: String| Err(GridError::Validation(msg));
        if n == 0 {
            return err("no buses".into());
        }
        if self.base_mva <= 0.0 {
            return err("base_mva must be positive".into());
        }
        for (i, bus) in self.buses.iter().enumerate() {
            if bus.id != i {
                return err(format!("bus ids must be contiguous 0..N-1, found {} at {i}", bus.id));
            }
            if bus.base_kv <= 0.0 {
                return err(format!("bus {} has non-positive base_kV", bus.id));
            }
        }
        let mut seen_pairs = HashSet::new();
        for (i, br) in self.branches.iter().enumerate() {
            if br.id != i {
                return err(format!("branch ids must be contiguous 0..M-1, found {} at {i}", br.id));
            }
            if br.from_bus == br.to_bus {
                return err(format!("branch {} connects a bus to itself", br.id));
            }
            if br.from_bus >= n || br.to_bus >= n {
                return err(format!("branch {} references a missing bus", br.id));
            }
            if br.z.norm() <= 0.0 {
                return err(format!("branch {} has non-positive impedance magnitude", br.id));
            }
            let key = (br.from_bus.min(br.to_bus), br.from_bus.max(br.to_bus));
            if !seen_pairs.insert(key) {
                return err(format!(
                    "parallel branches between buses {} and {} must be pre-merged",
                    key.0, key.1
                ));
            }
        }
        for g in &self.sync_gens {
            if g.bus >= n {
                return err(format!("generator references missing bus {}", g.bus));
            }
            if g.x_d2 <= 0.0 {
                return err(format!("generator at bus {} has non-positive x_d2", g.bus));
            }
            if self.buses[g.bus].kind != BusKind::GenTerminal {
                return err(format!("bus {} hosts a generator but is not gen_terminal", g.bus));
            }
        }
        for r in &self.renewables {
            if r.bus >= n {
                return err(format!("renewable references missing bus {}", r.bus));
            }
            if !(0.0..=1.0).contains(&r.m) {
                return err(format!("renewable at bus {} has m outside [0,1]", r.bus));
            }
            if r.i_lim < r.i_n {
                return err(format!("renewable at bus {} has I_lim < I_N", r.bus));
            }
            if self.buses[r.bus].kind != BusKind::RenewableTerminal {
                return err(format!(
                    "bus {} hosts a renewable but is not renewable_terminal",
                    r.bus
                ));
            }
        }
        if self.sync_gens.is_empty() {
            return err("at least one synchronous source is required".into());
        }
        Ok(())
    }
}

/// Load and validate a case file (UTF-8 JSON, see docs/case-schema.md).
pub fn load_case(path: impl AsRef<Path>) -> Result<GridModel, GridError> {
    let text = std::fs::read_to_string(path)?;
    let grid: GridModel = serde_json::from_str(&text)?;
    grid.validate()?;
    Ok(grid)
}

/// Write a case file in the canonical schema. `load_case` of the result
/// reproduces the model exactly.
pub fn save_case(grid: &GridModel, path: impl AsRef<Path>) -> Result<(), GridError> {
    let text = serde_json::to_string_pretty(grid).map_err(GridError::Parse)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Defaults used when converting synchronous generators to renewables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplacementParams {
    /// Explicit rated current; when absent it is derived from the replaced
    /// machine as I_N = 0.25 / x''_d (inverse of the case sizing rule).
    pub i_n: Option<f64>,
    pub m: f64,
    /// Ceiling factor applied to I_N (typical inverter headroom).
    pub i_lim_factor: Option<f64>,
}

impl Default for ReplacementParams {
    fn default() -> Self {
        ReplacementParams { i_n: None, m: 1.0, i_lim_factor: None }
    }
}

impl ReplacementParams {
    fn i_lim_factor(&self, kind: RenewableKind) -> f64 {
        self.i_lim_factor.unwrap_or(match kind {
            RenewableKind::Fips => 1.2,
            RenewableKind::Pips => 1.5,
        })
    }
}

/// Replace the listed synchronous generators with renewable units of the
/// given kind. Bus kinds are updated so feature encodings can discriminate
/// the two source types.
pub fn apply_replacement(
    grid: &GridModel,
    replace: &[usize],
    kind: RenewableKind,
    params: &ReplacementParams,
) -> Result<GridModel, GridError> {
    let mut out = grid.clone();
    for &bus in replace {
        let idx = out
            .sync_gens
            .iter()
            .position(|g| g.bus == bus)
            .ok_or(GridError::UnknownGenerator(bus))?;
        let gen = out.sync_gens.remove(idx);
        let i_n = params.i_n.unwrap_or(0.25 / gen.x_d2);
        let i_lim = params.i_lim_factor(kind) * i_n;
        out.renewables.push(RenewableUnit {
            bus,
            kind,
            i_n,
            m: params.m,
            i_lim,
            p0: params.m * i_n,
            i_dcb: i_n,
            i_qcb: 1.5 * i_n,
        });
        out.buses[bus].kind = BusKind::RenewableTerminal;
    }
    out.validate()?;
    Ok(out)
}

/// True iff every bus is reachable through in-service branches.
pub fn is_connected(grid: &GridModel, tau: &OperatingCondition) -> bool {
    debug_assert_eq!(tau.len(), grid.branch_count());
    let n = grid.bus_count();
    if n == 0 {
        return true;
    }
    let adj = grid.adjacency(tau);
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for &(u, _) in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                count += 1;
                stack.push(u);
            }
        }
    }
    count == n
}

mod complex_pair {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(z: &Complex64, s: S) -> Result<S::Ok, S::Error> {
        [z.re, z.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Complex64, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(Complex64::new(re, im))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn data_path(name: &str) -> std::path::PathBuf {
        testing::workspace_path("data").join(name)
    }

    #[test]
    fn ieee39_counts() {
        let grid = load_case(data_path("ieee39.json")).unwrap();
        assert_eq!(grid.bus_count(), 39);
        assert_eq!(grid.line_count(), 34);
        assert_eq!(grid.sync_gens.len(), 10);
    }

    #[test]
    fn ieee118_counts() {
        let grid = load_case(data_path("ieee118.json")).unwrap();
        assert_eq!(grid.bus_count(), 118);
        assert_eq!(grid.line_count(), 169);
        assert_eq!(grid.sync_gens.len(), 54);
    }

    #[test]
    fn two_bus_toy_file_roundtrip() {
        let grid = testing::two_bus();
        assert_eq!(grid.branch_count(), 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.json");
        save_case(&grid, &path).unwrap();
        let loaded = load_case(&path).unwrap();
        assert_eq!(loaded, grid);
        // second round trip is identity on the canonical schema
        let path2 = dir.path().join("toy2.json");
        save_case(&loaded, &path2).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            std::fs::read_to_string(&path2).unwrap()
        );
    }

    #[test]
    fn ieee_case_roundtrip() {
        let grid = load_case(data_path("ieee39.json")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.json");
        save_case(&grid, &path).unwrap();
        assert_eq!(load_case(&path).unwrap(), grid);
    }

    #[test]
    fn load_case_rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{not json").unwrap();
        assert!(matches!(load_case(&path), Err(GridError::Parse(_))));

        let mut grid = testing::two_bus();
        grid.branches[0].to_bus = 7; // dangling reference
        let path = dir.path().join("dangling.json");
        std::fs::write(&path, serde_json::to_string(&grid).unwrap()).unwrap();
        assert!(matches!(load_case(&path), Err(GridError::Validation(_))));

        let mut grid = testing::two_bus();
        grid.branches[0].z = num_complex::Complex64::new(0.0, 0.0);
        let path = dir.path().join("zero_z.json");
        std::fs::write(&path, serde_json::to_string(&grid).unwrap()).unwrap();
        assert!(matches!(load_case(&path), Err(GridError::Validation(_))));
    }

    #[test]
    fn replacement_swaps_sources_in_place() {
        let grid = load_case(data_path("ieee39.json")).unwrap();
        let gens: Vec<usize> = grid.sync_gens.iter().map(|g| g.bus).take(5).collect();
        let replaced =
            apply_replacement(&grid, &gens, RenewableKind::Fips, &ReplacementParams::default())
                .unwrap();
        assert_eq!(replaced.sync_gens.len(), 5);
        assert_eq!(replaced.renewables.len(), 5);
        assert_eq!(replaced.bus_count(), grid.bus_count());
        assert_eq!(replaced.branch_count(), grid.branch_count());
        for &bus in &gens {
            assert_eq!(replaced.buses[bus].kind, BusKind::RenewableTerminal);
        }
    }

    #[test]
    fn replacement_118_every_third() {
        let grid = load_case(data_path("ieee118.json")).unwrap();
        let gens: Vec<usize> =
            grid.sync_gens.iter().map(|g| g.bus).step_by(3).collect();
        assert_eq!(gens.len(), 18);
        let replaced =
            apply_replacement(&grid, &gens, RenewableKind::Fips, &ReplacementParams::default())
                .unwrap();
        assert_eq!(replaced.renewables.len(), 18);
        assert_eq!(replaced.sync_gens.len(), 36);
    }

    #[test]
    fn empty_replacement_is_identity() {
        let grid = testing::six_bus();
        let same =
            apply_replacement(&grid, &[], RenewableKind::Pips, &ReplacementParams::default())
                .unwrap();
        assert_eq!(same, grid);
    }

    #[test]
    fn replacement_unknown_generator() {
        let grid = testing::two_bus();
        let err =
            apply_replacement(&grid, &[1], RenewableKind::Fips, &ReplacementParams::default())
                .unwrap_err();
        assert!(matches!(err, GridError::UnknownGenerator(1)));
    }

    #[test]
    fn connectivity_base_and_leaf() {
        let grid = load_case(data_path("ieee39.json")).unwrap();
        let all = OperatingCondition::all_in_service(grid.branch_count());
        assert!(is_connected(&grid, &all));

        // bus 39's only line-side neighbors are via branches 1 (1-39) and 14 (9-39)
        let b39: Vec<usize> = grid
            .branches
            .iter()
            .filter(|b| b.from_bus == 38 || b.to_bus == 38)
            .map(|b| b.id)
            .collect();
        let tau = all.with_outages(&b39);
        assert!(!is_connected(&grid, &tau));
    }

    /// Union-find oracle for connectivity, coded independently of the BFS.
    fn connected_union_find(grid: &GridModel, tau: &OperatingCondition) -> bool {
        let n = grid.bus_count();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for b in &grid.branches {
            if tau.is_in_service(b.id) {
                let (a, c) = (find(&mut parent, b.from_bus), find(&mut parent, b.to_bus));
                parent[a] = c;
            }
        }
        let root = find(&mut parent, 0);
        (1..n).all(|v| find(&mut parent, v) == root)
    }

    #[test]
    fn connectivity_matches_union_find_oracle() {
        let grid = load_case(data_path("ieee39.json")).unwrap();
        let m = grid.branch_count();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let tau = OperatingCondition(
                (0..m).map(|_| rng.gen_bool(0.85)).collect::<Vec<bool>>(),
            );
            assert_eq!(is_connected(&grid, &tau), connected_union_find(&grid, &tau));
        }
    }
}
