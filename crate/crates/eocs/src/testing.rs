//! Small fixture systems used by unit tests, the acceptance suite and the
//! documentation examples.

use std::path::PathBuf;

use num_complex::Complex64;

use crate::grid::{
    Branch, BranchKind, Bus, BusKind, GridModel, RenewableKind, RenewableUnit, SyncGenerator,
};

/// Path to a workspace-level directory (`data`, `configs`, ...).
pub fn workspace_path(dir: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(dir)
}

fn bus(id: usize, kind: BusKind) -> Bus {
    Bus { id, kind, base_kv: 110.0 }
}

fn line(id: usize, from_bus: usize, to_bus: usize, x: f64) -> Branch {
    Branch {
        id,
        from_bus,
        to_bus,
        z: Complex64::new(0.0, x),
        kind: BranchKind::Line,
        switchable: true,
    }
}

fn transformer(id: usize, from_bus: usize, to_bus: usize, x: f64) -> Branch {
    Branch {
        id,
        from_bus,
        to_bus,
        z: Complex64::new(0.0, x),
        kind: BranchKind::Transformer,
        switchable: false,
    }
}

fn sync(bus: usize, x_d2: f64) -> SyncGenerator {
    SyncGenerator { bus, x_d2, emf: 1.0 }
}

fn fips(bus: usize, i_n: f64, m: f64) -> RenewableUnit {
    RenewableUnit {
        bus,
        kind: RenewableKind::Fips,
        i_n,
        m,
        i_lim: 1.2 * i_n,
        p0: 0.0,
        i_dcb: 0.0,
        i_qcb: 0.0,
    }
}

fn pips(bus: usize, i_n: f64, m: f64) -> RenewableUnit {
    RenewableUnit {
        bus,
        kind: RenewableKind::Pips,
        i_n,
        m,
        i_lim: 1.5 * i_n,
        p0: m * i_n,
        i_dcb: i_n,
        i_qcb: 1.5 * i_n,
    }
}

/// One generator, one line: bus 0 (gen, x''_d = 0.2) -- z = j0.1 -- bus 1.
pub fn two_bus() -> GridModel {
    let grid = GridModel {
        name: "two-bus".into(),
        base_mva: 100.0,
        buses: vec![bus(0, BusKind::GenTerminal), bus(1, BusKind::Plain)],
        branches: vec![line(0, 0, 1, 0.1)],
        sync_gens: vec![sync(0, 0.2)],
        renewables: vec![],
    };
    grid.validate().expect("fixture is valid");
    grid
}

/// Two synchronous machines and one FIPS unit feeding a common bus.
///
/// Used by the fixed-point oracle tests: exactly one renewable, so the
/// nonlinear injection reduces to a scalar equation in its terminal voltage.
pub fn four_bus_mixed() -> GridModel {
    let grid = GridModel {
        name: "four-bus-mixed".into(),
        base_mva: 100.0,
        buses: vec![
            bus(0, BusKind::GenTerminal),
            bus(1, BusKind::GenTerminal),
            bus(2, BusKind::RenewableTerminal),
            bus(3, BusKind::Plain),
        ],
        branches: vec![
            line(0, 0, 3, 0.10),
            line(1, 1, 3, 0.15),
            line(2, 2, 3, 0.05),
            line(3, 0, 1, 0.20),
        ],
        sync_gens: vec![sync(0, 0.2), sync(1, 0.3)],
        renewables: vec![fips(2, 1.0, 0.8)],
    };
    grid.validate().expect("fixture is valid");
    grid
}

/// Meshed six-bus system with both renewable kinds; the standard small
/// system for exhaustive-search checks (k = 2 keeps the candidate space
/// enumerable by hand).
pub fn six_bus() -> GridModel {
    let grid = GridModel {
        name: "six-bus".into(),
        base_mva: 100.0,
        buses: vec![
            bus(0, BusKind::GenTerminal),
            bus(1, BusKind::GenTerminal),
            bus(2, BusKind::RenewableTerminal),
            bus(3, BusKind::RenewableTerminal),
            bus(4, BusKind::Plain),
            bus(5, BusKind::Plain),
        ],
        branches: vec![
            line(0, 0, 2, 0.08),
            line(1, 0, 4, 0.10),
            line(2, 1, 3, 0.09),
            line(3, 1, 5, 0.12),
            line(4, 2, 4, 0.07),
            line(5, 3, 5, 0.06),
            line(6, 4, 5, 0.11),
            line(7, 2, 3, 0.10),
            transformer(8, 0, 1, 0.05),
        ],
        sync_gens: vec![sync(0, 0.2), sync(1, 0.25)],
        renewables: vec![fips(2, 1.0, 0.8), pips(3, 1.0, 0.9)],
    };
    grid.validate().expect("fixture is valid");
    grid
}

/// Four buses, five lines plus a transformer tie, meshed densely enough
/// that removing any two of the four non-protected lines keeps the system
/// connected (the tie is not an outage candidate).
pub fn meshed_five_line() -> GridModel {
    let grid = GridModel {
        name: "meshed-five-line".into(),
        base_mva: 100.0,
        buses: vec![
            bus(0, BusKind::GenTerminal),
            bus(1, BusKind::Plain),
            bus(2, BusKind::XfmrHigh),
            bus(3, BusKind::GenTerminal),
        ],
        branches: vec![
            line(0, 0, 1, 0.10),
            line(1, 0, 2, 0.12),
            line(2, 1, 2, 0.08),
            line(3, 0, 3, 0.09),
            line(4, 1, 3, 0.11),
            transformer(5, 2, 3, 0.06),
        ],
        sync_gens: vec![sync(0, 0.2), sync(3, 0.3)],
        renewables: vec![],
    };
    grid.validate().expect("fixture is valid");
    grid
}

/// Radial system where the current-maximizing outage sits five hops away
/// from the protected line.
///
/// The source at bus 0 reaches the fault bus 5 through the protected chain
/// 0-1-2-3-4-5 and, in parallel, through a trunk line 0-6 that fans out into
/// two bypass corridors re-entering at bus 5. With budget k = 1, only the
/// single trunk outage removes both bypasses at once, and both trunk
/// endpoints lie outside a 3-level neighborhood of the protected line.
pub fn far_outage_grid() -> GridModel {
    let mut buses: Vec<Bus> = (0..13).map(|i| bus(i, BusKind::Plain)).collect();
    buses[0].kind = BusKind::GenTerminal;
    let grid = GridModel {
        name: "far-outage".into(),
        base_mva: 100.0,
        buses,
        branches: vec![
            line(0, 0, 1, 0.03),
            line(1, 1, 2, 0.03),
            line(2, 2, 3, 0.03),
            line(3, 3, 4, 0.03),
            line(4, 4, 5, 0.03), // protected line
            line(5, 0, 6, 0.02), // trunk: the far maximizing outage
            line(6, 6, 7, 0.03),
            line(7, 7, 8, 0.03),
            line(8, 8, 9, 0.03),
            line(9, 9, 5, 0.03),
            line(10, 6, 10, 0.03),
            line(11, 10, 11, 0.03),
            line(12, 11, 12, 0.03),
            line(13, 12, 5, 0.03),
        ],
        sync_gens: vec![sync(0, 0.05)],
        renewables: vec![],
    };
    grid.validate().expect("fixture is valid");
    grid
}

/// Protected-line id of [`far_outage_grid`].
pub const FAR_OUTAGE_PROTECTED: usize = 4;
/// Trunk-line id whose outage maximizes the fault current in
/// [`far_outage_grid`].
pub const FAR_OUTAGE_TRUNK: usize = 5;

/// Simple path 0-1-...-(n-1) with a generator at bus 0.
pub fn path_grid(n: usize) -> GridModel {
    assert!(n >= 2);
    let mut buses: Vec<Bus> = (0..n).map(|i| bus(i, BusKind::Plain)).collect();
    buses[0].kind = BusKind::GenTerminal;
    let branches = (0..n - 1).map(|i| line(i, i, i + 1, 0.1)).collect();
    let grid = GridModel {
        name: format!("path-{n}"),
        base_mva: 100.0,
        buses,
        branches,
        sync_gens: vec![sync(0, 0.2)],
        renewables: vec![],
    };
    grid.validate().expect("fixture is valid");
    grid
}

/// Random connected system: a random spanning tree plus `extra` chords,
/// generator at bus 0. Deterministic for a given RNG state.
pub fn random_grid(rng: &mut impl rand::Rng, n: usize, extra: usize) -> GridModel {
    use std::collections::HashSet;
    assert!(n >= 2);
    let mut buses: Vec<Bus> = (0..n).map(|i| bus(i, BusKind::Plain)).collect();
    buses[0].kind = BusKind::GenTerminal;
    let mut pairs = HashSet::new();
    let mut branches = Vec::new();
    for v in 1..n {
        let u = rng.gen_range(0..v);
        pairs.insert((u, v));
        branches.push(line(branches.len(), u, v, rng.gen_range(0.02..0.2)));
    }
    let mut attempts = 0;
    while branches.len() < n - 1 + extra && attempts < 50 * extra.max(1) {
        attempts += 1;
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        let key = (u.min(v), u.max(v));
        if u != v && !pairs.contains(&key) {
            pairs.insert(key);
            branches.push(line(branches.len(), key.0, key.1, rng.gen_range(0.02..0.2)));
        }
    }
    let grid = GridModel {
        name: format!("random-{n}"),
        base_mva: 100.0,
        buses,
        branches,
        sync_gens: vec![sync(0, 0.2)],
        renewables: vec![],
    };
    grid.validate().expect("fixture is valid");
    grid
}
