//! End-of-line three-phase fault currents under a given operating condition.
//!
//! Synchronous machines are Norton sources folded into the Y-bus; renewable
//! units are voltage-controlled current sources evaluated on a low-voltage
//! ride-through law, so the solve iterates injections to a fixed point.
//! Injections from units outside the n-level neighborhood of the fault bus
//! are held at zero.

use std::collections::HashSet;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::grid::{is_connected, GridModel, OperatingCondition, RenewableKind, RenewableUnit};
use crate::matrices::{apply_fault, build_ybus, FaultDelta, LuFactor, MatrixError};

#[derive(Debug, thiserror::Error)]
pub enum FaultError {
    #[error("fixed-point iteration did not converge within {0} iterations")]
    NotConverged(usize),
    #[error("protected line {0} is out of service")]
    ProtectedLineOut(usize),
    #[error("operating condition leaves the grid disconnected")]
    Disconnected,
    #[error("branch {0} is not a transmission line")]
    NotALine(usize),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// Controlled-source low-voltage ride-through law: hold the pre-fault
/// current above `u_hold`, ramp reactive current with gain `k_q` on the dip
/// below it, saturate at the unit ceiling below `u_cut`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LvrtCurveParams {
    pub u_hold: f64,
    pub u_cut: f64,
    pub k_q: f64,
}

impl Default for LvrtCurveParams {
    fn default() -> Self {
        LvrtCurveParams { u_hold: 0.9, u_cut: 0.2, k_q: 1.5 }
    }
}

/// `[fault_solver]` configuration section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultConfig {
    /// Fixed-point tolerance on the injection change, per-unit.
    pub tol: f64,
    pub max_iter: usize,
    /// Iteration count after which updates are damped by 0.5.
    pub damping_after: usize,
    /// Fault admittance magnitude added on the faulted diagonal.
    #[serde(rename = "M")]
    pub fault_admittance: f64,
    pub n_levels: usize,
    pub lvrt: LvrtCurveParams,
}

impl Default for FaultConfig {
    fn default() -> Self {
        FaultConfig {
            tol: 1e-6,
            max_iter: 50,
            damping_after: 25,
            fault_admittance: 1e6,
            n_levels: 3,
            lvrt: LvrtCurveParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectionSource {
    Sync,
    Renewable,
    Zero,
}

/// Per-bus complex injections with provenance flags.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionVector {
    pub currents: Vec<Complex64>,
    pub sources: Vec<InjectionSource>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultSolution {
    /// Bus voltages under the fault.
    pub voltages: Vec<Complex64>,
    /// Current through the protected line, head end towards the fault.
    pub branch_current: Complex64,
    /// Injections consistent with `voltages`.
    pub injections: InjectionVector,
    pub iterations: usize,
    pub converged: bool,
}

/// FIPS voltage-current law in the terminal-voltage frame: the real part is
/// the active component, the imaginary part the reactive component.
pub fn fips_current(u1: f64, unit: &RenewableUnit, params: &LvrtCurveParams) -> Complex64 {
    debug_assert_eq!(unit.kind, RenewableKind::Fips);
    if u1 >= params.u_hold {
        Complex64::new(unit.m * unit.i_n, 0.0)
    } else if u1 >= params.u_cut {
        let i_q = (params.k_q * (params.u_hold - u1) * unit.i_n).min(unit.i_lim);
        let i_d = (unit.m * unit.i_n).min((unit.i_lim * unit.i_lim - i_q * i_q).max(0.0).sqrt());
        Complex64::new(i_d, i_q)
    } else {
        Complex64::new(0.0, unit.i_lim)
    }
}

/// PIPS voltage-current law: controlled source above the cutoff with P0/U as
/// the active component, crowbar equivalent impedance below it.
pub fn pips_current(u: f64, unit: &RenewableUnit, params: &LvrtCurveParams) -> Complex64 {
    debug_assert_eq!(unit.kind, RenewableKind::Pips);
    if u >= params.u_hold {
        Complex64::new((unit.p0 / u).min(unit.i_lim), 0.0)
    } else if u >= params.u_cut {
        let i_q = (params.k_q * (params.u_hold - u) * unit.i_n).min(unit.i_lim);
        let i_d = (unit.p0 / u).min((unit.i_lim * unit.i_lim - i_q * i_q).max(0.0).sqrt());
        Complex64::new(i_d, i_q)
    } else {
        let i = Complex64::new(u * unit.i_dcb, u * unit.i_qcb);
        if i.norm() > unit.i_lim {
            i * (unit.i_lim / i.norm())
        } else {
            i
        }
    }
}

fn injection_law(u: f64, unit: &RenewableUnit, params: &LvrtCurveParams) -> Complex64 {
    match unit.kind {
        RenewableKind::Fips => fips_current(u, unit, params),
        RenewableKind::Pips => pips_current(u, unit, params),
    }
}

/// Buses within `n` in-service hops of `fault_bus`.
pub fn neighborhood(
    grid: &GridModel,
    tau: &OperatingCondition,
    fault_bus: usize,
    n: usize,
) -> HashSet<usize> {
    let adj = grid.adjacency(tau);
    let mut dist = vec![usize::MAX; grid.bus_count()];
    let mut queue = std::collections::VecDeque::new();
    dist[fault_bus] = 0;
    queue.push_back(fault_bus);
    let mut out = HashSet::new();
    out.insert(fault_bus);
    while let Some(v) = queue.pop_front() {
        if dist[v] == n {
            continue;
        }
        for &(u, _) in &adj[v] {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                out.insert(u);
                queue.push_back(u);
            }
        }
    }
    out
}

/// Solve the three-phase fault at the end of line `p_l`.
///
/// The fixed point iterates simultaneous (Jacobi-style) injection updates
/// from the bus-voltage magnitudes until the largest injection change drops
/// below the configured tolerance. Each unit's current phasor is referenced
/// to the angle of the fault-state voltage solved from synchronous sources
/// alone, with the reactive component lagging by 90 degrees so the unit
/// delivers reactive power into the dip. That anchor is computed once per
/// fault: re-aligning to the full terminal voltage every iteration has no
/// fixed point for units adjacent to a bolted fault, whose terminal angle is
/// set almost entirely by their own injection and advances by a constant
/// rotation each pass.
pub fn solve_fault(
    grid: &GridModel,
    tau: &OperatingCondition,
    p_l: usize,
    cfg: &FaultConfig,
) -> Result<FaultSolution, FaultError> {
    let line = grid
        .branches
        .get(p_l)
        .filter(|b| b.kind == crate::grid::BranchKind::Line)
        .ok_or(FaultError::NotALine(p_l))?;
    if !tau.is_in_service(p_l) {
        return Err(FaultError::ProtectedLineOut(p_l));
    }
    if !is_connected(grid, tau) {
        return Err(FaultError::Disconnected);
    }
    let fault_bus = line.to_bus;
    let y = apply_fault(
        &build_ybus(grid, tau)?,
        &FaultDelta { bus: fault_bus, magnitude: cfg.fault_admittance },
    );
    let factor = LuFactor::new(&y)?;
    let n = grid.bus_count();

    let mut base = vec![Complex64::new(0.0, 0.0); n];
    let mut sources = vec![InjectionSource::Zero; n];
    for g in &grid.sync_gens {
        base[g.bus] += Complex64::new(g.emf, 0.0) / Complex64::new(0.0, g.x_d2);
        sources[g.bus] = InjectionSource::Sync;
    }

    let hood = neighborhood(grid, tau, fault_bus, cfg.n_levels);
    let active: Vec<&RenewableUnit> = grid
        .renewables
        .iter()
        .filter(|r| hood.contains(&r.bus))
        .collect();
    for r in &active {
        sources[r.bus] = InjectionSource::Renewable;
    }

    // phase anchors from the synchronous-only fault state
    let v0 = factor.solve(&base)?;
    let anchors: Vec<Complex64> = active
        .iter()
        .map(|r| {
            let a = v0[r.bus];
            if a.norm() > 0.0 {
                a / a.norm()
            } else {
                Complex64::new(1.0, 0.0)
            }
        })
        .collect();

    // pre-fault flat start: every unit at 1.0 per-unit
    let mut r_inj: Vec<Complex64> = active
        .iter()
        .zip(&anchors)
        .map(|(r, anchor)| injection_law(1.0, r, &cfg.lvrt).conj() * anchor)
        .collect();

    let mut rhs = vec![Complex64::new(0.0, 0.0); n];
    for it in 1..=cfg.max_iter {
        rhs.copy_from_slice(&base);
        for (r, inj) in active.iter().zip(&r_inj) {
            rhs[r.bus] += *inj;
        }
        let v = factor.solve(&rhs)?;

        let mut delta = 0.0f64;
        let mut next = Vec::with_capacity(active.len());
        for ((r, prev), anchor) in active.iter().zip(&r_inj).zip(&anchors) {
            let frame = injection_law(v[r.bus].norm(), r, &cfg.lvrt);
            let updated = frame.conj() * anchor;
            delta = delta.max((updated - prev).norm());
            next.push(if it > cfg.damping_after {
                0.5 * prev + 0.5 * updated
            } else {
                updated
            });
        }

        if delta < cfg.tol {
            let branch_current = (v[line.from_bus] - v[line.to_bus]) / line.z;
            return Ok(FaultSolution {
                voltages: v,
                branch_current,
                injections: InjectionVector { currents: rhs, sources },
                iterations: it,
                converged: true,
            });
        }
        r_inj = next;
    }
    Err(FaultError::NotConverged(cfg.max_iter))
}

/// |I| through the head end of `p_l` for the end-of-line fault; the quantity
/// the searchers maximize.
pub fn fault_current_magnitude(
    grid: &GridModel,
    tau: &OperatingCondition,
    p_l: usize,
    cfg: &FaultConfig,
) -> Result<f64, FaultError> {
    Ok(solve_fault(grid, tau, p_l, cfg)?.branch_current.norm())
}
