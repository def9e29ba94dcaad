//! The extreme-operating-condition search problem and its baseline solvers:
//! global enumeration (the labeling oracle), neighborhood-restricted local
//! enumeration, and a genetic algorithm over outage bitstrings.

use std::collections::{HashMap, VecDeque};
use std::time::{Duration, Instant};

use itertools::Itertools;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fault::{fault_current_magnitude, FaultConfig, FaultError};
use crate::grid::{is_connected, BranchKind, GridModel, OperatingCondition};

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("no candidate operating condition could be evaluated")]
    NoFeasibleCandidate,
}

/// One EOCS instance: initial condition, protected line and outage budget.
///
/// Only three-phase end-of-line faults are considered. `k` is typically 1
/// to 3; zero is allowed and makes the initial condition the only candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EocsProblem {
    pub tau0: OperatingCondition,
    pub p_l: usize,
    pub k: usize,
}

impl EocsProblem {
    pub fn new(
        grid: &GridModel,
        tau0: OperatingCondition,
        p_l: usize,
        k: usize,
    ) -> Result<Self, SearchError> {
        let problem = EocsProblem { tau0, p_l, k };
        problem.validate(grid)?;
        Ok(problem)
    }

    pub fn validate(&self, grid: &GridModel) -> Result<(), SearchError> {
        let err = |m: String| Err(SearchError::InvalidProblem(m));
        if self.tau0.len() != grid.branch_count() {
            return err("tau0 length does not match branch count".into());
        }
        match grid.branches.get(self.p_l) {
            Some(b) if b.kind == BranchKind::Line => {}
            _ => return err(format!("protected branch {} is not a line", self.p_l)),
        }
        if !self.tau0.is_in_service(self.p_l) {
            return err(format!("protected line {} is out of service in tau0", self.p_l));
        }
        for b in &grid.branches {
            if !b.switchable && !self.tau0.is_in_service(b.id) {
                return err(format!("non-switchable branch {} is out of service", b.id));
            }
        }
        if !is_connected(grid, &self.tau0) {
            return err("tau0 leaves the grid disconnected".into());
        }
        Ok(())
    }
}

/// Search outcome. `eoc_label` marks the lines switched off relative to the
/// initial condition (at most `k` of them, never the protected line);
/// `tau_star` is the resulting operating condition and `i_max` its
/// end-of-line fault current.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub eoc_label: Vec<bool>,
    pub tau_star: OperatingCondition,
    pub i_max: f64,
    /// Fault solves attempted.
    pub evaluations: usize,
    /// Candidates dropped because the fault solve did not converge.
    pub skipped: usize,
    /// Not serialized: wall time is never byte-reproducible across runs.
    #[serde(skip, default)]
    pub wall_time: Duration,
}

impl SearchResult {
    fn new(
        problem: &EocsProblem,
        tau_star: OperatingCondition,
        i_max: f64,
        evaluations: usize,
        skipped: usize,
        wall_time: Duration,
    ) -> Self {
        let eoc_label = problem
            .tau0
            .0
            .iter()
            .zip(&tau_star.0)
            .map(|(&before, &after)| before && !after)
            .collect();
        SearchResult { eoc_label, tau_star, i_max, evaluations, skipped, wall_time }
    }
}

/// Lines eligible for additional outages: switchable, in service in `tau0`
/// and distinct from the protected line.
fn eligible_lines(grid: &GridModel, problem: &EocsProblem) -> Vec<usize> {
    grid.branches
        .iter()
        .filter(|b| b.switchable && b.id != problem.p_l && problem.tau0.is_in_service(b.id))
        .map(|b| b.id)
        .collect()
}

fn candidates_from(
    problem: &EocsProblem,
    grid: &GridModel,
    lines: &[usize],
) -> Vec<OperatingCondition> {
    let mut out = Vec::new();
    for j in 0..=problem.k.min(lines.len()) {
        for combo in lines.iter().copied().combinations(j) {
            let tau = problem.tau0.with_outages(&combo);
            if is_connected(grid, &tau) {
                out.push(tau);
            }
        }
    }
    out
}

/// Feasible candidate conditions: every connected tau obtained from tau0 by
/// switching off up to k eligible lines; the initial condition first, then
/// ordered by outage count and lexicographic outage set.
pub fn candidates(problem: &EocsProblem, grid: &GridModel) -> Vec<OperatingCondition> {
    candidates_from(problem, grid, &eligible_lines(grid, problem))
}

/// Total ordering used to pick the winner: larger current first, then fewer
/// outages, then the lexicographically smallest outage set. Makes labels
/// unique for supervised training.
fn better(a: &(OperatingCondition, f64), b: &(OperatingCondition, f64)) -> bool {
    if a.1 != b.1 {
        return a.1 > b.1;
    }
    let (oa, ob) = (a.0.outages(), b.0.outages());
    if oa.len() != ob.len() {
        return oa.len() < ob.len();
    }
    oa < ob
}

fn evaluate_candidates(
    grid: &GridModel,
    problem: &EocsProblem,
    cands: Vec<OperatingCondition>,
    cfg: &FaultConfig,
    started: Instant,
) -> Result<SearchResult, SearchError> {
    let evaluations = cands.len();
    // candidate order is deterministic, and the order-preserving collect
    // makes the reduction independent of worker scheduling
    let results: Vec<Option<(OperatingCondition, f64)>> = cands
        .into_par_iter()
        .map(|tau| match fault_current_magnitude(grid, &tau, problem.p_l, cfg) {
            Ok(i) => Some((tau, i)),
            Err(FaultError::NotConverged(_)) => None,
            Err(_) => None,
        })
        .collect();
    let skipped = results.iter().filter(|r| r.is_none()).count();
    let mut best: Option<(OperatingCondition, f64)> = None;
    for entry in results.into_iter().flatten() {
        match &best {
            Some(b) if !better(&entry, b) => {}
            _ => best = Some(entry),
        }
    }
    let (tau_star, i_max) = best.ok_or(SearchError::NoFeasibleCandidate)?;
    Ok(SearchResult::new(problem, tau_star, i_max, evaluations, skipped, started.elapsed()))
}

/// Exhaustive search over the full candidate set; the reference oracle.
pub fn enumerate_global(
    grid: &GridModel,
    problem: &EocsProblem,
    cfg: &FaultConfig,
) -> Result<SearchResult, SearchError> {
    problem.validate(grid)?;
    let started = Instant::now();
    let cands = candidates(problem, grid);
    evaluate_candidates(grid, problem, cands, cfg, started)
}

/// In-service hop distances from both endpoints of the protected line.
fn distances_from_protection(grid: &GridModel, problem: &EocsProblem) -> Vec<usize> {
    let adj = grid.adjacency(&problem.tau0);
    let line = &grid.branches[problem.p_l];
    let mut dist = vec![usize::MAX; grid.bus_count()];
    let mut queue = VecDeque::new();
    for start in [line.from_bus, line.to_bus] {
        if dist[start] != 0 {
            dist[start] = 0;
            queue.push_back(start);
        }
    }
    while let Some(v) = queue.pop_front() {
        for &(u, _) in &adj[v] {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    dist
}

/// Enumeration restricted to lines whose endpoints both lie within `levels`
/// hops of the protected line's endpoints.
pub fn enumerate_local(
    grid: &GridModel,
    problem: &EocsProblem,
    levels: usize,
    cfg: &FaultConfig,
) -> Result<SearchResult, SearchError> {
    problem.validate(grid)?;
    let started = Instant::now();
    let dist = distances_from_protection(grid, problem);
    let lines: Vec<usize> = eligible_lines(grid, problem)
        .into_iter()
        .filter(|&id| {
            let b = &grid.branches[id];
            dist[b.from_bus] <= levels && dist[b.to_bus] <= levels
        })
        .collect();
    let cands = candidates_from(problem, grid, &lines);
    evaluate_candidates(grid, problem, cands, cfg, started)
}

/// Genetic-algorithm knobs. The defaults are the shipped configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GaParams {
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
}

impl Default for GaParams {
    fn default() -> Self {
        GaParams {
            population: 50,
            generations: 100,
            tournament: 3,
            crossover_rate: 0.9,
            mutation_rate: 0.05,
        }
    }
}

impl GaParams {
    fn validate(&self) -> Result<(), SearchError> {
        if self.population == 0 || self.population % 2 != 0 {
            return Err(SearchError::InvalidProblem("GA population must be even".into()));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate)
            || !(0.0..=1.0).contains(&self.mutation_rate)
        {
            return Err(SearchError::InvalidProblem("GA rates must lie in [0,1]".into()));
        }
        if self.tournament == 0 {
            return Err(SearchError::InvalidProblem(
                "GA tournament size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Repair a genome into a feasible outage set: drop bits in shuffled order
/// that would exceed the budget or disconnect the grid.
fn repair(
    genome: &[bool],
    lines: &[usize],
    problem: &EocsProblem,
    grid: &GridModel,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut proposed: Vec<usize> = genome
        .iter()
        .enumerate()
        .filter(|(_, &on)| on)
        .map(|(i, _)| lines[i])
        .collect();
    proposed.shuffle(rng);
    let mut accepted: Vec<usize> = Vec::new();
    for line in proposed {
        if accepted.len() == problem.k {
            break;
        }
        accepted.push(line);
        let tau = problem.tau0.with_outages(&accepted);
        if !is_connected(grid, &tau) {
            accepted.pop();
        }
    }
    accepted.sort_unstable();
    accepted
}

/// Genetic search over fixed-length outage bitstrings with repair,
/// tournament selection, single-point crossover and bit-flip mutation.
/// Deterministic for a given seed; returns the best individual ever seen.
pub fn ga_search(
    grid: &GridModel,
    problem: &EocsProblem,
    params: &GaParams,
    seed: u64,
    cfg: &FaultConfig,
) -> Result<SearchResult, SearchError> {
    problem.validate(grid)?;
    params.validate()?;
    let started = Instant::now();
    let lines = eligible_lines(grid, problem);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cache: HashMap<Vec<usize>, Option<f64>> = HashMap::new();
    let mut evaluations = 0usize;
    let mut skipped = 0usize;
    let mut best: Option<(OperatingCondition, f64)> = None;

    let bit_probability =
        (problem.k.max(1) as f64 / lines.len().max(1) as f64).min(1.0);
    let mut population: Vec<Vec<usize>> = (0..params.population)
        .map(|_| {
            let genome: Vec<bool> =
                (0..lines.len()).map(|_| rng.gen_bool(bit_probability)).collect();
            repair(&genome, &lines, problem, grid, &mut rng)
        })
        .collect();

    let consume_generation = |population: &[Vec<usize>],
                                  cache: &mut HashMap<Vec<usize>, Option<f64>>,
                                  evaluations: &mut usize,
                                  skipped: &mut usize,
                                  best: &mut Option<(OperatingCondition, f64)>| {
        // evaluate unseen outage sets in parallel, in a deterministic order
        let unseen: Vec<Vec<usize>> = population
            .iter()
            .filter(|o| !cache.contains_key(*o))
            .cloned()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let fitted: Vec<(Vec<usize>, Option<f64>)> = unseen
            .into_par_iter()
            .map(|outages| {
                let tau = problem.tau0.with_outages(&outages);
                let fit = fault_current_magnitude(grid, &tau, problem.p_l, cfg).ok();
                (outages, fit)
            })
            .collect();
        for (outages, fit) in fitted {
            *evaluations += 1;
            if fit.is_none() {
                *skipped += 1;
            }
            cache.insert(outages, fit);
        }
        for outages in population {
            if let Some(i) = cache[outages] {
                let entry = (problem.tau0.with_outages(outages), i);
                match &best {
                    Some(b) if !better(&entry, b) => {}
                    _ => *best = Some(entry),
                }
            }
        }
    };

    for _generation in 0..params.generations {
        consume_generation(&population, &mut cache, &mut evaluations, &mut skipped, &mut best);

        let fitness = |o: &Vec<usize>| cache[o].unwrap_or(f64::NEG_INFINITY);
        let mut next: Vec<Vec<usize>> = Vec::with_capacity(params.population);
        // elitism keeps the best-so-far outage set alive
        if let Some((tau, _)) = &best {
            next.push(tau.outages());
        }
        while next.len() < params.population {
            let select = |rng: &mut ChaCha8Rng| -> Vec<bool> {
                let winner = (0..params.tournament)
                    .map(|_| rng.gen_range(0..population.len()))
                    .max_by(|&a, &b| {
                        fitness(&population[a])
                            .partial_cmp(&fitness(&population[b]))
                            .unwrap()
                            .then(b.cmp(&a))
                    })
                    .unwrap();
                let mut genome = vec![false; lines.len()];
                for &line in &population[winner] {
                    let idx = lines.iter().position(|&l| l == line).unwrap();
                    genome[idx] = true;
                }
                genome
            };
            let mut a = select(&mut rng);
            let mut b = select(&mut rng);
            if !lines.is_empty() && rng.gen_bool(params.crossover_rate) {
                let cut = rng.gen_range(0..lines.len());
                for i in cut..lines.len() {
                    std::mem::swap(&mut a[i], &mut b[i]);
                }
            }
            for genome in [&mut a, &mut b] {
                for bit in genome.iter_mut() {
                    if rng.gen_bool(params.mutation_rate) {
                        *bit = !*bit;
                    }
                }
            }
            next.push(repair(&a, &lines, problem, grid, &mut rng));
            if next.len() < params.population {
                next.push(repair(&b, &lines, problem, grid, &mut rng));
            }
        }
        population = next;
    }
    consume_generation(&population, &mut cache, &mut evaluations, &mut skipped, &mut best);

    let (tau_star, i_max) = best.ok_or(SearchError::NoFeasibleCandidate)?;
    Ok(SearchResult::new(problem, tau_star, i_max, evaluations, skipped, started.elapsed()))
}
