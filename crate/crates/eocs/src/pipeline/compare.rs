//! Method-comparison harness: runs the searchers and the trained network on
//! a shared problem corpus and scores everything against the
//! global-enumeration oracle, with per-problem wall times.

use std::collections::HashSet;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::dataset::SplitTag;
use super::metrics::{aggregate_scores, score_currents, EvalReport, SampleScore};
use super::PipelineError;
use crate::config::{DatasetConfig, MetricsConfig, SearchConfig};
use crate::fault::{fault_current_magnitude, FaultConfig};
use crate::features::encode;
use crate::grid::GridModel;
use crate::nn::{decode_eoc, pgnn_forward, PgnnModel};
use crate::search::{enumerate_global, enumerate_local, ga_search, EocsProblem, SearchResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Global,
    Local,
    Ga,
    Pgnn,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Global => "global",
            Method::Local => "local",
            Method::Ga => "ga",
            Method::Pgnn => "pgnn",
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "global" => Ok(Method::Global),
            "local" => Ok(Method::Local),
            "ga" => Ok(Method::Ga),
            "pgnn" => Ok(Method::Pgnn),
            other => Err(format!("unknown method '{other}'")),
        }
    }
}

/// Random problem corpus drawn like dataset keys (distinct, connected,
/// protection on an in-service line).
pub fn sample_problems(
    grid: &GridModel,
    count: usize,
    cfg: &DatasetConfig,
    seed: u64,
) -> Result<Vec<EocsProblem>, PipelineError> {
    let lines: Vec<usize> = grid
        .branches
        .iter()
        .filter(|b| b.switchable)
        .map(|b| b.id)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > 500 * count {
            return Err(PipelineError::ExhaustedSampling);
        }
        let n_out = rng.gen_range(cfg.outage_min..=cfg.outage_max);
        let mut pool = lines.clone();
        let mut tau = crate::grid::OperatingCondition::all_in_service(grid.branch_count());
        let mut ok = true;
        for _ in 0..n_out {
            if pool.is_empty() {
                ok = false;
                break;
            }
            let idx = rng.gen_range(0..pool.len());
            let line = pool.swap_remove(idx);
            let attempt = tau.with_outages(&[line]);
            if !crate::grid::is_connected(grid, &attempt) {
                ok = false;
                break;
            }
            tau = attempt;
        }
        if !ok {
            continue;
        }
        let in_service: Vec<usize> =
            lines.iter().copied().filter(|&l| tau.is_in_service(l)).collect();
        let Some(&p_l) = in_service.choose(&mut rng) else { continue };
        if used.insert((tau.0.clone(), p_l)) {
            out.push(EocsProblem { tau0: tau, p_l, k: cfg.k });
        }
    }
    Ok(out)
}

struct MethodOutcome {
    result: Option<SearchResult>,
    elapsed: Duration,
}

fn run_search_method(
    method: Method,
    grid: &GridModel,
    problem: &EocsProblem,
    search_cfg: &SearchConfig,
    fault_cfg: &FaultConfig,
    seed: u64,
) -> MethodOutcome {
    let started = Instant::now();
    let result = match method {
        Method::Global => enumerate_global(grid, problem, fault_cfg).ok(),
        Method::Local => enumerate_local(grid, problem, search_cfg.levels, fault_cfg).ok(),
        Method::Ga => ga_search(grid, problem, &search_cfg.ga, seed, fault_cfg).ok(),
        Method::Pgnn => unreachable!("handled separately"),
    };
    MethodOutcome { elapsed: started.elapsed(), result }
}

/// Run each method on each problem and score it against global enumeration.
/// The network row times encoding + forward + decoding only; its predicted
/// condition is then priced by one fault solve for the current metrics.
pub fn compare(
    grid: &GridModel,
    problems: &[EocsProblem],
    methods: &[Method],
    model: Option<&PgnnModel>,
    search_cfg: &SearchConfig,
    fault_cfg: &FaultConfig,
    metrics: &MetricsConfig,
    seed: u64,
) -> Result<EvalReport, PipelineError> {
    if problems.is_empty() {
        return Err(PipelineError::Format("empty problem corpus".into()));
    }
    let oracle: Vec<(SearchResult, Duration)> = problems
        .iter()
        .map(|p| {
            let started = Instant::now();
            let res = enumerate_global(grid, p, fault_cfg)
                .map_err(|e| PipelineError::Format(format!("oracle failed: {e}")))?;
            Ok::<_, PipelineError>((res, started.elapsed()))
        })
        .collect::<Result<_, _>>()?;

    let mut report = EvalReport::default();
    for &method in methods {
        let mut scores: Vec<SampleScore> = Vec::with_capacity(problems.len());
        let mut total = Duration::ZERO;
        match method {
            Method::Global => {
                for (res, elapsed) in &oracle {
                    scores.push(score_currents(Some(res.i_max), res.i_max, true, metrics));
                    total += *elapsed;
                }
            }
            Method::Pgnn => {
                let model = model.ok_or_else(|| {
                    PipelineError::Format("network comparison requires a checkpoint".into())
                })?;
                for (problem, (oracle_res, _)) in problems.iter().zip(&oracle) {
                    let started = Instant::now();
                    let fs = encode(grid, &problem.tau0, problem.p_l, &model.scaling)?;
                    let raw_scores = pgnn_forward(model, &fs)?;
                    let predicted = decode_eoc(&raw_scores, problem.k);
                    total += started.elapsed();

                    let outages: Vec<usize> = predicted
                        .iter()
                        .enumerate()
                        .filter(|(_, &b)| b)
                        .map(|(i, _)| i)
                        .collect();
                    let oc = predicted == oracle_res.eoc_label;
                    let tau_pred = problem.tau0.with_outages(&outages);
                    let i_pred =
                        fault_current_magnitude(grid, &tau_pred, problem.p_l, fault_cfg).ok();
                    scores.push(score_currents(i_pred, oracle_res.i_max, oc, metrics));
                }
            }
            Method::Local | Method::Ga => {
                for (problem, (oracle_res, _)) in problems.iter().zip(&oracle) {
                    let outcome =
                        run_search_method(method, grid, problem, search_cfg, fault_cfg, seed);
                    total += outcome.elapsed;
                    match outcome.result {
                        Some(res) => {
                            let oc = res.tau_star == oracle_res.tau_star;
                            scores.push(score_currents(
                                Some(res.i_max),
                                oracle_res.i_max,
                                oc,
                                metrics,
                            ));
                        }
                        None => scores.push(score_currents(None, oracle_res.i_max, false, metrics)),
                    }
                }
            }
        }
        let mean_ms = total.as_secs_f64() * 1000.0 / problems.len() as f64;
        report.rows.push(aggregate_scores(method.name(), &scores, metrics, mean_ms));
    }
    Ok(report)
}

/// Default corpus settings for `compare`: same key distribution as dataset
/// generation.
pub fn corpus_config(dataset: &DatasetConfig) -> DatasetConfig {
    DatasetConfig { train: 0, test: 0, ..dataset.clone() }
}

#[allow(dead_code)]
fn split_tag_name(tag: SplitTag) -> &'static str {
    match tag {
        SplitTag::Train => "train",
        SplitTag::Test => "test",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing;

    #[test]
    fn problems_are_distinct_and_valid() {
        let grid = testing::six_bus();
        let cfg = DatasetConfig { k: 2, outage_min: 0, outage_max: 1, ..Default::default() };
        let problems = sample_problems(&grid, 15, &cfg, 3).unwrap();
        assert_eq!(problems.len(), 15);
        let mut keys = HashSet::new();
        for p in &problems {
            assert!(p.validate(&grid).is_ok());
            assert!(keys.insert((p.tau0.0.clone(), p.p_l)));
        }
    }

    #[test]
    fn global_row_scores_perfectly() {
        let grid = testing::six_bus();
        let cfg = DatasetConfig { k: 2, outage_min: 0, outage_max: 1, ..Default::default() };
        let problems = sample_problems(&grid, 6, &cfg, 5).unwrap();
        let report = compare(
            &grid,
            &problems,
            &[Method::Global, Method::Local],
            None,
            &SearchConfig::default(),
            &FaultConfig::default(),
            &MetricsConfig::default(),
            0,
        )
        .unwrap();
        let global = &report.rows[0];
        assert_eq!(global.oc_acc, 100.0);
        assert_eq!(global.scc_acc, 100.0);
        assert_eq!(global.ps_acc, 100.0);
        for row in &report.rows {
            assert!(row.ordering_ok());
            assert!(row.oc_acc <= 100.0);
        }
    }

    #[test]
    fn local_misses_the_far_outage_corpus() {
        let grid = testing::far_outage_grid();
        let problem = EocsProblem {
            tau0: crate::grid::OperatingCondition::all_in_service(grid.branch_count()),
            p_l: testing::FAR_OUTAGE_PROTECTED,
            k: 1,
        };
        let report = compare(
            &grid,
            &[problem],
            &[Method::Global, Method::Local],
            None,
            &SearchConfig::default(),
            &FaultConfig::default(),
            &MetricsConfig::default(),
            0,
        )
        .unwrap();
        assert_eq!(report.rows[0].oc_acc, 100.0);
        assert_eq!(report.rows[1].oc_acc, 0.0);
        assert!(report.rows[1].scc_acc < 100.0);
    }
}
