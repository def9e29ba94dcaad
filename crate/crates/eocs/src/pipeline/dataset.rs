//! Supervised dataset generation: random initial conditions labeled by the
//! global-enumeration oracle, with a binary on-disk format.

use std::collections::HashSet;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::PipelineError;
use crate::config::DatasetConfig;
use crate::fault::FaultConfig;
use crate::grid::{is_connected, BranchKind, GridModel, OperatingCondition};
use crate::search::{enumerate_global, EocsProblem, SearchError};

/// One labeled instance: the lines the oracle switches off (at most k) and
/// the fault current they produce.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tau0: OperatingCondition,
    pub p_l: usize,
    pub label: Vec<bool>,
    pub i_max_oracle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub split: SplitTag,
    pub k: usize,
    pub outage_range: (usize, usize),
    pub seed: u64,
    pub case_name: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Random (tau0, p_l) key: up to `outage_max` connected-preserving outages
/// and a protection location drawn among the in-service lines.
fn draw_key(
    rng: &mut ChaCha8Rng,
    grid: &GridModel,
    lines: &[usize],
    cfg: &DatasetConfig,
) -> Option<(OperatingCondition, usize)> {
    let n_out = rng.gen_range(cfg.outage_min..=cfg.outage_max);
    let mut pool = lines.to_vec();
    let mut tau = OperatingCondition::all_in_service(grid.branch_count());
    for _ in 0..n_out {
        if pool.is_empty() {
            return None;
        }
        let idx = rng.gen_range(0..pool.len());
        let line = pool.swap_remove(idx);
        let attempt = tau.with_outages(&[line]);
        if !is_connected(grid, &attempt) {
            return None;
        }
        tau = attempt;
    }
    let in_service: Vec<usize> =
        lines.iter().copied().filter(|&l| tau.is_in_service(l)).collect();
    let p_l = *in_service.choose(rng)?;
    Some((tau, p_l))
}

/// Draw `count` distinct labeled samples, excluding `used` keys. The RNG
/// stream is consumed sequentially, so a fixed seed fully determines the
/// dataset; labeling fans out over a worker pool.
fn fill_samples(
    grid: &GridModel,
    cfg: &DatasetConfig,
    fault_cfg: &FaultConfig,
    rng: &mut ChaCha8Rng,
    used: &mut HashSet<(Vec<bool>, usize)>,
    count: usize,
) -> Result<Vec<Sample>, PipelineError> {
    let lines: Vec<usize> = grid
        .branches
        .iter()
        .filter(|b| b.kind == BranchKind::Line && b.switchable)
        .map(|b| b.id)
        .collect();
    let mut samples = Vec::with_capacity(count);
    let mut dry_spells = 0usize;
    while samples.len() < count {
        // draw a chunk of fresh keys, then label them in parallel
        let chunk_target = (count - samples.len()).min(256);
        let mut chunk = Vec::with_capacity(chunk_target);
        let mut attempts = 0;
        while chunk.len() < chunk_target && attempts < 200 * chunk_target {
            attempts += 1;
            if let Some((tau, p_l)) = draw_key(rng, grid, &lines, cfg) {
                if used.insert((tau.0.clone(), p_l)) {
                    chunk.push((tau, p_l));
                }
            }
        }
        if chunk.is_empty() {
            return Err(PipelineError::ExhaustedSampling);
        }
        let labeled: Vec<Option<Sample>> = chunk
            .into_par_iter()
            .map(|(tau0, p_l)| {
                let problem = EocsProblem { tau0: tau0.clone(), p_l, k: cfg.k };
                match enumerate_global(grid, &problem, fault_cfg) {
                    Ok(res) => Some(Sample {
                        tau0,
                        p_l,
                        label: res.eoc_label,
                        i_max_oracle: res.i_max,
                    }),
                    Err(SearchError::NoFeasibleCandidate) => None,
                    Err(SearchError::InvalidProblem(_)) => None,
                }
            })
            .collect();
        let before = samples.len();
        samples.extend(labeled.into_iter().flatten().take(count - samples.len()));
        if samples.len() == before {
            dry_spells += 1;
            if dry_spells > 20 {
                return Err(PipelineError::ExhaustedSampling);
            }
        } else {
            dry_spells = 0;
        }
    }
    Ok(samples)
}

/// Generate one dataset. Deterministic for a given (grid, config, seed).
pub fn generate_dataset(
    grid: &GridModel,
    count: usize,
    cfg: &DatasetConfig,
    fault_cfg: &FaultConfig,
    split: SplitTag,
) -> Result<Dataset, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut used = HashSet::new();
    let samples = fill_samples(grid, cfg, fault_cfg, &mut rng, &mut used, count)?;
    Ok(Dataset {
        samples,
        split,
        k: cfg.k,
        outage_range: (cfg.outage_min, cfg.outage_max),
        seed: cfg.seed,
        case_name: grid.name.clone(),
    })
}

/// Generate train and test splits from one RNG stream; their (tau0, p_l)
/// keys never overlap.
pub fn generate_split(
    grid: &GridModel,
    cfg: &DatasetConfig,
    fault_cfg: &FaultConfig,
) -> Result<(Dataset, Dataset), PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut used = HashSet::new();
    let train = fill_samples(grid, cfg, fault_cfg, &mut rng, &mut used, cfg.train)?;
    let test = fill_samples(grid, cfg, fault_cfg, &mut rng, &mut used, cfg.test)?;
    let mk = |samples, split| Dataset {
        samples,
        split,
        k: cfg.k,
        outage_range: (cfg.outage_min, cfg.outage_max),
        seed: cfg.seed,
        case_name: grid.name.clone(),
    };
    Ok((mk(train, SplitTag::Train), mk(test, SplitTag::Test)))
}

const MAGIC: &[u8; 4] = b"EOCD";
const VERSION: u32 = 1;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn header_hash(ds: &Dataset, n: usize, m: usize) -> u64 {
    let mut bytes = Vec::new();
    bytes.extend((n as u64).to_le_bytes());
    bytes.extend((m as u64).to_le_bytes());
    bytes.extend((ds.k as u64).to_le_bytes());
    bytes.extend((ds.outage_range.0 as u64).to_le_bytes());
    bytes.extend((ds.outage_range.1 as u64).to_le_bytes());
    bytes.extend(ds.seed.to_le_bytes());
    bytes.extend(ds.case_name.as_bytes());
    fnv1a64(&bytes)
}

/// Binary dataset file: header with counts, dimensions and a config hash,
/// then fixed-width sample records.
pub fn save_dataset(ds: &Dataset, n: usize, path: impl AsRef<Path>) -> Result<(), PipelineError> {
    let m = ds.samples.first().map(|s| s.tau0.len()).unwrap_or(0);
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(matches!(ds.split, SplitTag::Test) as u32).to_le_bytes())?;
    w.write_all(&(n as u32).to_le_bytes())?;
    w.write_all(&(m as u32).to_le_bytes())?;
    w.write_all(&(ds.k as u32).to_le_bytes())?;
    w.write_all(&(ds.outage_range.0 as u32).to_le_bytes())?;
    w.write_all(&(ds.outage_range.1 as u32).to_le_bytes())?;
    w.write_all(&ds.seed.to_le_bytes())?;
    w.write_all(&(ds.case_name.len() as u32).to_le_bytes())?;
    w.write_all(ds.case_name.as_bytes())?;
    w.write_all(&header_hash(ds, n, m).to_le_bytes())?;
    w.write_all(&(ds.samples.len() as u64).to_le_bytes())?;
    for s in &ds.samples {
        for &b in &s.tau0.0 {
            w.write_all(&[b as u8])?;
        }
        w.write_all(&(s.p_l as u32).to_le_bytes())?;
        for &b in &s.label {
            w.write_all(&[b as u8])?;
        }
        w.write_all(&s.i_max_oracle.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, PipelineError> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(PipelineError::Format("bad dataset magic".into()));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    let mut read_u32 = |r: &mut BufReader<std::fs::File>| -> Result<u32, PipelineError> {
        r.read_exact(&mut u32buf)?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(PipelineError::Format(format!("dataset version {version}")));
    }
    let split = if read_u32(&mut r)? == 0 { SplitTag::Train } else { SplitTag::Test };
    let n = read_u32(&mut r)? as usize;
    let m = read_u32(&mut r)? as usize;
    let k = read_u32(&mut r)? as usize;
    let omin = read_u32(&mut r)? as usize;
    let omax = read_u32(&mut r)? as usize;
    r.read_exact(&mut u64buf)?;
    let seed = u64::from_le_bytes(u64buf);
    let name_len = read_u32(&mut r)? as usize;
    let mut name_bytes = vec![0u8; name_len];
    r.read_exact(&mut name_bytes)?;
    let case_name = String::from_utf8(name_bytes)
        .map_err(|e| PipelineError::Format(e.to_string()))?;
    r.read_exact(&mut u64buf)?;
    let stored_hash = u64::from_le_bytes(u64buf);
    r.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;

    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let mut tau = vec![0u8; m];
        r.read_exact(&mut tau)?;
        r.read_exact(&mut u32buf)?;
        let p_l = u32::from_le_bytes(u32buf) as usize;
        let mut label = vec![0u8; m];
        r.read_exact(&mut label)?;
        r.read_exact(&mut u64buf)?;
        let i_max_oracle = f64::from_le_bytes(u64buf);
        samples.push(Sample {
            tau0: OperatingCondition(tau.into_iter().map(|b| b != 0).collect()),
            p_l,
            label: label.into_iter().map(|b| b != 0).collect(),
            i_max_oracle,
        });
    }
    let ds = Dataset { samples, split, k, outage_range: (omin, omax), seed, case_name };
    if header_hash(&ds, n, m) != stored_hash {
        return Err(PipelineError::Format("dataset header hash mismatch".into()));
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing;

    fn small_cfg() -> DatasetConfig {
        DatasetConfig { k: 2, outage_min: 0, outage_max: 2, train: 12, test: 5, seed: 9 }
    }

    #[test]
    fn generated_samples_respect_constraints() {
        let grid = testing::six_bus();
        let cfg = small_cfg();
        let fault_cfg = FaultConfig::default();
        let (train, test) = generate_split(&grid, &cfg, &fault_cfg).unwrap();
        assert_eq!(train.len(), 12);
        assert_eq!(test.len(), 5);
        let mut keys = HashSet::new();
        for s in train.samples.iter().chain(&test.samples) {
            assert!(keys.insert((s.tau0.0.clone(), s.p_l)), "duplicate key");
            assert!(s.label.iter().filter(|&&b| b).count() <= cfg.k);
            assert!(s.tau0.is_in_service(s.p_l));
            assert!(is_connected(&grid, &s.tau0));
            let outages: Vec<usize> = s
                .label
                .iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(|(i, _)| i)
                .collect();
            assert!(is_connected(&grid, &s.tau0.with_outages(&outages)));
            assert!(s.i_max_oracle > 0.0);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let grid = testing::six_bus();
        let cfg = small_cfg();
        let fault_cfg = FaultConfig::default();
        let a = generate_dataset(&grid, 10, &cfg, &fault_cfg, SplitTag::Train).unwrap();
        let b = generate_dataset(&grid, 10, &cfg, &fault_cfg, SplitTag::Train).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn file_roundtrip_is_byte_stable() {
        let grid = testing::six_bus();
        let cfg = small_cfg();
        let ds =
            generate_dataset(&grid, 8, &cfg, &FaultConfig::default(), SplitTag::Test).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.bin");
        let p2 = dir.path().join("b.bin");
        save_dataset(&ds, grid.bus_count(), &p1).unwrap();
        let loaded = load_dataset(&p1).unwrap();
        assert_eq!(loaded, ds);
        save_dataset(&loaded, grid.bus_count(), &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn oracle_consistency_on_stored_labels() {
        let grid = testing::six_bus();
        let cfg = small_cfg();
        let fault_cfg = FaultConfig::default();
        let ds = generate_dataset(&grid, 10, &cfg, &fault_cfg, SplitTag::Train).unwrap();
        for s in &ds.samples {
            let outages: Vec<usize> = s
                .label
                .iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(|(i, _)| i)
                .collect();
            let tau_star = s.tau0.with_outages(&outages);
            let i = crate::fault::fault_current_magnitude(&grid, &tau_star, s.p_l, &fault_cfg)
                .unwrap();
            assert!((i - s.i_max_oracle).abs() <= 1e-9);
        }
    }

    #[test]
    fn corrupted_header_is_rejected() {
        let grid = testing::six_bus();
        let ds = generate_dataset(
            &grid,
            4,
            &small_cfg(),
            &FaultConfig::default(),
            SplitTag::Train,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        save_dataset(&ds, grid.bus_count(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[20] ^= 0xff; // k field
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_dataset(&path), Err(PipelineError::Format(_))));
    }
}
