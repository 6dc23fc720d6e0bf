//! Multi-group cohort simulation and disparity metrics.
//!
//! Members are split into fixed-size chunks that are simulated in parallel and
//! reduced in `(group, member)` order, so results do not depend on the number
//! of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::limit::unit_histogram;
use crate::process::{run_path, simulate_trajectory, BiasSpec, Trajectory, TrajectoryParams, UrnParams};
use crate::rng::{derive_seed, member_seed};

/// Members per parallel work unit. Part of the reduction order, so changing it
/// changes the low bits of checkpoint statistics.
const CHUNK: usize = 2048;

pub const DEFAULT_EPSILON: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    pub size: usize,
    pub urn: UrnParams,
    #[serde(default)]
    pub bias: BiasSpec,
}

/// Which decision indices get per-group summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointGrid {
    /// `1, ⌈r⌉, ⌈r²⌉, …` up to `N`, always ending at `N`.
    Geometric { ratio: f64 },
    Explicit(Vec<u64>),
    All,
}

impl Default for CheckpointGrid {
    fn default() -> Self {
        CheckpointGrid::Geometric { ratio: 2.0 }
    }
}

impl CheckpointGrid {
    pub fn resolve(&self, n_steps: u64) -> Result<Vec<u64>> {
        let mut pts = match self {
            CheckpointGrid::Geometric { ratio } => {
                if !(ratio.is_finite() && *ratio > 1.0) {
                    return Err(Error::param("ratio", format!("must exceed 1, got {ratio}")));
                }
                let mut pts = vec![1u64];
                let mut x = 1.0f64;
                loop {
                    x *= ratio;
                    let next = (x.ceil() as u64).max(pts[pts.len() - 1] + 1);
                    if next >= n_steps {
                        break;
                    }
                    pts.push(next);
                }
                pts
            }
            CheckpointGrid::Explicit(v) => {
                if let Some(bad) = v.iter().find(|&&i| i == 0 || i > n_steps) {
                    return Err(Error::param(
                        "checkpoints",
                        format!("{bad} is outside 1..={n_steps}"),
                    ));
                }
                v.clone()
            }
            CheckpointGrid::All => (1..=n_steps).collect(),
        };
        pts.push(n_steps);
        pts.sort_unstable();
        pts.dedup();
        Ok(pts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub groups: Vec<GroupSpec>,
    pub n_steps: u64,
    pub master_seed: u64,
    pub record_full_paths: bool,
    #[serde(default)]
    pub checkpoints: CheckpointGrid,
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::Empty("cohort group list"));
        }
        if self.n_steps == 0 {
            return Err(Error::param("n_steps", "must be at least 1"));
        }
        for g in &self.groups {
            if g.size == 0 {
                return Err(Error::param("size", format!("group `{}` is empty", g.name)));
            }
            g.urn.validate()?;
            g.bias.validate()?;
        }
        Ok(())
    }

    /// Seed of every member of group `group` is `derive_seed(group_seed, member)`.
    pub fn group_seed(&self, group: usize) -> u64 {
        derive_seed(self.master_seed, group as u64)
    }

    pub fn member_params(&self, group: usize, member: usize) -> TrajectoryParams {
        let g = &self.groups[group];
        TrajectoryParams {
            urn: g.urn,
            bias: g.bias,
            n_steps: self.n_steps,
            seed: member_seed(self.master_seed, group as u64, member as u64),
        }
    }
}

/// Streaming mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningStats {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn standard_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub name: String,
    pub p1: f64,
    /// `p_N` per member, in member order.
    pub endpoints: Vec<f64>,
    /// High-risk outcomes per member over `X_1..X_{N-1}`.
    pub successes: Vec<u64>,
    /// One entry per checkpoint of the owning [`CohortResult`].
    pub checkpoint_stats: Vec<RunningStats>,
    /// Members whose biased path left the feasible `rho` regime.
    pub out_of_regime: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<Vec<Trajectory>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortResult {
    pub n_steps: u64,
    pub checkpoints: Vec<u64>,
    pub groups: Vec<GroupResult>,
}

struct ChunkOut {
    endpoints: Vec<f64>,
    successes: Vec<u64>,
    stats: Vec<RunningStats>,
    out_of_regime: u64,
    paths: Vec<Trajectory>,
}

fn run_chunk(spec: &CohortSpec, checkpoints: &[u64], group: usize, start: usize, end: usize) -> ChunkOut {
    let len = end - start;
    let mut out = ChunkOut {
        endpoints: Vec::with_capacity(len),
        successes: Vec::with_capacity(len),
        stats: vec![RunningStats::default(); checkpoints.len()],
        out_of_regime: 0,
        paths: Vec::new(),
    };
    for member in start..end {
        let params = spec.member_params(group, member);
        let mut next_cp = 0;
        let stats = &mut out.stats;
        let last = run_path(&params, |s, _| {
            if next_cp < checkpoints.len() && s.step_index == checkpoints[next_cp] {
                stats[next_cp].push(s.p);
                next_cp += 1;
            }
        });
        out.endpoints.push(last.p);
        out.successes.push(last.successes);
        out.out_of_regime += last.out_of_regime as u64;
        if spec.record_full_paths {
            out.paths
                .push(simulate_trajectory(&params).expect("validated cohort parameters"));
        }
    }
    out
}

/// Simulates every member of every group on the current rayon pool.
pub fn run_cohort(spec: &CohortSpec) -> Result<CohortResult> {
    spec.validate()?;
    let checkpoints = spec.checkpoints.resolve(spec.n_steps)?;

    let tasks: Vec<(usize, usize, usize)> = spec
        .groups
        .iter()
        .enumerate()
        .flat_map(|(g, group)| {
            (0..group.size)
                .step_by(CHUNK)
                .map(move |s| (g, s, (s + CHUNK).min(group.size)))
        })
        .collect();

    let chunks: Vec<ChunkOut> = tasks
        .par_iter()
        .map(|&(g, s, e)| run_chunk(spec, &checkpoints, g, s, e))
        .collect();

    let mut groups: Vec<GroupResult> = spec
        .groups
        .iter()
        .map(|g| GroupResult {
            name: g.name.clone(),
            p1: g.urn.initial_p(),
            endpoints: Vec::with_capacity(g.size),
            successes: Vec::with_capacity(g.size),
            checkpoint_stats: vec![RunningStats::default(); checkpoints.len()],
            out_of_regime: 0,
            paths: spec.record_full_paths.then(|| Vec::with_capacity(g.size)),
        })
        .collect();

    for (&(g, _, _), chunk) in tasks.iter().zip(chunks) {
        let dst = &mut groups[g];
        dst.endpoints.extend(chunk.endpoints);
        dst.successes.extend(chunk.successes);
        for (acc, s) in dst.checkpoint_stats.iter_mut().zip(&chunk.stats) {
            acc.merge(s);
        }
        dst.out_of_regime += chunk.out_of_regime;
        if let Some(paths) = dst.paths.as_mut() {
            paths.extend(chunk.paths);
        }
    }

    Ok(CohortResult {
        n_steps: spec.n_steps,
        checkpoints,
        groups,
    })
}

/// Runs [`run_cohort`] on a dedicated pool of `threads` workers.
pub fn run_cohort_with_threads(spec: &CohortSpec, threads: usize) -> Result<CohortResult> {
    if threads == 0 {
        return Err(Error::param("threads", "must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::param("threads", e.to_string()))?;
    pool.install(|| run_cohort(spec))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtremeMass {
    /// Share of endpoints below `epsilon`.
    pub lower: f64,
    /// Share of endpoints above `1 - epsilon`.
    pub upper: f64,
    pub total: f64,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 0.5 {
        Ok(())
    } else {
        Err(Error::param("epsilon", format!("must lie in (0, 0.5), got {epsilon}")))
    }
}

pub fn extreme_mass_of(endpoints: &[f64], epsilon: f64) -> Result<ExtremeMass> {
    check_epsilon(epsilon)?;
    if endpoints.is_empty() {
        return Err(Error::Empty("endpoint sample"));
    }
    let n = endpoints.len() as f64;
    let lower = endpoints.iter().filter(|&&p| p < epsilon).count() as f64 / n;
    let upper = endpoints.iter().filter(|&&p| p > 1.0 - epsilon).count() as f64 / n;
    Ok(ExtremeMass {
        lower,
        upper,
        total: lower + upper,
    })
}

/// Per-group share of endpoints within `epsilon` of 0 or 1.
pub fn extreme_mass(result: &CohortResult, epsilon: f64) -> Result<Vec<ExtremeMass>> {
    result
        .groups
        .iter()
        .map(|g| extreme_mass_of(&g.endpoints, epsilon))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub name: String,
    pub p1: f64,
    /// Mean of `p_i` at each checkpoint.
    pub mean: Vec<f64>,
    pub standard_error: Vec<f64>,
    pub extreme_mass: ExtremeMass,
    /// Endpoint bin masses over `[0, 1]`.
    pub histogram: Vec<f64>,
}

/// `difference[t] = mean(b) - mean(a)` at checkpoint `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSeries {
    pub a: String,
    pub b: String,
    pub difference: Vec<f64>,
    /// `sqrt(se_a² + se_b²)`.
    pub standard_error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityReport {
    pub epsilon: f64,
    pub checkpoints: Vec<u64>,
    pub groups: Vec<GroupSummary>,
    pub gaps: Vec<GapSeries>,
}

pub fn disparity_metrics(result: &CohortResult, epsilon: f64, bins: usize) -> Result<DisparityReport> {
    check_epsilon(epsilon)?;
    if result.groups.is_empty() {
        return Err(Error::Empty("cohort result"));
    }
    let groups = result
        .groups
        .iter()
        .map(|g| {
            Ok(GroupSummary {
                name: g.name.clone(),
                p1: g.p1,
                mean: g.checkpoint_stats.iter().map(|s| s.mean).collect(),
                standard_error: g.checkpoint_stats.iter().map(RunningStats::standard_error).collect(),
                extreme_mass: extreme_mass_of(&g.endpoints, epsilon)?,
                histogram: unit_histogram(&g.endpoints, bins)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut gaps = Vec::new();
    for (i, a) in groups.iter().enumerate() {
        for b in &groups[i + 1..] {
            gaps.push(GapSeries {
                a: a.name.clone(),
                b: b.name.clone(),
                difference: a.mean.iter().zip(&b.mean).map(|(x, y)| y - x).collect(),
                standard_error: a
                    .standard_error
                    .iter()
                    .zip(&b.standard_error)
                    .map(|(x, y)| x.hypot(*y))
                    .collect(),
            });
        }
    }

    Ok(DisparityReport {
        epsilon,
        checkpoints: result.checkpoints.clone(),
        groups,
        gaps,
    })
}
