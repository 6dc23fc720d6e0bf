use std::collections::hash_map::{Entry, HashMap};
use std::path::{Path, PathBuf};

use rdl_core::cohort::extreme_mass_of;
use rdl_core::limit::unit_histogram;
use rdl_core::{
    beta_cdf, ks_statistic, limit_beta_params, martingale_check, run_cohort, sample_moments,
    BetaParams, EmpiricalDistribution, ExtremeMass, Moments, UrnParams,
};
use serde::{Deserialize, Serialize};

use crate::config::{group_seeds, Format, ScenarioConfig};
use crate::error::{CliError, CliResult};
use crate::output::{csv_error, fmt_g17, read_to_string, InputDigest, Output, RunManifest};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// Endpoint CSV; when absent the scenario is simulated.
    pub input: Option<PathBuf>,
    pub scenario: ScenarioConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupAnalysis {
    pub name: String,
    pub n: usize,
    pub p1: f64,
    pub limit: BetaParams,
    pub ks_distance: f64,
    pub moments: Moments,
    pub limit_moments: Moments,
    pub martingale_z: f64,
    pub extreme_mass: ExtremeMass,
    pub limit_extreme_mass: ExtremeMass,
    pub histogram: Vec<f64>,
    pub limit_histogram: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub source: String,
    pub n_steps: Option<u64>,
    pub epsilon: f64,
    pub groups: Vec<GroupAnalysis>,
}

pub fn run(cfg: &AnalyzeConfig, inputs: &[InputDigest]) -> CliResult<RunManifest> {
    let scenario = &cfg.scenario;
    let spec = scenario.to_cohort_spec()?;
    let mut manifest = RunManifest::new("analyze", cfg);

    let (source, n_steps, samples) = match &cfg.input {
        Some(path) => {
            let text = match inputs.iter().find(|d| d.path == *path) {
                Some(d) => d.verify()?,
                None => read_to_string(path)?,
            };
            manifest.inputs.push(InputDigest::of(path, &text));
            let groups = parse_endpoints(path, &text)?;
            let samples: Vec<(String, UrnParams, Vec<f64>)> = groups
                .into_iter()
                .map(|(name, values)| {
                    let urn = spec
                        .groups
                        .iter()
                        .find(|g| g.name == name)
                        .map_or(scenario.urn, |g| g.urn);
                    (name, urn, values)
                })
                .collect();
            (path.display().to_string(), None, samples)
        }
        None => {
            let result = run_cohort(&spec)?;
            manifest.master_seed = Some(spec.master_seed);
            manifest.group_seeds = group_seeds(&spec);
            let samples = spec
                .groups
                .iter()
                .zip(result.groups)
                .map(|(g, r)| (g.name.clone(), g.urn, r.endpoints))
                .collect();
            ("simulation".to_string(), Some(spec.n_steps), samples)
        }
    };

    let epsilon = scenario.output.epsilon;
    let bins = scenario.output.hist_bins;
    let groups = samples
        .into_iter()
        .map(|(name, urn, values)| analyze_group(name, &urn, values, epsilon, bins))
        .collect::<CliResult<Vec<_>>>()?;
    let report = AnalysisReport {
        source,
        n_steps,
        epsilon,
        groups,
    };

    let mut out = Output::open(scenario.output.path.as_deref())?;
    match scenario.output.format.unwrap_or(Format::Json) {
        Format::Json => out.write_json(&report)?,
        Format::Csv => write_summary_csv(&mut out, &report)?,
    }
    out.finish()?;
    Ok(manifest)
}

fn analyze_group(name: String, urn: &UrnParams, values: Vec<f64>, epsilon: f64, bins: usize) -> CliResult<GroupAnalysis> {
    let ctx = format!("group `{name}`");
    let at = |e| CliError::at(&ctx, e);
    if values.len() < 2 {
        return Err(CliError::validation(format!("{ctx}: need at least 2 endpoints, got {}", values.len())));
    }
    let limit = limit_beta_params(urn);
    let dist = EmpiricalDistribution::new(values).map_err(at)?;
    let cdf = |x: f64| beta_cdf(&limit, x.clamp(0.0, 1.0)).expect("clamped argument");
    let lower = cdf(epsilon);
    let upper = 1.0 - cdf(1.0 - epsilon);
    let limit_histogram = (0..bins)
        .map(|i| cdf((i + 1) as f64 / bins as f64) - cdf(i as f64 / bins as f64))
        .collect();
    Ok(GroupAnalysis {
        n: dist.count(),
        p1: urn.initial_p(),
        limit,
        ks_distance: ks_statistic(&dist, cdf).map_err(at)?,
        moments: sample_moments(&dist).map_err(at)?,
        limit_moments: Moments {
            mean: limit.mean(),
            variance: limit.variance(),
        },
        martingale_z: martingale_check(dist.samples(), urn.initial_p()).map_err(at)?,
        extreme_mass: extreme_mass_of(dist.samples(), epsilon).map_err(at)?,
        limit_extreme_mass: ExtremeMass {
            lower,
            upper,
            total: lower + upper,
        },
        histogram: unit_histogram(dist.samples(), bins).map_err(at)?,
        limit_histogram,
        name,
    })
}

/// Endpoints grouped by the optional `group` column, in first-seen order.
///
/// With `trajectory_id` and `step` columns (the `simulate` layout) only the
/// last step of each trajectory is kept; otherwise every row is an endpoint.
pub fn parse_endpoints(path: &Path, text: &str) -> CliResult<Vec<(String, Vec<f64>)>> {
    let bad = |msg: String| CliError::validation(format!("{}: {msg}", path.display()));
    if text.trim().is_empty() {
        return Err(bad("file is empty".into()));
    }
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let p_col = col("p").ok_or_else(|| bad("missing `p` column".into()))?;
    let group_col = col("group");
    let path_cols = col("trajectory_id").zip(col("step"));

    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    // (group, trajectory id) -> (slot in the group's endpoints, step of that value)
    let mut last: HashMap<(usize, String), (usize, u64)> = HashMap::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| bad(format!("line {line}: {e}")))?;
        let p: f64 = row[p_col]
            .trim()
            .parse()
            .map_err(|_| bad(format!("line {line}: `{}` is not a number", &row[p_col])))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(bad(format!("line {line}: p = {p} lies outside [0, 1]")));
        }
        let name = group_col.map_or(crate::config::DEFAULT_GROUP, |c| &row[c]);
        let gi = match groups.iter().position(|(n, _)| n == name) {
            Some(gi) => gi,
            None => {
                groups.push((name.to_string(), Vec::new()));
                groups.len() - 1
            }
        };
        match path_cols {
            None => groups[gi].1.push(p),
            Some((tc, sc)) => {
                let step: u64 = row[sc]
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("line {line}: `{}` is not a step index", &row[sc])))?;
                let values = &mut groups[gi].1;
                match last.entry((gi, row[tc].to_string())) {
                    Entry::Occupied(mut e) => {
                        let (slot, seen) = e.get_mut();
                        if step > *seen {
                            *seen = step;
                            values[*slot] = p;
                        }
                    }
                    Entry::Vacant(e) => {
                        e.insert((values.len(), step));
                        values.push(p);
                    }
                }
            }
        }
    }
    if groups.iter().all(|(_, v)| v.is_empty()) {
        return Err(bad("no endpoint rows".into()));
    }
    Ok(groups)
}

fn write_summary_csv(out: &mut Output, report: &AnalysisReport) -> CliResult<()> {
    let res = (|| {
        let mut w = out.csv_writer();
        w.write_record([
            "group",
            "n",
            "limit_a",
            "limit_b",
            "ks_distance",
            "mean",
            "variance",
            "martingale_z",
            "extreme_lower",
            "extreme_upper",
            "limit_extreme_total",
        ])?;
        for g in &report.groups {
            w.write_record([
                g.name.clone(),
                g.n.to_string(),
                fmt_g17(g.limit.a),
                fmt_g17(g.limit.b),
                fmt_g17(g.ks_distance),
                fmt_g17(g.moments.mean),
                fmt_g17(g.moments.variance),
                fmt_g17(g.martingale_z),
                fmt_g17(g.extreme_mass.lower),
                fmt_g17(g.extreme_mass.upper),
                fmt_g17(g.limit_extreme_mass.total),
            ])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e: csv::Error| csv_error(out, e))
}
