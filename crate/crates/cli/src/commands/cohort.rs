use rdl_core::{disparity_metrics, run_cohort, CohortResult, DisparityReport};
use serde::Serialize;

use crate::config::{group_seeds, Format, ScenarioConfig};
use crate::error::CliResult;
use crate::output::{csv_error, fmt_g17, Output, RunManifest};

#[derive(Serialize)]
struct CohortReport<'a> {
    n_steps: u64,
    sizes: Vec<usize>,
    /// Members whose path took at least one step with `1 - gamma - rho < 0`.
    out_of_regime: Vec<u64>,
    #[serde(flatten)]
    disparity: &'a DisparityReport,
}

pub fn run(cfg: &ScenarioConfig) -> CliResult<RunManifest> {
    let spec = cfg.to_cohort_spec()?;
    let result = run_cohort(&spec)?;
    let report = disparity_metrics(&result, cfg.output.epsilon, cfg.output.hist_bins)?;

    let mut out = Output::open(cfg.output.path.as_deref())?;
    match cfg.output.format.unwrap_or(Format::Json) {
        Format::Json => out.write_json(&CohortReport {
            n_steps: result.n_steps,
            sizes: result.groups.iter().map(|g| g.endpoints.len()).collect(),
            out_of_regime: result.groups.iter().map(|g| g.out_of_regime).collect(),
            disparity: &report,
        })?,
        Format::Csv => write_checkpoint_csv(&mut out, &result)?,
    }
    out.finish()?;

    if let Some(path) = &cfg.output.endpoints {
        let mut ep = Output::open(Some(path))?;
        write_endpoint_csv(&mut ep, &result)?;
        ep.finish()?;
    }

    let mut manifest = RunManifest::new("cohort", cfg);
    manifest.master_seed = Some(spec.master_seed);
    manifest.group_seeds = group_seeds(&spec);
    Ok(manifest)
}

fn write_checkpoint_csv(out: &mut Output, result: &CohortResult) -> CliResult<()> {
    let res = (|| {
        let mut w = out.csv_writer();
        w.write_record(["group", "checkpoint", "count", "mean", "standard_error"])?;
        for g in &result.groups {
            for (cp, s) in result.checkpoints.iter().zip(&g.checkpoint_stats) {
                w.write_record([
                    g.name.as_str(),
                    &cp.to_string(),
                    &s.count.to_string(),
                    &fmt_g17(s.mean),
                    &fmt_g17(s.standard_error()),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e: csv::Error| csv_error(out, e))
}

fn write_endpoint_csv(out: &mut Output, result: &CohortResult) -> CliResult<()> {
    let res = (|| {
        let mut w = out.csv_writer();
        w.write_record(["group", "member", "p", "successes"])?;
        for g in &result.groups {
            for (j, (p, s)) in g.endpoints.iter().zip(&g.successes).enumerate() {
                w.write_record([g.name.as_str(), &j.to_string(), &fmt_g17(*p), &s.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e: csv::Error| csv_error(out, e))
}
