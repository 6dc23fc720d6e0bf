use rayon::prelude::*;
use rdl_core::{simulate_trajectory, DecisionOutcome, Trajectory};

use crate::config::{group_seeds, Format, ScenarioConfig};
use crate::error::CliResult;
use crate::output::{csv_error, fmt_g17, Output, RunManifest};

/// Trajectories simulated per parallel batch before writing.
const BATCH: usize = 256;

/// Path series for every member of every group. Member `j` of group `g` uses
/// the same seed as in `cohort`, so the two commands agree path by path.
pub fn run(cfg: &ScenarioConfig) -> CliResult<RunManifest> {
    let spec = cfg.to_cohort_spec()?;
    let format = cfg.output.format.unwrap_or(Format::Csv);
    let mut out = Output::open(cfg.output.path.as_deref())?;
    let id = |g: usize, j: usize| {
        if cfg.groups.is_empty() {
            j.to_string()
        } else {
            format!("{}:{j}", spec.groups[g].name)
        }
    };

    if format == Format::Json {
        out.write_all(b"{\"trajectories\": [")?;
    }
    let mut first = true;
    for (g, group) in spec.groups.iter().enumerate() {
        for start in (0..group.size).step_by(BATCH) {
            let end = (start + BATCH).min(group.size);
            let paths = (start..end)
                .into_par_iter()
                .map(|j| simulate_trajectory(&spec.member_params(g, j)))
                .collect::<Result<Vec<_>, _>>()?;
            for (j, path) in (start..end).zip(&paths) {
                match format {
                    Format::Csv => write_csv_rows(&mut out, &id(g, j), path, first)?,
                    Format::Json => {
                        let sep = if first { "\n" } else { ",\n" };
                        let line = serde_json::json!({
                            "trajectory_id": id(g, j),
                            "p": path.probabilities,
                            "outcomes": path.outcomes,
                        });
                        out.write_all(format!("{sep}  {line}").as_bytes())?;
                    }
                }
                first = false;
            }
        }
    }
    if format == Format::Json {
        out.write_all(b"\n]}\n")?;
    }
    out.finish()?;

    let mut manifest = RunManifest::new("simulate", cfg);
    manifest.master_seed = Some(spec.master_seed);
    manifest.group_seeds = group_seeds(&spec);
    Ok(manifest)
}

fn write_csv_rows(out: &mut Output, id: &str, path: &Trajectory, header: bool) -> CliResult<()> {
    let result = {
        let mut w = out.csv_writer();
        (|| {
            if header {
                w.write_record(["trajectory_id", "step", "p", "outcome"])?;
            }
            for (i, p) in path.probabilities.iter().enumerate() {
                let outcome = match path.outcomes.get(i) {
                    Some(DecisionOutcome::High) => "1",
                    Some(DecisionOutcome::Low) => "0",
                    None => "",
                };
                w.write_record([id, &(i + 1).to_string(), &fmt_g17(*p), outcome])?;
            }
            w.flush()?;
            Ok(())
        })()
    };
    result.map_err(|e: csv::Error| csv_error(out, e))
}
