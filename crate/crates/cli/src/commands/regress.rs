use std::path::{Path, PathBuf};

use rdl_core::regression::{INTERCEPT, TABLE_ONE_SE};
use rdl_core::{generate_synth_cohort, ols_fit, DesignMatrix, RegressionResult, SynthCohortSpec};
use serde::{Deserialize, Serialize};

use crate::config::Format;
use crate::error::{CliError, CliResult};
use crate::output::{csv_error, fmt_g17, read_to_string, sibling, InputDigest, Output, RunManifest};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegressInput {
    Csv {
        path: PathBuf,
        y: String,
        /// Regressors; every other column when absent.
        x: Option<Vec<String>>,
        intercept: bool,
    },
    Synth {
        spec: SynthCohortSpec,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressConfig {
    pub input: RegressInput,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct RegressReport<'a> {
    outcome: &'a str,
    #[serde(flatten)]
    result: &'a RegressionResult,
}

/// The built-in treatment-effect scenario, with noise set so the treatment
/// coefficient's standard error matches the reference table.
pub fn confinement_spec(seed: u64) -> CliResult<SynthCohortSpec> {
    let mut spec = SynthCohortSpec::confinement_scenario(seed);
    spec.noise_sd = rdl_core::regression::calibrate_noise_sd(&spec, TABLE_ONE_SE)?;
    Ok(spec)
}

pub fn run(cfg: &RegressConfig, inputs: &[InputDigest]) -> CliResult<RunManifest> {
    let mut manifest = RunManifest::new("regress", cfg);
    let (x, y, outcome) = match &cfg.input {
        RegressInput::Csv {
            path,
            y,
            x,
            intercept,
        } => {
            let text = match inputs.iter().find(|d| d.path == *path) {
                Some(d) => d.verify()?,
                None => read_to_string(path)?,
            };
            manifest.inputs.push(InputDigest::of(path, &text));
            let (design, yv) = parse_csv(path, &text, y, x.as_deref(), *intercept)?;
            (design, yv, y.clone())
        }
        RegressInput::Synth { spec } => {
            manifest.master_seed = Some(spec.seed);
            let (x, y) = generate_synth_cohort(spec).map_err(|e| CliError::at("spec", e))?;
            (x, y, "y".to_string())
        }
    };
    let result = ols_fit(&x, &y)?;
    let report = RegressReport {
        outcome: &outcome,
        result: &result,
    };

    let mut out = Output::open(cfg.out.as_deref())?;
    match cfg.format {
        None => {
            out.write_all(result.to_text_table(&outcome).as_bytes())?;
            if let Some(p) = &cfg.out {
                let mut twin = Output::open(Some(&sibling(p, "json")))?;
                twin.write_json(&report)?;
                twin.finish()?;
            }
        }
        Some(Format::Json) => out.write_json(&report)?,
        Some(Format::Csv) => {
            let res = (|| {
                let mut w = out.csv_writer();
                w.write_record(["term", "estimate", "standard_error", "t_stat"])?;
                for j in 0..result.names.len() {
                    w.write_record([
                        result.names[j].clone(),
                        fmt_g17(result.beta[j]),
                        fmt_g17(result.se[j]),
                        fmt_g17(result.t_stat[j]),
                    ])?;
                }
                w.flush()?;
                Ok(())
            })();
            res.map_err(|e: csv::Error| csv_error(&out, e))?;
        }
    }
    out.finish()?;
    Ok(manifest)
}

fn parse_csv(
    path: &Path,
    text: &str,
    y: &str,
    x: Option<&[String]>,
    intercept: bool,
) -> CliResult<(DesignMatrix, Vec<f64>)> {
    let bad = |msg: String| CliError::validation(format!("{}: {msg}", path.display()));
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("no column named `{name}`")))
    };
    let y_col = find(y)?;
    let x_names: Vec<String> = match x {
        Some(names) => names.to_vec(),
        None => headers.iter().filter(|h| *h != y).cloned().collect(),
    };
    if intercept && x_names.iter().any(|n| n == INTERCEPT) {
        return Err(bad(format!("column `{INTERCEPT}` clashes with the added intercept")));
    }
    let x_cols = x_names.iter().map(|n| find(n)).collect::<CliResult<Vec<_>>>()?;

    let mut yv = Vec::new();
    let mut columns = vec![Vec::new(); x_cols.len()];
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| bad(format!("line {line}: {e}")))?;
        let num = |c: usize| -> CliResult<f64> {
            let v: f64 = row[c]
                .trim()
                .parse()
                .map_err(|_| bad(format!("line {line}: column `{}`: `{}` is not a number", headers[c], &row[c])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(format!("line {line}: column `{}` is not finite", headers[c])))
            }
        };
        yv.push(num(y_col)?);
        for (dst, &c) in columns.iter_mut().zip(&x_cols) {
            dst.push(num(c)?);
        }
    }
    if yv.is_empty() {
        return Err(bad("no data rows".into()));
    }
    let (mut names, mut cols) = (Vec::new(), Vec::new());
    if intercept {
        names.push(INTERCEPT.to_string());
        cols.push(vec![1.0; yv.len()]);
    }
    names.extend(x_names);
    cols.extend(columns);
    Ok((DesignMatrix::from_columns(names, cols)?, yv))
}
