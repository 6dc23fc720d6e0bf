use std::path::PathBuf;

use chrono::NaiveDate;
use rdl_core::scoring::{parse_events, CurrentCharge};
use rdl_core::{derive_factors, load_table, score, DefendantRecord, RiskScores};
use serde::{Deserialize, Serialize};

use crate::config::Format;
use crate::error::{CliError, CliResult};
use crate::output::{csv_error, read_to_string, InputDigest, Output, RunManifest};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    /// JSON Lines history; no events when absent.
    pub events: Option<PathBuf>,
    pub table: PathBuf,
    pub current: CurrentCharge,
    pub as_of: NaiveDate,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ScoreReport<'a> {
    table: Option<&'a str>,
    as_of: NaiveDate,
    record: DefendantRecord,
    scores: RiskScores,
}

pub fn run(cfg: &ScoreConfig, inputs: &[InputDigest]) -> CliResult<RunManifest> {
    let mut manifest = RunManifest::new("score", cfg);
    let mut read = |path: &PathBuf| -> CliResult<String> {
        let text = match inputs.iter().find(|d| d.path == *path) {
            Some(d) => d.verify()?,
            None => read_to_string(path)?,
        };
        manifest.inputs.push(InputDigest::of(path, &text));
        Ok(text)
    };

    let events = match &cfg.events {
        Some(path) => {
            let text = read(path)?;
            parse_events(&text).map_err(|e| CliError::at(&path.display().to_string(), e))?
        }
        None => Vec::new(),
    };
    let table_text = read(&cfg.table)?;
    let table = load_table(&table_text).map_err(|e| CliError::at(&cfg.table.display().to_string(), e))?;

    let record = derive_factors(&events, cfg.current, cfg.as_of)?;
    let scores = score(&record, &table)?;

    let mut out = Output::open(cfg.out.as_deref())?;
    match cfg.format.unwrap_or(Format::Json) {
        Format::Json => out.write_json(&ScoreReport {
            table: table.name(),
            as_of: cfg.as_of,
            record,
            scores,
        })?,
        Format::Csv => {
            let res = (|| {
                let mut w = out.csv_writer();
                w.write_record(["fta", "nca", "nvca"])?;
                w.write_record([scores.fta.to_string(), scores.nca.to_string(), scores.nvca.to_string()])?;
                w.flush()?;
                Ok(())
            })();
            res.map_err(|e: csv::Error| csv_error(&out, e))?;
        }
    }
    out.finish()?;
    Ok(manifest)
}
