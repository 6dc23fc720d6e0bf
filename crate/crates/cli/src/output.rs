use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Formats like C's `%.17g`: 17 significant digits, trailing zeros trimmed.
pub fn fmt_g17(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let m = trim_zeros(mantissa.to_string());
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub struct Output {
    path: Option<PathBuf>,
    inner: BufWriter<Box<dyn Write>>,
}

impl Output {
    /// File at `path`, or stdout when `None`.
    pub fn open(path: Option<&Path>) -> CliResult<Self> {
        let sink: Box<dyn Write> = match path {
            Some(p) => Box::new(File::create(p).map_err(|e| CliError::io(p, e))?),
            None => Box::new(io::stdout().lock()),
        };
        Ok(Self {
            path: path.map(Path::to_path_buf),
            inner: BufWriter::new(sink),
        })
    }

    pub fn io_error(&self, e: io::Error) -> CliError {
        CliError::io(self.path.as_deref().unwrap_or(Path::new("<stdout>")), e)
    }

    pub fn csv_writer(&mut self) -> csv::Writer<&mut dyn Write> {
        csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(&mut self.inner as &mut dyn Write)
    }

    pub fn write_all(&mut self, bytes: &[u8]) -> CliResult<()> {
        self.inner.write_all(bytes).map_err(|e| self.io_error(e))
    }

    pub fn write_json<T: Serialize>(&mut self, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable report");
        text.push('\n');
        self.write_all(text.as_bytes())
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.inner.flush().map_err(|e| self.io_error(e))
    }
}

pub fn csv_error(out: &Output, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => out.io_error(io),
        other => CliError::validation(format!("csv: {other:?}")),
    }
}

pub fn read_to_string(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// `<path>.<suffix>` next to an output file.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSeed {
    pub group: String,
    pub index: usize,
    /// Member `j` of this group is seeded with `derive_seed(seed, j)`.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(path: &Path, contents: &str) -> Self {
        Self {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(contents.as_bytes())),
        }
    }

    /// Fails when the file changed since the manifest was written.
    pub fn verify(&self) -> CliResult<String> {
        let contents = read_to_string(&self.path)?;
        let now = Self::of(&self.path, &contents);
        if now.sha256 != self.sha256 {
            return Err(CliError::validation(format!(
                "{} no longer matches the manifest digest",
                self.path.display()
            )));
        }
        Ok(contents)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Fully resolved command input; replaying it reproduces the output bytes.
    pub config: serde_json::Value,
    pub master_seed: Option<u64>,
    #[serde(default)]
    pub group_seeds: Vec<GroupSeed>,
    #[serde(default)]
    pub inputs: Vec<InputDigest>,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new<T: Serialize>(command: &str, config: &T) -> Self {
        Self {
            tool: "rdl".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: serde_json::to_value(config).expect("serializable config"),
            master_seed: None,
            group_seeds: Vec::new(),
            inputs: Vec::new(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    /// Written to `<out>.manifest.json`, or to stderr when output went to stdout.
    pub fn emit(&self, out: Option<&Path>) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self).expect("serializable manifest");
        text.push('\n');
        match out {
            Some(p) => {
                let path = sibling(p, "manifest.json");
                std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
            }
            None => io::stderr()
                .write_all(text.as_bytes())
                .map_err(|e| CliError::io(Path::new("<stderr>"), e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_matches_printf() {
        // Reference strings from C printf("%.17g").
        assert_eq!(fmt_g17(0.5), "0.5");
        assert_eq!(fmt_g17(0.1), "0.10000000000000001");
        assert_eq!(fmt_g17(1.0), "1");
        assert_eq!(fmt_g17(2.0 / 3.0), "0.66666666666666663");
        assert_eq!(fmt_g17(1e-7), "9.9999999999999995e-08");
        assert_eq!(fmt_g17(123456.0), "123456");
        assert_eq!(fmt_g17(0.0), "0");
        assert_eq!(fmt_g17(1e-300), "1e-300");
        assert_eq!(fmt_g17(5e-324), "4.9406564584124654e-324");
        assert_eq!(fmt_g17(0.00001234), "1.234e-05");
        assert_eq!(fmt_g17(1e17), "1e+17");
    }

    #[test]
    fn g17_round_trips() {
        for x in [0.1, 1.0 / 3.0, 0.8151351811751367, 1e-300, 0.999999999999, 5e-324] {
            assert_eq!(fmt_g17(x).parse::<f64>().unwrap(), x);
        }
    }
}
