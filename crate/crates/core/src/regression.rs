//! Ordinary least squares by Householder QR, plus a synthetic cohort generator
//! with a known treatment effect for checking estimator recovery.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::distributions::{Bernoulli, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson, Uniform};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::process::Trajectory;
use crate::rng::derive_seed;

pub const INTERCEPT: &str = "intercept";

/// Columns whose residual norm falls below this fraction of the largest
/// column norm are treated as linearly dependent.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Dense column-major design matrix with named columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    names: Vec<String>,
    rows: usize,
    data: Vec<f64>,
}

impl DesignMatrix {
    pub fn from_columns(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::param(
                "columns",
                format!("{} names for {} columns", names.len(), columns.len()),
            ));
        }
        if names.is_empty() {
            return Err(Error::Empty("design matrix"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::param("columns", format!("duplicate column name `{dup}`")));
        }
        let rows = columns[0].len();
        if let Some((name, c)) = names.iter().zip(&columns).find(|(_, c)| c.len() != rows) {
            return Err(Error::param(
                "columns",
                format!("column `{name}` has {} rows, expected {rows}", c.len()),
            ));
        }
        if columns.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::param("columns", "non-finite value"));
        }
        Ok(Self {
            names,
            rows,
            data: columns.into_iter().flatten().collect(),
        })
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let p = names.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(Error::param(
                "rows",
                format!("row {i} has {} values, expected {p}", r.len()),
            ));
        }
        let columns = (0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Self::from_columns(names, columns)
    }

    /// Copy with a leading all-ones `intercept` column.
    pub fn with_intercept(&self) -> Result<Self> {
        let mut names = vec![INTERCEPT.to_string()];
        names.extend(self.names.iter().cloned());
        let mut cols = vec![vec![1.0; self.rows]];
        cols.extend((0..self.cols()).map(|j| self.column(j).to_vec()));
        Self::from_columns(names, cols)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn column_by_name(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|j| self.column(j))
    }

    /// `X * beta`.
    pub fn mul_vec(&self, beta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (j, b) in beta.iter().enumerate() {
            for (o, x) in out.iter_mut().zip(self.column(j)) {
                *o += b * x;
            }
        }
        out
    }

    fn has_constant_column(&self) -> bool {
        (0..self.cols()).any(|j| {
            let c = self.column(j);
            c[0] != 0.0 && c.iter().all(|&v| v == c[0])
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    /// Homoskedastic standard errors; NaN when `n == p`.
    pub se: Vec<f64>,
    pub t_stat: Vec<f64>,
    pub r_squared: f64,
    pub n: usize,
    pub df_resid: usize,
    /// Residual standard deviation `s`.
    pub sigma: f64,
}

impl RegressionResult {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Two-sided Student-t interval for coefficient `j` at `level`.
    pub fn confidence_interval(&self, j: usize, level: f64) -> Result<(f64, f64)> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::param("level", format!("must lie in (0, 1), got {level}")));
        }
        if self.df_resid == 0 {
            return Err(Error::param("df_resid", "no residual degrees of freedom"));
        }
        let t = StudentsT::new(0.0, 1.0, self.df_resid as f64)
            .map_err(|e| Error::param("df_resid", e.to_string()))?;
        let q = t.inverse_cdf(0.5 + level / 2.0);
        Ok((self.beta[j] - q * self.se[j], self.beta[j] + q * self.se[j]))
    }

    /// Coefficients with standard errors in parentheses beneath them.
    pub fn to_text_table(&self, outcome: &str) -> String {
        let name_w = self.names.iter().map(|n| n.len()).max().unwrap_or(0).max(10);
        let cells: Vec<(String, String)> = self
            .beta
            .iter()
            .zip(&self.se)
            .map(|(b, s)| (format!("{b:.4}"), format!("({s:.4})")))
            .collect();
        let val_w = cells
            .iter()
            .flat_map(|(b, s)| [b.len(), s.len()])
            .chain([outcome.len()])
            .max()
            .unwrap_or(0);
        let rule = "-".repeat(name_w + 2 + val_w);
        let mut out = String::new();
        let _ = writeln!(out, "{:name_w$}  {outcome:>val_w$}", "");
        let _ = writeln!(out, "{rule}");
        for (name, (b, s)) in self.names.iter().zip(&cells) {
            let _ = writeln!(out, "{name:name_w$}  {b:>val_w$}");
            let _ = writeln!(out, "{:name_w$}  {s:>val_w$}", "");
        }
        let _ = writeln!(out, "{rule}");
        let _ = writeln!(out, "{:name_w$}  {:>val_w$}", "N", self.n);
        let _ = writeln!(out, "{:name_w$}  {:>val_w$.4}", "R-squared", self.r_squared);
        let _ = writeln!(out, "{rule}");
        out.push_str("Standard errors in parentheses.\n");
        out
    }
}

/// Householder QR of a column-major `n x p` matrix, without pivoting.
struct Qr {
    n: usize,
    p: usize,
    /// Overwritten with `R` above the diagonal and reflectors below it.
    a: Vec<f64>,
    /// Reflector scale factors `beta_j` with `H_j = I - beta_j v_j v_j^T`.
    tau: Vec<f64>,
    diag: Vec<f64>,
}

impl Qr {
    /// Factors `x`, or returns the columns that are linearly dependent on
    /// earlier ones together with the earlier columns they combine.
    fn factor(x: &DesignMatrix) -> std::result::Result<Self, Vec<usize>> {
        let (n, p) = (x.rows(), x.cols());
        let mut a = x.data.clone();
        let max_norm = (0..p)
            .map(|j| norm(x.column(j)))
            .fold(0.0f64, f64::max);
        let tol = RANK_TOLERANCE * max_norm;
        let mut tau = vec![0.0; p];
        let mut diag = vec![0.0; p];
        let mut dependent = Vec::new();

        // `rank` is the pivot row; it trails `j` once a dependent column is
        // skipped, which keeps later columns' tests honest.
        let mut rank = 0;
        for j in 0..p {
            let (head, tail) = a.split_at_mut(j * n + n);
            let col = &mut head[j * n..];
            let alpha = norm(&col[rank..]);
            if alpha <= tol || max_norm == 0.0 {
                dependent.push(j);
                continue;
            }
            reflect(col, rank, n, alpha, &mut tau[j], &mut diag[j], tail);
            rank += 1;
        }

        if dependent.is_empty() {
            return Ok(Self { n, p, a, tau, diag });
        }
        Err(dependency_sets(x, &dependent))
    }

    /// `Q^T y`.
    fn qt_mul(&self, y: &mut [f64]) {
        for j in 0..self.p {
            let v = &self.a[j * self.n..(j + 1) * self.n];
            let s: f64 = (j..self.n).map(|i| v[i] * y[i]).sum::<f64>() * self.tau[j];
            for i in j..self.n {
                y[i] -= s * v[i];
            }
        }
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[j]
        } else {
            self.a[j * self.n + i]
        }
    }

    fn solve_r(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.p];
        for i in (0..self.p).rev() {
            let mut s = rhs[i];
            for (k, xk) in x.iter().enumerate().skip(i + 1) {
                s -= self.r(i, k) * xk;
            }
            x[i] = s / self.r(i, i);
        }
        x
    }

    /// Diagonal of `(X^T X)^{-1} = R^{-1} R^{-T}`.
    fn unscaled_variances(&self) -> Vec<f64> {
        let p = self.p;
        // Columns of R^{-1}, by back substitution against unit vectors.
        let mut rinv = vec![0.0; p * p];
        for c in 0..p {
            let mut e = vec![0.0; p];
            e[c] = 1.0;
            let col = self.solve_r(&e);
            for (i, v) in col.into_iter().enumerate() {
                rinv[i * p + c] = v;
            }
        }
        (0..p)
            .map(|i| rinv[i * p..(i + 1) * p].iter().map(|v| v * v).sum())
            .collect()
    }
}

fn norm(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    scale * v.iter().map(|x| (x / scale).powi(2)).sum::<f64>().sqrt()
}

/// Builds the reflector that zeroes `col[j+1..]` and applies it to the
/// remaining columns in `tail`.
fn reflect(
    col: &mut [f64],
    j: usize,
    n: usize,
    alpha: f64,
    tau: &mut f64,
    diag: &mut f64,
    tail: &mut [f64],
) {
    let x0 = col[j];
    let d = if x0 >= 0.0 { -alpha } else { alpha };
    // v = x - d e_1, stored in place; H = I - v v^T / (alpha^2 - x0 d)
    col[j] = x0 - d;
    let vtv = alpha * alpha - x0 * d;
    *tau = 1.0 / vtv;
    *diag = d;
    for other in tail.chunks_exact_mut(n) {
        let s: f64 = (j..n).map(|i| col[i] * other[i]).sum::<f64>() * *tau;
        for i in j..n {
            other[i] -= s * col[i];
        }
    }
}

/// For each dependent column, the column itself plus the independent columns
/// that enter its least-squares representation.
fn dependency_sets(x: &DesignMatrix, dependent: &[usize]) -> Vec<usize> {
    let independent: Vec<usize> = (0..x.cols()).filter(|j| !dependent.contains(j)).collect();
    let mut involved: Vec<usize> = dependent.to_vec();
    if !independent.is_empty() {
        let base = DesignMatrix {
            names: independent.iter().map(|&j| x.names[j].clone()).collect(),
            rows: x.rows,
            data: independent.iter().flat_map(|&j| x.column(j).to_vec()).collect(),
        };
        if let Ok(qr) = Qr::factor(&base) {
            for &d in dependent {
                let mut y = x.column(d).to_vec();
                qr.qt_mul(&mut y);
                let coef = qr.solve_r(&y[..qr.p]);
                let scale = coef.iter().fold(0.0f64, |m, c| m.max(c.abs()));
                for (c, &j) in coef.iter().zip(&independent) {
                    if c.abs() > 1e-8 * scale.max(1e-300) {
                        involved.push(j);
                    }
                }
            }
        }
    }
    involved.sort_unstable();
    involved.dedup();
    involved
}

/// Least-squares fit of `y` on the columns of `x`.
///
/// Requires `n >= p`; with `n == p` the fit is exact and standard errors are
/// NaN.
pub fn ols_fit(x: &DesignMatrix, y: &[f64]) -> Result<RegressionResult> {
    let (n, p) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(Error::param(
            "y",
            format!("has {} values for {n} design rows", y.len()),
        ));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("y", "non-finite value"));
    }
    if n < p {
        return Err(Error::Underdetermined { rows: n, cols: p });
    }
    let qr = Qr::factor(x).map_err(|cols| Error::RankDeficient {
        columns: cols.into_iter().map(|j| x.names[j].clone()).collect(),
    })?;

    let mut qty = y.to_vec();
    qr.qt_mul(&mut qty);
    let beta = qr.solve_r(&qty[..p]);

    let fitted = x.mul_vec(&beta);
    let rss: f64 = y.iter().zip(&fitted).map(|(a, b)| (a - b) * (a - b)).sum();
    let df_resid = n - p;
    let s2 = if df_resid > 0 { rss / df_resid as f64 } else { f64::NAN };
    let se: Vec<f64> = qr.unscaled_variances().iter().map(|v| (s2 * v).sqrt()).collect();
    let t_stat = beta.iter().zip(&se).map(|(b, s)| b / s).collect();

    let tss = if x.has_constant_column() {
        let mean = y.iter().sum::<f64>() / n as f64;
        y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
    } else {
        y.iter().map(|v| v * v).sum::<f64>()
    };
    let r_squared = if tss > 0.0 { (1.0 - rss / tss).clamp(0.0, 1.0) } else { 1.0 };

    Ok(RegressionResult {
        names: x.names().to_vec(),
        beta,
        se,
        t_stat,
        r_squared,
        n,
        df_resid,
        sigma: s2.sqrt(),
    })
}

/// Diagonal of `(X^T X)^{-1}`, the coefficient variances per unit of noise
/// variance.
pub fn unscaled_coefficient_variances(x: &DesignMatrix) -> Result<Vec<f64>> {
    let qr = Qr::factor(x).map_err(|cols| Error::RankDeficient {
        columns: cols.into_iter().map(|j| x.names[j].clone()).collect(),
    })?;
    Ok(qr.unscaled_variances())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateDist {
    Normal { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
    Bernoulli { p: f64 },
    Poisson { lambda: f64 },
}

impl CovariateDist {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            CovariateDist::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
            CovariateDist::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
            CovariateDist::Bernoulli { p } => (0.0..=1.0).contains(&p),
            CovariateDist::Poisson { lambda } => lambda.is_finite() && lambda > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param("covariates", format!("bad distribution for `{name}`: {self:?}")))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        match *self {
            CovariateDist::Normal { mean, sd } => {
                let d = Normal::new(mean, sd).expect("validated");
                (0..n).map(|_| d.sample(rng)).collect()
            }
            CovariateDist::Uniform { low, high } => {
                let d = Uniform::new(low, high);
                (0..n).map(|_| d.sample(rng)).collect()
            }
            CovariateDist::Bernoulli { p } => {
                let d = Bernoulli::new(p).expect("validated");
                (0..n).map(|_| d.sample(rng) as u8 as f64).collect()
            }
            CovariateDist::Poisson { lambda } => {
                let d = Poisson::new(lambda).expect("validated");
                (0..n).map(|_| d.sample(rng)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateSpec {
    pub name: String,
    pub dist: CovariateDist,
}

/// The treatment column is `base + sum(loading * covariate)`, which lets the
/// treatment correlate with the controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreatmentSpec {
    pub name: String,
    pub base: CovariateDist,
    #[serde(default)]
    pub loadings: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthCohortSpec {
    pub n: usize,
    pub treatment: TreatmentSpec,
    pub covariates: Vec<CovariateSpec>,
    /// One entry per column: `intercept`, the treatment and every covariate.
    pub true_beta: BTreeMap<String, f64>,
    pub noise_sd: f64,
    pub seed: u64,
}

/// Treatment coefficient used by the confinement scenario.
pub const TABLE_ONE_TREATMENT: f64 = 0.1286;
/// Its reported standard error.
pub const TABLE_ONE_SE: f64 = 0.0249;
/// Its reported sample size.
pub const TABLE_ONE_N: usize = 6215;

impl SynthCohortSpec {
    /// Confinement-effect scenario: `confinement_max` as treatment with
    /// risk-factor-style controls, `n = 6215`, treatment coefficient 0.1286.
    /// `noise_sd` starts at 1; see [`calibrate_noise_sd`].
    pub fn confinement_scenario(seed: u64) -> Self {
        let covariates = vec![
            CovariateSpec {
                name: "age".into(),
                dist: CovariateDist::Normal { mean: 32.0, sd: 10.0 },
            },
            CovariateSpec {
                name: "prior_felony".into(),
                dist: CovariateDist::Bernoulli { p: 0.4 },
            },
            CovariateSpec {
                name: "prior_violent_conviction_count".into(),
                dist: CovariateDist::Poisson { lambda: 0.5 },
            },
            CovariateSpec {
                name: "fta_within_2yr_count".into(),
                dist: CovariateDist::Poisson { lambda: 0.3 },
            },
            CovariateSpec {
                name: "pending_charge_at_offense".into(),
                dist: CovariateDist::Bernoulli { p: 0.25 },
            },
        ];
        let true_beta = BTreeMap::from([
            (INTERCEPT.to_string(), 0.35),
            ("confinement_max".to_string(), TABLE_ONE_TREATMENT),
            ("age".to_string(), -0.004),
            ("prior_felony".to_string(), 0.12),
            ("prior_violent_conviction_count".to_string(), 0.05),
            ("fta_within_2yr_count".to_string(), 0.08),
            ("pending_charge_at_offense".to_string(), 0.06),
        ]);
        Self {
            n: TABLE_ONE_N,
            treatment: TreatmentSpec {
                name: "confinement_max".into(),
                base: CovariateDist::Uniform { low: 0.0, high: 2.0 },
                loadings: BTreeMap::from([
                    ("prior_felony".to_string(), 0.5),
                    ("prior_violent_conviction_count".to_string(), 0.3),
                ]),
            },
            covariates,
            true_beta,
            noise_sd: 1.0,
            seed,
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec![INTERCEPT.to_string(), self.treatment.name.clone()];
        names.extend(self.covariates.iter().map(|c| c.name.clone()));
        names
    }

    pub fn validate(&self) -> Result<()> {
        let names = self.column_names();
        if self.n <= names.len() {
            return Err(Error::Underdetermined {
                rows: self.n,
                cols: names.len(),
            });
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::param("noise_sd", format!("must be non-negative, got {}", self.noise_sd)));
        }
        self.treatment.base.validate(&self.treatment.name)?;
        for c in &self.covariates {
            c.dist.validate(&c.name)?;
        }
        for key in self.treatment.loadings.keys() {
            if !self.covariates.iter().any(|c| &c.name == key) {
                return Err(Error::param("loadings", format!("unknown covariate `{key}`")));
            }
        }
        for n in &names {
            if !self.true_beta.contains_key(n) {
                return Err(Error::param("true_beta", format!("missing coefficient for `{n}`")));
            }
        }
        if let Some(extra) = self.true_beta.keys().find(|k| !names.contains(k)) {
            return Err(Error::param("true_beta", format!("`{extra}` is not a design column")));
        }
        Ok(())
    }

    pub fn beta_vector(&self) -> Vec<f64> {
        self.column_names().iter().map(|n| self.true_beta[n]).collect()
    }

    /// The design alone; it depends on `seed` but not on `noise_sd`.
    pub fn design(&self) -> Result<DesignMatrix> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let covs: Vec<Vec<f64>> = self.covariates.iter().map(|c| c.dist.sample(&mut rng, self.n)).collect();
        let mut treatment = self.treatment.base.sample(&mut rng, self.n);
        for (name, w) in &self.treatment.loadings {
            let j = self.covariates.iter().position(|c| &c.name == name).expect("validated");
            for (t, c) in treatment.iter_mut().zip(&covs[j]) {
                *t += w * c;
            }
        }
        let mut cols = vec![vec![1.0; self.n], treatment];
        cols.extend(covs);
        DesignMatrix::from_columns(self.column_names(), cols)
    }
}

/// `Y = X beta* + eps`, `eps ~ N(0, noise_sd²)` iid.
pub fn generate_synth_cohort(spec: &SynthCohortSpec) -> Result<(DesignMatrix, Vec<f64>)> {
    let x = spec.design()?;
    let mut y = x.mul_vec(&spec.beta_vector());
    if spec.noise_sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 1));
        let eps = Normal::new(0.0, spec.noise_sd).expect("validated");
        for v in &mut y {
            *v += eps.sample(&mut rng);
        }
    }
    Ok((x, y))
}

/// Noise level at which the treatment coefficient's true standard error
/// equals `target_se` for the design drawn from `spec`.
pub fn calibrate_noise_sd(spec: &SynthCohortSpec, target_se: f64) -> Result<f64> {
    let x = spec.design()?;
    let j = 1;
    let v = unscaled_coefficient_variances(&x)?[j];
    Ok(target_se / v.sqrt())
}

/// Maps each high-risk outcome to a sentence contribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentenceRule {
    pub days_per_high_risk: f64,
    /// Number of leading decisions counted; all when `None`.
    pub window: Option<usize>,
}

/// Per-defendant cumulative sentence over the decision window.
pub fn cumulative_outcome_from_trajectories(trajectories: &[Trajectory], rule: &SentenceRule) -> Vec<f64> {
    trajectories
        .iter()
        .map(|t| {
            let w = rule.window.unwrap_or(t.outcomes.len()).min(t.outcomes.len());
            t.outcomes[..w].iter().filter(|o| o.is_high()).count() as f64 * rule.days_per_high_risk
        })
        .collect()
}
