//! Acceptance criteria, one pass/fail line each. Runs without the libtest
//! harness so the lines always reach stdout; exits non-zero on any failure.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rdl_core::cohort::{run_cohort_with_threads, CheckpointGrid, CohortSpec, GroupSpec};
use rdl_core::limit::{beta_cdf, ks_statistic, BetaParams, EmpiricalDistribution};
use rdl_core::process::{
    closed_form_p, sequence_probability, step, BiasSpec, ClampPolicy, DecisionOutcome, ProcessState, UrnParams,
};
use rdl_core::regression::{
    calibrate_noise_sd, generate_synth_cohort, ols_fit, DesignMatrix, SynthCohortSpec, TABLE_ONE_SE,
    TABLE_ONE_TREATMENT,
};
use rdl_core::rng::SplitMix64;
use rdl_core::scoring::{load_table, score, DefendantRecord, Factor, Output, PointStep, ScoreTable, TableDocument};
use rdl_core::{disparity_metrics, extreme_mass, run_cohort};

// Pinned tolerances.
const KS_UNIFORM_MAX: f64 = 0.02;
const UNIFORM_RUNTIME_MAX: Duration = Duration::from_secs(10);
const VARIANCE_REL_TOL: f64 = 0.15;
const EXTREME_MASS_ABS_TOL: f64 = 0.02;
const MARTINGALE_SE_MULT: f64 = 4.0;
const RECURRENCE_TOL: f64 = 1e-12;
const EXCHANGEABILITY_TOL: f64 = 1e-12;
const BIAS_MEAN_TOL: f64 = 0.05;
const GAP_SE_MULT: f64 = 4.0;
const OLS_EXACT_TOL: f64 = 1e-8;
const ORTHOGONALITY_TOL: f64 = 1e-8;
const COVERAGE_RANGE: (f64, f64) = (0.90, 0.99);
const WITHIN_TWO_SE_MIN: f64 = 0.95;
const PERF_BUDGET_8_CORES: Duration = Duration::from_secs(60);

// Independent oracle values computed before the build.
/// 2 * I_0.05(0.1, 0.1), scipy.special.betainc.
const EXTREME_MASS_K10: f64 = 0.7550169657499043;
/// e_100 for e_1 = 0.5, e_i = 0.99 e_{i-1} + 0.01.
const BIASED_MEAN_N100: f64 = 0.8151351811751367;

struct Outcome {
    pass: bool,
    detail: String,
    /// Failures that are reported but do not fail the run.
    soft: bool,
}

fn hard(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail, soft: false }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 uniform limit", c1_uniform_limit),
        ("2 limit shapes", c2_limit_shapes),
        ("3 martingale", c3_martingale),
        ("4 recurrence equivalence", c4_recurrence),
        ("5 exchangeability", c5_exchangeability),
        ("6 bias dynamics", c6_bias),
        ("7 constant gap", c7_gap),
        ("8 ols", c8_ols),
        ("9 scoring", c9_scoring),
        ("10 engineering", c10_engineering),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let t = Instant::now();
        let o = check();
        let tag = match (o.pass, o.soft) {
            (true, _) => "PASS",
            (false, true) => "SOFT-FAIL",
            (false, false) => {
                failed += 1;
                "FAIL"
            }
        };
        println!("criterion {name:<26} {tag:<9} [{:.1}s] {}", t.elapsed().as_secs_f64(), o.detail);
    }
    println!("acceptance: {} of {} criteria failed", failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn single_group(urn: UrnParams, bias: BiasSpec, size: usize, n_steps: u64, seed: u64, checkpoints: CheckpointGrid) -> CohortSpec {
    CohortSpec {
        groups: vec![GroupSpec {
            name: "g".into(),
            size,
            urn,
            bias,
        }],
        n_steps,
        master_seed: seed,
        record_full_paths: false,
        checkpoints,
    }
}

fn threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn c1_uniform_limit() -> Outcome {
    let t = Instant::now();
    let spec = single_group(UrnParams::default(), BiasSpec::none(), 20_000, 2_000, 1, CheckpointGrid::default());
    let r = run_cohort(&spec).expect("valid spec");
    let dist = EmpiricalDistribution::new(r.groups[0].endpoints.clone()).expect("unit interval");
    let d = ks_statistic(&dist, |x| x).expect("non-empty");
    let elapsed = t.elapsed();
    hard(
        d < KS_UNIFORM_MAX && elapsed < UNIFORM_RUNTIME_MAX,
        format!("KS = {d:.5} (< {KS_UNIFORM_MAX}), runtime {:.2}s", elapsed.as_secs_f64()),
    )
}

fn endpoint_variance(k: f64, seed: u64) -> (f64, Vec<f64>) {
    let urn = UrnParams::new(1.0, 1.0, k).expect("valid urn");
    let spec = single_group(urn, BiasSpec::none(), 20_000, 2_000, seed, CheckpointGrid::default());
    let r = run_cohort(&spec).expect("valid spec");
    let stats = r.groups[0].checkpoint_stats.last().expect("endpoint checkpoint");
    (stats.variance(), r.groups[0].endpoints.clone())
}

fn c2_limit_shapes() -> Outcome {
    let (v_small, _) = endpoint_variance(0.1, 2);
    let (v_large, endpoints) = endpoint_variance(10.0, 3);
    let (t_small, t_large) = (1.0 / 84.0, 1.0 / 4.8);
    let rel_small = (v_small - t_small).abs() / t_small;
    let rel_large = (v_large - t_large).abs() / t_large;

    let b = BetaParams::new(0.1, 0.1).expect("positive");
    let cdf_mass = beta_cdf(&b, 0.05).unwrap() + 1.0 - beta_cdf(&b, 0.95).unwrap();
    let oracle_ok = (cdf_mass - EXTREME_MASS_K10).abs() < 1e-10;
    let em = rdl_core::cohort::extreme_mass_of(&endpoints, 0.05).expect("valid epsilon").total;
    let em_ok = (em - cdf_mass).abs() < EXTREME_MASS_ABS_TOL;
    hard(
        rel_small < VARIANCE_REL_TOL && rel_large < VARIANCE_REL_TOL && oracle_ok && em_ok,
        format!(
            "var(k=0.1) = {v_small:.5} ({:.1}% off 1/84), var(k=10) = {v_large:.4} ({:.1}% off 1/4.8), \
             extreme mass {em:.4} vs {cdf_mass:.4}",
            100.0 * rel_small,
            100.0 * rel_large
        ),
    )
}

fn c3_martingale() -> Outcome {
    let mut rng = SplitMix64::new(0xACCE_0003);
    let mut worst: f64 = 0.0;
    let mut all = true;
    for c in 0..10 {
        let b0 = 0.2 + 4.8 * rng.next_f64();
        let r0 = 0.2 + 4.8 * rng.next_f64();
        let k = 0.1 + 9.9 * rng.next_f64();
        let n = 2 + (rng.next_u64() % 499);
        let urn = UrnParams::new(b0, r0, k).expect("valid urn");
        let spec = single_group(urn, BiasSpec::none(), 10_000, n, 100 + c, CheckpointGrid::default());
        let r = run_cohort(&spec).expect("valid spec");
        let s = r.groups[0].checkpoint_stats.last().expect("endpoint checkpoint");
        let z = (s.mean - urn.initial_p()).abs() / s.standard_error();
        worst = worst.max(z);
        all &= z < MARTINGALE_SE_MULT;
    }
    hard(all, format!("max |mean(p_N) - p_1| / SE = {worst:.2} over 10 configs (< {MARTINGALE_SE_MULT})"))
}

fn c4_recurrence() -> Outcome {
    let urn = UrnParams::default();
    let mut rng = SplitMix64::new(0xACCE_0004);
    let (mut max_diff, mut max_closed): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let mut direct = 0.5f64;
        let mut state = ProcessState::initial(&urn);
        for i in 2..=1000u64 {
            let x: DecisionOutcome = (rng.next_f64() < 0.5).into();
            let gamma = i as f64 / (i as f64 + 1.0);
            direct = direct * gamma + x.as_f64() * (1.0 - gamma);
            state = step(&state, x, &urn);
            max_diff = max_diff.max((state.p - direct).abs());
            let exact = closed_form_p(&urn, state.successes, i - 1).expect("valid counts");
            max_closed = max_closed.max((state.p - exact).abs());
        }
    }
    hard(
        max_diff <= RECURRENCE_TOL && max_closed <= RECURRENCE_TOL,
        format!("max |schedule - urn| = {max_diff:.1e}, max |urn - closed form| = {max_closed:.1e}"),
    )
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn c5_exchangeability() -> Outcome {
    let mut ok = true;
    let mut max_err: f64 = 0.0;
    for (b0, r0, k) in [(1u128, 1u128, 1u128), (2, 3, 1), (1, 1, 10), (3, 1, 2)] {
        let urn = UrnParams::new(b0 as f64, r0 as f64, k as f64).expect("valid urn");
        for len in 0..=10usize {
            let mut by_count: Vec<Option<(u128, u128)>> = vec![None; len + 1];
            let (mut sum_num, mut sum_den) = (0u128, 1u128);
            for mask in 0u32..(1 << len) {
                let bits: Vec<bool> = (0..len).map(|i| mask >> i & 1 == 1).collect();
                let (mut blue, mut red, mut num, mut den) = (b0, r0, 1u128, 1u128);
                for &hi in &bits {
                    num *= if hi { blue } else { red };
                    den *= blue + red;
                    if hi { blue += k } else { red += k }
                    let g = gcd(num, den);
                    (num, den) = (num / g, den / g);
                }
                let s = bits.iter().filter(|&&b| b).count();
                match by_count[s] {
                    None => by_count[s] = Some((num, den)),
                    Some(prev) => ok &= prev == (num, den),
                }
                let n = sum_num * den + num * sum_den;
                let d = sum_den * den;
                let g = gcd(n, d);
                (sum_num, sum_den) = (n / g, d / g);
                let seq: Vec<DecisionOutcome> = bits.iter().map(|&b| b.into()).collect();
                let p = sequence_probability(&urn, &seq).expect("within cap");
                max_err = max_err.max((p - num as f64 / den as f64).abs());
            }
            ok &= sum_num == sum_den;
        }
    }
    hard(
        ok && max_err <= EXCHANGEABILITY_TOL,
        format!("exact rationals: invariant and summing to 1 = {ok}; max float error {max_err:.1e}"),
    )
}

fn c6_bias() -> Outcome {
    let mut e = 0.5f64;
    for _ in 2..=100 {
        e = e * 0.99 + 0.01;
    }
    let oracle_ok = (e - BIASED_MEAN_N100).abs() < 1e-12;
    let bias = BiasSpec::new(0.01, true, ClampPolicy::ClampUnitInterval).expect("valid bias");
    let spec = single_group(
        UrnParams::default(),
        bias,
        10_000,
        10_000,
        6,
        CheckpointGrid::Explicit(vec![100, 1_000, 10_000]),
    );
    let r = run_cohort(&spec).expect("valid spec");
    let m: Vec<f64> = r.groups[0].checkpoint_stats.iter().map(|s| s.mean).collect();
    let near = (m[0] - BIASED_MEAN_N100).abs() < BIAS_MEAN_TOL;
    let increasing = m[0] < m[1] && m[1] < m[2];
    hard(
        oracle_ok && near && increasing,
        format!(
            "mean p_100 = {:.4} (oracle {BIASED_MEAN_N100:.4}), p_1000 = {:.6}, p_10000 = {:.7}, strictly increasing = {increasing}",
            m[0], m[1], m[2]
        ),
    )
}

fn c7_gap() -> Outcome {
    let group = |name: &str, b0: f64, r0: f64| GroupSpec {
        name: name.into(),
        size: 10_000,
        urn: UrnParams::new(b0, r0, 1.0).expect("valid urn"),
        bias: BiasSpec::none(),
    };
    let spec = CohortSpec {
        groups: vec![group("low", 2.0, 3.0), group("high", 3.0, 2.0)],
        n_steps: 200,
        master_seed: 7,
        record_full_paths: false,
        checkpoints: CheckpointGrid::default(),
    };
    let r = run_cohort(&spec).expect("valid spec");
    let report = disparity_metrics(&r, 0.05, 20).expect("valid metrics");
    let gap = &report.gaps[0];
    let worst = gap
        .difference
        .iter()
        .zip(&gap.standard_error)
        .skip(1)
        .map(|(d, se)| (d - 0.2).abs() / se)
        .fold(0.0, f64::max);
    // At the first checkpoint every path sits at p_1, so the gap is exact.
    let first_exact = (gap.difference[0] - 0.2).abs() < 1e-12;
    hard(
        first_exact && worst < GAP_SE_MULT,
        format!(
            "{} checkpoints, max |gap - 0.2| / SE = {worst:.2} (< {GAP_SE_MULT})",
            gap.difference.len()
        ),
    )
}

fn c8_ols() -> Outcome {
    // Noiseless recovery and residual orthogonality on a random design.
    let mut rng = SplitMix64::new(0xACCE_0008);
    let (n, p) = (200, 10);
    let mut cols = vec![vec![1.0; n]];
    for _ in 1..p {
        cols.push((0..n).map(|_| rng.next_f64() * 6.0 - 3.0).collect());
    }
    let names: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    let x = DesignMatrix::from_columns(names, cols).expect("valid design");
    let truth: Vec<f64> = (0..p).map(|j| 1.5 - 0.3 * j as f64).collect();
    let fit = ols_fit(&x, &x.mul_vec(&truth)).expect("full rank");
    let exact_err = fit.beta.iter().zip(&truth).map(|(b, t)| (b - t).abs()).fold(0.0, f64::max);

    let y: Vec<f64> = (0..n).map(|_| rng.next_f64() * 10.0 - 5.0).collect();
    let fit = ols_fit(&x, &y).expect("full rank");
    let fitted = x.mul_vec(&fit.beta);
    let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let orth = (0..p)
        .map(|j| {
            let c = x.column(j);
            c.iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>().abs() / (norm(c) * norm(&resid))
        })
        .fold(0.0, f64::max);

    // Table-1-style scenario over 200 seeds, noise calibrated once.
    let noise_sd = calibrate_noise_sd(&SynthCohortSpec::confinement_scenario(0), TABLE_ONE_SE).expect("valid spec");
    let (mut covered, mut within) = (0, 0);
    for seed in 0..200 {
        let mut spec = SynthCohortSpec::confinement_scenario(seed);
        spec.noise_sd = noise_sd;
        let (x, y) = generate_synth_cohort(&spec).expect("valid spec");
        let fit = ols_fit(&x, &y).expect("full rank");
        let j = fit.index_of("confinement_max").expect("treatment column");
        let (lo, hi) = fit.confidence_interval(j, 0.95).expect("positive df");
        covered += (lo <= TABLE_ONE_TREATMENT && TABLE_ONE_TREATMENT <= hi) as usize;
        within += ((fit.beta[j] - TABLE_ONE_TREATMENT).abs() < 2.0 * fit.se[j]) as usize;
    }
    let coverage = covered as f64 / 200.0;
    let within_frac = within as f64 / 200.0;
    hard(
        exact_err < OLS_EXACT_TOL
            && orth < ORTHOGONALITY_TOL
            && (COVERAGE_RANGE.0..=COVERAGE_RANGE.1).contains(&coverage)
            && within_frac >= WITHIN_TWO_SE_MIN,
        format!(
            "noiseless err {exact_err:.1e}, orthogonality {orth:.1e}, CI coverage {coverage:.3}, \
             within 2 SE {within}/200"
        ),
    )
}

fn random_table(rng: &mut SplitMix64) -> ScoreTable {
    let mut points = BTreeMap::new();
    let mut cutpoints = BTreeMap::new();
    for out in [Output::Fta, Output::Nca, Output::Nvca] {
        let mut by_factor = BTreeMap::new();
        for f in Factor::ALL {
            if rng.next_f64() < 0.3 {
                continue;
            }
            let mut steps = Vec::new();
            let (mut at, mut pts) = (0u32, 0i64);
            for _ in 0..1 + rng.next_u64() % 3 {
                at += 1 + (rng.next_u64() % 20) as u32;
                pts = if f.must_be_monotone() {
                    pts + (rng.next_u64() % 4) as i64
                } else {
                    (rng.next_u64() % 5) as i64 - 2
                };
                steps.push(PointStep { at_least: at, points: pts });
            }
            by_factor.insert(f, steps);
        }
        points.insert(out, by_factor);
        let (lo, hi) = out.required_range();
        let mut cuts: Vec<i64> = Vec::new();
        while cuts.len() < (hi - lo) as usize {
            let c = (rng.next_u64() % 30) as i64 - 3;
            if !cuts.contains(&c) {
                cuts.push(c);
            }
        }
        cuts.sort();
        cutpoints.insert(out, cuts);
    }
    ScoreTable::from_document(TableDocument {
        name: None,
        ranges: None,
        points,
        cutpoints,
    })
    .expect("generated table is valid")
}

fn random_record(rng: &mut SplitMix64) -> DefendantRecord {
    let mut flag = || rng.next_u64() & 1 == 1;
    let (a, b, c, d, e) = (flag(), flag(), flag(), flag(), flag());
    DefendantRecord {
        age_at_arrest: 18 + (rng.next_u64() % 60) as u32,
        current_violent_offense: a,
        pending_charge_at_offense: b,
        prior_misdemeanor: c,
        prior_felony: d,
        prior_violent_conviction_count: (rng.next_u64() % 5) as u32,
        fta_within_2yr_count: (rng.next_u64() % 5) as u32,
        fta_older_2yr_count: (rng.next_u64() % 5) as u32,
        prior_incarceration: e,
    }
}

fn c9_scoring() -> Outcome {
    let mut rng = SplitMix64::new(0xACCE_0009);
    let (mut monotone, mut in_range) = (true, true);
    for _ in 0..1000 {
        let table = random_table(&mut rng);
        let rec = random_record(&mut rng);
        let base = score(&rec, &table).expect("valid record");
        in_range &= (1..=6).contains(&base.fta) && (1..=6).contains(&base.nca) && (0..=1).contains(&base.nvca);
        let bumps = [
            DefendantRecord { prior_violent_conviction_count: rec.prior_violent_conviction_count + 1, ..rec },
            DefendantRecord { fta_within_2yr_count: rec.fta_within_2yr_count + 1, ..rec },
            DefendantRecord { fta_older_2yr_count: rec.fta_older_2yr_count + 1, ..rec },
            DefendantRecord { prior_felony: true, ..rec },
            DefendantRecord { prior_misdemeanor: true, ..rec },
            DefendantRecord { prior_incarceration: true, ..rec },
            DefendantRecord { pending_charge_at_offense: true, ..rec },
            DefendantRecord { current_violent_offense: true, ..rec },
        ];
        for r in bumps {
            let s = score(&r, &table).expect("valid record");
            monotone &= s.fta >= base.fta && s.nca >= base.nca && s.nvca >= base.nvca;
        }
    }

    // Tables whose cutpoints imply other ranges are rejected.
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures");
    let text = std::fs::read_to_string(fixture.join("synthetic_table.json")).expect("fixture");
    let wide_fta = text.replace("\"fta\": [1, 2, 4, 6, 7]", "\"fta\": [1, 2, 4, 6, 7, 8]");
    let wide_nvca = text.replace("\"nvca\": [4]", "\"nvca\": [4, 5]");
    let ranges_enforced = load_table(&text).is_ok()
        && wide_fta != text
        && wide_nvca != text
        && load_table(&wide_fta).is_err()
        && load_table(&wide_nvca).is_err();

    // Golden fixture scores, twice through the binary, byte for byte.
    let golden = std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/score_fixture.json"))
        .expect("golden file");
    let run = || {
        Command::new(env!("CARGO_BIN_EXE_rdl"))
            .args(["score", "--events"])
            .arg(fixture.join("events.jsonl"))
            .arg("--table")
            .arg(fixture.join("synthetic_table.json"))
            .args(["--age", "22", "--violent-offense", "--as-of", "2024-06-01"])
            .output()
            .expect("binary runs")
            .stdout
    };
    let stable = run() == golden && run() == golden;
    hard(
        monotone && in_range && ranges_enforced && stable,
        format!(
            "monotone over 1000 pairs = {monotone}, ranges enforced = {}, golden byte-stable = {stable}",
            in_range && ranges_enforced
        ),
    )
}

fn rdl(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_rdl"))
        .env_remove("RDL_THREADS")
        .args(args)
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn c10_engineering() -> Outcome {
    let bias = BiasSpec::new(0.005, true, ClampPolicy::ClampUnitInterval).expect("valid bias");
    let spec = single_group(UrnParams::new(1.0, 2.0, 0.5).unwrap(), bias, 9_000, 500, 10, CheckpointGrid::default());
    let lib_same = run_cohort_with_threads(&spec, 1).unwrap() == run_cohort_with_threads(&spec, 4).unwrap();
    let args = ["cohort", "--trajectories", "6000", "--steps", "300", "--rho", "0.01", "--seed", "10"];
    let cli_same = rdl(&[&["--threads", "1"], &args[..]].concat()) == rdl(&[&["--threads", "4"], &args[..]].concat());

    let dir = tempfile::TempDir::new().expect("temp dir");
    let first = dir.path().join("paths.csv");
    rdl(&["simulate", "--trajectories", "200", "--steps", "100", "--seed", "10", "--out", first.to_str().unwrap()]);
    let manifest = dir.path().join("paths.csv.manifest.json");
    let a = rdl(&["replay", manifest.to_str().unwrap()]);
    let b = rdl(&["--threads", "2", "replay", manifest.to_str().unwrap()]);
    let replay_same = a == b && a == std::fs::read(&first).unwrap();

    // Performance smoke: 1M x 1000 on this machine's cores, budget scaled from 8.
    let cores = threads();
    let perf = single_group(UrnParams::default(), BiasSpec::none(), 1_000_000, 1_000, 10, CheckpointGrid::default());
    let t = Instant::now();
    let r = run_cohort(&perf).expect("valid spec");
    let elapsed = t.elapsed();
    let _ = extreme_mass(&r, 0.05);
    let budget = PERF_BUDGET_8_CORES.mul_f64(8.0 / cores.min(8) as f64);
    let perf_ok = elapsed < budget;

    let hard_ok = lib_same && cli_same && replay_same;
    Outcome {
        pass: hard_ok && perf_ok,
        soft: hard_ok,
        detail: format!(
            "threads 1 vs 4 identical (lib {lib_same}, cli {cli_same}), replay identical {replay_same}, \
             1M x 1000 in {:.1}s on {cores} core(s) (budget {:.0}s, not a hard gate)",
            elapsed.as_secs_f64(),
            budget.as_secs_f64()
        ),
    }
}
