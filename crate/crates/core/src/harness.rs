//! Experiment runner and command-line interface.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use num_traits::Zero;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    fit_slope, global_fb_dof, ic_dof, outer_bound_ok, partial_fb_dof, quadruple, sweep_trial, theorem1_dof,
    verify_decodability, DofReport,
};
use crate::error::{Error, Result};
use crate::scheme_kic::run_k_ic;
use crate::scheme_kx::{run_kx_global, run_kx_partial};
use crate::scheme_mat_bc::run_mat_bc;
use crate::scheme_x2_mimo::{run_x2, run_x2_regime, select_regime, Regime};
use crate::transcript::{causality_audit, strict_local_audit, Transcript};
use crate::{Rational, TrialRng};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "DOFSIM_OUT_DIR";
/// Transmit power used by `rank_verify` runs (30 dB).
pub const RANK_POWER: f64 = 1e3;
/// Relative slope tolerance of `snr_sweep` runs.
pub const SLOPE_TOL: f64 = 0.10;

/// Seed of trial `index` under `master`: a SplitMix64 step over the pair,
/// so neighbouring trials get unrelated streams.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn trial_rng(master: u64, index: u64) -> TrialRng {
    TrialRng::seed_from_u64(derive_seed(master, index))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SchemeId {
    X2Mimo,
    KxPartial,
    KxGlobal,
    MatBc,
    KIc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    RankVerify,
    NoiselessDecode,
    SnrSweep,
}

/// A scheme with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    X2 { m: usize, n: usize },
    X2Forced { m: usize, n: usize, regime: Regime },
    KxPartial(usize),
    KxGlobal(usize),
    MatBc(usize),
    KIc(usize),
}

impl Scheme {
    pub fn from_params(id: SchemeId, m: Option<usize>, n: Option<usize>, k: Option<usize>) -> Result<Self> {
        let need_k = |name: &str, min: usize| -> Result<usize> {
            if m.is_some() || n.is_some() {
                return Err(Error::Config(format!("{name} takes k, not m or n")));
            }
            match k {
                Some(k) if k >= min => Ok(k),
                Some(k) => Err(Error::Config(format!("{name} needs k >= {min}, got {k}"))),
                None => Err(Error::Config(format!("{name} needs k"))),
            }
        };
        match id {
            SchemeId::X2Mimo => {
                if k.is_some() {
                    return Err(Error::Config("x2_mimo takes m and n, not k".into()));
                }
                match (m, n) {
                    (Some(m), Some(n)) if m >= 1 && n >= 1 => Ok(Scheme::X2 { m, n }),
                    (Some(_), Some(_)) => Err(Error::Config("x2_mimo needs m, n >= 1".into())),
                    _ => Err(Error::Config("x2_mimo needs m and n".into())),
                }
            }
            SchemeId::KxPartial => Ok(Scheme::KxPartial(need_k("kx_partial", 2)?)),
            SchemeId::KxGlobal => Ok(Scheme::KxGlobal(need_k("kx_global", 1)?)),
            SchemeId::MatBc => Ok(Scheme::MatBc(need_k("mat_bc", 1)?)),
            SchemeId::KIc => Ok(Scheme::KIc(need_k("k_ic", 2)?)),
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Scheme::X2 { m, n } => format!("x2_mimo(M={m},N={n})"),
            Scheme::X2Forced { m, n, regime } => format!("x2_mimo(M={m},N={n},{regime:?})"),
            Scheme::KxPartial(k) => format!("kx_partial(K={k})"),
            Scheme::KxGlobal(k) => format!("kx_global(K={k})"),
            Scheme::MatBc(k) => format!("mat_bc(K={k})"),
            Scheme::KIc(k) => format!("k_ic(K={k})"),
        }
    }

    pub fn predicted(&self) -> Rational {
        match *self {
            Scheme::X2 { m, n } | Scheme::X2Forced { m, n, .. } => theorem1_dof(m as u32, n as u32),
            Scheme::KxPartial(k) => partial_fb_dof(k as u32),
            Scheme::KxGlobal(k) | Scheme::MatBc(k) => global_fb_dof(k as u32),
            Scheme::KIc(k) => ic_dof(k as u32),
        }
    }

    pub fn run(&self, power: f64, noiseless: bool, rng: &mut TrialRng) -> Result<Transcript> {
        match *self {
            Scheme::X2 { m, n } => Ok(run_x2(m, n, power, noiseless, rng)?.transcript),
            Scheme::X2Forced { m, n, regime } => Ok(run_x2_regime(m, n, regime, power, noiseless, rng)?.transcript),
            Scheme::KxPartial(k) => run_kx_partial(k, power, noiseless, rng),
            Scheme::KxGlobal(k) => run_kx_global(k, power, noiseless, rng),
            Scheme::MatBc(k) => run_mat_bc(k, power, noiseless, rng),
            Scheme::KIc(k) => Ok(run_k_ic(k, power, noiseless, rng)?.transcript),
        }
    }

    /// Audit the scheme's transcripts must pass.
    pub fn audit_clean(&self, t: &Transcript) -> bool {
        match self {
            Scheme::KxPartial(_) => strict_local_audit(t).is_clean(),
            _ => causality_audit(t).is_clean(),
        }
    }
}

/// Contents of an experiment file (flat TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scheme: SchemeId,
    pub m: Option<usize>,
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub mode: Mode,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    pub output: Option<PathBuf>,
    /// Transmit powers in dB, `snr_sweep` only.
    pub p_grid_db: Option<Vec<f64>>,
}

fn default_trials() -> usize {
    100
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        match (self.mode, &self.p_grid_db) {
            (Mode::SnrSweep, None) => Err(Error::Config("snr_sweep needs p_grid_db".into())),
            (Mode::SnrSweep, Some(g)) => {
                if g.len() < 2 || g.windows(2).any(|w| w[0] >= w[1]) || g.iter().any(|x| !x.is_finite()) {
                    Err(Error::Config("p_grid_db needs at least two ascending values".into()))
                } else {
                    Ok(())
                }
            }
            (_, Some(_)) => Err(Error::Config("p_grid_db only applies to snr_sweep".into())),
            (_, None) => Ok(()),
        }
    }

    pub fn scheme(&self) -> Result<Scheme> {
        Scheme::from_params(self.scheme, self.m, self.n, self.k)
    }

    pub fn p_grid(&self) -> Vec<f64> {
        self.p_grid_db
            .as_deref()
            .unwrap_or_default()
            .iter()
            .map(|db| 10f64.powf(db / 10.0))
            .collect()
    }
}

/// Formats a real with 12 significant digits.
pub fn fmt_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.11e}")
    } else {
        x.to_string()
    }
}

fn round12(x: f64) -> f64 {
    fmt_real(x).parse().unwrap_or(x)
}

/// Per-trial results.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub trial: usize,
    pub seed: u64,
    pub rank_margin: Option<f64>,
    pub decode_exact: Option<bool>,
    pub rates: Vec<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub scheme: String,
    pub mode: Mode,
    pub trials: usize,
    pub master_seed: u64,
    pub report: DofReport,
    pub min_rank_margin: Option<f64>,
    pub decode_exact_fraction: Option<f64>,
    pub mean_rates: Vec<f64>,
    pub passed: bool,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: Summary,
    pub rows: Vec<TrialRow>,
    pub p_grid: Vec<f64>,
    pub sample: Transcript,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

fn run_trial(scheme: &Scheme, mode: Mode, p_grid: &[f64], master: u64, i: usize) -> Result<TrialRow> {
    let seed = derive_seed(master, i as u64);
    let mut row = TrialRow {
        trial: i,
        seed,
        rank_margin: None,
        decode_exact: None,
        rates: Vec::new(),
        pass: true,
    };
    match mode {
        Mode::RankVerify | Mode::NoiselessDecode => {
            let mut rng = trial_rng(master, i as u64);
            let t = scheme.run(RANK_POWER, mode == Mode::NoiselessDecode, &mut rng)?;
            let d = verify_decodability(&t, &mut rng)?;
            row.rank_margin = Some(d.min_margin());
            row.decode_exact = d.decode_exact();
            row.pass = d.pass() && scheme.audit_clean(&t);
        }
        Mode::SnrSweep => {
            let runner = |p: f64, rng: &mut TrialRng| scheme.run(p, false, rng);
            row.rates = sweep_trial(&runner, p_grid, master, i as u64)?;
        }
    }
    Ok(row)
}

/// Runs every trial of `cfg` on `jobs` workers. Results do not depend on
/// `jobs`.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<Outcome> {
    cfg.validate()?;
    let scheme = cfg.scheme()?;
    let p_grid = cfg.p_grid();
    let rows: Vec<TrialRow> = pool(jobs)?.install(|| {
        (0..cfg.trials)
            .into_par_iter()
            .map(|i| run_trial(&scheme, cfg.mode, &p_grid, cfg.master_seed, i))
            .collect::<Result<_>>()
    })?;

    let sample = scheme.run(RANK_POWER, true, &mut trial_rng(cfg.master_seed, 0))?;
    let mut report = DofReport::new(scheme.name(), &sample, scheme.predicted());
    let mut failures = Vec::new();
    if !report.ratio_matches() {
        failures.push(format!(
            "ratio {} differs from predicted {}",
            report.ratio, report.predicted
        ));
    }
    let mut mean_rates = Vec::new();
    let mut min_rank_margin = None;
    let mut decode_exact_fraction = None;
    let n = rows.len() as f64;
    match cfg.mode {
        Mode::RankVerify | Mode::NoiselessDecode => {
            let passed = rows.iter().filter(|r| r.pass).count();
            report.rank_pass = Some(round12(passed as f64 / n));
            min_rank_margin = rows.iter().filter_map(|r| r.rank_margin).reduce(f64::min).map(round12);
            if passed < rows.len() {
                failures.push(format!(
                    "{} of {} trials failed verification",
                    rows.len() - passed,
                    rows.len()
                ));
            }
            if cfg.mode == Mode::NoiselessDecode {
                let exact = rows.iter().filter(|r| r.decode_exact == Some(true)).count();
                decode_exact_fraction = Some(round12(exact as f64 / n));
            }
        }
        Mode::SnrSweep => {
            mean_rates = vec![0.0; p_grid.len()];
            for r in &rows {
                for (m, v) in mean_rates.iter_mut().zip(&r.rates) {
                    *m += v;
                }
            }
            for m in &mut mean_rates {
                *m /= n;
            }
            let slope = fit_slope(&p_grid, &mean_rates)?;
            report.slope = Some(round12(slope));
            let target = *report.predicted.numer() as f64 / *report.predicted.denom() as f64;
            if (slope - target).abs() > SLOPE_TOL * target {
                failures.push(format!("slope {slope:.4} outside 10% of {target:.4}"));
            }
            mean_rates = mean_rates.into_iter().map(round12).collect();
        }
    }
    let summary = Summary {
        scheme: scheme.name(),
        mode: cfg.mode,
        trials: cfg.trials,
        master_seed: cfg.master_seed,
        report,
        min_rank_margin,
        decode_exact_fraction,
        mean_rates,
        passed: failures.is_empty(),
        failures,
    };
    Ok(Outcome {
        summary,
        rows,
        p_grid,
        sample,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

/// Writes `trials.csv`, `summary.json`, `transcript.jsonl` (trial 0,
/// noiseless) and, for sweeps, `plot.dat` into `dir`.
pub fn write_outputs(out: &Outcome, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();

    let csv_path = dir.join("trials.csv");
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "trial".to_string(),
        "seed".into(),
        "rank_margin".into(),
        "decode_exact".into(),
    ];
    let grid_db = cfg.p_grid_db.clone().unwrap_or_default();
    header.extend(grid_db.iter().map(|db| format!("rate_{db}dB")));
    let csv_err = |e: csv::Error| Error::Io {
        path: csv_path.display().to_string(),
        source: e.into(),
    };
    w.write_record(&header).map_err(csv_err)?;
    for r in &out.rows {
        let mut rec = vec![
            r.trial.to_string(),
            r.seed.to_string(),
            r.rank_margin.map(fmt_real).unwrap_or_default(),
            r.decode_exact.map(|b| b.to_string()).unwrap_or_default(),
        ];
        rec.extend(r.rates.iter().map(|&x| fmt_real(x)));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io {
        path: csv_path.display().to_string(),
        source: e.into_error(),
    })?;
    write_file(&csv_path, &bytes)?;
    written.push(csv_path);

    let json_path = dir.join("summary.json");
    let mut json = serde_json::to_string_pretty(&out.summary).map_err(|e| Error::Io {
        path: json_path.display().to_string(),
        source: e.into(),
    })?;
    json.push('\n');
    write_file(&json_path, json.as_bytes())?;
    written.push(json_path);

    let tr_path = dir.join("transcript.jsonl");
    let mut buf = Vec::new();
    out.sample.write_jsonl(&mut buf).map_err(io_err(&tr_path))?;
    write_file(&tr_path, &buf)?;
    written.push(tr_path);

    if cfg.mode == Mode::SnrSweep {
        let plot_path = dir.join("plot.dat");
        let mut s = String::from("# log2P mean_rate\n");
        for (p, r) in out.p_grid.iter().zip(&out.summary.mean_rates) {
            let _ = writeln!(s, "{} {}", fmt_real(p.log2()), fmt_real(*r));
        }
        write_file(&plot_path, s.as_bytes())?;
        written.push(plot_path);
    }
    Ok(written)
}

/// Output directory: explicit override, then the config's `output`, then
/// `$DOFSIM_OUT_DIR/<name>`, then `dofsim-out/<name>`.
pub fn resolve_output(explicit: Option<&Path>, cfg_output: Option<&Path>, name: &str) -> PathBuf {
    if let Some(p) = explicit.or(cfg_output) {
        return p.to_path_buf();
    }
    let root = std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("dofsim-out"));
    root.join(name)
}

/// One line of `verify-all`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Schemes covered by the rank-verification sweep.
pub fn rank_matrix() -> Vec<Scheme> {
    let mut v = vec![
        Scheme::X2Forced {
            m: 1,
            n: 2,
            regime: Regime::A,
        },
        Scheme::X2Forced {
            m: 2,
            n: 5,
            regime: Regime::A,
        },
        Scheme::X2Forced {
            m: 2,
            n: 3,
            regime: Regime::B,
        },
        Scheme::X2Forced {
            m: 3,
            n: 3,
            regime: Regime::B,
        },
        Scheme::X2Forced {
            m: 2,
            n: 2,
            regime: Regime::B,
        },
        Scheme::X2Forced {
            m: 2,
            n: 1,
            regime: Regime::C,
        },
        Scheme::X2Forced {
            m: 3,
            n: 2,
            regime: Regime::C,
        },
    ];
    v.extend((2..=5).map(Scheme::KxPartial));
    v.extend((2..=4).map(Scheme::KxGlobal));
    v.extend((2..=4).map(Scheme::MatBc));
    v.extend((2..=4).map(Scheme::KIc));
    v
}

fn ratio_check(scheme: Scheme, expected: Rational) -> Result<(bool, String)> {
    let t = scheme.run(10.0, true, &mut trial_rng(0, 0))?;
    Ok((
        t.ratio() == expected,
        format!(
            "{}: {}/{} = {}",
            scheme.name(),
            t.symbol_count(),
            t.slot_count(),
            t.ratio()
        ),
    ))
}

/// Runs the full verification matrix. `trials` scales the rank and sweep
/// sizes (100 and 50 at full strength).
pub fn verify_all(seed: u64, jobs: usize, rank_trials: usize, sweep_trials: usize) -> Result<Vec<Check>> {
    let workers = pool(jobs)?;
    let mut checks = Vec::new();

    // exact ratio for every (M, N)
    let mut bad = Vec::new();
    for m in 1..=8 {
        for n in 1..=8 {
            let t = Scheme::X2 { m, n }.run(10.0, true, &mut trial_rng(seed, 0))?;
            if t.ratio() != theorem1_dof(m as u32, n as u32) {
                bad.push(format!("({m},{n})"));
            }
        }
    }
    checks.push(Check::new(
        "x2_ratio_table",
        bad.is_empty(),
        format!("mismatches: {bad:?}"),
    ));

    let run = run_x2(2, 3, 1e3, true, &mut trial_rng(seed, 0))?;
    let t = &run.transcript;
    let rx1 = crate::scheme_x2_mimo::receiver_system(t, 0, 0..3)?;
    let side = run.side_info.as_ref().map_or(0, |s| s.len());
    let ok = t.phase_lengths() == [3, 3, 1]
        && (rx1.rows(), rx1.cols()) == (9, 12)
        && side == 3
        && t.ratio() == Rational::new(24, 7);
    checks.push(Check::new(
        "x2_worked_example",
        ok,
        format!(
            "phases {:?}, system {}x{}, side info {side}, ratio {}",
            t.phase_lengths(),
            rx1.rows(),
            rx1.cols(),
            t.ratio()
        ),
    ));

    for scheme in rank_matrix() {
        let rows: Vec<(bool, f64)> = workers.install(|| {
            (0..rank_trials)
                .into_par_iter()
                .map(|i| -> Result<(bool, f64)> {
                    let mut rng = trial_rng(seed, i as u64);
                    let t = scheme.run(RANK_POWER, true, &mut rng)?;
                    let d = verify_decodability(&t, &mut rng)?;
                    Ok((d.pass() && d.decode_exact() == Some(true), d.min_margin()))
                })
                .collect::<Result<_>>()
        })?;
        let passed = rows.iter().filter(|r| r.0).count();
        let margin = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
        checks.push(Check::new(
            &format!("rank {}", scheme.name()),
            passed == rows.len(),
            format!("{passed}/{} pass, min margin {}", rows.len(), fmt_real(margin)),
        ));
    }

    for (scheme, expected) in [
        (Scheme::KxGlobal(3), Rational::new(18, 11)),
        (Scheme::KxPartial(3), Rational::new(3, 2)),
        (Scheme::KxPartial(2), Rational::new(4, 3)),
        (Scheme::KIc(2), Rational::new(4, 5)),
        (Scheme::KIc(3), Rational::new(18, 17)),
    ] {
        let (ok, detail) = ratio_check(scheme, expected)?;
        checks.push(Check::new("k_user_count", ok, detail));
    }

    let mut bad = Vec::new();
    for m in 1..=8u32 {
        for n in 1..=8u32 {
            let run = run_x2(m as usize, n as usize, 10.0, true, &mut trial_rng(seed, 0))?;
            let q = quadruple(&run.transcript)?;
            let c = outer_bound_ok(&q, m, n)?;
            let sum_ok = q.iter().sum::<Rational>() == theorem1_dof(m, n);
            let slack_ok = run.plan.regime != Regime::B || c.slack.iter().all(|s| s.is_zero());
            if !(c.ok && sum_ok && slack_ok) {
                bad.push(format!("({m},{n})"));
            }
        }
    }
    checks.push(Check::new(
        "outer_bounds",
        bad.is_empty(),
        format!("violations: {bad:?}"),
    ));

    let grid: Vec<f64> = [30.0, 40.0, 50.0, 60.0]
        .iter()
        .map(|db: &f64| 10f64.powf(db / 10.0))
        .collect();
    for scheme in [Scheme::X2 { m: 2, n: 3 }, Scheme::KxPartial(3), Scheme::KIc(2)] {
        let rates: Vec<Vec<f64>> = workers.install(|| {
            (0..sweep_trials)
                .into_par_iter()
                .map(|i| {
                    sweep_trial(
                        &|p: f64, rng: &mut TrialRng| scheme.run(p, false, rng),
                        &grid,
                        seed,
                        i as u64,
                    )
                })
                .collect::<Result<_>>()
        })?;
        let mut mean = vec![0.0; grid.len()];
        for r in &rates {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / rates.len() as f64;
            }
        }
        let slope = fit_slope(&grid, &mean)?;
        let p = scheme.predicted();
        let target = *p.numer() as f64 / *p.denom() as f64;
        checks.push(Check::new(
            &format!("slope {}", scheme.name()),
            (slope - target).abs() <= SLOPE_TOL * target,
            format!("slope {} vs {p}", fmt_real(slope)),
        ));
    }

    let mut bad = Vec::new();
    for scheme in rank_matrix() {
        for noiseless in [true, false] {
            let t = scheme.run(RANK_POWER, noiseless, &mut trial_rng(seed, 0))?;
            if !scheme.audit_clean(&t) {
                bad.push(scheme.name());
            }
        }
    }
    checks.push(Check::new(
        "causality_audit",
        bad.is_empty(),
        format!("violations: {bad:?}"),
    ));

    Ok(checks)
}

pub fn render_checks(checks: &[Check]) -> String {
    let mut s = String::new();
    for c in checks {
        let _ = writeln!(
            s,
            "{}\t{}\t{}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    s
}

#[derive(Debug, Parser)]
#[command(
    name = "dofsim",
    version,
    about = "Degrees-of-freedom simulator for feedback and delayed-CSI schemes"
)]
pub struct Cli {
    /// Master seed, overriding any configured one.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for trial-level parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print a scheme's exact DoF and bound table.
    Formulas {
        #[arg(long, value_enum)]
        scheme: SchemeId,
        #[arg(short = 'M')]
        m: Option<usize>,
        #[arg(short = 'N')]
        n: Option<usize>,
        #[arg(short = 'K')]
        k: Option<usize>,
    },
    /// Run the full verification matrix.
    VerifyAll {
        /// Output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

pub fn formulas(scheme: Scheme) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "{}", scheme.predicted());
    match scheme {
        Scheme::X2 { m, n } | Scheme::X2Forced { m, n, .. } => {
            let plan = select_regime(m, n)?;
            let run = run_x2(m, n, 10.0, true, &mut trial_rng(0, 0))?;
            let q = quadruple(&run.transcript)?;
            let c = outer_bound_ok(&q, m as u32, n as u32)?;
            let _ = writeln!(s, "regime\t{:?}", plan.regime);
            let _ = writeln!(s, "phases\t{:?}", plan.phase_lengths);
            let _ = writeln!(s, "d11 d12 d22 d21\t{} {} {} {}", q[0], q[1], q[2], q[3]);
            let _ = writeln!(s, "bound\tlhs\tslack\tholds");
            for (i, slack) in c.slack.iter().enumerate() {
                let lhs = Rational::from_integer(1) - slack;
                let _ = writeln!(s, "OB{}\t{lhs}\t{slack}\t{}", i + 1, *slack >= Rational::zero());
            }
        }
        _ => {
            let t = scheme.run(10.0, true, &mut trial_rng(0, 0))?;
            let _ = writeln!(s, "phases\t{:?}", t.phase_lengths());
            let _ = writeln!(s, "symbols/slots\t{}/{}", t.symbol_count(), t.slot_count());
        }
    }
    Ok(s)
}

/// Entry point behind the binary; returns the process exit code.
pub fn cli(args: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match &cli.command {
        Command::Run { config, output } => {
            let mut cfg = ExperimentConfig::load(config)?;
            if let Some(seed) = cli.seed {
                cfg.master_seed = seed;
            }
            let name = config
                .file_stem()
                .map_or("run".into(), |s| s.to_string_lossy().into_owned());
            let dir = resolve_output(output.as_deref(), cfg.output.as_deref(), &name);
            let outcome = run_experiment(&cfg, cli.jobs)?;
            let files = write_outputs(&outcome, &cfg, &dir)?;
            let s = &outcome.summary;
            let _ = writeln!(
                out,
                "{}: ratio {} predicted {}",
                s.scheme, s.report.ratio, s.report.predicted
            );
            if let Some(r) = s.report.rank_pass {
                let _ = writeln!(out, "rank_pass {r}");
            }
            if let Some(x) = s.report.slope {
                let _ = writeln!(out, "slope {x}");
            }
            for f in &s.failures {
                let _ = writeln!(out, "FAIL {f}");
            }
            for f in files {
                let _ = writeln!(out, "wrote {}", f.display());
            }
            Ok(if s.passed { 0 } else { 1 })
        }
        Command::Formulas { scheme, m, n, k } => {
            let s = formulas(Scheme::from_params(*scheme, *m, *n, *k)?)?;
            let _ = write!(out, "{s}");
            Ok(0)
        }
        Command::VerifyAll { output } => {
            let checks = verify_all(cli.seed.unwrap_or(0), cli.jobs, 100, 50)?;
            let text = render_checks(&checks);
            let _ = write!(out, "{text}");
            let dir = resolve_output(output.as_deref(), None, "verify-all");
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let path = dir.join("verify_all.tsv");
            write_file(&path, text.as_bytes())?;
            let _ = writeln!(out, "wrote {}", path.display());
            Ok(if checks.iter().all(|c| c.passed) { 0 } else { 1 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_and_repeat() {
        assert_eq!(derive_seed(42, 3), derive_seed(42, 3));
        assert_ne!(derive_seed(42, 3), derive_seed(42, 4));
        assert_ne!(derive_seed(42, 0), derive_seed(43, 0));
    }

    #[test]
    fn config_parsing() {
        let cfg = ExperimentConfig::parse(
            "scheme = \"x2_mimo\"\nm = 2\nn = 3\nmode = \"rank_verify\"\ntrials = 5\nmaster_seed = 7\n",
        )
        .unwrap();
        assert_eq!(cfg.scheme().unwrap(), Scheme::X2 { m: 2, n: 3 });
        assert!(ExperimentConfig::parse("scheme = \"x2_mimo\"\nm = 2\nmode = \"rank_verify\"\n").is_err());
        assert!(ExperimentConfig::parse("scheme = \"k_ic\"\nk = 2\nmode = \"rank_verify\"\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::parse("scheme = \"k_ic\"\nk = 2\nmode = \"snr_sweep\"\n").is_err());
        assert!(ExperimentConfig::parse("scheme = \"kx_partial\"\nk = 1\nmode = \"rank_verify\"\n").is_err());
        assert!(
            ExperimentConfig::parse("scheme = \"k_ic\"\nk = 2\nmode = \"snr_sweep\"\np_grid_db = [40, 30]\n").is_err()
        );
        let sweep = ExperimentConfig::parse(
            "scheme = \"k_ic\"\nk = 2\nmode = \"snr_sweep\"\np_grid_db = [30, 60]\ntrials = 2\n",
        )
        .unwrap();
        assert_eq!(sweep.p_grid(), vec![1e3, 1e6]);
    }

    #[test]
    fn experiment_is_independent_of_jobs() {
        let cfg = ExperimentConfig::parse(
            "scheme = \"kx_partial\"\nk = 3\nmode = \"snr_sweep\"\np_grid_db = [30, 40, 50, 60]\ntrials = 6\nmaster_seed = 3\n",
        )
        .unwrap();
        let a = run_experiment(&cfg, 1).unwrap();
        let b = run_experiment(&cfg, 4).unwrap();
        assert_eq!(a.rows, b.rows);
        assert!(a.summary.passed, "{:?}", a.summary.failures);
    }

    #[test]
    fn noiseless_decode_mode() {
        let cfg = ExperimentConfig::parse("scheme = \"kx_partial\"\nk = 3\nmode = \"noiseless_decode\"\ntrials = 4\n")
            .unwrap();
        let out = run_experiment(&cfg, 2).unwrap();
        assert_eq!(out.summary.report.ratio, Rational::new(3, 2));
        assert_eq!(out.summary.decode_exact_fraction, Some(1.0));
        assert!(out.summary.passed);
    }

    #[test]
    fn twelve_digit_reals() {
        assert_eq!(fmt_real(24.0 / 7.0), "3.42857142857e0");
        assert_eq!(round12(1.0 / 3.0), 0.333333333333);
    }

    #[test]
    fn formulas_first_line() {
        let s = formulas(Scheme::X2 { m: 1, n: 1 }).unwrap();
        assert_eq!(s.lines().next(), Some("4/3"));
        let s = formulas(Scheme::KxGlobal(3)).unwrap();
        assert_eq!(s.lines().next(), Some("18/11"));
    }
}
