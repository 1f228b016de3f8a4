//! Verdicts on transcripts: exact DoF accounting, outer bounds, generic
//! rank verification with noiseless decoding, and finite-SNR rates.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;
use num_traits::{One, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::complexla::{complex_gaussian, Matrix};
use crate::error::{Error, Result};
use crate::harness::trial_rng;
use crate::ledger::{coefficient_matrix, AtomId, Canceller, Row};
use crate::transcript::Transcript;
use crate::LinExpr;
use crate::{CMatrix, Rational, TrialRng};

/// Minimum σ_min/σ_max a receiver's system must show to count as full rank.
pub const MARGIN_TOL: f64 = 1e-6;
/// Relative error allowed when comparing noiseless decodes to ground truth.
pub const DECODE_TOL: f64 = 1e-6;

/// 1 + 1/2 + … + 1/k.
pub fn harmonic(k: u32) -> Rational {
    (1..=k as i64).map(|i| Rational::new(1, i)).sum()
}

/// Sum DoF of the (M, M, N, N) MIMO X-channel with output feedback and
/// delayed CSI.
pub fn theorem1_dof(m: u32, n: u32) -> Rational {
    let (m, n) = (m as i64, n as i64);
    if 2 * m <= n {
        Rational::from_integer(2 * m)
    } else if n <= m {
        Rational::new(4 * n, 3)
    } else {
        Rational::new(4 * m * n, 2 * m + n)
    }
}

/// K/H_K: K-user X-channel with global feedback, and the K-antenna MISO
/// broadcast channel with delayed CSI.
pub fn global_fb_dof(k: u32) -> Rational {
    Rational::from_integer(k as i64) / harmonic(k)
}

/// 2K/(K+1): K-user X-channel with partial feedback.
pub fn partial_fb_dof(k: u32) -> Rational {
    Rational::new(2 * k as i64, k as i64 + 1)
}

/// K/(1 + H_K): K-user interference channel with global feedback and
/// delayed CSI.
pub fn ic_dof(k: u32) -> Rational {
    Rational::from_integer(k as i64) / (Rational::one() + harmonic(k))
}

/// Per-link DoF in the order (d11, d12, d22, d21), d_ij from transmitter i
/// to receiver j.
pub type Quadruple = [Rational; 4];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OuterBoundCheck {
    pub ok: bool,
    /// 1 − left-hand side of each bound.
    pub slack: [Rational; 2],
}

/// Checks both broadcast-channel outer bounds on a DoF quadruple.
pub fn outer_bound_ok(quad: &Quadruple, m: u32, n: u32) -> Result<OuterBoundCheck> {
    if quad.iter().any(|d| *d < Rational::zero()) {
        return Err(Error::Domain("negative DoF in quadruple".into()));
    }
    if m == 0 || n == 0 {
        return Err(Error::Domain("antenna counts must be positive".into()));
    }
    let [d11, d12, d22, d21] = *quad;
    let (m, n) = (m as i64, n as i64);
    let wide = Rational::from_integer((2 * m).min(2 * n));
    let narrow = Rational::from_integer((2 * m).min(n));
    let to_rx1 = d11 + d21;
    let to_rx2 = d22 + d12;
    let s1 = Rational::one() - (to_rx1 / wide + to_rx2 / narrow);
    let s2 = Rational::one() - (to_rx1 / narrow + to_rx2 / wide);
    Ok(OuterBoundCheck {
        ok: s1 >= Rational::zero() && s2 >= Rational::zero(),
        slack: [s1, s2],
    })
}

/// The achieved quadruple of a two-user transcript.
pub fn quadruple(t: &Transcript) -> Result<Quadruple> {
    if t.config.num_tx != 2 || t.config.num_rx != 2 {
        return Err(Error::Transcript("quadruple needs a two-user transcript".into()));
    }
    let d = t.link_dof();
    Ok([d[0][0], d[0][1], d[1][1], d[1][0]])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverVerdict {
    pub rx: usize,
    pub desired: usize,
    /// Clean equations left after cancelling everything undesired.
    pub equations: usize,
    /// σ_min/σ_max of the row-normalised system; 1 when nothing is desired.
    pub rank_margin: f64,
    pub full_rank: bool,
    /// Worst relative decode error, noiseless transcripts only.
    pub decode_error: Option<f64>,
}

impl ReceiverVerdict {
    pub fn decode_exact(&self) -> Option<bool> {
        self.decode_error.map(|e| e <= DECODE_TOL)
    }

    pub fn pass(&self) -> bool {
        self.full_rank && self.decode_exact().unwrap_or(true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decodability {
    pub receivers: Vec<ReceiverVerdict>,
}

impl Decodability {
    pub fn pass(&self) -> bool {
        self.receivers.iter().all(ReceiverVerdict::pass)
    }

    pub fn min_margin(&self) -> f64 {
        self.receivers
            .iter()
            .map(|r| r.rank_margin)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn decode_exact(&self) -> Option<bool> {
        let v: Vec<bool> = self.receivers.iter().filter_map(|r| r.decode_exact()).collect();
        if v.is_empty() {
            None
        } else {
            Some(v.iter().all(|&b| b))
        }
    }
}

fn check_shape(t: &Transcript) -> Result<()> {
    for rec in &t.slots {
        if rec.io.received.len() != t.config.num_rx || rec.io.received.iter().any(|r| r.len() != t.config.rx_antennas) {
            return Err(Error::Transcript(format!(
                "slot {} output shape does not match the network",
                rec.io.slot
            )));
        }
    }
    Ok(())
}

/// Builds each receiver's effective system by cancelling every undesired
/// symbol against its own earlier outputs, then checks that the clean
/// equations determine all desired symbols. Noiseless transcripts are also
/// decoded against ground-truth symbol values drawn from `rng`.
pub fn verify_decodability<R: Rng + ?Sized>(t: &Transcript, rng: &mut R) -> Result<Decodability> {
    check_shape(t)?;
    let noiseless = t.is_noiseless();
    let truth: BTreeMap<AtomId, Complex64> = if noiseless {
        t.atoms.info_symbols().map(|a| (a.id, complex_gaussian(rng))).collect()
    } else {
        BTreeMap::new()
    };
    let mut receivers = Vec::with_capacity(t.config.num_rx);
    for rx in 0..t.config.num_rx {
        receivers.push(verify_receiver(t, rx, noiseless.then_some(&truth))?);
    }
    Ok(Decodability { receivers })
}

// Observation tags live above every real atom id.
const TAG_BASE: u32 = 1 << 31;

fn verify_receiver(t: &Transcript, rx: usize, truth: Option<&BTreeMap<AtomId, Complex64>>) -> Result<ReceiverVerdict> {
    let desired = t.desired(rx);
    if desired.is_empty() {
        return Ok(ReceiverVerdict {
            rx,
            desired: 0,
            equations: 0,
            rank_margin: 1.0,
            full_rank: true,
            decode_error: truth.map(|_| 0.0),
        });
    }
    if t.atoms.len() >= TAG_BASE as usize {
        return Err(Error::Transcript("too many atoms to tag observations".into()));
    }
    let want: BTreeSet<AtomId> = desired.iter().copied().collect();
    let atoms = &t.atoms;
    let is_tag = |id: AtomId| id.0 >= TAG_BASE;

    // Unit-norm observations, each tagged so the combinations that clear
    // the interference can be read back.
    let mut obs = Vec::new();
    for y in t.observations(rx) {
        let n = y.norm_over(|id| !atoms.is_noise(id));
        if n > 0.0 {
            obs.push(y.scale(Complex64::new(1.0 / n, 0.0)));
        }
    }
    let mut canceller = Canceller::new(|id: AtomId| !is_tag(id) && !want.contains(&id) && !atoms.is_noise(id));
    let mut combos = Vec::new();
    for (i, y) in obs.iter().enumerate() {
        let tag = AtomId(TAG_BASE + i as u32);
        let tagged = y + &LinExpr::atom(tag);
        if let Some(row) = canceller.absorb(Row::new(tagged)) {
            combos.push(row.expr.restrict(is_tag));
        }
    }
    // Orthonormal basis of the interference-free combinations, applied to
    // the desired columns: invariant to how the combinations were found.
    let tags: Vec<AtomId> = (0..obs.len()).map(|i| AtomId(TAG_BASE + i as u32)).collect();
    let (a, _) = coefficient_matrix(&obs, &desired)?;
    let (q, equations) = if combos.is_empty() {
        (Matrix::zeros(0, obs.len()), 0)
    } else {
        let (c, _) = coefficient_matrix(&combos, &tags)?;
        let svd = c.svd()?;
        let tol = svd.s[0] * 1e-9;
        let keep = svd.s.iter().filter(|&&x| x > tol).count();
        let vh = svd.v.adjoint();
        (Matrix::from_fn(keep, obs.len(), |r, k| vh[(r, k)]), keep)
    };
    let (margin, full) = if equations < desired.len() {
        (0.0, false)
    } else {
        let d = q.matmul(&a)?;
        let margin = d.rank_margin()?;
        (margin, margin > MARGIN_TOL)
    };
    let decode_error = match truth {
        Some(v) if full => {
            let d = q.matmul(&a)?;
            let values: Vec<Complex64> = obs.iter().map(|y| y.evaluate(v)).collect();
            let x = d.solve_least_squares(&q.mul_vec(&values)?)?;
            let scale = desired.iter().map(|id| v[id].norm()).fold(1.0, f64::max);
            let err = desired
                .iter()
                .zip(&x)
                .map(|(id, xi)| (xi - v[id]).norm())
                .fold(0.0, f64::max);
            Some(err / scale)
        }
        Some(_) => Some(f64::INFINITY),
        None => None,
    };
    Ok(ReceiverVerdict {
        rx,
        desired: desired.len(),
        equations,
        rank_margin: margin,
        full_rank: full,
        decode_error,
    })
}

/// Gaussian mutual information between each receiver's desired symbols and
/// all of its outputs, in bits per slot, at transmit power `p`.
///
/// Undesired symbols and noise (including forwarded noise) are treated as
/// Gaussian interference with their exact ledger covariance. Using every
/// output at once subsumes any cancellation of known side information, so
/// the value is the same as after `cancel_known`.
pub fn achievable_rate(t: &Transcript, p: f64) -> Result<Vec<f64>> {
    check_shape(t)?;
    if t.is_noiseless() {
        return Err(Error::Mode("achievable rate needs a noisy transcript".into()));
    }
    if p.is_nan() || p <= 0.0 {
        return Err(Error::Domain(format!("power must be positive, got {p}")));
    }
    let slots = t.slot_count() as f64;
    (0..t.config.num_rx)
        .map(|rx| {
            let desired: BTreeSet<AtomId> = t.desired(rx).into_iter().collect();
            if desired.is_empty() {
                return Ok(0.0);
            }
            let obs = t.observations(rx);
            let support: BTreeSet<AtomId> = obs.iter().flat_map(|y| y.support()).collect();
            let cols: Vec<AtomId> = support.into_iter().collect();
            let (g, _) = coefficient_matrix(&obs, &cols)?;
            let powers: Vec<f64> = cols.iter().map(|&id| t.atoms.get(id).power(p)).collect();
            let total = weighted_gram(&g, &powers, |_| true);
            let interference = weighted_gram(&g, &powers, |k| !desired.contains(&cols[k]));
            let mi = total.logdet_hpd()? - interference.logdet_hpd()?;
            Ok(mi.max(0.0) / std::f64::consts::LN_2 / slots)
        })
        .collect()
}

// G diag(w) Gᴴ over the selected columns.
fn weighted_gram(g: &CMatrix, w: &[f64], keep: impl Fn(usize) -> bool) -> CMatrix {
    let n = g.rows();
    let mut out = Matrix::zeros(n, n);
    for k in (0..g.cols()).filter(|&k| keep(k) && w[k] > 0.0) {
        let col = g.column(k);
        for i in 0..n {
            if col[i] == Complex64::zero() {
                continue;
            }
            let ci = col[i] * w[k];
            for j in 0..n {
                out[(i, j)] += ci * col[j].conj();
            }
        }
    }
    out
}

/// Mean sum rate per power point and the fitted DoF slope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub p_grid: Vec<f64>,
    pub mean_rates: Vec<f64>,
    pub slope: f64,
    /// Per-trial sum rates, `trial_rates[trial][p]`.
    pub trial_rates: Vec<Vec<f64>>,
}

/// Least-squares slope of `rates` against log₂ P over the upper half of
/// the grid.
pub fn fit_slope(p_grid: &[f64], rates: &[f64]) -> Result<f64> {
    if p_grid.len() < 2 || p_grid.len() != rates.len() {
        return Err(Error::Domain("slope fit needs at least two matching points".into()));
    }
    let n = p_grid.len();
    let from = (n / 2).min(n - 2);
    let xs: Vec<f64> = p_grid[from..].iter().map(|p| p.log2()).collect();
    let ys = &rates[from..];
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Runs `runner` at every grid power for `trials` seeded trials (the same
/// channel realisations at every power) and fits the DoF slope of the mean
/// sum rate.
pub fn dof_slope<F>(runner: F, p_grid: &[f64], trials: usize, master_seed: u64) -> Result<SlopeFit>
where
    F: Fn(f64, &mut TrialRng) -> Result<Transcript> + Sync,
{
    if p_grid.len() < 2 {
        return Err(Error::Domain("power grid needs at least two points".into()));
    }
    if p_grid.iter().any(|p| !p.is_finite()) || p_grid.windows(2).any(|w| w[0] >= w[1]) || p_grid[0] <= 0.0 {
        return Err(Error::Domain("power grid must be positive and ascending".into()));
    }
    if trials == 0 {
        return Err(Error::Domain("need at least one trial".into()));
    }
    let trial_rates: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|i| sweep_trial(&runner, p_grid, master_seed, i as u64))
        .collect::<Result<_>>()?;
    let mut mean_rates = vec![0.0; p_grid.len()];
    for r in &trial_rates {
        for (m, v) in mean_rates.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in &mut mean_rates {
        *m /= trials as f64;
    }
    let slope = fit_slope(p_grid, &mean_rates)?;
    Ok(SlopeFit {
        p_grid: p_grid.to_vec(),
        mean_rates,
        slope,
        trial_rates,
    })
}

/// Sum rate at each grid power for one trial.
pub fn sweep_trial<F>(runner: &F, p_grid: &[f64], master_seed: u64, trial: u64) -> Result<Vec<f64>>
where
    F: Fn(f64, &mut TrialRng) -> Result<Transcript>,
{
    p_grid
        .iter()
        .map(|&p| {
            let mut rng = trial_rng(master_seed, trial);
            let t = runner(p, &mut rng)?;
            Ok(achievable_rate(&t, p)?.iter().sum())
        })
        .collect()
}

fn ratio_string<S: Serializer>(r: &Rational, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{}/{}", r.numer(), r.denom()))
}

/// Summary of a scheme's verification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DofReport {
    pub scheme: String,
    pub symbols: usize,
    pub slots: usize,
    #[serde(serialize_with = "ratio_string")]
    pub ratio: Rational,
    #[serde(serialize_with = "ratio_string")]
    pub predicted: Rational,
    pub rank_pass: Option<f64>,
    pub slope: Option<f64>,
}

impl DofReport {
    pub fn new(scheme: impl Into<String>, t: &Transcript, predicted: Rational) -> Self {
        DofReport {
            scheme: scheme.into(),
            symbols: t.symbol_count(),
            slots: t.slot_count(),
            ratio: t.ratio(),
            predicted,
            rank_pass: None,
            slope: None,
        }
    }

    pub fn ratio_matches(&self) -> bool {
        self.ratio == self.predicted
    }
}
