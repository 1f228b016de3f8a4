//! Two-user MIMO X-channel with M antennas per transmitter and N per
//! receiver, output feedback and delayed CSI.
//!
//! Three schemes cover the parameter range:
//! - `A` (2M ≤ N): a single multiple-access slot to receiver 1.
//! - `B` (N ≤ 2M ≤ 2N): N slots of symbols for receiver 1, N slots for
//!   receiver 2, then 2M−N slots carrying sums of what each receiver
//!   overheard for the other.
//! - `C` (N ≤ M): one slot per receiver, then one slot in which each
//!   transmitter resends its own receiver's overheard output.

use num_complex::Complex64;
use rand::Rng;

use crate::analysis::theorem1_dof;
use crate::channel_env::{ChannelEnv, CsiAtTx, FeedbackTopology, NetworkConfig};
use crate::error::{Error, Result};
use crate::ledger::{AtomId, Provenance};
use crate::transcript::Transcript;
use crate::{LinExpr, Rational, Signal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Regime {
    A,
    B,
    C,
}

impl Regime {
    /// Whether (M, N) satisfies the regime's defining inequality.
    pub fn admits(self, m: usize, n: usize) -> bool {
        match self {
            Regime::A => 2 * m <= n,
            Regime::B => n <= 2 * m && m <= n,
            Regime::C => n <= m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct X2Plan {
    pub m: usize,
    pub n: usize,
    pub regime: Regime,
    pub phase_lengths: Vec<usize>,
    /// Symbols in each non-empty message.
    pub symbols_per_message: usize,
    pub predicted_dof: Rational,
}

impl X2Plan {
    pub fn for_regime(m: usize, n: usize, regime: Regime) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::Domain("antenna counts must be positive".into()));
        }
        if !regime.admits(m, n) {
            return Err(Error::RegimeMismatch(format!(
                "regime {regime:?} does not cover M={m}, N={n}"
            )));
        }
        let (phase_lengths, symbols_per_message) = match regime {
            Regime::A => (vec![1], m),
            Regime::B => (vec![n, n, 2 * m - n], m * n),
            Regime::C => (vec![1, 1, 1], n),
        };
        Ok(X2Plan {
            m,
            n,
            regime,
            phase_lengths,
            symbols_per_message,
            predicted_dof: theorem1_dof(m as u32, n as u32),
        })
    }

    pub fn side_info_len(&self) -> usize {
        match self.regime {
            Regime::B => 2 * self.m * self.n - self.n * self.n,
            _ => 0,
        }
    }
}

/// Picks the scheme for (M, N); on a boundary the first admissible of
/// A, B, C wins.
pub fn select_regime(m: usize, n: usize) -> Result<X2Plan> {
    if m == 0 || n == 0 {
        return Err(Error::Domain("antenna counts must be positive".into()));
    }
    let regime = [Regime::A, Regime::B, Regime::C]
        .into_iter()
        .find(|r| r.admits(m, n))
        .expect("the three regimes cover every (M, N)");
    X2Plan::for_regime(m, n, regime)
}

/// Overheard outputs exchanged in the last phase of scheme B.
#[derive(Debug, Clone, PartialEq)]
pub struct SideInfoSet {
    /// Receiver 2's phase-1 outputs, as fed back to transmitter 2.
    pub u_tilde: Vec<LinExpr>,
    /// Transmitter 1's reconstruction of `u_tilde`.
    pub u_tilde_rebuilt: Vec<LinExpr>,
    /// Receiver 1's phase-2 outputs, as fed back to transmitter 1.
    pub v_tilde: Vec<LinExpr>,
    /// Transmitter 2's reconstruction of `v_tilde`.
    pub v_tilde_rebuilt: Vec<LinExpr>,
    /// Element k is sent at (transmitter, antenna, slot).
    pub placement: Vec<(usize, usize, usize)>,
}

impl SideInfoSet {
    pub fn len(&self) -> usize {
        self.u_tilde.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_tilde.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct X2Run {
    pub plan: X2Plan,
    pub transcript: Transcript,
    pub side_info: Option<SideInfoSet>,
}

pub fn x2_network(m: usize, n: usize, feedback: FeedbackTopology, power: f64, noiseless: bool) -> NetworkConfig {
    NetworkConfig {
        num_tx: 2,
        num_rx: 2,
        tx_antennas: m,
        rx_antennas: n,
        feedback,
        csi_at_tx: CsiAtTx::Delayed,
        power,
        noiseless,
    }
}

fn dims(cfg: &NetworkConfig, regime: Regime) -> Result<(usize, usize)> {
    if cfg.num_tx != 2 || cfg.num_rx != 2 {
        return Err(Error::Config(
            "two-user X-channel needs 2 transmitters and 2 receivers".into(),
        ));
    }
    let (m, n) = (cfg.tx_antennas, cfg.rx_antennas);
    if !regime.admits(m, n) {
        return Err(Error::RegimeMismatch(format!(
            "regime {regime:?} does not cover M={m}, N={n}"
        )));
    }
    Ok((m, n))
}

fn require_own_feedback(cfg: &NetworkConfig) -> Result<()> {
    if !cfg.has_feedback(0, 0) || !cfg.has_feedback(1, 1) {
        return Err(Error::Config(
            "each receiver must feed back to its like-indexed transmitter".into(),
        ));
    }
    Ok(())
}

/// One slot in which each transmitter sends `count` fresh symbols for
/// `rx` on antennas `0..count`. Returns the symbol ids per transmitter.
fn fresh_slot<R: Rng>(env: &mut ChannelEnv<R>, rx: usize, count: usize) -> Result<Vec<Vec<AtomId>>> {
    let m = env.config().tx_antennas;
    let slot = env.current_slot();
    let share = 1.0 / count as f64;
    let ids: Vec<Vec<AtomId>> = (0..2)
        .map(|tx| (0..count).map(|a| env.new_symbol(tx, slot, a, rx, share)).collect())
        .collect();
    let sigs = ids
        .iter()
        .map(|row| {
            let mut v: Vec<Signal> = row.iter().map(|&id| Signal::own(LinExpr::atom(id))).collect();
            v.resize(m, Signal::silent());
            v
        })
        .collect();
    env.advance_slot(sigs)?;
    Ok(ids)
}

pub fn run_regime_a<R: Rng>(mut env: ChannelEnv<R>) -> Result<Transcript> {
    let (m, n) = dims(env.config(), Regime::A)?;
    env.begin_phase("mac");
    fresh_slot(&mut env, 0, m)?;
    Ok(env.into_transcript(format!("x2_mimo(M={m},N={n},A)")))
}

/// Transmitter `r`'s copy of receiver `1−r`'s outputs in `slot`: cancel its
/// own part from receiver r's output, least-squares decode the other
/// transmitter's symbols, then recombine with the slot's channel.
fn rebuild_other_output<R: Rng>(
    env: &mut ChannelEnv<R>,
    r: usize,
    slot: usize,
    ids: &[Vec<AtomId>],
) -> Result<Vec<Signal>> {
    let o = 1 - r;
    let fb = env.feedback(r, r, slot)?;
    let (draw, csi) = env.csi(r, slot)?;
    let draw = draw.clone();
    let own: Vec<Signal> = ids[r].iter().map(|&id| Signal::own(LinExpr::atom(id))).collect();
    let own_refs: Vec<&Signal> = own.iter().collect();
    let h_own = draw.h(r, r);
    let mut residual = Vec::with_capacity(fb.len());
    for (i, y) in fb.iter().enumerate() {
        let mut coeffs = vec![Complex64::new(1.0, 0.0)];
        coeffs.extend(h_own.row(i).iter().map(|c| -c));
        let mut refs = vec![y];
        refs.extend(own_refs.iter().copied());
        residual.push(Signal::combine(&coeffs, &refs)?.with_deps(&csi));
    }
    let est = Signal::mix(&draw.h(r, o).pseudo_inverse()?, &residual)?;
    let (h_mine, h_theirs) = (draw.h(o, r), draw.h(o, o));
    let mut out = Vec::with_capacity(fb.len());
    for i in 0..h_mine.rows() {
        let mut coeffs: Vec<Complex64> = h_mine.row(i).to_vec();
        coeffs.extend_from_slice(h_theirs.row(i));
        let refs: Vec<&Signal> = own.iter().chain(est.iter()).collect();
        let s = Signal::combine(&coeffs, &refs)?.with_deps(&csi);
        env.record_knowledge(r, s.clone(), Provenance::Reconstruction);
        out.push(s);
    }
    Ok(out)
}

/// `len` outputs of receiver `1−r` over `slots`, both as fed back to
/// transmitter `1−r` and as rebuilt by transmitter `r`. Element k is
/// antenna k / N of slot k mod N, so every slot contributes the same
/// number of components.
fn side_info<R: Rng>(
    env: &mut ChannelEnv<R>,
    r: usize,
    slots: &[(usize, Vec<Vec<AtomId>>)],
    len: usize,
) -> Result<(Vec<Signal>, Vec<Signal>)> {
    let o = 1 - r;
    let n = slots.len();
    let mut native = Vec::with_capacity(n);
    let mut rebuilt = Vec::with_capacity(n);
    for (slot, ids) in slots {
        native.push(env.feedback(o, o, *slot)?);
        rebuilt.push(rebuild_other_output(env, r, *slot, ids)?);
    }
    let pick = |v: &[Vec<Signal>]| (0..len).map(|k| v[k % n][k / n].clone()).collect();
    Ok((pick(&native), pick(&rebuilt)))
}

pub fn run_regime_b<R: Rng>(mut env: ChannelEnv<R>) -> Result<(Transcript, SideInfoSet)> {
    let (m, n) = dims(env.config(), Regime::B)?;
    require_own_feedback(env.config())?;
    if env.config().csi_at_tx != CsiAtTx::Delayed {
        return Err(Error::Config("scheme B needs delayed CSI at the transmitters".into()));
    }
    let len = 2 * m * n - n * n;
    let width = 2 * m - n;

    let mut phases = Vec::with_capacity(2);
    for (rx, name) in [(0, "u"), (1, "v")] {
        env.begin_phase(name);
        let mut slots = Vec::with_capacity(n);
        for _ in 0..n {
            let slot = env.current_slot();
            slots.push((slot, fresh_slot(&mut env, rx, m)?));
        }
        phases.push(slots);
    }
    // ũ: receiver 2's phase-1 outputs, rebuilt by transmitter 1.
    let (u_native, u_rebuilt) = side_info(&mut env, 0, &phases[0], len)?;
    // ṽ: receiver 1's phase-2 outputs, rebuilt by transmitter 2.
    let (v_native, v_rebuilt) = side_info(&mut env, 1, &phases[1], len)?;
    // each transmitter's own versions, indexed [tx][k]
    let u_at = [&u_rebuilt, &u_native];
    let v_at = [&v_native, &v_rebuilt];

    env.begin_phase("side-info");
    let start = env.current_slot();
    let mut placement = Vec::with_capacity(len);
    let mut grid = vec![vec![vec![Signal::silent(); m]; 2]; width];
    for k in 0..len {
        let (v, off) = (k / width, k % width);
        let (tx, ant) = (v / m, v % m);
        let sum = Signal::combine(&[Complex64::new(1.0, 0.0); 2], &[&u_at[tx][k], &v_at[tx][k]])?;
        grid[off][tx][ant] = sum;
        placement.push((tx, ant, start + off));
    }
    for sigs in grid {
        let scaled = sigs.iter().map(|s| env.scale_to_budget(s).0).collect();
        env.advance_slot(scaled)?;
    }
    let exprs = |v: &[Signal]| v.iter().map(|s| s.expr.clone()).collect::<Vec<_>>();
    let side = SideInfoSet {
        u_tilde: exprs(&u_native),
        u_tilde_rebuilt: exprs(&u_rebuilt),
        v_tilde: exprs(&v_native),
        v_tilde_rebuilt: exprs(&v_rebuilt),
        placement,
    };
    Ok((env.into_transcript(format!("x2_mimo(M={m},N={n},B)")), side))
}

pub fn run_regime_c<R: Rng>(mut env: ChannelEnv<R>) -> Result<Transcript> {
    let (m, n) = dims(env.config(), Regime::C)?;
    require_own_feedback(env.config())?;
    env.begin_phase("rx1");
    fresh_slot(&mut env, 0, n)?;
    env.begin_phase("rx2");
    fresh_slot(&mut env, 1, n)?;
    env.begin_phase("resend");
    // transmitter 1 resends receiver 1's slot-2 output, transmitter 2
    // receiver 2's slot-1 output
    let mut sigs = Vec::with_capacity(2);
    for (tx, slot) in [(0, 1), (1, 0)] {
        let mut v = env.feedback(tx, tx, slot)?;
        v.resize(m, Signal::silent());
        sigs.push(env.scale_to_budget(&v).0);
    }
    env.advance_slot(sigs)?;
    Ok(env.into_transcript(format!("x2_mimo(M={m},N={n},C)")))
}

/// Runs the scheme `regime` prescribes for (M, N) with partial feedback.
pub fn run_x2_regime<R: Rng>(m: usize, n: usize, regime: Regime, power: f64, noiseless: bool, rng: R) -> Result<X2Run> {
    let plan = X2Plan::for_regime(m, n, regime)?;
    let env = ChannelEnv::new(x2_network(m, n, FeedbackTopology::Partial, power, noiseless), rng)?;
    let (transcript, side_info) = match regime {
        Regime::A => (run_regime_a(env)?, None),
        Regime::B => {
            let (t, s) = run_regime_b(env)?;
            (t, Some(s))
        }
        Regime::C => (run_regime_c(env)?, None),
    };
    Ok(X2Run {
        plan,
        transcript,
        side_info,
    })
}

pub fn run_x2<R: Rng>(m: usize, n: usize, power: f64, noiseless: bool, rng: R) -> Result<X2Run> {
    let regime = select_regime(m, n)?.regime;
    run_x2_regime(m, n, regime, power, noiseless, rng)
}

/// Desired-symbol coefficients of receiver `rx`'s outputs over `slots`.
pub fn receiver_system(t: &Transcript, rx: usize, slots: std::ops::Range<usize>) -> Result<crate::CMatrix> {
    let obs = t.observations_in(rx, slots);
    let desired = t.desired(rx);
    Ok(crate::ledger::coefficient_matrix(&obs, &desired)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{outer_bound_ok, quadruple, verify_decodability};
    use crate::transcript::{causality_audit, strict_local_audit};
    use crate::TrialRng;
    use num_traits::Zero;
    use rand::SeedableRng;

    fn rng(seed: u64) -> TrialRng {
        TrialRng::seed_from_u64(seed)
    }

    #[test]
    fn regime_selection() {
        let p = select_regime(2, 3).unwrap();
        assert_eq!((p.regime, p.predicted_dof), (Regime::B, Rational::new(24, 7)));
        // boundary M = N resolves to B; same value as the C formula
        let p = select_regime(1, 1).unwrap();
        assert_eq!((p.regime, p.predicted_dof), (Regime::B, Rational::new(4, 3)));
        let p = select_regime(1, 2).unwrap();
        assert_eq!((p.regime, p.predicted_dof), (Regime::A, Rational::from_integer(2)));
        assert_eq!(select_regime(3, 2).unwrap().regime, Regime::C);
        assert!(select_regime(0, 2).is_err());
        assert_eq!(select_regime(2, 3).unwrap().phase_lengths, vec![3, 3, 1]);
    }

    #[test]
    fn worked_example() {
        let run = run_x2(2, 3, 1e3, true, rng(1)).unwrap();
        let t = &run.transcript;
        assert_eq!(t.phase_lengths(), vec![3, 3, 1]);
        let a = receiver_system(t, 0, 0..3).unwrap();
        assert_eq!((a.rows(), a.cols()), (9, 12));
        let side = run.side_info.unwrap();
        assert_eq!(side.len(), 3);
        assert_eq!(side.placement, vec![(0, 0, 6), (0, 1, 6), (1, 0, 6)]);
        assert!(t.slots[6].io.transmitted[1][1].expr.is_zero());
        assert_eq!(t.ratio(), Rational::new(24, 7));
        assert_eq!(side.placement.iter().filter(|p| p.0 == 0).count(), 2);
    }

    #[test]
    fn omniscience_in_noiseless_mode() {
        for (m, n) in [(2, 3), (3, 4), (3, 3), (4, 5)] {
            let side = run_x2_regime(m, n, Regime::B, 1e3, true, rng(m as u64 * 7 + n as u64))
                .unwrap()
                .side_info
                .unwrap();
            assert_eq!(side.len(), 2 * m * n - n * n);
            for (a, b) in side.u_tilde.iter().zip(&side.u_tilde_rebuilt) {
                assert!((a - b).max_abs() < 1e-9 * a.max_abs().max(1.0), "({m},{n})");
            }
            for (a, b) in side.v_tilde.iter().zip(&side.v_tilde_rebuilt) {
                assert!((a - b).max_abs() < 1e-9 * a.max_abs().max(1.0));
            }
            let mut cells: Vec<_> = side.placement.clone();
            cells.sort();
            cells.dedup();
            assert_eq!(cells.len(), side.len());
        }
    }

    #[test]
    fn ratio_matches_formula() {
        for m in 1..=8 {
            for n in 1..=8 {
                let run = run_x2(m, n, 10.0, true, rng(0)).unwrap();
                assert_eq!(run.transcript.ratio(), theorem1_dof(m as u32, n as u32), "({m},{n})");
                assert_eq!(run.transcript.phase_lengths(), run.plan.phase_lengths);
            }
        }
    }

    #[test]
    fn square_case_counts() {
        let run = run_x2_regime(2, 2, Regime::B, 10.0, true, rng(0)).unwrap();
        assert_eq!(run.side_info.as_ref().unwrap().len(), 4);
        assert_eq!(run.transcript.slot_count(), 6);
        assert_eq!(run.transcript.symbol_count(), 16);
    }

    #[test]
    fn every_regime_decodes_exactly() {
        for m in 1..=4 {
            for n in 1..=4 {
                for regime in [Regime::A, Regime::B, Regime::C] {
                    if !regime.admits(m, n) {
                        continue;
                    }
                    let mut r = rng((m * 10 + n) as u64);
                    let run = run_x2_regime(m, n, regime, 1e3, true, &mut r).unwrap();
                    let d = verify_decodability(&run.transcript, &mut r).unwrap();
                    assert!(d.pass(), "({m},{n}) {regime:?}: {d:?}");
                    assert_eq!(d.decode_exact(), Some(true));
                    let audit = causality_audit(&run.transcript);
                    assert!(audit.is_clean(), "{audit:?}");
                }
            }
        }
    }

    #[test]
    fn regime_c_uses_only_own_feedback() {
        let run = run_x2(3, 2, 100.0, false, rng(4)).unwrap();
        assert_eq!(run.plan.regime, Regime::C);
        assert!(strict_local_audit(&run.transcript).is_clean());
        let d = verify_decodability(&run.transcript, &mut rng(5)).unwrap();
        assert!(d.pass());
    }

    #[test]
    fn regime_c_under_global_feedback() {
        let env = ChannelEnv::new(x2_network(2, 1, FeedbackTopology::Global, 10.0, true), rng(2)).unwrap();
        let t = run_regime_c(env).unwrap();
        assert!(verify_decodability(&t, &mut rng(3)).unwrap().pass());
    }

    #[test]
    fn regime_mismatch() {
        let env = ChannelEnv::new(x2_network(2, 2, FeedbackTopology::Partial, 1.0, true), rng(0)).unwrap();
        assert!(matches!(run_regime_a(env), Err(Error::RegimeMismatch(_))));
        let env = ChannelEnv::new(x2_network(3, 2, FeedbackTopology::Partial, 1.0, true), rng(0)).unwrap();
        assert!(matches!(run_regime_b(env), Err(Error::RegimeMismatch(_))));
        let env = ChannelEnv::new(x2_network(1, 2, FeedbackTopology::Partial, 1.0, true), rng(0)).unwrap();
        assert!(matches!(run_regime_c(env), Err(Error::RegimeMismatch(_))));
    }

    #[test]
    fn quadruples_meet_outer_bounds() {
        for m in 1..=8u32 {
            for n in 1..=8u32 {
                let run = run_x2(m as usize, n as usize, 10.0, true, rng(0)).unwrap();
                let q = quadruple(&run.transcript).unwrap();
                let c = outer_bound_ok(&q, m, n).unwrap();
                assert!(c.ok, "({m},{n})");
                assert_eq!(q.iter().sum::<Rational>(), theorem1_dof(m, n));
                if run.plan.regime == Regime::B {
                    assert_eq!(c.slack, [Rational::zero(), Rational::zero()]);
                }
            }
        }
    }

    #[test]
    fn deleting_last_slot_breaks_decoding() {
        let mut r = rng(9);
        let run = run_x2(2, 3, 1e3, true, &mut r).unwrap();
        let broken = run.transcript.without_slot(6);
        let d = verify_decodability(&broken, &mut r).unwrap();
        assert!(!d.pass());
        assert!(d.receivers.iter().all(|v| v.equations < v.desired));
    }
}
