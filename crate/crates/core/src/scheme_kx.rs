//! K-user single-antenna X-channel: the global-feedback scheme (every
//! transmitter learns every symbol, then the K transmitters act as one
//! K-antenna broadcaster) and the partial-feedback pairing scheme.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::Rng;

use crate::analysis::{global_fb_dof, partial_fb_dof};
use crate::channel_env::{ChannelEnv, CsiAtTx, FeedbackTopology, NetworkConfig};
use crate::complexla::Matrix;
use crate::error::{Error, Result};
use crate::ledger::{AtomId, Provenance};
use crate::scheme_mat_bc::{mat_plan, MatEngine};
use crate::transcript::Transcript;
use crate::{LinExpr, Rational, Signal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KxMode {
    GlobalFb,
    PartialFb,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KxPlan {
    pub k: usize,
    pub mode: KxMode,
    pub phase_lengths: Vec<usize>,
    pub total_symbols: usize,
    pub predicted_dof: Rational,
}

impl KxPlan {
    pub fn new(k: usize, mode: KxMode) -> Result<Self> {
        match mode {
            KxMode::PartialFb => {
                if k < 2 {
                    return Err(Error::Domain("partial-feedback scheme needs K >= 2".into()));
                }
                Ok(KxPlan {
                    k,
                    mode,
                    phase_lengths: vec![k, k * (k - 1) / 2],
                    total_symbols: k * k,
                    predicted_dof: partial_fb_dof(k as u32),
                })
            }
            KxMode::GlobalFb => {
                let p = mat_plan(k)?;
                Ok(KxPlan {
                    k,
                    mode,
                    phase_lengths: p.slots_per_phase.clone(),
                    total_symbols: p.total_order1_symbols,
                    predicted_dof: global_fb_dof(k as u32),
                })
            }
        }
    }

    pub fn total_slots(&self) -> usize {
        self.phase_lengths.iter().sum()
    }
}

pub fn kx_network(
    k: usize,
    feedback: FeedbackTopology,
    csi_at_tx: CsiAtTx,
    power: f64,
    noiseless: bool,
) -> NetworkConfig {
    NetworkConfig {
        num_tx: k,
        num_rx: k,
        tx_antennas: 1,
        rx_antennas: 1,
        feedback,
        csi_at_tx,
        power,
        noiseless,
    }
}

fn check_single_antenna(cfg: &NetworkConfig) -> Result<usize> {
    if cfg.num_tx != cfg.num_rx || cfg.tx_antennas != 1 || cfg.rx_antennas != 1 {
        return Err(Error::Config("K-user schemes need K single-antenna pairs".into()));
    }
    Ok(cfg.num_tx)
}

/// Slot t of phase 1 carries the K symbols meant for receiver t; then each
/// pair i < j gets one slot in which transmitter i resends receiver i's
/// slot-j output and transmitter j resends receiver j's slot-i output.
pub fn run_partial_fb<R: Rng>(mut env: ChannelEnv<R>) -> Result<Transcript> {
    let cfg = env.config().clone();
    let k = check_single_antenna(&cfg)?;
    if k < 2 {
        return Err(Error::Domain("partial-feedback scheme needs K >= 2".into()));
    }
    if (0..k).any(|i| !cfg.has_feedback(i, i)) {
        return Err(Error::Config(
            "each receiver must feed back to its own transmitter".into(),
        ));
    }
    env.begin_phase("fresh");
    for t in 0..k {
        let sigs = (0..k)
            .map(|m| vec![Signal::own(LinExpr::atom(env.new_symbol(m, t, 0, t, 1.0)))])
            .collect();
        env.advance_slot(sigs)?;
    }
    env.begin_phase("pairs");
    for i in 0..k {
        for j in i + 1..k {
            let mut sigs = vec![vec![Signal::silent()]; k];
            for (tx, other) in [(i, j), (j, i)] {
                let fb = env.feedback(tx, tx, other)?;
                sigs[tx] = env.scale_to_budget(&fb).0;
            }
            env.advance_slot(sigs)?;
        }
    }
    Ok(env.into_transcript(format!("kx_partial(K={k})")))
}

/// Per transmitter, least-squares estimates of every other transmitter's
/// symbol in `slot` from all receivers' fed-back outputs, after removing
/// its own contribution.
pub(crate) fn decode_slot_at_all<R: Rng>(
    env: &mut ChannelEnv<R>,
    slot: usize,
    sent: &[AtomId],
) -> Result<Vec<BTreeMap<AtomId, Signal>>> {
    let k = sent.len();
    let mut out = vec![BTreeMap::new(); k];
    for (m, views) in out.iter_mut().enumerate() {
        if k == 1 {
            break;
        }
        let (draw, csi) = env.csi(m, slot)?;
        let draw = draw.clone();
        let mut residual = Vec::with_capacity(k);
        for q in 0..k {
            let y = env.feedback(m, q, slot)?.remove(0);
            let own = Signal::own(LinExpr::atom(sent[m]));
            residual.push(
                Signal::combine(&[Complex64::new(1.0, 0.0), -draw.gain(q, 0, m, 0)], &[&y, &own])?.with_deps(&csi),
            );
        }
        let others: Vec<usize> = (0..k).filter(|&i| i != m).collect();
        let a = Matrix::from_fn(k, others.len(), |q, c| draw.gain(q, 0, others[c], 0));
        let est = Signal::mix(&a.pseudo_inverse()?, &residual)?;
        for (c, e) in others.iter().zip(est) {
            env.record_knowledge(m, e.clone(), Provenance::Reconstruction);
            views.insert(sent[*c], e);
        }
    }
    Ok(out)
}

/// Fresh symbols over the K transmitters as the first broadcast phase,
/// transmitter-side decoding from global feedback, then the remaining
/// broadcast phases with every transmitter substituting its estimates.
pub fn run_global_fb<R: Rng>(mut env: ChannelEnv<R>) -> Result<Transcript> {
    let cfg = env.config().clone();
    let k = check_single_antenna(&cfg)?;
    if cfg.feedback != FeedbackTopology::Global || cfg.csi_at_tx != CsiAtTx::Delayed {
        return Err(Error::Config(
            "global-feedback scheme needs global feedback and delayed CSI".into(),
        ));
    }
    let mut engine = MatEngine::new(mat_plan(k)?, (0..k).map(|m| (m, 0)).collect(), k)?;
    let mut sent: BTreeMap<usize, Vec<AtomId>> = BTreeMap::new();
    let phase1 = engine.run_phase(&mut env, 1, |env, s, _, a| {
        let slot = env.current_slot();
        let id = env.new_symbol(a, slot, 0, s[0], 1.0);
        sent.entry(slot).or_default().push(id);
        Ok(Signal::own(LinExpr::atom(id)))
    })?;
    let mut views = vec![BTreeMap::new(); k];
    for (slot, ids) in &sent {
        for (m, v) in decode_slot_at_all(&mut env, *slot, ids)?.into_iter().enumerate() {
            views[m].extend(v);
        }
    }
    engine.set_views(views);
    engine.run_higher_phases(&mut env, &phase1)?;
    Ok(env.into_transcript(format!("kx_global(K={k})")))
}

pub fn run_kx_partial<R: Rng>(k: usize, power: f64, noiseless: bool, rng: R) -> Result<Transcript> {
    let cfg = kx_network(k, FeedbackTopology::Partial, CsiAtTx::None, power, noiseless);
    run_partial_fb(ChannelEnv::new(cfg, rng)?)
}

pub fn run_kx_global<R: Rng>(k: usize, power: f64, noiseless: bool, rng: R) -> Result<Transcript> {
    let cfg = kx_network(k, FeedbackTopology::Global, CsiAtTx::Delayed, power, noiseless);
    run_global_fb(ChannelEnv::new(cfg, rng)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::verify_decodability;
    use crate::ledger::Node;
    use crate::transcript::{causality_audit, strict_local_audit};
    use crate::TrialRng;
    use rand::SeedableRng;

    fn rng(seed: u64) -> TrialRng {
        TrialRng::seed_from_u64(seed)
    }

    #[test]
    fn partial_counts() {
        for (k, sym, slots) in [(2, 4, 3), (3, 9, 6), (4, 16, 10)] {
            let t = run_kx_partial(k, 100.0, true, rng(1)).unwrap();
            assert_eq!((t.symbol_count(), t.slot_count()), (sym, slots));
            let plan = KxPlan::new(k, KxMode::PartialFb).unwrap();
            assert_eq!(t.phase_lengths(), plan.phase_lengths);
            assert_eq!(t.ratio(), plan.predicted_dof);
        }
        assert_eq!(
            run_kx_partial(3, 1.0, true, rng(0)).unwrap().ratio(),
            Rational::new(3, 2)
        );
        assert!(run_kx_partial(1, 1.0, true, rng(0)).is_err());
    }

    #[test]
    fn partial_overheard_support() {
        let k = 3;
        let t = run_kx_partial(k, 100.0, false, rng(2)).unwrap();
        for slot in 0..k {
            for rx in 0..k {
                let y = &t.slots[slot].io.received[rx][0];
                let info: Vec<_> = y.support().into_iter().filter(|&id| !t.atoms.is_noise(id)).collect();
                assert_eq!(info.len(), k);
                assert!(info.iter().all(|&id| t.atoms.get(id).intended_rx() == Some(slot)));
                let noise: Vec<_> = y.support().into_iter().filter(|&id| t.atoms.is_noise(id)).collect();
                assert_eq!(noise.len(), 1);
                assert_eq!(t.atoms.get(noise[0]).origin.node, Node::Rx(rx));
            }
        }
        // phase-2 pair order {0,1}, {0,2}, {1,2}
        let active: Vec<Vec<usize>> = t.slots[k..]
            .iter()
            .map(|r| (0..k).filter(|&m| !r.io.transmitted[m][0].expr.is_zero()).collect())
            .collect();
        assert_eq!(active, vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
    }

    #[test]
    fn partial_decodes_and_is_local() {
        for k in 2..=5 {
            let mut r = rng(k as u64);
            let t = run_kx_partial(k, 1e3, true, &mut r).unwrap();
            let d = verify_decodability(&t, &mut r).unwrap();
            assert!(d.pass(), "K={k}: {d:?}");
            assert_eq!(d.decode_exact(), Some(true));
            assert!(strict_local_audit(&t).is_clean(), "{:?}", strict_local_audit(&t));
        }
    }

    #[test]
    fn global_counts_and_decoding() {
        for (k, sym, slots) in [(1, 1, 1), (2, 4, 3), (3, 18, 11), (4, 48, 25)] {
            let mut r = rng(10 + k as u64);
            let t = run_kx_global(k, 1e3, true, &mut r).unwrap();
            assert_eq!((t.symbol_count(), t.slot_count()), (sym, slots));
            assert_eq!(t.ratio(), KxPlan::new(k, KxMode::GlobalFb).unwrap().predicted_dof);
            let d = verify_decodability(&t, &mut r).unwrap();
            assert!(d.pass(), "K={k}: {d:?}");
            assert_eq!(d.decode_exact(), Some(true));
            let audit = causality_audit(&t);
            assert!(audit.is_clean(), "{audit:?}");
        }
    }

    #[test]
    fn global_transmitters_learn_every_symbol() {
        let k = 3;
        let t = run_kx_global(k, 1e3, true, rng(3)).unwrap();
        for m in 0..k {
            let est: Vec<_> = t.knowledge[m]
                .with_label(|p| *p == Provenance::Reconstruction)
                .collect();
            let phase1 = t.phase("order-1").unwrap().len;
            assert_eq!(est.len(), phase1 * (k - 1));
            for e in est {
                // a noiseless estimate is one atom with unit coefficient
                assert_eq!(e.signal.expr.len(), 1);
                let (id, c) = e.signal.expr.iter().next().unwrap();
                assert!((c - Complex64::new(1.0, 0.0)).norm() < 1e-9);
                assert!(!t.atoms.owned_by(m).contains(&id));
            }
        }
    }

    #[test]
    fn global_fb_rejects_wrong_topology() {
        let cfg = kx_network(2, FeedbackTopology::Partial, CsiAtTx::Delayed, 1.0, true);
        assert!(run_global_fb(ChannelEnv::new(cfg, rng(0)).unwrap()).is_err());
    }
}
