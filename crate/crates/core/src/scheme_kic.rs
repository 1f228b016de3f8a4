//! K-user single-antenna interference channel with global feedback and
//! delayed CSI. Fresh slots leave each receiver with its own symbol plus an
//! interference component; the transmitters recover every component and
//! deliver them as order-1 symbols of the broadcast engine.

use std::collections::BTreeMap;

use rand::Rng;

use crate::channel_env::{ChannelEnv, CsiAtTx, FeedbackTopology, NetworkConfig};
use crate::error::{Error, Result};
use crate::ledger::AtomId;
use crate::scheme_kx::decode_slot_at_all;
use crate::scheme_mat_bc::{mat_plan, MatEngine};
use crate::transcript::Transcript;
use crate::{LinExpr, Signal};

/// What receiver `receiver` saw in fresh slot `slot` besides its own symbol
/// and noise.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceComponent {
    pub receiver: usize,
    pub slot: usize,
    pub signal: Signal,
}

#[derive(Debug, Clone)]
pub struct IcRun {
    pub transcript: Transcript,
    pub components: Vec<InterferenceComponent>,
    /// Per transmitter: its estimates of the other transmitters' symbols.
    pub views: Vec<BTreeMap<AtomId, Signal>>,
}

pub fn ic_network(k: usize, power: f64, noiseless: bool) -> NetworkConfig {
    NetworkConfig {
        num_tx: k,
        num_rx: k,
        tx_antennas: 1,
        rx_antennas: 1,
        feedback: FeedbackTopology::Global,
        csi_at_tx: CsiAtTx::Delayed,
        power,
        noiseless,
    }
}

pub fn run_ic_global<R: Rng>(mut env: ChannelEnv<R>) -> Result<IcRun> {
    let cfg = env.config().clone();
    let k = cfg.num_tx;
    if k < 2 {
        return Err(Error::Domain("interference channel needs K >= 2".into()));
    }
    if cfg.num_rx != k || cfg.tx_antennas != 1 || cfg.rx_antennas != 1 {
        return Err(Error::Config(
            "interference channel needs K single-antenna pairs".into(),
        ));
    }
    if cfg.feedback != FeedbackTopology::Global || cfg.csi_at_tx != CsiAtTx::Delayed {
        return Err(Error::Config(
            "interference scheme needs global feedback and delayed CSI".into(),
        ));
    }
    let plan = mat_plan(k)?;
    let rounds = plan.demand();

    env.begin_phase("fresh");
    let mut sent = Vec::with_capacity(rounds);
    for t in 0..rounds {
        let ids: Vec<AtomId> = (0..k).map(|m| env.new_symbol(m, t, 0, m, 1.0)).collect();
        env.advance_slot(ids.iter().map(|&id| vec![Signal::own(LinExpr::atom(id))]).collect())?;
        sent.push(ids);
    }

    let mut views = vec![BTreeMap::new(); k];
    let mut by_rx: Vec<Vec<Signal>> = vec![Vec::with_capacity(rounds); k];
    let mut components = Vec::with_capacity(rounds * k);
    for (t, ids) in sent.iter().enumerate() {
        for (m, v) in decode_slot_at_all(&mut env, t, ids)?.into_iter().enumerate() {
            views[m].extend(v);
        }
        let (draw, csi) = env.csi_common(t)?;
        for (j, rx) in by_rx.iter_mut().enumerate() {
            let expr = LinExpr::from_terms((0..k).filter(|&i| i != j).map(|i| (ids[i], draw.gain(j, 0, i, 0))));
            let signal = Signal::own(expr).with_deps(&csi);
            rx.push(signal.clone());
            components.push(InterferenceComponent {
                receiver: j,
                slot: t,
                signal,
            });
        }
    }

    let mut engine = MatEngine::new(plan, (0..k).map(|m| (m, 0)).collect(), k)?;
    engine.set_views(views.clone());
    let phase1 = engine.run_phase(&mut env, 1, |_, s, b, a| Ok(by_rx[s[0]][b * k + a].clone()))?;
    engine.run_higher_phases(&mut env, &phase1)?;
    Ok(IcRun {
        transcript: env.into_transcript(format!("k_ic(K={k})")),
        components,
        views,
    })
}

pub fn run_k_ic<R: Rng>(k: usize, power: f64, noiseless: bool, rng: R) -> Result<IcRun> {
    run_ic_global(ChannelEnv::new(ic_network(k, power, noiseless), rng)?)
}
