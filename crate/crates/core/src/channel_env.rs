//! Time-slotted fast-fading physical layer.
//!
//! Each slot draws fresh i.i.d. CN(0, 1) channel matrices, forms every
//! receive antenna's output as a [`LinExpr`] (plus one fresh noise atom
//! unless running noiseless), then releases the outputs as feedback and the
//! draw as CSI to the transmitters, both usable from the next slot on.
//! Transmitter-side code can only reach past outputs and draws through
//! [`ChannelEnv::feedback`] and [`ChannelEnv::csi`], which enforce the delay
//! and the feedback topology and log every access for the audit.

use std::collections::BTreeSet;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::complexla::gaussian_matrix;
use crate::error::{Error, Result};
use crate::ledger::{AtomId, AtomTable, Deps, KnowledgeSet, LinExpr, Node, Origin, Provenance, Signal};
use crate::transcript::{Access, AccessKind, Phase, SlotRecord, Transcript};
use crate::CMatrix;

/// Relative slack allowed on the per-transmitter power constraint.
pub const POWER_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackTopology {
    /// Every receiver feeds back to every transmitter.
    Global,
    /// Receiver k feeds back to transmitter k only.
    Partial,
    None,
    /// Explicit (receiver, transmitter) edges.
    Custom(Vec<(usize, usize)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsiAtTx {
    Delayed,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub num_tx: usize,
    pub num_rx: usize,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    pub feedback: FeedbackTopology,
    pub csi_at_tx: CsiAtTx,
    /// Transmit power P, linear scale.
    pub power: f64,
    pub noiseless: bool,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_tx == 0 || self.num_rx == 0 || self.tx_antennas == 0 || self.rx_antennas == 0 {
            return Err(Error::Config("node and antenna counts must be positive".into()));
        }
        if !self.power.is_finite() || self.power <= 0.0 {
            return Err(Error::Config(format!("power must be positive, got {}", self.power)));
        }
        match &self.feedback {
            FeedbackTopology::Partial if self.num_tx != self.num_rx => Err(Error::Config(
                "partial feedback needs as many transmitters as receivers".into(),
            )),
            FeedbackTopology::Custom(edges) => {
                for &(rx, tx) in edges {
                    if rx >= self.num_rx || tx >= self.num_tx {
                        return Err(Error::Config(format!("feedback edge {rx}->{tx} out of range")));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Whether receiver `rx`'s output reaches transmitter `tx`.
    pub fn has_feedback(&self, rx: usize, tx: usize) -> bool {
        match &self.feedback {
            FeedbackTopology::Global => true,
            FeedbackTopology::Partial => rx == tx,
            FeedbackTopology::None => false,
            FeedbackTopology::Custom(edges) => edges.contains(&(rx, tx)),
        }
    }

    pub fn feedback_parents(&self, tx: usize) -> Vec<usize> {
        (0..self.num_rx).filter(|&rx| self.has_feedback(rx, tx)).collect()
    }
}

/// All channel matrices of one slot, `H[rx][tx]` of shape
/// `rx_antennas × tx_antennas`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraw {
    pub slot: usize,
    pub matrices: Vec<Vec<CMatrix>>,
}

impl ChannelDraw {
    pub fn h(&self, rx: usize, tx: usize) -> &CMatrix {
        &self.matrices[rx][tx]
    }

    /// Scalar gain from (`tx`, `tx_ant`) to (`rx`, `rx_ant`).
    pub fn gain(&self, rx: usize, rx_ant: usize, tx: usize, tx_ant: usize) -> Complex64 {
        self.matrices[rx][tx][(rx_ant, tx_ant)]
    }
}

/// Inputs and outputs of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotIO {
    pub slot: usize,
    /// `transmitted[tx][antenna]`
    pub transmitted: Vec<Vec<Signal>>,
    /// `received[rx][antenna]`
    pub received: Vec<Vec<LinExpr>>,
}

pub struct ChannelEnv<R: Rng> {
    config: NetworkConfig,
    rng: R,
    atoms: AtomTable,
    slots: Vec<SlotRecord>,
    knowledge: Vec<KnowledgeSet>,
    csi_archive: Vec<BTreeSet<usize>>,
    fed_back: Vec<bool>,
    accesses: Vec<Access>,
    phases: Vec<Phase>,
}

impl<R: Rng> ChannelEnv<R> {
    pub fn new(config: NetworkConfig, rng: R) -> Result<Self> {
        config.validate()?;
        Ok(ChannelEnv {
            knowledge: (0..config.num_tx).map(KnowledgeSet::new).collect(),
            csi_archive: vec![BTreeSet::new(); config.num_tx],
            config,
            rng,
            atoms: AtomTable::new(),
            slots: Vec::new(),
            fed_back: Vec::new(),
            accesses: Vec::new(),
            phases: Vec::new(),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn atoms(&self) -> &AtomTable {
        &self.atoms
    }

    pub fn rng_mut(&mut self) -> &mut R {
        &mut self.rng
    }

    /// Index of the next slot to be executed.
    pub fn current_slot(&self) -> usize {
        self.slots.len()
    }

    pub fn knowledge(&self, tx: usize) -> &KnowledgeSet {
        &self.knowledge[tx]
    }

    /// Opens a named phase starting at the current slot.
    pub fn begin_phase(&mut self, name: impl Into<String>) {
        let start = self.current_slot();
        self.phases.push(Phase {
            name: name.into(),
            start,
            len: 0,
        });
    }

    /// Registers a message symbol of transmitter `tx` meant for `intended_rx`.
    /// `(slot, antenna)` is where it is first sent; `power_share` the fraction
    /// of P it carries there.
    pub fn new_symbol(
        &mut self,
        tx: usize,
        slot: usize,
        antenna: usize,
        intended_rx: usize,
        power_share: f64,
    ) -> AtomId {
        let id = self.atoms.new_info(
            Origin {
                node: Node::Tx(tx),
                slot,
                antenna,
            },
            intended_rx,
            power_share,
        );
        self.knowledge[tx].push(Signal::own(LinExpr::atom(id)), Provenance::OwnMessage, 0);
        id
    }

    /// Scales each nonzero antenna signal of one transmitter so that every
    /// active antenna gets P / (number of active antennas). Returns the
    /// scaled signals and the applied factors.
    pub fn scale_to_budget(&self, signals: &[Signal]) -> (Vec<Signal>, Vec<f64>) {
        let active = signals.iter().filter(|s| !s.expr.is_zero()).count();
        if active == 0 {
            return (signals.to_vec(), vec![1.0; signals.len()]);
        }
        let budget = self.config.power / active as f64;
        let mut out = Vec::with_capacity(signals.len());
        let mut factors = Vec::with_capacity(signals.len());
        for s in signals {
            let p = s.expr.power(&self.atoms, self.config.power);
            if s.expr.is_zero() || p <= 0.0 {
                out.push(s.clone());
                factors.push(1.0);
            } else {
                let a = (budget / p).sqrt();
                out.push(s.scale(Complex64::new(a, 0.0)));
                factors.push(a);
            }
        }
        (out, factors)
    }

    /// Executes one slot: checks antenna counts, power and causality, draws
    /// the channel, forms the outputs and then delivers feedback and CSI.
    pub fn advance_slot(&mut self, transmitted: Vec<Vec<Signal>>) -> Result<&SlotIO> {
        let t = self.current_slot();
        let cfg = &self.config;
        if transmitted.len() != cfg.num_tx {
            return Err(Error::Dimension(format!(
                "{} transmitter signal sets for {} transmitters",
                transmitted.len(),
                cfg.num_tx
            )));
        }
        for (tx, sigs) in transmitted.iter().enumerate() {
            if sigs.len() != cfg.tx_antennas {
                return Err(Error::Dimension(format!(
                    "transmitter {tx} has {} antenna signals, expected {}",
                    sigs.len(),
                    cfg.tx_antennas
                )));
            }
            let power: f64 = sigs.iter().map(|s| s.expr.power(&self.atoms, cfg.power)).sum();
            if power > cfg.power * (1.0 + POWER_REL_TOL) {
                return Err(Error::PowerViolation {
                    tx,
                    slot: t,
                    power,
                    limit: cfg.power,
                });
            }
            for s in sigs {
                self.check_deps(tx, t, &s.deps)?;
            }
        }

        let mut matrices = Vec::with_capacity(cfg.num_rx);
        for _ in 0..cfg.num_rx {
            let mut row = Vec::with_capacity(cfg.num_tx);
            for _ in 0..cfg.num_tx {
                row.push(gaussian_matrix(cfg.rx_antennas, cfg.tx_antennas, &mut self.rng)?);
            }
            matrices.push(row);
        }
        let draw = ChannelDraw { slot: t, matrices };

        let mut received = Vec::with_capacity(cfg.num_rx);
        for rx in 0..cfg.num_rx {
            let mut outs = Vec::with_capacity(cfg.rx_antennas);
            for a in 0..cfg.rx_antennas {
                let mut coeffs = Vec::new();
                let mut exprs = Vec::new();
                for (tx, sigs) in transmitted.iter().enumerate() {
                    for (b, s) in sigs.iter().enumerate() {
                        if !s.expr.is_zero() {
                            coeffs.push(draw.gain(rx, a, tx, b));
                            exprs.push(&s.expr);
                        }
                    }
                }
                let mut y = crate::ledger::combine(&coeffs, &exprs)?;
                if !cfg.noiseless {
                    let z = self.atoms.new_noise(rx, t, a);
                    y = &y + &LinExpr::atom(z);
                }
                outs.push(y);
            }
            received.push(outs);
        }

        self.slots.push(SlotRecord {
            draw,
            io: SlotIO {
                slot: t,
                transmitted,
                received,
            },
        });
        self.fed_back.push(false);
        if let Some(p) = self.phases.last_mut() {
            p.len = t + 1 - p.start;
        }
        self.deliver_feedback(t);
        self.deliver_csi(t);
        Ok(&self.slots[t].io)
    }

    fn check_deps(&self, tx: usize, t: usize, deps: &Deps) -> Result<()> {
        for &(rx, s) in &deps.feedback {
            if s >= t {
                return Err(Error::Causality(format!(
                    "transmitter {tx} uses receiver {rx}'s output of slot {s} at slot {t}"
                )));
            }
            if !self.config.has_feedback(rx, tx) {
                return Err(Error::Causality(format!(
                    "transmitter {tx} uses receiver {rx}'s output without a feedback link"
                )));
            }
        }
        for &s in &deps.csi {
            if self.config.csi_at_tx == CsiAtTx::None {
                return Err(Error::Causality(format!(
                    "transmitter {tx} uses CSI of slot {s} but transmitters have no CSI"
                )));
            }
            if s >= t {
                return Err(Error::Causality(format!(
                    "transmitter {tx} uses CSI of slot {s} at slot {t}"
                )));
            }
        }
        Ok(())
    }

    /// Hands slot `t`'s outputs to each transmitter's feedback parents.
    /// Returns, per transmitter, the newly available expressions. Repeated
    /// calls for the same slot deliver nothing.
    pub fn deliver_feedback(&mut self, t: usize) -> Vec<Vec<LinExpr>> {
        let mut out = vec![Vec::new(); self.config.num_tx];
        if t >= self.slots.len() || self.fed_back[t] {
            return out;
        }
        self.fed_back[t] = true;
        for (tx, fresh) in out.iter_mut().enumerate() {
            for rx in self.config.feedback_parents(tx) {
                for y in &self.slots[t].io.received[rx] {
                    self.knowledge[tx].push(
                        Signal::own(y.clone()).with_deps(&Deps::feedback(rx, t)),
                        Provenance::Feedback { rx, slot: t },
                        t + 1,
                    );
                    fresh.push(y.clone());
                }
            }
        }
        out
    }

    /// Archives slot `t`'s draw at every transmitter when CSI is delayed.
    pub fn deliver_csi(&mut self, t: usize) -> Vec<Option<ChannelDraw>> {
        if t >= self.slots.len() || self.config.csi_at_tx == CsiAtTx::None {
            return vec![None; self.config.num_tx];
        }
        let draw = &self.slots[t].draw;
        self.csi_archive
            .iter_mut()
            .map(|a| {
                a.insert(t);
                Some(draw.clone())
            })
            .collect()
    }

    /// Slots whose draw transmitter `tx` holds.
    pub fn csi_archive(&self, tx: usize) -> &BTreeSet<usize> {
        &self.csi_archive[tx]
    }

    /// Receiver `rx`'s output of slot `slot` as seen by transmitter `tx`.
    pub fn feedback(&mut self, tx: usize, rx: usize, slot: usize) -> Result<Vec<Signal>> {
        let now = self.current_slot();
        if slot >= now {
            return Err(Error::Causality(format!(
                "transmitter {tx} asked for slot {slot} output before slot {now}"
            )));
        }
        if !self.config.has_feedback(rx, tx) {
            return Err(Error::Causality(format!(
                "no feedback link from receiver {rx} to transmitter {tx}"
            )));
        }
        self.accesses.push(Access {
            tx,
            at_slot: now,
            kind: AccessKind::Feedback { rx, slot },
        });
        Ok(self.slots[slot].io.received[rx]
            .iter()
            .map(|y| Signal::own(y.clone()).with_deps(&Deps::feedback(rx, slot)))
            .collect())
    }

    /// Channel draw of `slot` as used by transmitter `tx`.
    pub fn csi(&mut self, tx: usize, slot: usize) -> Result<(&ChannelDraw, Deps)> {
        let now = self.current_slot();
        if !self.csi_archive[tx].contains(&slot) {
            return Err(Error::Causality(format!(
                "transmitter {tx} has no CSI for slot {slot} at slot {now}"
            )));
        }
        self.accesses.push(Access {
            tx,
            at_slot: now,
            kind: AccessKind::Csi { slot },
        });
        Ok((&self.slots[slot].draw, Deps::csi(slot)))
    }

    /// CSI of `slot` used jointly by every transmitter.
    pub fn csi_common(&mut self, slot: usize) -> Result<(ChannelDraw, Deps)> {
        for tx in 0..self.config.num_tx {
            self.csi(tx, slot)?;
        }
        Ok((self.slots[slot].draw.clone(), Deps::csi(slot)))
    }

    /// Adds a derived signal to a transmitter's knowledge set.
    pub fn record_knowledge(&mut self, tx: usize, signal: Signal, label: Provenance) {
        let from = signal.deps.latest_slot().map_or(0, |s| s + 1).max(self.current_slot());
        self.knowledge[tx].push(signal, label, from);
    }

    pub fn into_transcript(self, scheme: impl Into<String>) -> Transcript {
        Transcript {
            scheme: scheme.into(),
            config: self.config,
            atoms: self.atoms,
            slots: self.slots,
            phases: self.phases,
            knowledge: self.knowledge,
            accesses: self.accesses,
        }
    }
}
