//! Full record of a scheme run and the causality audit over it.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::channel_env::{ChannelDraw, CsiAtTx, NetworkConfig, SlotIO};
use crate::ledger::{AtomId, AtomTable, Canceller, KnowledgeSet, LinExpr, Node, Row};
use crate::Rational;

#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub draw: ChannelDraw,
    pub io: SlotIO,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessKind {
    Feedback { rx: usize, slot: usize },
    Csi { slot: usize },
}

/// One transmitter-side read of feedback or CSI, made while `at_slot` was
/// the next slot to execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Access {
    pub tx: usize,
    pub at_slot: usize,
    pub kind: AccessKind,
}

#[derive(Debug, Clone)]
pub struct Transcript {
    pub scheme: String,
    pub config: NetworkConfig,
    pub atoms: AtomTable,
    pub slots: Vec<SlotRecord>,
    pub phases: Vec<Phase>,
    pub knowledge: Vec<KnowledgeSet>,
    pub accesses: Vec<Access>,
}

impl Transcript {
    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    /// Number of information symbols carried.
    pub fn symbol_count(&self) -> usize {
        self.atoms.info_symbols().count()
    }

    /// Symbols per slot, exactly.
    pub fn ratio(&self) -> Rational {
        Rational::new(self.symbol_count() as i64, self.slot_count().max(1) as i64)
    }

    pub fn phase_lengths(&self) -> Vec<usize> {
        self.phases.iter().map(|p| p.len).collect()
    }

    pub fn phase(&self, name: &str) -> Option<&Phase> {
        self.phases.iter().find(|p| p.name == name)
    }

    pub fn desired(&self, rx: usize) -> Vec<AtomId> {
        self.atoms.desired_by(rx)
    }

    /// Receiver `rx`'s outputs, slot-major then antenna.
    pub fn observations(&self, rx: usize) -> Vec<LinExpr> {
        self.slots
            .iter()
            .flat_map(|r| r.io.received[rx].iter().cloned())
            .collect()
    }

    /// Receiver `rx`'s outputs over a slot range.
    pub fn observations_in(&self, rx: usize, slots: std::ops::Range<usize>) -> Vec<LinExpr> {
        self.slots[slots]
            .iter()
            .flat_map(|r| r.io.received[rx].iter().cloned())
            .collect()
    }

    pub fn is_noiseless(&self) -> bool {
        self.atoms.noise_count() == 0
    }

    /// Exact per-link rates `d[tx][rx]` = symbols from tx to rx per slot.
    pub fn link_dof(&self) -> Vec<Vec<Rational>> {
        let mut counts = vec![vec![0i64; self.config.num_rx]; self.config.num_tx];
        for a in self.atoms.info_symbols() {
            if let (Node::Tx(tx), Some(rx)) = (a.origin.node, a.intended_rx()) {
                counts[tx][rx] += 1;
            }
        }
        let slots = self.slot_count().max(1) as i64;
        counts
            .into_iter()
            .map(|row| row.into_iter().map(|c| Rational::new(c, slots)).collect())
            .collect()
    }

    /// Drops one slot; used to build deliberately broken transcripts.
    pub fn without_slot(&self, slot: usize) -> Transcript {
        let mut t = self.clone();
        t.slots.remove(slot);
        for p in &mut t.phases {
            if slot >= p.start && slot < p.start + p.len {
                p.len -= 1;
            } else if slot < p.start {
                p.start -= 1;
            }
        }
        t
    }

    /// One JSON object per line: a header, then one record per slot.
    ///
    /// Expressions are lists of `[atom, re, im]`; matrices are row-major
    /// lists of `[re, im]` rows.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = json!({
            "scheme": self.scheme,
            "config": self.config,
            "slots": self.slot_count(),
            "symbols": self.symbol_count(),
            "phases": self.phases,
            "atoms": self.atoms.iter().collect::<Vec<_>>(),
        });
        writeln!(w, "{header}")?;
        for rec in &self.slots {
            let t = rec.io.slot;
            let phase = self
                .phases
                .iter()
                .find(|p| t >= p.start && t < p.start + p.len)
                .map(|p| p.name.as_str());
            let draw: Vec<Vec<_>> = rec
                .draw
                .matrices
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|m| {
                            (0..m.rows())
                                .map(|r| m.row(r).iter().map(|z| [z.re, z.im]).collect::<Vec<_>>())
                                .collect::<Vec<_>>()
                        })
                        .collect()
                })
                .collect();
            let transmitted: Vec<Vec<_>> = rec
                .io
                .transmitted
                .iter()
                .map(|sigs| {
                    sigs.iter()
                        .map(|s| json!({"expr": expr_json(&s.expr), "deps": s.deps}))
                        .collect()
                })
                .collect();
            let received: Vec<Vec<_>> = rec
                .io
                .received
                .iter()
                .map(|ys| ys.iter().map(expr_json).collect())
                .collect();
            let line = json!({
                "slot": t,
                "phase": phase,
                "channel": draw,
                "transmitted": transmitted,
                "received": received,
            });
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

fn expr_json(e: &LinExpr) -> serde_json::Value {
    serde_json::Value::Array(e.iter().map(|(id, c)| json!([id.0, c.re, c.im])).collect())
}

/// Outcome of a causality audit.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub transmissions_checked: usize,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Relative residual above which a transmitted signal is judged to use
/// information outside its declared sources.
pub const SPAN_TOL: f64 = 1e-8;

/// Replays a transcript and confirms that no transmitter used same-slot or
/// future outputs or channel draws, or outputs of receivers it has no
/// feedback link from. Each transmitted signal must also lie in the span of
/// its transmitter's own symbols and the outputs it declared.
pub fn causality_audit(t: &Transcript) -> AuditReport {
    let mut rep = AuditReport::default();
    let cfg = &t.config;
    let owned: Vec<BTreeSet<AtomId>> = (0..cfg.num_tx).map(|tx| t.atoms.owned_by(tx)).collect();

    for acc in &t.accesses {
        match acc.kind {
            AccessKind::Feedback { rx, slot } => {
                if slot >= acc.at_slot {
                    rep.violations.push(format!(
                        "tx {} read rx {rx} output of slot {slot} before slot {} finished",
                        acc.tx, slot
                    ));
                }
                if !cfg.has_feedback(rx, acc.tx) {
                    rep.violations
                        .push(format!("tx {} read rx {rx} output without a link", acc.tx));
                }
            }
            AccessKind::Csi { slot } => {
                if cfg.csi_at_tx == CsiAtTx::None {
                    rep.violations
                        .push(format!("tx {} read CSI without CSI at transmitters", acc.tx));
                }
                if slot >= acc.at_slot {
                    rep.violations.push(format!(
                        "tx {} read CSI of slot {slot} while slot {} was next",
                        acc.tx, acc.at_slot
                    ));
                }
            }
        }
    }

    for rec in &t.slots {
        let now = rec.io.slot;
        for (tx, sigs) in rec.io.transmitted.iter().enumerate() {
            for (ant, s) in sigs.iter().enumerate() {
                rep.transmissions_checked += 1;
                for &(rx, slot) in &s.deps.feedback {
                    if slot >= now || !cfg.has_feedback(rx, tx) {
                        rep.violations.push(format!(
                            "slot {now} tx {tx} ant {ant}: feedback ({rx}, {slot}) not available"
                        ));
                    }
                }
                for &slot in &s.deps.csi {
                    if slot >= now || cfg.csi_at_tx == CsiAtTx::None {
                        rep.violations.push(format!(
                            "slot {now} tx {tx} ant {ant}: CSI of slot {slot} not available"
                        ));
                    }
                }
                if s.expr.is_zero() {
                    continue;
                }
                let own = &owned[tx];
                let mut c = Canceller::new(|id: AtomId| !own.contains(&id));
                for &(rx, slot) in &s.deps.feedback {
                    if let Some(r) = t.slots.get(slot) {
                        for y in &r.io.received[rx] {
                            c.absorb(Row::new(y.clone()));
                        }
                    }
                }
                let foreign = s.expr.norm_over(|id| !own.contains(&id));
                let mut row = Row::new(s.expr.clone());
                let clean = c.project_out(&mut row);
                if !clean && foreign > SPAN_TOL * s.expr.norm() {
                    rep.violations.push(format!(
                        "slot {now} tx {tx} ant {ant}: signal not formed from own symbols and declared feedback"
                    ));
                }
            }
        }
    }

    for ks in &t.knowledge {
        if !ks.is_causal() {
            rep.violations
                .push(format!("tx {} holds knowledge used before it existed", ks.owner));
        }
    }
    rep
}

/// [`causality_audit`] plus: no CSI anywhere at the transmitters, and each
/// transmitter only uses its like-indexed receiver's output.
pub fn strict_local_audit(t: &Transcript) -> AuditReport {
    let mut rep = causality_audit(t);
    for acc in &t.accesses {
        match acc.kind {
            AccessKind::Csi { slot } => rep.violations.push(format!("tx {} read CSI of slot {slot}", acc.tx)),
            AccessKind::Feedback { rx, .. } if rx != acc.tx => rep
                .violations
                .push(format!("tx {} read receiver {rx}'s output", acc.tx)),
            _ => {}
        }
    }
    for rec in &t.slots {
        for (tx, sigs) in rec.io.transmitted.iter().enumerate() {
            for s in sigs {
                if !s.deps.csi.is_empty() {
                    rep.violations
                        .push(format!("slot {} tx {tx} depends on CSI", rec.io.slot));
                }
                if s.deps.feedback.iter().any(|&(rx, _)| rx != tx) {
                    rep.violations
                        .push(format!("slot {} tx {tx} depends on another receiver", rec.io.slot));
                }
            }
        }
    }
    rep
}
