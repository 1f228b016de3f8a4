//! Retrospective alignment over a K-antenna broadcast channel with delayed
//! CSI, and the order-j symbol engine reused by the K-user schemes.
//!
//! Phase j serves every j-subset S of receivers: one slot sends K−j+1
//! order-j symbols of S, one per antenna. Each receiver outside S
//! overhears one equation. For each (j+1)-subset the j+1 equations
//! overheard inside it are mixed into j order-(j+1) symbols.

use std::collections::BTreeMap;

use num_complex::Complex64;
use num_integer::Integer;
use rand::Rng;

use crate::channel_env::{ChannelEnv, CsiAtTx, FeedbackTopology, NetworkConfig};
use crate::complexla::phased_dft_rows;
use crate::error::{Error, Result};
use crate::ledger::AtomId;
use crate::transcript::Transcript;
use crate::{LinExpr, Rational, Signal};

/// Integral schedule of the order-j recursion for K receivers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatPlan {
    pub k: usize,
    /// Least multiplier making every per-subset slot count integral.
    pub replication: usize,
    /// Order-j symbols per j-subset, j = 1..K.
    pub symbols_per_subset: Vec<usize>,
    /// Slots per j-subset in phase j.
    pub slots_per_subset: Vec<usize>,
    pub slots_per_phase: Vec<usize>,
    pub total_slots: usize,
    pub total_order1_symbols: usize,
    pub dof: Rational,
}

impl MatPlan {
    /// Order-1 symbols each receiver must supply.
    pub fn demand(&self) -> usize {
        self.symbols_per_subset[0]
    }
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// All `j`-subsets of `0..k` in lexicographic order.
pub fn subsets(k: usize, j: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, k: usize, j: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == j {
            out.push(cur.clone());
            return;
        }
        for i in start..k {
            cur.push(i);
            rec(i + 1, k, j, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, k, j, &mut Vec::new(), &mut out);
    out
}

/// Per-subset symbol flow with one order-1 symbol per receiver per antenna:
/// a₁ = K, n_j = a_j/(K−j+1), a_{j+1} = j·n_j.
fn unit_flow(k: usize) -> (Vec<Rational>, Vec<Rational>) {
    let mut a = vec![Rational::from_integer(k as i64)];
    let mut n = Vec::with_capacity(k);
    for j in 1..=k {
        let nj = a[j - 1] / Rational::from_integer((k - j + 1) as i64);
        n.push(nj);
        if j < k {
            a.push(nj * Rational::from_integer(j as i64));
        }
    }
    (a, n)
}

pub fn mat_plan(k: usize) -> Result<MatPlan> {
    if k == 0 {
        return Err(Error::Domain("need at least one receiver".into()));
    }
    let (a, n) = unit_flow(k);
    let replication = n.iter().fold(1i64, |l, x| l.lcm(x.denom())) as usize;
    let r = Rational::from_integer(replication as i64);
    let to_int = |x: &Rational| (*x * r).to_integer() as usize;
    let symbols_per_subset: Vec<usize> = a.iter().map(to_int).collect();
    let slots_per_subset: Vec<usize> = n.iter().map(to_int).collect();
    let slots_per_phase: Vec<usize> = slots_per_subset
        .iter()
        .enumerate()
        .map(|(i, &nj)| binomial(k, i + 1) * nj)
        .collect();
    let total_slots = slots_per_phase.iter().sum();
    let total_order1_symbols = k * symbols_per_subset[0];
    Ok(MatPlan {
        k,
        replication,
        symbols_per_subset,
        slots_per_subset,
        slots_per_phase,
        total_slots,
        total_order1_symbols,
        dof: Rational::new(total_order1_symbols as i64, total_slots as i64),
    })
}

/// A quantity wanted by every receiver in `subset`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedSymbol {
    pub subset: Vec<usize>,
    /// Noiseless content in terms of source atoms, with the CSI it needed.
    pub signal: Signal,
    pub order: usize,
}

/// One executed slot of the engine.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSlot {
    pub slot: usize,
    pub subset: Vec<usize>,
    /// Per virtual antenna: the power-scaled noiseless signal.
    pub nominal: Vec<Signal>,
}

/// Order-j symbol engine over K virtual antennas and K single-antenna
/// receivers `0..K`.
pub struct MatEngine {
    plan: MatPlan,
    /// Virtual antenna → (transmitter, antenna).
    layout: Vec<(usize, usize)>,
    /// Per transmitter: estimates substituted for atoms it does not own.
    views: Vec<BTreeMap<AtomId, Signal>>,
}

impl MatEngine {
    pub fn new(plan: MatPlan, layout: Vec<(usize, usize)>, num_tx: usize) -> Result<Self> {
        if layout.len() != plan.k {
            return Err(Error::Dimension(format!(
                "{} virtual antennas for {} receivers",
                layout.len(),
                plan.k
            )));
        }
        Ok(MatEngine {
            plan,
            layout,
            views: vec![BTreeMap::new(); num_tx],
        })
    }

    pub fn plan(&self) -> &MatPlan {
        &self.plan
    }

    pub fn set_views(&mut self, views: Vec<BTreeMap<AtomId, Signal>>) {
        self.views = views;
    }

    /// Runs phase `j` (1-based). `symbol(env, subset, batch, antenna)`
    /// supplies the nominal symbol for each active antenna.
    pub fn run_phase<R, F>(&self, env: &mut ChannelEnv<R>, j: usize, mut symbol: F) -> Result<Vec<PhaseSlot>>
    where
        R: Rng,
        F: FnMut(&mut ChannelEnv<R>, &[usize], usize, usize) -> Result<Signal>,
    {
        let k = self.plan.k;
        let width = k - j + 1;
        let cfg = env.config().clone();
        let groups = subsets(k, j);
        let mut out = Vec::with_capacity(groups.len() * self.plan.slots_per_subset[j - 1]);
        env.begin_phase(format!("order-{j}"));
        for b in 0..self.plan.slots_per_subset[j - 1] {
            for s in &groups {
                let mut nominal = vec![Signal::silent(); k];
                for (a, slot) in nominal.iter_mut().enumerate().take(width) {
                    *slot = symbol(env, s, b, a)?;
                }
                let mut tx_sigs = vec![vec![Signal::silent(); cfg.tx_antennas]; cfg.num_tx];
                for (a, &(tx, ant)) in self.layout.iter().enumerate() {
                    tx_sigs[tx][ant] = nominal[a].substitute(&self.views[tx]);
                }
                let mut sent = Vec::with_capacity(cfg.num_tx);
                let mut factors = Vec::with_capacity(cfg.num_tx);
                for sigs in &tx_sigs {
                    let (scaled, f) = env.scale_to_budget(sigs);
                    sent.push(scaled);
                    factors.push(f);
                }
                for (a, &(tx, ant)) in self.layout.iter().enumerate() {
                    nominal[a] = nominal[a].scale(Complex64::new(factors[tx][ant], 0.0));
                }
                let slot = env.advance_slot(sent)?.slot;
                out.push(PhaseSlot {
                    slot,
                    subset: s.clone(),
                    nominal,
                });
            }
        }
        Ok(out)
    }

    /// Mixes the equations overheard during phase `j` into order-(j+1)
    /// symbols, keyed by subset.
    pub fn next_order<R: Rng>(
        &self,
        env: &mut ChannelEnv<R>,
        j: usize,
        slots: &[PhaseSlot],
    ) -> Result<BTreeMap<Vec<usize>, Vec<OrderedSymbol>>> {
        let k = self.plan.k;
        // overheard[(subset, q)][batch]
        let mut overheard: BTreeMap<(Vec<usize>, usize), Vec<Signal>> = BTreeMap::new();
        for ps in slots {
            let (draw, deps) = env.csi_common(ps.slot)?;
            let mut produced = 0;
            for q in (0..k).filter(|q| !ps.subset.contains(q)) {
                let coeffs: Vec<Complex64> = self.layout.iter().map(|&(tx, ant)| draw.gain(q, 0, tx, ant)).collect();
                let refs: Vec<&Signal> = ps.nominal.iter().collect();
                let raw = Signal::combine(&coeffs, &refs)?.with_deps(&deps);
                overheard.entry((ps.subset.clone(), q)).or_default().push(raw);
                produced += 1;
            }
            if produced != k - j {
                return Err(Error::Transcript(format!(
                    "phase {j} slot {} yielded {produced} overheard equations",
                    ps.slot
                )));
            }
        }
        let mut out = BTreeMap::new();
        for sup in subsets(k, j + 1) {
            let mut symbols = Vec::new();
            for b in 0..self.plan.slots_per_subset[j - 1] {
                let raws: Vec<Signal> = sup
                    .iter()
                    .map(|&q| {
                        let rest: Vec<usize> = sup.iter().copied().filter(|&x| x != q).collect();
                        overheard
                            .get(&(rest, q))
                            .and_then(|v| v.get(b))
                            .cloned()
                            .ok_or_else(|| Error::Transcript(format!("missing overheard equation at receiver {q}")))
                    })
                    .collect::<Result<_>>()?;
                let g = phased_dft_rows(j, j + 1, env.rng_mut())?;
                for signal in Signal::mix(&g, &raws)? {
                    symbols.push(OrderedSymbol {
                        subset: sup.clone(),
                        signal,
                        order: j + 1,
                    });
                }
            }
            if symbols.len() != self.plan.symbols_per_subset[j] {
                return Err(Error::Transcript(format!(
                    "subset {sup:?} holds {} order-{} symbols, plan needs {}",
                    symbols.len(),
                    j + 1,
                    self.plan.symbols_per_subset[j]
                )));
            }
            out.insert(sup, symbols);
        }
        Ok(out)
    }

    /// Runs phases 2..K after phase 1 has been executed.
    pub fn run_higher_phases<R: Rng>(&self, env: &mut ChannelEnv<R>, phase1: &[PhaseSlot]) -> Result<()> {
        let k = self.plan.k;
        let mut prev = phase1.to_vec();
        for j in 1..k {
            let pool = self.next_order(env, j, &prev)?;
            let width = k - j;
            prev = self.run_phase(env, j + 1, |_, s, b, a| Ok(pool[s][b * width + a].signal.clone()))?;
        }
        Ok(())
    }
}

/// One transmitter with K antennas, K single-antenna receivers, delayed CSI
/// and no feedback.
pub fn mat_network(k: usize, power: f64, noiseless: bool) -> NetworkConfig {
    NetworkConfig {
        num_tx: 1,
        num_rx: k,
        tx_antennas: k,
        rx_antennas: 1,
        feedback: FeedbackTopology::None,
        csi_at_tx: CsiAtTx::Delayed,
        power,
        noiseless,
    }
}

/// Delivers `demand[q]` fresh symbols to each receiver q of a MISO
/// broadcast channel. Every entry must equal the plan's per-receiver demand.
pub fn run_mat<R: Rng>(mut env: ChannelEnv<R>, demand: &[usize]) -> Result<Transcript> {
    let cfg = env.config().clone();
    let k = cfg.num_rx;
    if cfg.num_tx != 1 || cfg.tx_antennas != k || cfg.rx_antennas != 1 || cfg.csi_at_tx != CsiAtTx::Delayed {
        return Err(Error::Config(
            "broadcast run needs one K-antenna transmitter, K single-antenna receivers and delayed CSI".into(),
        ));
    }
    let plan = mat_plan(k)?;
    if demand.len() != k || demand.iter().any(|&d| d != plan.demand()) {
        return Err(Error::DemandMismatch(format!(
            "demand {demand:?}, plan needs {} per receiver",
            plan.demand()
        )));
    }
    let engine = MatEngine::new(plan, (0..k).map(|a| (0, a)).collect(), 1)?;
    let share = 1.0 / k as f64;
    let phase1 = engine.run_phase(&mut env, 1, |env, s, _, a| {
        let slot = env.current_slot();
        let id = env.new_symbol(0, slot, a, s[0], share);
        Ok(Signal::own(LinExpr::atom(id)))
    })?;
    engine.run_higher_phases(&mut env, &phase1)?;
    Ok(env.into_transcript(format!("mat_bc(K={k})")))
}

/// Standalone broadcast run with the plan's demand.
pub fn run_mat_bc<R: Rng>(k: usize, power: f64, noiseless: bool, rng: R) -> Result<Transcript> {
    let plan = mat_plan(k)?;
    let env = ChannelEnv::new(mat_network(k, power, noiseless), rng)?;
    run_mat(env, &vec![plan.demand(); k])
}
