//! Exact bookkeeping of every signal as a linear combination of atomic
//! sources: information symbols and per-slot noise samples.
//!
//! Coefficients are complex floating point. "Exact" here means that
//! combinations are formed directly from stored coefficients and never
//! re-estimated; entries whose magnitude falls below [`ZERO_TOL`] relative
//! to the operands are dropped so cancellations leave canonical zeros.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::complexla::Matrix;
use crate::error::{Error, Result};
use crate::scalar::{abs2, Real};

/// Relative magnitude below which a coefficient counts as zero.
pub const ZERO_TOL: f64 = 1e-10;

/// Relative residual under which a row counts as fully cancelled.
pub const CANCEL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AtomId(pub u32);

impl fmt::Display for AtomId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Node {
    Tx(usize),
    Rx(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub node: Node,
    pub slot: usize,
    pub antenna: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AtomKind {
    InfoSymbol { intended_rx: usize },
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceAtom {
    pub id: AtomId,
    pub kind: AtomKind,
    pub origin: Origin,
    /// Fraction of the transmit power P carried by an information symbol.
    /// Ignored for noise, which always has unit power.
    pub power_share: f64,
}

impl SourceAtom {
    pub fn is_noise(&self) -> bool {
        matches!(self.kind, AtomKind::Noise)
    }

    pub fn intended_rx(&self) -> Option<usize> {
        match self.kind {
            AtomKind::InfoSymbol { intended_rx } => Some(intended_rx),
            AtomKind::Noise => None,
        }
    }

    /// Variance of the atom when the transmit power is `p`.
    pub fn power(&self, p: f64) -> f64 {
        match self.kind {
            AtomKind::InfoSymbol { .. } => self.power_share * p,
            AtomKind::Noise => 1.0,
        }
    }
}

/// Registry of atoms; an atom's id is its index.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AtomTable {
    atoms: Vec<SourceAtom>,
}

impl AtomTable {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, kind: AtomKind, origin: Origin, power_share: f64) -> AtomId {
        let id = AtomId(self.atoms.len() as u32);
        self.atoms.push(SourceAtom {
            id,
            kind,
            origin,
            power_share,
        });
        id
    }

    pub fn new_info(&mut self, origin: Origin, intended_rx: usize, power_share: f64) -> AtomId {
        self.push(AtomKind::InfoSymbol { intended_rx }, origin, power_share)
    }

    pub fn new_noise(&mut self, rx: usize, slot: usize, antenna: usize) -> AtomId {
        self.push(
            AtomKind::Noise,
            Origin {
                node: Node::Rx(rx),
                slot,
                antenna,
            },
            1.0,
        )
    }

    pub fn get(&self, id: AtomId) -> &SourceAtom {
        &self.atoms[id.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SourceAtom> {
        self.atoms.iter()
    }

    pub fn is_noise(&self, id: AtomId) -> bool {
        self.get(id).is_noise()
    }

    pub fn info_symbols(&self) -> impl Iterator<Item = &SourceAtom> {
        self.atoms.iter().filter(|a| !a.is_noise())
    }

    /// Information symbols intended for `rx`, in id order.
    pub fn desired_by(&self, rx: usize) -> Vec<AtomId> {
        self.atoms
            .iter()
            .filter(|a| a.intended_rx() == Some(rx))
            .map(|a| a.id)
            .collect()
    }

    /// Information symbols originating at transmitter `tx`.
    pub fn owned_by(&self, tx: usize) -> BTreeSet<AtomId> {
        self.atoms
            .iter()
            .filter(|a| !a.is_noise() && a.origin.node == Node::Tx(tx))
            .map(|a| a.id)
            .collect()
    }

    pub fn noise_count(&self) -> usize {
        self.atoms.iter().filter(|a| a.is_noise()).count()
    }
}

/// A signal as a sparse linear combination of atoms.
#[derive(Clone, PartialEq, Default)]
pub struct LinExpr<T: Real = f64> {
    terms: BTreeMap<AtomId, Complex<T>>,
}

impl<T: Real> fmt::Debug for LinExpr<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (id, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({:.4}{:+.4}i){}", c.re, c.im, id)?;
        }
        Ok(())
    }
}

impl<T: Real> LinExpr<T> {
    pub fn zero() -> Self {
        LinExpr { terms: BTreeMap::new() }
    }

    pub fn atom(id: AtomId) -> Self {
        Self::term(id, Complex::new(T::one(), T::zero()))
    }

    pub fn term(id: AtomId, c: Complex<T>) -> Self {
        let mut e = Self::zero();
        if c != Complex::new(T::zero(), T::zero()) {
            e.terms.insert(id, c);
        }
        e
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (AtomId, Complex<T>)>) -> Self {
        let mut e = Self::zero();
        for (id, c) in terms {
            e.add_term(id, c);
        }
        e.drop_exact_zeros();
        e
    }

    pub fn coeff(&self, id: AtomId) -> Complex<T> {
        self.terms
            .get(&id)
            .copied()
            .unwrap_or_else(|| Complex::new(T::zero(), T::zero()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (AtomId, Complex<T>)> + '_ {
        self.terms.iter().map(|(&id, &c)| (id, c))
    }

    pub fn support(&self) -> BTreeSet<AtomId> {
        self.terms.keys().copied().collect()
    }

    pub fn contains(&self, id: AtomId) -> bool {
        self.terms.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_abs(&self) -> T {
        self.terms.values().map(|c| c.norm()).fold(T::zero(), |a, b| a.max(b))
    }

    pub fn norm(&self) -> T {
        self.terms.values().map(|&c| abs2(c)).sum::<T>().sqrt()
    }

    /// Norm over the atoms selected by `keep`.
    pub fn norm_over(&self, keep: impl Fn(AtomId) -> bool) -> T {
        self.terms
            .iter()
            .filter(|(&id, _)| keep(id))
            .map(|(_, &c)| abs2(c))
            .sum::<T>()
            .sqrt()
    }

    pub fn scale(&self, s: Complex<T>) -> Self {
        let mut e = LinExpr {
            terms: self.terms.iter().map(|(&id, &c)| (id, c * s)).collect(),
        };
        e.drop_exact_zeros();
        e
    }

    /// Keeps the atoms selected by `keep`.
    pub fn restrict(&self, keep: impl Fn(AtomId) -> bool) -> Self {
        LinExpr {
            terms: self
                .terms
                .iter()
                .filter(|(&id, _)| keep(id))
                .map(|(&id, &c)| (id, c))
                .collect(),
        }
    }

    /// Replaces atoms by expressions; atoms absent from the map are kept.
    pub fn substitute(&self, map: &BTreeMap<AtomId, LinExpr<T>>) -> Self {
        let mut out = Self::zero();
        for (&id, &c) in &self.terms {
            match map.get(&id) {
                Some(e) => out.add_scaled(c, e),
                None => out.add_term(id, c),
            }
        }
        out.prune(T::lit(ZERO_TOL) * self.max_abs().max(T::one()));
        out
    }

    fn add_term(&mut self, id: AtomId, c: Complex<T>) {
        let entry = self
            .terms
            .entry(id)
            .or_insert_with(|| Complex::new(T::zero(), T::zero()));
        *entry += c;
    }

    /// `self += c · other` without pruning.
    pub fn add_scaled(&mut self, c: Complex<T>, other: &Self) {
        for (&id, &v) in &other.terms {
            self.add_term(id, c * v);
        }
    }

    /// Drops coefficients with magnitude `<= tol`.
    pub fn prune(&mut self, tol: T) {
        self.terms.retain(|_, c| c.norm() > tol);
    }

    fn drop_exact_zeros(&mut self) {
        let z = Complex::new(T::zero(), T::zero());
        self.terms.retain(|_, c| *c != z);
    }

    /// Value of the expression for the given atom values; missing atoms are 0.
    pub fn evaluate(&self, values: &BTreeMap<AtomId, Complex<T>>) -> Complex<T> {
        self.terms
            .iter()
            .fold(Complex::new(T::zero(), T::zero()), |acc, (id, &c)| {
                acc + values.get(id).map_or(Complex::new(T::zero(), T::zero()), |&v| c * v)
            })
    }

    /// Mean power Σ |c|²·power(atom) at transmit power `p`.
    pub fn power(&self, atoms: &AtomTable, p: f64) -> f64 {
        self.terms
            .iter()
            .map(|(&id, c)| c.norm_sqr().to_f64().unwrap_or(f64::INFINITY) * atoms.get(id).power(p))
            .sum()
    }
}

impl<T: Real> std::ops::Add for &LinExpr<T> {
    type Output = LinExpr<T>;
    fn add(self, rhs: &LinExpr<T>) -> LinExpr<T> {
        combine(
            &[Complex::new(T::one(), T::zero()), Complex::new(T::one(), T::zero())],
            &[self, rhs],
        )
        .expect("two coefficients for two expressions")
    }
}

impl<T: Real> std::ops::Sub for &LinExpr<T> {
    type Output = LinExpr<T>;
    fn sub(self, rhs: &LinExpr<T>) -> LinExpr<T> {
        combine(
            &[Complex::new(T::one(), T::zero()), Complex::new(-T::one(), T::zero())],
            &[self, rhs],
        )
        .expect("two coefficients for two expressions")
    }
}

/// Σ coeffs[k]·exprs[k] in canonical form.
pub fn combine<T: Real, E: std::borrow::Borrow<LinExpr<T>>>(coeffs: &[Complex<T>], exprs: &[E]) -> Result<LinExpr<T>> {
    if coeffs.len() != exprs.len() {
        return Err(Error::LengthMismatch {
            left: coeffs.len(),
            right: exprs.len(),
        });
    }
    let mut out = LinExpr::zero();
    let mut scale = T::zero();
    for (&c, e) in coeffs.iter().zip(exprs) {
        let e = e.borrow();
        if c == Complex::new(T::zero(), T::zero()) {
            continue;
        }
        scale = scale.max(c.norm() * e.max_abs());
        out.add_scaled(c, e);
    }
    out.prune(T::lit(ZERO_TOL) * scale);
    Ok(out)
}

/// Subtracts from `target` the least-squares combination of `known` that
/// best matches it, atom by atom.
///
/// Atoms of `target` whose contribution lies in the span of `known` are
/// removed exactly; the rest of `target` is left as is. No atom outside
/// `target ∪ known` can appear in the result.
pub fn cancel_known<T: Real>(target: &LinExpr<T>, known: &[LinExpr<T>]) -> LinExpr<T> {
    let mut c = Canceller::new(|_| true);
    for k in known {
        c.absorb(Row::new(k.clone()));
    }
    let mut row = Row::new(target.clone());
    c.project_out(&mut row);
    row.expr
}

/// Coefficients of `unknowns` in each expression, plus each expression's
/// remaining terms.
pub fn coefficient_matrix<T: Real>(exprs: &[LinExpr<T>], unknowns: &[AtomId]) -> Result<(Matrix<T>, Vec<LinExpr<T>>)> {
    let mut index = BTreeMap::new();
    for (k, &id) in unknowns.iter().enumerate() {
        if index.insert(id, k).is_some() {
            return Err(Error::DuplicateUnknown(id.0));
        }
    }
    let mut m = Matrix::zeros(exprs.len(), unknowns.len());
    let mut residual = Vec::with_capacity(exprs.len());
    for (r, e) in exprs.iter().enumerate() {
        let mut rest = LinExpr::zero();
        for (id, c) in e.iter() {
            match index.get(&id) {
                Some(&k) => m[(r, k)] = c,
                None => rest.add_term(id, c),
            }
        }
        residual.push(rest);
    }
    Ok((m, residual))
}

/// An expression together with a numeric value that is transformed along
/// with it (e.g. the observed sample of a received signal).
#[derive(Debug, Clone, PartialEq)]
pub struct Row<T: Real = f64> {
    pub expr: LinExpr<T>,
    pub value: Complex<T>,
}

impl<T: Real> Row<T> {
    pub fn new(expr: LinExpr<T>) -> Self {
        Row {
            expr,
            value: Complex::new(T::zero(), T::zero()),
        }
    }

    pub fn with_value(expr: LinExpr<T>, value: Complex<T>) -> Self {
        Row { expr, value }
    }

    fn axpy(&mut self, c: Complex<T>, other: &Row<T>) {
        self.expr.add_scaled(c, &other.expr);
        self.value += c * other.value;
    }
}

/// Incremental elimination of a chosen set of atoms.
///
/// Rows are absorbed one at a time; each is first reduced against the rows
/// already held (a Gram–Schmidt projection over the eliminated
/// coordinates, i.e. the least-squares cancellation). A row whose
/// eliminated part vanishes is returned as a clean equation; otherwise it
/// joins the basis.
pub struct Canceller<T: Real, F: Fn(AtomId) -> bool> {
    eliminate: F,
    basis: Vec<Row<T>>,
}

impl<T: Real, F: Fn(AtomId) -> bool> Canceller<T, F> {
    pub fn new(eliminate: F) -> Self {
        Canceller {
            eliminate,
            basis: Vec::new(),
        }
    }

    pub fn basis_len(&self) -> usize {
        self.basis.len()
    }

    fn inner(&self, b: &Row<T>, row: &Row<T>) -> Complex<T> {
        b.expr
            .terms
            .iter()
            .filter(|(&id, _)| (self.eliminate)(id))
            .fold(Complex::new(T::zero(), T::zero()), |acc, (id, &bc)| {
                acc + bc.conj() * row.expr.coeff(*id)
            })
    }

    /// Reduces `row` against the basis; returns true if its eliminated part
    /// is now zero (in which case those atoms are removed from it).
    pub fn project_out(&self, row: &mut Row<T>) -> bool {
        let scale = row.expr.max_abs().max(T::min_positive_value());
        let before = row.expr.norm_over(&self.eliminate);
        for _ in 0..2 {
            for b in &self.basis {
                let c = self.inner(b, row);
                if c != Complex::new(T::zero(), T::zero()) {
                    row.axpy(-c, b);
                }
            }
        }
        row.expr.prune(T::lit(ZERO_TOL) * scale);
        let after = row.expr.norm_over(&self.eliminate);
        if after <= T::lit(CANCEL_TOL) * before.max(scale) {
            let elim = &self.eliminate;
            row.expr.terms.retain(|&id, _| !elim(id));
            true
        } else {
            false
        }
    }

    /// Reduces `row`; if it still carries eliminated atoms it is added to the
    /// basis and `None` is returned, otherwise the clean row is returned.
    pub fn absorb(&mut self, mut row: Row<T>) -> Option<Row<T>> {
        if self.project_out(&mut row) {
            return Some(row);
        }
        let n = row.expr.norm_over(&self.eliminate);
        let inv = Complex::new(T::one() / n, T::zero());
        row.expr = row.expr.scale(inv);
        row.value *= inv;
        self.basis.push(row);
        None
    }
}

/// Information a transmitter relied on to form a signal: receiver outputs
/// (receiver, slot) and channel draws (slot).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deps {
    pub feedback: BTreeSet<(usize, usize)>,
    pub csi: BTreeSet<usize>,
}

impl Deps {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn csi(slot: usize) -> Self {
        Deps {
            csi: BTreeSet::from([slot]),
            ..Self::default()
        }
    }

    pub fn feedback(rx: usize, slot: usize) -> Self {
        Deps {
            feedback: BTreeSet::from([(rx, slot)]),
            ..Self::default()
        }
    }

    pub fn merge(&mut self, other: &Deps) {
        self.feedback.extend(other.feedback.iter().copied());
        self.csi.extend(other.csi.iter().copied());
    }

    pub fn union(mut self, other: &Deps) -> Self {
        self.merge(other);
        self
    }

    /// Latest slot any dependency refers to.
    pub fn latest_slot(&self) -> Option<usize> {
        let f = self.feedback.iter().map(|&(_, s)| s).max();
        let c = self.csi.iter().copied().max();
        f.max(c)
    }
}

/// An expression a transmitter can form, with what it depended on.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Signal<T: Real = f64> {
    pub expr: LinExpr<T>,
    pub deps: Deps,
}

impl<T: Real> Signal<T> {
    pub fn own(expr: LinExpr<T>) -> Self {
        Signal {
            expr,
            deps: Deps::none(),
        }
    }

    pub fn silent() -> Self {
        Self::own(LinExpr::zero())
    }

    pub fn with_deps(mut self, deps: &Deps) -> Self {
        self.deps.merge(deps);
        self
    }

    pub fn scale(&self, s: Complex<T>) -> Self {
        Signal {
            expr: self.expr.scale(s),
            deps: self.deps.clone(),
        }
    }

    /// Linear combination; dependencies are unioned over the terms with a
    /// nonzero coefficient.
    pub fn combine(coeffs: &[Complex<T>], signals: &[&Signal<T>]) -> Result<Self> {
        let exprs: Vec<&LinExpr<T>> = signals.iter().map(|s| &s.expr).collect();
        let expr = combine(coeffs, &exprs)?;
        let mut deps = Deps::none();
        for (c, s) in coeffs.iter().zip(signals) {
            if *c != Complex::new(T::zero(), T::zero()) {
                deps.merge(&s.deps);
            }
        }
        Ok(Signal { expr, deps })
    }

    /// `m · signals`: one output per row of `m`.
    pub fn mix(m: &Matrix<T>, signals: &[Signal<T>]) -> Result<Vec<Self>> {
        if m.cols() != signals.len() {
            return Err(Error::LengthMismatch {
                left: m.cols(),
                right: signals.len(),
            });
        }
        let refs: Vec<&Signal<T>> = signals.iter().collect();
        (0..m.rows()).map(|r| Signal::combine(m.row(r), &refs)).collect()
    }

    /// Substitutes atoms by tracked estimates.
    pub fn substitute(&self, map: &BTreeMap<AtomId, Signal<T>>) -> Self {
        let mut deps = self.deps.clone();
        let mut exprs = BTreeMap::new();
        for id in self.expr.support() {
            if let Some(s) = map.get(&id) {
                deps.merge(&s.deps);
                exprs.insert(id, s.expr.clone());
            }
        }
        Signal {
            expr: self.expr.substitute(&exprs),
            deps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    OwnMessage,
    Feedback { rx: usize, slot: usize },
    Reconstruction,
    CsiDerived,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Knowledge {
    pub signal: Signal,
    pub label: Provenance,
    /// First slot at which the item may be used for encoding.
    pub available_from: usize,
}

/// What one transmitter holds, in order of acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeSet {
    pub owner: usize,
    pub items: Vec<Knowledge>,
}

impl KnowledgeSet {
    pub fn new(owner: usize) -> Self {
        KnowledgeSet {
            owner,
            items: Vec::new(),
        }
    }

    pub fn push(&mut self, signal: Signal, label: Provenance, available_from: usize) {
        self.items.push(Knowledge {
            signal,
            label,
            available_from,
        });
    }

    pub fn with_label(&self, pred: impl Fn(&Provenance) -> bool) -> impl Iterator<Item = &Knowledge> {
        self.items.iter().filter(move |k| pred(&k.label))
    }

    /// Every item's dependencies precede its availability slot.
    pub fn is_causal(&self) -> bool {
        self.items.iter().all(|k| match k.signal.deps.latest_slot() {
            Some(s) => s < k.available_from,
            None => true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    fn a(i: u32) -> AtomId {
        AtomId(i)
    }

    #[test]
    fn combine_examples() {
        let u = LinExpr::atom(a(0));
        let v = LinExpr::atom(a(1));
        let s = combine(&[c(1.0, 0.0), c(1.0, 0.0)], &[&u, &v]).unwrap();
        assert_eq!(s.coeff(a(0)), c(1.0, 0.0));
        assert_eq!(s.coeff(a(1)), c(1.0, 0.0));
        assert_eq!(s.len(), 2);

        let e = LinExpr::term(a(3), c(0.5, -2.0));
        assert!(combine(&[c(0.0, 0.0)], &[&e]).unwrap().is_zero());
        assert!(combine(&[c(2.0, 0.0), c(-2.0, 0.0)], &[&e, &e]).unwrap().is_zero());
        assert!(matches!(
            combine(&[c(1.0, 0.0)], &[&e, &e]),
            Err(Error::LengthMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn cancel_examples() {
        // ũ₃ + ṽ₃ with ṽ₃ known
        let u3 = LinExpr::from_terms([(a(0), c(0.3, 1.0)), (a(1), c(-1.2, 0.4))]);
        let v3 = LinExpr::from_terms([(a(5), c(2.0, 0.0)), (a(6), c(0.1, 0.9)), (a(9), c(1.0, 0.0))]);
        let got = cancel_known(&(&u3 + &v3), std::slice::from_ref(&v3));
        assert_eq!(got.support(), u3.support());
        assert!((&got - &u3).max_abs() < 1e-12);

        let e = LinExpr::term(a(2), c(1.5, 0.0));
        assert!(cancel_known(&e, std::slice::from_ref(&e)).is_zero());

        let target = LinExpr::from_terms([(a(0), c(1.0, 0.0)), (a(1), c(2.0, 1.0))]);
        let known = LinExpr::term(a(1), c(-3.0, 0.0));
        let got = cancel_known(&target, &[known]);
        assert_eq!(got.support(), BTreeSet::from([a(0)]));
        assert!((got.coeff(a(0)) - c(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn cancel_with_nothing_removable_is_identity() {
        let target = LinExpr::from_terms([(a(0), c(1.0, 0.0)), (a(1), c(2.0, 1.0))]);
        let known = LinExpr::term(a(7), c(1.0, 0.0));
        assert_eq!(cancel_known(&target, &[known]), target);
    }

    #[test]
    fn coefficient_matrix_examples() {
        let e = LinExpr::from_terms([(a(0), c(2.0, 0.0)), (a(1), c(3.0, 0.0))]);
        let (m, res) = coefficient_matrix(&[e], &[a(0), a(1)]).unwrap();
        assert_eq!((m.rows(), m.cols()), (1, 2));
        assert_eq!(m[(0, 0)], c(2.0, 0.0));
        assert_eq!(m[(0, 1)], c(3.0, 0.0));
        assert!(res[0].is_zero());

        let e = LinExpr::from_terms([(a(0), c(1.0, 0.0)), (a(9), c(1.0, 0.0))]);
        let (m, res) = coefficient_matrix(&[e], &[a(0)]).unwrap();
        assert_eq!(m[(0, 0)], c(1.0, 0.0));
        assert_eq!(res[0].support(), BTreeSet::from([a(9)]));

        assert!(matches!(
            coefficient_matrix::<f64>(&[], &[a(1), a(1)]),
            Err(Error::DuplicateUnknown(1))
        ));
    }

    #[test]
    fn canceller_separates_clean_rows() {
        // eliminate atom 1; row 0 = x0 + x1, row 1 = 2 x1 + 3 x0 -> clean row in x0 only
        let mut c2 = Canceller::new(|id: AtomId| id == a(1));
        let r0 = Row::with_value(
            LinExpr::from_terms([(a(0), c(1.0, 0.0)), (a(1), c(1.0, 0.0))]),
            c(5.0, 0.0),
        );
        let r1 = Row::with_value(
            LinExpr::from_terms([(a(0), c(3.0, 0.0)), (a(1), c(2.0, 0.0))]),
            c(12.0, 0.0),
        );
        assert!(c2.absorb(r0).is_none());
        let clean = c2.absorb(r1).expect("cancelled");
        assert_eq!(clean.expr.support(), BTreeSet::from([a(0)]));
        // x0 = 2, x1 = 3: clean row says k·x0 = value
        let x0 = clean.value / clean.expr.coeff(a(0));
        assert!((x0 - c(2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn substitution_tracks_deps() {
        let s = Signal::own(LinExpr::from_terms([(a(0), c(1.0, 0.0)), (a(1), c(2.0, 0.0))]));
        let est = Signal {
            expr: LinExpr::from_terms([(a(1), c(1.0, 0.0)), (a(4), c(0.5, 0.0))]),
            deps: Deps::feedback(0, 2).union(&Deps::csi(2)),
        };
        let out = s.substitute(&BTreeMap::from([(a(1), est)]));
        assert_eq!(out.expr.coeff(a(4)), c(1.0, 0.0));
        assert_eq!(out.deps.latest_slot(), Some(2));
        assert!(out.deps.csi.contains(&2));
    }

    #[test]
    fn knowledge_causality_flag() {
        let mut ks = KnowledgeSet::new(0);
        ks.push(Signal::own(LinExpr::atom(a(0))), Provenance::OwnMessage, 0);
        ks.push(
            Signal::own(LinExpr::atom(a(1))).with_deps(&Deps::feedback(0, 3)),
            Provenance::Feedback { rx: 0, slot: 3 },
            4,
        );
        assert!(ks.is_causal());
        ks.push(
            Signal::own(LinExpr::atom(a(2))).with_deps(&Deps::csi(4)),
            Provenance::CsiDerived,
            4,
        );
        assert!(!ks.is_causal());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn expr() -> impl Strategy<Value = LinExpr<f64>> {
            prop::collection::vec((0u32..12, -3.0..3.0f64, -3.0..3.0f64), 0..6)
                .prop_map(|t| LinExpr::from_terms(t.into_iter().map(|(i, re, im)| (a(i), c(re, im)))))
        }

        fn coeff() -> impl Strategy<Value = Complex<f64>> {
            (-2.0..2.0f64, -2.0..2.0f64).prop_map(|(re, im)| c(re, im))
        }

        proptest! {
            #[test]
            fn combine_is_linear(x in expr(), y in expr(), z in expr(), p in coeff(), q in coeff(), s in coeff()) {
                let lhs = combine(&[p, q], &[&(&x + &y), &z]).unwrap();
                let rhs = combine(&[p, p, q], &[&x, &y, &z]).unwrap();
                prop_assert!((&lhs - &rhs).max_abs() < 1e-9);

                let scaled = combine(&[p, q], &[&x, &z]).unwrap().scale(s);
                let inner = combine(&[p * s, q * s], &[&x, &z]).unwrap();
                prop_assert!((&scaled - &inner).max_abs() < 1e-9);
            }

            #[test]
            fn cancel_stays_inside_inputs(t in expr(), known in prop::collection::vec(expr(), 0..4)) {
                let mut allowed = t.support();
                for k in &known {
                    allowed.extend(k.support());
                }
                let got = cancel_known(&t, &known);
                prop_assert!(got.support().is_subset(&allowed));
            }
        }
    }
}
