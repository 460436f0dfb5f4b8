//! Minimal sparse state engine for the two-site protocol.
//!
//! States are stored as a map from basis bitstrings to complex amplitudes over
//! an ordered register layout. Bit `i` of a basis key is the value of the qubit
//! at `layout[i]`, so memory register index `j` holds bit `j` of a bin number
//! (least-significant bit first). Protocol states never carry more than a
//! handful of nonzero amplitudes per branch, which keeps every gate and
//! measurement cheap.
//!
//! The dense density-matrix oracle in [`dense`] exists to cross-check this
//! engine and is not used on any simulation path.

pub mod dense;

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Amplitudes with squared magnitude below this are dropped from the map.
const PRUNE_NORM_SQR: f64 = 1e-28;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QsimError {
    #[error("qubit {0} is not in the register layout")]
    UnknownQubit(QubitId),
    #[error("qubit {0} appears more than once")]
    DuplicateQubit(QubitId),
    #[error("gate {gate} takes {expected} target(s), got {got}")]
    Arity {
        gate: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("both measurement branches have zero norm; state is corrupted")]
    ZeroNorm,
    #[error("register of {qubits} qubits exceeds the limit of {max}")]
    TooLarge { qubits: usize, max: usize },
    #[error("layouts differ: {0}")]
    LayoutMismatch(String),
}

pub type Result<T> = std::result::Result<T, QsimError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Site {
    A,
    B,
    Shared,
}

/// What a qubit physically is. Memory qubits form the binary registers, photon
/// qubits are the dual-rail auxiliaries that carry one time bin, and pair
/// qubits are halves of pre-shared Bell pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Memory,
    Photon,
    Pair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QubitId {
    pub site: Site,
    pub role: Role,
    pub index: u32,
}

impl QubitId {
    pub const fn memory(site: Site, index: u32) -> Self {
        Self { site, role: Role::Memory, index }
    }

    pub const fn photon(site: Site) -> Self {
        Self { site, role: Role::Photon, index: 0 }
    }

    pub const fn pair(index: u32) -> Self {
        Self { site: Site::Shared, role: Role::Pair, index }
    }
}

impl fmt::Display for QubitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let role = match self.role {
            Role::Memory => "mem",
            Role::Photon => "ph",
            Role::Pair => "pair",
        };
        write!(f, "{:?}.{}[{}]", self.site, role, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Gate {
    X,
    H,
    /// Control first, target second.
    CX,
    CZ,
    /// `|0><0| + e^{i delta}|1><1|`
    Phase(f64),
}

impl Gate {
    pub fn arity(&self) -> usize {
        match self {
            Gate::CX | Gate::CZ => 2,
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Gate::X => "X",
            Gate::H => "H",
            Gate::CX => "CX",
            Gate::CZ => "CZ",
            Gate::Phase(_) => "Phase",
        }
    }
}

/// Outcome of an X-basis measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum XOutcome {
    Plus,
    Minus,
}

impl XOutcome {
    pub fn sign(self) -> f64 {
        match self {
            XOutcome::Plus => 1.0,
            XOutcome::Minus => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            XOutcome::Plus => XOutcome::Minus,
            XOutcome::Minus => XOutcome::Plus,
        }
    }
}

/// One step of a circuit with the measurement outcome already fixed. The codec
/// records these while it runs so that a trajectory can be replayed on a
/// mixture or on the dense oracle.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Gate { gate: Gate, targets: Vec<QubitId> },
    /// Project onto the given X eigenstate and remove the qubit.
    ProjectX { target: QubitId, outcome: XOutcome },
    /// Project onto the given computational state and remove the qubit.
    ProjectZ { target: QubitId, outcome: bool },
    /// Tensor a fresh state onto the register (new qubits go to the high bits).
    Attach(PureState),
}

#[derive(Debug, Clone)]
pub struct Measurement<O> {
    pub outcome: O,
    pub collapsed: PureState,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    layout: Vec<QubitId>,
    amps: BTreeMap<u64, Complex64>,
}

impl PureState {
    /// `|0...0>` on the given layout.
    pub fn zero(layout: Vec<QubitId>) -> Result<Self> {
        Self::basis(layout, 0)
    }

    pub fn basis(layout: Vec<QubitId>, bits: u64) -> Result<Self> {
        check_layout(&layout)?;
        let mut amps = BTreeMap::new();
        amps.insert(bits, Complex64::new(1.0, 0.0));
        Ok(Self { layout, amps })
    }

    /// Builds a state from explicit amplitudes. The amplitudes are normalized.
    pub fn from_amplitudes<I>(layout: Vec<QubitId>, amplitudes: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u64, Complex64)>,
    {
        check_layout(&layout)?;
        let mut amps: BTreeMap<u64, Complex64> = BTreeMap::new();
        for (k, a) in amplitudes {
            *amps.entry(k).or_default() += a;
        }
        let mut state = Self { layout, amps };
        state.prune();
        let norm = state.norm_sqr();
        if norm == 0.0 {
            return Err(QsimError::ZeroNorm);
        }
        state.scale(1.0 / norm.sqrt());
        Ok(state)
    }

    /// An empty register: the scalar state `1`.
    pub fn scalar() -> Self {
        let mut amps = BTreeMap::new();
        amps.insert(0, Complex64::new(1.0, 0.0));
        Self { layout: Vec::new(), amps }
    }

    pub fn layout(&self) -> &[QubitId] {
        &self.layout
    }

    pub fn num_qubits(&self) -> usize {
        self.layout.len()
    }

    pub fn amplitudes(&self) -> impl Iterator<Item = (u64, Complex64)> + '_ {
        self.amps.iter().map(|(k, a)| (*k, *a))
    }

    pub fn support_len(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitude(&self, bits: u64) -> Complex64 {
        self.amps.get(&bits).copied().unwrap_or_default()
    }

    /// Amplitude of the basis state given as `(qubit, value)` assignments;
    /// qubits not mentioned are taken to be zero.
    pub fn amplitude_of(&self, assignment: &[(QubitId, bool)]) -> Result<Complex64> {
        let mut bits = 0u64;
        for (q, v) in assignment {
            if *v {
                bits |= 1 << self.position(*q)?;
            }
        }
        Ok(self.amplitude(bits))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn contains(&self, q: QubitId) -> bool {
        self.layout.contains(&q)
    }

    pub fn position(&self, q: QubitId) -> Result<usize> {
        self.layout
            .iter()
            .position(|x| *x == q)
            .ok_or(QsimError::UnknownQubit(q))
    }

    /// `<self|other>`; layouts must match exactly.
    pub fn inner(&self, other: &PureState) -> Result<Complex64> {
        if self.layout != other.layout {
            return Err(QsimError::LayoutMismatch(format!(
                "{:?} vs {:?}",
                self.layout, other.layout
            )));
        }
        Ok(self
            .amps
            .iter()
            .filter_map(|(k, a)| other.amps.get(k).map(|b| a.conj() * b))
            .sum())
    }

    pub fn fidelity(&self, other: &PureState) -> Result<f64> {
        Ok(self.inner(other)?.norm_sqr())
    }

    /// True when the states agree up to a global phase.
    pub fn approx_eq_up_to_phase(&self, other: &PureState, tol: f64) -> bool {
        match self.inner(other) {
            Ok(ov) => {
                let n = (self.norm_sqr() * other.norm_sqr()).sqrt();
                (ov.norm() - n).abs() <= tol
            }
            Err(_) => false,
        }
    }

    /// Exact amplitude comparison within `tol` per entry.
    pub fn approx_eq(&self, other: &PureState, tol: f64) -> bool {
        if self.layout != other.layout {
            return false;
        }
        let keys: std::collections::BTreeSet<u64> =
            self.amps.keys().chain(other.amps.keys()).copied().collect();
        keys.into_iter()
            .all(|k| (self.amplitude(k) - other.amplitude(k)).norm() <= tol)
    }

    /// `self ⊗ other`, with `other`'s qubits appended after ours.
    pub fn tensor(&self, other: &PureState) -> Result<PureState> {
        for q in &other.layout {
            if self.layout.contains(q) {
                return Err(QsimError::DuplicateQubit(*q));
            }
        }
        let shift = self.layout.len();
        let mut layout = self.layout.clone();
        layout.extend_from_slice(&other.layout);
        check_width(layout.len())?;
        let mut amps = BTreeMap::new();
        for (ka, a) in &self.amps {
            for (kb, b) in &other.amps {
                amps.insert(ka | (kb << shift), a * b);
            }
        }
        Ok(PureState { layout, amps })
    }

    /// Renames qubits; `map` must be injective over the layout.
    pub fn relabel(&self, map: impl Fn(QubitId) -> QubitId) -> Result<PureState> {
        let layout: Vec<QubitId> = self.layout.iter().map(|q| map(*q)).collect();
        check_layout(&layout)?;
        Ok(PureState { layout, amps: self.amps.clone() })
    }

    pub fn apply(&self, gate: Gate, targets: &[QubitId]) -> Result<PureState> {
        if targets.len() != gate.arity() {
            return Err(QsimError::Arity {
                gate: gate.name(),
                expected: gate.arity(),
                got: targets.len(),
            });
        }
        if targets.len() == 2 && targets[0] == targets[1] {
            return Err(QsimError::DuplicateQubit(targets[0]));
        }
        let pos: Vec<usize> = targets
            .iter()
            .map(|q| self.position(*q))
            .collect::<Result<_>>()?;
        let mut out: BTreeMap<u64, Complex64> = BTreeMap::new();
        match gate {
            Gate::X => {
                let m = 1u64 << pos[0];
                for (k, a) in &self.amps {
                    out.insert(k ^ m, *a);
                }
            }
            Gate::H => {
                let m = 1u64 << pos[0];
                for (k, a) in &self.amps {
                    let a = a * FRAC_1_SQRT_2;
                    let (k0, k1) = (k & !m, k | m);
                    *out.entry(k0).or_default() += a;
                    if k & m == 0 {
                        *out.entry(k1).or_default() += a;
                    } else {
                        *out.entry(k1).or_default() -= a;
                    }
                }
            }
            Gate::CX => {
                let (c, t) = (1u64 << pos[0], 1u64 << pos[1]);
                for (k, a) in &self.amps {
                    let k2 = if k & c != 0 { k ^ t } else { *k };
                    out.insert(k2, *a);
                }
            }
            Gate::CZ => {
                let m = (1u64 << pos[0]) | (1u64 << pos[1]);
                for (k, a) in &self.amps {
                    out.insert(*k, if k & m == m { -a } else { *a });
                }
            }
            Gate::Phase(delta) => {
                let m = 1u64 << pos[0];
                let ph = Complex64::from_polar(1.0, delta);
                for (k, a) in &self.amps {
                    out.insert(*k, if k & m != 0 { a * ph } else { *a });
                }
            }
        }
        let mut s = PureState { layout: self.layout.clone(), amps: out };
        s.prune();
        Ok(s)
    }

    /// Projects `target` onto `|+>` or `|->` and removes it from the layout.
    /// Returns `None` for the collapsed state when the branch has zero weight.
    pub fn project_x(&self, target: QubitId, outcome: XOutcome) -> Result<(Option<PureState>, f64)> {
        let p = self.position(target)?;
        let m = 1u64 << p;
        let sign = outcome.sign();
        let mut out: BTreeMap<u64, Complex64> = BTreeMap::new();
        for (k, a) in &self.amps {
            let c = if k & m != 0 { sign } else { 1.0 };
            *out.entry(remove_bit(*k, p)).or_default() += a * (c * FRAC_1_SQRT_2);
        }
        self.finish_projection(p, out)
    }

    /// Projects `target` onto `|0>` or `|1>` and removes it from the layout.
    pub fn project_z(&self, target: QubitId, outcome: bool) -> Result<(Option<PureState>, f64)> {
        let p = self.position(target)?;
        let m = 1u64 << p;
        let out: BTreeMap<u64, Complex64> = self
            .amps
            .iter()
            .filter(|(k, _)| (*k & m != 0) == outcome)
            .map(|(k, a)| (remove_bit(*k, p), *a))
            .collect();
        self.finish_projection(p, out)
    }

    fn finish_projection(
        &self,
        removed: usize,
        amps: BTreeMap<u64, Complex64>,
    ) -> Result<(Option<PureState>, f64)> {
        let mut layout = self.layout.clone();
        layout.remove(removed);
        let mut s = PureState { layout, amps };
        s.prune();
        let total = self.norm_sqr();
        let w = s.norm_sqr();
        if total == 0.0 {
            return Err(QsimError::ZeroNorm);
        }
        if w == 0.0 {
            return Ok((None, 0.0));
        }
        s.scale(1.0 / w.sqrt());
        Ok((Some(s), w / total))
    }

    pub fn measure_x<R: Rng + ?Sized>(&self, target: QubitId, rng: &mut R) -> Result<Measurement<XOutcome>> {
        let (plus, pp) = self.project_x(target, XOutcome::Plus)?;
        let (minus, pm) = self.project_x(target, XOutcome::Minus)?;
        sample_branch(rng, (XOutcome::Plus, plus, pp), (XOutcome::Minus, minus, pm))
    }

    pub fn measure_z<R: Rng + ?Sized>(&self, target: QubitId, rng: &mut R) -> Result<Measurement<bool>> {
        let (zero, p0) = self.project_z(target, false)?;
        let (one, p1) = self.project_z(target, true)?;
        sample_branch(rng, (false, zero, p0), (true, one, p1))
    }

    /// Applies a recorded op. Returns the new state and the probability of
    /// the recorded outcome (1 for gates and attachments), or `None` if that
    /// outcome is impossible on this state.
    pub fn apply_op(&self, op: &Op) -> Result<(Option<PureState>, f64)> {
        match op {
            Op::Gate { gate, targets } => Ok((Some(self.apply(*gate, targets)?), 1.0)),
            Op::ProjectX { target, outcome } => self.project_x(*target, *outcome),
            Op::ProjectZ { target, outcome } => self.project_z(*target, *outcome),
            Op::Attach(s) => Ok((Some(self.tensor(s)?), 1.0)),
        }
    }

    fn prune(&mut self) {
        self.amps.retain(|_, a| a.norm_sqr() > PRUNE_NORM_SQR);
    }

    fn scale(&mut self, f: f64) {
        for a in self.amps.values_mut() {
            *a *= f;
        }
    }
}

impl fmt::Display for PureState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.layout.len();
        let mut first = true;
        for (k, a) in &self.amps {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            let bits: String = (0..n).map(|i| if k >> i & 1 == 1 { '1' } else { '0' }).collect();
            write!(f, "({:.4}{:+.4}i)|{}>", a.re, a.im, bits)?;
        }
        Ok(())
    }
}

fn sample_branch<O, R: Rng + ?Sized>(
    rng: &mut R,
    first: (O, Option<PureState>, f64),
    second: (O, Option<PureState>, f64),
) -> Result<Measurement<O>> {
    let u: f64 = rng.gen();
    let pick_first = match (&first.1, &second.1) {
        (None, None) => return Err(QsimError::ZeroNorm),
        (Some(_), None) => true,
        (None, Some(_)) => false,
        (Some(_), Some(_)) => u < first.2 / (first.2 + second.2),
    };
    let (outcome, state, probability) = if pick_first { first } else { second };
    Ok(Measurement {
        outcome,
        collapsed: state.expect("chosen branch has nonzero norm"),
        probability,
    })
}

fn remove_bit(k: u64, p: usize) -> u64 {
    let low = k & ((1u64 << p) - 1);
    let high = (k >> (p + 1)) << p;
    low | high
}

fn check_width(n: usize) -> Result<()> {
    if n > 63 {
        return Err(QsimError::TooLarge { qubits: n, max: 63 });
    }
    Ok(())
}

fn check_layout(layout: &[QubitId]) -> Result<()> {
    check_width(layout.len())?;
    for (i, q) in layout.iter().enumerate() {
        if layout[..i].contains(q) {
            return Err(QsimError::DuplicateQubit(*q));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BellKind {
    PhiPlus,
    PhiMinus,
}

/// `(|0,0> ± |1,1>)/√2` on `Shared` pair qubits 0 and 1.
pub fn make_bell(kind: BellKind) -> PureState {
    make_bell_on(kind, QubitId::pair(0), QubitId::pair(1)).expect("distinct pair qubits")
}

pub fn make_bell_on(kind: BellKind, first: QubitId, second: QubitId) -> Result<PureState> {
    let s = match kind {
        BellKind::PhiPlus => 1.0,
        BellKind::PhiMinus => -1.0,
    };
    PureState::from_amplitudes(
        vec![first, second],
        [
            (0b00, Complex64::new(FRAC_1_SQRT_2, 0.0)),
            (0b11, Complex64::new(s * FRAC_1_SQRT_2, 0.0)),
        ],
    )
}

/// A weighted ensemble of pure branches plus a fully depolarized remainder
/// (the maximally mixed state on the same layout).
///
/// The mixture is allowed to be subnormalized: after post-selection the trace
/// is the success probability and is kept rather than renormalized away.
#[derive(Debug, Clone)]
pub struct Mixture {
    layout: Vec<QubitId>,
    branches: Vec<(f64, PureState)>,
    depolarized_weight: f64,
}

impl Mixture {
    pub fn pure(state: PureState) -> Self {
        Self {
            layout: state.layout.clone(),
            branches: vec![(1.0, state)],
            depolarized_weight: 0.0,
        }
    }

    pub fn new(branches: Vec<(f64, PureState)>, depolarized_weight: f64) -> Result<Self> {
        let layout = branches
            .first()
            .map(|(_, s)| s.layout.clone())
            .ok_or_else(|| QsimError::LayoutMismatch("mixture needs at least one branch".into()))?;
        Self::with_layout(layout, branches, depolarized_weight)
    }

    pub fn with_layout(
        layout: Vec<QubitId>,
        branches: Vec<(f64, PureState)>,
        depolarized_weight: f64,
    ) -> Result<Self> {
        check_layout(&layout)?;
        for (_, s) in &branches {
            if s.layout != layout {
                return Err(QsimError::LayoutMismatch(format!(
                    "branch layout {:?} differs from {:?}",
                    s.layout, layout
                )));
            }
        }
        let branches = branches.into_iter().filter(|(w, _)| *w > 0.0).collect();
        Ok(Self { layout, branches, depolarized_weight })
    }

    pub fn layout(&self) -> &[QubitId] {
        &self.layout
    }

    pub fn branches(&self) -> &[(f64, PureState)] {
        &self.branches
    }

    pub fn depolarized_weight(&self) -> f64 {
        self.depolarized_weight
    }

    pub fn trace(&self) -> f64 {
        self.branches.iter().map(|(w, _)| w).sum::<f64>() + self.depolarized_weight
    }

    /// Scales every branch by `p_ideal` and moves the rest of the trace into
    /// the depolarized component.
    pub fn depolarize(&self, p_ideal: f64) -> Mixture {
        let total = self.trace();
        let branches = self
            .branches
            .iter()
            .map(|(w, s)| (w * p_ideal, s.clone()))
            .filter(|(w, _)| *w > 0.0)
            .collect();
        Mixture {
            layout: self.layout.clone(),
            branches,
            depolarized_weight: self.depolarized_weight * p_ideal + (1.0 - p_ideal) * total,
        }
    }

    /// `<psi| rho |psi>` for a pure state on the same layout.
    pub fn fidelity_with(&self, psi: &PureState) -> Result<f64> {
        let dim = (1u64 << self.layout.len()) as f64;
        let mut f = self.depolarized_weight * psi.norm_sqr() / dim;
        for (w, s) in &self.branches {
            f += w * psi.fidelity(s)?;
        }
        Ok(f)
    }

    /// Replays one op on every branch. Projections reweight branches by their
    /// Born probability and drop impossible ones; the depolarized remainder
    /// picks up a factor 1/2 per projection.
    pub fn apply_op(&self, op: &Op) -> Result<Mixture> {
        let mut branches = Vec::with_capacity(self.branches.len());
        for (w, s) in &self.branches {
            let (next, p) = s.apply_op(op)?;
            if let Some(next) = next {
                branches.push((w * p, next));
            }
        }
        let (layout, depolarized_weight) = match op {
            Op::Gate { .. } => (self.layout.clone(), self.depolarized_weight),
            Op::ProjectX { target, .. } | Op::ProjectZ { target, .. } => {
                let mut l = self.layout.clone();
                let p = l
                    .iter()
                    .position(|q| q == target)
                    .ok_or(QsimError::UnknownQubit(*target))?;
                l.remove(p);
                (l, 0.5 * self.depolarized_weight)
            }
            Op::Attach(s) => {
                let mut l = self.layout.clone();
                l.extend_from_slice(&s.layout);
                if self.depolarized_weight > 0.0 {
                    return Err(QsimError::LayoutMismatch(
                        "attaching to a depolarized mixture is not supported".into(),
                    ));
                }
                (l, 0.0)
            }
        };
        Ok(Mixture { layout, branches, depolarized_weight })
    }

    pub fn apply_ops(&self, ops: &[Op]) -> Result<Mixture> {
        ops.iter().try_fold(self.clone(), |m, op| m.apply_op(op))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const A0: QubitId = QubitId::memory(Site::A, 0);
    const B0: QubitId = QubitId::memory(Site::B, 0);
    const C0: QubitId = QubitId::memory(Site::A, 1);

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn cz_negates_11() {
        let s = PureState::basis(vec![A0, B0], 0b11).unwrap();
        let t = s.apply(Gate::CZ, &[A0, B0]).unwrap();
        assert_eq!(t.amplitude(0b11), c(-1.0, 0.0));
        let t2 = s.apply(Gate::CZ, &[B0, A0]).unwrap();
        assert_eq!(t, t2);
    }

    #[test]
    fn two_cz_flip_bell_on_odd_parity() {
        // |0,1> on the memories, |phi+> on the pair
        let mem = PureState::basis(vec![A0, B0], 0b10).unwrap();
        let s = mem.tensor(&make_bell(BellKind::PhiPlus)).unwrap();
        let s = s.apply(Gate::CZ, &[A0, QubitId::pair(0)]).unwrap();
        let s = s.apply(Gate::CZ, &[B0, QubitId::pair(1)]).unwrap();
        let expect = mem.tensor(&make_bell(BellKind::PhiMinus)).unwrap();
        assert!(s.approx_eq(&expect, 0.0));
    }

    #[test]
    fn bell_definitions() {
        let p = make_bell(BellKind::PhiPlus);
        let m = make_bell(BellKind::PhiMinus);
        assert_eq!(p.amplitude(0b00), c(FRAC_1_SQRT_2, 0.0));
        assert_eq!(p.amplitude(0b11), c(FRAC_1_SQRT_2, 0.0));
        assert_eq!(m.amplitude(0b11), c(-FRAC_1_SQRT_2, 0.0));
        assert_eq!(p.support_len(), 2);
        assert!(p.inner(&m).unwrap().norm() < 1e-15);
    }

    #[test]
    fn measure_plus_eigenstate() {
        let s = PureState::zero(vec![A0]).unwrap().apply(Gate::H, &[A0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let m = s.measure_x(A0, &mut rng).unwrap();
            assert_eq!(m.outcome, XOutcome::Plus);
            assert!((m.probability - 1.0).abs() < 1e-12);
            assert_eq!(m.collapsed.num_qubits(), 0);
        }
    }

    #[test]
    fn measure_z_on_zero_and_plus() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = PureState::zero(vec![A0]).unwrap();
        let m = z.measure_z(A0, &mut rng).unwrap();
        assert!(!m.outcome);
        assert_eq!(m.probability, 1.0);
        let plus = z.apply(Gate::H, &[A0]).unwrap();
        let (_, p1) = plus.project_z(A0, true).unwrap();
        assert!((p1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn measure_z_second_qubit_of_three_term_state() {
        // (|00> + |01> + |10>)/√3 written as |q0 q1>; the second qubit is 1 in |01> only
        let s = PureState::from_amplitudes(
            vec![A0, B0],
            [(0b00, c(1.0, 0.0)), (0b10, c(1.0, 0.0)), (0b01, c(1.0, 0.0))],
        )
        .unwrap();
        let (_, p) = s.project_z(B0, true).unwrap();
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn phi_plus_first_half_is_unbiased() {
        let s = make_bell(BellKind::PhiPlus);
        let (_, pp) = s.project_x(QubitId::pair(0), XOutcome::Plus).unwrap();
        let (_, pm) = s.project_x(QubitId::pair(0), XOutcome::Minus).unwrap();
        assert!((pp - 0.5).abs() < 1e-15 && (pm - 0.5).abs() < 1e-15);
    }

    #[test]
    fn phi_minus_x_outcomes_anticorrelate() {
        // enumerate the four X⊗X amplitudes directly
        let s = make_bell(BellKind::PhiMinus);
        for (o1, o2, expect) in [
            (XOutcome::Plus, XOutcome::Plus, 0.0),
            (XOutcome::Minus, XOutcome::Minus, 0.0),
            (XOutcome::Plus, XOutcome::Minus, 0.5),
            (XOutcome::Minus, XOutcome::Plus, 0.5),
        ] {
            let (rest, p1) = s.project_x(QubitId::pair(0), o1).unwrap();
            let p2 = rest.unwrap().project_x(QubitId::pair(1), o2).unwrap().1;
            assert!((p1 * p2 - expect).abs() < 1e-15, "{o1:?}{o2:?}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let m1 = s.measure_x(QubitId::pair(0), &mut rng).unwrap();
            let m2 = m1.collapsed.measure_x(QubitId::pair(1), &mut rng).unwrap();
            assert_ne!(m1.outcome, m2.outcome);
        }
    }

    #[test]
    fn errors() {
        let s = PureState::zero(vec![A0, B0]).unwrap();
        assert!(matches!(s.apply(Gate::X, &[C0]), Err(QsimError::UnknownQubit(_))));
        assert!(matches!(s.apply(Gate::CZ, &[A0]), Err(QsimError::Arity { .. })));
        assert!(matches!(s.apply(Gate::CX, &[A0, A0]), Err(QsimError::DuplicateQubit(_))));
        assert!(matches!(
            PureState::zero(vec![A0, A0]),
            Err(QsimError::DuplicateQubit(_))
        ));
    }

    #[test]
    fn depolarize_fidelity() {
        let psi = PureState::zero(vec![A0]).unwrap().apply(Gate::H, &[A0]).unwrap();
        let mix = Mixture::pure(psi.clone());
        for p in [0.0, 0.3, 0.9, 1.0] {
            let d = mix.depolarize(p);
            assert!((d.trace() - 1.0).abs() < 1e-15);
            assert!((d.fidelity_with(&psi).unwrap() - (1.0 + p) / 2.0).abs() < 1e-15);
        }
        assert_eq!(mix.depolarize(0.0).branches().len(), 0);
    }

    fn arb_state(n: usize) -> impl Strategy<Value = PureState> {
        let layout: Vec<QubitId> = (0..n as u32).map(|i| QubitId::memory(Site::A, i)).collect();
        prop::collection::vec(((0u64..(1 << n)), -1.0f64..1.0, -1.0f64..1.0), 1..6).prop_filter_map(
            "nonzero",
            move |v| PureState::from_amplitudes(layout.clone(), v.into_iter().map(|(k, r, i)| (k, c(r, i)))).ok(),
        )
    }

    fn arb_gate() -> impl Strategy<Value = Gate> {
        prop_oneof![
            Just(Gate::X),
            Just(Gate::H),
            Just(Gate::CX),
            Just(Gate::CZ),
            (-6.3f64..6.3).prop_map(Gate::Phase)
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn gates_preserve_norm(s in arb_state(3), g in arb_gate(), a in 0u32..3, d in 1u32..3) {
            let t1 = QubitId::memory(Site::A, a);
            let t2 = QubitId::memory(Site::A, (a + d) % 3);
            let targets: Vec<QubitId> = if g.arity() == 2 { vec![t1, t2] } else { vec![t1] };
            let out = s.apply(g, &targets).unwrap();
            prop_assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn hadamard_is_an_involution(s in arb_state(3), a in 0u32..3) {
            let q = QubitId::memory(Site::A, a);
            let back = s.apply(Gate::H, &[q]).unwrap().apply(Gate::H, &[q]).unwrap();
            prop_assert!(back.approx_eq(&s, 1e-12));
        }

        #[test]
        fn born_probabilities_sum_to_one(s in arb_state(3), a in 0u32..3) {
            let q = QubitId::memory(Site::A, a);
            let (_, pp) = s.project_x(q, XOutcome::Plus).unwrap();
            let (_, pm) = s.project_x(q, XOutcome::Minus).unwrap();
            prop_assert!((pp + pm - 1.0).abs() < 1e-12);
            let (_, p0) = s.project_z(q, false).unwrap();
            let (_, p1) = s.project_z(q, true).unwrap();
            prop_assert!((p0 + p1 - 1.0).abs() < 1e-12);
        }
    }
}
