//! Binary time-bin codec.
//!
//! A block of `M = 2^k - 1` bins is stored in `k` memory qubits per site. A
//! photon in bin `m` flips, at each site, the memory qubits at the set bits of
//! `m` (LSB first), controlled on that site's photonic qubit. After every bin
//! the photonic qubits are measured in X and reused for the next bin. At the
//! end of the block one Bell pair per register reveals the joint parity of
//! that register across the sites: odd registers spell out the arrival bin and
//! hold the surviving two-site superposition, which is then read out with a
//! tunable phase.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::{ErrorBudget, FaultInjector};
use crate::qsim::{make_bell, BellKind, Gate, Op, PureState, QsimError, QubitId, Site, XOutcome};
use crate::source::{psi_state, BinEvent, BinSampler, ThermalSource};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error(transparent)]
    State(#[from] QsimError),
    #[error("bin {m} is outside [1, {max}]")]
    BinOutOfRange { m: usize, max: usize },
    #[error("block length {0} is not of the form 2^k - 1 with k >= 1")]
    BlockLength(usize),
    #[error("register {j} is outside [0, {k})")]
    RegisterOutOfRange { j: u32, k: u32 },
    #[error("parity record has {got} entries, expected {expected}")]
    RecordLength { got: usize, expected: usize },
    #[error("readout requested on a vacuum block")]
    VacuumReadout,
    #[error("a shared pair must be a two-qubit state")]
    PairShape,
}

pub type Result<T> = std::result::Result<T, CodecError>;

/// `k` memory qubits per site encode `M = 2^k - 1` bins plus vacuum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryLayout {
    k: u32,
}

impl MemoryLayout {
    pub fn new(k: u32) -> Result<Self> {
        if k == 0 || k > 30 {
            return Err(CodecError::BlockLength((1usize << k.min(62)).wrapping_sub(1)));
        }
        Ok(Self { k })
    }

    pub fn from_bins(m: usize) -> Result<Self> {
        if m == 0 || !(m + 1).is_power_of_two() {
            return Err(CodecError::BlockLength(m));
        }
        Self::new((m + 1).trailing_zeros())
    }

    pub fn registers(&self) -> u32 {
        self.k
    }

    pub fn bins(&self) -> usize {
        (1usize << self.k) - 1
    }

    pub fn memory(&self, site: Site) -> Vec<QubitId> {
        (0..self.k).map(|j| QubitId::memory(site, j)).collect()
    }

    /// Site A registers then site B registers.
    pub fn memory_layout(&self) -> Vec<QubitId> {
        let mut v = self.memory(Site::A);
        v.extend(self.memory(Site::B));
        v
    }

    fn check_bin(&self, m: usize) -> Result<()> {
        if m == 0 || m > self.bins() {
            return Err(CodecError::BinOutOfRange { m, max: self.bins() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parity {
    /// Even joint parity (`|phi+>` survived).
    PhiPlus,
    /// Odd joint parity (`|phi->`).
    PhiMinus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParityRecord {
    pub outcomes: Vec<Parity>,
}

/// Decoded arrival bin (0 for vacuum) and the number of accumulated `-1`
/// factors that must be applied to the readout as a classical sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub arrival_bin: usize,
    pub sign_flips: u32,
}

impl DecodeResult {
    pub fn is_vacuum(&self) -> bool {
        self.arrival_bin == 0
    }

    /// `(-1)^sign_flips`
    pub fn sign(&self) -> f64 {
        if self.sign_flips.is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }

    /// Raw readout outcome with the bookkept sign removed.
    pub fn correct(&self, raw: XOutcome) -> XOutcome {
        if self.sign_flips.is_multiple_of(2) {
            raw
        } else {
            raw.flipped()
        }
    }
}

/// Sum of `2^j` over the odd-parity registers.
pub fn decode_arrival(record: &ParityRecord) -> DecodeResult {
    let arrival_bin = record
        .outcomes
        .iter()
        .enumerate()
        .filter(|(_, p)| **p == Parity::PhiMinus)
        .map(|(j, _)| 1usize << j)
        .sum();
    DecodeResult { arrival_bin, sign_flips: 0 }
}

/// Memory registers of one block plus the photonic qubits while a bin is
/// being stored. Every step can optionally be recorded as a list of [`Op`]s
/// with the realized outcomes.
#[derive(Debug, Clone)]
pub struct ProtocolState {
    layout: MemoryLayout,
    state: PureState,
    tape: Option<Vec<Op>>,
    // decoupling sign of each stored bin, index = bin
    decoupling: Vec<bool>,
}

impl ProtocolState {
    /// Memories in `|0...0, 0...0>`.
    pub fn new(layout: MemoryLayout) -> Self {
        let state = PureState::zero(layout.memory_layout()).expect("memory layout is valid");
        Self::from_state(layout, state)
    }

    pub fn from_state(layout: MemoryLayout, state: PureState) -> Self {
        Self {
            layout,
            state,
            tape: None,
            decoupling: vec![false; layout.bins() + 1],
        }
    }

    pub fn recording(mut self) -> Self {
        self.tape = Some(Vec::new());
        self
    }

    pub fn state(&self) -> &PureState {
        &self.state
    }

    pub fn layout(&self) -> MemoryLayout {
        self.layout
    }

    pub fn tape(&self) -> Option<&[Op]> {
        self.tape.as_deref()
    }

    /// Whether the X measurement after bin `m` returned an odd outcome pair.
    pub fn decoupling_flip(&self, m: usize) -> bool {
        self.decoupling.get(m).copied().unwrap_or(false)
    }

    fn record(&mut self, op: Op) {
        if let Some(t) = self.tape.as_mut() {
            t.push(op);
        }
    }

    fn gate(&mut self, gate: Gate, targets: &[QubitId]) -> Result<()> {
        self.state = self.state.apply(gate, targets)?;
        self.record(Op::Gate { gate, targets: targets.to_vec() });
        Ok(())
    }

    fn attach(&mut self, s: &PureState) -> Result<()> {
        self.state = self.state.tensor(s)?;
        self.record(Op::Attach(s.clone()));
        Ok(())
    }

    fn measure_x<R: Rng + ?Sized>(&mut self, q: QubitId, rng: &mut R) -> Result<XOutcome> {
        let m = self.state.measure_x(q, rng)?;
        self.state = m.collapsed;
        self.record(Op::ProjectX { target: q, outcome: m.outcome });
        Ok(m.outcome)
    }

    fn measure_z<R: Rng + ?Sized>(&mut self, q: QubitId, rng: &mut R) -> Result<bool> {
        let m = self.state.measure_z(q, rng)?;
        self.state = m.collapsed;
        self.record(Op::ProjectZ { target: q, outcome: m.outcome });
        Ok(m.outcome)
    }

    /// Brings in the photonic pair for the next bin. The state must live on
    /// the two photonic qubits.
    pub fn attach_photons(&mut self, photons: &PureState) -> Result<()> {
        self.attach(photons)
    }

    /// Logical CX for bin `m`: at each site, a physical CX from the photonic
    /// qubit to every memory qubit whose bit is set in `m`.
    pub fn encode_bin(&mut self, m: usize) -> Result<()> {
        self.layout.check_bin(m)?;
        for site in [Site::A, Site::B] {
            let ph = QubitId::photon(site);
            for j in codeword_bits(m) {
                self.gate(Gate::CX, &[ph, QubitId::memory(site, j)])?;
            }
        }
        Ok(())
    }

    /// X-measures both photonic qubits. Returns `true` for the odd outcome
    /// pairs `{+-, -+}`, which swap the roles of the two branches. The flip is
    /// only recorded; the state is not corrected.
    pub fn decouple_photon<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<bool> {
        let a = self.measure_x(QubitId::photon(Site::A), rng)?;
        let b = self.measure_x(QubitId::photon(Site::B), rng)?;
        Ok(a != b)
    }

    /// Stores one bin: attach, encode, decouple.
    pub fn store_bin<R: Rng + ?Sized>(&mut self, m: usize, photons: &PureState, rng: &mut R) -> Result<bool> {
        self.layout.check_bin(m)?;
        self.attach_photons(photons)?;
        self.encode_bin(m)?;
        let flip = self.decouple_photon(rng)?;
        self.decoupling[m] = flip;
        Ok(flip)
    }

    /// Same as [`store_bin`](Self::store_bin) with an empty bin, without
    /// touching the state: vacuum photons leave the memories alone and give
    /// two independent fair X outcomes.
    pub fn skip_vacuum_bin<R: Rng + ?Sized>(&mut self, m: usize, rng: &mut R) -> Result<bool> {
        self.layout.check_bin(m)?;
        let flip = rng.gen::<bool>() != rng.gen::<bool>();
        self.decoupling[m] = flip;
        Ok(flip)
    }

    /// Nonlocal parity check of register `j` with a supplied pair, placed on
    /// pair qubits `2j` and `2j+1`.
    pub fn parity_check_register<R: Rng + ?Sized>(
        &mut self,
        j: u32,
        bell: &PureState,
        rng: &mut R,
    ) -> Result<Parity> {
        if j >= self.layout.k {
            return Err(CodecError::RegisterOutOfRange { j, k: self.layout.k });
        }
        if bell.num_qubits() != 2 {
            return Err(CodecError::PairShape);
        }
        let (h1, h2) = (QubitId::pair(2 * j), QubitId::pair(2 * j + 1));
        let src = bell.layout().to_vec();
        let pair = bell.relabel(|q| if q == src[0] { h1 } else { h2 })?;
        self.attach(&pair)?;
        self.gate(Gate::CZ, &[QubitId::memory(Site::A, j), h1])?;
        self.gate(Gate::CZ, &[QubitId::memory(Site::B, j), h2])?;
        let a = self.measure_x(h1, rng)?;
        let b = self.measure_x(h2, rng)?;
        Ok(if a == b { Parity::PhiPlus } else { Parity::PhiMinus })
    }

    /// Parity checks on every register, each with a fresh `|phi+>`.
    pub fn parity_check_all<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<ParityRecord> {
        let bell = make_bell(BellKind::PhiPlus);
        let outcomes = (0..self.layout.k)
            .map(|j| self.parity_check_register(j, &bell, rng))
            .collect::<Result<_>>()?;
        Ok(ParityRecord { outcomes })
    }

    /// Decodes a parity record and folds in the decoupling flip of the
    /// arrival bin.
    pub fn decode_record(&self, record: &ParityRecord) -> Result<DecodeResult> {
        if record.outcomes.len() != self.layout.k as usize {
            return Err(CodecError::RecordLength {
                got: record.outcomes.len(),
                expected: self.layout.k as usize,
            });
        }
        let mut d = decode_arrival(record);
        if !d.is_vacuum() && self.decoupling_flip(d.arrival_bin) {
            d.sign_flips += 1;
        }
        Ok(d)
    }

    /// Reads the visibility out of the odd registers. Even registers are
    /// removed (they hold `|0>`), all odd-register qubits but site B's highest
    /// are X-measured with every `-` added to `decode.sign_flips`, and the
    /// kept qubit gets `U_delta`, H and a Z measurement. Returns the raw
    /// outcome (`Plus` for Z = 0).
    pub fn readout_visibility<R: Rng + ?Sized>(
        &mut self,
        decode: &mut DecodeResult,
        delta: f64,
        rng: &mut R,
    ) -> Result<XOutcome> {
        if decode.is_vacuum() {
            return Err(CodecError::VacuumReadout);
        }
        let m = decode.arrival_bin;
        self.layout.check_bin(m)?;
        let odd: Vec<u32> = codeword_bits(m).collect();
        let kept_register = *odd.last().expect("m >= 1 has a set bit");
        let kept = QubitId::memory(Site::B, kept_register);
        for j in (0..self.layout.k).filter(|j| !odd.contains(j)) {
            for site in [Site::A, Site::B] {
                self.measure_z(QubitId::memory(site, j), rng)?;
            }
        }
        let mut others: Vec<QubitId> = odd.iter().map(|j| QubitId::memory(Site::A, *j)).collect();
        others.extend(odd.iter().filter(|j| **j != kept_register).map(|j| QubitId::memory(Site::B, *j)));
        for q in others {
            if self.measure_x(q, rng)? == XOutcome::Minus {
                decode.sign_flips += 1;
            }
        }
        self.gate(Gate::Phase(delta), &[kept])?;
        self.gate(Gate::H, &[kept])?;
        let one = self.measure_z(kept, rng)?;
        Ok(if one { XOutcome::Minus } else { XOutcome::Plus })
    }
}

/// Register indices of the set bits of `m`, ascending.
pub fn codeword_bits(m: usize) -> impl Iterator<Item = u32> {
    (0..usize::BITS).filter(move |j| m >> j & 1 == 1)
}

/// Memory state `|codeword(a)>_A |codeword(b)>_B` as a basis key over
/// [`MemoryLayout::memory_layout`].
pub fn memory_key(layout: MemoryLayout, a: usize, b: usize) -> u64 {
    (a as u64) | ((b as u64) << layout.k)
}

/// Functional form of [`ProtocolState::encode_bin`]: memories ⊗ photon pair,
/// then the logical CX for bin `m`.
pub fn encode_bin(layout: MemoryLayout, memories: &PureState, photon_pair: &PureState, m: usize) -> Result<PureState> {
    let mut p = ProtocolState::from_state(layout, memories.clone());
    p.attach_photons(photon_pair)?;
    p.encode_bin(m)?;
    Ok(p.state)
}

/// Expected two-site memory state after storing a single photon in bin `m`:
/// `(|0, m> ± e^{i theta}|m, 0>)/√2` on the memory layout.
pub fn expected_memory_state(layout: MemoryLayout, m: usize, theta: f64, sign: f64) -> PureState {
    PureState::from_amplitudes(
        layout.memory_layout(),
        [
            (memory_key(layout, 0, m), Complex64::new(1.0, 0.0)),
            (memory_key(layout, m, 0), Complex64::from_polar(sign, theta)),
        ],
    )
    .expect("valid layout")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockOutcome {
    /// All registers even (vacuum) or the photon was lost in transfer.
    Discarded,
    /// Exactly one photon, decoded and read out. `outcome` already has the
    /// bookkept sign removed; `raw` is what the detector saw.
    Sample {
        arrival_bin: usize,
        raw: XOutcome,
        outcome: XOutcome,
        sign_flips: u32,
        depolarized: bool,
    },
    /// Two or more photons in the block; the readout is uniformly random.
    Multi { outcome: XOutcome },
}

impl BlockOutcome {
    /// Outcome entering the estimator, if the block survived post-selection.
    pub fn outcome(&self) -> Option<XOutcome> {
        match self {
            BlockOutcome::Discarded => None,
            BlockOutcome::Sample { outcome, .. } | BlockOutcome::Multi { outcome } => Some(*outcome),
        }
    }
}

/// Simulates whole blocks for a fixed source, code and error budget.
///
/// Random draws per block happen in a fixed order (faults, readout coin, bins,
/// protocol measurements), and how many are drawn does not depend on `g`, so
/// two simulators that differ only in `g` stay aligned on a shared stream.
#[derive(Debug, Clone)]
pub struct BlockSimulator {
    layout: MemoryLayout,
    theta: f64,
    sampler: BinSampler,
    faults: Option<FaultInjector>,
}

impl BlockSimulator {
    pub fn new(src: &ThermalSource, layout: MemoryLayout, budget: &ErrorBudget) -> Self {
        Self::with_mode(src, layout, budget, false)
    }

    /// `exact` selects the general-|g| Fock weights for bin sampling.
    pub fn with_mode(src: &ThermalSource, layout: MemoryLayout, budget: &ErrorBudget, exact: bool) -> Self {
        Self {
            layout,
            theta: src.theta(),
            sampler: BinSampler::new(src, exact),
            faults: (!budget.is_ideal()).then(|| FaultInjector::new(budget, layout.registers())),
        }
    }

    pub fn layout(&self) -> MemoryLayout {
        self.layout
    }

    pub fn run_block<R: Rng + ?Sized>(&self, delta: f64, rng: &mut R) -> Result<BlockOutcome> {
        let fault = self.faults.map(|f| f.draw(rng)).unwrap_or_default();
        let coin = if rng.gen::<bool>() { XOutcome::Plus } else { XOutcome::Minus };
        let events: Vec<BinEvent> = (1..=self.layout.bins())
            .map(|bin| self.sampler.sample(bin, rng))
            .collect();

        let photons = events.iter().filter(|e| !matches!(e, BinEvent::Vacuum)).count();
        let has_multi = events.iter().any(|e| matches!(e, BinEvent::Multi { .. }));
        if photons == 0 || fault.lost {
            return Ok(BlockOutcome::Discarded);
        }
        if has_multi {
            return Ok(BlockOutcome::Multi { outcome: coin });
        }

        let mut proto = ProtocolState::new(self.layout);
        for (i, e) in events.iter().enumerate() {
            let bin = i + 1;
            match e {
                BinEvent::Single { branch, .. } => {
                    proto.store_bin(bin, &psi_state(*branch, self.theta), rng)?;
                }
                _ => {
                    proto.skip_vacuum_bin(bin, rng)?;
                }
            }
        }
        if photons > 1 {
            return Ok(BlockOutcome::Multi { outcome: coin });
        }
        let record = proto.parity_check_all(rng)?;
        let mut decoded = proto.decode_record(&record)?;
        if decoded.is_vacuum() {
            return Ok(BlockOutcome::Discarded);
        }
        let raw = proto.readout_visibility(&mut decoded, delta, rng)?;
        let depolarized = fault.depolarized_by.is_some();
        let outcome = if depolarized { coin } else { decoded.correct(raw) };
        Ok(BlockOutcome::Sample {
            arrival_bin: decoded.arrival_bin,
            raw,
            outcome,
            sign_flips: decoded.sign_flips,
            depolarized,
        })
    }
}

/// Convenience wrapper: one block with a fresh simulator.
pub fn run_block<R: Rng + ?Sized>(
    src: &ThermalSource,
    layout: MemoryLayout,
    budget: &ErrorBudget,
    delta: f64,
    rng: &mut R,
) -> Result<BlockOutcome> {
    BlockSimulator::new(src, layout, budget).run_block(delta, rng)
}
