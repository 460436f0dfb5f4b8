//! Brute-force density-matrix reference.
//!
//! Everything here works on full `2^n × 2^n` matrices so that the sparse
//! engine can be checked against plain linear algebra. Index bit `i` of a
//! row/column corresponds to `layout[i]`, the same convention as
//! [`PureState`](super::PureState).

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{check_layout, Gate, Mixture, Op, PureState, QsimError, QubitId, Result, XOutcome};

pub const MAX_DENSE_QUBITS: usize = 12;

#[derive(Debug, Clone)]
pub struct DenseDensity {
    layout: Vec<QubitId>,
    rho: DMatrix<Complex64>,
}

impl DenseDensity {
    pub fn from_pure(state: &PureState) -> Result<Self> {
        check_dense(state.num_qubits())?;
        let v = dense_vector(state);
        Ok(Self {
            layout: state.layout().to_vec(),
            rho: &v * v.adjoint(),
        })
    }

    pub fn from_mixture(mix: &Mixture) -> Result<Self> {
        let n = mix.layout().len();
        check_dense(n)?;
        let dim = 1usize << n;
        let mut rho = DMatrix::<Complex64>::zeros(dim, dim);
        for (w, s) in mix.branches() {
            let v = dense_vector(s);
            rho += (&v * v.adjoint()) * Complex64::new(*w, 0.0);
        }
        let d = mix.depolarized_weight() / dim as f64;
        for i in 0..dim {
            rho[(i, i)] += d;
        }
        Ok(Self { layout: mix.layout().to_vec(), rho })
    }

    pub fn layout(&self) -> &[QubitId] {
        &self.layout
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.rho
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    fn pos(&self, q: QubitId) -> Result<usize> {
        self.layout
            .iter()
            .position(|x| *x == q)
            .ok_or(QsimError::UnknownQubit(q))
    }

    /// `rho -> U rho U^dagger` with `U` the gate embedded on its targets.
    pub fn apply_gate(&mut self, gate: Gate, targets: &[QubitId]) -> Result<()> {
        if targets.len() != gate.arity() {
            return Err(QsimError::Arity {
                gate: gate.name(),
                expected: gate.arity(),
                got: targets.len(),
            });
        }
        let pos: Vec<usize> = targets.iter().map(|q| self.pos(*q)).collect::<Result<_>>()?;
        if pos.len() == 2 && pos[0] == pos[1] {
            return Err(QsimError::DuplicateQubit(targets[0]));
        }
        let u = gate_matrix(gate);
        // U rho
        left_multiply(&mut self.rho, &u, &pos);
        // (U (U rho)^dagger)^dagger = U rho U^dagger
        let mut t = self.rho.adjoint();
        left_multiply(&mut t, &u, &pos);
        self.rho = t.adjoint();
        Ok(())
    }

    /// Applies the projector for one outcome and traces the qubit out. The
    /// result is left subnormalized.
    fn project(&mut self, target: QubitId, vector: [Complex64; 2]) -> Result<()> {
        let p = self.pos(target)?;
        let dim = self.rho.nrows();
        let half = dim / 2;
        let bit = 1usize << p;
        let expand = |i: usize, b: usize| {
            let low = i & (bit - 1);
            let high = (i >> p) << (p + 1);
            high | low | (b * bit)
        };
        // reduced[i][j] = sum_{a,b} conj(v_a) rho[(i,a),(j,b)] v_b
        let mut out = DMatrix::<Complex64>::zeros(half, half);
        for i in 0..half {
            for j in 0..half {
                let mut acc = Complex64::new(0.0, 0.0);
                for a in 0..2 {
                    for b in 0..2 {
                        acc += vector[a].conj() * self.rho[(expand(i, a), expand(j, b))] * vector[b];
                    }
                }
                out[(i, j)] = acc;
            }
        }
        self.rho = out;
        self.layout.remove(p);
        Ok(())
    }

    pub fn apply_op(&mut self, op: &Op) -> Result<()> {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        match op {
            Op::Gate { gate, targets } => self.apply_gate(*gate, targets),
            Op::ProjectX { target, outcome } => {
                let s = match outcome {
                    XOutcome::Plus => r,
                    XOutcome::Minus => -r,
                };
                self.project(*target, [Complex64::new(r, 0.0), Complex64::new(s, 0.0)])
            }
            Op::ProjectZ { target, outcome } => {
                let v = if *outcome {
                    [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]
                } else {
                    [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]
                };
                self.project(*target, v)
            }
            Op::Attach(s) => {
                let mut layout = self.layout.clone();
                layout.extend_from_slice(s.layout());
                check_layout(&layout)?;
                check_dense(layout.len())?;
                let other = DenseDensity::from_pure(s)?;
                // new qubits occupy the high bits: index = old + (new << n)
                self.rho = other.rho.kronecker(&self.rho);
                self.layout = layout;
                Ok(())
            }
        }
    }

    pub fn max_abs_diff(&self, other: &DenseDensity) -> Result<f64> {
        if self.layout != other.layout {
            return Err(QsimError::LayoutMismatch(format!(
                "{:?} vs {:?}",
                self.layout, other.layout
            )));
        }
        Ok((&self.rho - &other.rho)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max))
    }
}

/// Runs `ops` on the dense density matrix of `input`.
pub fn dense_oracle(input: &Mixture, ops: &[Op]) -> Result<DenseDensity> {
    let mut d = DenseDensity::from_mixture(input)?;
    for op in ops {
        d.apply_op(op)?;
    }
    Ok(d)
}

fn check_dense(n: usize) -> Result<()> {
    if n > MAX_DENSE_QUBITS {
        return Err(QsimError::TooLarge { qubits: n, max: MAX_DENSE_QUBITS });
    }
    Ok(())
}

fn dense_vector(s: &PureState) -> DMatrix<Complex64> {
    let dim = 1usize << s.num_qubits();
    let mut v = DMatrix::<Complex64>::zeros(dim, 1);
    for (k, a) in s.amplitudes() {
        v[(k as usize, 0)] = a;
    }
    v
}

/// Gate matrix in the basis of its targets, target 0 on the low bit.
pub fn gate_matrix(gate: Gate) -> DMatrix<Complex64> {
    let o = Complex64::new(0.0, 0.0);
    let l = Complex64::new(1.0, 0.0);
    let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    match gate {
        Gate::X => DMatrix::from_row_slice(2, 2, &[o, l, l, o]),
        Gate::H => DMatrix::from_row_slice(2, 2, &[h, h, h, -h]),
        Gate::Phase(d) => DMatrix::from_row_slice(2, 2, &[l, o, o, Complex64::from_polar(1.0, d)]),
        // index = control | target << 1
        Gate::CX => DMatrix::from_row_slice(
            4,
            4,
            &[
                l, o, o, o, //
                o, o, o, l, //
                o, o, l, o, //
                o, l, o, o,
            ],
        ),
        Gate::CZ => DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![l, l, l, -l])),
    }
}

/// The full `2^n × 2^n` operator for a gate on the given bit positions.
pub fn embedded_operator(gate: Gate, positions: &[usize], n: usize) -> DMatrix<Complex64> {
    let dim = 1usize << n;
    let mut op = DMatrix::<Complex64>::identity(dim, dim);
    left_multiply(&mut op, &gate_matrix(gate), positions);
    op
}

// m <- (U on `pos`) * m, acting on row indices.
fn left_multiply(m: &mut DMatrix<Complex64>, u: &DMatrix<Complex64>, pos: &[usize]) {
    let dim = m.nrows();
    let k = pos.len();
    let sub = 1usize << k;
    let mask: usize = pos.iter().map(|p| 1usize << p).sum();
    let embed = |base: usize, local: usize| {
        let mut idx = base;
        for (t, p) in pos.iter().enumerate() {
            if local >> t & 1 == 1 {
                idx |= 1 << p;
            }
        }
        idx
    };
    let mut buf = vec![Complex64::new(0.0, 0.0); sub];
    for col in 0..m.ncols() {
        for base in (0..dim).filter(|i| i & mask == 0) {
            for (local, slot) in buf.iter_mut().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for s in 0..sub {
                    acc += u[(local, s)] * m[(embed(base, s), col)];
                }
                *slot = acc;
            }
            for (local, v) in buf.iter().enumerate() {
                m[(embed(base, local), col)] = *v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsim::{make_bell, BellKind, Site};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bell_density_corners() {
        let d = DenseDensity::from_pure(&make_bell(BellKind::PhiPlus)).unwrap();
        let m = d.matrix();
        for (i, j) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
            assert!((m[(i, j)] - Complex64::new(0.5, 0.0)).norm() < 1e-15);
        }
        assert!(m[(1, 1)].norm() < 1e-15 && m[(2, 2)].norm() < 1e-15);
    }

    #[test]
    fn too_large_register_is_rejected() {
        let layout: Vec<QubitId> = (0..13).map(|i| QubitId::memory(Site::A, i)).collect();
        let s = PureState::zero(layout).unwrap();
        assert!(matches!(DenseDensity::from_pure(&s), Err(QsimError::TooLarge { .. })));
    }

    #[test]
    fn embedded_gate_matches_kron_construction() {
        // H on bit 1 of 3 qubits equals I ⊗ H ⊗ I in big-endian kron order
        let h = gate_matrix(Gate::H);
        let i2 = DMatrix::<Complex64>::identity(2, 2);
        let kron = i2.kronecker(&h).kronecker(&i2);
        let e = embedded_operator(Gate::H, &[1], 3);
        assert!((&kron - &e).iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn dense_gate_path_matches_sparse_on_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layout: Vec<QubitId> = (0..4).map(|i| QubitId::memory(Site::B, i)).collect();
        for _ in 0..30 {
            let amps: Vec<(u64, Complex64)> = (0..16)
                .map(|k| (k, Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))))
                .collect();
            let s = PureState::from_amplitudes(layout.clone(), amps).unwrap();
            let gates = [Gate::H, Gate::CX, Gate::CZ, Gate::Phase(rng.gen_range(0.0..6.0)), Gate::X];
            let g = gates[rng.gen_range(0..gates.len())];
            let a = rng.gen_range(0..4u32);
            let b = (a + rng.gen_range(1..4u32)) % 4;
            let t: Vec<QubitId> = if g.arity() == 2 {
                vec![layout[a as usize], layout[b as usize]]
            } else {
                vec![layout[a as usize]]
            };
            let mut d = DenseDensity::from_pure(&s).unwrap();
            d.apply_gate(g, &t).unwrap();
            let want = DenseDensity::from_pure(&s.apply(g, &t).unwrap()).unwrap();
            assert!(d.max_abs_diff(&want).unwrap() < 1e-12);

            // full-operator route
            let pos: Vec<usize> = t.iter().map(|q| s.position(*q).unwrap()).collect();
            let u = embedded_operator(g, &pos, 4);
            let rho = DenseDensity::from_pure(&s).unwrap();
            let full = &u * rho.matrix() * u.adjoint();
            assert!((&full - d.matrix()).iter().all(|z| z.norm() < 1e-12));
        }
    }

    #[test]
    fn trace_is_preserved_by_gates_and_summed_projections() {
        let s = make_bell(BellKind::PhiMinus);
        let q = QubitId::pair(0);
        let mix = Mixture::pure(s);
        let t_plus = dense_oracle(&mix, &[Op::ProjectX { target: q, outcome: XOutcome::Plus }]).unwrap();
        let t_minus = dense_oracle(&mix, &[Op::ProjectX { target: q, outcome: XOutcome::Minus }]).unwrap();
        assert!((t_plus.trace() + t_minus.trace() - 1.0).abs() < 1e-12);
        let g = dense_oracle(&mix, &[Op::Gate { gate: Gate::H, targets: vec![q] }]).unwrap();
        assert!((g.trace() - 1.0).abs() < 1e-12);
    }
}
