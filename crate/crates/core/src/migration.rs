//! CTMC migration machinery: generator, e^{Qt}, and exact path sampling.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::generator_row_sum;

/// Infinitesimal generator of a patch-valued Markov chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    q: DMatrix<f64>,
}

impl Generator {
    /// Wraps a matrix that is already a generator (rows sum to 0, off-diagonals >= 0).
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        if q.nrows() != q.ncols() || q.nrows() == 0 {
            return Err(Error::invalid("q", "generator must be a nonempty square matrix"));
        }
        for i in 0..q.nrows() {
            for j in 0..q.ncols() {
                if i != j && !(q[(i, j)] >= 0.0 && q[(i, j)].is_finite()) {
                    return Err(Error::invalid("q", format!("off-diagonal ({i},{j}) must be >= 0")));
                }
            }
            if generator_row_sum(&q, i).abs() > 1e-12 * q[(i, i)].abs().max(1.0) {
                return Err(Error::invalid("q", format!("row {i} does not sum to 0")));
            }
        }
        Ok(Self { q })
    }

    /// Builds a generator from off-diagonal rates; the diagonal is ignored.
    pub fn from_rates(rates: &DMatrix<f64>) -> Result<Self> {
        let mut r = rates.clone();
        r.fill_diagonal(0.0);
        Self::new(crate::model::generator_from_rates(&r, "rates")?)
    }

    pub fn zero(n: usize) -> Self {
        Self { q: DMatrix::zeros(n, n) }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    /// Total exit rate −Q_{ℓℓ}.
    pub fn exit_rate(&self, l: usize) -> f64 {
        -self.q[(l, l)]
    }

    pub fn is_zero(&self) -> bool {
        self.q.iter().all(|&v| v == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub p: DMatrix<f64>,
    pub t: f64,
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

fn norm1(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Projects a nearly stochastic matrix back onto the stochastic matrices:
/// clamps roundoff negatives and rescales rows to sum to one.
fn restochasticize(p: &mut DMatrix<f64>) {
    for i in 0..p.nrows() {
        let mut s = 0.0;
        for j in 0..p.ncols() {
            if p[(i, j)] < 0.0 {
                p[(i, j)] = 0.0;
            }
            s += p[(i, j)];
        }
        if s > 0.0 {
            for j in 0..p.ncols() {
                p[(i, j)] /= s;
            }
        }
    }
}

/// Padé(13) scaling-and-squaring. With `stochastic`, each squaring is
/// followed by a projection that stops roundoff from accumulating in the
/// row sums (the exact result is stochastic).
fn expm_impl(a: &DMatrix<f64>, stochastic: bool) -> DMatrix<f64> {
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let nrm = norm1(a);
    if nrm == 0.0 {
        return ident;
    }
    let s = if nrm > THETA13 {
        (nrm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = a * 2f64.powi(-s);
    let b = &PADE13;
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]) + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]) + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];
    let num = &v + &u;
    let den = &v - &u;
    let mut r = den.lu().solve(&num).expect("Padé denominator is nonsingular for scaled input");
    if stochastic {
        restochasticize(&mut r);
    }
    for _ in 0..s {
        r = &r * &r;
        if stochastic {
            restochasticize(&mut r);
        }
    }
    r
}

/// Matrix exponential of an arbitrary square matrix.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    expm_impl(a, false)
}

/// p(t) = e^{Qt}.
pub fn transition_matrix(gen: &Generator, t: f64) -> TransitionMatrix {
    assert!(t >= 0.0, "transition_matrix needs t >= 0");
    let p = if t == 0.0 || gen.is_zero() {
        DMatrix::identity(gen.dim(), gen.dim())
    } else {
        expm_impl(&(gen.matrix() * t), true)
    };
    TransitionMatrix { p, t }
}

/// max |p(t+s) − p(t)p(s)|.
pub fn semigroup_check(gen: &Generator, t: f64, s: f64) -> f64 {
    let lhs = transition_matrix(gen, t + s).p;
    let rhs = transition_matrix(gen, t).p * transition_matrix(gen, s).p;
    (lhs - rhs).amax()
}

/// Piecewise-constant CTMC path on `[0, horizon]`, stored as its jumps.
#[derive(Debug, Clone, PartialEq)]
pub struct MigrationPath {
    pub start_patch: usize,
    /// (jump time, patch entered), strictly increasing in time.
    pub jumps: Vec<(f64, usize)>,
    pub horizon: f64,
}

impl MigrationPath {
    pub fn constant(patch: usize, horizon: f64) -> Self {
        Self {
            start_patch: patch,
            jumps: Vec::new(),
            horizon,
        }
    }

    /// Patch occupied at time `t` (right-continuous: a jump at `t` counts).
    pub fn patch_at(&self, t: f64) -> usize {
        let k = self.jumps.partition_point(|&(s, _)| s <= t);
        if k == 0 {
            self.start_patch
        } else {
            self.jumps[k - 1].1
        }
    }

    pub fn end_patch(&self) -> usize {
        self.jumps.last().map_or(self.start_patch, |j| j.1)
    }
}

/// Samples the next state of the chain after leaving `from`.
pub fn sample_jump_target<R: Rng + ?Sized>(gen: &Generator, from: usize, rng: &mut R) -> usize {
    let q = gen.matrix();
    let total = gen.exit_rate(from);
    let mut u = rng.random::<f64>() * total;
    let mut last = from;
    for j in 0..gen.dim() {
        if j == from || q[(from, j)] <= 0.0 {
            continue;
        }
        last = j;
        if u < q[(from, j)] {
            return j;
        }
        u -= q[(from, j)];
    }
    last
}

/// Exponential holding time with the given rate (∞ for rate 0).
pub fn sample_exp<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    -(1.0 - rng.random::<f64>()).ln() / rate
}

pub fn sample_path<R: Rng + ?Sized>(gen: &Generator, start_patch: usize, horizon: f64, rng: &mut R) -> MigrationPath {
    let mut path = MigrationPath::constant(start_patch, horizon);
    let mut t = 0.0;
    let mut cur = start_patch;
    loop {
        t += sample_exp(gen.exit_rate(cur), rng);
        if t > horizon {
            break;
        }
        cur = sample_jump_target(gen, cur, rng);
        path.jumps.push((t, cur));
    }
    path
}
