//! Uniform point generation: i.i.d. points for Monte Carlo and
//! nested-uniform (Owen) scrambled Sobol' points for randomized QMC.
//!
//! The scramble is the classic nested uniform scramble: the flip applied to
//! binary digit `k` of a coordinate is a random bit attached to the node of
//! the binary tree reached by the *unscrambled* digits `1..k`. Instead of
//! storing the tree, each node's bit is drawn from a keyed 64-bit hash of its
//! heap index, keyed by `(seed, coordinate)`. Digits 33..53, which are zero
//! in the 32-bit net, are scrambled the same way, so every scrambled
//! coordinate carries a full 53-bit mantissa and is uniform on `[0, 1)`.

use std::io::Write;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::direction_numbers::{JOE_KUO, MAX_DIM};
use crate::error::{Error, Result};
use crate::linalg::RowMatrix;
use crate::numeric::{derive_seed, format_sig17, mix64};

/// Largest supported `m` for `2^m`-point Sobol' sets.
pub const MAX_LOG2_POINTS: u32 = 20;

/// Highest dimension covered by the shipped direction numbers.
pub const MAX_SOBOL_DIM: usize = MAX_DIM;

const BITS: usize = 32;

/// How the uniform inputs of a run are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SamplerKind {
    /// Plain Monte Carlo: i.i.d. uniform points.
    Mc,
    /// Randomized QMC: scrambled Sobol' points.
    Rqmc,
}

impl SamplerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::Mc => "mc",
            SamplerKind::Rqmc => "rqmc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mc" | "iid" => Ok(SamplerKind::Mc),
            "rqmc" | "qmc" | "sobol" => Ok(SamplerKind::Rqmc),
            other => Err(Error::Unknown {
                kind: "sampler",
                name: other.to_string(),
            }),
        }
    }
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Provenance of a [`UniformPointSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    Iid,
    ScrambledSobol,
    /// The raw digital net, used as a reference in tests and dumps.
    UnscrambledSobol,
}

/// An `n x d` block of points in `[0, 1)^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformPointSet {
    kind: PointKind,
    seed: u64,
    values: RowMatrix,
}

impl UniformPointSet {
    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn d(&self) -> usize {
        self.values.cols()
    }

    pub fn kind(&self) -> PointKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    pub fn values(&self) -> &RowMatrix {
        &self.values
    }

    /// Debug dump: one point per line, space-separated, 17 significant digits.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for row in self.values.iter_rows() {
            let line: Vec<String> = row.iter().map(|&v| format_sig17(v)).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// Draws `n` points of dimension `d` with the given sampler. For RQMC `n`
/// must be a power of two.
pub fn generate(kind: SamplerKind, n: usize, d: usize, seed: u64) -> Result<UniformPointSet> {
    match kind {
        SamplerKind::Mc => generate_iid(n, d, seed),
        SamplerKind::Rqmc => {
            if !n.is_power_of_two() {
                return Err(Error::invalid(format!(
                    "RQMC point count must be a power of two, got {n}"
                )));
            }
            generate_sobol(n.trailing_zeros(), d, seed)
        }
    }
}

/// `2^m` scrambled Sobol' points in dimension `d`.
pub fn generate_sobol(m: u32, d: usize, seed: u64) -> Result<UniformPointSet> {
    check_sobol_args(m, d)?;
    let n = 1usize << m;
    let dirs = directions();
    let keys: Vec<u64> = (0..d).map(|j| derive_seed(seed, &[j as u64])).collect();
    let mut values = RowMatrix::zeros(n, d);
    for i in 0..n {
        let row = values.row_mut(i);
        for (j, out) in row.iter_mut().enumerate() {
            let raw = sobol_u32(&dirs[j], i as u32);
            *out = owen_scramble(raw, keys[j]) as f64 * TWO_POW_M53;
        }
    }
    Ok(UniformPointSet {
        kind: PointKind::ScrambledSobol,
        seed,
        values,
    })
}

/// `2^m` points of the unscrambled Sobol' net (first point is the origin).
pub fn generate_sobol_unscrambled(m: u32, d: usize) -> Result<UniformPointSet> {
    check_sobol_args(m, d)?;
    let n = 1usize << m;
    let dirs = directions();
    let mut values = RowMatrix::zeros(n, d);
    for i in 0..n {
        let row = values.row_mut(i);
        for (j, out) in row.iter_mut().enumerate() {
            *out = sobol_u32(&dirs[j], i as u32) as f64 * TWO_POW_M32;
        }
    }
    Ok(UniformPointSet {
        kind: PointKind::UnscrambledSobol,
        seed: 0,
        values,
    })
}

/// `n` i.i.d. uniform points from a seeded ChaCha stream.
pub fn generate_iid(n: usize, d: usize, seed: u64) -> Result<UniformPointSet> {
    if n == 0 || d == 0 {
        return Err(Error::invalid(format!(
            "point count and dimension must be positive (n={n}, d={d})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
    Ok(UniformPointSet {
        kind: PointKind::Iid,
        seed,
        values: RowMatrix::from_vec(n, d, data)?,
    })
}

/// True iff every dyadic interval `[j 2^-m, (j+1) 2^-m)` holds exactly one
/// value of the given coordinate.
pub fn dyadic_stratification_check(ps: &UniformPointSet, coordinate: usize, m: u32) -> Result<bool> {
    let bins = 1usize
        .checked_shl(m)
        .filter(|&b| b == ps.n())
        .ok_or_else(|| {
            Error::invalid(format!("point count {} is not 2^{m}", ps.n()))
        })?;
    if coordinate >= ps.d() {
        return Err(Error::invalid(format!(
            "coordinate {coordinate} out of range for dimension {}",
            ps.d()
        )));
    }
    let mut seen = vec![false; bins];
    for i in 0..ps.n() {
        let v = ps.row(i)[coordinate];
        if !(0.0..1.0).contains(&v) {
            return Ok(false);
        }
        let b = ((v * bins as f64) as usize).min(bins - 1);
        if seen[b] {
            return Ok(false);
        }
        seen[b] = true;
    }
    Ok(true)
}

const TWO_POW_M32: f64 = 1.0 / 4_294_967_296.0;
const TWO_POW_M53: f64 = 1.0 / 9_007_199_254_740_992.0;
const NODE_MUL: u64 = 0x9e37_79b9_7f4a_7c15;
const TAIL_SALT: u64 = 0xd1b5_4a32_d192_ed03;

fn check_sobol_args(m: u32, d: usize) -> Result<()> {
    if m > MAX_LOG2_POINTS {
        return Err(Error::invalid(format!(
            "log2 point count {m} exceeds {MAX_LOG2_POINTS}"
        )));
    }
    if d == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    if d > MAX_SOBOL_DIM {
        return Err(Error::UnsupportedDimension {
            requested: d,
            max: MAX_SOBOL_DIM,
        });
    }
    Ok(())
}

#[inline]
fn sobol_u32(v: &[u32; BITS], index: u32) -> u32 {
    let mut out = 0;
    let mut idx = index;
    let mut k = 0;
    while idx != 0 {
        if idx & 1 == 1 {
            out ^= v[k];
        }
        idx >>= 1;
        k += 1;
    }
    out
}

/// Nested uniform scramble of a 32-digit value, extended with 21 scrambled
/// trailing digits. Returns a 53-bit integer.
#[inline]
fn owen_scramble(x: u32, key: u64) -> u64 {
    let mut out: u32 = 0;
    // heap index of the current tree node; the root is 1
    let mut node: u64 = 1;
    for k in 0..BITS {
        let shift = BITS - 1 - k;
        let bit = (x >> shift) & 1;
        let flip = (mix64(key ^ node.wrapping_mul(NODE_MUL)) >> 63) as u32;
        out |= (bit ^ flip) << shift;
        node = (node << 1) | bit as u64;
    }
    let tail = mix64(key ^ TAIL_SALT ^ node.wrapping_mul(NODE_MUL)) >> 43;
    ((out as u64) << 21) | tail
}

fn directions() -> &'static [[u32; BITS]] {
    static DIRS: OnceLock<Vec<[u32; BITS]>> = OnceLock::new();
    DIRS.get_or_init(|| {
        let mut all = Vec::with_capacity(MAX_SOBOL_DIM);
        let mut first = [0u32; BITS];
        for (k, v) in first.iter_mut().enumerate() {
            *v = 1 << (BITS - 1 - k);
        }
        all.push(first);
        for &(s, a, m) in JOE_KUO.iter() {
            let s = s as usize;
            let mut v = [0u32; BITS];
            for k in 0..s.min(BITS) {
                v[k] = m[k] << (BITS - 1 - k);
            }
            for k in s..BITS {
                let mut val = v[k - s] ^ (v[k - s] >> s);
                for i in 1..s {
                    if (a >> (s - 1 - i)) & 1 == 1 {
                        val ^= v[k - i];
                    }
                }
                v[k] = val;
            }
            all.push(v);
        }
        all
    })
}
