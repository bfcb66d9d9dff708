//! Reproducible space-time white noise on a rectangular lattice.
//!
//! Every cell value is a pure function of `(seed, replica_id, flat cell
//! index)`: a ChaCha8 keystream is keyed by the seed, the replica selects the
//! stream, and the flat index selects the word position. The flat index
//! refers to an infinite lattice anchored at `x = 0`, so two grids with the
//! same steps see the same noise wherever they overlap. Normals come from the
//! inverse CDF (Wichura's AS241), so one cell always consumes exactly one
//! 64-bit word and no rejection loop can shift later cells.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lattice tag for the uniform space-time grid.
pub const TAG_GRID: u64 = 0;
/// Lattice tag for the graded lattice of the proxy-average sampler.
pub const TAG_GRADED: u64 = 1;
/// Lattice tag for auxiliary streams (bootstrap resampling and similar).
pub const TAG_AUX: u64 = 2;

/// Default cap on the bytes of a single materialized noise buffer.
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 30;

/// Space-time lattice: time cells `[k dt, (k+1) dt)` for `k < n_time`, space
/// nodes `x_min + j dx` for `j < n_space`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub t_max: f64,
    pub dt: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
}

/// Row stride of the flat cell index: space offsets live in the low 32 bits.
const ROW_STRIDE: u64 = 1 << 32;
const COLUMN_OFFSET: i64 = 1 << 31;
/// Time rows are limited so that `2 × index` stays addressable.
const MAX_ROWS: usize = 1 << 30;

/// Relative slack when checking that spans are whole multiples of a step.
const MULTIPLE_TOL: f64 = 1e-9;

fn whole_multiple(span: f64, step: f64) -> Option<usize> {
    let r = span / step;
    let n = r.round();
    ((r - n).abs() <= MULTIPLE_TOL * n.max(1.0)).then_some(n as usize)
}

impl GridSpec {
    pub fn new(t_max: f64, dt: f64, x_min: f64, x_max: f64, dx: f64) -> Result<Self> {
        let g = Self {
            t_max,
            dt,
            x_min,
            x_max,
            dx,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.t_max, self.dt, self.x_min, self.x_max, self.dx]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Argument("grid parameters must be finite".into()));
        }
        if !(self.dt > 0.0 && self.dt <= self.t_max) {
            return Err(Error::Argument(format!(
                "need 0 < dt <= t_max, got dt={} t_max={}",
                self.dt, self.t_max
            )));
        }
        if !(self.x_min < self.x_max) {
            return Err(Error::Argument(format!(
                "need x_min < x_max, got {} and {}",
                self.x_min, self.x_max
            )));
        }
        if !(self.dx > 0.0 && self.dx <= self.x_max - self.x_min) {
            return Err(Error::Argument(format!(
                "need 0 < dx <= x_max - x_min, got dx={}",
                self.dx
            )));
        }
        if whole_multiple(self.t_max, self.dt).is_none() {
            return Err(Error::Argument(format!(
                "t_max={} is not a whole number of steps dt={}",
                self.t_max, self.dt
            )));
        }
        if whole_multiple(self.x_max - self.x_min, self.dx).is_none() {
            return Err(Error::Argument(format!(
                "x range [{}, {}] is not a whole number of steps dx={}",
                self.x_min, self.x_max, self.dx
            )));
        }
        let r = self.x_min / self.dx;
        if (r - r.round()).abs() > 1e-6 {
            return Err(Error::Argument(format!(
                "x_min={} must be a whole multiple of dx={} so the grid sits on the noise lattice",
                self.x_min, self.dx
            )));
        }
        let first = self.first_column();
        let last = first + self.n_space() as i64 - 1;
        if first < -COLUMN_OFFSET || last >= COLUMN_OFFSET || self.n_time() > MAX_ROWS {
            return Err(Error::Resource(format!(
                "grid with {} x {} cells exceeds the addressable lattice",
                self.n_time(),
                self.n_space()
            )));
        }
        Ok(())
    }

    /// Number of time cells.
    pub fn n_time(&self) -> usize {
        whole_multiple(self.t_max, self.dt).unwrap_or(0)
    }

    /// Number of space nodes (both ends included).
    pub fn n_space(&self) -> usize {
        whole_multiple(self.x_max - self.x_min, self.dx).unwrap_or(0) + 1
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx
    }

    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Index of the node nearest to `x`, if it lies on the grid.
    pub fn node_index(&self, x: f64) -> Option<usize> {
        let r = (x - self.x_min) / self.dx;
        let j = r.round();
        ((r - j).abs() <= 1e-6 && j >= 0.0 && (j as usize) < self.n_space()).then_some(j as usize)
    }

    /// Step index of time `t`, if `t` is a whole number of steps within range.
    pub fn step_index(&self, t: f64) -> Option<usize> {
        whole_multiple(t, self.dt).filter(|&k| k <= self.n_time())
    }

    /// Lattice column of node 0, i.e. `x_min / dx`.
    pub fn first_column(&self) -> i64 {
        (self.x_min / self.dx).round() as i64
    }

    /// Flat index of cell `(k, j)` on the lattice anchored at `x = 0`.
    pub fn flat_index(&self, k: usize, j: usize) -> u64 {
        k as u64 * ROW_STRIDE + (self.first_column() + j as i64 + COLUMN_OFFSET) as u64
    }

    pub fn cell_count(&self) -> u64 {
        self.n_time() as u64 * self.n_space() as u64
    }
}

/// A keyed, seekable stream of standard normals.
#[derive(Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    /// Stream `stream` of the keystream keyed by `(seed, tag)`.
    pub fn new(seed: u64, stream: u64, tag: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&tag.to_le_bytes());
        key[16..].copy_from_slice(b"pamlab white noi");
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream);
        rng.set_word_pos(0);
        Self { rng }
    }

    /// Position the stream so the next draw is cell `index`.
    #[inline]
    pub fn seek(&mut self, index: u64) {
        self.rng.set_word_pos(2 * index as u128);
    }

    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        uniform_from_bits(self.rng.next_u64())
    }

    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        inverse_normal_cdf(self.next_uniform())
    }

    /// Fill `out` with consecutive normals starting at cell `index`.
    pub fn fill_from(&mut self, index: u64, out: &mut [f64]) {
        self.seek(index);
        for v in out.iter_mut() {
            *v = self.next_normal();
        }
    }
}

/// Open-interval uniform from the top 52 bits: `((x >> 12) + ½) 2^-52`.
/// With 52 bits the half offset is exact, so neither 0 nor 1 can occur.
#[inline]
pub fn uniform_from_bits(x: u64) -> f64 {
    ((x >> 12) as f64 + 0.5) * (1.0 / 4_503_599_627_370_496.0)
}

/// Standard normal quantile, Wichura's AS241 (PPND16); relative accuracy
/// about 1e-16 over `(0, 1)`.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        let num = ((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r + 6.726_577_092_700_87e4) * r
            + 4.592_195_393_154_987e4)
            * r
            + 1.373_169_376_550_946e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5;
        let den = ((((((5.226_495_278_852_545e3 * r + 2.872_908_573_572_194_3e4) * r + 3.930_789_580_009_271e4) * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return q * num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_5;
        let den =
            ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r + 1.519_866_656_361_645_7e-2) * r
                + 1.481_039_764_274_800_8e-1)
                * r
                + 6.897_673_349_851e-1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_445_9e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Source of the increments: genuine white noise or the zero field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    White,
    /// All increments zero; the solver then reproduces deterministic heat flow.
    Zero,
}

/// White-noise increments `ξ` on a [`GridSpec`] for one replica.
///
/// Values are produced one time slice at a time on demand; nothing is
/// stored, so memory stays proportional to the space dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSlab {
    pub grid: GridSpec,
    pub seed: u64,
    pub replica_id: u64,
    pub mode: NoiseMode,
}

/// Build the noise slab for one replica, checking the per-slice memory budget.
pub fn make_noise(grid: GridSpec, seed: u64, replica_id: u64) -> Result<NoiseSlab> {
    make_noise_with_budget(grid, seed, replica_id, DEFAULT_MEMORY_BUDGET)
}

pub fn make_noise_with_budget(grid: GridSpec, seed: u64, replica_id: u64, budget: usize) -> Result<NoiseSlab> {
    grid.validate()?;
    let slice_bytes = grid.n_space().saturating_mul(std::mem::size_of::<f64>());
    if slice_bytes > budget {
        return Err(Error::Resource(format!(
            "one time slice needs {slice_bytes} bytes, budget is {budget}"
        )));
    }
    Ok(NoiseSlab {
        grid,
        seed,
        replica_id,
        mode: NoiseMode::White,
    })
}

impl NoiseSlab {
    /// A slab whose increments are all zero.
    pub fn zero(grid: GridSpec) -> Result<Self> {
        grid.validate()?;
        Ok(Self {
            grid,
            seed: 0,
            replica_id: 0,
            mode: NoiseMode::Zero,
        })
    }

    pub fn stream(&self) -> NoiseStream {
        NoiseStream::new(self.seed, self.replica_id, TAG_GRID)
    }

    /// `ξ` for cells `(k, j0), (k, j0+1), …` into `out`, using `stream`.
    pub fn fill_slice_with(&self, stream: &mut NoiseStream, k: usize, j0: usize, out: &mut [f64]) {
        debug_assert!(k < self.grid.n_time() && j0 + out.len() <= self.grid.n_space());
        match self.mode {
            NoiseMode::Zero => out.fill(0.0),
            NoiseMode::White => stream.fill_from(self.grid.flat_index(k, j0), out),
        }
    }

    /// `ξ` for the cells `(k, j0..j0 + out.len())`.
    pub fn fill_slice(&self, k: usize, j0: usize, out: &mut [f64]) {
        let mut s = self.stream();
        self.fill_slice_with(&mut s, k, j0, out);
    }

    /// Single cell value; equal to the corresponding entry of any slice.
    pub fn cell(&self, k: usize, j: usize) -> f64 {
        let mut v = [0.0];
        self.fill_slice(k, j, &mut v);
        v[0]
    }

    /// The whole slab as a row-major `n_time × n_space` array.
    pub fn materialize(&self, budget: usize) -> Result<Vec<f64>> {
        let cells = self.grid.cell_count() as usize;
        if cells.saturating_mul(8) > budget {
            return Err(Error::Resource(format!(
                "{cells} cells exceed the budget of {budget} bytes"
            )));
        }
        let ns = self.grid.n_space();
        let mut out = vec![0.0; cells];
        let mut s = self.stream();
        for (k, row) in out.chunks_mut(ns).enumerate() {
            self.fill_slice_with(&mut s, k, 0, row);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::std_normal_cdf;

    fn grid() -> GridSpec {
        GridSpec::new(1.0, 1e-3, -5.0, 5.0, 1e-2).unwrap()
    }

    #[test]
    fn grid_counts_and_validation() {
        let g = grid();
        assert_eq!(g.n_time(), 1000);
        assert_eq!(g.n_space(), 1001);
        assert_eq!(g.node_index(0.0), Some(500));
        assert_eq!(g.node_index(0.005), None);
        assert_eq!(g.step_index(0.5), Some(500));
        assert!(GridSpec::new(1.0, 0.3, 0.0, 1.0, 0.1).is_err());
        assert!(GridSpec::new(1.0, 0.0, 0.0, 1.0, 0.1).is_err());
        assert!(GridSpec::new(1.0, 0.1, 1.0, 0.0, 0.1).is_err());
        assert!(GridSpec::new(1.0, 0.1, 0.0, 1.0, 2.0).is_err());
        assert!(GridSpec::new(1.0, 2.0, 0.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn quantile_round_trip() {
        for i in 1..2000 {
            let p = i as f64 / 2000.0;
            let z = inverse_normal_cdf(p);
            assert!((std_normal_cdf(z) / p - 1.0).abs() < 1e-14, "p={p}");
        }
        for &p in &[1e-300, 1e-100, 1e-20, 1e-10, 1e-5] {
            let z = inverse_normal_cdf(p);
            // a relative error e in z moves Φ(z) by about z² e
            assert!((std_normal_cdf(z) / p - 1.0).abs() < 2e-15 * z * z, "p={p}");
        }
        // 30-digit references
        for &(p, z) in &[
            (0.0005, -3.290_526_731_491_894_787_4),
            (0.01, -2.326_347_874_040_841_093_1),
            (0.3, -0.524_400_512_708_040_815_97),
        ] {
            assert!((inverse_normal_cdf(p) / z - 1.0).abs() < 1e-15, "p={p}");
        }
        // exact symmetry on dyadic probabilities, where 1 - p is exact
        for i in 1..512 {
            let p = i as f64 / 1024.0;
            assert_eq!(inverse_normal_cdf(1.0 - p), -inverse_normal_cdf(p));
        }
        assert_eq!(inverse_normal_cdf(0.5), 0.0);
    }

    #[test]
    fn uniform_is_open() {
        assert!(uniform_from_bits(0) > 0.0);
        assert!(uniform_from_bits(u64::MAX) < 1.0);
    }

    #[test]
    fn deterministic_and_order_free() {
        let a = make_noise(grid(), 42, 3).unwrap();
        let b = make_noise(grid(), 42, 3).unwrap();
        let mut sa = vec![0.0; 1001];
        let mut sb = vec![0.0; 1001];
        a.fill_slice(17, 0, &mut sa);
        b.fill_slice(17, 0, &mut sb);
        assert_eq!(sa, sb);
        // evaluation order cannot matter: single cells, reversed, partial slices
        for j in (0..1001).rev().step_by(97) {
            assert_eq!(a.cell(17, j), sa[j]);
        }
        let mut part = vec![0.0; 10];
        a.fill_slice(17, 500, &mut part);
        assert_eq!(&part[..], &sa[500..510]);
        let c = make_noise(grid(), 43, 3).unwrap();
        assert_ne!(c.cell(17, 0), sa[0]);
    }

    #[test]
    fn overlapping_grids_share_noise() {
        let wide = make_noise(GridSpec::new(1.0, 1e-3, -10.0, 12.0, 1e-2).unwrap(), 5, 2).unwrap();
        let narrow = make_noise(grid(), 5, 2).unwrap();
        // x = 0 is node 1000 of the wide grid and node 500 of the narrow one
        assert_eq!(wide.cell(40, 1000), narrow.cell(40, 500));
        assert_eq!(wide.cell(40, 1000 + 123), narrow.cell(40, 500 + 123));
        assert!(GridSpec::new(1.0, 1e-3, -5.005, 5.005, 1e-2).is_err());
    }

    #[test]
    fn moments_of_a_million_cells() {
        let g = GridSpec::new(1.0, 1e-3, 0.0, 9.99, 1e-2).unwrap();
        let slab = make_noise(g, 7, 0).unwrap();
        let other = make_noise(g, 7, 1).unwrap();
        let xs = slab.materialize(DEFAULT_MEMORY_BUDGET).unwrap();
        let ys = other.materialize(DEFAULT_MEMORY_BUDGET).unwrap();
        let n = xs.len() as f64;
        assert_eq!(xs.len(), 1_000_000);
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 4.0 / n.sqrt());
        assert!((var - 1.0).abs() < 4.0 * (2.0 / n).sqrt());
        let my = ys.iter().sum::<f64>() / n;
        let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / (n - 1.0);
        let cov = xs.iter().zip(&ys).map(|(x, y)| (x - mean) * (y - my)).sum::<f64>() / (n - 1.0);
        assert!((cov / (var * vy).sqrt()).abs() < 4.0 / n.sqrt());
    }

    #[test]
    fn white_noise_scaling_contract() {
        // Var[Σ 1_R ξ √(dt dx)] = |R| for a sub-rectangle R
        let g = GridSpec::new(0.1, 1e-2, 0.0, 1.0, 0.1).unwrap();
        let (reps, cells) = (4000, 5 * 6);
        let scale = (g.dt * g.dx).sqrt();
        let mut vals = Vec::with_capacity(reps);
        for r in 0..reps {
            let slab = make_noise(g, 11, r as u64).unwrap();
            let mut s = 0.0;
            let mut buf = [0.0; 6];
            for k in 2..7 {
                slab.fill_slice(k, 3, &mut buf);
                s += buf.iter().sum::<f64>() * scale;
            }
            vals.push(s);
        }
        let n = reps as f64;
        let m = vals.iter().sum::<f64>() / n;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        let area = cells as f64 * g.dt * g.dx;
        assert!((v - area).abs() < 3.0 * area * (2.0 / (n - 1.0)).sqrt());
    }

    #[test]
    fn budget_and_zero_mode() {
        let g = GridSpec::new(1.0, 0.5, 0.0, 100.0, 1e-3).unwrap();
        assert!(matches!(make_noise_with_budget(g, 1, 0, 1024), Err(Error::Resource(_))));
        let z = NoiseSlab::zero(grid()).unwrap();
        assert_eq!(z.cell(3, 4), 0.0);
        assert!(matches!(z.materialize(16), Err(Error::Resource(_))));
    }
}
