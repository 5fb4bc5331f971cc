//! The simulated CS encoder: random Bernoulli projection of luminance
//! blocks at two rates, plus Gaussian measurement noise.
//!
//! Every randomized operation here is a pure function of its explicit seed;
//! matrices regenerate bit-exactly from `(seed, shape)`, so checkpoints only
//! need to store the metadata.

use crate::error::{Error, Result};
use crate::ingest::GopBlockSequence;
use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Where injected noise is applied during evaluation sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Additive Gaussian noise on measurement vectors (sensor noise).
    #[default]
    Measurement,
    /// Additive Gaussian noise on frame pixels before sensing.
    Frame,
}

/// Metadata sufficient to regenerate a [`SensingMatrixSet`] bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingMeta {
    pub m_key: usize,
    pub m_non_key: usize,
    pub n: usize,
    pub seed: u64,
    pub noise_mode: NoiseMode,
}

/// The key-frame and non-key-frame Bernoulli projection matrices.
///
/// Entries are `±1/sqrt(m)` for the matrix's own row count `m`, so columns
/// have unit expected norm at either rate.
#[derive(Debug, Clone)]
pub struct SensingMatrixSet {
    phi_key: Array2<f32>,
    phi_non_key: Array2<f32>,
    meta: SensingMeta,
}

impl SensingMatrixSet {
    /// Generates both matrices from the metadata. The key matrix uses the
    /// substream `mix_seed(seed, &[0])`, the non-key matrix `mix_seed(seed, &[1])`.
    pub fn generate(meta: SensingMeta) -> Result<Self> {
        if meta.m_key < meta.m_non_key || meta.m_non_key == 0 {
            return Err(Error::InvalidArgument(format!(
                "measurement counts must satisfy m_key >= m_non_key >= 1, got {} and {}",
                meta.m_key, meta.m_non_key
            )));
        }
        let phi_key = make_bernoulli_matrix(meta.m_key, meta.n, mix_seed(meta.seed, &[0]))?;
        let phi_non_key =
            make_bernoulli_matrix(meta.m_non_key, meta.n, mix_seed(meta.seed, &[1]))?;
        Ok(Self {
            phi_key,
            phi_non_key,
            meta,
        })
    }

    pub fn meta(&self) -> SensingMeta {
        self.meta
    }

    pub fn phi_key(&self) -> ArrayView2<'_, f32> {
        self.phi_key.view()
    }

    pub fn phi_non_key(&self) -> ArrayView2<'_, f32> {
        self.phi_non_key.view()
    }
}

/// One GOP in the compressed domain.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementGop {
    /// Key-frame measurements, shape `(positions, m_key)`.
    pub key: Array2<f32>,
    /// Non-key measurements, shape `(t - 1, positions, m_non_key)`.
    pub non_key: Array3<f32>,
    /// Grid layout of the source GOP.
    pub grid: (usize, usize),
    pub m_key: usize,
    pub m_non_key: usize,
    pub t: usize,
    pub n: usize,
}

/// Splits a base seed into independent substreams. SplitMix64 finalizer over
/// the base and each part, so nearby seeds give unrelated streams.
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut state = base;
    for &p in parts {
        state = state.wrapping_add(0x9e3779b97f4a7c15).wrapping_add(p);
        state = splitmix64(state);
    }
    splitmix64(state)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Draws an `m x n` matrix with entries `±1/sqrt(m)`, each sign taken with
/// probability 1/2 from a ChaCha8 stream keyed by `seed`.
///
/// Entries are generated in row-major order; the sign is the top bit of one
/// 32-bit draw per entry, which keeps regeneration exact and independent of
/// float-sampling details.
pub fn make_bernoulli_matrix(m: usize, n: usize, seed: u64) -> Result<Array2<f32>> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "matrix dimensions must be positive, got {m}x{n}"
        )));
    }
    let scale = 1.0 / (m as f32).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::<f32>::zeros((m, n));
    for v in out.iter_mut() {
        *v = if rng.next_u32() >> 31 == 1 { scale } else { -scale };
    }
    Ok(out)
}

/// Exact projection of one block: `phi * block`. Accumulation runs in f64 so
/// the result is the correctly rounded single-precision product for desk-scale
/// dimensions.
pub fn sense_block(phi: ArrayView2<f32>, block: ArrayView1<f32>) -> Result<Array1<f32>> {
    if phi.ncols() != block.len() {
        return Err(Error::shape(
            "sense_block",
            format!("block of length {}", phi.ncols()),
            format!("length {}", block.len()),
        ));
    }
    let mut out = Array1::<f32>::zeros(phi.nrows());
    for (r, row) in phi.axis_iter(Axis(0)).enumerate() {
        let mut acc = 0.0f64;
        for (&w, &x) in row.iter().zip(block.iter()) {
            acc += w as f64 * x as f64;
        }
        out[r] = acc as f32;
    }
    Ok(out)
}

/// Projects a batch of blocks (rows of `x`) through `phi`, returning one
/// measurement row per block. Same f64 accumulation as [`sense_block`].
pub fn sense_blocks(phi: ArrayView2<f32>, x: ArrayView2<f32>) -> Result<Array2<f32>> {
    if phi.ncols() != x.ncols() {
        return Err(Error::shape(
            "sense_blocks",
            format!("blocks of length {}", phi.ncols()),
            format!("length {}", x.ncols()),
        ));
    }
    let phi64 = phi.mapv(|v| v as f64);
    let x64 = x.mapv(|v| v as f64);
    let y = x64.dot(&phi64.t());
    Ok(y.mapv(|v| v as f32))
}

/// Senses a whole GOP: frame 0 of every grid position with the key matrix,
/// frames `1..T` with the non-key matrix.
pub fn sense_gop(mats: &SensingMatrixSet, gop: &GopBlockSequence) -> Result<MeasurementGop> {
    let meta = mats.meta();
    let n = gop.block_size() * gop.block_size();
    if n != meta.n {
        return Err(Error::shape(
            "sense_gop",
            format!("block length {}", meta.n),
            format!("block length {n}"),
        ));
    }
    let t = gop.t();
    let positions = gop.positions();
    let blocks = gop.blocks();

    let key = sense_blocks(mats.phi_key(), blocks.index_axis(Axis(0), 0))?;
    let mut non_key = Array3::<f32>::zeros((t - 1, positions, meta.m_non_key));
    for ti in 1..t {
        let y = sense_blocks(mats.phi_non_key(), blocks.index_axis(Axis(0), ti))?;
        non_key.index_axis_mut(Axis(0), ti - 1).assign(&y);
    }
    Ok(MeasurementGop {
        key,
        non_key,
        grid: gop.grid(),
        m_key: meta.m_key,
        m_non_key: meta.m_non_key,
        t,
        n,
    })
}

/// Adds white Gaussian noise at the requested SNR (dB) relative to the
/// vector's own power. `snr_db = +inf` disables noise. Deterministic per
/// `(y, snr_db, seed)`.
pub fn add_measurement_noise(y: ArrayView1<f32>, snr_db: f64, seed: u64) -> Result<Array1<f32>> {
    if snr_db.is_nan() {
        return Err(Error::InvalidArgument("SNR must not be NaN".into()));
    }
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(y.to_owned());
    }
    let power = y.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / y.len().max(1) as f64;
    if power == 0.0 {
        return Err(Error::InvalidArgument(
            "SNR is undefined for a zero-power vector".into(),
        ));
    }
    let sigma = (power * 10f64.powf(-snr_db / 10.0)).sqrt();
    let normal = Normal::new(0.0f64, sigma)
        .map_err(|e| Error::InvalidArgument(format!("bad noise level: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = y.to_owned();
    for v in out.iter_mut() {
        *v = (*v as f64 + normal.sample(&mut rng)) as f32;
    }
    Ok(out)
}

/// GOP-level compression ratio implied by the multi-rate design:
/// `T*n / (m_key + (T-1)*m_non_key)`.
pub fn aggregate_cr(m_key: usize, m_non_key: usize, t: usize, n: usize) -> Result<f64> {
    if m_key == 0 || m_non_key == 0 || t == 0 || n == 0 {
        return Err(Error::InvalidArgument(
            "aggregate_cr needs positive arguments".into(),
        ));
    }
    Ok((t * n) as f64 / (m_key + (t - 1) * m_non_key) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::Rng;

    fn test_meta(m_key: usize, m_non_key: usize, n: usize, seed: u64) -> SensingMeta {
        SensingMeta {
            m_key,
            m_non_key,
            n,
            seed,
            noise_mode: NoiseMode::Measurement,
        }
    }

    #[test]
    fn bernoulli_matrix_is_deterministic() {
        let a = make_bernoulli_matrix(10, 1024, 99).unwrap();
        let b = make_bernoulli_matrix(10, 1024, 99).unwrap();
        assert_eq!(a, b);
        let c = make_bernoulli_matrix(10, 1024, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bernoulli_entries_have_fixed_magnitude() {
        let m = 10usize;
        let phi = make_bernoulli_matrix(m, 64, 7).unwrap();
        let scale = 1.0 / (m as f32).sqrt();
        assert!(phi.iter().all(|&v| v == scale || v == -scale));
    }

    #[test]
    fn bernoulli_sign_fraction_is_balanced() {
        // Binomial bound: over 40*1024 draws the positive fraction stays
        // within [0.45, 0.55] except with negligible probability.
        let phi = make_bernoulli_matrix(40, 1024, 12345).unwrap();
        let pos = phi.iter().filter(|&&v| v > 0.0).count();
        let frac = pos as f64 / phi.len() as f64;
        assert!((0.45..=0.55).contains(&frac), "positive fraction {frac}");
    }

    #[test]
    fn sense_block_zero_and_oracle() {
        let phi = make_bernoulli_matrix(4, 16, 3).unwrap();
        let zero = Array1::<f32>::zeros(16);
        let y = sense_block(phi.view(), zero.view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));

        // Naive triple-loop oracle on a small case.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let block = Array1::from_shape_fn(16, |_| rng.random::<f32>());
        let y = sense_block(phi.view(), block.view()).unwrap();
        for r in 0..4 {
            let mut acc = 0.0f64;
            for c in 0..16 {
                acc += phi[[r, c]] as f64 * block[c] as f64;
            }
            assert!((y[r] as f64 - acc).abs() < 1e-7);
        }

        let short = Array1::<f32>::zeros(8);
        assert!(sense_block(phi.view(), short.view()).is_err());
    }

    #[test]
    fn sensing_linearity_single_precision() {
        let n = 1024usize;
        let phi = make_bernoulli_matrix(40, n, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..5 {
            let x = Array1::from_shape_fn(n, |_| rng.random::<f32>());
            let z = Array1::from_shape_fn(n, |_| rng.random::<f32>());
            let a = rng.random::<f32>() * 2.0 - 1.0;
            let b = rng.random::<f32>() * 2.0 - 1.0;
            let combo = Array1::from_shape_fn(n, |i| a * x[i] + b * z[i]);
            let lhs = sense_block(phi.view(), combo.view()).unwrap();
            let yx = sense_block(phi.view(), x.view()).unwrap();
            let yz = sense_block(phi.view(), z.view()).unwrap();
            let max_err = lhs
                .iter()
                .enumerate()
                .map(|(i, &v)| (v as f64 - (a * yx[i] + b * yz[i]) as f64).abs())
                .fold(0.0f64, f64::max);
            assert!(max_err <= 1e-6, "linearity violated by {max_err}");
        }
    }

    #[test]
    fn sense_gop_shapes_and_composition() {
        let meta = test_meta(40, 10, 1024, 77);
        let mats = SensingMatrixSet::generate(meta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let blocks = Array3::from_shape_fn((10, 25, 1024), |_| rng.random::<f32>());
        let gop = GopBlockSequence::new(32, 5, 5, blocks, "test").unwrap();
        let mg = sense_gop(&mats, &gop).unwrap();

        // 25 key vectors of length 40 and 225 non-key vectors of length 10.
        assert_eq!(mg.key.dim(), (25, 40));
        assert_eq!(mg.non_key.dim(), (9, 25, 10));

        // Per-position measurements equal independent sense_block calls.
        for p in [0usize, 7, 24] {
            let y = sense_block(mats.phi_key(), gop.blocks().slice(ndarray::s![0, p, ..])).unwrap();
            let got = mg.key.row(p);
            for i in 0..40 {
                assert!((y[i] - got[i]).abs() < 1e-7);
            }
        }

        let zero_gop =
            GopBlockSequence::new(32, 5, 5, Array3::<f32>::zeros((10, 25, 1024)), "z").unwrap();
        let zero_mg = sense_gop(&mats, &zero_gop).unwrap();
        assert!(zero_mg.key.iter().all(|&v| v == 0.0));
        assert!(zero_mg.non_key.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matrix_set_regenerates_bit_exactly() {
        let meta = test_meta(20, 5, 256, 31337);
        let a = SensingMatrixSet::generate(meta).unwrap();
        let b = SensingMatrixSet::generate(meta).unwrap();
        assert_eq!(a.phi_key(), b.phi_key());
        assert_eq!(a.phi_non_key(), b.phi_non_key());
    }

    #[test]
    fn noise_rejects_degenerate_input_and_respects_sentinel() {
        let y = Array1::from_elem(64, 1.5f32);
        let clean = add_measurement_noise(y.view(), f64::INFINITY, 1).unwrap();
        assert_eq!(clean, y);

        let zero = Array1::<f32>::zeros(64);
        assert!(add_measurement_noise(zero.view(), 20.0, 1).is_err());
        assert!(add_measurement_noise(y.view(), f64::NAN, 1).is_err());

        let a = add_measurement_noise(y.view(), 20.0, 9).unwrap();
        let b = add_measurement_noise(y.view(), 20.0, 9).unwrap();
        assert_eq!(a, b, "same seed must give identical noise");
    }

    #[test]
    fn noise_calibration_at_20db() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = Array1::from_shape_fn(100_000, |_| rng.random::<f32>() * 2.0 - 1.0);
        let noisy = add_measurement_noise(y.view(), 20.0, 55).unwrap();
        let signal: f64 = y.iter().map(|&v| (v as f64).powi(2)).sum();
        let noise: f64 = y
            .iter()
            .zip(noisy.iter())
            .map(|(&a, &b)| ((b - a) as f64).powi(2))
            .sum();
        let snr = 10.0 * (signal / noise).log10();
        assert!((19.8..=20.2).contains(&snr), "empirical SNR {snr}");
    }

    #[test]
    fn aggregate_cr_values() {
        let cr = aggregate_cr(40, 10, 10, 1024).unwrap();
        assert!((cr - 10240.0 / 130.0).abs() < 1e-12);
        assert_eq!(aggregate_cr(1024, 1024, 10, 1024).unwrap(), 1.0);
        assert_eq!(aggregate_cr(1024, 1024, 1, 1024).unwrap(), 1.0);
        assert!(aggregate_cr(0, 1, 1, 1).is_err());
    }
}
