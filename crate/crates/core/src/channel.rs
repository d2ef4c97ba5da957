//! Sparse mmWave channel realizations, array responses, and angle dictionaries.

use num_complex::Complex;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::cn_sample;
use crate::{C64, CMat, CVec};

/// Antenna counts at both ends plus the number of RF chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrayGeometry {
    pub num_rx_antennas: usize,
    pub num_tx_antennas: usize,
    pub num_rf_chains: usize,
}

impl ArrayGeometry {
    /// The hybrid factorization needs at least two RF chains, and the RF
    /// chain count cannot exceed either array size.
    pub fn new(num_rx_antennas: usize, num_tx_antennas: usize, num_rf_chains: usize) -> Result<Self> {
        if num_rf_chains < 2 {
            return Err(Error::Config(format!(
                "num_rf_chains must be >= 2, got {num_rf_chains}"
            )));
        }
        if num_rf_chains > num_rx_antennas.min(num_tx_antennas) {
            return Err(Error::Config(format!(
                "num_rf_chains {num_rf_chains} exceeds min(N_r={num_rx_antennas}, N_t={num_tx_antennas})"
            )));
        }
        Ok(Self { num_rx_antennas, num_tx_antennas, num_rf_chains })
    }
}

/// A drawn sparse channel: path angles, scaled gains, and the assembled matrix.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    /// Normalized AoA spatial frequencies, each in [0,1).
    pub aoa_freqs: Vec<f64>,
    /// Normalized AoD spatial frequencies, each in [0,1).
    pub aod_freqs: Vec<f64>,
    /// Path gains h_l = sqrt(N_r N_t / L) * alpha_l.
    pub gains: Vec<C64>,
    /// Dense channel matrix, N_r x N_t.
    pub matrix: CMat,
    pub num_paths: usize,
}

impl ChannelRealization {
    /// Assembles a realization from explicit angles and gains.
    pub fn from_parts(
        num_rx_antennas: usize,
        num_tx_antennas: usize,
        aoa_freqs: Vec<f64>,
        aod_freqs: Vec<f64>,
        gains: Vec<C64>,
    ) -> Result<Self> {
        let l = gains.len();
        if aoa_freqs.len() != l || aod_freqs.len() != l {
            return Err(Error::Dimension("angle/gain length mismatch".into()));
        }
        if l > num_rx_antennas.min(num_tx_antennas) {
            return Err(Error::Config(format!(
                "num_paths {l} exceeds min antenna count"
            )));
        }
        for &f in aoa_freqs.iter().chain(aod_freqs.iter()) {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Domain(format!("frequency {f} outside [0,1)")));
            }
        }
        let a_r = response_matrix(num_rx_antennas, &aoa_freqs);
        let a_t = response_matrix(num_tx_antennas, &aod_freqs);
        let matrix = &a_r * CMat::from_diagonal(&CVec::from_vec(gains.clone())) * a_t.adjoint();
        Ok(Self { aoa_freqs, aod_freqs, gains, matrix, num_paths: l })
    }

    /// Receive response matrix A_r evaluated at the true AoAs.
    pub fn aoa_responses(&self) -> CMat {
        response_matrix(self.matrix.nrows(), &self.aoa_freqs)
    }

    /// Transmit response matrix A_t evaluated at the true AoDs.
    pub fn aod_responses(&self) -> CMat {
        response_matrix(self.matrix.ncols(), &self.aod_freqs)
    }
}

/// How path angles are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleMode {
    /// Angles drawn uniformly over grid points i/G, without replacement.
    OnGrid { grid_rx: usize, grid_tx: usize },
    /// Angles drawn uniformly over [0,1).
    Continuous,
}

/// Quantized angle dictionary: array responses at i/G for i = 0..G-1.
#[derive(Debug, Clone)]
pub struct AngleDictionary {
    pub response_matrix: CMat,
    pub grid_freqs: Vec<f64>,
    pub oversampling: f64,
    pub grid_size: usize,
}

/// Unit-norm array response a(f) with entries exp(j 2 pi k f)/sqrt(n).
pub fn array_response(num_antennas: usize, freq: f64) -> Result<CVec> {
    if !(0.0..1.0).contains(&freq) {
        return Err(Error::Domain(format!("freq {freq} outside [0,1)")));
    }
    Ok(array_response_unchecked(num_antennas, freq))
}

pub(crate) fn array_response_unchecked(num_antennas: usize, freq: f64) -> CVec {
    let scale = 1.0 / (num_antennas as f64).sqrt();
    CVec::from_fn(num_antennas, |k, _| {
        Complex::from_polar(scale, 2.0 * std::f64::consts::PI * k as f64 * freq)
    })
}

/// Stacks array responses at the given frequencies as columns.
pub fn response_matrix(num_antennas: usize, freqs: &[f64]) -> CMat {
    let mut m = CMat::zeros(num_antennas, freqs.len());
    for (i, &f) in freqs.iter().enumerate() {
        m.set_column(i, &array_response_unchecked(num_antennas, f.rem_euclid(1.0)));
    }
    m
}

/// Builds the grid dictionary of size ceil(oversampling * num_antennas).
pub fn build_dictionary(num_antennas: usize, oversampling: f64) -> Result<AngleDictionary> {
    if oversampling < 1.0 {
        return Err(Error::Config(format!("oversampling {oversampling} < 1")));
    }
    let grid_size = (oversampling * num_antennas as f64).ceil() as usize;
    let grid_freqs: Vec<f64> = (0..grid_size).map(|i| i as f64 / grid_size as f64).collect();
    let response_matrix = response_matrix(num_antennas, &grid_freqs);
    Ok(AngleDictionary { response_matrix, grid_freqs, oversampling, grid_size })
}

/// Draws a sparse channel: angles per `angle_mode`, gains CN(0, sigma_l^2)
/// scaled by sqrt(N_r N_t / L).
pub fn sample_channel<R: Rng + ?Sized>(
    geometry: &ArrayGeometry,
    num_paths: usize,
    angle_mode: AngleMode,
    gain_variances: &[f64],
    rng: &mut R,
) -> Result<ChannelRealization> {
    let n_r = geometry.num_rx_antennas;
    let n_t = geometry.num_tx_antennas;
    if num_paths > n_r.min(n_t) {
        return Err(Error::Config(format!(
            "num_paths {num_paths} exceeds min(N_r, N_t)"
        )));
    }
    if gain_variances.len() != num_paths {
        return Err(Error::Dimension("gain_variances length != num_paths".into()));
    }
    if gain_variances.iter().any(|&v| v <= 0.0) {
        return Err(Error::Domain("gain variances must be positive".into()));
    }

    let (aoa_freqs, aod_freqs) = match angle_mode {
        AngleMode::OnGrid { grid_rx, grid_tx } => {
            if num_paths > grid_rx || num_paths > grid_tx {
                return Err(Error::InfeasibleDraw(format!(
                    "cannot draw {num_paths} distinct grid angles from grids ({grid_rx}, {grid_tx})"
                )));
            }
            (
                draw_grid_freqs(grid_rx, num_paths, rng),
                draw_grid_freqs(grid_tx, num_paths, rng),
            )
        }
        AngleMode::Continuous => (
            (0..num_paths).map(|_| rng.gen::<f64>()).collect(),
            (0..num_paths).map(|_| rng.gen::<f64>()).collect(),
        ),
    };

    let scale = ((n_r * n_t) as f64 / num_paths as f64).sqrt();
    let gains: Vec<C64> = gain_variances
        .iter()
        .map(|&var| cn_sample(rng, var.sqrt()) * scale)
        .collect();

    ChannelRealization::from_parts(n_r, n_t, aoa_freqs, aod_freqs, gains)
}

fn draw_grid_freqs<R: Rng + ?Sized>(grid: usize, count: usize, rng: &mut R) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..grid).collect();
    idx.shuffle(rng);
    idx.truncate(count);
    idx.into_iter().map(|i| i as f64 / grid as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn response_zero_freq_is_all_ones() {
        let a = array_response(4, 0.0).unwrap();
        for k in 0..4 {
            assert_abs_diff_eq!(a[k].re, 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(a[k].im, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn response_half_freq_alternates() {
        let a = array_response(2, 0.5).unwrap();
        let s = 1.0 / 2.0_f64.sqrt();
        assert_abs_diff_eq!(a[0].re, s, epsilon = 1e-15);
        assert_abs_diff_eq!(a[1].re, -s, epsilon = 1e-12);
    }

    #[test]
    fn grid_separated_responses_are_orthogonal() {
        let a = array_response(20, 0.35).unwrap();
        let b = array_response(20, 0.35 + 1.0 / 20.0).unwrap();
        let self_ip = a.dotc(&a).norm();
        let cross_ip = a.dotc(&b).norm();
        assert_abs_diff_eq!(self_ip, 1.0, epsilon = 1e-12);
        assert!(cross_ip < 1e-12);
    }

    #[test]
    fn response_rejects_out_of_range_freq() {
        assert!(array_response(4, 1.0).is_err());
        assert!(array_response(4, -0.1).is_err());
    }

    #[test]
    fn response_is_one_periodic_after_wrapping() {
        let f = 0.37;
        let a = response_matrix(8, &[f]);
        let b = response_matrix(8, &[f + 1.0]);
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn dictionary_s1_is_scaled_dft() {
        let d = build_dictionary(20, 1.0).unwrap();
        assert_eq!(d.grid_size, 20);
        let gram = d.response_matrix.adjoint() * &d.response_matrix;
        assert!((gram - CMat::identity(20, 20)).norm() < 1e-10);
    }

    #[test]
    fn dictionary_oversampled_row_gram() {
        let d = build_dictionary(64, 2.0).unwrap();
        assert_eq!(d.grid_size, 128);
        let row_gram = &d.response_matrix * d.response_matrix.adjoint();
        let expect = CMat::identity(64, 64) * C64::new(2.0, 0.0);
        assert!((row_gram - expect).norm() < 1e-9);
    }

    #[test]
    fn dictionary_ceiling_arithmetic() {
        let d = build_dictionary(3, 1.5).unwrap();
        assert_eq!(d.grid_size, 5);
    }

    #[test]
    fn dictionary_columns_unit_norm() {
        let d = build_dictionary(7, 1.3).unwrap();
        for j in 0..d.grid_size {
            assert_abs_diff_eq!(d.response_matrix.column(j).norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn on_grid_channel_has_full_path_rank() {
        let geom = ArrayGeometry::new(20, 64, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let ch = sample_channel(
            &geom,
            4,
            AngleMode::OnGrid { grid_rx: 20, grid_tx: 64 },
            &[1.0; 4],
            &mut rng,
        )
        .unwrap();
        let svd = ch.matrix.clone().svd(false, false);
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > 1e-9 * svd.singular_values[0])
            .count();
        assert_eq!(rank, 4);
    }

    #[test]
    fn single_path_zero_angle_is_rank_one_outer_product() {
        let ch = ChannelRealization::from_parts(4, 4, vec![0.0], vec![0.0], vec![C64::new(1.0, 0.0)])
            .unwrap();
        // a_r(0) a_t(0)^H with h=1: constant matrix 1/sqrt(N_r N_t).
        for v in ch.matrix.iter() {
            assert_abs_diff_eq!(v.re, 0.25, epsilon = 1e-14);
            assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn reconstruction_identity_holds() {
        let geom = ArrayGeometry::new(16, 24, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let ch =
                sample_channel(&geom, 3, AngleMode::Continuous, &[1.0, 0.5, 2.0], &mut rng).unwrap();
            let a_r = ch.aoa_responses();
            let a_t = ch.aod_responses();
            let recon =
                &a_r * CMat::from_diagonal(&CVec::from_vec(ch.gains.clone())) * a_t.adjoint();
            assert!((&recon - &ch.matrix).norm() <= 1e-12 * ch.matrix.norm().max(1.0));
        }
    }

    #[test]
    fn frobenius_norm_statistics() {
        let geom = ArrayGeometry::new(8, 12, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trials = 20_000;
        let mean: f64 = (0..trials)
            .map(|_| {
                let ch = sample_channel(&geom, 3, AngleMode::Continuous, &[1.0; 3], &mut rng)
                    .unwrap();
                ch.matrix.norm().powi(2)
            })
            .sum::<f64>()
            / trials as f64;
        // E||H||_F^2 = N_r N_t when all path variances are one.
        let expect = (8 * 12) as f64;
        assert!((mean - expect).abs() / expect < 0.02, "mean {mean} vs {expect}");
    }

    #[test]
    fn on_grid_draw_infeasible_when_l_exceeds_grid() {
        let geom = ArrayGeometry::new(8, 8, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = sample_channel(
            &geom,
            5,
            AngleMode::OnGrid { grid_rx: 4, grid_tx: 8 },
            &[1.0; 5],
            &mut rng,
        );
        assert!(matches!(r, Err(Error::InfeasibleDraw(_))));
    }

    #[test]
    fn on_grid_angles_are_distinct() {
        let geom = ArrayGeometry::new(10, 10, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let ch = sample_channel(
                &geom,
                4,
                AngleMode::OnGrid { grid_rx: 10, grid_tx: 10 },
                &[1.0; 4],
                &mut rng,
            )
            .unwrap();
            let mut fr = ch.aoa_freqs.clone();
            fr.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!(fr.windows(2).all(|w| w[1] > w[0]));
        }
    }
}
