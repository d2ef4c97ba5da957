//! Transmit/receive sounding beam construction with hybrid analog-digital
//! factorization certificates and power scaling.

use num_complex::Complex;
use rand::Rng;

use crate::channel::{ArrayGeometry, ChannelRealization};
use crate::error::{Error, Result};
use crate::linalg::{cn_matrix, qr_thin_positive};
use crate::{CMat, CVec};

/// Certificate that a beam column is realizable on the hybrid array:
/// `analog * digital` reproduces the column and every analog entry has
/// constant modulus 1/sqrt(N_t).
#[derive(Debug, Clone)]
pub struct HybridFactor {
    pub analog: CMat,
    pub digital: CVec,
}

/// A transmit-beam block: columns with per-beam power and their certificates.
#[derive(Debug, Clone)]
pub struct TsbSet {
    pub matrix: CMat,
    pub power_per_beam: f64,
    pub factors: Vec<HybridFactor>,
}

/// A full RSB/TSB pair used to collect observations.
#[derive(Debug, Clone)]
pub struct SounderSet {
    pub rsb: CMat,
    pub tsb: CMat,
    pub power_per_beam: f64,
    pub analog_factors: Option<Vec<HybridFactor>>,
}

/// Beam counts, powers, and channel-use accounting for the two stages.
#[derive(Debug, Clone, Copy)]
pub struct StagePlan {
    pub bt1: usize,
    pub bt2: usize,
    pub br1: usize,
    pub br2: usize,
    pub p1: f64,
    pub p2: f64,
    pub channel_uses: usize,
}

impl StagePlan {
    /// Builds the plan with B_{r,1} = N_r, B_{r,2} = L and
    /// K = B_{t,1} N_r / N + B_{t,2}.
    pub fn new(
        geometry: &ArrayGeometry,
        num_paths: usize,
        bt1: usize,
        bt2: usize,
        p1: f64,
        p2: f64,
    ) -> Result<Self> {
        let n_r = geometry.num_rx_antennas;
        let n = geometry.num_rf_chains;
        if (bt1 * n_r) % n != 0 {
            return Err(Error::Config(format!(
                "B_t1*N_r = {} not divisible by N = {n}",
                bt1 * n_r
            )));
        }
        if p1 <= 0.0 || p2 <= 0.0 {
            return Err(Error::Config("stage powers must be positive".into()));
        }
        Ok(Self {
            bt1,
            bt2,
            br1: n_r,
            br2: num_paths,
            p1,
            p2,
            channel_uses: bt1 * n_r / n + bt2,
        })
    }

    /// Stage-1 transmit energy E_1 = p_1 B_{t,1} N_r / N.
    pub fn energy_stage1(&self, geometry: &ArrayGeometry) -> f64 {
        self.p1 * self.bt1 as f64 * geometry.num_rx_antennas as f64
            / geometry.num_rf_chains as f64
    }

    /// Stage-2 transmit energy E_2 = p_2 B_{t,2}.
    pub fn energy_stage2(&self) -> f64 {
        self.p2 * self.bt2 as f64
    }
}

/// How the one-stage baseline draws its sounders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OneStageMode {
    RandomPhase,
    PartialDft,
}

fn basis_beam_factor(n_t: usize, n: usize, index: usize, power: f64) -> HybridFactor {
    // e_j = F_A,j f_D,j with F_A,j = (1/sqrt(N_t)) [1, 1~(j), 1, ..., 1] and
    // f_D,j = (sqrt(N_t)/2) [1, -1, 0, ..., 0]; the digital layer carries the
    // sqrt(power) scaling so analog * digital equals the actual column.
    let scale = 1.0 / (n_t as f64).sqrt();
    let analog = CMat::from_fn(n_t, n, |row, col| {
        if col == 1 && row == index {
            Complex::new(-scale, 0.0)
        } else {
            Complex::new(scale, 0.0)
        }
    });
    let mut digital = CVec::zeros(n);
    let d = power.sqrt() * (n_t as f64).sqrt() / 2.0;
    digital[0] = Complex::new(d, 0.0);
    digital[1] = Complex::new(-d, 0.0);
    HybridFactor { analog, digital }
}

fn basis_tsb(geometry: &ArrayGeometry, bt: usize, power: f64) -> Result<TsbSet> {
    let n_t = geometry.num_tx_antennas;
    if bt == 0 || bt > n_t {
        return Err(Error::Dimension(format!("B_t = {bt} outside 1..=N_t = {n_t}")));
    }
    if power <= 0.0 {
        return Err(Error::Config("beam power must be positive".into()));
    }
    let sqrt_p = power.sqrt();
    let mut matrix = CMat::zeros(n_t, bt);
    let mut factors = Vec::with_capacity(bt);
    for j in 0..bt {
        matrix[(j, j)] = Complex::new(sqrt_p, 0.0);
        factors.push(basis_beam_factor(n_t, geometry.num_rf_chains, j, power));
    }
    Ok(TsbSet { matrix, power_per_beam: power, factors })
}

/// Stage-1 TSB: sqrt(p1) [e_1, ..., e_{B_t1}] with factor certificates.
pub fn stage1_tsb(geometry: &ArrayGeometry, bt1: usize, p1: f64) -> Result<TsbSet> {
    basis_tsb(geometry, bt1, p1)
}

/// Stage-2 TSB: sqrt(p2) [e_1, ..., e_{B_t2}], same construction as stage 1.
pub fn stage2_tsb(geometry: &ArrayGeometry, bt2: usize, p2: f64) -> Result<TsbSet> {
    basis_tsb(geometry, bt2, p2)
}

/// N_r x N_r DFT matrix: [S]_{m,n} = exp(-j 2 pi m n / N_r)/sqrt(N_r).
pub fn dft_matrix(n: usize) -> CMat {
    let scale = 1.0 / (n as f64).sqrt();
    CMat::from_fn(n, n, |m, k| {
        Complex::from_polar(scale, -2.0 * std::f64::consts::PI * (m * k) as f64 / n as f64)
    })
}

/// Stage-1 RSB: the full DFT matrix, unitary with constant-modulus entries.
pub fn stage1_rsb(geometry: &ArrayGeometry) -> CMat {
    dft_matrix(geometry.num_rx_antennas)
}

/// Stage-2 RSB: orthonormal basis of the estimated AoA responses via QR with
/// nonnegative real R diagonal.
pub fn stage2_rsb(est_aoa_responses: &CMat) -> Result<CMat> {
    let l = est_aoa_responses.ncols();
    let (q, r) = qr_thin_positive(est_aoa_responses);
    let diag_max = (0..l).map(|i| r[(i, i)].norm()).fold(0.0_f64, f64::max);
    if l == 0 || diag_max == 0.0 {
        return Err(Error::DegenerateEstimate("empty AoA response matrix".into()));
    }
    for i in 0..l {
        if r[(i, i)].norm() < 1e-10 * diag_max {
            return Err(Error::DegenerateEstimate(format!(
                "AoA response matrix is rank deficient at column {i}"
            )));
        }
    }
    Ok(q)
}

/// One-stage baseline sounders. RSB columns orthonormal in partial-DFT mode;
/// random-phase mode draws constant-modulus entries with uniform phases and
/// scales TSB columns to meet the power constraint exactly.
pub fn one_stage_sounders<R: Rng + ?Sized>(
    geometry: &ArrayGeometry,
    br: usize,
    bt: usize,
    p: f64,
    mode: OneStageMode,
    rng: &mut R,
) -> Result<SounderSet> {
    let n_r = geometry.num_rx_antennas;
    let n_t = geometry.num_tx_antennas;
    let n = geometry.num_rf_chains;
    if br % n != 0 {
        return Err(Error::Config(format!("B_r = {br} not a multiple of N = {n}")));
    }
    if br == 0 || br > n_r {
        return Err(Error::Dimension(format!("B_r = {br} outside 1..=N_r = {n_r}")));
    }
    if bt == 0 {
        return Err(Error::Dimension("B_t must be positive".into()));
    }

    let rsb = match mode {
        OneStageMode::PartialDft => dft_matrix(n_r).columns(0, br).into_owned(),
        OneStageMode::RandomPhase => {
            let scale = 1.0 / (n_r as f64).sqrt();
            CMat::from_fn(n_r, br, |_, _| {
                Complex::from_polar(scale, rng.gen::<f64>() * std::f64::consts::TAU)
            })
        }
    };

    let sqrt_p = p.sqrt();
    let tsb = match mode {
        OneStageMode::PartialDft => {
            if bt > n_t {
                return Err(Error::Dimension(format!("B_t = {bt} exceeds N_t = {n_t}")));
            }
            dft_matrix(n_t)
                .columns(0, bt)
                .map(|z| z * Complex::new(sqrt_p, 0.0))
        }
        OneStageMode::RandomPhase => {
            let col_scale = sqrt_p / (n_t as f64).sqrt();
            CMat::from_fn(n_t, bt, |_, _| {
                Complex::from_polar(col_scale, rng.gen::<f64>() * std::f64::consts::TAU)
            })
        }
    };

    // Pure analog beams: the unit-modulus layer is the beam itself, with a
    // scalar digital weight carrying the power.
    let factors = (0..bt)
        .map(|j| {
            let unit = tsb.column(j).map(|z| z / sqrt_p);
            let mut analog = CMat::from_fn(n_t, n, |row, _| unit[row]);
            let ones_scale = 1.0 / (n_t as f64).sqrt();
            for col in 1..n {
                for row in 0..n_t {
                    analog[(row, col)] = Complex::new(ones_scale, 0.0);
                }
            }
            let mut digital = CVec::zeros(n);
            digital[0] = Complex::new(sqrt_p, 0.0);
            HybridFactor { analog, digital }
        })
        .collect();

    Ok(SounderSet { rsb, tsb, power_per_beam: p, analog_factors: Some(factors) })
}

/// Collects Y = W^H H F + W^H N with N iid CN(0, noise_std^2).
pub fn observe<R: Rng + ?Sized>(
    channel: &ChannelRealization,
    sounders: &SounderSet,
    noise_std: f64,
    rng: &mut R,
) -> Result<CMat> {
    observe_with(channel, &sounders.rsb, &sounders.tsb, noise_std, rng)
}

/// `observe` with the RSB/TSB matrices passed directly.
pub fn observe_with<R: Rng + ?Sized>(
    channel: &ChannelRealization,
    rsb: &CMat,
    tsb: &CMat,
    noise_std: f64,
    rng: &mut R,
) -> Result<CMat> {
    let h = &channel.matrix;
    if rsb.nrows() != h.nrows() || tsb.nrows() != h.ncols() {
        return Err(Error::Dimension(format!(
            "sounders ({}x{}, {}x{}) do not conform to channel {}x{}",
            rsb.nrows(),
            rsb.ncols(),
            tsb.nrows(),
            tsb.ncols(),
            h.nrows(),
            h.ncols()
        )));
    }
    let mut y = rsb.adjoint() * h * tsb;
    if noise_std > 0.0 {
        let noise = cn_matrix(h.nrows(), tsb.ncols(), noise_std, rng);
        y += rsb.adjoint() * noise;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_channel, AngleMode, ChannelRealization};
    use crate::C64;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn geom() -> ArrayGeometry {
        ArrayGeometry::new(20, 64, 4).unwrap()
    }

    #[test]
    fn stage1_tsb_single_beam_matches_construction() {
        let t = stage1_tsb(&geom(), 1, 10.0).unwrap();
        assert_eq!(t.matrix.ncols(), 1);
        assert_abs_diff_eq!(t.matrix[(0, 0)].re, 10.0_f64.sqrt(), epsilon = 1e-14);
        let f = &t.factors[0];
        assert_abs_diff_eq!(f.analog[(0, 0)].norm(), 1.0 / 8.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.analog[(0, 1)].re, -1.0 / 8.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.digital[0].re, 10.0_f64.sqrt() * 4.0, epsilon = 1e-12);
    }

    #[test]
    fn tsb_factor_reproduces_column_exactly() {
        for bt in [1usize, 3, 7] {
            let t = stage1_tsb(&geom(), bt, 2.5).unwrap();
            for (j, f) in t.factors.iter().enumerate() {
                let col = &f.analog * &f.digital;
                let diff = (col - t.matrix.column(j)).norm();
                assert!(diff < 1e-12, "column {j} reconstruction error {diff}");
                for z in f.analog.iter() {
                    assert_abs_diff_eq!(z.norm(), 1.0 / (64.0_f64).sqrt(), epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn stage1_tsb_orthonormal_columns() {
        let g = ArrayGeometry::new(4, 4, 2).unwrap();
        let t = stage1_tsb(&g, 2, 1.0).unwrap();
        let gram = t.matrix.adjoint() * &t.matrix;
        assert!((gram - CMat::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn stage1_tsb_rejects_too_many_beams() {
        assert!(stage1_tsb(&geom(), 65, 1.0).is_err());
    }

    #[test]
    fn stage1_rsb_is_unitary_constant_modulus() {
        let w = stage1_rsb(&geom());
        let gram = w.adjoint() * &w;
        assert!((gram - CMat::identity(20, 20)).norm() < 1e-12);
        for z in w.iter() {
            assert_abs_diff_eq!(z.norm(), 1.0 / 20.0_f64.sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn two_point_dft() {
        let w = dft_matrix(2);
        let s = 1.0 / 2.0_f64.sqrt();
        assert_abs_diff_eq!(w[(0, 0)].re, s, epsilon = 1e-14);
        assert_abs_diff_eq!(w[(1, 1)].re, -s, epsilon = 1e-12);
    }

    #[test]
    fn stage2_rsb_spans_input_range() {
        let d = crate::channel::build_dictionary(20, 1.0).unwrap();
        let input = CMat::from_columns(&[d.response_matrix.column(3), d.response_matrix.column(9)]);
        let w = stage2_rsb(&input).unwrap();
        let gram = w.adjoint() * &w;
        assert!((gram - CMat::identity(2, 2)).norm() < 1e-12);
        let proj_w = &w * w.adjoint();
        let proj_a = &input * input.adjoint();
        assert!((proj_w - proj_a).norm() < 1e-10);
    }

    #[test]
    fn stage2_rsb_single_column_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = cn_matrix(20, 1, 1.0, &mut rng);
        let w = stage2_rsb(&v).unwrap();
        let expected = &v / Complex::new(v.norm(), 0.0);
        // QR with positive diagonal makes the phases match too.
        assert!((w - expected).norm() < 1e-10);
    }

    #[test]
    fn stage2_rsb_rejects_rank_deficiency() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = cn_matrix(20, 1, 1.0, &mut rng);
        let dup = CMat::from_columns(&[v.column(0), v.column(0)]);
        assert!(matches!(stage2_rsb(&dup), Err(Error::DegenerateEstimate(_))));
    }

    #[test]
    fn one_stage_partial_dft_full_width_matches_stage1() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = one_stage_sounders(&geom(), 20, 5, 1.0, OneStageMode::PartialDft, &mut rng).unwrap();
        assert!((s.rsb.clone() - stage1_rsb(&geom())).norm() < 1e-12);
    }

    #[test]
    fn one_stage_random_phase_moduli_and_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s =
            one_stage_sounders(&geom(), 8, 6, 3.0, OneStageMode::RandomPhase, &mut rng).unwrap();
        for z in s.rsb.iter() {
            assert_abs_diff_eq!(z.norm(), 1.0 / 20.0_f64.sqrt(), epsilon = 1e-12);
        }
        for j in 0..6 {
            assert_abs_diff_eq!(s.tsb.column(j).norm_squared(), 3.0, epsilon = 1e-12);
        }
        for f in s.analog_factors.as_ref().unwrap() {
            for z in f.analog.iter() {
                assert_abs_diff_eq!(z.norm(), 1.0 / 8.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn one_stage_rejects_br_not_multiple_of_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r = one_stage_sounders(&geom(), 6, 4, 1.0, OneStageMode::RandomPhase, &mut rng);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn observe_noiseless_is_exact() {
        let g = geom();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ch = sample_channel(&g, 2, AngleMode::Continuous, &[1.0; 2], &mut rng).unwrap();
        let tsb = stage1_tsb(&g, 3, 2.0).unwrap();
        let rsb = stage1_rsb(&g);
        let y = observe_with(&ch, &rsb, &tsb.matrix, 0.0, &mut rng).unwrap();
        let expect = rsb.adjoint() * &ch.matrix * &tsb.matrix;
        assert!((y - expect).norm() < 1e-12);
    }

    #[test]
    fn observe_whitened_noise_variance() {
        let g = geom();
        let ch = ChannelRealization::from_parts(
            20,
            64,
            vec![0.1],
            vec![0.2],
            vec![C64::new(0.0, 0.0)],
        )
        .unwrap();
        let rsb = stage1_rsb(&g);
        let tsb = CMat::zeros(64, 50);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sigma = 0.7;
        let mut sum = 0.0;
        let mut count = 0usize;
        for _ in 0..120 {
            let y = observe_with(&ch, &rsb, &tsb, sigma, &mut rng).unwrap();
            sum += y.iter().map(|z| z.norm_sqr()).sum::<f64>();
            count += y.len();
        }
        let var = sum / count as f64;
        assert!(
            (var - sigma * sigma).abs() / (sigma * sigma) < 0.02,
            "empirical variance {var} vs {}",
            sigma * sigma
        );
    }

    #[test]
    fn single_path_row_energy_matches_closed_form() {
        // Single on-grid path at AoA index r: row r of Y carries all the
        // energy, with norm sqrt(p1 B_t1 / N_t) |h_1|.
        let g = geom();
        let h1 = C64::new(1.3, -0.4);
        let aoa_idx = 7usize;
        let ch = ChannelRealization::from_parts(
            20,
            64,
            vec![aoa_idx as f64 / 20.0],
            vec![5.0 / 64.0],
            vec![h1],
        )
        .unwrap();
        let p1 = 2.0;
        let bt1 = 4usize;
        let tsb = stage1_tsb(&g, bt1, p1).unwrap();
        let rsb = stage1_rsb(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = observe_with(&ch, &rsb, &tsb.matrix, 0.0, &mut rng).unwrap();
        let expect = (p1 * bt1 as f64 / 64.0).sqrt() * h1.norm();
        // S^H a_r(r/N_r) = e_{(N_r - r) mod N_r}: one row carries everything.
        let hot = (20 - aoa_idx) % 20;
        for row in 0..20 {
            let norm = y.row(row).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if row == hot {
                assert_abs_diff_eq!(norm, expect, epsilon = 1e-10);
            } else {
                assert!(norm < 1e-10, "row {row} leak {norm}");
            }
        }
    }

    #[test]
    fn stage_plan_accounting() {
        let g = geom();
        let plan = StagePlan::new(&g, 4, 1, 45, 2.0, 0.5).unwrap();
        assert_eq!(plan.channel_uses, 50);
        assert_eq!(plan.br2, 4);
        assert_abs_diff_eq!(plan.energy_stage1(&g), 2.0 * 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(plan.energy_stage2(), 0.5 * 45.0, epsilon = 1e-12);
        let odd = ArrayGeometry::new(10, 64, 4).unwrap();
        assert!(StagePlan::new(&odd, 4, 1, 10, 1.0, 1.0).is_err()); // 10 % 4 != 0
    }
}
