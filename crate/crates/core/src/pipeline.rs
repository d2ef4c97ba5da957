//! End-to-end channel estimators: the two-stage sequential AoA/AoD method,
//! the one-stage vectorized OMP baseline, and the genie-aided gain estimator.

use rand::Rng;

use crate::channel::{AngleDictionary, ArrayGeometry, ChannelRealization};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_condition, kron, ridge_solve, vec_cols};
use crate::recovery::{flat_to_pair, select_columns, somp, MeasurementProblem};
use crate::sounding::{
    observe_with, one_stage_sounders, stage1_rsb, stage1_tsb, stage2_rsb, stage2_tsb, OneStageMode,
    SounderSet, StagePlan,
};
use crate::{C64, CMat};

/// Dictionary-index support, selected responses, raw observations, and the
/// sounders used to collect them, for one estimation stage.
#[derive(Debug, Clone)]
pub struct StageOutput {
    pub support: Vec<usize>,
    pub freqs: Vec<f64>,
    /// Selected dictionary columns (N x L).
    pub responses: CMat,
    pub observations: CMat,
    pub sounders: SounderSet,
    pub residual: f64,
    pub multiply_count: u64,
}

/// Full two-stage estimate: supports, responses, path-coupling matrix, the
/// assembled channel, and the recovered (AoA, AoD, gain) pairing.
#[derive(Debug, Clone)]
pub struct TwoStageResult {
    pub est_aoa_support: Vec<usize>,
    pub est_aod_support: Vec<usize>,
    pub est_aoa_freqs: Vec<f64>,
    pub est_aod_freqs: Vec<f64>,
    pub est_aoa_responses: CMat,
    pub est_aod_responses: CMat,
    pub r_hat: CMat,
    pub h_hat: CMat,
    pub pairing: Vec<PathPair>,
    pub stage1_residual: f64,
    pub stage2_residual: f64,
    pub ill_conditioned: bool,
    pub multiply_count: u64,
}

/// One recovered propagation path: row of R-hat (AoA slot), column (AoD
/// slot), and the coupling gain.
#[derive(Debug, Clone, Copy)]
pub struct PathPair {
    pub aoa_index: usize,
    pub aod_index: usize,
    pub gain: C64,
}

/// Stage I: sound with basis TSBs and the full DFT RSB, then run SOMP on
/// Y1 against the receive dictionary.
pub fn estimate_aoa<R: Rng + ?Sized>(
    channel: &ChannelRealization,
    geometry: &ArrayGeometry,
    dict_r: &AngleDictionary,
    bt1: usize,
    p1: f64,
    noise_std: f64,
    rng: &mut R,
) -> Result<StageOutput> {
    if (bt1 * geometry.num_rx_antennas) % geometry.num_rf_chains != 0 {
        return Err(Error::Config(format!(
            "stage-1 channel uses: {} not divisible by N = {}",
            bt1 * geometry.num_rx_antennas,
            geometry.num_rf_chains
        )));
    }
    let tsb = stage1_tsb(geometry, bt1, p1)?;
    let rsb = stage1_rsb(geometry);
    let sounders = SounderSet {
        rsb,
        tsb: tsb.matrix,
        power_per_beam: p1,
        analog_factors: Some(tsb.factors),
    };
    let y1 = observe_with(channel, &sounders.rsb, &sounders.tsb, noise_std, rng)?;

    let phi1 = sounders.rsb.adjoint() * &dict_r.response_matrix;
    let problem = MeasurementProblem::new(y1.clone(), phi1, channel.num_paths)?;
    let est = somp(&problem)?;
    let responses = select_columns(&dict_r.response_matrix, &est.support);
    let freqs = est.support.iter().map(|&i| dict_r.grid_freqs[i]).collect();
    Ok(StageOutput {
        support: est.support,
        freqs,
        responses,
        observations: y1,
        sounders,
        residual: *est.residual_norms.last().unwrap(),
        multiply_count: est.multiply_count,
    })
}

/// Stage II: point the RSB at the estimated AoA subspace, sound with basis
/// TSBs, and run SOMP on Y2^H against the truncated transmit dictionary.
pub fn estimate_aod<R: Rng + ?Sized>(
    channel: &ChannelRealization,
    geometry: &ArrayGeometry,
    dict_t: &AngleDictionary,
    est_aoa_responses: &CMat,
    bt2: usize,
    p2: f64,
    noise_std: f64,
    rng: &mut R,
) -> Result<StageOutput> {
    let rsb = stage2_rsb(est_aoa_responses)?;
    let tsb = stage2_tsb(geometry, bt2, p2)?;
    let sounders = SounderSet {
        rsb,
        tsb: tsb.matrix,
        power_per_beam: p2,
        analog_factors: Some(tsb.factors),
    };
    let y2 = observe_with(channel, &sounders.rsb, &sounders.tsb, noise_std, rng)?;

    let phi2 = sounders.tsb.adjoint() * &dict_t.response_matrix;
    let problem = MeasurementProblem::new(y2.adjoint(), phi2, channel.num_paths)?;
    let est = somp(&problem)?;
    let responses = select_columns(&dict_t.response_matrix, &est.support);
    let freqs = est.support.iter().map(|&i| dict_t.grid_freqs[i]).collect();
    Ok(StageOutput {
        support: est.support,
        freqs,
        responses,
        observations: y2,
        sounders,
        residual: *est.residual_norms.last().unwrap(),
        multiply_count: est.multiply_count,
    })
}

/// Joint least squares for the L x L path-coupling matrix from both stages'
/// observations, followed by channel assembly.
pub fn reconstruct_rhat(
    y1: &CMat,
    y2: &CMat,
    sounders1: &SounderSet,
    sounders2: &SounderSet,
    est_aoa_responses: &CMat,
    est_aod_responses: &CMat,
) -> Result<(CMat, CMat, bool)> {
    let l = est_aoa_responses.ncols();
    if est_aod_responses.ncols() != l {
        return Err(Error::Dimension("response blocks disagree on path count".into()));
    }
    if y1.len() + y2.len() < l * l {
        return Err(Error::Dimension(format!(
            "{} observations cannot determine {} coupling entries",
            y1.len() + y2.len(),
            l * l
        )));
    }

    let a1 = kron(
        &(est_aod_responses.adjoint() * &sounders1.tsb).transpose(),
        &(sounders1.rsb.adjoint() * est_aoa_responses),
    );
    let a2 = kron(
        &(est_aod_responses.adjoint() * &sounders2.tsb).transpose(),
        &(sounders2.rsb.adjoint() * est_aoa_responses),
    );
    let gram = a1.adjoint() * &a1 + a2.adjoint() * &a2;
    let rhs = a1.adjoint() * vec_cols(y1) + a2.adjoint() * vec_cols(y2);
    let rhs = CMat::from_column_slice(rhs.len(), 1, rhs.as_slice());

    let ill_conditioned = hermitian_condition(&gram) > 1e12;
    let solution = if ill_conditioned {
        ridge_solve(&gram, &rhs, 1e-10 * gram.norm())
    } else {
        match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => ridge_solve(&gram, &rhs, 1e-10 * gram.norm()),
        }
    };

    let r_hat = CMat::from_column_slice(l, l, solution.as_slice());
    let h_hat = est_aoa_responses * &r_hat * est_aod_responses.adjoint();
    Ok((r_hat, h_hat, ill_conditioned))
}

/// Greedy pairing of AoA rows with AoD columns by decreasing coupling
/// modulus, each row and column used once.
pub fn pair_paths(r_hat: &CMat) -> Vec<PathPair> {
    let l = r_hat.nrows().min(r_hat.ncols());
    let mut entries: Vec<(usize, usize, C64)> = Vec::new();
    for i in 0..r_hat.nrows() {
        for j in 0..r_hat.ncols() {
            entries.push((i, j, r_hat[(i, j)]));
        }
    }
    entries.sort_by(|a, b| b.2.norm().total_cmp(&a.2.norm()));
    let mut used_rows = vec![false; r_hat.nrows()];
    let mut used_cols = vec![false; r_hat.ncols()];
    let mut pairing = Vec::with_capacity(l);
    for (i, j, g) in entries {
        if used_rows[i] || used_cols[j] {
            continue;
        }
        used_rows[i] = true;
        used_cols[j] = true;
        pairing.push(PathPair { aoa_index: i, aod_index: j, gain: g });
        if pairing.len() == l {
            break;
        }
    }
    pairing
}

/// The full sequential estimator: AoA stage, AoD stage, coupling solve,
/// and path pairing.
pub fn two_stage_somp<R: Rng + ?Sized>(
    channel: &ChannelRealization,
    geometry: &ArrayGeometry,
    dict_r: &AngleDictionary,
    dict_t: &AngleDictionary,
    plan: &StagePlan,
    noise_std: f64,
    rng: &mut R,
) -> Result<TwoStageResult> {
    let s1 = estimate_aoa(channel, geometry, dict_r, plan.bt1, plan.p1, noise_std, rng)?;
    let s2 = estimate_aod(
        channel,
        geometry,
        dict_t,
        &s1.responses,
        plan.bt2,
        plan.p2,
        noise_std,
        rng,
    )?;
    let (r_hat, h_hat, ill_conditioned) = reconstruct_rhat(
        &s1.observations,
        &s2.observations,
        &s1.sounders,
        &s2.sounders,
        &s1.responses,
        &s2.responses,
    )?;
    let pairing = pair_paths(&r_hat);
    Ok(TwoStageResult {
        est_aoa_support: s1.support,
        est_aod_support: s2.support,
        est_aoa_freqs: s1.freqs,
        est_aod_freqs: s2.freqs,
        est_aoa_responses: s1.responses,
        est_aod_responses: s2.responses,
        r_hat,
        h_hat,
        pairing,
        stage1_residual: s1.residual,
        stage2_residual: s2.residual,
        ill_conditioned,
        multiply_count: s1.multiply_count + s2.multiply_count,
    })
}

/// One-stage baseline estimate over the joint angle grid.
#[derive(Debug, Clone)]
pub struct OneStageResult {
    /// (AoA grid index, AoD grid index) per recovered path.
    pub support_pairs: Vec<(usize, usize)>,
    pub est_aoa_freqs: Vec<f64>,
    pub est_aod_freqs: Vec<f64>,
    pub h_hat: CMat,
    pub multiply_count: u64,
}

/// Default guard on the Kronecker dictionary: entries of D plus workspace.
pub const ONE_STAGE_ENTRY_BUDGET: usize = 100_000_000;

/// Vectorized OMP over the Kronecker dictionary D = F^T conj(A_t) kron W^H A_r.
pub fn one_stage_omp<R: Rng + ?Sized>(
    channel: &ChannelRealization,
    geometry: &ArrayGeometry,
    dict_r: &AngleDictionary,
    dict_t: &AngleDictionary,
    br: usize,
    bt: usize,
    p: f64,
    mode: OneStageMode,
    noise_std: f64,
    rng: &mut R,
) -> Result<OneStageResult> {
    let g_r = dict_r.grid_size;
    let g_t = dict_t.grid_size;
    if g_r * g_t * br * bt > ONE_STAGE_ENTRY_BUDGET {
        return Err(Error::GuardExceeded(format!(
            "one-stage dictionary workspace {} exceeds budget {}",
            g_r * g_t * br * bt,
            ONE_STAGE_ENTRY_BUDGET
        )));
    }
    let sounders = one_stage_sounders(geometry, br, bt, p, mode, rng)?;
    let y = observe_with(channel, &sounders.rsb, &sounders.tsb, noise_std, rng)?;

    let left = sounders.tsb.transpose() * dict_t.response_matrix.conjugate();
    let right = sounders.rsb.adjoint() * &dict_r.response_matrix;
    let d = kron(&left, &right);
    let yv = vec_cols(&y);
    let problem = MeasurementProblem::new(
        CMat::from_column_slice(yv.len(), 1, yv.as_slice()),
        d,
        channel.num_paths,
    )?;
    let est = somp(&problem)?;

    let support_pairs: Vec<(usize, usize)> =
        est.support.iter().map(|&q| flat_to_pair(q, g_r)).collect();
    let est_aoa_freqs = support_pairs.iter().map(|&(i, _)| dict_r.grid_freqs[i]).collect();
    let est_aod_freqs = support_pairs.iter().map(|&(_, j)| dict_t.grid_freqs[j]).collect();

    // Gains from the final joint refit; assemble on the selected grid atoms.
    let mut h_hat = CMat::zeros(geometry.num_rx_antennas, geometry.num_tx_antennas);
    for (k, &(i, j)) in support_pairs.iter().enumerate() {
        let a_r = dict_r.response_matrix.column(i);
        let a_t = dict_t.response_matrix.column(j);
        let g = est.coefficients[(k, 0)];
        h_hat += (a_r * a_t.adjoint()).map(|z| z * g);
    }
    Ok(OneStageResult {
        support_pairs,
        est_aoa_freqs,
        est_aod_freqs,
        h_hat,
        multiply_count: est.multiply_count,
    })
}

/// Genie-aided gain refit: regress the stacked observations on the sounded
/// outer products of the true steering vectors. The full LxL cross-gain
/// matrix is estimated so the oracle solves the same least-squares problem
/// as the estimator's reconstruction, just with the true angles.
pub fn oracle_estimate(
    channel: &ChannelRealization,
    observations: &[(&CMat, &SounderSet)],
) -> Result<CMat> {
    let l = channel.num_paths;
    let a_r = channel.aoa_responses();
    let a_t = channel.aod_responses();
    let total: usize = observations.iter().map(|(y, _)| y.len()).sum();
    let mut x = CMat::zeros(total, l * l);
    let mut rhs = CMat::zeros(total, 1);
    let mut row = 0;
    for (y, sounders) in observations {
        let w_ar = sounders.rsb.adjoint() * &a_r;
        let at_f = a_t.adjoint() * &sounders.tsb;
        for lj in 0..l {
            for li in 0..l {
                let sig = w_ar.column(li) * at_f.row(lj);
                let sv = vec_cols(&sig);
                for (k, v) in sv.iter().enumerate() {
                    x[(row + k, lj * l + li)] = *v;
                }
            }
        }
        let yv = vec_cols(y);
        for (k, v) in yv.iter().enumerate() {
            rhs[(row + k, 0)] = *v;
        }
        row += y.len();
    }
    let gram = x.adjoint() * &x;
    let ch = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::DegenerateEstimate("oracle normal equations singular".into()))?;
    let gains = ch.solve(&(x.adjoint() * rhs));

    let mut h_hat = CMat::zeros(channel.matrix.nrows(), channel.matrix.ncols());
    for lj in 0..l {
        for li in 0..l {
            h_hat +=
                (a_r.column(li) * a_t.column(lj).adjoint()).map(|z| z * gains[(lj * l + li, 0)]);
        }
    }
    Ok(h_hat)
}

/// Convenience: the two-stage sounding pattern for a plan, without running
/// any estimator. Used by the oracle to share observations.
pub fn plan_sounders(
    geometry: &ArrayGeometry,
    plan: &StagePlan,
    est_aoa_responses: &CMat,
) -> Result<(SounderSet, SounderSet)> {
    let tsb1 = stage1_tsb(geometry, plan.bt1, plan.p1)?;
    let s1 = SounderSet {
        rsb: stage1_rsb(geometry),
        tsb: tsb1.matrix,
        power_per_beam: plan.p1,
        analog_factors: Some(tsb1.factors),
    };
    let tsb2 = stage2_tsb(geometry, plan.bt2, plan.p2)?;
    let s2 = SounderSet {
        rsb: stage2_rsb(est_aoa_responses)?,
        tsb: tsb2.matrix,
        power_per_beam: plan.p2,
        analog_factors: Some(tsb2.factors),
    };
    Ok((s1, s2))
}
