//! Monte Carlo experiment driver: configuration, seeded trial execution,
//! angle-error metrics, complexity counters, and CSV emission.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis::{allocate, AllocationInputs, TracyWidomTable};
use crate::channel::{
    build_dictionary, response_matrix, sample_channel, AngleDictionary, AngleMode,
    ArrayGeometry, ChannelRealization,
};
use crate::error::{Error, Result};
use crate::pipeline::{
    one_stage_omp, oracle_estimate, pair_paths, plan_sounders, reconstruct_rhat, two_stage_somp,
};
use crate::sounding::{
    observe_with, stage1_rsb, stage1_tsb, stage2_rsb, stage2_tsb, OneStageMode, SounderSet,
    StagePlan,
};
use crate::superres::{lambda_default, superres_aoa, superres_aod, AdmmOptions};
use crate::CMat;

/// Angle error below which a trial counts as a successful recovery.
pub const SRP_EPS_TOL: f64 = 1e-3;

/// Permutation matching is exhaustive; cap the factorial blow-up.
pub const MATCHING_MAX_PATHS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    TwoStageSomp,
    OneStageOmp,
    TwoStageSuperres,
    OneStageAtomicStub,
    Oracle,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::TwoStageSomp,
        EstimatorKind::OneStageOmp,
        EstimatorKind::TwoStageSuperres,
        EstimatorKind::OneStageAtomicStub,
        EstimatorKind::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::TwoStageSomp => "two_stage_somp",
            EstimatorKind::OneStageOmp => "one_stage_omp",
            EstimatorKind::TwoStageSuperres => "two_stage_superres",
            EstimatorKind::OneStageAtomicStub => "one_stage_atomic_stub",
            EstimatorKind::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Parse(format!("unknown estimator '{s}'")))
    }

    /// Stable noise-stream tag so adding or reordering estimators in a
    /// config never perturbs another estimator's noise draws.
    fn stream(self) -> u64 {
        match self {
            EstimatorKind::TwoStageSomp => 1,
            EstimatorKind::OneStageOmp => 2,
            EstimatorKind::TwoStageSuperres => 3,
            EstimatorKind::OneStageAtomicStub => 4,
            EstimatorKind::Oracle => 5,
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How per-stage beam powers are chosen at each SNR point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AllocationMode {
    /// Bound-inverting minimum-energy split, recomputed per SNR.
    PaperAllocation { eta1: f64, eta2: f64 },
    /// One power for every channel use: p = total_energy / K.
    EqualPower { total_energy: f64 },
    /// Fixed per-beam powers across the sweep.
    Explicit { p1: f64, p2: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub num_rx_antennas: usize,
    pub num_tx_antennas: usize,
    pub num_rf_chains: usize,
    pub num_paths: usize,
    pub oversampling: f64,
    /// Total channel uses K shared by the two stages.
    pub total_channel_uses: usize,
    pub bt1: usize,
    pub snr_grid_db: Vec<f64>,
    pub num_trials: usize,
    pub on_grid: bool,
    pub estimators: Vec<EstimatorKind>,
    pub allocation_mode: AllocationMode,
    pub seed: u64,
    /// Gain-modulus floor used by the bound-driven allocation; with
    /// `clamp_gains` it also conditions the channel draw.
    pub h_min: f64,
    /// Rescale any |h_l| < h_min up to the floor (bound-soundness runs).
    pub clamp_gains: bool,
    /// Stage coherences handed to the allocator.
    pub mu1: f64,
    pub mu2: f64,
    pub admm_rho: f64,
    pub admm_max_iter: usize,
    pub admm_tol: f64,
    /// When false (the default) wall_ms is emitted as 0 so reruns are
    /// byte-identical; timing is inherently non-reproducible.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            num_rx_antennas: 20,
            num_tx_antennas: 64,
            num_rf_chains: 4,
            num_paths: 4,
            oversampling: 1.0,
            total_channel_uses: 50,
            bt1: 1,
            snr_grid_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            num_trials: 2000,
            on_grid: true,
            estimators: vec![EstimatorKind::TwoStageSomp],
            allocation_mode: AllocationMode::PaperAllocation { eta1: 0.95, eta2: 0.95 },
            seed: 1,
            h_min: 1.0,
            clamp_gains: false,
            mu1: 0.0,
            mu2: 0.0,
            admm_rho: 1.0,
            admm_max_iter: 2000,
            admm_tol: 1e-6,
            record_timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::new(self.num_rx_antennas, self.num_tx_antennas, self.num_rf_chains)
    }

    /// Stage-2 beam count implied by the use budget.
    pub fn bt2(&self) -> Result<usize> {
        let stage1 = self.bt1 * self.num_rx_antennas;
        if stage1 % self.num_rf_chains != 0 {
            return Err(Error::Config(format!(
                "stage-1 channel uses: {stage1} not divisible by N = {}",
                self.num_rf_chains
            )));
        }
        let uses1 = stage1 / self.num_rf_chains;
        if self.total_channel_uses <= uses1 {
            return Err(Error::InfeasibleAllocation(format!(
                "K = {} leaves no stage-2 uses",
                self.total_channel_uses
            )));
        }
        let bt2 = self.total_channel_uses - uses1;
        if bt2 < self.num_paths {
            return Err(Error::InfeasibleAllocation(format!(
                "stage-2 beam count {bt2} below path count {}",
                self.num_paths
            )));
        }
        if bt2 > self.num_tx_antennas {
            return Err(Error::InfeasibleAllocation(format!(
                "stage-2 beam count {bt2} exceeds N_t = {}",
                self.num_tx_antennas
            )));
        }
        Ok(bt2)
    }

    pub fn angle_mode(&self) -> AngleMode {
        if self.on_grid {
            AngleMode::OnGrid {
                grid_rx: grid_size(self.num_rx_antennas, self.oversampling),
                grid_tx: grid_size(self.num_tx_antennas, self.oversampling),
            }
        } else {
            AngleMode::Continuous
        }
    }

    /// Resolves (p1, p2) for the given noise level and builds the stage plan.
    pub fn plan_for(&self, table: &TracyWidomTable, noise_std: f64) -> Result<StagePlan> {
        let geometry = self.geometry()?;
        let bt2 = self.bt2()?;
        let (p1, p2) = match self.allocation_mode {
            AllocationMode::PaperAllocation { eta1, eta2 } => {
                let out = allocate(
                    table,
                    &AllocationInputs {
                        total_channel_uses: self.total_channel_uses,
                        num_rf_chains: self.num_rf_chains,
                        n_r: self.num_rx_antennas,
                        n_t: self.num_tx_antennas,
                        num_paths: self.num_paths,
                        min_gain_modulus: self.h_min,
                        noise_std,
                        eta1,
                        eta2,
                        bt1: self.bt1,
                        mu1: self.mu1,
                        mu2: Some(self.mu2),
                        oversampling: self.oversampling,
                    },
                )?;
                (out.p1, out.p2)
            }
            AllocationMode::EqualPower { total_energy } => {
                let p = total_energy / self.total_channel_uses as f64;
                (p, p)
            }
            AllocationMode::Explicit { p1, p2 } => (p1, p2),
        };
        StagePlan::new(&geometry, self.num_paths, self.bt1, bt2, p1, p2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_trials == 0 {
            return Err(Error::Config("num_trials must be at least 1".into()));
        }
        if self.snr_grid_db.is_empty() {
            return Err(Error::Config("snr_grid_db must be non-empty".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("at least one estimator required".into()));
        }
        self.geometry()?;
        self.bt2()?;
        Ok(())
    }

    /// Renders the flat key=value form accepted by [`ExperimentConfig::parse`].
    pub fn render(&self) -> String {
        let mut s = String::new();
        let kv = |s: &mut String, k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv(&mut s, "n_r", self.num_rx_antennas.to_string());
        kv(&mut s, "n_t", self.num_tx_antennas.to_string());
        kv(&mut s, "n_rf", self.num_rf_chains.to_string());
        kv(&mut s, "paths", self.num_paths.to_string());
        kv(&mut s, "oversampling", self.oversampling.to_string());
        kv(&mut s, "k", self.total_channel_uses.to_string());
        kv(&mut s, "bt1", self.bt1.to_string());
        kv(
            &mut s,
            "snr_db",
            self.snr_grid_db.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
        );
        kv(&mut s, "trials", self.num_trials.to_string());
        kv(&mut s, "angle_mode", if self.on_grid { "on_grid".into() } else { "continuous".into() });
        kv(
            &mut s,
            "estimators",
            self.estimators.iter().map(|e| e.name().to_string()).collect::<Vec<_>>().join(","),
        );
        match self.allocation_mode {
            AllocationMode::PaperAllocation { eta1, eta2 } => {
                kv(&mut s, "allocation", "paper".into());
                kv(&mut s, "eta1", eta1.to_string());
                kv(&mut s, "eta2", eta2.to_string());
            }
            AllocationMode::EqualPower { total_energy } => {
                kv(&mut s, "allocation", "equal_power".into());
                kv(&mut s, "total_energy", total_energy.to_string());
            }
            AllocationMode::Explicit { p1, p2 } => {
                kv(&mut s, "allocation", "explicit".into());
                kv(&mut s, "p1", p1.to_string());
                kv(&mut s, "p2", p2.to_string());
            }
        }
        kv(&mut s, "seed", self.seed.to_string());
        kv(&mut s, "h_min", self.h_min.to_string());
        kv(&mut s, "clamp_gains", self.clamp_gains.to_string());
        kv(&mut s, "mu1", self.mu1.to_string());
        kv(&mut s, "mu2", self.mu2.to_string());
        kv(&mut s, "admm_rho", self.admm_rho.to_string());
        kv(&mut s, "admm_max_iter", self.admm_max_iter.to_string());
        kv(&mut s, "admm_tol", self.admm_tol.to_string());
        kv(&mut s, "record_timing", self.record_timing.to_string());
        s
    }

    /// Parses the flat key=value config; '#' starts a comment, unknown keys
    /// are rejected, omitted keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut allocation = String::from("paper");
        let mut eta1 = 0.95;
        let mut eta2 = 0.95;
        let mut total_energy = f64::NAN;
        let mut p1 = f64::NAN;
        let mut p2 = f64::NAN;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| Error::Parse(format!("line {}: bad {what} '{value}'", lineno + 1));
            match key {
                "n_r" => cfg.num_rx_antennas = value.parse().map_err(|_| bad("integer"))?,
                "n_t" => cfg.num_tx_antennas = value.parse().map_err(|_| bad("integer"))?,
                "n_rf" => cfg.num_rf_chains = value.parse().map_err(|_| bad("integer"))?,
                "paths" => cfg.num_paths = value.parse().map_err(|_| bad("integer"))?,
                "oversampling" => cfg.oversampling = value.parse().map_err(|_| bad("number"))?,
                "k" => cfg.total_channel_uses = value.parse().map_err(|_| bad("integer"))?,
                "bt1" => cfg.bt1 = value.parse().map_err(|_| bad("integer"))?,
                "snr_db" => {
                    cfg.snr_grid_db = value
                        .split(',')
                        .map(|v| v.trim().parse().map_err(|_| bad("number list")))
                        .collect::<Result<_>>()?;
                }
                "trials" => cfg.num_trials = value.parse().map_err(|_| bad("integer"))?,
                "angle_mode" => {
                    cfg.on_grid = match value {
                        "on_grid" => true,
                        "continuous" => false,
                        _ => return Err(bad("angle mode")),
                    }
                }
                "estimators" => {
                    cfg.estimators =
                        value.split(',').map(EstimatorKind::parse).collect::<Result<_>>()?;
                }
                "allocation" => allocation = value.to_string(),
                "eta1" => eta1 = value.parse().map_err(|_| bad("number"))?,
                "eta2" => eta2 = value.parse().map_err(|_| bad("number"))?,
                "total_energy" => total_energy = value.parse().map_err(|_| bad("number"))?,
                "p1" => p1 = value.parse().map_err(|_| bad("number"))?,
                "p2" => p2 = value.parse().map_err(|_| bad("number"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("integer"))?,
                "h_min" => cfg.h_min = value.parse().map_err(|_| bad("number"))?,
                "clamp_gains" => cfg.clamp_gains = value.parse().map_err(|_| bad("boolean"))?,
                "mu1" => cfg.mu1 = value.parse().map_err(|_| bad("number"))?,
                "mu2" => cfg.mu2 = value.parse().map_err(|_| bad("number"))?,
                "admm_rho" => cfg.admm_rho = value.parse().map_err(|_| bad("number"))?,
                "admm_max_iter" => cfg.admm_max_iter = value.parse().map_err(|_| bad("integer"))?,
                "admm_tol" => cfg.admm_tol = value.parse().map_err(|_| bad("number"))?,
                "record_timing" => cfg.record_timing = value.parse().map_err(|_| bad("boolean"))?,
                _ => return Err(Error::Parse(format!("line {}: unknown key '{key}'", lineno + 1))),
            }
        }
        cfg.allocation_mode = match allocation.as_str() {
            "paper" => AllocationMode::PaperAllocation { eta1, eta2 },
            "equal_power" => {
                if !total_energy.is_finite() {
                    return Err(Error::Parse("equal_power allocation needs total_energy".into()));
                }
                AllocationMode::EqualPower { total_energy }
            }
            "explicit" => {
                if !(p1.is_finite() && p2.is_finite()) {
                    return Err(Error::Parse("explicit allocation needs p1 and p2".into()));
                }
                AllocationMode::Explicit { p1, p2 }
            }
            other => return Err(Error::Parse(format!("unknown allocation mode '{other}'"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }
}

fn grid_size(num_antennas: usize, oversampling: f64) -> usize {
    (oversampling * num_antennas as f64).ceil() as usize
}

/// Noise standard deviation for an SNR in dB at unit reference power.
pub fn noise_std_for_snr(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 20.0)
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Circular distance between normalized frequencies, in [0, 1/2].
pub fn wrapped_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Mean squared wrapped angle error over the best joint assignment of
/// estimated (AoA, AoD) pairs to true paths: min over permutations of
/// (1/2L) sum of per-path squared AoA and AoD distances.
pub fn angle_eps(
    est_pairs: &[(f64, f64)],
    true_aoa: &[f64],
    true_aod: &[f64],
) -> Result<f64> {
    let l = true_aoa.len();
    if true_aod.len() != l || est_pairs.len() != l {
        return Err(Error::Dimension("path-count mismatch in angle matching".into()));
    }
    if l == 0 {
        return Err(Error::Domain("no paths to match".into()));
    }
    if l > MATCHING_MAX_PATHS {
        return Err(Error::GuardExceeded(format!(
            "permutation matching over {l} paths exceeds the cap {MATCHING_MAX_PATHS}"
        )));
    }
    let cost = |est: usize, truth: usize| {
        wrapped_distance(est_pairs[est].0, true_aoa[truth]).powi(2)
            + wrapped_distance(est_pairs[est].1, true_aod[truth]).powi(2)
    };
    let mut perm: Vec<usize> = (0..l).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let total: f64 = p.iter().enumerate().map(|(t, &e)| cost(e, t)).sum();
        if total < best {
            best = total;
        }
    });
    Ok(best / (2.0 * l as f64))
}

fn permute(items: &mut [usize], k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// ||H_hat - H||_F^2 / ||H||_F^2.
pub fn nmse(h_hat: &CMat, h: &CMat) -> f64 {
    (h_hat - h).norm_squared() / h.norm_squared()
}

fn support_set_exact(support: &[usize], true_freqs: &[f64], grid: usize) -> bool {
    if support.len() != true_freqs.len() {
        return false;
    }
    let mut est: Vec<usize> = support.to_vec();
    let mut truth: Vec<usize> = true_freqs
        .iter()
        .map(|f| (f * grid as f64).round() as usize % grid)
        .collect();
    est.sort_unstable();
    truth.sort_unstable();
    est == truth
}

// ---------------------------------------------------------------------------
// Trial execution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub seed: u64,
    pub snr_db: f64,
    pub estimator: EstimatorKind,
    /// NaN when the estimator failed on this trial.
    pub eps: f64,
    pub aoa_support_exact: bool,
    pub aod_support_exact: bool,
    pub nmse: f64,
    pub wall_ms: f64,
    pub mults: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct CurvePoint {
    pub estimator: EstimatorKind,
    pub snr_db: f64,
    pub srp: f64,
    /// Binomial standard error of the SRP estimate.
    pub srp_err: f64,
    pub mse: f64,
    pub nmse: f64,
    pub trials: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub trials: Vec<TrialRecord>,
    pub curves: Vec<CurvePoint>,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Counter-derived per-trial generator: the same (seed, snr, trial, stream)
/// always yields the same stream regardless of scheduling.
pub fn trial_rng(seed: u64, snr_idx: usize, trial: usize, stream: u64) -> ChaCha8Rng {
    let mut state = seed;
    let mut key = [0u8; 32];
    let a = splitmix64(&mut state);
    state ^= (snr_idx as u64).wrapping_mul(0xd1342543de82ef95);
    let b = splitmix64(&mut state);
    state ^= (trial as u64).wrapping_mul(0xaf251af3b0f025b5);
    let c = splitmix64(&mut state);
    state ^= stream.wrapping_mul(0x9e3779b97f4a7c15);
    let d = splitmix64(&mut state);
    key[0..8].copy_from_slice(&a.to_le_bytes());
    key[8..16].copy_from_slice(&b.to_le_bytes());
    key[16..24].copy_from_slice(&c.to_le_bytes());
    key[24..32].copy_from_slice(&d.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn draw_trial_channel(
    config: &ExperimentConfig,
    geometry: &ArrayGeometry,
    snr_idx: usize,
    trial: usize,
) -> Result<ChannelRealization> {
    let mut rng = trial_rng(config.seed, snr_idx, trial, 0);
    let variances = vec![1.0; config.num_paths];
    let ch = sample_channel(geometry, config.num_paths, config.angle_mode(), &variances, &mut rng)?;
    if !config.clamp_gains {
        return Ok(ch);
    }
    let gains = ch
        .gains
        .iter()
        .map(|&g| {
            if g.norm() < config.h_min {
                if g.norm() == 0.0 {
                    crate::C64::new(config.h_min, 0.0)
                } else {
                    g * (config.h_min / g.norm())
                }
            } else {
                g
            }
        })
        .collect();
    ChannelRealization::from_parts(
        geometry.num_rx_antennas,
        geometry.num_tx_antennas,
        ch.aoa_freqs,
        ch.aod_freqs,
        gains,
    )
}

struct EstimateSummary {
    /// Matched (AoA, AoD) frequency pairs, one per path.
    pairs: Vec<(f64, f64)>,
    aoa_support: Vec<usize>,
    aod_support: Vec<usize>,
    h_hat: CMat,
    mults: u64,
}

fn one_stage_beams(config: &ExperimentConfig) -> Result<(usize, usize)> {
    // Largest receive beam count that fills whole soundings on N chains.
    let br = config.num_rx_antennas - config.num_rx_antennas % config.num_rf_chains;
    if br == 0 {
        return Err(Error::Config(format!(
            "one-stage baseline: fewer receive antennas ({}) than RF chains ({})",
            config.num_rx_antennas, config.num_rf_chains
        )));
    }
    let kn = config.total_channel_uses * config.num_rf_chains;
    if kn % br != 0 {
        return Err(Error::Config(format!(
            "one-stage baseline: K*N = {kn} not divisible by B_r = {br}"
        )));
    }
    Ok((br, kn / br))
}

fn run_estimator(
    kind: EstimatorKind,
    config: &ExperimentConfig,
    geometry: &ArrayGeometry,
    dict_r: &AngleDictionary,
    dict_t: &AngleDictionary,
    channel: &ChannelRealization,
    plan: &StagePlan,
    noise_std: f64,
    rng: &mut ChaCha8Rng,
) -> Result<EstimateSummary> {
    match kind {
        EstimatorKind::TwoStageSomp => {
            let out = two_stage_somp(channel, geometry, dict_r, dict_t, plan, noise_std, rng)?;
            let pairs = out
                .pairing
                .iter()
                .map(|p| (out.est_aoa_freqs[p.aoa_index], out.est_aod_freqs[p.aod_index]))
                .collect();
            Ok(EstimateSummary {
                pairs,
                aoa_support: out.est_aoa_support,
                aod_support: out.est_aod_support,
                h_hat: out.h_hat,
                mults: out.multiply_count,
            })
        }
        EstimatorKind::OneStageOmp => {
            let (br, bt) = one_stage_beams(config)?;
            let total = plan.energy_stage1(geometry) + plan.energy_stage2();
            let p = total / config.total_channel_uses as f64;
            let out = one_stage_omp(
                channel,
                geometry,
                dict_r,
                dict_t,
                br,
                bt,
                p,
                OneStageMode::RandomPhase,
                noise_std,
                rng,
            )?;
            let pairs = out
                .est_aoa_freqs
                .iter()
                .zip(out.est_aod_freqs.iter())
                .map(|(&a, &b)| (a, b))
                .collect();
            Ok(EstimateSummary {
                pairs,
                aoa_support: out.support_pairs.iter().map(|&(i, _)| i).collect(),
                aod_support: out.support_pairs.iter().map(|&(_, j)| j).collect(),
                h_hat: out.h_hat,
                mults: out.multiply_count,
            })
        }
        EstimatorKind::TwoStageSuperres => run_superres(config, geometry, channel, plan, noise_std, rng),
        EstimatorKind::OneStageAtomicStub => {
            run_atomic_stub(config, geometry, channel, noise_std, plan, rng)
        }
        EstimatorKind::Oracle => {
            let (s1, s2) = plan_sounders(geometry, plan, &channel.aoa_responses())?;
            let y1 = observe_with(channel, &s1.rsb, &s1.tsb, noise_std, rng)?;
            let y2 = observe_with(channel, &s2.rsb, &s2.tsb, noise_std, rng)?;
            let h_hat = oracle_estimate(channel, &[(&y1, &s1), (&y2, &s2)])?;
            let pairs = channel
                .aoa_freqs
                .iter()
                .zip(channel.aod_freqs.iter())
                .map(|(&a, &b)| (a, b))
                .collect();
            Ok(EstimateSummary {
                pairs,
                aoa_support: Vec::new(),
                aod_support: Vec::new(),
                h_hat,
                mults: 0,
            })
        }
    }
}

fn run_superres(
    config: &ExperimentConfig,
    geometry: &ArrayGeometry,
    channel: &ChannelRealization,
    plan: &StagePlan,
    noise_std: f64,
    rng: &mut ChaCha8Rng,
) -> Result<EstimateSummary> {
    let tsb1 = stage1_tsb(geometry, plan.bt1, plan.p1)?;
    let s1 = SounderSet {
        rsb: stage1_rsb(geometry),
        tsb: tsb1.matrix,
        power_per_beam: plan.p1,
        analog_factors: Some(tsb1.factors),
    };
    let y1 = observe_with(channel, &s1.rsb, &s1.tsb, noise_std, rng)?;
    let opts1 = AdmmOptions {
        lambda: lambda_default(noise_std, geometry.num_rx_antennas),
        rho: config.admm_rho,
        max_iter: config.admm_max_iter,
        tol: config.admm_tol,
        u_update: crate::superres::UUpdate::AsPrinted,
    };
    let (est_r, _) = superres_aoa(&y1, &s1.rsb, channel.num_paths, &opts1)?;
    let a_r_hat = response_matrix(geometry.num_rx_antennas, &est_r.freqs);

    let tsb2 = stage2_tsb(geometry, plan.bt2, plan.p2)?;
    let s2 = SounderSet {
        rsb: stage2_rsb(&a_r_hat)?,
        tsb: tsb2.matrix,
        power_per_beam: plan.p2,
        analog_factors: Some(tsb2.factors),
    };
    let y2 = observe_with(channel, &s2.rsb, &s2.tsb, noise_std, rng)?;
    let opts2 = AdmmOptions {
        lambda: lambda_default(noise_std, plan.bt2),
        ..opts1
    };
    let (est_t, _) = superres_aod(&y2, &s2.tsb, channel.num_paths, &opts2)?;
    let a_t_hat = response_matrix(geometry.num_tx_antennas, &est_t.freqs);

    let (r_hat, h_hat, _) = reconstruct_rhat(&y1, &y2, &s1, &s2, &a_r_hat, &a_t_hat)?;
    let pairing = pair_paths(&r_hat);
    let pairs = pairing
        .iter()
        .map(|p| (est_r.freqs[p.aoa_index], est_t.freqs[p.aod_index]))
        .collect();
    Ok(EstimateSummary {
        pairs,
        aoa_support: Vec::new(),
        aod_support: Vec::new(),
        h_hat,
        mults: 0,
    })
}

/// Gridless one-stage baseline: atomic denoising applied to the vectorized
/// single-shot sounding. Stands in for the cited prior method; fidelity to
/// that method is not claimed.
fn run_atomic_stub(
    config: &ExperimentConfig,
    geometry: &ArrayGeometry,
    channel: &ChannelRealization,
    noise_std: f64,
    plan: &StagePlan,
    rng: &mut ChaCha8Rng,
) -> Result<EstimateSummary> {
    let (br, bt) = one_stage_beams(config)?;
    if br != geometry.num_rx_antennas {
        return Err(Error::Config("atomic stub needs the full receive DFT".into()));
    }
    if bt <= channel.num_paths {
        return Err(Error::InfeasibleAllocation(format!(
            "atomic stub beam count {bt} must exceed path count {}",
            channel.num_paths
        )));
    }
    let total = plan.energy_stage1(geometry) + plan.energy_stage2();
    let p = total / config.total_channel_uses as f64;
    let tsb = stage2_tsb(geometry, bt, p)?;
    let s = SounderSet {
        rsb: stage1_rsb(geometry),
        tsb: tsb.matrix,
        power_per_beam: p,
        analog_factors: Some(tsb.factors),
    };
    let y = observe_with(channel, &s.rsb, &s.tsb, noise_std, rng)?;

    let opts_r = AdmmOptions {
        lambda: lambda_default(noise_std, geometry.num_rx_antennas),
        rho: config.admm_rho,
        max_iter: config.admm_max_iter,
        tol: config.admm_tol,
        u_update: crate::superres::UUpdate::AsPrinted,
    };
    let (est_r, _) = superres_aoa(&y, &s.rsb, channel.num_paths, &opts_r)?;
    let a_r_hat = response_matrix(geometry.num_rx_antennas, &est_r.freqs);
    let opts_t = AdmmOptions { lambda: lambda_default(noise_std, bt), ..opts_r };
    let (est_t, _) = superres_aod(&y, &s.tsb, channel.num_paths, &opts_t)?;
    let a_t_hat = response_matrix(geometry.num_tx_antennas, &est_t.freqs);

    let (r_hat, h_hat, _) = reconstruct_rhat(&y, &y, &s, &s, &a_r_hat, &a_t_hat)?;
    let pairing = pair_paths(&r_hat);
    let pairs = pairing
        .iter()
        .map(|p| (est_r.freqs[p.aoa_index], est_t.freqs[p.aod_index]))
        .collect();
    Ok(EstimateSummary {
        pairs,
        aoa_support: Vec::new(),
        aod_support: Vec::new(),
        h_hat,
        mults: 0,
    })
}

/// Runs the full (snr x trial x estimator) sweep. Trials are distributed
/// over the rayon pool; outputs are ordered and deterministic in the seed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let geometry = config.geometry()?;
    let dict_r = build_dictionary(config.num_rx_antennas, config.oversampling)?;
    let dict_t = build_dictionary(config.num_tx_antennas, config.oversampling)?;
    let table = TracyWidomTable::embedded();
    let grid_r = dict_r.grid_size;
    let grid_t = dict_t.grid_size;

    // Resolve plans up front so an infeasible allocation fails fast.
    let plans: Vec<(f64, f64, StagePlan)> = config
        .snr_grid_db
        .iter()
        .map(|&snr| {
            let sigma = noise_std_for_snr(snr);
            config.plan_for(table, sigma).map(|plan| (snr, sigma, plan))
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..plans.len())
        .flat_map(|si| (0..config.num_trials).map(move |t| (si, t)))
        .collect();

    let trials: Vec<Vec<TrialRecord>> = jobs
        .par_iter()
        .map(|&(snr_idx, trial)| -> Result<Vec<TrialRecord>> {
            let (snr_db, sigma, plan) = &plans[snr_idx];
            let channel = draw_trial_channel(config, &geometry, snr_idx, trial)?;
            let mut records = Vec::with_capacity(config.estimators.len());
            for &kind in &config.estimators {
                let mut rng = trial_rng(config.seed, snr_idx, trial, kind.stream());
                let start = Instant::now();
                let outcome = run_estimator(
                    kind, config, &geometry, &dict_r, &dict_t, &channel, plan, *sigma, &mut rng,
                );
                let wall_ms = if config.record_timing {
                    start.elapsed().as_secs_f64() * 1e3
                } else {
                    0.0
                };
                let record = match outcome {
                    Ok(est) => {
                        let eps = match kind {
                            EstimatorKind::Oracle => 0.0,
                            _ => angle_eps(&est.pairs, &channel.aoa_freqs, &channel.aod_freqs)?,
                        };
                        let (aoa_exact, aod_exact) = if kind == EstimatorKind::Oracle {
                            (true, true)
                        } else if config.on_grid {
                            (
                                support_set_exact(&est.aoa_support, &channel.aoa_freqs, grid_r),
                                support_set_exact(&est.aod_support, &channel.aod_freqs, grid_t),
                            )
                        } else {
                            (false, false)
                        };
                        TrialRecord {
                            seed: config.seed,
                            snr_db: *snr_db,
                            estimator: kind,
                            eps,
                            aoa_support_exact: aoa_exact,
                            aod_support_exact: aod_exact,
                            nmse: nmse(&est.h_hat, &channel.matrix),
                            wall_ms,
                            mults: est.mults,
                        }
                    }
                    Err(_) => TrialRecord {
                        seed: config.seed,
                        snr_db: *snr_db,
                        estimator: kind,
                        eps: f64::NAN,
                        aoa_support_exact: false,
                        aod_support_exact: false,
                        nmse: f64::NAN,
                        wall_ms,
                        mults: 0,
                    },
                };
                records.push(record);
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;
    let trials: Vec<TrialRecord> = trials.into_iter().flatten().collect();
    let curves = aggregate(config, &trials);
    Ok(ExperimentOutput { trials, curves })
}

/// Per-(estimator, snr) aggregates; failed trials count against SRP and are
/// excluded from the error means.
pub fn aggregate(config: &ExperimentConfig, trials: &[TrialRecord]) -> Vec<CurvePoint> {
    let mut curves = Vec::new();
    let l = config.num_paths as f64;
    for &kind in &config.estimators {
        for &snr in &config.snr_grid_db {
            let rows: Vec<&TrialRecord> = trials
                .iter()
                .filter(|r| r.estimator == kind && r.snr_db == snr)
                .collect();
            if rows.is_empty() {
                continue;
            }
            let n = rows.len() as f64;
            let successes = rows
                .iter()
                .filter(|r| r.eps.is_finite() && r.eps <= SRP_EPS_TOL)
                .count() as f64;
            let srp = successes / n;
            let srp_err = (srp * (1.0 - srp) / n).sqrt();
            let finite: Vec<&&TrialRecord> = rows.iter().filter(|r| r.eps.is_finite()).collect();
            let (mse, nm) = if finite.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let fe = finite.len() as f64;
                (
                    finite.iter().map(|r| 2.0 * l * r.eps).sum::<f64>() / fe,
                    finite.iter().map(|r| r.nmse).sum::<f64>() / fe,
                )
            };
            curves.push(CurvePoint {
                estimator: kind,
                snr_db: snr,
                srp,
                srp_err,
                mse,
                nmse: nm,
                trials: rows.len(),
            });
        }
    }
    curves
}

// ---------------------------------------------------------------------------
// Complexity accounting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct ComplexityRow {
    pub n_r: usize,
    pub two_stage_mults: f64,
    pub one_stage_mults: f64,
    pub ratio: f64,
    /// s * N * N_r, the predicted growth factor for the ratio.
    pub predicted_factor: f64,
}

/// Measures mean dominant multiply counts for both estimators across a
/// receive-array sweep. Degenerate geometries emit a row with a NaN ratio
/// instead of failing.
pub fn complexity_report(
    base: &ExperimentConfig,
    n_r_sweep: &[usize],
    trials: usize,
) -> Result<Vec<ComplexityRow>> {
    let mut rows = Vec::with_capacity(n_r_sweep.len());
    for &n_r in n_r_sweep {
        let mut cfg = base.clone();
        cfg.num_rx_antennas = n_r;
        cfg.num_trials = trials.max(1);
        cfg.snr_grid_db = vec![20.0];
        cfg.estimators = vec![EstimatorKind::TwoStageSomp, EstimatorKind::OneStageOmp];
        if cfg.validate().is_err() || one_stage_beams(&cfg).is_err() {
            rows.push(ComplexityRow {
                n_r,
                two_stage_mults: f64::NAN,
                one_stage_mults: f64::NAN,
                ratio: f64::NAN,
                predicted_factor: f64::NAN,
            });
            continue;
        }
        let out = run_experiment(&cfg)?;
        let mean = |kind: EstimatorKind| {
            let counts: Vec<f64> = out
                .trials
                .iter()
                .filter(|r| r.estimator == kind && r.eps.is_finite())
                .map(|r| r.mults as f64)
                .collect();
            counts.iter().sum::<f64>() / counts.len().max(1) as f64
        };
        let two = mean(EstimatorKind::TwoStageSomp);
        let one = mean(EstimatorKind::OneStageOmp);
        rows.push(ComplexityRow {
            n_r,
            two_stage_mults: two,
            one_stage_mults: one,
            ratio: one / two,
            predicted_factor: base.oversampling * base.num_rf_chains as f64 * n_r as f64,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

pub const TRIALS_HEADER: &str =
    "seed,snr_db,estimator,eps,aoa_support_exact,aod_support_exact,nmse,wall_ms,mults";
pub const CURVES_HEADER: &str = "estimator,snr_db,srp,srp_err,mse,nmse,trials";

pub fn render_trials_csv(records: &[TrialRecord]) -> String {
    let mut s = String::from(TRIALS_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.seed,
            r.snr_db,
            r.estimator,
            r.eps,
            r.aoa_support_exact as u8,
            r.aod_support_exact as u8,
            r.nmse,
            r.wall_ms,
            r.mults
        ));
    }
    s
}

pub fn render_curves_csv(curves: &[CurvePoint]) -> String {
    let mut s = String::from(CURVES_HEADER);
    s.push('\n');
    for c in curves {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.estimator, c.snr_db, c.srp, c.srp_err, c.mse, c.nmse, c.trials
        ));
    }
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn emit_trials_csv(records: &[TrialRecord], path: &Path) -> Result<()> {
    write_text(path, &render_trials_csv(records))
}

pub fn emit_curves_csv(curves: &[CurvePoint], path: &Path) -> Result<()> {
    write_text(path, &render_curves_csv(curves))
}
