//! Tracy-Widom (beta = 2) CDF evaluation, SRP lower bounds for the two
//! sounding stages, and the SRP-targeted power/beam allocator.
//!
//! The CDF comes from a checked-in lookup table produced by the Painlevé II
//! oracle in this module (see `gen-tw-table`); evaluation interpolates with a
//! monotone cubic so the interpolant is itself a valid CDF.

use sha2::{Digest, Sha256};
use std::sync::OnceLock;

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Painlevé II oracle
//
// F2(s) = exp(-∫_s^∞ (x - s) q(x)² dx) where q'' = x q + 2 q³ and
// q(x) ~ Ai(x) as x → ∞. Integrated downward by RK4 from x = 10 with the
// Airy asymptotic series as the boundary condition; the two integrals ride
// along as extra state: J(x) = ∫_x^∞ q², I(x) = ∫_x^∞ (t - x) q(t)² dt,
// J' = -q², I' = -J.
// ---------------------------------------------------------------------------

const ORACLE_X_START: f64 = 10.0;
const ORACLE_STEP: f64 = 5e-4;

/// Asymptotic Ai(x), Ai'(x) for large positive x (series through k = 4).
fn airy_start(x: f64) -> (f64, f64) {
    let zeta = 2.0 / 3.0 * x.powf(1.5);
    let u = [
        1.0,
        5.0 / 72.0,
        385.0 / 10368.0,
        85085.0 / 2239488.0,
        37182145.0 / 644972544.0,
    ];
    let mut ai_sum = 0.0;
    let mut aip_sum = 0.0;
    let mut sign = 1.0;
    let mut zk = 1.0;
    for (k, uk) in u.iter().enumerate() {
        let vk = if k == 0 {
            1.0
        } else {
            -(6.0 * k as f64 + 1.0) / (6.0 * k as f64 - 1.0) * uk
        };
        ai_sum += sign * uk / zk;
        aip_sum += sign * vk / zk;
        sign = -sign;
        zk *= zeta;
    }
    let front = (-zeta).exp() / (2.0 * std::f64::consts::PI.sqrt());
    (front / x.powf(0.25) * ai_sum, -front * x.powf(0.25) * aip_sum)
}

#[derive(Clone, Copy)]
struct OracleState {
    q: f64,
    p: f64,
    j: f64,
    i: f64,
}

fn oracle_derivative(x: f64, s: OracleState) -> OracleState {
    OracleState {
        q: s.p,
        p: x * s.q + 2.0 * s.q.powi(3),
        j: -s.q * s.q,
        i: -s.j,
    }
}

fn rk4_step(x: f64, s: OracleState, h: f64) -> OracleState {
    let add = |a: OracleState, b: OracleState, c: f64| OracleState {
        q: a.q + c * b.q,
        p: a.p + c * b.p,
        j: a.j + c * b.j,
        i: a.i + c * b.i,
    };
    let k1 = oracle_derivative(x, s);
    let k2 = oracle_derivative(x + 0.5 * h, add(s, k1, 0.5 * h));
    let k3 = oracle_derivative(x + 0.5 * h, add(s, k2, 0.5 * h));
    let k4 = oracle_derivative(x + h, add(s, k3, h));
    OracleState {
        q: s.q + h / 6.0 * (k1.q + 2.0 * k2.q + 2.0 * k3.q + k4.q),
        p: s.p + h / 6.0 * (k1.p + 2.0 * k2.p + 2.0 * k3.p + k4.p),
        j: s.j + h / 6.0 * (k1.j + 2.0 * k2.j + 2.0 * k3.j + k4.j),
        i: s.i + h / 6.0 * (k1.i + 2.0 * k2.i + 2.0 * k3.i + k4.i),
    }
}

/// F2 sampled on an ascending uniform grid; the workhorse behind table
/// generation and the fidelity tests.
pub fn painleve_f2_grid(s_min: f64, s_max: f64, step: f64) -> Vec<(f64, f64)> {
    assert!(s_min < s_max && s_max < ORACLE_X_START && step > 0.0);
    let per_cell = (step / ORACLE_STEP).round() as usize;
    assert!(
        per_cell >= 1 && (per_cell as f64 * ORACLE_STEP - step).abs() < 1e-12,
        "grid step must be a multiple of the integrator step"
    );
    let lead = ((ORACLE_X_START - s_max) / ORACLE_STEP).round() as usize;
    let cells = ((s_max - s_min) / step).round() as usize;

    let (q, p) = airy_start(ORACLE_X_START);
    let mut state = OracleState { q, p, j: 0.0, i: 0.0 };
    let mut out = Vec::with_capacity(cells + 1);
    let total = lead + cells * per_cell;
    for step_idx in 0..=total {
        if step_idx >= lead && (step_idx - lead) % per_cell == 0 {
            let s = s_max - ((step_idx - lead) / per_cell) as f64 * step;
            out.push((s, (-state.i).exp()));
        }
        if step_idx < total {
            let x = ORACLE_X_START - step_idx as f64 * ORACLE_STEP;
            state = rk4_step(x, state, -ORACLE_STEP);
        }
    }
    out.reverse();
    out
}

/// Single-point F2 evaluation by the same downward integration.
pub fn painleve_f2(s: f64) -> f64 {
    assert!(s < ORACLE_X_START - 1.0);
    let steps = ((ORACLE_X_START - s) / ORACLE_STEP).ceil() as usize;
    let h = (ORACLE_X_START - s) / steps as f64;
    let (q, p) = airy_start(ORACLE_X_START);
    let mut state = OracleState { q, p, j: 0.0, i: 0.0 };
    for step_idx in 0..steps {
        let x = ORACLE_X_START - step_idx as f64 * h;
        state = rk4_step(x, state, -h);
    }
    (-state.i).exp()
}

// ---------------------------------------------------------------------------
// Lookup table
// ---------------------------------------------------------------------------

/// Serializes table rows with a provenance header; the sha256 line covers
/// exactly the data body, so any edit to the numbers is detectable.
pub fn render_table(rows: &[(f64, f64)], generator_note: &str) -> String {
    let mut body = String::new();
    for (s, v) in rows {
        body.push_str(&format!("{s:.3} {v:.16e}\n"));
    }
    let digest = hex_digest(body.as_bytes());
    format!(
        "# tracy-widom beta=2 cdf table (s, F2(s))\n# generator: {generator_note}\n# sha256: {digest}\n{body}"
    )
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut out = String::new();
    for b in Sha256::digest(bytes) {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// The tabulated CDF with precomputed monotone-cubic slopes.
#[derive(Debug, Clone)]
pub struct TracyWidomTable {
    pub abscissae: Vec<f64>,
    pub cdf_values: Vec<f64>,
    pub provenance: String,
    slopes: Vec<f64>,
}

static EMBEDDED: OnceLock<TracyWidomTable> = OnceLock::new();
const EMBEDDED_TEXT: &str = include_str!("../data/tw_f2.dat");

impl TracyWidomTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut provenance = String::new();
        let mut declared_hash: Option<String> = None;
        let mut body = String::new();
        let mut abscissae = Vec::new();
        let mut cdf_values = Vec::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix('#') {
                provenance.push_str(rest.trim());
                provenance.push('\n');
                if let Some(h) = rest.trim().strip_prefix("sha256: ") {
                    declared_hash = Some(h.to_string());
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            body.push_str(line);
            body.push('\n');
            let mut parts = line.split_whitespace();
            let s: f64 = parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad table line: {line}")))?;
            let v: f64 = parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad table line: {line}")))?;
            abscissae.push(s);
            cdf_values.push(v);
        }
        let declared =
            declared_hash.ok_or_else(|| Error::Parse("table lacks a sha256 header".into()))?;
        let actual = hex_digest(body.as_bytes());
        if declared != actual {
            return Err(Error::Parse(format!(
                "table hash mismatch: header {declared}, data {actual}"
            )));
        }
        if abscissae.len() < 4 {
            return Err(Error::Parse("table too short".into()));
        }
        if !abscissae.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::Parse("table abscissae not increasing".into()));
        }
        if !cdf_values.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::Parse("table values not strictly increasing".into()));
        }
        if cdf_values[0] > 1e-6 || *cdf_values.last().unwrap() < 1.0 - 1e-6 {
            return Err(Error::Parse("table does not span the distribution".into()));
        }
        let slopes = monotone_slopes(&abscissae, &cdf_values);
        Ok(Self { abscissae, cdf_values, provenance, slopes })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// The table compiled into the binary.
    pub fn embedded() -> &'static Self {
        EMBEDDED.get_or_init(|| {
            Self::parse(EMBEDDED_TEXT).expect("embedded tracy-widom table is valid")
        })
    }

    /// Monotone cubic interpolation; clamps to {0, 1} outside the range.
    pub fn cdf(&self, s: f64) -> f64 {
        let n = self.abscissae.len();
        if s < self.abscissae[0] {
            return 0.0;
        }
        if s > self.abscissae[n - 1] {
            return 1.0;
        }
        let k = match self
            .abscissae
            .binary_search_by(|a| a.total_cmp(&s))
        {
            Ok(i) => return self.cdf_values[i],
            Err(i) => i - 1,
        };
        let h = self.abscissae[k + 1] - self.abscissae[k];
        let t = (s - self.abscissae[k]) / h;
        let (y0, y1) = (self.cdf_values[k], self.cdf_values[k + 1]);
        let (m0, m1) = (self.slopes[k] * h, self.slopes[k + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let val = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * m1;
        val.clamp(0.0, 1.0)
    }

    /// Bisection inverse of [`Self::cdf`] to 1e-10 in the abscissa.
    pub fn inverse(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Domain(format!("quantile {q} outside (0,1)")));
        }
        let mut lo = self.abscissae[0];
        let mut hi = *self.abscissae.last().unwrap();
        if q <= self.cdf(lo) {
            return Ok(lo);
        }
        if q >= self.cdf(hi) {
            return Ok(hi);
        }
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Fritsch-Carlson slopes: the resulting Hermite spline is monotone when the
/// data are.
fn monotone_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let d: Vec<f64> = (0..n - 1)
        .map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i]))
        .collect();
    let mut m = vec![0.0; n];
    m[0] = d[0];
    m[n - 1] = d[n - 2];
    for i in 1..n - 1 {
        m[i] = if d[i - 1] * d[i] > 0.0 {
            0.5 * (d[i - 1] + d[i])
        } else {
            0.0
        };
    }
    for i in 0..n - 1 {
        if d[i] == 0.0 {
            m[i] = 0.0;
            m[i + 1] = 0.0;
            continue;
        }
        let a = m[i] / d[i];
        let b = m[i + 1] / d[i];
        let r = a * a + b * b;
        if r > 9.0 {
            let tau = 3.0 / r.sqrt();
            m[i] = tau * a * d[i];
            m[i + 1] = tau * b * d[i];
        }
    }
    m
}

// ---------------------------------------------------------------------------
// SRP bounds
// ---------------------------------------------------------------------------

/// (sqrt(M) + sqrt(d))^2 — the operator-norm mean proxy for an M x d
/// Gaussian noise block.
pub fn mu_md(m: usize, d: usize) -> f64 {
    let (m, d) = (m as f64, d as f64);
    (m.sqrt() + d.sqrt()).powi(2)
}

/// (sqrt(M) + sqrt(d)) (1/sqrt(M) + 1/sqrt(d))^{1/3} — the matching
/// fluctuation scale.
pub fn sigma_md(m: usize, d: usize) -> f64 {
    let (m, d) = (m as f64, d as f64);
    (m.sqrt() + d.sqrt()) * (1.0 / m.sqrt() + 1.0 / d.sqrt()).powf(1.0 / 3.0)
}

/// Everything the stage bounds need in one place.
#[derive(Debug, Clone, Copy)]
pub struct SrpQuery {
    pub num_paths: usize,
    pub mip_constant: f64,
    pub min_gain_modulus: f64,
    pub noise_std: f64,
    pub p1: f64,
    pub bt1: usize,
    pub n_r: usize,
    pub n_t: usize,
    pub p2: f64,
    pub bt2: usize,
}

fn check_hypothesis(mu: f64, num_paths: usize, sigma: f64) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::Domain("noise std must be positive".into()));
    }
    if mu < 0.0 {
        return Err(Error::Domain("coherence must be nonnegative".into()));
    }
    let lin = 1.0 - (2.0 * num_paths as f64 - 1.0) * mu;
    if lin <= 0.0 {
        return Err(Error::BoundInvalid(format!(
            "coherence {mu} violates mu < 1/(2L-1) for L = {num_paths}"
        )));
    }
    Ok(lin)
}

/// Generic MMV recovery bound: F2(((1-(2L-1)mu)^2 C_min^2 - 4σ² mu_{M,d}) /
/// (4σ² sigma_{M,d})).
pub fn srp_bound_somp(
    table: &TracyWidomTable,
    c_min: f64,
    mu: f64,
    num_paths: usize,
    sigma: f64,
    m: usize,
    d: usize,
) -> Result<f64> {
    let lin = check_hypothesis(mu, num_paths, sigma)?;
    let arg = (lin.powi(2) * c_min * c_min - 4.0 * sigma * sigma * mu_md(m, d))
        / (4.0 * sigma * sigma * sigma_md(m, d));
    Ok(table.cdf(arg))
}

/// Recovery bound under a dictionary-quantization perturbation of spectral
/// norm `quant_err_norm`; reduces to [`srp_bound_somp`] at zero.
pub fn srp_bound_somp_quantized(
    table: &TracyWidomTable,
    c_min: f64,
    mu: f64,
    num_paths: usize,
    sigma: f64,
    m: usize,
    d: usize,
    quant_err_norm: f64,
) -> Result<f64> {
    if quant_err_norm < 0.0 {
        return Err(Error::Domain("quantization error norm must be nonnegative".into()));
    }
    let lin = check_hypothesis(mu, num_paths, sigma)?;
    let signal = (lin * c_min - 2.0 * quant_err_norm).max(0.0);
    let arg = (signal * signal - 4.0 * sigma * sigma * mu_md(m, d))
        / (4.0 * sigma * sigma * sigma_md(m, d));
    Ok(table.cdf(arg))
}

/// Stage-1 (AoA) SRP bound. The coherence back-off enters linearly here —
/// the displayed approximate form — unlike the squared factor in
/// [`srp_bound_somp`]; [`srp_bound_aoa_strict`] keeps the square.
pub fn srp_bound_aoa(table: &TracyWidomTable, q: &SrpQuery) -> Result<f64> {
    let lin = check_hypothesis(q.mip_constant, q.num_paths, q.noise_std)?;
    let s2 = q.noise_std * q.noise_std;
    let c2 = q.min_gain_modulus.powi(2) * q.p1 * q.bt1 as f64 / q.n_t as f64;
    let arg = (lin * c2 - 4.0 * s2 * mu_md(q.n_r, q.bt1)) / (4.0 * s2 * sigma_md(q.n_r, q.bt1));
    Ok(table.cdf(arg))
}

/// Stage-1 bound via direct substitution into [`srp_bound_somp`]
/// (squared back-off). Matches the allocator's energy formula exactly.
pub fn srp_bound_aoa_strict(table: &TracyWidomTable, q: &SrpQuery) -> Result<f64> {
    let c_min = (q.p1 * q.bt1 as f64 / q.n_t as f64).sqrt() * q.min_gain_modulus;
    srp_bound_somp(
        table,
        c_min,
        q.mip_constant,
        q.num_paths,
        q.noise_std,
        q.n_r,
        q.bt1,
    )
}

/// Stage-2 (AoD) SRP bound with the extra N_t weighting on the noise terms,
/// exactly as displayed. Conservative relative to [`srp_bound_aod_consistent`].
pub fn srp_bound_aod(table: &TracyWidomTable, q: &SrpQuery) -> Result<f64> {
    let lin = check_hypothesis(q.mip_constant, q.num_paths, q.noise_std)?;
    if q.p2 <= 0.0 || q.bt2 == 0 {
        return Err(Error::Domain("stage-2 power and beam count must be positive".into()));
    }
    let s2 = q.noise_std * q.noise_std;
    let scale = q.n_t as f64 / (q.p2 * q.bt2 as f64);
    let nt = q.n_t as f64;
    let arg = (lin.powi(2) * q.min_gain_modulus.powi(2)
        - 4.0 * s2 * scale * nt * mu_md(q.bt2, q.num_paths))
        / (4.0 * nt * s2 * scale * sigma_md(q.bt2, q.num_paths));
    Ok(table.cdf(arg))
}

/// Stage-2 bound by direct substitution into [`srp_bound_somp`]: column
/// normalization scales the effective noise to σ²·N_t/(p₂B_{t,2}) with
/// C_min = h_min. This is the form the allocator's E₂ inverts.
pub fn srp_bound_aod_consistent(table: &TracyWidomTable, q: &SrpQuery) -> Result<f64> {
    if q.p2 <= 0.0 || q.bt2 == 0 {
        return Err(Error::Domain("stage-2 power and beam count must be positive".into()));
    }
    let scale = (q.n_t as f64 / (q.p2 * q.bt2 as f64)).sqrt();
    srp_bound_somp(
        table,
        q.min_gain_modulus,
        q.mip_constant,
        q.num_paths,
        q.noise_std * scale,
        q.bt2,
        q.num_paths,
    )
}

/// [`srp_bound_somp`] across a range of measurement-vector counts; the
/// sequence is non-increasing in d.
pub fn mmv_count_effect(
    table: &TracyWidomTable,
    m: usize,
    d_range: &[usize],
    c_min: f64,
    mu: f64,
    num_paths: usize,
    sigma: f64,
) -> Result<Vec<f64>> {
    d_range
        .iter()
        .map(|&d| srp_bound_somp(table, c_min, mu, num_paths, sigma, m, d))
        .collect()
}

// ---------------------------------------------------------------------------
// Resource allocation
// ---------------------------------------------------------------------------

/// Coherence floor of an n-antenna grid dictionary at oversampling s
/// (zero for a critically sampled grid).
pub fn welch_coherence(num_antennas: usize, oversampling: f64) -> f64 {
    let n = num_antennas as f64;
    let g = (oversampling * n).ceil();
    if g <= n {
        return 0.0;
    }
    ((g - n) / (n * (g - 1.0))).sqrt()
}

/// Exact coherence of the row-truncated grid dictionary: the Dirichlet
/// kernel |sin(pi B k/G) / (B sin(pi k/G))| maximized over grid offsets.
pub fn truncated_grid_coherence(num_rows: usize, grid_size: usize) -> f64 {
    let b = num_rows as f64;
    let g = grid_size as f64;
    let mut mu = 0.0_f64;
    for k in 1..grid_size {
        let f = k as f64 / g;
        let denom = b * (std::f64::consts::PI * f).sin();
        let val = ((std::f64::consts::PI * b * f).sin() / denom).abs();
        mu = mu.max(val);
    }
    mu
}

#[derive(Debug, Clone)]
pub struct AllocationInputs {
    /// Total channel uses K shared by the two stages.
    pub total_channel_uses: usize,
    pub num_rf_chains: usize,
    pub n_r: usize,
    pub n_t: usize,
    pub num_paths: usize,
    pub min_gain_modulus: f64,
    pub noise_std: f64,
    pub eta1: f64,
    pub eta2: f64,
    /// Stage-1 beam count (the optimum keeps it at its minimum).
    pub bt1: usize,
    pub mu1: f64,
    /// Stage-2 coherence; computed from the truncated dictionary when absent.
    pub mu2: Option<f64>,
    pub oversampling: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct AllocationResult {
    pub e1: f64,
    pub e2: f64,
    pub p1: f64,
    pub p2: f64,
    pub bt1: usize,
    pub bt2: usize,
    pub achieved_bounds: (f64, f64),
}

/// Minimum-energy split meeting per-stage SRP targets (eta1, eta2):
/// E₁ = 4σ²N_tN_r(F₂⁻¹(η₁)σ_{N_r,B_t1} + μ_{N_r,B_t1}) / (h²(1-(2L-1)μ₁)²N),
/// then B_{t,2} = K - B_{t,1}N_r/N and E₂ analogously with μ_{B_t2,L}.
pub fn allocate(table: &TracyWidomTable, inp: &AllocationInputs) -> Result<AllocationResult> {
    if !(inp.eta1 > 0.0 && inp.eta1 < 1.0 && inp.eta2 > 0.0 && inp.eta2 < 1.0) {
        return Err(Error::Domain("targets must lie in (0,1)".into()));
    }
    if inp.noise_std <= 0.0 || inp.min_gain_modulus <= 0.0 {
        return Err(Error::Domain("noise std and minimum gain must be positive".into()));
    }
    if (inp.bt1 * inp.n_r) % inp.num_rf_chains != 0 {
        return Err(Error::Config(format!(
            "stage-1 channel uses: {} not divisible by N = {}",
            inp.bt1 * inp.n_r,
            inp.num_rf_chains
        )));
    }
    let stage1_uses = inp.bt1 * inp.n_r / inp.num_rf_chains;
    if inp.total_channel_uses <= stage1_uses {
        return Err(Error::InfeasibleAllocation(format!(
            "K = {} leaves no channel uses for stage 2",
            inp.total_channel_uses
        )));
    }
    let bt2 = inp.total_channel_uses - stage1_uses;
    if bt2 < inp.num_paths {
        return Err(Error::InfeasibleAllocation(format!(
            "stage-2 beam count {bt2} below path count {}",
            inp.num_paths
        )));
    }

    let l2 = 2.0 * inp.num_paths as f64 - 1.0;
    let lin1 = 1.0 - l2 * inp.mu1;
    if lin1 <= 0.0 {
        return Err(Error::InfeasibleAllocation(format!(
            "stage-1 coherence {} violates the bound hypothesis",
            inp.mu1
        )));
    }
    let mu2 = match inp.mu2 {
        Some(v) => v,
        None => {
            let grid = (inp.oversampling * inp.n_t as f64).ceil() as usize;
            truncated_grid_coherence(bt2, grid)
        }
    };
    let lin2 = 1.0 - l2 * mu2;
    if lin2 <= 0.0 {
        return Err(Error::InfeasibleAllocation(format!(
            "stage-2 coherence {mu2} violates the bound hypothesis"
        )));
    }

    let s2 = inp.noise_std * inp.noise_std;
    let h2 = inp.min_gain_modulus * inp.min_gain_modulus;
    let (n_r, n_t, n) = (inp.n_r as f64, inp.n_t as f64, inp.num_rf_chains as f64);

    let q1 = table.inverse(inp.eta1)?;
    let e1 = 4.0 * s2 * n_t * n_r * (q1 * sigma_md(inp.n_r, inp.bt1) + mu_md(inp.n_r, inp.bt1))
        / (h2 * lin1 * lin1 * n);
    let p1 = e1 * n / (inp.bt1 as f64 * n_r);

    let q2 = table.inverse(inp.eta2)?;
    let e2 = 4.0 * s2 * n_t * (q2 * sigma_md(bt2, inp.num_paths) + mu_md(bt2, inp.num_paths))
        / (h2 * lin2 * lin2);
    let p2 = e2 / bt2 as f64;

    if !(e1.is_finite() && e2.is_finite()) || e1 <= 0.0 || e2 <= 0.0 {
        return Err(Error::InfeasibleAllocation(format!(
            "allocation produced energies ({e1}, {e2})"
        )));
    }

    let query = SrpQuery {
        num_paths: inp.num_paths,
        mip_constant: inp.mu1,
        min_gain_modulus: inp.min_gain_modulus,
        noise_std: inp.noise_std,
        p1,
        bt1: inp.bt1,
        n_r: inp.n_r,
        n_t: inp.n_t,
        p2,
        bt2,
    };
    let achieved1 = srp_bound_aoa(table, &query)?;
    let achieved2 = srp_bound_aod_consistent(
        table,
        &SrpQuery { mip_constant: mu2, ..query },
    )?;
    Ok(AllocationResult {
        e1,
        e2,
        p1,
        p2,
        bt1: inp.bt1,
        bt2,
        achieved_bounds: (achieved1, achieved2),
    })
}
