//! Fast fading: ergodic weighted sum rate with time-invariant beamformers.
//!
//! Three routes to a good point of the ergodic problem:
//!
//! * stochastic successive convex approximation with an exact slack
//!   penalty ([`run_ssca`]), one channel sample per iteration;
//! * the concave-convex procedure on the deterministic approximation that
//!   moves the expectation inside the logarithm, for correlated channels
//!   ([`cccp_correlated`]) and over scalar layer powers for i.i.d. channels
//!   ([`cccp_iid`]);
//! * a rate LP ([`rate_lp`]) whose right-hand sides are Monte-Carlo ergodic
//!   rates, turning any beamformers into rates that are feasible up to
//!   sampling error.
//!
//! Programs are normalized as in [`crate::slow`]: beamformers by `√P`, noise
//! to `σ²/P`, rates and slacks in units of `B`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::beamformer::BeamformerSet;
use crate::channel::{derive_seed, sample_realization, ChannelRealization, ChannelStatistics, RngStream};
use crate::convex::{self, Atom, Constraint, ConvexProgram, LinearForm, SolveOptions, VariableSpace};
use crate::error::{Error, Result};
use crate::math;
use crate::model::{DecodeSubset, RateAllocation, SplitStructure};
use crate::slow::{
    self, layer_vectors, signal_interference, CovarianceGains, GainModel, Layout, LinearizedProgram, SlowIterate, SlowParams,
    SlowSolution, INIT_POWER_FRACTION, INIT_SLACK,
};

// ---------------------------------------------------------------------------
// Monte-Carlo ergodic rates.

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

/// Monte-Carlo budget. Antithetic sampling pairs each white draw
/// `√E·e^{jθ}` (`E = -ln U`) with `√(-ln(1-U))·e^{j(θ+π)}`; both are `CN(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MonteCarlo {
    /// Total channel draws, partners included.
    pub samples: usize,
    pub antithetic: bool,
}

impl MonteCarlo {
    pub const fn plain(samples: usize) -> Self {
        MonteCarlo {
            samples,
            antithetic: false,
        }
    }

    pub const fn antithetic(samples: usize) -> Self {
        MonteCarlo {
            samples,
            antithetic: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::InvalidParameter("Monte-Carlo sample count must be positive".into()));
        }
        if self.antithetic && self.samples % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "antithetic sampling needs an even sample count, got {}",
                self.samples
            )));
        }
        Ok(())
    }
}

impl Default for MonteCarlo {
    fn default() -> Self {
        MonteCarlo::antithetic(2000)
    }
}

/// Uniform on the open interval `(0, 1)`.
fn open_unit<R: rand_core::RngCore>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

fn polar_normal(u: f64, v: f64) -> Complex64 {
    let r = math::sqrt(-math::ln(u));
    let a = 2.0 * core::f64::consts::PI * v;
    Complex64::new(r * math::cos(a), r * math::sin(a))
}

/// Channel draws of user `k` (0-based), indexed `[n][sample]`. Each antenna
/// has its own stream, so entry `a` of a draw does not depend on the array size.
fn user_draws(stats: &ChannelStatistics, k: usize, mc: MonteCarlo, stream: RngStream) -> Vec<Vec<Vec<Complex64>>> {
    let m = stats.antennas();
    (0..stats.subcarriers())
        .map(|n| {
            let mut white = vec![Vec::with_capacity(m); mc.samples];
            for a in 0..m {
                let sub = RngStream {
                    seed: derive_seed(stream.seed, &[stream.id.packed(), a as u64]),
                    id: stream.id,
                };
                let mut rng = sub.at(k, n).rng();
                let mut s = 0;
                while s < mc.samples {
                    let u = open_unit(&mut rng);
                    let v = open_unit(&mut rng);
                    white[s].push(polar_normal(u, v));
                    s += 1;
                    if mc.antithetic {
                        white[s].push(polar_normal(1.0 - u, v + 0.5));
                        s += 1;
                    }
                }
            }
            white.into_iter().map(|g| stats.color(k, n, g)).collect()
        })
        .collect()
}

fn estimate(values: &[f64], antithetic: bool) -> Estimate {
    let units: Vec<f64> = if antithetic {
        values.chunks(2).map(|p| 0.5 * (p[0] + p[1])).collect()
    } else {
        values.to_vec()
    };
    let n = units.len() as f64;
    let mean = units.iter().sum::<f64>() / n;
    if units.len() < 2 {
        return Estimate { mean, std_err: 0.0 };
    }
    let var = units.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Estimate {
        mean,
        std_err: math::sqrt(var / n),
    }
}

fn check_fast_dims(w: &BeamformerSet, stats: &ChannelStatistics, structure: &SplitStructure) -> Result<()> {
    if stats.users() != structure.users()
        || w.subcarriers() != stats.subcarriers()
        || w.antennas() != stats.antennas()
        || w.layers() != structure.layers().len()
    {
        return Err(Error::Dimension(format!(
            "beamformers N={} L={} M={} vs statistics K={} N={} M={} and structure K={} L={}",
            w.subcarriers(),
            w.layers(),
            w.antennas(),
            stats.users(),
            stats.subcarriers(),
            stats.antennas(),
            structure.users(),
            structure.layers().len()
        )));
    }
    Ok(())
}

/// Per-sample `B Σ_n log₂(1 + S/(σ² + I))` for each `(user, subset)` of `user`.
#[allow(clippy::too_many_arguments)]
fn pair_samples(
    w: &BeamformerSet,
    stats: &ChannelStatistics,
    structure: &SplitStructure,
    user: usize,
    subsets: &[DecodeSubset],
    system: &SlowParams,
    mc: MonteCarlo,
    stream: RngStream,
) -> Result<Vec<Vec<f64>>> {
    let interferers = structure.interfering_layers(user)?;
    let draws = user_draws(stats, user - 1, mc, stream);
    let mut out = vec![vec![0.0; mc.samples]; subsets.len()];
    let mut gains = vec![0.0; w.layers()];
    for (n, per_n) in draws.iter().enumerate() {
        for (s, h) in per_n.iter().enumerate() {
            for (l, g) in gains.iter_mut().enumerate() {
                *g = crate::linalg::abs2_inner(h, w.get(n, l));
            }
            let i: f64 = interferers.iter().map(|&l| gains[l]).sum();
            for (x, row) in subsets.iter().zip(out.iter_mut()) {
                let sig: f64 = x.layers.iter().map(|&l| gains[l]).sum();
                row[s] += math::log2(1.0 + sig / (system.noise + i));
            }
        }
    }
    for row in &mut out {
        row.iter_mut().for_each(|v| *v *= system.bandwidth);
    }
    Ok(out)
}

/// Monte-Carlo estimate of `B Σ_n E[log₂(1 + Σ_{G∈X}|h^H w_G|² / (σ² + Σ_{G∌k}|h^H w_G|²))]`
/// in bits/s for user `user` (1-based). Deterministic given `stream`.
#[allow(clippy::too_many_arguments)]
pub fn ergodic_rate_rhs(
    w: &BeamformerSet,
    stats: &ChannelStatistics,
    structure: &SplitStructure,
    user: usize,
    subset: &DecodeSubset,
    system: &SlowParams,
    mc: MonteCarlo,
    stream: RngStream,
) -> Result<Estimate> {
    mc.validate()?;
    check_fast_dims(w, stats, structure)?;
    let rows = pair_samples(w, stats, structure, user, core::slice::from_ref(subset), system, mc, stream)?;
    Ok(estimate(&rows[0], mc.antithetic))
}

/// [`ergodic_rate_rhs`] for every decode pair in [`slow::decode_pairs`]
/// order; the subsets of one user share their channel draws.
pub fn ergodic_rates(
    w: &BeamformerSet,
    stats: &ChannelStatistics,
    structure: &SplitStructure,
    system: &SlowParams,
    mc: MonteCarlo,
    stream: RngStream,
) -> Result<Vec<Estimate>> {
    mc.validate()?;
    check_fast_dims(w, stats, structure)?;
    let mut out = Vec::new();
    for user in 1..=structure.users() {
        let subsets = structure.decode_subsets(user)?;
        let rows = pair_samples(w, stats, structure, user, &subsets, system, mc, stream)?;
        out.extend(rows.iter().map(|r| estimate(r, mc.antithetic)));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Rate LP.

/// Rates maximizing the weighted sum rate inside given decode-pair bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct RateLpSolution {
    pub rates: RateAllocation,
    /// Weighted sum rate in bits/s.
    pub wsr: f64,
    /// Ergodic right-hand sides in bits/s, decode-pair order.
    pub rhs: Vec<Estimate>,
}

/// Maximizes `Σ α_S R_S` over `R ≥ 0` with `Σ_{G∈X} R̃_G ≤ rhs` per decode
/// pair (bits/s, [`slow::decode_pairs`] order). Splits on a layer of a pair
/// with `rhs ≤ 0` are fixed at zero, so the remaining LP has an interior.
pub fn rate_lp_from_rhs(
    structure: &SplitStructure,
    weights: &[f64],
    rhs: &[f64],
    bandwidth: f64,
    solver: &SolveOptions,
) -> Result<RateAllocation> {
    let pairs = slow::decode_pairs(structure)?;
    if rhs.len() != pairs.len() || weights.len() != structure.groups().len() {
        return Err(Error::Dimension(format!(
            "{} bounds for {} decode pairs, {} weights for {} groups",
            rhs.len(),
            pairs.len(),
            weights.len(),
            structure.groups().len()
        )));
    }
    let splits = structure.splits();
    let in_pair = |x: &DecodeSubset, s: usize| x.layers.contains(&splits[s].1);
    let mut free = vec![true; splits.len()];
    for ((_, x), &b) in pairs.iter().zip(rhs) {
        if !(b > 0.0) {
            for (s, f) in free.iter_mut().enumerate() {
                if in_pair(x, s) {
                    *f = false;
                }
            }
        }
    }
    let vars: Vec<usize> = (0..splits.len()).filter(|&s| free[s]).collect();
    let mut out = vec![0.0; splits.len()];
    if vars.is_empty() {
        return RateAllocation::new(structure, out);
    }

    let mut space = VariableSpace::new();
    let r = space.add("r", vars.len())?;
    let mut prog = ConvexProgram::new(space);
    prog.set_objective(&LinearForm::new(
        vars.iter()
            .enumerate()
            .map(|(i, &s)| (r.at(i), weights[splits[s].0]))
            .collect(),
        0.0,
    ))?;
    let mut fill = f64::INFINITY;
    for ((_, x), &b) in pairs.iter().zip(rhs) {
        let members: Vec<usize> = (0..vars.len()).filter(|&i| in_pair(x, vars[i])).collect();
        if members.is_empty() {
            continue;
        }
        let bound = b / bandwidth;
        fill = fill.min(bound / members.len() as f64);
        prog.add_constraint(Constraint::affine(LinearForm::new(
            members.iter().map(|&i| (r.at(i), 1.0)).collect(),
            -bound,
        )))?;
    }
    for i in 0..vars.len() {
        prog.add_lower_bound(r.at(i), 0.0)?;
    }
    let start_value = if fill.is_finite() { 0.5 * fill } else { 1.0 };
    let sol = convex::solve(&prog, &vec![start_value; vars.len()], solver)?;
    for (i, &s) in vars.iter().enumerate() {
        out[s] = sol.x[r.at(i)] * bandwidth;
    }
    RateAllocation::from_solver(structure, out)
}

/// Rates for fixed beamformers `w`: Monte-Carlo ergodic right-hand sides,
/// then [`rate_lp_from_rhs`].
pub fn rate_lp(
    w: &BeamformerSet,
    structure: &SplitStructure,
    stats: &ChannelStatistics,
    system: &SlowParams,
    mc: MonteCarlo,
    stream: RngStream,
) -> Result<RateLpSolution> {
    system.validate(structure)?;
    let rhs = ergodic_rates(w, stats, structure, system, mc, stream)?;
    let bounds: Vec<f64> = rhs.iter().map(|e| e.mean).collect();
    let rates = rate_lp_from_rhs(structure, &system.weights, &bounds, system.bandwidth, &system.solver)?;
    let wsr = rates.weighted_sum(structure, &system.weights);
    Ok(RateLpSolution { rates, wsr, rhs })
}

// ---------------------------------------------------------------------------
// Recursive surrogate.

/// Affine function `c + g·w_n` of the normalized real beamformers of one
/// subcarrier (layer-major, interleaved re/im, as in [`pack_beamformers`]).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AffinePiece {
    pub constant: f64,
    pub gradient: Vec<f64>,
}

impl AffinePiece {
    pub fn eval(&self, wn: &[f64]) -> f64 {
        self.constant + self.gradient.iter().zip(wn).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// One sampled surrogate `f̂_{j,n}(w) = piece_{j,n}(w_n) - τ‖w - center‖²`,
/// pieces indexed `pair * N + n`.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateSample {
    pub pieces: Vec<AffinePiece>,
    pub tau: f64,
    pub center: Vec<f64>,
}

impl SurrogateSample {
    pub fn value(&self, subcarriers: usize, pair: usize, n: usize, w: &[f64]) -> f64 {
        let block = w.len() / subcarriers;
        self.pieces[pair * subcarriers + n].eval(&w[n * block..(n + 1) * block]) - self.tau * dist2(w, &self.center)
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `F̄_{j,n}(w) = piece_{j,n}(w_n) - T‖w - c̄‖²` under `F̄ ← (1-ω)F̄ + ω f̂`.
///
/// Every sample uses the same `τ` and center `w^(i-1)` for all `(j, n)`, so a
/// single curvature `T` and center `c̄` is exact for every entry: two
/// quadratics `a‖w-x‖² + b‖w-y‖²` merge into `(a+b)‖w-z‖²` plus the
/// constant `ab/(a+b)‖x-y‖²`, which moves into each piece.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateState {
    subcarriers: usize,
    pieces: Vec<AffinePiece>,
    curvature: f64,
    center: Vec<f64>,
    updates: usize,
}

impl SurrogateState {
    /// `F̄^(0) = 0` over `pairs × subcarriers` entries and `dim` real variables.
    pub fn new(pairs: usize, subcarriers: usize, dim: usize) -> Self {
        let block = dim / subcarriers.max(1);
        SurrogateState {
            subcarriers,
            pieces: vec![
                AffinePiece {
                    constant: 0.0,
                    gradient: vec![0.0; block],
                };
                pairs * subcarriers
            ],
            curvature: 0.0,
            center: vec![0.0; dim],
            updates: 0,
        }
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn piece(&self, pair: usize, n: usize) -> &AffinePiece {
        &self.pieces[pair * self.subcarriers + n]
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn value(&self, pair: usize, n: usize, w: &[f64]) -> f64 {
        let block = self.center.len() / self.subcarriers;
        self.piece(pair, n).eval(&w[n * block..(n + 1) * block]) - self.curvature * dist2(w, &self.center)
    }

    /// `F̄ ← (1 - ω) F̄ + ω f̂`.
    pub fn absorb(&mut self, sample: &SurrogateSample, omega: f64) -> Result<()> {
        if sample.pieces.len() != self.pieces.len() || sample.center.len() != self.center.len() {
            return Err(Error::Dimension("surrogate sample does not match the state".into()));
        }
        if !(omega > 0.0 && omega <= 1.0) || !(sample.tau > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < ω ≤ 1 and τ > 0, got ω = {omega}, τ = {}",
                sample.tau
            )));
        }
        let a = (1.0 - omega) * self.curvature;
        let b = omega * sample.tau;
        let merged = a + b;
        let shift = a * b / merged * dist2(&self.center, &sample.center);
        for (c, z) in self.center.iter_mut().zip(&sample.center) {
            *c = (a * *c + b * z) / merged;
        }
        self.curvature = merged;
        for (p, q) in self.pieces.iter_mut().zip(&sample.pieces) {
            p.constant = (1.0 - omega) * p.constant + omega * q.constant - shift;
            for (g, h) in p.gradient.iter_mut().zip(&q.gradient) {
                *g = (1.0 - omega) * *g + omega * h;
            }
        }
        self.updates += 1;
        Ok(())
    }
}

/// Normalized real vector of `w / √power` (subcarrier, layer, antenna; re/im interleaved).
pub fn pack_beamformers(w: &BeamformerSet, power: f64) -> Vec<f64> {
    let s = 1.0 / math::sqrt(power);
    let mut x = Vec::with_capacity(2 * w.subcarriers() * w.layers() * w.antennas());
    for n in 0..w.subcarriers() {
        for l in 0..w.layers() {
            for z in w.get(n, l) {
                x.push(z.re * s);
                x.push(z.im * s);
            }
        }
    }
    x
}

/// Sampled surrogate at `w_prev` for channel `h`: the first-order expansion
/// of `log₂(1 + S/(ν + I))` minus `τ‖w - w_prev‖²`, so the surrogate rate
/// constraints are convex.
pub fn sample_surrogate(
    h: &ChannelRealization,
    structure: &SplitStructure,
    w_prev: &BeamformerSet,
    system: &SlowParams,
    tau: f64,
) -> Result<SurrogateSample> {
    if h.users() != structure.users() || h.subcarriers() != w_prev.subcarriers() || h.antennas() != w_prev.antennas() {
        return Err(Error::Dimension("channel sample does not match the beamformers".into()));
    }
    let layout = Layout::new(structure, h.subcarriers(), h.antennas())?;
    let x = pack_beamformers(w_prev, system.power);
    let nu = system.normalized_noise();
    let block = 2 * layout.layers * layout.antennas;
    let mut pieces = Vec::with_capacity(layout.pairs.len() * layout.subcarriers);
    for (j, (user, subset)) in layout.pairs.iter().enumerate() {
        let k = user - 1;
        for n in 0..layout.subcarriers {
            let wn = layer_vectors(&layout, &x, n);
            let (s0, i0) = signal_interference(h, &layout, &wn, j, n);
            let total = 2.0 / (math::LN_2 * (nu + i0 + s0));
            let interf = 2.0 / (math::LN_2 * (nu + i0));
            let mut gradient = vec![0.0; block];
            let mut add = |l: usize, weight: f64| {
                let a = h.gain_gradient(k, n, &wn[l]);
                let off = 2 * l * layout.antennas;
                for (i, z) in a.iter().enumerate() {
                    gradient[off + 2 * i] += weight * z.re;
                    gradient[off + 2 * i + 1] += weight * z.im;
                }
            };
            for &l in &subset.layers {
                add(l, total);
            }
            for &l in &layout.interferers[k] {
                add(l, total - interf);
            }
            let x_n = &x[n * block..(n + 1) * block];
            let slope: f64 = gradient.iter().zip(x_n).map(|(a, b)| a * b).sum();
            pieces.push(AffinePiece {
                constant: math::log2(1.0 + s0 / (nu + i0)) - slope,
                gradient,
            });
        }
    }
    Ok(SurrogateSample { pieces, tau, center: x })
}

// ---------------------------------------------------------------------------
// SSCA with exact penalty.

/// Iteration budget, penalty and step-size exponents of [`run_ssca`].
#[derive(Clone, Debug, PartialEq)]
pub struct SscaParams {
    /// Iterations `T` per penalty round.
    pub iterations: usize,
    /// Initial penalty weight `ρ` on the slacks.
    pub rho: f64,
    /// Proximal constant `τ`.
    pub tau: f64,
    /// `ω^(i) = i^{-a_ω}`.
    pub a_omega: f64,
    /// `γ^(i) = i^{-a_γ}`.
    pub a_gamma: f64,
    /// Penalty rounds after the first, each with `ρ` ten times larger.
    pub max_escalations: usize,
    /// Largest acceptable slack, normalized by `B·N`.
    pub slack_tol: f64,
    pub solver: SolveOptions,
}

impl SscaParams {
    /// Defaults with `ρ = 10 Σ α`.
    pub fn new(weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        SscaParams {
            iterations: 200,
            rho: if total > 0.0 { 10.0 * total } else { 10.0 },
            tau: 1e-3,
            a_omega: 0.6,
            a_gamma: 0.9,
            max_escalations: 3,
            slack_tol: 1e-3,
            solver: SolveOptions {
                kkt_tol: 1e-8,
                ..SolveOptions::default()
            },
        }
    }

    /// Enforces `ω → 0`, `Σω = ∞`, `γ → 0`, `Σγ = ∞`, `Σγ² < ∞` and `γ/ω → 0`.
    pub fn validate(&self) -> Result<()> {
        let (w, g) = (self.a_omega, self.a_gamma);
        if !(w > 0.0 && w <= 1.0) {
            return Err(Error::InvalidParameter(format!("a_omega = {w} must lie in (0, 1]")));
        }
        if !(g > w && g <= 1.0 && 2.0 * g > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "a_gamma = {g} must satisfy a_omega < a_gamma <= 1 and a_gamma > 1/2"
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("SSCA needs at least one iteration".into()));
        }
        if !(self.rho > 0.0) || !(self.tau > 0.0) || !(self.slack_tol > 0.0) {
            return Err(Error::InvalidParameter("rho, tau and slack_tol must be positive".into()));
        }
        Ok(())
    }

    pub fn omega(&self, i: usize) -> f64 {
        math::powf(i as f64, -self.a_omega)
    }

    pub fn gamma(&self, i: usize) -> f64 {
        math::powf(i as f64, -self.a_gamma)
    }
}

/// Beamformers, split rates and per-pair slacks (all physical units).
#[derive(Clone, Debug, PartialEq)]
pub struct FastIterate {
    pub w: BeamformerSet,
    pub rates: RateAllocation,
    /// `s_{X,k}` in bits/s, [`slow::decode_pairs`] order.
    pub slack: Vec<f64>,
}

/// Iterate plus surrogate: everything an SSCA step reads and updates.
#[derive(Clone, Debug, PartialEq)]
pub struct SscaState {
    pub iterate: FastIterate,
    pub surrogate: SurrogateState,
}

impl SscaState {
    /// Zero rates and slacks, empty surrogate.
    pub fn new(structure: &SplitStructure, w: BeamformerSet) -> Result<Self> {
        let pairs = slow::decode_pairs(structure)?.len();
        let dim = 2 * w.subcarriers() * w.layers() * w.antennas();
        Ok(SscaState {
            surrogate: SurrogateState::new(pairs, w.subcarriers(), dim),
            iterate: FastIterate {
                rates: RateAllocation::zeros(structure),
                slack: vec![0.0; pairs],
                w,
            },
        })
    }
}

/// One SSCA iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct SscaTraceRow {
    pub round: usize,
    pub iteration: usize,
    pub rho: f64,
    /// `Σ α R - ρ Σ s` of the surrogate problem in bits/s.
    pub objective: f64,
    /// `max s / (B·N)`.
    pub slack_norm: f64,
    pub omega: f64,
    pub gamma: f64,
    pub newton_steps: usize,
}

/// SSCA iteration `i ≥ 1` with the configured step sizes.
pub fn ssca_step(
    state: &mut SscaState,
    h: &ChannelRealization,
    structure: &SplitStructure,
    system: &SlowParams,
    params: &SscaParams,
    i: usize,
) -> Result<SscaTraceRow> {
    if i == 0 {
        return Err(Error::InvalidParameter("SSCA iterations count from 1".into()));
    }
    ssca_step_with(state, h, structure, system, params, params.omega(i), params.gamma(i)).map_err(|e| e.at_iteration(i))
}

/// SSCA iteration with explicit `ω` and `γ`: absorb the sample, solve the
/// penalized surrogate problem, blend `w ← (1-γ) w + γ w̄`.
pub fn ssca_step_with(
    state: &mut SscaState,
    h: &ChannelRealization,
    structure: &SplitStructure,
    system: &SlowParams,
    params: &SscaParams,
    omega: f64,
    gamma: f64,
) -> Result<SscaTraceRow> {
    system.validate(structure)?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!("γ = {gamma} must lie in [0, 1]")));
    }
    let w_prev = &state.iterate.w;
    let sample = sample_surrogate(h, structure, w_prev, system, params.tau)?;
    state.surrogate.absorb(&sample, omega)?;

    let layout = Layout::new(structure, w_prev.subcarriers(), w_prev.antennas())?;
    let (prog, start) = ssca_program(&layout, structure, system, &state.surrogate, params.rho, &sample.center)?;
    let sol = convex::solve(&prog, &start, &params.solver)?;

    let w_len = layout.w_len();
    let s_base = w_len + layout.splits;
    let w_bar = layout.beamformers(&sol.x, math::sqrt(system.power));
    state.iterate.w = state.iterate.w.blend(&w_bar, gamma);
    state.iterate.rates = RateAllocation::from_solver(
        structure,
        (0..layout.splits).map(|s| sol.x[layout.r(s)] * system.bandwidth).collect(),
    )?;
    state.iterate.slack = (0..layout.pairs.len())
        .map(|j| sol.x[s_base + j].max(0.0) * system.bandwidth)
        .collect();
    let slack_norm = state.iterate.slack.iter().fold(0.0f64, |m, s| m.max(*s)) / (system.bandwidth * layout.subcarriers as f64);
    Ok(SscaTraceRow {
        round: 0,
        iteration: state.surrogate.updates(),
        rho: params.rho,
        objective: sol.objective * system.bandwidth,
        slack_norm,
        omega,
        gamma,
        newton_steps: sol.iterations,
    })
}

/// Penalized surrogate problem over `(w, r, s)` and a strictly feasible start.
fn ssca_program(
    layout: &Layout,
    structure: &SplitStructure,
    system: &SlowParams,
    surrogate: &SurrogateState,
    rho: f64,
    w_prev: &[f64],
) -> Result<(ConvexProgram, Vec<f64>)> {
    let nsc = layout.subcarriers;
    let w_len = layout.w_len();
    let pairs = layout.pairs.len();
    let mut space = VariableSpace::new();
    space.add("w", w_len)?;
    space.add("r", layout.splits)?;
    let s_block = space.add("s", pairs)?;
    let mut prog = ConvexProgram::new(space);

    let mut objective = layout.objective(structure, &system.weights);
    for j in 0..pairs {
        objective.push(s_block.at(j), -rho);
    }
    prog.set_objective(&objective)?;

    prog.add_constraint(Constraint::new(vec![
        Atom::Quadratic {
            scale: 1.0,
            forms: (0..w_len).map(|i| LinearForm::var(i, 1.0)).collect(),
        },
        Atom::Affine(LinearForm::constant(-1.0)),
    ]))?;

    // Σ_{G∈X} r̃ - Σ_n F̄_{j,n}(w) - s_j ≤ 0
    let block = w_len / nsc;
    let prox: Vec<LinearForm> = surrogate
        .center()
        .iter()
        .enumerate()
        .map(|(i, c)| LinearForm::new(vec![(i, 1.0)], -c))
        .collect();
    for (j, splits) in layout.pair_splits.iter().enumerate() {
        let mut lin = LinearForm::default();
        for &s in splits {
            lin.push(layout.r(s), 1.0);
        }
        for n in 0..nsc {
            let p = surrogate.piece(j, n);
            lin.constant -= p.constant;
            for (i, g) in p.gradient.iter().enumerate() {
                if *g != 0.0 {
                    lin.push(n * block + i, -g);
                }
            }
        }
        lin.push(s_block.at(j), -1.0);
        prog.add_constraint(Constraint::new(vec![
            Atom::Affine(lin),
            Atom::Quadratic {
                scale: nsc as f64 * surrogate.curvature(),
                forms: prox.clone(),
            },
        ]))?;
    }
    for s in 0..layout.splits {
        prog.add_lower_bound(layout.r(s), 0.0)?;
    }
    for j in 0..pairs {
        prog.add_lower_bound(s_block.at(j), 0.0)?;
    }

    let mut x = vec![0.0; prog.dim()];
    let power: f64 = w_prev.iter().map(|v| v * v).sum();
    let shrink = if power > 1.0 - INIT_SLACK {
        math::sqrt((1.0 - INIT_SLACK) / power)
    } else {
        1.0
    };
    for (xi, wi) in x.iter_mut().zip(w_prev) {
        *xi = wi * shrink;
    }
    for s in 0..layout.splits {
        x[layout.r(s)] = INIT_SLACK;
    }
    let values = convex::evaluate_constraints(&prog, &x)?;
    for j in 0..pairs {
        // Constraint j + 1 (after the power budget) is linear in s_j with slope -1.
        x[s_block.at(j)] = values[j + 1].value.max(0.0) + 1.0;
    }
    Ok((prog, x))
}

/// Output of [`run_ssca`].
#[derive(Clone, Debug, PartialEq)]
pub struct FastSolution {
    /// `(w^(T), R^(T), s^(T))` of the accepted round.
    pub iterate: FastIterate,
    /// `Σ α R^(T)` in bits/s.
    pub wsr: f64,
    pub slack_norm: f64,
    /// Penalty weight of the accepted round.
    pub rho: f64,
    /// Penalty rounds run.
    pub rounds: usize,
    pub trace: Vec<SscaTraceRow>,
    pub newton_steps: usize,
}

fn statistics_start(stats: &ChannelStatistics, structure: &SplitStructure, system: &SlowParams) -> Result<BeamformerSet> {
    let gains = CovarianceGains::new(stats)?;
    let layout = Layout::new(structure, stats.subcarriers(), stats.antennas())?;
    let x = slow::initial_point(&gains, structure, &layout, system.normalized_noise())?;
    Ok(layout.beamformers(&x, math::sqrt(system.power)))
}

/// SSCA from MRT on the statistics at `0.9·P`, with channel sample `i`
/// drawn from `RngStream::for_realization(seed, i)`. When the final slack
/// exceeds `slack_tol`, the run restarts with `ρ` ten times larger.
pub fn run_ssca(
    structure: &SplitStructure,
    stats: &ChannelStatistics,
    system: &SlowParams,
    params: &SscaParams,
    seed: u64,
) -> Result<FastSolution> {
    system.validate(structure)?;
    params.validate()?;
    if stats.users() != structure.users() {
        return Err(Error::Dimension("statistics and structure disagree on K".into()));
    }
    let w0 = statistics_start(stats, structure, system)?;
    run_ssca_from(structure, stats, system, params, seed, &w0)
}

/// [`run_ssca`] from the power-feasible beamformers `w0`.
pub fn run_ssca_from(
    structure: &SplitStructure,
    stats: &ChannelStatistics,
    system: &SlowParams,
    params: &SscaParams,
    seed: u64,
    w0: &BeamformerSet,
) -> Result<FastSolution> {
    system.validate(structure)?;
    params.validate()?;
    check_fast_dims(w0, stats, structure)?;
    if w0.total_power() > system.power * (1.0 + 1e-9) {
        return Err(Error::InvalidParameter("initial beamformers exceed the power budget".into()));
    }
    let mut trace = Vec::new();
    let mut newton_steps = 0;
    let mut rho = params.rho;
    let mut slack_norm = f64::INFINITY;
    for round in 0..=params.max_escalations {
        let round_params = SscaParams {
            rho,
            ..params.clone()
        };
        let mut state = SscaState::new(structure, w0.clone())?;
        for i in 1..=params.iterations {
            let h = sample_realization(stats, RngStream::for_realization(seed, i as u32));
            let mut row = ssca_step(&mut state, &h, structure, system, &round_params, i)?;
            row.round = round;
            newton_steps += row.newton_steps;
            slack_norm = row.slack_norm;
            trace.push(row);
        }
        if slack_norm <= params.slack_tol {
            let wsr = state.iterate.rates.weighted_sum(structure, &system.weights);
            return Ok(FastSolution {
                iterate: state.iterate,
                wsr,
                slack_norm,
                rho,
                rounds: round + 1,
                trace,
                newton_steps,
            });
        }
        rho *= 10.0;
    }
    Err(Error::SlackNotVanishing {
        slack: slack_norm,
        rounds: params.max_escalations + 1,
    })
}

// ---------------------------------------------------------------------------
// CCCP on the statistics-based approximation, correlated channels.

/// Feasible start for [`cccp_correlated`]: MRT along the principal
/// eigenvector of each layer's summed covariance at `0.9·P`.
pub fn init_feasible_correlated(
    stats: &ChannelStatistics,
    structure: &SplitStructure,
    params: &SlowParams,
) -> Result<SlowIterate> {
    params.validate(structure)?;
    let gains = CovarianceGains::new(stats)?;
    let layout = Layout::new(structure, stats.subcarriers(), stats.antennas())?;
    let x = slow::initial_point(&gains, structure, &layout, params.normalized_noise())?;
    slow::unpack(structure, &layout, &x, params)
}

/// Convex approximation around `previous` of the deterministic problem with
/// `w^H Q w` in place of `|h^H w|²`.
pub fn linearized_program_correlated(
    stats: &ChannelStatistics,
    structure: &SplitStructure,
    previous: &SlowIterate,
    params: &SlowParams,
) -> Result<LinearizedProgram> {
    params.validate(structure)?;
    let gains = CovarianceGains::new(stats)?;
    let layout = Layout::new(structure, stats.subcarriers(), stats.antennas())?;
    let x = slow::pack_iterate(structure, previous, params)?;
    slow::build_linearized(&gains, structure, &layout, &x, params.normalized_noise(), &params.weights)
}

/// CCCP on the covariance-based approximation; `init` defaults to
/// [`init_feasible_correlated`]. The returned rates are those of the
/// approximation; [`rate_lp`] turns the beamformers into ergodic rates.
pub fn cccp_correlated(
    stats: &ChannelStatistics,
    structure: &SplitStructure,
    params: &SlowParams,
    init: Option<&SlowIterate>,
) -> Result<SlowSolution> {
    if stats.users() != structure.users() {
        return Err(Error::Dimension("statistics and structure disagree on K".into()));
    }
    let gains = CovarianceGains::new(stats)?;
    slow::cccp_with_model(&gains, structure, params, init)
}

// ---------------------------------------------------------------------------
// CCCP over scalar layer powers, i.i.d. channels.

/// Output of [`cccp_iid`].
#[derive(Clone, Debug, PartialEq)]
pub struct IidSolution {
    pub subcarriers: usize,
    pub layers: usize,
    /// `t_{G,n} = ‖w_{G,n}‖²` in watts, indexed `n * L + layer`.
    pub powers: Vec<f64>,
    pub rates: RateAllocation,
    /// Weighted sum rate of the approximation in bits/s.
    pub wsr: f64,
    /// Objective per accepted iterate, init first, in bits/s/Hz.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

struct IidLayout {
    subcarriers: usize,
    layers: usize,
    splits: usize,
    pairs: Vec<(usize, DecodeSubset)>,
    interferers: Vec<Vec<usize>>,
    pair_splits: Vec<Vec<usize>>,
}

impl IidLayout {
    fn new(structure: &SplitStructure, subcarriers: usize) -> Result<Self> {
        let base = Layout::new(structure, subcarriers, 1)?;
        Ok(IidLayout {
            subcarriers,
            layers: base.layers,
            splits: base.splits,
            pairs: base.pairs,
            interferers: base.interferers,
            pair_splits: base.pair_splits,
        })
    }

    fn t(&self, n: usize, l: usize) -> usize {
        n * self.layers + l
    }

    fn r(&self, s: usize) -> usize {
        self.subcarriers * self.layers + s
    }

    fn dim(&self) -> usize {
        self.subcarriers * self.layers + self.splits
    }

    /// Signal and interference power of pair `j` on subcarrier `n`.
    fn powers(&self, x: &[f64], j: usize, n: usize) -> (f64, f64) {
        let (user, subset) = &self.pairs[j];
        let s = subset.layers.iter().map(|&l| x[self.t(n, l)]).sum();
        let i = self.interferers[user - 1].iter().map(|&l| x[self.t(n, l)]).sum();
        (s, i)
    }

    fn objective(&self, structure: &SplitStructure, weights: &[f64]) -> LinearForm {
        LinearForm::new(
            structure
                .splits()
                .iter()
                .enumerate()
                .filter(|(_, (si, _))| weights[*si] != 0.0)
                .map(|(s, (si, _))| (self.r(s), weights[*si]))
                .collect(),
            0.0,
        )
    }
}

/// Program linearized at `prev`; `noise` is `σ²/(λP)`. Rate constraint `j`
/// has index `j + 1`.
fn iid_program(layout: &IidLayout, structure: &SplitStructure, weights: &[f64], prev: &[f64], noise: f64) -> Result<ConvexProgram> {
    let nt = layout.subcarriers * layout.layers;
    let mut space = VariableSpace::new();
    space.add("t", nt)?;
    space.add("r", layout.splits)?;
    let mut prog = ConvexProgram::new(space);
    prog.set_objective(&layout.objective(structure, weights))?;
    prog.add_constraint(Constraint::affine(LinearForm::new((0..nt).map(|i| (i, 1.0)).collect(), -1.0)))?;
    for (j, (user, subset)) in layout.pairs.iter().enumerate() {
        let interferers = &layout.interferers[user - 1];
        let mut lin = LinearForm::default();
        for &s in &layout.pair_splits[j] {
            lin.push(layout.r(s), 1.0);
        }
        let mut terms = Vec::with_capacity(layout.subcarriers);
        for n in 0..layout.subcarriers {
            let mut f = LinearForm::constant(noise);
            for &l in subset.layers.iter().chain(interferers) {
                f.push(layout.t(n, l), 1.0);
            }
            terms.push((1.0, f));
            // Tangent of log₂(noise + I) at prev.
            let (_, i0) = layout.powers(prev, j, n);
            let d = noise + i0;
            let slope = 1.0 / (math::LN_2 * d);
            lin.constant += math::log2(d) - slope * i0;
            for &l in interferers {
                lin.push(layout.t(n, l), slope);
            }
        }
        prog.add_constraint(Constraint::new(vec![Atom::Affine(lin), Atom::NegLog { terms }]))?;
    }
    for i in 0..layout.dim() {
        prog.add_lower_bound(i, 0.0)?;
    }
    Ok(prog)
}

/// Equal powers at `0.9·P` and rates filled to `1 - δ` of the tightest pair.
fn iid_initial_point(layout: &IidLayout, noise: f64) -> Result<Vec<f64>> {
    let mut x = vec![0.0; layout.dim()];
    let t0 = INIT_POWER_FRACTION / (layout.subcarriers * layout.layers) as f64;
    x[..layout.subcarriers * layout.layers].iter_mut().for_each(|t| *t = t0);
    let mut fill = f64::INFINITY;
    for (j, splits) in layout.pair_splits.iter().enumerate() {
        let supply: f64 = (0..layout.subcarriers)
            .map(|n| {
                let (s, i) = layout.powers(&x, j, n);
                math::log2(1.0 + s / (noise + i))
            })
            .sum();
        if !splits.is_empty() {
            fill = fill.min(supply / splits.len() as f64);
        }
    }
    let fill = if fill.is_finite() { (1.0 - INIT_SLACK) * fill } else { 0.0 };
    for s in 0..layout.splits {
        x[layout.r(s)] = fill;
    }
    Ok(x)
}

/// Powers shrunk by `1 - δ`, rates shrunk inside the linearized supply of
/// every pair.
fn iid_interior_start(layout: &IidLayout, prog: &ConvexProgram, prev: &[f64]) -> Result<Vec<f64>> {
    let delta = INIT_SLACK;
    let nt = layout.subcarriers * layout.layers;
    let mut x = prev.to_vec();
    // Uniform shrinking keeps every SINR positive, and the tangent
    // majorizes log₂(ν + I), so each linearized supply stays positive.
    for t in &mut x[..nt] {
        *t = (1.0 - delta) * t.max(f64::MIN_POSITIVE);
    }
    for s in 0..layout.splits {
        x[layout.r(s)] = 0.0;
    }
    let values = convex::evaluate_constraints(prog, &x)?;
    let mut ratio = 1.0f64;
    let mut fill = f64::INFINITY;
    for (j, splits) in layout.pair_splits.iter().enumerate() {
        if splits.is_empty() {
            continue;
        }
        let supply = -values[j + 1].value;
        if !(supply > 0.0) {
            return Err(Error::InvalidParameter(format!("decode pair {j} has no positive rate supply")));
        }
        let load: f64 = splits.iter().map(|&s| prev[layout.r(s)].max(0.0)).sum();
        if load > 0.0 {
            ratio = ratio.min(supply / load);
        }
        fill = fill.min(supply / splits.len() as f64);
    }
    let fill = if fill.is_finite() { fill } else { 0.0 };
    for s in 0..layout.splits {
        let r = prev[layout.r(s)].max(0.0);
        x[layout.r(s)] = (1.0 - delta) * ((1.0 - delta) * ratio * r + delta * fill);
    }
    Ok(x)
}

/// CCCP over `t_{G,n} = ‖w_{G,n}‖²` for `Q_{k,n} = λ I`. The result does
/// not depend on the number of antennas.
pub fn cccp_iid(structure: &SplitStructure, lambda: f64, subcarriers: usize, params: &SlowParams) -> Result<IidSolution> {
    params.validate(structure)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda = {lambda} must be positive")));
    }
    if subcarriers == 0 {
        return Err(Error::Dimension("need at least one subcarrier".into()));
    }
    let layout = IidLayout::new(structure, subcarriers)?;
    let noise = params.normalized_noise() / lambda;
    let objective = layout.objective(structure, &params.weights);
    let mut x = iid_initial_point(&layout, noise)?;
    let mut obj = objective.eval(&x);
    let mut trace = vec![obj];
    let mut iterations = 0;
    let mut converged = params.weights.iter().all(|a| *a == 0.0);
    if !converged {
        for it in 1..=params.max_iter {
            let prog = iid_program(&layout, structure, &params.weights, &x, noise).map_err(|e| e.at_iteration(it))?;
            let start = iid_interior_start(&layout, &prog, &x).map_err(|e| e.at_iteration(it))?;
            let sol = convex::solve(&prog, &start, &params.solver).map_err(|e| e.at_iteration(it))?;
            iterations = it;
            if sol.objective < obj {
                converged = true;
                break;
            }
            let change: f64 = sol.x.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
            let scale = x.iter().map(|v| v * v).sum::<f64>().max(1.0);
            let improvement = sol.objective - obj;
            x = sol.x;
            obj = sol.objective;
            trace.push(obj);
            if improvement <= params.objective_tol || math::sqrt(change / scale) <= params.epsilon {
                converged = true;
                break;
            }
        }
    }
    let nt = subcarriers * layout.layers;
    let rates = RateAllocation::from_solver(
        structure,
        (0..layout.splits).map(|s| x[layout.r(s)] * params.bandwidth).collect(),
    )?;
    let wsr = rates.weighted_sum(structure, &params.weights);
    Ok(IidSolution {
        subcarriers,
        layers: layout.layers,
        powers: x[..nt].iter().map(|t| t.max(0.0) * params.power).collect(),
        rates,
        wsr,
        objective_trace: trace,
        iterations,
        converged,
    })
}

/// `w_{G,n} = √t_{G,n} e₁`: any direction with the right norm is optimal for
/// the i.i.d. approximation, and a fixed one is reproducible.
pub fn recover_w(solution: &IidSolution, antennas: usize) -> Result<BeamformerSet> {
    if antennas == 0 {
        return Err(Error::Dimension("need at least one antenna".into()));
    }
    let vectors = solution
        .powers
        .iter()
        .map(|t| {
            let mut v = vec![Complex64::new(0.0, 0.0); antennas];
            v[0] = Complex64::new(math::sqrt(t.max(0.0)), 0.0);
            v
        })
        .collect();
    BeamformerSet::new(solution.subcarriers, solution.layers, antennas, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CMatrix;
    use crate::model::{LayerPolicy, UserSet};
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn single_user() -> SplitStructure {
        SplitStructure::from_groups(1, vec![UserSet::singleton(1).unwrap()], LayerPolicy::NoSplit).unwrap()
    }

    /// Two users with private units and one common unit, all layers.
    fn two_user() -> SplitStructure {
        let g = vec![
            UserSet::singleton(1).unwrap(),
            UserSet::singleton(2).unwrap(),
            UserSet::from_users([1, 2]).unwrap(),
        ];
        SplitStructure::from_groups(2, g, LayerPolicy::FullGeneral).unwrap()
    }

    fn uniform(rng: &mut ChaCha8Rng) -> f64 {
        (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// `∫₀^∞ log₂(1 + a x) e^{-x} dx` by composite Simpson on `[0, 60]`.
    fn exp_log_quadrature(a: f64) -> f64 {
        let (n, top) = (200_000, 60.0);
        let h = top / n as f64;
        let f = |x: f64| (1.0 + a * x).log2() * (-x).exp();
        let mut acc = f(0.0) + f(top);
        for i in 1..n {
            acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn zero_beamformers_give_zero_rate() {
        let s = single_user();
        let stats = ChannelStatistics::iid(1, 2, 2, 1.0).unwrap();
        let w = BeamformerSet::zeros(2, 1, 2);
        let p = SlowParams::new(1.0, 1.0, 0.1, vec![1.0]);
        let x = &s.decode_subsets(1).unwrap()[0];
        let e = ergodic_rate_rhs(&w, &stats, &s, 1, x, &p, MonteCarlo::plain(50), RngStream::for_realization(1, 0)).unwrap();
        assert_eq!(e.mean, 0.0);
        assert_eq!(e.std_err, 0.0);
    }

    #[test]
    fn ergodic_rate_matches_quadrature() {
        let s = single_user();
        let (lambda, t, sigma2, bw): (f64, f64, f64, f64) = (1.5, 0.8, 0.2, 2.0);
        let stats = ChannelStatistics::iid(1, 1, 1, lambda).unwrap();
        let w = BeamformerSet::new(1, 1, 1, vec![vec![Complex64::from_polar(t.sqrt(), 0.3)]]).unwrap();
        let p = SlowParams::new(1.0, bw, sigma2, vec![1.0]);
        let x = &s.decode_subsets(1).unwrap()[0];
        let oracle = bw * exp_log_quadrature(lambda * t / sigma2);
        for mc in [MonteCarlo::plain(10_000), MonteCarlo::antithetic(10_000)] {
            let e = ergodic_rate_rhs(&w, &stats, &s, 1, x, &p, mc, RngStream::for_realization(11, 0)).unwrap();
            assert!((e.mean - oracle).abs() <= 3.0 * e.std_err, "{e:?} vs {oracle}");
        }
    }

    #[test]
    fn doubling_samples_shrinks_error_by_sqrt2() {
        let s = single_user();
        let stats = ChannelStatistics::iid(1, 1, 2, 1.0).unwrap();
        let w = BeamformerSet::new(1, 1, 2, vec![vec![Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.5)]]).unwrap();
        let p = SlowParams::new(1.0, 1.0, 0.1, vec![1.0]);
        let x = &s.decode_subsets(1).unwrap()[0];
        let stream = RngStream::for_realization(5, 0);
        let a = ergodic_rate_rhs(&w, &stats, &s, 1, x, &p, MonteCarlo::plain(4000), stream).unwrap();
        let b = ergodic_rate_rhs(&w, &stats, &s, 1, x, &p, MonteCarlo::plain(8000), stream).unwrap();
        let ratio = a.std_err / b.std_err;
        assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn ergodic_rates_are_deterministic_and_single_sample_has_no_error() {
        let s = two_user();
        let stats = ChannelStatistics::iid(2, 2, 2, 1.0).unwrap();
        let mut w = BeamformerSet::zeros(2, s.layers().len(), 2);
        w.get_mut(1, 0)[0] = Complex64::new(0.5, 0.1);
        w.get_mut(0, 2)[1] = Complex64::new(0.2, -0.3);
        let p = SlowParams::new(1.0, 1.0, 0.1, vec![1.0; 3]);
        let stream = RngStream::for_realization(3, 1);
        let a = ergodic_rates(&w, &stats, &s, &p, MonteCarlo::antithetic(64), stream).unwrap();
        let b = ergodic_rates(&w, &stats, &s, &p, MonteCarlo::antithetic(64), stream).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), slow::decode_pairs(&s).unwrap().len());
        let one = ergodic_rates(&w, &stats, &s, &p, MonteCarlo::plain(1), stream).unwrap();
        assert!(one.iter().all(|e| e.std_err == 0.0));
        assert!(MonteCarlo::antithetic(3).validate().is_err());
    }

    #[test]
    fn antithetic_partners_have_opposite_phase() {
        let stats = ChannelStatistics::iid(1, 1, 1, 1.0).unwrap();
        let d = user_draws(&stats, 0, MonteCarlo::antithetic(4), RngStream::for_realization(3, 0));
        for pair in d[0].chunks(2) {
            let ratio = pair[1][0] / pair[0][0];
            assert!(ratio.re < 0.0 && ratio.im.abs() < 1e-12 * ratio.norm().max(1.0));
        }
    }

    #[test]
    fn surrogate_aggregation_matches_explicit_history() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (pairs, nsc, dim) = (3, 2, 8);
        let block = dim / nsc;
        let mut state = SurrogateState::new(pairs, nsc, dim);
        let mut history: Vec<(SurrogateSample, f64)> = Vec::new();
        for i in 1..=10usize {
            let sample = SurrogateSample {
                pieces: (0..pairs * nsc)
                    .map(|_| AffinePiece {
                        constant: uniform(&mut rng) * 4.0 - 2.0,
                        gradient: (0..block).map(|_| uniform(&mut rng) * 2.0 - 1.0).collect(),
                    })
                    .collect(),
                tau: 0.1 + uniform(&mut rng),
                center: (0..dim).map(|_| uniform(&mut rng) * 2.0 - 1.0).collect(),
            };
            let omega = (i as f64).powf(-0.6);
            state.absorb(&sample, omega).unwrap();
            // Weight of every earlier sample shrinks by (1 - ω).
            history.iter_mut().for_each(|(_, c)| *c *= 1.0 - omega);
            history.push((sample, omega));
            for _ in 0..5 {
                let w: Vec<f64> = (0..dim).map(|_| uniform(&mut rng) * 3.0 - 1.5).collect();
                for j in 0..pairs {
                    for n in 0..nsc {
                        let explicit: f64 = history.iter().map(|(f, c)| c * f.value(nsc, j, n, &w)).sum();
                        let got = state.value(j, n, &w);
                        assert!((got - explicit).abs() <= 1e-10 * explicit.abs().max(1.0), "{got} vs {explicit}");
                    }
                }
            }
        }
        assert_eq!(state.updates(), 10);
    }

    #[test]
    fn sampled_surrogate_matches_rate_and_gradient_at_center() {
        let s = two_user();
        let stats = ChannelStatistics::iid(2, 2, 2, 1.0).unwrap();
        let h = sample_realization(&stats, RngStream::for_realization(9, 0));
        let p = SlowParams::new(2.0, 1.0, 0.3, vec![1.0; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vectors = (0..2 * s.layers().len())
            .map(|_| (0..2).map(|_| Complex64::new(uniform(&mut rng) - 0.5, uniform(&mut rng) - 0.5)).collect())
            .collect();
        let w = BeamformerSet::new(2, s.layers().len(), 2, vectors).unwrap();
        let sample = sample_surrogate(&h, &s, &w, &p, 0.5).unwrap();
        let layout = Layout::new(&s, 2, 2).unwrap();
        let x0 = pack_beamformers(&w, p.power);
        let exact = |x: &[f64], j: usize, n: usize| {
            let (user, subset) = &layout.pairs[j];
            let wn = layer_vectors(&layout, x, n);
            let gain = |l: usize| crate::linalg::abs2_inner(h.h(user - 1, n), &wn[l]);
            let sig: f64 = subset.layers.iter().map(|&l| gain(l)).sum();
            let int: f64 = layout.interferers[user - 1].iter().map(|&l| gain(l)).sum();
            (1.0 + sig / (p.normalized_noise() + int)).log2()
        };
        let step = 1e-6;
        for j in 0..layout.pairs.len() {
            for n in 0..2 {
                assert!((sample.value(2, j, n, &x0) - exact(&x0, j, n)).abs() < 1e-12);
                for i in 0..x0.len() {
                    let mut up = x0.clone();
                    let mut dn = x0.clone();
                    up[i] += step;
                    dn[i] -= step;
                    let fd = (exact(&up, j, n) - exact(&dn, j, n)) / (2.0 * step);
                    let block = x0.len() / 2;
                    let g = if i / block == n { sample.pieces[j * 2 + n].gradient[i % block] } else { 0.0 };
                    assert!((fd - g).abs() < 1e-6 * fd.abs().max(1.0), "pair {j} n {n} i {i}: {fd} vs {g}");
                }
            }
        }
    }

    #[test]
    fn step_sizes_follow_exponents() {
        let p = SscaParams::new(&[0.5, 0.5]);
        assert_eq!(p.rho, 10.0);
        assert!((p.omega(4) - 4f64.powf(-0.6)).abs() < 1e-15);
        assert!((p.gamma(4) - 4f64.powf(-0.9)).abs() < 1e-15);
        assert!(p.validate().is_ok());
        assert!(SscaParams { a_gamma: 0.5, ..p.clone() }.validate().is_err());
        assert!(SscaParams { a_gamma: 0.55, ..p.clone() }.validate().is_err());
        assert!(SscaParams { a_omega: 0.0, ..p.clone() }.validate().is_err());
        assert!(SscaParams { a_gamma: 1.1, ..p }.validate().is_err());
        assert_eq!(SscaParams::new(&[0.0]).rho, 10.0);
    }

    fn tiny_instance() -> (SplitStructure, SlowParams, SscaParams, ChannelRealization) {
        let s = single_user();
        let p = SlowParams::new(2.0, 3.0, 0.5, vec![1.0]);
        let sp = SscaParams::new(&p.weights);
        let h = ChannelRealization::new(1, 1, 1, vec![vec![Complex64::new(0.8, -0.4)]]).unwrap();
        (s, p, sp, h)
    }

    #[test]
    fn blend_endpoints_are_exact() {
        let (s, p, sp, h) = tiny_instance();
        let w0 = BeamformerSet::new(1, 1, 1, vec![vec![Complex64::new(0.3, 0.2)]]).unwrap();
        let mut keep = SscaState::new(&s, w0.clone()).unwrap();
        ssca_step_with(&mut keep, &h, &s, &p, &sp, 1.0, 0.0).unwrap();
        assert_eq!(keep.iterate.w, w0);
        let mut full = SscaState::new(&s, w0.clone()).unwrap();
        ssca_step_with(&mut full, &h, &s, &p, &sp, 1.0, 1.0).unwrap();
        // The subproblem output equals the iterate, so it is power-feasible.
        assert!(full.iterate.w.total_power() <= p.power * (1.0 + 1e-9));
        let mut half = SscaState::new(&s, w0.clone()).unwrap();
        ssca_step_with(&mut half, &h, &s, &p, &sp, 1.0, 0.5).unwrap();
        let expect = w0.blend(&full.iterate.w, 0.5);
        assert!((half.iterate.w.get(0, 0)[0] - expect.get(0, 0)[0]).norm() < 1e-12);
    }

    /// Maximizes `c + g·x - T‖x - c̄‖²` over the unit disk: the isotropic
    /// quadratic peaks at `c̄ + g/(2T)`, and its constrained peak is the radial projection.
    fn disk_argmax(g: [f64; 2], curvature: f64, center: [f64; 2]) -> [f64; 2] {
        let peak = [center[0] + g[0] / (2.0 * curvature), center[1] + g[1] / (2.0 * curvature)];
        let r = (peak[0] * peak[0] + peak[1] * peak[1]).sqrt();
        if r <= 1.0 { peak } else { [peak[0] / r, peak[1] / r] }
    }

    #[test]
    fn two_iterations_match_hand_transcript() {
        let (s, p, mut sp, _) = tiny_instance();
        sp.tau = 0.7;
        sp.solver.kkt_tol = 1e-11;
        let hs = [Complex64::new(0.8, -0.4), Complex64::new(-0.3, 1.1)];
        let nu = p.noise / p.power;
        let mut x = [0.3 / p.power.sqrt(), 0.2 / p.power.sqrt()];
        let mut state = SscaState::new(&s, BeamformerSet::new(1, 1, 1, vec![vec![Complex64::new(0.3, 0.2)]]).unwrap()).unwrap();
        // Hand recursion on (constant, gradient, curvature, center).
        let (mut c, mut g, mut curv, mut cen) = (0.0, [0.0; 2], 0.0, [0.0; 2]);
        for (i, hv) in hs.iter().enumerate() {
            let i = i + 1;
            let a2 = hv.norm_sqr();
            let snr = a2 * (x[0] * x[0] + x[1] * x[1]);
            let scale = 2.0 * a2 / (std::f64::consts::LN_2 * (nu + snr));
            let gi = [scale * x[0], scale * x[1]];
            let ci = (1.0 + snr / nu).log2() - gi[0] * x[0] - gi[1] * x[1];
            let (omega, gamma) = ((i as f64).powf(-0.6), (i as f64).powf(-0.9));
            let a = (1.0 - omega) * curv;
            let b = omega * sp.tau;
            let shift = a * b / (a + b) * ((cen[0] - x[0]).powi(2) + (cen[1] - x[1]).powi(2));
            cen = [(a * cen[0] + b * x[0]) / (a + b), (a * cen[1] + b * x[1]) / (a + b)];
            curv = a + b;
            c = (1.0 - omega) * c + omega * ci - shift;
            g = [(1.0 - omega) * g[0] + omega * gi[0], (1.0 - omega) * g[1] + omega * gi[1]];
            // Penalty ρ > α, so the slack vanishes and r equals the surrogate peak.
            let bar = disk_argmax(g, curv, cen);
            let rate = c + g[0] * bar[0] + g[1] * bar[1] - curv * ((bar[0] - cen[0]).powi(2) + (bar[1] - cen[1]).powi(2));
            x = [(1.0 - gamma) * x[0] + gamma * bar[0], (1.0 - gamma) * x[1] + gamma * bar[1]];

            let h = ChannelRealization::new(1, 1, 1, vec![vec![*hv]]).unwrap();
            ssca_step(&mut state, &h, &s, &p, &sp, i).unwrap();
            let got = state.iterate.w.get(0, 0)[0] / p.power.sqrt();
            assert!((got.re - x[0]).abs() < 1e-5 && (got.im - x[1]).abs() < 1e-5, "iteration {i}: {got} vs {x:?}");
            assert!((state.iterate.rates.rates()[0] - rate * p.bandwidth).abs() < 1e-5 * rate.abs().max(1.0) * p.bandwidth);
            assert!(state.iterate.slack[0] < 1e-6);
            assert!((state.surrogate.curvature() - curv).abs() < 1e-14);
        }
    }

    #[test]
    fn large_penalty_with_easy_constraints_leaves_no_slack() {
        let s = single_user();
        let stats = ChannelStatistics::iid(1, 1, 1, 1.0).unwrap();
        let p = SlowParams::new(1.0, 1.0, 0.1, vec![1.0]);
        let mut sp = SscaParams::new(&p.weights);
        sp.iterations = 20;
        sp.rho = 1e4;
        let sol = run_ssca(&s, &stats, &p, &sp, 4).unwrap();
        assert!(sol.slack_norm < 1e-6);
        assert!(sol.iterate.slack.iter().all(|v| *v >= 0.0));
        assert_eq!(sol.rounds, 1);
    }

    #[test]
    fn ssca_is_deterministic() {
        let s = two_user();
        let stats = ChannelStatistics::iid(2, 1, 2, 1.0).unwrap();
        let p = SlowParams::new(1.0, 1.0, 0.1, vec![1.0; 3]);
        let mut sp = SscaParams::new(&p.weights);
        sp.iterations = 8;
        let a = run_ssca(&s, &stats, &p, &sp, 21).unwrap();
        let b = run_ssca(&s, &stats, &p, &sp, 21).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trace.len(), 8);
        assert!(a.iterate.w.total_power() <= p.power * (1.0 + 1e-9));
    }

    #[test]
    fn rate_lp_trivial_cases() {
        let s = two_user();
        let opts = SolveOptions { kkt_tol: 1e-10, ..SolveOptions::default() };
        let pairs = slow::decode_pairs(&s).unwrap().len();
        let zero = rate_lp_from_rhs(&s, &[1.0, 2.0, 3.0], &vec![0.0; pairs], 1.0, &opts).unwrap();
        assert!(zero.rates().iter().all(|r| *r == 0.0));

        let one = single_user();
        let r = rate_lp_from_rhs(&one, &[1.0], &[4.5], 2.0, &opts).unwrap();
        assert!((r.rates()[0] - 4.5).abs() < 1e-8 * 4.5, "{}", r.rates()[0]);
    }

    /// Brute-force LP: every vertex of `{R ≥ 0, A R ≤ b}` from all square
    /// active sets.
    fn vertex_oracle(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> f64 {
        let d = c.len();
        let mut rows: Vec<(Vec<f64>, f64)> = a.iter().cloned().zip(b.iter().copied()).collect();
        for i in 0..d {
            let mut e = vec![0.0; d];
            e[i] = -1.0;
            rows.push((e, 0.0));
        }
        let mut best = f64::NEG_INFINITY;
        let m = rows.len();
        let mut pick = (0..d).collect::<Vec<_>>();
        loop {
            let mat = nalgebra::DMatrix::from_fn(d, d, |r, col| rows[pick[r]].0[col]);
            let rhs = nalgebra::DVector::from_fn(d, |r, _| rows[pick[r]].1);
            if let Some(x) = mat.lu().solve(&rhs) {
                let feasible = rows.iter().all(|(row, bi)| row.iter().zip(x.iter()).map(|(p, q)| p * q).sum::<f64>() <= bi + 1e-9);
                if feasible {
                    best = best.max(c.iter().zip(x.iter()).map(|(p, q)| p * q).sum());
                }
            }
            // Next combination in lexicographic order.
            let mut i = d;
            while i > 0 && pick[i - 1] == m - d + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            pick[i - 1] += 1;
            for j in i..d {
                pick[j] = pick[j - 1] + 1;
            }
        }
        best
    }

    #[test]
    fn rate_lp_matches_vertex_enumeration() {
        let s = two_user();
        let pairs = slow::decode_pairs(&s).unwrap();
        let weights = [0.5, 0.8, 1.3];
        let rhs = [1.0, 2.5, 3.0, 1.5, 2.0, 2.8];
        assert_eq!(pairs.len(), rhs.len());
        let a: Vec<Vec<f64>> = pairs
            .iter()
            .map(|(_, x)| s.splits().iter().map(|(_, l)| if x.layers.contains(l) { 1.0 } else { 0.0 }).collect())
            .collect();
        let c: Vec<f64> = s.splits().iter().map(|(g, _)| weights[*g]).collect();
        let oracle = vertex_oracle(&a, &rhs, &c);
        let opts = SolveOptions { kkt_tol: 1e-10, ..SolveOptions::default() };
        let r = rate_lp_from_rhs(&s, &weights, &rhs, 1.0, &opts).unwrap();
        let got = r.weighted_sum(&s, &weights);
        assert!((got - oracle).abs() < 1e-6 * oracle, "{got} vs {oracle}");
    }

    #[test]
    fn correlated_cccp_follows_top_eigenvector_for_one_user() {
        let s = single_user();
        let v = [Complex64::new(1.0, 0.0), Complex64::new(0.4, 0.3), Complex64::new(-0.2, 0.5)];
        let u = [Complex64::new(0.1, 0.2), Complex64::new(-0.7, 0.0), Complex64::new(0.3, 0.3)];
        let q = crate::linalg::outer_sum(3, [&v[..], &u[..]]) + CMatrix::identity(3, 3) * Complex64::new(0.05, 0.0);
        let stats = ChannelStatistics::from_covariances(1, 1, vec![q.clone()]).unwrap();
        let p = SlowParams::new(1.0, 1.0, 0.1, vec![1.0]);
        let sol = cccp_correlated(&stats, &s, &p, None).unwrap();
        let (_, top) = crate::linalg::principal_eigenvector(&q);
        let w = sol.iterate.w.get(0, 0);
        let cos = crate::linalg::inner(&top, w).norm() / (crate::linalg::norm_sqr(w).sqrt() * crate::linalg::norm_sqr(&top).sqrt());
        assert!(cos.min(1.0).acos() < 1e-3, "angle {}", cos.min(1.0).acos());
        assert!(sol.objective_trace.windows(2).all(|t| t[1] >= t[0] - 1e-6));
    }

    #[test]
    fn iid_cccp_single_user_matches_grid_search() {
        let s = single_user();
        let (lambda, nsc) = (0.7, 2);
        let p = SlowParams::new(1.0, 1.0, 0.05, vec![1.0]);
        let mut opts = p.clone();
        opts.objective_tol = 1e-9;
        let sol = cccp_iid(&s, lambda, nsc, &opts).unwrap();
        let snr = lambda / p.noise;
        let grid = (0..=100_000)
            .map(|i| {
                let t = i as f64 / 100_000.0;
                (1.0 + snr * t).log2() + (1.0 + snr * (1.0 - t)).log2()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((sol.wsr - grid).abs() < 1e-4 * grid, "{} vs {grid}", sol.wsr);
        assert!((sol.powers.iter().sum::<f64>() - p.power).abs() < 1e-4);
        let w = recover_w(&sol, 3).unwrap();
        assert!((w.total_power() - sol.powers.iter().sum::<f64>()).abs() < 1e-12);
        assert_eq!(w.get(0, 0)[1], Complex64::new(0.0, 0.0));
    }
}
