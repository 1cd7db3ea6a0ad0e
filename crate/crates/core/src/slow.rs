//! Slow fading: per-realization weighted sum rate maximization.
//!
//! The nonconvex rate region is rewritten with auxiliaries `e` and `u`
//! (`2^{e/B} ≤ u`, `I + σ² - (S + I + σ²)/u ≤ 0`) and solved by the
//! concave-convex procedure: each outer iteration linearizes the concave
//! quadratic-over-linear term at the previous iterate and solves the
//! resulting convex program with [`crate::convex`].
//!
//! Internally every program is normalized: beamformers by `√P`, noise to
//! `σ²/P`, rates and `e` to units of `B`. Objective traces are reported in
//! these normalized units (bits/s/Hz); weighted sum rates in bits/s.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::beamformer::BeamformerSet;
use crate::channel::{ChannelRealization, ChannelStatistics};
use crate::convex::{
    self, re_inner_form, Atom, BlockRef, Constraint, ConvexProgram, LinearForm, SolveOptions, GLOBAL_BLOCK,
    VariableSpace,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::math;
use crate::model::{DecodeSubset, LayerPolicy, RateAllocation, SplitStructure, UserSet};

/// Relative slack of the initial point on every rate constraint.
pub const INIT_SLACK: f64 = 1e-3;
/// Fraction of the power budget used by the initial point.
pub const INIT_POWER_FRACTION: f64 = 0.9;

/// System and stopping parameters shared by the CCCP variants.
#[derive(Clone, Debug, PartialEq)]
pub struct SlowParams {
    /// Total transmit power `P` in watts.
    pub power: f64,
    /// Subcarrier bandwidth `B` in hertz.
    pub bandwidth: f64,
    /// Noise power `σ²` in watts.
    pub noise: f64,
    /// `α_S` in group order of the structure.
    pub weights: Vec<f64>,
    /// Stop when the relative iterate change falls to this value.
    pub epsilon: f64,
    /// Stop when the objective (bits/s/Hz) improves by at most this value.
    pub objective_tol: f64,
    pub max_iter: usize,
    pub solver: SolveOptions,
}

impl SlowParams {
    pub fn new(power: f64, bandwidth: f64, noise: f64, weights: Vec<f64>) -> Self {
        SlowParams {
            power,
            bandwidth,
            noise,
            weights,
            epsilon: 1e-6,
            objective_tol: 0.1,
            max_iter: 50,
            solver: SolveOptions {
                kkt_tol: 1e-8,
                ..SolveOptions::default()
            },
        }
    }

    /// Checks positivity and that the weights match the structure's groups.
    pub fn validate(&self, structure: &SplitStructure) -> Result<()> {
        for (name, v) in [("power", self.power), ("bandwidth", self.bandwidth), ("noise", self.noise)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.weights.len() != structure.groups().len() {
            return Err(Error::Dimension(format!(
                "{} weights for {} message groups",
                self.weights.len(),
                structure.groups().len()
            )));
        }
        if self.weights.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn normalized_noise(&self) -> f64 {
        self.noise / self.power
    }
}

/// Uniform weights `1/|S|` over the groups of `structure`.
pub fn uniform_weights(structure: &SplitStructure) -> Vec<f64> {
    let n = structure.groups().len() as f64;
    vec![1.0 / n; structure.groups().len()]
}

/// A point of the auxiliary-variable problem in physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct SlowIterate {
    pub w: BeamformerSet,
    pub rates: RateAllocation,
    /// `e_{k,n,X}` in bits/s, indexed `pair * N + n` (see [`decode_pairs`]).
    pub e: Vec<f64>,
    /// `u_{k,n,X}`, same indexing as `e`.
    pub u: Vec<f64>,
    pub bandwidth: f64,
}

/// Result of a CCCP run.
#[derive(Clone, Debug, PartialEq)]
pub struct SlowSolution {
    /// Final point with auxiliaries re-tightened (`u` at its rate bound, `2^{e/B} = u`).
    pub iterate: SlowIterate,
    /// Objective per accepted iterate, init first, in bits/s/Hz.
    pub objective_trace: Vec<f64>,
    /// Weighted sum rate in bits/s.
    pub wsr: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Total Newton steps across subproblems.
    pub newton_steps: usize,
    /// `max |2^{e/B} - u| / u` on the last solver output, over decode subsets
    /// whose rate coupling is active.
    pub active_auxiliary_gap: f64,
}

/// `(user, subset)` pairs in user-major canonical order; rows of `e` and `u`.
pub fn decode_pairs(structure: &SplitStructure) -> Result<Vec<(usize, DecodeSubset)>> {
    let mut out = Vec::new();
    for k in 1..=structure.users() {
        for x in structure.decode_subsets(k)? {
            out.push((k, x));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Gain models: instantaneous channel vectors or covariance matrices.

pub(crate) trait GainModel {
    fn subcarriers(&self) -> usize;
    fn antennas(&self) -> usize;
    /// `|h^H w|²` or `w^H Q w` for user `k` (0-based).
    fn gain(&self, k: usize, n: usize, w: &[Complex64]) -> f64;
    /// Real forms whose squares sum to the gain.
    fn gain_forms(&self, k: usize, n: usize, block: BlockRef) -> Vec<LinearForm>;
    /// `Q w_p`, so the gain linearizes as `gain(w_p) + 2 Re{(Q w_p)^H (w - w_p)}`.
    fn gain_gradient(&self, k: usize, n: usize, w_p: &[Complex64]) -> Vec<Complex64>;
    /// Unnormalized transmit direction serving every user of `group`.
    fn group_direction(&self, group: UserSet, n: usize) -> Vec<Complex64>;
}

impl GainModel for ChannelRealization {
    fn subcarriers(&self) -> usize {
        ChannelRealization::subcarriers(self)
    }

    fn antennas(&self) -> usize {
        ChannelRealization::antennas(self)
    }

    fn gain(&self, k: usize, n: usize, w: &[Complex64]) -> f64 {
        linalg::abs2_inner(self.h(k, n), w)
    }

    fn gain_forms(&self, k: usize, n: usize, block: BlockRef) -> Vec<LinearForm> {
        convex::abs2_forms(self.h(k, n), block).into()
    }

    fn gain_gradient(&self, k: usize, n: usize, w_p: &[Complex64]) -> Vec<Complex64> {
        let h = self.h(k, n);
        let a = linalg::inner(h, w_p);
        h.iter().map(|z| z * a).collect()
    }

    fn group_direction(&self, group: UserSet, n: usize) -> Vec<Complex64> {
        let mut d = vec![Complex64::new(0.0, 0.0); self.antennas()];
        for k in group.users() {
            for (di, hi) in d.iter_mut().zip(self.h(k - 1, n)) {
                *di += hi;
            }
        }
        d
    }
}

/// Covariance gains `w^H Q w` with precomputed factorizations.
pub(crate) struct CovarianceGains<'a> {
    stats: &'a ChannelStatistics,
    factors: Vec<Vec<Vec<Complex64>>>,
}

impl<'a> CovarianceGains<'a> {
    pub(crate) fn new(stats: &'a ChannelStatistics) -> Result<Self> {
        let mut factors = Vec::with_capacity(stats.users() * stats.subcarriers());
        for k in 0..stats.users() {
            for n in 0..stats.subcarriers() {
                factors.push(linalg::psd_factors(stats.covariance(k, n))?);
            }
        }
        Ok(CovarianceGains { stats, factors })
    }
}

impl GainModel for CovarianceGains<'_> {
    fn subcarriers(&self) -> usize {
        self.stats.subcarriers()
    }

    fn antennas(&self) -> usize {
        self.stats.antennas()
    }

    fn gain(&self, k: usize, n: usize, w: &[Complex64]) -> f64 {
        self.factors[k * self.subcarriers() + n]
            .iter()
            .map(|f| linalg::abs2_inner(f, w))
            .sum()
    }

    fn gain_forms(&self, k: usize, n: usize, block: BlockRef) -> Vec<LinearForm> {
        self.factors[k * self.subcarriers() + n]
            .iter()
            .flat_map(|f| convex::abs2_forms(f, block))
            .collect()
    }

    fn gain_gradient(&self, k: usize, n: usize, w_p: &[Complex64]) -> Vec<Complex64> {
        let q = self.stats.covariance(k, n);
        (0..w_p.len())
            .map(|i| (0..w_p.len()).map(|j| q[(i, j)] * w_p[j]).sum())
            .collect()
    }

    fn group_direction(&self, group: UserSet, n: usize) -> Vec<Complex64> {
        let m = self.antennas();
        let mut q = linalg::CMatrix::zeros(m, m);
        for k in group.users() {
            q += self.stats.covariance(k - 1, n);
        }
        let (lambda, v) = linalg::principal_eigenvector(&q);
        if lambda > 0.0 {
            v
        } else {
            vec![Complex64::new(0.0, 0.0); m]
        }
    }
}

// ---------------------------------------------------------------------------
// Variable layout of the auxiliary-variable problem.

pub(crate) struct Layout {
    pub(crate) subcarriers: usize,
    pub(crate) layers: usize,
    pub(crate) antennas: usize,
    pub(crate) splits: usize,
    pub(crate) pairs: Vec<(usize, DecodeSubset)>,
    /// Interfering layer indices per 0-based user.
    pub(crate) interferers: Vec<Vec<usize>>,
    /// Per pair: split indices whose layer lies in the subset.
    pub(crate) pair_splits: Vec<Vec<usize>>,
}

impl Layout {
    pub(crate) fn new(structure: &SplitStructure, subcarriers: usize, antennas: usize) -> Result<Self> {
        let pairs = decode_pairs(structure)?;
        let interferers = (1..=structure.users())
            .map(|k| structure.interfering_layers(k))
            .collect::<Result<Vec<_>>>()?;
        let pair_splits = pairs
            .iter()
            .map(|(_, x)| {
                structure
                    .splits()
                    .iter()
                    .enumerate()
                    .filter(|(_, (_, li))| x.layers.contains(li))
                    .map(|(s, _)| s)
                    .collect()
            })
            .collect();
        Ok(Layout {
            subcarriers,
            layers: structure.layers().len(),
            antennas,
            splits: structure.num_splits(),
            pairs,
            interferers,
            pair_splits,
        })
    }

    pub(crate) fn w_len(&self) -> usize {
        2 * self.subcarriers * self.layers * self.antennas
    }

    pub(crate) fn w_block(&self, n: usize, layer: usize) -> BlockRef {
        BlockRef {
            offset: 2 * (n * self.layers + layer) * self.antennas,
            len: 2 * self.antennas,
        }
    }

    pub(crate) fn r(&self, s: usize) -> usize {
        self.w_len() + s
    }

    fn eu_base(&self) -> usize {
        self.w_len() + self.splits
    }

    pub(crate) fn e(&self, pair: usize, n: usize) -> usize {
        self.eu_base() + 2 * (pair * self.subcarriers + n)
    }

    pub(crate) fn u(&self, pair: usize, n: usize) -> usize {
        self.e(pair, n) + 1
    }

    /// Power share of subcarrier `n` (`‖w_n‖² ≤ p_n`, `Σ p_n ≤ 1`).
    pub(crate) fn p(&self, n: usize) -> usize {
        self.eu_base() + 2 * self.pairs.len() * self.subcarriers + n
    }

    pub(crate) fn dim(&self) -> usize {
        self.eu_base() + 2 * self.pairs.len() * self.subcarriers + self.subcarriers
    }

    /// Block id per variable: subcarrier `n` owns its beamformers and `u`
    /// values; split rates, `e` and power shares are global, so every
    /// constraint touches at most one subcarrier block.
    pub(crate) fn blocks(&self) -> Vec<u32> {
        let mut b = vec![GLOBAL_BLOCK; self.dim()];
        for n in 0..self.subcarriers {
            for l in 0..self.layers {
                for i in self.w_block(n, l).range() {
                    b[i] = n as u32;
                }
            }
            for j in 0..self.pairs.len() {
                b[self.u(j, n)] = n as u32;
            }
        }
        b
    }

    /// Sets the power shares to each subcarrier's power plus an equal part
    /// of the unused budget.
    pub(crate) fn split_power(&self, x: &mut [f64]) {
        let per: Vec<f64> = (0..self.subcarriers)
            .map(|n| {
                (0..self.layers)
                    .flat_map(|l| self.w_block(n, l).range())
                    .map(|i| x[i] * x[i])
                    .sum()
            })
            .collect();
        let spare = (1.0 - per.iter().sum::<f64>()).max(0.0) / (self.subcarriers + 1) as f64;
        for (n, v) in per.iter().enumerate() {
            x[self.p(n)] = v + spare;
        }
    }

    pub(crate) fn space(&self) -> VariableSpace {
        let mut s = VariableSpace::new();
        s.add("w", self.w_len()).expect("fresh space");
        s.add("r", self.splits).expect("fresh space");
        s.add("eu", 2 * self.pairs.len() * self.subcarriers).expect("fresh space");
        s.add("p", self.subcarriers).expect("fresh space");
        s
    }

    pub(crate) fn read_w(&self, x: &[f64], n: usize, layer: usize) -> Vec<Complex64> {
        let b = self.w_block(n, layer);
        (0..self.antennas)
            .map(|i| Complex64::new(x[b.re(i)], x[b.im(i)]))
            .collect()
    }

    pub(crate) fn write_w(&self, x: &mut [f64], n: usize, layer: usize, w: &[Complex64]) {
        let b = self.w_block(n, layer);
        for (i, z) in w.iter().enumerate() {
            x[b.re(i)] = z.re;
            x[b.im(i)] = z.im;
        }
    }

    pub(crate) fn beamformers(&self, x: &[f64], scale: f64) -> BeamformerSet {
        let v = (0..self.subcarriers)
            .flat_map(|n| (0..self.layers).map(move |l| (n, l)))
            .map(|(n, l)| self.read_w(x, n, l).into_iter().map(|z| z * scale).collect())
            .collect();
        BeamformerSet::new(self.subcarriers, self.layers, self.antennas, v).expect("layout dimensions")
    }

    /// Objective `Σ α_S r_{S,G}` over split indices.
    pub(crate) fn objective(&self, structure: &SplitStructure, weights: &[f64]) -> LinearForm {
        let terms = structure
            .splits()
            .iter()
            .enumerate()
            .filter(|(_, (si, _))| weights[*si] != 0.0)
            .map(|(s, (si, _))| (self.r(s), weights[*si]))
            .collect();
        LinearForm::new(terms, 0.0)
    }
}

/// Signal and interference power of pair `j` on subcarrier `n`.
pub(crate) fn signal_interference<G: GainModel>(
    model: &G,
    layout: &Layout,
    wn: &[Vec<Complex64>],
    j: usize,
    n: usize,
) -> (f64, f64) {
    let (user, x) = &layout.pairs[j];
    let k = user - 1;
    let s = x.layers.iter().map(|&l| model.gain(k, n, &wn[l])).sum();
    let i = layout.interferers[k].iter().map(|&l| model.gain(k, n, &wn[l])).sum();
    (s, i)
}

pub(crate) fn layer_vectors(layout: &Layout, x: &[f64], n: usize) -> Vec<Vec<Complex64>> {
    (0..layout.layers).map(|l| layout.read_w(x, n, l)).collect()
}

/// The linearized program around `prev` with bookkeeping for diagnostics.
pub struct LinearizedProgram {
    pub program: ConvexProgram,
    /// Constraint index of each linearized rate constraint, `pair * N + n`.
    pub linearized: Vec<usize>,
    /// Factor applied to each linearized constraint (`u_prev / c`).
    pub linearized_scale: Vec<f64>,
    /// Constraint index of each `2^e ≤ u` constraint, `pair * N + n`.
    pub exponential: Vec<usize>,
    /// Constraint index of the rate coupling of each pair.
    pub coupling: Vec<usize>,
}

pub(crate) fn build_linearized<G: GainModel>(
    model: &G,
    structure: &SplitStructure,
    layout: &Layout,
    prev: &[f64],
    nu: f64,
    weights: &[f64],
) -> Result<LinearizedProgram> {
    let nsc = layout.subcarriers;
    let mut p = ConvexProgram::new(layout.space());
    p.set_objective(&layout.objective(structure, weights))?;

    let mut budget = LinearForm::constant(-1.0);
    for n in 0..nsc {
        let forms = (0..layout.layers)
            .flat_map(|l| layout.w_block(n, l).range())
            .map(|i| LinearForm::var(i, 1.0))
            .collect();
        p.add_constraint(Constraint::new(vec![
            Atom::Quadratic { scale: 1.0, forms },
            Atom::Affine(LinearForm::var(layout.p(n), -1.0)),
        ]))?;
        budget.push(layout.p(n), 1.0);
    }
    p.add_constraint(Constraint::affine(budget))?;

    let mut coupling = Vec::with_capacity(layout.pairs.len());
    for (j, splits) in layout.pair_splits.iter().enumerate() {
        let mut f = LinearForm::default();
        for &s in splits {
            f.push(layout.r(s), 1.0);
        }
        for n in 0..nsc {
            f.push(layout.e(j, n), -1.0);
        }
        coupling.push(p.add_constraint(Constraint::affine(f))?);
    }

    let mut linearized = Vec::with_capacity(layout.pairs.len() * nsc);
    let mut linearized_scale = Vec::with_capacity(layout.pairs.len() * nsc);
    let mut exponential = Vec::with_capacity(layout.pairs.len() * nsc);
    for (j, (user, x)) in layout.pairs.iter().enumerate() {
        let k = user - 1;
        for n in 0..nsc {
            let wn = layer_vectors(layout, prev, n);
            let u_prev = prev[layout.u(j, n)];
            if !(u_prev > 0.0) {
                return Err(Error::InvalidParameter(format!("u_prev = {u_prev} must be positive")));
            }
            let (sp, ip) = signal_interference(model, layout, &wn, j, n);
            let c = sp + ip + nu;
            let scale = u_prev / c;

            // scale * [ I(w) + ν + c u/u_p² - (2 Re{Σ (Q w_p)^H w} + 2ν)/u_p ]
            let mut cons = Constraint::default();
            let forms: Vec<LinearForm> = layout.interferers[k]
                .iter()
                .flat_map(|&l| model.gain_forms(k, n, layout.w_block(n, l)))
                .collect();
            if !forms.is_empty() {
                cons.push(Atom::Quadratic { scale, forms });
            }
            let mut lin = LinearForm::new(vec![(layout.u(j, n), 1.0 / u_prev)], scale * nu - 2.0 * nu / c);
            for &l in x.layers.iter().chain(&layout.interferers[k]) {
                let g = model.gain_gradient(k, n, &wn[l]);
                for (i, a) in re_inner_form(&g, layout.w_block(n, l)).terms {
                    lin.push(i, -2.0 * a / c);
                }
            }
            cons.push(Atom::Affine(lin));
            linearized.push(p.add_constraint(cons)?);
            linearized_scale.push(scale);

            // (2^e - u) / u_p
            exponential.push(p.add_constraint(Constraint::new(vec![
                Atom::Exp2 {
                    coef: 1.0 / u_prev,
                    var: layout.e(j, n),
                    scale: 1.0,
                },
                Atom::Affine(LinearForm::var(layout.u(j, n), -1.0 / u_prev)),
            ]))?);
        }
    }
    for s in 0..layout.splits {
        p.add_lower_bound(layout.r(s), 0.0)?;
    }
    p.set_block_partition(layout.blocks())?;
    Ok(LinearizedProgram {
        program: p,
        linearized,
        linearized_scale,
        exponential,
        coupling,
    })
}

/// Normalized auxiliary-problem vector of a physical iterate.
pub fn pack_iterate(structure: &SplitStructure, iterate: &SlowIterate, params: &SlowParams) -> Result<Vec<f64>> {
    let w = &iterate.w;
    let layout = Layout::new(structure, w.subcarriers(), w.antennas())?;
    if iterate.e.len() != layout.pairs.len() * layout.subcarriers || iterate.u.len() != iterate.e.len() {
        return Err(Error::Dimension("auxiliary vectors do not match the structure".into()));
    }
    let mut x = vec![0.0; layout.dim()];
    let s = 1.0 / math::sqrt(params.power);
    for n in 0..layout.subcarriers {
        for l in 0..layout.layers {
            let v: Vec<Complex64> = w.get(n, l).iter().map(|z| z * s).collect();
            layout.write_w(&mut x, n, l, &v);
        }
    }
    for (i, r) in iterate.rates.rates().iter().enumerate() {
        x[layout.r(i)] = r / params.bandwidth;
    }
    for j in 0..layout.pairs.len() {
        for n in 0..layout.subcarriers {
            x[layout.e(j, n)] = iterate.e[j * layout.subcarriers + n] / params.bandwidth;
            x[layout.u(j, n)] = iterate.u[j * layout.subcarriers + n];
        }
    }
    layout.split_power(&mut x);
    Ok(x)
}

pub(crate) fn unpack(structure: &SplitStructure, layout: &Layout, x: &[f64], params: &SlowParams) -> Result<SlowIterate> {
    let w = layout.beamformers(x, math::sqrt(params.power));
    let rates = RateAllocation::from_solver(
        structure,
        (0..layout.splits).map(|s| x[layout.r(s)] * params.bandwidth).collect(),
    )?;
    let count = layout.pairs.len() * layout.subcarriers;
    let mut e = Vec::with_capacity(count);
    let mut u = Vec::with_capacity(count);
    for j in 0..layout.pairs.len() {
        for n in 0..layout.subcarriers {
            e.push(x[layout.e(j, n)] * params.bandwidth);
            u.push(x[layout.u(j, n)]);
        }
    }
    Ok(SlowIterate {
        w,
        rates,
        e,
        u,
        bandwidth: params.bandwidth,
    })
}

/// Strictly feasible start: equal-power MRT per layer at 0.9·P, auxiliaries
/// at `(1 - δ)` of the per-subcarrier log rate, split rates by equal filling.
pub(crate) fn initial_point<G: GainModel>(
    model: &G,
    structure: &SplitStructure,
    layout: &Layout,
    nu: f64,
) -> Result<Vec<f64>> {
    let mut x = vec![0.0; layout.dim()];
    let per = math::sqrt(INIT_POWER_FRACTION / (layout.subcarriers * layout.layers) as f64);
    for n in 0..layout.subcarriers {
        for (l, g) in structure.layers().iter().enumerate() {
            let mut d = model.group_direction(*g, n);
            let norm = math::sqrt(linalg::norm_sqr(&d));
            if norm > 0.0 {
                d.iter_mut().for_each(|z| *z *= per / norm);
            } else {
                d = vec![Complex64::new(0.0, 0.0); layout.antennas];
                d[0] = Complex64::new(per, 0.0);
            }
            layout.write_w(&mut x, n, l, &d);
        }
    }
    let delta = INIT_SLACK;
    let mut fill = f64::INFINITY;
    for j in 0..layout.pairs.len() {
        let mut sum_e = 0.0;
        for n in 0..layout.subcarriers {
            let wn = layer_vectors(layout, &x, n);
            let (s, i) = signal_interference(model, layout, &wn, j, n);
            let rate = math::log2(1.0 + s / (i + nu));
            if !(rate > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "initial point has zero signal for decode pair {j} on subcarrier {n}"
                )));
            }
            x[layout.e(j, n)] = (1.0 - delta) * rate;
            x[layout.u(j, n)] = math::exp2((1.0 - 0.5 * delta) * rate);
            sum_e += x[layout.e(j, n)];
        }
        let load: f64 = layout.pair_splits[j].len() as f64;
        if load > 0.0 {
            fill = fill.min(sum_e / load);
        }
    }
    let fill = if fill.is_finite() { (1.0 - delta) * fill } else { 0.0 };
    for s in 0..layout.splits {
        x[layout.r(s)] = fill;
    }
    layout.split_power(&mut x);
    Ok(x)
}

/// Strictly interior start for the program linearized at the tight point
/// `prev`: beamformers shrunk to `1 - δ` power, `u` and `e` pulled inside
/// their bounds, split rates shrunk toward an equal fill.
fn interior_start(layout: &Layout, prob: &LinearizedProgram, prev: &[f64]) -> Result<Vec<f64>> {
    let delta = INIT_SLACK;
    let nsc = layout.subcarriers;
    let mut x = prev.to_vec();
    let s = math::sqrt(1.0 - delta);
    x[..layout.w_len()].iter_mut().for_each(|v| *v *= s);
    layout.split_power(&mut x);
    // Linearized constraints are affine in u with slope 1/u_prev.
    for j in 0..layout.pairs.len() {
        for n in 0..nsc {
            x[layout.u(j, n)] = 0.0;
        }
    }
    let values = convex::evaluate_constraints(&prob.program, &x)?;
    for j in 0..layout.pairs.len() {
        for n in 0..nsc {
            let idx = j * nsc + n;
            let u_max = -values[prob.linearized[idx]].value * prev[layout.u(j, n)];
            if !(u_max > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "linearized rate constraint admits no positive u for pair {j} on subcarrier {n}"
                )));
            }
            let lu = math::log2(u_max);
            // Capped at half of `lu` so a nearly silent layer keeps a positive rate supply.
            let margin = (lu.abs().max(1.0) * delta).min(0.5 * lu.abs());
            x[layout.u(j, n)] = math::exp2(lu - 0.5 * margin);
            x[layout.e(j, n)] = lu - margin;
        }
    }
    let mut ratio = 1.0f64;
    let mut fill = f64::INFINITY;
    for (j, splits) in layout.pair_splits.iter().enumerate() {
        if splits.is_empty() {
            continue;
        }
        let supply: f64 = (0..nsc).map(|n| x[layout.e(j, n)]).sum();
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

/// Re-tightens auxiliaries at the current beamformers: `u = 1 + SINR`, `e = log₂ u`.
fn tighten<G: GainModel>(model: &G, layout: &Layout, x: &mut [f64], nu: f64) {
    for n in 0..layout.subcarriers {
        let wn = layer_vectors(layout, x, n);
        for j in 0..layout.pairs.len() {
            let (s, i) = signal_interference(model, layout, &wn, j, n);
            let u = 1.0 + s / (i + nu);
            x[layout.u(j, n)] = u;
            x[layout.e(j, n)] = math::log2(u);
        }
    }
}

fn active_gap(layout: &Layout, x: &[f64]) -> f64 {
    let mut gap: f64 = 0.0;
    for (j, splits) in layout.pair_splits.iter().enumerate() {
        let load: f64 = splits.iter().map(|&s| x[layout.r(s)]).sum();
        let supply: f64 = (0..layout.subcarriers).map(|n| x[layout.e(j, n)]).sum();
        if supply - load > 1e-6 * supply.abs().max(1.0) {
            continue;
        }
        for n in 0..layout.subcarriers {
            let u = x[layout.u(j, n)];
            gap = gap.max(math::abs(math::exp2(x[layout.e(j, n)]) - u) / u);
        }
    }
    gap
}

pub(crate) struct CccpRun {
    pub(crate) x: Vec<f64>,
    pub(crate) trace: Vec<f64>,
    pub(crate) iterations: usize,
    pub(crate) converged: bool,
    pub(crate) newton_steps: usize,
    pub(crate) active_gap: f64,
}

pub(crate) fn objective_value(layout: &Layout, structure: &SplitStructure, weights: &[f64], x: &[f64]) -> f64 {
    layout.objective(structure, weights).eval(x)
}

/// Concave-convex procedure from a strictly feasible normalized point.
pub(crate) fn run_cccp<G: GainModel>(
    model: &G,
    structure: &SplitStructure,
    layout: &Layout,
    params: &SlowParams,
    x0: Vec<f64>,
) -> Result<CccpRun> {
    let nu = params.normalized_noise();
    let mut x = x0;
    let mut obj = objective_value(layout, structure, &params.weights, &x);
    let mut run = CccpRun {
        x: Vec::new(),
        trace: vec![obj],
        iterations: 0,
        converged: false,
        newton_steps: 0,
        active_gap: active_gap(layout, &x),
    };
    if params.weights.iter().all(|a| *a == 0.0) {
        run.converged = true;
        run.x = x;
        return Ok(run);
    }
    for it in 1..=params.max_iter {
        // Tightening keeps the iterate feasible with the same objective and
        // moves the linearization point onto the DC boundary.
        tighten(model, layout, &mut x, nu);
        let prob = build_linearized(model, structure, layout, &x, nu, &params.weights)
            .map_err(|e| e.at_iteration(it))?;
        let start = interior_start(layout, &prob, &x).map_err(|e| e.at_iteration(it))?;
        let sol = convex::solve(&prob.program, &start, &params.solver).map_err(|e| e.at_iteration(it))?;
        run.iterations = it;
        run.newton_steps += sol.iterations;
        if sol.objective < obj {
            // Barrier suboptimality only; keep the better point.
            run.converged = true;
            break;
        }
        let change = sol
            .x
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        let scale = x.iter().map(|v| v * v).sum::<f64>().max(1.0);
        let improvement = sol.objective - obj;
        x = sol.x;
        obj = sol.objective;
        run.trace.push(obj);
        run.active_gap = active_gap(layout, &x);
        if improvement <= params.objective_tol || math::sqrt(change / scale) <= params.epsilon {
            run.converged = true;
            break;
        }
    }
    run.x = x;
    Ok(run)
}

fn finish<G: GainModel>(
    model: &G,
    structure: &SplitStructure,
    layout: &Layout,
    params: &SlowParams,
    mut run: CccpRun,
) -> Result<SlowSolution> {
    let nu = params.normalized_noise();
    tighten(model, layout, &mut run.x, nu);
    let iterate = unpack(structure, layout, &run.x, params)?;
    let wsr = iterate.rates.weighted_sum(structure, &params.weights);
    Ok(SlowSolution {
        iterate,
        objective_trace: run.trace,
        wsr,
        iterations: run.iterations,
        converged: run.converged,
        newton_steps: run.newton_steps,
        active_auxiliary_gap: run.active_gap,
    })
}

// ---------------------------------------------------------------------------
// Public slow-fading operations.

fn check_realization(h: &ChannelRealization, structure: &SplitStructure) -> Result<()> {
    if h.users() != structure.users() {
        return Err(Error::Dimension(format!(
            "realization has {} users, structure {}",
            h.users(),
            structure.users()
        )));
    }
    Ok(())
}

/// `B Σ_n log₂(1 + Σ_{G∈X}|h^H w|² / (σ² + Σ_{G∌k}|h^H w|²))` for user `k` (1-based).
pub fn achievable_rate_rhs(
    h: &ChannelRealization,
    w: &BeamformerSet,
    structure: &SplitStructure,
    user: usize,
    subset: &DecodeSubset,
    params: &SlowParams,
) -> Result<f64> {
    check_realization(h, structure)?;
    let interferers = structure.interfering_layers(user)?;
    let k = user - 1;
    let mut total = 0.0;
    for n in 0..h.subcarriers() {
        let s: f64 = subset.layers.iter().map(|&l| linalg::abs2_inner(h.h(k, n), w.get(n, l))).sum();
        let i: f64 = interferers.iter().map(|&l| linalg::abs2_inner(h.h(k, n), w.get(n, l))).sum();
        total += math::log2(1.0 + s / (params.noise + i));
    }
    Ok(params.bandwidth * total)
}

/// Largest relative violation of the rate region and power budget by
/// `(w, R)`, re-evaluated directly from the channel.
pub fn rate_region_violation(
    h: &ChannelRealization,
    w: &BeamformerSet,
    rates: &RateAllocation,
    structure: &SplitStructure,
    params: &SlowParams,
) -> Result<f64> {
    let mut worst = (w.total_power() - params.power) / params.power;
    let layer_rates = rates.transmission_rates(structure);
    for (user, x) in decode_pairs(structure)? {
        let rhs = achievable_rate_rhs(h, w, structure, user, &x, params)?;
        let lhs: f64 = x.layers.iter().map(|&l| layer_rates[l]).sum();
        worst = worst.max((lhs - rhs) / rhs.max(params.bandwidth * 1e-9));
    }
    Ok(worst)
}

/// Strictly feasible starting point (see [`initial_point`] policy).
pub fn init_feasible_slow(h: &ChannelRealization, structure: &SplitStructure, params: &SlowParams) -> Result<SlowIterate> {
    check_realization(h, structure)?;
    params.validate(structure)?;
    let layout = Layout::new(structure, h.subcarriers(), h.antennas())?;
    let x = initial_point(h, structure, &layout, params.normalized_noise())?;
    unpack(structure, &layout, &x, params)
}

/// Builds the convex approximation at `previous`.
pub fn linearized_program(
    h: &ChannelRealization,
    structure: &SplitStructure,
    previous: &SlowIterate,
    params: &SlowParams,
) -> Result<LinearizedProgram> {
    check_realization(h, structure)?;
    params.validate(structure)?;
    let layout = Layout::new(structure, h.subcarriers(), h.antennas())?;
    let x = pack_iterate(structure, previous, params)?;
    build_linearized(h, structure, &layout, &x, params.normalized_noise(), &params.weights)
}

/// Values of the original DC rate constraints `I + ν - (S + I + ν)/u` in
/// normalized units, `pair * N + n`.
pub fn dc_constraint_values(
    h: &ChannelRealization,
    structure: &SplitStructure,
    iterate: &SlowIterate,
    params: &SlowParams,
) -> Result<Vec<f64>> {
    let layout = Layout::new(structure, h.subcarriers(), h.antennas())?;
    let x = pack_iterate(structure, iterate, params)?;
    let nu = params.normalized_noise();
    let mut out = vec![0.0; layout.pairs.len() * layout.subcarriers];
    for n in 0..layout.subcarriers {
        let wn = layer_vectors(&layout, &x, n);
        for j in 0..layout.pairs.len() {
            let (s, i) = signal_interference(h, &layout, &wn, j, n);
            out[j * layout.subcarriers + n] = i + nu - (s + i + nu) / x[layout.u(j, n)];
        }
    }
    Ok(out)
}

/// Runs the concave-convex procedure on one realization from `init`.
pub fn cccp_slow(
    h: &ChannelRealization,
    structure: &SplitStructure,
    params: &SlowParams,
    init: &SlowIterate,
) -> Result<SlowSolution> {
    check_realization(h, structure)?;
    params.validate(structure)?;
    let layout = Layout::new(structure, h.subcarriers(), h.antennas())?;
    let x0 = pack_iterate(structure, init, params)?;
    let run = run_cccp(h, structure, &layout, params, x0)?;
    finish(h, structure, &layout, params, run)
}

/// Initializes and runs the concave-convex procedure.
pub fn optimize_slow(h: &ChannelRealization, structure: &SplitStructure, params: &SlowParams) -> Result<SlowSolution> {
    let init = init_feasible_slow(h, structure, params)?;
    cccp_slow(h, structure, params, &init)
}

pub(crate) fn cccp_with_model<G: GainModel>(
    model: &G,
    structure: &SplitStructure,
    params: &SlowParams,
    init: Option<&SlowIterate>,
) -> Result<SlowSolution> {
    params.validate(structure)?;
    let layout = Layout::new(structure, model.subcarriers(), model.antennas())?;
    let x0 = match init {
        Some(it) => pack_iterate(structure, it, params)?,
        None => initial_point(model, structure, &layout, params.normalized_noise())?,
    };
    let run = run_cccp(model, structure, &layout, params, x0)?;
    finish(model, structure, &layout, params, run)
}

/// `max |2^{e/B} - u| / u` over all auxiliaries.
pub fn auxiliary_gap(iterate: &SlowIterate) -> f64 {
    iterate
        .e
        .iter()
        .zip(&iterate.u)
        .map(|(e, u)| math::abs(math::exp2(e / iterate.bandwidth) - u) / u)
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// OFDMA baseline.

/// One message unit per subcarrier, MRT toward the unit's users.
#[derive(Clone, Debug, PartialEq)]
pub struct OfdmaSolution {
    /// Weighted sum rate in bits/s.
    pub wsr: f64,
    /// Group index served on each subcarrier.
    pub assignment: Vec<usize>,
    /// Power per subcarrier in watts.
    pub powers: Vec<f64>,
    /// Unit-norm beam direction per subcarrier.
    pub directions: Vec<Vec<Complex64>>,
    /// Multicast gain `min_k |h^H v|²` per subcarrier.
    pub gains: Vec<f64>,
    /// Rates on the no-split structure of the same groups.
    pub structure: SplitStructure,
    pub rates: RateAllocation,
}

/// Per-(group, subcarrier) multicast beam direction and gain.
pub fn ofdma_gains(h: &ChannelRealization, groups: &[UserSet]) -> Vec<Vec<(Vec<Complex64>, f64)>> {
    groups
        .iter()
        .map(|g| {
            (0..h.subcarriers())
                .map(|n| {
                    let vs: Vec<&[Complex64]> = g.users().map(|k| h.h(k - 1, n)).collect();
                    let q = linalg::outer_sum(h.antennas(), vs.iter().copied());
                    let (_, v) = linalg::principal_eigenvector(&q);
                    let gain = vs.iter().map(|hk| linalg::abs2_inner(hk, &v)).fold(f64::INFINITY, f64::min);
                    (v, gain)
                })
                .collect()
        })
        .collect()
}

/// Greedy subcarrier assignment at equal power, then power allocation across
/// subcarriers by weighted water-filling solved with the barrier kernel.
pub fn ofdma_baseline(h: &ChannelRealization, structure: &SplitStructure, params: &SlowParams) -> Result<OfdmaSolution> {
    check_realization(h, structure)?;
    params.validate(structure)?;
    let groups = structure.groups().to_vec();
    let nsc = h.subcarriers();
    let nu = params.normalized_noise();
    let table = ofdma_gains(h, &groups);

    let equal = 1.0 / nsc as f64;
    let mut assignment = Vec::with_capacity(nsc);
    for n in 0..nsc {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (gi, row) in table.iter().enumerate() {
            let v = params.weights[gi] * math::log2(1.0 + equal * row[n].1 / nu);
            if v > best_val {
                best_val = v;
                best = gi;
            }
        }
        assignment.push(best);
    }
    let gains: Vec<f64> = (0..nsc).map(|n| table[assignment[n]][n].1).collect();
    let alphas: Vec<f64> = (0..nsc).map(|n| params.weights[assignment[n]]).collect();
    let powers_norm = weighted_water_filling(&alphas, &gains, nu, &params.solver)?;

    let ns_structure = SplitStructure::from_groups(structure.users(), groups.clone(), LayerPolicy::NoSplit)?;
    let mut rates = vec![0.0; groups.len()];
    for n in 0..nsc {
        rates[assignment[n]] += params.bandwidth * math::log2(1.0 + powers_norm[n] * gains[n] / nu);
    }
    let rates = RateAllocation::new(&ns_structure, rates)?;
    let wsr = rates.weighted_sum(&ns_structure, &params.weights);
    Ok(OfdmaSolution {
        wsr,
        directions: (0..nsc).map(|n| table[assignment[n]][n].0.clone()).collect(),
        assignment,
        powers: powers_norm.iter().map(|p| p * params.power).collect(),
        gains,
        structure: ns_structure,
        rates,
    })
}

/// Maximizes `Σ α_n log₂(1 + p_n g_n / ν)` over `Σ p ≤ 1`, `p ≥ 0`.
pub fn weighted_water_filling(alphas: &[f64], gains: &[f64], nu: f64, opts: &SolveOptions) -> Result<Vec<f64>> {
    let active: Vec<usize> = (0..alphas.len()).filter(|&n| alphas[n] > 0.0 && gains[n] > 0.0).collect();
    let mut out = vec![0.0; alphas.len()];
    if active.is_empty() {
        return Ok(out);
    }
    let m = active.len();
    let mut space = VariableSpace::new();
    let p = space.add("p", m)?;
    let z = space.add("z", m)?;
    let mut prog = ConvexProgram::new(space);
    prog.set_objective(&LinearForm::new((0..m).map(|i| (z.at(i), alphas[active[i]])).collect(), 0.0))?;
    prog.add_constraint(Constraint::affine(LinearForm::new((0..m).map(|i| (p.at(i), 1.0)).collect(), -1.0)))?;
    let mut x0 = vec![0.0; 2 * m];
    for (i, &n) in active.iter().enumerate() {
        let slope = gains[n] / nu;
        prog.add_constraint(Constraint::new(vec![
            Atom::Affine(LinearForm::var(z.at(i), 1.0)),
            Atom::NegLog {
                terms: vec![(1.0, LinearForm::new(vec![(p.at(i), slope)], 1.0))],
            },
        ]))?;
        prog.add_lower_bound(p.at(i), 0.0)?;
        prog.add_lower_bound(z.at(i), 0.0)?;
        let p0 = 0.5 / m as f64;
        x0[p.at(i)] = p0;
        x0[z.at(i)] = 0.5 * math::log2(1.0 + p0 * slope);
    }
    let sol = convex::solve(&prog, &x0, opts)?;
    for (i, &n) in active.iter().enumerate() {
        out[n] = sol.x[p.at(i)].max(0.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_realization, ChannelStatistics, RngStream};
    use crate::model::{build_layers, partition_messages, RequestProfile};

    fn vi_structure(policy: LayerPolicy) -> SplitStructure {
        let prof = RequestProfile::from_requests(vec![vec![1, 4, 5, 7], vec![2, 4, 6, 7], vec![3, 5, 6, 7]]).unwrap();
        build_layers(&partition_messages(&prof).unwrap(), policy).unwrap()
    }

    fn params(structure: &SplitStructure) -> SlowParams {
        SlowParams::new(1.0, 30e3, 1e-9, uniform_weights(structure))
    }

    #[test]
    fn init_is_strictly_feasible_with_exact_power() {
        let s = vi_structure(LayerPolicy::FullGeneral);
        let stats = ChannelStatistics::iid(3, 2, 3, 1.0).unwrap();
        let h = sample_realization(&stats, RngStream::for_realization(5, 0));
        let p = params(&s);
        let init = init_feasible_slow(&h, &s, &p).unwrap();
        assert!((init.w.total_power() - 0.9 * p.power).abs() < 1e-12);
        let dc = dc_constraint_values(&h, &s, &init, &p).unwrap();
        assert!(dc.iter().all(|v| *v < 0.0));
        assert!(init.e.iter().zip(&init.u).all(|(e, u)| math::exp2(e / p.bandwidth) < *u));
        assert!(rate_region_violation(&h, &init.w, &init.rates, &s, &p).unwrap() < 0.0);
    }

    #[test]
    fn linearization_touches_at_previous_point() {
        let s = vi_structure(LayerPolicy::OneLayer);
        let stats = ChannelStatistics::iid(3, 2, 2, 1.0).unwrap();
        let h = sample_realization(&stats, RngStream::for_realization(1, 0));
        let p = params(&s);
        let init = init_feasible_slow(&h, &s, &p).unwrap();
        let prob = linearized_program(&h, &s, &init, &p).unwrap();
        let x = pack_iterate(&s, &init, &p).unwrap();
        let ev = convex::evaluate_constraints(&prob.program, &x).unwrap();
        let dc = dc_constraint_values(&h, &s, &init, &p).unwrap();
        for (i, &ci) in prob.linearized.iter().enumerate() {
            let l = ev[ci].value / prob.linearized_scale[i];
            assert!((l - dc[i]).abs() <= 1e-9 * dc[i].abs().max(1e-3), "{l} vs {}", dc[i]);
        }
        assert!(ev.iter().all(|c| c.value < 0.0));
    }

    #[test]
    fn auxiliary_gap_arithmetic() {
        let s = vi_structure(LayerPolicy::NoSplit);
        let stats = ChannelStatistics::iid(3, 1, 2, 1.0).unwrap();
        let h = sample_realization(&stats, RngStream::for_realization(2, 0));
        let p = params(&s);
        let mut it = init_feasible_slow(&h, &s, &p).unwrap();
        for (e, u) in it.e.iter_mut().zip(&mut it.u) {
            *u = math::exp2(*e / p.bandwidth);
        }
        assert!(auxiliary_gap(&it) < 1e-12);
        it.u.iter_mut().for_each(|u| *u *= 2.0);
        assert!((auxiliary_gap(&it) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_channel_rate_is_zero() {
        let s = vi_structure(LayerPolicy::NoSplit);
        let stats = ChannelStatistics::iid(3, 1, 2, 1.0).unwrap();
        let h = sample_realization(&stats, RngStream::for_realization(2, 0));
        let w = BeamformerSet::zeros(1, s.layers().len(), 2);
        let p = params(&s);
        let x = &s.decode_subsets(1).unwrap()[0];
        assert_eq!(achievable_rate_rhs(&h, &w, &s, 1, x, &p).unwrap(), 0.0);
    }
}
