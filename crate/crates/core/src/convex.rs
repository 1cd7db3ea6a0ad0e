//! Smooth convex programs and a log-barrier interior-point solver.
//!
//! A program maximizes `c·x` subject to constraints `Σ atoms(x) ≤ 0`. Atoms
//! are affine forms, nonnegative-scaled sums of squared affine forms,
//! base-2 exponentials of one variable, and negative weighted logarithms of
//! affine forms. Every atom is convex, so every constraint is convex.
//!
//! The Newton system is dense by default. When the caller supplies a block
//! partition of the variables and every constraint touches at most one
//! non-global block, the solver factorizes each block and eliminates the
//! shared globals through a Schur complement.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use alloc::format;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::math;

/// Contiguous run of variables registered in a [`VariableSpace`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockRef {
    pub offset: usize,
    pub len: usize,
}

impl BlockRef {
    #[inline]
    pub fn at(&self, i: usize) -> usize {
        debug_assert!(i < self.len);
        self.offset + i
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len
    }

    /// Real index of the real part of complex entry `i` (interleaved storage).
    #[inline]
    pub fn re(&self, i: usize) -> usize {
        self.at(2 * i)
    }

    #[inline]
    pub fn im(&self, i: usize) -> usize {
        self.at(2 * i + 1)
    }
}

/// Named real variable blocks; complex vectors use interleaved re/im pairs.
#[derive(Clone, Debug, Default)]
pub struct VariableSpace {
    names: Vec<String>,
    blocks: Vec<BlockRef>,
    dim: usize,
}

impl VariableSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, len: usize) -> Result<BlockRef> {
        if self.names.iter().any(|n| n == name) {
            return Err(Error::InvalidParameter(format!("duplicate variable block {name}")));
        }
        let b = BlockRef {
            offset: self.dim,
            len,
        };
        self.names.push(name.into());
        self.blocks.push(b);
        self.dim += len;
        Ok(b)
    }

    /// Registers `len` complex entries as `2 * len` reals.
    pub fn add_complex(&mut self, name: &str, len: usize) -> Result<BlockRef> {
        self.add(name, 2 * len)
    }

    pub fn get(&self, name: &str) -> Option<BlockRef> {
        self.names.iter().position(|n| n == name).map(|i| self.blocks[i])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&str, BlockRef)> {
        self.names.iter().map(String::as_str).zip(self.blocks.iter().copied())
    }
}

/// Sparse affine form `a·x + b`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearForm {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinearForm {
    pub fn new(terms: Vec<(usize, f64)>, constant: f64) -> Self {
        LinearForm { terms, constant }
    }

    pub fn constant(constant: f64) -> Self {
        LinearForm {
            terms: Vec::new(),
            constant,
        }
    }

    /// `coef · x_i`.
    pub fn var(i: usize, coef: f64) -> Self {
        LinearForm {
            terms: vec![(i, coef)],
            constant: 0.0,
        }
    }

    pub fn push(&mut self, i: usize, coef: f64) -> &mut Self {
        self.terms.push((i, coef));
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, a)| a * x[i]).sum::<f64>() + self.constant
    }

    fn scaled(mut self, k: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= k;
        }
        self.constant *= k;
        self
    }
}

/// A convex building block of a constraint.
#[derive(Clone, Debug, PartialEq)]
pub enum Atom {
    /// `a·x + b`.
    Affine(LinearForm),
    /// `scale · Σ_j (a_j·x + b_j)²`, `scale ≥ 0`.
    Quadratic { scale: f64, forms: Vec<LinearForm> },
    /// `coef · 2^{x_var / scale}`, `coef ≥ 0`, `scale > 0`.
    Exp2 { coef: f64, var: usize, scale: f64 },
    /// `-Σ_m b_m log₂(a_m·x + c_m)`, `b_m ≥ 0`.
    NegLog { terms: Vec<(f64, LinearForm)> },
}

/// Real forms whose squares sum to `|h^H w|²` for `w` stored in `block`.
pub fn abs2_forms(h: &[Complex64], block: BlockRef) -> [LinearForm; 2] {
    // h^H w = Σ (p - jq)(a + jb) = Σ (pa + qb) + j (pb - qa)
    let mut re = LinearForm::default();
    let mut im = LinearForm::default();
    for (i, z) in h.iter().enumerate() {
        re.push(block.re(i), z.re).push(block.im(i), z.im);
        im.push(block.re(i), -z.im).push(block.im(i), z.re);
    }
    [re, im]
}

/// `Re{v^H w}` as a real linear form over `block`.
pub fn re_inner_form(v: &[Complex64], block: BlockRef) -> LinearForm {
    let mut f = LinearForm::default();
    for (i, z) in v.iter().enumerate() {
        f.push(block.re(i), z.re).push(block.im(i), z.im);
    }
    f
}

impl Atom {
    /// `scale · |h^H w|²`.
    pub fn abs2_inner(h: &[Complex64], w: BlockRef, scale: f64) -> Atom {
        Atom::Quadratic {
            scale,
            forms: abs2_forms(h, w).into(),
        }
    }

    /// `scale · Σ_j |f_j^H w|²`, i.e. `scale · w^H Q w` for `Q = Σ f_j f_j^H`.
    pub fn hermitian_form(factors: &[Vec<Complex64>], w: BlockRef, scale: f64) -> Atom {
        Atom::Quadratic {
            scale,
            forms: factors.iter().flat_map(|f| abs2_forms(f, w)).collect(),
        }
    }

    /// `scale · ‖x_block‖²`.
    pub fn squared_norm(block: BlockRef, scale: f64) -> Atom {
        Atom::Quadratic {
            scale,
            forms: block.range().map(|i| LinearForm::var(i, 1.0)).collect(),
        }
    }

    /// Multiplies the atom by `k > 0`.
    pub fn scaled(self, k: f64) -> Atom {
        match self {
            Atom::Affine(f) => Atom::Affine(f.scaled(k)),
            Atom::Quadratic { scale, forms } => Atom::Quadratic {
                scale: scale * k,
                forms,
            },
            Atom::Exp2 { coef, var, scale } => Atom::Exp2 {
                coef: coef * k,
                var,
                scale,
            },
            Atom::NegLog { terms } => Atom::NegLog {
                terms: terms.into_iter().map(|(b, f)| (b * k, f)).collect(),
            },
        }
    }

    fn indices(&self) -> Vec<usize> {
        match self {
            Atom::Affine(f) => f.terms.iter().map(|t| t.0).collect(),
            Atom::Quadratic { forms, .. } => forms.iter().flat_map(|f| f.terms.iter().map(|t| t.0)).collect(),
            Atom::Exp2 { var, .. } => vec![*var],
            Atom::NegLog { terms } => terms.iter().flat_map(|(_, f)| f.terms.iter().map(|t| t.0)).collect(),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if let Some(i) = self.indices().into_iter().find(|&i| i >= dim) {
            return Err(Error::Dimension(format!("atom references variable {i} of {dim}")));
        }
        let ok = match self {
            Atom::Affine(_) => true,
            Atom::Quadratic { scale, .. } => *scale >= 0.0 && scale.is_finite(),
            Atom::Exp2 { coef, scale, .. } => *coef >= 0.0 && coef.is_finite() && *scale > 0.0,
            Atom::NegLog { terms } => terms.iter().all(|(b, _)| *b >= 0.0 && b.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("atom violates its convexity sign rule: {self:?}")))
        }
    }
}

/// `Σ atoms ≤ 0`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Constraint {
    pub atoms: Vec<Atom>,
}

impl Constraint {
    pub fn new(atoms: Vec<Atom>) -> Self {
        Constraint { atoms }
    }

    pub fn affine(form: LinearForm) -> Self {
        Constraint {
            atoms: vec![Atom::Affine(form)],
        }
    }

    pub fn push(&mut self, atom: Atom) -> &mut Self {
        self.atoms.push(atom);
        self
    }

    pub fn scaled(self, k: f64) -> Self {
        Constraint {
            atoms: self.atoms.into_iter().map(|a| a.scaled(k)).collect(),
        }
    }
}

/// Block id of variables shared by all blocks in a partition.
pub const GLOBAL_BLOCK: u32 = u32::MAX;

/// Maximize `objective · x` subject to every constraint `≤ 0`.
#[derive(Clone, Debug, Default)]
pub struct ConvexProgram {
    space: VariableSpace,
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
    blocks: Option<Vec<u32>>,
}

impl ConvexProgram {
    pub fn new(space: VariableSpace) -> Self {
        let d = space.dim();
        ConvexProgram {
            space,
            objective: vec![0.0; d],
            constraints: Vec::new(),
            blocks: None,
        }
    }

    pub fn space(&self) -> &VariableSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn set_objective(&mut self, form: &LinearForm) -> Result<()> {
        let mut c = vec![0.0; self.dim()];
        for &(i, a) in &form.terms {
            if i >= c.len() {
                return Err(Error::Dimension(format!("objective references variable {i}")));
            }
            c[i] += a;
        }
        self.objective = c;
        Ok(())
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        dot(&self.objective, x)
    }

    /// Adds a constraint and returns its index.
    pub fn add_constraint(&mut self, c: Constraint) -> Result<usize> {
        for a in &c.atoms {
            a.validate(self.dim())?;
        }
        self.constraints.push(c);
        Ok(self.constraints.len() - 1)
    }

    /// Adds `lo ≤ x_i` as `-x_i + lo ≤ 0`.
    pub fn add_lower_bound(&mut self, i: usize, lo: f64) -> Result<usize> {
        self.add_constraint(Constraint::affine(LinearForm::new(vec![(i, -1.0)], lo)))
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Assigns every variable a block id ([`GLOBAL_BLOCK`] for shared
    /// variables). When every constraint touches at most one non-global
    /// block, Newton systems are solved blockwise through a Schur complement
    /// on the globals; otherwise the partition is ignored.
    pub fn set_block_partition(&mut self, blocks: Vec<u32>) -> Result<()> {
        if blocks.len() != self.dim() {
            return Err(Error::Dimension("block partition length differs from dimension".into()));
        }
        self.blocks = Some(blocks);
        Ok(())
    }

    pub fn block_partition(&self) -> Option<&[u32]> {
        self.blocks.as_deref()
    }
}

/// Value and sparse gradient of one constraint.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintEval {
    pub value: f64,
    pub gradient: Vec<(usize, f64)>,
}

/// Values and gradients of every constraint at `x`.
pub fn evaluate_constraints(program: &ConvexProgram, x: &[f64]) -> Result<Vec<ConstraintEval>> {
    let comp = Compiled::new(program);
    let mut scratch = Scratch::new(&comp);
    comp.cons
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            c.gather(x, &mut scratch.xl);
            let value = c.value(&scratch.xl).ok_or(Error::Domain { constraint: ci })?;
            let g = &mut scratch.g[..c.support.len()];
            c.gradient(&scratch.xl, g);
            Ok(ConstraintEval {
                value,
                gradient: c.support.iter().copied().zip(g.iter().copied()).collect(),
            })
        })
        .collect()
}

/// Solver status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
}

/// One Newton iteration of the barrier method.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub mu: f64,
    pub objective: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Max of the relative duality gap `m/(t·|obj|)` and the relative centering
    /// suboptimality `λ²/(2t·|obj|)`; iterates are strictly feasible.
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Objective after each completed barrier stage.
    pub stage_objectives: Vec<f64>,
    pub trace: Vec<TraceRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub kkt_tol: f64,
    pub feas_tol: f64,
    /// Newton cap per barrier stage.
    pub max_newton: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Barrier parameter growth per stage.
    pub mu: f64,
    pub max_stages: usize,
    pub trace: bool,
    /// Ignore the block partition and solve dense.
    pub force_dense: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            kkt_tol: 1e-6,
            feas_tol: 1e-8,
            max_newton: 200,
            alpha: 0.1,
            beta: 0.5,
            mu: 10.0,
            max_stages: 40,
            trace: false,
            force_dense: false,
        }
    }
}

/// Maximizes the program from `start`, running phase I first if `start` is
/// not strictly feasible.
pub fn solve(program: &ConvexProgram, start: &[f64], opts: &SolveOptions) -> Result<Solution> {
    if start.len() != program.dim() {
        return Err(Error::Dimension(format!("start has {} entries for {}", start.len(), program.dim())));
    }
    let comp = Compiled::new(program);
    let x0 = match comp.max_value(start) {
        Some(v) if v < 0.0 => start.to_vec(),
        _ => phase1_start_from(program, start, opts)?,
    };
    let plan = if opts.force_dense {
        None
    } else {
        program.blocks.as_deref().and_then(|b| ArrowPlan::new(&comp, b))
    };
    barrier(&comp, plan.as_ref(), x0, opts, None)
}

/// A point with every constraint `≤ -feas_tol`, from the origin.
pub fn phase1_start(program: &ConvexProgram) -> Result<Vec<f64>> {
    phase1_start_from(program, &vec![0.0; program.dim()], &SolveOptions::default())
}

/// Phase I by slack minimization: minimize `s` s.t. `f_i(x) ≤ s`, stopping as
/// soon as every `f_i ≤ -feas_tol`.
pub fn phase1_start_from(program: &ConvexProgram, x0: &[f64], opts: &SolveOptions) -> Result<Vec<f64>> {
    let d = program.dim();
    let comp = Compiled::new(program);
    let worst = comp.max_value(x0).ok_or(Error::Domain {
        constraint: comp.first_domain_violation(x0).unwrap_or(0),
    })?;
    if comp.cons.is_empty() || worst <= -opts.feas_tol {
        return Ok(x0.to_vec());
    }

    let mut space = program.space.clone();
    let s = space.add("__phase1_slack", 1)?.offset;
    let mut p1 = ConvexProgram::new(space);
    for c in &program.constraints {
        let mut c = c.clone();
        c.push(Atom::Affine(LinearForm::var(s, -1.0)));
        p1.add_constraint(c)?;
    }
    let floor = worst.abs().max(1.0) * 1e3;
    p1.add_lower_bound(s, -floor)?;
    p1.set_objective(&LinearForm::var(s, -1.0))?;

    let mut start = x0.to_vec();
    start.push(worst + worst.abs().max(1.0));
    let comp1 = Compiled::new(&p1);
    let target = opts.feas_tol;
    let stop = |x: &[f64]| comp.max_value(&x[..d]).is_some_and(|v| v <= -target);
    let sol = barrier(&comp1, None, start, opts, Some(&stop))?;
    let x = sol.x[..d].to_vec();
    match comp.max_value(&x) {
        Some(v) if v <= -target => Ok(x),
        _ => Err(Error::Infeasible {
            phase1_value: sol.x[d],
        }),
    }
}

// ---------------------------------------------------------------------------
// Compiled representation: constraint supports with local indices.

struct LForm {
    pos: Vec<u32>,
    coef: Vec<f64>,
    constant: f64,
}

impl LForm {
    #[inline]
    fn eval(&self, xl: &[f64]) -> f64 {
        self.pos.iter().zip(&self.coef).map(|(&p, a)| a * xl[p as usize]).sum::<f64>() + self.constant
    }

    #[inline]
    fn axpy(&self, k: f64, g: &mut [f64]) {
        for (&p, a) in self.pos.iter().zip(&self.coef) {
            g[p as usize] += k * a;
        }
    }
}

enum LAtom {
    Affine(LForm),
    Quad { scale: f64, forms: Vec<LForm> },
    Exp2 { coef: f64, pos: u32, scale: f64 },
    NegLog { terms: Vec<(f64, LForm)> },
}

/// Exponent beyond which `2^x` is treated as a domain violation.
const EXP2_LIMIT: f64 = 1000.0;

struct CCons {
    support: Vec<usize>,
    atoms: Vec<LAtom>,
    cone: Option<ExpCone>,
}

/// `2^{x_p/scale + log_coef} ≤ a(x)` with `a = -aff` affine and free of `x_p`,
/// barriered as `-ln(log₂ a - x_p/scale - log_coef) - ln a`. Unlike
/// `-ln(a - 2^{…})` this barrier is self-concordant, so Newton does not crawl
/// along the curved boundary.
struct ExpCone {
    pos: u32,
    scale: f64,
    log_coef: f64,
    aff: LForm,
}

impl ExpCone {
    /// `(a, h)` when both are positive.
    #[inline]
    fn parts(&self, xl: &[f64]) -> Option<(f64, f64)> {
        let a = -self.aff.eval(xl);
        if !(a > 0.0) {
            return None;
        }
        let h = math::log2(a) - xl[self.pos as usize] / self.scale - self.log_coef;
        (h > 0.0 && h.is_finite()).then_some((a, h))
    }

    fn barrier(&self, xl: &[f64]) -> Option<f64> {
        let (a, h) = self.parts(xl)?;
        Some(-math::ln(h) - math::ln(a))
    }

    /// Barrier gradient into `grad` (global) and Hessian into `sys`.
    fn derivatives(&self, support: &[usize], xl: &[f64], grad: &mut [f64], sys: &mut System<'_>, buf: &mut [f64]) -> Option<()> {
        let (a, h) = self.parts(xl)?;
        let k = support.len();
        let (ga, gh) = buf[..2 * k].split_at_mut(k);
        ga.iter_mut().for_each(|v| *v = 0.0);
        self.aff.axpy(-1.0, ga);
        for (hv, av) in gh.iter_mut().zip(ga.iter()) {
            *hv = av / (a * math::LN_2);
        }
        gh[self.pos as usize] -= 1.0 / self.scale;
        for (j, &i) in support.iter().enumerate() {
            grad[i] -= gh[j] / h + ga[j] / a;
        }
        sys.outer(support, gh, 1.0 / (h * h));
        sys.outer(support, ga, 1.0 / (h * a * a * math::LN_2) + 1.0 / (a * a));
        Some(())
    }
}

impl CCons {
    fn new(c: &Constraint) -> Self {
        let mut support: Vec<usize> = c.atoms.iter().flat_map(Atom::indices).collect();
        support.sort_unstable();
        support.dedup();
        let local = |i: usize| support.binary_search(&i).expect("index in support") as u32;
        let lform = |f: &LinearForm| {
            // Merge duplicate indices so Hessian outer products stay exact.
            let mut pairs: Vec<(u32, f64)> = f.terms.iter().map(|&(i, a)| (local(i), a)).collect();
            pairs.sort_by_key(|p| p.0);
            let mut pos = Vec::with_capacity(pairs.len());
            let mut coef: Vec<f64> = Vec::with_capacity(pairs.len());
            for (p, a) in pairs {
                if pos.last() == Some(&p) {
                    *coef.last_mut().expect("nonempty") += a;
                } else {
                    pos.push(p);
                    coef.push(a);
                }
            }
            LForm {
                pos,
                coef,
                constant: f.constant,
            }
        };
        let cone = Self::exp_cone(c, &lform);
        let atoms = c
            .atoms
            .iter()
            .map(|a| match a {
                Atom::Affine(f) => LAtom::Affine(lform(f)),
                Atom::Quadratic { scale, forms } => LAtom::Quad {
                    scale: *scale,
                    forms: forms.iter().map(lform).collect(),
                },
                Atom::Exp2 { coef, var, scale } => LAtom::Exp2 {
                    coef: *coef,
                    pos: local(*var),
                    scale: *scale,
                },
                Atom::NegLog { terms } => LAtom::NegLog {
                    terms: terms.iter().map(|(b, f)| (*b, lform(f))).collect(),
                },
            })
            .collect();
        CCons { support, atoms, cone }
    }

    fn exp_cone(c: &Constraint, lform: &dyn Fn(&LinearForm) -> LForm) -> Option<ExpCone> {
        let mut exp = None;
        let mut aff = LinearForm::constant(0.0);
        for a in &c.atoms {
            match a {
                Atom::Exp2 { coef, var, scale } if exp.is_none() && *coef > 0.0 => exp = Some((*coef, *var, *scale)),
                Atom::Affine(f) => {
                    aff.terms.extend_from_slice(&f.terms);
                    aff.constant += f.constant;
                }
                _ => return None,
            }
        }
        let (coef, var, scale) = exp?;
        let aff = lform(&aff);
        let pos = lform(&LinearForm::var(var, 1.0)).pos[0];
        if aff.pos.iter().zip(&aff.coef).any(|(&p, &a)| p == pos && a != 0.0) {
            return None;
        }
        Some(ExpCone {
            pos,
            scale,
            log_coef: math::log2(coef),
            aff,
        })
    }

    #[inline]
    fn gather(&self, x: &[f64], xl: &mut [f64]) {
        for (j, &i) in self.support.iter().enumerate() {
            xl[j] = x[i];
        }
    }

    /// `None` outside the domain.
    fn value(&self, xl: &[f64]) -> Option<f64> {
        let mut v = 0.0;
        for a in &self.atoms {
            v += match a {
                LAtom::Affine(f) => f.eval(xl),
                LAtom::Quad { scale, forms } => scale * forms.iter().map(|f| { let v = f.eval(xl); v * v }).sum::<f64>(),
                LAtom::Exp2 { coef, pos, scale } => {
                    let z = xl[*pos as usize] / scale;
                    if !(z < EXP2_LIMIT) {
                        return None;
                    }
                    coef * math::exp2(z)
                }
                LAtom::NegLog { terms } => {
                    let mut s = 0.0;
                    for (b, f) in terms {
                        let z = f.eval(xl);
                        if !(z > 0.0) {
                            return None;
                        }
                        s -= b * math::log2(z);
                    }
                    s
                }
            };
        }
        if v.is_finite() {
            Some(v)
        } else {
            None
        }
    }

    /// Writes the gradient into `g` (length = support).
    fn gradient(&self, xl: &[f64], g: &mut [f64]) {
        g.iter_mut().for_each(|v| *v = 0.0);
        for a in &self.atoms {
            match a {
                LAtom::Affine(f) => f.axpy(1.0, g),
                LAtom::Quad { scale, forms } => {
                    for f in forms {
                        f.axpy(2.0 * scale * f.eval(xl), g);
                    }
                }
                LAtom::Exp2 { coef, pos, scale } => {
                    let k = math::LN_2 / scale;
                    g[*pos as usize] += coef * math::exp2(xl[*pos as usize] / scale) * k;
                }
                LAtom::NegLog { terms } => {
                    for (b, f) in terms {
                        f.axpy(-b / (f.eval(xl) * math::LN_2), g);
                    }
                }
            }
        }
    }

    /// Emits `weight · ∇²f` as diagonal entries and rank-one sparse terms.
    fn hessian<S: HessSink>(&self, xl: &[f64], weight: f64, sink: &mut S) {
        for a in &self.atoms {
            match a {
                LAtom::Affine(_) => {}
                LAtom::Quad { scale, forms } => {
                    for f in forms {
                        sink.rank_one(&self.support, f, 2.0 * scale * weight);
                    }
                }
                LAtom::Exp2 { coef, pos, scale } => {
                    let k = math::LN_2 / scale;
                    let i = self.support[*pos as usize];
                    sink.add(i, i, weight * coef * math::exp2(xl[*pos as usize] / scale) * k * k);
                }
                LAtom::NegLog { terms } => {
                    for (b, f) in terms {
                        let z = f.eval(xl);
                        sink.rank_one(&self.support, f, weight * b / (z * z * math::LN_2));
                    }
                }
            }
        }
    }
}

struct Compiled {
    dim: usize,
    c: Vec<f64>,
    cons: Vec<CCons>,
    max_support: usize,
    /// Logarithmic terms in the barrier (cones contribute two).
    barrier_terms: usize,
}

impl Compiled {
    fn new(p: &ConvexProgram) -> Self {
        let cons: Vec<CCons> = p.constraints.iter().map(CCons::new).collect();
        let max_support = cons.iter().map(|c| c.support.len()).max().unwrap_or(0);
        let barrier_terms = cons.len() + cons.iter().filter(|c| c.cone.is_some()).count();
        Compiled {
            dim: p.dim(),
            c: p.objective.clone(),
            cons,
            max_support,
            barrier_terms,
        }
    }

    fn max_value(&self, x: &[f64]) -> Option<f64> {
        let mut xl = vec![0.0; self.max_support];
        let mut worst = f64::NEG_INFINITY;
        for c in &self.cons {
            c.gather(x, &mut xl);
            worst = worst.max(c.value(&xl)?);
        }
        Some(worst)
    }

    fn first_domain_violation(&self, x: &[f64]) -> Option<usize> {
        let mut xl = vec![0.0; self.max_support];
        self.cons.iter().position(|c| {
            c.gather(x, &mut xl);
            c.value(&xl).is_none()
        })
    }
}

struct Scratch {
    xl: Vec<f64>,
    g: Vec<f64>,
    buf: Vec<f64>,
}

impl Scratch {
    fn new(comp: &Compiled) -> Self {
        Scratch {
            xl: vec![0.0; comp.max_support],
            g: vec![0.0; comp.max_support],
            buf: vec![0.0; 2 * comp.max_support],
        }
    }
}

// ---------------------------------------------------------------------------
// Newton systems.

trait HessSink {
    fn add(&mut self, i: usize, j: usize, v: f64);

    /// `v · a aᵀ` for a local form.
    fn rank_one(&mut self, support: &[usize], f: &LForm, v: f64) {
        for (&pa, ca) in f.pos.iter().zip(&f.coef) {
            let i = support[pa as usize];
            for (&pb, cb) in f.pos.iter().zip(&f.coef) {
                self.add(i, support[pb as usize], v * ca * cb);
            }
        }
    }

    /// `v · g gᵀ` for a gradient over `support`.
    fn outer(&mut self, support: &[usize], g: &[f64], v: f64);
}

struct DenseSystem {
    h: DMatrix<f64>,
}

impl HessSink for DenseSystem {
    #[inline]
    fn add(&mut self, i: usize, j: usize, v: f64) {
        self.h[(i, j)] += v;
    }

    fn outer(&mut self, support: &[usize], g: &[f64], v: f64) {
        for (a, &i) in support.iter().enumerate() {
            let ga = v * g[a];
            if ga == 0.0 {
                continue;
            }
            for (b, &j) in support.iter().enumerate() {
                self.h[(j, i)] += ga * g[b];
            }
        }
    }
}

/// Arrow structure derived from a variable partition: independent local
/// blocks coupled only through a shared set of global variables.
struct ArrowPlan {
    /// Local block of each variable, `None` for globals.
    var_block: Vec<Option<usize>>,
    /// Index inside the variable's block, or inside the global set.
    var_local: Vec<usize>,
    members: Vec<Vec<usize>>,
    globals: Vec<usize>,
    /// Per block: global-set indices its constraints touch, ascending.
    block_globals: Vec<Vec<usize>>,
    /// Per block: column of each global-set index in the coupling matrix.
    global_col: Vec<Vec<u32>>,
}

const NO_COL: u32 = u32::MAX;

impl ArrowPlan {
    fn new(comp: &Compiled, blocks: &[u32]) -> Option<Self> {
        let mut ids: Vec<u32> = blocks.iter().copied().filter(|&b| b != GLOBAL_BLOCK).collect();
        ids.sort_unstable();
        ids.dedup();
        let mut var_block = vec![None; comp.dim];
        let mut var_local = vec![0; comp.dim];
        let mut members = vec![Vec::new(); ids.len()];
        let mut globals = Vec::new();
        for (i, b) in blocks.iter().enumerate() {
            if *b == GLOBAL_BLOCK {
                var_local[i] = globals.len();
                globals.push(i);
            } else {
                let bi = ids.binary_search(b).expect("id present");
                var_block[i] = Some(bi);
                var_local[i] = members[bi].len();
                members[bi].push(i);
            }
        }
        let mut global_col = vec![vec![NO_COL; globals.len()]; ids.len()];
        for c in &comp.cons {
            let mut local = c.support.iter().filter_map(|&i| var_block[i]);
            let Some(b) = local.next() else { continue };
            if local.any(|o| o != b) {
                return None;
            }
            for &i in &c.support {
                if var_block[i].is_none() {
                    global_col[b][var_local[i]] = 0;
                }
            }
        }
        let mut block_globals = Vec::with_capacity(ids.len());
        for cols in global_col.iter_mut() {
            let touched: Vec<usize> = (0..cols.len()).filter(|&g| cols[g] != NO_COL).collect();
            for (k, &g) in touched.iter().enumerate() {
                cols[g] = k as u32;
            }
            block_globals.push(touched);
        }
        Some(ArrowPlan {
            var_block,
            var_local,
            members,
            globals,
            block_globals,
            global_col,
        })
    }
}

/// `[A_b, B_b; B_bᵀ, C]` with block-diagonal `A`.
struct ArrowSystem<'p> {
    plan: &'p ArrowPlan,
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    c: DMatrix<f64>,
}

impl<'p> ArrowSystem<'p> {
    fn new(plan: &'p ArrowPlan) -> Self {
        ArrowSystem {
            plan,
            a: plan.members.iter().map(|m| DMatrix::zeros(m.len(), m.len())).collect(),
            b: plan
                .members
                .iter()
                .zip(&plan.block_globals)
                .map(|(m, g)| DMatrix::zeros(m.len(), g.len()))
                .collect(),
            c: DMatrix::zeros(plan.globals.len(), plan.globals.len()),
        }
    }

    fn reset(&mut self) {
        self.a.iter_mut().for_each(|m| m.fill(0.0));
        self.b.iter_mut().for_each(|m| m.fill(0.0));
        self.c.fill(0.0);
    }
}

impl HessSink for ArrowSystem<'_> {
    /// Every contribution arrives with its mirror, so the global-local
    /// entries are taken once from the local-global side.
    #[inline]
    fn add(&mut self, i: usize, j: usize, v: f64) {
        let p = self.plan;
        let (li, lj) = (p.var_local[i], p.var_local[j]);
        match (p.var_block[i], p.var_block[j]) {
            (Some(b), Some(bj)) => {
                debug_assert_eq!(b, bj);
                self.a[b][(li, lj)] += v;
            }
            (Some(b), None) => {
                let col = p.global_col[b][lj];
                debug_assert_ne!(col, NO_COL);
                self.b[b][(li, col as usize)] += v;
            }
            (None, Some(_)) => {}
            (None, None) => self.c[(li, lj)] += v,
        }
    }

    fn outer(&mut self, support: &[usize], g: &[f64], v: f64) {
        for (a, &i) in support.iter().enumerate() {
            let ga = v * g[a];
            if ga == 0.0 {
                continue;
            }
            for (bb, &j) in support.iter().enumerate() {
                self.add(i, j, ga * g[bb]);
            }
        }
    }
}

/// Cholesky of `m + δ·I` with growing `δ` until it succeeds.
fn robust_cholesky(m: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let n = m.nrows();
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let mut delta = 1e-14;
    while delta <= 1e-4 {
        let mut r = m.clone();
        for i in 0..n {
            r[(i, i)] += delta;
        }
        if let Some(c) = r.cholesky() {
            return Ok(c);
        }
        delta *= 100.0;
    }
    Err(Error::Singular)
}

/// Diagonal scaling `d_i = 1/sqrt(H_ii)`.
fn equilibration(diag: &[f64]) -> Vec<f64> {
    let top = diag.iter().fold(0.0f64, |m, v| m.max(*v));
    let floor = (top * 1e-300).max(f64::MIN_POSITIVE);
    diag.iter().map(|&v| 1.0 / math::sqrt(v.max(floor))).collect()
}

impl DenseSystem {
    fn solve(&mut self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = rhs.len();
        let diag: Vec<f64> = (0..n).map(|i| self.h[(i, i)]).collect();
        let d = equilibration(&diag);
        let mut m = self.h.clone();
        for j in 0..n {
            for i in 0..n {
                m[(i, j)] *= d[i] * d[j];
            }
        }
        let chol = robust_cholesky(m)?;
        let mut y = DVector::from_iterator(n, rhs.iter().zip(&d).map(|(r, di)| r * di));
        chol.solve_mut(&mut y);
        Ok(y.iter().zip(&d).map(|(v, di)| v * di).collect())
    }
}

impl ArrowSystem<'_> {
    /// Schur complement on the globals, one step of iterative refinement.
    fn solve(&mut self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = rhs.len();
        let plan = self.plan;
        let mut diag = vec![0.0; n];
        for (b, m) in self.a.iter().enumerate() {
            for (l, &i) in plan.members[b].iter().enumerate() {
                diag[i] = m[(l, l)];
            }
        }
        for (l, &i) in plan.globals.iter().enumerate() {
            diag[i] = self.c[(l, l)];
        }
        let d = equilibration(&diag);
        let dg: Vec<f64> = plan.globals.iter().map(|&i| d[i]).collect();

        for (b, (a, bm)) in self.a.iter_mut().zip(self.b.iter_mut()).enumerate() {
            let mem = &plan.members[b];
            for j in 0..mem.len() {
                for i in 0..mem.len() {
                    a[(i, j)] *= d[mem[i]] * d[mem[j]];
                }
            }
            for (k, &g) in plan.block_globals[b].iter().enumerate() {
                for i in 0..mem.len() {
                    bm[(i, k)] *= d[mem[i]] * dg[g];
                }
            }
        }
        let ng = plan.globals.len();
        for j in 0..ng {
            for i in 0..ng {
                self.c[(i, j)] *= dg[i] * dg[j];
            }
        }

        let mut schur = self.c.clone();
        let mut chols = Vec::with_capacity(self.a.len());
        let mut ys = Vec::with_capacity(self.a.len());
        for (b, (a, bm)) in self.a.iter().zip(&self.b).enumerate() {
            let ch = robust_cholesky(a.clone())?;
            let y = ch.solve(bm);
            let t = bm.transpose() * &y;
            let cols = &plan.block_globals[b];
            for (q, &gq) in cols.iter().enumerate() {
                for (p, &gp) in cols.iter().enumerate() {
                    schur[(gp, gq)] -= t[(p, q)];
                }
            }
            chols.push(ch);
            ys.push(y);
        }
        let schur = if ng > 0 { Some(robust_cholesky(schur)?) } else { None };

        let solve_scaled = |r: &[f64]| -> Vec<f64> {
            let mut x = vec![0.0; n];
            let mut rg = DVector::from_iterator(ng, plan.globals.iter().map(|&i| r[i]));
            let mut zs = Vec::with_capacity(chols.len());
            for (b, ch) in chols.iter().enumerate() {
                let mem = &plan.members[b];
                let mut z = DVector::from_iterator(mem.len(), mem.iter().map(|&i| r[i]));
                ch.solve_mut(&mut z);
                let bz = self.b[b].tr_mul(&z);
                for (k, &g) in plan.block_globals[b].iter().enumerate() {
                    rg[g] -= bz[k];
                }
                zs.push(z);
            }
            if let Some(s) = &schur {
                s.solve_mut(&mut rg);
            }
            for (l, &i) in plan.globals.iter().enumerate() {
                x[i] = rg[l];
            }
            for (b, z) in zs.iter_mut().enumerate() {
                let cols = &plan.block_globals[b];
                let xg = DVector::from_iterator(cols.len(), cols.iter().map(|&g| rg[g]));
                *z -= &ys[b] * xg;
                for (l, &i) in plan.members[b].iter().enumerate() {
                    x[i] = z[l];
                }
            }
            x
        };
        let apply = |x: &[f64]| -> Vec<f64> {
            let mut y = vec![0.0; n];
            let xg = DVector::from_iterator(ng, plan.globals.iter().map(|&i| x[i]));
            let mut yg = &self.c * &xg;
            for (b, a) in self.a.iter().enumerate() {
                let mem = &plan.members[b];
                let cols = &plan.block_globals[b];
                let xb = DVector::from_iterator(mem.len(), mem.iter().map(|&i| x[i]));
                let xbg = DVector::from_iterator(cols.len(), cols.iter().map(|&g| xg[g]));
                let yb = a * &xb + &self.b[b] * xbg;
                let bt = self.b[b].tr_mul(&xb);
                for (k, &g) in cols.iter().enumerate() {
                    yg[g] += bt[k];
                }
                for (l, &i) in mem.iter().enumerate() {
                    y[i] = yb[l];
                }
            }
            for (l, &i) in plan.globals.iter().enumerate() {
                y[i] = yg[l];
            }
            y
        };

        let bs: Vec<f64> = rhs.iter().zip(&d).map(|(v, di)| v * di).collect();
        let mut y = solve_scaled(&bs);
        let hy = apply(&y);
        let res: Vec<f64> = bs.iter().zip(&hy).map(|(b, h)| b - h).collect();
        let corr = solve_scaled(&res);
        for (yi, ci) in y.iter_mut().zip(&corr) {
            *yi += ci;
        }
        Ok(y.iter().zip(&d).map(|(v, di)| v * di).collect())
    }
}

enum System<'p> {
    Dense(DenseSystem),
    Arrow(ArrowSystem<'p>),
}

impl<'p> System<'p> {
    fn new(dim: usize, plan: Option<&'p ArrowPlan>) -> Self {
        match plan {
            Some(plan) => System::Arrow(ArrowSystem::new(plan)),
            None => System::Dense(DenseSystem {
                h: DMatrix::zeros(dim, dim),
            }),
        }
    }

    fn reset(&mut self) {
        match self {
            System::Dense(s) => s.h.fill(0.0),
            System::Arrow(s) => s.reset(),
        }
    }

    fn accumulate(&mut self, c: &CCons, xl: &[f64], g: &[f64], f: f64) {
        let inv = 1.0 / -f;
        match self {
            System::Dense(s) => c.hessian(xl, inv, s),
            System::Arrow(s) => c.hessian(xl, inv, s),
        }
        self.outer(&c.support, g, inv * inv);
    }

    /// `v · g gᵀ` over `support`.
    fn outer(&mut self, support: &[usize], g: &[f64], v: f64) {
        match self {
            System::Dense(s) => s.outer(support, g, v),
            System::Arrow(s) => s.outer(support, g, v),
        }
    }

    fn solve(&mut self, rhs: &[f64]) -> Result<Vec<f64>> {
        match self {
            System::Dense(s) => s.solve(rhs),
            System::Arrow(s) => s.solve(rhs),
        }
    }
}

// ---------------------------------------------------------------------------
// Barrier method.

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(math::abs(*v)))
}

/// Relative centering suboptimality below which a stage is done.
const CENTERED_REL: f64 = 1e-12;
/// Accepted steps shorter than this make no progress.
const MIN_STEP: f64 = 1e-8;

/// `-t c·x - Σ ln(-f_i)`, or `None` outside the strict interior.
fn barrier_value(comp: &Compiled, x: &[f64], t: f64, xl: &mut [f64]) -> Option<f64> {
    let mut v = -t * dot(&comp.c, x);
    for c in &comp.cons {
        c.gather(x, xl);
        if let Some(cone) = &c.cone {
            v += cone.barrier(xl)?;
            continue;
        }
        let f = c.value(xl)?;
        if !(f < 0.0) {
            return None;
        }
        v -= math::ln(-f);
    }
    Some(v)
}

/// Gradient of the barrier function; fills the Newton system with its Hessian.
fn barrier_derivatives(
    comp: &Compiled,
    x: &[f64],
    t: f64,
    sys: &mut System<'_>,
    scratch: &mut Scratch,
) -> Result<Vec<f64>> {
    sys.reset();
    let mut grad: Vec<f64> = comp.c.iter().map(|c| -t * c).collect();
    for (ci, c) in comp.cons.iter().enumerate() {
        let k = c.support.len();
        c.gather(x, &mut scratch.xl);
        if let Some(cone) = &c.cone {
            cone.derivatives(&c.support, &scratch.xl[..k], &mut grad, sys, &mut scratch.buf)
                .ok_or(Error::Domain { constraint: ci })?;
            continue;
        }
        let f = c.value(&scratch.xl[..k]).ok_or(Error::Domain { constraint: ci })?;
        if !(f < 0.0) {
            return Err(Error::Domain { constraint: ci });
        }
        let g = &mut scratch.g[..k];
        c.gradient(&scratch.xl[..k], g);
        let inv = 1.0 / -f;
        for (&i, gi) in c.support.iter().zip(g.iter()) {
            grad[i] += inv * gi;
        }
        sys.accumulate(c, &scratch.xl[..k], g, f);
    }
    Ok(grad)
}

/// Returns true once a barrier iterate is good enough to stop early.
type EarlyExit<'a> = &'a dyn Fn(&[f64]) -> bool;

fn barrier(
    comp: &Compiled,
    plan: Option<&ArrowPlan>,
    mut x: Vec<f64>,
    opts: &SolveOptions,
    early_exit: Option<EarlyExit<'_>>,
) -> Result<Solution> {
    let m = comp.barrier_terms;
    let mut scratch = Scratch::new(comp);
    let mut trial_xl = vec![0.0; comp.max_support];
    let obj_scale = |x: &[f64]| math::abs(dot(&comp.c, x)).max(1.0);

    let mut sol = Solution {
        x: Vec::new(),
        objective: 0.0,
        kkt_residual: f64::INFINITY,
        iterations: 0,
        status: SolveStatus::Optimal,
        stage_objectives: Vec::new(),
        trace: Vec::new(),
    };
    if m == 0 {
        // Unconstrained linear objective: bounded only if c = 0.
        if inf_norm(&comp.c) > 0.0 {
            return Err(Error::InvalidParameter("unbounded program without constraints".into()));
        }
        sol.objective = 0.0;
        sol.kkt_residual = 0.0;
        sol.x = x;
        return Ok(sol);
    }

    let mut sys = System::new(comp.dim, plan);
    let mut t = m as f64 / obj_scale(&x);
    let mut stationarity = f64::INFINITY;
    let newton_eps = 1e-10;

    for _stage in 0..opts.max_stages {
        let mut centered = false;
        for _ in 0..opts.max_newton {
            let grad = barrier_derivatives(comp, &x, t, &mut sys, &mut scratch)?;
            let step: Vec<f64> = sys.solve(&grad)?.into_iter().map(|v| -v).collect();
            let slope = dot(&grad, &step);
            let decrement = -slope;
            // Centering suboptimality λ²/2 in objective units, relative.
            stationarity = 0.5 * decrement.max(0.0) / (t * obj_scale(&x));
            sol.iterations += 1;
            if opts.trace {
                sol.trace.push(TraceRow {
                    iteration: sol.iterations,
                    mu: t,
                    objective: dot(&comp.c, &x),
                    residual: stationarity,
                });
            }
            // The relative test covers large t, where rounding in the barrier
            // value keeps the absolute decrement above `newton_eps`.
            if !(decrement > 2.0 * newton_eps) || stationarity <= CENTERED_REL {
                centered = true;
                break;
            }
            let phi0 = barrier_value(comp, &x, t, &mut trial_xl).ok_or(Error::Domain { constraint: 0 })?;
            let mut s = 1.0;
            let mut trial = vec![0.0; x.len()];
            let mut accepted = false;
            while s > 1e-20 {
                for ((ti, xi), di) in trial.iter_mut().zip(&x).zip(&step) {
                    *ti = xi + s * di;
                }
                if let Some(phi) = barrier_value(comp, &trial, t, &mut trial_xl) {
                    if phi <= phi0 + opts.alpha * s * slope {
                        accepted = true;
                        break;
                    }
                }
                s *= opts.beta;
            }
            if !accepted || s < MIN_STEP {
                // No descent representable in floating point: treat as centered.
                centered = true;
                if accepted {
                    core::mem::swap(&mut x, &mut trial);
                }
                break;
            }
            core::mem::swap(&mut x, &mut trial);
            if let Some(stop) = early_exit {
                if stop(&x) {
                    sol.objective = dot(&comp.c, &x);
                    sol.x = x;
                    return Ok(sol);
                }
            }
        }
        let obj = dot(&comp.c, &x);
        sol.stage_objectives.push(obj);
        let gap = m as f64 / (t * obj_scale(&x));
        let residual = gap.max(stationarity);
        if !centered {
            sol.status = SolveStatus::MaxIter;
            sol.kkt_residual = residual;
            break;
        }
        if gap <= opts.kkt_tol {
            sol.kkt_residual = residual;
            sol.status = if residual <= opts.kkt_tol {
                SolveStatus::Optimal
            } else {
                SolveStatus::MaxIter
            };
            break;
        }
        sol.kkt_residual = residual;
        sol.status = SolveStatus::MaxIter;
        t *= opts.mu;
    }
    sol.objective = dot(&comp.c, &x);
    sol.x = x;
    Ok(sol)
}
