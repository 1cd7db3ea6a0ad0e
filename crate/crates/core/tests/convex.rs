use gmrs_core::channel::{sample_realization, ChannelStatistics, RngStream};
use gmrs_core::convex::{
    abs2_forms, evaluate_constraints, phase1_start_from, solve, Atom, Constraint, ConvexProgram, LinearForm,
    SolveOptions, SolveStatus, VariableSpace,
};
use gmrs_core::model::{build_layers, partition_messages, LayerPolicy, RequestProfile};
use gmrs_core::slow::{linearized_program, init_feasible_slow, pack_iterate, uniform_weights, SlowParams};
use gmrs_core::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_form(rng: &mut ChaCha8Rng, d: usize, density: f64) -> LinearForm {
    let mut f = LinearForm::constant(rng.random_range(-1.0..1.0));
    for i in 0..d {
        if rng.random_bool(density) {
            f.push(i, rng.random_range(-2.0..2.0));
        }
    }
    f
}

/// Central differences of every constraint value at `x`.
fn fd_gradients(prog: &ConvexProgram, x: &[f64]) -> Vec<Vec<f64>> {
    let d = x.len();
    let mut out = vec![vec![0.0; d]; prog.constraints().len()];
    for i in 0..d {
        let h = 1e-6 * x[i].abs().max(1.0);
        let mut up = x.to_vec();
        let mut dn = x.to_vec();
        up[i] += h;
        dn[i] -= h;
        let a = evaluate_constraints(prog, &up).unwrap();
        let b = evaluate_constraints(prog, &dn).unwrap();
        for (c, row) in out.iter_mut().enumerate() {
            row[i] = (a[c].value - b[c].value) / (2.0 * h);
        }
    }
    out
}

fn dense(grad: &[(usize, f64)], d: usize) -> Vec<f64> {
    let mut g = vec![0.0; d];
    for &(i, v) in grad {
        g[i] += v;
    }
    g
}

/// One constraint per atom kind plus a mixed one, over `d` variables.
fn atom_program(rng: &mut ChaCha8Rng, d: usize) -> ConvexProgram {
    let mut space = VariableSpace::new();
    space.add("x", d).unwrap();
    let mut prog = ConvexProgram::new(space);
    let affine = Atom::Affine(random_form(rng, d, 0.7));
    let quad = Atom::Quadratic {
        scale: rng.random_range(0.1..2.0),
        forms: (0..3).map(|_| random_form(rng, d, 0.6)).collect(),
    };
    let exp = Atom::Exp2 {
        coef: rng.random_range(0.1..2.0),
        var: rng.random_range(0..d),
        scale: rng.random_range(0.5..3.0),
    };
    // Arguments stay positive: constant 20 dominates |a·x| on the sampled box.
    let neglog = Atom::NegLog {
        terms: (0..2)
            .map(|_| {
                let mut f = random_form(rng, d, 0.6);
                f.constant = 20.0;
                (rng.random_range(0.1..2.0), f)
            })
            .collect(),
    };
    for atom in [&affine, &quad, &exp, &neglog] {
        prog.add_constraint(Constraint::new(vec![atom.clone()])).unwrap();
    }
    prog.add_constraint(Constraint::new(vec![affine, quad, exp, neglog])).unwrap();
    prog
}

#[test]
fn atom_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(1..=6);
        let prog = atom_program(&mut rng, d);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let evals = evaluate_constraints(&prog, &x).unwrap();
        let fd = fd_gradients(&prog, &x);
        for (e, f) in evals.iter().zip(&fd) {
            let g = dense(&e.gradient, d);
            let scale = g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let err = g.iter().zip(f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
            worst = worst.max(err);
        }
    }
    assert!(worst <= 1e-5, "worst relative gradient error {worst}");
}

#[test]
fn affine_atom_at_origin_returns_constant_and_coefficients() {
    let mut space = VariableSpace::new();
    space.add("x", 3).unwrap();
    let mut prog = ConvexProgram::new(space);
    prog.add_constraint(Constraint::affine(LinearForm::new(vec![(0, 2.0), (2, -1.0)], 0.5))).unwrap();
    let e = &evaluate_constraints(&prog, &[0.0; 3]).unwrap()[0];
    assert_eq!(e.value, 0.5);
    assert_eq!(dense(&e.gradient, 3), vec![2.0, 0.0, -1.0]);
}

#[test]
fn quadratic_forms_reproduce_complex_gain() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let m = rng.random_range(1..6);
        let mut space = VariableSpace::new();
        let w = space.add_complex("w", m).unwrap();
        let h: Vec<Complex64> = (0..m).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let wc: Vec<Complex64> = (0..m).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let mut x = vec![0.0; space.dim()];
        for i in 0..m {
            x[w.re(i)] = wc[i].re;
            x[w.im(i)] = wc[i].im;
        }
        let direct = h.iter().zip(&wc).map(|(a, b)| a.conj() * b).sum::<Complex64>().norm_sqr();
        let real: f64 = abs2_forms(&h, w).iter().map(|f| f.eval(&x).powi(2)).sum();
        assert!((direct - real).abs() <= 1e-12 * direct.max(1.0));
        let mut prog = ConvexProgram::new(space);
        prog.add_constraint(Constraint::new(vec![Atom::abs2_inner(&h, w, 1.0)])).unwrap();
        let v = evaluate_constraints(&prog, &x).unwrap()[0].value;
        assert!((direct - v).abs() <= 1e-12 * direct.max(1.0));
    }
}

#[test]
fn box_lp_reaches_upper_bound() {
    let mut space = VariableSpace::new();
    let r = space.add("r", 1).unwrap();
    let mut prog = ConvexProgram::new(space);
    prog.set_objective(&LinearForm::var(r.at(0), 1.0)).unwrap();
    prog.add_constraint(Constraint::affine(LinearForm::new(vec![(r.at(0), 1.0)], -5.0))).unwrap();
    prog.add_lower_bound(r.at(0), 0.0).unwrap();
    let sol = solve(&prog, &[1.0], &SolveOptions::default()).unwrap();
    assert!((sol.x[0] - 5.0).abs() < 1e-5);
}

#[test]
fn exponential_cone_recovers_single_user_capacity() {
    let (bw, power, noise) = (30e3, 2.0, 1e-3);
    let h = Complex64::new(0.7, -0.2);
    let cap_u = 1.0 + power * h.norm_sqr() / noise;
    let mut space = VariableSpace::new();
    let w = space.add_complex("w", 1).unwrap();
    let u = space.add("u", 1).unwrap();
    let r = space.add("r", 1).unwrap();
    let mut prog = ConvexProgram::new(space);
    prog.set_objective(&LinearForm::var(r.at(0), 1.0)).unwrap();
    prog.add_constraint(Constraint::new(vec![Atom::squared_norm(w, 1.0), Atom::Affine(LinearForm::constant(-power))])).unwrap();
    prog.add_constraint(Constraint::new(vec![
        Atom::Exp2 { coef: 1.0, var: r.at(0), scale: bw },
        Atom::Affine(LinearForm::var(u.at(0), -1.0)),
    ]))
    .unwrap();
    prog.add_constraint(Constraint::affine(LinearForm::new(vec![(u.at(0), 1.0)], -cap_u))).unwrap();
    prog.add_lower_bound(r.at(0), 0.0).unwrap();
    let opts = SolveOptions { kkt_tol: 1e-10, ..SolveOptions::default() };
    // The first barrier weight is m/|c·x₀|, so the start carries a rate of the optimum's order.
    let sol = solve(&prog, &[0.1, 0.1, 2.0, 0.5 * bw], &opts).unwrap();
    let oracle = bw * cap_u.log2();
    assert!((sol.x[r.at(0)] - oracle).abs() <= 1e-6 * oracle, "{} vs {oracle}", sol.x[r.at(0)]);
    assert_eq!(sol.status, SolveStatus::Optimal);
}

/// Random box-constrained concave QP `max c·x - ‖A x‖²`, `0 ≤ x ≤ u`, as a
/// barrier program with an epigraph variable and as a plain function.
struct Qp {
    c: Vec<f64>,
    a: Vec<Vec<f64>>,
    upper: Vec<f64>,
}

impl Qp {
    fn random(rng: &mut ChaCha8Rng) -> Qp {
        let d = rng.random_range(2..=29);
        let rows = rng.random_range(1..=d);
        Qp {
            c: (0..d).map(|_| rng.random_range(-1.0..3.0)).collect(),
            a: (0..rows).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
            upper: (0..d).map(|_| rng.random_range(0.5..2.0)).collect(),
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.c.iter().zip(x).map(|(a, b)| a * b).sum();
        let quad: f64 = self.a.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>().powi(2)).sum();
        lin - quad
    }

    /// Projected gradient ascent with step `1/L`, `L = 2‖A‖²_F`.
    fn oracle(&self) -> f64 {
        let d = self.c.len();
        let lip = 2.0 * self.a.iter().flatten().map(|v| v * v).sum::<f64>();
        let step = 1.0 / lip;
        let mut x = vec![0.0; d];
        for _ in 0..200_000 {
            let ax: Vec<f64> = self.a.iter().map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
            let mut moved = 0.0f64;
            for i in 0..d {
                let g = self.c[i] - 2.0 * self.a.iter().zip(&ax).map(|(row, v)| row[i] * v).sum::<f64>();
                let next = (x[i] + step * g).clamp(0.0, self.upper[i]);
                moved = moved.max((next - x[i]).abs());
                x[i] = next;
            }
            if moved < 1e-15 {
                break;
            }
        }
        self.value(&x)
    }

    fn program(&self) -> (ConvexProgram, Vec<f64>) {
        let d = self.c.len();
        let mut space = VariableSpace::new();
        let x = space.add("x", d).unwrap();
        let z = space.add("z", 1).unwrap();
        let mut prog = ConvexProgram::new(space);
        let mut obj = LinearForm::new((0..d).map(|i| (x.at(i), self.c[i])).collect(), 0.0);
        obj.push(z.at(0), -1.0);
        prog.set_objective(&obj).unwrap();
        prog.add_constraint(Constraint::new(vec![
            Atom::Quadratic {
                scale: 1.0,
                forms: self.a.iter().map(|row| LinearForm::new(row.iter().enumerate().map(|(i, v)| (x.at(i), *v)).collect(), 0.0)).collect(),
            },
            Atom::Affine(LinearForm::var(z.at(0), -1.0)),
        ]))
        .unwrap();
        for i in 0..d {
            prog.add_lower_bound(x.at(i), 0.0).unwrap();
            prog.add_constraint(Constraint::affine(LinearForm::new(vec![(x.at(i), 1.0)], -self.upper[i]))).unwrap();
        }
        let mut start: Vec<f64> = self.upper.iter().map(|u| 0.5 * u).collect();
        let quad: f64 = self.a.iter().map(|row| row.iter().zip(&start).map(|(a, b)| a * b).sum::<f64>().powi(2)).sum();
        start.push(quad + 1.0);
        (prog, start)
    }
}

#[test]
fn solver_matches_projected_gradient_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let opts = SolveOptions { kkt_tol: 1e-10, ..SolveOptions::default() };
    for _ in 0..20 {
        let qp = Qp::random(&mut rng);
        let (prog, start) = qp.program();
        let sol = solve(&prog, &start, &opts).unwrap();
        let oracle = qp.oracle();
        assert!((sol.objective - oracle).abs() <= 1e-5 * oracle.abs().max(1.0), "{} vs {oracle}", sol.objective);
        // Optimal status certifies the residual and strict feasibility.
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.kkt_residual <= opts.kkt_tol);
        assert!(evaluate_constraints(&prog, &sol.x).unwrap().iter().all(|e| e.value <= opts.feas_tol));
        assert!(sol.stage_objectives.windows(2).all(|s| s[1] >= s[0] - 1e-9), "{:?}", sol.stage_objectives);
    }
}

#[test]
fn contradictory_bounds_are_infeasible() {
    let mut space = VariableSpace::new();
    space.add("x", 1).unwrap();
    let mut prog = ConvexProgram::new(space);
    prog.add_constraint(Constraint::affine(LinearForm::new(vec![(0, 1.0)], 1.0))).unwrap();
    prog.add_lower_bound(0, 1.0).unwrap();
    let err = phase1_start_from(&prog, &[0.0], &SolveOptions::default()).unwrap_err();
    assert!(matches!(err, gmrs_core::Error::Infeasible { .. }), "{err:?}");
}

fn desk_program(policy: LayerPolicy, seed: u32) -> (ConvexProgram, Vec<f64>) {
    let prof = RequestProfile::from_requests(vec![vec![1, 4, 5, 7], vec![2, 4, 6, 7], vec![3, 5, 6, 7]]).unwrap();
    let s = build_layers(&partition_messages(&prof).unwrap(), policy).unwrap();
    let stats = ChannelStatistics::iid(3, 2, 2, 1.0).unwrap();
    let h = sample_realization(&stats, RngStream::for_realization(77, seed));
    let p = SlowParams::new(1.0, 1.0, 0.05, uniform_weights(&s));
    let init = init_feasible_slow(&h, &s, &p).unwrap();
    let prob = linearized_program(&h, &s, &init, &p).unwrap();
    let x = pack_iterate(&s, &init, &p).unwrap();
    (prob.program, x)
}

#[test]
fn previous_iterate_is_accepted_by_phase_one() {
    let (prog, x) = desk_program(LayerPolicy::OneLayer, 0);
    let got = phase1_start_from(&prog, &x, &SolveOptions::default()).unwrap();
    assert!(evaluate_constraints(&prog, &got).unwrap().iter().all(|e| e.value <= -1e-8));
}

#[test]
fn block_and_dense_solves_agree() {
    for (policy, seed) in [(LayerPolicy::NoSplit, 1), (LayerPolicy::OneLayer, 2), (LayerPolicy::FullGeneral, 3)] {
        let (prog, x) = desk_program(policy, seed);
        assert!(prog.block_partition().is_some());
        let start = phase1_start_from(&prog, &x, &SolveOptions::default()).unwrap();
        let opts = SolveOptions { kkt_tol: 1e-10, ..SolveOptions::default() };
        let block = solve(&prog, &start, &opts).unwrap();
        let dense = solve(&prog, &start, &SolveOptions { force_dense: true, ..opts }).unwrap();
        let scale = dense.objective.abs().max(1.0);
        assert!((block.objective - dense.objective).abs() <= 1e-8 * scale, "{policy:?}: {} vs {}", block.objective, dense.objective);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn barrier_stages_never_lose_objective(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qp = Qp::random(&mut rng);
        let (prog, start) = qp.program();
        let sol = solve(&prog, &start, &SolveOptions::default()).unwrap();
        prop_assert!(sol.stage_objectives.windows(2).all(|s| s[1] >= s[0] - 1e-9));
        prop_assert!(sol.objective >= prog.objective_value(&start) - 1e-9);
    }
}
