mod common;

use mdpc::formulation::{build_mdpc_problem_as, linearize_products, InformationForm};
use mdpc::problem::Sense;
use mdpc::solver::{branch_and_bound, brute_force_solve, solve_lp, BnbSettings, LinearProgram, LpRow, LpStatus, MipStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense two-phase tableau simplex with Bland's rule, over `x ≥ 0`.
/// Returns `None` when infeasible. Rows: `(coefficients, sense, rhs)`.
fn tableau_simplex(cost: &[f64], rows: &[(Vec<f64>, Sense, f64)]) -> Option<f64> {
    const TOL: f64 = 1e-9;
    let n = cost.len();
    let m = rows.len();
    // normalize to rhs ≥ 0
    let rows: Vec<(Vec<f64>, Sense, f64)> = rows
        .iter()
        .map(|(a, s, b)| {
            if *b < 0.0 {
                let flipped = match s {
                    Sense::Le => Sense::Ge,
                    Sense::Ge => Sense::Le,
                    Sense::Eq => Sense::Eq,
                };
                (a.iter().map(|v| -v).collect(), flipped, -b)
            } else {
                (a.clone(), *s, *b)
            }
        })
        .collect();
    let slacks = rows.iter().filter(|r| r.1 != Sense::Eq).count();
    let artificials = rows.iter().filter(|r| r.1 != Sense::Le).count();
    let width = n + slacks + artificials;
    let mut t = vec![vec![0.0; width + 1]; m];
    let mut basis = vec![0usize; m];
    let (mut s, mut a) = (n, n + slacks);
    for (r, (coef, sense, rhs)) in rows.iter().enumerate() {
        t[r][..n].copy_from_slice(coef);
        t[r][width] = *rhs;
        match sense {
            Sense::Le => {
                t[r][s] = 1.0;
                basis[r] = s;
                s += 1;
            }
            Sense::Ge => {
                t[r][s] = -1.0;
                s += 1;
                t[r][a] = 1.0;
                basis[r] = a;
                a += 1;
            }
            Sense::Eq => {
                t[r][a] = 1.0;
                basis[r] = a;
                a += 1;
            }
        }
    }
    let run = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, c: &[f64], allowed: usize| loop {
        let reduced = |j: usize, t: &Vec<Vec<f64>>, basis: &Vec<usize>| {
            c[j] - (0..m).map(|r| c[basis[r]] * t[r][j]).sum::<f64>()
        };
        let Some(enter) = (0..allowed).find(|&j| !basis.contains(&j) && reduced(j, t, basis) < -TOL) else {
            return true;
        };
        let mut leave: Option<usize> = None;
        for r in 0..m {
            if t[r][enter] > TOL {
                let ratio = t[r][width] / t[r][enter];
                leave = match leave {
                    None => Some(r),
                    Some(q) => {
                        let best = t[q][width] / t[q][enter];
                        if ratio < best - TOL || (ratio <= best + TOL && basis[r] < basis[q]) {
                            Some(r)
                        } else {
                            Some(q)
                        }
                    }
                };
            }
        }
        let Some(p) = leave else { return false };
        let piv = t[p][enter];
        for v in t[p].iter_mut() {
            *v /= piv;
        }
        for r in 0..m {
            if r != p && t[r][enter].abs() > 0.0 {
                let f = t[r][enter];
                for j in 0..=width {
                    t[r][j] -= f * t[p][j];
                }
            }
        }
        basis[p] = enter;
    };
    let mut phase1 = vec![0.0; width];
    for v in phase1.iter_mut().skip(n + slacks) {
        *v = 1.0;
    }
    run(&mut t, &mut basis, &phase1, width);
    let infeas: f64 = (0..m).filter(|&r| basis[r] >= n + slacks).map(|r| t[r][width]).sum();
    if infeas > 1e-7 {
        return None;
    }
    // drive degenerate artificials out where possible
    for r in 0..m {
        if basis[r] >= n + slacks {
            if let Some(j) = (0..n + slacks).find(|&j| t[r][j].abs() > 1e-9 && !basis.contains(&j)) {
                let piv = t[r][j];
                for v in t[r].iter_mut() {
                    *v /= piv;
                }
                for q in 0..m {
                    if q != r {
                        let f = t[q][j];
                        for k in 0..=width {
                            t[q][k] -= f * t[r][k];
                        }
                    }
                }
                basis[r] = j;
            }
        }
    }
    let mut phase2 = vec![0.0; width];
    phase2[..n].copy_from_slice(cost);
    assert!(run(&mut t, &mut basis, &phase2, n + slacks), "oracle LP is bounded by construction");
    Some((0..m).filter(|&r| basis[r] < n).map(|r| cost[basis[r]] * t[r][width]).sum())
}

#[test]
fn lp_matches_tableau_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (rows, cols) = (20, 40);
    for _ in 0..25 {
        let upper: Vec<f64> = (0..cols).map(|_| rng.gen_range(1.0..10.0)).collect();
        let x0: Vec<f64> = upper.iter().map(|&u| rng.gen_range(0.0..u)).collect();
        let cost: Vec<f64> = (0..cols).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mut lp_rows = Vec::new();
        let mut dense = Vec::new();
        for r in 0..rows {
            let coef: Vec<f64> = (0..cols)
                .map(|_| if rng.gen_bool(0.4) { rng.gen_range(-3.0..3.0) } else { 0.0 })
                .collect();
            let act: f64 = coef.iter().zip(&x0).map(|(a, x)| a * x).sum();
            let (sense, rhs) = match r % 4 {
                0 => (Sense::Eq, act),
                1 => (Sense::Ge, act - rng.gen_range(0.0..2.0)),
                _ => (Sense::Le, act + rng.gen_range(0.0..2.0)),
            };
            let terms = coef.iter().enumerate().filter(|(_, &a)| a != 0.0).map(|(j, &a)| (j, a)).collect();
            lp_rows.push(LpRow { terms, sense, rhs });
            dense.push((coef, sense, rhs));
        }
        for (j, &u) in upper.iter().enumerate() {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            dense.push((e, Sense::Le, u));
        }
        let lp = LinearProgram {
            lower: vec![0.0; cols],
            upper,
            cost: cost.clone(),
            constant: 0.0,
            rows: lp_rows,
        };
        let ours = solve_lp(&lp).unwrap();
        let oracle = tableau_simplex(&cost, &dense).expect("feasible by construction");
        assert_eq!(ours.status, LpStatus::Optimal);
        assert!((ours.objective - oracle).abs() < 1e-7, "{} vs {}", ours.objective, oracle);
        assert!(lp.max_violation(&ours.x) < 1e-7);
    }
}

#[test]
fn tableau_oracle_detects_infeasibility() {
    let rows = vec![(vec![1.0, 1.0], Sense::Le, 1.0), (vec![1.0, 1.0], Sense::Ge, 2.0)];
    assert!(tableau_simplex(&[1.0, 1.0], &rows).is_none());
}

#[test]
fn tight_forms_agree_with_exhaustive_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..30 {
        let inst = common::random_instance(&mut rng);
        let build = |form| {
            let miq = build_mdpc_problem_as(
                &inst.inputs,
                &inst.probs,
                &inst.y_grid,
                &inst.battery,
                inst.mu,
                inst.reg.as_ref(),
                form,
            )
            .unwrap();
            linearize_products(&miq).unwrap()
        };
        let products = build(InformationForm::Products);
        let brute = brute_force_solve(&products).unwrap();
        for form in [InformationForm::Products, InformationForm::Squares, InformationForm::Patterns] {
            let sol = if form == InformationForm::Squares {
                let miq = build_mdpc_problem_as(
                    &inst.inputs,
                    &inst.probs,
                    &inst.y_grid,
                    &inst.battery,
                    inst.mu,
                    inst.reg.as_ref(),
                    form,
                )
                .unwrap();
                branch_and_bound(&mdpc::formulation::epigraph_squares(&miq).unwrap(), &BnbSettings::default()).unwrap()
            } else {
                branch_and_bound(&build(form), &BnbSettings::default()).unwrap()
            };
            assert_eq!(sol.status == MipStatus::Infeasible, brute.status == MipStatus::Infeasible, "case {case}");
            if brute.status == MipStatus::Optimal {
                let tol = 1e-6 * (1.0 + brute.objective.abs());
                assert!(
                    (sol.objective - brute.objective).abs() <= tol,
                    "case {case} {form:?}: {} vs {}",
                    sol.objective,
                    brute.objective
                );
            }
        }
    }
}
