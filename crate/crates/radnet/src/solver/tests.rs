use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::*;
use crate::ratemodel::{optimal_auxiliary, rate_upper};

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn scalar_matrix(v: f64) -> DMatrix<Complex64> {
    DMatrix::from_element(1, 1, c(v))
}

/// Single scalar radar, dedicated link: A = 1, sigma^2 = 1, noise 1
/// (kappa = 2), capacity 1 bit/s, auxiliary fixed at 1/4 (its value at
/// d = 2). The constrained optimum is d = 2 with objective 3.
fn s1_problem(mode: QuantMode) -> InnerProblem {
    let aux = match mode {
        QuantMode::Afvq => AuxiliaryBlock::Afvq(DVector::from_element(1, 0.25)),
        QuantMode::Rvq => AuxiliaryBlock::Rvq(scalar_matrix(0.25)),
    };
    InnerProblem {
        cost: CostModel { blocks: vec![scalar_matrix(1.0)], constant: 1.0 },
        aux: vec![aux],
        k_blocks: vec![scalar_matrix(2.0)],
        capacities: vec![1.0],
        sample_rate: 1.0,
        mode,
        fronthaul: FronthaulMode::Dedicated,
    }
}

fn s1_start(mode: QuantMode) -> StartPoint {
    StartPoint {
        distortion: vec![DistortionBlock::uniform(mode, 1, 2.5)],
        shares: vec![1.0],
    }
}

/// Two copies of the S1 radar observing the same cell over a shared
/// fronthaul with C_n = 2. Optimum: a = (1/2, 1/2), d_n = 2, objective 1.5.
fn s2_problem(mode: QuantMode) -> InnerProblem {
    let aux = |_: usize| match mode {
        QuantMode::Afvq => AuxiliaryBlock::Afvq(DVector::from_element(1, 0.25)),
        QuantMode::Rvq => AuxiliaryBlock::Rvq(scalar_matrix(0.25)),
    };
    InnerProblem {
        cost: CostModel {
            blocks: vec![scalar_matrix(0.25), scalar_matrix(0.25)],
            constant: 0.5,
        },
        aux: vec![aux(0), aux(1)],
        k_blocks: vec![scalar_matrix(2.0), scalar_matrix(2.0)],
        capacities: vec![2.0, 2.0],
        sample_rate: 1.0,
        mode,
        fronthaul: FronthaulMode::Shared,
    }
}

fn s2_start(mode: QuantMode) -> StartPoint {
    StartPoint {
        distortion: vec![
            DistortionBlock::uniform(mode, 1, 2.5),
            DistortionBlock::uniform(mode, 1, 2.5),
        ],
        shares: vec![0.45, 0.45],
    }
}

/// Scalar rate upper bound for grid oracles.
fn scalar_rupp(d: f64, y: f64, kappa: f64, fs: f64) -> f64 {
    fs * (-d.log2() - y.log2() + y * (kappa + d) / LN2 - 1.0 / LN2)
}

#[test]
fn cost_blocks_identity_and_hand_values() {
    // A = I, W = I/G: blocks of I/G.
    let a = DMatrix::from_diagonal_element(4, 4, c(1.0));
    let w = crate::scene::WeightMatrix::uniform(4);
    let blocks = linear_cost_blocks(&a, &[2, 2], &w, 1e-10).unwrap();
    for b in &blocks {
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 0.25 } else { 0.0 };
                assert!((b[(i, j)].re - expect).abs() < 1e-12);
                assert!(b[(i, j)].im.abs() < 1e-14);
            }
        }
    }
    // Scalar A = 1, W = 1 -> M = 1.
    let a = scalar_matrix(1.0);
    let w = crate::scene::WeightMatrix::uniform(1);
    let blocks = linear_cost_blocks(&a, &[1], &w, 1e-10).unwrap();
    assert!((blocks[0][(0, 0)].re - 1.0).abs() < 1e-12);
    // A = [1; 1], W = 1 -> M_1 = M_2 = 0.25.
    let a = DMatrix::from_element(2, 1, c(1.0));
    let blocks = linear_cost_blocks(&a, &[1, 1], &w, 1e-10).unwrap();
    assert!((blocks[0][(0, 0)].re - 0.25).abs() < 1e-12);
    assert!((blocks[1][(0, 0)].re - 0.25).abs() < 1e-12);
}

#[test]
fn cost_model_linearity_identity() {
    // surrogate(D) - surrogate(0) must equal sum tr(M_n D_n).
    let mut rng = StdRng::seed_from_u64(19);
    for _ in 0..20 {
        let n = rng.gen_range(1..=3);
        let p = rng.gen_range(1..=3);
        let g = rng.gen_range(1..=4);
        let blocks: Vec<DMatrix<Complex64>> = (0..n)
            .map(|_| {
                DMatrix::from_fn(p, g, |_, _| {
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                })
            })
            .collect();
        let noise: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let set = crate::scene::MeasurementSet::from_blocks(
            blocks,
            1.0,
            noise,
            QuantMode::Afvq,
        )
        .unwrap();
        let w = crate::scene::WeightMatrix::uniform(g);
        let cm = cost_model(&set, &w, 1e-10).unwrap();

        let d: Vec<DistortionBlock> = (0..n)
            .map(|_| DistortionBlock::Afvq(DVector::from_fn(p, |_, _| rng.gen_range(0.1..2.0))))
            .collect();
        let zero: Vec<DistortionBlock> =
            (0..n).map(|_| DistortionBlock::Afvq(DVector::from_element(p, 0.0))).collect();

        let st_d = crate::estimation::NetworkState::new(&set, &d, &w).unwrap();
        let st_0 = crate::estimation::NetworkState::new(&set, &zero, &w).unwrap();
        let s_d = crate::estimation::surrogate_wcrlb(&st_d).unwrap();
        let s_0 = crate::estimation::surrogate_wcrlb(&st_0).unwrap();
        let linear: f64 =
            cm.blocks.iter().zip(&d).map(|(m, dn)| trace_product(m, dn)).sum();
        assert!(
            ((s_d - s_0) - linear).abs() <= 1e-10 * s_d.abs().max(1.0),
            "linearity gap: {} vs {}",
            s_d - s_0,
            linear
        );
        // And the constant matches the zero-distortion surrogate.
        assert!((cm.constant - s_0).abs() <= 1e-10 * s_0.abs().max(1.0));
    }
}

#[test]
fn constraint_value_grad_hand_example() {
    // d = 1, y = 1/4, kappa = 3, f_s = 1, C = 4, a = 1: R_upp = 2, value -2.
    let d = DistortionBlock::Afvq(DVector::from_element(1, 1.0));
    let y = AuxiliaryBlock::Afvq(DVector::from_element(1, 0.25));
    let k = scalar_matrix(3.0);
    let (value, grad_d, grad_a) = constraint_value_grad(&d, 1.0, &y, &k, 4.0, 1.0).unwrap();
    assert!((value - (-2.0)).abs() < 1e-12);
    assert!((grad_a - (-4.0)).abs() < 1e-15);
    // (f_s/ln2)(y - 1/d) = (0.25 - 1)/ln2.
    assert!((grad_d[(0, 0)].re - (-0.75 / LN2)).abs() < 1e-12);
}

#[test]
fn constraint_grad_is_negative_definite_at_optimal_auxiliary() {
    let mut rng = StdRng::seed_from_u64(4);
    for _ in 0..20 {
        let p = rng.gen_range(1..=3);
        let r = DMatrix::from_fn(p, p, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let mut k = &r * r.adjoint();
        for i in 0..p {
            k[(i, i)] += c(0.3);
        }
        let kh = k.adjoint();
        let k = (k + kh) * c(0.5);
        let d = DistortionBlock::uniform(QuantMode::Rvq, p, rng.gen_range(0.2..2.0));
        let y = optimal_auxiliary(&k, &d).unwrap();
        let (_, grad_d, _) = constraint_value_grad(&d, 1.0, &y, &k, 1.0, 1.0).unwrap();
        // (K + D)^-1 - D^-1 is negative definite for K PD.
        let eig = grad_d.symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e < 0.0), "eigenvalues {eig:?}");
    }
}

#[test]
fn constraint_grad_matches_finite_differences() {
    let mut rng = StdRng::seed_from_u64(6);
    let layout = BlockLayout::new(3, QuantMode::Rvq);
    for _ in 0..25 {
        let p = 3;
        let r = DMatrix::from_fn(p, p, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let mut k = &r * r.adjoint();
        for i in 0..p {
            k[(i, i)] += c(0.3);
        }
        let kh = k.adjoint();
        let k = (k + kh) * c(0.5);
        let d0 = {
            let r2 = DMatrix::from_fn(p, p, |_, _| {
                Complex64::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))
            });
            let mut m = &r2 * r2.adjoint();
            for i in 0..p {
                m[(i, i)] += c(0.5);
            }
            let mh = m.adjoint();
            (m + mh) * c(0.5)
        };
        let y = optimal_auxiliary(&k, &DistortionBlock::Rvq(d0.clone())).unwrap();
        let fs = 1.3;
        let cap = 2.0;
        let f = |x: &[f64]| -> f64 {
            let d = DistortionBlock::Rvq(layout.unpack(x));
            rate_upper(&d, &y, &k, fs).unwrap() - cap
        };
        let d_block = DistortionBlock::Rvq(d0.clone());
        let (_, grad_m, _) = constraint_value_grad(&d_block, 1.0, &y, &k, cap, fs).unwrap();
        let gc = layout.grad_coords(&grad_m);
        let x0 = layout.pack(&d0);
        let mut max_rel = 0.0f64;
        for a in 0..layout.coord_len() {
            let h = 1e-6 * (1.0 + x0[a].abs());
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[a] += h;
            xm[a] -= h;
            let fd = (f(xp.as_slice()) - f(xm.as_slice())) / (2.0 * h);
            let rel = (fd - gc[a]).abs() / gc[a].abs().max(1.0);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel <= 1e-6, "gradient mismatch {max_rel}");
    }
}

#[test]
fn s1_scalar_instance_reaches_hand_optimum() {
    for mode in [QuantMode::Afvq, QuantMode::Rvq] {
        let p = s1_problem(mode);
        let sol = solve_inner(&p, &s1_start(mode), 1e-8).unwrap();
        let d = match &sol.distortion[0] {
            DistortionBlock::Afvq(v) => v[0],
            DistortionBlock::Rvq(m) => m[(0, 0)].re,
        };
        assert!((d - 2.0).abs() < 1e-5, "mode {mode:?}: d = {d}");
        assert!((sol.objective - 3.0).abs() < 1e-5, "objective {}", sol.objective);
        assert_eq!(sol.shares, vec![1.0]);

        // Independent 1-D grid oracle over the fixed-auxiliary subproblem.
        let mut best = f64::INFINITY;
        for i in 0..4000 {
            let dg = 0.05 * (200.0f64 / 0.05).powf(i as f64 / 3999.0);
            if scalar_rupp(dg, 0.25, 2.0, 1.0) <= 1.0 {
                best = best.min(1.0 + dg);
            }
        }
        assert!((sol.objective - best).abs() <= 0.01 * best);
    }
}

#[test]
fn s2_symmetric_shared_instance() {
    for mode in [QuantMode::Afvq, QuantMode::Rvq] {
        let p = s2_problem(mode);
        let sol = solve_inner(&p, &s2_start(mode), 1e-8).unwrap();
        assert!((sol.shares[0] - 0.5).abs() < 1e-4, "shares {:?}", sol.shares);
        assert!((sol.shares[1] - 0.5).abs() < 1e-4);
        for d in &sol.distortion {
            let v = match d {
                DistortionBlock::Afvq(v) => v[0],
                DistortionBlock::Rvq(m) => m[(0, 0)].re,
            };
            assert!((v - 2.0).abs() < 1e-3, "d = {v}");
        }
        assert!((sol.objective - 1.5).abs() < 1e-4, "objective {}", sol.objective);
    }

    // 3-D grid oracle: allocations on a 0.01 simplex grid, distortions on
    // log grids, objective 0.5 + 0.25 (d1 + d2) under the R_upp constraints.
    let mut best = f64::INFINITY;
    for ia in 1..100 {
        let a1 = ia as f64 * 0.01;
        let a2 = 1.0 - a1;
        let dmin = |budget: f64| -> f64 {
            let mut lo = f64::INFINITY;
            for i in 0..2000 {
                let dg = 0.05 * (200.0f64 / 0.05).powf(i as f64 / 1999.0);
                if scalar_rupp(dg, 0.25, 2.0, 1.0) <= budget {
                    lo = lo.min(dg);
                }
            }
            lo
        };
        let d1 = dmin(2.0 * a1);
        let d2 = dmin(2.0 * a2);
        if d1.is_finite() && d2.is_finite() {
            best = best.min(0.5 + 0.25 * (d1 + d2));
        }
    }
    assert!((best - 1.5).abs() <= 0.015 * 1.5, "grid oracle best {best}");
}

#[test]
fn infinite_capacity_drives_distortion_to_zero() {
    let mut p = s1_problem(QuantMode::Afvq);
    p.capacities = vec![1e12];
    let sol = solve_inner(&p, &s1_start(QuantMode::Afvq), 1e-8).unwrap();
    // Objective approaches the distortion-free constant.
    assert!(
        (sol.objective - p.cost.constant).abs() <= 1e-4 * p.cost.constant,
        "objective {} vs constant {}",
        sol.objective,
        p.cost.constant
    );
    let d = match &sol.distortion[0] {
        DistortionBlock::Afvq(v) => v[0],
        _ => unreachable!(),
    };
    assert!(d < 1e-4);
}

#[test]
fn capacity_constraint_is_active_with_positive_definite_cost() {
    for (problem, start) in [
        (s1_problem(QuantMode::Afvq), s1_start(QuantMode::Afvq)),
        (s2_problem(QuantMode::Rvq), s2_start(QuantMode::Rvq)),
    ] {
        let sol = solve_inner(&problem, &start, 1e-8).unwrap();
        for n in 0..problem.num_radars() {
            let budget = sol.shares[n] * problem.capacities[n];
            let upp = rate_upper(
                &sol.distortion[n],
                &problem.aux[n],
                &problem.k_blocks[n],
                problem.sample_rate,
            )
            .unwrap();
            assert!(
                (budget - upp).abs() <= 1e-6 * budget.max(1.0),
                "radar {n}: budget {budget}, bound {upp}"
            );
        }
    }
}

#[test]
fn barrier_stages_produce_non_increasing_objectives() {
    let p = s2_problem(QuantMode::Rvq);
    let sol = solve_inner(&p, &s2_start(QuantMode::Rvq), 1e-8).unwrap();
    for w in sol.stage_objectives.windows(2) {
        assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0].abs()), "stages {:?}", sol.stage_objectives);
    }
}

#[test]
fn rvq_solve_on_diagonal_data_matches_afvq() {
    // K and M diagonal: the RVQ optimum is diagonal and the objectives agree.
    let k = DMatrix::from_diagonal(&DVector::from_vec(vec![c(1.0), c(3.0)]));
    let m = DMatrix::from_diagonal(&DVector::from_vec(vec![c(0.5), c(0.25)]));
    let d0 = 3.0;
    let mk = |mode: QuantMode| -> InnerProblem {
        let d_init = DistortionBlock::uniform(mode, 2, d0);
        let aux = optimal_auxiliary(&k, &d_init).unwrap();
        InnerProblem {
            cost: CostModel { blocks: vec![m.clone()], constant: 0.0 },
            aux: vec![aux],
            k_blocks: vec![k.clone()],
            capacities: vec![2.0],
            sample_rate: 1.0,
            mode,
            fronthaul: FronthaulMode::Dedicated,
        }
    };
    let start = |mode: QuantMode| StartPoint {
        distortion: vec![DistortionBlock::uniform(mode, 2, d0 * 1.2)],
        shares: vec![1.0],
    };
    let sol_a = solve_inner(&mk(QuantMode::Afvq), &start(QuantMode::Afvq), 1e-8).unwrap();
    let sol_r = solve_inner(&mk(QuantMode::Rvq), &start(QuantMode::Rvq), 1e-8).unwrap();
    let rel = (sol_a.objective - sol_r.objective).abs() / sol_a.objective.abs().max(1.0);
    assert!(rel <= 1e-6, "objectives {} vs {}", sol_a.objective, sol_r.objective);
    if let DistortionBlock::Rvq(dm) = &sol_r.distortion[0] {
        assert!(dm[(0, 1)].norm() <= 1e-7 * dm.camax());
    } else {
        panic!("expected RVQ block");
    }
}

#[test]
fn shared_mode_dominates_uniform_dedicated_split() {
    // Dedicated with capacities C_n/N vs shared with capacities C_n: time
    // sharing subsumes the uniform split.
    let mut rng = StdRng::seed_from_u64(15);
    for _ in 0..5 {
        let n = 2;
        let caps: Vec<f64> = (0..n).map(|_| rng.gen_range(2.0..8.0)).collect();
        let kappas: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..3.0)).collect();
        let ms: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        // Auxiliary fixed at the start point itself, so the upper bound
        // equals the rate there: log2(1 + kappa/30) < 0.15, safely inside
        // every budget drawn above.
        let d_start = 30.0;
        let build = |fronthaul: FronthaulMode, caps: &[f64]| -> (InnerProblem, StartPoint) {
            let aux: Vec<AuxiliaryBlock> = kappas
                .iter()
                .map(|&kap| {
                    optimal_auxiliary(
                        &scalar_matrix(kap),
                        &DistortionBlock::uniform(QuantMode::Afvq, 1, d_start),
                    )
                    .unwrap()
                })
                .collect();
            let p = InnerProblem {
                cost: CostModel {
                    blocks: ms.iter().map(|&m| scalar_matrix(m)).collect(),
                    constant: 0.0,
                },
                aux,
                k_blocks: kappas.iter().map(|&k| scalar_matrix(k)).collect(),
                capacities: caps.to_vec(),
                sample_rate: 1.0,
                mode: QuantMode::Afvq,
                fronthaul,
            };
            let start = StartPoint {
                distortion: (0..n)
                    .map(|_| DistortionBlock::uniform(QuantMode::Afvq, 1, d_start))
                    .collect(),
                shares: vec![(1.0 - 1e-3) / n as f64; n],
            };
            (p, start)
        };
        let dedicated_caps: Vec<f64> = caps.iter().map(|c| c / n as f64).collect();
        let (pd, sd) = build(FronthaulMode::Dedicated, &dedicated_caps);
        let (ps, ss) = build(FronthaulMode::Shared, &caps);
        let sol_d = solve_inner(&pd, &sd, 1e-8).unwrap();
        let sol_s = solve_inner(&ps, &ss, 1e-8).unwrap();
        assert!(
            sol_s.objective <= sol_d.objective + 1e-6 * (1.0 + sol_d.objective.abs()),
            "shared {} vs dedicated {}",
            sol_s.objective,
            sol_d.objective
        );
    }
}

#[test]
fn kkt_residuals_certify_solutions_and_detect_perturbations() {
    let p = s1_problem(QuantMode::Afvq);
    let sol = solve_inner(&p, &s1_start(QuantMode::Afvq), 1e-8).unwrap();
    assert!(sol.kkt.stationarity <= 1e-6, "stationarity {}", sol.kkt.stationarity);
    assert!(sol.kkt.primal_feasibility <= 1e-8);
    assert!(sol.kkt.duality_measure <= 1e-8);
    // Per-constraint complementarity at the optimum is 1/t.
    assert!(sol.kkt.complementarity_gap <= 1e-6);

    // Scaling d by 1.1 breaks stationarity detectably.
    let mut perturbed = sol.clone();
    perturbed.distortion[0] = match &sol.distortion[0] {
        DistortionBlock::Afvq(v) => DistortionBlock::Afvq(v * 1.1),
        DistortionBlock::Rvq(m) => DistortionBlock::Rvq(m * c(1.1)),
    };
    let report = kkt_residual(&p, &perturbed).unwrap();
    assert!(report.stationarity > 1e-3, "perturbed stationarity {}", report.stationarity);

    let s2 = s2_problem(QuantMode::Rvq);
    let sol2 = solve_inner(&s2, &s2_start(QuantMode::Rvq), 1e-8).unwrap();
    assert!(sol2.kkt.stationarity <= 1e-6);
    assert!(sol2.kkt.primal_feasibility <= 1e-8);
}

#[test]
fn infeasible_start_is_rejected() {
    let p = s1_problem(QuantMode::Afvq);
    // d = 1 has R_upp(1, 1/4) = 2 - 0 + (1-2)/(4 ln 2) > 1: infeasible.
    let start = StartPoint {
        distortion: vec![DistortionBlock::uniform(QuantMode::Afvq, 1, 1.0)],
        shares: vec![1.0],
    };
    assert!(matches!(solve_inner(&p, &start, 1e-8), Err(Error::InvalidArgument(_))));
}

#[test]
fn degenerate_zero_cost_block_still_solves() {
    // A radar that contributes nothing to the objective keeps a bounded
    // distortion because the rate bound grows with tr(Y D).
    let mut p = s2_problem(QuantMode::Afvq);
    p.cost.blocks[0] = scalar_matrix(0.0);
    let sol = solve_inner(&p, &s2_start(QuantMode::Afvq), 1e-8).unwrap();
    assert!(sol.objective.is_finite());
    let d0 = match &sol.distortion[0] {
        DistortionBlock::Afvq(v) => v[0],
        _ => unreachable!(),
    };
    assert!(d0.is_finite() && d0 > 0.0);
    // The useful radar still hits its rate budget.
    let upp = rate_upper(&sol.distortion[1], &p.aux[1], &p.k_blocks[1], 1.0).unwrap();
    assert!((sol.shares[1] * 2.0 - upp).abs() <= 1e-5);
}
