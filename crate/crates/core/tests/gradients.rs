//! Finite-difference oracles for every analytic derivative in the stack.

mod common;

use common::*;
use ebm3d::nce::{nce_loss, NoiseModel, TrainExample};
use ebm3d::pooling::pool_bev;
use ebm3d::{Box3D, BoxBEV};
use rand::Rng;

const STEP: f64 = 1e-6;
const MARGIN: f64 = 1e-3;

#[test]
fn naive_oracle_agrees_with_batched_forward() {
    let mut r = rng(1);
    for _ in 0..50 {
        let grid = random_grid(&mut r, 3);
        let net = random_net(&mut r, small_dims(3));
        let b = random_box(&mut r);
        let fast = net.energies(&grid, &[b]).unwrap()[0];
        let slow = naive_forward(&net, &grid, &b).value;
        assert!((fast - slow).abs() < 1e-12 * (1.0 + slow.abs()), "{fast} vs {slow}");
    }
}

#[test]
fn bilinear_jacobian_matches_finite_differences() {
    let mut r = rng(2);
    let mut checked = 0;
    while checked < 200 {
        let grid = random_grid(&mut r, 4);
        let q: [f64; 2] = [r.random_range(0.0..9.0), r.random_range(0.0..11.0)];
        if q.iter().any(|c| (c - c.round()).abs() < MARGIN) {
            continue;
        }
        let (_, jac) = grid.bilinear_grad(q);
        for axis in 0..2 {
            for k in 0..4 {
                let fd = central_diff(
                    |t| {
                        let mut p = q;
                        p[axis] = t;
                        grid.bilinear(p)[k]
                    },
                    q[axis],
                    STEP,
                );
                assert!(rel_close(jac[k][axis], fd, 1e-6, 1e-9), "q={q:?} k={k}: {} vs {fd}", jac[k][axis]);
            }
        }
        checked += 1;
    }
}

#[test]
fn pooling_jacobian_matches_finite_differences() {
    let mut r = rng(3);
    let pool = small_dims(3).pool;
    let mut checked = 0;
    while checked < 100 {
        let grid = random_grid(&mut r, 3);
        let b = random_box(&mut r);
        if min_cell_distance(&grid, &b, &pool) < MARGIN {
            continue;
        }
        let bev = b.to_bev();
        let pooled = pool_bev(&grid, &bev, &pool);
        for p in 0..5 {
            let shifted = |t: f64| {
                let mut a = bev.to_array();
                a[p] = t;
                pool_bev(&grid, &BoxBEV { cx: a[0], cy: a[1], w: a[2], l: a[3], phi: a[4] }, &pool).h4
            };
            let (plus, minus) = (shifted(bev.to_array()[p] + STEP), shifted(bev.to_array()[p] - STEP));
            for row in 0..pooled.h4.len() {
                let fd = (plus[row] - minus[row]) / (2.0 * STEP);
                let an = pooled.grad_row(row)[p];
                assert!(rel_close(an, fd, 1e-5, 1e-9), "param {p} row {row}: {an} vs {fd}");
            }
        }
        checked += 1;
    }
}

#[test]
fn box_gradient_matches_finite_differences() {
    let mut r = rng(4);
    let mut checked = 0;
    let mut worst = 0.0_f64;
    while checked < 100 {
        let grid = random_grid(&mut r, 3);
        let net = random_net(&mut r, small_dims(3));
        let b = random_box(&mut r);
        if !smooth_at(&net, &grid, &b, MARGIN) {
            continue;
        }
        let pool = net.dims().pool;
        let g = net.backward_box(&grid, &b, &pool).unwrap().grad_box.unwrap();
        for p in 0..7 {
            let fd = central_diff(
                |t| {
                    let mut a = b.to_array();
                    a[p] = t;
                    net.forward(&grid, &Box3D::from_array(a), &pool).unwrap().value
                },
                b.to_array()[p],
                STEP,
            );
            let err = (g[p] - fd).abs() / g[p].abs().max(fd.abs()).max(1e-12);
            worst = worst.max(if (g[p] - fd).abs() < 1e-9 { 0.0 } else { err });
            assert!(rel_close(g[p], fd, 1e-5, 1e-9), "component {p}: {} vs {fd}", g[p]);
        }
        checked += 1;
    }
    eprintln!("worst relative error {worst:.2e}");
}

#[test]
fn param_gradient_of_f_matches_finite_differences() {
    let mut r = rng(5);
    let mut checked = 0;
    while checked < 20 {
        let grid = random_grid(&mut r, 2);
        let net = random_net(&mut r, small_dims(2));
        let b = random_box(&mut r);
        if !smooth_at(&net, &grid, &b, MARGIN) {
            continue;
        }
        let pool = net.dims().pool;
        let g = net.backward_params(&grid, &b, &pool).unwrap().grad_params.unwrap();
        let theta = net.flat_params();
        for idx in net.sample_param_indices(&mut r, 50) {
            let fd = central_diff(
                |t| {
                    let mut n2 = net.clone();
                    let mut p = theta.clone();
                    p[idx] = t;
                    n2.set_flat_params(&p).unwrap();
                    n2.forward(&grid, &b, &pool).unwrap().value
                },
                theta[idx],
                STEP,
            );
            assert!(rel_close(g[idx], fd, 1e-5, 1e-9), "param {idx}: {} vs {fd}", g[idx]);
        }
        checked += 1;
    }
}

/// Replays the documented draw order of `nce_loss` (one perturbation seed,
/// then M noise boxes per annotation) to recover every evaluated box.
fn nce_boxes(nm: &NoiseModel<f64>, targets: &[Box3D], m: usize, seed: u64) -> Vec<Box3D> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for y in targets {
        let _ = r.random::<u64>();
        out.push(*y);
        for _ in 0..m {
            out.push(nm.sample(y, &mut r));
        }
    }
    out
}

#[test]
fn nce_loss_gradient_matches_finite_differences() {
    let nm = NoiseModel::standard();
    let m = 6;
    let mut r = rng(6);
    let mut checked = 0;
    while checked < 10 {
        let grid = random_grid(&mut r, 2);
        let net = random_net(&mut r, small_dims(2));
        let targets = vec![random_box(&mut r), random_box(&mut r)];
        let seed: u64 = r.random();
        let boxes = nce_boxes(&nm, &targets, m, seed);
        if !boxes.iter().all(|b| smooth_at(&net, &grid, b, MARGIN)) {
            continue;
        }
        let ex = TrainExample { id: 0, grid: grid.clone(), targets: targets.clone() };
        let loss = |n: &ebm3d::Net, grad: bool| nce_loss(n, &[&ex], &nm, m, &mut rng(seed), grad).unwrap();
        let analytic = loss(&net, true).grad;
        let theta = net.flat_params();
        for idx in net.sample_param_indices(&mut r, 50) {
            let fd = central_diff(
                |t| {
                    let mut n2 = net.clone();
                    let mut p = theta.clone();
                    p[idx] = t;
                    n2.set_flat_params(&p).unwrap();
                    loss(&n2, false).loss
                },
                theta[idx],
                STEP,
            );
            // J sums many terms, so the difference quotient carries ~1e-9 of rounding
            assert!(rel_close(analytic[idx], fd, 1e-5, 1e-8), "param {idx}: {} vs {fd}", analytic[idx]);
        }
        checked += 1;
    }
}

#[test]
fn heading_gradient_is_periodic() {
    let mut r = rng(7);
    for _ in 0..50 {
        let grid = random_grid(&mut r, 3);
        let net = random_net(&mut r, small_dims(3));
        let mut b = random_box(&mut r);
        b.phi = on_lattice(b.phi);
        let shifted = Box3D { phi: b.phi + std::f64::consts::TAU, ..b };
        let pool = net.dims().pool;
        let (g0, g1) = (net.backward_box(&grid, &b, &pool).unwrap(), net.backward_box(&grid, &shifted, &pool).unwrap());
        assert_eq!(g0.value.to_bits(), g1.value.to_bits());
        assert_eq!(g0.grad_box.unwrap().map(f64::to_bits), g1.grad_box.unwrap().map(f64::to_bits));
    }
}
