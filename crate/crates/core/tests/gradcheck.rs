//! Analytic gradients against central finite differences (h = 1e-5) on 100
//! random configurations per operation and per loss term.

mod common;

use common::*;
use costdet::autodiff::{Graph, Tensor, Value};
use rand::Rng;

fn sum_of(g: &mut Graph, v: Value) -> Value {
    g.sum(v)
}

#[test]
fn matmul_add_bias_tanh() {
    let mut r = rng(1);
    for _ in 0..CASES {
        let (m, k, n) = (
            r.random_range(1..4),
            r.random_range(1..4),
            r.random_range(1..4),
        );
        let inputs = [
            rand_tensor(&mut r, m, k, -1.0, 1.0),
            rand_tensor(&mut r, k, n, -1.0, 1.0),
            rand_tensor(&mut r, 1, n, -1.0, 1.0),
        ];
        check(
            &inputs,
            &|g, v| {
                let z = g.matmul(v[0], v[1]).unwrap();
                let z = g.add_bias(z, v[2]).unwrap();
                let t = g.tanh(z);
                sum_of(g, t)
            },
            "matmul/add_bias/tanh",
        );
    }
}

#[test]
fn add_mul_scale_mean() {
    let mut r = rng(2);
    for _ in 0..CASES {
        let (m, n) = (r.random_range(1..4), r.random_range(1..4));
        let c: f64 = r.random_range(-2.0..2.0);
        let inputs = [
            rand_tensor(&mut r, m, n, -2.0, 2.0),
            rand_tensor(&mut r, m, n, -2.0, 2.0),
        ];
        check(
            &inputs,
            &move |g, v| {
                let a = g.add(v[0], v[1]).unwrap();
                let b = g.mul(a, v[1]).unwrap();
                let s = g.scale(b, c);
                g.mean(s).unwrap()
            },
            "add/mul/scale/mean",
        );
    }
}

#[test]
fn sigmoid_select_gather_concat() {
    let mut r = rng(3);
    for _ in 0..CASES {
        let (m, n) = (r.random_range(2..5), r.random_range(1..4));
        let rows: Vec<usize> = (0..r.random_range(1..4))
            .map(|_| r.random_range(0..m))
            .collect();
        let idx: Vec<usize> = (0..r.random_range(1..5))
            .map(|_| r.random_range(0..m * n))
            .collect();
        let w = rand_tensor(&mut r, rows.len() * n + idx.len(), 1, -1.0, 1.0);
        let inputs = [rand_tensor(&mut r, m, n, -4.0, 4.0)];
        check(
            &inputs,
            &|g, v| {
                let s = g.sigmoid(v[0]);
                let a = g.select_rows(s, &rows).unwrap();
                let a = g
                    .gather(a, &(0..rows.len() * n).collect::<Vec<_>>())
                    .unwrap();
                let b = g.gather(s, &idx).unwrap();
                let c = g.concat(&[a, b]);
                let wv = g.constant(w.clone());
                let p = g.mul(c, wv).unwrap();
                g.sum(p)
            },
            "sigmoid/select_rows/gather/concat",
        );
    }
}

#[test]
fn max_reduce() {
    let mut r = rng(4);
    for _ in 0..CASES {
        let n = r.random_range(1..7);
        let inputs = [Tensor::column(spread(&mut r, n, -3.0, 3.0, 1e-3))];
        check(
            &inputs,
            &|g, v| {
                let m = g.max_reduce(v[0]).unwrap();
                let s = g.sigmoid(m);
                g.mul(s, m).unwrap()
            },
            "max_reduce",
        );
    }
}

#[test]
fn weighted_bce_op() {
    let mut r = rng(5);
    for _ in 0..CASES {
        let n = r.random_range(1..6);
        let t = labels(&mut r, n);
        let (wp, wn) = (r.random_range(0.1..4.0), r.random_range(0.1..4.0));
        let inputs = [rand_tensor(&mut r, n, 1, 0.02, 0.98)];
        check(
            &inputs,
            &|g, v| g.weighted_bce(v[0], &t, wp, wn).unwrap(),
            "weighted_bce",
        );
    }
}

#[test]
fn smooth_l1_op() {
    let mut r = rng(6);
    for _ in 0..CASES {
        let n = r.random_range(1..4);
        let target: Vec<f64> = (0..4 * n).map(|_| r.random_range(-1.0..1.0)).collect();
        let diff = away_from_kink(&mut r, 4 * n);
        let pred: Vec<f64> = target.iter().zip(&diff).map(|(t, d)| t + d).collect();
        let inputs = [Tensor::from_vec(n, 4, pred)];
        check(
            &inputs,
            &|g, v| g.smooth_l1(v[0], &target).unwrap(),
            "smooth_l1",
        );
    }
}

#[test]
fn lesion_cost_term() {
    let e = common::lesion_cost_term();
    assert!(e.rel <= REL_TOL, "{e:?}");
}

#[test]
fn slice_cost_term_through_max() {
    let e = common::slice_cost_term();
    assert!(e.rel <= REL_TOL, "{e:?}");
}

#[test]
fn total_loss_all_terms() {
    let e = common::total_loss_term();
    assert!(e.rel <= REL_TOL, "{e:?}");
}

#[test]
fn head_parameters_through_cost_loss() {
    let e = common::cls_head_parameters();
    assert!(e.rel <= REL_TOL, "{e:?}");
}
