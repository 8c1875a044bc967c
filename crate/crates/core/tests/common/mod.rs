#![allow(dead_code)]

use nalgebra::DMatrix;
use raflow::flow::{
    Activation, Conditioning, FlowGraph, GraphSpec, GraphState, PermutationKind,
};
use raflow::numeric::{ParamStore, RngState, Tensor};

/// Replaces every parameter with a uniform draw from `[-scale, scale]`.
pub fn randomize(store: &mut ParamStore, rng: &mut RngState, scale: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let shape = store.value(id).shape().to_vec();
        let n = store.value(id).len();
        let data = (0..n).map(|_| rng.uniform(-scale, scale)).collect();
        store.set_value(id, Tensor::new(shape, data).unwrap()).unwrap();
    }
}

/// Fills every recurrent hidden vector with uniform draws in (-1, 1), the
/// range a GRU state can reach.
pub fn random_state(graph: &FlowGraph, rng: &mut RngState) -> GraphState {
    let mut s = graph.zero_state();
    for h in s.hidden.iter_mut().flatten() {
        h.iter_mut().for_each(|v| *v = rng.uniform(-0.99, 0.99));
    }
    s
}

pub fn raf_graph(k: usize, layers: usize, hidden: usize, act: Activation, seed: u64) -> FlowGraph {
    let spec = GraphSpec::raf_stack(
        k,
        layers,
        hidden,
        act,
        PermutationKind::Reversal,
        Conditioning::Observation,
    )
    .unwrap();
    let mut rng = RngState::new(seed, 7);
    let mut g = FlowGraph::build(spec, &mut rng).unwrap();
    randomize(&mut g.store, &mut rng, 0.6);
    g
}

pub fn coupling_graph(k: usize, layers: usize, seed: u64) -> FlowGraph {
    let spec = GraphSpec::coupling_stack(k, layers).unwrap();
    let mut rng = RngState::new(seed, 8);
    let mut g = FlowGraph::build(spec, &mut rng).unwrap();
    randomize(&mut g.store, &mut rng, 0.4);
    g
}

/// `ln |det J|` of `f` at `x` from a central-difference Jacobian.
pub fn fd_log_abs_det(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> f64 {
    let k = x.len();
    let mut j = DMatrix::<f64>::zeros(k, k);
    for c in 0..k {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[c] += h;
        xm[c] -= h;
        let (fp, fm) = (f(&xp), f(&xm));
        for r in 0..k {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    j.determinant().abs().ln()
}

/// Relative error with a floor so components near zero are judged on an
/// absolute scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Trapezoid weights on sorted nodes.
pub fn trapezoid_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { nodes[i] - nodes[i - 1] } else { 0.0 };
            let right = if i + 1 < n { nodes[i + 1] - nodes[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

/// Nodes `c + s·sinh(u)` for `u` uniform on `[-a, a]`: dense near `c`,
/// reaching `c ± s·sinh(a)` in the tails.
pub fn sinh_nodes(c: f64, s: f64, a: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| c + s * (-a + 2.0 * a * i as f64 / (n - 1) as f64).sinh())
        .collect()
}

/// `∫ exp(log p)` over a tensor-product grid, evaluated in row chunks.
pub fn integrate(graph: &FlowGraph, state: &GraphState, axes: &[Vec<f64>]) -> f64 {
    let weights: Vec<Vec<f64>> = axes.iter().map(|a| trapezoid_weights(a)).collect();
    let k = axes.len();
    assert_eq!(k, graph.dim());
    let total: usize = axes.iter().map(Vec::len).product();
    let mut sum = 0.0;
    let chunk = 20_000;
    let mut idx = 0;
    while idx < total {
        let end = (idx + chunk).min(total);
        let mut data = Vec::with_capacity((end - idx) * k);
        let mut w = Vec::with_capacity(end - idx);
        for flat in idx..end {
            let mut rem = flat;
            let mut wi = 1.0;
            let mut point = vec![0.0; k];
            for d in (0..k).rev() {
                let n = axes[d].len();
                point[d] = axes[d][rem % n];
                wi *= weights[d][rem % n];
                rem /= n;
            }
            data.extend(point);
            w.push(wi);
        }
        let pts = Tensor::new(vec![end - idx, k], data).unwrap();
        let lp = graph.log_prob_points(state, &pts).unwrap();
        sum += lp.iter().zip(&w).map(|(l, w)| l.exp() * w).sum::<f64>();
        idx = end;
    }
    sum
}
