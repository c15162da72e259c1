mod common;

use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use units_ml::autodiff::{finite_difference_check, AutodiffError, Graph, Tensor, Var};
use units_ml::belief::evidential_loss_node;
use units_ml::episode::{one_hot_matrix, sample_task, Dataset, LabelBudget, SamplerConfig};
use units_ml::meta::{
    inner_adapt, meta_gradient, outer_step, CostCounters, InnerLoop, MetaError, MetaParams, OuterOptimizerState,
};
use units_ml::model::{evidence_node, init_params, Architecture, ParamSet, ParamVars};

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn random_params(arch: &Architecture, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let mut out = Vec::new();
    for (i, o) in arch.layer_dims() {
        out.push(random_matrix(rng, i, o, 0.8));
        out.push(Tensor::vector((0..o).map(|_| rng.random_range(-0.3..0.3)).collect()));
    }
    out
}

fn graph_loss_grad(params: &[Tensor], x: &Tensor, labels: &[usize], classes: usize, eta: f64) -> (f64, Vec<Tensor>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let xv = g.constant(x.clone());
    let e = evidence_node(&mut g, &ParamVars::from_vars(&vars), xv).unwrap();
    let loss = evidential_loss_node(&mut g, e, &one_hot_matrix(labels, classes), eta).unwrap();
    let value = g.value(loss).item().unwrap();
    let grads = g.grad(loss, &vars, false).unwrap().tensors(&g);
    (value, grads)
}

#[test]
fn evidential_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..4 {
        let arch = Architecture::new(6, vec![8], 5);
        let params = random_params(&arch, &mut rng);
        let x = random_matrix(&mut rng, 10, 6, 2.0);
        let labels: Vec<usize> = (0..10).map(|_| rng.random_range(0..5)).collect();
        for eta in [0.0, 2.0] {
            let (value, analytic) = graph_loss_grad(&params, &x, &labels, 5, eta);
            assert_relative_eq!(value, common::loss(&params, &x, &labels, eta), max_relative = 1e-12);
            let err = finite_difference_check(
                |p| Ok(common::loss(p, &x, &labels, eta)),
                &params,
                &analytic,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-4, "trial {trial}, eta {eta}: relative error {err}");
        }
    }
}

#[test]
fn graph_gradient_matches_manual_backprop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let arch = Architecture::new(3, vec![7, 4], 5);
    let params = random_params(&arch, &mut rng);
    let x = random_matrix(&mut rng, 6, 3, 1.5);
    let labels = [0, 1, 2, 3, 4, 0];
    for eta in [0.0, 2.0] {
        let (_, analytic) = graph_loss_grad(&params, &x, &labels, 5, eta);
        let manual = common::loss_grad(&params, &x, &labels, eta);
        for (a, m) in analytic.iter().zip(&manual) {
            assert!(a.max_abs_diff(m) < 1e-12);
        }
    }
}

#[test]
fn one_dimensional_composite_closed_form() {
    let inner = |g: &mut Graph, p: &[Var]| -> Result<Var, MetaError> { Ok(g.mul(p[0], p[0])?) };
    let outer = |g: &mut Graph, p: &[Var]| -> Result<Var, MetaError> {
        let d = g.add_scalar(p[0], -1.0)?;
        Ok(g.mul(d, d)?)
    };
    let theta = [Tensor::scalar(1.0)];
    let second = meta_gradient(&theta, 1, 0.1, true, inner, outer).unwrap();
    assert!((second[0].item().unwrap() - (-0.32)).abs() < 1e-10);

    let first = meta_gradient(&theta, 1, 0.1, false, inner, outer).unwrap();
    assert!((first[0].item().unwrap() - (-0.4)).abs() < 1e-10);

    // central differences of the composite itself
    let composite = |t: f64| (0.8 * t - 1.0f64).powi(2);
    let fd = (composite(1.0 + 1e-5) - composite(1.0 - 1e-5)) / 2e-5;
    assert!((second[0].item().unwrap() - fd).abs() < 1e-8);

    let mut p = theta.to_vec();
    OuterOptimizerState::sgd(1.0).apply(&mut p, &second).unwrap();
    assert!((p[0].item().unwrap() - 1.32).abs() < 1e-10);
}

#[test]
fn second_order_polynomials() {
    // f(x, y) = x^3 y + 2 x y^2; Hessian [[6xy, 3x^2 + 4y], [3x^2 + 4y, 4x]]
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(1.5));
    let y = g.param(Tensor::scalar(-0.5));
    let x2 = g.mul(x, x).unwrap();
    let x3 = g.mul(x2, x).unwrap();
    let a = g.mul(x3, y).unwrap();
    let y2 = g.mul(y, y).unwrap();
    let b = g.mul(x, y2).unwrap();
    let b = g.scalar_mul(b, 2.0).unwrap();
    let f = g.add(a, b).unwrap();
    let grads = g.grad(f, &[x, y], true).unwrap();
    let (gx, gy) = (grads.get(x).unwrap(), grads.get(y).unwrap());
    let hx = g.grad(gx, &[x, y], false).unwrap().tensors(&g);
    let hy = g.grad(gy, &[x, y], false).unwrap().tensors(&g);
    let (xv, yv) = (1.5, -0.5);
    let expected = [[6.0 * xv * yv, 3.0 * xv * xv + 4.0 * yv], [3.0 * xv * xv + 4.0 * yv, 4.0 * xv]];
    let got = [[hx[0].item().unwrap(), hx[1].item().unwrap()], [hy[0].item().unwrap(), hy[1].item().unwrap()]];
    for i in 0..2 {
        for j in 0..2 {
            assert!((got[i][j] - expected[i][j]).abs() < 1e-8, "H[{i}][{j}] = {}", got[i][j]);
        }
    }

    // x^3 at 2: second derivative 12
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(2.0));
    let x2 = g.mul(x, x).unwrap();
    let x3 = g.mul(x2, x).unwrap();
    let d = g.grad(x3, &[x], true).unwrap().get(x).unwrap();
    assert_eq!(g.value(d).item(), Some(12.0));
    let dd = g.grad(d, &[x], false).unwrap().tensors(&g);
    assert_eq!(dd[0].item(), Some(12.0));
}

#[test]
fn square_gradient_and_detach() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = g.mul(x, x).unwrap();
    assert_eq!(g.grad(y, &[x], false).unwrap().tensors(&g)[0].item(), Some(6.0));

    let d = g.detach(y).unwrap();
    assert_eq!(g.value(d).data()[0].to_bits(), g.value(y).data()[0].to_bits());
    let z = g.mul(d, x).unwrap();
    // only the direct path through x survives: dz/dx = y = 9
    assert_eq!(g.grad(z, &[x], false).unwrap().tensors(&g)[0].item(), Some(9.0));
    let w = g.scalar_mul(d, 4.0).unwrap();
    assert_eq!(g.grad(w, &[x], false).unwrap().tensors(&g)[0].item(), Some(0.0));
}

#[test]
fn create_graph_does_not_change_first_order_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let arch = Architecture::new(4, vec![5], 3);
    let params = random_params(&arch, &mut rng);
    let x = random_matrix(&mut rng, 4, 4, 1.0);
    let run = |create: bool| {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
        let xv = g.constant(x.clone());
        let e = evidence_node(&mut g, &ParamVars::from_vars(&vars), xv).unwrap();
        let loss = evidential_loss_node(&mut g, e, &one_hot_matrix(&[0, 1, 2, 0], 3), 1.0).unwrap();
        g.grad(loss, &vars, create).unwrap().tensors(&g)
    };
    for (a, b) in run(false).iter().zip(&run(true)) {
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() <= 1e-12 * v.abs().max(1e-300));
        }
    }
}

#[test]
fn gradient_is_linear() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![0.3, -1.2, 2.0]));
    let sq = g.mul(x, x).unwrap();
    let f = g.sum(sq).unwrap();
    let ex = g.exp(x).unwrap();
    let h = g.sum(ex).unwrap();
    let (a, b) = (2.5, -0.75);
    let af = g.scalar_mul(f, a).unwrap();
    let bh = g.scalar_mul(h, b).unwrap();
    let combo = g.add(af, bh).unwrap();
    let gc = g.grad(combo, &[x], false).unwrap().tensors(&g);
    let gf = g.grad(f, &[x], false).unwrap().tensors(&g);
    let gh = g.grad(h, &[x], false).unwrap().tensors(&g);
    for i in 0..3 {
        let expect = a * gf[0].data()[i] + b * gh[0].data()[i];
        assert!((gc[0].data()[i] - expect).abs() < 1e-10);
    }
}

#[test]
fn unreachable_inputs_get_zero_gradients() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0]));
    let unused = g.param(Tensor::matrix(2, 2, vec![1.0; 4]).unwrap());
    let s = g.sum(x).unwrap();
    let grads = g.grad(s, &[x, unused], false).unwrap().tensors(&g);
    assert_eq!(grads[1], Tensor::zeros(&[2, 2]));
    assert!(matches!(g.grad(x, &[x], false), Err(AutodiffError::NonScalarOutput(_))));
}

/// Three classes, three rows each, in four dimensions.
fn toy_dataset(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for c in 0..3 {
        for _ in 0..3 {
            for d in 0..4 {
                let centre = if d == c { 2.0 } else { 0.0 };
                features.push(centre + rng.random_range(-0.5..0.5));
            }
            labels.push(c);
        }
    }
    Dataset::new(4, features, labels, vec!["a".into(), "b".into(), "c".into()]).unwrap()
}

fn toy_meta_gradient(steps: usize, second_order: bool) -> (Vec<Tensor>, f64) {
    let ds = toy_dataset(2);
    let arch = Architecture::new(4, vec![6], 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut task = sample_task(&ds, &SamplerConfig::standard(3, 1, 2), &mut rng).unwrap();
    let query_labels = task.reveal_labels(0, &mut LabelBudget::unlimited()).unwrap().to_vec();
    let theta0 = random_params(&arch, &mut rng);
    let (rate, eta) = (0.3, 1.0);

    let mut theta = MetaParams::new(ParamSet::zeros(&arch).with_tensors(theta0.clone()).unwrap());
    let inner = InnerLoop { steps, rate, eta, track_higher_order: second_order };
    let mut counters = CostCounters::default();
    let adapted = inner_adapt(&theta, &task.support, 3, &inner, &mut counters).unwrap();
    let mut opt = OuterOptimizerState::sgd(1.0);
    outer_step(&mut theta, vec![(adapted, &task.query_sets[0])], eta, &mut opt, &mut counters).unwrap();
    let grad: Vec<Tensor> = theta0
        .iter()
        .zip(theta.tensors())
        .map(|(before, after)| before.zip_add(&after.map(|v| -v)))
        .collect();

    let support = &task.support;
    let query_x = task.query_sets[0].x.clone();
    let objective = |p: &[Tensor]| -> Result<f64, AutodiffError> {
        let adapted = common::adapt(p, &support.x, &support.labels, eta, steps, rate);
        Ok(common::loss(&adapted, &query_x, &query_labels, eta))
    };
    let err = finite_difference_check(objective, &theta0, &grad, 1e-5).unwrap();
    (grad, err)
}

#[test]
fn second_order_meta_gradient_matches_finite_differences() {
    for steps in [1, 5] {
        let (_, err) = toy_meta_gradient(steps, true);
        println!("M = {steps}: relative error {err:.3e}");
        assert!(err < 1e-3, "M = {steps}: relative error {err}");
    }
}

#[test]
fn first_order_meta_gradient_differs() {
    for steps in [1, 5] {
        let (second, _) = toy_meta_gradient(steps, true);
        let (first, _) = toy_meta_gradient(steps, false);
        let diff = second.iter().zip(&first).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max);
        assert!(diff > 1e-6, "M = {steps}: difference {diff}");
    }
}

#[test]
fn initialized_networks_have_finite_meta_gradients() {
    let ds = toy_dataset(4);
    let arch = Architecture::new(4, vec![6], 3);
    let mut theta = MetaParams::new(init_params(&arch, 1));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut task = sample_task(&ds, &SamplerConfig::standard(3, 1, 2), &mut rng).unwrap();
    task.reveal_labels(0, &mut LabelBudget::unlimited()).unwrap();
    let inner = InnerLoop { steps: 3, rate: 0.1, eta: 0.5, track_higher_order: true };
    let mut counters = CostCounters::default();
    let adapted = inner_adapt(&theta, &task.support, 3, &inner, &mut counters).unwrap();
    let mut opt = OuterOptimizerState::adam(0.001, &theta.tensors());
    let stats = outer_step(&mut theta, vec![(adapted, &task.query_sets[0])], 0.5, &mut opt, &mut counters).unwrap();
    assert!(stats.loss.is_finite());
    assert!(theta.tensors().iter().all(Tensor::is_finite));
}
