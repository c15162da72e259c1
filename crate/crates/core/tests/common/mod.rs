//! Plain-f64 reference implementation of the evidential MLP, its loss and
//! its gradient (hand-derived backprop), used as an oracle.
#![allow(dead_code)]

use units_ml::autodiff::Tensor;

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `params` is `[w0, b0, w1, b1, ...]` with `w: [in, out]`.
struct Trace {
    /// Input to each layer, then the final pre-activation.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

fn forward_row(params: &[Tensor], x: &[f64]) -> Trace {
    let layers = params.len() / 2;
    let mut inputs = vec![x.to_vec()];
    let mut pre = Vec::new();
    for l in 0..layers {
        let (w, b) = (&params[2 * l], &params[2 * l + 1]);
        let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
        let h = inputs.last().unwrap();
        let z: Vec<f64> = (0..n_out)
            .map(|o| b.data()[o] + (0..n_in).map(|i| h[i] * w.data()[i * n_out + o]).sum::<f64>())
            .collect();
        if l + 1 < layers {
            inputs.push(z.iter().map(|v| v.max(0.0)).collect());
        }
        pre.push(z);
    }
    Trace { inputs, pre }
}

pub fn evidence_row(params: &[Tensor], x: &[f64]) -> Vec<f64> {
    forward_row(params, x).pre.last().unwrap().iter().map(|&z| softplus(z)).collect()
}

pub fn sample_loss(e: &[f64], y: usize, eta: f64) -> f64 {
    let s: f64 = e.iter().map(|v| v + 1.0).sum();
    let wrong: f64 = e.iter().enumerate().filter(|(j, _)| *j != y).map(|(_, v)| v).sum();
    -((e[y] + 1.0) / s).ln() + eta * wrong / s
}

/// Mean loss over the rows of `x`.
pub fn loss(params: &[Tensor], x: &Tensor, labels: &[usize], eta: f64) -> f64 {
    let rows = x.shape()[0];
    (0..rows).map(|r| sample_loss(&evidence_row(params, x.row(r)), labels[r], eta)).sum::<f64>() / rows as f64
}

/// Gradient of [`loss`] by manual backpropagation.
pub fn loss_grad(params: &[Tensor], x: &Tensor, labels: &[usize], eta: f64) -> Vec<Tensor> {
    let rows = x.shape()[0];
    let layers = params.len() / 2;
    let mut grads: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
    for r in 0..rows {
        let t = forward_row(params, x.row(r));
        let z = t.pre.last().unwrap();
        let e: Vec<f64> = z.iter().map(|&v| softplus(v)).collect();
        let y = labels[r];
        let s: f64 = e.iter().map(|v| v + 1.0).sum();
        let wrong: f64 = e.iter().enumerate().filter(|(j, _)| *j != y).map(|(_, v)| v).sum();
        // dL/dz for the output layer
        let mut delta: Vec<f64> = (0..e.len())
            .map(|k| {
                let mut d = 1.0 / s;
                if k == y {
                    d -= 1.0 / (e[y] + 1.0);
                }
                d += eta * (if k != y { 1.0 / s } else { 0.0 } - wrong / (s * s));
                d * sigmoid(z[k]) / rows as f64
            })
            .collect();
        for l in (0..layers).rev() {
            let w = &params[2 * l];
            let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
            let h = &t.inputs[l];
            for i in 0..n_in {
                for o in 0..n_out {
                    grads[2 * l][i * n_out + o] += h[i] * delta[o];
                }
            }
            for o in 0..n_out {
                grads[2 * l + 1][o] += delta[o];
            }
            if l > 0 {
                let below = &t.pre[l - 1];
                delta = (0..n_in)
                    .map(|i| {
                        let back: f64 = (0..n_out).map(|o| w.data()[i * n_out + o] * delta[o]).sum();
                        if below[i] > 0.0 { back } else { 0.0 }
                    })
                    .collect();
            }
        }
    }
    params
        .iter()
        .zip(grads)
        .map(|(p, g)| Tensor::new(p.shape().to_vec(), g).unwrap())
        .collect()
}

/// `steps` plain gradient steps on the support loss.
pub fn adapt(params: &[Tensor], x: &Tensor, labels: &[usize], eta: f64, steps: usize, rate: f64) -> Vec<Tensor> {
    let mut p = params.to_vec();
    for _ in 0..steps {
        let g = loss_grad(&p, x, labels, eta);
        p = p
            .iter()
            .zip(&g)
            .map(|(a, b)| Tensor::new(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(u, v)| u - rate * v).collect()).unwrap())
            .collect();
    }
    p
}
