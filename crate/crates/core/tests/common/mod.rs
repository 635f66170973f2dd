#![allow(dead_code)]

use dib_core::autodiff::{Graph, Var};
use dib_core::rng::{rng_from, standard_normal, Rng};
use dib_core::tensor::Tensor;
use dib_core::Result;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor of the relative error, so entries that are zero on
/// both routes compare as equal.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

/// Builds the graph for one instance; the returned node may have any shape.
pub type Build = dyn Fn(&mut Graph, &[Var]) -> Result<Var> + Sync;

/// Sums a non-scalar output against fixed random weights.
fn scalarize(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let t = g.value(out);
    if t.len() == 1 {
        return Ok(out);
    }
    let w = standard_normal(&mut rng_from(seed, 0xC0), t.shape());
    let wv = g.constant(w);
    let prod = g.mul(out, wv)?;
    g.sum(prod)
}

fn bind(g: &mut Graph, inputs: &[Tensor], n_params: usize) -> Vec<Var> {
    inputs.iter().enumerate().map(|(k, t)| if k < n_params { g.param(t.clone()) } else { g.constant(t.clone()) }).collect()
}

fn eval(inputs: &[Tensor], n_params: usize, build: &Build, seed: u64) -> Result<f64> {
    let mut g = Graph::new();
    let vars = bind(&mut g, inputs, n_params);
    let out = build(&mut g, &vars)?;
    let root = scalarize(&mut g, out, seed)?;
    Ok(g.value(root).item())
}

/// Largest relative error between backprop and central differences over the
/// entries of the first `n_params` inputs; the rest enter as constants.
/// `grad_scale` multiplies the numerical side, for primitives whose backward
/// pass is not the derivative of their forward pass.
pub fn max_fd_error(inputs: &[Tensor], n_params: usize, build: &Build, grad_scale: f64, seed: u64) -> Result<f64> {
    let mut g = Graph::new();
    let vars = bind(&mut g, inputs, n_params);
    let out = build(&mut g, &vars)?;
    let root = scalarize(&mut g, out, seed)?;
    g.backward(root)?;
    let analytic: Vec<Tensor> = vars[..n_params].iter().map(|&v| g.grad_or_zeros(v)).collect();
    let mut worst = 0.0f64;
    for (k, t) in inputs[..n_params].iter().enumerate() {
        for i in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = grad_scale * (eval(&plus, n_params, build, seed)? - eval(&minus, n_params, build, seed)?) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[k].data()[i], numeric));
        }
    }
    Ok(worst)
}

pub struct Primitive {
    pub name: &'static str,
    /// Draws the inputs of one instance.
    pub inputs: Box<dyn Fn(&mut Rng) -> Vec<Tensor> + Sync>,
    pub build: Box<Build>,
    /// Leading inputs that are differentiated; trailing ones are fixed.
    pub n_params: usize,
    pub grad_scale: f64,
}

fn normal(rng: &mut Rng, r: usize, c: usize) -> Tensor {
    standard_normal(rng, &[r, c])
}

/// Entries bounded away from zero, so the leaky ReLU kink is never straddled.
fn off_zero(rng: &mut Rng, r: usize, c: usize) -> Tensor {
    normal(rng, r, c).map(|v| if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v })
}

fn targets(rows: usize, classes: usize) -> Vec<usize> {
    (0..rows).map(|i| (i * 7 + 3) % classes).collect()
}

pub fn primitives() -> Vec<Primitive> {
    let p = |name, inputs: Box<dyn Fn(&mut Rng) -> Vec<Tensor> + Sync>, build: Box<Build>| Primitive { name, inputs, build, n_params: usize::MAX, grad_scale: 1.0 };
    let mut out = vec![
        p("matmul", Box::new(|r| vec![normal(r, 3, 4), normal(r, 4, 2)]), Box::new(|g, v| g.matmul(v[0], v[1]))),
        p("add_bias", Box::new(|r| vec![normal(r, 3, 4), normal(r, 1, 4)]), Box::new(|g, v| g.add_bias(v[0], v[1]))),
        p("add", Box::new(|r| vec![normal(r, 3, 3), normal(r, 3, 3)]), Box::new(|g, v| g.add(v[0], v[1]))),
        p("mul", Box::new(|r| vec![normal(r, 3, 3), normal(r, 3, 3)]), Box::new(|g, v| g.mul(v[0], v[1]))),
        p("scale", Box::new(|r| vec![normal(r, 2, 5)]), Box::new(|g, v| g.scale(v[0], -1.7))),
        p("leaky_relu", Box::new(|r| vec![off_zero(r, 4, 3)]), Box::new(|g, v| g.leaky_relu(v[0], 0.01))),
        p("softmax_logloss", Box::new(|r| vec![normal(r, 5, 3)]), Box::new(|g, v| g.softmax_logloss(v[0], &targets(5, 3)))),
        p(
            "weighted_logloss",
            Box::new(|r| vec![normal(r, 4, 4)]),
            Box::new(|g, v| g.weighted_logloss(v[0], &targets(4, 4), &[0.5, -0.25, 1.0, 0.1])),
        ),
        p("batchnorm_noaffine", Box::new(|r| vec![normal(r, 5, 3)]), Box::new(|g, v| g.batchnorm_noaffine(v[0], 1e-5))),
        p(
            "gaussian_reparam",
            Box::new(|r| {
                let noise = normal(r, 3, 2);
                vec![normal(r, 3, 2), normal(r, 3, 2).map(|s| s + 5.0), noise]
            }),
            Box::new(|g, v| {
                let noise = g.value(v[2]).clone();
                g.gaussian_reparam(v[0], v[1], &noise)
            }),
        ),
        p("mean", Box::new(|r| vec![normal(r, 3, 4)]), Box::new(|g, v| g.mean(v[0]))),
        p("sum", Box::new(|r| vec![normal(r, 4, 2)]), Box::new(|g, v| g.sum(v[0]))),
        p(
            "dropout_with_mask",
            Box::new(|r| {
                let x = normal(r, 3, 4);
                let mask = normal(r, 3, 4).map(|m| if m > 0.0 { 2.0 } else { 0.0 });
                vec![x, mask]
            }),
            Box::new(|g, v| {
                let mask = g.value(v[1]).data().to_vec();
                g.dropout_with_mask(v[0], mask)
            }),
        ),
        p("sum_squares", Box::new(|r| vec![normal(r, 3, 3)]), Box::new(|g, v| g.sum_squares(v[0]))),
        p("slice_cols", Box::new(|r| vec![normal(r, 3, 5)]), Box::new(|g, v| g.slice_cols(v[0], 1, 4))),
        p("select_rows", Box::new(|r| vec![normal(r, 4, 3)]), Box::new(|g, v| g.select_rows(v[0], &[2, 0, 2, 3]))),
        p(
            "gaussian_kl",
            Box::new(|r| vec![normal(r, 3, 2), normal(r, 3, 2).map(|s| s + 5.0)]),
            Box::new(|g, v| g.gaussian_kl(v[0], v[1])),
        ),
        p(
            "mlp_composite",
            Box::new(|r| vec![normal(r, 6, 3), normal(r, 3, 4), normal(r, 1, 4), normal(r, 4, 3)]),
            Box::new(|g, v| {
                let h = g.matmul(v[0], v[1])?;
                let h = g.add_bias(h, v[2])?;
                let h = g.batchnorm_noaffine(h, 1e-5)?;
                let h = g.leaky_relu(h, 0.2)?;
                let o = g.matmul(h, v[3])?;
                g.softmax_logloss(o, &targets(6, 3))
            }),
        ),
    ];
    out.push(Primitive {
        name: "gradient_reversal",
        inputs: Box::new(|r| vec![normal(r, 3, 3)]),
        build: Box::new(|g, v| g.gradient_reversal(v[0], 0.7)),
        n_params: 1,
        grad_scale: -0.7,
    });
    for prim in out.iter_mut() {
        if prim.name == "gaussian_reparam" {
            prim.n_params = 2;
        } else if prim.name == "dropout_with_mask" {
            prim.n_params = 1;
        }
    }
    out
}

/// Per primitive: instances checked and the largest relative error seen.
pub fn run_gradcheck(instances: usize, seed: u64) -> Vec<(&'static str, usize, f64)> {
    primitives()
        .iter()
        .enumerate()
        .map(|(k, prim)| {
            let mut rng = rng_from(seed, k as u64);
            let mut worst = 0.0f64;
            for i in 0..instances {
                let inputs = (prim.inputs)(&mut rng);
                let e = max_fd_error(&inputs, prim.n_params.min(inputs.len()), prim.build.as_ref(), prim.grad_scale, seed ^ (i as u64 + 1)).expect(prim.name);
                worst = worst.max(e);
            }
            (prim.name, instances, worst)
        })
        .collect()
}
