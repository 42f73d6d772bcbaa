//! Central finite-difference gradient checks in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::nn::graph::{CdVariant, Graph, Var};
use crate::nn::layers::{FeedForward, Linear, MultiHeadAttention, VectorAttention};
use crate::nn::params::{Bound, ParameterStore};
use crate::nn::tensor::Tensor;

pub const FD_EPS: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares backprop gradients of the scalar produced by `f` with central
/// differences over every entry of every input.
pub fn check_gradients<F>(
    name: &str,
    inputs: &[Tensor<f64>],
    training: bool,
    tolerance: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let graph = || if training { Graph::training(17, 3) } else { Graph::new() };
    let mut g = graph();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut g = graph();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut work = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for e in 0..t.numel() {
            let orig = t.data()[e];
            work[ti].data_mut()[e] = orig + FD_EPS;
            let up = eval(&work)?;
            work[ti].data_mut()[e] = orig - FD_EPS;
            let down = eval(&work)?;
            work[ti].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * FD_EPS);
            worst = worst.max(relative_error(analytic[ti][e], numeric));
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        checked,
        max_rel_error: worst,
        tolerance,
        passed: worst <= tolerance,
    })
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so kinks at 0 stay outside the FD stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Reduces a tensor output to a scalar through a fixed random projection.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_tensor(&mut rng, g.shape(out).to_vec());
    let w = g.constant(w);
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

/// Overwrites every parameter with values uniform in `±scale`.
pub fn randomize_store(store: &mut ParameterStore<f64>, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in store.iter_mut() {
        for v in p.value.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

fn store_tensors(store: &ParameterStore<f64>) -> Vec<Tensor<f64>> {
    store.iter().map(|p| p.value.clone()).collect()
}

/// Checks one layer: inputs are `[x, params...]`.
fn check_layer<F>(name: &str, x: Tensor<f64>, store: &ParameterStore<f64>, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &Bound, Var) -> Result<Var>,
{
    let mut inputs = vec![x];
    inputs.extend(store_tensors(store));
    check_gradients(name, &inputs, false, OP_TOLERANCE, |g, vars| {
        let bound = Bound::from_vars(vars[1..].to_vec());
        let out = f(g, &bound, vars[0])?;
        project(g, out, 99)
    })
}

/// Finite-difference checks for every differentiable op and layer on
/// several random shapes.
pub fn op_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    let shapes = [(2usize, 3usize), (4, 5), (3, 7)];
    for (si, &(r, c)) in shapes.iter().enumerate() {
        let tag = |op: &str| format!("{op} {r}x{c}");
        let ps = seed.wrapping_add(si as u64);
        let a = random_tensor(&mut rng, vec![r, c]);
        let b = random_tensor(&mut rng, vec![r, c]);
        let w = random_tensor(&mut rng, vec![c, r + 1]);
        let bias = random_tensor(&mut rng, vec![c]);
        let nz = away_from_zero(&mut rng, vec![r, c]);

        reports.push(check_gradients(&tag("matmul"), &[a.clone(), w.clone()], false, OP_TOLERANCE, |g, v| {
            let o = g.matmul(v[0], v[1])?;
            project(g, o, ps)
        })?);
        reports.push(check_gradients(&tag("add"), &[a.clone(), b.clone()], false, OP_TOLERANCE, |g, v| {
            let o = g.add(v[0], v[1])?;
            project(g, o, ps)
        })?);
        reports.push(check_gradients(&tag("sub"), &[a.clone(), b.clone()], false, OP_TOLERANCE, |g, v| {
            let o = g.sub(v[0], v[1])?;
            project(g, o, ps)
        })?);
        reports.push(check_gradients(&tag("mul"), &[a.clone(), b.clone()], false, OP_TOLERANCE, |g, v| {
            let o = g.mul(v[0], v[1])?;
            project(g, o, ps)
        })?);
        reports.push(check_gradients(&tag("add_bias"), &[a.clone(), bias.clone()], false, OP_TOLERANCE, |g, v| {
            let o = g.add_bias(v[0], v[1])?;
            project(g, o, ps)
        })?);
        reports.push(check_gradients(&tag("scale"), std::slice::from_ref(&a), false, OP_TOLERANCE, |g, v| {
            let o = g.scale(v[0], -1.7);
            project(g, o, ps)
        })?);
        reports.push(check_gradients(&tag("relu"), std::slice::from_ref(&nz), false, OP_TOLERANCE, |g, v| {
            let o = g.relu(v[0]);
            project(g, o, ps)
        })?);
        reports.push(check_gradients(&tag("abs"), std::slice::from_ref(&nz), false, OP_TOLERANCE, |g, v| {
            let o = g.abs(v[0]);
            project(g, o, ps)
        })?);
        reports.push(check_gradients(&tag("reshape"), std::slice::from_ref(&a), false, OP_TOLERANCE, |g, v| {
            let o = g.reshape(v[0], vec![c, r])?;
            let o = g.mul(o, o)?;
            project(g, o, ps)
        })?);
        reports.push(check_gradients(&tag("transpose"), std::slice::from_ref(&a), false, OP_TOLERANCE, |g, v| {
            let o = g.transpose(v[0])?;
            project(g, o, ps)
        })?);
        reports.push(check_gradients(&tag("concat rows"), &[a.clone(), b.clone()], false, OP_TOLERANCE, |g, v| {
            let o = g.concat(&[v[0], v[1]], 0)?;
            project(g, o, ps)
        })?);
        let side = random_tensor(&mut rng, vec![r, 2]);
        reports.push(check_gradients(&tag("concat cols"), &[a.clone(), side], false, OP_TOLERANCE, |g, v| {
            let o = g.concat(&[v[0], v[1]], 1)?;
            project(g, o, ps)
        })?);
        reports.push(check_gradients(&tag("slice_cols"), std::slice::from_ref(&a), false, OP_TOLERANCE, |g, v| {
            let o = g.slice_cols(v[0], 1, c - 1)?;
            project(g, o, ps)
        })?);
        let index: Vec<usize> = (0..r + 2).map(|i| (i * 7 + 1) % r).collect();
        reports.push(check_gradients(&tag("gather"), std::slice::from_ref(&a), false, OP_TOLERANCE, |g, v| {
            let o = g.gather(v[0], &index)?;
            project(g, o, ps)
        })?);
        reports.push(check_gradients(&tag("sum"), std::slice::from_ref(&a), false, OP_TOLERANCE, |g, v| {
            let o = g.mul(v[0], v[0])?;
            Ok(g.sum(o))
        })?);
        reports.push(check_gradients(&tag("mean"), std::slice::from_ref(&a), false, OP_TOLERANCE, |g, v| {
            let o = g.mul(v[0], v[0])?;
            Ok(g.mean(o))
        })?);
        for axis in 0..2 {
            reports.push(check_gradients(&tag(&format!("reduce_max axis {axis}")), std::slice::from_ref(&a), false, OP_TOLERANCE, |g, v| {
                let o = g.reduce_max(v[0], axis)?;
                project(g, o, ps)
            })?);
            reports.push(check_gradients(&tag(&format!("reduce_mean axis {axis}")), std::slice::from_ref(&a), false, OP_TOLERANCE, |g, v| {
                let o = g.reduce_mean(v[0], axis)?;
                project(g, o, ps)
            })?);
            reports.push(check_gradients(&tag(&format!("softmax axis {axis}")), std::slice::from_ref(&a), false, OP_TOLERANCE, |g, v| {
                let o = g.softmax(v[0], axis)?;
                project(g, o, ps)
            })?);
        }
        let grouped = random_tensor(&mut rng, vec![r * 3, c]);
        reports.push(check_gradients(&tag("group_softmax"), std::slice::from_ref(&grouped), false, OP_TOLERANCE, |g, v| {
            let o = g.group_softmax(v[0], 3)?;
            project(g, o, ps)
        })?);
        reports.push(check_gradients(&tag("group_sum"), std::slice::from_ref(&grouped), false, OP_TOLERANCE, |g, v| {
            let o = g.group_sum(v[0], 3)?;
            project(g, o, ps)
        })?);
        reports.push(check_gradients(&tag("group_max"), std::slice::from_ref(&grouped), false, OP_TOLERANCE, |g, v| {
            let o = g.group_max(v[0], 3)?;
            project(g, o, ps)
        })?);
        let gain = random_tensor(&mut rng, vec![c]);
        reports.push(check_gradients(&tag("layer_norm"), &[a.clone(), gain, bias.clone()], false, OP_TOLERANCE, |g, v| {
            let o = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
            project(g, o, ps)
        })?);
        reports.push(check_gradients(&tag("dropout"), std::slice::from_ref(&a), true, OP_TOLERANCE, |g, v| {
            let o = g.dropout(v[0], 0.3)?;
            project(g, o, ps)
        })?);
        reports.push(check_gradients(&tag("mse"), &[a.clone(), b.clone()], false, OP_TOLERANCE, |g, v| g.mse(v[0], v[1]))?);
        let pa = random_tensor(&mut rng, vec![r + 2, 3]);
        let pb = random_tensor(&mut rng, vec![c, 3]);
        for variant in [CdVariant::L1, CdVariant::L2] {
            reports.push(check_gradients(&tag(&format!("chamfer {variant:?}")), &[pa.clone(), pb.clone()], false, OP_TOLERANCE, |g, v| {
                g.chamfer(v[0], v[1], variant)
            })?);
        }
    }

    for (i, &(n, dim)) in [(3usize, 4usize), (5, 6), (4, 8)].iter().enumerate() {
        let s = seed.wrapping_mul(31).wrapping_add(i as u64);
        let x = random_tensor(&mut rng, vec![n, dim]);

        let mut store = ParameterStore::<f64>::new(s);
        let lin = Linear::new(&mut store, "lin", dim, dim + 1)?;
        randomize_store(&mut store, s, 0.5);
        reports.push(check_layer(&format!("linear {n}x{dim}"), x.clone(), &store, |g, p, x| lin.forward(g, p, x))?);

        let mut store = ParameterStore::<f64>::new(s);
        let ffn = FeedForward::new(&mut store, "ffn", dim, 2 * dim, 0.0)?;
        randomize_store(&mut store, s, 0.5);
        reports.push(check_layer(&format!("feed_forward {n}x{dim}"), x.clone(), &store, |g, p, x| ffn.forward(g, p, x))?);

        let heads = if dim % 4 == 0 { 2 } else { 1 };
        let kv = random_tensor(&mut rng, vec![n + 2, dim]);
        let mut store = ParameterStore::<f64>::new(s);
        let mha = MultiHeadAttention::new(&mut store, "mha", dim, heads, false)?;
        randomize_store(&mut store, s, 0.5);
        reports.push(check_layer(&format!("multi_head_attention {n}x{dim}"), x.clone(), &store, |g, p, x| {
            let kv = g.constant(kv.clone());
            mha.forward(g, p, x, kv)
        })?);
    }

    for (i, &(n, dim, k)) in [(6usize, 4usize, 3usize), (5, 3, 2), (7, 4, 4)].iter().enumerate() {
        let s = seed.wrapping_mul(131).wrapping_add(i as u64);
        let mut prng = ChaCha8Rng::seed_from_u64(s);
        let coords: Vec<[f64; 3]> = (0..n)
            .map(|_| [prng.random_range(-1.0..1.0), prng.random_range(-1.0..1.0), prng.random_range(-1.0..1.0)])
            .collect();
        let x = random_tensor(&mut rng, vec![n, dim]);
        let mut store = ParameterStore::<f64>::new(s);
        let va = VectorAttention::new(&mut store, "va", dim)?;
        randomize_store(&mut store, s, 0.5);
        reports.push(check_layer(&format!("vector_attention n={n} c={dim} k={k}"), x, &store, |g, p, x| {
            va.forward(g, p, x, &coords, k)
        })?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_matches_finite_differences() {
        let reports = op_suite(5).unwrap();
        assert!(reports.len() > 90);
        for r in &reports {
            assert!(r.passed, "{} rel err {:.3e}", r.name, r.max_rel_error);
        }
    }
}
