//! Central finite-difference gradient checking.

mod oracle;
mod suite;

pub use oracle::{naive_summary, NaiveSummary};

pub use suite::{
    block_cases, primitive_cases, BlockCase, GradCheckOutcome, PrimitiveCase, F32_TOLERANCE, F64_TOLERANCE, RELU_TOLERANCE,
};

use crate::tensor_core::{Graph, Mode, ParamId, ParamStore, Session, Shape, Tensor, Var};
use crate::Result;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-4;

/// Norm-wise relative error `‖a − b‖ / (‖a‖ + ‖b‖)`; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na + nb == 0.0 {
        0.0
    } else {
        diff / (na + nb)
    }
}

/// Compares the analytic gradient of a scalar function of several inputs
/// against central differences. `f` builds the loss from leaf vars on a fresh
/// graph. Returns the worst relative error over inputs.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            g.grad(*v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.shape().numel()])
        })
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::no_grad();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).data()[0])
    };

    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.shape().numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let x = input.data()[j];
            work[i].data_mut()[j] = x + FD_STEP;
            let up = eval(&work)?;
            work[i].data_mut()[j] = x - FD_STEP;
            let down = eval(&work)?;
            work[i].data_mut()[j] = x;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        worst = worst.max(relative_error(&analytic[i], &numeric));
    }
    Ok(worst)
}

/// `Σ out ⊙ probe` for a fixed probe tensor; a loss whose gradient is the
/// probe itself, so composite blocks ending in normalisation still receive a
/// non-degenerate signal.
pub fn probe_loss(g: &mut Graph<f64>, out: Var, probe: &Tensor<f64>) -> Result<Var> {
    let p = g.constant(probe.clone());
    let prod = g.mul(out, p)?;
    Ok(g.sum_all(prod))
}

/// A deterministic probe of the given shape with entries in [-1, 1].
pub fn probe(shape: Shape, seed: u64) -> Tensor<f64> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape, -1.0, 1.0, &mut rng)
}

/// Gradient check of a parameterised block: the analytic gradients of
/// `Σ block(inputs) ⊙ probe` with respect to every input and every parameter
/// in `store` against central differences, in train mode. Returns the worst
/// relative error and the name of the tensor that produced it.
pub fn check_block_gradients<F>(store: &mut ParamStore<f64>, inputs: &[Tensor<f64>], forward: F) -> Result<(f64, String)>
where
    F: Fn(&mut Session<f64>, &[Var]) -> Result<Var>,
{
    let run = |store: &mut ParamStore<f64>, inputs: &[Tensor<f64>], probe: &Tensor<f64>| -> Result<f64> {
        let mut s = Session::new(store, Mode::Train);
        let xs: Vec<Var> = inputs.iter().map(|t| s.graph.leaf(t.clone(), false)).collect();
        let out = forward(&mut s, &xs)?;
        let loss = probe_loss(&mut s.graph, out, probe)?;
        Ok(s.graph.value(loss).data()[0])
    };

    store.clear_grads();
    let (probe, input_grads) = {
        let mut s = Session::new(store, Mode::Train);
        let xs: Vec<Var> = inputs.iter().map(|t| s.graph.leaf(t.clone(), true)).collect();
        let out = forward(&mut s, &xs)?;
        let probe = probe(s.graph.shape(out), 97);
        let loss = probe_loss(&mut s.graph, out, &probe)?;
        s.backward(loss)?;
        let grads: Vec<Vec<f64>> = xs
            .iter()
            .zip(inputs)
            .map(|(x, t)| s.graph.grad(*x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.shape().numel()]))
            .collect();
        (probe, grads)
    };

    let mut worst = (0.0, String::new());
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut numeric = vec![0.0; inputs[i].shape().numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + FD_STEP;
            let up = run(store, &work, &probe)?;
            work[i].data_mut()[j] = x0 - FD_STEP;
            let down = run(store, &work, &probe)?;
            work[i].data_mut()[j] = x0;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        let err = relative_error(&input_grads[i], &numeric);
        if err >= worst.0 {
            worst = (err, format!("input{i}"));
        }
    }

    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let analytic = store
            .get(id)
            .grad()
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; store.get(id).shape().numel()]);
        let mut numeric = vec![0.0; analytic.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let p0 = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = p0 + FD_STEP;
            let up = run(store, inputs, &probe)?;
            store.get_mut(id).data_mut()[j] = p0 - FD_STEP;
            let down = run(store, inputs, &probe)?;
            store.get_mut(id).data_mut()[j] = p0;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        let err = relative_error(&analytic, &numeric);
        if err > worst.0 {
            worst = (err, store.name(id).to_string());
        }
    }
    store.clear_grads();
    Ok(worst)
}

/// Shifts every parameter by a uniform draw in `[-spread, spread]`, so that
/// zero-initialised projections do not hide gradient paths.
pub fn jitter_params(store: &mut ParamStore<f64>, spread: f64, seed: u64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        store
            .get_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v += rng.gen_range(-spread..=spread));
    }
}
