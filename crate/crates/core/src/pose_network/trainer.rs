use super::network::PoseNetwork;
use crate::error::Result;
use crate::tensor_core::{AdamState, Mode, Reduction, Real, Tensor};

/// Mini-batch prepared for one optimisation step.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub images: Tensor<T>,
    pub targets: Tensor<T>,
    /// One weight per (sample, joint), row-major.
    pub weights: Vec<T>,
}

/// Heatmap loss of the network on a batch, without updating anything.
pub fn evaluate_loss<T: Real>(net: &mut PoseNetwork<T>, batch: &Batch<T>, reduction: Reduction) -> Result<f64> {
    let (arch, mut s) = net.session(Mode::Eval);
    let x = s.graph.constant(batch.images.clone());
    let trace = arch.forward(&mut s, x)?;
    let loss = s.graph.mse_loss(trace.heatmaps, &batch.targets, &batch.weights, reduction)?;
    Ok(s.graph.value(loss).data()[0].as_f64())
}

/// Forward, backward and one Adam update. Returns the pre-update loss.
pub fn train_step<T: Real>(
    net: &mut PoseNetwork<T>,
    adam: &mut AdamState,
    batch: &Batch<T>,
    reduction: Reduction,
) -> Result<f64> {
    let loss_value = {
        let (arch, mut s) = net.session(Mode::Train);
        let x = s.graph.constant(batch.images.clone());
        let trace = arch.forward(&mut s, x)?;
        let loss = s.graph.mse_loss(trace.heatmaps, &batch.targets, &batch.weights, reduction)?;
        s.backward(loss)?;
        s.graph.value(loss).data()[0].as_f64()
    };
    adam.step(&mut net.store)?;
    Ok(loss_value)
}
