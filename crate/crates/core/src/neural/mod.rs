//! LSTM reconstruction model with exact backpropagation through time.

pub mod activation;
mod batch;
mod block;
mod checkpoint;
mod model;

pub use batch::BlockGrad;
pub use block::{lstm_forward, lstm_step, Gate, LstmBlock, LstmState};
pub use checkpoint::{Checkpoint, Section};
pub use model::{
    combine_hidden, combine_hidden_signed, head_forward, model_backward, model_backward_into,
    model_forward,
    model_forward_cached, CombinerSign, ForwardCache, Gradients, LinearHead, ModelSpec,
    RecoveryModel, Topology, SINGLE_BLOCK_NAMES, THREE_BLOCK_NAMES,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn loss(model: &RecoveryModel, series: &[&[f64]], starts: &[usize], target: &[f64]) -> f64 {
        let p = model.predict(series, starts).unwrap();
        p.iter().zip(target).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum()
    }

    #[test]
    fn gradients_match_central_differences() {
        for topo in [
            Topology::ThreeBlock(CombinerSign::Prose),
            Topology::ThreeBlock(CombinerSign::Alternative),
            Topology::SingleBlock,
        ] {
            let spec = ModelSpec {
                topology: topo,
                ..ModelSpec::three_block(3, 5, CombinerSign::Prose)
            };
            let mut model = RecoveryModel::new(spec, 17).unwrap();
            for t in model.tensors_mut() {
                t.iter_mut().for_each(|v| *v *= 2.0);
            }
            let mut rng = stream_rng(5, 1);
            let data: Vec<Vec<f64>> = (0..topo.stream_count())
                .map(|_| (0..12).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let series: Vec<&[f64]> = data.iter().map(|v| v.as_slice()).collect();
            let starts = [0usize, 4, 7];
            let target = [0.3, -0.2, 0.8];

            let cache = model.forward_cached(&series, &starts).unwrap();
            let dpred: Vec<f64> = cache.preds.iter().zip(&target).map(|(p, t)| p - t).collect();
            let grads = model_backward(&model, &cache, &dpred).unwrap();
            let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();

            let h = 1e-5;
            for (ti, ga) in analytic.iter().enumerate() {
                for k in 0..ga.len() {
                    let orig = model.tensors()[ti][k];
                    model.tensors_mut()[ti][k] = orig + h;
                    let up = loss(&model, &series, &starts, &target);
                    model.tensors_mut()[ti][k] = orig - h;
                    let down = loss(&model, &series, &starts, &target);
                    model.tensors_mut()[ti][k] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    let denom = ga[k].abs().max(numeric.abs()).max(1e-4);
                    assert!(
                        (ga[k] - numeric).abs() / denom < 1e-5,
                        "{topo:?} tensor {ti} index {k}: {} vs {numeric}",
                        ga[k]
                    );
                }
            }
        }
    }
}
