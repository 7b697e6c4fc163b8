use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{reconstruction_loss, ArchitectureSpec, Linear, NetworkError, NetworkParams};
use crate::seed;
use crate::tensor::{AdamConfig, AdamState, ParamStore, Tape, Tensor, TensorError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    /// Probability of zeroing each input entry during layer-wise training.
    pub noise_rate: f64,
    pub layer_epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            noise_rate: 0.2,
            layer_epochs: 50,
            finetune_epochs: 100,
            batch_size: 256,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

fn diverged(stage: &str, epoch: usize) -> impl Fn(TensorError) -> NetworkError + '_ {
    move |e| match e {
        TensorError::NonFinite { .. } => NetworkError::Diverged {
            stage: stage.to_string(),
            epoch,
        },
        other => NetworkError::Tensor(other),
    }
}

/// Runs `epochs` passes of shuffled mini-batches; `step` gets the batch rows
/// and returns the batch loss after updating its parameters.
fn run_epochs(
    n: usize,
    epochs: usize,
    batch_size: usize,
    rng: &mut impl Rng,
    stage: &str,
    mut step: impl FnMut(&[usize], &mut dyn rand::RngCore) -> Result<f64, TensorError>,
) -> Result<(), NetworkError> {
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..epochs {
        order.shuffle(rng);
        for batch in order.chunks(batch_size.max(1)) {
            let loss = step(batch, rng).map_err(diverged(stage, epoch))?;
            if !loss.is_finite() {
                return Err(NetworkError::Diverged {
                    stage: stage.to_string(),
                    epoch,
                });
            }
        }
    }
    Ok(())
}

fn corrupt(x: &Tensor, rate: f64, rng: &mut dyn rand::RngCore) -> Tensor {
    let mut out = x.clone();
    if rate > 0.0 {
        for v in out.values_mut() {
            if rng.random::<f64>() < rate {
                *v = 0.0;
            }
        }
    }
    out
}

/// Greedy layer-wise denoising pretraining followed by noise-free
/// end-to-end finetuning.
///
/// Layer `l` is trained as a one-hidden-layer autoencoder paired with its
/// mirror decoder layer: the input is the clean output of the already
/// trained layers below, zero-masked with probability `noise_rate`, and the
/// target is the clean input.
pub fn pretrain_sdae(
    spec: &ArchitectureSpec,
    x: &Tensor,
    config: &PretrainConfig,
) -> Result<NetworkParams, NetworkError> {
    if x.rows() == 0 {
        return Err(NetworkError::Architecture("no training rows".into()));
    }
    if x.cols() != spec.input_dim {
        return Err(NetworkError::Dimension {
            expected: spec.input_dim,
            found: x.cols(),
        });
    }
    let mut net = NetworkParams::init(spec, seed::derive_seed(config.seed, 0))?;
    let mut rng = seed::stream_rng(config.seed, 1);
    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let depth = net.encoder.len();
    let mut h = x.clone();

    for l in 0..depth {
        let (enc, dec) = (net.encoder[l], net.decoder[depth - 1 - l]);
        if config.layer_epochs > 0 {
            let mut sub = ParamStore::new();
            let sub_enc = Linear {
                weight: sub.push(net.store.get(enc.weight).clone()),
                bias: sub.push(net.store.get(enc.bias).clone()),
                relu: enc.relu,
            };
            let sub_dec = Linear {
                weight: sub.push(net.store.get(dec.weight).clone()),
                bias: sub.push(net.store.get(dec.bias).clone()),
                relu: dec.relu,
            };
            let mut state = AdamState::new(&sub, adam);
            let stage = format!("layer {l}");
            run_epochs(h.rows(), config.layer_epochs, config.batch_size, &mut rng, &stage, |batch, rng| {
                let clean = h.select_rows(batch)?;
                let noisy = corrupt(&clean, config.noise_rate, rng);
                sub.zero_grad();
                let mut tape = Tape::new();
                let input = tape.constant(noisy);
                let target = tape.constant(clean);
                let code = sub_enc.forward(&mut tape, &sub, input)?;
                let out = sub_dec.forward(&mut tape, &sub, code)?;
                let loss = reconstruction_loss(&mut tape, target, out)?;
                tape.backward_into(loss, &mut sub)?;
                state.step(&mut sub)?;
                Ok(tape.value(loss).item())
            })?;
            for (src, dst) in [
                (sub_enc.weight, enc.weight),
                (sub_enc.bias, enc.bias),
                (sub_dec.weight, dec.weight),
                (sub_dec.bias, dec.bias),
            ] {
                let mut t = sub.get(src).clone();
                t.clear_grad();
                net.store.set(dst, t);
            }
        }
        let mut tape = Tape::new();
        let input = tape.constant(h);
        let out = enc.forward(&mut tape, &net.store, input)?;
        h = tape.value(out).clone();
    }

    if config.finetune_epochs > 0 {
        let mut state = AdamState::new(&net.store, adam);
        let finetuned = &mut net;
        run_epochs(x.rows(), config.finetune_epochs, config.batch_size, &mut rng, "finetune", |batch, _| {
            let clean = x.select_rows(batch)?;
            finetuned.store.zero_grad();
            let mut tape = Tape::new();
            let input = tape.constant(clean);
            let z = finetuned.encode(&mut tape, input).map_err(into_tensor)?;
            let out = finetuned.decode(&mut tape, z).map_err(into_tensor)?;
            let loss = reconstruction_loss(&mut tape, input, out)?;
            tape.backward_into(loss, &mut finetuned.store)?;
            state.step(&mut finetuned.store)?;
            Ok(tape.value(loss).item())
        })?;
        for id in net.layer_params() {
            net.store.get_mut(id).clear_grad();
        }
    }
    Ok(net)
}

fn into_tensor(e: NetworkError) -> TensorError {
    match e {
        NetworkError::Tensor(t) => t,
        other => unreachable!("shape checked before training: {other}"),
    }
}
