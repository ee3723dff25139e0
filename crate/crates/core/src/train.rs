//! Mini-batch training loop with per-epoch logging and checkpointing.
//!
//! Determinism contract: with a fixed seed and thread count, two runs
//! produce byte-identical checkpoints. Every random decision (shuffle
//! order, augmentation draws) comes from streams derived from the seed; the
//! worker pool only splits each batch into contiguous chunks whose partial
//! gradients are merged in chunk order, so scheduling never changes the
//! arithmetic.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::data::augment::{augment, AugmentConfig};
use crate::data::image::preprocess;
use crate::data::{class_counts, load_manifest, sample_rng, SampleRecord};
use crate::error::{Error, Result};
use crate::network::{backward, build_model, Gradients, Model, NetworkConfig};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::shuffle_rng;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Full passes over the manifest. Zero is allowed and checkpoints the
    /// untouched initialization.
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Save `epoch-<n>.ckpt` every this many epochs; 0 keeps only the
    /// final checkpoint.
    pub checkpoint_every: usize,
    /// Optional weight multiplying the positive-class loss term.
    pub pos_weight: Option<f64>,
    pub network: NetworkConfig,
    pub augment: AugmentConfig,
    /// Worker threads for the batch gradient; results are merged in a
    /// fixed order, so this affects speed, not the final checkpoint
    /// (bitwise determinism is guaranteed per thread count, strictly
    /// sequential at 1).
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 192,
            batch_size: 96,
            adam: AdamConfig::default(),
            seed: 42,
            checkpoint_every: 0,
            pos_weight: None,
            network: NetworkConfig::default(),
            augment: AugmentConfig::default(),
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.threads == 0 {
            return Err(Error::invalid("threads must be at least 1"));
        }
        if let Some(w) = self.pos_weight {
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::invalid(format!(
                    "pos_weight must be positive, got {w}"
                )));
            }
        }
        self.adam.validate()?;
        self.network.validate()?;
        self.augment.validate()?;
        let expect = [3, self.augment.crop_size, self.augment.crop_size];
        if self.network.input_shape != expect {
            return Err(Error::invalid(format!(
                "network input {:?} does not match the {}x{} RGB crop",
                self.network.input_shape, self.augment.crop_size, self.augment.crop_size
            )));
        }
        Ok(())
    }
}

/// Forward/backward over one contiguous chunk of the batch. Returns the
/// summed loss and summed gradients.
fn process_chunk(
    model: &Model<f32>,
    records: &[SampleRecord],
    indices: &[usize],
    config: &TrainConfig,
    epoch: usize,
) -> Result<(f64, Gradients<f32>)> {
    let mut loss_sum = 0.0f64;
    let mut grad_sum = Gradients::zeros_like(model);
    let pos_weight = config.pos_weight.unwrap_or(1.0);
    for &idx in indices {
        let record = &records[idx];
        let img = preprocess(&record.image_path)?;
        let mut rng = sample_rng(config.seed, epoch as u32, idx as u32);
        let input = augment(&img, &config.augment, &mut rng)?;
        let (loss, grads) = backward(model, &input, record.label, pos_weight)?;
        loss_sum += loss as f64;
        grad_sum.add_assign(&grads)?;
    }
    Ok((loss_sum, grad_sum))
}

/// Train a fresh model on the manifest, logging one line per epoch to both
/// stdout and `<output_dir>/train.log`, and saving checkpoints under
/// `output_dir`. Returns the final checkpoint (also saved as
/// `final.ckpt`).
pub fn train(manifest_path: &Path, config: &TrainConfig, output_dir: &Path) -> Result<Checkpoint> {
    config.validate()?;
    let records = load_manifest(manifest_path)?;
    if records.is_empty() {
        return Err(Error::invalid(format!(
            "manifest {} has no records",
            manifest_path.display()
        )));
    }
    if records.len() >= u32::MAX as usize {
        return Err(Error::invalid("manifest too large for 32-bit sample ids"));
    }
    std::fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
    let log_path = output_dir.join("train.log");
    let mut log = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut emit = |line: &str| -> Result<()> {
        println!("{line}");
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))
    };

    let (benign, malignant) = class_counts(&records);
    emit(&format!(
        "samples={} benign={benign} malignant={malignant}",
        records.len()
    ))?;

    let mut model: Model<f32> = build_model(&config.network, config.seed)?;
    let mut adam = AdamState::new(&model);

    let pool = if config.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let mut global_step = 0usize;
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.shuffle(&mut shuffle_rng(config.seed, epoch as u32));

        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            global_step += 1;
            let chunk_len = batch.len().div_ceil(config.threads);
            let parts: Vec<Result<(f64, Gradients<f32>)>> = match &pool {
                Some(pool) => pool.install(|| {
                    use rayon::prelude::*;
                    batch
                        .par_chunks(chunk_len)
                        .map(|chunk| process_chunk(&model, &records, chunk, config, epoch))
                        .collect()
                }),
                None => vec![process_chunk(&model, &records, batch, config, epoch)],
            };

            let mut batch_loss = 0.0f64;
            let mut grads = Gradients::zeros_like(&model);
            for part in parts {
                let (loss, g) = part?;
                batch_loss += loss;
                grads.add_assign(&g)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: global_step,
                });
            }
            grads.scale(1.0 / batch.len() as f32);
            adam_step(&mut model, &grads, &mut adam, &config.adam)?;
            epoch_loss += batch_loss;
        }

        let mean_loss = epoch_loss / records.len() as f64;
        emit(&format!(
            "epoch={epoch} loss={mean_loss} lr={}",
            config.adam.lr
        ))?;

        if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
            let ckpt = Checkpoint {
                model: model.clone(),
                adam: adam.clone(),
                adam_config: config.adam,
                epoch: epoch as u64,
                seed: config.seed,
                pos_weight: config.pos_weight,
            };
            save_checkpoint(&ckpt, &output_dir.join(format!("epoch-{epoch}.ckpt")))?;
        }
    }

    let ckpt = Checkpoint {
        model,
        adam,
        adam_config: config.adam,
        epoch: config.epochs as u64,
        seed: config.seed,
        pos_weight: config.pos_weight,
    };
    save_checkpoint(&ckpt, &output_dir.join("final.ckpt"))?;
    Ok(ckpt)
}

/// Paths of the checkpoints `train` writes for a given config.
pub fn final_checkpoint_path(output_dir: &Path) -> PathBuf {
    output_dir.join("final.ckpt")
}
