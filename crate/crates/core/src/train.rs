//! The optimization loop: batch sampling, forward/backward, Adam updates,
//! checkpoints and the step-indexed loss log. Fully deterministic given
//! the three seeds in the config.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::config::{save_model_config, TrainConfig};
use crate::data::{apply_to_sample, load_dataset, Augmentation};
use crate::error::{Error, Result};
use crate::hdr::{build_input, total_loss, BracketSample};
use crate::model::{bind_params, forward, init_params, ModelParams};
use crate::tensor::{stack_batch, AdamState, Graph};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// What a finished run leaves behind.
pub struct TrainOutcome {
    pub params: ModelParams,
    pub final_checkpoint: PathBuf,
    /// (step, loss) pairs, one per optimizer step.
    pub loss_log: Vec<(u64, f64)>,
}

impl TrainOutcome {
    pub fn initial_loss(&self) -> Option<f64> {
        self.loss_log.first().map(|&(_, l)| l)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_log.last().map(|&(_, l)| l)
    }
}

fn checkpoint_pair(params: &ModelParams, cfg: &TrainConfig, path: &Path) -> Result<()> {
    checkpoint::save(params, path)?;
    let sidecar = path.with_extension("ckpt.toml");
    save_model_config(&cfg.model_config(), &sidecar)
}

/// Runs the full training loop. The output directory receives a config
/// snapshot, periodic checkpoints (`step_NNNNNN.ckpt` plus a `.toml`
/// architecture sidecar), the final checkpoint `final.ckpt`, and
/// `loss_log.csv` with one `step,loss` line per step.
pub fn train(cfg: &TrainConfig, dataset_root: &Path, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    cfg.save(&out_dir.join("config.toml"))?;

    let samples: Vec<BracketSample> = load_dataset(dataset_root)?
        .into_iter()
        .filter_map(|(_, s)| s.gt_hdr.is_some().then_some(s))
        .collect();
    if samples.is_empty() {
        return Err(Error::Config(format!(
            "no samples with ground truth under {}",
            dataset_root.display()
        )));
    }
    for s in &samples {
        let shape = s.ldr[0].shape();
        if cfg.crop > shape.height || cfg.crop > shape.width {
            return Err(Error::Geometry(format!(
                "crop {} exceeds sample extents {}x{}",
                cfg.crop, shape.height, shape.width
            )));
        }
    }

    let model_cfg = cfg.model_config();
    let mut params = init_params(&model_cfg, cfg.init_seed)?;
    let mut adam = AdamState::new(params.values());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut augment_rng = ChaCha8Rng::seed_from_u64(cfg.augment_seed);

    let log_path = out_dir.join("loss_log.csv");
    let mut log_file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log_file, "step,loss").map_err(|e| Error::io(&log_path, e))?;
    let mut loss_log = Vec::with_capacity(cfg.steps as usize);

    for step in 0..cfg.steps {
        // Assemble the batch: random sample, random joint augmentation.
        let mut frame0 = Vec::with_capacity(cfg.batch);
        let mut frame1 = Vec::with_capacity(cfg.batch);
        let mut frame2 = Vec::with_capacity(cfg.batch);
        let mut gts = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let sample = &samples[shuffle_rng.gen_range(0..samples.len())];
            let shape = sample.ldr[0].shape();
            let aug = Augmentation::sample(&mut augment_rng, shape.height, shape.width, cfg.crop);
            let patch = apply_to_sample(sample, &aug, cfg.crop);
            let inputs = build_input(&patch, cfg.gamma)?;
            frame0.push(inputs[0].clone());
            frame1.push(inputs[1].clone());
            frame2.push(inputs[2].clone());
            gts.push(patch.gt_hdr.expect("training samples carry ground truth"));
        }
        let batch_inputs = [
            stack_batch(&frame0)?,
            stack_batch(&frame1)?,
            stack_batch(&frame2)?,
        ];
        let batch_gt = stack_batch(&gts)?;

        // One graph per step.
        let mut g = Graph::new();
        let bind = bind_params(&mut g, &params, true)?;
        let input_nodes = [
            g.leaf(batch_inputs[0].clone(), false)?,
            g.leaf(batch_inputs[1].clone(), false)?,
            g.leaf(batch_inputs[2].clone(), false)?,
        ];
        let gt_node = g.leaf(batch_gt, false)?;
        let pred = forward(&mut g, input_nodes, &bind, &model_cfg)?;
        let loss = total_loss(&mut g, pred, gt_node, model_cfg.effective_lambda(), cfg.mu)?;
        let loss_value = g.value(loss).item();
        if !loss_value.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss became {loss_value} at step {step}"
            )));
        }

        let mut grads = g.backward(loss)?;
        let grad_list: Vec<_> = bind
            .node_ids()
            .iter()
            .map(|&id| grads.take(id).expect("gradient for bound parameter"))
            .collect();
        drop(g);

        crate::tensor::adam_step(
            params.values_mut(),
            &grad_list,
            &mut adam,
            cfg.lr_at(step),
            ADAM_BETA1,
            ADAM_BETA2,
            ADAM_EPS,
        )?;
        params
            .audit_finite()
            .map_err(|e| Error::NonFinite(format!("after step {step}: {e}")))?;

        writeln!(log_file, "{step},{loss_value:.17e}").map_err(|e| Error::io(&log_path, e))?;
        loss_log.push((step, loss_value));

        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            let path = out_dir.join(format!("step_{:06}.ckpt", step + 1));
            checkpoint_pair(&params, cfg, &path)?;
        }
    }

    let final_checkpoint = out_dir.join("final.ckpt");
    checkpoint_pair(&params, cfg, &final_checkpoint)?;
    Ok(TrainOutcome {
        params,
        final_checkpoint,
        loss_log,
    })
}

/// Loads a checkpoint together with its architecture sidecar and validates
/// the records against it.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, crate::model::ModelConfig)> {
    let sidecar = path.with_extension("ckpt.toml");
    let cfg = crate::config::load_model_config(&sidecar)?;
    let records = checkpoint::load(path)?;
    let params = ModelParams::from_records(&cfg, records)?;
    Ok((params, cfg))
}
