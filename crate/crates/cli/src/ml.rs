use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use railinspect::cnn::{
    self, freeze_and_retrain, load_model, save_model, write_history_csv, AnyModel, BatchIterator, Dataset,
    LayerSpec, Model, Scalar,
};
use railinspect::metrics::{write_confusion_csv, ConfusionMatrix};
use railinspect::scene::{Split, TrackClass};

use crate::config::usage;
use crate::{Ctx, EXIT_OK};

pub const MODEL_FILE: &str = "model.rcnn";
pub const HISTORY_FILE: &str = "history.csv";

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root written by `generate --dataset`
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Batches per epoch (default: one pass over the training split)
    #[arg(long)]
    pub steps: Option<usize>,
    /// Validation batches per epoch (default: one pass over the validation split)
    #[arg(long)]
    pub val_steps: Option<usize>,
    /// Keep the training order fixed
    #[arg(long)]
    pub no_shuffle: bool,
    /// Pretrained model to adapt; its first layers stay frozen
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Number of leading layers to freeze (default: all convolution blocks)
    #[arg(long, requires = "base")]
    pub freeze: Option<usize>,
}

/// Index just past the last pooling layer, i.e. every convolution block.
fn conv_block_count<F: Scalar>(model: &Model<F>) -> usize {
    model
        .layers()
        .iter()
        .rposition(|l| l.spec == LayerSpec::MaxPool)
        .map_or(0, |i| i + 1)
}

pub fn train(ctx: &mut Ctx, args: TrainArgs) -> Result<i32> {
    let explicit_steps = ctx.cfg.is_explicit("train.steps_per_epoch");
    let explicit_val_steps = ctx.cfg.is_explicit("train.validation_steps");
    let t = &mut ctx.cfg.train;
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
    if let Some(v) = args.batch {
        t.batch_size = v;
    }
    if let Some(v) = args.dropout {
        t.dropout_rate = v;
    }
    if let Some(v) = args.lr {
        t.learning_rate = v;
    }
    if args.no_shuffle {
        t.shuffle = false;
    }
    t.validate().map_err(|e| usage(e.to_string()))?;

    let train_data = Dataset::<f32>::load_split(&args.data, Split::Train)?;
    let valid_data = Dataset::<f32>::load_split(&args.data, Split::Valid)?;
    let derived = t.clone().with_steps_for(train_data.len(), valid_data.len());
    if !explicit_steps {
        t.steps_per_epoch = derived.steps_per_epoch;
    }
    if !explicit_val_steps {
        t.validation_steps = derived.validation_steps;
    }
    if let Some(v) = args.steps {
        t.steps_per_epoch = v;
    }
    if let Some(v) = args.val_steps {
        t.validation_steps = v;
    }
    t.validate().map_err(|e| usage(e.to_string()))?;
    let config = t.clone();

    let mut train_iter = BatchIterator::new(&train_data, config.shuffle, cnn::train::shuffle_seed(&config));
    let mut valid_iter = BatchIterator::new(&valid_data, false, 0);
    let (model, history) = match &args.base {
        Some(base) => {
            let mut model = load_model(base)
                .with_context(|| format!("loading {}", base.display()))?
                .into_single();
            let frozen = args.freeze.unwrap_or_else(|| conv_block_count(&model));
            let h = freeze_and_retrain(&mut model, frozen, &mut train_iter, &mut valid_iter, &config)?;
            (model, h)
        }
        None => {
            let [h, w, _] = train_data.dims();
            if h != w {
                return Err(usage(format!("dataset images must be square, got {w}x{h}")));
            }
            let mut model = Model::<f32>::standard(h, config.dropout_rate, config.seed)?;
            let hist = cnn::train(&mut model, &mut train_iter, &mut valid_iter, &config)?;
            (model, hist)
        }
    };

    let out = ctx.cfg.out.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    ctx.cfg.echo(&out)?;
    save_model(&model, &out.join(MODEL_FILE))?;
    write_history_csv(&history, &out.join(HISTORY_FILE))?;
    for r in &history.records {
        ctx.say(format!(
            "epoch {:3}: loss {:.4} acc {:.4} | val loss {:.4} val acc {:.4}",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        ));
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
}

pub fn predict(_ctx: &mut Ctx, args: PredictArgs) -> Result<i32> {
    let image = image::open(&args.image)
        .with_context(|| format!("reading {}", args.image.display()))?
        .to_luma8();
    let p = match load_model(&args.model).with_context(|| format!("loading {}", args.model.display()))? {
        AnyModel::Single(m) => cnn::predict(&m, &image)?,
        AnyModel::Double(m) => cnn::predict(&m, &image)?,
    };
    // the prediction is the command's output, so it ignores --quiet
    println!(
        "{} safe={:.6} defective={:.6}",
        p.class.dir_name(),
        p.probabilities[0],
        p.probabilities[1]
    );
    Ok(EXIT_OK)
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Split to score: train, valid or test
    #[arg(long, default_value = "test")]
    pub split: String,
}

fn eval_split<F: Scalar>(model: &Model<F>, args: &EvaluateArgs, split: Split) -> Result<ConfusionMatrix> {
    let data = Dataset::<F>::load_split(&args.data, split)?;
    Ok(cnn::evaluate(model, &data, 20)?)
}

pub fn evaluate(ctx: &mut Ctx, args: EvaluateArgs) -> Result<i32> {
    let split = Split::ALL
        .into_iter()
        .find(|s| s.dir_name() == args.split)
        .ok_or_else(|| usage(format!("--split must be train, valid or test, got {:?}", args.split)))?;
    let cm = match load_model(&args.model).with_context(|| format!("loading {}", args.model.display()))? {
        AnyModel::Single(m) => eval_split(&m, &args, split)?,
        AnyModel::Double(m) => eval_split(&m, &args, split)?,
    };
    let out = ctx.cfg.out.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    ctx.cfg.echo(&out)?;
    write_confusion_csv(&out.join("confusion.csv"), &[(split.dir_name().to_string(), cm)])?;
    let fmt = |r: Result<f64, _>| r.map_or("n/a".to_string(), |v: f64| format!("{v:.4}"));
    ctx.say(format!(
        "{} images: TP {} FN {} FP {} TN {} | accuracy {} TPR {} FPR {} (positive = {})",
        cm.total(),
        cm.tp,
        cm.fn_,
        cm.fp,
        cm.tn,
        fmt(cm.accuracy()),
        fmt(cm.tpr()),
        fmt(cm.fpr()),
        TrackClass::Defective.dir_name()
    ));
    Ok(EXIT_OK)
}
