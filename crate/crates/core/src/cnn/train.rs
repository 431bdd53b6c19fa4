use std::fs;
use std::path::Path;

use image::GrayImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamHyper, AdamState};
use super::layers::Mode;
use super::model::Model;
use super::tensor::{Scalar, Tensor};
use super::CnnError;
use crate::metrics::ConfusionMatrix;
use crate::scene::{mix_seed, DatasetSample, Split, TrackClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub validation_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Rate for the dropout layer of models built from this config.
    pub dropout_rate: f64,
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            steps_per_epoch: 20,
            validation_steps: 10,
            batch_size: 20,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            dropout_rate: 0.5,
            shuffle: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CnnError> {
        let bad = |m: &str| Err(CnnError::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.validation_steps == 0 {
            return bad("validation steps must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("adam epsilon must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout rate must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    /// Sets the step counts so one epoch covers each split once.
    pub fn with_steps_for(mut self, train_len: usize, valid_len: usize) -> Self {
        let b = self.batch_size.max(1);
        self.steps_per_epoch = train_len.div_ceil(b);
        self.validation_steps = valid_len.div_ceil(b).max(1);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Grayscale images scaled to `[0, 1]` with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<F> {
    dims: [usize; 3],
    pixels: Vec<F>,
    labels: Vec<TrackClass>,
}

impl<F: Scalar> Dataset<F> {
    pub fn from_images<'a>(
        items: impl IntoIterator<Item = (&'a GrayImage, TrackClass)>,
    ) -> Result<Self, CnnError> {
        let mut dims = None;
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for (img, class) in items {
            let d = [img.height() as usize, img.width() as usize, 1];
            if *dims.get_or_insert(d) != d {
                return Err(CnnError::Shape(format!("mixed image sizes in dataset: {d:?}")));
            }
            pixels.extend(img.as_raw().iter().map(|&v| F::from_f64_lossy(v as f64 / 255.0)));
            labels.push(class);
        }
        let dims = dims.ok_or(CnnError::EmptyDataset)?;
        Ok(Self { dims, pixels, labels })
    }

    pub fn from_samples(samples: &[DatasetSample]) -> Result<Self, CnnError> {
        Self::from_images(samples.iter().map(|s| (&s.image, s.class)))
    }

    /// Reads `root/<split>/{safe,defective}/*.png` in file-name order.
    pub fn load_split(root: &Path, split: Split) -> Result<Self, CnnError> {
        let mut images = Vec::new();
        for class in [TrackClass::Safe, TrackClass::Defective] {
            let dir = root.join(split.dir_name()).join(class.dir_name());
            let entries = fs::read_dir(&dir).map_err(|source| CnnError::Io { path: dir.clone(), source })?;
            let mut paths: Vec<_> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
                .collect();
            paths.sort();
            for path in paths {
                let img = image::open(&path)
                    .map_err(|e| CnnError::Image { path: path.clone(), detail: e.to_string() })?
                    .to_luma8();
                images.push((img, class));
            }
        }
        Self::from_images(images.iter().map(|(i, c)| (i, *c)))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn labels(&self) -> &[TrackClass] {
        &self.labels
    }

    /// Gathers the given items into an image batch and one-hot labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<F>, Tensor<F>) {
        let item = self.dims.iter().product::<usize>();
        let mut x = Vec::with_capacity(indices.len() * item);
        let mut y = Vec::with_capacity(indices.len() * 2);
        for &i in indices {
            x.extend_from_slice(&self.pixels[i * item..(i + 1) * item]);
            let class = self.labels[i].index();
            y.extend((0..2).map(|c| if c == class { F::one() } else { F::zero() }));
        }
        let [h, w, c] = self.dims;
        (
            Tensor::from_vec([indices.len(), h, w, c], x).expect("sized"),
            Tensor::matrix(indices.len(), 2, y).expect("sized"),
        )
    }
}

/// Endless batches over a dataset. When the data runs out the iterator
/// wraps around, reshuffling first if shuffling is on.
#[derive(Debug, Clone)]
pub struct BatchIterator<'a, F> {
    data: &'a Dataset<F>,
    order: Vec<usize>,
    pos: usize,
    shuffle: bool,
    rng: ChaCha8Rng,
}

impl<'a, F: Scalar> BatchIterator<'a, F> {
    pub fn new(data: &'a Dataset<F>, shuffle: bool, seed: u64) -> Self {
        let mut it = Self {
            data,
            order: (0..data.len()).collect(),
            pos: 0,
            shuffle,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        if shuffle {
            it.order.shuffle(&mut it.rng);
        }
        it
    }

    pub fn dataset(&self) -> &Dataset<F> {
        self.data
    }

    pub fn next_indices(&mut self, batch_size: usize) -> Result<Vec<usize>, CnnError> {
        if self.order.is_empty() {
            return Err(CnnError::EmptyDataset);
        }
        let mut out = Vec::with_capacity(batch_size);
        while out.len() < batch_size {
            if self.pos == self.order.len() {
                self.pos = 0;
                if self.shuffle {
                    self.order.shuffle(&mut self.rng);
                }
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        Ok(out)
    }

    pub fn next_batch(&mut self, batch_size: usize) -> Result<(Tensor<F>, Tensor<F>), CnnError> {
        let idx = self.next_indices(batch_size)?;
        Ok(self.data.batch(&idx))
    }
}

/// Argmax over `[safe, defective]`; an exact tie counts as defective.
pub fn class_of<F: Scalar>(probs: &[F]) -> TrackClass {
    if probs[1] >= probs[0] {
        TrackClass::Defective
    } else {
        TrackClass::Safe
    }
}

fn correct<F: Scalar>(probs: &Tensor<F>, labels: &Tensor<F>) -> usize {
    (0..probs.batch())
        .filter(|&r| class_of(probs.row(r)).index() == usize::from(labels.row(r)[1] == F::one()))
        .count()
}

fn to_f64<F: Scalar>(v: F) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// Runs `epochs x steps_per_epoch` Adam updates, validating after every
/// epoch. Frozen layers are never touched.
pub fn train<F: Scalar>(
    model: &mut Model<F>,
    train_iter: &mut BatchIterator<F>,
    valid_iter: &mut BatchIterator<F>,
    config: &TrainConfig,
) -> Result<History, CnnError> {
    config.validate()?;
    if train_iter.dataset().is_empty() || valid_iter.dataset().is_empty() {
        return Err(CnnError::EmptyDataset);
    }
    let hyper = config.adam();
    let mut states: Vec<Option<(AdamState<F>, AdamState<F>)>> = model
        .layers()
        .iter()
        .map(|l| match (&l.params, l.frozen) {
            (Some(p), false) => Some((AdamState::new(p.weights.len()), AdamState::new(p.bias.len()))),
            _ => None,
        })
        .collect();

    let mut history = History::default();
    let mut global_step = 0u64;
    for epoch in 1..=config.epochs {
        let (mut loss_sum, mut seen, mut hits) = (0.0, 0usize, 0usize);
        for step in 0..config.steps_per_epoch {
            let (x, y) = train_iter.next_batch(config.batch_size)?;
            let diverged = |detail: String| CnnError::Diverged { epoch, step, detail };
            let bp = model.backward(&x, &y, global_step).map_err(|e| diverged(e.to_string()))?;
            let loss = to_f64(bp.loss);
            if !loss.is_finite() {
                return Err(diverged(format!("loss {loss}")));
            }
            loss_sum += loss * x.batch() as f64;
            seen += x.batch();
            hits += correct(&bp.probabilities, &y);
            for (i, grads) in bp.gradients.iter().enumerate() {
                if let (Some(g), Some((ws, bs))) = (grads, states[i].as_mut()) {
                    let p = model.params_mut(i).expect("trainable layer has params");
                    adam_step(p.weights.data_mut(), g.weights.data(), ws, &hyper)?;
                    adam_step(&mut p.bias, &g.bias, bs, &hyper)?;
                }
            }
            global_step += 1;
        }

        let (mut vloss, mut vseen, mut vhits) = (0.0, 0usize, 0usize);
        for _ in 0..config.validation_steps {
            let (x, y) = valid_iter.next_batch(config.batch_size)?;
            let probs = model.forward(&x, Mode::Eval)?;
            vloss += to_f64(super::layers::cross_entropy(&probs, &y)?) * x.batch() as f64;
            vseen += x.batch();
            vhits += correct(&probs, &y);
        }
        let ratio = |a: f64, n: usize| if n == 0 { 0.0 } else { a / n as f64 };
        history.records.push(EpochRecord {
            epoch,
            train_loss: ratio(loss_sum, seen),
            train_acc: ratio(hits as f64, seen),
            val_loss: ratio(vloss, vseen),
            val_acc: ratio(vhits as f64, vseen),
        });
    }
    Ok(history)
}

/// Freezes the first `frozen_layers` layers, redraws every later layer from
/// `config.seed` and trains on the new data.
pub fn freeze_and_retrain<F: Scalar>(
    model: &mut Model<F>,
    frozen_layers: usize,
    train_iter: &mut BatchIterator<F>,
    valid_iter: &mut BatchIterator<F>,
    config: &TrainConfig,
) -> Result<History, CnnError> {
    model.freeze_first(frozen_layers)?;
    model.reinitialize_from(frozen_layers, config.seed);
    if model.trainable_param_count() == 0 {
        return Err(CnnError::Config(format!(
            "freezing {frozen_layers} layers leaves nothing to train"
        )));
    }
    train(model, train_iter, valid_iter, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: TrackClass,
    /// `[safe, defective]`.
    pub probabilities: [f64; 2],
}

pub fn predict<F: Scalar>(model: &Model<F>, image: &GrayImage) -> Result<Prediction, CnnError> {
    let dims = [image.height() as usize, image.width() as usize, 1];
    if dims != model.input_dims() {
        return Err(CnnError::Shape(format!(
            "image is {}x{}, model expects {:?}",
            image.width(),
            image.height(),
            model.input_dims()
        )));
    }
    let data = Dataset::<F>::from_images([(image, TrackClass::Safe)])?;
    let (x, _) = data.batch(&[0]);
    let probs = model.forward(&x, Mode::Eval)?;
    let p = [to_f64(probs.data()[0]), to_f64(probs.data()[1])];
    Ok(Prediction { class: class_of(probs.data()), probabilities: p })
}

/// Confusion over the whole dataset with `Defective` as the positive class.
pub fn evaluate<F: Scalar>(model: &Model<F>, data: &Dataset<F>, batch_size: usize) -> Result<ConfusionMatrix, CnnError> {
    if data.dims() != model.input_dims() {
        return Err(CnnError::Shape(format!(
            "dataset items are {:?}, model expects {:?}",
            data.dims(),
            model.input_dims()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(batch_size.max(1)) {
        let (x, _) = data.batch(chunk);
        let probs = model.forward(&x, Mode::Eval)?;
        for (r, &i) in chunk.iter().enumerate() {
            let predicted = class_of(probs.row(r)) == TrackClass::Defective;
            cm.record(data.labels()[i] == TrackClass::Defective, predicted);
        }
    }
    Ok(cm)
}

/// Seed for the shuffling iterator of a training run.
pub fn shuffle_seed(config: &TrainConfig) -> u64 {
    mix_seed(&[config.seed, 0x5348])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::model::custom_architecture;

    fn toy(n: usize, seed: u64) -> Dataset<f32> {
        // bright tracks are "defective", dark ones "safe"
        let images: Vec<(GrayImage, TrackClass)> = (0..n)
            .map(|i| {
                let bright = i % 2 == 1;
                let level = if bright { 170 + (i as u64 * 7 + seed) % 60 } else { 20 + (i as u64 * 11 + seed) % 60 };
                (GrayImage::from_pixel(12, 12, image::Luma([level as u8])), if bright { TrackClass::Defective } else { TrackClass::Safe })
            })
            .collect();
        Dataset::from_images(images.iter().map(|(i, c)| (i, *c))).unwrap()
    }

    fn toy_model(seed: u64, dropout: f64) -> Model<f32> {
        Model::new([12, 12, 1], &custom_architecture(&[4], 3, dropout), seed).unwrap()
    }

    fn config(epochs: usize, steps: usize) -> TrainConfig {
        TrainConfig { epochs, steps_per_epoch: steps, validation_steps: 2, batch_size: 10, learning_rate: 0.05, seed: 3, ..Default::default() }
    }

    #[test]
    fn iterator_wraps_and_reshuffles_deterministically() {
        let data = toy(5, 0);
        let mut a = BatchIterator::new(&data, true, 9);
        let mut b = BatchIterator::new(&data, true, 9);
        let first: Vec<usize> = a.next_indices(5).unwrap();
        let mut sorted = first.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
        assert_eq!(b.next_indices(5).unwrap(), first);
        assert_eq!(a.next_indices(7).unwrap(), b.next_indices(7).unwrap());
        let mut plain = BatchIterator::new(&data, false, 0);
        assert_eq!(plain.next_indices(7).unwrap(), vec![0, 1, 2, 3, 4, 0, 1]);
    }

    #[test]
    fn zero_steps_leave_parameters_unchanged() {
        let data = toy(20, 0);
        let mut m = toy_model(1, 0.0);
        let before = m.clone();
        let h = train(&mut m, &mut BatchIterator::new(&data, true, 1), &mut BatchIterator::new(&data, false, 0), &config(1, 0)).unwrap();
        assert_eq!(h.records.len(), 1);
        assert_eq!(h.records[0].train_loss, 0.0);
        assert_eq!(m, before);
    }

    #[test]
    fn bright_vs_dark_is_learned_within_five_epochs() {
        let train_data = toy(40, 0);
        let valid = toy(20, 5);
        let mut m = toy_model(2, 0.0);
        let h = train(&mut m, &mut BatchIterator::new(&train_data, true, 4), &mut BatchIterator::new(&valid, false, 0), &config(5, 4)).unwrap();
        assert_eq!(h.records.len(), 5);
        assert!(h.records.iter().any(|r| r.train_acc == 1.0), "{h:?}");
        assert!(h.records.iter().all(|r| (0.0..=1.0).contains(&r.train_acc) && (0.0..=1.0).contains(&r.val_acc)));
        let cm = evaluate(&m, &valid, 7).unwrap();
        assert_eq!(cm.total(), 20);
        assert_eq!((cm.fp, cm.fn_), (0, 0));
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy(30, 1);
        let run = || {
            let mut m = toy_model(4, 0.5);
            let h = train(&mut m, &mut BatchIterator::new(&data, true, 8), &mut BatchIterator::new(&data, false, 0), &config(3, 3)).unwrap();
            (m, h)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn frozen_parameters_stay_bit_identical() {
        let data = toy(30, 2);
        let mut m = toy_model(5, 0.0);
        let before = m.layers()[0].params.clone();
        let h = freeze_and_retrain(&mut m, 3, &mut BatchIterator::new(&data, true, 1), &mut BatchIterator::new(&data, false, 0), &config(3, 3)).unwrap();
        assert_eq!(h.records.len(), 3);
        assert_eq!(m.layers()[0].params, before);
        let head = m.layers().len() - 2;
        let fresh = toy_model(config(1, 1).seed, 0.0);
        assert_ne!(m.layers()[head].params, fresh.layers()[head].params, "head should have trained");
    }

    #[test]
    fn freezing_everything_is_rejected() {
        let data = toy(10, 0);
        let mut m = toy_model(5, 0.0);
        let n = m.layers().len();
        let mut it = BatchIterator::new(&data, true, 1);
        let mut v = BatchIterator::new(&data, false, 1);
        assert!(freeze_and_retrain(&mut m, n, &mut it, &mut v, &config(1, 1)).is_err());
        assert!(freeze_and_retrain(&mut m, n - 1, &mut it, &mut v, &config(1, 1)).is_err());
    }

    #[test]
    fn freeze_zero_matches_fresh_training() {
        let data = toy(20, 3);
        let cfg = config(2, 2);
        let mut a = toy_model(99, 0.0);
        freeze_and_retrain(&mut a, 0, &mut BatchIterator::new(&data, true, 1), &mut BatchIterator::new(&data, false, 0), &cfg).unwrap();
        let mut b = toy_model(cfg.seed, 0.0);
        // the model seed also drives dropout, absent here
        train(&mut b, &mut BatchIterator::new(&data, true, 1), &mut BatchIterator::new(&data, false, 0), &cfg).unwrap();
        assert_eq!(a.layers(), b.layers());
    }

    #[test]
    fn tie_is_defective_and_predict_checks_size() {
        assert_eq!(class_of(&[0.5f64, 0.5]), TrackClass::Defective);
        assert_eq!(class_of(&[0.6f64, 0.4]), TrackClass::Safe);
        let m = toy_model(1, 0.0);
        assert!(predict(&m, &GrayImage::new(10, 12)).is_err());
        let p = predict(&m, &GrayImage::new(12, 12)).unwrap();
        assert!((p.probabilities[0] + p.probabilities[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { dropout_rate: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig::default().with_steps_for(400, 200);
        assert_eq!((c.steps_per_epoch, c.validation_steps), (20, 10));
    }
}
