//! Pretraining, the online wake phase, the noisy sleep phase and the baseline
//! strategies.

mod config;

use std::cell::OnceCell;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use config::{ReplayConfig, StrategyKind};

use crate::data::{split_class_incremental, LabeledDataset, TaskStream};
use crate::error::{Error, Result};
use crate::metrics::{predict_latents, recency_bias, Evaluation, MetricsReport, TIE_BREAK};
use crate::network::{Inputs, Model, NetworkSpec};
use crate::optim::Optimizer;
use crate::replay::{pack_batch, unpack_batch, BitPackedSample, ReplayBuffer, Reservoir};
use crate::rng::{stream, SeededRng, Stream};
use crate::tensor::Tensor;
use crate::train::{train_step, LossWeights, MixedBatch, Part, StepLoss};

/// Trains the whole network on `data` for `cfg.pretrain_epochs` epochs and
/// then freezes the extractor. Returns the mean loss of every epoch.
pub fn pretrain(
    model: &mut Model,
    data: &LabeledDataset,
    cfg: &ReplayConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if let Some(c) = (0..model.spec.num_classes)
        .find(|&c| c >= data.class_count() || data.class_indices(c).is_empty())
    {
        return Err(Error::Dataset(format!(
            "pretraining set has no sample of class {c}"
        )));
    }
    model.params.unfreeze_all();
    let mut optimizer = cfg.pretrain_optimizer.build();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(cfg.pretrain_epochs);
    for _ in 0..cfg.pretrain_epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.pretrain_batch) {
            let x = data.batch(chunk, cfg.steps)?;
            let y = data.labels_of(chunk);
            let loss = train_step(
                model,
                &mut optimizer,
                current_only(Inputs::Raw(&x), &y),
                LossWeights::default(),
                rng,
            )?;
            sum += loss.total * chunk.len() as f64;
        }
        losses.push(sum / data.len().max(1) as f64);
    }
    model.freeze_extractor();
    Ok(losses)
}

fn current_only<'a>(inputs: Inputs<'a>, labels: &'a [usize]) -> MixedBatch<'a> {
    MixedBatch {
        current: Some(Part { inputs, labels }),
        replay: None,
    }
}

/// Random sources consumed by the wake phase.
pub struct WakeRngs {
    /// Replay sampling.
    pub sample: SeededRng,
    /// Dropout masks.
    pub train: SeededRng,
}

impl WakeRngs {
    pub fn new(seed: u64) -> Self {
        Self {
            sample: stream(seed, Stream::Sample),
            train: stream(seed, Stream::Train),
        }
    }
}

/// One online step on raw inputs `[T, N, ...]`: extracts latents with the
/// frozen extractor, offers them to the buffer, then trains the classifier on
/// the current latents plus `B_replay` sampled entries.
pub fn wake_step(
    model: &mut Model,
    optimizer: &mut Optimizer,
    inputs: &Tensor,
    labels: &[usize],
    buffer: &mut ReplayBuffer,
    cfg: &ReplayConfig,
    rngs: &mut WakeRngs,
) -> Result<StepLoss> {
    let z = model.extract(inputs)?;
    let packed = pack_batch(&z, labels)?;
    wake_step_packed(model, optimizer, &packed, buffer, cfg, rngs)
}

/// [`wake_step`] on latents that were already extracted and packed.
pub fn wake_step_packed(
    model: &mut Model,
    optimizer: &mut Optimizer,
    current: &[BitPackedSample],
    buffer: &mut ReplayBuffer,
    cfg: &ReplayConfig,
    rngs: &mut WakeRngs,
) -> Result<StepLoss> {
    if model.params.frozen[..model.spec.split].iter().any(|f| !f) {
        return Err(Error::Config("wake phase needs a frozen extractor".into()));
    }
    let (z, labels) = unpack_batch(current)?;
    for s in current {
        buffer.offer_packed(s.clone());
    }
    let replay = if cfg.lambda > 0.0 && cfg.batch_replay > 0 && !buffer.is_empty() {
        Some(buffer.sample_batch(cfg.batch_replay, &mut rngs.sample)?)
    } else {
        None
    };
    let batch = MixedBatch {
        current: Some(Part {
            inputs: Inputs::Latent(&z),
            labels: &labels,
        }),
        replay: replay.as_ref().map(|(x, y)| Part {
            inputs: Inputs::Latent(x),
            labels: y,
        }),
    };
    let weights = LossWeights {
        current: 1.0,
        replay: cfg.lambda,
    };
    train_step(model, optimizer, batch, weights, &mut rngs.train)
}

/// Consolidates the classifier on buffer contents only. Each of the
/// `sleep_epochs` epochs visits the buffer once in shuffled mini-batches of
/// `batch_replay`, with i.i.d. `N(0, noise_sigma^2)` noise added to every latent
/// element. Uses a fresh optimizer. Returns the mean loss of every epoch.
pub fn sleep_phase(
    model: &mut Model,
    buffer: &ReplayBuffer,
    cfg: &ReplayConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if buffer.is_empty() {
        log::warn!("sleep phase skipped: replay buffer is empty");
        return Ok(Vec::new());
    }
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut optimizer = cfg.sleep_optimizer.build();
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    let mut losses = Vec::with_capacity(cfg.sleep_epochs);
    for _ in 0..cfg.sleep_epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_replay) {
            let (mut z, y) = buffer.gather(chunk)?;
            if cfg.noise_sigma > 0.0 {
                for v in z.data_mut() {
                    *v += noise.sample(rng);
                }
            }
            let loss = train_step(
                model,
                &mut optimizer,
                current_only(Inputs::Latent(&z), &y),
                LossWeights::default(),
                rng,
            )?;
            sum += loss.total * chunk.len() as f64;
        }
        losses.push(sum / buffer.len() as f64);
    }
    Ok(losses)
}

/// Data and splits of one experiment.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub classes_per_task: usize,
}

/// Product of one strategy run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: MetricsReport,
    pub model: Model,
    /// Latent buffer of latent strategies.
    pub buffer: Option<ReplayBuffer>,
}

/// State after the wake phase, shared by wake-only latent replay and every
/// sleep variant.
#[derive(Clone, Debug)]
pub struct WakeOutcome {
    pub model: Model,
    pub buffer: ReplayBuffer,
    pub losses: Vec<StepLoss>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub sigma: f64,
    pub faa: f64,
    pub recency_bias: f64,
    pub buffer_payload_bytes: u64,
    pub report: MetricsReport,
}

fn check_data(spec: &NetworkSpec, data: &ExperimentData) -> Result<()> {
    let classes = spec.num_classes;
    if data.train.class_count() != classes || data.test.class_count() != classes {
        return Err(Error::Config(format!(
            "network has {classes} classes, data has {} (train) and {} (test)",
            data.train.class_count(),
            data.test.class_count()
        )));
    }
    if data.test.is_empty() {
        return Err(Error::Dataset("empty test set".into()));
    }
    Ok(())
}

struct LatentCache {
    stream: Vec<Vec<BitPackedSample>>,
    test: Tensor,
    seconds: f64,
}

/// One seed of an experiment: the task stream, the pretrained model and lazily
/// computed latents, shared by all strategies.
pub struct Session<'a> {
    pub cfg: ReplayConfig,
    pub data: &'a ExperimentData,
    pub stream: TaskStream,
    /// Pretrained extractor (frozen) with a freshly initialised classifier.
    pub pretrained: Model,
    pub pretrain_losses: Vec<f64>,
    pub pretrain_seconds: f64,
    cache: OnceCell<LatentCache>,
}

impl<'a> Session<'a> {
    /// Builds the stream, initialises the network from `Stream::Init` and
    /// pretrains it on `pretrain_fraction` of every class.
    pub fn prepare(cfg: ReplayConfig, spec: NetworkSpec, data: &'a ExperimentData) -> Result<Self> {
        cfg.validate()?;
        check_data(&spec, data)?;
        let mut model = Model::new(spec, &mut stream(cfg.seed, Stream::Init))?;
        let mut data_rng = stream(cfg.seed, Stream::Data);
        let task_stream = Self::build_stream(&cfg, data, &mut data_rng)?;
        let subset = data
            .train
            .per_class_fraction(cfg.pretrain_fraction, &mut data_rng)?;
        let pre = data.train.select(&subset);
        let start = Instant::now();
        let losses = pretrain(&mut model, &pre, &cfg, &mut stream(cfg.seed, Stream::Train))?;
        let mut s = Self::from_pretrained(cfg, model, data)?;
        s.stream = task_stream;
        s.pretrain_losses = losses;
        s.pretrain_seconds = start.elapsed().as_secs_f64();
        Ok(s)
    }

    /// Starts from an already pretrained network. The classifier is drawn
    /// afresh from `Stream::Head`, so the continual phase learns the classes
    /// one task at a time on top of the pretrained extractor.
    pub fn from_pretrained(
        cfg: ReplayConfig,
        mut model: Model,
        data: &'a ExperimentData,
    ) -> Result<Self> {
        cfg.validate()?;
        check_data(&model.spec, data)?;
        let head = model.spec.split..model.spec.layers.len();
        model
            .params
            .reinit_range(&model.spec, head, &mut stream(cfg.seed, Stream::Head))?;
        model.freeze_extractor();
        let stream = Self::build_stream(&cfg, data, &mut stream(cfg.seed, Stream::Data))?;
        Ok(Self {
            cfg,
            data,
            stream,
            pretrained: model,
            pretrain_losses: Vec::new(),
            pretrain_seconds: 0.0,
            cache: OnceCell::new(),
        })
    }

    fn build_stream(
        cfg: &ReplayConfig,
        data: &ExperimentData,
        rng: &mut SeededRng,
    ) -> Result<TaskStream> {
        let s =
            split_class_incremental(&data.train, data.classes_per_task, cfg.batch_current, rng)?;
        if s.is_empty() {
            return Err(Error::Dataset("empty task stream".into()));
        }
        Ok(s)
    }

    fn latents(&self) -> Result<&LatentCache> {
        if let Some(c) = self.cache.get() {
            return Ok(c);
        }
        let start = Instant::now();
        let model = &self.pretrained;
        let mut stream_latents = Vec::with_capacity(self.stream.len());
        for b in &self.stream.batches {
            let x = self.data.train.batch(&b.indices, self.cfg.steps)?;
            stream_latents.push(pack_batch(&model.extract(&x)?, &b.labels)?);
        }
        let test = &self.data.test;
        let mut packed = Vec::with_capacity(test.len());
        let all: Vec<usize> = (0..test.len()).collect();
        for chunk in all.chunks(self.cfg.eval_batch) {
            let x = test.batch(chunk, self.cfg.steps)?;
            packed.extend(pack_batch(&model.extract(&x)?, &test.labels_of(chunk))?);
        }
        let (test, _) = unpack_batch(&packed)?;
        let cache = LatentCache {
            stream: stream_latents,
            test,
            seconds: start.elapsed().as_secs_f64(),
        };
        Ok(self.cache.get_or_init(|| cache))
    }

    /// Runs one strategy from the pretrained state.
    pub fn run(&self, strategy: StrategyKind) -> Result<RunOutcome> {
        match strategy {
            StrategyKind::LatentReplay => {
                let wake = self.wake()?;
                let eval = self.evaluate_latent(&wake.model)?;
                let report =
                    self.report(strategy, &self.cfg, eval, Some(&wake.buffer), wake.seconds);
                Ok(RunOutcome {
                    report,
                    model: wake.model,
                    buffer: Some(wake.buffer),
                })
            }
            StrategyKind::Seslr => {
                let wake = self.wake()?;
                self.sleep_from(&wake, self.cfg.noise_sigma)
            }
            _ => self.run_whole_network(strategy),
        }
    }

    /// Wake phase of latent replay over the whole stream.
    pub fn wake(&self) -> Result<WakeOutcome> {
        let cache = self.latents()?;
        let start = Instant::now();
        let mut model = self.pretrained.clone();
        let mut optimizer = self.cfg.continual_optimizer.build();
        let mut buffer = ReplayBuffer::new(self.cfg.capacity, self.cfg.seed);
        let mut rngs = WakeRngs::new(self.cfg.seed);
        let mut losses = Vec::with_capacity(cache.stream.len());
        for current in &cache.stream {
            losses.push(wake_step_packed(
                &mut model,
                &mut optimizer,
                current,
                &mut buffer,
                &self.cfg,
                &mut rngs,
            )?);
        }
        Ok(WakeOutcome {
            model,
            buffer,
            losses,
            seconds: cache.seconds + start.elapsed().as_secs_f64(),
        })
    }

    /// Sleep phase at noise level `sigma` from a finished wake phase.
    pub fn sleep_from(&self, wake: &WakeOutcome, sigma: f64) -> Result<RunOutcome> {
        let start = Instant::now();
        let cfg = ReplayConfig {
            noise_sigma: sigma,
            ..self.cfg.clone()
        };
        let mut model = wake.model.clone();
        let mut rng = stream(cfg.seed, Stream::Sleep);
        sleep_phase(&mut model, &wake.buffer, &cfg, &mut rng)?;
        let eval = self.evaluate_latent(&model)?;
        let seconds = wake.seconds + start.elapsed().as_secs_f64();
        let report = self.report(StrategyKind::Seslr, &cfg, eval, Some(&wake.buffer), seconds);
        Ok(RunOutcome {
            report,
            model,
            buffer: Some(wake.buffer.clone()),
        })
    }

    /// SESLR at every noise level, sharing pretraining, seed and wake phase.
    pub fn noise_sweep(&self, sigmas: &[f64]) -> Result<Vec<SweepRow>> {
        if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("noise level {s} must be >= 0")));
        }
        let wake = self.wake()?;
        sigmas
            .iter()
            .map(|&sigma| {
                let out = self.sleep_from(&wake, sigma)?;
                Ok(SweepRow {
                    sigma,
                    faa: out.report.faa,
                    recency_bias: out.report.recency_bias,
                    buffer_payload_bytes: out.report.buffer_payload_bytes,
                    report: out.report,
                })
            })
            .collect()
    }

    fn run_whole_network(&self, strategy: StrategyKind) -> Result<RunOutcome> {
        let start = Instant::now();
        let cfg = &self.cfg;
        let train = &self.data.train;
        let mut model = self.pretrained.clone();
        model.params.unfreeze_all();
        let mut optimizer = cfg.continual_optimizer.build();
        let mut rng = stream(cfg.seed, Stream::Train);
        let mut raw: Reservoir<(Tensor, usize)> =
            Reservoir::new(cfg.capacity, stream(cfg.seed, Stream::Reservoir));
        let mut sample_rng = stream(cfg.seed, Stream::Sample);
        let batches: Vec<Vec<usize>> = match strategy {
            StrategyKind::Joint => {
                let mut all: Vec<usize> = self.stream.indices().collect();
                all.shuffle(&mut rng);
                all.chunks(cfg.batch_current)
                    .map(<[usize]>::to_vec)
                    .collect()
            }
            _ => self
                .stream
                .batches
                .iter()
                .map(|b| b.indices.clone())
                .collect(),
        };
        for idx in &batches {
            let x = train.batch(idx, cfg.steps)?;
            let y = train.labels_of(idx);
            let mut replay = None;
            if strategy == StrategyKind::ErRaw {
                for &i in idx {
                    raw.offer((train.sample(i).clone(), train.labels()[i]));
                }
                if cfg.lambda > 0.0 && cfg.batch_replay > 0 && !raw.is_empty() {
                    let picks = raw.sample_indices(cfg.batch_replay, &mut sample_rng);
                    let items: Vec<&Tensor> = picks.iter().map(|&p| &raw.entries()[p].0).collect();
                    let labels: Vec<usize> = picks.iter().map(|&p| raw.entries()[p].1).collect();
                    let stacked = Tensor::stack(&items)?;
                    let xr = if train.is_sequence() {
                        stacked.swap_leading_axes()
                    } else {
                        crate::data::replicate_temporal(&stacked, cfg.steps)?
                    };
                    replay = Some((xr, labels));
                }
            }
            let batch = MixedBatch {
                current: Some(Part {
                    inputs: Inputs::Raw(&x),
                    labels: &y,
                }),
                replay: replay.as_ref().map(|(x, y)| Part {
                    inputs: Inputs::Raw(x),
                    labels: y,
                }),
            };
            let weights = LossWeights {
                current: 1.0,
                replay: cfg.lambda,
            };
            train_step(&mut model, &mut optimizer, batch, weights, &mut rng)?;
        }
        let preds = crate::metrics::predict(&model, &self.data.test, cfg.steps, cfg.eval_batch)?;
        let eval =
            Evaluation::from_predictions(self.data.test.labels(), &preds, model.spec.num_classes)?;
        let mut report = self.report(strategy, cfg, eval, None, start.elapsed().as_secs_f64());
        if strategy == StrategyKind::ErRaw {
            // Full-precision storage: 32 bits per raw input element.
            let elements: usize = raw.entries().iter().map(|(t, _)| t.len()).sum();
            report.buffer_entries = raw.len() as u64;
            report.buffer_payload_bytes = elements as u64 * 4;
        }
        Ok(RunOutcome {
            report,
            model,
            buffer: None,
        })
    }

    fn evaluate_latent(&self, model: &Model) -> Result<Evaluation> {
        let cache = self.latents()?;
        let preds = predict_latents(model, &cache.test, self.cfg.eval_batch)?;
        Evaluation::from_predictions(self.data.test.labels(), &preds, model.spec.num_classes)
    }

    fn report(
        &self,
        strategy: StrategyKind,
        cfg: &ReplayConfig,
        eval: Evaluation,
        buffer: Option<&ReplayBuffer>,
        seconds: f64,
    ) -> MetricsReport {
        let last = self.stream.last_task_classes().to_vec();
        MetricsReport {
            strategy: strategy.name().to_string(),
            seed: cfg.seed,
            faa: eval.faa,
            class_mean_accuracy: eval.class_mean_accuracy,
            last_task_accuracy: eval.accuracy_on(&last),
            recency_bias: recency_bias(&eval, &last),
            per_class_accuracy: eval.per_class_accuracy,
            confusion: eval.confusion,
            predicted_class_distribution: eval.predicted_class_distribution,
            last_task_classes: last,
            buffer_entries: buffer.map_or(0, |b| b.len() as u64),
            buffer_payload_bytes: buffer.map_or(0, |b| b.memory_footprint() as u64),
            buffer_header_bytes: buffer.map_or(0, |b| b.header_footprint() as u64),
            test_count: eval.test_count,
            tie_break: TIE_BREAK.to_string(),
            config: cfg.echo(),
            wallclock_seconds: seconds + self.pretrain_seconds,
        }
    }
}

/// Pretrains and runs a single strategy.
pub fn run_experiment(
    cfg: ReplayConfig,
    strategy: StrategyKind,
    spec: NetworkSpec,
    data: &ExperimentData,
) -> Result<RunOutcome> {
    Session::prepare(cfg, spec, data)?.run(strategy)
}

/// Pretrains once and runs SESLR at every noise level.
pub fn noise_sweep(
    cfg: ReplayConfig,
    spec: NetworkSpec,
    data: &ExperimentData,
    sigmas: &[f64],
) -> Result<Vec<SweepRow>> {
    Session::prepare(cfg, spec, data)?.noise_sweep(sigmas)
}
