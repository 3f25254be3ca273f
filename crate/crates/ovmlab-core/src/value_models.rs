//! Outcome-supervised value models and process-supervised reward models.
//!
//! Training data is built by sampling complete paths from a generator policy
//! and labeling them: a single binary outcome per path (final-answer
//! correctness), optionally accompanied by rule-based per-step labels.
//!
//! Outcome training replicates the path label across every step prefix and
//! minimizes squared error. The tabular backend stores exact integer
//! `(label_sum, count)` accumulators per prefix key, so its value is the
//! sample mean of outcomes through that prefix (the closed-form minimizer),
//! and the fixed-point audit can compare ratios with integer arithmetic.
//! Process training is the identical optimization with per-step labels as
//! targets. The same outcome model scores complete paths when reranking.

use crate::env::{label_path, KeyMode, PartialPath, StepLabel, TaskInstance};
use crate::error::{CoreError, Result};
use crate::policy::{rollout, PolicySpec};
use crate::rng::{fnv64, RngStream};
use num_traits::Float;
use rand_chacha::rand_core::RngCore;
use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

// ---------------------------------------------------------------------------
// Training data
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    /// A complete path (answered, dead, or truncated).
    pub path: PartialPath,
    /// Final-answer correctness.
    pub outcome: bool,
    /// Per-step process labels, present when process supervision was
    /// requested at collection time.
    pub step_labels: Option<Vec<StepLabel>>,
}

impl TrainingSample {
    pub fn instance_id(&self) -> &str {
        self.path.instance_id()
    }
}

/// Sample `paths_per_question` complete paths per instance and label them.
/// Deterministic given the stream: sample `i` of instance `q` always draws
/// from the derived stream `q#i`.
pub fn build_training_set(
    instances: &[Arc<TaskInstance>],
    policy: &PolicySpec,
    paths_per_question: usize,
    max_steps: usize,
    with_step_labels: bool,
    stream: &RngStream,
) -> Result<Vec<TrainingSample>> {
    if paths_per_question == 0 {
        return Err(CoreError::InvalidConfig(
            "paths_per_question must be at least 1".into(),
        ));
    }
    let mut out = Vec::with_capacity(instances.len() * paths_per_question);
    for instance in instances {
        let root = PartialPath::empty(instance.clone());
        for i in 0..paths_per_question {
            let sub = stream.derive(&format!("{}#{}", instance.id(), i));
            let path = rollout(policy, &root, max_steps, &mut sub.rng());
            let outcome = path
                .verdict()
                .expect("rollout returns terminal paths")
                .correct;
            let step_labels = with_step_labels.then(|| label_path(&path));
            out.push(TrainingSample {
                path,
                outcome,
                step_labels,
            });
        }
    }
    Ok(out)
}

/// Replicate the outcome label across every step prefix of the sample.
pub fn expand_outcome_labels(sample: &TrainingSample, mode: KeyMode) -> Vec<(String, bool)> {
    sample
        .path
        .prefixes()
        .iter()
        .map(|p| (p.canonical_key(mode), sample.outcome))
        .collect()
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BackendConfig {
    Tabular,
    HashedLinear { dimension: usize },
}

/// Exact per-key accumulators: value(key) = label_sum / count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TabularTable {
    map: HashMap<String, (u64, u64)>,
}

impl TabularTable {
    pub fn add(&mut self, key: String, label: bool) {
        let entry = self.map.entry(key).or_insert((0, 0));
        entry.0 += label as u64;
        entry.1 += 1;
    }

    pub fn ratio(&self, key: &str) -> Option<(u64, u64)> {
        self.map.get(key).copied()
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        self.map.get(key).map(|(s, c)| *s as f64 / *c as f64)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Entries in key order.
    pub fn sorted_entries(&self) -> Vec<(&str, u64, u64)> {
        let mut entries: Vec<(&str, u64, u64)> = self
            .map
            .iter()
            .map(|(k, (s, c))| (k.as_str(), *s, *c))
            .collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        entries
    }
}

/// Linear scorer over hashed key features with a single bias, trained by
/// minibatch gradient descent on squared error. Scores clamp to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct HashedLinear<F: Float> {
    dimension: usize,
    weights: Vec<F>,
    bias: F,
}

pub type HashedLinearF64 = HashedLinear<f64>;

impl<F: Float> HashedLinear<F> {
    pub fn new(dimension: usize) -> Self {
        HashedLinear {
            dimension,
            weights: vec![F::zero(); dimension],
            bias: F::zero(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn weights(&self) -> &[F] {
        &self.weights
    }

    pub fn bias(&self) -> F {
        self.bias
    }

    pub fn set_parameters(&mut self, weights: Vec<F>, bias: F) {
        assert_eq!(weights.len(), self.dimension);
        self.weights = weights;
        self.bias = bias;
    }

    /// Sorted, deduplicated feature indices: one per key line (position
    /// tagged) and one per whitespace/comma token (position free, which is
    /// what lets distinct prefixes share evidence).
    pub fn features(&self, key: &str) -> Vec<usize> {
        let mut idx = Vec::new();
        for (i, line) in key.lines().enumerate() {
            idx.push(
                (fnv64(format!("L{i}\x1f{line}").as_bytes()) % self.dimension as u64) as usize,
            );
            for tok in line.split([' ', ',']).filter(|t| !t.is_empty()) {
                idx.push(
                    (fnv64(format!("T\x1f{tok}").as_bytes()) % self.dimension as u64) as usize,
                );
            }
        }
        idx.sort_unstable();
        idx.dedup();
        idx
    }

    pub fn raw_score(&self, features: &[usize]) -> F {
        let mut acc = self.bias;
        for &j in features {
            acc = acc + self.weights[j];
        }
        acc
    }

    /// Mean squared error over featurized data.
    pub fn mse_loss(&self, data: &[(Vec<usize>, F)]) -> F {
        if data.is_empty() {
            return F::zero();
        }
        let mut acc = F::zero();
        for (feats, y) in data {
            let err = self.raw_score(feats) - *y;
            acc = acc + err * err;
        }
        acc / F::from(data.len()).expect("usize fits in float")
    }

    /// Analytic gradient of [`Self::mse_loss`] with respect to every weight
    /// and the bias.
    pub fn gradient(&self, data: &[(Vec<usize>, F)]) -> (Vec<F>, F) {
        let mut grad_w = vec![F::zero(); self.dimension];
        let mut grad_b = F::zero();
        if data.is_empty() {
            return (grad_w, grad_b);
        }
        let n = F::from(data.len()).expect("usize fits in float");
        let two = F::from(2.0).expect("const");
        for (feats, y) in data {
            let err = self.raw_score(feats) - *y;
            let g = two * err / n;
            for &j in feats {
                grad_w[j] = grad_w[j] + g;
            }
            grad_b = grad_b + g;
        }
        (grad_w, grad_b)
    }
}

impl HashedLinear<f64> {
    fn fit(&mut self, pairs: &[(String, bool)], hyper: &TrainHyper) -> Vec<f64> {
        let data: Vec<(Vec<usize>, f64)> = pairs
            .iter()
            .map(|(k, y)| (self.features(k), *y as u8 as f64))
            .collect();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = RngStream::new(hyper.seed, "sgd").rng();
        let mut epoch_losses = Vec::with_capacity(hyper.epochs);
        for _ in 0..hyper.epochs {
            // Fisher-Yates on the visit order.
            for i in (1..order.len()).rev() {
                let j = (rng.next_u64() % (i as u64 + 1)) as usize;
                order.swap(i, j);
            }
            for batch in order.chunks(hyper.batch_size.max(1)) {
                let m = batch.len() as f64;
                let mut updates: Vec<(usize, f64)> = Vec::new();
                let mut bias_update = 0.0;
                for &i in batch {
                    let (feats, y) = &data[i];
                    let err = self.raw_score(feats) - y;
                    let g = 2.0 * err / m;
                    for &j in feats {
                        updates.push((j, g));
                    }
                    bias_update += g;
                }
                for (j, g) in updates {
                    self.weights[j] -= hyper.learning_rate * g;
                }
                self.bias -= hyper.learning_rate * bias_update;
            }
            epoch_losses.push(self.mse_loss(&data));
        }
        epoch_losses
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelBackend {
    Tabular(TabularTable),
    Linear(HashedLinear<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            epochs: 4,
            batch_size: 32,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

impl TrainHyper {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0
            || self.batch_size == 0
            || self.learning_rate.is_nan()
            || self.learning_rate <= 0.0
        {
            return Err(CoreError::InvalidConfig(
                "epochs, batch size and learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ModelCore {
    backend: ModelBackend,
    key_mode: KeyMode,
    fallback: f64,
}

impl ModelCore {
    fn new(config: BackendConfig, key_mode: KeyMode, fallback: f64) -> Self {
        let backend = match config {
            BackendConfig::Tabular => ModelBackend::Tabular(TabularTable::default()),
            BackendConfig::HashedLinear { dimension } => {
                ModelBackend::Linear(HashedLinear::new(dimension))
            }
        };
        ModelCore {
            backend,
            key_mode,
            fallback,
        }
    }

    fn score_key(&self, key: &str) -> f64 {
        match &self.backend {
            ModelBackend::Tabular(t) => t.value(key).unwrap_or(self.fallback),
            ModelBackend::Linear(l) => l.raw_score(&l.features(key)).clamp(0.0, 1.0),
        }
    }

    fn train_pairs(&mut self, pairs: &[(String, bool)], hyper: &TrainHyper) -> Result<Vec<f64>> {
        hyper.validate()?;
        match &mut self.backend {
            ModelBackend::Tabular(t) => {
                for (key, y) in pairs {
                    t.add(key.clone(), *y);
                }
                Ok(Vec::new())
            }
            ModelBackend::Linear(l) => Ok(l.fit(pairs, hyper)),
        }
    }
}

// ---------------------------------------------------------------------------
// Outcome value model (doubles as the outcome reward model on complete paths)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeValueModel {
    core: ModelCore,
    /// Mean training loss per epoch (linear backend only).
    pub epoch_losses: Vec<f64>,
}

impl OutcomeValueModel {
    pub fn new(config: BackendConfig, key_mode: KeyMode, fallback: f64) -> Self {
        OutcomeValueModel {
            core: ModelCore::new(config, key_mode, fallback),
            epoch_losses: Vec::new(),
        }
    }

    pub fn key_mode(&self) -> KeyMode {
        self.core.key_mode
    }

    pub fn fallback(&self) -> f64 {
        self.core.fallback
    }

    pub fn backend(&self) -> &ModelBackend {
        &self.core.backend
    }

    pub fn train(&mut self, samples: &[TrainingSample], hyper: &TrainHyper) -> Result<()> {
        if samples.is_empty() {
            return Err(CoreError::EmptyDataset);
        }
        let pairs: Vec<(String, bool)> = samples
            .iter()
            .flat_map(|s| expand_outcome_labels(s, self.core.key_mode))
            .collect();
        self.epoch_losses = self.core.train_pairs(&pairs, hyper)?;
        Ok(())
    }

    /// Value of a partial path (the empty prefix scores the bare question).
    pub fn score_prefix(&self, path: &PartialPath) -> f64 {
        self.core.score_key(&path.canonical_key(self.core.key_mode))
    }

    /// Verification score of a complete path; identical to the prefix score
    /// at the full path.
    pub fn score_complete(&self, path: &PartialPath) -> Result<f64> {
        if !path.is_terminal() {
            return Err(CoreError::IncompletePath);
        }
        Ok(self.score_prefix(path))
    }

    /// Exact accumulator for a key (tabular backend).
    pub fn exact_ratio(&self, key: &str) -> Option<(u64, u64)> {
        match &self.core.backend {
            ModelBackend::Tabular(t) => t.ratio(key),
            ModelBackend::Linear(_) => None,
        }
    }

    pub fn tabular(&self) -> Option<&TabularTable> {
        match &self.core.backend {
            ModelBackend::Tabular(t) => Some(t),
            ModelBackend::Linear(_) => None,
        }
    }

    pub fn linear(&self) -> Option<&HashedLinear<f64>> {
        match &self.core.backend {
            ModelBackend::Linear(l) => Some(l),
            ModelBackend::Tabular(_) => None,
        }
    }

    pub fn linear_mut(&mut self) -> Option<&mut HashedLinear<f64>> {
        match &mut self.core.backend {
            ModelBackend::Linear(l) => Some(l),
            ModelBackend::Tabular(_) => None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_model(&AnyModel::Outcome(self.clone()), path)
    }
}

// ---------------------------------------------------------------------------
// Process reward models
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrmVariant {
    /// Logical per-step correctness.
    Prm,
    /// Correct and on a feasible correct solution path.
    PrmO,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessRewardModel {
    core: ModelCore,
    pub variant: PrmVariant,
    pub epoch_losses: Vec<f64>,
}

impl ProcessRewardModel {
    pub fn new(
        variant: PrmVariant,
        config: BackendConfig,
        key_mode: KeyMode,
        fallback: f64,
    ) -> Self {
        ProcessRewardModel {
            core: ModelCore::new(config, key_mode, fallback),
            variant,
            epoch_losses: Vec::new(),
        }
    }

    pub fn key_mode(&self) -> KeyMode {
        self.core.key_mode
    }

    pub fn fallback(&self) -> f64 {
        self.core.fallback
    }

    pub fn train(&mut self, samples: &[TrainingSample], hyper: &TrainHyper) -> Result<()> {
        if samples.is_empty() {
            return Err(CoreError::EmptyDataset);
        }
        let mut pairs: Vec<(String, bool)> = Vec::new();
        for sample in samples {
            let labels = sample
                .step_labels
                .as_ref()
                .ok_or(CoreError::MissingStepLabels)?;
            for (prefix, label) in sample.path.prefixes().iter().zip(labels) {
                let y = match self.variant {
                    PrmVariant::Prm => label.prm,
                    PrmVariant::PrmO => label.prm_o,
                };
                pairs.push((prefix.canonical_key(self.core.key_mode), y));
            }
        }
        self.epoch_losses = self.core.train_pairs(&pairs, hyper)?;
        Ok(())
    }

    /// Reward of the newest step of the prefix.
    pub fn score_prefix(&self, path: &PartialPath) -> f64 {
        self.core.score_key(&path.canonical_key(self.core.key_mode))
    }

    /// Complete-path verification score: the minimum per-step reward. One
    /// broken step invalidates the whole path.
    pub fn score_complete(&self, path: &PartialPath) -> Result<f64> {
        if !path.is_terminal() {
            return Err(CoreError::IncompletePath);
        }
        let scores = path
            .prefixes()
            .iter()
            .map(|p| self.score_prefix(p))
            .fold(f64::INFINITY, f64::min);
        Ok(if scores.is_finite() {
            scores
        } else {
            self.core.fallback
        })
    }

    pub fn exact_ratio(&self, key: &str) -> Option<(u64, u64)> {
        match &self.core.backend {
            ModelBackend::Tabular(t) => t.ratio(key),
            ModelBackend::Linear(_) => None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_model(&AnyModel::Process(self.clone()), path)
    }
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Outcome(OutcomeValueModel),
    Process(ProcessRewardModel),
}

const MAGIC: &[u8; 4] = b"OVML";
const VERSION: u16 = 1;

/// Write to a sibling temporary file, then rename into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into())
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_model(model: &AnyModel, path: &Path) -> Result<()> {
    let bytes = encode_model(model);
    atomic_write(path, &bytes)
}

pub fn load_model(path: &Path) -> Result<AnyModel> {
    let bytes = std::fs::read(path)?;
    decode_model(&bytes)
}

fn encode_model(model: &AnyModel) -> Vec<u8> {
    let (core, target) = match model {
        AnyModel::Outcome(m) => (&m.core, 0u8),
        AnyModel::Process(m) => (
            &m.core,
            match m.variant {
                PrmVariant::Prm => 1u8,
                PrmVariant::PrmO => 2u8,
            },
        ),
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(target);
    out.push(match &core.backend {
        ModelBackend::Tabular(_) => 0,
        ModelBackend::Linear(_) => 1,
    });
    out.push(match core.key_mode {
        KeyMode::FullPrefix => 0,
        KeyMode::AbstractState => 1,
    });
    out.extend_from_slice(&core.fallback.to_le_bytes());
    match &core.backend {
        ModelBackend::Tabular(t) => {
            let entries = t.sorted_entries();
            out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
            for (key, sum, count) in entries {
                out.extend_from_slice(&(key.len() as u32).to_le_bytes());
                out.extend_from_slice(key.as_bytes());
                out.extend_from_slice(&sum.to_le_bytes());
                out.extend_from_slice(&count.to_le_bytes());
            }
        }
        ModelBackend::Linear(l) => {
            out.extend_from_slice(&(l.dimension() as u64).to_le_bytes());
            for w in l.weights() {
                out.extend_from_slice(&w.to_le_bytes());
            }
            out.extend_from_slice(&l.bias().to_le_bytes());
        }
    }
    let checksum = fnv64(&out);
    out.extend_from_slice(&checksum.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CoreError::CorruptFile("unexpected end of file".into()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode_model(bytes: &[u8]) -> Result<AnyModel> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(CoreError::CorruptFile("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    if fnv64(body) != stored {
        return Err(CoreError::CorruptFile("checksum mismatch".into()));
    }
    let mut r = Reader {
        bytes: body,
        pos: 0,
    };
    if r.take(4)? != MAGIC {
        return Err(CoreError::CorruptFile("bad magic bytes".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(CoreError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let target = r.u8()?;
    let backend_tag = r.u8()?;
    let key_mode = match r.u8()? {
        0 => KeyMode::FullPrefix,
        1 => KeyMode::AbstractState,
        other => {
            return Err(CoreError::CorruptFile(format!("bad key mode tag {other}")));
        }
    };
    let fallback = r.f64()?;
    let backend = match backend_tag {
        0 => {
            let n = r.u64()? as usize;
            let mut table = TabularTable::default();
            for _ in 0..n {
                let klen = r.u32()? as usize;
                let key = String::from_utf8(r.take(klen)?.to_vec())
                    .map_err(|_| CoreError::CorruptFile("non-utf8 key".into()))?;
                let sum = r.u64()?;
                let count = r.u64()?;
                if count == 0 || sum > count {
                    return Err(CoreError::CorruptFile(format!(
                        "invalid accumulator for key {key}"
                    )));
                }
                table.map.insert(key, (sum, count));
            }
            ModelBackend::Tabular(table)
        }
        1 => {
            let dim = r.u64()? as usize;
            let mut linear = HashedLinear::new(dim);
            let mut weights = Vec::with_capacity(dim);
            for _ in 0..dim {
                weights.push(r.f64()?);
            }
            let bias = r.f64()?;
            linear.set_parameters(weights, bias);
            ModelBackend::Linear(linear)
        }
        other => {
            return Err(CoreError::CorruptFile(format!("bad backend tag {other}")));
        }
    };
    if r.pos != body.len() {
        return Err(CoreError::CorruptFile("trailing bytes".into()));
    }
    let core = ModelCore {
        backend,
        key_mode,
        fallback,
    };
    match target {
        0 => Ok(AnyModel::Outcome(OutcomeValueModel {
            core,
            epoch_losses: Vec::new(),
        })),
        1 | 2 => Ok(AnyModel::Process(ProcessRewardModel {
            core,
            variant: if target == 1 {
                PrmVariant::Prm
            } else {
                PrmVariant::PrmO
            },
            epoch_losses: Vec::new(),
        })),
        other => Err(CoreError::CorruptFile(format!("bad target tag {other}"))),
    }
}

pub mod dataset;
