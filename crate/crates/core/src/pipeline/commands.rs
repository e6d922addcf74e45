use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, Stage};
use super::manifest::RunManifest;
use crate::codec::{
    compression_ratio, compression_spec, encodings_from_codebooks, load_packed, pack, read_layout, save_packed, LayerEncoding,
};
use crate::controller::{
    embed_model, full_plan, greedy_sequence, search_log_csv, searched_layers, train_controller, BitWidthSequence,
    ModelReward, PolicyModel, RolloutRecord,
};
use crate::error::{Error, Result};
use crate::net::{
    accuracy, encode_checkpoint, load_checkpoint, make_synthetic_dataset, mean_loss, save_checkpoint, train_sgd,
    DataSplits, NetworkModel,
};
use crate::quant::{metrics_csv, quantize_network, BitWidth};

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serialises");
    write_file(path, (text + "\n").as_bytes())
}

pub fn dataset(cfg: &PipelineConfig) -> Result<DataSplits> {
    make_synthetic_dataset(cfg.stage_seed(Stage::Data), &cfg.data)
}

fn fc_fixed(cfg: &PipelineConfig) -> Result<Option<BitWidth>> {
    cfg.controller.fc_fixed_bits.map(BitWidth::new).transpose()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    /// Not serialised so reports do not depend on the run directory.
    #[serde(skip)]
    pub checkpoint: PathBuf,
    pub train_accuracy: f64,
    pub eval_accuracy: f64,
    pub train_loss: f64,
}

/// Trains the float baseline and writes its checkpoint.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainSummary> {
    let start = Instant::now();
    let data = dataset(cfg)?;
    let mut model = NetworkModel::build(&cfg.data.input_shape, &cfg.model.layers, cfg.stage_seed(Stage::Init))?;
    train_sgd(&mut model, &data.train, &cfg.train, cfg.stage_seed(Stage::Train), None)?;
    let paths = &cfg.paths;
    write_file(&paths.checkpoint(), &encode_checkpoint(&model))?;
    let summary = TrainSummary {
        checkpoint: paths.checkpoint(),
        train_accuracy: accuracy(&model, &data.train)?,
        eval_accuracy: accuracy(&model, &data.eval)?,
        train_loss: mean_loss(&model, &data.train)?,
    };
    write_json(&paths.train_report(), &summary)?;
    RunManifest::record(
        &paths.manifest(),
        &cfg.hash(),
        "train",
        &[],
        &[&paths.checkpoint(), &paths.train_report()],
        start.elapsed().as_secs_f64(),
    )?;
    Ok(summary)
}

/// One quantizable layer of a bit-width plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEntry {
    pub layer: usize,
    pub bits: BitWidth,
    /// Chosen by the search (as opposed to fixed).
    pub searched: bool,
}

/// Bit-width plan as exchanged between `search` and `quantize`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceFile {
    /// Bit-widths of the searched layers, in order.
    pub sequence: BitWidthSequence,
    /// Every quantizable layer with its bit-width.
    pub layers: Vec<PlanEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<RolloutRecord>,
}

impl SequenceFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad sequence file {}: {e}", path.display())))
    }

    /// Bit-widths for `model`'s quantizable layers, checked against the file.
    pub fn plan_for(&self, model: &NetworkModel) -> Result<Vec<BitWidth>> {
        let layers: Vec<usize> = self.layers.iter().map(|e| e.layer).collect();
        if layers != model.quantizable_layers() {
            return Err(Error::Config(format!(
                "sequence file covers layers {layers:?}, model's quantizable layers are {:?}",
                model.quantizable_layers()
            )));
        }
        Ok(self.layers.iter().map(|e| e.bits).collect())
    }
}

fn plan_entries(model: &NetworkModel, plan: &[BitWidth], searched: &[usize]) -> Vec<PlanEntry> {
    model
        .quantizable_layers()
        .into_iter()
        .zip(plan)
        .map(|(layer, &bits)| PlanEntry {
            layer,
            bits,
            searched: searched.contains(&layer),
        })
        .collect()
}

/// The same bit-width for every quantizable layer.
pub fn uniform_plan(model: &NetworkModel, bits: BitWidth) -> SequenceFile {
    let layers = model.quantizable_layers();
    SequenceFile {
        sequence: BitWidthSequence::uniform(bits, layers.len()),
        layers: plan_entries(model, &vec![bits; layers.len()], &layers),
        record: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    /// Not serialised so reports do not depend on the run directory.
    #[serde(skip)]
    pub sequence_file: PathBuf,
    pub best: RolloutRecord,
    /// Most probable sequence under the final policy.
    pub greedy: BitWidthSequence,
    pub cached_sequences: usize,
}

/// Trains the bit-width controller and writes the best sequence found.
pub fn cmd_search(cfg: &PipelineConfig, checkpoint: &Path) -> Result<SearchSummary> {
    let start = Instant::now();
    let model = load_checkpoint(checkpoint)?;
    let data = dataset(cfg)?;
    let fixed = fc_fixed(cfg)?;
    let eval = data.eval.head(cfg.controller.reward.eval_samples);
    let source = ModelReward::new(model.clone(), eval, cfg.controller.reward.lambda, fixed)?;
    let embeddings = embed_model(&model, fixed.is_some())?;
    let mut policy = PolicyModel::new(cfg.controller.policy, embeddings, cfg.stage_seed(Stage::Policy));
    let outcome = train_controller(&mut policy, &source, &cfg.controller, cfg.stage_seed(Stage::Search))?;
    let greedy = BitWidthSequence::from_actions(&greedy_sequence(&policy))?;

    let plan = full_plan(&model, &outcome.best.sequence, fixed)?;
    let searched = searched_layers(&model, fixed.is_some());
    let file = SequenceFile {
        sequence: outcome.best.sequence.clone(),
        layers: plan_entries(&model, &plan, &searched),
        record: Some(outcome.best.clone()),
    };
    let paths = &cfg.paths;
    write_json(&paths.sequence(), &file)?;
    write_file(&paths.search_log(), search_log_csv(&outcome.history).as_bytes())?;
    RunManifest::record(
        &paths.manifest(),
        &cfg.hash(),
        "search",
        &[checkpoint],
        &[&paths.sequence(), &paths.search_log()],
        start.elapsed().as_secs_f64(),
    )?;
    Ok(SearchSummary {
        sequence_file: paths.sequence(),
        best: outcome.best,
        greedy,
        cached_sequences: source.cached_sequences(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizeSummary {
    /// Not serialised so reports do not depend on the run directory.
    #[serde(skip)]
    pub packed: PathBuf,
    /// Bits per layer; `None` for layers stored raw.
    pub bits: Vec<Option<u8>>,
    pub float_eval_accuracy: f64,
    pub eval_accuracy: f64,
    pub ratio: f64,
    pub file_bytes: usize,
    pub payload_bytes: usize,
}

/// Quantizes the float checkpoint to `plan` and writes the packed model.
pub fn cmd_quantize(cfg: &PipelineConfig, checkpoint: &Path, plan: &SequenceFile) -> Result<QuantizeSummary> {
    let start = Instant::now();
    let model = load_checkpoint(checkpoint)?;
    let bits = plan.plan_for(&model)?;
    let data = dataset(cfg)?;
    let outcome = quantize_network(&model, &bits, &data, &cfg.quantizer, cfg.stage_seed(Stage::Quantize))?;
    let encodings = if outcome.states.is_empty() {
        vec![LayerEncoding::Raw; outcome.model.layers().len()]
    } else {
        let codebooks: Vec<_> = outcome
            .states
            .iter()
            .map(|s| (s.bits, s.codebook.clone().expect("completed layers have a codebook")))
            .collect();
        encodings_from_codebooks(&outcome.model, &codebooks)?
    };
    let bytes = pack(&outcome.model, &encodings)?;
    let layout = read_layout(&bytes)?;
    let paths = &cfg.paths;
    write_file(&paths.packed(), &bytes)?;
    write_file(&paths.quant_metrics(), metrics_csv(&outcome.metrics).as_bytes())?;
    let summary = QuantizeSummary {
        packed: paths.packed(),
        bits: encodings.iter().map(|e| e.bits().map(|b| b.get())).collect(),
        float_eval_accuracy: accuracy(&model, &data.eval)?,
        eval_accuracy: accuracy(&outcome.model, &data.eval)?,
        ratio: compression_ratio(&compression_spec(&outcome.model, &encodings)?),
        file_bytes: bytes.len(),
        payload_bytes: layout.payload_bytes(),
    };
    write_json(&paths.quantize_report(), &summary)?;
    RunManifest::record(
        &paths.manifest(),
        &cfg.hash(),
        "quantize",
        &[checkpoint],
        &[&paths.packed(), &paths.quant_metrics(), &paths.quantize_report()],
        start.elapsed().as_secs_f64(),
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Not serialised so reports do not depend on the run directory.
    #[serde(skip)]
    pub packed: PathBuf,
    pub bits: Vec<Option<u8>>,
    pub accuracy: f64,
    pub ratio: f64,
}

/// Evaluates a packed model on the configured eval split.
pub fn cmd_eval(cfg: &PipelineConfig, packed: &Path) -> Result<EvalReport> {
    let start = Instant::now();
    let p = load_packed(packed)?;
    let data = dataset(cfg)?;
    let report = EvalReport {
        packed: packed.to_path_buf(),
        bits: p.encodings.iter().map(|e| e.bits().map(|b| b.get())).collect(),
        accuracy: accuracy(&p.model, &data.eval)?,
        ratio: compression_ratio(&p.compression_spec()?),
    };
    let paths = &cfg.paths;
    write_json(&paths.eval_report(), &report)?;
    RunManifest::record(
        &paths.manifest(),
        &cfg.hash(),
        "eval",
        &[packed],
        &[&paths.eval_report()],
        start.elapsed().as_secs_f64(),
    )?;
    Ok(report)
}

/// Per-layer byte budget of a packed file.
pub fn dump_layout(packed: &Path) -> Result<String> {
    Ok(read_layout(&std::fs::read(packed)?)?.to_string())
}

/// Writes the packed model back out as a float checkpoint holding the
/// dequantized weights.
pub fn cmd_export(cfg: &PipelineConfig, packed: &Path, out: &Path) -> Result<PathBuf> {
    let start = Instant::now();
    let p = load_packed(packed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_checkpoint(&p.model, out)?;
    RunManifest::record(
        &cfg.paths.manifest(),
        &cfg.hash(),
        "export",
        &[packed],
        &[out],
        start.elapsed().as_secs_f64(),
    )?;
    Ok(out.to_path_buf())
}

/// Saves raw bytes of a packed model (re-exported for callers that build
/// packed files themselves).
pub fn write_packed(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_packed(path, bytes)
}
