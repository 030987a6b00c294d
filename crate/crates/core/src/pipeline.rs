//! End-to-end runs driven by one TOML config, with content-hash caching of
//! every stage and a manifest of what was produced.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agreement::{bootstrap_ci, pairs_to_tsv, pairwise_list_agreement, BootstrapCI, Statistic};
use crate::data::{align_vocabularies, fmt_real, load_counts, load_ratings, write_string, AcceptabilityMatrix, ColumnMap, CountsTable, FeatureMatrix, VerbMap};
use crate::eval::{align_targets, nested_cv, CVReport, CvConfig};
use crate::factor::{assemble_features, default_base, load_sentence_features, glove_fit, lda_fit, lfa_fit, AssemblyMode, FactorModel, FactorOutput, GloveConfig, LdaConfig, LfaConfig};
use crate::freq::{grid, FreqConfig, FreqModel, Representation};
use crate::normalize::{acceptability_matrix, fit_ordinal_model, participant_quality, FitConfig};
use crate::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub ratings: Option<PathBuf>,
    /// Precomputed acceptabilities, used when no ratings are given.
    pub acceptability: Option<PathBuf>,
    pub counts: Option<PathBuf>,
    pub verb_map: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    /// Sentence-level feature files evaluated as they are.
    pub features: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub agreement: u64,
    pub factor: u64,
    pub cv: u64,
    pub summary: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grids {
    pub smoothing: Vec<f64>,
    pub k: Vec<usize>,
    pub alpha: Vec<f64>,
}

impl Default for Grids {
    fn default() -> Self {
        Grids {
            smoothing: crate::freq::DEFAULT_GRID.to_vec(),
            k: crate::factor::DEFAULT_K_GRID.to_vec(),
            alpha: crate::eval::DEFAULT_ALPHA_GRID.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Uniform,
    /// Weight participants by agreement-based quality scores.
    #[default]
    Auto,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizeSection {
    pub weighting: Weighting,
    pub fit: FitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgreementSection {
    pub replicates: usize,
    pub level: f64,
}

impl Default for AgreementSection {
    fn default() -> Self {
        AgreementSection {
            replicates: 999,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FreqSection {
    pub models: Vec<FreqModel>,
    pub config: FreqConfig,
}

impl Default for FreqSection {
    fn default() -> Self {
        FreqSection {
            models: vec![FreqModel::Dc, FreqModel::Bnb, FreqModel::Pmi, FreqModel::G],
            config: FreqConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorSection {
    pub models: Vec<FactorModel>,
    pub assembly: AssemblyMode,
    /// Concatenate the paired direct representation (LDA, LFA only).
    pub with_base: bool,
    pub lda: LdaConfig,
    pub lfa: LfaConfig,
    pub glove: GloveConfig,
}

impl Default for FactorSection {
    fn default() -> Self {
        FactorSection {
            models: vec![FactorModel::Lda, FactorModel::Lfa, FactorModel::Glove],
            assembly: AssemblyMode::Reconstruction,
            with_base: true,
            lda: LdaConfig::default(),
            lfa: LfaConfig::default(),
            glove: GloveConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub outer: usize,
    pub inner: usize,
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection { outer: 10, inner: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stages {
    pub agreement: bool,
    pub normalize: bool,
    pub freq: bool,
    pub factor: bool,
    pub evaluate: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Stages {
            agreement: true,
            normalize: true,
            freq: true,
            factor: true,
            evaluate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub paths: Paths,
    pub columns: ColumnMap,
    pub lenient: bool,
    pub seeds: Seeds,
    pub grids: Grids,
    pub stages: Stages,
    pub normalize: NormalizeSection,
    pub agreement: AgreementSection,
    pub freq: FreqSection,
    pub factor: FactorSection,
    pub cv: CvSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            output_dir: PathBuf::from("lexsel-out"),
            paths: Paths::default(),
            columns: ColumnMap::default(),
            lenient: false,
            seeds: Seeds::default(),
            grids: Grids::default(),
            stages: Stages::default(),
            normalize: NormalizeSection::default(),
            agreement: AgreementSection::default(),
            freq: FreqSection::default(),
            factor: FactorSection::default(),
            cv: CvSection::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses a config; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.output_dir);
        for p in [
            &mut cfg.paths.ratings,
            &mut cfg.paths.acceptability,
            &mut cfg.paths.counts,
            &mut cfg.paths.verb_map,
            &mut cfg.paths.templates,
            &mut cfg.paths.lexicon,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        cfg.paths.features.iter_mut().for_each(fix);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Full replication settings over a directory holding `ratings.tsv`
    /// (acceptability judgments) and `counts.tsv` (verb × frame counts).
    pub fn replication(data_dir: &Path, output_dir: &Path) -> Self {
        PipelineConfig {
            output_dir: output_dir.to_path_buf(),
            paths: Paths {
                ratings: Some(data_dir.join("ratings.tsv")),
                counts: Some(data_dir.join("counts.tsv")),
                ..Paths::default()
            },
            ..PipelineConfig::default()
        }
    }

    /// Checks paths and grids before anything runs.
    pub fn validate(&self) -> Result<()> {
        let must_exist = |what: &str, p: &Option<PathBuf>| match p {
            Some(p) if !p.exists() => Err(Error::Config(format!("{what} path {} does not exist", p.display()))),
            _ => Ok(()),
        };
        must_exist("ratings", &self.paths.ratings)?;
        must_exist("acceptability", &self.paths.acceptability)?;
        must_exist("counts", &self.paths.counts)?;
        must_exist("verb map", &self.paths.verb_map)?;
        must_exist("templates", &self.paths.templates)?;
        must_exist("lexicon", &self.paths.lexicon)?;
        for f in &self.paths.features {
            if !f.exists() {
                return Err(Error::Config(format!("features path {} does not exist", f.display())));
            }
        }
        if (self.stages.freq || self.stages.factor) && self.paths.counts.is_none() {
            return Err(Error::Config("count models requested but no counts path given".into()));
        }
        if (self.stages.agreement || self.stages.normalize) && self.paths.ratings.is_none() && self.paths.acceptability.is_none() {
            return Err(Error::Config("no ratings or acceptability path given".into()));
        }
        if self.stages.evaluate && self.paths.ratings.is_none() && self.paths.acceptability.is_none() {
            return Err(Error::Config("evaluation needs ratings or acceptabilities".into()));
        }
        if self.grids.smoothing.is_empty() || self.grids.k.is_empty() || self.grids.alpha.is_empty() {
            return Err(Error::Config("every grid must be nonempty".into()));
        }
        if self.grids.smoothing.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config("smoothing values must be finite and >= 0".into()));
        }
        if self.grids.k.contains(&0) {
            return Err(Error::Config("K values must be >= 1".into()));
        }
        if self.grids.alpha.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config("ridge penalties must be finite and >= 0".into()));
        }
        self.normalize.fit.validate()
    }
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// Hash of the stage's settings and input contents.
    pub key: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub skipped: bool,
    pub started: u64,
    pub finished: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tool_version: String,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

struct Runner {
    out: PathBuf,
    previous: Option<RunManifest>,
    records: Vec<StageRecord>,
}

impl Runner {
    /// Runs `body` unless an identical earlier run left intact outputs.
    /// Output paths are relative to the output directory.
    fn stage<F>(&mut self, name: &str, params: &impl Serialize, inputs: &[PathBuf], body: F) -> Result<()>
    where
        F: FnOnce(&Path) -> Result<Vec<PathBuf>>,
    {
        let wrap = |e: Error, artifact: &Path| Error::Stage {
            stage: name.to_string(),
            artifact: artifact.to_path_buf(),
            source: Box::new(e),
        };
        let mut input_hashes = BTreeMap::new();
        let mut contents = Vec::with_capacity(inputs.len());
        for p in inputs {
            let h = hash_file(p).map_err(|e| wrap(e, p))?;
            contents.push(h.clone());
            input_hashes.insert(p.display().to_string(), h);
        }
        // keyed on content only, so moving the data does not invalidate it
        let params = serde_json::to_string(params).map_err(|e| wrap(e.into(), &self.out))?;
        let key = sha256_hex(format!("{name}\n{params}\n{}", contents.join(",")).as_bytes());
        if let Some(prev) = self.previous.as_ref().and_then(|m| m.stage(name)) {
            if prev.key == key && self.outputs_intact(prev) {
                info!("stage {name}: unchanged, skipped");
                let mut rec = prev.clone();
                rec.skipped = true;
                self.records.push(rec);
                return Ok(());
            }
        }
        info!("stage {name}: running");
        let started = now();
        let outputs = body(&self.out).map_err(|e| match e {
            Error::Stage { .. } => e,
            e => wrap(e, &self.out),
        })?;
        let mut output_hashes = BTreeMap::new();
        for rel in outputs {
            let full = self.out.join(&rel);
            output_hashes.insert(rel.display().to_string(), hash_file(&full).map_err(|e| wrap(e, &full))?);
        }
        self.records.push(StageRecord {
            name: name.to_string(),
            key,
            inputs: input_hashes,
            outputs: output_hashes,
            skipped: false,
            started,
            finished: now(),
        });
        Ok(())
    }

    fn outputs_intact(&self, rec: &StageRecord) -> bool {
        rec.outputs
            .iter()
            .all(|(rel, h)| hash_file(&self.out.join(rel)).is_ok_and(|x| &x == h))
    }
}

fn save(out: &Path, rel: &str, contents: &str) -> Result<PathBuf> {
    write_string(&out.join(rel), contents)?;
    Ok(PathBuf::from(rel))
}

fn json<T: Serialize>(x: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(x)?)
}

/// Agreement statistics written by the agreement stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub n_pairs: usize,
    pub n_undefined: usize,
    pub mean: BootstrapCI,
    pub median: BootstrapCI,
}

/// Executes the enabled stages in dependency order, skipping any whose
/// settings and inputs hash the same as in the previous manifest.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let manifest_path = out.join("manifest.json");
    let previous = fs::read_to_string(&manifest_path)
        .ok()
        .and_then(|s| serde_json::from_str::<RunManifest>(&s).ok());
    let mut runner = Runner {
        out: out.clone(),
        previous,
        records: Vec::new(),
    };
    let cols = cfg.columns.clone();
    let lenient = cfg.lenient;

    // agreement and normalization
    let acc_path: Option<PathBuf> = if let Some(ratings_path) = cfg.paths.ratings.clone() {
        let pairs_rel = "agreement/pairs.tsv";
        if cfg.stages.agreement || cfg.normalize.weighting == Weighting::Auto {
            let params = (&cfg.columns, lenient, &cfg.agreement, cfg.seeds.agreement);
            let rp = ratings_path.clone();
            let agr = cfg.agreement.clone();
            let seed = cfg.seeds.agreement;
            let c2 = cols.clone();
            runner.stage("agreement", &params, std::slice::from_ref(&ratings_path), move |out| {
                let (ratings, _) = load_ratings(&rp, &c2, lenient)?;
                let pairs = pairwise_list_agreement(&ratings);
                let rhos: Vec<f64> = pairs.iter().map(|p| p.rho).filter(|r| r.is_finite()).collect();
                if rhos.is_empty() {
                    return Err(Error::Analysis("no participant pair has a defined correlation".into()));
                }
                let summary = AgreementSummary {
                    n_pairs: pairs.len(),
                    n_undefined: pairs.len() - rhos.len(),
                    mean: bootstrap_ci(&rhos, Statistic::Mean, agr.replicates, agr.level, seed)?.ci,
                    median: bootstrap_ci(&rhos, Statistic::Median, agr.replicates, agr.level, seed)?.ci,
                };
                Ok(vec![
                    save(out, pairs_rel, &pairs_to_tsv(&pairs))?,
                    save(out, "agreement/summary.json", &json(&summary)?)?,
                ])
            })?;
        }
        if cfg.stages.normalize {
            let mut inputs = vec![ratings_path.clone()];
            if cfg.normalize.weighting == Weighting::Auto {
                inputs.push(out.join(pairs_rel));
            }
            let params = (&cfg.columns, lenient, &cfg.normalize);
            let norm = cfg.normalize.clone();
            let rp = ratings_path.clone();
            let c2 = cols.clone();
            runner.stage("normalize", &params, &inputs, move |out| {
                let (ratings, _) = load_ratings(&rp, &c2, lenient)?;
                let mut outputs = Vec::new();
                let quality = match norm.weighting {
                    Weighting::Uniform => None,
                    Weighting::Auto => {
                        let pairs = load_pairs(&out.join(pairs_rel))?;
                        let q = participant_quality(&pairs, &ratings.participants)?;
                        outputs.push(save(out, "normalize/quality.tsv", &q.to_tsv())?);
                        Some(q)
                    }
                };
                let fit = fit_ordinal_model(&ratings, quality.as_ref(), &norm.fit)?;
                let var_q = if norm.fit.weight_variability { quality.as_ref() } else { None };
                let acc = acceptability_matrix(&fit.model, &ratings, var_q)?;
                acc.save(&out.join("normalize/acceptability.tsv"))?;
                outputs.push(PathBuf::from("normalize/acceptability.tsv"));
                outputs.push(save(out, "normalize/fit.json", &json(&fit.diagnostics)?)?);
                Ok(outputs)
            })?;
            Some(out.join("normalize/acceptability.tsv"))
        } else {
            cfg.paths.acceptability.clone()
        }
    } else {
        cfg.paths.acceptability.clone()
    };

    // representations
    let mut reps: Vec<PathBuf> = Vec::new();
    if let Some(counts_path) = cfg.paths.counts.clone() {
        let mut inputs = vec![counts_path.clone()];
        inputs.extend(cfg.paths.verb_map.clone());
        inputs.extend(acc_path.clone());
        let load_aligned = {
            let counts_path = counts_path.clone();
            let verb_map = cfg.paths.verb_map.clone();
            let acc_path = acc_path.clone();
            move || -> Result<CountsTable> {
                let (mut counts, _) = load_counts(&counts_path)?;
                if let Some(m) = &verb_map {
                    counts = counts.remap_verbs(&VerbMap::load(m)?);
                }
                if let Some(a) = &acc_path {
                    let acc = AcceptabilityMatrix::load(a)?;
                    counts = align_vocabularies(&counts, &acc)?.counts;
                }
                Ok(counts)
            }
        };
        if cfg.stages.freq {
            let params = (&cfg.freq, &cfg.grids.smoothing);
            let section = cfg.freq.clone();
            let values = cfg.grids.smoothing.clone();
            let load = load_aligned.clone();
            runner.stage("freq", &params, &inputs, move |out| {
                let counts = load()?;
                let mut outputs = Vec::new();
                for &model in &section.models {
                    for rep in grid(&counts, model, &values, &section.config)? {
                        outputs.extend(save_representation(out, "reps/freq", &rep)?);
                    }
                }
                Ok(outputs)
            })?;
            reps.extend(stage_outputs(&runner, "freq", &out));
        }
        if cfg.stages.factor {
            let params = (&cfg.factor, &cfg.grids.k, cfg.seeds.factor, &cfg.freq.config.bnb);
            let section = cfg.factor.clone();
            let ks = cfg.grids.k.clone();
            let seed = cfg.seeds.factor;
            let bnb = cfg.freq.config.bnb.clone();
            let load = load_aligned.clone();
            runner.stage("factor", &params, &inputs, move |out| {
                let counts = load()?;
                let mut outputs = Vec::new();
                for &model in &section.models {
                    let base = if section.with_base { default_base(model, &counts, &bnb)? } else { None };
                    for &k in &ks {
                        let features = match model {
                            FactorModel::Lda => {
                                let p = lda_fit(&counts, k, &LdaConfig { seed, ..section.lda.clone() })?;
                                assemble_features(FactorOutput::Lda(&p), base.as_ref(), section.assembly)?
                            }
                            FactorModel::Lfa => {
                                let p = lfa_fit(&counts, k, &LfaConfig { seed, ..section.lfa.clone() })?;
                                assemble_features(FactorOutput::Lfa(&p), base.as_ref(), section.assembly)?
                            }
                            FactorModel::Glove => {
                                let p = glove_fit(&counts, k, &GloveConfig { seed, ..section.glove.clone() })?;
                                assemble_features(FactorOutput::Glove(&p), None, section.assembly)?
                            }
                        };
                        let rep = Representation {
                            model: model.name().to_string(),
                            hyperparameter: "K".to_string(),
                            value: k as f64,
                            features,
                        };
                        outputs.extend(save_representation(out, "reps/factor", &rep)?);
                    }
                }
                Ok(outputs)
            })?;
            reps.extend(stage_outputs(&runner, "factor", &out));
        }
    }
    let sentence_features = cfg.paths.features.clone();

    // evaluation
    if cfg.stages.evaluate {
        let acc_path = acc_path.ok_or_else(|| Error::Config("evaluation needs acceptabilities".into()))?;
        let mut inputs = vec![acc_path.clone()];
        inputs.extend(reps.iter().cloned());
        inputs.extend(sentence_features.iter().cloned());
        let cv = CvConfig {
            outer: cfg.cv.outer,
            inner: cfg.cv.inner,
            alpha_grid: cfg.grids.alpha.clone(),
            seed: cfg.seeds.cv,
        };
        let params = (cv.clone(), cfg.seeds.summary);
        let summary_seed = cfg.seeds.summary;
        runner.stage("evaluate", &params, &inputs, move |out| {
            let acc = AcceptabilityMatrix::load(&acc_path)?;
            let mut outputs = Vec::new();
            let mut reports = Vec::new();
            let sources = reps.iter().map(|p| (p, false)).chain(sentence_features.iter().map(|p| (p, true)));
            for (rep, sentence) in sources {
                let loaded = if sentence { load_sentence_features(rep) } else { FeatureMatrix::load(rep) };
                let features = loaded.map_err(|e| Error::Stage {
                    stage: "evaluate".into(),
                    artifact: rep.clone(),
                    source: Box::new(e),
                })?;
                let label = rep.file_stem().map_or_else(|| rep.display().to_string(), |s| s.to_string_lossy().into_owned());
                let data = align_targets(&features, &acc)?;
                let report = nested_cv(&data, &cv, &label)?;
                outputs.push(save(out, &format!("reports/{label}.json"), &report.to_json()?)?);
                reports.push(report);
            }
            let (summary, per_frame) = summarize(&reports, summary_seed)?;
            outputs.push(save(out, "summary/summary.tsv", &summary)?);
            outputs.push(save(out, "summary/per_frame.tsv", &per_frame)?);
            Ok(outputs)
        })?;
    }

    let config_hash = sha256_hex(cfg.to_toml()?.as_bytes());
    let manifest = RunManifest {
        config_hash,
        tool_version: TOOL_VERSION.to_string(),
        stages: runner.records,
    };
    write_string(&manifest_path, &json(&manifest)?)?;
    Ok(manifest)
}

fn stage_outputs(runner: &Runner, name: &str, out: &Path) -> Vec<PathBuf> {
    runner
        .records
        .iter()
        .filter(|r| r.name == name)
        .flat_map(|r| r.outputs.keys())
        .filter(|k| k.ends_with(".tsv"))
        .map(|k| out.join(k))
        .collect()
}

/// Writes a representation as `<dir>/<stem>.tsv` plus metadata JSON.
pub fn save_representation(out: &Path, dir: &str, rep: &Representation) -> Result<Vec<PathBuf>> {
    let stem = rep.stem();
    Ok(vec![
        save(out, &format!("{dir}/{stem}.tsv"), &rep.features.to_tsv())?,
        save(out, &format!("{dir}/{stem}.json"), &json(&rep.metadata())?)?,
    ])
}

/// Reads a pair table written by the agreement stage.
pub fn load_pairs(path: &Path) -> Result<Vec<crate::agreement::PairAgreement>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 5 {
            return Err(Error::data(path, i + 1, "expected list, p1, p2, rho, n_items"));
        }
        let rho = match f[3] {
            "NA" => f64::NAN,
            x => x.parse().map_err(|_| Error::data(path, i + 1, "bad rho"))?,
        };
        out.push(crate::agreement::PairAgreement {
            list: f[0].to_string(),
            p1: f[1].to_string(),
            p2: f[2].to_string(),
            rho,
            n_items: f[4].parse().map_err(|_| Error::data(path, i + 1, "bad n_items"))?,
            note: None,
        });
    }
    Ok(out)
}

/// Splits a report label such as `bnb_gamma=0.1` into model and setting.
fn split_label(label: &str) -> (&str, &str) {
    label.split_once('_').unwrap_or((label, ""))
}

/// Long-format tables: one row per report with a bootstrap interval over
/// the outer-fold R² values, and one row per report per target column.
pub fn summarize(reports: &[CVReport], seed: u64) -> Result<(String, String)> {
    if reports.is_empty() {
        return Err(Error::Analysis("nothing to summarize".into()));
    }
    let mut summary = String::from("model\thyperparameter\tmean_r2\tci_lo\tci_hi\tmean_column_r2\n");
    let mut per_frame = String::from("model\thyperparameter\tframe\tr2\n");
    for r in reports {
        let (model, hyper) = split_label(&r.label);
        let finite: Vec<f64> = r.outer_fold_r2.iter().copied().filter(|x| x.is_finite()).collect();
        let (lo, hi) = if finite.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let ci = bootstrap_ci(&finite, Statistic::Mean, 999, 0.95, seed)?.ci;
            (ci.lo, ci.hi)
        };
        summary.push_str(&format!(
            "{model}\t{hyper}\t{}\t{}\t{}\t{}\n",
            fmt_real(r.mean_r2),
            fmt_real(lo),
            fmt_real(hi),
            fmt_real(r.mean_column_r2)
        ));
        for (frame, x) in &r.per_frame_r2 {
            per_frame.push_str(&format!("{model}\t{hyper}\t{frame}\t{}\n", fmt_real(*x)));
        }
    }
    Ok((summary, per_frame))
}

