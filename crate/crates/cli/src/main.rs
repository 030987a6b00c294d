use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use lexsel_core::agreement::{
    bootstrap_ci, pairs_to_tsv, pairwise_list_agreement, simulate_expected_agreement, AgreementPlan, PairMode, Statistic,
};
use lexsel_core::bleach::{
    build_mega_lists, build_pilot_lists, build_single_verb_list, generate_all, Lexicon, TemplateSet, VerbEntry,
};
use lexsel_core::data::{
    align_vocabularies, load_counts, load_ratings, AcceptabilityMatrix, ColumnMap, CountsTable, FeatureMatrix, VerbMap,
};
use lexsel_core::eval::{
    align_targets, error_correlation, frequency_covariate, nested_cv, variability_covariate, CVReport, CvConfig,
    DEFAULT_ALPHA_GRID,
};
use lexsel_core::factor::{
    assemble_features, default_base, glove_fit, lda_fit, lfa_fit, load_sentence_features, AssemblyMode, FactorModel,
    FactorOutput, GloveConfig, LdaConfig, LfaConfig, DEFAULT_K_GRID,
};
use lexsel_core::freq::{grid, FreqConfig, FreqModel, JointSmoothing, Representation, SentinelHandling, DEFAULT_GRID};
use lexsel_core::normalize::{
    acceptability_matrix, compare_normalizers, fit_ordinal_model, participant_quality, FitConfig,
};
use lexsel_core::pipeline::{run_pipeline, save_representation, summarize, PipelineConfig};
use lexsel_core::{Error, Result};

#[derive(Parser)]
#[command(name = "lexsel", version, about = "Verb-frame frequency vs. acceptability toolkit")]
struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Builtin {
    Pilot,
    Mega,
}

#[derive(Clone, Copy, ValueEnum)]
enum Design {
    Pilot,
    Mega,
    SingleVerb,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Weights {
    Uniform,
    Auto,
}

#[derive(Clone, Copy, ValueEnum)]
enum Covariate {
    Variability,
    Frequency,
}

#[derive(Clone, Copy, ValueEnum)]
enum Assembly {
    Reconstruction,
    Latent,
}

#[derive(clap::Args)]
struct TemplateArgs {
    /// Verb lemmas, one per line.
    #[arg(long)]
    verbs: PathBuf,
    /// Frame templates (frame_id, template, morph); defaults to a bundled set.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mega")]
    frames: Builtin,
    /// Irregular forms (lemma, past, passive participle).
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

impl TemplateArgs {
    fn load(&self) -> Result<(Vec<VerbEntry>, TemplateSet)> {
        let frames = match &self.templates {
            Some(p) => TemplateSet::load(p)?,
            None => match self.frames {
                Builtin::Pilot => TemplateSet::pilot(),
                Builtin::Mega => TemplateSet::mega(),
            },
        };
        let lexicon = match &self.lexicon {
            Some(p) => Lexicon::load(p, true)?,
            None => Lexicon::english(),
        };
        let text = fs::read_to_string(&self.verbs).map_err(|e| io_err(&self.verbs, e))?;
        let verbs = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| lexicon.entry(l))
            .collect::<Result<Vec<_>>>()?;
        Ok((verbs, frames))
    }
}

#[derive(clap::Args)]
struct RatingsArgs {
    #[arg(long)]
    ratings: PathBuf,
    /// Skip malformed rows instead of failing.
    #[arg(long)]
    lenient: bool,
    #[arg(long, default_value = "participant")]
    participant_col: String,
    #[arg(long, default_value = "list")]
    list_col: String,
    #[arg(long, default_value = "verb")]
    verb_col: String,
    #[arg(long, default_value = "frame")]
    frame_col: String,
    #[arg(long, default_value = "response")]
    response_col: String,
}

impl RatingsArgs {
    fn load(&self) -> Result<lexsel_core::data::RatingsTable> {
        let cols = ColumnMap {
            participant: self.participant_col.clone(),
            list: self.list_col.clone(),
            verb: self.verb_col.clone(),
            frame: self.frame_col.clone(),
            response: self.response_col.clone(),
        };
        let (table, report) = load_ratings(&self.ratings, &cols, self.lenient)?;
        for (line, msg) in &report.rejected {
            warn!("{}:{line}: skipped: {msg}", self.ratings.display());
        }
        Ok(table)
    }
}

#[derive(clap::Args)]
struct CountsArgs {
    /// Counts as verb, frame, count.
    #[arg(long)]
    counts: PathBuf,
    /// Two-column file mapping count-side verb names onto rating-side names.
    #[arg(long)]
    verb_map: Option<PathBuf>,
    /// Keep only verbs present in this acceptability matrix.
    #[arg(long)]
    targets: Option<PathBuf>,
}

impl CountsArgs {
    fn load(&self) -> Result<CountsTable> {
        let (mut counts, report) = load_counts(&self.counts)?;
        info!("{report:?}");
        if let Some(m) = &self.verb_map {
            counts = counts.remap_verbs(&VerbMap::load(m)?);
        }
        if let Some(t) = &self.targets {
            let aligned = align_vocabularies(&counts, &AcceptabilityMatrix::load(t)?)?;
            info!("{} count verbs without acceptabilities dropped", aligned.dropped_from_counts);
            counts = aligned.counts;
        }
        Ok(counts)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Instantiate every frame with every verb.
    Generate {
        #[command(flatten)]
        templates: TemplateArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build counterbalanced item lists.
    Lists {
        #[arg(long, value_enum)]
        design: Design,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        templates: TemplateArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the ordinal model and write per-item acceptabilities.
    Normalize {
        #[command(flatten)]
        ratings: RatingsArgs,
        #[arg(long, value_enum, default_value = "auto")]
        weights: Weights,
        #[arg(long)]
        out: PathBuf,
        /// Fit diagnostics and normalizer comparison as JSON.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        /// Participant quality scores (auto weighting only).
        #[arg(long)]
        quality_out: Option<PathBuf>,
    },
    /// Pairwise Spearman agreement between participants.
    Agreement {
        #[command(flatten)]
        ratings: RatingsArgs,
        #[arg(long)]
        all_pairs: bool,
        #[arg(long, default_value_t = 999)]
        replicates: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Agreement expected if responses came from the fitted model.
    SimulateAgreement {
        #[command(flatten)]
        ratings: RatingsArgs,
        #[arg(long, default_value_t = 999)]
        sims: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        all_pairs: bool,
        #[arg(long, value_enum, default_value = "uniform")]
        weights: Weights,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Frequency-normalized representations over a hyperparameter grid.
    FitFreq {
        #[arg(long)]
        model: FreqModel,
        /// Comma-separated values.
        #[arg(long)]
        grid: Option<String>,
        #[command(flatten)]
        counts: CountsArgs,
        #[arg(long)]
        out_dir: PathBuf,
        /// Smooth each verb's joint distribution separately (PMI, G).
        #[arg(long)]
        per_verb: bool,
        /// Replace undefined scores by 0 without indicator columns.
        #[arg(long)]
        no_indicators: bool,
    },
    /// Factorization representations over a K grid.
    FitFactor {
        #[arg(long)]
        model: FactorModel,
        #[arg(long)]
        k_grid: Option<String>,
        #[command(flatten)]
        counts: CountsArgs,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "reconstruction")]
        assembly: Assembly,
        /// Leave out the paired direct representation.
        #[arg(long)]
        no_base: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Validate sentence-level features and rewrite them as a feature matrix.
    IngestFeatures {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Nested cross-validated ridge regression of acceptability on features.
    Evaluate {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        alpha_grid: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        outer: usize,
        #[arg(long, default_value_t = 10)]
        inner: usize,
        /// Report label; defaults to the feature file stem.
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correlate held-out errors with an item covariate.
    ErrorAnalysis {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum)]
        covariate: Covariate,
        /// Acceptability matrix (variability covariate).
        #[arg(long)]
        targets: Option<PathBuf>,
        /// Counts (frequency covariate).
        #[arg(long)]
        counts: Option<PathBuf>,
        #[arg(long)]
        verb_map: Option<PathBuf>,
        #[arg(long, default_value_t = 999)]
        replicates: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tables of mean R² and per-frame R² from CV reports.
    Summarize {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the whole pipeline from a TOML config.
    Run {
        #[arg(long, required_unless_present = "replication")]
        config: Option<PathBuf>,
        /// Directory with ratings.tsv and counts.tsv for the full replication preset.
        #[arg(long, requires = "out_dir")]
        replication: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Print the effective config and stop.
        #[arg(long)]
        dry_run: bool,
    },
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            }
            fs::write(p, text).map_err(|e| io_err(p, e))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    let v = s
        .split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|_| Error::Config(format!("bad {what} value `{x}`"))))
        .collect::<Result<Vec<T>>>()?;
    if v.is_empty() {
        return Err(Error::Config(format!("empty {what}")));
    }
    Ok(v)
}

fn pretty<T: serde::Serialize>(x: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(x)? + "\n")
}

fn pair_mode(all_pairs: bool) -> PairMode {
    if all_pairs {
        PairMode::AllPairs
    } else {
        PairMode::CoList
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { templates, out } => {
            let (verbs, frames) = templates.load()?;
            let mut s = String::from("verb\tframe\tsentence\n");
            for item in generate_all(&verbs, &frames)? {
                s.push_str(&format!("{}\t{}\t{}\n", item.verb, item.frame_id, item.sentence));
            }
            write_out(out.as_deref(), &s)
        }
        Command::Lists {
            design,
            seed,
            templates,
            out,
        } => {
            let (verbs, frames) = templates.load()?;
            let lists = match design {
                Design::Pilot => build_pilot_lists(&generate_all(&verbs, &frames)?, seed)?,
                Design::Mega => build_mega_lists(&verbs, &frames, seed)?,
                Design::SingleVerb => {
                    if verbs.len() != 1 {
                        return Err(Error::Config(format!(
                            "single-verb design needs exactly one verb, got {}",
                            verbs.len()
                        )));
                    }
                    build_single_verb_list(&verbs[0], &frames, seed)?
                }
            };
            if let Err(msg) = lists.check() {
                return Err(Error::Construction(msg));
            }
            write_out(out.as_deref(), &(lists.to_json() + "\n"))
        }
        Command::Normalize {
            ratings,
            weights,
            out,
            diagnostics,
            quality_out,
        } => {
            let table = ratings.load()?;
            let quality = match weights {
                Weights::Uniform => None,
                Weights::Auto => {
                    let pairs = pairwise_list_agreement(&table);
                    Some(participant_quality(&pairs, &table.participants)?)
                }
            };
            if let (Some(q), Some(p)) = (&quality, &quality_out) {
                write_out(Some(p), &q.to_tsv())?;
            }
            let cfg = FitConfig::default();
            let fit = fit_ordinal_model(&table, quality.as_ref(), &cfg)?;
            let acc = acceptability_matrix(&fit.model, &table, quality.as_ref())?;
            acc.save(&out)?;
            if let Some(p) = diagnostics {
                let report = serde_json::json!({
                    "fit": fit.diagnostics,
                    "comparison": compare_normalizers(&table, &acc),
                });
                write_out(Some(&p), &pretty(&report)?)?;
            }
            Ok(())
        }
        Command::Agreement {
            ratings,
            all_pairs,
            replicates,
            level,
            seed,
            out,
        } => {
            let table = ratings.load()?;
            let values: Vec<f64> = table.records.iter().map(|r| r.rating as f64).collect();
            let plan = AgreementPlan::new(&table, pair_mode(all_pairs));
            let pairs = plan.table(&table, &values);
            write_out(out.as_deref(), &pairs_to_tsv(&pairs))?;
            let rhos: Vec<f64> = pairs.iter().map(|p| p.rho).filter(|r| r.is_finite()).collect();
            if rhos.is_empty() {
                return Err(Error::Analysis("no pair has a defined correlation".into()));
            }
            let summary = serde_json::json!({
                "n_pairs": pairs.len(),
                "n_undefined": pairs.len() - rhos.len(),
                "mean": bootstrap_ci(&rhos, Statistic::Mean, replicates, level, seed)?.ci,
                "median": bootstrap_ci(&rhos, Statistic::Median, replicates, level, seed)?.ci,
            });
            eprint!("{}", pretty(&summary)?);
            Ok(())
        }
        Command::SimulateAgreement {
            ratings,
            sims,
            seed,
            all_pairs,
            weights,
            level,
            out,
        } => {
            let table = ratings.load()?;
            let quality = match weights {
                Weights::Uniform => None,
                Weights::Auto => Some(participant_quality(
                    &pairwise_list_agreement(&table),
                    &table.participants,
                )?),
            };
            let fit = fit_ordinal_model(&table, quality.as_ref(), &FitConfig::default())?;
            let sim = simulate_expected_agreement(&fit.model, &table, pair_mode(all_pairs), sims, level, seed)?;
            write_out(out.as_deref(), &sim.to_tsv())?;
            eprint!("{}", pretty(&sim.ci)?);
            Ok(())
        }
        Command::FitFreq {
            model,
            grid: values,
            counts,
            out_dir,
            per_verb,
            no_indicators,
        } => {
            let table = counts.load()?;
            let values = match values {
                Some(s) => parse_list(&s, "grid")?,
                None => DEFAULT_GRID.to_vec(),
            };
            let cfg = FreqConfig {
                joint_smoothing: if per_verb { JointSmoothing::PerVerb } else { JointSmoothing::PerCell },
                sentinels: if no_indicators { SentinelHandling::Zero } else { SentinelHandling::ZeroWithIndicator },
                ..FreqConfig::default()
            };
            for rep in grid(&table, model, &values, &cfg)? {
                for p in save_representation(&out_dir, ".", &rep)? {
                    info!("wrote {}", out_dir.join(p).display());
                }
            }
            Ok(())
        }
        Command::FitFactor {
            model,
            k_grid,
            counts,
            out_dir,
            assembly,
            no_base,
            seed,
        } => {
            let table = counts.load()?;
            let ks: Vec<usize> = match k_grid {
                Some(s) => parse_list(&s, "K grid")?,
                None => DEFAULT_K_GRID.to_vec(),
            };
            let mode = match assembly {
                Assembly::Reconstruction => AssemblyMode::Reconstruction,
                Assembly::Latent => AssemblyMode::Latent,
            };
            let base = if no_base { None } else { default_base(model, &table, &Default::default())? };
            for k in ks {
                let features = match model {
                    FactorModel::Lda => {
                        let p = lda_fit(&table, k, &LdaConfig { seed, ..LdaConfig::default() })?;
                        assemble_features(FactorOutput::Lda(&p), base.as_ref(), mode)?
                    }
                    FactorModel::Lfa => {
                        let p = lfa_fit(&table, k, &LfaConfig { seed, ..LfaConfig::default() })?;
                        assemble_features(FactorOutput::Lfa(&p), base.as_ref(), mode)?
                    }
                    FactorModel::Glove => {
                        let p = glove_fit(&table, k, &GloveConfig { seed, ..GloveConfig::default() })?;
                        assemble_features(FactorOutput::Glove(&p), None, mode)?
                    }
                };
                let rep = Representation {
                    model: model.name().to_string(),
                    hyperparameter: "K".to_string(),
                    value: k as f64,
                    features,
                };
                save_representation(&out_dir, ".", &rep)?;
                info!("wrote {}", rep.stem());
            }
            Ok(())
        }
        Command::IngestFeatures { file, out } => {
            let m = load_sentence_features(&file)?;
            eprintln!("{} items × {} features", m.nrows(), m.dim());
            write_out(out.as_deref(), &m.to_tsv())
        }
        Command::Evaluate {
            features,
            targets,
            alpha_grid,
            seed,
            outer,
            inner,
            label,
            out,
        } => {
            let fm = FeatureMatrix::load(&features)?;
            let acc = AcceptabilityMatrix::load(&targets)?;
            let data = align_targets(&fm, &acc)?;
            let cfg = CvConfig {
                outer,
                inner,
                alpha_grid: match alpha_grid {
                    Some(s) => parse_list(&s, "alpha grid")?,
                    None => DEFAULT_ALPHA_GRID.to_vec(),
                },
                seed,
            };
            let label = label.unwrap_or_else(|| {
                features
                    .file_stem()
                    .map_or_else(|| "features".into(), |s| s.to_string_lossy().into_owned())
            });
            let report = nested_cv(&data, &cfg, &label)?;
            eprintln!("{label}: mean R² {:.4} (column-averaged {:.4})", report.mean_r2, report.mean_column_r2);
            write_out(Some(&out), &report.to_json()?)
        }
        Command::ErrorAnalysis {
            report,
            covariate,
            targets,
            counts,
            verb_map,
            replicates,
            level,
            seed,
            out,
        } => {
            let rep = CVReport::load(&report)?;
            let cov = match covariate {
                Covariate::Variability => {
                    let t = targets.ok_or_else(|| Error::Config("--targets is required for variability".into()))?;
                    variability_covariate(&AcceptabilityMatrix::load(&t)?)
                }
                Covariate::Frequency => {
                    let c = counts.ok_or_else(|| Error::Config("--counts is required for frequency".into()))?;
                    let args = CountsArgs {
                        counts: c,
                        verb_map,
                        targets: None,
                    };
                    frequency_covariate(&args.load()?, &rep.targets)
                }
            };
            let result = error_correlation(&rep.held_out, &cov, replicates, level, seed)?;
            write_out(out.as_deref(), &pretty(&result)?)
        }
        Command::Summarize { reports, seed, out_dir } => {
            let loaded = reports.iter().map(|p| CVReport::load(p)).collect::<Result<Vec<_>>>()?;
            let (summary, per_frame) = summarize(&loaded, seed)?;
            write_out(Some(&out_dir.join("summary.tsv")), &summary)?;
            write_out(Some(&out_dir.join("per_frame.tsv")), &per_frame)
        }
        Command::Run {
            config,
            replication,
            out_dir,
            dry_run,
        } => {
            let mut cfg = match (&config, &replication) {
                (Some(p), _) => PipelineConfig::load(p)?,
                (None, Some(d)) => PipelineConfig::replication(d, out_dir.as_deref().unwrap_or(Path::new("lexsel-out"))),
                (None, None) => unreachable!("clap enforces one of --config, --replication"),
            };
            if let (Some(_), Some(o)) = (&config, &out_dir) {
                cfg.output_dir = o.clone();
            }
            if dry_run {
                cfg.validate()?;
                print!("{}", cfg.to_toml()?);
                return Ok(());
            }
            let manifest = run_pipeline(&cfg)?;
            let skipped: HashSet<&str> =
                manifest.stages.iter().filter(|s| s.skipped).map(|s| s.name.as_str()).collect();
            for s in &manifest.stages {
                eprintln!("{:<10} {}", s.name, if skipped.contains(s.name.as_str()) { "cached" } else { "ran" });
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
