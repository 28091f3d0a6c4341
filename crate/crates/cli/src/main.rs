use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scanpath_core::align::{Metric, ScoringParams};
use scanpath_core::embed::EmbeddedScanpath;
use scanpath_core::pipeline::{
    self, alignment_report, embed_and_cache, load_inputs, obtain_embeddings, read_matrix, resolve_c, resolve_gap,
    subject_groups, CSpec, GapSpec, Inputs, ProviderKind, RunConfig, SCANPATH_MATRIX, SUBJECT_MATRIX,
};
use scanpath_core::synth::{self, SynthConfig};
use scanpath_core::{Error, ErrorKind, Result};
use serde_json::{json, Value};

/// Scanpath similarity from fixation-patch features.
#[derive(Parser)]
#[command(name = "scanpath", version)]
struct Cli {
    #[command(flatten)]
    opts: Options,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Options {
    /// Dataset manifest (JSON).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Feature provider: builtin or dsem.
    #[arg(long, global = true, default_value = "builtin")]
    provider: ProviderKind,
    /// Side of the square patch around each fixation, in pixels.
    #[arg(long, global = true, default_value_t = 100)]
    patch_size: usize,
    /// Feature distance: l1, l2 or cosine.
    #[arg(long, global = true, default_value = "l1")]
    metric: Metric,
    /// Match constant: a number, `calibrate` or `calibrate:<stimulus_id>`.
    #[arg(long, global = true)]
    c: Option<CSpec>,
    /// Gap penalty: a number or `auto` (twice c).
    #[arg(long, global = true, default_value = "auto")]
    gap: GapSpec,
    /// Keep only fixations starting before this many milliseconds.
    #[arg(long, global = true)]
    window_ms: Option<f64>,
    /// Worker threads for the all-pairs stage. Defaults to the number of CPUs.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 3)]
    knn_k: usize,
    /// Number of Ward clusters.
    #[arg(long, global = true, default_value_t = 2)]
    clusters: usize,
    #[arg(long, global = true, default_value_t = 3)]
    archetype_top_n: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Embed every fixation and cache the features under --out.
    Embed,
    /// Print the calibrated match constant.
    Calibrate,
    /// Align two scanpaths given as `subject@stimulus` keys.
    Align { a: String, b: String },
    /// All-pairs scanpath similarity matrix.
    Simmatrix,
    /// Average the scanpath matrix into a subject matrix.
    Aggregate,
    /// Ward clustering of the subject matrix.
    Cluster,
    /// Leave-one-subject-and-one-image-out k-NN expertise classification.
    Classify,
    /// Rank scanpaths by how often they appear among others' nearest neighbours.
    Archetypes,
    /// Run every stage and write run.json.
    Run,
    /// Write a synthetic dataset under --out.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 12)]
    experts: usize,
    #[arg(long, default_value_t = 24)]
    students: usize,
    #[arg(long, default_value_t = 6)]
    stimuli: usize,
    #[arg(long, default_value_t = 800)]
    width: usize,
    #[arg(long, default_value_t = 600)]
    height: usize,
    /// Regions of interest per group and stimulus.
    #[arg(long, default_value_t = 6)]
    prototypes: usize,
    /// Standard deviation of fixation noise in pixels.
    #[arg(long, default_value_t = 8.0)]
    jitter_px: f64,
    /// Probability of swapping two neighbouring visits.
    #[arg(long, default_value_t = 0.1)]
    swap_prob: f64,
}

impl Options {
    fn manifest(&self) -> Result<&Path> {
        self.manifest.as_deref().ok_or_else(|| Error::Config("--manifest is required".into()))
    }

    fn out(&self) -> Result<&Path> {
        let out = self.out.as_deref().ok_or_else(|| Error::Config("--out is required".into()))?;
        std::fs::create_dir_all(out).map_err(|e| Error::Config(format!("cannot create {}: {e}", out.display())))?;
        Ok(out)
    }

    fn c(&self) -> Result<&CSpec> {
        self.c
            .as_ref()
            .ok_or_else(|| Error::Config("--c is required: give a value or calibrate[:<stimulus_id>]".into()))
    }

    fn workers(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    fn embeddings(&self, inputs: &Inputs) -> Result<Vec<EmbeddedScanpath>> {
        match &self.out {
            Some(out) => obtain_embeddings(out, inputs, self.provider, self.patch_size, self.window_ms),
            None => pipeline::embed_stage(inputs, self.provider, self.patch_size, self.window_ms),
        }
    }

    fn params(&self, embedded: &[EmbeddedScanpath]) -> Result<(pipeline::Calibration, ScoringParams)> {
        let calibration = resolve_c(self.c()?, embedded, self.metric)?;
        let params = ScoringParams::new(calibration.c, resolve_gap(self.gap, calibration.c), self.metric)?;
        Ok((calibration, params))
    }
}

fn execute(opts: &Options, command: &Command) -> Result<Value> {
    match command {
        Command::Embed => {
            let inputs = load_inputs(opts.manifest()?)?;
            let e = embed_and_cache(opts.out()?, &inputs, opts.provider, opts.patch_size, opts.window_ms)?;
            Ok(json!({
                "provider": opts.provider,
                "scanpaths": e.len(),
                "fixations": e.iter().map(EmbeddedScanpath::len).sum::<usize>(),
                "dim": scanpath_core::embed::check_uniform_dim(&e)?,
            }))
        }
        Command::Calibrate => {
            let spec = opts.c.clone().unwrap_or(CSpec::Calibrate(None));
            if let CSpec::Value(_) = spec {
                return Err(Error::Config("calibrate takes --c calibrate or calibrate:<stimulus_id>".into()));
            }
            let inputs = load_inputs(opts.manifest()?)?;
            let cal = resolve_c(&spec, &opts.embeddings(&inputs)?, opts.metric)?;
            let mut v = json!({
                "c": cal.c,
                "gap": resolve_gap(opts.gap, cal.c),
                "stimulus": cal.stimulus,
                "metric": cal.metric,
                "scanpaths": cal.scanpaths,
            });
            pipeline::quantize_json(&mut v);
            Ok(v)
        }
        Command::Align { a, b } => {
            let inputs = load_inputs(opts.manifest()?)?;
            let embedded = opts.embeddings(&inputs)?;
            let (_, params) = opts.params(&embedded)?;
            let find = |key: &str| {
                embedded
                    .iter()
                    .find(|e| e.key() == key)
                    .ok_or_else(|| Error::Config(format!("no scanpath {key:?} in the dataset")))
            };
            alignment_report(find(a)?, find(b)?, &params)
        }
        Command::Simmatrix => {
            let inputs = load_inputs(opts.manifest()?)?;
            let embedded = opts.embeddings(&inputs)?;
            let (calibration, params) = opts.params(&embedded)?;
            let m = pipeline::similarity_stage(opts.out()?, &embedded, &params, opts.workers())?;
            Ok(json!({ "scanpaths": m.len(), "c": calibration.c, "gap": params.gap, "stimulus": calibration.stimulus }))
        }
        Command::Aggregate => {
            let out = opts.out()?;
            let m = pipeline::aggregate_stage(out, &read_matrix(out, SCANPATH_MATRIX)?)?;
            Ok(json!({ "subjects": m.len() }))
        }
        Command::Cluster => {
            let inputs = load_inputs(opts.manifest()?)?;
            let out = opts.out()?;
            let r = pipeline::cluster_stage(out, &read_matrix(out, SUBJECT_MATRIX)?, &subject_groups(&inputs.dataset), opts.clusters)?;
            let mut v = json!({
                "clusters": opts.clusters,
                "inversions": r.dendrogram.inversions,
                "accuracy": r.expertise.as_ref().map(|e| e.accuracy),
                "kappa": r.kappa,
            });
            pipeline::quantize_json(&mut v);
            Ok(v)
        }
        Command::Classify => {
            if opts.knn_k.is_multiple_of(2) {
                return Err(Error::Config(format!("--knn-k must be odd, got {}", opts.knn_k)));
            }
            let inputs = load_inputs(opts.manifest()?)?;
            let out = opts.out()?;
            let r = pipeline::classify_stage(out, &read_matrix(out, SCANPATH_MATRIX)?, &inputs.dataset.groups(), opts.knn_k)?;
            let mut v = json!({ "k": r.k, "accuracy": r.overall.accuracy, "kappa": r.overall.kappa });
            pipeline::quantize_json(&mut v);
            Ok(v)
        }
        Command::Archetypes => {
            let out = opts.out()?;
            let ranked = pipeline::archetype_stage(out, &read_matrix(out, SCANPATH_MATRIX)?, opts.archetype_top_n)?;
            Ok(json!({ "top": ranked.iter().take(5).collect::<Vec<_>>() }))
        }
        Command::Run => {
            let cfg = RunConfig {
                provider: opts.provider,
                patch_size: opts.patch_size,
                metric: opts.metric,
                gap: opts.gap,
                window_ms: opts.window_ms,
                workers: opts.workers(),
                knn_k: opts.knn_k,
                clusters_k: opts.clusters,
                archetype_top_n: opts.archetype_top_n,
                ..RunConfig::new(opts.manifest()?, opts.out()?, opts.c()?.clone())
            };
            let s = pipeline::run_pipeline(&cfg)?;
            let mut v = json!({
                "out": cfg.out.display().to_string(),
                "c": s.calibration.c,
                "gap": s.gap,
                "scanpaths": s.scanpath_matrix.len(),
                "subjects": s.subject_matrix.len(),
                "cluster_accuracy": s.clustering.expertise.as_ref().map(|e| e.accuracy),
                "knn_accuracy": s.classification.overall.accuracy,
            });
            pipeline::quantize_json(&mut v);
            Ok(v)
        }
        Command::Synth(a) => {
            let cfg = SynthConfig {
                seed: a.seed,
                n_experts: a.experts,
                n_students: a.students,
                n_stimuli: a.stimuli,
                image_size: (a.width, a.height),
                n_prototypes: a.prototypes,
                jitter_px: a.jitter_px,
                swap_prob: a.swap_prob,
                ..SynthConfig::default()
            };
            let out = opts.out()?;
            let dataset = synth::generate(&cfg)?;
            synth::write_dataset(out, &dataset)?;
            Ok(json!({
                "manifest": out.join("manifest.json").display().to_string(),
                "stimuli": dataset.stimuli.len(),
                "scanpaths": dataset.scanpaths.len(),
            }))
        }
    }
}

fn fail(kind: ErrorKind, message: String) -> ExitCode {
    eprintln!("{}", json!({ "kind": kind.as_str(), "message": message }));
    ExitCode::from(kind.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(ErrorKind::Config, e.render().to_string().trim_end().to_string()),
    };
    match execute(&cli.opts, &cli.command) {
        Ok(v) => {
            // a closed pipe downstream is not an error of ours
            let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), e.to_string()),
    }
}
