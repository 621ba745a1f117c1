//! Command implementations: each resolves the configuration, validates its
//! inputs, refuses to overwrite existing outputs unless forced, runs the
//! stage(s), and writes pools, reports, and a manifest into the output
//! directory. Budget failures still write the run report before exiting.

use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use serde::Serialize;

use sda_core::augmentor::{
    AugmentConfig, AugmentError, FailureMode, Pipeline, PromptTrace, RunReport,
};
use sda_core::backend::{TextEmbedder, TextGenerator};
use sda_core::baselines::{icl_augment, icl_context_augment, item_rng, mlm_augment};
use sda_core::corpus::{DialoguePool, PoolRole, SummaryPool};
use sda_core::metrics::{evaluate_pools, export_records};
use sda_core::prompting::PromptBundle;

use crate::backends::{build_providers, Providers};
use crate::config::FileConfig;
use crate::error::CliError;
use crate::manifest::{content_sha256, Manifest};
use crate::records::{
    load_dialogue_pool, load_summary_pool, save_dialogue_pool, save_summary_pool,
    load_exemplar_bundle,
};
use crate::report::{stage_summary_lines, DiversityReportDto, EmbeddingRowDto, RunReportDto};
use crate::trace::FileTrace;

pub const SEED_SUMMARIES_FILE: &str = "s_seed.jsonl";
pub const AUG_SUMMARIES_FILE: &str = "s_aug.jsonl";
pub const AUG_DIALOGUES_FILE: &str = "d_aug.jsonl";
pub const DIVERSITY_REPORT_FILE: &str = "diversity_report.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";

/// Everything a command needs once the configuration is resolved.
pub struct RunContext {
    pub config: FileConfig,
    pub out_dir: PathBuf,
    command: String,
    providers: Providers,
    trace: Option<FileTrace>,
}

impl RunContext {
    pub fn new(config: FileConfig, command: &str) -> Result<Self, CliError> {
        let out_dir = config
            .paths
            .out_dir
            .clone()
            .ok_or_else(|| CliError::Config("paths.out_dir is required (flag --out)".into()))?;
        let providers = build_providers(&config, config.run.mock_backends)?;
        let trace = if config.run.trace_prompts {
            Some(FileTrace::new(out_dir.join("trace")))
        } else {
            None
        };
        Ok(Self { config, out_dir, command: command.to_string(), providers, trace })
    }

    fn verbose(&self) -> bool {
        self.config.report.verbosity >= 1
    }

    fn seed_pool_path(&self) -> Result<PathBuf, CliError> {
        let path = self.config.paths.seed_pool.clone().ok_or_else(|| {
            CliError::Config("paths.seed_pool is required (flag --seed-pool)".into())
        })?;
        if !path.exists() {
            return Err(CliError::Config(format!(
                "seed pool `{}` does not exist",
                path.display()
            )));
        }
        Ok(path)
    }

    fn bundle_dir(&self) -> PathBuf {
        self.config
            .paths
            .exemplar_bundle
            .clone()
            .unwrap_or_else(|| PathBuf::from("data/exemplars"))
    }

    fn load_seed_dialogues(&self) -> Result<DialoguePool, CliError> {
        let path = self.seed_pool_path()?;
        Ok(load_dialogue_pool(&path, PoolRole::Seed, self.config.run.relabel_speakers)?)
    }

    fn load_bundle(&self) -> Result<PromptBundle, CliError> {
        let dir = self.bundle_dir();
        if !dir.exists() {
            return Err(CliError::Config(format!(
                "exemplar bundle `{}` does not exist",
                dir.display()
            )));
        }
        Ok(load_exemplar_bundle(&dir)?)
    }

    fn pipeline<'a>(
        &'a self,
        bundle: &'a PromptBundle,
        augment: AugmentConfig,
    ) -> Result<Pipeline<'a>, CliError> {
        let pipeline = Pipeline::new(
            self.providers.generator.as_ref(),
            self.providers.embedder.as_ref(),
            bundle,
            self.config.thresholds(),
            augment,
        )
        .map_err(CliError::from)?;
        Ok(match &self.trace {
            Some(trace) => pipeline.with_trace(trace),
            None => pipeline,
        })
    }

    /// Refuse to clobber prior outputs unless `--force` was given.
    fn ensure_fresh(&self, names: &[&str]) -> Result<(), CliError> {
        if self.config.run.force {
            return Ok(());
        }
        for name in names {
            let path = self.out_dir.join(name);
            if path.exists() {
                return Err(CliError::Io(format!(
                    "output `{}` already exists; pass --force to overwrite",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.out_dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::Io(format!("cannot create `{}`: {e}", parent.display())))?;
        }
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Io(format!("cannot serialize `{name}`: {e}")))?;
        text.push('\n');
        fs::write(&path, text)
            .map_err(|e| CliError::Io(format!("cannot write `{}`: {e}", path.display())))
    }

    fn write_jsonl<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let path = self.out_dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::Io(format!("cannot create `{}`: {e}", parent.display())))?;
        }
        let mut out = String::new();
        for row in rows {
            out.push_str(
                &serde_json::to_string(row)
                    .map_err(|e| CliError::Io(format!("cannot serialize `{name}`: {e}")))?,
            );
            out.push('\n');
        }
        fs::write(&path, out)
            .map_err(|e| CliError::Io(format!("cannot write `{}`: {e}", path.display())))
    }

    fn manifest_name(&self) -> String {
        format!("manifest-{}.json", self.command)
    }

    fn report_name(&self) -> String {
        format!("report-{}.json", self.command)
    }

    fn write_manifest(&self) -> Result<(), CliError> {
        let mut manifest = Manifest::new(&self.command, &self.config);
        let bundle = self.bundle_dir();
        if bundle.exists() {
            manifest.exemplar_bundle_sha256 = Some(content_sha256(&bundle)?);
        }
        if let Some(goldens) = &self.config.paths.goldens {
            if goldens.exists() {
                manifest.goldens_sha256 = Some(content_sha256(goldens)?);
            }
        }
        manifest.downgrades = self.providers.downgrades();
        self.write_json(&self.manifest_name(), &manifest)
    }

    fn write_report(&self, report: &RunReport) -> Result<(), CliError> {
        self.write_json(&self.report_name(), &RunReportDto::from(report))
    }

    fn finish(&self, report: &RunReport) -> Result<(), CliError> {
        self.write_report(report)?;
        self.write_manifest()?;
        if self.verbose() {
            for line in stage_summary_lines(report) {
                eprintln!("{line}");
            }
        }
        if let Some(trace) = &self.trace {
            if let Some(err) = trace.first_error() {
                eprintln!("warning: {err}");
            }
        }
        Ok(())
    }
}

/// Summarize the seeds in parallel with order-preserving merge. Worker
/// count 1 falls back to the sequential reference path.
fn summarize_stage(
    ctx: &RunContext,
    bundle: &PromptBundle,
    augment: AugmentConfig,
    d_seed: &DialoguePool,
    report: &mut RunReport,
) -> Result<SummaryPool, CliError> {
    let mode = ctx.config.failure_mode()?;
    let workers = ctx.config.run.parallelism.max(1).min(d_seed.len().max(1));
    let started = Instant::now();
    let result = if workers <= 1 {
        let pipeline = ctx.pipeline(bundle, augment)?;
        pipeline.summarize_pool(d_seed, mode, report).map_err(CliError::from)
    } else {
        summarize_parallel(ctx, bundle, augment, d_seed, workers, mode, report)
    };
    report.summarize.wall_clock_s = started.elapsed().as_secs_f64();
    result
}

fn summarize_parallel(
    ctx: &RunContext,
    bundle: &PromptBundle,
    augment: AugmentConfig,
    d_seed: &DialoguePool,
    workers: usize,
    mode: FailureMode,
    report: &mut RunReport,
) -> Result<SummaryPool, CliError> {
    if d_seed.len() < sda_core::prompting::EXEMPLARS_PER_PROMPT {
        return Err(CliError::from(AugmentError::SeedPoolTooSmall {
            need: sda_core::prompting::EXEMPLARS_PER_PROMPT,
            got: d_seed.len(),
        }));
    }
    let generator = ctx.providers.generator.as_ref();
    let embedder = ctx.providers.embedder.as_ref();
    let trace = ctx.trace.as_ref();
    let next = AtomicUsize::new(0);
    let n = d_seed.len();

    type ItemResult = (usize, Result<sda_core::corpus::Summary, AugmentError>, RunReport);
    let mut collected: Vec<ItemResult> = Vec::with_capacity(n);

    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(workers);
        for _ in 0..workers {
            let augment = augment.clone();
            let next = &next;
            handles.push(scope.spawn(move || {
                let pipeline = Pipeline::new(
                    generator as &dyn TextGenerator,
                    embedder as &dyn TextEmbedder,
                    bundle,
                    ctx.config.thresholds(),
                    augment,
                )
                .expect("config validated before spawning workers");
                let pipeline = match trace {
                    Some(t) => pipeline.with_trace(t as &dyn PromptTrace),
                    None => pipeline,
                };
                let mut out: Vec<ItemResult> = Vec::new();
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let mut local = RunReport::new();
                    let result = pipeline.summarize_dialogue(&d_seed.items()[i], &mut local);
                    out.push((i, result, local));
                }
                out
            }));
        }
        for handle in handles {
            collected.extend(handle.join().expect("summarize worker panicked"));
        }
    });
    collected.sort_by_key(|(i, _, _)| *i);

    let mut pool = SummaryPool::new(PoolRole::Seed);
    for (_, result, local) in collected {
        report.merge(&local);
        match result {
            Ok(summary) => pool.push(summary).map_err(AugmentError::from)?,
            Err(err @ AugmentError::Backend { .. }) if mode == FailureMode::SkipAndRecord => {
                report.summarize.items_skipped += 1;
                report.summarize.failures.push(err.to_string());
            }
            Err(err) => return Err(err.into()),
        }
    }
    Ok(pool)
}

pub fn cmd_summarize(config: FileConfig) -> Result<(), CliError> {
    let ctx = RunContext::new(config, "summarize")?;
    ctx.ensure_fresh(&[SEED_SUMMARIES_FILE, &ctx.report_name(), &ctx.manifest_name()])?;
    let d_seed = ctx.load_seed_dialogues()?;
    let bundle = ctx.load_bundle()?;
    let augment = ctx.config.augment_config()?;
    let mut report = RunReport::new();
    let s_seed = summarize_stage(&ctx, &bundle, augment, &d_seed, &mut report)?;
    save_summary_pool(&s_seed, &ctx.out_dir.join(SEED_SUMMARIES_FILE))?;
    ctx.finish(&report)
}

pub fn cmd_augment_summaries(config: FileConfig) -> Result<(), CliError> {
    let ctx = RunContext::new(config, "augment-summaries")?;
    ctx.ensure_fresh(&[AUG_SUMMARIES_FILE, &ctx.report_name(), &ctx.manifest_name()])?;
    let s_seed_path = ctx.out_dir.join(SEED_SUMMARIES_FILE);
    if !s_seed_path.exists() {
        return Err(CliError::Config(format!(
            "`{}` does not exist; run the summarize stage first",
            s_seed_path.display()
        )));
    }
    let s_seed = load_summary_pool(&s_seed_path, PoolRole::Seed)?;
    let bundle = ctx.load_bundle()?;
    let pipeline = ctx.pipeline(&bundle, ctx.config.augment_config()?)?;

    let mut report = RunReport::new();
    let started = Instant::now();
    let result = pipeline.augment_summaries(&s_seed, &mut report);
    report.augment_summaries.wall_clock_s = started.elapsed().as_secs_f64();
    match result {
        Ok(s_aug) => {
            save_summary_pool(&s_aug, &ctx.out_dir.join(AUG_SUMMARIES_FILE))?;
            ctx.finish(&report)
        }
        Err(err) => {
            ctx.finish(&report)?;
            Err(err.into())
        }
    }
}

fn generate_stage(
    ctx: &RunContext,
    bundle: &PromptBundle,
    s_aug: &SummaryPool,
    report: &mut RunReport,
) -> Result<DialoguePool, CliError> {
    let pipeline = ctx.pipeline(bundle, ctx.config.augment_config()?)?;
    let started = Instant::now();
    let result = pipeline.build_dialogue_pool(s_aug, report);
    report.generate_dialogues.wall_clock_s = started.elapsed().as_secs_f64();
    let d_aug = result.map_err(CliError::from)?;
    if d_aug.is_empty() && !s_aug.is_empty() {
        return Err(CliError::Budget(format!(
            "no dialogue was generated: all {} summaries exhausted their reset budgets",
            s_aug.len()
        )));
    }
    Ok(d_aug)
}

pub fn cmd_generate(config: FileConfig) -> Result<(), CliError> {
    let ctx = RunContext::new(config, "generate")?;
    ctx.ensure_fresh(&[AUG_DIALOGUES_FILE, &ctx.report_name(), &ctx.manifest_name()])?;
    let s_aug_path = ctx.out_dir.join(AUG_SUMMARIES_FILE);
    if !s_aug_path.exists() {
        return Err(CliError::Config(format!(
            "`{}` does not exist; run the augment-summaries stage first",
            s_aug_path.display()
        )));
    }
    let s_aug = load_summary_pool(&s_aug_path, PoolRole::Augmented)?;
    let bundle = ctx.load_bundle()?;
    let mut report = RunReport::new();
    match generate_stage(&ctx, &bundle, &s_aug, &mut report) {
        Ok(d_aug) => {
            save_dialogue_pool(&d_aug, &ctx.out_dir.join(AUG_DIALOGUES_FILE))?;
            ctx.finish(&report)
        }
        Err(err) => {
            ctx.finish(&report)?;
            Err(err)
        }
    }
}

fn evaluate_stage(
    ctx: &RunContext,
    d_seed: &DialoguePool,
    pool: &DialoguePool,
) -> Result<(), CliError> {
    let scorer = ctx.providers.scorer.as_deref().map(|s| s as &dyn sda_core::backend::TextScorer);
    let (report, analysis) =
        evaluate_pools(d_seed, pool, ctx.providers.embedder.as_ref(), scorer, ctx.config.rng_seed)?;
    ctx.write_json(DIVERSITY_REPORT_FILE, &DiversityReportDto::from(&report))?;
    let rows = export_records(d_seed, pool, &analysis);
    let dto_rows: Vec<EmbeddingRowDto> = rows.iter().map(EmbeddingRowDto::from).collect();
    ctx.write_jsonl(EMBEDDINGS_FILE, &dto_rows)?;
    if ctx.verbose() {
        eprintln!(
            "semantic diversity {:.6} (k = {}), distinct-1 {:.4} ({:.2}), distinct-2 {:.4} ({:.2}){}",
            report.sd_value,
            report.k,
            report.distinct_1,
            report.distinct_1 * 100.0,
            report.distinct_2,
            report.distinct_2 * 100.0,
            match report.mean_ppl {
                Some(ppl) => format!(", mean perplexity {ppl:.4}"),
                None => String::new(),
            }
        );
    }
    Ok(())
}

pub fn cmd_evaluate(config: FileConfig, pool_path: Option<PathBuf>) -> Result<(), CliError> {
    let ctx = RunContext::new(config, "evaluate")?;
    ctx.ensure_fresh(&[DIVERSITY_REPORT_FILE, EMBEDDINGS_FILE, &ctx.manifest_name()])?;
    let d_seed = ctx.load_seed_dialogues()?;
    let pool_path = pool_path.unwrap_or_else(|| ctx.out_dir.join(AUG_DIALOGUES_FILE));
    if !pool_path.exists() {
        return Err(CliError::Config(format!(
            "evaluation pool `{}` does not exist",
            pool_path.display()
        )));
    }
    let pool = load_dialogue_pool(&pool_path, PoolRole::Augmented, false)?;
    evaluate_stage(&ctx, &d_seed, &pool)?;
    ctx.write_manifest()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    Mlm,
    Icl,
    IclCtx,
}

impl BaselineMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineMethod::Mlm => "mlm",
            BaselineMethod::Icl => "icl",
            BaselineMethod::IclCtx => "icl-ctx",
        }
    }

    fn output_file(self) -> &'static str {
        match self {
            BaselineMethod::Mlm => "baseline_mlm.jsonl",
            BaselineMethod::Icl => "baseline_icl.jsonl",
            BaselineMethod::IclCtx => "baseline_icl_ctx.jsonl",
        }
    }
}

pub fn cmd_baseline(
    config: FileConfig,
    method: BaselineMethod,
    count: Option<usize>,
    context_turns: Option<usize>,
) -> Result<(), CliError> {
    let mut config = config;
    if let Some(n) = context_turns {
        config.baseline.context_turns = n;
    }
    if let Some(c) = count {
        config.baseline.count = c;
    }
    let ctx = RunContext::new(config, &format!("baseline-{}", method.as_str()))?;
    ctx.ensure_fresh(&[method.output_file(), &ctx.manifest_name()])?;
    let d_seed = ctx.load_seed_dialogues()?;
    let baseline = ctx.config.baseline_config()?;
    let count = ctx.config.baseline.count;

    let started = Instant::now();
    let mut pool = DialoguePool::new(PoolRole::Augmented);
    for index in 0..count {
        let mut rng = item_rng(baseline.rng_seed, index as u64);
        let id = format!("{}-{:04}", method.as_str(), index + 1);
        let dialogue = match method {
            BaselineMethod::Mlm => {
                let infiller = ctx.providers.infiller.as_deref().ok_or_else(|| {
                    CliError::Backend(
                        "the mlm baseline needs an infill backend, but backends.infill.kind is none"
                            .into(),
                    )
                })?;
                let seed = &d_seed.items()[index % d_seed.len()];
                mlm_augment(&id, seed, infiller, &baseline, &mut rng)?
            }
            BaselineMethod::Icl => {
                icl_augment(&id, &d_seed, ctx.providers.generator.as_ref(), &baseline, &mut rng)?
            }
            BaselineMethod::IclCtx => icl_context_augment(
                &id,
                &d_seed,
                ctx.providers.generator.as_ref(),
                &baseline,
                &mut rng,
            )?,
        };
        pool.push(dialogue).map_err(AugmentError::from)?;
    }
    save_dialogue_pool(&pool, &ctx.out_dir.join(method.output_file()))?;
    if ctx.verbose() {
        eprintln!(
            "baseline {}: {} dialogue(s) in {:.2}s",
            method.as_str(),
            pool.len(),
            started.elapsed().as_secs_f64()
        );
    }
    ctx.write_manifest()
}

pub fn cmd_pipeline(config: FileConfig) -> Result<(), CliError> {
    let ctx = RunContext::new(config, "pipeline")?;
    ctx.ensure_fresh(&[
        SEED_SUMMARIES_FILE,
        AUG_SUMMARIES_FILE,
        AUG_DIALOGUES_FILE,
        DIVERSITY_REPORT_FILE,
        EMBEDDINGS_FILE,
        &ctx.report_name(),
        &ctx.manifest_name(),
    ])?;
    let d_seed = ctx.load_seed_dialogues()?;
    let bundle = ctx.load_bundle()?;
    let augment = ctx.config.augment_config()?;
    let mut report = RunReport::new();

    let s_seed = summarize_stage(&ctx, &bundle, augment.clone(), &d_seed, &mut report)?;
    save_summary_pool(&s_seed, &ctx.out_dir.join(SEED_SUMMARIES_FILE))?;

    let pipeline = ctx.pipeline(&bundle, augment)?;
    let started = Instant::now();
    let result = pipeline.augment_summaries(&s_seed, &mut report);
    report.augment_summaries.wall_clock_s = started.elapsed().as_secs_f64();
    let s_aug = match result {
        Ok(pool) => pool,
        Err(err) => {
            ctx.finish(&report)?;
            return Err(err.into());
        }
    };
    save_summary_pool(&s_aug, &ctx.out_dir.join(AUG_SUMMARIES_FILE))?;

    let d_aug = match generate_stage(&ctx, &bundle, &s_aug, &mut report) {
        Ok(pool) => pool,
        Err(err) => {
            ctx.finish(&report)?;
            return Err(err);
        }
    };
    save_dialogue_pool(&d_aug, &ctx.out_dir.join(AUG_DIALOGUES_FILE))?;

    evaluate_stage(&ctx, &d_seed, &d_aug)?;
    ctx.finish(&report)
}
