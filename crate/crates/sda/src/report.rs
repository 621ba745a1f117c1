//! Serialized run reports and the diversity report.
//!
//! The persisted report carries only deterministic fields (counters, ids,
//! verdicts); stage wall-clock times go to stderr instead, so two runs with
//! the same seed produce byte-identical report files.

use serde::Serialize;

use sda_core::augmentor::{RunReport, StageReport, VerdictRecord};
use sda_core::metrics::{DiversityReport, EmbeddingExportRecord};

#[derive(Serialize)]
pub struct RejectsDto {
    pub missing_speaker_marker: u64,
    pub too_short: u64,
    pub rouge_too_high: u64,
    pub similarity_too_high: u64,
    pub malformed: u64,
}

#[derive(Serialize)]
pub struct StageDto {
    pub generated: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub rejects: RejectsDto,
    pub retries: u64,
    pub resets: u64,
    pub df_rejections: u64,
    pub generation_calls: u64,
    pub embedding_calls: u64,
    pub items_completed: u64,
    pub items_skipped: u64,
    pub failures: Vec<String>,
}

impl From<&StageReport> for StageDto {
    fn from(stage: &StageReport) -> Self {
        StageDto {
            generated: stage.generated,
            accepted: stage.accepted,
            rejected: stage.rejected,
            rejects: RejectsDto {
                missing_speaker_marker: stage.rejects.missing_speaker_marker,
                too_short: stage.rejects.too_short,
                rouge_too_high: stage.rejects.rouge_too_high,
                similarity_too_high: stage.rejects.similarity_too_high,
                malformed: stage.rejects.malformed,
            },
            retries: stage.retries,
            resets: stage.resets,
            df_rejections: stage.df_rejections,
            generation_calls: stage.generation_calls,
            embedding_calls: stage.embedding_calls,
            items_completed: stage.items_completed,
            items_skipped: stage.items_skipped,
            failures: stage.failures.clone(),
        }
    }
}

#[derive(Serialize)]
pub struct VerdictDto {
    pub stage: &'static str,
    pub id: String,
    pub accepted: bool,
    pub reason: &'static str,
    pub score: Option<f64>,
}

impl From<&VerdictRecord> for VerdictDto {
    fn from(v: &VerdictRecord) -> Self {
        VerdictDto {
            stage: v.stage.as_str(),
            id: v.id.clone(),
            accepted: v.accepted,
            reason: v.reason.as_str(),
            score: v.score,
        }
    }
}

#[derive(Serialize)]
pub struct RunReportDto {
    pub summarize: StageDto,
    pub augment_summaries: StageDto,
    pub generate_dialogues: StageDto,
    pub skipped_summaries: Vec<String>,
    pub verdicts: Vec<VerdictDto>,
}

impl From<&RunReport> for RunReportDto {
    fn from(report: &RunReport) -> Self {
        RunReportDto {
            summarize: StageDto::from(&report.summarize),
            augment_summaries: StageDto::from(&report.augment_summaries),
            generate_dialogues: StageDto::from(&report.generate_dialogues),
            skipped_summaries: report.skipped_summaries.clone(),
            verdicts: report.verdicts.iter().map(VerdictDto::from).collect(),
        }
    }
}

#[derive(Serialize)]
pub struct DiversityReportDto {
    pub sd_value: f64,
    pub k: usize,
    pub distinct_1: f64,
    pub distinct_2: f64,
    /// The same ratios scaled by 100, as commonly reported.
    pub distinct_1_pct: f64,
    pub distinct_2_pct: f64,
    pub mean_ppl: Option<f64>,
    pub per_point_distances: Vec<f64>,
}

impl From<&DiversityReport> for DiversityReportDto {
    fn from(report: &DiversityReport) -> Self {
        DiversityReportDto {
            sd_value: report.sd_value,
            k: report.k,
            distinct_1: report.distinct_1,
            distinct_2: report.distinct_2,
            distinct_1_pct: report.distinct_1 * 100.0,
            distinct_2_pct: report.distinct_2 * 100.0,
            mean_ppl: report.mean_ppl,
            per_point_distances: report.per_point_distances.clone(),
        }
    }
}

#[derive(Serialize)]
pub struct EmbeddingRowDto<'a> {
    pub id: &'a str,
    pub pool: &'static str,
    pub embedding: &'a [f64],
    pub centroid: usize,
    pub distance: f64,
}

impl<'a> From<&'a EmbeddingExportRecord> for EmbeddingRowDto<'a> {
    fn from(row: &'a EmbeddingExportRecord) -> Self {
        EmbeddingRowDto {
            id: &row.id,
            pool: row.pool.as_str(),
            embedding: &row.embedding,
            centroid: row.centroid,
            distance: row.distance,
        }
    }
}

/// Human-readable stage summary for stderr, including wall-clock times.
pub fn stage_summary_lines(report: &RunReport) -> Vec<String> {
    let line = |name: &str, s: &StageReport| {
        format!(
            "stage {name}: generated {} accepted {} rejected {} (retries {}, resets {}, \
             df-rejections {}) calls {}+{} items {}/{} skipped in {:.2}s",
            s.generated,
            s.accepted,
            s.rejected,
            s.retries,
            s.resets,
            s.df_rejections,
            s.generation_calls,
            s.embedding_calls,
            s.items_completed,
            s.items_skipped,
            s.wall_clock_s,
        )
    };
    vec![
        line("summarize", &report.summarize),
        line("augment-summaries", &report.augment_summaries),
        line("generate", &report.generate_dialogues),
    ]
}
