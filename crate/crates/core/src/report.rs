//! Report files.
//!
//! A run directory `{workspace}/runs/{run_id}` holds:
//!
//! | file                          | content                                            |
//! |-------------------------------|----------------------------------------------------|
//! | `report.json`                 | the full [`ExperimentReport`]                      |
//! | `evaluations.tsv`             | one row per evaluated description                  |
//! | `pairs.tsv`                   | pair index with seeds and counts                   |
//! | `similarity.tsv`              | labeled square group similarity matrix             |
//! | `charts/pair-NNN.hist.tsv`    | `bin_left, bin_right, count_a, count_b`            |
//! | `charts/pair-NNN.kde.tsv`     | `x, density_a, density_b`                          |
//! | `charts/pair-NNN.box.tsv`     | `group, min, q1, median, q3, max, outliers...`     |
//! | `wordfreq/<group>.tsv`        | `token, count`                                     |
//! | `prompts.txt`                 | text-to-image prompt blocks per group              |
//! | `run.json`                    | run id, timestamp and call counters                |
//! | `bundle.tsv`                  | `path, sha256` of every other file                 |
//!
//! All files except `run.json` and `bundle.tsv` depend only on the report, so
//! emitting the same report twice yields identical bytes. Reals are printed
//! with six decimals (Rust's formatter rounds exact binary ties to even).

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::{compare_rank, DescriptionEvaluation};
use crate::harness::{ExperimentReport, PairComparison};
use crate::sha256_hex;
use crate::stats::DistributionSummary;
use crate::text::slug;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid report JSON: {0}")]
    Json(String),
    #[error("bundle verification failed: {0}")]
    Bundle(String),
}

pub const EVALUATION_COLUMNS: [&str; 15] = [
    "pair",
    "rank",
    "hypothesis",
    "score1",
    "score2",
    "diff",
    "s_y",
    "t_stat",
    "df",
    "p_value",
    "significant",
    "aucroc",
    "retained",
    "strategy",
    "matcher",
];

pub const DEFAULT_PROMPT_TOP: usize = 3;

/// Six-decimal fixed notation; negative zero prints as zero.
pub fn format_real(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

pub fn pair_label(pair: &(String, String)) -> String {
    format!("{} vs {}", pair.0, pair.1)
}

fn row(out: &mut String, fields: &[String]) {
    out.push_str(&fields.join("\t"));
    out.push('\n');
}

fn evaluation_row(pair: &(String, String), rank: Option<usize>, e: &DescriptionEvaluation) -> Vec<String> {
    vec![
        pair_label(pair),
        rank.map_or_else(|| "-".to_string(), |r| r.to_string()),
        e.description.text().to_string(),
        format_real(e.score1),
        format_real(e.score2),
        format_real(e.diff),
        format_real(e.s_y),
        format_real(e.ttest.t_stat),
        format_real(e.ttest.df),
        format_real(e.ttest.p_value),
        e.ttest.significant.to_string(),
        format_real(e.auroc),
        e.retained.to_string(),
        e.description.strategy.to_string(),
        e.matcher.to_string(),
    ]
}

/// One row per evaluation: retained rows of each pair in rank order, then
/// the rest with rank `-`.
pub fn evaluations_table(report: &ExperimentReport) -> String {
    evaluations_table_for(&report.pairs)
}

pub fn evaluations_table_for(pairs: &[PairComparison]) -> String {
    let mut out = String::new();
    row(&mut out, &EVALUATION_COLUMNS.map(String::from));
    for p in pairs {
        for (i, e) in p.evaluations.iter().enumerate() {
            row(&mut out, &evaluation_row(&p.pair, Some(i + 1), e));
        }
        for e in &p.rejected {
            row(&mut out, &evaluation_row(&p.pair, None, e));
        }
    }
    out
}

pub fn pairs_table(report: &ExperimentReport) -> String {
    let mut out = String::new();
    row(
        &mut out,
        &[
            "index",
            "group_a",
            "group_b",
            "seed",
            "candidates",
            "retained",
            "rejected",
            "failures",
            "status",
        ]
        .map(String::from),
    );
    for (i, p) in report.pairs.iter().enumerate() {
        row(
            &mut out,
            &[
                i.to_string(),
                p.pair.0.clone(),
                p.pair.1.clone(),
                p.seed.to_string(),
                p.candidates.len().to_string(),
                p.evaluations.len().to_string(),
                p.rejected.len().to_string(),
                p.failures.len().to_string(),
                "ok".into(),
            ],
        );
    }
    for f in &report.failed_pairs {
        row(
            &mut out,
            &[
                "-".into(),
                f.pair.0.clone(),
                f.pair.1.clone(),
                "-".into(),
                "0".into(),
                "0".into(),
                "0".into(),
                "0".into(),
                "failed".into(),
            ],
        );
    }
    out
}

pub fn similarity_table(report: &ExperimentReport) -> String {
    let sim = &report.similarity;
    let mut out = String::new();
    let mut header = vec!["group".to_string()];
    header.extend(sim.groups.iter().cloned());
    row(&mut out, &header);
    for (g, values) in sim.groups.iter().zip(&sim.values) {
        let mut fields = vec![g.clone()];
        fields.extend(values.iter().map(|v| format_real(*v)));
        row(&mut out, &fields);
    }
    out
}

pub fn histogram_table(a: &DistributionSummary, b: &DistributionSummary) -> String {
    let mut out = String::new();
    row(
        &mut out,
        &["bin_left", "bin_right", "count_a", "count_b"].map(String::from),
    );
    for (x, y) in a.histogram.iter().zip(&b.histogram) {
        row(
            &mut out,
            &[
                format_real(x.left),
                format_real(x.right),
                x.count.to_string(),
                y.count.to_string(),
            ],
        );
    }
    out
}

/// Densities missing for a zero-spread side print as `-`.
pub fn kde_table(a: &DistributionSummary, b: &DistributionSummary) -> String {
    let mut out = String::new();
    row(&mut out, &["x", "density_a", "density_b"].map(String::from));
    let xs: Vec<f64> = if a.kde.is_empty() { &b.kde } else { &a.kde }
        .iter()
        .map(|p| p.0)
        .collect();
    let density = |curve: &[(f64, f64)], i: usize| curve.get(i).map_or_else(|| "-".to_string(), |p| format_real(p.1));
    for (i, x) in xs.iter().enumerate() {
        row(&mut out, &[format_real(*x), density(&a.kde, i), density(&b.kde, i)]);
    }
    out
}

pub fn box_table(pair: &(String, String), a: &DistributionSummary, b: &DistributionSummary) -> String {
    let mut out = String::new();
    row(
        &mut out,
        &["group", "min", "q1", "median", "q3", "max", "outliers"].map(String::from),
    );
    for (group, s) in [(&pair.0, a), (&pair.1, b)] {
        let f = &s.five_number;
        let mut fields = vec![
            group.clone(),
            format_real(f.min),
            format_real(f.q1),
            format_real(f.median),
            format_real(f.q3),
            format_real(f.max),
        ];
        fields.extend(s.outliers.iter().map(|v| format_real(*v)));
        row(&mut out, &fields);
    }
    out
}

pub fn word_frequency_table(freqs: &[(String, usize)]) -> String {
    let mut out = String::new();
    row(&mut out, &["token", "count"].map(String::from));
    for (token, count) in freqs {
        row(&mut out, &[token.clone(), count.to_string()]);
    }
    out
}

/// One `[group]` section per group with its `top_m` best retained
/// descriptions (rank order across all pairs where it is group A), or `EMPTY`.
pub fn export_t2i_prompts(report: &ExperimentReport, top_m: usize) -> String {
    let mut out = String::new();
    for (i, g) in report.groups.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "[{g}]");
        let mut retained: Vec<&DescriptionEvaluation> = report
            .pairs
            .iter()
            .filter(|p| &p.pair.0 == g)
            .flat_map(|p| &p.evaluations)
            .collect();
        retained.sort_by(|x, y| compare_rank(x, y));
        let mut seen = HashSet::new();
        let texts: Vec<&str> = retained
            .into_iter()
            .filter(|e| seen.insert(e.description.normalized_text()))
            .take(top_m)
            .map(|e| e.description.text())
            .collect();
        if texts.is_empty() {
            out.push_str("EMPTY\n");
        }
        for t in texts {
            let _ = writeln!(out, "{t}");
        }
    }
    out
}

/// Relative path → contents of every data file for `report`.
pub fn data_files(report: &ExperimentReport, prompt_top: usize) -> Result<BTreeMap<String, String>, ReportError> {
    let mut files = BTreeMap::new();
    let json = serde_json::to_string_pretty(report).map_err(|e| ReportError::Json(e.to_string()))?;
    files.insert("report.json".to_string(), json + "\n");
    files.insert("evaluations.tsv".to_string(), evaluations_table(report));
    files.insert("pairs.tsv".to_string(), pairs_table(report));
    files.insert("similarity.tsv".to_string(), similarity_table(report));
    files.insert("prompts.txt".to_string(), export_t2i_prompts(report, prompt_top));
    for d in &report.distributions {
        let stem = format!("charts/pair-{:03}", d.pair_index);
        files.insert(format!("{stem}.hist.tsv"), histogram_table(&d.side_a, &d.side_b));
        files.insert(format!("{stem}.kde.tsv"), kde_table(&d.side_a, &d.side_b));
        files.insert(format!("{stem}.box.tsv"), box_table(&d.pair, &d.side_a, &d.side_b));
    }
    for (g, slug) in group_slugs(&report.groups) {
        let freqs = report.word_frequencies.get(g).map(Vec::as_slice).unwrap_or_default();
        files.insert(format!("wordfreq/{slug}.tsv"), word_frequency_table(freqs));
    }
    Ok(files)
}

/// File-name slugs per group, suffixed with `-2`, `-3`, .. on collision.
pub fn group_slugs(groups: &[String]) -> Vec<(&String, String)> {
    let mut used = HashSet::new();
    groups
        .iter()
        .map(|g| {
            let base = slug(g);
            let mut candidate = base.clone();
            let mut n = 2;
            while !used.insert(candidate.clone()) {
                candidate = format!("{base}-{n}");
                n += 1;
            }
            (g, candidate)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub run_id: String,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub backend_id: String,
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub run_id: String,
    pub dir: PathBuf,
    pub files: Vec<BundleFile>,
}

pub const BUNDLE_FILE: &str = "bundle.tsv";
pub const RUN_FILE: &str = "run.json";

/// `sha256(config ‖ timestamp)`, first 16 hex digits.
pub fn make_run_id(config_text: &str, created_at: u64) -> String {
    sha256_hex(format!("{config_text}\n{created_at}"))[..16].to_string()
}

fn write_file(dir: &Path, rel: &str, contents: &[u8]) -> Result<(), ReportError> {
    let path = dir.join(rel);
    let io = |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    fs::write(&path, contents).map_err(io)
}

/// Writes every data file, `run.json` and `bundle.tsv` into `dir`.
pub fn write_bundle(
    report: &ExperimentReport,
    dir: &Path,
    meta: &RunMetadata,
    prompt_top: usize,
) -> Result<ReportBundle, ReportError> {
    let mut files = data_files(report, prompt_top)?;
    let run_json = serde_json::to_string_pretty(meta).map_err(|e| ReportError::Json(e.to_string()))?;
    files.insert(RUN_FILE.to_string(), run_json + "\n");

    let mut listed = Vec::new();
    for (rel, contents) in &files {
        write_file(dir, rel, contents.as_bytes())?;
        listed.push(BundleFile {
            path: rel.clone(),
            sha256: sha256_hex(contents),
        });
    }
    let mut manifest = String::new();
    for f in &listed {
        let _ = writeln!(manifest, "{}\t{}", f.path, f.sha256);
    }
    write_file(dir, BUNDLE_FILE, manifest.as_bytes())?;
    Ok(ReportBundle {
        run_id: meta.run_id.clone(),
        dir: dir.to_path_buf(),
        files: listed,
    })
}

pub fn load_report(dir: &Path) -> Result<ExperimentReport, ReportError> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ReportError::Json(e.to_string()))
}

pub fn load_run_metadata(dir: &Path) -> Result<RunMetadata, ReportError> {
    let path = dir.join(RUN_FILE);
    let text = fs::read_to_string(&path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ReportError::Json(e.to_string()))
}

/// Recomputes every digest listed in `bundle.tsv`.
pub fn verify_bundle(dir: &Path) -> Result<Vec<BundleFile>, ReportError> {
    let path = dir.join(BUNDLE_FILE);
    let text = fs::read_to_string(&path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut files = Vec::new();
    for line in text.lines() {
        let (rel, digest) = line
            .split_once('\t')
            .ok_or_else(|| ReportError::Bundle(format!("malformed line {line:?}")))?;
        let contents = fs::read(dir.join(rel)).map_err(|source| ReportError::Io {
            path: rel.to_string(),
            source,
        })?;
        let actual = sha256_hex(&contents);
        if actual != digest {
            return Err(ReportError::Bundle(format!("{rel}: expected {digest}, found {actual}")));
        }
        files.push(BundleFile {
            path: rel.to_string(),
            sha256: digest.to_string(),
        });
    }
    Ok(files)
}

/// Splits tab-separated text into rows of fields.
pub fn parse_tsv(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split('\t').map(String::from).collect())
        .collect()
}
