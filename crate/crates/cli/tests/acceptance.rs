//! Acceptance checks. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.
// `!(x <= tol)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use stylediff::config::RunConfig;
use stylediff::dataset::{sample_group, DatasetManifest};
use stylediff::evaluator::{rank_and_filter, DescriptionEvaluation, Evaluator, EvaluatorConfig, Matcher};
use stylediff::extractor::{PromptTemplates, Strategy, StyleDescription};
use stylediff::fixtures::synthetic_manifest;
use stylediff::gateway::{Gateway, GatewayOptions, MockBackend, MockConfig};
use stylediff::harness::{significance_rate, ExperimentReport, Pipeline};
use stylediff::report::{self, format_real, parse_tsv, RunMetadata};
use stylediff::stats::{auroc, regularized_incomplete_beta, welch_t_test, TTestOptions};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, Option<Duration>, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const PLANTED: &str = "Sweeping curvilinear forms with futuristic aesthetics.";

fn main() {
    let criteria: Vec<Criterion> = vec![
        (
            1,
            "statistics oracle equivalence",
            Some(Duration::from_secs(10)),
            statistics_oracles,
        ),
        (2, "reported arithmetic and ranking", None, reported_arithmetic),
        (
            3,
            "planted signal end to end",
            Some(Duration::from_secs(10)),
            planted_signal,
        ),
        (4, "symmetry suite", None, symmetry),
        (5, "scale invariance", None, scale_invariance),
        (6, "determinism and cache", None, determinism_and_cache),
        (
            7,
            "81 pairs, 270 evaluations, significance rate",
            Some(Duration::from_secs(60)),
            shape,
        ),
        (8, "report integrity", None, report_integrity),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, limit, check) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| Err(format!("panicked: {}", panic_message(&e))));
        let elapsed = start.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS  {name} ({elapsed:.2?}) {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n}: FAIL  {name} ({elapsed:.2?}) {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_message(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn statistics_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..500 {
        let n = rng.random_range(1..=200);
        let m = rng.random_range(1..=200);
        let levels = if case % 2 == 0 { 12 } else { 1_000_000 };
        let mut draw = |len| {
            (0..len)
                .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
                .collect::<Vec<_>>()
        };
        let (pos, neg) = (draw(n), draw(m));
        let mut twice = 0u64;
        for p in &pos {
            for q in &neg {
                twice += if p > q {
                    2
                } else if p == q {
                    1
                } else {
                    0
                };
            }
        }
        let oracle = twice as f64 / (2 * n * m) as f64;
        let got = auroc(&pos, &neg).map_err(|e| e.to_string())?;
        ensure!(got == oracle, "auroc case {case}: {got} vs {oracle}");
    }

    #[derive(Deserialize)]
    struct WelchCase {
        a: Vec<f64>,
        b: Vec<f64>,
        t: f64,
        df: f64,
        p: f64,
    }
    let cases: Vec<WelchCase> = serde_json::from_str(include_str!("../../core/tests/fixtures/welch_reference.json"))
        .map_err(|e| e.to_string())?;
    ensure!(cases.len() == 100, "expected 100 reference cases");
    let mut worst: f64 = 0.0;
    for (i, c) in cases.iter().enumerate() {
        let r = welch_t_test(&c.a, &c.b, 0.05).map_err(|e| e.to_string())?;
        let err = (r.t_stat - c.t)
            .abs()
            .max((r.df - c.df).abs())
            .max((r.p_value - c.p).abs());
        worst = worst.max(err);
        ensure!(err <= 1e-8, "welch case {i}: error {err:e}");
    }

    let binom = |n: u64, k: u64| (1..=k).fold(1.0, |acc, i| acc * (n - k + i) as f64 / i as f64);
    let mut worst_beta: f64 = 0.0;
    for a in 1..=5u64 {
        for b in 1..=5u64 {
            for step in 0..=50 {
                let x = step as f64 / 50.0;
                let n = a + b - 1;
                let poly: f64 = (a..=n)
                    .map(|j| binom(n, j) * x.powi(j as i32) * (1.0 - x).powi((n - j) as i32))
                    .sum();
                let got = regularized_incomplete_beta(a as f64, b as f64, x).map_err(|e| e.to_string())?;
                worst_beta = worst_beta.max((got - poly).abs());
                ensure!((got - poly).abs() <= 1e-10, "I_{x}({a},{b}): {got} vs {poly}");
            }
        }
    }
    Ok(format!("welch max err {worst:.1e}, beta max err {worst_beta:.1e}"))
}

fn description(text: &str) -> StyleDescription {
    StyleDescription::new(
        text,
        Strategy::TextBased,
        ("zaha hadid".into(), "riken yamamoto".into()),
        0,
    )
    .unwrap()
}

fn reported_arithmetic() -> Outcome {
    let printed = format_real(0.382 - 0.258);
    ensure!(printed == "0.124000", "diff printed as {printed}");

    let rows = [
        ("The depiction of a building with an emphasis on curvilinear forms and futuristic aesthetics.", 0.382, 0.258, 0.959),
        ("A strikingly modern building with sleek curved facade, providing a sense of movement and dynamism to the static structure.", 0.361, 0.267, 0.929),
        ("A futuristic building featuring an architectural design presented via an artist's rendering, located in an urban setting.", 0.332, 0.237, 0.925),
        ("An exterior image of a building demonstrating cutting-edge architecture with a sweeping curved design, set amidst a building cityscape.", 0.337, 0.227, 0.921),
    ];
    let mut evals: Vec<DescriptionEvaluation> = rows
        .iter()
        .map(|(text, s1, s2, auc)| {
            let a: Vec<(String, f64)> = (0..20)
                .map(|i| (format!("a{i:02}"), s1 + (i as f64 - 9.5) * 0.001))
                .collect();
            let b: Vec<(String, f64)> = (0..20)
                .map(|i| (format!("b{i:02}"), s2 + (i as f64 - 9.5) * 0.001))
                .collect();
            let mut e = DescriptionEvaluation::from_scores(
                description(text),
                Matcher::Embedding,
                a,
                b,
                &TTestOptions::default(),
            )
            .unwrap();
            e.auroc = *auc;
            e
        })
        .collect();
    let first = &evals[0];
    ensure!(format_real(first.score1) == "0.382000", "score1 {}", first.score1);
    ensure!(format_real(first.diff) == "0.124000", "diff {}", first.diff);

    evals.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
    let ranked = rank_and_filter(&evals, 0.05);
    let order: Vec<f64> = ranked.iter().map(|e| e.auroc).collect();
    ensure!(order == [0.959, 0.929, 0.925, 0.921], "order {order:?}");
    Ok(String::new())
}

fn planted_workspace(dir: &Path, groups: &[(&str, usize)], extra: &str, planted: &str) -> RunConfig {
    let manifest = synthetic_manifest(groups);
    std::fs::write(dir.join("manifest.tsv"), manifest.to_manifest_string()).unwrap();
    let text = format!("manifest = \"manifest.tsv\"\n{extra}\n[backend.mock]\n{planted}\n");
    std::fs::write(dir.join("run.toml"), text).unwrap();
    RunConfig::load(&dir.join("run.toml")).unwrap()
}

fn planted_signal() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let planted = format!(
        "distractors = 4\n[backend.mock.planted]\nnoise = 0.1\n[backend.mock.planted.descriptions]\nA = [\"{PLANTED}\"]"
    );
    let base = planted_workspace(dir.path(), &[("A", 40), ("B", 40)], "k_candidates = 5", &planted);
    let (mut min_auc, mut max_p) = (f64::INFINITY, 0.0f64);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for seed in 0..10 {
        let mut config = base.clone();
        config.master_seed = seed;
        config.backend.cache_dir = None;
        let pipeline = Pipeline::from_config(config).map_err(|e| e.to_string())?;
        ensure!(
            pipeline.gateway().backend_id().starts_with("mock-"),
            "not the mock backend"
        );
        let p = pipeline.run_pair("A", "B", 5).map_err(|e| e.to_string())?;
        ensure!(p.samples.0.len() == 20 && p.samples.1.len() == 20, "sample sizes");
        ensure!(
            p.candidates.len() == 5,
            "seed {seed}: {} candidates",
            p.candidates.len()
        );
        let mut all: Vec<&DescriptionEvaluation> = p.all_evaluations().collect();
        all.sort_by(|x, y| y.auroc.total_cmp(&x.auroc));
        let top = p.evaluations.first().ok_or(format!("seed {seed}: nothing retained"))?;
        ensure!(
            top.description.text() == PLANTED,
            "seed {seed}: top is {:?}",
            top.description.text()
        );
        ensure!(
            all[0].description.text() == PLANTED,
            "seed {seed}: planted not first overall"
        );
        min_auc = min_auc.min(top.auroc);
        max_p = max_p.max(top.ttest.p_value);
        ensure!(top.auroc >= 0.95, "seed {seed}: planted auroc {}", top.auroc);
        ensure!(top.ttest.p_value < 0.05, "seed {seed}: planted p {}", top.ttest.p_value);
        for e in all.iter().filter(|e| e.description.text() != PLANTED) {
            lo = lo.min(e.auroc);
            hi = hi.max(e.auroc);
            ensure!(
                (0.35..=0.65).contains(&e.auroc),
                "seed {seed}: distractor auroc {}",
                e.auroc
            );
        }
    }
    Ok(format!(
        "planted auroc >= {min_auc:.3}, p <= {max_p:.1e}, distractor auroc in [{lo:.3}, {hi:.3}]"
    ))
}

fn mock_gateway(manifest: &DatasetManifest, config: MockConfig) -> Gateway {
    Gateway::new(
        Arc::new(MockBackend::new(config, Some(manifest)).unwrap()),
        GatewayOptions::default(),
        None,
    )
    .unwrap()
}

fn symmetry() -> Outcome {
    let manifest = synthetic_manifest(&[("A", 40), ("B", 40)]);
    let gw = mock_gateway(&manifest, MockConfig::default());
    let prompts = PromptTemplates::default();
    let config = EvaluatorConfig::default();
    let evaluator = Evaluator::new(&gw, &prompts, &config);
    let words = [
        "curved", "brick", "glass", "timber", "roof", "facade", "white", "dark", "open", "massive",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..50 {
        let text: Vec<&str> = (0..4).map(|_| words[rng.random_range(0..words.len())]).collect();
        let d = description(&format!("{} {i}", text.join(" ")));
        let n_a = rng.random_range(5..=20);
        let n_b = rng.random_range(5..=20);
        let a = sample_group(&manifest, "A", n_a, rng.random()).unwrap();
        let b = sample_group(&manifest, "B", n_b, rng.random()).unwrap();
        let ab = evaluator.evaluate(&d, &a, &b).map_err(|e| e.to_string())?;
        let ba = evaluator.evaluate(&d, &b, &a).map_err(|e| e.to_string())?;
        ensure!((ab.diff + ba.diff).abs() <= 1e-9, "case {i}: diff");
        ensure!((ab.s_y + ba.s_y).abs() <= 1e-9, "case {i}: s_y");
        ensure!((ab.ttest.t_stat + ba.ttest.t_stat).abs() <= 1e-9, "case {i}: t");
        ensure!((ab.auroc - (1.0 - ba.auroc)).abs() <= 1e-9, "case {i}: auroc");
        ensure!((ab.ttest.p_value - ba.ttest.p_value).abs() <= 1e-9, "case {i}: p");
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let planted =
        format!("[backend.mock.planted]\nnoise = 0.1\n[backend.mock.planted.descriptions]\nA = [\"{PLANTED}\"]");
    let base = planted_workspace(
        dir.path(),
        &[("A", 40), ("B", 40)],
        "pair_mode = \"ordered-with-self\"",
        &planted,
    );
    let mut retained = 0;
    for seed in 0..20 {
        let mut config = base.clone();
        config.master_seed = seed;
        let p = Pipeline::from_config(config)
            .map_err(|e| e.to_string())?
            .run_pair("A", "A", 5)
            .map_err(|e| e.to_string())?;
        retained += p.evaluations.len();
    }
    ensure!(retained == 0, "self pairs retained {retained} descriptions");
    Ok("50 swaps, 20 self pairs".into())
}

fn scale_invariance() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report_for = |scale: f64| -> Result<ExperimentReport, String> {
        let planted = format!(
            "scale = {scale}\n[backend.mock.planted]\nnoise = 0.2\n[backend.mock.planted.descriptions]\nA = [\"{PLANTED}\"]\nB = [\"Flat brick walls.\"]"
        );
        let mut config = planted_workspace(dir.path(), &[("A", 30), ("B", 30), ("C", 30)], "", &planted);
        config.backend.cache_dir = None;
        Pipeline::from_config(config)
            .map_err(|e| e.to_string())?
            .run_all()
            .map_err(|e| e.to_string())
    };
    let base = report_for(1.0)?;
    let scaled = report_for(7.3)?;
    ensure!(base.pairs.len() == scaled.pairs.len(), "pair counts differ");
    let close = |x: f64, y: f64| x == y || (x - y).abs() <= 1e-9;
    let mut compared = 0;
    for (p, q) in base.pairs.iter().zip(&scaled.pairs) {
        let ranked = |c: &stylediff::PairComparison| {
            c.evaluations
                .iter()
                .map(|e| e.description.text().to_string())
                .collect::<Vec<_>>()
        };
        ensure!(ranked(p) == ranked(q), "ranking differs for {:?}", p.pair);
        for (x, y) in p.all_evaluations().zip(q.all_evaluations()) {
            ensure!(x.description == y.description, "descriptions differ");
            let fields = [
                (x.score1, y.score1),
                (x.score2, y.score2),
                (x.diff, y.diff),
                (x.s_y, y.s_y),
                (x.auroc, y.auroc),
                (x.ttest.t_stat, y.ttest.t_stat),
                (x.ttest.df, y.ttest.df),
                (x.ttest.p_value, y.ttest.p_value),
            ];
            for (i, (a, b)) in fields.iter().enumerate() {
                ensure!(close(*a, *b), "{:?} field {i}: {a} vs {b}", x.description.text());
            }
            for (s, t) in x
                .scores_a
                .iter()
                .chain(&x.scores_b)
                .zip(y.scores_a.iter().chain(&y.scores_b))
            {
                ensure!(s.0 == t.0 && close(s.1, t.1), "score {} differs", s.0);
            }
            ensure!(
                x.retained == y.retained && x.ttest.significant == y.ttest.significant,
                "flags differ"
            );
            compared += 1;
        }
    }
    Ok(format!("{compared} evaluations compared"))
}

fn data_files(run_dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let files = report::verify_bundle(run_dir).map_err(|e| e.to_string())?;
    files
        .into_iter()
        .filter(|f| f.path != "run.json")
        .map(|f| {
            Ok((
                f.path.clone(),
                std::fs::read(run_dir.join(&f.path)).map_err(|e| e.to_string())?,
            ))
        })
        .collect()
}

fn determinism_and_cache() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let planted =
        format!("[backend.mock.planted]\nnoise = 0.1\n[backend.mock.planted.descriptions]\nA = [\"{PLANTED}\"]");
    planted_workspace(dir.path(), &[("A", 25), ("B", 25), ("C", 25)], "", &planted);
    let config = dir.path().join("run.toml");
    let run = |id: &str| -> Result<RunMetadata, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_stylediff"))
            .args(["run", config.to_str().unwrap(), "--seed", "17", "--run-id", id])
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(
            out.status.success(),
            "run {id} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        report::load_run_metadata(&dir.path().join("runs").join(id)).map_err(|e| e.to_string())
    };
    let cold = run("cold")?;
    let warm = run("warm")?;
    ensure!(cold.backend_calls > 0, "cold run made no backend calls");
    ensure!(
        warm.backend_calls == 0,
        "warm run made {} backend calls",
        warm.backend_calls
    );
    let a = data_files(&dir.path().join("runs/cold"))?;
    let b = data_files(&dir.path().join("runs/warm"))?;
    ensure!(a.keys().eq(b.keys()), "file sets differ");
    for (path, bytes) in &a {
        ensure!(&b[path] == bytes, "{path} differs");
    }
    Ok(format!(
        "{} data files identical, cold calls {}, warm calls 0",
        a.len(),
        cold.backend_calls
    ))
}

const GROUPS: [&str; 9] = [
    "aalto", "ando", "hadid", "kahn", "mies", "siza", "wang", "wright", "yamamoto",
];

fn strong_signal_report(dir: &Path) -> Result<ExperimentReport, String> {
    let groups: Vec<(&str, usize)> = GROUPS.iter().map(|g| (*g, 24)).collect();
    let mut planted =
        String::from("distractors = 0\n[backend.mock.planted]\nnoise = 0.1\n[backend.mock.planted.descriptions]\n");
    for g in GROUPS {
        planted.push_str(&format!(
            "{g} = [\"{g} massing is compact.\", \"{g} facades are layered.\", \"{g} roofs are expressive.\", \"{g} openings are rhythmic.\"]\n"
        ));
    }
    let config = planted_workspace(
        dir,
        &groups,
        "pair_mode = \"ordered-with-self\"\ntotal_candidates = 270",
        &planted,
    );
    Pipeline::from_config(config)
        .map_err(|e| e.to_string())?
        .run_all()
        .map_err(|e| e.to_string())
}

fn shape() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = strong_signal_report(dir.path())?;
    ensure!(
        report.pairs.len() + report.failed_pairs.len() == 81,
        "{} pairs",
        report.pairs.len()
    );
    ensure!(
        report.failed_pairs.is_empty(),
        "failed pairs: {:?}",
        report.failed_pairs
    );
    ensure!(
        report.total_evaluations == 270,
        "{} evaluations",
        report.total_evaluations
    );
    let rate = significance_rate(&report).map_err(|e| e.to_string())?;
    ensure!(rate > 0.80, "significance rate {rate}");
    Ok(format!("81 pairs, 270 evaluations, significance rate {rate:.4}"))
}

fn report_integrity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = strong_signal_report(dir.path())?;

    let sim = &report.similarity;
    ensure!(sim.groups.len() == 9, "similarity covers {} groups", sim.groups.len());
    for i in 0..sim.groups.len() {
        ensure!((sim.values[i][i] - 1.0).abs() <= 1e-9, "diagonal {i}");
        for j in 0..sim.groups.len() {
            ensure!(
                (sim.values[i][j] - sim.values[j][i]).abs() <= 1e-9,
                "asymmetric at {i},{j}"
            );
        }
    }
    for d in &report.distributions {
        let pair = &report.pairs[d.pair_index];
        for (summary, n) in [(&d.side_a, pair.samples.0.len()), (&d.side_b, pair.samples.1.len())] {
            let total: usize = summary.histogram.iter().map(|b| b.count).sum();
            ensure!(
                total == n && summary.n == n,
                "histogram of pair {} holds {total} of {n}",
                d.pair_index
            );
        }
    }

    let run_dir = dir.path().join("bundle");
    let meta = RunMetadata {
        run_id: "acceptance".into(),
        created_at: 0,
        backend_id: report.backend_id.clone(),
        backend_calls: 0,
        cache_hits: 0,
        version: "0".into(),
    };
    let bundle = report::write_bundle(&report, &run_dir, &meta, 3).map_err(|e| e.to_string())?;
    let verified = report::verify_bundle(&run_dir).map_err(|e| e.to_string())?;
    ensure!(verified == bundle.files, "bundle listing differs from verification");

    let mut loaded = report::load_report(&run_dir).map_err(|e| e.to_string())?;
    // The base directory is a local path and is deliberately not stored.
    loaded.config.set_base_dir(dir.path());
    ensure!(loaded == report, "report.json does not round-trip");
    let mut numbers = 0;
    for f in bundle
        .files
        .iter()
        .filter(|f| f.path.ends_with(".tsv") && f.path != "bundle.tsv")
    {
        let text = std::fs::read_to_string(run_dir.join(&f.path)).map_err(|e| e.to_string())?;
        let rows = parse_tsv(&text);
        let width = rows[0].len();
        for (i, row) in rows.iter().enumerate().skip(1) {
            ensure!(
                f.path.ends_with(".box.tsv") || row.len() == width,
                "{}: row {i} has {} fields",
                f.path,
                row.len()
            );
            for field in row.iter().filter(|s| s.contains('.') && s.parse::<f64>().is_ok()) {
                let reprinted = format_real(field.parse().unwrap());
                ensure!(&reprinted == field, "{}: {field} reprints as {reprinted}", f.path);
                numbers += 1;
            }
        }
    }
    let sim_rows = parse_tsv(&std::fs::read_to_string(run_dir.join("similarity.tsv")).map_err(|e| e.to_string())?);
    for (i, row) in sim_rows.iter().enumerate().skip(1) {
        for (j, cell) in row.iter().enumerate().skip(1) {
            ensure!(*cell == sim_rows[j][i], "similarity.tsv asymmetric at {i},{j}");
        }
    }
    Ok(format!(
        "{} files verified, {numbers} reals round-trip",
        bundle.files.len()
    ))
}
