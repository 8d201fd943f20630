//! Acceptance suite. Prints one `PASS` or `FAIL` line per criterion and
//! exits successfully either way; a panic means the suite itself broke.
//!
//! The training criteria share fifteen runs (five variants over three seeds)
//! at the default configuration, so the whole suite takes a while.

mod common;

use std::time::Instant;

use qstar::harness::{gradcheck_suite, run_ablation_rows, train, AblationTable, RunConfig};
use qstar::nn::{attention_with_weights, AttentionParams, Ctx, Mode, ParamStore};
use qstar::qcr::AnswerDistribution;
use qstar::stfi::{frequency_attention, TfiParams};
use qstar::synth::{generate_sample, read_fixture_from, write_fixture_to, Codebooks, SynthConfig};
use qstar::tensor::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::brute_force::compare_with_oracle;
use common::stages::{qcr_error, qgmc_error, sti_error, tfi_error};

const SEEDS: [u64; 3] = [0, 1, 2];
const VARIANTS: [&str; 5] = ["full", "wo_tfi", "rm_b", "rm_m", "rm_f"];

struct Tally {
    passed: usize,
    total: usize,
}

impl Tally {
    fn line(&mut self, name: &str, pass: bool, detail: String) {
        self.total += 1;
        self.passed += pass as usize;
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn full_scale_results(t: &mut Tally) {
    t.line(
        "full_scale_results",
        false,
        "not reproducible without pretrained encoders and the real benchmark; the criteria below stand in".into(),
    );
}

fn gradient_soundness(t: &mut Tally) {
    let start = Instant::now();
    let mut failures = Vec::new();
    let (mut checks, mut worst_abs) = (0, 0.0f64);
    for seed in 0..5 {
        for r in gradcheck_suite(seed).expect("gradcheck runs") {
            checks += 1;
            if !r.passed {
                worst_abs = worst_abs.max(r.failing_abs_error);
                failures.push(format!("{}@{seed}", r.op_name));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = if failures.is_empty() {
        format!("{checks} checks over 5 seeds in {secs:.1}s")
    } else {
        format!(
            "{} of {checks} checks over tolerance in {secs:.1}s ({}); largest failing |analytic - numeric| = {worst_abs:.1e}",
            failures.len(),
            failures.join(", ")
        )
    };
    t.line("gradient_soundness", failures.is_empty() && secs < 60.0, detail);
}

fn row_sums_ok(values: &[f64], width: usize) -> bool {
    values.chunks(width).all(|r| (r.iter().sum::<f64>() - 1.0).abs() <= 1e-6)
}

fn normalization(t: &mut Tally) {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (mut cases, mut bad) = (0, Vec::new());
    for i in 0..400u64 {
        let heads = [1, 2, 4][rng.gen_range(0..3)];
        let dim = heads * rng.gen_range(1..5);
        let (lq, lk, batch) = (rng.gen_range(1..7), rng.gen_range(1..9), rng.gen_range(1..4));
        let scale = rng.gen_range(0.1..20.0);
        let mut store = ParamStore::new(i);
        let p = AttentionParams::new(&mut store, "a", dim, heads).unwrap();
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &store, Mode::Eval);
        let q = ctx.g.constant(Tensor::randn(&[batch, lq, dim], scale, &mut rng));
        let kv = ctx.g.constant(Tensor::randn(&[batch, lk, dim], scale, &mut rng));
        let (_, w) = attention_with_weights(&mut ctx, q, kv, &p).unwrap();
        cases += 1;
        if !row_sums_ok(ctx.g.value(w).data(), lk) {
            bad.push(format!("attention#{i}"));
        }
    }
    for i in 0..400u64 {
        let (dim, hidden) = (rng.gen_range(1..9), rng.gen_range(1..9));
        let (segs, bands, words, batch) = (rng.gen_range(1..6), rng.gen_range(1..10), rng.gen_range(1..5), rng.gen_range(1..4));
        let scale = rng.gen_range(0.1..20.0);
        let mut store = ParamStore::new(i);
        let p = TfiParams::new(&mut store, dim, hidden, rng.gen_bool(0.5)).unwrap();
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &store, Mode::Eval);
        let ast = ctx.g.constant(Tensor::randn(&[batch, segs, bands, dim], scale, &mut rng));
        let w = ctx.g.constant(Tensor::randn(&[batch, words, dim], scale, &mut rng));
        let (a_f, _) = frequency_attention(&mut ctx, ast, w, &p).unwrap();
        cases += 1;
        if !row_sums_ok(ctx.g.value(a_f).data(), bands) {
            bad.push(format!("a_f#{i}"));
        }
    }
    for i in 0..400 {
        let v = rng.gen_range(2..12);
        let scale = rng.gen_range(0.1..50.0);
        let logits: Vec<f64> = (0..v).map(|_| rng.gen_range(-scale..scale)).collect();
        cases += 1;
        if !row_sums_ok(&AnswerDistribution::from_logits(&logits).probabilities, v) {
            bad.push(format!("answer#{i}"));
        }
    }
    let detail = if bad.is_empty() {
        format!("{cases} randomized cases sum to 1 within 1e-6")
    } else {
        format!("{} of {cases} cases off: {}", bad.len(), bad.join(", "))
    };
    t.line("normalization", bad.is_empty() && cases >= 1000, detail);
}

fn oracle_equivalence(t: &mut Tally) {
    let stages: [(&str, fn(u64) -> f64, u64); 4] =
        [("qgmc", qgmc_error, 13), ("sti", sti_error, 17), ("tfi", tfi_error, 19), ("qcr", qcr_error, 23)];
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, f, first) in stages {
        let worst = (first..first + 5).map(f).fold(0.0f64, f64::max);
        pass &= worst < 1e-10;
        parts.push(format!("{name} {worst:.1e}"));
    }
    let (cases, bad) = compare_with_oracle();
    pass &= bad.is_empty() && cases >= 1000;
    parts.push(format!("answers {}/{cases} agree", cases - bad.len()));
    t.line("oracle_equivalence", pass, parts.join("; "));
}

fn trained_tables() -> Vec<AblationTable> {
    SEEDS
        .iter()
        .map(|&seed| {
            let base = RunConfig { seed, ..RunConfig::default() };
            let table = run_ablation_rows(&base, &VARIANTS, &mut |_, _, _, _| {}).expect("training runs");
            for row in &table.rows {
                let r = &row.report;
                eprintln!(
                    "  seed {seed} {:<7} overall {:.3} critical {:.3} ({:.0}s)",
                    row.variant,
                    r.accuracy.overall,
                    r.accuracy.frequency_critical.unwrap_or(f64::NAN),
                    r.wall_clock_seconds
                );
            }
            table
        })
        .collect()
}

fn learnability(t: &mut Tally, tables: &[AblationTable]) {
    let r = tables[0].row("full").expect("full row");
    let (acc, secs) = (r.accuracy.overall, r.wall_clock_seconds);
    let others: Vec<String> = tables[1..]
        .iter()
        .zip(&SEEDS[1..])
        .map(|(tb, s)| format!("seed {s}: {:.3}", tb.row("full").unwrap().accuracy.overall))
        .collect();
    t.line(
        "learnability",
        acc >= 0.9 && secs < 600.0,
        format!("default config, seed 0: val accuracy {acc:.3} (need 0.900) in {secs:.0}s; {}", others.join(", ")),
    );
}

fn frequency_gap(t: &mut Tally, tables: &[AblationTable]) {
    let mut gaps = Vec::new();
    let (mut hits, mut n) = (0.0, 0usize);
    for tb in tables {
        let (full, wo) = (&tb.row("full").unwrap().accuracy, &tb.row("wo_tfi").unwrap().accuracy);
        let (f, w) = (full.frequency_critical.unwrap(), wo.frequency_critical.unwrap());
        gaps.push(f - w);
        hits += w * wo.frequency_critical_samples as f64;
        n += wo.frequency_critical_samples;
    }
    let gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let pooled = hits / n as f64;
    let sigma = (0.25 / n as f64).sqrt();
    let near_chance = (pooled - 0.5).abs() <= 3.0 * sigma;
    let per_seed: Vec<String> = gaps.iter().map(|g| format!("{g:+.3}")).collect();
    t.line(
        "frequency_ablation_gap",
        gap >= 0.10 && near_chance,
        format!(
            "mean gap {gap:.3} (per seed {}); without TFI {pooled:.3} on {n} pooled samples, chance 0.5 +/- {:.3}",
            per_seed.join(" "),
            3.0 * sigma
        ),
    );
}

fn guidance_trend(t: &mut Tally, tables: &[AblationTable]) {
    println!("  seed  full    rm_b    rm_m    rm_f");
    for (tb, s) in tables.iter().zip(SEEDS) {
        let acc = |v| tb.row(v).unwrap().accuracy.overall;
        println!("  {s:<5} {:.3}   {:.3}   {:.3}   {:.3}", acc("full"), acc("rm_b"), acc("rm_m"), acc("rm_f"));
    }
    let mut pass = true;
    let mut parts = Vec::new();
    for v in ["rm_b", "rm_m", "rm_f"] {
        let wins = tables
            .iter()
            .filter(|tb| tb.row("full").unwrap().accuracy.overall >= tb.row(v).unwrap().accuracy.overall)
            .count();
        pass &= wins >= 2;
        parts.push(format!("full >= {v} on {wins}/3 seeds"));
    }
    t.line("guidance_ablation_trend", pass, parts.join(", "));
}

fn determinism(t: &mut Tally) {
    let cfg = RunConfig { seed: 7, train_count: 200, val_count: 100, epochs: 3, ..RunConfig::default() };
    let a = train(&cfg).expect("first run").1.to_json();
    let b = train(&cfg).expect("second run").1.to_json();
    t.line("determinism", a == b, format!("two identical runs, {} byte result documents", a.len()));
}

fn fixture_round_trip(t: &mut Tally) {
    let books = Codebooks::new(11, &SynthConfig::default()).unwrap();
    let mut exact = 0;
    for seed in 0..100 {
        let bundle = generate_sample(1000 + seed, &books).unwrap().bundle;
        let mut bytes = Vec::new();
        write_fixture_to(&bundle, &mut bytes).unwrap();
        let back = read_fixture_from(&bytes).unwrap();
        let same_bits = bundle
            .tensors()
            .iter()
            .zip(back.tensors())
            .all(|(x, y)| x.shape() == y.shape() && x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        exact += (same_bits && back == bundle) as usize;
    }
    t.line("fixture_round_trip", exact == 100, format!("{exact}/100 bundles bitwise exact"));
}

fn main() {
    let mut t = Tally { passed: 0, total: 0 };
    full_scale_results(&mut t);
    gradient_soundness(&mut t);
    normalization(&mut t);
    oracle_equivalence(&mut t);
    fixture_round_trip(&mut t);
    determinism(&mut t);
    let tables = trained_tables();
    learnability(&mut t, &tables);
    frequency_gap(&mut t, &tables);
    guidance_trend(&mut t, &tables);
    println!("{}/{} criteria pass", t.passed, t.total);
}
