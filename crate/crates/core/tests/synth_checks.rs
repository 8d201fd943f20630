//! Scene generator, answer oracle and feature renderer checks.

mod common;

use common::brute_force::compare_with_oracle;

use std::collections::BTreeMap;

use qstar::synth::*;

#[test]
fn oracle_agrees_with_brute_force() {
    let (cases, bad) = compare_with_oracle();
    assert_eq!(cases, 1000);
    assert!(bad.is_empty(), "{}", bad.join("\n"));
}

#[test]
fn ten_thousand_scenes_stay_in_range() {
    let cfg = SynthConfig::default();
    for seed in 0..10_000 {
        let s = generate_scene(seed, &cfg).unwrap();
        let k = s.instruments.len();
        assert!((cfg.min_instruments..=cfg.instrument_cap()).contains(&k));
        let mut positions = Vec::new();
        for inst in &s.instruments {
            assert!(inst.class < NUM_CLASSES);
            assert!(inst.position < cfg.patches);
            assert_eq!(inst.band, class_band(inst.class, cfg.bands));
            assert!((0.2..=1.0).contains(&inst.loudness));
            assert_eq!(inst.schedule.len(), cfg.segments);
            positions.push(inst.position);
        }
        positions.sort_unstable();
        positions.dedup();
        assert_eq!(positions.len(), k, "two instruments share a patch");
        let (a, b) = CRITICAL_PAIR;
        assert!(!(s.find_class(a).is_some() && s.find_class(b).is_some()));
    }
}

fn silent_scene(cfg: &SynthConfig) -> SceneSpec {
    SceneSpec {
        instruments: vec![Instrument {
            class: 1,
            position: 2,
            band: class_band(1, cfg.bands),
            schedule: vec![false; cfg.segments],
            loudness: 0.7,
        }],
        segments: cfg.segments,
        patches: cfg.patches,
        bands: cfg.bands,
    }
}

#[test]
fn silent_scene_spectrogram_is_pure_noise() {
    let cfg = SynthConfig::default();
    let books = Codebooks::new(2, &cfg).unwrap();
    let scene = silent_scene(&cfg);
    let q = QuestionSpec {
        template: Template::CountSounding,
        args: vec![],
        answer: answer_index("zero").unwrap(),
    };
    let sigma = cfg.noise;
    let (mut n, mut sum_sq, mut beyond_4, mut max_abs) = (0usize, 0.0, 0usize, 0.0f64);
    for draw in 0..1000 {
        let b = synthesize_features(&scene, &q, draw, &books).unwrap();
        for &x in b.f_ast.data() {
            n += 1;
            sum_sq += x * x;
            beyond_4 += (x.abs() > 4.0 * sigma) as usize;
            max_abs = max_abs.max(x.abs());
        }
    }
    let std = (sum_sq / n as f64).sqrt();
    assert!((std / sigma - 1.0).abs() < 0.01, "std {std}");
    // Gaussian tail: P(|z| > 4) = 6.3e-5, P(|z| > 6.5) = 8e-11
    assert!((beyond_4 as f64 / n as f64) < 1e-4, "{beyond_4} of {n} beyond 4 sigma");
    assert!(max_abs < 6.5 * sigma, "max {max_abs}");
}

#[test]
fn doubling_loudness_doubles_band_energy() {
    let cfg = SynthConfig { noise: 0.0, ..SynthConfig::default() };
    let books = Codebooks::new(4, &cfg).unwrap();
    let mut scene = silent_scene(&cfg);
    scene.instruments[0].schedule = vec![true; cfg.segments];
    scene.instruments[0].loudness = 0.35;
    let q = QuestionSpec {
        template: Template::CountSounding,
        args: vec![],
        answer: answer_index("one").unwrap(),
    };
    let base = synthesize_features(&scene, &q, 0, &books).unwrap();
    scene.instruments[0].loudness = 0.7;
    let double = synthesize_features(&scene, &q, 0, &books).unwrap();
    let band = scene.instruments[0].band;
    for t in 0..cfg.segments {
        assert_eq!(band_energy(&scene, t, band), 0.7);
        for d in 0..cfg.dim {
            assert_eq!(double.f_ast.get(&[t, band, d]), 2.0 * base.f_ast.get(&[t, band, d]));
        }
    }
}

#[test]
fn answers_are_not_dominated_by_one_label() {
    let books = Codebooks::new(0, &SynthConfig::default()).unwrap();
    let data = generate_dataset(0, Split::Train, 2000, &books).unwrap();
    let mut by_template: BTreeMap<&str, BTreeMap<usize, usize>> = BTreeMap::new();
    let mut overall: BTreeMap<usize, usize> = BTreeMap::new();
    for s in &data {
        *by_template.entry(s.question.template.name()).or_default().entry(s.bundle.label).or_default() += 1;
        *overall.entry(s.bundle.label).or_default() += 1;
    }
    assert_eq!(by_template.len(), Template::ALL.len());
    for (name, counts) in &by_template {
        let total: usize = counts.values().sum();
        let top = *counts.values().max().unwrap();
        assert!(top as f64 <= 0.8 * total as f64, "{name}: {counts:?}");
        assert!(counts.len() >= 2, "{name} has a single answer");
    }
    let top = *overall.values().max().unwrap();
    assert!(top as f64 <= 0.8 * data.len() as f64);
    let critical = data.iter().filter(|s| s.bundle.question_type.is_frequency_critical()).count();
    assert!(critical > 50, "only {critical} frequency-critical samples");
}

#[test]
fn identical_seeds_give_identical_bundles() {
    let books = Codebooks::new(3, &SynthConfig::default()).unwrap();
    let a = generate_sample(77, &books).unwrap();
    let b = generate_sample(77, &books).unwrap();
    assert_eq!(a, b);
    for (x, y) in a.bundle.tensors().iter().zip(b.bundle.tensors()) {
        assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    assert_ne!(generate_sample(78, &books).unwrap().bundle, a.bundle);
}

#[test]
fn critical_pair_is_indistinguishable_outside_the_spectrogram() {
    let cfg = SynthConfig { noise: 0.0, ..SynthConfig::default() };
    let books = Codebooks::new(6, &cfg).unwrap();
    let (a, b) = CRITICAL_PAIR;
    let scene_with = |class: usize| SceneSpec {
        instruments: vec![Instrument {
            class,
            position: 1,
            band: class_band(class, cfg.bands),
            schedule: vec![true; cfg.segments],
            loudness: 0.5,
        }],
        segments: cfg.segments,
        patches: cfg.patches,
        bands: cfg.bands,
    };
    let q = |answer| QuestionSpec { template: Template::Existential, args: vec![a], answer };
    let x = synthesize_features(&scene_with(a), &q(ANSWER_YES), 0, &books).unwrap();
    let y = synthesize_features(&scene_with(b), &q(ANSWER_NO), 0, &books).unwrap();
    assert_eq!(x.f_v, y.f_v);
    assert_eq!(x.f_p, y.f_p);
    assert_eq!(x.f_a, y.f_a);
    assert_eq!(x.f_w, y.f_w);
    assert_ne!(x.f_ast, y.f_ast);
    assert_ne!(x.label, y.label);
    assert!(x.question_type.is_frequency_critical() && y.question_type.is_frequency_critical());
}
