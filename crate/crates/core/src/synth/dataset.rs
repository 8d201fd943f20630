use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{loudness, pick_classes, place, run_schedule, sounding_schedule};
use super::{
    answer_oracle, pair_mate, synthesize_features, Codebooks, FeatureBundle, QuestionSpec, SceneSpec, SynthConfig,
    Template, ANSWER_NO, ANSWER_YES, CRITICAL_PAIR,
};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-sample seed mixed from the run seed, the split and the sample index.
pub fn sample_seed(run_seed: u64, split: Split, index: u64) -> u64 {
    let tag = match split {
        Split::Train => 1,
        Split::Val => 2,
        Split::Test => 3,
    };
    splitmix(splitmix(splitmix(run_seed) ^ tag) ^ index)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub scene: SceneSpec,
    pub question: QuestionSpec,
    pub bundle: FeatureBundle,
}

fn silent(cfg: &SynthConfig) -> Vec<bool> {
    vec![false; cfg.segments]
}

fn maybe_sounding<R: Rng>(rng: &mut R, cfg: &SynthConfig) -> Vec<bool> {
    if rng.gen_bool(0.75) {
        sounding_schedule(rng, cfg.segments)
    } else {
        silent(cfg)
    }
}

fn louds<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    (0..k).map(|_| loudness(rng)).collect()
}

fn is_left(position: usize, patches: usize) -> bool {
    2 * position + 1 < patches
}

/// Builds a scene and question whose answer is `target`, with
/// template-specific structure so that each answer is reachable.
fn shape<R: Rng>(rng: &mut R, cfg: &SynthConfig, template: Template, target: usize) -> (SceneSpec, QuestionSpec) {
    let cap = cfg.instrument_cap();
    let lo = cfg.min_instruments;
    let (segs, yes) = (cfg.segments, target == ANSWER_YES);
    let (scene, args) = match template {
        Template::CountSounding => {
            let k = rng.gen_range(lo.max(target).max(1)..=cap);
            let classes = pick_classes(rng, k, &[], &[]);
            let mut order: Vec<usize> = (0..k).collect();
            order.shuffle(rng);
            let mut schedules = vec![silent(cfg); k];
            for &i in &order[..target] {
                schedules[i] = sounding_schedule(rng, segs);
            }
            let l = louds(rng, k);
            (place(rng, cfg, &classes, schedules, l), vec![])
        }
        Template::CountTypes => {
            let classes = pick_classes(rng, target, &[], &[]);
            let schedules = (0..target).map(|_| maybe_sounding(rng, cfg)).collect();
            let l = louds(rng, target);
            (place(rng, cfg, &classes, schedules, l), vec![])
        }
        Template::Existential => {
            let k = rng.gen_range(lo..=cap);
            if rng.gen_bool(0.5) {
                // critical: one pair member sounds, the question names either
                let a = if rng.gen_bool(0.5) { CRITICAL_PAIR.0 } else { CRITICAL_PAIR.1 };
                let member = if yes { a } else { pair_mate(a).expect("pair") };
                let classes = pick_classes(rng, k, &[member], &[]);
                let mut schedules: Vec<_> = (0..k).map(|_| maybe_sounding(rng, cfg)).collect();
                schedules[0] = sounding_schedule(rng, segs);
                let l = louds(rng, k);
                (place(rng, cfg, &classes, schedules, l), vec![a])
            } else {
                let a = rng.gen_range(0..CRITICAL_PAIR.0);
                let absent = !yes && rng.gen_bool(0.5);
                let (required, exclude) = if absent { (vec![], vec![a]) } else { (vec![a], vec![]) };
                let classes = pick_classes(rng, k, &required, &exclude);
                let mut schedules: Vec<_> = (0..k).map(|_| maybe_sounding(rng, cfg)).collect();
                if !absent {
                    schedules[0] = if yes { sounding_schedule(rng, segs) } else { silent(cfg) };
                }
                let l = louds(rng, k);
                (place(rng, cfg, &classes, schedules, l), vec![a])
            }
        }
        Template::LouderThan => {
            let k = rng.gen_range(lo.max(2)..=cap);
            let classes = pick_classes(rng, k, &[], &[]);
            let shared = sounding_schedule(rng, segs);
            let mut schedules: Vec<_> = (0..k).map(|_| maybe_sounding(rng, cfg)).collect();
            schedules[0] = shared.clone();
            schedules[1] = shared;
            let mut l = louds(rng, k);
            let quiet = rng.gen_range(0.2..=0.7);
            let loud = rng.gen_range(quiet + 0.2..=1.0);
            (l[0], l[1]) = if yes { (loud, quiet) } else { (quiet, loud) };
            (place(rng, cfg, &classes, schedules, l), vec![classes[0], classes[1]])
        }
        Template::FirstSoundingSide => {
            let k = rng.gen_range(lo..=cap);
            let classes = pick_classes(rng, k, &[], &[]);
            let l = louds(rng, k);
            let mut scene = place(rng, cfg, &classes, vec![silent(cfg); k], l);
            let candidates: Vec<usize> = (0..k)
                .filter(|&i| is_left(scene.instruments[i].position, cfg.patches) == yes)
                .collect();
            if let Some(&lead) = candidates.choose(rng) {
                let onset = rng.gen_range(0..=(segs - 1) / 2);
                let len = rng.gen_range(segs.div_ceil(4).max(1).min(segs - onset)..=segs - onset);
                scene.instruments[lead].schedule = (0..segs).map(|t| t >= onset && t < onset + len).collect();
                for (i, inst) in scene.instruments.iter_mut().enumerate() {
                    if i != lead && onset + 1 < segs && rng.gen_bool(0.75) {
                        let start = rng.gen_range(onset + 1..segs);
                        let len = rng.gen_range(1..=segs - start);
                        inst.schedule = (0..segs).map(|t| t >= start && t < start + len).collect();
                    }
                }
            }
            (scene, vec![])
        }
        Template::AlwaysPlaying => {
            let k = rng.gen_range(lo..=cap);
            let classes = pick_classes(rng, k, &[], &[]);
            let mut schedules: Vec<_> = (0..k).map(|_| maybe_sounding(rng, cfg)).collect();
            schedules[0] = if yes {
                vec![true; segs]
            } else if segs > 1 && rng.gen_bool(0.5) {
                let len = rng.gen_range(segs.div_ceil(4).max(1).min(segs - 1)..segs);
                run_schedule(rng, segs, len)
            } else {
                silent(cfg)
            };
            let l = louds(rng, k);
            (place(rng, cfg, &classes, schedules, l), vec![classes[0]])
        }
    };
    let question = QuestionSpec {
        template,
        args,
        answer: target,
    };
    (scene, question)
}

fn answers_for(template: Template, cfg: &SynthConfig) -> Vec<usize> {
    let cap = cfg.instrument_cap();
    match template {
        Template::CountSounding => (0..=cap).collect(),
        Template::CountTypes => (cfg.min_instruments..=cap).collect(),
        Template::LouderThan if cap < 2 => vec![],
        Template::FirstSoundingSide if cfg.patches < 2 => vec![ANSWER_NO],
        _ => vec![ANSWER_YES, ANSWER_NO],
    }
}

/// One sample from its seed: a uniformly chosen template, a uniformly chosen
/// reachable answer, and a scene shaped to produce that answer.
pub fn generate_sample(seed: u64, books: &Codebooks) -> Result<Sample> {
    let cfg = &books.config;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feasible: Vec<Template> = Template::ALL
        .into_iter()
        .filter(|&t| !answers_for(t, cfg).is_empty())
        .collect();
    let template = *feasible.choose(&mut rng).expect("count templates are always feasible");
    let target = *answers_for(template, cfg).choose(&mut rng).expect("non-empty");
    // shaping can miss when patch placement rules a side out; redraw
    let (scene, question) = loop {
        let (scene, mut question) = shape(&mut rng, cfg, template, target);
        question.answer = answer_oracle(&scene, &question)?;
        if question.answer == target {
            break (scene, question);
        }
    };
    let bundle = synthesize_features(&scene, &question, splitmix(seed ^ 0x5eed_f00d), books)?;
    Ok(Sample {
        scene,
        question,
        bundle,
    })
}

pub fn generate_dataset(run_seed: u64, split: Split, count: usize, books: &Codebooks) -> Result<Vec<Sample>> {
    (0..count as u64)
        .map(|i| generate_sample(sample_seed(run_seed, split, i), books))
        .collect()
}
