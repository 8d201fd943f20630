use qstar::synth::*;
use qstar::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Second answer evaluator working from a dense `[class][segment]`
/// activity grid rather than the instrument list.
pub fn brute_force(scene: &SceneSpec, template: Template, args: &[usize]) -> Option<usize> {
    let t_len = scene.segments;
    let mut grid = vec![vec![false; t_len]; NUM_CLASSES];
    let mut present = [false; NUM_CLASSES];
    let mut loud = [0.0; NUM_CLASSES];
    let mut pos = [0usize; NUM_CLASSES];
    for inst in &scene.instruments {
        present[inst.class] = true;
        loud[inst.class] = inst.loudness;
        pos[inst.class] = inst.position;
        for t in 0..t_len {
            grid[inst.class][t] = inst.schedule[t];
        }
    }
    let yn = |b: bool| Some(if b { ANSWER_YES } else { ANSWER_NO });
    match template {
        Template::CountSounding => Some((0..NUM_CLASSES).filter(|&c| grid[c].contains(&true)).count()),
        Template::CountTypes => Some(present.iter().filter(|&&p| p).count()),
        Template::Existential => yn(grid[args[0]].contains(&true)),
        Template::LouderThan => {
            if !present[args[0]] || !present[args[1]] {
                return None;
            }
            yn(loud[args[0]] > loud[args[1]])
        }
        Template::FirstSoundingSide => {
            for t in 0..t_len {
                let starters: Vec<usize> = (0..NUM_CLASSES).filter(|&c| grid[c][t]).collect();
                match starters.len() {
                    0 => continue,
                    1 => return yn((pos[starters[0]] as f64 + 0.5) < scene.patches as f64 / 2.0),
                    _ => return yn(false),
                }
            }
            yn(false)
        }
        Template::AlwaysPlaying => {
            if !present[args[0]] {
                return None;
            }
            yn(grid[args[0]].iter().all(|&a| a))
        }
    }
}

/// Runs `answer_oracle` and `brute_force` side by side on 500 random
/// (scene, question) pairs, dangling references included, plus 500 shaped
/// dataset samples. Returns the case count and a description of every
/// disagreement.
pub fn compare_with_oracle() -> (usize, Vec<String>) {
    let cfg = SynthConfig::default();
    let books = Codebooks::new(5, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut cases = 0;
    let mut bad = Vec::new();
    for i in 0..500 {
        let scene = generate_scene(i, &cfg).unwrap();
        let template = Template::ALL[rng.gen_range(0..Template::ALL.len())];
        let args: Vec<usize> = (0..template.arity()).map(|_| rng.gen_range(0..NUM_CLASSES)).collect();
        let q = QuestionSpec { template, args: args.clone(), answer: 0 };
        match (answer_oracle(&scene, &q), brute_force(&scene, template, &args)) {
            (Ok(a), Some(b)) if a == b => {}
            (Err(Error::DanglingReference(_)), None) => {}
            (a, b) => bad.push(format!("{a:?} vs {b:?} on {scene:?} {q:?}")),
        }
        cases += 1;
    }
    for s in generate_dataset(9, Split::Train, 500, &books).unwrap() {
        let b = brute_force(&s.scene, s.question.template, &s.question.args);
        if b != Some(s.question.answer) || s.bundle.label != s.question.answer {
            bad.push(format!("{b:?} vs {:?} on {:?}", s.question, s.scene));
        }
        cases += 1;
    }
    (cases, bad)
}
