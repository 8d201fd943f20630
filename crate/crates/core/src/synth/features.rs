use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{answer_oracle, is_frequency_critical, QuestionSpec, QuestionType, SceneSpec, SynthConfig, Template, NUM_CLASSES};
use crate::qcr::{PromptBank, PROMPT_KEYWORDS};
use crate::tensor::Tensor;
use crate::{Error, Result};

fn unit<R: rand::Rng>(rng: &mut R, shape: &[usize]) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

/// Fixed random vectors the features are assembled from, drawn once per run
/// seed from a unit Gaussian.
#[derive(Clone, Debug)]
pub struct Codebooks {
    pub config: SynthConfig,
    /// `[C, D]`; the critical pair shares a row.
    pub visual: Tensor<f64>,
    /// `[C, D]`; the critical pair shares a row.
    pub audio: Tensor<f64>,
    /// Empty-patch appearance `[D]`.
    pub background: Tensor<f64>,
    /// `[M', D]`.
    pub position: Tensor<f64>,
    /// Per-patch motion when the instrument there is active, `[M', D]`.
    pub motion: Tensor<f64>,
    /// Time ramp direction `[D]`, scaled from -1 at the first segment to +1
    /// at the last.
    pub time: Tensor<f64>,
    /// Band energy codes `[F, D]`.
    pub band: Tensor<f64>,
    /// Word codes per template and token slot, `[templates, N, D]`.
    pub template_words: Tensor<f64>,
    /// Class-name word codes `[C, D]`, distinct for every class.
    pub class_words: Tensor<f64>,
    /// Prompt keyword codes `[5, D]`.
    pub prompts: Tensor<f64>,
}

fn row(t: &Tensor<f64>, i: usize) -> &[f64] {
    let w = *t.shape().last().expect("rank >= 1");
    &t.data()[i * w..(i + 1) * w]
}

fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

impl Codebooks {
    pub fn new(seed: u64, config: &SynthConfig) -> Result<Self> {
        config.validate()?;
        let (d, m, f, n) = (config.dim, config.patches, config.bands, config.words);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0de_b00c);
        let share = |mut t: Tensor<f64>| {
            let (a, b) = super::CRITICAL_PAIR;
            let src = row(&t, a).to_vec();
            t.data_mut()[b * d..(b + 1) * d].copy_from_slice(&src);
            t
        };
        let visual = share(unit(&mut rng, &[NUM_CLASSES, d]));
        let audio = share(unit(&mut rng, &[NUM_CLASSES, d]));
        let background = unit(&mut rng, &[d]);
        let position = unit(&mut rng, &[m, d]);
        let motion = unit(&mut rng, &[m, d]);
        let time = unit(&mut rng, &[d]);
        let band = unit(&mut rng, &[f, d]);
        let template_words = unit(&mut rng, &[Template::ALL.len(), n, d]);
        let class_words = unit(&mut rng, &[NUM_CLASSES, d]);
        let mut prompts = unit(&mut rng, &[PROMPT_KEYWORDS.len(), d]);
        for r in prompts.data_mut().chunks_mut(d) {
            let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 10.0 {
                r.iter_mut().for_each(|x| *x *= 10.0 / norm);
            }
        }
        Ok(Codebooks {
            config: config.clone(),
            visual,
            audio,
            background,
            position,
            motion,
            time,
            band,
            template_words,
            class_words,
            prompts,
        })
    }

    /// The five-keyword prompt bank.
    pub fn prompt_bank(&self) -> Result<PromptBank<f64>> {
        PromptBank::new(PROMPT_KEYWORDS.iter().map(|k| k.to_string()).collect(), self.prompts.clone())
    }

    fn time_scale(&self, t: usize) -> f64 {
        let segs = self.config.segments;
        if segs == 1 {
            0.0
        } else {
            2.0 * t as f64 / (segs - 1) as f64 - 1.0
        }
    }
}

/// Summed loudness of instruments in band `f` active at segment `t`.
pub fn band_energy(scene: &SceneSpec, t: usize, f: usize) -> f64 {
    scene
        .instruments
        .iter()
        .filter(|i| i.band == f && i.schedule[t])
        .map(|i| i.loudness)
        .sum()
}

/// One sample's model inputs plus its label.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    /// `[T, D]`.
    pub f_v: Tensor<f64>,
    /// `[T, M', D]`.
    pub f_p: Tensor<f64>,
    /// `[T, D]`.
    pub f_a: Tensor<f64>,
    /// `[T, F, D]`.
    pub f_ast: Tensor<f64>,
    /// `[N, D]`.
    pub f_w: Tensor<f64>,
    /// `[D]`.
    pub f_sentence: Tensor<f64>,
    pub label: usize,
    pub question_type: QuestionType,
}

impl FeatureBundle {
    pub const TENSOR_NAMES: [&'static str; 6] = ["f_v", "f_p", "f_a", "f_ast", "f_w", "f_sentence"];

    pub fn tensors(&self) -> [&Tensor<f64>; 6] {
        [&self.f_v, &self.f_p, &self.f_a, &self.f_ast, &self.f_w, &self.f_sentence]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Checks every tensor against the configured shapes.
    pub fn check_shapes(&self, cfg: &SynthConfig) -> Result<()> {
        let (t, d, m, n, f) = (cfg.segments, cfg.dim, cfg.patches, cfg.words, cfg.bands);
        let want: [Vec<usize>; 6] = [vec![t, d], vec![t, m, d], vec![t, d], vec![t, f, d], vec![n, d], vec![d]];
        for ((name, tensor), want) in Self::TENSOR_NAMES.iter().zip(self.tensors()).zip(want) {
            if tensor.shape() != want.as_slice() {
                return Err(Error::shape(name, tensor.shape(), &want));
            }
        }
        Ok(())
    }
}

/// Renders a scene and question into features.
///
/// * `F_p[t, m]`: class code of the instrument at patch `m` (background code
///   when empty) + position code + that patch's motion code while its
///   instrument is active + time ramp + noise.
/// * `F_v[t]`: mean of `F_p[t]` over patches.
/// * `F_a[t]`: loudness-weighted sum of active instruments' audio codes +
///   time ramp + noise.
/// * `F_ast[t, f]`: band code scaled by [`band_energy`] + noise.
/// * `F_w`: template word codes, class-name codes added at argument slots.
/// * `F_sentence`: mean of `F_w`.
pub fn synthesize_features(scene: &SceneSpec, q: &QuestionSpec, seed: u64, books: &Codebooks) -> Result<FeatureBundle> {
    let cfg = &books.config;
    let (t_len, d, m_len, n_len, f_len) = (cfg.segments, cfg.dim, cfg.patches, cfg.words, cfg.bands);
    if scene.segments != t_len || scene.patches != m_len || scene.bands != f_len {
        return Err(Error::shape(
            "synthesize_features",
            &[scene.segments, scene.patches, scene.bands],
            &[t_len, m_len, f_len],
        ));
    }
    scene.validate()?;
    let label = answer_oracle(scene, q)?;
    if label != q.answer {
        return Err(Error::invalid(
            "synthesize_features",
            format!("question answer {} disagrees with the oracle's {label}", q.answer),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = cfg.noise;

    let mut f_p = Tensor::randn(&[t_len, m_len, d], sigma, &mut rng);
    for t in 0..t_len {
        let ramp = books.time_scale(t);
        for m in 0..m_len {
            let out = &mut f_p.data_mut()[(t * m_len + m) * d..(t * m_len + m + 1) * d];
            match scene.at_position(m) {
                Some(inst) => {
                    axpy(out, 1.0, row(&books.visual, inst.class));
                    if inst.schedule[t] {
                        axpy(out, 1.0, row(&books.motion, m));
                    }
                }
                None => axpy(out, 1.0, books.background.data()),
            }
            axpy(out, 1.0, row(&books.position, m));
            axpy(out, ramp, books.time.data());
        }
    }
    let inv_m = 1.0 / m_len as f64;
    let f_v = Tensor::from_fn(&[t_len, d], |i| {
        (0..m_len).map(|m| f_p.get(&[i[0], m, i[1]])).sum::<f64>() * inv_m
    });

    let mut f_a = Tensor::randn(&[t_len, d], sigma, &mut rng);
    for t in 0..t_len {
        let out = &mut f_a.data_mut()[t * d..(t + 1) * d];
        for inst in scene.instruments.iter().filter(|i| i.schedule[t]) {
            axpy(out, inst.loudness, row(&books.audio, inst.class));
        }
        axpy(out, books.time_scale(t), books.time.data());
    }

    let mut f_ast = Tensor::randn(&[t_len, f_len, d], sigma, &mut rng);
    for t in 0..t_len {
        for f in 0..f_len {
            let e = band_energy(scene, t, f);
            if e != 0.0 {
                axpy(&mut f_ast.data_mut()[(t * f_len + f) * d..(t * f_len + f + 1) * d], e, row(&books.band, f));
            }
        }
    }

    let k = q.template.index();
    let mut f_w = Tensor::from_vec(books.template_words.data()[k * n_len * d..(k + 1) * n_len * d].to_vec())
        .reshape(&[n_len, d])?;
    // first argument near the end of the question, second near the start
    let slots = [n_len.saturating_sub(2), 1.min(n_len - 1)];
    for (&class, &slot) in q.args.iter().zip(&slots) {
        axpy(&mut f_w.data_mut()[slot * d..(slot + 1) * d], 1.0, row(&books.class_words, class));
    }
    let f_sentence = Tensor::from_fn(&[d], |i| (0..n_len).map(|j| f_w.get(&[j, i[0]])).sum::<f64>() / n_len as f64);

    Ok(FeatureBundle {
        f_v,
        f_p,
        f_a,
        f_ast,
        f_w,
        f_sentence,
        label,
        question_type: QuestionType::new(q.template, is_frequency_critical(scene, q)),
    })
}
