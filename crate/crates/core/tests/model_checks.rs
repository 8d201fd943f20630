use qstar::harness::{apply_ablation, evaluate, Predictor, RunConfig};
use qstar::model::{Batch, QStar};
use qstar::nn::Mode;
use qstar::synth::{generate_dataset, Codebooks, FeatureBundle, QuestionType, Split, Template};
use qstar::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(cfg: &RunConfig) -> (Codebooks, Vec<FeatureBundle>) {
    let books = Codebooks::new(cfg.seed, &cfg.synth_config()).unwrap();
    let data = generate_dataset(cfg.seed, Split::Val, 6, &books)
        .unwrap()
        .into_iter()
        .map(|s| s.bundle)
        .collect();
    (books, data)
}

fn model_for(cfg: &RunConfig, books: &Codebooks) -> QStar<f64> {
    QStar::new(&cfg.model_config(), 1, &books.prompt_bank().unwrap()).unwrap()
}

fn batch(data: &[FeatureBundle]) -> Batch<f64> {
    Batch::from_bundles(&data.iter().collect::<Vec<_>>()).unwrap()
}

#[test]
fn full_model_has_the_most_parameters() {
    let base = RunConfig::default();
    let (books, _) = setup(&base);
    let full = model_for(&base, &books).num_params();
    for row in ["wo_qgmc", "wo_sti", "wo_tfi", "wo_qcr", "rm_b", "rm_m"] {
        let n = model_for(&apply_ablation(&base, row).unwrap(), &books).num_params();
        assert!(full > n, "{row}: {n} >= {full}");
    }
}

#[test]
fn initialisation_is_deterministic() {
    let cfg = RunConfig::default();
    let (books, _) = setup(&cfg);
    let (a, b) = (model_for(&cfg, &books), model_for(&cfg, &books));
    for id in a.store().ids() {
        let (x, y) = (a.store().get(id), b.store().get(id));
        assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn disabled_frequency_path_never_reads_the_spectrogram() {
    let base = RunConfig::default();
    let (books, data) = setup(&base);
    let full = model_for(&base, &books);
    full.logits(&batch(&data)).unwrap();
    assert!(full.ast_reads() > 0);
    for row in ["wo_tfi", "wo_stfi", "wo_all"] {
        let m = model_for(&apply_ablation(&base, row).unwrap(), &books);
        m.logits(&batch(&data)).unwrap();
        m.loss_and_grads(&batch(&data)).unwrap();
        assert_eq!(m.ast_reads(), 0, "{row}");
    }
}

#[test]
fn guidance_removal_changes_the_graph() {
    let base = RunConfig::default();
    let (books, data) = setup(&base);
    let b = batch(&data);
    let full = model_for(&base, &books).op_count(&b, Mode::Eval).unwrap();
    for row in ["rm_b", "rm_m", "rm_f"] {
        let n = model_for(&apply_ablation(&base, row).unwrap(), &books)
            .op_count(&b, Mode::Eval)
            .unwrap();
        assert_ne!(n, full, "{row}");
    }
}

#[test]
fn every_variant_produces_finite_logits() {
    let base = RunConfig::default();
    let (books, data) = setup(&base);
    let b = batch(&data);
    for row in qstar::harness::SUITE {
        let m = model_for(&apply_ablation(&base, row).unwrap(), &books);
        let logits = m.logits(&b).unwrap();
        assert_eq!(logits.shape(), &[data.len(), base.vocab]);
        assert!(logits.is_finite(), "{row}");
        let step = m.loss_and_grads(&b).unwrap();
        assert!(step.loss.is_finite() && step.loss > 0.0, "{row}");
    }
}

#[test]
fn saved_parameters_reload_exactly() {
    let cfg = RunConfig::default();
    let (books, data) = setup(&cfg);
    let a = model_for(&cfg, &books);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.qstp");
    a.save_params(&path).unwrap();
    let mut b = QStar::new(&cfg.model_config(), 99, &books.prompt_bank().unwrap()).unwrap();
    assert_ne!(a.logits(&batch(&data)).unwrap(), b.logits(&batch(&data)).unwrap());
    b.load_params(&path).unwrap();
    assert_eq!(a.logits(&batch(&data)).unwrap(), b.logits(&batch(&data)).unwrap());

    let other = apply_ablation(&cfg, "wo_tfi").unwrap();
    let mut c = model_for(&other, &books);
    assert!(c.load_params(&path).is_err());
}

struct Oracle;
struct AlwaysWrong;
struct Constant(usize);
struct AudioOnly;

impl Predictor for Oracle {
    fn predict(&self, b: &[&FeatureBundle]) -> Result<Vec<usize>> {
        Ok(b.iter().map(|x| x.label).collect())
    }
}

impl Predictor for AlwaysWrong {
    fn predict(&self, b: &[&FeatureBundle]) -> Result<Vec<usize>> {
        Ok(b.iter().map(|x| (x.label + 1) % 8).collect())
    }
}

impl Predictor for Constant {
    fn predict(&self, b: &[&FeatureBundle]) -> Result<Vec<usize>> {
        Ok(vec![self.0; b.len()])
    }
}

impl Predictor for AudioOnly {
    fn predict(&self, b: &[&FeatureBundle]) -> Result<Vec<usize>> {
        Ok(b.iter()
            .map(|x| match x.question_type.modality() {
                qstar::synth::Modality::Audio => x.label,
                _ => x.label + 1,
            })
            .collect())
    }
}

fn relabelled(n: usize, seed: u64) -> Vec<FeatureBundle> {
    let cfg = RunConfig::default();
    let (_, data) = setup(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut b = data[i % data.len()].clone();
            b.label = rng.gen_range(0..8);
            let t = Template::ALL[i % Template::ALL.len()];
            b.question_type = QuestionType::new(t, t == Template::Existential && i % 4 == 0);
            b
        })
        .collect()
}

#[test]
fn stub_predictors_score_as_expected() {
    let data = relabelled(1000, 12);
    assert_eq!(evaluate(&Oracle, &data, 64).unwrap().overall, 1.0);
    assert_eq!(evaluate(&AlwaysWrong, &data, 64).unwrap().overall, 0.0);
    let p: f64 = 1.0 / 8.0;
    let three_sigma = 3.0 * (p * (1.0 - p) / 1000.0).sqrt();
    let acc = evaluate(&Constant(3), &data, 64).unwrap();
    assert!((acc.overall - p).abs() < three_sigma, "{}", acc.overall);
    assert!(evaluate(&Oracle, &[], 8).is_err());
}

#[test]
fn group_accuracies_only_count_their_own_tags() {
    let data = relabelled(600, 13);
    let acc = evaluate(&AudioOnly, &data, 50).unwrap();
    assert_eq!(acc.audio, Some(1.0));
    assert_eq!(acc.visual, Some(0.0));
    assert_eq!(acc.audio_visual, Some(0.0));
    assert_eq!(acc.per_template["louder_than"], 1.0);
    assert_eq!(acc.per_template["existential"], 0.0);
    assert_eq!(acc.frequency_critical_samples, 50);
    assert_eq!(acc.samples, 600);
    assert!((acc.overall - 200.0 / 600.0).abs() < 1e-15);
}
