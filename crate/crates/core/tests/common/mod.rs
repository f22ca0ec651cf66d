#![allow(dead_code)]

pub mod audit_corpus;

use mrpt_core::corpus::Style;
use mrpt_core::dataset::{pack, Instance, Modality, PackedSample};
use mrpt_core::model::{loss, loss_and_grad, ModelConfig, Parameters, Separation};
use mrpt_core::objectives::{prepare_sample, CorruptionVocab, Objective, ObjectiveKind};
use ndarray::NdFloat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every fifth id from 10 on.
pub fn sep_ids(vocab: usize) -> Vec<u32> {
    (10..vocab as u32).step_by(5).collect()
}

pub fn config(separation: Separation, vocab: usize, dim: usize, context: usize) -> ModelConfig {
    ModelConfig {
        layers: 2,
        model_dim: dim,
        ffn_dim: 2 * dim,
        heads: 2,
        context,
        vocab_size: vocab,
        separation,
        separation_set: (separation == Separation::Pes).then(|| sep_ids(vocab)),
        tie_output: true,
    }
}

/// Initialised weights with every tensor perturbed, so biases, gains and
/// overlay rows all differ from their defaults.
pub fn perturbed<F: NdFloat>(cfg: &ModelConfig, seed: u64, noise: f64) -> Parameters<F> {
    let mut p = Parameters::<F>::init(cfg, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for t in p.tensors_mut() {
        for v in t {
            *v += F::from(r.random_range(-noise..noise)).unwrap();
        }
    }
    p
}

/// Random instance in either layout with the given span lengths. Ids are
/// drawn from `9..vocab` (above the control block) except for markers.
pub fn instance(r: &mut impl Rng, vocab: usize, doc: usize, sig: usize, code: usize, style: Style) -> Instance {
    let mut tok = |n: usize| -> Vec<u32> { (0..n).map(|_| r.random_range(9..vocab as u32)).collect() };
    let (d, s, c) = (tok(doc), tok(sig), tok(code));
    let mut ids = Vec::new();
    let mut modality = Vec::new();
    let mut push = |ids: &mut Vec<u32>, part: &[u32], m: Modality| {
        let start = ids.len();
        ids.extend_from_slice(part);
        modality.extend(std::iter::repeat_n(m, part.len()));
        start..ids.len()
    };
    let (doc_span, sig_span) = match style {
        Style::Pangu => {
            push(&mut ids, &[1], Modality::Nl);
            let ds = push(&mut ids, &d, Modality::Nl);
            push(&mut ids, &[2], Modality::Code);
            let ss = push(&mut ids, &s, Modality::Code);
            (ds, ss)
        }
        Style::Pycodegpt => {
            push(&mut ids, &[4], Modality::Code);
            let ss = push(&mut ids, &s, Modality::Code);
            push(&mut ids, &[1], Modality::Nl);
            let ds = push(&mut ids, &d, Modality::Nl);
            push(&mut ids, &[2], Modality::Code);
            (ds, ss)
        }
    };
    let code_span = push(&mut ids, &c, Modality::Code);
    push(&mut ids, &[3], Modality::Code);
    Instance {
        ids,
        modality,
        doc_span,
        sig_span,
        code_span,
        style,
    }
}

/// Relative error with an absolute floor in the denominator.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub const GRAD_FLOOR: f64 = 1e-6;

pub fn corruption_vocab(vocab: usize) -> CorruptionVocab {
    CorruptionVocab {
        mask_id: 8,
        random_ids: (9..vocab as u32).collect(),
    }
}

/// One packed sample holding a PanGu-layout and a PyCodeGPT-layout instance.
pub fn packed_pair(seed: u64, vocab: usize, context: usize) -> PackedSample {
    let mut r = rng(seed);
    let a = instance(&mut r, vocab, 4, 2, 3, Style::Pangu);
    let b = instance(&mut r, vocab, 3, 2, 4, Style::Pycodegpt);
    let mut s = pack(&[a, b], context, 0).unwrap();
    assert_eq!(s.len(), 1);
    s.remove(0)
}

/// Largest relative error between the analytic gradient and 64-bit central
/// differences (step 1e-4) over every parameter.
pub fn max_grad_error(cfg: &ModelConfig, kind: ObjectiveKind, floor: f64) -> f64 {
    let mut params = perturbed::<f64>(cfg, 11, 0.5);
    let sample = packed_pair(3, cfg.vocab_size, cfg.context);
    let objective = Objective::new(kind);
    let seq = prepare_sample(&sample, &objective, &corruption_vocab(cfg.vocab_size), &mut rng(5)).unwrap();
    let seqs = [seq];
    let (_, grad) = loss_and_grad(&params, &seqs).unwrap();
    let analytic: Vec<f64> = grad.tensors().iter().flat_map(|(_, t, _)| t.to_vec()).collect();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut index = 0;
    let sizes: Vec<usize> = params.tensors().iter().map(|(_, t, _)| t.len()).collect();
    for (t, size) in sizes.into_iter().enumerate() {
        for i in 0..size {
            let orig = params.tensors_mut()[t][i];
            params.tensors_mut()[t][i] = orig + h;
            let up = loss(&params, &seqs).unwrap();
            params.tensors_mut()[t][i] = orig - h;
            let down = loss(&params, &seqs).unwrap();
            params.tensors_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(analytic[index], numeric, floor));
            index += 1;
        }
    }
    worst
}

/// The 32 docstring/code pairs of the toy corpus fixture.
pub fn toy_pairs(style: Style) -> Vec<mrpt_core::corpus::FormattedPair> {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy_corpus");
    mrpt_core::corpus::run_pipeline(&root, &Default::default(), style, 1).unwrap().pairs
}

/// A vocabulary trained on the toy corpus in both layouts.
pub fn toy_vocabulary(size: usize) -> mrpt_core::tokenizer::Vocabulary {
    let texts: Vec<String> = [Style::Pangu, Style::Pycodegpt]
        .into_iter()
        .flat_map(toy_pairs)
        .map(|p| p.text())
        .collect();
    mrpt_core::tokenizer::train_vocabulary(texts.iter().map(String::as_str), size, &mrpt_core::control::ALL).unwrap()
}
