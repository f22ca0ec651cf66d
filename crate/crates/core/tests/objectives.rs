mod common;

use mrpt_core::corpus::Style;
use mrpt_core::dataset::{pack, Modality, PAD_SEGMENT};
use mrpt_core::model::{forward, loss, target_nll, Parameters, Separation};
use mrpt_core::objectives::{
    build_loss_mask, corrupt_docstring, prepare_sample, Objective, ObjectiveKind, Replacement,
};
use proptest::prelude::*;

const VOCAB: usize = 60;

#[test]
fn branch_frequencies_match_their_probabilities() {
    let mut r = common::rng(1);
    let inst = common::instance(&mut r, VOCAB, 20_000, 2, 3, Style::Pangu);
    let objective = Objective::new(ObjectiveKind::CorruptCode);
    let (out, plan) = corrupt_docstring(&inst, &objective, &common::corruption_vocab(VOCAB), &mut common::rng(2));
    let n = inst.doc_span.len() as f64;
    let within = |count: f64, trials: f64, p: f64| {
        let sd = (trials * p * (1.0 - p)).sqrt();
        (count - trials * p).abs() <= 3.0 * sd
    };
    let selected = plan.indices.len() as f64;
    assert!(within(selected, n, 0.15), "selected {selected} of {n}");
    let count = |f: fn(&Replacement) -> bool| plan.replacement.iter().filter(|r| f(r)).count() as f64;
    assert!(within(count(|r| matches!(r, Replacement::Mask)), selected, 0.8));
    assert!(within(count(|r| matches!(r, Replacement::Random(_))), selected, 0.1));
    assert!(within(count(|r| matches!(r, Replacement::Keep)), selected, 0.1));
    for (i, rep) in plan.indices.iter().zip(&plan.replacement) {
        match rep {
            Replacement::Mask => assert_eq!(out.ids[*i], 8),
            Replacement::Random(id) => assert_eq!(out.ids[*i], *id),
            Replacement::Keep => assert_eq!(out.ids[*i], inst.ids[*i]),
        }
    }
}

#[test]
fn invalid_corruption_settings_are_rejected() {
    let mut o = Objective::new(ObjectiveKind::CorruptCode);
    o.corruption_prob = 1.5;
    assert!(o.validate().is_err());
    let mut o = Objective::new(ObjectiveKind::CorruptCode);
    o.branch_probs = [0.5, 0.5, 0.5];
    assert!(o.validate().is_err());
    assert!(Objective::new(ObjectiveKind::CorruptCode).validate().is_ok());
    assert!("prefix".parse::<ObjectiveKind>().is_err());
    for k in ObjectiveKind::ALL {
        assert_eq!(k.as_str().parse::<ObjectiveKind>().unwrap(), k);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn loss_masks_nest(seed in any::<u64>(), doc in 1..12usize, sig in 1..5usize, code in 1..12usize, pangu in any::<bool>()) {
        let style = if pangu { Style::Pangu } else { Style::Pycodegpt };
        let inst = common::instance(&mut common::rng(seed), VOCAB, doc, sig, code, style);
        let full = build_loss_mask(&inst, ObjectiveKind::TextCode);
        prop_assert_eq!(full.iter().map(|v| *v as usize).sum::<usize>(), inst.len() - 1);
        for kind in [ObjectiveKind::Code, ObjectiveKind::CorruptCode, ObjectiveKind::PrefixCode] {
            let m = build_loss_mask(&inst, kind);
            prop_assert_eq!(m.len(), inst.len());
            for t in 0..inst.len() {
                let expected = inst.code_span.contains(&t) || t + 1 == inst.len();
                prop_assert_eq!(m[t] == 1, expected);
                prop_assert!(m[t] <= full[t]);
                if m[t] == 1 {
                    prop_assert_eq!(inst.modality[t], Modality::Code);
                }
            }
        }
    }

    #[test]
    fn corruption_touches_only_the_docstring(seed in any::<u64>(), doc in 1..40usize, p in 0.0..1.0f64) {
        let inst = common::instance(&mut common::rng(seed), VOCAB, doc, 2, 4, Style::Pycodegpt);
        let mut objective = Objective::new(ObjectiveKind::CorruptCode);
        objective.corruption_prob = p;
        let (out, plan) = corrupt_docstring(&inst, &objective, &common::corruption_vocab(VOCAB), &mut common::rng(seed ^ 1));
        prop_assert_eq!(&out.modality, &inst.modality);
        prop_assert_eq!((&out.doc_span, &out.sig_span, &out.code_span), (&inst.doc_span, &inst.sig_span, &inst.code_span));
        for i in 0..inst.len() {
            if !inst.doc_span.contains(&i) {
                prop_assert_eq!(out.ids[i], inst.ids[i]);
            }
        }
        prop_assert!(plan.indices.iter().all(|i| inst.doc_span.contains(i)));
    }

    #[test]
    fn prepared_samples_never_score_padding_or_segment_starts(seed in any::<u64>(), k in 0..4usize) {
        let mut r = common::rng(seed);
        let insts: Vec<_> = (0..5).map(|i| common::instance(&mut r, VOCAB, 2 + i, 2, 3, if i % 2 == 0 { Style::Pangu } else { Style::Pycodegpt })).collect();
        let objective = Objective::new(ObjectiveKind::ALL[k]);
        for sample in pack(&insts, 40, 0).unwrap() {
            let seq = prepare_sample(&sample, &objective, &common::corruption_vocab(VOCAB), &mut common::rng(seed)).unwrap();
            for t in 0..seq.len() {
                if sample.segment_ids[t] == PAD_SEGMENT || sample.position_ids[t] == 0 {
                    prop_assert_eq!(seq.loss_mask[t], 0);
                }
            }
        }
    }
}

fn toy_params(seed: u64) -> Parameters<f64> {
    common::perturbed::<f64>(&common::config(Separation::Fes, VOCAB, 16, 64), seed, 0.3)
}

#[test]
fn code_objective_still_conditions_on_the_docstring() {
    let params = toy_params(4);
    let sample = common::packed_pair(7, VOCAB, 64);
    let objective = Objective::new(ObjectiveKind::Code);
    let cv = common::corruption_vocab(VOCAB);
    let seq = prepare_sample(&sample, &objective, &cv, &mut common::rng(0)).unwrap();
    let seg = &sample.segments[0];
    let mut changed = seq.clone();
    let at = seg.abs(&seg.doc_span).start;
    changed.ids[at] = if seq.ids[at] == 9 { 10 } else { 9 };
    let a = forward(&params, &seq).unwrap();
    let b = forward(&params, &changed).unwrap();
    let code = seg.abs(&seg.code_span);
    let diff: f64 = code.clone().map(|i| (&a.row(i - 1) - &b.row(i - 1)).mapv(f64::abs).sum()).sum();
    assert!(diff > 1e-6, "code logits ignore the docstring");
    // The other segment never sees it.
    let other = sample.segments[1].range();
    for i in other {
        assert_eq!(a.row(i), b.row(i));
    }
}

#[test]
fn prefix_rows_see_the_whole_prefix_only_under_prefix_code() {
    let params = toy_params(5);
    let sample = common::packed_pair(8, VOCAB, 64);
    let cv = common::corruption_vocab(VOCAB);
    let seg = &sample.segments[0];
    let doc = seg.abs(&seg.doc_span);
    let last_doc = doc.end - 1;
    for (kind, expect_change) in [(ObjectiveKind::Code, false), (ObjectiveKind::PrefixCode, true)] {
        let seq = prepare_sample(&sample, &Objective::new(kind), &cv, &mut common::rng(0)).unwrap();
        let mut changed = seq.clone();
        changed.ids[last_doc] = if seq.ids[last_doc] == 9 { 10 } else { 9 };
        let a = forward(&params, &seq).unwrap();
        let b = forward(&params, &changed).unwrap();
        let first = doc.start;
        let moved = (&a.row(first) - &b.row(first)).mapv(f64::abs).sum() > 1e-9;
        assert_eq!(moved, expect_change, "{kind}");
        // Code rows never see later code.
        let code = seg.abs(&seg.code_span);
        let mut later = seq.clone();
        later.ids[code.end - 1] = if seq.ids[code.end - 1] == 9 { 10 } else { 9 };
        let c = forward(&params, &later).unwrap();
        for i in seg.start..code.end - 1 {
            assert_eq!(a.row(i), c.row(i), "{kind} row {i}");
        }
    }
}

#[test]
fn batch_loss_is_a_token_mean_not_a_mean_of_means() {
    let params = toy_params(6);
    let cv = common::corruption_vocab(VOCAB);
    let objective = Objective::new(ObjectiveKind::TextCode);
    let mut r = common::rng(9);
    let short = pack(&[common::instance(&mut r, VOCAB, 1, 1, 1, Style::Pangu)], 32, 0).unwrap().remove(0);
    let long = pack(&[common::instance(&mut r, VOCAB, 8, 3, 12, Style::Pangu)], 32, 0).unwrap().remove(0);
    let seqs: Vec<_> = [short, long]
        .iter()
        .map(|s| prepare_sample(s, &objective, &cv, &mut common::rng(0)).unwrap())
        .collect();
    let nll: Vec<Vec<f64>> = seqs.iter().map(|s| target_nll(&params, s).unwrap().into_iter().map(|(_, v)| v).collect()).collect();
    let count: usize = nll.iter().map(Vec::len).sum();
    let pooled: f64 = nll.iter().flatten().sum::<f64>() / count as f64;
    let got = loss(&params, &seqs).unwrap();
    assert!((got - pooled).abs() < 1e-12, "{got} vs {pooled}");
    let mean_of_means = nll.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).sum::<f64>() / 2.0;
    assert!((got - mean_of_means).abs() > 1e-6);
}

#[test]
fn an_unscored_batch_is_an_error() {
    let params = toy_params(7);
    let sample = common::packed_pair(1, VOCAB, 64);
    let mut seq = prepare_sample(&sample, &Objective::new(ObjectiveKind::Code), &common::corruption_vocab(VOCAB), &mut common::rng(0)).unwrap();
    seq.loss_mask.iter_mut().for_each(|v| *v = 0);
    assert!(matches!(loss(&params, &[seq]).unwrap_err(), mrpt_core::Error::EmptyLossMask));
}
