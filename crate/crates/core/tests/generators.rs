mod common;

use common::{check_arith, check_assign, dump_units, XmlValidator};
use holocell::rng::stream_rng;
use holocell::tasks::{arithmetic_unit, assign_unit, copy_episode, CopyTask, Stream, TaskKind};
use proptest::prelude::*;

#[test]
fn xml_stream_passes_stack_validator() {
    for stream in 0..3 {
        let mut s = Stream::new(TaskKind::Xml, 11, stream).unwrap();
        let vocab = s.vocab().clone();
        let mut v = XmlValidator::default();
        for _ in 0..50_000 {
            let (id, masked) = s.next_symbol().unwrap();
            v.feed(vocab.symbol(id), masked).unwrap();
        }
        assert_eq!(v.max_depth, 4);
    }
}

#[test]
fn xml_validator_rejects_bad_documents() {
    let feed = |text: &str, mask: &str| {
        let mut v = XmlValidator::default();
        text.chars()
            .zip(mask.chars())
            .try_for_each(|(c, m)| v.feed(c, m == '^'))
    };
    assert!(feed("<a></a>", "^  ^ ^^").is_ok());
    assert!(feed("<a></b>", "^  ^ ^^").is_err());
    assert!(feed("<a></a>", "^  ^  ^").is_err());
    assert!(feed("<a><b><c><d><e>", "^  ^  ^  ^  ^  ").is_err());
    assert!(feed("</a>", "^ ^^").is_err());
}

#[test]
fn assign_blocks_replay() {
    let mut rng = stream_rng(21, 0);
    for _ in 0..20_000 {
        let u = assign_unit(&mut rng);
        check_assign(&u.text, &u.mask).unwrap();
    }
    assert!(check_assign("s(ab,c),q(ab)d.", &[false; 13].iter().chain(&[true, true]).copied().collect::<Vec<_>>()).is_err());
}

#[test]
fn arithmetic_matches_exact_evaluation() {
    let mut rng = stream_rng(22, 0);
    let mut negative = 0;
    for _ in 0..50_000 {
        let u = arithmetic_unit(&mut rng);
        negative += (check_arith(&u.text, &u.mask).unwrap() < 0) as usize;
    }
    // Signs and operators are symmetric, so about half the results are negative.
    assert!((20_000..30_000).contains(&negative), "{negative}");
    let mask = |t: &str, from: usize| (0..t.len()).map(|i| i >= from).collect::<Vec<_>>();
    assert_eq!(check_arith("-4-98308856=06880389-]", &mask("-4-98308856=06880389-]", 12)).unwrap(), -98308860);
    assert!(check_arith("1+1=3]", &mask("1+1=3]", 4)).is_err());
    assert!(check_arith("01+1=2]", &mask("01+1=2]", 5)).is_err());
}

#[test]
fn arithmetic_operand_lengths_are_uniform() {
    let mut rng = stream_rng(23, 0);
    let mut counts = [0usize; 9];
    let n = 40_000;
    for _ in 0..n {
        let u = arithmetic_unit(&mut rng);
        let body = u.text.trim_start_matches('-');
        let len = body.find(['+', '-']).unwrap();
        counts[len] += 1;
    }
    for &c in &counts[1..] {
        assert!((c as f64 - n as f64 / 8.0).abs() < 300.0, "{counts:?}");
    }
}

#[test]
fn copy_answers_repeat_the_prefix() {
    let task = CopyTask::variable();
    for i in 0..2_000 {
        let ep = copy_episode(&task, 4, i);
        let k = ep.n_masked();
        assert!((1..=10).contains(&k));
        let answer: Vec<usize> = ep.targets.iter().zip(&ep.mask).filter(|(_, m)| **m).map(|(t, _)| *t).collect();
        assert_eq!(answer, ep.inputs[..k]);
        assert!(ep.mask[ep.len() - k..].iter().all(|&m| m));
    }
}

#[test]
fn streams_are_pure_in_seed_and_index() {
    for task in [TaskKind::Xml, TaskKind::Assign, TaskKind::Arith] {
        let take = |seed, stream| {
            let mut s = Stream::new(task, seed, stream).unwrap();
            (0..500).map(|_| s.next_symbol().unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(take(1, 2), take(1, 2));
        assert_ne!(take(1, 2), take(1, 3));
        assert_ne!(take(1, 2), take(2, 2));
    }
}

#[test]
fn dump_listing_parses_back() {
    let listing = "1+2=3]\n    ^^\n";
    let units = dump_units(listing);
    assert_eq!(units.len(), 1);
    check_arith(&units[0].0, &units[0].1).unwrap();
}

proptest! {
    #[test]
    fn windows_partition_every_stream(seed in 0u64..1000, len in 1usize..150) {
        let mut whole = Stream::new(TaskKind::Assign, seed, 0).unwrap();
        let mut cut = Stream::new(TaskKind::Assign, seed, 0).unwrap();
        let w = whole.next_window(3 * len).unwrap();
        let mut parts = Vec::new();
        for _ in 0..3 {
            let p = cut.next_window(len).unwrap();
            prop_assert_eq!(p.len(), len);
            parts.push(p);
        }
        let inputs: Vec<usize> = parts.iter().flat_map(|p| p.inputs.clone()).collect();
        let targets: Vec<usize> = parts.iter().flat_map(|p| p.targets.clone()).collect();
        prop_assert_eq!(&inputs, &w.inputs);
        prop_assert_eq!(&targets, &w.targets);
        prop_assert_eq!(&w.inputs[1..], &w.targets[..w.len() - 1]);
    }

    #[test]
    fn arithmetic_units_always_verify(seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 0);
        for _ in 0..20 {
            let u = arithmetic_unit(&mut rng);
            prop_assert!(check_arith(&u.text, &u.mask).is_ok(), "{}", u.text);
        }
    }
}
