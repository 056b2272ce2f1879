use pooling_core::langgen::*;
use pooling_core::rng::rng_from_seed;
use pooling_core::special::inv_logit;
use proptest::prelude::*;

/// Exact-arithmetic reference: quotas `tokens * (L / r) / sum(L / r)` with
/// `L = lcm(1..=types)`, floors plus largest remainders, then zero counts
/// lifted to one from the largest count.
fn zipf_reference(types: u64, tokens: u64) -> Vec<u64> {
    let gcd = |mut a: u128, mut b: u128| {
        while b != 0 {
            (a, b) = (b, a % b);
        }
        a
    };
    let l = (1..=types as u128).fold(1u128, |l, r| l / gcd(l, r) * r);
    let den: u128 = (1..=types as u128).map(|r| l / r).sum();
    let nums: Vec<u128> = (1..=types as u128).map(|r| tokens as u128 * (l / r)).collect();
    let mut counts: Vec<u64> = nums.iter().map(|n| (n / den) as u64).collect();
    let left = tokens - counts.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..types as usize).collect();
    order.sort_by(|&a, &b| (nums[b] % den).cmp(&(nums[a] % den)).then(a.cmp(&b)));
    for &i in order.iter().take(left as usize) {
        counts[i] += 1;
    }
    while let Some(z) = counts.iter().position(|&c| c == 0) {
        let max = *counts.iter().max().unwrap();
        let donor = counts.iter().rposition(|&c| c == max).unwrap();
        counts[donor] -= 1;
        counts[z] = 1;
    }
    counts
}

#[test]
fn zipf_matches_exact_reference() {
    let c = zipf_counts(10, 500, 1.0).unwrap();
    assert_eq!(c[0], 171);
    assert_eq!(c.iter().map(|&v| v as u64).collect::<Vec<_>>(), zipf_reference(10, 500));
    for (types, tokens) in [(40, 500), (20, 20), (7, 1000), (30, 31)] {
        let got: Vec<u64> = zipf_counts(types, tokens, 1.0).unwrap().into_iter().map(|v| v as u64).collect();
        assert_eq!(got, zipf_reference(types as u64, tokens as u64), "types {types} tokens {tokens}");
    }
}

#[test]
fn zipf_rank_frequency_slope() {
    let c = zipf_counts(100, 500, 1.0).unwrap();
    assert!(*c.iter().min().unwrap() >= 1);
    let xs: Vec<f64> = (1..=100).map(|r| (r as f64).ln()).collect();
    let ys: Vec<f64> = c.iter().map(|&v| (v as f64).ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 100.0, ys.iter().sum::<f64>() / 100.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((slope + 1.0).abs() <= 0.15, "slope {slope}");
}

#[test]
fn zipf_rejects_too_few_tokens() {
    assert!(matches!(zipf_counts(10, 9, 1.0), Err(pooling_core::Error::InsufficientTokens { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]
    #[test]
    fn zipf_sums_exactly(types in 1usize..200, extra in 0usize..5000, exponent in 0.0f64..2.5) {
        let tokens = types + extra;
        let c = zipf_counts(types, tokens, exponent).unwrap();
        prop_assert_eq!(c.len(), types);
        prop_assert_eq!(c.iter().sum::<usize>(), tokens);
        prop_assert!(c.iter().all(|&v| v >= 1));
        prop_assert_eq!(c, zipf_counts(types, tokens, exponent).unwrap());
    }
}

#[test]
fn default_corpus_shape() {
    let c = generate_corpus(&GrammarSpec::default()).unwrap();
    assert_eq!(c.context_table.len(), 110);
    assert_eq!(c.strings.len(), 1000);
    assert_eq!(c.group(Group::X).token_freq, 500);
    assert_eq!(c.group(Group::Y).token_freq, 500);
    assert_eq!(c.group(Group::X).type_freq, 10);
    assert_eq!(c.group(Group::Y).type_freq, 100);
    let mut sorted: Vec<usize> = c.context_table.iter().filter(|r| r.group == Group::X).map(|r| r.n).collect();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    assert_eq!(sorted[0], 171);
}

#[test]
fn regeneration_is_bit_identical() {
    let spec = GrammarSpec { seed: 77, s: 2.0, ..Default::default() };
    let (a, b) = (generate_corpus(&spec).unwrap(), generate_corpus(&spec).unwrap());
    assert_eq!(a.strings, b.strings);
    let bits = |c: &Corpus| c.context_table.iter().map(|r| (r.true_logodds.to_bits(), r.observed_p.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    let mut ta = Vec::new();
    let mut tb = Vec::new();
    write_corpus_tsv(&a.strings, &mut ta).unwrap();
    write_corpus_tsv(&b.strings, &mut tb).unwrap();
    assert_eq!(ta, tb);
}

#[test]
fn zero_noise_truth() {
    let c = generate_corpus(&GrammarSpec { s: 0.0, ..Default::default() }).unwrap();
    for r in &c.context_table {
        let want = if r.group == Group::Y { 0.731_058_578_630_004_9 } else { 0.268_941_421_369_995_1 };
        assert!((r.true_p - want).abs() < 1e-12);
    }
    let forced = generate_corpus(&GrammarSpec { s: 0.0, b: 60.0, ..Default::default() }).unwrap();
    assert!(forced.context_table.iter().filter(|r| r.group == Group::Y).all(|r| r.count_a == r.n));
    assert!(forced.context_table.iter().filter(|r| r.group == Group::X).all(|r| r.count_a == 0));
}

#[test]
fn effect_sd_large_sample() {
    let spec = GrammarSpec { types_x: 5000, types_y: 5000, b: 1.0, s: 1.0, ..Default::default() };
    let effects = sample_context_effects(&spec, &mut rng_from_seed(3));
    let e: Vec<f64> = effects.iter().map(|t| t.true_logodds - t.group.sign() * spec.b).collect();
    let m = e.iter().sum::<f64>() / e.len() as f64;
    let sd = (e.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (e.len() as f64 - 1.0)).sqrt();
    assert!((sd - 1.0).abs() < 0.02, "sd {sd}");
}

#[test]
fn law_of_large_numbers() {
    let p = inv_logit(1.0);
    let truth = ContextTruth { context_id: ContextId(1), group: Group::Y, true_logodds: 1.0, true_p: p };
    let strings = sample_strings(&[(truth, 100_000)], &mut rng_from_seed(11));
    let (ctx, _) = tabulate(&strings).unwrap();
    assert_eq!(ctx[0].n, 100_000);
    assert!((ctx[0].observed_p - p).abs() < 0.01);
}

#[test]
fn observed_p_is_unbiased() {
    let spec = GrammarSpec { seed: 5, ..Default::default() };
    let base = generate_corpus(&spec).unwrap();
    let plan: Vec<(ContextTruth, usize)> = base
        .context_table
        .iter()
        .map(|r| {
            let t = ContextTruth { context_id: r.context_id, group: r.group, true_logodds: r.true_logodds, true_p: r.true_p };
            (t, r.n)
        })
        .collect();
    let reps = 200;
    let mut diff = vec![0.0; plan.len()];
    for rep in 0..reps {
        let (ctx, _) = tabulate(&sample_strings(&plan, &mut rng_from_seed(1000 + rep))).unwrap();
        for (i, c) in ctx.iter().enumerate() {
            assert_eq!(c.context_id, plan[i].0.context_id);
            diff[i] += c.observed_p - plan[i].0.true_p;
        }
    }
    for (i, (t, n)) in plan.iter().enumerate() {
        let mean = diff[i] / reps as f64;
        let se = (t.true_p * (1.0 - t.true_p) / (*n as f64 * reps as f64)).sqrt();
        assert!(mean.abs() <= 3.0 * se, "context {:?}: mean diff {mean}, se {se}", t.context_id);
    }
}

#[test]
fn stats_recompute_and_small_cases() {
    let c = generate_corpus(&GrammarSpec { seed: 9, ..Default::default() }).unwrap();
    let (table, groups) = c.context_stats().unwrap();
    assert_eq!(table, c.context_table);
    assert_eq!(groups, c.group_stats);

    let s = |id, last| LangString { context_id: ContextId(id), penult: Group::X, last };
    let (ctx, _) = tabulate(&[s(1, Final::A), s(1, Final::B)]).unwrap();
    assert_eq!((ctx[0].n, ctx[0].observed_p), (2, 0.5));

    let (ctx, groups) = tabulate(&[s(1, Final::A), s(2, Final::B)]).unwrap();
    assert_eq!(ctx.len(), 2);
    assert!((groups[Group::X.index()].between_var - 0.25).abs() < 1e-15);

    assert!(matches!(tabulate(&[]), Err(pooling_core::Error::EmptyCorpus)));
}

#[test]
fn tsv_and_csv_round_trip() {
    let c = generate_corpus(&GrammarSpec { seed: 2, ..Default::default() }).unwrap();
    let mut buf = Vec::new();
    write_corpus_tsv(&c.strings, &mut buf).unwrap();
    assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 1000);
    assert_eq!(read_corpus_tsv(buf.as_slice()).unwrap(), c.strings);

    let mut csv = Vec::new();
    write_csv(&c.context_table, &mut csv).unwrap();
    let text = String::from_utf8(csv.clone()).unwrap();
    assert!(text.starts_with("context_id,group,n,count_a,observed_p,true_logodds,true_p\n"));
    assert!(!text.contains('\r'));
    let back: Vec<ContextRow> = read_csv(csv.as_slice()).unwrap();
    assert_eq!(back, c.context_table);
}

#[test]
fn type_ratio_mode_budgets() {
    let spec = GrammarSpec { freq_match: FreqMatch::EqualTokenTypeRatio, ..Default::default() };
    let (x, y) = spec.token_budgets();
    assert_eq!(x + y, 1000);
    // same tokens per type in both groups
    assert!(((x as f64 / 10.0) - (y as f64 / 100.0)).abs() < 1.0);
}
