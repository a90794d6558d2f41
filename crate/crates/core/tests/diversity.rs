use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use replykit::corpus::{build_vocab, tokenize, TokenId};
use replykit::diversity::{normalize_scores, select_suggestions, SuggestionList};
use replykit::response_space::{Polarity, ResponseEntry, ResponseSet};
use replykit::scoring::{RecurrentConfig, RecurrentModel};
use replykit::search::{beam_search, build_trie};
use replykit::synthetic::meeting_fixture;

#[test]
fn meeting_invite_final_suggestions() {
    let f = meeting_fixture();
    let trie = build_trie(&f.set, &f.vocab);
    let msg = f.vocab.encode(&tokenize(f.message));
    let out = select_suggestions(&f.scorer, &trie, &f.set, &msg, 30, 30, f.lambda).unwrap();
    assert_eq!(
        out.texts(),
        vec!["Sure, I'll be there.", "Yes, I can.", "Sorry, I won't be able to make it tomorrow."]
    );
}

#[test]
fn generic_yes_leaves_top_ten_after_normalization() {
    let f = meeting_fixture();
    let trie = build_trie(&f.set, &f.vocab);
    let msg = f.vocab.encode(&tokenize(f.message));
    let raw = beam_search(&f.scorer, &msg, &trie, 30, 30, None).unwrap();
    let text = |i: usize| f.set.entries[i].text();
    let yes = tokenize("Yes!").join(" ");
    assert!(raw[..10].iter().any(|r| text(r.entry_index) == yes));
    assert_eq!(text(raw[0].entry_index), tokenize("Yes, I'll be there.").join(" "));
    let norm = normalize_scores(raw, &f.set, f.lambda);
    assert!(norm[..10].iter().all(|r| text(r.entry_index) != yes));
    assert_eq!(text(norm[0].entry_index), tokenize("Sure, I'll be there.").join(" "));
}

#[test]
fn single_intent_gives_one_suggestion() {
    let f = meeting_fixture();
    let mut set = f.set.clone();
    for e in &mut set.entries {
        e.intent_id = "all".into();
    }
    let trie = build_trie(&set, &f.vocab);
    let msg = f.vocab.encode(&tokenize(f.message));
    let out = select_suggestions(&f.scorer, &trie, &set, &msg, 30, 30, f.lambda).unwrap();
    assert_eq!(out.len(), 1);
}

/// Independent statement of the list invariants. `first_pass` holds the
/// polarities of the deduplicated first-pass ranking.
fn check(list: &SuggestionList, first_pass: &[Polarity], negative_available: bool) {
    assert!(list.len() <= 3);
    let intents: Vec<&str> = list.items.iter().map(|s| s.intent_id.as_str()).collect();
    for i in 0..intents.len() {
        for j in i + 1..intents.len() {
            assert_ne!(intents[i], intents[j]);
        }
    }
    let pos_in_two = first_pass.iter().take(2).any(|&p| p == Polarity::Positive);
    let no_neg_in_three = first_pass.iter().take(3).all(|&p| p != Polarity::Negative);
    if pos_in_two && no_neg_in_three && negative_available {
        assert_eq!(list.len(), 3);
        assert_eq!(list.items[2].polarity, Polarity::Negative);
    }
}

#[test]
fn random_runs_keep_intents_distinct_and_enforce_negatives() {
    const WORDS: [&str; 10] = ["yes", "no", "sure", "sorry", "i", "can", "not", "be", "there", "thanks"];
    let vocab = build_vocab(&[WORDS.iter().map(|w| w.to_string()).collect::<Vec<_>>()], 50).unwrap();
    let model = RecurrentModel::init(
        vocab.clone(),
        RecurrentConfig {
            embed_dim: 8,
            hidden_dim: 8,
            projection_dim: 8,
            init_scale: 0.8,
            ..Default::default()
        },
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let mut entries = Vec::new();
        let mut seen = std::collections::HashSet::new();
        while entries.len() < 40 {
            let tokens: Vec<String> = (0..rng.gen_range(1..4)).map(|_| WORDS[rng.gen_range(0..10)].to_string()).collect();
            if !seen.insert(tokens.clone()) {
                continue;
            }
            let polarity = [Polarity::Positive, Polarity::Negative, Polarity::Neutral][rng.gen_range(0..3)];
            entries.push(ResponseEntry {
                tokens,
                intent_id: format!("{:?}{}", polarity, rng.gen_range(0..6)),
                polarity,
                prior_logp: -rng.gen_range(0.0..8.0),
                validated: true,
            });
        }
        let set = ResponseSet { entries };
        let trie = build_trie(&set, &vocab);
        let msg: Vec<TokenId> = (0..3).map(|_| rng.gen_range(0..vocab.len() as TokenId)).collect();
        let list = select_suggestions(&model, &trie, &set, &msg, 50, 10, 0.3).unwrap();

        // First-pass top three, recomputed independently of the selection.
        let raw = beam_search(&model, &msg, &trie, 50, 10, None).unwrap();
        let mut ranked: Vec<(f64, usize)> = raw.iter().map(|r| (r.logp + 0.3 * -set.entries[r.entry_index].prior_logp, r.entry_index)).collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut top = Vec::new();
        let mut intents = Vec::new();
        for (_, i) in ranked {
            if !intents.contains(&set.entries[i].intent_id) {
                intents.push(set.entries[i].intent_id.clone());
                top.push(set.entries[i].polarity);
            }
        }
        let shown: Vec<&str> = intents.iter().take(2).map(String::as_str).collect();
        let negative_available = set
            .entries
            .iter()
            .any(|e| e.polarity == Polarity::Negative && !shown.contains(&e.intent_id.as_str()));
        check(&list, &top, negative_available);
    }
}
