//! Generated fixtures: a hand-scored meeting-invite response set and a
//! patterned conversation corpus with known structure.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{build_vocab, tokenize, MessagePair, PairRecord, RawMessage, Vocabulary};
use crate::response_space::{Polarity, ResponseEntry, ResponseSet};
use crate::scoring::PrefixMassScorer;

/// A response set with a fixed, message-independent scorer for the message
/// "Can you join tomorrow's meeting?". Raw scores favour the generic
/// acceptances; priors are chosen so that specificity normalization with
/// `lambda` produces a different, known order.
pub struct MeetingFixture {
    pub message: &'static str,
    pub vocab: Vocabulary,
    pub set: ResponseSet,
    pub scorer: PrefixMassScorer,
    pub lambda: f64,
}

const MEETING: &str = "Can you join tomorrow's meeting?";

/// `(text, intent, polarity)`.
const MEETING_RESPONSES: [(&str, &str, Polarity); 25] = [
    ("Yes, I'll be there.", "attend", Polarity::Positive),
    ("Yes, I will be there.", "attend", Polarity::Positive),
    ("I'll be there.", "attend", Polarity::Positive),
    ("Yes, I can.", "can", Polarity::Positive),
    ("What time?", "ask_time", Polarity::Neutral),
    ("I'll be there!", "attend", Polarity::Positive),
    ("I will be there.", "attend", Polarity::Positive),
    ("Sure, I'll be there.", "attend", Polarity::Positive),
    ("Yes, I can be there.", "attend", Polarity::Positive),
    ("Yes!", "yes", Polarity::Positive),
    ("Sure, I can be there.", "attend", Polarity::Positive),
    ("Yeah, I can.", "can", Polarity::Positive),
    ("Yeah, I'll be there.", "attend", Polarity::Positive),
    ("Sure, I can.", "can", Polarity::Positive),
    ("Yes. I can.", "can", Polarity::Positive),
    ("Sorry, I won't be able to make it tomorrow.", "cannot_tomorrow", Polarity::Negative),
    ("Unfortunately I can't.", "cannot", Polarity::Negative),
    ("Sorry, I won't be able to join you.", "cannot", Polarity::Negative),
    ("Sorry, I can't make it tomorrow.", "cannot_tomorrow", Polarity::Negative),
    ("No, I can't.", "cannot", Polarity::Negative),
    ("Sorry, I won't be able to make it today.", "cannot_tomorrow", Polarity::Negative),
    ("Sorry, I can't.", "cannot", Polarity::Negative),
    ("I will not be available tomorrow.", "cannot_tomorrow", Polarity::Negative),
    ("I won't be available tomorrow.", "cannot_tomorrow", Polarity::Negative),
    ("Unfortunately, I can't.", "cannot", Polarity::Negative),
];

/// Entry indices in raw-score order (first ten) ...
const RAW_ORDER: [usize; 10] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];
/// ... and in normalized order: ten acceptances, then the remaining
/// first-pass responses, then the negatives.
const NORMALIZED_ORDER: [usize; 25] = [
    7, 3, 8, 0, 10, 11, 12, 13, 14, 1, 2, 4, 5, 6, 9, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24,
];

pub fn meeting_fixture() -> MeetingFixture {
    let lambda = crate::diversity::DEFAULT_LAMBDA;
    let n = MEETING_RESPONSES.len();
    // Target raw log-scores: the listed raw order on top, the other
    // acceptances next, negatives last in reverse of their normalized order.
    let mut raw = vec![0.0; n];
    let mut next = -3.5;
    for i in 0..n {
        raw[i] = match RAW_ORDER.iter().position(|&r| r == i) {
            Some(k) => -1.0 - 0.2 * k as f64,
            None if MEETING_RESPONSES[i].2 == Polarity::Negative => -6.0 - 0.1 * (n - i) as f64,
            None => {
                next -= 0.2;
                next
            }
        };
    }
    // Target normalized scores, shifted so every prior is a log-probability.
    let mut norm = vec![0.0; n];
    for (k, &i) in NORMALIZED_ORDER.iter().enumerate() {
        norm[i] = -(k as f64);
    }
    let shift = (0..n).map(|i| raw[i] - norm[i]).fold(f64::NEG_INFINITY, f64::max) + 0.5;
    let entries: Vec<ResponseEntry> = MEETING_RESPONSES
        .iter()
        .enumerate()
        .map(|(i, (text, intent, polarity))| ResponseEntry {
            tokens: tokenize(text),
            intent_id: intent.to_string(),
            polarity: *polarity,
            prior_logp: (raw[i] - (norm[i] + shift)) / lambda,
            validated: true,
        })
        .collect();
    let mut texts: Vec<Vec<String>> = entries.iter().map(|e| e.tokens.clone()).collect();
    texts.push(tokenize(MEETING));
    let vocab = build_vocab(&texts, 1000).expect("non-empty");
    let weighted: Vec<_> = entries
        .iter()
        .zip(&raw)
        .map(|(e, &r)| (vocab.encode(&e.tokens), r.exp()))
        .collect();
    let scorer = PrefixMassScorer::new(vocab.clone(), &weighted, 1e-9);
    MeetingFixture {
        message: MEETING,
        vocab,
        set: ResponseSet { entries },
        scorer,
        lambda,
    }
}

const DAYS: [&str; 7] = ["Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"];
const TOPICS: [&str; 12] = [
    "meeting", "lunch", "call", "review", "demo", "interview", "dinner", "workshop", "standup", "sync",
    "presentation", "party",
];
const OBJECTS: [&str; 20] = [
    "slides", "notes", "laptop", "budget", "agenda", "report", "charts", "cake", "coffee", "drinks", "snacks",
    "projector", "contract", "draft", "plan", "numbers", "photos", "tickets", "badge", "map",
];
const PROMOS: [&str; 6] = [
    "Big sale on all {o} this week only, do not miss it.",
    "Your weekly digest is here with the top {o} for you.",
    "Save now on {o} and more at our store.",
    "New {o} are in stock, order before they are gone.",
    "This is a reminder that your {o} subscription will renew.",
    "We have updated our terms for {o} and the site.",
];

/// Day-specific reply templates and their weights. `{d}` is the day the
/// reply is about; `{o}` marks the open-ended tail that makes a reply rare.
const DAY_REPLIES: [(&str, f64); 7] = [
    ("Yes, {d} works for me.", 0.28),
    ("Sure, {d} is fine.", 0.2),
    ("Yes, see you on {d}.", 0.14),
    ("Sorry, I can't do {d}.", 0.12),
    ("Unfortunately {d} is bad for me.", 0.08),
    ("What time on {d}?", 0.06),
    ("{d} works for me, I will bring the {o} and the {o}.", 0.12),
];
const THANKS_REPLIES: [(&str, f64); 4] = [
    ("You are welcome.", 0.45),
    ("No problem at all.", 0.3),
    ("Glad it helped.", 0.15),
    ("Happy to help, I will send the {o} too.", 0.1),
];

/// Messages and reply pairs with known structure, in delivery order.
pub struct PatternedCorpus {
    pub messages: Vec<RawMessage>,
    pub pairs: Vec<PairRecord>,
}

fn pick<'a, R: Rng>(rng: &mut R, table: &[(&'a str, f64)]) -> &'a str {
    let w = WeightedIndex::new(table.iter().map(|t| t.1)).expect("positive weights");
    table[w.sample(rng)].0
}

fn fill<R: Rng>(template: &str, day: &str, rng: &mut R) -> String {
    let mut out = template.replace("{d}", day);
    while out.contains("{o}") {
        out = out.replacen("{o}", OBJECTS[rng.gen_range(0..OBJECTS.len())], 1);
    }
    out
}

/// `n_pairs` replied messages plus `n_pairs / 4` never-answered promotional
/// messages, interleaved.
///
/// Replies are about a day named in the original. Most originals ask to
/// move an event "from" one day "to" another and the reply is about the
/// second, so word order matters; a bag of words sees both days alike.
/// Days and reply templates are Zipf-like so reply frequency is informative,
/// and some replies carry random tails that make them rare.
pub fn patterned_corpus(n_pairs: usize, rng_seed: u64) -> PatternedCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let day_weights: Vec<f64> = (0..DAYS.len()).map(|k| 1.0 / (k as f64 + 1.5)).collect();
    let days = WeightedIndex::new(&day_weights).expect("positive weights");
    let mut messages = Vec::new();
    let mut pairs = Vec::new();
    let mut promo = 0;
    for i in 0..n_pairs {
        if i % 4 == 3 {
            let o = OBJECTS[rng.gen_range(0..OBJECTS.len())];
            messages.push(RawMessage {
                id: format!("p{promo}"),
                subject: "Deals for you".into(),
                body: PROMOS[rng.gen_range(0..PROMOS.len())].replace("{o}", o),
                sender: "news@shop.example".into(),
                recipient: "me@example.com".into(),
                ..Default::default()
            });
            promo += 1;
        }
        let topic = TOPICS[rng.gen_range(0..TOPICS.len())];
        let d1 = DAYS[days.sample(&mut rng)];
        let mut d2 = DAYS[days.sample(&mut rng)];
        while d2 == d1 {
            d2 = DAYS[days.sample(&mut rng)];
        }
        let kind = rng.gen_range(0..10);
        let (body, reply) = match kind {
            0..=5 => (
                format!("Can we move the {topic} from {d1} to {d2}?"),
                fill(pick(&mut rng, &DAY_REPLIES), d2, &mut rng),
            ),
            6..=8 => (
                format!("Are you free for the {topic} on {d1}?"),
                fill(pick(&mut rng, &DAY_REPLIES), d1, &mut rng),
            ),
            _ => (
                format!("Thanks for the {topic} notes from {d1}."),
                fill(pick(&mut rng, &THANKS_REPLIES), d1, &mut rng),
            ),
        };
        let id = format!("m{i}");
        messages.push(RawMessage {
            id: id.clone(),
            subject: topic.to_string(),
            body,
            sender: format!("colleague{}@example.com", rng.gen_range(0..20)),
            recipient: "me@example.com".into(),
            replied: true,
            reply_from_mobile: rng.gen_bool(0.7),
            sender_in_address_book: rng.gen_bool(0.8),
            sender_in_social_network: rng.gen_bool(0.3),
            recipient_replied_before: rng.gen_bool(0.6),
        });
        pairs.push(PairRecord {
            original_id: id,
            original_text: String::new(),
            response_text: reply,
        });
    }
    PatternedCorpus { messages, pairs }
}

/// Entries for every reply text seen at least `min_count` times among
/// `pairs`, most frequent first, with log relative frequency as the prior.
/// Intents and polarities are not assigned.
pub fn frequent_response_set(pairs: &[MessagePair], min_count: usize) -> ResponseSet {
    let mut counts: BTreeMap<&[String], usize> = BTreeMap::new();
    for p in pairs {
        *counts.entry(&p.response).or_default() += 1;
    }
    let total = pairs.len() as f64;
    let mut kept: Vec<(&[String], usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ResponseSet {
        entries: kept
            .into_iter()
            .enumerate()
            .map(|(i, (tokens, c))| ResponseEntry {
                tokens: tokens.to_vec(),
                intent_id: format!("r{i}"),
                polarity: Polarity::Neutral,
                prior_logp: (c as f64 / total).ln(),
                validated: true,
            })
            .collect(),
    }
}

/// Seed examples for the intents of [`patterned_corpus`].
pub fn patterned_seeds() -> BTreeMap<String, Vec<String>> {
    let seeds: [(&str, &[&str]); 5] = [
        ("accept", &["Yes, Monday works for me.", "Sure, Friday is fine."]),
        ("decline", &["Sorry, I can't do Tuesday.", "Unfortunately Wednesday is bad for me."]),
        ("ask_time", &["What time on Monday?"]),
        ("see_you", &["Yes, see you on Thursday."]),
        ("welcome", &["You are welcome.", "No problem at all."]),
    ];
    seeds
        .iter()
        .map(|(label, ex)| (label.to_string(), ex.iter().map(|s| s.to_string()).collect()))
        .collect()
}
