//! Word/punctuation tokenization and sentence segmentation.

use super::normalize::classify_entity;
use super::vocab::Special;

/// Clitic suffixes split off the word they attach to (`tomorrow's` -> `tomorrow` `'s`).
const CLITICS: &[&str] = &["'s", "'ll", "'re", "'ve", "'d", "'m", "n't"];

const LEADING_WRAP: &[char] = &['(', '[', '{', '"', '\''];
const TRAILING_WRAP: &[char] = &['.', ',', '!', '?', ';', ':', ')', ']', '}', '"', '\''];

/// Lowercased tokenization. Punctuation marks become standalone tokens and
/// apostrophe clitics are split off (`can't` -> `ca` `n't`).
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_cased(text)
        .into_iter()
        .map(|t| t.to_lowercase())
        .collect()
}

/// Same splitting rules as [`tokenize`] but keeps the original casing, which
/// the PERSON heuristic in normalization needs.
pub fn tokenize_cased(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chunk = chunk.replace(['\u{2019}', '\u{2018}'], "'");
        if Special::from_token(&chunk).is_some() {
            out.push(chunk);
            continue;
        }
        let core_start = chunk.len() - chunk.trim_start_matches(LEADING_WRAP).len();
        let core_end = chunk.trim_end_matches(TRAILING_WRAP).len();
        if core_start < core_end {
            let core = &chunk[core_start..core_end];
            if classify_entity(core).is_some() {
                out.extend(chunk[..core_start].chars().map(String::from));
                out.push(core.to_string());
                out.extend(chunk[core_end..].chars().map(String::from));
                continue;
            }
        }
        split_chunk(&chunk, &mut out);
    }
    out
}

/// Display form of a token sequence: punctuation and clitics reattached,
/// first letter and the pronoun "i" capitalized. Not an inverse of
/// [`tokenize`] (case is lost), only a readable rendering.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, tok) in tokens.iter().enumerate() {
        let tok = tok.as_ref();
        let attach = is_clitic(tok)
            || (tok.chars().count() == 1 && TRAILING_WRAP.contains(&tok.chars().next().unwrap()) && tok != "\"");
        if i > 0 && !attach {
            out.push(' ');
        }
        out.push_str(if tok == "i" { "I" } else { tok });
    }
    let mut chars = out.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => out,
    }
}

fn split_chunk(chunk: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = chunk.chars().collect();
    let n = chars.len();
    let mut i = 0;
    while i < n {
        let c = chars[i];
        let starts_clitic = c == '\'' && i + 1 < n && chars[i + 1].is_alphabetic();
        if c.is_alphanumeric() || starts_clitic {
            let mut j = i + 1;
            while j < n
                && (chars[j].is_alphanumeric()
                    || (chars[j] == '\'' && j + 1 < n && chars[j + 1].is_alphanumeric()))
            {
                j += 1;
            }
            let word: String = chars[i..j].iter().collect();
            if starts_clitic && !is_clitic(&word) {
                out.push("'".to_string());
                i += 1;
                continue;
            }
            split_clitic(&word, out);
            i = j;
        } else {
            out.push(c.to_string());
            i += 1;
        }
    }
}

fn is_clitic(word: &str) -> bool {
    let lower = word.to_lowercase();
    CLITICS.contains(&lower.as_str())
}

fn split_clitic(word: &str, out: &mut Vec<String>) {
    let lower = word.to_lowercase();
    if lower.len() > 3 && lower.ends_with("n't") && word.is_char_boundary(word.len() - 3) {
        let cut = word.len() - 3;
        out.push(word[..cut].to_string());
        out.push(word[cut..].to_string());
        return;
    }
    if let Some(p) = word.rfind('\'') {
        if p > 0 && CLITICS.contains(&lower[p..].as_ref()) {
            out.push(word[..p].to_string());
            out.push(word[p..].to_string());
            return;
        }
    }
    out.push(word.to_string());
}

/// Splits a body into sentences at newlines and at runs of `.`, `!` or `?`
/// followed by whitespace. Pieces are trimmed; empty pieces are dropped.
pub fn segment_sentences(body: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    for line in body.lines() {
        let chars: Vec<(usize, char)> = line.char_indices().collect();
        let mut start = 0;
        let mut k = 0;
        while k < chars.len() {
            if is_terminal(chars[k].1) {
                let mut m = k;
                while m + 1 < chars.len() && is_terminal(chars[m + 1].1) {
                    m += 1;
                }
                if m + 1 < chars.len() && chars[m + 1].1.is_whitespace() {
                    let end = chars[m].0 + chars[m].1.len_utf8();
                    push_trimmed(&mut sentences, &line[start..end]);
                    start = end;
                }
                k = m + 1;
            } else {
                k += 1;
            }
        }
        push_trimmed(&mut sentences, &line[start..]);
    }
    sentences
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn push_trimmed(out: &mut Vec<String>, piece: &str) {
    let piece = piece.trim();
    if !piece.is_empty() {
        out.push(piece.to_string());
    }
}
