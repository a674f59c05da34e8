use super::{Sentence, Token};

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn is_terminal(text: &str) -> bool {
    matches!(text, "." | "!" | "?")
}

/// Whitespace and punctuation tokenizer. A token is a maximal run of
/// alphanumeric characters or a single other non-space character. Offsets
/// are character offsets. Sentence ids are left at zero; see
/// [`split_sentences`].
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if is_word_char(c) {
            while i < chars.len() && is_word_char(chars[i]) {
                i += 1;
            }
        } else {
            i += 1;
        }
        tokens.push(Token {
            text: chars[start..i].iter().collect(),
            index: tokens.len(),
            char_start: start,
            char_end: i,
            sentence_id: 0,
        });
    }
    tokens
}

/// Assign sentence ids in place and return the sentence ranges. A sentence
/// ends after a run of `.`, `!` or `?` tokens, or where the gap before the
/// next token contains a line break.
pub fn split_sentences(text: &str, tokens: &mut [Token]) -> Vec<Sentence> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    for i in 0..tokens.len() {
        let boundary = match tokens.get(i + 1) {
            None => true,
            Some(next) => {
                let gap_newline = chars[tokens[i].char_end..next.char_start].contains(&'\n');
                let terminal = is_terminal(&tokens[i].text) && !is_terminal(&next.text);
                gap_newline || terminal
            }
        };
        if boundary {
            let id = sentences.len();
            for t in &mut tokens[start..=i] {
                t.sentence_id = id;
            }
            sentences.push(Sentence { id, start, end: i + 1 });
            start = i + 1;
        }
    }
    sentences
}
