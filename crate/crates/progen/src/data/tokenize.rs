//! Report tokenization: lowercase, whitespace split, sentence punctuation
//! split off as standalone tokens.

const SPLIT_PUNCT: [char; 4] = ['.', ',', ':', ';'];

pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for ch in text.chars().flat_map(|c| c.to_lowercase()) {
        if ch.is_whitespace() {
            flush(&mut current, &mut out);
        } else if SPLIT_PUNCT.contains(&ch) {
            flush(&mut current, &mut out);
            out.push(ch.to_string());
        } else {
            current.push(ch);
        }
    }
    flush(&mut current, &mut out);
    out
}

fn flush(current: &mut String, out: &mut Vec<String>) {
    if !current.is_empty() {
        out.push(std::mem::take(current));
    }
}

/// Inverse-ish of [`tokenize`]: single spaces between tokens.
pub fn join_tokens(tokens: &[String]) -> String {
    tokens.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_trailing_punctuation() {
        assert_eq!(tokenize("No acute disease."), vec!["no", "acute", "disease", "."]);
    }

    #[test]
    fn empty_input_gives_no_tokens() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \n\t ").is_empty());
    }

    #[test]
    fn digits_and_inner_punctuation() {
        assert_eq!(
            tokenize("Stable, 3 mm nodule; unchanged: see prior"),
            vec!["stable", ",", "3", "mm", "nodule", ";", "unchanged", ":", "see", "prior"]
        );
    }

    #[test]
    fn idempotent_over_join() {
        for text in [
            "There is no pneumothorax.",
            "Mild pulmonary edema, bilateral effusions.",
            "a:b;c.d,e",
        ] {
            let once = tokenize(text);
            let twice = tokenize(&join_tokens(&once));
            assert_eq!(once, twice);
        }
    }
}
