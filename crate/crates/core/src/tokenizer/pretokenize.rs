/// A pre-tokenization unit: a maximal run of non-punctuation characters or a
/// single punctuation character, inside one whitespace-delimited word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Unit<'a> {
    pub text: &'a str,
    /// True when the unit directly follows the previous one without whitespace.
    pub attached: bool,
    /// Index of the whitespace-delimited word the unit belongs to.
    pub word: usize,
}

pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c, '\u{00a1}' | '\u{00a7}' | '\u{00ab}' | '\u{00b6}' | '\u{00b7}' | '\u{00bb}' | '\u{00bf}')
        || ('\u{2010}'..='\u{2027}').contains(&c)
        || ('\u{2030}'..='\u{205e}').contains(&c)
        || ('\u{3001}'..='\u{3003}').contains(&c)
}

/// Splits text on whitespace, then isolates every punctuation character.
pub fn units(text: &str) -> Vec<Unit<'_>> {
    let mut out = Vec::new();
    for (word, w) in text.split_whitespace().enumerate() {
        let mut start = None;
        let mut attached = false;
        for (i, c) in w.char_indices() {
            if is_punctuation(c) {
                if let Some(s) = start.take() {
                    out.push(Unit { text: &w[s..i], attached, word });
                    attached = true;
                }
                out.push(Unit {
                    text: &w[i..i + c.len_utf8()],
                    attached,
                    word,
                });
                attached = true;
            } else if start.is_none() {
                start = Some(i);
            }
        }
        if let Some(s) = start {
            out.push(Unit { text: &w[s..], attached, word });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isolates_punctuation() {
        let u = units("Olá, mundo... (sim)");
        let texts: Vec<_> = u.iter().map(|u| (u.text, u.attached, u.word)).collect();
        assert_eq!(
            texts,
            vec![
                ("Olá", false, 0),
                (",", true, 0),
                ("mundo", false, 1),
                (".", true, 1),
                (".", true, 1),
                (".", true, 1),
                ("(", false, 2),
                ("sim", true, 2),
                (")", true, 2),
            ]
        );
    }

    #[test]
    fn empty() {
        assert!(units("   ").is_empty());
    }
}
