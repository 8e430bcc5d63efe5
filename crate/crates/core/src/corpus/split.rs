/// Tokens (lowercase, without the final period) that end in `.` but do not
/// end a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "dr", "dra", "drs", "sr", "sra", "srs", "srta", "prof", "profa", "profs", "exmo", "exma",
    "eng", "arq", "adv", "gen", "cel", "cap", "ten", "sgt", "pe", "fr", "sto", "sta", "av",
    "r", "pç", "al", "rod", "km", "n", "nº", "pág", "pag", "p", "pp", "vol",
    "ed", "fig", "tab", "art", "inc", "ltda", "cia", "s.a", "dept", "depto", "jan", "fev",
    "abr", "mai", "jun", "jul", "ago", "set", "out", "nov", "ex", "obs", "v",
    "vs", "aprox", "séc", "mr", "mrs", "ms", "st", "jr", "e.g", "i.e", "p.ex", "a.c", "d.c",
];

const TERMINALS: &[char] = &['.', '!', '?', '…'];
const CLOSERS: &[char] = &['"', '\'', ')', ']', '}', '»', '”', '’'];

fn ends_sentence(token: &str) -> bool {
    let core = token.trim_end_matches(CLOSERS);
    let Some(last) = core.chars().last() else {
        return false;
    };
    if !TERMINALS.contains(&last) {
        return false;
    }
    if last != '.' || core.ends_with("..") {
        return true;
    }
    let stem = core[..core.len() - 1].trim_start_matches(['(', '"', '\'', '«', '“', '‘']);
    let lowered = stem.to_lowercase();
    !ABBREVIATIONS.contains(&lowered.as_str())
}

/// Splits normalized text into sentences.
///
/// A sentence ends at a whitespace-delimited token whose last character
/// (ignoring closing quotes and brackets) is `.`, `!`, `?` or `…`, unless
/// the token is a guarded abbreviation such as `Dr.`. Sentences are rejoined
/// with single spaces, so no non-whitespace character is lost or duplicated.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for token in text.split_whitespace() {
        if !current.is_empty() {
            current.push(' ');
        }
        current.push_str(token);
        if ends_sentence(token) {
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_terminal_marks() {
        assert_eq!(split_sentences("Olá. Tudo bem?"), vec!["Olá.", "Tudo bem?"]);
    }

    #[test]
    fn no_terminal_mark() {
        assert_eq!(split_sentences("Sem pontuação final"), vec!["Sem pontuação final"]);
    }

    #[test]
    fn abbreviation_guard() {
        assert_eq!(
            split_sentences("Dr. Silva chegou. Saiu."),
            vec!["Dr. Silva chegou.", "Saiu."]
        );
        assert_eq!(
            split_sentences("A Sra. Souza disse: \"Vamos!\" E foram…  Fim"),
            vec!["A Sra. Souza disse: \"Vamos!\"", "E foram…", "Fim"]
        );
    }

    #[test]
    fn empty_and_blank() {
        assert!(split_sentences("").is_empty());
        assert!(split_sentences("   ").is_empty());
    }

    proptest! {
        #[test]
        fn conserves_content(text in "[a-zA-Zçã .!?…\"»)\n]{0,80}") {
            let sentences = split_sentences(&text);
            let joined: String = sentences.join(" ").chars().filter(|c| !c.is_whitespace()).collect();
            let original: String = text.chars().filter(|c| !c.is_whitespace()).collect();
            prop_assert_eq!(joined, original);
            for s in &sentences {
                prop_assert!(!s.trim().is_empty());
            }
        }
    }
}
