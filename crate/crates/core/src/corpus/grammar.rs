use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::SymbolTable;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Token {
    Word(String),
    Slot(String),
}

/// Sentence templates with `<slot>` markers and a word list per slot.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainGrammar {
    pub name: String,
    pub templates: Vec<Vec<Token>>,
    pub fillers: BTreeMap<String, Vec<String>>,
}

fn parse_template(line: &str) -> Result<Vec<Token>> {
    line.split_whitespace()
        .map(|w| {
            if let Some(inner) = w.strip_prefix('<') {
                let name = inner
                    .strip_suffix('>')
                    .filter(|n| !n.is_empty())
                    .ok_or_else(|| Error::invalid(format!("malformed slot marker {w:?}")))?;
                Ok(Token::Slot(name.to_string()))
            } else {
                Ok(Token::Word(w.to_string()))
            }
        })
        .collect()
}

impl DomainGrammar {
    /// Parses the line format: `#` comments, `name: w1 w2 …` filler lines,
    /// every other non-blank line is a template.
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut templates = Vec::new();
        let mut fillers: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once(':') {
                Some((slot, words)) if !slot.contains(char::is_whitespace) => {
                    let list = fillers.entry(slot.to_string()).or_default();
                    list.extend(words.split_whitespace().map(str::to_string));
                }
                _ => templates.push(parse_template(line)?),
            }
        }
        let g = DomainGrammar {
            name: name.to_string(),
            templates,
            fillers,
        };
        g.check()?;
        Ok(g)
    }

    fn check(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(Error::invalid(format!("grammar {} has no templates", self.name)));
        }
        for t in &self.templates {
            for tok in t {
                if let Token::Slot(s) = tok {
                    if self.fillers.get(s).is_none_or(|f| f.is_empty()) {
                        return Err(Error::invalid(format!(
                            "grammar {}: slot <{s}> has no fillers",
                            self.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Every word the grammar can produce must spell out in `table`.
    pub fn check_alphabet(&self, table: &SymbolTable) -> Result<()> {
        let mut bad = Vec::new();
        for w in self.vocabulary() {
            for g in table.unknown_graphemes(&w) {
                if !bad.contains(&g) {
                    bad.push(g);
                }
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::OutOfAlphabetText(format!(
                "grammar {} uses {}",
                self.name,
                bad.iter().map(|c| format!("{c:?}")).collect::<Vec<_>>().join(", ")
            )))
        }
    }

    pub fn vocabulary(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .templates
            .iter()
            .flatten()
            .filter_map(|t| match t {
                Token::Word(w) => Some(w.clone()),
                Token::Slot(_) => None,
            })
            .chain(self.fillers.values().flatten().cloned())
            .collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn filler_words(&self) -> Vec<String> {
        let mut v: Vec<String> = self.fillers.values().flatten().cloned().collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> String {
        let t = &self.templates[rng.random_range(0..self.templates.len())];
        t.iter()
            .map(|tok| match tok {
                Token::Word(w) => w.clone(),
                Token::Slot(s) => {
                    let f = &self.fillers[s];
                    f[rng.random_range(0..f.len())].clone()
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// `n` sentences drawn with a generator seeded from `seed`; duplicates allowed.
pub fn gen_domain_texts(grammar: &DomainGrammar, n: usize, seed: u64) -> Result<Vec<String>> {
    if n == 0 {
        return Err(Error::invalid("asked for zero sentences"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| grammar.sample(&mut rng)).collect())
}

/// Set of adjacent word pairs.
pub fn word_bigrams<'a>(texts: impl IntoIterator<Item = &'a String>) -> std::collections::BTreeSet<(String, String)> {
    let mut out = std::collections::BTreeSet::new();
    for t in texts {
        let w: Vec<&str> = t.split_whitespace().collect();
        for p in w.windows(2) {
            out.insert((p[0].to_string(), p[1].to_string()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_choice_grammar_is_exact() {
        let g = DomainGrammar::parse("t", "hello <who>\nwho: world\n").unwrap();
        assert_eq!(gen_domain_texts(&g, 1, 5).unwrap(), vec!["hello world"]);
    }

    #[test]
    fn same_seed_same_texts() {
        let g = DomainGrammar::parse("t", "a <x> b\nx: p q r s\n").unwrap();
        assert_eq!(gen_domain_texts(&g, 20, 1).unwrap(), gen_domain_texts(&g, 20, 1).unwrap());
    }

    #[test]
    fn missing_slot_rejected() {
        let e = DomainGrammar::parse("t", "a <x> b\n").unwrap_err().to_string();
        assert!(e.contains("<x>"), "{e}");
        assert!(DomainGrammar::parse("t", "a <> b\nx: y\n").is_err());
    }

    #[test]
    fn alphabet_check_lists_offenders() {
        let g = DomainGrammar::parse("t", "Hi <x>\nx: a-b\n").unwrap();
        let e = g.check_alphabet(&SymbolTable::desk()).unwrap_err().to_string();
        assert!(e.contains("'H'") && e.contains("'-'"), "{e}");
    }
}
