use std::collections::HashMap;

use crate::error::{Error, Result};

pub const BLANK_NAME: &str = "<blank>";

/// Output alphabet. BLANK always sits at index 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolTable {
    graphemes: Vec<char>,
    index: HashMap<char, usize>,
}

impl SymbolTable {
    pub fn new(graphemes: &[char]) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, &g) in graphemes.iter().enumerate() {
            if index.insert(g, i + 1).is_some() {
                return Err(Error::invalid(format!("duplicate grapheme {g:?} in symbol table")));
            }
        }
        if graphemes.is_empty() {
            return Err(Error::invalid("symbol table needs at least one grapheme"));
        }
        Ok(SymbolTable {
            graphemes: graphemes.to_vec(),
            index,
        })
    }

    /// Lowercase a–z, space and apostrophe.
    pub fn desk() -> Self {
        let mut g: Vec<char> = ('a'..='z').collect();
        g.push(' ');
        g.push('\'');
        Self::new(&g).expect("distinct graphemes")
    }

    /// Size including BLANK.
    pub fn len(&self) -> usize {
        self.graphemes.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn graphemes(&self) -> &[char] {
        &self.graphemes
    }

    pub fn name(&self, id: usize) -> String {
        if id == 0 {
            BLANK_NAME.to_string()
        } else {
            self.graphemes[id - 1].to_string()
        }
    }

    pub fn id(&self, g: char) -> Option<usize> {
        self.index.get(&g).copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .enumerate()
            .map(|(position, g)| {
                self.id(g)
                    .ok_or(Error::OutOfAlphabet { grapheme: g, position })
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i > 0 && i <= self.graphemes.len())
            .map(|&i| self.graphemes[i - 1])
            .collect()
    }

    /// Distinct offending graphemes of `text`, in first-seen order.
    pub fn unknown_graphemes(&self, text: &str) -> Vec<char> {
        let mut out = Vec::new();
        for g in text.chars() {
            if self.id(g).is_none() && !out.contains(&g) {
                out.push(g);
            }
        }
        out
    }

    /// Code points joined by commas; stable across whitespace-trimming parsers.
    pub fn to_config_value(&self) -> String {
        self.graphemes
            .iter()
            .map(|&c| (c as u32).to_string())
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn from_config_value(v: &str) -> Result<Self> {
        let g = v
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u32>()
                    .ok()
                    .and_then(char::from_u32)
                    .ok_or_else(|| Error::Config(format!("bad alphabet entry {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(&g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_alphabet_has_blank_plus_28() {
        let t = SymbolTable::desk();
        assert_eq!(t.len(), 29);
        assert_eq!(t.name(0), BLANK_NAME);
        assert_eq!(t.id('a'), Some(1));
    }

    #[test]
    fn encode_reports_position() {
        let t = SymbolTable::desk();
        match t.encode("ab#c") {
            Err(Error::OutOfAlphabet { grapheme, position }) => {
                assert_eq!((grapheme, position), ('#', 2))
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(t.decode(&t.encode("it's ok").unwrap()), "it's ok");
    }

    #[test]
    fn config_value_round_trips() {
        let t = SymbolTable::desk();
        assert_eq!(SymbolTable::from_config_value(&t.to_config_value()).unwrap(), t);
    }

    #[test]
    fn duplicates_rejected() {
        assert!(SymbolTable::new(&['a', 'a']).is_err());
    }
}
