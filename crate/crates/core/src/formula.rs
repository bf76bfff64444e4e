//! Chemical-formula parsing and canonical formatting.
//!
//! The accepted grammar is a flat sequence of `SYMBOL[NUMBER]` tokens:
//! an uppercase ASCII letter optionally followed by one lowercase letter,
//! then an optional nonnegative decimal coefficient (default 1). There is
//! no support for parentheses, hydrate dots, charges, or isotopes; dataset
//! rows are flat element–coefficient sequences and the grammar matches
//! them exactly.

use crate::element::Element;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormulaError {
    #[error("empty formula")]
    EmptyFormula,
    #[error("unknown element symbol `{symbol}` at byte {offset}")]
    UnknownElement { symbol: String, offset: usize },
    #[error("malformed number at byte {offset}")]
    MalformedNumber { offset: usize },
    #[error("zero amount for element `{symbol}` at byte {offset}")]
    ZeroAmount { symbol: String, offset: usize },
}

impl FormulaError {
    /// Byte offset of the offending token, when the input was non-empty.
    pub fn offset(&self) -> Option<usize> {
        match self {
            FormulaError::EmptyFormula => None,
            FormulaError::UnknownElement { offset, .. }
            | FormulaError::MalformedNumber { offset }
            | FormulaError::ZeroAmount { offset, .. } => Some(*offset),
        }
    }
}

/// A multiset of elements with positive stoichiometric coefficients.
///
/// Entries keep their first-appearance order; repeated symbols are merged
/// by summation. Equality is order-insensitive so that a parsed canonical
/// string compares equal to the composition it was formatted from.
#[derive(Debug, Clone)]
pub struct Composition {
    entries: Vec<(Element, f64)>,
}

impl Composition {
    /// Builds a composition from (element, amount) pairs, merging repeats.
    /// Returns `None` when the iterator is empty or any amount is not a
    /// strictly positive finite number.
    pub fn new(entries: impl IntoIterator<Item = (Element, f64)>) -> Option<Composition> {
        let mut merged: Vec<(Element, f64)> = Vec::new();
        for (el, amount) in entries {
            if !(amount.is_finite() && amount > 0.0) {
                return None;
            }
            match merged.iter_mut().find(|(e, _)| *e == el) {
                Some((_, a)) => *a += amount,
                None => merged.push((el, amount)),
            }
        }
        if merged.is_empty() {
            return None;
        }
        Some(Composition { entries: merged })
    }

    /// Entries in first-appearance order.
    pub fn entries(&self) -> &[(Element, f64)] {
        &self.entries
    }

    pub fn amount_of(&self, el: Element) -> Option<f64> {
        self.entries.iter().find(|(e, _)| *e == el).map(|&(_, a)| a)
    }

    /// Sum of all stoichiometric coefficients. Strictly positive.
    pub fn total_amount(&self) -> f64 {
        self.entries.iter().map(|&(_, a)| a).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn sorted_entries(&self) -> Vec<(Element, f64)> {
        let mut v = self.entries.clone();
        v.sort_by_key(|&(el, _)| el.atomic_number());
        v
    }
}

impl PartialEq for Composition {
    fn eq(&self, other: &Self) -> bool {
        self.sorted_entries() == other.sorted_entries()
    }
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_composition(self))
    }
}

/// Parses a formula string like `Ca0.4Ba1.25La1.25Cu3O6.98`.
///
/// Repeated element symbols are summed; amounts are kept at full input
/// precision as 64-bit floats. Every error carries the byte offset of the
/// offending token.
pub fn parse_formula(text: &str) -> Result<Composition, FormulaError> {
    if text.is_empty() {
        return Err(FormulaError::EmptyFormula);
    }
    let bytes = text.as_bytes();
    let mut entries: Vec<(Element, f64)> = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let start = i;
        if !bytes[i].is_ascii_uppercase() {
            // An element symbol is expected here; report whatever we found.
            let ch = text[i..].chars().next().expect("offset is in range");
            return Err(FormulaError::UnknownElement {
                symbol: ch.to_string(),
                offset: i,
            });
        }
        i += 1;
        if i < bytes.len() && bytes[i].is_ascii_lowercase() {
            i += 1;
        }
        let symbol = &text[start..i];
        let element = Element::from_symbol(symbol).ok_or_else(|| FormulaError::UnknownElement {
            symbol: symbol.to_string(),
            offset: start,
        })?;

        let num_start = i;
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
            i += 1;
        }
        let amount = if i > num_start {
            let span = &text[num_start..i];
            span.parse::<f64>()
                .ok()
                .filter(|a| a.is_finite())
                .ok_or(FormulaError::MalformedNumber { offset: num_start })?
        } else {
            1.0
        };
        if amount == 0.0 {
            return Err(FormulaError::ZeroAmount {
                symbol: symbol.to_string(),
                offset: start,
            });
        }
        match entries.iter_mut().find(|(e, _)| *e == element) {
            Some((_, a)) => *a += amount,
            None => entries.push((element, amount)),
        }
    }
    Ok(Composition { entries })
}

/// Formats a composition canonically: elements ordered by atomic number,
/// coefficient 1 omitted, amounts rendered with no trailing zeros.
/// `parse_formula(format_composition(c))` equals `c`.
pub fn format_composition(c: &Composition) -> String {
    let mut out = String::new();
    for (el, amount) in c.sorted_entries() {
        out.push_str(el.symbol());
        if amount != 1.0 {
            // f64 Display is the shortest decimal that round-trips, so the
            // rendered amount parses back to the identical value.
            out.push_str(&format!("{amount}"));
        }
    }
    out
}
