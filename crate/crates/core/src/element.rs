//! Periodic-table elements: symbol ↔ atomic-number lookup.

use std::collections::HashMap;
use std::fmt;
use std::sync::LazyLock;

/// Number of elements in the standard periodic table. Feature vectors are
/// two slots longer (see [`crate::dataset::VECTOR_LEN`]); the extra indices
/// are padding and never produced by the parser.
pub const ELEMENT_COUNT: usize = 118;

/// Symbols indexed by `atomic_number - 1`.
const SYMBOLS: [&str; ELEMENT_COUNT] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", //
    "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca", //
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", //
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", //
    "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", //
    "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", //
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", //
    "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", //
    "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", //
    "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", //
    "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", //
    "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
];

static BY_SYMBOL: LazyLock<HashMap<&'static str, u8>> = LazyLock::new(|| {
    SYMBOLS
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, (i + 1) as u8))
        .collect()
});

/// A chemical element, stored as its atomic number (always in `1..=118`).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Element(u8);

impl Element {
    pub fn from_atomic_number(z: u32) -> Option<Element> {
        (1..=ELEMENT_COUNT as u32).contains(&z).then(|| Element(z as u8))
    }

    pub fn from_symbol(symbol: &str) -> Option<Element> {
        BY_SYMBOL.get(symbol).map(|&z| Element(z))
    }

    pub fn atomic_number(self) -> u32 {
        u32::from(self.0)
    }

    pub fn symbol(self) -> &'static str {
        SYMBOLS[usize::from(self.0) - 1]
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbol_atomic_number_bijection() {
        for z in 1..=ELEMENT_COUNT as u32 {
            let el = Element::from_atomic_number(z).unwrap();
            assert_eq!(Element::from_symbol(el.symbol()), Some(el));
            assert_eq!(el.atomic_number(), z);
        }
        assert_eq!(Element::from_atomic_number(0), None);
        assert_eq!(Element::from_atomic_number(119), None);
        assert_eq!(Element::from_symbol("Xx"), None);
        assert_eq!(Element::from_symbol(""), None);
    }

    #[test]
    fn known_atomic_numbers() {
        // Spot checks used throughout the encoding tests.
        assert_eq!(Element::from_symbol("H").unwrap().atomic_number(), 1);
        assert_eq!(Element::from_symbol("Si").unwrap().atomic_number(), 14);
        assert_eq!(Element::from_symbol("Mo").unwrap().atomic_number(), 42);
        assert_eq!(Element::from_symbol("Re").unwrap().atomic_number(), 75);
        assert_eq!(Element::from_symbol("Og").unwrap().atomic_number(), 118);
    }

    #[test]
    fn symbols_are_well_formed() {
        for s in SYMBOLS {
            assert!(!s.is_empty() && s.len() <= 2);
            assert!(s.as_bytes()[0].is_ascii_uppercase());
            assert!(s.bytes().skip(1).all(|b| b.is_ascii_lowercase()));
        }
    }
}
