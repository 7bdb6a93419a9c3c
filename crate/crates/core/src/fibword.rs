//! Fibonacci substitution words.
//!
//! The substitution `a -> ab`, `b -> a` has a unique one-sided fixed point
//! `u = abaababaabaab...`; its prefixes of Fibonacci length are the words
//! `S^{k-1}(a)`. Iterating `S^2` on the seed `b|a` produces the two-sided
//! sequence used as the representative of the hull.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest level whose Fibonacci number fits the default word budget.
pub const DEFAULT_MAX_LEVEL: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Letter {
    A,
    B,
}

impl Letter {
    pub fn swapped(self) -> Letter {
        match self {
            Letter::A => Letter::B,
            Letter::B => Letter::A,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Letter::A => 'a',
            Letter::B => 'b',
        }
    }
}

/// A finite word over `{a, b}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Word(Vec<Letter>);

impl Word {
    pub fn new(letters: Vec<Letter>) -> Self {
        Word(letters)
    }

    pub fn letters(&self) -> &[Letter] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self, letter: Letter) -> usize {
        self.0.iter().filter(|&&l| l == letter).count()
    }

    /// True if `factor` occurs as a contiguous block.
    pub fn contains_factor(&self, factor: &[Letter]) -> bool {
        !factor.is_empty() && self.0.windows(factor.len()).any(|w| w == factor)
    }

    /// Concatenation `self` followed by `other`.
    pub fn concat(&self, other: &Word) -> Word {
        let mut letters = Vec::with_capacity(self.len() + other.len());
        letters.extend_from_slice(&self.0);
        letters.extend_from_slice(&other.0);
        Word(letters)
    }

    /// Cyclic rotation moving the first `n` letters to the end.
    pub fn rotate_left(&self, n: usize) -> Word {
        let mut letters = self.0.clone();
        if !letters.is_empty() {
            let n = n % letters.len();
            letters.rotate_left(n);
        }
        Word(letters)
    }

    /// Exchange the roles of `a` and `b`.
    pub fn swapped(&self) -> Word {
        Word(self.0.iter().map(|l| l.swapped()).collect())
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.0 {
            write!(f, "{}", l.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for Word {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                'a' => Ok(Letter::A),
                'b' => Ok(Letter::B),
                other => Err(Error::InvalidArgument(format!("letter {other:?} not in {{a, b}}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Word)
    }
}

/// Apply the Fibonacci substitution letterwise.
pub fn substitute(w: &Word) -> Result<Word> {
    if w.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(substitute_unchecked(w))
}

fn substitute_unchecked(w: &Word) -> Word {
    let mut out = Vec::with_capacity(w.len() * 2);
    for &l in w.letters() {
        match l {
            Letter::A => out.extend_from_slice(&[Letter::A, Letter::B]),
            Letter::B => out.push(Letter::A),
        }
    }
    Word(out)
}

/// Fibonacci numbers with `F_0 = F_1 = 1`.
pub fn fibonacci(k: i64) -> Result<u64> {
    if k < 0 {
        return Err(Error::InvalidArgument(format!("fibonacci index must be >= 0, got {k}")));
    }
    let (mut prev, mut cur) = (1u64, 1u64);
    for _ in 1..k {
        let next = prev
            .checked_add(cur)
            .ok_or_else(|| Error::InvalidArgument(format!("F_{k} overflows u64")))?;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// `F_k` as a length, for tests where `k` is already validated.
#[cfg(test)]
pub(crate) fn fib_len(k: usize) -> usize {
    let (mut prev, mut cur) = (1usize, 1usize);
    for _ in 1..k {
        let next = prev + cur;
        prev = cur;
        cur = next;
    }
    cur
}

/// The prefix `u_1 ... u_{F_k} = S^{k-1}(a)`.
pub fn fib_word(k: usize) -> Result<Word> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("fib_word needs level >= 2, got {k}")));
    }
    let mut w = Word(vec![Letter::A]);
    for _ in 1..k {
        w = substitute_unchecked(&w);
    }
    Ok(w)
}

/// Positions `-m..=m` of the two-sided sequence built from `b|a`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoSidedWindow {
    /// Index into `letters` of position 0.
    pub center_offset: usize,
    pub letters: Vec<Letter>,
}

impl TwoSidedWindow {
    pub fn half_width(&self) -> usize {
        self.center_offset
    }

    /// Letter at integer position `n`, if inside the window.
    pub fn at(&self, n: i64) -> Option<Letter> {
        let idx = self.center_offset as i64 + n;
        if idx < 0 {
            return None;
        }
        self.letters.get(idx as usize).copied()
    }
}

pub fn omega_s_window(m: usize) -> Result<TwoSidedWindow> {
    if m < 1 {
        return Err(Error::InvalidArgument("window half-width must be >= 1".into()));
    }
    // left holds positions ..., -1, 0 (last letter is position 0); right holds 1, 2, ...
    let mut left = Word(vec![Letter::B]);
    let mut right = Word(vec![Letter::A]);
    while left.len() < m + 1 || right.len() < m {
        left = substitute_unchecked(&substitute_unchecked(&left));
        right = substitute_unchecked(&substitute_unchecked(&right));
    }
    let mut letters = Vec::with_capacity(2 * m + 1);
    letters.extend_from_slice(&left.letters()[left.len() - (m + 1)..]);
    letters.extend_from_slice(&right.letters()[..m]);
    Ok(TwoSidedWindow { center_offset: m, letters })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Word {
        s.parse().unwrap()
    }

    #[test]
    fn substitution_examples() {
        assert_eq!(substitute(&w("a")).unwrap(), w("ab"));
        assert_eq!(substitute(&w("b")).unwrap(), w("a"));
        assert_eq!(substitute(&w("ab")).unwrap(), w("aba"));
        assert_eq!(substitute(&Word::default()), Err(Error::EmptyInput));
    }

    #[test]
    fn fibonacci_values() {
        assert_eq!(fibonacci(0).unwrap(), 1);
        assert_eq!(fibonacci(1).unwrap(), 1);
        assert_eq!(fibonacci(6).unwrap(), 13);
        assert!(fibonacci(-1).is_err());
        for k in 0..40 {
            assert_eq!(fibonacci(k as i64).unwrap() as usize, fib_len(k));
        }
    }

    #[test]
    fn fib_word_examples() {
        assert_eq!(fib_word(2).unwrap(), w("ab"));
        assert_eq!(fib_word(3).unwrap(), w("aba"));
        assert_eq!(fib_word(5).unwrap(), w("abaababa"));
        assert!(fib_word(1).is_err());
        assert!(fib_word(0).is_err());
    }

    #[test]
    fn fib_word_structure() {
        for k in 2..=22 {
            let word = fib_word(k).unwrap();
            assert_eq!(word.len(), fib_len(k));
            assert_eq!(word.count(Letter::A), fib_len(k - 1));
            assert_eq!(word.count(Letter::B), fib_len(k - 2));
            assert!(!word.contains_factor(&[Letter::B, Letter::B]));
            assert!(!word.contains_factor(&[Letter::A, Letter::A, Letter::A]));
            assert_eq!(substitute(&word).unwrap(), fib_word(k + 1).unwrap());
            assert_eq!(fib_word(k + 2).unwrap(), fib_word(k + 1).unwrap().concat(&word));
        }
    }

    #[test]
    fn deep_level_is_cheap() {
        let word = fib_word(DEFAULT_MAX_LEVEL).unwrap();
        assert_eq!(word.len(), 1_346_269);
    }

    #[test]
    fn window_examples() {
        let win = omega_s_window(1).unwrap();
        assert_eq!(win.at(-1), Some(Letter::A));
        assert_eq!(win.at(0), Some(Letter::B));
        assert_eq!(win.at(1), Some(Letter::A));
        assert_eq!(win.at(2), None);

        assert_eq!(omega_s_window(2).unwrap().at(-2), Some(Letter::A));

        let win = omega_s_window(8).unwrap();
        let right: Vec<Letter> = (1..=8).map(|n| win.at(n).unwrap()).collect();
        assert_eq!(Word::new(right), fib_word(5).unwrap());
        assert!(omega_s_window(0).is_err());
    }

    #[test]
    fn window_matches_one_sided_sequence() {
        let m = 500;
        let win = omega_s_window(m).unwrap();
        let u = fib_word(16).unwrap();
        for k in 1..=m as i64 {
            assert_eq!(win.at(k).unwrap(), u.letters()[(k - 1) as usize], "position {k}");
            if k >= 2 {
                assert_eq!(win.at(-k).unwrap(), u.letters()[(k - 2) as usize], "position -{k}");
            }
        }
    }

    #[test]
    fn parse_rejects_foreign_letters() {
        assert!("abc".parse::<Word>().is_err());
        assert_eq!(w("abba").to_string(), "abba");
    }
}
