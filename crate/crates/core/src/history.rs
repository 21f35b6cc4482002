//! Working-status histories and path probabilities on the threshold tree.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dist::CostDistribution;
use crate::error::{Error, Result};

/// Largest horizon supported by the dense encoding.
pub const MAX_N: usize = 20;

/// Bit record of past actions, oldest first (1 = work, 0 = shirk).
///
/// Encoded as `(len, bits)` where the oldest action is the most significant
/// bit, so `"10"` is `bits = 2`. Ascending `bits` is the canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WorkHistory {
    len: u8,
    bits: u32,
}

impl WorkHistory {
    pub const EMPTY: WorkHistory = WorkHistory { len: 0, bits: 0 };

    pub fn new(len: usize, bits: u32) -> Result<Self> {
        if len > MAX_N {
            return Err(Error::Argument(format!("history length {len} exceeds {MAX_N}")));
        }
        if len < 32 && bits >> len != 0 {
            return Err(Error::Argument(format!("bits {bits:#b} do not fit in length {len}")));
        }
        Ok(Self { len: len as u8, bits })
    }

    /// All-shirk history of length `len`.
    pub fn zeros(len: usize) -> Self {
        Self { len: len as u8, bits: 0 }
    }

    /// All-work history of length `len`.
    pub fn ones(len: usize) -> Self {
        Self { len: len as u8, bits: (1u32 << len) - 1 }
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Action in period `i` (1-based).
    pub fn action(&self, i: usize) -> bool {
        debug_assert!(i >= 1 && i <= self.len());
        (self.bits >> (self.len() - i)) & 1 == 1
    }

    pub fn work_count(&self) -> usize {
        self.bits.count_ones() as usize
    }

    /// True if the agent has worked at least once.
    pub fn started(&self) -> bool {
        self.bits != 0
    }

    /// First work period (1-based), if any.
    pub fn start_period(&self) -> Option<usize> {
        (1..=self.len()).find(|&i| self.action(i))
    }

    pub fn push(&self, work: bool) -> Self {
        Self { len: self.len + 1, bits: (self.bits << 1) | work as u32 }
    }

    /// First `k` actions.
    pub fn prefix(&self, k: usize) -> Self {
        debug_assert!(k <= self.len());
        Self { len: k as u8, bits: self.bits >> (self.len() - k) }
    }

    /// Dense index of this history among all nodes of depth 0..=N.
    pub fn node_index(&self) -> usize {
        (1usize << self.len) - 1 + self.bits as usize
    }

    pub fn from_node_index(idx: usize) -> Self {
        let len = usize::BITS - 1 - (idx + 1).leading_zeros();
        let bits = (idx + 1 - (1usize << len)) as u32;
        Self { len: len as u8, bits }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s.len() > MAX_N {
            return Err(Error::Argument(format!("history \"{s}\" is longer than {MAX_N}")));
        }
        let mut h = Self::EMPTY;
        for ch in s.chars() {
            match ch {
                '0' => h = h.push(false),
                '1' => h = h.push(true),
                _ => return Err(Error::Argument(format!("bad history character {ch:?} in \"{s}\""))),
            }
        }
        Ok(h)
    }
}

impl fmt::Display for WorkHistory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len == 0 {
            return Ok(());
        }
        write!(f, "{:0width$b}", self.bits, width = self.len())
    }
}

/// Number of cutoff nodes for horizon `n`: `2^n - 1`.
pub fn node_count(n: usize) -> usize {
    (1usize << n) - 1
}

pub fn histories_of_length(t: usize, n: usize) -> Result<Vec<WorkHistory>> {
    if t > n {
        return Err(Error::Argument(format!("history length {t} exceeds horizon {n}")));
    }
    if n > MAX_N {
        return Err(Error::Argument(format!("horizon {n} exceeds {MAX_N}")));
    }
    Ok((0..(1u32 << t)).map(|b| WorkHistory { len: t as u8, bits: b }).collect())
}

/// Children `(w1, w0)` of a node below the leaf depth `n`.
pub fn children(w: WorkHistory, n: usize) -> Result<(WorkHistory, WorkHistory)> {
    if w.len() >= n {
        return Err(Error::Argument(format!("history \"{w}\" is a leaf for N={n}")));
    }
    Ok((w.push(true), w.push(false)))
}

/// Anything that yields a cutoff for each interior node.
pub trait CutoffLookup {
    fn horizon(&self) -> usize;
    fn cutoff_at(&self, w: &WorkHistory) -> Option<f64>;
}

pub fn path_probability<P: CutoffLookup + ?Sized>(profile: &P, d: &CostDistribution, w: &WorkHistory) -> Result<f64> {
    if w.len() > profile.horizon() {
        return Err(Error::Argument(format!("history \"{w}\" longer than N={}", profile.horizon())));
    }
    let mut p = 1.0;
    for t in 1..=w.len() {
        let prev = w.prefix(t - 1);
        let c = profile
            .cutoff_at(&prev)
            .ok_or_else(|| Error::MissingCutoff { t, history: prev.to_string() })?;
        let big_f = d.cdf(c);
        p *= if w.action(t) { big_f } else { 1.0 - big_f };
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::make_uniform;
    use std::collections::HashMap;

    struct MapProfile {
        n: usize,
        map: HashMap<WorkHistory, f64>,
    }

    impl CutoffLookup for MapProfile {
        fn horizon(&self) -> usize {
            self.n
        }
        fn cutoff_at(&self, w: &WorkHistory) -> Option<f64> {
            self.map.get(w).copied()
        }
    }

    fn constant(n: usize, c: f64) -> MapProfile {
        let mut map = HashMap::new();
        for t in 0..n {
            for w in histories_of_length(t, n).unwrap() {
                map.insert(w, c);
            }
        }
        MapProfile { n, map }
    }

    #[test]
    fn enumeration_counts_and_order() {
        assert_eq!(histories_of_length(0, 3).unwrap(), vec![WorkHistory::EMPTY]);
        let two: Vec<String> = histories_of_length(2, 3).unwrap().iter().map(|w| w.to_string()).collect();
        assert_eq!(two, vec!["00", "01", "10", "11"]);
        assert_eq!(histories_of_length(3, 3).unwrap().len(), 8);
        assert!(histories_of_length(4, 3).is_err());
        let total: usize = (0..3).map(|t| histories_of_length(t, 3).unwrap().len()).sum();
        assert_eq!(total, node_count(3));
    }

    #[test]
    fn children_examples() {
        let (a, b) = children(WorkHistory::EMPTY, 2).unwrap();
        assert_eq!((a.to_string(), b.to_string()), ("1".into(), "0".into()));
        let w = WorkHistory::parse("10").unwrap();
        let (a, b) = children(w, 3).unwrap();
        assert_eq!((a.to_string(), b.to_string()), ("101".into(), "100".into()));
        assert!(children(WorkHistory::ones(3), 3).is_err());
    }

    #[test]
    fn node_index_roundtrip() {
        for idx in 0..((1 << 6) - 1) {
            let w = WorkHistory::from_node_index(idx);
            assert_eq!(w.node_index(), idx);
        }
        assert_eq!(WorkHistory::EMPTY.node_index(), 0);
        assert_eq!(WorkHistory::parse("0").unwrap().node_index(), 1);
        assert_eq!(WorkHistory::parse("1").unwrap().node_index(), 2);
        assert_eq!(WorkHistory::parse("00").unwrap().node_index(), 3);
    }

    #[test]
    fn accessors() {
        let w = WorkHistory::parse("0011").unwrap();
        assert_eq!(w.to_string(), "0011");
        assert!(!w.action(1) && !w.action(2) && w.action(3) && w.action(4));
        assert_eq!(w.start_period(), Some(3));
        assert_eq!(w.prefix(2), WorkHistory::zeros(2));
        assert_eq!(w.work_count(), 2);
        assert!(WorkHistory::parse("012").is_err());
        assert!(WorkHistory::new(2, 4).is_err());
    }

    #[test]
    fn path_probability_examples() {
        let d01 = make_uniform(0.0, 1.0).unwrap();
        let top = constant(3, 1.0);
        for w in histories_of_length(3, 3).unwrap() {
            let p = path_probability(&top, &d01, &w).unwrap();
            assert_eq!(p, if w == WorkHistory::ones(3) { 1.0 } else { 0.0 });
        }
        let one = constant(1, 0.3);
        let p = path_probability(&one, &d01, &WorkHistory::parse("1").unwrap()).unwrap();
        assert!((p - 0.3).abs() < 1e-15);
        let half = constant(2, 0.5);
        let mut sum = 0.0;
        for w in histories_of_length(2, 2).unwrap() {
            let p = path_probability(&half, &d01, &w).unwrap();
            assert_eq!(p, 0.25);
            sum += p;
        }
        assert_eq!(sum, 1.0);
    }

    #[test]
    fn missing_cutoff_names_node() {
        let d01 = make_uniform(0.0, 1.0).unwrap();
        let mut p = constant(2, 0.5);
        p.map.remove(&WorkHistory::parse("1").unwrap());
        match path_probability(&p, &d01, &WorkHistory::parse("11").unwrap()) {
            Err(Error::MissingCutoff { t, history }) => {
                assert_eq!(t, 2);
                assert_eq!(history, "1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
