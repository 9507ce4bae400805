//! The four valence-arousal quadrants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Q1 positive valence / high arousal, Q2 negative / high, Q3 negative / low,
/// Q4 positive / low.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    Q1,
    Q2,
    Q3,
    Q4,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Quadrant::Q1, Quadrant::Q2, Quadrant::Q3, Quadrant::Q4];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Range(format!("quadrant index {i} outside 0..4")))
    }

    pub fn positive_valence(self) -> bool {
        matches!(self, Quadrant::Q1 | Quadrant::Q4)
    }

    pub fn high_arousal(self) -> bool {
        matches!(self, Quadrant::Q1 | Quadrant::Q2)
    }

    pub fn name(self) -> &'static str {
        ["Q1", "Q2", "Q3", "Q4"][self.index()]
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Quadrant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "Q1" | "1" => Ok(Quadrant::Q1),
            "Q2" | "2" => Ok(Quadrant::Q2),
            "Q3" | "3" => Ok(Quadrant::Q3),
            "Q4" | "4" => Ok(Quadrant::Q4),
            _ => Err(Error::Input(format!("unknown quadrant {s:?}"))),
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_index() {
        for q in Quadrant::ALL {
            assert_eq!(q.name().parse::<Quadrant>().unwrap(), q);
            assert_eq!(Quadrant::from_index(q.index()).unwrap(), q);
        }
        assert_eq!("q3".parse::<Quadrant>().unwrap(), Quadrant::Q3);
        assert!("Q5".parse::<Quadrant>().is_err());
        assert!(Quadrant::from_index(4).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_on_tie() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
    }
}
