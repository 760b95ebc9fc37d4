use std::fmt;

use serde::Serialize;

/// Distribution lattice: `REP <= 2D_BC <= 1D_B`, bottom is `REP`.
///
/// The derived `Ord` follows declaration order, so `meet` is `min`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Distribution {
    #[serde(rename = "REP")]
    Replicated,
    #[serde(rename = "2D_BC")]
    TwoDBlockCyclic,
    #[serde(rename = "1D_B")]
    OneDBlock,
}

impl Distribution {
    pub const ALL: [Distribution; 3] =
        [Distribution::Replicated, Distribution::TwoDBlockCyclic, Distribution::OneDBlock];
    pub const TOP: Distribution = Distribution::OneDBlock;
    pub const BOTTOM: Distribution = Distribution::Replicated;

    /// Greatest lower bound.
    pub fn meet(self, other: Distribution) -> Distribution {
        self.min(other)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Distribution::Replicated => "REP",
            Distribution::TwoDBlockCyclic => "2D_BC",
            Distribution::OneDBlock => "1D_B",
        }
    }

    pub fn from_short_name(s: &str) -> Option<Distribution> {
        Distribution::ALL.into_iter().find(|d| d.short_name() == s)
    }

    pub fn is_rep(self) -> bool {
        self == Distribution::Replicated
    }

    pub fn is_1d(self) -> bool {
        self == Distribution::OneDBlock
    }

    pub fn is_2d(self) -> bool {
        self == Distribution::TwoDBlockCyclic
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[cfg(test)]
mod tests {
    use super::Distribution::{self, *};

    #[test]
    fn meet_examples() {
        assert_eq!(OneDBlock.meet(Replicated), Replicated);
        assert_eq!(OneDBlock.meet(OneDBlock), OneDBlock);
        assert_eq!(TwoDBlockCyclic.meet(OneDBlock), TwoDBlockCyclic);
    }

    #[test]
    fn lattice_laws_exhaustive() {
        for a in Distribution::ALL {
            assert_eq!(a.meet(a), a);
            assert_eq!(a.meet(Distribution::BOTTOM), Distribution::BOTTOM);
            assert_eq!(a.meet(Distribution::TOP), a);
            for b in Distribution::ALL {
                assert_eq!(a.meet(b), b.meet(a));
                let m = a.meet(b);
                assert!(m <= a && m <= b);
                for c in Distribution::ALL {
                    assert_eq!(a.meet(b).meet(c), a.meet(b.meet(c)));
                }
            }
        }
    }
}
