use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GtObject;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Reasonable,
    Bare,
    Partial,
    Heavy,
}

impl Subset {
    pub const ALL: [Subset; 4] = [
        Subset::Reasonable,
        Subset::Bare,
        Subset::Partial,
        Subset::Heavy,
    ];

    pub fn spec(self) -> SubsetSpec {
        SubsetSpec::standard(self)
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::Reasonable => "reasonable",
            Subset::Bare => "bare",
            Subset::Partial => "partial",
            Subset::Heavy => "heavy",
        })
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subset::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown subset '{s}' (expected reasonable, bare, partial or heavy)"
                ))
            })
    }
}

/// Occlusion band plus minimum height.
///
/// The band is stored on the visibility ratio `area(visible)/area(full)` as
/// the half-open interval `[min_visibility, max_visibility)`, which keeps
/// the subsets an exact partition in floating point: occlusion `<= 0.35` is
/// visibility `>= 0.65`, and so on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubsetSpec {
    pub name: Subset,
    pub min_visibility: f64,
    pub max_visibility: f64,
    pub min_height: f64,
}

pub const MIN_HEIGHT: f64 = 50.0;

impl SubsetSpec {
    pub fn standard(name: Subset) -> Self {
        let (lo, hi) = match name {
            Subset::Reasonable => (0.65, f64::INFINITY),
            Subset::Bare => (0.90, f64::INFINITY),
            Subset::Partial => (0.65, 0.90),
            Subset::Heavy => (f64::NEG_INFINITY, 0.65),
        };
        Self {
            name,
            min_visibility: lo,
            max_visibility: hi,
            min_height: MIN_HEIGHT,
        }
    }

    /// Whether a non-ignored ground truth falls in this subset.
    pub fn contains(&self, gt: &GtObject) -> bool {
        let v = gt.visibility();
        !gt.ignore
            && gt.height() >= self.min_height
            && v >= self.min_visibility
            && v < self.max_visibility
    }
}

/// Out-of-subset objects become ignore regions.
pub fn subset_filter(gts: &[GtObject], spec: &SubsetSpec) -> Vec<GtObject> {
    gts.iter()
        .map(|g| GtObject {
            ignore: !spec.contains(g),
            ..*g
        })
        .collect()
}
