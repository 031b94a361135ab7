use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Ordered `(transformer layer, filter size)` pairs for feature distillation.
///
/// Textual form is `{l,…}-{k,…}`: the i-th layer pairs with the i-th size.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AlignmentSpec {
    pairs: Vec<(usize, usize)>,
}

impl AlignmentSpec {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::config("alignment needs at least one pair"));
        }
        for (i, p) in pairs.iter().enumerate() {
            if pairs[..i].contains(p) {
                return Err(Error::config(format!("duplicate alignment pair {p:?}")));
            }
        }
        Ok(AlignmentSpec { pairs })
    }

    /// Pairs sorted layers with sorted sizes position by position, after
    /// evenly subsampling whichever list is longer.
    pub fn monotone(layers: usize, sizes: &[usize]) -> Result<Self> {
        if layers == 0 || sizes.is_empty() {
            return Err(Error::config("monotone alignment needs layers and filter sizes"));
        }
        let mut sizes = sizes.to_vec();
        sizes.sort_unstable();
        let ls: Vec<usize> = (0..layers).collect();
        let n = layers.min(sizes.len());
        let pick = |len: usize, i: usize| -> usize {
            if n == 1 {
                len - 1
            } else {
                // round(i·(len−1)/(n−1)) in integer arithmetic
                (2 * i * (len - 1) + (n - 1)) / (2 * (n - 1))
            }
        };
        let pairs = (0..n)
            .map(|i| (ls[pick(ls.len(), i)], sizes[pick(sizes.len(), i)]))
            .collect();
        Self::new(pairs)
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn layers(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Every layer below `layers` and every size among `sizes`.
    pub fn validate(&self, layers: usize, sizes: &[usize]) -> Result<()> {
        for &(l, k) in &self.pairs {
            if l >= layers {
                return Err(Error::config(format!(
                    "alignment {self} references layer {l}, inspirer has {layers}"
                )));
            }
            if !sizes.contains(&k) {
                return Err(Error::config(format!(
                    "alignment {self} references filter size {k}, target has {sizes:?}"
                )));
            }
        }
        Ok(())
    }
}

fn parse_set(s: &str) -> Result<Vec<usize>> {
    let inner = s
        .trim()
        .strip_prefix('{')
        .and_then(|r| r.strip_suffix('}'))
        .ok_or_else(|| Error::config(format!("expected {{…}}, got {s:?}")))?;
    inner
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| Error::config(format!("bad index {t:?} in {s:?}: {e}")))
        })
        .collect()
}

impl FromStr for AlignmentSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let close = s
            .find('}')
            .ok_or_else(|| Error::config(format!("malformed alignment {s:?}")))?;
        let (left, rest) = s.split_at(close + 1);
        let right = rest
            .trim_start()
            .strip_prefix('-')
            .ok_or_else(|| Error::config(format!("malformed alignment {s:?}")))?;
        let (ls, ks) = (parse_set(left)?, parse_set(right)?);
        if ls.len() != ks.len() {
            return Err(Error::config(format!(
                "alignment {s:?} pairs {} layers with {} sizes",
                ls.len(),
                ks.len()
            )));
        }
        Self::new(ls.into_iter().zip(ks).collect())
    }
}

impl fmt::Display for AlignmentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: Vec<usize>| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        write!(f, "{{{}}}-{{{}}}", join(self.layers()), join(self.sizes()))
    }
}

impl Serialize for AlignmentSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AlignmentSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
