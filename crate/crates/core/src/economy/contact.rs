use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::utility::GoodIndex;
use crate::error::{Error, Result};

pub type AgentId = usize;
pub type PartId = usize;

/// Partition of the agents into parts, and the goods that may cross
/// between each pair of parts. Inside a part every good is tradable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ContactRepr", into = "ContactRepr")]
pub struct ContactStructure {
    parts: Vec<Vec<AgentId>>,
    tradable: BTreeMap<(PartId, PartId), BTreeSet<GoodIndex>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContactRepr {
    parts: Vec<Vec<AgentId>>,
    #[serde(default)]
    tradable: Vec<TradableLink>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TradableLink {
    parts: [PartId; 2],
    goods: Vec<GoodIndex>,
}

fn key(a: PartId, b: PartId) -> (PartId, PartId) {
    (a.min(b), a.max(b))
}

impl ContactStructure {
    /// One part holding every agent.
    pub fn single(agents: impl IntoIterator<Item = AgentId>) -> Self {
        ContactStructure {
            parts: vec![agents.into_iter().collect()],
            tradable: BTreeMap::new(),
        }
    }

    /// Disjoint parts with no contact between them.
    pub fn isolated(parts: Vec<Vec<AgentId>>) -> Result<Self> {
        let s = ContactStructure {
            parts,
            tradable: BTreeMap::new(),
        };
        s.check_shape()?;
        Ok(s)
    }

    fn check_shape(&self) -> Result<()> {
        if self.parts.is_empty() {
            return Err(Error::arg("contact structure has no parts"));
        }
        if let Some(p) = self.parts.iter().position(Vec::is_empty) {
            return Err(Error::arg(format!("part {p} is empty")));
        }
        let mut seen = BTreeSet::new();
        for id in self.parts.iter().flatten() {
            if !seen.insert(*id) {
                return Err(Error::arg(format!("agent {id} appears in more than one part")));
            }
        }
        for &(a, b) in self.tradable.keys() {
            if a == b || b >= self.parts.len() {
                return Err(Error::arg(format!("tradable entry for invalid part pair ({a}, {b})")));
            }
        }
        Ok(())
    }

    /// Checks the good indices against the economy's good count.
    pub(crate) fn check_goods(&self, goods: usize) -> Result<()> {
        for ((a, b), set) in &self.tradable {
            if let Some(t) = set.iter().find(|&&t| t >= goods) {
                return Err(Error::arg(format!(
                    "good {t} tradable between parts {a} and {b} does not exist"
                )));
            }
        }
        Ok(())
    }

    pub fn parts(&self) -> &[Vec<AgentId>] {
        &self.parts
    }

    pub fn part_count(&self) -> usize {
        self.parts.len()
    }

    /// Goods exchangeable between two parts (all goods when `a == b`).
    pub fn tradable_goods(&self, a: PartId, b: PartId, goods: usize) -> Vec<GoodIndex> {
        if a == b {
            return (0..goods).collect();
        }
        self.tradable
            .get(&key(a, b))
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn is_tradable(&self, a: PartId, b: PartId, good: GoodIndex) -> bool {
        a == b
            || self
                .tradable
                .get(&key(a, b))
                .is_some_and(|s| s.contains(&good))
    }

    pub(crate) fn set(&mut self, a: PartId, b: PartId, goods: &[GoodIndex], enabled: bool) {
        let k = key(a, b);
        if enabled {
            self.tradable.entry(k).or_default().extend(goods.iter().copied());
        } else if let Some(set) = self.tradable.get_mut(&k) {
            for t in goods {
                set.remove(t);
            }
            if set.is_empty() {
                self.tradable.remove(&k);
            }
        }
    }

    /// Connected components of the flow graph of `good` over parts, each
    /// sorted, ordered by smallest part id.
    pub fn components(&self, good: GoodIndex) -> Vec<Vec<PartId>> {
        let n = self.parts.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (&(a, b), set) in &self.tradable {
            if set.contains(&good) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<PartId>> = BTreeMap::new();
        for p in 0..n {
            let r = find(&mut parent, p);
            groups.entry(r).or_default().push(p);
        }
        groups.into_values().collect()
    }

    /// The component of `good` that contains `part`.
    pub fn component_of(&self, good: GoodIndex, part: PartId) -> Vec<PartId> {
        self.components(good)
            .into_iter()
            .find(|c| c.contains(&part))
            .unwrap_or_default()
    }
}

impl TryFrom<ContactRepr> for ContactStructure {
    type Error = Error;

    fn try_from(r: ContactRepr) -> Result<Self> {
        let mut s = ContactStructure {
            parts: r.parts,
            tradable: BTreeMap::new(),
        };
        for link in r.tradable {
            let [a, b] = link.parts;
            if a == b {
                return Err(Error::arg(format!("tradable link joins part {a} to itself")));
            }
            s.set(a, b, &link.goods, true);
        }
        s.check_shape()?;
        Ok(s)
    }
}

impl From<ContactStructure> for ContactRepr {
    fn from(s: ContactStructure) -> Self {
        ContactRepr {
            parts: s.parts,
            tradable: s
                .tradable
                .into_iter()
                .map(|((a, b), goods)| TradableLink {
                    parts: [a, b],
                    goods: goods.into_iter().collect(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn components_follow_tradable_links() {
        let mut s = ContactStructure::isolated(vec![vec![0], vec![1], vec![2]]).unwrap();
        s.set(0, 1, &[0], true);
        assert_eq!(s.components(0), vec![vec![0, 1], vec![2]]);
        assert_eq!(s.components(1), vec![vec![0], vec![1], vec![2]]);
        s.set(2, 1, &[0], true);
        assert_eq!(s.components(0), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn shape_errors() {
        assert!(ContactStructure::isolated(vec![vec![0], vec![]]).is_err());
        assert!(ContactStructure::isolated(vec![vec![0, 1], vec![1]]).is_err());
        let json = r#"{"parts": [[0], [1]], "tradable": [{"parts": [0, 5], "goods": [0]}]}"#;
        assert!(serde_json::from_str::<ContactStructure>(json).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let mut s = ContactStructure::isolated(vec![vec![0, 1], vec![2]]).unwrap();
        s.set(1, 0, &[0, 2], true);
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains(r#""parts":[0,1]"#));
        let back: ContactStructure = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
