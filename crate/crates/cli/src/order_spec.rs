//! `--order` values: `correct`, `reversed`, `random:N`, or an explicit
//! 1-based column list such as `3,1,2`.

use std::fmt;
use std::str::FromStr;

use taborder::baselines::random_order;
use taborder::dag::is_permutation;
use taborder::rng::TabRng;
use taborder::Dag;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OrderSpec {
    Correct,
    Reversed,
    Random(usize),
    /// 0-based internally.
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid order spec {spec:?}: {reason}")]
pub struct OrderSpecError {
    pub spec: String,
    pub reason: String,
}

fn err(spec: &str, reason: impl Into<String>) -> OrderSpecError {
    OrderSpecError {
        spec: spec.to_owned(),
        reason: reason.into(),
    }
}

pub const MAX_RANDOM_ORDERS: usize = 100_000;

impl FromStr for OrderSpec {
    type Err = OrderSpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        match t {
            "correct" => return Ok(Self::Correct),
            "reversed" => return Ok(Self::Reversed),
            _ => {}
        }
        if let Some(n) = t.strip_prefix("random:") {
            let n: usize = n.trim().parse().map_err(|_| err(s, "random:N needs a count"))?;
            if n == 0 || n > MAX_RANDOM_ORDERS {
                return Err(err(s, format!("random count must be in 1..={MAX_RANDOM_ORDERS}")));
            }
            return Ok(Self::Random(n));
        }
        if t.is_empty() {
            return Err(err(s, "empty"));
        }
        let mut order = Vec::new();
        for part in t.split(',') {
            let k: usize = part.trim().parse().map_err(|_| err(s, format!("{part:?} is not a column number")))?;
            if k == 0 {
                return Err(err(s, "columns are numbered from 1"));
            }
            order.push(k - 1);
        }
        if !is_permutation(&order, order.len()) {
            return Err(err(s, "not a permutation of 1..d"));
        }
        Ok(Self::Explicit(order))
    }
}

impl fmt::Display for OrderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Correct => f.write_str("correct"),
            Self::Reversed => f.write_str("reversed"),
            Self::Random(n) => write!(f, "random:{n}"),
            Self::Explicit(o) => f.write_str(&format_order(o, ",")),
        }
    }
}

/// 1-based column numbers joined by `sep`.
pub fn format_order(order: &[usize], sep: &str) -> String {
    order.iter().map(|v| (v + 1).to_string()).collect::<Vec<_>>().join(sep)
}

/// A concrete order with the label it is reported under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledOrder {
    pub label: String,
    pub order: Vec<usize>,
}

impl OrderSpec {
    /// Expands against a graph; `correct` is the graph's reference order.
    pub fn resolve(&self, dag: Option<&Dag>, d: usize, rng: &mut TabRng) -> Result<Vec<LabeledOrder>, OrderSpecError> {
        let spec = self.to_string();
        let reference = || -> Result<Vec<usize>, OrderSpecError> {
            let g = dag.ok_or_else(|| err(&spec, "needs the generating graph (DAG sidecar)"))?;
            if g.d() != d {
                return Err(err(&spec, format!("graph has {} nodes, table has {d} columns", g.d())));
            }
            Ok(g.topo_order().to_vec())
        };
        Ok(match self {
            Self::Correct => vec![LabeledOrder {
                label: spec.clone(),
                order: reference()?,
            }],
            Self::Reversed => {
                let mut o = reference()?;
                o.reverse();
                vec![LabeledOrder { label: spec.clone(), order: o }]
            }
            Self::Random(n) => (0..*n)
                .map(|i| LabeledOrder {
                    label: format!("random:{}", i + 1),
                    order: random_order(d, rng),
                })
                .collect(),
            Self::Explicit(o) => {
                if o.len() != d {
                    return Err(err(&spec, format!("lists {} columns, table has {d}", o.len())));
                }
                vec![LabeledOrder {
                    label: format_order(o, " "),
                    order: o.clone(),
                }]
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use taborder::rng::{substream, Stream};

    #[test]
    fn parses_all_forms() {
        assert_eq!("correct".parse::<OrderSpec>().unwrap(), OrderSpec::Correct);
        assert_eq!(" reversed ".parse::<OrderSpec>().unwrap(), OrderSpec::Reversed);
        assert_eq!("random:30".parse::<OrderSpec>().unwrap(), OrderSpec::Random(30));
        assert_eq!("3,1,2".parse::<OrderSpec>().unwrap(), OrderSpec::Explicit(vec![2, 0, 1]));
        for bad in ["", "random:", "random:0", "random:x", "0,1,2", "1,1,2", "1,3", "a,b", "1,,2", "forward"] {
            assert!(bad.parse::<OrderSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn display_round_trips() {
        for s in ["correct", "reversed", "random:4", "2,3,1"] {
            assert_eq!(s.parse::<OrderSpec>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn resolves_against_graph() {
        let dag = Dag::new(3, vec![(2, 0), (0, 1)], vec![2, 0, 1]).unwrap();
        let mut rng = substream(0, Stream::Eval, 0);
        let c = OrderSpec::Correct.resolve(Some(&dag), 3, &mut rng).unwrap();
        assert_eq!(c[0].order, vec![2, 0, 1]);
        let r = OrderSpec::Reversed.resolve(Some(&dag), 3, &mut rng).unwrap();
        assert_eq!(r[0].order, vec![1, 0, 2]);
        assert_eq!(OrderSpec::Random(5).resolve(None, 3, &mut rng).unwrap().len(), 5);
        assert!(OrderSpec::Correct.resolve(None, 3, &mut rng).is_err());
        assert!(OrderSpec::Correct.resolve(Some(&dag), 4, &mut rng).is_err());
        assert!(OrderSpec::Explicit(vec![1, 0]).resolve(None, 3, &mut rng).is_err());
        assert_eq!(OrderSpec::Explicit(vec![1, 0, 2]).resolve(None, 3, &mut rng).unwrap()[0].label, "2 1 3");
    }
}
