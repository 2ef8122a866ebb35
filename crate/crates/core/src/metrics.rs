//! Accuracy, false-positive rate and communication overhead.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::Prefix;

/// Share of the ground-truth prefixes that were output.
pub fn accuracy(output: &BTreeSet<Prefix>, truth: &BTreeSet<Prefix>) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::UndefinedMetric("accuracy needs a non-empty ground truth"));
    }
    Ok(output.intersection(truth).count() as f64 / truth.len() as f64)
}

/// Output prefixes outside `truth`, relative to the size of `truth`.
/// Can exceed 1.
pub fn false_positive_rate(output: &BTreeSet<Prefix>, truth: &BTreeSet<Prefix>) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::UndefinedMetric("false-positive rate needs a non-empty ground truth"));
    }
    Ok(output.difference(truth).count() as f64 / truth.len() as f64)
}

/// Reports sent per packet of the stream.
pub fn communication_overhead(report_count: u64, stream_length: u64) -> Result<f64> {
    if stream_length == 0 {
        return Err(Error::UndefinedMetric("communication overhead needs a non-empty stream"));
    }
    Ok(report_count as f64 / stream_length as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(ids: &[u32]) -> BTreeSet<Prefix> {
        ids.iter().map(|&i| Prefix::from_addr(i << 8)).collect()
    }

    #[test]
    fn accuracy_examples() {
        let truth = set(&[1, 2, 4, 5]);
        assert_eq!(accuracy(&set(&[1, 2, 3]), &truth).unwrap(), 0.5);
        assert_eq!(accuracy(&truth, &truth).unwrap(), 1.0);
        assert_eq!(accuracy(&set(&[]), &truth).unwrap(), 0.0);
        assert!(accuracy(&set(&[1]), &set(&[])).is_err());
    }

    #[test]
    fn false_positive_examples() {
        assert_eq!(false_positive_rate(&set(&[1, 9]), &set(&[1, 2])).unwrap(), 0.5);
        assert_eq!(false_positive_rate(&set(&[1]), &set(&[1, 2])).unwrap(), 0.0);
        assert_eq!(false_positive_rate(&set(&[6, 7, 8, 9]), &set(&[1, 2])).unwrap(), 2.0);
        assert!(false_positive_rate(&set(&[1]), &set(&[])).is_err());
    }

    #[test]
    fn overhead_examples() {
        assert_eq!(communication_overhead(0, 10).unwrap(), 0.0);
        assert_eq!(communication_overhead(100, 10_000).unwrap(), 0.01);
        assert!(communication_overhead(1, 0).is_err());
    }

    proptest! {
        #[test]
        fn accuracy_monotone_under_inclusion(
            truth in prop::collection::btree_set(0u32..50, 1..20),
            small in prop::collection::btree_set(0u32..50, 0..20),
            extra in prop::collection::btree_set(0u32..50, 0..20),
        ) {
            let truth = set(&truth.into_iter().collect::<Vec<_>>());
            let small = set(&small.into_iter().collect::<Vec<_>>());
            let big: BTreeSet<Prefix> = small.union(&set(&extra.into_iter().collect::<Vec<_>>())).copied().collect();
            prop_assert!(accuracy(&small, &truth).unwrap() <= accuracy(&big, &truth).unwrap());
        }
    }
}
