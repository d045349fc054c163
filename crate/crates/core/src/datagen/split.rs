use rand::seq::SliceRandom;

use super::ImpressionSession;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};

/// Share of the day range held out for test (one week of a four-week log).
pub const TEST_TAIL_FRACTION: f64 = 0.25;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<ImpressionSession>,
    pub validation: Vec<ImpressionSession>,
    pub test: Vec<ImpressionSession>,
}

/// First day (0-based) of the test window.
pub fn test_start_day(days: usize) -> i32 {
    let tail = (days as f64 * TEST_TAIL_FRACTION).ceil() as usize;
    (days - tail.min(days)) as i32
}

/// Chronological split: the last quarter of days is test; a seeded
/// `val_fraction` sample of the remainder is validation.
pub fn split_dataset(
    log: &[ImpressionSession],
    days: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::InvalidConfig("val_fraction must lie in [0, 1)".into()));
    }
    let cut = test_start_day(days);
    let (test, rest): (Vec<_>, Vec<_>) = log.iter().cloned().partition(|s| s.day >= cut);

    let mut order: Vec<usize> = (0..rest.len()).collect();
    order.shuffle(&mut stream_rng(seed, streams::SPLIT));
    let n_val = (rest.len() as f64 * val_fraction).round() as usize;
    let mut is_val = vec![false; rest.len()];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let (validation, train): (Vec<_>, Vec<_>) = rest
        .into_iter()
        .zip(is_val)
        .partition(|(_, v)| *v);
    let split = DatasetSplit {
        train: train.into_iter().map(|(s, _)| s).collect(),
        validation: validation.into_iter().map(|(s, _)| s).collect(),
        test,
    };
    if split.train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if split.validation.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    if split.test.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{Candidate, NewsId, UserId};

    fn session(user: u32, day: i32) -> ImpressionSession {
        ImpressionSession {
            user_id: UserId(user),
            day,
            candidates: vec![
                Candidate {
                    news_id: NewsId(0),
                    label: 1,
                },
                Candidate {
                    news_id: NewsId(1),
                    label: 0,
                },
            ],
        }
    }

    #[test]
    fn last_week_of_28_days_is_test() {
        // Days are 0-based: 21..=27 are calendar days 22-28.
        assert_eq!(test_start_day(28), 21);
        let log: Vec<_> = (0..28).map(|d| session(d as u32, d)).collect();
        let split = split_dataset(&log, 28, 0.1, 1).unwrap();
        let mut test_days: Vec<i32> = split.test.iter().map(|s| s.day).collect();
        test_days.sort();
        assert_eq!(test_days, (21..28).collect::<Vec<_>>());
    }

    #[test]
    fn validation_sample_is_exact() {
        let mut log: Vec<_> = (0..1000).map(|i| session(i, (i % 21) as i32)).collect();
        log.push(session(5000, 27));
        let split = split_dataset(&log, 28, 0.1, 3).unwrap();
        assert_eq!(split.validation.len(), 100);
        assert_eq!(split.train.len(), 900);
        assert_eq!(split.test.len(), 1);
    }

    #[test]
    fn deterministic_disjoint_and_exhaustive() {
        let log: Vec<_> = (0..500).map(|i| session(i, (i % 28) as i32)).collect();
        let a = split_dataset(&log, 28, 0.1, 42).unwrap();
        let b = split_dataset(&log, 28, 0.1, 42).unwrap();
        assert_eq!(a, b);
        let mut users: Vec<u32> = a
            .train
            .iter()
            .chain(&a.validation)
            .chain(&a.test)
            .map(|s| s.user_id.0)
            .collect();
        users.sort();
        assert_eq!(users, (0..500).collect::<Vec<_>>());
    }

    #[test]
    fn empty_split_is_rejected() {
        let log: Vec<_> = (0..10).map(|i| session(i, 0)).collect();
        assert!(matches!(
            split_dataset(&log, 28, 0.1, 0),
            Err(Error::EmptySplit("test"))
        ));
    }
}
