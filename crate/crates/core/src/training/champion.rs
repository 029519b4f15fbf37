use crate::error::{Error, Result};

/// The chosen checkpoint and the full score table it was picked from.
#[derive(Clone, Debug, PartialEq)]
pub struct Champion<T> {
    pub epoch: usize,
    pub item: T,
    pub score: f64,
    /// `(epoch, score)` in ascending epoch order.
    pub table: Vec<(usize, f64)>,
}

/// Scores every `(epoch, checkpoint)` with `metric` and keeps the best;
/// ties go to the earliest epoch and NaN never wins.
pub fn select_champion<T, F>(mut candidates: Vec<(usize, T)>, mut metric: F) -> Result<Champion<T>>
where
    F: FnMut(&T) -> Result<f64>,
{
    if candidates.is_empty() {
        return Err(Error::contract("no checkpoints to choose from"));
    }
    candidates.sort_by_key(|(e, _)| *e);
    let mut table = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, (epoch, item)) in candidates.iter().enumerate() {
        let s = metric(item)?;
        table.push((*epoch, s));
        if best.map_or(!s.is_nan(), |(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    let (i, score) = best.unwrap_or((0, table[0].1));
    let (epoch, item) = candidates.swap_remove(i);
    Ok(Champion {
        epoch,
        item,
        score,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_highest_then_earliest() {
        let c = select_champion(vec![(25, 0.1856), (10, 0.4192), (13, 0.4650)], |s| Ok(*s)).unwrap();
        assert_eq!(c.epoch, 13);
        assert_eq!(c.table, vec![(10, 0.4192), (13, 0.4650), (25, 0.1856)]);

        let c = select_champion(vec![(3, 0.5), (1, 0.5), (2, 0.5)], |s| Ok(*s)).unwrap();
        assert_eq!(c.epoch, 1);

        let c = select_champion(vec![(7, "only")], |_| Ok(0.0)).unwrap();
        assert_eq!((c.epoch, c.item), (7, "only"));

        assert!(select_champion(Vec::<(usize, f64)>::new(), |s| Ok(*s)).is_err());
    }

    #[test]
    fn nan_never_wins() {
        let c = select_champion(vec![(1, f64::NAN), (2, 0.1)], |s| Ok(*s)).unwrap();
        assert_eq!(c.epoch, 2);
    }
}
