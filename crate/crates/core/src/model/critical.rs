use crate::error::{Error, Result};

/// Sorted indices where an event is present or an anomaly was extracted.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CriticalSet {
    indices: Vec<usize>,
}

impl CriticalSet {
    pub fn from_flags(flags: &[bool]) -> Self {
        Self {
            indices: (0..flags.len()).filter(|&i| flags[i]).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, t: usize) -> bool {
        self.indices.binary_search(&t).is_ok()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `{t | e_t != 0 or a_t != 1}`.
pub fn critical_set(e: &[f64], a: &[f64]) -> Result<CriticalSet> {
    if e.len() != a.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} events vs {} anomaly values",
            e.len(),
            a.len()
        )));
    }
    let flags: Vec<bool> = e
        .iter()
        .zip(a)
        .map(|(&e, &a)| e != 0.0 || a != 1.0)
        .collect();
    Ok(CriticalSet::from_flags(&flags))
}

/// Hidden states recorded at critical steps of one series, in index order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HiddenBank {
    indices: Vec<usize>,
    states: Vec<Vec<f64>>,
}

impl HiddenBank {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry; indices must be strictly increasing.
    pub fn push(&mut self, index: usize, h: Vec<f64>) -> Result<()> {
        if let Some(&last) = self.indices.last() {
            if index <= last {
                return Err(Error::InvalidArgument(format!(
                    "hidden bank index {index} does not follow {last}"
                )));
            }
        }
        self.indices.push(index);
        self.states.push(h);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn last_index(&self) -> Option<usize> {
        self.indices.last().copied()
    }

    /// Number of entries with index `< t`.
    pub fn count_before(&self, t: usize) -> usize {
        self.indices.partition_point(|&i| i < t)
    }

    /// Hidden states with index `< t`.
    pub fn before(&self, t: usize) -> &[Vec<f64>] {
        &self.states[..self.count_before(t)]
    }

    pub fn get(&self, index: usize) -> Option<&[f64]> {
        self.indices
            .binary_search(&index)
            .ok()
            .map(|k| self.states[k].as_slice())
    }
}
