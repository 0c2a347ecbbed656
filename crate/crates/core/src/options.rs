use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Refinements of the basic matching algorithm. The default runs the plain
/// algorithm over every unit.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchOptions<T> {
    /// Pick seeds fewest-conflicts-first instead of in index order.
    pub refined_seeds: bool,
    /// Assign leftover units to the nearest labeled unit anywhere in the
    /// sample rather than only within their own neighborhood.
    pub global_step5: bool,
    /// Longest arc allowed in the compatible digraph.
    pub caliper_gc: Option<T>,
    /// Longest distance allowed when assigning leftover units.
    pub caliper_step5: Option<T>,
    /// Units guaranteed to be matched; `None` means all units.
    pub focus: Option<Vec<usize>>,
}

impl<T> Default for MatchOptions<T> {
    fn default() -> Self {
        MatchOptions {
            refined_seeds: false,
            global_step5: false,
            caliper_gc: None,
            caliper_step5: None,
            focus: None,
        }
    }
}

impl<T: Scalar> MatchOptions<T> {
    /// Both seed and assignment refinements switched on.
    pub fn refined() -> Self {
        MatchOptions {
            refined_seeds: true,
            global_step5: true,
            ..Default::default()
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for caliper in [self.caliper_gc, self.caliper_step5].into_iter().flatten() {
            if caliper <= T::zero() || !caliper.is_finite() {
                return Err(Error::InvalidCaliper);
            }
        }
        if let Some(focus) = &self.focus {
            if focus.is_empty() {
                return Err(Error::InvalidConfig("focus set is empty".into()));
            }
            if let Some(&bad) = focus.iter().find(|&&u| u >= n) {
                return Err(Error::IndexOutOfBounds { index: bad, n });
            }
        }
        Ok(())
    }

    /// Sorted, deduplicated focus set, or every unit.
    pub fn sources(&self, n: usize) -> Vec<usize> {
        match &self.focus {
            Some(f) => {
                let mut f = f.clone();
                f.sort_unstable();
                f.dedup();
                f
            }
            None => (0..n).collect(),
        }
    }
}
