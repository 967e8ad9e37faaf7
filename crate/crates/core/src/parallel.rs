//! Race-free scatter over horizontal strips of the DoF lattice.
//!
//! A task owns a contiguous range of lattice rows and therefore a contiguous
//! slice of the output vector. Tasks in one group have disjoint ranges and may
//! run concurrently; groups run one after another. Every output entry is
//! written by at most one task per group in a fixed order, so results do not
//! depend on the number of threads.

use rayon::prelude::*;

/// Sizes the global worker pool; call once before any parallel work.
pub fn configure_threads(n: usize) -> crate::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| crate::Error::Config(format!("thread pool: {e}")))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StripTask {
    /// First lattice row written.
    pub lo_row: usize,
    /// Last lattice row written (inclusive).
    pub hi_row: usize,
    pub items: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StripSchedule {
    pub groups: Vec<Vec<StripTask>>,
}

impl StripSchedule {
    /// Groups `(row, item)` pairs into tasks writing lattice rows
    /// `row * stride ..= row * stride + span`; rows `n_groups` apart share a group.
    pub fn from_rows(
        keyed: impl IntoIterator<Item = (usize, usize)>,
        stride: usize,
        span: usize,
        last_row: usize,
        n_groups: usize,
    ) -> Self {
        let mut by_row: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (row, item) in keyed {
            by_row.entry(row).or_default().push(item);
        }
        let mut groups = vec![Vec::new(); n_groups];
        for (row, items) in by_row {
            let lo_row = row * stride;
            let hi_row = (lo_row + span).min(last_row);
            groups[row % n_groups].push(StripTask {
                lo_row,
                hi_row,
                items,
            });
        }
        groups.retain(|g| !g.is_empty());
        Self { groups }
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn items(&self) -> impl Iterator<Item = usize> + '_ {
        self.groups
            .iter()
            .flatten()
            .flat_map(|t| t.items.iter().copied())
    }

    /// Runs `f(items, y_slice, offset)` for every task, where `y_slice` covers
    /// DoFs `offset..` of the task's rows.
    pub fn run<F>(&self, y: &mut [f64], row_start: &[usize], f: F)
    where
        F: Fn(&[usize], &mut [f64], usize) + Sync,
    {
        let parallel = rayon::current_num_threads() > 1;
        for group in &self.groups {
            let mut slices: Vec<(&StripTask, &mut [f64], usize)> = Vec::with_capacity(group.len());
            let mut rest: &mut [f64] = &mut *y;
            let mut consumed = 0;
            for task in group {
                let start = row_start[task.lo_row];
                let end = row_start[task.hi_row + 1];
                debug_assert!(start >= consumed, "overlapping strips in one group");
                let tail = std::mem::take(&mut rest);
                let (_, tail) = tail.split_at_mut(start - consumed);
                let (mine, tail) = tail.split_at_mut(end - start);
                rest = tail;
                consumed = end;
                slices.push((task, mine, start));
            }
            if parallel {
                slices
                    .into_par_iter()
                    .for_each(|(task, slice, offset)| f(&task.items, slice, offset));
            } else {
                for (task, slice, offset) in slices {
                    f(&task.items, slice, offset);
                }
            }
        }
    }

    /// Zeroes every DoF range touched by the schedule.
    pub fn zero_rows(&self, y: &mut [f64], row_start: &[usize]) {
        for task in self.groups.iter().flatten() {
            y[row_start[task.lo_row]..row_start[task.hi_row + 1]].fill(0.0);
        }
    }
}
