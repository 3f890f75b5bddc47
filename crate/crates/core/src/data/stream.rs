use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

use super::LabeledDataset;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamBatch {
    pub task: usize,
    /// Indices into the source dataset.
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Ordered class-incremental sequence of mini-batches.
///
/// Each task's samples are chunked on their own, so only a task's final batch
/// may be shorter than `batch_size` and no batch mixes tasks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskStream {
    pub batches: Vec<StreamBatch>,
    /// Class set of each task, in stream order.
    pub tasks: Vec<Vec<usize>>,
    pub batch_size: usize,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn sample_count(&self) -> usize {
        self.batches.iter().map(|b| b.indices.len()).sum()
    }

    pub fn last_task_classes(&self) -> &[usize] {
        self.tasks.last().map_or(&[], Vec::as_slice)
    }

    /// All indices of the stream in order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.batches.iter().flat_map(|b| b.indices.iter().copied())
    }
}

/// Splits classes `0..C` into consecutive groups of `classes_per_task` and
/// emits each group's shuffled samples as mini-batches.
pub fn split_class_incremental(
    ds: &LabeledDataset,
    classes_per_task: usize,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<TaskStream> {
    let classes = ds.class_count();
    if classes_per_task == 0 || !classes.is_multiple_of(classes_per_task) {
        return Err(Error::Config(format!(
            "{classes} classes cannot be split into tasks of {classes_per_task}"
        )));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let tasks: Vec<Vec<usize>> = (0..classes / classes_per_task)
        .map(|t| (t * classes_per_task..(t + 1) * classes_per_task).collect())
        .collect();
    let mut batches = Vec::new();
    for (t, class_set) in tasks.iter().enumerate() {
        let mut members: Vec<usize> = class_set
            .iter()
            .flat_map(|&c| ds.class_indices(c).iter().copied())
            .collect();
        members.sort_unstable();
        members.shuffle(rng);
        for chunk in members.chunks(batch_size) {
            batches.push(StreamBatch {
                task: t,
                indices: chunk.to_vec(),
                labels: ds.labels_of(chunk),
            });
        }
    }
    Ok(TaskStream {
        batches,
        tasks,
        batch_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::tensor::Tensor;

    fn ds(classes: usize, per_class: usize) -> LabeledDataset {
        let n = classes * per_class;
        LabeledDataset::new(
            (0..n).map(|_| Tensor::zeros(&[1])).collect(),
            (0..n).map(|i| i % classes).collect(),
            classes,
        )
        .unwrap()
    }

    #[test]
    fn five_tasks_of_two() {
        let s = split_class_incremental(&ds(10, 20), 2, 16, &mut seeded(0)).unwrap();
        assert_eq!(s.tasks.len(), 5);
        assert_eq!(s.last_task_classes(), &[8, 9]);
        for b in &s.batches {
            assert!(b.labels.iter().all(|l| s.tasks[b.task].contains(l)));
        }
        let tasks: Vec<usize> = s.batches.iter().map(|b| b.task).collect();
        assert!(tasks.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn single_task_degenerate() {
        let s = split_class_incremental(&ds(2, 50), 2, 16, &mut seeded(0)).unwrap();
        assert_eq!(s.tasks, vec![vec![0, 1]]);
        // 100 samples in batches of 16: six full and one of four
        assert_eq!(s.len(), 7);
        assert_eq!(s.batches[6].indices.len(), 4);
        assert!(s.batches[..6].iter().all(|b| b.indices.len() == 16));
    }

    #[test]
    fn indivisible_classes_rejected() {
        assert!(split_class_incremental(&ds(10, 2), 3, 4, &mut seeded(0)).is_err());
    }
}
