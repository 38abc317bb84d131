//! Training task set and periodic completion-weighted sampling.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Task;
use crate::error::{Error, Result};
use crate::hexworld::CellId;

pub const DEFAULT_THRESHOLD: u64 = 62_500;
pub const DEFAULT_WINDOW: u64 = 6_250;

/// Tasks with per-task completion counters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSet {
    tasks: Vec<Task>,
    completions: Vec<u64>,
}

impl TaskSet {
    pub fn new(tasks: Vec<Task>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Config("task set is empty".into()));
        }
        let completions = vec![0; tasks.len()];
        Ok(Self { tasks, completions })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn get(&self, i: usize) -> Option<Task> {
        self.tasks.get(i).copied()
    }

    pub fn completions(&self) -> &[u64] {
        &self.completions
    }

    pub fn set_completions(&mut self, counts: Vec<u64>) -> Result<()> {
        if counts.len() != self.tasks.len() {
            return Err(Error::Config(format!("{} counters for {} tasks", counts.len(), self.tasks.len())));
        }
        self.completions = counts;
        Ok(())
    }

    pub fn record_completion(&mut self, task_index: usize) -> Result<()> {
        let c = self
            .completions
            .get_mut(task_index)
            .ok_or_else(|| Error::Config(format!("task index {task_index} out of range")))?;
        *c += 1;
        Ok(())
    }

    /// `w_i = max_j c_j - c_i + 1`.
    pub fn weights(&self) -> Vec<u64> {
        let max = self.completions.iter().copied().max().unwrap_or(0);
        self.completions.iter().map(|c| max - c + 1).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let w = self.weights();
        let total: u64 = w.iter().sum();
        w.iter().map(|&x| x as f64 / total as f64).collect()
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut tasks = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let f: Vec<i32> = rec
                .iter()
                .map(|x| x.parse::<i32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse(format!("task line {}: expected integers", i + 2)))?;
            if f.len() != 4 {
                return Err(Error::Parse(format!("task line {}: expected 4 fields", i + 2)));
            }
            tasks.push(Task::new(CellId::new(f[0], f[1]), CellId::new(f[2], f[3])));
        }
        Self::new(tasks)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["start_q", "start_r", "goal_q", "goal_r"])?;
        for t in &self.tasks {
            w.write_record(&[t.start.q.to_string(), t.start.r.to_string(), t.goal.q.to_string(), t.goal.r.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Step counter driving the prioritized windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerState {
    pub steps_seen: u64,
    pub threshold: u64,
    pub window_len: u64,
    pub window_end: u64,
}

impl Default for SamplerState {
    fn default() -> Self {
        Self::new(DEFAULT_THRESHOLD, DEFAULT_WINDOW)
    }
}

impl SamplerState {
    pub fn new(threshold: u64, window_len: u64) -> Self {
        Self { steps_seen: 0, threshold: threshold.max(1), window_len, window_end: 0 }
    }

    pub fn in_window(&self) -> bool {
        self.steps_seen < self.window_end
    }

    /// Counts one environment step. A threshold crossed while a window is
    /// open queues the next window right after it.
    pub fn record_step(&mut self) {
        self.steps_seen += 1;
        if self.steps_seen.is_multiple_of(self.threshold) {
            self.window_end = self.window_end.max(self.steps_seen) + self.window_len;
        }
    }
}

/// Task set plus window schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSampler {
    pub tasks: TaskSet,
    pub state: SamplerState,
}

impl TaskSampler {
    pub fn new(tasks: TaskSet, state: SamplerState) -> Self {
        Self { tasks, state }
    }

    pub fn record_step(&mut self) {
        self.state.record_step();
    }

    pub fn record_completion(&mut self, task_index: usize) -> Result<()> {
        self.tasks.record_completion(task_index)
    }

    /// Probabilities the next draw would use.
    pub fn current_probabilities(&self) -> Vec<f64> {
        if self.state.in_window() {
            self.tasks.probabilities()
        } else {
            vec![1.0 / self.tasks.len() as f64; self.tasks.len()]
        }
    }

    pub fn sample_task<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if !self.state.in_window() {
            return rng.gen_range(0..self.tasks.len());
        }
        let w = self.tasks.weights();
        let total: u64 = w.iter().sum();
        let mut x = rng.gen_range(0..total);
        for (i, wi) in w.iter().enumerate() {
            if x < *wi {
                return i;
            }
            x -= wi;
        }
        unreachable!("draw below total weight")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(n: usize) -> TaskSet {
        TaskSet::new((0..n as i32).map(|i| Task::new(CellId::new(i, 0), CellId::new(i, 5))).collect()).unwrap()
    }

    #[test]
    fn formula_weights() {
        let mut s = set(3);
        s.set_completions(vec![3, 1, 1]).unwrap();
        assert_eq!(s.weights(), vec![1, 3, 3]);
        assert_eq!(s.probabilities(), vec![1.0 / 7.0, 3.0 / 7.0, 3.0 / 7.0]);
        s.set_completions(vec![2, 2, 2]).unwrap();
        assert_eq!(s.probabilities(), vec![1.0 / 3.0; 3]);
        assert!(TaskSet::new(vec![]).is_err());
        assert!(s.record_completion(3).is_err());
    }

    #[test]
    fn window_schedule() {
        let mut st = SamplerState::default();
        let mut opened = Vec::new();
        let mut was = false;
        let mut in_count = 0;
        for _ in 0..150_000 {
            st.record_step();
            if st.in_window() {
                in_count += 1;
            }
            if st.in_window() && !was {
                opened.push(st.steps_seen);
            }
            was = st.in_window();
        }
        assert_eq!(opened, vec![62_500, 125_000]);
        assert_eq!(in_count, 2 * 6_250);
    }

    #[test]
    fn overlapping_windows_queue() {
        let mut st = SamplerState::new(10, 15);
        let mut trace = Vec::new();
        for _ in 0..40 {
            st.record_step();
            trace.push(st.in_window());
        }
        let first = trace.iter().position(|&b| b).unwrap();
        assert_eq!(first, 9);
        assert!(trace[9..].iter().all(|&b| b));
        // crossings at 10, 20, 30 and 40 each add 15 steps after the previous end
        assert_eq!(st.window_end, 10 + 4 * 15);
    }

    #[test]
    fn uniform_outside_window() {
        let mut s = TaskSampler::new(set(3), SamplerState::default());
        s.tasks.set_completions(vec![100, 0, 0]).unwrap();
        assert_eq!(s.current_probabilities(), vec![1.0 / 3.0; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 30_000;
        let hits = (0..n).filter(|_| s.sample_task(&mut rng) == 0).count() as f64;
        let sigma = (n as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        assert!((hits - n as f64 / 3.0).abs() < 4.0 * sigma);
    }

    #[test]
    fn in_window_frequencies_within_three_sigma() {
        let mut s = TaskSampler::new(set(3), SamplerState::new(1, 1_000_000));
        s.record_step();
        assert!(s.state.in_window());
        s.tasks.set_completions(vec![3, 1, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[s.sample_task(&mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(s.tasks.probabilities()) {
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let s = set(4);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"start_q,start_r,goal_q,goal_r\n"));
        assert_eq!(TaskSet::read_csv(buf.as_slice()).unwrap(), s);
        assert!(TaskSet::read_csv("start_q,start_r,goal_q,goal_r\n1,2,3\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn weight_invariants(counts in proptest::collection::vec(0u64..50, 1..8)) {
            let mut s = set(counts.len());
            s.set_completions(counts.clone()).unwrap();
            let w = s.weights();
            prop_assert!(w.iter().all(|&x| x >= 1));
            let p = s.probabilities();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let least = counts.iter().copied().min().unwrap();
            let pmax = p.iter().copied().fold(0.0, f64::max);
            for (c, pi) in counts.iter().zip(&p) {
                if *c == least {
                    prop_assert_eq!(*pi, pmax);
                }
            }
        }

        #[test]
        fn deterministic_given_seed(seed in any::<u64>()) {
            let mut s = TaskSampler::new(set(4), SamplerState::new(1, 100));
            s.record_step();
            s.tasks.set_completions(vec![5, 0, 2, 1]).unwrap();
            let a: Vec<usize> = { let mut r = ChaCha8Rng::seed_from_u64(seed); (0..20).map(|_| s.sample_task(&mut r)).collect() };
            let b: Vec<usize> = { let mut r = ChaCha8Rng::seed_from_u64(seed); (0..20).map(|_| s.sample_task(&mut r)).collect() };
            prop_assert_eq!(a, b);
        }
    }
}
