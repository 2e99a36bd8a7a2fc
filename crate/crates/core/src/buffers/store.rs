use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::Rng;

use super::BufferError;

/// One `(s, a, r, s', done, w)` record.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedTransition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    /// Confidence weight in `(0, 1]`; real transitions carry exactly 1.
    pub weight: f64,
}

impl WeightedTransition {
    pub fn real(state: Vec<f64>, action: Vec<f64>, reward: f64, next_state: Vec<f64>, done: bool) -> Self {
        Self {
            state,
            action,
            reward,
            next_state,
            done,
            weight: 1.0,
        }
    }

    /// Regression target `[r, s']`, reward first.
    pub fn target(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(1 + self.next_state.len());
        y.push(self.reward);
        y.extend_from_slice(&self.next_state);
        y
    }

    /// One line of the transition log: `s | a | r | s' | done | w`.
    pub fn to_log_line(&self) -> String {
        let join = |v: &[f64]| {
            let mut s = String::new();
            for (i, x) in v.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                write!(s, "{x}").expect("writing to a String cannot fail");
            }
            s
        };
        format!(
            "{} | {} | {} | {} | {} | {}",
            join(&self.state),
            join(&self.action),
            self.reward,
            join(&self.next_state),
            u8::from(self.done),
            self.weight
        )
    }

    pub fn from_log_line(line: &str) -> Result<Self, BufferError> {
        let bad = || BufferError::Parse(line.to_string());
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(bad());
        }
        let vec = |s: &str| -> Result<Vec<f64>, BufferError> {
            s.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
                .collect()
        };
        let done = match fields[4] {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        };
        Ok(Self {
            state: vec(fields[0])?,
            action: vec(fields[1])?,
            reward: fields[2].parse().map_err(|_| bad())?,
            next_state: vec(fields[3])?,
            done,
            weight: fields[5].parse().map_err(|_| bad())?,
        })
    }
}

/// Bounded FIFO store of transitions.
#[derive(Clone, Debug)]
pub struct ReplayStore {
    items: VecDeque<WeightedTransition>,
    capacity: usize,
    inserted: u64,
}

impl ReplayStore {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
            inserted: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total number of pushes since construction, including evicted items.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: WeightedTransition) -> Result<(), BufferError> {
        if !(t.weight > 0.0 && t.weight <= 1.0) {
            return Err(BufferError::InvalidWeight(t.weight));
        }
        if self.capacity == 0 {
            return Ok(());
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.inserted += 1;
        Ok(())
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    pub fn get(&self, idx: usize) -> &WeightedTransition {
        &self.items[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &WeightedTransition> {
        self.items.iter()
    }

    /// Uniform draw with replacement.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, rng: &mut R) -> Result<&'a WeightedTransition, BufferError> {
        if self.items.is_empty() {
            return Err(BufferError::Empty);
        }
        Ok(&self.items[rng.random_range(0..self.items.len())])
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>, BufferError> {
        if self.items.is_empty() {
            return Err(BufferError::Empty);
        }
        Ok((0..n).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn export_log(&self) -> String {
        let mut out = String::new();
        for t in &self.items {
            out.push_str(&t.to_log_line());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(i: usize) -> WeightedTransition {
        WeightedTransition::real(vec![i as f64], vec![0.5], -(i as f64), vec![i as f64 + 1.0], false)
    }

    #[test]
    fn fifo_eviction_keeps_capacity() {
        let mut s = ReplayStore::new(3);
        for i in 0..5 {
            s.push(t(i)).unwrap();
        }
        assert_eq!(s.len(), 3);
        assert_eq!(s.get(0).state, vec![2.0]);
        assert_eq!(s.inserted(), 5);
    }

    #[test]
    fn rejects_out_of_range_weights() {
        let mut s = ReplayStore::new(3);
        for w in [0.0, -0.1, 1.5, f64::NAN] {
            let mut x = t(0);
            x.weight = w;
            assert!(s.push(x).is_err());
        }
    }

    #[test]
    fn sampling_is_uniform() {
        let mut s = ReplayStore::new(10);
        for i in 0..10 {
            s.push(t(i)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 50_000;
        let mut counts = [0usize; 10];
        for idx in s.sample_indices(n, &mut rng).unwrap() {
            counts[idx] += 1;
        }
        let p = 0.1;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sd, "{counts:?}");
        }
        assert!(ReplayStore::new(4).sample(&mut rng).is_err());
    }

    #[test]
    fn log_line_roundtrip() {
        let mut x = WeightedTransition::real(vec![0.1, -2.5e-7], vec![1.0], -0.3, vec![0.2, 3.0], true);
        x.weight = 0.731;
        let line = x.to_log_line();
        assert_eq!(line.matches('|').count(), 5);
        assert_eq!(WeightedTransition::from_log_line(&line).unwrap(), x);
        assert!(WeightedTransition::from_log_line("1 | 2 | 3").is_err());
    }
}
