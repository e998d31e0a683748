use rand::Rng;

use super::DqnError;

/// Fixed-capacity FIFO experience memory with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    storage: Vec<T>,
    /// Slot that the next push overwrites once the buffer is full.
    head: usize,
    insert_count: u64,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self, DqnError> {
        if capacity == 0 {
            return Err(DqnError::InvalidConfig("replay capacity must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            storage: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
            insert_count: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn insert_count(&self) -> u64 {
        self.insert_count
    }

    pub fn push(&mut self, item: T) {
        if self.storage.len() < self.capacity {
            self.storage.push(item);
        } else {
            self.storage[self.head] = item;
            self.head = (self.head + 1) % self.capacity;
        }
        self.insert_count += 1;
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        let (newer, older) = self.storage.split_at(self.head);
        older.iter().chain(newer)
    }

    /// Uniform sampling with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&T>, DqnError> {
        if self.storage.len() < batch_size || batch_size == 0 {
            return Err(DqnError::Underfull {
                have: self.storage.len(),
                need: batch_size.max(1),
            });
        }
        Ok((0..batch_size)
            .map(|_| &self.storage[rng.random_range(0..self.storage.len())])
            .collect())
    }

    /// Storage in slot order. Sampling indexes slots, so persisting this
    /// layout together with [`head`](Self::head) reproduces future draws.
    pub fn slots(&self) -> &[T] {
        &self.storage
    }

    pub fn head(&self) -> usize {
        self.head
    }

    /// Inverse of [`slots`](Self::slots) and [`head`](Self::head).
    pub fn from_parts(capacity: usize, slots: Vec<T>, head: usize, insert_count: u64) -> Result<Self, DqnError> {
        if slots.len() > capacity {
            return Err(DqnError::InvalidConfig(format!(
                "{} stored items exceed capacity {capacity}",
                slots.len()
            )));
        }
        if head != 0 && (slots.len() < capacity || head >= capacity) {
            return Err(DqnError::InvalidConfig(format!(
                "head {head} is only valid for a full buffer of capacity {capacity}"
            )));
        }
        let mut buffer = Self::new(capacity)?;
        buffer.storage = slots;
        buffer.head = head;
        buffer.insert_count = insert_count;
        Ok(buffer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn evicts_oldest_first() {
        let mut b = ReplayBuffer::new(2).unwrap();
        for x in ['a', 'b', 'c'] {
            b.push(x);
        }
        assert_eq!(b.iter().copied().collect::<String>(), "bc");
        assert_eq!(b.insert_count(), 3);
    }

    #[test]
    fn size_bounded_over_many_pushes() {
        let mut b = ReplayBuffer::new(37).unwrap();
        for i in 0..10_000 {
            b.push(i);
            assert!(b.len() <= 37);
        }
        assert_eq!(b.insert_count(), 10_000);
        let tail: Vec<_> = b.iter().copied().collect();
        assert_eq!(tail, (10_000 - 37..10_000).collect::<Vec<_>>());
    }

    #[test]
    fn single_item_sampled_repeatedly() {
        let mut b = ReplayBuffer::new(4).unwrap();
        b.push(7);
        let batch = b.sample(1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(batch, vec![&7]);
        b.push(8);
        assert!(matches!(b.sample(3, &mut ChaCha8Rng::seed_from_u64(0)), Err(DqnError::Underfull { have: 2, need: 3 })));
        let mut one = ReplayBuffer::new(4).unwrap();
        one.push(9);
        assert!(one.sample(1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().iter().all(|&&x| x == 9));
    }

    #[test]
    fn parts_round_trip_preserves_sampling() {
        let mut b = ReplayBuffer::new(5).unwrap();
        (0..8).for_each(|i| b.push(i));
        let c = ReplayBuffer::from_parts(5, b.slots().to_vec(), b.head(), b.insert_count()).unwrap();
        assert!(c.iter().eq(b.iter()));
        let x = b.sample(5, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let y = c.sample(5, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn seeded_sampling_repeats() {
        let mut b = ReplayBuffer::new(100).unwrap();
        (0..100).for_each(|i| b.push(i));
        let x = b.sample(32, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let y = b.sample(32, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn sampling_is_uniform() {
        let mut b = ReplayBuffer::new(10).unwrap();
        (0..10).for_each(|i| b.push(i));
        let mut counts = [0u32; 10];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 100_000;
        for _ in 0..draws / 10 {
            for &&x in &b.sample(10, &mut rng).unwrap() {
                counts[x] += 1;
            }
        }
        let p = 0.1;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((f64::from(c) - mean).abs() < 3.0 * sigma, "{counts:?}");
        }
    }
}
