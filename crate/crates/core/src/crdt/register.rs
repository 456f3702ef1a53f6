//! Last-writer-wins register with per-variable logical timestamps.

use super::dot::ActorId;

/// Register resolving concurrent writes by (timestamp, writer): the larger
/// timestamp wins, equal timestamps broken by the larger writer id.
/// Timestamps are Lamport-style per variable — each assign writes
/// `current + 1` — so the simulator never touches a wall clock.
///
/// Timestamp 0 is the unwritten bottom state and queries as absent.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LwwRegister {
    pub value: Vec<u8>,
    pub timestamp: u64,
    pub writer: ActorId,
}

impl LwwRegister {
    pub fn new() -> Self {
        LwwRegister::default()
    }

    pub fn assign(&mut self, value: Vec<u8>, writer: ActorId) {
        self.value = value;
        self.timestamp += 1;
        self.writer = writer;
    }

    pub fn get(&self) -> Option<&[u8]> {
        if self.timestamp == 0 {
            None
        } else {
            Some(&self.value)
        }
    }

    fn wins_over(&self, other: &LwwRegister) -> bool {
        (self.timestamp, self.writer) > (other.timestamp, other.writer)
    }

    pub fn merge(&mut self, other: &LwwRegister) {
        if other.wins_over(self) {
            *self = other.clone();
        }
    }

    pub fn canonicalize(&mut self) {
        if self.timestamp == 0 {
            *self = LwwRegister::default();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(n: u64) -> ActorId {
        ActorId(n)
    }

    #[test]
    fn bottom_reads_absent() {
        assert_eq!(LwwRegister::new().get(), None);
    }

    #[test]
    fn larger_timestamp_wins() {
        let mut x = LwwRegister::new();
        x.assign(b"first".to_vec(), a(1));
        x.assign(b"second".to_vec(), a(1)); // ts 2
        let mut y = LwwRegister::new();
        y.assign(b"other".to_vec(), a(2)); // ts 1
        let mut m = y.clone();
        m.merge(&x);
        assert_eq!(m.get(), Some(&b"second"[..]));
        assert_eq!(m.timestamp, 2);
    }

    #[test]
    fn equal_timestamps_break_by_writer() {
        let mut x = LwwRegister::new();
        x.assign(b"from-1".to_vec(), a(1));
        let mut y = LwwRegister::new();
        y.assign(b"from-2".to_vec(), a(2));
        let mut xy = x.clone();
        xy.merge(&y);
        let mut yx = y.clone();
        yx.merge(&x);
        assert_eq!(xy, yx);
        assert_eq!(xy.get(), Some(&b"from-2"[..]), "writer 2 > writer 1");
    }
}
