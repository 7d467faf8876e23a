/// Work-conserving FIFO transmitter of fixed capacity.
///
/// Arrivals must be offered in non-decreasing time order, which the event
/// loop guarantees. The queue itself is implicit: a packet departs at
/// `max(arrival, previous departure) + size / capacity`.
#[derive(Debug, Clone, PartialEq)]
pub struct FifoLink {
    capacity: f64,
    last_departure: f64,
    served: u64,
}

impl FifoLink {
    pub fn new(capacity: f64) -> Self {
        FifoLink {
            capacity,
            last_departure: 0.0,
            served: 0,
        }
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn served(&self) -> u64 {
        self.served
    }

    /// Departure time of a packet of `size` bits arriving at `arrival`.
    pub fn serve(&mut self, arrival: f64, size: f64) -> f64 {
        let departure = arrival.max(self.last_departure) + size / self.capacity;
        self.last_departure = departure;
        self.served += 1;
        departure
    }

    /// True if a packet arriving at `t` would wait.
    pub fn busy_at(&self, t: f64) -> bool {
        self.last_departure > t
    }
}

/// Queueing delays (time waiting before transmission starts) of a
/// schedule of `(arrival, size)` packets served FIFO on one link.
pub fn fifo_link_service(schedule: &[(f64, f64)], capacity: f64) -> Vec<f64> {
    let mut link = FifoLink::new(capacity);
    schedule
        .iter()
        .map(|&(arrival, size)| {
            let departure = link.serve(arrival, size);
            departure - size / capacity - arrival
        })
        .collect()
}
