use std::sync::{Condvar, Mutex};

/// Counting semaphore that admits waiters strictly in arrival order.
#[derive(Debug)]
pub struct FifoSemaphore {
    state: Mutex<State>,
    cv: Condvar,
}

#[derive(Debug)]
struct State {
    available: usize,
    next_ticket: u64,
    now_serving: u64,
}

impl FifoSemaphore {
    pub fn new(permits: usize) -> Self {
        assert!(permits > 0, "semaphore needs at least one permit");
        Self { state: Mutex::new(State { available: permits, next_ticket: 0, now_serving: 0 }), cv: Condvar::new() }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut st = self.state.lock().expect("semaphore poisoned");
        let ticket = st.next_ticket;
        st.next_ticket += 1;
        while st.now_serving != ticket || st.available == 0 {
            st = self.cv.wait(st).expect("semaphore poisoned");
        }
        st.available -= 1;
        st.now_serving += 1;
        self.cv.notify_all();
        Permit { sem: self }
    }

    fn release(&self) {
        let mut st = self.state.lock().expect("semaphore poisoned");
        st.available += 1;
        self.cv.notify_all();
    }
}

pub struct Permit<'a> {
    sem: &'a FifoSemaphore,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        self.sem.release();
    }
}
