//! Background grounding with a latest-wins hand-off.

use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use super::{Grounder, GroundingError, GroundingQuery, GroundingResult};

/// Single-slot mailbox; a new value replaces any unread one.
#[derive(Debug)]
pub struct Mailbox<T> {
    slot: Arc<Mutex<Option<T>>>,
}

impl<T> Clone for Mailbox<T> {
    fn clone(&self) -> Self {
        Self {
            slot: Arc::clone(&self.slot),
        }
    }
}

impl<T> Default for Mailbox<T> {
    fn default() -> Self {
        Self {
            slot: Arc::new(Mutex::new(None)),
        }
    }
}

impl<T> Mailbox<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&self, value: T) {
        *self.slot.lock().unwrap_or_else(|e| e.into_inner()) = Some(value);
    }

    pub fn take(&self) -> Option<T> {
        self.slot.lock().unwrap_or_else(|e| e.into_inner()).take()
    }
}

pub type WorkerOutput = (u64, Result<GroundingResult, GroundingError>);

/// Runs a grounder on its own thread. Results are tagged with the query
/// index and delivered through a [`Mailbox`].
pub struct GroundingWorker {
    requests: Option<Sender<GroundingQuery>>,
    results: Mailbox<WorkerOutput>,
    handle: Option<JoinHandle<()>>,
}

impl GroundingWorker {
    pub fn spawn<G: Grounder + 'static>(mut grounder: G) -> Self {
        let (tx, rx) = mpsc::channel::<GroundingQuery>();
        let results = Mailbox::new();
        let out = results.clone();
        let handle = std::thread::spawn(move || {
            while let Ok(query) = rx.recv() {
                out.put((query.index, grounder.ground(&query)));
            }
        });
        Self {
            requests: Some(tx),
            results,
            handle: Some(handle),
        }
    }

    /// Queues a query; returns false if the worker has stopped.
    pub fn submit(&self, query: GroundingQuery) -> bool {
        self.requests.as_ref().is_some_and(|tx| tx.send(query).is_ok())
    }

    /// Latest finished result, if any arrived since the last poll.
    pub fn poll(&self) -> Option<WorkerOutput> {
        self.results.take()
    }

    /// Stops accepting queries and waits for the thread, returning the
    /// final unread result.
    pub fn finish(mut self) -> Option<WorkerOutput> {
        self.shutdown();
        self.results.take()
    }

    fn shutdown(&mut self) {
        self.requests.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for GroundingWorker {
    fn drop(&mut self) {
        self.shutdown();
    }
}
