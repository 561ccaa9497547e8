use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use tokio::sync::broadcast;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Record,
    Config,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Record => "record",
            EventKind::Config => "config",
        }
    }
}

/// One entry of a session's event log. Ids count from 0 per session.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub id: u64,
    pub kind: EventKind,
    pub data: Arc<str>,
}

struct Channel {
    log: Vec<Event>,
    tx: broadcast::Sender<Event>,
}

impl Channel {
    fn new() -> Self {
        Self {
            log: Vec::new(),
            tx: broadcast::channel(1024).0,
        }
    }

    fn push(&mut self, kind: EventKind, data: Arc<str>) {
        let event = Event {
            id: self.log.len() as u64,
            kind,
            data,
        };
        self.log.push(event.clone());
        // No live subscribers is fine; the log keeps the event.
        let _ = self.tx.send(event);
    }
}

#[derive(Default)]
pub struct EventHub {
    channels: Mutex<HashMap<String, Channel>>,
}

impl EventHub {
    pub fn register(&self, session: &str) {
        self.channels
            .lock()
            .unwrap()
            .entry(session.to_string())
            .or_insert_with(Channel::new);
    }

    pub fn publish(&self, session: &str, kind: EventKind, data: String) {
        let mut chans = self.channels.lock().unwrap();
        chans
            .entry(session.to_string())
            .or_insert_with(Channel::new)
            .push(kind, data.into());
    }

    /// Sends to every registered session, in session-id order.
    pub fn publish_all(&self, kind: EventKind, data: String) {
        let data: Arc<str> = data.into();
        let mut chans = self.channels.lock().unwrap();
        let mut ids: Vec<String> = chans.keys().cloned().collect();
        ids.sort();
        for id in ids {
            chans.get_mut(&id).unwrap().push(kind, data.clone());
        }
    }

    /// Backlog of events with id > `after` plus a live receiver, taken
    /// atomically so nothing falls between them.
    pub fn subscribe(
        &self,
        session: &str,
        after: Option<u64>,
    ) -> Option<(Vec<Event>, broadcast::Receiver<Event>)> {
        let chans = self.channels.lock().unwrap();
        let ch = chans.get(session)?;
        let start = after.map_or(0, |a| a.saturating_add(1)) as usize;
        let backlog = ch.log.get(start..).map(<[Event]>::to_vec).unwrap_or_default();
        Some((backlog, ch.tx.subscribe()))
    }

    #[cfg(test)]
    pub fn len(&self, session: &str) -> usize {
        self.channels.lock().unwrap().get(session).map_or(0, |c| c.log.len())
    }
}
