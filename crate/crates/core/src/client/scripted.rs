use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{ChatMessage, ChatModel, ChatParams, ClientError};

/// Returns a fixed list of replies in order, then fails.
#[derive(Debug, Default)]
pub struct ScriptedChat {
    responses: Mutex<VecDeque<String>>,
    requests: Mutex<Vec<Vec<ChatMessage>>>,
}

impl ScriptedChat {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(responses: I) -> Self {
        Self {
            responses: Mutex::new(responses.into_iter().map(Into::into).collect()),
            requests: Mutex::new(Vec::new()),
        }
    }

    /// Every message list received so far.
    pub fn requests(&self) -> Vec<Vec<ChatMessage>> {
        self.requests.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.responses.lock().unwrap().len()
    }
}

impl ChatModel for ScriptedChat {
    fn complete(&self, messages: &[ChatMessage], _: &ChatParams) -> Result<String, ClientError> {
        if messages.is_empty() {
            return Err(ClientError::EmptyMessages);
        }
        let mut requests = self.requests.lock().unwrap();
        requests.push(messages.to_vec());
        self.responses
            .lock()
            .unwrap()
            .pop_front()
            .ok_or(ClientError::ScriptExhausted(requests.len()))
    }
}

type Responder = dyn Fn(&[ChatMessage], usize) -> Result<String, ClientError> + Send + Sync;

/// A scripted provider whose reply is computed from the request and the
/// 0-based call number.
pub struct FnChat {
    responder: Box<Responder>,
    calls: AtomicUsize,
    requests: Mutex<Vec<Vec<ChatMessage>>>,
}

impl FnChat {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&[ChatMessage], usize) -> Result<String, ClientError> + Send + Sync + 'static,
    {
        Self {
            responder: Box::new(f),
            calls: AtomicUsize::new(0),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<Vec<ChatMessage>> {
        self.requests.lock().unwrap().clone()
    }
}

impl std::fmt::Debug for FnChat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnChat").field("calls", &self.calls()).finish()
    }
}

impl ChatModel for FnChat {
    fn complete(&self, messages: &[ChatMessage], _: &ChatParams) -> Result<String, ClientError> {
        if messages.is_empty() {
            return Err(ClientError::EmptyMessages);
        }
        self.requests.lock().unwrap().push(messages.to_vec());
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        (self.responder)(messages, n)
    }
}
