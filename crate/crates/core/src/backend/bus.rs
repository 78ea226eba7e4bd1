//! In-process publish/subscribe bus with outbound buffering.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

pub const TOPIC_ASSESSMENT: &str = "klafate/assessment";
pub const TOPIC_STATUS: &str = "klafate/status";
pub const TOPIC_EVENT_PREFIX: &str = "klafate/event/";

/// Upper bound on messages kept while nobody is subscribed.
pub const BUFFER_LIMIT: usize = 1024;

pub fn event_topic(kind: &str) -> String {
    format!("{TOPIC_EVENT_PREFIX}{kind}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub topic: String,
    pub payload: String,
}

#[derive(Debug)]
struct Inner {
    tx: broadcast::Sender<Message>,
    pending: Mutex<VecDeque<Message>>,
}

/// Cheap to clone; all clones share one channel.
#[derive(Debug, Clone)]
pub struct Bus {
    inner: Arc<Inner>,
}

impl Default for Bus {
    fn default() -> Self {
        Self::new(256)
    }
}

impl Bus {
    pub fn new(capacity: usize) -> Self {
        let (tx, _) = broadcast::channel(capacity);
        Self {
            inner: Arc::new(Inner {
                tx,
                pending: Mutex::new(VecDeque::new()),
            }),
        }
    }

    /// Sends to current subscribers, or buffers when there are none.
    pub fn publish(&self, topic: &str, payload: impl Into<String>) {
        let msg = Message {
            topic: topic.to_string(),
            payload: payload.into(),
        };
        if let Err(broadcast::error::SendError(msg)) = self.inner.tx.send(msg) {
            let mut q = self.inner.pending.lock().expect("bus buffer");
            if q.len() == BUFFER_LIMIT {
                q.pop_front();
            }
            q.push_back(msg);
        }
    }

    /// New subscriber; buffered outbound messages are delivered to it first.
    pub fn subscribe(&self) -> broadcast::Receiver<Message> {
        let rx = self.inner.tx.subscribe();
        let drained: Vec<Message> = self.inner.pending.lock().expect("bus buffer").drain(..).collect();
        for m in drained {
            let _ = self.inner.tx.send(m);
        }
        rx
    }

    pub fn buffered(&self) -> usize {
        self.inner.pending.lock().expect("bus buffer").len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn buffers_until_subscribed() {
        let bus = Bus::new(8);
        bus.publish(TOPIC_STATUS, "a");
        bus.publish(TOPIC_STATUS, "b");
        assert_eq!(bus.buffered(), 2);
        let mut rx = bus.subscribe();
        assert_eq!(rx.recv().await.unwrap().payload, "a");
        assert_eq!(rx.recv().await.unwrap().payload, "b");
        bus.publish(&event_topic("ack"), "{}");
        assert_eq!(rx.recv().await.unwrap().topic, "klafate/event/ack");
        assert_eq!(bus.buffered(), 0);
    }
}
