//! Scripted chat backend for tests and hermetic pipeline runs.

use std::collections::VecDeque;
use std::sync::Mutex;

use super::{ChatModel, ChatRequest, GatewayError};

/// One scripted outcome.
#[derive(Debug, Clone)]
pub enum MockReply {
    Text(String),
    Transient(String),
    Auth,
}

enum Script {
    /// Replies consumed front to back; exhaustion is an error.
    Sequence(VecDeque<MockReply>),
    /// Replies cycle forever.
    Cycling { replies: Vec<MockReply>, next: usize },
}

/// A deterministic chat model producing scripted replies.
pub struct ScriptedChat {
    script: Mutex<Script>,
}

impl ScriptedChat {
    /// Consume `texts` one per call; error once exhausted.
    pub fn sequence<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::from_replies(
            texts
                .into_iter()
                .map(|t| MockReply::Text(t.into()))
                .collect(),
        )
    }

    /// Cycle through `texts` forever.
    pub fn cycling<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let replies: Vec<MockReply> = texts
            .into_iter()
            .map(|t| MockReply::Text(t.into()))
            .collect();
        ScriptedChat {
            script: Mutex::new(Script::Cycling { replies, next: 0 }),
        }
    }

    pub fn from_replies(replies: Vec<MockReply>) -> Self {
        ScriptedChat {
            script: Mutex::new(Script::Sequence(replies.into())),
        }
    }

    /// Replies left in a sequence script (cycling scripts report 0).
    pub fn remaining(&self) -> usize {
        match &*self.script.lock().expect("mock script lock") {
            Script::Sequence(q) => q.len(),
            Script::Cycling { .. } => 0,
        }
    }
}

impl ChatModel for ScriptedChat {
    fn sample(&self, _req: &ChatRequest) -> Result<String, GatewayError> {
        let mut script = self.script.lock().expect("mock script lock");
        let reply = match &mut *script {
            Script::Sequence(queue) => queue
                .pop_front()
                .ok_or_else(|| GatewayError::Permanent("mock script exhausted".to_string()))?,
            Script::Cycling { replies, next } => {
                if replies.is_empty() {
                    return Err(GatewayError::Permanent("mock script empty".to_string()));
                }
                let reply = replies[*next % replies.len()].clone();
                *next += 1;
                reply
            }
        };
        match reply {
            MockReply::Text(text) => Ok(text),
            MockReply::Transient(message) => Err(GatewayError::Transient(message)),
            MockReply::Auth => Err(GatewayError::Auth(401)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_exhaustion_errors() {
        let mock = ScriptedChat::sequence(["only"]);
        let req = ChatRequest::new("p", vec![]);
        assert_eq!(mock.sample(&req).unwrap(), "only");
        assert!(matches!(
            mock.sample(&req),
            Err(GatewayError::Permanent(_))
        ));
    }

    #[test]
    fn cycling_wraps_around() {
        let mock = ScriptedChat::cycling(["a", "b"]);
        let req = ChatRequest::new("p", vec![]);
        let texts: Vec<String> = (0..5).map(|_| mock.sample(&req).unwrap()).collect();
        assert_eq!(texts, vec!["a", "b", "a", "b", "a"]);
    }
}
