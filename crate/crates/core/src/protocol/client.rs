//! Per-client state machine.
//!
//! A [`Client`] owns its own [`ClientConfig`] and nothing else: the only view
//! it gets of earlier clients is the measure carried by a forward message.

use serde::{Deserialize, Serialize};

use super::wire::serialize_measure;
use super::{ClientConfig, Direction, Message};
use crate::error::{Error, Result};
use crate::gibbs::{gibbs_posterior, GibbsResult};
use crate::measure::DiscreteMeasure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientState {
    Idle,
    AwaitForward,
    ComputedLocal,
    SentForward,
    AwaitBackward,
    Final,
}

#[derive(Debug, Clone)]
pub struct Client {
    config: ClientConfig,
    lambda: f64,
    chain_len: usize,
    state: ClientState,
    history: Vec<ClientState>,
    reference: Option<DiscreteMeasure>,
    local: Option<GibbsResult>,
    final_measure: Option<DiscreteMeasure>,
}

impl Client {
    pub fn new(config: ClientConfig, lambda: f64, chain_len: usize) -> Self {
        Self {
            config,
            lambda,
            chain_len,
            state: ClientState::Idle,
            history: vec![ClientState::Idle],
            reference: None,
            local: None,
            final_measure: None,
        }
    }

    pub fn id(&self) -> usize {
        self.config.client_id
    }

    pub fn state(&self) -> ClientState {
        self.state
    }

    /// Every state visited so far, starting with `Idle`.
    pub fn history(&self) -> &[ClientState] {
        &self.history
    }

    fn transition(&mut self, next: ClientState) {
        self.state = next;
        self.history.push(next);
    }

    pub fn reference(&self) -> Option<&DiscreteMeasure> {
        self.reference.as_ref()
    }

    pub fn local(&self) -> Option<&GibbsResult> {
        self.local.as_ref()
    }

    pub fn final_measure(&self) -> Option<&DiscreteMeasure> {
        self.final_measure.as_ref()
    }

    fn is_last(&self) -> bool {
        self.id() == self.chain_len
    }

    fn violation(&self, what: &str) -> Error {
        Error::Protocol(format!(
            "client {} cannot {what} in state {:?}",
            self.id(),
            self.state
        ))
    }

    fn message(&self, direction: Direction, to_id: usize, m: &DiscreteMeasure) -> Message {
        let hop = match direction {
            Direction::Forward => self.id(),
            Direction::Backward => self.chain_len - self.id() + 1,
        };
        Message {
            direction,
            from_id: self.id(),
            to_id,
            hop,
            payload: String::from_utf8(serialize_measure(m)).expect("wire format is UTF-8"),
        }
    }

    /// Client 1 starts from the given reference; every other client waits.
    pub fn activate(&mut self, q1: Option<&DiscreteMeasure>) -> Result<Vec<Message>> {
        if self.state != ClientState::Idle {
            return Err(self.violation("activate"));
        }
        match (self.id(), q1) {
            (1, Some(q1)) => self.solve_and_forward(q1.clone()),
            (1, None) => Err(Error::Protocol("client 1 needs the initial reference".into())),
            (_, None) => {
                self.transition(ClientState::AwaitForward);
                Ok(Vec::new())
            }
            (id, Some(_)) => Err(Error::Protocol(format!(
                "client {id} must obtain its reference from its predecessor"
            ))),
        }
    }

    pub fn on_forward(&mut self, reference: DiscreteMeasure) -> Result<Vec<Message>> {
        if self.state != ClientState::AwaitForward {
            return Err(self.violation("accept a forward message"));
        }
        self.solve_and_forward(reference)
    }

    fn solve_and_forward(&mut self, reference: DiscreteMeasure) -> Result<Vec<Message>> {
        let risks = self.config.source.risks(reference.space())?;
        let local = gibbs_posterior(&risks, &reference, self.lambda)?;
        self.transition(ClientState::ComputedLocal);
        let mut out = Vec::new();
        if !self.is_last() {
            out.push(self.message(Direction::Forward, self.id() + 1, &local.measure));
            self.transition(ClientState::SentForward);
            self.transition(ClientState::AwaitBackward);
        }
        self.reference = Some(reference);
        self.local = Some(local);
        Ok(out)
    }

    /// Only the last client may start the backward pass.
    pub fn start_backward(&mut self) -> Result<Vec<Message>> {
        if !self.is_last() || self.state != ClientState::ComputedLocal {
            return Err(self.violation("start the backward pass"));
        }
        let m = self.local.as_ref().expect("computed").measure.clone();
        self.finish(m)
    }

    pub fn on_backward(&mut self, m: DiscreteMeasure) -> Result<Vec<Message>> {
        if self.state != ClientState::AwaitBackward {
            return Err(self.violation("accept a backward message"));
        }
        self.finish(m)
    }

    fn finish(&mut self, m: DiscreteMeasure) -> Result<Vec<Message>> {
        let out = if self.id() > 1 {
            vec![self.message(Direction::Backward, self.id() - 1, &m)]
        } else {
            Vec::new()
        };
        self.final_measure = Some(m);
        self.transition(ClientState::Final);
        Ok(out)
    }
}
