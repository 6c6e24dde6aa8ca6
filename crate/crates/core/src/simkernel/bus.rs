//! Classical message bus with pub/sub topics and point-to-point delivery.
//!
//! The bus does not own a queue; it returns envelopes stamped with their
//! delivery time and the caller schedules them.

use std::collections::{BTreeMap, BTreeSet};

use super::{SimError, SimTime};

pub type Address = String;

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope<M> {
    pub from: Address,
    pub to: Address,
    pub topic: Option<String>,
    pub deliver_at: SimTime,
    pub seq: u64,
    pub msg: M,
}

pub struct Bus<M> {
    latency: u64,
    seq: u64,
    members: BTreeSet<Address>,
    subscriptions: BTreeMap<String, Vec<Address>>,
    counts: BTreeMap<String, u64>,
    _m: std::marker::PhantomData<M>,
}

impl<M: Clone> Bus<M> {
    pub fn new(latency: u64) -> Self {
        Self {
            latency,
            seq: 0,
            members: BTreeSet::new(),
            subscriptions: BTreeMap::new(),
            counts: BTreeMap::new(),
            _m: std::marker::PhantomData,
        }
    }

    pub fn latency(&self) -> u64 {
        self.latency
    }

    pub fn register(&mut self, addr: impl Into<Address>) {
        self.members.insert(addr.into());
    }

    pub fn subscribe(&mut self, addr: impl Into<Address>, topic: impl Into<String>) {
        let addr = addr.into();
        self.members.insert(addr.clone());
        let subs = self.subscriptions.entry(topic.into()).or_default();
        if !subs.contains(&addr) {
            subs.push(addr);
        }
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    /// Delivers `msg` to every subscriber of `topic`, including the sender
    /// if it subscribed.
    pub fn publish(&mut self, from: &str, topic: &str, msg: M, at: SimTime) -> Vec<Envelope<M>> {
        *self.counts.entry(topic.to_string()).or_default() += 1;
        let subs = self.subscriptions.get(topic).cloned().unwrap_or_default();
        subs.into_iter()
            .map(|to| Envelope {
                from: from.to_string(),
                to,
                topic: Some(topic.to_string()),
                deliver_at: at + self.latency,
                seq: self.next_seq(),
                msg: msg.clone(),
            })
            .collect()
    }

    pub fn send(&mut self, from: &str, to: &str, kind: &str, msg: M, at: SimTime) -> Result<Envelope<M>, SimError> {
        if !self.members.contains(to) {
            return Err(SimError::UnknownRecipient(to.to_string()));
        }
        *self.counts.entry(kind.to_string()).or_default() += 1;
        Ok(Envelope {
            from: from.to_string(),
            to: to.to_string(),
            topic: None,
            deliver_at: at + self.latency,
            seq: self.next_seq(),
            msg,
        })
    }

    /// Messages sent so far, keyed by topic or message kind.
    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }

    pub fn total_messages(&self) -> u64 {
        self.counts.values().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn publish_reaches_all_subscribers() {
        let mut b: Bus<u32> = Bus::new(2);
        b.subscribe("a", "t");
        b.subscribe("b", "t");
        b.subscribe("c", "other");
        let env = b.publish("a", "t", 7, SimTime(3));
        let to: Vec<_> = env.iter().map(|e| e.to.as_str()).collect();
        assert_eq!(to, ["a", "b"]);
        assert!(env.iter().all(|e| e.deliver_at == SimTime(5)));
    }

    #[test]
    fn unknown_recipient() {
        let mut b: Bus<()> = Bus::new(0);
        b.register("x");
        assert!(b.send("x", "x", "k", (), SimTime(0)).is_ok());
        assert_eq!(
            b.send("x", "y", "k", (), SimTime(0)).unwrap_err(),
            SimError::UnknownRecipient("y".into())
        );
        assert_eq!(b.counts()["k"], 1);
    }
}
