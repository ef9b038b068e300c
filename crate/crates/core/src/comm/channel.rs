use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::grid::{normalize_angle, Pose};
use crate::rng;

use super::{DetectionMessage, Message};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    /// Per-link, per-step budget in feature elements; `None` is unlimited.
    pub budget_elements: Option<f64>,
    pub latency_ms: f64,
    pub pose_sigma_t: f64,
    /// Rotational pose noise in degrees.
    pub pose_sigma_r_deg: f64,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            budget_elements: None,
            latency_ms: 0.0,
            pose_sigma_t: 0.0,
            pose_sigma_r_deg: 0.0,
            seed: 0,
        }
    }
}

impl ChannelConfig {
    /// Steps a message spends in flight: `ceil(latency / dt)`.
    pub fn delay_steps(&self, dt: f64) -> u64 {
        let d = self.latency_ms / (1000.0 * dt);
        // Guard against 400/200 evaluating to 2.0000000000000004.
        let r = d.round();
        if (d - r).abs() < 1e-9 {
            r.max(0.0) as u64
        } else {
            d.ceil().max(0.0) as u64
        }
    }
}

/// What the channel needs to know about a payload.
pub trait Transmit {
    fn sender(&self) -> u32;
    fn bytes(&self) -> u64;
    fn sender_pose_mut(&mut self) -> &mut Pose;
}

impl Transmit for Message {
    fn sender(&self) -> u32 {
        self.sender
    }
    fn bytes(&self) -> u64 {
        self.payload_bytes()
    }
    fn sender_pose_mut(&mut self) -> &mut Pose {
        &mut self.sender_pose
    }
}

impl Transmit for DetectionMessage {
    fn sender(&self) -> u32 {
        self.sender
    }
    fn bytes(&self) -> u64 {
        self.detections.len() as u64 * DetectionMessage::BYTES_PER_DETECTION
    }
    fn sender_pose_mut(&mut self) -> &mut Pose {
        &mut self.sender_pose
    }
}

#[derive(Debug, Clone)]
struct InFlight<M> {
    deliver_step: u64,
    receiver: u32,
    seq: u64,
    msg: M,
}

/// Delay queue with per-delivery pose noise.
#[derive(Debug, Clone)]
pub struct Channel<M> {
    pub config: ChannelConfig,
    queue: Vec<InFlight<M>>,
    next_seq: u64,
    link_bytes: BTreeMap<(u32, u32), u64>,
    pub sent: u64,
    pub delivered: u64,
}

impl<M: Transmit> Channel<M> {
    pub fn new(config: ChannelConfig) -> Self {
        Channel {
            config,
            queue: Vec::new(),
            next_seq: 0,
            link_bytes: BTreeMap::new(),
            sent: 0,
            delivered: 0,
        }
    }

    /// Enqueue for delivery at `now + ceil(latency / dt)`; returns that step.
    pub fn send(&mut self, msg: M, receiver: u32, now_step: u64, dt: f64) -> u64 {
        let deliver_step = now_step + self.config.delay_steps(dt);
        *self.link_bytes.entry((msg.sender(), receiver)).or_default() += msg.bytes();
        self.queue.push(InFlight {
            deliver_step,
            receiver,
            seq: self.next_seq,
            msg,
        });
        self.next_seq += 1;
        self.sent += 1;
        deliver_step
    }

    /// Remove and return `(receiver, message)` pairs due at `now_step`, in
    /// `(sender, receiver, send order)` order, with sender poses perturbed.
    pub fn deliver(&mut self, now_step: u64) -> Vec<(u32, M)> {
        let (mut due, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut self.queue)
            .into_iter()
            .partition(|f| f.deliver_step <= now_step);
        self.queue = rest;
        due.sort_by_key(|f| (f.deliver_step, f.msg.sender(), f.receiver, f.seq));
        let sigma_t = self.config.pose_sigma_t;
        let sigma_r = self.config.pose_sigma_r_deg.to_radians();
        self.delivered += due.len() as u64;
        due.into_iter()
            .map(|mut f| {
                if sigma_t > 0.0 || sigma_r > 0.0 {
                    let mut g = rng::stream(
                        self.config.seed,
                        &[0x706f_7365, f.msg.sender() as u64, f.receiver as u64, now_step, f.seq],
                    );
                    let nx: f64 = g.sample(StandardNormal);
                    let ny: f64 = g.sample(StandardNormal);
                    let nr: f64 = g.sample(StandardNormal);
                    let p = f.msg.sender_pose_mut();
                    p.x += sigma_t * nx;
                    p.y += sigma_t * ny;
                    p.yaw = normalize_angle(p.yaw + sigma_r * nr);
                }
                (f.receiver, f.msg)
            })
            .collect()
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    pub fn link_bytes(&self) -> &BTreeMap<(u32, u32), u64> {
        &self.link_bytes
    }

    pub fn total_bytes(&self) -> u64 {
        self.link_bytes.values().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn msg(sender: u32) -> DetectionMessage {
        DetectionMessage {
            sender,
            send_step: 0,
            sender_pose: Pose::new(1.0, 2.0, 0.5),
            detections: Vec::new(),
        }
    }

    fn cfg(latency_ms: f64) -> ChannelConfig {
        ChannelConfig {
            latency_ms,
            ..ChannelConfig::default()
        }
    }

    #[test]
    fn delay_examples() {
        let mut ch = Channel::new(cfg(0.0));
        assert_eq!(ch.send(msg(1), 0, 5, 0.2), 5);
        let mut ch2 = Channel::<DetectionMessage>::new(cfg(400.0));
        assert_eq!(ch2.send(msg(1), 0, 5, 0.2), 7);
        let mut ch3 = Channel::<DetectionMessage>::new(cfg(500.0));
        assert_eq!(ch3.send(msg(1), 0, 5, 0.2), 8);
        assert!(ch.deliver(4).is_empty());
        assert_eq!(ch.deliver(5).len(), 1);
        assert!(ch.deliver(5).is_empty());
    }

    #[test]
    fn noiseless_delivery_is_bit_identical() {
        let mut ch = Channel::new(cfg(200.0));
        ch.send(msg(3), 0, 0, 0.2);
        let got = ch.deliver(1);
        assert_eq!(got[0].1.sender_pose, Pose::new(1.0, 2.0, 0.5));
    }

    #[test]
    fn pose_noise_replays() {
        let c = ChannelConfig {
            pose_sigma_t: 0.2,
            pose_sigma_r_deg: 0.2,
            seed: 9,
            ..ChannelConfig::default()
        };
        let run = || {
            let mut ch = Channel::new(c);
            ch.send(msg(2), 0, 3, 0.2);
            ch.deliver(3)[0].1.sender_pose
        };
        let a = run();
        assert_eq!(a, run());
        assert_ne!(a, Pose::new(1.0, 2.0, 0.5));
    }

    #[test]
    fn ordering_by_sender_then_receiver() {
        let mut ch = Channel::new(cfg(0.0));
        ch.send(msg(2), 0, 0, 0.2);
        ch.send(msg(1), 3, 0, 0.2);
        ch.send(msg(1), 0, 0, 0.2);
        let order: Vec<(u32, u32)> = ch.deliver(0).iter().map(|(r, m)| (m.sender, *r)).collect();
        assert_eq!(order, vec![(1, 0), (1, 3), (2, 0)]);
    }

    proptest! {
        #[test]
        fn every_message_delivered_once(
            sends in prop::collection::vec((0u32..4, 0u32..4, 0u64..20), 0..40),
            latency in prop_oneof![Just(0.0), Just(200.0), Just(450.0), Just(600.0)],
        ) {
            let mut ch = Channel::new(cfg(latency));
            let mut expected = Vec::new();
            let mut sorted = sends.clone();
            sorted.sort_by_key(|s| s.2);
            for (s, r, step) in &sorted {
                expected.push(ch.send(msg(*s), *r, *step, 0.2));
            }
            let mut seen = 0;
            for step in 0..40 {
                for _ in ch.deliver(step) {
                    seen += 1;
                }
            }
            prop_assert_eq!(seen, sorted.len());
            prop_assert_eq!(ch.in_flight(), 0);
            prop_assert!(expected.iter().zip(&sorted).all(|(d, s)| *d >= s.2));
        }
    }
}
