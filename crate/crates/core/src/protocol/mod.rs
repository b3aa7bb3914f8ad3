//! Forward–backward relay of Gibbs measures along a line of clients.
//!
//! Client `k` solves its local problem against the measure received from
//! client `k−1` and forwards its own Gibbs measure to client `k+1`. Once
//! client `K` is done, its measure travels back down the chain so that every
//! client ends with the same final measure. The network is simulated by a
//! single deterministic FIFO queue.

pub mod channel;
pub mod client;
pub mod wire;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub use channel::{apply_channel, ChannelTransform};
pub use client::{Client, ClientState};
pub use wire::{deserialize_measure, serialize_measure};

use crate::error::{Error, Result};
use crate::gibbs::{chain_constant, ChainConstant, GibbsResult};
use crate::measure::{kl_divergence, sup_log_distance, DiscreteMeasure};
use crate::risk::{Dataset, LossSpec, RiskSource};

/// Explicit regularization factor or `"auto"` (scaled by dataset size).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "LambdaWire", try_from = "LambdaWire")]
pub enum LambdaSpec {
    Explicit(f64),
    Auto,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LambdaWire {
    Value(f64),
    Keyword(String),
}

impl From<LambdaSpec> for LambdaWire {
    fn from(l: LambdaSpec) -> Self {
        match l {
            LambdaSpec::Explicit(v) => LambdaWire::Value(v),
            LambdaSpec::Auto => LambdaWire::Keyword("auto".into()),
        }
    }
}

impl TryFrom<LambdaWire> for LambdaSpec {
    type Error = String;

    fn try_from(w: LambdaWire) -> std::result::Result<Self, String> {
        match w {
            LambdaWire::Value(v) => Ok(LambdaSpec::Explicit(v)),
            LambdaWire::Keyword(k) if k == "auto" => Ok(LambdaSpec::Auto),
            LambdaWire::Keyword(k) => Err(format!("lambda must be a number or \"auto\", got {k:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub client_id: usize,
    pub source: RiskSource,
    pub lambda: LambdaSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub clients: Vec<ClientConfig>,
    pub q1: DiscreteMeasure,
    pub lambda0: Option<f64>,
    #[serde(default)]
    pub channel: ChannelTransform,
}

impl ChainConfig {
    pub fn k(&self) -> usize {
        self.clients.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients.is_empty() {
            return Err(Error::config("clients", "at least one client is required"));
        }
        if !self.q1.is_normalized() {
            return Err(Error::config("q1", "reference must be normalized"));
        }
        for (i, c) in self.clients.iter().enumerate() {
            if c.client_id != i + 1 {
                return Err(Error::config(
                    format!("clients[{i}].client_id"),
                    format!("expected {}, found {}", i + 1, c.client_id),
                ));
            }
            if let LambdaSpec::Explicit(l) = c.lambda {
                if !(l > 0.0 && l.is_finite()) {
                    return Err(Error::config(format!("clients[{i}].lambda"), "must be positive"));
                }
            }
            if let RiskSource::Data { dataset, loss } = &c.source {
                if dataset.pattern_dim() != self.q1.space().dim() {
                    return Err(Error::config(
                        format!("clients[{i}].dataset"),
                        format!(
                            "pattern dimension {} does not match model dimension {}",
                            dataset.pattern_dim(),
                            self.q1.space().dim()
                        ),
                    ));
                }
                dataset
                    .validate_for(*loss)
                    .map_err(|e| Error::config(format!("clients[{i}].dataset"), e.to_string()))?;
            }
        }
        if let Some(l0) = self.lambda0 {
            if !(l0 > 0.0 && l0.is_finite()) {
                return Err(Error::config("lambda0", "must be positive"));
            }
        }
        self.channel.validate()
    }

    /// Every client's risks tabulated over the space of `q1`.
    pub fn risk_vectors(&self) -> Result<Vec<Vec<f64>>> {
        self.clients
            .iter()
            .map(|c| c.source.risks(self.q1.space()).map_err(|e| e.at_client(c.client_id)))
            .collect()
    }

    /// Datasets and their shared loss, when every client is data-backed with the same loss.
    pub fn pooling_inputs(&self) -> std::result::Result<(Vec<Dataset>, LossSpec), String> {
        let mut datasets = Vec::with_capacity(self.k());
        let mut common: Option<LossSpec> = None;
        for c in &self.clients {
            let (ds, loss) = c
                .source
                .dataset()
                .ok_or_else(|| format!("client {} has an explicit risk table, no data to pool", c.client_id))?;
            match common {
                None => common = Some(loss),
                Some(l) if l != loss => {
                    return Err(format!(
                        "clients use different losses ({l:?} vs {loss:?}); a common loss is required"
                    ))
                }
                _ => {}
            }
            datasets.push(ds.clone());
        }
        Ok((datasets, common.expect("at least one client")))
    }
}

/// Regularization factors per client; `auto` entries become `λ_0 · n_0 / n_k`.
pub fn assign_lambdas(cfg: &ChainConfig) -> Result<Vec<f64>> {
    let specs: Vec<LambdaSpec> = cfg.clients.iter().map(|c| c.lambda).collect();
    let ns: Vec<Option<usize>> = cfg.clients.iter().map(|c| c.source.n()).collect();
    resolve_lambdas(&specs, &ns, cfg.lambda0)
}

/// Resolves `auto` entries to `λ_0·n_0/n_k`, with `n_0` the total sample count.
pub fn resolve_lambdas(specs: &[LambdaSpec], ns: &[Option<usize>], lambda0: Option<f64>) -> Result<Vec<f64>> {
    if !specs.iter().any(|l| matches!(l, LambdaSpec::Auto)) {
        return Ok(specs
            .iter()
            .map(|l| match l {
                LambdaSpec::Explicit(l) => *l,
                LambdaSpec::Auto => unreachable!(),
            })
            .collect());
    }
    let lambda0 =
        lambda0.ok_or_else(|| Error::config("lambda0", "required when any client uses lambda = \"auto\""))?;
    let mut n0 = 0usize;
    for (i, n) in ns.iter().enumerate() {
        n0 += n.ok_or_else(|| {
            Error::config(
                format!("clients[{i}]"),
                "auto lambda needs every client's sample count; risk tables have none",
            )
        })?;
    }
    Ok(specs
        .iter()
        .zip(ns)
        .map(|(l, n)| match l {
            LambdaSpec::Explicit(l) => *l,
            LambdaSpec::Auto => lambda0 * (n0 as f64 / n.expect("checked above") as f64),
        })
        .collect())
}

/// True when `lambdas` match the dataset-size scaling for `lambda0` within 1e-12 relative.
pub fn follows_size_scaling(cfg: &ChainConfig, lambdas: &[f64]) -> bool {
    let Some(lambda0) = cfg.lambda0 else { return false };
    let Some(ns) = cfg.clients.iter().map(|c| c.source.n()).collect::<Option<Vec<_>>>() else {
        return false;
    };
    let n0: usize = ns.iter().sum();
    ns.iter().zip(lambdas).all(|(&nk, &l)| {
        let expected = lambda0 * (n0 as f64 / nk as f64);
        ((l - expected) / expected).abs() <= 1e-12
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

/// A measure in flight between neighbouring clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub direction: Direction,
    pub from_id: usize,
    pub to_id: usize,
    /// 1-based position of this link within its pass.
    pub hop: usize,
    /// Measure in wire format v1.
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopDistortion {
    pub direction: Direction,
    pub from_id: usize,
    pub to_id: usize,
    /// `D(received ‖ sent)`.
    pub kl_received_to_sent: f64,
    /// `None` when the channel pruned part of the support.
    pub sup_log_diff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub per_client: Vec<GibbsResult>,
    /// The reference each client actually used (after the channel).
    pub references: Vec<DiscreteMeasure>,
    /// Client `K`'s Gibbs measure.
    pub final_measure: DiscreteMeasure,
    /// Final measure as held by each client after the backward pass; empty until then.
    pub client_finals: Vec<DiscreteMeasure>,
    pub messages: Vec<Message>,
    pub chain_constants: Vec<ChainConstant>,
    pub lambdas_used: Vec<f64>,
    pub channel: ChannelTransform,
    pub hop_distortion: Vec<HopDistortion>,
}

impl Transcript {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ser("transcript", e.to_string()))
    }
}

/// Simulation state between the two passes.
#[derive(Debug)]
pub struct ForwardPhase {
    clients: Vec<Client>,
    channel: ChannelTransform,
    transcript: Transcript,
}

impl ForwardPhase {
    /// The transcript so far: local results, references, forward messages.
    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn clients(&self) -> &[Client] {
        &self.clients
    }
}

struct Network<'a> {
    clients: &'a mut [Client],
    channel: ChannelTransform,
    queue: VecDeque<Message>,
    log: &'a mut Vec<Message>,
    distortion: &'a mut Vec<HopDistortion>,
}

impl Network<'_> {
    fn run(&mut self, initial: Vec<Message>) -> Result<()> {
        self.queue.extend(initial);
        while let Some(msg) = self.queue.pop_front() {
            let sent = deserialize_measure(msg.payload.as_bytes()).map_err(|e| e.at_client(msg.to_id))?;
            let received = apply_channel(&self.channel, &sent).map_err(|e| e.at_client(msg.to_id))?;
            let same_support = sent.support().eq(received.support());
            self.distortion.push(HopDistortion {
                direction: msg.direction,
                from_id: msg.from_id,
                to_id: msg.to_id,
                kl_received_to_sent: kl_divergence(&received, &sent)?,
                sup_log_diff: if same_support {
                    Some(sup_log_distance(&received, &sent)?)
                } else {
                    None
                },
            });
            let target = self
                .clients
                .get_mut(msg.to_id.wrapping_sub(1))
                .ok_or_else(|| Error::Protocol(format!("message addressed to unknown client {}", msg.to_id)))?;
            let out = match msg.direction {
                Direction::Forward => target.on_forward(received),
                Direction::Backward => target.on_backward(received),
            }
            .map_err(|e| e.at_client(msg.to_id))?;
            self.log.push(msg);
            self.queue.extend(out);
        }
        Ok(())
    }
}

/// Forward pass: client 1 solves against `Q_1`, each successor against what it receives.
pub fn run_forward(cfg: &ChainConfig, lambdas: &[f64]) -> Result<ForwardPhase> {
    cfg.validate()?;
    if lambdas.len() != cfg.k() {
        return Err(Error::LengthMismatch(format!(
            "{} lambdas for {} clients",
            lambdas.len(),
            cfg.k()
        )));
    }
    let k = cfg.k();
    let mut clients: Vec<Client> = cfg
        .clients
        .iter()
        .zip(lambdas)
        .map(|(c, &l)| Client::new(c.clone(), l, k))
        .collect();

    let mut initial = clients[0].activate(Some(&cfg.q1)).map_err(|e| e.at_client(1))?;
    for c in clients.iter_mut().skip(1) {
        let id = c.id();
        initial.extend(c.activate(None).map_err(|e| e.at_client(id))?);
    }

    let mut messages = Vec::new();
    let mut distortion = Vec::new();
    Network {
        clients: &mut clients,
        channel: cfg.channel,
        queue: VecDeque::new(),
        log: &mut messages,
        distortion: &mut distortion,
    }
    .run(initial)?;

    let mut per_client = Vec::with_capacity(k);
    let mut references = Vec::with_capacity(k);
    for c in &clients {
        let local = c
            .local()
            .ok_or_else(|| Error::Protocol(format!("client {} never computed", c.id())))?;
        per_client.push(local.clone());
        references.push(c.reference().expect("computed clients have a reference").clone());
    }

    let risks = cfg.risk_vectors()?;
    let chain_constants = (2..=k)
        .map(|j| chain_constant(j, &risks, lambdas, &cfg.q1).map_err(|e| e.at_client(j)))
        .collect::<Result<Vec<_>>>()?;

    let final_measure = per_client[k - 1].measure.clone();
    Ok(ForwardPhase {
        clients,
        channel: cfg.channel,
        transcript: Transcript {
            per_client,
            references,
            final_measure,
            client_finals: Vec::new(),
            messages,
            chain_constants,
            lambdas_used: lambdas.to_vec(),
            channel: cfg.channel,
            hop_distortion: distortion,
        },
    })
}

/// Backward pass: client `K` disseminates its measure down to client 1.
pub fn run_backward(phase: ForwardPhase) -> Result<Transcript> {
    let ForwardPhase {
        mut clients,
        channel,
        mut transcript,
    } = phase;
    let k = clients.len();
    let initial = clients[k - 1].start_backward().map_err(|e| e.at_client(k))?;
    Network {
        clients: &mut clients,
        channel,
        queue: VecDeque::new(),
        log: &mut transcript.messages,
        distortion: &mut transcript.hop_distortion,
    }
    .run(initial)?;
    transcript.client_finals = clients
        .iter()
        .map(|c| {
            c.final_measure()
                .cloned()
                .ok_or_else(|| Error::Protocol(format!("client {} never received the final measure", c.id())))
        })
        .collect::<Result<_>>()?;
    Ok(transcript)
}

pub fn run_chain(cfg: &ChainConfig) -> Result<Transcript> {
    let lambdas = assign_lambdas(cfg)?;
    run_backward(run_forward(cfg, &lambdas)?)
}
