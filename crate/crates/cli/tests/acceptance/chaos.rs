//! A seeded backend that varies every decision it is asked for, plus a
//! recorder of what each call saw.

use std::sync::{Arc, Mutex};

use roundtable_core::backend::parse::{extract_prediction, parse_addressees, parse_intent};
use roundtable_core::backend::{count_tokens, AgentReply, Backend, BackendError, TokenScheme, TurnKind, TurnRequest};
use roundtable_core::tasks::{LabelSet, Scenario, Segment, TaskInstance};

/// Independent whitespace token count: the number of maximal non-whitespace runs.
pub fn whitespace_oracle(text: &str) -> u64 {
    let mut count = 0;
    let mut in_word = false;
    for c in text.chars() {
        let ws = c.is_whitespace();
        if !ws && !in_word {
            count += 1;
        }
        in_word = !ws;
    }
    count
}

/// FNV-1a over the parts, finished with a splitmix64 step.
pub fn mix(seed: u64, agent: &str, round: u32, salt: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for b in agent.bytes().chain(round.to_le_bytes()).chain(salt.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// The round-unique text every discussion turn starts with.
pub fn marker(agent: &str, round: u32) -> String {
    format!("MARK-{agent}-r{round};")
}

pub fn plain_task(n_agents: usize, n_labels: usize) -> TaskInstance {
    let labels: Vec<&str> = ["A", "B", "C"][..n_labels].to_vec();
    TaskInstance {
        id: "chaos".into(),
        scenario: Scenario::Ses,
        question: "Which label?".into(),
        label_set: LabelSet::new(labels.iter().copied()),
        gold_label: labels[0].into(),
        segments: (1..=n_agents)
            .map(|i| Segment { name: format!("s{i}"), text: format!("segment {i}"), relevance: None })
            .collect(),
    }
}

pub struct Chaos {
    pub seed: u64,
}

impl Chaos {
    fn text(&self, req: &TurnRequest<'_>) -> String {
        let labels: Vec<&str> = req.label_set.iter().collect();
        let h = mix(self.seed, req.agent_id, req.round, req.kind as u64);
        match req.kind {
            TurnKind::Discussion => {
                // Drift towards the first label so both consensus and forced votes occur.
                let label = if req.round > 1 && !h.is_multiple_of(3) {
                    labels[0]
                } else {
                    labels[(h >> 8) as usize % labels.len()]
                };
                let mut text = format!("{} my view is {label}.", marker(req.agent_id, req.round));
                if req.addressing {
                    let others: Vec<&String> = req.discussion_agents.iter().filter(|a| *a != req.agent_id).collect();
                    if h.is_multiple_of(4) || others.is_empty() {
                        text.push_str("\nTO: all");
                    } else {
                        let mask = (h >> 16) as usize;
                        let mut chosen: Vec<&str> = others
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| mask >> i & 1 == 1)
                            .map(|(_, a)| a.as_str())
                            .collect();
                        if chosen.is_empty() {
                            chosen.push(others[mask % others.len()]);
                        }
                        text.push_str(&format!("\nTO: {}", chosen.join(", ")));
                    }
                }
                text.push_str(&format!("\nPREDICTION: {label}"));
                text
            }
            TurnKind::Intent => {
                let speak = (req.round == 1 && req.agent_id == req.discussion_agents[0]) || h % 5 < 3;
                format!("SPEAK: {}", if speak { "yes" } else { "no" })
            }
            TurnKind::Summary => format!("notes of {}: {}", req.agent_id, req.view.visible_history),
            TurnKind::Plan => {
                let mut agents = req.discussion_agents.to_vec();
                agents.sort_by_key(|a| mix(self.seed, a, req.round, 7));
                agents.truncate(1 + h as usize % agents.len());
                format!("SPEAKERS: {}", agents.join(", "))
            }
            TurnKind::Control if h.is_multiple_of(4) => format!("FINAL:{}", labels[(h >> 8) as usize % labels.len()]),
            TurnKind::Control => "CONTINUE".into(),
            TurnKind::Final => format!("FINAL:{}", labels[0]),
        }
    }
}

impl Backend for Chaos {
    fn respond(&self, req: &TurnRequest<'_>) -> Result<AgentReply, BackendError> {
        let content = self.text(req);
        let count = |t: &str| count_tokens(t, TokenScheme::Whitespace).expect("local scheme");
        let mut reply =
            AgentReply { input_tokens: count(req.prompt), output_tokens: count(&content), ..AgentReply::default() };
        match req.kind {
            TurnKind::Discussion => {
                reply.prediction = extract_prediction(&content, req.label_set);
                if req.addressing {
                    reply.addressees = parse_addressees(&content).flatten();
                }
            }
            TurnKind::Intent => reply.wants_to_speak = parse_intent(&content),
            _ => {}
        }
        reply.content = content;
        Ok(reply)
    }

    fn token_scheme(&self) -> TokenScheme {
        TokenScheme::Whitespace
    }
}

#[derive(Debug, Clone)]
pub struct Call {
    pub agent: String,
    pub kind: TurnKind,
    pub round: u32,
    pub history: String,
    pub prompt_oracle: u64,
    pub reply_oracle: u64,
}

/// Records every call passing through to `inner`.
pub struct Recorder {
    inner: Arc<dyn Backend>,
    calls: Mutex<Vec<Call>>,
}

impl Recorder {
    pub fn new(inner: Arc<dyn Backend>) -> Arc<Self> {
        Arc::new(Self { inner, calls: Mutex::new(Vec::new()) })
    }

    pub fn calls(&self) -> Vec<Call> {
        self.calls.lock().unwrap().clone()
    }
}

impl Backend for Recorder {
    fn respond(&self, req: &TurnRequest<'_>) -> Result<AgentReply, BackendError> {
        let reply = self.inner.respond(req)?;
        self.calls.lock().unwrap().push(Call {
            agent: req.agent_id.to_string(),
            kind: req.kind,
            round: req.round,
            history: req.view.visible_history.clone(),
            prompt_oracle: whitespace_oracle(req.prompt),
            reply_oracle: whitespace_oracle(&reply.content),
        });
        Ok(reply)
    }

    fn token_scheme(&self) -> TokenScheme {
        self.inner.token_scheme()
    }
}
