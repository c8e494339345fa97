//! Transformers: what turns a node's content into a child's content.
//!
//! A transformer applies an operation pair: the forward prompt, then the
//! inverse prompt on the forward result. It always returns text. When a step
//! cannot produce usable content the child holds the sentinel `"None"`, and a
//! sentinel parent yields a sentinel child without further work.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gateway::{extract_content, ChatModel};
use crate::tree::{OperationPair, TaskKind};
use crate::SENTINEL;

pub trait Transformer: Send + Sync {
    /// Forward then inverse transformation of `content` under `pair`.
    fn apply_pair(&self, content: &str, pair: &OperationPair) -> String;
}

/// Deterministic offline stand-ins for the model under evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockChannel {
    Identity,
    DropLastWords(usize),
    ReverseWords,
    SeededWordDropout { rate: f64, seed: u64 },
}

impl MockChannel {
    pub fn apply(&self, content: &str, pair: &OperationPair) -> String {
        match self {
            MockChannel::Identity => content.to_string(),
            MockChannel::DropLastWords(j) => {
                let words: Vec<&str> = content.split_whitespace().collect();
                words[..words.len().saturating_sub(*j)].join(" ")
            }
            MockChannel::ReverseWords => {
                let mut words: Vec<&str> = content.split_whitespace().collect();
                words.reverse();
                words.join(" ")
            }
            MockChannel::SeededWordDropout { rate, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(*seed, &pair.label, content));
                content
                    .split_whitespace()
                    .filter(|_| rng.gen::<f64>() >= *rate)
                    .collect::<Vec<_>>()
                    .join(" ")
            }
        }
    }
}

fn mix(seed: u64, label: &str, content: &str) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for b in label.bytes().chain([0xff]).chain(content.bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl fmt::Display for MockChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MockChannel::Identity => f.write_str("identity"),
            MockChannel::DropLastWords(j) => write!(f, "drop-last-words:{j}"),
            MockChannel::ReverseWords => f.write_str("reverse-words"),
            MockChannel::SeededWordDropout { rate, seed } => write!(f, "dropout:{rate}:{seed}"),
        }
    }
}

impl FromStr for MockChannel {
    type Err = String;

    /// `identity`, `drop-last-words[:J]`, `reverse-words`, `dropout:RATE[:SEED]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(':');
        let name = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        let bad = |what: &str| format!("invalid mock channel {s:?}: {what}");
        match (name, args.as_slice()) {
            ("identity", []) => Ok(MockChannel::Identity),
            ("reverse-words", []) => Ok(MockChannel::ReverseWords),
            ("drop-last-words", []) => Ok(MockChannel::DropLastWords(1)),
            ("drop-last-words", [j]) => j
                .parse()
                .map(MockChannel::DropLastWords)
                .map_err(|_| bad("word count must be a non-negative integer")),
            ("dropout", [rate, rest @ ..]) if rest.len() <= 1 => {
                let rate: f64 = rate.parse().map_err(|_| bad("rate must be a number"))?;
                if !(0.0..=1.0).contains(&rate) {
                    return Err(bad("rate must lie in [0, 1]"));
                }
                let seed = match rest {
                    [] => 42,
                    [seed] => seed.parse().map_err(|_| bad("seed must be an integer"))?,
                    _ => unreachable!(),
                };
                Ok(MockChannel::SeededWordDropout { rate, seed })
            }
            _ => Err(bad("unknown channel")),
        }
    }
}

/// Applies a mock channel, optionally a different one per pair label.
#[derive(Debug, Clone)]
pub struct MockTransformer {
    default: MockChannel,
    by_label: HashMap<String, MockChannel>,
}

impl MockTransformer {
    pub fn uniform(channel: MockChannel) -> Self {
        MockTransformer {
            default: channel,
            by_label: HashMap::new(),
        }
    }

    pub fn with_pair_channel(mut self, label: impl Into<String>, channel: MockChannel) -> Self {
        self.by_label.insert(label.into(), channel);
        self
    }
}

impl Transformer for MockTransformer {
    fn apply_pair(&self, content: &str, pair: &OperationPair) -> String {
        if content == SENTINEL {
            return SENTINEL.to_string();
        }
        self.by_label
            .get(&pair.label)
            .unwrap_or(&self.default)
            .apply(content, pair)
    }
}

/// How an operation prompt and node content become chat messages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    /// `{prompt}` is replaced by the operation prompt.
    pub system: String,
    /// `{content}` is replaced by the node content.
    pub user: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            system: "{prompt}".into(),
            user: "{content}".into(),
        }
    }
}

impl PromptTemplate {
    pub fn render(&self, prompt: &str, content: &str) -> (String, String) {
        (
            self.system.replace("{prompt}", prompt),
            self.user.replace("{content}", content),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Step {
    Forward,
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Gateway,
    Extraction,
}

/// Why a transformation produced the sentinel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub pair: String,
    pub step: Step,
    pub kind: FailureKind,
    pub message: String,
}

/// Drives the model under evaluation through a chat backend.
pub struct LlmTransformer {
    chat: Arc<dyn ChatModel>,
    task_kind: TaskKind,
    template: PromptTemplate,
    calls: std::sync::atomic::AtomicUsize,
    diagnostics: Mutex<Vec<Diagnostic>>,
}

impl LlmTransformer {
    pub fn new(chat: Arc<dyn ChatModel>, task_kind: TaskKind) -> Self {
        LlmTransformer {
            chat,
            task_kind,
            template: PromptTemplate::default(),
            calls: Default::default(),
            diagnostics: Mutex::new(Vec::new()),
        }
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = template;
        self
    }

    /// Number of `apply_pair` invocations that reached the chat backend.
    pub fn invocations(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::SeqCst)
    }

    pub fn take_diagnostics(&self) -> Vec<Diagnostic> {
        std::mem::take(&mut *self.diagnostics.lock().unwrap_or_else(|e| e.into_inner()))
    }

    fn step(&self, pair: &OperationPair, step: Step, prompt: &str, content: &str) -> Option<String> {
        let (system, user) = self.template.render(prompt, content);
        let fail = |kind, message: String| {
            log::warn!("pair {:?} {step:?} step failed: {message}", pair.label);
            self.diagnostics
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .push(Diagnostic {
                    pair: pair.label.clone(),
                    step,
                    kind,
                    message,
                });
            None
        };
        match self.chat.chat(&system, &user) {
            Err(e) => fail(FailureKind::Gateway, e.to_string()),
            Ok(raw) => match extract_content(&raw, self.task_kind) {
                Ok(text) => Some(text),
                Err(e) => fail(FailureKind::Extraction, e.to_string()),
            },
        }
    }
}

impl Transformer for LlmTransformer {
    fn apply_pair(&self, content: &str, pair: &OperationPair) -> String {
        if content == SENTINEL {
            return SENTINEL.to_string();
        }
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        self.step(pair, Step::Forward, &pair.forward_prompt, content)
            .and_then(|mid| self.step(pair, Step::Inverse, &pair.inverse_prompt, &mid))
            .unwrap_or_else(|| SENTINEL.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::GatewayError;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn pair() -> OperationPair {
        OperationPair::new("en→fr→en", "Translate to French.", "Translate to English.")
    }

    #[test]
    fn mock_channels() {
        let p = pair();
        assert_eq!(MockChannel::Identity.apply("a b c", &p), "a b c");
        assert_eq!(MockChannel::DropLastWords(1).apply("a b c", &p), "a b");
        assert_eq!(MockChannel::DropLastWords(5).apply("a b c", &p), "");
        assert_eq!(MockChannel::ReverseWords.apply("a b c", &p), "c b a");
        let dropout = MockChannel::SeededWordDropout { rate: 0.5, seed: 7 };
        let text = "w1 w2 w3 w4 w5 w6 w7 w8 w9 w10 w11 w12";
        let once = dropout.apply(text, &p);
        assert_eq!(once, dropout.apply(text, &p));
        assert!(once.split_whitespace().count() < 12);
        assert_eq!(
            MockChannel::SeededWordDropout { rate: 0.0, seed: 1 }.apply(text, &p),
            text
        );
    }

    #[test]
    fn channel_parsing() {
        assert_eq!("identity".parse::<MockChannel>(), Ok(MockChannel::Identity));
        assert_eq!("drop-last-words:3".parse::<MockChannel>(), Ok(MockChannel::DropLastWords(3)));
        assert_eq!("drop-last-words".parse::<MockChannel>(), Ok(MockChannel::DropLastWords(1)));
        assert_eq!(
            "dropout:0.25:9".parse::<MockChannel>(),
            Ok(MockChannel::SeededWordDropout { rate: 0.25, seed: 9 })
        );
        assert!("dropout:2".parse::<MockChannel>().is_err());
        assert!("shuffle".parse::<MockChannel>().is_err());
        for c in [
            MockChannel::Identity,
            MockChannel::ReverseWords,
            MockChannel::DropLastWords(2),
            MockChannel::SeededWordDropout { rate: 0.5, seed: 3 },
        ] {
            assert_eq!(c.to_string().parse::<MockChannel>(), Ok(c));
        }
    }

    proptest! {
        #[test]
        fn reverse_is_an_involution(words in proptest::collection::vec("[a-z]{1,6}", 0..20)) {
            let x = words.join(" ");
            let p = pair();
            let twice = MockChannel::ReverseWords.apply(&MockChannel::ReverseWords.apply(&x, &p), &p);
            prop_assert_eq!(twice, x);
        }

        #[test]
        fn mock_channels_are_deterministic(text in "[a-z ]{0,60}", seed in any::<u64>(), rate in 0.0f64..1.0) {
            let p = pair();
            for c in [MockChannel::Identity, MockChannel::DropLastWords(2), MockChannel::ReverseWords,
                      MockChannel::SeededWordDropout { rate, seed }] {
                prop_assert_eq!(c.apply(&text, &p), c.apply(&text, &p));
            }
        }
    }

    /// Replies with a fixed answer per call index and counts calls.
    struct ScriptedChat {
        replies: Vec<Result<String, ()>>,
        calls: AtomicUsize,
    }

    impl ChatModel for ScriptedChat {
        fn chat(&self, _system: &str, user: &str) -> Result<String, GatewayError> {
            let i = self.calls.fetch_add(1, Ordering::SeqCst);
            match self.replies.get(i) {
                Some(Ok(r)) => Ok(r.replace("{user}", user)),
                Some(Err(())) => Err(GatewayError::Protocol("scripted failure".into())),
                None => Ok(user.to_string()),
            }
        }
    }

    fn scripted(replies: Vec<Result<String, ()>>) -> Arc<ScriptedChat> {
        Arc::new(ScriptedChat {
            replies,
            calls: AtomicUsize::new(0),
        })
    }

    #[test]
    fn llm_round_trip_uses_two_calls() {
        let chat = scripted(vec![Ok("Le paragraphe.".into()), Ok("The paragraph.".into())]);
        let t = LlmTransformer::new(chat.clone(), TaskKind::Translation);
        assert_eq!(t.apply_pair("The paragraph.", &pair()), "The paragraph.");
        assert_eq!(chat.calls.load(Ordering::SeqCst), 2);
        assert!(t.take_diagnostics().is_empty());
    }

    #[test]
    fn unparseable_code_becomes_sentinel() {
        let chat = scripted(vec![
            Ok("```python\ndef main(a, b):\n    total = 0\n    for _ in range(b):\n        total += a\n    return total\n```".into()),
            Ok("Sorry, I cannot do that.".into()),
        ]);
        let t = LlmTransformer::new(chat.clone(), TaskKind::Programming);
        let out = t.apply_pair("def main(a, b):\n    return a * b", &pair());
        assert_eq!(out, SENTINEL);
        let diags = t.take_diagnostics();
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].step, Step::Inverse);
        assert_eq!(diags[0].kind, FailureKind::Extraction);
    }

    #[test]
    fn gateway_failure_on_forward_skips_inverse() {
        let chat = scripted(vec![Err(())]);
        let t = LlmTransformer::new(chat.clone(), TaskKind::Translation);
        assert_eq!(t.apply_pair("text", &pair()), SENTINEL);
        assert_eq!(chat.calls.load(Ordering::SeqCst), 1);
        assert_eq!(t.take_diagnostics()[0].kind, FailureKind::Gateway);
    }

    #[test]
    fn sentinel_input_never_reaches_gateway() {
        let chat = scripted(vec![]);
        let t = LlmTransformer::new(chat.clone(), TaskKind::Programming);
        assert_eq!(t.apply_pair(SENTINEL, &pair()), SENTINEL);
        assert_eq!(chat.calls.load(Ordering::SeqCst), 0);
        assert_eq!(t.invocations(), 0);
        let m = MockTransformer::uniform(MockChannel::ReverseWords);
        assert_eq!(m.apply_pair(SENTINEL, &pair()), SENTINEL);
    }

    #[test]
    fn template_wraps_prompt_and_content() {
        let tpl = PromptTemplate {
            system: "Operation: {prompt}".into(),
            user: "<<{content}>>".into(),
        };
        assert_eq!(
            tpl.render("Translate.", "hello"),
            ("Operation: Translate.".to_string(), "<<hello>>".to_string())
        );
    }

    #[test]
    fn per_pair_channels() {
        let m = MockTransformer::uniform(MockChannel::Identity)
            .with_pair_channel("rev", MockChannel::ReverseWords);
        let rev = OperationPair::new("rev", "f", "g");
        assert_eq!(m.apply_pair("a b", &rev), "b a");
        assert_eq!(m.apply_pair("a b", &pair()), "a b");
    }
}
