//! Generates visual-instruction-tuning examples (detailed descriptions and
//! 3-turn conversations) from figure captions via the chat client, and
//! renders them into masked chat-format training records.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatClient, ChatRequest, ClientError, RetryPolicy};
use crate::tokenizer::{TokenizerModel, END_OF_TURN, START_OF_TURN};

pub const DEFAULT_MAX_LEN: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VitKind {
    Description,
    Conversation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TurnRole {
    User,
    Model,
}

impl TurnRole {
    fn tag(self) -> &'static str {
        match self {
            TurnRole::User => "user",
            TurnRole::Model => "model",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: TurnRole,
    pub text: String,
}

/// One generated training example. Descriptions hold one user/model pair;
/// conversations hold exactly three. Generation uses only the caption
/// text, never the image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VitExample {
    pub example_id: String,
    pub kind: VitKind,
    pub image_ref: String,
    pub turns: Vec<Turn>,
    pub source_caption: String,
}

/// Prompt templates with a `{caption}` placeholder. The templates in use
/// are recorded in the manifest so runs are auditable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub description: String,
    pub conversation: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            description: "The following is the caption of a figure from an additive \
manufacturing journal article:\n\n{caption}\n\nWrite a detailed, self-contained description \
of what the figure shows, as if describing the image itself to someone who cannot see it. \
Do not mention the caption."
                .to_string(),
            conversation: "The following is the caption of a figure from an additive \
manufacturing journal article:\n\n{caption}\n\nWrite exactly 3 question and answer pairs \
about the image the caption describes. Format each pair on two lines, the question on a \
line starting with `Q:` and the answer on a line starting with `A:`. Output nothing else."
                .to_string(),
        }
    }
}

#[derive(Debug, Error)]
pub enum VitError {
    #[error("generator returned only whitespace")]
    EmptyGeneration,
    #[error("could not parse 3 question/answer pairs after {attempts} attempts")]
    UnparseableGeneration { attempts: u32 },
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("target span of {target_len} tokens exceeds max_len {max_len}")]
    TargetTruncated { target_len: usize, max_len: usize },
}

/// Settings for one generation call.
pub struct GenContext<'a> {
    pub client: &'a ChatClient,
    pub endpoint: &'a str,
    pub model: &'a str,
    pub retry: &'a RetryPolicy,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl GenContext<'_> {
    fn request(&self, prompt: String) -> ChatRequest {
        let mut request = ChatRequest::new(self.endpoint, self.model).user_text(prompt);
        request.temperature = self.temperature;
        request.max_tokens = self.max_tokens;
        request
    }
}

/// One call with the description template; the reply becomes the single
/// model turn.
pub fn gen_description(
    example_id: &str,
    image_ref: &str,
    caption: &str,
    ctx: &GenContext,
    templates: &PromptTemplates,
) -> Result<VitExample, VitError> {
    assert!(!caption.trim().is_empty(), "caption must be non-empty");
    let prompt = templates.description.replace("{caption}", caption);
    let response = ctx.client.complete(&ctx.request(prompt.clone()), ctx.retry)?;
    if response.text.trim().is_empty() {
        return Err(VitError::EmptyGeneration);
    }
    Ok(VitExample {
        example_id: example_id.to_string(),
        kind: VitKind::Description,
        image_ref: image_ref.to_string(),
        turns: vec![
            Turn {
                role: TurnRole::User,
                text: prompt,
            },
            Turn {
                role: TurnRole::Model,
                text: response.text.trim().to_string(),
            },
        ],
        source_caption: caption.to_string(),
    })
}

/// Parses `Q:`/`A:` tagged lines into pairs.
pub fn parse_qa_pairs(reply: &str) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    let mut question: Option<String> = None;
    for line in reply.lines() {
        let t = line.trim();
        if let Some(q) = t.strip_prefix("Q:") {
            question = Some(q.trim().to_string());
        } else if let Some(a) = t.strip_prefix("A:") {
            if let Some(q) = question.take() {
                if !q.is_empty() && !a.trim().is_empty() {
                    pairs.push((q, a.trim().to_string()));
                }
            }
        }
    }
    pairs
}

/// Prompts for exactly 3 Q/A pairs, retrying generation (up to 3 attempts)
/// when the parse yields a different count.
pub fn gen_conversation(
    example_id: &str,
    image_ref: &str,
    caption: &str,
    ctx: &GenContext,
    templates: &PromptTemplates,
) -> Result<VitExample, VitError> {
    assert!(!caption.trim().is_empty(), "caption must be non-empty");
    let prompt = templates.conversation.replace("{caption}", caption);
    const MAX_GEN_ATTEMPTS: u32 = 3;
    for attempt in 1..=MAX_GEN_ATTEMPTS {
        let response = ctx.client.complete(&ctx.request(prompt.clone()), ctx.retry)?;
        let pairs = parse_qa_pairs(&response.text);
        if pairs.len() != 3 {
            if attempt == MAX_GEN_ATTEMPTS {
                return Err(VitError::UnparseableGeneration {
                    attempts: MAX_GEN_ATTEMPTS,
                });
            }
            continue;
        }
        let turns = pairs
            .into_iter()
            .flat_map(|(q, a)| {
                [
                    Turn {
                        role: TurnRole::User,
                        text: q,
                    },
                    Turn {
                        role: TurnRole::Model,
                        text: a,
                    },
                ]
            })
            .collect();
        return Ok(VitExample {
            example_id: example_id.to_string(),
            kind: VitKind::Conversation,
            image_ref: image_ref.to_string(),
            turns,
            source_caption: caption.to_string(),
        });
    }
    unreachable!("loop returns on success or final attempt")
}

/// A chat-rendered training record: token ids plus a loss mask that is
/// true only on the designated target span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedRecord {
    pub token_ids: Vec<u32>,
    pub loss_mask: Vec<bool>,
    pub max_len: usize,
}

fn render_turn(turn: &Turn) -> String {
    format!(
        "{START_OF_TURN}{}\n{}{END_OF_TURN}\n",
        turn.role.tag(),
        turn.text
    )
}

/// Serializes the turns in chat format and masks the loss onto the final
/// model turn only (for conversations: the answer to the third question;
/// earlier pairs are context). Context is truncated from its start when
/// the record exceeds `max_len`; the target span is never truncated.
pub fn render_chat(
    example: &VitExample,
    model: &TokenizerModel,
    max_len: usize,
) -> Result<RenderedRecord, VitError> {
    let target_index = example
        .turns
        .iter()
        .rposition(|t| t.role == TurnRole::Model)
        .expect("examples contain a model turn");

    let mut context_tokens: Vec<u32> = Vec::new();
    for turn in &example.turns[..target_index] {
        context_tokens.extend(model.encode(&render_turn(turn)));
    }
    let target_tokens = model.encode(&render_turn(&example.turns[target_index]));

    if target_tokens.len() > max_len {
        return Err(VitError::TargetTruncated {
            target_len: target_tokens.len(),
            max_len,
        });
    }
    let budget = max_len - target_tokens.len();
    let keep_from = context_tokens.len().saturating_sub(budget);
    let kept_context = &context_tokens[keep_from..];

    let mut token_ids = Vec::with_capacity(kept_context.len() + target_tokens.len());
    token_ids.extend_from_slice(kept_context);
    let mut loss_mask = vec![false; kept_context.len()];
    token_ids.extend_from_slice(&target_tokens);
    loss_mask.extend(std::iter::repeat(true).take(target_tokens.len()));

    Ok(RenderedRecord {
        token_ids,
        loss_mask,
        max_len,
    })
}

/// One line of `vit.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VitRecord {
    pub example_id: String,
    pub kind: VitKind,
    pub image_path: String,
    pub turns: Vec<Turn>,
    pub token_ids: Vec<u32>,
    pub loss_mask: Vec<bool>,
}

impl VitRecord {
    pub fn from_example(
        example: &VitExample,
        rendered: &RenderedRecord,
        image_path: String,
    ) -> Self {
        VitRecord {
            example_id: example.example_id.clone(),
            kind: example.kind,
            image_path,
            turns: example.turns.clone(),
            token_ids: rendered.token_ids.clone(),
            loss_mask: rendered.loss_mask.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{ServerBehavior, StubServer};
    use crate::tokenizer::train_subword;
    use std::time::Duration;

    fn tokenizer() -> TokenizerModel {
        TokenizerModel::with_default_specials(train_subword(vec![("melt", 3), ("pool", 3)], 4))
    }

    fn ctx<'a>(client: &'a ChatClient, endpoint: &'a str, retry: &'a RetryPolicy) -> GenContext<'a> {
        GenContext {
            client,
            endpoint,
            model: "gen",
            retry,
            temperature: 0.7,
            max_tokens: 512,
        }
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 2,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(2),
            jitter: false,
        }
    }

    fn description_example(reply: &str) -> VitExample {
        VitExample {
            example_id: "e1".into(),
            kind: VitKind::Description,
            image_ref: "im1".into(),
            turns: vec![
                Turn {
                    role: TurnRole::User,
                    text: "describe the image".into(),
                },
                Turn {
                    role: TurnRole::Model,
                    text: reply.into(),
                },
            ],
            source_caption: "Fig. 1.".into(),
        }
    }

    fn conversation_example() -> VitExample {
        let turns = (1..=3)
            .flat_map(|i| {
                [
                    Turn {
                        role: TurnRole::User,
                        text: format!("question {i}"),
                    },
                    Turn {
                        role: TurnRole::Model,
                        text: format!("answer {i}"),
                    },
                ]
            })
            .collect();
        VitExample {
            example_id: "e2".into(),
            kind: VitKind::Conversation,
            image_ref: "im2".into(),
            turns,
            source_caption: "Fig. 2.".into(),
        }
    }

    #[test]
    fn description_has_one_pair() {
        let server = StubServer::start(ServerBehavior::fixed("An SEM image of spatter."));
        let client = ChatClient::new();
        let retry = fast_retry();
        let endpoint = server.endpoint();
        let example = gen_description(
            "e1",
            "im1",
            "Fig. 2. SEM of LPBF spatter.",
            &ctx(&client, &endpoint, &retry),
            &PromptTemplates::default(),
        )
        .unwrap();
        assert_eq!(example.kind, VitKind::Description);
        assert_eq!(example.turns.len(), 2);
        assert_eq!(example.turns[1].text, "An SEM image of spatter.");
        assert!(example.turns[0].text.contains("SEM of LPBF spatter"));
    }

    #[test]
    fn blank_generation_is_an_error() {
        let server = StubServer::start(ServerBehavior::fixed("   \n "));
        let client = ChatClient::new();
        let retry = fast_retry();
        let endpoint = server.endpoint();
        let err = gen_description(
            "e1",
            "im1",
            "caption",
            &ctx(&client, &endpoint, &retry),
            &PromptTemplates::default(),
        )
        .unwrap_err();
        assert!(matches!(err, VitError::EmptyGeneration));
    }

    #[test]
    fn conversation_parses_three_pairs() {
        let reply = "Q: What process?\nA: LPBF.\nQ: What defect?\nA: Spatter.\nQ: Why?\nA: Gas flow.";
        let server = StubServer::start(ServerBehavior::fixed(reply));
        let client = ChatClient::new();
        let retry = fast_retry();
        let endpoint = server.endpoint();
        let example = gen_conversation(
            "e2",
            "im2",
            "caption",
            &ctx(&client, &endpoint, &retry),
            &PromptTemplates::default(),
        )
        .unwrap();
        assert_eq!(example.turns.len(), 6);
        let questions = example
            .turns
            .iter()
            .filter(|t| t.role == TurnRole::User)
            .count();
        assert_eq!(questions, 3);
    }

    #[test]
    fn retries_then_gives_up_on_bad_pair_count() {
        let server = StubServer::start(ServerBehavior::fixed("Q: only one?\nA: yes."));
        let client = ChatClient::new();
        let retry = fast_retry();
        let endpoint = server.endpoint();
        let err = gen_conversation(
            "e2",
            "im2",
            "caption",
            &ctx(&client, &endpoint, &retry),
            &PromptTemplates::default(),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            VitError::UnparseableGeneration { attempts: 3 }
        ));
        assert_eq!(server.requests_received(), 3);
    }

    #[test]
    fn description_mask_covers_exactly_the_model_turn() {
        let model = tokenizer();
        let example = description_example("melt pool");
        let rendered = render_chat(&example, &model, DEFAULT_MAX_LEN).unwrap();
        assert_eq!(rendered.token_ids.len(), rendered.loss_mask.len());
        let masked: usize = rendered.loss_mask.iter().filter(|&&m| m).count();
        assert!(masked > 0);
        let target_tokens = model.encode(&render_turn(&example.turns[1]));
        assert_eq!(masked, target_tokens.len());
        // Mask is one contiguous suffix.
        let first_true = rendered.loss_mask.iter().position(|&m| m).unwrap();
        assert!(rendered.loss_mask[first_true..].iter().all(|&m| m));
        assert!(!rendered.loss_mask[..first_true].iter().any(|&m| m));
    }

    #[test]
    fn conversation_mask_covers_only_third_answer() {
        let model = tokenizer();
        let example = conversation_example();
        let rendered = render_chat(&example, &model, DEFAULT_MAX_LEN).unwrap();
        let target_tokens = model.encode(&render_turn(&example.turns[5]));
        let masked: usize = rendered.loss_mask.iter().filter(|&&m| m).count();
        assert_eq!(masked, target_tokens.len());
        // The masked region is exactly the record's suffix holding turn 6.
        let suffix = &rendered.token_ids[rendered.token_ids.len() - target_tokens.len()..];
        assert_eq!(suffix, &target_tokens[..]);
    }

    #[test]
    fn serialized_turns_carry_turn_delimiters() {
        let example = conversation_example();
        for turn in &example.turns {
            let s = render_turn(turn);
            assert!(s.starts_with(START_OF_TURN));
            assert!(s.contains(END_OF_TURN));
        }
    }

    #[test]
    fn context_truncates_from_the_front_and_target_survives() {
        let model = tokenizer();
        let mut example = conversation_example();
        example.turns[0].text = "melt pool ".repeat(400);
        let rendered = render_chat(&example, &model, 64).unwrap();
        assert_eq!(rendered.token_ids.len(), 64);
        let target_tokens = model.encode(&render_turn(&example.turns[5]));
        let suffix = &rendered.token_ids[rendered.token_ids.len() - target_tokens.len()..];
        assert_eq!(suffix, &target_tokens[..]);
    }

    #[test]
    fn oversized_target_is_an_error() {
        let model = tokenizer();
        let example = description_example(&"melt pool ".repeat(400));
        let err = render_chat(&example, &model, 32).unwrap_err();
        assert!(matches!(err, VitError::TargetTruncated { max_len: 32, .. }));
    }

    #[test]
    fn rendering_is_deterministic() {
        let model = tokenizer();
        let example = conversation_example();
        let a = render_chat(&example, &model, DEFAULT_MAX_LEN).unwrap();
        let b = render_chat(&example, &model, DEFAULT_MAX_LEN).unwrap();
        assert_eq!(a, b);
    }
}
