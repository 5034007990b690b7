//! Attention matrices of one decode, as a JSON-lines record.

use serde::{Deserialize, Serialize};

use crate::data::{EncodedExample, Vocabulary, SOS};
use crate::error::Result;
use crate::model::RefNet;
use crate::search::Generation;
use crate::tape::Tape;

/// Rows are output steps, columns are attended positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub weights: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionDump {
    pub id: String,
    /// Preliminary decoder over the passage.
    pub a1: AttentionMatrix,
    /// Refinement decoder over the passage.
    pub a2: AttentionMatrix,
    /// Refinement decoder over the draft; absent when disabled.
    pub a3: Option<AttentionMatrix>,
}

/// Replays the refinement decoder on the generated question to recover its
/// attention weights.
pub fn attention_dump(
    model: &RefNet,
    vocab: &Vocabulary,
    ex: &EncodedExample,
    generation: &Generation,
) -> Result<AttentionDump> {
    let labels = |ids: &[usize]| -> Vec<String> {
        ids.iter().map(|&i| ex.ext_token(vocab, i).to_string()).collect()
    };
    let draft = &generation.draft.tokens;
    let question = &generation.question;
    let mut tape = Tape::new(&model.params);
    let enc = model.encode(&mut tape, ex)?;
    let mut inputs = vec![SOS];
    inputs.extend_from_slice(&question[..question.len().saturating_sub(1)]);
    let steps = model.refinement_forced(&mut tape, &enc, ex, draft, &inputs)?;
    let a2 = steps.iter().map(|s| tape.value(s.attention).to_vec()).collect();
    let a3 = if model.config.use_a3 {
        Some(AttentionMatrix {
            rows: labels(question),
            cols: labels(draft),
            weights: steps
                .iter()
                .filter_map(|s| s.draft_attention.map(|b| tape.value(b).to_vec()))
                .collect(),
        })
    } else {
        None
    };
    Ok(AttentionDump {
        id: ex.id.clone(),
        a1: AttentionMatrix {
            rows: labels(draft),
            cols: ex.passage_tokens.clone(),
            weights: generation.draft.attention.clone(),
        },
        a2: AttentionMatrix {
            rows: labels(question),
            cols: ex.passage_tokens.clone(),
            weights: a2,
        },
        a3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{encode_example, make_toy_corpus, Limits, ToySizes};
    use crate::model::ModelConfig;
    use crate::search::{generate, GenerateOptions};

    #[test]
    fn matrices_match_labels_and_rows_sum_to_one() {
        let c = make_toy_corpus("copy-span", ToySizes::new(2, 0, 0), 9).unwrap();
        let vocab = crate::data::build_vocab(&c.train, 100).unwrap();
        let model = RefNet::new(ModelConfig::tiny(vocab.len()), 1).unwrap();
        let (ex, _) = encode_example(&c.train[0], &vocab, &Limits::default()).unwrap().unwrap();
        let g = generate(&model, &ex, &GenerateOptions { beam: 3, max_len: 5, length_norm: true }).unwrap();
        let d = attention_dump(&model, &vocab, &ex, &g).unwrap();
        for m in [&d.a1, &d.a2, d.a3.as_ref().unwrap()] {
            assert_eq!(m.weights.len(), m.rows.len());
            for row in &m.weights {
                assert_eq!(row.len(), m.cols.len());
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        let line = serde_json::to_string(&d).unwrap();
        let back: AttentionDump = serde_json::from_str(&line).unwrap();
        assert_eq!(back.id, d.id);
    }
}
