use crate::data::Example;
use crate::error::{Error, Result};

pub const DEFAULT_CLIP: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tag {
    O = 0,
    B = 1,
    I = 2,
}

/// B/I/O tags plus the clipped signed distance of every passage token to the
/// nearest answer token (negative left of the span, 0 inside).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnswerTags {
    pub tags: Vec<Tag>,
    pub distances: Vec<i32>,
}

impl AnswerTags {
    /// Row index into a position table of `2 * clip + 1` rows.
    pub fn position_index(&self, i: usize, clip: usize) -> usize {
        (self.distances[i] + clip as i32) as usize
    }
}

pub fn tag_answer(ex: &Example, clip: usize) -> Result<AnswerTags> {
    let m = ex.passage.len();
    let clip_i = clip as i32;
    let span = match ex.answer_span {
        None => {
            return Ok(AnswerTags {
                tags: vec![Tag::O; m],
                distances: vec![clip_i; m],
            })
        }
        Some(s) => s,
    };
    if span.len == 0 || span.end() > m {
        return Err(Error::data(format!(
            "answer span {}..{} out of bounds for passage of {m} tokens",
            span.start,
            span.end()
        )));
    }
    let mut tags = vec![Tag::O; m];
    let mut distances = vec![0; m];
    for i in 0..m {
        let d = if i < span.start {
            i as i32 - span.start as i32
        } else if i >= span.end() {
            i as i32 - (span.end() as i32 - 1)
        } else {
            tags[i] = if i == span.start { Tag::B } else { Tag::I };
            0
        };
        distances[i] = d.clamp(-clip_i, clip_i);
    }
    Ok(AnswerTags { tags, distances })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Span;

    fn passage(n: usize, span: Option<Span>) -> Example {
        let toks: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        let answer = match span {
            Some(s) => toks[s.start..s.end()].to_vec(),
            None => vec!["x".into()],
        };
        Example::new("t", toks, answer, span, vec!["q".into()]).unwrap()
    }

    #[test]
    fn bio_tags() {
        let t = tag_answer(&passage(4, Some(Span { start: 1, len: 2 })), 10).unwrap();
        assert_eq!(t.tags, vec![Tag::O, Tag::B, Tag::I, Tag::O]);
        assert_eq!(t.distances, vec![-1, 0, 0, 1]);
    }

    #[test]
    fn no_span_is_all_outside_at_clip() {
        let t = tag_answer(&passage(3, None), 10).unwrap();
        assert_eq!(t.tags, vec![Tag::O; 3]);
        assert_eq!(t.distances, vec![10; 3]);
    }

    #[test]
    fn five_left_of_span() {
        let t = tag_answer(&passage(12, Some(Span { start: 7, len: 1 })), 10).unwrap();
        assert_eq!(t.distances[2], -5);
        let t = tag_answer(&passage(30, Some(Span { start: 20, len: 1 })), 10).unwrap();
        assert_eq!(t.distances[0], -10);
        assert_eq!(t.position_index(0, 10), 0);
    }

    #[test]
    fn out_of_bounds_span_is_data_error() {
        let mut ex = passage(4, Some(Span { start: 1, len: 1 }));
        ex.answer_span = Some(Span { start: 3, len: 2 });
        assert!(matches!(tag_answer(&ex, 10), Err(Error::Data(_))));
    }
}
