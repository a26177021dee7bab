//! Statement templates, epistemic-marker injection and rendering.
//!
//! A template pattern carries exactly one subject slot `[X]`, exactly one
//! object slot `[Y]` and at most one marker slot `[M]`. Rendering is a single
//! pass over the parsed pattern, so substituted text is never re-scanned for
//! placeholders.

use serde::{Deserialize, Serialize};

use super::ProbeDataError;
use crate::scoring::SpanRole;

pub const SUBJECT_SLOT: &str = "[X]";
pub const OBJECT_SLOT: &str = "[Y]";
pub const MARKER_SLOT: &str = "[M]";

/// Percentages allowed for numerical confidence injection.
pub const NUMERICAL_GRID: [u8; 5] = [0, 25, 50, 75, 100];

/// Default verbal markers: one strengthener and one weakener.
pub const DEFAULT_VERBAL_MARKERS: [&str; 2] = ["certainly", "possibly"];

/// An epistemic expression added to a base template.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Injection {
    None,
    Verbal { marker: String },
    Numerical { percent: u8 },
}

impl Injection {
    /// File-safe identifier, `None` for the uninjected base.
    pub fn id(&self) -> Option<String> {
        match self {
            Injection::None => None,
            Injection::Verbal { marker } => Some(format!(
                "verbal_{}",
                marker
                    .chars()
                    .map(|c| if c.is_alphanumeric() { c } else { '-' })
                    .collect::<String>()
            )),
            Injection::Numerical { percent } => Some(format!("numerical_{percent}")),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Injection::None)
    }
}

/// Which injections to derive from a relation's base templates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionSpec {
    #[serde(default)]
    pub verbal: Vec<String>,
    #[serde(default)]
    pub numerical: Vec<u8>,
}

impl InjectionSpec {
    /// Both default verbal markers and every percentage in the numerical grid.
    pub fn full() -> Self {
        Self {
            verbal: DEFAULT_VERBAL_MARKERS
                .iter()
                .map(|m| m.to_string())
                .collect(),
            numerical: NUMERICAL_GRID.to_vec(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.verbal.is_empty() && self.numerical.is_empty()
    }

    /// Injections in derivation order: verbal markers first, then percentages.
    pub fn injections(&self) -> Vec<Injection> {
        self.verbal
            .iter()
            .map(|m| Injection::Verbal { marker: m.clone() })
            .chain(
                self.numerical
                    .iter()
                    .map(|&percent| Injection::Numerical { percent }),
            )
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Piece<'a> {
    Text(&'a str),
    Subject,
    Object,
    Marker,
}

fn parse(pattern: &str) -> Vec<Piece<'_>> {
    let mut pieces = Vec::new();
    let mut rest = pattern;
    while !rest.is_empty() {
        let next = [SUBJECT_SLOT, OBJECT_SLOT, MARKER_SLOT]
            .iter()
            .filter_map(|slot| rest.find(slot).map(|pos| (pos, *slot)))
            .min_by_key(|(pos, _)| *pos);
        match next {
            Some((pos, slot)) => {
                if pos > 0 {
                    pieces.push(Piece::Text(&rest[..pos]));
                }
                pieces.push(match slot {
                    SUBJECT_SLOT => Piece::Subject,
                    OBJECT_SLOT => Piece::Object,
                    _ => Piece::Marker,
                });
                rest = &rest[pos + slot.len()..];
            }
            None => {
                pieces.push(Piece::Text(rest));
                break;
            }
        }
    }
    pieces
}

fn check_pattern(relation_id: &str, index: usize, pattern: &str) -> Result<(), ProbeDataError> {
    let pieces = parse(pattern);
    let count = |p: Piece<'_>| pieces.iter().filter(|&&q| q == p).count();
    for (slot, piece) in [(SUBJECT_SLOT, Piece::Subject), (OBJECT_SLOT, Piece::Object)] {
        match count(piece) {
            1 => {}
            0 => {
                return Err(ProbeDataError::MissingPlaceholder {
                    relation: relation_id.to_string(),
                    template_index: index,
                    placeholder: slot,
                })
            }
            n => {
                return Err(ProbeDataError::RepeatedPlaceholder {
                    relation: relation_id.to_string(),
                    template_index: index,
                    placeholder: slot,
                    count: n,
                })
            }
        }
    }
    if count(Piece::Marker) > 1 {
        return Err(ProbeDataError::RepeatedPlaceholder {
            relation: relation_id.to_string(),
            template_index: index,
            placeholder: MARKER_SLOT,
            count: count(Piece::Marker),
        });
    }
    Ok(())
}

/// Inserts a marker slot right after the subject when the subject is
/// followed by a space and a word. Returns `None` when no such position
/// exists (e.g. the subject ends the sentence).
fn with_fallback_marker_slot(pattern: &str) -> Option<String> {
    let pos = pattern.find(SUBJECT_SLOT)? + SUBJECT_SLOT.len();
    let after = &pattern[pos..];
    let mut chars = after.chars();
    if chars.next() != Some(' ') || !chars.next().is_some_and(char::is_alphanumeric) {
        return None;
    }
    Some(format!(
        "{} {}{}",
        &pattern[..pos],
        MARKER_SLOT,
        &after[1..]
    ))
}

/// One rendering pattern of a relation, optionally carrying an injection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawVariant")]
pub struct TemplateVariant {
    relation_id: String,
    index: usize,
    pattern: String,
    injection: Injection,
    #[serde(skip_serializing_if = "Option::is_none")]
    parent: Option<usize>,
}

#[derive(Deserialize)]
struct RawVariant {
    relation_id: String,
    index: usize,
    pattern: String,
    injection: Injection,
    #[serde(default)]
    parent: Option<usize>,
}

impl TryFrom<RawVariant> for TemplateVariant {
    type Error = ProbeDataError;

    fn try_from(raw: RawVariant) -> Result<Self, Self::Error> {
        let base = TemplateVariant::base(&raw.relation_id, raw.index, &raw.pattern)?;
        if raw.injection.is_none() {
            if raw.parent.is_some() {
                return Err(ProbeDataError::InvalidVariant(format!(
                    "base template {} of relation {} records a parent",
                    raw.index, raw.relation_id
                )));
            }
            return Ok(base);
        }
        if raw.parent != Some(raw.index) {
            return Err(ProbeDataError::InvalidVariant(format!(
                "injected template {} of relation {} must record parent {}",
                raw.index, raw.relation_id, raw.index
            )));
        }
        base.derive(&raw.injection)
    }
}

impl TemplateVariant {
    /// Validates and builds an uninjected template.
    pub fn base(relation_id: &str, index: usize, pattern: &str) -> Result<Self, ProbeDataError> {
        check_pattern(relation_id, index, pattern)?;
        Ok(Self {
            relation_id: relation_id.to_string(),
            index,
            pattern: pattern.to_string(),
            injection: Injection::None,
            parent: None,
        })
    }

    /// Derives an injected variant from this base template.
    ///
    /// Verbal markers go into the `[M]` slot; patterns without one get the
    /// slot inserted right after the subject, and fail with
    /// [`ProbeDataError::MarkerSlotMissing`] when that position does not exist.
    pub fn derive(&self, injection: &Injection) -> Result<Self, ProbeDataError> {
        if !self.injection.is_none() {
            return Err(ProbeDataError::InvalidVariant(format!(
                "template {} of relation {} is already injected",
                self.index, self.relation_id
            )));
        }
        let pattern = match injection {
            Injection::None => return Ok(self.clone()),
            Injection::Numerical { percent } => {
                if !NUMERICAL_GRID.contains(percent) {
                    return Err(ProbeDataError::OffGridPercent(*percent));
                }
                self.pattern.clone()
            }
            Injection::Verbal { marker } => {
                if marker.trim().is_empty() {
                    return Err(ProbeDataError::InvalidVariant("empty verbal marker".into()));
                }
                if self.pattern.contains(MARKER_SLOT) {
                    self.pattern.clone()
                } else {
                    with_fallback_marker_slot(&self.pattern).ok_or_else(|| {
                        ProbeDataError::MarkerSlotMissing {
                            relation: self.relation_id.clone(),
                            template_index: self.index,
                        }
                    })?
                }
            }
        };
        Ok(Self {
            relation_id: self.relation_id.clone(),
            index: self.index,
            pattern,
            injection: injection.clone(),
            parent: Some(self.index),
        })
    }

    pub fn relation_id(&self) -> &str {
        &self.relation_id
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    pub fn injection(&self) -> &Injection {
        &self.injection
    }

    pub fn parent(&self) -> Option<usize> {
        self.parent
    }

    pub fn render(&self, subject: &str, object: &str) -> String {
        self.render_with_spans(subject, object).text
    }

    /// Renders the statement and labels every character with a span role.
    /// Span offsets count Unicode scalar values, not bytes.
    pub fn render_with_spans(&self, subject: &str, object: &str) -> RenderedText {
        let mut out = SpanBuilder::default();
        if let Injection::Numerical { percent } = &self.injection {
            out.push(
                SpanRole::Injection,
                &format!("I'm {percent}% confident that "),
            );
        }
        let pieces = parse(&self.pattern);
        let mut skip_leading_space = false;
        for (i, piece) in pieces.iter().enumerate() {
            match *piece {
                Piece::Text(mut text) => {
                    if skip_leading_space {
                        text = text.strip_prefix(' ').unwrap_or(text);
                        skip_leading_space = false;
                    }
                    out.push(SpanRole::TemplateText, text);
                }
                Piece::Subject => {
                    skip_leading_space = false;
                    out.push(SpanRole::Subject, subject);
                }
                Piece::Object => {
                    skip_leading_space = false;
                    out.push(SpanRole::Answer, object);
                }
                Piece::Marker => match &self.injection {
                    Injection::Verbal { marker } => {
                        let needs_space = match pieces.get(i + 1) {
                            Some(Piece::Text(t)) => !t.starts_with(char::is_whitespace),
                            Some(_) => true,
                            None => false,
                        };
                        out.push(SpanRole::Injection, marker);
                        if needs_space {
                            out.push(SpanRole::Injection, " ");
                        }
                    }
                    _ => {
                        skip_leading_space = out.text.is_empty() || out.text.ends_with(' ');
                    }
                },
            }
        }
        out.finish()
    }
}

/// Half-open character range of a rendered statement with its role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub role: SpanRole,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedText {
    pub text: String,
    /// Contiguous, non-overlapping spans covering the whole text.
    pub spans: Vec<Span>,
}

#[derive(Default)]
struct SpanBuilder {
    text: String,
    chars: usize,
    spans: Vec<Span>,
}

impl SpanBuilder {
    fn push(&mut self, role: SpanRole, s: &str) {
        if s.is_empty() {
            return;
        }
        let n = s.chars().count();
        match self.spans.last_mut() {
            Some(last) if last.role == role => last.end += n,
            _ => self.spans.push(Span {
                start: self.chars,
                end: self.chars + n,
                role,
            }),
        }
        self.chars += n;
        self.text.push_str(s);
    }

    fn finish(self) -> RenderedText {
        RenderedText {
            text: self.text,
            spans: self.spans,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn died_in() -> TemplateVariant {
        TemplateVariant::base("P20", 0, "[X] [M]died in [Y].").unwrap()
    }

    #[test]
    fn verbal_marker_fills_slot() {
        let v = died_in()
            .derive(&Injection::Verbal {
                marker: "certainly".into(),
            })
            .unwrap();
        assert_eq!(
            v.render("Balach Marri", "Afghanistan"),
            "Balach Marri certainly died in Afghanistan."
        );
        assert_eq!(v.parent(), Some(0));
    }

    #[test]
    fn numerical_prefix() {
        let v = died_in()
            .derive(&Injection::Numerical { percent: 25 })
            .unwrap();
        assert_eq!(
            v.render("Balach Marri", "Afghanistan"),
            "I'm 25% confident that Balach Marri died in Afghanistan."
        );
    }

    #[test]
    fn empty_slot_is_removed() {
        assert_eq!(
            died_in().render("Balach Marri", "Afghanistan"),
            "Balach Marri died in Afghanistan."
        );
        let spaced = TemplateVariant::base("r", 0, "[X] [M] died in [Y].").unwrap();
        assert_eq!(spaced.render("A", "B"), "A died in B.");
        let leading = TemplateVariant::base("r", 0, "[M] [X] died in [Y].").unwrap();
        assert_eq!(leading.render("A", "B"), "A died in B.");
    }

    #[test]
    fn fallback_slot_after_subject() {
        let v = TemplateVariant::base("r", 1, "[X] was born in [Y].")
            .unwrap()
            .derive(&Injection::Verbal {
                marker: "possibly".into(),
            })
            .unwrap();
        assert_eq!(v.pattern(), "[X] [M]was born in [Y].");
        assert_eq!(
            v.render("Ada", "London"),
            "Ada possibly was born in London."
        );
    }

    #[test]
    fn fallback_unavailable() {
        let base = TemplateVariant::base("r", 3, "The capital of [Y] is [X].").unwrap();
        let err = base
            .derive(&Injection::Verbal {
                marker: "certainly".into(),
            })
            .unwrap_err();
        assert!(matches!(
            err,
            ProbeDataError::MarkerSlotMissing {
                template_index: 3,
                ..
            }
        ));
        // numerical injection needs no slot
        assert!(base.derive(&Injection::Numerical { percent: 50 }).is_ok());
    }

    #[test]
    fn placeholder_checks() {
        let err = TemplateVariant::base("P19", 2, "[X] was born.").unwrap_err();
        assert!(matches!(
            err,
            ProbeDataError::MissingPlaceholder {
                template_index: 2,
                placeholder: "[Y]",
                ..
            }
        ));
        assert!(TemplateVariant::base("r", 0, "[X] [X] [Y]").is_err());
        assert!(TemplateVariant::base("r", 0, "[X] [M] [M] [Y]").is_err());
    }

    #[test]
    fn off_grid_percent_rejected() {
        assert!(matches!(
            died_in().derive(&Injection::Numerical { percent: 30 }),
            Err(ProbeDataError::OffGridPercent(30))
        ));
    }

    #[test]
    fn substituted_text_is_not_rescanned() {
        let v = died_in();
        assert_eq!(v.render("[Y]", "[X]"), "[Y] died in [X].");
    }

    #[test]
    fn spans_cover_text() {
        let v = died_in()
            .derive(&Injection::Numerical { percent: 75 })
            .unwrap();
        let r = v.render_with_spans("Zoë", "Zürich");
        let total = r.text.chars().count();
        assert_eq!(r.spans.first().unwrap().start, 0);
        assert_eq!(r.spans.last().unwrap().end, total);
        for pair in r.spans.windows(2) {
            assert_eq!(pair[0].end, pair[1].start);
        }
        let answer = r.spans.iter().find(|s| s.role == SpanRole::Answer).unwrap();
        let answer_text: String = r
            .text
            .chars()
            .skip(answer.start)
            .take(answer.end - answer.start)
            .collect();
        assert_eq!(answer_text, "Zürich");
    }

    #[test]
    fn variant_serde_validates() {
        let v = died_in()
            .derive(&Injection::Verbal {
                marker: "certainly".into(),
            })
            .unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: TemplateVariant = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        let bad = json.replace("\"parent\":0", "\"parent\":3");
        assert!(serde_json::from_str::<TemplateVariant>(&bad).is_err());
    }
}
