//! Wire formats shared with out-of-process scorers. Changing any frozen
//! line here breaks existing adapters.

use std::io::Cursor;

use calprobe::probe_data::{load_dataset, Injection};
use calprobe::scoring::{
    render_batch, Ingest, LogBase, MockBackend, RenderedStatement, ScoreRecord, ScoringMode,
    SpanRole,
};

const STATEMENT_LINE: &str = r#"{"id":"P20:00#0#numerical_25#0","instance_id":"P20:00","template_index":0,"injection_id":"numerical_25","candidate_index":0,"text":"I'm 25% confident that Balach Marri died in Afghanistan.","spans":[{"start":0,"end":23,"role":"injection"},{"start":23,"end":35,"role":"subject"},{"start":35,"end":44,"role":"template_text"},{"start":44,"end":55,"role":"answer"},{"start":55,"end":56,"role":"template_text"}]}"#;

const RECORD_LINE: &str = r#"{"instance_id":"P1376:00","template_index":0,"injection_id":null,"candidate_index":0,"tokens":[{"token_text":"Paris","logprob":-7.549924353214559,"span_role":"subject"},{"token_text":"is","logprob":-1.9508593129393879,"span_role":"template_text"},{"token_text":"the","logprob":-3.617312270505562,"span_role":"template_text"},{"token_text":"capital","logprob":-1.2223983851006672,"span_role":"template_text"},{"token_text":"of","logprob":-4.708117693800361,"span_role":"template_text"},{"token_text":"France","logprob":-1.575736293749981,"span_role":"answer"},{"token_text":".","logprob":-7.922091883894524,"span_role":"template_text"}],"scorer_id":"mock-1","scoring_mode":"causal_sum"}"#;

fn statements(injections: &[Injection]) -> Vec<RenderedStatement> {
    let ds = load_dataset(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/probe")).unwrap();
    render_batch(&ds, 1, injections).unwrap()
}

#[test]
fn rendered_statement_line_is_frozen() {
    let all = statements(&[Injection::Numerical { percent: 25 }]);
    let s = all
        .iter()
        .find(|s| s.instance_id == "P20:00" && s.injection_id.is_some())
        .unwrap();
    assert_eq!(serde_json::to_string(s).unwrap(), STATEMENT_LINE);
    let back: RenderedStatement = serde_json::from_str(STATEMENT_LINE).unwrap();
    assert_eq!(&back, s);
}

#[test]
fn spans_tile_the_text_in_characters() {
    for s in statements(&[Injection::Verbal {
        marker: "certainly".into(),
    }]) {
        let mut at = 0;
        for span in &s.spans {
            assert_eq!(span.start, at, "{}", s.id);
            at = span.end;
        }
        assert_eq!(at, s.text.chars().count(), "{}", s.id);
    }
}

#[test]
fn score_record_line_is_frozen() {
    let first = &statements(&[])[0];
    let rec = MockBackend::new(1).score(first);
    assert_eq!(serde_json::to_string(&rec).unwrap(), RECORD_LINE);
    let back: ScoreRecord = serde_json::from_str(RECORD_LINE).unwrap();
    assert_eq!(back, rec);
    assert_eq!(back.scoring_mode, ScoringMode::CausalSum);
}

#[test]
fn ingest_handles_each_logprob_encoding() {
    let line = |lp: &str| {
        format!(
            r#"{{"instance_id":"a","template_index":0,"injection_id":null,"candidate_index":0,"tokens":[{{"token_text":"x","logprob":{lp},"span_role":"answer"}}],"scorer_id":"s","scoring_mode":"pseudo_log_likelihood"}}"#
        )
    };
    let input = [
        line("-1.5"),
        line("null"),
        line(r#""-inf""#),
        line(r#""nan""#),
        line(r#""inf""#),
        "not json".into(),
    ]
    .join("\n");
    let got = Ingest::default().read_jsonl(Cursor::new(input)).unwrap();
    let lps: Vec<f64> = got.records.iter().map(|r| r.tokens[0].logprob).collect();
    assert_eq!(lps, [-1.5, -1e4, -1e4]);
    assert_eq!(got.clamped, 2);
    let lines: Vec<usize> = got.rejected.iter().map(|r| r.position).collect();
    assert_eq!(lines, [4, 5, 6]);
    assert_eq!(got.rejected[0].instance_id.as_deref(), Some("a"));

    let base2 = Ingest {
        log_base: LogBase::Two,
        ..Ingest::default()
    };
    let got = base2.read_jsonl(Cursor::new(line("-2"))).unwrap();
    assert_eq!(
        got.records[0].tokens[0].logprob,
        -2.0 * std::f64::consts::LN_2
    );
    assert_eq!(got.records[0].tokens[0].span_role, SpanRole::Answer);
}
