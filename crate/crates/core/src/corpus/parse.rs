use std::io::BufRead;

use super::{normalize_whitespace, CorpusError, Document, DocumentKind};

/// Prefix of the per-record header line carrying topic, timestamp and id.
const HEADER: &str = "###";

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    /// Half-open accepted timestamp range; records outside it are skipped.
    pub timestamp_range: Option<(i64, i64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseOutcome {
    pub documents: Vec<Document>,
    /// Records dropped because of an unparseable score.
    pub malformed_records: usize,
    /// Records dropped for falling outside the configured time range.
    pub out_of_range_records: usize,
    /// Documents dropped for empty text.
    pub empty_documents: usize,
}

impl ParseOutcome {
    pub fn warnings(&self) -> usize {
        self.malformed_records + self.out_of_range_records + self.empty_documents
    }
}

struct Header {
    topic: String,
    timestamp: i64,
    id: String,
}

fn parse_header(line: &str, line_no: usize) -> Result<Header, CorpusError> {
    let bad = |reason: &str| CorpusError::BadHeader {
        line: line_no,
        reason: reason.to_string(),
    };
    let (mut topic, mut ts, mut id) = (None, None, None);
    for field in line.trim_start_matches(HEADER).split_whitespace() {
        let (key, value) = field.split_once('=').ok_or_else(|| bad(field))?;
        match key {
            "topic" => topic = Some(value.to_string()),
            "ts" => ts = Some(value.parse::<i64>().map_err(|_| bad("ts is not an integer"))?),
            "id" => id = Some(value.to_string()),
            _ => {}
        }
    }
    let timestamp = ts.ok_or(CorpusError::MissingTimestamp { line: line_no })?;
    Ok(Header {
        topic: topic.ok_or_else(|| bad("missing topic"))?,
        timestamp,
        id: id.ok_or_else(|| bad("missing id"))?,
    })
}

/// `Title (6): rest` → `Some(("Title", Ok(6), "rest"))`.
fn split_scored<'a>(line: &'a str, label: &str) -> Option<(Result<i64, ()>, &'a str)> {
    let rest = line.strip_prefix(label)?.trim_start();
    let rest = rest.strip_prefix('(')?;
    let (score, body) = rest.split_once("):")?;
    Some((score.trim().parse::<i64>().map_err(|_| ()), body))
}

enum Section {
    None,
    Title,
    Text,
    Comment,
}

#[derive(Default)]
struct RecordBuilder {
    post_score: Option<i64>,
    title: Vec<String>,
    body: Vec<String>,
    comments: Vec<(i64, Vec<String>)>,
    malformed: bool,
}

/// Parse the flat post/comment format.
///
/// ```text
/// ### topic=askreddit ts=1349049600 id=p1
/// Title (6): What was the biggest scandal in your school?
/// Text:
/// Comment (4): Vampires. This was almost 6 years ago now at my
/// high school, but vampires.
/// ```
///
/// Each post and each comment becomes one [`Document`]; continuation lines
/// are joined with single spaces. A record with a non-numeric score is
/// dropped and counted. Content before any header is a hard error, since
/// there is no timestamp to attach it to.
pub fn parse_flat_corpus<R: BufRead>(
    reader: R,
    opts: &ParseOptions,
) -> Result<ParseOutcome, CorpusError> {
    let mut out = ParseOutcome::default();
    let mut header: Option<Header> = None;
    let mut record = RecordBuilder::default();
    let mut section = Section::None;

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.starts_with(HEADER) {
            if let Some(h) = header.take() {
                finish_record(h, std::mem::take(&mut record), opts, &mut out);
            }
            header = Some(parse_header(trimmed, line_no)?);
            section = Section::None;
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        if header.is_none() {
            return Err(CorpusError::MissingTimestamp { line: line_no });
        }
        if let Some((score, body)) = split_scored(trimmed, "Title") {
            match score {
                Ok(s) => record.post_score = Some(s),
                Err(()) => record.malformed = true,
            }
            record.title.push(body.to_string());
            section = Section::Title;
        } else if let Some(body) = trimmed.strip_prefix("Text:") {
            record.body.push(body.to_string());
            section = Section::Text;
        } else if let Some((score, body)) = split_scored(trimmed, "Comment") {
            match score {
                Ok(s) => record.comments.push((s, vec![body.to_string()])),
                Err(()) => {
                    record.malformed = true;
                    record.comments.push((0, vec![body.to_string()]));
                }
            }
            section = Section::Comment;
        } else {
            let target = match section {
                Section::Title => &mut record.title,
                Section::Text | Section::None => &mut record.body,
                Section::Comment => &mut record.comments.last_mut().expect("comment section").1,
            };
            target.push(trimmed.to_string());
        }
    }
    if let Some(h) = header.take() {
        finish_record(h, record, opts, &mut out);
    }
    Ok(out)
}

fn finish_record(h: Header, rec: RecordBuilder, opts: &ParseOptions, out: &mut ParseOutcome) {
    if rec.malformed {
        log::warn!("record {}: malformed score, skipped", h.id);
        out.malformed_records += 1;
        return;
    }
    if let Some((lo, hi)) = opts.timestamp_range {
        if h.timestamp < lo || h.timestamp >= hi {
            out.out_of_range_records += 1;
            return;
        }
    }
    let Some(post_score) = rec.post_score else {
        log::warn!("record {}: no Title line, skipped", h.id);
        out.malformed_records += 1;
        return;
    };
    let post_text = normalize_whitespace(&format!("{} {}", rec.title.join(" "), rec.body.join(" ")));
    let mut push = |doc: Document| {
        if doc.text.is_empty() {
            out.empty_documents += 1;
        } else {
            out.documents.push(doc);
        }
    };
    push(Document {
        id: h.id.clone(),
        topic: h.topic.clone(),
        timestamp: h.timestamp,
        kind: DocumentKind::Post,
        score: post_score,
        text: post_text,
        parent_id: None,
    });
    for (k, (score, lines)) in rec.comments.into_iter().enumerate() {
        push(Document {
            id: format!("{}#c{}", h.id, k + 1),
            topic: h.topic.clone(),
            timestamp: h.timestamp,
            kind: DocumentKind::Comment,
            score,
            text: normalize_whitespace(&lines.join(" ")),
            parent_id: Some(h.id.clone()),
        });
    }
}

/// Write documents back out in the canonical flat format. Comments follow
/// their post; orphan comments are emitted under a synthetic empty post.
pub fn render_flat_corpus(docs: &[Document]) -> String {
    use std::collections::BTreeMap;
    use std::fmt::Write;

    let mut comments: BTreeMap<&str, Vec<&Document>> = BTreeMap::new();
    for d in docs.iter().filter(|d| d.kind == DocumentKind::Comment) {
        comments.entry(d.post_id()).or_default().push(d);
    }
    let mut s = String::new();
    for post in docs.iter().filter(|d| d.kind == DocumentKind::Post) {
        let _ = writeln!(
            s,
            "{HEADER} topic={} ts={} id={}",
            post.topic, post.timestamp, post.id
        );
        let _ = writeln!(s, "Title ({}): {}", post.score, post.text);
        for c in comments.remove(post.id.as_str()).unwrap_or_default() {
            let _ = writeln!(s, "Comment ({}): {}", c.score, c.text);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> ParseOutcome {
        parse_flat_corpus(s.as_bytes(), &ParseOptions::default()).unwrap()
    }

    #[test]
    fn title_and_comment() {
        let input = "### topic=askreddit ts=1349049600 id=p1\n\
            Title (6): What was the biggest scandal in your school?\n\
            Text:\n\
            Comment (4): Vampires. This was almost 6 years ago now at my\n\
            high school, but vampires. Do a quick...\n";
        let out = parse(input);
        assert_eq!(out.documents.len(), 2);
        assert_eq!(out.documents[0].score, 6);
        assert_eq!(out.documents[0].kind, DocumentKind::Post);
        assert_eq!(out.documents[0].text, "What was the biggest scandal in your school?");
        assert_eq!(out.documents[1].score, 4);
        assert_eq!(
            out.documents[1].text,
            "Vampires. This was almost 6 years ago now at my high school, but vampires. Do a quick..."
        );
        assert_eq!(out.documents[1].parent_id.as_deref(), Some("p1"));
        assert_eq!(out.warnings(), 0);
    }

    #[test]
    fn empty_stream() {
        let out = parse("");
        assert!(out.documents.is_empty());
        assert_eq!(out.warnings(), 0);
    }

    #[test]
    fn non_numeric_comment_score_skips_record() {
        let input = "### topic=a ts=100 id=p1\nTitle (3): hello\nComment (x): bad\n\
                     ### topic=a ts=100 id=p2\nTitle (3): fine\n";
        let out = parse(input);
        assert_eq!(out.malformed_records, 1);
        assert_eq!(out.documents.len(), 1);
        assert_eq!(out.documents[0].id, "p2");
    }

    #[test]
    fn missing_timestamp_is_fatal() {
        let err = parse_flat_corpus("Title (3): orphan\n".as_bytes(), &ParseOptions::default());
        assert!(matches!(err, Err(CorpusError::MissingTimestamp { line: 1 })));
        let err = parse_flat_corpus(
            "### topic=a id=p1\nTitle (3): x\n".as_bytes(),
            &ParseOptions::default(),
        );
        assert!(matches!(err, Err(CorpusError::MissingTimestamp { .. })));
    }

    #[test]
    fn text_block_joins_title() {
        let out = parse("### topic=a ts=5 id=p\nTitle (2): head\nText: body line\nmore body\n");
        assert_eq!(out.documents[0].text, "head body line more body");
    }

    #[test]
    fn time_range_filter() {
        let opts = ParseOptions {
            timestamp_range: Some((0, 50)),
        };
        let out = parse_flat_corpus(
            "### topic=a ts=10 id=p\nTitle (2): in\n### topic=a ts=60 id=q\nTitle (2): out\n".as_bytes(),
            &opts,
        )
        .unwrap();
        assert_eq!(out.documents.len(), 1);
        assert_eq!(out.out_of_range_records, 1);
    }

    #[test]
    fn render_then_parse() {
        let input = "### topic=a ts=10 id=p\nTitle (2): one two\nComment (5): three\n";
        let docs = parse(input).documents;
        assert_eq!(parse(&render_flat_corpus(&docs)).documents, docs);
    }
}
