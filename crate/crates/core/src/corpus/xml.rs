use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use log::{debug, warn};
use quick_xml::escape::escape;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{
    join_tokens, split_sentences, tokenize, CorpusError, Document, ElementKind, LinkType, SpatialElement, SpatialLink,
};

struct RawElement {
    id: String,
    kind: ElementKind,
    start: Option<i64>,
    end: Option<i64>,
}

struct RawLink {
    id: String,
    link_type: LinkType,
    slots: [Option<String>; 3],
}

fn link_type_of(tag: &str) -> Option<LinkType> {
    match tag {
        "QSLINK" => Some(LinkType::Qslink),
        "OLINK" => Some(LinkType::Olink),
        "MOVELINK" => Some(LinkType::Movelink),
        _ => None,
    }
}

/// Attribute names holding the (tm, tr, lg) slots for a link tag.
fn slot_attributes(link_type: LinkType) -> [&'static str; 3] {
    match link_type {
        LinkType::Movelink => ["mover", "trigger", "goal"],
        _ => ["trajector", "trigger", "landmark"],
    }
}

fn xml_error(reader: &Reader<&[u8]>, message: impl ToString) -> CorpusError {
    CorpusError::Xml {
        offset: reader.error_position(),
        message: message.to_string(),
    }
}

fn attributes(reader: &Reader<&[u8]>, e: &BytesStart) -> Result<HashMap<String, String>, CorpusError> {
    let mut out = HashMap::new();
    for attr in e.attributes() {
        let attr = attr.map_err(|err| CorpusError::Xml {
            offset: reader.buffer_position(),
            message: err.to_string(),
        })?;
        let key = String::from_utf8_lossy(attr.key.as_ref()).into_owned();
        let value = attr
            .unescape_value()
            .map_err(|err| CorpusError::Xml {
                offset: reader.buffer_position(),
                message: err.to_string(),
            })?
            .into_owned();
        out.insert(key, value);
    }
    Ok(out)
}

/// Parse one SpaceEval-style standoff document: the raw text lives in a
/// `TEXT` element, spatial elements carry character `start`/`end` offsets, and
/// `QSLINK`/`OLINK`/`MOVELINK` tags reference elements by id. Other tags are
/// ignored.
pub fn parse_document(doc_id: &str, xml: &[u8]) -> Result<Document, CorpusError> {
    let mut reader = Reader::from_reader(xml);
    reader.config_mut().trim_text(false);

    let mut text = String::new();
    let mut in_text = false;
    let mut depth = 0usize;
    let mut raw_elements = Vec::new();
    let mut raw_links = Vec::new();

    loop {
        let event = reader.read_event().map_err(|e| xml_error(&reader, e))?;
        match event {
            Event::Start(e) => {
                depth += 1;
                if e.name().as_ref() == b"TEXT" {
                    in_text = true;
                } else {
                    collect_tag(&reader, &e, &mut raw_elements, &mut raw_links)?;
                }
            }
            Event::Empty(e) => {
                collect_tag(&reader, &e, &mut raw_elements, &mut raw_links)?;
            }
            Event::End(e) => {
                depth = depth.saturating_sub(1);
                if e.name().as_ref() == b"TEXT" {
                    in_text = false;
                }
            }
            Event::Text(t) if in_text => {
                let s = t.unescape().map_err(|e| xml_error(&reader, e))?;
                text.push_str(&s);
            }
            Event::CData(c) if in_text => {
                let s = std::str::from_utf8(&c).map_err(|e| xml_error(&reader, e))?;
                text.push_str(s);
            }
            Event::Eof => {
                if depth != 0 {
                    return Err(CorpusError::Xml {
                        offset: reader.buffer_position(),
                        message: "unexpected end of input inside an open element".into(),
                    });
                }
                break;
            }
            _ => {}
        }
    }

    build_document(doc_id, text, raw_elements, raw_links)
}

fn collect_tag(
    reader: &Reader<&[u8]>,
    e: &BytesStart,
    elements: &mut Vec<RawElement>,
    links: &mut Vec<RawLink>,
) -> Result<(), CorpusError> {
    let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
    if let Some(kind) = ElementKind::from_tag(&name) {
        let attrs = attributes(reader, e)?;
        let id = attrs.get("id").cloned().ok_or_else(|| CorpusError::Xml {
            offset: reader.buffer_position(),
            message: format!("{name} without id"),
        })?;
        let num = |k: &str| attrs.get(k).and_then(|v| v.trim().parse::<i64>().ok());
        elements.push(RawElement {
            id,
            kind,
            start: num("start"),
            end: num("end"),
        });
    } else if let Some(link_type) = link_type_of(&name) {
        let attrs = attributes(reader, e)?;
        let id = attrs.get("id").cloned().ok_or_else(|| CorpusError::Xml {
            offset: reader.buffer_position(),
            message: format!("{name} without id"),
        })?;
        let slot = |k: &str| attrs.get(k).map(|v| v.trim().to_string()).filter(|v| !v.is_empty());
        let [a, b, c] = slot_attributes(link_type);
        links.push(RawLink {
            id,
            link_type,
            slots: [slot(a), slot(b), slot(c)],
        });
    }
    Ok(())
}

fn build_document(
    doc_id: &str,
    text: String,
    raw_elements: Vec<RawElement>,
    raw_links: Vec<RawLink>,
) -> Result<Document, CorpusError> {
    let mut tokens = tokenize(&text);
    let sentences = split_sentences(&text, &mut tokens);

    let mut declared = HashSet::new();
    let mut dropped = HashSet::new();
    let mut elements = Vec::new();
    for raw in raw_elements {
        if !declared.insert(raw.id.clone()) {
            return Err(CorpusError::Invalid {
                doc_id: doc_id.to_string(),
                message: format!("duplicate element id {}", raw.id),
            });
        }
        let (Some(start), Some(end)) = (raw.start, raw.end) else {
            debug!("{doc_id}: element {} is non-consuming, dropped", raw.id);
            dropped.insert(raw.id);
            continue;
        };
        if start < 0 || end <= start {
            debug!("{doc_id}: element {} is non-consuming, dropped", raw.id);
            dropped.insert(raw.id);
            continue;
        }
        let (start, end) = (start as usize, end as usize);
        let covered: Vec<usize> = tokens
            .iter()
            .filter(|t| t.char_start < end && t.char_end > start)
            .map(|t| t.index)
            .collect();
        let (Some(&first), Some(&last)) = (covered.first(), covered.last()) else {
            warn!("{doc_id}: element {} [{start}, {end}) covers no token, dropped", raw.id);
            dropped.insert(raw.id);
            continue;
        };
        let mut last = last;
        let sid = tokens[first].sentence_id;
        if tokens[last].sentence_id != sid {
            warn!("{doc_id}: element {} crosses a sentence boundary, truncated", raw.id);
            last = sentences[sid].end - 1;
        }
        if tokens[first].char_start != start || tokens[last].char_end != end {
            warn!(
                "{doc_id}: element {} [{start}, {end}) snapped to [{}, {})",
                raw.id, tokens[first].char_start, tokens[last].char_end
            );
        }
        elements.push(SpatialElement {
            id: raw.id,
            kind: raw.kind,
            start: first,
            end: last + 1,
            text: join_tokens(&tokens[first..=last]),
        });
    }

    let mut links = Vec::new();
    for raw in raw_links {
        let mut slots: [Option<String>; 3] = Default::default();
        for (out, id) in slots.iter_mut().zip(raw.slots) {
            let Some(id) = id else { continue };
            if dropped.contains(&id) {
                warn!(
                    "{doc_id}: link {} slot {id} refers to a dropped element, set to null",
                    raw.id
                );
            } else if !declared.contains(&id) {
                return Err(CorpusError::DanglingReference {
                    link_id: raw.id,
                    element_id: id,
                });
            } else {
                *out = Some(id);
            }
        }
        if slots.iter().all(Option::is_none) {
            warn!("{doc_id}: link {} has no filled slot, dropped", raw.id);
            continue;
        }
        let [tm, tr, lg] = slots;
        links.push(SpatialLink {
            id: raw.id,
            link_type: raw.link_type,
            tm,
            tr,
            lg,
        });
    }

    let doc = Document {
        doc_id: doc_id.to_string(),
        text,
        tokens,
        sentences,
        elements,
        links,
    };
    doc.validate()?;
    Ok(doc)
}

/// Serialise a document back to the standoff XML interchange format.
/// Element offsets are written as the character span of their tokens, so
/// re-parsing the output reproduces the document exactly.
pub fn to_xml(doc: &Document) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\" ?>\n<SpaceEvalTaskv1.2>\n<TEXT>");
    if doc.text.contains("]]>") {
        out.push_str(&escape(doc.text.as_str()));
    } else {
        let _ = write!(out, "<![CDATA[{}]]>", doc.text);
    }
    out.push_str("</TEXT>\n<TAGS>\n");
    for e in &doc.elements {
        let span = doc.element_chars(e);
        let _ = writeln!(
            out,
            "<{} id=\"{}\" start=\"{}\" end=\"{}\" text=\"{}\" />",
            e.kind.tag(),
            escape(e.id.as_str()),
            span.start,
            span.end,
            escape(e.text.as_str())
        );
    }
    for l in &doc.links {
        let names = slot_attributes(l.link_type);
        let _ = write!(out, "<{} id=\"{}\"", l.link_type.tag(), escape(l.id.as_str()));
        for (name, slot) in names.iter().zip(l.slots()) {
            let _ = write!(out, " {name}=\"{}\"", escape(slot.unwrap_or("")));
        }
        out.push_str(" />\n");
    }
    out.push_str("</TAGS>\n</SpaceEvalTaskv1.2>\n");
    out
}
