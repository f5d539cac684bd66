//! Text snapshot of a [`KnowledgeGraph`].
//!
//! Layout (tab-separated within sections, `#`-prefixed section headers):
//!
//! ```text
//! #edgetrust-graph v1
//! #meta add_inverse=<true|false>
//! #entities <N>
//! <id>\t<name>
//! #relations <R>
//! <id>\t<name>
//! #edges <n_forward>
//! <edge_id>\t<subject>\t<relation>\t<object>\t<T|A>\t<provenance or ->
//! #split valid <n>
//! <subject>\t<relation>\t<object>
//! #split test <n>
//! <subject>\t<relation>\t<object>
//! #end
//! ```
//!
//! Only forward edges are stored; inverse copies are rebuilt on load from
//! the `add_inverse` flag, so edge ids and flags round-trip exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, KnowledgeGraph, Split, Triple};

const HEADER: &str = "#edgetrust-graph v1";

pub fn save(kg: &KnowledgeGraph, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write(kg, &mut w).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<KnowledgeGraph> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read(BufReader::new(file))
}

pub fn write<W: Write>(kg: &KnowledgeGraph, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "{HEADER}")?;
    writeln!(w, "#meta add_inverse={}", kg.add_inverse())?;
    writeln!(w, "#entities {}", kg.num_entities())?;
    for id in 0..kg.num_entities() {
        writeln!(w, "{id}\t{}", kg.vocab().entity_name(id).unwrap())?;
    }
    writeln!(w, "#relations {}", kg.num_relations())?;
    for id in 0..kg.num_relations() {
        writeln!(w, "{id}\t{}", kg.vocab().relation_name(id).unwrap())?;
    }
    writeln!(w, "#edges {}", kg.num_forward_edges())?;
    for rec in kg.forward_edges() {
        let flag = if rec.adjacency_only { 'A' } else { 'T' };
        let prov = rec.provenance.as_deref().unwrap_or("-");
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            rec.id, rec.triple.subject, rec.triple.relation, rec.triple.object, flag, prov
        )?;
    }
    for split in [Split::Valid, Split::Test] {
        let triples = kg.split(split);
        writeln!(w, "#split {} {}", split.name(), triples.len())?;
        for t in triples {
            writeln!(w, "{}\t{}\t{}", t.subject, t.relation, t.object)?;
        }
    }
    writeln!(w, "#end")
}

struct Lines<R: BufRead> {
    reader: R,
    line_no: usize,
    buf: String,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<Option<&str>> {
        self.buf.clear();
        let n = self
            .reader
            .read_line(&mut self.buf)
            .map_err(|e| format_err(self.line_no + 1, &e.to_string()))?;
        if n == 0 {
            return Ok(None);
        }
        self.line_no += 1;
        Ok(Some(self.buf.trim_end_matches(['\n', '\r'])))
    }

    fn expect(&mut self, what: &str) -> Result<String> {
        let line_no = self.line_no + 1;
        match self.next()? {
            Some(line) => Ok(line.to_string()),
            None => Err(format_err(line_no, &format!("unexpected EOF, expected {what}"))),
        }
    }
}

fn format_err(line: usize, message: &str) -> Error {
    Error::SnapshotFormat {
        line,
        message: message.to_string(),
    }
}

fn parse_count(line: &str, prefix: &str, line_no: usize) -> Result<usize> {
    line.strip_prefix(prefix)
        .and_then(|rest| rest.trim().parse().ok())
        .ok_or_else(|| format_err(line_no, &format!("expected `{prefix}<count>`, got `{line}`")))
}

pub fn read<R: BufRead>(reader: R) -> Result<KnowledgeGraph> {
    let mut lines = Lines {
        reader,
        line_no: 0,
        buf: String::new(),
    };

    let header = lines.expect("header")?;
    if header != HEADER {
        return Err(format_err(1, &format!("bad header `{header}`")));
    }
    let meta = lines.expect("#meta")?;
    let add_inverse = match meta.as_str() {
        "#meta add_inverse=true" => true,
        "#meta add_inverse=false" => false,
        other => return Err(format_err(2, &format!("bad meta line `{other}`"))),
    };

    let mut builder = GraphBuilder::new();

    let n_entities = parse_count(&lines.expect("#entities")?, "#entities ", lines.line_no)?;
    let mut names = Vec::with_capacity(n_entities);
    for i in 0..n_entities {
        let line = lines.expect("entity row")?;
        let line_no = lines.line_no;
        let (id, name) = line
            .split_once('\t')
            .ok_or_else(|| format_err(line_no, "expected `<id>\\t<name>`"))?;
        if id.parse::<usize>().ok() != Some(i) {
            return Err(format_err(line_no, &format!("entity ids must be dense, got `{id}`")));
        }
        names.push(name.to_string());
    }
    let n_relations = parse_count(&lines.expect("#relations")?, "#relations ", lines.line_no)?;
    let mut rel_names = Vec::with_capacity(n_relations);
    for i in 0..n_relations {
        let line = lines.expect("relation row")?;
        let line_no = lines.line_no;
        let (id, name) = line
            .split_once('\t')
            .ok_or_else(|| format_err(line_no, "expected `<id>\\t<name>`"))?;
        if id.parse::<usize>().ok() != Some(i) {
            return Err(format_err(line_no, &format!("relation ids must be dense, got `{id}`")));
        }
        rel_names.push(name.to_string());
    }

    // Interning in stored order reproduces the original dense ids.
    {
        let vocab = builder.vocab_mut();
        for name in &names {
            vocab.intern_entity(name);
        }
        for name in &rel_names {
            vocab.intern_relation(name);
        }
    }

    let n_edges = parse_count(&lines.expect("#edges")?, "#edges ", lines.line_no)?;
    for i in 0..n_edges {
        let line = lines.expect("edge row")?;
        let line_no = lines.line_no;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(format_err(line_no, "expected 6 tab-separated edge fields"));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|_| format_err(line_no, "bad edge id"))?;
        if id != i {
            return Err(format_err(line_no, "edge ids must be dense and ordered"));
        }
        let triple = parse_triple(&fields[1..4], n_entities, n_relations, line_no)?;
        let adjacency_only = match fields[4] {
            "T" => false,
            "A" => true,
            other => return Err(format_err(line_no, &format!("bad flag `{other}`"))),
        };
        let provenance = if fields[5] == "-" { None } else { Some(fields[5]) };
        builder.add_train_edge(triple, Split::Train, adjacency_only, provenance);
    }

    for split in [Split::Valid, Split::Test] {
        let head = lines.expect("#split")?;
        let prefix = format!("#split {} ", split.name());
        let count = parse_count(&head, &prefix, lines.line_no)?;
        for _ in 0..count {
            let line = lines.expect("split row")?;
            let line_no = lines.line_no;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(format_err(line_no, "expected 3 tab-separated id fields"));
            }
            let triple = parse_triple(&fields, n_entities, n_relations, line_no)?;
            builder.add_triple(triple, split);
        }
    }
    let end = lines.expect("#end")?;
    if end != "#end" {
        return Err(format_err(lines.line_no, "missing #end marker"));
    }
    Ok(builder.build(add_inverse))
}

fn parse_triple(
    fields: &[&str],
    n_entities: usize,
    n_relations: usize,
    line_no: usize,
) -> Result<Triple> {
    let s: usize = fields[0]
        .parse()
        .map_err(|_| format_err(line_no, "bad subject id"))?;
    let r: usize = fields[1]
        .parse()
        .map_err(|_| format_err(line_no, "bad relation id"))?;
    let o: usize = fields[2]
        .parse()
        .map_err(|_| format_err(line_no, "bad object id"))?;
    if s >= n_entities || o >= n_entities {
        return Err(format_err(line_no, "entity id out of range"));
    }
    if r >= n_relations {
        return Err(format_err(line_no, "relation id out of range"));
    }
    Ok(Triple::new(s, r, o))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;

    fn sample_graph() -> KnowledgeGraph {
        let mut b = GraphBuilder::new();
        b.add_named("A", "r", "B", Split::Train);
        b.add_named("B", "s", "C", Split::Train);
        b.add_named("A", "r", "C", Split::Valid);
        b.add_named("C", "s", "A", Split::Test);
        let t = Triple::new(
            b.vocab().entity_id("B").unwrap(),
            b.vocab().relation_id("s").unwrap(),
            b.vocab().entity_id("A").unwrap(),
        );
        b.add_train_edge(t, Split::Train, true, Some("noise"));
        b.build(true)
    }

    #[test]
    fn round_trip_preserves_everything() {
        let kg = sample_graph();
        let mut buf = Vec::new();
        write(&kg, &mut buf).unwrap();
        let kg2 = read(buf.as_slice()).unwrap();
        assert_eq!(kg2.num_entities(), kg.num_entities());
        assert_eq!(kg2.num_relations(), kg.num_relations());
        assert_eq!(kg2.edges(), kg.edges());
        assert_eq!(kg2.split(Split::Valid), kg.split(Split::Valid));
        assert_eq!(kg2.split(Split::Test), kg.split(Split::Test));
        // Byte-stable: re-serialization is identical.
        let mut buf2 = Vec::new();
        write(&kg2, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read("not a snapshot".as_bytes()).is_err());
        let truncated = "#edgetrust-graph v1\n#meta add_inverse=true\n#entities 1\n";
        assert!(matches!(
            read(truncated.as_bytes()),
            Err(Error::SnapshotFormat { .. })
        ));
    }
}
