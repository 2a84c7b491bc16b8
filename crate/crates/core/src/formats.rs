//! Text artifacts exchanged between pipeline stages.
//!
//! Every file opens with a block of `# key=value` lines (the run header),
//! then a format-specific body. Readers skip all `#` lines. Floats are
//! written with Rust's shortest round-trip formatting, so every reader
//! recovers the exact values that were written.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::adversary::{AdversarialExample, AdversaryRecord, AdversarySet};
use crate::detection::{ClassSignature, DetectionMethod, DetectorStats, Metrics, WeightView};
use crate::error::{Error, Result};
use crate::graph::VertexId;
use crate::persistence::{CurvePoint, DiagramPoint, Dimension, GeneratorTable, PersistenceDiagram};
use crate::tensor::Tensor;

/// Ordered `key=value` pairs written at the top of each artifact.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunHeader {
    pub entries: Vec<(String, String)>,
}

impl RunHeader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.push(key, value);
        self
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    /// Adds `sha256:<name>=<digest>` for a file on disk.
    pub fn push_checksum(&mut self, name: &str, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.push(format!("sha256:{name}"), digest);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        for (k, v) in &self.entries {
            writeln!(w, "# {k}={v}")?;
        }
        Ok(())
    }

    /// Collects the leading `# key=value` lines of `text`.
    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .map_while(|l| l.strip_prefix('#'))
            .filter_map(|l| l.trim().split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self { entries }
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Non-comment, non-blank lines with their 1-based line numbers.
fn body_lines(r: impl BufRead) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push((n + 1, trimmed.to_string()));
    }
    Ok(out)
}

struct LineCtx<'a> {
    path: &'a Path,
    line: usize,
}

impl LineCtx<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn parse<T: std::str::FromStr>(&self, field: &str, what: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        field.parse().map_err(|e| self.err(format!("{what}: {e}")))
    }

    fn fields<'s>(&self, line: &'s str, sep: char, n: usize) -> Result<Vec<&'s str>> {
        let f: Vec<&str> = if sep == ' ' {
            line.split_whitespace().collect()
        } else {
            line.split(sep).collect()
        };
        if f.len() != n {
            return Err(self.err(format!("expected {n} fields, found {}", f.len())));
        }
        Ok(f)
    }
}

fn parse_bool(ctx: &LineCtx, s: &str) -> Result<bool> {
    match s {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        _ => Err(ctx.err(format!("expected 0/1, found '{s}'"))),
    }
}

// ---- persistence diagrams -------------------------------------------------

pub const DIAGRAM_COLUMNS: &str = "dim,birth,death,generator_id";

pub fn write_diagram_csv(
    w: &mut impl Write,
    header: &RunHeader,
    diagram: &PersistenceDiagram,
) -> Result<()> {
    header.write(w)?;
    writeln!(w, "# omega={}", diagram.omega)?;
    writeln!(w, "# min_weight={}", diagram.min_weight)?;
    writeln!(w, "{DIAGRAM_COLUMNS}")?;
    for p in &diagram.points {
        writeln!(
            w,
            "{},{},{},{}",
            p.dimension.index(),
            p.birth,
            p.death,
            p.generator_id
        )?;
    }
    Ok(())
}

pub fn read_diagram_csv(r: impl BufRead, path: &Path) -> Result<PersistenceDiagram> {
    let mut text = String::new();
    let mut r = r;
    r.read_to_string(&mut text)?;
    let header = RunHeader::parse(&text);
    let float = |key: &str| -> Result<f64> {
        header
            .get(key)
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: format!("missing header field {key}"),
            })?
            .parse()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: format!("{key}: {e}"),
            })
    };
    let (omega, min_weight) = (float("omega")?, float("min_weight")?);
    let mut points = Vec::new();
    for (line, l) in body_lines(text.as_bytes())? {
        if l == DIAGRAM_COLUMNS {
            continue;
        }
        let ctx = LineCtx { path, line };
        let f = ctx.fields(&l, ',', 4)?;
        let dimension = match f[0] {
            "0" => Dimension::H0,
            "1" => Dimension::H1,
            other => return Err(ctx.err(format!("dimension must be 0 or 1, found '{other}'"))),
        };
        points.push(DiagramPoint {
            dimension,
            birth: ctx.parse(f[1], "birth")?,
            death: ctx.parse(f[2], "death")?,
            generator_id: ctx.parse(f[3], "generator_id")?,
        });
    }
    Ok(PersistenceDiagram {
        points,
        omega,
        min_weight,
    })
}

/// One block per generator: `generator <id> <birth> <death>`, a `vertices`
/// line, then its edges as `src dst weight`.
pub fn write_generators(
    w: &mut impl Write,
    header: &RunHeader,
    generators: &GeneratorTable,
) -> Result<()> {
    header.write(w)?;
    for id in 0..generators.len() {
        let g = generators.generator(id);
        writeln!(w, "generator {id} {} {}", g.birth, g.death)?;
        write!(w, "vertices")?;
        for v in &g.vertices {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
        for e in &g.edges {
            writeln!(w, "{} {} {}", e.src, e.dst, e.weight)?;
        }
    }
    Ok(())
}

// ---- signatures and statistics ---------------------------------------------

pub fn write_signatures(
    w: &mut impl Write,
    header: &RunHeader,
    signatures: &[ClassSignature],
) -> Result<()> {
    header.write(w)?;
    for sig in signatures {
        writeln!(w, "class {} {}", sig.class, sig.size())?;
        for (v, count) in &sig.vertex_counts {
            writeln!(w, "{} {} {}", v, count, sig.rank[v])?;
        }
    }
    Ok(())
}

pub fn read_signatures(r: impl BufRead, path: &Path) -> Result<Vec<ClassSignature>> {
    let mut out: Vec<ClassSignature> = Vec::new();
    let mut expected = 0usize;
    for (line, l) in body_lines(r)? {
        let ctx = LineCtx { path, line };
        if let Some(rest) = l.strip_prefix("class ") {
            if let Some(prev) = out.last() {
                if prev.size() != expected {
                    return Err(ctx.err(format!(
                        "class {} lists {} of {expected} vertices",
                        prev.class,
                        prev.size()
                    )));
                }
            }
            let f = ctx.fields(rest, ' ', 2)?;
            let class: usize = ctx.parse(f[0], "class")?;
            if class != out.len() {
                return Err(ctx.err(format!("expected class {}, found {class}", out.len())));
            }
            expected = ctx.parse(f[1], "size")?;
            out.push(ClassSignature {
                class,
                vertex_counts: BTreeMap::new(),
                rank: BTreeMap::new(),
            });
            continue;
        }
        let sig = out
            .last_mut()
            .ok_or_else(|| ctx.err("vertex line before any class line"))?;
        let f = ctx.fields(&l, ' ', 3)?;
        let v = VertexId(ctx.parse(f[0], "vertex_id")?);
        sig.vertex_counts.insert(v, ctx.parse(f[1], "count")?);
        sig.rank.insert(v, ctx.parse(f[2], "rank")?);
    }
    if let Some(prev) = out.last() {
        if prev.size() != expected {
            return Err(Error::Corrupt(format!(
                "{}: class {} lists {} of {expected} vertices",
                path.display(),
                prev.class,
                prev.size()
            )));
        }
    }
    Ok(out)
}

pub fn write_stats(w: &mut impl Write, header: &RunHeader, stats: &DetectorStats) -> Result<()> {
    header.write(w)?;
    writeln!(w, "mu_match = {}", stats.mu_match)?;
    writeln!(w, "sigma_match = {}", stats.sigma_match)?;
    writeln!(w, "median_edges = {}", stats.median_edges)?;
    writeln!(w, "percentile_edges = {}", stats.percentile_edges)?;
    writeln!(w, "pi = {}", stats.pi)?;
    writeln!(w, "mu_weight = {}", stats.mu_weight)?;
    writeln!(w, "sigma_weight = {}", stats.sigma_weight)?;
    writeln!(w, "weight_view = {}", stats.weight_view.name())?;
    Ok(())
}

pub fn read_stats(r: impl BufRead, path: &Path) -> Result<DetectorStats> {
    let mut fields = BTreeMap::new();
    for (line, l) in body_lines(r)? {
        let ctx = LineCtx { path, line };
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| ctx.err("expected 'name = value'"))?;
        fields.insert(k.trim().to_string(), (line, v.trim().to_string()));
    }
    let get = |key: &str| -> Result<(LineCtx, &str)> {
        let (line, v) = fields.get(key).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("missing field {key}"),
        })?;
        Ok((LineCtx { path, line: *line }, v.as_str()))
    };
    let num = |key: &str| -> Result<f64> {
        let (ctx, v) = get(key)?;
        ctx.parse(v, key)
    };
    let (_, view) = get("weight_view")?;
    Ok(DetectorStats {
        mu_match: num("mu_match")?,
        sigma_match: num("sigma_match")?,
        median_edges: num("median_edges")?,
        percentile_edges: num("percentile_edges")?,
        pi: num("pi")?,
        mu_weight: num("mu_weight")?,
        sigma_weight: num("sigma_weight")?,
        weight_view: view.parse::<WeightView>()?,
    })
}

// ---- verdicts and metrics --------------------------------------------------

pub const VERDICT_COLUMNS: &str = "input_id,is_adversarial_truth,method,flagged,score";

#[derive(Debug, Clone, PartialEq)]
pub struct VerdictRow {
    pub input_id: String,
    pub is_adversarial: bool,
    pub method: DetectionMethod,
    pub flagged: bool,
    pub score: f64,
}

pub fn write_verdicts(w: &mut impl Write, header: &RunHeader, rows: &[VerdictRow]) -> Result<()> {
    header.write(w)?;
    writeln!(w, "{VERDICT_COLUMNS}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.input_id,
            u8::from(r.is_adversarial),
            r.method,
            u8::from(r.flagged),
            r.score
        )?;
    }
    Ok(())
}

pub fn read_verdicts(r: impl BufRead, path: &Path) -> Result<Vec<VerdictRow>> {
    let mut rows = Vec::new();
    for (line, l) in body_lines(r)? {
        if l == VERDICT_COLUMNS {
            continue;
        }
        let ctx = LineCtx { path, line };
        let f = ctx.fields(&l, ',', 5)?;
        rows.push(VerdictRow {
            input_id: f[0].to_string(),
            is_adversarial: parse_bool(&ctx, f[1])?,
            method: f[2].parse().map_err(|e: Error| ctx.err(e.to_string()))?,
            flagged: parse_bool(&ctx, f[3])?,
            score: ctx.parse(f[4], "score")?,
        });
    }
    Ok(rows)
}

/// Splits verdict rows by method into (clean flags, adversarial flags).
pub fn flags_by_method(rows: &[VerdictRow]) -> BTreeMap<DetectionMethod, (Vec<bool>, Vec<bool>)> {
    let mut out: BTreeMap<DetectionMethod, (Vec<bool>, Vec<bool>)> = BTreeMap::new();
    for r in rows {
        let entry = out.entry(r.method).or_default();
        if r.is_adversarial {
            entry.1.push(r.flagged);
        } else {
            entry.0.push(r.flagged);
        }
    }
    out
}

pub const METRICS_COLUMNS: &str =
    "kappa,lambda,pi,method,accuracy,false_positives,false_negatives,f1";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub kappa: f64,
    pub lambda: f64,
    /// Only meaningful for the edge-count detector.
    pub pi: Option<f64>,
    pub method: DetectionMethod,
    pub metrics: Metrics,
}

pub fn write_metrics(w: &mut impl Write, header: &RunHeader, rows: &[MetricsRow]) -> Result<()> {
    header.write(w)?;
    writeln!(w, "{METRICS_COLUMNS}")?;
    for r in rows {
        let pi = r.pi.map(|p| p.to_string()).unwrap_or_else(|| "-".into());
        writeln!(
            w,
            "{},{},{},{},{:.4},{},{},{:.4}",
            r.kappa,
            r.lambda,
            pi,
            r.method,
            r.metrics.accuracy,
            r.metrics.false_positives,
            r.metrics.false_negatives,
            r.metrics.f1
        )?;
    }
    Ok(())
}

// ---- adversary sets --------------------------------------------------------

pub const ADVERSARY_COLUMNS: &str =
    "source_index,source_label,target,kappa,distortion,predicted,success,rows,cols,pixels";

fn hex_pixels(t: &Tensor) -> String {
    let mut bytes = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    hex::encode(bytes)
}

fn pixels_from_hex(ctx: &LineCtx, s: &str, shape: Vec<usize>) -> Result<Tensor> {
    let bytes = hex::decode(s).map_err(|e| ctx.err(format!("pixels: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(ctx.err("pixel payload is not a whole number of f64 values"));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data).map_err(|e| ctx.err(e.to_string()))
}

/// Successes and failures of one set. Original images are not stored;
/// `sources` supplies them on read.
pub fn write_adversary_set(
    w: &mut impl Write,
    header: &RunHeader,
    set: &AdversarySet,
) -> Result<()> {
    header.write(w)?;
    writeln!(w, "# kappa={}", set.kappa)?;
    for (src, target) in &set.failures {
        writeln!(w, "# failed={src}:{target}")?;
    }
    writeln!(w, "{ADVERSARY_COLUMNS}")?;
    for r in &set.examples {
        let e = &r.example;
        let (rows, cols) = match e.perturbed.shape() {
            [h, w] => (*h, *w),
            s => (1, s.iter().product()),
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.source_index,
            r.source_label,
            e.target,
            e.kappa,
            e.distortion,
            e.predicted_class,
            u8::from(e.success),
            rows,
            cols,
            hex_pixels(&e.perturbed)
        )?;
    }
    Ok(())
}

/// Reads a set written by [`write_adversary_set`]. `original` maps a source
/// index to its clean image.
pub fn read_adversary_set(
    r: impl BufRead,
    path: &Path,
    original: impl Fn(usize) -> Option<Tensor>,
) -> Result<AdversarySet> {
    let mut text = String::new();
    let mut r = r;
    r.read_to_string(&mut text)?;
    let mut kappa = None;
    let mut failures = Vec::new();
    for l in text.lines().map_while(|l| l.strip_prefix('#')) {
        if let Some((k, v)) = l.trim().split_once('=') {
            let bad = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg,
            };
            match k {
                "kappa" => kappa = Some(v.parse::<f64>().map_err(|e| bad(format!("kappa: {e}")))?),
                "failed" => {
                    let (s, t) = v
                        .split_once(':')
                        .ok_or_else(|| bad(format!("bad failure entry '{v}'")))?;
                    failures.push((
                        s.parse().map_err(|e| bad(format!("failure source: {e}")))?,
                        t.parse().map_err(|e| bad(format!("failure target: {e}")))?,
                    ));
                }
                _ => {}
            }
        }
    }
    let kappa = kappa.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: "missing kappa header".into(),
    })?;
    let mut examples = Vec::new();
    for (line, l) in body_lines(text.as_bytes())? {
        if l == ADVERSARY_COLUMNS {
            continue;
        }
        let ctx = LineCtx { path, line };
        let f = ctx.fields(&l, ',', 10)?;
        let source_index: usize = ctx.parse(f[0], "source_index")?;
        let (rows, cols): (usize, usize) = (ctx.parse(f[7], "rows")?, ctx.parse(f[8], "cols")?);
        let perturbed = pixels_from_hex(&ctx, f[9], vec![rows, cols])?;
        let original = original(source_index)
            .ok_or_else(|| ctx.err(format!("unknown source {source_index}")))?;
        examples.push(AdversaryRecord {
            source_index,
            source_label: ctx.parse(f[1], "source_label")?,
            example: AdversarialExample {
                original,
                perturbed,
                target: ctx.parse(f[2], "target")?,
                kappa: ctx.parse(f[3], "kappa")?,
                distortion: ctx.parse(f[4], "distortion")?,
                predicted_class: ctx.parse(f[5], "predicted")?,
                success: parse_bool(&ctx, f[6])?,
            },
        });
    }
    Ok(AdversarySet {
        kappa,
        examples,
        failures,
    })
}

// ---- plot data -------------------------------------------------------------

pub fn write_curve(w: &mut impl Write, header: &RunHeader, curve: &[CurvePoint]) -> Result<()> {
    header.write(w)?;
    writeln!(w, "t,distance")?;
    for p in curve {
        writeln!(w, "{},{}", p.t, p.distance)?;
    }
    Ok(())
}

/// Per-input persistent-subgraph summary, the raw data behind edge-count and
/// average-weight histograms.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgraphSummary {
    pub input_id: String,
    pub is_adversarial: bool,
    pub edge_count: usize,
    pub average_edge_weight: f64,
    pub average_edge_distance: f64,
}

pub fn write_summaries(
    w: &mut impl Write,
    header: &RunHeader,
    rows: &[SubgraphSummary],
) -> Result<()> {
    header.write(w)?;
    writeln!(
        w,
        "input_id,is_adversarial_truth,edge_count,average_edge_weight,average_edge_distance"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.input_id,
            u8::from(r.is_adversarial),
            r.edge_count,
            r.average_edge_weight,
            r.average_edge_distance
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{evaluate, RankMode};

    fn p() -> &'static Path {
        Path::new("mem")
    }

    fn header() -> RunHeader {
        RunHeader::new()
            .with("rho", 0.99)
            .with("lambda", 0.1)
            .with("seed", 7)
    }

    #[test]
    fn header_parses_back() {
        let mut buf = Vec::new();
        header().write(&mut buf).unwrap();
        buf.extend_from_slice(b"body\n# not=header\n");
        let h = RunHeader::parse(std::str::from_utf8(&buf).unwrap());
        assert_eq!(h, header());
        assert_eq!(h.get("lambda"), Some("0.1"));
    }

    #[test]
    fn diagram_round_trip() {
        let d = PersistenceDiagram {
            points: vec![
                DiagramPoint {
                    birth: 3.0,
                    death: 1.0 / 3.0,
                    dimension: Dimension::H0,
                    generator_id: 0,
                },
                DiagramPoint {
                    birth: 0.1 + 0.2,
                    death: 0.3,
                    dimension: Dimension::H1,
                    generator_id: 4,
                },
            ],
            omega: 3.0,
            min_weight: 1.0 / 3.0,
        };
        let mut buf = Vec::new();
        write_diagram_csv(&mut buf, &header(), &d).unwrap();
        assert_eq!(read_diagram_csv(buf.as_slice(), p()).unwrap(), d);
    }

    #[test]
    fn signatures_and_stats_round_trip() {
        let sigs: Vec<ClassSignature> = (0..3)
            .map(|c| {
                let counts = (0..c + 2)
                    .map(|v| (VertexId(v * 7 + c), v % 3 + 1))
                    .collect();
                ClassSignature::from_counts(c, counts, RankMode::Dense)
            })
            .collect();
        let mut buf = Vec::new();
        write_signatures(&mut buf, &header(), &sigs).unwrap();
        assert_eq!(read_signatures(buf.as_slice(), p()).unwrap(), sigs);

        let stats = DetectorStats {
            mu_match: 11.431353934912448,
            sigma_match: 0.1 + 0.2,
            median_edges: 4512.0,
            percentile_edges: 4621.1,
            pi: 0.9,
            mu_weight: f64::MIN_POSITIVE,
            sigma_weight: 1e300,
            weight_view: WeightView::Distance,
        };
        let mut buf = Vec::new();
        write_stats(&mut buf, &header(), &stats).unwrap();
        assert_eq!(read_stats(buf.as_slice(), p()).unwrap(), stats);
    }

    #[test]
    fn truncated_signature_is_rejected() {
        let text = "class 0 3\n1 1 1\n2 1 1\n";
        assert!(read_signatures(text.as_bytes(), p()).is_err());
    }

    #[test]
    fn verdicts_round_trip_and_feed_evaluate() {
        let rows: Vec<VerdictRow> = (0..6)
            .map(|i| VerdictRow {
                input_id: format!("x{i}"),
                is_adversarial: i >= 3,
                method: DetectionMethod::EdgeCount,
                flagged: i % 2 == 0,
                score: i as f64 * 0.1,
            })
            .collect();
        let mut buf = Vec::new();
        write_verdicts(&mut buf, &header(), &rows).unwrap();
        let back = read_verdicts(buf.as_slice(), p()).unwrap();
        assert_eq!(back, rows);
        let (clean, adv) = &flags_by_method(&back)[&DetectionMethod::EdgeCount];
        let m = evaluate(clean, adv).unwrap();
        assert_eq!((m.false_positives, m.false_negatives), (2, 2));
    }

    #[test]
    fn bad_verdict_line_names_its_line() {
        let text =
            "# a=b\ninput_id,is_adversarial_truth,method,flagged,score\nx,1,edge_count,maybe,0\n";
        match read_verdicts(text.as_bytes(), p()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn adversary_set_round_trip() {
        let original = Tensor::new(vec![2, 2], vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        let perturbed = Tensor::new(vec![2, 2], vec![0.1, 0.2, 0.3 + 1e-17, 0.9]).unwrap();
        let set = AdversarySet {
            kappa: 20.0,
            examples: vec![AdversaryRecord {
                source_index: 5,
                source_label: 3,
                example: AdversarialExample {
                    distortion: perturbed.l2_distance(&original),
                    original: original.clone(),
                    perturbed,
                    predicted_class: 4,
                    target: 4,
                    kappa: 20.0,
                    success: true,
                },
            }],
            failures: vec![(5, 9)],
        };
        let mut buf = Vec::new();
        write_adversary_set(&mut buf, &header(), &set).unwrap();
        let back = read_adversary_set(buf.as_slice(), p(), |i| (i == 5).then(|| original.clone()))
            .unwrap();
        assert_eq!(back, set);
    }
}
