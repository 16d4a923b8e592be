//! Cascade model files: canonical, versioned JSON text.
//!
//! Keys are sorted, indentation is fixed at two spaces and every real is
//! written with 17 significant digits (`{:.16e}`), so a given cascade always
//! serializes to the same bytes and parses back bit-identically. Infinite
//! stump thresholds are written as the strings `"inf"` and `"-inf"`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{Map, Value};
use thiserror::Error;

use super::{Cascade, StageStats, TrainingMetadata};
use crate::boosting::{Polarity, StrongClassifier, WeakClassifier};
use crate::features::{BaseWindow, FeatureKind, HaarFeature, WeightedRect};
use crate::imaging::Rect;
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum CascadeFormatError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed field `{field}`: {detail}")]
    Malformed { field: String, detail: String },
    #[error("unsupported format version {found}, expected {expected}")]
    VersionMismatch { found: u64, expected: u64 },
    #[error("invariant violated at `{field}`: {detail}")]
    Invariant { field: String, detail: String },
}

enum Node {
    Int(i64),
    Real(f64),
    Str(String),
    Null,
    Arr(Vec<Node>),
    Obj(Vec<(&'static str, Node)>),
}

fn real(v: f64) -> Node {
    if v.is_finite() {
        Node::Real(v)
    } else if v.is_nan() {
        Node::Str("nan".into())
    } else if v > 0.0 {
        Node::Str("inf".into())
    } else {
        Node::Str("-inf".into())
    }
}

fn count(v: usize) -> Node {
    Node::Int(v as i64)
}

fn write_scalar(out: &mut String, node: &Node) {
    match node {
        Node::Int(i) => write!(out, "{i}").unwrap(),
        Node::Real(r) => write!(out, "{r:.16e}").unwrap(),
        Node::Str(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Node::Null => out.push_str("null"),
        Node::Arr(_) | Node::Obj(_) => unreachable!(),
    }
}

fn is_scalar(node: &Node) -> bool {
    !matches!(node, Node::Arr(_) | Node::Obj(_))
}

fn write_node(out: &mut String, node: &Node, indent: usize) {
    let pad = |out: &mut String, n: usize| out.extend(std::iter::repeat_n(' ', n));
    match node {
        Node::Arr(items) if items.is_empty() => out.push_str("[]"),
        Node::Arr(items) if items.iter().all(is_scalar) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_scalar(out, item);
            }
            out.push(']');
        }
        Node::Arr(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                pad(out, indent + 2);
                write_node(out, item, indent + 2);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push(']');
        }
        Node::Obj(fields) if fields.is_empty() => out.push_str("{}"),
        Node::Obj(fields) => {
            let mut sorted: Vec<&(&str, Node)> = fields.iter().collect();
            sorted.sort_by_key(|(k, _)| *k);
            out.push_str("{\n");
            for (i, (k, v)) in sorted.iter().enumerate() {
                pad(out, indent + 2);
                write!(out, "\"{k}\": ").unwrap();
                write_node(out, v, indent + 2);
                out.push_str(if i + 1 < sorted.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push('}');
        }
        scalar => write_scalar(out, scalar),
    }
}

fn stump_node<T: Scalar>(s: &WeakClassifier<T>) -> Node {
    let rects = s
        .feature
        .rects()
        .iter()
        .map(|r| {
            Node::Arr(vec![
                count(r.rect.x),
                count(r.rect.y),
                count(r.rect.w),
                count(r.rect.h),
                real(r.weight.as_f64()),
            ])
        })
        .collect();
    Node::Obj(vec![
        (
            "feature",
            Node::Obj(vec![
                ("kind", Node::Str(s.feature.kind().name().into())),
                ("rects", Node::Arr(rects)),
            ]),
        ),
        ("polarity", Node::Int(i64::from(s.polarity.as_i8()))),
        ("threshold", real(s.threshold.as_f64())),
        ("alpha", real(s.alpha.as_f64())),
    ])
}

fn metadata_node(m: &TrainingMetadata) -> Node {
    let stages = m
        .stages
        .iter()
        .map(|s| {
            Node::Obj(vec![
                ("stumps", count(s.stumps)),
                ("negatives", count(s.negatives)),
                ("pool_survivors", count(s.pool_survivors)),
                ("detection_rate", real(s.detection_rate)),
                ("false_positive_rate", real(s.false_positive_rate)),
            ])
        })
        .collect();
    Node::Obj(vec![
        ("seed", Node::Str(m.seed.to_string())),
        ("positives", count(m.positives)),
        ("validation_positives", count(m.validation_positives)),
        ("negative_pool_images", count(m.negative_pool_images)),
        ("negative_pool_windows", count(m.negative_pool_windows)),
        ("feature_pool", count(m.feature_pool)),
        ("per_stage_min_detection", real(m.per_stage_min_detection)),
        ("per_stage_max_fp", real(m.per_stage_max_fp)),
        ("target_overall_fp", real(m.target_overall_fp)),
        (
            "overall_false_positive_rate",
            real(m.overall_false_positive_rate),
        ),
        ("variance_floor", real(m.variance_floor)),
        ("stages", Node::Arr(stages)),
        (
            "warning",
            m.warning
                .as_ref()
                .map_or(Node::Null, |w| Node::Str(w.clone())),
        ),
    ])
}

/// Canonical text of a cascade, newline terminated.
pub fn to_text<T: Scalar>(c: &Cascade<T>) -> String {
    let stages = c
        .stages()
        .iter()
        .map(|st| {
            Node::Obj(vec![
                (
                    "stumps",
                    Node::Arr(st.stumps().iter().map(stump_node).collect()),
                ),
                ("stage_threshold", real(st.threshold().as_f64())),
            ])
        })
        .collect();
    let root = Node::Obj(vec![
        ("format_version", Node::Int(FORMAT_VERSION as i64)),
        ("base_window", count(c.base_window().side())),
        ("stages", Node::Arr(stages)),
        ("metadata", metadata_node(&c.metadata)),
    ]);
    let mut out = String::new();
    write_node(&mut out, &root, 0);
    out.push('\n');
    out
}

pub fn save_cascade<T: Scalar>(
    c: &Cascade<T>,
    path: impl AsRef<Path>,
) -> Result<(), CascadeFormatError> {
    fs::write(path, to_text(c))?;
    Ok(())
}

pub fn load_cascade<T: Scalar>(path: impl AsRef<Path>) -> Result<Cascade<T>, CascadeFormatError> {
    from_text(&fs::read_to_string(path)?)
}

struct Reader;

fn malformed(field: &str, detail: impl Into<String>) -> CascadeFormatError {
    CascadeFormatError::Malformed {
        field: field.to_string(),
        detail: detail.into(),
    }
}

fn invariant(field: &str, detail: impl Into<String>) -> CascadeFormatError {
    CascadeFormatError::Invariant {
        field: field.to_string(),
        detail: detail.into(),
    }
}

impl Reader {
    fn object<'v>(v: &'v Value, field: &str) -> Result<&'v Map<String, Value>, CascadeFormatError> {
        v.as_object()
            .ok_or_else(|| malformed(field, "expected an object"))
    }

    fn get<'v>(
        obj: &'v Map<String, Value>,
        key: &str,
        path: &str,
    ) -> Result<&'v Value, CascadeFormatError> {
        obj.get(key)
            .ok_or_else(|| malformed(&format!("{path}.{key}"), "missing"))
    }

    fn array<'v>(v: &'v Value, field: &str) -> Result<&'v Vec<Value>, CascadeFormatError> {
        v.as_array()
            .ok_or_else(|| malformed(field, "expected an array"))
    }

    fn uint(v: &Value, field: &str) -> Result<u64, CascadeFormatError> {
        v.as_u64()
            .ok_or_else(|| malformed(field, format!("expected a non-negative integer, found {v}")))
    }

    fn usize(v: &Value, field: &str) -> Result<usize, CascadeFormatError> {
        usize::try_from(Self::uint(v, field)?).map_err(|_| malformed(field, "integer too large"))
    }

    fn real(v: &Value, field: &str) -> Result<f64, CascadeFormatError> {
        match v {
            Value::Number(n) => n
                .as_f64()
                .ok_or_else(|| malformed(field, "not a real number")),
            Value::String(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(malformed(field, format!("expected a number, found {s:?}"))),
            },
            _ => Err(malformed(field, format!("expected a number, found {v}"))),
        }
    }

    fn string<'v>(v: &'v Value, field: &str) -> Result<&'v str, CascadeFormatError> {
        v.as_str()
            .ok_or_else(|| malformed(field, "expected a string"))
    }
}

fn read_stump<T: Scalar>(
    v: &Value,
    path: &str,
    base: BaseWindow,
) -> Result<WeakClassifier<T>, CascadeFormatError> {
    let obj = Reader::object(v, path)?;
    let fpath = format!("{path}.feature");
    let feat = Reader::object(Reader::get(obj, "feature", path)?, &fpath)?;
    let kind_path = format!("{fpath}.kind");
    let kind = FeatureKind::from_name(Reader::string(
        Reader::get(feat, "kind", &fpath)?,
        &kind_path,
    )?)
    .map_err(|e| malformed(&kind_path, e.to_string()))?;
    let rpath = format!("{fpath}.rects");
    let mut rects = Vec::new();
    for (i, r) in Reader::array(Reader::get(feat, "rects", &fpath)?, &rpath)?
        .iter()
        .enumerate()
    {
        let p = format!("{rpath}[{i}]");
        let a = Reader::array(r, &p)?;
        if a.len() != 5 {
            return Err(malformed(
                &p,
                format!("expected [x, y, w, h, weight], found {} items", a.len()),
            ));
        }
        let rect = Rect::new(
            Reader::usize(&a[0], &p)?,
            Reader::usize(&a[1], &p)?,
            Reader::usize(&a[2], &p)?,
            Reader::usize(&a[3], &p)?,
        );
        let weight = Reader::real(&a[4], &p)?;
        if !weight.is_finite() {
            return Err(invariant(&p, "weight must be finite"));
        }
        if rect.w == 0 || rect.h == 0 || !rect.fits_within(base.side(), base.side()) {
            return Err(invariant(
                &p,
                format!(
                    "rect {rect:?} is empty or outside the {}-pixel base window",
                    base.side()
                ),
            ));
        }
        rects.push(WeightedRect {
            rect,
            weight: T::lit(weight),
        });
    }
    let feature = HaarFeature::new(kind, rects).map_err(|e| invariant(&fpath, e.to_string()))?;
    let ppath = format!("{path}.polarity");
    let polarity = Reader::get(obj, "polarity", path)?
        .as_i64()
        .and_then(Polarity::from_i64)
        .ok_or_else(|| invariant(&ppath, "polarity must be 1 or -1"))?;
    let threshold = Reader::real(
        Reader::get(obj, "threshold", path)?,
        &format!("{path}.threshold"),
    )?;
    if threshold.is_nan() {
        return Err(invariant(&format!("{path}.threshold"), "threshold is NaN"));
    }
    let apath = format!("{path}.alpha");
    let alpha = Reader::real(Reader::get(obj, "alpha", path)?, &apath)?;
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(invariant(
            &apath,
            format!("alpha must be finite and >= 0, found {alpha}"),
        ));
    }
    Ok(WeakClassifier {
        feature,
        polarity,
        threshold: T::lit(threshold),
        alpha: T::lit(alpha),
    })
}

fn read_metadata(v: &Value) -> Result<TrainingMetadata, CascadeFormatError> {
    let path = "metadata";
    let obj = Reader::object(v, path)?;
    let field = |k: &str| Reader::get(obj, k, path);
    let p = |k: &str| format!("{path}.{k}");
    let seed_text = Reader::string(field("seed")?, &p("seed"))?;
    let seed = seed_text.parse().map_err(|_| {
        malformed(
            &p("seed"),
            format!("not an unsigned integer: {seed_text:?}"),
        )
    })?;
    let mut stages = Vec::new();
    for (i, s) in Reader::array(field("stages")?, &p("stages"))?
        .iter()
        .enumerate()
    {
        let sp = format!("{path}.stages[{i}]");
        let so = Reader::object(s, &sp)?;
        let g = |k: &str| Reader::get(so, k, &sp);
        stages.push(StageStats {
            stumps: Reader::usize(g("stumps")?, &sp)?,
            negatives: Reader::usize(g("negatives")?, &sp)?,
            pool_survivors: Reader::usize(g("pool_survivors")?, &sp)?,
            detection_rate: Reader::real(g("detection_rate")?, &sp)?,
            false_positive_rate: Reader::real(g("false_positive_rate")?, &sp)?,
        });
    }
    let warning = match field("warning")? {
        Value::Null => None,
        w => Some(Reader::string(w, &p("warning"))?.to_string()),
    };
    Ok(TrainingMetadata {
        seed,
        positives: Reader::usize(field("positives")?, &p("positives"))?,
        validation_positives: Reader::usize(
            field("validation_positives")?,
            &p("validation_positives"),
        )?,
        negative_pool_images: Reader::usize(
            field("negative_pool_images")?,
            &p("negative_pool_images"),
        )?,
        negative_pool_windows: Reader::usize(
            field("negative_pool_windows")?,
            &p("negative_pool_windows"),
        )?,
        feature_pool: Reader::usize(field("feature_pool")?, &p("feature_pool"))?,
        per_stage_min_detection: Reader::real(
            field("per_stage_min_detection")?,
            &p("per_stage_min_detection"),
        )?,
        per_stage_max_fp: Reader::real(field("per_stage_max_fp")?, &p("per_stage_max_fp"))?,
        target_overall_fp: Reader::real(field("target_overall_fp")?, &p("target_overall_fp"))?,
        overall_false_positive_rate: Reader::real(
            field("overall_false_positive_rate")?,
            &p("overall_false_positive_rate"),
        )?,
        variance_floor: Reader::real(field("variance_floor")?, &p("variance_floor"))?,
        stages,
        warning,
    })
}

/// Parses and validates a cascade file's text.
pub fn from_text<T: Scalar>(text: &str) -> Result<Cascade<T>, CascadeFormatError> {
    let doc: Value =
        serde_json::from_str(text).map_err(|e| malformed("document", e.to_string()))?;
    let root = Reader::object(&doc, "document")?;
    let version = Reader::uint(
        Reader::get(root, "format_version", "document")?,
        "format_version",
    )?;
    if version != FORMAT_VERSION {
        return Err(CascadeFormatError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let side = Reader::usize(Reader::get(root, "base_window", "document")?, "base_window")?;
    let base = BaseWindow::new(side).map_err(|e| invariant("base_window", e.to_string()))?;
    let stages_v = Reader::array(Reader::get(root, "stages", "document")?, "stages")?;
    if stages_v.is_empty() {
        return Err(invariant("stages", "cascade has no stages"));
    }
    let mut stages = Vec::with_capacity(stages_v.len());
    for (si, sv) in stages_v.iter().enumerate() {
        let sp = format!("stages[{si}]");
        let so = Reader::object(sv, &sp)?;
        let stumps_v = Reader::array(Reader::get(so, "stumps", &sp)?, &format!("{sp}.stumps"))?;
        let stumps = stumps_v
            .iter()
            .enumerate()
            .map(|(ti, tv)| read_stump(tv, &format!("{sp}.stumps[{ti}]"), base))
            .collect::<Result<Vec<_>, _>>()?;
        let tpath = format!("{sp}.stage_threshold");
        let threshold = Reader::real(Reader::get(so, "stage_threshold", &sp)?, &tpath)?;
        let stage = StrongClassifier::new(stumps, T::lit(threshold))
            .map_err(|e| invariant(&sp, e.to_string()))?;
        stages.push(stage);
    }
    let metadata = read_metadata(Reader::get(root, "metadata", "document")?)?;
    Cascade::new(base, stages, metadata).map_err(|e| invariant("stages", e.to_string()))
}
