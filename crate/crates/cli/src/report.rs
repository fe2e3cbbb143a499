//! JSON forms of results and the report envelope.

use std::collections::BTreeMap;

use microdiff::pseudopoly::CoeffRing;
use microdiff::{DiffOp, Error, MicroOp, Poly, Result, SymbolPoly};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use crate::expr::Value;

pub const SCHEMA: &str = "microdiff-report/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Partial,
    Error,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Partial => 2,
            Status::Error => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub command: String,
    pub config: Json,
    pub status: Status,
    pub result: Json,
    pub flags: Vec<String>,
    /// Human-readable lines; the text output is exactly these.
    pub summary: Vec<String>,
}

impl Report {
    pub fn new(command: &str, config: Json) -> Self {
        Report {
            schema: SCHEMA.to_string(),
            command: command.to_string(),
            config,
            status: Status::Ok,
            result: Json::Null,
            flags: Vec::new(),
            summary: Vec::new(),
        }
    }

    pub fn line(&mut self, s: impl Into<String>) {
        self.summary.push(s.into());
    }

    pub fn partial(&mut self, flag: impl Into<String>) {
        if self.status == Status::Ok {
            self.status = Status::Partial;
        }
        self.flags.push(flag.into());
    }

    pub fn render(&self, json: bool) -> String {
        if json {
            let mut s = serde_json::to_string_pretty(self).expect("report serializes");
            s.push('\n');
            s
        } else {
            let mut s = self.summary.join("\n");
            for f in &self.flags {
                s += &format!("\nflag: {f}");
            }
            s.push('\n');
            s
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct KTerm {
    k: Vec<u64>,
    coefficient: Poly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DiffOpRepr {
    p: u64,
    level: u32,
    nvars: usize,
    precision: Option<u32>,
    terms: Vec<KTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SymbolRepr {
    p: u64,
    level: u32,
    nvars: usize,
    ring: CoeffRing,
    terms: Vec<KTerm>,
}

pub fn diffop_to_json(d: &DiffOp) -> Json {
    serde_json::to_value(DiffOpRepr {
        p: d.prime(),
        level: d.level(),
        nvars: d.nvars(),
        precision: d.precision(),
        terms: d
            .terms()
            .map(|(k, a)| KTerm {
                k: k.clone(),
                coefficient: a.clone(),
            })
            .collect(),
    })
    .expect("serializable")
}

fn bad(e: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("malformed JSON: {e}"))
}

pub fn diffop_from_json(v: &Json) -> Result<DiffOp> {
    let r: DiffOpRepr = serde_json::from_value(v.clone()).map_err(bad)?;
    let mut out = DiffOp::zero(r.p, r.level, r.nvars);
    for t in r.terms {
        if t.k.len() != r.nvars || t.coefficient.nvars() != r.nvars {
            return Err(Error::DimensionMismatch {
                expected: r.nvars,
                found: t.k.len(),
            });
        }
        out.add_term(t.k, t.coefficient);
    }
    out.with_precision(r.precision)
}

pub fn symbol_to_json(s: &SymbolPoly) -> Json {
    serde_json::to_value(SymbolRepr {
        p: s.prime(),
        level: s.level(),
        nvars: s.nvars(),
        ring: s.ring(),
        terms: s
            .to_k_basis()
            .into_iter()
            .map(|(k, coefficient)| KTerm { k, coefficient })
            .collect(),
    })
    .expect("serializable")
}

pub fn symbol_from_json(v: &Json) -> Result<SymbolPoly> {
    let r: SymbolRepr = serde_json::from_value(v.clone()).map_err(bad)?;
    let terms: BTreeMap<Vec<u64>, Poly> = r.terms.into_iter().map(|t| (t.k, t.coefficient)).collect();
    Ok(SymbolPoly::from_k_basis(r.p, r.level, r.nvars, r.ring, &terms))
}

pub fn value_to_json(v: &Value) -> Json {
    let (kind, data) = match v {
        Value::Scalar(c) => ("scalar", json!(microdiff::padic::rational_to_string(c))),
        Value::Coefficient(a) => ("coefficient", serde_json::to_value(a).expect("serializable")),
        Value::Diff(d) => ("diffop", diffop_to_json(d)),
        Value::Symbol(s) => ("symbol", symbol_to_json(s)),
        Value::Micro(m) => ("microop", m.to_json()),
    };
    json!({ "kind": kind, "text": v.to_string(), "value": data })
}

pub fn value_from_json(v: &Json) -> Result<Value> {
    let kind = v.get("kind").and_then(Json::as_str).ok_or_else(|| bad("missing kind"))?;
    let data = v.get("value").ok_or_else(|| bad("missing value"))?;
    Ok(match kind {
        "scalar" => Value::Scalar(
            data.as_str()
                .and_then(microdiff::padic::parse_rational)
                .ok_or_else(|| bad("scalar"))?,
        ),
        "coefficient" => Value::Coefficient(serde_json::from_value(data.clone()).map_err(bad)?),
        "diffop" => Value::Diff(diffop_from_json(data)?),
        "symbol" => Value::Symbol(symbol_from_json(data)?),
        "microop" => Value::Micro(MicroOp::from_json(data)?),
        other => return Err(bad(format!("unknown kind {other:?}"))),
    })
}
