//! JSON documents exchanged by the command-line tool.
//!
//! * `pnn-v1`: a network, weights as row lists per layer.
//! * `poly-v1`: a polynomial vector, one coefficient list per output in the
//!   basis order of [`crate::polyspace::MonomialBasis`].
//! * `cert-v1`: a certificate with the tool version and tolerances.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::certify::NetworkCertificate;
use crate::error::{Error, Result};
use crate::network::{Architecture, Params};
use crate::polyspace::{basis_size, PolyVec};

pub const NET_FORMAT: &str = "pnn-v1";
pub const POLY_FORMAT: &str = "poly-v1";
pub const CERT_FORMAT: &str = "cert-v1";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetDocument {
    #[serde(default)]
    pub format: Option<String>,
    pub widths: Vec<usize>,
    pub degrees: Vec<u32>,
    #[serde(default)]
    pub has_bias: bool,
    /// `weights[l][i][j]` is entry `(i, j)` of `W_{l+1}`.
    pub weights: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub biases: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyDocument {
    #[serde(default)]
    pub format: Option<String>,
    pub n_vars: usize,
    pub degree: u32,
    pub homogeneous: bool,
    pub outputs: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tolerances {
    pub krank_tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertDocument {
    pub format: &'static str,
    pub tool_version: &'static str,
    /// `architecture` or `weights`.
    pub subject: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<Tolerances>,
    #[serde(flatten)]
    pub certificate: NetworkCertificate,
}

impl CertDocument {
    pub fn new(subject: &'static str, tolerances: Option<Tolerances>, certificate: NetworkCertificate) -> Self {
        CertDocument {
            format: CERT_FORMAT,
            tool_version: TOOL_VERSION,
            subject,
            tolerances,
            certificate,
        }
    }
}

/// A parsed input file of either kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Document {
    Net(Architecture, Params),
    Poly(PolyVec),
}

fn check_format(found: &Option<String>, expected: &str) -> Result<()> {
    match found.as_deref() {
        None => Ok(()),
        Some(f) if f == expected => Ok(()),
        Some(f) => Err(Error::Format(format!("expected format {expected}, found {f}"))),
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Format(format!("{what} has rows of different lengths")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl NetDocument {
    pub fn from_net(arch: &Architecture, params: &Params) -> Self {
        NetDocument {
            format: Some(NET_FORMAT.into()),
            widths: arch.widths.clone(),
            degrees: arch.degrees.clone(),
            has_bias: arch.has_bias,
            weights: params.weights.iter().map(rows_of).collect(),
            biases: params
                .biases
                .as_ref()
                .map(|bs| bs.iter().map(|b| b.iter().copied().collect()).collect()),
        }
    }

    pub fn into_net(self) -> Result<(Architecture, Params)> {
        check_format(&self.format, NET_FORMAT)?;
        let arch = Architecture::new(self.widths, self.degrees, self.has_bias)
            .map_err(|e| Error::Format(e.to_string()))?;
        let weights = self
            .weights
            .iter()
            .enumerate()
            .map(|(l, rows)| matrix_from_rows(rows, &format!("weights[{l}]")))
            .collect::<Result<Vec<_>>>()?;
        let biases = self
            .biases
            .map(|bs| bs.into_iter().map(DVector::from_vec).collect::<Vec<_>>());
        let params = Params { weights, biases };
        params.validate(&arch).map_err(|e| Error::Format(e.to_string()))?;
        Ok((arch, params))
    }
}

impl PolyDocument {
    pub fn from_poly(p: &PolyVec) -> Self {
        PolyDocument {
            format: Some(POLY_FORMAT.into()),
            n_vars: p.n_vars(),
            degree: p.degree(),
            homogeneous: p.homogeneous(),
            outputs: rows_of(p.coeffs()),
        }
    }

    pub fn into_poly(self) -> Result<PolyVec> {
        check_format(&self.format, POLY_FORMAT)?;
        let expected = basis_size(self.n_vars, self.degree, self.homogeneous)?;
        if let Some(bad) = self.outputs.iter().position(|o| o.len() != expected) {
            return Err(Error::Format(format!(
                "output {bad} has {} coefficients, the basis has {expected}",
                self.outputs[bad].len()
            )));
        }
        let coeffs = DMatrix::from_fn(self.outputs.len(), expected, |k, j| self.outputs[k][j]);
        PolyVec::new(self.n_vars, self.degree, self.homogeneous, coeffs).map_err(|e| Error::Format(e.to_string()))
    }
}

fn format_err(e: serde_json::Error) -> Error {
    Error::Format(e.to_string())
}

/// Parses a network or polynomial document, telling them apart by the
/// `format` key or, when it is absent, by the fields present.
pub fn parse_document(text: &str) -> Result<Document> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(format_err)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Format("top-level JSON value must be an object".into()))?;
    let is_net = match obj.get("format").and_then(|f| f.as_str()) {
        Some(NET_FORMAT) => true,
        Some(POLY_FORMAT) => false,
        Some(other) => return Err(Error::Format(format!("unknown format {other}"))),
        None => obj.contains_key("widths"),
    };
    if is_net {
        let doc: NetDocument = serde_json::from_value(value).map_err(format_err)?;
        let (arch, params) = doc.into_net()?;
        Ok(Document::Net(arch, params))
    } else {
        let doc: PolyDocument = serde_json::from_value(value).map_err(format_err)?;
        Ok(Document::Poly(doc.into_poly()?))
    }
}

pub fn parse_net(text: &str) -> Result<(Architecture, Params)> {
    match parse_document(text)? {
        Document::Net(a, p) => Ok((a, p)),
        Document::Poly(_) => Err(Error::Format(format!("expected a {NET_FORMAT} document"))),
    }
}

pub fn parse_poly(text: &str) -> Result<PolyVec> {
    match parse_document(text)? {
        Document::Poly(p) => Ok(p),
        Document::Net(..) => Err(Error::Format(format!("expected a {POLY_FORMAT} document"))),
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("documents always serialize");
    s.push('\n');
    s
}
