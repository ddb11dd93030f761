//! Uniqueness certificates for given weights and identifiability verdicts
//! for architectures, assembled block by block over consecutive layer pairs.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{dim_err, Error, Result};
use crate::krank::{generic_krank, kruskal_rank, RankReport};
use crate::network::{homogenize_network, Architecture, Params};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BlockStatus {
    UniqueCertified,
    NecessaryFail,
    Inconclusive,
}

impl BlockStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockStatus::UniqueCertified => "UNIQUE_CERTIFIED",
            BlockStatus::NecessaryFail => "NECESSARY_FAIL",
            BlockStatus::Inconclusive => "INCONCLUSIVE",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Overall {
    UniqueCertified,
    NotUnique,
    Inconclusive,
}

/// Inequality used to decide a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Rule {
    /// `r >= 2 ceil((2d - kB) / (2kA - 2))`, needs `kB >= 2`.
    KruskalEvenSplit,
    /// `r >= 2 ceil((2d - kA) / (2kA - 2)) + 1` with `r >= 3`, needs `kB >= 1`.
    SingleOutput,
    /// `r >= (2d - kB) / (kA - 1)`, needs `kB >= 1`.
    SidiropoulosRemark,
    /// `krank(W_l^T) >= 2`; failing it exhibits a duplicated or zero neuron.
    NecessaryKrank,
    /// Every hidden neuron must reach the next layer (`krank(W_{l+1}) >= 1`).
    NecessaryOutgoing,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockCertificate {
    /// 1-based hidden layer index `l` of the block `(W_l, W_{l+1})`.
    pub block_index: usize,
    pub triple: [usize; 3],
    pub degree: u32,
    pub status: BlockStatus,
    pub rule_applied: Rule,
    pub inequality_lhs: f64,
    pub inequality_rhs: f64,
    /// `(krank(W_{l+1}), krank(W_l^T))`.
    pub kranks_used: (usize, usize),
    pub low_confidence: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NetworkCertificate {
    pub overall: Overall,
    pub blocks: Vec<BlockCertificate>,
    /// Hypotheses of the localization argument that the input violates.
    pub hypotheses_unmet: Vec<String>,
    pub notes: Vec<String>,
}

impl NetworkCertificate {
    fn assemble(blocks: Vec<BlockCertificate>, hypotheses_unmet: Vec<String>, mut notes: Vec<String>) -> Self {
        let overall = aggregate(&blocks, &hypotheses_unmet);
        if blocks.iter().any(|b| b.low_confidence) {
            notes.push("LOW_CONFIDENCE: a Kruskal rank decision lies within 10x of the tolerance".into());
        }
        if overall == Overall::Inconclusive && hypotheses_unmet.is_empty() {
            notes.push(
                "sufficient degree bounds fail for some block; sharper generic uniqueness bounds from the tensor literature are not implemented"
                    .into(),
            );
        }
        NetworkCertificate {
            overall,
            blocks,
            hypotheses_unmet,
            notes,
        }
    }
}

/// Conjunction over blocks: any necessary failure disproves uniqueness, and
/// uniqueness needs every block certified with all hypotheses satisfied.
pub fn aggregate(blocks: &[BlockCertificate], hypotheses_unmet: &[String]) -> Overall {
    if blocks.iter().any(|b| b.status == BlockStatus::NecessaryFail) {
        Overall::NotUnique
    } else if hypotheses_unmet.is_empty()
        && !blocks.is_empty()
        && blocks.iter().all(|b| b.status == BlockStatus::UniqueCertified)
    {
        Overall::UniqueCertified
    } else {
        Overall::Inconclusive
    }
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Candidate rules for a block with width `d`, `kA = krank(W_l^T)`,
/// `kB = krank(W_{l+1})`, as `(rule, rhs)`; requires `kA >= 2`, `kB >= 1`.
fn sufficient_rules(d: usize, ka: usize, kb: usize) -> Vec<(Rule, f64)> {
    let mut rules = Vec::with_capacity(3);
    if kb >= 2 {
        rules.push((Rule::KruskalEvenSplit, (2 * ceil_div(2 * d - kb, 2 * ka - 2)) as f64));
    }
    let single = 2 * ceil_div(2 * d - ka, 2 * ka - 2) + 1;
    rules.push((Rule::SingleOutput, single.max(3) as f64));
    rules.push((Rule::SidiropoulosRemark, (2 * d - kb) as f64 / (ka - 1) as f64));
    rules
}

fn decide_block(block_index: usize, triple: [usize; 3], r: u32, ka: usize, kb: usize, low_confidence: bool) -> BlockCertificate {
    let cert = decide_block_exact(block_index, triple, r, ka, kb, low_confidence);
    if low_confidence && cert.status != BlockStatus::Inconclusive {
        // a Kruskal rank this close to the tolerance cannot support either verdict
        return BlockCertificate {
            status: BlockStatus::Inconclusive,
            note: Some(format!(
                "LOW_CONFIDENCE: verdict {} withheld, a Kruskal rank decision is borderline",
                cert.status.as_str()
            )),
            ..cert
        };
    }
    cert
}

fn decide_block_exact(block_index: usize, triple: [usize; 3], r: u32, ka: usize, kb: usize, low_confidence: bool) -> BlockCertificate {
    let d = triple[1];
    let base = BlockCertificate {
        block_index,
        triple,
        degree: r,
        status: BlockStatus::Inconclusive,
        rule_applied: Rule::NecessaryKrank,
        inequality_lhs: ka as f64,
        inequality_rhs: 2.0,
        kranks_used: (kb, ka),
        low_confidence,
        note: None,
    };
    if ka < 2 {
        let status = if d >= 2 || ka == 0 {
            BlockStatus::NecessaryFail
        } else {
            BlockStatus::Inconclusive
        };
        let note = match (status, ka) {
            (BlockStatus::NecessaryFail, 0) => "a hidden neuron has a zero incoming row",
            (BlockStatus::NecessaryFail, _) => "two hidden neurons have proportional incoming rows",
            _ => "a single hidden neuron is outside the scope of the sufficient bounds",
        };
        return BlockCertificate {
            status,
            note: Some(note.into()),
            ..base
        };
    }
    if kb == 0 {
        return BlockCertificate {
            status: BlockStatus::NecessaryFail,
            rule_applied: Rule::NecessaryOutgoing,
            inequality_lhs: 0.0,
            inequality_rhs: 1.0,
            note: Some("a hidden neuron has a zero outgoing column and can be pruned".into()),
            ..base
        };
    }
    let lhs = r as f64;
    let rules = sufficient_rules(d, ka, kb);
    if let Some(&(rule, rhs)) = rules.iter().find(|(_, rhs)| lhs >= *rhs) {
        return BlockCertificate {
            status: BlockStatus::UniqueCertified,
            rule_applied: rule,
            inequality_lhs: lhs,
            inequality_rhs: rhs,
            ..base
        };
    }
    let &(rule, rhs) = rules
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one rule always applies");
    BlockCertificate {
        status: BlockStatus::Inconclusive,
        rule_applied: rule,
        inequality_lhs: lhs,
        inequality_rhs: rhs,
        note: Some("no sufficient bound holds at this degree".into()),
        ..base
    }
}

/// Certificate for the block `(W_l, W_{l+1})` with activation degree `r`.
pub fn cert_block_weights(w_l: &DMatrix<f64>, w_next: &DMatrix<f64>, r: u32, tol: f64) -> Result<BlockCertificate> {
    cert_block_weights_at(1, w_l, w_next, r, tol)
}

fn cert_block_weights_at(
    block_index: usize,
    w_l: &DMatrix<f64>,
    w_next: &DMatrix<f64>,
    r: u32,
    tol: f64,
) -> Result<BlockCertificate> {
    if w_next.ncols() != w_l.nrows() {
        return dim_err(format!(
            "W_(l+1) has {} columns but W_l has {} rows",
            w_next.ncols(),
            w_l.nrows()
        ));
    }
    let ka: RankReport = kruskal_rank(&w_l.transpose(), tol)?;
    let kb: RankReport = kruskal_rank(w_next, tol)?;
    let triple = [w_l.ncols(), w_l.nrows(), w_next.nrows()];
    Ok(decide_block(
        block_index,
        triple,
        r,
        ka.krank,
        kb.krank,
        ka.low_confidence || kb.low_confidence,
    ))
}

/// Hypotheses of the layer-by-layer reduction, listed when violated.
fn unmet_hypotheses(widths: &[usize], degrees: &[u32]) -> Vec<String> {
    let mut unmet = Vec::new();
    let l = widths.len() - 1;
    if l < 2 {
        unmet.push("at least one hidden layer is required".into());
        return unmet;
    }
    for (i, &d) in widths[..l].iter().enumerate() {
        if d < 2 {
            unmet.push(format!("width d_{i} = {d} must be at least 2"));
        }
    }
    for (i, &r) in degrees.iter().enumerate() {
        if r < 2 {
            unmet.push(format!("degree r_{} = {r} must be at least 2", i + 1));
        }
    }
    if widths[l] == 1 && degrees[l - 2] < 3 {
        unmet.push(format!(
            "single output requires r_{} >= 3 in the last block, got {}",
            l - 1,
            degrees[l - 2]
        ));
    }
    unmet
}

/// Certificate for an hPNN with given weights.
pub fn cert_network_weights(arch: &Architecture, params: &Params, tol: f64) -> Result<NetworkCertificate> {
    params.validate(arch)?;
    if arch.has_bias {
        return Err(Error::InvalidArgument(
            "weight certificates need a network without bias; homogenize it first".into(),
        ));
    }
    let unmet = unmet_hypotheses(&arch.widths, &arch.degrees);
    let blocks = (1..arch.n_layers())
        .map(|l| cert_block_weights_at(l, &params.weights[l - 1], &params.weights[l], arch.degrees[l - 1], tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(NetworkCertificate::assemble(blocks, unmet, Vec::new()))
}

/// Certificate for a biased network through its homogenized lift. A
/// certified lift makes the biased network unique; a failed necessary
/// condition of the lift exhibits a removable or duplicated neuron of the
/// biased network.
pub fn cert_biased_network_weights(arch: &Architecture, params: &Params, tol: f64) -> Result<NetworkCertificate> {
    let (harch, hparams) = homogenize_network(arch, params)?;
    let mut cert = cert_network_weights(&harch, &hparams, tol)?;
    cert.notes.insert(
        0,
        format!("certified through the homogenized network with widths {:?}", harch.widths),
    );
    Ok(cert)
}

/// Generic verdict for the triple `(d_prev, d, d_next)` at degree `r`.
pub fn cert_arch_block(d_prev: usize, d: usize, d_next: usize, r: u32) -> Result<BlockCertificate> {
    if d_prev < 2 || d < 2 || d_next < 1 || r < 2 {
        return Err(Error::InvalidArgument(format!(
            "block ({d_prev}, {d}, {d_next}) at degree {r} needs d_prev, d >= 2, d_next >= 1, r >= 2"
        )));
    }
    Ok(arch_block_at(1, d_prev, d, d_next, r))
}

fn arch_block_at(block_index: usize, d_prev: usize, d: usize, d_next: usize, r: u32) -> BlockCertificate {
    decide_block(
        block_index,
        [d_prev, d, d_next],
        r,
        generic_krank(d_prev, d),
        generic_krank(d_next, d),
        false,
    )
}

fn outside_scope(block_index: usize, triple: [usize; 3], r: u32, why: &str) -> BlockCertificate {
    BlockCertificate {
        block_index,
        triple,
        degree: r,
        status: BlockStatus::Inconclusive,
        rule_applied: Rule::NecessaryKrank,
        inequality_lhs: f64::NAN,
        inequality_rhs: f64::NAN,
        kranks_used: (generic_krank(triple[2], triple[1]), generic_krank(triple[0], triple[1])),
        low_confidence: false,
        note: Some(why.into()),
    }
}

fn width_notes(widths: &[usize], degrees: &[u32]) -> Vec<String> {
    let mut notes = Vec::new();
    let l = widths.len() - 1;
    if l < 2 || degrees.iter().any(|&r| r < 2) {
        return notes;
    }
    let all_ge2 = widths.iter().all(|&d| d >= 2);
    let pyramidal = widths[l] >= 2 && widths[l - 1] >= 2 && widths[..l].windows(2).all(|w| w[0] >= w[1]);
    if pyramidal {
        notes.push("pyramidal widths (non-increasing up to the last hidden layer): identifiable for all degrees >= 2".into());
    }
    if all_ge2 && !pyramidal {
        let b = (0..=l)
            .min_by_key(|&i| (widths[i], i))
            .expect("non-empty");
        let down = widths[..=b].windows(2).all(|w| w[0] >= w[1]);
        let up = widths[b..].windows(2).all(|w| w[0] <= w[1]);
        let slow = (b + 1..l).all(|i| widths[i] + 2 <= 2 * widths[i - 1]);
        if down && up && slow {
            notes.push(format!(
                "bottleneck at layer {b} with widths growing by at most 2d - 2 afterwards: identifiable for all degrees >= 2"
            ));
        } else {
            let general = (1..l).all(|i| {
                let (p, d, n) = (widths[i - 1], widths[i], widths[i + 1]);
                d <= p || (n >= d && d > p && d + 2 <= 2 * p) || (n < d && d > p && 2 * d + 2 <= 2 * p + n)
            });
            if general {
                notes.push("every width increase is slow enough: identifiable for all degrees >= 2".into());
            }
        }
    }
    if all_ge2 && (1..l).all(|i| degrees[i - 1] as usize + 2 >= 2 * widths[i]) {
        notes.push("every degree reaches the activation threshold 2 d_l - 2".into());
    }
    notes
}

/// Generic identifiability verdict for an architecture. Biased
/// architectures are routed to [`cert_architecture_bias`].
pub fn cert_architecture(arch: &Architecture) -> Result<NetworkCertificate> {
    arch.validate()?;
    if arch.has_bias {
        return cert_architecture_bias(arch);
    }
    let unmet = unmet_hypotheses(&arch.widths, &arch.degrees);
    let w = &arch.widths;
    let blocks = (1..arch.n_layers())
        .map(|l| {
            let (p, d, n, r) = (w[l - 1], w[l], w[l + 1], arch.degrees[l - 1]);
            if p < 2 || d < 2 || r < 2 {
                outside_scope(l, [p, d, n], r, "block outside the scope of the sufficient bounds")
            } else {
                arch_block_at(l, p, d, n, r)
            }
        })
        .collect();
    let notes = width_notes(&arch.widths, &arch.degrees);
    Ok(NetworkCertificate::assemble(blocks, unmet, notes))
}

/// Generic verdict for a biased architecture from the homogenized triples
/// `(d_{l-1} + 1, d_l + 1, d_{l+1})`.
pub fn cert_architecture_bias(arch: &Architecture) -> Result<NetworkCertificate> {
    arch.validate()?;
    if arch.n_layers() < 2 {
        return Err(Error::InvalidArgument("at least one hidden layer is required".into()));
    }
    if let Some(&d) = arch.hidden_widths().iter().find(|&&d| d < 2) {
        return Err(Error::InvalidArgument(format!("hidden width {d} is below 2")));
    }
    let w = &arch.widths;
    let mut hwidths: Vec<usize> = w.iter().map(|d| d + 1).collect();
    *hwidths.last_mut().expect("non-empty") = arch.output_dim();
    let unmet = unmet_hypotheses(&hwidths, &arch.degrees);
    let mut notes = vec![format!("certified through homogenized widths {hwidths:?}")];
    let blocks = (1..arch.n_layers())
        .map(|l| {
            let (p, d, n, r) = (hwidths[l - 1], hwidths[l], hwidths[l + 1], arch.degrees[l - 1]);
            if r < 2 {
                return outside_scope(l, [p, d, n], r, "degree below 2");
            }
            let cert = arch_block_at(l, p, d, n, r);
            if n >= 2 {
                // bound as printed for biased blocks, without the leading factor 2
                let printed = ceil_div(2 * d - d.min(n), 2 * d.min(p) - 2);
                let sound = r as usize >= 2 * ceil_div(2 * d - d.min(n), 2 * d.min(p) - 2);
                if (r as usize >= printed) != sound {
                    notes.push(format!(
                        "block {l}: the bound without the factor 2 ({printed}) would pass, but the even-split bound on the homogenized widths does not"
                    ));
                }
            }
            cert
        })
        .collect();
    Ok(NetworkCertificate::assemble(blocks, unmet, notes))
}

/// Degrees making a width profile identifiable: `max(2, 2 d_l - 2)` for each
/// hidden layer. When the output width is 1 the last degree is raised to the
/// smallest value the single-output bounds certify (at least 3).
pub fn activation_threshold(widths: &[usize]) -> Result<Vec<u32>> {
    if widths.len() < 3 {
        return Err(Error::InvalidArgument("at least one hidden layer is required".into()));
    }
    let l = widths.len() - 1;
    if widths[..l].iter().any(|&d| d < 2) || widths[l] == 0 {
        return Err(Error::InvalidArgument(
            "input and hidden widths must be at least 2 and the output width at least 1".into(),
        ));
    }
    let mut degrees: Vec<u32> = widths[1..l]
        .iter()
        .map(|&d| (2 * d).saturating_sub(2).max(2) as u32)
        .collect();
    if widths[l] == 1 {
        let (p, d) = (widths[l - 2], widths[l - 1]);
        let mut r = degrees[l - 2].max(3);
        while arch_block_at(l - 1, p, d, 1, r).status != BlockStatus::UniqueCertified {
            r += 1;
        }
        degrees[l - 2] = r;
    }
    Ok(degrees)
}
